//! Evaluation protocol: leave-one-case-out splits, error statistics, report files,
//! Latin hypercube sweeps and a least-squares baseline.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{
    apply_normalization, fit_normalization, Dataset, Direction, N_FEATURES, N_TARGETS, TARGET_NAMES,
};
use crate::nn::{Activation, Network};
use crate::optim::{self, Optimizer, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    Interpolation,
    Extrapolation,
}

/// Train on three heat-flux cases, test on the fourth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseSplit {
    pub train_labels: Vec<f64>,
    pub test_label: f64,
    pub kind: SplitKind,
}

/// One split per label, in the order given; the smallest and largest labels are
/// extrapolation cases.
pub fn make_splits(labels: &[f64]) -> Result<Vec<CaseSplit>> {
    if labels.len() != 4 {
        return Err(Error::InvalidArgument(format!(
            "need exactly 4 case labels, got {}",
            labels.len()
        )));
    }
    for (i, a) in labels.iter().enumerate() {
        if !a.is_finite() || labels[..i].contains(a) {
            return Err(Error::InvalidArgument(format!("case labels must be distinct and finite: {labels:?}")));
        }
    }
    let lo = labels.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = labels.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(labels
        .iter()
        .map(|&test| CaseSplit {
            train_labels: labels.iter().copied().filter(|l| *l != test).collect(),
            test_label: test,
            kind: if test == lo || test == hi {
                SplitKind::Extrapolation
            } else {
                SplitKind::Interpolation
            },
        })
        .collect())
}

/// Normalized train and test sets of one split.
#[derive(Debug, Clone)]
pub struct PreparedSplit {
    pub split: CaseSplit,
    pub train: Dataset,
    pub test: Dataset,
}

/// Assembles a split from per-case raw datasets, normalizing both sides with
/// statistics of the training cases only.
pub fn prepare_split(cases: &[Dataset], split: &CaseSplit) -> Result<PreparedSplit> {
    let find = |label: f64| {
        cases
            .iter()
            .find(|d| d.case_labels() == [label])
            .ok_or_else(|| Error::InvalidArgument(format!("no single-case dataset labelled {label}")))
    };
    let parts = split.train_labels.iter().map(|l| find(*l)).collect::<Result<Vec<_>>>()?;
    let train = Dataset::concat(&parts)?;
    let stats = fit_normalization(&train)?;
    Ok(PreparedSplit {
        split: split.clone(),
        train: apply_normalization(&train, &stats, Direction::Forward)?,
        test: apply_normalization(find(split.test_label)?, &stats, Direction::Forward)?,
    })
}

/// Root mean square error of each target column.
pub fn rmse_per_qoi(pred: &[[f64; N_TARGETS]], truth: &[[f64; N_TARGETS]]) -> Result<[f64; N_TARGETS]> {
    if pred.is_empty() || pred.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} truths",
            pred.len(),
            truth.len()
        )));
    }
    let mut sums = [0.0; N_TARGETS];
    for (p, t) in pred.iter().zip(truth) {
        for k in 0..N_TARGETS {
            sums[k] += (p[k] - t[k]) * (p[k] - t[k]);
        }
    }
    Ok(sums.map(|s| (s / pred.len() as f64).sqrt()))
}

/// Spread of residuals `pred − truth`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaStats {
    /// Population standard deviation of the residuals.
    pub sigma: f64,
    pub mean: f64,
    /// Fraction with `|r − mean| ≤ 2σ`.
    pub coverage_mean_centered: f64,
    /// Fraction with `|r| ≤ 2σ`.
    pub coverage_zero_centered: f64,
}

pub fn two_sigma_stats(pred: &[f64], truth: &[f64]) -> Result<SigmaStats> {
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!("{} predictions for {} truths", pred.len(), truth.len())));
    }
    if pred.len() < 2 {
        return Err(Error::InvalidArgument("need at least 2 residuals".into()));
    }
    let r: Vec<f64> = pred.iter().zip(truth).map(|(p, t)| p - t).collect();
    let n = r.len() as f64;
    let mean = r.iter().sum::<f64>() / n;
    let sigma = (r.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
    if sigma == 0.0 {
        let zero = if r.iter().all(|v| *v == 0.0) { 1.0 } else { 0.0 };
        return Ok(SigmaStats {
            sigma,
            mean,
            coverage_mean_centered: 1.0,
            coverage_zero_centered: zero,
        });
    }
    let frac = |center: f64| r.iter().filter(|v| (*v - center).abs() <= 2.0 * sigma).count() as f64 / n;
    Ok(SigmaStats {
        sigma,
        mean,
        coverage_mean_centered: frac(mean),
        coverage_zero_centered: frac(0.0),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub underflow: usize,
    pub overflow: usize,
}

impl Histogram {
    pub fn total(&self) -> usize {
        self.counts.iter().sum::<usize>() + self.underflow + self.overflow
    }
}

pub const DEFAULT_BINS: usize = 40;

/// Uniform bins over `[lo, hi]`, each half-open except the last.
pub fn histogram(values: &[f64], n_bins: usize, range: (f64, f64)) -> Result<Histogram> {
    let (lo, hi) = range;
    if n_bins == 0 || !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "invalid histogram: {n_bins} bins over [{lo}, {hi}]"
        )));
    }
    let width = (hi - lo) / n_bins as f64;
    let edges = (0..=n_bins)
        .map(|i| if i == n_bins { hi } else { lo + width * i as f64 })
        .collect();
    let mut h = Histogram {
        edges,
        counts: vec![0; n_bins],
        underflow: 0,
        overflow: 0,
    };
    for &v in values {
        if v < lo {
            h.underflow += 1;
        } else if v > hi || v.is_nan() {
            h.overflow += 1;
        } else {
            let bin = (((v - lo) / width) as usize).min(n_bins - 1);
            h.counts[bin] += 1;
        }
    }
    Ok(h)
}

fn observed_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if lo < hi {
        (lo, hi)
    } else {
        // degenerate spread still gets a valid bin
        let pad = lo.abs().max(1.0) * 1e-9;
        (lo - pad, hi + pad)
    }
}

/// Prediction, truth and signed error on the surface grid, one matrix row per `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceMaps {
    pub pred: Vec<Vec<f64>>,
    pub truth: Vec<Vec<f64>>,
    pub err: Vec<Vec<f64>>,
}

/// Reshapes one target column into `nx × ny` matrices.
///
/// `grid` is `(nx, ny, nt)` of the extraction; only single-frame grids map to a
/// surface. Without a grid the sample count must be a perfect square.
pub fn surface_map(pred: &[f64], truth: &[f64], grid: Option<[usize; 3]>) -> Result<SurfaceMaps> {
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!("{} predictions for {} truths", pred.len(), truth.len())));
    }
    let n = pred.len();
    let (nx, ny) = match grid {
        Some([nx, ny, 1]) if nx * ny == n => (nx, ny),
        Some(g) => {
            return Err(Error::Shape(format!("{n} samples do not form a single-frame grid {g:?}")))
        }
        None => {
            let side = (n as f64).sqrt().round() as usize;
            if side * side != n || n == 0 {
                return Err(Error::Shape(format!("{n} samples do not form a square grid")));
            }
            (side, side)
        }
    };
    let reshape = |v: &[f64]| v.chunks(ny).map(<[f64]>::to_vec).collect::<Vec<_>>();
    let err: Vec<f64> = pred.iter().zip(truth).map(|(p, t)| p - t).collect();
    debug_assert_eq!(reshape(&err).len(), nx);
    Ok(SurfaceMaps {
        pred: reshape(pred),
        truth: reshape(truth),
        err: reshape(&err),
    })
}

fn write_matrix(path: &Path, m: &[Vec<f64>]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for row in m {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        writeln!(w, "{}", line.join(",")).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Column order of the per-case RMSE table.
pub const RMSE_TABLE_COLUMNS: [&str; 4] = ["alpha_wall", "T_sup [K]", "q_Evap [W/m^2]", "q_Single [W/m^2]"];

/// Reorders target-ordered values into the table's column order.
pub fn rmse_row(v: &[f64; N_TARGETS]) -> [f64; 4] {
    [v[2], v[3], v[0], v[1]]
}

/// One line per case: `case,alpha_wall,T_sup [K],q_Evap [W/m^2],q_Single [W/m^2]`.
pub fn write_rmse_table(path: impl AsRef<Path>, rows: &[(String, [f64; N_TARGETS])]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(std::iter::once("case").chain(RMSE_TABLE_COLUMNS))?;
    for (name, rmse) in rows {
        let cells = rmse_row(rmse).map(|v| format!("{v:.6e}"));
        w.write_record(std::iter::once(name.as_str()).chain(cells.iter().map(String::as_str)))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Ordinary least squares with an intercept, one column of coefficients per target.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearBaseline {
    /// `(N_FEATURES + 1) × N_TARGETS`, intercept in the last row.
    coef: DMatrix<f64>,
}

const RIDGE: f64 = 1e-8;

impl LinearBaseline {
    /// Fits on a normalized dataset via the regularized normal equations.
    pub fn fit(train: &Dataset) -> Result<Self> {
        if !train.is_normalized() {
            return Err(Error::InvalidArgument("baseline expects normalized data".into()));
        }
        let n = train.len();
        let p = N_FEATURES + 1;
        let x = DMatrix::from_fn(n, p, |r, c| {
            if c == N_FEATURES {
                1.0
            } else {
                train.samples()[r].features[c]
            }
        });
        let y = DMatrix::from_fn(n, N_TARGETS, |r, c| train.samples()[r].targets[c]);
        let mut xtx = x.transpose() * &x;
        for d in 0..p {
            xtx[(d, d)] += RIDGE;
        }
        let chol = xtx
            .cholesky()
            .ok_or_else(|| Error::Singular("normal equations are not positive definite".into()))?;
        let coef = chol.solve(&(x.transpose() * y));
        if coef.iter().any(|v| !v.is_finite()) {
            return Err(Error::Singular("least-squares coefficients are not finite".into()));
        }
        Ok(Self { coef })
    }

    /// Predictions in physical units for a dataset normalized with the same statistics.
    pub fn predict(&self, data: &Dataset) -> Result<Vec<[f64; N_TARGETS]>> {
        let stats = data
            .normalization()
            .ok_or_else(|| Error::InvalidArgument("baseline expects normalized data".into()))?;
        Ok(data
            .samples()
            .iter()
            .map(|s| {
                let row = DVector::from_iterator(N_FEATURES + 1, s.features.iter().copied().chain([1.0]));
                let y = self.coef.tr_mul(&row);
                let mut out = [0.0; N_TARGETS];
                out.copy_from_slice(y.as_slice());
                stats.targets.inverse(&mut out);
                out
            })
            .collect())
    }
}

/// Test RMSE of the least-squares baseline in physical units.
pub fn baseline_linear(train: &Dataset, test: &Dataset) -> Result<[f64; N_TARGETS]> {
    if train.normalization() != test.normalization() {
        return Err(Error::InvalidArgument(
            "test data must be normalized with the training statistics".into(),
        ));
    }
    let model = LinearBaseline::fit(train)?;
    rmse_per_qoi(&model.predict(test)?, &optim::truth_physical(test)?)
}

/// Per-target evaluation summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QoiReport {
    pub name: String,
    pub rmse: f64,
    pub sigma: f64,
    pub residual_mean: f64,
    pub coverage_mean_centered: f64,
    pub coverage_zero_centered: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline_rmse: Option<f64>,
    #[serde(skip)]
    pub histogram_truth: Option<Histogram>,
    #[serde(skip)]
    pub histogram_pred: Option<Histogram>,
    #[serde(skip)]
    pub maps: Option<SurfaceMaps>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmseTable {
    pub columns: Vec<String>,
    pub rmse: [f64; 4],
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline_rmse: Option<[f64; 4]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_samples: usize,
    pub case_labels: Vec<f64>,
    /// Target order.
    pub qoi: Vec<QoiReport>,
    pub rmse_table: RmseTable,
}

impl EvalReport {
    pub fn rmse(&self) -> [f64; N_TARGETS] {
        std::array::from_fn(|k| self.qoi[k].rmse)
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json_path = dir.join("report.json");
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(&json_path, json + "\n").map_err(|e| Error::io(&json_path, e))?;

        let hist_path = dir.join("histograms.csv");
        let mut w = csv::Writer::from_path(&hist_path)?;
        w.write_record(["qoi", "bin", "lower", "upper", "count_truth", "count_pred"])?;
        for q in &self.qoi {
            if let (Some(ht), Some(hp)) = (&q.histogram_truth, &q.histogram_pred) {
                for b in 0..ht.counts.len() {
                    w.write_record([
                        q.name.clone(),
                        b.to_string(),
                        format!("{:.16e}", ht.edges[b]),
                        format!("{:.16e}", ht.edges[b + 1]),
                        ht.counts[b].to_string(),
                        hp.counts[b].to_string(),
                    ])?;
                }
            }
        }
        w.flush().map_err(|e| Error::io(&hist_path, e))?;

        for q in &self.qoi {
            if let Some(m) = &q.maps {
                for (suffix, mat) in [("pred", &m.pred), ("truth", &m.truth), ("err", &m.err)] {
                    write_matrix(&dir.join(format!("maps_{}_{suffix}.csv", q.name)), mat)?;
                }
            }
        }
        Ok(())
    }
}

/// Builds the report from physical-unit predictions on a grid-ordered test set.
///
/// Maps are produced only when the rows form a single-frame surface grid.
pub fn build_report(
    pred: &[[f64; N_TARGETS]],
    truth: &[[f64; N_TARGETS]],
    grid: Option<[usize; 3]>,
    case_labels: Vec<f64>,
    baseline: Option<[f64; N_TARGETS]>,
) -> Result<EvalReport> {
    let rmse = rmse_per_qoi(pred, truth)?;
    let mut qoi = Vec::with_capacity(N_TARGETS);
    for k in 0..N_TARGETS {
        let p: Vec<f64> = pred.iter().map(|r| r[k]).collect();
        let t: Vec<f64> = truth.iter().map(|r| r[k]).collect();
        let stats = two_sigma_stats(&p, &t)?;
        let range = observed_range(p.iter().chain(&t).copied());
        let maps = match grid {
            Some([_, _, 1]) | None => surface_map(&p, &t, grid).ok(),
            Some(_) => None,
        };
        qoi.push(QoiReport {
            name: TARGET_NAMES[k].to_string(),
            rmse: rmse[k],
            sigma: stats.sigma,
            residual_mean: stats.mean,
            coverage_mean_centered: stats.coverage_mean_centered,
            coverage_zero_centered: stats.coverage_zero_centered,
            baseline_rmse: baseline.map(|b| b[k]),
            histogram_truth: Some(histogram(&t, DEFAULT_BINS, range)?),
            histogram_pred: Some(histogram(&p, DEFAULT_BINS, range)?),
            maps,
        });
    }
    Ok(EvalReport {
        n_samples: pred.len(),
        case_labels,
        qoi,
        rmse_table: RmseTable {
            columns: RMSE_TABLE_COLUMNS.iter().map(|s| s.to_string()).collect(),
            rmse: rmse_row(&rmse),
            baseline_rmse: baseline.as_ref().map(rmse_row),
        },
    })
}

/// Evaluates a network on a normalized test set.
pub fn evaluate(net: &Network, test: &Dataset, baseline: Option<[f64; N_TARGETS]>) -> Result<EvalReport> {
    let pred = optim::predict_physical(net, test)?;
    let truth = optim::truth_physical(test)?;
    build_report(&pred, &truth, test.grid(), test.case_labels(), baseline)
}

/// How one hyperparameter is sampled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scale", rename_all = "lowercase")]
pub enum LhsRange {
    Linear { lo: f64, hi: f64 },
    Log { lo: f64, hi: f64 },
    /// Integers in `lo..=hi`, stratified in log space.
    Integer { lo: u64, hi: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LhsDimension {
    pub name: String,
    #[serde(flatten)]
    pub range: LhsRange,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LhsPlan {
    pub dimensions: Vec<LhsDimension>,
    pub n_samples: usize,
    pub seed: u64,
}

impl LhsPlan {
    /// Learning rate, hidden units per layer and batch size over the usual ranges.
    pub fn standard(n_samples: usize, seed: u64) -> Self {
        Self {
            dimensions: vec![
                LhsDimension {
                    name: "epsilon".into(),
                    range: LhsRange::Log { lo: 1e-4, hi: 1.0 },
                },
                LhsDimension {
                    name: "hidden_units".into(),
                    range: LhsRange::Integer { lo: 8, hi: 256 },
                },
                LhsDimension {
                    name: "batch_size".into(),
                    range: LhsRange::Integer { lo: 32, hi: 2048 },
                },
            ],
            n_samples,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_samples < 2 {
            return Err(Error::InvalidArgument("LHS needs at least 2 samples".into()));
        }
        if self.dimensions.is_empty() {
            return Err(Error::InvalidArgument("LHS plan has no dimensions".into()));
        }
        for d in &self.dimensions {
            let ok = match d.range {
                LhsRange::Linear { lo, hi } => lo.is_finite() && hi.is_finite() && lo < hi,
                LhsRange::Log { lo, hi } => lo > 0.0 && hi.is_finite() && lo < hi,
                LhsRange::Integer { lo, hi } => {
                    if lo > 0 && lo <= hi && (hi - lo + 1) < self.n_samples as u64 {
                        return Err(Error::InvalidArgument(format!(
                            "dimension `{}` has {} levels, fewer than {} samples",
                            d.name,
                            hi - lo + 1,
                            self.n_samples
                        )));
                    }
                    lo > 0 && lo <= hi
                }
            };
            if !ok {
                return Err(Error::InvalidArgument(format!("dimension `{}` has an empty range", d.name)));
            }
        }
        Ok(())
    }
}

fn from_unit(range: &LhsRange, u: f64) -> f64 {
    match *range {
        LhsRange::Linear { lo, hi } => lo + u * (hi - lo),
        LhsRange::Log { lo, hi } => (lo.ln() + u * (hi.ln() - lo.ln())).exp(),
        LhsRange::Integer { lo, hi } => {
            let (a, b) = ((lo as f64).ln(), (hi as f64).ln());
            (a + u * (b - a)).exp().round().clamp(lo as f64, hi as f64)
        }
    }
}

/// One point per equal-probability stratum in every dimension.
///
/// Returns `n_samples` rows with one value per dimension, in plan order.
pub fn lhs_sample(plan: &LhsPlan) -> Result<Vec<Vec<f64>>> {
    plan.validate()?;
    let n = plan.n_samples;
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let mut rows = vec![Vec::with_capacity(plan.dimensions.len()); n];
    for d in &plan.dimensions {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(&mut rng);
        for (row, s) in rows.iter_mut().zip(strata) {
            let u = (s as f64 + rng.random::<f64>()) / n as f64;
            row.push(from_unit(&d.range, u));
        }
    }
    Ok(rows)
}

/// A point of the hyperparameter sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperSetting {
    pub epsilon: f64,
    pub hidden_units: usize,
    pub batch_size: usize,
}

impl HyperSetting {
    /// Reads `epsilon`, `hidden_units` and `batch_size` from an LHS row, using
    /// `fallback` for dimensions the plan does not vary.
    pub fn from_row(plan: &LhsPlan, row: &[f64], fallback: HyperSetting) -> Self {
        let get = |name: &str| {
            plan.dimensions
                .iter()
                .position(|d| d.name == name)
                .map(|i| row[i])
        };
        Self {
            epsilon: get("epsilon").unwrap_or(fallback.epsilon),
            hidden_units: get("hidden_units").map_or(fallback.hidden_units, |v| v as usize),
            batch_size: get("batch_size").map_or(fallback.batch_size, |v| v as usize),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    /// Position in the submitted settings list.
    pub index: usize,
    pub setting: HyperSetting,
    /// Mean of the four per-target RMSEs, infinite for divergent runs.
    pub mean_rmse: f64,
    pub rmse: [f64; N_TARGETS],
    pub diverged: bool,
}

/// Fixed parts of every sweep run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepBase {
    pub hidden_layers: usize,
    pub epochs: usize,
    pub loss: crate::nn::LossConfig,
    pub seed: u64,
}

/// Trains one network per setting and returns rows sorted by mean RMSE.
///
/// Every run uses the same initialization and shuffling seeds. Batch sizes larger
/// than the training set are clamped.
pub fn run_sweep(
    settings: &[HyperSetting],
    train: &Dataset,
    test: &Dataset,
    base: &SweepBase,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(settings.len());
    for (index, s) in settings.iter().enumerate() {
        let mut widths = vec![N_FEATURES];
        widths.extend(std::iter::repeat(s.hidden_units).take(base.hidden_layers));
        widths.push(N_TARGETS);
        let mut rng = ChaCha8Rng::seed_from_u64(base.seed);
        let net = Network::xavier(&widths, Activation::Identity, 1.0, &mut rng)?;
        let cfg = TrainConfig {
            epochs: base.epochs,
            batch_size: s.batch_size.clamp(1, train.len()),
            optimizer: Optimizer::adam(s.epsilon),
            loss: base.loss,
            seed: base.seed,
            shuffle: true,
        };
        let (rmse, diverged) = match optim::train(net, train, test, &cfg) {
            Ok((_, hist)) => (hist.last().map(|e| e.test_rmse).unwrap_or([f64::INFINITY; 4]), false),
            Err(Error::Diverged { .. }) => ([f64::INFINITY; N_TARGETS], true),
            Err(e) => return Err(e),
        };
        rows.push(SweepRow {
            index,
            setting: *s,
            mean_rmse: rmse.iter().sum::<f64>() / N_TARGETS as f64,
            rmse,
            diverged,
        });
    }
    rows.sort_by(|a, b| a.mean_rmse.total_cmp(&b.mean_rmse).then(a.index.cmp(&b.index)));
    Ok(rows)
}

pub fn write_sweep_csv(path: impl AsRef<Path>, rows: &[SweepRow]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "rank",
        "index",
        "epsilon",
        "hidden_units",
        "batch_size",
        "mean_rmse",
        "rmse_alpha_wall",
        "rmse_T_sup",
        "rmse_q_evap",
        "rmse_q_single",
        "diverged",
    ])?;
    for (rank, r) in rows.iter().enumerate() {
        let t = rmse_row(&r.rmse);
        w.write_record([
            rank.to_string(),
            r.index.to_string(),
            format!("{:.16e}", r.setting.epsilon),
            r.setting.hidden_units.to_string(),
            r.setting.batch_size.to_string(),
            format!("{:.16e}", r.mean_rmse),
            format!("{:.16e}", t[0]),
            format!("{:.16e}", t[1]),
            format!("{:.16e}", t[2]),
            format!("{:.16e}", t[3]),
            r.diverged.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
