//! Near-wall features and targets from averaged fields.

use std::ops::Range;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Field4D, SurfaceSeries};

pub const N_FEATURES: usize = 19;
pub const N_TARGETS: usize = 4;

/// Input feature columns, in model order.
pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "dp_dx",
    "dp_dy",
    "dp_dz",
    "d_rho_uu_dx",
    "d_rho_uv_dx",
    "d_rho_uw_dx",
    "d_rho_uv_dy",
    "d_rho_vv_dy",
    "d_rho_vw_dy",
    "d_rho_uw_dz",
    "d_rho_vw_dz",
    "d_rho_ww_dz",
    "d_rho_hu_dx",
    "d_rho_hv_dy",
    "d_rho_hw_dz",
    "mu_t",
    "q_total",
    "n_site",
    "t_act",
];

/// Target columns, in model order.
pub const TARGET_NAMES: [&str; N_TARGETS] = ["q_evap", "q_single", "alpha_wall", "t_sup"];

/// Index of the void fraction among the targets.
pub const ALPHA_WALL: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

/// First derivative along `axis` using the field's own spacing.
///
/// Central differences in the interior, first-order one-sided at both ends. Every
/// time slice is differentiated independently.
pub fn central_gradient(field: &Field4D, axis: Axis) -> Result<Field4D> {
    let dims = field.dims();
    let a = axis.index();
    let n = dims[a];
    if n < 3 {
        return Err(Error::Shape(format!(
            "gradient of `{}` along {axis:?} needs at least 3 cells, found {n}",
            field.name()
        )));
    }
    let stride = match a {
        0 => 1,
        1 => dims[0],
        _ => dims[0] * dims[1],
    };
    let h = field.dx();
    let f = field.values();
    let mut out = Vec::with_capacity(f.len());
    for (idx, _) in f.iter().enumerate() {
        let pos = (idx / stride) % n;
        let d = if pos == 0 {
            (f[idx + stride] - f[idx]) / h
        } else if pos == n - 1 {
            (f[idx] - f[idx - stride]) / h
        } else {
            (f[idx + stride] - f[idx - stride]) / (2.0 * h)
        };
        out.push(d);
    }
    Field4D::new(format!("d{}_d{axis:?}", field.name()).to_lowercase(), dims, h, field.dt(), out)
}

/// Void-fraction weighted mixture of a liquid and a vapor property.
pub fn phase_mix(f_liquid: f64, f_vapor: f64, alpha: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("void fraction {alpha} outside [0, 1]")));
    }
    Ok(alpha * f_vapor + (1.0 - alpha) * f_liquid)
}

fn product(name: &str, fields: &[&Field4D]) -> Result<Field4D> {
    let first = fields[0];
    for f in &fields[1..] {
        first.check_same_grid(f)?;
    }
    let values = (0..first.values().len())
        .map(|i| fields.iter().map(|f| f.values()[i]).product())
        .collect();
    Field4D::new(name, first.dims(), first.dx(), first.dt(), values)
}

/// The nine momentum and three energy convection terms, in feature order.
///
/// Products are taken of the averaged quantities, then differentiated.
pub fn build_convection_terms(
    rho: &Field4D,
    u: &Field4D,
    v: &Field4D,
    w: &Field4D,
    h: &Field4D,
) -> Result<Vec<Field4D>> {
    use Axis::{X, Y, Z};
    let terms: [(&str, [&Field4D; 3], Axis); 12] = [
        ("rho_uu", [rho, u, u], X),
        ("rho_uv", [rho, u, v], X),
        ("rho_uw", [rho, u, w], X),
        ("rho_uv", [rho, u, v], Y),
        ("rho_vv", [rho, v, v], Y),
        ("rho_vw", [rho, v, w], Y),
        ("rho_uw", [rho, u, w], Z),
        ("rho_vw", [rho, v, w], Z),
        ("rho_ww", [rho, w, w], Z),
        ("rho_hu", [rho, h, u], X),
        ("rho_hv", [rho, h, v], Y),
        ("rho_hw", [rho, h, w], Z),
    ];
    terms
        .iter()
        .map(|(name, fs, axis)| central_gradient(&product(name, fs)?, *axis))
        .collect()
}

/// Averaged volume quantities of one case.
#[derive(Debug, Clone)]
pub struct VolumeInputs {
    pub p: Field4D,
    pub u: Field4D,
    pub v: Field4D,
    pub w: Field4D,
    pub rho: Field4D,
    pub h: Field4D,
    pub mu_t: Field4D,
    /// Void fraction.
    pub alpha: Field4D,
}

/// Averaged surface quantities of one case.
#[derive(Debug, Clone)]
pub struct SurfaceInputs {
    pub q_total: SurfaceSeries,
    pub n_site: SurfaceSeries,
    pub t_act: SurfaceSeries,
    pub q_evap: SurfaceSeries,
    pub q_single: SurfaceSeries,
    pub t_sup: SurfaceSeries,
}

/// Sub-grid of the surface to sample, in averaged cell indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Region {
    pub x: Range<usize>,
    pub y: Range<usize>,
}

/// One row of the learning problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: [f64; N_FEATURES],
    pub targets: [f64; N_TARGETS],
    /// Applied heat flux of the originating case (W/m²).
    pub case_label: f64,
}

impl Sample {
    fn is_finite(&self) -> bool {
        self.features.iter().chain(&self.targets).all(|v| v.is_finite()) && self.case_label.is_finite()
    }
}

/// Samples from the first averaged layer above the wall, ordered by `i`, then `j`, then `t`.
pub fn extract_near_wall(
    vol: &VolumeInputs,
    surf: &SurfaceInputs,
    region: Option<Region>,
    case_label: f64,
) -> Result<Dataset> {
    let volumes = [&vol.p, &vol.u, &vol.v, &vol.w, &vol.rho, &vol.h, &vol.mu_t, &vol.alpha];
    for f in &volumes[1..] {
        vol.p.check_same_grid(f)?;
    }
    let [nx, ny, _, nt] = vol.p.dims();
    let surfaces = [
        &surf.q_total,
        &surf.n_site,
        &surf.t_act,
        &surf.q_evap,
        &surf.q_single,
        &surf.t_sup,
    ];
    for s in surfaces {
        if s.dims() != [nx, ny, nt] {
            return Err(Error::Shape(format!(
                "surface `{}` is {:?}, volume grid is {:?}",
                s.name(),
                s.dims(),
                [nx, ny, nt]
            )));
        }
    }
    let region = region.unwrap_or(Region { x: 0..nx, y: 0..ny });
    if region.x.is_empty() || region.y.is_empty() || region.x.end > nx || region.y.end > ny {
        return Err(Error::Shape(format!(
            "extraction region {region:?} does not fit the {nx}x{ny} grid"
        )));
    }

    let mut columns = vec![
        central_gradient(&vol.p, Axis::X)?,
        central_gradient(&vol.p, Axis::Y)?,
        central_gradient(&vol.p, Axis::Z)?,
    ];
    columns.extend(build_convection_terms(&vol.rho, &vol.u, &vol.v, &vol.w, &vol.h)?);
    columns.push(vol.mu_t.clone());

    let mut samples = Vec::with_capacity(region.x.len() * region.y.len() * nt);
    for i in region.x.clone() {
        for j in region.y.clone() {
            for t in 0..nt {
                let mut features = [0.0; N_FEATURES];
                for (slot, col) in features.iter_mut().zip(&columns) {
                    *slot = col.get(i, j, 0, t);
                }
                features[16] = surf.q_total.get(i, j, t);
                features[17] = surf.n_site.get(i, j, t);
                features[18] = surf.t_act.get(i, j, t);
                let targets = [
                    surf.q_evap.get(i, j, t),
                    surf.q_single.get(i, j, t),
                    vol.alpha.get(i, j, 0, t),
                    surf.t_sup.get(i, j, t),
                ];
                samples.push(Sample {
                    features,
                    targets,
                    case_label,
                });
            }
        }
    }
    let mut ds = Dataset::new(samples)?;
    ds.grid = Some([region.x.len(), region.y.len(), nt]);
    Ok(ds)
}

/// Per-column mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Normalization statistics fitted on a training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub features: ColumnStats,
    pub targets: ColumnStats,
}

const DEGENERATE_STD: f64 = 1e-12;

fn column_stats(rows: &[&[f64]], width: usize) -> ColumnStats {
    let n = rows.len() as f64;
    let mut mean = vec![0.0; width];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r.iter()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; width];
    for r in rows {
        for ((s, v), m) in var.iter_mut().zip(r.iter()).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std = var
        .iter()
        .map(|s| {
            let sd = (s / n).sqrt();
            if sd < DEGENERATE_STD {
                1.0
            } else {
                sd
            }
        })
        .collect();
    ColumnStats { mean, std }
}

impl ColumnStats {
    fn check(&self, width: usize, what: &str) -> Result<()> {
        if self.mean.len() != width || self.std.len() != width {
            return Err(Error::Shape(format!(
                "{what} statistics have {}/{} entries, expected {width}",
                self.mean.len(),
                self.std.len()
            )));
        }
        if self.std.iter().any(|s| !(*s > 0.0 && s.is_finite())) || self.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidArgument(format!("{what} statistics must be finite with std > 0")));
        }
        Ok(())
    }

    pub fn forward(&self, values: &mut [f64]) {
        for ((v, m), s) in values.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = (*v - m) / s;
        }
    }

    pub fn inverse(&self, values: &mut [f64]) {
        for ((v, m), s) in values.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = *v * s + m;
        }
    }
}

impl NormStats {
    pub fn validate(&self) -> Result<()> {
        self.features.check(N_FEATURES, "feature")?;
        self.targets.check(N_TARGETS, "target")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

/// Column statistics of a raw training set.
pub fn fit_normalization(train: &Dataset) -> Result<NormStats> {
    if train.is_normalized() {
        return Err(Error::InvalidArgument("cannot fit statistics on normalized data".into()));
    }
    let feats: Vec<&[f64]> = train.samples.iter().map(|s| &s.features[..]).collect();
    let targs: Vec<&[f64]> = train.samples.iter().map(|s| &s.targets[..]).collect();
    Ok(NormStats {
        features: column_stats(&feats, N_FEATURES),
        targets: column_stats(&targs, N_TARGETS),
    })
}

/// Normalizes raw data or restores normalized data to physical units.
pub fn apply_normalization(data: &Dataset, stats: &NormStats, direction: Direction) -> Result<Dataset> {
    stats.validate()?;
    let mut out = data.clone();
    match direction {
        Direction::Forward => {
            if data.is_normalized() {
                return Err(Error::InvalidArgument("dataset is already normalized".into()));
            }
            for s in &mut out.samples {
                stats.features.forward(&mut s.features);
                stats.targets.forward(&mut s.targets);
            }
            out.normalization = Some(stats.clone());
        }
        Direction::Inverse => {
            match &data.normalization {
                None => return Err(Error::InvalidArgument("dataset is not normalized".into())),
                Some(own) if own != stats => {
                    return Err(Error::InvalidArgument(
                        "statistics differ from those the dataset was normalized with".into(),
                    ))
                }
                Some(_) => {}
            }
            for s in &mut out.samples {
                stats.features.inverse(&mut s.features);
                stats.targets.inverse(&mut s.targets);
            }
            out.normalization = None;
        }
    }
    Ok(out)
}

/// Rows of features and targets, optionally normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    normalization: Option<NormStats>,
    /// Surface grid `(nx, ny, nt)` when rows follow extraction order.
    grid: Option<[usize; 3]>,
}

impl Dataset {
    /// Raw (physical-unit) dataset.
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("dataset has no samples".into()));
        }
        for (n, s) in samples.iter().enumerate() {
            if !s.is_finite() {
                return Err(Error::NonFinite(format!("sample {n} has non-finite values")));
            }
            let a = s.targets[ALPHA_WALL];
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::InvalidArgument(format!(
                    "sample {n} has alpha_wall = {a} outside [0, 1]"
                )));
            }
        }
        Ok(Self {
            samples,
            normalization: None,
            grid: None,
        })
    }

    /// Joins raw datasets, keeping row order. Grid information is dropped.
    pub fn concat(parts: &[&Dataset]) -> Result<Self> {
        if parts.iter().any(|d| d.is_normalized()) {
            return Err(Error::InvalidArgument("concatenate raw datasets only".into()));
        }
        Self::new(parts.iter().flat_map(|d| d.samples.iter().cloned()).collect())
    }

    /// `n` rows drawn without replacement, kept in their original order.
    pub fn subsample(&self, n: usize, seed: u64) -> Result<Self> {
        if self.is_normalized() {
            return Err(Error::InvalidArgument("subsample raw datasets only".into()));
        }
        if n == 0 || n > self.len() {
            return Err(Error::InvalidArgument(format!(
                "cannot draw {n} of {} samples",
                self.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked = rand::seq::index::sample(&mut rng, self.len(), n).into_vec();
        picked.sort_unstable();
        Self::new(picked.into_iter().map(|i| self.samples[i].clone()).collect())
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalization.is_some()
    }

    pub fn normalization(&self) -> Option<&NormStats> {
        self.normalization.as_ref()
    }

    pub fn grid(&self) -> Option<[usize; 3]> {
        self.grid
    }

    /// Declares the rows to be an `nx × ny × nt` grid in extraction order.
    pub fn with_grid(mut self, grid: [usize; 3]) -> Result<Self> {
        if grid.iter().product::<usize>() != self.samples.len() {
            return Err(Error::Shape(format!(
                "grid {grid:?} does not match {} samples",
                self.samples.len()
            )));
        }
        self.grid = Some(grid);
        Ok(self)
    }

    /// Distinct case labels in order of first appearance.
    pub fn case_labels(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for s in &self.samples {
            if !out.contains(&s.case_label) {
                out.push(s.case_label);
            }
        }
        out
    }

    pub fn targets_column(&self, k: usize) -> Vec<f64> {
        self.samples.iter().map(|s| s.targets[k]).collect()
    }

    /// Pairs of `(features, targets)` slices, for training.
    pub fn pairs(&self) -> impl Iterator<Item = (&[f64], &[f64])> {
        self.samples.iter().map(|s| (&s.features[..], &s.targets[..]))
    }

    pub fn header() -> Vec<&'static str> {
        FEATURE_NAMES
            .iter()
            .chain(TARGET_NAMES.iter())
            .copied()
            .chain(std::iter::once("case_label"))
            .collect()
    }

    /// Writes raw rows with 17 significant digits.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        if self.is_normalized() {
            return Err(Error::InvalidArgument("only raw datasets are written to disk".into()));
        }
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(Self::header())?;
        for s in &self.samples {
            let row: Vec<String> = s
                .features
                .iter()
                .chain(&s.targets)
                .chain(std::iter::once(&s.case_label))
                .map(|v| format!("{v:.16e}"))
                .collect();
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = csv::Reader::from_reader(file);
        let header = r.headers()?.clone();
        let expected = Self::header();
        for (index, name) in expected.iter().enumerate() {
            let found = header.get(index).unwrap_or("");
            if found != *name {
                return Err(Error::Header {
                    index,
                    found: found.to_string(),
                    expected: name.to_string(),
                });
            }
        }
        if header.len() != expected.len() {
            return Err(Error::Header {
                index: expected.len(),
                found: header.get(expected.len()).unwrap_or("").to_string(),
                expected: "end of header".into(),
            });
        }
        let mut samples = Vec::new();
        for (row, record) in r.records().enumerate() {
            let record = record?;
            let mut vals = [0.0; N_FEATURES + N_TARGETS + 1];
            for (c, slot) in vals.iter_mut().enumerate() {
                let cell = record.get(c).unwrap_or("");
                *slot = cell.trim().parse().map_err(|_| {
                    Error::InvalidArgument(format!(
                        "{}: row {} column `{}`: cannot parse `{cell}`",
                        path.display(),
                        row + 1,
                        expected[c]
                    ))
                })?;
            }
            let mut features = [0.0; N_FEATURES];
            features.copy_from_slice(&vals[..N_FEATURES]);
            let mut targets = [0.0; N_TARGETS];
            targets.copy_from_slice(&vals[N_FEATURES..N_FEATURES + N_TARGETS]);
            samples.push(Sample {
                features,
                targets,
                case_label: vals[N_FEATURES + N_TARGETS],
            });
        }
        Self::new(samples)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ramp(dims: [usize; 4], dx: f64, f: impl Fn(f64, f64, f64) -> f64) -> Field4D {
        Field4D::from_fn("f", dims, dx, 1.0, |i, j, k, _| {
            f(i as f64 * dx, j as f64 * dx, k as f64 * dx)
        })
        .unwrap()
    }

    fn sample(features: [f64; N_FEATURES], targets: [f64; N_TARGETS]) -> Sample {
        Sample {
            features,
            targets,
            case_label: 6e5,
        }
    }

    fn random_dataset(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples = (0..n)
            .map(|_| {
                let mut f = [0.0; N_FEATURES];
                f.iter_mut().for_each(|v| *v = rng.random_range(-5.0..20.0));
                let t = [
                    rng.random_range(0.0..1e5),
                    rng.random_range(0.0..1e6),
                    rng.random_range(0.0..1.0),
                    rng.random_range(5.0..20.0),
                ];
                sample(f, t)
            })
            .collect();
        Dataset::new(samples).unwrap()
    }

    #[test]
    fn gradient_of_constant_is_zero() {
        let f = Field4D::constant("c", [4, 4, 4, 2], 0.1, 1.0, 3.0).unwrap();
        for axis in [Axis::X, Axis::Y, Axis::Z] {
            assert!(central_gradient(&f, axis).unwrap().values().iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn gradient_of_linear_field() {
        // f = 2 * index on a grid of spacing 0.5
        let f = Field4D::from_fn("f", [5, 3, 3, 1], 0.5, 1.0, |i, _, _, _| 2.0 * i as f64).unwrap();
        let g = central_gradient(&f, Axis::X).unwrap();
        for i in 0..5 {
            assert!((g.get(i, 1, 1, 0) - 4.0).abs() < 1e-12);
        }
        let g = central_gradient(&f, Axis::Y).unwrap();
        assert!(g.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn gradient_of_quadratic_at_interior_node() {
        let f = ramp([3, 3, 5, 1], 1.0, |_, _, z| z * z);
        let g = central_gradient(&f, Axis::Z).unwrap();
        for k in 1..4 {
            assert_eq!(g.get(0, 0, k, 0), 2.0 * k as f64);
        }
        // forward difference at the wall: (1 - 0) / 1
        assert_eq!(g.get(0, 0, 0, 0), 1.0);
        assert_eq!(g.get(0, 0, 4, 0), 16.0 - 9.0);
    }

    #[test]
    fn gradient_needs_three_cells() {
        let f = Field4D::constant("c", [2, 4, 4, 1], 0.1, 1.0, 1.0).unwrap();
        assert!(central_gradient(&f, Axis::X).is_err());
        assert!(central_gradient(&f, Axis::Y).is_ok());
    }

    #[test]
    fn phase_mix_values() {
        assert_eq!(phase_mix(3.0, 7.0, 0.0).unwrap(), 3.0);
        assert_eq!(phase_mix(3.0, 7.0, 1.0).unwrap(), 7.0);
        assert_eq!(phase_mix(0.0, 4.0, 0.25).unwrap(), 1.0);
        assert!(phase_mix(0.0, 4.0, 1.5).is_err());
        assert!(phase_mix(0.0, 4.0, -0.1).is_err());
    }

    #[test]
    fn convection_terms_zero_for_still_fluid() {
        let dims = [4, 4, 4, 1];
        let zero = Field4D::constant("0", dims, 0.1, 1.0, 0.0).unwrap();
        let one = Field4D::constant("1", dims, 0.1, 1.0, 1.0).unwrap();
        let c = Field4D::constant("c", dims, 0.1, 1.0, 2.5).unwrap();
        let terms = build_convection_terms(&one, &zero, &zero, &zero, &one).unwrap();
        assert_eq!(terms.len(), 12);
        assert!(terms.iter().all(|t| t.values().iter().all(|v| *v == 0.0)));
        let terms = build_convection_terms(&one, &c, &zero, &zero, &zero).unwrap();
        assert!(terms.iter().all(|t| t.values().iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn convection_of_linear_velocity() {
        let dims = [6, 4, 4, 1];
        let dx = 0.5;
        let one = Field4D::constant("1", dims, dx, 1.0, 1.0).unwrap();
        let zero = Field4D::constant("0", dims, dx, 1.0, 0.0).unwrap();
        let u = ramp(dims, dx, |x, _, _| x);
        let terms = build_convection_terms(&one, &u, &zero, &zero, &zero).unwrap();
        for i in 1..5 {
            let x = i as f64 * dx;
            assert!((terms[0].get(i, 2, 2, 0) - 2.0 * x).abs() < 1e-12);
        }
        assert!(terms[1..].iter().all(|t| t.values().iter().all(|v| *v == 0.0)));
        let bad = Field4D::constant("b", [6, 4, 3, 1], dx, 1.0, 0.0).unwrap();
        assert!(build_convection_terms(&one, &u, &bad, &zero, &zero).is_err());
    }

    fn case_inputs(n: usize, alpha: f64) -> (VolumeInputs, SurfaceInputs) {
        let dims = [n, n, 3, 1];
        let vol = |name: &str, v: f64| Field4D::constant(name, dims, 1e-3, 0.1, v).unwrap();
        let surf = |name: &str, f: &dyn Fn(usize, usize) -> f64| {
            SurfaceSeries::from_fn(name, [n, n, 1], 1e-3, 0.1, |i, j, _| f(i, j)).unwrap()
        };
        (
            VolumeInputs {
                p: Field4D::from_fn("p", dims, 1e-3, 0.1, |i, _, _, _| i as f64).unwrap(),
                u: vol("u", 0.0),
                v: vol("v", 0.0),
                w: vol("w", 0.0),
                rho: vol("rho", 958.0),
                h: vol("h", 4.2e5),
                mu_t: vol("mu_t", 1e-4),
                alpha: vol("alpha", alpha),
            },
            SurfaceInputs {
                q_total: surf("q_total", &|_, _| 6e5),
                n_site: surf("n_site", &|i, _| i as f64),
                t_act: surf("t_act", &|_, j| j as f64),
                q_evap: surf("q_evap", &|i, j| (i * 100 + j) as f64),
                q_single: surf("q_single", &|_, _| 5e5),
                t_sup: surf("t_sup", &|_, _| 12.0),
            },
        )
    }

    #[test]
    fn extraction_count_and_order() {
        let (vol, surf) = case_inputs(50, 0.0);
        let ds = extract_near_wall(&vol, &surf, None, 6e5).unwrap();
        assert_eq!(ds.len(), 2500);
        assert_eq!(ds.grid(), Some([50, 50, 1]));
        for (n, s) in ds.samples().iter().enumerate() {
            let (i, j) = (n / 50, n % 50);
            assert_eq!(s.targets[0], (i * 100 + j) as f64);
            assert_eq!(s.features[17], i as f64);
            assert_eq!(s.features[18], j as f64);
            assert!((s.features[0] - 1e3).abs() < 1e-9);
            assert!(s.features[3..15].iter().all(|v| *v == 0.0));
            assert_eq!(s.targets[ALPHA_WALL], 0.0);
        }
        let sub = extract_near_wall(&vol, &surf, Some(Region { x: 10..40, y: 5..45 }), 6e5).unwrap();
        assert_eq!(sub.len(), 30 * 40);
        assert_eq!(sub.samples()[0].targets[0], 1005.0);
        assert!(extract_near_wall(&vol, &surf, Some(Region { x: 0..51, y: 0..5 }), 6e5).is_err());

        let four: Vec<Dataset> = (0..4)
            .map(|c| extract_near_wall(&vol, &surf, None, 6e5 + 2e5 * c as f64).unwrap())
            .collect();
        let all = Dataset::concat(&four.iter().collect::<Vec<_>>()).unwrap();
        assert_eq!(all.len(), 10000);
        assert_eq!(all.case_labels(), vec![6e5, 8e5, 1e6, 1.2e6]);
    }

    #[test]
    fn extraction_rejects_mismatched_grids() {
        let (vol, mut surf) = case_inputs(8, 0.3);
        surf.t_sup = SurfaceSeries::from_fn("t_sup", [8, 7, 1], 1e-3, 0.1, |_, _, _| 1.0).unwrap();
        assert!(extract_near_wall(&vol, &surf, None, 6e5).is_err());
    }

    #[test]
    fn fit_population_statistics() {
        let mut rows = Vec::new();
        for v in [2.0, 4.0, 6.0] {
            let mut f = [1.0; N_FEATURES];
            f[0] = v;
            rows.push(sample(f, [0.0, 1.0, 0.5, v]));
        }
        let stats = fit_normalization(&Dataset::new(rows).unwrap()).unwrap();
        assert_eq!(stats.features.mean[0], 4.0);
        assert!((stats.features.std[0] - 1.632993161855452).abs() < 1e-12);
        assert_eq!(stats.features.mean[1], 1.0);
        assert_eq!(stats.features.std[1], 1.0);
        assert_eq!(stats.targets.std[2], 1.0);
    }

    #[test]
    fn normalization_round_trip_and_flag() {
        let ds = random_dataset(200, 1);
        let stats = fit_normalization(&ds).unwrap();
        let norm = apply_normalization(&ds, &stats, Direction::Forward).unwrap();
        assert!(norm.is_normalized());
        for c in 0..N_FEATURES {
            let col: Vec<f64> = norm.samples().iter().map(|s| s.features[c]).collect();
            let m = col.iter().sum::<f64>() / col.len() as f64;
            let sd = (col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / col.len() as f64).sqrt();
            assert!(m.abs() <= 1e-12 && (sd - 1.0).abs() <= 1e-9);
        }
        assert!(apply_normalization(&norm, &stats, Direction::Forward).is_err());
        assert!(fit_normalization(&norm).is_err());
        assert!(apply_normalization(&ds, &stats, Direction::Inverse).is_err());
        let back = apply_normalization(&norm, &stats, Direction::Inverse).unwrap();
        for (a, b) in back.samples().iter().zip(ds.samples()) {
            for (x, y) in a.features.iter().chain(&a.targets).zip(b.features.iter().chain(&b.targets)) {
                assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0));
            }
        }
    }

    #[test]
    fn test_set_uses_training_statistics() {
        let train = random_dataset(100, 2);
        let mut test_rows = random_dataset(50, 3).samples().to_vec();
        test_rows.iter_mut().for_each(|s| s.features[0] += 100.0);
        let test = Dataset::new(test_rows).unwrap();
        let stats = fit_normalization(&train).unwrap();
        let own = fit_normalization(&test).unwrap();
        let a = apply_normalization(&test, &stats, Direction::Forward).unwrap();
        let b = apply_normalization(&test, &own, Direction::Forward).unwrap();
        assert_eq!(a.normalization(), Some(&stats));
        assert_ne!(a.samples()[0].features[0], b.samples()[0].features[0]);
    }

    #[test]
    fn dataset_validation() {
        assert!(Dataset::new(vec![]).is_err());
        assert!(Dataset::new(vec![sample([0.0; N_FEATURES], [0.0, 0.0, 1.5, 0.0])]).is_err());
        assert!(Dataset::new(vec![sample([f64::NAN; N_FEATURES], [0.0; 4])]).is_err());
        let ds = random_dataset(6, 0);
        assert!(ds.clone().with_grid([2, 3, 1]).is_ok());
        assert!(ds.with_grid([2, 2, 1]).is_err());
    }

    #[test]
    fn csv_round_trip_and_header_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let ds = random_dataset(20, 9);
        ds.write_csv(&path).unwrap();
        assert_eq!(Dataset::read_csv(&path).unwrap(), ds);

        let text = std::fs::read_to_string(&path).unwrap().replacen("dp_dy", "dpdy", 1);
        std::fs::write(&path, text).unwrap();
        match Dataset::read_csv(&path) {
            Err(Error::Header { index, found, .. }) => assert_eq!((index, found.as_str()), (1, "dpdy")),
            other => panic!("{other:?}"),
        }
        assert_eq!(Dataset::header().len(), 24);
    }

    proptest! {
        #[test]
        fn phase_mix_is_bounded(a in -1e3f64..1e3, b in -1e3f64..1e3, alpha in 0.0f64..=1.0) {
            let m = phase_mix(a, b, alpha).unwrap();
            prop_assert!(m >= a.min(b) - 1e-9 && m <= a.max(b) + 1e-9);
        }

        #[test]
        fn quadratic_gradients_exact(c0 in -5.0f64..5.0, c1 in -5.0f64..5.0, c2 in -5.0f64..5.0) {
            let dx = 0.25;
            let f = ramp([7, 3, 3, 1], dx, |x, _, _| c0 + c1 * x + c2 * x * x);
            let g = central_gradient(&f, Axis::X).unwrap();
            for i in 1..6 {
                let x = i as f64 * dx;
                prop_assert!((g.get(i, 0, 0, 0) - (c1 + 2.0 * c2 * x)).abs() < 1e-12);
            }
        }
    }
}
