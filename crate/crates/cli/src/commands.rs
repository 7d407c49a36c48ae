use std::path::{Path, PathBuf};

use boilnet::average::AvgSpec;
use boilnet::experiment::{
    baseline_linear, evaluate, lhs_sample, make_splits, prepare_split, run_sweep, write_sweep_csv, write_rmse_table,
    HyperSetting, SweepBase,
};
use boilnet::features::{apply_normalization, fit_normalization, Dataset, Direction};
use boilnet::model::Model;
use boilnet::nn::{Activation, Network};
use boilnet::optim::{train, TrainConfig};
use boilnet::synth::{check_distinct, generate_case, suite_config, AveragedCase, CaseBundle, MANIFEST};
use boilnet::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{read_json, PipelineConfig, Training};

/// Directory and file stem of a case: `q600` for 600 kW/m².
pub fn case_name(q_total: f64) -> String {
    format!("q{}", (q_total / 1e3).round())
}

pub struct Workspace {
    pub root: PathBuf,
}

impl Workspace {
    pub fn cases(&self) -> PathBuf {
        self.root.join("cases")
    }
    pub fn averaged(&self) -> PathBuf {
        self.root.join("averaged")
    }
    pub fn datasets(&self) -> PathBuf {
        self.root.join("datasets")
    }
    pub fn models(&self) -> PathBuf {
        self.root.join("models")
    }
    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }
    pub fn dataset(&self, name: &str) -> PathBuf {
        self.datasets().join(format!("{name}.csv"))
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

/// Case directories below `dir` (those holding a manifest), sorted by name, or
/// the ones named explicitly.
fn case_dirs(dir: &Path, only: &[String]) -> Result<Vec<(String, PathBuf)>> {
    if !only.is_empty() {
        return Ok(only.iter().map(|n| (n.clone(), dir.join(n))).collect());
    }
    let entries = std::fs::read_dir(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry
            .map_err(|e| Error::Io {
                path: dir.to_path_buf(),
                source: e,
            })?
            .path();
        if path.join(MANIFEST).is_file() {
            let name = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
            out.push((name, path));
        }
    }
    if out.is_empty() {
        return Err(Error::InvalidArgument(format!("no cases found in {}", dir.display())));
    }
    out.sort();
    Ok(out)
}

pub fn generate(cfg: &PipelineConfig, ws: &Workspace) -> Result<Vec<PathBuf>> {
    let g = &cfg.generation;
    check_distinct(&g.heat_fluxes)?;
    let mut written = Vec::new();
    for (n, &q) in g.heat_fluxes.iter().enumerate() {
        let case = suite_config(&g.case, q, g.seed, n);
        let dir = ws.cases().join(case_name(q));
        generate_case(&case)?.write(&dir)?;
        eprintln!("generated {} (seed {})", dir.display(), case.seed);
        written.push(dir);
    }
    Ok(written)
}

pub fn average(ws: &Workspace, only: &[String], spec: &AvgSpec) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for (name, dir) in case_dirs(&ws.cases(), only)? {
        let out = ws.averaged().join(&name);
        CaseBundle::read(&dir)?.average(spec)?.write(&out)?;
        eprintln!("averaged {} -> {}", dir.display(), out.display());
        written.push(out);
    }
    Ok(written)
}

pub fn extract(ws: &Workspace, only: &[String]) -> Result<Vec<PathBuf>> {
    create_dir(&ws.datasets())?;
    let mut written = Vec::new();
    for (name, dir) in case_dirs(&ws.averaged(), only)? {
        let data = AveragedCase::read(&dir)?.extract(None)?;
        let out = ws.dataset(&name);
        data.write_csv(&out)?;
        eprintln!("extracted {} rows -> {}", data.len(), out.display());
        written.push(out);
    }
    Ok(written)
}

/// Training and test CSVs of case study `split` (1-based) from the workspace.
pub fn split_paths(cfg: &PipelineConfig, ws: &Workspace, split: usize) -> Result<(Vec<PathBuf>, PathBuf)> {
    let mut fluxes = cfg.generation.heat_fluxes.clone();
    fluxes.sort_by(f64::total_cmp);
    let splits = make_splits(&fluxes)?;
    let s = split
        .checked_sub(1)
        .and_then(|i| splits.get(i))
        .ok_or_else(|| Error::InvalidArgument(format!("split must be 1..={}, got {split}", splits.len())))?;
    Ok((
        s.train_labels.iter().map(|q| ws.dataset(&case_name(*q))).collect(),
        ws.dataset(&case_name(s.test_label)),
    ))
}

fn read_datasets(paths: &[PathBuf]) -> Result<Dataset> {
    let parts = paths.iter().map(Dataset::read_csv).collect::<Result<Vec<_>>>()?;
    Dataset::concat(&parts.iter().collect::<Vec<_>>())
}

pub fn history_path(model: &Path) -> PathBuf {
    let stem = model.file_stem().unwrap_or_default().to_string_lossy();
    model.with_file_name(format!("{stem}_history.csv"))
}

pub fn train_model(train_csvs: &[PathBuf], test_csv: &Path, hyper: &Training, out: &Path) -> Result<Model> {
    let train_raw = read_datasets(train_csvs)?;
    let test_raw = Dataset::read_csv(test_csv)?;
    let stats = fit_normalization(&train_raw)?;
    let train_n = apply_normalization(&train_raw, &stats, Direction::Forward)?;
    let test_n = apply_normalization(&test_raw, &stats, Direction::Forward)?;
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let net = Network::xavier(&hyper.widths(), Activation::Identity, 1.0, &mut rng)?;
    let tc = TrainConfig {
        epochs: hyper.epochs,
        batch_size: hyper.batch_size,
        optimizer: hyper.optimizer,
        loss: hyper.loss,
        seed: hyper.seed,
        shuffle: true,
    };
    let (net, history) = train(net, &train_n, &test_n, &tc)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    let model = Model::new(net, Some(stats))?;
    model.save(out)?;
    history.write_csv(history_path(out))?;
    if let Some(last) = history.last() {
        eprintln!(
            "trained {} epochs, final objective {:.4e}, test RMSE {:?}",
            last.epoch, last.train_objective, last.test_rmse
        );
    }
    Ok(model)
}

pub fn evaluate_model(model_path: &Path, test_csv: &Path, train_csvs: &[PathBuf], out: &Path) -> Result<()> {
    let model = Model::load(model_path)?;
    let test = model.normalize(&Dataset::read_csv(test_csv)?)?;
    let baseline = if train_csvs.is_empty() {
        None
    } else {
        let train = model.normalize(&read_datasets(train_csvs)?)?;
        Some(baseline_linear(&train, &test)?)
    };
    let report = evaluate(&model.network, &test, baseline)?;
    report.write(out)?;
    let label = test
        .case_labels()
        .iter()
        .map(|q| format!("{}", (q / 1e3).round()))
        .collect::<Vec<_>>()
        .join("+");
    write_rmse_table(out.join("rmse_table.csv"), &[(label, report.rmse())])?;
    for q in &report.qoi {
        eprintln!(
            "{:<10} rmse {:.4e}  2-sigma coverage {:.3}",
            q.name, q.rmse, q.coverage_mean_centered
        );
    }
    Ok(())
}

pub fn hpsearch(cfg: &PipelineConfig, ws: &Workspace, split: usize, out: &Path) -> Result<()> {
    let (train_paths, test_path) = split_paths(cfg, ws, split)?;
    let exp = &cfg.experiment;
    let subsample = |d: Dataset, n: usize| -> Result<Dataset> {
        match exp.sweep_subsample {
            Some(k) if k < d.len() => d.subsample(k, exp.lhs.seed.wrapping_add(n as u64)),
            _ => Ok(d),
        }
    };
    let mut cases = Vec::new();
    for (n, p) in train_paths.iter().chain(std::iter::once(&test_path)).enumerate() {
        cases.push(subsample(Dataset::read_csv(p)?, n)?);
    }
    let labels: Vec<f64> = cases.iter().flat_map(Dataset::case_labels).collect();
    let test_label = *labels.last().unwrap_or(&f64::NAN);
    let split_def = make_splits(&labels)?
        .into_iter()
        .find(|s| s.test_label == test_label)
        .ok_or_else(|| Error::InvalidArgument("test case label not found among the cases".into()))?;
    let prepared = prepare_split(&cases, &split_def)?;

    let fallback = HyperSetting {
        epsilon: cfg.training.optimizer.epsilon(),
        hidden_units: cfg.training.hidden_units,
        batch_size: cfg.training.batch_size,
    };
    let mut settings: Vec<HyperSetting> = lhs_sample(&exp.lhs)?
        .iter()
        .map(|row| HyperSetting::from_row(&exp.lhs, row, fallback))
        .collect();
    settings.extend(exp.anchors.iter().copied());
    let base = SweepBase {
        hidden_layers: exp.sweep_hidden_layers,
        epochs: exp.sweep_epochs,
        loss: cfg.training.loss,
        seed: exp.lhs.seed,
    };
    let rows = run_sweep(&settings, &prepared.train, &prepared.test, &base)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_sweep_csv(out, &rows)?;
    eprintln!("swept {} settings -> {}", rows.len(), out.display());
    Ok(())
}

/// Training and test paths given on the command line, or those of the split.
pub fn resolve_split(
    cfg: &PipelineConfig,
    ws: &Workspace,
    train: Vec<PathBuf>,
    test: Option<PathBuf>,
    split: Option<usize>,
) -> Result<(Vec<PathBuf>, PathBuf)> {
    let (split_train, split_test) = split_paths(cfg, ws, split.unwrap_or(cfg.experiment.split))?;
    Ok((
        if train.is_empty() { split_train } else { train },
        test.unwrap_or(split_test),
    ))
}

pub fn load_hyper(path: Option<&Path>, cfg: &PipelineConfig) -> Result<Training> {
    match path {
        Some(p) => read_json(p),
        None => Ok(cfg.training.clone()),
    }
}
