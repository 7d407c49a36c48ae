//! Pipeline configuration file.
//!
//! Every section has defaults except the seeds, which a config file must spell
//! out.

use std::path::{Path, PathBuf};

use boilnet::average::AvgSpec;
use boilnet::experiment::{HyperSetting, LhsPlan};
use boilnet::nn::LossConfig;
use boilnet::optim::Optimizer;
use boilnet::synth::GenConfig;
use boilnet::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub generation: Generation,
    #[serde(default = "default_window")]
    pub averaging: AvgSpec,
    pub training: Training,
    pub experiment: Experiment,
    #[serde(default)]
    pub paths: Paths,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Generation {
    /// Heat fluxes of the cases (W/m²).
    #[serde(default = "default_fluxes")]
    pub heat_fluxes: Vec<f64>,
    /// Case `n` is generated with seed `seed + n`.
    pub seed: u64,
    /// Template for every case; its `q_total` and `seed` are replaced.
    #[serde(default)]
    pub case: GenConfig,
}

/// Architecture and optimizer settings; also the format of `train --hyper` files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Training {
    #[serde(default = "default_layers")]
    pub hidden_layers: usize,
    #[serde(default = "default_units")]
    pub hidden_units: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_optimizer")]
    pub optimizer: Optimizer,
    #[serde(default)]
    pub loss: LossConfig,
    /// Seeds both weight initialization and batch shuffling.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Experiment {
    /// Case study 1–4: the index of the test case among the sorted heat fluxes.
    #[serde(default = "default_split")]
    pub split: usize,
    pub lhs: LhsPlan,
    /// Settings appended to the LHS points.
    #[serde(default)]
    pub anchors: Vec<HyperSetting>,
    #[serde(default = "default_sweep_epochs")]
    pub sweep_epochs: usize,
    #[serde(default = "default_layers")]
    pub sweep_hidden_layers: usize,
    /// Rows drawn from each case before a sweep; all rows when absent.
    #[serde(default)]
    pub sweep_subsample: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub workspace: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            workspace: PathBuf::from("workspace"),
        }
    }
}

fn default_window() -> AvgSpec {
    GenConfig::default().window
}
fn default_fluxes() -> Vec<f64> {
    vec![600e3, 800e3, 1000e3, 1200e3]
}
fn default_layers() -> usize {
    3
}
fn default_units() -> usize {
    64
}
fn default_epochs() -> usize {
    200
}
fn default_batch() -> usize {
    256
}
fn default_optimizer() -> Optimizer {
    Optimizer::adam(1e-3)
}
fn default_split() -> usize {
    1
}
fn default_sweep_epochs() -> usize {
    20
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            generation: Generation {
                heat_fluxes: default_fluxes(),
                seed: 2019,
                case: GenConfig::default(),
            },
            averaging: default_window(),
            training: Training::with_seed(7),
            experiment: Experiment {
                split: default_split(),
                lhs: LhsPlan::standard(8, 11),
                anchors: Vec::new(),
                sweep_epochs: default_sweep_epochs(),
                sweep_hidden_layers: default_layers(),
                sweep_subsample: None,
            },
            paths: Paths::default(),
        }
    }
}

impl Training {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            hidden_layers: default_layers(),
            hidden_units: default_units(),
            epochs: default_epochs(),
            batch_size: default_batch(),
            optimizer: default_optimizer(),
            loss: LossConfig::default(),
            seed,
        }
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![boilnet::features::N_FEATURES];
        w.extend(std::iter::repeat(self.hidden_units).take(self.hidden_layers));
        w.push(boilnet::features::N_TARGETS);
        w
    }
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))
}
