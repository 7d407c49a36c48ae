//! Parameter updates, mini-batching and the training loop.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::rmse_per_qoi;
use crate::features::{Dataset, N_TARGETS};
use crate::nn::{BatchWorkspace, Gradients, LossConfig, Network};

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidArgument(format!("learning rate must be > 0, got {epsilon}")));
    }
    Ok(())
}

/// Plain gradient descent: `θ ← θ − ε ∇J`.
pub fn sgd_step(net: &mut Network, grads: &Gradients, epsilon: f64) -> Result<()> {
    check_epsilon(epsilon)?;
    net.check_gradients_shape(grads)?;
    for (p, g) in net.parameter_slices_mut().zip(grads.slices()) {
        for (p, g) in p.iter_mut().zip(g) {
            *p -= epsilon * g;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub delta: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            delta: 1e-8,
        }
    }
}

/// First and second moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Gradients,
    pub v: Gradients,
    pub config: AdamConfig,
    pub t: u64,
}

impl AdamState {
    pub fn new(net: &Network, config: AdamConfig) -> Result<Self> {
        let ok = |b: f64| (0.0..1.0).contains(&b);
        if !(ok(config.beta1) && ok(config.beta2) && config.delta > 0.0) {
            return Err(Error::InvalidArgument(format!("invalid Adam settings {config:?}")));
        }
        Ok(Self {
            m: net.zero_gradients(),
            v: net.zero_gradients(),
            config,
            t: 0,
        })
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(net: &mut Network, grads: &Gradients, state: &mut AdamState, epsilon: f64) -> Result<()> {
    check_epsilon(epsilon)?;
    net.check_gradients_shape(grads)?;
    net.check_gradients_shape(&state.m)?;
    net.check_gradients_shape(&state.v)?;
    let AdamConfig { beta1, beta2, delta } = state.config;
    state.t += 1;
    let c1 = 1.0 - beta1.powf(state.t as f64);
    let c2 = 1.0 - beta2.powf(state.t as f64);
    let params = net.parameter_slices_mut();
    let moments = state.m.slices_mut().zip(state.v.slices_mut());
    for ((p, g), (m, v)) in params.zip(grads.slices()).zip(moments) {
        for i in 0..p.len() {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= epsilon * m_hat / (v_hat.sqrt() + delta);
        }
    }
    Ok(())
}

/// A shuffled partition of `0..n` into consecutive chunks of `batch_size`.
pub fn minibatches<R: Rng + ?Sized>(n: usize, batch_size: usize, rng: &mut R) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 || batch_size > n {
        return Err(Error::InvalidArgument(format!(
            "batch size {batch_size} outside 1..={n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    Sgd {
        epsilon: f64,
    },
    Adam {
        epsilon: f64,
        #[serde(flatten)]
        config: AdamConfig,
    },
}

impl Optimizer {
    pub fn adam(epsilon: f64) -> Self {
        Optimizer::Adam {
            epsilon,
            config: AdamConfig::default(),
        }
    }

    pub fn epsilon(&self) -> f64 {
        match self {
            Optimizer::Sgd { epsilon } | Optimizer::Adam { epsilon, .. } => *epsilon,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub loss: LossConfig,
    pub seed: u64,
    #[serde(default = "default_shuffle")]
    pub shuffle: bool,
}

fn default_shuffle() -> bool {
    true
}

impl TrainConfig {
    pub fn validate(&self, n_train: usize) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 || self.batch_size > n_train {
            return Err(Error::InvalidArgument(format!(
                "batch size {} outside 1..={n_train}",
                self.batch_size
            )));
        }
        check_epsilon(self.optimizer.epsilon())?;
        self.loss.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean of the mini-batch objectives seen during the epoch.
    pub train_objective: f64,
    /// Test RMSE per target in physical units, target order.
    pub test_rmse: [f64; N_TARGETS],
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub const HEADER: [&'static str; 7] = [
        "epoch",
        "train_objective",
        "rmse_alpha_wall",
        "rmse_T_sup",
        "rmse_q_evap",
        "rmse_q_single",
        "seconds",
    ];

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(w, "{}", Self::HEADER.join(",")).map_err(io)?;
        for r in &self.epochs {
            let [q_evap, q_single, alpha, t_sup] = r.test_rmse;
            writeln!(
                w,
                "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.6}",
                r.epoch, r.train_objective, alpha, t_sup, q_evap, q_single, r.seconds
            )
            .map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

/// Network outputs for every sample, mapped back to physical units.
pub fn predict_physical(net: &Network, data: &Dataset) -> Result<Vec<[f64; N_TARGETS]>> {
    let stats = data
        .normalization()
        .ok_or_else(|| Error::InvalidArgument("prediction expects normalized features".into()))?;
    data.samples()
        .iter()
        .map(|s| {
            let y = net.predict(&s.features)?;
            let mut out = [0.0; N_TARGETS];
            out.copy_from_slice(&y);
            stats.targets.inverse(&mut out);
            Ok(out)
        })
        .collect()
}

/// Targets of a normalized dataset in physical units.
pub fn truth_physical(data: &Dataset) -> Result<Vec<[f64; N_TARGETS]>> {
    let stats = data
        .normalization()
        .ok_or_else(|| Error::InvalidArgument("dataset is not normalized".into()))?;
    Ok(data
        .samples()
        .iter()
        .map(|s| {
            let mut t = s.targets;
            stats.targets.inverse(&mut t);
            t
        })
        .collect())
}

/// Physical-unit RMSE per target of `net` on a normalized dataset.
pub fn evaluate_rmse(net: &Network, data: &Dataset) -> Result<[f64; N_TARGETS]> {
    rmse_per_qoi(&predict_physical(net, data)?, &truth_physical(data)?)
}

fn diverged(epoch: usize, batch: usize, value: f64) -> Error {
    Error::Diverged { epoch, batch, value }
}

/// Mini-batch training on normalized data.
///
/// Both datasets must carry the same normalization (fitted on the training set).
/// Epoch and batch numbers in errors are 1-based.
pub fn train(
    mut net: Network,
    train_data: &Dataset,
    test_data: &Dataset,
    cfg: &TrainConfig,
) -> Result<(Network, TrainHistory)> {
    cfg.validate(train_data.len())?;
    match (train_data.normalization(), test_data.normalization()) {
        (Some(a), Some(b)) if a == b => {}
        (Some(_), Some(_)) => {
            return Err(Error::InvalidArgument(
                "test data must be normalized with the training statistics".into(),
            ))
        }
        _ => return Err(Error::InvalidArgument("training expects normalized datasets".into())),
    }
    if net.input_width() != crate::features::N_FEATURES || net.output_width() != N_TARGETS {
        return Err(Error::Shape(format!(
            "network maps {} -> {}, data has {} features and {N_TARGETS} targets",
            net.input_width(),
            net.output_width(),
            crate::features::N_FEATURES
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut ws = BatchWorkspace::new(&net);
    let mut adam = match cfg.optimizer {
        Optimizer::Adam { config, .. } => Some(AdamState::new(&net, config)?),
        Optimizer::Sgd { .. } => None,
    };
    let samples = train_data.samples();
    let sequential: Vec<usize> = (0..samples.len()).collect();
    let mut history = TrainHistory::default();

    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let batches = if cfg.shuffle {
            minibatches(samples.len(), cfg.batch_size, &mut rng)?
        } else {
            sequential.chunks(cfg.batch_size).map(<[usize]>::to_vec).collect()
        };
        let mut objective_sum = 0.0;
        for (b, idx) in batches.iter().enumerate() {
            let batch = idx
                .iter()
                .map(|&i| (&samples[i].features[..], &samples[i].targets[..]));
            let (objective, grads) = ws.mean_gradients(&net, batch, &cfg.loss)?;
            if !objective.is_finite() || !grads.is_finite() {
                return Err(diverged(epoch, b + 1, objective));
            }
            match (&cfg.optimizer, adam.as_mut()) {
                (Optimizer::Adam { epsilon, .. }, Some(state)) => adam_step(&mut net, grads, state, *epsilon)?,
                (Optimizer::Sgd { epsilon }, _) => sgd_step(&mut net, grads, *epsilon)?,
                _ => unreachable!("optimizer state matches configuration"),
            }
            if !net.is_finite() {
                return Err(diverged(epoch, b + 1, objective));
            }
            objective_sum += objective;
        }
        let train_objective = objective_sum / batches.len() as f64;
        let test_rmse = evaluate_rmse(&net, test_data)?;
        if let Some(v) = test_rmse.iter().find(|v| !v.is_finite()) {
            return Err(diverged(epoch, batches.len(), *v));
        }
        history.epochs.push(EpochRecord {
            epoch,
            train_objective,
            test_rmse,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok((net, history))
}
