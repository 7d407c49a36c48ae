//! Dense feedforward network with ELU hidden units.
//!
//! Layer `k` maps `h^(k-1)` to `z^(k) = W^(k) h^(k-1) + b^(k)` and then applies the
//! activation, `h^(k) = g(z^(k))`. Hidden layers use ELU; the output layer uses
//! [`Activation::Identity`] unless configured otherwise.
//!
//! Weights are stored row-major with shape `(out, in)`. All arithmetic is `f64`.
//!
//! Two gradient paths exist:
//!
//! - [`forward`] + [`backward`] for a single sample, returning owned buffers.
//! - [`BatchWorkspace::mean_gradients`] for a mini-batch, reusing buffers. It
//!   performs the same per-sample operations in the same order, so a batch of one
//!   reproduces [`backward`] bit-for-bit.

mod extended;

pub use extended::{gradient_check_extended, numerical_gradients_extended};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pointwise nonlinearity applied after an affine map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Elu,
}

/// One dense layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    rows: usize,
    cols: usize,
    /// Row-major, `rows * cols` entries.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    pub fn new(rows: usize, cols: usize, weights: Vec<f64>, biases: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidArgument(format!(
                "layer dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if weights.len() != rows * cols {
            return Err(Error::Shape(format!(
                "layer {rows}x{cols} needs {} weights, got {}",
                rows * cols,
                weights.len()
            )));
        }
        if biases.len() != rows {
            return Err(Error::Shape(format!(
                "layer {rows}x{cols} needs {rows} biases, got {}",
                biases.len()
            )));
        }
        if weights.iter().chain(&biases).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("layer parameters".into()));
        }
        Ok(Self {
            rows,
            cols,
            weights,
            biases,
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Result<Self> {
        Self::new(rows, cols, vec![0.0; rows * cols], vec![0.0; rows])
    }

    /// Output width.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Input width.
    pub fn cols(&self) -> usize {
        self.cols
    }

    fn row(&self, r: usize) -> &[f64] {
        &self.weights[r * self.cols..(r + 1) * self.cols]
    }
}

/// Glorot/Xavier uniform initialization: weights in `±sqrt(6 / (in + out))`, zero biases.
pub fn xavier_init<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Result<Layer> {
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidArgument(format!(
            "layer dimensions must be positive, got {rows}x{cols}"
        )));
    }
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let weights = (0..rows * cols)
        .map(|_| rng.random_range(-limit..=limit))
        .collect();
    Layer::new(rows, cols, weights, vec![0.0; rows])
}

/// Ordered stack of dense layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
    output_activation: Activation,
    alpha: f64,
}

impl Network {
    pub fn new(layers: Vec<Layer>, output_activation: Activation, alpha: f64) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("network needs at least one layer".into()));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!("ELU alpha must be > 0, got {alpha}")));
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[1].cols != pair[0].rows {
                return Err(Error::Shape(format!(
                    "layer {} outputs {} values but layer {} expects {}",
                    k,
                    pair[0].rows,
                    k + 1,
                    pair[1].cols
                )));
            }
        }
        Ok(Self {
            layers,
            output_activation,
            alpha,
        })
    }

    /// Builds a Xavier-initialized network from layer widths, e.g. `[19, 64, 64, 64, 4]`.
    pub fn xavier<R: Rng + ?Sized>(
        widths: &[usize],
        output_activation: Activation,
        alpha: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::InvalidArgument(
                "need at least input and output widths".into(),
            ));
        }
        let layers = widths
            .windows(2)
            .map(|w| xavier_init(w[1], w[0], rng))
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers, output_activation, alpha)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn output_activation(&self) -> Activation {
        self.output_activation
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].cols
    }

    pub fn output_width(&self) -> usize {
        self.layers[self.layers.len() - 1].rows
    }

    /// Layer widths including the input, e.g. `[19, 64, 4]`.
    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.input_width())
            .chain(self.layers.iter().map(|l| l.rows))
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|v| v.is_finite()))
    }

    fn activation_for(&self, k: usize) -> Activation {
        if k + 1 == self.layers.len() {
            self.output_activation
        } else {
            Activation::Elu
        }
    }

    /// Forward pass returning only the output.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        forward(self, x).map(|(y, _)| y)
    }

    /// Gradient-shaped buffer of zeros matching this network.
    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            weights: self.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            biases: self.layers.iter().map(|l| vec![0.0; l.biases.len()]).collect(),
        }
    }

    /// All parameter slices in a fixed order: layer 0 weights, layer 0 biases, layer 1 weights, ...
    pub fn parameter_slices_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.biases.as_mut_slice()])
    }

    pub(crate) fn check_gradients_shape(&self, grads: &Gradients) -> Result<()> {
        let ok = grads.weights.len() == self.layers.len()
            && grads.biases.len() == self.layers.len()
            && self.layers.iter().enumerate().all(|(k, l)| {
                grads.weights[k].len() == l.weights.len() && grads.biases[k].len() == l.biases.len()
            });
        if ok {
            Ok(())
        } else {
            Err(Error::Shape("gradients do not match network layout".into()))
        }
    }
}

/// Per-layer intermediate values of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    /// `z^(k)` for `k = 1..=L`, stored at index `k - 1`.
    pub pre_activations: Vec<Vec<f64>>,
    /// `h^(k)` for `k = 0..=L`; index 0 is the input.
    pub activations: Vec<Vec<f64>>,
}

/// Per-layer derivatives of the objective, shaped like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    /// Parameter-gradient slices in the same order as [`Network::parameter_slices_mut`].
    pub fn slices(&self) -> impl Iterator<Item = &[f64]> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.as_slice(), b.as_slice()])
    }

    pub fn slices_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w.as_mut_slice(), b.as_mut_slice()])
    }

    pub fn is_finite(&self) -> bool {
        self.slices().all(|s| s.iter().all(|v| v.is_finite()))
    }

    fn fill_zero(&mut self) {
        for s in self.slices_mut() {
            s.fill(0.0);
        }
    }

    fn scale(&mut self, factor: f64) {
        for s in self.slices_mut() {
            for v in s {
                *v *= factor;
            }
        }
    }
}

/// Data-fit term of the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossNorm {
    L1,
    L2,
}

/// Weight penalty `Ω(w)`. Biases are never penalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regularizer {
    L1,
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub norm: LossNorm,
    pub lambda: f64,
    pub regularizer: Regularizer,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            norm: LossNorm::L2,
            lambda: 1e-4,
            regularizer: Regularizer::L2,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

pub fn elu(x: f64, alpha: f64) -> Result<f64> {
    check_elu_args(x, alpha)?;
    Ok(elu_unchecked(x, alpha))
}

pub fn elu_derivative(x: f64, alpha: f64) -> Result<f64> {
    check_elu_args(x, alpha)?;
    Ok(elu_derivative_unchecked(x, alpha))
}

fn check_elu_args(x: f64, alpha: f64) -> Result<()> {
    if !x.is_finite() {
        return Err(Error::NonFinite(format!("elu input {x}")));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!("ELU alpha must be > 0, got {alpha}")));
    }
    Ok(())
}

#[inline]
fn elu_unchecked(x: f64, alpha: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        alpha * x.exp_m1()
    }
}

#[inline]
fn elu_derivative_unchecked(x: f64, alpha: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        alpha * x.exp()
    }
}

/// Dot product with four interleaved accumulators. Every matrix-vector product in
/// this module goes through here, which keeps the batched and single-sample paths
/// numerically identical.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn affine_into(layer: &Layer, input: &[f64], out: &mut [f64]) {
    for (r, o) in out.iter_mut().enumerate() {
        *o = dot(layer.row(r), input) + layer.biases[r];
    }
}

fn activate_into(act: Activation, alpha: f64, z: &[f64], h: &mut [f64]) {
    match act {
        Activation::Identity => h.copy_from_slice(z),
        Activation::Elu => {
            for (hi, zi) in h.iter_mut().zip(z) {
                *hi = elu_unchecked(*zi, alpha);
            }
        }
    }
}

/// `grad <- grad ⊙ g'(z)`.
fn apply_activation_derivative(act: Activation, alpha: f64, z: &[f64], grad: &mut [f64]) {
    if act == Activation::Elu {
        for (g, zi) in grad.iter_mut().zip(z) {
            *g *= elu_derivative_unchecked(*zi, alpha);
        }
    }
}

pub fn forward(net: &Network, x: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
    if x.len() != net.input_width() {
        return Err(Error::Shape(format!(
            "input has {} features, network expects {}",
            x.len(),
            net.input_width()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("network input".into()));
    }
    let mut pre = Vec::with_capacity(net.layers.len());
    let mut act = Vec::with_capacity(net.layers.len() + 1);
    act.push(x.to_vec());
    for (k, layer) in net.layers.iter().enumerate() {
        let mut z = vec![0.0; layer.rows];
        affine_into(layer, &act[k], &mut z);
        let mut h = vec![0.0; layer.rows];
        activate_into(net.activation_for(k), net.alpha, &z, &mut h);
        pre.push(z);
        act.push(h);
    }
    let y = act.last().cloned().unwrap_or_default();
    Ok((
        y,
        ForwardCache {
            pre_activations: pre,
            activations: act,
        },
    ))
}

fn check_pair(y_hat: &[f64], y: &[f64]) -> Result<()> {
    if y_hat.len() != y.len() {
        return Err(Error::Shape(format!(
            "prediction has {} entries, target has {}",
            y_hat.len(),
            y.len()
        )));
    }
    if y.is_empty() {
        return Err(Error::InvalidArgument("loss of empty vectors".into()));
    }
    Ok(())
}

/// Mean absolute (L1) or mean squared (L2) error between prediction and target.
pub fn loss(y_hat: &[f64], y: &[f64], norm: LossNorm) -> Result<f64> {
    check_pair(y_hat, y)?;
    Ok(loss_unchecked(y_hat, y, norm))
}

fn loss_unchecked(y_hat: &[f64], y: &[f64], norm: LossNorm) -> f64 {
    let m = y.len() as f64;
    let sum: f64 = match norm {
        LossNorm::L1 => y_hat.iter().zip(y).map(|(a, b)| (a - b).abs()).sum(),
        LossNorm::L2 => y_hat.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum(),
    };
    sum / m
}

/// `∇_ŷ L`. The L1 subgradient at a zero residual is 0.
fn loss_gradient_into(y_hat: &[f64], y: &[f64], norm: LossNorm, out: &mut [f64]) {
    let m = y.len() as f64;
    for ((o, a), b) in out.iter_mut().zip(y_hat).zip(y) {
        let r = a - b;
        *o = match norm {
            LossNorm::L2 => 2.0 * r / m,
            LossNorm::L1 => {
                if r > 0.0 {
                    1.0 / m
                } else if r < 0.0 {
                    -1.0 / m
                } else {
                    0.0
                }
            }
        };
    }
}

pub fn loss_gradient(y_hat: &[f64], y: &[f64], norm: LossNorm) -> Result<Vec<f64>> {
    check_pair(y_hat, y)?;
    let mut out = vec![0.0; y.len()];
    loss_gradient_into(y_hat, y, norm, &mut out);
    Ok(out)
}

/// `Ω(w)` over all weight entries: `½ Σ w²` (L2) or `Σ |w|` (L1).
pub fn regularization(net: &Network, kind: Regularizer) -> f64 {
    net.layers
        .iter()
        .flat_map(|l| &l.weights)
        .map(|w| match kind {
            Regularizer::L2 => 0.5 * w * w,
            Regularizer::L1 => w.abs(),
        })
        .sum()
}

/// Adds `λ ∇_W Ω` to the weight gradients. Bias gradients are untouched.
fn add_regularization_gradient(net: &Network, cfg: &LossConfig, grads: &mut Gradients) {
    if cfg.lambda == 0.0 {
        return;
    }
    for (layer, gw) in net.layers.iter().zip(grads.weights.iter_mut()) {
        for (g, w) in gw.iter_mut().zip(&layer.weights) {
            *g += cfg.lambda
                * match cfg.regularizer {
                    Regularizer::L2 => *w,
                    Regularizer::L1 => {
                        if *w > 0.0 {
                            1.0
                        } else if *w < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    }
                };
        }
    }
}

/// Mean data loss over the batch plus `λ Ω(w)`.
pub fn total_objective<'a, I>(net: &Network, batch: I, cfg: &LossConfig) -> Result<f64>
where
    I: IntoIterator<Item = (&'a [f64], &'a [f64])>,
{
    cfg.validate()?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (x, y) in batch {
        let y_hat = net.predict(x)?;
        sum += loss(&y_hat, y, cfg.norm)?;
        n += 1;
    }
    if n == 0 {
        return Err(Error::InvalidArgument("objective of an empty batch".into()));
    }
    let data = sum / n as f64;
    if cfg.lambda == 0.0 {
        Ok(data)
    } else {
        Ok(data + cfg.lambda * regularization(net, cfg.regularizer))
    }
}

/// Single-sample backpropagation of `J = L(ŷ, y) + λ Ω(w)`.
pub fn backward(
    net: &Network,
    cache: &ForwardCache,
    y: &[f64],
    cfg: &LossConfig,
) -> Result<Gradients> {
    cfg.validate()?;
    let depth = net.layers.len();
    if cache.pre_activations.len() != depth || cache.activations.len() != depth + 1 {
        return Err(Error::Shape("forward cache depth does not match network".into()));
    }
    for (k, layer) in net.layers.iter().enumerate() {
        if cache.pre_activations[k].len() != layer.rows || cache.activations[k].len() != layer.cols
        {
            return Err(Error::Shape(format!("forward cache layer {k} has the wrong width")));
        }
    }
    if cache.activations[depth].len() != y.len() {
        return Err(Error::Shape(format!(
            "target has {} entries, network outputs {}",
            y.len(),
            net.output_width()
        )));
    }

    let mut grads = net.zero_gradients();
    let mut grad = vec![0.0; y.len()];
    loss_gradient_into(&cache.activations[depth], y, cfg.norm, &mut grad);
    backprop_sample(net, &cache.pre_activations, &cache.activations, grad, &mut grads);
    add_regularization_gradient(net, cfg, &mut grads);
    Ok(grads)
}

/// Accumulates one sample's data-loss gradient into `grads`. `grad` enters as `∇_ŷ L`.
fn backprop_sample<Z: AsRef<[f64]>, H: AsRef<[f64]>>(
    net: &Network,
    pre: &[Z],
    act: &[H],
    mut grad: Vec<f64>,
    grads: &mut Gradients,
) {
    for k in (0..net.layers.len()).rev() {
        let layer = &net.layers[k];
        apply_activation_derivative(net.activation_for(k), net.alpha, pre[k].as_ref(), &mut grad);
        let h_prev = act[k].as_ref();
        for (r, g) in grad.iter().enumerate() {
            grads.biases[k][r] += g;
            axpy(*g, h_prev, &mut grads.weights[k][r * layer.cols..(r + 1) * layer.cols]);
        }
        if k > 0 {
            let mut upstream = vec![0.0; layer.cols];
            for (r, g) in grad.iter().enumerate() {
                axpy(*g, layer.row(r), &mut upstream);
            }
            grad = upstream;
        }
    }
}

/// Reusable buffers for mini-batch gradient evaluation.
#[derive(Debug, Clone)]
pub struct BatchWorkspace {
    pre: Vec<Vec<f64>>,
    act: Vec<Vec<f64>>,
    grads: Gradients,
}

impl BatchWorkspace {
    pub fn new(net: &Network) -> Self {
        Self {
            pre: net.layers.iter().map(|l| vec![0.0; l.rows]).collect(),
            act: std::iter::once(net.input_width())
                .chain(net.layers.iter().map(|l| l.rows))
                .map(|w| vec![0.0; w])
                .collect(),
            grads: net.zero_gradients(),
        }
    }

    /// Mean gradient of the regularized objective over `batch` and the objective value.
    ///
    /// Per-sample gradients are summed in batch order and then divided by the batch
    /// size, after which `λ ∇Ω` is added once.
    pub fn mean_gradients<'a, I>(
        &mut self,
        net: &Network,
        batch: I,
        cfg: &LossConfig,
    ) -> Result<(f64, &Gradients)>
    where
        I: IntoIterator<Item = (&'a [f64], &'a [f64])>,
    {
        cfg.validate()?;
        self.grads.fill_zero();
        let depth = net.layers.len();
        let mut loss_sum = 0.0;
        let mut n = 0usize;
        for (x, y) in batch {
            if x.len() != net.input_width() || y.len() != net.output_width() {
                return Err(Error::Shape(format!(
                    "sample has {}/{} values, network expects {}/{}",
                    x.len(),
                    y.len(),
                    net.input_width(),
                    net.output_width()
                )));
            }
            self.act[0].copy_from_slice(x);
            for k in 0..depth {
                let (lo, hi) = self.act.split_at_mut(k + 1);
                affine_into(&net.layers[k], &lo[k], &mut self.pre[k]);
                activate_into(net.activation_for(k), net.alpha, &self.pre[k], &mut hi[0]);
            }
            let y_hat = &self.act[depth];
            loss_sum += loss_unchecked(y_hat, y, cfg.norm);
            let mut grad = vec![0.0; y.len()];
            loss_gradient_into(y_hat, y, cfg.norm, &mut grad);
            backprop_sample(net, &self.pre, &self.act, grad, &mut self.grads);
            n += 1;
        }
        if n == 0 {
            return Err(Error::InvalidArgument("gradient of an empty batch".into()));
        }
        self.grads.scale(1.0 / n as f64);
        add_regularization_gradient(net, cfg, &mut self.grads);
        let mut objective = loss_sum / n as f64;
        if cfg.lambda != 0.0 {
            objective += cfg.lambda * regularization(net, cfg.regularizer);
        }
        Ok((objective, &self.grads))
    }
}

/// Central finite-difference gradient of the single-sample objective.
pub fn numerical_gradients(
    net: &Network,
    x: &[f64],
    y: &[f64],
    cfg: &LossConfig,
    h: f64,
) -> Result<Gradients> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step must be > 0, got {h}")));
    }
    let objective = |n: &Network| total_objective(n, [(x, y)], cfg);
    let mut probe = net.clone();
    let mut out = net.zero_gradients();
    for k in 0..net.layers.len() {
        for i in 0..net.layers[k].weights.len() {
            let orig = net.layers[k].weights[i];
            probe.layers[k].weights[i] = orig + h;
            let plus = objective(&probe)?;
            probe.layers[k].weights[i] = orig - h;
            let minus = objective(&probe)?;
            probe.layers[k].weights[i] = orig;
            out.weights[k][i] = (plus - minus) / (2.0 * h);
        }
        for i in 0..net.layers[k].biases.len() {
            let orig = net.layers[k].biases[i];
            probe.layers[k].biases[i] = orig + h;
            let plus = objective(&probe)?;
            probe.layers[k].biases[i] = orig - h;
            let minus = objective(&probe)?;
            probe.layers[k].biases[i] = orig;
            out.biases[k][i] = (plus - minus) / (2.0 * h);
        }
    }
    Ok(out)
}

/// `max |a - n| / max(|a|, |n|, 1e-12)` over all entries.
pub fn max_relative_error(analytic: &Gradients, numeric: &Gradients) -> Result<f64> {
    if analytic.weights.len() != numeric.weights.len()
        || analytic
            .slices()
            .zip(numeric.slices())
            .any(|(a, b)| a.len() != b.len())
    {
        return Err(Error::Shape("gradient layouts differ".into()));
    }
    Ok(analytic
        .slices()
        .zip(numeric.slices())
        .flat_map(|(a, n)| a.iter().zip(n))
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-12))
        .fold(0.0, f64::max))
}

/// Compares [`backward`] against central finite differences with step `h`.
pub fn gradient_check(
    net: &Network,
    x: &[f64],
    y: &[f64],
    cfg: &LossConfig,
    h: f64,
) -> Result<f64> {
    let (_, cache) = forward(net, x)?;
    let analytic = backward(net, &cache, y, cfg)?;
    let numeric = numerical_gradients(net, x, y, cfg, h)?;
    max_relative_error(&analytic, &numeric)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_net() -> Network {
        Network::new(
            vec![
                Layer::new(1, 2, vec![1.0, 1.0], vec![0.0]).unwrap(),
                Layer::new(1, 1, vec![2.0], vec![1.0]).unwrap(),
            ],
            Activation::Identity,
            1.0,
        )
        .unwrap()
    }

    fn mse() -> LossConfig {
        LossConfig {
            norm: LossNorm::L2,
            lambda: 0.0,
            regularizer: Regularizer::L2,
        }
    }

    #[test]
    fn elu_values() {
        assert_eq!(elu(0.0, 1.0).unwrap(), 0.0);
        assert_eq!(elu(2.5, 1.0).unwrap(), 2.5);
        assert!((elu(-1.0, 1.0).unwrap() - (-0.6321206)).abs() < 1e-7);
        assert!(elu(f64::NAN, 1.0).is_err());
        assert!(elu(1.0, 0.0).is_err());
    }

    #[test]
    fn elu_derivative_values() {
        assert_eq!(elu_derivative(3.0, 1.0).unwrap(), 1.0);
        assert_eq!(elu_derivative(0.0, 1.0).unwrap(), 1.0);
        assert!((elu_derivative(-1.0, 1.0).unwrap() - 0.3678794).abs() < 1e-7);
        assert!(elu_derivative(f64::INFINITY, 1.0).is_err());
    }

    #[test]
    fn forward_fixtures() {
        let net = tiny_net();
        let (y, cache) = forward(&net, &[1.0, 2.0]).unwrap();
        assert_eq!(cache.pre_activations[0], vec![3.0]);
        assert_eq!(cache.activations[1], vec![3.0]);
        assert_eq!(y, vec![7.0]);

        let (y, cache) = forward(&net, &[1.0, -2.0]).unwrap();
        assert_eq!(cache.pre_activations[0], vec![-1.0]);
        assert!((cache.activations[1][0] + 0.6321206).abs() < 1e-7);
        assert!((y[0] + 0.2642411).abs() < 1e-7);

        assert!(forward(&net, &[1.0]).is_err());
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = Network::new(
            vec![Layer::zeros(3, 5).unwrap(), Layer::zeros(2, 3).unwrap()],
            Activation::Identity,
            1.0,
        )
        .unwrap();
        assert_eq!(net.predict(&[1.0, -2.0, 3.0, 0.5, 9.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn loss_values() {
        assert_eq!(loss(&[1.0, 3.0], &[1.0, 3.0], LossNorm::L1).unwrap(), 0.0);
        assert_eq!(loss(&[1.0, 3.0], &[1.0, 3.0], LossNorm::L2).unwrap(), 0.0);
        assert_eq!(loss(&[1.0, 3.0], &[0.0, 1.0], LossNorm::L2).unwrap(), 2.5);
        assert_eq!(loss(&[1.0, 3.0], &[0.0, 1.0], LossNorm::L1).unwrap(), 1.5);
        assert!(loss(&[1.0], &[1.0, 2.0], LossNorm::L2).is_err());
        assert!(loss(&[], &[], LossNorm::L2).is_err());
    }

    #[test]
    fn regularization_values() {
        let zero = Network::new(vec![Layer::zeros(2, 2).unwrap()], Activation::Identity, 1.0)
            .unwrap();
        assert_eq!(regularization(&zero, Regularizer::L2), 0.0);
        let single = |w: Vec<f64>| {
            Network::new(
                vec![Layer::new(1, 2, w, vec![5.0]).unwrap()],
                Activation::Identity,
                1.0,
            )
            .unwrap()
        };
        assert_eq!(regularization(&single(vec![1.0, 2.0]), Regularizer::L2), 2.5);
        assert_eq!(regularization(&single(vec![1.0, -2.0]), Regularizer::L1), 3.0);
    }

    #[test]
    fn objective_decomposition() {
        let net = tiny_net();
        let x = [1.0, 2.0];
        let exact = [7.0];
        assert_eq!(total_objective(&net, [(&x[..], &exact[..])], &mse()).unwrap(), 0.0);

        let cfg = LossConfig { lambda: 1e-4, ..mse() };
        let reg = regularization(&net, Regularizer::L2);
        let j = total_objective(&net, [(&x[..], &exact[..])], &cfg).unwrap();
        assert!((j - 1e-4 * reg).abs() < 1e-15);

        // per-sample L2 losses 2.5 and 0.5 -> mean 1.5
        let id = Network::new(
            vec![Layer::new(2, 2, vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0]).unwrap()],
            Activation::Identity,
            1.0,
        )
        .unwrap();
        let (x1, y1) = ([1.0, 3.0], [0.0, 1.0]);
        let (x2, y2) = ([1.0, 0.0], [0.0, 0.0]);
        let j = total_objective(&id, [(&x1[..], &y1[..]), (&x2[..], &y2[..])], &mse()).unwrap();
        assert_eq!(j, 1.5);

        let empty: [(&[f64], &[f64]); 0] = [];
        assert!(total_objective(&id, empty, &mse()).is_err());
    }

    #[test]
    fn backward_hand_fixture() {
        let net = tiny_net();
        let (_, cache) = forward(&net, &[1.0, 2.0]).unwrap();
        let g = backward(&net, &cache, &[5.0], &mse()).unwrap();
        assert_eq!(g.biases[1], vec![4.0]);
        assert_eq!(g.weights[1], vec![12.0]);
        assert_eq!(g.weights[0], vec![8.0, 16.0]);
        assert_eq!(g.biases[0], vec![8.0]);
    }

    #[test]
    fn backward_exact_fit_is_zero_or_pure_penalty() {
        let net = tiny_net();
        let (_, cache) = forward(&net, &[1.0, 2.0]).unwrap();
        let g = backward(&net, &cache, &[7.0], &mse()).unwrap();
        assert!(g.slices().all(|s| s.iter().all(|v| *v == 0.0)));

        let cfg = LossConfig { lambda: 0.01, ..mse() };
        let g = backward(&net, &cache, &[7.0], &cfg).unwrap();
        for (k, layer) in net.layers().iter().enumerate() {
            for (gw, w) in g.weights[k].iter().zip(&layer.weights) {
                assert!((gw - 0.01 * w).abs() < 1e-15);
            }
            assert!(g.biases[k].iter().all(|b| *b == 0.0));
        }
    }

    #[test]
    fn backward_rejects_mismatched_cache() {
        let net = tiny_net();
        let (_, cache) = forward(&net, &[1.0, 2.0]).unwrap();
        let other = Network::new(
            vec![Layer::zeros(3, 2).unwrap(), Layer::zeros(1, 3).unwrap()],
            Activation::Identity,
            1.0,
        )
        .unwrap();
        assert!(backward(&other, &cache, &[1.0], &mse()).is_err());
        assert!(backward(&net, &cache, &[1.0, 2.0], &mse()).is_err());
    }

    #[test]
    fn batch_of_one_matches_backward_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Network::xavier(&[19, 16, 8, 4], Activation::Identity, 1.0, &mut rng).unwrap();
        let x: Vec<f64> = (0..19).map(|i| (i as f64 * 0.37).sin()).collect();
        let y = [0.1, -0.2, 0.3, 0.4];
        let cfg = LossConfig::default();
        let (_, cache) = forward(&net, &x).unwrap();
        let single = backward(&net, &cache, &y, &cfg).unwrap();
        let mut ws = BatchWorkspace::new(&net);
        let (_, batched) = ws.mean_gradients(&net, [(&x[..], &y[..])], &cfg).unwrap();
        assert_eq!(&single, batched);
    }

    fn random_sample(rng: &mut ChaCha8Rng, n_in: usize, n_out: usize) -> (Vec<f64>, Vec<f64>) {
        let x = (0..n_in).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = (0..n_out).map(|_| rng.random_range(-1.0..1.0)).collect();
        (x, y)
    }

    #[test]
    fn gradient_check_against_extended_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for norm in [LossNorm::L2, LossNorm::L1] {
            for regularizer in [Regularizer::L2, Regularizer::L1] {
                let net =
                    Network::xavier(&[19, 32, 32, 4], Activation::Identity, 1.0, &mut rng).unwrap();
                let (x, y) = random_sample(&mut rng, 19, 4);
                let cfg = LossConfig {
                    norm,
                    lambda: 1e-2,
                    regularizer,
                };
                let err = gradient_check_extended(&net, &x, &y, &cfg, 1e-5).unwrap();
                assert!(err <= 1e-6, "{norm:?}/{regularizer:?}: {err}");
            }
        }
    }

    #[test]
    fn gradient_check_double_precision() {
        // Plain f64 differences bottom out near 1e-11 absolute, so entries around
        // 1e-7 can only be resolved to ~1e-4 relative.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = Network::xavier(&[19, 32, 32, 4], Activation::Identity, 1.0, &mut rng).unwrap();
        let (x, y) = random_sample(&mut rng, 19, 4);
        let err = gradient_check(&net, &x, &y, &LossConfig::default(), 1e-5).unwrap();
        assert!(err <= 1e-4, "{err}");
        assert!(gradient_check(&net, &x, &y, &LossConfig::default(), 0.0).is_err());
    }

    #[test]
    fn gradient_check_catches_sign_flip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = Network::xavier(&[19, 32, 32, 4], Activation::Identity, 1.0, &mut rng).unwrap();
        let (x, y) = random_sample(&mut rng, 19, 4);
        let cfg = LossConfig::default();
        let (_, cache) = forward(&net, &x).unwrap();
        let mut analytic = backward(&net, &cache, &y, &cfg).unwrap();
        let numeric = numerical_gradients(&net, &x, &y, &cfg, 1e-5).unwrap();
        let k = analytic.weights[1]
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map(|(i, _)| i)
            .unwrap();
        analytic.weights[1][k] = -analytic.weights[1][k];
        assert!(max_relative_error(&analytic, &numeric).unwrap() > 1e-2);
    }

    #[test]
    fn gradient_check_zero_network() {
        let net = Network::new(
            vec![Layer::zeros(3, 4).unwrap(), Layer::zeros(2, 3).unwrap()],
            Activation::Identity,
            1.0,
        )
        .unwrap();
        let err = gradient_check(&net, &[0.0; 4], &[0.0; 2], &mse(), 1e-5).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn xavier_bounds_and_determinism() {
        let mut a = ChaCha8Rng::seed_from_u64(42);
        let mut b = ChaCha8Rng::seed_from_u64(42);
        let la = xavier_init(4, 2, &mut a).unwrap();
        let lb = xavier_init(4, 2, &mut b).unwrap();
        assert_eq!(la, lb);
        assert!(la.weights.iter().all(|w| w.abs() <= 1.0));
        assert!(la.biases.iter().all(|b| *b == 0.0));
        assert!(xavier_init(0, 3, &mut a).is_err());
    }

    #[test]
    fn xavier_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let l = xavier_init(64, 64, &mut rng).unwrap();
        let n = l.weights.len() as f64;
        let mean = l.weights.iter().sum::<f64>() / n;
        let var = l.weights.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / n;
        let expected = 2.0 / 128.0;
        assert!((var - expected).abs() <= 0.25 * expected, "{var}");
    }

    #[test]
    fn network_validation() {
        assert!(Network::new(vec![], Activation::Identity, 1.0).is_err());
        assert!(Network::new(
            vec![Layer::zeros(3, 2).unwrap(), Layer::zeros(1, 4).unwrap()],
            Activation::Identity,
            1.0
        )
        .is_err());
        assert!(Layer::new(1, 2, vec![1.0, f64::NAN], vec![0.0]).is_err());
        assert!(Layer::new(1, 2, vec![1.0], vec![0.0]).is_err());
    }

    proptest! {
        #[test]
        fn elu_is_monotone_and_bounded(a in -50.0f64..50.0, b in -50.0f64..50.0, alpha in 0.1f64..3.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let (ea, eb) = (elu(lo, alpha).unwrap(), elu(hi, alpha).unwrap());
            prop_assert!(ea <= eb);
            prop_assert!(ea >= -alpha);
        }

        #[test]
        fn elu_continuous_at_zero(eps in 1e-12f64..1e-6) {
            let gap = (elu(eps, 1.0).unwrap() - elu(-eps, 1.0).unwrap()).abs();
            prop_assert!(gap <= 2.0 * eps + 1e-18);
        }

        #[test]
        fn l2_loss_symmetric_and_nonnegative(
            a in proptest::collection::vec(-1e3f64..1e3, 1..8),
            shift in -10.0f64..10.0,
        ) {
            let b: Vec<f64> = a.iter().map(|v| v + shift).collect();
            let ab = loss(&a, &b, LossNorm::L2).unwrap();
            let ba = loss(&b, &a, LossNorm::L2).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(loss(&a, &a, LossNorm::L1).unwrap(), 0.0);
        }

        #[test]
        fn backward_shapes_follow_layers(
            widths in proptest::collection::vec(1usize..9, 2..7),
            seed in any::<u64>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let net = Network::xavier(&widths, Activation::Identity, 1.0, &mut rng).unwrap();
            let x = vec![0.3; widths[0]];
            let y = vec![0.1; *widths.last().unwrap()];
            let (y1, cache) = forward(&net, &x).unwrap();
            let (y2, _) = forward(&net, &x).unwrap();
            prop_assert_eq!(y1.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                            y2.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            let g = backward(&net, &cache, &y, &LossConfig::default()).unwrap();
            for (k, l) in net.layers().iter().enumerate() {
                prop_assert_eq!(g.weights[k].len(), l.rows() * l.cols());
                prop_assert_eq!(g.biases[k].len(), l.rows());
            }
        }
    }
}
