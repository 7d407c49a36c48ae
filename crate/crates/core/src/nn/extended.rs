//! Central finite differences evaluated in double-double arithmetic.
//!
//! In plain `f64` the difference quotient `(J(θ+h) − J(θ−h)) / 2h` carries an
//! absolute rounding error of roughly `ε·|J| / h ≈ 1e-11` at `h = 1e-5`, which
//! swamps any gradient entry below ~1e-5 once a relative comparison is made.
//! Evaluating the objective with ~32 significant digits removes that floor and
//! leaves only the `O(h²)` truncation error of the central scheme.
//!
//! The forward pass here is written independently of the `f64` code path.

use super::{Activation, Gradients, LossConfig, LossNorm, Network, Regularizer};
use crate::error::{Error, Result};

/// Unevaluated sum `hi + lo` with `|lo| <= ulp(hi) / 2`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Dd {
    hi: f64,
    lo: f64,
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl Dd {
    const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };
    const ONE: Dd = Dd { hi: 1.0, lo: 0.0 };
    const LN2: Dd = Dd {
        hi: std::f64::consts::LN_2,
        lo: 2.319_046_813_846_299_6e-17,
    };

    fn from(v: f64) -> Self {
        Dd { hi: v, lo: 0.0 }
    }

    fn add(self, o: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, o.hi);
        let (t, f) = two_sum(self.lo, o.lo);
        let (s, e) = quick_two_sum(s, e + t);
        let (hi, lo) = quick_two_sum(s, e + f);
        Dd { hi, lo }
    }

    fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }

    fn sub(self, o: Dd) -> Dd {
        self.add(o.neg())
    }

    fn mul(self, o: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, o.hi);
        let e = e + (self.hi * o.lo + self.lo * o.hi);
        let (hi, lo) = quick_two_sum(p, e);
        Dd { hi, lo }
    }

    fn mul_f64(self, b: f64) -> Dd {
        self.mul(Dd::from(b))
    }

    fn div_f64(self, b: f64) -> Dd {
        let q1 = self.hi / b;
        let r = self.sub(Dd::from(q1).mul_f64(b));
        let q2 = r.hi / b;
        let r = r.sub(Dd::from(q2).mul_f64(b));
        let q3 = r.hi / b;
        let (hi, lo) = quick_two_sum(q1, q2);
        Dd { hi, lo }.add(Dd::from(q3))
    }

    fn ldexp(self, k: i32) -> Dd {
        let s = 2f64.powi(k);
        Dd {
            hi: self.hi * s,
            lo: self.lo * s,
        }
    }

    fn abs(self) -> Dd {
        if self.hi < 0.0 {
            self.neg()
        } else {
            self
        }
    }

    fn is_negative(self) -> bool {
        self.hi < 0.0 || (self.hi == 0.0 && self.lo < 0.0)
    }

    /// `e^x` by reduction `x = k ln2 + r`, Taylor series on `r / 2^10`, then squaring.
    fn exp(self) -> Dd {
        if self.hi < -745.0 {
            return Dd::ZERO;
        }
        let k = (self.hi / std::f64::consts::LN_2).round();
        let r = self.sub(Dd::LN2.mul_f64(k)).ldexp(-10);
        let mut term = Dd::ONE;
        let mut sum = Dd::ONE;
        for n in 1..=20 {
            term = term.mul(r).div_f64(n as f64);
            sum = sum.add(term);
            if term.hi.abs() < 1e-36 {
                break;
            }
        }
        for _ in 0..10 {
            sum = sum.mul(sum);
        }
        sum.ldexp(k as i32)
    }

    fn to_f64(self) -> f64 {
        self.hi + self.lo
    }
}

fn dd_activate(act: Activation, alpha: f64, z: Dd) -> Dd {
    match act {
        Activation::Identity => z,
        Activation::Elu => {
            if z.is_negative() {
                z.exp().sub(Dd::ONE).mul_f64(alpha)
            } else {
                z
            }
        }
    }
}

struct DdState {
    /// `z^(k)` per layer.
    pre: Vec<Vec<Dd>>,
    /// `h^(k)` per layer, index 0 is the input.
    act: Vec<Vec<Dd>>,
    penalty: Dd,
}

fn dd_affine(w: &[Dd], b: &[Dd], cols: usize, input: &[Dd]) -> Vec<Dd> {
    b.iter()
        .enumerate()
        .map(|(r, bias)| {
            w[r * cols..(r + 1) * cols]
                .iter()
                .zip(input)
                .fold(*bias, |acc, (wi, xi)| acc.add(wi.mul(*xi)))
        })
        .collect()
}

struct DdNet<'a> {
    net: &'a Network,
    weights: Vec<Vec<Dd>>,
    biases: Vec<Vec<Dd>>,
}

impl<'a> DdNet<'a> {
    fn new(net: &'a Network) -> Self {
        Self {
            net,
            weights: net
                .layers()
                .iter()
                .map(|l| l.weights.iter().map(|v| Dd::from(*v)).collect())
                .collect(),
            biases: net
                .layers()
                .iter()
                .map(|l| l.biases.iter().map(|v| Dd::from(*v)).collect())
                .collect(),
        }
    }

    fn activation(&self, k: usize) -> Activation {
        if k + 1 == self.net.layers().len() {
            self.net.output_activation()
        } else {
            Activation::Elu
        }
    }

    fn penalty_term(&self, w: Dd, kind: Regularizer) -> Dd {
        match kind {
            Regularizer::L2 => w.mul(w).mul_f64(0.5),
            Regularizer::L1 => w.abs(),
        }
    }

    fn full_state(&self, x: &[f64], cfg: &LossConfig) -> DdState {
        let mut act = vec![x.iter().map(|v| Dd::from(*v)).collect::<Vec<_>>()];
        let mut pre = Vec::new();
        for (k, layer) in self.net.layers().iter().enumerate() {
            let z = dd_affine(&self.weights[k], &self.biases[k], layer.cols(), &act[k]);
            let h = z
                .iter()
                .map(|v| dd_activate(self.activation(k), self.net.alpha(), *v))
                .collect();
            pre.push(z);
            act.push(h);
        }
        let penalty = self
            .weights
            .iter()
            .flatten()
            .fold(Dd::ZERO, |acc, w| acc.add(self.penalty_term(*w, cfg.regularizer)));
        DdState { pre, act, penalty }
    }

    /// Objective after replacing layer `k`'s pre-activation with `z` and propagating upward.
    fn objective_from(
        &self,
        k: usize,
        mut z: Vec<Dd>,
        penalty: Dd,
        y: &[f64],
        cfg: &LossConfig,
    ) -> Dd {
        let layers = self.net.layers();
        let mut k = k;
        let out = loop {
            let h: Vec<Dd> = z
                .iter()
                .map(|v| dd_activate(self.activation(k), self.net.alpha(), *v))
                .collect();
            if k + 1 == layers.len() {
                break h;
            }
            k += 1;
            z = dd_affine(&self.weights[k], &self.biases[k], layers[k].cols(), &h);
        };
        let sum = out.iter().zip(y).fold(Dd::ZERO, |acc, (a, b)| {
            let r = a.sub(Dd::from(*b));
            acc.add(match cfg.norm {
                LossNorm::L2 => r.mul(r),
                LossNorm::L1 => r.abs(),
            })
        });
        let data = sum.div_f64(y.len() as f64);
        if cfg.lambda == 0.0 {
            data
        } else {
            data.add(penalty.mul_f64(cfg.lambda))
        }
    }
}

/// Central finite-difference gradient with the objective evaluated in double-double precision.
pub fn numerical_gradients_extended(
    net: &Network,
    x: &[f64],
    y: &[f64],
    cfg: &LossConfig,
    h: f64,
) -> Result<Gradients> {
    cfg.validate()?;
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step must be > 0, got {h}")));
    }
    if x.len() != net.input_width() || y.len() != net.output_width() {
        return Err(Error::Shape("sample does not match network widths".into()));
    }
    let dd = DdNet::new(net);
    let base = dd.full_state(x, cfg);
    let step = Dd::from(h);
    let two_h = 2.0 * h;
    let mut out = net.zero_gradients();

    for (k, layer) in net.layers().iter().enumerate() {
        let cols = layer.cols();
        for i in 0..layer.weights.len() {
            let (r, c) = (i / cols, i % cols);
            let w = dd.weights[k][i];
            let eval = |delta: Dd| {
                let mut z = base.pre[k].clone();
                z[r] = z[r].add(delta.mul(base.act[k][c]));
                let penalty = base
                    .penalty
                    .sub(dd.penalty_term(w, cfg.regularizer))
                    .add(dd.penalty_term(w.add(delta), cfg.regularizer));
                dd.objective_from(k, z, penalty, y, cfg)
            };
            let diff = eval(step).sub(eval(step.neg()));
            out.weights[k][i] = diff.div_f64(two_h).to_f64();
        }
        for r in 0..layer.biases.len() {
            let eval = |delta: Dd| {
                let mut z = base.pre[k].clone();
                z[r] = z[r].add(delta);
                dd.objective_from(k, z, base.penalty, y, cfg)
            };
            let diff = eval(step).sub(eval(step.neg()));
            out.biases[k][r] = diff.div_f64(two_h).to_f64();
        }
    }
    Ok(out)
}

/// [`super::gradient_check`] against the double-double finite-difference oracle.
pub fn gradient_check_extended(
    net: &Network,
    x: &[f64],
    y: &[f64],
    cfg: &LossConfig,
    h: f64,
) -> Result<f64> {
    let (_, cache) = super::forward(net, x)?;
    let analytic = super::backward(net, &cache, y, cfg)?;
    let numeric = numerical_gradients_extended(net, x, y, cfg, h)?;
    super::max_relative_error(&analytic, &numeric)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dd_exp_matches_f64() {
        for x in [-20.0, -3.5, -1.0, -1e-3, 0.0, 0.7, 5.0] {
            let e = Dd::from(x).exp().to_f64();
            assert!((e - f64::exp(x)).abs() <= 2.0 * f64::EPSILON * f64::exp(x), "{x}");
        }
    }

    #[test]
    fn dd_exp_is_more_accurate_than_f64() {
        // e^-1 = 0.36787944117144232159552377016146087...
        let e = Dd::from(-1.0).exp();
        let exact = Dd {
            hi: 0.36787944117144233,
            lo: -1.2428753672788363e-17,
        };
        let err = e.sub(exact).to_f64().abs();
        assert!(err < 1e-28, "{err:e}");
    }

    #[test]
    fn dd_division() {
        let third = Dd::ONE.div_f64(3.0);
        assert!(third.mul_f64(3.0).sub(Dd::ONE).to_f64().abs() < 1e-31);
    }
}
