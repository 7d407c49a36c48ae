//! Eulerian space-time averaging.
//!
//! Each output value is the mean of the input over a centered cubic box of side
//! `l` and the trailing time window `[t − τ, t]`. Boxes tile the grid without
//! overlap, so the output grid is the input coarsened by `l / dx` per spatial axis
//! and `τ / dt` in time. Partial boxes at the upper edges are dropped.
//!
//! [`average4d`] sums each block directly; [`average4d_conv`] evaluates the same
//! quantity as a strided discrete convolution with a normalized kernel and exists
//! to cross-check the first.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Field4D, SurfaceSeries};

const SPACING_TOL: f64 = 1e-9;

/// Averaging length scale `l` (m) and time scale `tau` (s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AvgSpec {
    pub l: f64,
    pub tau: f64,
}

impl AvgSpec {
    pub fn new(l: f64, tau: f64) -> Result<Self> {
        if !(l > 0.0 && l.is_finite() && tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "averaging scales must be positive, got l={l}, tau={tau}"
            )));
        }
        Ok(Self { l, tau })
    }

    /// Spatial box width in cells. Must be an odd integer so the box has a center cell.
    pub fn space_cells(&self, dx: f64) -> Result<usize> {
        let ratio = self.l / dx;
        let k = ratio.round();
        if k < 1.0 || (ratio - k).abs() > SPACING_TOL * ratio || k as usize % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "averaging length {} m is not an odd multiple of dx = {} m (ratio {ratio})",
                self.l, dx
            )));
        }
        Ok(k as usize)
    }

    /// Time window length in frames.
    pub fn time_frames(&self, dt: f64) -> Result<usize> {
        let ratio = self.tau / dt;
        let k = ratio.round();
        if k < 1.0 || (ratio - k).abs() > SPACING_TOL * ratio {
            return Err(Error::InvalidArgument(format!(
                "averaging time {} s is not a positive multiple of dt = {} s (ratio {ratio})",
                self.tau, dt
            )));
        }
        Ok(k as usize)
    }
}

/// Convolution kernel over `(x, y, z, t)` offsets.
///
/// Spatial extents are odd and centered; the time extent is trailing, i.e. tap `s`
/// reads frame `t − s`.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel4D {
    extents: [usize; 4],
    /// x-fastest, same layout as [`Field4D`].
    weights: Vec<f64>,
}

impl Kernel4D {
    pub fn new(extents: [usize; 4], weights: Vec<f64>) -> Result<Self> {
        if extents.iter().any(|e| *e == 0) {
            return Err(Error::InvalidArgument(format!("kernel extents must be >= 1, got {extents:?}")));
        }
        if extents[..3].iter().any(|e| e % 2 == 0) {
            return Err(Error::InvalidArgument(format!(
                "spatial kernel extents must be odd, got {extents:?}"
            )));
        }
        if weights.len() != extents.iter().product::<usize>() {
            return Err(Error::Shape("kernel weight count does not match extents".into()));
        }
        Ok(Self { extents, weights })
    }

    /// Uniform weights summing to one.
    pub fn boxed(extents: [usize; 4]) -> Result<Self> {
        let n: usize = extents.iter().product();
        Self::new(extents, vec![1.0 / n as f64; n])
    }

    pub fn extents(&self) -> [usize; 4] {
        self.extents
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }
}

fn window_cells(field: &Field4D, spec: &AvgSpec, with_z: bool) -> Result<[usize; 4]> {
    let ks = spec.space_cells(field.dx())?;
    let kt = spec.time_frames(field.dt())?;
    let k = [ks, ks, if with_z { ks } else { 1 }, kt];
    let dims = field.dims();
    for axis in 0..4 {
        if k[axis] > dims[axis] {
            return Err(Error::InvalidArgument(format!(
                "averaging window of {} cells exceeds `{}` extent {} along axis {}",
                k[axis],
                field.name(),
                dims[axis],
                ["x", "y", "z", "t"][axis]
            )));
        }
    }
    Ok(k)
}

fn coarse_dims(dims: [usize; 4], k: [usize; 4]) -> [usize; 4] {
    [dims[0] / k[0], dims[1] / k[1], dims[2] / k[2], dims[3] / k[3]]
}

fn block_mean(field: &Field4D, k: [usize; 4]) -> Result<Field4D> {
    let out_dims = coarse_dims(field.dims(), k);
    let [ox, oy, oz, ot] = out_dims;
    let count = k.iter().product::<usize>() as f64;
    let mut values = Vec::with_capacity(ox * oy * oz * ot);
    for bt in 0..ot {
        for bz in 0..oz {
            for by in 0..oy {
                for bx in 0..ox {
                    let mut sum = 0.0;
                    for t in bt * k[3]..(bt + 1) * k[3] {
                        for z in bz * k[2]..(bz + 1) * k[2] {
                            for y in by * k[1]..(by + 1) * k[1] {
                                let row = field.index(bx * k[0], y, z, t);
                                sum += field.values()[row..row + k[0]].iter().sum::<f64>();
                            }
                        }
                    }
                    values.push(sum / count);
                }
            }
        }
    }
    Field4D::new(
        field.name(),
        out_dims,
        field.dx() * k[0] as f64,
        field.dt() * k[3] as f64,
        values,
    )
}

/// Strided convolution: output cell `b` sits at spatial center `b·k + (k−1)/2` and at
/// the last frame of its window.
fn strided_convolution(field: &Field4D, kernel: &Kernel4D, k: [usize; 4]) -> Result<Field4D> {
    let ke = kernel.extents();
    let half = [(ke[0] - 1) / 2, (ke[1] - 1) / 2, (ke[2] - 1) / 2];
    let out_dims = coarse_dims(field.dims(), k);
    let [ox, oy, oz, ot] = out_dims;
    let mut values = vec![0.0; ox * oy * oz * ot];
    for bt in 0..ot {
        let tc = bt * k[3] + k[3] - 1;
        for bz in 0..oz {
            let zc = bz * k[2] + (k[2] - 1) / 2;
            for by in 0..oy {
                let yc = by * k[1] + (k[1] - 1) / 2;
                for bx in 0..ox {
                    let xc = bx * k[0] + (k[0] - 1) / 2;
                    let mut acc = 0.0;
                    let mut w = kernel.weights().iter();
                    for s in 0..ke[3] {
                        for dz in 0..ke[2] {
                            for dy in 0..ke[1] {
                                for dx in 0..ke[0] {
                                    let g = w.next().copied().unwrap_or(0.0);
                                    // f(x − x') with x' running over centered offsets.
                                    let x = xc + half[0] - dx;
                                    let y = yc + half[1] - dy;
                                    let z = zc + half[2] - dz;
                                    acc += g * field.get(x, y, z, tc - s);
                                }
                            }
                        }
                    }
                    values[bx + ox * (by + oy * (bz + oz * bt))] = acc;
                }
            }
        }
    }
    Field4D::new(
        field.name(),
        out_dims,
        field.dx() * k[0] as f64,
        field.dt() * k[3] as f64,
        values,
    )
}

/// Space-time block average of a volume field.
pub fn average4d(field: &Field4D, spec: &AvgSpec) -> Result<Field4D> {
    let k = window_cells(field, spec, true)?;
    block_mean(field, k)
}

/// [`average4d`] computed as a convolution with the normalized box kernel.
pub fn average4d_conv(field: &Field4D, spec: &AvgSpec) -> Result<Field4D> {
    let k = window_cells(field, spec, true)?;
    strided_convolution(field, &Kernel4D::boxed(k)?, k)
}

/// Convolution with an arbitrary kernel, sampled on the same coarse grid as
/// [`average4d`]. Kernel extents must match the averaging window.
pub fn convolve4d(field: &Field4D, spec: &AvgSpec, kernel: &Kernel4D) -> Result<Field4D> {
    let k = window_cells(field, spec, true)?;
    if kernel.extents() != k {
        return Err(Error::Shape(format!(
            "kernel extents {:?} differ from averaging window {k:?}",
            kernel.extents()
        )));
    }
    strided_convolution(field, kernel, k)
}

/// Space-time average over the heated surface (no z extent).
pub fn average_surface(series: &SurfaceSeries, spec: &AvgSpec) -> Result<SurfaceSeries> {
    let k = window_cells(series.as_field(), spec, false)?;
    SurfaceSeries::from_field(block_mean(series.as_field(), k)?)
}

/// Which phase the color function marks with 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorConvention {
    /// `ϕ = 1` in liquid, so `α = 1 − ⟨ϕ⟩`.
    #[default]
    Liquid,
    /// `ϕ = 1` in vapor, so `α = ⟨ϕ⟩`.
    Vapor,
}

/// Void fraction from an averaged color function.
pub fn void_fraction(color: &Field4D, convention: ColorConvention) -> Result<Field4D> {
    const TOL: f64 = 1e-9;
    if let Some(v) = color
        .values()
        .iter()
        .find(|v| **v < -TOL || **v > 1.0 + TOL)
    {
        return Err(Error::InvalidArgument(format!(
            "color function `{}` has value {v} outside [0, 1]",
            color.name()
        )));
    }
    color.map("alpha", |phi| {
        let phi = phi.clamp(0.0, 1.0);
        match convention {
            ColorConvention::Liquid => 1.0 - phi,
            ColorConvention::Vapor => phi,
        }
    })
}
