//! Seeded synthetic boiling cases.
//!
//! Nucleation sites are scattered uniformly on the heater. Surface quantities follow
//! a fixed closure of the local site density `N`, activation temperature `T_act`
//! and applied flux `q`:
//!
//! ```text
//! T_sup  = c1 · q^0.25 / (1 + β N / N_ref)
//! q_evap = min(c2 · N · max(T_sup − T_act, 0)^3, q)
//! q_single = q − q_evap
//! ```
//!
//! each then multiplied by `1 + σ η` with `η` a standard normal truncated to
//! `|η| ≤ 3`. The closure is not meant to be physical; it is a known nonlinear
//! target for the learning pipeline.
//!
//! Vapor is a thresholded sum of Gaussian blobs above active sites (`T_sup > T_act`
//! at the site), rising over the frames. Velocity, pressure, enthalpy and eddy
//! viscosity are smooth random fields plus terms driven by the same blob sum.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::average::{average4d, average_surface, void_fraction, AvgSpec, ColorConvention};
use crate::error::{Error, Result};
use crate::features::{extract_near_wall, phase_mix, Dataset, Region, SurfaceInputs, VolumeInputs};
use crate::field::{Field4D, SurfaceSeries};

const RHO_LIQUID: f64 = 958.4;
const RHO_VAPOR: f64 = 0.598;
const H_LIQUID: f64 = 4.19e5;
const H_VAPOR: f64 = 2.676e6;
const P_SAT: f64 = 101_325.0;
const GRAVITY: f64 = 9.81;
const MU_T_SCALE: f64 = 1e-4;
const NOISE_CLIP: f64 = 3.0;
const FOURIER_MODES: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    /// Applied heat flux (W/m²).
    pub q_total: f64,
    /// Fine grid `(nx, ny, nz, nt)`.
    pub grid: [usize; 4],
    pub dx: f64,
    pub dt: f64,
    /// Site count; defaults to `site_density_ref · area · q_total / 1 MW/m²`.
    pub n_sites: Option<usize>,
    /// Mean site density at 1 MW/m² (sites/m²), also the `N_ref` of the closure.
    pub site_density_ref: f64,
    /// Activation superheat interval (K).
    pub t_act_range: [f64; 2],
    pub noise_sigma: f64,
    pub c1: f64,
    pub c2: f64,
    /// Strength `β` of the site-proximity cooling.
    pub proximity: f64,
    /// Width of the kernel turning site positions into density maps (m).
    pub kernel_width: f64,
    /// Gaussian radius of a vapor blob (m).
    pub bubble_radius: f64,
    /// Averaging window the grid must accommodate.
    pub window: AvgSpec,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            q_total: 1e6,
            grid: [250, 250, 15, 4],
            dx: 5e-5,
            dt: 0.025,
            n_sites: None,
            site_density_ref: 2.56e6,
            t_act_range: [10.0, 18.0],
            noise_sigma: 0.05,
            c1: 0.75,
            c2: 1.8e-3,
            proximity: 0.3,
            kernel_width: 4e-4,
            bubble_radius: 1.5e-4,
            window: AvgSpec {
                l: 2.5e-4,
                tau: 0.1,
            },
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let arg = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.q_total >= 0.0 && self.q_total.is_finite()) {
            return arg(format!("q_total must be >= 0, got {}", self.q_total));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma < 1.0 / NOISE_CLIP) {
            return arg(format!("noise_sigma must lie in [0, 1/3), got {}", self.noise_sigma));
        }
        let [lo, hi] = self.t_act_range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return arg(format!("invalid activation range {:?}", self.t_act_range));
        }
        let positive = [
            self.dx,
            self.dt,
            self.site_density_ref,
            self.c1,
            self.c2,
            self.kernel_width,
            self.bubble_radius,
        ];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) || !(self.proximity >= 0.0) {
            return arg("spacings and closure constants must be positive".into());
        }
        let ks = self.window.space_cells(self.dx)?;
        let kt = self.window.time_frames(self.dt)?;
        // central differences need three averaged cells along each spatial axis
        let need = [3 * ks, 3 * ks, 3 * ks, kt];
        if self.grid.iter().zip(need).any(|(g, k)| *g < k) {
            return arg(format!(
                "grid {:?} is smaller than the averaging window {need:?}",
                self.grid
            ));
        }
        Ok(())
    }

    fn area(&self) -> f64 {
        self.grid[0] as f64 * self.dx * self.grid[1] as f64 * self.dx
    }

    pub fn site_count(&self) -> usize {
        self.n_sites
            .unwrap_or_else(|| (self.site_density_ref * self.area() * self.q_total / 1e6).round() as usize)
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

/// A nucleation site on the heater.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Site {
    pub x: f64,
    pub y: f64,
    /// Activation superheat (K).
    pub t_act: f64,
    /// Position in the bubble cycle, in `[0, 1)`.
    pub phase: f64,
}

pub fn draw_sites(cfg: &GenConfig) -> Vec<Site> {
    let mut rng = cfg.rng(0);
    let (lx, ly) = (cfg.grid[0] as f64 * cfg.dx, cfg.grid[1] as f64 * cfg.dx);
    let [lo, hi] = cfg.t_act_range;
    (0..cfg.site_count())
        .map(|_| Site {
            x: rng.random::<f64>() * lx,
            y: rng.random::<f64>() * ly,
            t_act: lo + rng.random::<f64>() * (hi - lo),
            phase: rng.random(),
        })
        .collect()
}

/// Parameters and bookkeeping written next to the field files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub q_total: f64,
    pub seed: u64,
    pub c1: f64,
    pub c2: f64,
    pub noise_sigma: f64,
    pub n_sites: usize,
    pub files: Vec<String>,
}

impl Manifest {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n").map_err(|e| Error::io(path, e))
    }
}

pub const MANIFEST: &str = "manifest.json";

/// Fine-grid output of one case.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseBundle {
    pub manifest: Manifest,
    pub phi: Field4D,
    pub p: Field4D,
    pub u: Field4D,
    pub v: Field4D,
    pub w: Field4D,
    pub rho: Field4D,
    pub h: Field4D,
    pub mu_t: Field4D,
    pub q_evap: SurfaceSeries,
    pub q_single: SurfaceSeries,
    pub t_sup: SurfaceSeries,
    pub n_site: SurfaceSeries,
    pub t_act: SurfaceSeries,
    pub q_total: SurfaceSeries,
}

const VOLUME_NAMES: [&str; 8] = ["phi", "p", "u", "v", "w", "rho", "h", "mu_t"];
const SURFACE_NAMES: [&str; 6] = ["q_evap", "q_single", "t_sup", "n_site", "t_act", "q_total"];

fn file_list(volume: &[&str]) -> Vec<String> {
    volume
        .iter()
        .chain(SURFACE_NAMES.iter())
        .map(|n| format!("{n}.blfd"))
        .collect()
}

/// Smooth zero-mean random field with unit variance: a sum of plane waves.
struct FourierField {
    /// Per mode: per-axis phase tables as `(cos, sin)` pairs.
    modes: Vec<[Vec<(f64, f64)>; 4]>,
    amp: f64,
}

impl FourierField {
    fn new(rng: &mut ChaCha8Rng, dims: [usize; 4], dx: f64, dt: f64) -> Self {
        let modes = (0..FOURIER_MODES)
            .map(|_| {
                // wavelengths between 0.5 mm and 4 mm, slow drift in time
                let lambda = 5e-4 * 8f64.powf(rng.random::<f64>());
                let k = 2.0 * std::f64::consts::PI / lambda;
                let dir: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(rng));
                let norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt().max(1e-12);
                let omega = 2.0 * std::f64::consts::PI * rng.random_range(0.5..2.0);
                let phase0 = 2.0 * std::f64::consts::PI * rng.random::<f64>();
                let rate = [k * dir[0] / norm, k * dir[1] / norm, k * dir[2] / norm, omega];
                std::array::from_fn(|a| {
                    let step = if a == 3 { dt } else { dx };
                    (0..dims[a])
                        .map(|n| {
                            let mut arg = rate[a] * (n as f64 + 0.5) * step;
                            if a == 3 {
                                arg += phase0;
                            }
                            (arg.cos(), arg.sin())
                        })
                        .collect()
                })
            })
            .collect();
        Self {
            modes,
            amp: (2.0 / FOURIER_MODES as f64).sqrt(),
        }
    }

    fn at(&self, i: usize, j: usize, k: usize, t: usize) -> f64 {
        let mut sum = 0.0;
        for m in &self.modes {
            let mul = |(a, b): (f64, f64), (c, d): (f64, f64)| (a * c - b * d, a * d + b * c);
            let (re, _) = mul(mul(m[0][i], m[1][j]), mul(m[2][k], m[3][t]));
            sum += re;
        }
        self.amp * sum
    }
}

/// Adds `w(d²) ` contributions of every site to cells within `reach` of it.
fn splat(
    nx: usize,
    ny: usize,
    dx: f64,
    sites: &[Site],
    reach: f64,
    mut visit: impl FnMut(usize, usize, &Site, f64),
) {
    let cells = (reach / dx).ceil() as isize;
    for s in sites {
        let ci = (s.x / dx).floor() as isize;
        let cj = (s.y / dx).floor() as isize;
        for i in (ci - cells).max(0)..=(ci + cells).min(nx as isize - 1) {
            let x = (i as f64 + 0.5) * dx - s.x;
            for j in (cj - cells).max(0)..=(cj + cells).min(ny as isize - 1) {
                let y = (j as f64 + 0.5) * dx - s.y;
                let d2 = x * x + y * y;
                if d2 <= reach * reach {
                    visit(i as usize, j as usize, s, d2);
                }
            }
        }
    }
}

fn truncated_normal(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let eta: f64 = StandardNormal.sample(rng);
        if eta.abs() <= NOISE_CLIP {
            return eta;
        }
    }
}

/// Noise-free closure values `(T_sup, q_evap, q_single)` at one point.
pub fn closure(cfg: &GenConfig, q: f64, n_site: f64, t_act: f64) -> (f64, f64, f64) {
    let t_sup = cfg.c1 * q.powf(0.25) / (1.0 + cfg.proximity * n_site / cfg.site_density_ref);
    let excess = (t_sup - t_act).max(0.0);
    let q_evap = (cfg.c2 * n_site * excess.powi(3)).min(q);
    (t_sup, q_evap, q - q_evap)
}

pub fn generate_case(cfg: &GenConfig) -> Result<CaseBundle> {
    cfg.validate()?;
    generate_case_with_sites(cfg, &draw_sites(cfg))
}

/// Generates a case on a given site layout. Surface quantities depend only on the
/// sites, `q_total` and the noise draw.
pub fn generate_case_with_sites(cfg: &GenConfig, sites: &[Site]) -> Result<CaseBundle> {
    cfg.validate()?;
    let [nx, ny, nz, nt] = cfg.grid;
    let (dx, dt) = (cfg.dx, cfg.dt);
    let q = cfg.q_total;

    // Surface density maps.
    let sigma = cfg.kernel_width;
    let norm = 1.0 / (2.0 * std::f64::consts::PI * sigma * sigma);
    let mut density = vec![0.0; nx * ny];
    let mut weighted_t = vec![0.0; nx * ny];
    splat(nx, ny, dx, sites, 4.0 * sigma, |i, j, s, d2| {
        let k = norm * (-d2 / (2.0 * sigma * sigma)).exp();
        density[i + nx * j] += k;
        weighted_t[i + nx * j] += k * s.t_act;
    });
    let [lo, hi] = cfg.t_act_range;
    let prior = 0.1 * cfg.site_density_ref;
    let t_act_map: Vec<f64> = density
        .iter()
        .zip(&weighted_t)
        .map(|(d, wt)| (wt + prior * 0.5 * (lo + hi)) / (d + prior))
        .collect();

    // Closure with per-frame multiplicative noise.
    let mut noise = cfg.rng(2);
    let factor = |rng: &mut ChaCha8Rng| {
        if cfg.noise_sigma == 0.0 {
            1.0
        } else {
            1.0 + cfg.noise_sigma * truncated_normal(rng)
        }
    };
    let cells = nx * ny;
    let (mut t_sup, mut q_evap, mut q_single) = (
        Vec::with_capacity(cells * nt),
        Vec::with_capacity(cells * nt),
        Vec::with_capacity(cells * nt),
    );
    for _t in 0..nt {
        for c in 0..cells {
            let (ts, qe, qs) = closure(cfg, q, density[c], t_act_map[c]);
            t_sup.push(ts * factor(&mut noise));
            q_evap.push(qe * factor(&mut noise));
            q_single.push(qs * factor(&mut noise));
        }
    }
    let repeat = |map: &[f64]| map.iter().copied().cycle().take(cells * nt).collect::<Vec<_>>();
    let surf = |name: &str, values: Vec<f64>| SurfaceSeries::new(name, [nx, ny, nt], dx, dt, values);

    // Vapor blobs above active sites.
    let r = cfg.bubble_radius;
    let active: Vec<(Site, f64)> = sites
        .iter()
        .filter_map(|s| {
            let i = ((s.x / dx) as usize).min(nx - 1);
            let j = ((s.y / dx) as usize).min(ny - 1);
            let (ts, _, _) = closure(cfg, q, density[i + nx * j], t_act_map[i + nx * j]);
            let excess = ts - s.t_act;
            (excess > 0.0).then(|| (*s, (0.6 + 0.1 * excess).min(1.5)))
        })
        .collect();
    let plane = nx * ny;
    let mut blob = vec![0.0; plane * nz * nt];
    let reach = 3.5 * r;
    for t in 0..nt {
        for (s, amp) in &active {
            let cycle = (t as f64 / nt as f64 + s.phase).fract();
            let a = amp * (0.85 + 0.15 * (2.0 * std::f64::consts::PI * cycle).sin());
            let zc = r * (1.2 + 1.5 * cycle);
            splat(nx, ny, dx, std::slice::from_ref(s), reach, |i, j, _, d2| {
                for k in 0..nz {
                    let z = (k as f64 + 0.5) * dx - zc;
                    let dd = d2 + z * z;
                    if dd <= reach * reach {
                        blob[i + nx * j + plane * (k + nz * t)] += a * (-dd / (2.0 * r * r)).exp();
                    }
                }
            });
        }
    }

    let mut fields = cfg.rng(1);
    let dims = cfg.grid;
    let mut smooth = || FourierField::new(&mut fields, dims, dx, dt);
    let (bu, bv, bw, bp, bh, bm) = (smooth(), smooth(), smooth(), smooth(), smooth(), smooth());
    let idx = |i: usize, j: usize, k: usize, t: usize| i + nx * j + plane * (k + nz * t);
    let vol = |name: &str, f: &dyn Fn(usize, usize, usize, usize) -> f64| Field4D::from_fn(name, dims, dx, dt, f);

    let phi = vol("phi", &|i, j, k, t| if blob[idx(i, j, k, t)] > 0.5 { 0.0 } else { 1.0 })?;
    let vapor = |i, j, k, t| 1.0 - phi.get(i, j, k, t);
    let height = nz as f64 * dx;
    let manifest = Manifest {
        q_total: q,
        seed: cfg.seed,
        c1: cfg.c1,
        c2: cfg.c2,
        noise_sigma: cfg.noise_sigma,
        n_sites: sites.len(),
        files: file_list(&VOLUME_NAMES),
    };
    let bundle = CaseBundle {
        p: vol("p", &|i, j, k, t| {
            let z = (k as f64 + 0.5) * dx;
            P_SAT + RHO_LIQUID * GRAVITY * (height - z) + 50.0 * bp.at(i, j, k, t)
        })?,
        u: vol("u", &|i, j, k, t| 0.05 * bu.at(i, j, k, t))?,
        v: vol("v", &|i, j, k, t| 0.05 * bv.at(i, j, k, t))?,
        w: vol("w", &|i, j, k, t| 0.05 * bw.at(i, j, k, t) + 0.2 * blob[idx(i, j, k, t)])?,
        rho: vol("rho", &|i, j, k, t| {
            phase_mix(RHO_LIQUID, RHO_VAPOR, vapor(i, j, k, t)).unwrap_or(RHO_LIQUID)
        })?,
        h: vol("h", &|i, j, k, t| {
            let liquid = H_LIQUID * (1.0 + 0.01 * bh.at(i, j, k, t));
            phase_mix(liquid, H_VAPOR, vapor(i, j, k, t)).unwrap_or(liquid)
        })?,
        mu_t: vol("mu_t", &|i, j, k, t| {
            MU_T_SCALE * ((0.2 * bm.at(i, j, k, t)).exp() + 10.0 * blob[idx(i, j, k, t)])
        })?,
        phi,
        q_evap: surf("q_evap", q_evap)?,
        q_single: surf("q_single", q_single)?,
        t_sup: surf("t_sup", t_sup)?,
        n_site: surf("n_site", repeat(&density))?,
        t_act: surf("t_act", repeat(&t_act_map))?,
        q_total: surf("q_total", vec![q; cells * nt])?,
        manifest,
    };
    Ok(bundle)
}

/// One case per heat flux, seeded `base_seed + index`.
pub fn generate_suite(q_list: &[f64], base_seed: u64, template: &GenConfig) -> Result<Vec<CaseBundle>> {
    check_distinct(q_list)?;
    q_list
        .iter()
        .enumerate()
        .map(|(n, &q)| generate_case(&suite_config(template, q, base_seed, n)))
        .collect()
}

pub fn check_distinct(q_list: &[f64]) -> Result<()> {
    for (n, q) in q_list.iter().enumerate() {
        if q_list[..n].contains(q) {
            return Err(Error::InvalidArgument(format!("heat flux {q} appears twice")));
        }
    }
    Ok(())
}

/// Configuration of the `index`-th case of a suite.
pub fn suite_config(template: &GenConfig, q_total: f64, base_seed: u64, index: usize) -> GenConfig {
    GenConfig {
        q_total,
        seed: base_seed + index as u64,
        ..template.clone()
    }
}

fn read_volume(dir: &Path, name: &str) -> Result<Field4D> {
    Field4D::read_blfd(dir.join(format!("{name}.blfd")))
}

fn read_surface(dir: &Path, name: &str) -> Result<SurfaceSeries> {
    SurfaceSeries::read_blfd(dir.join(format!("{name}.blfd")))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

impl CaseBundle {
    fn surfaces(&self) -> [&SurfaceSeries; 6] {
        [&self.q_evap, &self.q_single, &self.t_sup, &self.n_site, &self.t_act, &self.q_total]
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        create_dir(dir)?;
        let volumes = [&self.phi, &self.p, &self.u, &self.v, &self.w, &self.rho, &self.h, &self.mu_t];
        for (name, f) in VOLUME_NAMES.iter().zip(volumes) {
            f.write_blfd(dir.join(format!("{name}.blfd")))?;
        }
        for (name, s) in SURFACE_NAMES.iter().zip(self.surfaces()) {
            s.write_blfd(dir.join(format!("{name}.blfd")))?;
        }
        self.manifest.write(dir.join(MANIFEST))
    }

    pub fn read(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        Ok(Self {
            manifest: Manifest::read(dir.join(MANIFEST))?,
            phi: read_volume(dir, "phi")?,
            p: read_volume(dir, "p")?,
            u: read_volume(dir, "u")?,
            v: read_volume(dir, "v")?,
            w: read_volume(dir, "w")?,
            rho: read_volume(dir, "rho")?,
            h: read_volume(dir, "h")?,
            mu_t: read_volume(dir, "mu_t")?,
            q_evap: read_surface(dir, "q_evap")?,
            q_single: read_surface(dir, "q_single")?,
            t_sup: read_surface(dir, "t_sup")?,
            n_site: read_surface(dir, "n_site")?,
            t_act: read_surface(dir, "t_act")?,
            q_total: read_surface(dir, "q_total")?,
        })
    }

    /// Space-time averages of every quantity; the color function becomes void fraction.
    pub fn average(&self, spec: &AvgSpec) -> Result<AveragedCase> {
        let alpha = void_fraction(&average4d(&self.phi, spec)?, ColorConvention::Liquid)?;
        let s = |f: &SurfaceSeries| average_surface(f, spec);
        Ok(AveragedCase {
            manifest: Manifest {
                files: file_list(&AVERAGED_VOLUME_NAMES),
                ..self.manifest.clone()
            },
            volume: VolumeInputs {
                p: average4d(&self.p, spec)?,
                u: average4d(&self.u, spec)?,
                v: average4d(&self.v, spec)?,
                w: average4d(&self.w, spec)?,
                rho: average4d(&self.rho, spec)?,
                h: average4d(&self.h, spec)?,
                mu_t: average4d(&self.mu_t, spec)?,
                alpha,
            },
            surface: SurfaceInputs {
                q_total: s(&self.q_total)?,
                n_site: s(&self.n_site)?,
                t_act: s(&self.t_act)?,
                q_evap: s(&self.q_evap)?,
                q_single: s(&self.q_single)?,
                t_sup: s(&self.t_sup)?,
            },
        })
    }
}

const AVERAGED_VOLUME_NAMES: [&str; 8] = ["alpha", "p", "u", "v", "w", "rho", "h", "mu_t"];

/// Averaged fields of one case, ready for feature extraction.
#[derive(Debug, Clone)]
pub struct AveragedCase {
    pub manifest: Manifest,
    pub volume: VolumeInputs,
    pub surface: SurfaceInputs,
}

impl AveragedCase {
    pub fn extract(&self, region: Option<Region>) -> Result<Dataset> {
        extract_near_wall(&self.volume, &self.surface, region, self.manifest.q_total)
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        create_dir(dir)?;
        let v = &self.volume;
        let volumes = [&v.alpha, &v.p, &v.u, &v.v, &v.w, &v.rho, &v.h, &v.mu_t];
        for (name, f) in AVERAGED_VOLUME_NAMES.iter().zip(volumes) {
            f.write_blfd(dir.join(format!("{name}.blfd")))?;
        }
        let s = &self.surface;
        let surfaces = [&s.q_evap, &s.q_single, &s.t_sup, &s.n_site, &s.t_act, &s.q_total];
        for (name, f) in SURFACE_NAMES.iter().zip(surfaces) {
            f.write_blfd(dir.join(format!("{name}.blfd")))?;
        }
        self.manifest.write(dir.join(MANIFEST))
    }

    pub fn read(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        Ok(Self {
            manifest: Manifest::read(dir.join(MANIFEST))?,
            volume: VolumeInputs {
                alpha: read_volume(dir, "alpha")?,
                p: read_volume(dir, "p")?,
                u: read_volume(dir, "u")?,
                v: read_volume(dir, "v")?,
                w: read_volume(dir, "w")?,
                rho: read_volume(dir, "rho")?,
                h: read_volume(dir, "h")?,
                mu_t: read_volume(dir, "mu_t")?,
            },
            surface: SurfaceInputs {
                q_total: read_surface(dir, "q_total")?,
                n_site: read_surface(dir, "n_site")?,
                t_act: read_surface(dir, "t_act")?,
                q_evap: read_surface(dir, "q_evap")?,
                q_single: read_surface(dir, "q_single")?,
                t_sup: read_surface(dir, "t_sup")?,
            },
        })
    }
}

/// Generates, averages and extracts one case without touching the disk.
pub fn case_dataset(cfg: &GenConfig, region: Option<Region>) -> Result<Dataset> {
    generate_case(cfg)?.average(&cfg.window)?.extract(region)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(q: f64, seed: u64) -> GenConfig {
        GenConfig {
            q_total: q,
            grid: [30, 30, 15, 4],
            seed,
            ..GenConfig::default()
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let a = generate_case(&small(8e5, 3)).unwrap();
        let b = generate_case(&small(8e5, 3)).unwrap();
        assert_eq!(a, b);
        let c = generate_case(&small(8e5, 4)).unwrap();
        assert_ne!(a.u, c.u);
    }

    #[test]
    fn surface_depends_only_on_sites_without_noise() {
        let mut cfg = small(1e6, 1);
        cfg.noise_sigma = 0.0;
        let sites = draw_sites(&cfg);
        let a = generate_case_with_sites(&cfg, &sites).unwrap();
        cfg.seed = 99;
        let b = generate_case_with_sites(&cfg, &sites).unwrap();
        assert_ne!(a.u, b.u);
        assert_eq!(a.q_evap, b.q_evap);
        assert_eq!(a.q_single, b.q_single);
        assert_eq!(a.t_sup, b.t_sup);
    }

    #[test]
    fn zero_flux_has_no_evaporation() {
        let b = generate_case(&small(0.0, 1)).unwrap();
        assert_eq!(b.manifest.n_sites, 0);
        assert!(b.q_evap.values().iter().all(|v| *v == 0.0));
        assert!(b.t_sup.values().iter().all(|v| *v == 0.0));
        assert!(b.phi.values().iter().all(|v| *v == 1.0));
    }

    #[test]
    fn physical_ranges_and_energy_split() {
        let mut cfg = small(1.2e6, 5);
        let noisy = generate_case(&cfg).unwrap();
        cfg.noise_sigma = 0.0;
        let clean = generate_case(&cfg).unwrap();
        for b in [&noisy, &clean] {
            assert!(b.phi.values().iter().all(|v| *v == 0.0 || *v == 1.0));
            assert!(b.t_sup.values().iter().all(|v| *v >= 0.0));
            assert!(b.q_evap.values().iter().all(|v| *v >= 0.0));
            assert!(b.q_single.values().iter().all(|v| *v >= 0.0));
        }
        for ((e, s), q) in clean.q_evap.values().iter().zip(clean.q_single.values()).zip(clean.q_total.values()) {
            assert_eq!(e + s, *q);
        }
        let bound = 3.0 * noisy.manifest.noise_sigma * 1.2e6;
        for (e, s) in noisy.q_evap.values().iter().zip(noisy.q_single.values()) {
            assert!((e + s - 1.2e6).abs() <= bound * (1.0 + 1e-12));
        }
        assert!(clean.phi.values().iter().any(|v| *v == 0.0));
    }

    #[test]
    fn closure_values() {
        let cfg = GenConfig::default();
        let (t, e, s) = closure(&cfg, 1e6, 0.0, 12.0);
        assert!((t - 0.75 * 1e6f64.powf(0.25)).abs() < 1e-12);
        assert_eq!(e, 0.0);
        assert_eq!(s, 1e6);
        let (t, e, _) = closure(&cfg, 1e6, cfg.site_density_ref, 15.0);
        assert!((t - 0.75 * 1e6f64.powf(0.25) / 1.3).abs() < 1e-12);
        let want = 1.8e-3 * 2.56e6 * (t - 15.0).powi(3);
        assert!((e - want).abs() <= 1e-12 * want);
        let (_, e, s) = closure(&cfg, 1e3, 1e6, 0.0);
        assert_eq!((e, s), (1e3, 0.0));
    }

    #[test]
    fn site_count_scales_with_flux() {
        let cfg = GenConfig::default();
        assert_eq!(cfg.site_count(), 400);
        let cfg = GenConfig { q_total: 6e5, ..cfg };
        assert_eq!(cfg.site_count(), 240);
    }

    #[test]
    fn config_validation() {
        assert!(generate_case(&GenConfig { grid: [14, 30, 15, 4], ..small(1e6, 0) }).is_err());
        assert!(generate_case(&GenConfig { grid: [30, 30, 15, 3], ..small(1e6, 0) }).is_err());
        assert!(generate_case(&GenConfig { noise_sigma: -0.1, ..small(1e6, 0) }).is_err());
        assert!(generate_case(&GenConfig { q_total: -1.0, ..small(1e6, 0) }).is_err());
        assert!(generate_case(&GenConfig { dx: 4e-5, ..small(1e6, 0) }).is_err());
    }

    #[test]
    fn suite_seeds_and_duplicates() {
        let t = small(0.0, 0);
        let suite = generate_suite(&[6e5, 8e5], 10, &t).unwrap();
        assert_eq!(suite[0].manifest.seed, 10);
        assert_eq!(suite[1].manifest.seed, 11);
        assert_eq!(suite[1].manifest.q_total, 8e5);
        assert!(generate_suite(&[6e5, 6e5], 10, &t).is_err());
    }

    #[test]
    fn bundle_disk_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let b = generate_case(&GenConfig { grid: [15, 15, 15, 4], ..small(1e6, 2) }).unwrap();
        b.write(dir.path()).unwrap();
        assert_eq!(CaseBundle::read(dir.path()).unwrap(), b);
        let m: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join(MANIFEST)).unwrap()).unwrap();
        for key in ["q_total", "seed", "c1", "c2", "noise_sigma", "files"] {
            assert!(m.get(key).is_some());
        }
        assert_eq!(m["files"].as_array().unwrap().len(), 14);
    }

    #[test]
    fn averaged_case_extracts_grid() {
        let cfg = small(1e6, 7);
        let avg = generate_case(&cfg).unwrap().average(&cfg.window).unwrap();
        assert_eq!(avg.volume.alpha.dims(), [6, 6, 3, 1]);
        let dir = tempfile::tempdir().unwrap();
        avg.write(dir.path()).unwrap();
        let back = AveragedCase::read(dir.path()).unwrap();
        let ds = back.extract(None).unwrap();
        assert_eq!(ds.len(), 36);
        assert_eq!(ds, avg.extract(None).unwrap());
        assert!(ds.samples().iter().all(|s| s.case_label == 1e6));
    }
}
