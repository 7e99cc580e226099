//! Lattice Green's function of `ωI − Δ` on `Z^d` from the killed random
//! walk series, kernel bound fits and the discrete Gagliardo-Nirenberg ratio.

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::continuum::ContinuumGroundState;
use crate::error::{invalid, Error, Result};
use crate::numerics::linear_fit;
use crate::rng::stream_rng;
use crate::window::WindowField;

/// Work budget (site updates) for one kernel build.
const WORK_BUDGET: f64 = 4e10;
const MAX_CUBE: usize = 1 << 26;

/// Sites of the ℓ¹ ball of radius `r` inside the cube `[-r-1, r+1]^d`, with
/// neighbor indices into the cube.
struct Ball {
    cube: WindowField,
    sites: Vec<usize>,
    neighbors: Vec<usize>,
    outside: Vec<u8>,
}

impl Ball {
    fn new(d: usize, h: f64, radius: usize) -> Result<Self> {
        // One extra layer so every neighbor of a ball site has an index.
        let side = 2 * radius + 3;
        let total = side
            .checked_pow(d as u32)
            .filter(|&t| t <= MAX_CUBE)
            .ok_or_else(|| invalid(format!("window radius {radius} too large in d = {d}")))?;
        let cube = WindowField::zeros(d, h, vec![-(radius as i64) - 1; d], vec![side; d])?;
        let mut sites = Vec::new();
        let mut neighbors = Vec::new();
        let mut outside = Vec::new();
        let r = radius as i64;
        for i in 0..total {
            let x = cube.point(i);
            let l1: i64 = x.iter().map(|c| c.abs()).sum();
            if l1 > r {
                continue;
            }
            sites.push(i);
            let mut out = 0u8;
            for a in 0..d {
                for s in [1i64, -1] {
                    let mut y = x.clone();
                    y[a] += s;
                    let j = cube.index(&y).expect("ball neighbor inside cube");
                    neighbors.push(j);
                    if l1 + if x[a] * s >= 0 { 1 } else { -1 } > r {
                        out += 1;
                    }
                }
            }
            outside.push(out);
        }
        Ok(Ball {
            cube,
            sites,
            neighbors,
            outside,
        })
    }

    /// One step of the killed walk: `p(x,k+1) = (1/2d) Σ_{w∼x} p(w,k)`.
    fn step(&self, d: usize, old: &[f64], new: &mut [f64]) {
        let w = 1.0 / (2 * d) as f64;
        for (s, &i) in self.sites.iter().enumerate() {
            let nb = &self.neighbors[2 * d * s..2 * d * (s + 1)];
            new[i] = w * nb.iter().map(|&j| old[j]).sum::<f64>();
        }
    }
}

/// `p(x,k)` for `k = 0..=k_max` on the ℓ¹ ball of radius `window_radius`.
#[derive(Debug, Clone)]
pub struct WalkTable {
    pub d: usize,
    pub window_radius: usize,
    /// One slice per time, each a field on `[-R-1, R+1]^d`.
    pub slices: Vec<WindowField>,
    /// Probability absorbed by the window edge up to each time.
    pub escaped: Vec<f64>,
}

impl WalkTable {
    pub fn prob(&self, x: &[i64], k: usize) -> f64 {
        self.slices[k].get(x).re
    }

    pub fn slice_sum(&self, k: usize) -> f64 {
        self.slices[k].values().iter().map(|v| v.re).sum()
    }
}

pub fn walk_probabilities(d: usize, k_max: usize, window_radius: usize) -> Result<WalkTable> {
    let ball = Ball::new(d, 1.0, window_radius)?;
    let n = ball.cube.len();
    if (n as f64) * (k_max + 1) as f64 > 2e8 {
        return Err(invalid("walk table too large; lower k_max or window_radius"));
    }
    let center = ball.cube.index(&vec![0; d]).unwrap();
    let mut cur = vec![0.0; n];
    cur[center] = 1.0;
    let mut slices = Vec::with_capacity(k_max + 1);
    let mut escaped = vec![0.0];
    let to_field = |v: &[f64]| {
        let mut f = ball.cube.clone();
        for (o, &x) in f.values_mut().iter_mut().zip(v) {
            *o = Complex64::new(x, 0.0);
        }
        f
    };
    slices.push(to_field(&cur));
    let mut next = vec![0.0; n];
    for _ in 0..k_max {
        let lost: f64 = ball
            .sites
            .iter()
            .zip(&ball.outside)
            .map(|(&i, &o)| cur[i] * o as f64 / (2 * d) as f64)
            .sum();
        ball.step(d, &cur, &mut next);
        std::mem::swap(&mut cur, &mut next);
        escaped.push(escaped.last().unwrap() + lost);
        slices.push(to_field(&cur));
    }
    Ok(WalkTable {
        d,
        window_radius,
        slices,
        escaped,
    })
}

#[derive(Debug, Clone)]
pub struct GreenKernel {
    pub omega: f64,
    pub d: usize,
    pub h: f64,
    pub window_radius: usize,
    pub r: f64,
    pub k_max: usize,
    pub truncation_error: f64,
    /// `g` on the cube `[-R-1, R+1]^d`, zero outside the ℓ¹ ball.
    pub values: WindowField,
    /// `h^{d-2}/ω · Σ_{x, w∼x, |w|₁ > R} g(x)`: the flux lost to the window
    /// edge, so that `h^d Σ g + edge_correction = 1/ω` up to series truncation.
    pub edge_correction: f64,
}

pub fn green_kernel(omega: f64, d: usize, h: f64, window_radius: usize, tol: f64) -> Result<GreenKernel> {
    if !(omega > 0.0 && omega.is_finite()) {
        return Err(invalid(format!("omega = {omega} must be positive")));
    }
    if !(h > 0.0 && h <= 1.0) {
        return Err(invalid(format!("grid size {h} outside (0, 1]")));
    }
    if !(tol > 0.0) {
        return Err(invalid("tolerance must be positive"));
    }
    let r = 2.0 * d as f64 / (2.0 * d as f64 + omega * h * h);
    let c = h.powi(2 - d as i32) / (2 * d) as f64;
    // Smallest K with c r^{K+1}/(1-r) < tol.
    let k_needed = ((tol * (1.0 - r) / c).ln() / r.ln() - 1.0).ceil().max(0.0) as usize;
    let ball = Ball::new(d, h, window_radius)?;
    let n = ball.cube.len();
    if ball.sites.len() as f64 * (k_needed as f64 + 1.0) * (2 * d) as f64 > WORK_BUDGET {
        return Err(Error::NotConverged {
            what: "green_kernel",
            diagnostics: format!("tolerance {tol} needs {k_needed} walk steps on {n} sites"),
        });
    }
    let center = ball.cube.index(&vec![0; d]).unwrap();
    let mut cur = vec![0.0; n];
    cur[center] = 1.0;
    let mut next = vec![0.0; n];
    let mut acc = vec![0.0; n];
    let mut weight = r;
    for k in 0..=k_needed {
        for &i in &ball.sites {
            acc[i] += weight * cur[i];
        }
        if k < k_needed {
            ball.step(d, &cur, &mut next);
            std::mem::swap(&mut cur, &mut next);
            weight *= r;
        }
    }
    let mut values = ball.cube.clone();
    for (o, &a) in values.values_mut().iter_mut().zip(&acc) {
        *o = Complex64::new(c * a, 0.0);
    }
    let flux: f64 = ball
        .sites
        .iter()
        .zip(&ball.outside)
        .map(|(&i, &o)| c * acc[i] * o as f64)
        .sum();
    Ok(GreenKernel {
        omega,
        d,
        h,
        window_radius,
        r,
        k_max: k_needed,
        truncation_error: c * r.powi(k_needed as i32 + 1) / (1.0 - r),
        values,
        edge_correction: h.powi(d as i32 - 2) / omega * flux,
    })
}

impl GreenKernel {
    pub fn get(&self, x: &[i64]) -> f64 {
        self.values.get(x).re
    }

    /// `h^d Σ_x g(x)`.
    pub fn constant_sum(&self) -> f64 {
        self.h.powi(self.d as i32) * self.values.values().iter().map(|v| v.re).sum::<f64>()
    }

    /// `sup |(ωI − Δ)g − h^{-d} 1_0|` over `|x|₁ ≤ R − 1`.
    pub fn operator_residual(&self) -> f64 {
        let d = self.d;
        let r = self.window_radius as i64;
        let h2 = self.h * self.h;
        let delta = self.h.powi(-(d as i32));
        let mut worst: f64 = 0.0;
        for i in 0..self.values.len() {
            let x = self.values.point(i);
            if x.iter().map(|c| c.abs()).sum::<i64>() > r - 1 {
                continue;
            }
            let g0 = self.values.values()[i].re;
            let mut lap = 0.0;
            for a in 0..d {
                for s in [1, -1] {
                    let mut y = x.clone();
                    y[a] += s;
                    lap += self.get(&y) - g0;
                }
            }
            let mut res = self.omega * g0 - lap / h2;
            if x.iter().all(|&c| c == 0) {
                res -= delta;
            }
            worst = worst.max(res.abs());
        }
        worst
    }

    /// `(g*u)(x) = h^d Σ_y g(y) u(x−y)` on the window of `u`.
    pub fn convolve(&self, u: &WindowField) -> Result<WindowField> {
        if u.d != self.d || (u.h - self.h).abs() > 1e-15 * self.h {
            return Err(Error::SpecMismatch("kernel and field grids differ".into()));
        }
        let d = self.d;
        let radius = self.window_radius as i64;
        if let Some((lo, hi)) = u.support_box() {
            for a in 0..d {
                let wlo = u.origin[a];
                let whi = u.origin[a] + u.shape[a] as i64 - 1;
                if lo[a] - radius < wlo || hi[a] + radius > whi {
                    return Err(Error::WindowOverflow(format!(
                        "support [{}, {}] plus kernel radius {radius} leaves window [{wlo}, {whi}] on axis {a}",
                        lo[a], hi[a]
                    )));
                }
            }
        } else {
            return Ok(u.clone());
        }
        let kernel: Vec<(Vec<i64>, f64)> = (0..self.values.len())
            .filter_map(|i| {
                let g = self.values.values()[i].re;
                (g != 0.0).then(|| (self.values.point(i), g))
            })
            .collect();
        let sources: Vec<(Vec<i64>, Complex64)> = (0..u.len())
            .filter_map(|i| {
                let v = u.values()[i];
                (v.norm_sqr() > 0.0).then(|| (u.point(i), v))
            })
            .collect();
        let vol = self.h.powi(d as i32);
        let out: Vec<Complex64> = (0..u.len())
            .into_par_iter()
            .map(|i| {
                let x = u.point(i);
                let mut s = Complex64::new(0.0, 0.0);
                if sources.len() < kernel.len() {
                    let mut y = vec![0i64; d];
                    for (z, v) in &sources {
                        for a in 0..d {
                            y[a] = x[a] - z[a];
                        }
                        s += v * self.get(&y);
                    }
                } else {
                    let mut z = vec![0i64; d];
                    for (y, g) in &kernel {
                        for a in 0..d {
                            z[a] = x[a] - y[a];
                        }
                        s += u.get(&z) * *g;
                    }
                }
                s * vol
            })
            .collect();
        WindowField::new(d, u.h, u.origin.clone(), u.shape.clone(), out)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelBoundReport {
    /// Fitted decay constant ĉ in `e^{-ĉ h|x|}`.
    pub decay: f64,
    /// Smallest `Ĉ` with `g ≤ Ĉ h^{2-d} (√d+|x|)^{2-d} e^{-ĉ h|x|}` on the ball.
    pub constant: f64,
    pub fit_r_squared: f64,
    pub points: usize,
}

/// Fits the envelope `Ĉ h^{2-d}(√d+|x|)^{2-d} e^{-ĉ h|x|}` to the kernel.
/// ĉ comes from a least-squares fit on `|x|₁ ≤ 3R/4` (away from the
/// absorbing edge); Ĉ is then the maximum ratio over the whole ball.
pub fn verify_kernel_bounds(g: &GreenKernel) -> Result<KernelBoundReport> {
    let d = g.d;
    if d < 3 {
        return Err(invalid(format!("kernel envelope needs d ≥ 3, got {d}")));
    }
    let sqrt_d = (d as f64).sqrt();
    let envelope = |x: &[i64]| {
        let e = x.iter().map(|&c| (c * c) as f64).sum::<f64>().sqrt();
        (e, g.h.powi(2 - d as i32) * (sqrt_d + e).powi(2 - d as i32))
    };
    let fit_radius = 3 * g.window_radius as i64 / 4;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut all = Vec::new();
    for i in 0..g.values.len() {
        let v = g.values.values()[i].re;
        if v <= 0.0 {
            continue;
        }
        let x = g.values.point(i);
        let (e, env) = envelope(&x);
        let lr = (v / env).ln();
        all.push((g.h * e, lr));
        if x.iter().map(|c| c.abs()).sum::<i64>() <= fit_radius {
            xs.push(g.h * e);
            ys.push(lr);
        }
    }
    let (_, slope, r2) = linear_fit(&xs, &ys);
    let decay = -slope;
    let constant = all.iter().map(|&(t, lr)| (lr + decay * t).exp()).fold(0.0, f64::max);
    if !constant.is_finite() {
        return Err(Error::Numerical("kernel envelope constant is not finite".into()));
    }
    Ok(KernelBoundReport {
        decay,
        constant,
        fit_r_squared: r2,
        points: xs.len(),
    })
}

/// Smallest `Ĉ'` with `p(x,k) ≤ Ĉ' e^{-|x|²/2k} (1+k)^{-d/2}` over the table
/// (times with escaped mass are skipped, since the walk there is killed).
pub fn walk_bound_constant(table: &WalkTable) -> f64 {
    let d = table.d as f64;
    let mut worst: f64 = 0.0;
    for (k, slice) in table.slices.iter().enumerate() {
        if table.escaped[k] > 0.0 {
            break;
        }
        for i in 0..slice.len() {
            let p = slice.values()[i].re;
            if p == 0.0 {
                continue;
            }
            let x = slice.point(i);
            let e2 = x.iter().map(|&c| (c * c) as f64).sum::<f64>();
            let gauss = if k == 0 { 1.0 } else { (-e2 / (2.0 * k as f64)).exp() };
            worst = worst.max(p / (gauss * (1.0 + k as f64).powf(-d / 2.0)));
        }
    }
    worst
}

/// `θ` with `1/q = 1/2 − θ/d`; must lie in (0, 1).
pub fn gn_theta(q: f64, d: usize) -> Result<f64> {
    let theta = if q.is_infinite() { d as f64 / 2.0 } else { d as f64 * (0.5 - 1.0 / q) };
    if !(theta > 0.0 && theta < 1.0) {
        return Err(invalid(format!("q = {q} in d = {d} gives θ = {theta} outside (0,1)")));
    }
    Ok(theta)
}

/// `‖f‖_{q,h} / (‖f‖_{2,h}^{1−θ} G_h(f)^{θ/2})`.
pub fn gn_ratio(f: &WindowField, q: f64) -> Result<f64> {
    let theta = gn_theta(q, f.d)?;
    let obs = f.observables(3.0)?;
    if obs.mass <= 0.0 {
        return Err(invalid("zero field"));
    }
    let num = f.continuum_lq_norm(q);
    Ok(num / (obs.mass.sqrt().powf(1.0 - theta) * obs.gradient.powf(theta / 2.0)))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GnSample {
    pub label: String,
    pub ratio: f64,
}

/// Ratios over a corpus of continuum-defined profiles sampled at grid size
/// `h` on `[-half_width, half_width]^d`: Gaussians, exponentials, the
/// continuum ground state and smoothed random fields (sums of random bumps).
pub fn gn_corpus(d: usize, h: f64, q: f64, half_width: f64, seed: u64) -> Result<Vec<GnSample>> {
    gn_theta(q, d)?;
    let n = (2.0 * half_width / h).round() as usize + 1;
    let origin = -((n / 2) as i64);
    let make = |f: &dyn Fn(&[f64]) -> Complex64| {
        WindowField::from_fn(d, h, vec![origin; d], vec![n; d], |x| {
            let y: Vec<f64> = x.iter().map(|&c| c as f64 * h).collect();
            f(&y)
        })
    };
    let r2 = |y: &[f64]| y.iter().map(|c| c * c).sum::<f64>();
    let mut out = Vec::new();
    for w in [1.0, 2.0, 3.0] {
        let f = make(&|y| Complex64::new((-r2(y) / (2.0 * w * w)).exp(), 0.0))?;
        out.push(GnSample {
            label: format!("gaussian w={w}"),
            ratio: gn_ratio(&f, q)?,
        });
    }
    for w in [1.0, 2.0] {
        let f = make(&|y| Complex64::new((-(1.0 + r2(y)).sqrt() / w).exp(), 0.0))?;
        out.push(GnSample {
            label: format!("exponential w={w}"),
            ratio: gn_ratio(&f, q)?,
        });
    }
    if d <= 3 {
        let gs = ContinuumGroundState::solve(3.0, d)?;
        let f = make(&|y| Complex64::new(gs.eval(r2(y).sqrt()), 0.0))?;
        out.push(GnSample {
            label: "ground state".into(),
            ratio: gn_ratio(&f, q)?,
        });
    }
    for sample in 0..4u64 {
        let mut rng = stream_rng(seed, sample);
        let bumps: Vec<(Vec<f64>, f64, Complex64)> = (0..6)
            .map(|_| {
                let c: Vec<f64> = (0..d).map(|_| rng.random_range(-0.4..0.4) * half_width).collect();
                let w = rng.random_range(1.0..2.5);
                let phase = rng.random_range(0.0..std::f64::consts::TAU);
                (c, w, Complex64::from_polar(rng.random_range(0.5..1.5), phase))
            })
            .collect();
        let f = make(&|y| {
            bumps
                .iter()
                .map(|(c, w, a)| {
                    let dist2: f64 = y.iter().zip(c).map(|(a, b)| (a - b).powi(2)).sum();
                    a * (-dist2 / (2.0 * w * w)).exp()
                })
                .sum()
        })?;
        out.push(GnSample {
            label: format!("random bumps #{sample}"),
            ratio: gn_ratio(&f, q)?,
        });
    }
    Ok(out)
}

pub fn gn_ceiling(samples: &[GnSample]) -> f64 {
    samples.iter().map(|s| s.ratio).fold(0.0, f64::max)
}
