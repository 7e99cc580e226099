//! Metropolis sampling of the uniform measure on the microcanonical slab
//! `{ |M - m0| ≤ ε, |H - E0| ≤ ε }` and classification of the samples.

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::lattice::{check_power, level_set, observables, special_set, Field, GridSpec, ObservableSet, SubsetMask};
use crate::metric::pseudometric_with;
use crate::numerics::{bisect, effective_sample_size, quantile};
use crate::rng::stream_rng;
use crate::soliton::{ground_state, EminTable, SolverOptions};
use crate::spectral::Spectral;
use crate::variational::{k_set, maximizer_set, MaximizerPoint};
use crate::window::WindowField;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    SolitonPlusRadiation,
    ScaledGaussian,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub e0: f64,
    pub m0: f64,
    pub eps: f64,
    pub spec: GridSpec,
    pub p: f64,
    /// Initial single-site proposal scale (adapted during burn-in).
    pub step_sigma: f64,
    pub n_steps: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub init_mode: InitMode,
    pub chains: usize,
}

impl EnsembleConfig {
    pub fn new(spec: GridSpec, p: f64, m0: f64, e0: f64) -> Self {
        EnsembleConfig {
            e0,
            m0,
            eps: default_eps(m0, e0),
            spec,
            p,
            step_sigma: 0.05,
            n_steps: 1_000_000,
            burn_in: 200_000,
            thin: 2_000,
            seed: 1,
            init_mode: InitMode::SolitonPlusRadiation,
            chains: 4,
        }
    }

    /// Checks the parameters and, given `E_min(m0)` on this grid, that the
    /// slab is nonempty.
    pub fn validate(&self, emin_m0: Option<f64>) -> Result<()> {
        check_power(self.p)?;
        if !(self.eps > 0.0) || !(self.m0 > 0.0) || !self.e0.is_finite() {
            return Err(invalid("need eps > 0, m0 > 0 and finite E0"));
        }
        if self.thin == 0 || self.chains == 0 || self.burn_in >= self.n_steps {
            return Err(invalid("need thin ≥ 1, chains ≥ 1 and burn_in < n_steps"));
        }
        let emax = self.spec.max_energy(self.m0);
        if self.e0 >= emax + self.eps {
            return Err(Error::EmptyRegion(format!("E0 = {} is above E_max = {emax}", self.e0)));
        }
        if let Some(emin) = emin_m0 {
            if self.e0 <= emin - self.eps {
                return Err(Error::EmptyRegion(format!("E0 = {} is below E_min = {emin}", self.e0)));
            }
        }
        Ok(())
    }

    pub fn in_slab(&self, mass: f64, energy: f64) -> bool {
        (mass - self.m0).abs() <= self.eps && (energy - self.e0).abs() <= self.eps
    }
}

pub fn default_eps(m0: f64, e0: f64) -> f64 {
    0.01 * m0.max(e0.abs())
}

/// `Σ|f|²`, bond sum and `Σ|f|^{p+1}`: the raw sums behind the observables.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Sums {
    s2: f64,
    bonds: f64,
    pw: f64,
}

#[derive(Debug, Clone)]
pub struct ChainState {
    pub field: Field,
    pub observables: ObservableSet,
    pub accept_rate: f64,
    pub step_count: usize,
}

/// One Metropolis chain on the slab.
pub struct Chain {
    cfg: EnsembleConfig,
    neighbors: Vec<usize>,
    coords: Vec<usize>,
    roots: Vec<Complex64>,
    values: Vec<Complex64>,
    buffer: Vec<Complex64>,
    sums: Sums,
    rng: ChaCha8Rng,
    sigma: [f64; 3],
    window: [(usize, usize); 3],
    totals: [(usize, usize); 3],
    step_count: usize,
    /// Largest relative gap between tracked and recomputed sums.
    pub max_drift: f64,
    pub slab_violations: usize,
}

const MOVE_PROBS: [f64; 3] = [0.7, 0.2, 0.1];
const RECOMPUTE_EVERY: usize = 10_000;
const ADAPT_EVERY: usize = 500;
const TARGET_ACCEPT: f64 = 0.3;

impl Chain {
    pub fn new(cfg: &EnsembleConfig, init: &Field, rng: ChaCha8Rng) -> Result<Self> {
        let spec = cfg.spec;
        spec.check_same(init.spec())?;
        let d = spec.d;
        let n = spec.n;
        let mut coords = Vec::with_capacity(spec.sites() * d);
        for i in 0..spec.sites() {
            coords.extend(spec.coords(i));
        }
        let norm = (spec.sites() as f64).sqrt().recip();
        let roots = (0..n)
            .map(|k| Complex64::from_polar(norm, std::f64::consts::TAU * k as f64 / n as f64))
            .collect();
        let mut c = Chain {
            cfg: cfg.clone(),
            neighbors: spec.neighbor_table(),
            coords,
            roots,
            values: init.values().to_vec(),
            buffer: vec![Complex64::new(0.0, 0.0); spec.sites()],
            sums: Sums {
                s2: 0.0,
                bonds: 0.0,
                pw: 0.0,
            },
            rng,
            sigma: [cfg.step_sigma, cfg.step_sigma, 0.2 * cfg.eps / cfg.m0],
            window: [(0, 0); 3],
            totals: [(0, 0); 3],
            step_count: 0,
            max_drift: 0.0,
            slab_violations: 0,
        };
        c.sums = c.full_sums(&c.values);
        let (m, e) = c.mass_energy(&c.sums);
        if !cfg.in_slab(m, e) {
            return Err(invalid(format!("initial field (M = {m}, H = {e}) is outside the slab")));
        }
        Ok(c)
    }

    fn full_sums(&self, v: &[Complex64]) -> Sums {
        let d = self.cfg.spec.d;
        let e = 0.5 * (self.cfg.p + 1.0);
        let mut s = Sums {
            s2: 0.0,
            bonds: 0.0,
            pw: 0.0,
        };
        for (i, x) in v.iter().enumerate() {
            let a = x.norm_sqr();
            s.s2 += a;
            s.pw += a.powf(e);
            for axis in 0..d {
                s.bonds += (v[self.neighbors[2 * (i * d + axis)]] - x).norm_sqr();
            }
        }
        s
    }

    fn mass_energy(&self, s: &Sums) -> (f64, f64) {
        let spec = &self.cfg.spec;
        let cell = spec.cell();
        let g = 0.5 * spec.h.powi(spec.d as i32 - 2) * s.bonds;
        let pot = cell / (self.cfg.p + 1.0) * s.pw;
        (cell * s.s2, g - pot)
    }

    pub fn state(&self) -> Result<ChainState> {
        let field = Field::new(self.cfg.spec, self.values.clone())?;
        let observables = observables(&field, self.cfg.p)?;
        let (acc, tot) = self.totals.iter().fold((0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
        Ok(ChainState {
            field,
            observables,
            accept_rate: if tot > 0 { acc as f64 / tot as f64 } else { 0.0 },
            step_count: self.step_count,
        })
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn mass_energy_now(&self) -> (f64, f64) {
        self.mass_energy(&self.sums)
    }

    /// Acceptance rate per move type (site, mode, rescale).
    pub fn accept_rates(&self) -> [f64; 3] {
        self.totals.map(|(a, t)| if t > 0 { a as f64 / t as f64 } else { 0.0 })
    }

    pub fn sigmas(&self) -> [f64; 3] {
        self.sigma
    }

    fn gauss(&mut self) -> Complex64 {
        let re: f64 = StandardNormal.sample(&mut self.rng);
        let im: f64 = StandardNormal.sample(&mut self.rng);
        Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
    }

    fn site_move(&mut self) -> bool {
        let spec = self.cfg.spec;
        let d = spec.d;
        let i = self.rng.random_range(0..spec.sites());
        let old = self.values[i];
        let new = old + self.gauss() * self.sigma[0];
        let e = 0.5 * (self.cfg.p + 1.0);
        let mut db = 0.0;
        for k in 0..2 * d {
            let w = self.values[self.neighbors[2 * d * i + k]];
            db += (new - w).norm_sqr() - (old - w).norm_sqr();
        }
        let trial = Sums {
            s2: self.sums.s2 + new.norm_sqr() - old.norm_sqr(),
            bonds: self.sums.bonds + db,
            pw: self.sums.pw + new.norm_sqr().powf(e) - old.norm_sqr().powf(e),
        };
        let (m, en) = self.mass_energy(&trial);
        if self.cfg.in_slab(m, en) {
            self.values[i] = new;
            self.sums = trial;
            true
        } else {
            false
        }
    }

    fn mode_move(&mut self) -> bool {
        let spec = self.cfg.spec;
        let d = spec.d;
        let n = spec.n;
        let y: Vec<usize> = (0..d).map(|_| self.rng.random_range(0..n)).collect();
        let c = self.gauss() * self.sigma[1];
        for i in 0..spec.sites() {
            let k = (0..d).map(|a| y[a] * self.coords[i * d + a]).sum::<usize>() % n;
            self.buffer[i] = self.values[i] + c * self.roots[k];
        }
        let trial = self.full_sums(&self.buffer);
        let (m, en) = self.mass_energy(&trial);
        if self.cfg.in_slab(m, en) {
            std::mem::swap(&mut self.values, &mut self.buffer);
            self.sums = trial;
            true
        } else {
            false
        }
    }

    /// `f → s f` with `log s ~ N(0, σ²)`; the Lebesgue Jacobian `s^{2N}`
    /// enters the acceptance ratio.
    fn rescale_move(&mut self) -> bool {
        let z: f64 = StandardNormal.sample(&mut self.rng);
        let ls = self.sigma[2] * z;
        let s2 = (2.0 * ls).exp();
        let trial = Sums {
            s2: self.sums.s2 * s2,
            bonds: self.sums.bonds * s2,
            pw: self.sums.pw * ((self.cfg.p + 1.0) * ls).exp(),
        };
        let (m, en) = self.mass_energy(&trial);
        if !self.cfg.in_slab(m, en) {
            return false;
        }
        let log_jac = 2.0 * self.cfg.spec.sites() as f64 * ls;
        if log_jac < 0.0 && self.rng.random::<f64>().ln() >= log_jac {
            return false;
        }
        let s = ls.exp();
        self.values.iter_mut().for_each(|v| *v *= s);
        self.sums = trial;
        true
    }

    /// One proposal; returns whether it was accepted.
    pub fn step(&mut self, adapt: bool) -> bool {
        let u: f64 = self.rng.random();
        let kind = if u < MOVE_PROBS[0] {
            0
        } else if u < MOVE_PROBS[0] + MOVE_PROBS[1] {
            1
        } else {
            2
        };
        let ok = match kind {
            0 => self.site_move(),
            1 => self.mode_move(),
            _ => self.rescale_move(),
        };
        self.totals[kind].1 += 1;
        self.totals[kind].0 += ok as usize;
        self.window[kind].1 += 1;
        self.window[kind].0 += ok as usize;
        if adapt && self.window[kind].1 >= ADAPT_EVERY {
            let rate = self.window[kind].0 as f64 / self.window[kind].1 as f64;
            self.sigma[kind] *= (2.0 * (rate - TARGET_ACCEPT)).exp();
            self.window[kind] = (0, 0);
        }
        self.step_count += 1;
        if self.step_count % RECOMPUTE_EVERY == 0 {
            self.recompute();
        }
        ok
    }

    fn recompute(&mut self) {
        let full = self.full_sums(&self.values);
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-300);
        let drift = rel(self.sums.s2, full.s2).max(rel(self.sums.bonds, full.bonds)).max(rel(self.sums.pw, full.pw));
        self.max_drift = self.max_drift.max(drift);
        self.sums = full;
        let (m, e) = self.mass_energy(&full);
        if !self.cfg.in_slab(m, e) {
            self.slab_violations += 1;
        }
    }

    /// Incremental observables against a fresh recomputation: largest
    /// relative gap of mass, gradient and potential.
    pub fn observable_gap(&self) -> f64 {
        let full = self.full_sums(&self.values);
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-300);
        rel(self.sums.s2, full.s2).max(rel(self.sums.bonds, full.bonds)).max(rel(self.sums.pw, full.pw))
    }

    /// Resets the adaptive windows and counters (end of burn-in).
    pub fn freeze_adaptation(&mut self) {
        self.window = [(0, 0); 3];
        self.totals = [(0, 0); 3];
    }
}

/// i.i.d. complex Gaussian field with `E|φ(x)|² = (nh)^{-d}`.
pub fn gaussian_reference(spec: &GridSpec, rng: &mut impl Rng) -> Field {
    let var = (spec.n as f64 * spec.h).powi(-(spec.d as i32));
    let s = (0.5 * var).sqrt();
    let values = (0..spec.sites())
        .map(|_| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            Complex64::new(re * s, im * s)
        })
        .collect();
    Field::new(*spec, values).expect("finite gaussian field")
}

/// `u = f·1{|f| ≤ δ}` and `v = f − u`.
pub fn visible_invisible_split(f: &Field, delta: f64) -> Result<(Field, Field)> {
    if !(delta > 0.0) {
        return Err(invalid("delta must be positive"));
    }
    let mut v = f.clone();
    let mut u = f.clone();
    for (a, b) in v.values_mut().iter_mut().zip(u.values_mut()) {
        if a.norm() <= delta {
            *a = Complex64::new(0.0, 0.0);
        } else {
            *b = Complex64::new(0.0, 0.0);
        }
    }
    Ok((v, u))
}

/// Plane wave `n^{-d/2} e^{2πi k x_0 / n}` along the first axis.
fn plane_wave(spec: &GridSpec, k: usize) -> Vec<Complex64> {
    let norm = (spec.sites() as f64).sqrt().recip();
    (0..spec.sites())
        .map(|i| {
            let x0 = spec.coords(i)[0];
            Complex64::from_polar(norm, std::f64::consts::TAU * (k * x0 % spec.n) as f64 / spec.n as f64)
        })
        .collect()
}

/// `q + c·w` with `c ≥ 0` chosen so the mass is exactly `m0`.
fn complete_mass(spec: &GridSpec, q: &[Complex64], w: &[Complex64], m0: f64) -> Option<Vec<Complex64>> {
    let cell = spec.cell();
    let a = cell * w.iter().map(|x| x.norm_sqr()).sum::<f64>();
    let b = 2.0 * cell * q.iter().zip(w).map(|(x, y)| (x.conj() * y).re).sum::<f64>();
    let c0 = cell * q.iter().map(|x| x.norm_sqr()).sum::<f64>() - m0;
    let disc = b * b - 4.0 * a * c0;
    if a <= 0.0 || disc < 0.0 {
        return None;
    }
    let c = (-b + disc.sqrt()) / (2.0 * a);
    if c < 0.0 {
        return None;
    }
    Some(q.iter().zip(w).map(|(x, y)| x + y * c).collect())
}

/// Soliton `q` plus radiation along the path of plane waves
/// `cos θ ρ_k + sin θ ρ_{k+1}` (`τ = k + 2θ/π ∈ [0, n/2]`), with the
/// amplitude fixed by mass and `τ` by bisection on the energy.
pub fn soliton_plus_radiation(cfg: &EnsembleConfig, q: &Field, phase: f64) -> Result<Option<Field>> {
    let spec = cfg.spec;
    spec.check_same(q.spec())?;
    if q.mass() >= cfg.m0 {
        return Ok(None);
    }
    let kmax = spec.n / 2;
    let waves: Vec<Vec<Complex64>> = (0..=kmax).map(|k| plane_wave(&spec, k)).collect();
    let rot = Complex64::from_polar(1.0, phase);
    let build = |tau: f64| -> Option<Field> {
        let k = (tau.floor() as usize).min(kmax.saturating_sub(1));
        let th = (tau - k as f64).clamp(0.0, 1.0) * std::f64::consts::FRAC_PI_2;
        let w: Vec<Complex64> = if kmax == 0 {
            waves[0].clone()
        } else {
            waves[k].iter().zip(&waves[k + 1]).map(|(a, b)| (a * th.cos() + b * th.sin()) * rot).collect()
        };
        complete_mass(&spec, q.values(), &w, cfg.m0).and_then(|v| Field::new(spec, v).ok())
    };
    let energy = |tau: f64| build(tau).and_then(|f| observables(&f, cfg.p).ok()).map(|o| o.hamiltonian);
    let mut grid = Vec::new();
    for j in 0..=2 * kmax {
        let t = 0.5 * j as f64;
        if let Some(e) = energy(t) {
            grid.push((t, e - cfg.e0));
        }
    }
    for w in grid.windows(2) {
        let ((a, fa), (b, fb)) = (w[0], w[1]);
        if fa == 0.0 {
            return Ok(build(a));
        }
        if fa * fb < 0.0 {
            let root = bisect(|t| energy(t).map(|e| e - cfg.e0).unwrap_or(f64::NAN), a, b, 1e-14, 200);
            if let Some(t) = root {
                return Ok(build(t));
            }
        }
    }
    Ok(None)
}

/// Gaussian reference field reshaped by `e^{sλ/2}` in Fourier space and
/// rescaled to mass `m0`; `s` is found by bisection on the energy.
pub fn scaled_gaussian(cfg: &EnsembleConfig, rng: &mut impl Rng) -> Result<Option<Field>> {
    let spec = cfg.spec;
    let sp = Spectral::new(spec);
    let phi = gaussian_reference(&spec, rng);
    let build = |s: f64| -> Result<Field> {
        let top = 4.0 * spec.d as f64;
        let f = sp.apply_multiplier(&phi, |l| Complex64::new((0.5 * s * (l - top * (s > 0.0) as u8 as f64)).exp(), 0.0))?;
        let m = f.mass();
        Ok(f.scale(Complex64::new((cfg.m0 / m).sqrt(), 0.0)))
    };
    let energy = |s: f64| build(s).and_then(|f| observables(&f, cfg.p)).map(|o| o.hamiltonian - cfg.e0);
    let (lo, hi) = (-60.0, 60.0);
    let (flo, fhi) = (energy(lo)?, energy(hi)?);
    if flo * fhi > 0.0 {
        return Ok(None);
    }
    let root = bisect(|s| energy(s).unwrap_or(f64::NAN), lo, hi, 1e-13, 300);
    root.map(build).transpose()
}

/// Initial field inside the slab: each candidate soliton plus radiation in
/// turn, then the reshaped Gaussian (or the reverse order for
/// `ScaledGaussian`).
pub fn init_state(cfg: &EnsembleConfig, solitons: &[Field], rng: &mut impl Rng) -> Result<ChainState> {
    let check = |f: Field| -> Result<Option<ChainState>> {
        let o = observables(&f, cfg.p)?;
        let margin = 0.9 * cfg.eps;
        if (o.mass - cfg.m0).abs() <= margin && (o.hamiltonian - cfg.e0).abs() <= margin {
            Ok(Some(ChainState {
                field: f,
                observables: o,
                accept_rate: 0.0,
                step_count: 0,
            }))
        } else {
            Ok(None)
        }
    };
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let try_solitons = || -> Result<Option<ChainState>> {
        for q in solitons {
            if let Some(f) = soliton_plus_radiation(cfg, q, phase)? {
                if let Some(s) = check(f)? {
                    return Ok(Some(s));
                }
            }
        }
        Ok(None)
    };
    if cfg.init_mode == InitMode::SolitonPlusRadiation {
        if let Some(s) = try_solitons()? {
            return Ok(s);
        }
    }
    if let Some(f) = scaled_gaussian(cfg, rng)? {
        if let Some(s) = check(f)? {
            return Ok(s);
        }
    }
    if cfg.init_mode == InitMode::ScaledGaussian {
        if let Some(s) = try_solitons()? {
            return Ok(s);
        }
    }
    Err(Error::EmptyRegion(format!(
        "no initial field found for E0 = {}, m0 = {} with {} candidate solitons",
        cfg.e0,
        cfg.m0,
        solitons.len()
    )))
}

/// Variational data and solitons used to classify samples.
#[derive(Debug, Clone)]
pub struct EnsembleCaches {
    pub maximizers: Vec<MaximizerPoint>,
    pub k_masses: Vec<f64>,
    /// `(mass, field)` on the ensemble grid.
    pub solitons: Vec<(f64, Field)>,
    pub table_h: f64,
    pub table_n: usize,
}

impl EnsembleCaches {
    pub fn soliton(&self, m: f64) -> Result<&Field> {
        self.solitons
            .iter()
            .find(|(mm, _)| (mm - m).abs() <= 1e-9 * (1.0 + m))
            .map(|(_, f)| f)
            .ok_or_else(|| Error::CacheMiss(format!("no cached soliton of mass {m}")))
    }
}

/// Maximizers and K set from the table, and ground states of the K masses
/// (the zero field for mass 0).
pub fn build_caches(cfg: &EnsembleConfig, table: &EminTable, opts: &SolverOptions) -> Result<EnsembleCaches> {
    build_caches_with(cfg, table, |m| soliton_on_grid(&cfg.spec, cfg.p, m, opts))
}

/// As [`build_caches`], with the soliton of each K mass supplied by `solve`
/// (e.g. from an on-disk cache).
pub fn build_caches_with(
    cfg: &EnsembleConfig,
    table: &EminTable,
    mut solve: impl FnMut(f64) -> Result<Field>,
) -> Result<EnsembleCaches> {
    let h = cfg.spec.h;
    let d = cfg.spec.d;
    let ms = maximizer_set(cfg.e0, cfg.m0, h, d, table)?;
    let ks = k_set(cfg.e0, cfg.m0, h, d, table)?;
    let mut solitons = Vec::new();
    for &m in &ks.from_maximizers {
        solitons.push((m, solve(m)?));
    }
    Ok(EnsembleCaches {
        maximizers: ms.points,
        k_masses: ks.from_maximizers,
        solitons,
        table_h: table.h,
        table_n: table.n,
    })
}

pub fn soliton_on_grid(spec: &GridSpec, p: f64, m: f64, opts: &SolverOptions) -> Result<Field> {
    if m <= 1e-12 {
        return Ok(Field::zeros(*spec));
    }
    let s = ground_state(spec, p, m, opts, None)?;
    let n = spec.n as i64;
    let shift: Vec<i64> = vec![-(n / 2); spec.d];
    Ok(s.field.translate(&shift))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SolitonFlags {
    pub delta_soliton: bool,
    pub improved: bool,
}

/// Candidate witnesses `g` with `‖f − g‖_∞ ≤ δ`: the zero field, soft
/// thresholds `f(1 − t/|f|)₊`, truncations of `f` to dilations of level
/// sets `{|f| > t}` for `t ≤ δ`, and truncation to the special set.
fn witnesses(f: &Field, delta: f64) -> Vec<Field> {
    let spec = *f.spec();
    let sup = f.max_abs();
    let mut out = vec![Field::zeros(spec)];
    if sup <= delta {
        return out;
    }
    for frac in [1.0, 0.75, 0.5] {
        let t = frac * delta;
        let mut g = f.clone();
        for v in g.values_mut() {
            let a = v.norm();
            *v = if a > t { *v * (1.0 - t / a) } else { Complex64::new(0.0, 0.0) };
        }
        out.push(g);
    }
    let apply = |mask: &SubsetMask| {
        let mut g = f.clone();
        for (v, &inside) in g.values_mut().iter_mut().zip(mask.as_slice()) {
            if !inside {
                *v = Complex64::new(0.0, 0.0);
            }
        }
        g
    };
    for frac in [1.0, 0.5, 0.25] {
        let mut mask = level_set(f, frac * delta);
        for _ in 0..4 {
            out.push(apply(&mask));
            mask = mask.dilate(&spec);
        }
    }
    if let Ok(ss) = special_set(f, delta) {
        out.push(apply(&ss.mask));
    }
    out
}

fn center_peak(f: &Field) -> Field {
    let spec = f.spec();
    let peak = spec.coords(f.argmax_abs());
    let shift: Vec<i64> = peak.iter().map(|&c| c as i64 - (spec.n / 2) as i64).collect();
    f.translate(&shift)
}

/// Witness search for the δ-soliton (torus energies) and improved
/// δ-soliton (`Z^d` energies of the extension of the peak-centered field)
/// properties against the maximizers `(E*, m*)`: `g` must carry mass and
/// energy `(m0 − m*, E0 − E*)` within δ. A positive flag is certified; a
/// negative one means no witness was found in the searched family.
pub fn classify_delta_soliton(
    f: &Field,
    delta: f64,
    e0: f64,
    m0: f64,
    p: f64,
    maximizers: &[MaximizerPoint],
) -> Result<SolitonFlags> {
    if delta.is_infinite() {
        return Ok(SolitonFlags {
            delta_soliton: true,
            improved: true,
        });
    }
    if !(delta > 0.0) {
        return Err(invalid("delta must be positive"));
    }
    let targets: Vec<(f64, f64)> = maximizers.iter().map(|pt| (m0 - pt.m, e0 - pt.e)).collect();
    let matches = |o: &ObservableSet| {
        targets
            .iter()
            .any(|&(m, e)| (o.mass - m).abs() <= delta && (o.hamiltonian - e).abs() <= delta)
    };
    let mut flags = SolitonFlags::default();
    for g in witnesses(f, delta) {
        if matches(&observables(&g, p)?) {
            flags.delta_soliton = true;
            break;
        }
    }
    let centered = center_peak(f);
    for g in witnesses(&centered, delta) {
        if matches(&WindowField::extension(&g).observables(p)?) {
            flags.improved = true;
            break;
        }
    }
    Ok(flags)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleRecord {
    pub chain: usize,
    pub step: usize,
    pub mass: f64,
    pub energy: f64,
    pub sup_norm: f64,
    /// `inf_{m' ∈ K} L̃^∞(f, S(m'))`.
    pub dist_inf: f64,
    /// `inf_{m' ∈ K} L̃^2(f, S(m'))` with the `h^{d/2}` weight.
    pub dist_2: f64,
    pub flags: SolitonFlags,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Quantiles {
    pub q10: f64,
    pub q50: f64,
    pub q90: f64,
}

impl Quantiles {
    pub fn of(v: &[f64]) -> Self {
        Quantiles {
            q10: quantile(v, 0.1),
            q50: quantile(v, 0.5),
            q90: quantile(v, 0.9),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleReport {
    pub config: EnsembleConfig,
    pub delta: f64,
    pub k_masses: Vec<f64>,
    pub maximizers: Vec<MaximizerPoint>,
    pub records: Vec<SampleRecord>,
    pub sup_norm: Quantiles,
    pub dist_inf: Quantiles,
    pub fraction_delta_soliton: f64,
    pub fraction_improved: f64,
    /// Sum over chains of the mass-trace effective sample size.
    pub ess_mass: f64,
    pub ess_sup: f64,
    pub rhat_mass: f64,
    pub rhat_sup: f64,
    pub accept_rates: Vec<[f64; 3]>,
    pub max_observable_drift: f64,
    pub slab_violations: usize,
    pub gauge_mismatches: usize,
    /// Emin table grid used for the caches.
    pub table_h: f64,
    pub table_n: usize,
}

impl SampleReport {
    /// ESS gate for a valid report.
    pub fn valid(&self) -> bool {
        self.ess_mass >= 100.0 && self.slab_violations == 0
    }
}

/// Potential scale reduction factor from several equally long traces.
pub fn gelman_rubin(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    let n = chains.iter().map(|c| c.len()).min().unwrap_or(0);
    if m < 2 || n < 2 {
        return f64::NAN;
    }
    let means: Vec<f64> = chains.iter().map(|c| c[..n].iter().sum::<f64>() / n as f64).collect();
    let grand = means.iter().sum::<f64>() / m as f64;
    let b = n as f64 / (m - 1) as f64 * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>();
    let w = chains
        .iter()
        .zip(&means)
        .map(|(c, mu)| c[..n].iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (n - 1) as f64)
        .sum::<f64>()
        / m as f64;
    if w <= 0.0 {
        return if b <= 0.0 { 1.0 } else { f64::INFINITY };
    }
    let var = (n - 1) as f64 / n as f64 * w + b / n as f64;
    (var / w).sqrt()
}

struct ChainOutput {
    samples: Vec<(usize, Field)>,
    accept: [f64; 3],
    drift: f64,
    violations: usize,
}

fn run_chain(cfg: &EnsembleConfig, caches: &EnsembleCaches, chain: usize) -> Result<ChainOutput> {
    let mut rng = stream_rng(cfg.seed, chain as u64);
    let candidates: Vec<Field> = caches.solitons.iter().map(|(_, f)| f.clone()).collect();
    let init = init_state(cfg, &candidates, &mut rng)?;
    let mut c = Chain::new(cfg, &init.field, rng)?;
    let mut samples = Vec::new();
    for k in 1..=cfg.n_steps {
        c.step(k <= cfg.burn_in);
        if k == cfg.burn_in {
            c.freeze_adaptation();
        }
        if k > cfg.burn_in && (k - cfg.burn_in) % cfg.thin == 0 {
            samples.push((k, Field::new(cfg.spec, c.values().to_vec())?));
        }
    }
    Ok(ChainOutput {
        samples,
        accept: c.accept_rates(),
        drift: c.max_drift.max(c.observable_gap()),
        violations: c.slab_violations,
    })
}

/// Runs `cfg.chains` chains in parallel, classifies the thinned samples at
/// level `delta` and summarizes. Returns the report and the sample fields.
pub fn sample_ensemble(cfg: &EnsembleConfig, caches: &EnsembleCaches, delta: f64) -> Result<(SampleReport, Vec<Field>)> {
    cfg.validate(None)?;
    if (caches.table_h - cfg.spec.h).abs() > 1e-12 * cfg.spec.h {
        return Err(Error::CacheMiss(format!("caches built for h = {}", caches.table_h)));
    }
    for &m in &caches.k_masses {
        caches.soliton(m)?;
    }
    let outputs: Vec<ChainOutput> = (0..cfg.chains)
        .into_par_iter()
        .map(|c| run_chain(cfg, caches, c))
        .collect::<Result<_>>()?;
    let sp = Spectral::new(cfg.spec);
    let weight = cfg.spec.cell().sqrt();
    let mut jobs = Vec::new();
    for (ci, out) in outputs.iter().enumerate() {
        for (step, f) in &out.samples {
            jobs.push((ci, *step, f));
        }
    }
    let classified: Vec<(SampleRecord, bool)> = jobs
        .par_iter()
        .enumerate()
        .map(|(j, &(chain, step, f))| {
            let o = observables(f, cfg.p)?;
            let mut dist_inf = f64::INFINITY;
            let mut dist_2 = f64::INFINITY;
            for &m in &caches.k_masses {
                let s = caches.soliton(m)?;
                dist_inf = dist_inf.min(pseudometric_with(&sp, f, s, f64::INFINITY)?.distance);
                dist_2 = dist_2.min(weight * pseudometric_with(&sp, f, s, 2.0)?.distance);
            }
            let flags = classify_delta_soliton(f, delta, cfg.e0, cfg.m0, cfg.p, &caches.maximizers)?;
            let mut mismatch = false;
            if j % 100 == 0 {
                let shift: Vec<i64> = (0..cfg.spec.d).map(|a| 3 + 5 * a as i64).collect();
                let g = f.translate(&shift).scale(Complex64::from_polar(1.0, 2.1));
                mismatch = classify_delta_soliton(&g, delta, cfg.e0, cfg.m0, cfg.p, &caches.maximizers)? != flags;
            }
            Ok((
                SampleRecord {
                    chain,
                    step,
                    mass: o.mass,
                    energy: o.hamiltonian,
                    sup_norm: f.max_abs(),
                    dist_inf,
                    dist_2,
                    flags,
                },
                mismatch,
            ))
        })
        .collect::<Result<_>>()?;
    let gauge_mismatches = classified.iter().filter(|x| x.1).count();
    let records: Vec<SampleRecord> = classified.into_iter().map(|x| x.0).collect();
    let n = records.len().max(1) as f64;
    let per_chain = |get: &dyn Fn(&SampleRecord) -> f64| -> Vec<Vec<f64>> {
        (0..cfg.chains)
            .map(|c| records.iter().filter(|r| r.chain == c).map(get).collect())
            .collect()
    };
    let mass_traces = per_chain(&|r| r.mass);
    let sup_traces = per_chain(&|r| r.sup_norm);
    let sups: Vec<f64> = records.iter().map(|r| r.sup_norm).collect();
    let dists: Vec<f64> = records.iter().map(|r| r.dist_inf).collect();
    let report = SampleReport {
        config: cfg.clone(),
        delta,
        k_masses: caches.k_masses.clone(),
        maximizers: caches.maximizers.clone(),
        sup_norm: Quantiles::of(&sups),
        dist_inf: Quantiles::of(&dists),
        fraction_delta_soliton: records.iter().filter(|r| r.flags.delta_soliton).count() as f64 / n,
        fraction_improved: records.iter().filter(|r| r.flags.improved).count() as f64 / n,
        ess_mass: mass_traces.iter().map(|t| effective_sample_size(t)).sum(),
        ess_sup: sup_traces.iter().map(|t| effective_sample_size(t)).sum(),
        rhat_mass: gelman_rubin(&mass_traces),
        rhat_sup: gelman_rubin(&sup_traces),
        accept_rates: outputs.iter().map(|o| o.accept).collect(),
        max_observable_drift: outputs.iter().map(|o| o.drift).fold(0.0, f64::max),
        slab_violations: outputs.iter().map(|o| o.violations).sum(),
        gauge_mismatches,
        table_h: caches.table_h,
        table_n: caches.table_n,
        records,
    };
    let fields = outputs.into_iter().flat_map(|o| o.samples.into_iter().map(|s| s.1)).collect();
    Ok((report, fields))
}
