//! Time integration of `i u' = -Δu - |u|^{p-1} u` on the torus and the
//! time fraction spent away from a reference soliton.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::lattice::{check_power, observables, Field, GridSpec};
use crate::metric::pseudometric_with;
use crate::numerics::median;
use crate::spectral::Spectral;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    SplitStep,
    Rk4,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowConfig {
    pub dt: f64,
    pub t_end: f64,
    pub scheme: Scheme,
    pub p: f64,
    pub record_every: usize,
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        check_power(self.p)?;
        if !(self.dt > 0.0 && self.dt.is_finite()) || !(self.t_end > 0.0) || self.dt > self.t_end {
            return Err(invalid(format!("need 0 < dt ≤ T, got dt = {}, T = {}", self.dt, self.t_end)));
        }
        if self.record_every == 0 {
            return Err(invalid("record_every must be at least 1"));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }
}

/// Reusable integrator for one grid: FFT plans and the neighbor table.
pub struct Integrator {
    spectral: Spectral,
    neighbors: Vec<usize>,
    p: f64,
    scratch: Vec<Complex64>,
}

impl Integrator {
    pub fn new(spec: GridSpec, p: f64) -> Result<Self> {
        check_power(p)?;
        Ok(Integrator {
            spectral: Spectral::new(spec),
            neighbors: spec.neighbor_table(),
            p,
            scratch: Vec::new(),
        })
    }

    pub fn spec(&self) -> &GridSpec {
        self.spectral.spec()
    }

    fn nonlinear_phase(&self, u: &mut [Complex64], t: f64) {
        let e = 0.5 * (self.p - 1.0);
        for v in u.iter_mut() {
            let a = v.norm_sqr().powf(e);
            *v *= Complex64::from_polar(1.0, a * t);
        }
    }

    fn linear(&self, u: &mut [Complex64], t: f64) {
        let spec = self.spectral.spec();
        let ih2 = 1.0 / (spec.h * spec.h);
        let inv = 1.0 / spec.sites() as f64;
        self.spectral.fft_in_place(u, false);
        for (v, &l) in u.iter_mut().zip(self.spectral.eigenvalues()) {
            *v *= Complex64::from_polar(inv, -l * ih2 * t);
        }
        self.spectral.fft_in_place(u, true);
    }

    /// Strang step: half nonlinear phase, full linear flow, half phase.
    pub fn step_splitstep(&self, u: &mut [Complex64], dt: f64) {
        self.nonlinear_phase(u, 0.5 * dt);
        self.linear(u, dt);
        self.nonlinear_phase(u, 0.5 * dt);
    }

    fn rhs(&self, u: &[Complex64], out: &mut [Complex64]) {
        let spec = self.spectral.spec();
        let d = spec.d;
        let ih2 = 1.0 / (spec.h * spec.h);
        let e = 0.5 * (self.p - 1.0);
        for (i, o) in out.iter_mut().enumerate() {
            let mut lap = Complex64::new(0.0, 0.0);
            for k in 0..2 * d {
                lap += u[self.neighbors[2 * d * i + k]];
            }
            lap = (lap - u[i] * (2 * d) as f64) * ih2;
            let nl = u[i] * u[i].norm_sqr().powf(e);
            *o = Complex64::new(0.0, 1.0) * (lap + nl);
        }
    }

    /// Classical RK4. Stable for `dt` up to about `2.8 h²/(4d)`.
    pub fn step_rk4(&mut self, u: &mut [Complex64], dt: f64) {
        let n = u.len();
        let mut s = std::mem::take(&mut self.scratch);
        s.resize(5 * n, Complex64::new(0.0, 0.0));
        let (k1, rest) = s.split_at_mut(n);
        let (k2, rest) = rest.split_at_mut(n);
        let (k3, rest) = rest.split_at_mut(n);
        let (k4, tmp) = rest.split_at_mut(n);
        self.rhs(u, k1);
        for i in 0..n {
            tmp[i] = u[i] + k1[i] * (0.5 * dt);
        }
        self.rhs(tmp, k2);
        for i in 0..n {
            tmp[i] = u[i] + k2[i] * (0.5 * dt);
        }
        self.rhs(tmp, k3);
        for i in 0..n {
            tmp[i] = u[i] + k3[i] * dt;
        }
        self.rhs(tmp, k4);
        for i in 0..n {
            u[i] += (k1[i] + (k2[i] + k3[i]) * 2.0 + k4[i]) * (dt / 6.0);
        }
        self.scratch = s;
    }

    pub fn step(&mut self, u: &mut [Complex64], dt: f64, scheme: Scheme) {
        match scheme {
            Scheme::SplitStep => self.step_splitstep(u, dt),
            Scheme::Rk4 => self.step_rk4(u, dt),
        }
    }
}

pub fn step_splitstep(u: &Field, dt: f64, p: f64) -> Result<Field> {
    let integ = Integrator::new(*u.spec(), p)?;
    let mut v = u.values().to_vec();
    integ.step_splitstep(&mut v, dt);
    Field::new(*u.spec(), v)
}

pub fn step_rk4(u: &Field, dt: f64, p: f64) -> Result<Field> {
    let mut integ = Integrator::new(*u.spec(), p)?;
    let mut v = u.values().to_vec();
    integ.step_rk4(&mut v, dt);
    Field::new(*u.spec(), v)
}

/// Soliton reference for distance tracking.
#[derive(Debug, Clone)]
pub struct Reference {
    pub field: Field,
    pub delta: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryStats {
    pub times: Vec<f64>,
    pub mass: Vec<f64>,
    pub energy: Vec<f64>,
    /// `(M(t) - M(0)) / M(0)`.
    pub mass_drift: Vec<f64>,
    /// `(H(t) - H(0)) / |H(0)|` (absolute when `H(0) = 0`).
    pub energy_drift: Vec<f64>,
    /// `L̃^∞` distance to the reference at each recorded time (sup norms
    /// carry no `h` weight).
    pub distance_series: Vec<f64>,
    pub src_fraction: Option<f64>,
    /// Largest gap between the whole-interval fraction and the average over
    /// unit windows (zero up to rounding when T is an integer).
    pub window_additivity_error: Option<f64>,
}

impl TrajectoryStats {
    pub fn max_mass_drift(&self) -> f64 {
        self.mass_drift.iter().fold(0.0, |a, b| a.max(b.abs()))
    }

    pub fn max_energy_drift(&self) -> f64 {
        self.energy_drift.iter().fold(0.0, |a, b| a.max(b.abs()))
    }
}

/// `(1/T) ∫_0^T 1{dist > δ} dt` with the indicator held constant from each
/// recorded time to the next.
pub fn src_fraction(times: &[f64], distances: &[f64], delta: f64) -> f64 {
    window_fraction(times, distances, delta, times[0], *times.last().unwrap())
}

fn window_fraction(times: &[f64], distances: &[f64], delta: f64, a: f64, b: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let mut s = 0.0;
    for k in 0..times.len() - 1 {
        let lo = times[k].max(a);
        let hi = times[k + 1].min(b);
        if hi > lo && distances[k] > delta {
            s += hi - lo;
        }
    }
    s / (b - a)
}

/// Whole-interval fraction against the mean of the fractions over the unit
/// windows `[j, j+1]` covering `[0, T]` (weighted by window length).
pub fn window_additivity_error(times: &[f64], distances: &[f64], delta: f64) -> f64 {
    let t0 = times[0];
    let t1 = *times.last().unwrap();
    let total = src_fraction(times, distances, delta);
    let mut acc = 0.0;
    let mut a = t0;
    while a < t1 - 1e-12 {
        let b = (a + 1.0).min(t1);
        acc += window_fraction(times, distances, delta, a, b) * (b - a);
        a = b;
    }
    (acc / (t1 - t0) - total).abs()
}

pub fn evolve(u0: &Field, cfg: &FlowConfig, reference: Option<&Reference>) -> Result<(Field, TrajectoryStats)> {
    cfg.validate()?;
    let spec = *u0.spec();
    if let Some(r) = reference {
        spec.check_same(r.field.spec())?;
    }
    let mut integ = Integrator::new(spec, cfg.p)?;
    let obs0 = observables(u0, cfg.p)?;
    let e_scale = if obs0.hamiltonian != 0.0 { obs0.hamiltonian.abs() } else { 1.0 };
    let m_scale = if obs0.mass > 0.0 { obs0.mass } else { 1.0 };
    let mut stats = TrajectoryStats {
        times: Vec::new(),
        mass: Vec::new(),
        energy: Vec::new(),
        mass_drift: Vec::new(),
        energy_drift: Vec::new(),
        distance_series: Vec::new(),
        src_fraction: None,
        window_additivity_error: None,
    };
    let dist_sp = reference.map(|_| Spectral::new(spec));
    let record = |t: f64, u: &[Complex64], stats: &mut TrajectoryStats| -> Result<()> {
        let f = Field::new(spec, u.to_vec()).map_err(|_| Error::Numerical(format!("non-finite field at t = {t}")))?;
        let o = observables(&f, cfg.p)?;
        if !(o.mass <= 4.0 * m_scale + 1.0) {
            return Err(Error::Numerical(format!("mass blow-up at t = {t}: {}", o.mass)));
        }
        stats.times.push(t);
        stats.mass.push(o.mass);
        stats.energy.push(o.hamiltonian);
        stats.mass_drift.push((o.mass - obs0.mass) / m_scale);
        stats.energy_drift.push((o.hamiltonian - obs0.hamiltonian) / e_scale);
        if let Some(r) = reference {
            let dist = pseudometric_with(dist_sp.as_ref().unwrap(), &f, &r.field, f64::INFINITY)?;
            stats.distance_series.push(dist.distance);
        }
        Ok(())
    };
    let mut u = u0.values().to_vec();
    let steps = cfg.steps();
    record(0.0, &u, &mut stats)?;
    for k in 1..=steps {
        integ.step(&mut u, cfg.dt, cfg.scheme);
        if k % cfg.record_every == 0 || k == steps {
            record(k as f64 * cfg.dt, &u, &mut stats)?;
        }
    }
    if let Some(r) = reference {
        stats.src_fraction = Some(src_fraction(&stats.times, &stats.distance_series, r.delta));
        stats.window_additivity_error = Some(window_additivity_error(&stats.times, &stats.distance_series, r.delta));
    }
    Ok((Field::new(spec, u)?, stats))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SrcDistribution {
    pub delta: f64,
    pub t_end: f64,
    pub fractions: Vec<f64>,
    pub median: f64,
    pub below_delta: f64,
    pub max_window_error: f64,
}

/// Evolves every sample and collects its SRC fraction.
pub fn src_experiment(samples: &[Field], cfg: &FlowConfig, reference: &Field, delta: f64) -> Result<SrcDistribution> {
    if samples.is_empty() {
        return Err(invalid("no samples"));
    }
    let r = Reference {
        field: reference.clone(),
        delta,
    };
    let runs: Vec<TrajectoryStats> = samples
        .par_iter()
        .map(|u| evolve(u, cfg, Some(&r)).map(|x| x.1))
        .collect::<Result<_>>()?;
    let fractions: Vec<f64> = runs.iter().map(|s| s.src_fraction.unwrap()).collect();
    let below = fractions.iter().filter(|&&f| f < delta).count() as f64 / fractions.len() as f64;
    Ok(SrcDistribution {
        delta,
        t_end: cfg.t_end,
        median: median(&fractions),
        below_delta: below,
        max_window_error: runs.iter().map(|s| s.window_additivity_error.unwrap()).fold(0.0, f64::max),
        fractions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::linear_fit;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(spec: GridSpec, amp: f64, seed: u64) -> Field {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Field::new(
            spec,
            (0..spec.sites())
                .map(|_| Complex64::new(rng.random_range(-amp..amp), rng.random_range(-amp..amp)))
                .collect(),
        )
        .unwrap()
    }

    fn dist(a: &[Complex64], b: &[Complex64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
    }

    #[test]
    fn splitstep_conserves_mass_and_reverses() {
        let s = GridSpec::new(1, 32, 0.5).unwrap();
        let f = random(s, 1.0, 3);
        let integ = Integrator::new(s, 3.0).unwrap();
        let mut u = f.values().to_vec();
        for _ in 0..10_000 {
            integ.step_splitstep(&mut u, 1e-3);
        }
        let m = Field::new(s, u.clone()).unwrap().mass();
        assert!((m - f.mass()).abs() / f.mass() < 1e-12);
        let mut v = f.values().to_vec();
        integ.step_splitstep(&mut v, 0.01);
        integ.step_splitstep(&mut v, -0.01);
        assert!(dist(&v, f.values()) < 1e-12);
    }

    #[test]
    fn gauge_covariance_and_zero_fixed_point() {
        let s = GridSpec::new(2, 8, 0.5).unwrap();
        let f = random(s, 0.8, 4);
        let c = Complex64::from_polar(1.0, 0.9);
        let a = step_splitstep(&f.scale(c), 0.01, 3.0).unwrap();
        let b = step_splitstep(&f, 0.01, 3.0).unwrap().scale(c);
        assert!(dist(a.values(), b.values()) < 1e-13);
        let z = Field::zeros(s);
        assert_eq!(step_rk4(&z, 0.01, 3.0).unwrap().values(), z.values());
    }

    #[test]
    fn tiny_amplitude_follows_linear_flow() {
        let s = GridSpec::new(1, 64, 0.5).unwrap();
        let f = random(s, 1e-3, 5);
        let cfg = FlowConfig {
            dt: 0.01,
            t_end: 1.0,
            scheme: Scheme::SplitStep,
            p: 3.0,
            record_every: 100,
        };
        let (u, _) = evolve(&f, &cfg, None).unwrap();
        let lin = Spectral::new(s).linear_propagator(&f, 1.0).unwrap();
        assert!(dist(u.values(), lin.values()) < 1e-8);
    }

    #[test]
    fn rk4_mass_drift_small() {
        let s = GridSpec::new(1, 32, 0.5).unwrap();
        let f = random(s, 1.0, 6);
        let cfg = FlowConfig {
            dt: 1e-3,
            t_end: 1.0,
            scheme: Scheme::Rk4,
            p: 3.0,
            record_every: 100,
        };
        let (_, st) = evolve(&f, &cfg, None).unwrap();
        assert!(st.max_mass_drift() < 1e-8);
    }

    #[test]
    fn splitstep_is_second_order() {
        let s = GridSpec::new(1, 32, 0.5).unwrap();
        let f = random(s, 1.0, 7);
        let mut integ = Integrator::new(s, 3.0).unwrap();
        let mut reference = f.values().to_vec();
        for _ in 0..4000 {
            integ.step_rk4(&mut reference, 2.5e-4);
        }
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for k in 0..4 {
            let dt = 0.02 / 2f64.powi(k);
            let mut u = f.values().to_vec();
            for _ in 0..(1.0 / dt).round() as usize {
                integ.step_splitstep(&mut u, dt);
            }
            xs.push(dt.ln());
            ys.push(dist(&u, &reference).ln());
        }
        let (_, slope, _) = linear_fit(&xs, &ys);
        assert!((slope - 2.0).abs() < 0.1, "slope {slope}");
    }

    #[test]
    fn window_average_matches_total() {
        let times: Vec<f64> = (0..=50).map(|k| k as f64 * 0.1).collect();
        let d: Vec<f64> = times.iter().map(|t| (3.0 * t).sin().abs()).collect();
        let f = src_fraction(&times, &d, 0.5);
        assert!((0.0..=1.0).contains(&f));
        assert!(window_additivity_error(&times, &d, 0.5) < 1e-12);
    }
}
