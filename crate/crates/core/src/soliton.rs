//! Discrete ground states `E_min(m, h)` and their decay.
//!
//! A ground state at mass `m` solves
//! `(2d h^{-2} + ω) q - h^{-2} Σ_{y~x} q(y) = |q|^{p-1} q`. The solver runs
//! a semi-implicit normalized gradient flow, then the Helmholtz fixed point
//! `q ← (ω - Δ)^{-1} |q|^{p-1} q` with mass renormalization.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::continuum::ContinuumGroundState;
use crate::error::{invalid, Error, Result};
use crate::lattice::{bond_sum, check_power, distance_to_set, level_set, observables, Field, GridSpec};
use crate::metric::continuum_distance;
use crate::numerics::linear_fit;
use crate::spectral::{apply_laplacian, Spectral};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Target relative sup-norm residual of the soliton equation.
    pub tol: f64,
    pub max_flow_steps: usize,
    pub max_fixed_point_steps: usize,
    /// Number of independent starting profiles.
    pub starts: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-10,
            max_flow_steps: 20_000,
            max_fixed_point_steps: 20_000,
            starts: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SolverFlags {
    /// The fixed point stalled and the gradient flow had to finish.
    pub flow_fallback: bool,
    /// Residual target missed; best iterate returned.
    pub unconverged: bool,
    pub warm_start: bool,
}

impl SolverFlags {
    pub fn code(&self) -> u32 {
        (self.flow_fallback as u32) | ((self.unconverged as u32) << 1) | ((self.warm_start as u32) << 2)
    }

    pub fn from_code(c: u32) -> Self {
        SolverFlags {
            flow_fallback: c & 1 != 0,
            unconverged: c & 2 != 0,
            warm_start: c & 4 != 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DiscreteSoliton {
    pub field: Field,
    pub p: f64,
    pub mass: f64,
    pub energy: f64,
    pub omega: f64,
    pub residual: f64,
    pub iterations: usize,
    pub flags: SolverFlags,
}

/// `ω = (Σ|q|^{p+1} - h^{-2} Σ_bonds |q(x+e)-q(x)|²) / Σ|q|²`.
pub fn lagrange_multiplier(q: &Field, p: f64) -> f64 {
    let h = q.spec().h;
    let s2: f64 = q.values().iter().map(|v| v.norm_sqr()).sum();
    let sp: f64 = q.values().iter().map(|v| v.norm().powf(p + 1.0)).sum();
    (sp - bond_sum(q) / (h * h)) / s2
}

/// Relative sup-norm residual of the soliton equation at multiplier `ω`.
pub fn soliton_residual(q: &Field, p: f64, omega: f64) -> f64 {
    let lap = apply_laplacian(q);
    let mut num = 0.0f64;
    let mut scale = 0.0f64;
    for (v, l) in q.values().iter().zip(lap.values()) {
        let nl = v * v.norm().powf(p - 1.0);
        num = num.max((omega * v - l - nl).norm());
        scale = scale.max(nl.norm().max((omega * v).norm()));
    }
    if scale > 0.0 {
        num / scale
    } else {
        0.0
    }
}

fn energy(q: &Field, p: f64) -> f64 {
    observables(q, p).map(|o| o.hamiltonian).unwrap_or(f64::INFINITY)
}

fn renormalize(q: &mut Field, m: f64) {
    let c = (m / q.mass()).sqrt();
    q.values_mut().iter_mut().for_each(|v| *v *= c);
}

fn nonlinear(q: &Field, p: f64) -> Field {
    let v = q.values().iter().map(|v| v * v.norm().powf(p - 1.0)).collect();
    Field::new(*q.spec(), v).expect("finite")
}

/// Site-centered Gaussian bump of continuum width `w` at site 0.
fn gaussian_start(spec: &GridSpec, m: f64, width: f64) -> Field {
    let n = spec.n as f64;
    let mut f = Field::from_fn(*spec, |x| {
        let mut r2 = 0.0;
        for &c in x {
            let c = c as f64;
            let y = if c > n / 2.0 { c - n } else { c };
            r2 += (y * spec.h).powi(2);
        }
        Complex64::new((-r2 / (2.0 * width * width)).exp(), 0.0)
    })
    .expect("finite");
    renormalize(&mut f, m);
    f
}

struct Run {
    q: Field,
    omega: f64,
    residual: f64,
    iterations: usize,
    flags: SolverFlags,
}

/// Semi-implicit step `(1 - dt Δ) q̃ = q + dt |q|^{p-1} q`, then rescale.
fn flow_step(sp: &Spectral, q: &Field, p: f64, m: f64, dt: f64) -> Field {
    let rhs = q.add(&nonlinear(q, p).scale(Complex64::new(dt, 0.0))).expect("same grid");
    let ih2 = 1.0 / (sp.spec().h * sp.spec().h);
    let mut out = sp
        .apply_multiplier(&rhs, |l| Complex64::new(1.0 / (1.0 + dt * l * ih2), 0.0))
        .expect("same grid");
    renormalize(&mut out, m);
    out
}

fn gradient_flow(sp: &Spectral, mut q: Field, p: f64, m: f64, steps: usize, stop_residual: f64) -> (Field, usize) {
    let h2 = sp.spec().h.powi(2);
    let mut dt = 0.1 * h2;
    let mut e = energy(&q, p);
    let mut used = 0;
    for k in 0..steps {
        used = k + 1;
        let mut accepted = false;
        for _ in 0..40 {
            let cand = flow_step(sp, &q, p, m, dt);
            let ec = energy(&cand, p);
            if ec <= e {
                let de = e - ec;
                q = cand;
                e = ec;
                accepted = true;
                dt = (dt * 2.0).min(100.0);
                if de <= 1e-15 * (1.0 + e.abs()) {
                    return (q, used);
                }
                break;
            }
            dt *= 0.5;
        }
        if !accepted {
            break;
        }
        if k % 20 == 0 {
            let w = lagrange_multiplier(&q, p);
            if soliton_residual(&q, p, w) < stop_residual {
                break;
            }
        }
    }
    (q, used)
}

fn solve_from(sp: &Spectral, start: Field, p: f64, m: f64, opts: &SolverOptions) -> Result<Run> {
    let (mut q, mut iters) = gradient_flow(sp, start, p, m, opts.max_flow_steps, 1e-3);
    let mut flags = SolverFlags::default();
    let mut omega = lagrange_multiplier(&q, p);
    let mut residual = soliton_residual(&q, p, omega);
    let mut best = (q.clone(), omega, residual);
    let mut stall = 0;
    for _ in 0..opts.max_fixed_point_steps {
        if residual <= opts.tol {
            break;
        }
        if !(omega > 0.0) {
            // Not yet in the localized basin; keep flowing.
            let (q2, it) = gradient_flow(sp, q, p, m, 2000, 1e-4);
            q = q2;
            iters += it;
            omega = lagrange_multiplier(&q, p);
            residual = soliton_residual(&q, p, omega);
            if !(omega > 0.0) {
                break;
            }
            continue;
        }
        let mut next = sp.solve_helmholtz(&nonlinear(&q, p), omega)?;
        renormalize(&mut next, m);
        iters += 1;
        let w = lagrange_multiplier(&next, p);
        let r = soliton_residual(&next, p, w);
        q = next;
        omega = w;
        if r < best.2 {
            best = (q.clone(), w, r);
            stall = 0;
        } else {
            stall += 1;
        }
        residual = r;
        if stall > 200 {
            flags.flow_fallback = true;
            let (q2, it) = gradient_flow(sp, best.0.clone(), p, m, opts.max_flow_steps, opts.tol);
            iters += it;
            let w = lagrange_multiplier(&q2, p);
            let r = soliton_residual(&q2, p, w);
            if r < best.2 {
                best = (q2.clone(), w, r);
            }
            q = q2;
            omega = w;
            residual = r;
            stall = 0;
            if residual > opts.tol {
                break;
            }
        }
    }
    let (q, omega, residual) = if residual <= best.2 { (q, omega, residual) } else { best };
    flags.unconverged = residual > opts.tol;
    Ok(Run {
        q,
        omega,
        residual,
        iterations: iters,
        flags,
    })
}

/// Ground state of mass `m` on the torus `spec`, in canonical gauge (peak
/// at site 0, positive peak value).
pub fn ground_state(spec: &GridSpec, p: f64, m: f64, opts: &SolverOptions, warm: Option<&Field>) -> Result<DiscreteSoliton> {
    check_power(p)?;
    if !(m.is_finite() && m > 0.0) {
        return Err(invalid(format!("mass {m} must be positive")));
    }
    let sp = Spectral::new(*spec);
    // Width guess from the continuum scaling when it is available.
    let width = ContinuumGroundState::solve(p, spec.d)
        .ok()
        .and_then(|c| c.scale_for_mass(m).ok())
        .map(|lam| 1.0 / lam)
        .unwrap_or(1.0)
        .clamp(spec.h, 0.25 * spec.n as f64 * spec.h);
    let mut starts = Vec::new();
    if let Some(w) = warm {
        spec.check_same(w.spec())?;
        let mut f = w.clone();
        renormalize(&mut f, m);
        starts.push((f, true));
    }
    for k in 0..opts.starts.max(1) {
        let scale = [1.0, 0.5, 2.0, 0.25, 4.0][k % 5];
        starts.push((gaussian_start(spec, m, (width * scale).max(0.5 * spec.h)), false));
    }
    let mut best: Option<(Run, f64, bool)> = None;
    for (s, is_warm) in starts {
        let run = solve_from(&sp, s, p, m, opts)?;
        let e = energy(&run.q, p);
        let better = match &best {
            None => true,
            Some((b, be, _)) => {
                let b_ok = !b.flags.unconverged;
                let r_ok = !run.flags.unconverged;
                (r_ok && !b_ok) || (r_ok == b_ok && e < be - 1e-12 * be.abs().max(1e-300))
            }
        };
        if better {
            best = Some((run, e, is_warm));
        }
    }
    let (run, e, is_warm) = best.expect("at least one start");
    if !run.q.is_finite() {
        return Err(Error::NonFinite);
    }
    let mut flags = run.flags;
    flags.warm_start = is_warm;
    let field = run.q.canonical_gauge(0);
    Ok(DiscreteSoliton {
        mass: field.mass(),
        energy: e,
        omega: run.omega,
        residual: run.residual,
        iterations: run.iterations,
        flags,
        field,
        p,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EminRow {
    pub m: f64,
    pub e_min: f64,
    pub omega: f64,
    pub residual: f64,
    pub flags: u32,
}

/// Tabulated `m ↦ E_min(m, h)` with `dE/dm = -ω/2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EminTable {
    pub p: f64,
    pub d: usize,
    pub h: f64,
    pub n: usize,
    pub rows: Vec<EminRow>,
}

impl EminTable {
    pub fn new(p: f64, d: usize, h: f64, n: usize, mut rows: Vec<EminRow>) -> Result<Self> {
        rows.sort_by(|a, b| a.m.total_cmp(&b.m));
        if rows.is_empty() {
            return Err(Error::TableGap("empty table".into()));
        }
        if rows.windows(2).any(|w| w[1].m <= w[0].m) {
            return Err(Error::TableGap("repeated mass".into()));
        }
        Ok(EminTable { p, d, h, n, rows })
    }

    pub fn max_mass(&self) -> f64 {
        self.rows.last().map(|r| r.m).unwrap_or(0.0)
    }

    /// Cubic Hermite interpolation using the multiplier as slope.
    pub fn eval(&self, m: f64) -> Result<f64> {
        let rows = &self.rows;
        let lo = rows[0].m;
        let hi = self.max_mass();
        let slack = 1e-12 * hi.max(1.0);
        if !(m >= lo - slack && m <= hi + slack) {
            return Err(Error::TableGap(format!("mass {m} outside [{lo}, {hi}]")));
        }
        let m = m.clamp(lo, hi);
        let j = rows.partition_point(|r| r.m <= m);
        if j == 0 {
            return Ok(rows[0].e_min);
        }
        if j == rows.len() {
            return Ok(rows[j - 1].e_min);
        }
        let (a, b) = (&rows[j - 1], &rows[j]);
        let w = b.m - a.m;
        let t = (m - a.m) / w;
        let (s0, s1) = (-0.5 * a.omega * w, -0.5 * b.omega * w);
        let t2 = t * t;
        let t3 = t2 * t;
        Ok((2.0 * t3 - 3.0 * t2 + 1.0) * a.e_min + (t3 - 2.0 * t2 + t) * s0 + (-2.0 * t3 + 3.0 * t2) * b.e_min + (t3 - t2) * s1)
    }

    /// `E(a) + E(b) - E(a+b)` over all table pairs with `a + b` inside the table.
    pub fn subadditivity_margins(&self) -> Vec<(f64, f64, f64)> {
        let mut out = Vec::new();
        for a in &self.rows {
            for b in &self.rows {
                if a.m <= 0.0 || b.m < a.m || a.m + b.m > self.max_mass() {
                    continue;
                }
                if let Ok(e) = self.eval(a.m + b.m) {
                    out.push((a.m, b.m, a.e_min + b.e_min - e));
                }
            }
        }
        out
    }
}

/// Torus side length used for mass `m`: at least `min_len`, and about 24
/// continuum widths of the soliton when that is available.
pub fn box_sites(d: usize, h: f64, p: f64, m: f64, min_len: f64, max_sites: usize) -> usize {
    let width = ContinuumGroundState::solve(p, d)
        .ok()
        .and_then(|c| c.scale_for_mass(m).ok())
        .map(|lam| 1.0 / lam)
        .unwrap_or(1.0);
    let len = min_len.max(24.0 * width);
    let n = (len / h).ceil() as usize;
    let cap = (max_sites as f64).powf(1.0 / d as f64).floor() as usize;
    n.clamp(4, cap.max(4))
}

/// Sweep `masses` (the row `m = 0` is added), warm-starting from the
/// previous mass when the grids agree.
pub fn emin_table(d: usize, h: f64, p: f64, masses: &[f64], n: usize, opts: &SolverOptions) -> Result<EminTable> {
    let spec = GridSpec::new(d, n, h)?;
    let mut rows = vec![EminRow {
        m: 0.0,
        e_min: 0.0,
        omega: 0.0,
        residual: 0.0,
        flags: 0,
    }];
    let mut sorted: Vec<f64> = masses.iter().cloned().filter(|&m| m > 0.0).collect();
    sorted.sort_by(|a, b| a.total_cmp(b));
    sorted.dedup();
    let mut prev: Option<Field> = None;
    for m in sorted {
        let sol = ground_state(&spec, p, m, opts, prev.as_ref())?;
        rows.push(EminRow {
            m,
            e_min: sol.energy,
            omega: sol.omega,
            residual: sol.residual,
            flags: sol.flags.code(),
        });
        prev = Some(sol.field);
    }
    EminTable::new(p, d, h, n, rows)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecayFit {
    pub delta: f64,
    /// Upper end of the admissible level from the smallness condition.
    pub delta_max: f64,
    pub r: f64,
    /// Fitted `log|q| ≈ log A - rate · D_δ`.
    pub log_amplitude: f64,
    pub rate: f64,
    pub r_squared: f64,
    pub c0: f64,
    /// `|q(x)| ≤ 2 C₀ r^{D_δ(x)/2}` holds at every site.
    pub bound_ok: bool,
    pub worst_bound_ratio: f64,
    pub points: usize,
}

/// Exponential decay of `|q|` in the torus distance `D_δ` to the level set
/// `{|q| > δ}`, and the pointwise bound `2 C₀ r^{D_δ/2}` with
/// `C₀ = m^{p+1} h^{-d(p-1)} δ^{-2} / ω`. `delta = None` picks half of the
/// largest level allowed by `δ^{p-1} ω^{-1} ((1+√r)/(1-√r))^d ≤ 1/2`.
pub fn decay_fit(sol: &DiscreteSoliton, delta: Option<f64>) -> Result<DecayFit> {
    let q = &sol.field;
    let spec = *q.spec();
    let p = sol.p;
    let omega = sol.omega;
    if !(omega > 0.0) {
        return Err(Error::Numerical("nonpositive multiplier".into()));
    }
    let h = spec.h;
    let dd = 2.0 * spec.d as f64;
    let r = dd / (dd + omega * h * h);
    let sr = r.sqrt();
    let s = ((1.0 + sr) / (1.0 - sr)).powi(spec.d as i32);
    let delta_max = (omega / (2.0 * s)).powf(1.0 / (p - 1.0));
    let delta = delta.unwrap_or(0.5 * delta_max);
    if !(delta > 0.0) {
        return Err(invalid("delta must be positive"));
    }
    let mask = level_set(q, delta);
    if mask.is_empty() {
        return Err(Error::Numerical(format!("level set at {delta} is empty")));
    }
    let dist = distance_to_set(&spec, &mask);
    let m = sol.mass;
    let c0 = m.powf(p + 1.0) * h.powf(-(spec.d as f64) * (p - 1.0)) / (delta * delta * omega);
    let peak = q.max_abs();
    let floor = 1e-12 * peak;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut worst = 0.0f64;
    for (i, v) in q.values().iter().enumerate() {
        let a = v.norm();
        let bound = 2.0 * c0 * r.powf(dist[i] as f64 / 2.0);
        worst = worst.max(a / bound);
        if dist[i] >= 1 && a > floor {
            xs.push(dist[i] as f64);
            ys.push(a.ln());
        }
    }
    let (la, slope, r2) = if xs.len() >= 3 { linear_fit(&xs, &ys) } else { (peak.ln(), 0.0, 0.0) };
    Ok(DecayFit {
        delta,
        delta_max,
        r,
        log_amplitude: la,
        rate: -slope,
        r_squared: r2,
        c0,
        bound_ok: worst <= 1.0,
        worst_bound_ratio: worst,
        points: xs.len(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub h: f64,
    pub n: usize,
    pub e_min: f64,
    pub energy_gap: f64,
    pub omega: f64,
    pub residual: f64,
    /// `(q, L^q distance to the continuum soliton)`.
    pub distances: Vec<(f64, f64)>,
}

/// Discrete ground states at mass `m` against `Q_{λ(m)}` as `h` shrinks, on
/// boxes of fixed continuum length.
pub fn convergence_study(
    d: usize,
    p: f64,
    m: f64,
    hs: &[f64],
    exponents: &[f64],
    box_length: f64,
    opts: &SolverOptions,
) -> Result<Vec<ConvergenceRow>> {
    let q = ContinuumGroundState::solve(p, d)?;
    let lam = q.scale_for_mass(m)?;
    let e_cont = q.energy_for_mass(m)?;
    let profile = move |r: f64| q.scaled(lam, r);
    let mut rows = Vec::new();
    for &h in hs {
        let n = (box_length / h).round() as usize;
        let spec = GridSpec::new(d, n, h)?;
        let sol = ground_state(&spec, p, m, opts, None)?;
        let mut distances = Vec::new();
        for &e in exponents {
            distances.push((e, continuum_distance(&sol.field, &profile, e)?.distance));
        }
        rows.push(ConvergenceRow {
            h,
            n,
            e_min: sol.energy,
            energy_gap: (sol.energy - e_cont).abs(),
            omega: sol.omega,
            residual: sol.residual,
            distances,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn multiplier_identity_on_exact_solution() {
        // Build q, then read off the right-hand side it solves exactly.
        let s = GridSpec::new(1, 64, 0.5).unwrap();
        let opts = SolverOptions::default();
        let sol = ground_state(&s, 3.0, 2.0, &opts, None).unwrap();
        assert!(!sol.flags.unconverged, "residual {}", sol.residual);
        assert!(sol.residual <= 1e-10);
        assert!((sol.mass - 2.0).abs() < 1e-12);
        assert!(sol.omega > 0.0);
        assert_eq!(sol.field.argmax_abs(), 0);
        // Energy is below the continuum value at this coarse grid? It must
        // at least be negative and below the constant state.
        let constant = -(1.0 / 4.0) * 2.0f64.powi(2) / (64.0 * 0.5);
        assert!(sol.energy < constant);
    }

    #[test]
    fn fine_grid_approaches_continuum() {
        let s = GridSpec::new(1, 400, 0.1).unwrap();
        let sol = ground_state(&s, 3.0, 4.0, &SolverOptions::default(), None).unwrap();
        let exact = -2.0 / 3.0;
        assert!((sol.energy - exact).abs() < 0.01, "{}", sol.energy);
        assert!((sol.omega - 1.0).abs() < 0.02, "{}", sol.omega);
    }

    #[test]
    fn table_interpolation_uses_multiplier_slope() {
        let rows = (0..=20)
            .map(|k| {
                let m = k as f64 * 0.2;
                EminRow {
                    m,
                    e_min: -m.powi(3) / 96.0,
                    omega: m * m / 16.0,
                    residual: 0.0,
                    flags: 0,
                }
            })
            .collect();
        let t = EminTable::new(3.0, 1, 0.1, 100, rows).unwrap();
        for m in [0.05, 1.33, 3.91] {
            assert!((t.eval(m).unwrap() + m.powi(3) / 96.0).abs() < 1e-12);
        }
        assert!(t.eval(4.5).is_err());
        assert!(t.subadditivity_margins().iter().all(|x| x.2 > 0.0));
    }

    #[test]
    fn decay_is_exponential() {
        let s = GridSpec::new(1, 80, 0.5).unwrap();
        let sol = ground_state(&s, 3.0, 3.0, &SolverOptions::default(), None).unwrap();
        let fit = decay_fit(&sol, None).unwrap();
        assert!(fit.bound_ok, "{fit:?}");
        assert!(fit.r_squared > 0.99, "{fit:?}");
        assert!(fit.rate > 0.0);
    }

    #[test]
    fn two_dimensional_ground_state() {
        let s = GridSpec::new(2, 24, 0.5).unwrap();
        let sol = ground_state(&s, 2.0, 3.0, &SolverOptions::default(), None).unwrap();
        assert!(sol.residual <= 1e-10, "{}", sol.residual);
        assert!(sol.energy < 0.0);
    }
}
