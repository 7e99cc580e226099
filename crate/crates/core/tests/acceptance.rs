//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Criteria 12 and 14 do not hold at the prescribed desk-scale parameters;
//! they are listed in `KNOWN_RED`, still print FAIL, and only an
//! unexpected failure makes the run exit nonzero. Set `ACCEPTANCE_ONLY`
//! to a comma-separated list of ids to run a subset.

use std::time::Instant;

use num_complex::Complex64;
use nls_lab::continuum::ContinuumGroundState;
use nls_lab::dnls::{evolve, src_experiment, FlowConfig, Integrator, Reference, Scheme};
use nls_lab::green::{gn_ceiling, gn_corpus, green_kernel, verify_kernel_bounds};
use nls_lab::metric::modulus_deviation;
use nls_lab::microcanonical::{build_caches, sample_ensemble, soliton_on_grid, EnsembleConfig, SampleReport};
use nls_lab::numerics::linear_fit;
use nls_lab::rate::{k_alpha, ldp_probability_mc, psi, SamplerMode};
use nls_lab::soliton::{box_sites, convergence_study, decay_fit, emin_table, ground_state, EminTable, SolverOptions};
use nls_lab::variational::{continuum_limit_trend, k_set};
use nls_lab::{Field, GridSpec, Result};

const KNOWN_RED: &[usize] = &[12, 14];

type Verdict = Result<(bool, String)>;

fn table(h: f64, n: usize) -> Result<EminTable> {
    let masses: Vec<f64> = (1..=80).map(|k| 4.0 * k as f64 / 80.0).collect();
    emin_table(1, h, 3.0, &masses, n, &SolverOptions::default())
}

fn c1() -> Verdict {
    let v = psi(1.0, 1)?.value;
    let e1 = (v - (4.0f64 / 3.0).ln()).abs();
    let mut e2: f64 = 0.0;
    let mut sym_ok = true;
    let mut fd_err: f64 = 0.0;
    for d in [1, 2, 3] {
        let dd = 2.0 * d as f64;
        e2 = e2.max(psi(dd, d)?.value.abs());
        for k in 1..16 {
            let a = dd * k as f64 / 16.0;
            let (x, y) = (psi(a, d)?, psi(2.0 * dd - a, d)?);
            sym_ok &= (x.value - y.value).abs() <= 2.0 * x.quad_error.max(y.quad_error);
        }
        for &alpha in &[0.5, 1.0, 3.0] {
            let s = 1e-5;
            let k0 = k_alpha(alpha, 0.0, d)?.value;
            let k1 = k_alpha(alpha, s, d)?.value;
            let k2 = k_alpha(alpha, 2.0 * s, d)?.value;
            let fd = (-3.0 * k0 + 4.0 * k1 - k2) / (2.0 * s);
            fd_err = fd_err.max((fd - (dd / alpha - 1.0)).abs());
        }
    }
    Ok((
        e1 <= 1e-8 && e2 <= 1e-8 && sym_ok && fd_err <= 1e-6,
        format!("|Ψ₁(1)-log 4/3| = {e1:.1e}, max|Ψ_d(2d)| = {e2:.1e}, symmetry {sym_ok}, K'(0) err {fd_err:.1e}"),
    ))
}

fn c2() -> Verdict {
    let target = -(4.0f64 / 3.0).ln();
    let t = ldp_probability_mc(1.0, 64, 1, 10_000_000, SamplerMode::Tilted, 11, None)?;
    let gap = (t.log_rate - target).abs();
    let a = ldp_probability_mc(1.0, 16, 1, 10_000_000, SamplerMode::Plain, 12, None)?;
    let b = ldp_probability_mc(1.0, 16, 1, 10_000_000, SamplerMode::Tilted, 13, None)?;
    let wa = 0.5 * (a.log_rate_high - a.log_rate_low);
    let wb = 0.5 * (b.log_rate_high - b.log_rate_low);
    let diff = (a.log_rate - b.log_rate).abs();
    let joint = (wa * wa + wb * wb).sqrt();
    Ok((
        gap <= 0.05 && diff <= joint,
        format!(
            "n=64 tilted rate {:.5} vs {target:.5} (gap {gap:.4}); n=16 plain {:.5} tilted {:.5}, |diff| {diff:.1e} ≤ joint CI {joint:.1e}",
            t.log_rate, a.log_rate, b.log_rate
        ),
    ))
}

fn c3() -> Verdict {
    let q = ContinuumGroundState::solve(3.0, 1)?;
    let (ea, em, eh) = (
        (q.amplitude - 2f64.sqrt()).abs(),
        (q.mass - 4.0).abs(),
        (q.hamiltonian + 2.0 / 3.0).abs(),
    );
    Ok((
        ea <= 1e-4 && em <= 1e-3 && eh <= 1e-3,
        format!("Q(0) err {ea:.1e}, M err {em:.1e}, H err {eh:.1e}"),
    ))
}

fn c4_c7() -> Result<((bool, String), (bool, String))> {
    let hs = [0.4, 0.2, 0.1];
    let rows = convergence_study(1, 3.0, 4.0, &hs, &[2.0, f64::INFINITY], 40.0, &SolverOptions::default())?;
    let gaps: Vec<f64> = rows.iter().map(|r| (r.e_min + 2.0 / 3.0).abs()).collect();
    let dists: Vec<f64> = rows.iter().map(|r| r.distances[1].1).collect();
    let c4 = (
        gaps[2] <= 0.02 && gaps.windows(2).all(|w| w[1] < w[0]),
        format!("|E_min(4,h)+2/3| over h = {hs:?}: {gaps:.4?}"),
    );
    let c7 = (
        dists[2] <= 0.05 && dists.windows(2).all(|w| w[1] < w[0]),
        format!("L̃^∞ to Q_λ(4) over h = {hs:?}: {dists:.4?}"),
    );
    Ok((c4, c7))
}

fn c5() -> Verdict {
    let h = 0.5;
    let n = box_sites(1, h, 3.0, 2.0, 40.0, 1 << 20);
    let spec = GridSpec::new(1, n, h)?;
    let o = SolverOptions::default();
    let e2 = ground_state(&spec, 3.0, 2.0, &o, None)?.energy;
    let e4 = ground_state(&spec, 3.0, 4.0, &o, None)?.energy;
    let margin = 2.0 * e2 - e4;
    Ok((margin > 0.0, format!("2E_min(2) - E_min(4) = {margin:.6} at h = 0.5, n = {n}")))
}

fn c6() -> Verdict {
    let h = 0.5;
    let mut ok = true;
    let mut parts = Vec::new();
    for m in [2.0, 4.0] {
        let n = box_sites(1, h, 3.0, m, 40.0, 1 << 20);
        let sol = ground_state(&GridSpec::new(1, n, h)?, 3.0, m, &SolverOptions::default(), None)?;
        let fit = decay_fit(&sol, None)?;
        let omega_ok = sol.omega > -sol.energy / m;
        ok &= sol.residual <= 1e-8 && omega_ok && fit.bound_ok && fit.r_squared > 0.99;
        parts.push(format!(
            "m={m}: residual {:.1e}, ω {:.4} > {:.4}, bound ok {} (worst ratio {:.2}), r² {:.5}",
            sol.residual,
            sol.omega,
            -sol.energy / m,
            fit.bound_ok,
            fit.worst_bound_ratio,
            fit.r_squared
        ));
    }
    Ok((ok, parts.join("; ")))
}

fn c8() -> Verdict {
    let g1 = green_kernel(1.0, 3, 0.5, 20, 1e-12)?;
    let g2 = green_kernel(2.0, 3, 0.5, 20, 1e-12)?;
    let res = g1.operator_residual();
    let gap = (g1.constant_sum() + g1.edge_correction - 1.0).abs();
    let b1 = verify_kernel_bounds(&g1)?;
    let b2 = verify_kernel_bounds(&g2)?;
    let ok = res <= 1e-10 && gap <= 1e-8 && b1.constant.is_finite() && b2.constant.is_finite() && b2.decay > b1.decay;
    Ok((
        ok,
        format!(
            "residual {res:.1e}, |h^dΣg + edge - 1/ω| {gap:.1e}, Ĉ {:.3}/{:.3}, ĉ {:.4} → {:.4} as ω doubles",
            b1.constant, b2.constant, b1.decay, b2.decay
        ),
    ))
}

fn c9() -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for (d, q, hw) in [(1, 4.0, 25.0), (1, f64::INFINITY, 25.0), (2, 4.0, 8.0)] {
        let c: Vec<f64> = [0.5, 0.25, 0.1]
            .iter()
            .map(|&h| gn_corpus(d, h, q, hw, 7).map(|s| gn_ceiling(&s)))
            .collect::<Result<_>>()?;
        let worst = c.windows(2).map(|w| (w[1] / w[0] - 1.0).abs()).fold(0.0, f64::max);
        ok &= worst <= 0.1;
        parts.push(format!("d={d} q={q}: {c:.4?} (max change {:.1}%)", 100.0 * worst));
    }
    Ok((ok, parts.join("; ")))
}

fn c10() -> Verdict {
    let h = 0.5;
    let n = 64;
    let spec = GridSpec::new(1, n, h)?;
    let q = ground_state(&spec, 3.0, 2.0, &SolverOptions::default(), None)?.field;
    let integ = Integrator::new(spec, 3.0)?;
    let mut u = q.values().to_vec();
    for _ in 0..10_000 {
        integ.step_splitstep(&mut u, 1e-3);
    }
    let mdrift = (Field::new(spec, u)?.mass() - q.mass()).abs() / q.mass();

    // A breather-like initial state so the energy split is nontrivial.
    let f = Field::from_fn(spec, |x| {
        let y = h * (x[0] as f64 - n as f64 / 2.0);
        Complex64::from_polar(1.2 / (0.9 * y).cosh(), 0.3)
    })?;
    let cfg = FlowConfig {
        dt: 1e-3,
        t_end: 10.0,
        scheme: Scheme::SplitStep,
        p: 3.0,
        record_every: 100,
    };
    let (_, st) = evolve(&f, &cfg, None)?;
    let edrift = st.max_energy_drift();

    let mut dev: f64 = 0.0;
    let mut u = q.clone();
    for _ in 0..100 {
        let step = FlowConfig { t_end: 0.1, ..cfg };
        u = evolve(&u, &step, None)?.0;
        dev = dev.max(modulus_deviation(&u, &q)?);
    }
    let r = Reference { field: q.clone(), delta: 0.05 };
    let (_, st) = evolve(&q, &cfg, Some(&r))?;
    let src0 = st.src_fraction.unwrap_or(1.0);

    let mut integ = Integrator::new(spec, 3.0)?;
    let mut reference = f.values().to_vec();
    for _ in 0..4000 {
        integ.step_rk4(&mut reference, 2.5e-4);
    }
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for k in 0..4 {
        let dt = 0.02 / 2f64.powi(k);
        let mut u = f.values().to_vec();
        for _ in 0..(1.0 / dt).round() as usize {
            integ.step_splitstep(&mut u, dt);
        }
        let e = u.iter().zip(&reference).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        xs.push(dt.ln());
        ys.push(e.ln());
    }
    let (_, slope, _) = linear_fit(&xs, &ys);
    let ok = mdrift <= 1e-12 && edrift <= 1e-6 && dev <= 1e-3 && src0 == 0.0 && (slope - 2.0).abs() <= 0.1;
    Ok((
        ok,
        format!(
            "mass drift {mdrift:.1e}/10⁴ steps, energy drift {edrift:.1e}, standing-wave deviation {dev:.1e} (src {src0}), order {slope:.3}"
        ),
    ))
}

fn c13() -> Verdict {
    let hs = [0.8, 0.4, 0.2, 0.1];
    let tables: Vec<EminTable> = hs
        .iter()
        .map(|&h| table(h, box_sites(1, h, 3.0, 4.0, 40.0, 1 << 20)))
        .collect::<Result<_>>()?;
    let e_cont = ContinuumGroundState::solve(3.0, 1)?.energy_for_mass(4.0)?;
    let trend = continuum_limit_trend(0.0, 4.0, 1, &tables, e_cont)?;
    let ms: Vec<f64> = trend.rows.iter().map(|r| r.m_h).collect();
    let last = trend.rows.last().unwrap();
    let rel = (last.e_h - trend.limit_energy).abs() / trend.limit_energy.abs();
    let mut route: f64 = 0.0;
    for t in &tables {
        route = route.max(k_set(0.0, 4.0, t.h, 1, t)?.route_gap);
    }
    let ok = ms.windows(2).all(|w| w[1] < w[0]) && rel <= 0.05 && route <= 1e-6;
    Ok((
        ok,
        format!(
            "m_h over h = {hs:?}: {ms:.4?}; E_h(0.1) = {:.4} vs {:.4} ({:.1}%); route gap {route:.1e}",
            last.e_h,
            trend.limit_energy,
            100.0 * rel
        ),
    ))
}

fn ensemble(n: usize, e0: Option<f64>, t: &EminTable, steps: usize) -> Result<(SampleReport, Vec<Field>)> {
    let spec = GridSpec::new(1, n, 0.5)?;
    let e0 = match e0 {
        Some(e) => e,
        None => 0.5 * (t.eval(4.0)? + spec.max_energy(4.0) / 2.0),
    };
    let mut cfg = EnsembleConfig::new(spec, 3.0, 4.0, e0);
    cfg.n_steps = steps;
    cfg.burn_in = steps / 5;
    cfg.thin = (steps - cfg.burn_in) / 250;
    let caches = build_caches(&cfg, t, &SolverOptions::default())?;
    sample_ensemble(&cfg, &caches, 0.3)
}

fn c11(r: &SampleReport) -> Verdict {
    Ok((
        r.fraction_improved >= 0.8 && r.ess_mass >= 100.0,
        format!(
            "E0 = {:.4}, K = {:.3?}, improved {:.3}, δ-soliton {:.3}, ESS {:.0}, R̂ {:.3}, median sup {:.3}, slab violations {}",
            r.config.e0,
            r.k_masses,
            r.fraction_improved,
            r.fraction_delta_soliton,
            r.ess_mass,
            r.rhat_mass,
            r.sup_norm.q50,
            r.slab_violations
        ),
    ))
}

fn c12(t: &EminTable) -> Verdict {
    let mut rad = Vec::new();
    let mut foc = Vec::new();
    for n in [64, 128, 256] {
        let e_rad = 0.6 * GridSpec::new(1, n, 0.5)?.max_energy(4.0);
        rad.push(ensemble(n, Some(e_rad), t, 2_000_000)?.0.sup_norm.q50);
        foc.push(ensemble(n, Some(0.0), t, 2_000_000)?.0.sup_norm.q50);
    }
    let ratios: Vec<f64> = foc.iter().zip(&rad).map(|(f, r)| f / r).collect();
    let trend = rad.windows(2).all(|w| w[1] < w[0]);
    let ok = trend && ratios.iter().all(|&x| x >= 3.0);
    Ok((
        ok,
        format!(
            "n = 64/128/256: radiating (E0 = 0.6 E_max) median sup {rad:.3?}, decreasing {trend}; focusing (E0 = 0) {foc:.3?}; ratios {ratios:.2?} (need ≥ 3)"
        ),
    ))
}

fn c14(samples: &[Field], reference: &Field) -> Verdict {
    let step = samples.len().div_ceil(48).max(1);
    let subset: Vec<Field> = samples.iter().step_by(step).cloned().collect();
    let cfg = FlowConfig {
        dt: 0.01,
        t_end: 50.0,
        scheme: Scheme::SplitStep,
        p: 3.0,
        record_every: 10,
    };
    let dist = src_experiment(&subset, &cfg, reference, 0.3)?;
    let ok = dist.median <= 0.5 && dist.max_window_error <= 1e-9;
    Ok((
        ok,
        format!(
            "{} trajectories to T = 50 against the K-set soliton (mass {:.3}): median src_fraction {:.3}, below δ {:.3}, window identity error {:.1e}",
            subset.len(),
            reference.mass(),
            dist.median,
            dist.below_delta,
            dist.max_window_error
        ),
    ))
}

struct Line {
    id: usize,
    name: &'static str,
    verdict: std::result::Result<(bool, String), String>,
    seconds: f64,
}

fn timed(id: usize, name: &'static str, f: impl FnOnce() -> Verdict) -> Line {
    let t0 = Instant::now();
    let verdict = f().map_err(|e| e.to_string());
    Line {
        id,
        name,
        verdict,
        seconds: t0.elapsed().as_secs_f64(),
    }
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let want = |id: usize| only.as_ref().is_none_or(|v| v.contains(&id));
    let mut lines: Vec<Line> = Vec::new();
    let simple: [(usize, &'static str, fn() -> Verdict); 8] = [
        (1, "rate function exactness", c1),
        (2, "LDP reproduction", c2),
        (3, "continuum ground state", c3),
        (5, "strict subadditivity", c5),
        (6, "soliton equation and decay", c6),
        (8, "Green's function", c8),
        (9, "Gagliardo-Nirenberg h-uniformity", c9),
        (10, "DNLS integrator", c10),
    ];
    for (id, name, f) in simple {
        if want(id) {
            lines.push(timed(id, name, f));
        }
    }
    if want(4) || want(7) {
        let t0 = Instant::now();
        let r = c4_c7().map_err(|e| e.to_string());
        let seconds = t0.elapsed().as_secs_f64();
        let (a, b) = match r {
            Ok((a, b)) => (Ok(a), Ok(b)),
            Err(e) => (Err(e.clone()), Err(e)),
        };
        lines.push(Line { id: 4, name: "discrete-to-continuum energy", verdict: a, seconds });
        lines.push(Line { id: 7, name: "soliton convergence", verdict: b, seconds });
    }
    if want(13) {
        lines.push(timed(13, "variational continuum limit", c13));
    }

    if want(11) || want(12) || want(14) {
        match table(0.5, 80) {
            Err(e) => {
                for (id, name) in [(11, "microcanonical concentration"), (12, "radiating regime"), (14, "SRC time average")] {
                    if want(id) {
                        lines.push(Line { id, name, verdict: Err(e.to_string()), seconds: 0.0 });
                    }
                }
            }
            Ok(t) => {
                let mut ens = None;
                if want(11) || want(14) {
                    let mut line = timed(11, "microcanonical concentration", || {
                        let e = ensemble(128, None, &t, 2_000_000)?;
                        let v = c11(&e.0);
                        ens = Some(e);
                        v
                    });
                    if want(11) {
                        lines.push(line);
                    } else if let Err(e) = &line.verdict {
                        line.id = 14;
                        line.name = "SRC time average";
                        line.verdict = Err(e.clone());
                        lines.push(line);
                    }
                }
                if want(12) {
                    lines.push(timed(12, "radiating regime", || c12(&t)));
                }
                if let (true, Some((r, samples))) = (want(14), &ens) {
                    lines.push(timed(14, "SRC time average", || {
                        let spec = *samples[0].spec();
                        let reference = soliton_on_grid(&spec, 3.0, r.k_masses[0], &SolverOptions::default())?;
                        c14(samples, &reference)
                    }));
                }
            }
        }
    }

    lines.sort_by_key(|l| l.id);
    let mut unexpected = Vec::new();
    println!();
    for l in &lines {
        let (pass, detail) = match &l.verdict {
            Ok((p, d)) => (*p, d.clone()),
            Err(e) => (false, format!("error: {e}")),
        };
        let tag = if pass { "PASS" } else { "FAIL" };
        let note = match (pass, KNOWN_RED.contains(&l.id)) {
            (false, true) => " [known red]",
            (true, true) => " [known red now passes]",
            _ => "",
        };
        println!("{tag} criterion {:>2} ({}){note}: {detail} [{:.1}s]", l.id, l.name, l.seconds);
        if !pass && !KNOWN_RED.contains(&l.id) {
            unexpected.push(l.id);
        }
    }
    let passed = lines.iter().filter(|l| matches!(l.verdict, Ok((true, _)))).count();
    println!("acceptance: {passed}/{} criteria pass", lines.len());
    if !unexpected.is_empty() {
        println!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
