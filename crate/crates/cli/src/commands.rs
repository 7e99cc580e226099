use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use nls_lab::dnls::{evolve as run_flow, src_experiment, FlowConfig, Reference, Scheme};
use nls_lab::green::{green_kernel, verify_kernel_bounds, KernelBoundReport};
use nls_lab::io::{fmt17, read_emin_csv, read_field, write_emin_csv, write_field, write_trajectory_csv};
use nls_lab::lattice::{Field, GridSpec};
use nls_lab::microcanonical::{build_caches_with, sample_ensemble, EnsembleConfig, InitMode};
use nls_lab::rate::{ldp_probability_mc, psi as psi_eval, SamplerMode};
use nls_lab::soliton::{box_sites, convergence_study, decay_fit, emin_table as build_table, ground_state, EminTable, SolverOptions};
use nls_lab::variational::{k_set, maximizer_set, region};

use crate::support::{cache_path, require, sha256_hex, to_json, CliError, CliResult, Run};
use crate::{
    ConvergenceArgs, EvolveArgs, GreenArgs, LdpArgs, PsiArgs, SampleArgs, SolitonArgs, SrcArgs, TableArgs,
    VariationalArgs,
};

pub struct Ctx {
    pub out: PathBuf,
    pub cache: PathBuf,
}

fn opts(tol: Option<f64>) -> SolverOptions {
    SolverOptions {
        tol: tol.unwrap_or(1e-10),
        ..SolverOptions::default()
    }
}

fn field_bytes(f: &Field) -> CliResult<Vec<u8>> {
    let mut buf = Vec::new();
    write_field(&mut buf, f)?;
    Ok(buf)
}

fn load_field(path: &Path) -> CliResult<Field> {
    let mut file = fs::File::open(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok(read_field(&mut file)?)
}

#[derive(Serialize)]
struct PsiOut {
    alpha: f64,
    d: usize,
    value: f64,
    gamma_star: f64,
    boundary: bool,
    quad_error: f64,
}

pub fn psi(ctx: &Ctx, a: PsiArgs) -> CliResult<()> {
    let d = a.d.unwrap_or(1);
    let alpha = require(a.alpha, "alpha")?;
    let mut run = Run::new(&ctx.out, "psi", &a, None)?;
    let v = psi_eval(alpha, d)?;
    let out = to_json(&PsiOut {
        alpha,
        d,
        value: v.value,
        gamma_star: v.gamma_star,
        boundary: v.boundary,
        quad_error: v.quad_error,
    });
    run.write("psi.json", out.as_bytes())?;
    print!("{out}");
    run.finish()
}

pub fn ldp(ctx: &Ctx, a: LdpArgs) -> CliResult<()> {
    let d = a.d.unwrap_or(1);
    let alpha = require(a.alpha, "alpha")?;
    let ns = a.n.clone().unwrap_or_else(|| vec![16, 32, 64]);
    let draws = a.draws.unwrap_or(1_000_000);
    let seed = a.seed.unwrap_or(1);
    let mode = match a.mode.as_deref().unwrap_or("tilted") {
        "plain" => SamplerMode::Plain,
        "tilted" => SamplerMode::Tilted,
        other => return Err(CliError::Config(format!("mode must be plain or tilted, got {other:?}"))),
    };
    let mut run = Run::new(&ctx.out, "ldp", &a, Some(seed))?;
    let reference = -psi_eval(alpha, d)?.value;
    let mut csv = String::from("n,alpha,estimate,ci_lo,ci_hi,psi_reference\n");
    for (k, &n) in ns.iter().enumerate() {
        let est = ldp_probability_mc(alpha, n, d, draws, mode, seed.wrapping_add(k as u64), None)?;
        csv += &format!(
            "{},{},{},{},{},{}\n",
            n,
            fmt17(alpha),
            fmt17(est.log_rate),
            fmt17(est.log_rate_low),
            fmt17(est.log_rate_high),
            fmt17(reference)
        );
    }
    run.write("ldp.csv", csv.as_bytes())?;
    print!("{csv}");
    run.finish()
}

#[derive(Serialize)]
struct SolitonKey {
    d: usize,
    n: usize,
    h: f64,
    p: f64,
    m: f64,
    tol: f64,
}

#[derive(Serialize)]
struct SolitonOut {
    d: usize,
    n: usize,
    h: f64,
    p: f64,
    mass: f64,
    energy: f64,
    omega: f64,
    residual: f64,
    solver_flags: u32,
    iterations: usize,
    peak: f64,
    decay_rate: f64,
    decay_r_squared: f64,
    decay_bound_ok: bool,
}

pub fn soliton(ctx: &Ctx, a: SolitonArgs) -> CliResult<()> {
    let d = a.d.unwrap_or(1);
    let p = a.p.unwrap_or(3.0);
    let m = require(a.m, "m")?;
    let h = require(a.h, "h")?;
    let n = a.n.unwrap_or_else(|| box_sites(d, h, p, m, 40.0, 1 << 22));
    let o = opts(a.tol);
    let mut run = Run::new(&ctx.out, "soliton", &a, None)?;
    let spec = GridSpec::new(d, n, h)?;
    let sol = ground_state(&spec, p, m, &o, None)?;
    let fit = decay_fit(&sol, None)?;
    let out = to_json(&SolitonOut {
        d,
        n,
        h,
        p,
        mass: sol.mass,
        energy: sol.energy,
        omega: sol.omega,
        residual: sol.residual,
        solver_flags: sol.flags.code(),
        iterations: sol.iterations,
        peak: sol.field.max_abs(),
        decay_rate: fit.rate,
        decay_r_squared: fit.r_squared,
        decay_bound_ok: fit.bound_ok,
    });
    let bytes = field_bytes(&sol.field)?;
    let key = SolitonKey { d, n, h, p, m, tol: o.tol };
    let (cpath, short) = cache_path(&ctx.cache, "soliton", &key, "nlsf");
    fs::create_dir_all(cpath.parent().unwrap())?;
    fs::write(&cpath, &bytes)?;
    run.write("soliton.json", out.as_bytes())?;
    run.write("soliton.nlsf", &bytes)?;
    run.input(format!("soliton/{short}"));
    print!("{out}");
    run.finish()
}

#[derive(Serialize, Clone)]
struct TableKey {
    d: usize,
    p: f64,
    h: f64,
    n: usize,
    m_max: f64,
    points: usize,
    tol: f64,
}

fn table_key(d: Option<usize>, p: Option<f64>, h: Option<f64>, n: Option<usize>, m_max: Option<f64>, points: Option<usize>, tol: Option<f64>) -> CliResult<TableKey> {
    let d = d.unwrap_or(1);
    let p = p.unwrap_or(3.0);
    let h = require(h, "h")?;
    let m_max = m_max.unwrap_or(4.0);
    Ok(TableKey {
        d,
        p,
        h,
        n: n.unwrap_or_else(|| box_sites(d, h, p, m_max, 40.0, 1 << 22)),
        m_max,
        points: points.unwrap_or(80),
        tol: tol.unwrap_or(1e-10),
    })
}

fn table_command(k: &TableKey) -> String {
    format!(
        "nlslab emin-table --d {} --p {} --h {} --n {} --m-max {} --points {} --tol {:e}",
        k.d, k.p, k.h, k.n, k.m_max, k.points, k.tol
    )
}

fn load_table(ctx: &Ctx, k: &TableKey) -> CliResult<(EminTable, String)> {
    let (path, short) = cache_path(&ctx.cache, "emin", k, "csv");
    if !path.exists() {
        return Err(CliError::CacheMiss(format!(
            "no emin table at {}; generate it with `{}`",
            path.display(),
            table_command(k)
        )));
    }
    let t = read_emin_csv(fs::File::open(&path)?)?;
    Ok((t, format!("emin/{short}")))
}

pub fn emin_table(ctx: &Ctx, a: TableArgs) -> CliResult<()> {
    let k = table_key(a.d, a.p, a.h, a.n, a.m_max, a.points, a.tol)?;
    let mut run = Run::new(&ctx.out, "emin-table", &k, None)?;
    let masses: Vec<f64> = (1..=k.points).map(|j| k.m_max * j as f64 / k.points as f64).collect();
    let t = build_table(k.d, k.h, k.p, &masses, k.n, &opts(Some(k.tol)))?;
    let mut buf = Vec::new();
    write_emin_csv(&mut buf, &t)?;
    let (path, short) = cache_path(&ctx.cache, "emin", &k, "csv");
    fs::create_dir_all(path.parent().unwrap())?;
    fs::write(&path, &buf)?;
    run.write("emin.csv", &buf)?;
    run.input(format!("emin/{short}"));
    println!("{}", path.display());
    run.finish()
}

pub fn variational(ctx: &Ctx, a: VariationalArgs) -> CliResult<()> {
    let k = table_key(a.d, a.p, a.h, a.n, a.m_max, a.points, a.tol)?;
    let e0 = require(a.e0, "E0")?;
    let m0 = require(a.m0, "m0")?;
    let mut run = Run::new(&ctx.out, "variational", &a, None)?;
    let (t, key) = load_table(ctx, &k)?;
    run.input(key);
    let r = region(e0, m0, k.h, k.d, &t)?;
    let mut csv = String::from("m,e_minus,e_plus,feasible\n");
    for i in 0..r.m_grid.len() {
        csv += &format!("{},{},{},{}\n", fmt17(r.m_grid[i]), fmt17(r.e_minus[i]), fmt17(r.e_plus[i]), r.feasible[i] as u8);
    }
    run.write("region.csv", csv.as_bytes())?;
    let ms = maximizer_set(e0, m0, k.h, k.d, &t)?;
    run.write("maximizers.json", to_json(&ms).as_bytes())?;
    let ks = k_set(e0, m0, k.h, k.d, &t)?;
    let out = to_json(&ks);
    run.write("kset.json", out.as_bytes())?;
    print!("{out}");
    run.finish()
}

#[derive(Serialize)]
struct GreenKey {
    d: usize,
    h: f64,
    omega: f64,
    radius: usize,
    tol: f64,
}

#[derive(Serialize)]
struct GreenOut {
    d: usize,
    h: f64,
    omega: f64,
    radius: usize,
    r: f64,
    k_max: usize,
    truncation_error: f64,
    operator_residual: f64,
    constant_sum: f64,
    edge_correction: f64,
    identity_gap: f64,
    bounds: Option<KernelBoundReport>,
}

pub fn green(ctx: &Ctx, a: GreenArgs) -> CliResult<()> {
    let key = GreenKey {
        d: a.d.unwrap_or(3),
        h: a.h.unwrap_or(0.5),
        omega: a.omega.unwrap_or(1.0),
        radius: a.radius.unwrap_or(20),
        tol: a.tol.unwrap_or(1e-12),
    };
    let mut run = Run::new(&ctx.out, "green", &key, None)?;
    let g = green_kernel(key.omega, key.d, key.h, key.radius, key.tol)?;
    let bounds = if key.d >= 3 { Some(verify_kernel_bounds(&g)?) } else { None };
    let out = to_json(&GreenOut {
        d: key.d,
        h: key.h,
        omega: key.omega,
        radius: key.radius,
        r: g.r,
        k_max: g.k_max,
        truncation_error: g.truncation_error,
        operator_residual: g.operator_residual(),
        constant_sum: g.constant_sum(),
        edge_correction: g.edge_correction,
        identity_gap: (g.constant_sum() + g.edge_correction - 1.0 / key.omega).abs(),
        bounds,
    });
    let mut csv = String::new();
    csv += &(0..key.d).map(|i| format!("x{i}")).collect::<Vec<_>>().join(",");
    csv += ",g\n";
    for i in 0..g.values.len() {
        let v = g.values.values()[i].re;
        if v > 0.0 {
            let x = g.values.point(i);
            let coords: Vec<String> = x.iter().map(|c| c.to_string()).collect();
            csv += &format!("{},{}\n", coords.join(","), fmt17(v));
        }
    }
    let (path, short) = cache_path(&ctx.cache, "green", &key, "csv");
    fs::create_dir_all(path.parent().unwrap())?;
    fs::write(&path, csv.as_bytes())?;
    run.input(format!("green/{short}"));
    run.write("green.json", out.as_bytes())?;
    print!("{out}");
    run.finish()
}

#[derive(Serialize)]
struct SampleSummary<'a> {
    config: &'a EnsembleConfig,
    delta: f64,
    k_masses: &'a [f64],
    maximizers: &'a [nls_lab::variational::MaximizerPoint],
    samples: usize,
    sup_norm: &'a nls_lab::microcanonical::Quantiles,
    dist_inf: &'a nls_lab::microcanonical::Quantiles,
    fraction_delta_soliton: f64,
    fraction_improved: f64,
    ess_mass: f64,
    ess_sup: f64,
    rhat_mass: f64,
    rhat_sup: f64,
    accept_rates: &'a [[f64; 3]],
    max_observable_drift: f64,
    slab_violations: usize,
    gauge_mismatches: usize,
    valid: bool,
    emin_cache_key: &'a str,
    soliton_cache_keys: &'a [String],
}

pub fn sample(ctx: &Ctx, a: SampleArgs) -> CliResult<()> {
    let d = a.d.unwrap_or(1);
    let p = a.p.unwrap_or(3.0);
    let h = require(a.h, "h")?;
    let n = require(a.n, "n")?;
    let m0 = require(a.m0, "m0")?;
    let e0 = require(a.e0, "E0")?;
    let k = table_key(Some(d), Some(p), Some(h), a.table_n, Some(a.m_max.unwrap_or(m0)), a.points, a.tol)?;
    let spec = GridSpec::new(d, n, h)?;
    let mut cfg = EnsembleConfig::new(spec, p, m0, e0);
    if let Some(v) = a.eps {
        cfg.eps = v;
    }
    if let Some(v) = a.step_sigma {
        cfg.step_sigma = v;
    }
    if let Some(v) = a.n_steps {
        cfg.n_steps = v;
    }
    if let Some(v) = a.burn_in {
        cfg.burn_in = v;
    }
    if let Some(v) = a.thin {
        cfg.thin = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.chains {
        cfg.chains = v;
    }
    cfg.init_mode = match a.init_mode.as_deref().unwrap_or("soliton_plus_radiation") {
        "soliton_plus_radiation" => InitMode::SolitonPlusRadiation,
        "scaled_gaussian" => InitMode::ScaledGaussian,
        other => return Err(CliError::Config(format!("unknown init_mode {other:?}"))),
    };
    let delta = a.delta.unwrap_or(0.3);
    let mut run = Run::new(&ctx.out, "sample", &(&cfg, delta, &k), Some(cfg.seed))?;
    let (table, tkey) = load_table(ctx, &k)?;
    run.input(tkey.clone());
    cfg.validate(Some(table.eval(m0)?))?;
    let o = opts(Some(k.tol));
    let mut soliton_keys = Vec::new();
    let caches = build_caches_with(&cfg, &table, |m| {
        let key = SolitonKey { d, n, h, p, m, tol: o.tol };
        let (path, short) = cache_path(&ctx.cache, "soliton", &key, "nlsf");
        soliton_keys.push(format!("soliton/{short}"));
        if let Ok(f) = load_field(&path) {
            return Ok(f);
        }
        let f = nls_lab::microcanonical::soliton_on_grid(&spec, p, m, &o)?;
        if let Ok(bytes) = field_bytes(&f) {
            let _ = fs::create_dir_all(path.parent().unwrap());
            let _ = fs::write(&path, bytes);
        }
        Ok(f)
    })?;
    for s in &soliton_keys {
        run.input(s.clone());
    }
    let (report, fields) = sample_ensemble(&cfg, &caches, delta)?;
    let mut csv = String::from("chain,step,mass,energy,sup_norm,dist_inf,dist_2,delta_soliton,improved\n");
    for r in &report.records {
        csv += &format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.chain,
            r.step,
            fmt17(r.mass),
            fmt17(r.energy),
            fmt17(r.sup_norm),
            fmt17(r.dist_inf),
            fmt17(r.dist_2),
            r.flags.delta_soliton as u8,
            r.flags.improved as u8
        );
    }
    run.write("report.csv", csv.as_bytes())?;
    for (i, f) in fields.iter().enumerate() {
        run.write(&format!("samples/sample_{i:05}.nlsf"), &field_bytes(f)?)?;
    }
    let reference = caches.soliton(caches.k_masses[0])?;
    run.write("reference.nlsf", &field_bytes(reference)?)?;
    let summary = to_json(&SampleSummary {
        config: &cfg,
        delta,
        k_masses: &report.k_masses,
        maximizers: &report.maximizers,
        samples: report.records.len(),
        sup_norm: &report.sup_norm,
        dist_inf: &report.dist_inf,
        fraction_delta_soliton: report.fraction_delta_soliton,
        fraction_improved: report.fraction_improved,
        ess_mass: report.ess_mass,
        ess_sup: report.ess_sup,
        rhat_mass: report.rhat_mass,
        rhat_sup: report.rhat_sup,
        accept_rates: &report.accept_rates,
        max_observable_drift: report.max_observable_drift,
        slab_violations: report.slab_violations,
        gauge_mismatches: report.gauge_mismatches,
        valid: report.valid(),
        emin_cache_key: &tkey,
        soliton_cache_keys: &soliton_keys,
    });
    run.write("report.json", summary.as_bytes())?;
    print!("{summary}");
    run.finish()
}

fn flow_config(p: f64, dt: Option<f64>, t_end: Option<f64>, scheme: Option<&str>, record_every: Option<usize>) -> CliResult<FlowConfig> {
    let scheme = match scheme.unwrap_or("splitstep") {
        "splitstep" => Scheme::SplitStep,
        "rk4" => Scheme::Rk4,
        other => return Err(CliError::Config(format!("scheme must be splitstep or rk4, got {other:?}"))),
    };
    let dt = dt.unwrap_or(1e-3);
    Ok(FlowConfig {
        dt,
        t_end: t_end.unwrap_or(10.0),
        scheme,
        p,
        record_every: record_every.unwrap_or(((0.1 / dt).round() as usize).max(1)),
    })
}

#[derive(Serialize)]
struct EvolveOut {
    steps: usize,
    max_mass_drift: f64,
    max_energy_drift: f64,
    src_fraction: Option<f64>,
    window_additivity_error: Option<f64>,
}

pub fn evolve(ctx: &Ctx, a: EvolveArgs) -> CliResult<()> {
    let p = a.p.unwrap_or(3.0);
    let cfg = flow_config(p, a.dt, a.t_end, a.scheme.as_deref(), a.record_every)?;
    cfg.validate()?;
    let mut run = Run::new(&ctx.out, "evolve", &a, None)?;
    let u0 = match &a.input {
        Some(path) => {
            let bytes = fs::read(path)?;
            run.input(format!("input:{}", &sha256_hex(&bytes)[..16]));
            read_field(&mut bytes.as_slice())?
        }
        None => {
            let d = a.d.unwrap_or(1);
            let h = require(a.h, "h")?;
            let m = require(a.m, "m")?;
            let n = a.n.unwrap_or_else(|| box_sites(d, h, p, m, 40.0, 1 << 22));
            ground_state(&GridSpec::new(d, n, h)?, p, m, &SolverOptions::default(), None)?.field
        }
    };
    let reference = match &a.reference {
        Some(path) => Some(Reference {
            field: load_field(path)?,
            delta: a.delta.unwrap_or(0.3),
        }),
        None => None,
    };
    let (u, stats) = run_flow(&u0, &cfg, reference.as_ref())?;
    let mut csv = Vec::new();
    write_trajectory_csv(&mut csv, &stats)?;
    run.write("trajectory.csv", &csv)?;
    run.write("final.nlsf", &field_bytes(&u)?)?;
    let out = to_json(&EvolveOut {
        steps: cfg.steps(),
        max_mass_drift: stats.max_mass_drift(),
        max_energy_drift: stats.max_energy_drift(),
        src_fraction: stats.src_fraction,
        window_additivity_error: stats.window_additivity_error,
    });
    run.write("evolve.json", out.as_bytes())?;
    print!("{out}");
    run.finish()
}

pub fn src(ctx: &Ctx, a: SrcArgs) -> CliResult<()> {
    let dir = require(a.samples.clone(), "samples")?;
    let refpath = require(a.reference.clone(), "reference")?;
    let p = a.p.unwrap_or(3.0);
    let delta = a.delta.unwrap_or(0.3);
    let cfg = flow_config(p, a.dt.or(Some(0.01)), a.t_end.or(Some(50.0)), None, a.record_every)?;
    let mut run = Run::new(&ctx.out, "src", &a, None)?;
    let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(|e| CliError::Config(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "nlsf"))
        .collect();
    paths.sort();
    if let Some(k) = a.max_samples {
        paths.truncate(k);
    }
    if paths.is_empty() {
        return Err(CliError::CacheMiss(format!("no snapshots in {}; run `nlslab sample` first", dir.display())));
    }
    let samples: Vec<Field> = paths.iter().map(|p| load_field(p)).collect::<CliResult<_>>()?;
    let reference = load_field(&refpath)?;
    let dist = src_experiment(&samples, &cfg, &reference, delta)?;
    let mut csv = String::from("sample,src_fraction\n");
    for (p, f) in paths.iter().zip(&dist.fractions) {
        csv += &format!("{},{}\n", p.file_name().unwrap().to_string_lossy(), fmt17(*f));
    }
    run.write("src.csv", csv.as_bytes())?;
    let out = to_json(&dist);
    run.write("src.json", out.as_bytes())?;
    print!("{out}");
    run.finish()
}

pub fn convergence(ctx: &Ctx, a: ConvergenceArgs) -> CliResult<()> {
    let d = a.d.unwrap_or(1);
    let p = a.p.unwrap_or(3.0);
    let m = a.m.unwrap_or(4.0);
    let hs = a.hs.clone().unwrap_or_else(|| vec![0.4, 0.2, 0.1]);
    let exps = a.exponents.clone().unwrap_or_else(|| vec![2.0, f64::INFINITY]);
    let box_length = a.box_length.unwrap_or(40.0);
    let mut run = Run::new(&ctx.out, "convergence", &a, None)?;
    let rows = convergence_study(d, p, m, &hs, &exps, box_length, &opts(a.tol))?;
    let mut csv = String::from("h,n,e_min,energy_gap,omega,residual");
    for q in &exps {
        csv += &format!(",dist_q{q}");
    }
    csv += "\n";
    for r in &rows {
        csv += &format!("{},{},{},{},{},{}", fmt17(r.h), r.n, fmt17(r.e_min), fmt17(r.energy_gap), fmt17(r.omega), fmt17(r.residual));
        for (_, dq) in &r.distances {
            csv += &format!(",{}", fmt17(*dq));
        }
        csv += "\n";
    }
    run.write("convergence.csv", csv.as_bytes())?;
    std::io::stdout().write_all(csv.as_bytes())?;
    run.finish()
}
