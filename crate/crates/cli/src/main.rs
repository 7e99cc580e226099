mod commands;
mod support;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use support::{load_config, overlay, CliResult};

/// Numerical experiments for the discrete focusing NLS.
#[derive(Parser)]
#[command(name = "nlslab", version)]
struct Cli {
    /// Flat key/value TOML file; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Cache directory for emin tables, solitons and kernels.
    #[arg(long, global = true, default_value = "cache")]
    cache: PathBuf,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rate function Ψ_d(α).
    Psi(PsiArgs),
    /// Monte Carlo large deviation estimates.
    Ldp(LdpArgs),
    /// Discrete ground state of a given mass.
    Soliton(SolitonArgs),
    /// Table of E_min(m, h), cached for later commands.
    EminTable(TableArgs),
    /// Entropy maximizers and the K set.
    Variational(VariationalArgs),
    /// Lattice Green's function and kernel bounds.
    Green(GreenArgs),
    /// Microcanonical ensemble sampling and classification.
    Sample(SampleArgs),
    /// DNLS time evolution.
    Evolve(EvolveArgs),
    /// SRC fractions for a directory of samples.
    Src(SrcArgs),
    /// Discrete-to-continuum convergence study.
    Convergence(ConvergenceArgs),
}

#[derive(Args, Deserialize, Serialize, Default, Clone)]
#[serde(deny_unknown_fields)]
pub struct PsiArgs {
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
}

#[derive(Args, Deserialize, Serialize, Default, Clone)]
#[serde(deny_unknown_fields)]
pub struct LdpArgs {
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Torus sizes, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub n: Option<Vec<usize>>,
    #[arg(long)]
    pub draws: Option<u64>,
    /// `plain` or `tilted`.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Deserialize, Serialize, Default, Clone)]
#[serde(deny_unknown_fields)]
pub struct SolitonArgs {
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long)]
    pub m: Option<f64>,
    #[arg(long)]
    pub h: Option<f64>,
    /// Torus side; defaults to a box of about 24 soliton widths.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
}

#[derive(Args, Deserialize, Serialize, Default, Clone)]
#[serde(deny_unknown_fields)]
pub struct TableArgs {
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long)]
    pub h: Option<f64>,
    #[arg(long)]
    pub n: Option<usize>,
    /// Largest tabulated mass.
    #[arg(long)]
    pub m_max: Option<f64>,
    /// Number of positive masses, evenly spaced up to m_max.
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
}

#[derive(Args, Deserialize, Serialize, Default, Clone)]
#[serde(deny_unknown_fields)]
pub struct VariationalArgs {
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long)]
    pub h: Option<f64>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub m_max: Option<f64>,
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long = "E0", alias = "e0")]
    #[serde(alias = "E0")]
    pub e0: Option<f64>,
    #[arg(long)]
    pub m0: Option<f64>,
}

#[derive(Args, Deserialize, Serialize, Default, Clone)]
#[serde(deny_unknown_fields)]
pub struct GreenArgs {
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub omega: Option<f64>,
    #[arg(long)]
    pub h: Option<f64>,
    /// ℓ¹ window radius.
    #[arg(long)]
    pub radius: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
}

#[derive(Args, Deserialize, Serialize, Default, Clone)]
#[serde(deny_unknown_fields)]
pub struct SampleArgs {
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub h: Option<f64>,
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long)]
    pub m0: Option<f64>,
    #[arg(long = "E0", alias = "e0")]
    #[serde(alias = "E0")]
    pub e0: Option<f64>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub step_sigma: Option<f64>,
    #[arg(long)]
    pub n_steps: Option<usize>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// `soliton_plus_radiation` or `scaled_gaussian`.
    #[arg(long)]
    pub init_mode: Option<String>,
    #[arg(long)]
    pub chains: Option<usize>,
    /// Classification level δ.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Emin table lookup: largest mass, points and torus side.
    #[arg(long)]
    pub m_max: Option<f64>,
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long)]
    pub table_n: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
}

#[derive(Args, Deserialize, Serialize, Default, Clone)]
#[serde(deny_unknown_fields)]
pub struct EvolveArgs {
    /// Initial field snapshot; without it the ground state of mass `m` is used.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub h: Option<f64>,
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long)]
    pub m: Option<f64>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub t_end: Option<f64>,
    /// `splitstep` or `rk4`.
    #[arg(long)]
    pub scheme: Option<String>,
    #[arg(long)]
    pub record_every: Option<usize>,
    /// Reference snapshot for the distance series.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long)]
    pub delta: Option<f64>,
}

#[derive(Args, Deserialize, Serialize, Default, Clone)]
#[serde(deny_unknown_fields)]
pub struct SrcArgs {
    /// Directory of `.nlsf` snapshots (as written by `sample`).
    #[arg(long)]
    pub samples: Option<PathBuf>,
    /// Reference soliton snapshot.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub t_end: Option<f64>,
    #[arg(long)]
    pub record_every: Option<usize>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub max_samples: Option<usize>,
}

#[derive(Args, Deserialize, Serialize, Default, Clone)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceArgs {
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long)]
    pub m: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub hs: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub exponents: Option<Vec<f64>>,
    #[arg(long)]
    pub box_length: Option<f64>,
    #[arg(long)]
    pub tol: Option<f64>,
}

fn with_config<T: serde::de::DeserializeOwned + Default>(
    path: &Option<PathBuf>,
    mut cli: T,
    merge: impl FnOnce(&mut T, T),
) -> CliResult<T> {
    if let Some(p) = path {
        let file: T = load_config(p)?;
        merge(&mut cli, file);
    }
    Ok(cli)
}

fn run(cli: Cli) -> CliResult<()> {
    let ctx = commands::Ctx {
        out: cli.out.clone(),
        cache: cli.cache.clone(),
    };
    let cfg = &cli.config;
    match cli.cmd {
        Command::Psi(a) => commands::psi(&ctx, with_config(cfg, a, |c, mut f| overlay!(c, f; d, alpha))?),
        Command::Ldp(a) => commands::ldp(
            &ctx,
            with_config(cfg, a, |c, mut f| overlay!(c, f; d, alpha, n, draws, mode, seed))?,
        ),
        Command::Soliton(a) => commands::soliton(&ctx, with_config(cfg, a, |c, mut f| overlay!(c, f; d, p, m, h, n, tol))?),
        Command::EminTable(a) => commands::emin_table(
            &ctx,
            with_config(cfg, a, |c, mut f| overlay!(c, f; d, p, h, n, m_max, points, tol))?,
        ),
        Command::Variational(a) => commands::variational(
            &ctx,
            with_config(cfg, a, |c, mut f| overlay!(c, f; d, p, h, n, m_max, points, tol, e0, m0))?,
        ),
        Command::Green(a) => commands::green(&ctx, with_config(cfg, a, |c, mut f| overlay!(c, f; d, omega, h, radius, tol))?),
        Command::Sample(a) => commands::sample(
            &ctx,
            with_config(cfg, a, |c, mut f| {
                overlay!(c, f; d, n, h, p, m0, e0, eps, step_sigma, n_steps, burn_in, thin, seed,
                    init_mode, chains, delta, m_max, points, table_n, tol)
            })?,
        ),
        Command::Evolve(a) => commands::evolve(
            &ctx,
            with_config(cfg, a, |c, mut f| {
                overlay!(c, f; input, d, n, h, p, m, dt, t_end, scheme, record_every, reference, delta)
            })?,
        ),
        Command::Src(a) => commands::src(
            &ctx,
            with_config(cfg, a, |c, mut f| {
                overlay!(c, f; samples, reference, p, dt, t_end, record_every, delta, max_samples)
            })?,
        ),
        Command::Convergence(a) => commands::convergence(
            &ctx,
            with_config(cfg, a, |c, mut f| overlay!(c, f; d, p, m, hs, exponents, box_length, tol))?,
        ),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("nlslab: {e}");
        std::process::exit(e.exit_code());
    }
}
