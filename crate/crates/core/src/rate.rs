//! Large-deviation rate function of the Dirichlet form on the sphere.
//!
//! `K_α(γ) = ∫_{[0,1]^d} log(1 - γ + (4γ/α) Σ sin²(π x_i)) dx` and
//! `Ψ_d(α) = sup_{γ∈[0,1)} K_α(γ)` for `α < 2d`, reflected about `2d`
//! and infinite outside `(0, 4d)`.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::lattice::{Field, GridSpec};
use crate::numerics::{golden_max, graded_half_rule, pairwise_sum};
use crate::rng::stream_rng;
use crate::spectral::{eigenvalues, Spectral};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadValue {
    pub value: f64,
    pub error: f64,
}

/// Per-axis quadrature on `[0, 1/2]`: (panels, order). The full-cube
/// integral uses the reflection symmetry of `sin²`.
fn axis_rule(d: usize, coarse: bool) -> Result<(Vec<f64>, Vec<f64>)> {
    let (panels, order) = match d {
        1 | 2 => (16, 16),
        3 => (8, 8),
        4 => (6, 4),
        5 | 6 => (4, 3),
        _ => return Err(invalid(format!("quadrature supports d <= 6, got {d}"))),
    };
    let order = if coarse { (order / 2).max(2) } else { order };
    let (x, w) = graded_half_rule(panels, order, 0.2);
    let s = x.iter().map(|&x| (std::f64::consts::PI * x).sin().powi(2)).collect();
    Ok((s, w.iter().map(|w| 2.0 * w).collect()))
}

fn tensor_log_integral(a: f64, b: f64, d: usize, s: &[f64], w: &[f64]) -> f64 {
    // Recursive tensor product over axes; the innermost axis is a flat loop.
    fn rec(level: usize, d: usize, acc_s: f64, acc_w: f64, a: f64, b: f64, s: &[f64], w: &[f64]) -> f64 {
        if level + 1 == d {
            let mut t = 0.0;
            for (si, wi) in s.iter().zip(w) {
                t += wi * (a + b * (acc_s + si)).ln();
            }
            return acc_w * t;
        }
        let mut t = 0.0;
        for (si, wi) in s.iter().zip(w) {
            t += rec(level + 1, d, acc_s + si, acc_w * wi, a, b, s, w);
        }
        t
    }
    rec(0, d, 0.0, 1.0, a, b, s, w)
}

fn check_alpha_gamma(alpha: f64, gamma: f64, d: usize) -> Result<()> {
    if d == 0 {
        return Err(invalid("dimension must be positive"));
    }
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(invalid(format!("alpha {alpha} must be positive")));
    }
    if !(gamma.is_finite() && (0.0..=1.0).contains(&gamma)) {
        return Err(invalid(format!("gamma {gamma} outside [0, 1]")));
    }
    Ok(())
}

/// `K_α(γ)`; `γ = 1` is the finite boundary limit. The error estimate is
/// the gap to a rule of half the order.
pub fn k_alpha(alpha: f64, gamma: f64, d: usize) -> Result<QuadValue> {
    check_alpha_gamma(alpha, gamma, d)?;
    let a = 1.0 - gamma;
    let b = 4.0 * gamma / alpha;
    let (s, w) = axis_rule(d, false)?;
    let value = tensor_log_integral(a, b, d, &s, &w);
    let (sc, wc) = axis_rule(d, true)?;
    let coarse = tensor_log_integral(a, b, d, &sc, &wc);
    Ok(QuadValue {
        value,
        error: (value - coarse).abs(),
    })
}

fn k_value(alpha: f64, gamma: f64, d: usize, s: &[f64], w: &[f64]) -> f64 {
    tensor_log_integral(1.0 - gamma, 4.0 * gamma / alpha, d, s, w)
}

/// Closed form for `d = 1`: `2 log((√a + √(a+b))/2)`.
pub fn k_alpha_d1_closed(alpha: f64, gamma: f64) -> Result<f64> {
    check_alpha_gamma(alpha, gamma, 1)?;
    let a = 1.0 - gamma;
    let b = 4.0 * gamma / alpha;
    Ok(2.0 * ((a.sqrt() + (a + b).sqrt()) / 2.0).ln())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsiValue {
    pub value: f64,
    /// Maximizing `γ` for the reflected argument `min(α, 4d-α)`.
    pub gamma_star: f64,
    /// The supremum is attained only in the limit `γ → 1`.
    pub boundary: bool,
    pub quad_error: f64,
}

/// `Ψ_d(α)`.
pub fn psi(alpha: f64, d: usize) -> Result<PsiValue> {
    if d == 0 || d > 6 {
        return Err(invalid(format!("dimension {d} unsupported")));
    }
    if alpha.is_nan() {
        return Err(invalid("alpha is NaN"));
    }
    let dd = 2.0 * d as f64;
    if alpha <= 0.0 || alpha >= 2.0 * dd {
        return Ok(PsiValue {
            value: f64::INFINITY,
            gamma_star: 1.0,
            boundary: true,
            quad_error: 0.0,
        });
    }
    let a = if alpha > dd { 2.0 * dd - alpha } else { alpha };
    if (a - dd).abs() <= 1e-15 * dd {
        return Ok(PsiValue {
            value: 0.0,
            gamma_star: 0.0,
            boundary: false,
            quad_error: 0.0,
        });
    }
    let (s, w) = axis_rule(d, false)?;
    // Work in t = -ln(1-γ) so that maxima close to γ = 1 are resolved.
    let f = |t: f64| k_value(a, -(-t).exp_m1(), d, &s, &w);
    let step = 0.5;
    let grid: Vec<f64> = (0..=80).map(|j| j as f64 * step).collect();
    let vals: Vec<f64> = grid.iter().map(|&t| f(t)).collect();
    let (jmax, &vmax) = vals
        .iter()
        .enumerate()
        .max_by(|x, y| x.1.total_cmp(y.1))
        .expect("nonempty grid");
    let noise = 1e-10 * (1.0 + vmax.abs());
    let rising = vals[..=jmax].windows(2).all(|p| p[1] >= p[0] - noise);
    let falling = vals[jmax..].windows(2).all(|p| p[1] <= p[0] + noise);
    if !(rising && falling) {
        return Err(Error::Numerical(format!("K_alpha not unimodal at alpha = {alpha}")));
    }
    let k_one = k_value(a, 1.0, d, &s, &w);
    if jmax + 1 == grid.len() || k_one >= vmax {
        let q = k_alpha(a, 1.0, d)?;
        return Ok(PsiValue {
            value: q.value.max(vmax),
            gamma_star: 1.0,
            boundary: true,
            quad_error: q.error,
        });
    }
    let lo = grid[jmax.saturating_sub(1)];
    let hi = grid[jmax + 1];
    let (t, v) = golden_max(f, lo, hi, 1e-11);
    let gamma = -(-t).exp_m1();
    let (value, gamma) = if v >= vmax { (v, gamma) } else { (vmax, -(-grid[jmax]).exp_m1()) };
    let q = k_alpha(a, gamma, d)?;
    Ok(PsiValue {
        value,
        gamma_star: gamma,
        boundary: false,
        quad_error: q.error,
    })
}

/// Widened rate function: `Ψ(α+ε)` below `2d-ε`, zero on the middle band
/// and `Ψ(α-ε)` above `2d+ε`.
pub fn psi_eps(alpha: f64, eps: f64, d: usize) -> Result<f64> {
    if !(eps.is_finite() && eps >= 0.0) {
        return Err(invalid(format!("eps {eps} must be nonnegative")));
    }
    let dd = 2.0 * d as f64;
    if alpha <= dd - eps {
        Ok(psi(alpha + eps, d)?.value)
    } else if alpha >= dd + eps {
        Ok(psi(alpha - eps, d)?.value)
    } else {
        Ok(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Tail {
    /// Event `Σ (λ_y - α) η_y ≤ 0`, relevant for `α < 2d`.
    Lower,
    /// Event `Σ (λ_y - α) η_y ≥ 0`, relevant for `α > 2d`.
    Upper,
}

impl Tail {
    pub fn for_alpha(alpha: f64, d: usize) -> Tail {
        if alpha <= 2.0 * d as f64 {
            Tail::Lower
        } else {
            Tail::Upper
        }
    }
}

fn lattice_eigs(n: usize, d: usize) -> Result<Vec<f64>> {
    Ok(eigenvalues(&GridSpec::new(d, n, 1.0)?))
}

/// Chernoff exponent on the finite torus:
/// lower tail `n^{-d} Σ log(1 + θ(λ_y - α))`, upper tail
/// `n^{-d} Σ log(1 - θ(λ_y - α))`.
pub fn finite_n_rate(alpha: f64, n: usize, d: usize, theta: f64, tail: Tail) -> Result<f64> {
    let eigs = lattice_eigs(n, d)?;
    finite_rate_from(&eigs, alpha, theta, tail)
}

fn finite_rate_from(eigs: &[f64], alpha: f64, theta: f64, tail: Tail) -> Result<f64> {
    let sign = match tail {
        Tail::Lower => 1.0,
        Tail::Upper => -1.0,
    };
    let mut s = 0.0;
    for &l in eigs {
        let arg = 1.0 + sign * theta * (l - alpha);
        if !(arg > 0.0) {
            return Err(invalid(format!("theta {theta} outside the admissible range")));
        }
        s += arg.ln();
    }
    Ok(s / eigs.len() as f64)
}

/// Maximizer of the finite-n exponent.
pub fn optimal_theta(alpha: f64, n: usize, d: usize, tail: Tail) -> Result<(f64, f64)> {
    let eigs = lattice_eigs(n, d)?;
    optimal_theta_from(&eigs, alpha, tail)
}

fn optimal_theta_from(eigs: &[f64], alpha: f64, tail: Tail) -> Result<(f64, f64)> {
    let lmax = eigs.iter().cloned().fold(0.0, f64::max);
    let lmin = eigs.iter().cloned().fold(f64::INFINITY, f64::min);
    let limit = match tail {
        Tail::Lower => {
            if alpha <= lmin {
                return Err(invalid("alpha below the spectrum"));
            }
            1.0 / (alpha - lmin)
        }
        Tail::Upper => {
            if alpha >= lmax {
                return Err(invalid("alpha above the spectrum"));
            }
            1.0 / (lmax - alpha)
        }
    };
    let f = |t: f64| finite_rate_from(eigs, alpha, t, tail).unwrap_or(f64::NEG_INFINITY);
    let (t, v) = golden_max(f, 0.0, limit * (1.0 - 1e-12), 1e-13 * limit);
    Ok((t, v))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SamplerMode {
    Plain,
    Tilted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdpEstimate {
    pub alpha: f64,
    pub n: usize,
    pub d: usize,
    pub tail: Tail,
    pub mode: SamplerMode,
    pub theta: f64,
    pub draws: u64,
    pub hits: u64,
    pub probability: f64,
    /// `n^{-d} log P̂`.
    pub log_rate: f64,
    pub log_rate_low: f64,
    pub log_rate_high: f64,
    /// Probability of the event intersected with the flatness condition
    /// `max |ξ|² ≤ n^{-d(1-δ)}`, when requested.
    pub conditioned_probability: Option<f64>,
}

const CHUNK: u64 = 1 << 15;

/// Monte Carlo estimate of `P(Σ (λ_y - α) η_y ≤ 0)` (or `≥ 0` above
/// `2d`) with iid `η_y ~ Exp(1)`. The tilted sampler draws
/// `η_y ~ Exp` with mean `1/(1 + θ(λ_y - α))` at the optimal `θ` and
/// reweights.
pub fn ldp_probability_mc(
    alpha: f64,
    n: usize,
    d: usize,
    draws: u64,
    mode: SamplerMode,
    seed: u64,
    flatness: Option<f64>,
) -> Result<LdpEstimate> {
    if draws == 0 {
        return Err(invalid("draws must be positive"));
    }
    let spec = GridSpec::new(d, n, 1.0)?;
    let eigs = eigenvalues(&spec);
    let tail = Tail::for_alpha(alpha, d);
    let sign = match tail {
        Tail::Lower => 1.0,
        Tail::Upper => -1.0,
    };
    let (theta, rate) = match mode {
        SamplerMode::Plain => (0.0, 0.0),
        SamplerMode::Tilted => optimal_theta_from(&eigs, alpha, tail)?,
    };
    // η_y has mean μ_y; the weight is exp(sign θ S) Π μ_y.
    let mu: Vec<f64> = eigs.iter().map(|&l| 1.0 / (1.0 + sign * theta * (l - alpha))).collect();
    let log_prefactor = -(eigs.len() as f64) * rate;
    let spectral = flatness.map(|_| Spectral::new(spec));
    let flat_cap = flatness.map(|delta| (spec.sites() as f64).powf(-(1.0 - delta)));
    let chunks = draws.div_ceil(CHUNK);
    let partial: Vec<(f64, f64, f64, u64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream_rng(seed, c);
            let count = CHUNK.min(draws - c * CHUNK);
            let mut s1 = 0.0;
            let mut s2 = 0.0;
            let mut sc = 0.0;
            let mut hits = 0;
            let mut eta = vec![0.0; eigs.len()];
            for _ in 0..count {
                let mut s = 0.0;
                for ((e, &m), &l) in eta.iter_mut().zip(&mu).zip(&eigs) {
                    let x: f64 = rng.sample(Exp1);
                    *e = m * x;
                    s += (l - alpha) * *e;
                }
                let inside = match tail {
                    Tail::Lower => s <= 0.0,
                    Tail::Upper => s >= 0.0,
                };
                if inside {
                    hits += 1;
                    let w = (sign * theta * s).exp();
                    s1 += w;
                    s2 += w * w;
                    if let (Some(sp), Some(cap)) = (&spectral, flat_cap) {
                        let norm: f64 = eta.iter().sum();
                        let coeffs: Vec<Complex64> = eta
                            .iter()
                            .map(|&e| {
                                let ph = rng.random::<f64>() * std::f64::consts::TAU;
                                Complex64::from_polar(e.sqrt(), ph)
                            })
                            .collect();
                        let xi = sp.from_fourier(&coeffs).expect("finite coefficients");
                        let peak = xi.values().iter().map(|v| v.norm_sqr()).fold(0.0, f64::max) / norm;
                        if peak <= cap {
                            sc += w;
                        }
                    }
                }
            }
            (s1, s2, sc, hits)
        })
        .collect();
    let s1 = pairwise_sum(&partial.iter().map(|p| p.0).collect::<Vec<_>>());
    let s2 = pairwise_sum(&partial.iter().map(|p| p.1).collect::<Vec<_>>());
    let sc = pairwise_sum(&partial.iter().map(|p| p.2).collect::<Vec<_>>());
    let hits: u64 = partial.iter().map(|p| p.3).sum();
    let nd = draws as f64;
    let mean = s1 / nd;
    let var = (s2 / nd - mean * mean).max(0.0);
    let se = (var / nd).sqrt();
    let volume = eigs.len() as f64;
    let to_rate = |x: f64| {
        if x > 0.0 {
            (x.ln() + log_prefactor) / volume
        } else {
            f64::NEG_INFINITY
        }
    };
    Ok(LdpEstimate {
        alpha,
        n,
        d,
        tail,
        mode,
        theta,
        draws,
        hits,
        probability: (mean.ln() + log_prefactor).exp(),
        log_rate: to_rate(mean),
        log_rate_low: to_rate(mean - 1.96 * se),
        log_rate_high: to_rate(mean + 1.96 * se),
        conditioned_probability: flatness.map(|_| ((sc / nd).ln() + log_prefactor).exp()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SphereStats {
    pub draws: usize,
    pub mean: f64,
    pub std: f64,
    pub values: Vec<f64>,
}

/// Dirichlet form `(ξ, Γ ξ)` of uniform points `ξ` on the unit sphere of
/// `C^{n^d}`, sampled as normalized complex Gaussians.
pub fn sphere_gradient_sampler(spec: &GridSpec, draws: usize, seed: u64) -> Result<SphereStats> {
    if draws == 0 {
        return Err(invalid("draws must be positive"));
    }
    let spec = *spec;
    let values: Vec<f64> = (0..draws as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream_rng(seed, k);
            let v: Vec<Complex64> = (0..spec.sites())
                .map(|_| {
                    let a: f64 = rng.sample(StandardNormal);
                    let b: f64 = rng.sample(StandardNormal);
                    Complex64::new(a, b)
                })
                .collect();
            let f = Field::new(spec, v).expect("finite gaussian");
            let norm2 = f.lq_norm(2.0).powi(2);
            crate::lattice::bond_sum(&f) / norm2
        })
        .collect();
    let mean = values.iter().sum::<f64>() / draws as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (draws.max(2) - 1) as f64;
    Ok(SphereStats {
        draws,
        mean,
        std: var.sqrt(),
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_matches_quadrature() {
        for &alpha in &[0.05, 0.3, 1.0, 1.7, 2.5, 3.9] {
            for &gamma in &[0.0, 0.1, 0.5, 0.9, 0.99, 0.999] {
                let q = k_alpha(alpha, gamma, 1).unwrap().value;
                let c = k_alpha_d1_closed(alpha, gamma).unwrap();
                assert!((q - c).abs() < 1e-10, "alpha={alpha} gamma={gamma}: {q} vs {c}");
            }
        }
    }

    #[test]
    fn derivative_at_zero() {
        for d in [1, 2] {
            for &alpha in &[0.5, 1.0, 3.0] {
                let h = 1e-5;
                let k0 = k_alpha(alpha, 0.0, d).unwrap().value;
                let k1 = k_alpha(alpha, h, d).unwrap().value;
                let k2 = k_alpha(alpha, 2.0 * h, d).unwrap().value;
                let fd = (-3.0 * k0 + 4.0 * k1 - k2) / (2.0 * h);
                let exact = 2.0 * d as f64 / alpha - 1.0;
                assert!((fd - exact).abs() < 1e-6, "d={d} alpha={alpha}: {fd} vs {exact}");
            }
        }
    }

    #[test]
    fn psi_basic_shape() {
        for d in [1, 2] {
            let dd = 2.0 * d as f64;
            assert_eq!(psi(dd, d).unwrap().value, 0.0);
            assert!(psi(0.0, d).unwrap().value.is_infinite());
            assert!(psi(2.0 * dd, d).unwrap().value.is_infinite());
            let mut prev = f64::INFINITY;
            for k in 1..20 {
                let a = dd * k as f64 / 20.0;
                let v = psi(a, d).unwrap();
                assert!(v.value >= 0.0 && v.value < prev, "d={d} a={a}");
                prev = v.value;
                let r = psi(2.0 * dd - a, d).unwrap();
                assert!((r.value - v.value).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn psi_small_alpha_behaves_like_log() {
        let a = 1e-4;
        let v = psi(a, 1).unwrap().value;
        assert!((v - (1.0 / a).ln()).abs() < 1.0, "{v}");
    }

    #[test]
    fn psi_eps_plateau() {
        assert_eq!(psi_eps(2.0, 0.1, 1).unwrap(), 0.0);
        assert_eq!(psi_eps(1.95, 0.1, 1).unwrap(), 0.0);
        let v = psi_eps(1.0, 0.1, 1).unwrap();
        assert!((v - psi(1.1, 1).unwrap().value).abs() < 1e-15);
    }

    #[test]
    fn finite_rate_converges_to_k() {
        let alpha = 1.0;
        let theta = 0.4;
        let inf = k_alpha_d1_closed(alpha, theta * alpha).unwrap();
        let fin = finite_n_rate(alpha, 256, 1, theta, Tail::Lower).unwrap();
        assert!((fin - inf).abs() < 1e-12, "{fin} vs {inf}");
        assert!(finite_n_rate(alpha, 16, 1, 2.0, Tail::Lower).is_err());
    }

    #[test]
    fn sphere_mean_is_two_d() {
        let s = GridSpec::new(1, 16, 1.0).unwrap();
        let st = sphere_gradient_sampler(&s, 4000, 3).unwrap();
        assert!((st.mean - 2.0).abs() < 4.0 * st.std / (4000f64).sqrt() + 1e-3, "{}", st.mean);
    }

    #[test]
    fn plain_and_tilted_agree_on_moderate_event() {
        let a = ldp_probability_mc(1.5, 8, 1, 200_000, SamplerMode::Plain, 1, None).unwrap();
        let b = ldp_probability_mc(1.5, 8, 1, 200_000, SamplerMode::Tilted, 2, None).unwrap();
        assert!((a.probability / b.probability - 1.0).abs() < 0.05, "{} {}", a.probability, b.probability);
    }
}
