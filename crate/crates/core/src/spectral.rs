//! Fourier diagonalization of the periodic Laplacian.
//!
//! The orthonormal eigenbasis is `ρ_y(x) = n^{-d/2} exp(2πi y·x/n)` and
//! `Γ ρ_y = λ_y ρ_y` with `λ_y = 4 Σ_i sin²(π y_i / n)`. Coefficients are
//! `τ_y = (f, ρ_y) = Σ_x f(x) conj(ρ_y(x))`.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{invalid, Result};
use crate::lattice::{Field, GridSpec};

pub fn eigenvalue(spec: &GridSpec, y: &[usize]) -> f64 {
    y.iter()
        .map(|&yi| {
            let s = (std::f64::consts::PI * yi as f64 / spec.n as f64).sin();
            4.0 * s * s
        })
        .sum()
}

/// All `λ_y` in site order.
pub fn eigenvalues(spec: &GridSpec) -> Vec<f64> {
    let n = spec.n;
    let one: Vec<f64> = (0..n)
        .map(|k| {
            let s = (std::f64::consts::PI * k as f64 / n as f64).sin();
            4.0 * s * s
        })
        .collect();
    (0..spec.sites())
        .map(|i| spec.coords(i).iter().map(|&k| one[k]).sum())
        .collect()
}

/// Stencil Laplacian `Δv(x) = h^{-2} Σ_{y~x} (v(y) - v(x))`.
pub fn apply_laplacian(f: &Field) -> Field {
    let spec = *f.spec();
    let v = f.values();
    let inv_h2 = 1.0 / (spec.h * spec.h);
    let mut out = vec![Complex64::new(0.0, 0.0); v.len()];
    for axis in 0..spec.d {
        for (idx, o) in out.iter_mut().enumerate() {
            let a = v[spec.neighbor(idx, axis, true)];
            let b = v[spec.neighbor(idx, axis, false)];
            *o += (a + b - 2.0 * v[idx]) * inv_h2;
        }
    }
    Field::new(spec, out).expect("finite input gives finite output")
}

#[derive(Clone)]
pub struct Spectral {
    spec: GridSpec,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    lambda: Vec<f64>,
}

impl std::fmt::Debug for Spectral {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Spectral").field("spec", &self.spec).finish()
    }
}

impl Spectral {
    pub fn new(spec: GridSpec) -> Self {
        let mut planner = FftPlanner::new();
        Spectral {
            spec,
            fwd: planner.plan_fft_forward(spec.n),
            inv: planner.plan_fft_inverse(spec.n),
            lambda: eigenvalues(&spec),
        }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.lambda
    }

    /// Unnormalized d-dimensional transform in place.
    pub fn fft_in_place(&self, data: &mut [Complex64], inverse: bool) {
        let spec = self.spec;
        let n = spec.n;
        let plan = if inverse { &self.inv } else { &self.fwd };
        let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
        // last axis is contiguous
        plan.process_with_scratch(data, &mut scratch);
        let mut line = vec![Complex64::new(0.0, 0.0); n];
        for axis in 0..spec.d - 1 {
            let s = spec.stride(axis);
            let block = s * n;
            for base in (0..data.len()).step_by(block) {
                for off in 0..s {
                    let start = base + off;
                    for k in 0..n {
                        line[k] = data[start + k * s];
                    }
                    plan.process_with_scratch(&mut line, &mut scratch);
                    for k in 0..n {
                        data[start + k * s] = line[k];
                    }
                }
            }
        }
    }

    pub fn to_fourier(&self, f: &Field) -> Vec<Complex64> {
        let mut data = f.values().to_vec();
        self.fft_in_place(&mut data, false);
        let c = (self.spec.sites() as f64).sqrt().recip();
        data.iter_mut().for_each(|v| *v *= c);
        data
    }

    pub fn from_fourier(&self, coeffs: &[Complex64]) -> Result<Field> {
        let mut data = coeffs.to_vec();
        self.fft_in_place(&mut data, true);
        let c = (self.spec.sites() as f64).sqrt().recip();
        data.iter_mut().for_each(|v| *v *= c);
        Field::new(self.spec, data)
    }

    /// `f ↦ Σ_y m(λ_y) τ_y ρ_y`.
    pub fn apply_multiplier(&self, f: &Field, m: impl Fn(f64) -> Complex64) -> Result<Field> {
        self.spec.check_same(f.spec())?;
        let mut t = self.to_fourier(f);
        for (v, &l) in t.iter_mut().zip(&self.lambda) {
            *v *= m(l);
        }
        self.from_fourier(&t)
    }

    pub fn laplacian_fourier(&self, f: &Field) -> Result<Field> {
        let ih2 = 1.0 / (self.spec.h * self.spec.h);
        self.apply_multiplier(f, |l| Complex64::new(-l * ih2, 0.0))
    }

    /// `exp(itΔ) f`: solves `i u' = -Δu` for time `t`.
    pub fn linear_propagator(&self, f: &Field, t: f64) -> Result<Field> {
        let ih2 = 1.0 / (self.spec.h * self.spec.h);
        self.apply_multiplier(f, |l| Complex64::from_polar(1.0, -l * ih2 * t))
    }

    /// `(ω - Δ)^{-1} f`.
    pub fn solve_helmholtz(&self, f: &Field, omega: f64) -> Result<Field> {
        if !(omega.is_finite() && omega > 0.0) {
            return Err(invalid(format!("helmholtz shift {omega} must be positive")));
        }
        let ih2 = 1.0 / (self.spec.h * self.spec.h);
        self.apply_multiplier(f, |l| Complex64::new(1.0 / (omega + l * ih2), 0.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(spec: GridSpec, seed: u64) -> Field {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Field::new(
            spec,
            (0..spec.sites())
                .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn eigenvalue_trace() {
        for (d, n) in [(1, 7), (2, 8), (3, 4)] {
            let s = GridSpec::new(d, n, 1.0).unwrap();
            let sum: f64 = eigenvalues(&s).iter().sum();
            assert!((sum - 2.0 * d as f64 * s.sites() as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn stencil_and_fourier_agree() {
        for (d, n, h) in [(1, 33, 0.3), (2, 12, 0.5), (3, 6, 1.1)] {
            let s = GridSpec::new(d, n, h).unwrap();
            let f = random_field(s, 7);
            let a = apply_laplacian(&f);
            let b = Spectral::new(s).laplacian_fourier(&f).unwrap();
            let err = a.sub(&b).unwrap().max_abs() / a.max_abs();
            assert!(err < 1e-12, "d={d}: {err}");
        }
    }

    #[test]
    fn fourier_roundtrip_is_unitary() {
        let s = GridSpec::new(2, 10, 0.2).unwrap();
        let f = random_field(s, 3);
        let sp = Spectral::new(s);
        let t = sp.to_fourier(&f);
        let n2: f64 = t.iter().map(|v| v.norm_sqr()).sum();
        assert!((n2 - f.lq_norm(2.0).powi(2)).abs() < 1e-10);
        let g = sp.from_fourier(&t).unwrap();
        assert!(g.sub(&f).unwrap().max_abs() < 1e-13);
    }

    #[test]
    fn basis_vector_is_eigenvector() {
        let s = GridSpec::new(2, 9, 1.0).unwrap();
        let y = [2usize, 5];
        let f = Field::from_fn(s, |x| {
            let ph = 2.0 * std::f64::consts::PI * (y[0] * x[0] + y[1] * x[1]) as f64 / 9.0;
            Complex64::from_polar(1.0 / 9.0, ph)
        })
        .unwrap();
        let lf = apply_laplacian(&f);
        let lam = eigenvalue(&s, &y);
        let expect = f.scale(Complex64::new(-lam, 0.0));
        assert!(lf.sub(&expect).unwrap().max_abs() < 1e-13);
    }

    #[test]
    fn helmholtz_inverts_operator() {
        let s = GridSpec::new(1, 40, 0.4).unwrap();
        let f = random_field(s, 11);
        let u = Spectral::new(s).solve_helmholtz(&f, 0.8).unwrap();
        let back = u.scale(Complex64::new(0.8, 0.0)).sub(&apply_laplacian(&u)).unwrap();
        assert!(back.sub(&f).unwrap().max_abs() < 1e-12);
        assert!(Spectral::new(s).solve_helmholtz(&f, 0.0).is_err());
    }

    #[test]
    fn propagator_preserves_mass_and_composes() {
        let s = GridSpec::new(1, 32, 0.5).unwrap();
        let f = random_field(s, 5);
        let sp = Spectral::new(s);
        let a = sp.linear_propagator(&sp.linear_propagator(&f, 0.3).unwrap(), 0.2).unwrap();
        let b = sp.linear_propagator(&f, 0.5).unwrap();
        assert!(a.sub(&b).unwrap().max_abs() < 1e-12);
        assert!((a.mass() - f.mass()).abs() < 1e-12);
    }
}
