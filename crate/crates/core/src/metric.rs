//! Distances modulo translation and phase.
//!
//! `dist_q(u, v) = inf_{z, |α|=1} || u - α v(· + z) ||_q`. For `q = 2` the
//! infimum is exact through an FFT cross-correlation; other exponents use a
//! local search seeded by the best `q = 2` shifts and are upper bounds.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::lattice::{lq_norm, Field, GridSpec};
use crate::numerics::golden_max;
use crate::spectral::Spectral;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoDistance {
    /// Plain lattice `l^q` distance (multiply by `h^{d/q}` for the
    /// continuum image).
    pub distance: f64,
    pub shift: Vec<i64>,
    pub phase: f64,
    /// True when the infimum was computed exactly.
    pub exact: bool,
}

/// `c(z) = Σ_x u(x) conj(v(x + z))` for every shift `z`.
pub fn cross_correlation(sp: &Spectral, u: &Field, v: &Field) -> Vec<Complex64> {
    let mut a = u.values().to_vec();
    let mut b = v.values().to_vec();
    sp.fft_in_place(&mut a, false);
    sp.fft_in_place(&mut b, false);
    for (x, y) in a.iter_mut().zip(&b) {
        *x *= y.conj();
    }
    sp.fft_in_place(&mut a, false);
    let inv = 1.0 / a.len() as f64;
    a.iter_mut().for_each(|x| *x *= inv);
    a
}

fn signed_shift(spec: &GridSpec, idx: usize) -> Vec<i64> {
    let n = spec.n as i64;
    spec.coords(idx)
        .iter()
        .map(|&c| {
            let c = c as i64;
            if c > n / 2 {
                c - n
            } else {
                c
            }
        })
        .collect()
}

fn residual_norm(u: &[Complex64], vz: &[Complex64], phase: f64, q: f64) -> f64 {
    let a = Complex64::from_polar(1.0, phase);
    if q.is_infinite() {
        u.iter().zip(vz).map(|(x, y)| (x - a * y).norm()).fold(0.0, f64::max)
    } else if q == 2.0 {
        u.iter().zip(vz).map(|(x, y)| (x - a * y).norm_sqr()).sum::<f64>().sqrt()
    } else {
        u.iter()
            .zip(vz)
            .map(|(x, y)| (x - a * y).norm().powf(q))
            .sum::<f64>()
            .powf(1.0 / q)
    }
}

/// Minimize over the phase by a 64-point scan and golden-section polish.
fn best_phase(u: &[Complex64], vz: &[Complex64], q: f64) -> (f64, f64) {
    let k = 64;
    let step = std::f64::consts::TAU / k as f64;
    let mut best = (0.0, f64::INFINITY);
    for j in 0..k {
        let th = j as f64 * step;
        let r = residual_norm(u, vz, th, q);
        if r < best.1 {
            best = (th, r);
        }
    }
    let (th, negr) = golden_max(|t| -residual_norm(u, vz, t, q), best.0 - step, best.0 + step, 1e-10);
    if -negr < best.1 {
        (th.rem_euclid(std::f64::consts::TAU), -negr)
    } else {
        best
    }
}

pub fn pseudometric(u: &Field, v: &Field, q: f64) -> Result<PseudoDistance> {
    pseudometric_with(&Spectral::new(*u.spec()), u, v, q)
}

/// As `pseudometric` with a prepared transform.
pub fn pseudometric_with(sp: &Spectral, u: &Field, v: &Field, q: f64) -> Result<PseudoDistance> {
    if !(q >= 1.0) {
        return Err(invalid(format!("exponent {q} must be >= 1")));
    }
    let spec = *u.spec();
    spec.check_same(v.spec())?;
    sp.spec().check_same(&spec)?;
    let c = cross_correlation(sp, u, v);
    let mut order: Vec<usize> = (0..c.len()).collect();
    order.sort_by(|&a, &b| c[b].norm().total_cmp(&c[a].norm()));
    if q == 2.0 {
        let z = signed_shift(&spec, order[0]);
        let phase = c[order[0]].arg();
        let vz = v.translate(&z);
        let distance = residual_norm(u.values(), vz.values(), phase, 2.0);
        return Ok(PseudoDistance {
            distance,
            shift: z,
            phase: phase.rem_euclid(std::f64::consts::TAU),
            exact: true,
        });
    }
    let d = spec.d;
    let radius: i64 = 2.min((spec.n as i64 - 1) / 2);
    let width = (2 * radius + 1) as usize;
    let mut offsets = Vec::new();
    for k in 0..width.pow(d as u32) {
        let mut rem = k;
        let mut o = vec![0i64; d];
        for oi in o.iter_mut() {
            *oi = (rem % width) as i64 - radius;
            rem /= width;
        }
        offsets.push(o);
    }
    let mut seen = std::collections::HashSet::new();
    let mut best: Option<PseudoDistance> = None;
    for &seed in order.iter().take(3) {
        let base = signed_shift(&spec, seed);
        for o in &offsets {
            let z: Vec<i64> = base.iter().zip(o).map(|(a, b)| a + b).collect();
            let key = spec.shifted(0, &z);
            if !seen.insert(key) {
                continue;
            }
            let vz = v.translate(&z);
            let (phase, r) = best_phase(u.values(), vz.values(), q);
            if best.as_ref().is_none_or(|b| r < b.distance) {
                best = Some(PseudoDistance {
                    distance: r,
                    shift: z,
                    phase,
                    exact: false,
                });
            }
        }
    }
    Ok(best.expect("at least one shift"))
}

/// Brute-force infimum over all shifts and a dense phase grid; test oracle.
pub fn pseudometric_brute_force(u: &Field, v: &Field, q: f64, phases: usize) -> Result<f64> {
    let spec = *u.spec();
    spec.check_same(v.spec())?;
    let mut best = f64::INFINITY;
    for idx in 0..spec.sites() {
        let z: Vec<i64> = spec.coords(idx).iter().map(|&c| c as i64).collect();
        let vz = v.translate(&z);
        for j in 0..phases {
            let th = std::f64::consts::TAU * j as f64 / phases as f64;
            best = best.min(residual_norm(u.values(), vz.values(), th, q));
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuumDistance {
    /// `L^q(R^d)` distance between the step image of the field and the
    /// target, sampled at cell centers.
    pub distance: f64,
    pub center: Vec<f64>,
    pub phase: f64,
}

fn sample_target(spec: &GridSpec, center: &[f64], target: &dyn Fn(f64) -> f64) -> Vec<Complex64> {
    let len = spec.n as f64 * spec.h;
    (0..spec.sites())
        .map(|i| {
            let c = spec.coords(i);
            let mut r2 = 0.0;
            for (ci, &x0) in c.iter().zip(center) {
                let y = spec.h * (*ci as f64 + 0.5) - x0;
                let y = y - len * (y / len).round();
                r2 += y * y;
            }
            Complex64::new(target(r2.sqrt()), 0.0)
        })
        .collect()
}

/// Distance from a lattice field to a radial continuum profile, modulo
/// phase and continuous translation. The target is sampled at cell
/// centers; the center is refined below cell size around the peak of `|f|`.
pub fn continuum_distance(f: &Field, target: &dyn Fn(f64) -> f64, q: f64) -> Result<ContinuumDistance> {
    if !(q >= 1.0) {
        return Err(invalid(format!("exponent {q} must be >= 1")));
    }
    let spec = *f.spec();
    let weight = if q.is_infinite() { 1.0 } else { spec.cell().powf(1.0 / q) };
    let eval = |center: &[f64]| -> (f64, f64) {
        let t = sample_target(&spec, center, target);
        if q == 2.0 {
            let c: Complex64 = f.values().iter().zip(&t).map(|(a, b)| a * b.conj()).sum();
            let ph = c.arg();
            (residual_norm(f.values(), &t, ph, 2.0), ph)
        } else {
            let (ph, r) = best_phase(f.values(), &t, q);
            (r, ph)
        }
    };
    let peak = spec.coords(f.argmax_abs());
    let mut center: Vec<f64> = peak.iter().map(|&c| spec.h * (c as f64 + 0.5)).collect();
    for _sweep in 0..2 {
        for axis in 0..spec.d {
            let c0 = center[axis];
            let (best, _) = golden_max(
                |x| {
                    let mut c = center.clone();
                    c[axis] = x;
                    -eval(&c).0
                },
                c0 - spec.h,
                c0 + spec.h,
                1e-6 * spec.h,
            );
            if eval(&{
                let mut c = center.clone();
                c[axis] = best;
                c
            })
            .0 <= eval(&center).0
            {
                center[axis] = best;
            }
        }
    }
    let (r, phase) = eval(&center);
    Ok(ContinuumDistance {
        distance: weight * r,
        center,
        phase: phase.rem_euclid(std::f64::consts::TAU),
    })
}

/// `|| |u| - |v|(· + z) ||_∞` minimized over shifts: the modulus deviation.
pub fn modulus_deviation(u: &Field, v: &Field) -> Result<f64> {
    let spec = *u.spec();
    spec.check_same(v.spec())?;
    let a = Field::new(spec, u.values().iter().map(|x| Complex64::new(x.norm(), 0.0)).collect())?;
    let b = Field::new(spec, v.values().iter().map(|x| Complex64::new(x.norm(), 0.0)).collect())?;
    let sp = Spectral::new(spec);
    let c = cross_correlation(&sp, &a, &b);
    let mut order: Vec<usize> = (0..c.len()).collect();
    order.sort_by(|&x, &y| c[y].re.total_cmp(&c[x].re));
    let mut best = f64::INFINITY;
    for &k in order.iter().take(3) {
        let z = signed_shift(&spec, k);
        best = best.min(lq_norm(a.sub(&b.translate(&z))?.values(), f64::INFINITY));
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(spec: GridSpec, seed: u64) -> Field {
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
    fn recovers_shift_and_phase() {
        let s = GridSpec::new(2, 9, 0.5).unwrap();
        let v = random(s, 1);
        let u = v.translate(&[3, -2]).scale(Complex64::from_polar(1.0, 1.1));
        let r = pseudometric(&u, &v, 2.0).unwrap();
        assert!(r.distance < 1e-12);
        assert!((r.phase - 1.1).abs() < 1e-12);
        assert_eq!(r.shift, vec![3, -2]);
        let r = pseudometric(&u, &v, f64::INFINITY).unwrap();
        assert!(r.distance < 1e-9);
    }

    #[test]
    fn l2_matches_brute_force() {
        let s = GridSpec::new(1, 12, 1.0).unwrap();
        for seed in 0..5 {
            let u = random(s, 10 + seed);
            let v = random(s, 20 + seed);
            let fast = pseudometric(&u, &v, 2.0).unwrap().distance;
            let slow = pseudometric_brute_force(&u, &v, 2.0, 4096).unwrap();
            assert!(fast <= slow + 1e-12 && slow - fast < 1e-5, "{fast} {slow}");
        }
    }

    #[test]
    fn sup_distance_is_close_to_brute_force() {
        let s = GridSpec::new(1, 10, 1.0).unwrap();
        for seed in 0..4 {
            let v = random(s, 30 + seed);
            let noise = random(s, 40 + seed).scale(Complex64::new(0.1, 0.0));
            let u = v.translate(&[4]).scale(Complex64::from_polar(1.0, 2.0)).add(&noise).unwrap();
            let fast = pseudometric(&u, &v, f64::INFINITY).unwrap();
            let slow = pseudometric_brute_force(&u, &v, f64::INFINITY, 4096).unwrap();
            assert!(!fast.exact);
            assert!(fast.distance <= slow + 1e-6, "{} {slow}", fast.distance);
        }
    }

    #[test]
    fn continuum_distance_of_sampled_profile_is_small() {
        let s = GridSpec::new(1, 200, 0.2).unwrap();
        let prof = |r: f64| 2f64.sqrt() / r.cosh();
        let f = Field::from_fn(s, |x| {
            let y = 0.2 * (x[0] as f64 + 0.5) - 17.33;
            Complex64::from_polar(prof(y.abs()), 0.4)
        })
        .unwrap();
        let r = continuum_distance(&f, &prof, 2.0).unwrap();
        assert!(r.distance < 1e-5, "{}", r.distance);
        assert!((r.center[0] - 17.33).abs() < 1e-4);
        assert!((r.phase - 0.4).abs() < 1e-8);
        let r_inf = continuum_distance(&f, &prof, f64::INFINITY).unwrap();
        assert!(r_inf.distance < 1e-5);
    }
}
