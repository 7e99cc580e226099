//! Radial ground state `Q` of `ΔQ - Q + Q^p = 0` on `R^d` by shooting, and
//! the mass scaling `Q_λ(x) = λ^{2/(p-1)} Q(λ x)`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::ode::{Control, Dopri};

/// Area of the unit sphere `S^{d-1}`; equals 2 for `d = 1` (two rays).
pub fn sphere_area(d: usize) -> f64 {
    // Γ(d/2) by the half-integer recursion.
    let mut g = if d % 2 == 0 { 1.0 } else { std::f64::consts::PI.sqrt() };
    let mut x = if d % 2 == 0 { 1.0 } else { 0.5 };
    while x + 1e-9 < d as f64 / 2.0 {
        g *= x;
        x += 1.0;
    }
    2.0 * std::f64::consts::PI.powf(d as f64 / 2.0) / g
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContinuumGroundState {
    pub p: f64,
    pub d: usize,
    pub amplitude: f64,
    pub mass: f64,
    /// `½ ∫ |∇Q|²`.
    pub gradient: f64,
    /// `∫ Q^{p+1} / (p+1)`.
    pub potential: f64,
    pub hamiltonian: f64,
    radii: Vec<f64>,
    values: Vec<f64>,
    slopes: Vec<f64>,
    tail_coeff: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Shot {
    Over,
    Under,
}

const R0: f64 = 1e-4;
const R_MAX: f64 = 60.0;

fn start(a: f64, p: f64, d: usize) -> [f64; 5] {
    let c = (a - a.powf(p)) / d as f64;
    let s = sphere_area(d);
    let r0d = R0.powi(d as i32);
    [
        a + 0.5 * c * R0 * R0,
        c * R0,
        s * a * a * r0d / d as f64,
        0.0,
        s * a.powf(p + 1.0) / (p + 1.0) * r0d / d as f64,
    ]
}

fn rhs(p: f64, d: usize) -> impl Fn(f64, &[f64; 5]) -> [f64; 5] {
    let s = sphere_area(d);
    let dm1 = d as f64 - 1.0;
    move |r, y| {
        let q = y[0];
        let dq = y[1];
        let w = s * r.powf(dm1);
        [
            dq,
            q - q.abs().powf(p - 1.0) * q - dm1 / r * dq,
            w * q * q,
            0.5 * w * dq * dq,
            w * q.abs().powf(p + 1.0) / (p + 1.0),
        ]
    }
}

fn dopri() -> Dopri<5> {
    let mut dp = Dopri::new(1e-13, 1e-16);
    dp.h_max = 0.02;
    dp
}

fn shoot(a: f64, p: f64, d: usize) -> Shot {
    let mut res = Shot::Under;
    dopri().integrate(rhs(p, d), R0, start(a, p, d), R_MAX, |_, y| {
        if y[0] < 0.0 {
            res = Shot::Over;
            Control::Stop
        } else if y[1] > 0.0 {
            res = Shot::Under;
            Control::Stop
        } else {
            Control::Continue
        }
    });
    res
}

impl ContinuumGroundState {
    pub fn solve(p: f64, d: usize) -> Result<Self> {
        if d == 0 {
            return Err(invalid("dimension must be positive"));
        }
        if !(p.is_finite() && p > 1.0) {
            return Err(invalid(format!("exponent {p} must be > 1")));
        }
        if d >= 3 && p >= (d as f64 + 2.0) / (d as f64 - 2.0) {
            return Err(invalid("exponent is not energy subcritical"));
        }
        let mut lo = 1.0 + 1e-9;
        let mut hi = 2.0;
        while shoot(hi, p, d) == Shot::Under {
            lo = hi;
            hi *= 2.0;
            if hi > 1e8 {
                return Err(Error::NotConverged {
                    what: "shooting bracket",
                    diagnostics: format!("p = {p}, d = {d}"),
                });
            }
        }
        if shoot(lo, p, d) == Shot::Over {
            return Err(Error::Numerical("shooting bracket does not separate".into()));
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            match shoot(mid, p, d) {
                Shot::Over => hi = mid,
                Shot::Under => lo = mid,
            }
        }
        let a = 0.5 * (lo + hi);
        let cut = 1e-5 * a;
        let mut radii = vec![0.0];
        let mut values = vec![a];
        let mut slopes = vec![0.0];
        let (r_end, y_end) = dopri().integrate(rhs(p, d), R0, start(a, p, d), R_MAX, |r, y| {
            radii.push(r);
            values.push(y[0]);
            slopes.push(y[1]);
            if y[0] < cut {
                Control::Stop
            } else {
                Control::Continue
            }
        });
        if y_end[0] >= cut || y_end[0] <= 0.0 {
            return Err(Error::NotConverged {
                what: "ground state profile",
                diagnostics: format!("Q({r_end}) = {}", y_end[0]),
            });
        }
        // Decaying linear tail C r^{-(d-1)/2} e^{-r}.
        let dm1 = d as f64 - 1.0;
        let tail_coeff = y_end[0] * r_end.powf(0.5 * dm1) * r_end.exp();
        let s = sphere_area(d);
        let q2 = y_end[0] * y_end[0];
        let tail_mass = s * r_end.powf(dm1) * q2 / 2.0;
        let mass = y_end[2] + tail_mass;
        let gradient = y_end[3] + 0.5 * tail_mass;
        let potential = y_end[4];
        Ok(ContinuumGroundState {
            p,
            d,
            amplitude: a,
            mass,
            gradient,
            potential,
            hamiltonian: gradient - potential,
            radii,
            values,
            slopes,
            tail_coeff,
        })
    }

    /// `Q(r)` for `r ≥ 0` (cubic Hermite between integrator steps).
    pub fn eval(&self, r: f64) -> f64 {
        let r = r.abs();
        let last = *self.radii.last().expect("profile");
        if r >= last {
            return self.tail_coeff * r.powf(-0.5 * (self.d as f64 - 1.0)) * (-r).exp();
        }
        let j = self.radii.partition_point(|&x| x <= r).max(1) - 1;
        let (r0, r1) = (self.radii[j], self.radii[j + 1]);
        let hh = r1 - r0;
        let t = (r - r0) / hh;
        let (y0, y1) = (self.values[j], self.values[j + 1]);
        let (m0, m1) = (self.slopes[j] * hh, self.slopes[j + 1] * hh);
        let t2 = t * t;
        let t3 = t2 * t;
        (2.0 * t3 - 3.0 * t2 + 1.0) * y0 + (t3 - 2.0 * t2 + t) * m0 + (-2.0 * t3 + 3.0 * t2) * y1 + (t3 - t2) * m1
    }

    fn subcritical_gap(&self) -> Result<f64> {
        let g = 4.0 / (self.p - 1.0) - self.d as f64;
        if g <= 0.0 {
            return Err(invalid("exponent is not mass subcritical"));
        }
        Ok(g)
    }

    /// Scale `λ(m)` with `M(Q_λ) = m`.
    pub fn scale_for_mass(&self, m: f64) -> Result<f64> {
        if !(m.is_finite() && m >= 0.0) {
            return Err(invalid(format!("mass {m} must be nonnegative")));
        }
        Ok((m / self.mass).powf(1.0 / self.subcritical_gap()?))
    }

    /// `E_min(m) = H(Q_{λ(m)}) = λ^{2 + 4/(p-1) - d} H(Q)`.
    pub fn energy_for_mass(&self, m: f64) -> Result<f64> {
        let lam = self.scale_for_mass(m)?;
        let g = self.subcritical_gap()?;
        Ok(lam.powf(2.0 + g) * self.hamiltonian)
    }

    /// Exponent `a` with `E_min(m) = E_min(1) m^a`.
    pub fn mass_exponent(&self) -> Result<f64> {
        let g = self.subcritical_gap()?;
        Ok((2.0 + g) / g)
    }

    /// `Q_λ(|y|)`.
    pub fn scaled(&self, lambda: f64, r: f64) -> f64 {
        lambda.powf(2.0 / (self.p - 1.0)) * self.eval(lambda * r)
    }
}
