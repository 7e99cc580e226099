//! Finitely supported fields on `Z^d`, stored on a rectangular window and
//! taken to vanish outside it.

use num_complex::Complex64;

use crate::error::{invalid, Error, Result};
use crate::lattice::{check_power, Field, ObservableSet};
use crate::numerics::gauss_legendre;

#[derive(Debug, Clone, PartialEq)]
pub struct WindowField {
    pub d: usize,
    pub h: f64,
    pub origin: Vec<i64>,
    pub shape: Vec<usize>,
    values: Vec<Complex64>,
}

impl WindowField {
    pub fn new(d: usize, h: f64, origin: Vec<i64>, shape: Vec<usize>, values: Vec<Complex64>) -> Result<Self> {
        if d == 0 || origin.len() != d || shape.len() != d {
            return Err(invalid("window dimension mismatch"));
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(invalid(format!("grid size {h} must be positive")));
        }
        let total: usize = shape.iter().product();
        if values.len() != total {
            return Err(Error::SpecMismatch(format!("window needs {total} values, got {}", values.len())));
        }
        if values.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(Error::NonFinite);
        }
        Ok(WindowField {
            d,
            h,
            origin,
            shape,
            values,
        })
    }

    pub fn zeros(d: usize, h: f64, origin: Vec<i64>, shape: Vec<usize>) -> Result<Self> {
        let total = shape.iter().product();
        WindowField::new(d, h, origin, shape, vec![Complex64::new(0.0, 0.0); total])
    }

    pub fn from_fn(d: usize, h: f64, origin: Vec<i64>, shape: Vec<usize>, f: impl Fn(&[i64]) -> Complex64) -> Result<Self> {
        let mut w = WindowField::zeros(d, h, origin, shape)?;
        for i in 0..w.values.len() {
            let x = w.point(i);
            w.values[i] = f(&x);
        }
        if w.values.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(Error::NonFinite);
        }
        Ok(w)
    }

    /// The extension `f^e`: `f` on `{0..n-1}^d`, zero elsewhere.
    pub fn extension(f: &Field) -> Self {
        let s = f.spec();
        WindowField {
            d: s.d,
            h: s.h,
            origin: vec![0; s.d],
            shape: vec![s.n; s.d],
            values: f.values().to_vec(),
        }
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn point(&self, mut idx: usize) -> Vec<i64> {
        let mut x = vec![0; self.d];
        for axis in (0..self.d).rev() {
            x[axis] = self.origin[axis] + (idx % self.shape[axis]) as i64;
            idx /= self.shape[axis];
        }
        x
    }

    pub fn index(&self, x: &[i64]) -> Option<usize> {
        let mut idx = 0;
        for axis in 0..self.d {
            let c = x[axis] - self.origin[axis];
            if c < 0 || c >= self.shape[axis] as i64 {
                return None;
            }
            idx = idx * self.shape[axis] + c as usize;
        }
        Some(idx)
    }

    pub fn get(&self, x: &[i64]) -> Complex64 {
        self.index(x).map(|i| self.values[i]).unwrap_or(Complex64::new(0.0, 0.0))
    }

    pub fn cell(&self) -> f64 {
        self.h.powi(self.d as i32)
    }

    pub fn mass(&self) -> f64 {
        self.cell() * self.values.iter().map(|v| v.norm_sqr()).sum::<f64>()
    }

    /// `||f||_{q,h} = h^{d/q} ||f||_q`.
    pub fn continuum_lq_norm(&self, q: f64) -> f64 {
        if q.is_infinite() {
            self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
        } else {
            (self.cell() * self.values.iter().map(|v| v.norm().powf(q)).sum::<f64>()).powf(1.0 / q)
        }
    }

    /// Sum of `|f(x+e_i) - f(x)|²` over all bonds of `Z^d`.
    pub fn bond_sum(&self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.values.len() {
            let x = self.point(i);
            let v = self.values[i];
            for axis in 0..self.d {
                let mut y = x.clone();
                y[axis] += 1;
                s += (self.get(&y) - v).norm_sqr();
                y[axis] -= 2;
                if self.index(&y).is_none() {
                    s += v.norm_sqr();
                }
            }
        }
        s
    }

    /// Mass and energy functionals on `Z^d`.
    pub fn observables(&self, p: f64) -> Result<ObservableSet> {
        check_power(p)?;
        let gradient = 0.5 * self.h.powi(self.d as i32 - 2) * self.bond_sum();
        let potential = self.cell() / (p + 1.0) * self.values.iter().map(|v| v.norm().powf(p + 1.0)).sum::<f64>();
        Ok(ObservableSet {
            mass: self.mass(),
            gradient,
            potential,
            hamiltonian: gradient - potential,
        })
    }

    /// Bounding box `(lo, hi)` (inclusive) of the nonzero entries.
    pub fn support_box(&self) -> Option<(Vec<i64>, Vec<i64>)> {
        let mut lo = vec![i64::MAX; self.d];
        let mut hi = vec![i64::MIN; self.d];
        let mut any = false;
        for (i, v) in self.values.iter().enumerate() {
            if v.norm_sqr() > 0.0 {
                any = true;
                let x = self.point(i);
                for a in 0..self.d {
                    lo[a] = lo[a].min(x[a]);
                    hi[a] = hi[a].max(x[a]);
                }
            }
        }
        any.then_some((lo, hi))
    }

    /// Step image `ṽ(y) = v(⌊y/h⌋)`.
    pub fn step_eval(&self, y: &[f64]) -> Complex64 {
        let x: Vec<i64> = y.iter().map(|&c| (c / self.h).floor() as i64).collect();
        self.get(&x)
    }

    /// Multilinear interpolant `f^c(hx + ht)`.
    pub fn multilinear_eval(&self, y: &[f64]) -> Complex64 {
        let base: Vec<i64> = y.iter().map(|&c| (c / self.h).floor() as i64).collect();
        let t: Vec<f64> = y.iter().zip(&base).map(|(&c, &b)| c / self.h - b as f64).collect();
        let mut s = Complex64::new(0.0, 0.0);
        for corner in 0..(1usize << self.d) {
            let mut w = 1.0;
            let mut x = base.clone();
            for a in 0..self.d {
                if corner >> a & 1 == 1 {
                    w *= t[a];
                    x[a] += 1;
                } else {
                    w *= 1.0 - t[a];
                }
            }
            if w != 0.0 {
                s += self.get(&x) * w;
            }
        }
        s
    }

    /// `M(f^c)`, `½∫|∇f^c|²`, `∫|f^c|^{p+1}/(p+1)` by tensor Gauss-Legendre
    /// per cell (exact for the quadratic terms).
    pub fn multilinear_observables(&self, p: f64) -> Result<ObservableSet> {
        check_power(p)?;
        let d = self.d;
        let (gx, gw) = gauss_legendre(4);
        let nodes: Vec<(f64, f64)> = gx.iter().zip(&gw).map(|(x, w)| (0.5 * (x + 1.0), 0.5 * w)).collect();
        let q = nodes.len();
        let cells_shape: Vec<usize> = self.shape.iter().map(|s| s + 1).collect();
        let ncells: usize = cells_shape.iter().product();
        let mut mass = 0.0;
        let mut grad = 0.0;
        let mut pot = 0.0;
        let mut corner_vals = vec![Complex64::new(0.0, 0.0); 1 << d];
        for c in 0..ncells {
            let mut rem = c;
            let mut base = vec![0i64; d];
            for a in (0..d).rev() {
                base[a] = self.origin[a] - 1 + (rem % cells_shape[a]) as i64;
                rem /= cells_shape[a];
            }
            let mut any = false;
            for (corner, cv) in corner_vals.iter_mut().enumerate() {
                let mut x = base.clone();
                for (a, xa) in x.iter_mut().enumerate() {
                    *xa += (corner >> a & 1) as i64;
                }
                *cv = self.get(&x);
                any |= cv.norm_sqr() > 0.0;
            }
            if !any {
                continue;
            }
            for k in 0..q.pow(d as u32) {
                let mut rem = k;
                let mut t = vec![0.0; d];
                let mut w = 1.0;
                for ta in t.iter_mut() {
                    let (node, weight) = nodes[rem % q];
                    *ta = node;
                    w *= weight;
                    rem /= q;
                }
                let mut val = Complex64::new(0.0, 0.0);
                let mut dv = vec![Complex64::new(0.0, 0.0); d];
                for (corner, cv) in corner_vals.iter().enumerate() {
                    let mut prod = 1.0;
                    for a in 0..d {
                        prod *= if corner >> a & 1 == 1 { t[a] } else { 1.0 - t[a] };
                    }
                    val += cv * prod;
                    for (a, dva) in dv.iter_mut().enumerate() {
                        let mut pr = if corner >> a & 1 == 1 { 1.0 } else { -1.0 };
                        for b in 0..d {
                            if b != a {
                                pr *= if corner >> b & 1 == 1 { t[b] } else { 1.0 - t[b] };
                            }
                        }
                        *dva += cv * pr;
                    }
                }
                mass += w * val.norm_sqr();
                grad += w * dv.iter().map(|z| z.norm_sqr()).sum::<f64>();
                pot += w * val.norm().powf(p + 1.0);
            }
        }
        let vol = self.cell();
        let gradient = 0.5 * vol * grad / (self.h * self.h);
        let potential = vol * pot / (p + 1.0);
        Ok(ObservableSet {
            mass: vol * mass,
            gradient,
            potential,
            hamiltonian: gradient - potential,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{observables, GridSpec};

    fn c(x: f64) -> Complex64 {
        Complex64::new(x, 0.0)
    }

    #[test]
    fn extension_of_constant_field_cuts_wrap_bonds() {
        let s = GridSpec::new(1, 8, 0.5).unwrap();
        let f = Field::from_real(s, &[0.7; 8]).unwrap();
        let e = WindowField::extension(&f);
        let torus = observables(&f, 3.0).unwrap();
        let zd = e.observables(3.0).unwrap();
        assert_eq!(torus.mass, zd.mass);
        assert!(torus.gradient.abs() < 1e-15);
        // Two cut bonds at the ends, each |0.7|², times h^{d-2}/2 = 1.
        assert!((zd.gradient - 2.0 * 0.49).abs() < 1e-14);
    }

    #[test]
    fn interior_support_keeps_energy() {
        let s = GridSpec::new(2, 10, 0.3).unwrap();
        let f = Field::from_fn(s, |x| {
            if (2..8).contains(&x[0]) && (3..7).contains(&x[1]) {
                Complex64::new(x[0] as f64 * 0.1, x[1] as f64 * 0.05)
            } else {
                c(0.0)
            }
        })
        .unwrap();
        let a = observables(&f, 3.0).unwrap();
        let b = WindowField::extension(&f).observables(3.0).unwrap();
        assert!((a.hamiltonian - b.hamiltonian).abs() < 1e-13);
    }

    #[test]
    fn multilinear_matches_corners_and_midpoints() {
        let w = WindowField::from_fn(1, 0.5, vec![-3], vec![7], |x| c(1.0 / (1.0 + (x[0] * x[0]) as f64))).unwrap();
        assert!((w.multilinear_eval(&[0.5]) - w.get(&[1])).norm() < 1e-15);
        let mid = w.multilinear_eval(&[0.25]);
        assert!((mid - (w.get(&[0]) + w.get(&[1])) * 0.5).norm() < 1e-15);
        // In d = 1 the gradient term of f^c equals the lattice one.
        let a = w.observables(3.0).unwrap();
        let b = w.multilinear_observables(3.0).unwrap();
        assert!((a.gradient - b.gradient).abs() < 1e-12);
        assert!(b.mass <= a.mass);
    }

    #[test]
    fn multilinear_two_dimensional_bounds() {
        let w = WindowField::from_fn(2, 0.4, vec![-4, -4], vec![9, 9], |x| {
            c((-0.3 * ((x[0] * x[0] + x[1] * x[1]) as f64)).exp())
        })
        .unwrap();
        let a = w.observables(3.0).unwrap();
        let b = w.multilinear_observables(3.0).unwrap();
        assert!(b.gradient <= a.gradient + 1e-12);
        assert!(b.mass <= a.mass + 1e-12);
    }

    #[test]
    fn step_image_norms() {
        let w = WindowField::from_fn(1, 0.25, vec![0], vec![5], |x| c(x[0] as f64)).unwrap();
        assert_eq!(w.step_eval(&[0.3]), w.get(&[1]));
        assert_eq!(w.step_eval(&[0.49]), w.get(&[1]));
        assert!((w.continuum_lq_norm(2.0).powi(2) - w.mass()).abs() < 1e-14);
    }
}
