//! Periodic lattice fields, masks and the mass/energy observables.
//!
//! Sites of `V_n = {0..n-1}^d` are stored row-major with the last axis
//! fastest. Every site carries `d` forward bonds `(x, x + e_i)`; the
//! gradient term sums over these bonds once, so the quadratic form is
//! `(h^{d-2}/2) (v, Γ v)` with `Γ = -h²Δ`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub d: usize,
    pub n: usize,
    pub h: f64,
}

impl GridSpec {
    pub fn new(d: usize, n: usize, h: f64) -> Result<Self> {
        if d == 0 {
            return Err(invalid("dimension must be at least 1"));
        }
        if n < 2 {
            return Err(invalid(format!("side length {n} must be at least 2")));
        }
        if !(h.is_finite() && h > 0.0) {
            return Err(invalid(format!("grid size {h} must be positive")));
        }
        let mut total: usize = 1;
        for _ in 0..d {
            total = total
                .checked_mul(n)
                .ok_or_else(|| invalid("lattice too large"))?;
        }
        if total > 1 << 30 {
            return Err(invalid("lattice too large"));
        }
        Ok(GridSpec { d, n, h })
    }

    pub fn sites(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    /// Cell volume `h^d`.
    pub fn cell(&self) -> f64 {
        self.h.powi(self.d as i32)
    }

    /// Upper end of the energy range at mass `m` on this grid: `2 d m / h²`.
    pub fn max_energy(&self, m: f64) -> f64 {
        2.0 * self.d as f64 * m / (self.h * self.h)
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.n.pow((self.d - 1 - axis) as u32)
    }

    pub fn coords(&self, mut idx: usize) -> Vec<usize> {
        let mut c = vec![0; self.d];
        for axis in (0..self.d).rev() {
            c[axis] = idx % self.n;
            idx /= self.n;
        }
        c
    }

    pub fn index(&self, coords: &[usize]) -> usize {
        coords.iter().fold(0, |acc, &c| acc * self.n + (c % self.n))
    }

    /// Index of `x + s` with `s` an arbitrary integer shift, taken mod n.
    pub fn shifted(&self, idx: usize, shift: &[i64]) -> usize {
        let n = self.n as i64;
        let mut c = self.coords(idx);
        for (ci, &s) in c.iter_mut().zip(shift) {
            *ci = (*ci as i64 + s).rem_euclid(n) as usize;
        }
        self.index(&c)
    }

    pub fn neighbor(&self, idx: usize, axis: usize, forward: bool) -> usize {
        let s = self.stride(axis);
        let ci = (idx / s) % self.n;
        if forward {
            if ci + 1 == self.n {
                idx + s - self.n * s
            } else {
                idx + s
            }
        } else if ci == 0 {
            idx + (self.n - 1) * s
        } else {
            idx - s
        }
    }

    /// Flat neighbor table: entry `2*(idx*d + axis) + {0: forward, 1: backward}`.
    pub fn neighbor_table(&self) -> Vec<usize> {
        let mut t = Vec::with_capacity(self.sites() * 2 * self.d);
        for idx in 0..self.sites() {
            for axis in 0..self.d {
                t.push(self.neighbor(idx, axis, true));
                t.push(self.neighbor(idx, axis, false));
            }
        }
        t
    }

    /// Graph distance on the torus (periodic l1 distance).
    pub fn torus_l1(&self, a: usize, b: usize) -> usize {
        let ca = self.coords(a);
        let cb = self.coords(b);
        ca.iter()
            .zip(&cb)
            .map(|(&x, &y)| {
                let dd = x.abs_diff(y);
                dd.min(self.n - dd)
            })
            .sum()
    }

    pub(crate) fn check_same(&self, other: &GridSpec) -> Result<()> {
        if self != other {
            return Err(Error::SpecMismatch(format!("{self:?} vs {other:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    spec: GridSpec,
    values: Vec<Complex64>,
}

impl Field {
    pub fn new(spec: GridSpec, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != spec.sites() {
            return Err(Error::SpecMismatch(format!(
                "expected {} values, got {}",
                spec.sites(),
                values.len()
            )));
        }
        if values.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(Error::NonFinite);
        }
        Ok(Field { spec, values })
    }

    pub fn zeros(spec: GridSpec) -> Self {
        Field {
            spec,
            values: vec![Complex64::new(0.0, 0.0); spec.sites()],
        }
    }

    pub fn from_fn(spec: GridSpec, mut f: impl FnMut(&[usize]) -> Complex64) -> Result<Self> {
        let values = (0..spec.sites()).map(|i| f(&spec.coords(i))).collect();
        Field::new(spec, values)
    }

    pub fn from_real(spec: GridSpec, re: &[f64]) -> Result<Self> {
        Field::new(spec, re.iter().map(|&r| Complex64::new(r, 0.0)).collect())
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn argmax_abs(&self) -> usize {
        let mut best = 0;
        let mut bv = -1.0;
        for (i, v) in self.values.iter().enumerate() {
            let a = v.norm_sqr();
            if a > bv {
                bv = a;
                best = i;
            }
        }
        best
    }

    /// Plain lattice l^q norm (no cell weight). `q = inf` gives the sup norm.
    pub fn lq_norm(&self, q: f64) -> f64 {
        lq_norm(&self.values, q)
    }

    /// Norm of the piecewise-constant continuum image: `h^{d/q} ||f||_q`.
    pub fn continuum_lq_norm(&self, q: f64) -> f64 {
        if q.is_infinite() {
            self.max_abs()
        } else {
            self.spec.cell().powf(1.0 / q) * self.lq_norm(q)
        }
    }

    pub fn mass(&self) -> f64 {
        self.spec.cell() * self.values.iter().map(|v| v.norm_sqr()).sum::<f64>()
    }

    /// `g(x) = f(x + shift)`.
    pub fn translate(&self, shift: &[i64]) -> Field {
        let spec = self.spec;
        let values = (0..spec.sites())
            .map(|i| self.values[spec.shifted(i, shift)])
            .collect();
        Field { spec, values }
    }

    pub fn scale(&self, c: Complex64) -> Field {
        Field {
            spec: self.spec,
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }

    pub fn conj(&self) -> Field {
        Field {
            spec: self.spec,
            values: self.values.iter().map(|v| v.conj()).collect(),
        }
    }

    pub fn sub(&self, other: &Field) -> Result<Field> {
        self.spec.check_same(&other.spec)?;
        Ok(Field {
            spec: self.spec,
            values: self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect(),
        })
    }

    pub fn add(&self, other: &Field) -> Result<Field> {
        self.spec.check_same(&other.spec)?;
        Ok(Field {
            spec: self.spec,
            values: self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect(),
        })
    }

    /// Translate so the modulus peak sits at `target` and rotate the phase so
    /// that the peak value is real and positive.
    pub fn canonical_gauge(&self, target: usize) -> Field {
        let spec = self.spec;
        let peak = self.argmax_abs();
        let pc = spec.coords(peak);
        let tc = spec.coords(target);
        let shift: Vec<i64> = pc.iter().zip(&tc).map(|(&a, &b)| a as i64 - b as i64).collect();
        let g = self.translate(&shift);
        let v = g.values[target];
        if v.norm() > 0.0 {
            g.scale(v.conj() / v.norm())
        } else {
            g
        }
    }
}

pub(crate) fn lq_norm(values: &[Complex64], q: f64) -> f64 {
    if q.is_infinite() {
        values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    } else if q == 2.0 {
        values.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    } else {
        values.iter().map(|v| v.norm().powf(q)).sum::<f64>().powf(1.0 / q)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservableSet {
    pub mass: f64,
    pub gradient: f64,
    pub potential: f64,
    pub hamiltonian: f64,
}

pub(crate) fn check_power(p: f64) -> Result<()> {
    if !(p.is_finite() && p > 1.0) {
        return Err(invalid(format!("nonlinearity exponent {p} must be finite and > 1")));
    }
    Ok(())
}

/// Sum of `|v(x+e_i) - v(x)|²` over all forward bonds.
pub fn bond_sum(f: &Field) -> f64 {
    let spec = f.spec;
    let v = &f.values;
    let mut s = 0.0;
    for axis in 0..spec.d {
        for idx in 0..v.len() {
            let j = spec.neighbor(idx, axis, true);
            s += (v[j] - v[idx]).norm_sqr();
        }
    }
    s
}

pub fn observables(f: &Field, p: f64) -> Result<ObservableSet> {
    check_power(p)?;
    if !f.is_finite() {
        return Err(Error::NonFinite);
    }
    let spec = f.spec;
    let cell = spec.cell();
    let mass = cell * f.values.iter().map(|v| v.norm_sqr()).sum::<f64>();
    let gradient = 0.5 * spec.h.powi(spec.d as i32 - 2) * bond_sum(f);
    let potential = cell / (p + 1.0) * f.values.iter().map(|v| v.norm().powf(p + 1.0)).sum::<f64>();
    Ok(ObservableSet {
        mass,
        gradient,
        potential,
        hamiltonian: gradient - potential,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubsetMask {
    spec_n: usize,
    spec_d: usize,
    inside: Vec<bool>,
}

impl SubsetMask {
    pub fn empty(spec: &GridSpec) -> Self {
        SubsetMask {
            spec_n: spec.n,
            spec_d: spec.d,
            inside: vec![false; spec.sites()],
        }
    }

    pub fn full(spec: &GridSpec) -> Self {
        SubsetMask {
            spec_n: spec.n,
            spec_d: spec.d,
            inside: vec![true; spec.sites()],
        }
    }

    pub fn from_bools(spec: &GridSpec, inside: Vec<bool>) -> Result<Self> {
        if inside.len() != spec.sites() {
            return Err(Error::SpecMismatch("mask length".into()));
        }
        Ok(SubsetMask {
            spec_n: spec.n,
            spec_d: spec.d,
            inside,
        })
    }

    fn check(&self, spec: &GridSpec) -> Result<()> {
        if self.spec_n != spec.n || self.spec_d != spec.d {
            return Err(Error::SpecMismatch("mask does not match grid".into()));
        }
        Ok(())
    }

    pub fn contains(&self, idx: usize) -> bool {
        self.inside[idx]
    }

    pub fn insert(&mut self, idx: usize) {
        self.inside[idx] = true;
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.inside
    }

    pub fn count(&self) -> usize {
        self.inside.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.inside.iter().any(|&b| b)
    }

    pub fn complement(&self) -> SubsetMask {
        SubsetMask {
            spec_n: self.spec_n,
            spec_d: self.spec_d,
            inside: self.inside.iter().map(|b| !b).collect(),
        }
    }

    pub fn union(&self, other: &SubsetMask) -> SubsetMask {
        SubsetMask {
            spec_n: self.spec_n,
            spec_d: self.spec_d,
            inside: self.inside.iter().zip(&other.inside).map(|(a, b)| *a || *b).collect(),
        }
    }

    /// Sites of the set that have a neighbor outside it.
    pub fn inner_boundary(&self, spec: &GridSpec) -> SubsetMask {
        let mut out = SubsetMask::empty(spec);
        for idx in 0..self.inside.len() {
            if !self.inside[idx] {
                continue;
            }
            'axes: for axis in 0..spec.d {
                for fwd in [true, false] {
                    if !self.inside[spec.neighbor(idx, axis, fwd)] {
                        out.inside[idx] = true;
                        break 'axes;
                    }
                }
            }
        }
        out
    }

    /// Set plus all neighbors of its sites.
    pub fn dilate(&self, spec: &GridSpec) -> SubsetMask {
        let mut out = self.clone();
        for idx in 0..self.inside.len() {
            if self.inside[idx] {
                for axis in 0..spec.d {
                    for fwd in [true, false] {
                        out.inside[spec.neighbor(idx, axis, fwd)] = true;
                    }
                }
            }
        }
        out
    }
}

/// Mass of `f` restricted to the sites of `mask`.
pub fn mass_on(f: &Field, mask: &SubsetMask) -> Result<f64> {
    mask.check(&f.spec)?;
    let s: f64 = f
        .values
        .iter()
        .zip(&mask.inside)
        .filter(|(_, &b)| b)
        .map(|(v, _)| v.norm_sqr())
        .sum();
    Ok(f.spec.cell() * s)
}

/// Observables of `f` on `U`: the gradient only counts bonds with both
/// endpoints in `U`.
pub fn restricted_observables(f: &Field, mask: &SubsetMask, p: f64) -> Result<ObservableSet> {
    check_power(p)?;
    mask.check(&f.spec)?;
    let spec = f.spec;
    let v = &f.values;
    let cell = spec.cell();
    let mut m = 0.0;
    let mut pot = 0.0;
    let mut bonds = 0.0;
    for idx in 0..v.len() {
        if !mask.inside[idx] {
            continue;
        }
        m += v[idx].norm_sqr();
        pot += v[idx].norm().powf(p + 1.0);
        for axis in 0..spec.d {
            let j = spec.neighbor(idx, axis, true);
            if mask.inside[j] {
                bonds += (v[j] - v[idx]).norm_sqr();
            }
        }
    }
    let gradient = 0.5 * spec.h.powi(spec.d as i32 - 2) * bonds;
    let potential = cell * pot / (p + 1.0);
    Ok(ObservableSet {
        mass: cell * m,
        gradient,
        potential,
        hamiltonian: gradient - potential,
    })
}

/// `{x : |f(x)| > eps}`.
pub fn level_set(f: &Field, eps: f64) -> SubsetMask {
    SubsetMask {
        spec_n: f.spec.n,
        spec_d: f.spec.d,
        inside: f.values.iter().map(|v| v.norm() > eps).collect(),
    }
}

#[derive(Debug, Clone)]
pub struct SpecialSet {
    pub mask: SubsetMask,
    /// Which dilation `U_i` was selected (1-based).
    pub index: usize,
    /// Number of dilations considered.
    pub dilations: usize,
    /// Mass on the two-sided boundary of the selected set.
    pub boundary_mass: f64,
    /// True when the level set was empty and a single peak site seeded the search.
    pub seeded_from_peak: bool,
}

/// Build the nested dilations `U_1 ⊂ ... ⊂ U_k` of the level set `{|f| > eps}`,
/// `k = ceil(1/eps)`, and keep the one with the least mass on
/// `∂U ∪ ∂(U^c)`.
pub fn special_set(f: &Field, eps: f64) -> Result<SpecialSet> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(invalid(format!("eps {eps} must be positive")));
    }
    let spec = f.spec;
    let mut u = level_set(f, eps);
    let mut seeded = false;
    if u.is_empty() {
        u.insert(f.argmax_abs());
        seeded = true;
    }
    let k = ((1.0 / eps).ceil() as usize).max(1);
    let mut best: Option<(f64, usize, SubsetMask)> = None;
    for i in 1..=k {
        let w = u.inner_boundary(&spec).union(&u.complement().inner_boundary(&spec));
        let bm = mass_on(f, &w)?;
        if best.as_ref().is_none_or(|(b, _, _)| bm < *b) {
            best = Some((bm, i, u.clone()));
        }
        if i < k {
            u = u.dilate(&spec);
        }
    }
    let (boundary_mass, index, mask) = best.expect("k >= 1");
    debug_assert!(check_special_set(f, &mask, eps, 3.0)
        .map(|c| c.sup_ok && c.boundary_ok)
        .unwrap_or(false));
    Ok(SpecialSet {
        mask,
        index,
        dilations: k,
        boundary_mass,
        seeded_from_peak: seeded,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpecialSetCheck {
    pub size: usize,
    pub size_bound: f64,
    pub size_ok: bool,
    pub sup_outside: f64,
    pub sup_ok: bool,
    pub potential_outside: f64,
    pub potential_bound: f64,
    pub potential_ok: bool,
    pub boundary_mass: f64,
    pub boundary_bound: f64,
    pub boundary_ok: bool,
}

impl SpecialSetCheck {
    pub fn all(&self) -> bool {
        self.size_ok && self.sup_ok && self.potential_ok && self.boundary_ok
    }
}

/// Check the four special-set properties of `U` for `f` at level `eps`.
/// The size bound is `max(1, 4^d m / (h^d eps^{d+2}))`: a nonempty set has at
/// least one site even when the field is uniformly small.
pub fn check_special_set(f: &Field, mask: &SubsetMask, eps: f64, p: f64) -> Result<SpecialSetCheck> {
    check_power(p)?;
    mask.check(&f.spec)?;
    let spec = f.spec;
    let m = f.mass();
    let d = spec.d as i32;
    let size = mask.count();
    let size_bound = (4f64.powi(d) * m / (spec.cell() * eps.powi(d + 2))).max(1.0);
    let comp = mask.complement();
    let sup_outside = f
        .values
        .iter()
        .zip(&comp.inside)
        .filter(|(_, &b)| b)
        .map(|(v, _)| v.norm())
        .fold(0.0, f64::max);
    let potential_outside = restricted_observables(f, &comp, p)?.potential;
    let potential_bound = eps.powf(p - 1.0) * m / (p + 1.0);
    let w = mask.inner_boundary(&spec).union(&comp.inner_boundary(&spec));
    let boundary_mass = mass_on(f, &w)?;
    let boundary_bound = 2.0 * eps * m;
    let slack = 1e-12 * (1.0 + m);
    Ok(SpecialSetCheck {
        size,
        size_bound,
        size_ok: size as f64 <= size_bound,
        sup_outside,
        sup_ok: sup_outside <= eps,
        potential_outside,
        potential_bound,
        potential_ok: potential_outside <= potential_bound + slack,
        boundary_mass,
        boundary_bound,
        boundary_ok: boundary_mass <= boundary_bound + slack,
    })
}

/// Multi-source breadth-first torus distance to the sites of `mask`.
/// Sites unreachable (empty mask) get `usize::MAX`.
pub fn distance_to_set(spec: &GridSpec, mask: &SubsetMask) -> Vec<usize> {
    let mut dist = vec![usize::MAX; spec.sites()];
    let mut queue = std::collections::VecDeque::new();
    for (i, &b) in mask.inside.iter().enumerate() {
        if b {
            dist[i] = 0;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        for axis in 0..spec.d {
            for fwd in [true, false] {
                let j = spec.neighbor(i, axis, fwd);
                if dist[j] == usize::MAX {
                    dist[j] = dist[i] + 1;
                    queue.push_back(j);
                }
            }
        }
    }
    dist
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(GridSpec::new(0, 4, 1.0).is_err());
        assert!(GridSpec::new(1, 1, 1.0).is_err());
        assert!(GridSpec::new(1, 4, 0.0).is_err());
        assert!(GridSpec::new(1, 4, f64::NAN).is_err());
    }

    #[test]
    fn index_roundtrip() {
        let s = GridSpec::new(3, 5, 0.3).unwrap();
        for i in 0..s.sites() {
            assert_eq!(s.index(&s.coords(i)), i);
        }
        assert_eq!(s.neighbor(s.index(&[4, 0, 0]), 0, true), s.index(&[0, 0, 0]));
        assert_eq!(s.neighbor(s.index(&[1, 0, 0]), 2, false), s.index(&[1, 0, 4]));
        assert_eq!(s.torus_l1(s.index(&[0, 0, 0]), s.index(&[4, 3, 1])), 1 + 2 + 1);
    }

    #[test]
    fn constant_field_has_no_gradient() {
        let s = GridSpec::new(2, 6, 0.5).unwrap();
        let f = Field::new(s, vec![c(0.3, -0.4); 36]).unwrap();
        let o = observables(&f, 3.0).unwrap();
        assert!(o.gradient.abs() < 1e-15);
        assert!((o.mass - 0.25 * 36.0 * 0.25).abs() < 1e-12);
        assert!((o.potential - 0.25 / 4.0 * 36.0 * 0.5f64.powi(4)).abs() < 1e-12);
    }

    #[test]
    fn alternating_mode_reaches_max_energy() {
        // f = sqrt(m h^{-d}) rho at frequency n/2 saturates G = 2 d m / h^2.
        let s = GridSpec::new(1, 8, 0.5).unwrap();
        let m = 2.0;
        let a = (m / s.cell() / 8.0).sqrt();
        let f = Field::from_fn(s, |x| c(if x[0] % 2 == 0 { a } else { -a }, 0.0)).unwrap();
        let o = observables(&f, 3.0).unwrap();
        assert!((o.mass - m).abs() < 1e-12);
        assert!((o.gradient - s.max_energy(m)).abs() < 1e-10);
    }

    #[test]
    fn two_site_torus_counts_both_bonds() {
        let s = GridSpec::new(1, 2, 1.0).unwrap();
        let f = Field::from_real(s, &[1.0, -1.0]).unwrap();
        // Two bonds (0,1) and (1,0) each with |diff|^2 = 4.
        assert!((observables(&f, 3.0).unwrap().gradient - 4.0).abs() < 1e-14);
    }

    #[test]
    fn restricted_to_full_mask_matches() {
        let s = GridSpec::new(2, 5, 0.7).unwrap();
        let f = Field::from_fn(s, |x| c(x[0] as f64 * 0.1, (x[1] as f64).sin())).unwrap();
        let a = observables(&f, 2.5).unwrap();
        let b = restricted_observables(&f, &SubsetMask::full(&s), 2.5).unwrap();
        assert!((a.gradient - b.gradient).abs() < 1e-12);
        assert!((a.mass - b.mass).abs() < 1e-12);
        assert!((a.potential - b.potential).abs() < 1e-12);
    }

    #[test]
    fn special_set_properties() {
        let s = GridSpec::new(1, 64, 0.5).unwrap();
        let f = Field::from_fn(s, |x| {
            let y = (x[0] as f64 - 20.0) * 0.5;
            c(1.2 / y.cosh(), 0.1 * (x[0] as f64).cos())
        })
        .unwrap();
        for eps in [0.05, 0.1, 0.3, 0.9] {
            let ss = special_set(&f, eps).unwrap();
            let chk = check_special_set(&f, &ss.mask, eps, 3.0).unwrap();
            assert!(chk.all(), "eps {eps}: {chk:?}");
            assert!(ss.index >= 1 && ss.index <= ss.dilations);
            assert!(ss.dilations as f64 <= 2.0 / eps + 1e-12 && ss.dilations as f64 >= 1.0 / eps - 1e-12);
        }
    }

    #[test]
    fn special_set_from_small_field_uses_peak() {
        let s = GridSpec::new(1, 16, 1.0).unwrap();
        let f = Field::from_fn(s, |x| c(0.01 * (x[0] as f64 + 1.0) / 16.0, 0.0)).unwrap();
        let ss = special_set(&f, 0.5).unwrap();
        assert!(ss.seeded_from_peak);
        assert!(ss.mask.contains(15));
    }

    #[test]
    fn bfs_distance_matches_torus_metric() {
        let s = GridSpec::new(2, 7, 1.0).unwrap();
        let mut m = SubsetMask::empty(&s);
        m.insert(s.index(&[1, 1]));
        let dist = distance_to_set(&s, &m);
        for i in 0..s.sites() {
            assert_eq!(dist[i], s.torus_l1(i, s.index(&[1, 1])));
        }
    }

    #[test]
    fn canonical_gauge_puts_positive_peak_at_target() {
        let s = GridSpec::new(1, 10, 1.0).unwrap();
        let f = Field::from_fn(s, |x| {
            let r = (x[0] as f64 - 6.0).abs();
            Complex64::from_polar(1.0 / (1.0 + r), 0.7)
        })
        .unwrap();
        let g = f.canonical_gauge(0);
        assert_eq!(g.argmax_abs(), 0);
        assert!(g.values()[0].im.abs() < 1e-15 && g.values()[0].re > 0.0);
    }
}
