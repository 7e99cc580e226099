//! The `(E, m)` entropy problem for the radiation part.
//!
//! `Θ(E, m) = log m - Ψ_d(2h²E/m)` is maximized over the region between
//! `E^-(m) = E_0 - 2d(m_0-m)/h²` and `E^+(m) = E_0 - E_min(m_0-m, h)`.
//! Here `m` is the radiated mass and `m_0 - m` the mass left in the soliton.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numerics::golden_max;
use crate::rate::psi;
use crate::soliton::EminTable;

pub fn theta(e: f64, m: f64, h: f64, d: usize) -> Result<f64> {
    if !(m >= 0.0) || !(e.is_finite()) || !(h > 0.0) {
        return Err(invalid(format!("theta needs m >= 0 and finite E, got E = {e}, m = {m}")));
    }
    if m == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    let alpha = 2.0 * h * h * e / m;
    Ok(m.ln() - psi(alpha, d)?.value)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionCurves {
    pub m0: f64,
    pub e0: f64,
    pub h: f64,
    pub m_grid: Vec<f64>,
    pub e_minus: Vec<f64>,
    pub e_plus: Vec<f64>,
    pub feasible: Vec<bool>,
}

#[derive(Debug, Clone, Copy)]
struct Problem<'a> {
    e0: f64,
    m0: f64,
    h: f64,
    d: usize,
    table: &'a EminTable,
}

impl Problem<'_> {
    fn e_plus(&self, m: f64) -> Result<f64> {
        Ok(self.e0 - self.table.eval((self.m0 - m).max(0.0))?)
    }

    fn e_minus(&self, m: f64) -> f64 {
        self.e0 - 2.0 * self.d as f64 * (self.m0 - m) / (self.h * self.h)
    }

    fn feasible(&self, m: f64) -> Result<bool> {
        Ok(self.e_minus(m).max(0.0) <= self.e_plus(m)?)
    }

    /// Θ(E^+(m), m), or -∞ where the point is infeasible.
    fn objective(&self, m: f64) -> f64 {
        if !(m > 0.0 && m <= self.m0) {
            return f64::NEG_INFINITY;
        }
        match (self.e_plus(m), self.feasible(m)) {
            (Ok(e), Ok(true)) => theta(e, m, self.h, self.d).unwrap_or(f64::NEG_INFINITY),
            _ => f64::NEG_INFINITY,
        }
    }

    /// `q(m') = log(m0 - m') - Ψ(2h²(E0 - E_min(m'))/(m0 - m'))`.
    fn score(&self, mp: f64) -> f64 {
        let r = self.m0 - mp;
        if !(r > 0.0) || mp < 0.0 {
            return f64::NEG_INFINITY;
        }
        let Ok(em) = self.table.eval(mp) else {
            return f64::NEG_INFINITY;
        };
        let alpha = 2.0 * self.h * self.h * (self.e0 - em) / r;
        match psi(alpha, self.d) {
            Ok(v) => r.ln() - v.value,
            Err(_) => f64::NEG_INFINITY,
        }
    }
}

fn check_inputs(e0: f64, m0: f64, h: f64, table: &EminTable) -> Result<()> {
    if !(m0 > 0.0 && m0.is_finite()) {
        return Err(invalid(format!("m0 = {m0} must be positive")));
    }
    if !(h > 0.0) || !(e0.is_finite()) {
        return Err(invalid("E0 must be finite and h positive"));
    }
    if (table.h - h).abs() > 1e-12 * h {
        return Err(invalid(format!("table is for h = {}, not {h}", table.h)));
    }
    if table.rows[0].m > 0.0 || table.max_mass() < m0 * (1.0 - 1e-12) {
        return Err(Error::TableGap(format!("table covers [{}, {}], need [0, {m0}]", table.rows[0].m, table.max_mass())));
    }
    if let Some(bad) = table.rows.iter().find(|r| r.m <= m0 && (r.flags & 2) != 0) {
        return Err(Error::TableGap(format!("unconverged row at m = {}", bad.m)));
    }
    let emin = table.eval(m0)?;
    if !(e0 > emin) {
        return Err(Error::EmptyRegion(format!("E0 = {e0} is not above E_min(m0) = {emin}")));
    }
    Ok(())
}

/// 512 log-spaced points near each end of `(0, m0]` plus 512 uniform ones.
pub fn mass_grid(m0: f64) -> Vec<f64> {
    let mut g = Vec::with_capacity(1536);
    for k in 0..512 {
        let t = -6.0 + 6.0 * k as f64 / 511.0;
        g.push(m0 * 10f64.powf(t));
        g.push(m0 * (1.0 - 10f64.powf(t)));
        g.push(m0 * (k as f64 + 1.0) / 512.0);
    }
    g.retain(|&m| m > 0.0 && m <= m0);
    g.sort_by(|a, b| a.total_cmp(b));
    g.dedup_by(|a, b| (*a - *b).abs() <= 1e-15 * m0);
    g
}

pub fn region(e0: f64, m0: f64, h: f64, d: usize, table: &EminTable) -> Result<RegionCurves> {
    check_inputs(e0, m0, h, table)?;
    let pb = Problem { e0, m0, h, d, table };
    let mut m_grid = vec![0.0];
    m_grid.extend(mass_grid(m0));
    let mut e_minus = Vec::with_capacity(m_grid.len());
    let mut e_plus = Vec::with_capacity(m_grid.len());
    let mut feasible = Vec::with_capacity(m_grid.len());
    for &m in &m_grid {
        e_minus.push(pb.e_minus(m));
        e_plus.push(pb.e_plus(m)?);
        feasible.push(pb.feasible(m)?);
    }
    Ok(RegionCurves {
        m0,
        e0,
        h,
        m_grid,
        e_minus,
        e_plus,
        feasible,
    })
}

/// Grid scan, then three rounds of golden-section refinement on each
/// candidate bracket. Returns `(argmax, value)` pairs within `rel_tol` of
/// the best.
fn maximize_1d(f: &dyn Fn(f64) -> f64, grid: &[f64], rel_tol: f64) -> Vec<(f64, f64)> {
    let vals: Vec<f64> = grid.iter().map(|&x| f(x)).collect();
    let top = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return Vec::new();
    }
    let mut cands = Vec::new();
    for i in 0..grid.len() {
        let left = if i > 0 { vals[i - 1] } else { f64::NEG_INFINITY };
        let right = if i + 1 < grid.len() { vals[i + 1] } else { f64::NEG_INFINITY };
        if vals[i].is_finite() && vals[i] >= left && vals[i] >= right {
            let lo = if i > 0 { grid[i - 1] } else { grid[i] };
            let hi = if i + 1 < grid.len() { grid[i + 1] } else { grid[i] };
            let (mut a, mut b) = (lo, hi);
            let mut best = (grid[i], vals[i]);
            for _ in 0..3 {
                if b - a <= 0.0 {
                    break;
                }
                let (x, v) = golden_max(f, a, b, 1e-14 * (1.0 + b.abs()));
                if v > best.1 {
                    best = (x, v);
                }
                let w = 0.25 * (b - a);
                a = (best.0 - w).max(lo);
                b = (best.0 + w).min(hi);
            }
            cands.push(best);
        }
    }
    let gmax = cands.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
    let tol = rel_tol * gmax.abs().max(1e-300);
    let mut out: Vec<(f64, f64)> = cands.into_iter().filter(|c| c.1 >= gmax - tol).collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out.dedup_by(|a, b| (a.0 - b.0).abs() <= 1e-9 * (1.0 + a.0.abs()));
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaximizerPoint {
    pub e: f64,
    pub m: f64,
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaximizerSet {
    pub points: Vec<MaximizerPoint>,
    pub theta_hat: f64,
    pub tolerance: f64,
    /// `E0 ≥ d m0 / h²`: the energy is too large for any soliton to form.
    pub radiating: bool,
}

pub const TIE_TOLERANCE: f64 = 1e-6;

pub fn maximizer_set(e0: f64, m0: f64, h: f64, d: usize, table: &EminTable) -> Result<MaximizerSet> {
    check_inputs(e0, m0, h, table)?;
    let pb = Problem { e0, m0, h, d, table };
    let grid = mass_grid(m0);
    let found = maximize_1d(&|m| pb.objective(m), &grid, TIE_TOLERANCE);
    if found.is_empty() {
        return Err(Error::EmptyRegion(format!("no feasible point for E0 = {e0}, m0 = {m0}")));
    }
    let theta_hat = found.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
    let points = found
        .iter()
        .map(|&(m, v)| {
            Ok(MaximizerPoint {
                e: pb.e_plus(m)?,
                m,
                theta: v,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MaximizerSet {
        points,
        theta_hat,
        tolerance: TIE_TOLERANCE * theta_hat.abs(),
        radiating: e0 >= d as f64 * m0 / (h * h),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSet {
    pub masses: Vec<f64>,
    pub scores: Vec<f64>,
    /// The same masses obtained as `m0 - m*` from the maximizer set.
    pub from_maximizers: Vec<f64>,
    /// Largest gap between the two routes.
    pub route_gap: f64,
    pub radiating: bool,
}

pub fn k_set(e0: f64, m0: f64, h: f64, d: usize, table: &EminTable) -> Result<KSet> {
    check_inputs(e0, m0, h, table)?;
    let pb = Problem { e0, m0, h, d, table };
    let mut grid = vec![0.0];
    grid.extend(mass_grid(m0).iter().map(|&m| m0 - m).filter(|&x| x >= 0.0));
    grid.sort_by(|a, b| a.total_cmp(b));
    grid.dedup();
    let found = maximize_1d(&|mp| pb.score(mp), &grid, TIE_TOLERANCE);
    let ms = maximizer_set(e0, m0, h, d, table)?;
    let from_max: Vec<f64> = ms.points.iter().map(|p| m0 - p.m).collect();
    let masses: Vec<f64> = found.iter().map(|c| c.0).collect();
    let scores: Vec<f64> = found.iter().map(|c| c.1).collect();
    let radiating = ms.radiating || masses.is_empty();
    let gap = if masses.is_empty() || from_max.is_empty() {
        f64::INFINITY
    } else {
        let one_way = |a: &[f64], b: &[f64]| {
            a.iter()
                .map(|x| b.iter().map(|y| (x - y).abs()).fold(f64::INFINITY, f64::min))
                .fold(0.0, f64::max)
        };
        one_way(&masses, &from_max).max(one_way(&from_max, &masses))
    };
    Ok(KSet {
        masses,
        scores,
        from_maximizers: from_max,
        route_gap: gap,
        radiating,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendRow {
    pub h: f64,
    pub m_h: f64,
    pub e_h: f64,
    /// `E0 - E_min(m0 - m_h, h)`, equal to `e_h` by construction.
    pub e_plus: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trend {
    pub rows: Vec<TrendRow>,
    /// `E0 - E_min(m0)` from the continuum soliton.
    pub limit_energy: f64,
}

pub fn continuum_limit_trend(e0: f64, m0: f64, d: usize, tables: &[EminTable], continuum_emin_m0: f64) -> Result<Trend> {
    use rayon::prelude::*;
    let rows = tables
        .par_iter()
        .map(|t| {
            let ms = maximizer_set(e0, m0, t.h, d, t)?;
            let p = ms.points[0];
            Ok(TrendRow {
                h: t.h,
                m_h: p.m,
                e_h: p.e,
                e_plus: e0 - t.eval(m0 - p.m)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Trend {
        rows,
        limit_energy: e0 - continuum_emin_m0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::soliton::EminRow;

    /// Continuum-shaped table `E_min(m) = -m³/96` on a fine grid.
    fn cubic_table(h: f64, m0: f64) -> EminTable {
        let rows = (0..=400)
            .map(|k| {
                let m = m0 * k as f64 / 400.0;
                EminRow {
                    m,
                    e_min: -m.powi(3) / 96.0,
                    omega: m * m / 16.0,
                    residual: 0.0,
                    flags: 0,
                }
            })
            .collect();
        EminTable::new(3.0, 1, h, 100, rows).unwrap()
    }

    #[test]
    fn theta_examples() {
        assert_eq!(theta(1.0, 0.0, 1.0, 1).unwrap(), f64::NEG_INFINITY);
        assert!((theta(2.0, 2.0, 1.0, 1).unwrap() - 2f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn region_endpoints() {
        let t = cubic_table(0.5, 4.0);
        let r = region(1.0, 4.0, 0.5, 1, &t).unwrap();
        let last = r.m_grid.len() - 1;
        assert!((r.m_grid[last] - 4.0).abs() < 1e-12);
        assert!((r.e_plus[last] - 1.0).abs() < 1e-12 && (r.e_minus[last] - 1.0).abs() < 1e-12);
        assert!(r.feasible.iter().any(|&f| f));
        assert!(region(-2.0, 4.0, 0.5, 1, &t).is_err());
        assert!(region(1.0, 5.0, 0.5, 1, &t).is_err());
    }

    #[test]
    fn maximizers_sit_on_upper_curve_and_beat_probes() {
        use rand::{Rng, SeedableRng};
        let t = cubic_table(0.5, 4.0);
        let (e0, m0, h) = (0.5, 4.0, 0.5);
        let ms = maximizer_set(e0, m0, h, 1, &t).unwrap();
        let pb = Problem { e0, m0, h, d: 1, table: &t };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for p in &ms.points {
            assert!(p.m > 0.0);
            assert!((p.e - pb.e_plus(p.m).unwrap()).abs() < 1e-12);
        }
        let mut probes = 0;
        while probes < 100 {
            let m = rng.random_range(0.0..m0);
            let lo = pb.e_minus(m).max(0.0);
            let hi = pb.e_plus(m).unwrap();
            if lo > hi {
                continue;
            }
            let e = rng.random_range(lo..=hi);
            assert!(theta(e, m, h, 1).unwrap() <= ms.theta_hat + 1e-9);
            probes += 1;
        }
    }

    #[test]
    fn two_routes_agree() {
        let t = cubic_table(0.5, 4.0);
        for e0 in [-0.3, 0.0, 0.5, 2.0] {
            let k = k_set(e0, 4.0, 0.5, 1, &t).unwrap();
            assert!(k.route_gap < 1e-6, "E0 = {e0}: {k:?}");
        }
    }
}
