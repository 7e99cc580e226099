//! File formats: binary field snapshots, emin table CSV, trajectory CSV.
//! Floats in text formats use 17 significant digits.

use std::io::{BufRead, BufReader, Read, Write};

use num_complex::Complex64;

use crate::dnls::TrajectoryStats;
use crate::error::{Error, Result};
use crate::lattice::{Field, GridSpec};
use crate::soliton::{EminRow, EminTable};

const MAGIC: &[u8; 4] = b"NLSF";
const VERSION: u32 = 1;

/// `{:.16e}`: 17 significant digits, exact round trip.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Magic, version (u32), d (u32), n (u64), h (f64), then `(re, im)` pairs
/// in row-major order, all little-endian.
pub fn write_field(w: &mut impl Write, f: &Field) -> Result<()> {
    let s = f.spec();
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(s.d as u32).to_le_bytes())?;
    w.write_all(&(s.n as u64).to_le_bytes())?;
    w.write_all(&s.h.to_le_bytes())?;
    for v in f.values() {
        w.write_all(&v.re.to_le_bytes())?;
        w.write_all(&v.im.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_field(r: &mut impl Read) -> Result<Field> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a field snapshot (bad magic)".into()));
    }
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported snapshot version {version}")));
    }
    r.read_exact(&mut b4)?;
    let d = u32::from_le_bytes(b4) as usize;
    r.read_exact(&mut b8)?;
    let n = u64::from_le_bytes(b8) as usize;
    r.read_exact(&mut b8)?;
    let h = f64::from_le_bytes(b8);
    let spec = GridSpec::new(d, n, h).map_err(|e| Error::Format(format!("bad snapshot header: {e}")))?;
    let mut values = Vec::with_capacity(spec.sites());
    for _ in 0..spec.sites() {
        r.read_exact(&mut b8)?;
        let re = f64::from_le_bytes(b8);
        r.read_exact(&mut b8)?;
        values.push(Complex64::new(re, f64::from_le_bytes(b8)));
    }
    Field::new(spec, values)
}

pub fn write_emin_csv(w: &mut impl Write, t: &EminTable) -> Result<()> {
    writeln!(w, "p,d,h,n")?;
    writeln!(w, "{},{},{},{}", fmt17(t.p), t.d, fmt17(t.h), t.n)?;
    writeln!(w, "m,E_min,omega,residual,solver_flags")?;
    for r in &t.rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            fmt17(r.m),
            fmt17(r.e_min),
            fmt17(r.omega),
            fmt17(r.residual),
            r.flags
        )?;
    }
    Ok(())
}

pub fn read_emin_csv(r: impl Read) -> Result<EminTable> {
    let lines: Vec<String> = BufReader::new(r).lines().collect::<std::io::Result<_>>()?;
    let bad = |msg: &str| Error::Format(format!("emin table: {msg}"));
    if lines.len() < 3 || lines[0].trim() != "p,d,h,n" || lines[2].trim() != "m,E_min,omega,residual,solver_flags" {
        return Err(bad("missing headers"));
    }
    let head: Vec<&str> = lines[1].split(',').collect();
    if head.len() != 4 {
        return Err(bad("header row needs 4 fields"));
    }
    let pf = |s: &str| s.trim().parse::<f64>().map_err(|_| bad(&format!("bad number {s:?}")));
    let pu = |s: &str| s.trim().parse::<usize>().map_err(|_| bad(&format!("bad integer {s:?}")));
    let (p, d, h, n) = (pf(head[0])?, pu(head[1])?, pf(head[2])?, pu(head[3])?);
    let mut rows = Vec::new();
    for line in &lines[3..] {
        if line.trim().is_empty() {
            continue;
        }
        let c: Vec<&str> = line.split(',').collect();
        if c.len() != 5 {
            return Err(bad("row needs 5 fields"));
        }
        rows.push(EminRow {
            m: pf(c[0])?,
            e_min: pf(c[1])?,
            omega: pf(c[2])?,
            residual: pf(c[3])?,
            flags: c[4].trim().parse().map_err(|_| bad("bad flags"))?,
        });
    }
    EminTable::new(p, d, h, n, rows)
}

/// Columns `t, mass, energy, distance` (distance empty without a reference).
pub fn write_trajectory_csv(w: &mut impl Write, s: &TrajectoryStats) -> Result<()> {
    writeln!(w, "t,mass,energy,distance")?;
    for k in 0..s.times.len() {
        let dist = s.distance_series.get(k).map(|&x| fmt17(x)).unwrap_or_default();
        writeln!(w, "{},{},{},{}", fmt17(s.times[k]), fmt17(s.mass[k]), fmt17(s.energy[k]), dist)?;
    }
    Ok(())
}
