//! Plain-text CSV snapshots. Doubles are written with 17 significant digits,
//! which round-trips every finite `f64` exactly.

use std::io::{BufRead, Write};

use num_complex::Complex64;

use super::{SpectralField, SpectralGrid};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub time: f64,
    pub field: SpectralField,
}

pub fn write_snapshot<W: Write>(mut out: W, field: &SpectralField, time: f64) -> Result<()> {
    let grid = field.grid();
    writeln!(out, "n_max,period,timestamp")?;
    writeln!(out, "{},{:.16e},{:.16e}", grid.n_max(), grid.domain_period(), time)?;
    writeln!(out, "k1,k2,re,im")?;
    for (k, c) in grid.modes().iter().zip(field.coeffs()) {
        writeln!(out, "{},{},{:.16e},{:.16e}", k[0], k[1], c.re, c.im)?;
    }
    Ok(())
}

fn parse<T: std::str::FromStr>(s: &str, what: &str, line: usize) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::Parse(format!("line {line}: bad {what} {s:?}")))
}

/// Read a snapshot; modes absent from the file are zero, and a mode outside
/// the header's `n_max` is an error.
pub fn read_snapshot<R: BufRead>(input: R) -> Result<Snapshot> {
    let mut lines = input.lines().enumerate();
    let mut next = |expect: &str| -> Result<(usize, String)> {
        match lines.next() {
            Some((i, l)) => Ok((i + 1, l?)),
            None => Err(Error::Parse(format!("unexpected end of file, expected {expect}"))),
        }
    };
    let (ln, head) = next("header")?;
    if head.trim() != "n_max,period,timestamp" {
        return Err(Error::Parse(format!("line {ln}: unexpected header {head:?}")));
    }
    let (ln, meta) = next("grid line")?;
    let parts: Vec<&str> = meta.split(',').collect();
    if parts.len() != 3 {
        return Err(Error::Parse(format!("line {ln}: expected 3 fields")));
    }
    let n_max: usize = parse(parts[0], "n_max", ln)?;
    let period: f64 = parse(parts[1], "period", ln)?;
    let time: f64 = parse(parts[2], "timestamp", ln)?;
    let grid = SpectralGrid::new(n_max)?;
    if period != grid.domain_period() {
        return Err(Error::Parse(format!("line {ln}: unsupported period {period}")));
    }
    let (ln, cols) = next("column header")?;
    if cols.trim() != "k1,k2,re,im" {
        return Err(Error::Parse(format!("line {ln}: unexpected column header {cols:?}")));
    }
    let mut field = SpectralField::zeros(&grid);
    for (i, line) in lines {
        let line = line?;
        let ln = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let p: Vec<&str> = line.split(',').collect();
        if p.len() != 4 {
            return Err(Error::Parse(format!("line {ln}: expected 4 fields")));
        }
        let k = [parse(p[0], "k1", ln)?, parse(p[1], "k2", ln)?];
        let c = Complex64::new(parse(p[2], "re", ln)?, parse(p[3], "im", ln)?);
        let idx = grid
            .index_of(k)
            .ok_or_else(|| Error::Parse(format!("line {ln}: {k:?} is not a stored mode")))?;
        field.coeffs_mut()[idx] = c;
    }
    Ok(Snapshot { time, field })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let g = SpectralGrid::new(3).unwrap();
        let u = SpectralField::from_fn(&g, |k| {
            Complex64::new(1.0 / 3.0 * f64::from(k[0]), std::f64::consts::E.powi(k[1]) * 1e-300)
        });
        let mut buf = Vec::new();
        write_snapshot(&mut buf, &u, 0.1 + 0.2).unwrap();
        let s = read_snapshot(buf.as_slice()).unwrap();
        assert_eq!(s.time.to_bits(), (0.1f64 + 0.2).to_bits());
        for (a, b) in u.coeffs().iter().zip(s.field.coeffs()) {
            assert_eq!(a.re.to_bits(), b.re.to_bits());
            assert_eq!(a.im.to_bits(), b.im.to_bits());
        }
    }

    #[test]
    fn rejects_foreign_modes() {
        let text = "n_max,period,timestamp\n2,6.2831853071795862e0,0\nk1,k2,re,im\n0,-1,1,0\n";
        assert!(read_snapshot(text.as_bytes()).is_err());
    }
}
