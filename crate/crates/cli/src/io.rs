//! File formats: CSV tables, wall displacement tables, plain-text field dumps
//! and checksums.

use crate::config::hex;
use rothe_core::field::DiscreteField;
use rothe_core::geometry::AleMap;
use rothe_core::grid::Layout;
use rothe_core::{Error, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Rows `(n, j, z, eta)` for every stored step and wall vertex.
pub fn write_etas(path: &Path, etas: &[Vec<f64>], length: f64) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["n", "j", "z", "eta"]).map_err(csv_err)?;
    for (n, eta) in etas.iter().enumerate() {
        let nz = eta.len() - 1;
        for (j, v) in eta.iter().enumerate() {
            let z = j as f64 * length / nz as f64;
            w.write_record([n.to_string(), j.to_string(), z.to_string(), v.to_string()]).map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_etas(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut out: Vec<Vec<f64>> = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let bad = || Error::Config(format!("{}: malformed displacement row", path.display()));
        let n: usize = rec.get(0).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let j: usize = rec.get(1).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let v: f64 = rec.get(3).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        if n == out.len() {
            out.push(Vec::new());
        }
        if n + 1 != out.len() || j != out[n].len() {
            return Err(bad());
        }
        out[n].push(v);
    }
    Ok(out)
}

/// One block per field: `nz nr n dt`, then the `uz`, `ur` and wall arrays on
/// one line each (row-major, `uz` is `(nz+1) x nr`, `ur` is `nz x (nr+1)`).
pub fn write_fields(path: &Path, fields: &[DiscreteField], dt: f64) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    let mut line = String::new();
    for (n, u) in fields.iter().enumerate() {
        let g = u.layout.grid;
        writeln!(w, "{} {} {} {}", g.nz, g.nr, n, dt)?;
        let (uz, ur, shell) = u.layout.unpack(&u.x);
        for (name, arr) in [("uz", &uz), ("ur", &ur), ("wall", &shell)] {
            line.clear();
            line.push_str(name);
            for v in arr {
                write!(line, " {v}").expect("write to string");
            }
            writeln!(w, "{line}")?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads field dumps back; `maps[n]` is the domain of field `n`.
pub fn read_fields(path: &Path, layout: &Arc<Layout>, maps: &[AleMap]) -> Result<Vec<DiscreteField>> {
    let bad = |msg: &str| Error::Config(format!("{}: {msg}", path.display()));
    let r = BufReader::new(std::fs::File::open(path)?);
    let mut lines = r.lines();
    let mut out = Vec::new();
    let g = layout.grid;
    while let Some(head) = lines.next() {
        let head = head?;
        if head.trim().is_empty() {
            continue;
        }
        let h: Vec<&str> = head.split_whitespace().collect();
        if h.len() != 4 || h[0].parse::<usize>().ok() != Some(g.nz) || h[1].parse::<usize>().ok() != Some(g.nr) {
            return Err(bad("field header does not match the grid"));
        }
        if h[2].parse::<usize>().ok() != Some(out.len()) {
            return Err(bad("field blocks out of order"));
        }
        let mut arrays = Vec::with_capacity(3);
        for name in ["uz", "ur", "wall"] {
            let l = lines.next().ok_or_else(|| bad("truncated field block"))??;
            let mut it = l.split_whitespace();
            if it.next() != Some(name) {
                return Err(bad("unexpected array name"));
            }
            let v: std::result::Result<Vec<f64>, _> = it.map(str::parse).collect();
            arrays.push(v.map_err(|_| bad("bad number"))?);
        }
        let map = maps.get(out.len()).ok_or_else(|| bad("more fields than domains"))?;
        let shell = if layout.has_shell() { Some(arrays[2].as_slice()) } else { None };
        let x = layout.pack(&arrays[0], &arrays[1], shell)?;
        out.push(DiscreteField::new(layout.clone(), map.clone(), x)?);
    }
    Ok(out)
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = std::fs::File::open(path)?;
    let mut h = Sha256::new();
    std::io::copy(&mut f, &mut h)?;
    Ok(hex(&h.finalize()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}
