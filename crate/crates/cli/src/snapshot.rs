//! Binary field snapshots and their CSV export.
//!
//! A snapshot is the header line `obstacle-mcf v1 dim=<d> n=<n> t=<time>\n`
//! followed by `n^d` little-endian `f64` values in row-major order.

use std::fmt::Write as _;
use std::path::Path;

use obstacle_mcf::grid::ScalarField;
use obstacle_mcf::{Field, TorusGrid};

use crate::error::{CliError, CliResult};

const MAGIC: &str = "obstacle-mcf v1";

pub fn encode(u: &Field, t: f64) -> Vec<u8> {
    let grid = u.grid();
    let header = format!("{MAGIC} dim={} n={} t={t}\n", grid.dim(), grid.n());
    let mut out = Vec::with_capacity(header.len() + 8 * grid.len());
    out.extend_from_slice(header.as_bytes());
    for v in u.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> CliResult<(Field, f64)> {
    let bad = |message: String| CliError::Snapshot { path: path.to_path_buf(), message };
    let end = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| bad("missing header line".into()))?;
    let header = std::str::from_utf8(&bytes[..end]).map_err(|_| bad("header is not text".into()))?;
    let rest = header.strip_prefix(MAGIC).ok_or_else(|| bad(format!("header must start with `{MAGIC}`")))?;
    let mut dim = None;
    let mut n = None;
    let mut t = None;
    for token in rest.split_whitespace() {
        match token.split_once('=') {
            Some(("dim", v)) => dim = v.parse::<usize>().ok(),
            Some(("n", v)) => n = v.parse::<usize>().ok(),
            Some(("t", v)) => t = v.parse::<f64>().ok(),
            _ => return Err(bad(format!("unexpected header token `{token}`"))),
        }
    }
    let (Some(dim), Some(n), Some(t)) = (dim, n, t) else {
        return Err(bad("header needs dim=, n= and t=".into()));
    };
    let grid = TorusGrid::new(dim, n).map_err(|e| bad(e.to_string()))?;
    let body = &bytes[end + 1..];
    if body.len() != 8 * grid.len() {
        return Err(bad(format!("expected {} bytes of data, found {}", 8 * grid.len(), body.len())));
    }
    let values = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    let field = ScalarField::new(grid, values).map_err(|e| bad(e.to_string()))?;
    Ok((field, t))
}

pub fn write_snapshot(path: &Path, u: &Field, t: f64) -> CliResult<()> {
    std::fs::write(path, encode(u, t)).map_err(|e| CliError::io(format!("cannot write {}", path.display()), e))
}

pub fn read_snapshot(path: &Path) -> CliResult<(Field, f64)> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(format!("cannot read {}", path.display()), e))?;
    decode(&bytes, path)
}

/// Grid coordinates and values, one node per row; only for `d <= 2`.
pub fn to_csv(u: &Field) -> CliResult<String> {
    let grid = u.grid();
    let d = grid.dim();
    if d > 2 {
        return Err(CliError::invalid("export", format!("CSV export supports dim 1 and 2, snapshot has dim {d}")));
    }
    let mut out = String::from(if d == 1 { "x,u\n" } else { "x,y,u\n" });
    for (i, v) in u.values().iter().enumerate() {
        let x = grid.point::<f64>(i);
        for c in &x[..d] {
            let _ = write!(out, "{c:.16e},");
        }
        let _ = writeln!(out, "{v:.16e}");
    }
    Ok(out)
}
