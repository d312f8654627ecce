//! Binary trajectory files.
//!
//! Layout (all little-endian): `dim: u64`, `n_1 .. n_dim: u64`, `n_t: u64`,
//! `T: f64`, then `(n_t + 1) * prod n_i` values of `f64`, one nodal slice
//! per time node in row-major order. A JSON sidecar `<file>.json`
//! records the grid metadata.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::SpaceGrid;
use crate::norms::TimeGrid;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub field: String,
    pub dim: usize,
    pub extents: Vec<f64>,
    pub n: Vec<usize>,
    pub padding: usize,
    pub n_t: usize,
    pub t_final: f64,
    pub layout: String,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes nodal slices and the sidecar; returns the sidecar path.
pub fn write_field(path: &Path, name: &str, grid: &SpaceGrid, tgrid: &TimeGrid, slices: &[Vec<f64>]) -> Result<PathBuf> {
    if slices.len() != tgrid.len() || slices.iter().any(|s| s.len() != grid.len()) {
        return Err(Error::Shape {
            expected: tgrid.len() * grid.len(),
            got: slices.iter().map(Vec::len).sum(),
        });
    }
    let mut buf = Vec::with_capacity(8 * (3 + grid.dim() + tgrid.len() * grid.len()));
    buf.extend_from_slice(&(grid.dim() as u64).to_le_bytes());
    for n in grid.shape() {
        buf.extend_from_slice(&(*n as u64).to_le_bytes());
    }
    buf.extend_from_slice(&(tgrid.steps() as u64).to_le_bytes());
    buf.extend_from_slice(&tgrid.t_final().to_le_bytes());
    for s in slices {
        for v in s {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))?;

    let side = Sidecar {
        field: name.to_string(),
        dim: grid.dim(),
        extents: grid.extents().to_vec(),
        n: grid.shape().to_vec(),
        padding: grid.padding(),
        n_t: tgrid.steps(),
        t_final: tgrid.t_final(),
        layout: "f64 little-endian, slice-major, row-major nodes (last axis fastest)".into(),
    };
    let sp = sidecar_path(path);
    crate::report::write_json(&sp, &side)?;
    Ok(sp)
}

/// Header of a trajectory file.
#[derive(Clone, Debug, PartialEq)]
pub struct Header {
    pub n: Vec<usize>,
    pub n_t: usize,
    pub t_final: f64,
}

fn take<'a>(bytes: &mut &'a [u8], k: usize, path: &Path) -> Result<&'a [u8]> {
    if bytes.len() < k {
        return Err(Error::Format(format!("{}: truncated file", path.display())));
    }
    let (a, b) = bytes.split_at(k);
    *bytes = b;
    Ok(a)
}

fn u64_at(bytes: &mut &[u8], path: &Path) -> Result<u64> {
    Ok(u64::from_le_bytes(take(bytes, 8, path)?.try_into().expect("8 bytes")))
}

/// Reads a trajectory file without grid checks.
pub fn read_raw(path: &Path) -> Result<(Header, Vec<Vec<f64>>)> {
    let mut data = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut data))
        .map_err(|e| Error::io(path, e))?;
    let mut bytes = data.as_slice();
    let dim = u64_at(&mut bytes, path)? as usize;
    if dim == 0 || dim > 3 {
        return Err(Error::Format(format!("{}: bad dimension {dim}", path.display())));
    }
    let n: Vec<usize> = (0..dim).map(|_| u64_at(&mut bytes, path).map(|v| v as usize)).collect::<Result<_>>()?;
    let n_t = u64_at(&mut bytes, path)? as usize;
    let t_final = f64::from_le_bytes(take(&mut bytes, 8, path)?.try_into().expect("8 bytes"));
    let len: usize = n.iter().product();
    let expected = (n_t + 1) * len * 8;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "{}: payload has {} bytes, header implies {expected}",
            path.display(),
            bytes.len()
        )));
    }
    let vals: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let slices = vals.chunks(len.max(1)).map(|c| c.to_vec()).collect();
    Ok((Header { n, n_t, t_final }, slices))
}

/// Reads a trajectory file and checks it against the expected grids.
pub fn read_field(path: &Path, grid: &SpaceGrid, tgrid: &TimeGrid) -> Result<Vec<Vec<f64>>> {
    let (h, slices) = read_raw(path)?;
    if h.n != grid.shape() || h.n_t != tgrid.steps() || (h.t_final - tgrid.t_final()).abs() > 1e-12 * tgrid.t_final() {
        return Err(Error::GridMismatch(format!(
            "{}: file grid n = {:?}, n_t = {}, T = {} does not match n = {:?}, n_t = {}, T = {}",
            path.display(),
            h.n,
            h.n_t,
            h.t_final,
            grid.shape(),
            tgrid.steps(),
            tgrid.t_final()
        )));
    }
    Ok(slices)
}
