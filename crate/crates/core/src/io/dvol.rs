use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use super::IoError;
use crate::real::Real;
use crate::volume::{Grid, Volume3};

const MAX_HEADER: u64 = 4096;

/// First line of a DVOL file; voxel data follows as little-endian `f32`
/// with x varying fastest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DvolHeader {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub origin_mm: [f64; 3],
    pub dtype: String,
    pub order: String,
}

pub fn write_dvol<T: Real>(w: &mut impl Write, vol: &Volume3<T>) -> Result<(), IoError> {
    let g = vol.grid();
    let header = DvolHeader {
        dims: g.dims,
        spacing_mm: g.spacing.map(Real::to_f64_lossy),
        origin_mm: g.origin.map(Real::to_f64_lossy),
        dtype: "f32".into(),
        order: "x-fastest".into(),
    };
    serde_json::to_writer(&mut *w, &header).map_err(|e| IoError::Header(e.to_string()))?;
    w.write_all(b"\n")?;
    let mut buf = Vec::with_capacity(vol.voxels().len() * 4);
    for v in vol.voxels() {
        buf.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_dvol<T: Real>(r: &mut impl BufRead) -> Result<Volume3<T>, IoError> {
    let mut line = Vec::new();
    let n = r.take(MAX_HEADER).read_until(b'\n', &mut line)?;
    if line.last() != Some(&b'\n') {
        return Err(if n as u64 >= MAX_HEADER {
            IoError::Header(format!("no newline within the first {MAX_HEADER} bytes"))
        } else {
            IoError::Truncated {
                offset: n as u64,
                expected: 1,
            }
        });
    }
    let h: DvolHeader = serde_json::from_slice(&line).map_err(|e| IoError::Header(e.to_string()))?;
    if h.dtype != "f32" {
        return Err(IoError::Header(format!("unsupported dtype {:?}", h.dtype)));
    }
    if h.order != "x-fastest" {
        return Err(IoError::Header(format!("unsupported order {:?}", h.order)));
    }
    let grid = Grid::new(h.dims, h.spacing_mm.map(T::lit), h.origin_mm.map(T::lit))?;
    let bytes = grid.len() as u64 * 4;
    let mut data = Vec::with_capacity(bytes as usize);
    let got = r.take(bytes).read_to_end(&mut data)? as u64;
    if got < bytes {
        return Err(IoError::Truncated {
            offset: n as u64 + got,
            expected: bytes - got,
        });
    }
    let extra = r.bytes().count() as u64;
    if extra > 0 {
        return Err(IoError::Trailing(extra));
    }
    let voxels = data
        .chunks_exact(4)
        .map(|c| T::lit(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
        .collect();
    Ok(Volume3::new(grid, voxels)?)
}
