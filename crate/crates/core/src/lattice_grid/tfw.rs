//! `.tfw` field files: one line of JSON metadata, a newline, then the
//! values as little-endian `f64` in row-major axis order.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::field::ScalarField;
use super::grid::{Domain, Grid, GridSpec};
use crate::error::{Result, TfdwError};

const FORMAT: &str = "tfw";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TfwHeader {
    pub format: String,
    pub version: u32,
    pub name: String,
    pub cell_vectors: [[f64; 3]; 3],
    pub resolution: [usize; 3],
    pub supercell: [usize; 3],
    pub domain: Domain,
    pub count: usize,
}

pub fn encode(field: &ScalarField, name: &str) -> Result<Vec<u8>> {
    let grid = field.grid();
    let spec = grid.spec();
    let header = TfwHeader {
        format: FORMAT.into(),
        version: VERSION,
        name: name.into(),
        cell_vectors: grid.cell_vectors(),
        resolution: spec.resolution,
        supercell: spec.supercell,
        domain: grid.domain(),
        count: field.len(),
    };
    let mut out = serde_json::to_vec(&header)?;
    out.push(b'\n');
    out.reserve(8 * field.len());
    for v in field.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Decode a field. When `grid` is given the header must describe it and the
/// field shares that grid; otherwise a new grid is built from the header.
pub fn decode(bytes: &[u8], grid: Option<&Arc<Grid>>) -> Result<(TfwHeader, ScalarField)> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| TfdwError::Format("missing header terminator".into()))?;
    let header: TfwHeader = serde_json::from_slice(&bytes[..nl])
        .map_err(|e| TfdwError::Format(format!("bad header: {e}")))?;
    if header.format != FORMAT || header.version != VERSION {
        return Err(TfdwError::Format(format!(
            "unsupported format {} v{}",
            header.format, header.version
        )));
    }
    let spec = GridSpec {
        resolution: header.resolution,
        supercell: header.supercell,
    };
    if spec.total_points() != header.count {
        return Err(TfdwError::Format("count disagrees with grid shape".into()));
    }
    let body = &bytes[nl + 1..];
    if body.len() != 8 * header.count {
        return Err(TfdwError::Format(format!(
            "expected {} payload bytes, found {}",
            8 * header.count,
            body.len()
        )));
    }
    let grid = match grid {
        Some(g) => {
            if g.spec() != spec || g.cell_vectors() != header.cell_vectors {
                return Err(TfdwError::Structural("field file grid does not match".into()));
            }
            g.clone()
        }
        None => Grid::new(header.cell_vectors, spec)?,
    };
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let field = ScalarField::new(grid, values)?;
    Ok((header, field))
}

pub fn write_field(path: &Path, field: &ScalarField, name: &str) -> Result<()> {
    atomic_write(path, &encode(field, name)?)
}

pub fn read_field(path: &Path, grid: Option<&Arc<Grid>>) -> Result<ScalarField> {
    let bytes = fs::read(path)?;
    Ok(decode(&bytes, grid)?.1)
}

/// Write through a temporary sibling and rename into place.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(d) = dir {
        fs::create_dir_all(d)?;
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| TfdwError::Invalid(format!("not a file path: {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", file_name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_bit_exact() {
        let g = Grid::new(
            [[1.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 1.5]],
            GridSpec { resolution: [4, 4, 1], supercell: [2, 1, 1] },
        )
        .unwrap();
        let f = ScalarField::from_fn(&g, |x| x[0].sin() + 1e-300 * x[1]);
        let bytes = encode(&f, "nu_plus").unwrap();
        let (h, back) = decode(&bytes, None).unwrap();
        assert_eq!(h.name, "nu_plus");
        assert_eq!(h.domain, Domain::Supercell);
        assert_eq!(back.values(), f.values());
        let (_, shared) = decode(&bytes, Some(&g)).unwrap();
        assert!(shared.grid().same_as(&g));
    }

    #[test]
    fn truncated_payload_rejected() {
        let g = Grid::new(
            [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            GridSpec::cell([4, 1, 1]),
        )
        .unwrap();
        let f = ScalarField::constant(&g, 1.0);
        let mut bytes = encode(&f, "x").unwrap();
        bytes.pop();
        assert_eq!(decode(&bytes, None).unwrap_err().kind(), "format");
    }
}
