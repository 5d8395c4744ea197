//! Raw float32 volumes with a JSON sidecar.
//!
//! `<name>.raw` holds little-endian float32 samples, x fastest, with no header.
//! `<name>.json` holds the geometry, one key per line:
//!
//! ```text
//! {
//!   "dims": [64, 64, 64],
//!   "spacing": [1.0, 1.0, 1.0],
//!   "origin": [0.0, 0.0, 0.0],
//!   "dtype": "float32",
//!   "byte_order": "little"
//! }
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::{Grid, Volume};
use crate::error::{Error, Result};

pub(super) const SIDECAR_EXT: &str = ".json";

#[derive(Debug, Deserialize)]
struct Sidecar {
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
    dtype: String,
    byte_order: String,
}

/// Returns (data path, sidecar path) for either member of the pair.
fn paths(path: &Path) -> (PathBuf, PathBuf) {
    (path.with_extension("raw"), path.with_extension("json"))
}

pub(super) fn read(path: &Path) -> Result<Volume> {
    let (data_path, meta_path) = paths(path);
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: Sidecar = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", meta_path.display())))?;
    if meta.dtype != "float32" || meta.byte_order != "little" {
        return Err(Error::Format(format!(
            "unsupported raw encoding {} / {}",
            meta.dtype, meta.byte_order
        )));
    }
    let grid = Grid::new(meta.dims, meta.spacing, meta.origin)?;
    let bytes = fs::read(&data_path).map_err(|e| Error::io(&data_path, e))?;
    if bytes.len() != grid.len() * 4 {
        return Err(Error::Format(format!(
            "{} holds {} bytes, expected {}",
            data_path.display(),
            bytes.len(),
            grid.len() * 4
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Volume::new(grid, data)
}

pub(super) fn write(v: &Volume, path: &Path) -> Result<()> {
    let (data_path, meta_path) = paths(path);
    let g = v.grid();
    let text = format!(
        "{{\n  \"dims\": [{}, {}, {}],\n  \"spacing\": [{:?}, {:?}, {:?}],\n  \"origin\": [{:?}, {:?}, {:?}],\n  \"dtype\": \"float32\",\n  \"byte_order\": \"little\"\n}}\n",
        g.dims[0],
        g.dims[1],
        g.dims[2],
        g.spacing[0],
        g.spacing[1],
        g.spacing[2],
        g.origin[0],
        g.origin[1],
        g.origin[2],
    );
    let bytes: Vec<u8> = v
        .data()
        .iter()
        .flat_map(|&x| (x as f32).to_le_bytes())
        .collect();
    fs::write(&data_path, bytes).map_err(|e| Error::io(&data_path, e))?;
    fs::write(&meta_path, text).map_err(|e| Error::io(&meta_path, e))?;
    Ok(())
}
