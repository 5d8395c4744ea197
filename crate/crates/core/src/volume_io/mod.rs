//! Scalar volumes with physical geometry, landmark sets and their file formats.
//!
//! Voxel data is stored x-fastest: the linear index of voxel `(i, j, k)` is
//! `i + nx * (j + ny * k)`. World coordinates are in millimetres and relate to voxel
//! indices by `world = origin + spacing * index` (axis-aligned, no rotation).

mod bias;
mod landmarks;
mod nifti;
mod raw;
mod synth;

use std::path::Path;

use crate::error::{Error, Result};

pub use bias::{apply_bias_field, bias_field};
pub use landmarks::{load_landmarks, save_landmarks, LandmarkSet};
pub use synth::{synthesize_pair, Phantom, PhantomKind, SynthOptions, SyntheticPair};

/// Smallest extent along any axis accepted for a volume.
pub const MIN_DIM: usize = 8;

/// Voxel grid geometry shared by volumes and derivative fields.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid {
    pub dims: [usize; 3],
    /// Millimetres per voxel.
    pub spacing: [f64; 3],
    /// World position (mm) of voxel (0, 0, 0).
    pub origin: [f64; 3],
}

impl Grid {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        if let Some(axis) = dims.iter().position(|&d| d < MIN_DIM) {
            return Err(Error::Geometry(format!(
                "dimension {} along axis {axis} is below the minimum of {MIN_DIM}",
                dims[axis]
            )));
        }
        if spacing.iter().any(|s| !s.is_finite() || *s <= 0.0) {
            return Err(Error::Geometry(format!(
                "spacing must be positive and finite, got {spacing:?}"
            )));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::Geometry(format!(
                "origin must be finite, got {origin:?}"
            )));
        }
        Ok(Grid {
            dims,
            spacing,
            origin,
        })
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let nx = self.dims[0];
        let ny = self.dims[1];
        [idx % nx, (idx / nx) % ny, idx / (nx * ny)]
    }

    #[inline]
    pub fn voxel_to_world(&self, v: [f64; 3]) -> [f64; 3] {
        [
            self.origin[0] + self.spacing[0] * v[0],
            self.origin[1] + self.spacing[1] * v[1],
            self.origin[2] + self.spacing[2] * v[2],
        ]
    }

    #[inline]
    pub fn world_to_voxel(&self, x: [f64; 3]) -> [f64; 3] {
        [
            (x[0] - self.origin[0]) / self.spacing[0],
            (x[1] - self.origin[1]) / self.spacing[1],
            (x[2] - self.origin[2]) / self.spacing[2],
        ]
    }

    /// World coordinate of the centre of voxel `(i, j, k)`.
    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        self.voxel_to_world([i as f64, j as f64, k as f64])
    }

    /// World coordinate of the geometric centre of the grid.
    pub fn center(&self) -> [f64; 3] {
        self.voxel_to_world([
            (self.dims[0] - 1) as f64 / 2.0,
            (self.dims[1] - 1) as f64 / 2.0,
            (self.dims[2] - 1) as f64 / 2.0,
        ])
    }

    /// World-space extent between the first and last voxel centres.
    pub fn extent(&self) -> [f64; 3] {
        [
            self.spacing[0] * (self.dims[0] - 1) as f64,
            self.spacing[1] * (self.dims[1] - 1) as f64,
            self.spacing[2] * (self.dims[2] - 1) as f64,
        ]
    }
}

/// A scalar 3-D image.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    grid: Grid,
    data: Vec<f64>,
}

impl Volume {
    pub fn new(grid: Grid, data: Vec<f64>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::Data(format!(
                "data length {} does not match dims {:?}",
                data.len(),
                grid.dims
            )));
        }
        if let Some(idx) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite value at voxel {:?}",
                grid.coords(idx)
            )));
        }
        Ok(Volume { grid, data })
    }

    /// Builds a volume by evaluating `f` at every voxel centre (world coordinates).
    pub fn from_fn(grid: Grid, f: impl Fn([f64; 3]) -> f64) -> Result<Self> {
        let data = (0..grid.len())
            .map(|idx| {
                let [i, j, k] = grid.coords(idx);
                f(grid.voxel_center(i, j, k))
            })
            .collect();
        Volume::new(grid, data)
    }

    pub fn filled(grid: Grid, value: f64) -> Result<Self> {
        Volume::new(grid, vec![value; grid.len()])
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dims(&self) -> [usize; 3] {
        self.grid.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.grid.spacing
    }

    pub fn origin(&self) -> [f64; 3] {
        self.grid.origin
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.grid.index(i, j, k)]
    }

    /// Returns a copy with intensities shifted and scaled to zero mean and unit variance.
    /// A constant volume is only shifted.
    pub fn normalized(&self) -> Volume {
        let n = self.data.len() as f64;
        let mean = self.data.iter().sum::<f64>() / n;
        let var = self.data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        let scale = if sd > 0.0 { 1.0 / sd } else { 1.0 };
        Volume {
            grid: self.grid,
            data: self.data.iter().map(|v| (v - mean) * scale).collect(),
        }
    }

    /// (min, max) of the intensities.
    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}

/// Options applied when loading a volume from disk.
#[derive(Clone, Copy, Debug)]
pub struct LoadOptions {
    /// Rescale intensities to zero mean and unit variance after loading.
    pub normalize: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions { normalize: true }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum FileKind {
    Nifti,
    Raw,
}

fn file_kind(path: &Path) -> Result<FileKind> {
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or_default()
        .to_ascii_lowercase();
    if name.ends_with(".nii.gz") {
        Err(Error::Format("compressed NIfTI is not supported".into()))
    } else if name.ends_with(".nii") {
        Ok(FileKind::Nifti)
    } else if name.ends_with(".raw") || name.ends_with(raw::SIDECAR_EXT) {
        Ok(FileKind::Raw)
    } else {
        Err(Error::Format(format!(
            "cannot infer volume format from {}; expected .nii or .raw",
            path.display()
        )))
    }
}

/// Loads a volume exactly as stored (NIfTI-1 `.nii` or raw `.raw` + sidecar).
pub fn load_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    match file_kind(path)? {
        FileKind::Nifti => nifti::read(path),
        FileKind::Raw => raw::read(path),
    }
}

/// Loads a volume and applies `opts`.
pub fn load_volume_with(path: impl AsRef<Path>, opts: LoadOptions) -> Result<Volume> {
    let v = load_volume(path)?;
    Ok(if opts.normalize { v.normalized() } else { v })
}

/// Stores a volume as float32. The format follows the file extension.
pub fn save_volume(v: &Volume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(idx) = v.data.iter().position(|x| !x.is_finite()) {
        return Err(Error::Data(format!(
            "refusing to save non-finite value at voxel {:?}",
            v.grid.coords(idx)
        )));
    }
    match file_kind(path)? {
        FileKind::Nifti => nifti::write(v, path),
        FileKind::Raw => raw::write(v, path),
    }
}
