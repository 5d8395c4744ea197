//! Analytic phantoms and functionally dependent synthetic image pairs.
//!
//! The fixed image is an analytic phantom `F`. The moving image is `g(F)` with
//! `g(t) = exp(-t) + t²/2`, optionally resampled through a known affine
//! deformation and corrupted by additive Gaussian noise.

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Grid, LandmarkSet, Volume};
use crate::error::{Error, Result};
use crate::transform::AffineTransform;

/// Smallest per-axis size accepted by [`synthesize_pair`].
pub const MIN_SYNTH_DIM: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PhantomKind {
    GaussianBlobs,
    SheppLoganLike,
}

impl FromStr for PhantomKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian_blobs" => Ok(PhantomKind::GaussianBlobs),
            "shepp_logan_like" => Ok(PhantomKind::SheppLoganLike),
            other => Err(Error::Parameter(format!(
                "unknown phantom kind {other:?} (expected gaussian_blobs or shepp_logan_like)"
            ))),
        }
    }
}

impl std::fmt::Display for PhantomKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PhantomKind::GaussianBlobs => "gaussian_blobs",
            PhantomKind::SheppLoganLike => "shepp_logan_like",
        })
    }
}

/// The intensity mapping relating the moving image to the fixed one.
pub fn default_intensity_map(t: f64) -> f64 {
    (-t).exp() + 0.5 * t * t
}

#[derive(Clone, Debug)]
struct Blob {
    center: [f64; 3],
    inv_width: [f64; 3],
    amplitude: f64,
}

#[derive(Clone, Debug)]
struct Ellipsoid {
    center: [f64; 3],
    inv_axes: [f64; 3],
    cos_phi: f64,
    sin_phi: f64,
    value: f64,
}

#[derive(Clone, Debug)]
enum Shape {
    Blobs(Vec<Blob>),
    Ellipsoids {
        parts: Vec<Ellipsoid>,
        center: [f64; 3],
        half_extent: [f64; 3],
        edge_width: f64,
    },
}

/// An analytic intensity function defined over world space.
#[derive(Clone, Debug)]
pub struct Phantom {
    shape: Shape,
}

// Modified Shepp-Logan ellipsoids in [-1, 1]³:
// centre, semi-axes, rotation about z (degrees), additive intensity.
const SHEPP_LOGAN: [([f64; 3], [f64; 3], f64, f64); 10] = [
    ([0.0, 0.0, 0.0], [0.69, 0.92, 0.90], 0.0, 1.0),
    ([0.0, -0.0184, 0.0], [0.6624, 0.874, 0.88], 0.0, -0.8),
    ([0.22, 0.0, -0.25], [0.11, 0.31, 0.22], -18.0, -0.2),
    ([-0.22, 0.0, -0.25], [0.16, 0.41, 0.21], 18.0, -0.2),
    ([0.0, 0.35, -0.25], [0.21, 0.25, 0.50], 0.0, 0.1),
    ([0.0, 0.1, -0.25], [0.046, 0.046, 0.046], 0.0, 0.1),
    ([-0.08, -0.605, -0.25], [0.046, 0.023, 0.02], 0.0, 0.1),
    ([0.0, -0.1, -0.25], [0.046, 0.046, 0.046], 0.0, 0.1),
    ([0.06, -0.605, -0.25], [0.046, 0.023, 0.02], -90.0, 0.1),
    ([0.0, -0.605, 0.0], [0.023, 0.023, 0.023], 0.0, 0.1),
];

impl Phantom {
    /// Builds a random phantom of `kind` filling `grid`.
    pub fn generate(kind: PhantomKind, grid: &Grid, rng: &mut impl Rng) -> Phantom {
        let extent = grid.extent();
        let c = grid.center();
        match kind {
            PhantomKind::GaussianBlobs => {
                let shortest = extent.iter().cloned().fold(f64::INFINITY, f64::min);
                let blobs = (0..48)
                    .map(|_| {
                        let center = std::array::from_fn(|a| {
                            grid.origin[a] + extent[a] * rng.random_range(0.12..0.88)
                        });
                        let inv_width = std::array::from_fn(|_| {
                            1.0 / (shortest * rng.random_range(0.05..0.14))
                        });
                        Blob {
                            center,
                            inv_width,
                            amplitude: rng.random_range(0.3..1.0),
                        }
                    })
                    .collect();
                Phantom {
                    shape: Shape::Blobs(blobs),
                }
            }
            PhantomKind::SheppLoganLike => {
                let parts = SHEPP_LOGAN
                    .iter()
                    .map(|&(center, axes, phi_deg, value)| {
                        let center: [f64; 3] =
                            std::array::from_fn(|a| center[a] + rng.random_range(-0.02..0.02));
                        let phi = phi_deg.to_radians();
                        Ellipsoid {
                            center,
                            inv_axes: [1.0 / axes[0], 1.0 / axes[1], 1.0 / axes[2]],
                            cos_phi: phi.cos(),
                            sin_phi: phi.sin(),
                            value: value * rng.random_range(0.9..1.1),
                        }
                    })
                    .collect();
                Phantom {
                    shape: Shape::Ellipsoids {
                        parts,
                        center: c,
                        half_extent: [extent[0] / 2.0, extent[1] / 2.0, extent[2] / 2.0],
                        edge_width: 0.04,
                    },
                }
            }
        }
    }

    /// Phantom intensity at world position `x` (mm).
    pub fn eval(&self, x: [f64; 3]) -> f64 {
        match &self.shape {
            Shape::Blobs(blobs) => blobs
                .iter()
                .map(|b| {
                    let r2: f64 = (0..3)
                        .map(|a| ((x[a] - b.center[a]) * b.inv_width[a]).powi(2))
                        .sum();
                    b.amplitude * (-0.5 * r2).exp()
                })
                .sum(),
            Shape::Ellipsoids {
                parts,
                center,
                half_extent,
                edge_width,
            } => {
                let u: [f64; 3] = std::array::from_fn(|a| (x[a] - center[a]) / half_extent[a]);
                parts
                    .iter()
                    .map(|e| {
                        let d = [u[0] - e.center[0], u[1] - e.center[1], u[2] - e.center[2]];
                        let p = e.cos_phi * d[0] + e.sin_phi * d[1];
                        let q = -e.sin_phi * d[0] + e.cos_phi * d[1];
                        let rho = ((p * e.inv_axes[0]).powi(2)
                            + (q * e.inv_axes[1]).powi(2)
                            + (d[2] * e.inv_axes[2]).powi(2))
                        .sqrt();
                        e.value * 0.5 * (1.0 + ((1.0 - rho) / edge_width).tanh())
                    })
                    .sum()
            }
        }
    }
}

/// Settings for [`synthesize_pair`] beyond kind, geometry and seed.
#[derive(Clone, Debug)]
pub struct SynthOptions {
    /// Standard deviation of additive Gaussian noise on the moving image, as a
    /// fraction of its clean intensity range.
    pub noise_fraction: f64,
    /// Deformation `P` applied to the moving image: `M(y) = g(F(P(y)))`. The
    /// fixed-to-moving ground truth is therefore `P⁻¹`.
    pub deformation: Option<AffineTransform>,
    pub num_landmarks: usize,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            noise_fraction: 0.0,
            deformation: None,
            num_landmarks: 10,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticPair {
    pub fixed: Volume,
    pub moving: Volume,
    pub fixed_landmarks: LandmarkSet,
    pub moving_landmarks: LandmarkSet,
    pub phantom: Phantom,
}

/// Generates a fixed phantom and a functionally dependent moving image on the same grid.
/// Landmarks are interior fixed-image points and their images under the ground-truth
/// fixed-to-moving map.
pub fn synthesize_pair(
    kind: PhantomKind,
    dims: [usize; 3],
    spacing: [f64; 3],
    seed: u64,
    opts: &SynthOptions,
) -> Result<SyntheticPair> {
    if dims.iter().any(|&d| d < MIN_SYNTH_DIM) {
        return Err(Error::Parameter(format!(
            "synthetic volumes need at least {MIN_SYNTH_DIM} voxels per axis, got {dims:?}"
        )));
    }
    if !(opts.noise_fraction >= 0.0 && opts.noise_fraction.is_finite()) {
        return Err(Error::Parameter(format!(
            "noise fraction must be finite and non-negative, got {}",
            opts.noise_fraction
        )));
    }
    let grid = Grid::new(dims, spacing, [0.0; 3])?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phantom = Phantom::generate(kind, &grid, &mut rng);

    let fixed = Volume::from_fn(grid, |x| phantom.eval(x))?;
    let moving_clean = match &opts.deformation {
        None => Volume::new(
            grid,
            fixed
                .data()
                .iter()
                .map(|&t| default_intensity_map(t))
                .collect(),
        )?,
        Some(p) => Volume::from_fn(grid, |y| default_intensity_map(phantom.eval(p.apply(y))))?,
    };

    let extent = grid.extent();
    let fixed_points: Vec<[f64; 3]> = (0..opts.num_landmarks)
        .map(|_| std::array::from_fn(|a| grid.origin[a] + extent[a] * rng.random_range(0.25..0.75)))
        .collect();
    let moving_points = match &opts.deformation {
        None => fixed_points.clone(),
        Some(p) => {
            let inv = p.inverse()?;
            fixed_points.iter().map(|&x| inv.apply(x)).collect()
        }
    };

    let moving = if opts.noise_fraction > 0.0 {
        let (lo, hi) = moving_clean.min_max();
        let normal = Normal::new(0.0, opts.noise_fraction * (hi - lo))
            .map_err(|e| Error::Parameter(format!("noise distribution: {e}")))?;
        let data = moving_clean
            .data()
            .iter()
            .map(|&v| v + normal.sample(&mut rng))
            .collect();
        Volume::new(grid, data)?
    } else {
        moving_clean
    };

    Ok(SyntheticPair {
        fixed,
        moving,
        fixed_landmarks: LandmarkSet::new("fixed", fixed_points)?,
        moving_landmarks: LandmarkSet::new("moving", moving_points)?,
        phantom,
    })
}
