//! Smooth multiplicative bias fields mimicking MRI intensity shading.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Volume;
use crate::error::{Error, Result};

/// Random degree-2 polynomial in normalised voxel coordinates `u ∈ [-1, 1]³`,
/// affinely rescaled so that its range over the grid is exactly
/// `[1 - strength, 1 + strength]`.
pub fn bias_field(dims: [usize; 3], strength: f64, seed: u64) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&strength) {
        return Err(Error::Parameter(format!(
            "bias strength must lie in [0, 1), got {strength}"
        )));
    }
    let n = dims[0] * dims[1] * dims[2];
    if strength == 0.0 {
        return Ok(vec![1.0; n]);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // x, y, z, xx, yy, zz, xy, xz, yz
    let c: [f64; 9] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
    let norm = |i: usize, n: usize| {
        if n > 1 {
            2.0 * i as f64 / (n - 1) as f64 - 1.0
        } else {
            0.0
        }
    };

    let mut p = Vec::with_capacity(n);
    for k in 0..dims[2] {
        let z = norm(k, dims[2]);
        for j in 0..dims[1] {
            let y = norm(j, dims[1]);
            for i in 0..dims[0] {
                let x = norm(i, dims[0]);
                p.push(
                    c[0] * x
                        + c[1] * y
                        + c[2] * z
                        + c[3] * x * x
                        + c[4] * y * y
                        + c[5] * z * z
                        + c[6] * x * y
                        + c[7] * x * z
                        + c[8] * y * z,
                );
            }
        }
    }
    let (lo, hi) = p
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if hi - lo <= 0.0 {
        return Ok(vec![1.0; n]);
    }
    let scale = 2.0 * strength / (hi - lo);
    Ok(p.into_iter()
        .map(|v| (1.0 - strength + (v - lo) * scale).clamp(1.0 - strength, 1.0 + strength))
        .collect())
}

/// Multiplies `v` voxel-wise by [`bias_field`].
pub fn apply_bias_field(v: &Volume, strength: f64, seed: u64) -> Result<Volume> {
    let field = bias_field(v.dims(), strength, seed)?;
    let data = v.data().iter().zip(&field).map(|(a, b)| a * b).collect();
    Volume::new(*v.grid(), data)
}
