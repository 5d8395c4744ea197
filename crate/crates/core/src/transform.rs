//! Affine transforms, Hessian transport and trilinear interpolation.
//!
//! A deformation is parameterised by a translation, Z·Y·X Euler angles (degrees), an
//! upper-triangular unit-diagonal shear and a diagonal scale. The linear part is
//! `A = R · Sh · Sc` and points map as `x ↦ A (x − c) + c + t` about a pivot `c`.
//!
//! Under a linear change of coordinates `u = A x + b`, the Hessian of `M(x(u))` is
//! `A⁻ᵀ H A⁻¹` and its gradient is `A⁻ᵀ ∇M`; the second-derivative term of the
//! general chain rule vanishes because `x(u)` is affine.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use crate::derivatives::DerivativeField;
use crate::error::{Error, Result};
use crate::symmetric::Sym3;
use crate::volume_io::{Grid, Volume};

/// Minimum |det A| for a linear part to count as invertible.
pub const MIN_ABS_DET: f64 = 1e-9;

/// Number of entries in a parameter vector.
pub const NUM_PARAMS: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineParams {
    /// mm
    pub translation: [f64; 3],
    /// Degrees about x, y, z; applied as `Rz · Ry · Rx`.
    pub rotation_deg: [f64; 3],
    /// Upper-triangle entries `[s_xy, s_xz, s_yz]`.
    pub shear: [f64; 3],
    pub scale: [f64; 3],
}

impl Default for AffineParams {
    fn default() -> Self {
        AffineParams::identity()
    }
}

impl AffineParams {
    pub fn identity() -> Self {
        AffineParams {
            translation: [0.0; 3],
            rotation_deg: [0.0; 3],
            shear: [0.0; 3],
            scale: [1.0; 3],
        }
    }

    /// Layout: translation(3), rotation(3), shear(3), scale(3).
    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != NUM_PARAMS {
            return Err(Error::Parameter(format!(
                "expected {NUM_PARAMS} affine parameters, got {}",
                v.len()
            )));
        }
        Ok(AffineParams {
            translation: [v[0], v[1], v[2]],
            rotation_deg: [v[3], v[4], v[5]],
            shear: [v[6], v[7], v[8]],
            scale: [v[9], v[10], v[11]],
        })
    }

    pub fn to_array(&self) -> [f64; NUM_PARAMS] {
        let mut out = [0.0; NUM_PARAMS];
        out[0..3].copy_from_slice(&self.translation);
        out[3..6].copy_from_slice(&self.rotation_deg);
        out[6..9].copy_from_slice(&self.shear);
        out[9..12].copy_from_slice(&self.scale);
        out
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        let [ax, ay, az] = self.rotation_deg.map(f64::to_radians);
        let (sx, cx) = ax.sin_cos();
        let (sy, cy) = ay.sin_cos();
        let (sz, cz) = az.sin_cos();
        let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, cx, -sx, 0.0, sx, cx);
        let ry = Matrix3::new(cy, 0.0, sy, 0.0, 1.0, 0.0, -sy, 0.0, cy);
        let rz = Matrix3::new(cz, -sz, 0.0, sz, cz, 0.0, 0.0, 0.0, 1.0);
        rz * ry * rx
    }

    pub fn shear_matrix(&self) -> Matrix3<f64> {
        let [sxy, sxz, syz] = self.shear;
        Matrix3::new(1.0, sxy, sxz, 0.0, 1.0, syz, 0.0, 0.0, 1.0)
    }

    pub fn scale_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&Vector3::from(self.scale))
    }

    /// `R · Sh · Sc`.
    pub fn linear(&self) -> Matrix3<f64> {
        self.rotation_matrix() * self.shear_matrix() * self.scale_matrix()
    }
}

/// `x ↦ linear · (x − center) + center + offset`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineTransform {
    linear: Matrix3<f64>,
    offset: Vector3<f64>,
    center: Vector3<f64>,
}

fn check_invertible(m: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    let det = m.determinant();
    if det.is_nan() || det.abs() <= MIN_ABS_DET {
        return Err(Error::Parameter(format!(
            "affine linear part is singular (det = {det:e})"
        )));
    }
    m.try_inverse()
        .ok_or_else(|| Error::Parameter("affine linear part is singular".into()))
}

impl AffineTransform {
    pub fn identity() -> Self {
        AffineTransform {
            linear: Matrix3::identity(),
            offset: Vector3::zeros(),
            center: Vector3::zeros(),
        }
    }

    pub fn new(linear: Matrix3<f64>, offset: Vector3<f64>, center: Vector3<f64>) -> Result<Self> {
        check_invertible(&linear)?;
        if linear
            .iter()
            .chain(offset.iter())
            .chain(center.iter())
            .any(|x| !x.is_finite())
        {
            return Err(Error::Parameter(
                "affine transform has non-finite entries".into(),
            ));
        }
        Ok(AffineTransform {
            linear,
            offset,
            center,
        })
    }

    /// Builds the deformation described by `p`, pivoting about `center`.
    pub fn from_params(p: &AffineParams, center: [f64; 3]) -> Result<Self> {
        if p.scale.iter().any(|&s| s.is_nan() || s <= 0.0) {
            return Err(Error::Parameter(format!(
                "scale factors must be positive, got {:?}",
                p.scale
            )));
        }
        AffineTransform::new(
            p.linear(),
            Vector3::from(p.translation),
            Vector3::from(center),
        )
    }

    /// `x ↦ linear · x + translation` (pivot at the origin).
    pub fn from_matrix(linear: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        AffineTransform::new(linear, translation, Vector3::zeros())
    }

    pub fn linear(&self) -> &Matrix3<f64> {
        &self.linear
    }

    pub fn offset(&self) -> &Vector3<f64> {
        &self.offset
    }

    pub fn center(&self) -> &Vector3<f64> {
        &self.center
    }

    /// The constant Jacobian of the map.
    pub fn jacobian(&self) -> Matrix3<f64> {
        self.linear
    }

    /// Translation `b` of the equivalent form `x ↦ linear · x + b`.
    pub fn translation(&self) -> Vector3<f64> {
        self.center + self.offset - self.linear * self.center
    }

    #[inline]
    pub fn apply_vec(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.linear * (x - self.center) + self.center + self.offset
    }

    #[inline]
    pub fn apply(&self, x: [f64; 3]) -> [f64; 3] {
        self.apply_vec(&Vector3::from(x)).into()
    }

    /// Exact inverse about the same pivot.
    pub fn inverse(&self) -> Result<Self> {
        let inv = check_invertible(&self.linear)?;
        Ok(AffineTransform {
            linear: inv,
            offset: -(inv * self.offset),
            center: self.center,
        })
    }

    /// `self ∘ inner`: applies `inner` first. The result pivots about `inner`'s centre.
    pub fn compose(&self, inner: &AffineTransform) -> AffineTransform {
        let linear = self.linear * inner.linear;
        let b = self.linear * inner.translation() + self.translation();
        let center = inner.center;
        AffineTransform {
            linear,
            offset: b - center + linear * center,
            center,
        }
    }

    /// Rows of `[linear | b]`.
    pub fn matrix_3x4(&self) -> [[f64; 4]; 3] {
        let b = self.translation();
        std::array::from_fn(|r| {
            [
                self.linear[(r, 0)],
                self.linear[(r, 1)],
                self.linear[(r, 2)],
                b[r],
            ]
        })
    }
}

/// Builds the deformation `x ↦ A (x − center) + center + t` with `A = R · Sh · Sc`.
pub fn build_transform(p: &AffineParams, center: [f64; 3]) -> Result<AffineTransform> {
    AffineTransform::from_params(p, center)
}

pub fn invert(t: &AffineTransform) -> Result<AffineTransform> {
    t.inverse()
}

/// Hessian of `M ∘ T⁻¹` given the Hessian `H` of `M`: `J⁻ᵀ H J⁻¹` with `J` the
/// Jacobian of `T`.
pub fn transport_hessian(h: &Sym3, t: &AffineTransform) -> Result<Sym3> {
    let inv = check_invertible(&t.linear)?;
    Ok(h.congruence(&inv))
}

/// Precomputed `J⁻¹` for transporting many Hessians and gradients through one map.
#[derive(Clone, Copy, Debug)]
pub struct Transport {
    inv: Matrix3<f64>,
    inv_t: Matrix3<f64>,
}

impl Transport {
    pub fn new(t: &AffineTransform) -> Result<Self> {
        let inv = check_invertible(&t.linear)?;
        Ok(Transport {
            inv,
            inv_t: inv.transpose(),
        })
    }

    #[inline]
    pub fn hessian(&self, h: &Sym3) -> Sym3 {
        Sym3::from_matrix(&(self.inv_t * h.to_matrix() * self.inv))
    }

    /// `J⁻ᵀ ∇M`.
    #[inline]
    pub fn gradient(&self, g: &Vector3<f64>) -> Vector3<f64> {
        self.inv_t * g
    }
}

/// The eight trilinear corner indices and weights for a world position, or `None`
/// if any corner falls outside the grid.
#[inline]
pub fn trilinear_stencil(grid: &Grid, x: [f64; 3]) -> Option<([usize; 8], [f64; 8])> {
    let u = grid.world_to_voxel(x);
    let mut base = [0usize; 3];
    let mut frac = [0.0; 3];
    for a in 0..3 {
        let n = grid.dims[a];
        let last = (n - 1) as f64;
        if !(u[a] >= 0.0 && u[a] <= last) {
            return None;
        }
        let f = u[a].floor();
        let (b, t) = if f >= last {
            (n - 2, 1.0)
        } else {
            (f as usize, u[a] - f)
        };
        base[a] = b;
        frac[a] = t;
    }
    let mut idx = [0usize; 8];
    let mut w = [0.0; 8];
    for corner in 0..8 {
        let dx = corner & 1;
        let dy = (corner >> 1) & 1;
        let dz = (corner >> 2) & 1;
        idx[corner] = grid.index(base[0] + dx, base[1] + dy, base[2] + dz);
        w[corner] = (if dx == 1 { frac[0] } else { 1.0 - frac[0] })
            * (if dy == 1 { frac[1] } else { 1.0 - frac[1] })
            * (if dz == 1 { frac[2] } else { 1.0 - frac[2] });
    }
    Some((idx, w))
}

/// Trilinear interpolation; `None` outside the grid.
pub fn interpolate_scalar(v: &Volume, x: [f64; 3]) -> Option<f64> {
    let (idx, w) = trilinear_stencil(v.grid(), x)?;
    let d = v.data();
    Some((0..8).map(|c| w[c] * d[idx[c]]).sum())
}

/// Componentwise trilinear interpolation of the six Hessian entries.
pub fn interpolate_hessian(f: &DerivativeField, x: [f64; 3]) -> Option<Sym3> {
    let (idx, w) = trilinear_stencil(f.grid(), x)?;
    Some(blend_hessian(f, &idx, &w))
}

pub fn interpolate_gradient(f: &DerivativeField, x: [f64; 3]) -> Option<Vector3<f64>> {
    let (idx, w) = trilinear_stencil(f.grid(), x)?;
    Some(blend_gradient(f, &idx, &w))
}

#[inline]
pub(crate) fn blend_hessian(f: &DerivativeField, idx: &[usize; 8], w: &[f64; 8]) -> Sym3 {
    let mut acc = [0.0; 6];
    for c in 0..8 {
        let h = f.hessian(idx[c]).to_array();
        for (a, v) in acc.iter_mut().zip(h) {
            *a += w[c] * v;
        }
    }
    Sym3::from_array(acc)
}

#[inline]
pub(crate) fn blend_gradient(f: &DerivativeField, idx: &[usize; 8], w: &[f64; 8]) -> Vector3<f64> {
    let mut acc = Vector3::zeros();
    for c in 0..8 {
        acc += f.gradient(idx[c]) * w[c];
    }
    acc
}

/// A transform as stored on disk: the deformation parameters and pivot that produced
/// it (when known) and the resolved fixed-to-moving point map.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformRecord {
    /// Deformation applied to the moving image; `map` is its inverse.
    pub deformation: Option<(AffineParams, [f64; 3])>,
    /// Maps fixed-image world coordinates (mm) to moving-image world coordinates.
    pub map: AffineTransform,
}

impl TransformRecord {
    pub fn from_deformation(params: AffineParams, center: [f64; 3]) -> Result<Self> {
        let map = AffineTransform::from_params(&params, center)?.inverse()?;
        Ok(TransformRecord {
            deformation: Some((params, center)),
            map,
        })
    }

    pub fn from_map(map: AffineTransform) -> Self {
        TransformRecord {
            deformation: None,
            map,
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("# affine transform\n");
        out.push_str("# matrix rows: fixed-image world (mm) -> moving-image world (mm), [A | b]\n");
        if let Some((p, c)) = &self.deformation {
            out.push_str("# parameters describe the deformation applied to the moving image\n");
            let line = |out: &mut String, key: &str, v: &[f64; 3]| {
                let _ = writeln!(out, "{key}: {} {} {}", v[0], v[1], v[2]);
            };
            line(&mut out, "translation_mm", &p.translation);
            line(&mut out, "rotation_deg", &p.rotation_deg);
            line(&mut out, "shear", &p.shear);
            line(&mut out, "scale", &p.scale);
            line(&mut out, "center_mm", c);
        }
        out.push_str("matrix:\n");
        for row in self.map.matrix_3x4() {
            let _ = writeln!(out, "{} {} {} {}", row[0], row[1], row[2], row[3]);
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut fields: std::collections::HashMap<&str, [f64; 3]> = Default::default();
        let mut rows: Vec<[f64; 4]> = Vec::new();
        let mut in_matrix = false;
        let numbers = |s: &str| -> Result<Vec<f64>> {
            s.split_whitespace()
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|_| Error::Format(format!("bad number {t:?} in transform file")))
                })
                .collect()
        };
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            if line == "matrix:" {
                in_matrix = true;
                continue;
            }
            if in_matrix {
                let v = numbers(line)?;
                if v.len() != 4 {
                    return Err(Error::Format("matrix rows need 4 numbers".into()));
                }
                rows.push([v[0], v[1], v[2], v[3]]);
                continue;
            }
            let (key, value) = line.split_once(':').ok_or_else(|| {
                Error::Format(format!("unexpected line {line:?} in transform file"))
            })?;
            let v = numbers(value)?;
            if v.len() != 3 {
                return Err(Error::Format(format!("{key} needs 3 numbers")));
            }
            fields.insert(key.trim(), [v[0], v[1], v[2]]);
        }
        if rows.len() != 3 {
            return Err(Error::Format(format!(
                "transform matrix needs 3 rows, found {}",
                rows.len()
            )));
        }
        let linear = Matrix3::from_fn(|r, c| rows[r][c]);
        let b = Vector3::new(rows[0][3], rows[1][3], rows[2][3]);
        let map = AffineTransform::from_matrix(linear, b)?;

        let keys = [
            "translation_mm",
            "rotation_deg",
            "shear",
            "scale",
            "center_mm",
        ];
        let present = keys.iter().filter(|k| fields.contains_key(*k)).count();
        if present == 0 {
            return Ok(TransformRecord::from_map(map));
        }
        if present != keys.len() {
            return Err(Error::Format("incomplete deformation parameters".into()));
        }
        let params = AffineParams {
            translation: fields["translation_mm"],
            rotation_deg: fields["rotation_deg"],
            shear: fields["shear"],
            scale: fields["scale"],
        };
        let record = TransformRecord::from_deformation(params, fields["center_mm"])?;
        let stored = map.matrix_3x4();
        let resolved = record.map.matrix_3x4();
        for r in 0..3 {
            for c in 0..4 {
                let tol = 1e-9 * (1.0 + resolved[r][c].abs());
                if (stored[r][c] - resolved[r][c]).abs() > tol {
                    return Err(Error::Format(
                        "transform matrix disagrees with its parameters".into(),
                    ));
                }
            }
        }
        Ok(record)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        TransformRecord::parse(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_params(rng: &mut impl Rng) -> AffineParams {
        AffineParams {
            translation: std::array::from_fn(|_| rng.random_range(-10.0..10.0)),
            rotation_deg: std::array::from_fn(|_| rng.random_range(-30.0..30.0)),
            shear: std::array::from_fn(|_| rng.random_range(-0.2..0.2)),
            scale: std::array::from_fn(|_| rng.random_range(0.8..1.2)),
        }
    }

    fn close(a: [f64; 3], b: [f64; 3], tol: f64) -> bool {
        (0..3).all(|i| (a[i] - b[i]).abs() <= tol)
    }

    #[test]
    fn identity_params_give_identity() {
        let t = AffineTransform::from_params(&AffineParams::identity(), [3.0, -2.0, 5.0]).unwrap();
        assert_eq!(t.apply([1.0, 2.0, 3.0]), [1.0, 2.0, 3.0]);
        assert_eq!(t.jacobian(), Matrix3::identity());
    }

    #[test]
    fn pure_translation() {
        let p = AffineParams {
            translation: [1.0, 2.0, 2.0],
            ..AffineParams::identity()
        };
        let t = AffineTransform::from_params(&p, [10.0, 0.0, -4.0]).unwrap();
        for x in [[0.0, 0.0, 0.0], [5.0, -3.0, 8.0]] {
            let y = t.apply(x);
            let d = Vector3::from(y) - Vector3::from(x);
            assert!((d.norm() - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rotation_about_z_pivots_at_center() {
        let p = AffineParams {
            rotation_deg: [0.0, 0.0, 90.0],
            ..AffineParams::identity()
        };
        let c = [4.0, 5.0, 6.0];
        let t = AffineTransform::from_params(&p, c).unwrap();
        assert!(close(t.apply([5.0, 5.0, 6.0]), [4.0, 6.0, 6.0], 1e-12));
        assert!(close(t.apply(c), c, 1e-12));
    }

    #[test]
    fn euler_order_is_z_y_x() {
        let p = AffineParams {
            rotation_deg: [30.0, 40.0, 50.0],
            ..AffineParams::identity()
        };
        let single = |axis: usize| {
            let mut r = [0.0; 3];
            r[axis] = p.rotation_deg[axis];
            AffineParams {
                rotation_deg: r,
                ..AffineParams::identity()
            }
            .rotation_matrix()
        };
        let expected = single(2) * single(1) * single(0);
        assert!((p.rotation_matrix() - expected).norm() < 1e-14);
    }

    #[test]
    fn singular_and_non_positive_scale_rejected() {
        let p = AffineParams {
            scale: [1.0, 0.0, 1.0],
            ..AffineParams::identity()
        };
        assert!(AffineTransform::from_params(&p, [0.0; 3]).is_err());
        assert!(AffineTransform::from_matrix(Matrix3::zeros(), Vector3::zeros()).is_err());
    }

    #[test]
    fn scale_inverse_about_same_center() {
        let p = AffineParams {
            scale: [2.0; 3],
            ..AffineParams::identity()
        };
        let c = [1.0, 2.0, 3.0];
        let inv = AffineTransform::from_params(&p, c)
            .unwrap()
            .inverse()
            .unwrap();
        assert_eq!(*inv.linear(), Matrix3::identity() * 0.5);
        assert_eq!(*inv.center(), Vector3::from(c));
        assert!(close(inv.apply([3.0, 2.0, 3.0]), [2.0, 2.0, 3.0], 1e-15));
    }

    #[test]
    fn random_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let t =
                AffineTransform::from_params(&random_params(&mut rng), [10.0, -5.0, 3.0]).unwrap();
            let inv = t.inverse().unwrap();
            let mut worst: f64 = 0.0;
            for _ in 0..100 {
                let x: [f64; 3] = std::array::from_fn(|_| rng.random_range(-50.0..50.0));
                let back = inv.apply(t.apply(x));
                worst = worst.max((0..3).map(|i| (back[i] - x[i]).abs()).fold(0.0, f64::max));
            }
            assert!(worst < 1e-10, "{worst}");
        }
    }

    #[test]
    fn compose_matches_sequential_application() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let a = AffineTransform::from_params(&random_params(&mut rng), [1.0, 2.0, 3.0]).unwrap();
        let b = AffineTransform::from_params(&random_params(&mut rng), [-4.0, 0.0, 9.0]).unwrap();
        let ab = a.compose(&b);
        for _ in 0..20 {
            let x: [f64; 3] = std::array::from_fn(|_| rng.random_range(-20.0..20.0));
            assert!(close(ab.apply(x), a.apply(b.apply(x)), 1e-10));
        }
        let id = a.inverse().unwrap().compose(&a);
        assert!((id.linear() - Matrix3::identity()).norm() < 1e-12);
        assert!(id.translation().norm() < 1e-10);
    }

    #[test]
    fn transport_identity_and_uniform_scale() {
        let h = Sym3::new(1.0, -2.0, 3.0, 0.5, -0.25, 0.75);
        let id = AffineTransform::identity();
        assert_eq!(transport_hessian(&h, &id).unwrap(), h);
        let s = 1.7;
        let t = AffineTransform::from_matrix(Matrix3::identity() * s, Vector3::zeros()).unwrap();
        let got = transport_hessian(&h, &t).unwrap();
        let want = h.scale(1.0 / (s * s));
        for (a, b) in got.to_array().iter().zip(want.to_array()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn transport_is_functorial() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..20 {
            let h = Sym3::from_array(std::array::from_fn(|_| rng.random_range(-1.0..1.0)));
            let t1 = AffineTransform::from_params(&random_params(&mut rng), [0.0; 3]).unwrap();
            let t2 = AffineTransform::from_params(&random_params(&mut rng), [1.0; 3]).unwrap();
            let direct = transport_hessian(&h, &t1.compose(&t2)).unwrap();
            let nested = transport_hessian(&transport_hessian(&h, &t2).unwrap(), &t1).unwrap();
            for (a, b) in direct.to_array().iter().zip(nested.to_array()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rotation_preserves_frobenius_norm_and_transport_preserves_inertia() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let inertia = |h: &Sym3| {
            let e = h.to_matrix().symmetric_eigenvalues();
            let pos = e.iter().filter(|&&x| x > 1e-12).count();
            let neg = e.iter().filter(|&&x| x < -1e-12).count();
            (pos, neg)
        };
        for _ in 0..50 {
            let h = Sym3::from_array(std::array::from_fn(|_| rng.random_range(-1.0..1.0)));
            let rot = AffineParams {
                rotation_deg: std::array::from_fn(|_| rng.random_range(-180.0..180.0)),
                ..AffineParams::identity()
            };
            let r = AffineTransform::from_params(&rot, [0.0; 3]).unwrap();
            let hr = transport_hessian(&h, &r).unwrap();
            assert!((hr.norm_sq().sqrt() - h.norm_sq().sqrt()).abs() < 1e-12);

            let t = AffineTransform::from_params(&random_params(&mut rng), [0.0; 3]).unwrap();
            assert_eq!(inertia(&h), inertia(&transport_hessian(&h, &t).unwrap()));
        }
    }

    fn test_volume() -> Volume {
        let g = Grid::new([10, 9, 8], [0.5, 1.0, 2.0], [1.0, -2.0, 0.5]).unwrap();
        Volume::from_fn(g, |x| 3.0 * x[0] - 0.5 * x[1] + 0.25 * x[2] + 1.0).unwrap()
    }

    #[test]
    fn trilinear_exact_on_nodes_and_affine_fields() {
        let v = test_volume();
        let g = *v.grid();
        assert_eq!(
            interpolate_scalar(&v, g.voxel_center(3, 4, 5)),
            Some(v.at(3, 4, 5))
        );
        assert_eq!(
            interpolate_scalar(&v, g.voxel_center(9, 8, 7)),
            Some(v.at(9, 8, 7))
        );
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..200 {
            let u: [f64; 3] =
                std::array::from_fn(|a| rng.random_range(0.0..(g.dims[a] - 1) as f64));
            let x = g.voxel_to_world(u);
            let want = 3.0 * x[0] - 0.5 * x[1] + 0.25 * x[2] + 1.0;
            assert!((interpolate_scalar(&v, x).unwrap() - want).abs() < 1e-12);
        }
    }

    #[test]
    fn outside_the_grid_is_reported() {
        let v = test_volume();
        let g = *v.grid();
        let mut x = g.voxel_center(0, 4, 4);
        x[0] -= 1.0;
        assert_eq!(interpolate_scalar(&v, x), None);
        let mut x = g.voxel_center(9, 8, 7);
        x[2] += 1e-9;
        assert_eq!(interpolate_scalar(&v, x), None);
    }

    #[test]
    fn hessian_interpolation_matches_componentwise_scalar() {
        let g = Grid::new([8, 8, 8], [1.0, 0.5, 1.5], [0.0; 3]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let hess: Vec<Sym3> = (0..g.len())
            .map(|_| Sym3::from_array(std::array::from_fn(|_| rng.random_range(-1.0..1.0))))
            .collect();
        let grad = vec![Vector3::zeros(); g.len()];
        let f = DerivativeField::from_parts(g, 1.0, grad, hess.clone()).unwrap();
        assert_eq!(
            interpolate_hessian(&f, g.voxel_center(2, 3, 4)),
            Some(hess[g.index(2, 3, 4)])
        );
        let comps: Vec<Volume> = (0..6)
            .map(|c| Volume::new(g, hess.iter().map(|h| h.to_array()[c]).collect()).unwrap())
            .collect();
        for _ in 0..100 {
            let u: [f64; 3] =
                std::array::from_fn(|a| rng.random_range(0.0..(g.dims[a] - 1) as f64));
            let x = g.voxel_to_world(u);
            let got = interpolate_hessian(&f, x).unwrap().to_array();
            for c in 0..6 {
                assert!((got[c] - interpolate_scalar(&comps[c], x).unwrap()).abs() < 1e-12);
            }
        }
        let constant = DerivativeField::from_parts(
            g,
            1.0,
            vec![Vector3::zeros(); g.len()],
            vec![Sym3::new(1.0, 2.0, 3.0, 4.0, 5.0, 6.0); g.len()],
        )
        .unwrap();
        let h = interpolate_hessian(&constant, [3.3, 1.7, 5.2])
            .unwrap()
            .to_array();
        for (a, b) in h.iter().zip([1.0, 2.0, 3.0, 4.0, 5.0, 6.0]) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn record_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let rec =
            TransformRecord::from_deformation(random_params(&mut rng), [31.5, 31.5, 20.0]).unwrap();
        let text = rec.to_text();
        let back = TransformRecord::parse(&text).unwrap();
        assert_eq!(back.deformation, rec.deformation);
        assert_eq!(back.map.matrix_3x4(), rec.map.matrix_3x4());
        assert_eq!(back.to_text(), text);

        let bare = TransformRecord::parse("matrix:\n1 0 0 0\n0 1 0 0\n0 0 1 0\n").unwrap();
        assert!(bare.deformation.is_none());
        assert_eq!(bare.map.apply([1.0, 2.0, 3.0]), [1.0, 2.0, 3.0]);
        assert!(TransformRecord::parse("matrix:\n1 0 0 0\n").is_err());
    }
}
