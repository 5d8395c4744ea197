use nalgebra::{Matrix3, Vector3};

/// Symmetric 3×3 matrix stored as its six unique entries.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Sym3 {
    pub xx: f64,
    pub yy: f64,
    pub zz: f64,
    pub xy: f64,
    pub xz: f64,
    pub yz: f64,
}

impl Sym3 {
    pub const ZERO: Sym3 = Sym3 {
        xx: 0.0,
        yy: 0.0,
        zz: 0.0,
        xy: 0.0,
        xz: 0.0,
        yz: 0.0,
    };

    pub fn new(xx: f64, yy: f64, zz: f64, xy: f64, xz: f64, yz: f64) -> Self {
        Sym3 {
            xx,
            yy,
            zz,
            xy,
            xz,
            yz,
        }
    }

    pub fn diag(d: [f64; 3]) -> Self {
        Sym3::new(d[0], d[1], d[2], 0.0, 0.0, 0.0)
    }

    pub fn identity() -> Self {
        Sym3::diag([1.0; 3])
    }

    /// `v vᵀ`.
    pub fn outer(v: &Vector3<f64>) -> Self {
        Sym3::new(
            v.x * v.x,
            v.y * v.y,
            v.z * v.z,
            v.x * v.y,
            v.x * v.z,
            v.y * v.z,
        )
    }

    /// Symmetric part `(m + mᵀ) / 2`.
    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        Sym3::new(
            m[(0, 0)],
            m[(1, 1)],
            m[(2, 2)],
            0.5 * (m[(0, 1)] + m[(1, 0)]),
            0.5 * (m[(0, 2)] + m[(2, 0)]),
            0.5 * (m[(1, 2)] + m[(2, 1)]),
        )
    }

    pub fn to_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.xx, self.xy, self.xz, //
            self.xy, self.yy, self.yz, //
            self.xz, self.yz, self.zz,
        )
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.xx, self.yy, self.zz, self.xy, self.xz, self.yz]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Sym3::new(a[0], a[1], a[2], a[3], a[4], a[5])
    }

    /// Frobenius inner product of the full matrices (off-diagonals count twice).
    #[inline]
    pub fn dot(&self, o: &Sym3) -> f64 {
        self.xx * o.xx
            + self.yy * o.yy
            + self.zz * o.zz
            + 2.0 * (self.xy * o.xy + self.xz * o.xz + self.yz * o.yz)
    }

    #[inline]
    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    /// `vᵀ H v`.
    #[inline]
    pub fn quad_form(&self, v: &Vector3<f64>) -> f64 {
        self.xx * v.x * v.x
            + self.yy * v.y * v.y
            + self.zz * v.z * v.z
            + 2.0 * (self.xy * v.x * v.y + self.xz * v.x * v.z + self.yz * v.y * v.z)
    }

    pub fn scale(&self, c: f64) -> Sym3 {
        Sym3::from_array(self.to_array().map(|x| c * x))
    }

    pub fn add(&self, o: &Sym3) -> Sym3 {
        let a = self.to_array();
        let b = o.to_array();
        Sym3::from_array(std::array::from_fn(|i| a[i] + b[i]))
    }

    /// `mᵀ H m`, symmetrised.
    pub fn congruence(&self, m: &Matrix3<f64>) -> Sym3 {
        Sym3::from_matrix(&(m.transpose() * self.to_matrix() * m))
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|x| x.is_finite())
    }
}
