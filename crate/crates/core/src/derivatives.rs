//! Gradient and Hessian fields by separable Gaussian derivative filtering.
//!
//! Every component is a product of three 1-D kernels, one per axis, whose
//! derivative orders add up to the order of the component. The scale is given in
//! millimetres and converted per axis, so anisotropic grids see the same physical
//! kernel. Boundaries use half-sample symmetric reflection (`d c b a | a b c d`).
//!
//! Sampled kernels are moment-corrected: order 0 sums to one, order 1 has zero sum
//! and first moment −1, order 2 has zero sum and second moment 2. With the
//! convolution `out[i] = Σ_j k[j] f[i − j]` this makes the derivative of any
//! polynomial up to degree two exact away from the boundary.

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::symmetric::Sym3;
use crate::volume_io::{Grid, Volume};

/// Smallest kernel standard deviation (in voxels) that is still adequately sampled.
pub const MIN_SIGMA_VOXELS: f64 = 0.3;

/// Kernel support in standard deviations.
pub const TRUNCATION: f64 = 4.0;

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianKernel1D {
    order: u8,
    sigma_voxels: f64,
    taps: Vec<f64>,
    radius: usize,
}

pub fn kernel_radius(sigma_voxels: f64) -> usize {
    (TRUNCATION * sigma_voxels).ceil() as usize
}

/// Builds a sampled, moment-corrected Gaussian derivative kernel.
pub fn make_kernel(order: u8, sigma_voxels: f64) -> Result<GaussianKernel1D> {
    if order > 2 {
        return Err(Error::Parameter(format!(
            "derivative order must be 0, 1 or 2, got {order}"
        )));
    }
    if !(sigma_voxels >= MIN_SIGMA_VOXELS && sigma_voxels.is_finite()) {
        return Err(Error::Parameter(format!(
            "kernel sigma of {sigma_voxels} voxels is undersampled (minimum {MIN_SIGMA_VOXELS})"
        )));
    }
    let radius = kernel_radius(sigma_voxels);
    let s2 = sigma_voxels * sigma_voxels;
    let offsets: Vec<f64> = (-(radius as isize)..=radius as isize)
        .map(|j| j as f64)
        .collect();
    let gauss: Vec<f64> = offsets.iter().map(|x| (-0.5 * x * x / s2).exp()).collect();
    let mass: f64 = gauss.iter().sum();
    let smooth: Vec<f64> = gauss.iter().map(|g| g / mass).collect();

    let taps = match order {
        0 => smooth,
        1 => {
            let raw: Vec<f64> = offsets
                .iter()
                .zip(&gauss)
                .map(|(x, g)| -x / s2 * g)
                .collect();
            let m1: f64 = offsets.iter().zip(&raw).map(|(x, k)| x * k).sum();
            raw.iter().map(|k| -k / m1).collect()
        }
        _ => {
            let raw: Vec<f64> = offsets
                .iter()
                .zip(&gauss)
                .map(|(x, g)| (x * x / (s2 * s2) - 1.0 / s2) * g)
                .collect();
            let dc: f64 = raw.iter().sum();
            let zero_sum: Vec<f64> = raw.iter().zip(&smooth).map(|(k, g)| k - dc * g).collect();
            let m2: f64 = offsets.iter().zip(&zero_sum).map(|(x, k)| x * x * k).sum();
            zero_sum.iter().map(|k| 2.0 * k / m2).collect()
        }
    };
    let mut taps = taps;
    for j in 1..=radius {
        let w = taps[radius + j];
        taps[radius - j] = if order == 1 { -w } else { w };
    }
    if order == 1 {
        taps[radius] = 0.0;
    } else if order == 2 {
        taps[radius] = -2.0 * taps[radius + 1..].iter().sum::<f64>();
    }
    Ok(GaussianKernel1D {
        order,
        sigma_voxels,
        taps,
        radius,
    })
}

impl GaussianKernel1D {
    pub fn order(&self) -> u8 {
        self.order
    }

    pub fn sigma_voxels(&self) -> f64 {
        self.sigma_voxels
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    /// Taps for offsets `-radius..=radius`.
    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    /// Filters a single line with reflected boundaries.
    pub fn apply_1d(&self, line: &[f64]) -> Vec<f64> {
        let n = line.len();
        let taps = PairedTaps::new(self);
        (0..n)
            .map(|i| taps.eval(|d| line[reflect(i as isize + d, n)]))
            .collect()
    }
}

/// Half-sample symmetric reflection of `i` into `0..n`.
#[inline]
pub fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period) as usize;
    if m < n {
        m
    } else {
        2 * n - 1 - m
    }
}

/// Filter weights in paired form: `out[i] = center·f[i] + Σ_{j≥1} w_j·pair_j(i)` where
/// the pair term is `f[i−j] + f[i+j]` (order 0), `f[i−j] − f[i+j]` (order 1) or
/// `f[i−j] + f[i+j] − 2 f[i]` (order 2). Orders 1 and 2 therefore return exactly
/// zero on constant input.
struct PairedTaps {
    order: u8,
    center: f64,
    side: Vec<f64>,
}

impl PairedTaps {
    fn new(k: &GaussianKernel1D) -> Self {
        let r = k.radius;
        PairedTaps {
            order: k.order,
            center: k.taps[r],
            side: k.taps[r + 1..].to_vec(),
        }
    }

    /// `at(d)` returns the sample at signed offset `d` from the output position.
    #[inline]
    fn eval(&self, at: impl Fn(isize) -> f64) -> f64 {
        let mid = at(0);
        let mut acc = 0.0;
        for (j, w) in self.side.iter().enumerate() {
            let d = j as isize + 1;
            let term = match self.order {
                0 => at(-d) + at(d),
                1 => at(-d) - at(d),
                _ => at(-d) + at(d) - 2.0 * mid,
            };
            acc += w * term;
        }
        match self.order {
            0 => self.center * mid + acc,
            _ => acc,
        }
    }
}

fn convolve_axis(
    data: &[f64],
    dims: [usize; 3],
    axis: usize,
    kernel: &GaussianKernel1D,
) -> Vec<f64> {
    let [nx, ny, nz] = dims;
    let slice = nx * ny;
    let taps = PairedTaps::new(kernel);
    let mut out = vec![0.0; data.len()];
    out.par_chunks_mut(slice)
        .enumerate()
        .for_each(|(k, out_slice)| {
            let src = &data[k * slice..(k + 1) * slice];
            match axis {
                0 => {
                    for j in 0..ny {
                        let row = &src[j * nx..(j + 1) * nx];
                        for i in 0..nx {
                            out_slice[j * nx + i] = taps.eval(|d| row[reflect(i as isize + d, nx)]);
                        }
                    }
                }
                1 => {
                    for j in 0..ny {
                        for i in 0..nx {
                            out_slice[j * nx + i] =
                                taps.eval(|d| src[reflect(j as isize + d, ny) * nx + i]);
                        }
                    }
                }
                _ => {
                    for (idx, o) in out_slice.iter_mut().enumerate() {
                        *o = taps.eval(|d| data[reflect(k as isize + d, nz) * slice + idx]);
                    }
                }
            }
        });
    out
}

/// Per-voxel gradient (intensity/mm) and Hessian (intensity/mm²) at one scale.
#[derive(Clone, Debug)]
pub struct DerivativeField {
    grid: Grid,
    sigma_mm: f64,
    grad: Vec<Vector3<f64>>,
    hess: Vec<Sym3>,
}

/// Names of the nine stored components, for debug dumps.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Component {
    Gx,
    Gy,
    Gz,
    Hxx,
    Hyy,
    Hzz,
    Hxy,
    Hxz,
    Hyz,
}

impl Component {
    pub const ALL: [Component; 9] = [
        Component::Gx,
        Component::Gy,
        Component::Gz,
        Component::Hxx,
        Component::Hyy,
        Component::Hzz,
        Component::Hxy,
        Component::Hxz,
        Component::Hyz,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Component::Gx => "gx",
            Component::Gy => "gy",
            Component::Gz => "gz",
            Component::Hxx => "hxx",
            Component::Hyy => "hyy",
            Component::Hzz => "hzz",
            Component::Hxy => "hxy",
            Component::Hxz => "hxz",
            Component::Hyz => "hyz",
        }
    }

    /// Derivative order along (x, y, z).
    fn orders(&self) -> [u8; 3] {
        match self {
            Component::Gx => [1, 0, 0],
            Component::Gy => [0, 1, 0],
            Component::Gz => [0, 0, 1],
            Component::Hxx => [2, 0, 0],
            Component::Hyy => [0, 2, 0],
            Component::Hzz => [0, 0, 2],
            Component::Hxy => [1, 1, 0],
            Component::Hxz => [1, 0, 1],
            Component::Hyz => [0, 1, 1],
        }
    }
}

/// Per-axis kernel standard deviation in voxels for a physical scale.
pub fn sigma_voxels(grid: &Grid, sigma_mm: f64) -> [f64; 3] {
    std::array::from_fn(|a| sigma_mm / grid.spacing[a])
}

/// Checks that `sigma_mm` can be applied to `grid`; returns the per-axis radii.
pub fn check_scale(grid: &Grid, sigma_mm: f64) -> Result<[usize; 3]> {
    if !(sigma_mm > 0.0 && sigma_mm.is_finite()) {
        return Err(Error::Parameter(format!(
            "sigma must be positive, got {sigma_mm} mm"
        )));
    }
    let sv = sigma_voxels(grid, sigma_mm);
    let mut radii = [0; 3];
    for axis in 0..3 {
        if sv[axis] < MIN_SIGMA_VOXELS {
            return Err(Error::Parameter(format!(
                "sigma {sigma_mm} mm is {:.3} voxels along axis {axis}; minimum is {MIN_SIGMA_VOXELS}",
                sv[axis]
            )));
        }
        radii[axis] = kernel_radius(sv[axis]);
        if radii[axis] >= grid.dims[axis] {
            return Err(Error::Parameter(format!(
                "kernel radius {} exceeds grid size {} along axis {axis}",
                radii[axis], grid.dims[axis]
            )));
        }
    }
    Ok(radii)
}

/// Computes the gradient and Hessian of `v` at scale `sigma_mm`.
pub fn compute_derivative_field(v: &Volume, sigma_mm: f64) -> Result<DerivativeField> {
    let grid = *v.grid();
    check_scale(&grid, sigma_mm)?;
    let sv = sigma_voxels(&grid, sigma_mm);
    let kernels: Vec<[GaussianKernel1D; 3]> = (0..3)
        .map(|axis| {
            Ok([
                make_kernel(0, sv[axis])?,
                make_kernel(1, sv[axis])?,
                make_kernel(2, sv[axis])?,
            ])
        })
        .collect::<Result<_>>()?;
    let dims = grid.dims;

    let along_z: Vec<Vec<f64>> = (0..3usize)
        .into_par_iter()
        .map(|o| convolve_axis(v.data(), dims, 2, &kernels[2][o]))
        .collect();
    // (order y, order z) pairs needed by the nine components
    const YZ: [(u8, u8); 6] = [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)];
    let along_yz: Vec<Vec<f64>> = YZ
        .par_iter()
        .map(|&(oy, oz)| convolve_axis(&along_z[oz as usize], dims, 1, &kernels[1][oy as usize]))
        .collect();
    let components: Vec<Vec<f64>> = Component::ALL
        .par_iter()
        .map(|c| {
            let [ox, oy, oz] = c.orders();
            let src = YZ.iter().position(|&p| p == (oy, oz)).expect("pair listed");
            let mut out = convolve_axis(&along_yz[src], dims, 0, &kernels[0][ox as usize]);
            let unit: f64 = (0..3)
                .map(|a| grid.spacing[a].powi([ox, oy, oz][a] as i32))
                .product();
            out.iter_mut().for_each(|x| *x /= unit);
            out
        })
        .collect();

    let n = grid.len();
    let c = &components;
    let grad = (0..n)
        .map(|i| Vector3::new(c[0][i], c[1][i], c[2][i]))
        .collect();
    let hess = (0..n)
        .map(|i| Sym3::new(c[3][i], c[4][i], c[5][i], c[6][i], c[7][i], c[8][i]))
        .collect();
    Ok(DerivativeField {
        grid,
        sigma_mm,
        grad,
        hess,
    })
}

impl DerivativeField {
    /// Assembles a field from precomputed per-voxel values.
    pub fn from_parts(
        grid: Grid,
        sigma_mm: f64,
        grad: Vec<Vector3<f64>>,
        hess: Vec<Sym3>,
    ) -> Result<Self> {
        if grad.len() != grid.len() || hess.len() != grid.len() {
            return Err(Error::Data(
                "derivative field length does not match grid".into(),
            ));
        }
        Ok(DerivativeField {
            grid,
            sigma_mm,
            grad,
            hess,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn sigma_mm(&self) -> f64 {
        self.sigma_mm
    }

    #[inline]
    pub fn gradient(&self, idx: usize) -> Vector3<f64> {
        self.grad[idx]
    }

    #[inline]
    pub fn hessian(&self, idx: usize) -> Sym3 {
        self.hess[idx]
    }

    pub fn gradients(&self) -> &[Vector3<f64>] {
        &self.grad
    }

    pub fn hessians(&self) -> &[Sym3] {
        &self.hess
    }

    /// Extracts one component as a volume (for inspection and debug dumps).
    pub fn component(&self, c: Component) -> Result<Volume> {
        let data = match c {
            Component::Gx => self.grad.iter().map(|g| g.x).collect(),
            Component::Gy => self.grad.iter().map(|g| g.y).collect(),
            Component::Gz => self.grad.iter().map(|g| g.z).collect(),
            Component::Hxx => self.hess.iter().map(|h| h.xx).collect(),
            Component::Hyy => self.hess.iter().map(|h| h.yy).collect(),
            Component::Hzz => self.hess.iter().map(|h| h.zz).collect(),
            Component::Hxy => self.hess.iter().map(|h| h.xy).collect(),
            Component::Hxz => self.hess.iter().map(|h| h.xz).collect(),
            Component::Hyz => self.hess.iter().map(|h| h.yz).collect(),
        };
        Volume::new(self.grid, data)
    }
}
