//! Pointwise similarity between a fixed image `F` and a moving image `M`.
//!
//! If the intensities of two patches are functionally dependent, `M = g(F)`, their
//! derivatives satisfy
//!
//! ```text
//! ∇M  = λ ∇F
//! H_M = μ H_F + ν ∇F ∇Fᵀ
//! ```
//!
//! for some scalars λ, μ, ν. The Hessian similarity measures how far `H_M` is from
//! the plane spanned by `H_F` and `∇F∇Fᵀ` under the Frobenius inner product:
//!
//! ```text
//! E(μ, ν) = ‖H_M − μ H_F − ν ∇F∇Fᵀ‖² / ‖H_M‖²        S = 1 − min E
//! ```
//!
//! `S` is the squared cosine between `H_M` and its projection onto that plane, so it
//! lies in `[0, 1]`; `S = 1` means the Hessian relation holds exactly. It is not
//! symmetric in the roles of `F` and `M`. Three independent evaluations are provided:
//! the closed-form ratio, the same quantity written with the angles α, β, γ between
//! the three vectorised matrices, and a direct least-squares solve. Gradient
//! orientation alignment is the analogous construction for the gradient relation:
//! the squared cosine of the angle between `∇F` and `∇M`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::symmetric::Sym3;

/// Relative threshold below which the `H_F`/`∇F∇Fᵀ` plane is considered collapsed.
pub const DEGENERACY_EPS: f64 = 1e-12;

/// Tolerance for values just outside `[0, 1]` that are clamped rather than reported.
pub const BOUND_SLACK: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointwiseInputs {
    pub grad_f: Vector3<f64>,
    pub hess_f: Sym3,
    pub hess_m: Sym3,
    /// Only used by gradient orientation alignment.
    pub grad_m: Option<Vector3<f64>>,
}

impl PointwiseInputs {
    pub fn hessian(grad_f: Vector3<f64>, hess_f: Sym3, hess_m: Sym3) -> Self {
        PointwiseInputs {
            grad_f,
            hess_f,
            hess_m,
            grad_m: None,
        }
    }

    pub fn gradients(grad_f: Vector3<f64>, grad_m: Vector3<f64>) -> Self {
        PointwiseInputs {
            grad_f,
            hess_f: Sym3::ZERO,
            hess_m: Sym3::ZERO,
            grad_m: Some(grad_m),
        }
    }

    fn check_finite(&self) -> Result<()> {
        let ok = self.grad_f.iter().all(|x| x.is_finite())
            && self.hess_f.is_finite()
            && self.hess_m.is_finite()
            && self.grad_m.is_none_or(|g| g.iter().all(|x| x.is_finite()));
        if ok {
            Ok(())
        } else {
            Err(Error::Data("non-finite metric input".into()))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimilarityValue {
    /// Similarity in `[0, 1]`; zero when invalid.
    pub s: f64,
    pub valid: bool,
    /// Optimal (μ, ν) of the Hessian relation, when valid.
    pub coefficients: Option<(f64, f64)>,
}

impl SimilarityValue {
    pub const INVALID: SimilarityValue = SimilarityValue {
        s: 0.0,
        valid: false,
        coefficients: None,
    };

    fn valid(s: f64, coefficients: Option<(f64, f64)>) -> Self {
        SimilarityValue {
            s,
            valid: true,
            coefficients,
        }
    }

    pub fn mu_star(&self) -> Option<f64> {
        self.coefficients.map(|c| c.0)
    }

    pub fn nu_star(&self) -> Option<f64> {
        self.coefficients.map(|c| c.1)
    }
}

fn clamp_unit(s: f64) -> Result<f64> {
    if (-BOUND_SLACK..=1.0 + BOUND_SLACK).contains(&s) {
        Ok(s.clamp(0.0, 1.0))
    } else {
        Err(Error::Internal(format!("similarity {s} outside [0, 1]")))
    }
}

/// A squared norm that is zero or subnormal.
#[inline]
fn vanishes(norm_sq: f64) -> bool {
    norm_sq < f64::MIN_POSITIVE
}

/// True when `∇F` and `H_F` cannot span a plane (zero gradient, zero Hessian, or
/// `H_F ∝ ∇F∇Fᵀ`).
#[inline]
pub fn fixed_plane_degenerate(grad_f: &Vector3<f64>, hess_f: &Sym3) -> bool {
    let g2 = grad_f.norm_squared();
    let d = g2 * g2;
    let a = hess_f.norm_sq();
    let c = hess_f.quad_form(grad_f);
    let q = d * a - c * c;
    q <= DEGENERACY_EPS * d * a
}

/// Hessian similarity from the closed-form ratio
///
/// ```text
///      ‖∇F‖⁴⟨H_M,H_F⟩² + ‖H_F‖²(∇FᵀH_M∇F)² − 2⟨H_M,H_F⟩(∇FᵀH_M∇F)(∇FᵀH_F∇F)
/// S = ───────────────────────────────────────────────────────────────────────
///                 ‖H_M‖² (‖∇F‖⁴‖H_F‖² − (∇FᵀH_F∇F)²)
/// ```
pub fn hessian_similarity_closed_form(p: &PointwiseInputs) -> Result<SimilarityValue> {
    p.check_finite()?;
    let g = &p.grad_f;
    let g2 = g.norm_squared();
    let d = g2 * g2;
    let a = p.hess_f.norm_sq();
    let h = p.hess_m.norm_sq();
    let c = p.hess_f.quad_form(g);
    let r = p.hess_m.quad_form(g);
    let t = p.hess_m.dot(&p.hess_f);
    let q = d * a - c * c;
    if q <= DEGENERACY_EPS * d * a || vanishes(h) {
        return Ok(SimilarityValue::INVALID);
    }
    let num = d * t * t + a * r * r - 2.0 * t * r * c;
    let s = clamp_unit(num / (h * q))?;
    let mu = (d * t - c * r) / q;
    let nu = (a * r - c * t) / q;
    Ok(SimilarityValue::valid(s, Some((mu, nu))))
}

fn full_dot(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    a.component_mul(b).sum()
}

/// Hessian similarity from the angles between `vec(H_M)`, `vec(H_F)` and
/// `vec(∇F∇Fᵀ)`:
///
/// ```text
/// S = (cos²α + cos²β − 2 cosα cosβ cosγ) / sin²γ
/// ```
///
/// α: (H_M, H_F), β: (H_M, ∇F∇Fᵀ), γ: (H_F, ∇F∇Fᵀ). Inner products are taken over
/// all nine entries of the full matrices.
pub fn hessian_similarity_angle_form(p: &PointwiseInputs) -> Result<SimilarityValue> {
    p.check_finite()?;
    let hm = p.hess_m.to_matrix();
    let hf = p.hess_f.to_matrix();
    let gg = p.grad_f * p.grad_f.transpose();
    let n_hm = full_dot(&hm, &hm).sqrt();
    let n_hf = full_dot(&hf, &hf).sqrt();
    let n_gg = full_dot(&gg, &gg).sqrt();
    if vanishes(n_hm * n_hm) || n_hf == 0.0 || n_gg == 0.0 {
        return Ok(SimilarityValue::INVALID);
    }
    let cos_a = full_dot(&hm, &hf) / (n_hm * n_hf);
    let cos_b = full_dot(&hm, &gg) / (n_hm * n_gg);
    let cos_g = full_dot(&hf, &gg) / (n_hf * n_gg);
    let sin2_g = 1.0 - cos_g * cos_g;
    if sin2_g <= DEGENERACY_EPS {
        return Ok(SimilarityValue::INVALID);
    }
    let s = clamp_unit((cos_a * cos_a + cos_b * cos_b - 2.0 * cos_a * cos_b * cos_g) / sin2_g)?;
    let mu = n_hm * (cos_a - cos_b * cos_g) / (n_hf * sin2_g);
    let nu = n_hm * (cos_b - cos_a * cos_g) / (n_gg * sin2_g);
    Ok(SimilarityValue::valid(s, Some((mu, nu))))
}

/// Reference evaluation: solves the 2×2 normal equations for (μ, ν) and returns
/// `1 − E` with `E` computed from the explicit residual matrix. Not clamped.
pub fn hessian_similarity_oracle(p: &PointwiseInputs) -> Result<SimilarityValue> {
    p.check_finite()?;
    let hm = p.hess_m.to_matrix();
    let hf = p.hess_f.to_matrix();
    let gg = p.grad_f * p.grad_f.transpose();
    let h = full_dot(&hm, &hm);
    if vanishes(h) {
        return Ok(SimilarityValue::INVALID);
    }
    let gram = Matrix2::new(
        full_dot(&hf, &hf),
        full_dot(&hf, &gg),
        full_dot(&gg, &hf),
        full_dot(&gg, &gg),
    );
    let det = gram.determinant();
    if det <= DEGENERACY_EPS * gram[(0, 0)] * gram[(1, 1)] {
        return Ok(SimilarityValue::INVALID);
    }
    let rhs = Vector2::new(full_dot(&hm, &hf), full_dot(&hm, &gg));
    let Some(sol) = gram.lu().solve(&rhs) else {
        return Ok(SimilarityValue::INVALID);
    };
    let resid = hm - hf * sol[0] - gg * sol[1];
    let e = full_dot(&resid, &resid) / h;
    Ok(SimilarityValue::valid(1.0 - e, Some((sol[0], sol[1]))))
}

/// Squared cosine of the angle between `∇F` and `∇M`.
pub fn gradient_orientation_alignment(p: &PointwiseInputs) -> Result<SimilarityValue> {
    p.check_finite()?;
    let gm = p
        .grad_m
        .ok_or_else(|| Error::Parameter("gradient orientation alignment needs ∇M".into()))?;
    let a = p.grad_f.norm_squared();
    let b = gm.norm_squared();
    if vanishes(a) || vanishes(b) {
        return Ok(SimilarityValue::INVALID);
    }
    let dot = p.grad_f.dot(&gm);
    Ok(SimilarityValue::valid(
        clamp_unit(dot * dot / (a * b))?,
        None,
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Metric {
    /// Hessian-based similarity (closed form).
    Hessian,
    /// Gradient orientation alignment.
    Goa,
}

impl Metric {
    pub fn name(&self) -> &'static str {
        match self {
            Metric::Hessian => "hessian",
            Metric::Goa => "goa",
        }
    }

    pub fn needs_moving_gradient(&self) -> bool {
        matches!(self, Metric::Goa)
    }

    /// Whether the fixed-image quantities alone already rule out a valid value.
    pub fn fixed_degenerate(&self, grad_f: &Vector3<f64>, hess_f: &Sym3) -> bool {
        match self {
            Metric::Hessian => fixed_plane_degenerate(grad_f, hess_f),
            Metric::Goa => vanishes(grad_f.norm_squared()),
        }
    }

    pub fn evaluate(&self, p: &PointwiseInputs) -> Result<SimilarityValue> {
        match self {
            Metric::Hessian => hessian_similarity_closed_form(p),
            Metric::Goa => gradient_orientation_alignment(p),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hessian" => Ok(Metric::Hessian),
            "goa" => Ok(Metric::Goa),
            other => Err(Error::Parameter(format!(
                "unknown metric {other:?} (expected hessian or goa)"
            ))),
        }
    }
}
