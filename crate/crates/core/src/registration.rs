//! Affine registration by sampled similarity and differential evolution.
//!
//! Preprocessing computes Gaussian derivatives of both images once and draws a
//! fixed set of voxel centres from the fixed image. For a candidate deformation `P`
//! of the moving image, every sample `x` is mapped to `P⁻¹(x)` in the moving image,
//! the moving Hessian (and gradient) is interpolated there and transported into the
//! fixed frame by `A⁻ᵀ · A⁻¹`, and the per-sample similarities are averaged. The
//! optimiser minimises the negated average.
//!
//! Samples whose fixed-image derivatives are degenerate, that leave the moving
//! volume, or whose metric value is undefined are left out of the average. If fewer
//! than `min_valid_fraction · N` remain, the candidate is rejected with `+∞`.

use std::time::Instant;

use nalgebra::Vector3;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::derivatives::{check_scale, compute_derivative_field, DerivativeField};
use crate::error::{Error, Result};
use crate::metrics::{Metric, PointwiseInputs};
use crate::optimizer::{minimize, DeConfig, OptimizationTrace};
use crate::symmetric::Sym3;
use crate::transform::{
    blend_gradient, blend_hessian, trilinear_stencil, AffineParams, AffineTransform,
    TransformRecord, Transport, NUM_PARAMS,
};
use crate::volume_io::{Grid, Volume};

/// Column names of the 12 deformation parameters.
pub const PARAM_NAMES: [&str; NUM_PARAMS] = [
    "tx", "ty", "tz", "rx", "ry", "rz", "sxy", "sxz", "syz", "kx", "ky", "kz",
];

/// Symmetric search ranges around the identity deformation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ParamBounds {
    /// ± mm per axis.
    pub translation_mm: f64,
    /// ± degrees per axis.
    pub rotation_deg: f64,
    /// ± per shear entry.
    pub shear: f64,
    /// Scale factors lie in `1 ± scale`.
    pub scale: f64,
}

impl Default for ParamBounds {
    fn default() -> Self {
        ParamBounds {
            translation_mm: 10.0,
            rotation_deg: 5.0,
            shear: 0.05,
            scale: 0.05,
        }
    }
}

impl ParamBounds {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.translation_mm,
            self.rotation_deg,
            self.shear,
            self.scale,
        ];
        if all.iter().any(|b| !(b.is_finite() && *b > 0.0)) {
            return Err(Error::Parameter(format!(
                "search bounds must be positive, got {self:?}"
            )));
        }
        if self.scale >= 1.0 {
            return Err(Error::Parameter(format!(
                "scale bound must be below 1, got {}",
                self.scale
            )));
        }
        Ok(())
    }

    /// Per-parameter `(lo, hi)` in parameter-vector order.
    pub fn to_box(&self) -> Vec<(f64, f64)> {
        let sym = |b: f64| (-b, b);
        let mut out = vec![sym(self.translation_mm); 3];
        out.extend([sym(self.rotation_deg); 3]);
        out.extend([sym(self.shear); 3]);
        out.extend([(1.0 - self.scale, 1.0 + self.scale); 3]);
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegistrationConfig {
    /// Gaussian derivative scale in mm.
    pub sigma_mm: f64,
    pub num_samples: usize,
    pub metric: Metric,
    pub bounds: ParamBounds,
    /// Optimiser settings; `bounds` and `initial_member` are filled in by [`register`].
    pub de: DeConfig,
    /// Lower bound on the distance between samples and the fixed-image border. The
    /// derivative kernel radius is always respected.
    pub sample_margin_mm: f64,
    /// Seeds sample selection.
    pub seed: u64,
    pub min_valid_fraction: f64,
    /// Put the identity deformation into the initial population.
    pub seed_identity: bool,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        RegistrationConfig {
            sigma_mm: 1.5,
            num_samples: 5000,
            metric: Metric::Hessian,
            bounds: ParamBounds::default(),
            de: DeConfig::default(),
            sample_margin_mm: 0.0,
            seed: 0,
            min_valid_fraction: 0.25,
            seed_identity: true,
        }
    }
}

impl RegistrationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_samples < 100 {
            return Err(Error::Parameter(format!(
                "at least 100 samples are required, got {}",
                self.num_samples
            )));
        }
        if !(self.min_valid_fraction > 0.0 && self.min_valid_fraction <= 1.0) {
            return Err(Error::Parameter(format!(
                "min valid fraction must be in (0, 1], got {}",
                self.min_valid_fraction
            )));
        }
        if !(self.sample_margin_mm >= 0.0 && self.sample_margin_mm.is_finite()) {
            return Err(Error::Parameter(format!(
                "sample margin must be finite and >= 0, got {}",
                self.sample_margin_mm
            )));
        }
        self.bounds.validate()
    }

    /// The optimiser configuration used by [`register`].
    pub fn de_config(&self) -> DeConfig {
        let identity = AffineParams::identity().to_array().to_vec();
        DeConfig {
            bounds: self.bounds.to_box(),
            initial_member: self.seed_identity.then_some(identity),
            ..self.de.clone()
        }
    }

    fn min_valid(&self) -> usize {
        (self.min_valid_fraction * self.num_samples as f64).ceil() as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplePoint {
    /// World position in the fixed image (mm).
    pub world: [f64; 3],
    pub grad_f: Vector3<f64>,
    pub hess_f: Sym3,
    /// Fixed-image derivatives alone rule out a metric value here.
    pub degenerate_f: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    pub points: Vec<SamplePoint>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn num_non_degenerate(&self) -> usize {
        self.points.iter().filter(|p| !p.degenerate_f).count()
    }
}

/// Everything the cost function reads; built once per registration.
#[derive(Clone, Debug)]
pub struct Preprocessed {
    pub samples: SampleSet,
    pub moving_field: DerivativeField,
    pub metric: Metric,
    /// Pivot of the deformation: the fixed grid centre.
    pub center: [f64; 3],
    /// Minimum number of contributing samples for a finite cost.
    pub min_valid: usize,
}

/// Inclusive voxel index range per axis that keeps `margin` voxels to each border.
fn eroded_ranges(grid: &Grid, margins: [usize; 3]) -> Result<[(usize, usize); 3]> {
    let mut out = [(0, 0); 3];
    for a in 0..3 {
        let n = grid.dims[a];
        if 2 * margins[a] >= n {
            return Err(Error::Preprocessing(format!(
                "sampling margin of {} voxels leaves no interior along axis {a} (size {n})",
                margins[a]
            )));
        }
        out[a] = (margins[a], n - 1 - margins[a]);
    }
    Ok(out)
}

/// Draws `n` voxel centres uniformly from the eroded grid, without replacement when
/// the region is large enough.
fn sample_voxels(grid: &Grid, margins: [usize; 3], n: usize, seed: u64) -> Result<Vec<[usize; 3]>> {
    let ranges = eroded_ranges(grid, margins)?;
    let size: [usize; 3] = std::array::from_fn(|a| ranges[a].1 - ranges[a].0 + 1);
    let total = size[0] * size[1] * size[2];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let flat: Vec<usize> = if n <= total {
        sample(&mut rng, total, n).into_vec()
    } else {
        (0..n).map(|_| rng.random_range(0..total)).collect()
    };
    Ok(flat
        .into_iter()
        .map(|f| {
            let i = f % size[0];
            let j = (f / size[0]) % size[1];
            let k = f / (size[0] * size[1]);
            [ranges[0].0 + i, ranges[1].0 + j, ranges[2].0 + k]
        })
        .collect())
}

/// Computes derivative fields and the fixed-image sample set.
pub fn preprocess(
    fixed: &Volume,
    moving: &Volume,
    cfg: &RegistrationConfig,
) -> Result<Preprocessed> {
    cfg.validate()?;
    let fgrid = *fixed.grid();
    let radii = check_scale(&fgrid, cfg.sigma_mm)?;
    check_scale(moving.grid(), cfg.sigma_mm)?;
    let fixed_field = compute_derivative_field(fixed, cfg.sigma_mm)?;
    let moving_field = compute_derivative_field(moving, cfg.sigma_mm)?;

    let margins: [usize; 3] = std::array::from_fn(|a| {
        let mm = (cfg.sample_margin_mm / fgrid.spacing[a]).ceil() as usize;
        radii[a].max(mm)
    });
    let voxels = sample_voxels(&fgrid, margins, cfg.num_samples, cfg.seed)?;
    let points: Vec<SamplePoint> = voxels
        .into_iter()
        .map(|[i, j, k]| {
            let idx = fgrid.index(i, j, k);
            let grad_f = fixed_field.gradient(idx);
            let hess_f = fixed_field.hessian(idx);
            SamplePoint {
                world: fgrid.voxel_center(i, j, k),
                grad_f,
                hess_f,
                degenerate_f: cfg.metric.fixed_degenerate(&grad_f, &hess_f),
            }
        })
        .collect();
    let samples = SampleSet { points };

    let min_valid = cfg.min_valid();
    let usable = samples.num_non_degenerate();
    if usable < min_valid {
        return Err(Error::Preprocessing(format!(
            "only {usable} of {} fixed-image samples are usable for the {} metric; at least {min_valid} are required",
            samples.len(),
            cfg.metric
        )));
    }
    Ok(Preprocessed {
        samples,
        moving_field,
        metric: cfg.metric,
        center: fgrid.center(),
        min_valid,
    })
}

/// What happened to one sample under one candidate deformation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SampleOutcome {
    Value(f64),
    FixedDegenerate,
    OutOfBounds,
    MetricInvalid,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub outcomes: Vec<SampleOutcome>,
    pub num_valid: usize,
    pub num_fixed_degenerate: usize,
    pub num_out_of_bounds: usize,
    pub num_metric_invalid: usize,
    /// Mean similarity over valid samples; `None` when none are valid.
    pub mean: Option<f64>,
    pub min_valid: usize,
}

impl MetricReport {
    /// Negated mean, or `+∞` when too few samples contribute.
    pub fn cost(&self) -> f64 {
        match self.mean {
            Some(m) if self.num_valid >= self.min_valid => -m,
            _ => f64::INFINITY,
        }
    }
}

/// Evaluates the metric on every sample under the deformation `params`.
pub fn evaluate(params: &[f64], state: &Preprocessed) -> Result<MetricReport> {
    let p = AffineParams::from_slice(params)?;
    let deformation = AffineTransform::from_params(&p, state.center)?;
    let to_moving = deformation.inverse()?;
    let transport = Transport::new(&deformation)?;
    let field = &state.moving_field;
    let grid = field.grid();
    let metric = state.metric;

    let mut outcomes = Vec::with_capacity(state.samples.len());
    let (mut sum, mut valid) = (0.0, 0usize);
    let (mut degenerate, mut outside, mut invalid) = (0usize, 0usize, 0usize);
    for sp in &state.samples.points {
        let outcome = if sp.degenerate_f {
            degenerate += 1;
            SampleOutcome::FixedDegenerate
        } else if let Some((idx, w)) = trilinear_stencil(grid, to_moving.apply(sp.world)) {
            let inputs = match metric {
                Metric::Hessian => PointwiseInputs::hessian(
                    sp.grad_f,
                    sp.hess_f,
                    transport.hessian(&blend_hessian(field, &idx, &w)),
                ),
                Metric::Goa => PointwiseInputs::gradients(
                    sp.grad_f,
                    transport.gradient(&blend_gradient(field, &idx, &w)),
                ),
            };
            match metric.evaluate(&inputs) {
                Ok(v) if v.valid => {
                    sum += v.s;
                    valid += 1;
                    SampleOutcome::Value(v.s)
                }
                _ => {
                    invalid += 1;
                    SampleOutcome::MetricInvalid
                }
            }
        } else {
            outside += 1;
            SampleOutcome::OutOfBounds
        };
        outcomes.push(outcome);
    }
    Ok(MetricReport {
        outcomes,
        num_valid: valid,
        num_fixed_degenerate: degenerate,
        num_out_of_bounds: outside,
        num_metric_invalid: invalid,
        mean: (valid > 0).then(|| sum / valid as f64),
        min_valid: state.min_valid,
    })
}

/// Negated mean similarity for the deformation `params`; `+∞` when infeasible.
pub fn cost(params: &[f64], state: &Preprocessed) -> f64 {
    match evaluate(params, state) {
        Ok(r) => r.cost(),
        Err(_) => f64::INFINITY,
    }
}

#[derive(Clone, Debug)]
pub struct RegistrationResult {
    /// Recovered deformation of the moving image.
    pub deformation: AffineParams,
    /// Pivot of the deformation (fixed grid centre).
    pub center: [f64; 3],
    /// Maps fixed-image world coordinates to moving-image world coordinates.
    pub transform: AffineTransform,
    pub trace: OptimizationTrace,
    pub preprocess_seconds: f64,
    pub optimize_seconds: f64,
}

impl RegistrationResult {
    pub fn record(&self) -> Result<TransformRecord> {
        TransformRecord::from_deformation(self.deformation, self.center)
    }

    pub fn trace_csv(&self) -> String {
        self.trace.to_csv(Some(&PARAM_NAMES))
    }
}

/// Fixed-to-moving map for a deformation parameter vector.
pub fn fixed_to_moving(params: &[f64], center: [f64; 3]) -> Result<AffineTransform> {
    AffineTransform::from_params(&AffineParams::from_slice(params)?, center)?.inverse()
}

pub fn register(
    fixed: &Volume,
    moving: &Volume,
    cfg: &RegistrationConfig,
) -> Result<RegistrationResult> {
    let t0 = Instant::now();
    let state = preprocess(fixed, moving, cfg)?;
    let preprocess_seconds = t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    let trace = minimize(|x| cost(x, &state), &cfg.de_config())?;
    let optimize_seconds = t1.elapsed().as_secs_f64();

    let deformation = AffineParams::from_slice(&trace.best)?;
    let transform = fixed_to_moving(&trace.best, state.center)?;
    Ok(RegistrationResult {
        deformation,
        center: state.center,
        transform,
        trace,
        preprocess_seconds,
        optimize_seconds,
    })
}
