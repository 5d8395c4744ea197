//! Registration accuracy and similarity diagnostics.
//!
//! Landmark error reports, dense similarity maps of a pre-aligned pair, the change in
//! those maps under simulated intensity inhomogeneity, per-evaluation similarity
//! versus landmark error for an optimisation trace, and 8-bit slice dumps.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::derivatives::{check_scale, compute_derivative_field};
use crate::error::{Error, Result};
use crate::metrics::{Metric, PointwiseInputs};
use crate::optimizer::EvaluationRecord;
use crate::registration::fixed_to_moving;
use crate::transform::AffineTransform;
use crate::volume_io::{apply_bias_field, LandmarkSet, Volume};

#[derive(Clone, Debug, PartialEq)]
pub struct TreReport {
    /// Per-landmark Euclidean error in mm.
    pub errors: Vec<f64>,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

/// Error of each landmark pair after mapping the fixed landmark through `t`.
pub fn compute_mtre(
    fixed: &LandmarkSet,
    moving: &LandmarkSet,
    t: &AffineTransform,
) -> Result<TreReport> {
    if fixed.len() != moving.len() {
        return Err(Error::Data(format!(
            "landmark counts differ: {} fixed, {} moving",
            fixed.len(),
            moving.len()
        )));
    }
    if fixed.is_empty() {
        return Err(Error::Data("no landmarks".into()));
    }
    let errors: Vec<f64> = fixed
        .points
        .iter()
        .zip(&moving.points)
        .map(|(f, m)| {
            let y = t.apply(*f);
            (0..3).map(|a| (y[a] - m[a]).powi(2)).sum::<f64>().sqrt()
        })
        .collect();
    let mean = errors.iter().sum::<f64>() / errors.len() as f64;
    let min = errors.iter().copied().fold(f64::INFINITY, f64::min);
    let max = errors.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(TreReport {
        errors,
        mean,
        min,
        max,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMap {
    /// Per-voxel similarity in `[0, 1]`; 0 where invalid.
    pub values: Volume,
    pub valid: Vec<bool>,
    pub metric: Metric,
    pub sigma_mm: f64,
}

impl SimilarityMap {
    pub fn num_valid(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Mean over valid voxels, or `None` when there are none.
    pub fn mean_valid(&self) -> Option<f64> {
        let n = self.num_valid();
        (n > 0).then(|| {
            let sum: f64 = self
                .values
                .data()
                .iter()
                .zip(&self.valid)
                .filter(|(_, v)| **v)
                .map(|(s, _)| s)
                .sum();
            sum / n as f64
        })
    }

    /// Fraction of valid voxels whose value exceeds `threshold`.
    pub fn fraction_above(&self, threshold: f64) -> f64 {
        let n = self.num_valid();
        if n == 0 {
            return 0.0;
        }
        let above = self
            .values
            .data()
            .iter()
            .zip(&self.valid)
            .filter(|(s, v)| **v && **s > threshold)
            .count();
        above as f64 / n as f64
    }
}

fn same_grid(a: &Volume, b: &Volume) -> Result<()> {
    if a.grid() != b.grid() {
        return Err(Error::Geometry(format!(
            "volumes are on different grids: {:?} vs {:?}",
            a.grid(),
            b.grid()
        )));
    }
    Ok(())
}

/// Per-voxel similarity of two volumes on the same grid. Voxels within one kernel
/// radius of the border are marked invalid.
pub fn similarity_map(
    fixed: &Volume,
    moving: &Volume,
    metric: Metric,
    sigma_mm: f64,
) -> Result<SimilarityMap> {
    same_grid(fixed, moving)?;
    let grid = *fixed.grid();
    let radii = check_scale(&grid, sigma_mm)?;
    let ff = compute_derivative_field(fixed, sigma_mm)?;
    let mf = compute_derivative_field(moving, sigma_mm)?;
    let results: Vec<(f64, bool)> = (0..grid.len())
        .into_par_iter()
        .map(|idx| {
            let c = grid.coords(idx);
            if (0..3).any(|a| c[a] < radii[a] || c[a] + radii[a] >= grid.dims[a]) {
                return (0.0, false);
            }
            let inputs = match metric {
                Metric::Hessian => {
                    PointwiseInputs::hessian(ff.gradient(idx), ff.hessian(idx), mf.hessian(idx))
                }
                Metric::Goa => PointwiseInputs::gradients(ff.gradient(idx), mf.gradient(idx)),
            };
            match metric.evaluate(&inputs) {
                Ok(v) if v.valid => (v.s, true),
                _ => (0.0, false),
            }
        })
        .collect();
    let (values, valid): (Vec<f64>, Vec<bool>) = results.into_iter().unzip();
    Ok(SimilarityMap {
        values: Volume::new(grid, values)?,
        valid,
        metric,
        sigma_mm,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct BiasDelta {
    /// Mean `|S_corrupted − S_original|` over voxels valid in both maps.
    pub mean_abs_delta: f64,
    /// `S_corrupted − S_original`; 0 where either map is invalid.
    pub difference: Volume,
    pub num_voxels: usize,
    pub original: SimilarityMap,
    pub corrupted: SimilarityMap,
}

/// Seed of the bias field applied to the moving image, given the fixed-image seed.
pub fn moving_bias_seed(seed: u64) -> u64 {
    seed ^ 0x9e37_79b9_7f4a_7c15
}

/// Compares similarity maps before and after independent multiplicative bias
/// fields of the given strength are applied to both images.
pub fn bias_robustness_delta(
    fixed: &Volume,
    moving: &Volume,
    metric: Metric,
    sigma_mm: f64,
    strength: f64,
    seed: u64,
) -> Result<BiasDelta> {
    same_grid(fixed, moving)?;
    let fixed_b = apply_bias_field(fixed, strength, seed)?;
    let moving_b = apply_bias_field(moving, strength, moving_bias_seed(seed))?;
    let original = similarity_map(fixed, moving, metric, sigma_mm)?;
    let corrupted = similarity_map(&fixed_b, &moving_b, metric, sigma_mm)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    let diff: Vec<f64> = original
        .values
        .data()
        .iter()
        .zip(corrupted.values.data())
        .zip(original.valid.iter().zip(&corrupted.valid))
        .map(|((o, c), (vo, vc))| {
            if *vo && *vc {
                sum += (c - o).abs();
                n += 1;
                c - o
            } else {
                0.0
            }
        })
        .collect();
    Ok(BiasDelta {
        mean_abs_delta: if n > 0 { sum / n as f64 } else { 0.0 },
        difference: Volume::new(*fixed.grid(), diff)?,
        num_voxels: n,
        original,
        corrupted,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScatterRow {
    pub iteration: usize,
    pub member: usize,
    /// Negated cost.
    pub similarity: f64,
    /// Mean landmark error of the evaluated deformation (mm).
    pub mtre: f64,
}

/// One row per evaluated deformation; `center` is the deformation pivot.
pub fn scatter_rows(
    records: &[EvaluationRecord],
    center: [f64; 3],
    fixed: &LandmarkSet,
    moving: &LandmarkSet,
) -> Result<Vec<ScatterRow>> {
    records
        .iter()
        .map(|r| {
            let t = fixed_to_moving(&r.params, center)?;
            Ok(ScatterRow {
                iteration: r.iteration,
                member: r.member,
                similarity: -r.cost,
                mtre: compute_mtre(fixed, moving, &t)?.mean,
            })
        })
        .collect()
}

pub fn scatter_csv(rows: &[ScatterRow]) -> String {
    let mut out = String::from("iteration,member,similarity,mtre_mm\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.iteration, r.member, r.similarity, r.mtre
        );
    }
    out
}

/// Pearson correlation over pairs where both values are finite.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let pairs: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .map(|(x, y)| (*x, *y))
        .collect();
    let n = pairs.len() as f64;
    if pairs.len() < 2 {
        return None;
    }
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in &pairs {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SliceAxis {
    /// Constant z.
    Axial,
    /// Constant y.
    Coronal,
    /// Constant x.
    Sagittal,
}

impl SliceAxis {
    pub const ALL: [SliceAxis; 3] = [SliceAxis::Axial, SliceAxis::Coronal, SliceAxis::Sagittal];

    pub fn name(&self) -> &'static str {
        match self {
            SliceAxis::Axial => "axial",
            SliceAxis::Coronal => "coronal",
            SliceAxis::Sagittal => "sagittal",
        }
    }
}

/// Binary 8-bit PGM of the central slice, min-max windowed over the slice.
pub fn pgm_slice(v: &Volume, axis: SliceAxis) -> Vec<u8> {
    let [nx, ny, nz] = v.dims();
    let (w, h) = match axis {
        SliceAxis::Axial => (nx, ny),
        SliceAxis::Coronal => (nx, nz),
        SliceAxis::Sagittal => (ny, nz),
    };
    let pixel = |c: usize, r: usize| match axis {
        SliceAxis::Axial => v.at(c, r, nz / 2),
        SliceAxis::Coronal => v.at(c, ny / 2, r),
        SliceAxis::Sagittal => v.at(nx / 2, c, r),
    };
    let values: Vec<f64> = (0..h)
        .rev()
        .flat_map(|r| (0..w).map(move |c| (c, r)))
        .map(|(c, r)| pixel(c, r))
        .collect();
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(values.iter().map(|&x| {
        if span > 0.0 {
            ((x - lo) / span * 255.0).round() as u8
        } else {
            0
        }
    }));
    out
}

/// Writes `<prefix>_axial.pgm`, `<prefix>_coronal.pgm` and `<prefix>_sagittal.pgm`.
pub fn write_pgm_slices(v: &Volume, prefix: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let prefix = prefix.as_ref();
    let stem = prefix
        .file_name()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Parameter(format!("invalid output prefix {}", prefix.display())))?;
    SliceAxis::ALL
        .iter()
        .map(|axis| {
            let path = prefix.with_file_name(format!("{stem}_{}.pgm", axis.name()));
            fs::write(&path, pgm_slice(v, *axis)).map_err(|e| Error::io(&path, e))?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transform::AffineParams;
    use crate::volume_io::{synthesize_pair, Grid, PhantomKind, SynthOptions};

    fn lms(points: Vec<[f64; 3]>) -> LandmarkSet {
        LandmarkSet::new("t", points).unwrap()
    }

    fn blob_pair() -> (Volume, Volume) {
        let p = synthesize_pair(
            PhantomKind::GaussianBlobs,
            [40; 3],
            [1.0; 3],
            5,
            &SynthOptions::default(),
        )
        .unwrap();
        (p.fixed, p.moving)
    }

    #[test]
    fn mtre_basics() {
        let a = lms(vec![[0.0, 0.0, 0.0], [1.0, 2.0, 3.0], [-4.0, 5.0, 6.0]]);
        let id = AffineTransform::identity();
        let r = compute_mtre(&a, &a, &id).unwrap();
        assert_eq!(r.errors, vec![0.0; 3]);
        let shifted = lms(a
            .points
            .iter()
            .map(|p| [p[0] + 1.0, p[1] + 2.0, p[2] + 2.0])
            .collect());
        let r = compute_mtre(&a, &shifted, &id).unwrap();
        assert!(r.errors.iter().all(|e| (e - 3.0).abs() < 1e-12));
        assert!(r.min <= r.mean && r.mean <= r.max);
        let short = lms(vec![[0.0; 3]]);
        assert!(matches!(compute_mtre(&a, &short, &id), Err(Error::Data(_))));
    }

    #[test]
    fn mtre_is_permutation_invariant() {
        let a = lms(vec![[0.0, 1.0, 0.0], [3.0, 2.0, 1.0], [-4.0, 5.0, 6.0]]);
        let b = lms(vec![[0.5, 1.0, 0.0], [3.0, 2.5, 1.0], [-4.0, 5.0, 7.0]]);
        let t = AffineTransform::from_params(
            &AffineParams {
                rotation_deg: [3.0, 0.0, 1.0],
                ..AffineParams::identity()
            },
            [1.0, 1.0, 1.0],
        )
        .unwrap();
        let perm = [2, 0, 1];
        let pa = lms(perm.iter().map(|&i| a.points[i]).collect());
        let pb = lms(perm.iter().map(|&i| b.points[i]).collect());
        let x = compute_mtre(&a, &b, &t).unwrap().mean;
        let y = compute_mtre(&pa, &pb, &t).unwrap().mean;
        assert!((x - y).abs() < 1e-12);
    }

    #[test]
    fn self_similarity_is_one() {
        let (f, _) = blob_pair();
        for metric in [Metric::Hessian, Metric::Goa] {
            let m = similarity_map(&f, &f, metric, 1.5).unwrap();
            assert!(m.num_valid() > 0);
            assert!(m.fraction_above(0.99) > 0.95, "{metric}");
            assert!(m.values.data().iter().all(|s| (0.0..=1.0).contains(s)));
        }
    }

    #[test]
    fn map_border_is_invalid_and_constant_map_is_zero() {
        let (f, m) = blob_pair();
        let map = similarity_map(&f, &m, Metric::Hessian, 1.5).unwrap();
        let g = *f.grid();
        assert!(!map.valid[g.index(0, 20, 20)]);
        assert!(!map.valid[g.index(5, 20, 20)]);
        let c = Volume::filled(g, 1.0).unwrap();
        for metric in [Metric::Hessian, Metric::Goa] {
            let z = similarity_map(&c, &m, metric, 1.5).unwrap();
            assert_eq!(z.num_valid(), 0);
            assert!(z.values.data().iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn grid_mismatch_is_a_geometry_error() {
        let (f, _) = blob_pair();
        let other =
            Volume::filled(Grid::new([40, 40, 41], [1.0; 3], [0.0; 3]).unwrap(), 0.0).unwrap();
        assert!(matches!(
            similarity_map(&f, &other, Metric::Goa, 1.5),
            Err(Error::Geometry(_))
        ));
    }

    #[test]
    fn hessian_map_is_asymmetric() {
        let (f, m) = blob_pair();
        let ab = similarity_map(&f, &m, Metric::Hessian, 1.5).unwrap();
        let ba = similarity_map(&m, &f, Metric::Hessian, 1.5).unwrap();
        assert_ne!(ab.values.data(), ba.values.data());
    }

    #[test]
    fn zero_strength_bias_changes_nothing() {
        let (f, m) = blob_pair();
        let d = bias_robustness_delta(&f, &m, Metric::Hessian, 1.5, 0.0, 3).unwrap();
        assert_eq!(d.mean_abs_delta, 0.0);
        assert!(d.difference.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn scatter_rows_follow_the_trace() {
        let fl = lms(vec![[10.0, 10.0, 10.0], [20.0, 15.0, 12.0]]);
        let center = [16.0; 3];
        let mut p = AffineParams::identity();
        p.translation = [1.0, 0.0, 0.0];
        let ml = lms(fl
            .points
            .iter()
            .map(|x| {
                AffineTransform::from_params(&p, center)
                    .unwrap()
                    .inverse()
                    .unwrap()
                    .apply(*x)
            })
            .collect());
        let records = vec![
            EvaluationRecord {
                iteration: 0,
                member: 0,
                params: AffineParams::identity().to_array().to_vec(),
                cost: -0.5,
            },
            EvaluationRecord {
                iteration: 1,
                member: 0,
                params: p.to_array().to_vec(),
                cost: -0.9,
            },
        ];
        let rows = scatter_rows(&records, center, &fl, &ml).unwrap();
        assert_eq!(rows.len(), 2);
        assert!((rows[0].mtre - 1.0).abs() < 1e-12);
        assert!(rows[1].mtre < 1e-12);
        assert_eq!(rows[1].similarity, 0.9);
        let csv = scatter_csv(&rows);
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.starts_with("iteration,member,similarity,mtre_mm\n"));
    }

    #[test]
    fn pearson_signs() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(pearson(&[1.0, 1.0], &[1.0, 2.0]), None);
    }

    #[test]
    fn pgm_layout() {
        let g = Grid::new([8, 9, 10], [1.0; 3], [0.0; 3]).unwrap();
        let v = Volume::from_fn(g, |x| x[0] + x[1] + x[2]).unwrap();
        let p = pgm_slice(&v, SliceAxis::Coronal);
        let header = b"P5\n8 10\n255\n";
        assert_eq!(&p[..header.len()], header);
        assert_eq!(p.len(), header.len() + 80);
        assert!(p[header.len()..].contains(&255) && p[header.len()..].contains(&0));
        let dir = tempfile::tempdir().unwrap();
        let files = write_pgm_slices(&v, dir.path().join("map")).unwrap();
        assert_eq!(files.len(), 3);
        assert!(files[0].ends_with("map_axial.pgm"));
    }
}
