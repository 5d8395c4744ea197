//! File round trips for volumes, landmarks, transforms and traces.

use hessreg::optimizer::{load_trace_csv, minimize, DeConfig};
use hessreg::transform::{AffineParams, TransformRecord};
use hessreg::volume_io::{
    load_landmarks, load_volume, load_volume_with, save_landmarks, save_volume, Grid, LandmarkSet,
    LoadOptions, Volume,
};
use hessreg::Error;

fn sample_volume() -> Volume {
    let g = Grid::new([9, 10, 11], [0.5, 0.75, 1.25], [-3.0, 4.5, 10.0]).unwrap();
    Volume::from_fn(g, |x| (0.3 * x[0]).sin() + 0.1 * x[1] * x[2]).unwrap()
}

fn as_f32(v: &Volume) -> Vec<f64> {
    v.data().iter().map(|&x| x as f32 as f64).collect()
}

#[test]
fn raw_round_trip_is_float32_exact() {
    let dir = tempfile::tempdir().unwrap();
    let v = sample_volume();
    let path = dir.path().join("vol.raw");
    save_volume(&v, &path).unwrap();
    assert!(dir.path().join("vol.json").exists());
    let back = load_volume(&path).unwrap();
    assert_eq!(back.grid(), v.grid());
    assert_eq!(back.data(), as_f32(&v).as_slice());
    let via_sidecar = load_volume(dir.path().join("vol.json")).unwrap();
    assert_eq!(via_sidecar, back);
}

#[test]
fn nifti_round_trip_is_float32_exact() {
    let dir = tempfile::tempdir().unwrap();
    let v = sample_volume();
    let path = dir.path().join("vol.nii");
    save_volume(&v, &path).unwrap();
    let back = load_volume(&path).unwrap();
    assert_eq!(back.dims(), v.dims());
    assert_eq!(back.data(), as_f32(&v).as_slice());
    for a in 0..3 {
        assert_eq!(back.spacing()[a], v.spacing()[a] as f32 as f64);
        assert_eq!(back.origin()[a], v.origin()[a] as f32 as f64);
    }
}

#[test]
fn loading_with_normalization() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("vol.nii");
    save_volume(&sample_volume(), &path).unwrap();
    let v = load_volume_with(&path, LoadOptions::default()).unwrap();
    let n = v.data().len() as f64;
    let mean = v.data().iter().sum::<f64>() / n;
    let var = v.data().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    assert!(mean.abs() < 1e-9 && (var - 1.0).abs() < 1e-9);
    let raw = load_volume_with(&path, LoadOptions { normalize: false }).unwrap();
    assert_eq!(raw, load_volume(&path).unwrap());
}

#[test]
fn format_errors() {
    let dir = tempfile::tempdir().unwrap();
    let v = sample_volume();
    assert!(matches!(
        save_volume(&v, dir.path().join("x.nii.gz")),
        Err(Error::Format(_))
    ));
    assert!(matches!(
        save_volume(&v, dir.path().join("x.mha")),
        Err(Error::Format(_))
    ));
    assert!(matches!(
        load_volume(dir.path().join("missing.nii")),
        Err(Error::Io { .. })
    ));
    let bad = dir.path().join("bad.nii");
    std::fs::write(&bad, [0u8; 100]).unwrap();
    assert!(matches!(load_volume(&bad), Err(Error::Format(_))));
}

#[test]
fn landmark_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let set = LandmarkSet::new(
        "pts",
        vec![[1.0, 2.5, -3.0], [0.1, 0.2, 0.30000000000000004]],
    )
    .unwrap();
    let path = dir.path().join("pts.txt");
    save_landmarks(&set, &path).unwrap();
    let back = load_landmarks(&path).unwrap();
    assert_eq!(back.points, set.points);
}

#[test]
fn transform_record_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let params = AffineParams {
        translation: [1.5, -2.25, 0.125],
        rotation_deg: [3.0, -4.0, 1.0],
        shear: [0.01, -0.02, 0.03],
        scale: [1.01, 0.99, 1.04],
    };
    let rec = TransformRecord::from_deformation(params, [31.5, 31.5, 31.5]).unwrap();
    let path = dir.path().join("T.txt");
    rec.save(&path).unwrap();
    let back = TransformRecord::load(&path).unwrap();
    assert_eq!(back, rec);
}

#[test]
fn trace_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = DeConfig {
        bounds: vec![(-1.0, 1.0); 3],
        max_iterations: 5,
        ..DeConfig::default()
    };
    let t = minimize(|x: &[f64]| x.iter().map(|v| (v - 0.1).powi(2)).sum(), &cfg).unwrap();
    let path = dir.path().join("trace.csv");
    t.save_csv(&path, Some(&["a", "b", "c"])).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("iteration,member,a,b,c,cost\n"));
    assert_eq!(load_trace_csv(&path).unwrap(), t.records);
}
