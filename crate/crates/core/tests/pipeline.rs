//! End-to-end behaviour of registration and evaluation on synthetic pairs.

use hessreg::evaluation::{
    bias_robustness_delta, compute_mtre, pearson, scatter_rows, similarity_map,
};
use hessreg::metrics::Metric;
use hessreg::registration::{cost, preprocess, register, RegistrationConfig};
use hessreg::transform::{AffineParams, AffineTransform};
use hessreg::volume_io::{synthesize_pair, Grid, PhantomKind, SynthOptions, SyntheticPair};

const DIMS: [usize; 3] = [48; 3];

fn truth() -> AffineParams {
    AffineParams {
        translation: [4.0, -3.0, 2.0],
        rotation_deg: [2.0, -1.0, 3.0],
        ..AffineParams::identity()
    }
}

fn warped_pair(kind: PhantomKind, seed: u64) -> SyntheticPair {
    let grid = Grid::new(DIMS, [1.0; 3], [0.0; 3]).unwrap();
    let opts = SynthOptions {
        deformation: Some(AffineTransform::from_params(&truth(), grid.center()).unwrap()),
        ..SynthOptions::default()
    };
    synthesize_pair(kind, DIMS, [1.0; 3], seed, &opts).unwrap()
}

#[test]
fn ground_truth_scores_better_than_identity() {
    for kind in [PhantomKind::GaussianBlobs, PhantomKind::SheppLoganLike] {
        let pair = warped_pair(kind, 11);
        for metric in [Metric::Hessian, Metric::Goa] {
            let cfg = RegistrationConfig {
                metric,
                num_samples: 3000,
                ..RegistrationConfig::default()
            };
            let state = preprocess(&pair.fixed, &pair.moving, &cfg).unwrap();
            let at_truth = cost(&truth().to_array(), &state);
            let at_identity = cost(&AffineParams::identity().to_array(), &state);
            assert!(
                at_truth < at_identity,
                "{kind} {metric}: {at_truth} vs {at_identity}"
            );
        }
    }
}

#[test]
fn registration_recovers_known_warp_and_trace_tracks_error() {
    let pair = warped_pair(PhantomKind::GaussianBlobs, 11);
    let r = register(&pair.fixed, &pair.moving, &RegistrationConfig::default()).unwrap();
    let tre = compute_mtre(&pair.fixed_landmarks, &pair.moving_landmarks, &r.transform).unwrap();
    assert!(tre.mean < 1.0, "mTRE {}", tre.mean);

    let rows = scatter_rows(
        &r.trace.records,
        r.center,
        &pair.fixed_landmarks,
        &pair.moving_landmarks,
    )
    .unwrap();
    assert_eq!(rows.len(), r.trace.num_evaluations());
    let best = rows
        .iter()
        .map(|x| x.similarity)
        .fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(best, -r.trace.best_cost);
    let sims: Vec<f64> = rows.iter().map(|x| x.similarity).collect();
    let neg_tre: Vec<f64> = rows.iter().map(|x| -x.mtre).collect();
    assert!(pearson(&sims, &neg_tre).unwrap() > 0.0);
}

#[test]
fn registration_is_deterministic() {
    let pair = warped_pair(PhantomKind::GaussianBlobs, 4);
    let mut cfg = RegistrationConfig {
        num_samples: 1000,
        ..RegistrationConfig::default()
    };
    cfg.de.max_iterations = 10;
    let a = register(&pair.fixed, &pair.moving, &cfg).unwrap();
    let b = register(&pair.fixed, &pair.moving, &cfg).unwrap();
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.record().unwrap().to_text(), b.record().unwrap().to_text());
}

#[test]
fn bias_delta_grows_with_strength() {
    let pair = synthesize_pair(
        PhantomKind::GaussianBlobs,
        DIMS,
        [1.0; 3],
        8,
        &SynthOptions::default(),
    )
    .unwrap();
    for metric in [Metric::Hessian, Metric::Goa] {
        let deltas: Vec<f64> = [0.1, 0.2, 0.4]
            .iter()
            .map(|&s| {
                bias_robustness_delta(&pair.fixed, &pair.moving, metric, 1.5, s, 8)
                    .unwrap()
                    .mean_abs_delta
            })
            .collect();
        assert!(
            deltas.windows(2).all(|w| w[0] <= w[1]),
            "{metric}: {deltas:?}"
        );
    }
}

#[test]
fn similarity_map_of_dependent_pair_is_high() {
    let pair = synthesize_pair(
        PhantomKind::SheppLoganLike,
        DIMS,
        [1.0; 3],
        2,
        &SynthOptions::default(),
    )
    .unwrap();
    let map = similarity_map(&pair.fixed, &pair.moving, Metric::Hessian, 1.5).unwrap();
    assert!(map.mean_valid().unwrap() > 0.9);
    assert!(map.values.data().iter().all(|v| (0.0..=1.0).contains(v)));
    assert_eq!(map.values.grid(), pair.fixed.grid());
}
