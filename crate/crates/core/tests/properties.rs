use proptest::prelude::*;
use rand::Rng;

use sphereot::assignment::exact_sphere_w2;
use sphereot::circular::{brute_force_circ_w, circ_w1_level_median, optimal_shift, CircularEmpirical, DEFAULT_TOL};
use sphereot::rng::rng_from_seed;
use sphereot::sliced::{dssw_hat, SlicedConfig};
use sphereot::sphere::{circle_coordinate, rotate_along_great_circle, sample_uniform_sphere, sample_vmf, CircleSample, UnitVector, VmfComponent, VmfMixture};
use sphereot::stats::{ks_two_sample, median};
use sphereot::stiefel::{sample_frame, sample_frames};
use sphereot::weighting::{nonparametric_weights, EnergyKind, EnergySpec};

fn unit_norm_error(v: &UnitVector) -> f64 {
    (v.as_slice().iter().map(|c| c * c).sum::<f64>().sqrt() - 1.0).abs()
}

fn cloud(d: usize, n: usize, seed: u64) -> Vec<UnitVector> {
    sample_uniform_sphere(d, n, &mut rng_from_seed(seed)).unwrap()
}

fn measure(v: &[f64]) -> CircularEmpirical {
    CircularEmpirical::new(v.to_vec()).unwrap()
}

fn atoms(max: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, 1..=max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn constructed_points_have_unit_norm(coords in prop::collection::vec(-10.0f64..10.0, 2..12), theta in -7.0f64..7.0) {
        prop_assume!(coords.iter().map(|c| c * c).sum::<f64>() > 1e-6);
        let d = coords.len();
        let v = UnitVector::new(coords).unwrap();
        prop_assert!(unit_norm_error(&v) < 1e-9);
        let (a, b) = (UnitVector::basis(d, 0).unwrap(), UnitVector::basis(d, 1).unwrap());
        prop_assert!(unit_norm_error(&rotate_along_great_circle(&v, &a, &b, theta).unwrap()) < 1e-9);
        prop_assert!(unit_norm_error(&v.neg()) < 1e-9);
    }

    #[test]
    fn circle_coordinate_inverts_the_angle_map(t in 0.0f64..1.0) {
        let back = circle_coordinate(CircleSample::new(t).to_point()).value();
        let gap = (back - t).abs();
        prop_assert!(gap.min(1.0 - gap) < 1e-9);
    }

    #[test]
    fn mixture_density_ignores_component_order(seed in any::<u64>(), k in 2usize..6) {
        let mut rng = rng_from_seed(seed);
        let comps: Vec<VmfComponent> = sample_uniform_sphere(3, k, &mut rng)
            .unwrap()
            .into_iter()
            .map(|m| VmfComponent::new(m, rng.random_range(0.0..60.0)).unwrap())
            .collect();
        let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let mix = VmfMixture::new(comps.clone(), weights.clone()).unwrap();
        let rev = VmfMixture::new(comps.into_iter().rev().collect(), weights.into_iter().rev().collect()).unwrap();
        for x in sample_uniform_sphere(3, 10, &mut rng).unwrap() {
            let (a, b) = (mix.log_density(&x).unwrap(), rev.log_density(&x).unwrap());
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn circular_distance_is_rotation_invariant_and_symmetric(x in atoms(10), y in atoms(10), delta in 0.0f64..1.0, p in 1u32..=2) {
        let (mu, nu) = (measure(&x), measure(&y));
        let base = optimal_shift(&mu, &nu, p, DEFAULT_TOL).unwrap().value;
        let shifted = optimal_shift(
            &measure(&x.iter().map(|v| v + delta).collect::<Vec<_>>()),
            &measure(&y.iter().map(|v| v + delta).collect::<Vec<_>>()),
            p,
            DEFAULT_TOL,
        )
        .unwrap()
        .value;
        prop_assert!((base - shifted).abs() < 1e-9);
        prop_assert_eq!(base, optimal_shift(&nu, &mu, p, DEFAULT_TOL).unwrap().value);
        prop_assert!(base <= 0.5f64.powi(p as i32) + 1e-12);
        prop_assert!(base >= 0.0);
    }

    #[test]
    fn circular_w1_triangle_inequality(a in atoms(8), b in atoms(8), c in atoms(8)) {
        let (a, b, c) = (measure(&a), measure(&b), measure(&c));
        let w = |u: &CircularEmpirical, v: &CircularEmpirical| circ_w1_level_median(u, v).unwrap();
        prop_assert!(w(&a, &c) <= w(&a, &b) + w(&b, &c) + 1e-9);
    }

    #[test]
    fn solver_matches_grid_brute_force((x, y) in (1usize..=8).prop_flat_map(|n| (prop::collection::vec(0.0f64..1.0, n), prop::collection::vec(0.0f64..1.0, n))), p in 1u32..=2) {
        let (mu, nu) = (measure(&x), measure(&y));
        let grid = 100_000;
        let bf = brute_force_circ_w(&mu, &nu, p, grid).unwrap();
        let solved = optimal_shift(&mu, &nu, p, DEFAULT_TOL).unwrap().value;
        prop_assert!((solved - bf).abs() <= 2.0 / grid as f64 + 1e-8);
    }

    #[test]
    fn weights_are_a_probability_vector(d in prop::collection::vec(0.0f64..5.0, 1..40), kind in 0usize..3) {
        let kind = [EnergyKind::Exp, EnergyKind::Identity, EnergyKind::Poly][kind];
        let (w, _) = nonparametric_weights(&d, kind).unwrap();
        prop_assert!(w.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert!((w.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn scaling_keeps_weight_order(d in prop::collection::vec(0.01f64..5.0, 2..30), c in 0.01f64..100.0, kind in 0usize..2) {
        let kind = [EnergyKind::Identity, EnergyKind::Poly][kind];
        let (w, _) = nonparametric_weights(&d, kind).unwrap();
        let scaled: Vec<f64> = d.iter().map(|v| v * c).collect();
        let (ws, _) = nonparametric_weights(&scaled, kind).unwrap();
        for i in 0..d.len() {
            for j in 0..d.len() {
                if w.as_slice()[i] < w.as_slice()[j] {
                    prop_assert!(ws.as_slice()[i] <= ws.as_slice()[j]);
                }
            }
        }
    }

    #[test]
    fn weight_grows_with_its_distance(d in prop::collection::vec(0.0f64..5.0, 2..30), idx in any::<prop::sample::Index>(), bump in 0.0f64..3.0, kind in 0usize..3) {
        let kind = [EnergyKind::Exp, EnergyKind::Identity, EnergyKind::Poly][kind];
        prop_assume!(d.iter().any(|v| *v > 0.0));
        let i = idx.index(d.len());
        let (w, _) = nonparametric_weights(&d, kind).unwrap();
        let mut up = d.clone();
        up[i] += bump;
        let (wu, _) = nonparametric_weights(&up, kind).unwrap();
        prop_assert!(wu.as_slice()[i] >= w.as_slice()[i] - 1e-15);
    }

    #[test]
    fn exact_w2_is_a_metric_on_sample_sets(seed in any::<u64>()) {
        let (a, b, c) = (cloud(3, 16, seed), cloud(3, 16, seed ^ 1), cloud(3, 16, seed ^ 2));
        let w = |u: &[UnitVector], v: &[UnitVector]| exact_sphere_w2(u, v).unwrap();
        prop_assert!((w(&a, &b) - w(&b, &a)).abs() < 1e-9);
        prop_assert!(w(&a, &a) < 1e-9);
        let mut perm = a.clone();
        perm.reverse();
        prop_assert!(w(&a, &perm) < 1e-9);
        prop_assert!(w(&a, &c) <= w(&a, &b) + w(&b, &c) + 1e-9);
    }
}

#[test]
fn frames_stay_orthonormal() {
    let mut rng = rng_from_seed(3);
    let worst = (0..10_000).map(|i| sample_frame(2 + i % 60, &mut rng).unwrap().orthonormality_error()).fold(0.0, f64::max);
    assert!(worst <= 1e-9, "{worst}");
}

/// Inner products of each sample with fixed random directions.
fn projections(points: &[UnitVector], dirs: &[UnitVector]) -> Vec<Vec<f64>> {
    dirs.iter().map(|u| points.iter().map(|p| p.dot(u)).collect()).collect()
}

#[test]
fn zero_concentration_vmf_is_uniform() {
    let d = 4;
    let dirs = cloud(d, 5, 99);
    let vmf = sample_vmf(&VmfComponent::new(UnitVector::basis(d, 0).unwrap(), 0.0).unwrap(), 5000, &mut rng_from_seed(1)).unwrap();
    let uni = cloud(d, 5000, 2);
    for (a, b) in projections(&vmf, &dirs).iter().zip(projections(&uni, &dirs).iter()) {
        assert!(ks_two_sample(a, b).p_value > 0.01);
    }
}

#[test]
fn rotated_frames_have_the_same_law() {
    let d = 5;
    let frames = sample_frames(d, 5000, 4).unwrap();
    let rotated = sample_frames(d, 5000, 5).unwrap();
    let (a, b) = (UnitVector::basis(d, 0).unwrap(), UnitVector::basis(d, 3).unwrap());
    let dirs = cloud(d, 5, 6);
    let first = |batch: &[sphereot::sphere::StiefelFrame], rotate: bool| -> Vec<UnitVector> {
        batch
            .iter()
            .map(|f| {
                let u = UnitVector::new(f.first().to_vec()).unwrap();
                if rotate {
                    rotate_along_great_circle(&u, &a, &b, 1.1).unwrap()
                } else {
                    u
                }
            })
            .collect()
    };
    let plain = projections(&first(&frames.frames, false), &dirs);
    let turned = projections(&first(&rotated.frames, true), &dirs);
    for (x, y) in plain.iter().zip(&turned) {
        assert!(ks_two_sample(x, y).p_value > 0.01);
    }
}

#[test]
fn same_law_distance_shrinks_with_sample_size() {
    let comp = VmfComponent::new(UnitVector::basis(3, 2).unwrap(), 10.0).unwrap();
    let cfg = |seed| SlicedConfig { directions: 50, seed, energy: EnergySpec::new(EnergyKind::Exp), ..SlicedConfig::default() };
    let medians: Vec<f64> = [100usize, 1000, 4000]
        .iter()
        .map(|&n| {
            let values: Vec<f64> = (0..20u64)
                .map(|s| {
                    let x = sample_vmf(&comp, n, &mut rng_from_seed(2 * s)).unwrap();
                    let y = sample_vmf(&comp, n, &mut rng_from_seed(2 * s + 1)).unwrap();
                    dssw_hat(&x, &y, &cfg(s)).unwrap().value
                })
                .collect();
            median(&values)
        })
        .collect();
    assert!(medians.windows(2).all(|w| w[1] < w[0]), "{medians:?}");
}
