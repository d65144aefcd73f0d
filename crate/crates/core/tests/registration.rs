use nalgebra::Vector3;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use toothsparse::correspondence::{align_model_to_template, correspond_tooth, DentalModel};
use toothsparse::cpd::{cpd_nonrigid, CpdConfig};
use toothsparse::geometry::{apply_transform, chamfer_mean, procrustes_rigid, rms_residual};
use toothsparse::kdtree::NeighborIndex;
use toothsparse::synth::{generate_template, SynthConfig};
use toothsparse::{Point3, PointCloud, RigidTransform, ToothLabel};

fn random_cloud(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> PointCloud {
    PointCloud::new(
        (0..n)
            .map(|_| {
                Point3::new(
                    rng.random_range(-scale..scale),
                    rng.random_range(-scale..scale),
                    rng.random_range(-scale..scale),
                )
            })
            .collect(),
    )
    .unwrap()
}

fn random_motion(rng: &mut ChaCha8Rng) -> RigidTransform {
    let axis = Vector3::new(
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
    );
    let shift = Vector3::new(
        rng.random_range(-50.0..50.0),
        rng.random_range(-50.0..50.0),
        rng.random_range(-50.0..50.0),
    );
    RigidTransform::from_axis_angle(axis, rng.random_range(-3.1..3.1), shift)
}

fn mean_nn(from: &PointCloud, to: &PointCloud) -> f64 {
    let index = NeighborIndex::build(to);
    from.points().iter().map(|p| index.nearest(p).1).sum::<f64>() / from.len() as f64
}

fn assert_monotone(trace: &[f64]) {
    for w in trace.windows(2) {
        assert!(w[1] <= w[0] + 1e-8 * w[0].abs().max(1.0), "objective rose: {w:?}");
    }
}

#[test]
fn cpd_follows_a_translation() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let source = random_cloud(&mut rng, 100, 5.0);
    let shift = Vector3::new(5.0, 0.0, 0.0);
    let target = source.map_points(|p| p + shift).unwrap();
    let cfg = CpdConfig {
        lambda: 0.1,
        ..CpdConfig::default()
    };
    let r = cpd_nonrigid(&source, &target, &cfg).unwrap();
    let err = r
        .deformed
        .points()
        .iter()
        .zip(target.points())
        .map(|(p, q)| (p - q).norm())
        .sum::<f64>()
        / 100.0;
    assert!(err <= 0.1, "mean error {err}");
    assert_monotone(&r.objective_trace);
}

#[test]
fn cpd_follows_a_sinusoidal_bend() {
    let grid: Vec<Point3> = (0..20)
        .flat_map(|i| (0..20).map(move |j| Point3::new(i as f64, j as f64, 0.0)))
        .collect();
    let source = PointCloud::new(grid).unwrap();
    let target = source
        .map_points(|p| Point3::new(p.x, p.y, (p.x / 5.0).sin()))
        .unwrap();
    let r = cpd_nonrigid(&source, &target, &CpdConfig::default()).unwrap();
    let err = mean_nn(&r.deformed, &target);
    let before = mean_nn(&source, &target);
    assert!(err <= 0.05 * target.diameter(), "{err} vs diameter {}", target.diameter());
    assert!(err < 0.5 * before, "{err} vs undeformed {before}");
    assert_monotone(&r.objective_trace);
}

#[test]
fn cpd_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let a = random_cloud(&mut rng, 60, 3.0);
    let b = random_cloud(&mut rng, 80, 3.0);
    let x = cpd_nonrigid(&a, &b, &CpdConfig::default()).unwrap();
    let y = cpd_nonrigid(&a, &b, &CpdConfig::default()).unwrap();
    assert_eq!(x.deformed, y.deformed);
    assert_eq!(x.deformed.len(), 60);
}

#[test]
fn procrustes_recovers_random_motions() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let source = random_cloud(&mut rng, 12, 10.0);
        let t = random_motion(&mut rng);
        let target = apply_transform(&t, &source);
        let fit = procrustes_rigid(&source, &target).unwrap();
        assert!(rms_residual(&fit, &source, &target) <= 1e-9);
        assert!((fit.rotation() - t.rotation()).amax() < 1e-9);
    }
}

#[test]
fn procrustes_beats_a_rotation_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let source = random_cloud(&mut rng, 5, 4.0);
    let target = random_cloud(&mut rng, 5, 4.0);
    let fit = procrustes_rigid(&source, &target).unwrap();
    let best = rms_residual(&fit, &source, &target);

    let cs = source.centroid();
    let ct = target.centroid();
    let step = 2f64.to_radians();
    let mut grid_best = f64::INFINITY;
    for a in 0..180 {
        for b in 0..90 {
            for c in 0..180 {
                let r = nalgebra::Rotation3::from_euler_angles(
                    a as f64 * step,
                    b as f64 * step - std::f64::consts::FRAC_PI_2,
                    c as f64 * step,
                );
                let sq: f64 = source
                    .points()
                    .iter()
                    .zip(target.points())
                    .map(|(p, q)| ((r * (p - cs)) - (q - ct)).norm_squared())
                    .sum();
                grid_best = grid_best.min(sq);
            }
        }
    }
    let grid_rms = (grid_best / 5.0).sqrt();
    assert!(best <= grid_rms + 1e-12, "{best} vs grid {grid_rms}");
}

#[test]
fn nearest_neighbour_matches_linear_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let cloud = random_cloud(&mut rng, 1000, 10.0);
    let index = NeighborIndex::build(&cloud);
    for _ in 0..100 {
        let q = Point3::new(
            rng.random_range(-12.0..12.0),
            rng.random_range(-12.0..12.0),
            rng.random_range(-12.0..12.0),
        );
        let (mut bi, mut bd) = (0, f64::INFINITY);
        for (i, p) in cloud.points().iter().enumerate() {
            let d = (p - q).norm();
            if d < bd {
                bi = i;
                bd = d;
            }
        }
        assert_eq!(index.nearest(&q), (bi, bd));
    }
}

#[test]
fn centroid_alignment_under_shape_noise() {
    let template = generate_template(&SynthConfig::default().with_point_scale(0.2)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut total = 0.0;
    for _ in 0..100 {
        let motion = random_motion(&mut rng);
        let teeth = template
            .teeth()
            .iter()
            .map(|(l, c)| {
                let noisy = c
                    .map_points(|p| {
                        p + Vector3::new(
                            rng.sample::<f64, _>(StandardNormal),
                            rng.sample::<f64, _>(StandardNormal),
                            rng.sample::<f64, _>(StandardNormal),
                        ) * 0.1
                    })
                    .unwrap();
                (*l, apply_transform(&motion, &noisy))
            })
            .collect();
        let model = DentalModel::new("m", teeth).unwrap();
        let labels = model.labels();
        let fit = align_model_to_template(&model, &template, &labels).unwrap();
        let sq: f64 = labels
            .iter()
            .map(|l| {
                let c = fit.apply_point(&model.tooth(*l).unwrap().centroid());
                (c - template.tooth(*l).centroid()).norm_squared()
            })
            .sum();
        total += (sq / labels.len() as f64).sqrt();
    }
    assert!(total / 100.0 <= 0.1, "{}", total / 100.0);
}

#[test]
fn correspondence_on_a_denser_sampling() {
    // the template samples plus four times as many other samples of the same surface
    let coarse = generate_template(&SynthConfig::default().with_uniform_points(60)).unwrap();
    let extra = generate_template(&SynthConfig::default().with_uniform_points(240)).unwrap();
    let label = ToothLabel::new(36).unwrap();
    let t = coarse.tooth(label);
    let mut pts = extra.tooth(label).points().to_vec();
    pts.extend_from_slice(t.points());
    let dense = PointCloud::new(pts).unwrap();
    let out = correspond_tooth(t, &dense, &CpdConfig::default()).unwrap();
    assert_eq!(out.len(), t.len());
    let tol = 0.02 * t.diameter();
    for (p, q) in out.points().iter().zip(t.points()) {
        assert!((p - q).norm() <= tol, "{} > {tol}", (p - q).norm());
    }
    let members: std::collections::HashSet<[u64; 3]> = dense
        .points()
        .iter()
        .map(|p| [p.x.to_bits(), p.y.to_bits(), p.z.to_bits()])
        .collect();
    assert!(out
        .points()
        .iter()
        .all(|p| members.contains(&[p.x.to_bits(), p.y.to_bits(), p.z.to_bits()])));
}

#[test]
fn correspondence_ignores_a_far_outlier() {
    let template = generate_template(&SynthConfig::default().with_uniform_points(80)).unwrap();
    let label = ToothLabel::new(13).unwrap();
    let t = template.tooth(label);
    let mut pts = t.points().to_vec();
    let far = t.centroid() + Vector3::new(20.0 * t.diameter(), 0.0, 0.0);
    pts.push(far);
    let subject = PointCloud::new(pts).unwrap();
    let out = correspond_tooth(t, &subject, &CpdConfig::default()).unwrap();
    assert!(out.points().iter().all(|p| *p != far));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn chamfer_is_symmetric_and_rigid_invariant(seed in any::<u64>(), n in 1usize..40, m in 1usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_cloud(&mut rng, n, 5.0);
        let b = random_cloud(&mut rng, m, 5.0);
        let t = random_motion(&mut rng);
        let d = chamfer_mean(&a, &b);
        prop_assert!((d - chamfer_mean(&b, &a)).abs() <= 1e-12);
        prop_assert_eq!(chamfer_mean(&a, &a), 0.0);
        let moved = chamfer_mean(&apply_transform(&t, &a), &apply_transform(&t, &b));
        prop_assert!((d - moved).abs() <= 1e-9);
    }

    #[test]
    fn procrustes_commutes_with_a_common_motion(seed in any::<u64>(), n in 4usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let source = random_cloud(&mut rng, n, 5.0);
        let target = random_cloud(&mut rng, n, 5.0);
        let t = random_motion(&mut rng);
        let fit = procrustes_rigid(&source, &target).unwrap();
        let ms = apply_transform(&t, &source);
        let mt = apply_transform(&t, &target);
        let moved = procrustes_rigid(&ms, &mt).unwrap();
        let r0 = rms_residual(&fit, &source, &target);
        prop_assert!((r0 - rms_residual(&moved, &ms, &mt)).abs() <= 1e-9);
        // moved == t ∘ fit ∘ t⁻¹
        let expected = t.compose(&fit).compose(&t.inverse());
        prop_assert!((moved.rotation() - expected.rotation()).amax() <= 1e-9);
        prop_assert!((moved.translation() - expected.translation()).amax() <= 1e-7);
    }

    #[test]
    fn cpd_keeps_cardinality(seed in any::<u64>(), n in 1usize..30, m in 1usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_cloud(&mut rng, n, 2.0);
        let b = random_cloud(&mut rng, m, 2.0);
        let r = cpd_nonrigid(&a, &b, &CpdConfig { max_iterations: 20, ..CpdConfig::default() });
        if let Ok(r) = r {
            prop_assert_eq!(r.deformed.len(), n);
        }
    }
}
