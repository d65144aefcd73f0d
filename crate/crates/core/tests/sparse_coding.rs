mod support;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use toothsparse::bpdn::{solve_bpdn, BpdnConfig, Epsilon, SparseCode};

use support::lp::l1_equality_optimum;

fn random_instance(rng: &mut ChaCha8Rng, m: usize, n: usize) -> (DMatrix<f64>, DVector<f64>) {
    let d = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
    let a = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
    (d, a)
}

fn rows(d: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..d.nrows()).map(|i| d.row(i).iter().copied().collect()).collect()
}

fn exact() -> BpdnConfig {
    BpdnConfig {
        epsilon: Epsilon::Absolute(0.0),
        ..Default::default()
    }
}

#[test]
fn lp_oracle_sanity() {
    // min |c1| + |c2| s.t. c1 + c2 = 1, c1 - c2 = 0  ->  c = (0.5, 0.5)
    let (obj, c) = l1_equality_optimum(&[vec![1.0, 1.0], vec![1.0, -1.0]], &[1.0, 0.0]).unwrap();
    assert!((obj - 1.0).abs() < 1e-12);
    assert!((c[0] - 0.5).abs() < 1e-12 && (c[1] - 0.5).abs() < 1e-12);
}

#[test]
fn recovers_scaled_unit_column() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut d = DMatrix::from_fn(8, 20, |_, _| rng.random_range(-1.0..1.0));
    for mut col in d.column_iter_mut() {
        let norm = col.norm();
        col /= norm;
    }
    let a = d.column(5) * 2.0;
    let cfg = BpdnConfig {
        epsilon: Epsilon::Absolute(1e-9),
        ..Default::default()
    };
    let c = solve_bpdn(&d, &a, &cfg).unwrap();
    for (j, v) in c.coefficients.iter().enumerate() {
        let want = if j == 5 { 2.0 } else { 0.0 };
        assert!((v - want).abs() < 1e-4, "coefficient {j} = {v}");
    }
    let (oracle, _) = l1_equality_optimum(&rows(&d), a.as_slice()).unwrap();
    assert!((c.l1_norm - oracle).abs() <= 1e-6 * oracle, "{} vs {oracle}", c.l1_norm);
}

#[test]
fn matches_lp_oracle_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..40 {
        let m = rng.random_range(2..=12);
        let n = rng.random_range(m..=25);
        let (d, a) = random_instance(&mut rng, m, n);
        let c = solve_bpdn(&d, &a, &exact()).unwrap();
        let (oracle, _) = l1_equality_optimum(&rows(&d), a.as_slice()).unwrap();
        assert!(c.converged, "trial {trial} did not converge");
        assert!(c.residual_norm <= SparseCode::slack(0.0), "trial {trial}");
        assert!(
            (c.l1_norm - oracle).abs() <= 1e-4 * oracle,
            "trial {trial}: {} vs {oracle}",
            c.l1_norm
        );
    }
}

#[test]
fn scaling_equivariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..10 {
        let (d, a) = random_instance(&mut rng, 6, 15);
        let eps = 0.1 * a.norm();
        let base = solve_bpdn(
            &d,
            &a,
            &BpdnConfig {
                epsilon: Epsilon::Absolute(eps),
                ..Default::default()
            },
        )
        .unwrap();
        for s in [0.01, 3.0, 250.0] {
            let scaled = solve_bpdn(
                &d,
                &(&a * s),
                &BpdnConfig {
                    epsilon: Epsilon::Absolute(eps * s),
                    ..Default::default()
                },
            )
            .unwrap();
            let diff = (scaled.coefficient_vector() - base.coefficient_vector() * s).norm();
            assert!(diff <= 1e-8 * s * base.coefficient_vector().norm(), "s = {s}: {diff}");
        }
    }
}

#[test]
fn l1_norm_non_increasing_in_epsilon() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..5 {
        let (d, a) = random_instance(&mut rng, 10, 22);
        let mut last = f64::INFINITY;
        for k in 0..=10 {
            let eps = k as f64 * 0.1 * a.norm();
            let c = solve_bpdn(
                &d,
                &a,
                &BpdnConfig {
                    epsilon: Epsilon::Absolute(eps),
                    ..Default::default()
                },
            )
            .unwrap();
            assert!(c.residual_norm <= eps + SparseCode::slack(eps));
            assert!(c.l1_norm <= last + 1e-7 * last.min(1e6), "eps {eps}: {} > {last}", c.l1_norm);
            last = c.l1_norm;
        }
        assert_eq!(last, 0.0);
    }
}

#[test]
fn overdetermined_in_span() {
    // tall dictionary, target exactly in the span of two columns
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let d = DMatrix::from_fn(300, 40, |_, _| rng.random_range(-1.0..1.0));
    let a = d.column(3) * 0.7 - d.column(17) * 1.3;
    let c = solve_bpdn(
        &d,
        &a,
        &BpdnConfig {
            epsilon: Epsilon::Relative(1e-6),
            ..Default::default()
        },
    )
    .unwrap();
    assert!(c.converged);
    assert!((c.coefficients[3] - 0.7).abs() < 1e-5);
    assert!((c.coefficients[17] + 1.3).abs() < 1e-5);
}
