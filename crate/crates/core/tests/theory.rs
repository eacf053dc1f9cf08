use rand::Rng;

use umix::rng::RngStream;
use umix::theory::{
    center_weighted, check_mixup_regularizer, covariance_rank, random_glm_problem, sigmoid,
};

#[test]
fn regularizer_is_nonnegative() {
    for seed in 0..8 {
        let (theta, data) = random_glm_problem(4, 60, 0.3 + 0.2 * seed as f64, seed).unwrap();
        let mut rng = RngStream::new(seed).named("weights");
        let w: Vec<f64> = (0..data.len())
            .map(|_| rng.random_range(0.1..5.0))
            .collect();
        let centered = center_weighted(&data, &w).unwrap();
        let c = check_mixup_regularizer(&theta, &centered, &w, 4.0, 4.0, 500, seed).unwrap();
        assert!(c.regularizer >= 0.0, "seed {seed}: {}", c.regularizer);
        for x in centered.rows() {
            let z: f64 = theta.iter().zip(x).map(|(a, b)| a * b).sum();
            let a2 = sigmoid(z) * (1.0 - sigmoid(z));
            assert!(a2 > 0.0 && a2 <= 0.25);
        }
    }
}

#[test]
fn doubling_samples_shrinks_the_error_by_root_two() {
    let (theta, data) = random_glm_problem(5, 100, 0.5, 3).unwrap();
    let unit = vec![1.0; data.len()];
    let run = |m: usize| -> (f64, f64) {
        let reps: Vec<_> = (0..10)
            .map(|r| check_mixup_regularizer(&theta, &data, &unit, 4.0, 4.0, m, 100 + r).unwrap())
            .collect();
        let se = reps.iter().map(|c| c.mc_std_error).sum::<f64>() / 10.0;
        let mean = reps.iter().map(|c| c.mc_mixup_loss).sum::<f64>() / 10.0;
        let spread = (reps
            .iter()
            .map(|c| (c.mc_mixup_loss - mean).powi(2))
            .sum::<f64>()
            / 9.0)
            .sqrt();
        (se, spread)
    };
    let (se1, spread1) = run(8192);
    let (se2, spread2) = run(16384);
    let ratio = se1 / se2;
    assert!((ratio - 2f64.sqrt()).abs() < 0.1, "ratio {ratio}");
    // the reported error matches the spread across repetitions
    for (se, spread) in [(se1, spread1), (se2, spread2)] {
        assert!(
            spread / se > 0.4 && spread / se < 2.0,
            "se {se} spread {spread}"
        );
    }
}

#[test]
fn appending_a_zero_column_keeps_the_rank() {
    let (_, data) = random_glm_problem(3, 50, 0.5, 9).unwrap();
    let groups: Vec<usize> = (0..data.len()).map(|i| i % 2).collect();
    let grouped = data.with_groups(groups, 2).unwrap();
    let before = covariance_rank(&grouped, &[1.0, 3.0], 1e-9).unwrap();
    let features: Vec<f64> = grouped
        .rows()
        .flat_map(|x| x.iter().copied().chain([0.0]))
        .collect();
    let widened = grouped.with_features(4, features).unwrap();
    let after = covariance_rank(&widened, &[1.0, 3.0], 1e-9).unwrap();
    assert_eq!(before.rank, 3);
    assert_eq!(after.rank, before.rank);
    assert!(after.eigenvalues.iter().all(|&e| e >= -1e-12));
}
