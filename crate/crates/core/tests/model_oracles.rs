use abssim::model::{
    estimate_lipschitz, estimate_sigma_sq, full_gradient, generate_synthetic, grad_sum, minimize_full_batch, Dataset, Model,
    SampleBatch,
};
use abssim::numeric::{l2_norm_sq, ParamVector, RngStream};
use proptest::prelude::*;

fn logistic_data(d: usize, n: usize, noise: f64, seed: u64) -> Dataset {
    generate_synthetic(d, n, noise, &mut RngStream::new(seed, 0)).unwrap().0
}

#[test]
fn gradient_vanishes_at_logistic_optimum() {
    let data = logistic_data(3, 200, 0.2, 1);
    let model = Model::LogisticRegression { dim: 3 };
    let (x, _) = minimize_full_batch(&model, &data, &ParamVector::zeros(3), 1.0, 100_000, 0.0).unwrap();
    let norm = l2_norm_sq(&full_gradient(&model, &x, &data).unwrap()).sqrt();
    assert!(norm < 1e-6, "{norm}");
}

#[test]
fn monte_carlo_mean_matches_full_gradient() {
    let data = logistic_data(4, 500, 0.1, 2);
    let model = Model::TwoLayerMlp { input: 4, hidden: 3 };
    let mut rng = RngStream::new(3, 0);
    let x = model.init_params(&mut rng);
    let n = model.dim();
    let draws = 10_000;
    let mut sum = vec![0.0; n];
    let mut sum_sq = vec![0.0; n];
    for _ in 0..draws {
        let i = rng.draw_index(data.len());
        let g = grad_sum(&model, &x, &SampleBatch::new(vec![i]), &data).unwrap();
        for (j, v) in g.as_slice().iter().enumerate() {
            sum[j] += v;
            sum_sq[j] += v * v;
        }
    }
    let full = full_gradient(&model, &x, &data).unwrap();
    for j in 0..n {
        let mean = sum[j] / draws as f64;
        let sd = (sum_sq[j] / draws as f64 - mean * mean).max(0.0).sqrt();
        assert!((mean - full.as_slice()[j]).abs() <= 3.0 * sd / 100.0, "component {j}");
    }
}

#[test]
fn variance_estimate_is_stable_in_sample_count() {
    let data = logistic_data(5, 1000, 0.1, 4);
    let model = Model::LogisticRegression { dim: 5 };
    let x = ParamVector::from_vec(vec![0.3, -0.2, 0.5, 0.1, -0.4]);
    let a = estimate_sigma_sq(&model, &x, &data, 4000, &mut RngStream::new(5, 0)).unwrap();
    let b = estimate_sigma_sq(&model, &x, &data, 8000, &mut RngStream::new(5, 1)).unwrap();
    assert!((a - b).abs() / a < 0.1, "{a} vs {b}");
}

#[test]
fn variance_matches_exhaustive_on_symmetric_data() {
    // mirrored rows of equal norm with equal labels: every per-sample
    // deviation from the mean gradient at the origin has the same length
    let mut rng = RngStream::new(6, 0);
    let (mut rows, mut labels) = (Vec::new(), Vec::new());
    for _ in 0..15 {
        let v: Vec<f64> = (0..3).map(|_| rng.draw_normal()).collect();
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        let v: Vec<f64> = v.iter().map(|a| 2.0 * a / norm).collect();
        let y = if rng.draw_bernoulli(0.5) { 1.0 } else { 0.0 };
        rows.push(v.iter().map(|a| -a).collect());
        rows.push(v);
        labels.extend([y, y]);
    }
    let data = Dataset::new(rows, labels).unwrap();
    let model = Model::LogisticRegression { dim: 3 };
    let x = ParamVector::zeros(3);
    let full = full_gradient(&model, &x, &data).unwrap();
    let exhaustive = (0..data.len())
        .map(|i| {
            let g = grad_sum(&model, &x, &SampleBatch::new(vec![i]), &data).unwrap();
            l2_norm_sq(&g.sub(&full).unwrap())
        })
        .sum::<f64>()
        / data.len() as f64;
    let estimate = estimate_sigma_sq(&model, &x, &data, 200, &mut RngStream::new(7, 0)).unwrap();
    assert!((estimate - exhaustive).abs() < 1e-9, "{estimate} vs {exhaustive}");
}

fn largest_eigenvalue(m: &[Vec<f64>]) -> f64 {
    let n = m.len();
    let mut v = vec![1.0; n];
    let mut lambda = 0.0;
    for _ in 0..2000 {
        let w: Vec<f64> = (0..n).map(|i| (0..n).map(|j| m[i][j] * v[j]).sum()).collect();
        let norm = w.iter().map(|a| a * a).sum::<f64>().sqrt();
        lambda = norm / v.iter().map(|a| a * a).sum::<f64>().sqrt();
        v = w.iter().map(|a| a / norm).collect();
    }
    lambda
}

#[test]
fn logistic_smoothness_below_hessian_bound() {
    let d = 5;
    let data = logistic_data(d, 400, 0.1, 8);
    let mut gram = vec![vec![0.0; d]; d];
    for i in 0..data.len() {
        let r = data.row(i);
        for a in 0..d {
            for b in 0..d {
                gram[a][b] += r[a] * r[b] / data.len() as f64;
            }
        }
    }
    let ceiling = 0.25 * largest_eigenvalue(&gram) + 1e-6;
    let model = Model::LogisticRegression { dim: d };
    for seed in 0..5 {
        let est = estimate_lipschitz(&model, &data, 100, 2.0, &mut RngStream::new(seed, 0)).unwrap();
        assert!(est <= ceiling, "{est} > {ceiling}");
    }
}

#[test]
fn smoothness_estimate_is_stable_across_seeds() {
    let data = logistic_data(4, 300, 0.1, 9);
    for model in [Model::LogisticRegression { dim: 4 }, Model::TwoLayerMlp { input: 4, hidden: 5 }] {
        let est: Vec<f64> = (0..6)
            .map(|s| estimate_lipschitz(&model, &data, 50, 1.0, &mut RngStream::new(100 + s, 0)).unwrap())
            .collect();
        let hi = est.iter().cloned().fold(f64::MIN, f64::max);
        let lo = est.iter().cloned().fold(f64::MAX, f64::min);
        assert!(lo > 0.0 && hi.is_finite() && hi < 2.0 * lo, "{est:?}");
    }
}

#[test]
fn dataset_csv_survives_round_trip() {
    let data = logistic_data(3, 40, 0.3, 10);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("data.csv");
    data.write_csv(&p).unwrap();
    assert_eq!(Dataset::read_csv(&p).unwrap(), data);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn exhaustive_average_equals_full_gradient(seed in any::<u64>(), kind in 0usize..3, n in 1usize..40) {
        let d = 3;
        let mut rng = RngStream::new(seed, 0);
        let data = generate_synthetic(d, n, 0.2, &mut rng).unwrap().0;
        let model = match kind {
            0 => Model::LogisticRegression { dim: d },
            1 => Model::TwoLayerMlp { input: d, hidden: 2 },
            _ => Model::Quadratic { curvature: vec![0.5, 1.0, 2.0] },
        };
        let x = ParamVector::from_vec((0..model.dim()).map(|_| rng.draw_normal()).collect());
        let mut avg = ParamVector::zeros(model.dim());
        for i in 0..n {
            avg.add_scaled(1.0 / n as f64, &grad_sum(&model, &x, &SampleBatch::new(vec![i]), &data).unwrap()).unwrap();
        }
        let full = full_gradient(&model, &x, &data).unwrap();
        for (a, b) in avg.as_slice().iter().zip(full.as_slice()) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }
}
