use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use splotml_core::losses::Objective;
use splotml_core::model::{train, AdamConfig, EvalSet, Features, Mlp, MlpConfig, TrainSet};

/// Two classes on either side of the line x₀ + x₁ = 0 with a margin.
fn separable(n: usize, seed: u64) -> (Vec<f64>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vec::with_capacity(2 * n);
    let mut y = Vec::with_capacity(n);
    while y.len() < n {
        let a: f64 = rng.random_range(-3.0..3.0);
        let b: f64 = rng.random_range(-3.0..3.0);
        if (a + b).abs() < 0.3 {
            continue;
        }
        x.extend([a, b]);
        y.push(a + b > 0.0);
    }
    (x, y)
}

fn labels_f64(y: &[bool]) -> Vec<f64> {
    y.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect()
}

#[test]
fn separable_toy_reaches_high_auc() {
    let (xtr, ytr) = separable(2_000, 1);
    let (xte, yte) = separable(1_000, 2);
    let mut model = Mlp::init(&MlpConfig {
        input_dim: 2,
        hidden: vec![16, 8],
        negative_slope: 0.05,
        seed: 3,
        l2_coefficient: 0.0,
    })
    .unwrap();
    let objective = Objective::PlainCe { labels: labels_f64(&ytr) };
    let report = train(
        &mut model,
        &TrainSet {
            x: Features::new(&xtr, 2),
            objective: &objective,
        },
        &AdamConfig {
            learning_rate: 2e-3,
            steps: 2_000,
            ..AdamConfig::default()
        },
        0.0,
        500,
        &EvalSet {
            x: Features::new(&xte, 2),
            labels: &yte,
            objective: None,
        },
    )
    .unwrap();
    let auc = report.final_auc().unwrap();
    assert!(auc > 0.99, "test AUC {auc}");
}

#[test]
fn fresh_logit_scale_is_moderate() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for (d, hidden) in [(5, vec![64, 32, 16]), (28, vec![128, 64, 32]), (2, vec![3])] {
        let x: Vec<f64> = (0..1_000 * d).map(|_| rng.sample(StandardNormal)).collect();
        for seed in 0..5 {
            let model = Mlp::init(&MlpConfig {
                input_dim: d,
                hidden: hidden.clone(),
                negative_slope: 0.05,
                seed,
                l2_coefficient: 0.0,
            })
            .unwrap();
            let z = model.forward(Features::new(&x, d)).unwrap();
            let mean = z.iter().sum::<f64>() / z.len() as f64;
            let std = (z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / z.len() as f64).sqrt();
            assert!((0.1..=10.0).contains(&std), "d {d} seed {seed}: std {std}");
        }
    }
}

#[test]
fn identical_seeds_give_identical_reports() {
    let (xtr, ytr) = separable(600, 4);
    let (xte, yte) = separable(300, 5);
    let sweights: Vec<f64> = ytr.iter().map(|&v| if v { 1.2 } else { -0.2 }).collect();
    let objective = Objective::ConstrainedMse { sweights };
    let run = || {
        let mut model = Mlp::init(&MlpConfig::small(2, 21)).unwrap();
        let report = train(
            &mut model,
            &TrainSet {
                x: Features::new(&xtr, 2),
                objective: &objective,
            },
            &AdamConfig {
                steps: 300,
                batch_size: 64,
                shuffle_seed: 9,
                ..AdamConfig::default()
            },
            1e-3,
            50,
            &EvalSet {
                x: Features::new(&xte, 2),
                labels: &yte,
                objective: None,
            },
        )
        .unwrap();
        (model, report.records)
    };
    let (m1, r1) = run();
    let (m2, r2) = run();
    assert_eq!(m1, m2);
    assert_eq!(r1, r2);
    let steps: Vec<u64> = r1.iter().map(|r| r.step).collect();
    assert!(steps.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(*steps.last().unwrap(), 300);
}

#[test]
fn negative_weights_drive_weighted_ce_below_zero() {
    // Random features, half the events carry a negative signal weight: a
    // network can only lower the loss without bound by memorizing them.
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let n = 256;
    let d = 4;
    let x: Vec<f64> = (0..n * d).map(|_| rng.sample(StandardNormal)).collect();
    let ws: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 1.5 } else { -0.5 }).collect();
    let wb: Vec<f64> = ws.iter().map(|w| 1.0 - w).collect();
    let objective = Objective::WeightedCe { ws, wb };
    let y: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
    let mut model = Mlp::init(&MlpConfig::small(d, 5)).unwrap();
    let result = train(
        &mut model,
        &TrainSet {
            x: Features::new(&x, d),
            objective: &objective,
        },
        &AdamConfig {
            learning_rate: 1e-2,
            steps: 3_000,
            batch_size: n,
            ..AdamConfig::default()
        },
        0.0,
        100,
        &EvalSet {
            x: Features::new(&x, d),
            labels: &y,
            objective: None,
        },
    );
    let min_loss = match result {
        Ok(report) => report.records.iter().map(|r| r.train_loss).fold(f64::INFINITY, f64::min),
        Err(splotml_core::model::TrainError::NonFinite { .. }) => f64::NEG_INFINITY,
        Err(e) => panic!("{e}"),
    };
    assert!(min_loss < 0.0, "min train loss {min_loss}");
}
