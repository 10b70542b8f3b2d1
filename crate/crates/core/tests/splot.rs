use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splotml_core::density::{Density1D, MixtureModel};
use splotml_core::splot::{compute_sweights, compute_vinv, fit_and_compute, fit_yields, SplotError};

/// Canonical mixture sample with a known number of signal events.
fn canonical_sample(ns: usize, nb: usize, seed: u64) -> Vec<f64> {
    let mut m = Density1D::canonical_signal().sample(ns, seed);
    m.extend(Density1D::canonical_background().sample(nb, seed ^ 0x9e37_79b9));
    m
}

/// Straightforward re-summation of the inverse covariance and the weights.
fn naive(masses: &[f64], shapes: &[Density1D], yields: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let k = shapes.len();
    let mut vinv = vec![vec![0.0; k]; k];
    for &m in masses {
        let p: Vec<f64> = shapes.iter().map(|s| s.evaluate(m)).collect();
        let mut d = 0.0;
        for j in 0..k {
            d += yields[j] * p[j];
        }
        for a in 0..k {
            for b in 0..k {
                vinv[a][b] += p[a] * p[b] / (d * d);
            }
        }
    }
    assert_eq!(k, 2);
    let det = vinv[0][0] * vinv[1][1] - vinv[0][1] * vinv[1][0];
    let v = [
        [vinv[1][1] / det, -vinv[0][1] / det],
        [-vinv[1][0] / det, vinv[0][0] / det],
    ];
    let mut weights = Vec::with_capacity(masses.len());
    for &m in masses {
        let p: Vec<f64> = shapes.iter().map(|s| s.evaluate(m)).collect();
        let d: f64 = (0..k).map(|j| yields[j] * p[j]).sum();
        weights.push((0..k).map(|n| (0..k).map(|j| v[n][j] * p[j]).sum::<f64>() / d).collect());
    }
    (vinv, weights)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

#[test]
fn matches_naive_oracle() {
    let masses = canonical_sample(4_000, 6_000, 5);
    let shapes = vec![Density1D::canonical_signal(), Density1D::canonical_background()];
    let fit = fit_yields(&masses, &shapes, &[5_000.0, 5_000.0], 10_000.0).unwrap();
    let mm = MixtureModel::canonical(fit.yields[0], fit.yields[1]).unwrap();
    let (vinv_oracle, w_oracle) = naive(&masses, &shapes, &fit.yields);

    let vinv = compute_vinv(&masses, &mm).unwrap();
    for (a, row) in vinv_oracle.iter().enumerate() {
        for (b, &want) in row.iter().enumerate() {
            let r = rel(vinv.matrix.get(a, b), want);
            assert!(r < 1e-12, "V⁻¹[{a}][{b}] rel err {r}");
        }
    }
    let table = compute_sweights(&masses, &mm).unwrap();
    let mut worst = 0.0f64;
    for (e, row) in w_oracle.iter().enumerate() {
        for (n, &w) in row.iter().enumerate() {
            // Weights cross zero; scale by the row's magnitude.
            let err = (table.get(e, n) - w).abs() / row.iter().map(|x| x.abs()).fold(0.0, f64::max);
            worst = worst.max(err);
        }
    }
    assert!(worst < 1e-12, "worst sWeight rel err {worst}");
}

#[test]
fn identities_at_ml_yields() {
    let masses = canonical_sample(3_000, 7_000, 17);
    let (fit, table) = fit_and_compute(&masses, &MixtureModel::canonical(5_000.0, 5_000.0).unwrap()).unwrap();
    for e in 0..table.n_events() {
        let s: f64 = table.row(e).iter().sum();
        assert!((s - 1.0).abs() < 1e-6, "event {e}: row sum {s}");
    }
    for (n, sum) in table.species_sums().iter().enumerate() {
        assert!(rel(*sum, fit.yields[n]) < 1e-4, "species {n}: {sum} vs {}", fit.yields[n]);
    }
    assert!(table.covariance.is_symmetric(1e-9));
}

#[test]
fn em_log_likelihood_never_decreases() {
    for seed in 0..5 {
        let masses = canonical_sample(2_000 + 500 * seed as usize, 3_000, seed);
        let shapes = vec![Density1D::canonical_signal(), Density1D::canonical_background()];
        let n = masses.len() as f64;
        let fit = fit_yields(&masses, &shapes, &[0.05 * n, 0.95 * n], n).unwrap();
        assert!(fit.log_likelihood.len() >= 2);
        for w in fit.log_likelihood.windows(2) {
            assert!(w[1] >= w[0] - 1e-12, "seed {seed}: {} -> {}", w[0], w[1]);
        }
    }
}

#[test]
fn fitted_yields_within_three_sigma() {
    let (ns, nb) = (70_000, 30_000);
    let masses = canonical_sample(ns, nb, 99);
    let shapes = vec![Density1D::canonical_signal(), Density1D::canonical_background()];
    let fit = fit_yields(&masses, &shapes, &[50_000.0, 50_000.0], 100_000.0).unwrap();
    assert!((fit.yields[0] - ns as f64).abs() < 3.0 * (ns as f64).sqrt(), "{:?}", fit.yields);
    assert!((fit.yields[1] - nb as f64).abs() < 3.0 * (nb as f64).sqrt(), "{:?}", fit.yields);
}

#[test]
fn identical_shapes_rejected() {
    let masses = Density1D::canonical_signal().sample(1_000, 1);
    let mm = MixtureModel::new(vec![
        (Density1D::canonical_signal(), 500.0),
        (Density1D::canonical_signal(), 500.0),
    ])
    .unwrap();
    assert!(matches!(
        compute_vinv(&masses, &mm).and_then(|_| compute_sweights(&masses, &mm)),
        Err(SplotError::SpeciesIndistinguishable | SplotError::IllConditioned(_))
    ));
    let shapes = vec![Density1D::canonical_signal(), Density1D::canonical_signal()];
    assert!(matches!(
        fit_yields(&masses, &shapes, &[500.0, 500.0], 1_000.0),
        Err(SplotError::Unidentifiable)
    ));
}

#[test]
fn flagged_events_get_zero_weights() {
    // Two disjoint uniforms leave a gap where the mixture density vanishes.
    let mm = MixtureModel::new(vec![
        (Density1D::uniform(0.0, 3.0).unwrap(), 2.0),
        (Density1D::uniform(5.0, 8.0).unwrap(), 2.0),
    ])
    .unwrap();
    let masses = [1.0, 2.0, 4.0, 6.0, 7.0];
    let table = compute_sweights(&masses, &mm).unwrap();
    assert_eq!(table.flagged_events, vec![2]);
    assert_eq!(table.row(2), &[0.0, 0.0]);
    assert_eq!(table.row(0), &[1.0, 0.0]);
    assert_eq!(table.row(4), &[0.0, 1.0]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn oracle_equivalence_on_small_instances(seed in any::<u64>(), ns in 50usize..600, nb in 50usize..600,
                                             mean in 2.0f64..6.0, sigma in 0.4f64..2.0, rate in 0.05f64..1.0) {
        let s = Density1D::truncated_gaussian(mean, sigma, 0.0, 8.0).unwrap();
        let b = Density1D::truncated_exponential(rate, 0.0, 8.0).unwrap();
        let mut masses = s.sample(ns, seed);
        masses.extend(b.sample(nb, seed.wrapping_add(1)));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let yields = [rng.random_range(0.2..0.8) * (ns + nb) as f64, rng.random_range(0.2..0.8) * (ns + nb) as f64];
        let mm = MixtureModel::new(vec![(s.clone(), yields[0]), (b.clone(), yields[1])]).unwrap();
        let (vinv_oracle, w_oracle) = naive(&masses, &[s, b], &yields);
        let vinv = compute_vinv(&masses, &mm).unwrap();
        for (a, row) in vinv_oracle.iter().enumerate() {
            for (c, &want) in row.iter().enumerate() {
                prop_assert!(rel(vinv.matrix.get(a, c), want) < 1e-12);
            }
        }
        let table = compute_sweights(&masses, &mm).unwrap();
        prop_assert!(table.covariance.is_symmetric(1e-9));
        for (e, row) in w_oracle.iter().enumerate() {
            let scale = row.iter().map(|x| x.abs()).fold(0.0, f64::max);
            for (n, &w) in row.iter().enumerate() {
                prop_assert!((table.get(e, n) - w).abs() <= 1e-12 * scale);
            }
        }
    }

    #[test]
    fn unit_row_sums_at_ml_yields(seed in any::<u64>(), ns in 200usize..2_000, nb in 200usize..2_000) {
        let masses = canonical_sample(ns, nb, seed);
        let n = masses.len() as f64;
        let (fit, table) = fit_and_compute(&masses, &MixtureModel::canonical(n / 2.0, n / 2.0).unwrap()).unwrap();
        for e in 0..table.n_events() {
            prop_assert!((table.row(e).iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        for (k, sum) in table.species_sums().iter().enumerate() {
            if fit.yields[k] > 0.0 {
                prop_assert!(rel(*sum, fit.yields[k]) < 1e-4);
            }
        }
    }
}
