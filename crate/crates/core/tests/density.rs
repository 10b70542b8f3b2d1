use proptest::prelude::*;
use splotml_core::density::{Density1D, MixtureModel};
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Composite Simpson over the support on a fixed 10⁴-interval grid.
fn simpson(d: &Density1D) -> f64 {
    let s = d.support();
    let n = 10_000;
    let h = (s.hi - s.lo) / n as f64;
    let mut acc = d.evaluate(s.lo) + d.evaluate(s.hi);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * d.evaluate(s.lo + i as f64 * h);
    }
    acc * h / 3.0
}

/// Bin edges with equal probability, found by bisection on the CDF.
fn equal_probability_edges(d: &Density1D, bins: usize) -> Vec<f64> {
    let s = d.support();
    let mut edges = vec![s.lo];
    for k in 1..bins {
        let target = k as f64 / bins as f64;
        let (mut lo, mut hi) = (s.lo, s.hi);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if d.cdf(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        edges.push(0.5 * (lo + hi));
    }
    edges.push(s.hi);
    edges
}

fn chi2_p_value(d: &Density1D, seed: u64) -> f64 {
    let bins = 50;
    let n = 100_000;
    let edges = equal_probability_edges(d, bins);
    let mut counts = vec![0usize; bins];
    for m in d.sample(n, seed) {
        let b = edges[1..bins].partition_point(|&e| e <= m);
        counts[b] += 1;
    }
    let expected = n as f64 / bins as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    1.0 - ChiSquared::new((bins - 1) as f64).unwrap().cdf(stat)
}

fn builtin_densities() -> Vec<(&'static str, Density1D)> {
    vec![
        ("uniform", Density1D::uniform(0.0, 8.0).unwrap()),
        ("gaussian", Density1D::canonical_signal()),
        ("exponential", Density1D::canonical_background()),
        ("narrow gaussian", Density1D::truncated_gaussian(7.5, 0.3, 0.0, 8.0).unwrap()),
        (
            "mixture",
            Density1D::mixture(vec![
                (0.3, Density1D::canonical_signal()),
                (0.7, Density1D::canonical_background()),
            ])
            .unwrap(),
        ),
    ]
}

#[test]
fn sampling_matches_density_chi2() {
    for (name, d) in builtin_densities() {
        let p = chi2_p_value(&d, 2024);
        assert!(p > 0.001, "{name}: chi2 p-value {p}");
    }
}

#[test]
fn builtin_densities_normalized() {
    for (name, d) in builtin_densities() {
        let integral = simpson(&d);
        assert!((integral - 1.0).abs() < 1e-6, "{name}: integral {integral}");
    }
}

#[test]
fn draws_stay_inside_support() {
    for (name, d) in builtin_densities() {
        let s = d.support();
        assert!(d.sample(20_000, 9).iter().all(|&m| s.contains(m)), "{name}");
    }
}

#[test]
fn canonical_mixture_at_peak_is_yield_weighted_sum() {
    let mm = MixtureModel::canonical(300.0, 700.0).unwrap();
    let p = mm.evaluate(4.0);
    let s = Density1D::canonical_signal().evaluate(4.0);
    let b = Density1D::canonical_background().evaluate(4.0);
    assert_eq!(p.densities, vec![s, b]);
    assert!((p.denominator - (300.0 * s + 700.0 * b)).abs() < 1e-12 * p.denominator);
    assert!((mm.density(4.0) - p.denominator / 1000.0).abs() < 1e-15);
}

fn gaussian_strategy() -> impl Strategy<Value = Density1D> {
    // Means within 3σ of the support keep the edge decay resolvable by the
    // quadrature grid.
    (0.05f64..6.0, 0.0f64..4.0, 0.5f64..8.0, 0.0f64..1.0).prop_filter_map("constructible", |(sigma, lo, width, u)| {
        let hi = lo + width;
        let mean = (lo - 3.0 * sigma) + u * (width + 6.0 * sigma);
        Density1D::truncated_gaussian(mean, sigma, lo, hi).ok()
    })
}

fn exponential_strategy() -> impl Strategy<Value = Density1D> {
    (0.01f64..5.0, 0.0f64..4.0, 0.5f64..8.0)
        .prop_map(|(rate, lo, width)| Density1D::truncated_exponential(rate, lo, lo + width).unwrap())
}

fn any_density() -> impl Strategy<Value = Density1D> {
    prop_oneof![
        gaussian_strategy(),
        exponential_strategy(),
        (-5.0f64..5.0, 0.1f64..10.0).prop_map(|(lo, w)| Density1D::uniform(lo, lo + w).unwrap()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn normalization_holds(d in any_density()) {
        // Simpson on 10⁴ intervals resolves σ ≥ 0.05 on widths ≤ 8 far below 1e-6.
        let integral = simpson(&d);
        prop_assert!((integral - 1.0).abs() < 1e-6, "integral {}", integral);
    }

    #[test]
    fn log_evaluate_agrees(d in any_density(), u in 0.0f64..1.0) {
        let s = d.support();
        let m = s.lo + u * (s.hi - s.lo);
        let v = d.evaluate(m);
        if v > 1e-290 {
            let lv = d.log_evaluate(m);
            let want = v.ln();
            prop_assert!((lv - want).abs() <= 1e-12 * want.abs().max(1.0), "{} vs {}", lv, want);
        }
    }

    #[test]
    fn zero_outside_support(d in any_density(), gap in 1e-9f64..100.0) {
        let s = d.support();
        prop_assert_eq!(d.evaluate(s.lo - gap), 0.0);
        prop_assert_eq!(d.evaluate(s.hi + gap), 0.0);
    }

    #[test]
    fn cdf_monotone_and_bounded(d in any_density(), a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let s = d.support();
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        let ca = d.cdf(s.lo + a * s.width());
        let cb = d.cdf(s.lo + b * s.width());
        prop_assert!((0.0..=1.0).contains(&ca) && ca <= cb + 1e-15);
        prop_assert!((d.cdf(s.hi) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sampling_is_seed_deterministic(d in any_density(), seed in any::<u64>()) {
        prop_assert_eq!(d.sample(64, seed), d.sample(64, seed));
    }
}
