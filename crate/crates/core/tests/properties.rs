use normkit_core::aggregation::{aggregate, AggregationStrategy, PosteriorForm};
use normkit_core::deviation::mahalanobis;
use normkit_core::distributions::{product_of_gaussians, DiagonalGaussian, GaussianMixture};
use normkit_core::evaluation::{bh_fdr, cohens_d, likelihood_ratio};
use normkit_core::model::{read_checkpoint, write_checkpoint, ModalityConfig, MvnModel};
use normkit_core::numeric::{adam_step, AdamState, Matrix, ParamSet, RngStream};
use normkit_core::stats::{p_value_chi2, quantile};
use proptest::prelude::*;

fn gaussian(dim: usize) -> impl Strategy<Value = DiagonalGaussian> {
    (
        prop::collection::vec(-3.0f64..3.0, dim),
        prop::collection::vec(0.05f64..5.0, dim),
    )
        .prop_map(|(m, v)| DiagonalGaussian::new(m, v).unwrap())
}

fn experts() -> impl Strategy<Value = Vec<DiagonalGaussian>> {
    (1usize..4).prop_flat_map(|d| prop::collection::vec(gaussian(d), 1..5))
}

/// Rejections by scanning every observed p as a candidate cut: a cut `t`
/// is admissible when `t ≤ q·#{p ≤ t}/m`; the largest admissible cut wins.
fn bh_by_scan(p: &[f64], q: f64) -> Vec<bool> {
    let m = p.len() as f64;
    let best = p
        .iter()
        .copied()
        .filter(|&t| t <= q * p.iter().filter(|&&x| x <= t).count() as f64 / m)
        .fold(None, |acc: Option<f64>, t| Some(acc.map_or(t, |a| a.max(t))));
    p.iter().map(|&x| best.is_some_and(|t| x <= t)).collect()
}

proptest! {
    #[test]
    fn product_is_order_invariant(es in experts(), prior in any::<bool>()) {
        let fwd = product_of_gaussians(&es, prior).unwrap();
        let mut rev = es.clone();
        rev.reverse();
        let bwd = product_of_gaussians(&rev, prior).unwrap();
        for j in 0..fwd.dim() {
            prop_assert!((fwd.mean()[j] - bwd.mean()[j]).abs() < 1e-12);
            prop_assert!((fwd.variance()[j] - bwd.variance()[j]).abs() < 1e-12 * fwd.variance()[j].max(1.0));
        }
    }

    #[test]
    fn product_sharpens(es in experts(), prior in any::<bool>()) {
        let p = product_of_gaussians(&es, prior).unwrap();
        for j in 0..p.dim() {
            let min = es.iter().map(|e| e.variance()[j]).fold(f64::INFINITY, f64::min);
            prop_assert!(p.variance()[j] <= min * (1.0 + 1e-12));
        }
    }

    #[test]
    fn kl_is_non_negative(g in gaussian(4)) {
        prop_assert!(g.kl_to_standard_normal() >= 0.0);
    }

    #[test]
    fn mixture_weights_sum_to_one(es in (1usize..4).prop_flat_map(|n| prop::collection::vec(gaussian(2), n))) {
        for s in AggregationStrategy::ALL {
            let jp = aggregate(&es, s).unwrap();
            if let PosteriorForm::Mixture(m) = &jp.form {
                prop_assert!((m.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
                if s == AggregationStrategy::Mopoe {
                    prop_assert_eq!(m.components().len(), 1 << es.len());
                }
            }
        }
    }

    #[test]
    fn mahalanobis_affine_invariant(
        v in prop::collection::vec(-3.0f64..3.0, 3),
        mu in prop::collection::vec(-3.0f64..3.0, 3),
        l in prop::collection::vec(-1.0f64..1.0, 9),
        a in prop::collection::vec(-1.0f64..1.0, 9),
        b in prop::collection::vec(-5.0f64..5.0, 3),
    ) {
        // Σ = LLᵀ + I, A = 2I + noise (both well conditioned)
        let l = Matrix::from_vec(3, 3, l).unwrap();
        let mut sigma = l.matmul_t(&l).unwrap();
        sigma.add_assign(&Matrix::identity(3)).unwrap();
        let mut am = Matrix::from_vec(3, 3, a).unwrap();
        for i in 0..3 {
            am.set(i, i, am.get(i, i) + 2.0);
        }
        let map = |x: &[f64]| -> Vec<f64> {
            (0..3).map(|i| (0..3).map(|k| am.get(i, k) * x[k]).sum::<f64>() + b[i]).collect()
        };
        let sigma2 = am.matmul(&sigma).unwrap().matmul_t(&am).unwrap();
        let d1 = mahalanobis(&v, &mu, &sigma).unwrap();
        let d2 = mahalanobis(&map(&v), &map(&mu), &sigma2).unwrap();
        prop_assert!((d1 - d2).abs() <= 1e-8 * d1.max(1.0), "{} vs {}", d1, d2);
    }

    #[test]
    fn bh_matches_threshold_scan(p in prop::collection::vec(0.0f64..1.0, 0..=12), q in 0.001f64..0.5) {
        prop_assert_eq!(bh_fdr(&p, q), bh_by_scan(&p, q));
    }

    #[test]
    fn bh_matches_scan_with_ties(p in prop::collection::vec(prop::sample::select(vec![0.001, 0.01, 0.02, 0.04, 0.3]), 0..=12)) {
        prop_assert_eq!(bh_fdr(&p, 0.05), bh_by_scan(&p, 0.05));
    }

    #[test]
    fn bh_monotone_in_q(p in prop::collection::vec(0.0f64..1.0, 0..30), q1 in 0.0f64..0.5, dq in 0.0f64..0.5) {
        let small = bh_fdr(&p, q1);
        let large = bh_fdr(&p, q1 + dq);
        for (s, l) in small.iter().zip(&large) {
            prop_assert!(!s || *l);
        }
    }

    #[test]
    fn cohens_d_translation_and_scale(
        a in prop::collection::vec(-5.0f64..5.0, 3..20),
        b in prop::collection::vec(-5.0f64..5.0, 3..20),
        shift in -10.0f64..10.0,
        scale in 0.1f64..10.0,
    ) {
        let d = cohens_d(&a, &b).unwrap();
        let moved = |x: &[f64]| x.iter().map(|v| (v + shift) * scale).collect::<Vec<_>>();
        let d2 = cohens_d(&moved(&a), &moved(&b)).unwrap();
        prop_assert!((d - d2).abs() < 1e-8 * d.abs().max(1.0));
        let swapped = cohens_d(&b, &a).unwrap();
        prop_assert!((d + swapped).abs() < 1e-12 * d.abs().max(1.0));
    }

    #[test]
    fn adam_zero_gradient_is_fixed_point(w in prop::collection::vec(-3.0f64..3.0, 6), steps in 1usize..5) {
        let mut params = ParamSet::new();
        params.insert("w", Matrix::from_vec(2, 3, w).unwrap()).unwrap();
        let zero = params.zeros_like();
        let mut state = AdamState::new(&params, 1e-3);
        let mut current = params.clone();
        for _ in 0..steps {
            let (p, s) = adam_step(&state, &current, &zero).unwrap();
            current = p;
            state = s;
        }
        prop_assert_eq!(current, params);
    }

    #[test]
    fn likelihood_ratio_above_one_iff_higher_rate(
        dis in prop::collection::vec(any::<bool>(), 1..50),
        hold in prop::collection::vec(any::<bool>(), 1..50),
    ) {
        prop_assume!(hold.iter().any(|x| *x));
        let lr = likelihood_ratio(&dis, &hold).unwrap();
        let rate = |f: &[bool]| f.iter().filter(|x| **x).count() as f64 / f.len() as f64;
        prop_assert_eq!(lr.ratio > 1.0, rate(&dis) > rate(&hold));
    }

    #[test]
    fn chi2_p_decreasing(d1 in 0.0f64..20.0, dd in 0.0f64..5.0, dof in 1usize..200) {
        let p1 = p_value_chi2(d1, dof);
        let p2 = p_value_chi2(d1 + dd, dof);
        prop_assert!(p2 <= p1);
        prop_assert!((0.0..=1.0).contains(&p1));
    }

    #[test]
    fn quantile_bounded_and_monotone(x in prop::collection::vec(-100.0f64..100.0, 1..40), q1 in 0.0f64..1.0, q2 in 0.0f64..1.0) {
        let (lo, hi) = if q1 <= q2 { (q1, q2) } else { (q2, q1) };
        let min = x.iter().copied().fold(f64::INFINITY, f64::min);
        let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (a, b) = (quantile(&x, lo), quantile(&x, hi));
        prop_assert!(a <= b && a >= min && b <= max);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn checkpoint_round_trip_is_bit_exact(seed in any::<u64>(), s in 0usize..4, d in 1usize..6) {
        let model = MvnModel::new(
            vec![
                ModalityConfig::new("mri", 7, vec![5, 3]).unwrap(),
                ModalityConfig::new("amyloid", 4, vec![3]).unwrap(),
            ],
            d,
            8,
            AggregationStrategy::ALL[s],
            seed,
        )
        .unwrap();
        let back = read_checkpoint(&write_checkpoint(&model)).unwrap();
        for ((na, a), (nb, b)) in model.params.iter().zip(back.params.iter()) {
            prop_assert_eq!(na, nb);
            let same = a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits());
            prop_assert!(same);
        }
        prop_assert_eq!(back, model);
    }
}

/// KL of the mixture to N(0, I) by Monte Carlo, using the exact mixture
/// density.
fn mc_mixture_kl(m: &GaussianMixture, n: usize, rng: &mut RngStream) -> f64 {
    let log_pdf = |g: &DiagonalGaussian, x: &[f64]| -> f64 {
        g.mean()
            .iter()
            .zip(g.variance())
            .zip(x)
            .map(|((mu, v), xi)| -0.5 * ((2.0 * std::f64::consts::PI * v).ln() + (xi - mu).powi(2) / v))
            .sum()
    };
    let std = DiagonalGaussian::standard(m.dim());
    let mut total = 0.0;
    for _ in 0..n {
        let x = m.sample(rng);
        let q: f64 = m
            .components()
            .iter()
            .zip(m.weights())
            .map(|(g, w)| w * log_pdf(g, &x).exp())
            .sum();
        total += q.ln() - log_pdf(&std, &x);
    }
    total / n as f64
}

#[test]
fn mixture_kl_bound_dominates_monte_carlo() {
    let mut rng = RngStream::new(11, "mixture-kl");
    let cases = [
        vec![(vec![2.0], vec![0.5]), (vec![-2.0], vec![0.5])],
        vec![(vec![0.0, 1.0], vec![0.2, 0.3]), (vec![1.0, -1.0], vec![1.5, 0.8]), (vec![0.0, 0.0], vec![1.0, 1.0])],
        vec![(vec![3.0], vec![0.1]), (vec![3.0], vec![0.1])],
    ];
    for case in cases {
        let comps = case
            .into_iter()
            .map(|(m, v)| DiagonalGaussian::new(m, v).unwrap())
            .collect();
        let mix = GaussianMixture::uniform(comps).unwrap();
        let mc = mc_mixture_kl(&mix, 200_000, &mut rng);
        // MC standard error is well below 0.02 for these cases
        assert!(mix.kl_bound() + 0.02 >= mc, "bound {} < MC {}", mix.kl_bound(), mc);
    }
}

#[test]
fn mixture_of_identical_components_bound_is_tight() {
    let g = DiagonalGaussian::new(vec![1.0, -0.5], vec![0.4, 2.0]).unwrap();
    let mix = GaussianMixture::uniform(vec![g.clone(), g.clone(), g.clone()]).unwrap();
    let mc = mc_mixture_kl(&mix, 200_000, &mut RngStream::new(3, "tight"));
    assert!((mix.kl_bound() - g.kl_to_standard_normal()).abs() < 1e-12);
    assert!((mc - mix.kl_bound()).abs() < 0.02);
}
