//! Property tests over the numeric building blocks.

use proptest::prelude::*;
use rplan_core::overthink::{detect, paired_eval, QuestionPair};
use rplan_core::probe::{coordinate_descent, DesignMatrix, LinearProbe, ProbeTrainConfig};
use rplan_core::stats::{auc, pearson, quantile};
use rplan_core::trace::ActivationRecord;

fn config(alpha: f64) -> ProbeTrainConfig {
    ProbeTrainConfig {
        alpha,
        max_iterations: 100_000,
        tolerance: 1e-12,
        ..Default::default()
    }
}

fn problem() -> impl Strategy<Value = (usize, usize, Vec<f64>, Vec<f64>)> {
    (5usize..20, 1usize..5).prop_flat_map(|(n, d)| {
        (
            Just(n),
            Just(d),
            prop::collection::vec(-5.0f64..5.0, n * d),
            prop::collection::vec(-50.0f64..50.0, n),
        )
    })
}

fn scalar_record(v: f64) -> ActivationRecord {
    ActivationRecord {
        question_id: String::new(),
        difficulty: 1,
        activations: vec![v as f32],
        reasoning_token_counts: vec![1],
        answer_token_counts: vec![1],
        truncated: None,
    }
}

fn identity_probe() -> LinearProbe {
    LinearProbe {
        layer: 0,
        weights: vec![1.0],
        bias: 0.0,
        alpha: 0.0,
        n_train: 1,
        converged: true,
        iterations_used: 0,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lasso_kkt_holds((n, d, x, y) in problem(), alpha in 0.01f64..5.0) {
        let design = DesignMatrix::new(x, y, d, 0).unwrap();
        let fit = coordinate_descent(&design, &config(alpha)).unwrap();
        prop_assume!(fit.converged);
        let nf = n as f64;
        let resid: Vec<f64> = (0..n)
            .map(|i| design.targets()[i] - design.row(i).iter().zip(&fit.weights).map(|(a, b)| a * b).sum::<f64>() - fit.bias)
            .collect();
        prop_assert!(resid.iter().sum::<f64>().abs() / nf < 1e-6);
        for j in 0..d {
            let g = (0..n).map(|i| design.row(i)[j] * resid[i]).sum::<f64>() / nf;
            let w = fit.weights[j];
            if w != 0.0 {
                prop_assert!((g - alpha * w.signum()).abs() < 1e-5, "active j={} g={} alpha={}", j, g, alpha);
            } else {
                prop_assert!(g.abs() <= alpha + 1e-5, "inactive j={} g={} alpha={}", j, g, alpha);
            }
        }
    }

    #[test]
    fn lasso_scales_with_targets((_n, d, x, y) in problem(), alpha in 0.01f64..2.0, c in 0.1f64..10.0) {
        let base = coordinate_descent(&DesignMatrix::new(x.clone(), y.clone(), d, 0).unwrap(), &config(alpha)).unwrap();
        let scaled_y: Vec<f64> = y.iter().map(|v| c * v).collect();
        let scaled = coordinate_descent(&DesignMatrix::new(x, scaled_y, d, 0).unwrap(), &config(c * alpha)).unwrap();
        prop_assume!(base.converged && scaled.converged);
        for (a, b) in base.weights.iter().zip(&scaled.weights) {
            prop_assert!((c * a - b).abs() < 1e-5 * (1.0 + b.abs()), "{} vs {}", c * a, b);
        }
        prop_assert!((c * base.bias - scaled.bias).abs() < 1e-5 * (1.0 + scaled.bias.abs()));
    }

    #[test]
    fn auc_is_rank_based(pos in prop::collection::vec(-100.0f64..100.0, 1..30),
                         neg in prop::collection::vec(-100.0f64..100.0, 1..30)) {
        let a = auc(&pos, &neg).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        let warp = |v: &[f64]| v.iter().map(|x| (x / 50.0).exp() * 3.0 + 7.0).collect::<Vec<_>>();
        prop_assert!((auc(&warp(&pos), &warp(&neg)).unwrap() - a).abs() < 1e-12);
        prop_assert!((auc(&neg, &pos).unwrap() - (1.0 - a)).abs() < 1e-12);
    }

    #[test]
    fn detection_rate_falls_as_threshold_rises(values in prop::collection::vec(-10.0f64..10.0, 2..40),
                                               t1 in -12.0f64..12.0, dt in 0.0f64..5.0) {
        let probe = identity_probe();
        let pairs: Vec<QuestionPair> = values
            .chunks_exact(2)
            .enumerate()
            .map(|(i, c)| QuestionPair {
                pair_id: i.to_string(),
                vanilla: scalar_record(c[0]),
                overthink: scalar_record(c[1]),
            })
            .collect();
        prop_assume!(!pairs.is_empty());
        let lo = paired_eval(&probe, &pairs, t1).unwrap();
        let hi = paired_eval(&probe, &pairs, t1 + dt).unwrap();
        prop_assert!(hi.detection_rate_at_threshold <= lo.detection_rate_at_threshold);
        prop_assert!(hi.false_positive_rate <= lo.false_positive_rate);
        prop_assert_eq!(hi.auc, lo.auc);
        for v in &values {
            let (flag, pred) = detect(&probe, &scalar_record(*v), t1).unwrap();
            prop_assert_eq!(flag, pred > t1);
        }
    }

    #[test]
    fn pearson_affine_invariance(x in prop::collection::vec(-10.0f64..10.0, 3..30), a in 0.5f64..4.0, b in -5.0f64..5.0) {
        let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| v * v + i as f64).collect();
        if let Some(r) = pearson(&x, &y) {
            let x2: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            let r2 = pearson(&x2, &y).unwrap();
            prop_assert!((r - r2).abs() < 1e-9);
            let neg: Vec<f64> = x.iter().map(|v| -v).collect();
            prop_assert!((pearson(&neg, &y).unwrap() + r).abs() < 1e-9);
        }
    }

    #[test]
    fn quantile_is_monotone(v in prop::collection::vec(-1e3f64..1e3, 1..50), q1 in 0.0f64..1.0, q2 in 0.0f64..1.0) {
        let (lo, hi) = if q1 <= q2 { (q1, q2) } else { (q2, q1) };
        let (a, b) = (quantile(&v, lo).unwrap(), quantile(&v, hi).unwrap());
        prop_assert!(a <= b);
        let min = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(min <= a && b <= max);
    }
}
