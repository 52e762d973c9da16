use hpvit_core::metrics::{
    auroc, compare, confusion, format_delta, roc, scores, AurocScheme, ConfusionMatrix,
    MetricsError, MetricsReport,
};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pairwise_auc(labels: &[bool], scores: &[f64]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

fn random_binary(rng: &mut ChaCha8Rng, n: usize, coarse: bool) -> (Vec<bool>, Vec<f64>) {
    loop {
        let labels: Vec<bool> = (0..n).map(|_| rng.random()).collect();
        if labels.iter().any(|&l| l) && labels.iter().any(|&l| !l) {
            let scores = labels
                .iter()
                .map(|&l| {
                    let s: f64 = rng.random::<f64>() + if l { 0.3 } else { 0.0 };
                    if coarse {
                        (s * 5.0).floor() / 5.0
                    } else {
                        s
                    }
                })
                .collect();
            return (labels, scores);
        }
    }
}

#[test]
fn confusion_matches_naive_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let truth: Vec<usize> = (0..500).map(|_| rng.random_range(0..6)).collect();
    let pred: Vec<usize> = (0..500).map(|_| rng.random_range(0..6)).collect();
    let cm = confusion(&truth, &pred, 6).unwrap();
    for t in 0..6 {
        for p in 0..6 {
            let naive = (0..500).filter(|&i| truth[i] == t && pred[i] == p).count() as u64;
            assert_eq!(cm.counts[t][p], naive);
        }
    }
    assert_eq!(cm.total(), 500);
}

#[test]
fn auroc_equals_pairwise_ranking_probability() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for case in 0..100 {
        let (labels, scores) = random_binary(&mut rng, 50, case % 2 == 0);
        let curve = roc(&labels, &scores).unwrap();
        let want = pairwise_auc(&labels, &scores);
        assert!((curve.auroc - want).abs() < 1e-9, "case {case}");
    }
}

#[test]
fn roc_curve_shape() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (labels, scores) = random_binary(&mut rng, 80, true);
    let c = roc(&labels, &scores).unwrap();
    assert_eq!((c.fpr[0], c.tpr[0]), (0.0, 0.0));
    assert_eq!((*c.fpr.last().unwrap(), *c.tpr.last().unwrap()), (1.0, 1.0));
    assert!(c.fpr.windows(2).all(|w| w[0] <= w[1]));
    assert!(c.tpr.windows(2).all(|w| w[0] <= w[1]));
    assert!(c.thresholds.windows(2).all(|w| w[0] > w[1]));
    assert!((0.0..=1.0).contains(&c.auroc));
}

#[test]
fn auroc_is_invariant_under_monotone_maps() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..50 {
        let (labels, s) = random_binary(&mut rng, 60, false);
        let base = roc(&labels, &s).unwrap().auroc;
        let affine: Vec<f64> = s.iter().map(|x| 2.0 * x + 1.0).collect();
        let cube: Vec<f64> = s.iter().map(|x| (x - 0.5).powi(3)).collect();
        assert!((roc(&labels, &affine).unwrap().auroc - base).abs() < 1e-12);
        assert!((roc(&labels, &cube).unwrap().auroc - base).abs() < 1e-12);
    }
}

#[test]
fn multiclass_auroc_is_macro_one_vs_rest() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let labels: Vec<usize> = (0..120).map(|i| i % 6).collect();
    let probs: Vec<Vec<f64>> = labels
        .iter()
        .map(|&l| {
            let mut row: Vec<f64> = (0..6).map(|_| rng.random::<f64>()).collect();
            row[l] += 0.5;
            let s: f64 = row.iter().sum();
            row.iter().map(|v| v / s).collect()
        })
        .collect();
    let (value, scheme, curve) = auroc(&labels, &probs, 6).unwrap();
    assert_eq!(scheme, AurocScheme::MacroOneVsRest);
    let mean = (0..6)
        .map(|c| {
            let truth: Vec<bool> = labels.iter().map(|&l| l == c).collect();
            let s: Vec<f64> = probs.iter().map(|p| p[c]).collect();
            pairwise_auc(&truth, &s)
        })
        .sum::<f64>()
        / 6.0;
    assert!((value - mean).abs() < 1e-9);
    assert_eq!(*curve.fpr.last().unwrap(), 1.0);

    let bin_labels = [0, 1, 1, 0];
    let bin_probs = vec![
        vec![0.9, 0.1],
        vec![0.2, 0.8],
        vec![0.4, 0.6],
        vec![0.7, 0.3],
    ];
    let (v, scheme, _) = auroc(&bin_labels, &bin_probs, 2).unwrap();
    assert_eq!((v, scheme), (1.0, AurocScheme::Binary));
}

#[test]
fn table_row_round_trips_through_json() {
    let mut report = scores(&ConfusionMatrix {
        counts: vec![vec![45, 5], vec![4, 46]],
    })
    .unwrap();
    report.model_id = "hp-vit".into();
    report.test_set_id = "abc".into();
    report.accuracy = 0.9061;
    report.precision = 0.91;
    report.recall = 0.90;
    report.f1 = 0.90;
    report.auroc = Some(0.95);
    let json = serde_json::to_string(&report).unwrap();
    let back: MetricsReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back, report);
}

#[test]
fn compare_reports_signed_accuracy_gap() {
    let cm = ConfusionMatrix {
        counts: vec![vec![40, 10], vec![5, 45]],
    };
    let mut a = scores(&cm).unwrap();
    a.test_set_id = "t".into();
    let mut b = a.clone();
    a.accuracy = 0.9061;
    b.accuracy = 0.8870;
    let c = compare(&a, &b).unwrap();
    assert_eq!(c.rows[0].metric, "Accuracy");
    assert_eq!(format_delta(c.rows[0].delta, 4), "+0.0191");
    let same = compare(&a, &a).unwrap();
    assert!(same.rows.iter().all(|r| r.delta == 0.0));
    b.test_set_id = "u".into();
    assert!(matches!(
        compare(&a, &b),
        Err(MetricsError::TestSetMismatch { .. })
    ));
}

proptest! {
    #[test]
    fn perfect_predictions_score_one(labels in prop::collection::vec(0usize..5, 1..200)) {
        let r = scores(&confusion(&labels, &labels, 5).unwrap()).unwrap();
        prop_assert_eq!(r.accuracy, 1.0);
    }

    #[test]
    fn f1_identity_and_ranges(counts in prop::collection::vec(prop::collection::vec(0u64..50, 4), 4)) {
        let cm = ConfusionMatrix { counts };
        prop_assume!(cm.total() > 0);
        let r = scores(&cm).unwrap();
        for s in &r.per_class {
            let (p, q) = (s.precision, s.recall);
            for v in [s.accuracy, p, q, s.f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            if p + q > 0.0 {
                prop_assert!((s.f1 - 2.0 * p * q / (p + q)).abs() < 1e-12);
            }
        }
        for v in [r.accuracy, r.precision, r.recall, r.f1, r.macro_avg.f1, r.weighted_avg.f1] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn sample_order_does_not_matter(seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let truth: Vec<usize> = (0..60).map(|_| rng.random_range(0..3)).collect();
        let pred: Vec<usize> = (0..60).map(|_| rng.random_range(0..3)).collect();
        let s: Vec<f64> = (0..60).map(|_| rng.random()).collect();
        let mut idx: Vec<usize> = (0..60).collect();
        idx.shuffle(&mut rng);
        let t2: Vec<usize> = idx.iter().map(|&i| truth[i]).collect();
        let p2: Vec<usize> = idx.iter().map(|&i| pred[i]).collect();
        let s2: Vec<f64> = idx.iter().map(|&i| s[i]).collect();
        prop_assert_eq!(
            scores(&confusion(&truth, &pred, 3).unwrap()).unwrap(),
            scores(&confusion(&t2, &p2, 3).unwrap()).unwrap()
        );
        let b1: Vec<bool> = truth.iter().map(|&t| t == 0).collect();
        let b2: Vec<bool> = t2.iter().map(|&t| t == 0).collect();
        if b1.iter().any(|&b| b) && b1.iter().any(|&b| !b) {
            let a = roc(&b1, &s).unwrap().auroc;
            let b = roc(&b2, &s2).unwrap().auroc;
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
