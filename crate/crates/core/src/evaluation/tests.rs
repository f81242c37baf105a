use super::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Precision/recall form, independent of the count shortcut used above.
fn oracle_f1(pred: &[bool], truth: &[bool]) -> f64 {
    let tp = pred.iter().zip(truth).filter(|(p, t)| **p && **t).count() as f64;
    let pp = pred.iter().filter(|p| **p).count() as f64;
    let ap = truth.iter().filter(|t| **t).count() as f64;
    let precision = if pp > 0.0 { tp / pp } else { 0.0 };
    let recall = if ap > 0.0 { tp / ap } else { 0.0 };
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

fn oracle_expr(pred: &[i32], truth: &[i32]) -> f64 {
    let mut confusion = [[0usize; 8]; 8];
    for (&p, &t) in pred.iter().zip(truth) {
        confusion[t as usize][p as usize] += 1;
    }
    let mut total = 0.0;
    for k in 0..8 {
        let tp = confusion[k][k] as f64;
        let col: usize = (0..8).map(|t| confusion[t][k]).sum();
        let row: usize = confusion[k].iter().sum();
        let p = if col > 0 { tp / col as f64 } else { 0.0 };
        let r = if row > 0 { tp / row as f64 } else { 0.0 };
        total += if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    }
    total / 8.0
}

fn oracle_ccc(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum::<f64>() / n;
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum::<f64>() / n;
    2.0 * sxy / (sxx + syy + (mx - my).powi(2))
}

fn ids(v: &[i32]) -> Vec<ExpressionId> {
    v.iter().map(|&l| ExpressionId(l)).collect()
}

fn au_matrix(rows: &[[f64; 12]]) -> Matrix {
    Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
}

fn random_au(rng: &mut ChaCha8Rng, n: usize) -> (Matrix, Vec<AuVector>) {
    let mut probs = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let mut p = [0.0; 12];
        let mut l = [0; 12];
        for k in 0..12 {
            l[k] = rng.random_bool(0.3) as i32;
            p[k] = rng.random::<f64>();
        }
        probs.push(p);
        labels.push(AuVector(l));
    }
    (au_matrix(&probs), labels)
}

#[test]
fn identical_va_scores_one() {
    let s: Vec<VaPair> = (0..10)
        .map(|i| VaPair { valence: (i as f64 * 0.7).sin(), arousal: i as f64 / 10.0 })
        .collect();
    let r = metric_va(&s, &s).unwrap();
    assert!((r.score - 1.0).abs() < 1e-12);
    assert_eq!(r.breakdown.len(), 2);
}

#[test]
fn opposite_valence_cancels_arousal() {
    let target: Vec<VaPair> = (0..6).map(|i| VaPair { valence: i as f64, arousal: i as f64 }).collect();
    let pred: Vec<VaPair> = target.iter().map(|p| VaPair { valence: 5.0 - p.valence, arousal: p.arousal }).collect();
    let r = metric_va(&pred, &target).unwrap();
    assert!((r.breakdown[0] + 1.0).abs() < 1e-12);
    assert!((r.breakdown[1] - 1.0).abs() < 1e-12);
    assert!(r.score.abs() < 1e-12);
}

#[test]
fn va_length_mismatch_errors() {
    let a = [VaPair { valence: 0.0, arousal: 0.0 }; 3];
    assert!(metric_va(&a, &a[..2]).is_err());
}

#[test]
fn random_va_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let pred: Vec<VaPair> = (0..50).map(|_| VaPair { valence: rng.random_range(-1.0..1.0), arousal: rng.random_range(-1.0..1.0) }).collect();
    let target: Vec<VaPair> = (0..50).map(|_| VaPair { valence: rng.random_range(-1.0..1.0), arousal: rng.random_range(-1.0..1.0) }).collect();
    let r = metric_va(&pred, &target).unwrap();
    let v = oracle_ccc(&pred.iter().map(|p| p.valence).collect::<Vec<_>>(), &target.iter().map(|p| p.valence).collect::<Vec<_>>());
    let a = oracle_ccc(&pred.iter().map(|p| p.arousal).collect::<Vec<_>>(), &target.iter().map(|p| p.arousal).collect::<Vec<_>>());
    assert!((r.score - (v + a) / 2.0).abs() < 1e-9);
}

#[test]
fn perfect_expression_predictions() {
    let truth = ids(&[0, 1, 2, 3, 4, 5, 6, 7, 3]);
    let r = metric_expr(&truth, &truth).unwrap();
    assert_eq!(r.score, 1.0);
    assert!(r.zero_denominator.is_empty());
}

#[test]
fn two_frame_expression_case() {
    let r = metric_expr(&ids(&[0, 0]), &ids(&[0, 1])).unwrap();
    assert!((r.breakdown[0] - 2.0 / 3.0).abs() < 1e-12);
    assert!(r.breakdown[1..].iter().all(|&f| f == 0.0));
    assert!((r.score - 2.0 / 3.0 / 8.0).abs() < 1e-12);
    assert_eq!(r.zero_denominator, vec![2, 3, 4, 5, 6, 7]);
}

#[test]
fn out_of_range_expression_errors() {
    assert!(metric_expr(&ids(&[8]), &ids(&[0])).is_err());
    assert!(metric_expr(&ids(&[0]), &ids(&[-1])).is_err());
    assert!(metric_expr(&ids(&[0]), &ids(&[0, 1])).is_err());
}

#[test]
fn random_expression_matches_confusion_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let truth: Vec<i32> = (0..200).map(|_| rng.random_range(0..8)).collect();
    let pred: Vec<i32> = (0..200).map(|_| rng.random_range(0..8)).collect();
    let r = metric_expr(&ids(&pred), &ids(&truth)).unwrap();
    assert!((r.score - oracle_expr(&pred, &truth)).abs() < 1e-9);
    assert!((r.score - r.recomputed_score()).abs() < 1e-15);
}

#[test]
fn au_probs_equal_to_labels() {
    let rows: Vec<[f64; 12]> = (0..4).map(|i| core::array::from_fn(|k| ((i + k) % 2) as f64)).collect();
    let labels: Vec<AuVector> = rows.iter().map(|r| AuVector(core::array::from_fn(|k| r[k] as i32))).collect();
    let r = metric_au(&au_matrix(&rows), &labels, &ThresholdVector::default()).unwrap();
    assert_eq!(r.score, 1.0);
    assert_eq!(r.thresholds, Some(ThresholdVector::default()));
}

#[test]
fn au_without_positives_scores_zero() {
    let rows = [[0.0; 12]; 3];
    let labels = vec![AuVector([0; 12]); 3];
    let r = metric_au(&au_matrix(&rows), &labels, &ThresholdVector::default()).unwrap();
    assert_eq!(r.score, 0.0);
    assert_eq!(r.zero_denominator.len(), 12);
}

#[test]
fn all_zero_probs_score_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (_, labels) = random_au(&mut rng, 20);
    let r = metric_au(&Matrix::zeros(20, 12), &labels, &ThresholdVector::default()).unwrap();
    assert_eq!(r.score, 0.0);
}

#[test]
fn binarization_is_inclusive() {
    let mut row = [0.0; 12];
    row[0] = 0.5;
    let mut l = [0; 12];
    l[0] = 1;
    let r = metric_au(&au_matrix(&[row]), &[AuVector(l)], &ThresholdVector::default()).unwrap();
    assert_eq!(r.breakdown[0], 1.0);
}

#[test]
fn au_shape_and_domain_errors() {
    let labels = vec![AuVector([0; 12]); 2];
    assert!(metric_au(&Matrix::zeros(2, 11), &labels, &ThresholdVector::default()).is_err());
    assert!(metric_au(&Matrix::zeros(3, 12), &labels, &ThresholdVector::default()).is_err());
    let mut bad = Matrix::zeros(2, 12);
    bad.data[0] = 1.5;
    assert!(metric_au(&bad, &labels, &ThresholdVector::default()).is_err());
    assert!(metric_au(&Matrix::zeros(2, 12), &labels, &ThresholdVector::uniform(1.0)).is_err());
    assert!(metric_au(&Matrix::zeros(1, 12), &[AuVector([-1; 12])], &ThresholdVector::default()).is_err());
}

#[test]
fn random_au_matches_counting_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (probs, labels) = random_au(&mut rng, 100);
    let th = ThresholdVector(core::array::from_fn(|_| rng.random_range(0.05..0.95)));
    let r = metric_au(&probs, &labels, &th).unwrap();
    let mut total = 0.0;
    for k in 0..12 {
        let pred: Vec<bool> = (0..100).map(|i| probs.at(i, k) >= th.0[k]).collect();
        let truth: Vec<bool> = labels.iter().map(|l| l.0[k] == 1).collect();
        total += oracle_f1(&pred, &truth);
    }
    assert!((r.score - total / 12.0).abs() < 1e-9);
}

fn single_au(probs: &[f64], labels: &[i32]) -> (Matrix, Vec<AuVector>) {
    let rows: Vec<[f64; 12]> = probs.iter().map(|&p| core::array::from_fn(|k| if k == 0 { p } else { 0.0 })).collect();
    let labs = labels.iter().map(|&l| AuVector(core::array::from_fn(|k| if k == 0 { l } else { 0 }))).collect();
    (au_matrix(&rows), labs)
}

#[test]
fn sweep_picks_lowest_perfect_threshold() {
    let (p, l) = single_au(&[0.1, 0.4, 0.6, 0.9], &[0, 0, 1, 1]);
    let th = optimize_thresholds(&p, &l, &default_grid()).unwrap();
    assert!((th.0[0] - 0.45).abs() < 1e-12);
}

#[test]
fn all_positive_labels_pick_lowest_grid_value() {
    let (p, l) = single_au(&[0.3, 0.5, 0.7, 0.2], &[1, 1, 1, 1]);
    let th = optimize_thresholds(&p, &l, &default_grid()).unwrap();
    assert_eq!(th.0[0], 0.05);
}

#[test]
fn grid_validation() {
    let (p, l) = single_au(&[0.3], &[1]);
    assert!(optimize_thresholds(&p, &l, &[]).is_err());
    assert!(optimize_thresholds(&p, &l, &[0.5, 0.4]).is_err());
    assert!(optimize_thresholds(&p, &l, &[0.0, 0.5]).is_err());
    assert!(optimize_thresholds(&p, &l, &[0.5]).is_ok());
}

#[test]
fn separable_sets_reach_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for i in 0..40 {
        let l: [i32; 12] = core::array::from_fn(|k| ((i + k) % 3 == 0) as i32);
        rows.push(core::array::from_fn(|k| if l[k] == 1 { rng.random_range(0.72..1.0) } else { rng.random_range(0.0..0.7) }));
        labels.push(AuVector(l));
    }
    let r = metric_au_with_optimized(&au_matrix(&rows), &labels, &default_grid()).unwrap();
    assert_eq!(r.optimized_score(), Some(1.0));
    assert!(r.score < 1.0);
}

#[test]
fn comparison_table_layout() {
    let mut table = ComparisonTable::new();
    table.row_mut(&method_label(true, true)).ccc_va = Some(0.25);
    table.row_mut(&method_label(false, false)).f1_expr = Some(0.5);
    let text = table.render();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    let header: Vec<&str> = lines[0].split_whitespace().collect();
    assert_eq!(header, ["Method", "CCC_VA", "F1_Expr", "F1_AU", "F1_AUopt"]);
    assert!(lines[1].starts_with("DDAMFN+FC"));
    assert!(lines[2].starts_with("CLIP+LSTM") && lines[2].contains("0.250"));
}

#[test]
fn absorb_fills_au_columns() {
    let (p, l) = single_au(&[0.1, 0.4, 0.6, 0.9], &[0, 0, 1, 1]);
    let r = metric_au_with_optimized(&p, &l, &default_grid()).unwrap();
    let mut row = ComparisonRow::new("x");
    row.absorb(&r);
    assert_eq!(row.f1_au, Some(r.score));
    assert_eq!(row.f1_au_opt, r.optimized_score());
    assert!(row.ccc_va.is_none());
}

fn permute<T: Clone>(v: &[T], perm: &[usize]) -> Vec<T> {
    perm.iter().map(|&i| v[i].clone()).collect()
}

proptest! {
    #[test]
    fn sweep_never_loses_to_global_half(seed in any::<u64>(), n in 1usize..60) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (probs, labels) = random_au(&mut rng, n);
        let base = metric_au(&probs, &labels, &ThresholdVector::default()).unwrap();
        let th = optimize_thresholds(&probs, &labels, &default_grid()).unwrap();
        let tuned = metric_au(&probs, &labels, &th).unwrap();
        prop_assert!(tuned.score >= base.score);
        for k in 0..12 {
            prop_assert!(tuned.breakdown[k] >= base.breakdown[k]);
        }
    }

    #[test]
    fn metrics_are_permutation_invariant(seed in any::<u64>(), n in 2usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let (probs, labels) = random_au(&mut rng, n);
        let rows = probs.to_rows();
        let shuffled = Matrix::from_rows(&permute(&rows, &perm)).unwrap();
        let a = metric_au(&probs, &labels, &ThresholdVector::default()).unwrap().score;
        let b = metric_au(&shuffled, &permute(&labels, &perm), &ThresholdVector::default()).unwrap().score;
        prop_assert!((a - b).abs() < 1e-12);

        let pred: Vec<ExpressionId> = (0..n).map(|_| ExpressionId(rng.random_range(0..8))).collect();
        let truth: Vec<ExpressionId> = (0..n).map(|_| ExpressionId(rng.random_range(0..8))).collect();
        let a = metric_expr(&pred, &truth).unwrap().score;
        let b = metric_expr(&permute(&pred, &perm), &permute(&truth, &perm)).unwrap().score;
        prop_assert!((a - b).abs() < 1e-12);

        let va: Vec<VaPair> = (0..n).map(|_| VaPair { valence: rng.random_range(-1.0..1.0), arousal: rng.random_range(-1.0..1.0) }).collect();
        let tv: Vec<VaPair> = (0..n).map(|_| VaPair { valence: rng.random_range(-1.0..1.0), arousal: rng.random_range(-1.0..1.0) }).collect();
        let a = metric_va(&va, &tv).unwrap().score;
        let b = metric_va(&permute(&va, &perm), &permute(&tv, &perm)).unwrap().score;
        prop_assert!((a - b).abs() < 1e-9);
    }
}
