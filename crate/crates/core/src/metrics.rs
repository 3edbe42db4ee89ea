//! Selective-classification and calibration metrics: accuracy, balanced
//! accuracy, AUROC, ECE, accuracy-reject curves with AUARC, per-slide median
//! aggregation and cross-split method ranking.

use crate::error::{Error, Result};

/// Index of the first maximal element.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn accuracy(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    check_aligned(predicted, truth)?;
    let correct = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(correct as f64 / truth.len() as f64)
}

/// Unweighted mean of per-class recall over the classes present in `truth`.
pub fn balanced_accuracy(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    check_aligned(predicted, truth)?;
    let classes = truth.iter().max().unwrap() + 1;
    let mut total = vec![0usize; classes];
    let mut correct = vec![0usize; classes];
    for (&p, &t) in predicted.iter().zip(truth) {
        total[t] += 1;
        if p == t {
            correct[t] += 1;
        }
    }
    let mut sum = 0.0;
    let mut present = 0usize;
    for c in 0..classes {
        if total[c] > 0 {
            sum += correct[c] as f64 / total[c] as f64;
            present += 1;
        }
    }
    Ok(sum / present as f64)
}

fn check_aligned(a: &[usize], b: &[usize]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("metric on empty inputs"));
    }
    if a.len() != b.len() {
        return Err(Error::shape(format!(
            "{} predictions vs {} labels",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// Probability that a random positive outscores a random negative, ties
/// counted as 1/2 (rank / Mann-Whitney formulation).
pub fn auroc(positive_scores: &[f64], negative_scores: &[f64]) -> Result<f64> {
    if positive_scores.is_empty() || negative_scores.is_empty() {
        return Err(Error::invalid(
            "auroc undefined: need at least one positive and one negative",
        ));
    }
    if positive_scores
        .iter()
        .chain(negative_scores)
        .any(|v| !v.is_finite())
    {
        return Err(Error::numeric("auroc: non-finite score"));
    }
    let mut all: Vec<(f64, bool)> = positive_scores
        .iter()
        .map(|&s| (s, true))
        .chain(negative_scores.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    // Average ranks over runs of equal scores.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        let positives_in_run = all[i..j].iter().filter(|(_, p)| *p).count();
        rank_sum_pos += avg_rank * positives_in_run as f64;
        i = j;
    }
    let n_pos = positive_scores.len() as f64;
    let n_neg = negative_scores.len() as f64;
    let u = rank_sum_pos - n_pos * (n_pos + 1.0) / 2.0;
    Ok(u / (n_pos * n_neg))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinStats {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub mean_confidence: f64,
    pub mean_accuracy: f64,
}

/// M equal-width confidence bins over [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationBins {
    pub bins: Vec<BinStats>,
    pub n: usize,
}

impl CalibrationBins {
    pub fn num_bins(&self) -> usize {
        self.bins.len()
    }
}

/// Expected calibration error over `m` equal-width bins. Bin edges are
/// left-open/right-closed, except the first bin which is closed at 0;
/// empty bins contribute nothing.
pub fn ece(confidences: &[f64], correct: &[bool], m: usize) -> Result<(f64, CalibrationBins)> {
    if confidences.is_empty() {
        return Err(Error::invalid("ece on empty input"));
    }
    if confidences.len() != correct.len() {
        return Err(Error::shape(format!(
            "{} confidences vs {} outcomes",
            confidences.len(),
            correct.len()
        )));
    }
    if m == 0 {
        return Err(Error::invalid("ece needs at least one bin"));
    }
    let edges: Vec<f64> = (0..=m).map(|i| i as f64 / m as f64).collect();
    let mut counts = vec![0usize; m];
    let mut conf_sums = vec![0.0; m];
    let mut acc_sums = vec![0.0; m];
    for (&c, &ok) in confidences.iter().zip(correct) {
        if !(0.0..=1.0).contains(&c) {
            return Err(Error::invalid(format!("confidence {c} outside [0, 1]")));
        }
        // Nearest candidate, then fix up against the exact edge comparisons.
        let mut idx = ((c * m as f64).ceil() as usize)
            .saturating_sub(1)
            .min(m - 1);
        while idx > 0 && c <= edges[idx] {
            idx -= 1;
        }
        while idx < m - 1 && c > edges[idx + 1] {
            idx += 1;
        }
        counts[idx] += 1;
        conf_sums[idx] += c;
        acc_sums[idx] += if ok { 1.0 } else { 0.0 };
    }
    let n = confidences.len();
    let mut total = 0.0;
    let mut bins = Vec::with_capacity(m);
    for i in 0..m {
        let (mean_conf, mean_acc) = if counts[i] > 0 {
            (
                conf_sums[i] / counts[i] as f64,
                acc_sums[i] / counts[i] as f64,
            )
        } else {
            (0.0, 0.0)
        };
        if counts[i] > 0 {
            total += counts[i] as f64 / n as f64 * (mean_acc - mean_conf).abs();
        }
        bins.push(BinStats {
            lo: edges[i],
            hi: edges[i + 1],
            count: counts[i],
            mean_confidence: mean_conf,
            mean_accuracy: mean_acc,
        });
    }
    Ok((total, CalibrationBins { bins, n }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectMetric {
    Accuracy,
    BalancedAccuracy,
}

impl RejectMetric {
    pub fn name(&self) -> &'static str {
        match self {
            RejectMetric::Accuracy => "accuracy",
            RejectMetric::BalancedAccuracy => "balanced_accuracy",
        }
    }
}

/// Accuracy (or balanced accuracy) of the retained samples as a function of
/// the rejected fraction, plus the area under that curve.
#[derive(Debug, Clone)]
pub struct RejectCurve {
    /// (reject_fraction, metric value) for every rejection count 0..n-1.
    pub points: Vec<(f64, f64)>,
    pub metric: RejectMetric,
    pub auarc: f64,
}

impl RejectCurve {
    /// Metric value at the smallest tabulated rejection fraction >= `fraction`.
    pub fn value_at(&self, fraction: f64) -> f64 {
        for &(x, y) in &self.points {
            if x >= fraction {
                return y;
            }
        }
        self.points.last().map(|&(_, y)| y).unwrap_or(f64::NAN)
    }
}

/// Mean metric value over all rejection counts (left Riemann rule on the
/// step curve), in [0, 1] for [0, 1]-valued metrics.
pub fn auarc(points: &[(f64, f64)]) -> f64 {
    if points.is_empty() {
        return f64::NAN;
    }
    points.iter().map(|&(_, y)| y).sum::<f64>() / points.len() as f64
}

/// Reject the k most uncertain samples for k = 0..n-1 and evaluate the
/// metric on the remainder. `uncertainty` must be orientation-normalized
/// (higher = more uncertain); ties are broken by original index, stable.
/// Balanced accuracy averages only classes with at least one remaining
/// ground-truth sample.
pub fn accuracy_reject_curve(
    uncertainty: &[f64],
    predicted: &[usize],
    truth: &[usize],
    metric: RejectMetric,
) -> Result<RejectCurve> {
    check_aligned(predicted, truth)?;
    if uncertainty.len() != truth.len() {
        return Err(Error::shape(format!(
            "{} uncertainties vs {} labels",
            uncertainty.len(),
            truth.len()
        )));
    }
    if uncertainty.iter().any(|u| u.is_nan()) {
        return Err(Error::numeric("reject curve: NaN uncertainty"));
    }
    let n = truth.len();
    let mut order: Vec<usize> = (0..n).collect();
    // Most uncertain first; stable sort keeps original index order on ties.
    order.sort_by(|&a, &b| uncertainty[b].partial_cmp(&uncertainty[a]).unwrap());

    let classes = truth.iter().max().unwrap() + 1;
    let mut class_total = vec![0i64; classes];
    let mut class_correct = vec![0i64; classes];
    for (&p, &t) in predicted.iter().zip(truth) {
        class_total[t] += 1;
        if p == t {
            class_correct[t] += 1;
        }
    }

    let metric_now = |class_total: &[i64], class_correct: &[i64], remaining: i64| -> f64 {
        match metric {
            RejectMetric::Accuracy => class_correct.iter().sum::<i64>() as f64 / remaining as f64,
            RejectMetric::BalancedAccuracy => {
                let mut sum = 0.0;
                let mut present = 0;
                for c in 0..class_total.len() {
                    if class_total[c] > 0 {
                        sum += class_correct[c] as f64 / class_total[c] as f64;
                        present += 1;
                    }
                }
                sum / present as f64
            }
        }
    };

    let mut points = Vec::with_capacity(n);
    let mut remaining = n as i64;
    for k in 0..n {
        points.push((
            k as f64 / n as f64,
            metric_now(&class_total, &class_correct, remaining),
        ));
        // Remove the k-th most uncertain sample for the next step.
        let idx = order[k];
        class_total[truth[idx]] -= 1;
        if predicted[idx] == truth[idx] {
            class_correct[truth[idx]] -= 1;
        }
        remaining -= 1;
    }
    let area = auarc(&points);
    Ok(RejectCurve {
        points,
        metric,
        auarc: area,
    })
}

/// Type-7 (linear interpolation) quantile of already-sorted values.
pub fn quantile_type7(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Median and interquartile range (Q3 - Q1, type-7 quantiles) of per-slide
/// metric values.
pub fn per_slide_median(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::invalid("per_slide_median on empty input"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = quantile_type7(&sorted, 0.5);
    let iqr = quantile_type7(&sorted, 0.75) - quantile_type7(&sorted, 0.25);
    Ok((median, iqr))
}

/// Per-slide metric values for one (method, trial, partition) evaluation.
#[derive(Debug, Clone)]
pub struct SliceResult {
    pub slide_id: u32,
    pub accuracy: f64,
    pub balanced_accuracy: f64,
    pub ece: f64,
    pub auarc: f64,
}

/// Ranking of methods per split; rank 1 is best.
#[derive(Debug, Clone)]
pub struct RankTable {
    pub metric: String,
    /// Tie-break priority; documents the configured method order.
    pub method_order: Vec<String>,
    /// (split_id, [(method, rank)]) in method_order.
    pub rows: Vec<(String, Vec<(String, usize)>)>,
}

/// Rank every method within each split. `higher_better` sets the score
/// orientation; ties are broken by position in `method_order`.
pub fn rank_methods(
    per_split: &[(String, Vec<(String, f64)>)],
    higher_better: bool,
    method_order: &[String],
    metric: &str,
) -> Result<RankTable> {
    let mut rows = Vec::with_capacity(per_split.len());
    for (split_id, scores) in per_split {
        let mut indexed = Vec::with_capacity(method_order.len());
        for (order_idx, method) in method_order.iter().enumerate() {
            let score = scores
                .iter()
                .find(|(m, _)| m == method)
                .map(|(_, s)| *s)
                .ok_or_else(|| {
                    Error::invalid(format!("split {split_id}: missing score for {method}"))
                })?;
            indexed.push((method.clone(), score, order_idx));
        }
        indexed.sort_by(|a, b| {
            let ord = if higher_better {
                b.1.partial_cmp(&a.1).unwrap()
            } else {
                a.1.partial_cmp(&b.1).unwrap()
            };
            ord.then(a.2.cmp(&b.2))
        });
        let mut ranks: Vec<(String, usize)> = Vec::with_capacity(indexed.len());
        for (rank, (method, _, _)) in indexed.into_iter().enumerate() {
            ranks.push((method, rank + 1));
        }
        // Report in configured method order.
        ranks.sort_by_key(|(m, _)| method_order.iter().position(|x| x == m).unwrap());
        rows.push((split_id.clone(), ranks));
    }
    Ok(RankTable {
        metric: metric.to_string(),
        method_order: method_order.to_vec(),
        rows,
    })
}

/// Items paired with their uncertainty, most extreme first.
pub type ScoredItems<T> = Vec<(f64, T)>;

/// Stable-sorted extremes: the k most certain and k most uncertain items.
pub fn top_bottom_k<T: Clone>(
    uncertainty: &[f64],
    items: &[T],
    k: usize,
) -> Result<(ScoredItems<T>, ScoredItems<T>)> {
    if uncertainty.len() != items.len() {
        return Err(Error::shape(format!(
            "{} uncertainties vs {} items",
            uncertainty.len(),
            items.len()
        )));
    }
    if k > items.len() {
        return Err(Error::invalid(format!(
            "k = {k} exceeds {} items",
            items.len()
        )));
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| uncertainty[a].partial_cmp(&uncertainty[b]).unwrap());
    let certain = order[..k]
        .iter()
        .map(|&i| (uncertainty[i], items[i].clone()))
        .collect();
    let uncertain = order[items.len() - k..]
        .iter()
        .rev()
        .map(|&i| (uncertainty[i], items[i].clone()))
        .collect();
    Ok((certain, uncertain))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_cases() {
        assert_eq!(accuracy(&[1, 0], &[1, 0]).unwrap(), 1.0);
        assert_eq!(accuracy(&[1, 0, 0, 0], &[1, 1, 0, 0]).unwrap(), 0.75);
        assert_eq!(accuracy(&[0, 1], &[1, 0]).unwrap(), 0.0);
        assert!(accuracy(&[], &[]).is_err());
    }

    #[test]
    fn balanced_accuracy_cases() {
        // recalls 0.5 (class 1) and 1.0 (class 0)
        assert_eq!(
            balanced_accuracy(&[1, 0, 0, 0], &[1, 1, 0, 0]).unwrap(),
            0.75
        );
        // balanced data: equals accuracy
        assert_eq!(
            balanced_accuracy(&[1, 0, 1, 0], &[1, 1, 0, 0]).unwrap(),
            accuracy(&[1, 0, 1, 0], &[1, 1, 0, 0]).unwrap()
        );
        // single-class ground truth: recall of that class
        assert_eq!(
            balanced_accuracy(&[1, 0, 1], &[1, 1, 1]).unwrap(),
            2.0 / 3.0
        );
    }

    #[test]
    fn auroc_cases() {
        assert_eq!(auroc(&[0.9, 0.8], &[0.1, 0.2]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.8, 0.3], &[0.5, 0.1]).unwrap(), 0.75);
        assert_eq!(auroc(&[0.5, 0.5], &[0.5, 0.5]).unwrap(), 0.5);
        assert!(auroc(&[], &[0.1]).is_err());
    }

    #[test]
    fn auroc_matches_pairwise_enumeration() {
        use rand::Rng as _;
        let mut rng = crate::rng::rng_from_seed(5);
        for _ in 0..50 {
            let np = rng.gen_range(1..40);
            let nn = rng.gen_range(1..40);
            // Coarse grid so ties actually occur.
            let pos: Vec<f64> = (0..np)
                .map(|_| rng.gen_range(0..10) as f64 / 10.0)
                .collect();
            let neg: Vec<f64> = (0..nn)
                .map(|_| rng.gen_range(0..10) as f64 / 10.0)
                .collect();
            let fast = auroc(&pos, &neg).unwrap();
            let mut acc = 0.0;
            for &p in &pos {
                for &q in &neg {
                    acc += if p > q {
                        1.0
                    } else if p == q {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
            let brute = acc / (np * nn) as f64;
            assert!((fast - brute).abs() < 1e-12, "{fast} vs {brute}");
        }
    }

    #[test]
    fn ece_cases() {
        // perfectly confident, perfectly right
        let (e, _) = ece(&[1.0, 1.0], &[true, true], 10).unwrap();
        assert_eq!(e, 0.0);
        // single occupied bin: |0.5 - 0.65| = 0.15
        let (e, bins) = ece(&[0.6, 0.7], &[true, false], 2).unwrap();
        assert!((e - 0.15).abs() < 1e-15);
        assert_eq!(bins.bins[1].count, 2);
        assert_eq!(bins.bins[0].count, 0);
    }

    #[test]
    fn ece_constant_confidence_identity() {
        // ECE of a constant-confidence set is |mean accuracy - confidence|.
        let conf = vec![0.73; 100];
        let correct: Vec<bool> = (0..100).map(|i| i < 60).collect();
        let (e, _) = ece(&conf, &correct, 10).unwrap();
        assert!((e - (0.73 - 0.6)).abs() < 1e-12);
    }

    #[test]
    fn ece_bin_edges_left_open_right_closed() {
        // 0.1 lands in bin 0 ([0, 0.1]), just above lands in bin 1.
        let (_, bins) = ece(&[0.1], &[true], 10).unwrap();
        assert_eq!(bins.bins[0].count, 1);
        let (_, bins) = ece(&[0.10000000000000002], &[true], 10).unwrap();
        assert_eq!(bins.bins[1].count, 1);
        // 0 sits in the first (closed) bin; 1.0 in the last.
        let (_, bins) = ece(&[0.0, 1.0], &[true, true], 10).unwrap();
        assert_eq!(bins.bins[0].count, 1);
        assert_eq!(bins.bins[9].count, 1);
    }

    #[test]
    fn ece_partitions_all_samples() {
        use rand::Rng as _;
        let mut rng = crate::rng::rng_from_seed(10);
        let conf: Vec<f64> = (0..500).map(|_| rng.gen()).collect();
        let correct: Vec<bool> = (0..500).map(|_| rng.gen()).collect();
        let (_, bins) = ece(&conf, &correct, 7).unwrap();
        assert_eq!(bins.bins.iter().map(|b| b.count).sum::<usize>(), 500);
    }

    #[test]
    fn reject_curve_all_correct_is_flat_one() {
        let curve = accuracy_reject_curve(
            &[0.5, 0.1, 0.9],
            &[0, 1, 0],
            &[0, 1, 0],
            RejectMetric::Accuracy,
        )
        .unwrap();
        assert!(curve.points.iter().all(|&(_, y)| y == 1.0));
        assert_eq!(curve.auarc, 1.0);
    }

    #[test]
    fn reject_curve_single_error_most_uncertain() {
        // n=4, 3 correct, the error strictly most uncertain:
        // points (0, 0.75), (0.25, 1), (0.5, 1), (0.75, 1).
        let curve = accuracy_reject_curve(
            &[0.1, 0.9, 0.2, 0.3],
            &[0, 1, 0, 1],
            &[0, 0, 0, 1],
            RejectMetric::Accuracy,
        )
        .unwrap();
        let expect = [(0.0, 0.75), (0.25, 1.0), (0.5, 1.0), (0.75, 1.0)];
        for (p, e) in curve.points.iter().zip(&expect) {
            assert!((p.0 - e.0).abs() < 1e-15 && (p.1 - e.1).abs() < 1e-15);
        }
        assert!((curve.auarc - 0.9375).abs() < 1e-15);
    }

    #[test]
    fn reject_curve_oracle_uncertainty_is_monotone() {
        use rand::Rng as _;
        let mut rng = crate::rng::rng_from_seed(3);
        let n = 500;
        let truth: Vec<usize> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        let predicted: Vec<usize> = truth
            .iter()
            .map(|&t| if rng.gen::<f64>() < 0.8 { t } else { 1 - t })
            .collect();
        let uncertainty: Vec<f64> = predicted
            .iter()
            .zip(&truth)
            .map(|(p, t)| if p == t { 0.0 } else { 1.0 })
            .collect();
        let curve = accuracy_reject_curve(&uncertainty, &predicted, &truth, RejectMetric::Accuracy)
            .unwrap();
        for w in curve.points.windows(2) {
            assert!(w[1].1 >= w[0].1 - 1e-12);
        }
        // reaches 1.0 exactly at the error rate
        let errors = predicted.iter().zip(&truth).filter(|(p, t)| p != t).count();
        let at_error_rate = curve.points[errors].1;
        assert_eq!(at_error_rate, 1.0);
        // anti-oracle: non-increasing
        let anti: Vec<f64> = uncertainty.iter().map(|u| 1.0 - u).collect();
        let curve =
            accuracy_reject_curve(&anti, &predicted, &truth, RejectMetric::Accuracy).unwrap();
        for w in curve.points.windows(2) {
            assert!(w[1].1 <= w[0].1 + 1e-12);
        }
    }

    #[test]
    fn reject_curve_balanced_handles_vanishing_class() {
        // Class 1 has one sample, rejected first; the curve must stay defined.
        let curve = accuracy_reject_curve(
            &[0.9, 0.1, 0.2],
            &[1, 0, 0],
            &[1, 0, 0],
            RejectMetric::BalancedAccuracy,
        )
        .unwrap();
        assert_eq!(curve.points.len(), 3);
        assert!(curve.points.iter().all(|(_, y)| y.is_finite()));
    }

    #[test]
    fn auarc_bounded_by_curve_extremes() {
        use rand::Rng as _;
        let mut rng = crate::rng::rng_from_seed(4);
        let n = 200;
        let truth: Vec<usize> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        let predicted: Vec<usize> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        let unc: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
        let curve =
            accuracy_reject_curve(&unc, &predicted, &truth, RejectMetric::Accuracy).unwrap();
        let lo = curve
            .points
            .iter()
            .map(|p| p.1)
            .fold(f64::INFINITY, f64::min);
        let hi = curve
            .points
            .iter()
            .map(|p| p.1)
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(curve.auarc >= lo - 1e-12 && curve.auarc <= hi + 1e-12);
    }

    #[test]
    fn quantiles_type7() {
        // {1,2,3,4}: Q1 = 1.75, Q3 = 3.25, IQR = 1.5
        let (median, iqr) = per_slide_median(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!((median - 2.5).abs() < 1e-15);
        assert!((iqr - 1.5).abs() < 1e-15);

        let (median, _) = per_slide_median(&[0.2, 0.4, 0.9]).unwrap();
        assert_eq!(median, 0.4);
        let (median, _) = per_slide_median(&[0.4, 0.2]).unwrap();
        assert!((median - 0.3).abs() < 1e-15);
    }

    #[test]
    fn per_slide_median_permutation_invariant() {
        let a = per_slide_median(&[0.3, 0.9, 0.1, 0.5]).unwrap();
        let b = per_slide_median(&[0.9, 0.1, 0.5, 0.3]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rank_methods_cases() {
        let order: Vec<String> = ["A", "B", "C"].iter().map(|s| s.to_string()).collect();
        let per_split = vec![(
            "s0".to_string(),
            vec![
                ("A".to_string(), 0.9),
                ("B".to_string(), 0.8),
                ("C".to_string(), 0.85),
            ],
        )];
        let table = rank_methods(&per_split, true, &order, "auarc").unwrap();
        let ranks = &table.rows[0].1;
        assert_eq!(ranks[0], ("A".to_string(), 1));
        assert_eq!(ranks[1], ("B".to_string(), 3));
        assert_eq!(ranks[2], ("C".to_string(), 2));

        // lower-better: ECE
        let order: Vec<String> = ["A", "B"].iter().map(|s| s.to_string()).collect();
        let per_split = vec![(
            "s0".to_string(),
            vec![("A".to_string(), 0.02), ("B".to_string(), 0.01)],
        )];
        let table = rank_methods(&per_split, false, &order, "ece").unwrap();
        assert_eq!(
            table.rows[0].1,
            vec![("A".to_string(), 2), ("B".to_string(), 1)]
        );
    }

    #[test]
    fn rank_rows_are_permutations() {
        use rand::Rng as _;
        let mut rng = crate::rng::rng_from_seed(6);
        let order: Vec<String> = (0..8).map(|i| format!("m{i}")).collect();
        let per_split: Vec<(String, Vec<(String, f64)>)> = (0..5)
            .map(|s| {
                (
                    format!("split{s}"),
                    order.iter().map(|m| (m.clone(), rng.gen())).collect(),
                )
            })
            .collect();
        let table = rank_methods(&per_split, true, &order, "auarc").unwrap();
        for (_, ranks) in &table.rows {
            let mut seen: Vec<usize> = ranks.iter().map(|(_, r)| *r).collect();
            seen.sort_unstable();
            assert_eq!(seen, (1..=8).collect::<Vec<_>>());
        }
    }

    #[test]
    fn rank_single_method_is_always_first() {
        let order = vec!["only".to_string()];
        let per_split: Vec<(String, Vec<(String, f64)>)> = (0..3)
            .map(|s| (format!("s{s}"), vec![("only".to_string(), 0.5)]))
            .collect();
        let table = rank_methods(&per_split, true, &order, "auarc").unwrap();
        for (_, ranks) in &table.rows {
            assert_eq!(ranks, &vec![("only".to_string(), 1)]);
        }
    }

    #[test]
    fn rank_methods_rejects_missing_scores() {
        let order: Vec<String> = ["A", "B"].iter().map(|s| s.to_string()).collect();
        let per_split = vec![("s0".to_string(), vec![("A".to_string(), 0.5)])];
        assert!(rank_methods(&per_split, true, &order, "x").is_err());
    }

    #[test]
    fn top_bottom_uncertain_list_dominated_by_high_entropy_group() {
        // Tiles flagged as border carry strictly higher entropy scores, so
        // the uncertain extreme consists of border tiles and the certain
        // extreme of interior tiles.
        let border_flags: Vec<bool> = (0..40).map(|i| i % 4 == 0).collect();
        let unc: Vec<f64> = border_flags
            .iter()
            .enumerate()
            .map(|(i, &b)| {
                if b {
                    0.8 + 0.001 * i as f64
                } else {
                    0.1 + 0.001 * i as f64
                }
            })
            .collect();
        let items: Vec<usize> = (0..40).collect();
        let k = 10;
        let (certain, uncertain) = top_bottom_k(&unc, &items, k).unwrap();
        assert!(uncertain.iter().all(|(_, i)| border_flags[*i]));
        assert!(certain.iter().all(|(_, i)| !border_flags[*i]));
    }

    #[test]
    fn top_bottom_extremes() {
        let unc = vec![0.3, 0.1, 0.9, 0.5];
        let items = vec!["a", "b", "c", "d"];
        let (certain, uncertain) = top_bottom_k(&unc, &items, 2).unwrap();
        assert_eq!(certain, vec![(0.1, "b"), (0.3, "a")]);
        assert_eq!(uncertain, vec![(0.9, "c"), (0.5, "d")]);

        // k = n: both lists are the full set in opposite orders
        let (certain, uncertain) = top_bottom_k(&unc, &items, 4).unwrap();
        let mut rev = uncertain.clone();
        rev.reverse();
        assert_eq!(certain, rev);

        assert!(top_bottom_k(&unc, &items, 5).is_err());
    }
}
