//! Evaluation of prediction sets into trial statistics and summaries.
//!
//! Both `run` (in-process) and `evaluate` (from prediction files) route
//! through these functions, so file-based evaluation reproduces the
//! in-process numbers exactly.

use serde::Serialize;
use std::collections::BTreeMap;
use uqbench_core::error::Result;
use uqbench_core::measures::{score_set, Measure};
use uqbench_core::methods::PredictionSet;
use uqbench_core::metrics::{
    accuracy, accuracy_reject_curve, auroc, balanced_accuracy, ece, per_slide_median,
    CalibrationBins, RejectCurve, RejectMetric, SliceResult,
};

/// Pooled and per-slide-median statistics of one (method, trial, partition).
#[derive(Debug, Clone, Serialize)]
pub struct TileTrialStats {
    pub accuracy: f64,
    pub balanced_accuracy: f64,
    pub ece: f64,
    /// Area under the pooled accuracy-reject curve, confidence ordering.
    pub auarc: f64,
    pub auarc_balanced: f64,
    /// Accuracy after rejecting the 20% most uncertain samples.
    pub accuracy_at_20_reject: f64,
    pub slide_median_accuracy: f64,
    pub slide_median_balanced_accuracy: f64,
    pub slide_median_ece: f64,
    pub slide_median_auarc: f64,
}

pub struct TileEval {
    pub stats: TileTrialStats,
    pub curve_accuracy: RejectCurve,
    pub curve_balanced: RejectCurve,
    pub bins: CalibrationBins,
    pub per_slide: Vec<SliceResult>,
}

/// (uncertainty, predicted labels, true labels, confidence) of a set, with
/// the uncertainty orientation-normalized from the confidence measure.
pub type SetBasics = (Vec<f64>, Vec<usize>, Vec<usize>, Vec<f64>);

pub fn set_basics(set: &PredictionSet) -> Result<SetBasics> {
    let scores = score_set(set, Measure::Confidence)?;
    let uncertainty: Vec<f64> = scores.iter().map(|s| s.uncertainty()).collect();
    let confidence: Vec<f64> = scores.iter().map(|s| s.value).collect();
    let predicted: Vec<usize> = (0..set.len()).map(|i| set.predicted_label(i)).collect();
    let truth: Vec<usize> = set.meta().iter().map(|m| m.label as usize).collect();
    Ok((uncertainty, predicted, truth, confidence))
}

pub fn eval_tile_predictions(set: &PredictionSet, ece_bins: usize) -> Result<TileEval> {
    let (uncertainty, predicted, truth, confidence) = set_basics(set)?;
    let correct: Vec<bool> = predicted.iter().zip(&truth).map(|(p, t)| p == t).collect();

    let curve_accuracy =
        accuracy_reject_curve(&uncertainty, &predicted, &truth, RejectMetric::Accuracy)?;
    let curve_balanced = accuracy_reject_curve(
        &uncertainty,
        &predicted,
        &truth,
        RejectMetric::BalancedAccuracy,
    )?;
    let (pooled_ece, bins) = ece(&confidence, &correct, ece_bins)?;

    // Per-slide metrics over that slide's tiles.
    let mut by_slide: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, m) in set.meta().iter().enumerate() {
        by_slide.entry(m.slide_id).or_default().push(i);
    }
    let mut per_slide = Vec::with_capacity(by_slide.len());
    for (slide_id, idx) in &by_slide {
        let p: Vec<usize> = idx.iter().map(|&i| predicted[i]).collect();
        let t: Vec<usize> = idx.iter().map(|&i| truth[i]).collect();
        let u: Vec<f64> = idx.iter().map(|&i| uncertainty[i]).collect();
        let c: Vec<f64> = idx.iter().map(|&i| confidence[i]).collect();
        let ok: Vec<bool> = idx.iter().map(|&i| correct[i]).collect();
        let (slide_ece, _) = ece(&c, &ok, ece_bins)?;
        per_slide.push(SliceResult {
            slide_id: *slide_id,
            accuracy: accuracy(&p, &t)?,
            balanced_accuracy: balanced_accuracy(&p, &t)?,
            ece: slide_ece,
            auarc: accuracy_reject_curve(&u, &p, &t, RejectMetric::Accuracy)?.auarc,
        });
    }

    let stats = TileTrialStats {
        accuracy: accuracy(&predicted, &truth)?,
        balanced_accuracy: balanced_accuracy(&predicted, &truth)?,
        ece: pooled_ece,
        auarc: curve_accuracy.auarc,
        auarc_balanced: curve_balanced.auarc,
        accuracy_at_20_reject: curve_accuracy.value_at(0.2),
        slide_median_accuracy: per_slide_median(
            &per_slide.iter().map(|s| s.accuracy).collect::<Vec<_>>(),
        )?
        .0,
        slide_median_balanced_accuracy: per_slide_median(
            &per_slide
                .iter()
                .map(|s| s.balanced_accuracy)
                .collect::<Vec<_>>(),
        )?
        .0,
        slide_median_ece: per_slide_median(&per_slide.iter().map(|s| s.ece).collect::<Vec<_>>())?.0,
        slide_median_auarc: per_slide_median(
            &per_slide.iter().map(|s| s.auarc).collect::<Vec<_>>(),
        )?
        .0,
    };
    Ok(TileEval {
        stats,
        curve_accuracy,
        curve_balanced,
        bins,
        per_slide,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SlideTrialStats {
    pub accuracy: f64,
    pub auroc: f64,
    pub auarc: f64,
}

pub struct SlideEval {
    pub stats: SlideTrialStats,
    pub curve: RejectCurve,
}

/// Slide-level evaluation: AUROC scores the positive class by its mean
/// predicted probability; rejection orders by confidence.
pub fn eval_slide_predictions(set: &PredictionSet) -> Result<SlideEval> {
    let (uncertainty, predicted, truth, _) = set_basics(set)?;
    let curve = accuracy_reject_curve(&uncertainty, &predicted, &truth, RejectMetric::Accuracy)?;
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for (i, &label) in truth.iter().enumerate() {
        let p1 = set.mean_prediction(i)[1];
        if label == 1 {
            pos.push(p1);
        } else {
            neg.push(p1);
        }
    }
    let stats = SlideTrialStats {
        accuracy: accuracy(&predicted, &truth)?,
        auroc: auroc(&pos, &neg)?,
        auarc: curve.auarc,
    };
    Ok(SlideEval { stats, curve })
}

/// Mean, sample standard deviation, median and IQR of the per-trial values,
/// which are kept alongside.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub median: f64,
    pub iqr: f64,
    pub n: usize,
    pub values: Vec<f64>,
}

pub fn summarize(values: &[f64]) -> Summary {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    let (median, iqr) = per_slide_median(values).expect("non-empty");
    Summary {
        mean,
        std,
        median,
        iqr,
        n,
        values: values.to_vec(),
    }
}

/// Build the per-method/per-partition summary JSON from per-trial stats.
/// `tile` maps (method, partition) to per-trial stats in trial order.
pub fn summaries_json(
    tile: &BTreeMap<(String, String), Vec<TileTrialStats>>,
    slide: &BTreeMap<String, Vec<SlideTrialStats>>,
) -> serde_json::Value {
    let mut tile_json = serde_json::Map::new();
    for ((method, partition), stats) in tile {
        let agg = |f: fn(&TileTrialStats) -> f64| {
            serde_json::to_value(summarize(&stats.iter().map(f).collect::<Vec<_>>())).unwrap()
        };
        let mut part = serde_json::Map::new();
        part.insert("completed_trials".into(), stats.len().into());
        part.insert("accuracy".into(), agg(|s| s.accuracy));
        part.insert("balanced_accuracy".into(), agg(|s| s.balanced_accuracy));
        part.insert("ece".into(), agg(|s| s.ece));
        part.insert("auarc".into(), agg(|s| s.auarc));
        part.insert("auarc_balanced".into(), agg(|s| s.auarc_balanced));
        part.insert(
            "accuracy_at_20_reject".into(),
            agg(|s| s.accuracy_at_20_reject),
        );
        part.insert(
            "slide_median_accuracy".into(),
            agg(|s| s.slide_median_accuracy),
        );
        part.insert(
            "slide_median_balanced_accuracy".into(),
            agg(|s| s.slide_median_balanced_accuracy),
        );
        part.insert("slide_median_ece".into(), agg(|s| s.slide_median_ece));
        part.insert("slide_median_auarc".into(), agg(|s| s.slide_median_auarc));
        tile_json
            .entry(method.clone())
            .or_insert_with(|| serde_json::Value::Object(serde_json::Map::new()))
            .as_object_mut()
            .unwrap()
            .insert(partition.clone(), serde_json::Value::Object(part));
    }

    let mut slide_json = serde_json::Map::new();
    for (method, stats) in slide {
        let agg = |f: fn(&SlideTrialStats) -> f64| {
            serde_json::to_value(summarize(&stats.iter().map(f).collect::<Vec<_>>())).unwrap()
        };
        let mut entry = serde_json::Map::new();
        entry.insert("completed_trials".into(), stats.len().into());
        entry.insert("accuracy".into(), agg(|s| s.accuracy));
        entry.insert("auroc".into(), agg(|s| s.auroc));
        entry.insert("auarc".into(), agg(|s| s.auarc));
        slide_json.insert(method.clone(), serde_json::Value::Object(entry));
    }

    let mut root = serde_json::Map::new();
    root.insert("tile".into(), serde_json::Value::Object(tile_json));
    root.insert("slide".into(), serde_json::Value::Object(slide_json));
    serde_json::Value::Object(root)
}

/// Element-wise mean of reject curves sharing one x-grid.
pub fn mean_curve(curves: &[&RejectCurve]) -> Option<Vec<(f64, f64)>> {
    let first = curves.first()?;
    let n = first.points.len();
    if curves.iter().any(|c| c.points.len() != n) {
        return None;
    }
    Some(
        (0..n)
            .map(|k| {
                let x = first.points[k].0;
                let y = curves.iter().map(|c| c.points[k].1).sum::<f64>() / curves.len() as f64;
                (x, y)
            })
            .collect(),
    )
}
