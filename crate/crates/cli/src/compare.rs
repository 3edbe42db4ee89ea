//! Uncertainty-measure comparison: AUARC per (method x measure), with
//! confidence, normalized entropy and across-draw variance driving the
//! rejection order.

use crate::record::RunRecord;
use crate::report::summarize;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use uqbench_core::error::{Error, Result};
use uqbench_core::io;
use uqbench_core::measures::{score_set, Measure};
use uqbench_core::metrics::{accuracy_reject_curve, RejectMetric};

const MEASURES: [Measure; 3] = [
    Measure::Confidence,
    Measure::NormedEntropy,
    Measure::Variance,
];

pub struct CompareOutput {
    pub dir: PathBuf,
    pub summary: serde_json::Value,
    pub notes: Vec<String>,
}

pub fn cmd_compare_measures(run_dir: &Path) -> Result<CompareOutput> {
    let record = RunRecord::load(run_dir)?;
    let cfg = &record.config;

    // (method, measure, partition) -> per-trial AUARC
    let mut auarcs: BTreeMap<(String, String, String), Vec<f64>> = BTreeMap::new();
    let mut notes: Vec<String> = Vec::new();

    for method in &cfg.methods {
        for part in ["id", "ood"] {
            for trial in 0..cfg.trials {
                let rel = format!("predictions/{method}__trial{trial}__{part}.csv");
                let path = run_dir.join(&rel);
                if !path.is_file() {
                    continue;
                }
                let set = io::read_predictions_csv(&mut io::open_file(&path)?, method)?;
                let predicted: Vec<usize> =
                    (0..set.len()).map(|i| set.predicted_label(i)).collect();
                let truth: Vec<usize> = set.meta().iter().map(|m| m.label as usize).collect();
                for measure in MEASURES {
                    if measure == Measure::Variance && set.num_draws() == 1 {
                        let note = format!(
                            "{method}/{part}: variance skipped (single draw); use confidence or entropy"
                        );
                        if !notes.contains(&note) {
                            notes.push(note);
                        }
                        continue;
                    }
                    let scores = score_set(&set, measure)?;
                    let uncertainty: Vec<f64> = scores.iter().map(|s| s.uncertainty()).collect();
                    let spread = uncertainty
                        .iter()
                        .cloned()
                        .fold(f64::NEG_INFINITY, f64::max)
                        - uncertainty.iter().cloned().fold(f64::INFINITY, f64::min);
                    if measure == Measure::Variance && spread < 1e-12 {
                        let note = format!(
                            "{method}/{part}: variance degenerate (all scores within 1e-12); rejection falls back to sample order"
                        );
                        if !notes.contains(&note) {
                            notes.push(note);
                        }
                    }
                    let curve = accuracy_reject_curve(
                        &uncertainty,
                        &predicted,
                        &truth,
                        RejectMetric::Accuracy,
                    )?;
                    auarcs
                        .entry((method.clone(), measure.name().to_string(), part.to_string()))
                        .or_default()
                        .push(curve.auarc);
                }
            }
        }
    }

    let mut csv = String::from("method,measure,partition,auarc_mean,auarc_std,trials\n");
    let mut json_rows = Vec::new();
    for ((method, measure, part), values) in &auarcs {
        let s = summarize(values);
        writeln!(
            csv,
            "{method},{measure},{part},{},{},{}",
            s.mean, s.std, s.n
        )
        .ok();
        json_rows.push(serde_json::json!({
            "method": method,
            "measure": measure,
            "partition": part,
            "auarc": serde_json::to_value(&s).map_err(|e| Error::invalid(e.to_string()))?,
        }));
    }
    let summary = serde_json::json!({ "rows": json_rows, "notes": notes });

    let dir = run_dir.join("reports");
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("measures.csv"), &csv)?;
    std::fs::write(
        dir.join("measures.json"),
        serde_json::to_string_pretty(&summary).map_err(|e| Error::invalid(e.to_string()))? + "\n",
    )?;
    Ok(CompareOutput {
        dir,
        summary,
        notes,
    })
}
