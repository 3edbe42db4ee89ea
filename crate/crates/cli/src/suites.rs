//! Label-noise suite: run the configured methods on the four dataset
//! variants (25% threshold, 0% threshold, uniform flips, border flips),
//! training on the noisy labels and evaluating on the clean test set, then
//! emit a comparative report.

use crate::config::{ExperimentConfig, NoiseSection};
use crate::pipeline::cmd_run;
use crate::record::RunRecord;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use uqbench_core::error::{Error, Result};

pub const NOISE_VARIANTS: [&str; 4] = ["25%", "0%", "uniform", "border"];

pub struct NoiseSuiteOutput {
    pub dir: PathBuf,
    pub variant_runs: BTreeMap<String, PathBuf>,
    pub summary: serde_json::Value,
}

pub fn cmd_noise_suite(base: &ExperimentConfig, jobs: usize) -> Result<NoiseSuiteOutput> {
    let flip_prob = base.noise.as_ref().map(|n| n.flip_prob).unwrap_or(0.25);
    let mut variant_runs = BTreeMap::new();
    let mut variant_summaries = serde_json::Map::new();

    for kind in NOISE_VARIANTS {
        let mut cfg = base.clone();
        cfg.noise = Some(NoiseSection {
            kind: kind.to_string(),
            flip_prob,
        });
        let run_dir = cmd_run(&cfg, jobs)?;
        let record = RunRecord::load(&run_dir)?;
        variant_summaries.insert(kind.to_string(), record.summaries);
        variant_runs.insert(kind.to_string(), run_dir);
    }

    // Table rows: variant x method with slide-median accuracy, balanced
    // accuracy and ECE on the clean ID test set (median + IQR over trials).
    let mut csv = String::from(
        "variant,method,accuracy_median,accuracy_iqr,balanced_accuracy_median,balanced_accuracy_iqr,ece_median,ece_iqr\n",
    );
    for kind in NOISE_VARIANTS {
        let summary = &variant_summaries[kind];
        for method in &base.methods {
            let get = |metric: &str, agg: &str| -> Option<f64> {
                summary
                    .get("tile")?
                    .get(method)?
                    .get("id")?
                    .get(metric)?
                    .get(agg)?
                    .as_f64()
            };
            let cells = [
                get("slide_median_accuracy", "median"),
                get("slide_median_accuracy", "iqr"),
                get("slide_median_balanced_accuracy", "median"),
                get("slide_median_balanced_accuracy", "iqr"),
                get("slide_median_ece", "median"),
                get("slide_median_ece", "iqr"),
            ];
            if cells.iter().all(Option::is_some) {
                writeln!(
                    csv,
                    "{kind},{method},{},{},{},{},{},{}",
                    cells[0].unwrap(),
                    cells[1].unwrap(),
                    cells[2].unwrap(),
                    cells[3].unwrap(),
                    cells[4].unwrap(),
                    cells[5].unwrap()
                )
                .ok();
            }
        }
    }

    let dir = base
        .out_dir
        .join(format!("noise_suite_{:016x}", base.config_hash()));
    std::fs::create_dir_all(&dir)?;
    let summary = serde_json::json!({
        "flip_prob": flip_prob,
        "variants": variant_summaries,
        "runs": variant_runs
            .iter()
            .map(|(k, v)| (k.clone(), v.display().to_string()))
            .collect::<BTreeMap<String, String>>(),
    });
    std::fs::write(
        dir.join("summary.json"),
        serde_json::to_string_pretty(&summary).map_err(|e| Error::invalid(e.to_string()))? + "\n",
    )?;
    std::fs::write(dir.join("summary.csv"), csv)?;
    Ok(NoiseSuiteOutput {
        dir,
        variant_runs,
        summary,
    })
}
