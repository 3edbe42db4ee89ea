//! Cross-split method ranking over the five leave-one-out runs.

use crate::record::RunRecord;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use uqbench_core::error::{Error, Result};
use uqbench_core::metrics::{rank_methods, RankTable};

/// (metric key in the summaries, aggregate, higher-is-better)
const RANK_METRICS: [(&str, &str, bool); 3] = [
    ("auarc", "mean", true),
    ("slide_median_balanced_accuracy", "median", true),
    ("slide_median_ece", "median", false),
];

pub struct RankOutput {
    pub dir: PathBuf,
    pub tables: Vec<(String, RankTable)>,
}

/// Rank all methods per metric and partition across the five leave-one-out
/// runs. Every center 0..4 must be present exactly once.
pub fn cmd_rank(run_dirs: &[PathBuf], out: &Path) -> Result<RankOutput> {
    let mut records: BTreeMap<String, RunRecord> = BTreeMap::new();
    for dir in run_dirs {
        let record = RunRecord::load(dir)?;
        let kind = record.config.split.kind.clone();
        if records.insert(kind.clone(), record).is_some() {
            return Err(Error::invalid(format!("duplicate split {kind}")));
        }
    }
    let expected: Vec<String> = (0..5).map(|c| format!("loo{c}")).collect();
    let missing: Vec<&String> = expected
        .iter()
        .filter(|k| !records.contains_key(*k))
        .collect();
    if !missing.is_empty() {
        return Err(Error::invalid(format!(
            "rank needs all five leave-one-out runs; missing: {}",
            missing
                .iter()
                .map(|s| s.as_str())
                .collect::<Vec<_>>()
                .join(", ")
        )));
    }

    let method_order = records[&expected[0]].config.methods.clone();
    for record in records.values() {
        if record.config.methods != method_order {
            return Err(Error::invalid(
                "all leave-one-out runs must configure the same method list",
            ));
        }
    }

    let mut tables = Vec::new();
    let mut csv = String::from("partition,metric,split,method,rank\n");
    for partition in ["id", "ood"] {
        for (metric, agg, higher_better) in RANK_METRICS {
            let mut per_split = Vec::new();
            for split in &expected {
                let record = &records[split];
                let mut scores = Vec::new();
                for method in &method_order {
                    let value = record
                        .summaries
                        .get("tile")
                        .and_then(|v| v.get(method))
                        .and_then(|v| v.get(partition))
                        .and_then(|v| v.get(metric))
                        .and_then(|v| v.get(agg))
                        .and_then(|v| v.as_f64())
                        .ok_or_else(|| {
                            Error::invalid(format!(
                                "split {split}: missing {metric} for {method} on {partition}"
                            ))
                        })?;
                    scores.push((method.clone(), value));
                }
                per_split.push((split.clone(), scores));
            }
            let table = rank_methods(&per_split, higher_better, &method_order, metric)?;
            for (split, ranks) in &table.rows {
                for (method, rank) in ranks {
                    writeln!(csv, "{partition},{metric},{split},{method},{rank}").ok();
                }
            }
            tables.push((partition.to_string(), table));
        }
    }

    std::fs::create_dir_all(out)?;
    let json = serde_json::json!({
        "method_order": method_order,
        "tables": tables
            .iter()
            .map(|(partition, t)| {
                serde_json::json!({
                    "partition": partition,
                    "metric": t.metric,
                    "rows": t.rows
                        .iter()
                        .map(|(split, ranks)| {
                            serde_json::json!({
                                "split": split,
                                "ranks": ranks.iter().cloned().collect::<BTreeMap<String, usize>>(),
                            })
                        })
                        .collect::<Vec<_>>(),
                })
            })
            .collect::<Vec<_>>(),
    });
    std::fs::write(
        out.join("rank.json"),
        serde_json::to_string_pretty(&json).map_err(|e| Error::invalid(e.to_string()))? + "\n",
    )?;
    std::fs::write(out.join("rank.csv"), csv)?;
    Ok(RankOutput {
        dir: out.to_path_buf(),
        tables,
    })
}
