//! File-based evaluation: read a run's prediction CSVs and emit report
//! files (summaries, reject curves, calibration bins, tile extremes,
//! confidence maps). Produces the same numbers as the in-process evaluation
//! done by `run`, which the round-trip tests rely on.

use crate::record::{FileEntry, RunRecord};
use crate::report::{
    eval_slide_predictions, eval_tile_predictions, mean_curve, set_basics, summaries_json,
    SlideTrialStats, TileTrialStats,
};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use uqbench_core::error::{Error, Result};
use uqbench_core::io;
use uqbench_core::methods::PredictionSet;
use uqbench_core::metrics::{top_bottom_k, RejectCurve};
use uqbench_core::rng::fnv1a64;
use uqbench_core::sim::Dataset;
use uqbench_core::slide::stitch_confidence_map;

const PARTITIONS: [&str; 2] = ["id", "ood"];

pub struct EvaluateOutput {
    pub reports_dir: PathBuf,
    pub summaries: serde_json::Value,
}

struct ReportSink {
    root: PathBuf,
    entries: Vec<FileEntry>,
}

impl ReportSink {
    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, bytes)?;
        self.entries.push(FileEntry {
            path: rel.to_string(),
            fnv64: format!("{:016x}", fnv1a64(bytes)),
        });
        Ok(())
    }
}

pub fn cmd_evaluate(run_dir: &Path) -> Result<EvaluateOutput> {
    let record = RunRecord::load(run_dir)?;
    let cfg = &record.config;

    let slides = io::read_slides_json(&mut io::open_file(&run_dir.join("dataset/slides.json"))?)?;
    let dataset = io::read_dataset_csv(
        &mut io::open_file(&run_dir.join("dataset/tiles.csv"))?,
        slides,
    )?;
    let manifest =
        io::read_split_manifest(&mut io::open_file(&run_dir.join("dataset/split.json"))?)?;

    let mut sink = ReportSink {
        root: run_dir.join("reports"),
        entries: Vec::new(),
    };
    let mut tile: BTreeMap<(String, String), Vec<TileTrialStats>> = BTreeMap::new();
    let mut slide: BTreeMap<String, Vec<SlideTrialStats>> = BTreeMap::new();

    // Confidence maps follow the ensemble when available (its mean
    // prediction is the smoothest), otherwise the first configured method.
    let map_method = if cfg.methods.iter().any(|m| m == "ensemble") {
        "ensemble".to_string()
    } else {
        cfg.methods[0].clone()
    };

    for method in &cfg.methods {
        for part in PARTITIONS {
            let mut acc_curves: Vec<RejectCurve> = Vec::new();
            let mut bal_curves: Vec<RejectCurve> = Vec::new();
            for trial in 0..cfg.trials {
                let rel = format!("predictions/{method}__trial{trial}__{part}.csv");
                let path = run_dir.join(&rel);
                if !path.is_file() {
                    continue;
                }
                let set = io::read_predictions_csv(&mut io::open_file(&path)?, method)?;
                let eval = eval_tile_predictions(&set, cfg.evaluation.ece_bins)?;

                let mut blob = Vec::new();
                io::write_curve_csv(&eval.curve_accuracy, &mut blob)?;
                sink.write(
                    &format!("curves/{method}__trial{trial}__{part}__accuracy.csv"),
                    &blob,
                )?;
                let mut blob = Vec::new();
                io::write_curve_csv(&eval.curve_balanced, &mut blob)?;
                sink.write(
                    &format!("curves/{method}__trial{trial}__{part}__balanced_accuracy.csv"),
                    &blob,
                )?;
                let mut blob = Vec::new();
                io::write_bins_csv(&eval.bins, &mut blob)?;
                sink.write(
                    &format!("calibration/{method}__trial{trial}__{part}.csv"),
                    &blob,
                )?;

                if trial == 0 {
                    write_scores_csv(&mut sink, method, part, &set)?;
                    let mut text = String::from("slide_id,accuracy,balanced_accuracy,ece,auarc\n");
                    for s in &eval.per_slide {
                        writeln!(
                            text,
                            "{},{},{},{},{}",
                            s.slide_id, s.accuracy, s.balanced_accuracy, s.ece, s.auarc
                        )
                        .ok();
                    }
                    sink.write(&format!("per_slide/{method}__{part}.csv"), text.as_bytes())?;
                }
                if trial == 0 && part == "id" {
                    write_tile_extremes(
                        &mut sink,
                        method,
                        &set,
                        &dataset,
                        cfg.evaluation.top_bottom_k,
                    )?;
                    if cfg.evaluation.confidence_maps && *method == map_method {
                        write_confidence_maps(
                            &mut sink,
                            method,
                            &set,
                            &dataset,
                            &manifest.test_slides,
                            cfg.data.grid_w,
                            cfg.data.grid_h,
                        )?;
                    }
                }

                acc_curves.push(eval.curve_accuracy);
                bal_curves.push(eval.curve_balanced);
                tile.entry((method.clone(), part.to_string()))
                    .or_default()
                    .push(eval.stats);
            }
            for (label, curves) in [
                ("accuracy", &acc_curves),
                ("balanced_accuracy", &bal_curves),
            ] {
                let refs: Vec<&RejectCurve> = curves.iter().collect();
                if let Some(points) = mean_curve(&refs) {
                    let mut text = String::from("reject_fraction,metric_value\n");
                    for (x, y) in points {
                        writeln!(text, "{x},{y}").ok();
                    }
                    sink.write(
                        &format!("curves/{method}__mean__{part}__{label}.csv"),
                        text.as_bytes(),
                    )?;
                }
            }
        }
    }

    // Slide-level prediction files: slide__<tag>__trial<k>.csv
    let slide_tags: Vec<String> = {
        let mut tags: Vec<String> = record
            .files
            .iter()
            .filter_map(|f| {
                let name = f.path.strip_prefix("predictions/slide__")?;
                let tag = name.split("__trial").next()?;
                Some(tag.to_string())
            })
            .collect();
        tags.sort();
        tags.dedup();
        tags
    };
    for tag in &slide_tags {
        for trial in 0..cfg.trials {
            let rel = format!("predictions/slide__{tag}__trial{trial}.csv");
            let path = run_dir.join(&rel);
            if !path.is_file() {
                continue;
            }
            let set = io::read_predictions_csv(&mut io::open_file(&path)?, tag)?;
            match eval_slide_predictions(&set) {
                Ok(eval) => {
                    let mut blob = Vec::new();
                    io::write_curve_csv(&eval.curve, &mut blob)?;
                    sink.write(&format!("slide_curves/{tag}__trial{trial}.csv"), &blob)?;
                    slide.entry(tag.clone()).or_default().push(eval.stats);
                }
                Err(_) => continue, // e.g. single-class slide test set
            }
        }
    }

    let summaries = summaries_json(&tile, &slide);
    sink.write(
        "summary.json",
        (serde_json::to_string_pretty(&summaries).map_err(|e| Error::invalid(e.to_string()))?
            + "\n")
            .as_bytes(),
    )?;
    write_auarc_table(&mut sink, cfg, &summaries)?;
    write_slide_median_table(&mut sink, cfg, &summaries)?;
    write_slide_level_table(&mut sink, &slide_tags, &summaries)?;

    // Report manifest; numbers above are byte-reproducible, so this is too.
    let index = serde_json::json!({
        "run": record.config_hash,
        "files": sink.entries,
    });
    let blob =
        serde_json::to_string_pretty(&index).map_err(|e| Error::invalid(e.to_string()))? + "\n";
    std::fs::write(sink.root.join("evaluate.json"), blob)?;

    Ok(EvaluateOutput {
        reports_dir: sink.root,
        summaries,
    })
}

fn write_scores_csv(
    sink: &mut ReportSink,
    method: &str,
    part: &str,
    set: &PredictionSet,
) -> Result<()> {
    use uqbench_core::measures::{score_set, Measure};
    let mut blob = Vec::new();
    let mut scores = score_set(set, Measure::Confidence)?;
    scores.extend(score_set(set, Measure::NormedEntropy)?);
    if set.num_draws() > 1 {
        scores.extend(score_set(set, Measure::Variance)?);
    }
    io::write_scores_csv(&scores, &mut blob)?;
    sink.write(&format!("scores/{method}__{part}.csv"), &blob)
}

fn write_tile_extremes(
    sink: &mut ReportSink,
    method: &str,
    set: &PredictionSet,
    dataset: &Dataset,
    k: usize,
) -> Result<()> {
    let (uncertainty, _, _, _) = set_basics(set)?;
    let items: Vec<usize> = (0..set.len()).collect();
    let k = k.min(items.len());
    let (certain, uncertain) = top_bottom_k(&uncertainty, &items, k)?;
    let mut text = String::from("kind,rank,sample_id,slide_id,label,coverage,border,uncertainty\n");
    for (kind, list) in [("certain", &certain), ("uncertain", &uncertain)] {
        for (rank, (u, idx)) in list.iter().enumerate() {
            let m = set.meta()[*idx];
            let tile = &dataset.tiles[m.sample_id as usize];
            writeln!(
                text,
                "{kind},{rank},{},{},{},{},{},{u}",
                m.sample_id,
                m.slide_id,
                m.label,
                tile.coverage,
                u8::from(tile.border)
            )
            .ok();
        }
    }
    sink.write(
        &format!("tiles/{method}__id__extremes.csv"),
        text.as_bytes(),
    )
}

fn write_confidence_maps(
    sink: &mut ReportSink,
    method: &str,
    set: &PredictionSet,
    dataset: &Dataset,
    test_slides: &[u32],
    grid_w: usize,
    grid_h: usize,
) -> Result<()> {
    for &slide_id in test_slides {
        let mut cells = Vec::new();
        for (i, m) in set.meta().iter().enumerate() {
            if m.slide_id == slide_id {
                let tile = &dataset.tiles[m.sample_id as usize];
                cells.push((tile.x, tile.y, set.mean_prediction(i)[1]));
            }
        }
        if cells.is_empty() {
            continue;
        }
        let map = stitch_confidence_map(slide_id, grid_w, grid_h, &cells)?;
        let mut blob = Vec::new();
        io::write_pgm(&map, &mut blob)?;
        sink.write(&format!("maps/slide{slide_id}__{method}.pgm"), &blob)?;
        let mut blob = Vec::new();
        io::write_pgm_mask(&map, &mut blob)?;
        sink.write(&format!("maps/slide{slide_id}__{method}.mask.pgm"), &blob)?;
        let mut blob = Vec::new();
        io::write_map_csv(&map, &mut blob)?;
        sink.write(&format!("maps/slide{slide_id}__{method}.csv"), &blob)?;
    }
    Ok(())
}

fn summary_value(summaries: &serde_json::Value, path: &[&str]) -> Option<f64> {
    let mut v = summaries;
    for p in path {
        v = v.get(p)?;
    }
    v.as_f64()
}

fn write_auarc_table(
    sink: &mut ReportSink,
    cfg: &crate::config::ExperimentConfig,
    summaries: &serde_json::Value,
) -> Result<()> {
    let mut text = String::from("method,partition,auarc_mean,auarc_std\n");
    for method in &cfg.methods {
        for part in PARTITIONS {
            let mean = summary_value(summaries, &["tile", method, part, "auarc", "mean"]);
            let std = summary_value(summaries, &["tile", method, part, "auarc", "std"]);
            if let (Some(mean), Some(std)) = (mean, std) {
                writeln!(text, "{method},{part},{mean},{std}").ok();
            }
        }
    }
    sink.write("auarc.csv", text.as_bytes())
}

fn write_slide_median_table(
    sink: &mut ReportSink,
    cfg: &crate::config::ExperimentConfig,
    summaries: &serde_json::Value,
) -> Result<()> {
    let mut text = String::from(
        "method,partition,balanced_accuracy_median,balanced_accuracy_iqr,ece_median,ece_iqr\n",
    );
    for method in &cfg.methods {
        for part in PARTITIONS {
            let ba_med = summary_value(
                summaries,
                &[
                    "tile",
                    method,
                    part,
                    "slide_median_balanced_accuracy",
                    "median",
                ],
            );
            let ba_iqr = summary_value(
                summaries,
                &[
                    "tile",
                    method,
                    part,
                    "slide_median_balanced_accuracy",
                    "iqr",
                ],
            );
            let ece_med = summary_value(
                summaries,
                &["tile", method, part, "slide_median_ece", "median"],
            );
            let ece_iqr = summary_value(
                summaries,
                &["tile", method, part, "slide_median_ece", "iqr"],
            );
            if let (Some(a), Some(b), Some(c), Some(d)) = (ba_med, ba_iqr, ece_med, ece_iqr) {
                writeln!(text, "{method},{part},{a},{b},{c},{d}").ok();
            }
        }
    }
    sink.write("slide_medians.csv", text.as_bytes())
}

fn write_slide_level_table(
    sink: &mut ReportSink,
    tags: &[String],
    summaries: &serde_json::Value,
) -> Result<()> {
    let mut text = String::from("method,accuracy_mean,auroc_mean,auroc_std,auarc_mean\n");
    for tag in tags {
        let acc = summary_value(summaries, &["slide", tag, "accuracy", "mean"]);
        let auroc_mean = summary_value(summaries, &["slide", tag, "auroc", "mean"]);
        let auroc_std = summary_value(summaries, &["slide", tag, "auroc", "std"]);
        let auarc = summary_value(summaries, &["slide", tag, "auarc", "mean"]);
        if let (Some(a), Some(b), Some(c), Some(d)) = (acc, auroc_mean, auroc_std, auarc) {
            writeln!(text, "{tag},{a},{b},{c},{d}").ok();
        }
    }
    sink.write("slide_summary.csv", text.as_bytes())
}

/// Evaluate an externally produced prediction CSV on its own: emits the
/// per-trial statistics, the reject curves and the calibration bins.
pub fn cmd_evaluate_external(
    predictions: &Path,
    tag: &str,
    ece_bins: usize,
    out: &Path,
) -> Result<EvaluateOutput> {
    let set = io::read_predictions_csv(&mut io::open_file(predictions)?, tag)?;
    let eval = eval_tile_predictions(&set, ece_bins)?;
    std::fs::create_dir_all(out)?;
    let mut sink = ReportSink {
        root: out.to_path_buf(),
        entries: Vec::new(),
    };
    let mut blob = Vec::new();
    io::write_curve_csv(&eval.curve_accuracy, &mut blob)?;
    sink.write(&format!("{tag}__accuracy.csv"), &blob)?;
    let mut blob = Vec::new();
    io::write_curve_csv(&eval.curve_balanced, &mut blob)?;
    sink.write(&format!("{tag}__balanced_accuracy.csv"), &blob)?;
    let mut blob = Vec::new();
    io::write_bins_csv(&eval.bins, &mut blob)?;
    sink.write(&format!("{tag}__calibration.csv"), &blob)?;

    let summaries = serde_json::json!({
        "tag": tag,
        "stats": serde_json::to_value(&eval.stats).map_err(|e| Error::invalid(e.to_string()))?,
    });
    let text =
        serde_json::to_string_pretty(&summaries).map_err(|e| Error::invalid(e.to_string()))? + "\n";
    sink.write(&format!("{tag}__summary.json"), text.as_bytes())?;
    Ok(EvaluateOutput {
        reports_dir: sink.root,
        summaries,
    })
}
