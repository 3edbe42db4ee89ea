//! Experiment orchestration: dataset preparation, the per-trial training
//! pools, prediction emission and run persistence.
//!
//! Everything is seeded from the experiment's master seed: trial seeds, per
//! member initialization and training seeds, prediction sampling seeds and
//! noise injection seeds all derive from it, so a run is reproducible byte
//! for byte.

use crate::config::{parse_method_kind, ExperimentConfig};
use crate::record::{FailureNote, FileEntry, FileSink, RunRecord};
use crate::report::{
    eval_slide_predictions, eval_tile_predictions, summaries_json, SlideTrialStats, TileTrialStats,
};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use uqbench_core::error::{Error, Result};
use uqbench_core::io;
use uqbench_core::linalg::Matrix;
use uqbench_core::methods::{
    predict_with_spec, AugmentationSpec, MethodKind, PredictionSet, SampleMeta,
};
use uqbench_core::nn::train::{train, LabeledSet};
use uqbench_core::nn::{DenseKind, Network};
use uqbench_core::rng::{derive_seed, rng_from_seed};
use uqbench_core::sim::{
    generate_dataset, inject_border_noise, inject_uniform_noise, label_tiles, make_split, Dataset,
    NoiseKind, SplitManifest, SplitSpec,
};
use uqbench_core::slide::{
    aggregate_top_q, slide_ensemble_predictions, slide_mcdo_predictions, train_mil,
    AttentionMILHead, Bag,
};

const HIDDEN_WIDTHS: [usize; 2] = [64, 64];

/// Dataset plus split as trained on and as evaluated on. They differ when a
/// noise variant retrains at the 0% coverage threshold or with flipped
/// labels; evaluation always uses the clean labels at the configured
/// threshold.
pub struct RunData {
    pub eval_dataset: Dataset,
    pub eval_manifest: SplitManifest,
    pub train_dataset: Dataset,
    pub train_manifest: SplitManifest,
    pub augmentation: Option<AugmentationSpec>,
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<RunData> {
    cfg.validate()?;
    let split_kind = cfg.split.parse_kind()?;
    let split_seed = derive_seed(cfg.data.seed, 0x5711);

    let eval_dataset = generate_dataset(&cfg.data)?;
    let eval_manifest = make_split(&eval_dataset, &SplitSpec::new(split_kind, split_seed))?;

    let (train_dataset, train_manifest) = match &cfg.noise {
        None => (eval_dataset.clone(), eval_manifest.clone()),
        Some(noise) => {
            let kind = noise.parse_kind()?;
            let tau = kind.coverage_threshold();
            let mut dataset = eval_dataset.clone();
            label_tiles(&mut dataset.tiles, tau)?;
            let manifest = make_split(&dataset, &SplitSpec::new(split_kind, split_seed))?;
            let mut rng = rng_from_seed(derive_seed(cfg.data.seed, 0x401c));
            match kind {
                NoiseKind::Uniform => {
                    inject_uniform_noise(
                        &mut dataset.tiles,
                        &manifest.train,
                        noise.flip_prob,
                        &mut rng,
                    )?;
                }
                NoiseKind::Border => {
                    inject_border_noise(
                        &mut dataset.tiles,
                        &manifest.train,
                        noise.flip_prob,
                        &mut rng,
                    )?;
                }
                NoiseKind::Threshold25 | NoiseKind::Threshold0 => {}
            }
            (dataset, manifest)
        }
    };

    // TTA needs train/test augmentation parity.
    let wants_tta = cfg.methods.iter().any(|m| m.starts_with("tta"));
    if wants_tta && !cfg.augmentation.enabled {
        return Err(Error::config(
            "tta methods require augmentation.enabled = true",
        ));
    }
    let feature_std = mean_feature_std(&train_dataset, &train_manifest.train);
    let augmentation = cfg.augmentation.to_spec(feature_std);
    if let Some(a) = &augmentation {
        a.validate()?;
    }

    Ok(RunData {
        eval_dataset,
        eval_manifest,
        train_dataset,
        train_manifest,
        augmentation,
    })
}

fn mean_feature_std(dataset: &Dataset, indices: &[usize]) -> f64 {
    if indices.is_empty() {
        return 1.0;
    }
    let f = dataset.feature_dim;
    let n = indices.len() as f64;
    let mut mean = vec![0.0; f];
    for &i in indices {
        for (m, v) in mean.iter_mut().zip(&dataset.tiles[i].features) {
            *m += v / n;
        }
    }
    let mut var = vec![0.0; f];
    for &i in indices {
        for j in 0..f {
            let d = dataset.tiles[i].features[j] - mean[j];
            var[j] += d * d / n;
        }
    }
    var.iter().map(|v| v.sqrt()).sum::<f64>() / f as f64
}

/// Write the dataset files; byte-identical given identical config.
pub fn write_dataset(sink: &mut FileSink, cfg: &ExperimentConfig, data: &RunData) -> Result<()> {
    let mut blob = Vec::new();
    io::write_dataset_csv(&data.eval_dataset, &mut blob)?;
    sink.write("dataset/tiles.csv", &blob)?;

    let mut blob = Vec::new();
    io::write_slides_json(&data.eval_dataset.slides, &mut blob)?;
    sink.write("dataset/slides.json", &blob)?;

    let mut blob = Vec::new();
    io::write_split_manifest(&data.eval_manifest, &mut blob)?;
    sink.write("dataset/split.json", &blob)?;

    if cfg.noise.is_some() {
        let mut blob = Vec::new();
        io::write_dataset_csv(&data.train_dataset, &mut blob)?;
        sink.write("dataset/tiles_train.csv", &blob)?;
        let mut blob = Vec::new();
        io::write_split_manifest(&data.train_manifest, &mut blob)?;
        sink.write("dataset/split_train.json", &blob)?;
    }
    Ok(())
}

pub fn cmd_generate(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let data = prepare(cfg)?;
    let run_dir = cfg.run_dir();
    let mut sink = FileSink::new(&run_dir);
    write_dataset(&mut sink, cfg, &data)?;
    Ok(run_dir)
}

fn labeled_set(dataset: &Dataset, indices: &[usize]) -> Result<LabeledSet> {
    let mut features = Matrix::zeros(indices.len(), dataset.feature_dim);
    let mut labels = Vec::with_capacity(indices.len());
    for (r, &i) in indices.iter().enumerate() {
        let tile = &dataset.tiles[i];
        features.row_mut(r).copy_from_slice(&tile.features);
        labels.push(tile.label.as_class().ok_or_else(|| {
            Error::invalid(format!("tile {i} is excluded and cannot be trained on"))
        })?);
    }
    LabeledSet::new(features, labels)
}

fn partition_inputs(dataset: &Dataset, indices: &[usize]) -> (Matrix, Vec<SampleMeta>) {
    let mut features = Matrix::zeros(indices.len(), dataset.feature_dim);
    let mut meta = Vec::with_capacity(indices.len());
    for (r, &i) in indices.iter().enumerate() {
        let tile = &dataset.tiles[i];
        features.row_mut(r).copy_from_slice(&tile.features);
        meta.push(SampleMeta {
            sample_id: i as u64,
            slide_id: tile.slide_id,
            center_id: tile.center_id,
            label: tile.label.as_class().unwrap_or(0) as u8,
        });
    }
    (features, meta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum PoolKind {
    Plain,
    Mcdo,
    Svi,
}

fn pool_requirements(cfg: &ExperimentConfig) -> Result<BTreeMap<PoolKind, usize>> {
    let mut need: BTreeMap<PoolKind, usize> = BTreeMap::new();
    let mut bump = |kind: PoolKind, n: usize| {
        let e = need.entry(kind).or_insert(0);
        *e = (*e).max(n);
    };
    for name in &cfg.methods {
        match parse_method_kind(name)? {
            MethodKind::Baseline | MethodKind::Tta => bump(PoolKind::Plain, 1),
            MethodKind::Ensemble => bump(PoolKind::Plain, cfg.method_params.n_members),
            MethodKind::Mcdo => bump(PoolKind::Mcdo, 1),
            MethodKind::Svi => bump(PoolKind::Svi, 1),
            MethodKind::EnsembleOf(inner) => match *inner {
                MethodKind::Mcdo => bump(PoolKind::Mcdo, cfg.method_params.n_members),
                MethodKind::Svi => bump(PoolKind::Svi, cfg.method_params.n_members),
                MethodKind::Tta => bump(PoolKind::Plain, cfg.method_params.n_members),
                _ => return Err(Error::config("unsupported ensemble inner method")),
            },
        }
    }
    Ok(need)
}

fn pool_for_kind(kind: &MethodKind) -> PoolKind {
    match kind {
        MethodKind::Baseline | MethodKind::Ensemble | MethodKind::Tta => PoolKind::Plain,
        MethodKind::Mcdo => PoolKind::Mcdo,
        MethodKind::Svi => PoolKind::Svi,
        MethodKind::EnsembleOf(inner) => match **inner {
            MethodKind::Mcdo => PoolKind::Mcdo,
            MethodKind::Svi => PoolKind::Svi,
            _ => PoolKind::Plain,
        },
    }
}

pub struct TrialResult {
    pub entries: Vec<FileEntry>,
    pub tile_stats: Vec<((String, String), TileTrialStats)>,
    pub slide_stats: Vec<(String, SlideTrialStats)>,
    pub failures: Vec<FailureNote>,
}

fn train_pool_member(
    cfg: &ExperimentConfig,
    data: &RunData,
    kind: PoolKind,
    member_seed: u64,
    train_set: &LabeledSet,
    val_set: &LabeledSet,
) -> Result<Network> {
    let mut init_rng = rng_from_seed(derive_seed(member_seed, 1));
    let dense_kind = match kind {
        PoolKind::Svi => DenseKind::Variational {
            prior_weight: cfg.method_params.prior_weight,
            rho_init: cfg.method_params.rho_init,
        },
        _ => DenseKind::Deterministic,
    };
    let dropout = match kind {
        PoolKind::Mcdo => Some(cfg.method_params.dropout_p),
        _ => None,
    };
    let net = Network::mlp(
        cfg.data.feature_dim,
        &HIDDEN_WIDTHS,
        2,
        dense_kind,
        dropout,
        &mut init_rng,
    )?;
    let train_cfg = cfg.train.to_train_config(derive_seed(member_seed, 2));
    let (trained, _) = train(
        net,
        train_set,
        val_set,
        &train_cfg,
        data.augmentation.as_ref(),
    )?;
    Ok(trained)
}

fn run_trial(cfg: &ExperimentConfig, data: &RunData, run_dir: &Path, trial: usize) -> TrialResult {
    let mut result = TrialResult {
        entries: Vec::new(),
        tile_stats: Vec::new(),
        slide_stats: Vec::new(),
        failures: Vec::new(),
    };
    let trial_seed = derive_seed(cfg.data.seed, 0x7000 + trial as u64);

    let (train_set, val_set) = match (
        labeled_set(&data.train_dataset, &data.train_manifest.train),
        labeled_set(&data.train_dataset, &data.train_manifest.val),
    ) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => {
            result.failures.push(FailureNote {
                stage: "prepare".into(),
                method: None,
                trial,
                message: e.to_string(),
            });
            return result;
        }
    };

    // Train the network pools this trial's methods need.
    let requirements = match pool_requirements(cfg) {
        Ok(r) => r,
        Err(e) => {
            result.failures.push(FailureNote {
                stage: "configure".into(),
                method: None,
                trial,
                message: e.to_string(),
            });
            return result;
        }
    };
    let mut pools: BTreeMap<PoolKind, Vec<Option<Network>>> = BTreeMap::new();
    for (&kind, &count) in &requirements {
        let offset = match kind {
            PoolKind::Plain => 0u64,
            PoolKind::Mcdo => 100,
            PoolKind::Svi => 200,
        };
        let mut members = Vec::with_capacity(count);
        for m in 0..count {
            let member_seed = derive_seed(trial_seed, offset + m as u64);
            match train_pool_member(cfg, data, kind, member_seed, &train_set, &val_set) {
                Ok(net) => members.push(Some(net)),
                Err(e) => {
                    result.failures.push(FailureNote {
                        stage: "train".into(),
                        method: Some(format!("{kind:?}")),
                        trial,
                        message: e.to_string(),
                    });
                    members.push(None);
                }
            }
        }
        pools.insert(kind, members);
    }

    let partitions: [(&str, &Vec<usize>); 2] = [
        ("id", &data.eval_manifest.test_id),
        ("ood", &data.eval_manifest.test_ood),
    ];

    // Slide-level bookkeeping: per tag, per slide prediction rows.
    let slide_level = cfg.slide_level.enabled;
    let mut slide_sets: Vec<(String, PredictionSet)> = Vec::new();
    let test_slide_ids: Vec<u32> = if slide_level {
        let mut ids = data.eval_manifest.test_slides.clone();
        for s in &data.eval_dataset.slides {
            if data.eval_manifest.ood_centers.contains(&s.center_id) {
                ids.push(s.slide_id);
            }
        }
        ids.sort_unstable();
        ids
    } else {
        Vec::new()
    };

    for (method_idx, name) in cfg.methods.iter().enumerate() {
        let spec = match cfg.method_spec(name) {
            Ok(mut s) => {
                s.augmentation = data
                    .augmentation
                    .clone()
                    .unwrap_or_else(AugmentationSpec::identity);
                s
            }
            Err(e) => {
                result.failures.push(FailureNote {
                    stage: "configure".into(),
                    method: Some(name.clone()),
                    trial,
                    message: e.to_string(),
                });
                continue;
            }
        };
        let pool_kind = pool_for_kind(&spec.kind);
        let pool = &pools[&pool_kind];
        let needed = match &spec.kind {
            MethodKind::Ensemble | MethodKind::EnsembleOf(_) => spec.n_members,
            _ => 1,
        };
        let members: Option<Vec<Network>> =
            pool[..needed.min(pool.len())].iter().cloned().collect();
        let Some(members) = members else {
            result.failures.push(FailureNote {
                stage: "predict".into(),
                method: Some(name.clone()),
                trial,
                message: "a required pool member failed to train".into(),
            });
            continue;
        };

        let mut per_method_slide_rows: Vec<(u32, Vec<f64>)> = Vec::new();
        for (part_idx, (part_name, indices)) in partitions.iter().enumerate() {
            let (inputs, meta) = partition_inputs(&data.eval_dataset, indices);
            let mut rng = rng_from_seed(derive_seed(
                trial_seed,
                0x9000 + (method_idx * 4 + part_idx) as u64,
            ));
            let set = match predict_with_spec(&spec, &members, &inputs, &meta, &mut rng) {
                Ok(s) => s,
                Err(e) => {
                    result.failures.push(FailureNote {
                        stage: "predict".into(),
                        method: Some(name.clone()),
                        trial,
                        message: e.to_string(),
                    });
                    continue;
                }
            };

            let rel = format!("predictions/{name}__trial{trial}__{part_name}.csv");
            if let Err(e) = write_direct(run_dir, &rel, &mut result.entries, |w| {
                io::write_predictions_csv(&set, w)
            }) {
                result.failures.push(FailureNote {
                    stage: "write".into(),
                    method: Some(name.clone()),
                    trial,
                    message: e.to_string(),
                });
            }

            match eval_tile_predictions(&set, cfg.evaluation.ece_bins) {
                Ok(eval) => result
                    .tile_stats
                    .push(((name.clone(), part_name.to_string()), eval.stats)),
                Err(e) => result.failures.push(FailureNote {
                    stage: "evaluate".into(),
                    method: Some(name.clone()),
                    trial,
                    message: e.to_string(),
                }),
            }

            // Top-q slide aggregation of this method's tile predictions.
            if slide_level {
                let mut by_slide: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
                for (i, m) in set.meta().iter().enumerate() {
                    by_slide.entry(m.slide_id).or_default().push(i);
                }
                for (slide_id, idx) in by_slide {
                    match set
                        .subset(&idx)
                        .and_then(|sub| aggregate_top_q(&sub, cfg.slide_level.top_q))
                    {
                        Ok(agg) => per_method_slide_rows.push((slide_id, agg.probs)),
                        Err(e) => result.failures.push(FailureNote {
                            stage: "slide_topq".into(),
                            method: Some(name.clone()),
                            trial,
                            message: e.to_string(),
                        }),
                    }
                }
            }
        }

        if slide_level && !per_method_slide_rows.is_empty() {
            per_method_slide_rows.sort_by_key(|(id, _)| *id);
            match slide_set_from_rows(
                &data.eval_dataset,
                &per_method_slide_rows,
                &format!("{name}_topq"),
            ) {
                Ok(set) => slide_sets.push((format!("{name}_topq"), set)),
                Err(e) => result.failures.push(FailureNote {
                    stage: "slide_topq".into(),
                    method: Some(name.clone()),
                    trial,
                    message: e.to_string(),
                }),
            }
        }
    }

    // Attention-MIL slide methods.
    if slide_level {
        match run_mil_for_trial(cfg, data, trial_seed, &test_slide_ids) {
            Ok(mut sets) => slide_sets.append(&mut sets),
            Err(e) => result.failures.push(FailureNote {
                stage: "mil".into(),
                method: None,
                trial,
                message: e.to_string(),
            }),
        }
    }

    for (tag, set) in &slide_sets {
        let rel = format!("predictions/slide__{tag}__trial{trial}.csv");
        if let Err(e) = write_direct(run_dir, &rel, &mut result.entries, |w| {
            io::write_predictions_csv(set, w)
        }) {
            result.failures.push(FailureNote {
                stage: "write".into(),
                method: Some(tag.clone()),
                trial,
                message: e.to_string(),
            });
        }
        match eval_slide_predictions(set) {
            Ok(eval) => result.slide_stats.push((tag.clone(), eval.stats)),
            Err(e) => result.failures.push(FailureNote {
                stage: "slide_evaluate".into(),
                method: Some(tag.clone()),
                trial,
                message: e.to_string(),
            }),
        }
    }

    result
}

/// Bags of every tile of each slide, keyed by slide id.
pub fn build_bags(dataset: &Dataset, slide_ids: &[u32]) -> Vec<Bag> {
    slide_ids
        .iter()
        .map(|&slide_id| {
            let info = dataset
                .slides
                .iter()
                .find(|s| s.slide_id == slide_id)
                .expect("slide exists");
            let idx = dataset.slide_tiles(slide_id);
            let mut features = Matrix::zeros(idx.len(), dataset.feature_dim);
            for (r, &i) in idx.iter().enumerate() {
                features
                    .row_mut(r)
                    .copy_from_slice(&dataset.tiles[i].features);
            }
            Bag {
                slide_id,
                center_id: info.center_id,
                features,
                label: info.slide_label as usize,
            }
        })
        .collect()
}

/// Stratified slide split for MIL training: per class, slides are shuffled
/// with a seed shared across trials and cut at the train fraction.
pub fn mil_slide_split(
    dataset: &Dataset,
    manifest: &SplitManifest,
    train_fraction: f64,
    seed: u64,
) -> (Vec<u32>, Vec<u32>) {
    let mut train = Vec::new();
    let mut val = Vec::new();
    for class in 0..2u8 {
        let mut ids: Vec<u32> = dataset
            .slides
            .iter()
            .filter(|s| {
                manifest.id_centers.contains(&s.center_id)
                    && !manifest.test_slides.contains(&s.slide_id)
                    && s.slide_label == class
            })
            .map(|s| s.slide_id)
            .collect();
        ids.sort_unstable();
        let mut rng = rng_from_seed(derive_seed(seed, 0x51de + class as u64));
        uqbench_core::rng::shuffle(&mut ids, &mut rng);
        let n_train = ((ids.len() as f64) * train_fraction).floor() as usize;
        let n_train = n_train.clamp(usize::from(ids.len() > 1), ids.len().saturating_sub(1));
        train.extend_from_slice(&ids[..n_train]);
        val.extend_from_slice(&ids[n_train..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

fn run_mil_for_trial(
    cfg: &ExperimentConfig,
    data: &RunData,
    trial_seed: u64,
    test_slide_ids: &[u32],
) -> Result<Vec<(String, PredictionSet)>> {
    let sl = &cfg.slide_level;
    let (train_ids, val_ids) = mil_slide_split(
        &data.eval_dataset,
        &data.eval_manifest,
        sl.mil_train_fraction,
        cfg.data.seed,
    );
    let train_bags = build_bags(&data.eval_dataset, &train_ids);
    let val_bags = build_bags(&data.eval_dataset, &val_ids);
    let test_bags = build_bags(&data.eval_dataset, test_slide_ids);

    let mut heads = Vec::with_capacity(sl.mil_members);
    for member in 0..sl.mil_members {
        let member_seed = derive_seed(trial_seed, 300 + member as u64);
        let mut init_rng = rng_from_seed(derive_seed(member_seed, 1));
        let head = AttentionMILHead::new(
            data.eval_dataset.feature_dim,
            sl.mil_hidden,
            2,
            sl.mil_dropout,
            &mut init_rng,
        )?;
        let mil_cfg = sl.to_mil_config(derive_seed(member_seed, 2));
        let (trained, _) = train_mil(head, &train_bags, &val_bags, &mil_cfg)?;
        heads.push(trained);
    }

    let ens = slide_ensemble_predictions(&heads, &test_bags)?;
    let mut rng = rng_from_seed(derive_seed(trial_seed, 0x3A0));
    let mcdo = slide_mcdo_predictions(&heads[0], &test_bags, sl.mil_mc_passes, &mut rng)?;
    Ok(vec![
        ("mil_ensemble".to_string(), ens),
        ("mil_mcdo".to_string(), mcdo),
    ])
}

fn slide_set_from_rows(
    dataset: &Dataset,
    rows: &[(u32, Vec<f64>)],
    tag: &str,
) -> Result<PredictionSet> {
    let meta: Vec<SampleMeta> = rows
        .iter()
        .map(|(slide_id, _)| {
            let info = dataset
                .slides
                .iter()
                .find(|s| s.slide_id == *slide_id)
                .expect("slide exists");
            SampleMeta {
                sample_id: *slide_id as u64,
                slide_id: *slide_id,
                center_id: info.center_id,
                label: info.slide_label,
            }
        })
        .collect();
    let probs = rows
        .iter()
        .map(|(_, p)| Matrix::from_rows(std::slice::from_ref(p)))
        .collect::<Result<Vec<_>>>()?;
    PredictionSet::new(meta, probs, tag)
}

fn write_direct(
    run_dir: &Path,
    rel: &str,
    entries: &mut Vec<FileEntry>,
    f: impl FnOnce(&mut Vec<u8>) -> Result<()>,
) -> Result<()> {
    let mut blob = Vec::new();
    f(&mut blob)?;
    let path = run_dir.join(rel);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(&path, &blob)?;
    entries.push(FileEntry {
        path: rel.to_string(),
        fnv64: format!("{:016x}", uqbench_core::rng::fnv1a64(&blob)),
    });
    Ok(())
}

/// Train every method over every trial, write prediction files and the run
/// record. `jobs` trials execute concurrently; outputs are deterministic
/// regardless of the job count.
pub fn cmd_run(cfg: &ExperimentConfig, jobs: usize) -> Result<PathBuf> {
    let data = prepare(cfg)?;
    let run_dir = cfg.run_dir();
    let mut sink = FileSink::new(&run_dir);
    write_dataset(&mut sink, cfg, &data)?;

    let trials = cfg.trials;
    let jobs = jobs.clamp(1, trials);
    let mut results: Vec<Option<TrialResult>> = (0..trials).map(|_| None).collect();

    if jobs == 1 {
        for (trial, slot) in results.iter_mut().enumerate() {
            *slot = Some(run_trial(cfg, &data, &run_dir, trial));
        }
    } else {
        let next = std::sync::atomic::AtomicUsize::new(0);
        let slots = std::sync::Mutex::new(&mut results);
        std::thread::scope(|scope| {
            for _ in 0..jobs {
                scope.spawn(|| loop {
                    let trial = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                    if trial >= trials {
                        break;
                    }
                    let out = run_trial(cfg, &data, &run_dir, trial);
                    slots.lock().unwrap()[trial] = Some(out);
                });
            }
        });
    }

    let mut files = sink.entries;
    let mut failures = Vec::new();
    let mut tile: BTreeMap<(String, String), Vec<TileTrialStats>> = BTreeMap::new();
    let mut slide: BTreeMap<String, Vec<SlideTrialStats>> = BTreeMap::new();
    for result in results.into_iter().flatten() {
        files.extend(result.entries);
        failures.extend(result.failures);
        for (key, stats) in result.tile_stats {
            tile.entry(key).or_default().push(stats);
        }
        for (key, stats) in result.slide_stats {
            slide.entry(key).or_default().push(stats);
        }
    }

    let record = RunRecord {
        config: cfg.clone(),
        config_hash: format!("{:016x}", cfg.config_hash()),
        trial_seeds: (0..trials)
            .map(|t| derive_seed(cfg.data.seed, 0x7000 + t as u64))
            .collect(),
        files,
        failures,
        summaries: summaries_json(&tile, &slide),
    };
    record.save(&run_dir)?;
    Ok(run_dir)
}

/// Non-excluded tile indices of one partition name.
pub fn partition_indices<'a>(manifest: &'a SplitManifest, name: &str) -> Option<&'a Vec<usize>> {
    match name {
        "train" => Some(&manifest.train),
        "val" => Some(&manifest.val),
        "id" => Some(&manifest.test_id),
        "ood" => Some(&manifest.test_ood),
        _ => None,
    }
}

/// Accuracy at a rejection fraction for acceptance-style checks.
pub fn accuracy_at_reject(set: &PredictionSet, fraction: f64) -> Result<f64> {
    let eval = eval_tile_predictions(set, 10)?;
    Ok(eval.curve_accuracy.value_at(fraction))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentConfig;
    use uqbench_core::sim::TileLabel;

    fn tiny_config(dir: &str) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.data.slides_per_center = 3;
        cfg.data.grid_w = 6;
        cfg.data.grid_h = 6;
        cfg.data.seed = 7;
        cfg.train.max_epochs = 2;
        cfg.trials = 1;
        cfg.methods = vec!["baseline".into()];
        cfg.slide_level.enabled = false;
        cfg.augmentation.enabled = false;
        cfg.out_dir = std::env::temp_dir().join(dir);
        cfg
    }

    #[test]
    fn prepare_builds_matching_train_and_eval() {
        let cfg = tiny_config("uqbench_prepare");
        let data = prepare(&cfg).unwrap();
        assert_eq!(
            data.eval_dataset.tiles.len(),
            data.train_dataset.tiles.len()
        );
        assert_eq!(data.eval_manifest, data.train_manifest);
    }

    #[test]
    fn noise_variant_changes_train_labels_only() {
        let mut cfg = tiny_config("uqbench_noise_prepare");
        cfg.noise = Some(crate::config::NoiseSection {
            kind: "uniform".into(),
            flip_prob: 1.0,
        });
        let data = prepare(&cfg).unwrap();
        // evaluation labels keep the configured threshold
        let eval_excluded = data
            .eval_dataset
            .tiles
            .iter()
            .filter(|t| t.label == TileLabel::Excluded)
            .count();
        // the 0%-threshold training dataset has no exclusions
        let train_excluded = data
            .train_dataset
            .tiles
            .iter()
            .filter(|t| t.label == TileLabel::Excluded)
            .count();
        assert_eq!(train_excluded, 0);
        // with flip_prob 1 every training tile label is flipped relative to
        // its 0%-threshold labeling
        let mut relabeled = data.eval_dataset.clone();
        label_tiles(&mut relabeled.tiles, 0.0).unwrap();
        for &i in &data.train_manifest.train {
            assert_ne!(data.train_dataset.tiles[i].label, relabeled.tiles[i].label);
        }
        // validation untouched
        for &i in &data.train_manifest.val {
            assert_eq!(data.train_dataset.tiles[i].label, relabeled.tiles[i].label);
        }
        let _ = eval_excluded;
    }

    #[test]
    fn pool_requirements_cover_methods() {
        let mut cfg = tiny_config("x");
        cfg.methods = vec!["baseline".into(), "mcdo_ensemble".into(), "svi".into()];
        let req = pool_requirements(&cfg).unwrap();
        assert_eq!(req[&PoolKind::Plain], 1);
        assert_eq!(req[&PoolKind::Mcdo], 5);
        assert_eq!(req[&PoolKind::Svi], 1);
    }

    #[test]
    fn mil_split_is_stratified_and_disjoint() {
        let cfg = tiny_config("uqbench_mil_split");
        let data = prepare(&cfg).unwrap();
        let (train, val) = mil_slide_split(&data.eval_dataset, &data.eval_manifest, 0.8, 1);
        for id in &train {
            assert!(!val.contains(id));
        }
        // no test slides leak into MIL training
        for id in train.iter().chain(&val) {
            assert!(!data.eval_manifest.test_slides.contains(id));
        }
    }
}
