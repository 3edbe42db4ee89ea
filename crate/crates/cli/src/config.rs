//! Experiment configuration: one JSON document describing data generation,
//! split, methods, noise injection, training and evaluation for a benchmark
//! run. The run directory is named by a hash of the configuration (with the
//! output directory masked out), so identical configs land in the same place.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use uqbench_core::error::{Error, Result};
use uqbench_core::methods::{AugmentationSpec, MethodKind, MethodSpec};
use uqbench_core::nn::train::TrainConfig;
use uqbench_core::rng::fnv1a64;
use uqbench_core::sim::{GeneratorConfig, NoiseKind, SplitKind};
use uqbench_core::slide::MilTrainConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: GeneratorConfig,
    pub split: SplitSection,
    /// Method names in evaluation/report order.
    pub methods: Vec<String>,
    pub noise: Option<NoiseSection>,
    pub train: TrainSection,
    pub method_params: MethodParams,
    pub augmentation: AugmentationSection,
    pub evaluation: EvaluationSection,
    pub slide_level: SlideLevelSection,
    pub trials: usize,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: GeneratorConfig::default(),
            split: SplitSection::default(),
            methods: default_methods(),
            noise: None,
            train: TrainSection::default(),
            method_params: MethodParams::default(),
            augmentation: AugmentationSection::default(),
            evaluation: EvaluationSection::default(),
            slide_level: SlideLevelSection::default(),
            trials: 5,
            out_dir: PathBuf::from("runs"),
        }
    }
}

pub fn default_methods() -> Vec<String> {
    [
        "baseline",
        "ensemble",
        "mcdo",
        "mcdo_ensemble",
        "svi",
        "svi_ensemble",
        "tta",
        "tta_ensemble",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    /// "weak", "strong" or "loo<center>".
    pub kind: String,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection {
            kind: "weak".to_string(),
        }
    }
}

impl SplitSection {
    pub fn parse_kind(&self) -> Result<SplitKind> {
        match self.kind.as_str() {
            "weak" => Ok(SplitKind::Weak),
            "strong" => Ok(SplitKind::Strong),
            s if s.starts_with("loo") => {
                let c: u8 = s[3..]
                    .parse()
                    .map_err(|_| Error::invalid(format!("bad split kind {s:?}")))?;
                if c > 4 {
                    return Err(Error::invalid(format!(
                        "leave-one-out center {c} out of range"
                    )));
                }
                Ok(SplitKind::LeaveOneOut(c))
            }
            other => Err(Error::invalid(format!(
                "split kind must be weak, strong or loo<c>, got {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSection {
    /// "25%", "0%", "uniform" or "border".
    pub kind: String,
    pub flip_prob: f64,
}

impl Default for NoiseSection {
    fn default() -> Self {
        NoiseSection {
            kind: "uniform".to_string(),
            flip_prob: 0.25,
        }
    }
}

impl NoiseSection {
    pub fn parse_kind(&self) -> Result<NoiseKind> {
        match self.kind.as_str() {
            "25%" => Ok(NoiseKind::Threshold25),
            "0%" => Ok(NoiseKind::Threshold0),
            "uniform" => Ok(NoiseKind::Uniform),
            "border" => Ok(NoiseKind::Border),
            other => Err(Error::invalid(format!("unknown noise kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub max_epochs: usize,
    pub class_balanced: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            learning_rate: 1e-3,
            batch_size: 128,
            plateau_patience: 3,
            plateau_factor: 0.1,
            max_epochs: 30,
            class_balanced: true,
        }
    }
}

impl TrainSection {
    pub fn to_train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            plateau_patience: self.plateau_patience,
            plateau_factor: self.plateau_factor,
            max_epochs: self.max_epochs,
            seed,
            class_balanced: self.class_balanced,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MethodParams {
    pub n_members: usize,
    pub n_samples: usize,
    pub dropout_p: f64,
    /// Weight of the KL prior term in SVI training.
    pub prior_weight: f64,
    pub rho_init: f64,
}

impl Default for MethodParams {
    fn default() -> Self {
        MethodParams {
            n_members: 5,
            n_samples: 10,
            dropout_p: 0.3,
            prior_weight: 1e-3,
            rho_init: -3.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationSection {
    pub enabled: bool,
    /// Additive jitter sigma as a fraction of the mean training feature std.
    pub jitter_fraction: f64,
    pub scale_lo: f64,
    pub scale_hi: f64,
    pub rotate90: bool,
}

impl Default for AugmentationSection {
    fn default() -> Self {
        AugmentationSection {
            enabled: true,
            jitter_fraction: 0.1,
            scale_lo: 0.8,
            scale_hi: 1.2,
            rotate90: false,
        }
    }
}

impl AugmentationSection {
    pub fn to_spec(&self, train_feature_std: f64) -> Option<AugmentationSpec> {
        if !self.enabled {
            return None;
        }
        Some(AugmentationSpec {
            jitter_sigma: self.jitter_fraction * train_feature_std,
            scale_lo: self.scale_lo,
            scale_hi: self.scale_hi,
            rotate90: self.rotate90,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    pub ece_bins: usize,
    pub top_bottom_k: usize,
    pub confidence_maps: bool,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        EvaluationSection {
            ece_bins: 10,
            top_bottom_k: 16,
            confidence_maps: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SlideLevelSection {
    pub enabled: bool,
    /// Fraction of the most confident tiles averaged into the slide score.
    pub top_q: f64,
    pub mil_hidden: usize,
    pub mil_dropout: f64,
    pub mil_learning_rate: f64,
    pub mil_min_epochs: usize,
    pub mil_max_epochs: usize,
    pub mil_patience: usize,
    pub mil_members: usize,
    pub mil_mc_passes: usize,
    /// Fraction of non-test ID slides used for MIL training (rest validate).
    pub mil_train_fraction: f64,
}

impl Default for SlideLevelSection {
    fn default() -> Self {
        SlideLevelSection {
            enabled: true,
            top_q: 0.01,
            mil_hidden: 32,
            mil_dropout: 0.25,
            mil_learning_rate: 2e-4,
            mil_min_epochs: 50,
            mil_max_epochs: 200,
            mil_patience: 10,
            mil_members: 5,
            mil_mc_passes: 10,
            mil_train_fraction: 0.8,
        }
    }
}

impl SlideLevelSection {
    pub fn to_mil_config(&self, seed: u64) -> MilTrainConfig {
        MilTrainConfig {
            learning_rate: self.mil_learning_rate,
            min_epochs: self.mil_min_epochs,
            max_epochs: self.mil_max_epochs,
            patience: self.mil_patience,
            seed,
        }
    }
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| Error::parse(e.line(), format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.split.parse_kind()?;
        if self.trials == 0 {
            return Err(Error::invalid("trials must be >= 1"));
        }
        if self.methods.is_empty() {
            return Err(Error::invalid("at least one method required"));
        }
        for m in &self.methods {
            parse_method_kind(m)?;
        }
        if let Some(noise) = &self.noise {
            noise.parse_kind()?;
            if !(0.0..=1.0).contains(&noise.flip_prob) {
                return Err(Error::invalid("noise flip_prob must lie in [0, 1]"));
            }
        }
        if self.evaluation.ece_bins == 0 {
            return Err(Error::invalid("ece_bins must be >= 1"));
        }
        if self.slide_level.enabled
            && !(self.slide_level.top_q > 0.0 && self.slide_level.top_q <= 1.0)
        {
            return Err(Error::invalid("slide_level.top_q must lie in (0, 1]"));
        }
        Ok(())
    }

    /// Build the method spec for a configured method name.
    pub fn method_spec(&self, name: &str) -> Result<MethodSpec> {
        let kind = parse_method_kind(name)?;
        let mut spec = MethodSpec::new(kind);
        spec.n_members = self.method_params.n_members;
        spec.n_samples = self.method_params.n_samples;
        spec.dropout_p = self.method_params.dropout_p;
        spec.prior_weight = self.method_params.prior_weight;
        Ok(spec)
    }

    /// Hash of the canonical config JSON with the output directory masked,
    /// so the same experiment always maps to the same run directory.
    pub fn config_hash(&self) -> u64 {
        let mut masked = self.clone();
        masked.out_dir = PathBuf::new();
        let json = serde_json::to_string(&masked).expect("config serializes");
        fnv1a64(json.as_bytes())
    }

    pub fn run_dir(&self) -> PathBuf {
        self.out_dir.join(format!("{:016x}", self.config_hash()))
    }
}

pub fn parse_method_kind(name: &str) -> Result<MethodKind> {
    match name {
        "baseline" => Ok(MethodKind::Baseline),
        "ensemble" => Ok(MethodKind::Ensemble),
        "mcdo" => Ok(MethodKind::Mcdo),
        "svi" => Ok(MethodKind::Svi),
        "tta" => Ok(MethodKind::Tta),
        "mcdo_ensemble" => Ok(MethodKind::EnsembleOf(Box::new(MethodKind::Mcdo))),
        "svi_ensemble" => Ok(MethodKind::EnsembleOf(Box::new(MethodKind::Svi))),
        "tta_ensemble" => Ok(MethodKind::EnsembleOf(Box::new(MethodKind::Tta))),
        other => Err(Error::invalid(format!("unknown method {other:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn hash_ignores_out_dir_but_not_seed() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.out_dir = PathBuf::from("elsewhere");
        assert_eq!(a.config_hash(), b.config_hash());
        let mut c = a.clone();
        c.data.seed = 99;
        assert_ne!(a.config_hash(), c.config_hash());
    }

    #[test]
    fn split_kinds_parse() {
        let mut s = SplitSection::default();
        assert_eq!(s.parse_kind().unwrap(), SplitKind::Weak);
        s.kind = "strong".to_string();
        assert_eq!(s.parse_kind().unwrap(), SplitKind::Strong);
        s.kind = "loo3".to_string();
        assert_eq!(s.parse_kind().unwrap(), SplitKind::LeaveOneOut(3));
        s.kind = "loo7".to_string();
        assert!(s.parse_kind().is_err());
        s.kind = "nope".to_string();
        assert!(s.parse_kind().is_err());
    }

    #[test]
    fn method_names_parse() {
        for m in default_methods() {
            parse_method_kind(&m).unwrap();
        }
        assert!(parse_method_kind("gradient_boost").is_err());
    }

    #[test]
    fn config_roundtrips_through_json() {
        let a = ExperimentConfig::default();
        let text = serde_json::to_string_pretty(&a).unwrap();
        let b: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(a.config_hash(), b.config_hash());
    }

    #[test]
    fn unknown_fields_rejected() {
        let text = r#"{ "trials": 2, "bogus": 1 }"#;
        assert!(serde_json::from_str::<ExperimentConfig>(text).is_err());
    }
}
