//! Per-sample predictive distributions for each uncertainty method.
//!
//! Every method returns a [`PredictionSet`]: for each input sample an S x C
//! matrix of stochastic predictive probability vectors. S depends on the
//! method (1 for the deterministic baseline, ensemble size, number of MC
//! samples, or their product for ensembles of stochastic methods).

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::measures::validate_prob_vector;
use crate::nn::Network;
use crate::rng::Rng;
use rand::Rng as _;
use rand_distr::StandardNormal;

/// Identity of the sample a prediction row belongs to, carried through to
/// the CSV interchange format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleMeta {
    pub sample_id: u64,
    pub slide_id: u32,
    pub center_id: u8,
    pub label: u8,
}

/// S stochastic predictive probability vectors per sample.
#[derive(Debug, Clone)]
pub struct PredictionSet {
    meta: Vec<SampleMeta>,
    /// One S x C matrix per sample.
    probs: Vec<Matrix>,
    pub method_tag: String,
}

impl PredictionSet {
    pub fn new(meta: Vec<SampleMeta>, probs: Vec<Matrix>, method_tag: &str) -> Result<Self> {
        if meta.len() != probs.len() {
            return Err(Error::shape(format!(
                "prediction set: {} meta entries vs {} matrices",
                meta.len(),
                probs.len()
            )));
        }
        if probs.is_empty() {
            return Err(Error::invalid("prediction set: no samples"));
        }
        let draws = probs[0].rows();
        let classes = probs[0].cols();
        if draws == 0 || classes < 2 {
            return Err(Error::invalid("prediction set: need S >= 1 and C >= 2"));
        }
        for (i, m) in probs.iter().enumerate() {
            if m.rows() != draws || m.cols() != classes {
                return Err(Error::shape(format!(
                    "prediction set: sample {i} has shape {}x{}, expected {draws}x{classes}",
                    m.rows(),
                    m.cols()
                )));
            }
            for s in 0..draws {
                validate_prob_vector(m.row(s)).map_err(|e| {
                    Error::invalid(format!("prediction set: sample {i} draw {s}: {e}"))
                })?;
            }
        }
        Ok(PredictionSet {
            meta,
            probs,
            method_tag: method_tag.to_string(),
        })
    }

    pub fn len(&self) -> usize {
        self.meta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meta.is_empty()
    }

    pub fn num_draws(&self) -> usize {
        self.probs[0].rows()
    }

    pub fn num_classes(&self) -> usize {
        self.probs[0].cols()
    }

    pub fn meta(&self) -> &[SampleMeta] {
        &self.meta
    }

    pub fn sample_probs(&self, i: usize) -> &Matrix {
        &self.probs[i]
    }

    /// Arithmetic mean over the S draws of one sample.
    pub fn mean_prediction(&self, i: usize) -> Vec<f64> {
        let m = &self.probs[i];
        let s = m.rows() as f64;
        let mut out = vec![0.0; m.cols()];
        for r in 0..m.rows() {
            for (acc, v) in out.iter_mut().zip(m.row(r)) {
                *acc += v;
            }
        }
        for v in &mut out {
            *v /= s;
        }
        out
    }

    /// Predicted class of the mean prediction (lowest index wins ties).
    pub fn predicted_label(&self, i: usize) -> usize {
        crate::metrics::argmax(&self.mean_prediction(i))
    }

    /// Restriction to the given sample indices, keeping their order.
    pub fn subset(&self, indices: &[usize]) -> Result<PredictionSet> {
        let meta = indices.iter().map(|&i| self.meta[i]).collect();
        let probs = indices.iter().map(|&i| self.probs[i].clone()).collect();
        PredictionSet::new(meta, probs, &self.method_tag)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MethodKind {
    Baseline,
    Ensemble,
    Mcdo,
    Svi,
    Tta,
    EnsembleOf(Box<MethodKind>),
}

impl MethodKind {
    pub fn name(&self) -> String {
        match self {
            MethodKind::Baseline => "baseline".to_string(),
            MethodKind::Ensemble => "ensemble".to_string(),
            MethodKind::Mcdo => "mcdo".to_string(),
            MethodKind::Svi => "svi".to_string(),
            MethodKind::Tta => "tta".to_string(),
            MethodKind::EnsembleOf(inner) => format!("{}_ensemble", inner.name()),
        }
    }
}

/// Additive jitter, per-feature gain, and optional 90-degree rotations for
/// grid-structured feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationSpec {
    pub jitter_sigma: f64,
    pub scale_lo: f64,
    pub scale_hi: f64,
    pub rotate90: bool,
}

impl AugmentationSpec {
    pub fn identity() -> Self {
        AugmentationSpec {
            jitter_sigma: 0.0,
            scale_lo: 1.0,
            scale_hi: 1.0,
            rotate90: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.jitter_sigma < 0.0 {
            return Err(Error::invalid("augmentation: jitter_sigma must be >= 0"));
        }
        if !(self.scale_lo > 0.0 && self.scale_hi >= self.scale_lo) {
            return Err(Error::invalid(
                "augmentation: scale range must satisfy 0 < lo <= hi",
            ));
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self.jitter_sigma == 0.0 && self.scale_lo == 1.0 && self.scale_hi == 1.0 && !self.rotate90
    }

    /// Augment every row of `batch` in place.
    pub fn apply(&self, batch: &mut Matrix, rng: &mut Rng) {
        if self.is_identity() {
            return;
        }
        let cols = batch.cols();
        let side = (cols as f64).sqrt() as usize;
        for i in 0..batch.rows() {
            let row = batch.row_mut(i);
            if self.rotate90 && side * side == cols {
                let quarter_turns = rng.gen_range(0..4u8);
                rotate_square(row, side, quarter_turns);
            }
            if self.scale_lo < self.scale_hi {
                for v in row.iter_mut() {
                    *v *= rng.gen_range(self.scale_lo..self.scale_hi);
                }
            }
            if self.jitter_sigma > 0.0 {
                for v in row.iter_mut() {
                    let z: f64 = rng.sample(StandardNormal);
                    *v += self.jitter_sigma * z;
                }
            }
        }
    }
}

fn rotate_square(row: &mut [f64], side: usize, quarter_turns: u8) {
    for _ in 0..quarter_turns % 4 {
        let src = row.to_vec();
        for r in 0..side {
            for c in 0..side {
                // 90 degrees clockwise: (r, c) <- (side-1-c, r)
                row[r * side + c] = src[(side - 1 - c) * side + r];
            }
        }
    }
}

/// Method selection plus its sampling parameters.
#[derive(Debug, Clone)]
pub struct MethodSpec {
    pub kind: MethodKind,
    pub n_members: usize,
    pub n_samples: usize,
    pub dropout_p: f64,
    pub prior_weight: f64,
    pub augmentation: AugmentationSpec,
}

impl MethodSpec {
    pub fn new(kind: MethodKind) -> Self {
        MethodSpec {
            kind,
            n_members: 5,
            n_samples: 10,
            dropout_p: 0.3,
            prior_weight: 1e-3,
            augmentation: AugmentationSpec::identity(),
        }
    }

    pub fn name(&self) -> String {
        self.kind.name()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_members == 0 || self.n_samples == 0 {
            return Err(Error::invalid(
                "method spec: n_members and n_samples must be >= 1",
            ));
        }
        self.augmentation.validate()
    }
}

/// One deterministic eval-mode forward per sample, S = 1.
pub fn predict_baseline(
    net: &Network,
    inputs: &Matrix,
    meta: &[SampleMeta],
) -> Result<PredictionSet> {
    let probs = net.forward_eval(inputs)?;
    let per_sample = rows_to_singleton_matrices(&probs);
    PredictionSet::new(meta.to_vec(), per_sample, "baseline")
}

/// Row j of each sample's matrix is member j's deterministic prediction.
pub fn predict_ensemble(
    members: &[Network],
    inputs: &Matrix,
    meta: &[SampleMeta],
) -> Result<PredictionSet> {
    check_members(members)?;
    let per_member: Vec<Matrix> = members
        .iter()
        .map(|net| net.forward_eval(inputs))
        .collect::<Result<_>>()?;
    let probs = stack_passes(&per_member, inputs.rows());
    PredictionSet::new(meta.to_vec(), probs, "ensemble")
}

/// `n_samples` forward passes with dropout active.
pub fn predict_mcdo(
    net: &Network,
    inputs: &Matrix,
    n_samples: usize,
    rng: &mut Rng,
    meta: &[SampleMeta],
) -> Result<PredictionSet> {
    if !net.has_dropout() {
        return Err(Error::config(
            "predict_mcdo: network has no dropout layer with p > 0",
        ));
    }
    let passes = stochastic_passes(net, inputs, n_samples, rng)?;
    PredictionSet::new(meta.to_vec(), stack_passes(&passes, inputs.rows()), "mcdo")
}

/// `n_samples` forward passes, each with an independent weight sample.
pub fn predict_svi(
    net: &Network,
    inputs: &Matrix,
    n_samples: usize,
    rng: &mut Rng,
    meta: &[SampleMeta],
) -> Result<PredictionSet> {
    if !net.has_variational() {
        return Err(Error::config(
            "predict_svi: network has no variational layer",
        ));
    }
    let passes = stochastic_passes(net, inputs, n_samples, rng)?;
    PredictionSet::new(meta.to_vec(), stack_passes(&passes, inputs.rows()), "svi")
}

/// Eval-mode forwards of augmented inputs; draw 0 is the identity
/// augmentation so S = 1 degenerates to the baseline.
pub fn predict_tta(
    net: &Network,
    inputs: &Matrix,
    n_samples: usize,
    aug: &AugmentationSpec,
    rng: &mut Rng,
    meta: &[SampleMeta],
) -> Result<PredictionSet> {
    aug.validate()?;
    let mut passes = Vec::with_capacity(n_samples);
    for draw in 0..n_samples {
        let probs = if draw == 0 {
            net.forward_eval(inputs)?
        } else {
            let mut x = inputs.clone();
            aug.apply(&mut x, rng);
            net.forward_eval(&x)?
        };
        passes.push(probs);
    }
    PredictionSet::new(meta.to_vec(), stack_passes(&passes, inputs.rows()), "tta")
}

/// Pool the inner method over ensemble members, member-major:
/// S = n_members * n_samples (or n_members for a deterministic inner pass).
pub fn predict_ensemble_of(
    inner: &MethodKind,
    members: &[Network],
    inputs: &Matrix,
    n_samples: usize,
    aug: &AugmentationSpec,
    rng: &mut Rng,
    meta: &[SampleMeta],
) -> Result<PredictionSet> {
    check_members(members)?;
    let tag = MethodKind::EnsembleOf(Box::new(inner.clone())).name();
    let mut member_sets = Vec::with_capacity(members.len());
    for net in members {
        let set = match inner {
            MethodKind::Mcdo => predict_mcdo(net, inputs, n_samples, rng, meta)?,
            MethodKind::Svi => predict_svi(net, inputs, n_samples, rng, meta)?,
            MethodKind::Tta => predict_tta(net, inputs, n_samples, aug, rng, meta)?,
            MethodKind::Baseline => predict_baseline(net, inputs, meta)?,
            other => {
                return Err(Error::config(format!(
                    "predict_ensemble_of: unsupported inner method {}",
                    other.name()
                )))
            }
        };
        member_sets.push(set);
    }
    let mut pooled = Vec::with_capacity(inputs.rows());
    for i in 0..inputs.rows() {
        let total: usize = member_sets.iter().map(|s| s.num_draws()).sum();
        let classes = member_sets[0].num_classes();
        let mut m = Matrix::zeros(total, classes);
        let mut at = 0;
        for set in &member_sets {
            let sm = set.sample_probs(i);
            for r in 0..sm.rows() {
                m.row_mut(at).copy_from_slice(sm.row(r));
                at += 1;
            }
        }
        pooled.push(m);
    }
    PredictionSet::new(meta.to_vec(), pooled, &tag)
}

/// Dispatch on the method spec. `members` must hold at least the required
/// number of networks of the matching architecture; singular methods use
/// member 0.
pub fn predict_with_spec(
    spec: &MethodSpec,
    members: &[Network],
    inputs: &Matrix,
    meta: &[SampleMeta],
    rng: &mut Rng,
) -> Result<PredictionSet> {
    spec.validate()?;
    if members.is_empty() {
        return Err(Error::config("predict_with_spec: no networks supplied"));
    }
    if matches!(spec.kind, MethodKind::Ensemble | MethodKind::EnsembleOf(_))
        && members.len() < spec.n_members
    {
        return Err(Error::config(format!(
            "predict_with_spec: {} needs {} members, got {}",
            spec.name(),
            spec.n_members,
            members.len()
        )));
    }
    match &spec.kind {
        MethodKind::Baseline => predict_baseline(&members[0], inputs, meta),
        MethodKind::Ensemble => predict_ensemble(&members[..spec.n_members], inputs, meta),
        MethodKind::Mcdo => predict_mcdo(&members[0], inputs, spec.n_samples, rng, meta),
        MethodKind::Svi => predict_svi(&members[0], inputs, spec.n_samples, rng, meta),
        MethodKind::Tta => predict_tta(
            &members[0],
            inputs,
            spec.n_samples,
            &spec.augmentation,
            rng,
            meta,
        ),
        MethodKind::EnsembleOf(inner) => predict_ensemble_of(
            inner,
            &members[..spec.n_members],
            inputs,
            spec.n_samples,
            &spec.augmentation,
            rng,
            meta,
        ),
    }
}

fn stochastic_passes(
    net: &Network,
    inputs: &Matrix,
    n_samples: usize,
    rng: &mut Rng,
) -> Result<Vec<Matrix>> {
    (0..n_samples)
        .map(|_| net.forward_stochastic(inputs, rng))
        .collect()
}

fn check_members(members: &[Network]) -> Result<()> {
    let first = members
        .first()
        .ok_or_else(|| Error::config("ensemble: no members"))?;
    for m in members.iter().skip(1) {
        if m.input_dim() != first.input_dim() || m.num_classes() != first.num_classes() {
            return Err(Error::config("ensemble: heterogeneous members"));
        }
    }
    Ok(())
}

fn rows_to_singleton_matrices(probs: &Matrix) -> Vec<Matrix> {
    (0..probs.rows())
        .map(|i| Matrix::from_vec(1, probs.cols(), probs.row(i).to_vec()).unwrap())
        .collect()
}

/// Stack per-pass probability batches into one S x C matrix per sample.
fn stack_passes(passes: &[Matrix], samples: usize) -> Vec<Matrix> {
    let classes = passes[0].cols();
    (0..samples)
        .map(|i| {
            let mut m = Matrix::zeros(passes.len(), classes);
            for (s, pass) in passes.iter().enumerate() {
                m.row_mut(s).copy_from_slice(pass.row(i));
            }
            m
        })
        .collect()
}
