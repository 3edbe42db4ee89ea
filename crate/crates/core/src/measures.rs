//! Per-sample uncertainty scalars: confidence, normalized entropy and
//! predictive variance.
//!
//! Confidence and entropy are computed on the mean prediction of a
//! [`PredictionSet`]; variance is computed across its draws. For binary
//! tasks, ordering by confidence and ordering by entropy are equivalent
//! (higher confidence if and only if lower entropy), which the property
//! tests pin down.

use crate::error::{Error, Result};
use crate::methods::PredictionSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Measure {
    Confidence,
    NormedEntropy,
    Variance,
}

impl Measure {
    pub fn name(&self) -> &'static str {
        match self {
            Measure::Confidence => "confidence",
            Measure::NormedEntropy => "normed_entropy",
            Measure::Variance => "variance",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "confidence" => Ok(Measure::Confidence),
            "normed_entropy" => Ok(Measure::NormedEntropy),
            "variance" => Ok(Measure::Variance),
            other => Err(Error::invalid(format!("unknown measure {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UncertaintyScore {
    pub sample_id: u64,
    pub value: f64,
    pub measure: Measure,
    /// Entropy and variance grow with uncertainty; confidence shrinks.
    pub higher_is_uncertain: bool,
}

impl UncertaintyScore {
    /// Orientation-normalized value: higher always means more uncertain.
    pub fn uncertainty(&self) -> f64 {
        if self.higher_is_uncertain {
            self.value
        } else {
            1.0 - self.value
        }
    }
}

pub fn validate_prob_vector(p: &[f64]) -> Result<()> {
    if p.len() < 2 {
        return Err(Error::invalid("probability vector needs >= 2 classes"));
    }
    let mut sum = 0.0;
    for &v in p {
        if !(0.0..=1.0 + 1e-9).contains(&v) || !v.is_finite() {
            return Err(Error::invalid(format!("probability {v} outside [0, 1]")));
        }
        sum += v;
    }
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("probabilities sum to {sum}, not 1")));
    }
    Ok(())
}

/// Maximum component of the probability vector; at least 1/C.
pub fn confidence(p: &[f64]) -> Result<f64> {
    validate_prob_vector(p)?;
    Ok(p.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
}

/// Shannon entropy (natural log, 0 ln 0 := 0) divided by ln C; in [0, 1].
pub fn normed_entropy(p: &[f64]) -> Result<f64> {
    validate_prob_vector(p)?;
    let h: f64 = p
        .iter()
        .map(|&v| if v > 0.0 { -v * v.ln() } else { 0.0 })
        .sum();
    Ok((h / (p.len() as f64).ln()).clamp(0.0, 1.0))
}

/// Mean over classes of the population variance of that class's probability
/// across the S draws. Zero when all draws agree, and for S = 1.
pub fn variance_uncertainty(set: &PredictionSet, sample: usize) -> f64 {
    let m = set.sample_probs(sample);
    let draws = m.rows() as f64;
    let mut total = 0.0;
    for c in 0..m.cols() {
        let mean: f64 = (0..m.rows()).map(|s| m.get(s, c)).sum::<f64>() / draws;
        let var: f64 = (0..m.rows())
            .map(|s| {
                let d = m.get(s, c) - mean;
                d * d
            })
            .sum::<f64>()
            / draws;
        total += var;
    }
    total / m.cols() as f64
}

/// Score every sample of the set with one measure. Confidence and entropy
/// use the mean prediction; variance uses the draws and requires S > 1.
pub fn score_set(set: &PredictionSet, measure: Measure) -> Result<Vec<UncertaintyScore>> {
    if measure == Measure::Variance && set.num_draws() == 1 {
        return Err(Error::invalid(
            "variance needs S > 1 draws; use confidence or normed entropy for single predictions",
        ));
    }
    let higher_is_uncertain = measure != Measure::Confidence;
    (0..set.len())
        .map(|i| {
            let value = match measure {
                Measure::Confidence => confidence(&set.mean_prediction(i))?,
                Measure::NormedEntropy => normed_entropy(&set.mean_prediction(i))?,
                Measure::Variance => variance_uncertainty(set, i),
            };
            Ok(UncertaintyScore {
                sample_id: set.meta()[i].sample_id,
                value,
                measure,
                higher_is_uncertain,
            })
        })
        .collect()
}
