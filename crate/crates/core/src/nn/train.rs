//! Mini-batch Adam training with a reduce-on-plateau learning-rate schedule
//! and best-validation-accuracy model selection.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::methods::AugmentationSpec;
use crate::nn::adam::AdamState;
use crate::nn::{loss, Network};
use crate::rng::{rng_from_seed, Rng};
use rand::seq::SliceRandom;
use rand::Rng as _;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Epochs without a new best validation loss before the LR is reduced.
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub max_epochs: usize,
    pub seed: u64,
    /// Sample training batches with equal expected class counts.
    pub class_balanced: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 128,
            plateau_patience: 3,
            plateau_factor: 0.1,
            max_epochs: 100,
            seed: 0,
            class_balanced: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::invalid("learning_rate must be > 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        if self.plateau_patience == 0 {
            return Err(Error::invalid("plateau_patience must be >= 1"));
        }
        if !(0.0 < self.plateau_factor && self.plateau_factor < 1.0) {
            return Err(Error::invalid("plateau_factor must lie in (0, 1)"));
        }
        if self.max_epochs == 0 {
            return Err(Error::invalid("max_epochs must be >= 1"));
        }
        Ok(())
    }
}

/// Feature rows with one integer label per row.
#[derive(Debug, Clone)]
pub struct LabeledSet {
    pub features: Matrix,
    pub labels: Vec<usize>,
}

impl LabeledSet {
    pub fn new(features: Matrix, labels: Vec<usize>) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::shape(format!(
                "labeled set: {} feature rows vs {} labels",
                features.rows(),
                labels.len()
            )));
        }
        Ok(LabeledSet { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    /// Learning rate in effect during this epoch.
    pub learning_rate: f64,
}

#[derive(Debug, Clone)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    /// 0-based index of the epoch whose parameters were returned.
    pub best_epoch: usize,
}

/// Reduce-on-plateau state machine. `observe` returns true when the learning
/// rate should be multiplied by the plateau factor: the running best
/// validation loss has not strictly improved for `patience` consecutive epochs.
#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    best: f64,
    stale_epochs: usize,
    patience: usize,
}

impl PlateauScheduler {
    pub fn new(patience: usize) -> Self {
        PlateauScheduler {
            best: f64::INFINITY,
            stale_epochs: 0,
            patience,
        }
    }

    pub fn observe(&mut self, val_loss: f64) -> bool {
        if val_loss < self.best {
            self.best = val_loss;
            self.stale_epochs = 0;
            return false;
        }
        self.stale_epochs += 1;
        if self.stale_epochs >= self.patience {
            self.stale_epochs = 0;
            return true;
        }
        false
    }
}

/// Batch index sampler with equal expected class counts, with replacement.
pub struct BalancedSampler {
    by_class: Vec<Vec<usize>>,
}

impl BalancedSampler {
    pub fn new(labels: &[usize], num_classes: usize) -> Result<Self> {
        let mut by_class = vec![Vec::new(); num_classes];
        for (i, &l) in labels.iter().enumerate() {
            if l >= num_classes {
                return Err(Error::invalid(format!("label {l} out of range")));
            }
            by_class[l].push(i);
        }
        if by_class.iter().any(|c| c.is_empty()) {
            return Err(Error::invalid(
                "balanced sampling requires every class to be present",
            ));
        }
        Ok(BalancedSampler { by_class })
    }

    pub fn next_batch(&self, size: usize, rng: &mut Rng) -> Vec<usize> {
        (0..size)
            .map(|_| {
                let class = &self.by_class[rng.gen_range(0..self.by_class.len())];
                class[rng.gen_range(0..class.len())]
            })
            .collect()
    }
}

/// Deterministic eval-mode loss and accuracy on a labeled set.
pub fn evaluate(net: &Network, set: &LabeledSet) -> Result<(f64, f64)> {
    let probs = net.forward_eval(&set.features)?;
    let ce = loss::cross_entropy_loss(&probs, &set.labels)?;
    let mut correct = 0usize;
    for (i, &label) in set.labels.iter().enumerate() {
        if crate::metrics::argmax(probs.row(i)) == label {
            correct += 1;
        }
    }
    Ok((ce, correct as f64 / set.labels.len() as f64))
}

/// Train with mini-batch Adam. Returns the parameter snapshot with the
/// highest validation accuracy (ties go to the earliest epoch) and the
/// per-epoch history. Fully deterministic given `config.seed`.
pub fn train(
    network: Network,
    train_set: &LabeledSet,
    val_set: &LabeledSet,
    config: &TrainConfig,
    augmentation: Option<&AugmentationSpec>,
) -> Result<(Network, TrainHistory)> {
    config.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::invalid("train: empty train or validation set"));
    }
    if train_set.features.cols() != network.input_dim()
        || val_set.features.cols() != network.input_dim()
    {
        return Err(Error::shape("train: feature width does not match network"));
    }

    let mut net = network;
    let mut rng = rng_from_seed(config.seed);
    let n = train_set.len();
    let batches_per_epoch = n.div_ceil(config.batch_size);
    let kl_scale = 1.0 / batches_per_epoch as f64;

    let balanced = if config.class_balanced {
        Some(BalancedSampler::new(&train_set.labels, net.num_classes())?)
    } else {
        None
    };

    let mut adam = AdamState::new(net.num_params());
    let mut scheduler = PlateauScheduler::new(config.plateau_patience);
    let mut lr = config.learning_rate;

    let mut history = Vec::with_capacity(config.max_epochs);
    let mut best_acc = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    let mut best_params = net.get_params();

    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..config.max_epochs {
        if balanced.is_none() {
            order.shuffle(&mut rng);
        }
        let mut epoch_loss = 0.0;
        for b in 0..batches_per_epoch {
            let idx: Vec<usize> = match &balanced {
                Some(sampler) => sampler.next_batch(config.batch_size, &mut rng),
                None => {
                    let lo = b * config.batch_size;
                    let hi = (lo + config.batch_size).min(n);
                    order[lo..hi].to_vec()
                }
            };
            let mut x = gather_rows(&train_set.features, &idx);
            let y: Vec<usize> = idx.iter().map(|&i| train_set.labels[i]).collect();
            if let Some(spec) = augmentation {
                spec.apply(&mut x, &mut rng);
            }

            let noise = net.draw_noise(x.rows(), &mut rng);
            let trace = net.forward_noisy(&x, &noise)?;
            let ce = loss::cross_entropy_loss(&trace.probs, &y)?;
            let batch_loss = ce + kl_scale * net.weighted_kl();
            if !batch_loss.is_finite() {
                return Err(Error::Divergence(format!(
                    "training loss became non-finite at epoch {} batch {}",
                    epoch + 1,
                    b + 1
                )));
            }
            epoch_loss += batch_loss;

            let grads = net.backward(&trace, &noise, &y, kl_scale)?;
            let flat_grads = net.flatten_grads(&grads);
            let mut params = net.get_params();
            adam.step(&mut params, &flat_grads, lr)?;
            net.set_params(&params)?;
        }

        let (val_loss, val_acc) = evaluate(&net, val_set)?;
        if !val_loss.is_finite() {
            return Err(Error::Divergence(format!(
                "validation loss became non-finite at epoch {}",
                epoch + 1
            )));
        }
        history.push(EpochStats {
            train_loss: epoch_loss / batches_per_epoch as f64,
            val_loss,
            val_accuracy: val_acc,
            learning_rate: lr,
        });
        if val_acc > best_acc {
            best_acc = val_acc;
            best_epoch = epoch;
            best_params = net.get_params();
        }
        if scheduler.observe(val_loss) {
            lr *= config.plateau_factor;
        }
    }

    net.set_params(&best_params)?;
    Ok((
        net,
        TrainHistory {
            epochs: history,
            best_epoch,
        },
    ))
}

pub(crate) fn gather_rows(m: &Matrix, idx: &[usize]) -> Matrix {
    let mut out = Matrix::zeros(idx.len(), m.cols());
    for (r, &i) in idx.iter().enumerate() {
        out.row_mut(r).copy_from_slice(m.row(i));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::DenseKind;
    use rand_distr::StandardNormal;

    #[test]
    fn scheduler_trace_reduces_once_after_epoch_five() {
        let mut s = PlateauScheduler::new(3);
        let trace = [1.0, 0.9, 0.91, 0.92, 0.93];
        let fired: Vec<bool> = trace.iter().map(|&v| s.observe(v)).collect();
        assert_eq!(fired, vec![false, false, false, false, true]);
    }

    #[test]
    fn scheduler_counter_resets_on_improvement() {
        let mut s = PlateauScheduler::new(2);
        assert!(!s.observe(1.0));
        assert!(!s.observe(1.1)); // stale 1
        assert!(!s.observe(0.9)); // new best, reset
        assert!(!s.observe(0.95)); // stale 1
        assert!(s.observe(0.95)); // stale 2 -> fire
    }

    fn blobs(n_per_class: usize, seed: u64, sep: f64) -> LabeledSet {
        let mut rng = rng_from_seed(seed);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for class in 0..2usize {
            let cx = if class == 0 { -sep / 2.0 } else { sep / 2.0 };
            for _ in 0..n_per_class {
                let dx: f64 = rng.sample(StandardNormal);
                let dy: f64 = rng.sample(StandardNormal);
                rows.push(vec![cx + 0.5 * dx, 0.5 * dy]);
                labels.push(class);
            }
        }
        LabeledSet::new(Matrix::from_rows(&rows).unwrap(), labels).unwrap()
    }

    #[test]
    fn separable_blobs_reach_perfect_validation_accuracy() {
        let train_set = blobs(100, 1, 4.0);
        let val = blobs(30, 2, 4.0);
        let mut rng = rng_from_seed(3);
        let net = Network::mlp(2, &[16], 2, DenseKind::Deterministic, None, &mut rng).unwrap();
        let config = TrainConfig {
            max_epochs: 50,
            batch_size: 32,
            seed: 7,
            ..TrainConfig::default()
        };
        let (_, history) = train(net, &train_set, &val, &config, None).unwrap();
        let best = history
            .epochs
            .iter()
            .map(|e| e.val_accuracy)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(best, 1.0, "history: {:?}", history.epochs.last());
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let train_set = blobs(60, 10, 2.0);
        let val = blobs(20, 11, 2.0);
        let config = TrainConfig {
            max_epochs: 8,
            batch_size: 16,
            seed: 99,
            ..TrainConfig::default()
        };
        let mut results = Vec::new();
        for _ in 0..2 {
            let mut rng = rng_from_seed(5);
            let net =
                Network::mlp(2, &[8], 2, DenseKind::Deterministic, Some(0.2), &mut rng).unwrap();
            let (trained, history) = train(net, &train_set, &val, &config, None).unwrap();
            results.push((trained.get_params(), history));
        }
        assert_eq!(results[0].0, results[1].0);
        assert_eq!(results[0].1.epochs, results[1].1.epochs);
        assert_eq!(results[0].1.best_epoch, results[1].1.best_epoch);
    }

    #[test]
    fn learning_rate_is_non_increasing_and_steps_by_factor() {
        let train_set = blobs(40, 20, 0.1); // barely separable -> plateaus
        let val = blobs(15, 21, 0.1);
        let config = TrainConfig {
            max_epochs: 30,
            batch_size: 16,
            seed: 1,
            ..TrainConfig::default()
        };
        let mut rng = rng_from_seed(6);
        let net = Network::mlp(2, &[8], 2, DenseKind::Deterministic, None, &mut rng).unwrap();
        let (_, history) = train(net, &train_set, &val, &config, None).unwrap();
        let lrs: Vec<f64> = history.epochs.iter().map(|e| e.learning_rate).collect();
        for w in lrs.windows(2) {
            assert!(w[1] <= w[0]);
            if w[1] < w[0] {
                assert!((w[1] - w[0] * config.plateau_factor).abs() < 1e-18);
            }
        }
    }

    #[test]
    fn balanced_sampler_equalizes_classes() {
        // 9:1 imbalance, batches still come out ~50/50.
        let labels: Vec<usize> = (0..1000).map(|i| usize::from(i % 10 == 0)).collect();
        let sampler = BalancedSampler::new(&labels, 2).unwrap();
        let mut rng = rng_from_seed(8);
        let mut ones = 0usize;
        let mut total = 0usize;
        for _ in 0..1000 {
            for i in sampler.next_batch(64, &mut rng) {
                ones += labels[i];
                total += 1;
            }
        }
        let ratio = ones as f64 / total as f64;
        assert!((ratio - 0.5).abs() < 0.02, "ratio {ratio}");
    }

    #[test]
    fn balanced_sampler_rejects_missing_class() {
        assert!(BalancedSampler::new(&[0, 0, 0], 2).is_err());
    }

    #[test]
    fn empty_sets_are_rejected() {
        let set = blobs(10, 1, 1.0);
        let empty = LabeledSet::new(Matrix::zeros(0, 2), vec![]).unwrap();
        let mut rng = rng_from_seed(2);
        let net = Network::mlp(2, &[4], 2, DenseKind::Deterministic, None, &mut rng).unwrap();
        assert!(train(net.clone(), &empty, &set, &TrainConfig::default(), None).is_err());
        assert!(train(net, &set, &empty, &TrainConfig::default(), None).is_err());
    }
}
