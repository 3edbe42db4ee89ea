//! Finite-difference validation of the manual backward pass.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::Network;
use crate::rng::Rng;

/// Compare analytic gradients against central finite differences on the full
/// training objective (cross-entropy plus weighted KL). The stochastic noise
/// is drawn once and frozen for every evaluation, so variational layers are
/// checked through their sampled path. Dropout layers are rejected: a frozen
/// mask never changes under parameter perturbation, but their presence in a
/// check usually signals a test setup mistake.
///
/// Returns the maximum over parameters of |fd - analytic| / max(1, |fd| + |analytic|).
pub fn gradient_check(
    net: &Network,
    inputs: &Matrix,
    labels: &[usize],
    eps_fd: f64,
    rng: &mut Rng,
) -> Result<f64> {
    if net.has_dropout() {
        return Err(Error::invalid(
            "gradient_check: disable dropout layers for the check",
        ));
    }
    if net.num_params() > 10_000 {
        return Err(Error::invalid(
            "gradient_check: network too large for finite differences",
        ));
    }
    let noise = net.draw_noise(inputs.rows(), rng);
    let trace = net.forward_noisy(inputs, &noise)?;
    let grads = net.backward(&trace, &noise, labels, 1.0)?;
    let analytic = net.flatten_grads(&grads);

    let base = net.get_params();
    let mut work = net.clone();
    let mut worst = 0.0f64;
    let mut perturbed = base.clone();
    for i in 0..base.len() {
        perturbed[i] = base[i] + eps_fd;
        work.set_params(&perturbed)?;
        let plus = work.loss_noisy(inputs, labels, &noise, 1.0)?;
        perturbed[i] = base[i] - eps_fd;
        work.set_params(&perturbed)?;
        let minus = work.loss_noisy(inputs, labels, &noise, 1.0)?;
        perturbed[i] = base[i];
        let fd = (plus - minus) / (2.0 * eps_fd);
        let rel = (fd - analytic[i]).abs() / (fd.abs() + analytic[i].abs()).max(1.0);
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// Euclidean norm of the analytic gradient at the current parameters with
/// frozen noise; used to verify stationary points.
pub fn gradient_norm(
    net: &Network,
    inputs: &Matrix,
    labels: &[usize],
    rng: &mut Rng,
) -> Result<f64> {
    let noise = net.draw_noise(inputs.rows(), rng);
    let trace = net.forward_noisy(inputs, &noise)?;
    let grads = net.backward(&trace, &noise, labels, 1.0)?;
    let flat = net.flatten_grads(&grads);
    Ok(flat.iter().map(|g| g * g).sum::<f64>().sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::nn::{DenseKind, DenseLayer, Layer, Network, VariationalDenseLayer};
    use crate::rng::rng_from_seed;
    use rand::Rng as _;
    use rand_distr::StandardNormal;

    fn random_batch(
        rows: usize,
        cols: usize,
        classes: usize,
        rng: &mut crate::rng::Rng,
    ) -> (Matrix, Vec<usize>) {
        let mut x = Matrix::zeros(rows, cols);
        for v in x.data_mut() {
            *v = rng.sample(StandardNormal);
        }
        let labels = (0..rows).map(|_| rng.gen_range(0..classes)).collect();
        (x, labels)
    }

    #[test]
    fn deterministic_two_layer_net_passes() {
        let mut rng = rng_from_seed(31);
        let net = Network::mlp(4, &[6], 3, DenseKind::Deterministic, None, &mut rng).unwrap();
        let (x, y) = random_batch(5, 4, 3, &mut rng);
        let err = gradient_check(&net, &x, &y, 1e-4, &mut rng).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn variational_net_with_frozen_noise_passes() {
        let mut rng = rng_from_seed(32);
        let net = Network::mlp(
            4,
            &[6],
            2,
            DenseKind::Variational {
                prior_weight: 1.0,
                rho_init: -1.0,
            },
            None,
            &mut rng,
        )
        .unwrap();
        let (x, y) = random_batch(5, 4, 2, &mut rng);
        let err = gradient_check(&net, &x, &y, 1e-4, &mut rng).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn twenty_random_nets_pass() {
        for seed in 0..20 {
            let mut rng = rng_from_seed(1000 + seed);
            let variational = seed % 2 == 1;
            let net = if variational {
                Network::mlp(
                    3,
                    &[5, 4],
                    2,
                    DenseKind::Variational {
                        prior_weight: 0.5,
                        rho_init: -2.0,
                    },
                    None,
                    &mut rng,
                )
                .unwrap()
            } else {
                Network::mlp(3, &[5, 4], 2, DenseKind::Deterministic, None, &mut rng).unwrap()
            };
            assert!(net.num_params() <= 1000);
            let (x, y) = random_batch(4, 3, 2, &mut rng);
            let err = gradient_check(&net, &x, &y, 1e-4, &mut rng).unwrap();
            assert!(err < 1e-4, "seed {seed}: max relative error {err}");
        }
    }

    #[test]
    fn saturated_one_hot_prediction_has_tiny_gradient() {
        // Bias drives the true class logit 80 above the other: prediction is
        // numerically one-hot, so CE gradients vanish.
        let w = Matrix::zeros(2, 2);
        let net = Network::from_layers(
            2,
            vec![Layer::Dense(DenseLayer::new(w, vec![40.0, -40.0]).unwrap())],
        )
        .unwrap();
        let x = Matrix::from_rows(&[vec![0.3, -0.2]]).unwrap();
        let mut rng = rng_from_seed(1);
        let norm = gradient_norm(&net, &x, &[0], &mut rng).unwrap();
        assert!(norm < 1e-6, "gradient norm {norm}");
    }

    #[test]
    fn kl_gradient_vanishes_at_standard_normal() {
        // mu = 0, sigma = 1 is the KL minimum; with weights feeding a
        // zero input the CE part sees only the bias sample, and the KL
        // gradient must be zero. Check analytic equals FD there.
        let rho_one = (std::f64::consts::E - 1.0).ln(); // softplus = 1
        let layer = VariationalDenseLayer::new(
            Matrix::zeros(2, 2),
            Matrix::zeros(2, 2).map(|_| rho_one),
            vec![0.0; 2],
            vec![rho_one; 2],
            1.0,
        )
        .unwrap();
        let net = Network::from_layers(2, vec![Layer::Variational(layer)]).unwrap();
        let x = Matrix::zeros(1, 2);
        let mut rng = rng_from_seed(7);
        let err = gradient_check(&net, &x, &[0], 1e-4, &mut rng).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn dropout_networks_are_rejected() {
        let mut rng = rng_from_seed(2);
        let net = Network::mlp(3, &[4], 2, DenseKind::Deterministic, Some(0.3), &mut rng).unwrap();
        let x = Matrix::zeros(2, 3);
        assert!(gradient_check(&net, &x, &[0, 1], 1e-4, &mut rng).is_err());
    }
}
