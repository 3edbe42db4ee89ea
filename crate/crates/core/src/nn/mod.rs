//! Feed-forward classification network with manual backpropagation.
//!
//! Layers are deterministic dense, inverted dropout, or variational dense with
//! a Flipout-style perturbation estimator. The network owns its parameters as
//! structured layers; [`Network::get_params`] / [`Network::set_params`] expose
//! them as one flat vector for the optimizer, checkpoints and finite
//! differences.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod loss;
pub mod train;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::Rng;
use loss::{sigmoid, softmax_rows, softplus};
use rand::Rng as _;
use rand_distr::StandardNormal;

/// Forward mode. `Train` activates dropout and weight sampling and requires
/// an RNG; `Eval` is deterministic for deterministic layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone)]
pub struct DenseLayer {
    /// out x in
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn new(weights: Matrix, bias: Vec<f64>) -> Result<Self> {
        if weights.rows() != bias.len() {
            return Err(Error::shape(format!(
                "dense layer: {} weight rows vs {} bias entries",
                weights.rows(),
                bias.len()
            )));
        }
        if !weights.is_finite() || !bias.iter().all(|v| v.is_finite()) {
            return Err(Error::numeric(
                "dense layer: non-finite parameter".to_string(),
            ));
        }
        Ok(DenseLayer { weights, bias })
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DropoutSpec {
    p: f64,
}

impl DropoutSpec {
    pub fn new(p: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::invalid(format!(
                "dropout probability must lie in [0, 1), got {p}"
            )));
        }
        Ok(DropoutSpec { p })
    }

    pub fn p(&self) -> f64 {
        self.p
    }
}

/// Dense layer with a Gaussian over every weight and bias. The stored `rho`
/// maps to the standard deviation through softplus, so sigma stays positive.
#[derive(Debug, Clone)]
pub struct VariationalDenseLayer {
    /// out x in
    pub weight_mean: Matrix,
    pub weight_rho: Matrix,
    pub bias_mean: Vec<f64>,
    pub bias_rho: Vec<f64>,
    /// beta >= 0, scales this layer's KL term in the training objective.
    pub prior_weight: f64,
}

impl VariationalDenseLayer {
    pub fn new(
        weight_mean: Matrix,
        weight_rho: Matrix,
        bias_mean: Vec<f64>,
        bias_rho: Vec<f64>,
        prior_weight: f64,
    ) -> Result<Self> {
        if weight_mean.rows() != weight_rho.rows()
            || weight_mean.cols() != weight_rho.cols()
            || bias_mean.len() != bias_rho.len()
            || weight_mean.rows() != bias_mean.len()
        {
            return Err(Error::shape(
                "variational layer: inconsistent shapes".to_string(),
            ));
        }
        if prior_weight < 0.0 {
            return Err(Error::invalid(
                "variational layer: prior_weight must be >= 0".to_string(),
            ));
        }
        Ok(VariationalDenseLayer {
            weight_mean,
            weight_rho,
            bias_mean,
            bias_rho,
            prior_weight,
        })
    }

    pub fn out_dim(&self) -> usize {
        self.weight_mean.rows()
    }

    pub fn in_dim(&self) -> usize {
        self.weight_mean.cols()
    }

    pub fn weight_sigma(&self) -> Matrix {
        self.weight_rho.map(softplus)
    }

    pub fn bias_sigma(&self) -> Vec<f64> {
        self.bias_rho.iter().map(|&r| softplus(r)).collect()
    }

    /// KL of this layer's posterior to the standard normal prior, unweighted.
    /// Softplus keeps sigma mathematically positive, but it can underflow to
    /// zero for extremely negative rho; the KL limit there is +infinity,
    /// which the training loop reports as divergence.
    pub fn kl(&self) -> f64 {
        let term = |mu: f64, sigma: f64| {
            if sigma > 0.0 {
                (sigma * sigma + mu * mu - 1.0 - (sigma * sigma).ln()) / 2.0
            } else {
                f64::INFINITY
            }
        };
        let ws = self.weight_sigma();
        let bs = self.bias_sigma();
        let weights: f64 = self
            .weight_mean
            .data()
            .iter()
            .zip(ws.data())
            .map(|(&m, &s)| term(m, s))
            .sum();
        let biases: f64 = self
            .bias_mean
            .iter()
            .zip(&bs)
            .map(|(&m, &s)| term(m, s))
            .sum();
        weights + biases
    }
}

#[derive(Debug, Clone)]
pub enum Layer {
    Dense(DenseLayer),
    Variational(VariationalDenseLayer),
    Relu,
    Dropout(DropoutSpec),
}

/// Per-batch noise for one stochastic forward pass. Drawing it separately
/// from the pass itself lets finite differences replay the exact same noise
/// while parameters move.
#[derive(Debug, Clone)]
pub enum LayerNoise {
    None,
    /// Scaled keep mask: 0 for dropped units, 1/(1-p) for survivors.
    Dropout(Matrix),
    Variational {
        /// out x in, standard normal, shared across the batch
        e: Matrix,
        /// batch x in, Rademacher signs
        s_in: Matrix,
        /// batch x out, Rademacher signs
        s_out: Matrix,
        /// batch x out, standard normal for the bias sample
        eps_b: Matrix,
    },
}

#[derive(Debug, Clone)]
pub struct NoiseDraw {
    per_layer: Vec<LayerNoise>,
    batch: usize,
}

/// Cached activations from a forward pass, consumed by `backward`.
pub struct Trace {
    /// Input to every layer, in layer order; last entry is the final logits.
    inputs: Vec<Matrix>,
    pub probs: Matrix,
}

/// Gradients shaped like the network's parameters.
#[derive(Debug, Clone)]
pub enum LayerGrads {
    None,
    Dense {
        w: Matrix,
        b: Vec<f64>,
    },
    Variational {
        w_mu: Matrix,
        w_rho: Matrix,
        b_mu: Vec<f64>,
        b_rho: Vec<f64>,
    },
}

#[derive(Debug, Clone)]
pub struct Grads {
    pub per_layer: Vec<LayerGrads>,
}

#[derive(Debug, Clone)]
pub struct Network {
    input_dim: usize,
    num_classes: usize,
    layers: Vec<Layer>,
}

/// How to build the dense layers of [`Network::mlp`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DenseKind {
    Deterministic,
    /// All dense layers become variational with this prior weight and
    /// initial rho (sigma = softplus(rho)).
    Variational {
        prior_weight: f64,
        rho_init: f64,
    },
}

impl Network {
    pub fn from_layers(input_dim: usize, layers: Vec<Layer>) -> Result<Self> {
        let mut width = input_dim;
        for layer in &layers {
            match layer {
                Layer::Dense(d) => {
                    if d.in_dim() != width {
                        return Err(Error::shape(format!(
                            "dense layer expects width {}, got {}",
                            d.in_dim(),
                            width
                        )));
                    }
                    width = d.out_dim();
                }
                Layer::Variational(v) => {
                    if v.in_dim() != width {
                        return Err(Error::shape(format!(
                            "variational layer expects width {}, got {}",
                            v.in_dim(),
                            width
                        )));
                    }
                    width = v.out_dim();
                }
                Layer::Relu | Layer::Dropout(_) => {}
            }
        }
        if width == 0 {
            return Err(Error::invalid("network has no output units".to_string()));
        }
        Ok(Network {
            input_dim,
            num_classes: width,
            layers,
        })
    }

    /// MLP with ReLU hidden activations: widths `[input_dim, hidden..., num_classes]`.
    /// With `dropout_p` set, a dropout layer follows each hidden activation.
    pub fn mlp(
        input_dim: usize,
        hidden: &[usize],
        num_classes: usize,
        kind: DenseKind,
        dropout_p: Option<f64>,
        rng: &mut Rng,
    ) -> Result<Self> {
        if input_dim == 0 || num_classes == 0 {
            return Err(Error::invalid(
                "mlp: zero input or output width".to_string(),
            ));
        }
        let mut layers = Vec::new();
        let mut prev = input_dim;
        for (i, &h) in hidden
            .iter()
            .chain(std::iter::once(&num_classes))
            .enumerate()
        {
            layers.push(make_dense(prev, h, kind, rng)?);
            let is_hidden = i < hidden.len();
            if is_hidden {
                layers.push(Layer::Relu);
                if let Some(p) = dropout_p {
                    layers.push(Layer::Dropout(DropoutSpec::new(p)?));
                }
            }
            prev = h;
        }
        Network::from_layers(input_dim, layers)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn has_dropout(&self) -> bool {
        self.layers
            .iter()
            .any(|l| matches!(l, Layer::Dropout(d) if d.p() > 0.0))
    }

    pub fn has_variational(&self) -> bool {
        self.layers
            .iter()
            .any(|l| matches!(l, Layer::Variational(_)))
    }

    /// Unweighted KL sum over all variational layers.
    pub fn kl_total(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Variational(v) => v.kl(),
                _ => 0.0,
            })
            .sum()
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Dense(d) => d.weights.data().len() + d.bias.len(),
                Layer::Variational(v) => v.weight_mean.data().len() * 2 + v.bias_mean.len() * 2,
                _ => 0,
            })
            .sum()
    }

    pub fn get_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for layer in &self.layers {
            match layer {
                Layer::Dense(d) => {
                    out.extend_from_slice(d.weights.data());
                    out.extend_from_slice(&d.bias);
                }
                Layer::Variational(v) => {
                    out.extend_from_slice(v.weight_mean.data());
                    out.extend_from_slice(v.weight_rho.data());
                    out.extend_from_slice(&v.bias_mean);
                    out.extend_from_slice(&v.bias_rho);
                }
                _ => {}
            }
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::shape(format!(
                "set_params: expected {} values, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        let mut at = 0;
        let mut take = |n: usize| {
            let s = &flat[at..at + n];
            at += n;
            s
        };
        for layer in &mut self.layers {
            match layer {
                Layer::Dense(d) => {
                    let nw = d.weights.data().len();
                    d.weights.data_mut().copy_from_slice(take(nw));
                    let nb = d.bias.len();
                    d.bias.copy_from_slice(take(nb));
                }
                Layer::Variational(v) => {
                    let nw = v.weight_mean.data().len();
                    v.weight_mean.data_mut().copy_from_slice(take(nw));
                    v.weight_rho.data_mut().copy_from_slice(take(nw));
                    let nb = v.bias_mean.len();
                    v.bias_mean.copy_from_slice(take(nb));
                    v.bias_rho.copy_from_slice(take(nb));
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Flatten `grads` in the same order as [`Network::get_params`].
    pub fn flatten_grads(&self, grads: &Grads) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for lg in &grads.per_layer {
            match lg {
                LayerGrads::Dense { w, b } => {
                    out.extend_from_slice(w.data());
                    out.extend_from_slice(b);
                }
                LayerGrads::Variational {
                    w_mu,
                    w_rho,
                    b_mu,
                    b_rho,
                } => {
                    out.extend_from_slice(w_mu.data());
                    out.extend_from_slice(w_rho.data());
                    out.extend_from_slice(b_mu);
                    out.extend_from_slice(b_rho);
                }
                LayerGrads::None => {}
            }
        }
        out
    }

    /// Probability batch, one softmax row per input row.
    pub fn forward(&self, input: &Matrix, mode: Mode, rng: Option<&mut Rng>) -> Result<Matrix> {
        match (mode, rng) {
            (Mode::Eval, _) => self.forward_eval(input),
            (Mode::Train, Some(rng)) => {
                let noise = self.draw_noise(input.rows(), rng);
                Ok(self.forward_noisy(input, &noise)?.probs)
            }
            (Mode::Train, None) => Err(Error::invalid(
                "forward: train mode requires an rng".to_string(),
            )),
        }
    }

    pub fn forward_eval(&self, input: &Matrix) -> Result<Matrix> {
        self.check_input(input)?;
        let mut x = input.clone();
        for layer in &self.layers {
            x = match layer {
                Layer::Dense(d) => affine(&x, &d.weights, &d.bias),
                Layer::Variational(v) => affine(&x, &v.weight_mean, &v.bias_mean),
                Layer::Relu => x.map(|v| v.max(0.0)),
                Layer::Dropout(_) => x,
            };
        }
        self.finish_probs(x)
    }

    /// One stochastic pass: dropout active, variational layers sampled.
    pub fn forward_stochastic(&self, input: &Matrix, rng: &mut Rng) -> Result<Matrix> {
        let noise = self.draw_noise(input.rows(), rng);
        Ok(self.forward_noisy(input, &noise)?.probs)
    }

    pub fn draw_noise(&self, batch: usize, rng: &mut Rng) -> NoiseDraw {
        let mut per_layer = Vec::with_capacity(self.layers.len());
        let mut width = self.input_dim;
        for layer in &self.layers {
            let noise = match layer {
                Layer::Dense(d) => {
                    width = d.out_dim();
                    LayerNoise::None
                }
                Layer::Variational(v) => {
                    let (out, inp) = (v.out_dim(), v.in_dim());
                    let e = normal_matrix(out, inp, rng);
                    let s_in = sign_matrix(batch, inp, rng);
                    let s_out = sign_matrix(batch, out, rng);
                    let eps_b = normal_matrix(batch, out, rng);
                    width = out;
                    LayerNoise::Variational {
                        e,
                        s_in,
                        s_out,
                        eps_b,
                    }
                }
                Layer::Relu => LayerNoise::None,
                Layer::Dropout(spec) => {
                    let mut mask = Matrix::zeros(batch, width);
                    if spec.p() > 0.0 {
                        let keep_scale = 1.0 / (1.0 - spec.p());
                        for v in mask.data_mut() {
                            *v = if rng.gen::<f64>() >= spec.p() {
                                keep_scale
                            } else {
                                0.0
                            };
                        }
                    } else {
                        mask.data_mut().fill(1.0);
                    }
                    LayerNoise::Dropout(mask)
                }
            };
            per_layer.push(noise);
        }
        NoiseDraw { per_layer, batch }
    }

    /// Stochastic forward with the given noise; caches what backward needs.
    pub fn forward_noisy(&self, input: &Matrix, noise: &NoiseDraw) -> Result<Trace> {
        self.check_input(input)?;
        if noise.batch != input.rows() || noise.per_layer.len() != self.layers.len() {
            return Err(Error::shape(
                "forward_noisy: noise does not match batch".to_string(),
            ));
        }
        let mut inputs = Vec::with_capacity(self.layers.len() + 1);
        let mut x = input.clone();
        for (layer, ln) in self.layers.iter().zip(&noise.per_layer) {
            inputs.push(x.clone());
            x = match (layer, ln) {
                (Layer::Dense(d), _) => affine(&x, &d.weights, &d.bias),
                (
                    Layer::Variational(v),
                    LayerNoise::Variational {
                        e,
                        s_in,
                        s_out,
                        eps_b,
                    },
                ) => flipout_with_noise(v, &x, e, s_in, s_out, eps_b),
                (Layer::Relu, _) => x.map(|v| v.max(0.0)),
                (Layer::Dropout(_), LayerNoise::Dropout(mask)) => x.hadamard(mask),
                _ => {
                    return Err(Error::shape(
                        "forward_noisy: noise kind mismatch".to_string(),
                    ))
                }
            };
        }
        inputs.push(x.clone());
        let probs = self.finish_probs(x)?;
        Ok(Trace { inputs, probs })
    }

    /// Backpropagate mean cross-entropy plus the per-layer weighted KL term
    /// scaled by `kl_scale` (usually 1 / batches-per-epoch).
    pub fn backward(
        &self,
        trace: &Trace,
        noise: &NoiseDraw,
        labels: &[usize],
        kl_scale: f64,
    ) -> Result<Grads> {
        let batch = trace.probs.rows();
        if labels.len() != batch {
            return Err(Error::shape(
                "backward: labels do not match batch".to_string(),
            ));
        }
        // d(mean CE)/d(logits) = (probs - onehot) / batch
        let mut grad = trace.probs.clone();
        for (i, &label) in labels.iter().enumerate() {
            if label >= self.num_classes {
                return Err(Error::invalid(format!(
                    "backward: label {label} out of range"
                )));
            }
            let row = grad.row_mut(i);
            row[label] -= 1.0;
            for v in row.iter_mut() {
                *v /= batch as f64;
            }
        }

        let mut per_layer = vec![LayerGrads::None; self.layers.len()];
        for idx in (0..self.layers.len()).rev() {
            let x = &trace.inputs[idx];
            match (&self.layers[idx], &noise.per_layer[idx]) {
                (Layer::Dense(d), _) => {
                    let w_grad = grad.atb(x);
                    let b_grad = grad.col_sum();
                    let dx = grad.ab(&d.weights);
                    per_layer[idx] = LayerGrads::Dense {
                        w: w_grad,
                        b: b_grad,
                    };
                    grad = dx;
                }
                (
                    Layer::Variational(v),
                    LayerNoise::Variational {
                        e,
                        s_in,
                        s_out,
                        eps_b,
                    },
                ) => {
                    let sigma = v.weight_sigma();
                    let delta = sigma.hadamard(e);
                    let grad_signed = grad.hadamard(s_out);
                    let x_signed = x.hadamard(s_in);

                    let mut w_mu = grad.atb(x);
                    let d_delta = grad_signed.atb(&x_signed);
                    let d_sigma = d_delta.hadamard(e);
                    let mut w_rho = Matrix::zeros(v.out_dim(), v.in_dim());
                    for (o, (ds, r)) in w_rho
                        .data_mut()
                        .iter_mut()
                        .zip(d_sigma.data().iter().zip(v.weight_rho.data()))
                    {
                        *o = ds * sigmoid(*r);
                    }

                    let mut b_mu = grad.col_sum();
                    let d_sigma_b = grad.hadamard(eps_b).col_sum();
                    let mut b_rho: Vec<f64> = d_sigma_b
                        .iter()
                        .zip(&v.bias_rho)
                        .map(|(ds, r)| ds * sigmoid(*r))
                        .collect();

                    if kl_scale != 0.0 && v.prior_weight != 0.0 {
                        add_kl_grads(v, kl_scale, &mut w_mu, &mut w_rho, &mut b_mu, &mut b_rho);
                    }

                    let dx_direct = grad.ab(&v.weight_mean);
                    let dx_perturb = grad_signed.ab(&delta).hadamard(s_in);
                    let mut dx = dx_direct;
                    for (a, b) in dx.data_mut().iter_mut().zip(dx_perturb.data()) {
                        *a += b;
                    }
                    per_layer[idx] = LayerGrads::Variational {
                        w_mu,
                        w_rho,
                        b_mu,
                        b_rho,
                    };
                    grad = dx;
                }
                (Layer::Relu, _) => {
                    let mut dx = grad;
                    for (g, &inp) in dx.data_mut().iter_mut().zip(x.data()) {
                        if inp <= 0.0 {
                            *g = 0.0;
                        }
                    }
                    grad = dx;
                }
                (Layer::Dropout(_), LayerNoise::Dropout(mask)) => {
                    grad = grad.hadamard(mask);
                }
                _ => return Err(Error::shape("backward: noise kind mismatch".to_string())),
            }
        }
        Ok(Grads { per_layer })
    }

    /// Training objective for the given noise: CE + kl_scale * sum beta_l KL_l.
    pub fn loss_noisy(
        &self,
        input: &Matrix,
        labels: &[usize],
        noise: &NoiseDraw,
        kl_scale: f64,
    ) -> Result<f64> {
        let trace = self.forward_noisy(input, noise)?;
        let ce = loss::cross_entropy_loss(&trace.probs, labels)?;
        Ok(ce + kl_scale * self.weighted_kl())
    }

    /// Sum of beta_l * KL_l over variational layers.
    pub fn weighted_kl(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Variational(v) => v.prior_weight * v.kl(),
                _ => 0.0,
            })
            .sum()
    }

    fn check_input(&self, input: &Matrix) -> Result<()> {
        if input.cols() != self.input_dim {
            return Err(Error::shape(format!(
                "input width {} does not match network input {}",
                input.cols(),
                self.input_dim
            )));
        }
        Ok(())
    }

    fn finish_probs(&self, logits: Matrix) -> Result<Matrix> {
        if !logits.is_finite() {
            return Err(Error::numeric(
                "forward produced non-finite activations".to_string(),
            ));
        }
        Ok(softmax_rows(&logits))
    }
}

fn make_dense(in_dim: usize, out_dim: usize, kind: DenseKind, rng: &mut Rng) -> Result<Layer> {
    // He initialization for the means.
    let scale = (2.0 / in_dim as f64).sqrt();
    let mut w = Matrix::zeros(out_dim, in_dim);
    for v in w.data_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *v = z * scale;
    }
    match kind {
        DenseKind::Deterministic => Ok(Layer::Dense(DenseLayer::new(w, vec![0.0; out_dim])?)),
        DenseKind::Variational {
            prior_weight,
            rho_init,
        } => {
            let rho = Matrix::zeros(out_dim, in_dim).map(|_| rho_init);
            Ok(Layer::Variational(VariationalDenseLayer::new(
                w,
                rho,
                vec![0.0; out_dim],
                vec![rho_init; out_dim],
                prior_weight,
            )?))
        }
    }
}

fn affine(x: &Matrix, w: &Matrix, b: &[f64]) -> Matrix {
    let mut y = x.abt(w);
    for i in 0..y.rows() {
        for (v, bias) in y.row_mut(i).iter_mut().zip(b) {
            *v += bias;
        }
    }
    y
}

fn normal_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    let mut m = Matrix::zeros(rows, cols);
    for v in m.data_mut() {
        *v = rng.sample(StandardNormal);
    }
    m
}

fn sign_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    let mut m = Matrix::zeros(rows, cols);
    for v in m.data_mut() {
        *v = if rng.gen::<bool>() { 1.0 } else { -1.0 };
    }
    m
}

fn add_kl_grads(
    v: &VariationalDenseLayer,
    kl_scale: f64,
    w_mu: &mut Matrix,
    w_rho: &mut Matrix,
    b_mu: &mut [f64],
    b_rho: &mut [f64],
) {
    let c = kl_scale * v.prior_weight;
    // dKL/dmu = mu, dKL/dsigma = sigma - 1/sigma, dsigma/drho = sigmoid(rho)
    for (g, &mu) in w_mu.data_mut().iter_mut().zip(v.weight_mean.data()) {
        *g += c * mu;
    }
    for (g, &rho) in w_rho.data_mut().iter_mut().zip(v.weight_rho.data()) {
        let s = softplus(rho);
        *g += c * (s - 1.0 / s) * sigmoid(rho);
    }
    for (g, &mu) in b_mu.iter_mut().zip(&v.bias_mean) {
        *g += c * mu;
    }
    for (g, &rho) in b_rho.iter_mut().zip(&v.bias_rho) {
        let s = softplus(rho);
        *g += c * (s - 1.0 / s) * sigmoid(rho);
    }
}

/// Flipout estimator: shared Gaussian weight perturbation decorrelated per
/// batch row by input/output Rademacher signs, plus a per-row bias sample.
pub fn flipout_forward(
    layer: &VariationalDenseLayer,
    input: &Matrix,
    rng: &mut Rng,
) -> Result<Matrix> {
    if input.cols() != layer.in_dim() {
        return Err(Error::shape(format!(
            "flipout_forward: input width {} vs layer {}",
            input.cols(),
            layer.in_dim()
        )));
    }
    let e = normal_matrix(layer.out_dim(), layer.in_dim(), rng);
    let s_in = sign_matrix(input.rows(), layer.in_dim(), rng);
    let s_out = sign_matrix(input.rows(), layer.out_dim(), rng);
    let eps_b = normal_matrix(input.rows(), layer.out_dim(), rng);
    Ok(flipout_with_noise(layer, input, &e, &s_in, &s_out, &eps_b))
}

fn flipout_with_noise(
    layer: &VariationalDenseLayer,
    input: &Matrix,
    e: &Matrix,
    s_in: &Matrix,
    s_out: &Matrix,
    eps_b: &Matrix,
) -> Matrix {
    let sigma = layer.weight_sigma();
    let delta = sigma.hadamard(e);
    let mut y = input.abt(&layer.weight_mean);
    let perturb = input.hadamard(s_in).abt(&delta).hadamard(s_out);
    let bias_sigma = layer.bias_sigma();
    for i in 0..y.rows() {
        let prow = perturb.row(i);
        let erow = eps_b.row(i);
        for (j, v) in y.row_mut(i).iter_mut().enumerate() {
            *v += prow[j] + layer.bias_mean[j] + bias_sigma[j] * erow[j];
        }
    }
    y
}

/// Inverted dropout: identity in eval mode; in train mode each unit is zeroed
/// with probability p and survivors are scaled by 1/(1-p).
pub fn dropout_forward(
    spec: &DropoutSpec,
    activations: &Matrix,
    mode: Mode,
    rng: &mut Rng,
) -> Matrix {
    if mode == Mode::Eval || spec.p() == 0.0 {
        return activations.clone();
    }
    let keep_scale = 1.0 / (1.0 - spec.p());
    let mut out = activations.clone();
    for v in out.data_mut() {
        *v = if rng.gen::<f64>() >= spec.p() {
            *v * keep_scale
        } else {
            0.0
        };
    }
    out
}
