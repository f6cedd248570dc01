//! Feed-forward kin/non-kin classifier trained with inverted dropout.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{sigmoid_scalar, Mat, RngStream};
use crate::rbm::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
    Relu,
    Linear,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid_scalar(z),
            Activation::Relu => z.max(0.0),
            Activation::Linear => z,
        }
    }

    /// Derivative expressed through the pre-activation and the output.
    #[inline]
    fn derivative(self, z: f64, y: f64) -> f64 {
        match self {
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear => 1.0,
        }
    }
}

/// `y = f(x·W + b)` with `W` of shape `in × out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weights: Mat,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn input_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.cols()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub layers: Vec<DenseLayer>,
    /// Dropout rate on hidden activations feeding each deeper layer.
    pub dropout_hidden: f64,
    /// Dropout rate on the input vector.
    pub dropout_input: f64,
    /// Set once the model has been through [`mlp_train`].
    pub trained: bool,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// Input to each layer after masking and scaling.
    pub inputs: Vec<Vec<f64>>,
    pub pre_activations: Vec<Vec<f64>>,
    pub outputs: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &[f64] {
        self.outputs.last().map_or(&[], Vec::as_slice)
    }
}

/// Gradient of one dense layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrad {
    pub weights: Mat,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct MlpOutcome {
    pub model: MlpModel,
    /// Mean cross-entropy on the (unmasked) training set after each epoch.
    pub history: Vec<f64>,
    pub final_loss: f64,
}

fn check_rate(r: f64) -> Result<()> {
    if !(0.0..1.0).contains(&r) {
        return Err(Error::DegenerateRate(r));
    }
    Ok(())
}

impl MlpModel {
    /// Random model. `arch` lists every width including input and the
    /// single sigmoid output, e.g. `[1024, 512, 128, 1]`. Hidden weights are
    /// Glorot-scaled Gaussians; the output layer starts near zero so the
    /// untrained model predicts about 0.5.
    pub fn new(
        arch: &[usize],
        hidden: Activation,
        dropout_input: f64,
        dropout_hidden: f64,
        rng: &mut RngStream,
    ) -> Result<Self> {
        if arch.len() < 2 || *arch.last().unwrap() != 1 || arch.contains(&0) {
            return Err(Error::Config(format!("architecture {arch:?} must end in a single output unit")));
        }
        check_rate(dropout_input)?;
        check_rate(dropout_hidden)?;
        let n = arch.len() - 1;
        let layers = arch
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let last = i == n - 1;
                let std = if last { 0.01 } else { (2.0 / (w[0] + w[1]) as f64).sqrt() };
                DenseLayer {
                    weights: Mat::from_fn(w[0], w[1], |_, _| rng.gaussian(0.0, std)),
                    bias: vec![0.0; w[1]],
                    activation: if last { Activation::Sigmoid } else { hidden },
                }
            })
            .collect();
        Ok(Self { layers, dropout_hidden, dropout_input, trained: false })
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, DenseLayer::input_dim)
    }

    pub fn validate(&self) -> Result<()> {
        check_rate(self.dropout_input)?;
        check_rate(self.dropout_hidden)?;
        let last = self
            .layers
            .last()
            .ok_or_else(|| Error::DimensionInconsistency("classifier has no layers".into()))?;
        if last.output_dim() != 1 || last.activation != Activation::Sigmoid {
            return Err(Error::DimensionInconsistency("final layer must be a single sigmoid unit".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.bias.len() != l.output_dim() {
                return Err(Error::DimensionInconsistency(format!("layer {i} bias length")));
            }
            if !l.weights.is_finite() || l.bias.iter().any(|b| !b.is_finite()) {
                return Err(Error::InvalidParameter(format!("layer {i} has non-finite parameters")));
            }
            if i > 0 && self.layers[i - 1].output_dim() != l.input_dim() {
                return Err(Error::DimensionInconsistency(format!("layer {i} input width")));
            }
        }
        Ok(())
    }

    /// Dropout rate applied to the input of layer `n`.
    pub fn rate_for_layer(&self, n: usize) -> f64 {
        if n == 0 {
            self.dropout_input
        } else {
            self.dropout_hidden
        }
    }

    /// Forward pass with explicit masks on each layer's input (`None` means
    /// no dropout at that layer). Masked inputs are scaled by `1/(1−r)`.
    pub fn forward_masked(&self, x: &[f64], masks: &[Option<Vec<f64>>]) -> Result<ForwardTrace> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape(format!("input has {} entries, model expects {}", x.len(), self.input_dim())));
        }
        let mut trace = ForwardTrace { inputs: Vec::new(), pre_activations: Vec::new(), outputs: Vec::new() };
        let mut y = x.to_vec();
        for (n, layer) in self.layers.iter().enumerate() {
            let input = match masks.get(n).and_then(Option::as_ref) {
                Some(mask) => {
                    let r = self.rate_for_layer(n);
                    check_rate(r)?;
                    if mask.len() != y.len() {
                        return Err(Error::Shape(format!("mask {n} has wrong length")));
                    }
                    let scale = 1.0 / (1.0 - r);
                    y.iter().zip(mask).map(|(v, m)| scale * v * m).collect()
                }
                None => y,
            };
            let mut z = Mat::row_vector(&input).matmul(&layer.weights)?.into_data();
            for (zi, b) in z.iter_mut().zip(&layer.bias) {
                *zi += b;
            }
            y = z.iter().map(|&v| layer.activation.apply(v)).collect();
            trace.inputs.push(input);
            trace.pre_activations.push(z);
            trace.outputs.push(y.clone());
        }
        Ok(trace)
    }

    fn draw_masks(&self, x_len: usize, rng: &mut RngStream) -> Vec<Option<Vec<f64>>> {
        let mut width = x_len;
        self.layers
            .iter()
            .enumerate()
            .map(|(n, layer)| {
                let keep = 1.0 - self.rate_for_layer(n);
                let mask = (0..width).map(|_| if rng.bernoulli(keep) { 1.0 } else { 0.0 }).collect();
                width = layer.output_dim();
                Some(mask)
            })
            .collect()
    }

    /// `train = true`: masks `m ~ Bernoulli(1−r)` with `1/(1−r)` scaling.
    /// `train = false`: plain forward pass.
    pub fn dropout_forward(&self, x: &[f64], rng: &mut RngStream, train: bool) -> Result<Vec<f64>> {
        check_rate(self.dropout_input)?;
        check_rate(self.dropout_hidden)?;
        let masks = if train { self.draw_masks(x.len(), rng) } else { Vec::new() };
        Ok(self.forward_masked(x, &masks)?.output().to_vec())
    }

    /// Probability of the positive class, without dropout.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        Ok(self.forward_masked(x, &[])?.output()[0])
    }

    /// Backpropagates binary cross-entropy through a recorded trace,
    /// accumulating `weight · ∂L/∂θ` into `grads`.
    fn backprop(&self, trace: &ForwardTrace, masks: &[Option<Vec<f64>>], label: f64, weight: f64, grads: &mut [DenseGrad]) {
        // sigmoid output with cross-entropy: ∂L/∂z = p − y
        let mut delta: Vec<f64> = vec![trace.output()[0] - label];
        for n in (0..self.layers.len()).rev() {
            let layer = &self.layers[n];
            let input = &trace.inputs[n];
            let g = &mut grads[n];
            for (i, &xi) in input.iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                for (gw, d) in g.weights.row_mut(i).iter_mut().zip(&delta) {
                    *gw += weight * xi * d;
                }
            }
            for (gb, d) in g.bias.iter_mut().zip(&delta) {
                *gb += weight * d;
            }
            if n == 0 {
                break;
            }
            // ∂L/∂(masked input) → ∂L/∂(previous output) → ∂L/∂(previous pre-activation)
            let mut d_in: Vec<f64> = (0..layer.input_dim())
                .map(|i| crate::numeric::dot(layer.weights.row(i), &delta))
                .collect();
            if let Some(Some(mask)) = masks.get(n) {
                let scale = 1.0 / (1.0 - self.rate_for_layer(n));
                for (d, m) in d_in.iter_mut().zip(mask) {
                    *d *= scale * m;
                }
            }
            let prev = &self.layers[n - 1];
            delta = d_in
                .iter()
                .zip(&trace.pre_activations[n - 1])
                .zip(&trace.outputs[n - 1])
                .map(|((d, &z), &y)| d * prev.activation.derivative(z, y))
                .collect();
        }
    }

    fn zero_grads(&self) -> Vec<DenseGrad> {
        self.layers
            .iter()
            .map(|l| DenseGrad { weights: Mat::zeros(l.input_dim(), l.output_dim()), bias: vec![0.0; l.output_dim()] })
            .collect()
    }

    /// Mean binary cross-entropy (no dropout) and its exact gradient.
    pub fn loss_and_gradients(&self, features: &Mat, labels: &[f64]) -> Result<(f64, Vec<DenseGrad>)> {
        if features.rows() != labels.len() || features.rows() == 0 {
            return Err(Error::Shape("features and labels must be non-empty and aligned".into()));
        }
        let mut grads = self.zero_grads();
        let w = 1.0 / labels.len() as f64;
        let mut loss = 0.0;
        for (n, &y) in labels.iter().enumerate() {
            let trace = self.forward_masked(features.row(n), &[])?;
            loss += bce(trace.output()[0], y);
            self.backprop(&trace, &[], y, w, &mut grads);
        }
        Ok((loss * w, grads))
    }

    /// Mean binary cross-entropy without dropout.
    pub fn loss(&self, features: &Mat, labels: &[f64]) -> Result<f64> {
        let mut loss = 0.0;
        for (n, &y) in labels.iter().enumerate() {
            loss += bce(self.predict(features.row(n))?, y);
        }
        Ok(loss / labels.len().max(1) as f64)
    }

    /// Fraction of rows classified correctly at threshold 0.5.
    pub fn accuracy(&self, features: &Mat, labels: &[f64]) -> Result<f64> {
        let mut correct = 0usize;
        for (n, &y) in labels.iter().enumerate() {
            let p = self.predict(features.row(n))?;
            if (p >= 0.5) == (y >= 0.5) {
                correct += 1;
            }
        }
        Ok(correct as f64 / labels.len().max(1) as f64)
    }
}

#[inline]
fn bce(p: f64, y: f64) -> f64 {
    let p = p.clamp(1e-15, 1.0 - 1e-15);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Classifier hyper-parameters beyond [`TrainConfig`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierSpec {
    /// Hidden widths; input and output widths come from the data.
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub dropout_input: f64,
    pub dropout_hidden: f64,
    pub weight_decay: f64,
}

impl Default for ClassifierSpec {
    fn default() -> Self {
        Self { hidden: vec![512, 128], activation: Activation::Relu, dropout_input: 0.2, dropout_hidden: 0.5, weight_decay: 0.0 }
    }
}

/// Minibatch SGD with momentum on binary cross-entropy, with dropout masks
/// drawn per sample. `cfg.cd_steps` is ignored and `cfg.epochs` may be 0.
pub fn mlp_train(features: &Mat, labels: &[f64], spec: &ClassifierSpec, cfg: &TrainConfig) -> Result<MlpOutcome> {
    if features.rows() != labels.len() {
        return Err(Error::Shape(format!("{} feature rows vs {} labels", features.rows(), labels.len())));
    }
    if labels.is_empty() {
        return Err(Error::EmptyInput("no training examples".into()));
    }
    if labels.iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(Error::InvalidParameter("labels must be 0 or 1".into()));
    }
    let positives = labels.iter().filter(|&&y| y == 1.0).count();
    if positives == 0 || positives == labels.len() {
        return Err(Error::DegenerateLabels("classifier needs both classes".into()));
    }
    if !(cfg.learning_rate >= 0.0 && cfg.learning_rate.is_finite()) || cfg.batch_size == 0 || !(0.0..1.0).contains(&cfg.momentum) {
        return Err(Error::Config("invalid classifier training config".into()));
    }
    let mut rng = RngStream::new(cfg.seed);
    let mut arch = vec![features.cols()];
    arch.extend_from_slice(&spec.hidden);
    arch.push(1);
    let mut model = MlpModel::new(&arch, spec.activation, spec.dropout_input, spec.dropout_hidden, &mut rng.derive(7))?;
    let mut velocity = model.zero_grads();
    let mut order: Vec<usize> = (0..labels.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        rng.shuffle(&mut order);
        for chunk in order.chunks(cfg.batch_size) {
            let mut grads = model.zero_grads();
            let w = 1.0 / chunk.len() as f64;
            for &n in chunk {
                let x = features.row(n);
                let masks = model.draw_masks(x.len(), &mut rng);
                let trace = model.forward_masked(x, &masks)?;
                model.backprop(&trace, &masks, labels[n], w, &mut grads);
            }
            for ((layer, g), v) in model.layers.iter_mut().zip(&grads).zip(velocity.iter_mut()) {
                for ((vw, gw), pw) in v.weights.data_mut().iter_mut().zip(g.weights.data()).zip(layer.weights.data()) {
                    *vw = cfg.momentum * *vw - cfg.learning_rate * (gw + spec.weight_decay * pw);
                }
                for (vb, gb) in v.bias.iter_mut().zip(&g.bias) {
                    *vb = cfg.momentum * *vb - cfg.learning_rate * gb;
                }
                layer.weights.axpy(1.0, &v.weights)?;
                for (b, vb) in layer.bias.iter_mut().zip(&v.bias) {
                    *b += vb;
                }
            }
        }
        let loss = model.loss(features, labels)?;
        if !loss.is_finite() || model.validate().is_err() {
            return Err(Error::Divergence { epoch, layer: None });
        }
        history.push(loss);
    }
    model.trained = true;
    let final_loss = match history.last() {
        Some(&l) => l,
        None => model.loss(features, labels)?,
    };
    Ok(MlpOutcome { model, history, final_loss })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_model(seed: u64, hidden: Activation) -> MlpModel {
        let mut rng = RngStream::new(seed);
        let mut m = MlpModel::new(&[4, 3, 1], hidden, 0.2, 0.5, &mut rng).unwrap();
        // make the output layer non-trivial for gradient checks
        m.layers[1].weights = Mat::from_fn(3, 1, |_, _| rng.gaussian(0.0, 1.0));
        m.layers[0].bias = (0..3).map(|_| rng.gaussian(0.0, 0.5)).collect();
        m
    }

    #[test]
    fn zero_rate_train_equals_plain_forward() {
        let mut rng = RngStream::new(1);
        let m = MlpModel::new(&[5, 4, 1], Activation::Sigmoid, 0.0, 0.0, &mut rng).unwrap();
        let x = [0.1, 0.5, -0.3, 0.9, 0.0];
        let a = m.dropout_forward(&x, &mut rng, true).unwrap();
        let b = m.dropout_forward(&x, &mut rng, false).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn all_ones_mask_doubles_contribution() {
        let mut rng = RngStream::new(2);
        let m = MlpModel::new(&[3, 2, 1], Activation::Linear, 0.5, 0.5, &mut rng).unwrap();
        let x = [0.4, -1.0, 2.0];
        let masked = m.forward_masked(&x, &[Some(vec![1.0; 3])]).unwrap();
        let plain = m.forward_masked(&x, &[]).unwrap();
        for j in 0..2 {
            let bias = m.layers[0].bias[j];
            let scaled = masked.pre_activations[0][j] - bias;
            let unscaled = plain.pre_activations[0][j] - bias;
            assert!((scaled - 2.0 * unscaled).abs() < 1e-15);
        }
    }

    #[test]
    fn rate_one_is_degenerate() {
        let mut rng = RngStream::new(3);
        assert!(matches!(
            MlpModel::new(&[3, 2, 1], Activation::Relu, 1.0, 0.5, &mut rng),
            Err(Error::DegenerateRate(_))
        ));
        let mut m = MlpModel::new(&[3, 2, 1], Activation::Relu, 0.2, 0.5, &mut rng).unwrap();
        m.dropout_hidden = 1.0;
        assert!(matches!(m.dropout_forward(&[0.0; 3], &mut rng, true), Err(Error::DegenerateRate(_))));
    }

    #[test]
    fn inference_is_mask_free_and_deterministic() {
        let m = tiny_model(4, Activation::Sigmoid);
        let x = [0.3, 0.1, 0.7, 0.2];
        let mut r1 = RngStream::new(1);
        let mut r2 = RngStream::new(99);
        assert_eq!(m.dropout_forward(&x, &mut r1, false).unwrap(), m.dropout_forward(&x, &mut r2, false).unwrap());
        assert_eq!(r1.counter, 0);
    }

    #[test]
    fn backprop_matches_finite_difference() {
        for hidden in [Activation::Sigmoid, Activation::Relu] {
            let model = tiny_model(11, hidden);
            let mut rng = RngStream::new(12);
            let x = Mat::from_fn(6, 4, |_, _| rng.gaussian(0.0, 1.0));
            let y = vec![1.0, 0.0, 1.0, 1.0, 0.0, 0.0];
            let (_, grads) = model.loss_and_gradients(&x, &y).unwrap();
            let eps = 1e-5;
            for (li, g) in grads.iter().enumerate() {
                for idx in 0..g.weights.len() {
                    let mut up = model.clone();
                    up.layers[li].weights.data_mut()[idx] += eps;
                    let mut dn = model.clone();
                    dn.layers[li].weights.data_mut()[idx] -= eps;
                    let fd = (up.loss(&x, &y).unwrap() - dn.loss(&x, &y).unwrap()) / (2.0 * eps);
                    let a = g.weights.data()[idx];
                    assert!((a - fd).abs() <= 1e-4 * a.abs().max(fd.abs()).max(1e-3), "{a} vs {fd}");
                }
                for idx in 0..g.bias.len() {
                    let mut up = model.clone();
                    up.layers[li].bias[idx] += eps;
                    let mut dn = model.clone();
                    dn.layers[li].bias[idx] -= eps;
                    let fd = (up.loss(&x, &y).unwrap() - dn.loss(&x, &y).unwrap()) / (2.0 * eps);
                    let a = g.bias[idx];
                    assert!((a - fd).abs() <= 1e-4 * a.abs().max(fd.abs()).max(1e-3), "{a} vs {fd}");
                }
            }
        }
    }

    #[test]
    fn untrained_loss_is_near_ln2() {
        let mut rng = RngStream::new(5);
        let x = Mat::from_fn(40, 6, |_, _| rng.uniform());
        let y: Vec<f64> = (0..40).map(|i| (i % 2) as f64).collect();
        let spec = ClassifierSpec { hidden: vec![8, 4], ..ClassifierSpec::default() };
        let cfg = TrainConfig { epochs: 0, batch_size: 8, ..TrainConfig::default() };
        let out = mlp_train(&x, &y, &spec, &cfg).unwrap();
        assert!((out.final_loss - std::f64::consts::LN_2).abs() < 0.1);
        assert!(out.history.is_empty());
    }

    #[test]
    fn single_class_rejected() {
        let x = Mat::zeros(4, 2);
        let cfg = TrainConfig::default();
        assert!(matches!(
            mlp_train(&x, &[1.0; 4], &ClassifierSpec::default(), &cfg),
            Err(Error::DegenerateLabels(_))
        ));
    }
}
