//! Greedy layer-wise stacking of RBMs into a deep belief network and
//! deterministic feed-forward encoding through the stack.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{Mat, RngStream};
use crate::rbm::{RbmLayer, TrainConfig, UnitKind};

/// Ordered stack of RBM layers; layer `i`'s hidden width is layer `i+1`'s
/// visible width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DbnStack {
    pub layers: Vec<RbmLayer>,
}

/// Shape and regularization of a stack to pretrain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackSpec {
    /// Widths including the input, e.g. `[1024, 512, 512]`.
    pub dims: Vec<usize>,
    /// Unit kind of the data-facing layer; deeper layers are Bernoulli.
    pub first_unit: UnitKind,
    /// Filters on the data-facing layer (0 for a plain RBM).
    pub filters: usize,
    pub filter_size: usize,
    /// Required when `filters > 0`.
    pub image_shape: Option<(usize, usize)>,
    pub alpha: f64,
    pub beta: f64,
    /// Step size for the data-facing layer when it differs from the rest
    /// (Gaussian visibles usually need a smaller one).
    #[serde(default)]
    pub first_learning_rate: Option<f64>,
}

impl StackSpec {
    /// Plain Bernoulli stack without regularization.
    pub fn plain(dims: &[usize]) -> Self {
        Self {
            dims: dims.to_vec(),
            first_unit: UnitKind::Bernoulli,
            filters: 0,
            filter_size: 3,
            image_shape: None,
            alpha: 0.0,
            beta: 0.0,
            first_learning_rate: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub stack: DbnStack,
    /// Per-layer reconstruction-error histories.
    pub histories: Vec<Vec<f64>>,
}

impl DbnStack {
    pub fn new(layers: Vec<RbmLayer>) -> Result<Self> {
        let stack = Self { layers };
        stack.validate()?;
        Ok(stack)
    }

    /// Widths including the input.
    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims: Vec<usize> = self.layers.first().map(|l| vec![l.visible_dim()]).unwrap_or_default();
        dims.extend(self.layers.iter().map(RbmLayer::hidden_dim));
        dims
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, RbmLayer::visible_dim)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, RbmLayer::hidden_dim)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::DimensionInconsistency("stack has no layers".into()));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            layer.validate()?;
            if i > 0 {
                if layer.is_filtered() || layer.unit_kind == UnitKind::Gaussian {
                    return Err(Error::DimensionInconsistency(format!(
                        "layer {i}: only the first layer may be filtered or Gaussian"
                    )));
                }
                let prev = self.layers[i - 1].hidden_dim();
                if prev != layer.visible_dim() {
                    return Err(Error::DimensionInconsistency(format!(
                        "layer {} outputs {prev} but layer {i} expects {}",
                        i - 1,
                        layer.visible_dim()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Deterministic composition of hidden probabilities through all layers.
    pub fn encode(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.input_dim() {
            return Err(Error::Shape(format!("input has {} entries, stack expects {}", v.len(), self.input_dim())));
        }
        let mut x = v.to_vec();
        for layer in &self.layers {
            x = layer.propagate_up(&x)?;
        }
        Ok(x)
    }

    /// Row-wise [`encode`](Self::encode).
    pub fn encode_batch(&self, data: &Mat) -> Result<Mat> {
        let mut x = data.clone();
        for layer in &self.layers {
            x = layer.propagate_up_batch(&x)?;
        }
        Ok(x)
    }

    /// Stack with every parameter zero (all encodings are 0.5).
    pub fn zeros(dims: &[usize]) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::DimensionInconsistency("need at least input and one hidden width".into()));
        }
        Self::new(dims.windows(2).map(|w| RbmLayer::zeros(w[0], w[1], UnitKind::Bernoulli)).collect())
    }
}

/// Trains each layer on the deterministic hidden probabilities of the layer
/// below. Layer `i` uses seed `cfg.seed + i`.
pub fn greedy_pretrain(spec: &StackSpec, data: &Mat, cfg: &TrainConfig) -> Result<PretrainOutcome> {
    cfg.validate()?;
    if spec.dims.len() < 2 {
        return Err(Error::Config("dims needs an input width and at least one layer".into()));
    }
    if spec.dims.contains(&0) {
        return Err(Error::Config("layer widths must be positive".into()));
    }
    if data.cols() != spec.dims[0] {
        return Err(Error::Shape(format!("data has {} columns, dims[0] = {}", data.cols(), spec.dims[0])));
    }
    if data.rows() == 0 {
        return Err(Error::EmptyInput("pretraining data has no rows".into()));
    }
    let mut layers = Vec::with_capacity(spec.dims.len() - 1);
    let mut histories = Vec::with_capacity(spec.dims.len() - 1);
    let mut input = data.clone();
    for (i, w) in spec.dims.windows(2).enumerate() {
        let seed = cfg.seed.wrapping_add(i as u64);
        let mut init_rng = RngStream::new(seed).derive(0x1417);
        let kind = if i == 0 { spec.first_unit } else { UnitKind::Bernoulli };
        let mut layer = RbmLayer::random(w[0], w[1], kind, &mut init_rng).with_regularization(spec.alpha, spec.beta);
        if i == 0 && spec.filters > 0 {
            let shape = spec
                .image_shape
                .ok_or_else(|| Error::Config("filters require an image shape".into()))?;
            layer = layer.with_filters(shape, spec.filters, spec.filter_size, &mut init_rng)?;
        }
        let learning_rate = match (i, spec.first_learning_rate) {
            (0, Some(lr)) => lr,
            _ => cfg.learning_rate,
        };
        let layer_cfg = TrainConfig { seed, learning_rate, ..cfg.clone() };
        let outcome = layer.cd_train(&input, &layer_cfg).map_err(|e| match e {
            Error::Divergence { epoch, .. } => Error::Divergence { epoch, layer: Some(i) },
            other => other,
        })?;
        input = outcome.layer.propagate_up_batch(&input)?;
        layers.push(outcome.layer);
        histories.push(outcome.history);
    }
    Ok(PretrainOutcome { stack: DbnStack::new(layers)?, histories })
}
