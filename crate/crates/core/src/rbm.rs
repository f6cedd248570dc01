//! Restricted Boltzmann machines with optional learned visible filters and a
//! contractive (Jacobian) penalty on the hidden activations.
//!
//! A layer with `K ≥ 1` filters sees the aggregated visible
//! `V = Σ_k f_k ∗ v` (zero-padded "same" convolution of the image `v`), and
//! all energies, conditionals and free energies are evaluated on `V`. With
//! `K = 0` the layer is a plain RBM on `v`.
//!
//! Training follows the CD-k direction. For a batch with fixed negative
//! samples `V⁻` the update is the negative gradient of
//!
//! ```text
//! J = mean_n F(V(vₙ)) − mean_n F(V⁻ₙ) + α·C + β·Σ_k ‖f_k‖²
//! ```
//!
//! where `F` is the free energy and `C` the contractive penalty, so every
//! analytic gradient here can be checked against finite differences of `J`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{
    conv2d_same, conv2d_same_kernel_grad, dot, sigmoid_scalar, softplus, validate_kernel, Mat,
    RngStream,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnitKind {
    Bernoulli,
    Gaussian,
}

/// Hidden activation used when evaluating the contractive penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContractiveMode {
    Sigmoid,
    /// Identity activation; the penalty collapses to `Σ W²`.
    Linear,
}

/// One (filtered, contractive) RBM layer. `weights` is `D × F`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbmLayer {
    pub weights: Mat,
    pub hidden_bias: Vec<f64>,
    pub visible_bias: Vec<f64>,
    /// Visible noise scales; only read for Gaussian units.
    pub sigma: Vec<f64>,
    pub filters: Vec<Mat>,
    /// Image layout of the visible vector, required when filters are present.
    pub image_shape: Option<(usize, usize)>,
    pub alpha: f64,
    pub beta: f64,
    pub unit_kind: UnitKind,
}

/// Parameter-shaped gradient (or velocity) for an [`RbmLayer`].
#[derive(Debug, Clone, PartialEq)]
pub struct RbmGradients {
    pub weights: Mat,
    pub hidden_bias: Vec<f64>,
    pub visible_bias: Vec<f64>,
    pub filters: Vec<Mat>,
}

/// `p(v | h)` for a single hidden configuration.
#[derive(Debug, Clone, PartialEq)]
pub enum VisibleConditional {
    Bernoulli { probs: Vec<f64> },
    Gaussian { mean: Vec<f64>, std: Vec<f64> },
}

impl VisibleConditional {
    /// Probabilities (Bernoulli) or means (Gaussian).
    pub fn expectation(&self) -> &[f64] {
        match self {
            VisibleConditional::Bernoulli { probs } => probs,
            VisibleConditional::Gaussian { mean, .. } => mean,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContractiveTerm {
    pub value: f64,
    pub grads: RbmGradients,
}

/// Components of the monitored fcRBM loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FcLoss {
    pub reconstruction: f64,
    pub contractive: f64,
    pub filter_norm: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub cd_steps: usize,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 0.05, epochs: 10, batch_size: 64, cd_steps: 1, momentum: 0.5, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate {} must be finite and ≥ 0", self.learning_rate)));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.cd_steps == 0 {
            return Err(Error::Config("epochs, batch_size and cd_steps must be ≥ 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        Ok(())
    }
}

/// Result of [`RbmLayer::cd_train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub layer: RbmLayer,
    /// Mean squared one-step reconstruction error after each epoch.
    pub history: Vec<f64>,
}

impl RbmGradients {
    pub fn zeros_like(layer: &RbmLayer) -> Self {
        Self {
            weights: Mat::zeros(layer.visible_dim(), layer.hidden_dim()),
            hidden_bias: vec![0.0; layer.hidden_dim()],
            visible_bias: vec![0.0; layer.visible_dim()],
            filters: layer.filters.iter().map(|f| Mat::zeros(f.rows(), f.cols())).collect(),
        }
    }

    /// `self = decay·self + alpha·other`
    pub fn blend(&mut self, decay: f64, alpha: f64, other: &RbmGradients) {
        let mix = |a: &mut [f64], b: &[f64]| {
            for (x, y) in a.iter_mut().zip(b) {
                *x = decay * *x + alpha * y;
            }
        };
        mix(self.weights.data_mut(), other.weights.data());
        mix(&mut self.hidden_bias, &other.hidden_bias);
        mix(&mut self.visible_bias, &other.visible_bias);
        for (f, g) in self.filters.iter_mut().zip(&other.filters) {
            mix(f.data_mut(), g.data());
        }
    }

    /// Flattened view in the order W, a, b, filters.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = self.weights.data().to_vec();
        out.extend_from_slice(&self.hidden_bias);
        out.extend_from_slice(&self.visible_bias);
        for f in &self.filters {
            out.extend_from_slice(f.data());
        }
        out
    }
}

impl RbmLayer {
    /// All-zero parameters, unit noise scales, no filters, no regularization.
    pub fn zeros(visible: usize, hidden: usize, unit_kind: UnitKind) -> Self {
        Self {
            weights: Mat::zeros(visible, hidden),
            hidden_bias: vec![0.0; hidden],
            visible_bias: vec![0.0; visible],
            sigma: vec![1.0; visible],
            filters: Vec::new(),
            image_shape: None,
            alpha: 0.0,
            beta: 0.0,
            unit_kind,
        }
    }

    /// Gaussian weights (std 0.01), zero biases, unit noise scales.
    pub fn random(visible: usize, hidden: usize, unit_kind: UnitKind, rng: &mut RngStream) -> Self {
        let mut layer = Self::zeros(visible, hidden, unit_kind);
        layer.weights = Mat::from_fn(visible, hidden, |_, _| rng.gaussian(0.0, 0.01));
        layer
    }

    /// Adds `count` learned `size × size` filters over an image of the given
    /// shape. Each filter starts at `identity / count` plus N(0, 0.01²)
    /// noise so their sum begins close to the identity.
    pub fn with_filters(
        mut self,
        image_shape: (usize, usize),
        count: usize,
        size: usize,
        rng: &mut RngStream,
    ) -> Result<Self> {
        if image_shape.0 * image_shape.1 != self.visible_dim() {
            return Err(Error::Shape(format!(
                "image {}x{} does not flatten to {} visibles",
                image_shape.0,
                image_shape.1,
                self.visible_dim()
            )));
        }
        let base = Mat::identity_kernel(size).scale(1.0 / count.max(1) as f64);
        validate_kernel(image_shape, &base)?;
        self.filters = (0..count)
            .map(|_| base.map(|x| x + rng.gaussian(0.0, 0.01)))
            .collect();
        self.image_shape = if count > 0 { Some(image_shape) } else { None };
        Ok(self)
    }

    pub fn with_regularization(mut self, alpha: f64, beta: f64) -> Self {
        self.alpha = alpha;
        self.beta = beta;
        self
    }

    #[inline]
    pub fn visible_dim(&self) -> usize {
        self.weights.rows()
    }

    #[inline]
    pub fn hidden_dim(&self) -> usize {
        self.weights.cols()
    }

    #[inline]
    pub fn is_filtered(&self) -> bool {
        !self.filters.is_empty()
    }

    /// Checks parameter shapes and invariants.
    pub fn validate(&self) -> Result<()> {
        let (d, f) = self.weights.shape();
        if self.hidden_bias.len() != f || self.visible_bias.len() != d || self.sigma.len() != d {
            return Err(Error::DimensionInconsistency(format!(
                "weights {d}x{f}, hidden bias {}, visible bias {}, sigma {}",
                self.hidden_bias.len(),
                self.visible_bias.len(),
                self.sigma.len()
            )));
        }
        let finite = self.weights.is_finite()
            && self.hidden_bias.iter().chain(&self.visible_bias).chain(&self.sigma).all(|x| x.is_finite())
            && self.filters.iter().all(Mat::is_finite)
            && self.alpha.is_finite()
            && self.beta.is_finite();
        if !finite {
            return Err(Error::InvalidParameter("non-finite layer parameter".into()));
        }
        if self.unit_kind == UnitKind::Gaussian && self.sigma.iter().any(|&s| s <= 0.0) {
            return Err(Error::InvalidParameter("sigma entries must be > 0".into()));
        }
        if self.is_filtered() {
            let shape = self
                .image_shape
                .ok_or_else(|| Error::DimensionInconsistency("filtered layer without image shape".into()))?;
            if shape.0 * shape.1 != d {
                return Err(Error::DimensionInconsistency(format!(
                    "image {}x{} vs {d} visibles",
                    shape.0, shape.1
                )));
            }
            for f in &self.filters {
                validate_kernel(shape, f)?;
            }
        }
        Ok(())
    }

    fn params_finite(&self) -> bool {
        self.weights.is_finite()
            && self.hidden_bias.iter().chain(&self.visible_bias).all(|x| x.is_finite())
            && self.filters.iter().all(Mat::is_finite)
    }

    fn check_len(&self, what: &str, got: usize, want: usize) -> Result<()> {
        if got != want {
            return Err(Error::Shape(format!("{what} has length {got}, expected {want}")));
        }
        Ok(())
    }

    /// `E(v, h) = −vᵀWh − bᵀv − aᵀh` for binary units.
    pub fn energy_bernoulli(&self, v: &[f64], h: &[f64]) -> Result<f64> {
        if self.unit_kind != UnitKind::Bernoulli {
            return Err(Error::InvalidParameter("energy_bernoulli on a Gaussian layer".into()));
        }
        self.check_len("v", v.len(), self.visible_dim())?;
        self.check_len("h", h.len(), self.hidden_dim())?;
        let mut e = -dot(&self.visible_bias, v) - dot(&self.hidden_bias, h);
        for (i, &vi) in v.iter().enumerate() {
            if vi != 0.0 {
                e -= vi * dot(self.weights.row(i), h);
            }
        }
        Ok(e)
    }

    /// Gaussian–Bernoulli energy
    /// `−Σ (vᵢ/σᵢ) Wᵢⱼ hⱼ + Σ (vᵢ − bᵢ)²/(2σᵢ²) − aᵀh`.
    pub fn energy_gaussian(&self, v: &[f64], h: &[f64]) -> Result<f64> {
        if self.unit_kind != UnitKind::Gaussian {
            return Err(Error::InvalidParameter("energy_gaussian on a Bernoulli layer".into()));
        }
        self.check_len("v", v.len(), self.visible_dim())?;
        self.check_len("h", h.len(), self.hidden_dim())?;
        if self.sigma.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::InvalidParameter("sigma entries must be > 0".into()));
        }
        let mut e = -dot(&self.hidden_bias, h);
        for (i, &vi) in v.iter().enumerate() {
            let s = self.sigma[i];
            e -= vi / s * dot(self.weights.row(i), h);
            let d = vi - self.visible_bias[i];
            e += d * d / (2.0 * s * s);
        }
        Ok(e)
    }

    /// Energy dispatched on the unit kind.
    pub fn energy(&self, v: &[f64], h: &[f64]) -> Result<f64> {
        match self.unit_kind {
            UnitKind::Bernoulli => self.energy_bernoulli(v, h),
            UnitKind::Gaussian => self.energy_gaussian(v, h),
        }
    }

    /// `p(hⱼ = 1 | v) = σ((Wᵀṽ)ⱼ + aⱼ)` with `ṽ = v/σ` for Gaussian units.
    /// For filtered layers `v` must already be the aggregated visible.
    pub fn hidden_given_visible(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_len("v", v.len(), self.visible_dim())?;
        let x = Mat::row_vector(v);
        Ok(self.hidden_probs_batch(&x).into_data())
    }

    pub fn visible_given_hidden(&self, h: &[f64]) -> Result<VisibleConditional> {
        self.check_len("h", h.len(), self.hidden_dim())?;
        let mean = self.visible_means_batch(&Mat::row_vector(h)).into_data();
        Ok(match self.unit_kind {
            UnitKind::Bernoulli => VisibleConditional::Bernoulli { probs: mean },
            UnitKind::Gaussian => VisibleConditional::Gaussian { mean, std: self.sigma.clone() },
        })
    }

    /// Individual filter responses `f_k ∗ v` of an image.
    pub fn filter_responses(&self, image: &Mat) -> Result<Vec<Mat>> {
        if !self.is_filtered() {
            return Err(Error::NotFiltered);
        }
        self.filters.iter().map(|f| conv2d_same(image, f)).collect()
    }

    /// `flatten(Σ_k f_k ∗ v)`.
    pub fn apply_filters(&self, image: &Mat) -> Result<Vec<f64>> {
        if !self.is_filtered() {
            return Err(Error::NotFiltered);
        }
        if Some(image.shape()) != self.image_shape {
            return Err(Error::Shape(format!(
                "image {:?} does not match layer image shape {:?}",
                image.shape(),
                self.image_shape
            )));
        }
        let mut acc = Mat::zeros(image.rows(), image.cols());
        for f in &self.filters {
            acc.axpy(1.0, &conv2d_same(image, f)?)?;
        }
        Ok(acc.into_data())
    }

    /// Visible vector as the energy sees it: aggregated through the filters
    /// when present, unchanged otherwise.
    pub fn visible_input(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_len("v", v.len(), self.visible_dim())?;
        if !self.is_filtered() {
            return Ok(v.to_vec());
        }
        let (r, c) = self.image_shape.ok_or(Error::NotFiltered)?;
        self.apply_filters(&Mat::new(r, c, v.to_vec())?)
    }

    /// Row-wise [`visible_input`](Self::visible_input).
    pub fn visible_input_batch(&self, data: &Mat) -> Result<Mat> {
        if data.cols() != self.visible_dim() {
            return Err(Error::Shape(format!(
                "batch has {} columns, layer expects {}",
                data.cols(),
                self.visible_dim()
            )));
        }
        if !self.is_filtered() {
            return Ok(data.clone());
        }
        let mut out = Mat::zeros(data.rows(), data.cols());
        for n in 0..data.rows() {
            let agg = self.visible_input(data.row(n))?;
            out.row_mut(n).copy_from_slice(&agg);
        }
        Ok(out)
    }

    /// Deterministic hidden probabilities for a raw visible vector.
    pub fn propagate_up(&self, v: &[f64]) -> Result<Vec<f64>> {
        let x = self.visible_input(v)?;
        self.hidden_given_visible(&x)
    }

    pub fn propagate_up_batch(&self, data: &Mat) -> Result<Mat> {
        let x = self.visible_input_batch(data)?;
        Ok(self.hidden_probs_batch(&x))
    }

    fn scaled_input(&self, x: &Mat) -> Mat {
        match self.unit_kind {
            UnitKind::Bernoulli => x.clone(),
            UnitKind::Gaussian => {
                let mut out = x.clone();
                for n in 0..out.rows() {
                    for (v, s) in out.row_mut(n).iter_mut().zip(&self.sigma) {
                        *v /= s;
                    }
                }
                out
            }
        }
    }

    fn hidden_preactivation(&self, x: &Mat) -> Mat {
        let mut z = self.scaled_input(x).matmul(&self.weights).expect("checked dims");
        for n in 0..z.rows() {
            for (v, a) in z.row_mut(n).iter_mut().zip(&self.hidden_bias) {
                *v += a;
            }
        }
        z
    }

    /// Hidden probabilities for rows already in aggregated visible space.
    pub fn hidden_probs_batch(&self, x: &Mat) -> Mat {
        self.hidden_preactivation(x).map(sigmoid_scalar)
    }

    /// Visible probabilities (Bernoulli) or means (Gaussian) for hidden rows.
    pub fn visible_means_batch(&self, h: &Mat) -> Mat {
        let mut out = h.matmul_t(&self.weights).expect("checked dims");
        for n in 0..out.rows() {
            let row = out.row_mut(n);
            for i in 0..row.len() {
                row[i] = match self.unit_kind {
                    UnitKind::Bernoulli => sigmoid_scalar(row[i] + self.visible_bias[i]),
                    UnitKind::Gaussian => self.visible_bias[i] + self.sigma[i] * row[i],
                };
            }
        }
        out
    }

    /// Free energy of one aggregated visible vector.
    pub fn free_energy(&self, x: &[f64]) -> Result<f64> {
        self.check_len("x", x.len(), self.visible_dim())?;
        let z = self.hidden_preactivation(&Mat::row_vector(x));
        let hidden: f64 = z.data().iter().map(|&v| softplus(v)).sum();
        let visible = match self.unit_kind {
            UnitKind::Bernoulli => -dot(&self.visible_bias, x),
            UnitKind::Gaussian => x
                .iter()
                .zip(&self.visible_bias)
                .zip(&self.sigma)
                .map(|((xi, bi), s)| (xi - bi) * (xi - bi) / (2.0 * s * s))
                .sum(),
        };
        Ok(visible - hidden)
    }

    /// Adds `weight · ∂F/∂θ` summed over the rows of `x` into `grads`, and
    /// returns `∂F/∂x` row-wise.
    fn accumulate_free_energy_grad(&self, x: &Mat, weight: f64, grads: &mut RbmGradients) -> Mat {
        let p = self.hidden_probs_batch(x);
        let xs = self.scaled_input(x);
        // ∂F/∂W = −x̃ pᵀ, ∂F/∂a = −p
        let xp = xs.t_matmul(&p).expect("dims");
        grads.weights.axpy(-weight, &xp).expect("dims");
        for n in 0..x.rows() {
            for (g, &pj) in grads.hidden_bias.iter_mut().zip(p.row(n)) {
                *g -= weight * pj;
            }
        }
        let wp = p.matmul_t(&self.weights).expect("dims");
        let mut dx = Mat::zeros(x.rows(), x.cols());
        for n in 0..x.rows() {
            let xr = x.row(n);
            let wpr = wp.row(n);
            let dxr = dx.row_mut(n);
            for i in 0..xr.len() {
                match self.unit_kind {
                    UnitKind::Bernoulli => {
                        grads.visible_bias[i] -= weight * xr[i];
                        dxr[i] = -self.visible_bias[i] - wpr[i];
                    }
                    UnitKind::Gaussian => {
                        let s = self.sigma[i];
                        let d = (xr[i] - self.visible_bias[i]) / (s * s);
                        grads.visible_bias[i] -= weight * d;
                        dxr[i] = d - wpr[i] / s;
                    }
                }
            }
        }
        dx
    }

    /// Pushes a gradient with respect to the aggregated visible rows back to
    /// the filters. Every filter receives the same response-space gradient.
    fn accumulate_filter_grad(&self, images: &Mat, dx: &Mat, weight: f64, grads: &mut RbmGradients) -> Result<()> {
        let Some((r, c)) = self.image_shape else {
            return Ok(());
        };
        if !self.is_filtered() {
            return Ok(());
        }
        let (kh, kw) = self.filters[0].shape();
        let mut shared = Mat::zeros(kh, kw);
        for n in 0..images.rows() {
            let img = Mat::new(r, c, images.row(n).to_vec())?;
            let up = Mat::new(r, c, dx.row(n).to_vec())?;
            shared.axpy(1.0, &conv2d_same_kernel_grad(&img, &up, kh, kw)?)?;
        }
        for g in grads.filters.iter_mut() {
            if g.shape() != shared.shape() {
                return Err(Error::Shape("filters must share one size".into()));
            }
            g.axpy(weight, &shared)?;
        }
        Ok(())
    }

    /// Contractive penalty `mean_n Σ_j (φⱼ(1−φⱼ))² Σ_i Wᵢⱼ²` over the batch,
    /// with its exact gradient (W, a and, for filtered layers, the filters).
    /// In [`ContractiveMode::Linear`] the penalty is `Σ W²`.
    pub fn contractive_penalty(&self, batch: &Mat, mode: ContractiveMode) -> Result<ContractiveTerm> {
        if batch.rows() == 0 {
            return Err(Error::EmptyBatch);
        }
        let mut grads = RbmGradients::zeros_like(self);
        if mode == ContractiveMode::Linear {
            if batch.cols() != self.visible_dim() {
                return Err(Error::Shape("batch width does not match layer".into()));
            }
            grads.weights = self.weights.scale(2.0);
            return Ok(ContractiveTerm { value: self.weights.frobenius_sq(), grads });
        }
        let x = self.visible_input_batch(batch)?;
        let n = x.rows() as f64;
        let (d, f) = self.weights.shape();
        let col_sq: Vec<f64> = (0..f)
            .map(|j| (0..d).map(|i| self.weights.get(i, j).powi(2)).sum())
            .collect();
        let phi = self.hidden_probs_batch(&x);
        let mut value = 0.0;
        let mut mean_g2 = vec![0.0; f];
        // uⱼ = 2 Sⱼ g² (1 − 2φ), the derivative of g² Sⱼ with respect to the pre-activation
        let mut u = Mat::zeros(x.rows(), f);
        for row in 0..x.rows() {
            for j in 0..f {
                let p = phi.get(row, j);
                let g = p * (1.0 - p);
                let g2 = g * g;
                value += g2 * col_sq[j];
                mean_g2[j] += g2 / n;
                u.set(row, j, 2.0 * col_sq[j] * g2 * (1.0 - 2.0 * p));
            }
        }
        value /= n;
        let xs = self.scaled_input(&x);
        grads.weights = xs.t_matmul(&u)?.scale(1.0 / n);
        for i in 0..d {
            for j in 0..f {
                let w = self.weights.get(i, j);
                grads.weights.set(i, j, grads.weights.get(i, j) + 2.0 * w * mean_g2[j]);
            }
        }
        grads.hidden_bias = u.column_means();
        if self.is_filtered() {
            let mut dx = u.matmul_t(&self.weights)?.scale(1.0 / n);
            if self.unit_kind == UnitKind::Gaussian {
                for row in 0..dx.rows() {
                    for (v, s) in dx.row_mut(row).iter_mut().zip(&self.sigma) {
                        *v /= s;
                    }
                }
            }
            self.accumulate_filter_grad(batch, &dx, 1.0, &mut grads)?;
        }
        Ok(ContractiveTerm { value, grads })
    }

    /// `Σ_k ‖f_k‖²`
    pub fn filter_norm(&self) -> f64 {
        self.filters.iter().map(Mat::frobenius_sq).sum()
    }

    /// Mean squared one-step mean-field reconstruction error, measured in
    /// the aggregated visible space.
    pub fn reconstruction_error(&self, batch: &Mat) -> Result<f64> {
        if batch.rows() == 0 {
            return Err(Error::EmptyBatch);
        }
        let x = self.visible_input_batch(batch)?;
        let recon = self.visible_means_batch(&self.hidden_probs_batch(&x));
        let sq: f64 = x.data().iter().zip(recon.data()).map(|(a, b)| (a - b) * (a - b)).sum();
        Ok(sq / x.len() as f64)
    }

    /// Reconstruction proxy + α·contractive + β·filter decay.
    pub fn fc_loss(&self, batch: &Mat) -> Result<FcLoss> {
        let reconstruction = self.reconstruction_error(batch)?;
        let contractive = self.contractive_penalty(batch, ContractiveMode::Sigmoid)?.value;
        let filter_norm = self.filter_norm();
        let total = reconstruction + self.alpha * contractive + self.beta * filter_norm;
        Ok(FcLoss { reconstruction, contractive, filter_norm, total })
    }

    /// Runs `k` Gibbs steps from the batch and returns the negative
    /// (reconstructed) visibles in aggregated space. Hidden states are
    /// sampled; visibles are kept at their conditional expectation.
    pub fn gibbs_negatives(&self, batch: &Mat, k: usize, rng: &mut RngStream) -> Result<Mat> {
        let x = self.visible_input_batch(batch)?;
        let mut probs = self.hidden_probs_batch(&x);
        let mut negatives = x;
        for _ in 0..k.max(1) {
            let h = probs.map(|p| if rng.bernoulli(p) { 1.0 } else { 0.0 });
            negatives = self.visible_means_batch(&h);
            probs = self.hidden_probs_batch(&negatives);
        }
        Ok(negatives)
    }

    /// Surrogate objective whose gradient is the CD-k update direction for
    /// fixed negatives (see module docs).
    pub fn surrogate_objective(&self, batch: &Mat, negatives: &Mat) -> Result<f64> {
        if batch.rows() == 0 {
            return Err(Error::EmptyBatch);
        }
        let x = self.visible_input_batch(batch)?;
        let mut value = 0.0;
        for n in 0..x.rows() {
            value += self.free_energy(x.row(n))?;
        }
        value /= x.rows() as f64;
        let mut neg = 0.0;
        for n in 0..negatives.rows() {
            neg += self.free_energy(negatives.row(n))?;
        }
        if negatives.rows() > 0 {
            value -= neg / negatives.rows() as f64;
        }
        if self.alpha != 0.0 {
            value += self.alpha * self.contractive_penalty(batch, ContractiveMode::Sigmoid)?.value;
        }
        Ok(value + self.beta * self.filter_norm())
    }

    /// Analytic gradient of [`surrogate_objective`](Self::surrogate_objective).
    pub fn surrogate_gradient(&self, batch: &Mat, negatives: &Mat) -> Result<RbmGradients> {
        if batch.rows() == 0 {
            return Err(Error::EmptyBatch);
        }
        let x = self.visible_input_batch(batch)?;
        let mut grads = RbmGradients::zeros_like(self);
        let dx = self.accumulate_free_energy_grad(&x, 1.0 / x.rows() as f64, &mut grads);
        if negatives.rows() > 0 {
            self.accumulate_free_energy_grad(negatives, -1.0 / negatives.rows() as f64, &mut grads);
        }
        self.accumulate_filter_grad(batch, &dx, 1.0 / x.rows() as f64, &mut grads)?;
        if self.alpha != 0.0 {
            let c = self.contractive_penalty(batch, ContractiveMode::Sigmoid)?;
            grads.blend(1.0, self.alpha, &c.grads);
        }
        for (g, f) in grads.filters.iter_mut().zip(&self.filters) {
            g.axpy(2.0 * self.beta, f)?;
        }
        Ok(grads)
    }

    /// One CD-k gradient estimate (the descent direction is its negative).
    pub fn cd_gradient(&self, batch: &Mat, k: usize, rng: &mut RngStream) -> Result<RbmGradients> {
        let negatives = self.gibbs_negatives(batch, k, rng)?;
        self.surrogate_gradient(batch, &negatives)
    }

    fn apply_step(&mut self, velocity: &RbmGradients) {
        let add = |a: &mut [f64], b: &[f64]| a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        add(self.weights.data_mut(), velocity.weights.data());
        add(&mut self.hidden_bias, &velocity.hidden_bias);
        add(&mut self.visible_bias, &velocity.visible_bias);
        for (f, v) in self.filters.iter_mut().zip(&velocity.filters) {
            add(f.data_mut(), v.data());
        }
    }

    /// Shifts every filter tap equally so the taps of the summed kernel add
    /// to one. The data term alone lowers the free energy by shrinking or
    /// high-passing the filters (the fixed negatives exert no opposing pull),
    /// so training holds the aggregate DC gain at that of the identity.
    pub fn project_filters(&mut self) {
        let taps: usize = self.filters.iter().map(Mat::len).sum();
        if taps == 0 {
            return;
        }
        let total: f64 = self.filters.iter().map(Mat::sum).sum();
        let shift = (1.0 - total) / taps as f64;
        if shift.is_finite() {
            for f in self.filters.iter_mut() {
                *f = f.map(|x| x + shift);
            }
        }
    }

    /// Contrastive-divergence training with momentum. Deterministic given
    /// `cfg.seed`; rows are visited in a freshly shuffled order each epoch.
    pub fn cd_train(&self, data: &Mat, cfg: &TrainConfig) -> Result<TrainOutcome> {
        cfg.validate()?;
        self.validate()?;
        if data.rows() == 0 {
            return Err(Error::EmptyInput("training data has no rows".into()));
        }
        if data.cols() != self.visible_dim() {
            return Err(Error::Shape(format!(
                "data has {} columns, layer expects {}",
                data.cols(),
                self.visible_dim()
            )));
        }
        let mut layer = self.clone();
        let mut rng = RngStream::new(cfg.seed);
        let mut velocity = RbmGradients::zeros_like(&layer);
        let mut order: Vec<usize> = (0..data.rows()).collect();
        let mut history = Vec::with_capacity(cfg.epochs);
        let filter_step = 1.0 / self.visible_dim() as f64;
        for epoch in 1..=cfg.epochs {
            rng.shuffle(&mut order);
            for chunk in order.chunks(cfg.batch_size) {
                let batch = data.select_rows(chunk);
                let mut grad = match layer.cd_gradient(&batch, cfg.cd_steps, &mut rng) {
                    // overflow inside the batch computations
                    Err(Error::InvalidParameter(_)) => return Err(Error::Divergence { epoch, layer: None }),
                    other => other?,
                };
                // each tap sums over every pixel; scale to a per-pixel step
                for f in grad.filters.iter_mut() {
                    *f = f.scale(filter_step);
                }
                velocity.blend(cfg.momentum, -cfg.learning_rate, &grad);
                layer.apply_step(&velocity);
                layer.project_filters();
                if !layer.params_finite() {
                    return Err(Error::Divergence { epoch, layer: None });
                }
            }
            if !layer.params_finite() {
                return Err(Error::Divergence { epoch, layer: None });
            }
            let err = layer.reconstruction_error(data)?;
            if !err.is_finite() {
                return Err(Error::Divergence { epoch, layer: None });
            }
            history.push(err);
        }
        Ok(TrainOutcome { layer, history })
    }
}
