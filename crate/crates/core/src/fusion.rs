//! Boosting face verification with kin scores: 1-D Gaussian mixtures per
//! class, the product of likelihood ratios, and a linear hinge-loss SVM on
//! score vectors.

use std::f64::consts::PI;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::RngStream;

pub const VARIANCE_FLOOR: f64 = 1e-6;
pub const DENSITY_FLOOR: f64 = 1e-300;
const EM_TOL: f64 = 1e-8;
const EM_MAX_ITERS: usize = 500;
pub const DEFAULT_COMPONENTS: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, means: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        let g = Self { weights, means, variances };
        g.validate()?;
        Ok(g)
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.weights.len();
        if k == 0 || self.means.len() != k || self.variances.len() != k {
            return Err(Error::InvalidParameter("mixture component arrays must share a nonzero length".into()));
        }
        if self.weights.iter().any(|&w| !(0.0..=1.0).contains(&w)) || (self.weights.iter().sum::<f64>() - 1.0).abs() > 1e-12
        {
            return Err(Error::InvalidParameter("mixture weights must lie on the simplex".into()));
        }
        if self.means.iter().any(|m| !m.is_finite()) || self.variances.iter().any(|&v| !(v.is_finite() && v >= VARIANCE_FLOOR)) {
            return Err(Error::InvalidParameter(format!("means must be finite and variances ≥ {VARIANCE_FLOOR}")));
        }
        Ok(())
    }

    fn component_log_densities(&self, x: f64) -> impl Iterator<Item = f64> + '_ {
        (0..self.components()).map(move |j| {
            let v = self.variances[j];
            self.weights[j].ln() - 0.5 * (2.0 * PI * v).ln() - (x - self.means[j]).powi(2) / (2.0 * v)
        })
    }

    pub fn log_density(&self, x: f64) -> f64 {
        log_sum_exp(self.component_log_densities(x))
    }

    pub fn density(&self, x: f64) -> f64 {
        self.log_density(x).exp()
    }

    pub fn log_likelihood(&self, samples: &[f64]) -> f64 {
        samples.iter().map(|&x| self.log_density(x)).sum()
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone)]
pub struct GmmFit {
    pub mixture: GaussianMixture,
    /// Total log-likelihood after each EM iteration.
    pub log_likelihood: Vec<f64>,
    pub converged: bool,
}

/// EM for a 1-D mixture of `k` Gaussians, started from seeded k-means++
/// centres.
pub fn fit_gmm(samples: &[f64], k: usize, seed: u64) -> Result<GaussianMixture> {
    fit_gmm_traced(samples, k, seed).map(|f| f.mixture)
}

pub fn fit_gmm_traced(samples: &[f64], k: usize, seed: u64) -> Result<GmmFit> {
    if k == 0 {
        return Err(Error::InvalidParameter("mixture needs at least one component".into()));
    }
    if samples.len() < 2 * k {
        return Err(Error::InsufficientData(format!("{} samples for {k} components; need {}", samples.len(), 2 * k)));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter("samples must be finite".into()));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = (samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).max(VARIANCE_FLOOR);

    let mut rng = RngStream::new(seed);
    let mut centres = vec![samples[rng.below(samples.len())]];
    while centres.len() < k {
        let d2: Vec<f64> = samples
            .iter()
            .map(|x| centres.iter().map(|c| (x - c).powi(2)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.uniform() * total;
            let mut idx = d2.len() - 1;
            for (i, d) in d2.iter().enumerate() {
                if u < *d {
                    idx = i;
                    break;
                }
                u -= d;
            }
            idx
        } else {
            rng.below(samples.len())
        };
        centres.push(samples[pick]);
    }
    let mut gmm = GaussianMixture { weights: vec![1.0 / k as f64; k], means: centres, variances: vec![var; k] };

    let mut history = Vec::new();
    let mut resp = vec![0.0; samples.len() * k];
    let mut converged = false;
    for _ in 0..EM_MAX_ITERS {
        for (i, &x) in samples.iter().enumerate() {
            let logs: Vec<f64> = gmm.component_log_densities(x).collect();
            let lse = log_sum_exp(logs.iter().copied());
            for j in 0..k {
                resp[i * k + j] = (logs[j] - lse).exp();
            }
        }
        for j in 0..k {
            let nk: f64 = (0..samples.len()).map(|i| resp[i * k + j]).sum();
            gmm.weights[j] = nk / n;
            if nk > 1e-12 {
                let m = samples.iter().enumerate().map(|(i, x)| resp[i * k + j] * x).sum::<f64>() / nk;
                let v = samples.iter().enumerate().map(|(i, x)| resp[i * k + j] * (x - m).powi(2)).sum::<f64>() / nk;
                gmm.means[j] = m;
                gmm.variances[j] = v.max(VARIANCE_FLOOR);
            }
        }
        let wsum: f64 = gmm.weights.iter().sum();
        gmm.weights.iter_mut().for_each(|w| *w /= wsum);
        let ll = gmm.log_likelihood(samples);
        let done = history.last().is_some_and(|&prev: &f64| ll - prev < EM_TOL);
        history.push(ll);
        if done {
            converged = true;
            break;
        }
    }
    Ok(GmmFit { mixture: gmm, log_likelihood: history, converged })
}

/// One probe/gallery trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    /// Face match score.
    pub s: f64,
    /// Kin scores against the gallery subject's relatives.
    pub k: Vec<f64>,
    /// Same person (genuine) or not (impostor).
    pub genuine: bool,
    /// Per kin score: whether the pair really is kin.
    pub kin: Vec<bool>,
}

impl ScoreRecord {
    pub fn validate(&self) -> Result<()> {
        if !self.s.is_finite() || self.k.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("scores must be finite".into()));
        }
        if self.kin.len() != self.k.len() {
            return Err(Error::Shape(format!("{} kin scores but {} kin labels", self.k.len(), self.kin.len())));
        }
        Ok(())
    }
}

/// The four class conditionals used by the likelihood-ratio product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlrModels {
    pub face_genuine: GaussianMixture,
    pub face_impostor: GaussianMixture,
    pub kin: GaussianMixture,
    pub non_kin: GaussianMixture,
}

impl PlrModels {
    pub fn fit(records: &[ScoreRecord], components: usize, seed: u64) -> Result<Self> {
        for r in records {
            r.validate()?;
        }
        let face = |g: bool| records.iter().filter(|r| r.genuine == g).map(|r| r.s).collect::<Vec<_>>();
        let kin = |g: bool| {
            records
                .iter()
                .flat_map(|r| r.k.iter().zip(&r.kin).filter(move |(_, &l)| l == g).map(|(&x, _)| x))
                .collect::<Vec<_>>()
        };
        let rng = RngStream::new(seed);
        let fit = |xs: Vec<f64>, tag: u64| fit_gmm(&xs, components, rng.derive(tag).next_u64());
        Ok(Self { face_genuine: fit(face(true), 1)?, face_impostor: fit(face(false), 2)?, kin: fit(kin(true), 3)?, non_kin: fit(kin(false), 4)? })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlrScore {
    /// The product of ratios, kept inside the positive normal range.
    pub plr: f64,
    pub log_plr: f64,
    /// Densities that fell below the floor and were clamped.
    pub floor_hits: usize,
}

/// `[p(s|ω₁)/p(s|ω₂)] · Πᵢ [p(kᵢ|kin)/p(kᵢ|non-kin)]`, evaluated as a sum of
/// log ratios.
pub fn plr_score(rec: &ScoreRecord, models: &PlrModels) -> Result<PlrScore> {
    if !rec.s.is_finite() || rec.k.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter("scores must be finite".into()));
    }
    let floor = DENSITY_FLOOR.ln();
    let mut hits = 0;
    let mut logd = |g: &GaussianMixture, x: f64| {
        let l = g.log_density(x);
        if l < floor {
            hits += 1;
            floor
        } else {
            l
        }
    };
    let mut log_plr = logd(&models.face_genuine, rec.s) - logd(&models.face_impostor, rec.s);
    for &k in &rec.k {
        log_plr += logd(&models.kin, k) - logd(&models.non_kin, k);
    }
    let plr = log_plr.exp().clamp(f64::MIN_POSITIVE, f64::MAX);
    Ok(PlrScore { plr, log_plr, floor_hits: hits })
}

/// How kin scores are folded into the SVM feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SvmLayout {
    /// `[s]`
    FaceOnly,
    /// `[s, k]`
    Single,
    /// `[s, mean k, max k]`
    Aggregate,
}

impl SvmLayout {
    fn for_records(records: &[ScoreRecord]) -> Self {
        match records.iter().map(|r| r.k.len()).max().unwrap_or(0) {
            0 => SvmLayout::FaceOnly,
            1 => SvmLayout::Single,
            _ => SvmLayout::Aggregate,
        }
    }

    fn dim(self) -> usize {
        match self {
            SvmLayout::FaceOnly => 1,
            SvmLayout::Single => 2,
            SvmLayout::Aggregate => 3,
        }
    }

    /// Raw features; `None` entries are missing kin features.
    fn features(self, rec: &ScoreRecord) -> Vec<Option<f64>> {
        let mean = (!rec.k.is_empty()).then(|| rec.k.iter().sum::<f64>() / rec.k.len() as f64);
        let max = rec.k.iter().copied().reduce(f64::max);
        match self {
            SvmLayout::FaceOnly => vec![Some(rec.s)],
            SvmLayout::Single => vec![Some(rec.s), mean],
            SvmLayout::Aggregate => vec![Some(rec.s), mean, max],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmConfig {
    pub lambda: f64,
    pub learning_rate: f64,
    pub epochs: usize,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self { lambda: 1e-3, learning_rate: 0.5, epochs: 2000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub layout: SvmLayout,
    /// Weights on standardized features.
    pub weights: Vec<f64>,
    pub bias: f64,
    pub feature_mean: Vec<f64>,
    pub feature_scale: Vec<f64>,
    /// No usable feature variation; every decision is the majority class.
    pub degenerate: bool,
    pub diagnostics: SvmDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmDiagnostics {
    pub objective: f64,
    pub mean_hinge: f64,
    pub margin_violations: usize,
    pub training_accuracy: f64,
}

impl SvmModel {
    fn standardized(&self, rec: &ScoreRecord) -> Vec<f64> {
        self.layout
            .features(rec)
            .into_iter()
            .enumerate()
            .map(|(j, f)| f.map_or(0.0, |x| (x - self.feature_mean[j]) / self.feature_scale[j]))
            .collect()
    }

    /// Signed distance-like score; positive means genuine.
    pub fn decision_value(&self, rec: &ScoreRecord) -> f64 {
        self.bias + self.standardized(rec).iter().zip(&self.weights).map(|(x, w)| x * w).sum::<f64>()
    }
}

/// Linear SVM on `[s, k…]` by full-batch subgradient descent on
/// `λ/2‖w‖² + mean hinge`. Features are standardized with training
/// statistics; the lowest-objective iterate is kept.
pub fn svm_fit(records: &[ScoreRecord], cfg: &SvmConfig) -> Result<SvmModel> {
    if records.is_empty() {
        return Err(Error::EmptyInput("no score records".into()));
    }
    for r in records {
        r.validate()?;
    }
    let pos = records.iter().filter(|r| r.genuine).count();
    if pos == 0 || pos == records.len() {
        return Err(Error::DegenerateLabels("SVM needs genuine and impostor records".into()));
    }
    if !(cfg.lambda >= 0.0 && cfg.learning_rate > 0.0) {
        return Err(Error::Config("SVM needs λ ≥ 0 and a positive learning rate".into()));
    }
    let layout = SvmLayout::for_records(records);
    let d = layout.dim();
    let raw: Vec<Vec<Option<f64>>> = records.iter().map(|r| layout.features(r)).collect();
    let mut feature_mean = vec![0.0; d];
    let mut feature_scale = vec![1.0; d];
    let mut constant = vec![true; d];
    for j in 0..d {
        let col: Vec<f64> = raw.iter().filter_map(|f| f[j]).collect();
        if col.is_empty() {
            continue;
        }
        let m = col.iter().sum::<f64>() / col.len() as f64;
        let sd = (col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / col.len() as f64).sqrt();
        feature_mean[j] = m;
        if sd > 1e-12 * m.abs().max(1.0) {
            feature_scale[j] = sd;
            constant[j] = false;
        }
    }
    let x: Vec<Vec<f64>> = raw
        .iter()
        .map(|f| (0..d).map(|j| f[j].map_or(0.0, |v| (v - feature_mean[j]) / feature_scale[j])).collect())
        .collect();
    let y: Vec<f64> = records.iter().map(|r| if r.genuine { 1.0 } else { -1.0 }).collect();
    let n = records.len() as f64;

    let evaluate = |w: &[f64], b: f64| -> SvmDiagnostics {
        let mut hinge = 0.0;
        let mut viol = 0;
        let mut correct = 0;
        for (xi, &yi) in x.iter().zip(&y) {
            let f = b + xi.iter().zip(w).map(|(a, c)| a * c).sum::<f64>();
            let m = yi * f;
            if m < 1.0 {
                hinge += 1.0 - m;
                viol += 1;
            }
            if (f >= 0.0) == (yi > 0.0) {
                correct += 1;
            }
        }
        let mean_hinge = hinge / n;
        SvmDiagnostics {
            objective: cfg.lambda / 2.0 * w.iter().map(|v| v * v).sum::<f64>() + mean_hinge,
            mean_hinge,
            margin_violations: viol,
            training_accuracy: correct as f64 / n,
        }
    };

    if constant.iter().all(|&c| c) {
        let bias = if 2 * pos >= records.len() { 1.0 } else { -1.0 };
        let weights = vec![0.0; d];
        let diagnostics = evaluate(&weights, bias);
        return Ok(SvmModel { layout, weights, bias, feature_mean, feature_scale, degenerate: true, diagnostics });
    }

    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut best = (evaluate(&w, b), w.clone(), b);
    for t in 0..cfg.epochs {
        let mut gw: Vec<f64> = w.iter().map(|v| cfg.lambda * v).collect();
        let mut gb = 0.0;
        for (xi, &yi) in x.iter().zip(&y) {
            let f = b + xi.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>();
            if yi * f < 1.0 {
                for (g, a) in gw.iter_mut().zip(xi) {
                    *g -= yi * a / n;
                }
                gb -= yi / n;
            }
        }
        let step = cfg.learning_rate / ((t + 1) as f64).sqrt();
        for (v, g) in w.iter_mut().zip(&gw) {
            *v -= step * g;
        }
        b -= step * gb;
        let diag = evaluate(&w, b);
        if diag.objective < best.0.objective {
            best = (diag, w.clone(), b);
        }
    }
    let (diagnostics, weights, bias) = best;
    Ok(SvmModel { layout, weights, bias, feature_mean, feature_scale, degenerate: false, diagnostics })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoostMethod {
    Plr,
    Svm,
}

impl FromStr for BoostMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "plr" => Ok(BoostMethod::Plr),
            "svm" => Ok(BoostMethod::Svm),
            other => Err(Error::Config(format!("unknown fusion method {other:?} (expected plr or svm)"))),
        }
    }
}

/// Fitted fusion models; either may be absent.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FusionModels {
    pub plr: Option<PlrModels>,
    pub svm: Option<SvmModel>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoostOutcome {
    pub accept: bool,
    /// Face score alone.
    pub raw: f64,
    /// log-PLR or SVM decision value.
    pub fused: f64,
}

/// Accepts when the fused score is at least `threshold`.
pub fn boost_decision(rec: &ScoreRecord, method: BoostMethod, threshold: f64, models: &FusionModels) -> Result<BoostOutcome> {
    if threshold.is_nan() {
        return Err(Error::InvalidParameter("threshold is NaN".into()));
    }
    let fused = match method {
        BoostMethod::Plr => {
            let m = models.plr.as_ref().ok_or_else(|| Error::ModelState("PLR models are not fitted".into()))?;
            plr_score(rec, m)?.log_plr
        }
        BoostMethod::Svm => {
            let m = models.svm.as_ref().ok_or_else(|| Error::ModelState("SVM is not fitted".into()))?;
            rec.validate()?;
            m.decision_value(rec)
        }
    };
    Ok(BoostOutcome { accept: fused >= threshold, raw: rec.s, fused })
}

/// Parameters of the synthetic score generator. Genuine face scores are
/// `N(face_separation, 1)`, impostor scores `N(0, 1)`; kin scores are
/// `N(kin_separation, 1)` for kin pairs and `N(0, 1)` otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreSynthConfig {
    pub genuine: usize,
    pub impostor: usize,
    pub kin_per_record: usize,
    pub face_separation: f64,
    pub kin_separation: f64,
    /// Probability that an impostor's kin comparison is nonetheless kin.
    pub impostor_kin_rate: f64,
}

impl Default for ScoreSynthConfig {
    fn default() -> Self {
        Self { genuine: 1000, impostor: 1000, kin_per_record: 1, face_separation: 1.5, kin_separation: 1.5, impostor_kin_rate: 0.0 }
    }
}

pub fn synthetic_scores(cfg: &ScoreSynthConfig, seed: u64) -> Vec<ScoreRecord> {
    let mut rng = RngStream::new(seed);
    let mut out = Vec::with_capacity(cfg.genuine + cfg.impostor);
    for i in 0..cfg.genuine + cfg.impostor {
        let genuine = i < cfg.genuine;
        let s = rng.gaussian(if genuine { cfg.face_separation } else { 0.0 }, 1.0);
        let mut k = Vec::with_capacity(cfg.kin_per_record);
        let mut kin = Vec::with_capacity(cfg.kin_per_record);
        for _ in 0..cfg.kin_per_record {
            let is_kin = genuine || rng.bernoulli(cfg.impostor_kin_rate);
            k.push(rng.gaussian(if is_kin { cfg.kin_separation } else { 0.0 }, 1.0));
            kin.push(is_kin);
        }
        out.push(ScoreRecord { s, k, genuine, kin });
    }
    rng.shuffle(&mut out);
    out
}
