//! Region extraction and the two-stage hierarchical kin representation:
//! one fcDBN per facial region, a second fcDBN over their concatenated
//! codes, and a pair classifier on top.

use serde::{Deserialize, Serialize};

use crate::dbn::{greedy_pretrain, DbnStack, StackSpec};
use crate::error::{Error, Result};
use crate::mlp::{mlp_train, ClassifierSpec, MlpModel};
use crate::numeric::Mat;
use crate::rbm::{TrainConfig, UnitKind};

pub const FACE_SIDE: usize = 64;
pub const REGION_SIDE: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Face,
    T,
    NotT,
    Binocular,
    Chin,
}

/// Fractional rectangles, as `(start, end)` of height or width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegionGeometry {
    pub eye_rows: (f64, f64),
    pub nose_rows: (f64, f64),
    pub nose_cols: (f64, f64),
    pub chin_rows: (f64, f64),
    pub chin_cols: (f64, f64),
}

impl Default for RegionGeometry {
    fn default() -> Self {
        Self {
            eye_rows: (0.25, 0.45),
            nose_rows: (0.25, 0.75),
            nose_cols: (0.35, 0.65),
            chin_rows: (0.75, 1.0),
            chin_cols: (0.25, 0.75),
        }
    }
}

impl RegionGeometry {
    pub fn validate(&self) -> Result<()> {
        for (name, (a, b)) in [
            ("eye_rows", self.eye_rows),
            ("nose_rows", self.nose_rows),
            ("nose_cols", self.nose_cols),
            ("chin_rows", self.chin_rows),
            ("chin_cols", self.chin_cols),
        ] {
            if !(0.0..1.0).contains(&a) || !(a < b && b <= 1.0) {
                return Err(Error::Config(format!("{name} ({a}, {b}) is not a sub-interval of [0, 1]")));
            }
        }
        Ok(())
    }
}

fn span(frac: (f64, f64), n: usize) -> (usize, usize) {
    let lo = (frac.0 * n as f64).floor() as usize;
    let hi = ((frac.1 * n as f64).ceil() as usize).clamp(lo + 1, n);
    (lo, hi)
}

/// The 32×32 crops of one aligned face, each standardized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSet {
    pub face: Mat,
    pub t_region: Mat,
    pub not_t: Mat,
    pub binocular: Option<Mat>,
    pub chin: Option<Mat>,
    pub source_id: String,
}

impl RegionSet {
    pub fn get(&self, region: Region) -> Result<&Mat> {
        match region {
            Region::Face => Some(&self.face),
            Region::T => Some(&self.t_region),
            Region::NotT => Some(&self.not_t),
            Region::Binocular => self.binocular.as_ref(),
            Region::Chin => self.chin.as_ref(),
        }
        .ok_or_else(|| Error::Config(format!("region {region:?} was not extracted")))
    }
}

/// Bilinear resampling with pixel centres aligned, so halving averages 2×2
/// blocks and an unchanged size is the identity.
pub fn resize_bilinear(image: &Mat, rows: usize, cols: usize) -> Result<Mat> {
    let (h, w) = image.shape();
    if h == 0 || w == 0 || rows == 0 || cols == 0 {
        return Err(Error::Shape(format!("cannot resize {h}×{w} to {rows}×{cols}")));
    }
    let coord = |d: usize, from: usize, to: usize| -> (usize, usize, f64) {
        let s = ((d as f64 + 0.5) * from as f64 / to as f64 - 0.5).clamp(0.0, (from - 1) as f64);
        let i = s.floor() as usize;
        let j = (i + 1).min(from - 1);
        (i, j, s - i as f64)
    };
    Ok(Mat::from_fn(rows, cols, |r, c| {
        let (r0, r1, fr) = coord(r, h, rows);
        let (c0, c1, fc) = coord(c, w, cols);
        let top = image.get(r0, c0) * (1.0 - fc) + image.get(r0, c1) * fc;
        let bottom = image.get(r1, c0) * (1.0 - fc) + image.get(r1, c1) * fc;
        top * (1.0 - fr) + bottom * fr
    }))
}

/// Zero mean and unit variance; a constant image becomes all zeros.
pub fn standardize(image: &Mat) -> Mat {
    let mean = image.mean();
    let var = image.data().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / image.len().max(1) as f64;
    if var <= 1e-24 {
        return Mat::zeros(image.rows(), image.cols());
    }
    let sd = var.sqrt();
    image.map(|x| (x - mean) / sd)
}

fn crop(image: &Mat, rows: (usize, usize), cols: (usize, usize)) -> Mat {
    Mat::from_fn(rows.1 - rows.0, cols.1 - cols.0, |r, c| image.get(rows.0 + r, cols.0 + c))
}

/// Face-channel input: a 64×64 crop is resized; a 32×32 crop is used as is.
/// Either way the result is standardized, so applying it twice changes
/// nothing beyond rounding.
pub fn prepare_face_channel(image: &Mat) -> Result<Mat> {
    match image.shape() {
        (FACE_SIDE, FACE_SIDE) => Ok(standardize(&resize_bilinear(image, REGION_SIDE, REGION_SIDE)?)),
        (REGION_SIDE, REGION_SIDE) => Ok(standardize(image)),
        (r, c) => Err(Error::Shape(format!("face channel expects 64×64 or 32×32, got {r}×{c}"))),
    }
}

/// Face, T and not-T crops of an aligned 64×64 face.
pub fn extract_regions(face: &Mat, source_id: &str) -> Result<RegionSet> {
    extract_regions_with(face, &RegionGeometry::default(), false, source_id)
}

/// [`extract_regions`] with explicit geometry; `optional` also produces the
/// binocular strip and the chin.
pub fn extract_regions_with(face: &Mat, geom: &RegionGeometry, optional: bool, source_id: &str) -> Result<RegionSet> {
    if face.shape() != (FACE_SIDE, FACE_SIDE) {
        return Err(Error::Shape(format!("aligned face must be 64×64, got {}×{}", face.rows(), face.cols())));
    }
    if !face.is_finite() {
        return Err(Error::InvalidParameter("face has non-finite pixels".into()));
    }
    geom.validate()?;
    let n = FACE_SIDE;
    let eye = span(geom.eye_rows, n);
    let nose_r = span(geom.nose_rows, n);
    let nose_c = span(geom.nose_cols, n);
    let in_t = |r: usize, c: usize| (eye.0..eye.1).contains(&r) || ((nose_r.0..nose_r.1).contains(&r) && (nose_c.0..nose_c.1).contains(&c));
    let mean = face.mean();

    let fit = |m: &Mat| -> Result<Mat> { Ok(standardize(&resize_bilinear(m, REGION_SIDE, REGION_SIDE)?)) };

    let masked = Mat::from_fn(n, n, |r, c| if in_t(r, c) { face.get(r, c) } else { mean });
    let bbox_rows = (eye.0.min(nose_r.0), eye.1.max(nose_r.1));
    let t_region = fit(&crop(&masked, bbox_rows, (0, n)))?;
    let obfuscated = Mat::from_fn(n, n, |r, c| if in_t(r, c) { mean } else { face.get(r, c) });
    let (binocular, chin) = if optional {
        let chin_r = span(geom.chin_rows, n);
        let chin_c = span(geom.chin_cols, n);
        (Some(fit(&crop(face, eye, (0, n)))?), Some(fit(&crop(face, chin_r, chin_c))?))
    } else {
        (None, None)
    };
    Ok(RegionSet { face: fit(face)?, t_region, not_t: fit(&obfuscated)?, binocular, chin, source_id: source_id.to_string() })
}

/// `fa ‖ fb`.
pub fn pair_feature(fa: &[f64], fb: &[f64]) -> Result<Vec<f64>> {
    if fa.len() != fb.len() || fa.is_empty() {
        return Err(Error::Shape(format!("pair halves have widths {} and {}", fa.len(), fb.len())));
    }
    let mut out = Vec::with_capacity(2 * fa.len());
    out.extend_from_slice(fa);
    out.extend_from_slice(fb);
    Ok(out)
}

/// Hyperparameters of the whole pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KvrlConfig {
    pub regions: Vec<Region>,
    pub geometry: RegionGeometry,
    /// Per-region stack widths, starting with the 1024 pixel input.
    pub stage1_dims: Vec<usize>,
    /// Hidden widths of the second stage (its input is the concatenation).
    pub stage2_hidden: Vec<usize>,
    pub filters: usize,
    pub filter_size: usize,
    pub alpha: f64,
    pub beta: f64,
    /// Pretraining schedule; the Gaussian first layer of each region stack
    /// uses `gaussian_learning_rate` instead of `pretrain.learning_rate`.
    pub pretrain: TrainConfig,
    pub gaussian_learning_rate: f64,
    pub classifier: ClassifierSpec,
    pub classifier_train: TrainConfig,
}

impl KvrlConfig {
    /// Widths used in the original architecture.
    pub fn full_scale() -> Self {
        Self {
            stage1_dims: vec![1024, 512, 512],
            stage2_hidden: vec![1024, 512],
            ..Self::default()
        }
    }

    /// Same shape with no filters and no contractive term.
    pub fn plain(&self) -> Self {
        Self { filters: 0, alpha: 0.0, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.regions.is_empty() {
            return Err(Error::Config("at least one region is required".into()));
        }
        if self.stage1_dims.len() < 2 || self.stage1_dims[0] != REGION_SIDE * REGION_SIDE {
            return Err(Error::Config(format!("stage1_dims must start with {} and have a hidden layer", REGION_SIDE * REGION_SIDE)));
        }
        if self.stage2_hidden.is_empty() || self.stage1_dims.iter().chain(&self.stage2_hidden).any(|&d| d == 0) {
            return Err(Error::Config("layer widths must be positive and stage 2 needs a layer".into()));
        }
        if self.filters > 0 && (self.filter_size.is_multiple_of(2) || self.filter_size > REGION_SIDE) {
            return Err(Error::Config(format!("filter_size {} must be odd and ≤ {REGION_SIDE}", self.filter_size)));
        }
        if !(self.gaussian_learning_rate >= 0.0 && self.gaussian_learning_rate.is_finite()) {
            return Err(Error::Config("gaussian_learning_rate must be finite and ≥ 0".into()));
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(Error::Config("alpha and beta must be ≥ 0".into()));
        }
        self.geometry.validate()?;
        self.pretrain.validate()?;
        Ok(())
    }

    fn stage2_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.regions.len() * self.stage1_dims[self.stage1_dims.len() - 1]];
        dims.extend_from_slice(&self.stage2_hidden);
        dims
    }
}

impl Default for KvrlConfig {
    fn default() -> Self {
        Self {
            regions: vec![Region::Face, Region::T, Region::NotT],
            geometry: RegionGeometry::default(),
            stage1_dims: vec![1024, 128, 64],
            stage2_hidden: vec![64],
            filters: 6,
            filter_size: 3,
            alpha: 0.01,
            beta: 1e-4,
            pretrain: TrainConfig { learning_rate: 0.05, epochs: 20, batch_size: 16, cd_steps: 1, momentum: 0.5, seed: 0 },
            gaussian_learning_rate: 0.01,
            classifier: ClassifierSpec { hidden: vec![64], ..ClassifierSpec::default() },
            classifier_train: TrainConfig { learning_rate: 0.05, epochs: 60, batch_size: 16, cd_steps: 1, momentum: 0.9, seed: 0 },
        }
    }
}

/// Unsupervised part of the model: per-region stacks and the fusion stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KvrlEncoder {
    pub regions: Vec<Region>,
    pub geometry: RegionGeometry,
    pub stage1: Vec<DbnStack>,
    pub stage2: DbnStack,
}

impl KvrlEncoder {
    pub fn validate(&self) -> Result<()> {
        if self.regions.is_empty() || self.regions.len() != self.stage1.len() {
            return Err(Error::DimensionInconsistency(format!(
                "{} regions but {} stage-1 stacks",
                self.regions.len(),
                self.stage1.len()
            )));
        }
        let mut width = 0;
        for (r, s) in self.regions.iter().zip(&self.stage1) {
            s.validate()?;
            if s.input_dim() != REGION_SIDE * REGION_SIDE {
                return Err(Error::DimensionInconsistency(format!("{r:?} stack expects {} inputs", s.input_dim())));
            }
            width += s.output_dim();
        }
        self.stage2.validate()?;
        if self.stage2.input_dim() != width {
            return Err(Error::DimensionInconsistency(format!(
                "stage 2 expects {} inputs but stage 1 produces {width}",
                self.stage2.input_dim()
            )));
        }
        Ok(())
    }

    pub fn output_dim(&self) -> usize {
        self.stage2.output_dim()
    }

    /// Each region through its stack, concatenated in region order.
    pub fn stage1_codes(&self, regions: &RegionSet) -> Result<Vec<f64>> {
        let mut codes = Vec::new();
        for (r, stack) in self.regions.iter().zip(&self.stage1) {
            codes.extend(stack.encode(regions.get(*r)?.data())?);
        }
        Ok(codes)
    }

    /// Final compact representation.
    pub fn encode_face(&self, regions: &RegionSet) -> Result<Vec<f64>> {
        self.stage2.encode(&self.stage1_codes(regions)?)
    }

    /// Row `i` is the encoding of `sets[i]`.
    pub fn encode_batch(&self, sets: &[&RegionSet]) -> Result<Mat> {
        if sets.is_empty() {
            return Ok(Mat::zeros(0, self.output_dim()));
        }
        let mut parts = Vec::with_capacity(self.regions.len());
        for (r, stack) in self.regions.iter().zip(&self.stage1) {
            parts.push(stack.encode_batch(&region_matrix(sets, *r)?)?);
        }
        let refs: Vec<&Mat> = parts.iter().collect();
        self.stage2.encode_batch(&Mat::hstack(&refs)?)
    }
}

fn region_matrix(sets: &[&RegionSet], region: Region) -> Result<Mat> {
    let mut data = Vec::with_capacity(sets.len() * REGION_SIDE * REGION_SIDE);
    for s in sets {
        data.extend_from_slice(s.get(region)?.data());
    }
    Mat::new(sets.len(), REGION_SIDE * REGION_SIDE, data)
}

/// Encoder plus the trained pair classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KvrlModel {
    pub encoder: KvrlEncoder,
    pub classifier: MlpModel,
}

impl KvrlModel {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.classifier.validate()?;
        if self.classifier.input_dim() != 2 * self.encoder.output_dim() {
            return Err(Error::DimensionInconsistency(format!(
                "classifier takes {} inputs, pair features have {}",
                self.classifier.input_dim(),
                2 * self.encoder.output_dim()
            )));
        }
        Ok(())
    }

    pub fn encode_face(&self, regions: &RegionSet) -> Result<Vec<f64>> {
        self.encoder.encode_face(regions)
    }

    /// Kin probability from two encodings, averaged over both orders.
    pub fn score_codes(&self, fa: &[f64], fb: &[f64]) -> Result<f64> {
        if !self.classifier.trained {
            return Err(Error::ModelState("kin classifier has not been trained".into()));
        }
        let ab = self.classifier.predict(&pair_feature(fa, fb)?)?;
        let ba = self.classifier.predict(&pair_feature(fb, fa)?)?;
        Ok((ab + ba) / 2.0)
    }

    pub fn kin_score(&self, a: &RegionSet, b: &RegionSet) -> Result<f64> {
        if !self.classifier.trained {
            return Err(Error::ModelState("kin classifier has not been trained".into()));
        }
        self.score_codes(&self.encode_face(a)?, &self.encode_face(b)?)
    }
}

/// A labelled pair of indices into an image list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledPair {
    pub a: usize,
    pub b: usize,
    pub kin: bool,
}

/// Unsupervised two-stage pretraining on region crops.
pub fn pretrain_kvrl(corpus: &[RegionSet], cfg: &KvrlConfig) -> Result<KvrlEncoder> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::EmptyInput("pretraining corpus is empty".into()));
    }
    let sets: Vec<&RegionSet> = corpus.iter().collect();
    let mut stage1 = Vec::with_capacity(cfg.regions.len());
    let mut codes = Vec::with_capacity(cfg.regions.len());
    for (i, region) in cfg.regions.iter().enumerate() {
        let data = region_matrix(&sets, *region)?;
        let spec = StackSpec {
            dims: cfg.stage1_dims.clone(),
            first_unit: UnitKind::Gaussian,
            filters: cfg.filters,
            filter_size: cfg.filter_size,
            image_shape: Some((REGION_SIDE, REGION_SIDE)),
            alpha: cfg.alpha,
            beta: cfg.beta,
            first_learning_rate: Some(cfg.gaussian_learning_rate),
        };
        let train = TrainConfig { seed: cfg.pretrain.seed.wrapping_add(1000 * (i as u64 + 1)), ..cfg.pretrain.clone() };
        let stack = greedy_pretrain(&spec, &data, &train)?.stack;
        codes.push(stack.encode_batch(&data)?);
        stage1.push(stack);
    }
    let refs: Vec<&Mat> = codes.iter().collect();
    let joint = Mat::hstack(&refs)?;
    let spec = StackSpec { alpha: cfg.alpha, beta: cfg.beta, ..StackSpec::plain(&cfg.stage2_dims()) };
    let stage2 = greedy_pretrain(&spec, &joint, &cfg.pretrain)?.stack;
    let encoder = KvrlEncoder { regions: cfg.regions.clone(), geometry: cfg.geometry.clone(), stage1, stage2 };
    encoder.validate()?;
    Ok(encoder)
}

/// Supervised head on pair features, with each pair presented in both
/// orders.
pub fn train_classifier(encoder: &KvrlEncoder, images: &[RegionSet], pairs: &[LabeledPair], cfg: &KvrlConfig) -> Result<KvrlModel> {
    encoder.validate()?;
    if pairs.is_empty() {
        return Err(Error::EmptyInput("no labelled pairs".into()));
    }
    if let Some(p) = pairs.iter().find(|p| p.a >= images.len() || p.b >= images.len()) {
        return Err(Error::Shape(format!("pair ({}, {}) indexes past {} images", p.a, p.b, images.len())));
    }
    let sets: Vec<&RegionSet> = images.iter().collect();
    let codes = encoder.encode_batch(&sets)?;
    let d = encoder.output_dim();
    let mut data = Vec::with_capacity(pairs.len() * 4 * d);
    let mut labels = Vec::with_capacity(2 * pairs.len());
    for p in pairs {
        for (x, y) in [(p.a, p.b), (p.b, p.a)] {
            data.extend_from_slice(codes.row(x));
            data.extend_from_slice(codes.row(y));
            labels.push(if p.kin { 1.0 } else { 0.0 });
        }
    }
    let features = Mat::new(labels.len(), 2 * d, data)?;
    // zero epochs leaves the freshly initialized head, marked trained
    let classifier = mlp_train(&features, &labels, &cfg.classifier, &cfg.classifier_train)?.model;
    let model = KvrlModel { encoder: encoder.clone(), classifier };
    model.validate()?;
    Ok(model)
}

/// Pretraining followed by supervised classifier training.
pub fn train_kvrl(corpus: &[RegionSet], images: &[RegionSet], pairs: &[LabeledPair], cfg: &KvrlConfig) -> Result<KvrlModel> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("no labelled pairs".into()));
    }
    let encoder = pretrain_kvrl(corpus, cfg)?;
    train_classifier(&encoder, images, pairs, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::Activation;
    use crate::numeric::RngStream;

    fn random_face(seed: u64) -> Mat {
        let mut rng = RngStream::new(seed);
        Mat::from_fn(64, 64, |_, _| rng.uniform())
    }

    #[test]
    fn constant_face_gives_constant_regions() {
        let rs = extract_regions_with(&Mat::filled(64, 64, 0.3), &RegionGeometry::default(), true, "c").unwrap();
        for m in [&rs.face, &rs.t_region, &rs.not_t, rs.binocular.as_ref().unwrap(), rs.chin.as_ref().unwrap()] {
            assert_eq!(m.shape(), (32, 32));
            assert!(m.data().iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn eye_marker_visible_in_t_only() {
        let mut img = Mat::filled(64, 64, 0.2);
        for r in 20..24 {
            for c in 12..16 {
                img.set(r, c, 1.0);
            }
        }
        let rs = extract_regions(&img, "m").unwrap();
        let peak = |m: &Mat| m.data().iter().copied().fold(f64::MIN, f64::max);
        assert!(peak(&rs.face) > 1.0);
        assert!(peak(&rs.t_region) > 1.0);
        // the marker reads the same as unmarked T-mask pixels once obfuscated
        for r in 10..12 {
            for c in 6..8 {
                assert_eq!(rs.not_t.get(r, c), rs.not_t.get(r, c + 18));
                assert!(rs.face.get(r, c) > rs.face.get(r, c + 18));
            }
        }
    }

    #[test]
    fn regions_standardized() {
        let rs = extract_regions(&random_face(3), "r").unwrap();
        for m in [&rs.face, &rs.t_region, &rs.not_t] {
            let n = m.len() as f64;
            let mean = m.sum() / n;
            let var = m.data().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-10 && (var - 1.0).abs() < 1e-10);
        }
        assert!(matches!(extract_regions(&Mat::zeros(32, 32), "x"), Err(Error::Shape(_))));
    }

    #[test]
    fn face_channel_idempotent() {
        let once = prepare_face_channel(&random_face(4)).unwrap();
        let twice = prepare_face_channel(&once).unwrap();
        for (a, b) in once.data().iter().zip(twice.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(once, extract_regions(&random_face(4), "f").unwrap().face);
    }

    #[test]
    fn halving_averages_blocks() {
        let img = random_face(5);
        let half = resize_bilinear(&img, 32, 32).unwrap();
        let want = (img.get(2, 4) + img.get(2, 5) + img.get(3, 4) + img.get(3, 5)) / 4.0;
        assert!((half.get(1, 2) - want).abs() < 1e-15);
        assert_eq!(resize_bilinear(&img, 64, 64).unwrap(), img);
    }

    #[test]
    fn pair_feature_cases() {
        let f = pair_feature(&[0.0; 3], &[1.0; 3]).unwrap();
        assert_eq!(f, vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        assert!(matches!(pair_feature(&[0.0; 3], &[1.0; 2]), Err(Error::Shape(_))));
    }

    fn zero_model(regions: usize) -> KvrlModel {
        let stage1 = (0..regions).map(|_| DbnStack::zeros(&[1024, 8, 4]).unwrap()).collect();
        let encoder = KvrlEncoder {
            regions: [Region::Face, Region::T, Region::NotT][..regions].to_vec(),
            geometry: RegionGeometry::default(),
            stage1,
            stage2: DbnStack::zeros(&[4 * regions, 6]).unwrap(),
        };
        let classifier = MlpModel::new(&[12, 5, 1], Activation::Relu, 0.0, 0.0, &mut RngStream::new(1)).unwrap();
        KvrlModel { encoder, classifier }
    }

    #[test]
    fn zero_model_encodes_half_and_requires_training() {
        let mut m = zero_model(3);
        m.validate().unwrap();
        let rs = extract_regions(&random_face(6), "z").unwrap();
        assert_eq!(m.encode_face(&rs).unwrap(), vec![0.5; 6]);
        assert!(matches!(m.kin_score(&rs, &rs), Err(Error::ModelState(_))));
        m.classifier.trained = true;
        let s = m.kin_score(&rs, &rs).unwrap();
        assert!((0.0..=1.0).contains(&s));
    }

    #[test]
    fn encode_matches_manual_composition() {
        let mut rng = RngStream::new(2);
        let mut m = zero_model(3);
        for s in m.encoder.stage1.iter_mut().chain(std::iter::once(&mut m.encoder.stage2)) {
            for l in s.layers.iter_mut() {
                l.weights = l.weights.map(|_| rng.gaussian(0.0, 0.05));
            }
        }
        let rs = extract_regions(&random_face(7), "q").unwrap();
        let mut cat = Vec::new();
        for (stack, img) in m.encoder.stage1.iter().zip([&rs.face, &rs.t_region, &rs.not_t]) {
            cat.extend(stack.encode(img.data()).unwrap());
        }
        let manual = m.encoder.stage2.encode(&cat).unwrap();
        let got = m.encode_face(&rs).unwrap();
        for (a, b) in got.iter().zip(&manual) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(got, m.encode_face(&rs).unwrap());
        let batch = m.encoder.encode_batch(&[&rs]).unwrap();
        for (a, b) in batch.row(0).iter().zip(&got) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let mut m = zero_model(3);
        m.encoder.stage2 = DbnStack::zeros(&[8, 6]).unwrap();
        assert!(matches!(m.validate(), Err(Error::DimensionInconsistency(_))));
    }

    #[test]
    fn empty_inputs_rejected() {
        let cfg = KvrlConfig::default();
        assert!(matches!(pretrain_kvrl(&[], &cfg), Err(Error::EmptyInput(_))));
        let rs = extract_regions(&random_face(1), "a").unwrap();
        assert!(matches!(train_kvrl(&[rs.clone()], &[rs], &[], &cfg), Err(Error::EmptyInput(_))));
    }
}
