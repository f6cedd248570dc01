//! Synthetic kin-verification benchmark: a pretraining corpus, training
//! pairs and test pairs drawn from disjoint families.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::roc;
use crate::kvrl::{extract_regions, KvrlConfig, KvrlModel, LabeledPair, RegionSet};
use crate::kvrl::{pretrain_kvrl, train_classifier};
use crate::numeric::RngStream;
use crate::synth::{synth_kin_offset, SynthCorpus};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KinBenchmarkConfig {
    /// Families that supply labelled pairs.
    pub families: usize,
    pub members_per_family: usize,
    pub separability: f64,
    /// Of `families`, how many are held out for testing.
    pub test_families: usize,
    /// Half kin, half non-kin.
    pub test_pairs: usize,
    /// Extra families used only for unsupervised pretraining.
    pub pretrain_families: usize,
}

impl Default for KinBenchmarkConfig {
    fn default() -> Self {
        Self { families: 40, members_per_family: 6, separability: 0.8, test_families: 10, test_pairs: 200, pretrain_families: 40 }
    }
}

#[derive(Debug, Clone)]
pub struct KinSplit {
    pub corpus: Vec<RegionSet>,
    pub images: Vec<RegionSet>,
    pub train: Vec<LabeledPair>,
    pub test: Vec<LabeledPair>,
}

fn region_sets(c: &SynthCorpus) -> Result<Vec<RegionSet>> {
    c.images.iter().map(|im| extract_regions(&im.to_mat(), &im.subject)).collect()
}

/// Non-kin pairs sampled across distinct families of `fams`.
fn non_kin(rng: &mut RngStream, fams: &[usize], members: usize, count: usize) -> Vec<LabeledPair> {
    (0..count)
        .map(|_| {
            let i = rng.below(fams.len());
            let j = (i + 1 + rng.below(fams.len() - 1)) % fams.len();
            LabeledPair { a: fams[i] * members + rng.below(members), b: fams[j] * members + rng.below(members), kin: false }
        })
        .collect()
}

fn kin_pairs(fams: &[usize], members: usize) -> Vec<LabeledPair> {
    let mut out = Vec::new();
    for &f in fams {
        for i in 0..members {
            for j in i + 1..members {
                out.push(LabeledPair { a: f * members + i, b: f * members + j, kin: true });
            }
        }
    }
    out
}

pub fn kin_benchmark_split(cfg: &KinBenchmarkConfig, seed: u64) -> Result<KinSplit> {
    let m = cfg.members_per_family;
    if m < 2 || cfg.test_families < 2 || cfg.families < cfg.test_families + 2 {
        return Err(Error::Config("benchmark needs ≥ 2 members and ≥ 2 families on each side of the split".into()));
    }
    let per_family = m * (m - 1) / 2;
    if cfg.test_pairs < 2 || cfg.test_pairs / 2 > cfg.test_families * per_family {
        return Err(Error::Config(format!("{} test families cannot supply {} kin pairs", cfg.test_families, cfg.test_pairs / 2)));
    }
    if cfg.pretrain_families == 0 {
        return Err(Error::Config("pretraining needs at least one family".into()));
    }
    let labelled = synth_kin_offset(seed, cfg.families, m, cfg.separability, 0)?;
    let corpus = synth_kin_offset(seed, cfg.pretrain_families, m, cfg.separability, cfg.families)?;
    let mut rng = RngStream::new(seed).derive(0xbe);
    let mut fams: Vec<usize> = (0..cfg.families).collect();
    rng.shuffle(&mut fams);
    let (test_f, train_f) = fams.split_at(cfg.test_families);

    let mut train = kin_pairs(train_f, m);
    let n = train.len();
    train.extend(non_kin(&mut rng, train_f, m, n));
    rng.shuffle(&mut train);

    let mut test_kin = kin_pairs(test_f, m);
    rng.shuffle(&mut test_kin);
    test_kin.truncate(cfg.test_pairs / 2);
    let mut test = test_kin;
    test.extend(non_kin(&mut rng, test_f, m, cfg.test_pairs - cfg.test_pairs / 2));

    Ok(KinSplit { corpus: region_sets(&corpus)?, images: region_sets(&labelled)?, train, test })
}

/// ROC AUC of `kin_score` over the test pairs.
pub fn test_auc(model: &KvrlModel, split: &KinSplit) -> Result<f64> {
    let sets: Vec<&RegionSet> = split.images.iter().collect();
    let codes = model.encoder.encode_batch(&sets)?;
    let mut scores = Vec::with_capacity(split.test.len());
    let mut labels = Vec::with_capacity(split.test.len());
    for p in &split.test {
        scores.push(model.score_codes(codes.row(p.a), codes.row(p.b))?);
        labels.push(p.kin);
    }
    Ok(roc(&scores, &labels)?.auc)
}

/// Pretrains on the corpus, trains the classifier on the training pairs and
/// reports test AUC.
pub fn run_kin_benchmark(split: &KinSplit, cfg: &KvrlConfig) -> Result<(KvrlModel, f64)> {
    let encoder = pretrain_kvrl(&split.corpus, cfg)?;
    let model = train_classifier(&encoder, &split.images, &split.train, cfg)?;
    let auc = test_auc(&model, split)?;
    Ok((model, auc))
}
