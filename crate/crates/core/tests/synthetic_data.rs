use fcdbn::evaluation::{gen_negatives, make_folds, roc, ztest_proportions};
use fcdbn::numeric::RngStream;
use fcdbn::synth::{synth_kin, SynthImage};
use std::collections::HashSet;

fn distance(a: &SynthImage, b: &SynthImage) -> f64 {
    a.pixels.iter().zip(&b.pixels).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum::<f64>().sqrt()
}

/// Share of kin and of non-kin pairs whose pixel distance falls below the
/// pooled median, compared with a two-proportion z-test.
fn distance_audit(separability: f64, seed: u64) -> (f64, bool) {
    let corpus = synth_kin(seed, 100, 3, separability).unwrap();
    let mut rng = RngStream::new(seed);
    let m = 3;
    let kin: Vec<f64> = (0..200)
        .map(|_| {
            let f = rng.below(100);
            let i = rng.below(m);
            let j = (i + 1 + rng.below(m - 1)) % m;
            distance(&corpus.images[f * m + i], &corpus.images[f * m + j])
        })
        .collect();
    let non: Vec<f64> = (0..200)
        .map(|_| {
            let f = rng.below(100);
            let g = (f + 1 + rng.below(99)) % 100;
            distance(&corpus.images[f * m + rng.below(m)], &corpus.images[g * m + rng.below(m)])
        })
        .collect();
    let mut pooled: Vec<f64> = kin.iter().chain(&non).copied().collect();
    pooled.sort_by(f64::total_cmp);
    let median = pooled[pooled.len() / 2];
    let share = |xs: &[f64]| xs.iter().filter(|&&d| d < median).count() as f64 / xs.len() as f64;
    let t = ztest_proportions(share(&kin), 200, share(&non), 200).unwrap();
    (t.z, t.significant_95)
}

#[test]
fn zero_separability_hides_kinship() {
    let (z, significant) = distance_audit(0.0, 31);
    assert!(!significant, "z = {z}");
}

#[test]
fn high_separability_is_detectable() {
    let (z, significant) = distance_audit(0.8, 31);
    assert!(significant && z > 0.0, "z = {z}");
}

#[test]
fn corpora_are_byte_reproducible() {
    let a = synth_kin(8, 5, 3, 0.5).unwrap();
    let b = synth_kin(8, 5, 3, 0.5).unwrap();
    assert_eq!(a.images.iter().map(|i| &i.pixels).collect::<Vec<_>>(), b.images.iter().map(|i| &i.pixels).collect::<Vec<_>>());
    assert_eq!(a.rows, b.rows);
}

#[test]
fn random_scores_give_chance_auc() {
    let mut rng = RngStream::new(5);
    let scores: Vec<f64> = (0..10_000).map(|_| rng.uniform()).collect();
    let labels: Vec<bool> = (0..10_000).map(|_| rng.bernoulli(0.5)).collect();
    let auc = roc(&scores, &labels).unwrap().auc;
    assert!((auc - 0.5).abs() < 0.02, "AUC {auc}");
}

#[test]
fn synthetic_manifest_feeds_the_protocol() {
    let corpus = synth_kin(12, 30, 2, 0.8).unwrap();
    let pairs = corpus.kin_pairs();
    let plan = make_folds(&pairs, 3).unwrap();
    let all: HashSet<_> = pairs.iter().map(|p| (p.a.path.clone(), p.b.path.clone())).collect();
    let mut seen = HashSet::new();
    for fold in &plan.folds {
        for p in fold {
            assert!(seen.insert((p.a.path.clone(), p.b.path.clone())), "pair in two folds");
        }
    }
    assert_eq!(seen, all);
    for seed in 0..100 {
        let negs = gen_negatives(&pairs, seed).unwrap();
        let mut used = HashSet::new();
        for n in &negs {
            assert!(used.insert(n.a.path.clone()) && used.insert(n.b.path.clone()));
        }
    }
}
