use fcdbn::benchmark::{kin_benchmark_split, run_kin_benchmark, test_auc, KinBenchmarkConfig};
use fcdbn::evaluation::roc;
use fcdbn::kvrl::{extract_regions, pretrain_kvrl, train_classifier, KvrlConfig, LabeledPair, RegionSet};
use fcdbn::numeric::RngStream;
use fcdbn::synth::synth_kin;

fn small_config() -> KvrlConfig {
    let mut cfg = KvrlConfig { stage1_dims: vec![1024, 32], stage2_hidden: vec![16], ..KvrlConfig::default() };
    cfg.pretrain.epochs = 2;
    cfg.classifier.hidden = vec![16];
    cfg
}

fn region_sets(seed: u64, families: usize, members: usize) -> (Vec<RegionSet>, fcdbn::synth::SynthCorpus) {
    let corpus = synth_kin(seed, families, members, 0.8).unwrap();
    let sets = corpus.images.iter().map(|im| extract_regions(&im.to_mat(), &im.subject).unwrap()).collect();
    (sets, corpus)
}

#[test]
fn untrained_classifier_scores_at_chance() {
    let (sets, _) = region_sets(21, 100, 5);
    let mut cfg = small_config();
    let encoder = pretrain_kvrl(&sets[..100], &cfg).unwrap();
    cfg.classifier_train.epochs = 0;
    let mut rng = RngStream::new(4);
    let pairs: Vec<LabeledPair> = (0..500)
        .map(|i| {
            let kin = i % 2 == 0;
            let fa = rng.below(100);
            let fb = if kin { fa } else { (fa + 1 + rng.below(99)) % 100 };
            let a = fa * 5 + rng.below(5);
            let mut b = fb * 5 + rng.below(5);
            if b == a {
                b = fa * 5 + (a % 5 + 1) % 5;
            }
            LabeledPair { a, b, kin }
        })
        .collect();
    let model = train_classifier(&encoder, &sets, &pairs, &cfg).unwrap();
    let scores: Vec<f64> = pairs.iter().map(|p| model.kin_score(&sets[p.a], &sets[p.b]).unwrap()).collect();
    let labels: Vec<bool> = pairs.iter().map(|p| p.kin).collect();
    let auc = roc(&scores, &labels).unwrap().auc;
    assert!((auc - 0.5).abs() <= 0.07, "untrained AUC {auc}");
}

#[test]
fn trained_model_separates_kin_on_held_out_families() {
    let bcfg = KinBenchmarkConfig::default();
    let split = kin_benchmark_split(&bcfg, 7).unwrap();
    let mut cfg = KvrlConfig::default();
    cfg.pretrain.seed = 7;
    cfg.classifier_train.seed = 7;
    let (model, auc) = run_kin_benchmark(&split, &cfg).unwrap();
    assert!(auc >= 0.85, "held-out AUC {auc}");
    assert_eq!(test_auc(&model, &split).unwrap(), auc);
    assert_eq!(split.test.len(), 200);
}

#[test]
fn pipeline_is_seed_deterministic() {
    let (sets, corpus) = region_sets(3, 12, 2);
    let pairs: Vec<LabeledPair> = corpus.rows.iter().map(|r| LabeledPair { a: r.a, b: r.b, kin: r.kin }).collect();
    let cfg = small_config();
    let a = fcdbn::kvrl::train_kvrl(&sets, &sets, &pairs, &cfg).unwrap();
    let b = fcdbn::kvrl::train_kvrl(&sets, &sets, &pairs, &cfg).unwrap();
    assert_eq!(a, b);
    let s = a.kin_score(&sets[0], &sets[1]).unwrap();
    assert!(s > 0.0 && s < 1.0);
    // symmetric by construction
    assert_eq!(s, a.kin_score(&sets[1], &sets[0]).unwrap());
}

#[test]
fn benchmark_split_keeps_families_apart() {
    let bcfg = KinBenchmarkConfig { families: 12, test_families: 4, test_pairs: 40, pretrain_families: 3, ..KinBenchmarkConfig::default() };
    let split = kin_benchmark_split(&bcfg, 1).unwrap();
    let m = bcfg.members_per_family;
    let fam = |i: usize| i / m;
    let test_fams: std::collections::HashSet<usize> = split.test.iter().flat_map(|p| [fam(p.a), fam(p.b)]).collect();
    assert!(split.train.iter().all(|p| !test_fams.contains(&fam(p.a)) && !test_fams.contains(&fam(p.b))));
    assert!(split.train.iter().chain(&split.test).all(|p| p.kin == (fam(p.a) == fam(p.b))));
    assert_eq!(split.test.iter().filter(|p| p.kin).count(), 20);
    assert_eq!(split.corpus.len(), 3 * m);
}
