//! Command-line surface: `synth`, `pretrain`, `train-kin`, `eval-kin`,
//! `encode`, `fuse` and `metrics`.
//!
//! Exit codes: 0 on success, 2 when arguments, configuration or inputs are
//! invalid, 3 when computation or writing fails. Artifacts are written only
//! after every computation of a command has succeeded.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{
    dprime_from_counts, equivocation, gen_negatives_with_families, information_entropy, make_folds, roc,
    stimulus_entropy, ztest_proportions, ConfusionCounts, FamilyMap, ImageRef, KinPair, Relation, RocCurve, FOLD_COUNT,
};
use crate::fusion::{plr_score, svm_fit, synthetic_scores, FusionModels, PlrModels, ScoreSynthConfig, SvmConfig};
use crate::io::{
    encode_pgm, format_manifest, format_scores, load_image, load_model, parse_manifest, parse_scores,
    ManifestEntry, ModelDocument, ModelPayload, PairLabel,
};
use crate::kvrl::{extract_regions_with, pretrain_kvrl, train_classifier, KvrlConfig, KvrlEncoder, LabeledPair, RegionSet};
use crate::numeric::RngStream;
use crate::synth::{synth_kin_offset, SYNTH_SIDE};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "fcdbn", about = "Filtered contractive DBN kinship verification and kin-aided face verification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration; relative paths inside it resolve against its directory.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Render a synthetic kin corpus, pretraining images and score records.
    Synth,
    /// Unsupervised two-stage pretraining on the pretraining image list.
    Pretrain,
    /// Train the kin classifier on every manifest pair.
    TrainKin,
    /// Five-fold kin-verification protocol with per-relation accuracy.
    EvalKin,
    /// Write encodings of a list of images.
    Encode,
    /// Face-only vs kin-boosted verification ROC curves.
    Fuse,
    /// d′, entropies and z-tests from confusion counts.
    Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSettings {
    pub families: usize,
    pub members_per_family: usize,
    pub separability: f64,
    pub pretrain_families: usize,
    pub pretrain_members: usize,
    pub scores: ScoreSynthConfig,
}

impl Default for SynthSettings {
    fn default() -> Self {
        // two members per family keeps every image in exactly one kin pair,
        // which the single-use negative rule of eval-kin needs
        Self {
            families: 40,
            members_per_family: 2,
            separability: 0.8,
            pretrain_families: 40,
            pretrain_members: 2,
            scores: ScoreSynthConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionSettings {
    pub components: usize,
    pub svm: SvmConfig,
    /// Share of records held out for the ROC curves.
    pub test_fraction: f64,
}

impl Default for FusionSettings {
    fn default() -> Self {
        Self { components: 2, svm: SvmConfig::default(), test_fraction: 0.5 }
    }
}

/// Everything a run can be configured with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data_dir: PathBuf,
    pub manifest: PathBuf,
    pub pretrain_list: PathBuf,
    pub scores: PathBuf,
    pub counts: PathBuf,
    /// Images to encode; defaults to every image in the manifest.
    pub encode_list: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// Kin decision threshold on the kin score.
    pub threshold: f64,
    pub synth: SynthSettings,
    pub kvrl: KvrlConfig,
    pub fusion: FusionSettings,
    /// Directory relative paths resolve against.
    #[serde(skip)]
    base: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data_dir: "data".into(),
            manifest: "data/pairs.csv".into(),
            pretrain_list: "data/pretrain.txt".into(),
            scores: "data/scores.csv".into(),
            counts: "data/counts.csv".into(),
            encode_list: None,
            output_dir: "out".into(),
            threshold: 0.5,
            synth: SynthSettings::default(),
            kvrl: KvrlConfig::default(),
            fusion: FusionSettings::default(),
            base: PathBuf::new(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.kvrl.validate()?;
        let s = &self.synth;
        if s.families < 2 || s.members_per_family < 2 || s.pretrain_families == 0 || s.pretrain_members == 0 {
            return Err(Error::Config("synth needs ≥ 2 families of ≥ 2 members and a nonempty pretraining set".into()));
        }
        if !(0.0..=1.0).contains(&s.separability) || !(0.0..=1.0).contains(&s.scores.impostor_kin_rate) {
            return Err(Error::Config("separability and impostor_kin_rate must lie in [0, 1]".into()));
        }
        if !(self.threshold.is_finite() && (0.0..=1.0).contains(&self.threshold)) {
            return Err(Error::Config(format!("threshold {} outside [0, 1]", self.threshold)));
        }
        let f = &self.fusion;
        if f.components == 0 || !(f.test_fraction > 0.0 && f.test_fraction < 1.0) {
            return Err(Error::Config("fusion needs ≥ 1 component and test_fraction in (0, 1)".into()));
        }
        if !(f.svm.lambda >= 0.0 && f.svm.learning_rate > 0.0) {
            return Err(Error::Config("svm needs lambda ≥ 0 and a positive learning_rate".into()));
        }
        Ok(())
    }

    /// Makes relative paths relative to `base`.
    fn resolve(mut self, base: &Path) -> Self {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.data_dir);
        fix(&mut self.manifest);
        fix(&mut self.pretrain_list);
        fix(&mut self.scores);
        fix(&mut self.counts);
        fix(&mut self.output_dir);
        if let Some(p) = self.encode_list.as_mut() {
            fix(p);
        }
        self.base = base.to_path_buf();
        self
    }

    /// `path` as the user wrote it, for reports.
    fn shown(&self, path: &Path) -> String {
        path.strip_prefix(&self.base).unwrap_or(path).display().to_string()
    }

    fn encoder_path(&self) -> PathBuf {
        self.output_dir.join("encoder.json")
    }

    fn model_path(&self) -> PathBuf {
        self.output_dir.join("kvrl_model.json")
    }
}

/// Error tagged with the exit code it maps to.
#[derive(Debug)]
struct Failure {
    code: i32,
    error: Error,
}

type Outcome<T> = std::result::Result<T, Failure>;

trait Tag<T> {
    /// Input or configuration problem.
    fn invalid(self) -> Outcome<T>;
    /// Failure while computing or writing.
    fn runtime(self) -> Outcome<T>;
}

impl<T> Tag<T> for Result<T> {
    fn invalid(self) -> Outcome<T> {
        self.map_err(|error| Failure { code: EXIT_VALIDATION, error })
    }

    fn runtime(self) -> Outcome<T> {
        self.map_err(|error| Failure { code: EXIT_RUNTIME, error })
    }
}

/// Files to write once the command has succeeded, plus text for stdout.
#[derive(Default)]
struct Artifacts {
    files: Vec<(PathBuf, Vec<u8>)>,
    report: String,
}

impl Artifacts {
    fn add(&mut self, path: PathBuf, bytes: Vec<u8>) {
        self.files.push((path, bytes));
    }

    /// All files go to temporaries first; renames happen only if every
    /// temporary was written.
    fn commit(self, out: &mut dyn Write) -> Result<()> {
        let mut staged = Vec::with_capacity(self.files.len());
        let cleanup = |staged: &[(PathBuf, PathBuf)]| {
            for (tmp, _) in staged {
                let _ = fs::remove_file(tmp);
            }
        };
        for (path, bytes) in &self.files {
            let mut tmp = path.as_os_str().to_owned();
            tmp.push(".partial");
            let tmp = PathBuf::from(tmp);
            let res = path
                .parent()
                .filter(|d| !d.as_os_str().is_empty())
                .map_or(Ok(()), fs::create_dir_all)
                .and_then(|_| fs::write(&tmp, bytes));
            if let Err(e) = res {
                cleanup(&staged);
                return Err(e.into());
            }
            staged.push((tmp, path.clone()));
        }
        for (tmp, path) in &staged {
            fs::rename(tmp, path)?;
        }
        out.write_all(self.report.as_bytes())?;
        Ok(())
    }
}

/// Runs the CLI with `argv` (program name first), printing to stdout.
pub fn run_command(argv: &[String]) -> i32 {
    run_command_with_output(argv, &mut std::io::stdout())
}

/// [`run_command`] with the report sent to `out`.
pub fn run_command_with_output(argv: &[String], out: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli).and_then(|a| a.commit(out).runtime()) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.error);
            f.code
        }
    }
}

fn load_config(cli: &Cli) -> Outcome<RunConfig> {
    let (cfg, base) = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))
                .invalid()?;
            let cfg: RunConfig = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
                .invalid()?;
            let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
            (cfg, base)
        }
        None => (RunConfig::default(), PathBuf::new()),
    };
    let mut cfg = cfg.resolve(&base);
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.kvrl.pretrain.seed = cfg.seed;
    cfg.kvrl.classifier_train.seed = cfg.seed;
    cfg.validate().invalid()?;
    Ok(cfg)
}

fn execute(cli: &Cli) -> Outcome<Artifacts> {
    let cfg = load_config(cli)?;
    match cli.command {
        Command::Synth => cmd_synth(&cfg),
        Command::Pretrain => cmd_pretrain(&cfg),
        Command::TrainKin => cmd_train_kin(&cfg),
        Command::EvalKin => cmd_eval_kin(&cfg),
        Command::Encode => cmd_encode(&cfg),
        Command::Fuse => cmd_fuse(&cfg),
        Command::Metrics => cmd_metrics(&cfg),
    }
}

fn relative_to(base: &Path, path: &str) -> PathBuf {
    let p = Path::new(path);
    if p.is_relative() {
        base.join(p)
    } else {
        p.to_path_buf()
    }
}

fn parent_of(p: &Path) -> PathBuf {
    p.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn cmd_synth(cfg: &RunConfig) -> Outcome<Artifacts> {
    let s = &cfg.synth;
    let labelled = synth_kin_offset(cfg.seed, s.families, s.members_per_family, s.separability, 0).invalid()?;
    let pretrain =
        synth_kin_offset(cfg.seed, s.pretrain_families, s.pretrain_members, s.separability, s.families).invalid()?;
    let mut art = Artifacts::default();
    let image_path = |name: String| format!("images/{name}");
    for img in labelled.images.iter().chain(&pretrain.images) {
        let bytes = encode_pgm(SYNTH_SIDE, SYNTH_SIDE, &img.pixels).runtime()?;
        art.add(cfg.data_dir.join(image_path(img.file_name())), bytes);
    }
    let rows: Vec<ManifestEntry> = labelled
        .rows
        .iter()
        .map(|r| {
            let (a, b) = (&labelled.images[r.a], &labelled.images[r.b]);
            ManifestEntry {
                path_a: image_path(a.file_name()),
                path_b: image_path(b.file_name()),
                label: if r.kin { PairLabel::Kin } else { PairLabel::Nonkin },
                relation: r.relation,
                subject_a: a.subject.clone(),
                subject_b: b.subject.clone(),
            }
        })
        .collect();
    let manifest_bytes = format_manifest(&rows).runtime()?;
    art.add(cfg.data_dir.join("pairs.csv"), manifest_bytes);
    let list: String = pretrain.images.iter().map(|i| image_path(i.file_name()) + "\n").collect();
    art.add(cfg.data_dir.join("pretrain.txt"), list.into_bytes());
    let scores = synthetic_scores(&s.scores, RngStream::new(cfg.seed).derive(0x5c).next_u64());
    art.add(cfg.data_dir.join("scores.csv"), format_scores(&scores).runtime()?);
    let _ = writeln!(
        art.report,
        "synth: {} labelled images, {} pairs, {} pretraining images, {} score records in {}",
        labelled.images.len(),
        rows.len(),
        pretrain.images.len(),
        scores.len(),
        cfg.shown(&cfg.data_dir)
    );
    Ok(art)
}

fn region_set(cfg: &RunConfig, path: &Path) -> Result<RegionSet> {
    let image = load_image(path)?;
    extract_regions_with(&image, &cfg.kvrl.geometry, false, &path.display().to_string())
}

fn read_list(path: &Path) -> Outcome<Vec<PathBuf>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read image list {}: {e}", path.display())))
        .invalid()?;
    let base = parent_of(path);
    let list: Vec<PathBuf> =
        text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')).map(|l| relative_to(&base, l)).collect();
    if list.is_empty() {
        return Err(Error::EmptyInput(format!("{} lists no images", path.display()))).invalid();
    }
    Ok(list)
}

fn pretrain_encoder(cfg: &RunConfig, exclude: &[PathBuf]) -> Outcome<KvrlEncoder> {
    let paths = read_list(&cfg.pretrain_list)?;
    if let Some(p) = paths.iter().find(|p| exclude.contains(p)) {
        return Err(Error::Config(format!("{} is both a pretraining image and a labelled image", p.display()))).invalid();
    }
    let corpus = paths.iter().map(|p| region_set(cfg, p)).collect::<Result<Vec<_>>>().invalid()?;
    pretrain_kvrl(&corpus, &cfg.kvrl).runtime()
}

/// The saved encoder when present, otherwise a freshly pretrained one.
fn obtain_encoder(cfg: &RunConfig, exclude: &[PathBuf]) -> Outcome<(KvrlEncoder, bool)> {
    let path = cfg.encoder_path();
    if path.exists() {
        match load_model(&path).invalid()?.payload {
            ModelPayload::Encoder(e) => Ok((e, false)),
            _ => Err(Error::Config(format!("{} does not hold an encoder", path.display()))).invalid(),
        }
    } else {
        Ok((pretrain_encoder(cfg, exclude)?, true))
    }
}

fn cmd_pretrain(cfg: &RunConfig) -> Outcome<Artifacts> {
    let encoder = pretrain_encoder(cfg, &[])?;
    let doc = ModelDocument::new(ModelPayload::Encoder(encoder), Some(cfg.kvrl.clone()));
    let mut art = Artifacts::default();
    art.add(cfg.encoder_path(), doc.to_json().runtime()?.into_bytes());
    let _ = writeln!(art.report, "pretrain: encoder with dims {:?} -> {}", doc.dims, cfg.shown(&cfg.encoder_path()));
    Ok(art)
}

/// Manifest rows with image paths resolved, plus region sets for every
/// distinct image.
struct LoadedManifest {
    rows: Vec<ManifestEntry>,
    paths: Vec<PathBuf>,
    index: HashMap<PathBuf, usize>,
    images: Vec<RegionSet>,
}

impl LoadedManifest {
    fn load(cfg: &RunConfig) -> Outcome<Self> {
        let text = fs::read_to_string(&cfg.manifest)
            .map_err(|e| Error::Config(format!("cannot read manifest {}: {e}", cfg.manifest.display())))
            .invalid()?;
        let mut rows = parse_manifest(&text).invalid()?;
        let base = parent_of(&cfg.manifest);
        let mut paths = Vec::new();
        let mut index = HashMap::new();
        for r in rows.iter_mut() {
            for p in [&mut r.path_a, &mut r.path_b] {
                let full = relative_to(&base, p);
                *p = full.display().to_string();
                if !index.contains_key(&full) {
                    index.insert(full.clone(), paths.len());
                    paths.push(full);
                }
            }
        }
        let images = paths.iter().map(|p| region_set(cfg, p)).collect::<Result<Vec<_>>>().invalid()?;
        Ok(Self { rows, paths, index, images })
    }

    fn idx(&self, path: &str) -> usize {
        self.index[Path::new(path)]
    }
}

fn cmd_train_kin(cfg: &RunConfig) -> Outcome<Artifacts> {
    let m = LoadedManifest::load(cfg)?;
    let pairs: Vec<LabeledPair> = m
        .rows
        .iter()
        .map(|r| LabeledPair { a: m.idx(&r.path_a), b: m.idx(&r.path_b), kin: r.label == PairLabel::Kin })
        .collect();
    if !pairs.iter().any(|p| p.kin) || pairs.iter().all(|p| p.kin) {
        return Err(Error::DegenerateLabels("manifest needs kin and nonkin rows".into())).invalid();
    }
    let (encoder, fresh) = obtain_encoder(cfg, &m.paths)?;
    let model = train_classifier(&encoder, &m.images, &pairs, &cfg.kvrl).runtime()?;
    let sets: Vec<&RegionSet> = m.images.iter().collect();
    let codes = encoder.encode_batch(&sets).runtime()?;
    let mut scores = Vec::with_capacity(pairs.len());
    for p in &pairs {
        scores.push(model.score_codes(codes.row(p.a), codes.row(p.b)).runtime()?);
    }
    let labels: Vec<bool> = pairs.iter().map(|p| p.kin).collect();
    let auc = roc(&scores, &labels).runtime()?.auc;

    let mut art = Artifacts::default();
    if fresh {
        let doc = ModelDocument::new(ModelPayload::Encoder(encoder), Some(cfg.kvrl.clone()));
        art.add(cfg.encoder_path(), doc.to_json().runtime()?.into_bytes());
    }
    let doc = ModelDocument::new(ModelPayload::Kvrl(model), Some(cfg.kvrl.clone()));
    art.add(cfg.model_path(), doc.to_json().runtime()?.into_bytes());
    let _ = writeln!(art.report, "train-kin: {} pairs, training AUC {auc:.6} -> {}", pairs.len(), cfg.shown(&cfg.model_path()));
    Ok(art)
}

struct FoldResult {
    accuracy: f64,
    auc: f64,
    pairs: usize,
    /// relation → (correct, total)
    by_relation: BTreeMap<Relation, (usize, usize)>,
    scores: Vec<f64>,
    labels: Vec<bool>,
}

fn worker_count() -> usize {
    let default = std::thread::available_parallelism().map_or(1, |n| n.get());
    std::env::var("FCDBN_THREADS").ok().and_then(|v| v.parse::<usize>().ok()).filter(|&n| n > 0).unwrap_or(default)
}

fn cmd_eval_kin(cfg: &RunConfig) -> Outcome<Artifacts> {
    let m = LoadedManifest::load(cfg)?;
    let kin: Vec<KinPair> = m
        .rows
        .iter()
        .filter(|r| r.label == PairLabel::Kin)
        .map(|r| KinPair {
            a: ImageRef { path: r.path_a.clone(), subject: r.subject_a.clone() },
            b: ImageRef { path: r.path_b.clone(), subject: r.subject_b.clone() },
            relation: r.relation,
        })
        .collect();
    let families = FamilyMap::from_pairs(&kin);
    let plan = make_folds(&kin, cfg.seed).invalid()?;
    // negatives for every fold are fixed before any training
    let mut fold_sets = Vec::with_capacity(FOLD_COUNT);
    for f in 0..FOLD_COUNT {
        let seeds = RngStream::new(cfg.seed.wrapping_add(f as u64));
        let train_pos = plan.training_pairs(f);
        let train_neg = gen_negatives_with_families(&train_pos, &families, seeds.derive(1).next_u64()).invalid()?;
        let test_pos = plan.folds[f].clone();
        let test_neg = gen_negatives_with_families(&test_pos, &families, seeds.derive(2).next_u64()).invalid()?;
        fold_sets.push((train_pos, train_neg, test_pos, test_neg));
    }
    let (encoder, _) = obtain_encoder(cfg, &m.paths)?;
    let sets: Vec<&RegionSet> = m.images.iter().collect();
    let codes = encoder.encode_batch(&sets).runtime()?;

    let run_fold = |f: usize| -> Result<FoldResult> {
        let (train_pos, train_neg, test_pos, test_neg) = &fold_sets[f];
        let mut train: Vec<LabeledPair> =
            train_pos.iter().map(|p| LabeledPair { a: m.idx(&p.a.path), b: m.idx(&p.b.path), kin: true }).collect();
        train.extend(train_neg.iter().map(|p| LabeledPair { a: m.idx(&p.a.path), b: m.idx(&p.b.path), kin: false }));
        let mut kcfg = cfg.kvrl.clone();
        kcfg.classifier_train.seed = cfg.seed.wrapping_add(f as u64);
        let model = train_classifier(&encoder, &m.images, &train, &kcfg)?;
        let mut res = FoldResult {
            accuracy: 0.0,
            auc: 0.0,
            pairs: 0,
            by_relation: BTreeMap::new(),
            scores: Vec::new(),
            labels: Vec::new(),
        };
        let mut correct = 0;
        // the k-th negative is tallied under the relation of the k-th positive
        let tests = test_pos
            .iter()
            .map(|p| (&p.a.path, &p.b.path, true, p.relation))
            .chain(test_neg.iter().zip(test_pos).map(|(n, p)| (&n.a.path, &n.b.path, false, p.relation)));
        for (a, b, label, relation) in tests {
            let s = model.score_codes(codes.row(m.idx(a)), codes.row(m.idx(b)))?;
            let ok = (s >= cfg.threshold) == label;
            correct += ok as usize;
            let e = res.by_relation.entry(relation).or_insert((0, 0));
            e.0 += ok as usize;
            e.1 += 1;
            res.scores.push(s);
            res.labels.push(label);
        }
        res.pairs = res.scores.len();
        res.accuracy = correct as f64 / res.pairs as f64;
        res.auc = roc(&res.scores, &res.labels)?.auc;
        Ok(res)
    };

    let workers = worker_count().min(FOLD_COUNT);
    let mut results: Vec<Option<Result<FoldResult>>> = (0..FOLD_COUNT).map(|_| None).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let run_fold = &run_fold;
                scope.spawn(move || (w..FOLD_COUNT).step_by(workers).map(|f| (f, run_fold(f))).collect::<Vec<_>>())
            })
            .collect();
        for h in handles {
            for (f, r) in h.join().expect("fold worker panicked") {
                results[f] = Some(r);
            }
        }
    });
    let results: Vec<FoldResult> = results.into_iter().map(|r| r.expect("every fold ran")).collect::<Result<_>>().runtime()?;

    let mut art = Artifacts::default();
    let mean = |xs: &mut dyn Iterator<Item = f64>| {
        let v: Vec<f64> = xs.collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let mut folds_csv = String::from("fold,pairs,accuracy,auc\n");
    for (f, r) in results.iter().enumerate() {
        let _ = writeln!(folds_csv, "{},{},{:.6},{:.6}", f + 1, r.pairs, r.accuracy, r.auc);
    }
    let mean_acc = mean(&mut results.iter().map(|r| r.accuracy));
    let mean_auc = mean(&mut results.iter().map(|r| r.auc));
    let _ = writeln!(folds_csv, "mean,{},{mean_acc:.6},{mean_auc:.6}", results.iter().map(|r| r.pairs).sum::<usize>());
    art.add(cfg.output_dir.join("eval_folds.csv"), folds_csv.into_bytes());

    let mut rel_csv = String::from("relation");
    for f in 1..=FOLD_COUNT {
        let _ = write!(rel_csv, ",fold{f}");
    }
    rel_csv.push_str(",mean\n");
    let mut report = String::from("eval-kin: accuracy (%) by relation\nrelation");
    for f in 1..=FOLD_COUNT {
        let _ = write!(report, "  fold{f}");
    }
    report.push_str("   mean\n");
    for rel in Relation::ALL {
        let cells: Vec<Option<f64>> = results
            .iter()
            .map(|r| r.by_relation.get(&rel).map(|&(c, t)| 100.0 * c as f64 / t as f64))
            .collect();
        if cells.iter().all(Option::is_none) {
            continue;
        }
        let present: Vec<f64> = cells.iter().flatten().copied().collect();
        let m = present.iter().sum::<f64>() / present.len() as f64;
        let _ = write!(rel_csv, "{rel}");
        let _ = write!(report, "{:<8}", rel.to_string());
        for c in &cells {
            match c {
                Some(v) => {
                    let _ = write!(rel_csv, ",{v:.2}");
                    let _ = write!(report, " {v:>6.2}");
                }
                None => {
                    rel_csv.push(',');
                    let _ = write!(report, " {:>6}", "-");
                }
            }
        }
        let _ = writeln!(rel_csv, ",{m:.2}");
        let _ = writeln!(report, " {m:>6.2}");
    }
    art.add(cfg.output_dir.join("eval_relations.csv"), rel_csv.into_bytes());

    let scores: Vec<f64> = results.iter().flat_map(|r| r.scores.iter().copied()).collect();
    let labels: Vec<bool> = results.iter().flat_map(|r| r.labels.iter().copied()).collect();
    let pooled = roc(&scores, &labels).runtime()?;
    art.add(cfg.output_dir.join("eval_roc.csv"), roc_csv(&pooled).into_bytes());
    let _ = writeln!(report, "mean accuracy {:.2}%  mean AUC {mean_auc:.4}  pooled AUC {:.4}", 100.0 * mean_acc, pooled.auc);
    art.report = report;
    Ok(art)
}

fn roc_csv(curve: &RocCurve) -> String {
    let mut s = String::from("fpr,tpr,threshold\n");
    for (&(f, t), th) in curve.points.iter().zip(&curve.thresholds) {
        let _ = writeln!(s, "{f:.10},{t:.10},{th:.10}");
    }
    s
}

fn cmd_encode(cfg: &RunConfig) -> Outcome<Artifacts> {
    // labels are written relative to the list so outputs do not depend on
    // where the run directory lives
    let (paths, base) = match &cfg.encode_list {
        Some(list) => (read_list(list)?, parent_of(list)),
        None => (LoadedManifest::load(cfg)?.paths, parent_of(&cfg.manifest)),
    };
    let encoder = if cfg.model_path().exists() {
        match load_model(&cfg.model_path()).invalid()?.payload {
            ModelPayload::Kvrl(m) => m.encoder,
            _ => return Err(Error::Config("model file does not hold a kin model".into())).invalid(),
        }
    } else if cfg.encoder_path().exists() {
        obtain_encoder(cfg, &[])?.0
    } else {
        return Err(Error::Config("no trained model or encoder; run pretrain or train-kin first".into())).invalid();
    };
    let images = paths.iter().map(|p| region_set(cfg, p)).collect::<Result<Vec<_>>>().invalid()?;
    let sets: Vec<&RegionSet> = images.iter().collect();
    let codes = encoder.encode_batch(&sets).runtime()?;
    let mut csv = String::from("image");
    for j in 0..codes.cols() {
        let _ = write!(csv, ",e{j}");
    }
    csv.push('\n');
    for (i, p) in paths.iter().enumerate() {
        let label = p.strip_prefix(&base).unwrap_or(p);
        csv.push_str(&label.display().to_string().replace(',', "_"));
        for v in codes.row(i) {
            let _ = write!(csv, ",{v:e}");
        }
        csv.push('\n');
    }
    let mut art = Artifacts::default();
    art.add(cfg.output_dir.join("encodings.csv"), csv.into_bytes());
    let _ = writeln!(art.report, "encode: {} images × {} features", codes.rows(), codes.cols());
    Ok(art)
}

fn cmd_fuse(cfg: &RunConfig) -> Outcome<Artifacts> {
    let text = fs::read_to_string(&cfg.scores)
        .map_err(|e| Error::Config(format!("cannot read scores {}: {e}", cfg.scores.display())))
        .invalid()?;
    let records = parse_scores(&text).invalid()?;
    let mut order: Vec<usize> = (0..records.len()).collect();
    RngStream::new(cfg.seed).derive(0xf5).shuffle(&mut order);
    let n_test = ((records.len() as f64) * cfg.fusion.test_fraction).round() as usize;
    if n_test == 0 || n_test == records.len() {
        return Err(Error::InsufficientData("too few records to split into train and test".into())).invalid();
    }
    let test: Vec<_> = order[..n_test].iter().map(|&i| records[i].clone()).collect();
    let train: Vec<_> = order[n_test..].iter().map(|&i| records[i].clone()).collect();
    let plr = PlrModels::fit(&train, cfg.fusion.components, cfg.seed).runtime()?;
    let svm = svm_fit(&train, &cfg.fusion.svm).runtime()?;
    let labels: Vec<bool> = test.iter().map(|r| r.genuine).collect();
    let face: Vec<f64> = test.iter().map(|r| r.s).collect();
    let mut plr_scores = Vec::with_capacity(test.len());
    let mut floor_hits = 0;
    for r in &test {
        let p = plr_score(r, &plr).runtime()?;
        floor_hits += p.floor_hits;
        plr_scores.push(p.log_plr);
    }
    let svm_scores: Vec<f64> = test.iter().map(|r| svm.decision_value(r)).collect();

    let mut art = Artifacts::default();
    let mut summary = String::from("method,auc,tpr_at_fpr_0.001,tpr_at_fpr_0.01,tpr_at_fpr_0.1\n");
    let mut report = format!("fuse: {} train / {} test records\n", train.len(), test.len());
    for (name, scores) in [("face", &face), ("plr", &plr_scores), ("svm", &svm_scores)] {
        let curve = roc(scores, &labels).runtime()?;
        art.add(cfg.output_dir.join(format!("fuse_roc_{name}.csv")), roc_csv(&curve).into_bytes());
        let t: Vec<f64> = curve.tpr_at_fpr.iter().map(|&(_, t)| t).collect();
        let _ = writeln!(summary, "{name},{:.6},{:.6},{:.6},{:.6}", curve.auc, t[0], t[1], t[2]);
        let _ = writeln!(report, "{name:<5} AUC {:.4}  TPR@FPR=0.01 {:.4}", curve.auc, t[1]);
    }
    if floor_hits > 0 {
        let _ = writeln!(report, "density floor reached {floor_hits} times");
    }
    if svm.degenerate {
        report.push_str("svm: features carry no variation; decisions default to the majority class\n");
    }
    art.add(cfg.output_dir.join("fuse_summary.csv"), summary.into_bytes());
    let doc = ModelDocument::new(ModelPayload::Fusion(FusionModels { plr: Some(plr), svm: Some(svm) }), None);
    art.add(cfg.output_dir.join("fusion_models.json"), doc.to_json().runtime()?.into_bytes());
    art.report = report;
    Ok(art)
}

/// Reads `[group,]stimulus,respond_kin,respond_nonkin` rows, stimulus being
/// `kin` or `nonkin`.
fn parse_counts(text: &str) -> Result<Vec<(String, ConfusionCounts)>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let grouped = match header.iter().map(String::as_str).collect::<Vec<_>>().as_slice() {
        ["stimulus", "respond_kin", "respond_nonkin"] => false,
        ["group", "stimulus", "respond_kin", "respond_nonkin"] => true,
        _ => {
            return Err(Error::Parse {
                offset: 0,
                message: "counts header must be [group,]stimulus,respond_kin,respond_nonkin".into(),
            })
        }
    };
    let mut groups: Vec<(String, [[Option<u64>; 2]; 2])> = Vec::new();
    for record in reader.records() {
        let record = record?;
        let offset = record.position().map_or(0, |p| p.byte() as usize);
        let bad = |m: String| Error::Parse { offset, message: m };
        let f: Vec<&str> = record.iter().collect();
        let (group, rest) = if grouped { (f[0].to_string(), &f[1..]) } else { ("all".to_string(), &f[..]) };
        let row = match rest[0].to_ascii_lowercase().as_str() {
            "kin" => 0,
            "nonkin" | "non-kin" => 1,
            other => return Err(bad(format!("stimulus {other:?} is neither kin nor nonkin"))),
        };
        let parse = |s: &str| s.parse::<u64>().map_err(|_| bad(format!("count {s:?} is not a nonnegative integer")));
        let (a, b) = (parse(rest[1])?, parse(rest[2])?);
        let slot = match groups.iter().position(|(g, _)| *g == group) {
            Some(i) => i,
            None => {
                groups.push((group.clone(), [[None; 2]; 2]));
                groups.len() - 1
            }
        };
        if groups[slot].1[row][0].is_some() {
            return Err(bad(format!("duplicate {} row for group {group}", rest[0])));
        }
        groups[slot].1[row] = [Some(a), Some(b)];
    }
    if groups.is_empty() {
        return Err(Error::EmptyInput("counts file has no rows".into()));
    }
    groups
        .into_iter()
        .map(|(g, c)| {
            let get = |r: usize, k: usize| {
                c[r][k].ok_or_else(|| Error::Parse { offset: 0, message: format!("group {g} lacks a row") })
            };
            let counts = ConfusionCounts::new([[get(0, 0)?, get(0, 1)?], [get(1, 0)?, get(1, 1)?]])?;
            Ok((g, counts))
        })
        .collect()
}

fn cmd_metrics(cfg: &RunConfig) -> Outcome<Artifacts> {
    let text = fs::read_to_string(&cfg.counts)
        .map_err(|e| Error::Config(format!("cannot read counts {}: {e}", cfg.counts.display())))
        .invalid()?;
    let groups = parse_counts(&text).invalid()?;
    let mut csv = String::from("group,trials,accuracy,hit_rate,false_alarm_rate,dprime,h_s_bits,h_s_given_r_bits,i_s_r_bits\n");
    let mut report = String::new();
    for (g, c) in &groups {
        let d = dprime_from_counts(c).invalid()?;
        let (hs, eq, info) = (stimulus_entropy(c), equivocation(c), information_entropy(c));
        let _ = writeln!(
            csv,
            "{g},{},{:.6},{:.6},{:.6},{d:.6},{hs:.6},{eq:.6},{info:.6}",
            c.total(),
            c.accuracy(),
            c.hit_rate(),
            c.false_alarm_rate()
        );
        let _ = writeln!(report, "[{g}] trials={} accuracy={:.6}", c.total(), c.accuracy());
        let _ = writeln!(report, "d'={d:.6}");
        let _ = writeln!(report, "H(S)={hs:.6} bits");
        let _ = writeln!(report, "H(S|r)={eq:.6} bits");
        let _ = writeln!(report, "I(S|r)={info:.6} bits");
    }
    let mut art = Artifacts::default();
    if groups.len() > 1 {
        let mut z = String::from("group_a,group_b,z,significant_95\n");
        for w in groups.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            let t = ztest_proportions(a.1.accuracy(), a.1.total(), b.1.accuracy(), b.1.total()).invalid()?;
            let _ = writeln!(z, "{},{},{:.6},{}", a.0, b.0, t.z, t.significant_95);
            let _ = writeln!(report, "z({} vs {})={:.6} significant={}", a.0, b.0, t.z, if t.significant_95 { "yes" } else { "no" });
        }
        art.add(cfg.output_dir.join("metrics_ztest.csv"), z.into_bytes());
    }
    art.add(cfg.output_dir.join("metrics.csv"), csv.into_bytes());
    art.report = report;
    Ok(art)
}
