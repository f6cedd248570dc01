//! Perceptual-study metrics (d′, stimulus and transmitted information,
//! two-proportion z-test), ROC analysis and the five-fold pair protocol.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::numeric::RngStream;

/// 2×2 stimulus-by-response counts. Row/column 0 is "kin", 1 is "non-kin".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub counts: [[u64; 2]; 2],
}

impl ConfusionCounts {
    pub fn new(counts: [[u64; 2]; 2]) -> Result<Self> {
        let c = Self { counts };
        if c.total() == 0 {
            return Err(Error::InvalidSample("confusion matrix is empty".into()));
        }
        Ok(c)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    fn stimulus_total(&self, i: usize) -> u64 {
        self.counts[i][0] + self.counts[i][1]
    }

    /// Proportion of correct responses.
    pub fn accuracy(&self) -> f64 {
        (self.counts[0][0] + self.counts[1][1]) as f64 / self.total() as f64
    }

    /// P(respond kin | kin stimulus).
    pub fn hit_rate(&self) -> f64 {
        self.counts[0][0] as f64 / self.stimulus_total(0).max(1) as f64
    }

    /// P(respond kin | non-kin stimulus).
    pub fn false_alarm_rate(&self) -> f64 {
        self.counts[1][0] as f64 / self.stimulus_total(1).max(1) as f64
    }
}

fn probit(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// `z(hit) − z(fa)` with `z` the standard-normal quantile. Rates must lie
/// strictly inside `(0, 1)`; use [`dprime_from_counts`] when a rate can hit
/// 0 or 1.
pub fn dprime(hit_rate: f64, fa_rate: f64) -> Result<f64> {
    for (name, r) in [("hit", hit_rate), ("false-alarm", fa_rate)] {
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::InvalidRate(format!("{name} rate {r} outside [0, 1]")));
        }
        if r == 0.0 || r == 1.0 {
            return Err(Error::InvalidRate(format!(
                "{name} rate {r} is at the boundary; trial counts are needed for the 1/(2n) correction"
            )));
        }
    }
    Ok(probit(hit_rate) - probit(fa_rate))
}

/// d′ from pooled counts, clamping each rate to `[1/(2n), 1 − 1/(2n)]`
/// where `n` is the number of trials for that stimulus class.
pub fn dprime_from_counts(counts: &ConfusionCounts) -> Result<f64> {
    let clamp = |rate: f64, n: u64| -> Result<f64> {
        if n == 0 {
            return Err(Error::InvalidSample("a stimulus class has no trials".into()));
        }
        let lo = 1.0 / (2.0 * n as f64);
        Ok(rate.clamp(lo, 1.0 - lo))
    };
    let hit = clamp(counts.hit_rate(), counts.stimulus_total(0))?;
    let fa = clamp(counts.false_alarm_rate(), counts.stimulus_total(1))?;
    if counts.stimulus_total(0) == 1 || counts.stimulus_total(1) == 1 {
        // the clamp collapses to 0.5 for a single trial
        return Ok(probit(hit) - probit(fa));
    }
    dprime(hit, fa)
}

#[inline]
fn plogp(p: f64) -> f64 {
    if p > 0.0 {
        p * p.ln()
    } else {
        0.0
    }
}

/// `H(S) = −Σ p(Sᵢ) log p(Sᵢ)` in bits.
pub fn stimulus_entropy(counts: &ConfusionCounts) -> f64 {
    let n = counts.total() as f64;
    let h: f64 = (0..2).map(|i| -plogp(counts.stimulus_total(i) as f64 / n)).sum();
    h / std::f64::consts::LN_2
}

/// `H(S|r) = −Σᵢⱼ p(Sᵢ, rⱼ) log p(Sᵢ | rⱼ)` in bits.
pub fn equivocation(counts: &ConfusionCounts) -> f64 {
    let n = counts.total() as f64;
    let mut h = 0.0;
    for j in 0..2 {
        let col = (counts.counts[0][j] + counts.counts[1][j]) as f64;
        if col == 0.0 {
            continue;
        }
        for i in 0..2 {
            let c = counts.counts[i][j] as f64;
            if c > 0.0 {
                h -= (c / n) * (c / col).ln();
            }
        }
    }
    h / std::f64::consts::LN_2
}

/// `I(S|r) = H(S) − H(S|r)` in bits.
pub fn information_entropy(counts: &ConfusionCounts) -> f64 {
    stimulus_entropy(counts) - equivocation(counts)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZTest {
    pub z: f64,
    pub significant_95: bool,
}

/// Pooled two-proportion z statistic, significant when `|z| > 1.96`.
pub fn ztest_proportions(p1: f64, n1: u64, p2: f64, n2: u64) -> Result<ZTest> {
    if n1 == 0 || n2 == 0 {
        return Err(Error::InvalidSample("sample sizes must be ≥ 1".into()));
    }
    if !(0.0..=1.0).contains(&p1) || !(0.0..=1.0).contains(&p2) {
        return Err(Error::InvalidRate(format!("proportions {p1}, {p2} outside [0, 1]")));
    }
    let (n1f, n2f) = (n1 as f64, n2 as f64);
    let pooled = (p1 * n1f + p2 * n2f) / (n1f + n2f);
    let se = (pooled * (1.0 - pooled) * (1.0 / n1f + 1.0 / n2f)).sqrt();
    let z = if se > 0.0 { (p1 - p2) / se } else { 0.0 };
    Ok(ZTest { z, significant_95: z.abs() > 1.96 })
}

/// False-positive rates at which TPR is tabulated.
pub const REPORT_FPRS: [f64; 3] = [0.001, 0.01, 0.1];

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    /// `(fpr, tpr)` from `(0, 0)` to `(1, 1)`.
    pub points: Vec<(f64, f64)>,
    /// Threshold producing each point (`+∞` for the origin); a score `≥`
    /// the threshold is called positive.
    pub thresholds: Vec<f64>,
    pub auc: f64,
    /// `(fpr target, tpr)` for [`REPORT_FPRS`].
    pub tpr_at_fpr: Vec<(f64, f64)>,
}

impl RocCurve {
    /// Best TPR among operating points with FPR at or below `fpr`.
    pub fn tpr_at(&self, fpr: f64) -> f64 {
        self.points
            .iter()
            .filter(|(f, _)| *f <= fpr + 1e-12)
            .map(|&(_, t)| t)
            .fold(0.0, f64::max)
    }
}

/// Threshold sweep over unique scores with trapezoidal AUC (ties count
/// half, matching the Mann–Whitney statistic).
pub fn roc(scores: &[f64], labels: &[bool]) -> Result<RocCurve> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores vs {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidParameter("NaN score".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::DegenerateLabels("ROC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![(0.0, 0.0)];
    let mut thresholds = vec![f64::INFINITY];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let (fpr, tpr) = (fp as f64 / neg as f64, tp as f64 / pos as f64);
        let (pf, pt) = *points.last().unwrap();
        auc += (fpr - pf) * (tpr + pt) / 2.0;
        points.push((fpr, tpr));
        thresholds.push(s);
    }
    let mut curve = RocCurve { points, thresholds, auc, tpr_at_fpr: Vec::new() };
    curve.tpr_at_fpr = REPORT_FPRS.iter().map(|&f| (f, curve.tpr_at(f))).collect();
    Ok(curve)
}

/// The seven kin relations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Relation {
    FS,
    FD,
    MS,
    MD,
    BB,
    BS,
    SS,
}

impl Relation {
    pub const ALL: [Relation; 7] =
        [Relation::FS, Relation::FD, Relation::MS, Relation::MD, Relation::BB, Relation::BS, Relation::SS];
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for Relation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Relation::ALL
            .iter()
            .copied()
            .find(|r| r.to_string().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown relation {s:?}")))
    }
}

/// One image of one subject.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ImageRef {
    pub path: String,
    pub subject: String,
}

/// A positive (kin) pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KinPair {
    pub a: ImageRef,
    pub b: ImageRef,
    pub relation: Relation,
}

pub const FOLD_COUNT: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct FoldPlan {
    pub folds: Vec<Vec<KinPair>>,
}

impl FoldPlan {
    /// Pairs of every fold except `test`.
    pub fn training_pairs(&self, test: usize) -> Vec<KinPair> {
        self.folds
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != test)
            .flat_map(|(_, f)| f.iter().cloned())
            .collect()
    }

    /// Count of each relation in each fold.
    pub fn relation_counts(&self) -> Vec<BTreeMap<Relation, usize>> {
        self.folds
            .iter()
            .map(|f| {
                let mut m = BTreeMap::new();
                for p in f {
                    *m.entry(p.relation).or_insert(0) += 1;
                }
                m
            })
            .collect()
    }
}

/// Five folds with each relation spread as evenly as possible: relations
/// are shuffled independently and dealt round-robin, continuing from the
/// fold where the previous relation stopped so fold sizes also stay within
/// one of each other.
pub fn make_folds(pairs: &[KinPair], seed: u64) -> Result<FoldPlan> {
    if pairs.len() < FOLD_COUNT {
        return Err(Error::InsufficientPairs { needed: FOLD_COUNT, got: pairs.len() });
    }
    let mut rng = RngStream::new(seed);
    let mut by_relation: BTreeMap<Relation, Vec<&KinPair>> = BTreeMap::new();
    for p in pairs {
        by_relation.entry(p.relation).or_default().push(p);
    }
    let mut folds = vec![Vec::new(); FOLD_COUNT];
    let mut cursor = 0;
    for group in by_relation.values_mut() {
        rng.shuffle(group);
        for p in group.iter() {
            folds[cursor].push((*p).clone());
            cursor = (cursor + 1) % FOLD_COUNT;
        }
    }
    Ok(FoldPlan { folds })
}

/// Subject → family label, derived by linking subjects that appear together
/// in a kin pair.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FamilyMap {
    families: HashMap<String, String>,
}

impl FamilyMap {
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = &'a KinPair>) -> Self {
        let mut parent: HashMap<String, String> = HashMap::new();
        fn find(parent: &mut HashMap<String, String>, x: &str) -> String {
            let p = parent.entry(x.to_string()).or_insert_with(|| x.to_string()).clone();
            if p == x {
                return p;
            }
            let root = find(parent, &p);
            parent.insert(x.to_string(), root.clone());
            root
        }
        for pair in pairs {
            let ra = find(&mut parent, &pair.a.subject);
            let rb = find(&mut parent, &pair.b.subject);
            if ra != rb {
                // smaller label becomes the root so the result is order independent
                let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
                parent.insert(hi, lo);
            }
        }
        let subjects: Vec<String> = parent.keys().cloned().collect();
        let mut families = HashMap::new();
        for s in subjects {
            let root = find(&mut parent, &s);
            families.insert(s, root);
        }
        Self { families }
    }

    pub fn from_assignments(assignments: impl IntoIterator<Item = (String, String)>) -> Self {
        Self { families: assignments.into_iter().collect() }
    }

    /// Family of a subject; unknown subjects form their own family.
    pub fn family<'a>(&'a self, subject: &'a str) -> &'a str {
        self.families.get(subject).map_or(subject, String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NegativePair {
    pub a: ImageRef,
    pub b: ImageRef,
}

/// Random non-kin pairs, one per positive pair, with every image used at
/// most once. Families are derived from the pairs themselves.
pub fn gen_negatives(pairs: &[KinPair], seed: u64) -> Result<Vec<NegativePair>> {
    gen_negatives_with_families(pairs, &FamilyMap::from_pairs(pairs), seed)
}

/// [`gen_negatives`] with an explicit family assignment.
///
/// The unique images are grouped by family, families and members are
/// shuffled and laid out contiguously, and position `i` is paired with
/// `i + P`. No family larger than `P` exists, so no pair shares a family.
pub fn gen_negatives_with_families(pairs: &[KinPair], families: &FamilyMap, seed: u64) -> Result<Vec<NegativePair>> {
    let wanted = pairs.len();
    let mut seen = std::collections::HashSet::new();
    let mut images: Vec<ImageRef> = Vec::new();
    for p in pairs {
        for img in [&p.a, &p.b] {
            if seen.insert(img.clone()) {
                images.push(img.clone());
            }
        }
    }
    let mut groups: BTreeMap<&str, Vec<ImageRef>> = BTreeMap::new();
    for img in &images {
        groups.entry(families.family(&img.subject)).or_default().push(img.clone());
    }
    if groups.len() < 2 {
        return Err(Error::Matching(format!("need at least 2 families, found {}", groups.len())));
    }
    if images.len() < 2 * wanted {
        return Err(Error::Matching(format!(
            "{} distinct images cannot form {wanted} single-use negative pairs",
            images.len()
        )));
    }
    let mut rng = RngStream::new(seed);
    let mut groups: Vec<Vec<ImageRef>> = groups.into_values().collect();
    for g in groups.iter_mut() {
        rng.shuffle(g);
    }
    rng.shuffle(&mut groups);
    let mut layout: Vec<ImageRef> = groups.into_iter().flatten().collect();
    // drop surplus images (only possible if some pair repeats images within itself)
    layout.truncate(2 * wanted);
    let mut sizes: HashMap<&str, usize> = HashMap::new();
    for img in &layout {
        *sizes.entry(families.family(&img.subject)).or_insert(0) += 1;
    }
    if let Some((fam, &size)) = sizes.iter().max_by_key(|(_, &s)| s) {
        if size > wanted {
            return Err(Error::Matching(format!(
                "family {fam} holds {size} of {} images; at most {wanted} allowed",
                layout.len()
            )));
        }
    }
    let mut out: Vec<NegativePair> = (0..wanted)
        .map(|i| {
            let (a, b) = (layout[i].clone(), layout[i + wanted].clone());
            if rng.bernoulli(0.5) {
                NegativePair { a, b }
            } else {
                NegativePair { a: b, b: a }
            }
        })
        .collect();
    rng.shuffle(&mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(c: [[u64; 2]; 2]) -> ConfusionCounts {
        ConfusionCounts::new(c).unwrap()
    }

    #[test]
    fn dprime_cases() {
        assert_eq!(dprime(0.3, 0.3).unwrap(), 0.0);
        let a = dprime(0.8, 0.35).unwrap();
        assert!((a + dprime(0.35, 0.8).unwrap()).abs() < 1e-15);
        assert!(matches!(dprime(1.2, 0.5), Err(Error::InvalidRate(_))));
        assert!(matches!(dprime(1.0, 0.5), Err(Error::InvalidRate(_))));
        // 1/(2n) correction keeps perfect responders finite
        let d = dprime_from_counts(&counts([[10, 0], [0, 10]])).unwrap();
        let z = Normal::standard().inverse_cdf(0.95);
        assert!((d - 2.0 * z).abs() < 1e-12);
    }

    #[test]
    fn entropy_cases() {
        assert!((stimulus_entropy(&counts([[10, 10], [5, 15]])) - 1.0).abs() < 1e-15);
        assert_eq!(stimulus_entropy(&counts([[10, 3], [0, 0]])), 0.0);
        let c = counts([[30, 10], [20, 40]]);
        assert!((stimulus_entropy(&c) - 0.970951).abs() < 1e-6);
        let diag = counts([[12, 0], [0, 7]]);
        assert!((information_entropy(&diag) - stimulus_entropy(&diag)).abs() < 1e-15);
        // product counts: rows proportional
        let indep = counts([[20, 60], [5, 15]]);
        assert!(information_entropy(&indep).abs() < 1e-12);
    }

    #[test]
    fn information_matches_term_by_term_sum() {
        // I = Σ p(s,r) log[p(s,r) / (p(s)p(r))] / log 2
        let c = counts([[30, 10], [20, 40]]);
        let n = 100.0;
        let ps = [0.4, 0.6];
        let pr = [0.5, 0.5];
        let mut oracle = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                let p = c.counts[i][j] as f64 / n;
                oracle += p * (p / (ps[i] * pr[j])).ln();
            }
        }
        oracle /= std::f64::consts::LN_2;
        assert!((information_entropy(&c) - oracle).abs() < 1e-12);
    }

    #[test]
    fn ztest_cases() {
        let t = ztest_proportions(0.6, 50, 0.6, 80).unwrap();
        assert_eq!(t.z, 0.0);
        assert!(!t.significant_95);
        let t = ztest_proportions(0.9, 1000, 0.5, 1000).unwrap();
        assert!(t.significant_95);
        // pooled p = 0.7, se = sqrt(0.21 · 0.002)
        assert!((t.z - 0.4 / (0.21f64 * 0.002).sqrt()).abs() < 1e-9);
        let s = ztest_proportions(0.5, 1000, 0.9, 1000).unwrap();
        assert_eq!(s.z, -t.z);
        assert!(matches!(ztest_proportions(0.5, 0, 0.5, 3), Err(Error::InvalidSample(_))));
    }

    #[test]
    fn roc_cases() {
        let r = roc(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]).unwrap();
        assert_eq!(r.auc, 1.0);
        assert_eq!(r.tpr_at(0.0), 1.0);
        assert!(matches!(roc(&[0.1, 0.2], &[true, true]), Err(Error::DegenerateLabels(_))));
        let tied = roc(&[0.5, 0.5], &[true, false]).unwrap();
        assert_eq!(tied.auc, 0.5);
        assert_eq!(*tied.points.last().unwrap(), (1.0, 1.0));
    }

    fn pair(a: &str, b: &str, rel: Relation) -> KinPair {
        KinPair {
            a: ImageRef { path: format!("{a}.pgm"), subject: a.into() },
            b: ImageRef { path: format!("{b}.pgm"), subject: b.into() },
            relation: rel,
        }
    }

    #[test]
    fn folds_exact_divisibility() {
        let mut pairs = Vec::new();
        for i in 0..10 {
            pairs.push(pair(&format!("f{i}"), &format!("s{i}"), Relation::FS));
            pairs.push(pair(&format!("m{i}"), &format!("d{i}"), Relation::MD));
        }
        let plan = make_folds(&pairs, 3).unwrap();
        for c in plan.relation_counts() {
            assert_eq!(c[&Relation::FS], 2);
            assert_eq!(c[&Relation::MD], 2);
        }
    }

    #[test]
    fn folds_plus_minus_one() {
        let pairs: Vec<_> = (0..7).map(|i| pair(&format!("a{i}"), &format!("b{i}"), Relation::BB)).collect();
        let plan = make_folds(&pairs, 9).unwrap();
        let mut sizes: Vec<usize> = plan.folds.iter().map(Vec::len).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![1, 1, 1, 2, 2]);
        assert!(matches!(make_folds(&pairs[..4], 0), Err(Error::InsufficientPairs { needed: 5, got: 4 })));
    }

    #[test]
    fn negatives_four_families() {
        let pairs = vec![pair("A", "B", Relation::FS), pair("C", "D", Relation::MD)];
        let fam = FamilyMap::from_assignments(
            ["A", "B", "C", "D"].iter().map(|s| (s.to_string(), format!("fam-{s}"))),
        );
        let neg = gen_negatives_with_families(&pairs, &fam, 5).unwrap();
        assert_eq!(neg.len(), 2);
        let mut used: Vec<&str> = neg.iter().flat_map(|n| [n.a.subject.as_str(), n.b.subject.as_str()]).collect();
        used.sort_unstable();
        assert_eq!(used, vec!["A", "B", "C", "D"]);
    }

    #[test]
    fn negatives_never_within_family() {
        let pairs: Vec<_> = (0..6).map(|i| pair(&format!("p{i}"), &format!("c{i}"), Relation::FD)).collect();
        for seed in 0..50 {
            let neg = gen_negatives(&pairs, seed).unwrap();
            for n in &neg {
                assert_ne!(n.a.subject[1..], n.b.subject[1..], "kin pair emitted as negative");
            }
        }
        // one family only
        let one = vec![pair("x", "y", Relation::BB)];
        assert!(matches!(gen_negatives(&one, 0), Err(Error::Matching(_))));
    }

    #[test]
    fn shared_images_cannot_be_matched() {
        // parent with two children: 3 images for 2 pairs
        let pairs = vec![pair("P", "C1", Relation::FS), pair("P", "C2", Relation::FS), pair("Q", "R", Relation::BB)];
        assert!(matches!(gen_negatives(&pairs, 1), Err(Error::Matching(_))));
    }

    #[test]
    fn family_map_links_transitively() {
        let pairs = vec![pair("a", "b", Relation::BB), pair("b", "c", Relation::BS), pair("x", "y", Relation::SS)];
        let fam = FamilyMap::from_pairs(&pairs);
        assert_eq!(fam.family("a"), fam.family("c"));
        assert_ne!(fam.family("a"), fam.family("x"));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn information_bounded_by_stimulus_entropy(a in 0u64..200, b in 0u64..200, c in 0u64..200, d in 1u64..200) {
                let m = counts([[a, b], [c, d]]);
                let i = information_entropy(&m);
                prop_assert!(i >= -1e-12);
                prop_assert!(i <= stimulus_entropy(&m) + 1e-12);
            }
        }
    }
}
