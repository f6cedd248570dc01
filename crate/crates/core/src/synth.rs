//! Synthetic data: kin families rendered from smooth basis images, and the
//! 8×8 bars-and-stripes set.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::evaluation::{ImageRef, KinPair, Relation};
use crate::numeric::{Mat, RngStream};

pub const SYNTH_SIDE: usize = 64;
pub const BASIS_FREQS: usize = 4;
/// Pixel contrast per unit of basis weight.
const RENDER_SCALE: f64 = 0.08;

/// One rendered member of a synthetic family.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthImage {
    pub subject: String,
    pub family: usize,
    /// 8-bit pixels, row-major 64×64.
    pub pixels: Vec<u8>,
}

impl SynthImage {
    pub fn file_name(&self) -> String {
        format!("{}.pgm", self.subject)
    }

    pub fn to_mat(&self) -> Mat {
        Mat::new(SYNTH_SIDE, SYNTH_SIDE, self.pixels.iter().map(|&p| p as f64 / 255.0).collect())
            .expect("synthetic image has a fixed size")
    }

    pub fn image_ref(&self) -> ImageRef {
        ImageRef { path: self.file_name(), subject: self.subject.clone() }
    }
}

/// One manifest row.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub a: usize,
    pub b: usize,
    pub kin: bool,
    pub relation: Relation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub images: Vec<SynthImage>,
    /// Indices into `images`.
    pub rows: Vec<ManifestRow>,
}

impl SynthCorpus {
    pub fn kin_pairs(&self) -> Vec<KinPair> {
        self.rows
            .iter()
            .filter(|r| r.kin)
            .map(|r| KinPair { a: self.images[r.a].image_ref(), b: self.images[r.b].image_ref(), relation: r.relation })
            .collect()
    }
}

/// Smooth cosine basis images with frequencies `1..=4` on each axis.
pub fn basis_images() -> Vec<Mat> {
    let n = SYNTH_SIDE as f64;
    let mut out = Vec::with_capacity(BASIS_FREQS * BASIS_FREQS);
    for u in 1..=BASIS_FREQS {
        for v in 1..=BASIS_FREQS {
            out.push(Mat::from_fn(SYNTH_SIDE, SYNTH_SIDE, |r, c| {
                (PI * u as f64 * (r as f64 + 0.5) / n).cos() * (PI * v as f64 * (c as f64 + 0.5) / n).cos()
            }));
        }
    }
    out
}

fn render(basis: &[Mat], weights: &[f64]) -> Vec<u8> {
    (0..SYNTH_SIDE * SYNTH_SIDE)
        .map(|i| {
            let x = 0.5 + RENDER_SCALE * basis.iter().zip(weights).map(|(b, w)| w * b.data()[i]).sum::<f64>();
            (x.clamp(0.0, 1.0) * 255.0).round() as u8
        })
        .collect()
}

/// Families of images whose basis weights are
/// `separability · family_latent + (1 − separability) · individual_noise`.
///
/// Every within-family pair is a kin row; the same number of non-kin rows
/// pair members of two different random families. Relation tags cycle
/// through the seven relations, and each non-kin row carries the tag of the
/// kin row it mirrors.
pub fn synth_kin(seed: u64, families: usize, members_per_family: usize, separability: f64) -> Result<SynthCorpus> {
    synth_kin_offset(seed, families, members_per_family, separability, 0)
}

/// [`synth_kin`] with family numbering starting at `first_family`, so
/// corpora drawn for different purposes have disjoint subject ids.
pub fn synth_kin_offset(
    seed: u64,
    families: usize,
    members_per_family: usize,
    separability: f64,
    first_family: usize,
) -> Result<SynthCorpus> {
    if families == 0 || members_per_family == 0 {
        return Err(Error::Config("families and members_per_family must be ≥ 1".into()));
    }
    if !(0.0..=1.0).contains(&separability) {
        return Err(Error::Config(format!("separability {separability} outside [0, 1]")));
    }
    let basis = basis_images();
    let root = RngStream::new(seed);
    let mut images = Vec::with_capacity(families * members_per_family);
    for f in 0..families {
        let fam = first_family + f;
        let mut frng = root.derive(fam as u64);
        let latent: Vec<f64> = (0..basis.len()).map(|_| frng.gaussian(0.0, 1.0)).collect();
        for m in 0..members_per_family {
            let noise: Vec<f64> = (0..basis.len()).map(|_| frng.gaussian(0.0, 1.0)).collect();
            let w: Vec<f64> =
                latent.iter().zip(&noise).map(|(l, e)| separability * l + (1.0 - separability) * e).collect();
            images.push(SynthImage { subject: format!("f{fam:04}_m{m:02}"), family: fam, pixels: render(&basis, &w) });
        }
    }
    let mut rows = Vec::new();
    let mut tag = 0;
    for f in 0..families {
        for i in 0..members_per_family {
            for j in i + 1..members_per_family {
                let base = f * members_per_family;
                rows.push(ManifestRow { a: base + i, b: base + j, kin: true, relation: Relation::ALL[tag % 7] });
                tag += 1;
            }
        }
    }
    let mut rng = root.derive(u64::MAX);
    let kin_rows = rows.len();
    if families > 1 {
        for k in 0..kin_rows {
            let fa = rng.below(families);
            let fb = (fa + 1 + rng.below(families - 1)) % families;
            let a = fa * members_per_family + rng.below(members_per_family);
            let b = fb * members_per_family + rng.below(members_per_family);
            rows.push(ManifestRow { a, b, kin: false, relation: rows[k].relation });
        }
    }
    Ok(SynthCorpus { images, rows })
}

/// All `2^side + 2^side` bars-and-stripes patterns minus the duplicated
/// all-off/all-on images, flattened row-major.
pub fn bars_and_stripes(side: usize) -> Result<Mat> {
    if side == 0 || side > 16 {
        return Err(Error::Config(format!("bars-and-stripes side {side} outside 1..=16")));
    }
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for code in 0..1usize << side {
        let on = |i: usize| ((code >> i) & 1) as f64;
        rows.push((0..side * side).map(|p| on(p / side)).collect());
    }
    for code in 1..(1usize << side) - 1 {
        let on = |i: usize| ((code >> i) & 1) as f64;
        rows.push((0..side * side).map(|p| on(p % side)).collect());
    }
    Mat::from_rows(&rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist(a: &SynthImage, b: &SynthImage) -> f64 {
        a.pixels.iter().zip(&b.pixels).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum::<f64>().sqrt()
    }

    #[test]
    fn full_separability_gives_identical_families() {
        let c = synth_kin(1, 5, 3, 1.0).unwrap();
        let max_within = c.rows.iter().filter(|r| r.kin).map(|r| dist(&c.images[r.a], &c.images[r.b])).fold(0.0, f64::max);
        assert_eq!(max_within, 0.0);
        for (i, a) in c.images.iter().enumerate() {
            for b in &c.images[i + 1..] {
                if a.family != b.family {
                    assert!(dist(a, b) > max_within);
                }
            }
        }
    }

    #[test]
    fn manifest_shape() {
        let c = synth_kin(2, 6, 3, 0.5).unwrap();
        let kin = c.rows.iter().filter(|r| r.kin).count();
        assert_eq!(kin, 18);
        assert_eq!(c.rows.len(), 36);
        for r in &c.rows {
            assert_eq!(r.kin, c.images[r.a].family == c.images[r.b].family);
        }
        assert_eq!(c.kin_pairs()[0].relation, Relation::FS);
        assert_eq!(c.kin_pairs()[7].relation, Relation::FS);
    }

    #[test]
    fn seed_reproducible() {
        assert_eq!(synth_kin(9, 4, 2, 0.7).unwrap(), synth_kin(9, 4, 2, 0.7).unwrap());
        assert_ne!(synth_kin(9, 4, 2, 0.7).unwrap().images, synth_kin(10, 4, 2, 0.7).unwrap().images);
        assert!(synth_kin(0, 0, 2, 0.5).is_err());
        assert!(synth_kin(0, 2, 2, 1.5).is_err());
    }

    #[test]
    fn bars_and_stripes_count() {
        let bs = bars_and_stripes(4).unwrap();
        assert_eq!(bs.shape(), (30, 16));
        let mut uniq: Vec<&[f64]> = (0..bs.rows()).map(|r| bs.row(r)).collect();
        uniq.sort_by(|a, b| a.partial_cmp(b).unwrap());
        uniq.dedup();
        assert_eq!(uniq.len(), 30);
    }
}
