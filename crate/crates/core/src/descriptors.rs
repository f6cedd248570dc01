//! Baseline face matchers: uniform LBP(8,1) and HOG descriptors with
//! similarity scores in `[0, 1]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Mat;

pub const CELL: usize = 8;
pub const LBP_BINS: usize = 59;
pub const HOG_BINS: usize = 9;
const MIN_SIDE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DescriptorKind {
    Lbp,
    Hog,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptorVec {
    pub kind: DescriptorKind,
    pub values: Vec<f64>,
    /// Cell grid for LBP, block grid for HOG.
    pub cell_layout: (usize, usize),
}

fn check_size(image: &Mat) -> Result<()> {
    let (r, c) = image.shape();
    if r < MIN_SIDE || c < MIN_SIDE {
        return Err(Error::Shape(format!("descriptor needs at least {MIN_SIDE}×{MIN_SIDE}, got {r}×{c}")));
    }
    if !image.is_finite() {
        return Err(Error::InvalidParameter("image contains non-finite pixels".into()));
    }
    Ok(())
}

#[inline]
fn at_clamped(image: &Mat, r: isize, c: isize) -> f64 {
    let r = r.clamp(0, image.rows() as isize - 1) as usize;
    let c = c.clamp(0, image.cols() as isize - 1) as usize;
    image.get(r, c)
}

/// Neighbour offsets, clockwise from the top-left.
const RING: [(isize, isize); 8] = [(-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1)];

fn transitions(code: u8) -> u32 {
    (code ^ code.rotate_right(1)).count_ones()
}

/// 256-entry table from 8-bit code to bin: the 58 uniform codes in
/// ascending order, everything else in bin 58.
fn uniform_table() -> [u8; 256] {
    let mut table = [58u8; 256];
    let mut next = 0u8;
    for code in 0..=255u8 {
        if transitions(code) <= 2 {
            table[code as usize] = next;
            next += 1;
        }
    }
    table
}

/// Uniform LBP(8,1) histograms over non-overlapping 8×8 cells, concatenated
/// row-major. Borders replicate edge pixels; a neighbour sets its bit only
/// when strictly brighter than the centre.
pub fn lbp_descriptor(image: &Mat) -> Result<DescriptorVec> {
    check_size(image)?;
    let table = uniform_table();
    let (gr, gc) = (image.rows() / CELL, image.cols() / CELL);
    let mut values = vec![0.0; gr * gc * LBP_BINS];
    for r in 0..gr * CELL {
        for c in 0..gc * CELL {
            let centre = image.get(r, c);
            let mut code = 0u8;
            for (bit, (dr, dc)) in RING.iter().enumerate() {
                if at_clamped(image, r as isize + dr, c as isize + dc) > centre {
                    code |= 1 << bit;
                }
            }
            let cell = (r / CELL) * gc + c / CELL;
            values[cell * LBP_BINS + table[code as usize] as usize] += 1.0;
        }
    }
    Ok(DescriptorVec { kind: DescriptorKind::Lbp, values, cell_layout: (gr, gc) })
}

/// 9-bin unsigned HOG on 8×8 cells with 2×2-cell blocks at a one-cell
/// stride, each block L2-normalized. Gradients are central differences with
/// replicated borders; each pixel votes its magnitude into one bin.
pub fn hog_descriptor(image: &Mat) -> Result<DescriptorVec> {
    check_size(image)?;
    let (gr, gc) = (image.rows() / CELL, image.cols() / CELL);
    let mut cells = vec![0.0; gr * gc * HOG_BINS];
    for r in 0..gr * CELL {
        for c in 0..gc * CELL {
            let (ri, ci) = (r as isize, c as isize);
            let gx = at_clamped(image, ri, ci + 1) - at_clamped(image, ri, ci - 1);
            let gy = at_clamped(image, ri + 1, ci) - at_clamped(image, ri - 1, ci);
            let mag = gx.hypot(gy);
            if mag == 0.0 {
                continue;
            }
            let mut angle = gy.atan2(gx).to_degrees();
            if angle < 0.0 {
                angle += 180.0;
            }
            if angle >= 180.0 {
                angle -= 180.0;
            }
            let bin = ((angle / (180.0 / HOG_BINS as f64)) as usize).min(HOG_BINS - 1);
            cells[((r / CELL) * gc + c / CELL) * HOG_BINS + bin] += mag;
        }
    }
    let (br, bc) = (gr - 1, gc - 1);
    let mut values = Vec::with_capacity(br * bc * 4 * HOG_BINS);
    for r in 0..br {
        for c in 0..bc {
            let start = values.len();
            for (dr, dc) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                let cell = (r + dr) * gc + c + dc;
                values.extend_from_slice(&cells[cell * HOG_BINS..(cell + 1) * HOG_BINS]);
            }
            let norm = values[start..].iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                values[start..].iter_mut().for_each(|v| *v /= norm);
            }
        }
    }
    Ok(DescriptorVec { kind: DescriptorKind::Hog, values, cell_layout: (br, bc) })
}

/// Chi-squared distance between two histograms, each normalized to unit
/// mass first. Ranges over `[0, 2]`.
pub fn chi_squared(a: &[f64], b: &[f64]) -> f64 {
    let (sa, sb) = (a.iter().sum::<f64>(), b.iter().sum::<f64>());
    let na = |x: f64| if sa > 0.0 { x / sa } else { 0.0 };
    let nb = |x: f64| if sb > 0.0 { x / sb } else { 0.0 };
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let (x, y) = (na(x), nb(y));
            if x + y > 0.0 {
                (x - y).powi(2) / (x + y)
            } else {
                0.0
            }
        })
        .sum()
}

/// `1/(1+χ²)` for LBP, `(1+cos)/2` for HOG.
pub fn match_score(d1: &DescriptorVec, d2: &DescriptorVec) -> Result<f64> {
    if d1.kind != d2.kind || d1.cell_layout != d2.cell_layout || d1.values.len() != d2.values.len() {
        return Err(Error::IncompatibleDescriptor(format!(
            "{:?} {:?} vs {:?} {:?}",
            d1.kind, d1.cell_layout, d2.kind, d2.cell_layout
        )));
    }
    match d1.kind {
        DescriptorKind::Lbp => Ok(1.0 / (1.0 + chi_squared(&d1.values, &d2.values))),
        DescriptorKind::Hog => {
            let n1 = d1.values.iter().map(|v| v * v).sum::<f64>().sqrt();
            let n2 = d2.values.iter().map(|v| v * v).sum::<f64>().sqrt();
            let cos = match (n1 > 0.0, n2 > 0.0) {
                (false, false) => 1.0,
                (true, true) => d1.values.iter().zip(&d2.values).map(|(a, b)| a * b).sum::<f64>() / (n1 * n2),
                _ => 0.0,
            };
            Ok(((1.0 + cos) / 2.0).clamp(0.0, 1.0))
        }
    }
}
