//! File formats: binary PGM images, versioned JSON model documents, the
//! pair manifest and score-record CSVs, and all-or-nothing artifact writes.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::Relation;
use crate::fusion::{FusionModels, ScoreRecord};
use crate::kvrl::{KvrlConfig, KvrlEncoder, KvrlModel};
use crate::numeric::Mat;

pub const IMAGE_SIDE: usize = 64;
pub const MODEL_FORMAT: &str = "fcdbn-model";
pub const MODEL_VERSION: u32 = 1;

/// Parsed binary PGM.
#[derive(Debug, Clone, PartialEq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub pixels: Vec<u8>,
}

fn parse_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Parse { offset, message: message.into() }
}

/// Reads a P5 image with 8-bit samples. Comments are allowed between
/// header fields.
pub fn parse_pgm(bytes: &[u8]) -> Result<Pgm> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(parse_err(0, "missing P5 magic number"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for (i, name) in ["width", "height", "maxval"].iter().enumerate() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(parse_err(pos, format!("expected {name}")));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        fields[i] = text.parse().map_err(|_| parse_err(start, format!("{name} out of range")))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(parse_err(pos, "expected a single whitespace byte after maxval")),
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(parse_err(3, format!("degenerate size {width}×{height}")));
    }
    if maxval == 0 || maxval > 255 {
        return Err(parse_err(pos - 1, format!("maxval {maxval} is not an 8-bit depth")));
    }
    let need = width * height;
    let have = bytes.len() - pos;
    if have < need {
        return Err(parse_err(bytes.len(), format!("payload truncated: {have} of {need} bytes")));
    }
    if have > need {
        return Err(parse_err(pos + need, format!("{} trailing bytes after payload", have - need)));
    }
    Ok(Pgm { width, height, maxval: maxval as u16, pixels: bytes[pos..].to_vec() })
}

/// A 64×64 P5 image as intensities in `[0, 1]`.
pub fn decode_image(bytes: &[u8]) -> Result<Mat> {
    let pgm = parse_pgm(bytes)?;
    if pgm.width != IMAGE_SIDE || pgm.height != IMAGE_SIDE {
        return Err(parse_err(3, format!("image is {}×{}, expected 64×64", pgm.width, pgm.height)));
    }
    let scale = pgm.maxval as f64;
    if let Some(i) = pgm.pixels.iter().position(|&p| p as u16 > pgm.maxval) {
        let offset = bytes.len() - pgm.pixels.len() + i;
        return Err(parse_err(offset, format!("sample exceeds maxval {}", pgm.maxval)));
    }
    Mat::new(IMAGE_SIDE, IMAGE_SIDE, pgm.pixels.iter().map(|&p| p as f64 / scale).collect())
}

pub fn load_image(path: &Path) -> Result<Mat> {
    let bytes = fs::read(path)?;
    decode_image(&bytes).map_err(|e| match e {
        Error::Parse { offset, message } => Error::Parse { offset, message: format!("{}: {message}", path.display()) },
        other => other,
    })
}

/// P5 bytes for 8-bit pixels.
pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Result<Vec<u8>> {
    if pixels.len() != width * height {
        return Err(Error::Shape(format!("{} pixels for {width}×{height}", pixels.len())));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    Ok(out)
}

/// Quantizes `[0, 1]` intensities to 8 bits.
pub fn encode_image(image: &Mat) -> Result<Vec<u8>> {
    let pixels: Vec<u8> = image.data().iter().map(|&x| (x.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    encode_pgm(image.cols(), image.rows(), &pixels)
}

/// Everything a model document can hold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "model", rename_all = "snake_case")]
pub enum ModelPayload {
    Kvrl(KvrlModel),
    Encoder(KvrlEncoder),
    Fusion(FusionModels),
}

impl ModelPayload {
    /// Layer widths per component, recorded next to the weights so a
    /// damaged document is caught before use.
    pub fn dims(&self) -> Vec<Vec<usize>> {
        let encoder_dims = |e: &KvrlEncoder| {
            let mut d: Vec<Vec<usize>> = e.stage1.iter().map(|s| s.layer_dims()).collect();
            d.push(e.stage2.layer_dims());
            d
        };
        match self {
            ModelPayload::Kvrl(m) => {
                let mut d = encoder_dims(&m.encoder);
                let mut c = vec![m.classifier.input_dim()];
                c.extend(m.classifier.layers.iter().map(|l| l.output_dim()));
                d.push(c);
                d
            }
            ModelPayload::Encoder(e) => encoder_dims(e),
            ModelPayload::Fusion(f) => {
                let mut d = Vec::new();
                if let Some(p) = &f.plr {
                    d.extend([&p.face_genuine, &p.face_impostor, &p.kin, &p.non_kin].iter().map(|g| vec![g.components()]));
                }
                if let Some(s) = &f.svm {
                    d.push(vec![s.weights.len()]);
                }
                d
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            ModelPayload::Kvrl(m) => m.validate(),
            ModelPayload::Encoder(e) => e.validate(),
            ModelPayload::Fusion(f) => {
                if let Some(p) = &f.plr {
                    for g in [&p.face_genuine, &p.face_impostor, &p.kin, &p.non_kin] {
                        g.validate().map_err(|e| Error::DimensionInconsistency(e.to_string()))?;
                    }
                }
                if let Some(s) = &f.svm {
                    let d = s.weights.len();
                    if s.feature_mean.len() != d || s.feature_scale.len() != d {
                        return Err(Error::DimensionInconsistency("SVM arrays disagree in length".into()));
                    }
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub format: String,
    pub version: u32,
    pub dims: Vec<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hyperparameters: Option<KvrlConfig>,
    #[serde(flatten)]
    pub payload: ModelPayload,
}

impl ModelDocument {
    pub fn new(payload: ModelPayload, hyperparameters: Option<KvrlConfig>) -> Self {
        Self { format: MODEL_FORMAT.into(), version: MODEL_VERSION, dims: payload.dims(), hyperparameters, payload }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Parses and checks version, declared dims and internal consistency.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| json_parse_error(text, &e))?;
        let version = value.get("version").and_then(serde_json::Value::as_u64);
        let format = value.get("format").and_then(serde_json::Value::as_str);
        if format != Some(MODEL_FORMAT) {
            return Err(Error::Parse { offset: 0, message: format!("not an {MODEL_FORMAT} document") });
        }
        match version {
            Some(v) if v == MODEL_VERSION as u64 => {}
            Some(v) => return Err(Error::Version { found: v.to_string(), expected: MODEL_VERSION.to_string() }),
            None => return Err(Error::Version { found: "missing".into(), expected: MODEL_VERSION.to_string() }),
        }
        let doc: ModelDocument = serde_json::from_value(value).map_err(|e| match e.classify() {
            serde_json::error::Category::Data => Error::DimensionInconsistency(e.to_string()),
            _ => json_parse_error(text, &e),
        })?;
        if doc.dims != doc.payload.dims() {
            return Err(Error::DimensionInconsistency(format!(
                "declared dims {:?} do not match stored weights {:?}",
                doc.dims,
                doc.payload.dims()
            )));
        }
        doc.payload.validate()?;
        Ok(doc)
    }
}

fn json_parse_error(text: &str, e: &serde_json::Error) -> Error {
    let offset: usize = text.split_inclusive('\n').take(e.line().saturating_sub(1)).map(str::len).sum::<usize>()
        + e.column().saturating_sub(1);
    Error::Parse { offset, message: e.to_string() }
}

pub fn save_model(path: &Path, payload: ModelPayload, hyperparameters: Option<KvrlConfig>) -> Result<()> {
    let doc = ModelDocument::new(payload, hyperparameters);
    write_atomic(path, doc.to_json()?.as_bytes())
}

pub fn load_model(path: &Path) -> Result<ModelDocument> {
    ModelDocument::from_json(&fs::read_to_string(path)?)
}

/// Writes through a temporary sibling and renames into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// One row of a pair manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path_a: String,
    pub path_b: String,
    pub label: PairLabel,
    pub relation: Relation,
    pub subject_a: String,
    pub subject_b: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairLabel {
    Kin,
    Nonkin,
}

pub const MANIFEST_HEADER: [&str; 6] = ["path_a", "path_b", "label", "relation", "subject_a", "subject_b"];

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header != MANIFEST_HEADER {
        return Err(Error::Parse { offset: 0, message: format!("manifest header must be {}", MANIFEST_HEADER.join(",")) });
    }
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record?;
        let offset = record.position().map_or(0, |p| p.byte() as usize);
        let field = |i: usize| record.get(i).unwrap_or("").to_string();
        let label = match field(2).to_ascii_lowercase().as_str() {
            "kin" | "1" => PairLabel::Kin,
            "nonkin" | "non-kin" | "0" => PairLabel::Nonkin,
            other => return Err(Error::Parse { offset, message: format!("label {other:?} is neither kin nor nonkin") }),
        };
        let relation: Relation =
            field(3).parse().map_err(|_| Error::Parse { offset, message: format!("unknown relation {:?}", field(3)) })?;
        out.push(ManifestEntry { path_a: field(0), path_b: field(1), label, relation, subject_a: field(4), subject_b: field(5) });
    }
    if out.is_empty() {
        return Err(Error::EmptyInput("manifest has no rows".into()));
    }
    Ok(out)
}

pub fn format_manifest(rows: &[ManifestEntry]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(MANIFEST_HEADER)?;
    for r in rows {
        let label = match r.label {
            PairLabel::Kin => "kin",
            PairLabel::Nonkin => "nonkin",
        };
        w.write_record([&r.path_a, &r.path_b, label, &r.relation.to_string(), &r.subject_a, &r.subject_b])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn split_list(s: &str) -> Vec<&str> {
    s.split(';').map(str::trim).filter(|x| !x.is_empty()).collect()
}

/// Score records as CSV: `s,k,genuine,kin` where `k` and `kin` are
/// `;`-separated lists (possibly empty) and labels are 0/1.
pub fn parse_scores(text: &str) -> Result<Vec<ScoreRecord>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header != ["s", "k", "genuine", "kin"] {
        return Err(Error::Parse { offset: 0, message: "score header must be s,k,genuine,kin".into() });
    }
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record?;
        let offset = record.position().map_or(0, |p| p.byte() as usize);
        let bad = |what: &str| Error::Parse { offset, message: format!("invalid {what}") };
        let flag = |s: &str| match s {
            "1" => Ok(true),
            "0" => Ok(false),
            _ => Err(bad("0/1 label")),
        };
        let s: f64 = record.get(0).unwrap_or("").parse().map_err(|_| bad("face score"))?;
        let k = split_list(record.get(1).unwrap_or(""))
            .into_iter()
            .map(|x| x.parse::<f64>().map_err(|_| bad("kin score")))
            .collect::<Result<Vec<_>>>()?;
        let genuine = flag(record.get(2).unwrap_or(""))?;
        let kin = split_list(record.get(3).unwrap_or("")).into_iter().map(flag).collect::<Result<Vec<_>>>()?;
        let rec = ScoreRecord { s, k, genuine, kin };
        rec.validate().map_err(|e| Error::Parse { offset, message: e.to_string() })?;
        out.push(rec);
    }
    if out.is_empty() {
        return Err(Error::EmptyInput("score file has no rows".into()));
    }
    Ok(out)
}

pub fn format_scores(records: &[ScoreRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["s", "k", "genuine", "kin"])?;
    let b = |x: bool| if x { "1" } else { "0" };
    for r in records {
        let k: Vec<String> = r.k.iter().map(|x| format!("{x:.17e}")).collect();
        let kin: Vec<&str> = r.kin.iter().map(|&x| b(x)).collect();
        w.write_record([format!("{:.17e}", r.s), k.join(";"), b(r.genuine).to_string(), kin.join(";")])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}
