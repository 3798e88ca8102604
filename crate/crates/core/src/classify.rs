//! Nearest-neighbor and nearest-feature-line classifiers with a rejection
//! threshold, plus the 2-bit output codes.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::MovementClass;
use crate::error::{BciError, Result};
use crate::features::FeatureVector;

pub const DEFAULT_REJECTION_PERCENTILE: f64 = 95.0;
pub const MODEL_FORMAT_VERSION: u32 = 1;

pub fn squared_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(BciError::LengthMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(sq_dist(a, b))
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Squared distance from `q` to the line through `x1` and `x2`, and the
/// position `mu` of the perpendicular foot (`x1 + mu * (x2 - x1)`). `mu`
/// is not clamped, so the line extends past both points.
pub fn nfl_line_distance(q: &[f64], x1: &[f64], x2: &[f64]) -> Result<(f64, f64)> {
    for other in [x1, x2] {
        if other.len() != q.len() {
            return Err(BciError::LengthMismatch {
                expected: q.len(),
                actual: other.len(),
            });
        }
    }
    line_distance(q, x1, x2).ok_or(BciError::DegenerateLine)
}

fn line_distance(q: &[f64], x1: &[f64], x2: &[f64]) -> Option<(f64, f64)> {
    let mut dot = 0.0;
    let mut norm = 0.0;
    for ((qi, a), b) in q.iter().zip(x1).zip(x2) {
        let d = b - a;
        dot += (qi - a) * d;
        norm += d * d;
    }
    if norm == 0.0 {
        return None;
    }
    let mu = dot / norm;
    let dist = q
        .iter()
        .zip(x1)
        .zip(x2)
        .map(|((qi, a), b)| {
            let r = qi - (a + mu * (b - a));
            r * r
        })
        .sum();
    Some((dist, mu))
}

/// `p`-th percentile with linear interpolation between closest ranks.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (rank - lo as f64)
}

/// Anything that maps a feature vector to a class and a distance.
pub trait Classifier {
    fn classify(&self, v: &FeatureVector) -> Result<(MovementClass, f64)>;
    fn spec_fingerprint(&self) -> &str;
}

fn check_training(vectors: &[FeatureVector], labels: &[MovementClass], p: f64) -> Result<usize> {
    if vectors.len() != labels.len() {
        return Err(BciError::LengthMismatch {
            expected: vectors.len(),
            actual: labels.len(),
        });
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(BciError::InvalidConfig(format!("rejection percentile {p} not in [0, 100]")));
    }
    if labels.contains(&MovementClass::Other) {
        return Err(BciError::InvalidConfig("OTHER cannot be a training label".into()));
    }
    if vectors.is_empty() {
        return Err(BciError::InvalidDataset("no training vectors".into()));
    }
    for class in MovementClass::MOVEMENTS {
        let count = labels.iter().filter(|&&l| l == class).count();
        if count == 1 {
            return Err(BciError::TooFewTrials {
                class: class.to_string(),
                count,
                needed: 2,
            });
        }
    }
    let dim = vectors[0].len();
    let fingerprint = &vectors[0].fingerprint;
    for v in vectors {
        if v.len() != dim {
            return Err(BciError::LengthMismatch {
                expected: dim,
                actual: v.len(),
            });
        }
        if &v.fingerprint != fingerprint {
            return Err(BciError::FingerprintMismatch {
                model: fingerprint.clone(),
                spec: v.fingerprint.clone(),
            });
        }
    }
    Ok(dim)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NnModel {
    pub exemplars: Vec<Vec<f64>>,
    pub labels: Vec<MovementClass>,
    pub rejection_threshold: f64,
    pub spec_fingerprint: String,
}

/// Stores every exemplar. The rejection threshold is the `p`-th percentile
/// of leave-one-out nearest-neighbor squared distances.
pub fn train_nn(vectors: &[FeatureVector], labels: &[MovementClass], p: f64) -> Result<NnModel> {
    check_training(vectors, labels, p)?;
    let exemplars: Vec<Vec<f64>> = vectors.iter().map(|v| v.values.clone()).collect();
    let loo: Vec<f64> = exemplars
        .iter()
        .enumerate()
        .map(|(i, q)| {
            exemplars
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, e)| sq_dist(q, e))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    Ok(NnModel {
        exemplars,
        labels: labels.to_vec(),
        rejection_threshold: percentile(&loo, p),
        spec_fingerprint: vectors[0].fingerprint.clone(),
    })
}

impl NnModel {
    pub fn dim(&self) -> usize {
        self.exemplars.first().map_or(0, Vec::len)
    }

    /// Index and squared distance of the nearest exemplar; ties go to the
    /// lowest index.
    pub fn nearest(&self, q: &[f64]) -> Result<(usize, f64)> {
        if q.len() != self.dim() {
            return Err(BciError::LengthMismatch {
                expected: self.dim(),
                actual: q.len(),
            });
        }
        let mut best = (0, f64::INFINITY);
        for (i, e) in self.exemplars.iter().enumerate() {
            let d = sq_dist(q, e);
            if d < best.1 {
                best = (i, d);
            }
        }
        Ok(best)
    }

    pub fn with_threshold(&self, threshold: f64) -> NnModel {
        NnModel {
            rejection_threshold: threshold,
            ..self.clone()
        }
    }
}

pub fn classify_nn(model: &NnModel, v: &FeatureVector) -> Result<(MovementClass, f64)> {
    let (i, d) = model.nearest(&v.values)?;
    let class = if d <= model.rejection_threshold {
        model.labels[i]
    } else {
        MovementClass::Other
    };
    Ok((class, d))
}

impl Classifier for NnModel {
    fn classify(&self, v: &FeatureVector) -> Result<(MovementClass, f64)> {
        classify_nn(self, v)
    }

    fn spec_fingerprint(&self) -> &str {
        &self.spec_fingerprint
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NflModel {
    /// Point sets in canonical class order; classes without points are absent.
    pub class_points: Vec<(MovementClass, Vec<Vec<f64>>)>,
    pub rejection_threshold: f64,
    pub spec_fingerprint: String,
}

/// Minimum over all pairs `(i, j)`, `i < j`, of `points` (skipping any pair
/// touching `exclude`) of the squared line distance. Coincident points
/// degenerate to the point distance.
fn nearest_line(q: &[f64], points: &[Vec<f64>], exclude: Option<usize>) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            if exclude == Some(i) || exclude == Some(j) {
                continue;
            }
            let d = line_distance(q, &points[i], &points[j])
                .map_or_else(|| sq_dist(q, &points[i]), |(d, _)| d);
            if d < best {
                best = d;
            }
        }
    }
    best
}

/// Stores per-class point sets. The rejection threshold is the `p`-th
/// percentile of leave-one-out nearest-line distances, where the held-out
/// point is removed from its own class's pairs.
pub fn train_nfl(vectors: &[FeatureVector], labels: &[MovementClass], p: f64) -> Result<NflModel> {
    check_training(vectors, labels, p)?;
    let class_points: Vec<(MovementClass, Vec<Vec<f64>>)> = MovementClass::MOVEMENTS
        .into_iter()
        .map(|c| {
            let pts = vectors
                .iter()
                .zip(labels)
                .filter(|(_, &l)| l == c)
                .map(|(v, _)| v.values.clone())
                .collect::<Vec<_>>();
            (c, pts)
        })
        .filter(|(_, pts)| !pts.is_empty())
        .collect();
    let mut loo = Vec::with_capacity(vectors.len());
    for (k, (_, points)) in class_points.iter().enumerate() {
        for (i, q) in points.iter().enumerate() {
            let d = class_points
                .iter()
                .enumerate()
                .map(|(m, (_, other))| nearest_line(q, other, (m == k).then_some(i)))
                .fold(f64::INFINITY, f64::min);
            loo.push(d);
        }
    }
    let finite: Vec<f64> = loo.into_iter().filter(|d| d.is_finite()).collect();
    if finite.is_empty() {
        return Err(BciError::InvalidDataset(
            "no feature lines available for leave-one-out calibration".into(),
        ));
    }
    Ok(NflModel {
        class_points,
        rejection_threshold: percentile(&finite, p),
        spec_fingerprint: vectors[0].fingerprint.clone(),
    })
}

impl NflModel {
    pub fn dim(&self) -> usize {
        self.class_points
            .first()
            .and_then(|(_, p)| p.first())
            .map_or(0, Vec::len)
    }

    pub fn n_lines(&self, class: MovementClass) -> usize {
        self.class_points
            .iter()
            .find(|(c, _)| *c == class)
            .map_or(0, |(_, p)| p.len() * p.len().saturating_sub(1) / 2)
    }

    pub fn with_threshold(&self, threshold: f64) -> NflModel {
        NflModel {
            rejection_threshold: threshold,
            ..self.clone()
        }
    }
}

pub fn classify_nfl(model: &NflModel, v: &FeatureVector) -> Result<(MovementClass, f64)> {
    if v.len() != model.dim() {
        return Err(BciError::LengthMismatch {
            expected: model.dim(),
            actual: v.len(),
        });
    }
    let mut best = (MovementClass::Other, f64::INFINITY);
    for (class, points) in &model.class_points {
        let d = nearest_line(&v.values, points, None);
        if d < best.1 {
            best = (*class, d);
        }
    }
    if best.1 > model.rejection_threshold {
        best.0 = MovementClass::Other;
    }
    Ok(best)
}

impl Classifier for NflModel {
    fn classify(&self, v: &FeatureVector) -> Result<(MovementClass, f64)> {
        classify_nfl(self, v)
    }

    fn spec_fingerprint(&self) -> &str {
        &self.spec_fingerprint
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierKind {
    Nn,
    Nfl,
}

impl std::str::FromStr for ClassifierKind {
    type Err = BciError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nn" => Ok(ClassifierKind::Nn),
            "nfl" => Ok(ClassifierKind::Nfl),
            other => Err(BciError::InvalidConfig(format!("unknown classifier {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Nn(NnModel),
    Nfl(NflModel),
}

impl Model {
    pub fn train(
        kind: ClassifierKind,
        vectors: &[FeatureVector],
        labels: &[MovementClass],
        p: f64,
    ) -> Result<Model> {
        Ok(match kind {
            ClassifierKind::Nn => Model::Nn(train_nn(vectors, labels, p)?),
            ClassifierKind::Nfl => Model::Nfl(train_nfl(vectors, labels, p)?),
        })
    }

    pub fn kind(&self) -> ClassifierKind {
        match self {
            Model::Nn(_) => ClassifierKind::Nn,
            Model::Nfl(_) => ClassifierKind::Nfl,
        }
    }

    pub fn rejection_threshold(&self) -> f64 {
        match self {
            Model::Nn(m) => m.rejection_threshold,
            Model::Nfl(m) => m.rejection_threshold,
        }
    }

    pub fn with_threshold(&self, threshold: f64) -> Model {
        match self {
            Model::Nn(m) => Model::Nn(m.with_threshold(threshold)),
            Model::Nfl(m) => Model::Nfl(m.with_threshold(threshold)),
        }
    }

    pub fn to_file(&self) -> ModelFile {
        let (exemplars, labels, threshold, fingerprint) = match self {
            Model::Nn(m) => (
                m.exemplars.clone(),
                m.labels.clone(),
                m.rejection_threshold,
                m.spec_fingerprint.clone(),
            ),
            Model::Nfl(m) => {
                let mut exemplars = Vec::new();
                let mut labels = Vec::new();
                for (c, pts) in &m.class_points {
                    exemplars.extend(pts.iter().cloned());
                    labels.extend(std::iter::repeat_n(*c, pts.len()));
                }
                (exemplars, labels, m.rejection_threshold, m.spec_fingerprint.clone())
            }
        };
        ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            kind: self.kind(),
            exemplars,
            labels,
            rejection_threshold: threshold.is_finite().then_some(threshold),
            spec_fingerprint: fingerprint,
        }
    }

    pub fn from_file(file: ModelFile) -> Result<Model> {
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(BciError::InvalidConfig(format!(
                "unsupported model format version {}",
                file.format_version
            )));
        }
        if file.exemplars.len() != file.labels.len() {
            return Err(BciError::LengthMismatch {
                expected: file.exemplars.len(),
                actual: file.labels.len(),
            });
        }
        let threshold = file.rejection_threshold.unwrap_or(f64::INFINITY);
        if !(threshold >= 0.0) {
            return Err(BciError::InvalidConfig("rejection threshold must be >= 0".into()));
        }
        Ok(match file.kind {
            ClassifierKind::Nn => Model::Nn(NnModel {
                exemplars: file.exemplars,
                labels: file.labels,
                rejection_threshold: threshold,
                spec_fingerprint: file.spec_fingerprint,
            }),
            ClassifierKind::Nfl => {
                let class_points = MovementClass::MOVEMENTS
                    .into_iter()
                    .map(|c| {
                        let pts = file
                            .exemplars
                            .iter()
                            .zip(&file.labels)
                            .filter(|(_, &l)| l == c)
                            .map(|(e, _)| e.clone())
                            .collect::<Vec<_>>();
                        (c, pts)
                    })
                    .filter(|(_, p)| !p.is_empty())
                    .collect();
                Model::Nfl(NflModel {
                    class_points,
                    rejection_threshold: threshold,
                    spec_fingerprint: file.spec_fingerprint,
                })
            }
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(&self.to_file()).map_err(|source| BciError::Json {
            context: path.display().to_string(),
            source,
        })?;
        fs::write(path, json).map_err(|e| BciError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Model> {
        let text = fs::read_to_string(path).map_err(|e| BciError::io(path, e))?;
        let file = serde_json::from_str(&text).map_err(|source| BciError::Json {
            context: path.display().to_string(),
            source,
        })?;
        Model::from_file(file)
    }
}

impl Classifier for Model {
    fn classify(&self, v: &FeatureVector) -> Result<(MovementClass, f64)> {
        match self {
            Model::Nn(m) => classify_nn(m, v),
            Model::Nfl(m) => classify_nfl(m, v),
        }
    }

    fn spec_fingerprint(&self) -> &str {
        match self {
            Model::Nn(m) => &m.spec_fingerprint,
            Model::Nfl(m) => &m.spec_fingerprint,
        }
    }
}

/// On-disk model document. A missing threshold means no rejection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub kind: ClassifierKind,
    pub exemplars: Vec<Vec<f64>>,
    pub labels: Vec<MovementClass>,
    pub rejection_threshold: Option<f64>,
    pub spec_fingerprint: String,
}

/// Two-bit output code. `00` is the idle/reject code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DigitalCode(u8);

impl DigitalCode {
    pub const IDLE: DigitalCode = DigitalCode(0b00);

    pub fn new(bits: u8) -> Result<Self> {
        if bits > 0b11 {
            return Err(BciError::InvalidConfig(format!("digital code {bits} exceeds 2 bits")));
        }
        Ok(DigitalCode(bits))
    }

    pub fn bits(self) -> u8 {
        self.0
    }
}

impl fmt::Display for DigitalCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:02b}", self.0)
    }
}

impl Serialize for DigitalCode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for DigitalCode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        match s.as_str() {
            "00" => Ok(DigitalCode(0)),
            "01" => Ok(DigitalCode(1)),
            "10" => Ok(DigitalCode(2)),
            "11" => Ok(DigitalCode(3)),
            _ => Err(serde::de::Error::custom(format!("invalid digital code {s:?}"))),
        }
    }
}

pub fn encode_class(class: MovementClass) -> DigitalCode {
    DigitalCode(match class {
        MovementClass::Other => 0b00,
        MovementClass::Rtr => 0b01,
        MovementClass::Rtl => 0b10,
        MovementClass::Wf => 0b11,
    })
}
