//! Detection-side types, KITTI label ingestion, the ground-truth oracle
//! detector and AP/mAP evaluation.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::io;
use std::path::Path;

use log::warn;
use thiserror::Error;

use crate::saliency::MaskedImage;

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Evaluated object categories; every other KITTI type maps to `Other`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ObjectClass {
    Car,
    Van,
    Truck,
    Tram,
    Other,
}

impl ObjectClass {
    pub const EVALUATED: [ObjectClass; 4] = [
        ObjectClass::Car,
        ObjectClass::Van,
        ObjectClass::Truck,
        ObjectClass::Tram,
    ];

    /// Case-insensitive; anything unknown is `Other`.
    pub fn from_name(name: &str) -> Self {
        match name.to_ascii_lowercase().as_str() {
            "car" => ObjectClass::Car,
            "van" => ObjectClass::Van,
            "truck" => ObjectClass::Truck,
            "tram" => ObjectClass::Tram,
            _ => ObjectClass::Other,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ObjectClass::Car => "car",
            ObjectClass::Van => "van",
            ObjectClass::Truck => "truck",
            ObjectClass::Tram => "tram",
            ObjectClass::Other => "other",
        }
    }

    /// Wire identifier.
    pub fn id(self) -> u8 {
        match self {
            ObjectClass::Car => 0,
            ObjectClass::Van => 1,
            ObjectClass::Truck => 2,
            ObjectClass::Tram => 3,
            ObjectClass::Other => 4,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        Some(match id {
            0 => ObjectClass::Car,
            1 => ObjectClass::Van,
            2 => ObjectClass::Truck,
            3 => ObjectClass::Tram,
            4 => ObjectClass::Other,
            _ => return None,
        })
    }
}

impl fmt::Display for ObjectClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Axis-aligned box in pixel coordinates with positive area.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub left: f64,
    pub top: f64,
    pub right: f64,
    pub bottom: f64,
}

impl BoundingBox {
    pub fn new(left: f64, top: f64, right: f64, bottom: f64) -> Result<Self, DetectorError> {
        if !(right > left && bottom > top) || ![left, top, right, bottom].iter().all(|v| v.is_finite()) {
            return Err(DetectorError::InvalidArgument(format!(
                "degenerate box ({left}, {top}, {right}, {bottom})"
            )));
        }
        Ok(BoundingBox {
            left,
            top,
            right,
            bottom,
        })
    }

    pub fn area(&self) -> f64 {
        (self.right - self.left) * (self.bottom - self.top)
    }
}

pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let w = (a.right.min(b.right) - a.left.max(b.left)).max(0.0);
    let h = (a.bottom.min(b.bottom) - a.top.max(b.top)).max(0.0);
    let inter = w * h;
    if inter <= 0.0 {
        return 0.0;
    }
    inter / (a.area() + b.area() - inter)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub class: ObjectClass,
    pub bbox: BoundingBox,
    /// KITTI `truncated` field, as written in the label file.
    pub truncated: String,
    /// KITTI `occluded` field, as written in the label file.
    pub occluded: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub class: ObjectClass,
    pub bbox: BoundingBox,
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConfidenceModel {
    /// Confidence is the fraction of box pixels the mask retained.
    #[default]
    RetainedFraction,
    Constant,
}

impl std::str::FromStr for ConfidenceModel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "retained-fraction" => Ok(ConfidenceModel::RetainedFraction),
            "constant" => Ok(ConfidenceModel::Constant),
            other => Err(format!("unknown confidence model {other:?} (retained-fraction | constant)")),
        }
    }
}

impl fmt::Display for ConfidenceModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConfidenceModel::RetainedFraction => "retained-fraction",
            ConfidenceModel::Constant => "constant",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleParams {
    /// Minimum retained fraction for an object to be detected, in (0, 1].
    pub visibility_threshold: f64,
    pub confidence_model: ConfidenceModel,
}

impl Default for OracleParams {
    fn default() -> Self {
        OracleParams {
            visibility_threshold: 0.5,
            confidence_model: ConfidenceModel::RetainedFraction,
        }
    }
}

/// Parse KITTI object labels. `DontCare` rows are dropped; unknown types
/// are kept as [`ObjectClass::Other`].
pub fn parse_kitti_labels(text: &str) -> Result<Vec<GroundTruth>, DetectorError> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() < 15 {
            return Err(DetectorError::Parse {
                line: lineno,
                message: format!("expected at least 15 fields, found {}", fields.len()),
            });
        }
        if fields[0] == "DontCare" {
            continue;
        }
        let mut coords = [0.0; 4];
        for (slot, raw) in coords.iter_mut().zip(&fields[4..8]) {
            *slot = raw.parse().map_err(|_| DetectorError::Parse {
                line: lineno,
                message: format!("bad box coordinate {raw:?}"),
            })?;
        }
        let bbox = BoundingBox::new(coords[0], coords[1], coords[2], coords[3]).map_err(|e| {
            DetectorError::Parse {
                line: lineno,
                message: e.to_string(),
            }
        })?;
        out.push(GroundTruth {
            class: ObjectClass::from_name(fields[0]),
            bbox,
            truncated: fields[1].to_string(),
            occluded: fields[2].to_string(),
        });
    }
    Ok(out)
}

pub fn read_kitti_labels(path: &Path) -> Result<Vec<GroundTruth>, DetectorError> {
    let text = fs::read_to_string(path).map_err(|source| DetectorError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_kitti_labels(&text)
}

/// Column/row pixel span `[start, end)` covered by a box, clipped to the
/// frame.
fn pixel_span(lo: f64, hi: f64, len: usize) -> (usize, usize) {
    let start = lo.floor().max(0.0);
    let end = hi.ceil().min(len as f64);
    if end <= start {
        return (0, 0);
    }
    (start as usize, end as usize)
}

/// Ground-truth-driven stand-in for a CNN detector: an object is found when
/// at least `visibility_threshold` of its box pixels survived the mask.
pub fn oracle_detect(masked: &MaskedImage, truths: &[GroundTruth], params: &OracleParams) -> Vec<Detection> {
    let mask = &masked.mask;
    let mut out = Vec::new();
    for truth in truths {
        let (x0, x1) = pixel_span(truth.bbox.left, truth.bbox.right, mask.width());
        let (y0, y1) = pixel_span(truth.bbox.top, truth.bbox.bottom, mask.height());
        let total = (x1 - x0) * (y1 - y0);
        if total == 0 {
            warn!("{} box {:?} lies outside the frame, skipped", truth.class, truth.bbox);
            continue;
        }
        let kept: usize = (y0..y1)
            .map(|y| mask.bits()[y * mask.width() + x0..y * mask.width() + x1].iter().filter(|&&b| b == 1).count())
            .sum();
        let retained = kept as f64 / total as f64;
        if retained >= params.visibility_threshold {
            out.push(Detection {
                class: truth.class,
                bbox: truth.bbox,
                confidence: match params.confidence_model {
                    ConfidenceModel::RetainedFraction => retained,
                    ConfidenceModel::Constant => 1.0,
                },
            });
        }
    }
    out
}

/// Read precomputed detections from `<store>/<frame_id>.txt`, one
/// `class conf left top right bottom` per line. A missing file yields no
/// detections.
pub fn replay_detect(frame_id: &str, store: &Path) -> Result<Vec<Detection>, DetectorError> {
    let path = store.join(format!("{frame_id}.txt"));
    let text = match fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => {
            warn!("no replay detections at {}", path.display());
            return Ok(Vec::new());
        }
        Err(source) => {
            return Err(DetectorError::Io {
                path: path.display().to_string(),
                source,
            })
        }
    };
    parse_replay(&text)
}

pub fn parse_replay(text: &str) -> Result<Vec<Detection>, DetectorError> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let err = |message: String| DetectorError::Parse {
            line: idx + 1,
            message,
        };
        if fields.len() != 6 {
            return Err(err(format!("expected 6 fields, found {}", fields.len())));
        }
        let mut nums = [0.0; 5];
        for (slot, raw) in nums.iter_mut().zip(&fields[1..]) {
            *slot = raw.parse().map_err(|_| err(format!("bad number {raw:?}")))?;
        }
        if !(0.0..=1.0).contains(&nums[0]) {
            return Err(err(format!("confidence {} outside [0, 1]", nums[0])));
        }
        let bbox = BoundingBox::new(nums[1], nums[2], nums[3], nums[4]).map_err(|e| err(e.to_string()))?;
        out.push(Detection {
            class: ObjectClass::from_name(fields[0]),
            bbox,
            confidence: nums[0],
        });
    }
    Ok(out)
}

pub fn format_replay(dets: &[Detection]) -> String {
    dets.iter()
        .map(|d| {
            format!(
                "{} {} {} {} {} {}\n",
                d.class, d.confidence, d.bbox.left, d.bbox.top, d.bbox.right, d.bbox.bottom
            )
        })
        .collect()
}

pub fn write_replay(frame_id: &str, store: &Path, dets: &[Detection]) -> Result<(), DetectorError> {
    let path = store.join(format!("{frame_id}.txt"));
    fs::write(&path, format_replay(dets)).map_err(|source| DetectorError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// A detection tagged with the frame it was made on.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameDetection {
    pub frame: String,
    pub confidence: f64,
    pub bbox: BoundingBox,
}

/// A ground-truth box tagged with its frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTruth {
    pub frame: String,
    pub bbox: BoundingBox,
}

/// Average precision of one class: detections ranked by confidence (ties by
/// frame id, then input order), greedily matched to the best unmatched truth
/// of their frame, and the area under the right-monotonised precision
/// envelope taken over every recall step. Returns NaN when there are no
/// truths.
pub fn average_precision(dets: &[FrameDetection], truths: &[FrameTruth], iou_threshold: f64) -> f64 {
    if truths.is_empty() {
        return f64::NAN;
    }
    let mut by_frame: HashMap<&str, Vec<(&BoundingBox, bool)>> = HashMap::new();
    for t in truths {
        by_frame.entry(t.frame.as_str()).or_default().push((&t.bbox, false));
    }

    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .confidence
            .total_cmp(&dets[a].confidence)
            .then_with(|| dets[a].frame.cmp(&dets[b].frame))
    });

    let n = truths.len() as f64;
    let mut tp = 0usize;
    let mut recall = Vec::with_capacity(dets.len());
    let mut precision = Vec::with_capacity(dets.len());
    for (rank, &i) in order.iter().enumerate() {
        let det = &dets[i];
        let mut best: Option<(usize, f64)> = None;
        if let Some(cands) = by_frame.get(det.frame.as_str()) {
            for (j, (bbox, matched)) in cands.iter().enumerate() {
                if *matched {
                    continue;
                }
                let o = iou(&det.bbox, bbox);
                if o >= iou_threshold && best.is_none_or(|(_, b)| o > b) {
                    best = Some((j, o));
                }
            }
        }
        if let Some((j, _)) = best {
            by_frame.get_mut(det.frame.as_str()).expect("frame present")[j].1 = true;
            tp += 1;
        }
        recall.push(tp as f64 / n);
        precision.push(tp as f64 / (rank + 1) as f64);
    }

    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev = 0.0;
    for (r, p) in recall.iter().zip(&precision) {
        ap += (r - prev) * p;
        prev = *r;
    }
    ap
}

/// Unweighted mean over classes whose AP is defined (not NaN).
pub fn mean_average_precision(per_class_ap: &BTreeMap<ObjectClass, f64>) -> Result<f64, DetectorError> {
    let defined: Vec<f64> = per_class_ap.values().copied().filter(|v| !v.is_nan()).collect();
    if defined.is_empty() {
        return Err(DetectorError::InvalidArgument(
            "mAP needs at least one class with a defined AP".into(),
        ));
    }
    Ok(defined.iter().sum::<f64>() / defined.len() as f64)
}

/// Per-class evaluation summary, one row of the evaluation report.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassReport {
    pub class: ObjectClass,
    pub ap: f64,
    pub num_truths: usize,
    pub num_dets: usize,
}

/// Accumulates detections and truths over frames, then scores each
/// evaluated class.
#[derive(Debug, Default, Clone)]
pub struct Evaluator {
    dets: BTreeMap<ObjectClass, Vec<FrameDetection>>,
    truths: BTreeMap<ObjectClass, Vec<FrameTruth>>,
}

impl Evaluator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_frame(&mut self, frame: &str, dets: &[Detection], truths: &[GroundTruth]) {
        for d in dets {
            self.dets.entry(d.class).or_default().push(FrameDetection {
                frame: frame.to_string(),
                confidence: d.confidence,
                bbox: d.bbox,
            });
        }
        for t in truths {
            self.truths.entry(t.class).or_default().push(FrameTruth {
                frame: frame.to_string(),
                bbox: t.bbox,
            });
        }
    }

    pub fn report(&self, iou_threshold: f64) -> Vec<ClassReport> {
        ObjectClass::EVALUATED
            .iter()
            .map(|&class| {
                let dets = self.dets.get(&class).map(Vec::as_slice).unwrap_or(&[]);
                let truths = self.truths.get(&class).map(Vec::as_slice).unwrap_or(&[]);
                ClassReport {
                    class,
                    ap: average_precision(dets, truths, iou_threshold),
                    num_truths: truths.len(),
                    num_dets: dets.len(),
                }
            })
            .collect()
    }
}

pub fn report_csv(rows: &[ClassReport]) -> String {
    let mut out = String::from("class,ap,num_truths,num_dets\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.class, r.ap, r.num_truths, r.num_dets));
    }
    out
}
