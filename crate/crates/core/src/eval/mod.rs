//! Detection accuracy: IoU, per-class average precision and mAP.
//!
//! AP uses all-point interpolation: the area under the precision/recall
//! curve after precision is made non-increasing from the right. A
//! prediction is a true positive when the unmatched ground truth in the same
//! image with the highest IoU reaches the threshold (`>=`).

mod voc;

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::detector::BoundingBox;

pub use voc::{
    annotations_to_csv, parse_annotations_csv, parse_voc_xml, read_voc_dir, AnnotationRecord, FileResult,
    ANNOTATION_CSV_HEADER,
};

pub const DEFAULT_IOU_THRESHOLDS: [f64; 2] = [0.50, 0.75];

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("malformed xml: {0}")]
    MalformedXml(String),
    #[error("missing field {0}")]
    MissingField(String),
    #[error("bad value {value:?} for {field}")]
    BadValue { field: String, value: String },
    #[error("box {bbox:?} of {label:?} lies outside the {width}x{height} image {filename}")]
    BoxOutOfBounds {
        filename: String,
        label: String,
        bbox: [f64; 4],
        width: u32,
        height: u32,
    },
    #[error("csv line {line}: {message}")]
    Csv { line: u64, message: String },
    #[error("{file}:{line}: {message}")]
    Parse { file: String, line: usize, message: String },
    #[error("iou threshold {0} outside (0, 1]")]
    BadThreshold(f64),
    #[error("no class has ground truths")]
    NoClasses,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Intersection over union with continuous areas; 0 when the union is empty.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let ih = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// A scored prediction for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub filename: String,
    pub label: String,
    pub score: f64,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
}

/// Reads newline-delimited prediction records. Errors carry the file name
/// and 1-based line.
pub fn parse_predictions(text: &str, file: &str) -> Result<Vec<Prediction>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| EvalError::Parse {
            file: file.to_string(),
            line: i + 1,
            message,
        };
        let p: Prediction = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        if !(0.0..=1.0).contains(&p.score) {
            return Err(err(format!("score {} outside [0, 1]", p.score)));
        }
        if !p.bbox.is_valid() {
            return Err(err("box has min > max".into()));
        }
        out.push(p);
    }
    Ok(out)
}

/// Average precision for one class. `None` when there is nothing to score
/// (no ground truths and no predictions); 0 when only predictions exist.
///
/// `preds` and `gts` pair an image key with a box; predictions also carry
/// a score. Equal scores keep their input order.
pub fn average_precision(preds: &[(&str, f64, BoundingBox)], gts: &[(&str, BoundingBox)], t: f64) -> Option<f64> {
    if gts.is_empty() {
        return (!preds.is_empty()).then_some(0.0);
    }
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].1.total_cmp(&preds[a].1));

    let mut by_image: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, (img, _)) in gts.iter().enumerate() {
        by_image.entry(img).or_default().push(i);
    }
    let mut matched = vec![false; gts.len()];
    let mut tp = 0usize;
    let mut points = Vec::with_capacity(preds.len());
    for (rank, &pi) in order.iter().enumerate() {
        let (img, _, pbox) = &preds[pi];
        let mut best: Option<(usize, f64)> = None;
        for &gi in by_image.get(img).map(Vec::as_slice).unwrap_or_default() {
            if matched[gi] {
                continue;
            }
            let o = iou(pbox, &gts[gi].1);
            if best.is_none_or(|(_, b)| o > b) {
                best = Some((gi, o));
            }
        }
        if let Some((gi, o)) = best {
            if o >= t {
                matched[gi] = true;
                tp += 1;
            }
        }
        points.push((tp as f64 / gts.len() as f64, tp as f64 / (rank + 1) as f64));
    }
    for i in (0..points.len().saturating_sub(1)).rev() {
        points[i].1 = points[i].1.max(points[i + 1].1);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (r, p) in points {
        ap += (r - prev_recall) * p;
        prev_recall = r;
    }
    Some(ap)
}

/// Unweighted mean of per-class APs.
pub fn mean_average_precision(aps: &[f64]) -> Result<f64, EvalError> {
    if aps.is_empty() {
        return Err(EvalError::NoClasses);
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub iou_thresholds: Vec<f64>,
    /// Classes to report; derived from the data when `None`.
    pub classes: Option<Vec<String>>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_thresholds: DEFAULT_IOU_THRESHOLDS.to_vec(),
            classes: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassAp {
    pub class: String,
    pub iou: f64,
    /// `None` for a class with neither ground truths nor predictions.
    pub ap: Option<f64>,
    pub gt_count: usize,
    pub pred_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdMap {
    pub iou: f64,
    pub map: f64,
    pub classes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub per_class: Vec<ClassAp>,
    pub map: Vec<ThresholdMap>,
    pub gt_count: usize,
    pub pred_count: usize,
}

pub const REPORT_CSV_HEADER: &str = "class,iou,ap_all_point,gt_count,pred_count";

impl EvalReport {
    pub fn map_at(&self, t: f64) -> Option<f64> {
        self.map.iter().find(|m| m.iou == t).map(|m| m.map)
    }

    pub fn ap(&self, class: &str, t: f64) -> Option<f64> {
        self.per_class
            .iter()
            .find(|c| c.class == class && c.iou == t)
            .and_then(|c| c.ap)
    }

    /// Per-class rows followed by one `mAP` row per threshold.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{REPORT_CSV_HEADER}\n");
        for c in &self.per_class {
            let ap = c.ap.map_or("NA".to_string(), |v| format!("{v:.6}"));
            out.push_str(&format!("{},{:.2},{},{},{}\n", csv_field(&c.class), c.iou, ap, c.gt_count, c.pred_count));
        }
        for m in &self.map {
            out.push_str(&format!("mAP,{:.2},{:.6},{},{}\n", m.iou, m.map, self.gt_count, self.pred_count));
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn class_rows(class: &str, gts: &[AnnotationRecord], preds: &[Prediction], thresholds: &[f64]) -> Vec<ClassAp> {
    let g: Vec<(&str, BoundingBox)> = gts
        .iter()
        .filter(|r| r.label == class)
        .map(|r| (r.filename.as_str(), r.bbox))
        .collect();
    let p: Vec<(&str, f64, BoundingBox)> = preds
        .iter()
        .filter(|r| r.label == class)
        .map(|r| (r.filename.as_str(), r.score, r.bbox))
        .collect();
    thresholds
        .iter()
        .map(|&t| ClassAp {
            class: class.to_string(),
            iou: t,
            ap: average_precision(&p, &g, t),
            gt_count: g.len(),
            pred_count: p.len(),
        })
        .collect()
}

/// Scores predictions against ground truths at every configured threshold.
/// Classes are evaluated independently (in parallel with the `parallel`
/// feature).
pub fn evaluate(gts: &[AnnotationRecord], preds: &[Prediction], cfg: &EvalConfig) -> Result<EvalReport, EvalError> {
    if let Some(&t) = cfg.iou_thresholds.iter().find(|t| !(**t > 0.0 && **t <= 1.0)) {
        return Err(EvalError::BadThreshold(t));
    }
    let classes: Vec<String> = match &cfg.classes {
        Some(c) => c.clone(),
        None => gts
            .iter()
            .map(|r| r.label.clone())
            .chain(preds.iter().map(|p| p.label.clone()))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect(),
    };
    if !classes.iter().any(|c| gts.iter().any(|g| &g.label == c)) {
        return Err(EvalError::NoClasses);
    }
    let thresholds = &cfg.iou_thresholds;

    #[cfg(feature = "parallel")]
    let per_class: Vec<ClassAp> = {
        use rayon::prelude::*;
        classes
            .par_iter()
            .map(|c| class_rows(c, gts, preds, thresholds))
            .collect::<Vec<_>>()
            .into_iter()
            .flatten()
            .collect()
    };
    #[cfg(not(feature = "parallel"))]
    let per_class: Vec<ClassAp> = classes
        .iter()
        .flat_map(|c| class_rows(c, gts, preds, thresholds))
        .collect();

    let mut map = Vec::new();
    for &t in thresholds {
        let aps: Vec<f64> = per_class.iter().filter(|c| c.iou == t).filter_map(|c| c.ap).collect();
        map.push(ThresholdMap {
            iou: t,
            map: mean_average_precision(&aps)?,
            classes: aps.len(),
        });
    }
    let in_scope = |l: &str| classes.iter().any(|c| c == l);
    Ok(EvalReport {
        per_class,
        map,
        gt_count: gts.iter().filter(|g| in_scope(&g.label)).count(),
        pred_count: preds.iter().filter(|p| in_scope(&p.label)).count(),
    })
}
