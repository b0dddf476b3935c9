//! Pascal VOC annotation files and their flat CSV form.

use std::path::{Path, PathBuf};

use roxmltree::{Document, Node};
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::detector::BoundingBox;

/// One ground-truth box. Corners are integer pixels with
/// `0 <= min < max <= size` on both axes.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationRecord {
    pub filename: String,
    pub width: u32,
    pub height: u32,
    pub label: String,
    pub bbox: BoundingBox,
}

impl AnnotationRecord {
    fn check(&self) -> Result<(), EvalError> {
        let b = &self.bbox;
        let ok = 0.0 <= b.x_min
            && b.x_min < b.x_max
            && b.x_max <= self.width as f64
            && 0.0 <= b.y_min
            && b.y_min < b.y_max
            && b.y_max <= self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(EvalError::BoxOutOfBounds {
                filename: self.filename.clone(),
                label: self.label.clone(),
                bbox: [b.x_min, b.y_min, b.x_max, b.y_max],
                width: self.width,
                height: self.height,
            })
        }
    }
}

fn child<'a, 'i>(node: Node<'a, 'i>, name: &str) -> Option<Node<'a, 'i>> {
    node.children().find(|n| n.has_tag_name(name))
}

fn text_at(node: Node, path: &[&str], prefix: &str) -> Result<String, EvalError> {
    let mut cur = node;
    for (i, seg) in path.iter().enumerate() {
        cur = child(cur, seg).ok_or_else(|| {
            let mut full: Vec<&str> = Vec::new();
            if !prefix.is_empty() {
                full.push(prefix);
            }
            full.extend(&path[..=i]);
            EvalError::MissingField(full.join("/"))
        })?;
    }
    Ok(cur.text().unwrap_or("").trim().to_string())
}

fn number(node: Node, path: &[&str], prefix: &str) -> Result<f64, EvalError> {
    let s = text_at(node, path, prefix)?;
    s.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| EvalError::BadValue {
            field: format!("{prefix}/{}", path.join("/")).trim_start_matches('/').to_string(),
            value: s,
        })
}

/// Reads every `object` of one VOC document, in document order. Corner
/// values are rounded to whole pixels.
pub fn parse_voc_xml(text: &str) -> Result<Vec<AnnotationRecord>, EvalError> {
    let doc = Document::parse(text).map_err(|e| EvalError::MalformedXml(e.to_string()))?;
    let root = doc.root_element();
    if !root.has_tag_name("annotation") {
        return Err(EvalError::MalformedXml(format!(
            "root element is <{}>, expected <annotation>",
            root.tag_name().name()
        )));
    }
    let filename = text_at(root, &["filename"], "")?;
    let dim = |name: &str| -> Result<u32, EvalError> {
        let v = number(root, &["size", name], "")?;
        if v >= 1.0 && v <= u32::MAX as f64 && v.fract() == 0.0 {
            Ok(v as u32)
        } else {
            Err(EvalError::BadValue {
                field: format!("size/{name}"),
                value: v.to_string(),
            })
        }
    };
    let width = dim("width")?;
    let height = dim("height")?;

    let mut out = Vec::new();
    for obj in root.children().filter(|n| n.has_tag_name("object")) {
        let label = text_at(obj, &["name"], "object")?;
        let coord = |c: &str| number(obj, &["bndbox", c], "object").map(f64::round);
        let rec = AnnotationRecord {
            filename: filename.clone(),
            width,
            height,
            bbox: BoundingBox::new(coord("xmin")?, coord("ymin")?, coord("xmax")?, coord("ymax")?),
            label,
        };
        rec.check()?;
        out.push(rec);
    }
    Ok(out)
}

pub const ANNOTATION_CSV_HEADER: &str = "filename,width,height,class,xmin,ymin,xmax,ymax";

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    filename: String,
    width: u32,
    height: u32,
    class: String,
    xmin: i64,
    ymin: i64,
    xmax: i64,
    ymax: i64,
}

pub fn annotations_to_csv(records: &[AnnotationRecord]) -> String {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    for r in records {
        w.serialize(CsvRow {
            filename: r.filename.clone(),
            width: r.width,
            height: r.height,
            class: r.label.clone(),
            xmin: r.bbox.x_min as i64,
            ymin: r.bbox.y_min as i64,
            xmax: r.bbox.x_max as i64,
            ymax: r.bbox.y_max as i64,
        })
        .expect("writing to memory");
    }
    let body = String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8 fields");
    format!("{ANNOTATION_CSV_HEADER}\n{body}")
}

pub fn parse_annotations_csv(text: &str) -> Result<Vec<AnnotationRecord>, EvalError> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| EvalError::Csv { line: 1, message: e.to_string() })?;
    if headers.iter().collect::<Vec<_>>().join(",") != ANNOTATION_CSV_HEADER {
        return Err(EvalError::Csv {
            line: 1,
            message: format!("expected header {ANNOTATION_CSV_HEADER:?}"),
        });
    }
    let mut out = Vec::new();
    for row in rdr.deserialize::<CsvRow>() {
        let row = row.map_err(|e| EvalError::Csv {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let rec = AnnotationRecord {
            filename: row.filename,
            width: row.width,
            height: row.height,
            label: row.class,
            bbox: BoundingBox::new(row.xmin as f64, row.ymin as f64, row.xmax as f64, row.ymax as f64),
        };
        rec.check()?;
        out.push(rec);
    }
    Ok(out)
}

/// Outcome of parsing one file in a directory scan.
pub type FileResult = (PathBuf, Result<Vec<AnnotationRecord>, EvalError>);

/// Parses every `*.xml` file in `dir`, sorted by file name.
pub fn read_voc_dir(dir: &Path) -> std::io::Result<Vec<FileResult>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("xml")))
        .collect();
    paths.sort();
    Ok(paths
        .into_iter()
        .map(|p| {
            let parsed = std::fs::read_to_string(&p)
                .map_err(EvalError::from)
                .and_then(|t| parse_voc_xml(&t));
            (p, parsed)
        })
        .collect())
}
