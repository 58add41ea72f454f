//! Adapter from externally published multi-label annotations to
//! [`ImageAnnotation`] records.
//!
//! The published schema could not be pinned down, so the reader is
//! tolerant: the top level may be a JSON array of records, a JSON object
//! keyed by image id, or JSON lines; several common field names are
//! accepted for each value; labels may be class ids or wnids.

use std::collections::BTreeMap;
use std::path::Path;

use serde_json::Value;

use crate::classify::{ImageAnnotation, ObjectBlock, Provenance};
use crate::ingest::{ClassTable, DatasetIndex, DatasetRecord};
use crate::{ClassId, Error, ImageId, Result};

const IMAGE_KEYS: &[&str] = &["image", "image_id", "img", "file", "filename", "file_name", "name"];
const OBJECT_KEYS: &[&str] = &["objects", "labels", "multi_label", "multilabel", "correct_labels", "valid", "classes"];
const MAIN_KEYS: &[&str] = &["main", "main_label", "main_object", "primary", "main_class"];
const DATASET_KEYS: &[&str] = &["dataset_label", "in_label", "label", "original_label", "imagenet_label"];
const FLAG_KEYS: &[&str] = &["unverified", "sf_zero", "mislabeled", "never_selected", "problematic"];

/// One imported image plus flags found on the record.
#[derive(Clone, Debug, PartialEq)]
pub struct ImportedImage {
    pub annotation: ImageAnnotation,
    /// Flag fields that were present and true, by field name.
    pub flags: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ImportSummary {
    pub images: usize,
    pub multi_object: usize,
    pub main_disagreement: usize,
    pub flags: BTreeMap<String, usize>,
    /// Records that named no known image.
    pub skipped: Vec<String>,
}

/// Standard validation labels: either one class id per line in image
/// order (ids `ILSVRC2012_val_00000001`, ...) or `image<WS>class` lines.
pub fn load_validation_labels(path: impl AsRef<Path>, num_classes: usize) -> Result<DatasetIndex> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    let mut n = 0;
    for (lineno, line) in text.lines().enumerate() {
        let cols: Vec<&str> = line.split_whitespace().collect();
        let parse = |s: &str| {
            s.parse::<u32>().map(ClassId).map_err(|e| Error::Parse {
                path: path.to_owned(),
                line: lineno + 1,
                message: e.to_string(),
            })
        };
        let (image, label) = match cols.as_slice() {
            [] => continue,
            [l] => {
                n += 1;
                (format!("ILSVRC2012_val_{n:08}"), parse(l)?)
            }
            [i, l, ..] => (strip_ext(i).to_owned(), parse(l)?),
        };
        records.push(DatasetRecord { image, dataset_label: label, url: None });
    }
    DatasetIndex::new(records, num_classes)
}

fn strip_ext(s: &str) -> &str {
    let base = s.rsplit('/').next().unwrap_or(s);
    base.strip_suffix(".JPEG")
        .or_else(|| base.strip_suffix(".jpeg"))
        .or_else(|| base.strip_suffix(".jpg"))
        .or_else(|| base.strip_suffix(".png"))
        .unwrap_or(base)
}

fn pick<'a>(obj: &'a serde_json::Map<String, Value>, keys: &[&str]) -> Option<&'a Value> {
    keys.iter().find_map(|k| obj.get(*k)).filter(|v| !v.is_null())
}

fn label(v: &Value, classes: &ClassTable) -> Result<ClassId> {
    let bad = || Error::Import(format!("unrecognized label {v}"));
    let id = match v {
        Value::Number(n) => ClassId(n.as_u64().ok_or_else(bad)? as u32),
        Value::String(s) => match s.parse::<u32>() {
            Ok(n) => ClassId(n),
            Err(_) => classes.by_wnid(s).ok_or_else(bad)?,
        },
        Value::Object(o) => return label(pick(o, &["label", "class", "id", "wnid"]).ok_or_else(bad)?, classes),
        _ => return Err(bad()),
    };
    if classes.contains(id) {
        Ok(id)
    } else {
        Err(Error::UnknownClass(id))
    }
}

/// Objects may be a flat list (one label per object) or a list of lists
/// (the labels of each object, most specific first).
fn objects(v: &Value, classes: &ClassTable) -> Result<Vec<Vec<ClassId>>> {
    let Value::Array(items) = v else {
        return Ok(vec![vec![label(v, classes)?]]);
    };
    items
        .iter()
        .map(|item| match item {
            Value::Array(group) => group.iter().map(|g| label(g, classes)).collect(),
            other => Ok(vec![label(other, classes)?]),
        })
        .collect()
}

fn records(text: &str) -> Result<Vec<(Option<String>, Value)>> {
    let trimmed = text.trim_start();
    if trimmed.starts_with('[') || trimmed.starts_with('{') {
        if let Ok(v) = serde_json::from_str::<Value>(text) {
            return Ok(match v {
                Value::Array(a) => a.into_iter().map(|r| (None, r)).collect(),
                Value::Object(o) if o.values().all(Value::is_object) => {
                    o.into_iter().map(|(k, r)| (Some(k), r)).collect()
                }
                other => vec![(None, other)],
            });
        }
    }
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok((None, serde_json::from_str(l)?)))
        .collect()
}

pub fn import_released(path: impl AsRef<Path>, index: &DatasetIndex, classes: &ClassTable) -> Result<(Vec<ImportedImage>, ImportSummary)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    let mut summary = ImportSummary::default();
    for (key, rec) in records(&text)? {
        let Value::Object(obj) = &rec else {
            return Err(Error::Import(format!("expected an object record, found {rec}")));
        };
        let image = match (pick(obj, IMAGE_KEYS), key) {
            (Some(Value::String(s)), _) => strip_ext(s).to_owned(),
            (Some(v), _) => v.to_string(),
            (None, Some(k)) => strip_ext(&k).to_owned(),
            (None, None) => return Err(Error::Import("record without an image id".into())),
        };
        let Some(dataset_label) = index.label(&image) else {
            summary.skipped.push(image);
            continue;
        };
        if let Some(d) = pick(obj, DATASET_KEYS) {
            if label(d, classes)? != dataset_label {
                return Err(Error::Import(format!("{image}: dataset label disagrees with validation labels")));
            }
        }
        let groups = match pick(obj, OBJECT_KEYS) {
            Some(v) => objects(v, classes)?,
            None => vec![vec![dataset_label]],
        };
        let blocks: Vec<ObjectBlock> = groups
            .into_iter()
            .filter(|g| !g.is_empty())
            .map(|mut g| {
                let label = g[0];
                g.sort();
                g.dedup();
                ObjectBlock { label, members: g, votes: 0 }
            })
            .collect();
        let main_label = match pick(obj, MAIN_KEYS) {
            Some(v) => label(v, classes)?,
            None => blocks.first().map_or(dataset_label, |b| b.label),
        };
        let flags: Vec<String> = FLAG_KEYS
            .iter()
            .filter(|k| obj.get(**k).is_some_and(|v| v.as_bool() == Some(true)))
            .map(|k| k.to_string())
            .collect();
        let n = blocks.len().max(1);
        let annotation = ImageAnnotation {
            image: image.clone(),
            dataset_label,
            num_objects: n,
            count_confidence: 1.0,
            main_label,
            main_confidence: 1.0,
            multi_object: n >= 2,
            objects: blocks,
            provenance: Provenance::Aggregated,
            main_coerced_from: None,
            violation_cost: 0,
            fallback: false,
        };
        summary.images += 1;
        summary.multi_object += usize::from(annotation.multi_object);
        summary.main_disagreement += usize::from(annotation.main_label != dataset_label);
        for f in &flags {
            *summary.flags.entry(f.clone()).or_default() += 1;
        }
        out.push(ImportedImage { annotation, flags });
    }
    out.sort_by(|a, b| a.annotation.image.cmp(&b.annotation.image));
    Ok((out, summary))
}

pub fn imported_ids(images: &[ImportedImage]) -> Vec<ImageId> {
    images.iter().map(|i| i.annotation.image.clone()).collect()
}
