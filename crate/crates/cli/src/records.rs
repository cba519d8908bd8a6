//! Prediction and ground-truth record files.
//!
//! Both are comma-separated with a fixed header. Coordinates are `xyxy`
//! pixels in the original image. Every parse error names its 1-based line.

use std::collections::BTreeSet;
use std::io::Write;

use anyhow::{bail, Context, Result};
use radeval_core::metrics::ClassId;
use radeval_core::{BBox, Detection, GroundTruthBox};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub const PREDICTION_HEADER: [&str; 7] = ["image_id", "class", "score", "x_min", "y_min", "x_max", "y_max"];
pub const TRUTH_HEADER: [&str; 6] = ["image_id", "class", "x_min", "y_min", "x_max", "y_max"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub image_id: String,
    pub class: String,
    pub score: f64,
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub image_id: String,
    pub class: String,
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl PredictionRecord {
    pub fn bbox(&self) -> Result<BBox> {
        Ok(BBox::new(self.x_min, self.y_min, self.x_max, self.y_max)?)
    }
}

impl TruthRecord {
    pub fn bbox(&self) -> Result<BBox> {
        Ok(BBox::new(self.x_min, self.y_min, self.x_max, self.y_max)?)
    }
}

fn read_records<T: DeserializeOwned>(
    text: &str,
    header: &[&str],
    validate: impl Fn(&T) -> Result<()>,
) -> Result<Vec<T>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let found = reader.headers().context("line 1: unreadable header")?.clone();
    if found.iter().ne(header.iter().copied()) {
        bail!(
            "line 1: expected header `{}`, found `{}`",
            header.join(","),
            found.iter().collect::<Vec<_>>().join(",")
        );
    }
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            anyhow::anyhow!("line {line}: {e}")
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let rec: T = row
            .deserialize(Some(&found))
            .map_err(|e| anyhow::anyhow!("line {line}: {e}"))?;
        validate(&rec).with_context(|| format!("line {line}"))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn parse_predictions(text: &str) -> Result<Vec<PredictionRecord>> {
    read_records(text, &PREDICTION_HEADER, |r: &PredictionRecord| {
        if !(0.0..=1.0).contains(&r.score) {
            bail!("score {} outside [0, 1]", r.score);
        }
        if r.image_id.is_empty() || r.class.is_empty() {
            bail!("empty image_id or class");
        }
        r.bbox().map(drop)
    })
}

pub fn parse_truth(text: &str) -> Result<Vec<TruthRecord>> {
    read_records(text, &TRUTH_HEADER, |r: &TruthRecord| {
        if r.image_id.is_empty() || r.class.is_empty() {
            bail!("empty image_id or class");
        }
        r.bbox().map(drop)
    })
}

pub fn write_predictions<W: Write>(records: &[PredictionRecord], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(PREDICTION_HEADER)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_truth<W: Write>(records: &[TruthRecord], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(TRUTH_HEADER)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Class names mapped to dense ids in sorted name order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ClassIndex {
    names: Vec<String>,
}

impl ClassIndex {
    pub fn from_names<'a>(names: impl IntoIterator<Item = &'a str>) -> Self {
        let set: BTreeSet<&str> = names.into_iter().collect();
        ClassIndex {
            names: set.into_iter().map(str::to_owned).collect(),
        }
    }

    pub fn id(&self, name: &str) -> Option<ClassId> {
        self.names
            .binary_search_by(|n| n.as_str().cmp(name))
            .ok()
            .map(|i| i as ClassId)
    }

    pub fn name(&self, id: ClassId) -> &str {
        &self.names[id as usize]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// Converts validated records into core detections and ground truth,
/// assigning class ids over the union of class names.
pub fn to_core(
    preds: &[PredictionRecord],
    truth: &[TruthRecord],
) -> Result<(ClassIndex, Vec<Detection>, Vec<GroundTruthBox>)> {
    let index = ClassIndex::from_names(
        preds
            .iter()
            .map(|r| r.class.as_str())
            .chain(truth.iter().map(|r| r.class.as_str())),
    );
    let id = |c: &str| index.id(c).expect("class collected above");
    let dets = preds
        .iter()
        .map(|r| Ok(Detection::new(r.image_id.clone(), id(&r.class), r.score, r.bbox()?)?))
        .collect::<Result<_>>()?;
    let gts = truth
        .iter()
        .map(|r| Ok(GroundTruthBox::new(r.image_id.clone(), id(&r.class), r.bbox()?)))
        .collect::<Result<_>>()?;
    Ok((index, dets, gts))
}
