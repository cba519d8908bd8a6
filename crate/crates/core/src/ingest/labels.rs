//! Study-level labels, image annotations and corpus summaries.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::metrics::{ClassId, GroundTruthBox};

/// The four mutually exclusive study-level appearance classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Appearance {
    Negative,
    Typical,
    Indeterminate,
    Atypical,
}

impl Appearance {
    pub const ALL: [Appearance; 4] = [
        Appearance::Negative,
        Appearance::Typical,
        Appearance::Indeterminate,
        Appearance::Atypical,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Appearance::Negative => "negative",
            Appearance::Typical => "typical",
            Appearance::Indeterminate => "indeterminate",
            Appearance::Atypical => "atypical",
        }
    }
}

impl fmt::Display for Appearance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Appearance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase();
        Self::ALL
            .into_iter()
            .find(|a| key == a.name() || key == a.index().to_string())
            .ok_or_else(|| Error::annotation(format!("unknown appearance class {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyLabel {
    pub study_id: String,
    pub label: Appearance,
}

fn header_key(s: &str) -> String {
    s.chars()
        .filter(char::is_ascii_alphanumeric)
        .map(|c| c.to_ascii_lowercase())
        .collect()
}

/// Parses a study label table: an id column followed by one 0/1 flag
/// column per appearance class, in class order. Exactly one flag per row
/// must be set. Errors name the 1-based line in the input.
pub fn load_study_labels(text: &str) -> Result<Vec<StudyLabel>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| Error::annotation(format!("line 1: {e}")))?
        .clone();
    if header.len() != 5 {
        return Err(Error::annotation(format!(
            "line 1: expected 5 columns, found {}",
            header.len()
        )));
    }
    for (i, a) in Appearance::ALL.iter().enumerate() {
        if !header_key(&header[i + 1]).starts_with(a.name()) {
            return Err(Error::annotation(format!(
                "line 1: column {} is {:?}, expected the {} flag",
                i + 2,
                &header[i + 1],
                a.name()
            )));
        }
    }

    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::annotation(format!("line {line}: {e}"))
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 5 {
            return Err(Error::annotation(format!(
                "line {line}: expected 5 fields, found {}",
                record.len()
            )));
        }
        let study_id = record[0].trim();
        if study_id.is_empty() {
            return Err(Error::annotation(format!("line {line}: empty study id")));
        }
        let mut set = Vec::new();
        for (i, a) in Appearance::ALL.iter().enumerate() {
            match record[i + 1].trim() {
                "1" => set.push(*a),
                "0" => {}
                other => {
                    return Err(Error::annotation(format!(
                        "line {line}: {} flag must be 0 or 1, got {other:?}",
                        a.name()
                    )))
                }
            }
        }
        match set.as_slice() {
            [label] => labels.push(StudyLabel {
                study_id: study_id.to_owned(),
                label: *label,
            }),
            _ => {
                return Err(Error::annotation(format!(
                    "line {line}: expected exactly one class flag, found {}",
                    set.len()
                )))
            }
        }
    }
    Ok(labels)
}

/// Boxes drawn on one image, in pixel coordinates of the source image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageAnnotation {
    pub image_id: String,
    pub study_id: String,
    pub width: u32,
    pub height: u32,
    pub boxes: Vec<(ClassId, BBox)>,
}

impl ImageAnnotation {
    /// Boxes clipped to the image; boxes left with no area are dropped.
    pub fn clamped(&self) -> ImageAnnotation {
        let boxes = self
            .boxes
            .iter()
            .map(|&(c, b)| (c, b.clamp_to(self.width as f64, self.height as f64)))
            .filter(|(_, b)| b.area() > 0.0)
            .collect();
        ImageAnnotation { boxes, ..self.clone() }
    }

    pub fn ground_truth(&self) -> Vec<GroundTruthBox> {
        self.boxes
            .iter()
            .map(|&(class_id, bbox)| GroundTruthBox {
                image_id: self.image_id.clone(),
                class_id,
                bbox,
            })
            .collect()
    }
}

pub const UNKNOWN_BODY_PART: &str = "UNKNOWN";

/// Histogram of body-part values; absent or blank entries count as `UNKNOWN`.
pub fn body_part_distribution<'a, I>(parts: I) -> BTreeMap<String, usize>
where
    I: IntoIterator<Item = Option<&'a str>>,
{
    let mut out = BTreeMap::new();
    for p in parts {
        let key = match p.map(str::trim) {
            Some(s) if !s.is_empty() => s.to_owned(),
            _ => UNKNOWN_BODY_PART.to_owned(),
        };
        *out.entry(key).or_insert(0) += 1;
    }
    out
}
