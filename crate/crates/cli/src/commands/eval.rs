use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use radeval_core::ingest::{load_study_labels, Appearance};
use radeval_core::metrics::{confusion_matrix, evaluate, ClassPrecisionRecall, ConfusionMatrix, PrCurve};
use serde::{Deserialize, Serialize};

use super::{create_dir, file_safe, read_text, write_json};
use crate::exit;
use crate::records::{parse_predictions, parse_truth, to_core};

pub const REPORT_FILE: &str = "report.json";

/// The machine-readable eval report; class keys are class names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub iou_threshold: f64,
    pub map_score: f64,
    pub per_class_ap: BTreeMap<String, f64>,
    pub n_detections: usize,
    pub n_ground_truth: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub study: Option<StudySummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub n_studies: usize,
    /// Rows are true classes, columns predicted, in `classes` order.
    pub classes: Vec<String>,
    pub confusion: ConfusionMatrix,
    pub per_class: BTreeMap<String, ClassPrecisionRecall>,
}

pub fn pr_curve_csv(curve: &PrCurve) -> String {
    let mut s = String::from("recall,precision\n");
    for p in &curve.points {
        s += &format!("{},{}\n", p.recall, p.precision);
    }
    s
}

/// Parses a PR-curve CSV written by [`pr_curve_csv`] back into points.
pub fn parse_pr_curve_csv(text: &str) -> Result<Vec<(f64, f64)>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    reader
        .deserialize::<(f64, f64)>()
        .map(|r| r.map_err(Into::into))
        .collect()
}

pub fn evaluate_texts(pred: &str, truth: &str, iou_threshold: f64) -> Result<(EvalSummary, BTreeMap<String, PrCurve>)> {
    let preds = parse_predictions(pred).context("predictions")?;
    let truth = parse_truth(truth).context("ground truth")?;
    if truth.is_empty() {
        bail!("ground truth: no records");
    }
    let (index, dets, gts) = to_core(&preds, &truth)?;
    let report = evaluate(&dets, &gts, iou_threshold)?;
    let per_class_ap = report
        .per_class_ap
        .iter()
        .map(|(&c, &ap)| (index.name(c).to_owned(), ap))
        .collect();
    let curves = report
        .curves
        .into_iter()
        .map(|(c, curve)| (index.name(c).to_owned(), curve))
        .collect();
    Ok((
        EvalSummary {
            iou_threshold: report.iou_threshold,
            map_score: report.map_score,
            per_class_ap,
            n_detections: report.n_detections,
            n_ground_truth: report.n_ground_truth,
            study: None,
        },
        curves,
    ))
}

/// Confusion matrix over studies present in both tables.
pub fn study_summary(pred: &str, truth: &str) -> Result<StudySummary> {
    let pred = load_study_labels(pred).context("study predictions")?;
    let truth = load_study_labels(truth).context("study truth")?;
    let predicted: HashMap<&str, Appearance> = pred.iter().map(|l| (l.study_id.as_str(), l.label)).collect();
    let mut p = Vec::with_capacity(truth.len());
    let mut t = Vec::with_capacity(truth.len());
    for label in &truth {
        let Some(&guess) = predicted.get(label.study_id.as_str()) else {
            bail!("study {} has no prediction", label.study_id);
        };
        p.push(guess.index());
        t.push(label.label.index());
    }
    let confusion = confusion_matrix(&p, &t)?;
    let per_class = Appearance::ALL
        .iter()
        .zip(confusion.precision_recall())
        .map(|(a, pr)| (a.name().to_owned(), pr))
        .collect();
    Ok(StudySummary {
        n_studies: truth.len(),
        classes: Appearance::ALL.iter().map(|a| a.name().to_owned()).collect(),
        confusion,
        per_class,
    })
}

pub fn run(
    pred: &Path,
    truth: &Path,
    iou_threshold: f64,
    out_dir: &Path,
    study: Option<(PathBuf, PathBuf)>,
    out: &mut dyn Write,
) -> Result<u8> {
    let (mut summary, curves) = evaluate_texts(&read_text(pred)?, &read_text(truth)?, iou_threshold)?;
    if let Some((sp, st)) = study {
        summary.study = Some(study_summary(&read_text(&sp)?, &read_text(&st)?)?);
    }
    create_dir(out_dir)?;
    write_json(&out_dir.join(REPORT_FILE), &summary)?;
    for (name, curve) in &curves {
        let path = out_dir.join(format!("pr_{}.csv", file_safe(name)));
        fs::write(&path, pr_curve_csv(curve)).with_context(|| format!("cannot write {}", path.display()))?;
    }
    writeln!(out, "mAP@{} = {}", summary.iou_threshold, summary.map_score)?;
    for (name, ap) in &summary.per_class_ap {
        writeln!(out, "  AP[{name}] = {ap}")?;
    }
    writeln!(
        out,
        "{} detections, {} ground-truth boxes",
        summary.n_detections, summary.n_ground_truth
    )?;
    if let Some(s) = &summary.study {
        writeln!(
            out,
            "study confusion over {} studies (rows truth, cols pred):",
            s.n_studies
        )?;
        for (name, row) in s.classes.iter().zip(s.confusion.cells) {
            writeln!(out, "  {name:<14}{row:?}")?;
        }
    }
    Ok(exit::SUCCESS)
}
