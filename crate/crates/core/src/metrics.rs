//! Detection matching, precision/recall curves, AP/mAP and the study-level
//! confusion matrix.
//!
//! Matching is greedy: detections are visited in descending score order
//! (stable on ties) and each claims the unmatched same-image, same-class
//! ground truth with the highest IoU, provided that IoU reaches the
//! threshold. AP is the area under the monotone precision envelope taken
//! over every recall step.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};

pub type ClassId = u32;

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

/// Number of study-level appearance classes.
pub const STUDY_CLASSES: usize = 4;

/// A scored prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image_id: String,
    pub class_id: ClassId,
    pub score: f64,
    pub bbox: BBox,
}

impl Detection {
    pub fn new(image_id: impl Into<String>, class_id: ClassId, score: f64, bbox: BBox) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::annotation(format!("score {score} outside [0, 1]")));
        }
        Ok(Detection {
            image_id: image_id.into(),
            class_id,
            score,
            bbox,
        })
    }
}

/// A reference annotation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthBox {
    pub image_id: String,
    pub class_id: ClassId,
    pub bbox: BBox,
}

impl GroundTruthBox {
    pub fn new(image_id: impl Into<String>, class_id: ClassId, bbox: BBox) -> Self {
        GroundTruthBox {
            image_id: image_id.into(),
            class_id,
            bbox,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatchKind {
    TruePositive,
    FalsePositive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchOutcome {
    /// Index into the detection slice.
    pub detection: usize,
    pub kind: MatchKind,
    /// Index into the ground-truth slice for true positives.
    pub ground_truth: Option<usize>,
}

impl MatchOutcome {
    pub fn is_tp(&self) -> bool {
        self.kind == MatchKind::TruePositive
    }
}

/// Detection indices sorted by descending score; ties keep input order.
pub fn score_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
    order
}

/// Greedy one-to-one matching. Outcomes come back in processing order,
/// i.e. descending score.
///
/// `iou_threshold` is inclusive: a pair at exactly the threshold matches.
pub fn match_detections(dets: &[Detection], gts: &[GroundTruthBox], iou_threshold: f64) -> Vec<MatchOutcome> {
    let mut buckets: HashMap<(&str, ClassId), Vec<usize>> = HashMap::new();
    for (i, g) in gts.iter().enumerate() {
        buckets.entry((g.image_id.as_str(), g.class_id)).or_default().push(i);
    }
    let mut taken = vec![false; gts.len()];

    score_order(dets)
        .into_iter()
        .map(|d| {
            let det = &dets[d];
            let mut best: Option<(usize, f64)> = None;
            if let Some(cands) = buckets.get(&(det.image_id.as_str(), det.class_id)) {
                for &g in cands {
                    if taken[g] {
                        continue;
                    }
                    let v = iou(&det.bbox, &gts[g].bbox);
                    if v >= iou_threshold && best.is_none_or(|(_, bv)| v > bv) {
                        best = Some((g, v));
                    }
                }
            }
            match best {
                Some((g, _)) => {
                    taken[g] = true;
                    MatchOutcome {
                        detection: d,
                        kind: MatchKind::TruePositive,
                        ground_truth: Some(g),
                    }
                }
                None => MatchOutcome {
                    detection: d,
                    kind: MatchKind::FalsePositive,
                    ground_truth: None,
                },
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
}

/// Precision/recall pairs, one per detection in score order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
}

impl PrCurve {
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }
}

/// Cumulative precision/recall over outcomes already in score order.
pub fn pr_curve(outcomes: &[MatchOutcome], n_gt: usize) -> PrCurve {
    let mut tp = 0usize;
    let points = outcomes
        .iter()
        .enumerate()
        .map(|(k, o)| {
            if o.is_tp() {
                tp += 1;
            }
            PrPoint {
                recall: if n_gt == 0 { 0.0 } else { tp as f64 / n_gt as f64 },
                precision: tp as f64 / (k + 1) as f64,
            }
        })
        .collect();
    PrCurve { points }
}

/// Area under the all-points precision envelope.
pub fn average_precision(curve: &PrCurve) -> f64 {
    let pts = &curve.points;
    let mut envelope = vec![0.0f64; pts.len()];
    let mut running = 0.0f64;
    for (i, p) in pts.iter().enumerate().rev() {
        running = running.max(p.precision);
        envelope[i] = running;
    }
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    for (p, env) in pts.iter().zip(&envelope) {
        ap += (p.recall - prev_recall) * env;
        prev_recall = p.recall;
    }
    ap
}

/// Unweighted mean of per-class AP. The map's key order fixes the summation
/// order, so the result does not depend on insertion order.
pub fn mean_average_precision<K: Ord>(per_class: &BTreeMap<K, f64>) -> Result<f64> {
    if per_class.is_empty() {
        return Err(Error::UndefinedMetric("mAP of zero classes".into()));
    }
    if let Some(bad) = per_class.values().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::contract(format!("AP value {bad} outside [0, 1]")));
    }
    Ok(per_class.values().sum::<f64>() / per_class.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub iou_threshold: f64,
    pub per_class_ap: BTreeMap<ClassId, f64>,
    pub map_score: f64,
    pub n_detections: usize,
    pub n_ground_truth: usize,
    pub curves: BTreeMap<ClassId, PrCurve>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confusion: Option<ConfusionMatrix>,
}

/// Full per-class pipeline: match, PR curve, AP, then the mean.
///
/// Classes that occur on only one side get AP 0. Classes absent from both
/// inputs never enter the mean.
pub fn evaluate(dets: &[Detection], gts: &[GroundTruthBox], iou_threshold: f64) -> Result<EvalReport> {
    if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
        return Err(Error::contract(format!("IoU threshold {iou_threshold} outside (0, 1]")));
    }
    let classes: BTreeSet<ClassId> = dets
        .iter()
        .map(|d| d.class_id)
        .chain(gts.iter().map(|g| g.class_id))
        .collect();

    let mut per_class_ap = BTreeMap::new();
    let mut curves = BTreeMap::new();
    for &class in &classes {
        let class_dets: Vec<Detection> = dets.iter().filter(|d| d.class_id == class).cloned().collect();
        let class_gts: Vec<GroundTruthBox> = gts.iter().filter(|g| g.class_id == class).cloned().collect();
        let outcomes = match_detections(&class_dets, &class_gts, iou_threshold);
        let curve = pr_curve(&outcomes, class_gts.len());
        let ap = if class_gts.is_empty() {
            0.0
        } else {
            average_precision(&curve)
        };
        per_class_ap.insert(class, ap);
        curves.insert(class, curve);
    }

    let map_score = mean_average_precision(&per_class_ap)?;
    Ok(EvalReport {
        iou_threshold,
        per_class_ap,
        map_score,
        n_detections: dets.len(),
        n_ground_truth: gts.len(),
        curves,
        confusion: None,
    })
}

/// `cells[truth][pred]` counts over the four study-level classes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub cells: [[u64; STUDY_CLASSES]; STUDY_CLASSES],
}

/// Precision and recall for one class; `None` marks a 0/0 ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassPrecisionRecall {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

impl ConfusionMatrix {
    pub fn row_sum(&self, truth: usize) -> u64 {
        self.cells[truth].iter().sum()
    }

    pub fn col_sum(&self, pred: usize) -> u64 {
        self.cells.iter().map(|r| r[pred]).sum()
    }

    pub fn total(&self) -> u64 {
        self.cells.iter().flatten().sum()
    }

    pub fn precision_recall(&self) -> [ClassPrecisionRecall; STUDY_CLASSES] {
        std::array::from_fn(|c| {
            let hit = self.cells[c][c] as f64;
            let ratio = |den: u64| (den > 0).then(|| hit / den as f64);
            ClassPrecisionRecall {
                precision: ratio(self.col_sum(c)),
                recall: ratio(self.row_sum(c)),
            }
        })
    }
}

pub fn confusion_matrix(pred: &[usize], truth: &[usize]) -> Result<ConfusionMatrix> {
    if pred.len() != truth.len() {
        return Err(Error::contract(format!(
            "prediction/truth length mismatch: {} vs {}",
            pred.len(),
            truth.len()
        )));
    }
    let mut m = ConfusionMatrix::default();
    for (i, (&p, &t)) in pred.iter().zip(truth).enumerate() {
        if p >= STUDY_CLASSES || t >= STUDY_CLASSES {
            return Err(Error::annotation(format!(
                "sample {i}: class out of range (pred {p}, truth {t})"
            )));
        }
        m.cells[t][p] += 1;
    }
    Ok(m)
}

pub fn precision_recall_from_confusion(m: &ConfusionMatrix) -> [ClassPrecisionRecall; STUDY_CLASSES] {
    m.precision_recall()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bx(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    fn det(img: &str, class: ClassId, score: f64, b: BBox) -> Detection {
        Detection::new(img, class, score, b).unwrap()
    }

    fn outcome(kind: MatchKind) -> MatchOutcome {
        MatchOutcome {
            detection: 0,
            kind,
            ground_truth: None,
        }
    }
    use MatchKind::{FalsePositive as FP, TruePositive as TP};

    #[test]
    fn greedy_second_detection_on_same_gt_is_fp() {
        let gt = GroundTruthBox::new("a", 0, bx(0., 0., 10., 10.));
        // IoU 0.8 and 0.6 against the GT
        let d1 = det("a", 0, 0.9, bx(0., 0., 10., 8.));
        let d2 = det("a", 0, 0.7, bx(0., 0., 10., 6.));
        assert!((iou(&d1.bbox, &gt.bbox) - 0.8).abs() < 1e-12);
        assert!((iou(&d2.bbox, &gt.bbox) - 0.6).abs() < 1e-12);
        // input order reversed so sorting matters
        let out = match_detections(&[d2, d1], &[gt], 0.5);
        assert_eq!(out[0].detection, 1);
        assert_eq!(out[0].kind, TP);
        assert_eq!(out[0].ground_truth, Some(0));
        assert_eq!(out[1].kind, FP);
    }

    #[test]
    fn threshold_is_inclusive() {
        let gt = GroundTruthBox::new("a", 0, bx(0., 0., 10., 10.));
        let d = det("a", 0, 0.5, bx(0., 0., 10., 5.));
        assert_eq!(iou(&d.bbox, &gt.bbox), 0.5);
        assert_eq!(match_detections(&[d], &[gt], 0.5)[0].kind, TP);
    }

    #[test]
    fn other_image_or_class_is_fp() {
        let gt = GroundTruthBox::new("a", 0, bx(0., 0., 10., 10.));
        let wrong_img = det("b", 0, 0.9, bx(0., 0., 10., 10.));
        let wrong_cls = det("a", 1, 0.8, bx(0., 0., 10., 10.));
        let out = match_detections(&[wrong_img, wrong_cls], &[gt], 0.5);
        assert!(out.iter().all(|o| o.kind == FP));
        assert!(match_detections(&[], &[], 0.5).is_empty());
    }

    #[test]
    fn picks_highest_iou_ground_truth() {
        let gts = vec![
            GroundTruthBox::new("a", 0, bx(0., 0., 10., 10.)),
            GroundTruthBox::new("a", 0, bx(1., 0., 11., 10.)),
        ];
        let d = det("a", 0, 0.9, bx(1., 0., 11., 10.));
        assert_eq!(match_detections(&[d], &gts, 0.5)[0].ground_truth, Some(1));
    }

    #[test]
    fn equal_scores_keep_input_order() {
        let gt = GroundTruthBox::new("a", 0, bx(0., 0., 10., 10.));
        let d0 = det("a", 0, 0.5, bx(0., 0., 10., 10.));
        let d1 = det("a", 0, 0.5, bx(0., 0., 10., 10.));
        let out = match_detections(&[d0, d1], &[gt], 0.5);
        assert_eq!(out[0].detection, 0);
        assert_eq!(out[0].kind, TP);
    }

    #[test]
    fn pr_curve_hand_cases() {
        let c = pr_curve(&[outcome(TP)], 1);
        assert_eq!(
            c.points,
            vec![PrPoint {
                recall: 1.0,
                precision: 1.0
            }]
        );
        let c = pr_curve(&[outcome(FP), outcome(TP)], 1);
        assert_eq!(
            c.points,
            vec![
                PrPoint {
                    recall: 0.0,
                    precision: 0.0
                },
                PrPoint {
                    recall: 1.0,
                    precision: 0.5
                }
            ]
        );
        assert!(pr_curve(&[], 5).is_empty());
        let c = pr_curve(&[outcome(FP), outcome(FP)], 0);
        assert!(c.points.iter().all(|p| p.recall == 0.0));
    }

    #[test]
    fn ap_hand_cases() {
        assert_eq!(average_precision(&pr_curve(&[outcome(TP)], 1)), 1.0);
        assert_eq!(average_precision(&pr_curve(&[outcome(FP), outcome(TP)], 1)), 0.5);
        let ap = average_precision(&pr_curve(&[outcome(TP), outcome(FP), outcome(TP)], 2));
        assert!((ap - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-12);
        assert_eq!(average_precision(&PrCurve::default()), 0.0);
    }

    #[test]
    fn map_hand_cases() {
        let m = BTreeMap::from([("opacity", 0.623)]);
        assert_eq!(mean_average_precision(&m).unwrap(), 0.623);
        let m = BTreeMap::from([("a", 1.0), ("b", 0.0)]);
        assert_eq!(mean_average_precision(&m).unwrap(), 0.5);
        let m = BTreeMap::from([("a", 0.2), ("b", 0.3), ("c", 0.4)]);
        assert!((mean_average_precision(&m).unwrap() - 0.3).abs() < 1e-12);
        let empty: BTreeMap<&str, f64> = BTreeMap::new();
        assert!(matches!(mean_average_precision(&empty), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn evaluate_perfect_and_empty() {
        let gts = vec![
            GroundTruthBox::new("a", 0, bx(0., 0., 10., 10.)),
            GroundTruthBox::new("b", 1, bx(5., 5., 10., 10.)),
        ];
        let dets: Vec<Detection> = gts.iter().map(|g| det(&g.image_id, g.class_id, 1.0, g.bbox)).collect();
        assert_eq!(evaluate(&dets, &gts, 0.5).unwrap().map_score, 1.0);
        let r = evaluate(&[], &gts, 0.5).unwrap();
        assert_eq!(r.map_score, 0.0);
        assert_eq!(r.per_class_ap.len(), 2);
        assert!(evaluate(&[], &[], 0.5).is_err());
        assert!(evaluate(&dets, &gts, 0.0).is_err());
    }

    #[test]
    fn detection_only_class_scores_zero() {
        let gts = vec![GroundTruthBox::new("a", 0, bx(0., 0., 10., 10.))];
        let dets = vec![
            det("a", 0, 0.9, bx(0., 0., 10., 10.)),
            det("a", 2, 0.9, bx(0., 0., 10., 10.)),
        ];
        let r = evaluate(&dets, &gts, 0.5).unwrap();
        assert_eq!(r.per_class_ap[&2], 0.0);
        assert_eq!(r.map_score, 0.5);
    }

    #[test]
    fn confusion_hand_cases() {
        let labels = [0, 1, 1, 2, 3, 3, 3];
        let m = confusion_matrix(&labels, &labels).unwrap();
        assert_eq!(m.cells[3][3], 3);
        assert_eq!(m.total(), 7);
        assert!(m
            .precision_recall()
            .iter()
            .all(|pr| pr.precision == Some(1.0) && pr.recall == Some(1.0)));

        let m = confusion_matrix(&[0; 7], &labels).unwrap();
        for t in 0..4 {
            assert_eq!(m.cells[t][0], labels.iter().filter(|&&l| l == t).count() as u64);
            assert!(m.cells[t][1..].iter().all(|&c| c == 0));
        }

        let m = confusion_matrix(&[], &[]).unwrap();
        assert_eq!(m, ConfusionMatrix::default());
        assert!(m
            .precision_recall()
            .iter()
            .all(|pr| pr.precision.is_none() && pr.recall.is_none()));

        assert!(matches!(
            confusion_matrix(&[4], &[0]),
            Err(Error::MalformedAnnotation(_))
        ));
        assert!(confusion_matrix(&[0], &[]).is_err());
    }

    #[test]
    fn precision_recall_from_small_matrix() {
        let mut m = ConfusionMatrix::default();
        m.cells[0][0] = 1;
        m.cells[0][1] = 1;
        m.cells[1][1] = 2;
        let pr = precision_recall_from_confusion(&m);
        assert_eq!(pr[0].precision, Some(1.0));
        assert_eq!(pr[0].recall, Some(0.5));
        assert!((pr[1].precision.unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(pr[1].recall, Some(1.0));
        assert_eq!(pr[2].precision, None);
    }

    fn arb_scene() -> impl Strategy<Value = (Vec<Detection>, Vec<GroundTruthBox>)> {
        let boxes = |n| prop::collection::vec((0u8..3, 0u32..2, 0u32..8, 0u32..8, 1u32..6, 1u32..6, 0u32..10), 0..n);
        (boxes(16), boxes(10)).prop_map(|(d, g)| {
            let mk = |x: u32, y: u32, w: u32, h: u32| bx(x as f64, y as f64, (x + w) as f64, (y + h) as f64);
            let dets = d
                .into_iter()
                .map(|(img, c, x, y, w, h, s)| det(&format!("i{img}"), c, s as f64 / 10.0, mk(x, y, w, h)))
                .collect();
            let gts = g
                .into_iter()
                .map(|(img, c, x, y, w, h, _)| GroundTruthBox::new(format!("i{img}"), c, mk(x, y, w, h)))
                .collect();
            (dets, gts)
        })
    }

    proptest! {
        #[test]
        fn matching_is_one_to_one((dets, gts) in arb_scene()) {
            let out = match_detections(&dets, &gts, 0.5);
            let tps: Vec<usize> = out.iter().filter_map(|o| o.ground_truth).collect();
            let unique: BTreeSet<usize> = tps.iter().copied().collect();
            prop_assert_eq!(tps.len(), unique.len());
            prop_assert!(tps.len() <= dets.len().min(gts.len()));
        }

        #[test]
        fn dropping_lowest_score_keeps_other_flags((dets, gts) in arb_scene()) {
            prop_assume!(!dets.is_empty());
            let order = score_order(&dets);
            let lowest = *order.last().unwrap();
            let full = match_detections(&dets, &gts, 0.5);
            let mut fewer = dets.clone();
            fewer.remove(lowest);
            let part = match_detections(&fewer, &gts, 0.5);
            for (a, b) in full.iter().zip(&part) {
                prop_assert_eq!(a.kind, b.kind);
            }
        }

        #[test]
        fn ap_in_unit_interval((dets, gts) in arb_scene()) {
            prop_assume!(!dets.is_empty() || !gts.is_empty());
            let r = evaluate(&dets, &gts, 0.5).unwrap();
            for ap in r.per_class_ap.values() {
                prop_assert!((0.0..=1.0 + 1e-12).contains(ap));
            }
        }

        #[test]
        fn confusion_margins(pairs in prop::collection::vec((0usize..4, 0usize..4), 0..50)) {
            let (pred, truth): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
            let m = confusion_matrix(&pred, &truth).unwrap();
            for c in 0..4 {
                prop_assert_eq!(m.row_sum(c), truth.iter().filter(|&&t| t == c).count() as u64);
                prop_assert_eq!(m.col_sum(c), pred.iter().filter(|&&p| p == c).count() as u64);
            }
        }

        #[test]
        fn map_ignores_insertion_order(vals in prop::collection::vec(0.0..=1.0f64, 1..8)) {
            let fwd: BTreeMap<usize, f64> = vals.iter().copied().enumerate().collect();
            let mut rev = BTreeMap::new();
            for (k, v) in vals.iter().copied().enumerate().rev() {
                rev.insert(k, v);
            }
            prop_assert_eq!(mean_average_precision(&fwd).unwrap(), mean_average_precision(&rev).unwrap());
        }
    }
}
