//! Shared helpers for the CLI integration and acceptance tests: a
//! brute-force evaluation oracle, seeded instance generators, fixture
//! builders and a runner for the `radeval` binary.

#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use radeval_core::ingest::{DicomWriter, Tag};
use rand::Rng;

pub mod oracle {
    //! Naive evaluation written from the protocol description alone:
    //! quadratic matching over plain tuples and a suffix-maximum envelope.

    /// `(image, class, score, [x0, y0, x1, y1])`
    pub type Det = (usize, u32, f64, [f64; 4]);
    /// `(image, class, [x0, y0, x1, y1])`
    pub type Gt = (usize, u32, [f64; 4]);

    pub fn iou(a: [f64; 4], b: [f64; 4]) -> f64 {
        let iw = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
        let ih = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
        let inter = iw * ih;
        let area = |r: [f64; 4]| (r[2] - r[0]) * (r[3] - r[1]);
        let union = area(a) + area(b) - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    /// TP flags for one class, in descending-score order.
    fn flags(dets: &[Det], gts: &[Gt], class: u32, thr: f64) -> Vec<bool> {
        let mut order: Vec<&Det> = dets.iter().filter(|d| d.1 == class).collect();
        // insertion sort: stable by construction
        for i in 1..order.len() {
            let mut j = i;
            while j > 0 && order[j - 1].2 < order[j].2 {
                order.swap(j - 1, j);
                j -= 1;
            }
        }
        let mut used = vec![false; gts.len()];
        let mut out = Vec::new();
        for d in order {
            let mut best: Option<usize> = None;
            let mut best_iou = -1.0;
            for (g, gt) in gts.iter().enumerate() {
                if used[g] || gt.0 != d.0 || gt.1 != class {
                    continue;
                }
                let v = iou(d.3, gt.2);
                if v >= thr && v > best_iou {
                    best = Some(g);
                    best_iou = v;
                }
            }
            if let Some(g) = best {
                used[g] = true;
            }
            out.push(best.is_some());
        }
        out
    }

    pub fn average_precision(tp: &[bool], n_gt: usize) -> f64 {
        if n_gt == 0 {
            return 0.0;
        }
        let mut recall = Vec::new();
        let mut precision = Vec::new();
        let mut hits = 0usize;
        for (k, &t) in tp.iter().enumerate() {
            hits += t as usize;
            recall.push(hits as f64 / n_gt as f64);
            precision.push(hits as f64 / (k + 1) as f64);
        }
        let mut ap = 0.0;
        let mut prev_recall = 0.0;
        for k in 0..tp.len() {
            let envelope = precision[k..].iter().cloned().fold(0.0, f64::max);
            ap += (recall[k] - prev_recall) * envelope;
            prev_recall = recall[k];
        }
        ap
    }

    /// Per-class AP over the union of classes, and their mean.
    pub fn evaluate(dets: &[Det], gts: &[Gt], thr: f64) -> (Vec<(u32, f64)>, f64) {
        let mut classes: Vec<u32> = dets.iter().map(|d| d.1).chain(gts.iter().map(|g| g.1)).collect();
        classes.sort();
        classes.dedup();
        let per: Vec<(u32, f64)> = classes
            .iter()
            .map(|&c| {
                let n_gt = gts.iter().filter(|g| g.1 == c).count();
                (c, average_precision(&flags(dets, gts, c, thr), n_gt))
            })
            .collect();
        let mean = per.iter().map(|p| p.1).sum::<f64>() / per.len() as f64;
        (per, mean)
    }
}

/// A random box on a coarse grid so that overlaps and exact ties are common.
pub fn grid_box<R: Rng>(rng: &mut R) -> [f64; 4] {
    let x0 = rng.random_range(0..16) as f64 * 4.0;
    let y0 = rng.random_range(0..16) as f64 * 4.0;
    let w = rng.random_range(1..8) as f64 * 4.0;
    let h = rng.random_range(1..8) as f64 * 4.0;
    [x0, y0, x0 + w, y0 + h]
}

/// A random evaluation instance: up to 10 images, 20 boxes per side and 3
/// classes. Scores are quantized to tenths to provoke ties. Ground truth is
/// never empty; detections are often jittered copies of ground truth.
pub fn random_instance<R: Rng>(rng: &mut R) -> (Vec<oracle::Det>, Vec<oracle::Gt>) {
    let n_img = rng.random_range(1..=10);
    let n_cls = rng.random_range(1..=3u32);
    let n_gt = rng.random_range(1..=20);
    let n_det = rng.random_range(0..=20);
    let gts: Vec<oracle::Gt> = (0..n_gt)
        .map(|_| (rng.random_range(0..n_img), rng.random_range(0..n_cls), grid_box(rng)))
        .collect();
    let dets = (0..n_det)
        .map(|_| {
            let score = rng.random_range(0..=10) as f64 / 10.0;
            if rng.random_bool(0.6) {
                let g = gts[rng.random_range(0..gts.len())];
                let dx = rng.random_range(-2..=2) as f64 * 2.0;
                let dy = rng.random_range(-2..=2) as f64 * 2.0;
                let b = [g.2[0] + dx, g.2[1] + dy, g.2[2] + dx, g.2[3] + dy];
                let class = if rng.random_bool(0.8) {
                    g.1
                } else {
                    rng.random_range(0..n_cls)
                };
                (g.0, class, score, b)
            } else {
                (
                    rng.random_range(0..n_img),
                    rng.random_range(0..n_cls),
                    score,
                    grid_box(rng),
                )
            }
        })
        .collect();
    (dets, gts)
}

pub fn prediction_csv(dets: &[oracle::Det]) -> String {
    let mut s = String::from("image_id,class,score,x_min,y_min,x_max,y_max\n");
    for (img, c, score, b) in dets {
        s += &format!("img{img},c{c},{score},{},{},{},{}\n", b[0], b[1], b[2], b[3]);
    }
    s
}

pub fn truth_csv(gts: &[oracle::Gt]) -> String {
    let mut s = String::from("image_id,class,x_min,y_min,x_max,y_max\n");
    for (img, c, b) in gts {
        s += &format!("img{img},c{c},{},{},{},{}\n", b[0], b[1], b[2], b[3]);
    }
    s
}

pub const LABEL_HEADER: &str =
    "id,Negative for Pneumonia,Typical Appearance,Indeterminate Appearance,Atypical Appearance\n";

/// The 2×2 16-bit fixture with pixels `[0, 100, 200, 300]`.
pub fn fixture_2x2(photometric: &str, body_part: &str, sop: &str) -> Vec<u8> {
    DicomWriter::explicit_le()
        .text(Tag::SOP_INSTANCE_UID, b"UI", sop)
        .text(Tag::STUDY_INSTANCE_UID, b"UI", "1.2.3")
        .text(Tag::BODY_PART_EXAMINED, b"CS", body_part)
        .image(2, 2, 16, photometric, &[0, 100, 200, 300])
        .build()
}

pub fn radeval(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_radeval"))
        .args(args)
        .output()
        .expect("radeval binary runs")
}

pub fn radeval_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_radeval"));
    cmd.args(args);
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("radeval binary runs")
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}
