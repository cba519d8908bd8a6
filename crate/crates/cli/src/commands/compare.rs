use std::collections::HashSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use super::{read_text, write_json};
use crate::exit;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub name: String,
    pub map_score: f64,
    /// Leader's mAP minus this run's; absent for the leader.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_to_leader: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseDelta {
    pub higher: String,
    pub lower: String,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<CompareRow>,
    pub pairwise: Vec<PairwiseDelta>,
}

/// Differences are reported to nine decimals so that binary noise in the
/// subtraction does not leak into the table.
pub fn round_delta(d: f64) -> f64 {
    (d * 1e9).round() / 1e9
}

/// Ranks runs by descending mAP; ties keep input order.
pub fn compare(runs: &[(String, f64)]) -> Result<Comparison> {
    let mut seen = HashSet::new();
    for (name, score) in runs {
        if !seen.insert(name.as_str()) {
            bail!("duplicate run name {name:?}");
        }
        if !(0.0..=1.0).contains(score) {
            bail!("run {name:?} has mAP {score} outside [0, 1]");
        }
    }
    let mut sorted = runs.to_vec();
    sorted.sort_by(|a, b| b.1.total_cmp(&a.1));
    let leader = sorted.first().map(|r| r.1);
    let rows = sorted
        .iter()
        .enumerate()
        .map(|(i, (name, score))| CompareRow {
            name: name.clone(),
            map_score: *score,
            delta_to_leader: leader.filter(|_| i > 0).map(|l| round_delta(l - score)),
        })
        .collect();
    let mut pairwise = Vec::new();
    for (i, hi) in sorted.iter().enumerate() {
        for lo in &sorted[i + 1..] {
            pairwise.push(PairwiseDelta {
                higher: hi.0.clone(),
                lower: lo.0.clone(),
                delta: round_delta(hi.1 - lo.1),
            });
        }
    }
    Ok(Comparison { rows, pairwise })
}

#[derive(Deserialize)]
struct ReportScore {
    map_score: f64,
}

fn parse_run(spec: &str) -> Result<(String, PathBuf)> {
    match spec.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => Ok((name.to_owned(), path.into())),
        _ => bail!("run must be given as name=REPORT.json, got {spec:?}"),
    }
}

pub fn render_table(c: &Comparison) -> String {
    let width = c.rows.iter().map(|r| r.name.len()).max().unwrap_or(0).max(5);
    let mut s = format!("{:<4} {:<width$} {:>10} {:>10}\n", "rank", "model", "mAP@0.5", "delta");
    for (i, r) in c.rows.iter().enumerate() {
        let delta = r.delta_to_leader.map_or("-".to_owned(), |d| d.to_string());
        s += &format!("{:<4} {:<width$} {:>10} {:>10}\n", i + 1, r.name, r.map_score, delta);
    }
    for p in &c.pairwise {
        s += &format!("{} - {} = {}\n", p.higher, p.lower, p.delta);
    }
    s
}

pub fn run(specs: &[String], json_out: Option<&Path>, out: &mut dyn Write) -> Result<u8> {
    let mut runs = Vec::with_capacity(specs.len());
    for spec in specs {
        let (name, path) = parse_run(spec)?;
        let report: ReportScore = serde_json::from_str(&read_text(&path)?)
            .with_context(|| format!("{} is not an eval report", path.display()))?;
        runs.push((name, report.map_score));
    }
    let comparison = compare(&runs)?;
    out.write_all(render_table(&comparison).as_bytes())?;
    if let Some(p) = json_out {
        write_json(p, &comparison)?;
    }
    Ok(exit::SUCCESS)
}
