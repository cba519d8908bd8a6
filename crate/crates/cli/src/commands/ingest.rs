use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use radeval_core::ingest::{
    body_part_distribution, encode_pgm, load_study_labels, prepare_image, Appearance, ImageSidecar, ModelInputConfig,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use super::{create_dir, read_text, write_json};
use crate::{exit, THREADS_ENV};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const BODY_PARTS_FILE: &str = "body_parts.json";
pub const IMAGES_DIR: &str = "images";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ManifestEntry {
    Ok {
        path: String,
        image_id: String,
        study_id: String,
        body_part: Option<String>,
        pgm: String,
        sidecar: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label: Option<Appearance>,
    },
    Error {
        path: String,
        kind: String,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub n_ok: usize,
    pub n_errors: usize,
    pub entries: Vec<ManifestEntry>,
    /// Label counts over ingested images, when a label table was given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_counts: Option<BTreeMap<String, usize>>,
}

/// Worker count from the environment, if set to a positive integer.
pub fn thread_cap() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|&n| n > 0)
}

fn dicom_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in WalkDir::new(dir).follow_links(true) {
        let entry = entry.with_context(|| format!("cannot read {}", dir.display()))?;
        let is_dcm = entry.path().extension().is_some_and(|e| e.eq_ignore_ascii_case("dcm"));
        if entry.file_type().is_file() && is_dcm {
            files.push(entry.into_path());
        }
    }
    files.sort();
    Ok(files)
}

/// Output stem for a file: its relative path without extension, separators
/// flattened, so that nested inputs cannot collide.
fn output_stem(rel: &Path) -> String {
    rel.with_extension("")
        .components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("__")
}

struct Processed {
    rel: String,
    result: std::result::Result<(ImageSidecar, String), (String, String)>,
}

fn process(path: &Path, root: &Path, images: &Path) -> Processed {
    let rel_path = path.strip_prefix(root).unwrap_or(path);
    let rel = rel_path.to_string_lossy().replace('\\', "/");
    let stem = output_stem(rel_path);
    let result = (|| -> std::result::Result<(ImageSidecar, String), (String, String)> {
        let bytes = fs::read(path).map_err(|e| ("io".to_owned(), e.to_string()))?;
        let core_err = |e: radeval_core::Error| (e.kind().to_owned(), e.to_string());
        let mut prepared = prepare_image(&bytes, ModelInputConfig::default()).map_err(core_err)?;
        if prepared.sidecar.image_id.is_empty() {
            prepared.sidecar.image_id = stem.clone();
        }
        let pgm = encode_pgm(&prepared.model_image).map_err(core_err)?;
        let io = |e: std::io::Error| ("io".to_owned(), e.to_string());
        fs::write(images.join(format!("{stem}.pgm")), pgm).map_err(io)?;
        let json = serde_json::to_string_pretty(&prepared.sidecar).map_err(|e| ("json".to_owned(), e.to_string()))?;
        fs::write(images.join(format!("{stem}.json")), json + "\n").map_err(io)?;
        Ok((prepared.sidecar, stem))
    })();
    Processed { rel, result }
}

fn label_lookup(labels: &HashMap<String, Appearance>, study_id: &str) -> Option<Appearance> {
    labels
        .get(study_id)
        .or_else(|| labels.get(&format!("{study_id}_study")))
        .copied()
}

pub fn run(dicom_dir: &Path, out_dir: &Path, labels: Option<&Path>, out: &mut dyn Write) -> Result<u8> {
    let labels: Option<HashMap<String, Appearance>> = match labels {
        Some(p) => Some(
            load_study_labels(&read_text(p)?)
                .with_context(|| format!("label table {}", p.display()))?
                .into_iter()
                .map(|l| (l.study_id, l.label))
                .collect(),
        ),
        None => None,
    };
    let files = dicom_files(dicom_dir)?;
    let images = out_dir.join(IMAGES_DIR);
    create_dir(&images)?;

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_cap() {
        pool = pool.num_threads(n);
    }
    let pool = pool.build().context("cannot start worker pool")?;
    let processed: Vec<Processed> = pool.install(|| files.par_iter().map(|f| process(f, dicom_dir, &images)).collect());

    let mut entries = Vec::with_capacity(processed.len());
    let mut parts = Vec::new();
    let mut label_counts = labels.as_ref().map(|_| BTreeMap::new());
    for p in processed {
        match p.result {
            Ok((sidecar, stem)) => {
                let label = labels.as_ref().and_then(|l| label_lookup(l, &sidecar.study_id));
                if let Some(counts) = label_counts.as_mut() {
                    let key = label.map_or("unlabeled", Appearance::name);
                    *counts.entry(key.to_owned()).or_insert(0) += 1;
                }
                parts.push(sidecar.body_part.clone());
                entries.push(ManifestEntry::Ok {
                    path: p.rel,
                    image_id: sidecar.image_id,
                    study_id: sidecar.study_id,
                    body_part: sidecar.body_part,
                    pgm: format!("{IMAGES_DIR}/{stem}.pgm"),
                    sidecar: format!("{IMAGES_DIR}/{stem}.json"),
                    label,
                });
            }
            Err((kind, message)) => entries.push(ManifestEntry::Error {
                path: p.rel,
                kind,
                message,
            }),
        }
    }
    let histogram = body_part_distribution(parts.iter().map(Option::as_deref));
    let n_ok = parts.len();
    let manifest = Manifest {
        n_ok,
        n_errors: entries.len() - n_ok,
        entries,
        label_counts,
    };
    write_json(&out_dir.join(MANIFEST_FILE), &manifest)?;
    write_json(&out_dir.join(BODY_PARTS_FILE), &histogram)?;

    writeln!(out, "{} ok, {} errors", manifest.n_ok, manifest.n_errors)?;
    for e in &manifest.entries {
        if let ManifestEntry::Error { path, kind, message } = e {
            writeln!(out, "  {path}: {kind}: {message}")?;
        }
    }
    for (part, n) in &histogram {
        writeln!(out, "  {part}: {n}")?;
    }
    Ok(exit::SUCCESS)
}
