//! The `radeval` command line: DICOM ingestion, detection evaluation, head
//! decoding, run comparison and reference-block checks.

pub mod commands;
pub mod records;

use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

/// Process exit codes.
pub mod exit {
    pub const SUCCESS: u8 = 0;
    pub const INVARIANT_FAILURE: u8 = 1;
    pub const INPUT_ERROR: u8 = 2;
}

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "RADEVAL_THREADS";

#[derive(Debug, Parser)]
#[command(name = "radeval", version, about = "Chest-radiograph detection evaluation toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse DICOM files into letterboxed PGM images with JSON sidecars.
    Ingest {
        #[arg(long)]
        dicom_dir: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Study label table (id plus four one-hot appearance flags).
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Score predictions against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, default_value_t = radeval_core::metrics::DEFAULT_IOU_THRESHOLD)]
        iou_threshold: f64,
        #[arg(long)]
        out_dir: PathBuf,
        /// Predicted study labels, same layout as the label table.
        #[arg(long, requires = "study_truth")]
        study_pred: Option<PathBuf>,
        #[arg(long, requires = "study_pred")]
        study_truth: Option<PathBuf>,
    },
    /// Decode raw head grids into prediction records.
    Decode {
        #[arg(long)]
        raw: PathBuf,
        #[arg(long)]
        anchors: PathBuf,
        #[arg(long, default_value_t = radeval_core::postprocess::EVAL_CONF_THRESHOLD)]
        conf: f64,
        #[arg(long, default_value_t = radeval_core::postprocess::DEFAULT_NMS_IOU)]
        nms_iou: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank evaluation reports by mAP and print their differences.
    Compare {
        /// `name=REPORT.json`, repeated.
        #[arg(long = "runs", num_args = 1.., required = true)]
        runs: Vec<String>,
        /// Also write the comparison as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the reference-block invariant suite on seeded random weights.
    BlocksCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

/// Runs one command, writing human-readable output to `out`.
///
/// `Ok` carries the exit code; an `Err` is an input error (exit 2).
pub fn run(cli: Cli, out: &mut dyn Write) -> anyhow::Result<u8> {
    match cli.command {
        Command::Ingest {
            dicom_dir,
            out_dir,
            labels,
        } => commands::ingest::run(&dicom_dir, &out_dir, labels.as_deref(), out),
        Command::Eval {
            pred,
            truth,
            iou_threshold,
            out_dir,
            study_pred,
            study_truth,
        } => {
            let study = study_pred.zip(study_truth);
            commands::eval::run(&pred, &truth, iou_threshold, &out_dir, study, out)
        }
        Command::Decode {
            raw,
            anchors,
            conf,
            nms_iou,
            out: path,
        } => commands::decode::run(&raw, &anchors, conf, nms_iou, &path, out),
        Command::Compare { runs, out: path } => commands::compare::run(&runs, path.as_deref(), out),
        Command::BlocksCheck { seed, config } => commands::blocks::run(seed, config.as_deref(), out),
    }
}
