use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use radeval_core::refnet::check::{run_block_checks, BlocksCheckConfig};

use super::read_text;
use crate::exit;

pub fn load_config(path: Option<&Path>) -> Result<BlocksCheckConfig> {
    match path {
        None => Ok(BlocksCheckConfig::default()),
        Some(p) => serde_json::from_str(&read_text(p)?).with_context(|| format!("invalid config {}", p.display())),
    }
}

pub fn run(seed: u64, config: Option<&Path>, out: &mut dyn Write) -> Result<u8> {
    let cfg = load_config(config)?;
    let report = run_block_checks(seed, &cfg);
    for r in &report.results {
        let status = if r.passed { "PASS" } else { "FAIL" };
        writeln!(out, "{status} {}: {}", r.name, r.detail)?;
    }
    let failed: Vec<&str> = report.failures().map(|r| r.name.as_str()).collect();
    if failed.is_empty() {
        writeln!(out, "all {} invariants hold (seed {seed})", report.results.len())?;
        Ok(exit::SUCCESS)
    } else {
        writeln!(out, "failed: {}", failed.join(", "))?;
        Ok(exit::INVARIANT_FAILURE)
    }
}
