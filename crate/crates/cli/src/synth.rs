//! `synth`: write a synthetic dataset as CSV.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use fedmap_core::data::{summarize, synth_trajectories, write_csv, SynthConfig, UserBatchStats};

use crate::config::ExperimentConfig;
use crate::error::CliError;

/// Generates the dataset of the config's `[data.synth]` table and writes it
/// to `out`. Returns per-user batch statistics at the configured interval.
pub fn cmd_synth(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<UserBatchStats>, CliError> {
    let synth: &SynthConfig = cfg
        .data
        .synth
        .as_ref()
        .ok_or_else(|| CliError::Config("synth needs a [data.synth] table".into()))?;
    let ds = synth_trajectories(synth)?;
    if let Some(dir) = out.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    write_csv(&ds, BufWriter::new(File::create(out)?))?;
    Ok(summarize(&ds, (cfg.fed.t_hours * 3600.0).round() as i64))
}
