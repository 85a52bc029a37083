use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use costly_obs_core::dynamics::{build_dataset_from_records, train_dynamics, DynamicsTrainConfig, TrainedDynamics};

use crate::format::sig;
use crate::translog;

pub fn rmse_line(t: &TrainedDynamics) -> String {
    let r = &t.report;
    format!(
        "rmse_pos={} rmse_vel={} baseline_pos={} baseline_vel={}",
        sig(r.rmse_pos),
        sig(r.rmse_vel),
        sig(r.baseline_pos),
        sig(r.baseline_vel)
    )
}

/// Fits a dynamics model on a transition log and writes it to `out`.
pub fn fit_dynamics(log: &Path, out: &Path, cfg: &DynamicsTrainConfig) -> Result<TrainedDynamics> {
    let records = translog::read_log_file(log)?;
    let dataset = build_dataset_from_records(&records).context("building the dynamics dataset")?;
    let trained = train_dynamics(&dataset, cfg)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(out, trained.handle.to_text()).with_context(|| format!("writing {}", out.display()))?;
    Ok(trained)
}
