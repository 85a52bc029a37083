use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use anyhow::{Context, Result};
use costly_obs_core::analysis::{goal_rate, tail_mean};
use costly_obs_core::env::Variant;

use crate::format::sig;
use crate::settings::RunSettings;
use crate::train::run_training;

pub const SUMMARY_TAIL: usize = 50;

#[derive(Debug, Clone)]
pub struct SweepJob {
    pub variant: Variant,
    pub obs_cost: f64,
    pub seed: u64,
    pub dir: PathBuf,
    pub settings: RunSettings,
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub job: SweepJob,
    pub outcome: Result<(f64, f64), String>,
}

pub fn plan(base: &RunSettings, variants: &[Variant], costs: &[f64], seeds: &[u64], root: &Path) -> Vec<SweepJob> {
    let mut jobs = Vec::new();
    for &variant in variants {
        for &obs_cost in costs {
            for &seed in seeds {
                let mut settings = base.clone();
                settings.env.variant = variant;
                settings.env.obs_cost = obs_cost;
                settings.dqn.seed = seed;
                let dir = root.join(settings.default_run_name());
                jobs.push(SweepJob {
                    variant,
                    obs_cost,
                    seed,
                    dir,
                    settings,
                });
            }
        }
    }
    jobs
}

fn run_job(job: &SweepJob) -> Result<(f64, f64), String> {
    run_training(&job.settings, &job.dir)
        .map(|r| {
            let steps: Vec<f64> = r.stats.iter().map(|s| s.steps as f64).collect();
            let tail = &r.stats[r.stats.len().saturating_sub(SUMMARY_TAIL)..];
            (tail_mean(&steps, SUMMARY_TAIL), goal_rate(tail))
        })
        .map_err(|e| format!("{e:#}"))
}

/// Runs every job, `workers` at a time. Failures are recorded, not propagated.
pub fn execute(jobs: Vec<SweepJob>, workers: usize, mut progress: impl FnMut(&SweepRow) + Send) -> Vec<SweepRow> {
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<SweepRow>>> = jobs.iter().map(|_| Mutex::new(None)).collect();
    let progress = Mutex::new(&mut progress);
    thread::scope(|scope| {
        for _ in 0..workers.max(1).min(jobs.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(job) = jobs.get(i) else { break };
                let row = SweepRow {
                    job: job.clone(),
                    outcome: run_job(job),
                };
                (progress.lock().expect("progress callback"))(&row);
                *slots[i].lock().expect("result slot") = Some(row);
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.into_inner().expect("result slot").expect("every job ran"))
        .collect()
}

pub fn summary_csv(rows: &[SweepRow]) -> String {
    let mut out = format!("variant,obs_cost,seed,mean_steps_last{SUMMARY_TAIL},goal_rate_last{SUMMARY_TAIL},status,run_dir\n");
    for r in rows {
        let (mean, rate, status) = match &r.outcome {
            Ok((m, g)) => (sig(*m), sig(*g), "ok".to_string()),
            Err(e) => ("NA".into(), "NA".into(), format!("error: {}", e.replace([',', '\n'], ";"))),
        };
        let _ = writeln!(
            out,
            "{},{},{},{mean},{rate},{status},{}",
            r.job.variant.name(),
            sig(r.job.obs_cost),
            r.job.seed,
            r.job.dir.display()
        );
    }
    out
}

pub fn write_summary(rows: &[SweepRow], root: &Path) -> Result<PathBuf> {
    fs::create_dir_all(root)?;
    let path = root.join("sweep.csv");
    fs::write(&path, summary_csv(rows)).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}
