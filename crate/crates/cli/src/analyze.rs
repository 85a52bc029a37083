//! Per-run analysis files and multi-run comparison overlays.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use costly_obs_core::agents::EpisodeStats;
use costly_obs_core::analysis::{
    build_ratio_series, histogram_from_records, learning_curve_from_stats, observation_regression, BracketRange,
    HistogramTable, LearningCurve, LogisticFit, ObservedVariable, RatioSeries,
};
use costly_obs_core::env::TransitionRecord;

use crate::format::{flag, sig};
use crate::manifest::RunManifest;
use crate::svg::{bar_chart, line_chart, Series};
use crate::train::{STATS_FILE, TRANSITIONS_FILE};
use crate::{stats, translog, UsageError};

/// How the regression sample is assembled; written alongside the fit.
pub const REGRESSION_SAMPLE: &str = "pooled-steps";

pub fn curve_csv(c: &LearningCurve) -> String {
    let mut out = format!("episode,steps,smoothed_w{}\n", c.window);
    for (i, (r, s)) in c.raw.iter().zip(&c.smoothed).enumerate() {
        let _ = writeln!(out, "{i},{},{}", sig(*r), sig(*s));
    }
    out
}

pub fn histogram_csv(h: &HistogramTable) -> String {
    let mut out = String::from(
        "bracket,lo,hi,actions,position_obs,velocity_obs,position_pct,velocity_pct,actions_pct,empty\n",
    );
    for (i, b) in h.brackets.iter().enumerate() {
        let _ = writeln!(
            out,
            "{i},{},{},{},{},{},{},{},{},{}",
            sig(b.lo),
            sig(b.hi),
            b.actions,
            b.position_obs,
            b.velocity_obs,
            sig(b.position_pct),
            sig(b.velocity_pct),
            sig(b.actions_pct),
            flag(b.empty)
        );
    }
    out
}

pub fn ratios_csv(r: &RatioSeries) -> String {
    let mut out = String::from(
        "episode,actions,obs_none,obs_pos,obs_vel,obs_both,position_ratio,velocity_ratio,none_ratio\n",
    );
    for e in r {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            e.episode,
            e.total,
            e.counts.none,
            e.counts.position,
            e.counts.velocity,
            e.counts.both,
            sig(e.position),
            sig(e.velocity),
            sig(e.none)
        );
    }
    out
}

pub fn logit_csv(fits: &[(ObservedVariable, Result<LogisticFit>)]) -> String {
    let mut out = String::from(
        "target,term,coefficient,std_err,z,p_value,n,converged,separation,sample,note\n",
    );
    for (target, fit) in fits {
        match fit {
            Ok(f) => {
                for (k, (term, coef)) in [("intercept", f.intercept), ("position", f.slope)].into_iter().enumerate() {
                    let p = f.p_value.map(|p| sig(p[k])).unwrap_or_else(|| "NA".into());
                    let _ = writeln!(
                        out,
                        "{},{term},{},{},{},{p},{},{},{},{REGRESSION_SAMPLE},{}",
                        target.name(),
                        sig(coef),
                        sig(f.std_err[k]),
                        sig(f.z[k]),
                        f.n,
                        flag(f.converged),
                        flag(f.separation),
                        if f.separation { "separation" } else { "" }
                    );
                }
            }
            Err(e) => {
                let note = e.to_string().replace(',', ";");
                for term in ["intercept", "position"] {
                    let _ = writeln!(
                        out,
                        "{},{term},NA,NA,NA,NA,0,0,0,{REGRESSION_SAMPLE},{note}",
                        target.name()
                    );
                }
            }
        }
    }
    out
}

fn require(dir: &Path, name: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    if !path.is_file() {
        bail!("missing input file {}", path.display());
    }
    Ok(path)
}

pub fn check_run_dir(dir: &Path) -> Result<(), UsageError> {
    if !dir.is_dir() {
        return Err(UsageError(format!("run directory {} does not exist", dir.display())));
    }
    Ok(())
}

pub struct RunAnalysis {
    pub stats: Vec<EpisodeStats>,
    pub records: Vec<TransitionRecord>,
    pub curve: LearningCurve,
    pub histogram: HistogramTable,
    pub ratios: RatioSeries,
    pub logit: Vec<(ObservedVariable, Result<LogisticFit>)>,
}

pub fn analyze_records(
    stats: Vec<EpisodeStats>,
    records: Vec<TransitionRecord>,
    window: usize,
    range: BracketRange,
) -> Result<RunAnalysis> {
    if stats.is_empty() {
        bail!("stats.csv has no episodes");
    }
    let curve = learning_curve_from_stats(&stats, window);
    let histogram = histogram_from_records(&records, range).context("histogram")?;
    let ratios = build_ratio_series(&stats);
    let logit = [ObservedVariable::Velocity, ObservedVariable::Position]
        .into_iter()
        .map(|t| (t, observation_regression(&records, t).map_err(Into::into)))
        .collect();
    Ok(RunAnalysis {
        stats,
        records,
        curve,
        histogram,
        ratios,
        logit,
    })
}

/// Writes `curve.csv`, `histogram.csv`, `ratios.csv`, `logit.csv` and the three plots into `out`.
pub fn analyze_run(run: &Path, out: &Path, window: usize, range: BracketRange) -> Result<RunAnalysis> {
    check_run_dir(run)?;
    let stats = stats::read(&require(run, STATS_FILE)?)?;
    let records = translog::read_log_file(&require(run, TRANSITIONS_FILE)?)?;
    let a = analyze_records(stats, records, window, range)?;
    let label = RunManifest::read(run).map(|m| m.variant).unwrap_or_else(|_| "run".into());
    fs::create_dir_all(out)?;
    let write = |name: &str, text: String| {
        let path = out.join(name);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    };
    write("curve.csv", curve_csv(&a.curve))?;
    write("histogram.csv", histogram_csv(&a.histogram))?;
    write("ratios.csv", ratios_csv(&a.ratios))?;
    write("logit.csv", logit_csv(&a.logit))?;

    let points = |v: &[f64]| v.iter().enumerate().map(|(i, y)| (i as f64, *y)).collect::<Vec<_>>();
    write(
        "curve.svg",
        line_chart(
            &format!("Steps per episode ({label})"),
            "episode",
            "steps",
            &[
                Series { label: "raw", points: points(&a.curve.raw) },
                Series { label: "smoothed", points: points(&a.curve.smoothed) },
            ],
        ),
    )?;
    let cats: Vec<String> = a
        .histogram
        .brackets
        .iter()
        .map(|b| format!("[{:.2}, {:.2})", b.lo, b.hi))
        .collect();
    let col = |f: fn(&costly_obs_core::analysis::Bracket) -> f64| a.histogram.brackets.iter().map(f).collect::<Vec<_>>();
    write(
        "histogram.svg",
        bar_chart(
            &format!("Observations by position ({label})"),
            "percent",
            &cats,
            &[
                ("position obs %", col(|b| b.position_pct)),
                ("velocity obs %", col(|b| b.velocity_pct)),
                ("actions %", col(|b| b.actions_pct)),
            ],
        ),
    )?;
    let ratio = |f: fn(&costly_obs_core::analysis::EpisodeRatios) -> f64| {
        a.ratios.iter().map(|e| (e.episode as f64, f(e))).collect::<Vec<_>>()
    };
    write(
        "ratios.svg",
        line_chart(
            &format!("Observation ratio per episode ({label})"),
            "episode",
            "ratio",
            &[
                Series { label: "position", points: ratio(|e| e.position) },
                Series { label: "velocity", points: ratio(|e| e.velocity) },
                Series { label: "none", points: ratio(|e| e.none) },
            ],
        ),
    )?;
    Ok(a)
}

/// Overlays the smoothed learning curves of several runs.
pub fn compare_runs(runs: &[PathBuf], out: &Path, window: usize) -> Result<()> {
    let mut labelled = Vec::new();
    for run in runs {
        check_run_dir(run)?;
        let stats = stats::read(&require(run, STATS_FILE)?)?;
        let base = RunManifest::read(run)
            .map(|m| m.variant)
            .unwrap_or_else(|_| run.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default());
        labelled.push((base, learning_curve_from_stats(&stats, window)));
    }
    // Disambiguate repeated variants by position.
    let names: Vec<String> = labelled
        .iter()
        .enumerate()
        .map(|(i, (base, _))| {
            if labelled.iter().filter(|(b, _)| b == base).count() > 1 {
                format!("{base}#{}", i + 1)
            } else {
                base.clone()
            }
        })
        .collect();

    let mut csv = format!("label,run,episode,steps,smoothed_w{window}\n");
    for ((name, (_, c)), run) in names.iter().zip(&labelled).zip(runs) {
        for (i, (r, s)) in c.raw.iter().zip(&c.smoothed).enumerate() {
            let _ = writeln!(csv, "{name},{},{i},{},{}", run.display(), sig(*r), sig(*s));
        }
    }
    let series: Vec<Series> = names
        .iter()
        .zip(&labelled)
        .map(|(name, (_, c))| Series {
            label: name,
            points: c.smoothed.iter().enumerate().map(|(i, y)| (i as f64, *y)).collect(),
        })
        .collect();
    fs::create_dir_all(out)?;
    fs::write(out.join("compare.csv"), csv).context("writing compare.csv")?;
    fs::write(
        out.join("compare.svg"),
        line_chart("Steps per episode (smoothed)", "episode", "steps", &series),
    )
    .context("writing compare.svg")?;
    Ok(())
}
