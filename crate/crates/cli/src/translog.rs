//! Per-run transition log: one CSV row per environment step.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use costly_obs_core::agents::{EpisodeStats, TrainObserver};
use costly_obs_core::env::{decode_action, BeliefState, ObsChoice, TransitionRecord};
use costly_obs_core::physics::{Motion, TrueState};

use crate::format::{flag, parse_flag, parse_num, sig};

pub const HEADER: &str = "episode,step,action_index,motion,obs_choice,reward,done,truncated,\
true_pos,true_vel,next_true_pos,next_true_vel,bel_pos,bel_vel,pos_age,vel_age,\
next_bel_pos,next_bel_vel,next_pos_age,next_vel_age";

const COLUMNS: usize = 20;

pub fn format_row(r: &TransitionRecord, out: &mut String) {
    let a = r.action();
    let (b, nb) = (&r.belief_before, &r.belief_after);
    let _ = write!(
        out,
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        r.episode,
        r.step,
        r.action_index,
        a.motion.name(),
        a.obs.name(),
        sig(r.reward),
        flag(r.done),
        flag(r.truncated),
        sig(r.true_before.position),
        sig(r.true_before.velocity),
        sig(r.true_after.position),
        sig(r.true_after.velocity),
        sig(b.pos),
        sig(b.vel),
        b.pos_age,
        b.vel_age,
        sig(nb.pos),
        sig(nb.vel),
        nb.pos_age,
        nb.vel_age,
    );
}

/// Parses one data row. Errors name the offending column.
pub fn parse_row(line: &str) -> Result<TransitionRecord> {
    let f: Vec<&str> = line.split(',').collect();
    if f.len() != COLUMNS {
        bail!("expected {COLUMNS} columns, found {}", f.len());
    }
    let action_index: usize = parse_num(f[2], "action_index")?;
    let action = decode_action(action_index).map_err(|e| anyhow!("column `action_index`: {e}"))?;
    let motion = Motion::from_name(f[3]).ok_or_else(|| anyhow!("column `motion`: unknown `{}`", f[3]))?;
    let obs = ObsChoice::from_name(f[4]).ok_or_else(|| anyhow!("column `obs_choice`: unknown `{}`", f[4]))?;
    if motion != action.motion || obs != action.obs {
        bail!("motion/obs_choice disagree with action_index {action_index}");
    }
    let num = |i: usize, name: &str| parse_num::<f64>(f[i], name);
    let belief = |p: usize, name: &str| -> Result<BeliefState> {
        Ok(BeliefState {
            pos: num(p, name)?,
            vel: num(p + 1, name)?,
            pos_age: parse_num(f[p + 2], name)?,
            vel_age: parse_num(f[p + 3], name)?,
        })
    };
    Ok(TransitionRecord {
        episode: parse_num(f[0], "episode")?,
        step: parse_num(f[1], "step")?,
        action_index,
        reward: num(5, "reward")?,
        done: parse_flag(f[6]).context("column `done`")?,
        truncated: parse_flag(f[7]).context("column `truncated`")?,
        true_before: TrueState::new(num(8, "true_pos")?, num(9, "true_vel")?),
        true_after: TrueState::new(num(10, "next_true_pos")?, num(11, "next_true_vel")?),
        belief_before: belief(12, "belief")?,
        belief_after: belief(16, "next belief")?,
    })
}

/// Streams records into a CSV file while training runs.
pub struct TransitionLogWriter<W: Write> {
    out: W,
    line: String,
    error: Option<io::Error>,
    rows: u64,
}

impl TransitionLogWriter<BufWriter<File>> {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        Self::new(BufWriter::with_capacity(1 << 20, file)).map_err(Into::into)
    }
}

impl<W: Write> TransitionLogWriter<W> {
    pub fn new(mut out: W) -> io::Result<Self> {
        writeln!(out, "{HEADER}")?;
        Ok(Self {
            out,
            line: String::with_capacity(256),
            error: None,
            rows: 0,
        })
    }

    pub fn write(&mut self, r: &TransitionRecord) -> io::Result<()> {
        self.line.clear();
        format_row(r, &mut self.line);
        self.line.push('\n');
        self.rows += 1;
        self.out.write_all(self.line.as_bytes())
    }

    pub fn rows(&self) -> u64 {
        self.rows
    }

    /// Flushes and surfaces the first write error seen during training.
    pub fn finish(mut self) -> io::Result<W> {
        if let Some(e) = self.error.take() {
            return Err(e);
        }
        self.out.flush()?;
        Ok(self.out)
    }
}

impl<W: Write> TrainObserver for TransitionLogWriter<W> {
    fn transition(&mut self, record: &TransitionRecord) {
        if self.error.is_none() {
            if let Err(e) = self.write(record) {
                self.error = Some(e);
            }
        }
    }

    fn episode(&mut self, _stats: &EpisodeStats) {}
}

/// Reads a whole log. Data rows are numbered from 1 in error messages.
pub fn read_log<R: BufRead>(input: R) -> Result<Vec<TransitionRecord>> {
    let mut lines = input.lines();
    let header = lines.next().ok_or_else(|| anyhow!("transition log is empty"))??;
    if header.trim_end() != HEADER {
        bail!("transition log header mismatch");
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row = parse_row(line.trim_end()).with_context(|| format!("transition log row {}", i + 1))?;
        records.push(row);
    }
    Ok(records)
}

pub fn read_log_file(path: &Path) -> Result<Vec<TransitionRecord>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_log(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))
}
