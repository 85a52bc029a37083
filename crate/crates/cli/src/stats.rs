use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use costly_obs_core::agents::{EpisodeStats, ObsCounts};

use crate::format::{flag, parse_flag, parse_num, sig};

pub const HEADER: &str = "episode,steps,total_reward,reached_goal,epsilon,obs_none,obs_pos,obs_vel,obs_both";

pub fn render(stats: &[EpisodeStats]) -> String {
    let mut out = String::with_capacity(64 * (stats.len() + 1));
    out.push_str(HEADER);
    out.push('\n');
    for s in stats {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            s.episode,
            s.steps,
            sig(s.total_reward),
            flag(s.reached_goal),
            sig(s.epsilon),
            s.obs.none,
            s.obs.position,
            s.obs.velocity,
            s.obs.both
        ));
    }
    out
}

pub fn parse(text: &str) -> Result<Vec<EpisodeStats>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim_end) != Some(HEADER) {
        bail!("stats header mismatch");
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.trim_end().split(',').collect();
            if f.len() != 9 {
                return Err(anyhow!("stats row {}: expected 9 columns, found {}", i + 1, f.len()));
            }
            (|| -> Result<EpisodeStats> {
                Ok(EpisodeStats {
                    episode: parse_num(f[0], "episode")?,
                    steps: parse_num(f[1], "steps")?,
                    total_reward: parse_num(f[2], "total_reward")?,
                    reached_goal: parse_flag(f[3])?,
                    epsilon: parse_num(f[4], "epsilon")?,
                    obs: ObsCounts {
                        none: parse_num(f[5], "obs_none")?,
                        position: parse_num(f[6], "obs_pos")?,
                        velocity: parse_num(f[7], "obs_vel")?,
                        both: parse_num(f[8], "obs_both")?,
                    },
                })
            })()
            .with_context(|| format!("stats row {}", i + 1))
        })
        .collect()
}

pub fn read(path: &Path) -> Result<Vec<EpisodeStats>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse(&text).with_context(|| format!("parsing {}", path.display()))
}
