//! Run analysis: position-bracket observation histograms, per-episode
//! observation ratios, learning curves and a univariate logistic regression
//! with Wald tests.

use alloc::format;
use alloc::vec::Vec;

use crate::agents::{EpisodeStats, ObsCounts};
use crate::env::{ObsChoice, TransitionRecord};
use crate::error::{Error, Result};
use crate::physics::consts::{GOAL_POSITION, MIN_POSITION};

pub const N_BRACKETS: usize = 5;
pub const DEFAULT_SMOOTHING: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BracketRange {
    /// Equal-width brackets over `[-1.2, 0.5]`.
    Fixed,
    /// Equal-width brackets over the positions seen in the log.
    Data,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bracket {
    pub lo: f64,
    pub hi: f64,
    pub actions: u64,
    pub position_obs: u64,
    pub velocity_obs: u64,
    /// Share of this bracket's actions that observed position, in percent.
    pub position_pct: f64,
    pub velocity_pct: f64,
    /// Share of all logged actions taken in this bracket, in percent.
    pub actions_pct: f64,
    pub empty: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistogramTable {
    pub brackets: Vec<Bracket>,
    pub total_actions: u64,
}

fn pct(part: u64, whole: u64) -> f64 {
    if whole == 0 {
        0.0
    } else {
        100.0 * part as f64 / whole as f64
    }
}

/// Bins each action by the true position at which it was taken.
pub fn build_histogram<I>(actions: I, range: BracketRange) -> Result<HistogramTable>
where
    I: IntoIterator<Item = (f64, ObsChoice)>,
{
    let actions: Vec<(f64, ObsChoice)> = actions.into_iter().collect();
    if actions.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (lo, hi) = match range {
        BracketRange::Fixed => (MIN_POSITION, GOAL_POSITION),
        BracketRange::Data => {
            let lo = actions.iter().map(|a| a.0).fold(f64::INFINITY, f64::min);
            let hi = actions.iter().map(|a| a.0).fold(f64::NEG_INFINITY, f64::max);
            if hi > lo {
                (lo, hi)
            } else {
                (lo - 0.5, lo + 0.5)
            }
        }
    };
    let width = (hi - lo) / N_BRACKETS as f64;
    let mut brackets: Vec<Bracket> = (0..N_BRACKETS)
        .map(|k| Bracket {
            lo: lo + width * k as f64,
            hi: if k + 1 == N_BRACKETS { hi } else { lo + width * (k + 1) as f64 },
            actions: 0,
            position_obs: 0,
            velocity_obs: 0,
            position_pct: 0.0,
            velocity_pct: 0.0,
            actions_pct: 0.0,
            empty: true,
        })
        .collect();
    for &(pos, obs) in &actions {
        let k = libm::floor((pos - lo) / width).clamp(0.0, (N_BRACKETS - 1) as f64) as usize;
        let b = &mut brackets[k];
        b.actions += 1;
        b.position_obs += obs.observes_position() as u64;
        b.velocity_obs += obs.observes_velocity() as u64;
    }
    let total = actions.len() as u64;
    for b in &mut brackets {
        b.empty = b.actions == 0;
        b.position_pct = pct(b.position_obs, b.actions);
        b.velocity_pct = pct(b.velocity_obs, b.actions);
        b.actions_pct = pct(b.actions, total);
    }
    Ok(HistogramTable {
        brackets,
        total_actions: total,
    })
}

pub fn histogram_from_records(records: &[TransitionRecord], range: BracketRange) -> Result<HistogramTable> {
    build_histogram(
        records.iter().map(|r| (r.true_before.position, r.action().obs)),
        range,
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeRatios {
    pub episode: u32,
    pub total: u64,
    pub counts: ObsCounts,
    /// Actions that observed position (`Position` or `Both`) over all actions.
    pub position: f64,
    pub velocity: f64,
    pub none: f64,
}

pub type RatioSeries = Vec<EpisodeRatios>;

pub fn ratios_for(episode: u32, counts: ObsCounts) -> EpisodeRatios {
    let total = counts.total();
    let frac = |n: u64| if total == 0 { 0.0 } else { n as f64 / total as f64 };
    EpisodeRatios {
        episode,
        total,
        counts,
        position: frac(counts.position + counts.both),
        velocity: frac(counts.velocity + counts.both),
        none: frac(counts.none),
    }
}

pub fn build_ratio_series(stats: &[EpisodeStats]) -> RatioSeries {
    stats.iter().map(|s| ratios_for(s.episode, s.obs)).collect()
}

/// Recounts observation choices per episode directly from a transition log.
pub fn ratio_series_from_records(records: &[TransitionRecord]) -> RatioSeries {
    let mut out: Vec<(u32, ObsCounts)> = Vec::new();
    for r in records {
        match out.last_mut() {
            Some((ep, counts)) if *ep == r.episode => counts.add(r.action().obs),
            _ => {
                let mut counts = ObsCounts::default();
                counts.add(r.action().obs);
                out.push((r.episode, counts));
            }
        }
    }
    out.into_iter().map(|(ep, c)| ratios_for(ep, c)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearningCurve {
    pub raw: Vec<f64>,
    pub smoothed: Vec<f64>,
    pub window: usize,
}

/// Centered moving average; the window shrinks at both ends of the series.
pub fn learning_curve(steps: &[f64], window: usize) -> LearningCurve {
    let window = window.max(1);
    let before = (window - 1) / 2;
    let after = window - 1 - before;
    let n = steps.len();
    let smoothed = (0..n)
        .map(|i| {
            let lo = i.saturating_sub(before);
            let hi = (i + after + 1).min(n);
            steps[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect();
    LearningCurve {
        raw: steps.to_vec(),
        smoothed,
        window,
    }
}

pub fn learning_curve_from_stats(stats: &[EpisodeStats], window: usize) -> LearningCurve {
    let steps: Vec<f64> = stats.iter().map(|s| s.steps as f64).collect();
    learning_curve(&steps, window)
}

pub const LOGIT_MAX_ITER: usize = 100;
pub const LOGIT_TOLERANCE: f64 = 1e-10;
/// Any coefficient beyond this magnitude during iteration signals separation.
pub const LOGIT_DIVERGENCE: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticFit {
    pub n: usize,
    pub intercept: f64,
    pub slope: f64,
    /// Standard errors `[intercept, slope]`.
    pub std_err: [f64; 2],
    pub z: [f64; 2],
    /// Two-sided Wald p-values; absent when separation was detected.
    pub p_value: Option<[f64; 2]>,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    pub separation: bool,
}

fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + libm::log1p(libm::exp(-t))
    } else {
        libm::log1p(libm::exp(t))
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + libm::exp(-t))
    } else {
        let e = libm::exp(t);
        e / (1.0 + e)
    }
}

fn log_likelihood(x: &[f64], y: &[bool], b0: f64, b1: f64) -> f64 {
    x.iter()
        .zip(y)
        .map(|(&xi, &yi)| {
            let eta = b0 + b1 * xi;
            if yi {
                -softplus(-eta)
            } else {
                -softplus(eta)
            }
        })
        .sum()
}

/// Observed information (negative Hessian of the log-likelihood).
fn information(x: &[f64], b0: f64, b1: f64) -> [[f64; 2]; 2] {
    let mut info = [[0.0; 2]; 2];
    for &xi in x {
        let p = sigmoid(b0 + b1 * xi);
        let w = p * (1.0 - p);
        info[0][0] += w;
        info[0][1] += w * xi;
        info[1][1] += w * xi * xi;
    }
    info[1][0] = info[0][1];
    info
}

fn invert2(m: [[f64; 2]; 2]) -> Option<[[f64; 2]; 2]> {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if !(det.abs() > 1e-300) || !det.is_finite() {
        return None;
    }
    Some([[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]])
}

/// Two-sided standard-normal tail probability.
pub fn normal_two_sided_p(z: f64) -> f64 {
    libm::erfc(z.abs() / core::f64::consts::SQRT_2)
}

fn perfectly_split(x: &[f64], y: &[bool]) -> bool {
    let (mut max0, mut min0) = (f64::NEG_INFINITY, f64::INFINITY);
    let (mut max1, mut min1) = (f64::NEG_INFINITY, f64::INFINITY);
    for (&xi, &yi) in x.iter().zip(y) {
        if yi {
            max1 = max1.max(xi);
            min1 = min1.min(xi);
        } else {
            max0 = max0.max(xi);
            min0 = min0.min(xi);
        }
    }
    max0 <= min1 || max1 <= min0
}

/// Maximum-likelihood fit of `P(y) = σ(b0 + b1·x)` by Newton's method.
pub fn logistic_fit(x: &[f64], y: &[bool]) -> Result<LogisticFit> {
    if x.len() != y.len() {
        return Err(Error::Shape {
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::DegenerateInput(format!("need at least 2 points, got {}", x.len())));
    }
    let positives = y.iter().filter(|&&v| v).count();
    if positives == 0 || positives == y.len() {
        return Err(Error::DegenerateInput("dependent variable has a single class".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateInput("non-finite covariate".into()));
    }
    if x.iter().all(|&v| v == x[0]) {
        return Err(Error::DegenerateInput("covariate is constant".into()));
    }

    let mut separation = perfectly_split(x, y);
    let (mut b0, mut b1) = (0.0, 0.0);
    let mut ll = log_likelihood(x, y, b0, b1);
    let mut converged = false;
    let mut iterations = 0;
    while !separation && iterations < LOGIT_MAX_ITER {
        iterations += 1;
        let (mut g0, mut g1) = (0.0, 0.0);
        for (&xi, &yi) in x.iter().zip(y) {
            let r = yi as u8 as f64 - sigmoid(b0 + b1 * xi);
            g0 += r;
            g1 += r * xi;
        }
        let Some(inv) = invert2(information(x, b0, b1)) else {
            separation = true;
            break;
        };
        let d0 = inv[0][0] * g0 + inv[0][1] * g1;
        let d1 = inv[1][0] * g0 + inv[1][1] * g1;
        // Step halving keeps the likelihood non-decreasing.
        let mut t = 1.0;
        let (mut n0, mut n1, mut nll) = (b0 + d0, b1 + d1, 0.0);
        for _ in 0..30 {
            n0 = b0 + t * d0;
            n1 = b1 + t * d1;
            nll = log_likelihood(x, y, n0, n1);
            if nll >= ll - 1e-12 {
                break;
            }
            t *= 0.5;
        }
        let change = (nll - ll).abs();
        b0 = n0;
        b1 = n1;
        ll = nll;
        if b0.abs() > LOGIT_DIVERGENCE || b1.abs() > LOGIT_DIVERGENCE {
            separation = true;
            break;
        }
        if change < LOGIT_TOLERANCE {
            converged = true;
            break;
        }
    }

    let (std_err, z) = match invert2(information(x, b0, b1)) {
        Some(cov) if !separation => {
            let se = [libm::sqrt(cov[0][0]), libm::sqrt(cov[1][1])];
            (se, [b0 / se[0], b1 / se[1]])
        }
        _ => ([f64::NAN; 2], [f64::NAN; 2]),
    };
    let p_value = if separation || !converged {
        None
    } else {
        Some([normal_two_sided_p(z[0]), normal_two_sided_p(z[1])])
    };
    Ok(LogisticFit {
        n: x.len(),
        intercept: b0,
        slope: b1,
        std_err,
        z,
        p_value,
        log_likelihood: ll,
        iterations,
        converged,
        separation,
    })
}

/// Which observation flag a regression uses as its dependent variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObservedVariable {
    Position,
    Velocity,
}

impl ObservedVariable {
    pub fn name(self) -> &'static str {
        match self {
            ObservedVariable::Position => "position",
            ObservedVariable::Velocity => "velocity",
        }
    }

    pub fn flag(self, obs: ObsChoice) -> bool {
        match self {
            ObservedVariable::Position => obs.observes_position(),
            ObservedVariable::Velocity => obs.observes_velocity(),
        }
    }
}

/// Regresses an observation flag on true position, pooling every logged step.
pub fn observation_regression(records: &[TransitionRecord], target: ObservedVariable) -> Result<LogisticFit> {
    let x: Vec<f64> = records.iter().map(|r| r.true_before.position).collect();
    let y: Vec<bool> = records.iter().map(|r| target.flag(r.action().obs)).collect();
    logistic_fit(&x, &y)
}

/// Mean of the last `n` values of `series` (or all of them when shorter).
pub fn tail_mean(series: &[f64], n: usize) -> f64 {
    let tail = &series[series.len().saturating_sub(n)..];
    if tail.is_empty() {
        return f64::NAN;
    }
    tail.iter().sum::<f64>() / tail.len() as f64
}

pub fn goal_rate(stats: &[EpisodeStats]) -> f64 {
    if stats.is_empty() {
        return f64::NAN;
    }
    stats.iter().filter(|s| s.reached_goal).count() as f64 / stats.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::{stream_rng, Stream};
    use rand::Rng;
    use std::vec;

    #[test]
    fn all_at_one_position_fill_one_bracket() {
        let table = build_histogram(vec![(-0.5, ObsChoice::Both); 40], BracketRange::Fixed).unwrap();
        let full: Vec<_> = table.brackets.iter().filter(|b| !b.empty).collect();
        assert_eq!(full.len(), 1);
        assert_eq!(full[0].position_pct, 100.0);
        assert_eq!(full[0].velocity_pct, 100.0);
        assert_eq!(full[0].actions_pct, 100.0);
        for b in table.brackets.iter().filter(|b| b.empty) {
            assert_eq!((b.actions, b.position_pct, b.velocity_pct), (0, 0.0, 0.0));
        }
    }

    #[test]
    fn histogram_matches_hand_count() {
        let obs = ObsChoice::ALL;
        let rows: Vec<(f64, ObsChoice)> = (0..20)
            .map(|i| (-1.2 + 0.085 * i as f64, obs[(i * 7) % 4]))
            .collect();
        let table = build_histogram(rows.clone(), BracketRange::Fixed).unwrap();
        // Brute force: bracket edges -1.2, -0.86, -0.52, -0.18, 0.16, 0.5.
        let edges = [-1.2, -0.86, -0.52, -0.18, 0.16, 0.5];
        for k in 0..5 {
            let inside: Vec<_> = rows
                .iter()
                .filter(|(p, _)| {
                    *p >= edges[k] - 1e-12 && (*p < edges[k + 1] - 1e-12 || (k == 4 && *p <= 0.5))
                })
                .collect();
            let b = &table.brackets[k];
            assert_eq!(b.actions as usize, inside.len(), "bracket {k}");
            let pos = inside.iter().filter(|(_, o)| o.observes_position()).count();
            let vel = inside.iter().filter(|(_, o)| o.observes_velocity()).count();
            assert_eq!(b.position_obs as usize, pos);
            assert_eq!(b.velocity_obs as usize, vel);
        }
        assert_eq!(table.brackets.iter().map(|b| b.actions).sum::<u64>(), 20);
        assert!(build_histogram(Vec::new(), BracketRange::Fixed).is_err());
    }

    #[test]
    fn data_range_spans_observed_positions() {
        let rows = vec![(-0.8, ObsChoice::None), (-0.3, ObsChoice::Position)];
        let t = build_histogram(rows, BracketRange::Data).unwrap();
        assert_eq!(t.brackets[0].lo, -0.8);
        assert_eq!(t.brackets[4].hi, -0.3);
        assert_eq!(t.brackets[4].actions, 1);
    }

    #[test]
    fn ratio_examples() {
        let r = ratios_for(0, ObsCounts { none: 10, ..Default::default() });
        assert_eq!((r.none, r.position, r.velocity), (1.0, 0.0, 0.0));
        let r = ratios_for(
            1,
            ObsCounts {
                none: 4,
                position: 2,
                velocity: 3,
                both: 1,
            },
        );
        assert!((r.position - 0.3).abs() < 1e-15);
        assert!((r.velocity - 0.4).abs() < 1e-15);
        assert!((r.none - 0.4).abs() < 1e-15);
    }

    #[test]
    fn curve_examples() {
        let c = learning_curve(&[7.0; 30], 25);
        assert!(c.smoothed.iter().all(|&v| v == 7.0));
        let raw = [3.0, 1.0, 4.0, 1.0, 5.0];
        assert_eq!(learning_curve(&raw, 1).smoothed, raw.to_vec());
        let c = learning_curve(&raw, 3);
        let expected = [2.0, 8.0 / 3.0, 2.0, 10.0 / 3.0, 3.0];
        for (a, b) in c.smoothed.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn symmetric_data_has_zero_slope() {
        let fit = logistic_fit(&[-1.0, -1.0, 1.0, 1.0], &[false, true, false, true]).unwrap();
        assert!(fit.slope.abs() < 1e-9 && fit.intercept.abs() < 1e-9);
        assert!((fit.p_value.unwrap()[1] - 1.0).abs() < 1e-9);
        assert!(fit.converged && !fit.separation);
    }

    #[test]
    fn separation_is_flagged() {
        let x = [-0.9, -0.5, -0.2, 0.1, 0.3, 0.4];
        let y = [false, false, false, true, true, true];
        let fit = logistic_fit(&x, &y).unwrap();
        assert!(fit.separation);
        assert!(fit.p_value.is_none());
    }

    #[test]
    fn degenerate_inputs_error() {
        assert!(logistic_fit(&[0.0, 1.0], &[true, true]).is_err());
        assert!(logistic_fit(&[0.0], &[true]).is_err());
        assert!(logistic_fit(&[0.5, 0.5, 0.5], &[true, false, true]).is_err());
    }

    #[test]
    fn recovers_known_coefficients() {
        let mut rng = stream_rng(12, Stream::Env);
        let (b0, b1) = (-0.7, 1.8);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for _ in 0..10_000 {
            let xi: f64 = rng.gen_range(-1.2..0.5);
            let p = 1.0 / (1.0 + (-(b0 + b1 * xi)).exp());
            x.push(xi);
            y.push(rng.gen::<f64>() < p);
        }
        let fit = logistic_fit(&x, &y).unwrap();
        assert!(fit.converged);
        assert!((fit.intercept - b0).abs() < 3.0 * fit.std_err[0]);
        assert!((fit.slope - b1).abs() < 3.0 * fit.std_err[1]);
        assert!(fit.p_value.unwrap()[1] < 1e-6);
    }

    #[test]
    fn normal_tail_reference_values() {
        assert!((normal_two_sided_p(0.0) - 1.0).abs() < 1e-15);
        assert!((normal_two_sided_p(1.959963984540054) - 0.05).abs() < 1e-12);
        assert!((normal_two_sided_p(-2.5758293035489) - 0.01).abs() < 1e-12);
    }
}
