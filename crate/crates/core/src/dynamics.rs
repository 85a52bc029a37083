//! Offline forward-dynamics model used to impute unobserved state variables.
//!
//! Training pairs come from the true-state columns of a transition log:
//! `(pos, vel, one-hot motion) -> (next_pos, next_vel)`. Inputs are
//! standardized column-wise. The network regresses the standardized one-step
//! change, which is added back onto the current value at prediction time, so
//! the loss is still a (per-component weighted) squared error on the next
//! state.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;

use rand::seq::SliceRandom;

use crate::env::{Imputer, TransitionRecord};
use crate::error::{Error, Result};
use crate::nn::{BatchWorkspace, Gradients, MlpModel, OptimizerKind, OptimizerState, Workspace};
use crate::physics::{Motion, TrueState};
use crate::seeding::{stream_rng, Stream};

pub const INPUT_WIDTH: usize = 5;
pub const OUTPUT_WIDTH: usize = 2;
pub const NORM_TAG: &str = "dynamics-norm-v1";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DynamicsSample {
    pub pos: f64,
    pub vel: f64,
    pub motion: Motion,
    pub next_pos: f64,
    pub next_vel: f64,
}

impl DynamicsSample {
    /// Uses the true-state columns only; beliefs never enter training.
    pub fn from_record(r: &TransitionRecord) -> Self {
        Self {
            pos: r.true_before.position,
            vel: r.true_before.velocity,
            motion: r.action().motion,
            next_pos: r.true_after.position,
            next_vel: r.true_after.velocity,
        }
    }

    pub fn raw_input(&self) -> [f64; INPUT_WIDTH] {
        raw_input(self.pos, self.vel, self.motion)
    }
}

fn raw_input(pos: f64, vel: f64, motion: Motion) -> [f64; INPUT_WIDTH] {
    let mut x = [pos, vel, 0.0, 0.0, 0.0];
    x[2 + motion.code()] = 1.0;
    x
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub input_mean: [f64; INPUT_WIDTH],
    pub input_scale: [f64; INPUT_WIDTH],
    /// Statistics of the one-step change `(next_pos − pos, next_vel − vel)`.
    pub delta_mean: [f64; OUTPUT_WIDTH],
    pub delta_scale: [f64; OUTPUT_WIDTH],
}

fn mean_and_scale(column: impl Iterator<Item = f64> + Clone, n: usize) -> (f64, f64) {
    let mean = column.clone().sum::<f64>() / n as f64;
    let var = column.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
    let scale = libm::sqrt(var);
    // Constant columns keep unit scale.
    let scale = if scale > 1e-12 && scale.is_finite() { scale } else { 1.0 };
    (mean, scale)
}

impl Normalization {
    pub fn fit(samples: &[DynamicsSample]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let n = samples.len();
        let mut norm = Self {
            input_mean: [0.0; INPUT_WIDTH],
            input_scale: [1.0; INPUT_WIDTH],
            delta_mean: [0.0; OUTPUT_WIDTH],
            delta_scale: [1.0; OUTPUT_WIDTH],
        };
        for c in 0..INPUT_WIDTH {
            (norm.input_mean[c], norm.input_scale[c]) =
                mean_and_scale(samples.iter().map(move |s| s.raw_input()[c]), n);
        }
        (norm.delta_mean[0], norm.delta_scale[0]) =
            mean_and_scale(samples.iter().map(|s| s.next_pos - s.pos), n);
        (norm.delta_mean[1], norm.delta_scale[1]) =
            mean_and_scale(samples.iter().map(|s| s.next_vel - s.vel), n);
        if !norm.is_valid() {
            return Err(Error::DegenerateInput("non-finite normalization constants".into()));
        }
        Ok(norm)
    }

    pub fn is_valid(&self) -> bool {
        self.input_mean
            .iter()
            .chain(&self.delta_mean)
            .all(|m| m.is_finite())
            && self
                .input_scale
                .iter()
                .chain(&self.delta_scale)
                .all(|s| s.is_finite() && *s > 0.0)
    }

    pub fn normalize_input(&self, raw: &[f64; INPUT_WIDTH]) -> [f64; INPUT_WIDTH] {
        core::array::from_fn(|c| (raw[c] - self.input_mean[c]) / self.input_scale[c])
    }

    pub fn denormalize_input(&self, z: &[f64; INPUT_WIDTH]) -> [f64; INPUT_WIDTH] {
        core::array::from_fn(|c| z[c] * self.input_scale[c] + self.input_mean[c])
    }

    pub fn encode_target(&self, s: &DynamicsSample) -> [f64; OUTPUT_WIDTH] {
        [
            (s.next_pos - s.pos - self.delta_mean[0]) / self.delta_scale[0],
            (s.next_vel - s.vel - self.delta_mean[1]) / self.delta_scale[1],
        ]
    }

    /// Next `(pos, vel)` implied by a network output, before clamping.
    pub fn decode_output(&self, pos: f64, vel: f64, out: &[f64]) -> (f64, f64) {
        (
            pos + out[0] * self.delta_scale[0] + self.delta_mean[0],
            vel + out[1] * self.delta_scale[1] + self.delta_mean[1],
        )
    }

    fn values(&self) -> impl Iterator<Item = &f64> {
        self.input_mean
            .iter()
            .chain(&self.input_scale)
            .chain(&self.delta_mean)
            .chain(&self.delta_scale)
    }

    fn from_values(v: &[f64]) -> Self {
        Self {
            input_mean: core::array::from_fn(|i| v[i]),
            input_scale: core::array::from_fn(|i| v[5 + i]),
            delta_mean: [v[10], v[11]],
            delta_scale: [v[12], v[13]],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsDataset {
    pub samples: Vec<DynamicsSample>,
    pub norm: Normalization,
}

impl DynamicsDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn normalized_input(&self, i: usize) -> [f64; INPUT_WIDTH] {
        self.norm.normalize_input(&self.samples[i].raw_input())
    }
}

/// One supervised pair per sample, with normalization constants fitted to all of them.
pub fn build_dataset(samples: Vec<DynamicsSample>) -> Result<DynamicsDataset> {
    let norm = Normalization::fit(&samples)?;
    Ok(DynamicsDataset { samples, norm })
}

pub fn build_dataset_from_records(records: &[TransitionRecord]) -> Result<DynamicsDataset> {
    build_dataset(records.iter().map(DynamicsSample::from_record).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsModelHandle {
    pub model: MlpModel,
    pub norm: Normalization,
}

impl DynamicsModelHandle {
    pub fn new(model: MlpModel, norm: Normalization) -> Result<Self> {
        if model.input_width() != INPUT_WIDTH || model.output_width() != OUTPUT_WIDTH {
            return Err(Error::config(format!(
                "dynamics model must map {INPUT_WIDTH} inputs to {OUTPUT_WIDTH} outputs, got {:?}",
                model.sizes()
            )));
        }
        Ok(Self { model, norm })
    }

    /// Prediction before clamping.
    pub fn predict_raw(&self, pos: f64, vel: f64, motion: Motion, ws: &mut Workspace) -> (f64, f64) {
        let x = self.norm.normalize_input(&raw_input(pos, vel, motion));
        let out = self
            .model
            .forward_with(&x, ws)
            .expect("dynamics model has input width 5");
        self.norm.decode_output(pos, vel, out)
    }

    /// Normalized forward pass, de-normalized and clamped to the valid state box.
    pub fn predict_next(&self, pos: f64, vel: f64, motion: Motion) -> (f64, f64) {
        let mut ws = Workspace::for_model(&self.model);
        let (p, v) = self.predict_raw(pos, vel, motion, &mut ws);
        clamp_state(p, v)
    }

    /// Dead-reckoning: feeds each prediction back in as the next input.
    pub fn rollout(&self, pos: f64, vel: f64, motions: &[Motion]) -> Vec<(f64, f64)> {
        let mut state = (pos, vel);
        motions
            .iter()
            .map(|&m| {
                state = self.predict_next(state.0, state.1, m);
                state
            })
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from(NORM_TAG);
        for v in self.norm.values() {
            write!(out, " {v:.16e}").expect("writing to a String");
        }
        out.push('\n');
        out.push_str(&self.model.serialize());
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let (header, rest) = text
            .split_once('\n')
            .ok_or_else(|| Error::parse(1, "missing normalization header"))?;
        let mut tokens = header.split_whitespace();
        if tokens.next() != Some(NORM_TAG) {
            return Err(Error::parse(1, format!("expected `{NORM_TAG}` header")));
        }
        let values: Vec<f64> = tokens
            .map(|t| t.parse::<f64>().map_err(|_| Error::parse(1, format!("invalid number `{t}`"))))
            .collect::<Result<_>>()?;
        if values.len() != 14 {
            return Err(Error::parse(1, format!("expected 14 constants, found {}", values.len())));
        }
        let norm = Normalization::from_values(&values);
        if !norm.is_valid() {
            return Err(Error::parse(1, "normalization constants must be finite with positive scales"));
        }
        let model = MlpModel::deserialize_at(rest, 1)?;
        Self::new(model, norm).map_err(|e| Error::parse(3, format!("{e}")))
    }
}

fn clamp_state(p: f64, v: f64) -> (f64, f64) {
    let s = TrueState::new(p, v).clamped();
    (s.position, s.velocity)
}

impl Imputer for DynamicsModelHandle {
    fn predict_next(&self, pos: f64, vel: f64, motion: Motion) -> (f64, f64) {
        DynamicsModelHandle::predict_next(self, pos, vel, motion)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsTrainConfig {
    pub epochs: u32,
    pub lr: f64,
    pub batch_size: usize,
    pub hidden: Vec<usize>,
    pub holdout_fraction: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl Default for DynamicsTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            lr: 0.001,
            batch_size: 64,
            hidden: vec![64, 64],
            holdout_fraction: 0.1,
            optimizer: OptimizerKind::Adam,
            seed: 0,
        }
    }
}

/// Held-out one-step errors of the model and of the persistence predictor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HoldoutReport {
    pub n_train: usize,
    pub n_holdout: usize,
    pub rmse_pos: f64,
    pub rmse_vel: f64,
    pub baseline_pos: f64,
    pub baseline_vel: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedDynamics {
    pub handle: DynamicsModelHandle,
    pub report: HoldoutReport,
}

/// Splits off a shuffled holdout; returns `(train, holdout)` sample indices.
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream_rng(seed, Stream::Split));
    let mut n_hold = libm::ceil(n as f64 * fraction) as usize;
    if n_hold >= n {
        n_hold = n.saturating_sub(1);
    }
    let holdout = idx.split_off(n - n_hold);
    (idx, holdout)
}

/// Root-mean-square error per component of a predictor over `indices`.
pub fn holdout_rmse(
    samples: &[DynamicsSample],
    indices: &[usize],
    mut predict: impl FnMut(&DynamicsSample) -> (f64, f64),
) -> (f64, f64) {
    let (mut sp, mut sv) = (0.0, 0.0);
    for &i in indices {
        let s = &samples[i];
        let (p, v) = predict(s);
        sp += (p - s.next_pos) * (p - s.next_pos);
        sv += (v - s.next_vel) * (v - s.next_vel);
    }
    let n = indices.len() as f64;
    (libm::sqrt(sp / n), libm::sqrt(sv / n))
}

pub fn train_dynamics(ds: &DynamicsDataset, cfg: &DynamicsTrainConfig) -> Result<TrainedDynamics> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if cfg.batch_size == 0 || !(0.0..1.0).contains(&cfg.holdout_fraction) {
        return Err(Error::config("batch_size must be positive and holdout_fraction in [0, 1)"));
    }
    let (mut train, holdout) = split_indices(ds.len(), cfg.holdout_fraction, cfg.seed);
    let inputs: Vec<[f64; INPUT_WIDTH]> = (0..ds.len()).map(|i| ds.normalized_input(i)).collect();
    let targets: Vec<[f64; OUTPUT_WIDTH]> = ds.samples.iter().map(|s| ds.norm.encode_target(s)).collect();

    let mut sizes = vec![INPUT_WIDTH];
    sizes.extend_from_slice(&cfg.hidden);
    sizes.push(OUTPUT_WIDTH);
    let mut model = MlpModel::init(&sizes, &mut stream_rng(cfg.seed, Stream::Init))?;
    let mut opt = OptimizerState::new(cfg.optimizer, &model);
    let mut grads = Gradients::zeros_like(&model);
    let mut ws = BatchWorkspace::new(&model, cfg.batch_size);
    let mut rng = stream_rng(cfg.seed, Stream::Agent);
    let mut x = Vec::with_capacity(cfg.batch_size * INPUT_WIDTH);
    let mut d_out = Vec::with_capacity(cfg.batch_size * OUTPUT_WIDTH);

    for _ in 0..cfg.epochs {
        train.shuffle(&mut rng);
        for chunk in train.chunks(cfg.batch_size) {
            grads.clear();
            x.clear();
            for &i in chunk {
                x.extend_from_slice(&inputs[i]);
            }
            let out = model.forward_batch(&x, chunk.len(), &mut ws)?;
            let scale = 2.0 / chunk.len() as f64;
            d_out.clear();
            for (row, &i) in out.chunks_exact(OUTPUT_WIDTH).zip(chunk) {
                d_out.extend(row.iter().zip(&targets[i]).map(|(o, t)| scale * (o - t)));
            }
            model.backprop_batch(&d_out, &mut ws, &mut grads);
            opt.step(&mut model, &grads, cfg.lr);
        }
    }

    let handle = DynamicsModelHandle::new(model, ds.norm)?;
    let (rmse_pos, rmse_vel, baseline_pos, baseline_vel) = if holdout.is_empty() {
        (f64::NAN, f64::NAN, f64::NAN, f64::NAN)
    } else {
        let (rp, rv) = holdout_rmse(&ds.samples, &holdout, |s| handle.predict_next(s.pos, s.vel, s.motion));
        let (bp, bv) = holdout_rmse(&ds.samples, &holdout, |s| (s.pos, s.vel));
        (rp, rv, bp, bv)
    };
    Ok(TrainedDynamics {
        handle,
        report: HoldoutReport {
            n_train: train.len(),
            n_holdout: holdout.len(),
            rmse_pos,
            rmse_vel,
            baseline_pos,
            baseline_vel,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics;
    use crate::seeding::{stream_rng, Stream};
    use proptest::prelude::*;
    use rand::Rng;

    // Stays clear of the left wall and the speed limit, where the dynamics are non-smooth.
    fn physics_samples(n: usize, seed: u64) -> Vec<DynamicsSample> {
        let mut rng = stream_rng(seed, Stream::Env);
        (0..n)
            .map(|_| {
                let s = TrueState::new(rng.gen_range(-1.1..0.5), rng.gen_range(-0.06..0.06));
                let m = Motion::from_code(rng.gen_range(0..3)).unwrap();
                let (next, _) = physics::step(s, m);
                DynamicsSample {
                    pos: s.position,
                    vel: s.velocity,
                    motion: m,
                    next_pos: next.position,
                    next_vel: next.velocity,
                }
            })
            .collect()
    }

    #[test]
    fn dataset_keeps_one_pair_per_sample() {
        let (next, _) = physics::step(TrueState::new(-0.5, 0.0), Motion::Right);
        let sample = DynamicsSample {
            pos: -0.5,
            vel: 0.0,
            motion: Motion::Right,
            next_pos: next.position,
            next_vel: next.velocity,
        };
        let ds = build_dataset(vec![sample]).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.samples[0], sample);
        assert!((sample.next_pos - -0.499177).abs() < 1e-6);
        // Every column is constant with one row.
        assert_eq!(ds.norm.input_scale, [1.0; 5]);
        assert_eq!(ds.normalized_input(0), [0.0; 5]);
        assert_eq!(ds.len(), 1);
        assert!(build_dataset(Vec::new()).is_err());
        assert_eq!(build_dataset(physics_samples(37, 1)).unwrap().len(), 37);
    }

    #[test]
    fn constant_column_gets_unit_scale() {
        let mut samples = physics_samples(50, 2);
        for s in &mut samples {
            s.motion = Motion::Left;
        }
        let norm = Normalization::fit(&samples).unwrap();
        assert_eq!(&norm.input_scale[2..], &[1.0, 1.0, 1.0]);
        assert!(norm.input_scale[0] != 1.0);
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let ds = build_dataset(physics_samples(100, 3)).unwrap();
        let cfg = DynamicsTrainConfig {
            epochs: 0,
            hidden: vec![8],
            seed: 4,
            ..DynamicsTrainConfig::default()
        };
        let trained = train_dynamics(&ds, &cfg).unwrap();
        let init = MlpModel::init(&[5, 8, 2], &mut stream_rng(4, Stream::Init)).unwrap();
        assert_eq!(trained.handle.model, init);
        assert_eq!(trained.report.n_holdout, 10);
        assert_eq!(trained.report.n_train, 90);
    }

    #[test]
    fn predictions_are_clamped_and_deterministic() {
        let norm = Normalization::fit(&physics_samples(100, 5)).unwrap();
        let mut model = MlpModel::zeros(&[5, 2]).unwrap();
        model.layers_mut()[0].biases = vec![1e6, 1e6];
        let h = DynamicsModelHandle::new(model, norm).unwrap();
        assert_eq!(h.predict_next(0.0, 0.0, Motion::Coast), (0.6, 0.07));
        let norm = Normalization::fit(&physics_samples(100, 5)).unwrap();
        let model = MlpModel::init(&[5, 4, 2], &mut stream_rng(1, Stream::Init)).unwrap();
        let h = DynamicsModelHandle::new(model, norm).unwrap();
        let a = h.predict_next(-0.3, 0.01, Motion::Left);
        let b = h.predict_next(-0.3, 0.01, Motion::Left);
        assert_eq!(a, b);
    }

    #[test]
    fn text_round_trip() {
        let norm = Normalization::fit(&physics_samples(100, 6)).unwrap();
        let model = MlpModel::init(&[5, 4, 2], &mut stream_rng(1, Stream::Init)).unwrap();
        let h = DynamicsModelHandle::new(model, norm).unwrap();
        let back = DynamicsModelHandle::from_text(&h.to_text()).unwrap();
        assert_eq!(back, h);
        assert!(matches!(
            DynamicsModelHandle::from_text("mlp-v1\n5 2\n"),
            Err(Error::Parse { line: 1, .. })
        ));
        let broken = h.to_text().replace("mlp-v1", "mlp-v9");
        assert!(matches!(DynamicsModelHandle::from_text(&broken), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn rollout_feeds_predictions_back() {
        let norm = Normalization::fit(&physics_samples(100, 7)).unwrap();
        let model = MlpModel::init(&[5, 4, 2], &mut stream_rng(2, Stream::Init)).unwrap();
        let h = DynamicsModelHandle::new(model, norm).unwrap();
        let motions = [Motion::Right, Motion::Right, Motion::Left];
        let path = h.rollout(-0.5, 0.0, &motions);
        let mut s = (-0.5, 0.0);
        for (k, m) in motions.iter().enumerate() {
            s = h.predict_next(s.0, s.1, *m);
            assert_eq!(path[k], s);
        }
    }

    #[test]
    fn learns_physics_on_small_data() {
        let ds = build_dataset(physics_samples(4000, 8)).unwrap();
        let cfg = DynamicsTrainConfig {
            epochs: 30,
            hidden: vec![32, 32],
            ..DynamicsTrainConfig::default()
        };
        let r = train_dynamics(&ds, &cfg).unwrap().report;
        assert!(r.rmse_pos * 5.0 < r.baseline_pos, "{r:?}");
        assert!(r.rmse_vel * 5.0 < r.baseline_vel, "{r:?}");
    }

    proptest! {
        #[test]
        fn normalization_round_trip(p in -1.2f64..0.6, v in -0.07f64..0.07, m in 0usize..3) {
            let norm = Normalization::fit(&physics_samples(64, 9)).unwrap();
            let raw = raw_input(p, v, Motion::from_code(m).unwrap());
            let back = norm.denormalize_input(&norm.normalize_input(&raw));
            for c in 0..INPUT_WIDTH {
                prop_assert!((back[c] - raw[c]).abs() <= 1e-12);
            }
        }
    }
}
