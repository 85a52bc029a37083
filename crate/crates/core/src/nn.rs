//! A small dense MLP: ReLU hidden layers, identity output, exact backprop,
//! Adam or plain gradient descent, and a line-oriented text format.
//!
//! Weight matrices are stored row-major with one row per output unit, so
//! layer `k` holds a `sizes[k+1] x sizes[k]` matrix.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;
use core::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};

pub const FORMAT_TAG: &str = "mlp-v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            biases: vec![0.0; outputs],
        }
    }

    pub fn row(&self, o: usize) -> &[f64] {
        &self.weights[o * self.inputs..(o + 1) * self.inputs]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    sizes: Vec<usize>,
    layers: Vec<Dense>,
}

/// Parameter-shaped accumulator for gradients and optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| Dense::zeros(l.inputs, l.outputs))
                .collect(),
        }
    }

    pub fn clear(&mut self) {
        for l in &mut self.layers {
            l.weights.fill(0.0);
            l.biases.fill(0.0);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|w| *w *= factor);
            l.biases.iter_mut().for_each(|b| *b *= factor);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|&g| g == 0.0))
    }
}

/// Scratch buffers reused across forward/backward passes.
#[derive(Debug, Clone, Default)]
pub struct Workspace {
    acts: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
}

impl Workspace {
    pub fn for_model(model: &MlpModel) -> Self {
        Self {
            acts: model.sizes.iter().map(|&n| vec![0.0; n]).collect(),
            deltas: model.sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    fn fits(&self, model: &MlpModel) -> bool {
        self.acts.len() == model.sizes.len()
            && self.acts.iter().zip(&model.sizes).all(|(a, &n)| a.len() == n)
    }
}

/// Row-major `batch x width` activation and delta matrices per layer.
#[derive(Debug, Clone, Default)]
pub struct BatchWorkspace {
    batch: usize,
    acts: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
}

impl BatchWorkspace {
    pub fn new(model: &MlpModel, batch: usize) -> Self {
        Self {
            batch,
            acts: model.sizes.iter().map(|&n| vec![0.0; n * batch]).collect(),
            deltas: model.sizes.iter().map(|&n| vec![0.0; n * batch]).collect(),
        }
    }

    fn fits(&self, model: &MlpModel, batch: usize) -> bool {
        self.batch == batch
            && self.acts.len() == model.sizes.len()
            && self.acts.iter().zip(&model.sizes).all(|(a, &n)| a.len() == n * batch)
    }
}

/// Strides `(row, column)` of a matrix operand.
type Strides = (isize, isize);

/// `c = a·b + beta·c` for an `m x k` by `k x n` product; `c` is row-major `m x n`.
fn gemm(m: usize, k: usize, n: usize, a: &[f64], sa: Strides, b: &[f64], sb: Strides, beta: f64, c: &mut [f64]) {
    let span = |rows: usize, cols: usize, (rs, cs): Strides| {
        (rows.saturating_sub(1)) * rs as usize + (cols.saturating_sub(1)) * cs as usize + 1
    };
    assert!(a.len() >= span(m, k, sa) && b.len() >= span(k, n, sb) && c.len() >= m * n);
    // SAFETY: the assertion above keeps every strided access within the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            sa.0,
            sa.1,
            b.as_ptr(),
            sb.0,
            sb.1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Dot product with sixteen independent partial sums, so the adds pipeline
/// instead of waiting on one accumulator. Summation order is fixed, which
/// keeps results bit-identical across runs.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    const LANES: usize = 16;
    let mut acc = [0.0f64; LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..LANES {
            acc[k] += x[k] * y[k];
        }
    }
    let mut width = LANES;
    while width > 1 {
        width /= 2;
        for k in 0..width {
            acc[k] += acc[k + width];
        }
    }
    acc[0] + tail
}

fn check_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 {
        return Err(Error::config("an MLP needs at least an input and an output layer"));
    }
    if sizes.contains(&0) {
        return Err(Error::config("layer sizes must be positive"));
    }
    Ok(())
}

impl MlpModel {
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        check_sizes(sizes)?;
        Ok(Self {
            sizes: sizes.to_vec(),
            layers: sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
        })
    }

    /// Weights and biases uniform in `±1/√fan_in`.
    pub fn init<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<Self> {
        let mut model = Self::zeros(sizes)?;
        for layer in &mut model.layers {
            let bound = 1.0 / libm::sqrt(layer.inputs as f64);
            for p in layer.weights.iter_mut().chain(layer.biases.iter_mut()) {
                *p = rng.gen_range(-bound..=bound);
            }
        }
        Ok(model)
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        let first = layers.first().ok_or_else(|| Error::config("no layers"))?;
        let mut sizes = vec![first.inputs];
        for l in &layers {
            if l.inputs != *sizes.last().expect("nonempty") {
                return Err(Error::Shape {
                    expected: *sizes.last().expect("nonempty"),
                    got: l.inputs,
                });
            }
            if l.weights.len() != l.inputs * l.outputs || l.biases.len() != l.outputs {
                return Err(Error::Shape {
                    expected: l.inputs * l.outputs + l.outputs,
                    got: l.weights.len() + l.biases.len(),
                });
            }
            sizes.push(l.outputs);
        }
        check_sizes(&sizes)?;
        Ok(Self { sizes, layers })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_width(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_width(&self) -> usize {
        *self.sizes.last().expect("at least two layers")
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|p| p.is_finite()))
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_width() {
            return Err(Error::Shape {
                expected: self.input_width(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut ws = Workspace::for_model(self);
        Ok(self.forward_with(x, &mut ws)?.to_vec())
    }

    /// Forward pass into `ws`; the returned slice borrows the output layer.
    pub fn forward_with<'w>(&self, x: &[f64], ws: &'w mut Workspace) -> Result<&'w [f64]> {
        self.check_input(x)?;
        if !ws.fits(self) {
            *ws = Workspace::for_model(self);
        }
        ws.acts[0].copy_from_slice(x);
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let (head, tail) = ws.acts.split_at_mut(k + 1);
            let input = &head[k];
            let out = &mut tail[0];
            for (o, slot) in out.iter_mut().enumerate() {
                let z = dot(layer.row(o), input) + layer.biases[o];
                *slot = if k < last { z.max(0.0) } else { z };
            }
        }
        Ok(ws.acts.last().expect("output layer"))
    }

    /// Reverse-mode gradient of `d_out · forward(x)` with respect to every parameter.
    pub fn backward(&self, x: &[f64], d_out: &[f64]) -> Result<Gradients> {
        let mut grads = Gradients::zeros_like(self);
        let mut ws = Workspace::for_model(self);
        self.accumulate_gradients(x, d_out, &mut ws, &mut grads)?;
        Ok(grads)
    }

    /// Adds the gradient of `d_out · forward(x)` into `grads`.
    pub fn accumulate_gradients(
        &self,
        x: &[f64],
        d_out: &[f64],
        ws: &mut Workspace,
        grads: &mut Gradients,
    ) -> Result<()> {
        if d_out.len() != self.output_width() {
            return Err(Error::Shape {
                expected: self.output_width(),
                got: d_out.len(),
            });
        }
        self.forward_with(x, ws)?;
        self.backprop(d_out, ws, grads);
        Ok(())
    }

    /// Backward pass using activations cached by the preceding `forward_with`.
    pub fn backprop(&self, d_out: &[f64], ws: &mut Workspace, grads: &mut Gradients) {
        let n = self.layers.len();
        ws.deltas[n].copy_from_slice(d_out);
        for k in (0..n).rev() {
            let layer = &self.layers[k];
            let g = &mut grads.layers[k];
            let (lower, upper) = ws.deltas.split_at_mut(k + 1);
            let delta = &upper[0];
            let input = &ws.acts[k];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                g.biases[o] += d;
                let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (w, &a) in row.iter_mut().zip(input) {
                    *w += d * a;
                }
            }
            if k > 0 {
                let below = &mut lower[k];
                below.fill(0.0);
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    for (b, &w) in below.iter_mut().zip(layer.row(o)) {
                        *b += d * w;
                    }
                }
                for (b, &a) in below.iter_mut().zip(input) {
                    if a <= 0.0 {
                        *b = 0.0;
                    }
                }
            }
        }
    }

    /// Forward pass over `batch` row-major inputs; returns the `batch x out` outputs.
    pub fn forward_batch<'w>(&self, x: &[f64], batch: usize, ws: &'w mut BatchWorkspace) -> Result<&'w [f64]> {
        if x.len() != batch * self.input_width() {
            return Err(Error::Shape {
                expected: batch * self.input_width(),
                got: x.len(),
            });
        }
        if !ws.fits(self, batch) {
            *ws = BatchWorkspace::new(self, batch);
        }
        ws.acts[0].copy_from_slice(x);
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let (head, tail) = ws.acts.split_at_mut(k + 1);
            let input = &head[k];
            let out = &mut tail[0];
            for row in out.chunks_exact_mut(layer.outputs) {
                row.copy_from_slice(&layer.biases);
            }
            // Z = A·Wᵀ + 1·bᵀ, reading W transposed through its strides.
            gemm(
                batch,
                layer.inputs,
                layer.outputs,
                input,
                (layer.inputs as isize, 1),
                &layer.weights,
                (1, layer.inputs as isize),
                1.0,
                out,
            );
            if k < last {
                out.iter_mut().for_each(|z| *z = z.max(0.0));
            }
        }
        Ok(ws.acts.last().expect("output layer"))
    }

    /// Accumulates the gradient of `Σ_rows d_out·forward(x)` using activations
    /// cached by the preceding `forward_batch`.
    pub fn backprop_batch(&self, d_out: &[f64], ws: &mut BatchWorkspace, grads: &mut Gradients) {
        let batch = ws.batch;
        let n = self.layers.len();
        ws.deltas[n].copy_from_slice(d_out);
        for k in (0..n).rev() {
            let layer = &self.layers[k];
            let g = &mut grads.layers[k];
            let (lower, upper) = ws.deltas.split_at_mut(k + 1);
            let delta = &upper[0];
            let input = &ws.acts[k];
            for row in delta.chunks_exact(layer.outputs) {
                for (gb, &d) in g.biases.iter_mut().zip(row) {
                    *gb += d;
                }
            }
            // dW += Δᵀ·A
            gemm(
                layer.outputs,
                batch,
                layer.inputs,
                delta,
                (1, layer.outputs as isize),
                input,
                (layer.inputs as isize, 1),
                1.0,
                &mut g.weights,
            );
            if k > 0 {
                let below = &mut lower[k];
                // dA = Δ·W, then gate through the ReLU.
                gemm(
                    batch,
                    layer.outputs,
                    layer.inputs,
                    delta,
                    (layer.outputs as isize, 1),
                    &layer.weights,
                    (layer.inputs as isize, 1),
                    0.0,
                    below,
                );
                for (b, &a) in below.iter_mut().zip(input) {
                    if a <= 0.0 {
                        *b = 0.0;
                    }
                }
            }
        }
    }

    pub fn serialize(&self) -> String {
        let mut out = String::new();
        out.push_str(FORMAT_TAG);
        out.push('\n');
        let sizes: Vec<String> = self.sizes.iter().map(|n| format!("{n}")).collect();
        out.push_str(&sizes.join(" "));
        out.push('\n');
        for layer in &self.layers {
            write_tensor(&mut out, &layer.weights);
            write_tensor(&mut out, &layer.biases);
        }
        out
    }

    pub fn deserialize(text: &str) -> Result<Self> {
        Self::deserialize_at(text, 0)
    }

    /// Parses a model whose first line sits at `line_offset` within a larger
    /// file, so error line numbers refer to the enclosing file.
    pub fn deserialize_at(text: &str, line_offset: usize) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1 + line_offset, l));
        let (no, tag) = lines
            .next()
            .ok_or_else(|| Error::parse(line_offset + 1, "empty model file"))?;
        if tag.trim() != FORMAT_TAG {
            return Err(Error::parse(no, format!("expected `{FORMAT_TAG}`, found `{}`", tag.trim())));
        }
        let (no, size_line) = lines
            .next()
            .ok_or_else(|| Error::parse(no + 1, "missing layer sizes"))?;
        let sizes = parse_numbers::<usize>(size_line, no)?;
        check_sizes(&sizes).map_err(|e| Error::parse(no, format!("{e}")))?;
        let mut model = Self::zeros(&sizes).expect("sizes checked");
        let mut last = no;
        for layer in &mut model.layers {
            for (tensor, what) in [(&mut layer.weights, "weights"), (&mut layer.biases, "biases")] {
                let (no, line) = lines
                    .next()
                    .ok_or_else(|| Error::parse(last + 1, format!("missing {what} line")))?;
                let values = parse_numbers::<f64>(line, no)?;
                if values.len() != tensor.len() {
                    return Err(Error::parse(
                        no,
                        format!("{what}: declared sizes imply {} values, found {}", tensor.len(), values.len()),
                    ));
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::parse(no, "non-finite parameter"));
                }
                tensor.copy_from_slice(&values);
                last = no;
            }
        }
        if let Some((no, extra)) = lines.find(|(_, l)| !l.trim().is_empty()) {
            return Err(Error::parse(no, format!("trailing content `{}`", extra.trim())));
        }
        Ok(model)
    }
}

fn write_tensor(out: &mut String, values: &[f64]) {
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        // 17 significant digits round-trip every f64 exactly.
        write!(out, "{v:.16e}").expect("writing to a String");
    }
    out.push('\n');
}

fn parse_numbers<T: FromStr>(line: &str, no: usize) -> Result<Vec<T>> {
    line.split_whitespace()
        .map(|tok| {
            tok.parse::<T>()
                .map_err(|_| Error::parse(no, format!("invalid number `{tok}`")))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
        }
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::Sgd),
            other => Err(Error::config(format!("unknown optimizer `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub steps: u64,
    first: Gradients,
    second: Gradients,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, model: &MlpModel) -> Self {
        Self {
            kind,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            steps: 0,
            first: Gradients::zeros_like(model),
            second: Gradients::zeros_like(model),
        }
    }

    pub fn adam(model: &MlpModel) -> Self {
        Self::new(OptimizerKind::Adam, model)
    }

    /// Applies one descent step of size `lr` along `grads`.
    pub fn step(&mut self, model: &mut MlpModel, grads: &Gradients, lr: f64) {
        self.steps += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (layer, g) in model.layers.iter_mut().zip(&grads.layers) {
                    for (p, &d) in layer.weights.iter_mut().zip(&g.weights) {
                        *p -= lr * d;
                    }
                    for (p, &d) in layer.biases.iter_mut().zip(&g.biases) {
                        *p -= lr * d;
                    }
                }
            }
            OptimizerKind::Adam => {
                let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
                let t = self.steps as f64;
                let c1 = 1.0 - libm::pow(b1, t);
                let c2 = 1.0 - libm::pow(b2, t);
                let (step, inv_c2) = (lr / c1, 1.0 / c2);
                let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
                    for ((&g, m), v) in g.iter().zip(m.iter_mut()).zip(v.iter_mut()) {
                        *m = b1 * *m + (1.0 - b1) * g;
                        *v = b2 * *v + (1.0 - b2) * g * g;
                    }
                    for ((p, &m), &v) in p.iter_mut().zip(m.iter()).zip(v.iter()) {
                        *p -= step * m / (libm::sqrt(v * inv_c2) + eps);
                    }
                };
                for (((layer, g), m), v) in model
                    .layers
                    .iter_mut()
                    .zip(&grads.layers)
                    .zip(&mut self.first.layers)
                    .zip(&mut self.second.layers)
                {
                    update(&mut layer.weights, &g.weights, &mut m.weights, &mut v.weights);
                    update(&mut layer.biases, &g.biases, &mut m.biases, &mut v.biases);
                }
            }
        }
    }
}
