use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, ShapeMode, ShapeVector, Split};
use super::resistance::ResistanceVector;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation output.
    fn slope(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

/// One layer. Dropout applies to the layer output during training only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Layer {
    Dense {
        inputs: usize,
        outputs: usize,
        /// Row-major, `outputs × inputs`.
        weights: Vec<f64>,
        bias: Vec<f64>,
        activation: Activation,
        dropout: f64,
    },
    /// Single-channel valid convolution over a `rows × cols` grid; output is
    /// filter-major.
    Conv {
        rows: usize,
        cols: usize,
        filters: usize,
        kernel: usize,
        /// Row-major, `filters × kernel × kernel`.
        weights: Vec<f64>,
        bias: Vec<f64>,
        activation: Activation,
        dropout: f64,
    },
}

impl Layer {
    pub fn input_len(&self) -> usize {
        match self {
            Layer::Dense { inputs, .. } => *inputs,
            Layer::Conv { rows, cols, .. } => rows * cols,
        }
    }

    pub fn output_len(&self) -> usize {
        match self {
            Layer::Dense { outputs, .. } => *outputs,
            Layer::Conv { rows, cols, filters, kernel, .. } => filters * (rows + 1 - kernel) * (cols + 1 - kernel),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Layer::Dense { weights, bias, .. } | Layer::Conv { weights, bias, .. } => weights.len() + bias.len(),
        }
    }

    fn dropout(&self) -> f64 {
        match self {
            Layer::Dense { dropout, .. } | Layer::Conv { dropout, .. } => *dropout,
        }
    }

    fn activation(&self) -> Activation {
        match self {
            Layer::Dense { activation, .. } | Layer::Conv { activation, .. } => *activation,
        }
    }

    fn params_mut(&mut self) -> (&mut Vec<f64>, &mut Vec<f64>) {
        match self {
            Layer::Dense { weights, bias, .. } | Layer::Conv { weights, bias, .. } => (weights, bias),
        }
    }

    fn params(&self) -> (&[f64], &[f64]) {
        match self {
            Layer::Dense { weights, bias, .. } | Layer::Conv { weights, bias, .. } => (weights, bias),
        }
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        let act = self.activation();
        match self {
            Layer::Dense { inputs, outputs, weights, bias, .. } => (0..*outputs)
                .map(|o| {
                    let row = &weights[o * inputs..(o + 1) * inputs];
                    act.apply(bias[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
                })
                .collect(),
            Layer::Conv { cols, filters, kernel, weights, bias, .. } => {
                let (or, oc) = (self.input_len() / cols + 1 - kernel, cols + 1 - kernel);
                let k = *kernel;
                let mut out = Vec::with_capacity(filters * or * oc);
                for f in 0..*filters {
                    let w = &weights[f * k * k..(f + 1) * k * k];
                    for i in 0..or {
                        for j in 0..oc {
                            let mut z = bias[f];
                            for a in 0..k {
                                let xr = &x[(i + a) * cols + j..(i + a) * cols + j + k];
                                let wr = &w[a * k..(a + 1) * k];
                                z += xr.iter().zip(wr).map(|(p, q)| p * q).sum::<f64>();
                            }
                            out.push(act.apply(z));
                        }
                    }
                }
                out
            }
        }
    }

    /// Accumulates parameter gradients given `dz = ∂L/∂(pre-activation)`;
    /// returns `∂L/∂x` when `want_input`.
    fn backward(&self, x: &[f64], dz: &[f64], grad: &mut [f64], want_input: bool) -> Vec<f64> {
        let mut dx = if want_input { vec![0.0; x.len()] } else { Vec::new() };
        match self {
            Layer::Dense { inputs, outputs, weights, .. } => {
                let (gw, gb) = grad.split_at_mut(inputs * outputs);
                for o in 0..*outputs {
                    let d = dz[o];
                    if d == 0.0 {
                        continue;
                    }
                    gb[o] += d;
                    let row = o * inputs;
                    for (g, v) in gw[row..row + inputs].iter_mut().zip(x) {
                        *g += d * v;
                    }
                    if want_input {
                        for (dxi, w) in dx.iter_mut().zip(&weights[row..row + inputs]) {
                            *dxi += d * w;
                        }
                    }
                }
            }
            Layer::Conv { cols, filters, kernel, weights, .. } => {
                let k = *kernel;
                let (or, oc) = (x.len() / cols + 1 - k, cols + 1 - k);
                let (gw, gb) = grad.split_at_mut(filters * k * k);
                for f in 0..*filters {
                    for i in 0..or {
                        for j in 0..oc {
                            let d = dz[f * or * oc + i * oc + j];
                            if d == 0.0 {
                                continue;
                            }
                            gb[f] += d;
                            for a in 0..k {
                                for b in 0..k {
                                    let xi = (i + a) * cols + j + b;
                                    let wi = f * k * k + a * k + b;
                                    gw[wi] += d * x[xi];
                                    if want_input {
                                        dx[xi] += d * weights[wi];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        dx
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum LayerSpec {
    Dense { outputs: usize, activation: Activation, dropout: f64 },
    Conv { filters: usize, kernel: usize, activation: Activation, dropout: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// 32 3×3 convolution filters over a 5-frame window, 0.5 dropout.
    Strip,
    /// Dense 32 and 16 units, 0.2 dropout, single-frame input.
    Finger,
    Custom,
}

impl Preset {
    pub fn window(self) -> usize {
        match self {
            Preset::Strip => 5,
            Preset::Finger | Preset::Custom => 1,
        }
    }

    /// Hidden layers; an identity output layer is appended on construction.
    pub fn hidden_layers(self) -> Vec<LayerSpec> {
        match self {
            Preset::Strip => vec![LayerSpec::Conv { filters: 32, kernel: 3, activation: Activation::Tanh, dropout: 0.5 }],
            Preset::Finger => vec![
                LayerSpec::Dense { outputs: 32, activation: Activation::Tanh, dropout: 0.2 },
                LayerSpec::Dense { outputs: 16, activation: Activation::Tanh, dropout: 0.2 },
            ],
            Preset::Custom => Vec::new(),
        }
    }

    pub fn mode(self) -> Option<ShapeMode> {
        match self {
            Preset::Strip => Some(ShapeMode::Orientation),
            Preset::Finger => Some(ShapeMode::Position),
            Preset::Custom => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regressor {
    pub preset: Preset,
    pub mode: ShapeMode,
    pub window: usize,
    pub segments: usize,
    pub output_width: usize,
    pub layers: Vec<Layer>,
    pub input_mean: Vec<f64>,
    pub input_std: Vec<f64>,
    pub output_mean: Vec<f64>,
    pub output_std: Vec<f64>,
}

struct Trace {
    /// Input of each layer, then the network output.
    acts: Vec<Vec<f64>>,
    /// Inverted-dropout scale per output unit, empty when dropout was off.
    masks: Vec<Vec<f64>>,
}

impl Regressor {
    /// Randomly initialized network (Glorot uniform) with an identity output
    /// layer after `hidden`; normalization is the identity until trained.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        preset: Preset,
        mode: ShapeMode,
        hidden: &[LayerSpec],
        window: usize,
        segments: usize,
        output_width: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if window == 0 || segments == 0 || output_width == 0 {
            return Err(Error::InvalidInput("network dimensions must be positive".into()));
        }
        let mut layers = Vec::new();
        let mut width = window * segments;
        let mut uniform = |n: usize, limit: f64| -> Vec<f64> { (0..n).map(|_| rng.random_range(-limit..limit)).collect() };
        for spec in hidden.iter().chain(std::iter::once(&LayerSpec::Dense { outputs: output_width, activation: Activation::Identity, dropout: 0.0 }))
        {
            let layer = match *spec {
                LayerSpec::Dense { outputs, activation, dropout } => Layer::Dense {
                    inputs: width,
                    outputs,
                    weights: uniform(width * outputs, (6.0 / (width + outputs) as f64).sqrt()),
                    bias: vec![0.0; outputs],
                    activation,
                    dropout,
                },
                LayerSpec::Conv { filters, kernel, activation, dropout } => {
                    let rows = width / segments;
                    if width != window * segments || rows < kernel || segments < kernel {
                        return Err(Error::InvalidInput("convolution must come first and fit the input window".into()));
                    }
                    let fan = (kernel * kernel * (1 + filters)) as f64;
                    Layer::Conv {
                        rows,
                        cols: segments,
                        filters,
                        kernel,
                        weights: uniform(filters * kernel * kernel, (6.0 / fan).sqrt()),
                        bias: vec![0.0; filters],
                        activation,
                        dropout,
                    }
                }
            };
            if !(0.0..1.0).contains(&layer.dropout()) || layer.output_len() == 0 {
                return Err(Error::InvalidInput("dropout must lie in [0, 1) and layers must be non-empty".into()));
            }
            width = layer.output_len();
            layers.push(layer);
        }
        let n = window * segments;
        Ok(Self {
            preset,
            mode,
            window,
            segments,
            output_width,
            layers,
            input_mean: vec![0.0; n],
            input_std: vec![1.0; n],
            output_mean: vec![0.0; output_width],
            output_std: vec![1.0; output_width],
        })
    }

    pub fn from_preset(preset: Preset, segments: usize, output_width: usize, rng: &mut impl Rng) -> Result<Self> {
        let mode = preset.mode().ok_or_else(|| Error::InvalidInput("custom preset needs an explicit architecture".into()))?;
        Self::new(preset, mode, &preset.hidden_layers(), preset.window(), segments, output_width, rng)
    }

    pub fn input_width(&self) -> usize {
        self.window * self.segments
    }

    pub fn validate(&self) -> Result<()> {
        let mut width = self.input_width();
        for l in &self.layers {
            if l.input_len() != width {
                return Err(Error::ShapeMismatch { expected: width, got: l.input_len() });
            }
            let (w, b) = l.params();
            let expected = match l {
                Layer::Dense { inputs, outputs, .. } => (inputs * outputs, *outputs),
                Layer::Conv { filters, kernel, .. } => (filters * kernel * kernel, *filters),
            };
            if (w.len(), b.len()) != expected {
                return Err(Error::InvalidInput("layer parameter count does not match its size".into()));
            }
            width = l.output_len();
        }
        if width != self.output_width {
            return Err(Error::ShapeMismatch { expected: self.output_width, got: width });
        }
        let norms = [&self.input_mean, &self.input_std];
        if norms.iter().any(|v| v.len() != self.input_width()) || self.output_mean.len() != width || self.output_std.len() != width {
            return Err(Error::InvalidInput("normalization statistics have the wrong length".into()));
        }
        let all =
            self.params().into_iter().chain(self.input_std.iter().chain(&self.output_std).chain(&self.input_mean).chain(&self.output_mean).copied());
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite network parameter".into()));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// All weights and biases, layer by layer, weights before biases.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            let (w, b) = l.params();
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    pub fn set_params(&mut self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.param_count() {
            return Err(Error::ShapeMismatch { expected: self.param_count(), got: theta.len() });
        }
        let mut at = 0;
        for l in &mut self.layers {
            let (w, b) = l.params_mut();
            let (nw, nb) = (w.len(), b.len());
            w.copy_from_slice(&theta[at..at + nw]);
            at += nw;
            b.copy_from_slice(&theta[at..at + nb]);
            at += nb;
        }
        Ok(())
    }

    fn normalize_input(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.input_mean).zip(&self.input_std).map(|((v, m), s)| (v - m) / s).collect()
    }

    fn normalize_output(&self, y: &[f64]) -> Vec<f64> {
        y.iter().zip(&self.output_mean).zip(&self.output_std).map(|((v, m), s)| (v - m) / s).collect()
    }

    fn run(&self, x: Vec<f64>, rng: Option<&mut ChaCha8Rng>) -> Trace {
        let mut acts = vec![x];
        let mut masks = Vec::new();
        let mut rng = rng;
        for l in &self.layers {
            let mut y = l.forward(acts.last().unwrap());
            let p = l.dropout();
            let mask = match rng.as_deref_mut() {
                Some(r) if p > 0.0 => {
                    let keep = 1.0 / (1.0 - p);
                    let m: Vec<f64> = (0..y.len()).map(|_| if r.random::<f64>() < p { 0.0 } else { keep }).collect();
                    y.iter_mut().zip(&m).for_each(|(v, s)| *v *= s);
                    m
                }
                _ => Vec::new(),
            };
            masks.push(mask);
            acts.push(y);
        }
        Trace { acts, masks }
    }

    /// Squared error of one normalized sample; gradient (scaled by `scale`)
    /// added into `grad`.
    fn accumulate(&self, x: Vec<f64>, t: &[f64], rng: Option<&mut ChaCha8Rng>, scale: f64, grad: &mut [f64]) -> f64 {
        let trace = self.run(x, rng);
        let out = trace.acts.last().unwrap();
        let mut delta: Vec<f64> = out.iter().zip(t).map(|(o, t)| 2.0 * (o - t) * scale).collect();
        let loss = out.iter().zip(t).map(|(o, t)| (o - t) * (o - t)).sum();
        let mut end = grad.len();
        for (li, l) in self.layers.iter().enumerate().rev() {
            let y = &trace.acts[li + 1];
            let mask = &trace.masks[li];
            let act = l.activation();
            let dz: Vec<f64> = if mask.is_empty() {
                delta.iter().zip(y).map(|(d, y)| d * act.slope(*y)).collect()
            } else {
                // y holds the masked output; recover the activation where kept
                delta.iter().zip(y).zip(mask).map(|((d, y), m)| if *m == 0.0 { 0.0 } else { d * m * act.slope(y / m) }).collect()
            };
            let start = end - l.param_count();
            delta = l.backward(&trace.acts[li], &dz, &mut grad[start..end], li > 0);
            end = start;
        }
        loss
    }

    /// Mean squared error in normalized units over the given samples.
    pub fn loss(&self, inputs: &[&[f64]], targets: &[&[f64]]) -> f64 {
        let n = (inputs.len() * self.output_width).max(1) as f64;
        inputs
            .iter()
            .zip(targets)
            .map(|(x, t)| {
                let out = self.run(self.normalize_input(x), None).acts.pop().unwrap();
                let t = self.normalize_output(t);
                out.iter().zip(&t).map(|(o, t)| (o - t) * (o - t)).sum::<f64>()
            })
            .sum::<f64>()
            / n
    }

    /// Loss and its gradient with respect to `params()`, dropout disabled.
    pub fn loss_and_gradient(&self, inputs: &[&[f64]], targets: &[&[f64]]) -> (f64, Vec<f64>) {
        let n = (inputs.len() * self.output_width).max(1) as f64;
        let mut grad = vec![0.0; self.param_count()];
        let mut loss = 0.0;
        for (x, t) in inputs.iter().zip(targets) {
            loss += self.accumulate(self.normalize_input(x), &self.normalize_output(t), None, 1.0 / n, &mut grad);
        }
        (loss / n, grad)
    }

    /// Forward pass on a flattened window (oldest frame first).
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_width() {
            return Err(Error::ShapeMismatch { expected: self.input_width(), got: input.len() });
        }
        let out = self.run(self.normalize_input(input), None).acts.pop().unwrap();
        let y: Vec<f64> = out.iter().zip(&self.output_mean).zip(&self.output_std).map(|((v, m), s)| v * s + m).collect();
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite prediction".into()));
        }
        Ok(y)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("regressor serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: Self = serde_json::from_str(text).map_err(|e| Error::InvalidInput(format!("regressor file: {e}")))?;
        r.validate()?;
        Ok(r)
    }
}

/// Shape at the newest frame of `window`.
pub fn predict_shape(reg: &Regressor, window: &[ResistanceVector]) -> Result<ShapeVector> {
    if window.len() != reg.window {
        return Err(Error::ShapeMismatch { expected: reg.window, got: window.len() });
    }
    let mut input = Vec::with_capacity(reg.input_width());
    for r in window {
        if r.r.len() != reg.segments {
            return Err(Error::ShapeMismatch { expected: reg.segments, got: r.r.len() });
        }
        input.extend_from_slice(&r.r);
    }
    let entries = reg.predict(&input)?;
    ShapeVector::new(reg.mode, reg.output_width / reg.mode.width(), entries)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self { epochs: 200, learning_rate: 1e-3, momentum: 0.9, batch_size: 64, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Full training-set loss after each epoch, dropout off.
    pub train_loss: Vec<f64>,
    pub validation_loss: Vec<f64>,
    pub best_epoch: usize,
}

fn column_stats(rows: &[&[f64]], width: usize) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len().max(1) as f64;
    let mut mean = vec![0.0; width];
    for r in rows {
        mean.iter_mut().zip(r.iter()).for_each(|(m, v)| *m += v / n);
    }
    let mut var = vec![0.0; width];
    for r in rows {
        var.iter_mut().zip(r.iter().zip(&mean)).for_each(|(s, (v, m))| *s += (v - m) * (v - m) / n);
    }
    let std = var
        .iter()
        .zip(&mean)
        .map(|(v, m)| {
            let s = v.sqrt();
            if s > 1e-9 * (1.0 + m.abs()) {
                s
            } else {
                1.0
            }
        })
        .collect();
    (mean, std)
}

pub fn train_regressor(d: &Dataset, preset: Preset, options: &TrainOptions) -> Result<(Regressor, TrainReport)> {
    if preset.window() != d.window {
        return Err(Error::ShapeMismatch { expected: preset.window(), got: d.window });
    }
    let mode = preset.mode().unwrap_or(d.mode);
    if mode != d.mode {
        return Err(Error::InvalidInput(format!("{preset:?} preset expects {mode:?} targets")));
    }
    train_with_layers(d, preset, &preset.hidden_layers(), options)
}

/// Mini-batch SGD with momentum on normalized data; returns the parameters
/// with the lowest validation loss.
pub fn train_with_layers(d: &Dataset, preset: Preset, hidden: &[LayerSpec], options: &TrainOptions) -> Result<(Regressor, TrainReport)> {
    let train: Vec<_> = d.split(Split::Train).collect();
    let val: Vec<_> = d.split(Split::Validation).collect();
    if train.is_empty() || val.is_empty() {
        return Err(Error::InvalidInput("training needs train and validation samples".into()));
    }
    if options.batch_size == 0 || !(options.learning_rate > 0.0) || !(0.0..1.0).contains(&options.momentum) {
        return Err(Error::InvalidInput("invalid training options".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut reg = Regressor::new(preset, d.mode, hidden, d.window, d.segments, d.target_width, &mut rng)?;
    let xs: Vec<&[f64]> = train.iter().map(|s| s.input.as_slice()).collect();
    let ts: Vec<&[f64]> = train.iter().map(|s| s.target.as_slice()).collect();
    (reg.input_mean, reg.input_std) = column_stats(&xs, d.input_width());
    (reg.output_mean, reg.output_std) = column_stats(&ts, d.target_width);
    let xn: Vec<Vec<f64>> = xs.iter().map(|x| reg.normalize_input(x)).collect();
    let tn: Vec<Vec<f64>> = ts.iter().map(|t| reg.normalize_output(t)).collect();
    let vx: Vec<&[f64]> = val.iter().map(|s| s.input.as_slice()).collect();
    let vt: Vec<&[f64]> = val.iter().map(|s| s.target.as_slice()).collect();

    let mut theta = reg.params();
    let mut velocity = vec![0.0; theta.len()];
    let mut grad = vec![0.0; theta.len()];
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best = (f64::INFINITY, theta.clone(), 0);
    let mut report = TrainReport { train_loss: Vec::new(), validation_loss: Vec::new(), best_epoch: 0 };
    for epoch in 0..options.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(options.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / (batch.len() * d.target_width) as f64;
            for &i in batch {
                reg.accumulate(xn[i].clone(), &tn[i], Some(&mut rng), scale, &mut grad);
            }
            for ((p, v), g) in theta.iter_mut().zip(velocity.iter_mut()).zip(&grad) {
                *v = options.momentum * *v - options.learning_rate * g;
                *p += *v;
            }
            reg.set_params(&theta)?;
        }
        let tl = reg.loss(&xs, &ts);
        let vl = reg.loss(&vx, &vt);
        if !tl.is_finite() || !vl.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        report.train_loss.push(tl);
        report.validation_loss.push(vl);
        if vl < best.0 {
            best = (vl, theta.clone(), epoch);
        }
    }
    if options.epochs > 0 {
        reg.set_params(&best.1)?;
        report.best_epoch = best.2;
    }
    Ok((reg, report))
}
