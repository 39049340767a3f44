//! Dilated causal residual convolutional forecaster.
//!
//! The network maps a window of `seq_len` indicator values to a forecast
//! `horizon` steps past the window end. Block `i` applies a causal
//! convolution with dilation `2^i` (left zero-padding only), a rectifier, and
//! adds a residual path (identity, or a 1x1 projection when channel counts
//! differ). A linear head reads the last time step of the final block.
//!
//! All parameters live in one flat vector. Layout, per block in order:
//! conv weights `[out][in][k]`, conv bias `[out]`, then (projection blocks
//! only) projection weights `[out][in]` and projection bias `[out]`; finally
//! head weights `[C_last]` and head bias. Checkpoints store this vector
//! verbatim.

use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::derive_seed;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "spikerul-forecaster";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForecasterConfig {
    pub seq_len: usize,
    pub horizon: usize,
    pub channels: Vec<usize>,
    pub kernel_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Trailing fraction of each training run held out for validation loss
    /// reporting (never used for fitting or early stopping).
    pub validation_fraction: f64,
}

impl Default for ForecasterConfig {
    fn default() -> Self {
        Self {
            seq_len: 20,
            horizon: 5,
            channels: vec![32, 32, 16],
            kernel_size: 3,
            learning_rate: 1e-3,
            epochs: 10,
            batch_size: 32,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            validation_fraction: 0.1,
        }
    }
}

impl ForecasterConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("forecaster: {m}")));
        if self.channels.is_empty() || self.channels.contains(&0) {
            return bad("channels must be a non-empty list of positive integers");
        }
        if self.seq_len == 0 || self.horizon == 0 || self.kernel_size == 0 {
            return bad("seq_len, horizon and kernel_size must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return bad("learning_rate must be a non-negative finite number");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad("validation_fraction must lie in [0, 1)");
        }
        if self.channels.len() > 16 {
            return bad("at most 16 blocks are supported");
        }
        Ok(())
    }

    pub fn dilation(&self, block: usize) -> usize {
        1 << block
    }

    /// `1 + (k - 1) * sum(2^i)`.
    pub fn receptive_field(&self) -> usize {
        1 + (self.kernel_size - 1) * ((1usize << self.channels.len()) - 1)
    }

    /// Offsets of every parameter group; also fixes the total count.
    fn layout(&self) -> Layout {
        let mut blocks = Vec::with_capacity(self.channels.len());
        let mut off = 0;
        let mut c_in = 1;
        for &c_out in &self.channels {
            let conv_w = off;
            off += c_out * c_in * self.kernel_size;
            let conv_b = off;
            off += c_out;
            let proj = if c_in != c_out {
                let w = off;
                off += c_out * c_in;
                let b = off;
                off += c_out;
                Some((w, b))
            } else {
                None
            };
            blocks.push(BlockLayout {
                c_in,
                c_out,
                conv_w,
                conv_b,
                proj,
            });
            c_in = c_out;
        }
        let head_w = off;
        off += c_in;
        let head_b = off;
        off += 1;
        Layout {
            blocks,
            head_w,
            head_b,
            total: off,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.layout().total
    }
}

#[derive(Debug, Clone)]
struct BlockLayout {
    c_in: usize,
    c_out: usize,
    conv_w: usize,
    conv_b: usize,
    proj: Option<(usize, usize)>,
}

#[derive(Debug, Clone)]
struct Layout {
    blocks: Vec<BlockLayout>,
    head_w: usize,
    head_b: usize,
    total: usize,
}

/// Adam first/second moment accumulators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

#[derive(Debug, Clone)]
pub struct ForecasterModel {
    config: ForecasterConfig,
    layout: Layout,
    params: Vec<f64>,
    adam: AdamState,
}

impl PartialEq for ForecasterModel {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.params == other.params && self.adam == other.adam
    }
}

/// Per-sample activations kept for backpropagation.
struct Trace {
    /// `inputs[b]` is the input of block b, `[c_in][L]` row-major.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of each block's convolution, `[c_out][L]`.
    pre: Vec<Vec<f64>>,
    /// Output of the last block.
    last: Vec<f64>,
    output: f64,
}

pub fn init_model(cfg: &ForecasterConfig) -> Result<ForecasterModel> {
    cfg.validate()?;
    let layout = cfg.layout();
    let mut params = vec![0.0; layout.total];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut fill = |range: std::ops::Range<usize>, fan_in: usize, rng: &mut ChaCha8Rng| {
        let scale = (1.0 / fan_in as f64).sqrt();
        for p in &mut params[range] {
            *p = rng.random_range(-scale..scale);
        }
    };
    for b in &layout.blocks {
        let k = cfg.kernel_size;
        fill(b.conv_w..b.conv_w + b.c_out * b.c_in * k, b.c_in * k, &mut rng);
        if let Some((w, _)) = b.proj {
            fill(w..w + b.c_out * b.c_in, b.c_in, &mut rng);
        }
    }
    let c_last = *cfg.channels.last().expect("validated non-empty");
    fill(layout.head_w..layout.head_w + c_last, c_last, &mut rng);
    let n = layout.total;
    Ok(ForecasterModel {
        config: cfg.clone(),
        layout,
        params,
        adam: AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        },
    })
}

impl ForecasterModel {
    pub fn config(&self) -> &ForecasterConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn adam_state(&self) -> &AdamState {
        &self.adam
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    fn check_window(&self, window: &[f64]) -> Result<()> {
        if window.len() != self.config.seq_len {
            return Err(Error::BadWindowLength {
                expected: self.config.seq_len,
                got: window.len(),
            });
        }
        if window.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        Ok(())
    }

    pub fn forward(&self, window: &[f64]) -> Result<f64> {
        self.check_window(window)?;
        Ok(self.trace(&self.params, window).output)
    }

    /// Outputs of every block at every position, `[block][c_out * L]`.
    pub fn block_outputs(&self, window: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_window(window)?;
        let t = self.trace(&self.params, window);
        let mut outs: Vec<Vec<f64>> = t.inputs[1..].to_vec();
        outs.push(t.last);
        Ok(outs)
    }

    fn trace(&self, params: &[f64], window: &[f64]) -> Trace {
        let l = self.config.seq_len;
        let k = self.config.kernel_size;
        let mut inputs = Vec::with_capacity(self.layout.blocks.len());
        let mut pre = Vec::with_capacity(self.layout.blocks.len());
        let mut x = window.to_vec();
        for (bi, b) in self.layout.blocks.iter().enumerate() {
            let d = self.config.dilation(bi);
            let mut a = vec![0.0; b.c_out * l];
            for o in 0..b.c_out {
                let bias = params[b.conv_b + o];
                let row = &mut a[o * l..(o + 1) * l];
                row.fill(bias);
                for c in 0..b.c_in {
                    let xin = &x[c * l..(c + 1) * l];
                    for j in 0..k {
                        let w = params[b.conv_w + (o * b.c_in + c) * k + j];
                        let shift = (k - 1 - j) * d;
                        if shift >= l {
                            continue;
                        }
                        for t in shift..l {
                            row[t] += w * xin[t - shift];
                        }
                    }
                }
            }
            let mut y: Vec<f64> = a.iter().map(|v| v.max(0.0)).collect();
            match b.proj {
                None => {
                    for (yv, xv) in y.iter_mut().zip(&x) {
                        *yv += xv;
                    }
                }
                Some((pw, pb)) => {
                    for o in 0..b.c_out {
                        let bias = params[pb + o];
                        let row = &mut y[o * l..(o + 1) * l];
                        for c in 0..b.c_in {
                            let w = params[pw + o * b.c_in + c];
                            let xin = &x[c * l..(c + 1) * l];
                            for t in 0..l {
                                row[t] += w * xin[t];
                            }
                        }
                        for v in row.iter_mut() {
                            *v += bias;
                        }
                    }
                }
            }
            inputs.push(x);
            pre.push(a);
            x = y;
        }
        let c_last = self.layout.blocks.last().map_or(1, |b| b.c_out);
        let mut out = params[self.layout.head_b];
        for c in 0..c_last {
            out += params[self.layout.head_w + c] * x[c * l + l - 1];
        }
        Trace {
            inputs,
            pre,
            last: x,
            output: out,
        }
    }

    /// Accumulates `d_out * d(output)/d(params)` into `grad`.
    fn backward(&self, params: &[f64], trace: &Trace, d_out: f64, grad: &mut [f64]) {
        let l = self.config.seq_len;
        let k = self.config.kernel_size;
        let c_last = self.layout.blocks.last().map_or(1, |b| b.c_out);
        grad[self.layout.head_b] += d_out;
        let mut dy = vec![0.0; c_last * l];
        for c in 0..c_last {
            grad[self.layout.head_w + c] += d_out * trace.last[c * l + l - 1];
            dy[c * l + l - 1] = d_out * params[self.layout.head_w + c];
        }
        for (bi, b) in self.layout.blocks.iter().enumerate().rev() {
            let d = self.config.dilation(bi);
            let x = &trace.inputs[bi];
            let a = &trace.pre[bi];
            let mut dx = vec![0.0; b.c_in * l];
            match b.proj {
                None => dx.copy_from_slice(&dy),
                Some((pw, pb)) => {
                    for o in 0..b.c_out {
                        let g = &dy[o * l..(o + 1) * l];
                        grad[pb + o] += g.iter().sum::<f64>();
                        for c in 0..b.c_in {
                            let xin = &x[c * l..(c + 1) * l];
                            let w = params[pw + o * b.c_in + c];
                            let mut acc = 0.0;
                            let dxc = &mut dx[c * l..(c + 1) * l];
                            for t in 0..l {
                                acc += g[t] * xin[t];
                                dxc[t] += w * g[t];
                            }
                            grad[pw + o * b.c_in + c] += acc;
                        }
                    }
                }
            }
            for o in 0..b.c_out {
                let da: Vec<f64> = (0..l)
                    .map(|t| if a[o * l + t] > 0.0 { dy[o * l + t] } else { 0.0 })
                    .collect();
                grad[b.conv_b + o] += da.iter().sum::<f64>();
                for c in 0..b.c_in {
                    let xin = &x[c * l..(c + 1) * l];
                    for j in 0..k {
                        let shift = (k - 1 - j) * d;
                        if shift >= l {
                            continue;
                        }
                        let widx = b.conv_w + (o * b.c_in + c) * k + j;
                        let w = params[widx];
                        let mut acc = 0.0;
                        for t in shift..l {
                            acc += da[t] * xin[t - shift];
                            dx[c * l + t - shift] += w * da[t];
                        }
                        grad[widx] += acc;
                    }
                }
            }
            dy = dx;
        }
    }

    /// Squared error of one sample and its gradient with respect to every
    /// parameter.
    pub fn loss_and_gradient(&self, window: &[f64], target: f64) -> Result<(f64, Vec<f64>)> {
        self.check_window(window)?;
        let trace = self.trace(&self.params, window);
        let err = trace.output - target;
        let mut grad = vec![0.0; self.params.len()];
        self.backward(&self.params, &trace, 2.0 * err, &mut grad);
        Ok((err * err, grad))
    }

    fn loss_with(&self, params: &[f64], window: &[f64], target: f64) -> f64 {
        let e = self.trace(params, window).output - target;
        e * e
    }

    fn adam_step(&mut self, grad: &[f64]) {
        let cfg = &self.config;
        self.adam.step += 1;
        let t = self.adam.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for i in 0..self.params.len() {
            let g = grad[i];
            let m = cfg.beta1 * self.adam.m[i] + (1.0 - cfg.beta1) * g;
            let v = cfg.beta2 * self.adam.v[i] + (1.0 - cfg.beta2) * g * g;
            self.adam.m[i] = m;
            self.adam.v[i] = v;
            let m_hat = m / bc1;
            let v_hat = v / bc2;
            self.params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }

    /// One Adam step on the mean squared error of a batch; returns the batch
    /// mean loss measured before the update.
    pub fn train_step(&mut self, batch: &[(&[f64], f64)]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::TooFewRows { needed: 1, got: 0 });
        }
        let mut grad = vec![0.0; self.params.len()];
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        for (w, y) in batch {
            self.check_window(w)?;
            let trace = self.trace(&self.params, w);
            let err = trace.output - y;
            loss += err * err;
            self.backward(&self.params, &trace, 2.0 * err * scale, &mut grad);
        }
        let loss = loss * scale;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch: 0, step: self.adam.step as usize });
        }
        self.adam_step(&grad);
        Ok(loss)
    }

    /// Forecasts for a whole run. Index `i` of the result belongs to time
    /// position `offset + i` and comes from the window ending `horizon` steps
    /// earlier.
    pub fn predict_sequence(&self, run: &[f64]) -> Result<AlignedForecast> {
        let l = self.config.seq_len;
        let h = self.config.horizon;
        let needed = l + h;
        if run.len() < needed {
            return Err(Error::RunTooShort {
                needed,
                got: run.len(),
            });
        }
        let values = (0..=run.len() - needed)
            .map(|s| self.forward(&run[s..s + l]))
            .collect::<Result<Vec<_>>>()?;
        Ok(AlignedForecast {
            offset: l + h - 1,
            values,
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            params: self.params.clone(),
            adam: self.adam.clone(),
        }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Serialization(format!(
                "unsupported checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        ck.config.validate()?;
        let layout = ck.config.layout();
        let n = layout.total;
        if ck.params.len() != n || ck.adam.m.len() != n || ck.adam.v.len() != n {
            return Err(Error::Serialization(format!(
                "checkpoint holds {} parameters, config implies {n}",
                ck.params.len()
            )));
        }
        if ck.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        Ok(Self {
            config: ck.config,
            layout,
            params: ck.params,
            adam: ck.adam,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(&self.to_checkpoint())
            .map_err(|e| Error::Serialization(e.to_string()))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint =
            serde_json::from_str(&text).map_err(|e| Error::Serialization(e.to_string()))?;
        Self::from_checkpoint(ck)
    }
}

/// Versioned checkpoint: config plus the flat parameter vector and optimizer
/// state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: ForecasterConfig,
    pub params: Vec<f64>,
    pub adam: AdamState,
}

/// Forecast series aligned to the run: `values[i]` estimates position
/// `offset + i`; the first `offset` positions have no forecast.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedForecast {
    pub offset: usize,
    pub values: Vec<f64>,
}

/// `(window, target)` training pairs.
#[derive(Debug, Clone, Default)]
pub struct WindowDataset {
    pub windows: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
}

impl WindowDataset {
    /// Every window of `seq_len` values of `series`, paired with the value
    /// `horizon` steps after the window end.
    pub fn from_series(series: &[f64], seq_len: usize, horizon: usize) -> Self {
        let mut ds = Self::default();
        ds.extend_from_series(series, seq_len, horizon);
        ds
    }

    pub fn extend_from_series(&mut self, series: &[f64], seq_len: usize, horizon: usize) {
        if series.len() < seq_len + horizon {
            return;
        }
        for s in 0..=series.len() - seq_len - horizon {
            self.windows.push(series[s..s + seq_len].to_vec());
            self.targets.push(series[s + seq_len - 1 + horizon]);
        }
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }
}

/// Splits each run into a training head and a validation tail
/// (`validation_fraction` of its length) and windows both.
pub fn build_training_sets(
    runs: &[Vec<f64>],
    cfg: &ForecasterConfig,
) -> (WindowDataset, WindowDataset) {
    let mut train = WindowDataset::default();
    let mut val = WindowDataset::default();
    for r in runs {
        let n_val = (r.len() as f64 * cfg.validation_fraction).floor() as usize;
        let cut = r.len() - n_val;
        train.extend_from_series(&r[..cut], cfg.seq_len, cfg.horizon);
        if n_val > 0 {
            // validation windows may look back into the training head, but
            // their targets all lie in the tail
            let start = cut.saturating_sub(cfg.seq_len + cfg.horizon - 1);
            val.extend_from_series(&r[start..], cfg.seq_len, cfg.horizon);
        }
    }
    (train, val)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    pub validation_loss: Option<f64>,
    pub steps: u64,
    pub wall_seconds: f64,
}

impl TrainReport {
    /// Line-oriented progress records: `epoch=<i> loss=<v>`.
    pub fn progress_lines(&self) -> Vec<String> {
        self.epoch_losses
            .iter()
            .enumerate()
            .map(|(i, l)| format!("epoch={} loss={l}", i + 1))
            .collect()
    }
}

fn mean_loss(model: &ForecasterModel, ds: &WindowDataset) -> Result<f64> {
    let mut s = 0.0;
    for (w, y) in ds.windows.iter().zip(&ds.targets) {
        let e = model.forward(w)? - y;
        s += e * e;
    }
    Ok(s / ds.len() as f64)
}

/// Trains for `model.config().epochs` epochs with deterministic per-epoch
/// shuffling. The per-epoch loss is the mean of the batch losses weighted by
/// batch size.
pub fn train(
    model: &mut ForecasterModel,
    data: &WindowDataset,
    validation: Option<&WindowDataset>,
) -> Result<TrainReport> {
    if data.is_empty() {
        return Err(Error::TooFewRows { needed: 1, got: 0 });
    }
    if data.windows.len() != data.targets.len() {
        return Err(Error::LengthMismatch(data.windows.len(), data.targets.len()));
    }
    let started = Instant::now();
    let cfg = model.config.clone();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, epoch as u64 + 1));
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<(&[f64], f64)> = chunk
                .iter()
                .map(|&i| (data.windows[i].as_slice(), data.targets[i]))
                .collect();
            let loss = model.train_step(&batch).map_err(|e| match e {
                Error::NonFiniteLoss { .. } => Error::NonFiniteLoss { epoch, step: bi },
                e => e,
            })?;
            total += loss * chunk.len() as f64;
        }
        epoch_losses.push(total / data.len() as f64);
    }
    let validation_loss = match validation {
        Some(v) if !v.is_empty() => Some(mean_loss(model, v)?),
        _ => None,
    };
    Ok(TrainReport {
        epoch_losses,
        validation_loss,
        steps: model.adam.step,
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Largest relative discrepancy between the analytic gradient and central
/// finite differences (step `1e-5`) of the squared error on one sample.
/// Relative error is `|a - n| / max(|a|, |n|, 1e-6)`; the floor keeps
/// parameters with vanishing gradients from dividing by zero.
pub fn gradient_check(model: &ForecasterModel, window: &[f64], target: f64) -> Result<f64> {
    const STEP: f64 = 1e-5;
    let (_, analytic) = model.loss_and_gradient(window, target)?;
    let mut p = model.params.clone();
    let mut worst = 0.0f64;
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + STEP;
        let up = model.loss_with(&p, window, target);
        p[i] = orig - STEP;
        let down = model.loss_with(&p, window, target);
        p[i] = orig;
        let numeric = (up - down) / (2.0 * STEP);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    Ok(worst)
}
