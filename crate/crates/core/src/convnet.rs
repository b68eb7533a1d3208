//! One-dimensional CNN over time with EEG channels as input features.
//!
//! Layer stack (valid convolutions, no ReLU):
//!
//! ```text
//! input L × C ─► conv(k1) ─► act ─► maxpool(w1) ─► conv(k2) ─► act ─► avgpool(w2)
//!            ─► flatten (time-major) ─► dropout ─► dense(3) ─► softmax
//! ```
//!
//! With the default sizes the time axis runs 500 → 494 → 247 → 243 → 121 and
//! the dense layer sees 121 · 32 = 3872 features. All tensors are time-major
//! (`t * channels + c`) so a convolution output is one dot product over a
//! contiguous `kernel · in_channels` slice of its input.

use std::fmt;
use std::fs;
use std::io;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::epoching::EpochSet;
use crate::rng::{self, domain};
use crate::signal_model::Class;

pub const N_CLASSES: usize = 3;
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"NSMD";
pub const CHECKPOINT_VERSION: u16 = 1;

/// Lower clamp on probabilities inside the log.
const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("input shape mismatch: expected {expected} values, got {found}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("label {0} out of range")]
    LabelOutOfRange(usize),
    #[error("non-finite gradient in {group} at step {step}")]
    NonFiniteGradient { group: ParamGroup, step: u64 },
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("empty {0} set")]
    EmptySet(&'static str),
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    /// Linear rig for gradient verification.
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation output.
    #[inline]
    fn grad_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Architecture {
    pub input_len: usize,
    pub in_channels: usize,
    pub conv1_out: usize,
    pub conv1_kernel: usize,
    pub pool1: usize,
    pub conv2_out: usize,
    pub conv2_kernel: usize,
    pub pool2: usize,
    pub dropout: f64,
    pub activation: Activation,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            input_len: 500,
            in_channels: 64,
            conv1_out: 16,
            conv1_kernel: 7,
            pool1: 2,
            conv2_out: 32,
            conv2_kernel: 5,
            pool2: 2,
            dropout: 0.5,
            activation: Activation::Tanh,
        }
    }
}

/// Lengths along the time axis after each stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shapes {
    pub conv1: usize,
    pub pool1: usize,
    pub conv2: usize,
    pub pool2: usize,
    pub flat: usize,
}

impl Architecture {
    /// Shrunken stack for finite-difference checks: 20 × 4 input, kernels 3/3.
    pub fn small() -> Self {
        Self {
            input_len: 20,
            in_channels: 4,
            conv1_out: 3,
            conv1_kernel: 3,
            pool1: 2,
            conv2_out: 3,
            conv2_kernel: 3,
            pool2: 2,
            dropout: 0.0,
            activation: Activation::Tanh,
        }
    }

    pub fn validate(&self) -> Result<Shapes, NetError> {
        let bad = |m: String| Err(NetError::InvalidArchitecture(m));
        if [self.input_len, self.in_channels, self.conv1_out, self.conv1_kernel, self.pool1, self.conv2_out, self.conv2_kernel, self.pool2]
            .contains(&0)
        {
            return bad("all sizes must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout rate {} outside [0, 1)", self.dropout));
        }
        if self.input_len < self.conv1_kernel {
            return bad("input shorter than first kernel".into());
        }
        let conv1 = self.input_len - self.conv1_kernel + 1;
        let pool1 = conv1 / self.pool1;
        if pool1 < self.conv2_kernel {
            return bad("pooled length shorter than second kernel".into());
        }
        let conv2 = pool1 - self.conv2_kernel + 1;
        let pool2 = conv2 / self.pool2;
        if pool2 == 0 {
            return bad("nothing left after second pooling".into());
        }
        Ok(Shapes { conv1, pool1, conv2, pool2, flat: pool2 * self.conv2_out })
    }

    pub fn shapes(&self) -> Shapes {
        self.validate().expect("architecture validated at model construction")
    }

    pub fn input_size(&self) -> usize {
        self.input_len * self.in_channels
    }
}

/// Names the six parameter tensors in declaration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Conv1Weight,
    Conv1Bias,
    Conv2Weight,
    Conv2Bias,
    DenseWeight,
    DenseBias,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 6] = [
        ParamGroup::Conv1Weight,
        ParamGroup::Conv1Bias,
        ParamGroup::Conv2Weight,
        ParamGroup::Conv2Bias,
        ParamGroup::DenseWeight,
        ParamGroup::DenseBias,
    ];
}

impl fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Trainable tensors (also reused for gradients and Adam moments).
///
/// Layouts: conv weights `[out][k][in]`, dense weights `[class][feature]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub conv1_w: Vec<f64>,
    pub conv1_b: Vec<f64>,
    pub conv2_w: Vec<f64>,
    pub conv2_b: Vec<f64>,
    pub dense_w: Vec<f64>,
    pub dense_b: Vec<f64>,
}

impl Params {
    pub fn zeros(arch: &Architecture) -> Self {
        let s = arch.shapes();
        Self {
            conv1_w: vec![0.0; arch.conv1_out * arch.conv1_kernel * arch.in_channels],
            conv1_b: vec![0.0; arch.conv1_out],
            conv2_w: vec![0.0; arch.conv2_out * arch.conv2_kernel * arch.conv1_out],
            conv2_b: vec![0.0; arch.conv2_out],
            dense_w: vec![0.0; N_CLASSES * s.flat],
            dense_b: vec![0.0; N_CLASSES],
        }
    }

    pub fn group(&self, g: ParamGroup) -> &[f64] {
        match g {
            ParamGroup::Conv1Weight => &self.conv1_w,
            ParamGroup::Conv1Bias => &self.conv1_b,
            ParamGroup::Conv2Weight => &self.conv2_w,
            ParamGroup::Conv2Bias => &self.conv2_b,
            ParamGroup::DenseWeight => &self.dense_w,
            ParamGroup::DenseBias => &self.dense_b,
        }
    }

    pub fn group_mut(&mut self, g: ParamGroup) -> &mut Vec<f64> {
        match g {
            ParamGroup::Conv1Weight => &mut self.conv1_w,
            ParamGroup::Conv1Bias => &mut self.conv1_b,
            ParamGroup::Conv2Weight => &mut self.conv2_w,
            ParamGroup::Conv2Bias => &mut self.conv2_b,
            ParamGroup::DenseWeight => &mut self.dense_w,
            ParamGroup::DenseBias => &mut self.dense_b,
        }
    }

    pub fn len(&self) -> usize {
        ParamGroup::ALL.iter().map(|&g| self.group(g).len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IterationMode {
    /// One history row per full pass over the training set.
    Epochs,
    /// One history row per optimizer step.
    Steps,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub mode: IterationMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs: 80,
            batch_size: 32,
            seed: 0,
            mode: IterationMode::Epochs,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        let bad = |m: &str| Err(NetError::InvalidConfig(m.to_string()));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub rows: Vec<EpochStats>,
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn best(&self) -> Option<&EpochStats> {
        self.rows.get(self.best_epoch)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,train_acc,val_loss,val_acc\n");
        for (i, r) in self.rows.iter().enumerate() {
            s.push_str(&format!("{},{},{},{},{}\n", i + 1, r.train_loss, r.train_acc, r.val_loss, r.val_acc));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub arch: Architecture,
    pub params: Params,
    pub adam_m: Params,
    pub adam_v: Params,
    pub step: u64,
    pub dropout_seed: u64,
}

/// Glorot-uniform weights, zero biases.
pub fn init_model(arch: Architecture, seed: u64) -> Result<Model, NetError> {
    let shapes = arch.validate()?;
    let mut rng = rng::stream(seed, domain::INIT, 0);
    let mut params = Params::zeros(&arch);
    let fill = |w: &mut Vec<f64>, fan_in: usize, fan_out: usize, rng: &mut rand_chacha::ChaCha8Rng| {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        w.iter_mut().for_each(|v| *v = rng.random_range(-a..a));
    };
    fill(&mut params.conv1_w, arch.conv1_kernel * arch.in_channels, arch.conv1_kernel * arch.conv1_out, &mut rng);
    fill(&mut params.conv2_w, arch.conv2_kernel * arch.conv1_out, arch.conv2_kernel * arch.conv2_out, &mut rng);
    fill(&mut params.dense_w, shapes.flat, N_CLASSES, &mut rng);
    Ok(Model {
        arch,
        adam_m: Params::zeros(&arch),
        adam_v: Params::zeros(&arch),
        params,
        step: 0,
        dropout_seed: rng::mix(seed),
    })
}

/// Dot product with four interleaved accumulators combined in a fixed order.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = 4 * i;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut tail = 0.0;
    for j in 4 * chunks..a.len() {
        tail += a[j] * b[j];
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + tail
}

/// Valid convolution: `out[t][o] = act(b[o] + Σ w[o][k][i] · x[t + k][i])`.
fn conv_forward(
    x: &[f64],
    in_ch: usize,
    out_len: usize,
    w: &[f64],
    b: &[f64],
    kernel: usize,
    act: Activation,
) -> Vec<f64> {
    let out_ch = b.len();
    let span = kernel * in_ch;
    let mut out = vec![0.0; out_len * out_ch];
    for t in 0..out_len {
        let window = &x[t * in_ch..t * in_ch + span];
        for o in 0..out_ch {
            out[t * out_ch + o] = act.apply(b[o] + dot(&w[o * span..(o + 1) * span], window));
        }
    }
    out
}

/// Accumulates weight/bias gradients and, if requested, the input gradient.
#[allow(clippy::too_many_arguments)]
fn conv_backward(
    x: &[f64],
    in_ch: usize,
    dz: &[f64],
    out_len: usize,
    w: &[f64],
    kernel: usize,
    gw: &mut [f64],
    gb: &mut [f64],
    mut dx: Option<&mut [f64]>,
) {
    let out_ch = gb.len();
    let span = kernel * in_ch;
    for t in 0..out_len {
        let window = &x[t * in_ch..t * in_ch + span];
        for o in 0..out_ch {
            let g = dz[t * out_ch + o];
            if g == 0.0 {
                continue;
            }
            gb[o] += g;
            let gwo = &mut gw[o * span..(o + 1) * span];
            for (acc, xv) in gwo.iter_mut().zip(window) {
                *acc += g * xv;
            }
            if let Some(dx) = dx.as_deref_mut() {
                let wo = &w[o * span..(o + 1) * span];
                for (d, wv) in dx[t * in_ch..t * in_ch + span].iter_mut().zip(wo) {
                    *d += g * wv;
                }
            }
        }
    }
}

/// Max pooling along time; ties resolve to the earliest position.
pub(crate) fn max_pool(a: &[f64], ch: usize, width: usize, out_len: usize) -> (Vec<f64>, Vec<u32>) {
    let mut out = vec![0.0; out_len * ch];
    let mut arg = vec![0u32; out_len * ch];
    for t in 0..out_len {
        for c in 0..ch {
            let mut best = (t * width) * ch + c;
            for i in 1..width {
                let idx = (t * width + i) * ch + c;
                if a[idx] > a[best] {
                    best = idx;
                }
            }
            out[t * ch + c] = a[best];
            arg[t * ch + c] = best as u32;
        }
    }
    (out, arg)
}

pub(crate) fn max_pool_backward(dp: &[f64], arg: &[u32], in_len: usize) -> Vec<f64> {
    let mut da = vec![0.0; in_len];
    for (g, &i) in dp.iter().zip(arg) {
        da[i as usize] += g;
    }
    da
}

/// Average pooling along time; a trailing partial window is dropped.
pub(crate) fn avg_pool(a: &[f64], ch: usize, width: usize, out_len: usize) -> Vec<f64> {
    let mut out = vec![0.0; out_len * ch];
    let inv = 1.0 / width as f64;
    for t in 0..out_len {
        for c in 0..ch {
            let mut s = 0.0;
            for i in 0..width {
                s += a[(t * width + i) * ch + c];
            }
            out[t * ch + c] = s * inv;
        }
    }
    out
}

pub(crate) fn avg_pool_backward(dp: &[f64], ch: usize, width: usize, in_len: usize) -> Vec<f64> {
    let mut da = vec![0.0; in_len * ch];
    let inv = 1.0 / width as f64;
    for t in 0..dp.len() / ch {
        for c in 0..ch {
            let g = dp[t * ch + c] * inv;
            for i in 0..width {
                da[(t * width + i) * ch + c] = g;
            }
        }
    }
    da
}

fn softmax(z: &[f64; N_CLASSES]) -> [f64; N_CLASSES] {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e = z.map(|v| (v - m).exp());
    let s: f64 = e.iter().sum();
    e.map(|v| v / s)
}

/// Intermediate activations of one sample, kept for backpropagation.
struct Trace {
    a1: Vec<f64>,
    p1: Vec<f64>,
    arg1: Vec<u32>,
    a2: Vec<f64>,
    mask: Option<Vec<f64>>,
    h: Vec<f64>,
    probs: [f64; N_CLASSES],
}

impl Model {
    fn check_input(&self, x: &[f64]) -> Result<(), NetError> {
        let expected = self.arch.input_size();
        if x.len() != expected {
            return Err(NetError::ShapeMismatch { expected, found: x.len() });
        }
        Ok(())
    }

    fn dropout_mask(&self, item: usize, n: usize) -> Vec<f64> {
        let rate = self.arch.dropout;
        let keep = 1.0 / (1.0 - rate);
        let mut rng = rng::stream(self.dropout_seed, domain::DROPOUT, self.step.wrapping_mul(1 << 20) ^ item as u64);
        (0..n).map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep }).collect()
    }

    fn trace(&self, x: &[f64], dropout_item: Option<usize>) -> Trace {
        let arch = &self.arch;
        let s = arch.shapes();
        let p = &self.params;
        let a1 = conv_forward(x, arch.in_channels, s.conv1, &p.conv1_w, &p.conv1_b, arch.conv1_kernel, arch.activation);
        let (p1, arg1) = max_pool(&a1, arch.conv1_out, arch.pool1, s.pool1);
        let a2 = conv_forward(&p1, arch.conv1_out, s.conv2, &p.conv2_w, &p.conv2_b, arch.conv2_kernel, arch.activation);
        let mut h = avg_pool(&a2, arch.conv2_out, arch.pool2, s.pool2);
        let mask = match dropout_item {
            Some(item) if arch.dropout > 0.0 => {
                let m = self.dropout_mask(item, s.flat);
                h.iter_mut().zip(&m).for_each(|(v, k)| *v *= k);
                Some(m)
            }
            _ => None,
        };
        let mut z = [0.0; N_CLASSES];
        for (k, zk) in z.iter_mut().enumerate() {
            *zk = p.dense_b[k] + dot(&p.dense_w[k * s.flat..(k + 1) * s.flat], &h);
        }
        Trace { a1, p1, arg1, a2, mask, h, probs: softmax(&z) }
    }

    /// Class probabilities for a batch of flattened `input_len × in_channels` samples.
    /// With `training`, inverted dropout is applied using masks tied to the current step.
    pub fn forward(&self, batch: &[&[f64]], training: bool) -> Result<Vec<[f64; N_CLASSES]>, NetError> {
        batch
            .iter()
            .enumerate()
            .map(|(i, x)| {
                self.check_input(x)?;
                Ok(self.trace(x, training.then_some(i)).probs)
            })
            .collect()
    }

    /// Dense-layer input (after dropout when `training`) for batch item `item`.
    pub fn dense_input(&self, x: &[f64], training: bool, item: usize) -> Result<Vec<f64>, NetError> {
        self.check_input(x)?;
        Ok(self.trace(x, training.then_some(item)).h)
    }

    /// Adds `scale · ∂CE/∂θ` for one sample into `grad`.
    fn backward(&self, x: &[f64], tr: &Trace, label: usize, scale: f64, grad: &mut Params) {
        let arch = &self.arch;
        let s = arch.shapes();
        let p = &self.params;

        let mut dz = tr.probs;
        dz[label] -= 1.0;
        dz.iter_mut().for_each(|v| *v *= scale);

        let mut dh = vec![0.0; s.flat];
        for (k, &g) in dz.iter().enumerate() {
            grad.dense_b[k] += g;
            let wk = &p.dense_w[k * s.flat..(k + 1) * s.flat];
            let gk = &mut grad.dense_w[k * s.flat..(k + 1) * s.flat];
            for j in 0..s.flat {
                gk[j] += g * tr.h[j];
                dh[j] += wk[j] * g;
            }
        }
        if let Some(mask) = &tr.mask {
            dh.iter_mut().zip(mask).for_each(|(d, m)| *d *= m);
        }

        let mut dz2 = avg_pool_backward(&dh, arch.conv2_out, arch.pool2, s.conv2);
        dz2.iter_mut().zip(&tr.a2).for_each(|(d, a)| *d *= arch.activation.grad_from_output(*a));

        let mut dp1 = vec![0.0; s.pool1 * arch.conv1_out];
        conv_backward(
            &tr.p1,
            arch.conv1_out,
            &dz2,
            s.conv2,
            &p.conv2_w,
            arch.conv2_kernel,
            &mut grad.conv2_w,
            &mut grad.conv2_b,
            Some(&mut dp1),
        );

        let mut dz1 = max_pool_backward(&dp1, &tr.arg1, s.conv1 * arch.conv1_out);
        dz1.iter_mut().zip(&tr.a1).for_each(|(d, a)| *d *= arch.activation.grad_from_output(*a));
        conv_backward(
            x,
            arch.in_channels,
            &dz1,
            s.conv1,
            &p.conv1_w,
            arch.conv1_kernel,
            &mut grad.conv1_w,
            &mut grad.conv1_b,
            None,
        );
    }

    /// Mean cross-entropy and its gradient over a batch.
    pub fn loss_and_grad(
        &self,
        batch: &[&[f64]],
        labels: &[usize],
        training: bool,
    ) -> Result<(f64, Params, Vec<[f64; N_CLASSES]>), NetError> {
        if batch.len() != labels.len() {
            return Err(NetError::ShapeMismatch { expected: batch.len(), found: labels.len() });
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= N_CLASSES) {
            return Err(NetError::LabelOutOfRange(l));
        }
        let mut grad = Params::zeros(&self.arch);
        let mut probs = Vec::with_capacity(batch.len());
        let scale = 1.0 / batch.len() as f64;
        for (i, (x, &label)) in batch.iter().zip(labels).enumerate() {
            self.check_input(x)?;
            let tr = self.trace(x, training.then_some(i));
            self.backward(x, &tr, label, scale, &mut grad);
            probs.push(tr.probs);
        }
        let loss = loss_ce(&probs, labels)?;
        Ok((loss, grad, probs))
    }

    fn adam_update(&mut self, grad: &Params, cfg: &TrainConfig) -> Result<(), NetError> {
        for g in ParamGroup::ALL {
            if grad.group(g).iter().any(|v| !v.is_finite()) {
                return Err(NetError::NonFiniteGradient { group: g, step: self.step });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for g in ParamGroup::ALL {
            let theta = self.params.group_mut(g);
            let m = self.adam_m.group_mut(g);
            let v = self.adam_v.group_mut(g);
            for (((th, mi), vi), gi) in theta.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(grad.group(g)) {
                *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
                *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *th -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
            }
        }
        Ok(())
    }

    fn step_with_outputs(
        &mut self,
        batch: &[&[f64]],
        labels: &[usize],
        cfg: &TrainConfig,
    ) -> Result<(f64, Vec<[f64; N_CLASSES]>), NetError> {
        let (loss, grad, probs) = self.loss_and_grad(batch, labels, true)?;
        self.adam_update(&grad, cfg)?;
        Ok((loss, probs))
    }

    /// One Adam step on a batch; returns the batch loss before the update.
    pub fn train_step(&mut self, batch: &[&[f64]], labels: &[usize], cfg: &TrainConfig) -> Result<f64, NetError> {
        cfg.validate()?;
        Ok(self.step_with_outputs(batch, labels, cfg)?.0)
    }

    /// Label (first maximum wins) and probabilities for one epoch.
    pub fn predict(&self, x: &[f64]) -> Result<(Class, [f64; N_CLASSES]), NetError> {
        let probs = self.forward(&[x], false)?[0];
        Ok((argmax_class(&probs), probs))
    }

    /// Mean loss and accuracy with dropout disabled.
    pub fn evaluate(&self, set: &EpochSet) -> Result<(f64, f64), NetError> {
        if set.is_empty() {
            return Err(NetError::EmptySet("evaluation"));
        }
        let batch: Vec<&[f64]> = set.epochs.iter().map(|e| e.data.as_slice()).collect();
        let labels: Vec<usize> = set.epochs.iter().map(|e| e.label.index()).collect();
        let probs = self.forward(&batch, false)?;
        Ok((loss_ce(&probs, &labels)?, accuracy(&probs, &labels)))
    }
}

pub fn argmax_class(probs: &[f64; N_CLASSES]) -> Class {
    let mut best = 0;
    for k in 1..N_CLASSES {
        if probs[k] > probs[best] {
            best = k;
        }
    }
    Class::ALL[best]
}

fn accuracy(probs: &[[f64; N_CLASSES]], labels: &[usize]) -> f64 {
    let hits = probs.iter().zip(labels).filter(|(p, &l)| argmax_class(p).index() == l).count();
    hits as f64 / labels.len() as f64
}

/// Mean categorical cross-entropy with probabilities clamped to `[1e-12, 1]`.
pub fn loss_ce(probs: &[[f64; N_CLASSES]], labels: &[usize]) -> Result<f64, NetError> {
    if probs.len() != labels.len() || probs.is_empty() {
        return Err(NetError::ShapeMismatch { expected: probs.len(), found: labels.len() });
    }
    let mut total = 0.0;
    for (p, &l) in probs.iter().zip(labels) {
        if l >= N_CLASSES {
            return Err(NetError::LabelOutOfRange(l));
        }
        total -= p[l].clamp(PROB_FLOOR, 1.0).ln();
    }
    Ok(total / labels.len() as f64)
}

/// Full training run; returns the snapshot with the highest validation
/// accuracy (earliest on ties) and the per-iteration history.
pub fn train(model: &Model, train_set: &EpochSet, val_set: &EpochSet, cfg: &TrainConfig) -> Result<(Model, TrainHistory), NetError> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(NetError::EmptySet("training"));
    }
    if val_set.is_empty() {
        return Err(NetError::EmptySet("validation"));
    }
    let mut model = model.clone();
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, Model)> = None;

    let n = train_set.len();
    let mut record = |model: &Model, loss_sum: f64, hits: usize, seen: usize, history: &mut TrainHistory| -> Result<(), NetError> {
        let (val_loss, val_acc) = model.evaluate(val_set)?;
        history.rows.push(EpochStats {
            train_loss: loss_sum / seen as f64,
            train_acc: hits as f64 / seen as f64,
            val_loss,
            val_acc,
        });
        if best.as_ref().is_none_or(|(acc, _)| val_acc > *acc) {
            history.best_epoch = history.rows.len() - 1;
            best = Some((val_acc, model.clone()));
        }
        Ok(())
    };

    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0usize;
    let mut pass = 0u64;
    for _ in 0..cfg.epochs {
        let steps = match cfg.mode {
            IterationMode::Epochs => n.div_ceil(cfg.batch_size),
            IterationMode::Steps => 1,
        };
        let (mut loss_sum, mut hits, mut seen) = (0.0, 0usize, 0usize);
        for _ in 0..steps {
            if cursor >= order.len() {
                order = (0..n).collect();
                order.shuffle(&mut rng::stream(cfg.seed, domain::SHUFFLE, pass));
                pass += 1;
                cursor = 0;
            }
            let end = (cursor + cfg.batch_size).min(n);
            let idx = &order[cursor..end];
            cursor = end;
            let batch: Vec<&[f64]> = idx.iter().map(|&i| train_set.epochs[i].data.as_slice()).collect();
            let labels: Vec<usize> = idx.iter().map(|&i| train_set.epochs[i].label.index()).collect();
            let (loss, probs) = model.step_with_outputs(&batch, &labels, cfg)?;
            loss_sum += loss * labels.len() as f64;
            hits += probs.iter().zip(&labels).filter(|(p, &l)| argmax_class(p).index() == l).count();
            seen += labels.len();
        }
        record(&model, loss_sum, hits, seen, &mut history)?;
    }
    let (_, best_model) = best.expect("at least one iteration recorded");
    Ok((best_model, history))
}

/// Max relative error between backprop and central differences (`h = 1e-5`)
/// over every parameter of a freshly initialized model, dropout disabled.
pub fn gradient_check(arch: Architecture, seed: u64) -> Result<f64, NetError> {
    gradient_check_with(arch, seed, None)
}

/// As [`gradient_check`], optionally doubling one group's analytic gradient.
pub fn gradient_check_with(arch: Architecture, seed: u64, corrupt: Option<ParamGroup>) -> Result<f64, NetError> {
    const H: f64 = 1e-5;
    let mut model = init_model(arch, seed)?;
    // Non-zero biases so bias gradients are exercised away from the init point.
    let mut rng = rng::stream(seed, domain::GRADCHECK, 0);
    for g in [ParamGroup::Conv1Bias, ParamGroup::Conv2Bias, ParamGroup::DenseBias] {
        model.params.group_mut(g).iter_mut().for_each(|b| *b = rng.random_range(-0.1..0.1));
    }
    let n_batch = 4;
    let inputs: Vec<Vec<f64>> = (0..n_batch)
        .map(|_| (0..arch.input_size()).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let labels: Vec<usize> = (0..n_batch).map(|i| i % N_CLASSES).collect();
    let batch: Vec<&[f64]> = inputs.iter().map(Vec::as_slice).collect();

    let (_, mut analytic, _) = model.loss_and_grad(&batch, &labels, false)?;
    if let Some(g) = corrupt {
        analytic.group_mut(g).iter_mut().for_each(|v| *v *= 2.0);
    }
    let loss_at = |m: &Model| -> Result<f64, NetError> { loss_ce(&m.forward(&batch, false)?, &labels) };

    let mut worst = 0.0f64;
    for g in ParamGroup::ALL {
        for i in 0..model.params.group(g).len() {
            let orig = model.params.group(g)[i];
            model.params.group_mut(g)[i] = orig + H;
            let up = loss_at(&model)?;
            model.params.group_mut(g)[i] = orig - H;
            let down = loss_at(&model)?;
            model.params.group_mut(g)[i] = orig;
            let numeric = (up - down) / (2.0 * H);
            let a = analytic.group(g)[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

fn put_u16(out: &mut Vec<u8>, v: usize) -> Result<(), NetError> {
    let v = u16::try_from(v).map_err(|_| NetError::BadCheckpoint(format!("size {v} exceeds u16")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

/// Checkpoint bytes: magic, version, architecture descriptor, then f64
/// parameter tensors in declaration order.
pub fn encode_model(model: &Model) -> Result<Vec<u8>, NetError> {
    let a = &model.arch;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(a.input_len as u32).to_le_bytes());
    put_u16(&mut out, a.in_channels)?;
    out.push(match a.activation {
        Activation::Tanh => 0,
        Activation::Identity => 1,
    });
    out.push(7);
    out.push(b'C');
    put_u16(&mut out, a.conv1_out)?;
    put_u16(&mut out, a.conv1_kernel)?;
    out.push(b'M');
    put_u16(&mut out, a.pool1)?;
    out.push(b'C');
    put_u16(&mut out, a.conv2_out)?;
    put_u16(&mut out, a.conv2_kernel)?;
    out.push(b'A');
    put_u16(&mut out, a.pool2)?;
    out.push(b'F');
    out.push(b'D');
    out.extend_from_slice(&a.dropout.to_le_bytes());
    out.push(b'L');
    put_u16(&mut out, N_CLASSES)?;
    for g in ParamGroup::ALL {
        for v in model.params.group(g) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NetError> {
        let s = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or_else(|| NetError::BadCheckpoint(format!("truncated at byte {}", self.pos)))?;
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, NetError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<usize, NetError> {
        Ok(usize::from(u16::from_le_bytes(self.take(2)?.try_into().unwrap())))
    }
    fn tag(&mut self, want: u8) -> Result<(), NetError> {
        let got = self.u8()?;
        if got != want {
            return Err(NetError::BadCheckpoint(format!(
                "expected layer '{}' at byte {}, found {got:#04x}",
                want as char,
                self.pos - 1
            )));
        }
        Ok(())
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<Model, NetError> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4)? != CHECKPOINT_MAGIC {
        return Err(NetError::BadCheckpoint("bad magic".into()));
    }
    let version = c.u16()?;
    if version != usize::from(CHECKPOINT_VERSION) {
        return Err(NetError::BadCheckpoint(format!("unsupported version {version}")));
    }
    let input_len = u32::from_le_bytes(c.take(4)?.try_into().unwrap()) as usize;
    let in_channels = c.u16()?;
    let activation = match c.u8()? {
        0 => Activation::Tanh,
        1 => Activation::Identity,
        v => return Err(NetError::BadCheckpoint(format!("unknown activation {v}"))),
    };
    if c.u8()? != 7 {
        return Err(NetError::BadCheckpoint("unexpected layer count".into()));
    }
    c.tag(b'C')?;
    let (conv1_out, conv1_kernel) = (c.u16()?, c.u16()?);
    c.tag(b'M')?;
    let pool1 = c.u16()?;
    c.tag(b'C')?;
    let (conv2_out, conv2_kernel) = (c.u16()?, c.u16()?);
    c.tag(b'A')?;
    let pool2 = c.u16()?;
    c.tag(b'F')?;
    c.tag(b'D')?;
    let dropout = f64::from_le_bytes(c.take(8)?.try_into().unwrap());
    c.tag(b'L')?;
    if c.u16()? != N_CLASSES {
        return Err(NetError::BadCheckpoint("dense width must be 3".into()));
    }
    let arch = Architecture {
        input_len,
        in_channels,
        conv1_out,
        conv1_kernel,
        pool1,
        conv2_out,
        conv2_kernel,
        pool2,
        dropout,
        activation,
    };
    arch.validate()?;
    let mut params = Params::zeros(&arch);
    for g in ParamGroup::ALL {
        for v in params.group_mut(g).iter_mut() {
            *v = f64::from_le_bytes(c.take(8)?.try_into().unwrap());
        }
    }
    if c.pos != bytes.len() {
        return Err(NetError::BadCheckpoint(format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    Ok(Model { arch, adam_m: Params::zeros(&arch), adam_v: Params::zeros(&arch), params, step: 0, dropout_seed: 0 })
}

pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<(), NetError> {
    fs::write(path, encode_model(model)?)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model, NetError> {
    decode_model(&fs::read(path)?)
}
