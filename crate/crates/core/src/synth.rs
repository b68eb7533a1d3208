//! Synthetic 64-channel EEG with steering-trial structure.
//!
//! Each channel is 1/f background plus a narrow 10 Hz alpha rhythm, a shared
//! slow drift near 0.5 Hz, and class-locked deflections after every trigger.
//! Turns produce a frontal deflection over the matching hemisphere with the
//! opposite sign over the other one; straight segments give a weak bilateral
//! central pattern. Blinks on the frontopolar sites are optional.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use thiserror::Error;

use crate::montage;
use crate::rng::{self, domain};
use crate::signal_model::{Class, Recording, SignalError, TriggerEvent, SAMPLE_RATE};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("invalid signal configuration: {0}")]
    InvalidSignal(String),
    #[error("trigger at {index} needs {needed} samples, recording has {n_samples}")]
    TriggerBeyondEnd { index: u64, needed: u64, n_samples: u64 },
    #[error(transparent)]
    Signal(#[from] SignalError),
}

/// Samples that must follow every trigger (last classifier window end, plus
/// room for a 3 s visualization epoch).
pub const MIN_SEGMENT_SAMPLES: usize = 3 * SAMPLE_RATE as usize;

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub n_segments: usize,
    /// Straight, left, right proportions.
    pub class_mix: [f64; 3],
    pub duration_mean_s: f64,
    pub duration_jitter_s: f64,
    pub rounds: usize,
    /// Quiet time before the first trigger.
    pub lead_in_s: f64,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n_segments: 92,
            class_mix: [0.5, 0.25, 0.25],
            duration_mean_s: 8.0,
            duration_jitter_s: 2.0,
            rounds: 1,
            lead_in_s: 1.0,
            seed: 7,
        }
    }
}

impl ScenarioConfig {
    /// Per-round label counts; rounding remainders go to the largest share.
    pub fn class_counts(&self) -> [usize; 3] {
        let mut counts = self.class_mix.map(|p| (p * self.n_segments as f64).round() as usize);
        let total: usize = counts.iter().sum();
        let biggest = (0..3).max_by(|&a, &b| self.class_mix[a].total_cmp(&self.class_mix[b]).then(b.cmp(&a))).unwrap();
        counts[biggest] = (counts[biggest] + self.n_segments).saturating_sub(total);
        counts
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidScenario(m));
        if self.n_segments == 0 || self.rounds == 0 {
            return bad("need at least one segment and one round".into());
        }
        if self.class_mix.iter().any(|p| !(p.is_finite() && *p >= 0.0)) || (self.class_mix.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad(format!("class mix {:?} must be non-negative and sum to 1", self.class_mix));
        }
        if !(self.duration_jitter_s >= 0.0 && self.lead_in_s >= 0.0) {
            return bad("negative jitter or lead-in".into());
        }
        let shortest = self.duration_mean_s - self.duration_jitter_s;
        if !(shortest * f64::from(SAMPLE_RATE) >= MIN_SEGMENT_SAMPLES as f64) {
            return bad(format!("shortest segment {shortest} s is below {} s", MIN_SEGMENT_SAMPLES / SAMPLE_RATE as usize));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub triggers: Vec<TriggerEvent>,
    pub n_samples: usize,
}

/// Trigger schedule: each round holds the exact per-class counts in shuffled
/// order, each segment lasts `mean ± jitter` seconds.
pub fn gen_scenario(cfg: &ScenarioConfig) -> Result<Scenario, SynthError> {
    cfg.validate()?;
    let mut rng = rng::stream(cfg.seed, domain::SCENARIO, 0);
    let fs = f64::from(SAMPLE_RATE);
    let counts = cfg.class_counts();
    let mut t = (cfg.lead_in_s * fs).round() as usize;
    let mut triggers = Vec::with_capacity(cfg.n_segments * cfg.rounds);
    for _ in 0..cfg.rounds {
        let mut labels: Vec<Class> = Class::ALL.iter().zip(counts).flat_map(|(&c, n)| std::iter::repeat_n(c, n)).collect();
        labels.shuffle(&mut rng);
        for label in labels {
            triggers.push(TriggerEvent::new(t as u64, label));
            let lo = cfg.duration_mean_s - cfg.duration_jitter_s;
            let hi = cfg.duration_mean_s + cfg.duration_jitter_s;
            let d = if hi > lo { rng.random_range(lo..=hi) } else { lo };
            t += (d * fs).floor() as usize;
        }
    }
    Ok(Scenario { triggers, n_samples: t })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalConfig {
    /// Background spectral exponent: power ∝ 1/f^alpha.
    pub alpha_exponent: f64,
    /// RMS of the background, µV.
    pub background_uv: f64,
    pub alpha_freq_hz: f64,
    /// RMS of the alpha rhythm at occipital sites, µV.
    pub alpha_uv: f64,
    pub drift_freq_hz: f64,
    pub drift_uv: f64,
    /// Peak amplitude of the turn deflection, µV.
    pub pattern_uv: f64,
    /// Deflection onset after the trigger, s.
    pub pattern_onset_s: f64,
    /// Time from onset to peak; the deflection decays with the same constant.
    pub pattern_decay_s: f64,
    /// Straight-class amplitude relative to the turn pattern.
    pub straight_ratio: f64,
    /// Mean blink rate, Hz (0 disables blinks).
    pub blink_rate_hz: f64,
    pub blink_uv: f64,
    /// Divides every component except the class pattern.
    pub snr: f64,
}

impl Default for SignalConfig {
    fn default() -> Self {
        Self {
            alpha_exponent: 1.0,
            background_uv: 10.0,
            alpha_freq_hz: 10.0,
            alpha_uv: 6.0,
            drift_freq_hz: 0.5,
            drift_uv: 5.0,
            pattern_uv: 16.0,
            pattern_onset_s: 1.3,
            pattern_decay_s: 0.6,
            straight_ratio: 0.5,
            blink_rate_hz: 0.0,
            blink_uv: 80.0,
            snr: 1.0,
        }
    }
}

impl SignalConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let amps = [
            ("background_uv", self.background_uv),
            ("alpha_uv", self.alpha_uv),
            ("drift_uv", self.drift_uv),
            ("pattern_uv", self.pattern_uv),
            ("straight_ratio", self.straight_ratio),
            ("blink_rate_hz", self.blink_rate_hz),
            ("blink_uv", self.blink_uv),
            ("pattern_onset_s", self.pattern_onset_s),
        ];
        if let Some((name, v)) = amps.iter().find(|(_, v)| !(v.is_finite() && *v >= 0.0)) {
            return Err(SynthError::InvalidSignal(format!("{name} = {v} must be finite and non-negative")));
        }
        let positive = [
            ("alpha_exponent", self.alpha_exponent),
            ("snr", self.snr),
            ("pattern_decay_s", self.pattern_decay_s),
            ("alpha_freq_hz", self.alpha_freq_hz),
            ("drift_freq_hz", self.drift_freq_hz),
        ];
        if let Some((name, v)) = positive.iter().find(|(_, v)| !(v.is_finite() && *v > 0.0)) {
            return Err(SynthError::InvalidSignal(format!("{name} = {v} must be positive")));
        }
        Ok(())
    }
}

const ALPHA_WIDTH_HZ: f64 = 0.7;
const DRIFT_WIDTH_HZ: f64 = 0.1;
/// Spatial spread of the deflection around its focus, unit-disc distance.
const PATTERN_SIGMA: f64 = 0.3;
const BLINK_SIGMA: f64 = 0.3;
const BLINK_WIDTH_S: f64 = 0.07;
/// Drift gain varies across channels within this ±fraction.
const DRIFT_GAIN_SPREAD: f64 = 0.3;

fn pos(name: &str) -> (f64, f64) {
    montage::position(name).expect("montage label")
}

fn gauss_weight(p: (f64, f64), focus: (f64, f64), sigma: f64) -> f64 {
    let d2 = (p.0 - focus.0).powi(2) + (p.1 - focus.1).powi(2);
    (-d2 / (2.0 * sigma * sigma)).exp()
}

/// Per-channel spatial gain of the class deflection.
pub fn pattern_weights(channels: &[String], class: Class) -> Vec<f64> {
    let coords: Vec<(f64, f64)> = channels.iter().map(|c| montage::position(c).unwrap_or((0.0, 0.0))).collect();
    let (left, right) = (pos("AF7"), pos("AF8"));
    coords
        .iter()
        .map(|&p| match class {
            Class::Left => gauss_weight(p, left, PATTERN_SIGMA) - 0.5 * gauss_weight(p, right, PATTERN_SIGMA),
            Class::Right => gauss_weight(p, right, PATTERN_SIGMA) - 0.5 * gauss_weight(p, left, PATTERN_SIGMA),
            Class::Straight => ["C3", "Cz", "C4"].iter().map(|n| gauss_weight(p, pos(n), PATTERN_SIGMA)).sum::<f64>().min(1.0),
        })
        .collect()
}

/// Alpha gain: 1 at the occipital rim, 0.4 at the frontal rim.
fn alpha_weight(p: (f64, f64)) -> f64 {
    0.7 - 0.3 * p.1.clamp(-1.0, 1.0)
}

/// Onset-delayed alpha-function time course, peak 1 at `onset + decay`.
pub fn pattern_shape(t_s: f64, onset_s: f64, decay_s: f64) -> f64 {
    let tau = (t_s - onset_s) / decay_s;
    if tau <= 0.0 {
        0.0
    } else {
        tau * (1.0 - tau).exp()
    }
}

/// Real signal from one-sided magnitudes with random phases. Returns the
/// unit-RMS version of each component, summed with their gains.
fn spectral_synthesis(n: usize, parts: &[(&dyn Fn(f64) -> f64, f64)], rng: &mut ChaCha8Rng) -> Vec<f64> {
    if n < 2 {
        return vec![0.0; n];
    }
    let fs = f64::from(SAMPLE_RATE);
    let half = n / 2;
    let mut spec = vec![Complex::new(0.0, 0.0); n];
    for &(mag, gain) in parts {
        let mags: Vec<f64> = (1..=half).map(|k| mag(k as f64 * fs / n as f64)).collect();
        // unnormalized inverse FFT of a Hermitian spectrum: mean square = 2 Σ|X_k|² / n²
        let power: f64 = mags
            .iter()
            .enumerate()
            .map(|(i, m)| if n % 2 == 0 && i + 1 == half { m * m } else { 2.0 * m * m })
            .sum();
        let scale = if power > 0.0 { gain * n as f64 / power.sqrt() } else { 0.0 };
        for (i, m) in mags.iter().enumerate() {
            let k = i + 1;
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let v = if n % 2 == 0 && k == half {
                Complex::new(m * scale * phase.cos().signum(), 0.0)
            } else {
                Complex::from_polar(m * scale, phase)
            };
            spec[k] += v;
            if k != n - k {
                spec[n - k] += v.conj();
            }
        }
    }
    FftPlanner::new().plan_fft_inverse(n).process(&mut spec);
    spec.iter().map(|c| c.re / n as f64).collect()
}

/// Synthesizes the recording for a trigger schedule. Output values are
/// rounded to f32 so the file round trip is lossless.
pub fn gen_recording(
    triggers: &[TriggerEvent],
    n_samples: usize,
    sig: &SignalConfig,
    seed: u64,
) -> Result<Recording, SynthError> {
    sig.validate()?;
    let fs = f64::from(SAMPLE_RATE);
    let tail = (sig.pattern_onset_s + 6.0 * sig.pattern_decay_s) * fs;
    if let Some(tr) = triggers.iter().find(|t| t.sample_index as usize >= n_samples) {
        return Err(SynthError::TriggerBeyondEnd { index: tr.sample_index, needed: 1, n_samples: n_samples as u64 });
    }
    let channels = montage::standard_names();
    let coords: Vec<(f64, f64)> = channels.iter().map(|c| pos(c)).collect();
    let noise_gain = 1.0 / sig.snr;

    let drift = {
        let mut rng = rng::stream(seed, domain::CHANNEL, u64::MAX);
        let f0 = sig.drift_freq_hz;
        let bump = move |f: f64| (-(f - f0).powi(2) / (2.0 * DRIFT_WIDTH_HZ * DRIFT_WIDTH_HZ)).exp();
        spectral_synthesis(n_samples, &[(&bump, sig.drift_uv * noise_gain)], &mut rng)
    };
    let blink_train = blink_train(n_samples, sig, seed);
    let weights: [Vec<f64>; 3] = Class::ALL.map(|c| pattern_weights(&channels, c));
    let course: Vec<f64> = (0..tail.ceil() as usize)
        .map(|t| pattern_shape(t as f64 / fs, sig.pattern_onset_s, sig.pattern_decay_s))
        .collect();
    let blink_focus = pos("Fpz");

    let alpha_exp = sig.alpha_exponent;
    let background = move |f: f64| f.powf(-alpha_exp / 2.0);
    let f_alpha = sig.alpha_freq_hz;
    let alpha = move |f: f64| (-(f - f_alpha).powi(2) / (2.0 * ALPHA_WIDTH_HZ * ALPHA_WIDTH_HZ)).exp();

    let mut data = Vec::with_capacity(channels.len() * n_samples);
    for (c, &p) in coords.iter().enumerate() {
        let mut rng = rng::stream(seed, domain::CHANNEL, c as u64);
        let drift_gain = 1.0 + rng.random_range(-DRIFT_GAIN_SPREAD..=DRIFT_GAIN_SPREAD);
        let mut x = spectral_synthesis(
            n_samples,
            &[(&background, sig.background_uv * noise_gain), (&alpha, sig.alpha_uv * alpha_weight(p) * noise_gain)],
            &mut rng,
        );
        for (v, d) in x.iter_mut().zip(&drift) {
            *v += drift_gain * d;
        }
        let blink_gain = gauss_weight(p, blink_focus, BLINK_SIGMA) * noise_gain;
        if blink_gain > 1e-3 {
            for (v, b) in x.iter_mut().zip(&blink_train) {
                *v += blink_gain * b;
            }
        }
        for tr in triggers {
            let class = tr.label;
            let amp = sig.pattern_uv * if class == Class::Straight { sig.straight_ratio } else { 1.0 };
            let w = amp * weights[class.index()][c];
            if w == 0.0 {
                continue;
            }
            let t0 = tr.sample_index as usize;
            for (v, s) in x[t0..].iter_mut().zip(&course) {
                *v += w * s;
            }
        }
        data.extend(x.into_iter().map(|v| f64::from(v as f32)));
    }
    Ok(Recording::new(channels, SAMPLE_RATE, data)?)
}

/// Unit-weight blink waveform: Gaussian bumps of `blink_uv` at Poisson times.
fn blink_train(n: usize, sig: &SignalConfig, seed: u64) -> Vec<f64> {
    let mut out = vec![0.0; n];
    if sig.blink_rate_hz == 0.0 || sig.blink_uv == 0.0 {
        return out;
    }
    let fs = f64::from(SAMPLE_RATE);
    let mut rng = rng::stream(seed, domain::BLINK, 0);
    let width = BLINK_WIDTH_S * fs;
    let reach = (4.0 * width) as isize;
    let mut t = 0.0;
    loop {
        let u: f64 = rng.random_range(f64::EPSILON..1.0);
        t += -u.ln() / sig.blink_rate_hz * fs;
        if t >= n as f64 {
            break;
        }
        let centre = t as isize;
        for i in (centre - reach).max(0)..(centre + reach).min(n as isize) {
            let d = (i as f64 - t) / width;
            out[i as usize] += sig.blink_uv * (-0.5 * d * d).exp();
        }
    }
    out
}
