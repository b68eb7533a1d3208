//! Butterworth band-pass as second-order sections, applied forward and
//! backward for zero phase.

use crate::signal_model::Recording;

use super::DspError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandpassSpec {
    pub lo: f64,
    pub hi: f64,
    /// Order of each of the high-pass and low-pass halves (even).
    pub order: usize,
}

impl Default for BandpassSpec {
    fn default() -> Self {
        Self { lo: 0.1, hi: 40.0, order: 4 }
    }
}

/// Biquad `[b0, b1, b2, a1, a2]` with `a0 = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    /// Largest pole magnitude of `z² + a1 z + a2`.
    pub fn pole_radius(&self) -> f64 {
        let (a1, a2) = (self.a[0], self.a[1]);
        let disc = a1 * a1 - 4.0 * a2;
        if disc < 0.0 {
            a2.abs().sqrt()
        } else {
            let r = disc.sqrt();
            ((-a1 + r) / 2.0).abs().max(((-a1 - r) / 2.0).abs())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Lowpass,
    Highpass,
}

/// Even-order Butterworth sections via the prewarped bilinear transform.
fn butter_sections(order: usize, cutoff: f64, fs: f64, kind: Kind) -> Vec<Biquad> {
    let k = (std::f64::consts::PI * cutoff / fs).tan();
    (0..order / 2)
        .map(|i| {
            // analog prototype pole pair: s² + a s + 1
            let theta = std::f64::consts::PI * (2 * i + order + 1) as f64 / (2 * order) as f64;
            let a = -2.0 * theta.cos();
            let a0 = 1.0 + a * k + k * k;
            let den = [(2.0 * k * k - 2.0) / a0, (1.0 - a * k + k * k) / a0];
            let b = match kind {
                Kind::Lowpass => [k * k / a0, 2.0 * k * k / a0, k * k / a0],
                Kind::Highpass => [1.0 / a0, -2.0 / a0, 1.0 / a0],
            };
            Biquad { b, a: den }
        })
        .collect()
}

/// High-pass at `lo` cascaded with low-pass at `hi`.
pub fn design_bandpass(spec: &BandpassSpec, fs: f64) -> Result<Vec<Biquad>, DspError> {
    if !(spec.lo > 0.0 && spec.lo < spec.hi && 2.0 * spec.hi < fs) {
        return Err(DspError::NyquistViolation { lo: spec.lo, hi: spec.hi, fs });
    }
    if spec.order == 0 || !spec.order.is_multiple_of(2) {
        return Err(DspError::InvalidParameter(format!("filter order {} must be even and positive", spec.order)));
    }
    let mut sos = butter_sections(spec.order, spec.lo, fs, Kind::Highpass);
    sos.extend(butter_sections(spec.order, spec.hi, fs, Kind::Lowpass));
    if let Some(s) = sos.iter().find(|s| !(s.pole_radius() < 1.0)) {
        return Err(DspError::UnstableFilter { radius: s.pole_radius() });
    }
    Ok(sos)
}

/// Steady-state section states for a unit step input (transposed direct form II).
fn step_states(sos: &[Biquad]) -> Vec<[f64; 2]> {
    let mut gain = 1.0;
    sos.iter()
        .map(|s| {
            let y = gain * s.dc_gain();
            let s2 = s.b[2] * gain - s.a[1] * y;
            let s1 = s.b[1] * gain - s.a[0] * y + s2;
            gain = y;
            [s1, s2]
        })
        .collect()
}

fn sosfilt(sos: &[Biquad], x: &mut [f64], zi: &[[f64; 2]], scale: f64) {
    for (s, z) in sos.iter().zip(zi) {
        let (mut s1, mut s2) = (z[0] * scale, z[1] * scale);
        for v in x.iter_mut() {
            let input = *v;
            let y = s.b[0] * input + s1;
            s1 = s.b[1] * input - s.a[0] * y + s2;
            s2 = s.b[2] * input - s.a[1] * y;
            *v = y;
        }
    }
}

/// Zero-phase filtering with even reflection padding and step-matched initial states.
pub fn filtfilt(sos: &[Biquad], x: &[f64], padlen: usize) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let pad = padlen.min(n - 1);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend(x[1..=pad].iter().rev());
    ext.extend_from_slice(x);
    ext.extend(x[n - 1 - pad..n - 1].iter().rev());

    let zi = step_states(sos);
    let first = ext[0];
    sosfilt(sos, &mut ext, &zi, first);
    ext.reverse();
    let first = ext[0];
    sosfilt(sos, &mut ext, &zi, first);
    ext.reverse();
    ext[pad..pad + n].to_vec()
}

/// Per-channel zero-phase band-pass of a recording.
pub fn bandpass(rec: &Recording, spec: &BandpassSpec) -> Result<Recording, DspError> {
    let sos = design_bandpass(spec, f64::from(rec.sample_rate()))?;
    let padlen = 3 * 2 * spec.order;
    let mut out = Vec::with_capacity(rec.data().len());
    for c in 0..rec.n_channels() {
        out.extend(filtfilt(&sos, rec.channel(c), padlen));
    }
    Ok(rec.with_data(out)?)
}

/// Magnitude response of the cascade at frequency `f` (single pass).
pub fn magnitude(sos: &[Biquad], f: f64, fs: f64) -> f64 {
    let w = 2.0 * std::f64::consts::PI * f / fs;
    let (c1, s1, c2, s2) = (w.cos(), w.sin(), (2.0 * w).cos(), (2.0 * w).sin());
    sos.iter()
        .map(|s| {
            let nr = s.b[0] + s.b[1] * c1 + s.b[2] * c2;
            let ni = -(s.b[1] * s1 + s.b[2] * s2);
            let dr = 1.0 + s.a[0] * c1 + s.a[1] * c2;
            let di = -(s.a[0] * s1 + s.a[1] * s2);
            (nr.hypot(ni)) / (dr.hypot(di))
        })
        .product()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    const FS: f64 = 512.0;

    fn sine(freq: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| (2.0 * PI * freq * i as f64 / FS).sin()).collect()
    }

    /// Least-squares fit of `a sin + b cos` at a known frequency → (amplitude, phase).
    fn fit(x: &[f64], freq: f64, from: usize) -> (f64, f64) {
        let (mut ss, mut sc, mut cc, mut xs, mut xc) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (i, v) in x.iter().enumerate().skip(from).take(x.len() - 2 * from) {
            let w = 2.0 * PI * freq * i as f64 / FS;
            let (s, c) = (w.sin(), w.cos());
            ss += s * s;
            sc += s * c;
            cc += c * c;
            xs += v * s;
            xc += v * c;
        }
        let det = ss * cc - sc * sc;
        let a = (xs * cc - xc * sc) / det;
        let b = (xc * ss - xs * sc) / det;
        (a.hypot(b), b.atan2(a))
    }

    fn rms(x: &[f64]) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }

    #[test]
    fn design_matches_butterworth_magnitude() {
        let sos = design_bandpass(&BandpassSpec::default(), FS).unwrap();
        assert_eq!(sos.len(), 4);
        // -3 dB at both corners for a single pass
        for f in [0.1, 40.0] {
            assert!((magnitude(&sos, f, FS) - 0.5f64.sqrt()).abs() < 1e-3, "{f}");
        }
        // prewarped 4th-order low-pass formula at 80 Hz
        let ratio = (PI * 80.0 / FS).tan() / (PI * 40.0 / FS).tan();
        let expected = 1.0 / (1.0 + ratio.powi(8)).sqrt();
        assert!((magnitude(&sos, 80.0, FS) / expected - 1.0).abs() < 1e-3);
        assert!(sos.iter().all(|s| s.pole_radius() < 1.0));
    }

    #[test]
    fn passband_sine_keeps_amplitude_and_phase() {
        let x = sine(10.0, 512 * 20);
        let sos = design_bandpass(&BandpassSpec::default(), FS).unwrap();
        let y = filtfilt(&sos, &x, 24);
        let (a0, p0) = fit(&x, 10.0, 2048);
        let (a1, p1) = fit(&y, 10.0, 2048);
        let db = 20.0 * (a1 / a0).log10();
        assert!(db.abs() < 1.0, "{db} dB");
        assert!((p1 - p0).to_degrees().abs() < 1.0);
    }

    #[test]
    fn stopband_and_dc_attenuated() {
        let sos = design_bandpass(&BandpassSpec::default(), FS).unwrap();
        // the 0.1 Hz high-pass leaves a slow edge transient, so measure the 80 Hz line itself
        let x = sine(80.0, 512 * 20);
        let y = filtfilt(&sos, &x, 24);
        let att = 20.0 * (fit(&y, 80.0, 1024).0 / fit(&x, 80.0, 1024).0).log10();
        assert!(att <= -40.0, "{att} dB");

        let dc = vec![3.0; 512 * 20];
        let y = filtfilt(&sos, &dc, 24);
        let att = 20.0 * (rms(&y) / 3.0).log10();
        assert!(att <= -40.0, "{att} dB");
    }

    #[test]
    fn invalid_specs() {
        let bad = BandpassSpec { hi: 300.0, ..BandpassSpec::default() };
        assert!(matches!(design_bandpass(&bad, FS), Err(DspError::NyquistViolation { .. })));
        let bad = BandpassSpec { lo: 0.0, ..BandpassSpec::default() };
        assert!(design_bandpass(&bad, FS).is_err());
        let bad = BandpassSpec { order: 3, ..BandpassSpec::default() };
        assert!(matches!(design_bandpass(&bad, FS), Err(DspError::InvalidParameter(_))));
    }

    #[test]
    fn zero_lag_cross_correlation() {
        let x = sine(7.0, 512 * 10);
        let sos = design_bandpass(&BandpassSpec::default(), FS).unwrap();
        let y = filtfilt(&sos, &x, 24);
        let core = 1024..x.len() - 1024;
        let xc = |lag: isize| -> f64 {
            core.clone().map(|i| x[i] * y[(i as isize + lag) as usize]).sum()
        };
        let best = (-20..=20).max_by(|&a, &b| xc(a).total_cmp(&xc(b))).unwrap();
        assert_eq!(best, 0);
    }
}
