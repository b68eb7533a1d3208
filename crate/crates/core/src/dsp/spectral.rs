//! Welch power spectral density and band integration.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::DspError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WelchParams {
    pub segment_len: usize,
    pub overlap: f64,
}

impl Default for WelchParams {
    fn default() -> Self {
        Self { segment_len: 1024, overlap: 0.5 }
    }
}

/// One-sided density in µV²/Hz on a uniform 0..fs/2 grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Psd {
    pub freqs: Vec<f64>,
    pub power: Vec<f64>,
    pub params: WelchParams,
    pub segments: usize,
}

impl Psd {
    pub fn resolution(&self) -> f64 {
        self.freqs.get(1).copied().unwrap_or(0.0)
    }

    /// Frequency of the largest power within `[lo, hi]`.
    pub fn peak_in(&self, lo: f64, hi: f64) -> Option<f64> {
        self.freqs
            .iter()
            .zip(&self.power)
            .filter(|(f, _)| **f >= lo && **f <= hi)
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(f, _)| *f)
    }
}

/// Periodic Hann window.
fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()).collect()
}

/// Welch estimate: mean-detrended Hann segments at `overlap` hop, averaged
/// one-sided periodograms scaled by `1 / (fs · Σw²)`.
pub fn welch_psd(x: &[f64], fs: f64, params: WelchParams) -> Result<Psd, DspError> {
    let seg = params.segment_len;
    if seg < 2 {
        return Err(DspError::InvalidParameter("segment length must be at least 2".into()));
    }
    if !(0.0..1.0).contains(&params.overlap) {
        return Err(DspError::InvalidParameter(format!("overlap {} outside [0, 1)", params.overlap)));
    }
    if x.len() < seg {
        return Err(DspError::SignalTooShort { len: x.len(), segment: seg });
    }
    let hop = ((seg as f64) * (1.0 - params.overlap)).round().max(1.0) as usize;
    let window = hann(seg);
    let scale = 1.0 / (fs * window.iter().map(|w| w * w).sum::<f64>());
    let fft = FftPlanner::new().plan_fft_forward(seg);
    let n_bins = seg / 2 + 1;
    let mut acc = vec![0.0; n_bins];
    let mut buf = vec![Complex::new(0.0, 0.0); seg];
    let mut segments = 0;
    let mut start = 0;
    while start + seg <= x.len() {
        let block = &x[start..start + seg];
        let mean = block.iter().sum::<f64>() / seg as f64;
        for ((b, v), w) in buf.iter_mut().zip(block).zip(&window) {
            *b = Complex::new((v - mean) * w, 0.0);
        }
        fft.process(&mut buf);
        for (a, c) in acc.iter_mut().zip(&buf) {
            *a += c.norm_sqr();
        }
        segments += 1;
        start += hop;
    }
    let power = acc
        .iter()
        .enumerate()
        .map(|(k, a)| {
            let one_sided = if k == 0 || (seg.is_multiple_of(2) && k == seg / 2) { 1.0 } else { 2.0 };
            a * scale * one_sided / segments as f64
        })
        .collect();
    let freqs = (0..n_bins).map(|k| k as f64 * fs / seg as f64).collect();
    Ok(Psd { freqs, power, params, segments })
}

/// Integral of the piecewise-linear PSD from 0 to `f`.
fn cumulative(psd: &Psd, f: f64) -> f64 {
    let mut total = 0.0;
    for i in 0..psd.freqs.len() - 1 {
        let (f0, f1) = (psd.freqs[i], psd.freqs[i + 1]);
        let (p0, p1) = (psd.power[i], psd.power[i + 1]);
        if f >= f1 {
            total += 0.5 * (p0 + p1) * (f1 - f0);
        } else {
            if f > f0 {
                let pf = p0 + (p1 - p0) * (f - f0) / (f1 - f0);
                total += 0.5 * (p0 + pf) * (f - f0);
            }
            break;
        }
    }
    total
}

/// Trapezoidal power in `[lo, hi]` Hz, interpolating at band edges.
pub fn band_power(psd: &Psd, band: (f64, f64)) -> Result<f64, DspError> {
    let (lo, hi) = band;
    let max = *psd.freqs.last().unwrap_or(&0.0);
    if !(lo >= 0.0 && lo <= hi && hi <= max) {
        return Err(DspError::BandOutOfRange { lo, hi, max });
    }
    Ok(cumulative(psd, hi) - cumulative(psd, lo))
}

pub fn psd_csv(psd: &Psd) -> String {
    let mut s = String::from("freq_hz,power\n");
    for (f, p) in psd.freqs.iter().zip(&psd.power) {
        s.push_str(&format!("{f},{p}\n"));
    }
    s
}

/// Log-power line plot up to `f_max` Hz.
pub fn psd_svg(psd: &Psd, f_max: f64, title: &str) -> String {
    let (w, h, m) = (640.0, 360.0, 40.0);
    let pts: Vec<(f64, f64)> = psd
        .freqs
        .iter()
        .zip(&psd.power)
        .filter(|(f, _)| **f > 0.0 && **f <= f_max)
        .map(|(f, p)| (*f, p.max(1e-12).log10()))
        .collect();
    let (lo, hi) = pts.iter().fold((f64::MAX, f64::MIN), |(a, b), (_, y)| (a.min(*y), b.max(*y)));
    let span = (hi - lo).max(1e-9);
    let path: Vec<String> = pts
        .iter()
        .map(|(f, y)| format!("{:.2},{:.2}", m + f / f_max * (w - 2.0 * m), h - m - (y - lo) / span * (h - 2.0 * m)))
        .collect();
    format!(
        concat!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\">\n",
            "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n",
            "<text x=\"{m}\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\">{title}</text>\n",
            "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n",
            "<line x1=\"{m}\" y1=\"{m}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>\n",
            "<text x=\"{r}\" y=\"{lb}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{fmax} Hz</text>\n",
            "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"1.5\" points=\"{pts}\"/>\n",
            "</svg>\n"
        ),
        w = w,
        h = h,
        m = m,
        b = h - m,
        r = w - m,
        lb = h - m + 15.0,
        fmax = f_max,
        title = title,
        pts = path.join(" ")
    )
}
