//! Trigger-aligned classifier epochs: extraction, outlier rejection,
//! per-epoch normalization, train/validation split and the EPDB file format.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::rng::{self, domain};
use crate::signal_model::{Class, Recording, TriggerEvent, N_CHANNELS};

/// Time steps per classifier epoch.
pub const EPOCH_LEN: usize = 500;

pub const EPDB_MAGIC: &[u8; 4] = b"EPDB";
pub const EPDB_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum EpochError {
    #[error("trigger {trigger} at sample {sample} needs {needed} samples, recording has {n_samples}")]
    WindowOutOfBounds { trigger: usize, sample: u64, needed: u64, n_samples: usize },
    #[error("expected {expected} channels, recording has {found}")]
    ChannelCountMismatch { expected: usize, found: usize },
    #[error("window spec invalid: {0}")]
    InvalidSpec(String),
    #[error("need at least {needed} epochs, have {found}")]
    TooFewEpochs { needed: usize, found: usize },
    #[error("bad epoch database: {0}")]
    BadDatabase(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Window offsets relative to the trigger, at the recording's native rate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowSpec {
    pub offsets: Vec<(usize, usize)>,
    pub decimation: usize,
    pub out_len: usize,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self { offsets: vec![(700, 1700), (750, 1750)], decimation: 2, out_len: EPOCH_LEN }
    }
}

impl WindowSpec {
    pub fn validate(&self) -> Result<(), EpochError> {
        if self.offsets.is_empty() {
            return Err(EpochError::InvalidSpec("no window offsets".into()));
        }
        if self.decimation == 0 || self.out_len == 0 {
            return Err(EpochError::InvalidSpec("decimation and out_len must be positive".into()));
        }
        for &(start, end) in &self.offsets {
            if end <= start || (end - start) % self.decimation != 0 || (end - start) / self.decimation != self.out_len
            {
                return Err(EpochError::InvalidSpec(format!(
                    "window ({start}, {end}) does not decimate by {} to {}",
                    self.decimation, self.out_len
                )));
            }
        }
        Ok(())
    }

    /// Largest end offset over all windows.
    pub fn max_end(&self) -> usize {
        self.offsets.iter().map(|o| o.1).max().unwrap_or(0)
    }
}

/// One classifier input: `len × n_channels` values, time-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Epoch {
    pub data: Vec<f64>,
    pub len: usize,
    pub n_channels: usize,
    pub label: Class,
    pub trigger_index: u32,
    pub window_index: u8,
    pub synthetic: bool,
}

impl Epoch {
    #[inline]
    pub fn at(&self, t: usize, c: usize) -> f64 {
        self.data[t * self.n_channels + c]
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpochSet {
    pub epochs: Vec<Epoch>,
}

impl EpochSet {
    pub fn new(epochs: Vec<Epoch>) -> Self {
        Self { epochs }
    }

    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn class_counts(&self) -> [usize; 3] {
        let mut counts = [0; 3];
        for e in &self.epochs {
            counts[e.label.index()] += 1;
        }
        counts
    }

    pub fn labels(&self) -> Vec<Class> {
        self.epochs.iter().map(|e| e.label).collect()
    }
}

/// Cuts one decimated window starting at `start` into a time-major buffer.
pub(crate) fn cut_window(rec: &Recording, start: usize, spec: &WindowSpec) -> Vec<f64> {
    let nch = rec.n_channels();
    let mut data = Vec::with_capacity(spec.out_len * nch);
    for step in 0..spec.out_len {
        let t = start + step * spec.decimation;
        for c in 0..nch {
            data.push(rec.get(c, t));
        }
    }
    data
}

/// Extracts every window of every trigger, decimated to `spec.out_len` steps.
pub fn extract_epochs(rec: &Recording, triggers: &[TriggerEvent], spec: &WindowSpec) -> Result<EpochSet, EpochError> {
    spec.validate()?;
    if rec.n_channels() != N_CHANNELS {
        return Err(EpochError::ChannelCountMismatch { expected: N_CHANNELS, found: rec.n_channels() });
    }
    let mut epochs = Vec::with_capacity(triggers.len() * spec.offsets.len());
    for (ti, trig) in triggers.iter().enumerate() {
        let needed = trig.sample_index + spec.max_end() as u64;
        if needed > rec.n_samples() as u64 {
            return Err(EpochError::WindowOutOfBounds {
                trigger: ti,
                sample: trig.sample_index,
                needed,
                n_samples: rec.n_samples(),
            });
        }
        for (wi, &(start, _)) in spec.offsets.iter().enumerate() {
            epochs.push(Epoch {
                data: cut_window(rec, trig.sample_index as usize + start, spec),
                len: spec.out_len,
                n_channels: rec.n_channels(),
                label: trig.label,
                trigger_index: ti as u32,
                window_index: wi as u8,
                synthetic: false,
            });
        }
    }
    Ok(EpochSet::new(epochs))
}

/// Linear-interpolated percentile of ascending data (`p` in percent).
pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Max absolute amplitude of an epoch.
pub fn peak_amplitude(e: &Epoch) -> f64 {
    e.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RejectionReport {
    pub low: f64,
    pub high: f64,
    pub removed: usize,
    /// Classes kept alive by retaining their largest-peak epoch.
    pub rescued: Vec<Class>,
}

/// Drops epochs whose peak amplitude falls outside `[P_low, P_high]`.
pub fn reject_outliers(set: &EpochSet, p_low: f64, p_high: f64) -> Result<(EpochSet, RejectionReport), EpochError> {
    if set.len() < 10 {
        return Err(EpochError::TooFewEpochs { needed: 10, found: set.len() });
    }
    let stats: Vec<f64> = set.epochs.iter().map(peak_amplitude).collect();
    let mut sorted = stats.clone();
    sorted.sort_by(f64::total_cmp);
    let low = percentile_sorted(&sorted, p_low);
    let high = percentile_sorted(&sorted, p_high);

    let mut keep: Vec<bool> = stats.iter().map(|&s| s >= low && s <= high).collect();
    let mut rescued = Vec::new();
    for class in Class::ALL {
        let members: Vec<usize> = (0..set.len()).filter(|&i| set.epochs[i].label == class).collect();
        if members.is_empty() || members.iter().any(|&i| keep[i]) {
            continue;
        }
        // First index wins among equal peaks.
        let best = members.iter().copied().fold(members[0], |b, i| if stats[i] > stats[b] { i } else { b });
        keep[best] = true;
        rescued.push(class);
    }
    let epochs: Vec<Epoch> =
        set.epochs.iter().zip(&keep).filter(|(_, &k)| k).map(|(e, _)| e.clone()).collect();
    let removed = set.len() - epochs.len();
    Ok((EpochSet::new(epochs), RejectionReport { low, high, removed, rescued }))
}

/// Shifts and scales values in place to zero mean and unit population variance.
/// Constant input maps to zeros.
pub fn normalize_values(values: &mut [f64]) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    if !(sd > 1e-12 * (1.0 + mean.abs())) {
        values.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    values.iter_mut().for_each(|v| *v = (*v - mean) / sd);
}

pub fn normalize_epoch(e: &Epoch) -> Epoch {
    let mut out = e.clone();
    normalize_values(&mut out.data);
    out
}

/// Per-epoch standardization over the pooled `len × channels` values.
pub fn normalize(set: &EpochSet) -> EpochSet {
    EpochSet::new(set.epochs.iter().map(normalize_epoch).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SplitMode {
    /// Both windows of a trigger stay in the same partition.
    #[default]
    Grouped,
    /// Plain epoch-level shuffle.
    Naive,
}

/// Seeded shuffle and split into (train, validation).
///
/// Train receives `floor(train_frac · N)` epochs. In grouped mode whole
/// trigger groups are assigned greedily in shuffled order, which hits the
/// target exactly unless only two-window groups remain when one slot is left.
pub fn split_shuffle(
    set: &EpochSet,
    train_frac: f64,
    seed: u64,
    mode: SplitMode,
) -> Result<(EpochSet, EpochSet), EpochError> {
    if set.len() < 4 {
        return Err(EpochError::TooFewEpochs { needed: 4, found: set.len() });
    }
    let target = (train_frac * set.len() as f64).floor() as usize;
    let mut rng = rng::stream(seed, domain::SPLIT, 0);
    let mut train = Vec::with_capacity(target);
    let mut val = Vec::with_capacity(set.len() - target);
    match mode {
        SplitMode::Naive => {
            let mut order: Vec<usize> = (0..set.len()).collect();
            order.shuffle(&mut rng);
            for (pos, i) in order.into_iter().enumerate() {
                if pos < target {
                    train.push(set.epochs[i].clone());
                } else {
                    val.push(set.epochs[i].clone());
                }
            }
        }
        SplitMode::Grouped => {
            let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
            for (i, e) in set.epochs.iter().enumerate() {
                groups.entry(e.trigger_index).or_default().push(i);
            }
            let mut groups: Vec<Vec<usize>> = groups.into_values().collect();
            groups.shuffle(&mut rng);
            for g in groups {
                let dest = if train.len() + g.len() <= target { &mut train } else { &mut val };
                dest.extend(g.into_iter().map(|i| set.epochs[i].clone()));
            }
        }
    }
    Ok((EpochSet::new(train), EpochSet::new(val)))
}

/// Serializes epochs into EPDB bytes (values narrowed to f32).
pub fn encode_epochs(set: &EpochSet) -> Result<Vec<u8>, EpochError> {
    let (len, nch) = set.epochs.first().map_or((EPOCH_LEN, N_CHANNELS), |e| (e.len, e.n_channels));
    if set.epochs.iter().any(|e| e.len != len || e.n_channels != nch) {
        return Err(EpochError::BadDatabase("mixed epoch shapes".into()));
    }
    let mut out = Vec::with_capacity(14 + set.len() * (7 + len * nch * 4));
    out.extend_from_slice(EPDB_MAGIC);
    out.extend_from_slice(&EPDB_VERSION.to_le_bytes());
    out.extend_from_slice(&(set.len() as u32).to_le_bytes());
    out.extend_from_slice(&(len as u16).to_le_bytes());
    out.extend_from_slice(&(nch as u16).to_le_bytes());
    for e in &set.epochs {
        out.push(e.label as u8);
        out.push(u8::from(e.synthetic));
        out.extend_from_slice(&e.trigger_index.to_le_bytes());
        out.push(e.window_index);
        for v in &e.data {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_epochs(bytes: &[u8]) -> Result<EpochSet, EpochError> {
    let bad = |m: &str| EpochError::BadDatabase(m.to_string());
    if bytes.len() < 14 || &bytes[..4] != EPDB_MAGIC {
        return Err(bad("missing EPDB header"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != EPDB_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let n = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let len = usize::from(u16::from_le_bytes([bytes[10], bytes[11]]));
    let nch = usize::from(u16::from_le_bytes([bytes[12], bytes[13]]));
    let rec_len = 7 + len * nch * 4;
    if bytes.len() != 14 + n * rec_len {
        return Err(bad(&format!("expected {} bytes, found {}", 14 + n * rec_len, bytes.len())));
    }
    let mut epochs = Vec::with_capacity(n);
    for chunk in bytes[14..].chunks_exact(rec_len) {
        let label = Class::from_u8(chunk[0]).ok_or_else(|| bad(&format!("label {}", chunk[0])))?;
        let data: Vec<f64> = chunk[7..]
            .chunks_exact(4)
            .map(|b| f64::from(f32::from_le_bytes(b.try_into().unwrap())))
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(bad("non-finite value"));
        }
        epochs.push(Epoch {
            data,
            len,
            n_channels: nch,
            label,
            synthetic: chunk[1] != 0,
            trigger_index: u32::from_le_bytes(chunk[2..6].try_into().unwrap()),
            window_index: chunk[6],
        });
    }
    Ok(EpochSet::new(epochs))
}

pub fn save_epochs(set: &EpochSet, path: impl AsRef<Path>) -> Result<(), EpochError> {
    fs::write(path, encode_epochs(set)?)?;
    Ok(())
}

pub fn load_epochs(path: impl AsRef<Path>) -> Result<EpochSet, EpochError> {
    decode_epochs(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::montage;

    fn flat_epoch(values: Vec<f64>, label: Class, trigger: u32) -> Epoch {
        let n = values.len();
        Epoch { data: values, len: n, n_channels: 1, label, trigger_index: trigger, window_index: 0, synthetic: false }
    }

    fn ramp_recording(n: usize) -> Recording {
        let mut rows = vec![vec![0.0; n]; N_CHANNELS];
        rows[3] = (0..n).map(|t| t as f64).collect();
        Recording::from_rows(montage::standard_names(), 512, rows).unwrap()
    }

    #[test]
    fn ramp_window_picks_even_offsets() {
        let rec = ramp_recording(2000);
        let set = extract_epochs(&rec, &[TriggerEvent::new(0, Class::Left)], &WindowSpec::default()).unwrap();
        assert_eq!(set.len(), 2);
        let e = &set.epochs[0];
        let got: Vec<f64> = (0..EPOCH_LEN).map(|t| e.at(t, 3)).collect();
        let want: Vec<f64> = (0..EPOCH_LEN).map(|i| (700 + 2 * i) as f64).collect();
        assert_eq!(got, want);
        assert_eq!(set.epochs[1].at(0, 3), 750.0);
        assert_eq!(set.epochs[1].at(EPOCH_LEN - 1, 3), 1748.0);
        assert!(set.epochs.iter().all(|e| e.label == Class::Left && e.trigger_index == 0));
    }

    #[test]
    fn window_near_end_is_out_of_bounds() {
        let rec = ramp_recording(3000);
        let trig = [TriggerEvent::new(2900, Class::Straight)];
        assert!(matches!(
            extract_epochs(&rec, &trig, &WindowSpec::default()),
            Err(EpochError::WindowOutOfBounds { trigger: 0, .. })
        ));
        let exact = [TriggerEvent::new(1250, Class::Straight)];
        assert!(extract_epochs(&rec, &exact, &WindowSpec::default()).is_ok());
    }

    #[test]
    fn channel_count_checked() {
        let rec = Recording::new(vec!["C3".into()], 512, vec![0.0; 4000]).unwrap();
        assert!(matches!(
            extract_epochs(&rec, &[TriggerEvent::new(0, Class::Left)], &WindowSpec::default()),
            Err(EpochError::ChannelCountMismatch { expected: 64, found: 1 })
        ));
    }

    #[test]
    fn spec_validation() {
        let spec = WindowSpec { offsets: vec![(0, 999)], ..WindowSpec::default() };
        assert!(spec.validate().is_err());
        assert!(WindowSpec::default().validate().is_ok());
    }

    #[test]
    fn ten_point_percentile_rejection() {
        let set = EpochSet::new(
            (1..=10).map(|s| flat_epoch(vec![s as f64, -0.5], Class::ALL[s % 3], s as u32)).collect(),
        );
        let (kept, report) = reject_outliers(&set, 10.0, 90.0).unwrap();
        let peaks: Vec<f64> = kept.epochs.iter().map(peak_amplitude).collect();
        assert_eq!(peaks, (2..=9).map(|s| s as f64).collect::<Vec<_>>());
        assert!((report.low - 1.9).abs() < 1e-12 && (report.high - 9.1).abs() < 1e-12);
        assert!(report.rescued.is_empty());
    }

    #[test]
    fn identical_epochs_all_kept() {
        let set = EpochSet::new((0..12).map(|i| flat_epoch(vec![3.0, 1.0], Class::Straight, i)).collect());
        assert_eq!(reject_outliers(&set, 10.0, 90.0).unwrap().0.len(), 12);
    }

    #[test]
    fn vanishing_class_is_rescued() {
        // The only right-class epoch has the largest peak and would be cut.
        let mut epochs: Vec<Epoch> = (1..=10).map(|s| flat_epoch(vec![s as f64], Class::Straight, s)).collect();
        epochs[9].label = Class::Right;
        let (kept, report) = reject_outliers(&EpochSet::new(epochs), 10.0, 90.0).unwrap();
        assert_eq!(report.rescued, vec![Class::Right]);
        assert_eq!(kept.class_counts(), [8, 0, 1]);
    }

    #[test]
    fn too_few_for_rejection() {
        let set = EpochSet::new((0..9).map(|i| flat_epoch(vec![1.0], Class::Left, i)).collect());
        assert!(matches!(reject_outliers(&set, 10.0, 90.0), Err(EpochError::TooFewEpochs { .. })));
    }

    #[test]
    fn constant_epoch_normalizes_to_zero() {
        let e = flat_epoch(vec![5.0; 32000], Class::Left, 0);
        assert!(normalize_epoch(&e).data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unit_epoch_is_fixed_point() {
        let vals: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let e = flat_epoch(vals.clone(), Class::Left, 0);
        assert_eq!(normalize_epoch(&e).data, vals);
    }

    #[test]
    fn split_sizes_and_determinism() {
        let set = EpochSet::new((0..10).map(|i| flat_epoch(vec![i as f64], Class::Left, i)).collect());
        let (tr, va) = split_shuffle(&set, 0.7, 9, SplitMode::Grouped).unwrap();
        assert_eq!((tr.len(), va.len()), (7, 3));
        let (tr2, va2) = split_shuffle(&set, 0.7, 9, SplitMode::Grouped).unwrap();
        assert_eq!((tr, va), (tr2, va2));
        let (tr, va) = split_shuffle(&set, 0.7, 9, SplitMode::Naive).unwrap();
        assert_eq!((tr.len(), va.len()), (7, 3));
        assert!(matches!(
            split_shuffle(&EpochSet::new(set.epochs[..3].to_vec()), 0.7, 0, SplitMode::Naive),
            Err(EpochError::TooFewEpochs { .. })
        ));
    }

    #[test]
    fn epdb_round_trip_and_rejects_garbage() {
        let mut e = flat_epoch(vec![0.25, -1.5, 3.0], Class::Right, 41);
        e.window_index = 1;
        e.synthetic = true;
        let set = EpochSet::new(vec![e.clone(), flat_epoch(vec![1.0, 2.0, 4.0], Class::Left, 2)]);
        let bytes = encode_epochs(&set).unwrap();
        assert_eq!(bytes.len(), 14 + 2 * (7 + 3 * 4));
        assert_eq!(decode_epochs(&bytes).unwrap(), set);
        assert!(decode_epochs(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_epochs(b"EPDX").is_err());
    }
}
