//! Recordings, trigger events, montage validation and their on-disk formats.
//!
//! EEGR layout (little-endian):
//!
//! ```text
//! "EEGR" | version u16 = 1 | n_channels u16 | sample_rate u32 | n_samples u64
//! | n_channels × 8-byte space-padded ASCII names
//! | f32 payload, sample-major (all channels of sample 0, then sample 1, ...)
//! ```
//!
//! Triggers live in a sidecar CSV of `sample_index,label` lines.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use crate::montage;

pub const MAGIC: &[u8; 4] = b"EEGR";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 20;
pub const NAME_LEN: usize = 8;

/// Channel count of the experiment's cap.
pub const N_CHANNELS: usize = 64;
/// Amplifier sample rate in Hz.
pub const SAMPLE_RATE: u32 = 512;
/// Upper impedance bound for a channel to pass validation.
pub const MAX_IMPEDANCE_KOHM: f64 = 20.0;

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("bad magic at byte 0: expected \"EEGR\", found {found:?}")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported EEGR version {version} at byte 4")]
    VersionUnsupported { version: u16 },
    #[error("file truncated at byte {offset}: expected {expected} bytes")]
    TruncatedFile { offset: usize, expected: usize },
    #[error("non-finite sample at byte {offset}")]
    NonFiniteSample { offset: usize },
    #[error("invalid recording: {0}")]
    InvalidRecording(String),
    #[error("trigger line {line}: label {label} not in {{0,1,2}}")]
    BadLabel { line: usize, label: String },
    #[error("trigger line {line}: sample index {index} does not increase")]
    UnsortedTriggers { line: usize, index: u64 },
    #[error("trigger line {line}: malformed row {text:?}")]
    MalformedTrigger { line: usize, text: String },
    #[error("trigger {position} at sample {index} outside recording of {n_samples} samples")]
    IndexOutOfRange { position: usize, index: u64, n_samples: u64 },
    #[error("I/O failure: {0}")]
    IoFailure(#[from] io::Error),
}

/// Steering intention carried by a trigger.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Class {
    Straight = 0,
    Left = 1,
    Right = 2,
}

impl Class {
    pub const ALL: [Class; 3] = [Class::Straight, Class::Left, Class::Right];

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Class::Straight),
            1 => Some(Class::Left),
            2 => Some(Class::Right),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Class::Straight => "straight",
            Class::Left => "left",
            Class::Right => "right",
        }
    }
}

impl fmt::Display for Class {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TriggerEvent {
    pub sample_index: u64,
    pub label: Class,
}

impl TriggerEvent {
    pub fn new(sample_index: u64, label: Class) -> Self {
        Self { sample_index, label }
    }
}

/// Multichannel signal in µV, stored channel-major (`n_channels × n_samples`).
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    channels: Vec<String>,
    sample_rate: u32,
    n_samples: usize,
    data: Vec<f64>,
}

impl Recording {
    /// Builds a recording from channel-major data, checking every invariant.
    pub fn new(channels: Vec<String>, sample_rate: u32, data: Vec<f64>) -> Result<Self, SignalError> {
        if channels.is_empty() {
            return Err(SignalError::InvalidRecording("no channels".into()));
        }
        if sample_rate == 0 {
            return Err(SignalError::InvalidRecording("sample rate must be positive".into()));
        }
        if channels.len() > usize::from(u16::MAX) {
            return Err(SignalError::InvalidRecording("too many channels".into()));
        }
        let mut seen = HashSet::new();
        for name in &channels {
            if name.is_empty() || name.len() > NAME_LEN || !name.is_ascii() || name.contains(' ') {
                return Err(SignalError::InvalidRecording(format!(
                    "channel name {name:?} must be 1-8 ASCII characters without spaces"
                )));
            }
            if !seen.insert(name.to_ascii_lowercase()) {
                return Err(SignalError::InvalidRecording(format!("duplicate channel {name:?}")));
            }
        }
        if !data.len().is_multiple_of(channels.len()) {
            return Err(SignalError::InvalidRecording(format!(
                "{} values do not divide into {} channels",
                data.len(),
                channels.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(SignalError::InvalidRecording(format!("non-finite value at flat index {i}")));
        }
        let n_samples = data.len() / channels.len();
        Ok(Self { channels, sample_rate, n_samples, data })
    }

    /// Builds a recording from per-channel rows.
    pub fn from_rows(channels: Vec<String>, sample_rate: u32, rows: Vec<Vec<f64>>) -> Result<Self, SignalError> {
        if rows.len() != channels.len() {
            return Err(SignalError::InvalidRecording(format!(
                "{} rows for {} channels",
                rows.len(),
                channels.len()
            )));
        }
        let n = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n) {
            return Err(SignalError::InvalidRecording("ragged channel rows".into()));
        }
        Self::new(channels, sample_rate, rows.concat())
    }

    pub fn channels(&self) -> &[String] {
        &self.channels
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.data[c * self.n_samples..(c + 1) * self.n_samples]
    }

    pub fn channel_by_name(&self, name: &str) -> Option<&[f64]> {
        montage::index_of(&self.channels, name).map(|c| self.channel(c))
    }

    pub fn channel_index(&self, name: &str) -> Option<usize> {
        montage::index_of(&self.channels, name)
    }

    #[inline]
    pub fn get(&self, c: usize, t: usize) -> f64 {
        self.data[c * self.n_samples + t]
    }

    /// Channel-major samples.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Rebuilds a recording with new channel-major data of identical shape.
    pub fn with_data(&self, data: Vec<f64>) -> Result<Self, SignalError> {
        if data.len() != self.data.len() {
            return Err(SignalError::InvalidRecording("shape change in with_data".into()));
        }
        Self::new(self.channels.clone(), self.sample_rate, data)
    }

    /// Copies the first `n` samples.
    pub fn truncated(&self, n: usize) -> Self {
        let n = n.min(self.n_samples);
        let data = (0..self.n_channels()).flat_map(|c| self.channel(c)[..n].iter().copied()).collect();
        Self { channels: self.channels.clone(), sample_rate: self.sample_rate, n_samples: n, data }
    }

    pub fn duration_s(&self) -> f64 {
        self.n_samples as f64 / f64::from(self.sample_rate)
    }
}

fn take(bytes: &[u8], offset: usize, len: usize) -> Result<&[u8], SignalError> {
    bytes
        .get(offset..offset + len)
        .ok_or(SignalError::TruncatedFile { offset: bytes.len(), expected: offset + len })
}

/// Serializes a recording into EEGR bytes. Samples are narrowed to f32.
pub fn encode_recording(rec: &Recording) -> Vec<u8> {
    let nch = rec.n_channels();
    let ns = rec.n_samples();
    let mut out = Vec::with_capacity(HEADER_LEN + nch * NAME_LEN + nch * ns * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(nch as u16).to_le_bytes());
    out.extend_from_slice(&rec.sample_rate.to_le_bytes());
    out.extend_from_slice(&(ns as u64).to_le_bytes());
    for name in &rec.channels {
        let mut field = [b' '; NAME_LEN];
        field[..name.len()].copy_from_slice(name.as_bytes());
        out.extend_from_slice(&field);
    }
    for t in 0..ns {
        for c in 0..nch {
            out.extend_from_slice(&(rec.get(c, t) as f32).to_le_bytes());
        }
    }
    out
}

/// Parses EEGR bytes; errors carry the offending byte offset.
pub fn decode_recording(bytes: &[u8]) -> Result<Recording, SignalError> {
    let magic = take(bytes, 0, 4)?;
    if magic != MAGIC {
        let mut found = [0u8; 4];
        found.copy_from_slice(magic);
        return Err(SignalError::BadMagic { found });
    }
    let version = u16::from_le_bytes(take(bytes, 4, 2)?.try_into().unwrap());
    if version != VERSION {
        return Err(SignalError::VersionUnsupported { version });
    }
    let nch = usize::from(u16::from_le_bytes(take(bytes, 6, 2)?.try_into().unwrap()));
    let fs = u32::from_le_bytes(take(bytes, 8, 4)?.try_into().unwrap());
    let ns = u64::from_le_bytes(take(bytes, 12, 8)?.try_into().unwrap());
    let ns = usize::try_from(ns).map_err(|_| SignalError::InvalidRecording("sample count overflows".into()))?;

    let mut channels = Vec::with_capacity(nch);
    for c in 0..nch {
        let raw = take(bytes, HEADER_LEN + c * NAME_LEN, NAME_LEN)?;
        let name = std::str::from_utf8(raw)
            .map_err(|_| SignalError::InvalidRecording(format!("non-ASCII name at byte {}", HEADER_LEN + c * NAME_LEN)))?
            .trim_end_matches(' ')
            .to_string();
        channels.push(name);
    }
    let payload_at = HEADER_LEN + nch * NAME_LEN;
    let payload_len = nch
        .checked_mul(ns)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| SignalError::InvalidRecording("payload size overflows".into()))?;
    let payload = take(bytes, payload_at, payload_len)?;

    let mut data = vec![0.0; nch * ns];
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(SignalError::NonFiniteSample { offset: payload_at + 4 * i });
        }
        let (t, c) = (i / nch, i % nch);
        data[c * ns + t] = f64::from(v);
    }
    Recording::new(channels, fs, data)
}

pub fn save_recording(rec: &Recording, path: impl AsRef<Path>) -> Result<(), SignalError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(&encode_recording(rec))?;
    w.flush()?;
    Ok(())
}

pub fn load_recording(path: impl AsRef<Path>) -> Result<Recording, SignalError> {
    decode_recording(&fs::read(path)?)
}

/// Parses trigger CSV text. Blank lines are skipped.
pub fn parse_triggers(text: &str) -> Result<Vec<TriggerEvent>, SignalError> {
    let mut out: Vec<TriggerEvent> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let row = raw.trim();
        if row.is_empty() {
            continue;
        }
        let (idx, label) = row
            .split_once(',')
            .ok_or_else(|| SignalError::MalformedTrigger { line, text: row.to_string() })?;
        let index: u64 = idx
            .trim()
            .parse()
            .map_err(|_| SignalError::MalformedTrigger { line, text: row.to_string() })?;
        let label_txt = label.trim();
        let class = label_txt
            .parse::<u8>()
            .ok()
            .and_then(Class::from_u8)
            .ok_or_else(|| SignalError::BadLabel { line, label: label_txt.to_string() })?;
        if let Some(prev) = out.last() {
            if index <= prev.sample_index {
                return Err(SignalError::UnsortedTriggers { line, index });
            }
        }
        out.push(TriggerEvent::new(index, class));
    }
    Ok(out)
}

pub fn format_triggers(triggers: &[TriggerEvent]) -> String {
    triggers.iter().map(|t| format!("{},{}\n", t.sample_index, t.label as u8)).collect()
}

pub fn load_triggers(path: impl AsRef<Path>) -> Result<Vec<TriggerEvent>, SignalError> {
    parse_triggers(&fs::read_to_string(path)?)
}

pub fn save_triggers(triggers: &[TriggerEvent], path: impl AsRef<Path>) -> Result<(), SignalError> {
    fs::write(path, format_triggers(triggers))?;
    Ok(())
}

/// Checks every trigger against the recording length.
pub fn check_triggers(triggers: &[TriggerEvent], rec: &Recording) -> Result<(), SignalError> {
    let n_samples = rec.n_samples() as u64;
    for (position, t) in triggers.iter().enumerate() {
        if t.sample_index >= n_samples {
            return Err(SignalError::IndexOutOfRange { position, index: t.sample_index, n_samples });
        }
    }
    Ok(())
}

/// Cap metadata: optional per-channel impedances and 2-D electrode positions.
#[derive(Debug, Clone, PartialEq)]
pub struct MontageMeta {
    pub system: &'static str,
    pub impedance_kohm: Option<Vec<f64>>,
    pub coords2d: Vec<Option<(f64, f64)>>,
}

impl MontageMeta {
    pub fn for_channels(channels: &[String]) -> Self {
        Self {
            system: "10-20",
            impedance_kohm: None,
            coords2d: channels.iter().map(|c| montage::position(c)).collect(),
        }
    }

    pub fn with_impedances(mut self, kohm: Vec<f64>) -> Self {
        self.impedance_kohm = Some(kohm);
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub high_impedance: Vec<String>,
    pub unknown_names: Vec<String>,
    pub outside_disc: Vec<String>,
    pub missing_impedance: bool,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.high_impedance.is_empty() && self.unknown_names.is_empty() && self.outside_disc.is_empty()
    }
}

/// Flags high-impedance channels, non-10–20 names and off-disc coordinates.
pub fn validate_montage(rec: &Recording, meta: &MontageMeta) -> ValidationReport {
    let mut report = ValidationReport::default();
    for (i, name) in rec.channels().iter().enumerate() {
        if !montage::is_known(name) {
            report.unknown_names.push(name.clone());
        }
        if let Some(Some((x, y))) = meta.coords2d.get(i) {
            if x.hypot(*y) > 1.0 + 1e-9 {
                report.outside_disc.push(name.clone());
            }
        }
        match meta.impedance_kohm.as_ref().and_then(|z| z.get(i)) {
            Some(z) if !(*z <= MAX_IMPEDANCE_KOHM) => report.high_impedance.push(name.clone()),
            Some(_) => {}
            None => report.missing_impedance = true,
        }
    }
    report
}
