//! Online replay and classification over a byte-framed stream.
//!
//! Wire format (little-endian):
//!
//! ```text
//! 'S' | u32 index | n_ch × f32     sample frame
//! 'T' | u32 index | u8 label       trigger frame
//! 'E'                              end of stream
//! ```
//!
//! A server emits a trigger frame just before the sample frame it points
//! at. The classifier side runs a receiver thread that fills a ring buffer
//! and hands completed windows to a classifier thread over a bounded FIFO.

use std::collections::VecDeque;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::convnet::{Model, NetError, N_CLASSES};
use crate::epoching::{normalize_values, percentile_sorted, WindowSpec};
use crate::signal_model::{Class, Recording, TriggerEvent, N_CHANNELS};

pub const TAG_SAMPLE: u8 = b'S';
pub const TAG_TRIGGER: u8 = b'T';
pub const TAG_END: u8 = b'E';

/// Samples paced per sleep in real-time mode (31.25 ms at 512 Hz).
const PACE_BLOCK: usize = 16;
/// Bounded depth of the window queue between receiver and classifier.
const QUEUE_DEPTH: usize = 64;

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("connection lost: {0}")]
    ConnectionLost(io::Error),
    #[error("sample gap: expected index {expected}, received {found} ({received} samples so far)")]
    GapDetected { expected: u64, found: u64, received: u64 },
    #[error("model expects {model_len} × {model_ch}, stream windows are {spec_len} × {stream_ch}")]
    ModelShapeMismatch { model_len: usize, model_ch: usize, spec_len: usize, stream_ch: usize },
    #[error("unknown frame tag 0x{0:02x}")]
    BadFrame(u8),
    #[error("trigger label {0} not in {{0,1,2}}")]
    BadLabel(u8),
    #[error("trigger index {index} not after previous trigger {previous}")]
    UnsortedTrigger { index: u64, previous: u64 },
    #[error("recording has {0} channels, the stream carries {N_CHANNELS}")]
    ChannelCount(usize),
    #[error("index {0} exceeds the 32-bit frame field")]
    IndexOverflow(u64),
    #[error("invalid window spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("I/O: {0}")]
    Io(#[from] io::Error),
}

fn lost(e: io::Error) -> StreamError {
    StreamError::ConnectionLost(e)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Frame {
    Sample { index: u32, values: Vec<f32> },
    Trigger { index: u32, label: u8 },
    End,
}

pub fn write_frame(w: &mut impl Write, frame: &Frame) -> io::Result<()> {
    match frame {
        Frame::Sample { index, values } => {
            let mut buf = Vec::with_capacity(5 + 4 * values.len());
            buf.push(TAG_SAMPLE);
            buf.extend_from_slice(&index.to_le_bytes());
            for v in values {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)
        }
        Frame::Trigger { index, label } => {
            let mut buf = [0u8; 6];
            buf[0] = TAG_TRIGGER;
            buf[1..5].copy_from_slice(&index.to_le_bytes());
            buf[5] = *label;
            w.write_all(&buf)
        }
        Frame::End => w.write_all(&[TAG_END]),
    }
}

/// Reads one frame carrying `n_ch` values per sample. A clean EOF before
/// any tag byte yields `Ok(None)`.
pub fn read_frame(r: &mut impl Read, n_ch: usize) -> Result<Option<Frame>, StreamError> {
    let mut tag = [0u8; 1];
    match r.read(&mut tag) {
        Ok(0) => return Ok(None),
        Ok(_) => {}
        Err(e) if e.kind() == io::ErrorKind::Interrupted => return read_frame(r, n_ch),
        Err(e) => return Err(lost(e)),
    }
    let mut idx = [0u8; 4];
    match tag[0] {
        TAG_SAMPLE => {
            r.read_exact(&mut idx).map_err(lost)?;
            let mut raw = vec![0u8; 4 * n_ch];
            r.read_exact(&mut raw).map_err(lost)?;
            let values = raw.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
            Ok(Some(Frame::Sample { index: u32::from_le_bytes(idx), values }))
        }
        TAG_TRIGGER => {
            r.read_exact(&mut idx).map_err(lost)?;
            let mut label = [0u8; 1];
            r.read_exact(&mut label).map_err(lost)?;
            Ok(Some(Frame::Trigger { index: u32::from_le_bytes(idx), label: label[0] }))
        }
        TAG_END => Ok(Some(Frame::End)),
        other => Err(StreamError::BadFrame(other)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pacing {
    RealTime,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ServeStats {
    pub samples: u64,
    pub triggers: u64,
}

/// Writes the recording and its triggers as frames, then an End frame.
pub fn serve<W: Write>(rec: &Recording, triggers: &[TriggerEvent], out: W, pacing: Pacing) -> Result<ServeStats, StreamError> {
    if rec.n_channels() != N_CHANNELS {
        return Err(StreamError::ChannelCount(rec.n_channels()));
    }
    let n = rec.n_samples();
    if n > u32::MAX as usize + 1 {
        return Err(StreamError::IndexOverflow(n as u64 - 1));
    }
    if let Some(t) = triggers.iter().find(|t| t.sample_index > u64::from(u32::MAX)) {
        return Err(StreamError::IndexOverflow(t.sample_index));
    }
    let mut w = BufWriter::new(out);
    let fs = f64::from(rec.sample_rate());
    let start = Instant::now();
    let mut stats = ServeStats::default();
    let mut next_trigger = 0;
    let mut values = vec![0f32; N_CHANNELS];
    for t in 0..n {
        while next_trigger < triggers.len() && triggers[next_trigger].sample_index as usize <= t {
            let tr = triggers[next_trigger];
            write_frame(&mut w, &Frame::Trigger { index: tr.sample_index as u32, label: tr.label as u8 }).map_err(lost)?;
            stats.triggers += 1;
            next_trigger += 1;
        }
        for (c, v) in values.iter_mut().enumerate() {
            *v = rec.get(c, t) as f32;
        }
        write_frame(&mut w, &Frame::Sample { index: t as u32, values: values.clone() }).map_err(lost)?;
        stats.samples += 1;
        if pacing == Pacing::RealTime && (t + 1) % PACE_BLOCK == 0 {
            w.flush().map_err(lost)?;
            let due = start + Duration::from_secs_f64((t + 1) as f64 / fs);
            if let Some(wait) = due.checked_duration_since(Instant::now()) {
                thread::sleep(wait);
            }
        }
    }
    // triggers at or past the end still reach the client
    for tr in &triggers[next_trigger..] {
        write_frame(&mut w, &Frame::Trigger { index: tr.sample_index as u32, label: tr.label as u8 }).map_err(lost)?;
        stats.triggers += 1;
    }
    write_frame(&mut w, &Frame::End).map_err(lost)?;
    w.flush().map_err(lost)?;
    if pacing == Pacing::RealTime {
        let due = start + Duration::from_secs_f64(n as f64 / fs);
        if let Some(wait) = due.checked_duration_since(Instant::now()) {
            thread::sleep(wait);
        }
    }
    Ok(stats)
}

/// Accepts one client on `listener` and serves it.
pub fn serve_listener(
    listener: &TcpListener,
    rec: &Recording,
    triggers: &[TriggerEvent],
    pacing: Pacing,
) -> Result<ServeStats, StreamError> {
    let (stream, _) = listener.accept()?;
    stream.set_nodelay(true)?;
    serve(rec, triggers, stream, pacing)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionEvent {
    /// Ordinal of the trigger in the stream.
    pub trigger_index: u32,
    pub trigger_sample: u64,
    pub window_index: u8,
    /// Predicted class.
    pub label: Class,
    /// Class announced by the trigger.
    pub actual: Class,
    pub probs: [f64; N_CLASSES],
    pub latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StreamSummary {
    pub events: usize,
    pub samples: u64,
    pub triggers: u64,
    /// Windows that would have ended after the last sample.
    pub truncated: usize,
    pub mean_latency_ms: f64,
    pub p95_latency_ms: f64,
    pub max_latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamReport {
    pub events: Vec<PredictionEvent>,
    pub summary: StreamSummary,
}

pub fn events_csv(events: &[PredictionEvent]) -> String {
    let mut s = String::from("trigger_index,window_index,label,p0,p1,p2,latency_ms\n");
    for e in events {
        s.push_str(&format!(
            "{},{},{},{},{},{},{:.3}\n",
            e.trigger_index, e.window_index, e.label as u8, e.probs[0], e.probs[1], e.probs[2], e.latency_ms
        ));
    }
    s
}

/// A window whose last sample has arrived.
struct ReadyWindow {
    trigger_index: u32,
    trigger_sample: u64,
    window_index: u8,
    label: Class,
    data: Vec<f64>,
    completed: Instant,
}

struct Pending {
    trigger_index: u32,
    trigger_sample: u64,
    window_index: u8,
    label: Class,
    start: u64,
    /// Index of the last sample the window reads.
    last: u64,
}

/// Fixed-capacity sample history.
struct Ring {
    n_ch: usize,
    cap: usize,
    buf: Vec<f64>,
    /// Samples received so far, which is also the next expected index.
    filled: u64,
}

impl Ring {
    fn new(n_ch: usize, cap: usize) -> Self {
        Self { n_ch, cap, buf: vec![0.0; n_ch * cap], filled: 0 }
    }

    fn push(&mut self, values: &[f32]) {
        let slot = (self.filled % self.cap as u64) as usize * self.n_ch;
        for (d, v) in self.buf[slot..slot + self.n_ch].iter_mut().zip(values) {
            *d = f64::from(*v);
        }
        self.filled += 1;
    }

    /// Whether `index` has arrived and not yet been overwritten.
    fn holds(&self, index: u64) -> bool {
        index < self.filled && index + self.cap as u64 >= self.filled
    }

    /// Decimated time-major window, the offline epoch layout.
    fn window(&self, start: u64, spec: &WindowSpec) -> Vec<f64> {
        let mut out = Vec::with_capacity(spec.out_len * self.n_ch);
        for step in 0..spec.out_len as u64 {
            let slot = ((start + step * spec.decimation as u64) % self.cap as u64) as usize * self.n_ch;
            out.extend_from_slice(&self.buf[slot..slot + self.n_ch]);
        }
        out
    }
}

#[derive(Default)]
struct Counts {
    samples: u64,
    triggers: u64,
    truncated: usize,
}

struct Ingest<'a> {
    spec: &'a WindowSpec,
    ring: Ring,
    pending: VecDeque<Pending>,
    counts: Counts,
    last_trigger: Option<u64>,
    tx: mpsc::SyncSender<ReadyWindow>,
}

impl Ingest<'_> {
    fn on_sample(&mut self, index: u64, values: &[f32]) -> Result<(), StreamError> {
        if index != self.ring.filled {
            return Err(StreamError::GapDetected { expected: self.ring.filled, found: index, received: self.counts.samples });
        }
        self.ring.push(values);
        self.counts.samples += 1;
        self.flush_ready()
    }

    fn on_trigger(&mut self, index: u64, label: u8) -> Result<(), StreamError> {
        let label = Class::from_u8(label).ok_or(StreamError::BadLabel(label))?;
        if let Some(previous) = self.last_trigger {
            if index <= previous {
                return Err(StreamError::UnsortedTrigger { index, previous });
            }
        }
        self.last_trigger = Some(index);
        let ordinal = self.counts.triggers as u32;
        self.counts.triggers += 1;
        for (wi, &(start, _)) in self.spec.offsets.iter().enumerate() {
            let start = index + start as u64;
            let last = start + ((self.spec.out_len - 1) * self.spec.decimation) as u64;
            self.pending.push_back(Pending {
                trigger_index: ordinal,
                trigger_sample: index,
                window_index: wi as u8,
                label,
                start,
                last,
            });
        }
        self.flush_ready()
    }

    /// Hands every window whose last sample is in to the classifier, in
    /// trigger then window order.
    fn flush_ready(&mut self) -> Result<(), StreamError> {
        let now = Instant::now();
        while let Some(pos) = self.pending.iter().position(|p| p.last < self.ring.filled) {
            let p = self.pending.remove(pos).expect("position is in range");
            if !self.ring.holds(p.start) {
                // trigger announced after its window left the buffer
                self.counts.truncated += 1;
                continue;
            }
            let ready = ReadyWindow {
                trigger_index: p.trigger_index,
                trigger_sample: p.trigger_sample,
                window_index: p.window_index,
                label: p.label,
                data: self.ring.window(p.start, self.spec),
                completed: now,
            };
            // blocks when the classifier lags; samples are never dropped
            self.tx
                .send(ready)
                .map_err(|_| StreamError::ConnectionLost(io::Error::other("classifier thread stopped")))?;
        }
        Ok(())
    }
}

fn check_shapes(model: &Model, spec: &WindowSpec) -> Result<(), StreamError> {
    spec.validate().map_err(|e| StreamError::Spec(e.to_string()))?;
    if model.arch.input_len != spec.out_len || model.arch.in_channels != N_CHANNELS {
        return Err(StreamError::ModelShapeMismatch {
            model_len: model.arch.input_len,
            model_ch: model.arch.in_channels,
            spec_len: spec.out_len,
            stream_ch: N_CHANNELS,
        });
    }
    Ok(())
}

/// Receives frames from `input` until End (or EOF), classifying every
/// completed window on a second thread. `on_event` sees events in order as
/// they are produced.
pub fn classify_stream<R: Read + Send>(
    input: R,
    model: &Model,
    spec: &WindowSpec,
    mut on_event: impl FnMut(&PredictionEvent) + Send,
) -> Result<StreamReport, StreamError> {
    check_shapes(model, spec)?;
    let (tx, rx) = mpsc::sync_channel::<ReadyWindow>(QUEUE_DEPTH);
    let cap = (spec.max_end() + 1).next_power_of_two();

    thread::scope(|scope| {
        let classifier = scope.spawn(move || -> Result<Vec<PredictionEvent>, StreamError> {
            let mut events = Vec::new();
            for mut w in rx {
                normalize_values(&mut w.data);
                let (label, probs) = model.predict(&w.data)?;
                let latency_ms = w.completed.elapsed().as_secs_f64() * 1e3;
                let event = PredictionEvent {
                    trigger_index: w.trigger_index,
                    trigger_sample: w.trigger_sample,
                    window_index: w.window_index,
                    label,
                    actual: w.label,
                    probs,
                    latency_ms,
                };
                on_event(&event);
                events.push(event);
            }
            Ok(events)
        });

        let mut ingest =
            Ingest { spec, ring: Ring::new(N_CHANNELS, cap), pending: VecDeque::new(), counts: Counts::default(), last_trigger: None, tx };
        let mut reader = BufReader::new(input);
        let received: Result<(), StreamError> = (|| {
            while let Some(frame) = read_frame(&mut reader, N_CHANNELS)? {
                match frame {
                    Frame::Sample { index, values } => ingest.on_sample(u64::from(index), &values)?,
                    Frame::Trigger { index, label } => ingest.on_trigger(u64::from(index), label)?,
                    Frame::End => return Ok(()),
                }
            }
            Err(StreamError::ConnectionLost(io::Error::new(io::ErrorKind::UnexpectedEof, "stream closed before End frame")))
        })();
        ingest.counts.truncated += ingest.pending.len();
        let Ingest { counts, tx, .. } = ingest;
        drop(tx);
        let events = classifier.join().expect("classifier thread panicked");
        received?;
        let events = events?;
        let summary = summarize(&events, counts);
        Ok(StreamReport { events, summary })
    })
}

fn summarize(events: &[PredictionEvent], counts: Counts) -> StreamSummary {
    let mut lat: Vec<f64> = events.iter().map(|e| e.latency_ms).collect();
    lat.sort_by(f64::total_cmp);
    let (mean, p95, max) = if lat.is_empty() {
        (0.0, 0.0, 0.0)
    } else {
        (lat.iter().sum::<f64>() / lat.len() as f64, percentile_sorted(&lat, 95.0), lat[lat.len() - 1])
    };
    StreamSummary {
        events: events.len(),
        samples: counts.samples,
        triggers: counts.triggers,
        truncated: counts.truncated,
        mean_latency_ms: mean,
        p95_latency_ms: p95,
        max_latency_ms: max,
    }
}

/// Connects to a serving endpoint, retrying until `wait` elapses.
pub fn connect(addr: impl ToSocketAddrs + Copy, wait: Duration) -> Result<TcpStream, StreamError> {
    let deadline = Instant::now() + wait;
    loop {
        match TcpStream::connect(addr) {
            Ok(s) => {
                s.set_nodelay(true)?;
                return Ok(s);
            }
            Err(e) if Instant::now() < deadline => {
                let _ = e;
                thread::sleep(Duration::from_millis(50));
            }
            Err(e) => return Err(lost(e)),
        }
    }
}

/// Offline reference: the same windows classified straight from the recording.
pub fn offline_predictions(
    rec: &Recording,
    triggers: &[TriggerEvent],
    model: &Model,
    spec: &WindowSpec,
) -> Result<Vec<PredictionEvent>, StreamError> {
    check_shapes(model, spec)?;
    let mut out = Vec::new();
    for (ti, tr) in triggers.iter().enumerate() {
        for (wi, &(start, _)) in spec.offsets.iter().enumerate() {
            let s = tr.sample_index as usize + start;
            if s + (spec.out_len - 1) * spec.decimation >= rec.n_samples() {
                continue;
            }
            let mut data = crate::epoching::cut_window(rec, s, spec);
            normalize_values(&mut data);
            let (label, probs) = model.predict(&data)?;
            out.push(PredictionEvent {
                trigger_index: ti as u32,
                trigger_sample: tr.sample_index,
                window_index: wi as u8,
                label,
                actual: tr.label,
                probs,
                latency_ms: 0.0,
            });
        }
    }
    Ok(out)
}
