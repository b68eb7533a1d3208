//! Trigger-locked visualization epochs, evoked averages and scalp maps.

use crate::montage;
use crate::signal_model::{Class, Recording, TriggerEvent};

use super::DspError;

/// One epoch, channel-major (`c * len + t`), trigger at sample `prestim`.
#[derive(Debug, Clone, PartialEq)]
pub struct VizEpoch {
    pub label: Class,
    pub trigger_index: u64,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VizEpochSet {
    pub channels: Vec<String>,
    pub fs: u32,
    pub prestim: usize,
    pub len: usize,
    pub epochs: Vec<VizEpoch>,
}

impl VizEpochSet {
    pub fn channel<'a>(&self, e: &'a VizEpoch, c: usize) -> &'a [f64] {
        &e.data[c * self.len..(c + 1) * self.len]
    }

    pub fn time_s(&self, t: usize) -> f64 {
        (t as f64 - self.prestim as f64) / f64::from(self.fs)
    }
}

fn samples(ms: f64, fs: u32) -> usize {
    (ms / 1000.0 * f64::from(fs)).floor() as usize
}

/// Cuts `[trigger − pre_ms, trigger + post_s)` around each trigger. Triggers
/// whose span leaves the recording are skipped.
pub fn extract_viz_epochs(
    rec: &Recording,
    triggers: &[TriggerEvent],
    pre_ms: f64,
    post_s: f64,
) -> Result<VizEpochSet, DspError> {
    if !(pre_ms >= 0.0 && post_s > 0.0) {
        return Err(DspError::InvalidParameter(format!("epoch span -{pre_ms} ms..{post_s} s")));
    }
    let fs = rec.sample_rate();
    let prestim = samples(pre_ms, fs);
    let len = prestim + samples(post_s * 1000.0, fs);
    let n = rec.n_samples();
    let mut epochs = Vec::new();
    for tr in triggers {
        let t0 = tr.sample_index as usize;
        if t0 < prestim || t0 - prestim + len > n {
            continue;
        }
        let start = t0 - prestim;
        let mut data = Vec::with_capacity(rec.n_channels() * len);
        for c in 0..rec.n_channels() {
            data.extend_from_slice(&rec.channel(c)[start..start + len]);
        }
        epochs.push(VizEpoch { label: tr.label, trigger_index: tr.sample_index, data });
    }
    Ok(VizEpochSet { channels: rec.channels().to_vec(), fs, prestim, len, epochs })
}

/// Subtracts, per epoch and channel, the mean of the `pre_ms` before the trigger.
pub fn baseline_correct(set: &VizEpochSet, pre_ms: f64) -> Result<VizEpochSet, DspError> {
    let needed = samples(pre_ms, set.fs);
    if needed == 0 || set.prestim < needed {
        return Err(DspError::MissingPrestim { needed: needed.max(1), available: set.prestim });
    }
    let mut out = set.clone();
    for e in &mut out.epochs {
        for row in e.data.chunks_mut(set.len) {
            let base = &row[set.prestim - needed..set.prestim];
            let mean = base.iter().sum::<f64>() / needed as f64;
            row.iter_mut().for_each(|v| *v -= mean);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evoked {
    pub channel: String,
    pub times: Vec<f64>,
    /// Per class in straight/left/right order; `None` when not requested.
    pub waves: [Option<Vec<f64>>; 3],
}

/// Pointwise class means of one channel.
pub fn evoked_average(set: &VizEpochSet, channel: &str, classes: &[Class]) -> Result<Evoked, DspError> {
    let c = montage::index_of(&set.channels, channel).ok_or_else(|| DspError::UnknownChannel(channel.to_string()))?;
    let mut waves: [Option<Vec<f64>>; 3] = [None, None, None];
    for &class in classes {
        let mut sum = vec![0.0; set.len];
        let mut n = 0usize;
        for e in set.epochs.iter().filter(|e| e.label == class) {
            for (s, v) in sum.iter_mut().zip(set.channel(e, c)) {
                *s += v;
            }
            n += 1;
        }
        if n == 0 {
            return Err(DspError::EmptyClass(class));
        }
        sum.iter_mut().for_each(|s| *s /= n as f64);
        waves[class.index()] = Some(sum);
    }
    let times = (0..set.len).map(|t| set.time_s(t)).collect();
    Ok(Evoked { channel: set.channels[c].clone(), times, waves })
}

pub fn evoked_csv(ev: &Evoked) -> String {
    let mut s = String::from("time_s,straight,left,right\n");
    for (t, time) in ev.times.iter().enumerate() {
        s.push_str(&format!("{time:.6}"));
        for w in &ev.waves {
            match w {
                Some(w) => s.push_str(&format!(",{}", w[t])),
                None => s.push(','),
            }
        }
        s.push('\n');
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopoMap {
    pub class: Class,
    pub channels: Vec<String>,
    pub coords: Vec<(f64, f64)>,
    pub values: Vec<f64>,
}

impl TopoMap {
    /// Channel with the largest absolute value.
    pub fn peak_channel(&self) -> &str {
        let i = (0..self.values.len())
            .max_by(|&a, &b| self.values[a].abs().total_cmp(&self.values[b].abs()))
            .unwrap_or(0);
        &self.channels[i]
    }
}

/// Per class present in the set: per-channel mean over `window` seconds after the trigger.
pub fn topo_export(set: &VizEpochSet, window: (f64, f64)) -> Result<Vec<TopoMap>, DspError> {
    let coords: Vec<(f64, f64)> = set
        .channels
        .iter()
        .map(|name| montage::position(name).ok_or_else(|| DspError::MissingCoords(name.clone())))
        .collect::<Result<_, _>>()?;
    let (lo, hi) = window;
    let from = set.prestim + samples(lo.max(0.0) * 1000.0, set.fs);
    let to = (set.prestim + samples(hi * 1000.0, set.fs)).min(set.len);
    if from >= to {
        return Err(DspError::InvalidParameter(format!("topography window {lo}-{hi} s is empty")));
    }
    let mut maps = Vec::new();
    for class in Class::ALL {
        let members: Vec<&VizEpoch> = set.epochs.iter().filter(|e| e.label == class).collect();
        if members.is_empty() {
            continue;
        }
        let values = (0..set.channels.len())
            .map(|c| {
                let total: f64 = members.iter().map(|e| set.channel(e, c)[from..to].iter().sum::<f64>()).sum();
                total / (members.len() * (to - from)) as f64
            })
            .collect();
        maps.push(TopoMap { class, channels: set.channels.clone(), coords: coords.clone(), values });
    }
    Ok(maps)
}

pub fn topo_csv(map: &TopoMap) -> String {
    let mut s = String::from("channel,x,y,value\n");
    for ((name, (x, y)), v) in map.channels.iter().zip(&map.coords).zip(&map.values) {
        s.push_str(&format!("{name},{x:.6},{y:.6},{v}\n"));
    }
    s
}

const GRID: usize = 64;
const IDW_NEIGHBORS: usize = 12;

/// Inverse-distance-squared interpolation from the nearest electrodes.
fn idw(map: &TopoMap, x: f64, y: f64) -> f64 {
    let mut d: Vec<(f64, f64)> =
        map.coords.iter().zip(&map.values).map(|((cx, cy), v)| ((cx - x).powi(2) + (cy - y).powi(2), *v)).collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (mut num, mut den) = (0.0, 0.0);
    for &(d2, v) in d.iter().take(IDW_NEIGHBORS) {
        if d2 < 1e-18 {
            return v;
        }
        num += v / d2;
        den += 1.0 / d2;
    }
    num / den
}

/// Interpolated values on the 64 × 64 grid over `[-1, 1]²`, `None` outside the head.
pub fn topo_grid(map: &TopoMap) -> Vec<Option<f64>> {
    let mut out = Vec::with_capacity(GRID * GRID);
    for row in 0..GRID {
        for col in 0..GRID {
            let x = -1.0 + (col as f64 + 0.5) * 2.0 / GRID as f64;
            let y = 1.0 - (row as f64 + 0.5) * 2.0 / GRID as f64;
            out.push((x * x + y * y <= 1.0).then(|| idw(map, x, y)));
        }
    }
    out
}

/// Diverging blue-white-red colour for `v` in `[-1, 1]`.
fn colour(v: f64) -> String {
    let v = v.clamp(-1.0, 1.0);
    let (r, g, b) = if v >= 0.0 {
        (255.0, 255.0 * (1.0 - v), 255.0 * (1.0 - v))
    } else {
        (255.0 * (1.0 + v), 255.0 * (1.0 + v), 255.0)
    };
    format!("#{:02x}{:02x}{:02x}", r as u8, g as u8, b as u8)
}

pub fn topo_svg(map: &TopoMap) -> String {
    let px = 5.0;
    let size = GRID as f64 * px;
    let grid = topo_grid(map);
    let scale = map.values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"4\" y=\"14\" font-family=\"sans-serif\" font-size=\"12\">{}</text>\n",
        map.class.name(),
        w = size,
        h = size + 20.0
    );
    for (i, v) in grid.iter().enumerate() {
        if let Some(v) = v {
            let (row, col) = (i / GRID, i % GRID);
            s.push_str(&format!(
                "<rect x=\"{}\" y=\"{}\" width=\"{px}\" height=\"{px}\" fill=\"{}\"/>\n",
                col as f64 * px,
                20.0 + row as f64 * px,
                colour(v / scale)
            ));
        }
    }
    let half = size / 2.0;
    s.push_str(&format!(
        "<circle cx=\"{half}\" cy=\"{}\" r=\"{half}\" fill=\"none\" stroke=\"black\"/>\n",
        20.0 + half
    ));
    for (name, (x, y)) in map.channels.iter().zip(&map.coords) {
        s.push_str(&format!(
            "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"1.5\" fill=\"black\"><title>{name}</title></circle>\n",
            half + x * half,
            20.0 + half - y * half
        ));
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn set(rows: usize, epochs: Vec<(Class, Vec<f64>)>, len: usize, prestim: usize) -> VizEpochSet {
        VizEpochSet {
            channels: montage::STANDARD_64[..rows].iter().map(|s| s.to_string()).collect(),
            fs: 512,
            prestim,
            len,
            epochs: epochs
                .into_iter()
                .enumerate()
                .map(|(i, (label, data))| VizEpoch { label, trigger_index: i as u64 * 1000, data })
                .collect(),
        }
    }

    #[test]
    fn extraction_geometry() {
        let names = montage::standard_names()[..2].to_vec();
        let rows = vec![(0..5000).map(f64::from).collect(), vec![0.0; 5000]];
        let rec = Recording::from_rows(names, 512, rows).unwrap();
        let trig = [
            TriggerEvent::new(50, Class::Left),
            TriggerEvent::new(1000, Class::Right),
            TriggerEvent::new(4000, Class::Straight),
        ];
        let s = extract_viz_epochs(&rec, &trig, 200.0, 3.0).unwrap();
        assert_eq!(s.prestim, 102);
        assert_eq!(s.len, 102 + 1536);
        assert_eq!(s.epochs.len(), 1);
        assert_eq!(s.channel(&s.epochs[0], 0)[102], 1000.0);
        assert!((s.time_s(0) + 102.0 / 512.0).abs() < 1e-12);
    }

    #[test]
    fn baseline_examples() {
        let s = set(1, vec![(Class::Left, vec![7.0; 300])], 300, 102);
        assert!(baseline_correct(&s, 200.0).unwrap().epochs[0].data.iter().all(|&v| v == 0.0));

        let step: Vec<f64> = (0..300).map(|t| if t < 102 { 0.0 } else { 1.0 }).collect();
        let s = set(1, vec![(Class::Left, step.clone())], 300, 102);
        assert_eq!(baseline_correct(&s, 200.0).unwrap().epochs[0].data, step);

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let noise: Vec<f64> = (0..600).map(|_| rng.random_range(-50.0..50.0)).collect();
        let s = set(2, vec![(Class::Right, noise)], 300, 102);
        let once = baseline_correct(&s, 200.0).unwrap();
        for c in 0..2 {
            let pre = &once.channel(&once.epochs[0], c)[..102];
            assert!((pre.iter().sum::<f64>() / 102.0).abs() < 1e-12);
        }
        let twice = baseline_correct(&once, 200.0).unwrap();
        for (a, b) in once.epochs[0].data.iter().zip(&twice.epochs[0].data) {
            assert!((a - b).abs() < 1e-12);
        }

        let short = set(1, vec![(Class::Left, vec![1.0; 300])], 300, 50);
        assert!(matches!(baseline_correct(&short, 200.0), Err(DspError::MissingPrestim { needed: 102, available: 50 })));
    }

    #[test]
    fn evoked_examples() {
        let x: Vec<f64> = (0..20).map(|t| (t as f64 * 0.3).sin()).collect();
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        let s = set(1, vec![(Class::Left, x.clone()), (Class::Right, x.clone()), (Class::Right, neg)], 20, 5);
        let ev = evoked_average(&s, "fp1", &[Class::Left, Class::Right]).unwrap();
        assert_eq!(ev.waves[1].as_ref().unwrap(), &x);
        assert!(ev.waves[2].as_ref().unwrap().iter().all(|v| v.abs() < 1e-15));
        assert!(ev.waves[0].is_none());
        assert!(matches!(evoked_average(&s, "Fp1", &[Class::Straight]), Err(DspError::EmptyClass(Class::Straight))));
        assert!(matches!(evoked_average(&s, "Cz", &[Class::Left]), Err(DspError::UnknownChannel(_))));
        let csv = evoked_csv(&ev);
        assert_eq!(csv.lines().next(), Some("time_s,straight,left,right"));
        assert_eq!(csv.lines().count(), 21);
    }

    #[test]
    fn uniform_topography_is_flat() {
        let s = set(64, vec![(Class::Left, vec![2.5; 64 * 40])], 40, 10);
        let maps = topo_export(&s, (0.0, 3.0)).unwrap();
        assert_eq!(maps.len(), 1);
        assert!(maps[0].values.iter().all(|&v| v == 2.5));
        assert_eq!(topo_csv(&maps[0]).lines().count(), 65);
        assert!(topo_grid(&maps[0]).iter().flatten().all(|&v| (v - 2.5).abs() < 1e-12));
        assert!(topo_svg(&maps[0]).contains("</svg>"));
    }

    #[test]
    fn unknown_coordinates() {
        let mut s = set(2, vec![(Class::Left, vec![0.0; 20])], 10, 2);
        s.channels[1] = "X9".into();
        assert!(matches!(topo_export(&s, (0.0, 3.0)), Err(DspError::MissingCoords(_))));
    }
}
