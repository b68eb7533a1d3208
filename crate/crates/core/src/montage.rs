//! 64-electrode 10–20 (10–10 extended) montage with 2-D head projections.
//!
//! Positions are derived on a unit sphere: the Fpz–T7–Oz–T8 ring sits 72°
//! from Cz and maps onto the unit circle under an azimuthal equidistant
//! projection. Row-interior electrodes are spaced along the great-circle arc
//! from the row's midline electrode to its ring electrode.

/// Channel order used by the synthetic recordings and the classifier.
pub const STANDARD_64: [&str; 64] = [
    "Fp1", "Fpz", "Fp2", "AF7", "AF5", "AF3", "AF4", "AF6", "AF8", "F7", "F5", "F3", "F1", "Fz",
    "F2", "F4", "F6", "F8", "FT7", "FC5", "FC3", "FC1", "FCz", "FC2", "FC4", "FC6", "FT8", "T7",
    "C5", "C3", "C1", "Cz", "C2", "C4", "C6", "T8", "TP7", "CP5", "CP3", "CP1", "CPz", "CP2",
    "CP4", "CP6", "TP8", "P7", "P5", "P3", "P1", "Pz", "P2", "P4", "P6", "P8", "PO7", "PO5", "PO3",
    "POz", "PO4", "PO6", "PO8", "O1", "Oz", "O2",
];

const RING_POLAR_DEG: f64 = 72.0;

/// (row prefix, signed polar angle of the midline electrode, azimuth of the row's ring electrode).
/// Positive polar = anterior.
const ROWS: [(&str, f64, f64); 7] = [
    ("AF", 54.0, 36.0),
    ("F", 36.0, 54.0),
    ("FC", 18.0, 72.0),
    ("C", 0.0, 90.0),
    ("CP", -18.0, 108.0),
    ("P", -36.0, 126.0),
    ("PO", -54.0, 144.0),
];

fn unit(polar_deg: f64, az_deg: f64) -> [f64; 3] {
    let (p, a) = (polar_deg.to_radians(), az_deg.to_radians());
    [p.sin() * a.sin(), p.sin() * a.cos(), p.cos()]
}

fn slerp(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    let dot = (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]).clamp(-1.0, 1.0);
    let omega = dot.acos();
    if omega < 1e-12 {
        return a;
    }
    let (wa, wb) = (((1.0 - t) * omega).sin() / omega.sin(), (t * omega).sin() / omega.sin());
    [wa * a[0] + wb * b[0], wa * a[1] + wb * b[1], wa * a[2] + wb * b[2]]
}

fn project(v: [f64; 3]) -> (f64, f64) {
    let polar = v[2].clamp(-1.0, 1.0).acos().to_degrees();
    let az = v[0].atan2(v[1]);
    let r = polar / RING_POLAR_DEG;
    (r * az.sin(), r * az.cos())
}

/// Head-projected (x, y) for a 10–20 label; x < 0 is the left hemisphere, y > 0 anterior.
/// Returns `None` for labels outside the supported set.
pub fn position(name: &str) -> Option<(f64, f64)> {
    let lower = name.to_ascii_lowercase();
    match lower.as_str() {
        "fpz" => return Some(project(unit(RING_POLAR_DEG, 0.0))),
        "fp1" => return Some(project(unit(RING_POLAR_DEG, -18.0))),
        "fp2" => return Some(project(unit(RING_POLAR_DEG, 18.0))),
        "oz" => return Some(project(unit(RING_POLAR_DEG, 180.0))),
        "o1" => return Some(project(unit(RING_POLAR_DEG, -162.0))),
        "o2" => return Some(project(unit(RING_POLAR_DEG, 162.0))),
        _ => {}
    }
    // FT/T/TP ring electrodes belong to the FC/C/CP rows at column 7/8.
    let (row, col) = match lower.as_str() {
        "ft7" => ("fc", "7"),
        "ft8" => ("fc", "8"),
        "t7" => ("c", "7"),
        "t8" => ("c", "8"),
        "tp7" => ("cp", "7"),
        "tp8" => ("cp", "8"),
        s => {
            let split = s.find(|c: char| c.is_ascii_digit() || c == 'z')?;
            (&s[..split], &s[split..])
        }
    };
    let &(_, mid_polar, ring_az) = ROWS.iter().find(|(p, _, _)| p.eq_ignore_ascii_case(row))?;
    let midline = if mid_polar >= 0.0 {
        unit(mid_polar, 0.0)
    } else {
        unit(-mid_polar, 180.0)
    };
    if col == "z" {
        return Some(project(midline));
    }
    let n: u32 = col.parse().ok()?;
    if n == 0 || n > 8 {
        return None;
    }
    let left = n % 2 == 1;
    let step = f64::from(n.div_ceil(2));
    let ring = unit(RING_POLAR_DEG, if left { -ring_az } else { ring_az });
    let p = project(slerp(midline, ring, step / 4.0));
    // Fewer electrodes are defined on the AF and PO rows; accept only 3/4, 5/6 and 7/8 there.
    if (row == "af" || row == "po") && n <= 2 {
        return None;
    }
    Some(p)
}

/// Whether the label is one of the supported 10–20 positions.
pub fn is_known(name: &str) -> bool {
    position(name).is_some()
}

/// Left/right mirror of a label (odd ↔ even digit, midline unchanged).
pub fn mirror(name: &str) -> Option<String> {
    position(name)?;
    let digits_at = name.find(|c: char| c.is_ascii_digit());
    match digits_at {
        None => Some(name.to_string()),
        Some(i) => {
            let n: u32 = name[i..].parse().ok()?;
            let m = if n % 2 == 1 { n + 1 } else { n - 1 };
            Some(format!("{}{}", &name[..i], m))
        }
    }
}

/// Index of a channel label in a name list, ignoring ASCII case.
pub fn index_of(channels: &[String], name: &str) -> Option<usize> {
    channels.iter().position(|c| c.eq_ignore_ascii_case(name))
}

pub fn standard_names() -> Vec<String> {
    STANDARD_64.iter().map(|s| s.to_string()).collect()
}
