//! Dataset schema, resampling, windowing, normalization and contact encoding.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Core features per frame: q, q̇, a, ω, p_f, v_f.
pub const N_FEATURES: usize = 54;
pub const N_JOINTS: usize = 12;
/// Legs covered by the fixed frame schema.
pub const SCHEMA_LEGS: usize = 4;
/// timestamp + features + torques + contact code.
pub const CSV_COLUMNS: usize = 1 + N_FEATURES + N_JOINTS + 1;
pub const BINARY_MAGIC: &[u8; 4] = b"PCDS";
pub const BINARY_VERSION: u16 = 1;
/// Channels with a smaller time-axis standard deviation are zero-filled.
pub const SIGMA_FLOOR: f64 = 1e-8;

const LEG_NAMES: [&str; SCHEMA_LEGS] = ["RF", "LF", "RH", "LH"];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("contact code {code} out of range for {legs} legs")]
    OutOfRange { code: u32, legs: usize },
    #[error("empty stream")]
    EmptyStream,
    #[error("timestamps not strictly increasing at frame {index}")]
    NonMonotoneTimestamps { index: usize },
    #[error("window of {w} rows needs end index >= {}, got {end}", .w - 1)]
    InsufficientHistory { end: usize, w: usize },
    #[error("window size must be at least 2, got {0}")]
    WindowTooSmall(usize),
    #[error("schema mismatch at {location}: {message}")]
    SchemaMismatch { location: String, message: String },
    #[error("checksum failure: {0}")]
    ChecksumFailure(String),
    #[error("need at least 10 windows to split, got {0}")]
    TooFewWindows(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Per-leg contact booleans with the decimal code `S = Σ c_l 2^(L-1-l)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ContactState {
    pub legs: Vec<bool>,
}

impl ContactState {
    pub fn new(legs: Vec<bool>) -> Self {
        Self { legs }
    }

    pub fn none(n_legs: usize) -> Self {
        Self { legs: vec![false; n_legs] }
    }

    pub fn n_legs(&self) -> usize {
        self.legs.len()
    }

    pub fn code(&self) -> u32 {
        encode_contact(&self.legs)
    }

    pub fn from_code(code: u32, n_legs: usize) -> Result<Self, DataError> {
        decode_contact(code, n_legs)
    }
}

pub fn encode_contact(c: &[bool]) -> u32 {
    c.iter().fold(0u32, |acc, &b| (acc << 1) | b as u32)
}

pub fn decode_contact(code: u32, n_legs: usize) -> Result<ContactState, DataError> {
    if n_legs >= 32 || code >= (1u32 << n_legs) {
        return Err(DataError::OutOfRange { code, legs: n_legs });
    }
    let legs = (0..n_legs).map(|l| (code >> (n_legs - 1 - l)) & 1 == 1).collect();
    Ok(ContactState { legs })
}

/// One synchronized proprioceptive sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorFrame {
    pub timestamp: f64,
    pub q: [f64; N_JOINTS],
    pub qd: [f64; N_JOINTS],
    pub accel: [f64; 3],
    pub gyro: [f64; 3],
    /// Foot positions, hip frame, `[x, y, z]` per leg.
    pub foot_pos: [f64; N_JOINTS],
    pub foot_vel: [f64; N_JOINTS],
    pub torque: Option<[f64; N_JOINTS]>,
    pub gt_contact: Option<ContactState>,
}

impl Default for SensorFrame {
    fn default() -> Self {
        Self {
            timestamp: 0.0,
            q: [0.0; N_JOINTS],
            qd: [0.0; N_JOINTS],
            accel: [0.0; 3],
            gyro: [0.0; 3],
            foot_pos: [0.0; N_JOINTS],
            foot_vel: [0.0; N_JOINTS],
            torque: None,
            gt_contact: None,
        }
    }
}

impl SensorFrame {
    /// The 54-feature vector `z_n` in schema order.
    pub fn features(&self) -> [f64; N_FEATURES] {
        let mut z = [0.0; N_FEATURES];
        z[0..12].copy_from_slice(&self.q);
        z[12..24].copy_from_slice(&self.qd);
        z[24..27].copy_from_slice(&self.accel);
        z[27..30].copy_from_slice(&self.gyro);
        z[30..42].copy_from_slice(&self.foot_pos);
        z[42..54].copy_from_slice(&self.foot_vel);
        z
    }

    pub fn set_features(&mut self, z: &[f64]) {
        assert_eq!(z.len(), N_FEATURES);
        self.q.copy_from_slice(&z[0..12]);
        self.qd.copy_from_slice(&z[12..24]);
        self.accel.copy_from_slice(&z[24..27]);
        self.gyro.copy_from_slice(&z[27..30]);
        self.foot_pos.copy_from_slice(&z[30..42]);
        self.foot_vel.copy_from_slice(&z[42..54]);
    }

    /// Hip-frame foot height of `leg`.
    pub fn foot_height(&self, leg: usize) -> f64 {
        self.foot_pos[3 * leg + 2]
    }

    pub fn joint_angles(&self, leg: usize) -> nalgebra::Vector3<f64> {
        nalgebra::Vector3::new(self.q[3 * leg], self.q[3 * leg + 1], self.q[3 * leg + 2])
    }

    pub fn joint_torques(&self, leg: usize) -> Option<nalgebra::Vector3<f64>> {
        self.torque.map(|t| nalgebra::Vector3::new(t[3 * leg], t[3 * leg + 1], t[3 * leg + 2]))
    }
}

/// Column names of the CSV schema.
pub fn csv_header() -> Vec<String> {
    let mut h = vec!["timestamp".to_string()];
    let joints = |prefix: &str, h: &mut Vec<String>| {
        for leg in LEG_NAMES {
            for j in 1..=3 {
                h.push(format!("{prefix}_{leg}{j}"));
            }
        }
    };
    let axes = |prefix: &str, h: &mut Vec<String>| {
        for leg in LEG_NAMES {
            for a in ["x", "y", "z"] {
                h.push(format!("{prefix}_{leg}{a}"));
            }
        }
    };
    joints("q", &mut h);
    joints("dq", &mut h);
    for a in ["x", "y", "z"] {
        h.push(format!("a_{a}"));
    }
    for a in ["x", "y", "z"] {
        h.push(format!("w_{a}"));
    }
    axes("p", &mut h);
    axes("v", &mut h);
    joints("tau", &mut h);
    h.push("contact".to_string());
    h
}

/// A `w × C` window, rows oldest to newest, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub w: usize,
    pub channels: usize,
    pub data: Vec<f64>,
    pub label: Option<ContactState>,
}

impl Window {
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.channels..(r + 1) * self.channels]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.channels + c]
    }

    /// Channel-major copy `[C][w]`, the layout consumed by the classifier.
    pub fn channel_major(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.data.len()];
        for r in 0..self.w {
            for c in 0..self.channels {
                out[c * self.w + r] = self.data[r * self.channels + c];
            }
        }
        out
    }
}

fn check_monotone(frames: &[SensorFrame]) -> Result<(), DataError> {
    for i in 1..frames.len() {
        if frames[i].timestamp.partial_cmp(&frames[i - 1].timestamp) != Some(std::cmp::Ordering::Greater) {
            return Err(DataError::NonMonotoneTimestamps { index: i });
        }
    }
    Ok(())
}

/// Resamples onto a `target_hz` grid starting at the first timestamp.
///
/// Continuous channels are linearly interpolated, contact labels use
/// zero-order hold, and grid points past the last sample are dropped. Torques
/// are interpolated only where both neighbours carry them. Grid points within
/// 1e-9 s of an input sample copy it verbatim.
pub fn upsample(frames: &[SensorFrame], target_hz: f64) -> Result<Vec<SensorFrame>, DataError> {
    if frames.is_empty() {
        return Err(DataError::EmptyStream);
    }
    check_monotone(frames)?;
    assert!(target_hz > 0.0, "target rate must be positive");
    let snap = 1e-9;
    let t0 = frames[0].timestamp;
    let t_end = frames[frames.len() - 1].timestamp;
    let mut out = Vec::new();
    let mut seg = 0usize;
    let mut k = 0u64;
    loop {
        let t = t0 + k as f64 / target_hz;
        if t > t_end + snap {
            break;
        }
        while seg + 1 < frames.len() && frames[seg + 1].timestamp <= t + snap {
            seg += 1;
        }
        let a = &frames[seg];
        if (t - a.timestamp).abs() <= snap || seg + 1 == frames.len() {
            out.push(a.clone());
        } else {
            let b = &frames[seg + 1];
            let s = (t - a.timestamp) / (b.timestamp - a.timestamp);
            let lerp = |x: f64, y: f64| x + s * (y - x);
            let za = a.features();
            let zb = b.features();
            let mut z = [0.0; N_FEATURES];
            for i in 0..N_FEATURES {
                z[i] = lerp(za[i], zb[i]);
            }
            let mut f = SensorFrame { timestamp: t, ..Default::default() };
            f.set_features(&z);
            f.torque = match (a.torque, b.torque) {
                (Some(ta), Some(tb)) => Some(std::array::from_fn(|i| lerp(ta[i], tb[i]))),
                _ => None,
            };
            f.gt_contact = a.gt_contact.clone();
            out.push(f);
        }
        k += 1;
    }
    Ok(out)
}

/// Window of rows `end+1-w ..= end`, labelled from frame `end`.
pub fn make_window(frames: &[SensorFrame], end: usize, w: usize) -> Result<Window, DataError> {
    if w < 2 {
        return Err(DataError::WindowTooSmall(w));
    }
    if end + 1 < w || end >= frames.len() {
        return Err(DataError::InsufficientHistory { end, w });
    }
    let mut data = Vec::with_capacity(w * N_FEATURES);
    for f in &frames[end + 1 - w..=end] {
        data.extend_from_slice(&f.features());
    }
    Ok(Window { w, channels: N_FEATURES, data, label: frames[end].gt_contact.clone() })
}

/// Per-channel z-score over the time axis.
pub fn normalize_window(window: &Window) -> Window {
    let mut out = window.clone();
    normalize_rows_in_place(&mut out.data, window.w, window.channels);
    out
}

/// Normalizes a row-major `w × channels` buffer in place.
pub fn normalize_rows_in_place(data: &mut [f64], w: usize, channels: usize) {
    for c in 0..channels {
        let mean = (0..w).map(|r| data[r * channels + c]).sum::<f64>() / w as f64;
        let var = (0..w).map(|r| (data[r * channels + c] - mean).powi(2)).sum::<f64>() / w as f64;
        let sd = var.sqrt();
        for r in 0..w {
            let x = &mut data[r * channels + c];
            *x = if sd < SIGMA_FLOOR { 0.0 } else { (*x - mean) / sd };
        }
    }
}

/// Normalizes a channel-major `channels × w` buffer in place.
pub fn normalize_channels_in_place(data: &mut [f64], channels: usize, w: usize) {
    for row in data.chunks_exact_mut(w).take(channels) {
        let mean = row.iter().sum::<f64>() / w as f64;
        let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / w as f64;
        let sd = var.sqrt();
        for x in row.iter_mut() {
            *x = if sd < SIGMA_FLOOR { 0.0 } else { (*x - mean) / sd };
        }
    }
}

/// Train/validation/test partition.
#[derive(Debug, Clone, PartialEq)]
pub struct Split<T> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub test: Vec<T>,
}

/// 70/15/15 random partition; validation and test each take `floor(0.15 n)`.
pub fn split_dataset<T>(mut items: Vec<T>, seed: u64) -> Result<Split<T>, DataError> {
    let n = items.len();
    if n < 10 {
        return Err(DataError::TooFewWindows(n));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    items.shuffle(&mut rng);
    let n_hold = n * 15 / 100;
    let test = items.split_off(n - n_hold);
    let val = items.split_off(n - 2 * n_hold);
    Ok(Split { train: items, val, test })
}

/// Labelled windows drawn from whole sequences without materializing them.
#[derive(Debug, Clone)]
pub struct WindowedDataset {
    pub w: usize,
    pub n_legs: usize,
    features: Vec<Vec<[f64; N_FEATURES]>>,
    labels: Vec<Vec<Option<u32>>>,
}

/// Addresses one window: `(sequence, end frame)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct WindowRef {
    pub sequence: usize,
    pub end: usize,
}

impl WindowedDataset {
    pub fn new(w: usize, n_legs: usize) -> Result<Self, DataError> {
        if w < 2 {
            return Err(DataError::WindowTooSmall(w));
        }
        Ok(Self { w, n_legs, features: Vec::new(), labels: Vec::new() })
    }

    pub fn push_sequence(&mut self, frames: &[SensorFrame]) -> usize {
        self.features.push(frames.iter().map(|f| f.features()).collect());
        self.labels.push(frames.iter().map(|f| f.gt_contact.as_ref().map(|c| c.code())).collect());
        self.features.len() - 1
    }

    pub fn n_sequences(&self) -> usize {
        self.features.len()
    }

    /// Every window with a complete history and a label.
    pub fn all_refs(&self) -> Vec<WindowRef> {
        let mut refs = Vec::new();
        for (s, labels) in self.labels.iter().enumerate() {
            for end in self.w - 1..labels.len() {
                if labels[end].is_some() {
                    refs.push(WindowRef { sequence: s, end });
                }
            }
        }
        refs
    }

    pub fn sequence_len(&self, sequence: usize) -> usize {
        self.features[sequence].len()
    }

    pub fn label(&self, r: WindowRef) -> Option<u32> {
        self.labels[r.sequence][r.end]
    }

    /// Writes the normalized channel-major `[54][w]` window into `out`.
    pub fn fill_normalized(&self, r: WindowRef, out: &mut [f64]) {
        let w = self.w;
        assert_eq!(out.len(), N_FEATURES * w);
        let rows = &self.features[r.sequence][r.end + 1 - w..=r.end];
        for (t, z) in rows.iter().enumerate() {
            for (c, v) in z.iter().enumerate() {
                out[c * w + t] = *v;
            }
        }
        normalize_channels_in_place(out, N_FEATURES, w);
    }
}

/// Conventional leg name for a robot with `n_legs` legs.
pub fn leg_label(leg: usize, n_legs: usize) -> String {
    match (n_legs, leg) {
        (4, _) => LEG_NAMES[leg].to_string(),
        (2, 0) => "L".to_string(),
        (2, 1) => "R".to_string(),
        _ => format!("leg{leg}"),
    }
}

fn contact_header(n_legs: usize) -> String {
    let mut h = String::from("timestamp,state");
    for leg in 0..n_legs {
        h.push(',');
        h.push_str(&leg_label(leg, n_legs));
    }
    h
}

/// Contact stream CSV: `timestamp,state,<leg>...` with the encoded state and
/// one 0/1 column per leg.
pub fn write_contacts<W: Write>(timestamps: &[f64], contacts: &[ContactState], out: W) -> Result<(), DataError> {
    if timestamps.len() != contacts.len() {
        return Err(DataError::SchemaMismatch {
            location: "contact stream".into(),
            message: format!("{} timestamps for {} states", timestamps.len(), contacts.len()),
        });
    }
    let n_legs = contacts.first().map_or(SCHEMA_LEGS, ContactState::n_legs);
    let mut out = BufWriter::new(out);
    writeln!(out, "{}", contact_header(n_legs))?;
    for (t, c) in timestamps.iter().zip(contacts) {
        write!(out, "{t},{}", c.code())?;
        for l in &c.legs {
            write!(out, ",{}", u8::from(*l))?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_contacts<R: Read>(input: R) -> Result<(Vec<f64>, Vec<ContactState>), DataError> {
    let mut lines = BufReader::new(input).lines();
    let header = lines.next().ok_or(DataError::EmptyStream)??;
    let n_legs = header.split(',').count().saturating_sub(2);
    if n_legs == 0 || header.trim() != contact_header(n_legs) {
        return Err(DataError::SchemaMismatch { location: io_err_location(1), message: format!("bad contact stream header {header:?}") });
    }
    let (mut ts, mut cs) = (Vec::new(), Vec::new());
    for (i, line) in lines.enumerate() {
        let line = line?;
        let location = io_err_location(i + 2);
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != n_legs + 2 {
            return Err(DataError::SchemaMismatch {
                location,
                message: format!("expected {} columns, found {}", n_legs + 2, fields.len()),
            });
        }
        let bad = |m: String| DataError::SchemaMismatch { location: location.clone(), message: m };
        let t: f64 = fields[0].parse().map_err(|e| bad(format!("timestamp: {e}")))?;
        let code: u32 = fields[1].parse().map_err(|e| bad(format!("state: {e}")))?;
        let legs = fields[2..]
            .iter()
            .map(|f| match *f {
                "0" => Ok(false),
                "1" => Ok(true),
                other => Err(bad(format!("leg flag {other:?} is not 0 or 1"))),
            })
            .collect::<Result<Vec<bool>, _>>()?;
        let c = ContactState::new(legs);
        if c.code() != code {
            return Err(bad(format!("state {code} disagrees with leg flags ({})", c.code())));
        }
        ts.push(t);
        cs.push(c);
    }
    Ok((ts, cs))
}

pub fn write_contacts_file(timestamps: &[f64], contacts: &[ContactState], path: &Path) -> Result<(), DataError> {
    write_contacts(timestamps, contacts, File::create(path)?)
}

pub fn read_contacts_file(path: &Path) -> Result<(Vec<f64>, Vec<ContactState>), DataError> {
    read_contacts(File::open(path)?)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

fn io_err_location(line: usize) -> String {
    format!("line {line}")
}

pub fn write_csv<W: Write>(frames: &[SensorFrame], mut out: W) -> Result<(), DataError> {
    writeln!(out, "{}", csv_header().join(","))?;
    for f in frames {
        let mut cols: Vec<String> = Vec::with_capacity(CSV_COLUMNS);
        cols.push(format!("{}", f.timestamp));
        cols.extend(f.features().iter().map(|v| format!("{v}")));
        for i in 0..N_JOINTS {
            cols.push(fmt_opt(f.torque.map(|t| t[i])));
        }
        cols.push(f.gt_contact.as_ref().map(|c| c.code().to_string()).unwrap_or_default());
        writeln!(out, "{}", cols.join(","))?;
    }
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<SensorFrame>, DataError> {
    let reader = BufReader::new(input);
    let mut frames = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let fields: Vec<&str> = line.trim_end_matches('\r').split(',').collect();
        if fields.len() != CSV_COLUMNS {
            return Err(DataError::SchemaMismatch {
                location: io_err_location(lineno),
                message: format!("expected {CSV_COLUMNS} columns, found {}", fields.len()),
            });
        }
        if i == 0 {
            let header = csv_header();
            if fields.iter().zip(header.iter()).any(|(a, b)| a.trim() != b) {
                return Err(DataError::SchemaMismatch { location: io_err_location(lineno), message: "unexpected header".to_string() });
            }
            continue;
        }
        let parse = |col: usize| -> Result<f64, DataError> {
            fields[col].trim().parse::<f64>().map_err(|_| DataError::SchemaMismatch {
                location: format!("line {lineno}, column {}", col + 1),
                message: format!("not a number: {:?}", fields[col]),
            })
        };
        let mut f = SensorFrame { timestamp: parse(0)?, ..Default::default() };
        let mut z = [0.0; N_FEATURES];
        for (k, v) in z.iter_mut().enumerate() {
            *v = parse(1 + k)?;
        }
        f.set_features(&z);
        let tcols = 1 + N_FEATURES;
        let present = (0..N_JOINTS).filter(|k| !fields[tcols + k].trim().is_empty()).count();
        if present == N_JOINTS {
            let mut t = [0.0; N_JOINTS];
            for (k, v) in t.iter_mut().enumerate() {
                *v = parse(tcols + k)?;
            }
            f.torque = Some(t);
        } else if present != 0 {
            return Err(DataError::SchemaMismatch {
                location: io_err_location(lineno),
                message: "torques must be all present or all empty".to_string(),
            });
        }
        let ccol = CSV_COLUMNS - 1;
        let code = fields[ccol].trim();
        if !code.is_empty() {
            let code: u32 = code.parse().map_err(|_| DataError::SchemaMismatch {
                location: format!("line {lineno}, column {}", ccol + 1),
                message: format!("bad contact code {code:?}"),
            })?;
            f.gt_contact = Some(decode_contact(code, SCHEMA_LEGS)?);
        }
        frames.push(f);
    }
    Ok(frames)
}

/// Encodes frames in the binary layout, checksum included.
pub fn encode_binary(frames: &[SensorFrame]) -> Vec<u8> {
    let mut buf = Vec::with_capacity(14 + frames.len() * CSV_COLUMNS * 8 + 4);
    buf.extend_from_slice(BINARY_MAGIC);
    buf.extend_from_slice(&BINARY_VERSION.to_le_bytes());
    buf.extend_from_slice(&(frames.len() as u64).to_le_bytes());
    for f in frames {
        let mut push = |v: f64| buf.extend_from_slice(&v.to_le_bytes());
        push(f.timestamp);
        for v in f.features() {
            push(v);
        }
        for i in 0..N_JOINTS {
            push(f.torque.map_or(f64::NAN, |t| t[i]));
        }
        push(f.gt_contact.as_ref().map_or(f64::NAN, |c| c.code() as f64));
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

pub fn decode_binary(bytes: &[u8]) -> Result<Vec<SensorFrame>, DataError> {
    const HEADER: usize = 4 + 2 + 8;
    if bytes.len() < 4 || &bytes[..4] != BINARY_MAGIC {
        return Err(DataError::SchemaMismatch { location: "offset 0".into(), message: "bad magic".into() });
    }
    if bytes.len() < HEADER + 4 {
        return Err(DataError::ChecksumFailure(format!("file truncated at {} bytes", bytes.len())));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(trailer.try_into().unwrap());
    if crc32fast::hash(body) != stored {
        return Err(DataError::ChecksumFailure("CRC32 mismatch".into()));
    }
    let version = u16::from_le_bytes([body[4], body[5]]);
    if version != BINARY_VERSION {
        return Err(DataError::SchemaMismatch { location: "offset 4".into(), message: format!("unsupported version {version}") });
    }
    let count = u64::from_le_bytes(body[6..14].try_into().unwrap()) as usize;
    let frame_bytes = CSV_COLUMNS * 8;
    if body.len() - HEADER != count.saturating_mul(frame_bytes) {
        return Err(DataError::SchemaMismatch {
            location: format!("offset {HEADER}"),
            message: format!("{count} frames declared, {} payload bytes", body.len() - HEADER),
        });
    }
    let mut frames = Vec::with_capacity(count);
    for (k, chunk) in body[HEADER..].chunks_exact(frame_bytes).enumerate() {
        let vals: Vec<f64> = chunk.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
        let mut f = SensorFrame { timestamp: vals[0], ..Default::default() };
        f.set_features(&vals[1..1 + N_FEATURES]);
        let t = &vals[1 + N_FEATURES..1 + N_FEATURES + N_JOINTS];
        if t.iter().all(|v| !v.is_nan()) {
            f.torque = Some(t.try_into().unwrap());
        }
        let code = vals[CSV_COLUMNS - 1];
        if !code.is_nan() {
            if code.fract() != 0.0 || code < 0.0 {
                return Err(DataError::SchemaMismatch { location: format!("frame {k}"), message: format!("bad contact code {code}") });
            }
            f.gt_contact = Some(decode_contact(code as u32, SCHEMA_LEGS)?);
        }
        frames.push(f);
    }
    Ok(frames)
}

/// Format chosen by file extension: `.csv` for text, anything else binary.
pub fn is_csv_path(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

pub fn write_dataset(frames: &[SensorFrame], path: &Path) -> Result<(), DataError> {
    let file = File::create(path)?;
    let mut out = BufWriter::new(file);
    if is_csv_path(path) {
        write_csv(frames, &mut out)?;
    } else {
        out.write_all(&encode_binary(frames))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Vec<SensorFrame>, DataError> {
    let file = File::open(path)?;
    if is_csv_path(path) {
        read_csv(file)
    } else {
        let mut bytes = Vec::new();
        BufReader::new(file).read_to_end(&mut bytes)?;
        decode_binary(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_frames(n: usize, seed: u64) -> Vec<SensorFrame> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let mut f = SensorFrame { timestamp: i as f64 * 0.002 + rng.random_range(0.0..1e-4), ..Default::default() };
                let z: Vec<f64> = (0..N_FEATURES).map(|_| rng.random_range(-10.0..10.0)).collect();
                f.set_features(&z);
                if rng.random_bool(0.5) {
                    f.torque = Some(std::array::from_fn(|_| rng.random_range(-30.0..30.0)));
                }
                if rng.random_bool(0.7) {
                    f.gt_contact = Some(decode_contact(rng.random_range(0..16), 4).unwrap());
                }
                f
            })
            .collect()
    }

    #[test]
    fn contact_stream_roundtrip() {
        let cs: Vec<ContactState> = (0..16).map(|c| ContactState::from_code(c, 4).unwrap()).collect();
        let ts: Vec<f64> = (0..16).map(|k| k as f64 * 1e-3).collect();
        let mut buf = Vec::new();
        write_contacts(&ts, &cs, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("timestamp,state,RF,LF,RH,LH\n0,0,0,0,0,0\n"));
        assert_eq!(read_contacts(&buf[..]).unwrap(), (ts, cs));
        let bad = "timestamp,state,RF,LF,RH,LH\n0,6,1,1,0,0\n";
        assert!(matches!(read_contacts(bad.as_bytes()), Err(DataError::SchemaMismatch { location, .. }) if location == "line 2"));
        let biped = "timestamp,state,L,R\n0.5,2,1,0\n";
        assert_eq!(read_contacts(biped.as_bytes()).unwrap().1[0].legs, vec![true, false]);
    }

    #[test]
    fn contact_codes() {
        assert_eq!(encode_contact(&[false, true, true, false]), 6);
        assert_eq!(encode_contact(&[false; 4]), 0);
        assert_eq!(encode_contact(&[true; 4]), 15);
        for l in [2usize, 4] {
            for s in 0..(1u32 << l) {
                assert_eq!(decode_contact(s, l).unwrap().code(), s);
            }
            assert!(matches!(decode_contact(1 << l, l), Err(DataError::OutOfRange { .. })));
        }
        assert_eq!(decode_contact(6, 4).unwrap().legs, vec![false, true, true, false]);
    }

    #[test]
    fn upsample_identity_and_linear() {
        let frames: Vec<SensorFrame> = (0..50)
            .map(|i| {
                let mut f = SensorFrame { timestamp: i as f64 / 500.0, ..Default::default() };
                f.q[0] = f.timestamp;
                f
            })
            .collect();
        assert_eq!(upsample(&frames, 500.0).unwrap(), frames);
        let up = upsample(&frames, 1000.0).unwrap();
        assert_eq!(up.len(), 99);
        for (k, f) in up.iter().enumerate() {
            assert!((f.q[0] - k as f64 / 1000.0).abs() < 1e-15);
            if k % 2 == 0 {
                assert_eq!(f, &frames[k / 2]);
            }
        }
    }

    #[test]
    fn upsample_sine_error_bound() {
        let w = 2.0 * std::f64::consts::PI * 5.0;
        let frames: Vec<SensorFrame> = (0..=500)
            .map(|i| {
                let mut f = SensorFrame { timestamp: i as f64 / 500.0, ..Default::default() };
                f.q[3] = (w * f.timestamp).sin();
                f
            })
            .collect();
        let up = upsample(&frames, 1000.0).unwrap();
        let bound = w * w / (8.0 * 500.0 * 500.0) + 1e-9;
        let worst = up.iter().map(|f| (f.q[3] - (w * f.timestamp).sin()).abs()).fold(0.0, f64::max);
        assert!(worst < bound, "{worst} vs {bound}");
        assert!(up.last().unwrap().timestamp <= 1.0 + 1e-9);
    }

    #[test]
    fn upsample_errors_and_hold() {
        assert!(matches!(upsample(&[], 10.0), Err(DataError::EmptyStream)));
        let mut frames = random_frames(5, 1);
        frames[3].timestamp = frames[2].timestamp;
        assert!(matches!(upsample(&frames, 1000.0), Err(DataError::NonMonotoneTimestamps { index: 3 })));
        let mut a = SensorFrame { timestamp: 0.0, gt_contact: Some(decode_contact(3, 4).unwrap()), ..Default::default() };
        a.torque = Some([1.0; 12]);
        let b = SensorFrame { timestamp: 1.0, gt_contact: Some(decode_contact(12, 4).unwrap()), ..Default::default() };
        let up = upsample(&[a, b], 4.0).unwrap();
        assert_eq!(up.len(), 5);
        assert_eq!(up[3].gt_contact.as_ref().unwrap().code(), 3);
        assert_eq!(up[4].gt_contact.as_ref().unwrap().code(), 12);
        assert!(up[2].torque.is_none());
    }

    #[test]
    fn windows() {
        let frames = random_frames(6, 2);
        let w = make_window(&frames, 2, 2).unwrap();
        assert_eq!(w.row(0), &frames[1].features()[..]);
        assert_eq!(w.row(1), &frames[2].features()[..]);
        assert_eq!(w.label, frames[2].gt_contact);
        let first = make_window(&frames, 3, 4).unwrap();
        assert_eq!(first.row(0), &frames[0].features()[..]);
        assert!(matches!(make_window(&frames, 2, 4), Err(DataError::InsufficientHistory { .. })));
        let next = make_window(&frames, 4, 4).unwrap();
        assert_eq!(&first.data[N_FEATURES..], &next.data[..3 * N_FEATURES]);
    }

    #[test]
    fn normalization() {
        let mut frames = random_frames(40, 3);
        for f in frames.iter_mut() {
            f.q[5] = 2.5;
        }
        let raw = make_window(&frames, 39, 40).unwrap();
        let n = normalize_window(&raw);
        for c in 0..N_FEATURES {
            let col: Vec<f64> = (0..40).map(|r| n.get(r, c)).collect();
            let mean = col.iter().sum::<f64>() / 40.0;
            let sd = (col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 40.0).sqrt();
            assert!(mean.abs() < 1e-10);
            if c == 5 {
                assert!(col.iter().all(|x| *x == 0.0));
            } else {
                assert!((sd - 1.0).abs() < 1e-10);
            }
        }
        let mut scaled = raw.clone();
        for r in 0..40 {
            scaled.data[r * N_FEATURES + 7] *= 10.0;
        }
        let ns = normalize_window(&scaled);
        for r in 0..40 {
            assert!((ns.get(r, 7) - n.get(r, 7)).abs() < 1e-12);
        }
        let twice = normalize_window(&n);
        assert!(twice.data.iter().zip(&n.data).all(|(a, b)| (a - b).abs() < 1e-9));

        let mut ds = WindowedDataset::new(40, 4).unwrap();
        ds.push_sequence(&frames);
        let mut buf = vec![0.0; N_FEATURES * 40];
        ds.fill_normalized(WindowRef { sequence: 0, end: 39 }, &mut buf);
        let cm = n.channel_major();
        assert!(buf.iter().zip(&cm).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn split_counts_and_determinism() {
        let items: Vec<usize> = (0..100).collect();
        let s = split_dataset(items.clone(), 7).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (70, 15, 15));
        assert_eq!(s, split_dataset(items.clone(), 7).unwrap());
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort();
        assert_eq!(all, items);
        assert_ne!(s.train, (0..70).collect::<Vec<_>>());
        assert!(matches!(split_dataset(vec![0; 9], 1), Err(DataError::TooFewWindows(9))));
    }

    #[test]
    fn csv_and_binary_roundtrip() {
        let frames = random_frames(30, 4);
        let dir = tempfile::tempdir().unwrap();
        let bin = dir.path().join("d.pcds");
        let csv = dir.path().join("d.csv");
        write_dataset(&frames, &bin).unwrap();
        write_dataset(&frames, &csv).unwrap();
        let from_bin = read_dataset(&bin).unwrap();
        let from_csv = read_dataset(&csv).unwrap();
        assert_eq!(from_bin, frames);
        assert_eq!(from_csv, from_bin);
    }

    #[test]
    fn corrupt_inputs() {
        let frames = random_frames(10, 5);
        let bytes = encode_binary(&frames);
        assert!(matches!(decode_binary(&bytes[..bytes.len() - 9]), Err(DataError::ChecksumFailure(_))));
        let mut flipped = bytes.clone();
        flipped[100] ^= 0x40;
        assert!(matches!(decode_binary(&flipped), Err(DataError::ChecksumFailure(_))));

        let mut text = Vec::new();
        write_csv(&frames, &mut text).unwrap();
        let text = String::from_utf8(text).unwrap();
        let short: String = text.lines().map(|l| l.rsplitn(16, ',').last().unwrap().to_string() + "\n").collect();
        let err = read_csv(short.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("found 53"), "{err}");
    }

    proptest! {
        #[test]
        fn encode_decode_bijection(bits in proptest::collection::vec(any::<bool>(), 1..8)) {
            let s = encode_contact(&bits);
            prop_assert_eq!(decode_contact(s, bits.len()).unwrap().legs, bits);
        }

        #[test]
        fn csv_roundtrip_any_values(vals in proptest::collection::vec(-1e6f64..1e6, N_FEATURES)) {
            let mut f = SensorFrame { timestamp: 0.25, ..Default::default() };
            f.set_features(&vals);
            let mut text = Vec::new();
            write_csv(std::slice::from_ref(&f), &mut text).unwrap();
            prop_assert_eq!(read_csv(text.as_slice()).unwrap(), vec![f]);
        }
    }
}
