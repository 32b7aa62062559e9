//! Contact classification metrics, trajectory alignment and error metrics,
//! and CSV/SVG report export.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use thiserror::Error;

use crate::dataio::ContactState;

/// Largest timestamp gap accepted when pairing poses (s).
pub const ASSOCIATION_TOLERANCE: f64 = 2e-3;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("streams differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("frame {frame} has {got} legs, expected {expected}")]
    LegCountMismatch { frame: usize, expected: usize, got: usize },
    #[error("no frames to evaluate")]
    Empty,
    #[error("trajectories share no timestamps within tolerance")]
    NoOverlap,
    #[error("need at least {need} poses, got {got}")]
    TooFewPoses { need: usize, got: usize },
    #[error("malformed pose file at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        (self.tp + self.tn) as f64 / self.total() as f64
    }

    /// `FP / (FP + TN)`; absent without negatives.
    pub fn fpr(&self) -> Option<f64> {
        let d = self.fp + self.tn;
        (d > 0).then(|| self.fp as f64 / d as f64)
    }

    /// `FN / (FN + TP)`; absent without positives.
    pub fn fnr(&self) -> Option<f64> {
        let d = self.fn_ + self.tp;
        (d > 0).then(|| self.fn_ as f64 / d as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationReport {
    pub frames: usize,
    /// Fraction of frames with every leg correct.
    pub full_state_accuracy: f64,
    pub per_leg: Vec<Confusion>,
}

fn mean_present(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

impl ClassificationReport {
    pub fn leg_accuracy(&self, leg: usize) -> f64 {
        self.per_leg[leg].accuracy()
    }

    pub fn leg_average_accuracy(&self) -> f64 {
        self.per_leg.iter().map(|c| c.accuracy()).sum::<f64>() / self.per_leg.len() as f64
    }

    /// Mean of the per-leg rates that are defined.
    pub fn average_fpr(&self) -> Option<f64> {
        mean_present(self.per_leg.iter().map(|c| c.fpr()))
    }

    pub fn average_fnr(&self) -> Option<f64> {
        mean_present(self.per_leg.iter().map(|c| c.fnr()))
    }
}

pub fn classification_metrics(pred: &[ContactState], gt: &[ContactState]) -> Result<ClassificationReport, EvalError> {
    if pred.len() != gt.len() {
        return Err(EvalError::LengthMismatch(pred.len(), gt.len()));
    }
    if gt.is_empty() {
        return Err(EvalError::Empty);
    }
    let n_legs = gt[0].n_legs();
    let mut per_leg = vec![Confusion::default(); n_legs];
    let mut all_correct = 0usize;
    for (frame, (p, g)) in pred.iter().zip(gt).enumerate() {
        for s in [p, g] {
            if s.n_legs() != n_legs {
                return Err(EvalError::LegCountMismatch { frame, expected: n_legs, got: s.n_legs() });
            }
        }
        let mut ok = true;
        for (l, c) in per_leg.iter_mut().enumerate() {
            match (p.legs[l], g.legs[l]) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
            ok &= p.legs[l] == g.legs[l];
        }
        all_correct += ok as usize;
    }
    Ok(ClassificationReport { frames: gt.len(), full_state_accuracy: all_correct as f64 / gt.len() as f64, per_leg })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub timestamp: f64,
    pub rotation: Matrix3<f64>,
    pub position: Vector3<f64>,
}

impl Pose {
    pub fn new(timestamp: f64, rotation: Matrix3<f64>, position: Vector3<f64>) -> Self {
        Self { timestamp, rotation, position }
    }

    /// Heading of the body x axis about world z.
    pub fn yaw(&self) -> f64 {
        self.rotation[(1, 0)].atan2(self.rotation[(0, 0)])
    }
}

/// Pairs `(est index, gt index)` by nearest timestamp within `tol`.
pub fn associate(est: &[Pose], gt: &[Pose], tol: f64) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    if gt.is_empty() {
        return pairs;
    }
    for (i, e) in est.iter().enumerate() {
        let k = gt.partition_point(|g| g.timestamp < e.timestamp);
        let best = [k.checked_sub(1), (k < gt.len()).then_some(k)].into_iter().flatten().min_by(|&a, &b| {
            let da = (gt[a].timestamp - e.timestamp).abs();
            let db = (gt[b].timestamp - e.timestamp).abs();
            da.partial_cmp(&db).unwrap()
        });
        if let Some(j) = best {
            if (gt[j].timestamp - e.timestamp).abs() <= tol {
                pairs.push((i, j));
            }
        }
    }
    pairs
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlignMode {
    /// Least-squares yaw and translation over all associated pairs.
    LeastSquares,
    /// Least squares over the first `n` associated pairs only.
    Initial(usize),
    /// Match the first associated pose's heading and position.
    FirstPose,
}

/// Yaw-plus-translation transform `x ↦ Rz(yaw) x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Alignment {
    pub yaw: f64,
    pub translation: Vector3<f64>,
}

impl Alignment {
    pub fn identity() -> Self {
        Self { yaw: 0.0, translation: Vector3::zeros() }
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        Rotation3::from_axis_angle(&Vector3::z_axis(), self.yaw).into_inner()
    }

    pub fn apply(&self, pose: &Pose) -> Pose {
        let rz = self.rotation();
        Pose { timestamp: pose.timestamp, rotation: rz * pose.rotation, position: rz * pose.position + self.translation }
    }
}

fn fit_yaw_translation(pairs: &[(Vector3<f64>, Vector3<f64>)]) -> Alignment {
    let n = pairs.len() as f64;
    let me = pairs.iter().map(|p| p.0).sum::<Vector3<f64>>() / n;
    let mg = pairs.iter().map(|p| p.1).sum::<Vector3<f64>>() / n;
    let (mut s, mut c) = (0.0, 0.0);
    for (e, g) in pairs {
        let (e, g) = (e - me, g - mg);
        s += e.x * g.y - e.y * g.x;
        c += e.x * g.x + e.y * g.y;
    }
    let yaw = if s == 0.0 && c == 0.0 { 0.0 } else { s.atan2(c) };
    let rz = Rotation3::from_axis_angle(&Vector3::z_axis(), yaw).into_inner();
    Alignment { yaw, translation: mg - rz * me }
}

/// Finds the 4-DoF alignment of `est` onto `gt` and applies it.
pub fn align_trajectories(est: &[Pose], gt: &[Pose], mode: AlignMode) -> Result<(Alignment, Vec<Pose>), EvalError> {
    for len in [est.len(), gt.len()] {
        if len < 2 {
            return Err(EvalError::TooFewPoses { need: 2, got: len });
        }
    }
    let pairs = associate(est, gt, ASSOCIATION_TOLERANCE);
    if pairs.is_empty() {
        return Err(EvalError::NoOverlap);
    }
    let points: Vec<(Vector3<f64>, Vector3<f64>)> = pairs.iter().map(|&(i, j)| (est[i].position, gt[j].position)).collect();
    let alignment = match mode {
        AlignMode::LeastSquares => fit_yaw_translation(&points),
        AlignMode::Initial(n) => fit_yaw_translation(&points[..n.clamp(1, points.len())]),
        AlignMode::FirstPose => {
            let (i, j) = pairs[0];
            let yaw = gt[j].yaw() - est[i].yaw();
            let rz = Rotation3::from_axis_angle(&Vector3::z_axis(), yaw).into_inner();
            Alignment { yaw, translation: gt[j].position - rz * est[i].position }
        }
    };
    Ok((alignment, est.iter().map(|p| alignment.apply(p)).collect()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryReport {
    pub rmse: f64,
    /// Position error at the last associated pair (m).
    pub final_drift: f64,
    pub path_length: f64,
    /// `(timestamp, est − gt)` per associated pair.
    pub errors: Vec<(f64, Vector3<f64>)>,
}

impl TrajectoryReport {
    pub fn drift_percent(&self) -> f64 {
        100.0 * self.final_drift / self.path_length
    }
}

pub fn trajectory_metrics(est: &[Pose], gt: &[Pose]) -> Result<TrajectoryReport, EvalError> {
    if est.is_empty() || gt.is_empty() {
        return Err(EvalError::NoOverlap);
    }
    let pairs = associate(est, gt, ASSOCIATION_TOLERANCE);
    if pairs.is_empty() {
        return Err(EvalError::NoOverlap);
    }
    let errors: Vec<(f64, Vector3<f64>)> = pairs.iter().map(|&(i, j)| (gt[j].timestamp, est[i].position - gt[j].position)).collect();
    let rmse = (errors.iter().map(|(_, e)| e.norm_squared()).sum::<f64>() / errors.len() as f64).sqrt();
    let (j0, j1) = (pairs[0].1, pairs[pairs.len() - 1].1);
    let path_length = gt[j0..=j1].windows(2).map(|w| (w[1].position - w[0].position).norm()).sum();
    Ok(TrajectoryReport { rmse, final_drift: errors.last().unwrap().1.norm(), path_length, errors })
}

fn fmt_rate(v: Option<f64>) -> String {
    v.map_or_else(|| "N/A".to_string(), |x| format!("{x:.6}"))
}

pub const CLASSIFICATION_HEADER: &str = "label,frames,full_state_acc,leg_avg_acc,fpr,fnr";
pub const LEG_HEADER: &str = "label,leg,accuracy,fpr,fnr,tp,fp,tn,fn";
pub const TRAJECTORY_HEADER: &str = "label,rmse_m,final_drift_m,drift_percent,path_length_m";
pub const POSE_HEADER: &str = "timestamp,x,y,z,qw,qx,qy,qz";

/// Summary table: one row per labelled report.
pub fn classification_csv(rows: &[(String, ClassificationReport)]) -> String {
    let mut s = String::from(CLASSIFICATION_HEADER);
    s.push('\n');
    for (label, r) in rows {
        let _ = writeln!(
            s,
            "{label},{},{:.6},{:.6},{},{}",
            r.frames,
            r.full_state_accuracy,
            r.leg_average_accuracy(),
            fmt_rate(r.average_fpr()),
            fmt_rate(r.average_fnr())
        );
    }
    s
}

/// Per-leg table; legs named RF, LF, RH, LH for four legs, else by index.
pub fn leg_csv(rows: &[(String, ClassificationReport)]) -> String {
    let mut s = String::from(LEG_HEADER);
    s.push('\n');
    for (label, r) in rows {
        for (l, c) in r.per_leg.iter().enumerate() {
            let name = leg_name(l, r.per_leg.len());
            let _ = writeln!(
                s,
                "{label},{name},{:.6},{},{},{},{},{},{}",
                c.accuracy(),
                fmt_rate(c.fpr()),
                fmt_rate(c.fnr()),
                c.tp,
                c.fp,
                c.tn,
                c.fn_
            );
        }
    }
    s
}

pub fn leg_name(leg: usize, n_legs: usize) -> String {
    crate::dataio::leg_label(leg, n_legs)
}

pub fn trajectory_csv(rows: &[(String, TrajectoryReport)]) -> String {
    let mut s = String::from(TRAJECTORY_HEADER);
    s.push('\n');
    for (label, r) in rows {
        let _ = writeln!(s, "{label},{:.6},{:.6},{:.4},{:.6}", r.rmse, r.final_drift, r.drift_percent(), r.path_length);
    }
    s
}

pub fn write_poses(poses: &[Pose], path: &Path) -> Result<(), EvalError> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(out, "{POSE_HEADER}")?;
    for p in poses {
        let q = UnitQuaternion::from_matrix(&p.rotation);
        writeln!(out, "{},{},{},{},{},{},{},{}", p.timestamp, p.position.x, p.position.y, p.position.z, q.w, q.i, q.j, q.k)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_poses(path: &Path) -> Result<Vec<Pose>, EvalError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut poses = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if i == 0 {
            if line.trim() != POSE_HEADER {
                return Err(EvalError::Parse { line: 1, message: format!("expected header {POSE_HEADER:?}") });
            }
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| EvalError::Parse { line: i + 1, message: e.to_string() })?;
        if vals.len() != 8 {
            return Err(EvalError::Parse { line: i + 1, message: format!("expected 8 columns, found {}", vals.len()) });
        }
        let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(vals[4], vals[5], vals[6], vals[7]));
        poses.push(Pose::new(vals[0], q.to_rotation_matrix().into_inner(), Vector3::new(vals[1], vals[2], vals[3])));
    }
    Ok(poses)
}

const SVG_W: f64 = 640.0;
const SVG_H: f64 = 480.0;
const MARGIN: f64 = 40.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

struct Frame {
    x0: f64,
    y0: f64,
    w: f64,
    h: f64,
    xmin: f64,
    xmax: f64,
    ymin: f64,
    ymax: f64,
}

impl Frame {
    fn fit(x0: f64, y0: f64, w: f64, h: f64, pts: impl Iterator<Item = (f64, f64)>, equal: bool) -> Self {
        let (mut xmin, mut xmax, mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for (x, y) in pts {
            xmin = xmin.min(x);
            xmax = xmax.max(x);
            ymin = ymin.min(y);
            ymax = ymax.max(y);
        }
        if !xmin.is_finite() {
            (xmin, xmax, ymin, ymax) = (0.0, 1.0, 0.0, 1.0);
        }
        let pad = |a: f64, b: f64| if b - a < 1e-9 { (a - 0.5, b + 0.5) } else { (a, b) };
        (xmin, xmax) = pad(xmin, xmax);
        (ymin, ymax) = pad(ymin, ymax);
        if equal {
            let scale = ((xmax - xmin) / w).max((ymax - ymin) / h);
            let (cx, cy) = ((xmin + xmax) / 2.0, (ymin + ymax) / 2.0);
            xmin = cx - scale * w / 2.0;
            xmax = cx + scale * w / 2.0;
            ymin = cy - scale * h / 2.0;
            ymax = cy + scale * h / 2.0;
        }
        Self { x0, y0, w, h, xmin, xmax, ymin, ymax }
    }

    fn map(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.x0 + (x - self.xmin) / (self.xmax - self.xmin) * self.w,
            self.y0 + self.h - (y - self.ymin) / (self.ymax - self.ymin) * self.h,
        )
    }

    fn polyline(&self, s: &mut String, pts: impl Iterator<Item = (f64, f64)>, color: &str) {
        let coords: Vec<String> = pts
            .map(|(x, y)| {
                let (u, v) = self.map(x, y);
                format!("{u:.2},{v:.2}")
            })
            .collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, coords.join(" "));
    }

    fn border(&self, s: &mut String, title: &str) {
        let _ = writeln!(
            s,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#888"/>"##,
            self.x0, self.y0, self.w, self.h
        );
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" font-size="12">{title}</text>"#, self.x0, self.y0 - 6.0);
    }
}

fn svg_open(s: &mut String) {
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_W}" height="{SVG_H}" viewBox="0 0 {SVG_W} {SVG_H}">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
}

fn legend(s: &mut String, labels: impl Iterator<Item = String>) {
    for (k, label) in labels.enumerate() {
        let y = MARGIN + 14.0 * k as f64;
        let _ =
            writeln!(s, r#"<text x="{:.2}" y="{y:.2}" font-size="11" fill="{}">{label}</text>"#, SVG_W - 150.0, COLORS[k % COLORS.len()]);
    }
}

/// Bird's-eye XY plot, one polyline per series, equal axis scale.
pub fn trajectory_svg(series: &[(String, Vec<Pose>)]) -> String {
    let mut s = String::new();
    svg_open(&mut s);
    let frame = Frame::fit(
        MARGIN,
        MARGIN,
        SVG_W - 2.0 * MARGIN - 120.0,
        SVG_H - 2.0 * MARGIN,
        series.iter().flat_map(|(_, p)| p.iter().map(|q| (q.position.x, q.position.y))),
        true,
    );
    frame.border(&mut s, "x-y (m)");
    for (k, (_, poses)) in series.iter().enumerate() {
        frame.polyline(&mut s, poses.iter().map(|p| (p.position.x, p.position.y)), COLORS[k % COLORS.len()]);
    }
    legend(&mut s, series.iter().map(|(l, _)| l.clone()));
    s.push_str("</svg>\n");
    s
}

/// Per-axis position against time, three stacked panels.
pub fn axes_svg(series: &[(String, Vec<Pose>)]) -> String {
    let mut s = String::new();
    svg_open(&mut s);
    let panel_h = (SVG_H - 2.0 * MARGIN - 40.0) / 3.0;
    for (axis, name) in ["x", "y", "z"].iter().enumerate() {
        let y0 = MARGIN + axis as f64 * (panel_h + 20.0);
        let frame = Frame::fit(
            MARGIN,
            y0,
            SVG_W - 2.0 * MARGIN - 120.0,
            panel_h,
            series.iter().flat_map(|(_, p)| p.iter().map(move |q| (q.timestamp, q.position[axis]))),
            false,
        );
        frame.border(&mut s, &format!("{name} (m) vs t (s)"));
        for (k, (_, poses)) in series.iter().enumerate() {
            frame.polyline(&mut s, poses.iter().map(|p| (p.timestamp, p.position[axis])), COLORS[k % COLORS.len()]);
        }
    }
    legend(&mut s, series.iter().map(|(l, _)| l.clone()));
    s.push_str("</svg>\n");
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Svg,
}

/// Everything one evaluation produces.
#[derive(Debug, Clone, Default)]
pub struct ReportBundle {
    pub classification: Vec<(String, ClassificationReport)>,
    pub trajectories: Vec<(String, TrajectoryReport)>,
    pub series: Vec<(String, Vec<Pose>)>,
}

/// Writes the bundle into `dir`; returns the files written.
pub fn export_report(bundle: &ReportBundle, dir: &Path, format: ReportFormat) -> Result<Vec<std::path::PathBuf>, EvalError> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut put = |name: &str, body: String| -> Result<(), EvalError> {
        let p = dir.join(name);
        fs::write(&p, body)?;
        written.push(p);
        Ok(())
    };
    match format {
        ReportFormat::Csv => {
            if !bundle.classification.is_empty() {
                put("classification.csv", classification_csv(&bundle.classification))?;
                put("classification_legs.csv", leg_csv(&bundle.classification))?;
            }
            if !bundle.trajectories.is_empty() {
                put("trajectory.csv", trajectory_csv(&bundle.trajectories))?;
            }
        }
        ReportFormat::Svg => {
            if !bundle.series.is_empty() {
                put("trajectory_xy.svg", trajectory_svg(&bundle.series))?;
                put("trajectory_axes.svg", axes_svg(&bundle.series))?;
            }
        }
    }
    Ok(written)
}
