//! Toolkit configuration file.
//!
//! Grammar: `[section]` headers, one `key = value` per line, `#` starts a
//! comment. Sections and keys are those listed in [`ToolkitConfig::TEMPLATE`];
//! anything else is rejected with its line number. Keys not given keep their
//! defaults.

use std::path::Path;
use std::str::FromStr;

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::baselines::GrfConfig;
use crate::contactnet::{Optimizer, TrainConfig};
use crate::evalkit::{AlignMode, ReportFormat};
use crate::gaitsim::{GaitKind, GaitSpec};
use crate::inekf::NoiseParams;
use crate::kinematics::{LegGeometry, RobotGeometry};
use crate::labelgen::{LabelGait, LabelGenConfig};

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{location}: {message}")]
pub struct ConfigError {
    pub location: String,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KinematicsConfig {
    pub abd: f64,
    pub l1: f64,
    pub l2: f64,
    pub hip_x: f64,
    pub hip_y: f64,
    /// 4 for a quadruped, 2 for a biped.
    pub legs: usize,
}

impl Default for KinematicsConfig {
    fn default() -> Self {
        Self { abd: 0.062, l1: 0.209, l2: 0.195, hip_x: 0.19, hip_y: 0.049, legs: 4 }
    }
}

impl KinematicsConfig {
    pub fn geometry(&self) -> RobotGeometry {
        let quad = RobotGeometry::quadruped(self.abd, self.l1, self.l2, self.hip_x, self.hip_y);
        if self.legs == 4 {
            return quad;
        }
        RobotGeometry {
            legs: quad.legs[..2]
                .iter()
                .map(|g| LegGeometry::new(g.abd, g.l1, g.l2, Vector3::new(0.0, g.hip.y, 0.0), g.lateral_sign))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    pub preset: String,
    pub window: usize,
    pub train: TrainConfig,
    /// Windows drawn from the synthetic corpus by `pipeline`.
    pub windows: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self { preset: "2blocks".into(), window: 150, train: TrainConfig::default(), windows: 20_000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub spec: GaitSpec,
    pub duration: f64,
    /// Sequences generated by `pipeline`.
    pub sequences: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { spec: GaitSpec::default(), duration: 10.0, sequences: 10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub align: AlignMode,
    pub format: ReportFormat,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { align: AlignMode::LeastSquares, format: ReportFormat::Csv }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToolkitConfig {
    pub kinematics: KinematicsConfig,
    pub inekf: NoiseParams,
    pub contactnet: NetConfig,
    pub labelgen: LabelGenConfig,
    pub baselines: GrfConfig,
    pub gaitsim: SimConfig,
    pub eval: EvalConfig,
}

impl Default for ToolkitConfig {
    fn default() -> Self {
        Self {
            kinematics: KinematicsConfig::default(),
            inekf: NoiseParams::default(),
            contactnet: NetConfig::default(),
            labelgen: LabelGenConfig::default(),
            baselines: GrfConfig::default(),
            gaitsim: SimConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

fn parse<T: FromStr>(v: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| format!("invalid value {v:?}: {e}"))
}

fn positive(v: &str) -> Result<f64, String> {
    let x: f64 = parse(v)?;
    if x > 0.0 && x.is_finite() {
        Ok(x)
    } else {
        Err(format!("{v} must be positive"))
    }
}

fn non_negative(v: &str) -> Result<f64, String> {
    let x: f64 = parse(v)?;
    if x >= 0.0 && x.is_finite() {
        Ok(x)
    } else {
        Err(format!("{v} must be non-negative"))
    }
}

fn parse_align(v: &str) -> Result<AlignMode, String> {
    match v {
        "least-squares" => Ok(AlignMode::LeastSquares),
        "first-pose" => Ok(AlignMode::FirstPose),
        _ => match v.strip_prefix("initial:") {
            Some(n) => Ok(AlignMode::Initial(parse(n)?)),
            None => Err(format!("unknown alignment {v:?} (expected least-squares, first-pose or initial:N)")),
        },
    }
}

fn parse_format(v: &str) -> Result<ReportFormat, String> {
    match v {
        "csv" => Ok(ReportFormat::Csv),
        "svg" => Ok(ReportFormat::Svg),
        _ => Err(format!("unknown report format {v:?} (expected csv or svg)")),
    }
}

impl ToolkitConfig {
    /// Every section and key with its default value.
    pub const TEMPLATE: &'static str = "\
[kinematics]
abd = 0.062          # abduction offset (m)
l1 = 0.209           # upper link (m)
l2 = 0.195           # lower link (m)
hip_x = 0.19         # hip offset along x (m)
hip_y = 0.049        # hip offset along y (m)
legs = 4             # 4 or 2

[inekf]
gyro = 1e-4          # gyroscope noise variance per axis (rad^2/s^2)
accel = 1e-2         # accelerometer noise variance per axis (m^2/s^4)
contact_vel = 1e-2   # contact velocity noise variance per axis (m^2/s^2)
encoder = 1e-4       # encoder noise variance per joint (rad^2)
contact_prior = 1e-4 # added variance of a new contact point (m^2)
gravity = 9.81       # magnitude along -z (m/s^2)

[contactnet]
preset = 2blocks     # 2blocks, 1block, 4blocks or convpool
window = 150
batch_size = 30
learning_rate = 1e-4
epochs = 30
dropout = 0.2
optimizer = adam     # adam or sgd
windows = 20000      # corpus size used by pipeline

[labelgen]
gait = trot          # sets half_power_freq: trot, pronk or gallop
half_power_freq = 0.04
backoff = 30

[baselines]
threshold = 15       # vertical force threshold (N)
half_power_freq = 0.02

[gaitsim]
gait = trot          # trot, pronk, stand or air-trot
period = 0.5
duty = 0.5
step_height = 0.08
body_height = 0.28
speed = 0.5
turn_rate = 0
jitter = 0
bounce_amplitude = 0.008
bounce_decay = 0.04
bob_amplitude = 0.005
air_drop = 0.03
body_mass = 9
leg_mass = 0.6
noise_encoder = 5e-4
noise_encoder_vel = 0.02
noise_gyro = 2e-3
noise_accel = 0.05
noise_torque = 0.5
encoder_hz = 500
imu_hz = 1000
duration = 10
sequences = 10

[eval]
align = least-squares # least-squares, first-pose or initial:N
format = csv          # csv or svg
";

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| ConfigError { location: path.display().to_string(), message: e.to_string() })?;
        Self::parse_str(&text, &path.display().to_string())
    }

    pub fn parse_str(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut section: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let location = format!("{origin}:{}", i + 1);
            let err = |message: String| ConfigError { location: location.clone(), message };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim();
                if !["kinematics", "inekf", "contactnet", "labelgen", "baselines", "gaitsim", "eval"].contains(&name) {
                    return Err(err(format!("unknown section [{name}]")));
                }
                section = Some(name.to_string());
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| err(format!("expected key = value, found {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            let sec = section.as_deref().ok_or_else(|| err(format!("key {key:?} outside any section")))?;
            cfg.set(sec, key, value).map_err(err)?;
        }
        cfg.validate().map_err(|message| ConfigError { location: origin.to_string(), message })?;
        Ok(cfg)
    }

    fn set(&mut self, section: &str, key: &str, v: &str) -> Result<(), String> {
        let iso = |v: &str| non_negative(v).map(|x| Matrix3::identity() * x);
        match (section, key) {
            ("kinematics", "abd") => self.kinematics.abd = non_negative(v)?,
            ("kinematics", "l1") => self.kinematics.l1 = positive(v)?,
            ("kinematics", "l2") => self.kinematics.l2 = positive(v)?,
            ("kinematics", "hip_x") => self.kinematics.hip_x = parse(v)?,
            ("kinematics", "hip_y") => self.kinematics.hip_y = parse(v)?,
            ("kinematics", "legs") => {
                self.kinematics.legs = match parse(v)? {
                    n @ (2 | 4) => n,
                    n => return Err(format!("legs must be 2 or 4, got {n}")),
                }
            }
            ("inekf", "gyro") => self.inekf.gyro = iso(v)?,
            ("inekf", "accel") => self.inekf.accel = iso(v)?,
            ("inekf", "contact_vel") => self.inekf.contact_vel = iso(v)?,
            ("inekf", "encoder") => self.inekf.encoder = iso(v)?,
            ("inekf", "contact_prior") => self.inekf.contact_prior = non_negative(v)?,
            ("inekf", "gravity") => self.inekf.gravity = Vector3::new(0.0, 0.0, -positive(v)?),
            ("contactnet", "preset") => self.contactnet.preset = v.to_string(),
            ("contactnet", "window") => self.contactnet.window = parse(v)?,
            ("contactnet", "batch_size") => self.contactnet.train.batch_size = parse(v)?,
            ("contactnet", "learning_rate") => self.contactnet.train.learning_rate = positive(v)?,
            ("contactnet", "epochs") => self.contactnet.train.epochs = parse(v)?,
            ("contactnet", "dropout") => self.contactnet.train.dropout = non_negative(v)?,
            ("contactnet", "optimizer") => self.contactnet.train.optimizer = parse::<Optimizer>(v)?,
            ("contactnet", "windows") => self.contactnet.windows = parse(v)?,
            ("labelgen", "gait") => self.labelgen.half_power_freq = parse::<LabelGait>(v)?.half_power_freq(),
            ("labelgen", "half_power_freq") => self.labelgen.half_power_freq = positive(v)?,
            ("labelgen", "backoff") => self.labelgen.backoff = parse(v)?,
            ("baselines", "threshold") => self.baselines.threshold = positive(v)?,
            ("baselines", "half_power_freq") => self.baselines.half_power_freq = positive(v)?,
            ("gaitsim", "gait") => self.gaitsim.spec.gait = parse::<GaitKind>(v)?,
            ("gaitsim", "period") => self.gaitsim.spec.period = positive(v)?,
            ("gaitsim", "duty") => self.gaitsim.spec.duty = positive(v)?,
            ("gaitsim", "step_height") => self.gaitsim.spec.step_height = non_negative(v)?,
            ("gaitsim", "body_height") => self.gaitsim.spec.body_height = positive(v)?,
            ("gaitsim", "speed") => self.gaitsim.spec.speed = parse(v)?,
            ("gaitsim", "turn_rate") => self.gaitsim.spec.turn_rate = parse(v)?,
            ("gaitsim", "jitter") => self.gaitsim.spec.jitter = non_negative(v)?,
            ("gaitsim", "bounce_amplitude") => self.gaitsim.spec.bounce_amplitude = non_negative(v)?,
            ("gaitsim", "bounce_decay") => self.gaitsim.spec.bounce_decay = positive(v)?,
            ("gaitsim", "bob_amplitude") => self.gaitsim.spec.bob_amplitude = non_negative(v)?,
            ("gaitsim", "air_drop") => self.gaitsim.spec.air_drop = non_negative(v)?,
            ("gaitsim", "body_mass") => self.gaitsim.spec.body_mass = positive(v)?,
            ("gaitsim", "leg_mass") => self.gaitsim.spec.leg_mass = non_negative(v)?,
            ("gaitsim", "noise_encoder") => self.gaitsim.spec.noise.encoder = non_negative(v)?,
            ("gaitsim", "noise_encoder_vel") => self.gaitsim.spec.noise.encoder_vel = non_negative(v)?,
            ("gaitsim", "noise_gyro") => self.gaitsim.spec.noise.gyro = non_negative(v)?,
            ("gaitsim", "noise_accel") => self.gaitsim.spec.noise.accel = non_negative(v)?,
            ("gaitsim", "noise_torque") => self.gaitsim.spec.noise.torque = non_negative(v)?,
            ("gaitsim", "encoder_hz") => self.gaitsim.spec.encoder_hz = positive(v)?,
            ("gaitsim", "imu_hz") => self.gaitsim.spec.imu_hz = positive(v)?,
            ("gaitsim", "duration") => self.gaitsim.duration = positive(v)?,
            ("gaitsim", "sequences") => self.gaitsim.sequences = parse(v)?,
            ("eval", "align") => self.eval.align = parse_align(v)?,
            ("eval", "format") => self.eval.format = parse_format(v)?,
            _ => return Err(format!("unknown key {key:?} in [{section}]")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), String> {
        self.contactnet.train.validate().map_err(|e| e.to_string())?;
        self.baselines.validate().map_err(|e| e.to_string())?;
        if self.contactnet.window < 2 {
            return Err("window must be at least 2".into());
        }
        if !(self.labelgen.half_power_freq < 0.5) {
            return Err("labelgen half_power_freq must be below 0.5".into());
        }
        Ok(())
    }

    pub fn geometry(&self) -> RobotGeometry {
        self.kinematics.geometry()
    }

    /// Per-leg multipliers sized for the configured leg count.
    pub fn grf_config(&self) -> GrfConfig {
        GrfConfig { signs: vec![1.0; self.kinematics.legs], ..self.baselines.clone() }
    }
}
