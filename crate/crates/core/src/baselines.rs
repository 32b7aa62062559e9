//! Comparison contact detectors: ground-reaction-force thresholding and a
//! fixed gait-cycle schedule.

use nalgebra::Vector3;
use thiserror::Error;

use crate::dataio::{ContactState, SensorFrame};
use crate::gaitsim::GaitSpec;
use crate::kinematics::{fk_jacobian, JointAngles, RobotGeometry};
use crate::labelgen::{self, LabelError};

/// Smallest singular value of the leg Jacobian below which the estimate is
/// computed with a pseudo-inverse and flagged.
pub const SINGULAR_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BaselineError {
    #[error("frame {frame} carries no joint torques")]
    MissingTorques { frame: usize },
    #[error("expected {expected} legs, got {got}")]
    LegCountMismatch { expected: usize, got: usize },
    #[error("invalid baseline config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Filter(#[from] LabelError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrfConfig {
    /// Vertical force threshold (N).
    pub threshold: f64,
    /// Low-pass half-power frequency in cycles per sample.
    pub half_power_freq: f64,
    /// Multiplier applied to each leg's estimate.
    pub signs: Vec<f64>,
}

impl Default for GrfConfig {
    fn default() -> Self {
        Self { threshold: 15.0, half_power_freq: 0.02, signs: vec![1.0; 4] }
    }
}

impl GrfConfig {
    pub fn validate(&self) -> Result<(), BaselineError> {
        if !(self.threshold > 0.0) {
            return Err(BaselineError::InvalidConfig("threshold must be positive".into()));
        }
        if !(self.half_power_freq > 0.0 && self.half_power_freq < 0.5) {
            return Err(BaselineError::InvalidConfig("half-power frequency must lie in (0, 0.5)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrfEstimate {
    pub force: Vector3<f64>,
    /// Set when the Jacobian was near-singular.
    pub singular: bool,
}

/// Static force estimate `f = (J^T)^-1 tau` per leg.
pub fn estimate_grf(torques: &[f64], alpha: &[JointAngles], geom: &RobotGeometry) -> Result<Vec<GrfEstimate>, BaselineError> {
    let n = geom.n_legs();
    if alpha.len() != n || torques.len() != 3 * n {
        return Err(BaselineError::LegCountMismatch { expected: n, got: alpha.len().min(torques.len() / 3) });
    }
    Ok(geom
        .legs
        .iter()
        .enumerate()
        .map(|(leg, g)| {
            let jt = fk_jacobian(g, &alpha[leg]).transpose();
            let tau = Vector3::new(torques[3 * leg], torques[3 * leg + 1], torques[3 * leg + 2]);
            let svd = jt.svd(true, true);
            let singular = svd.singular_values.min() < SINGULAR_TOLERANCE;
            let force = if singular {
                svd.solve(&tau, SINGULAR_TOLERANCE).unwrap_or_else(|_| Vector3::zeros())
            } else {
                jt.lu().solve(&tau).unwrap_or_else(Vector3::zeros)
            };
            GrfEstimate { force, singular }
        })
        .collect())
}

/// Low-passed vertical force per leg, one series per leg.
pub fn vertical_forces(frames: &[SensorFrame], config: &GrfConfig, geom: &RobotGeometry) -> Result<Vec<Vec<f64>>, BaselineError> {
    config.validate()?;
    let n = geom.n_legs();
    if config.signs.len() != n {
        return Err(BaselineError::LegCountMismatch { expected: n, got: config.signs.len() });
    }
    let mut series = vec![Vec::with_capacity(frames.len()); n];
    for (k, f) in frames.iter().enumerate() {
        let tau = f.torque.ok_or(BaselineError::MissingTorques { frame: k })?;
        let alpha: Vec<JointAngles> = (0..n).map(|leg| f.joint_angles(leg)).collect();
        for (leg, est) in estimate_grf(&tau[..3 * n], &alpha, geom)?.iter().enumerate() {
            series[leg].push(config.signs[leg] * est.force.z);
        }
    }
    series.into_iter().map(|s| labelgen::lowpass(&s, config.half_power_freq).map_err(Into::into)).collect()
}

/// Contact wherever the filtered vertical force magnitude exceeds the threshold.
pub fn grf_threshold_detect(frames: &[SensorFrame], config: &GrfConfig, geom: &RobotGeometry) -> Result<Vec<ContactState>, BaselineError> {
    let fz = vertical_forces(frames, config, geom)?;
    Ok(threshold_forces(&fz, config.threshold))
}

pub fn threshold_forces(fz: &[Vec<f64>], threshold: f64) -> Vec<ContactState> {
    let len = fz.first().map_or(0, Vec::len);
    (0..len).map(|k| ContactState::new(fz.iter().map(|s| s[k].abs() > threshold).collect())).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaitSchedule {
    pub period: f64,
    pub offsets: Vec<f64>,
    pub duty: f64,
    pub start: f64,
}

impl GaitSchedule {
    pub fn new(period: f64, offsets: Vec<f64>, duty: f64, start: f64) -> Result<Self, BaselineError> {
        if !(period > 0.0) {
            return Err(BaselineError::InvalidConfig("period must be positive".into()));
        }
        if !(duty > 0.0 && duty < 1.0) {
            return Err(BaselineError::InvalidConfig("duty must lie in (0, 1)".into()));
        }
        if offsets.iter().any(|o| !(0.0..1.0).contains(o)) {
            return Err(BaselineError::InvalidConfig("offsets must lie in [0, 1)".into()));
        }
        Ok(Self { period, offsets, duty, start })
    }

    pub fn trot(period: f64, duty: f64) -> Result<Self, BaselineError> {
        Self::new(period, vec![0.0, 0.5, 0.5, 0.0], duty, 0.0)
    }

    /// The nominal schedule a simulated gait is commanded with.
    pub fn from_spec(spec: &GaitSpec) -> Result<Self, BaselineError> {
        Self::new(spec.period, spec.phase_offsets().to_vec(), spec.duty, 0.0)
    }

    pub fn in_stance(&self, leg: usize, t: f64) -> bool {
        let phase = ((t - self.start) / self.period + self.offsets[leg]).rem_euclid(1.0);
        phase < self.duty
    }

    pub fn contact_at(&self, t: f64) -> ContactState {
        ContactState::new((0..self.offsets.len()).map(|leg| self.in_stance(leg, t)).collect())
    }
}

pub fn gait_cycle_detect(timestamps: &[f64], schedule: &GaitSchedule) -> Vec<ContactState> {
    timestamps.iter().map(|&t| schedule.contact_at(t)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evalkit::classification_metrics;
    use crate::gaitsim::simulate;
    use proptest::prelude::*;

    fn geom() -> RobotGeometry {
        RobotGeometry::mini_cheetah()
    }

    #[test]
    fn zero_torque_gives_zero_force() {
        let alpha = vec![JointAngles::new(0.1, -0.8, 1.6); 4];
        for e in estimate_grf(&[0.0; 12], &alpha, &geom()).unwrap() {
            assert_eq!(e.force, Vector3::zeros());
            assert!(!e.singular);
        }
    }

    #[test]
    fn recovers_constructed_force() {
        let g = geom();
        let alpha: Vec<JointAngles> = (0..4).map(|l| JointAngles::new(0.05 * l as f64, -0.7, 1.4 - 0.1 * l as f64)).collect();
        let f = Vector3::new(0.0, 0.0, -0.6 * 9.81);
        let mut tau = [0.0; 12];
        for leg in 0..4 {
            let t = fk_jacobian(&g.legs[leg], &alpha[leg]).transpose() * f;
            tau[3 * leg..3 * leg + 3].copy_from_slice(t.as_slice());
        }
        for e in estimate_grf(&tau, &alpha, &g).unwrap() {
            assert!((e.force - f).norm() < 1e-9);
        }
    }

    #[test]
    fn straight_leg_is_flagged() {
        let alpha = vec![JointAngles::zeros(); 4];
        let est = estimate_grf(&[1.0; 12], &alpha, &geom()).unwrap();
        for e in est {
            assert!(e.singular);
            assert!(e.force.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn missing_torques_rejected() {
        let frames = vec![SensorFrame::default(); 40];
        assert_eq!(grf_threshold_detect(&frames, &GrfConfig::default(), &geom()), Err(BaselineError::MissingTorques { frame: 0 }));
    }

    #[test]
    fn small_forces_never_detect() {
        let frames: Vec<SensorFrame> = (0..100)
            .map(|k| SensorFrame {
                timestamp: k as f64 * 1e-3,
                q: [0.0, -0.8, 1.6, 0.0, -0.8, 1.6, 0.0, -0.8, 1.6, 0.0, -0.8, 1.6],
                torque: Some([0.3; 12]),
                ..Default::default()
            })
            .collect();
        let c = grf_threshold_detect(&frames, &GrfConfig::default(), &geom()).unwrap();
        assert!(c.iter().all(|s| s.code() == 0));
    }

    #[test]
    fn flips_at_threshold_crossings() {
        let fz = vec![vec![0.0, 10.0, 15.0, 15.000001, 30.0, -20.0, 14.9]];
        let got: Vec<bool> = threshold_forces(&fz, 15.0).iter().map(|c| c.legs[0]).collect();
        assert_eq!(got, vec![false, false, false, true, true, true, false]);
    }

    #[test]
    fn trot_schedule_pairs() {
        let s = GaitSchedule::trot(0.5, 0.5).unwrap();
        for k in 0..1000 {
            let c = s.contact_at(k as f64 * 1.3e-3);
            assert_eq!(c.legs[0], c.legs[3]);
            assert_ne!(c.legs[0], c.legs[1]);
            assert_eq!(c.legs[1], c.legs[2]);
        }
    }

    #[test]
    fn near_unit_duty_always_stance() {
        let s = GaitSchedule::new(0.5, vec![0.0, 0.25, 0.5, 0.75], 1.0 - 1e-12, 0.0).unwrap();
        let c = gait_cycle_detect(&(0..500).map(|k| k as f64 * 7e-3).collect::<Vec<_>>(), &s);
        assert!(c.iter().all(|c| c.code() == 15));
    }

    #[test]
    fn invalid_schedules() {
        assert!(GaitSchedule::new(0.0, vec![0.0], 0.5, 0.0).is_err());
        assert!(GaitSchedule::new(0.5, vec![1.0], 0.5, 0.0).is_err());
        assert!(GaitSchedule::new(0.5, vec![0.0], 1.0, 0.0).is_err());
        assert!(GrfConfig { threshold: 0.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn schedule_matches_simulator_phase() {
        let spec = GaitSpec { bounce_amplitude: 0.0, ..GaitSpec::trot() };
        let out = simulate(&spec, 5.0, &geom()).unwrap();
        let ts: Vec<f64> = out.frames.iter().map(|f| f.timestamp).collect();
        let pred = gait_cycle_detect(&ts, &GaitSchedule::from_spec(&spec).unwrap());
        let r = classification_metrics(&pred, &out.true_contacts).unwrap();
        assert_eq!(r.full_state_accuracy, 1.0);

        let jittered = GaitSpec { jitter: 0.05, ..spec };
        let out = simulate(&jittered, 5.0, &geom()).unwrap();
        let pred = gait_cycle_detect(&ts, &GaitSchedule::from_spec(&jittered).unwrap());
        let r = classification_metrics(&pred, &out.true_contacts).unwrap();
        assert!(r.leg_average_accuracy() < 1.0);
        assert!(r.average_fpr().unwrap() > 0.0);
    }

    #[test]
    fn grf_baseline_is_weak_but_informative() {
        let out = simulate(&GaitSpec::trot(), 5.0, &geom()).unwrap();
        let pred = grf_threshold_detect(&out.frames, &GrfConfig::default(), &geom()).unwrap();
        let r = classification_metrics(&pred, &out.true_contacts).unwrap();
        for leg in 0..4 {
            let acc = r.leg_accuracy(leg);
            assert!((0.6..=0.95).contains(&acc), "leg {leg}: {acc}");
        }
    }

    proptest! {
        #[test]
        fn schedule_is_periodic(t in 0.0f64..20.0, period in 0.2f64..1.5, duty in 0.1f64..0.9, off in 0.0f64..1.0) {
            let s = GaitSchedule::new(period, vec![off], duty, 0.0).unwrap();
            let phase = (t / period + off).rem_euclid(1.0);
            prop_assume!((phase - duty).abs() > 1e-9 && phase > 1e-9 && phase < 1.0 - 1e-9);
            prop_assert_eq!(s.in_stance(0, t), s.in_stance(0, t + period));
        }

        #[test]
        fn threshold_monotone(fz in proptest::collection::vec(-60.0f64..60.0, 1..50), lo in 1.0f64..30.0, d in 0.0f64..30.0) {
            let a = threshold_forces(&[fz.clone()], lo);
            let b = threshold_forces(&[fz], lo + d);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!(!y.legs[0] || x.legs[0]);
            }
        }

        #[test]
        fn estimate_is_linear(t1 in proptest::array::uniform12(-5.0f64..5.0), t2 in proptest::array::uniform12(-5.0f64..5.0), s in -3.0f64..3.0) {
            let alpha = vec![JointAngles::new(0.1, -0.9, 1.7); 4];
            let g = geom();
            let mix: Vec<f64> = t1.iter().zip(&t2).map(|(a, b)| a + s * b).collect();
            let (a, b, m) = (estimate_grf(&t1, &alpha, &g).unwrap(), estimate_grf(&t2, &alpha, &g).unwrap(), estimate_grf(&mix, &alpha, &g).unwrap());
            for leg in 0..4 {
                prop_assert!((m[leg].force - (a[leg].force + b[leg].force * s)).norm() < 1e-8);
            }
        }
    }
}
