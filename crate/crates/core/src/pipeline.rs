//! Glue between the modules: running the filter over a recorded sequence,
//! sliding-window inference, and the synthetic training corpus.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::contactnet::{self, ArchitectureSpec, DatasetView, NetError, NetworkParams};
use crate::dataio::{ContactState, SensorFrame, WindowRef, WindowedDataset};
use crate::evalkit::Pose;
use crate::gaitsim::{GaitKind, GaitSpec};
use crate::inekf::{self, FilterError, FilterState, ImuSample, NoiseParams};
use crate::kinematics::{JointAngles, RobotGeometry};

/// Initial filter state at a known pose and velocity.
pub fn initial_state(rotation: Matrix3<f64>, velocity: Vector3<f64>, position: Vector3<f64>, timestamp: f64, sigma: f64) -> FilterState {
    let p0 = nalgebra::DMatrix::identity(9, 9) * (sigma * sigma);
    FilterState::new(rotation, velocity, position, p0, timestamp)
}

pub fn frame_imu(frame: &SensorFrame) -> ImuSample {
    ImuSample { gyro: frame.gyro.into(), accel: frame.accel.into(), timestamp: frame.timestamp }
}

/// Runs the filter over `frames[1..]` with the given contact stream and
/// returns one estimated pose per frame. `observe` sees every state.
pub fn run_filter(
    frames: &[SensorFrame],
    contacts: &[ContactState],
    init: FilterState,
    geom: &RobotGeometry,
    noise: &NoiseParams,
    mut observe: impl FnMut(usize, &FilterState),
) -> Result<Vec<Pose>, FilterError> {
    if contacts.len() != frames.len() {
        return Err(FilterError::LegCountMismatch { expected: frames.len(), got: contacts.len() });
    }
    let n_legs = geom.n_legs();
    let mut state = init;
    observe(0, &state);
    let mut poses = Vec::with_capacity(frames.len());
    poses.push(Pose::new(state.timestamp, *state.rotation(), *state.position()));
    for (k, f) in frames.iter().enumerate().skip(1) {
        let alphas: Vec<JointAngles> = (0..n_legs).map(|leg| f.joint_angles(leg)).collect();
        state = inekf::step(&state, &frame_imu(f), &alphas, &contacts[k], geom, noise)?;
        observe(k, &state);
        poses.push(Pose::new(f.timestamp, *state.rotation(), *state.position()));
    }
    Ok(poses)
}

/// Classifies every frame from the window ending at it. Frames without a full
/// history are reported as no contact.
pub fn predict_sequence(
    params: &NetworkParams,
    spec: &ArchitectureSpec,
    frames: &[SensorFrame],
    n_legs: usize,
) -> Result<Vec<ContactState>, NetError> {
    let w = spec.window;
    let mut dataset = WindowedDataset::new(w, n_legs).map_err(|e| NetError::ShapeMismatch(e.to_string()))?;
    dataset.push_sequence(frames);
    let refs: Vec<WindowRef> = (w.saturating_sub(1)..frames.len()).map(|end| WindowRef { sequence: 0, end }).collect();
    let view = DatasetView { dataset: &dataset, refs };
    let preds = contactnet::predict_source(params, spec, &view, 128)?;
    let mut out = vec![ContactState::none(n_legs); frames.len() - preds.len()];
    for (code, _) in preds {
        out.push(ContactState::from_code(code, n_legs).map_err(|e| NetError::ShapeMismatch(e.to_string()))?);
    }
    Ok(out)
}

/// Varied trot, pronk and air-trot specs for building a training corpus.
pub fn corpus_specs(count: usize, seed: u64) -> Vec<GaitSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let base = match i % 5 {
                0 | 1 => GaitSpec::trot(),
                2 | 3 => GaitSpec::pronk(),
                _ => GaitSpec::air_trot(),
            };
            let speed_scale = rng.random_range(0.6..1.4);
            GaitSpec {
                speed: base.speed * speed_scale,
                turn_rate: if base.gait == GaitKind::AirTrot { 0.0 } else { rng.random_range(-0.3..0.3) },
                period: base.period * rng.random_range(0.9..1.1),
                jitter: 0.05,
                step_height: base.step_height * rng.random_range(0.8..1.2),
                seed: rng.random(),
                ..base
            }
        })
        .collect()
}
