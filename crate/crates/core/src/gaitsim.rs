//! Kinematic quadruped gait simulator producing sensor streams, true contacts
//! and the true body trajectory.
//!
//! The body follows a planar constant-speed, constant-turn-rate path with a
//! vertical bob. Stance feet are fixed in the world; swing feet follow a
//! cycloid between footholds. A touchdown bounce lifts the foot briefly after
//! landing, and the foot only counts as in contact once it has settled.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::dataio::{self, ContactState, DataError, SensorFrame, Window, N_JOINTS};
use crate::evalkit::Pose;
use crate::inekf::ImuSample;
use crate::kinematics::{fk_jacobian, fk_position, ik_position, JointAngles, RobotGeometry};

pub const GRAVITY: f64 = 9.81;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("foot target of leg {leg} unreachable at t = {time:.4} s")]
    UnreachableFootTarget { leg: usize, time: f64 },
    #[error("invalid gait spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GaitKind {
    Trot,
    Pronk,
    Stand,
    /// Trot pattern performed with the body held off the ground.
    AirTrot,
}

impl std::str::FromStr for GaitKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "trot" => Ok(GaitKind::Trot),
            "pronk" => Ok(GaitKind::Pronk),
            "stand" => Ok(GaitKind::Stand),
            "air-trot" | "air_trot" => Ok(GaitKind::AirTrot),
            _ => Err(format!("unknown gait {s:?} (expected trot, pronk, stand or air-trot)")),
        }
    }
}

/// Per-channel Gaussian noise standard deviations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorNoise {
    pub encoder: f64,
    pub encoder_vel: f64,
    pub gyro: f64,
    pub accel: f64,
    pub torque: f64,
}

impl SensorNoise {
    pub fn none() -> Self {
        Self { encoder: 0.0, encoder_vel: 0.0, gyro: 0.0, accel: 0.0, torque: 0.0 }
    }
}

impl Default for SensorNoise {
    fn default() -> Self {
        Self { encoder: 5e-4, encoder_vel: 0.02, gyro: 2e-3, accel: 0.05, torque: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaitSpec {
    pub gait: GaitKind,
    /// Gait period (s).
    pub period: f64,
    pub duty: f64,
    /// Swing apex height (m).
    pub step_height: f64,
    /// Nominal hip height above ground (m).
    pub body_height: f64,
    pub speed: f64,
    /// Yaw rate (rad/s).
    pub turn_rate: f64,
    /// Touchdown and liftoff jitter, uniform in ±fraction of the period.
    pub jitter: f64,
    pub bounce_amplitude: f64,
    /// Duration of the touchdown bounce (s).
    pub bounce_decay: f64,
    /// Vertical body oscillation amplitude (m).
    pub bob_amplitude: f64,
    /// Extra leg extension when walking in the air (m).
    pub air_drop: f64,
    pub body_mass: f64,
    pub leg_mass: f64,
    pub noise: SensorNoise,
    pub encoder_hz: f64,
    pub imu_hz: f64,
    pub seed: u64,
}

impl Default for GaitSpec {
    fn default() -> Self {
        Self {
            gait: GaitKind::Trot,
            period: 0.5,
            duty: 0.5,
            step_height: 0.08,
            body_height: 0.28,
            speed: 0.5,
            turn_rate: 0.0,
            jitter: 0.0,
            bounce_amplitude: 0.008,
            bounce_decay: 0.04,
            bob_amplitude: 0.005,
            air_drop: 0.03,
            body_mass: 9.0,
            leg_mass: 0.6,
            noise: SensorNoise::default(),
            encoder_hz: 500.0,
            imu_hz: 1000.0,
            seed: 0,
        }
    }
}

impl GaitSpec {
    pub fn trot() -> Self {
        Self::default()
    }

    pub fn pronk() -> Self {
        Self { gait: GaitKind::Pronk, period: 0.4, duty: 0.4, speed: 0.3, bob_amplitude: 0.01, ..Self::default() }
    }

    pub fn stand() -> Self {
        Self { gait: GaitKind::Stand, speed: 0.0, bob_amplitude: 0.0, bounce_amplitude: 0.0, ..Self::default() }
    }

    pub fn air_trot() -> Self {
        Self { gait: GaitKind::AirTrot, bounce_amplitude: 0.0, bob_amplitude: 0.0, ..Self::default() }
    }

    pub fn noiseless(mut self) -> Self {
        self.noise = SensorNoise::none();
        self
    }

    /// Phase offsets per leg (RF, LF, RH, LH).
    pub fn phase_offsets(&self) -> [f64; 4] {
        match self.gait {
            GaitKind::Trot | GaitKind::AirTrot => [0.0, 0.5, 0.5, 0.0],
            GaitKind::Pronk | GaitKind::Stand => [0.0; 4],
        }
    }

    fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidSpec(m.to_string()));
        if !(self.period > 0.0) {
            return bad("period must be positive");
        }
        if !(self.duty > 0.0 && self.duty < 1.0) {
            return bad("duty must lie in (0, 1)");
        }
        if !(self.encoder_hz > 0.0 && self.imu_hz > 0.0) {
            return bad("sample rates must be positive");
        }
        if self.imu_hz < self.encoder_hz {
            return bad("IMU rate must not be below the encoder rate");
        }
        if !(0.0..0.25).contains(&self.jitter) {
            return bad("jitter must lie in [0, 0.25)");
        }
        let min_phase = self.duty.min(1.0 - self.duty) - 2.0 * self.jitter;
        if min_phase * self.period <= self.bounce_window() {
            return bad("stance or swing too short for jitter and bounce");
        }
        Ok(())
    }

    fn bounce_window(&self) -> f64 {
        if self.bounce_amplitude > 0.0 {
            self.bounce_decay
        } else {
            0.0
        }
    }

    fn bob_frequency(&self) -> f64 {
        match self.gait {
            GaitKind::Trot => 2.0 / self.period,
            _ => 1.0 / self.period,
        }
    }
}

/// Planar body motion with bob; rotation is yaw only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyState {
    pub yaw: f64,
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
}

impl BodyState {
    pub fn rotation(&self) -> Matrix3<f64> {
        Rotation3::from_axis_angle(&Vector3::z_axis(), self.yaw).into_inner()
    }
}

/// Ground truth at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub time: f64,
    pub body: BodyState,
    pub yaw_rate: f64,
    /// Foot positions and velocities in the world frame.
    pub foot_world: [Vector3<f64>; 4],
    pub foot_world_vel: [Vector3<f64>; 4],
    pub foot_world_acc: [Vector3<f64>; 4],
    /// Foot positions and velocities relative to the body, body axes.
    pub foot_body: [Vector3<f64>; 4],
    pub foot_body_vel: [Vector3<f64>; 4],
    pub in_stance: [bool; 4],
    pub in_bounce: [bool; 4],
    pub in_contact: [bool; 4],
    /// Ground force on each foot, world frame (N).
    pub ground_force: [Vector3<f64>; 4],
}

#[derive(Debug, Clone, Copy)]
struct Stance {
    touchdown: f64,
    liftoff: f64,
    foothold: Vector3<f64>,
}

#[derive(Debug, Clone, Copy)]
struct FootMotion {
    p: Vector3<f64>,
    v: Vector3<f64>,
    a: Vector3<f64>,
    stance: bool,
    bounce: bool,
}

/// Analytic ground-truth generator for one gait sequence.
#[derive(Debug, Clone)]
pub struct Simulator {
    pub spec: GaitSpec,
    pub geometry: RobotGeometry,
    pub duration: f64,
    stances: Vec<Vec<Stance>>,
}

impl Simulator {
    pub fn new(spec: &GaitSpec, duration: f64, geometry: &RobotGeometry) -> Result<Self, SimError> {
        spec.validate()?;
        if geometry.n_legs() != 4 {
            return Err(SimError::InvalidSpec("the simulator models four legs".into()));
        }
        if !(duration >= 2.0 * spec.period) {
            return Err(SimError::InvalidSpec(format!("duration must be at least two periods ({} s)", 2.0 * spec.period)));
        }
        let mut sim = Self { spec: spec.clone(), geometry: geometry.clone(), duration, stances: Vec::new() };
        sim.stances = sim.schedule();
        Ok(sim)
    }

    fn schedule(&self) -> Vec<Vec<Stance>> {
        let s = &self.spec;
        let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
        let k_max = (self.duration / s.period).ceil() as i64 + 2;
        let offsets = s.phase_offsets();
        (0..4)
            .map(|leg| {
                (-2..=k_max)
                    .map(|k| {
                        let mut jit = || if s.jitter > 0.0 { rng.random_range(-s.jitter..s.jitter) * s.period } else { 0.0 };
                        let touchdown = (k as f64 - offsets[leg]) * s.period + jit();
                        let liftoff = touchdown + s.duty * s.period + jit();
                        let mid = self.body_at(0.5 * (touchdown + liftoff), false);
                        let nominal = self.nominal_foot(leg);
                        let mut foothold = mid.position + mid.rotation() * Vector3::new(nominal.x, nominal.y, 0.0);
                        foothold.z = 0.0;
                        Stance { touchdown, liftoff, foothold }
                    })
                    .collect()
            })
            .collect()
    }

    /// Nominal foot point under the hip, body frame.
    fn nominal_foot(&self, leg: usize) -> Vector3<f64> {
        let g = &self.geometry.legs[leg];
        g.hip + Vector3::new(0.0, g.lateral_sign * g.abd, -self.spec.body_height)
    }

    /// Body motion; `physical = false` gives the walking reference used for
    /// footholds and for the air-trot leg pattern.
    fn body_at(&self, t: f64, physical: bool) -> BodyState {
        let s = &self.spec;
        let held = physical && s.gait == GaitKind::AirTrot;
        if s.gait == GaitKind::Stand || held {
            return BodyState {
                yaw: 0.0,
                position: Vector3::new(0.0, 0.0, s.body_height),
                velocity: Vector3::zeros(),
                acceleration: Vector3::zeros(),
            };
        }
        let (v, w) = (s.speed, if s.gait == GaitKind::AirTrot { 0.0 } else { s.turn_rate });
        let yaw = w * t;
        let (sy, cy) = yaw.sin_cos();
        let (x, y) = if w.abs() < 1e-12 { (v * t, 0.0) } else { (v / w * sy, v / w * (1.0 - cy)) };
        let (mut z, mut vz, mut az) = (s.body_height, 0.0, 0.0);
        if s.gait != GaitKind::AirTrot && s.bob_amplitude > 0.0 {
            let om = 2.0 * PI * s.bob_frequency();
            let ph = om * (t - 0.5 * s.duty * s.period);
            z -= s.bob_amplitude * ph.cos();
            vz = s.bob_amplitude * om * ph.sin();
            az = s.bob_amplitude * om * om * ph.cos();
        }
        BodyState {
            yaw,
            position: Vector3::new(x, y, z),
            velocity: Vector3::new(v * cy, v * sy, vz),
            acceleration: Vector3::new(-v * w * sy, v * w * cy, az),
        }
    }

    fn stance_index(&self, leg: usize, t: f64) -> usize {
        let st = &self.stances[leg];
        st.partition_point(|s| s.touchdown <= t).saturating_sub(1)
    }

    /// Reference-world foot position, velocity and acceleration, with stance flags.
    fn foot_reference(&self, leg: usize, t: f64) -> FootMotion {
        let s = &self.spec;
        if s.gait == GaitKind::Stand {
            let body = self.body_at(t, false);
            let mut p = body.position + self.nominal_foot(leg);
            p.z = 0.0;
            return FootMotion { p, v: Vector3::zeros(), a: Vector3::zeros(), stance: true, bounce: false };
        }
        let k = self.stance_index(leg, t);
        let cur = self.stances[leg][k];
        if t < cur.liftoff {
            let tau = t - cur.touchdown;
            let window = s.bounce_window();
            let mut p = cur.foothold;
            let (mut v, mut a) = (Vector3::zeros(), Vector3::zeros());
            let bouncing = tau < window;
            if bouncing {
                let (w, ph) = (PI / window, PI * tau / window);
                p.z += s.bounce_amplitude * ph.sin();
                v.z = s.bounce_amplitude * w * ph.cos();
                a.z = -s.bounce_amplitude * w * w * ph.sin();
            }
            return FootMotion { p, v, a, stance: true, bounce: bouncing };
        }
        let next = self.stances[leg][k + 1];
        let tsw = next.touchdown - cur.liftoff;
        let u = (t - cur.liftoff) / tsw;
        let step = next.foothold - cur.foothold;
        let ang = 2.0 * PI * u;
        let mut p = cur.foothold + step * (u - ang.sin() / (2.0 * PI));
        let mut v = step * ((1.0 - ang.cos()) / tsw);
        let mut a = step * (2.0 * PI * ang.sin() / (tsw * tsw));
        p.z += s.step_height * (1.0 - ang.cos()) / 2.0;
        v.z += s.step_height * PI * ang.sin() / tsw;
        a.z += s.step_height * 2.0 * PI * PI * ang.cos() / (tsw * tsw);
        FootMotion { p, v, a, stance: false, bounce: false }
    }

    fn load_profile(&self, leg: usize, t: f64) -> f64 {
        let s = &self.spec;
        let weight = s.body_mass * GRAVITY;
        match s.gait {
            GaitKind::Stand => weight / 4.0,
            GaitKind::AirTrot => 0.0,
            GaitKind::Trot | GaitKind::Pronk => {
                let share = if s.gait == GaitKind::Trot { 2.0 } else { 4.0 };
                let st = self.stances[leg][self.stance_index(leg, t)];
                let start = st.touchdown + s.bounce_window();
                let len = st.liftoff - start;
                let tau = (t - start) / len;
                if (0.0..1.0).contains(&tau) {
                    weight / share * PI / 2.0 * (PI * tau).sin()
                } else {
                    0.0
                }
            }
        }
    }

    pub fn truth(&self, t: f64) -> Truth {
        let body = self.body_at(t, true);
        let reference = self.body_at(t, false);
        let air = self.spec.gait == GaitKind::AirTrot;
        let r = body.rotation();
        let yaw_rate = if matches!(self.spec.gait, GaitKind::Trot | GaitKind::Pronk) { self.spec.turn_rate } else { 0.0 };
        let omega = Vector3::new(0.0, 0.0, yaw_rate);
        let mut out = Truth {
            time: t,
            body,
            yaw_rate,
            foot_world: [Vector3::zeros(); 4],
            foot_world_vel: [Vector3::zeros(); 4],
            foot_world_acc: [Vector3::zeros(); 4],
            foot_body: [Vector3::zeros(); 4],
            foot_body_vel: [Vector3::zeros(); 4],
            in_stance: [false; 4],
            in_bounce: [false; 4],
            in_contact: [false; 4],
            ground_force: [Vector3::zeros(); 4],
        };
        for leg in 0..4 {
            let FootMotion { p, v, a, stance, bounce } = self.foot_reference(leg, t);
            if air {
                // express the walking pattern relative to its reference body, then hang it from the held body
                let rr = reference.rotation();
                let mut rel = rr.transpose() * (p - reference.position);
                let rel_vel = rr.transpose() * (v - reference.velocity);
                rel.z -= self.spec.air_drop;
                out.foot_body[leg] = rel;
                out.foot_body_vel[leg] = rel_vel;
                out.foot_world[leg] = body.position + r * rel;
                out.foot_world_vel[leg] = r * rel_vel;
                out.foot_world_acc[leg] = r * (rr.transpose() * (a - reference.acceleration));
            } else {
                out.foot_world[leg] = p;
                out.foot_world_vel[leg] = v;
                out.foot_world_acc[leg] = a;
                let rel = r.transpose() * (p - body.position);
                out.foot_body[leg] = rel;
                out.foot_body_vel[leg] = r.transpose() * (v - body.velocity) - omega.cross(&rel);
                out.in_stance[leg] = stance;
                out.in_bounce[leg] = bounce;
                out.in_contact[leg] = stance && !bounce;
            }
            out.ground_force[leg] = Vector3::new(0.0, 0.0, self.load_profile(leg, t));
        }
        out
    }

    /// Noiseless joint angles and rates at `t`.
    pub fn joints(&self, truth: &Truth) -> Result<([JointAngles; 4], [JointAngles; 4]), SimError> {
        let mut q = [Vector3::zeros(); 4];
        let mut qd = [Vector3::zeros(); 4];
        for leg in 0..4 {
            let g = &self.geometry.legs[leg];
            q[leg] = ik_position(g, &truth.foot_body[leg]).map_err(|_| SimError::UnreachableFootTarget { leg, time: truth.time })?;
            let j = fk_jacobian(g, &q[leg]);
            qd[leg] = j.lu().solve(&truth.foot_body_vel[leg]).ok_or(SimError::UnreachableFootTarget { leg, time: truth.time })?;
        }
        Ok((q, qd))
    }

    /// IMU reading without noise.
    pub fn imu(&self, truth: &Truth) -> ImuSample {
        let r = truth.body.rotation();
        let g = Vector3::new(0.0, 0.0, -GRAVITY);
        ImuSample {
            gyro: Vector3::new(0.0, 0.0, truth.yaw_rate),
            accel: r.transpose() * (truth.body.acceleration - g),
            timestamp: truth.time,
        }
    }
}

/// Everything one simulated sequence produces.
#[derive(Debug, Clone)]
pub struct SimOutput {
    /// IMU-rate frames with encoder channels interpolated; `gt_contact` holds
    /// the true contacts.
    pub frames: Vec<SensorFrame>,
    /// Encoder-rate frames (IMU channels zero).
    pub encoder_frames: Vec<SensorFrame>,
    pub imu: Vec<ImuSample>,
    pub true_contacts: Vec<ContactState>,
    /// True body pose per frame.
    pub trajectory: Vec<Pose>,
    /// True world-frame body velocity per frame.
    pub velocities: Vec<Vector3<f64>>,
}

impl SimOutput {
    pub fn imu_at(&self, k: usize) -> ImuSample {
        self.imu[k]
    }
}

fn sample_times(rate: f64, duration: f64) -> Vec<f64> {
    let n = (duration * rate + 1e-9).floor() as usize;
    (0..=n).map(|k| k as f64 / rate).collect()
}

pub fn simulate(spec: &GaitSpec, duration: f64, geometry: &RobotGeometry) -> Result<SimOutput, SimError> {
    let sim = Simulator::new(spec, duration, geometry)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(1);
    let n = spec.noise;
    let normal = |sd: f64| Normal::new(0.0, sd.max(0.0)).unwrap();
    let (enc_n, encv_n, gyro_n, acc_n, tau_n) =
        (normal(n.encoder), normal(n.encoder_vel), normal(n.gyro), normal(n.accel), normal(n.torque));

    let mut encoder_frames = Vec::new();
    for t in sample_times(spec.encoder_hz, duration) {
        let truth = sim.truth(t);
        let (q, qd) = sim.joints(&truth)?;
        let r = truth.body.rotation();
        let mut f = SensorFrame { timestamp: t, ..Default::default() };
        let mut torque = [0.0; N_JOINTS];
        for leg in 0..4 {
            let g = &geometry.legs[leg];
            let qn = q[leg] + Vector3::from_fn(|_, _| enc_n.sample(&mut rng));
            let qdn = qd[leg] + Vector3::from_fn(|_, _| encv_n.sample(&mut rng));
            let j = fk_jacobian(g, &qn);
            let pf = fk_position(g, &qn) - g.hip;
            let vf = j * qdn;
            // joint torques balancing the ground load and the leg's own inertia
            let inertial = spec.leg_mass * (truth.foot_world_acc[leg] + Vector3::new(0.0, 0.0, GRAVITY));
            let load = truth.ground_force[leg] - inertial;
            let tau = -(fk_jacobian(g, &q[leg]).transpose() * (r.transpose() * load));
            for a in 0..3 {
                f.q[3 * leg + a] = qn[a];
                f.qd[3 * leg + a] = qdn[a];
                f.foot_pos[3 * leg + a] = pf[a];
                f.foot_vel[3 * leg + a] = vf[a];
                torque[3 * leg + a] = tau[a] + tau_n.sample(&mut rng);
            }
        }
        f.torque = Some(torque);
        encoder_frames.push(f);
    }

    let synced = dataio::upsample(&encoder_frames, spec.imu_hz).expect("encoder stream is monotone");
    let mut frames = Vec::with_capacity(synced.len());
    let mut imu = Vec::with_capacity(synced.len());
    let mut true_contacts = Vec::with_capacity(synced.len());
    let mut trajectory = Vec::with_capacity(synced.len());
    let mut velocities = Vec::with_capacity(synced.len());
    for mut f in synced {
        let truth = sim.truth(f.timestamp);
        let mut sample = sim.imu(&truth);
        sample.gyro += Vector3::from_fn(|_, _| gyro_n.sample(&mut rng));
        sample.accel += Vector3::from_fn(|_, _| acc_n.sample(&mut rng));
        f.gyro = sample.gyro.into();
        f.accel = sample.accel.into();
        let contact = ContactState::new(truth.in_contact.to_vec());
        f.gt_contact = Some(contact.clone());
        imu.push(sample);
        true_contacts.push(contact);
        trajectory.push(Pose::new(f.timestamp, truth.body.rotation(), truth.body.position));
        velocities.push(truth.body.velocity);
        frames.push(f);
    }
    Ok(SimOutput { frames, encoder_frames, imu, true_contacts, trajectory, velocities })
}

/// Raw windows labelled with the true contact state at their last frame.
pub fn derive_windows(frames: &[SensorFrame], true_contacts: &[ContactState], w: usize) -> Result<Vec<Window>, DataError> {
    if true_contacts.len() != frames.len() {
        return Err(DataError::SchemaMismatch {
            location: "contacts".into(),
            message: format!("{} contact states for {} frames", true_contacts.len(), frames.len()),
        });
    }
    if w < 2 {
        return Err(DataError::WindowTooSmall(w));
    }
    (w.saturating_sub(1)..frames.len())
        .map(|end| {
            let mut win = dataio::make_window(frames, end, w)?;
            win.label = Some(true_contacts[end].clone());
            Ok(win)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom() -> RobotGeometry {
        RobotGeometry::quadruped(0.062, 0.209, 0.195, 0.19, 0.049)
    }

    #[test]
    fn stand_is_static() {
        let out = simulate(&GaitSpec::stand().noiseless(), 1.0, &geom()).unwrap();
        let g = Vector3::new(0.0, 0.0, GRAVITY);
        for (k, f) in out.frames.iter().enumerate() {
            assert!(out.true_contacts[k].legs.iter().all(|c| *c));
            assert!((Vector3::from(f.accel) - g).norm() < 1e-12);
            assert_eq!(f.foot_pos, out.frames[0].foot_pos);
        }
        let w = derive_windows(&out.frames, &out.true_contacts, 50).unwrap();
        assert!(w.iter().all(|w| w.label.as_ref().unwrap().code() == 15));
    }

    #[test]
    fn air_trot_never_touches() {
        let out = simulate(&GaitSpec::air_trot(), 2.0, &geom()).unwrap();
        assert!(out.true_contacts.iter().all(|c| c.code() == 0));
        let w = derive_windows(&out.frames, &out.true_contacts, 100).unwrap();
        assert!(w.iter().all(|w| w.label.as_ref().unwrap().code() == 0));
        // the legs still move
        let q: Vec<f64> = out.frames.iter().map(|f| f.q[1]).collect();
        let spread = q.iter().cloned().fold(f64::MIN, f64::max) - q.iter().cloned().fold(f64::MAX, f64::min);
        assert!(spread > 0.2);
    }

    #[test]
    fn trot_path_length_and_no_slip() {
        let spec = GaitSpec::trot().noiseless();
        let sim = Simulator::new(&spec, 10.0, &geom()).unwrap();
        let out = simulate(&spec, 10.0, &geom()).unwrap();
        let length: f64 = out.trajectory.windows(2).map(|w| (w[1].position.xy() - w[0].position.xy()).norm()).sum();
        assert!((length - 5.0).abs() < 1e-6, "{length}");

        let h = 1e-6;
        let mut checked = 0;
        for k in 0..10_000 {
            let t = k as f64 * 1e-3;
            let a = sim.truth(t);
            for leg in 0..4 {
                if a.in_contact[leg] {
                    let b = sim.truth(t + h);
                    if b.in_contact[leg] {
                        let v = (b.foot_world[leg] - a.foot_world[leg]) / h;
                        assert!(v.norm() < 1e-9, "leg {leg} slips at {t}: {v:?}");
                        checked += 1;
                    }
                }
            }
        }
        assert!(checked > 15_000);
    }

    #[test]
    fn foot_positions_match_commands() {
        let spec = GaitSpec { turn_rate: 0.3, jitter: 0.05, ..GaitSpec::trot().noiseless() };
        let sim = Simulator::new(&spec, 3.0, &geom()).unwrap();
        for k in 0..3000 {
            let tr = sim.truth(k as f64 * 1e-3);
            let (q, qd) = sim.joints(&tr).unwrap();
            for leg in 0..4 {
                let g = &geom().legs[leg];
                assert!((fk_position(g, &q[leg]) - tr.foot_body[leg]).norm() < 1e-8);
                assert!((fk_jacobian(g, &q[leg]) * qd[leg] - tr.foot_body_vel[leg]).norm() < 1e-8);
            }
        }
    }

    #[test]
    fn body_frame_foot_velocity_is_derivative() {
        let spec = GaitSpec { turn_rate: 0.4, ..GaitSpec::trot().noiseless() };
        let sim = Simulator::new(&spec, 2.0, &geom()).unwrap();
        let h = 1e-6;
        for k in 0..200 {
            let t = 0.0037 + k as f64 * 0.0091;
            let (a, b) = (sim.truth(t - h), sim.truth(t + h));
            let mid = sim.truth(t);
            for leg in 0..4 {
                if a.in_stance[leg] == b.in_stance[leg] {
                    let fd = (b.foot_body[leg] - a.foot_body[leg]) / (2.0 * h);
                    assert!((fd - mid.foot_body_vel[leg]).norm() < 1e-6);
                    let fa = (b.foot_world_vel[leg] - a.foot_world_vel[leg]) / (2.0 * h);
                    assert!((fa - mid.foot_world_acc[leg]).norm() < 1e-4);
                }
            }
        }
    }

    #[test]
    fn imu_double_integration_tracks_truth() {
        let spec = GaitSpec { turn_rate: 0.2, ..GaitSpec::trot().noiseless() };
        let out = simulate(&spec, 10.0, &geom()).unwrap();
        let g = Vector3::new(0.0, 0.0, -GRAVITY);
        let mut yaw = out.trajectory[0].yaw();
        let mut v = out.velocities[0];
        let mut p = out.trajectory[0].position;
        let dt = 1e-3;
        let world_acc = |yaw: f64, a: &ImuSample| Rotation3::from_axis_angle(&Vector3::z_axis(), yaw) * a.accel + g;
        for k in 0..out.imu.len() - 1 {
            let (a0, a1) = (&out.imu[k], &out.imu[k + 1]);
            let yaw1 = yaw + 0.5 * (a0.gyro.z + a1.gyro.z) * dt;
            let (acc0, acc1) = (world_acc(yaw, a0), world_acc(yaw1, a1));
            p += v * dt + (acc0 * 2.0 + acc1) * (dt * dt / 6.0);
            v += (acc0 + acc1) * (0.5 * dt);
            yaw = yaw1;
        }
        let err = (p - out.trajectory.last().unwrap().position).norm();
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn contact_edges_follow_touchdowns() {
        let spec = GaitSpec::trot().noiseless();
        let out = simulate(&spec, 3.0, &geom()).unwrap();
        let sim = Simulator::new(&spec, 3.0, &geom()).unwrap();
        let w = derive_windows(&out.frames, &out.true_contacts, 150).unwrap();
        for (i, win) in w.iter().enumerate() {
            let end = i + 149;
            assert_eq!(win.label.as_ref(), Some(&out.true_contacts[end]));
        }
        for k in 1..out.frames.len() {
            for leg in 0..4 {
                let (prev, cur) = (out.true_contacts[k - 1].legs[leg], out.true_contacts[k].legs[leg]);
                if !prev && cur {
                    let t = out.frames[k].timestamp;
                    let st = sim.stances[leg][sim.stance_index(leg, t)];
                    let settle = st.touchdown + spec.bounce_decay;
                    assert!(t >= settle && t - settle < 1e-3 + 1e-12);
                }
            }
        }
    }

    #[test]
    fn deterministic_and_seeded() {
        let spec = GaitSpec { jitter: 0.05, ..GaitSpec::trot() };
        let a = simulate(&spec, 1.5, &geom()).unwrap();
        let b = simulate(&spec, 1.5, &geom()).unwrap();
        assert_eq!(a.frames, b.frames);
        let c = simulate(&GaitSpec { seed: 9, ..spec }, 1.5, &geom()).unwrap();
        assert_ne!(a.frames, c.frames);
    }

    #[test]
    fn spec_validation() {
        assert!(matches!(simulate(&GaitSpec::trot(), 0.5, &geom()), Err(SimError::InvalidSpec(_))));
        let bad = GaitSpec { duty: 1.0, ..GaitSpec::trot() };
        assert!(Simulator::new(&bad, 2.0, &geom()).is_err());
        let tall = GaitSpec { body_height: 0.6, ..GaitSpec::trot() };
        assert!(matches!(simulate(&tall, 1.0, &geom()), Err(SimError::UnreachableFootTarget { .. })));
    }
}
