//! Contact-aided right-invariant extended Kalman filter.
//!
//! Error coordinates are ordered `[φ, v, p, d_1, …]`, matching the tangent
//! layout of [`GroupElement`] with columns `[v, p, d_1, …]`.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use thiserror::Error;

use crate::dataio::ContactState;
use crate::kinematics::{fk_jacobian, fk_position, JointAngles, RobotGeometry};
use crate::liegroup::{skew, so3_exp, GroupElement, LieError, Rotation};

/// Largest accepted propagation step (s).
pub const MAX_DT: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FilterError {
    #[error("propagation step must be positive, got {0}")]
    NonPositiveDt(f64),
    #[error("propagation step {0} s exceeds the {MAX_DT} s cap")]
    DtTooLarge(f64),
    #[error("leg {0} has no contact column")]
    UnregisteredContact(usize),
    #[error("leg {0} already has a contact column")]
    AlreadyRegistered(usize),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("contact vector covers {got} legs, geometry has {expected}")]
    LegCountMismatch { expected: usize, got: usize },
    #[error("innovation covariance is not positive definite")]
    SingularInnovation,
    #[error(transparent)]
    Lie(#[from] LieError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseParams {
    /// Gyroscope white noise Σ^g (rad²/s²).
    pub gyro: Matrix3<f64>,
    /// Accelerometer white noise Σ^a (m²/s⁴).
    pub accel: Matrix3<f64>,
    /// Contact-point velocity noise Σ^v (m²/s²).
    pub contact_vel: Matrix3<f64>,
    /// Encoder noise Σ^α (rad²).
    pub encoder: Matrix3<f64>,
    pub gravity: Vector3<f64>,
    /// Isotropic prior added to a new contact's position covariance (m²).
    pub contact_prior: f64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self {
            gyro: Matrix3::identity() * 1e-4,
            accel: Matrix3::identity() * 1e-2,
            contact_vel: Matrix3::identity() * 1e-2,
            encoder: Matrix3::identity() * 1e-4,
            gravity: Vector3::new(0.0, 0.0, -9.81),
            contact_prior: 1e-4,
        }
    }
}

impl NoiseParams {
    /// All covariances zero; gravity and prior kept.
    pub fn noiseless() -> Self {
        Self {
            gyro: Matrix3::zeros(),
            accel: Matrix3::zeros(),
            contact_vel: Matrix3::zeros(),
            encoder: Matrix3::zeros(),
            contact_prior: 0.0,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    pub gyro: Vector3<f64>,
    pub accel: Vector3<f64>,
    pub timestamp: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    /// Columns `[v, p, d_…]`.
    pub mean: GroupElement,
    /// `(leg, column)` pairs; columns start at 2.
    pub contacts: Vec<(usize, usize)>,
    pub covariance: DMatrix<f64>,
    pub timestamp: f64,
    /// Most recent IMU sample, held over the next propagation interval.
    pub last_imu: Option<ImuSample>,
}

impl FilterState {
    pub fn new(rotation: Rotation, velocity: Vector3<f64>, position: Vector3<f64>, covariance: DMatrix<f64>, timestamp: f64) -> Self {
        assert_eq!(covariance.shape(), (9, 9), "base covariance must be 9x9");
        Self { mean: GroupElement::new(rotation, vec![velocity, position]), contacts: Vec::new(), covariance, timestamp, last_imu: None }
    }

    pub fn rotation(&self) -> &Rotation {
        &self.mean.rotation
    }

    pub fn velocity(&self) -> &Vector3<f64> {
        &self.mean.columns[0]
    }

    pub fn position(&self) -> &Vector3<f64> {
        &self.mean.columns[1]
    }

    pub fn dim(&self) -> usize {
        self.covariance.nrows()
    }

    pub fn contact_column(&self, leg: usize) -> Option<usize> {
        self.contacts.iter().find(|(l, _)| *l == leg).map(|(_, c)| *c)
    }

    pub fn contact_position(&self, leg: usize) -> Option<&Vector3<f64>> {
        self.contact_column(leg).map(|c| &self.mean.columns[c])
    }

    pub fn is_registered(&self, leg: usize) -> bool {
        self.contact_column(leg).is_some()
    }

    fn check_covariance(&self) {
        let p = &self.covariance;
        debug_assert!((p - p.transpose()).abs().max() <= 1e-10 * p.abs().max().max(1.0), "covariance not symmetric");
        debug_assert!(p.clone().symmetric_eigenvalues().min() > -1e-9 * p.abs().max().max(1.0), "covariance not PSD");
    }
}

fn symmetrize(p: &mut DMatrix<f64>) {
    let n = p.nrows();
    for i in 0..n {
        for j in 0..i {
            let m = 0.5 * (p[(i, j)] + p[(j, i)]);
            p[(i, j)] = m;
            p[(j, i)] = m;
        }
    }
}

fn finite3(v: &Vector3<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Discrete transition `Φ = exp(A dt)` of the right-invariant error.
pub fn transition_matrix(dim: usize, gravity: &Vector3<f64>, dt: f64) -> DMatrix<f64> {
    let mut phi = DMatrix::identity(dim, dim);
    let gx = skew(gravity);
    phi.fixed_view_mut::<3, 3>(3, 0).copy_from(&(gx * dt));
    phi.fixed_view_mut::<3, 3>(6, 0).copy_from(&(gx * (0.5 * dt * dt)));
    phi.fixed_view_mut::<3, 3>(6, 3).copy_from(&(Matrix3::identity() * dt));
    phi
}

/// IMU propagation over `dt` with the held sample.
pub fn propagate(state: &FilterState, imu: &ImuSample, dt: f64, noise: &NoiseParams) -> Result<FilterState, FilterError> {
    if !(dt > 0.0) {
        return Err(FilterError::NonPositiveDt(dt));
    }
    if dt > MAX_DT {
        return Err(FilterError::DtTooLarge(dt));
    }
    if !finite3(&imu.gyro) || !finite3(&imu.accel) {
        return Err(FilterError::NonFinite("IMU sample"));
    }
    let r = state.mean.rotation;
    let v = state.mean.columns[0];
    let p = state.mean.columns[1];
    let acc = r * imu.accel + noise.gravity;

    let mut next = state.clone();
    next.mean.rotation = r * so3_exp(&(imu.gyro * dt));
    next.mean.columns[0] = v + acc * dt;
    next.mean.columns[1] = p + v * dt + acc * (0.5 * dt * dt);
    next.timestamp = state.timestamp + dt;

    let n = state.dim();
    let phi = transition_matrix(n, &noise.gravity, dt);
    let mut qc = DMatrix::zeros(n, n);
    qc.fixed_view_mut::<3, 3>(0, 0).copy_from(&noise.gyro);
    qc.fixed_view_mut::<3, 3>(3, 3).copy_from(&noise.accel);
    for &(_, col) in &state.contacts {
        let i = 3 * (col + 1);
        qc.fixed_view_mut::<3, 3>(i, i).copy_from(&noise.contact_vel);
    }
    let ad = state.mean.adjoint();
    let qd = &phi * (&ad * qc * ad.transpose() * dt) * phi.transpose();
    let mut cov = &phi * &state.covariance * phi.transpose() + qd;
    symmetrize(&mut cov);
    next.covariance = cov;
    next.check_covariance();
    Ok(next)
}

/// Adds a contact column at `d̄ = p̄ + R̄ h_p(α̃)`.
pub fn augment_contact(
    state: &FilterState,
    leg: usize,
    alpha: &JointAngles,
    geom: &RobotGeometry,
    noise: &NoiseParams,
) -> Result<FilterState, FilterError> {
    if state.is_registered(leg) {
        return Err(FilterError::AlreadyRegistered(leg));
    }
    if !finite3(alpha) {
        return Err(FilterError::NonFinite("joint angles"));
    }
    let lg = &geom.legs[leg];
    let r = state.mean.rotation;
    let d = state.mean.columns[1] + r * fk_position(lg, alpha);

    let mut next = state.clone();
    let col = next.mean.columns.len();
    next.mean.columns.push(d);
    next.contacts.push((leg, col));

    let n = state.dim();
    let mut f = DMatrix::zeros(n + 3, n);
    f.view_mut((0, 0), (n, n)).fill_with_identity();
    f.fixed_view_mut::<3, 3>(n, 6).fill_with_identity();
    let rj = r * fk_jacobian(lg, alpha);
    let mut cov = &f * &state.covariance * f.transpose();
    let extra = rj * noise.encoder * rj.transpose() + Matrix3::identity() * noise.contact_prior;
    let mut block = cov.fixed_view_mut::<3, 3>(n, n);
    block += extra;
    symmetrize(&mut cov);
    next.covariance = cov;
    next.check_covariance();
    Ok(next)
}

/// Drops a contact column and its covariance rows and columns.
pub fn marginalize_contact(state: &FilterState, leg: usize) -> Result<FilterState, FilterError> {
    let col = state.contact_column(leg).ok_or(FilterError::UnregisteredContact(leg))?;
    let mut next = state.clone();
    next.mean.columns.remove(col);
    next.contacts.retain(|(l, _)| *l != leg);
    for (_, c) in next.contacts.iter_mut() {
        if *c > col {
            *c -= 1;
        }
    }
    let start = 3 * (col + 1);
    next.covariance = state.covariance.clone().remove_rows(start, 3).remove_columns(start, 3);
    Ok(next)
}

/// Stacked kinematic correction over `active` legs.
pub fn update_contact_kinematics(
    state: &FilterState,
    alphas: &[JointAngles],
    active: &[usize],
    geom: &RobotGeometry,
    noise: &NoiseParams,
) -> Result<FilterState, FilterError> {
    if active.is_empty() {
        return Ok(state.clone());
    }
    let n = state.dim();
    let m = 3 * active.len();
    let r = state.mean.rotation;
    let p = state.mean.columns[1];
    let mut h = DMatrix::zeros(m, n);
    let mut z = DVector::zeros(m);
    let mut big_n = DMatrix::zeros(m, m);
    for (k, &leg) in active.iter().enumerate() {
        let col = state.contact_column(leg).ok_or(FilterError::UnregisteredContact(leg))?;
        let alpha = alphas.get(leg).ok_or(FilterError::UnregisteredContact(leg))?;
        if !finite3(alpha) {
            return Err(FilterError::NonFinite("joint angles"));
        }
        let lg = &geom.legs[leg];
        let d = state.mean.columns[col];
        let innov = r * fk_position(lg, alpha) - (d - p);
        z.fixed_rows_mut::<3>(3 * k).copy_from(&innov);
        h.fixed_view_mut::<3, 3>(3 * k, 6).copy_from(&(-Matrix3::identity()));
        h.fixed_view_mut::<3, 3>(3 * k, 3 * (col + 1)).fill_with_identity();
        let rj = r * fk_jacobian(lg, alpha);
        big_n.fixed_view_mut::<3, 3>(3 * k, 3 * k).copy_from(&(rj * noise.encoder * rj.transpose()));
    }
    let pht = &state.covariance * h.transpose();
    let mut s = &h * &pht + &big_n;
    symmetrize(&mut s);
    let chol = s.cholesky().ok_or(FilterError::SingularInnovation)?;
    let k_gain = chol.solve(&pht.transpose()).transpose();
    let delta = &k_gain * z;
    let correction = GroupElement::exp_k(&delta, state.mean.k())?;

    let mut next = state.clone();
    next.mean = correction.compose(&state.mean)?;
    let ikh = DMatrix::identity(n, n) - &k_gain * &h;
    let mut cov = &ikh * &state.covariance * ikh.transpose() + &k_gain * big_n * k_gain.transpose();
    symmetrize(&mut cov);
    next.covariance = cov;
    next.check_covariance();
    Ok(next)
}

/// One filter cycle: propagate to `imu.timestamp`, reconcile contact columns
/// with `contact`, then correct on every leg in contact.
pub fn step(
    state: &FilterState,
    imu: &ImuSample,
    alphas: &[JointAngles],
    contact: &ContactState,
    geom: &RobotGeometry,
    noise: &NoiseParams,
) -> Result<FilterState, FilterError> {
    if contact.n_legs() != geom.n_legs() || alphas.len() != geom.n_legs() {
        return Err(FilterError::LegCountMismatch { expected: geom.n_legs(), got: contact.n_legs().min(alphas.len()) });
    }
    if !imu.timestamp.is_finite() {
        return Err(FilterError::NonFinite("timestamp"));
    }
    let held = state.last_imu.unwrap_or(*imu);
    let mut s = propagate(state, &held, imu.timestamp - state.timestamp, noise)?;
    s.timestamp = imu.timestamp;
    s.last_imu = Some(*imu);

    let registered: Vec<usize> = s.contacts.iter().map(|(l, _)| *l).collect();
    for leg in registered {
        if !contact.legs[leg] {
            s = marginalize_contact(&s, leg)?;
        }
    }
    let mut active = Vec::new();
    for (leg, &c) in contact.legs.iter().enumerate() {
        if c {
            if !s.is_registered(leg) {
                s = augment_contact(&s, leg, &alphas[leg], geom, noise)?;
            }
            active.push(leg);
        }
    }
    update_contact_kinematics(&s, alphas, &active, geom, noise)
}
