//! C interface to the contact-aided filter and the contact classifier.
//!
//! Every function returns an [`LsStatus`]; handles are opaque and must be
//! released with the matching `*_free` function. Matrices are row-major.

use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use legstate::contactnet::{self, ArchitectureSpec, NetError, NetworkParams};
use legstate::dataio::{self, ContactState};
use legstate::inekf::{self, FilterState, ImuSample, NoiseParams};
use legstate::kinematics::{JointAngles, RobotGeometry};
use legstate::pipeline::initial_state;
use nalgebra::{Matrix3, Vector3};

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    Io = 4,
    Checksum = 5,
    Format = 6,
    Filter = 7,
    Panic = 8,
}

/// Opaque filter handle.
pub struct LsFilter {
    state: FilterState,
    geometry: RobotGeometry,
    noise: NoiseParams,
}

/// Opaque classifier handle.
pub struct LsNetwork {
    params: NetworkParams,
    spec: ArchitectureSpec,
}

fn guard(f: impl FnOnce() -> LsStatus) -> LsStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or(LsStatus::Panic)
}

unsafe fn read<const N: usize>(p: *const f64) -> Option<[f64; N]> {
    if p.is_null() {
        return None;
    }
    let mut out = [0.0; N];
    out.copy_from_slice(std::slice::from_raw_parts(p, N));
    Some(out)
}

unsafe fn write(p: *mut f64, values: &[f64]) -> bool {
    if p.is_null() {
        return false;
    }
    std::slice::from_raw_parts_mut(p, values.len()).copy_from_slice(values);
    true
}

fn net_status(e: &NetError) -> LsStatus {
    match e {
        NetError::ShapeMismatch(_) => LsStatus::ShapeMismatch,
        NetError::ChecksumFailure(_) => LsStatus::Checksum,
        NetError::Io(_) => LsStatus::Io,
        _ => LsStatus::Format,
    }
}

/// Static description of a status code.
#[no_mangle]
pub extern "C" fn ls_status_message(status: LsStatus) -> *const c_char {
    let s: &'static [u8] = match status {
        LsStatus::Ok => b"ok\0",
        LsStatus::NullPointer => b"null pointer argument\0",
        LsStatus::InvalidArgument => b"invalid argument\0",
        LsStatus::ShapeMismatch => b"shape mismatch\0",
        LsStatus::Io => b"i/o error\0",
        LsStatus::Checksum => b"checksum failure\0",
        LsStatus::Format => b"malformed file\0",
        LsStatus::Filter => b"filter error\0",
        LsStatus::Panic => b"internal panic\0",
    };
    s.as_ptr().cast()
}

/// Creates a filter for the default quadruped geometry and noise model.
///
/// # Safety
/// `rotation` points to 9 values, `velocity` and `position` to 3 each, and
/// `out` to writable storage for one handle pointer.
#[no_mangle]
pub unsafe extern "C" fn ls_filter_new(
    rotation: *const f64,
    velocity: *const f64,
    position: *const f64,
    sigma: f64,
    timestamp: f64,
    out: *mut *mut LsFilter,
) -> LsStatus {
    guard(|| {
        let (Some(r), Some(v), Some(p)) = (read::<9>(rotation), read::<3>(velocity), read::<3>(position)) else {
            return LsStatus::NullPointer;
        };
        if out.is_null() {
            return LsStatus::NullPointer;
        }
        if !(sigma >= 0.0) || !timestamp.is_finite() || r.iter().chain(&v).chain(&p).any(|x| !x.is_finite()) {
            return LsStatus::InvalidArgument;
        }
        let state = initial_state(Matrix3::from_row_slice(&r), Vector3::from(v), Vector3::from(p), timestamp, sigma);
        let handle = LsFilter { state, geometry: RobotGeometry::mini_cheetah(), noise: NoiseParams::default() };
        *out = Box::into_raw(Box::new(handle));
        LsStatus::Ok
    })
}

/// # Safety
/// `filter` is null or a handle from [`ls_filter_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ls_filter_free(filter: *mut LsFilter) {
    if !filter.is_null() {
        drop(Box::from_raw(filter));
    }
}

/// Propagates to `timestamp` and applies the contact update.
///
/// # Safety
/// `gyro` and `accel` point to 3 values, `joint_angles` to `3 * n_legs`
/// values and `contacts` to `n_legs` bytes (nonzero meaning contact).
#[no_mangle]
pub unsafe extern "C" fn ls_filter_step(
    filter: *mut LsFilter,
    gyro: *const f64,
    accel: *const f64,
    timestamp: f64,
    joint_angles: *const f64,
    contacts: *const u8,
    n_legs: usize,
) -> LsStatus {
    guard(|| {
        let Some(f) = filter.as_mut() else { return LsStatus::NullPointer };
        let (Some(g), Some(a)) = (read::<3>(gyro), read::<3>(accel)) else { return LsStatus::NullPointer };
        if joint_angles.is_null() || contacts.is_null() {
            return LsStatus::NullPointer;
        }
        if n_legs != f.geometry.n_legs() {
            return LsStatus::ShapeMismatch;
        }
        let q = std::slice::from_raw_parts(joint_angles, 3 * n_legs);
        let alphas: Vec<JointAngles> = q.chunks_exact(3).map(JointAngles::from_column_slice).collect();
        let c = ContactState::new(std::slice::from_raw_parts(contacts, n_legs).iter().map(|b| *b != 0).collect());
        let imu = ImuSample { gyro: g.into(), accel: a.into(), timestamp };
        match inekf::step(&f.state, &imu, &alphas, &c, &f.geometry, &f.noise) {
            Ok(s) => {
                f.state = s;
                LsStatus::Ok
            }
            Err(_) => LsStatus::Filter,
        }
    })
}

/// Copies the current rotation (9), velocity (3) and position (3). Any output
/// pointer may be null to skip it.
///
/// # Safety
/// Non-null outputs must have room for the stated number of values.
#[no_mangle]
pub unsafe extern "C" fn ls_filter_state(filter: *const LsFilter, rotation: *mut f64, velocity: *mut f64, position: *mut f64) -> LsStatus {
    guard(|| {
        let Some(f) = filter.as_ref() else { return LsStatus::NullPointer };
        let r = f.state.rotation().transpose();
        write(rotation, r.as_slice());
        write(velocity, f.state.velocity().as_slice());
        write(position, f.state.position().as_slice());
        LsStatus::Ok
    })
}

/// Writes the covariance dimension to `dim`.
///
/// # Safety
/// `dim` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ls_filter_covariance_dim(filter: *const LsFilter, dim: *mut usize) -> LsStatus {
    guard(|| {
        let Some(f) = filter.as_ref() else { return LsStatus::NullPointer };
        if dim.is_null() {
            return LsStatus::NullPointer;
        }
        *dim = f.state.dim();
        LsStatus::Ok
    })
}

/// Loads a weight file.
///
/// # Safety
/// `path` is a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn ls_network_load(path: *const c_char, out: *mut *mut LsNetwork) -> LsStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            return LsStatus::NullPointer;
        }
        let Ok(p) = CStr::from_ptr(path).to_str() else { return LsStatus::InvalidArgument };
        match contactnet::load_params(Path::new(p)) {
            Ok((params, spec)) => {
                *out = Box::into_raw(Box::new(LsNetwork { params, spec }));
                LsStatus::Ok
            }
            Err(e) => net_status(&e),
        }
    })
}

/// # Safety
/// `network` is null or a handle from [`ls_network_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ls_network_free(network: *mut LsNetwork) {
    if !network.is_null() {
        drop(Box::from_raw(network));
    }
}

/// Window length, feature count and class count of a loaded network.
///
/// # Safety
/// Outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn ls_network_shape(
    network: *const LsNetwork,
    window: *mut usize,
    channels: *mut usize,
    classes: *mut usize,
) -> LsStatus {
    guard(|| {
        let Some(n) = network.as_ref() else { return LsStatus::NullPointer };
        if window.is_null() || channels.is_null() || classes.is_null() {
            return LsStatus::NullPointer;
        }
        *window = n.spec.window;
        *channels = n.spec.input_channels;
        *classes = n.spec.n_classes;
        LsStatus::Ok
    })
}

/// Classifies one raw time-major `window × channels` block (normalized
/// internally). Writes the contact code and, if `probs` is non-null, the
/// `classes` probabilities.
///
/// # Safety
/// `rows` holds `len` values; `state` is writable; non-null `probs` has room
/// for `probs_len` values.
#[no_mangle]
pub unsafe extern "C" fn ls_network_predict(
    network: *const LsNetwork,
    rows: *const f64,
    len: usize,
    state: *mut u32,
    probs: *mut f64,
    probs_len: usize,
) -> LsStatus {
    guard(|| {
        let Some(n) = network.as_ref() else { return LsStatus::NullPointer };
        if rows.is_null() || state.is_null() {
            return LsStatus::NullPointer;
        }
        let (w, c) = (n.spec.window, n.spec.input_channels);
        if len != w * c || (!probs.is_null() && probs_len != n.spec.n_classes) {
            return LsStatus::ShapeMismatch;
        }
        let mut data = std::slice::from_raw_parts(rows, len).to_vec();
        dataio::normalize_rows_in_place(&mut data, w, c);
        let mut channel_major = vec![0.0; len];
        for t in 0..w {
            for ch in 0..c {
                channel_major[ch * w + t] = data[t * c + ch];
            }
        }
        match contactnet::predict(&n.params, &n.spec, &channel_major) {
            Ok((code, p)) => {
                *state = code;
                write(probs, &p);
                LsStatus::Ok
            }
            Err(e) => net_status(&e),
        }
    })
}

/// Encodes per-leg flags (nonzero meaning contact) into the contact code.
///
/// # Safety
/// `legs` holds `n_legs` bytes.
#[no_mangle]
pub unsafe extern "C" fn ls_encode_contact(legs: *const u8, n_legs: usize, code: *mut u32) -> LsStatus {
    guard(|| {
        if legs.is_null() || code.is_null() {
            return LsStatus::NullPointer;
        }
        if n_legs == 0 || n_legs > 31 {
            return LsStatus::InvalidArgument;
        }
        let flags: Vec<bool> = std::slice::from_raw_parts(legs, n_legs).iter().map(|b| *b != 0).collect();
        *code = dataio::encode_contact(&flags);
        LsStatus::Ok
    })
}
