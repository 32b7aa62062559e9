//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use legstate::baselines::{gait_cycle_detect, grf_threshold_detect, GaitSchedule, GrfConfig};
use legstate::contactnet::{
    self, backward_batch, layer_backward, layer_forward, loss, predict_source, softmax, train, Activation, ArchitectureSpec, DatasetView,
    LayerSpec, Mode, NetError, NetworkParams, Shape, TrainConfig, PRESETS,
};
use legstate::dataio::{self, split_dataset, ContactState, DataError, SensorFrame, WindowRef, WindowedDataset};
use legstate::evalkit::{align_trajectories, classification_metrics, trajectory_metrics, AlignMode, Pose};
use legstate::gaitsim::{simulate, GaitSpec, SimOutput, Simulator};
use legstate::inekf::{FilterState, NoiseParams};
use legstate::kinematics::RobotGeometry;
use legstate::labelgen::{generate_labels, LabelGenConfig};
use legstate::pipeline::{corpus_specs, initial_state, predict_sequence, run_filter};
use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

const WINDOW: usize = 150;
const A3_EPOCHS: usize = 8;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

// ---------------------------------------------------------------- A1

fn param_mut(p: &mut contactnet::LayerParams, k: usize) -> &mut f64 {
    let nw = p.weight.len();
    if k < nw {
        &mut p.weight[k]
    } else {
        &mut p.bias[k - nw]
    }
}

/// Max relative error between `layer_backward` and central differences of
/// `Σ r ⊙ y` for layer `i` of `spec`.
fn layer_grad_error(spec: &ArchitectureSpec, i: usize, mode: Mode, seed: u64) -> f64 {
    let shapes = spec.shapes().unwrap();
    let layer = &spec.layers[i];
    let mut params = NetworkParams::init(spec, seed).unwrap().layers[i].clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 2;
    let x_data: Vec<f64> = (0..n * shapes[i].size()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let x = Activation { n, shape: shapes[i], data: x_data };
    let r: Vec<f64> = (0..n * shapes[i + 1].size()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let objective = |p: &contactnet::LayerParams, x: &Activation| -> f64 {
        let (y, _) = layer_forward(layer, p, x, mode, &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
        y.data.iter().zip(&r).map(|(a, b)| a * b).sum()
    };
    let (y, cache) = layer_forward(layer, &params, &x, mode, &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
    let dy = Activation { n, shape: y.shape, data: r.clone() };
    let (dx, grad) = layer_backward(layer, &params, shapes[i], &cache, &dy, true).unwrap();
    let dx = dx.unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut xp = x.clone();
    for k in 0..xp.data.len() {
        let v = xp.data[k];
        xp.data[k] = v + h;
        let up = objective(&params, &xp);
        xp.data[k] = v - h;
        let down = objective(&params, &xp);
        xp.data[k] = v;
        worst = worst.max(rel_err(dx.data[k], (up - down) / (2.0 * h)));
    }
    let analytic: Vec<f64> = grad.weight.iter().chain(&grad.bias).copied().collect();
    for (k, a) in analytic.iter().enumerate() {
        let v = *param_mut(&mut params, k);
        *param_mut(&mut params, k) = v + h;
        let up = objective(&params, &x);
        *param_mut(&mut params, k) = v - h;
        let down = objective(&params, &x);
        *param_mut(&mut params, k) = v;
        worst = worst.max(rel_err(*a, (up - down) / (2.0 * h)));
    }
    worst
}

fn tiny_spec() -> ArchitectureSpec {
    ArchitectureSpec::new(
        3,
        12,
        4,
        vec![
            LayerSpec::Conv1d { out_channels: 4, kernel: 3 },
            LayerSpec::Relu,
            LayerSpec::Dropout,
            LayerSpec::MaxPool { size: 2 },
            LayerSpec::Conv1d { out_channels: 5, kernel: 2 },
            LayerSpec::Relu,
            LayerSpec::Flatten,
            LayerSpec::Dense { out: 6 },
            LayerSpec::Relu,
            LayerSpec::Dense { out: 4 },
        ],
    )
    .unwrap()
}

fn a1() -> Outcome {
    let start = Instant::now();
    let spec = tiny_spec();
    let train_mode = Mode::Train { dropout: 0.3 };
    let mut worst: f64 = 0.0;
    for i in 0..spec.layers.len() {
        worst = worst.max(layer_grad_error(&spec, i, train_mode, 10 + i as u64));
        worst = worst.max(layer_grad_error(&spec, i, Mode::Eval, 20 + i as u64));
    }

    let mut params = NetworkParams::init(&spec, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 3;
    let input: Vec<f64> = (0..n * spec.input_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let labels = [0u32, 3, 1];
    let total = |p: &NetworkParams| backward_batch(p, &spec, &input, &labels, train_mode, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let (_, grad, _) = total(&params);
    let analytic: Vec<f64> = grad.values().copied().collect();
    let h = 1e-5;
    for (k, a) in analytic.iter().enumerate() {
        let v = *params.values().nth(k).unwrap();
        *params.values_mut().nth(k).unwrap() = v + h;
        let up = total(&params).0;
        *params.values_mut().nth(k).unwrap() = v - h;
        let down = total(&params).0;
        *params.values_mut().nth(k).unwrap() = v;
        worst = worst.max(rel_err(*a, (up - down) / (2.0 * h)));
    }
    let elapsed = start.elapsed();
    ensure(
        worst < 1e-5 && elapsed < Duration::from_secs(60),
        format!("max rel err {worst:.2e} over {} layers + end-to-end ({} params)", spec.layers.len(), analytic.len()),
    )
}

// ---------------------------------------------------------------- A2

fn a2() -> Outcome {
    let uniform = [0.37; 16];
    let worst_ln = (0..16).map(|k| (loss(&uniform, k).unwrap() - 16f64.ln()).abs()).fold(0.0, f64::max);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst_shift: f64 = 0.0;
    for _ in 0..1000 {
        let z: Vec<f64> = (0..16).map(|_| rng.random_range(-10.0..10.0)).collect();
        let c = rng.random_range(-50.0..50.0);
        let shifted: Vec<f64> = z.iter().map(|v| v + c).collect();
        let (p, q) = (softmax(&z), softmax(&shifted));
        worst_shift = worst_shift.max(p.iter().zip(&q).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    ensure(worst_ln < 1e-9 && worst_shift < 1e-12, format!("|loss - ln16| {worst_ln:.1e}, shift invariance {worst_shift:.1e}"))
}

// ---------------------------------------------------------------- A3

struct Trained {
    params: NetworkParams,
    spec: ArchitectureSpec,
}

fn a3(shared: &mut Option<Trained>) -> Outcome {
    let start = Instant::now();
    let geom = RobotGeometry::mini_cheetah();
    let mut dataset = WindowedDataset::new(WINDOW, 4).unwrap();
    for spec in corpus_specs(10, 7) {
        dataset.push_sequence(&simulate(&spec, 10.0, &geom).map_err(|e| e.to_string())?.frames);
    }
    let mut refs = dataset.all_refs();
    refs.shuffle(&mut ChaCha8Rng::seed_from_u64(1));
    refs.truncate(20_000);
    let split = split_dataset(refs, 2).map_err(|e| e.to_string())?;
    let spec = ArchitectureSpec::preset("2blocks", WINDOW, 4).unwrap();
    let train_view = DatasetView { dataset: &dataset, refs: split.train };
    let val_view = DatasetView { dataset: &dataset, refs: split.val };
    let test_view = DatasetView { dataset: &dataset, refs: split.test.clone() };
    let config = TrainConfig { epochs: A3_EPOCHS, batch_size: 30, learning_rate: 1e-4, ..Default::default() };
    let outcome = train(&spec, &train_view, Some(&val_view), &config, |e| {
        eprintln!("  A3 epoch {} loss {:.4} train {:.4} val {:.4}", e.epoch, e.train_loss, e.train_acc, e.val_acc.unwrap_or(f64::NAN))
    })
    .map_err(|e| e.to_string())?;
    let preds = predict_source(&outcome.params, &spec, &test_view, 128).map_err(|e| e.to_string())?;
    let pred: Vec<ContactState> = preds.iter().map(|(c, _)| ContactState::from_code(*c, 4).unwrap()).collect();
    let gt: Vec<ContactState> = split.test.iter().map(|r| ContactState::from_code(dataset.label(*r).unwrap(), 4).unwrap()).collect();
    let report = classification_metrics(&pred, &gt).map_err(|e| e.to_string())?;
    let legs: Vec<f64> = (0..4).map(|l| report.leg_accuracy(l)).collect();
    let elapsed = start.elapsed();
    *shared = Some(Trained { params: outcome.params, spec });
    ensure(
        legs.iter().all(|a| *a >= 0.95) && report.full_state_accuracy >= 0.90 && elapsed < Duration::from_secs(30 * 60),
        format!(
            "test n={} 16-class {:.4}, per-leg {:?}, best epoch {}",
            gt.len(),
            report.full_state_accuracy,
            legs.iter().map(|a| format!("{a:.4}")).collect::<Vec<_>>(),
            outcome.best_epoch
        ),
    )
}

// ---------------------------------------------------------------- A4

fn a4() -> Outcome {
    let geom = RobotGeometry::mini_cheetah();
    let spec = GaitSpec { seed: 21, ..GaitSpec::trot() };
    let duration = 100.0;
    let out = simulate(&spec, duration, &geom).map_err(|e| e.to_string())?;
    let sim = Simulator::new(&spec, duration, &geom).map_err(|e| e.to_string())?;
    let start = Instant::now();
    let heights: Vec<Vec<f64>> = (0..4).map(|l| out.frames.iter().map(|f| f.foot_height(l)).collect()).collect();
    let labels = generate_labels(&heights, &LabelGenConfig::default()).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();

    let n = labels.len();
    let agree = (0..n).map(|k| (0..4).filter(|&l| labels[k].legs[l] == out.true_contacts[k].legs[l]).count()).sum::<usize>();
    let agreement = agree as f64 / (4 * n) as f64;

    // Rising edges of the labels in each stance's neighbourhood, bounded by
    // the midpoints to the adjacent stance onsets.
    let stance: Vec<[bool; 4]> = out.frames.iter().map(|f| sim.truth(f.timestamp).in_stance).collect();
    let (mut extra, mut stances) = (0usize, 0usize);
    for l in 0..4 {
        let onsets: Vec<usize> = (1..n).filter(|&k| stance[k][l] && !stance[k - 1][l]).collect();
        for j in 1..onsets.len().saturating_sub(1) {
            stances += 1;
            let lo = (onsets[j - 1] + onsets[j]) / 2;
            let hi = (onsets[j] + onsets[j + 1]) / 2;
            let rises = (lo..hi).filter(|&k| labels[k].legs[l] && !labels[k - 1].legs[l]).count();
            extra += rises.saturating_sub(1);
        }
    }
    ensure(
        agreement >= 0.98 && extra == 0 && elapsed < Duration::from_secs(5),
        format!("agreement {:.4}, extra rising edges {extra} over {stances} stances, {:.2?} per 100 s", agreement, elapsed),
    )
}

// ---------------------------------------------------------------- A5

fn start_state(out: &SimOutput, sigma: f64) -> FilterState {
    let p0 = &out.trajectory[0];
    initial_state(p0.rotation, out.velocities[0], p0.position, p0.timestamp, sigma)
}

fn drift(est: &[Pose], gt: &[Pose]) -> Result<(f64, f64), String> {
    let (_, aligned) = align_trajectories(est, gt, AlignMode::FirstPose).map_err(|e| e.to_string())?;
    let r = trajectory_metrics(&aligned, gt).map_err(|e| e.to_string())?;
    Ok((r.drift_percent(), r.path_length))
}

fn a5(trained: Option<&Trained>) -> Outcome {
    let geom = RobotGeometry::mini_cheetah();
    let noise = NoiseParams::default();

    let stand = simulate(&GaitSpec::stand().noiseless(), 10.0, &geom).map_err(|e| e.to_string())?;
    let poses =
        run_filter(&stand.frames, &stand.true_contacts, start_state(&stand, 1e-3), &geom, &noise, |_, _| {}).map_err(|e| e.to_string())?;
    let static_err = (poses.last().unwrap().position - stand.trajectory[0].position).norm();

    let trot = simulate(&GaitSpec::trot().noiseless(), 10.0, &geom).map_err(|e| e.to_string())?;
    let est =
        run_filter(&trot.frames, &trot.true_contacts, start_state(&trot, 1e-3), &geom, &noise, |_, _| {}).map_err(|e| e.to_string())?;
    let (gt_drift, path) = drift(&est, &trot.trajectory)?;

    let net_drift = match trained {
        Some(t) => {
            let contacts = predict_sequence(&t.params, &t.spec, &trot.frames, 4).map_err(|e| e.to_string())?;
            let est = run_filter(&trot.frames, &contacts, start_state(&trot, 1e-3), &geom, &noise, |_, _| {}).map_err(|e| e.to_string())?;
            Some(drift(&est, &trot.trajectory)?.0)
        }
        None => None,
    };
    let detail = format!(
        "static {static_err:.2e} m, gt-contact drift {gt_drift:.3}% of {path:.2} m, network-contact drift {}",
        net_drift.map_or("n/a (no trained network)".into(), |d| format!("{d:.3}%"))
    );
    ensure(static_err < 1e-6 && gt_drift < 1.0 && path >= 4.9 && net_drift.is_some_and(|d| d < 3.0), detail)
}

// ---------------------------------------------------------------- A6

fn a6() -> Outcome {
    let geom = RobotGeometry::mini_cheetah();
    let noise = NoiseParams::default();
    let out = simulate(&GaitSpec { seed: 5, ..GaitSpec::trot() }, 5.0, &geom).map_err(|e| e.to_string())?;
    let yaw = Matrix3::from(nalgebra::Rotation3::from_axis_angle(&Vector3::z_axis(), 0.7));
    let base = start_state(&out, 1e-2);
    let p0 = &out.trajectory[0];
    let turned = initial_state(yaw * p0.rotation, yaw * out.velocities[0], yaw * p0.position, p0.timestamp, 1e-2);
    let a = run_filter(&out.frames, &out.true_contacts, base, &geom, &noise, |_, _| {}).map_err(|e| e.to_string())?;
    let b = run_filter(&out.frames, &out.true_contacts, turned, &geom, &noise, |_, _| {}).map_err(|e| e.to_string())?;
    let equiv = a
        .iter()
        .zip(&b)
        .map(|(x, y)| (yaw * x.position - y.position).norm().max((yaw * x.rotation - y.rotation).abs().max()))
        .fold(0.0, f64::max);

    let long = simulate(&GaitSpec { seed: 6, ..GaitSpec::trot() }, 100.0, &geom).map_err(|e| e.to_string())?;
    let (mut asym, mut min_eig, mut steps) = (0.0f64, f64::INFINITY, 0usize);
    run_filter(&long.frames, &long.true_contacts, start_state(&long, 1e-2), &geom, &noise, |_, s| {
        let p = &s.covariance;
        let scale = p.abs().max().max(1e-300);
        asym = asym.max((p - p.transpose()).abs().max() / scale);
        let sym = (p + p.transpose()) * 0.5;
        min_eig = min_eig.min(SymmetricEigen::new(sym).eigenvalues.min() / scale);
        steps += 1;
    })
    .map_err(|e| e.to_string())?;
    ensure(
        equiv < 1e-6 && asym < 1e-12 && min_eig > -1e-12 && steps > 100_000,
        format!("yaw equivariance {equiv:.2e}; {steps} steps, max rel asymmetry {asym:.1e}, min rel eigenvalue {min_eig:.2e}"),
    )
}

// ---------------------------------------------------------------- A7

fn a7(trained: Option<&Trained>) -> Outcome {
    let Some(t) = trained else { return Err("no trained network".into()) };
    let geom = RobotGeometry::mini_cheetah();
    let spec = GaitSpec { jitter: 0.05, seed: 77, ..GaitSpec::trot() };
    let out = simulate(&spec, 20.0, &geom).map_err(|e| e.to_string())?;
    let from = WINDOW - 1;
    let gt = &out.true_contacts[from..];
    let net = predict_sequence(&t.params, &t.spec, &out.frames, 4).map_err(|e| e.to_string())?;
    let times: Vec<f64> = out.frames.iter().map(|f| f.timestamp).collect();
    let gait = gait_cycle_detect(&times, &GaitSchedule::from_spec(&spec).map_err(|e| e.to_string())?);
    let grf = grf_threshold_detect(&out.frames, &GrfConfig::default(), &geom).map_err(|e| e.to_string())?;
    let score = |p: &[ContactState]| classification_metrics(&p[from..], gt).map(|r| r.leg_average_accuracy()).map_err(|e| e.to_string());
    let (n, g, f) = (score(&net)?, score(&gait)?, score(&grf)?);
    ensure(n > g && g > f, format!("leg-average accuracy: network {n:.4} > gait cycle {g:.4} > GRF {f:.4}"))
}

// ---------------------------------------------------------------- A8

fn stream(bits: &[u8]) -> Vec<ContactState> {
    bits.iter().map(|b| ContactState::new(vec![*b == 1])).collect()
}

fn a8() -> Outcome {
    // tp 3, fp 2, tn 4, fn 1
    let gt = stream(&[1, 1, 1, 1, 0, 0, 0, 0, 0, 0]);
    let pred = stream(&[1, 1, 1, 0, 1, 1, 0, 0, 0, 0]);
    let r = classification_metrics(&pred, &gt).map_err(|e| e.to_string())?;
    let c = r.per_leg[0];
    let counts_ok = (c.tp, c.fp, c.tn, c.fn_) == (3, 2, 4, 1);
    let rates_ok = c.fpr() == Some(2.0 / 6.0) && c.fnr() == Some(1.0 / 4.0) && r.full_state_accuracy == 0.7;

    let negative = stream(&[0; 8]);
    let all_neg = classification_metrics(&negative, &negative).map_err(|e| e.to_string())?;
    let missed = classification_metrics(&stream(&[1; 8]), &negative).map_err(|e| e.to_string())?;
    let positive = stream(&[1; 8]);
    let all_pos = classification_metrics(&positive, &positive).map_err(|e| e.to_string())?;
    let absent_ok = all_neg.per_leg[0].fnr().is_none()
        && all_neg.average_fnr().is_none()
        && missed.per_leg[0].fnr().is_none()
        && missed.per_leg[0].fpr() == Some(1.0)
        && all_pos.per_leg[0].fpr().is_none();
    ensure(counts_ok && rates_ok && absent_ok, format!("counts {counts_ok}, exact rates {rates_ok}, N/A convention {absent_ok}"))
}

// ---------------------------------------------------------------- A9

fn a9() -> Outcome {
    let geom = RobotGeometry::mini_cheetah();
    let out = simulate(&GaitSpec::pronk(), 2.0, &geom).map_err(|e| e.to_string())?;
    let bytes = dataio::encode_binary(&out.frames);
    let back: Vec<SensorFrame> = dataio::decode_binary(&bytes).map_err(|e| e.to_string())?;
    let data_ok = dataio::encode_binary(&back) == bytes
        && back.len() == out.frames.len()
        && back.iter().zip(&out.frames).all(|(a, b)| a.features().iter().zip(b.features()).all(|(x, y)| x.to_bits() == y.to_bits()));
    let mut bad = bytes.clone();
    let mid = bad.len() / 2;
    bad[mid] ^= 0x10;
    let data_crc = matches!(dataio::decode_binary(&bad), Err(DataError::ChecksumFailure(_)));

    let spec = ArchitectureSpec::preset("1block", 32, 4).unwrap();
    let params = NetworkParams::init(&spec, 8).unwrap();
    let encoded = contactnet::encode_params(&params, &spec).map_err(|e| e.to_string())?;
    let (p2, s2) = contactnet::decode_params(&encoded).map_err(|e| e.to_string())?;
    let weights_ok =
        s2 == spec && params.values().zip(p2.values()).all(|(a, b)| a.to_bits() == b.to_bits()) && p2.num_params() == params.num_params();
    let mut bad = encoded.clone();
    let mid = bad.len() / 2;
    bad[mid] ^= 0x01;
    let weights_crc = matches!(contactnet::decode_params(&bad), Err(NetError::ChecksumFailure(_)));
    ensure(
        data_ok && data_crc && weights_ok && weights_crc,
        format!(
            "dataset {} B roundtrip {data_ok}, corrupt -> checksum {data_crc}; weights {} B roundtrip {weights_ok}, corrupt -> checksum {weights_crc}",
            bytes.len(),
            encoded.len()
        ),
    )
}

// ---------------------------------------------------------------- A10

fn a10() -> Outcome {
    let geom = RobotGeometry::mini_cheetah();
    let out = simulate(&GaitSpec { seed: 3, ..GaitSpec::trot() }, 1.0, &geom).map_err(|e| e.to_string())?;
    let mut dataset = WindowedDataset::new(WINDOW, 4).unwrap();
    dataset.push_sequence(&out.frames);
    let refs: Vec<WindowRef> = dataset.all_refs().into_iter().step_by(13).take(60).collect();
    let view = DatasetView { dataset: &dataset, refs };
    let config = TrainConfig { epochs: 1, ..Default::default() };
    let mut lines = Vec::new();
    for name in PRESETS {
        let spec = ArchitectureSpec::preset(name, WINDOW, 4).map_err(|e| format!("{name}: {e}"))?;
        let shapes = spec.shapes().map_err(|e| format!("{name}: {e}"))?;
        if shapes.last() != Some(&Shape::Flat { features: 16 }) {
            return Err(format!("{name}: output shape {:?}", shapes.last()));
        }
        let outcome = train(&spec, &view, None::<&DatasetView>, &config, |_| {}).map_err(|e| format!("{name}: {e}"))?;
        if !outcome.params.all_finite() || !outcome.log[0].train_loss.is_finite() {
            return Err(format!("{name}: non-finite after one epoch"));
        }
        lines.push(format!("{name} ({} params, loss {:.3})", outcome.params.num_params(), outcome.log[0].train_loss));
    }
    Ok(format!("{} windows: {}", view.refs.len(), lines.join(", ")))
}

// ----------------------------------------------------------------

fn run(selected: &[String], name: &str, f: impl FnOnce() -> Outcome) -> Option<bool> {
    if !selected.is_empty() && !selected.iter().any(|s| s == name) {
        return None;
    }
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
        Err(format!("panicked: {}", msg.unwrap_or_default()))
    });
    let (tag, detail, ok) = match result {
        Ok(d) => ("PASS", d, true),
        Err(d) => ("FAIL", d, false),
    };
    println!("{name} {tag} {detail} ({:.1?})", start.elapsed());
    Some(ok)
}

/// Optional arguments name the criteria to run (e.g. `A2 A9`); default all.
fn main() {
    let selected: Vec<String> = std::env::args().skip(1).filter(|a| a.starts_with('A')).collect();
    let mut trained = None;
    let results = [
        run(&selected, "A1", a1),
        run(&selected, "A2", a2),
        run(&selected, "A3", || a3(&mut trained)),
        run(&selected, "A4", a4),
        run(&selected, "A5", || a5(trained.as_ref())),
        run(&selected, "A6", a6),
        run(&selected, "A7", || a7(trained.as_ref())),
        run(&selected, "A8", a8),
        run(&selected, "A9", a9),
        run(&selected, "A10", a10),
    ];
    let ran: Vec<bool> = results.into_iter().flatten().collect();
    let failed = ran.iter().filter(|ok| !**ok).count();
    println!("acceptance: {} passed, {failed} failed", ran.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
