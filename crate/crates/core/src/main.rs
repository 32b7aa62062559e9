use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::{Matrix3, Vector3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use legstate::baselines::{gait_cycle_detect, grf_threshold_detect, GaitSchedule};
use legstate::config::ToolkitConfig;
use legstate::contactnet::{self, ArchitectureSpec, DatasetView, TrainConfig};
use legstate::dataio::{self, ContactState, SensorFrame, WindowedDataset};
use legstate::evalkit::{self, Pose, ReportBundle, ReportFormat};
use legstate::gaitsim::{self, GaitKind};
use legstate::labelgen;
use legstate::pipeline::{corpus_specs, initial_state, predict_sequence, run_filter};

#[derive(Parser, Debug)]
#[command(name = "legstate", version, about = "Contact estimation and contact-aided invariant EKF odometry for legged robots")]
struct Cli {
    /// Toolkit configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output file or directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset with true contacts
    Sim {
        #[arg(long)]
        gait: Option<GaitKind>,
        #[arg(long)]
        duration: Option<f64>,
        /// Disable sensor noise
        #[arg(long)]
        noiseless: bool,
        /// Also write the true body trajectory here
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
    /// Replace contact labels with ones generated from foot heights
    Label {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        gait: Option<labelgen::LabelGait>,
    },
    /// Train the contact network on labelled datasets
    Train {
        #[arg(long, required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Write the per-epoch log here
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Classify every frame of a dataset into a contact stream
    Infer {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        /// Expected window size; defaults to the configured one
        #[arg(long)]
        window: Option<usize>,
    },
    /// Run the contact-aided filter and write the estimated trajectory
    Filter {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        contacts: PathBuf,
        /// Trajectory whose first pose initializes the filter
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Run a comparison contact detector
    Baseline {
        method: BaselineMethod,
        #[arg(long)]
        input: PathBuf,
    },
    /// Classification and trajectory reports
    Eval {
        #[arg(long, requires = "gt")]
        pred: Option<PathBuf>,
        #[arg(long)]
        gt: Option<PathBuf>,
        #[arg(long, requires = "gt_traj")]
        est: Option<PathBuf>,
        #[arg(long)]
        gt_traj: Option<PathBuf>,
    },
    /// Simulate, train, infer, filter and evaluate end to end
    Pipeline,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum BaselineMethod {
    Grf,
    Gait,
}

enum CliError {
    Usage(String),
    Data(String),
}

fn data<E: Display>(e: E) -> CliError {
    CliError::Data(e.to_string())
}

type Result<T> = std::result::Result<T, CliError>;

fn out_path(cli: &Cli, default: &str) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn load_frames(path: &Path) -> Result<Vec<SensorFrame>> {
    dataio::read_dataset(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn timestamps(frames: &[SensorFrame]) -> Vec<f64> {
    frames.iter().map(|f| f.timestamp).collect()
}

fn cmd_sim(
    cli: &Cli,
    cfg: &ToolkitConfig,
    gait: Option<GaitKind>,
    duration: Option<f64>,
    noiseless: bool,
    trajectory: Option<&Path>,
) -> Result<()> {
    let mut spec = cfg.gaitsim.spec.clone();
    spec.seed = cli.seed;
    if let Some(g) = gait {
        spec.gait = g;
    }
    if noiseless {
        spec = spec.noiseless();
    }
    let duration = duration.unwrap_or(cfg.gaitsim.duration);
    let out = gaitsim::simulate(&spec, duration, &cfg.geometry()).map_err(data)?;
    let path = out_path(cli, "sim.bin");
    dataio::write_dataset(&out.frames, &path).map_err(data)?;
    if let Some(t) = trajectory {
        evalkit::write_poses(&out.trajectory, t).map_err(data)?;
    }
    eprintln!("wrote {} frames to {}", out.frames.len(), path.display());
    Ok(())
}

fn cmd_label(cli: &Cli, cfg: &ToolkitConfig, input: &Path, gait: Option<labelgen::LabelGait>) -> Result<()> {
    let mut frames = load_frames(input)?;
    let mut lcfg = cfg.labelgen;
    if let Some(g) = gait {
        lcfg.half_power_freq = g.half_power_freq();
    }
    labelgen::label_frames(&mut frames, cfg.kinematics.legs, &lcfg).map_err(data)?;
    let path = out_path(cli, "labelled.bin");
    dataio::write_dataset(&frames, &path).map_err(data)?;
    eprintln!("labelled {} frames into {}", frames.len(), path.display());
    Ok(())
}

struct Trained {
    spec: ArchitectureSpec,
    params: contactnet::NetworkParams,
    log: Vec<contactnet::EpochLog>,
    test: evalkit::ClassificationReport,
}

/// Splits the windows of `dataset`, trains, and scores the test split.
fn train_on(
    dataset: &WindowedDataset,
    cfg: &ToolkitConfig,
    preset: &str,
    train_cfg: &TrainConfig,
    max_windows: usize,
    seed: u64,
) -> Result<Trained> {
    let n_legs = cfg.kinematics.legs;
    let mut refs = dataset.all_refs();
    if refs.len() > max_windows {
        refs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        refs.truncate(max_windows);
        refs.sort();
    }
    let split = dataio::split_dataset(refs, seed).map_err(data)?;
    let spec = ArchitectureSpec::preset(preset, dataset.w, n_legs).map_err(data)?;
    let view = |refs: Vec<_>| DatasetView { dataset, refs };
    let (train_set, val_set, test_set) = (view(split.train), view(split.val), view(split.test));
    eprintln!("training {preset} on {} windows ({} validation, {} test)", train_set.refs.len(), val_set.refs.len(), test_set.refs.len());
    let out = contactnet::train(&spec, &train_set, Some(&val_set), train_cfg, |e| {
        eprintln!(
            "epoch {:>3}  loss {:.5}  train acc {:.4}  val acc {}",
            e.epoch,
            e.train_loss,
            e.train_acc,
            e.val_acc.map_or("N/A".into(), |v| format!("{v:.4}"))
        );
    })
    .map_err(data)?;
    let preds = contactnet::predict_source(&out.params, &spec, &test_set, 128).map_err(data)?;
    let decode = |c: u32| ContactState::from_code(c, n_legs).map_err(data);
    let pred: Vec<ContactState> = preds.iter().map(|(c, _)| decode(*c)).collect::<Result<_>>()?;
    let gt: Vec<ContactState> = test_set.refs.iter().map(|r| decode(dataset.label(*r).unwrap_or(0))).collect::<Result<_>>()?;
    let test = evalkit::classification_metrics(&pred, &gt).map_err(data)?;
    eprintln!("test: 16-class accuracy {:.4}, leg-average accuracy {:.4}", test.full_state_accuracy, test.leg_average_accuracy());
    Ok(Trained { spec, params: out.params, log: out.log, test })
}

fn cmd_train(
    cli: &Cli,
    cfg: &ToolkitConfig,
    inputs: &[PathBuf],
    preset: Option<&str>,
    epochs: Option<usize>,
    log: Option<&Path>,
) -> Result<()> {
    let mut dataset = WindowedDataset::new(cfg.contactnet.window, cfg.kinematics.legs).map_err(data)?;
    for p in inputs {
        dataset.push_sequence(&load_frames(p)?);
    }
    let mut tcfg = cfg.contactnet.train.clone();
    tcfg.seed = cli.seed;
    if let Some(e) = epochs {
        tcfg.epochs = e;
    }
    let preset = preset.unwrap_or(&cfg.contactnet.preset);
    let trained = train_on(&dataset, cfg, preset, &tcfg, usize::MAX, cli.seed)?;
    let path = out_path(cli, "model.pcnw");
    contactnet::save_params(&trained.params, &trained.spec, &path).map_err(data)?;
    if let Some(l) = log {
        fs::write(l, contactnet::train_log_csv(&trained.log)).map_err(data)?;
    }
    eprintln!("wrote weights to {}", path.display());
    Ok(())
}

fn cmd_infer(cli: &Cli, cfg: &ToolkitConfig, input: &Path, weights: &Path, window: Option<usize>) -> Result<()> {
    let (params, spec) = contactnet::load_params(weights).map_err(data)?;
    let expected = window.unwrap_or(cfg.contactnet.window);
    if spec.window != expected {
        return Err(CliError::Data(format!(
            "shape mismatch: weight file expects windows of {} samples, configured window is {expected}",
            spec.window
        )));
    }
    let n_legs = spec.n_classes.trailing_zeros() as usize;
    let frames = load_frames(input)?;
    let contacts = predict_sequence(&params, &spec, &frames, n_legs).map_err(data)?;
    let path = out_path(cli, "contacts.csv");
    dataio::write_contacts_file(&timestamps(&frames), &contacts, &path).map_err(data)?;
    eprintln!("wrote {} contact states to {}", contacts.len(), path.display());
    Ok(())
}

fn filter_frames(frames: &[SensorFrame], contacts: &[ContactState], init: Option<&Pose>, cfg: &ToolkitConfig) -> Result<Vec<Pose>> {
    let first = frames.first().ok_or_else(|| CliError::Data("empty dataset".into()))?;
    let state = match init {
        Some(p) => initial_state(p.rotation, Vector3::zeros(), p.position, first.timestamp, 0.1),
        None => initial_state(Matrix3::identity(), Vector3::zeros(), Vector3::zeros(), first.timestamp, 0.1),
    };
    run_filter(frames, contacts, state, &cfg.geometry(), &cfg.inekf, |_, _| {}).map_err(data)
}

fn cmd_filter(cli: &Cli, cfg: &ToolkitConfig, input: &Path, contacts: &Path, init: Option<&Path>) -> Result<()> {
    let frames = load_frames(input)?;
    let (ts, cs) = dataio::read_contacts_file(contacts).map_err(data)?;
    if ts.len() != frames.len() || ts.iter().zip(&frames).any(|(t, f)| (t - f.timestamp).abs() > 1e-9) {
        return Err(CliError::Data("contact stream timestamps do not match the dataset".into()));
    }
    let init_pose = match init {
        Some(p) => evalkit::read_poses(p).map_err(data)?.first().cloned(),
        None => None,
    };
    let poses = filter_frames(&frames, &cs, init_pose.as_ref(), cfg)?;
    let path = out_path(cli, "trajectory.csv");
    evalkit::write_poses(&poses, &path).map_err(data)?;
    eprintln!("wrote {} poses to {}", poses.len(), path.display());
    Ok(())
}

fn gait_schedule(cfg: &ToolkitConfig) -> Result<GaitSchedule> {
    let mut s = GaitSchedule::from_spec(&cfg.gaitsim.spec).map_err(data)?;
    s.offsets.truncate(cfg.kinematics.legs);
    Ok(s)
}

fn cmd_baseline(cli: &Cli, cfg: &ToolkitConfig, method: BaselineMethod, input: &Path) -> Result<()> {
    let frames = load_frames(input)?;
    let contacts = match method {
        BaselineMethod::Grf => grf_threshold_detect(&frames, &cfg.grf_config(), &cfg.geometry()).map_err(data)?,
        BaselineMethod::Gait => gait_cycle_detect(&timestamps(&frames), &gait_schedule(cfg)?),
    };
    let path = out_path(cli, "contacts.csv");
    dataio::write_contacts_file(&timestamps(&frames), &contacts, &path).map_err(data)?;
    eprintln!("wrote {} contact states to {}", contacts.len(), path.display());
    Ok(())
}

fn cmd_eval(
    cli: &Cli,
    cfg: &ToolkitConfig,
    pred: Option<&Path>,
    gt: Option<&Path>,
    est: Option<&Path>,
    gt_traj: Option<&Path>,
) -> Result<()> {
    let mut bundle = ReportBundle::default();
    if let (Some(p), Some(g)) = (pred, gt) {
        let (_, pc) = dataio::read_contacts_file(p).map_err(data)?;
        let (_, gc) = dataio::read_contacts_file(g).map_err(data)?;
        let report = evalkit::classification_metrics(&pc, &gc).map_err(data)?;
        println!("accuracy {:.6}  leg-average {:.6}", report.full_state_accuracy, report.leg_average_accuracy());
        bundle.classification.push(("prediction".into(), report));
    }
    if let (Some(e), Some(g)) = (est, gt_traj) {
        let (est, gt) = (evalkit::read_poses(e).map_err(data)?, evalkit::read_poses(g).map_err(data)?);
        let (_, aligned) = evalkit::align_trajectories(&est, &gt, cfg.eval.align).map_err(data)?;
        let report = evalkit::trajectory_metrics(&aligned, &gt).map_err(data)?;
        println!("rmse {:.6} m  final drift {:.6} m ({:.3}% of path)", report.rmse, report.final_drift, report.drift_percent());
        bundle.trajectories.push(("estimate".into(), report));
        bundle.series = vec![("ground truth".into(), gt), ("estimate".into(), aligned)];
    }
    if bundle.classification.is_empty() && bundle.trajectories.is_empty() {
        return Err(CliError::Usage("eval needs --pred/--gt and/or --est/--gt-traj".into()));
    }
    let dir = out_path(cli, "report");
    let mut written = evalkit::export_report(&bundle, &dir, cfg.eval.format).map_err(data)?;
    if cfg.eval.format == ReportFormat::Csv && !bundle.series.is_empty() {
        written.extend(evalkit::export_report(&bundle, &dir, ReportFormat::Svg).map_err(data)?);
    }
    for p in written {
        eprintln!("wrote {}", p.display());
    }
    Ok(())
}

fn cmd_pipeline(cli: &Cli, cfg: &ToolkitConfig) -> Result<()> {
    let dir = out_path(cli, "pipeline_out");
    fs::create_dir_all(&dir).map_err(data)?;
    let geom = cfg.geometry();
    let base = &cfg.gaitsim.spec;
    let mut dataset = WindowedDataset::new(cfg.contactnet.window, cfg.kinematics.legs).map_err(data)?;
    for spec in corpus_specs(cfg.gaitsim.sequences, cli.seed) {
        let spec = gaitsim::GaitSpec { noise: base.noise, encoder_hz: base.encoder_hz, imu_hz: base.imu_hz, ..spec };
        let out = gaitsim::simulate(&spec, cfg.gaitsim.duration, &geom).map_err(data)?;
        dataset.push_sequence(&out.frames);
    }
    eprintln!("simulated {} sequences", dataset.n_sequences());
    let mut tcfg = cfg.contactnet.train.clone();
    tcfg.seed = cli.seed;
    let trained = train_on(&dataset, cfg, &cfg.contactnet.preset, &tcfg, cfg.contactnet.windows, cli.seed)?;
    contactnet::save_params(&trained.params, &trained.spec, &dir.join("model.pcnw")).map_err(data)?;
    fs::write(dir.join("train_log.csv"), contactnet::train_log_csv(&trained.log)).map_err(data)?;

    let eval_spec = gaitsim::GaitSpec { seed: cli.seed.wrapping_add(1), ..base.clone() };
    let seq = gaitsim::simulate(&eval_spec, cfg.gaitsim.duration, &geom).map_err(data)?;
    let ts = timestamps(&seq.frames);
    let net = predict_sequence(&trained.params, &trained.spec, &seq.frames, geom.n_legs()).map_err(data)?;
    let grf = grf_threshold_detect(&seq.frames, &cfg.grf_config(), &geom).map_err(data)?;
    let gait = gait_cycle_detect(&ts, &gait_schedule(cfg)?);
    dataio::write_contacts_file(&ts, &net, &dir.join("contacts_network.csv")).map_err(data)?;

    let mut bundle = ReportBundle::default();
    bundle.classification.push(("network_test_split".into(), trained.test.clone()));
    for (label, c) in [("network", &net), ("gait_cycle", &gait), ("grf_threshold", &grf)] {
        bundle.classification.push((label.into(), evalkit::classification_metrics(c, &seq.true_contacts).map_err(data)?));
    }
    let init = &seq.trajectory[0];
    let mut series = vec![("ground truth".to_string(), seq.trajectory.clone())];
    for (label, c) in [("true_contacts", &seq.true_contacts), ("network_contacts", &net)] {
        let state = initial_state(init.rotation, seq.velocities[0], init.position, init.timestamp, 1e-3);
        let poses = run_filter(&seq.frames, c, state, &geom, &cfg.inekf, |_, _| {}).map_err(data)?;
        let (_, aligned) = evalkit::align_trajectories(&poses, &seq.trajectory, cfg.eval.align).map_err(data)?;
        bundle.trajectories.push((label.into(), evalkit::trajectory_metrics(&aligned, &seq.trajectory).map_err(data)?));
        evalkit::write_poses(&aligned, &dir.join(format!("trajectory_{label}.csv"))).map_err(data)?;
        series.push((label.to_string(), aligned));
    }
    evalkit::write_poses(&seq.trajectory, &dir.join("trajectory_ground_truth.csv")).map_err(data)?;
    bundle.series = series;
    evalkit::export_report(&bundle, &dir, ReportFormat::Csv).map_err(data)?;
    evalkit::export_report(&bundle, &dir, ReportFormat::Svg).map_err(data)?;
    for (label, r) in &bundle.classification {
        println!("{label:<20} 16-class {:.4}  leg-average {:.4}", r.full_state_accuracy, r.leg_average_accuracy());
    }
    for (label, r) in &bundle.trajectories {
        println!("{label:<20} rmse {:.4} m  drift {:.3}%", r.rmse, r.drift_percent());
    }
    eprintln!("reports in {}", dir.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => ToolkitConfig::from_path(p).map_err(|e| CliError::Usage(format!("config: {e}")))?,
        None => ToolkitConfig::default(),
    };
    match &cli.command {
        Command::Sim { gait, duration, noiseless, trajectory } => cmd_sim(cli, &cfg, *gait, *duration, *noiseless, trajectory.as_deref()),
        Command::Label { input, gait } => cmd_label(cli, &cfg, input, *gait),
        Command::Train { input, preset, epochs, log } => cmd_train(cli, &cfg, input, preset.as_deref(), *epochs, log.as_deref()),
        Command::Infer { input, weights, window } => cmd_infer(cli, &cfg, input, weights, *window),
        Command::Filter { input, contacts, init } => cmd_filter(cli, &cfg, input, contacts, init.as_deref()),
        Command::Baseline { method, input } => cmd_baseline(cli, &cfg, *method, input),
        Command::Eval { pred, gt, est, gt_traj } => cmd_eval(cli, &cfg, pred.as_deref(), gt.as_deref(), est.as_deref(), gt_traj.as_deref()),
        Command::Pipeline => cmd_pipeline(cli, &cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}\n\nusage: legstate [--config FILE] [--seed N] [--out PATH] <sim|label|train|infer|filter|baseline|eval|pipeline>");
            ExitCode::from(1)
        }
        Err(CliError::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
