mod settings;

use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use motionnet::ablation::{find_preset, PRESETS};
use motionnet::checkpoint::{load_checkpoint, save_checkpoint};
use motionnet::data::{load_gray, save_gray, synth_sequence, Split, SyntheticSpec, TrainingSample};
use motionnet::flow_io::{
    distribution_to_radial_plot, flow_to_color, metrics, read_distribution, read_flo_file,
    write_distribution, write_flo_file, write_metrics_csv, MetricReport,
};
use motionnet::training::{evaluate, EpochRecord, TrainStatus, Trainer, TrainingState};
use motionnet::{Error, Mode, MotionNet, ValidMask};
use serde::Serialize;

use settings::{middlebury_sequences, TrainFile};

const THREADS_VAR: &str = "MOTIONNET_THREADS";

#[derive(Parser)]
#[command(name = "motionnet", version, about = "Motion-energy network for dense optical flow")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network from a configuration file.
    Train(TrainArgs),
    /// Estimate flow for one frame stack.
    Infer(InferArgs),
    /// Score a checkpoint (or precomputed flow files) against ground truth.
    Eval(EvalArgs),
    /// Retrain under a named ablation and report held-out metrics.
    Ablate(AblateArgs),
    /// Render a flow file or a motion distribution as an image.
    Visualize(VisualizeArgs),
    /// Write a synthetic frame stack with exact ground truth.
    Synth(SynthArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// TOML file with [network], [schedule] and [data] sections.
    #[arg(long)]
    config: PathBuf,
    /// Checkpoint written after every epoch.
    #[arg(long)]
    out: PathBuf,
    /// CSV training log, rewritten after every epoch.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Continue the run stored in this checkpoint; its network and schedule
    /// replace the configuration file's.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Stop after this many epochs of this invocation.
    #[arg(long)]
    epochs: Option<usize>,
    /// Override the schedule's seed (ignored when resuming).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Input frames, oldest first.
    #[arg(long, num_args = 1.., required = true)]
    frames: Vec<PathBuf>,
    /// Output `.flo` file.
    #[arg(long)]
    out: PathBuf,
    /// Color-coded flow image; defaults to the output path with `.png`.
    #[arg(long)]
    png: Option<PathBuf>,
    /// Use only the first N pyramid levels.
    #[arg(long)]
    scales: Option<usize>,
    /// Recurrent iterations; defaults to the trained configuration's.
    #[arg(long)]
    iters: Option<usize>,
    /// Also write the final half-resolution motion distribution.
    #[arg(long)]
    save_dist: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, conflicts_with = "flow_dir", required_unless_present = "flow_dir")]
    checkpoint: Option<PathBuf>,
    /// Score `<dir>/<sequence>.flo` instead of running a network.
    #[arg(long)]
    flow_dir: Option<PathBuf>,
    /// Root of a Middlebury-layout dataset.
    #[arg(long, conflicts_with = "config", required_unless_present = "config")]
    middlebury: Option<PathBuf>,
    /// Evaluate on the held-out set of a training configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    /// Comma-separated sequence names replacing the split's.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    sequences: Option<Vec<String>>,
    /// Frames per stack in bypass mode.
    #[arg(long, default_value_t = 2)]
    frames: usize,
    #[arg(long)]
    scales: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    /// Metrics CSV; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    /// Preset name; see --list.
    #[arg(long, required_unless_present = "list")]
    preset: Option<String>,
    #[arg(long, required_unless_present = "list")]
    config: Option<PathBuf>,
    #[arg(long)]
    list: bool,
    /// Metrics CSV; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    log: Option<PathBuf>,
    /// Final checkpoint of the retrained network.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Cap on the number of epochs.
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args)]
struct VisualizeArgs {
    /// Flow file to color-code.
    #[arg(long, conflicts_with = "dist", required_unless_present = "dist")]
    flow: Option<PathBuf>,
    /// Distribution dump written by `infer --save-dist`.
    #[arg(long)]
    dist: Option<PathBuf>,
    /// Half-resolution pixel `row,col` of the distribution to plot.
    #[arg(long, value_parser = parse_pair::<usize>, default_value = "0,0")]
    pixel: (usize, usize),
    /// Side length of the radial plot.
    #[arg(long, default_value_t = 129)]
    size: u32,
    /// Flow magnitude mapped to full saturation.
    #[arg(long)]
    max_flow: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// Directory receiving frameNN.png and flow.flo.
    #[arg(long)]
    out: PathBuf,
    /// Motion `u,v` of the texture in pixels per frame.
    #[arg(long, value_parser = parse_pair::<f64>, allow_hyphen_values = true)]
    motion: (f64, f64),
    /// Blend in a second, equally weighted texture moving with `u,v`.
    #[arg(long, value_parser = parse_pair::<f64>, allow_hyphen_values = true)]
    second: Option<(f64, f64)>,
    #[arg(long, default_value_t = 3)]
    frames: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Parses `a,b`.
fn parse_pair<T: std::str::FromStr>(text: &str) -> std::result::Result<(T, T), String> {
    let (a, b) = text
        .split_once(',')
        .ok_or_else(|| format!("expected two comma-separated values, got {text:?}"))?;
    let parse = |v: &str| v.trim().parse::<T>().map_err(|_| format!("cannot parse {v:?}"));
    Ok((parse(a)?, parse(b)?))
}

enum Failure {
    Usage(String),
    Core(Error),
    NotConverged,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Core(e.into())
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Core(Error::Data(e.to_string()))
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    if let Err(f) = configure_threads() {
        return report(f);
    }
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Infer(a) => infer(a),
        Command::Eval(a) => eval(a),
        Command::Ablate(a) => ablate(a),
        Command::Visualize(a) => visualize(a),
        Command::Synth(a) => synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => report(f),
    }
}

fn report(f: Failure) -> ExitCode {
    let code = match &f {
        Failure::Usage(msg) => {
            eprintln!("error: {msg}");
            1
        }
        Failure::NotConverged => {
            eprintln!("error: training did not converge (N.C.)");
            3
        }
        Failure::Core(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Contract(_) | Error::Config(_) => 1,
                Error::Divergence(_) => 3,
                _ => 2,
            }
        }
    };
    ExitCode::from(code)
}

fn configure_threads() -> CmdResult {
    let Ok(value) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::Usage(format!("{THREADS_VAR} must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Usage(e.to_string()))
}

#[derive(Serialize)]
struct LogRow<'a> {
    epoch: usize,
    phase: &'a str,
    loss: f64,
    heldout_loss: Option<f64>,
    heldout_epe: Option<f64>,
    heldout_aae: Option<f64>,
}

fn write_log(path: &Path, history: &[EpochRecord]) -> CmdResult {
    let mut w = csv::Writer::from_path(path)?;
    for r in history {
        w.serialize(LogRow {
            epoch: r.epoch,
            phase: r.phase.name(),
            loss: r.loss,
            heldout_loss: r.heldout_loss,
            heldout_epe: r.heldout_epe,
            heldout_aae: r.heldout_aae,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Runs epochs until the run finishes or `limit` epochs have passed,
/// checkpointing after each one. A diverging epoch leaves the last good
/// state on disk.
fn drive(
    trainer: &mut Trainer,
    train: &[TrainingSample],
    heldout: &[TrainingSample],
    limit: Option<usize>,
    out: Option<&Path>,
    log: Option<&Path>,
) -> CmdResult {
    let mut done = 0;
    while trainer.status() == TrainStatus::Running && limit.is_none_or(|m| done < m) {
        let epoch = trainer.run_epoch(train, heldout);
        if let Some(path) = out {
            save_checkpoint(path, trainer.state())?;
        }
        if let Some(path) = log {
            write_log(path, &trainer.state().history)?;
        }
        let r = epoch?;
        info!(
            "epoch {} ({}): loss {:.5}{}",
            r.epoch,
            r.phase.name(),
            r.loss,
            r.heldout_epe.map(|e| format!(", held-out EPE {e:.4}")).unwrap_or_default()
        );
        done += 1;
    }
    Ok(())
}

fn train(a: TrainArgs) -> CmdResult {
    let file = TrainFile::load(&a.config)?;
    let mut trainer = match &a.resume {
        Some(path) => Trainer::resume(load_checkpoint(path)?)?,
        None => {
            let mut schedule = file.schedule.clone();
            if let Some(seed) = a.seed {
                schedule.seed = seed;
            }
            let data = file.data.load(file.network.frames)?;
            Trainer::new(file.network.clone(), schedule, &data.train)?
        }
    };
    let data = file.data.load(trainer.state().config.frames)?;
    drive(&mut trainer, &data.train, &data.heldout, a.epochs, Some(&a.out), a.log.as_deref())?;
    let state = trainer.state();
    println!("status: {}", status_name(state.status));
    println!("epochs: {}", state.epoch);
    if let Some(r) = state.history.last() {
        println!("final loss: {}", r.loss);
    }
    if state.status == TrainStatus::NotConverged {
        return Err(Failure::NotConverged);
    }
    Ok(())
}

fn status_name(s: TrainStatus) -> &'static str {
    match s {
        TrainStatus::Running => "running",
        TrainStatus::Converged => "converged",
        TrainStatus::NotConverged => "N.C.",
    }
}

fn network(state: &TrainingState, scales: Option<usize>) -> std::result::Result<MotionNet, Failure> {
    let net = MotionNet::new(state.config.clone())?;
    Ok(match scales {
        Some(n) => net.with_scale_limit(n)?,
        None => net,
    })
}

fn iterations(state: &TrainingState, iters: Option<usize>) -> std::result::Result<usize, Failure> {
    match iters {
        Some(0) => Err(Failure::Usage("--iters must be at least 1".into())),
        Some(n) => Ok(n),
        None => Ok(state.config.recurrent_iters),
    }
}

fn infer(a: InferArgs) -> CmdResult {
    let state = load_checkpoint(&a.checkpoint)?;
    let net = network(&state, a.scales)?;
    let iters = iterations(&state, a.iters)?;
    if a.frames.len() != state.config.frames {
        return Err(Failure::Usage(format!(
            "the checkpoint expects {} frames, got {}",
            state.config.frames,
            a.frames.len()
        )));
    }
    let frames = a.frames.iter().map(load_gray).collect::<motionnet::Result<Vec<_>>>()?;
    let ew = net.expand(&state.weights)?;
    let rec = net.forward_iterations(&ew, &frames, iters, Mode::Inference)?;
    let (h, w) = (frames[0].height(), frames[0].width());
    let flow = rec.flow.upsample_half(h, w)?;
    write_flo_file(&a.out, &flow, &ValidMask::all(h, w))?;
    let png = a.png.unwrap_or_else(|| a.out.with_extension("png"));
    flow_to_color(&flow, None).save(&png).map_err(Error::from)?;
    if let Some(path) = &a.save_dist {
        let last = rec.iterations.last().expect("at least one iteration");
        std::fs::write(path, write_distribution(&last.forward.distribution))?;
    }
    info!("wrote {} and {}", a.out.display(), png.display());
    Ok(())
}

fn emit_metrics(rows: &[(String, MetricReport)], out: Option<&Path>) -> CmdResult {
    match out {
        Some(path) => write_metrics_csv(File::create(path)?, rows)?,
        None => write_metrics_csv(std::io::stdout().lock(), rows)?,
    }
    if let Some(path) = out {
        let n = rows.len() as f64;
        let epe = rows.iter().map(|r| r.1.epe).sum::<f64>() / n;
        let aae = rows.iter().map(|r| r.1.aae).sum::<f64>() / n;
        println!("mean EPE {epe:.4} px, mean AAE {aae:.3} deg ({})", path.display());
    }
    Ok(())
}

fn eval(a: EvalArgs) -> CmdResult {
    let state = a.checkpoint.as_deref().map(load_checkpoint).transpose()?;
    let frames = state.as_ref().map_or(a.frames, |s| s.config.frames);
    let split = match a.split {
        SplitArg::Train => Split::Train,
        SplitArg::Test => Split::Test,
    };
    let samples = match (&a.middlebury, &a.config) {
        (Some(root), _) => middlebury_sequences(root, split, a.sequences.as_deref(), frames)?,
        (None, Some(config)) => TrainFile::load(config)?.data.load(frames)?.test,
        (None, None) => unreachable!("clap requires a dataset"),
    };
    if samples.is_empty() {
        return Err(Error::Data("the split holds no sequences".into()).into());
    }
    let rows = match (&state, &a.flow_dir) {
        (Some(state), _) => {
            let net = network(state, a.scales)?;
            let iters = iterations(state, a.iters)?;
            evaluate(&net, &state.weights, &samples, iters)?
        }
        (None, Some(dir)) => samples
            .iter()
            .map(|s| {
                let (flow, _) = read_flo_file(dir.join(format!("{}.flo", s.name)))?;
                Ok((s.name.clone(), metrics(&flow, &s.flow, &s.mask)?))
            })
            .collect::<motionnet::Result<Vec<_>>>()?,
        (None, None) => unreachable!("clap requires a checkpoint or a flow directory"),
    };
    emit_metrics(&rows, a.out.as_deref())
}

fn ablate(a: AblateArgs) -> CmdResult {
    if a.list {
        for p in PRESETS {
            let nc = if p.expected_not_converged { " (published: N.C.)" } else { "" };
            println!("{:<22}{}{nc}", p.name, p.description);
        }
        return Ok(());
    }
    let (Some(name), Some(config)) = (a.preset, a.config) else {
        unreachable!("clap requires a preset and a configuration");
    };
    let preset = find_preset(&name)?;
    let file = TrainFile::load(&config)?;
    let (network, schedule) = preset.apply(&file.network, &file.schedule)?;
    let data = file.data.load(network.frames)?;
    if data.test.is_empty() {
        return Err(Error::Data("ablation needs held-out or test sequences".into()).into());
    }
    let mut trainer = Trainer::new(network, schedule, &data.train)?;
    drive(
        &mut trainer,
        &data.train,
        &data.heldout,
        a.epochs,
        a.checkpoint.as_deref(),
        a.log.as_deref(),
    )?;
    let state = trainer.state();
    println!("preset: {}", preset.name);
    println!("status: {}", status_name(state.status));
    let rows = evaluate(trainer.net(), &state.weights, &data.test, state.config.recurrent_iters)?;
    emit_metrics(&rows, a.out.as_deref())
}

fn visualize(a: VisualizeArgs) -> CmdResult {
    match (&a.flow, &a.dist) {
        (Some(path), _) => {
            let (flow, _) = read_flo_file(path)?;
            flow_to_color(&flow, a.max_flow).save(&a.out).map_err(Error::from)?;
        }
        (None, Some(path)) => {
            let dist = read_distribution(&std::fs::read(path)?)?;
            distribution_to_radial_plot(&dist, a.pixel, a.size)?
                .save(&a.out)
                .map_err(Error::from)?;
        }
        (None, None) => unreachable!("clap requires an input"),
    }
    Ok(())
}

fn synth(a: SynthArgs) -> CmdResult {
    let spec = match a.second {
        Some(b) => SyntheticSpec::transparent(a.motion, b, a.frames, a.height, a.width, a.seed),
        None => SyntheticSpec::translating(a.motion, a.frames, a.height, a.width, a.seed),
    };
    let s = synth_sequence(&spec)?.sample;
    std::fs::create_dir_all(&a.out)?;
    for (k, f) in s.frames.iter().enumerate() {
        save_gray(a.out.join(format!("frame{k:02}.png")), f)?;
    }
    write_flo_file(a.out.join("flow.flo"), &s.flow, &s.mask)?;
    Ok(())
}
