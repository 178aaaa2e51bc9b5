use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use softprop_cli::io::{self, DatasetManifest, FORMAT_VERSION};
use softprop_cli::pipeline::{self, SweepFile};
use softprop_cli::{CliError, Scenario};

#[derive(Parser)]
#[command(name = "softprop", version, about = "Simulate, train, estimate and calibrate sensorized soft bodies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario JSON.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Forward-simulate the scenario schedule into recording.csv.
    Simulate(Common),
    /// Simulate the training schedule and fit the regressor (regressor.json).
    Train(Common),
    /// Reconstruct a recording through the inverse model (metrics.json, traces.csv).
    Estimate {
        #[command(flatten)]
        common: Common,
        /// Feed recorded shapes instead of regressor predictions.
        #[arg(long)]
        exact_shape: bool,
        /// Defaults to <out>/recording.csv.
        #[arg(long)]
        recording: Option<PathBuf>,
        /// Defaults to <out>/regressor.json.
        #[arg(long)]
        regressor: Option<PathBuf>,
    },
    /// Fit Young's modulus and the scaling factor (calibration.json).
    Calibrate {
        #[command(flatten)]
        common: Common,
        /// Sweep file with reference levels and validation traces; synthesized
        /// from the scenario when absent.
        sweep: Option<PathBuf>,
    },
}

struct Ctx {
    scenario: Scenario,
    seed: u64,
    out: PathBuf,
}

impl Ctx {
    fn new(c: &Common) -> Result<Self, CliError> {
        let scenario = io::load_scenario(&c.config)?;
        let seed = c.seed.unwrap_or(scenario.seed);
        Ok(Self { scenario, seed, out: c.out.clone() })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

fn announce(path: &Path) {
    println!("wrote {}", path.display());
}

fn simulate(c: &Common) -> Result<(), CliError> {
    let ctx = Ctx::new(c)?;
    let start = Instant::now();
    let rec = pipeline::run_forward(&ctx.scenario, &ctx.scenario.schedule, ctx.seed)?;
    let csv = ctx.path("recording.csv");
    let manifest = io::write_recording(&csv, &rec, &ctx.scenario, ctx.seed)?;
    eprintln!("simulate: {} frames in {:.3} s", rec.frames.len(), start.elapsed().as_secs_f64());
    announce(&csv);
    announce(&manifest);
    Ok(())
}

fn train(c: &Common) -> Result<(), CliError> {
    let ctx = Ctx::new(c)?;
    let start = Instant::now();
    let t = pipeline::train(&ctx.scenario, ctx.seed)?;
    let dataset = ctx.path("dataset.csv");
    io::write_text(&dataset, &io::dataset_csv(&t.recording))?;
    let manifest = ctx.path("dataset.json");
    let device = ctx.scenario.build_device()?;
    io::write_json(
        &manifest,
        &DatasetManifest {
            version: FORMAT_VERSION,
            mode: t.dataset.mode,
            window: t.dataset.window,
            frames: t.recording.frames.len(),
            samples: t.dataset.samples.len(),
            resample_bins: ctx.scenario.training.resample_bins,
            seed: pipeline::training_seed(ctx.seed),
            layout: device.layout.clone(),
        },
    )?;
    let regressor = ctx.path("regressor.json");
    io::write_text(&regressor, &t.regressor.to_json())?;
    let report = ctx.path("training.json");
    io::write_json(&report, &t.report)?;
    eprintln!(
        "train: {} frames, {} samples, best epoch {} in {:.3} s",
        t.recording.frames.len(),
        t.dataset.samples.len(),
        t.report.best_epoch,
        start.elapsed().as_secs_f64()
    );
    for p in [&dataset, &manifest, &regressor, &report] {
        announce(p);
    }
    Ok(())
}

fn estimate(c: &Common, exact: bool, recording: Option<&Path>, regressor: Option<&Path>) -> Result<(), CliError> {
    let ctx = Ctx::new(c)?;
    let rec_path = recording.map(Path::to_path_buf).unwrap_or_else(|| ctx.path("recording.csv"));
    let rec = io::read_recording(&rec_path)?;
    let reg = if exact { None } else { Some(io::load_regressor(&regressor.map(Path::to_path_buf).unwrap_or_else(|| ctx.path("regressor.json")))?) };
    let (report, recon) = pipeline::reconstruct_and_score(&rec, reg.as_ref(), &ctx.scenario)?;
    let metrics = ctx.path("metrics.json");
    io::write_json(&metrics, &report)?;
    let traces = ctx.path("traces.csv");
    io::write_text(&traces, &io::traces_csv(&rec, &recon))?;
    let rt = report.runtime;
    eprintln!("estimate: {} frames in {:.3} s (mean {:.2} ms, max {:.2} ms per frame)", report.frames, rt.total_s, rt.mean_frame_ms, rt.max_frame_ms);
    announce(&metrics);
    announce(&traces);
    Ok(())
}

fn calibrate(c: &Common, sweep: Option<&Path>) -> Result<(), CliError> {
    let ctx = Ctx::new(c)?;
    let start = Instant::now();
    let given: Option<SweepFile> = sweep.map(io::read_json).transpose()?;
    let synthesized = given.is_none();
    let (report, file) = pipeline::calibrate(&ctx.scenario, given, ctx.seed)?;
    if synthesized {
        let p = ctx.path("sweep.json");
        io::write_json(&p, &file)?;
        announce(&p);
    }
    let p = ctx.path("calibration.json");
    io::write_json(&p, &report)?;
    eprintln!("calibrate: {} evaluations in {:.3} s", report.modulus.trace.len() + report.scaling.trace.len(), start.elapsed().as_secs_f64());
    announce(&p);
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Simulate(c) => simulate(c),
        Command::Train(c) => train(c),
        Command::Estimate { common, exact_shape, recording, regressor } => estimate(common, *exact_shape, recording.as_deref(), regressor.as_deref()),
        Command::Calibrate { common, sweep } => calibrate(common, sweep.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprint!("{}", e.render());
            let msg = e.kind().to_string();
            eprintln!("{}", serde_json::json!({ "error": { "code": 1, "kind": "usage", "frame": null, "message": msg } }));
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
