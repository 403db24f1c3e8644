use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use stereodepth::config::RunConfig;
use stereodepth::error::Error;
use stereodepth::losses::ConstraintMode;
use stereodepth::metrics;
use stereodepth::{gradcheck, io, optimize, synth};

/// Stereo depth by direct per-pixel optimization on synthetic scenes.
#[derive(Parser)]
#[command(name = "stereodepth", version, disable_help_subcommand = true)]
struct Cli {
    /// TOML run configuration; omitted keys fall back to defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the config seed (also reseeds the scene).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory; defaults under $STEREODEPTH_OUT or ./out.
    #[arg(long, global = true, env = "STEREODEPTH_OUT")]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic stereo scene directory.
    Synth,
    /// Optimize per-pixel depth against a scene directory.
    Optimize {
        /// Scene directory produced by `synth`.
        scene: PathBuf,
        /// coarse-to-fine, ddc-only or cdc-only.
        #[arg(long)]
        mode: Option<ConstraintMode>,
    },
    /// Compare predicted and ground-truth 16-bit depth maps.
    Eval(EvalArgs),
    /// Finite-difference check of every differentiable operation.
    Gradcheck,
}

#[derive(Args)]
struct EvalArgs {
    /// Predicted depth PNG; give a second file with --pp for
    /// flip-averaged post-processing.
    #[arg(required = true, num_args = 1..=2)]
    pred: Vec<PathBuf>,
    /// Ground-truth depth PNG.
    #[arg(long)]
    gt: PathBuf,
    /// Average the first prediction with the re-flipped second one.
    #[arg(long)]
    pp: bool,
    /// Rescale predictions by median(gt)/median(pred).
    #[arg(long)]
    median_scale: bool,
    /// Depth cap in meters.
    #[arg(long)]
    cap: Option<f64>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version requests are not usage errors
            use clap::error::ErrorKind;
            let benign = matches!(
                e.kind(),
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion
            );
            let _ = e.print();
            return if benign { ExitCode::SUCCESS } else { ExitCode::from(1) };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn load_config(cli: &Cli) -> stereodepth::Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config = config.with_seed(seed);
    }
    config.validate()?;
    Ok(config)
}

fn output_root(cli: &Cli, config: &RunConfig) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn run(cli: Cli) -> stereodepth::Result<ExitCode> {
    match &cli.command {
        Command::Synth => {
            let config = load_config(&cli)?;
            let scene = synth::generate(&config.scene)?;
            let dir = output_root(&cli, &config).join(format!("scene-{}", config.scene.seed));
            io::write_scene_dir(&dir, &scene, &config)?;
            println!("scene written to {}", dir.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Optimize { scene, mode } => {
            let (scene, mut config) = io::read_scene_dir(scene)?;
            if let Some(path) = &cli.config {
                config = RunConfig::load(path)?;
            }
            if let Some(mode) = mode {
                config.optimizer.mode = *mode;
            }
            config.validate()?;
            let ladder = config.ladder.build()?;
            let report = optimize::optimize_scene(&scene, &ladder, &config.optimizer)?;
            let dir = output_root(&cli, &config).join(format!(
                "run-{}-{}",
                config.optimizer.mode, scene.seed
            ));
            io::write_run_dir(&dir, &report, &config)?;
            let last = report.trace.last().expect("nonempty trace");
            println!(
                "run written to {} (final loss {:.6}, {:.1}s)",
                dir.display(),
                last.total,
                report.duration.as_secs_f64()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Eval(args) => cmd_eval(&cli, args),
        Command::Gradcheck => cmd_gradcheck(),
    }
}

fn cmd_eval(cli: &Cli, args: &EvalArgs) -> stereodepth::Result<ExitCode> {
    let config = load_config(cli)?;
    let mut eval = config.eval;
    if let Some(cap) = args.cap {
        eval.cap = cap;
    }
    if args.median_scale {
        eval.median_scaling = true;
    }
    if args.pp && args.pred.len() != 2 {
        return Err(Error::InvalidConfig(
            "--pp needs two prediction files".into(),
        ));
    }

    let gt = io::read_depth_png16(&args.gt)?;
    let pred = {
        let first = io::read_depth_png16(&args.pred[0])?;
        if args.pp {
            let second = io::read_depth_png16(&args.pred[1])?;
            metrics::post_process(&first, &second)?
        } else {
            first
        }
    };
    eval.validate(gt.width(), gt.height())?;
    let report = metrics::evaluate(&pred, &gt, &eval)?;

    println!("{}", io::METRICS_CSV_HEADER.replace(',', "\t"));
    println!(
        "{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{}",
        report.abs_rel,
        report.sq_rel,
        report.rmse,
        report.log_rmse,
        report.log10,
        report.a1,
        report.a2,
        report.a3,
        report.valid_pixels
    );
    let out = output_root(cli, &config);
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    io::append_metrics_csv(&out.join("metrics.csv"), &report)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck() -> stereodepth::Result<ExitCode> {
    let start = Instant::now();
    let checks = gradcheck::run_suite(16, 12, 5, 100, 1234);
    let mut all_pass = true;
    for check in &checks {
        let verdict = if check.passed() { "pass" } else { "FAIL" };
        println!(
            "{:<28} max rel err {:>10.3e}  (tol {:.0e})  {}",
            check.name, check.max_rel_err, check.tolerance, verdict
        );
        all_pass &= check.passed();
    }
    println!(
        "{} ops checked in {:.1}s",
        checks.len(),
        start.elapsed().as_secs_f64()
    );
    if all_pass {
        Ok(ExitCode::SUCCESS)
    } else {
        Err(Error::InvalidConfig("gradient check failed".into()))
    }
}
