use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use posenav_cli::{
    cmd_demo_export, cmd_eval, cmd_landscape, cmd_render, cmd_train, CliError, PolicyKind, RunConfig, Suite,
    VERSION,
};

#[derive(Parser)]
#[command(name = "posenav", version = VERSION, about = "Pose estimation by navigating a differentiable generator")]
struct Cli {
    /// INI run configuration; omitted keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// gd, gd16, gd32, rl, bc, dagger, rl+gd or dagger+gd.
    #[arg(long, global = true)]
    policy: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the configured policy; writes model.bin, train_log.csv, manifest.ini.
    Train,
    /// Run an evaluation suite; writes report.csv.
    Eval {
        /// A built-in GD policy (gd, gd16, gd32) or a model file.
        target: Option<String>,
        /// clean, sweep, robustness, timing or ablation.
        #[arg(long, default_value = "clean")]
        suite: String,
    },
    /// Render a state to target.ppm, plus a trajectory with --policy.
    Render {
        /// Comma-separated key=value list, e.g. az=30,el=10,tx=0.05,z3=1.
        state: String,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Image loss over an azimuth × elevation grid around a target state.
    Landscape {
        state: String,
        /// Azimuth by elevation cell counts; the elevation count must be odd.
        #[arg(long, default_value = "36x7")]
        grid: String,
        /// Elevation spacing in degrees.
        #[arg(long, default_value_t = 10.0)]
        el_step: f64,
    },
    /// Generate a demonstration set (demos.csv and features.bin).
    DemoExport {
        #[arg(long)]
        n: Option<usize>,
    },
}

fn resolve(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
        cfg.eval.seeds = vec![s];
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    if let Some(p) = &cli.policy {
        cfg.policy = PolicyKind::parse(p).map_err(CliError::usage)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli, command_line: &str) -> Result<(), CliError> {
    let cfg = resolve(&cli)?;
    match &cli.command {
        Command::Train => cmd_train(&cfg, command_line),
        Command::Eval { target, suite } => cmd_eval(&cfg, target.as_deref(), Suite::parse(suite)?, command_line),
        Command::Render { state, model, steps } => {
            let policy = cli.policy.as_ref().map(|_| cfg.policy);
            cmd_render(&cfg, state, policy, model.as_deref(), *steps, command_line)
        }
        Command::Landscape { state, grid, el_step } => cmd_landscape(&cfg, state, grid, *el_step, command_line),
        Command::DemoExport { n } => cmd_demo_export(&cfg, *n, command_line),
    }
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    let command_line = args[1..].join(" ");
    let cli = Cli::parse();
    match run(cli, &command_line) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code as u8)
        }
    }
}
