use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use transdens::experiments::{
    run_accuracy_study, run_density, run_order_study, run_validate_model, run_weak_noise_check, ExperimentConfig,
    Study, StudyReport, CSV_COLUMNS, CSV_VERSION,
};

#[derive(Parser)]
#[command(name = "transdens", version, about = "Laplace-approximated SDE transition densities")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON experiment config; built-in defaults (CIR base case) when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// CSV output path; overrides the config's `output`. Without either,
    /// CSV goes to stdout and the summary to stderr.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads for sweep cells.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Continuous and discrete densities at a single (x0, T, xT).
    Density,
    /// Discretization error against step size, per scheme.
    OrderStudy,
    /// Relative error against noise intensity and horizon.
    AccuracyStudy,
    /// Laplace vs weak-noise densities on random finite-dimensional instances.
    WeakNoiseCheck,
    /// Compare the model's analytic derivatives with finite differences.
    ValidateModel,
    /// Print the default config.
    DefaultConfig,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Density => "density",
            Command::OrderStudy => "order-study",
            Command::AccuracyStudy => "accuracy-study",
            Command::WeakNoiseCheck => "weak-noise-check",
            Command::ValidateModel => "validate-model",
            Command::DefaultConfig => "default-config",
        }
    }

    fn study(self) -> Option<Study> {
        Some(match self {
            Command::Density => Study::Density,
            Command::OrderStudy => Study::Order,
            Command::AccuracyStudy => Study::Accuracy,
            Command::WeakNoiseCheck => Study::WeakNoise,
            Command::ValidateModel => Study::ValidateModel,
            Command::DefaultConfig => return None,
        })
    }
}

const EXIT_CONFIG: u8 = 1;
const EXIT_SOLVER: u8 = 2;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();

    let cfg = match load_config(cli.config.as_deref()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e:#}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let Some(study) = cli.command.study() else {
        println!("{}", serde_json::to_string_pretty(&cfg).expect("config serializes"));
        return ExitCode::SUCCESS;
    };
    if let Err(e) = cfg.validate_for(study) {
        eprintln!("config error: {e}");
        return ExitCode::from(EXIT_CONFIG);
    }
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("config error: --jobs must be at least 1");
            return ExitCode::from(EXIT_CONFIG);
        }
        rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global().expect("thread pool set once");
    }

    let out = cli.out.clone().or_else(|| cfg.output.clone().map(PathBuf::from));
    match execute(cli.command, &cfg, out.as_deref()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_SOLVER),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_SOLVER)
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    let Some(path) = path else {
        return Ok(ExperimentConfig::default());
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(ExperimentConfig::from_json(&text)?)
}

/// Runs the command; `Ok(false)` reports a failed check without an error.
fn execute(command: Command, cfg: &ExperimentConfig, out: Option<&Path>) -> Result<bool> {
    let report = match command {
        Command::Density => run_density(cfg)?,
        Command::OrderStudy => run_order_study(cfg)?,
        Command::AccuracyStudy => run_accuracy_study(cfg)?,
        Command::WeakNoiseCheck => run_weak_noise_check(cfg)?,
        Command::ValidateModel => {
            let check = run_validate_model(cfg)?;
            println!(
                "{}: {} states, drift mismatch {:.2e}, diffusion mismatch {:.2e} (tolerance {:.0e}) -> {}",
                cfg.model.name(),
                check.states_checked,
                check.drift_error,
                check.diffusion_error,
                check.tolerance,
                if check.passed() { "ok" } else { "FAILED" }
            );
            return Ok(check.passed());
        }
        Command::DefaultConfig => unreachable!("handled before dispatch"),
    };

    let csv = render_csv(command, cfg, &report)?;
    let mut summary: Box<dyn Write> = match out {
        Some(path) => {
            fs::write(path, &csv).with_context(|| format!("writing {}", path.display()))?;
            Box::new(io::stdout())
        }
        None => {
            io::stdout().write_all(csv.as_bytes())?;
            Box::new(io::stderr())
        }
    };
    for note in &report.notes {
        writeln!(summary, "{note}")?;
    }
    for s in &report.slopes {
        match s.value {
            Some(v) => writeln!(summary, "slope {}: {v:.3} ({} points)", s.label, s.points)?,
            None => writeln!(summary, "slope {}: not enough points ({})", s.label, s.points)?,
        }
    }
    Ok(true)
}

/// Comment header (format version, command, resolved config, slopes), then
/// the fixed columns.
fn render_csv(command: Command, cfg: &ExperimentConfig, report: &StudyReport) -> Result<String> {
    let mut buf = Vec::new();
    writeln!(buf, "# transdens csv v{CSV_VERSION}")?;
    writeln!(buf, "# command: {}", command.name())?;
    writeln!(buf, "# config: {}", serde_json::to_string(cfg)?)?;
    for s in &report.slopes {
        let v = s.value.map_or_else(|| "NA".to_string(), |v| v.to_string());
        writeln!(buf, "# slope {}: {v} ({} points)", s.label, s.points)?;
    }
    {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(&mut buf);
        w.write_record(CSV_COLUMNS)?;
        for row in &report.rows {
            w.serialize(row)?;
        }
        w.flush()?;
    }
    Ok(String::from_utf8(buf)?)
}
