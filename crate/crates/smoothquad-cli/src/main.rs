mod config;
mod experiments;
mod output;
mod presets;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{FileFormat, Resolved};

#[derive(Parser)]
#[command(
    name = "smoothquad",
    version,
    about = "Price low-regularity payoffs under discretized diffusions by numerically \
             smoothing the integrand, and run the associated convergence studies"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute the experiment described by a config file or a shipped preset.
    Run(RunArgs),
    /// Print the shipped example configurations (all, or one in TOML form).
    ListPresets {
        /// Preset name; omit to list all five.
        name: Option<String>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Experiment description (TOML).
    #[arg(long, value_name = "FILE", conflicts_with = "preset", required_unless_present = "preset")]
    config: Option<PathBuf>,
    /// Name of a shipped preset to run instead of a config file.
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,
    /// Output path stem; files get .csv/.jsonl/.meta.json extensions.
    #[arg(long, value_name = "STEM")]
    out: Option<PathBuf>,
    /// Override the config's top-level seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Cap on worker threads (falls back to SMOOTHQUAD_THREADS, then all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Output file format.
    #[arg(long, value_enum)]
    format: Option<FileFormat>,
    /// Validate and print the resolved plan without computing or writing anything.
    #[arg(long)]
    dry_run: bool,
}

const EXIT_VALIDATION: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

fn fail(code: u8, message: &str) -> ExitCode {
    eprintln!("error: {message}");
    ExitCode::from(code)
}

fn resolve_threads(flag: Option<usize>) -> Result<Option<usize>, String> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var("SMOOTHQUAD_THREADS") {
        Ok(value) => value
            .trim()
            .parse::<usize>()
            .map(Some)
            .map_err(|_| format!("SMOOTHQUAD_THREADS: expected a thread count, got {value:?}")),
        Err(_) => Ok(None),
    }
}

fn resolve_run(args: &RunArgs) -> Result<Resolved, String> {
    let (config, default_stem) = if let Some(name) = &args.preset {
        let preset = presets::find(name).ok_or_else(|| format!("unknown preset {name:?}"))?;
        (preset.config, preset.name.to_string())
    } else {
        let path = args.config.as_ref().expect("clap requires --config or --preset");
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "run".into());
        (config::load_file(path)?, stem)
    };
    config::resolve(config, &default_stem, args.out.clone(), args.seed, args.format)
}

fn dry_run_report(resolved: &Resolved) -> serde_json::Value {
    let outputs: Vec<String> = output::table_paths(resolved)
        .iter()
        .chain(std::iter::once(&output::meta_path(resolved)))
        .map(|p| p.display().to_string())
        .collect();
    serde_json::json!({
        "experiment": resolved.experiment.to_string(),
        "seed": resolved.plan.seed,
        "format": resolved.format.extension(),
        "outputs": outputs,
        "config": resolved.config,
    })
}

fn run(args: RunArgs) -> ExitCode {
    let threads = match resolve_threads(args.threads) {
        Ok(t) => t,
        Err(message) => return fail(EXIT_VALIDATION, &message),
    };
    let resolved = match resolve_run(&args) {
        Ok(r) => r,
        Err(message) => return fail(EXIT_VALIDATION, &message),
    };
    if args.dry_run {
        println!(
            "{}",
            serde_json::to_string_pretty(&dry_run_report(&resolved)).expect("report is valid JSON")
        );
        return ExitCode::SUCCESS;
    }
    match experiments::execute(&resolved, threads)
        .and_then(|(output, wall)| output::write_all(&resolved, &output, wall, threads))
    {
        Ok(written) => {
            for path in written {
                println!("wrote {}", path.display());
            }
            ExitCode::SUCCESS
        }
        Err(message) => fail(EXIT_RUNTIME, &message),
    }
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run(args) => run(args),
        Command::ListPresets { name: Some(name) } => match presets::print_one(&name) {
            Ok(()) => ExitCode::SUCCESS,
            Err(message) => fail(EXIT_VALIDATION, &message),
        },
        Command::ListPresets { name: None } => {
            presets::print_table();
            ExitCode::SUCCESS
        }
    }
}
