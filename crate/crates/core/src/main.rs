use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use flexopf::bench::{run_benchmark, solve_instance, BenchReport, SolveOptions};
use flexopf::case_io::recipe::{write_cases, RECIPE_SEED};
use flexopf::case_io::{parse_case, to_markdown_string, Format, RelaxationSelector, RunConfig};
use flexopf::error::Error;

#[derive(Parser)]
#[command(name = "flexopf", version, about = "Dual and primal bounds for multi-period OPF with flexible loads")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Bound one case over a given number of periods.
    Solve {
        case: PathBuf,
        #[arg(long)]
        periods: Option<usize>,
        #[arg(long, default_value = "both")]
        relaxation: RelaxationSelector,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Run everything on one thread.
        #[arg(long)]
        single_core: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "csv")]
        format: Format,
        /// Write the voltage and flow boxes before and after tightening.
        #[arg(long)]
        dump_boxes: Option<PathBuf>,
        /// Feasibility tolerance of the primal point.
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Run the suite described by a TOML config.
    Bench { config: PathBuf },
    /// Regenerate the shipped case files.
    GenCases {
        dir: PathBuf,
        #[arg(long, default_value_t = RECIPE_SEED)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(failures) if failures > 0 => {
            eprintln!("{failures} row(s) failed");
            ExitCode::from(2)
        }
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

/// Number of failed rows, or an error for unusable input.
fn run(command: Command) -> Result<usize, Error> {
    match command {
        Command::Solve {
            case,
            periods,
            relaxation,
            seed,
            single_core,
            out,
            format,
            dump_boxes,
            tol,
        } => {
            let inst = parse_case(&case, periods)?;
            let mut opts = SolveOptions {
                relaxation,
                seed,
                dump_boxes,
                ..SolveOptions::default()
            };
            opts.primal.seed = seed;
            if let Some(tol) = tol {
                if !(tol > 0.0) {
                    return Err(Error::Config("--tol must be positive".into()));
                }
                opts.primal.tol = tol;
            }
            let run = if single_core {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(1)
                    .build()
                    .map_err(|e| Error::Config(format!("thread pool: {e}")))?
                    .install(|| solve_instance(&inst, &opts))
            } else {
                solve_instance(&inst, &opts)
            };
            let report = BenchReport { runs: vec![run] };
            finish(&report, out.map(|p| (p, format)))
        }
        Command::Bench { config } => {
            let cfg = RunConfig::read(&config)?;
            let report = run_benchmark(&cfg)?;
            finish(&report, None)
        }
        Command::GenCases { dir, seed } => {
            for path in write_cases(&dir, seed)? {
                println!("{}", path.display());
            }
            Ok(0)
        }
    }
}

fn finish(report: &BenchReport, out: Option<(PathBuf, Format)>) -> Result<usize, Error> {
    print!("{}", to_markdown_string(&report.result_rows()));
    for row in report.rows().filter(|r| r.failed()) {
        eprintln!("{} T={} {}: {}", row.case, row.periods, row.relaxation, row.error.as_deref().unwrap_or(""));
    }
    if let Some((path, format)) = out {
        report.write(&path, format)?;
    }
    Ok(report.failures())
}
