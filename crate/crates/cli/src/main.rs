use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use xairec::context::{describe, Registry};
use xairec::explainers::{ParamKind, Solution};
use xairec::orchestrator::{
    bench_strategies, bundled_config, explain_with, run, wizard, write_atomic, BenchOptions, RunConfig, RunError,
    RunOptions,
};
use xairec::Error;

#[derive(Parser)]
#[command(name = "xairec", version, about = "Pick and tune an explanation method for a model and a question")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Shortlist, evaluate and optimize every compatible solution.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (overrides the config).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Reuse trials already recorded in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Build a run config by answering questions on the terminal.
    Wizard {
        #[arg(long, default_value = "xairec.json")]
        out: PathBuf,
        #[arg(long)]
        registry: Option<PathBuf>,
    },
    /// Show the registered solutions and their search spaces.
    ListSolutions {
        #[arg(long)]
        registry: Option<PathBuf>,
        /// Feature count used for the space bounds.
        #[arg(long, default_value_t = 10)]
        features: usize,
        /// Row count used for the space bounds.
        #[arg(long, default_value_t = 442)]
        rows: usize,
    },
    /// Explain rows with one solution at fixed hyperparameters.
    Explain {
        #[arg(long)]
        solution: String,
        /// `name=value,...`; missing names take their defaults.
        #[arg(long, default_value = "")]
        hp: String,
        /// Data and model settings; the bundled diabetes example by default.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Comma separated row indices of the explained data.
        #[arg(long, value_delimiter = ',')]
        targets: Vec<usize>,
        #[arg(long)]
        top_k: Option<usize>,
        /// Write JSON lines here instead of the text rendering to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time the metric shortcuts against plain evaluation.
    BenchStrategies {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "lime")]
        solution: String,
        #[arg(long, default_value = "")]
        hp: String,
        /// Trial evaluated first to fill the shared caches.
        #[arg(long, default_value = "num_features=5,num_perturbations=2000")]
        prior_hp: String,
        #[arg(long, default_value_t = 1.0)]
        sampling: f64,
        #[arg(long, default_value_t = 1)]
        repeats: usize,
        /// Also write the rows as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        Self {
            code: e.exit_code() as u8,
            message: e.to_string(),
        }
    }
}

fn config_error(e: impl std::fmt::Display) -> Failure {
    Failure {
        code: 2,
        message: e.to_string(),
    }
}

fn core_error(e: Error) -> Failure {
    let code = match e {
        Error::NoCompatibleSolution { .. } => 3,
        Error::Config(_) | Error::Registry(_) | Error::Unknown { .. } | Error::Domain { .. } => 2,
        _ => 4,
    };
    Failure {
        code,
        message: e.to_string(),
    }
}

fn load_config(path: Option<&Path>, fallback: &str) -> Result<RunConfig, Failure> {
    let path = path.map_or_else(|| bundled_config(fallback), Path::to_path_buf);
    RunConfig::load(&path).map_err(config_error)
}

fn load_registry(path: Option<&Path>) -> Result<Registry, Failure> {
    match path {
        Some(p) => Registry::load(p),
        None => Registry::builtin(),
    }
    .map_err(config_error)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(command: Command) -> Result<(), Failure> {
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match command {
        Command::Run {
            config,
            seed,
            out: dir,
            epochs,
            resume,
        } => {
            let mut config = load_config(Some(&config), "")?;
            if let Some(s) = seed {
                config.seed = s;
            }
            if let Some(d) = dir {
                config.output_dir = d;
            }
            if let Some(e) = epochs {
                config.epochs = e;
            }
            let report = run(&config, &RunOptions { resume })?;
            let _ = writeln!(
                out,
                "{} trials in {:.1}s, results in {}",
                report.trials.len(),
                report.wall_seconds,
                config.output_dir.display()
            );
            for (rank, t) in report.ranking.iter().take(5).enumerate() {
                let _ = writeln!(out, "{:>2}. {:>8.3}  {:<11} {}", rank + 1, t.aggregated, t.solution.id(), t.hyperparameters.joined());
            }
        }
        Command::Wizard { out: dest, registry } => {
            let registry = load_registry(registry.as_deref())?;
            let stdin = io::stdin();
            let mut input = stdin.lock();
            wizard(&registry, &mut input as &mut dyn BufRead, &mut out, &dest).map_err(core_error)?;
        }
        Command::ListSolutions { registry, features, rows } => {
            let registry = load_registry(registry.as_deref())?;
            for entry in &registry.explainers {
                let d = describe(&registry, &entry.id, features, rows).map_err(core_error)?;
                let _ = writeln!(out, "{}  [{}: {}]", d.id, d.explanan_tag, d.explanandum_tags.join(", "));
                for p in &d.space.params {
                    let domain = match &p.kind {
                        ParamKind::Integer { lo, hi } => format!("integer {lo}..={hi}"),
                        ParamKind::Continuous { lo, hi, log } => {
                            format!("real {lo}..={hi}{}", if *log { " (log)" } else { "" })
                        }
                        ParamKind::Categorical { options } => options.join(" | "),
                    };
                    let _ = writeln!(out, "    {:<18} {:<32} default {}", p.name, domain, p.default);
                }
            }
        }
        Command::Explain {
            solution,
            hp,
            config,
            seed,
            targets,
            top_k,
            out: dest,
        } => {
            let solution = Solution::parse(&solution).map_err(config_error)?;
            let fallback = match solution.family() {
                xairec::explainers::Family::Attribution => "use_case_1",
                xairec::explainers::Family::Prototype => "use_case_2",
            };
            let mut config = load_config(config.as_deref(), fallback)?;
            if let Some(s) = seed {
                config.seed = s;
            }
            let export = explain_with(&config, solution, &hp, &targets, top_k)?;
            match dest {
                Some(path) => {
                    write_atomic(&path, export.json_lines.as_bytes()).map_err(core_error)?;
                    let _ = writeln!(out, "Wrote {}", path.display());
                }
                None => {
                    let _ = write!(out, "{}", export.text);
                }
            }
        }
        Command::BenchStrategies {
            config,
            solution,
            hp,
            prior_hp,
            sampling,
            repeats,
            out: dest,
        } => {
            let config = load_config(config.as_deref(), "use_case_1")?;
            let options = BenchOptions {
                solution: Solution::parse(&solution).map_err(config_error)?,
                measured_hp: hp,
                prior_hp,
                sampling_fraction: sampling,
                repeats,
            };
            let report = bench_strategies(&config, &options)?;
            let _ = write!(out, "{}", report.to_markdown());
            if let Some(path) = dest {
                let json = serde_json::to_string_pretty(&report).map_err(config_error)?;
                write_atomic(&path, json.as_bytes()).map_err(core_error)?;
            }
        }
    }
    Ok(())
}
