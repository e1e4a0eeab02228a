//! `reuse-sweep`: batch front end for reuse-aware sensitivity studies.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use reuse_sweep::reuse::ReuseMode;
use reuse_sweep::study::{
    compare_modes, render_comparison, render_plan, render_report, render_sets, render_simulation,
    run_study, simulate, write_file, Overrides, Study, StudyConfig, StudyError, StudyReport,
};

#[derive(Parser)]
#[command(
    name = "reuse-sweep",
    version,
    about = "Reuse-aware parameter sensitivity studies"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw the parameter sets of the configured sample plan.
    Sample(Common),
    /// Build the merged-stage plan and print its edge lists.
    Plan(Common),
    /// Run the study end to end and write its report.
    Run(Common),
    /// Run the same sample under several reuse modes.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Comma-separated modes.
        #[arg(long, value_delimiter = ',', default_value = "none,stage,rtma,rmsr")]
        modes: Vec<ReuseMode>,
    },
    /// Simulate demand-driven dispatch over several node counts.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Comma-separated node counts; defaults to the config's `nodes`.
        #[arg(long, value_delimiter = ',')]
        nodes: Vec<usize>,
    },
    /// Render a saved report.json as text.
    Report {
        /// Report file, or a directory containing report.json.
        #[arg(long, env = "REUSE_SWEEP_OUT")]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// Study config (JSON).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    mode: Option<ReuseMode>,
    #[arg(long)]
    max_bucket_size: Option<usize>,
    #[arg(long)]
    active_paths: Option<usize>,
    /// Worker threads per stage (env REUSE_SWEEP_WORKERS).
    #[arg(long)]
    workers: Option<usize>,
    /// Sample seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (env REUSE_SWEEP_OUT).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn config(&self) -> Result<StudyConfig, StudyError> {
        let mut cfg = StudyConfig::load(&self.config)?;
        cfg.apply_env()?;
        cfg.apply(&Overrides {
            mode: self.mode,
            max_bucket_size: self.max_bucket_size,
            active_paths: self.active_paths,
            workers: self.workers,
            seed: self.seed,
            out: self.out.clone(),
        });
        cfg.validate()?;
        Ok(cfg)
    }
}

fn emit(cfg: &StudyConfig, name: &str, text: &str) -> Result<(), StudyError> {
    print!("{text}");
    if let Some(out) = &cfg.out {
        write_file(out, name, text.as_bytes())?;
        info!("wrote {}", out.join(name).display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), StudyError> {
    match cli.command {
        Command::Sample(c) => {
            let cfg = c.config()?;
            let study = Study::load(cfg)?;
            let sets = study.sample()?;
            info!("drew {} parameter sets", sets.len());
            emit(
                &study.config,
                "sets.txt",
                &render_sets(&study.space, &sets, None),
            )
        }
        Command::Plan(c) => {
            let cfg = c.config()?;
            let study = Study::load(cfg)?;
            let sets = study.sample()?;
            let plan = study.plan(&sets, study.config.mode)?;
            emit(&study.config, "plan.txt", &render_plan(&study, &plan))
        }
        Command::Run(c) => {
            let cfg = c.config()?;
            let report = run_study(&cfg)?;
            print!("{}", render_report(&report));
            if let Some(out) = &cfg.out {
                info!("report written to {}", out.display());
            }
            if !report.measured.memory_bound_ok {
                return Err(StudyError::Execution(
                    "peak memory exceeded the static bound".into(),
                ));
            }
            Ok(())
        }
        Command::Compare { common, modes } => {
            let cfg = common.config()?;
            let rows = compare_modes(&cfg, &modes)?;
            if let Some(out) = &cfg.out {
                write_file(
                    out,
                    "compare.json",
                    pretty(serde_json::to_string_pretty(&rows)).as_bytes(),
                )?;
            }
            emit(&cfg, "compare.txt", &render_comparison(&rows))?;
            if rows.iter().any(|r| !r.scores_match) {
                return Err(StudyError::Execution(
                    "modes produced different scores".into(),
                ));
            }
            Ok(())
        }
        Command::Simulate { common, nodes } => {
            let cfg = common.config()?;
            let nodes = if nodes.is_empty() {
                cfg.nodes.clone()
            } else {
                nodes
            };
            let rows = simulate(&cfg, &nodes)?;
            if let Some(out) = &cfg.out {
                write_file(
                    out,
                    "simulate.json",
                    pretty(serde_json::to_string_pretty(&rows)).as_bytes(),
                )?;
            }
            emit(&cfg, "simulate.txt", &render_simulation(&rows))
        }
        Command::Report { out } => {
            let Some(path) = out else {
                return Err(StudyError::Config(
                    "report needs --out or REUSE_SWEEP_OUT".into(),
                ));
            };
            let file = if path.is_dir() {
                path.join("report.json")
            } else {
                path
            };
            let text = read(&file)?;
            print!("{}", render_report(&StudyReport::from_json(&text)?));
            Ok(())
        }
    }
}

fn pretty(json: serde_json::Result<String>) -> String {
    json.expect("rows serialize") + "\n"
}

fn read(path: &Path) -> Result<String, StudyError> {
    std::fs::read_to_string(path)
        .map_err(|e| StudyError::Config(format!("reading {}: {e}", path.display())))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("reuse-sweep: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
