use std::path::PathBuf;
use std::process::ExitCode;

use adage::metrics::KPolicy;
use adage::pipeline::{cmd_evaluate, cmd_explain, PipelineError, Settings};
use adage::selfcheck::{run_timed, SelfcheckOptions};
use adage::shapley::{RankBy, WeightFault};
use anyhow::Context;
use clap::{Parser, Subcommand};

/// Exact channel-group Shapley attributions and alignment scoring.
#[derive(Debug, Parser)]
#[command(name = "adage", version)]
struct Cli {
    /// Worker threads for tiles and runs.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Rank groups by signed or absolute contribution (overrides the manifest).
    #[arg(long, global = true)]
    rank_by: Option<RankBy>,
    /// AP cutoff: `paper` (k = |G| per pixel) or `fixed:<k>` (overrides the manifest).
    #[arg(long, global = true)]
    k_policy: Option<KPolicy>,
    /// Output directory (overrides the manifest).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write attribution tensors, prediction and MCCG maps, ternary and histogram CSVs.
    Explain { manifest: PathBuf },
    /// Write the alignment and segmentation report.
    Evaluate { manifest: PathBuf },
    /// Run the built-in Shapley axiom checks.
    Selfcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Scale the size-1 coalition weight by 1.01 to show the checks catch it.
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// Print the ADGT/ADGM layouts and the backend wire protocol.
    Formats,
    /// Write the synthetic cloud-cover scene and its manifest into DIR.
    Synth {
        dir: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

fn init_logging() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ADAGE_LOG", "warn"))
        .format_timestamp(None)
        .init();
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let settings = Settings {
        jobs: cli.jobs,
        rank_by: cli.rank_by,
        k_policy: cli.k_policy,
        out: cli.out,
    };
    match cli.command {
        Command::Explain { manifest } => {
            let outcome = cmd_explain(&manifest, &settings)?;
            for unit in &outcome.units {
                println!("{unit}");
            }
            println!("wrote {}", outcome.output_dir.display());
        }
        Command::Evaluate { manifest } => {
            let outcome = cmd_evaluate(&manifest, &settings)?;
            for run in &outcome.report.runs {
                for (scoring, scores) in [("last-match", &run.rules), ("independent", &run.rules_independent)] {
                    for s in scores {
                        let value = s
                            .map_at_k_percent
                            .map_or_else(|| "null".to_string(), |v| format!("{v:.2}%"));
                        println!(
                            "run {} rule {} ({scoring}): mAP@k {value} over {} pixels",
                            run.id, s.rule, s.n
                        );
                    }
                }
            }
            println!("wrote {}", outcome.output_dir.join("report.json").display());
        }
        Command::Selfcheck { seed, inject_fault } => {
            let opts = SelfcheckOptions {
                fault: inject_fault.then_some(WeightFault { size: 1, factor: 1.01 }),
                seed,
            };
            let (results, secs) = run_timed(&opts);
            for r in &results {
                println!("{r}");
            }
            println!("selfcheck finished in {secs:.2} s");
            if results.iter().any(|r| !r.passed) {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Formats => print!("{}", adage::formats::describe()),
        Command::Synth { dir, seed } => {
            let path = adage::synth::write_case_study(&dir, seed).context("writing synthetic scene")?;
            println!("wrote {}", path.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    init_logging();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("adage: {err:#}");
            let code = err.downcast_ref::<PipelineError>().map_or(1, PipelineError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
