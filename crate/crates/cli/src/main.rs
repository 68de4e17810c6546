use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use papo_core::harness::{self, Ablation, Checkpoint, RunConfig};
use papo_core::PapoError;

#[derive(Parser)]
#[command(name = "papo", version, about = "Planning-aware policy optimization laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy and write metrics.jsonl and checkpoint.bin to run.output_dir.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override a config value, e.g. --set optimize.eta=0.1
        #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Success rate of a checkpoint on held-out tasks.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        episodes: usize,
        /// Evaluate under this config instead of the embedded one; must be compatible.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Number of held-out tasks (defaults to run.final_eval_tasks).
        #[arg(long)]
        tasks: Option<usize>,
    },
    /// Annotate saved trajectories with planning selections and causal profiles.
    Analyze {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Continuation policy; a fresh policy from the config seed otherwise.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Write annotated JSONL here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Train every mode under every seed and write a TSV summary.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "papo,grpo,no_suff,no_nec")]
        modes: Vec<Ablation>,
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
        /// Sweep these eta values (defaults to optimize.eta).
        #[arg(long, value_delimiter = ',')]
        etas: Vec<f64>,
        #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
        overrides: Vec<String>,
        /// Summary path (defaults to <run.output_dir>/summary.tsv).
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<PapoError>() {
        Some(PapoError::Config(_)) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train { config, overrides } => train(&config, &overrides),
        Command::Eval {
            checkpoint,
            episodes,
            config,
            tasks,
        } => eval(&checkpoint, episodes, config.as_deref(), tasks),
        Command::Analyze {
            input,
            config,
            checkpoint,
            output,
        } => analyze(&input, &config, checkpoint.as_deref(), output.as_deref()),
        Command::Ablate {
            config,
            modes,
            seeds,
            etas,
            overrides,
            output,
        } => ablate(&config, &modes, &seeds, &etas, &overrides, output.as_deref()),
    }
}

fn train(path: &Path, overrides: &[String]) -> Result<()> {
    let config = RunConfig::from_file(path, overrides)?;
    let outcome =
        harness::train(&config).with_context(|| format!("training failed under config:\n{}", config.to_toml()))?;
    let dir = harness::write_run(&config, &outcome)?;
    if let Some(last) = outcome.metrics.last() {
        eprintln!(
            "{} rounds, final eval success {:.3}, {} rollouts",
            outcome.metrics.len(),
            last.eval_success_rate,
            last.rollouts
        );
    }
    println!("{}", dir.display());
    Ok(())
}

fn eval(path: &Path, episodes: usize, config: Option<&Path>, tasks: Option<usize>) -> Result<()> {
    if episodes == 0 {
        return Err(PapoError::Config("--episodes must be >= 1".into()).into());
    }
    let checkpoint = Checkpoint::load(path)?;
    let config = match config {
        Some(p) => {
            let c = RunConfig::from_file(p, &[])?;
            checkpoint.check_config(&c)?;
            c
        }
        None => checkpoint.config()?,
    };
    let tasks = tasks.unwrap_or(config.run.final_eval_tasks);
    let rate = harness::final_success_rate(&config, &checkpoint.params, tasks, episodes)?;
    println!("{{\"success_rate\":{rate},\"tasks\":{tasks},\"episodes\":{episodes}}}");
    Ok(())
}

fn analyze(input: &Path, config: &Path, checkpoint: Option<&Path>, output: Option<&Path>) -> Result<()> {
    let config = RunConfig::from_file(config, &[])?;
    let params = match checkpoint {
        Some(p) => {
            let c = Checkpoint::load(p)?;
            c.check_config(&config)?;
            c.params
        }
        None => harness::fresh_params(&config)?,
    };
    let text = std::fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    let report = harness::analyze(&config, &params, &text)?;
    for (line, msg) in &report.errors {
        eprintln!("{}:{line}: {msg}", input.display());
    }
    let mut out = report.lines.join("\n");
    if !out.is_empty() {
        out.push('\n');
    }
    match output {
        Some(p) => std::fs::write(p, out).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{out}"),
    }
    Ok(())
}

fn ablate(
    path: &Path,
    modes: &[Ablation],
    seeds: &[u64],
    etas: &[f64],
    overrides: &[String],
    output: Option<&Path>,
) -> Result<()> {
    let config = RunConfig::from_file(path, overrides)?;
    if modes.is_empty() {
        return Err(PapoError::Config("no ablation modes given".into()).into());
    }
    let etas = if etas.is_empty() {
        vec![config.optimize.eta]
    } else {
        etas.to_vec()
    };
    if let Some(eta) = etas.iter().find(|e| !(e.is_finite() && **e >= 0.0)) {
        return Err(PapoError::Config(format!("eta {eta} must be finite and >= 0")).into());
    }
    let rows = harness::ablate(&config, modes, &etas, seeds)?;
    let tsv = harness::summary_tsv(&rows);
    let target = output
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from(&config.run.output_dir).join("summary.tsv"));
    if let Some(dir) = target.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(&target, &tsv).with_context(|| format!("writing {}", target.display()))?;
    print!("{tsv}");
    Ok(())
}
