use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use llmrl_core::gateway::Backend;
use llmrl_core::metrics::Component;
use llmrl_core::narrator::StyleName;
use toml::Value;

use llmrl_cli::{cmd_ablate, cmd_eval, cmd_report, cmd_train, verify_artifacts, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "llmrl", version, about = "Train and evaluate highway driving agents with language-model reward feedback")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration value, e.g. `--set agent.learning_rate=0.001`; repeatable.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,
    /// Seed for both the traffic and the agent.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    backend: Option<Backend>,
    /// Driving style(s), comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    style: Vec<StyleName>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one agent per style.
    Train,
    /// Greedy evaluation of trained checkpoints.
    Eval {
        /// Checkpoint to evaluate; defaults to `<out>/<style>/policy.json`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Evaluation seeds, comma separated.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
    /// Reward ablation over component subsets.
    Ablate {
        /// Styles to repeat the sweep for.
        #[arg(long, value_delimiter = ',')]
        styles: Vec<StyleName>,
        /// Restrict to subsets of these components.
        #[arg(long, value_delimiter = ',', default_value = "safety,efficiency,llm")]
        components: Vec<Component>,
        /// Training seeds, comma separated.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
    /// Plot-ready CSVs from a run directory.
    Report {
        /// Run directory; defaults to the configured output directory.
        dir: Option<PathBuf>,
    },
}

fn toml_list<T: ToString>(items: &[T], quote: bool) -> String {
    let parts: Vec<String> = items
        .iter()
        .map(|i| if quote { Value::String(i.to_string()).to_string() } else { i.to_string() })
        .collect();
    format!("[{}]", parts.join(", "))
}

/// Command-line flags expressed as overrides so the manifest records them.
fn overrides(cli: &Cli) -> Vec<String> {
    let mut out = cli.set.clone();
    if let Some(seed) = cli.seed {
        out.push(format!("sim.rng_seed={seed}"));
        out.push(format!("agent.rng_seed={seed}"));
    }
    if let Some(dir) = &cli.out {
        out.push(format!("run.out_dir={}", Value::String(dir.display().to_string())));
    }
    if let Some(b) = cli.backend {
        let name = match b {
            Backend::Remote => "remote",
            Backend::Mock => "mock",
        };
        out.push(format!("gateway.backend=\"{name}\""));
    }
    let styles: Vec<&str> = match &cli.command {
        Command::Ablate { styles, .. } if !styles.is_empty() => styles.iter().map(|s| s.as_str()).collect(),
        _ => cli.style.iter().map(|s| s.as_str()).collect(),
    };
    if !styles.is_empty() {
        out.push(format!("run.styles={}", toml_list(&styles, true)));
    }
    match &cli.command {
        Command::Eval { seeds, .. } if !seeds.is_empty() => out.push(format!("run.eval_seeds={}", toml_list(seeds, false))),
        Command::Ablate { seeds, .. } if !seeds.is_empty() => out.push(format!("run.ablation_seeds={}", toml_list(seeds, false))),
        _ => {}
    }
    out
}

fn run(cli: Cli) -> Result<()> {
    let overrides = overrides(&cli);
    let cfg = RunConfig::load(cli.config.as_deref(), &overrides)?;
    let mut stderr = std::io::stderr();
    let written = match &cli.command {
        Command::Train => cmd_train(&cfg, &overrides, &mut stderr)?,
        Command::Eval { checkpoint, .. } => cmd_eval(&cfg, &overrides, checkpoint.as_deref(), &mut stderr)?,
        Command::Ablate { components, .. } => cmd_ablate(&cfg, &overrides, components, &mut stderr)?,
        Command::Report { dir } => cmd_report(dir.as_ref().unwrap_or(&cfg.run.out_dir), &mut stderr)?,
    };
    verify_artifacts(&written)?;
    for p in &written {
        println!("{}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
