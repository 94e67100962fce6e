use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use pgdr::commands::{
    ablate_command, gen_command, load_config, load_stream, parse_variant_list, report_command,
    run_command,
};
use pgdr::config::SEED_ENV;

#[derive(Parser)]
#[command(
    name = "pgdr",
    version,
    about = "Partial-label incremental learning lab"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and write it as a task stream.
    Gen {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one variant over a stream.
    Run {
        #[arg(long)]
        stream: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train several variants on the same stream.
    Ablate {
        #[arg(long)]
        stream: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated variant tags, e.g. PGDR,NO_MEMORY.
        #[arg(long)]
        variants: String,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Summarise runs found under a directory.
    Report {
        #[arg(long)]
        in_dir: PathBuf,
    },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let seed_env = std::env::var(SEED_ENV).ok();
    match cli.command {
        Command::Gen { spec, out } => {
            let stream = gen_command(&spec, &out)
                .with_context(|| format!("generating from {}", spec.display()))?;
            let n: usize = stream.tasks.iter().map(|t| t.train.len()).sum();
            println!(
                "wrote {} tasks, {n} training and {} test samples to {}",
                stream.num_tasks(),
                stream.test.len(),
                out.display()
            );
        }
        Command::Run {
            stream,
            config,
            out_dir,
        } => {
            let s =
                load_stream(&stream).with_context(|| format!("reading {}", stream.display()))?;
            let cfg = load_config(&config, seed_env.as_deref())
                .with_context(|| format!("reading {}", config.display()))?;
            let result = run_command(&s, &cfg, &out_dir)?;
            for t in &result.report.tasks {
                println!("task {}: accuracy {:.2}", t.task, t.accuracy.all);
            }
            println!(
                "{}: average incremental accuracy {:.2}",
                cfg.variant,
                result.report.average_accuracy()?
            );
        }
        Command::Ablate {
            stream,
            config,
            variants,
            out_dir,
        } => {
            let s =
                load_stream(&stream).with_context(|| format!("reading {}", stream.display()))?;
            let cfg = load_config(&config, seed_env.as_deref())
                .with_context(|| format!("reading {}", config.display()))?;
            let variants = parse_variant_list(&variants)?;
            for (v, report) in ablate_command(&s, &cfg, &variants, &out_dir)? {
                println!(
                    "{v}: average incremental accuracy {:.2}",
                    report.average_accuracy()?
                );
            }
        }
        Command::Report { in_dir } => {
            for s in report_command(&in_dir)? {
                println!("{}: {:.2}", s.name, s.average_accuracy);
            }
        }
    }
    Ok(())
}
