use std::path::PathBuf;
use std::time::Duration;

use anyhow::Result;
use aura_cli::{GenpipeArgs, ServeArgs};
use aura_review::Policy;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "aura", version, about = "Amodal reasoning segmentation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthetic scene datasets.
    Synth {
        #[command(subcommand)]
        action: SynthAction,
    },
    /// Train a model on a dataset directory.
    Train {
        /// TOML training configuration; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Evaluation set used every `eval_every` steps.
        #[arg(long)]
        val: Option<PathBuf>,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score checkpoints and write a CSV report.
    Eval {
        #[arg(long = "checkpoint", required = true)]
        checkpoints: Vec<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
    },
    /// QA generation through a vision-language service.
    Genpipe {
        #[command(subcommand)]
        action: GenpipeAction,
    },
    /// Human review service.
    Review {
        #[command(subcommand)]
        action: ReviewAction,
    },
}

#[derive(Subcommand)]
enum SynthAction {
    Build {
        /// TOML scene configuration; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        train: usize,
        #[arg(long)]
        val: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum GenpipeAction {
    Run {
        #[arg(long)]
        data: PathBuf,
        /// Chat-completions URL. The key is read from AURA_VLM_API_KEY.
        #[arg(long)]
        endpoint: Option<String>,
        /// Review store directory the records are queued into.
        #[arg(long)]
        out: PathBuf,
        /// Answer offline from the annotations instead of calling a service.
        #[arg(long)]
        mock: bool,
        #[arg(long)]
        template: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        concurrency: usize,
        #[arg(long, default_value_t = 120)]
        timeout_secs: u64,
        /// Also write the run report as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum ReviewAction {
    Serve {
        #[arg(long)]
        store: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        /// Built review UI assets.
        #[arg(long = "static")]
        static_dir: Option<PathBuf>,
        #[arg(long, default_value = "export")]
        export_dir: PathBuf,
        #[arg(long, default_value_t = 2)]
        min_approvers: usize,
        #[arg(long, default_value_t = 5)]
        dispute_cap: u32,
    },
    /// Write finalized records as a dataset directory.
    Export {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Synth {
            action: SynthAction::Build { config, train, val, seed, out },
        } => {
            let s = aura_cli::synth_build(config.as_deref(), train, val, seed, &out)?;
            println!(
                "wrote {} train samples to {} and {} val samples to {}",
                s.train_count,
                s.train_dir.display(),
                s.val_count,
                s.val_dir.display()
            );
        }
        Command::Train { config, data, out, val, resume } => {
            let mut cfg = aura_cli::load_train_config(config.as_deref())?;
            cfg.output_dir = Some(out.clone());
            let s = aura_cli::train(cfg, &data, &out, val.as_deref(), resume.as_deref())?;
            println!("trained {} steps; checkpoint {}", s.steps, s.final_checkpoint.display());
            if let Some(e) = s.last_eval {
                println!("{}", aura_model::render_report(&[("final".into(), e)]));
            }
        }
        Command::Eval { checkpoints, data, out, threshold } => {
            print!("{}", aura_cli::eval(&checkpoints, &data, &out, threshold)?);
        }
        Command::Genpipe {
            action: GenpipeAction::Run { data, endpoint, out, mock, template, concurrency, timeout_secs, report },
        } => {
            let r = aura_cli::genpipe_run(&GenpipeArgs {
                data: &data,
                endpoint: endpoint.as_deref(),
                store: &out,
                mock,
                template: template.as_deref(),
                concurrency,
                timeout: Duration::from_secs(timeout_secs),
            })?;
            println!(
                "enqueued {}, already present {}, flagged {}, failed {}",
                r.enqueued.len(),
                r.existing.len(),
                r.flagged.len(),
                r.failures.len()
            );
            for f in &r.failures {
                println!("  {}: {}", f.sample_id, f.error);
            }
            if let Some(path) = report {
                aura_cli::write_report(&r, &path)?;
            }
        }
        Command::Review {
            action: ReviewAction::Serve { store, addr, static_dir, export_dir, min_approvers, dispute_cap },
        } => {
            aura_cli::review_serve(&ServeArgs {
                store: &store,
                addr: &addr,
                static_dir: static_dir.as_deref(),
                export_dir: &export_dir,
                policy: Policy { min_approvers, dispute_cap },
            })?;
        }
        Command::Review {
            action: ReviewAction::Export { store, out },
        } => {
            println!("exported {} finalized samples", aura_cli::review_export(&store, &out)?);
        }
    }
    Ok(())
}
