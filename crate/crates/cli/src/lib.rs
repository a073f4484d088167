//! Implementations behind the `aura` subcommands.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use aura_core::io::load_dataset;
use aura_core::synth::{build_dataset, BuildSummary, SceneConfig};
use aura_genpipe::{
    load_sources, run_pipeline, HttpClient, MockClient, PipelineOptions, PipelineReport, PromptTemplate, VlmClient,
};
use aura_model::eval::render_csv;
use aura_model::{evaluate_model, render_report, Checkpoint, EvalReport, TrainConfig, Trainer};
use aura_review::api::{router, serve, ApiState};
use aura_review::{Policy, ReviewStore};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

pub fn synth_build(config: Option<&Path>, n_train: usize, n_val: usize, seed: u64, out: &Path) -> Result<BuildSummary> {
    let config = match config {
        Some(path) => SceneConfig::load(path)?,
        None => SceneConfig::default(),
    };
    Ok(build_dataset(&config, n_train, n_val, seed, out)?)
}

pub fn load_train_config(path: Option<&Path>) -> Result<TrainConfig> {
    let Some(path) = path else {
        return Ok(TrainConfig::default());
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    TrainConfig::from_toml_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn checkpoint_name(step: u64) -> String {
    format!("step-{step:06}.ckpt")
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub steps: u64,
    pub final_checkpoint: PathBuf,
    pub last_eval: Option<EvalReport>,
}

/// Trains on the dataset in `data`, writing the metrics log, periodic
/// checkpoints and `final.ckpt` under `out`. A resumed run appends to the
/// existing log.
pub fn train(
    config: TrainConfig,
    data: &Path,
    out: &Path,
    val: Option<&Path>,
    resume: Option<&Path>,
) -> Result<TrainSummary> {
    let samples = load_dataset(data).with_context(|| format!("loading training data from {}", data.display()))?;
    let val_samples = val.map(load_dataset).transpose()?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;

    let mut trainer = match resume {
        Some(path) => Checkpoint::load(path)?.resume(config.clone(), &samples)?,
        None => Trainer::new(config.clone(), &samples)?,
    };
    let log_path = out.join(METRICS_FILE);
    let log_file = OpenOptions::new()
        .create(true)
        .append(resume.is_some())
        .write(true)
        .truncate(resume.is_none())
        .open(&log_path)
        .with_context(|| format!("opening {}", log_path.display()))?;
    let mut log = BufWriter::new(log_file);
    let mut last_eval = None;
    trainer.run(&mut log, val_samples.as_deref(), |t, record| {
        if record.step % 50 == 0 || record.step == t.config().total_steps {
            log::info!("step {} lr {:.2e} loss {:.4}", record.step, record.lr, record.loss.total);
        }
        if let Some(e) = &record.eval {
            last_eval = Some(e.clone());
        }
        let every = t.config().checkpoint_every;
        if every > 0 && record.step % every == 0 {
            Checkpoint::from_trainer(t)?.save(&out.join(checkpoint_name(record.step)))?;
        }
        Ok(())
    })?;
    log.flush()?;
    let final_checkpoint = out.join(FINAL_CHECKPOINT);
    Checkpoint::from_trainer(&trainer)?.save(&final_checkpoint)?;
    Ok(TrainSummary {
        steps: trainer.step_count(),
        final_checkpoint,
        last_eval,
    })
}

fn run_name(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Scores each checkpoint on `data`, writes one CSV row per checkpoint to
/// `out` and returns the rendered table.
pub fn eval(checkpoints: &[PathBuf], data: &Path, out: &Path, threshold: f64) -> Result<String> {
    if checkpoints.is_empty() {
        bail!("at least one checkpoint is required");
    }
    let samples = load_dataset(data)?;
    let mut rows = Vec::new();
    for path in checkpoints {
        let ckpt = Checkpoint::load(path)?;
        let report = evaluate_model(&ckpt.model, &samples, threshold)?;
        rows.push((run_name(path), report));
    }
    fs::write(out, render_csv(&rows)).with_context(|| format!("writing {}", out.display()))?;
    Ok(render_report(&rows))
}

pub struct GenpipeArgs<'a> {
    pub data: &'a Path,
    pub endpoint: Option<&'a str>,
    pub store: &'a Path,
    pub mock: bool,
    pub template: Option<&'a Path>,
    pub concurrency: usize,
    pub timeout: Duration,
}

pub fn genpipe_run(args: &GenpipeArgs) -> Result<PipelineReport> {
    let sources = load_sources(args.data)?;
    let client: Box<dyn VlmClient> = if args.mock {
        Box::new(MockClient::offline())
    } else {
        let endpoint = args.endpoint.context("--endpoint is required unless --mock is given")?;
        Box::new(HttpClient::from_env(endpoint, args.timeout)?)
    };
    let template = match args.template {
        Some(path) => PromptTemplate::from_toml_str(
            &fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?,
        )?,
        None => PromptTemplate::builtin(),
    };
    let options = PipelineOptions {
        template,
        concurrency: args.concurrency,
        ..PipelineOptions::default()
    };
    let store = ReviewStore::open(args.store, Policy::default())?;
    let report = run_pipeline(&sources, client.as_ref(), &store, &options);
    store.snapshot()?;
    Ok(report)
}

pub fn write_report(report: &PipelineReport, path: &Path) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    serde_json::to_writer_pretty(BufWriter::new(file), report)?;
    Ok(())
}

pub struct ServeArgs<'a> {
    pub store: &'a Path,
    pub addr: &'a str,
    pub static_dir: Option<&'a Path>,
    pub export_dir: &'a Path,
    pub policy: Policy,
}

pub fn review_serve(args: &ServeArgs) -> Result<()> {
    let store = Arc::new(ReviewStore::open(args.store, args.policy.clone())?);
    let state = ApiState {
        store,
        export_dir: args.export_dir.to_path_buf(),
    };
    let app = router(state, args.static_dir);
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(args.addr)
            .await
            .with_context(|| format!("binding {}", args.addr))?;
        log::info!("review service listening on {}", listener.local_addr()?);
        serve(listener, app).await?;
        Ok(())
    })
}

pub fn review_export(store: &Path, out: &Path) -> Result<usize> {
    let store = ReviewStore::open(store, Policy::default())?;
    Ok(aura_review::export_finalized(&store, out)?.sample_count)
}
