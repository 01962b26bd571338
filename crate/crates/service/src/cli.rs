//! Command-line entry points: `serve`, `replay`, `validate-config` and
//! `generate`.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use act_core::config::{ApiConfig, CONFIG_ENV};
use act_core::ingest::{open_corpus, spawn_feeder, CorpusRecord, StreamItem};
use act_core::media::{index_media, MediaIndex, ReplayRemoteMedia};
use act_core::pipeline::{Pipeline, SharedSnapshot, Snapshot};
use act_core::store::Store;
use act_core::synth::SyntheticGenerator;
use act_core::{analytics, PipelineParams, Resources, TrackConfig};
use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use crate::api;

#[derive(Debug, Parser)]
#[command(name = "act", version, about = "Disaster social-media analytics pipeline and API")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Ingest the configured corpus and serve the API.
    Serve {
        #[arg(long, env = CONFIG_ENV)]
        config: PathBuf,
    },
    /// Replay a JSON Lines corpus through the pipeline.
    Replay {
        #[arg(long)]
        input: PathBuf,
        /// Replay rate relative to corpus time; 0 disables pacing.
        #[arg(long, default_value_t = 0.0)]
        speed: f64,
        /// Print the event summaries as JSON and exit instead of serving.
        #[arg(long)]
        no_serve: bool,
        #[arg(long, env = CONFIG_ENV)]
        config: Option<PathBuf>,
        /// Persist to this store directory.
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
    /// Check a configuration file and every file it references.
    ValidateConfig {
        #[arg(long, env = CONFIG_ENV)]
        config: PathBuf,
    },
    /// Write a synthetic corpus as JSON Lines.
    Generate {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 5000)]
        count: usize,
        #[arg(long)]
        output: PathBuf,
    },
}

/// Everything a run needs, resolved from an optional config file.
struct Setup {
    config: ApiConfig,
    resources: Arc<Resources>,
    media: MediaIndex,
}

fn setup(config: Option<&Path>) -> anyhow::Result<Setup> {
    let Some(path) = config else {
        return Ok(Setup {
            config: ApiConfig::parse("", Path::new("."))?,
            resources: Arc::new(Resources::default()),
            media: MediaIndex::new(),
        });
    };
    let config = ApiConfig::load(path)?;
    let resources = Arc::new(config.resources()?);
    let mut media = MediaIndex::new();
    if let Some(p) = &config.paths.media_corpus {
        let (index, report) = index_media(p)?;
        tracing::info!(indexed = report.indexed, skipped = report.skipped, "media corpus indexed");
        media = index;
    }
    if let Some(p) = &config.paths.remote_media {
        let report = media.extend_from_remote(&mut ReplayRemoteMedia::new(p))?;
        tracing::info!(indexed = report.indexed, skipped = report.skipped, "remote media indexed");
    }
    Ok(Setup { config, resources, media })
}

fn build_pipeline(setup: Setup, track: TrackConfig, data_dir: Option<&Path>) -> anyhow::Result<Pipeline> {
    let params: PipelineParams = setup.config.pipeline.clone();
    let mut pipeline = Pipeline::new(params, setup.resources, track);
    pipeline.set_media_index(setup.media);
    if let Some(dir) = data_dir {
        let (store, state) = Store::open(dir).with_context(|| format!("opening store {}", dir.display()))?;
        for w in &state.warnings {
            tracing::warn!("{w}");
        }
        tracing::info!(posts = state.posts.len(), events = state.events.len(), "store loaded");
        pipeline.attach_store(store, state);
    }
    Ok(pipeline)
}

/// Runs the pipeline over `input` on a feeder thread, publishing to
/// `shared` as it goes.
fn ingest(mut pipeline: Pipeline, input: &Path, track: &TrackConfig, shared: &SharedSnapshot) -> anyhow::Result<Arc<Snapshot>> {
    let stream = open_corpus(input, track)?;
    let (rx, feeder) = spawn_feeder(stream, pipeline.params().queue_capacity);
    let items = rx.into_iter().inspect(|item: &StreamItem| {
        if let StreamItem::Skipped(n) = item {
            tracing::debug!(line = n.line, "skipped record");
        }
    });
    let snap = pipeline.run(items, Some(shared))?;
    let stats = feeder.join().map_err(|_| anyhow::anyhow!("feeder thread panicked"))?;
    tracing::info!(
        emitted = stats.emitted,
        skipped = stats.skipped,
        untracked = stats.untracked,
        events = snap.events.len(),
        "ingest finished"
    );
    Ok(snap)
}

async fn serve_until_shutdown(shared: SharedSnapshot, config: &ApiConfig) -> anyhow::Result<()> {
    let app = api::with_cors(api::router(shared), config.server.cors_origin.as_deref())?;
    let addr = format!("{}:{}", config.server.bind, config.server.port);
    let listener = tokio::net::TcpListener::bind(&addr).await.with_context(|| format!("binding {addr}"))?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

fn serve_with_ingest(setup: Setup, input: Option<PathBuf>, track: TrackConfig, data_dir: Option<PathBuf>) -> anyhow::Result<()> {
    let config = setup.config.clone();
    let initial = Arc::new(Snapshot::empty(setup.resources.clone(), Arc::new(MediaIndex::new())));
    let shared = SharedSnapshot::new(initial);
    let pipeline = build_pipeline(setup, track.clone(), data_dir.as_deref())?;
    let worker = {
        let shared = shared.clone();
        std::thread::Builder::new().name("act-pipeline".into()).spawn(move || -> anyhow::Result<()> {
            let Some(input) = input else {
                let mut pipeline = pipeline;
                shared.publish(pipeline.publish()?);
                return Ok(());
            };
            ingest(pipeline, &input, &track, &shared).map(|_| ())
        })?
    };
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(serve_until_shutdown(shared, &config))?;
    if worker.is_finished() {
        worker.join().map_err(|_| anyhow::anyhow!("pipeline thread panicked"))??;
    }
    Ok(())
}

fn replay_batch(setup: Setup, input: &Path, track: TrackConfig, data_dir: Option<&Path>) -> anyhow::Result<()> {
    let shared = SharedSnapshot::new(Arc::new(Snapshot::empty(setup.resources.clone(), Arc::new(MediaIndex::new()))));
    let pipeline = build_pipeline(setup, track.clone(), data_dir)?;
    let snap = ingest(pipeline, input, &track, &shared)?;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    serde_json::to_writer_pretty(&mut out, &analytics::export_summaries(&snap))?;
    writeln!(out)?;
    Ok(())
}

fn generate(seed: u64, count: usize, output: &Path) -> anyhow::Result<()> {
    if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let file = std::fs::File::create(output).with_context(|| format!("creating {}", output.display()))?;
    let mut w = std::io::BufWriter::new(file);
    for raw in SyntheticGenerator::new(seed, count) {
        serde_json::to_writer(&mut w, &CorpusRecord::from(&raw))?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

fn validate_config(path: &Path) -> anyhow::Result<bool> {
    let config = ApiConfig::load(path)?;
    let problems = config.diagnostics();
    for p in &problems {
        eprintln!("{p}");
    }
    if !problems.is_empty() {
        return Ok(false);
    }
    // content errors surface only when the files are read
    if let Err(e) = config.resources() {
        eprintln!("{e}");
        return Ok(false);
    }
    Ok(true)
}

pub fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Serve { config } => {
            let setup = setup(Some(&config))?;
            let input = setup.config.paths.corpus.clone();
            let track = setup.config.track.clone();
            let data_dir = setup.config.paths.data_dir.clone();
            serve_with_ingest(setup, input, track, data_dir)?;
        }
        Command::Replay {
            input,
            speed,
            no_serve,
            config,
            data_dir,
        } => {
            if !(speed.is_finite() && speed >= 0.0) {
                bail!("--speed must be a finite number >= 0");
            }
            let setup = setup(config.as_deref())?;
            let mut track = setup.config.track.clone();
            track.replay_speed = speed;
            let data_dir = data_dir.or_else(|| setup.config.paths.data_dir.clone());
            if no_serve {
                replay_batch(setup, &input, track, data_dir.as_deref())?;
            } else {
                serve_with_ingest(setup, Some(input), track, data_dir)?;
            }
        }
        Command::ValidateConfig { config } => {
            if !validate_config(&config)? {
                return Ok(ExitCode::FAILURE);
            }
            eprintln!("{}: ok", config.display());
        }
        Command::Generate { seed, count, output } => generate(seed, count, &output)?,
    }
    Ok(ExitCode::SUCCESS)
}
