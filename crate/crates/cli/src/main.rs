//! `mousemap`: stage subcommands over file artifacts plus the orchestrated
//! run. Exit status 0 on success, 2 on invalid parameters, 1 on failure.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use mousemap::config::{parse_config, PipelineConfig};
use mousemap::embed::sweep::{SweepConfig, SweepMetric};
use mousemap::explore::{CannyParams, Region};
use mousemap::pipeline::{self, PipelineError};
use mousemap::synth::{self, BehaviorConfig, Profile, SynthOptions};
use mousemap_service::{Session, SessionConfig};

#[derive(Parser)]
#[command(name = "mousemap", version, about = "Home-cage pose pipeline: spotlight, cleaning, windows, UMAP, ensembles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Stage parameters. Each flag overrides the config key of the same name.
#[derive(Args, Default)]
struct Params {
    /// Flat `key = value` configuration file; flags win over its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    confidence: Option<String>,
    #[arg(long)]
    delta: Option<String>,
    #[arg(long)]
    epsilon: Option<String>,
    #[arg(long)]
    min_frames: Option<String>,
    #[arg(long)]
    frame_width: Option<String>,
    #[arg(long)]
    frame_height: Option<String>,
    #[arg(long)]
    geomean_threshold: Option<String>,
    #[arg(long)]
    tau: Option<String>,
    /// Comma-separated bodyparts.
    #[arg(long)]
    parts: Option<String>,
    #[arg(long)]
    d_max: Option<String>,
    /// `true` or `false`.
    #[arg(long)]
    smooth: Option<String>,
    /// `cubic` or `linear`.
    #[arg(long)]
    interpolation: Option<String>,
    #[arg(long)]
    omega: Option<String>,
    #[arg(long)]
    stride: Option<String>,
    #[arg(long)]
    cap: Option<String>,
    #[arg(long)]
    neighbors: Option<String>,
    #[arg(long)]
    min_dist: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// `spectral` or `random`.
    #[arg(long)]
    init: Option<String>,
    #[arg(long)]
    workers: Option<String>,
}

impl Params {
    fn overrides(&self) -> Vec<(&'static str, &String)> {
        let all = [
            ("confidence", &self.confidence),
            ("delta", &self.delta),
            ("epsilon", &self.epsilon),
            ("min-frames", &self.min_frames),
            ("frame-width", &self.frame_width),
            ("frame-height", &self.frame_height),
            ("geomean-threshold", &self.geomean_threshold),
            ("tau", &self.tau),
            ("parts", &self.parts),
            ("d-max", &self.d_max),
            ("smooth", &self.smooth),
            ("interpolation", &self.interpolation),
            ("omega", &self.omega),
            ("stride", &self.stride),
            ("cap", &self.cap),
            ("neighbors", &self.neighbors),
            ("min-dist", &self.min_dist),
            ("epochs", &self.epochs),
            ("seed", &self.seed),
            ("init", &self.init),
            ("workers", &self.workers),
        ];
        all.into_iter().filter_map(|(k, v)| v.as_ref().map(|v| (k, v))).collect()
    }

    /// Defaults, then the config file, then `paths`, then flags.
    fn resolve(&self, paths: &[(&str, Option<&PathBuf>)]) -> Result<PipelineConfig, PipelineError> {
        let mut config = PipelineConfig::default();
        if let Some(file) = &self.config {
            let text = std::fs::read_to_string(file)
                .map_err(|e| PipelineError::Input(format!("cannot read {}: {e}", file.display())))?;
            let pairs = parse_config(&text).map_err(|e| PipelineError::Validation(format!("{}: {e}", file.display())))?;
            config.apply(&pairs).map_err(PipelineError::Validation)?;
        }
        for (key, value) in paths {
            if let Some(v) = value {
                config.set(key, &v.to_string_lossy()).map_err(PipelineError::Validation)?;
            }
        }
        for (key, value) in self.overrides() {
            config.set(key, value).map_err(PipelineError::Validation)?;
        }
        config.validate().map_err(PipelineError::Validation)?;
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus with its ground-truth sidecar.
    Synth {
        /// blobs, rings, behavior-modes, spike-track or crossing-boxes.
        profile: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// behavior-modes: clean videos.
        #[arg(long, default_value_t = 4)]
        videos: usize,
        /// behavior-modes: frames per video.
        #[arg(long, default_value_t = 1000)]
        frames: usize,
        /// behavior-modes: also render PNG frames.
        #[arg(long)]
        render_frames: bool,
        /// behavior-modes: omit the low-quality video.
        #[arg(long)]
        no_low_quality: bool,
    },
    /// Detections to spotlight segments.
    Spotlight {
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        params: Params,
    },
    /// Per-video quality and geomean selection.
    Quality {
        #[arg(long)]
        pose: PathBuf,
        /// Spotlight segments; only pose files named after a segment are assessed.
        #[arg(long)]
        segments: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        params: Params,
    },
    /// Likelihood masking, differential smoothing and gap filling.
    Smooth {
        #[arg(long)]
        pose: PathBuf,
        /// Video ids to keep, one per line (the quality stage's selection).
        #[arg(long)]
        selected: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        params: Params,
    },
    /// Clean series to a behavioral window dataset.
    Windows {
        #[arg(long)]
        series: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        params: Params,
    },
    /// UMAP embedding of a window dataset.
    Umap {
        #[arg(long)]
        windows: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        params: Params,
    },
    /// PCA projection of a window dataset.
    Pca {
        #[arg(long)]
        windows: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2)]
        dims: usize,
    },
    /// Neighbors by min_dist grid, ranked on a held-out split. Here
    /// `--neighbors` and `--min-dist` take comma-separated grids
    /// (default 5,15,50,200 and 0,0.1,0.5).
    Sweep {
        #[arg(long)]
        windows: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// silhouette or trustworthiness.
        #[arg(long, default_value = "silhouette")]
        metric: String,
        #[arg(long, default_value_t = 0.2)]
        val_fraction: f64,
        #[command(flatten)]
        params: Params,
    },
    /// Window ids inside a region of an embedding, as JSON.
    Query {
        #[arg(long)]
        model: PathBuf,
        /// `rect:x0,x1,y0,y1` or `disc:cx,cy,r`.
        #[arg(long)]
        region: String,
    },
    /// Edge-ensemble clip of the windows inside a region.
    Ensemble {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        region: String,
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50.0)]
        low: f64,
        #[arg(long, default_value_t = 150.0)]
        high: f64,
        #[arg(long, default_value_t = 1.4)]
        sigma: f64,
    },
    /// HTTP API and UI over an embedding.
    Serve {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        frames: Option<PathBuf>,
        /// Built UI bundle to serve at `/`.
        #[arg(long)]
        ui: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
    },
    /// Full pipeline into one output directory, with report.json.
    #[command(alias = "run")]
    Report {
        #[arg(long)]
        detections: Option<PathBuf>,
        #[arg(long)]
        pose: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        params: Params,
    },
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn parse_region(s: &str) -> Result<Region, PipelineError> {
    s.parse().map_err(PipelineError::Validation)
}

fn parse_list<T: std::str::FromStr>(name: &str, s: &str) -> Result<Vec<T>, PipelineError> {
    s.split(',')
        .map(|v| v.trim().parse().map_err(|_| PipelineError::Validation(format!("{name}: cannot parse {v:?}"))))
        .collect()
}

/// Runs `f` on a pool sized by the `workers` key.
fn with_workers<T: Send>(config: &PipelineConfig, f: impl FnOnce() -> T + Send) -> Result<T, PipelineError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers.unwrap_or(0))
        .build()
        .map_err(|e| PipelineError::Input(e.to_string()))?;
    Ok(pool.install(f))
}

fn run(command: Command) -> Result<(), PipelineError> {
    match command {
        Command::Synth { profile, out, seed, videos, frames, render_frames, no_low_quality } => {
            let profile: Profile = profile.parse().map_err(PipelineError::Validation)?;
            if videos == 0 || frames == 0 {
                return Err(PipelineError::Validation("videos and frames must be at least 1".into()));
            }
            let behavior = BehaviorConfig { videos, frames, low_quality: !no_low_quality, render_frames, seed };
            let written = synth::write_profile(profile, &out, &SynthOptions { seed, behavior })?;
            for p in written {
                println!("{}", p.display());
            }
        }
        Command::Spotlight { detections, out, params } => {
            let c = params.resolve(&[])?;
            print_json(&with_workers(&c, || pipeline::run_spotlight(&detections, &out, &c.spotlight))??);
        }
        Command::Quality { pose, segments, out, params } => {
            let c = params.resolve(&[])?;
            let summary = with_workers(&c, || {
                pipeline::run_quality(&pose, segments.as_deref(), &out, &c.clean.parts, c.clean.tau, c.geomean_threshold)
            })??;
            print_json(&summary);
        }
        Command::Smooth { pose, selected, out, params } => {
            let c = params.resolve(&[])?;
            print_json(&with_workers(&c, || pipeline::run_smooth(&pose, selected.as_deref(), &out, &c.clean))??);
        }
        Command::Windows { series, out, params } => {
            let c = params.resolve(&[])?;
            let summary = with_workers(&c, || pipeline::run_windows(&series, &out, c.omega, c.stride, c.cap, c.umap.seed))??;
            print_json(&summary);
        }
        Command::Umap { windows, out, params } => {
            let c = params.resolve(&[])?;
            print_json(&with_workers(&c, || pipeline::run_umap(&windows, &out, &c.umap))??);
        }
        Command::Pca { windows, out, dims } => {
            if dims == 0 {
                return Err(PipelineError::Validation("dims must be at least 1".into()));
            }
            print_json(&pipeline::run_pca(&windows, &out, dims)?);
        }
        Command::Sweep { windows, out, metric, val_fraction, mut params } => {
            let grid_neighbors = params.neighbors.take().unwrap_or_else(|| "5,15,50,200".into());
            let grid_min_dists = params.min_dist.take().unwrap_or_else(|| "0,0.1,0.5".into());
            let c = params.resolve(&[])?;
            let metric: SweepMetric = metric.parse().map_err(PipelineError::Validation)?;
            let sweep = SweepConfig {
                neighbors: parse_list("neighbors", &grid_neighbors)?,
                min_dists: parse_list("min-dist", &grid_min_dists)?,
                base: c.umap.clone(),
                metric,
                ..SweepConfig::default()
            };
            let runs = with_workers(&c, || pipeline::run_sweep(&windows, &out, &sweep, val_fraction, c.umap.seed))??;
            print_json(&runs);
        }
        Command::Query { model, region } => {
            let region = parse_region(&region)?;
            print_json(&pipeline::run_query(&model, &region)?);
        }
        Command::Ensemble { model, region, frames, out, low, high, sigma } => {
            let region = parse_region(&region)?;
            let params = CannyParams { low, high, sigma };
            let clip = pipeline::run_ensemble(&model, &region, &frames, &params, Some(&out))?;
            print_json(&json!({ "frames": clip.frames.len(), "windows": clip.windows, "skipped": clip.skipped }));
        }
        Command::Serve { model, labels, frames, ui, bind } => {
            let session = Session::load(&SessionConfig { model, labels, frames, ui })
                .map_err(|e| PipelineError::Input(e.to_string()))?;
            let runtime = tokio::runtime::Runtime::new().map_err(|e| PipelineError::Input(e.to_string()))?;
            eprintln!("listening on http://{bind}");
            runtime.block_on(mousemap_service::serve(session, bind)).map_err(|e| PipelineError::Input(e.to_string()))?;
        }
        Command::Report { detections, pose, out, params } => {
            let c = params.resolve(&[
                ("detections", detections.as_ref()),
                ("pose", pose.as_ref()),
                ("out", out.as_ref()),
            ])?;
            let report = pipeline::run_pipeline(&c)?;
            print_json(&pipeline::report_value(&report));
            eprintln!("report written to {}", c.out.join(pipeline::REPORT_FILE).display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
