//! Command-line front end.
//!
//! Every subcommand accepts `--config FILE`, a flat JSON object whose keys
//! are the subcommand's flag names (`min_visibility` or `min-visibility`).
//! Flags given on the command line override config values.
//!
//! Exit codes: 0 success, 1 batch-level failure, 2 bad arguments.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use vlapath::dataset::{self, ConvertConfig, Manifest, MixSpecFile, Representation};
use vlapath::harness::{self, Policy};
use vlapath::rank::http::{self, AppState};
use vlapath::rank::{self, ItemSource, RankStore, SessionSpec};
use vlapath::render::{self, Image, OverlayStyle, RenderMode};
use vlapath::vqa::{self, ParseMode};

#[derive(Parser)]
#[command(name = "vlapath", version, about = "Trajectory-to-2D-path toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a trajectory manifest into VQA shards.
    Convert(Configured<ConvertArgs>),
    /// Draw a seeded uniform mix over several sample sets.
    Mix(Configured<MixArgs>),
    /// Summarize a shard directory.
    Stats(Configured<StatsArgs>),
    /// Draw an answer path onto an image.
    Render(Configured<RenderArgs>),
    /// Reject records whose extrinsics reproject badly.
    Filter(Configured<FilterArgs>),
    /// Run the tabletop harness and write a score report.
    Simulate(Configured<SimulateArgs>),
    /// Serve ranking sessions over HTTP.
    Serve(Configured<ServeArgs>),
    /// Write a synthetic pick-and-place manifest.
    Synth(Configured<SynthArgs>),
}

#[derive(Args)]
struct Configured<T: Args> {
    /// JSON file with default values for this subcommand's flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    args: T,
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct ConvertArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    manifest: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    epsilon: Option<f64>,
    /// rdp or fixed20
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    rep: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    min_visibility: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    shard_size: Option<usize>,
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct MixArgs {
    /// JSON: {"sources": {"name": [shard dir or jsonl, ...]}, "seed": 0}
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    spec: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    n: Option<usize>,
    /// Overrides the seed in the spec file.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct StatsArgs {
    #[arg(long = "in")]
    #[serde(rename = "in", skip_serializing_if = "Option::is_none")]
    input: Option<PathBuf>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RenderArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    image: Option<PathBuf>,
    /// File holding an answer string.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    answer: Option<PathBuf>,
    /// JSON overlay style.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    style: Option<PathBuf>,
    /// overlay or concat
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    mode: Option<String>,
    /// Accept model-style answers (see the lenient grammar).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    lenient: Option<bool>,
    /// PNG for overlay mode; planar dump for concat mode.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct FilterArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    manifest: Option<PathBuf>,
    /// Reprojection RMSE threshold in pixels.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    threshold: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    min_visibility: Option<f64>,
    /// Write the kept records here as a manifest.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    report: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct SimulateArgs {
    /// follower or random
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    policy: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    episodes: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    noise: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    report: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct ServeArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    addr: Option<String>,
    /// Session log directory; omit for an in-memory store.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    data: Option<PathBuf>,
    /// Directory served under /assets.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    assets: Option<PathBuf>,
    /// JSON list of items with base images and candidate paths; rendered
    /// into the assets directory and opened as a new session.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    items: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct SynthArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    n: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Batch(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Batch(e)
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn required<T>(v: Option<T>, flag: &str) -> Result<T, Failure> {
    v.ok_or_else(|| usage(format!("missing required --{flag}")))
}

/// Config values first, then flags on top.
fn resolve<T: Args + Serialize + DeserializeOwned>(c: Configured<T>) -> Result<T, Failure> {
    let Some(path) = c.config else { return Ok(c.args) };
    let text = fs::read_to_string(&path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let cfg: Value = serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let Value::Object(cfg) = cfg else { return Err(usage(format!("{}: expected a JSON object", path.display()))) };
    let mut merged: Map<String, Value> = cfg.into_iter().map(|(k, v)| (k.replace('-', "_"), v)).collect();
    if let Value::Object(flags) = serde_json::to_value(&c.args).expect("flag structs serialize") {
        merged.extend(flags);
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn load_manifest(path: &Path) -> Result<Manifest, Failure> {
    if !path.is_file() {
        return Err(usage(format!("{}: no such file", path.display())));
    }
    Manifest::read_jsonl(path).map_err(|e| Failure::Batch(e.into()))
}

fn write_json(out: Option<&Path>, value: &impl Serialize) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(p) => fs::write(p, text + "\n").with_context(|| p.display().to_string()),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn convert(a: ConvertArgs) -> Result<(), Failure> {
    let defaults = ConvertConfig::default();
    let representation = match a.rep.as_deref() {
        Some(r) => r.parse::<Representation>().map_err(usage)?,
        None => defaults.representation,
    };
    let config = ConvertConfig {
        epsilon: a.epsilon.unwrap_or(defaults.epsilon),
        representation,
        min_visibility: a.min_visibility.unwrap_or(defaults.min_visibility),
        shard_size: a.shard_size.unwrap_or(defaults.shard_size),
    };
    config.validate().map_err(|e| usage(e.to_string()))?;
    let manifest_path = required(a.manifest, "manifest")?;
    let out_dir = required(a.out, "out")?;
    let manifest = load_manifest(&manifest_path)?;
    let out = dataset::convert(&manifest, &config).map_err(anyhow::Error::from)?;
    dataset::write_output(&out_dir, &out).map_err(anyhow::Error::from)?;
    let samples: usize = out.shards.iter().map(|s| s.samples.len()).sum();
    eprintln!(
        "converted {} of {} records into {samples} samples ({} shards, {} rejections)",
        out.converted.len(),
        manifest.records.len(),
        out.shards.len(),
        out.rejections.len()
    );
    if !manifest.records.is_empty() && out.converted.is_empty() {
        return Err(Failure::Batch(anyhow::anyhow!("every record was rejected")));
    }
    Ok(())
}

fn mix(a: MixArgs) -> Result<(), Failure> {
    let spec_path = required(a.spec, "spec")?;
    let n = required(a.n, "n")?;
    let out = required(a.out, "out")?;
    let text = fs::read_to_string(&spec_path).map_err(|e| usage(format!("{}: {e}", spec_path.display())))?;
    let mut file: MixSpecFile = serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", spec_path.display())))?;
    if let Some(s) = a.seed {
        file.seed = s;
    }
    let base = spec_path.parent().unwrap_or(Path::new("."));
    let spec = file.load(base).map_err(anyhow::Error::from)?;
    let samples: Vec<_> = dataset::mix(&spec).map_err(anyhow::Error::from)?.take(n).map(|d| d.sample.clone()).collect();
    dataset::write_samples(&out, &samples).map_err(anyhow::Error::from)?;
    Ok(())
}

fn stats(a: StatsArgs) -> Result<(), Failure> {
    let dir = required(a.input, "in")?;
    if !dir.is_dir() {
        return Err(usage(format!("{} is not a directory", dir.display())));
    }
    let shards = dataset::read_shards(&dir).map_err(anyhow::Error::from)?;
    let rejections = dataset::read_rejections(&dir).map_err(anyhow::Error::from)?;
    write_json(a.out.as_deref(), &dataset::stats(&shards, &rejections))?;
    Ok(())
}

fn render_cmd(a: RenderArgs) -> Result<(), Failure> {
    let image = required(a.image, "image")?;
    let answer = required(a.answer, "answer")?;
    let out = required(a.out, "out")?;
    let mut style = match &a.style {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| usage(format!("{}: {e}", p.display())))?;
            serde_json::from_str::<OverlayStyle>(&text).map_err(|e| usage(format!("{}: {e}", p.display())))?
        }
        None => OverlayStyle::default(),
    };
    if let Some(m) = a.mode.as_deref() {
        style.mode = match m {
            "overlay" => RenderMode::Overlay,
            "concat" => RenderMode::ConcatChannels,
            other => return Err(usage(format!("unknown mode {other:?} (expected overlay or concat)"))),
        };
    }
    style.validate().map_err(|e| usage(e.to_string()))?;
    let base = Image::read_png(&image).with_context(|| image.display().to_string())?;
    let text = fs::read_to_string(&answer).with_context(|| answer.display().to_string())?;
    let mode = if a.lenient.unwrap_or(false) { ParseMode::Lenient } else { ParseMode::Strict };
    let path = vqa::parse_answer(text.trim_end(), mode).context("answer")?;
    let drawn = render::draw(&base, &path, &style).context("render")?;
    match style.mode {
        RenderMode::Overlay => drawn.write_png(&out).with_context(|| out.display().to_string())?,
        RenderMode::ConcatChannels => fs::write(&out, drawn.encode_planar()).with_context(|| out.display().to_string())?,
    }
    Ok(())
}

fn filter(a: FilterArgs) -> Result<(), Failure> {
    let manifest_path = required(a.manifest, "manifest")?;
    let threshold = required(a.threshold, "threshold")?;
    if !(threshold > 0.0) || !threshold.is_finite() {
        return Err(usage("--threshold must be a positive number of pixels"));
    }
    let min_vis = a.min_visibility.unwrap_or(vlapath::geometry::DEFAULT_MIN_VISIBILITY);
    if !(0.0..=1.0).contains(&min_vis) {
        return Err(usage("--min-visibility must be in [0, 1]"));
    }
    let manifest = load_manifest(&manifest_path)?;
    let report = dataset::filter_manifest(&manifest, threshold, min_vis).map_err(anyhow::Error::from)?;
    if let Some(out) = &a.out {
        let kept = Manifest { records: report.kept.iter().map(|&i| manifest.records[i].clone()).collect() };
        kept.write_jsonl(out).map_err(anyhow::Error::from)?;
    }
    write_json(a.report.as_deref(), &report)?;
    Ok(())
}

fn simulate(a: SimulateArgs) -> Result<(), Failure> {
    let policy: Policy = a.policy.as_deref().unwrap_or("follower").parse().map_err(usage)?;
    let episodes = a.episodes.unwrap_or(100);
    let noise = a.noise.unwrap_or(0.0);
    if !(noise >= 0.0) || !noise.is_finite() {
        return Err(usage("--noise must be non-negative"));
    }
    if episodes == 0 {
        return Err(usage("--episodes must be at least 1"));
    }
    let report = harness::run_eval(episodes, policy, noise, a.seed.unwrap_or(0)).map_err(anyhow::Error::from)?;
    eprintln!(
        "{policy}: mean score {:.4}, completion {:.4} over {episodes} episodes",
        report.mean_score, report.completion_rate
    );
    write_json(a.report.as_deref(), &report)?;
    Ok(())
}

fn serve(a: ServeArgs) -> Result<(), Failure> {
    let addr = a.addr.unwrap_or_else(|| "127.0.0.1:8080".into());
    let store = match &a.data {
        Some(d) => RankStore::open(d).map_err(anyhow::Error::from)?,
        None => RankStore::in_memory(),
    };
    if let Some(items) = &a.items {
        let assets = a.assets.as_ref().ok_or_else(|| usage("--items needs --assets"))?;
        let text = fs::read_to_string(items).map_err(|e| usage(format!("{}: {e}", items.display())))?;
        let sources: Vec<ItemSource> = serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", items.display())))?;
        let base = items.parent().unwrap_or(Path::new("."));
        let sources: Vec<ItemSource> = sources
            .into_iter()
            .map(|mut s| {
                if s.image.is_relative() {
                    s.image = base.join(&s.image);
                }
                s
            })
            .collect();
        let rendered = rank::render_items(&sources, assets).map_err(anyhow::Error::from)?;
        let session = store
            .create(SessionSpec { id: None, items: rendered, raters: None, seed: a.seed.unwrap_or(0) })
            .map_err(anyhow::Error::from)?;
        eprintln!("created session {}", session.id());
    }
    let state = AppState { store: Arc::new(store), assets: a.assets };
    let rt = tokio::runtime::Runtime::new().context("tokio runtime")?;
    eprintln!("listening on {addr}");
    rt.block_on(http::serve(state, &addr)).with_context(|| format!("serving on {addr}"))?;
    Ok(())
}

fn synth(a: SynthArgs) -> Result<(), Failure> {
    let out = required(a.out, "out")?;
    let m = dataset::synthetic::manifest(a.n.unwrap_or(100), a.seed.unwrap_or(0));
    m.write_jsonl(&out).map_err(anyhow::Error::from)?;
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Convert(c) => convert(resolve(c)?),
        Command::Mix(c) => mix(resolve(c)?),
        Command::Stats(c) => stats(resolve(c)?),
        Command::Render(c) => render_cmd(resolve(c)?),
        Command::Filter(c) => filter(resolve(c)?),
        Command::Simulate(c) => simulate(resolve(c)?),
        Command::Serve(c) => serve(resolve(c)?),
        Command::Synth(c) => synth(resolve(c)?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Batch(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
