use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use animetric_core::appeal::{
    diversity_score, dynamic_degree, novelty_score, perceptual_quality, DEFAULT_DYNAMIC_FRACTION,
};
use animetric_core::artifacts::{EmbeddingSet, FlowSequence, MaskSequence, QualitySeries, TrackSet};
use animetric_core::bench::{
    load_manifest, normalize_scores, render_report, run_close_set, BenchmarkReport, ModelArtifacts, RunConfig,
};
use animetric_core::camera::{classify_camera, CameraConfig};
use animetric_core::gateway::{BackendError, Gateway, GatewayConfig, StubBackend, StubScript};
use animetric_core::motion::{siso_from_tracks, SisoConfig};
use animetric_core::openset::{
    builtin_dimension_ids, builtin_spec, refine_iterate, CommandExtractor, CommandGenerator, DimensionSpec, Generator,
    HttpGenerator, LoopConfig, OpenSetCase,
};
use animetric_core::shape::{squash_stretch_score, DEFAULT_TAU};
use animetric_core::stats::{alignment, AlignmentInput};
use animetric_core::tensor::read_tensor_file;

#[derive(Parser)]
#[command(name = "animetric", version, about = "Evaluate generated character-animation videos")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a close-set manifest and write report.json, report.md and radar-data.csv.
    Run(RunArgs),
    /// Slow-in/slow-out rubric from point tracks.
    Siso(SisoArgs),
    /// Squash-and-stretch score from object masks.
    Squash(SquashArgs),
    /// Dynamic degree from optical flow.
    Dyndeg(DyndegArgs),
    /// Diversity over five generated samples.
    Diversity(DiversityArgs),
    /// Novelty against a reference video.
    Novelty(NoveltyArgs),
    /// Camera-motion class from edge tracks.
    Camera(CameraArgs),
    /// Mean perceptual quality of a quality series.
    Quality(QualityArgs),
    /// Merge reports of several models and min-max normalize per dimension.
    Normalize(NormalizeArgs),
    /// Human-alignment statistics (win rates, Spearman, Cohen's kappa).
    Align(AlignArgs),
    /// Open-set diagnose/refine/regenerate loop on one video.
    Refine(RefineArgs),
    /// Print the header of an ABTF file.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct GatewayArgs {
    /// Judge endpoint configuration (JSON).
    #[arg(long, conflicts_with = "stub_gateway")]
    gateway: Option<PathBuf>,
    /// Scripted judge replies (JSON) instead of a live endpoint.
    #[arg(long)]
    stub_gateway: Option<PathBuf>,
    /// Directory of the persistent judge response cache.
    #[arg(long)]
    vlm_cache: Option<PathBuf>,
}

impl GatewayArgs {
    fn build(&self) -> Result<Gateway> {
        let gw = if let Some(path) = &self.gateway {
            let cfg = GatewayConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
            Gateway::http(cfg)?
        } else if let Some(path) = &self.stub_gateway {
            let script = StubScript::load(path).with_context(|| format!("loading {}", path.display()))?;
            Gateway::stub(StubBackend::script(script))
        } else {
            Gateway::stub(StubBackend::failing(BackendError::Auth(
                "no judge configured; pass --gateway or --stub-gateway".into(),
            )))
        };
        Ok(match &self.vlm_cache {
            Some(dir) => gw.with_cache_dir(dir)?,
            None => gw,
        })
    }
}

#[derive(Args)]
struct SisoFlags {
    /// Moving-average window in frames.
    #[arg(long, default_value_t = SisoConfig::default().window)]
    window: usize,
    /// Motion interval threshold as a fraction of peak speed.
    #[arg(long, default_value_t = SisoConfig::default().interval_frac)]
    siso_interval_frac: f64,
}

impl SisoFlags {
    fn config(&self) -> SisoConfig {
        SisoConfig {
            window: self.window,
            interval_frac: self.siso_interval_frac,
            ..SisoConfig::default()
        }
    }
}

#[derive(Args)]
struct CameraFlags {
    /// Static threshold as a fraction of the frame diagonal.
    #[arg(long, default_value_t = CameraConfig::default().static_frac)]
    static_frac: f64,
    /// Divergence-to-translation ratio required for zoom.
    #[arg(long, default_value_t = CameraConfig::default().zoom_dominance)]
    zoom_dominance: f64,
    /// Sum per-frame displacements instead of first-to-last.
    #[arg(long)]
    accumulate: bool,
}

impl CameraFlags {
    fn config(&self) -> CameraConfig {
        CameraConfig {
            static_frac: self.static_frac,
            zoom_dominance: self.zoom_dominance,
            accumulate: self.accumulate,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Artifact root per model, as DIR or NAME=DIR; repeatable.
    #[arg(long, required = true)]
    artifacts: Vec<String>,
    #[arg(long)]
    out: PathBuf,
    /// Check case counts against the reference suite.
    #[arg(long)]
    strict_counts: bool,
    #[arg(long, default_value_t = 4)]
    workers: usize,
    #[arg(long, default_value_t = DEFAULT_TAU)]
    tau: f64,
    #[arg(long, default_value_t = DEFAULT_DYNAMIC_FRACTION)]
    dynamic_fraction: f64,
    #[command(flatten)]
    siso: SisoFlags,
    #[command(flatten)]
    camera: CameraFlags,
    #[command(flatten)]
    gateway: GatewayArgs,
}

#[derive(Args)]
struct SisoArgs {
    #[arg(long)]
    tracks: PathBuf,
    #[command(flatten)]
    siso: SisoFlags,
}

#[derive(Args)]
struct SquashArgs {
    #[arg(long)]
    masks: PathBuf,
    /// Whether the judge saw a rebound (true/false).
    #[arg(long, action = clap::ArgAction::Set)]
    rebound: bool,
    #[arg(long, default_value_t = DEFAULT_TAU)]
    tau: f64,
}

#[derive(Args)]
struct DyndegArgs {
    #[arg(long)]
    flow: PathBuf,
    /// Video size the threshold refers to; defaults to the recorded size.
    #[arg(long, requires = "width")]
    height: Option<usize>,
    #[arg(long, requires = "height")]
    width: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_DYNAMIC_FRACTION)]
    dynamic_fraction: f64,
}

#[derive(Args)]
struct DiversityArgs {
    /// Exactly five embedding files.
    #[arg(long, num_args = 1..)]
    embeddings: Vec<PathBuf>,
}

#[derive(Args)]
struct NoveltyArgs {
    #[arg(long)]
    generated: PathBuf,
    #[arg(long)]
    reference: PathBuf,
}

#[derive(Args)]
struct CameraArgs {
    #[arg(long)]
    tracks: PathBuf,
    #[command(flatten)]
    camera: CameraFlags,
}

#[derive(Args)]
struct QualityArgs {
    #[arg(long)]
    series: PathBuf,
}

#[derive(Args)]
struct NormalizeArgs {
    /// report.json files; models are merged across them.
    #[arg(long = "report", required = true)]
    reports: Vec<PathBuf>,
}

#[derive(Args)]
struct AlignArgs {
    #[arg(long)]
    input: PathBuf,
}

#[derive(Args)]
struct RefineArgs {
    #[arg(long)]
    video: PathBuf,
    /// Text file holding the original prompt.
    #[arg(long)]
    prompt: PathBuf,
    /// Conditioning image handed to the generator.
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    dimension: String,
    /// Dimension spec JSON overriding the built-in one.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Pre-extracted artifacts of the original video.
    #[arg(long)]
    artifacts: Option<PathBuf>,
    #[arg(long, conflicts_with = "generator_url")]
    generator_cmd: Option<String>,
    #[arg(long)]
    generator_url: Option<String>,
    #[arg(long)]
    extractor_cmd: String,
    /// Segmenter text prompt, when masks are needed.
    #[arg(long)]
    mask_concept: Option<String>,
    /// Prompted camera motion, for the camera scorer.
    #[arg(long)]
    expected_label: Option<String>,
    #[arg(long, default_value_t = 3)]
    max_iters: usize,
    #[arg(long, default_value_t = 100.0)]
    target_score: f64,
    #[arg(long, default_value_t = 1.0)]
    min_improvement: f64,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    gateway: GatewayArgs,
}

#[derive(Args)]
struct InspectArgs {
    file: PathBuf,
}

fn print_json(v: &Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("value serializes"));
}

fn parse_artifacts(specs: &[String]) -> Result<Vec<ModelArtifacts>> {
    specs
        .iter()
        .map(|s| match s.split_once('=') {
            Some((name, dir)) if !name.is_empty() => Ok(ModelArtifacts::new(name, dir)),
            _ => {
                let dir = PathBuf::from(s);
                let name = dir
                    .file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .with_context(|| format!("cannot derive a model name from {s}; use NAME=DIR"))?;
                Ok(ModelArtifacts::new(name, dir))
            }
        })
        .collect()
}

fn split_command(cmd: &str) -> Result<Vec<String>> {
    let argv = shlex::split(cmd).with_context(|| format!("cannot parse command {cmd:?}"))?;
    if argv.is_empty() {
        bail!("empty command");
    }
    Ok(argv)
}

fn cmd_run(a: &RunArgs) -> Result<ExitCode> {
    let manifest = load_manifest(&a.manifest, a.strict_counts)?;
    let models = parse_artifacts(&a.artifacts)?;
    let gateway = a.gateway.build()?;
    let cfg = RunConfig {
        siso: a.siso.config(),
        camera: a.camera.config(),
        tau: a.tau,
        dynamic_fraction: a.dynamic_fraction,
        workers: a.workers,
        ..RunConfig::default()
    };
    let report = run_close_set(&manifest, &models, &gateway, &cfg)?;
    render_report(&report, &a.out)?;
    let failed = report.failed_cases().count();
    let scores: Value = report
        .models
        .iter()
        .map(|m| {
            let dims: serde_json::Map<String, Value> =
                m.dimensions.iter().map(|d| (d.dimension_id.clone(), json!(d.score))).collect();
            (m.model.clone(), Value::Object(dims))
        })
        .collect::<serde_json::Map<_, _>>()
        .into();
    print_json(&json!({ "scores": scores, "failed_cases": failed, "out": a.out }));
    Ok(ExitCode::from(report.exit_code() as u8))
}

fn cmd_normalize(a: &NormalizeArgs) -> Result<Value> {
    let mut merged: Option<BenchmarkReport> = None;
    for path in &a.reports {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        let r = BenchmarkReport::from_json(&bytes).with_context(|| format!("parsing {}", path.display()))?;
        match &mut merged {
            None => merged = Some(r),
            Some(m) => {
                for model in r.models {
                    if m.model(&model.model).is_some() {
                        bail!("model {} appears in more than one report", model.model);
                    }
                    m.models.push(model);
                }
            }
        }
    }
    let report = merged.expect("at least one report");
    Ok(serde_json::to_value(normalize_scores(&report)?)?)
}

fn load_spec(a: &RefineArgs) -> Result<DimensionSpec> {
    match &a.spec {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let spec: DimensionSpec = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            if spec.dimension_id != a.dimension {
                bail!("spec {} is for {}, not {}", path.display(), spec.dimension_id, a.dimension);
            }
            Ok(spec)
        }
        None => builtin_spec(&a.dimension).with_context(|| {
            let known: Vec<&str> = builtin_dimension_ids().collect();
            format!("unknown dimension {}; known: {}", a.dimension, known.join(", "))
        }),
    }
}

fn cmd_refine(a: &RefineArgs) -> Result<Value> {
    let prompt = std::fs::read_to_string(&a.prompt).with_context(|| format!("reading {}", a.prompt.display()))?;
    let spec = load_spec(a)?;
    let generator: Box<dyn Generator> = match (&a.generator_cmd, &a.generator_url) {
        (Some(cmd), _) => Box::new(CommandGenerator::from_argv(&split_command(cmd)?).map_err(anyhow::Error::msg)?),
        (None, Some(url)) => {
            Box::new(HttpGenerator::new(url, std::time::Duration::from_secs(1800)).map_err(anyhow::Error::msg)?)
        }
        (None, None) => bail!("pass --generator-cmd or --generator-url"),
    };
    let argv = split_command(&a.extractor_cmd)?;
    let extractor = CommandExtractor {
        program: argv[0].clone(),
        args: argv[1..].to_vec(),
        mask_concept: a.mask_concept.clone(),
    };
    let gateway = a.gateway.build()?;
    let case_id = a
        .video
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "video".into());
    let case = OpenSetCase {
        case_id,
        source_image: a.image.clone(),
        prompt: prompt.trim().to_string(),
        video: a.video.clone(),
        artifacts_dir: a.artifacts.clone(),
        expected_label: a.expected_label.clone(),
    };
    let mut cfg = LoopConfig::new(&a.out);
    cfg.max_iters = a.max_iters;
    cfg.target_score = a.target_score;
    cfg.min_improvement = a.min_improvement;
    let trace = refine_iterate(&case, &spec, generator.as_ref(), &extractor, &gateway, &cfg)?;

    let trace_path = a.out.join("trace.json");
    trace.save(&trace_path)?;
    let best = trace.best();
    let best_prompt = a.out.join("best-prompt.txt");
    std::fs::write(&best_prompt, format!("{}\n", best.prompt))?;
    let best_video = best.video.as_deref().map(|v| {
        let p = Path::new(v);
        if p.is_absolute() { p.to_path_buf() } else { a.out.join(p) }
    });
    Ok(json!({
        "trace": trace_path,
        "best_index": trace.best_index,
        "best_score": best.score,
        "best_prompt": best_prompt,
        "best_video": best_video,
        "stop_reason": trace.stop_reason,
    }))
}

fn run(cli: Cli) -> Result<ExitCode> {
    let out = match cli.command {
        Cmd::Run(a) => return cmd_run(&a),
        Cmd::Siso(a) => {
            let tracks = TrackSet::load(&a.tracks)?;
            serde_json::to_value(siso_from_tracks(&tracks, &a.siso.config())?)?
        }
        Cmd::Squash(a) => {
            let masks = MaskSequence::load(&a.masks)?;
            animetric_core::artifacts::validate_mask_sequence(&masks)?;
            serde_json::to_value(squash_stretch_score(&masks, a.rebound, a.tau)?)?
        }
        Cmd::Dyndeg(a) => {
            let flow = FlowSequence::load(&a.flow)?;
            let (h, w) = match (a.height, a.width) {
                (Some(h), Some(w)) => (h, w),
                _ => flow.reference_size(),
            };
            serde_json::to_value(dynamic_degree(&flow, h, w, a.dynamic_fraction)?)?
        }
        Cmd::Diversity(a) => {
            let pooled = a
                .embeddings
                .iter()
                .map(|p| EmbeddingSet::load(p).map(|e| e.pooled()))
                .collect::<Result<Vec<_>, _>>()?;
            json!({ "score": diversity_score(&pooled)? })
        }
        Cmd::Novelty(a) => {
            let gen = EmbeddingSet::load(&a.generated)?;
            let reference = EmbeddingSet::load(&a.reference)?;
            json!({ "score": novelty_score(&gen, &reference)? })
        }
        Cmd::Camera(a) => {
            let tracks = TrackSet::load(&a.tracks)?;
            serde_json::to_value(classify_camera(&tracks, &a.camera.config())?)?
        }
        Cmd::Quality(a) => json!({ "score": perceptual_quality(&QualitySeries::load(&a.series)?)? }),
        Cmd::Normalize(a) => cmd_normalize(&a)?,
        Cmd::Align(a) => {
            let text = std::fs::read_to_string(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
            let input: AlignmentInput = serde_json::from_str(&text)?;
            serde_json::to_value(alignment(&input)?)?
        }
        Cmd::Refine(a) => cmd_refine(&a)?,
        Cmd::Inspect(a) => {
            let (header, payload) = read_tensor_file(&a.file)?;
            let mut header: Value = serde_json::from_slice(&header.to_canonical_json())?;
            header["payload_bytes"] = json!(payload.len());
            header
        }
    };
    print_json(&out);
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
