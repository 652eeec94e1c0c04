use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::manifest::{DimensionEntry, Manifest, ScorerKind};
use super::report::{BenchmarkReport, CaseRecord, CaseStatus, DimensionSummary, ModelReport, Provenance};
use super::BenchError;
use crate::appeal::{
    diversity_score, dynamic_degree, novelty_score, perceptual_quality, semantic_extension, ExtensionAspects,
    DEFAULT_ACTION_CAP, DEFAULT_DYNAMIC_FRACTION,
};
use crate::artifacts::{
    layout, load_frames, validate_mask_sequence, ArtifactKind, EmbeddingSet, FlowSequence, Frame, MaskSequence,
    QualitySeries, TrackSet, VideoCase, ROTATION_TAG,
};
use crate::camera::{classify_camera, CameraConfig, CameraMotion};
use crate::gateway::{Gateway, QARequest, Verdict};
use crate::motion::{siso_from_tracks, SisoConfig};
use crate::qa::{evaluate_case, evaluate_ip_rotation, QuestionBank};
use crate::shape::{squash_stretch_score, DEFAULT_TAU};

pub const DEFAULT_REBOUND_QUESTION: &str =
    "Does the object visibly rebound, bouncing back or recovering its shape after an impact or compression?";

pub const NEW_ACTIONS_QUESTION: &str =
    "How many distinct actions does the character perform that the prompt does not describe?";

/// One yes/no question per extension aspect, in [`ExtensionAspects::from_flags`] order.
pub const EXTENSION_QUESTIONS: [&str; 5] = [
    "Does the video introduce characters that the prompt does not mention?",
    "Does the video introduce objects, or interactions with objects, that the prompt does not mention?",
    "Does the video contain camera movement, cuts or other editing that the prompt does not request?",
    "Does the video coherently expand the scene beyond what the prompt describes?",
    "Does the environment change (lighting, weather, surroundings) in a way the prompt does not describe?",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub siso: SisoConfig,
    pub camera: CameraConfig,
    pub tau: f64,
    pub dynamic_fraction: f64,
    pub action_cap: u32,
    /// Worker threads for case scoring; not part of the config hash.
    #[serde(skip)]
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            siso: SisoConfig::default(),
            camera: CameraConfig::default(),
            tau: DEFAULT_TAU,
            dynamic_fraction: DEFAULT_DYNAMIC_FRACTION,
            action_cap: DEFAULT_ACTION_CAP,
            workers: 4,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: &str| Err(BenchError::Config(m.to_string()));
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad("tau must be positive");
        }
        if !(0.0..=1.0).contains(&self.dynamic_fraction) {
            return bad("dynamic_fraction must lie in [0, 1]");
        }
        if self.siso.window == 0 {
            return bad("siso window must be at least 1");
        }
        if !(self.siso.interval_frac > 0.0 && self.siso.interval_frac < 1.0) {
            return bad("siso interval_frac must lie in (0, 1)");
        }
        if !(self.camera.static_frac >= 0.0 && self.camera.zoom_dominance > 0.0) {
            return bad("camera thresholds must be positive");
        }
        Ok(())
    }
}

/// Artifacts of one generator model: `<dir>/<case_id>/...`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelArtifacts {
    pub model: String,
    pub dir: PathBuf,
}

impl ModelArtifacts {
    pub fn new(model: impl Into<String>, dir: impl Into<PathBuf>) -> Self {
        Self {
            model: model.into(),
            dir: dir.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseOutcome {
    pub score: f64,
    pub detail: Value,
    pub unparseable: usize,
}

fn artifact_files(kind: ArtifactKind, scorer: ScorerKind) -> Vec<String> {
    match kind {
        ArtifactKind::Masks => vec![layout::MASKS.into()],
        ArtifactKind::Tracks => vec![layout::TRACKS.into(), "video.roles.json".into()],
        ArtifactKind::Flow => vec![layout::FLOW.into()],
        ArtifactKind::Embeddings => match scorer {
            ScorerKind::Diversity => (0..layout::DIVERSITY_SAMPLES).map(layout::sample_embeddings).collect(),
            ScorerKind::Novelty => vec![layout::EMBEDDINGS.into(), layout::REFERENCE_EMBEDDINGS.into()],
            _ => vec![layout::EMBEDDINGS.into()],
        },
        ArtifactKind::Quality => vec![layout::QUALITY.into()],
        ArtifactKind::Frames => vec![layout::FRAMES_DIR.into()],
    }
}

fn check_artifacts(case: &VideoCase, scorer: ScorerKind, case_dir: &Path) -> Result<(), String> {
    for kind in &case.artifact_needs {
        for name in artifact_files(*kind, scorer) {
            if !case_dir.join(&name).exists() {
                return Err(format!("missing artifact {name}"));
            }
        }
    }
    Ok(())
}

fn frames_of(case_dir: &Path) -> Result<Vec<Frame>, String> {
    let frames = load_frames(case_dir.join(layout::FRAMES_DIR)).map_err(|e| e.to_string())?;
    if frames.is_empty() {
        return Err(format!("no png/jpg frames in {}", layout::FRAMES_DIR));
    }
    Ok(frames)
}

fn context_of(dim: &DimensionEntry, case: &VideoCase) -> String {
    let mut ctx = format!("Evaluation dimension: {}.", dim.dimension_id);
    if let Some(c) = &dim.context {
        ctx.push('\n');
        ctx.push_str(c);
    }
    if !case.prompt.is_empty() {
        ctx.push_str("\nThe video was generated from the prompt: ");
        ctx.push_str(&case.prompt);
    }
    ctx
}

fn ask(gateway: &Gateway, case: &VideoCase, ctx: &str, question: &str, frames: &[Frame]) -> Result<Verdict, String> {
    gateway
        .ask_yes_no(&QARequest {
            case_id: case.case_id.clone(),
            system_context: ctx.to_string(),
            question: question.to_string(),
            frames: frames.to_vec(),
        })
        .map(|a| a.verdict)
        .map_err(|e| e.to_string())
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("detail serializes")
}

/// Scores one case of `dim` from the artifacts in `case_dir`.
///
/// `bank` is required for the QA scorers and ignored otherwise.
pub fn score_case(
    dim: &DimensionEntry,
    case: &VideoCase,
    case_dir: &Path,
    bank: Option<&QuestionBank>,
    gateway: &Gateway,
    cfg: &RunConfig,
) -> Result<CaseOutcome, String> {
    check_artifacts(case, dim.scorer, case_dir)?;
    let err = |e: &dyn std::fmt::Display| e.to_string();
    match dim.scorer {
        ScorerKind::Qa | ScorerKind::RationalityQa => {
            let bank = bank.ok_or("no question bank")?;
            let frames = frames_of(case_dir)?;
            let r = if case.tags.contains(ROTATION_TAG) {
                evaluate_ip_rotation(bank, case, &frames, gateway)
            } else {
                evaluate_case(bank, case, &frames, gateway)
            }
            .map_err(|e| err(&e))?;
            Ok(CaseOutcome {
                score: r.score,
                unparseable: r.unparseable_count,
                detail: json!({ "verdicts": r.verdicts }),
            })
        }
        ScorerKind::Siso => {
            let tracks = TrackSet::load(case_dir.join(layout::TRACKS)).map_err(|e| err(&e))?;
            let v = siso_from_tracks(&tracks, &cfg.siso).map_err(|e| err(&e))?;
            Ok(CaseOutcome {
                score: v.normalized_score,
                unparseable: 0,
                detail: to_value(&v),
            })
        }
        ScorerKind::Squash => {
            let masks = MaskSequence::load(case_dir.join(layout::MASKS)).map_err(|e| err(&e))?;
            validate_mask_sequence(&masks).map_err(|e| err(&e))?;
            let frames = frames_of(case_dir)?;
            let question = dim.rebound_question.as_deref().unwrap_or(DEFAULT_REBOUND_QUESTION);
            let verdict = ask(gateway, case, &context_of(dim, case), question, &frames)?;
            let r = squash_stretch_score(&masks, verdict == Verdict::Yes, cfg.tau).map_err(|e| err(&e))?;
            Ok(CaseOutcome {
                score: r.w2,
                unparseable: (verdict == Verdict::Unparseable) as usize,
                detail: json!({
                    "S": r.area_preservation,
                    "D": r.deformation,
                    "W2": r.w2,
                    "rebound": r.rebound,
                    "rebound_verdict": verdict,
                    "degenerate_frames": r.degenerate_frames,
                }),
            })
        }
        ScorerKind::DynamicDegree => {
            let flow = FlowSequence::load(case_dir.join(layout::FLOW)).map_err(|e| err(&e))?;
            let (h, w) = flow.reference_size();
            let r = dynamic_degree(&flow, h, w, cfg.dynamic_fraction).map_err(|e| err(&e))?;
            Ok(CaseOutcome {
                score: if r.is_dynamic { 100.0 } else { 0.0 },
                unparseable: 0,
                detail: to_value(&r),
            })
        }
        ScorerKind::Diversity => {
            let pooled = (0..layout::DIVERSITY_SAMPLES)
                .map(|i| {
                    EmbeddingSet::load(case_dir.join(layout::sample_embeddings(i)))
                        .map(|e| e.pooled())
                        .map_err(|e| err(&e))
                })
                .collect::<Result<Vec<_>, _>>()?;
            let s = diversity_score(&pooled).map_err(|e| err(&e))?;
            Ok(CaseOutcome {
                score: s,
                unparseable: 0,
                detail: Value::Null,
            })
        }
        ScorerKind::Novelty => {
            let gen = EmbeddingSet::load(case_dir.join(layout::EMBEDDINGS)).map_err(|e| err(&e))?;
            let reference = EmbeddingSet::load(case_dir.join(layout::REFERENCE_EMBEDDINGS)).map_err(|e| err(&e))?;
            let s = novelty_score(&gen, &reference).map_err(|e| err(&e))?;
            Ok(CaseOutcome {
                score: s,
                unparseable: 0,
                detail: json!({ "generated_source": gen.source_tag, "reference_source": reference.source_tag }),
            })
        }
        ScorerKind::SemanticExtension => {
            let frames = frames_of(case_dir)?;
            let ctx = context_of(dim, case);
            let mut flags = [false; 5];
            let mut unparseable = 0;
            for (flag, q) in flags.iter_mut().zip(EXTENSION_QUESTIONS) {
                let v = ask(gateway, case, &ctx, q, &frames)?;
                unparseable += (v == Verdict::Unparseable) as usize;
                *flag = v == Verdict::Yes;
            }
            let count = gateway
                .ask_count(&QARequest {
                    case_id: case.case_id.clone(),
                    system_context: ctx,
                    question: NEW_ACTIONS_QUESTION.to_string(),
                    frames,
                })
                .map_err(|e| err(&e))?;
            // An unparseable count is scored like an unparseable yes/no: nothing.
            unparseable += count.count.is_none() as usize;
            let actions = count.count.unwrap_or(0).min(i64::MAX as u64) as i64;
            let t = semantic_extension(ExtensionAspects::from_flags(flags), actions, cfg.action_cap)
                .map_err(|e| err(&e))?;
            Ok(CaseOutcome {
                score: t.normalized,
                unparseable,
                detail: to_value(&t),
            })
        }
        ScorerKind::Camera => {
            let label = case.expected_label.as_deref().ok_or("no expected_label")?;
            let expected: CameraMotion = label.parse().map_err(|e| err(&e))?;
            let tracks = TrackSet::load(case_dir.join(layout::TRACKS)).map_err(|e| err(&e))?;
            let v = classify_camera(&tracks, &cfg.camera).map_err(|e| err(&e))?;
            let hit = v.predicted == expected;
            Ok(CaseOutcome {
                score: if hit { 100.0 } else { 0.0 },
                unparseable: 0,
                detail: json!({ "expected": expected, "verdict": v }),
            })
        }
        ScorerKind::Quality => {
            let q = QualitySeries::load(case_dir.join(layout::QUALITY)).map_err(|e| err(&e))?;
            let s = perceptual_quality(&q).map_err(|e| err(&e))?;
            Ok(CaseOutcome {
                score: s,
                unparseable: 0,
                detail: json!({ "frames": q.scores.len() }),
            })
        }
    }
}

fn bank_path(manifest: &Manifest, dim: &DimensionEntry, case: &VideoCase) -> Option<PathBuf> {
    case.question_bank_ref
        .as_ref()
        .map(PathBuf::from)
        .or_else(|| dim.question_bank.clone())
        .map(|p| manifest.resolve(&p))
}

fn load_banks(manifest: &Manifest) -> BTreeMap<PathBuf, Result<QuestionBank, String>> {
    let mut banks = BTreeMap::new();
    for dim in manifest.dimensions.iter().filter(|d| d.scorer.uses_question_bank()) {
        for case in &dim.cases {
            if let Some(p) = bank_path(manifest, dim, case) {
                banks.entry(p.clone()).or_insert_with(|| {
                    let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                    QuestionBank::load(&p).map_err(|e| format!("question bank {name}: {e}"))
                });
            }
        }
    }
    banks
}

fn config_hash(manifest: &Manifest, models: &[ModelArtifacts], judge: &str, cfg: &RunConfig) -> String {
    let v = json!({
        "manifest": serde_json::to_value(manifest).expect("manifest serializes"),
        "models": models.iter().map(|m| m.model.as_str()).collect::<Vec<_>>(),
        "judge_model": judge,
        "run": cfg,
    });
    hex::encode(Sha256::digest(serde_json::to_vec(&v).expect("value serializes")))
}

/// Scores every case of `manifest` for every model.
///
/// Case failures are recorded on the case and excluded from dimension means;
/// the run itself only fails on configuration errors.
pub fn run_close_set(
    manifest: &Manifest,
    models: &[ModelArtifacts],
    gateway: &Gateway,
    cfg: &RunConfig,
) -> Result<BenchmarkReport, BenchError> {
    cfg.validate()?;
    let mut names: Vec<&str> = models.iter().map(|m| m.model.as_str()).collect();
    names.sort_unstable();
    if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
        return Err(BenchError::Config(format!("model {} listed twice", w[0])));
    }

    let banks = load_banks(manifest);
    let jobs: Vec<(usize, usize, usize)> = models
        .iter()
        .enumerate()
        .flat_map(|(mi, _)| {
            manifest
                .dimensions
                .iter()
                .enumerate()
                .flat_map(move |(di, d)| (0..d.cases.len()).map(move |ci| (mi, di, ci)))
        })
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers.max(1))
        .build()
        .map_err(|e| BenchError::Config(e.to_string()))?;
    let records: Vec<(usize, CaseRecord, usize)> = pool.install(|| {
        jobs.par_iter()
            .map(|&(mi, di, ci)| {
                let dim = &manifest.dimensions[di];
                let case = &dim.cases[ci];
                let case_dir = models[mi].dir.join(&case.case_id);
                let bank = match bank_path(manifest, dim, case).map(|p| &banks[&p]) {
                    Some(Ok(b)) => Ok(Some(b)),
                    Some(Err(e)) => Err(e.clone()),
                    None => Ok(None),
                };
                let result = bank.and_then(|b| score_case(dim, case, &case_dir, b, gateway, cfg));
                let (record, unparseable) = match result {
                    Ok(o) => (
                        CaseRecord {
                            case_id: case.case_id.clone(),
                            dimension_id: dim.dimension_id.clone(),
                            status: CaseStatus::Ok,
                            score: Some(o.score),
                            error: None,
                            detail: o.detail,
                        },
                        o.unparseable,
                    ),
                    Err(e) => {
                        log::warn!("{} / {}: {e}", models[mi].model, case.case_id);
                        // Keep reports independent of where the artifacts live.
                        let prefix = models[mi].dir.display().to_string();
                        let e = if prefix.is_empty() { e } else { e.replace(&prefix, "<artifacts>") };
                        (
                            CaseRecord {
                                case_id: case.case_id.clone(),
                                dimension_id: dim.dimension_id.clone(),
                                status: CaseStatus::Failed,
                                score: None,
                                error: Some(e),
                                detail: Value::Null,
                            },
                            0,
                        )
                    }
                };
                (mi, record, unparseable)
            })
            .collect()
    });

    let mut model_reports: Vec<ModelReport> = models
        .iter()
        .map(|m| ModelReport {
            model: m.model.clone(),
            dimensions: Vec::new(),
            cases: Vec::new(),
        })
        .collect();
    let mut unparseable_by: BTreeMap<(usize, String), usize> = BTreeMap::new();
    for (mi, rec, unparseable) in records {
        *unparseable_by.entry((mi, rec.dimension_id.clone())).or_default() += unparseable;
        model_reports[mi].cases.push(rec);
    }
    for (mi, mr) in model_reports.iter_mut().enumerate() {
        for dim in &manifest.dimensions {
            let cases: Vec<&CaseRecord> = mr.cases.iter().filter(|c| c.dimension_id == dim.dimension_id).collect();
            let scores: Vec<f64> = cases.iter().filter_map(|c| c.score).collect();
            mr.dimensions.push(DimensionSummary {
                dimension_id: dim.dimension_id.clone(),
                scorer: dim.scorer,
                score: (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64),
                cases: cases.len(),
                scored: scores.len(),
                failed: cases.len() - scores.len(),
                unparseable_answers: unparseable_by
                    .get(&(mi, dim.dimension_id.clone()))
                    .copied()
                    .unwrap_or(0),
            });
        }
    }
    model_reports.sort_by(|a, b| a.model.cmp(&b.model));

    Ok(BenchmarkReport::new(
        manifest.suite.clone(),
        model_reports,
        Provenance {
            engine_version: env!("CARGO_PKG_VERSION").to_string(),
            judge_model: gateway.model_name().to_string(),
            cache_digest: gateway.session_digest(),
            config_hash: config_hash(manifest, models, gateway.model_name(), cfg),
        },
    ))
}
