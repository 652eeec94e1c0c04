//! Open-set diagnose → refine → regenerate loop for arbitrary videos.
//!
//! The judge lists what a video gets wrong under one dimension, a text model
//! rewrites the prompt against that list, an external generator renders a
//! new candidate, and the dimension's scorer decides whether it improved.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Duration;

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::artifacts::{layout, load_frames, ArtifactKind, Frame, VideoCase};
use crate::bench::{score_case, DimensionEntry, RunConfig, ScorerKind};
use crate::gateway::{Gateway, GatewayError};
use crate::qa::{BankCase, BankSetting, Question, QuestionBank};

pub const REFINER_TEMPLATE_VERSION: &str = "refine-v1";
pub const MAX_DIAGNOSTIC_QUESTIONS: usize = 10;
pub const DEFAULT_MAX_ITERS: usize = 3;
pub const DEFAULT_MIN_IMPROVEMENT: f64 = 1.0;
pub const DEFAULT_TARGET_SCORE: f64 = 100.0;

#[derive(Debug, Error)]
pub enum OpenSetError {
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("unknown dimension {0}")]
    UnknownDimension(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("refiner returned an empty prompt")]
    EmptyCompletion,
    #[error("scoring the original video failed: {0}")]
    Scoring(String),
    #[error("extracting artifacts of the original video failed: {0}")]
    Extraction(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> OpenSetError + '_ {
    move |source| OpenSetError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// A target dimension: its judge-facing definition and the scorer that
/// re-evaluates candidates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionSpec {
    pub dimension_id: String,
    pub definition: String,
    pub scorer: ScorerKind,
    /// Fixed bank for QA scorers. Without one, the questions diagnosed on the
    /// original video become the yardstick for every candidate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question_bank: Option<QuestionBank>,
}

impl DimensionSpec {
    pub fn validate(&self) -> Result<(), OpenSetError> {
        if self.dimension_id.trim().is_empty() {
            return Err(OpenSetError::Precondition("dimension_id is empty".into()));
        }
        if self.definition.trim().is_empty() {
            return Err(OpenSetError::Precondition(format!("{} has no definition", self.dimension_id)));
        }
        Ok(())
    }

    pub fn system_context(&self) -> String {
        format!("Evaluation dimension: {}.\n{}", self.dimension_id, self.definition.trim())
    }
}

const BUILTIN: &[(&str, ScorerKind, &str)] = &[
    ("appearance", ScorerKind::Qa, "The character keeps its canonical look (shape, colors, costume, proportions) in every frame and from every viewpoint."),
    ("behavior", ScorerKind::Qa, "The character acts in the habitual ways that define it, such as signature gestures, movement style and typical actions."),
    ("personality", ScorerKind::Qa, "The character's expressions and acting convey its established temperament and emotional style."),
    ("anticipation", ScorerKind::Qa, "Major actions are prepared by a visible opposite motion, e.g. a crouch before a jump or a wind-up before a throw."),
    ("follow_through", ScorerKind::Qa, "When the main body stops, loose parts (hair, clothing, tails, appendages) keep moving and settle with a lag."),
    ("siso", ScorerKind::Siso, "Motion eases in and out: the moving object accelerates gradually from rest, peaks mid-motion, and decelerates gradually to rest."),
    ("squash_stretch", ScorerKind::Squash, "Shapes flatten on impact and elongate in fast motion while keeping their volume, conveying weight and flexibility, with a visible rebound."),
    ("distinctive_content", ScorerKind::Qa, "The video shows the uncommon, animation-specific elements the prompt asks for while staying faithful to it."),
    ("solid_drawing", ScorerKind::Quality, "Forms look solid and clean: no blur, noise, overexposure or other low-level artifacts."),
    ("novelty", ScorerKind::Novelty, "The animation goes beyond the most predictable rendition of the prompt."),
    ("dynamic_degree", ScorerKind::DynamicDegree, "The video contains substantial motion rather than a near-static scene."),
    ("semantic_extension", ScorerKind::SemanticExtension, "The video coherently enriches the prompt with new actions, characters, objects, camera work, scene or environment changes."),
    ("semantic_consistency", ScorerKind::Qa, "Objects, actions, colors and scene match the prompt and the conditioning image."),
    ("motion_rationality", ScorerKind::RationalityQa, "Motion is coherent and plausible: intact body structure, continuous motion without jumps, actions that look like what they are, and interactions that fit the environment."),
];

/// Built-in spec for a known dimension id.
pub fn builtin_spec(dimension_id: &str) -> Option<DimensionSpec> {
    BUILTIN.iter().find(|(id, ..)| *id == dimension_id).map(|(id, scorer, def)| DimensionSpec {
        dimension_id: id.to_string(),
        definition: def.to_string(),
        scorer: *scorer,
        question_bank: None,
    })
}

pub fn builtin_dimension_ids() -> impl Iterator<Item = &'static str> {
    BUILTIN.iter().map(|(id, ..)| *id)
}

fn diagnose_instruction(prompt: &str) -> String {
    format!(
        "The video was generated from the prompt: {prompt}\n\
         List what is missing or inconsistent in this video under the evaluation dimension. \
         Phrase each problem as a yes/no question that a correct video would answer with yes. \
         Give at most {MAX_DIAGNOSTIC_QUESTIONS} questions, or an empty list if the video fully satisfies the dimension."
    )
}

/// Diagnostic questions for `frames` under `spec`; an empty list means the
/// judge found nothing to fix.
pub fn diagnose(frames: &[Frame], prompt: &str, spec: &DimensionSpec, gateway: &Gateway) -> Result<Vec<String>, OpenSetError> {
    spec.validate()?;
    if frames.is_empty() {
        return Err(OpenSetError::Precondition("no frames to diagnose".into()));
    }
    let (list, _) = gateway.ask_string_list(None, &spec.system_context(), &diagnose_instruction(prompt), frames)?;
    let mut seen = BTreeSet::new();
    let mut questions: Vec<String> = list
        .into_iter()
        .map(|q| q.trim().to_string())
        .filter(|q| !q.is_empty() && seen.insert(q.clone()))
        .collect();
    if questions.len() > MAX_DIAGNOSTIC_QUESTIONS {
        log::warn!("judge returned {} diagnostic questions; keeping the first {MAX_DIAGNOSTIC_QUESTIONS}", questions.len());
        questions.truncate(MAX_DIAGNOSTIC_QUESTIONS);
    }
    Ok(questions)
}

pub fn refiner_prompt(prompt: &str, questions: &[String]) -> String {
    let mut s = String::from(
        "You rewrite prompts for an image-to-video generation model.\n\nOriginal prompt:\n",
    );
    s.push_str(prompt.trim());
    s.push_str("\n\nThe video generated from it fails these checks:\n");
    for q in questions {
        let _ = writeln!(s, "- {q}");
    }
    s.push_str(
        "\nRewrite the prompt so that a new video passes every check. Keep the subject, style and intent \
         of the original. Reply with the rewritten prompt only.",
    );
    s
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefinedPrompt {
    pub prompt: String,
    /// `None` when no refinement was needed.
    pub template_version: Option<String>,
}

/// Rewrites `prompt` against `questions`; with no questions the prompt is
/// returned unchanged.
pub fn refine_prompt(prompt: &str, questions: &[String], gateway: &Gateway) -> Result<RefinedPrompt, OpenSetError> {
    if prompt.trim().is_empty() {
        return Err(OpenSetError::Precondition("prompt is empty".into()));
    }
    if questions.is_empty() {
        return Ok(RefinedPrompt {
            prompt: prompt.to_string(),
            template_version: None,
        });
    }
    let answer = gateway.complete_text(&refiner_prompt(prompt, questions))?;
    let refined = answer.text.trim();
    if refined.is_empty() {
        return Err(OpenSetError::EmptyCompletion);
    }
    Ok(RefinedPrompt {
        prompt: refined.to_string(),
        template_version: Some(REFINER_TEMPLATE_VERSION.to_string()),
    })
}

/// Renders a video from a conditioning image and a prompt.
pub trait Generator {
    /// Writes the video to `out` (or returns another location) and returns its path.
    fn generate(&self, image: &Path, prompt: &str, out: &Path) -> Result<PathBuf, String>;
}

/// Produces the artifacts a scorer needs from a video.
pub trait ExtractorHook {
    fn extract(&self, video: &Path, needs: &BTreeSet<ArtifactKind>, out_dir: &Path) -> Result<(), String>;
}

fn run_command(program: &str, args: &[String]) -> Result<(), String> {
    let out = Command::new(program)
        .args(args)
        .output()
        .map_err(|e| format!("cannot run {program}: {e}"))?;
    if out.status.success() {
        Ok(())
    } else {
        let stderr = String::from_utf8_lossy(&out.stderr);
        Err(format!("{program} exited with {}: {}", out.status, stderr.trim()))
    }
}

/// `<program> <args..> --image <path> --prompt <file> --out <path>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommandGenerator {
    pub program: String,
    pub args: Vec<String>,
}

impl CommandGenerator {
    /// From an argv list such as `["python", "gen.py", "--seed", "0"]`.
    pub fn from_argv(argv: &[String]) -> Result<Self, String> {
        let (program, args) = argv.split_first().ok_or("empty generator command")?;
        Ok(Self {
            program: program.clone(),
            args: args.to_vec(),
        })
    }
}

impl Generator for CommandGenerator {
    fn generate(&self, image: &Path, prompt: &str, out: &Path) -> Result<PathBuf, String> {
        let prompt_file = out.with_extension("prompt.txt");
        std::fs::write(&prompt_file, prompt).map_err(|e| format!("{}: {e}", prompt_file.display()))?;
        let mut args = self.args.clone();
        args.extend([
            "--image".into(),
            image.display().to_string(),
            "--prompt".into(),
            prompt_file.display().to_string(),
            "--out".into(),
            out.display().to_string(),
        ]);
        run_command(&self.program, &args)?;
        if !out.exists() {
            return Err(format!("generator did not write {}", out.display()));
        }
        Ok(out.to_path_buf())
    }
}

/// POSTs `{"image": <base64>, "image_name", "prompt"}` and expects
/// `{"video": <path or http(s) URL>}`; URLs are downloaded to `out`.
pub struct HttpGenerator {
    url: String,
    client: reqwest::blocking::Client,
}

impl HttpGenerator {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Result<Self, String> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| e.to_string())?;
        Ok(Self { url: url.into(), client })
    }
}

#[derive(Deserialize)]
struct GeneratorReply {
    video: String,
}

impl Generator for HttpGenerator {
    fn generate(&self, image: &Path, prompt: &str, out: &Path) -> Result<PathBuf, String> {
        let bytes = std::fs::read(image).map_err(|e| format!("{}: {e}", image.display()))?;
        let body = serde_json::json!({
            "image": base64::engine::general_purpose::STANDARD.encode(bytes),
            "image_name": image.file_name().map(|n| n.to_string_lossy().into_owned()),
            "prompt": prompt,
        });
        let resp = self.client.post(&self.url).json(&body).send().map_err(|e| e.to_string())?;
        let status = resp.status();
        if !status.is_success() {
            return Err(format!("generator endpoint returned {status}"));
        }
        let reply: GeneratorReply = resp.json().map_err(|e| format!("malformed generator reply: {e}"))?;
        if reply.video.starts_with("http://") || reply.video.starts_with("https://") {
            let video = self.client.get(&reply.video).send().map_err(|e| e.to_string())?;
            if !video.status().is_success() {
                return Err(format!("video download returned {}", video.status()));
            }
            let data = video.bytes().map_err(|e| e.to_string())?;
            std::fs::write(out, &data).map_err(|e| format!("{}: {e}", out.display()))?;
            Ok(out.to_path_buf())
        } else {
            Ok(PathBuf::from(reply.video))
        }
    }
}

/// `<program> <args..> --video <path> --out <dir>` plus one flag per need.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommandExtractor {
    pub program: String,
    pub args: Vec<String>,
    /// Text prompt for the segmenter; required when masks are needed.
    pub mask_concept: Option<String>,
}

impl ExtractorHook for CommandExtractor {
    fn extract(&self, video: &Path, needs: &BTreeSet<ArtifactKind>, out_dir: &Path) -> Result<(), String> {
        let mut args = self.args.clone();
        args.extend([
            "--video".into(),
            video.display().to_string(),
            "--out".into(),
            out_dir.display().to_string(),
        ]);
        for need in needs {
            match need {
                ArtifactKind::Masks => {
                    let concept = self.mask_concept.as_ref().ok_or("masks needed but no mask concept given")?;
                    args.extend(["--masks".into(), concept.clone()]);
                }
                ArtifactKind::Tracks => args.push("--tracks".into()),
                ArtifactKind::Flow => args.push("--flow".into()),
                ArtifactKind::Embeddings => args.push("--embeddings".into()),
                ArtifactKind::Quality => args.push("--quality".into()),
                ArtifactKind::Frames => args.push("--frames".into()),
            }
        }
        run_command(&self.program, &args)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpenSetCase {
    pub case_id: String,
    pub source_image: PathBuf,
    pub prompt: String,
    pub video: PathBuf,
    /// Artifacts of `video` if already extracted.
    pub artifacts_dir: Option<PathBuf>,
    /// Prompted camera motion, for the camera scorer.
    pub expected_label: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopConfig {
    pub max_iters: usize,
    pub min_improvement: f64,
    pub target_score: f64,
    /// Candidate videos and artifacts go under `work_dir/iter-<i>/`.
    pub work_dir: PathBuf,
    pub run: RunConfig,
}

impl LoopConfig {
    pub fn new(work_dir: impl Into<PathBuf>) -> Self {
        Self {
            max_iters: DEFAULT_MAX_ITERS,
            min_improvement: DEFAULT_MIN_IMPROVEMENT,
            target_score: DEFAULT_TARGET_SCORE,
            work_dir: work_dir.into(),
            run: RunConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    ScoreImprovedTargetMet,
    MaxIters,
    NoImprovement,
    /// The judge found nothing to fix; no candidate was generated.
    EmptyDiagnosis,
    /// Generation, extraction or scoring of a candidate failed.
    CandidateFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceIteration {
    pub index: usize,
    pub prompt: String,
    /// Questions the prompt was refined against (empty for iteration 0).
    pub questions: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub template_version: Option<String>,
    /// Video path, relative to the work dir when inside it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub video: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementTrace {
    pub case_id: String,
    pub dimension_id: String,
    pub scorer: ScorerKind,
    pub iterations: Vec<TraceIteration>,
    pub best_index: usize,
    pub stop_reason: StopReason,
    pub generator_calls: usize,
}

impl RefinementTrace {
    pub fn best(&self) -> &TraceIteration {
        &self.iterations[self.best_index]
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), OpenSetError> {
        let path = path.as_ref();
        let mut bytes = serde_json::to_vec_pretty(self).expect("trace serializes");
        bytes.push(b'\n');
        std::fs::write(path, bytes).map_err(io_err(path))
    }
}

/// Earliest iteration with the highest score; 0 when nothing was scored.
fn best_index(iters: &[TraceIteration]) -> usize {
    let mut best: Option<(usize, f64)> = None;
    for it in iters {
        if let Some(s) = it.score {
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((it.index, s));
            }
        }
    }
    best.map(|(i, _)| i).unwrap_or(0)
}

fn display_rel(path: &Path, base: &Path) -> String {
    path.strip_prefix(base).unwrap_or(path).display().to_string()
}

struct Scorer<'a> {
    dim: DimensionEntry,
    bank: Option<QuestionBank>,
    gateway: &'a Gateway,
    run: &'a RunConfig,
}

impl Scorer<'_> {
    fn score(&self, case: &VideoCase, dir: &Path) -> Result<f64, String> {
        score_case(&self.dim, case, dir, self.bank.as_ref(), self.gateway, self.run).map(|o| o.score)
    }
}

fn diagnostic_bank(spec: &DimensionSpec, case_id: &str, questions: &[String]) -> QuestionBank {
    QuestionBank {
        dimension_id: spec.dimension_id.clone(),
        setting: BankSetting::Standard,
        context: Some(spec.definition.clone()),
        cases: vec![BankCase {
            case_id: case_id.to_string(),
            profile: None,
            questions: questions
                .iter()
                .enumerate()
                .map(|(i, q)| Question {
                    id: format!("d{i}"),
                    text: q.clone(),
                    weight: 1.0,
                })
                .collect(),
        }],
    }
}

fn frames_in(dir: &Path) -> Result<Vec<Frame>, String> {
    let frames = load_frames(dir.join(layout::FRAMES_DIR)).map_err(|e| e.to_string())?;
    if frames.is_empty() {
        return Err(format!("no frames under {}", layout::FRAMES_DIR));
    }
    Ok(frames)
}

/// Runs the refinement loop on one case.
///
/// Iteration 0 is the original video. Each later iteration refines the
/// prompt against the previous diagnosis, generates and scores a candidate.
/// The loop stops when a candidate reaches `target_score`, improves on the
/// best score by less than `min_improvement`, fails, or after `max_iters`
/// refinements.
pub fn refine_iterate(
    case: &OpenSetCase,
    spec: &DimensionSpec,
    generator: &dyn Generator,
    extractor: &dyn ExtractorHook,
    gateway: &Gateway,
    cfg: &LoopConfig,
) -> Result<RefinementTrace, OpenSetError> {
    spec.validate()?;
    if cfg.max_iters == 0 {
        return Err(OpenSetError::Precondition("max_iters must be at least 1".into()));
    }
    if case.prompt.trim().is_empty() {
        return Err(OpenSetError::Precondition("prompt is empty".into()));
    }
    let work = &cfg.work_dir;
    std::fs::create_dir_all(work).map_err(io_err(work))?;

    let mut needs: BTreeSet<ArtifactKind> = spec.scorer.required_artifacts().iter().copied().collect();
    needs.insert(ArtifactKind::Frames);

    let video_case = |prompt: &str| VideoCase {
        case_id: case.case_id.clone(),
        dimension_id: spec.dimension_id.clone(),
        source_image: case.source_image.clone(),
        prompt: prompt.to_string(),
        expected_label: case.expected_label.clone(),
        question_bank_ref: None,
        artifact_needs: needs.clone(),
        tags: BTreeSet::new(),
    };

    let dir0 = match &case.artifacts_dir {
        Some(d) => d.clone(),
        None => {
            let d = work.join("iter-0").join("artifacts");
            std::fs::create_dir_all(&d).map_err(io_err(&d))?;
            extractor
                .extract(&case.video, &needs, &d)
                .map_err(OpenSetError::Extraction)?;
            d
        }
    };
    let frames0 = frames_in(&dir0).map_err(OpenSetError::Extraction)?;
    let mut diagnosis = diagnose(&frames0, &case.prompt, spec, gateway)?;

    let fallback_bank = spec.scorer.uses_question_bank() && spec.question_bank.is_none();
    let scorer = Scorer {
        dim: DimensionEntry {
            dimension_id: spec.dimension_id.clone(),
            scorer: spec.scorer,
            expected_count: None,
            question_bank: None,
            context: Some(spec.definition.clone()),
            rebound_question: None,
            cases: Vec::new(),
        },
        bank: if fallback_bank {
            Some(diagnostic_bank(spec, &case.case_id, &diagnosis))
        } else {
            spec.question_bank.clone()
        },
        gateway,
        run: &cfg.run,
    };

    // With the diagnosis as the yardstick, an empty one leaves nothing to score.
    let score0 = if fallback_bank && diagnosis.is_empty() {
        None
    } else {
        Some(
            scorer
                .score(&video_case(&case.prompt), &dir0)
                .map_err(OpenSetError::Scoring)?,
        )
    };
    let mut iterations = vec![TraceIteration {
        index: 0,
        prompt: case.prompt.clone(),
        questions: Vec::new(),
        template_version: None,
        video: Some(display_rel(&case.video, work)),
        score: score0,
        error: None,
    }];
    let mut generator_calls = 0;
    let mut best_score = score0;
    let mut prompt = case.prompt.clone();

    let stop_reason = if diagnosis.is_empty() {
        StopReason::EmptyDiagnosis
    } else if score0.is_some_and(|s| s >= cfg.target_score) {
        StopReason::ScoreImprovedTargetMet
    } else {
        let mut reason = StopReason::MaxIters;
        for i in 1..=cfg.max_iters {
            let refined = refine_prompt(&prompt, &diagnosis, gateway)?;
            let iter_dir = work.join(format!("iter-{i}"));
            let artifacts = iter_dir.join("artifacts");
            std::fs::create_dir_all(&artifacts).map_err(io_err(&artifacts))?;
            let out = iter_dir.join("video.mp4");

            generator_calls += 1;
            let candidate = generator
                .generate(&case.source_image, &refined.prompt, &out)
                .map_err(|e| format!("generator: {e}"))
                .and_then(|video| {
                    extractor
                        .extract(&video, &needs, &artifacts)
                        .map_err(|e| format!("extractor: {e}"))?;
                    let score = scorer
                        .score(&video_case(&refined.prompt), &artifacts)
                        .map_err(|e| format!("scorer: {e}"))?;
                    Ok((video, score))
                });
            let mut it = TraceIteration {
                index: i,
                prompt: refined.prompt.clone(),
                questions: std::mem::take(&mut diagnosis),
                template_version: refined.template_version,
                video: None,
                score: None,
                error: None,
            };
            let (video, score) = match candidate {
                Ok(c) => c,
                Err(e) => {
                    log::warn!("{}: iteration {i} failed: {e}", case.case_id);
                    it.error = Some(e);
                    iterations.push(it);
                    reason = StopReason::CandidateFailed;
                    break;
                }
            };
            it.video = Some(display_rel(&video, work));
            it.score = Some(score);
            iterations.push(it);

            if score >= cfg.target_score {
                reason = StopReason::ScoreImprovedTargetMet;
                break;
            }
            if score - best_score.unwrap_or(f64::NEG_INFINITY) < cfg.min_improvement {
                reason = StopReason::NoImprovement;
                break;
            }
            best_score = Some(score);
            prompt = refined.prompt;
            if i == cfg.max_iters {
                break;
            }
            let frames = frames_in(&artifacts).map_err(OpenSetError::Extraction)?;
            diagnosis = diagnose(&frames, &prompt, spec, gateway)?;
            if diagnosis.is_empty() {
                reason = StopReason::EmptyDiagnosis;
                break;
            }
        }
        reason
    };

    Ok(RefinementTrace {
        case_id: case.case_id.clone(),
        dimension_id: spec.dimension_id.clone(),
        scorer: spec.scorer,
        best_index: best_index(&iterations),
        iterations,
        stop_reason,
        generator_calls,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{StubBackend, StubRule, StubScript};

    fn frames() -> Vec<Frame> {
        vec![Frame::new("0.png", vec![1, 2, 3])]
    }

    fn spec() -> DimensionSpec {
        builtin_spec("semantic_consistency").unwrap()
    }

    #[test]
    fn diagnose_returns_list() {
        let gw = Gateway::stub(StubBackend::fixed(r#"["Does the character crouch before jumping?"]"#));
        let q = diagnose(&frames(), "a fox jumps", &spec(), &gw).unwrap();
        assert_eq!(q, vec!["Does the character crouch before jumping?"]);
        let gw = Gateway::stub(StubBackend::fixed("[]"));
        assert!(diagnose(&frames(), "a fox jumps", &spec(), &gw).unwrap().is_empty());
    }

    #[test]
    fn diagnose_rejects_prose_twice() {
        let backend = std::sync::Arc::new(StubBackend::fixed("I think it looks fine."));
        let gw = Gateway::stub_shared(backend.clone());
        assert!(matches!(
            diagnose(&frames(), "a fox jumps", &spec(), &gw),
            Err(OpenSetError::Gateway(GatewayError::Unparseable { .. }))
        ));
        assert_eq!(backend.calls(), 2);
    }

    #[test]
    fn diagnose_caps_and_dedupes() {
        let many: Vec<String> = (0..14).map(|i| format!("Q{}?", i % 12)).collect();
        let gw = Gateway::stub(StubBackend::fixed(serde_json::to_string(&many).unwrap()));
        let q = diagnose(&frames(), "p", &spec(), &gw).unwrap();
        assert_eq!(q.len(), MAX_DIAGNOSTIC_QUESTIONS);
        assert_eq!(q[0], "Q0?");
    }

    #[test]
    fn refine_identity_and_stub() {
        let backend = std::sync::Arc::new(StubBackend::echo());
        let gw = Gateway::stub_shared(backend.clone());
        let r = refine_prompt("A fox jumps.", &[], &gw).unwrap();
        assert_eq!(r.prompt, "A fox jumps.");
        assert_eq!(r.template_version, None);
        assert_eq!(backend.calls(), 0);

        let gw = Gateway::stub(StubBackend::script(StubScript {
            rules: vec![StubRule {
                case_id: None,
                contains: Some("Original prompt:".into()),
                reply: "A fox jumps. The fox crouches before jumping.".into(),
            }],
            default: None,
        }));
        let q = vec!["Does the fox crouch before jumping?".to_string()];
        let r = refine_prompt("A fox jumps.", &q, &gw).unwrap();
        assert_eq!(r.prompt, "A fox jumps. The fox crouches before jumping.");
        assert_eq!(r.template_version.as_deref(), Some(REFINER_TEMPLATE_VERSION));

        assert!(matches!(refine_prompt("  ", &q, &gw), Err(OpenSetError::Precondition(_))));
        let gw = Gateway::stub(StubBackend::fixed("   "));
        assert!(matches!(refine_prompt("A fox.", &q, &gw), Err(OpenSetError::EmptyCompletion)));
    }

    #[test]
    fn refiner_prompt_embeds_inputs() {
        let p = refiner_prompt("A fox jumps.", &["Q1?".into(), "Q2?".into()]);
        assert!(p.contains("A fox jumps.\n"));
        assert!(p.contains("- Q1?\n- Q2?\n"));
    }

    #[test]
    fn builtins_are_valid() {
        for id in builtin_dimension_ids() {
            builtin_spec(id).unwrap().validate().unwrap();
        }
        assert!(builtin_spec("nope").is_none());
    }

    #[test]
    fn best_index_earliest_max() {
        let it = |index, score| TraceIteration {
            index,
            prompt: String::new(),
            questions: vec![],
            template_version: None,
            video: None,
            score,
            error: None,
        };
        assert_eq!(best_index(&[it(0, Some(1.0)), it(1, Some(3.0)), it(2, Some(3.0))]), 1);
        assert_eq!(best_index(&[it(0, Some(5.0)), it(1, None)]), 0);
        assert_eq!(best_index(&[it(0, None)]), 0);
    }
}
