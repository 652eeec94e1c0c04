use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use animetric_core::artifacts::{ArtifactKind, QualitySeries};
use animetric_core::gateway::{Gateway, StubBackend, StubRule, StubScript};
use animetric_core::openset::{
    builtin_spec, refine_iterate, ExtractorHook, Generator, LoopConfig, OpenSetCase, OpenSetError, RefinementTrace,
    StopReason,
};
use animetric_core::tensor::save_tensor;

struct FailingGenerator;

impl Generator for FailingGenerator {
    fn generate(&self, _: &Path, _: &str, _: &Path) -> Result<PathBuf, String> {
        Err("generator exited with status 3".into())
    }
}

struct EmptyVideo;

impl Generator for EmptyVideo {
    fn generate(&self, _: &Path, _: &str, out: &Path) -> Result<PathBuf, String> {
        fs::write(out, "").map_err(|e| e.to_string())?;
        Ok(out.to_path_buf())
    }
}

/// Writes frames but no quality series.
struct ForgetfulExtractor;

impl ExtractorHook for ForgetfulExtractor {
    fn extract(&self, _: &Path, _: &BTreeSet<ArtifactKind>, out: &Path) -> Result<(), String> {
        fs::create_dir_all(out.join("frames")).map_err(|e| e.to_string())?;
        fs::write(out.join("frames/frame-00.png"), b"x").map_err(|e| e.to_string())
    }
}

struct BrokenExtractor;

impl ExtractorHook for BrokenExtractor {
    fn extract(&self, _: &Path, _: &BTreeSet<ArtifactKind>, _: &Path) -> Result<(), String> {
        Err("decoder crashed".into())
    }
}

fn setup(work: &Path) -> OpenSetCase {
    let dir = work.join("original");
    fs::create_dir_all(dir.join("frames")).unwrap();
    fs::write(dir.join("frames/frame-00.png"), b"still").unwrap();
    let q = QualitySeries { scores: vec![50.0, 60.0] };
    save_tensor(dir.join("video.quality.abtf"), &q.to_tensor().unwrap()).unwrap();
    OpenSetCase {
        case_id: "c".into(),
        source_image: work.join("in.png"),
        prompt: "A cat yawns.".into(),
        video: work.join("orig.mp4"),
        artifacts_dir: Some(dir),
        expected_label: None,
    }
}

fn judge() -> Gateway {
    Gateway::stub(StubBackend::script(StubScript {
        rules: vec![
            StubRule { case_id: None, contains: Some("List what is missing".into()), reply: r#"["Is it sharp?"]"#.into() },
            StubRule { case_id: None, contains: Some("Original prompt:".into()), reply: "A sharp cat yawns.".into() },
        ],
        default: None,
    }))
}

fn run(gen: &dyn Generator, ext: &dyn ExtractorHook) -> (tempfile::TempDir, RefinementTrace) {
    let tmp = tempfile::tempdir().unwrap();
    let case = setup(tmp.path());
    let cfg = LoopConfig::new(tmp.path().join("work"));
    let trace = refine_iterate(&case, &builtin_spec("solid_drawing").unwrap(), gen, ext, &judge(), &cfg).unwrap();
    (tmp, trace)
}

#[test]
fn generator_failure_stops_the_loop() {
    let (_tmp, trace) = run(&FailingGenerator, &ForgetfulExtractor);
    assert_eq!(trace.stop_reason, StopReason::CandidateFailed);
    assert_eq!(trace.best_index, 0);
    assert_eq!(trace.best().score, Some(55.0));
    let last = trace.iterations.last().unwrap();
    assert_eq!(last.index, 1);
    assert!(last.score.is_none());
    assert!(last.error.as_deref().unwrap().contains("status 3"));
}

#[test]
fn extractor_failure_stops_the_loop() {
    let (_tmp, trace) = run(&EmptyVideo, &BrokenExtractor);
    assert_eq!(trace.stop_reason, StopReason::CandidateFailed);
    assert!(trace.iterations[1].error.as_deref().unwrap().contains("decoder crashed"));
    assert_eq!(trace.generator_calls, 1);
}

#[test]
fn missing_candidate_artifact_is_a_candidate_failure() {
    let (_tmp, trace) = run(&EmptyVideo, &ForgetfulExtractor);
    assert_eq!(trace.stop_reason, StopReason::CandidateFailed);
    assert!(trace.iterations[1].error.as_deref().unwrap().contains("missing artifact"));
}

#[test]
fn trace_serializes_with_snake_case_reasons() {
    let (tmp, trace) = run(&FailingGenerator, &ForgetfulExtractor);
    let path = tmp.path().join("trace.json");
    trace.save(&path).unwrap();
    let v: serde_json::Value = serde_json::from_slice(&fs::read(&path).unwrap()).unwrap();
    assert_eq!(v["stop_reason"], "candidate_failed");
    assert_eq!(v["scorer"], "quality");
    let back: RefinementTrace = serde_json::from_value(v).unwrap();
    assert_eq!(back, trace);
}

#[test]
fn preconditions_are_checked() {
    let tmp = tempfile::tempdir().unwrap();
    let mut case = setup(tmp.path());
    let spec = builtin_spec("solid_drawing").unwrap();
    let mut cfg = LoopConfig::new(tmp.path().join("work"));
    cfg.max_iters = 0;
    let err = refine_iterate(&case, &spec, &EmptyVideo, &ForgetfulExtractor, &judge(), &cfg).unwrap_err();
    assert!(matches!(err, OpenSetError::Precondition(_)));

    cfg.max_iters = 2;
    case.prompt = "   ".into();
    let err = refine_iterate(&case, &spec, &EmptyVideo, &ForgetfulExtractor, &judge(), &cfg).unwrap_err();
    assert!(matches!(err, OpenSetError::Precondition(_)));
}

#[test]
fn unknown_dimension_has_no_builtin_spec() {
    assert!(builtin_spec("not_a_dimension").is_none());
}
