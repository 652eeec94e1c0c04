use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::manifest::ScorerKind;
use super::BenchError;
use crate::stats::normalize_min_max;

/// How dimension scores are formed; repeated in every report.
pub const AGGREGATION_NOTE: &str = "dimension score = uniform mean of per-case scores over scored cases \
(camera: accuracy, dynamic degree: fraction of dynamic videos); failed cases are excluded and tallied";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub case_id: String,
    pub dimension_id: String,
    pub status: CaseStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub detail: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionSummary {
    pub dimension_id: String,
    pub scorer: ScorerKind,
    /// `None` when no case of the dimension could be scored.
    pub score: Option<f64>,
    pub cases: usize,
    pub scored: usize,
    pub failed: usize,
    pub unparseable_answers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub model: String,
    pub dimensions: Vec<DimensionSummary>,
    pub cases: Vec<CaseRecord>,
}

impl ModelReport {
    pub fn score(&self, dimension_id: &str) -> Option<f64> {
        self.dimensions
            .iter()
            .find(|d| d.dimension_id == dimension_id)
            .and_then(|d| d.score)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub engine_version: String,
    pub judge_model: String,
    /// Digest of every judge response used in the run.
    pub cache_digest: String,
    /// Digest of manifest, model names, judge model and scorer settings.
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub suite: String,
    pub aggregation: String,
    pub models: Vec<ModelReport>,
    pub provenance: Provenance,
}

impl BenchmarkReport {
    pub fn new(suite: String, models: Vec<ModelReport>, provenance: Provenance) -> Self {
        Self {
            suite,
            aggregation: AGGREGATION_NOTE.to_string(),
            models,
            provenance,
        }
    }

    pub fn failed_cases(&self) -> impl Iterator<Item = (&str, &CaseRecord)> {
        self.models.iter().flat_map(|m| {
            m.cases
                .iter()
                .filter(|c| c.status == CaseStatus::Failed)
                .map(move |c| (m.model.as_str(), c))
        })
    }

    /// 0 iff no case failed.
    pub fn exit_code(&self) -> i32 {
        (self.failed_cases().next().is_some()) as i32
    }

    pub fn model(&self, name: &str) -> Option<&ModelReport> {
        self.models.iter().find(|m| m.model == name)
    }

    /// Dimension ids in first-seen order.
    pub fn dimension_ids(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = Vec::new();
        for m in &self.models {
            for d in &m.dimensions {
                if !ids.contains(&d.dimension_id.as_str()) {
                    ids.push(&d.dimension_id);
                }
            }
        }
        ids
    }

    /// Pretty JSON with sorted keys and a trailing newline.
    pub fn to_canonical_json(&self) -> Vec<u8> {
        let v = serde_json::to_value(self).expect("report serializes");
        let mut out = serde_json::to_vec_pretty(&v).expect("value serializes");
        out.push(b'\n');
        out
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, BenchError> {
        serde_json::from_slice(bytes).map_err(|e| BenchError::Schema(e.to_string()))
    }
}

/// Per-dimension min-max normalized scores, keyed by dimension then model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedScores {
    pub dimensions: BTreeMap<String, BTreeMap<String, f64>>,
}

/// Min-max normalizes every dimension across models; a constant column maps
/// to 0.5. Dimensions scored for fewer than two models are left out.
pub fn normalize_scores(report: &BenchmarkReport) -> Result<NormalizedScores, BenchError> {
    if report.models.len() < 2 {
        return Err(BenchError::TooFewModels(report.models.len()));
    }
    let mut dimensions = BTreeMap::new();
    for dim in report.dimension_ids() {
        let scored: Vec<(&str, f64)> = report
            .models
            .iter()
            .filter_map(|m| m.score(dim).map(|s| (m.model.as_str(), s)))
            .collect();
        if scored.len() < 2 {
            continue;
        }
        let values: Vec<f64> = scored.iter().map(|(_, s)| *s).collect();
        let norm = normalize_min_max(&values).map_err(|e| BenchError::Schema(e.to_string()))?;
        dimensions.insert(
            dim.to_string(),
            scored.iter().zip(norm).map(|((m, _), n)| (m.to_string(), n)).collect(),
        );
    }
    Ok(NormalizedScores { dimensions })
}

fn fmt_score(s: Option<f64>) -> String {
    s.map(|v| format!("{v:.2}")).unwrap_or_else(|| "n/a".into())
}

fn escape_md(s: &str) -> String {
    s.replace('|', "\\|").replace('\n', " ")
}

pub fn render_markdown(report: &BenchmarkReport) -> String {
    let dims = report.dimension_ids();
    let mut md = String::new();
    let _ = writeln!(md, "# {}\n", report.suite);
    if dims.is_empty() || report.models.is_empty() {
        md.push_str("No cases.\n");
    } else {
        let _ = writeln!(md, "| Model | {} |", dims.join(" | "));
        let _ = writeln!(md, "|---|{}", "---:|".repeat(dims.len()));
        for m in &report.models {
            let cells: Vec<String> = dims.iter().map(|d| fmt_score(m.score(d))).collect();
            let _ = writeln!(md, "| {} | {} |", escape_md(&m.model), cells.join(" | "));
        }
    }

    let failed: Vec<_> = report.failed_cases().collect();
    let unparseable: usize = report
        .models
        .iter()
        .flat_map(|m| &m.dimensions)
        .map(|d| d.unparseable_answers)
        .sum();
    let _ = writeln!(
        md,
        "\nCases: {}, failed: {}, unparseable judge answers: {}.",
        report.models.iter().map(|m| m.cases.len()).sum::<usize>(),
        failed.len(),
        unparseable
    );
    if !failed.is_empty() {
        md.push_str("\n## Failed cases\n\n| Model | Dimension | Case | Error |\n|---|---|---|---|\n");
        for (model, c) in failed {
            let _ = writeln!(
                md,
                "| {} | {} | {} | {} |",
                escape_md(model),
                escape_md(&c.dimension_id),
                escape_md(&c.case_id),
                escape_md(c.error.as_deref().unwrap_or(""))
            );
        }
    }
    let _ = writeln!(md, "\n## Notes\n\n- Aggregation: {}.", report.aggregation);
    let p = &report.provenance;
    let _ = writeln!(md, "- Engine version: {}", p.engine_version);
    let _ = writeln!(md, "- Judge model: {}", p.judge_model);
    let _ = writeln!(md, "- Judge cache digest: `{}`", p.cache_digest);
    let _ = writeln!(md, "- Config hash: `{}`", p.config_hash);
    md
}

/// `model,dimension,score,normalized`; `normalized` is empty when fewer than
/// two models have a score for the dimension.
pub fn render_radar_csv(report: &BenchmarkReport) -> String {
    let norm = normalize_scores(report).ok();
    let mut csv = String::from("model,dimension,score,normalized\n");
    for dim in report.dimension_ids() {
        for m in &report.models {
            let score = m.score(dim).map(|s| s.to_string()).unwrap_or_default();
            let n = norm
                .as_ref()
                .and_then(|n| n.dimensions.get(dim))
                .and_then(|d| d.get(&m.model))
                .map(|v| v.to_string())
                .unwrap_or_default();
            let _ = writeln!(csv, "{},{},{},{}", csv_field(&m.model), csv_field(dim), score, n);
        }
    }
    csv
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Writes `report.json`, `report.md` and `radar-data.csv` into `out_dir`.
pub fn render_report(report: &BenchmarkReport, out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>, BenchError> {
    let out_dir = out_dir.as_ref();
    let io = |path: &Path| {
        let path = path.display().to_string();
        move |source| BenchError::Io { path, source }
    };
    std::fs::create_dir_all(out_dir).map_err(io(out_dir))?;
    let files = [
        ("report.json", report.to_canonical_json()),
        ("report.md", render_markdown(report).into_bytes()),
        ("radar-data.csv", render_radar_csv(report).into_bytes()),
    ];
    let mut written = Vec::new();
    for (name, bytes) in files {
        let path = out_dir.join(name);
        std::fs::write(&path, bytes).map_err(io(&path))?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(name: &str, scores: &[(&str, Option<f64>)]) -> ModelReport {
        ModelReport {
            model: name.into(),
            dimensions: scores
                .iter()
                .map(|(d, s)| DimensionSummary {
                    dimension_id: d.to_string(),
                    scorer: ScorerKind::Quality,
                    score: *s,
                    cases: 1,
                    scored: s.is_some() as usize,
                    failed: s.is_none() as usize,
                    unparseable_answers: 0,
                })
                .collect(),
            cases: scores
                .iter()
                .map(|(d, s)| CaseRecord {
                    case_id: format!("{name}-{d}"),
                    dimension_id: d.to_string(),
                    status: if s.is_some() { CaseStatus::Ok } else { CaseStatus::Failed },
                    score: *s,
                    error: s.is_none().then(|| "missing artifact video.quality.abtf".into()),
                    detail: Value::Null,
                })
                .collect(),
        }
    }

    fn report(models: Vec<ModelReport>) -> BenchmarkReport {
        BenchmarkReport::new(
            "t".into(),
            models,
            Provenance {
                engine_version: "0".into(),
                judge_model: "stub".into(),
                cache_digest: "d".into(),
                config_hash: "h".into(),
            },
        )
    }

    fn norm_of(scores: &[f64]) -> Vec<f64> {
        let models = scores
            .iter()
            .enumerate()
            .map(|(i, s)| model(&format!("m{i}"), &[("x", Some(*s))]))
            .collect();
        let n = normalize_scores(&report(models)).unwrap();
        n.dimensions["x"].values().copied().collect()
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(norm_of(&[50.0, 100.0]), vec![0.0, 1.0]);
        assert_eq!(norm_of(&[70.0, 70.0, 70.0]), vec![0.5, 0.5, 0.5]);
        assert_eq!(norm_of(&[0.0, 50.0, 100.0]), vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn normalization_needs_two_models() {
        let r = report(vec![model("a", &[("x", Some(1.0))])]);
        assert!(matches!(normalize_scores(&r), Err(BenchError::TooFewModels(1))));
    }

    #[test]
    fn radar_min_row_is_zero() {
        let r = report(vec![
            model("a", &[("x", Some(10.0)), ("y", Some(3.0))]),
            model("b", &[("x", Some(30.0)), ("y", Some(9.0))]),
            model("c", &[("x", Some(20.0)), ("y", Some(6.0))]),
        ]);
        let csv = render_radar_csv(&r);
        let mut mins: BTreeMap<String, f64> = BTreeMap::new();
        for line in csv.lines().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            let v: f64 = f[3].parse().unwrap();
            let e = mins.entry(f[1].to_string()).or_insert(f64::INFINITY);
            *e = e.min(v);
        }
        assert_eq!(mins.len(), 2);
        assert!(mins.values().all(|m| *m == 0.0));
    }

    #[test]
    fn failure_section_and_files() {
        let dir = tempfile::tempdir().unwrap();
        let r = report(vec![model("a", &[("x", Some(1.0)), ("y", None)])]);
        assert_eq!(r.exit_code(), 1);
        let files = render_report(&r, dir.path()).unwrap();
        assert_eq!(files.len(), 3);
        let md = std::fs::read_to_string(dir.path().join("report.md")).unwrap();
        assert!(md.contains("## Failed cases"));
        assert!(md.contains("missing artifact video.quality.abtf"));
        let again = report(vec![model("a", &[("x", Some(1.0)), ("y", None)])]);
        assert_eq!(r.to_canonical_json(), again.to_canonical_json());
        let back = BenchmarkReport::from_json(&r.to_canonical_json()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn empty_report() {
        let r = report(vec![]);
        assert_eq!(r.exit_code(), 0);
        assert!(render_markdown(&r).contains("No cases."));
    }
}
