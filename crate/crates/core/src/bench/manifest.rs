use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::BenchError;
use crate::artifacts::{ArtifactKind, VideoCase};

/// Which scorer a dimension is routed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ScorerKind {
    #[serde(rename = "qa")]
    Qa,
    #[serde(rename = "siso")]
    Siso,
    #[serde(rename = "squash")]
    Squash,
    #[serde(rename = "dyndeg")]
    DynamicDegree,
    #[serde(rename = "diversity")]
    Diversity,
    #[serde(rename = "novelty")]
    Novelty,
    #[serde(rename = "semext")]
    SemanticExtension,
    #[serde(rename = "camera")]
    Camera,
    #[serde(rename = "quality")]
    Quality,
    #[serde(rename = "rationality-qa")]
    RationalityQa,
}

impl ScorerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScorerKind::Qa => "qa",
            ScorerKind::Siso => "siso",
            ScorerKind::Squash => "squash",
            ScorerKind::DynamicDegree => "dyndeg",
            ScorerKind::Diversity => "diversity",
            ScorerKind::Novelty => "novelty",
            ScorerKind::SemanticExtension => "semext",
            ScorerKind::Camera => "camera",
            ScorerKind::Quality => "quality",
            ScorerKind::RationalityQa => "rationality-qa",
        }
    }

    pub fn required_artifacts(self) -> &'static [ArtifactKind] {
        use ArtifactKind::*;
        match self {
            ScorerKind::Qa | ScorerKind::RationalityQa | ScorerKind::SemanticExtension => &[Frames],
            ScorerKind::Siso | ScorerKind::Camera => &[Tracks],
            ScorerKind::Squash => &[Masks, Frames],
            ScorerKind::DynamicDegree => &[Flow],
            ScorerKind::Diversity | ScorerKind::Novelty => &[Embeddings],
            ScorerKind::Quality => &[Quality],
        }
    }

    /// Generated videos each case stands for.
    pub fn videos_per_case(self) -> usize {
        match self {
            ScorerKind::Diversity => crate::artifacts::layout::DIVERSITY_SAMPLES,
            _ => 1,
        }
    }

    pub fn uses_question_bank(self) -> bool {
        matches!(self, ScorerKind::Qa | ScorerKind::RationalityQa)
    }
}

/// Videos per model per dimension in the reference close-set suite.
pub const REFERENCE_COUNTS: &[(&str, usize)] = &[
    ("appearance", 30),
    ("behavior", 30),
    ("personality", 30),
    ("anticipation", 30),
    ("follow_through", 30),
    ("siso", 30),
    ("squash_stretch", 30),
    ("distinctive_content", 30),
    ("solid_drawing", 60),
    ("novelty", 30),
    ("diversity", 50),
    ("dynamic_degree", 60),
    ("semantic_extension", 30),
    ("semantic_object", 30),
    ("semantic_action", 30),
    ("semantic_color", 30),
    ("semantic_scene", 30),
    ("motion_rationality", 30),
    ("camera_motion", 70),
];

/// Unique videos each model generates for the reference suite.
pub const REFERENCE_TOTAL_VIDEOS: usize = 360;

pub fn reference_count(dimension_id: &str) -> Option<usize> {
    REFERENCE_COUNTS
        .iter()
        .find(|(d, _)| *d == dimension_id)
        .map(|(_, n)| *n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimensionEntry {
    pub dimension_id: String,
    pub scorer: ScorerKind,
    /// Expected videos for strict mode; defaults to the reference table.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_count: Option<usize>,
    /// Question bank path, relative to the manifest.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question_bank: Option<PathBuf>,
    /// Description of the dimension given to the judge.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<String>,
    /// Overrides the default rebound question of the squash scorer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rebound_question: Option<String>,
    #[serde(default)]
    pub cases: Vec<VideoCase>,
}

impl DimensionEntry {
    pub fn video_count(&self) -> usize {
        self.cases.len() * self.scorer.videos_per_case()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub suite: String,
    #[serde(default)]
    pub dimensions: Vec<DimensionEntry>,
    /// Directory relative paths resolve against; not serialized.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn from_json(text: &str, base_dir: impl Into<PathBuf>, strict_counts: bool) -> Result<Self, BenchError> {
        let mut m: Manifest = serde_json::from_str(text).map_err(|e| BenchError::Schema(e.to_string()))?;
        m.base_dir = base_dir.into();
        m.normalize()?;
        if strict_counts {
            m.check_counts()?;
        }
        Ok(m)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Fills case dimension ids and artifact needs, and checks consistency.
    fn normalize(&mut self) -> Result<(), BenchError> {
        let mut seen_dims = HashSet::new();
        let mut seen_cases = HashSet::new();
        for dim in &mut self.dimensions {
            if !seen_dims.insert(dim.dimension_id.clone()) {
                return Err(BenchError::Schema(format!("duplicate dimension_id {}", dim.dimension_id)));
            }
            let required = dim.scorer.required_artifacts();
            for case in &mut dim.cases {
                if case.case_id.is_empty() {
                    return Err(BenchError::Schema(format!("empty case_id in {}", dim.dimension_id)));
                }
                if !seen_cases.insert(case.case_id.clone()) {
                    return Err(BenchError::DuplicateCase(case.case_id.clone()));
                }
                if case.dimension_id.is_empty() {
                    case.dimension_id = dim.dimension_id.clone();
                } else if case.dimension_id != dim.dimension_id {
                    return Err(BenchError::Schema(format!(
                        "case {} declares dimension {} inside {}",
                        case.case_id, case.dimension_id, dim.dimension_id
                    )));
                }
                if case.artifact_needs.is_empty() {
                    case.artifact_needs.extend(required.iter().copied());
                } else if let Some(missing) = required.iter().find(|k| !case.artifact_needs.contains(k)) {
                    return Err(BenchError::Schema(format!(
                        "case {} lacks artifact need {:?} required by scorer {}",
                        case.case_id,
                        missing,
                        dim.scorer.as_str()
                    )));
                }
                if dim.scorer == ScorerKind::Camera && case.expected_label.is_none() {
                    return Err(BenchError::Schema(format!(
                        "camera case {} has no expected_label",
                        case.case_id
                    )));
                }
            }
            if dim.scorer.uses_question_bank()
                && dim.question_bank.is_none()
                && dim.cases.iter().any(|c| c.question_bank_ref.is_none())
            {
                return Err(BenchError::Schema(format!(
                    "dimension {} uses scorer {} but has no question_bank",
                    dim.dimension_id,
                    dim.scorer.as_str()
                )));
            }
        }
        Ok(())
    }

    fn check_counts(&self) -> Result<(), BenchError> {
        for dim in &self.dimensions {
            let expected = dim.expected_count.or_else(|| reference_count(&dim.dimension_id));
            if let Some(expected) = expected {
                let found = dim.video_count();
                if found != expected {
                    return Err(BenchError::CountMismatch {
                        dimension_id: dim.dimension_id.clone(),
                        expected,
                        found,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn case_count(&self) -> usize {
        self.dimensions.iter().map(|d| d.cases.len()).sum()
    }

    /// Canonical JSON of the manifest content (without `base_dir`).
    pub fn canonical_json(&self) -> Vec<u8> {
        let v = serde_json::to_value(self).expect("manifest serializes");
        serde_json::to_vec(&v).expect("value serializes")
    }
}

pub fn load_manifest(path: impl AsRef<Path>, strict_counts: bool) -> Result<Manifest, BenchError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| BenchError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Manifest::from_json(&text, base, strict_counts)
}

/// Videos per dimension, for reporting against the reference table.
pub fn video_counts(m: &Manifest) -> BTreeMap<String, usize> {
    m.dimensions
        .iter()
        .map(|d| (d.dimension_id.clone(), d.video_count()))
        .collect()
}
