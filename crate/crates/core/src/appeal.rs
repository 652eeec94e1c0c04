//! Appeal-side metrics: dynamic degree, diversity, novelty, semantic
//! extension and the perceptual-quality proxy for solid drawing.

use serde::{Deserialize, Serialize};

use crate::artifacts::{EmbeddingSet, FlowSequence, QualitySeries};
use crate::error::{invalid, MetricError};

/// Per-pair motion threshold at 256 px; scales with `min(H, W) / 256`.
pub const MOTION_THRESHOLD_AT_256: f64 = 6.0;
pub const DEFAULT_DYNAMIC_FRACTION: f64 = 0.25;
pub const DIVERSITY_SAMPLES: usize = 5;
pub const DEFAULT_ACTION_CAP: u32 = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicDegreeResult {
    pub per_pair_scores: Vec<f64>,
    pub moving_flags: Vec<bool>,
    pub threshold_used: f64,
    pub is_dynamic: bool,
    pub moving_fraction: f64,
}

/// Mean magnitude of the top 5% (rounded up) largest flow vectors in one
/// `[H, W, 2]` field.
pub fn pair_motion_score(field: &[f32], height: usize, width: usize) -> Result<f64, MetricError> {
    let n = height * width;
    if n < 20 {
        return Err(invalid(format!("flow field {height}x{width} is too small for a top-5% mean")));
    }
    if field.len() != 2 * n {
        return Err(invalid(format!("flow field has {} values, expected {}", field.len(), 2 * n)));
    }
    let mut mags: Vec<f64> = field
        .chunks_exact(2)
        .map(|v| (v[0] as f64).hypot(v[1] as f64))
        .collect();
    // Integer form of ceil(0.05·n) avoids float rounding at exact multiples.
    let k = n.div_ceil(20);
    let pivot = n - k;
    mags.select_nth_unstable_by(pivot, |a, b| a.total_cmp(b));
    Ok(mags[pivot..].iter().sum::<f64>() / k as f64)
}

/// `6.0 · min(H, W) / 256`.
pub fn motion_threshold(height: usize, width: usize) -> f64 {
    MOTION_THRESHOLD_AT_256 * height.min(width) as f64 / 256.0
}

/// Classifies each sampled frame pair as moving and the video as dynamic when
/// at least `dynamic_fraction` of pairs move. `(height, width)` is the video
/// size the threshold refers to.
pub fn dynamic_degree(
    flows: &FlowSequence,
    height: usize,
    width: usize,
    dynamic_fraction: f64,
) -> Result<DynamicDegreeResult, MetricError> {
    if flows.pairs == 0 {
        return Err(invalid("empty flow sequence"));
    }
    let threshold = motion_threshold(height, width);
    let scores = (0..flows.pairs)
        .map(|p| pair_motion_score(flows.pair(p), flows.height, flows.width))
        .collect::<Result<Vec<_>, _>>()?;
    let flags: Vec<bool> = scores.iter().map(|&s| s > threshold).collect();
    let moving = flags.iter().filter(|f| **f).count();
    let fraction = moving as f64 / flags.len() as f64;
    Ok(DynamicDegreeResult {
        per_pair_scores: scores,
        moving_flags: flags,
        threshold_used: threshold,
        is_dynamic: fraction >= dynamic_fraction,
        moving_fraction: fraction,
    })
}

/// Cosine similarity clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64, MetricError> {
    if a.len() != b.len() {
        return Err(invalid(format!("dimension mismatch: {} vs {}", a.len(), b.len())));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(invalid("cosine similarity of a zero vector"));
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Mean pairwise cosine distance over exactly five pooled feature vectors,
/// on `[0, 100]`.
pub fn diversity_score(pooled: &[Vec<f64>]) -> Result<f64, MetricError> {
    if pooled.len() != DIVERSITY_SAMPLES {
        return Err(invalid(format!(
            "diversity needs exactly {DIVERSITY_SAMPLES} samples, got {}",
            pooled.len()
        )));
    }
    let mut total = 0.0;
    let mut pairs = 0;
    for i in 0..pooled.len() {
        for j in i + 1..pooled.len() {
            total += 1.0 - cosine_similarity(&pooled[i], &pooled[j])?;
            pairs += 1;
        }
    }
    Ok((100.0 * total / pairs as f64).min(100.0))
}

/// `100 · (1 − μ)` with μ the mean per-segment cosine similarity between a
/// generated clip and its reference, clamped to `[0, 1]`.
pub fn novelty_score(generated: &EmbeddingSet, reference: &EmbeddingSet) -> Result<f64, MetricError> {
    if generated.vectors.len() != reference.vectors.len() {
        return Err(invalid(format!(
            "segment count mismatch: {} generated vs {} reference",
            generated.vectors.len(),
            reference.vectors.len()
        )));
    }
    let sims = generated
        .vectors
        .iter()
        .zip(&reference.vectors)
        .map(|(g, r)| cosine_similarity(g, r))
        .collect::<Result<Vec<_>, _>>()?;
    let mu = (sims.iter().sum::<f64>() / sims.len() as f64).clamp(0.0, 1.0);
    Ok(100.0 * (1.0 - mu))
}

/// The five binary semantic-extension aspects (new actions are counted).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtensionAspects {
    pub new_characters: bool,
    pub new_objects: bool,
    pub camera_editing: bool,
    pub scene_expansion: bool,
    pub environment_change: bool,
}

impl ExtensionAspects {
    pub fn from_flags(flags: [bool; 5]) -> Self {
        Self {
            new_characters: flags[0],
            new_objects: flags[1],
            camera_editing: flags[2],
            scene_expansion: flags[3],
            environment_change: flags[4],
        }
    }

    pub fn count(&self) -> u32 {
        [
            self.new_characters,
            self.new_objects,
            self.camera_editing,
            self.scene_expansion,
            self.environment_change,
        ]
        .iter()
        .filter(|b| **b)
        .count() as u32
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticExtensionTally {
    pub new_action_count: u32,
    #[serde(flatten)]
    pub aspects: ExtensionAspects,
    pub action_cap: u32,
    pub raw_points: u32,
    pub normalized: f64,
}

/// `raw = min(actions, cap) + Σ aspects`, normalized by `cap + 5` onto `[0, 100]`.
pub fn semantic_extension(aspects: ExtensionAspects, action_count: i64, action_cap: u32) -> Result<SemanticExtensionTally, MetricError> {
    if action_count < 0 {
        return Err(invalid(format!("negative action count {action_count}")));
    }
    let actions = u32::try_from(action_count).unwrap_or(u32::MAX);
    let raw = actions.min(action_cap) + aspects.count();
    Ok(SemanticExtensionTally {
        new_action_count: actions,
        aspects,
        action_cap,
        raw_points: raw,
        normalized: 100.0 * raw as f64 / (action_cap + 5) as f64,
    })
}

/// Mean per-frame quality on the producing model's native scale.
pub fn perceptual_quality(series: &QualitySeries) -> Result<f64, MetricError> {
    if series.scores.is_empty() {
        return Err(invalid("empty quality series"));
    }
    if let Some(i) = series.scores.iter().position(|s| !s.is_finite()) {
        return Err(invalid(format!("non-finite quality score at frame {i}")));
    }
    Ok(series.scores.iter().sum::<f64>() / series.scores.len() as f64)
}
