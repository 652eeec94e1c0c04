//! Human-alignment statistics and cross-model normalization.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("{0}")]
    InvalidInput(String),
    #[error("statistic undefined: {0}")]
    Undefined(&'static str),
}

fn invalid(msg: impl Into<String>) -> StatsError {
    StatsError::InvalidInput(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Win,
    Loss,
    Tie,
}

impl Outcome {
    pub fn value(self) -> f64 {
        match self {
            Outcome::Win => 1.0,
            Outcome::Loss => 0.0,
            Outcome::Tie => 0.5,
        }
    }

    pub fn mirrored(self) -> Self {
        match self {
            Outcome::Win => Outcome::Loss,
            Outcome::Loss => Outcome::Win,
            Outcome::Tie => Outcome::Tie,
        }
    }
}

/// Mean of win = 1, tie = 0.5, loss = 0.
pub fn win_rate(outcomes: &[Outcome]) -> Result<f64, StatsError> {
    if outcomes.is_empty() {
        return Err(invalid("win rate of an empty outcome list"));
    }
    // Sum in half-points so the mean is a single rounding of an exact ratio.
    let halves: u64 = outcomes
        .iter()
        .map(|o| match o {
            Outcome::Win => 2,
            Outcome::Tie => 1,
            Outcome::Loss => 0,
        })
        .sum();
    Ok(halves as f64 / (2 * outcomes.len()) as f64)
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::Undefined("zero rank variance"));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's ρ: Pearson correlation of average ranks.
pub fn spearman_rho(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    if x.len() != y.len() {
        return Err(invalid(format!("length mismatch: {} vs {}", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(invalid("spearman needs at least 2 observations"));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(invalid("non-finite observation"));
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Cohen's κ between two raters over the same items.
pub fn cohen_kappa<T: Ord>(a: &[T], b: &[T]) -> Result<f64, StatsError> {
    if a.len() != b.len() {
        return Err(invalid(format!("length mismatch: {} vs {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(invalid("kappa needs at least one item"));
    }
    let n = a.len() as f64;
    let observed = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / n;
    let mut ma: BTreeMap<&T, usize> = BTreeMap::new();
    let mut mb: BTreeMap<&T, usize> = BTreeMap::new();
    for (x, y) in a.iter().zip(b) {
        *ma.entry(x).or_default() += 1;
        *mb.entry(y).or_default() += 1;
    }
    let expected: f64 = ma
        .iter()
        .map(|(k, &ca)| ca as f64 * mb.get(k).copied().unwrap_or(0) as f64)
        .sum::<f64>()
        / (n * n);
    if expected >= 1.0 {
        return Err(StatsError::Undefined("chance agreement is 1"));
    }
    Ok((observed - expected) / (1.0 - expected))
}

/// Min-max normalization to `[0, 1]`; a constant column maps to 0.5.
pub fn normalize_min_max(scores: &[f64]) -> Result<Vec<f64>, StatsError> {
    if scores.len() < 2 {
        return Err(invalid("normalization needs at least 2 models"));
    }
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() || !hi.is_finite() {
        return Err(invalid("non-finite score"));
    }
    if hi == lo {
        return Ok(vec![0.5; scores.len()]);
    }
    Ok(scores.iter().map(|s| (s - lo) / (hi - lo)).collect())
}

/// Per-dimension input for the alignment analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentDimensionInput {
    pub dimension_id: String,
    /// Benchmark score per model.
    pub bench_scores: BTreeMap<String, f64>,
    /// Pairwise human outcomes per model (from that model's point of view).
    pub human_outcomes: BTreeMap<String, Vec<Outcome>>,
    /// Labels from two annotators over the same comparisons, for κ.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotator_labels: Option<(Vec<String>, Vec<String>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentInput {
    pub dimensions: Vec<AlignmentDimensionInput>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelAlignment {
    pub model: String,
    pub bench_score: f64,
    /// Win rate implied by pairwise comparison of bench scores.
    pub bench_win_rate: f64,
    pub human_win_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionAlignment {
    pub dimension_id: String,
    pub models: Vec<ModelAlignment>,
    /// `None` when undefined (e.g. all models tied).
    pub spearman_rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cohen_kappa: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentRecord {
    pub dimensions: Vec<DimensionAlignment>,
    /// ρ over all (dimension, model) points pooled.
    pub overall_rho: Option<f64>,
}

fn bench_win_rates(scores: &BTreeMap<String, f64>) -> BTreeMap<String, f64> {
    scores
        .iter()
        .map(|(m, &s)| {
            let outcomes: Vec<Outcome> = scores
                .iter()
                .filter(|(o, _)| *o != m)
                .map(|(_, &t)| match s.total_cmp(&t) {
                    std::cmp::Ordering::Greater => Outcome::Win,
                    std::cmp::Ordering::Less => Outcome::Loss,
                    std::cmp::Ordering::Equal => Outcome::Tie,
                })
                .collect();
            (m.clone(), win_rate(&outcomes).unwrap_or(0.5))
        })
        .collect()
}

pub fn alignment(input: &AlignmentInput) -> Result<AlignmentRecord, StatsError> {
    let mut dims = Vec::new();
    let (mut all_bench, mut all_human) = (Vec::new(), Vec::new());
    for d in &input.dimensions {
        let bench_models: BTreeSet<_> = d.bench_scores.keys().collect();
        let human_models: BTreeSet<_> = d.human_outcomes.keys().collect();
        if bench_models != human_models {
            return Err(invalid(format!(
                "dimension {}: bench and human model sets differ",
                d.dimension_id
            )));
        }
        let bench_wr = bench_win_rates(&d.bench_scores);
        let mut models = Vec::new();
        for (m, &score) in &d.bench_scores {
            let human = win_rate(&d.human_outcomes[m])
                .map_err(|_| invalid(format!("dimension {}: no human outcomes for {m}", d.dimension_id)))?;
            models.push(ModelAlignment {
                model: m.clone(),
                bench_score: score,
                bench_win_rate: bench_wr[m],
                human_win_rate: human,
            });
        }
        let bench: Vec<f64> = models.iter().map(|m| m.bench_score).collect();
        let human: Vec<f64> = models.iter().map(|m| m.human_win_rate).collect();
        all_bench.extend(models.iter().map(|m| m.bench_win_rate));
        all_human.extend(human.iter().copied());
        let kappa = match &d.annotator_labels {
            Some((a, b)) => cohen_kappa(a, b).ok(),
            None => None,
        };
        dims.push(DimensionAlignment {
            dimension_id: d.dimension_id.clone(),
            spearman_rho: spearman_rho(&bench, &human).ok(),
            cohen_kappa: kappa,
            models,
        });
    }
    Ok(AlignmentRecord {
        dimensions: dims,
        overall_rho: spearman_rho(&all_bench, &all_human).ok(),
    })
}
