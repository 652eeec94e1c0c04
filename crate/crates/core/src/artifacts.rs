//! Per-video intermediate signals produced by the extractor, and the case
//! descriptions that say which of them a scorer needs.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::tensor::{load_tensor, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{what}: {reason}")]
    Invalid { what: &'static str, reason: String },
    #[error("mask value {value} at frame {frame}, row {row}, col {col} is not 0 or 1")]
    MaskValue {
        frame: usize,
        row: usize,
        col: usize,
        value: u8,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

fn invalid(what: &'static str, reason: impl Into<String>) -> ArtifactError {
    ArtifactError::Invalid {
        what,
        reason: reason.into(),
    }
}

/// Binary object masks, one per frame, stored dense as `[T, H, W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSequence {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
    pub frame_rate: Option<f64>,
}

impl MaskSequence {
    pub fn new(frames: usize, height: usize, width: usize, data: Vec<u8>) -> Result<Self, ArtifactError> {
        if data.len() != frames * height * width {
            return Err(invalid(
                "mask sequence",
                format!(
                    "{} values for shape [{frames}, {height}, {width}]",
                    data.len()
                ),
            ));
        }
        Ok(Self {
            frames,
            height,
            width,
            data,
            frame_rate: None,
        })
    }

    pub fn frame(&self, t: usize) -> &[u8] {
        let n = self.height * self.width;
        &self.data[t * n..(t + 1) * n]
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self, ArtifactError> {
        let shape = t.expect_rank(3)?.to_vec();
        let mut m = Self::new(shape[0], shape[1], shape[2], t.as_u8()?.to_vec())?;
        m.frame_rate = t.header.attr_f64("frame_rate");
        validate_mask_sequence(&m)?;
        Ok(m)
    }

    pub fn to_tensor(&self) -> Result<Tensor, ArtifactError> {
        let mut t = Tensor::from_u8(vec![self.frames, self.height, self.width], self.data.clone())?;
        if let Some(fps) = self.frame_rate {
            t = t.with_attr("frame_rate", fps);
        }
        Ok(t)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ArtifactError> {
        Self::from_tensor(&load_tensor(path)?)
    }
}

/// Checks the mask invariants, reporting the first offending pixel.
pub fn validate_mask_sequence(m: &MaskSequence) -> Result<(), ArtifactError> {
    if m.frames < 2 {
        return Err(invalid(
            "mask sequence",
            format!("needs at least 2 frames, found {}", m.frames),
        ));
    }
    if m.height == 0 || m.width == 0 {
        return Err(invalid("mask sequence", "frame size must be non-zero"));
    }
    if m.data.len() != m.frames * m.height * m.width {
        return Err(invalid("mask sequence", "data length does not match shape"));
    }
    if let Some(i) = m.data.iter().position(|&v| v > 1) {
        let per_frame = m.height * m.width;
        let within = i % per_frame;
        return Err(ArtifactError::MaskValue {
            frame: i / per_frame,
            row: within / m.width,
            col: within % m.width,
            value: m.data[i],
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrackRole {
    Foreground,
    Background,
    EdgeTop,
    EdgeBottom,
    EdgeLeft,
    EdgeRight,
}

/// Sidecar `.roles.json` for a tracks file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolesFile {
    /// `[height, width]` of the tracked video.
    pub image_size: [usize; 2],
    pub roles: Vec<TrackRole>,
}

/// Point tracks `[T, N, 2]` in pixel coordinates with per-point visibility.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackSet {
    pub frames: usize,
    pub points: usize,
    /// Row-major `[T][N]` of `(x, y)`.
    pub positions: Vec<[f32; 2]>,
    /// Row-major `[T][N]`.
    pub visibility: Vec<bool>,
    pub roles: Vec<TrackRole>,
    pub height: usize,
    pub width: usize,
}

impl TrackSet {
    /// Builds a track set with every point visible in every frame.
    pub fn new(
        frames: usize,
        positions: Vec<[f32; 2]>,
        roles: Vec<TrackRole>,
        image_size: (usize, usize),
    ) -> Result<Self, ArtifactError> {
        let visibility = vec![true; positions.len()];
        Self::with_visibility(frames, positions, visibility, roles, image_size)
    }

    pub fn with_visibility(
        frames: usize,
        positions: Vec<[f32; 2]>,
        visibility: Vec<bool>,
        roles: Vec<TrackRole>,
        (height, width): (usize, usize),
    ) -> Result<Self, ArtifactError> {
        let points = roles.len();
        if frames < 2 {
            return Err(invalid("track set", format!("needs at least 2 frames, found {frames}")));
        }
        if points == 0 {
            return Err(invalid("track set", "needs at least one point"));
        }
        if positions.len() != frames * points || visibility.len() != frames * points {
            return Err(invalid(
                "track set",
                format!(
                    "expected {} positions and visibility flags, found {} and {}",
                    frames * points,
                    positions.len(),
                    visibility.len()
                ),
            ));
        }
        if let Some(i) = positions.iter().position(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return Err(invalid(
                "track set",
                format!("non-finite position at frame {}, point {}", i / points, i % points),
            ));
        }
        Ok(Self {
            frames,
            points,
            positions,
            visibility,
            roles,
            height,
            width,
        })
    }

    /// Position of point `n` at frame `t`, or `None` when it is not visible.
    pub fn get(&self, t: usize, n: usize) -> Option<[f32; 2]> {
        let i = t * self.points + n;
        self.visibility[i].then(|| self.positions[i])
    }

    pub fn indices_with_role(&self, role: TrackRole) -> impl Iterator<Item = usize> + '_ {
        self.roles
            .iter()
            .enumerate()
            .filter(move |(_, r)| **r == role)
            .map(|(i, _)| i)
    }

    pub fn diagonal(&self) -> f64 {
        (self.height as f64).hypot(self.width as f64)
    }

    /// Loads `<stem>.tracks.abtf`, the sibling `<stem>.roles.json`, and the
    /// optional `<stem>.visibility.abtf` (all points visible when absent).
    pub fn load(tracks_path: impl AsRef<Path>) -> Result<Self, ArtifactError> {
        let tracks_path = tracks_path.as_ref();
        let roles_path = sibling(tracks_path, ".tracks.abtf", ".roles.json");
        let vis_path = sibling(tracks_path, ".tracks.abtf", ".visibility.abtf");

        let t = load_tensor(tracks_path)?;
        let shape = t.expect_rank(3)?.to_vec();
        if shape[2] != 2 {
            return Err(invalid("track set", format!("last dimension must be 2, shape {shape:?}")));
        }
        let (frames, points) = (shape[0], shape[1]);
        let positions: Vec<[f32; 2]> = t.to_f32()?.chunks_exact(2).map(|c| [c[0], c[1]]).collect();

        let roles_text = fs::read_to_string(&roles_path).map_err(|source| ArtifactError::Io {
            path: roles_path.display().to_string(),
            source,
        })?;
        let roles: RolesFile = serde_json::from_str(&roles_text).map_err(|source| ArtifactError::Json {
            path: roles_path.display().to_string(),
            source,
        })?;
        if roles.roles.len() != points {
            return Err(invalid(
                "track set",
                format!("{} roles for {points} points", roles.roles.len()),
            ));
        }

        let visibility = if vis_path.exists() {
            let v = load_tensor(&vis_path)?;
            if v.expect_rank(2)? != [frames, points] {
                return Err(invalid(
                    "track set",
                    format!("visibility shape {:?} != [{frames}, {points}]", v.shape()),
                ));
            }
            let raw = v.as_u8()?;
            if let Some(i) = raw.iter().position(|&b| b > 1) {
                return Err(invalid("track set", format!("visibility value {} at index {i}", raw[i])));
            }
            raw.iter().map(|&b| b == 1).collect()
        } else {
            vec![true; frames * points]
        };

        Self::with_visibility(
            frames,
            positions,
            visibility,
            roles.roles,
            (roles.image_size[0], roles.image_size[1]),
        )
    }

    pub fn save(&self, tracks_path: impl AsRef<Path>) -> Result<(), ArtifactError> {
        let tracks_path = tracks_path.as_ref();
        let flat: Vec<f32> = self.positions.iter().flat_map(|p| [p[0], p[1]]).collect();
        crate::tensor::save_tensor(
            tracks_path,
            &Tensor::from_f32(vec![self.frames, self.points, 2], &flat)?,
        )?;
        let roles = RolesFile {
            image_size: [self.height, self.width],
            roles: self.roles.clone(),
        };
        let roles_path = sibling(tracks_path, ".tracks.abtf", ".roles.json");
        let json = serde_json::to_vec_pretty(&roles).expect("roles serialize");
        fs::write(&roles_path, json).map_err(|source| ArtifactError::Io {
            path: roles_path.display().to_string(),
            source,
        })?;
        if self.visibility.iter().any(|v| !v) {
            let vis = self.visibility.iter().map(|&v| v as u8).collect();
            crate::tensor::save_tensor(
                sibling(tracks_path, ".tracks.abtf", ".visibility.abtf"),
                &Tensor::from_u8(vec![self.frames, self.points], vis)?,
            )?;
        }
        Ok(())
    }
}

fn sibling(path: &Path, suffix: &str, replacement: &str) -> PathBuf {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let stem = name.strip_suffix(suffix).unwrap_or(&name);
    path.with_file_name(format!("{stem}{replacement}"))
}

/// Dense optical flow `[P, H, W, 2]` between adjacent sampled frames.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSequence {
    pub pairs: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
    pub sample_fps: Option<f64>,
    /// Source video size when it differs from the flow field size.
    pub video_size: Option<(usize, usize)>,
}

impl FlowSequence {
    pub fn new(pairs: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self, ArtifactError> {
        if pairs == 0 {
            return Err(invalid("flow sequence", "needs at least one frame pair"));
        }
        if data.len() != pairs * height * width * 2 {
            return Err(invalid("flow sequence", "data length does not match shape"));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(invalid("flow sequence", "non-finite flow value"));
        }
        Ok(Self {
            pairs,
            height,
            width,
            data,
            sample_fps: None,
            video_size: None,
        })
    }

    pub fn pair(&self, p: usize) -> &[f32] {
        let n = self.height * self.width * 2;
        &self.data[p * n..(p + 1) * n]
    }

    /// `(H, W)` used for the motion threshold.
    pub fn reference_size(&self) -> (usize, usize) {
        self.video_size.unwrap_or((self.height, self.width))
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self, ArtifactError> {
        let shape = t.expect_rank(4)?.to_vec();
        if shape[3] != 2 {
            return Err(invalid("flow sequence", format!("last dimension must be 2, shape {shape:?}")));
        }
        let mut f = Self::new(shape[0], shape[1], shape[2], t.to_f32()?)?;
        f.sample_fps = t.header.attr_f64("sample_fps");
        if let (Some(h), Some(w)) = (t.header.attr_f64("video_height"), t.header.attr_f64("video_width")) {
            f.video_size = Some((h as usize, w as usize));
        }
        Ok(f)
    }

    pub fn to_tensor(&self) -> Result<Tensor, ArtifactError> {
        let mut t = Tensor::from_f32(vec![self.pairs, self.height, self.width, 2], &self.data)?;
        if let Some(fps) = self.sample_fps {
            t = t.with_attr("sample_fps", fps);
        }
        if let Some((h, w)) = self.video_size {
            t = t.with_attr("video_height", h).with_attr("video_width", w);
        }
        Ok(t)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ArtifactError> {
        Self::from_tensor(&load_tensor(path)?)
    }
}

/// Feature vectors `[S, D]`: temporal segments or frames.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub vectors: Vec<Vec<f64>>,
    pub source_tag: String,
}

impl EmbeddingSet {
    pub fn new(vectors: Vec<Vec<f64>>, source_tag: impl Into<String>) -> Result<Self, ArtifactError> {
        let dim = vectors.first().map(Vec::len).unwrap_or(0);
        if vectors.is_empty() || dim == 0 {
            return Err(invalid("embedding set", "needs at least one non-empty vector"));
        }
        if vectors.iter().any(|v| v.len() != dim) {
            return Err(invalid("embedding set", "vectors have differing dimensions"));
        }
        for (s, v) in vectors.iter().enumerate() {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(invalid("embedding set", format!("non-finite value in segment {s}")));
            }
            if v.iter().all(|&x| x == 0.0) {
                return Err(invalid("embedding set", format!("segment {s} is an all-zero vector")));
            }
        }
        Ok(Self {
            vectors,
            source_tag: source_tag.into(),
        })
    }

    pub fn dim(&self) -> usize {
        self.vectors[0].len()
    }

    /// Temporal mean of the vectors.
    pub fn pooled(&self) -> Vec<f64> {
        let n = self.vectors.len() as f64;
        let mut out = vec![0.0; self.dim()];
        for v in &self.vectors {
            for (o, x) in out.iter_mut().zip(v) {
                *o += x;
            }
        }
        out.iter_mut().for_each(|o| *o /= n);
        out
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self, ArtifactError> {
        let shape = t.expect_rank(2)?.to_vec();
        let flat = t.to_f32()?;
        let vectors = flat
            .chunks_exact(shape[1])
            .map(|c| c.iter().map(|&x| x as f64).collect())
            .collect();
        Self::new(vectors, t.header.attr_str("source_tag").unwrap_or_default())
    }

    pub fn to_tensor(&self) -> Result<Tensor, ArtifactError> {
        let flat: Vec<f32> = self.vectors.iter().flatten().map(|&x| x as f32).collect();
        let mut t = Tensor::from_f32(vec![self.vectors.len(), self.dim()], &flat)?;
        if !self.source_tag.is_empty() {
            t = t.with_attr("source_tag", self.source_tag.as_str());
        }
        Ok(t)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ArtifactError> {
        Self::from_tensor(&load_tensor(path)?)
    }
}

/// Per-frame perceptual quality on the producing model's native scale.
#[derive(Debug, Clone, PartialEq)]
pub struct QualitySeries {
    pub scores: Vec<f64>,
}

impl QualitySeries {
    pub fn from_tensor(t: &Tensor) -> Result<Self, ArtifactError> {
        t.expect_rank(1)?;
        Ok(Self {
            scores: t.to_f32()?.into_iter().map(f64::from).collect(),
        })
    }

    pub fn to_tensor(&self) -> Result<Tensor, ArtifactError> {
        let flat: Vec<f32> = self.scores.iter().map(|&x| x as f32).collect();
        Ok(Tensor::from_f32(vec![flat.len()], &flat)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ArtifactError> {
        Self::from_tensor(&load_tensor(path)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    Masks,
    Tracks,
    Flow,
    Embeddings,
    Quality,
    Frames,
}

/// One generated video to be scored under one dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoCase {
    pub case_id: String,
    #[serde(default)]
    pub dimension_id: String,
    #[serde(default)]
    pub source_image: PathBuf,
    #[serde(default)]
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question_bank_ref: Option<String>,
    #[serde(default)]
    pub artifact_needs: BTreeSet<ArtifactKind>,
    /// Free-form tags, e.g. `rotation_360` for the turntable appearance setting.
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub tags: BTreeSet<String>,
}

pub const ROTATION_TAG: &str = "rotation_360";

/// Where each artifact of a case lives inside its directory.
pub mod layout {
    pub const MASKS: &str = "video.masks.abtf";
    pub const TRACKS: &str = "video.tracks.abtf";
    pub const FLOW: &str = "video.flow.abtf";
    pub const EMBEDDINGS: &str = "video.emb.abtf";
    pub const REFERENCE_EMBEDDINGS: &str = "reference.emb.abtf";
    pub const QUALITY: &str = "video.quality.abtf";
    pub const FRAMES_DIR: &str = "frames";
    pub const DIVERSITY_SAMPLES: usize = 5;

    pub fn sample_embeddings(i: usize) -> String {
        format!("sample-{i}.emb.abtf")
    }
}

/// A still image handed to the judge.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub name: String,
    pub bytes: Vec<u8>,
}

impl Frame {
    pub fn new(name: impl Into<String>, bytes: Vec<u8>) -> Self {
        Self {
            name: name.into(),
            bytes,
        }
    }

    pub fn sha256_hex(&self) -> String {
        hex::encode(Sha256::digest(&self.bytes))
    }

    pub fn mime_type(&self) -> &'static str {
        let lower = self.name.to_ascii_lowercase();
        if lower.ends_with(".jpg") || lower.ends_with(".jpeg") {
            "image/jpeg"
        } else {
            "image/png"
        }
    }
}

/// Loads every PNG/JPEG in `dir`, ordered by file name.
pub fn load_frames(dir: impl AsRef<Path>) -> Result<Vec<Frame>, ArtifactError> {
    let dir = dir.as_ref();
    let io = |source| ArtifactError::Io {
        path: dir.display().to_string(),
        source,
    };
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .map(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
                .unwrap_or(false)
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(invalid("frames", format!("no images in {}", dir.display())));
    }
    paths
        .into_iter()
        .map(|p| {
            let bytes = fs::read(&p).map_err(|source| ArtifactError::Io {
                path: p.display().to_string(),
                source,
            })?;
            let name = p.file_name().unwrap().to_string_lossy().into_owned();
            Ok(Frame::new(name, bytes))
        })
        .collect()
}

/// Picks `k` frames spread uniformly over the clip (segment midpoints).
pub fn sample_uniform<T: Clone>(items: &[T], k: usize) -> Vec<T> {
    let n = items.len();
    if k == 0 || n == 0 {
        return Vec::new();
    }
    if k >= n {
        return items.to_vec();
    }
    (0..k).map(|i| items[(2 * i + 1) * n / (2 * k)].clone()).collect()
}
