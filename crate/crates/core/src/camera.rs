//! Camera-motion classification from points tracked along the frame edges.
//!
//! Labels name the motion of the camera. Scene content moves the opposite
//! way: when the camera pans right, tracked content drifts left.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::artifacts::{TrackRole, TrackSet};
use crate::error::{invalid, MetricError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CameraMotion {
    PanLeft,
    PanRight,
    TiltUp,
    TiltDown,
    ZoomIn,
    ZoomOut,
    Static,
}

impl CameraMotion {
    pub const ALL: [CameraMotion; 7] = [
        CameraMotion::PanLeft,
        CameraMotion::PanRight,
        CameraMotion::TiltUp,
        CameraMotion::TiltDown,
        CameraMotion::ZoomIn,
        CameraMotion::ZoomOut,
        CameraMotion::Static,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CameraMotion::PanLeft => "pan_left",
            CameraMotion::PanRight => "pan_right",
            CameraMotion::TiltUp => "tilt_up",
            CameraMotion::TiltDown => "tilt_down",
            CameraMotion::ZoomIn => "zoom_in",
            CameraMotion::ZoomOut => "zoom_out",
            CameraMotion::Static => "static",
        }
    }
}

impl fmt::Display for CameraMotion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CameraMotion {
    type Err = MetricError;

    /// Accepts `pan_left`, `pan left` and `pan-left` spellings.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .trim()
            .to_ascii_lowercase()
            .chars()
            .map(|c| if c == ' ' || c == '-' { '_' } else { c })
            .collect();
        CameraMotion::ALL
            .into_iter()
            .find(|m| m.as_str() == norm)
            .ok_or_else(|| invalid(format!("unknown camera motion label {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraConfig {
    /// Static threshold as a fraction of the frame diagonal.
    pub static_frac: f64,
    /// Divergence must exceed this multiple of the mean translation for zoom.
    pub zoom_dominance: f64,
    /// Sum per-frame displacements instead of first-to-last visible frame.
    pub accumulate: bool,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            static_frac: 0.005,
            zoom_dominance: 1.5,
            accumulate: false,
        }
    }
}

/// Mean displacement of each edge's points over the clip, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeDisplacements {
    pub top: [f64; 2],
    pub bottom: [f64; 2],
    pub left: [f64; 2],
    pub right: [f64; 2],
}

impl EdgeDisplacements {
    pub fn all(&self) -> [[f64; 2]; 4] {
        [self.top, self.bottom, self.left, self.right]
    }

    /// Outward-positive expansion: `(right_x − left_x) + (bottom_y − top_y)`.
    pub fn divergence(&self) -> f64 {
        (self.right[0] - self.left[0]) + (self.bottom[1] - self.top[1])
    }

    pub fn mean_translation(&self) -> [f64; 2] {
        let all = self.all();
        [
            all.iter().map(|v| v[0]).sum::<f64>() / 4.0,
            all.iter().map(|v| v[1]).sum::<f64>() / 4.0,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraVerdict {
    pub predicted: CameraMotion,
    pub edge_displacements: EdgeDisplacements,
    pub divergence: f64,
    pub mean_translation: [f64; 2],
    pub static_threshold: f64,
    pub confidence: f64,
}

fn point_displacement(tracks: &TrackSet, n: usize, accumulate: bool) -> Option<[f64; 2]> {
    let visible: Vec<[f32; 2]> = (0..tracks.frames).filter_map(|t| tracks.get(t, n)).collect();
    let first = visible.first()?;
    let last = visible.last()?;
    if accumulate {
        let mut sum = [0.0, 0.0];
        for t in 0..tracks.frames - 1 {
            if let (Some(a), Some(b)) = (tracks.get(t, n), tracks.get(t + 1, n)) {
                sum[0] += (b[0] - a[0]) as f64;
                sum[1] += (b[1] - a[1]) as f64;
            }
        }
        Some(sum)
    } else {
        Some([(last[0] - first[0]) as f64, (last[1] - first[1]) as f64])
    }
}

fn edge_mean(tracks: &TrackSet, role: TrackRole, name: &'static str, accumulate: bool) -> Result<[f64; 2], MetricError> {
    let disps: Vec<[f64; 2]> = tracks
        .indices_with_role(role)
        .filter_map(|n| point_displacement(tracks, n, accumulate))
        .collect();
    if disps.is_empty() {
        return Err(MetricError::MissingRole(name));
    }
    let k = disps.len() as f64;
    Ok([
        disps.iter().map(|d| d[0]).sum::<f64>() / k,
        disps.iter().map(|d| d[1]).sum::<f64>() / k,
    ])
}

/// Per-edge mean displacements. Points never visible are excluded.
pub fn edge_displacements(tracks: &TrackSet, accumulate: bool) -> Result<EdgeDisplacements, MetricError> {
    Ok(EdgeDisplacements {
        top: edge_mean(tracks, TrackRole::EdgeTop, "edge-top", accumulate)?,
        bottom: edge_mean(tracks, TrackRole::EdgeBottom, "edge-bottom", accumulate)?,
        left: edge_mean(tracks, TrackRole::EdgeLeft, "edge-left", accumulate)?,
        right: edge_mean(tracks, TrackRole::EdgeRight, "edge-right", accumulate)?,
    })
}

fn norm(v: [f64; 2]) -> f64 {
    v[0].hypot(v[1])
}

/// The classification rule, given edge displacements and the frame diagonal.
pub fn classify_displacements(edges: EdgeDisplacements, diagonal: f64, cfg: &CameraConfig) -> CameraVerdict {
    let threshold = cfg.static_frac * diagonal;
    let divergence = edges.divergence();
    let m = edges.mean_translation();
    let max_mag = edges.all().into_iter().map(norm).fold(0.0, f64::max);

    let (predicted, confidence) = if max_mag < threshold {
        (CameraMotion::Static, 1.0 - max_mag / threshold)
    } else {
        let translation = norm(m);
        if divergence.abs() > 0.0 && divergence.abs() >= cfg.zoom_dominance * translation {
            let label = if divergence > 0.0 {
                CameraMotion::ZoomIn
            } else {
                CameraMotion::ZoomOut
            };
            (label, divergence.abs() / (divergence.abs() + cfg.zoom_dominance * translation))
        } else {
            let (mx, my) = (m[0].abs(), m[1].abs());
            let competing = mx + my + divergence.abs() / cfg.zoom_dominance;
            if mx >= my {
                // Content drifting left means the camera pans right.
                let label = if m[0] < 0.0 {
                    CameraMotion::PanRight
                } else {
                    CameraMotion::PanLeft
                };
                (label, mx / competing)
            } else {
                let label = if m[1] < 0.0 {
                    CameraMotion::TiltDown
                } else {
                    CameraMotion::TiltUp
                };
                (label, my / competing)
            }
        }
    };
    CameraVerdict {
        predicted,
        edge_displacements: edges,
        divergence,
        mean_translation: m,
        static_threshold: threshold,
        confidence: if confidence.is_finite() { confidence.clamp(0.0, 1.0) } else { 0.0 },
    }
}

pub fn classify_camera(tracks: &TrackSet, cfg: &CameraConfig) -> Result<CameraVerdict, MetricError> {
    let edges = edge_displacements(tracks, cfg.accumulate)?;
    Ok(classify_displacements(edges, tracks.diagonal(), cfg))
}

/// Percentage of cases whose prediction matches the prompted motion.
pub fn camera_accuracy(cases: &[(CameraMotion, Option<CameraMotion>)]) -> Result<f64, MetricError> {
    if cases.is_empty() {
        return Err(invalid("no camera cases"));
    }
    let mut hits = 0usize;
    for (i, (pred, expected)) in cases.iter().enumerate() {
        let expected = expected.ok_or_else(|| invalid(format!("case {i} has no expected camera label")))?;
        hits += (*pred == expected) as usize;
    }
    Ok(100.0 * hits as f64 / cases.len() as f64)
}
