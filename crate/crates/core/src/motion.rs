//! Slow-in/slow-out: speed-profile rubric over the tracked primary object.
//!
//! Pipeline: relative foreground/background speed per frame pair, centered
//! moving average, peak normalization, motion-interval detection, then five
//! one-point checks on the interval (three profile checks, two phase checks).

use serde::{Deserialize, Serialize};

use crate::artifacts::{TrackRole, TrackSet};
use crate::error::{invalid, MetricError};

/// Guards divisions by near-zero segment speeds.
pub const SPEED_EPS: f64 = 1e-6;

/// Shortest interval the rubric is evaluated on.
pub const MIN_INTERVAL_FRAMES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SisoConfig {
    /// Moving-average window (frames).
    pub window: usize,
    /// Motion interval = longest run above this fraction of peak speed.
    pub interval_frac: f64,
    /// Fraction of the interval forming each of the start and end segments.
    pub edge_frac: f64,
    pub peak_to_valley: f64,
    /// Absolute threshold, as a fraction of peak speed.
    pub abs_threshold: f64,
    pub rel_threshold: f64,
    /// Minimum phase length as a fraction of the video length.
    pub phase_frac: f64,
}

impl Default for SisoConfig {
    fn default() -> Self {
        Self {
            window: 9,
            interval_frac: 0.10,
            edge_frac: 0.20,
            peak_to_valley: 2.0,
            abs_threshold: 0.15,
            rel_threshold: 0.20,
            phase_frac: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedCurve {
    /// Speed per adjacent frame pair, length `T - 1`.
    pub values: Vec<f64>,
    pub smoothed: bool,
    pub normalized: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_rate: Option<f64>,
}

impl SpeedCurve {
    pub fn raw(values: Vec<f64>) -> Self {
        Self {
            values,
            smoothed: false,
            normalized: false,
            frame_rate: None,
        }
    }

    /// A curve that is already smoothed; [`score_siso`] uses it as is.
    pub fn presmoothed(values: Vec<f64>) -> Self {
        Self {
            smoothed: true,
            ..Self::raw(values)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SisoVerdict {
    pub points: u8,
    pub ratio_ok: bool,
    pub rise_ok: bool,
    pub fall_ok: bool,
    pub accel_phase_ok: bool,
    pub decel_phase_ok: bool,
    /// Inclusive frame-pair indices.
    pub interval: (usize, usize),
    pub normalized_score: f64,
    /// Interval shorter than [`MIN_INTERVAL_FRAMES`]; all checks fail.
    pub degenerate: bool,
    pub start_mean: f64,
    pub middle_mean: f64,
    pub end_mean: f64,
    pub middle_peak: f64,
    pub accel_frames: usize,
    pub decel_frames: usize,
}

fn mean_of(points: impl Iterator<Item = [f32; 2]>) -> Option<[f64; 2]> {
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
    for p in points {
        sx += p[0] as f64;
        sy += p[1] as f64;
        n += 1;
    }
    (n > 0).then(|| [sx / n as f64, sy / n as f64])
}

/// Mean displacement between `t` and `t + 1` over points of `role` visible
/// in both frames.
fn mean_displacement(tracks: &TrackSet, role: TrackRole, t: usize) -> Option<[f64; 2]> {
    mean_of(tracks.indices_with_role(role).filter_map(|n| {
        let a = tracks.get(t, n)?;
        let b = tracks.get(t + 1, n)?;
        Some([b[0] - a[0], b[1] - a[1]])
    }))
}

/// Foreground speed relative to the background, in pixels per frame.
///
/// Frame pairs with no visible foreground point get speed 0; pairs with no
/// visible background point treat the background as static.
pub fn relative_speed_curve(tracks: &TrackSet) -> Result<SpeedCurve, MetricError> {
    if tracks.indices_with_role(TrackRole::Foreground).next().is_none() {
        return Err(MetricError::MissingRole("foreground"));
    }
    if tracks.indices_with_role(TrackRole::Background).next().is_none() {
        return Err(MetricError::MissingRole("background"));
    }
    let values = (0..tracks.frames - 1)
        .map(|t| match mean_displacement(tracks, TrackRole::Foreground, t) {
            None => 0.0,
            Some(fg) => {
                let bg = mean_displacement(tracks, TrackRole::Background, t).unwrap_or([0.0, 0.0]);
                (fg[0] - bg[0]).hypot(fg[1] - bg[1])
            }
        })
        .collect();
    Ok(SpeedCurve::raw(values))
}

/// Centered moving average over `window` frames (`window / 2` on each side).
/// Near the ends the window shrinks symmetrically so it stays centered.
pub fn smooth_speed(curve: &SpeedCurve, window: usize) -> SpeedCurve {
    let v = &curve.values;
    let n = v.len();
    let half = window / 2;
    let values = (0..n)
        .map(|i| {
            let h = half.min(i).min(n - 1 - i);
            v[i - h..=i + h].iter().sum::<f64>() / (2 * h + 1) as f64
        })
        .collect();
    SpeedCurve {
        values,
        smoothed: true,
        ..curve.clone()
    }
}

/// Longest run of values strictly above `frac · max`; ties go to the earliest.
pub fn detect_motion_interval(values: &[f64], frac: f64) -> Result<(usize, usize), MetricError> {
    let max = values.iter().copied().fold(0.0f64, f64::max);
    if !(max > 0.0) {
        return Err(MetricError::NoMotion);
    }
    let threshold = frac * max;
    let mut best: Option<(usize, usize)> = None;
    let mut run_start = None;
    for i in 0..=values.len() {
        let above = i < values.len() && values[i] > threshold;
        match (above, run_start) {
            (true, None) => run_start = Some(i),
            (false, Some(s)) => {
                let len = i - s;
                if best.is_none_or(|(bs, be)| len > be - bs + 1) {
                    best = Some((s, i - 1));
                }
                run_start = None;
            }
            _ => {}
        }
    }
    Ok(best.expect("max > threshold guarantees a run"))
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Scores the speed profile on the 0–5 rubric.
///
/// `video_frames` is the clip length T used by the phase-length checks. The
/// curve is smoothed with `cfg.window` unless it is already marked smoothed.
pub fn score_siso(curve: &SpeedCurve, video_frames: usize, cfg: &SisoConfig) -> Result<SisoVerdict, MetricError> {
    if curve.values.is_empty() {
        return Err(invalid("empty speed curve"));
    }
    if let Some(i) = curve.values.iter().position(|v| !v.is_finite() || *v < 0.0) {
        return Err(invalid(format!("speed at index {i} is negative or non-finite")));
    }
    let smoothed = if curve.smoothed {
        curve.clone()
    } else {
        smooth_speed(curve, cfg.window)
    };
    let max = smoothed.values.iter().copied().fold(0.0f64, f64::max);
    if !(max > 0.0) {
        return Err(MetricError::NoMotion);
    }
    let norm: Vec<f64> = smoothed.values.iter().map(|v| v / max).collect();
    let (start, end) = detect_motion_interval(&norm, cfg.interval_frac)?;
    let len = end - start + 1;

    let mut verdict = SisoVerdict {
        points: 0,
        ratio_ok: false,
        rise_ok: false,
        fall_ok: false,
        accel_phase_ok: false,
        decel_phase_ok: false,
        interval: (start, end),
        normalized_score: 0.0,
        degenerate: len < MIN_INTERVAL_FRAMES,
        start_mean: 0.0,
        middle_mean: 0.0,
        end_mean: 0.0,
        middle_peak: 0.0,
        accel_frames: 0,
        decel_frames: 0,
    };
    if verdict.degenerate {
        return Ok(verdict);
    }

    let seg = &norm[start..=end];
    // The small slack keeps e.g. 0.2·10 from flooring to 1.
    let edge = ((cfg.edge_frac * len as f64 + 1e-9).floor() as usize).clamp(1, (len - 1) / 2);
    let (head, rest) = seg.split_at(edge);
    let (middle, tail) = rest.split_at(rest.len() - edge);
    let v_s = mean(head);
    let v_e = mean(tail);
    let v_m = mean(middle);
    let peak = middle.iter().copied().fold(f64::MIN, f64::max);

    let valley = v_s.min(v_e).max(SPEED_EPS);
    verdict.ratio_ok = peak / valley >= cfg.peak_to_valley;
    let step_ok = |from: f64| v_m - from >= cfg.abs_threshold && (v_m - from) / from.max(SPEED_EPS) >= cfg.rel_threshold;
    verdict.rise_ok = step_ok(v_s);
    verdict.fall_ok = step_ok(v_e);

    let accel = 1 + seg.windows(2).take_while(|w| w[1] >= w[0]).count();
    let decel = 1 + seg.windows(2).rev().take_while(|w| w[1] <= w[0]).count();
    let min_phase = cfg.phase_frac * video_frames as f64;
    verdict.accel_phase_ok = accel as f64 >= min_phase;
    verdict.decel_phase_ok = decel as f64 >= min_phase;

    verdict.points = [
        verdict.ratio_ok,
        verdict.rise_ok,
        verdict.fall_ok,
        verdict.accel_phase_ok,
        verdict.decel_phase_ok,
    ]
    .iter()
    .filter(|b| **b)
    .count() as u8;
    verdict.normalized_score = 20.0 * verdict.points as f64;
    verdict.start_mean = v_s;
    verdict.middle_mean = v_m;
    verdict.end_mean = v_e;
    verdict.middle_peak = peak;
    verdict.accel_frames = accel;
    verdict.decel_frames = decel;
    Ok(verdict)
}

/// Full pipeline from tracks to verdict.
pub fn siso_from_tracks(tracks: &TrackSet, cfg: &SisoConfig) -> Result<SisoVerdict, MetricError> {
    let raw = relative_speed_curve(tracks)?;
    score_siso(&raw, tracks.frames, cfg)
}
