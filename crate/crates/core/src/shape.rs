//! Squash-and-stretch from per-frame object masks.
//!
//! Two signals: area preservation `S` (how little the mask area changes frame
//! to frame) and deformation magnitude `D` (how much the mask's covariance
//! anisotropy changes). They combine into `W2 = 0.7·S + 0.3·D` when the judge
//! reports a rebound, and 0 otherwise.

use serde::{Deserialize, Serialize};

use crate::artifacts::MaskSequence;
use crate::error::{invalid, MetricError};

pub const AREA_EPS: f64 = 1e-6;
pub const ANISOTROPY_EPS: f64 = 1e-6;
pub const DEFAULT_TAU: f64 = 0.2;
pub const AREA_WEIGHT: f64 = 0.7;
pub const DEFORMATION_WEIGHT: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SquashStretchResult {
    #[serde(rename = "S")]
    pub area_preservation: f64,
    #[serde(rename = "D")]
    pub deformation: f64,
    #[serde(rename = "W2")]
    pub w2: f64,
    pub rebound: bool,
    pub tau: f64,
    pub area: Vec<f64>,
    /// `r_t` for t = 1..T-1.
    pub area_change: Vec<f64>,
    pub anisotropy: Vec<f64>,
    /// `d_t` for t = 1..T-1.
    pub anisotropy_change: Vec<f64>,
    /// Frames with fewer than two foreground pixels (anisotropy set to 0).
    pub degenerate_frames: Vec<usize>,
}

/// `A_t`: foreground pixel count per frame.
pub fn area_series(masks: &MaskSequence) -> Vec<f64> {
    (0..masks.frames)
        .map(|t| masks.frame(t).iter().filter(|&&v| v != 0).count() as f64)
        .collect()
}

/// `r_t = |A_t − A_{t−1}| / (A_{t−1} + ε)` for every adjacent pair.
pub fn area_change_rates(area: &[f64]) -> Vec<f64> {
    area.windows(2)
        .map(|w| (w[1] - w[0]).abs() / (w[0] + AREA_EPS))
        .collect()
}

/// `S = 100 · (1 − min(1, mean r_t))`.
pub fn area_preservation(area: &[f64]) -> Result<f64, MetricError> {
    if area.len() < 2 {
        return Err(invalid("area preservation needs at least 2 frames"));
    }
    let rates = area_change_rates(area);
    let mean = rates.iter().sum::<f64>() / rates.len() as f64;
    Ok(100.0 * (1.0 - mean.min(1.0)))
}

/// Population covariance `(var_x, cov_xy, var_y)` of the set pixels, with
/// x = column and y = row. `None` below two pixels.
pub fn mask_covariance(frame: &[u8], width: usize) -> Option<(f64, f64, f64)> {
    let (mut n, mut sx, mut sy) = (0u64, 0.0, 0.0);
    for (i, _) in frame.iter().enumerate().filter(|(_, v)| **v != 0) {
        n += 1;
        sx += (i % width) as f64;
        sy += (i / width) as f64;
    }
    if n < 2 {
        return None;
    }
    let (mx, my) = (sx / n as f64, sy / n as f64);
    let (mut xx, mut xy, mut yy) = (0.0, 0.0, 0.0);
    for (i, _) in frame.iter().enumerate().filter(|(_, v)| **v != 0) {
        let dx = (i % width) as f64 - mx;
        let dy = (i / width) as f64 - my;
        xx += dx * dx;
        xy += dx * dy;
        yy += dy * dy;
    }
    let n = n as f64;
    Some((xx / n, xy / n, yy / n))
}

/// Eigenvalues `λ1 ≥ λ2 ≥ 0` of the symmetric matrix `[[a, b], [b, c]]`.
pub fn symmetric_eigenvalues(a: f64, b: f64, c: f64) -> (f64, f64) {
    let mid = 0.5 * (a + c);
    let radius = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    ((mid + radius).max(0.0), (mid - radius).max(0.0))
}

/// `u = ln((√λ1 + ε) / (√λ2 + ε))`.
pub fn anisotropy_from_eigenvalues(l1: f64, l2: f64) -> f64 {
    ((l1.sqrt() + ANISOTROPY_EPS) / (l2.sqrt() + ANISOTROPY_EPS)).ln()
}

/// `u_t` per frame, plus the indices of degenerate frames (u_t = 0 there).
pub fn anisotropy_series(masks: &MaskSequence) -> (Vec<f64>, Vec<usize>) {
    let mut degenerate = Vec::new();
    let u = (0..masks.frames)
        .map(|t| match mask_covariance(masks.frame(t), masks.width) {
            Some((xx, xy, yy)) => {
                let (l1, l2) = symmetric_eigenvalues(xx, xy, yy);
                anisotropy_from_eigenvalues(l1, l2)
            }
            None => {
                degenerate.push(t);
                0.0
            }
        })
        .collect();
    (u, degenerate)
}

/// `D = 100 · min(1, mean |u_t − u_{t−1}| / τ)`.
pub fn deformation_magnitude(u: &[f64], tau: f64) -> Result<f64, MetricError> {
    if u.len() < 2 {
        return Err(invalid("deformation magnitude needs at least 2 frames"));
    }
    if !(tau > 0.0) {
        return Err(invalid(format!("tau must be positive, got {tau}")));
    }
    let d: f64 = u.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>() / (u.len() - 1) as f64;
    Ok(100.0 * (d / tau).min(1.0))
}

/// `0.7·S + 0.3·D` on rebound, 0 without one.
pub fn combine_w2(area_preservation: f64, deformation: f64, rebound: bool) -> f64 {
    if rebound {
        AREA_WEIGHT * area_preservation + DEFORMATION_WEIGHT * deformation
    } else {
        0.0
    }
}

/// Full squash-and-stretch evaluation. `S` and `D` are always computed and
/// reported, even when `rebound` is false.
pub fn squash_stretch_score(masks: &MaskSequence, rebound: bool, tau: f64) -> Result<SquashStretchResult, MetricError> {
    crate::artifacts::validate_mask_sequence(masks).map_err(|e| invalid(e.to_string()))?;
    let area = area_series(masks);
    let s = area_preservation(&area)?;
    let (u, degenerate_frames) = anisotropy_series(masks);
    let d = deformation_magnitude(&u, tau)?;
    Ok(SquashStretchResult {
        area_preservation: s,
        deformation: d,
        w2: combine_w2(s, d, rebound),
        rebound,
        tau,
        area_change: area_change_rates(&area),
        anisotropy_change: u.windows(2).map(|w| (w[1] - w[0]).abs()).collect(),
        area,
        anisotropy: u,
        degenerate_frames,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn rasterize(h: usize, w: usize, inside: impl Fn(f64, f64) -> bool) -> Vec<u8> {
        let mut out = vec![0u8; h * w];
        for y in 0..h {
            for x in 0..w {
                out[y * w + x] = inside(x as f64, y as f64) as u8;
            }
        }
        out
    }

    fn single(h: usize, w: usize, frame: Vec<u8>) -> MaskSequence {
        let mut data = frame.clone();
        data.extend(frame);
        MaskSequence::new(2, h, w, data).unwrap()
    }

    #[test]
    fn area_examples() {
        let m = MaskSequence::new(3, 4, 4, vec![1; 48]).unwrap();
        assert_eq!(area_series(&m), vec![16.0; 3]);
        let m = MaskSequence::new(3, 4, 4, vec![0; 48]).unwrap();
        assert_eq!(area_series(&m), vec![0.0; 3]);
        let plus = rasterize(5, 5, |x, y| (x == 2.0 && (1.0..=3.0).contains(&y)) || (y == 2.0 && (1.0..=3.0).contains(&x)));
        assert_eq!(area_series(&single(5, 5, plus))[0], 5.0);
    }

    #[test]
    fn area_preservation_examples() {
        assert_eq!(area_preservation(&[50.0, 50.0, 50.0]).unwrap(), 100.0);
        assert_abs_diff_eq!(area_preservation(&[100.0, 200.0]).unwrap(), 0.0, epsilon = 1e-3);
        let r = (0.1 + 10.0 / 110.0) / 2.0;
        assert_abs_diff_eq!(area_preservation(&[100.0, 110.0, 100.0]).unwrap(), 100.0 * (1.0 - r), epsilon = 1e-6);
        assert_abs_diff_eq!(area_preservation(&[100.0, 110.0, 100.0]).unwrap(), 90.4545, epsilon = 1e-3);
    }

    #[test]
    fn empty_masks_do_not_divide_by_zero() {
        let s = area_preservation(&[0.0, 0.0]).unwrap();
        assert_eq!(s, 100.0);
        let s = area_preservation(&[0.0, 5.0]).unwrap();
        assert_eq!(s, 0.0);
    }

    #[test]
    fn disc_is_isotropic() {
        let disc = rasterize(64, 64, |x, y| (x - 31.5).powi(2) + (y - 31.5).powi(2) <= 20.0f64.powi(2));
        let (u, deg) = anisotropy_series(&single(64, 64, disc));
        assert!(deg.is_empty());
        assert!(u[0].abs() < 0.02, "u = {}", u[0]);
    }

    #[test]
    fn ellipse_two_to_one() {
        let (a, b) = (40.0, 20.0);
        let e = rasterize(128, 128, |x, y| ((x - 63.5) / a).powi(2) + ((y - 63.5) / b).powi(2) <= 1.0);
        let (u, _) = anisotropy_series(&single(128, 128, e));
        let expected = 2.0f64.ln();
        assert!((u[0] - expected).abs() / expected < 0.02, "u = {}", u[0]);
    }

    #[test]
    fn thin_segment_is_strongly_anisotropic() {
        let seg = rasterize(9, 64, |x, y| y == 4.0 && (4.0..60.0).contains(&x));
        let (u, _) = anisotropy_series(&single(9, 64, seg));
        assert!(u[0] > 10.0);
    }

    #[test]
    fn degenerate_frames_flagged() {
        let mut data = vec![0u8; 32];
        data[16 + 5] = 1;
        data[16 + 6] = 1;
        let m = MaskSequence::new(2, 4, 4, data).unwrap();
        let (u, deg) = anisotropy_series(&m);
        assert_eq!(deg, vec![0]);
        assert_eq!(u[0], 0.0);
    }

    #[test]
    fn deformation_examples() {
        assert_eq!(deformation_magnitude(&[0.4; 6], 0.2).unwrap(), 0.0);
        let ln2 = 2.0f64.ln();
        assert_eq!(deformation_magnitude(&[0.0, ln2, 0.0, ln2], 0.2).unwrap(), 100.0);
        assert_abs_diff_eq!(deformation_magnitude(&[0.0, 0.1, 0.2], 0.2).unwrap(), 50.0, epsilon = 1e-9);
        assert!(deformation_magnitude(&[0.0, 1.0], 0.0).is_err());
    }

    #[test]
    fn w2_rules() {
        let disc = rasterize(32, 32, |x, y| (x - 15.5).powi(2) + (y - 15.5).powi(2) <= 64.0);
        let m = single(32, 32, disc);
        let no = squash_stretch_score(&m, false, DEFAULT_TAU).unwrap();
        assert_eq!(no.w2, 0.0);
        assert_eq!(no.area_preservation, 100.0);
        let yes = squash_stretch_score(&m, true, DEFAULT_TAU).unwrap();
        assert_eq!((yes.area_preservation, yes.deformation, yes.w2), (100.0, 0.0, 70.0));
        assert_abs_diff_eq!(combine_w2(90.45, 100.0, true), 93.315, epsilon = 1e-9);
    }

    #[test]
    fn eigenvalues_closed_form() {
        let (l1, l2) = symmetric_eigenvalues(2.0, 1.0, 2.0);
        assert_abs_diff_eq!(l1, 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(l2, 1.0, epsilon = 1e-12);
        let (l1, l2) = symmetric_eigenvalues(1.0, 0.0, 4.0);
        assert_eq!((l1, l2), (4.0, 1.0));
    }
}
