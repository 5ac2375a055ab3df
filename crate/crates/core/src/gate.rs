//! Height-strategy decision: the pre-extraction quality gate on the imagery,
//! the post-extraction validator on shadow-derived heights, and the rule that
//! combines them.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::SceneMetadata;
use crate::raster::{BinaryMask, GrayRaster};
use crate::shem::{HeightEstimate, H_MAX_M};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GateThresholds {
    pub min_solar_elevation_deg: f64,
    pub max_cloud_fraction: f64,
    pub max_gsd_m: f64,
    pub min_contrast_ratio: f64,
}

impl Default for GateThresholds {
    fn default() -> Self {
        GateThresholds {
            min_solar_elevation_deg: 30.0,
            max_cloud_fraction: 0.15,
            max_gsd_m: 10.0,
            min_contrast_ratio: 2.0,
        }
    }
}

impl GateThresholds {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("min_solar_elevation_deg", self.min_solar_elevation_deg),
            ("max_cloud_fraction", self.max_cloud_fraction),
            ("max_gsd_m", self.max_gsd_m),
            ("min_contrast_ratio", self.min_contrast_ratio),
        ];
        for (key, v) in all {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("gate.{key}"), "must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateResult {
    pub c1_solar: bool,
    pub c2_cloud: bool,
    pub c3_gsd: bool,
    pub c4_contrast: bool,
    /// Shadow contrast ratio; 0 when it could not be measured.
    pub kappa: f64,
    pub passed: bool,
    /// Shadow estimation was disabled by configuration, not by the imagery.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub forced_fallback: bool,
}

impl GateResult {
    pub fn first_failure(&self) -> Option<&'static str> {
        [
            (self.c1_solar, "c1_solar"),
            (self.c2_cloud, "c2_cloud"),
            (self.c3_gsd, "c3_gsd"),
            (self.c4_contrast, "c4_contrast"),
        ]
        .into_iter()
        .find(|(ok, _)| !ok)
        .map(|(_, name)| name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidatorThresholds {
    pub min_count: usize,
    pub mean_range_m: [f64; 2],
    pub max_clip_ratio: f64,
    pub min_std_m: f64,
}

impl Default for ValidatorThresholds {
    fn default() -> Self {
        ValidatorThresholds {
            min_count: 12,
            mean_range_m: [4.0, 20.0],
            max_clip_ratio: 0.35,
            min_std_m: 1.5,
        }
    }
}

impl ValidatorThresholds {
    pub fn validate(&self) -> Result<()> {
        if self.min_count < 1 {
            return Err(Error::invalid("validator.min_count", "must be >= 1"));
        }
        if self.mean_range_m[0].partial_cmp(&self.mean_range_m[1]).is_none_or(|o| o.is_gt()) {
            return Err(Error::invalid("validator.mean_range_m", "range is not ordered"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidatorResult {
    pub count: usize,
    pub mean_h_m: f64,
    pub std_h_m: f64,
    pub clip_ratio: f64,
    pub count_ok: bool,
    pub mean_ok: bool,
    pub clip_ok: bool,
    pub std_ok: bool,
    pub passed: bool,
}

impl ValidatorResult {
    /// Names of the failed criteria in evaluation order.
    pub fn failures(&self) -> Vec<&'static str> {
        [
            (self.count_ok, "count"),
            (self.mean_ok, "mean"),
            (self.clip_ok, "clip_ratio"),
            (self.std_ok, "std"),
        ]
        .into_iter()
        .filter(|(ok, _)| !ok)
        .map(|(_, name)| name)
        .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    Shem,
    Fallback,
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StrategyKind::Shem => "SHEM",
            StrategyKind::Fallback => "FALLBACK",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Strategy {
    pub kind: StrategyKind,
    /// Short cause, e.g. `post-validator: count`; names the first failure.
    pub reason: String,
    /// Every failed criterion, first failure first.
    pub failed_criteria: Vec<String>,
}

fn mean_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Mean luminance at or above `threshold` divided by mean luminance below it.
pub fn shadow_contrast(gray: &GrayRaster, threshold: f64) -> Result<f64> {
    contrast_over(gray.values.iter().copied(), threshold)
}

/// [`shadow_contrast`] restricted to pixels not set in `exclude`.
pub fn shadow_contrast_masked(gray: &GrayRaster, exclude: &BinaryMask, threshold: f64) -> Result<f64> {
    exclude.same_shape(gray.width, gray.height)?;
    contrast_over(
        gray.values
            .iter()
            .zip(&exclude.bits)
            .filter(|(_, &x)| !x)
            .map(|(&v, _)| v),
        threshold,
    )
}

fn contrast_over(values: impl Iterator<Item = u8> + Clone, threshold: f64) -> Result<f64> {
    let shadow = mean_of(values.clone().map(f64::from).filter(|&v| v < threshold));
    let lit = mean_of(values.map(f64::from).filter(|&v| v >= threshold));
    match (shadow, lit) {
        (None, _) => Err(Error::Degenerate("no pixels in the shadow class".into())),
        (_, None) => Err(Error::Degenerate("no pixels in the non-shadow class".into())),
        (Some(s), _) if s <= 0.0 => Err(Error::Degenerate(
            "shadow class has zero mean luminance".into(),
        )),
        (Some(s), Some(l)) => Ok(l / s),
    }
}

/// Four-criterion gate; every comparison is inclusive.
pub fn evaluate_pre_gate(meta: &SceneMetadata, kappa: f64, t: &GateThresholds) -> GateResult {
    let c1_solar = meta.solar_elevation_deg >= t.min_solar_elevation_deg;
    let c2_cloud = meta.cloud_fraction <= t.max_cloud_fraction;
    let c3_gsd = meta.gsd_m <= t.max_gsd_m;
    let c4_contrast = kappa >= t.min_contrast_ratio;
    GateResult {
        c1_solar,
        c2_cloud,
        c3_gsd,
        c4_contrast,
        kappa,
        passed: c1_solar && c2_cloud && c3_gsd && c4_contrast,
        forced_fallback: false,
    }
}

/// Statistics on shadow-derived candidates. The clip ratio looks at the
/// unclamped heights; mean and (population) standard deviation use the
/// clamped ones.
pub fn evaluate_post_validator(heights: &[HeightEstimate], t: &ValidatorThresholds) -> ValidatorResult {
    let count = heights.len();
    let (mean_h_m, std_h_m, clip_ratio) = if count == 0 {
        (0.0, 0.0, 0.0)
    } else {
        let n = count as f64;
        let mean = heights.iter().map(|h| h.height_m).sum::<f64>() / n;
        let var = heights
            .iter()
            .map(|h| (h.height_m - mean).powi(2))
            .sum::<f64>()
            / n;
        let clipped = heights
            .iter()
            .filter(|h| h.height_pre_clamp_m > H_MAX_M)
            .count();
        (mean, var.sqrt(), clipped as f64 / n)
    };
    let count_ok = count >= t.min_count;
    let mean_ok = count > 0 && mean_h_m >= t.mean_range_m[0] && mean_h_m <= t.mean_range_m[1];
    let clip_ok = count > 0 && clip_ratio <= t.max_clip_ratio;
    let std_ok = count > 0 && std_h_m >= t.min_std_m;
    ValidatorResult {
        count,
        mean_h_m,
        std_h_m,
        clip_ratio,
        count_ok,
        mean_ok,
        clip_ok,
        std_ok,
        passed: count_ok && mean_ok && clip_ok && std_ok,
    }
}

/// Shadow estimation is selected only when both the gate and the validator
/// pass. The validator must be supplied exactly when the gate passed.
pub fn select_strategy(gate: &GateResult, validator: Option<&ValidatorResult>) -> Result<Strategy> {
    match (gate.passed, validator) {
        (false, Some(_)) => Err(Error::Contract(
            "validator result supplied although the gate failed".into(),
        )),
        (true, None) => Err(Error::Contract(
            "gate passed but no validator result was supplied".into(),
        )),
        (false, None) => {
            if gate.forced_fallback {
                return Ok(Strategy {
                    kind: StrategyKind::Fallback,
                    reason: "forced fallback".into(),
                    failed_criteria: Vec::new(),
                });
            }
            let failed: Vec<String> = [
                (gate.c1_solar, "c1_solar"),
                (gate.c2_cloud, "c2_cloud"),
                (gate.c3_gsd, "c3_gsd"),
                (gate.c4_contrast, "c4_contrast"),
            ]
            .into_iter()
            .filter(|(ok, _)| !ok)
            .map(|(_, n)| n.to_string())
            .collect();
            Ok(Strategy {
                kind: StrategyKind::Fallback,
                reason: format!("pre-gate: {}", gate.first_failure().unwrap_or("unknown")),
                failed_criteria: failed,
            })
        }
        (true, Some(v)) if v.passed => Ok(Strategy {
            kind: StrategyKind::Shem,
            reason: "gate and validator passed".into(),
            failed_criteria: Vec::new(),
        }),
        (true, Some(v)) => {
            let failed = v.failures();
            Ok(Strategy {
                kind: StrategyKind::Fallback,
                reason: format!("post-validator: {}", failed[0]),
                failed_criteria: failed.into_iter().map(String::from).collect(),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shem::{estimate_from_pre_clamp, H_MIN_M};
    use chrono::TimeZone;
    use proptest::prelude::*;

    fn meta(beta: f64, cloud: f64, gsd: f64) -> SceneMetadata {
        SceneMetadata {
            solar_elevation_deg: beta,
            solar_azimuth_deg: 157.41,
            gsd_m: gsd,
            cloud_fraction: cloud,
            acquisition_time: chrono::Utc.with_ymd_and_hms(2023, 4, 26, 10, 16, 1).unwrap(),
            source_label: "test".into(),
        }
    }

    fn heights(values: &[f64]) -> Vec<HeightEstimate> {
        values
            .iter()
            .enumerate()
            .map(|(i, &h)| estimate_from_pre_clamp(h, 1.0, 0.5, i))
            .collect()
    }

    #[test]
    fn contrast_of_two_level_image() {
        let mut v = vec![150u8; 50];
        v.extend(vec![70u8; 50]);
        let g = GrayRaster::new(10, 10, v, 1.0).unwrap();
        let k = shadow_contrast(&g, 100.0).unwrap();
        assert!((k - 150.0 / 70.0).abs() < 1e-12);
        assert!((k - 2.143).abs() < 1e-3);
    }

    #[test]
    fn contrast_uniform_image_errors() {
        let g = GrayRaster::new(4, 4, vec![120; 16], 1.0).unwrap();
        assert!(shadow_contrast(&g, 100.0).is_err());
        assert!(shadow_contrast(&g, 200.0).is_err());
    }

    #[test]
    fn contrast_masked_ignores_excluded() {
        let g = GrayRaster::new(3, 1, vec![200, 50, 0], 1.0).unwrap();
        let mut ex = BinaryMask::empty(3, 1);
        ex.set(2, 0, true);
        assert_eq!(shadow_contrast_masked(&g, &ex, 100.0).unwrap(), 4.0);
    }

    #[test]
    fn gate_case_a_and_b_pass() {
        let t = GateThresholds::default();
        let a = evaluate_pre_gate(&meta(56.19, 0.03, 10.0), 2.1, &t);
        assert!(a.c1_solar && a.c2_cloud && a.c3_gsd && a.c4_contrast && a.passed);
        let b = evaluate_pre_gate(&meta(56.19, 0.03, 0.93), 2.1, &t);
        assert!(b.passed);
    }

    #[test]
    fn gate_low_sun_fails_c1() {
        let r = evaluate_pre_gate(&meta(25.0, 0.03, 10.0), 2.5, &GateThresholds::default());
        assert!(!r.c1_solar && r.c2_cloud && r.c3_gsd && r.c4_contrast);
        assert!(!r.passed);
        assert_eq!(r.first_failure(), Some("c1_solar"));
    }

    #[test]
    fn gate_is_inclusive_at_thresholds() {
        let r = evaluate_pre_gate(&meta(30.0, 0.15, 10.0), 2.0, &GateThresholds::default());
        assert!(r.passed);
    }

    #[test]
    fn validator_case_a_count_fails() {
        let r = evaluate_post_validator(&heights(&[8.0, 10.0, 12.0, 14.0, 9.0, 11.0, 13.0]), &Default::default());
        assert_eq!(r.count, 7);
        assert!(!r.count_ok && !r.passed);
    }

    #[test]
    fn validator_case_b_mean_and_clip_fail() {
        // 33 of 74 clipped (0.446), the rest chosen so the clamped mean is 31.2.
        let mut v = vec![52.3; 33];
        let rest = (31.2 * 74.0 - 35.0 * 33.0) / 41.0;
        v.extend(vec![rest - 1.0; 20]);
        v.extend(vec![rest + 1.0; 20]);
        v.push(rest);
        let r = evaluate_post_validator(&heights(&v), &Default::default());
        assert_eq!(r.count, 74);
        assert!((r.clip_ratio - 33.0 / 74.0).abs() < 1e-12);
        assert!((r.clip_ratio - 0.446).abs() < 1e-3);
        assert!((r.mean_h_m - 31.2).abs() < 1e-9);
        assert!(r.count_ok && !r.mean_ok && !r.clip_ok && r.std_ok);
        assert!(!r.passed);
        assert_eq!(r.failures(), vec!["mean", "clip_ratio"]);
    }

    #[test]
    fn validator_constructed_pass() {
        // 10 at 7 m and 10 at 13 m: mean 10, population std 3.
        let mut v = vec![7.0; 10];
        v.extend(vec![13.0; 10]);
        let r = evaluate_post_validator(&heights(&v), &Default::default());
        assert_eq!(r.count, 20);
        assert!((r.mean_h_m - 10.0).abs() < 1e-12);
        assert!((r.std_h_m - 3.0).abs() < 1e-12);
        assert_eq!(r.clip_ratio, 0.0);
        assert!(r.passed);
    }

    #[test]
    fn validator_empty_fails_count() {
        let r = evaluate_post_validator(&[], &Default::default());
        assert_eq!(r.count, 0);
        assert!(!r.count_ok && !r.passed);
    }

    #[test]
    fn strategy_rules() {
        let pass_gate = evaluate_pre_gate(&meta(56.19, 0.03, 10.0), 2.1, &Default::default());
        let mut v = vec![7.0; 10];
        v.extend(vec![13.0; 10]);
        let good = evaluate_post_validator(&heights(&v), &Default::default());
        let s = select_strategy(&pass_gate, Some(&good)).unwrap();
        assert_eq!(s.kind, StrategyKind::Shem);

        let bad = evaluate_post_validator(&heights(&[10.0; 7]), &Default::default());
        let s = select_strategy(&pass_gate, Some(&bad)).unwrap();
        assert_eq!(s.kind, StrategyKind::Fallback);
        assert_eq!(s.reason, "post-validator: count");

        let fail_gate = evaluate_pre_gate(&meta(20.0, 0.03, 10.0), 2.1, &Default::default());
        let s = select_strategy(&fail_gate, None).unwrap();
        assert_eq!(s.kind, StrategyKind::Fallback);
        assert_eq!(s.reason, "pre-gate: c1_solar");

        assert!(matches!(select_strategy(&fail_gate, Some(&good)), Err(Error::Contract(_))));
        assert!(matches!(select_strategy(&pass_gate, None), Err(Error::Contract(_))));
    }

    proptest! {
        #[test]
        fn improving_metadata_never_breaks_a_pass(
            beta in 0.0f64..90.0, cloud in 0.0f64..1.0, gsd in 0.1f64..30.0, kappa in 0.5f64..5.0,
            dbeta in 0.0f64..30.0, dcloud in 0.0f64..1.0, dgsd in 0.0f64..1.0, dkappa in 0.0f64..3.0,
            which in 0usize..4,
        ) {
            let t = GateThresholds::default();
            let base = evaluate_pre_gate(&meta(beta, cloud, gsd), kappa, &t);
            let (mut b, mut c, mut g, mut k) = (beta, cloud, gsd, kappa);
            match which {
                0 => b = (beta + dbeta).min(90.0),
                1 => c = cloud * (1.0 - dcloud),
                2 => g = gsd * (1.0 - dgsd * 0.99),
                _ => k = kappa + dkappa,
            }
            let improved = evaluate_pre_gate(&meta(b, c, g), k, &t);
            prop_assert!(!base.passed || improved.passed);
        }

        #[test]
        fn fewer_than_twelve_always_fails(values in prop::collection::vec(H_MIN_M..60.0f64, 0..12)) {
            let r = evaluate_post_validator(&heights(&values), &Default::default());
            prop_assert!(!r.passed);
        }

        #[test]
        fn shem_only_when_all_eight_pass(
            c in prop::array::uniform4(any::<bool>()),
            values in prop::collection::vec(1.0f64..60.0, 0..30),
        ) {
            let gate = GateResult {
                c1_solar: c[0], c2_cloud: c[1], c3_gsd: c[2], c4_contrast: c[3],
                kappa: 2.0, passed: c.iter().all(|&x| x), forced_fallback: false,
            };
            let v = evaluate_post_validator(&heights(&values), &Default::default());
            let s = select_strategy(&gate, gate.passed.then_some(&v)).unwrap();
            let all = c.iter().all(|&x| x) && v.count_ok && v.mean_ok && v.clip_ok && v.std_ok;
            prop_assert_eq!(s.kind == StrategyKind::Shem, all);
        }
    }
}
