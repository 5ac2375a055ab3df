//! Shadow-based height estimation.
//!
//! RGB imagery is reduced to a CIE L* channel (rescaled to 0..=255),
//! vegetation is masked in HSV space, shadows are thresholded with a
//! multi-strategy luminance threshold, cleaned with a 3x3 opening and
//! closing, labelled into 8-connected components and filtered by shape.
//! Each surviving component yields `h = L_s * tan(beta)` where `L_s` is its
//! capped long axis in meters.

use std::collections::HashMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::EnuPoint;
use crate::ingest::SceneMetadata;
use crate::raster::{BinaryMask, GrayRaster, PixelFrame, RgbRaster};

/// Height clamp range in meters.
pub const H_MIN_M: f64 = 3.0;
pub const H_MAX_M: f64 = 35.0;

/// Histogram cutoff (exclusive) for the valley search, and the offset added
/// to the peak it finds.
pub const VALLEY_CUTOFF: usize = 120;
pub const VALLEY_OFFSET: f64 = 12.0;
/// `adaptive = mean - ADAPTIVE_K * std`.
pub const ADAPTIVE_K: f64 = 1.3;

/// Vegetation hue window on the 8-bit half-degree scale (0..180), and the
/// minimum 0..255 saturation.
pub const VEG_HUE_RANGE: (f64, f64) = (35.0, 85.0);
pub const VEG_MIN_SATURATION: f64 = 40.0;

/// Blob footprint dimensions are the bounding box scaled by this factor.
pub const BLOB_FOOTPRINT_SCALE: f64 = 0.7;

/// Estimator constants that a deployment may tune.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShemParams {
    pub long_axis_max_px: f64,
    /// Meters per pixel used to convert the long axis to a shadow length.
    /// `None` uses the scene GSD.
    pub pixel_m: Option<f64>,
}

impl Default for ShemParams {
    fn default() -> Self {
        ShemParams {
            long_axis_max_px: 3.5,
            pixel_m: None,
        }
    }
}

// ---------------------------------------------------------------------------
// Color space

/// HSV test on the 8-bit convention: hue in half degrees, saturation 0..255.
pub fn is_vegetation(rgb: [u8; 3]) -> bool {
    let (r, g, b) = (f64::from(rgb[0]), f64::from(rgb[1]), f64::from(rgb[2]));
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    if max <= 0.0 || delta <= 0.0 {
        return false;
    }
    let saturation = delta / max * 255.0;
    let mut hue = if max == r {
        60.0 * (g - b) / delta
    } else if max == g {
        120.0 + 60.0 * (b - r) / delta
    } else {
        240.0 + 60.0 * (r - g) / delta
    };
    if hue < 0.0 {
        hue += 360.0;
    }
    let half = hue / 2.0;
    half >= VEG_HUE_RANGE.0 && half <= VEG_HUE_RANGE.1 && saturation > VEG_MIN_SATURATION
}

pub fn vegetation_mask(rgb: &RgbRaster) -> BinaryMask {
    BinaryMask::from_fn(rgb.width, rgb.height, |c, r| is_vegetation(rgb.rgb(c, r)))
}

fn srgb_to_linear(v: u8) -> f64 {
    let c = f64::from(v) / 255.0;
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

/// CIE L* (D65, 0..100) of an sRGB triple.
pub fn lightness(rgb: [u8; 3]) -> f64 {
    let y = 0.2126 * srgb_to_linear(rgb[0])
        + 0.7152 * srgb_to_linear(rgb[1])
        + 0.0722 * srgb_to_linear(rgb[2]);
    lightness_from_y(y)
}

fn lightness_from_y(y: f64) -> f64 {
    const EPS: f64 = 216.0 / 24389.0;
    const KAPPA: f64 = 24389.0 / 27.0;
    if y > EPS {
        116.0 * y.cbrt() - 16.0
    } else {
        KAPPA * y
    }
}

fn to_byte(l_star: f64) -> u8 {
    (l_star * 255.0 / 100.0).round().clamp(0.0, 255.0) as u8
}

pub fn luminance_channel(rgb: &RgbRaster) -> GrayRaster {
    let lut: Vec<f64> = (0..=255u8).map(srgb_to_linear).collect();
    let values = rgb
        .pixels
        .chunks_exact(3)
        .map(|p| {
            let y = 0.2126 * lut[p[0] as usize] + 0.7152 * lut[p[1] as usize] + 0.0722 * lut[p[2] as usize];
            to_byte(lightness_from_y(y))
        })
        .collect();
    GrayRaster {
        width: rgb.width,
        height: rgb.height,
        values,
        gsd_m: rgb.gsd_m,
    }
}

// ---------------------------------------------------------------------------
// Thresholds

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSet {
    pub adaptive: f64,
    pub p25: f64,
    /// `None` when no pixel falls below the valley cutoff.
    pub valley: Option<f64>,
    /// Between-class-variance maximizer; reported, never used.
    pub otsu: f64,
    pub active: f64,
}

fn histogram(gray: &GrayRaster, exclude: &BinaryMask) -> [u64; 256] {
    let mut hist = [0u64; 256];
    for (&v, &x) in gray.values.iter().zip(&exclude.bits) {
        if !x {
            hist[v as usize] += 1;
        }
    }
    hist
}

/// Otsu's threshold: the last bin of the lower class that maximizes the
/// between-class variance.
pub fn otsu_threshold(hist: &[u64; 256]) -> u8 {
    let total: f64 = hist.iter().map(|&h| h as f64).sum();
    let sum_total: f64 = hist.iter().enumerate().map(|(i, &h)| i as f64 * h as f64).sum();
    let (mut w_b, mut sum_b, mut best, mut best_t) = (0.0, 0.0, -1.0, 0u8);
    for (t, &h) in hist.iter().enumerate() {
        w_b += h as f64;
        if w_b == 0.0 {
            continue;
        }
        let w_f = total - w_b;
        if w_f == 0.0 {
            break;
        }
        sum_b += t as f64 * h as f64;
        let m_b = sum_b / w_b;
        let m_f = (sum_total - sum_b) / w_f;
        let between = w_b * w_f * (m_b - m_f).powi(2);
        if between > best {
            best = between;
            best_t = t as u8;
        }
    }
    best_t
}

/// Nearest-rank percentile of a histogram.
fn percentile(hist: &[u64; 256], total: u64, q: f64) -> f64 {
    let rank = ((q * total as f64).ceil() as u64).max(1);
    let mut cum = 0;
    for (v, &h) in hist.iter().enumerate() {
        cum += h;
        if cum >= rank {
            return v as f64;
        }
    }
    255.0
}

/// Computes every threshold strategy over the pixels not set in `exclude`
/// (vegetation, and anything else the caller wants ignored).
pub fn threshold_candidates(gray: &GrayRaster, exclude: &BinaryMask) -> Result<ThresholdSet> {
    exclude.same_shape(gray.width, gray.height)?;
    let hist = histogram(gray, exclude);
    let total: u64 = hist.iter().sum();
    if total == 0 {
        return Err(Error::Degenerate("no non-vegetation pixels".into()));
    }
    let n = total as f64;
    let mean = hist.iter().enumerate().map(|(v, &h)| v as f64 * h as f64).sum::<f64>() / n;
    let var = hist
        .iter()
        .enumerate()
        .map(|(v, &h)| (v as f64 - mean).powi(2) * h as f64)
        .sum::<f64>()
        / n;
    let adaptive = mean - ADAPTIVE_K * var.sqrt();
    let p25 = percentile(&hist, total, 0.25);

    // Ties go to the lower bin because max_by_key keeps the last maximum and
    // we scan from the top down.
    let valley = hist[..VALLEY_CUTOFF]
        .iter()
        .enumerate()
        .rev()
        .filter(|(_, &h)| h > 0)
        .max_by_key(|(_, &h)| h)
        .map(|(v, _)| v as f64 + VALLEY_OFFSET);

    let (lo, hi) = (adaptive.min(p25), adaptive.max(p25));
    let active = match valley {
        Some(v) => v.clamp(lo, hi),
        None => adaptive,
    };
    Ok(ThresholdSet {
        adaptive,
        p25,
        valley,
        otsu: f64::from(otsu_threshold(&hist)),
        active,
    })
}

// ---------------------------------------------------------------------------
// Morphology (3x3 square element; out-of-raster neighbours are ignored)

fn filter3(mask: &BinaryMask, erode: bool) -> BinaryMask {
    let (w, h) = (mask.width, mask.height);
    let pass = |src: &[bool], horizontal: bool| -> Vec<bool> {
        let mut out = vec![false; w * h];
        for r in 0..h {
            for c in 0..w {
                let (lo, hi, idx): (usize, usize, Box<dyn Fn(usize) -> usize>) = if horizontal {
                    (c.saturating_sub(1), (c + 1).min(w - 1), Box::new(move |k| r * w + k))
                } else {
                    (r.saturating_sub(1), (r + 1).min(h - 1), Box::new(move |k| k * w + c))
                };
                let mut acc = erode;
                for k in lo..=hi {
                    let v = src[idx(k)];
                    if erode {
                        acc &= v;
                    } else {
                        acc |= v;
                    }
                }
                out[r * w + c] = acc;
            }
        }
        out
    };
    if w == 0 || h == 0 {
        return mask.clone();
    }
    let rows = pass(&mask.bits, true);
    BinaryMask {
        width: w,
        height: h,
        bits: pass(&rows, false),
    }
}

pub fn erode(mask: &BinaryMask) -> BinaryMask {
    filter3(mask, true)
}

pub fn dilate(mask: &BinaryMask) -> BinaryMask {
    filter3(mask, false)
}

pub fn opening(mask: &BinaryMask) -> BinaryMask {
    dilate(&erode(mask))
}

pub fn closing(mask: &BinaryMask) -> BinaryMask {
    erode(&dilate(mask))
}

/// Thresholds `L* < threshold` on non-vegetation pixels, then opens and
/// closes the result. Returns the mask and its true-pixel fraction.
pub fn extract_shadow_mask(
    gray: &GrayRaster,
    veg: &BinaryMask,
    threshold: f64,
) -> Result<(BinaryMask, f64)> {
    veg.same_shape(gray.width, gray.height)?;
    if !(0.0..=255.0).contains(&threshold) {
        return Err(Error::invalid("threshold", format!("{threshold} outside [0, 255]")));
    }
    let raw = BinaryMask {
        width: gray.width,
        height: gray.height,
        bits: gray
            .values
            .iter()
            .zip(&veg.bits)
            .map(|(&v, &is_veg)| f64::from(v) < threshold && !is_veg)
            .collect(),
    };
    let mask = closing(&opening(&raw));
    let total = mask.bits.len();
    let ratio = if total == 0 {
        0.0
    } else {
        mask.count() as f64 / total as f64
    };
    Ok((mask, ratio))
}

// ---------------------------------------------------------------------------
// Components

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelBox {
    pub min_col: usize,
    pub min_row: usize,
    pub max_col: usize,
    pub max_row: usize,
}

impl PixelBox {
    pub fn width(&self) -> usize {
        self.max_col - self.min_col + 1
    }

    pub fn height(&self) -> usize {
        self.max_row - self.min_row + 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShadowComponent {
    pub id: usize,
    pub pixel_count: usize,
    pub area_m2: f64,
    /// Larger side of the axis-aligned bounding box, in pixels.
    pub long_axis_px: usize,
    pub short_axis_px: usize,
    pub aspect_ratio: f64,
    /// Exposed 4-neighbour pixel edges.
    pub perimeter_px: usize,
    /// `4 pi A / P^2` with area and perimeter in pixel units.
    pub compactness: f64,
    pub centroid_enu: EnuPoint,
    pub bbox: PixelBox,
}

/// Labels 8-connected regions of set pixels, in raster scan order of their
/// first pixel.
pub fn connected_components(mask: &BinaryMask, frame: &PixelFrame) -> Vec<ShadowComponent> {
    let (w, h) = (mask.width, mask.height);
    let mut visited = vec![false; w * h];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !mask.bits[start] || visited[start] {
            continue;
        }
        visited[start] = true;
        stack.push(start);
        let (mut count, mut perimeter) = (0usize, 0usize);
        let (mut sum_c, mut sum_r) = (0.0, 0.0);
        let mut bbox = PixelBox {
            min_col: usize::MAX,
            min_row: usize::MAX,
            max_col: 0,
            max_row: 0,
        };
        while let Some(idx) = stack.pop() {
            let (c, r) = (idx % w, idx / w);
            count += 1;
            sum_c += c as f64;
            sum_r += r as f64;
            bbox.min_col = bbox.min_col.min(c);
            bbox.max_col = bbox.max_col.max(c);
            bbox.min_row = bbox.min_row.min(r);
            bbox.max_row = bbox.max_row.max(r);

            let set = |cc: isize, rr: isize| {
                cc >= 0
                    && rr >= 0
                    && (cc as usize) < w
                    && (rr as usize) < h
                    && mask.bits[rr as usize * w + cc as usize]
            };
            let (ci, ri) = (c as isize, r as isize);
            for (dc, dr) in [(-1, 0), (1, 0), (0, -1), (0, 1)] {
                if !set(ci + dc, ri + dr) {
                    perimeter += 1;
                }
            }
            for dr in -1..=1 {
                for dc in -1..=1 {
                    if (dc, dr) == (0, 0) || !set(ci + dc, ri + dr) {
                        continue;
                    }
                    let n = (ri + dr) as usize * w + (ci + dc) as usize;
                    if !visited[n] {
                        visited[n] = true;
                        stack.push(n);
                    }
                }
            }
        }
        let long = bbox.width().max(bbox.height());
        let short = bbox.width().min(bbox.height()).max(1);
        let n = count as f64;
        out.push(ShadowComponent {
            id: out.len(),
            pixel_count: count,
            area_m2: n * frame.gsd_m * frame.gsd_m,
            long_axis_px: long,
            short_axis_px: short,
            aspect_ratio: long as f64 / short as f64,
            perimeter_px: perimeter,
            compactness: 4.0 * PI * n / (perimeter as f64).powi(2),
            centroid_enu: frame.pixel_center(sum_c / n, sum_r / n),
            bbox,
        });
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComponentFilter {
    pub min_area_m2: f64,
    pub max_area_m2: f64,
    pub max_aspect_ratio: f64,
    pub min_compactness: f64,
}

impl Default for ComponentFilter {
    fn default() -> Self {
        ComponentFilter {
            min_area_m2: 100.0,
            max_area_m2: 20_000.0,
            max_aspect_ratio: 4.5,
            min_compactness: 0.05,
        }
    }
}

impl ComponentFilter {
    pub fn accepts(&self, c: &ShadowComponent) -> bool {
        c.area_m2 >= self.min_area_m2
            && c.area_m2 <= self.max_area_m2
            && c.aspect_ratio <= self.max_aspect_ratio
            && c.compactness >= self.min_compactness
    }
}

/// Keeps building-like blobs. Limits are in meters, so they follow the GSD
/// the components were measured at.
pub fn filter_components(components: &[ShadowComponent], filter: &ComponentFilter) -> Vec<ShadowComponent> {
    components.iter().filter(|c| filter.accepts(c)).cloned().collect()
}

// ---------------------------------------------------------------------------
// Heights

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeightEstimate {
    pub height_m: f64,
    pub height_pre_clamp_m: f64,
    pub sigma_m: f64,
    pub confidence: f64,
    pub source_component: usize,
}

/// Builds an estimate from an unclamped height, applying the clamp.
pub fn estimate_from_pre_clamp(
    pre_clamp_m: f64,
    sigma_m: f64,
    confidence: f64,
    source_component: usize,
) -> HeightEstimate {
    HeightEstimate {
        height_m: pre_clamp_m.clamp(H_MIN_M, H_MAX_M),
        height_pre_clamp_m: pre_clamp_m,
        sigma_m,
        confidence,
        source_component,
    }
}

fn check_elevation(beta_deg: f64) -> Result<()> {
    if beta_deg > 0.0 && beta_deg < 90.0 {
        Ok(())
    } else {
        Err(Error::invalid(
            "solar_elevation_deg",
            format!("{beta_deg} outside (0, 90)"),
        ))
    }
}

/// `c = min(0.45 + 0.008 beta, 0.78) * (0.6 + 0.4 min(compactness / 0.5, 1))`
pub fn confidence(beta_deg: f64, compactness: f64) -> f64 {
    let base = (0.45 + beta_deg * 0.008).min(0.78);
    base * (0.6 + 0.4 * (compactness / 0.5).min(1.0))
}

/// Pixel-quantization height uncertainty, `tan(beta) * gsd / sqrt(12)`.
pub fn height_uncertainty(beta_deg: f64, gsd_m: f64) -> f64 {
    beta_deg.to_radians().tan() * gsd_m / 12f64.sqrt()
}

pub fn estimate_height(
    component: &ShadowComponent,
    meta: &SceneMetadata,
    params: &ShemParams,
) -> Result<HeightEstimate> {
    let beta = meta.solar_elevation_deg;
    check_elevation(beta)?;
    let pixel_m = params.pixel_m.unwrap_or(meta.gsd_m);
    let shadow_len_m = (component.long_axis_px as f64).min(params.long_axis_max_px) * pixel_m;
    Ok(estimate_from_pre_clamp(
        shadow_len_m * beta.to_radians().tan(),
        height_uncertainty(beta, meta.gsd_m),
        confidence(beta, component.compactness),
        component.id,
    ))
}

/// Approximate building (width, length) in meters from a blob's bounding box.
pub fn footprint_from_blob(component: &ShadowComponent, gsd_m: f64) -> (f64, f64) {
    (
        BLOB_FOOTPRINT_SCALE * component.short_axis_px as f64 * gsd_m,
        BLOB_FOOTPRINT_SCALE * component.long_axis_px as f64 * gsd_m,
    )
}

/// Everything the shadow path produced for one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct ShemOutput {
    pub thresholds: ThresholdSet,
    pub mask: BinaryMask,
    pub shadow_ratio: f64,
    pub components: Vec<ShadowComponent>,
    pub accepted: Vec<ShadowComponent>,
    pub estimates: Vec<HeightEstimate>,
}

impl ShemOutput {
    pub fn component(&self, id: usize) -> Option<&ShadowComponent> {
        self.accepted.iter().find(|c| c.id == id)
    }

    pub fn centroids(&self) -> HashMap<usize, EnuPoint> {
        self.accepted.iter().map(|c| (c.id, c.centroid_enu)).collect()
    }
}

/// Runs mask extraction, labelling, filtering and estimation with thresholds
/// computed over the pixels not set in `exclude`.
pub fn run_shem(
    gray: &GrayRaster,
    veg: &BinaryMask,
    exclude: &BinaryMask,
    frame: &PixelFrame,
    meta: &SceneMetadata,
    params: &ShemParams,
    filter: &ComponentFilter,
) -> Result<ShemOutput> {
    let thresholds = threshold_candidates(gray, exclude)?;
    let (mask, shadow_ratio) = extract_shadow_mask(gray, veg, thresholds.active)?;
    let components = connected_components(&mask, frame);
    let accepted = filter_components(&components, filter);
    let estimates = accepted
        .iter()
        .map(|c| estimate_height(c, meta, params))
        .collect::<Result<Vec<_>>>()?;
    Ok(ShemOutput {
        thresholds,
        mask,
        shadow_ratio,
        components,
        accepted,
        estimates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::UtmPoint;
    use chrono::TimeZone;
    use proptest::prelude::*;

    fn frame(gsd: f64) -> PixelFrame {
        PixelFrame {
            gsd_m: gsd,
            origin_enu: EnuPoint::new(0.0, 0.0),
        }
    }

    fn meta(beta: f64, gsd: f64) -> SceneMetadata {
        SceneMetadata {
            solar_elevation_deg: beta,
            solar_azimuth_deg: 180.0,
            gsd_m: gsd,
            cloud_fraction: 0.0,
            acquisition_time: chrono::Utc.with_ymd_and_hms(2023, 4, 26, 10, 16, 1).unwrap(),
            source_label: "test".into(),
        }
    }

    fn mask_from(rows: &[&str]) -> BinaryMask {
        let h = rows.len();
        let w = rows[0].len();
        BinaryMask::from_fn(w, h, |c, r| rows[r].as_bytes()[c] == b'#')
    }

    fn component_with_axis(long: usize, compactness: f64) -> ShadowComponent {
        ShadowComponent {
            id: 0,
            pixel_count: long,
            area_m2: 0.0,
            long_axis_px: long,
            short_axis_px: 1,
            aspect_ratio: long as f64,
            perimeter_px: 0,
            compactness,
            centroid_enu: EnuPoint::default(),
            bbox: PixelBox { min_col: 0, min_row: 0, max_col: long - 1, max_row: 0 },
        }
    }

    #[test]
    fn vegetation_examples() {
        assert!(is_vegetation([0, 255, 0]));
        assert!(!is_vegetation([128, 128, 128]));
        assert!(!is_vegetation([0, 0, 255]));
        assert!(!is_vegetation([255, 255, 0])); // 60 deg -> 30 on the half scale
        assert!(is_vegetation([60, 110, 50]));
        assert!(!is_vegetation([100, 110, 100])); // green hue but too grey
    }

    #[test]
    fn luminance_extremes_and_mid_grey() {
        let r = RgbRaster::new(
            3,
            1,
            vec![0, 0, 0, 255, 255, 255, 119, 119, 119],
            1.0,
            UtmPoint::new(500000.0, 0.0, "32N"),
        )
        .unwrap();
        let g = luminance_channel(&r);
        assert_eq!(g.values[0], 0);
        assert_eq!(g.values[1], 255);
        // Reference colorimetry: sRGB 119 grey has L* = 50.03 (D65), i.e. 127.6 -> 128.
        assert_eq!(g.values[2], 128);
        assert!((lightness([119, 119, 119]) - 50.03).abs() < 0.01);
    }

    #[test]
    fn bimodal_valley_and_clamp() {
        // 20 % at 50, 80 % at 200.
        let mut v = vec![50u8; 20];
        v.extend(vec![200u8; 80]);
        let g = GrayRaster::new(10, 10, v, 1.0).unwrap();
        let t = threshold_candidates(&g, &BinaryMask::empty(10, 10)).unwrap();
        assert_eq!(t.valley, Some(62.0));
        // mean 170, std 60 -> adaptive 92; p25 200.
        assert!((t.adaptive - 92.0).abs() < 1e-9);
        assert_eq!(t.p25, 200.0);
        assert_eq!(t.active, 92.0);

        // 30 % at 50 pulls the adaptive threshold below the valley.
        let mut v = vec![50u8; 30];
        v.extend(vec![200u8; 70]);
        let g = GrayRaster::new(10, 10, v, 1.0).unwrap();
        let t = threshold_candidates(&g, &BinaryMask::empty(10, 10)).unwrap();
        assert_eq!(t.valley, Some(62.0));
        // adaptive = 155 - 1.3 * 150 * sqrt(0.21) = 65.64; p25 = 50.
        assert!((t.adaptive - (155.0 - 1.3 * 150.0 * 0.21f64.sqrt())).abs() < 1e-9);
        assert_eq!(t.active, 62.0);
    }

    #[test]
    fn valley_below_adaptive_is_clipped_up() {
        // Left peak at 30 (valley 42) with adaptive well above it.
        let mut v = vec![30u8; 5];
        v.extend(vec![125u8; 10]);
        v.extend(vec![150u8; 85]);
        let g = GrayRaster::new(10, 10, v, 1.0).unwrap();
        let t = threshold_candidates(&g, &BinaryMask::empty(10, 10)).unwrap();
        assert_eq!(t.valley, Some(42.0));
        assert!(t.adaptive > 42.0 && t.adaptive < t.p25);
        assert_eq!(t.active, t.adaptive);
    }

    #[test]
    fn no_dark_pixels_falls_back_to_adaptive() {
        let mut v = vec![130u8; 50];
        v.extend(vec![200u8; 50]);
        let g = GrayRaster::new(10, 10, v, 1.0).unwrap();
        let t = threshold_candidates(&g, &BinaryMask::empty(10, 10)).unwrap();
        assert_eq!(t.valley, None);
        assert_eq!(t.active, t.adaptive);
    }

    #[test]
    fn all_excluded_is_an_error() {
        let g = GrayRaster::new(2, 2, vec![10; 4], 1.0).unwrap();
        let all = BinaryMask::from_fn(2, 2, |_, _| true);
        assert!(threshold_candidates(&g, &all).is_err());
    }

    #[test]
    fn otsu_two_clusters() {
        let mut hist = [0u64; 256];
        hist[40] = 100;
        hist[200] = 100;
        assert_eq!(otsu_threshold(&hist), 40);
    }

    #[test]
    fn bright_raster_gives_empty_mask() {
        let g = GrayRaster::new(5, 5, vec![200; 25], 1.0).unwrap();
        let (m, ratio) = extract_shadow_mask(&g, &BinaryMask::empty(5, 5), 100.0).unwrap();
        assert_eq!(m.count(), 0);
        assert_eq!(ratio, 0.0);
    }

    #[test]
    fn isolated_pixel_removed_by_opening() {
        let mut v = vec![200u8; 49];
        v[24] = 10;
        let g = GrayRaster::new(7, 7, v, 1.0).unwrap();
        let (_, ratio) = extract_shadow_mask(&g, &BinaryMask::empty(7, 7), 100.0).unwrap();
        assert_eq!(ratio, 0.0);
    }

    #[test]
    fn vegetation_never_becomes_shadow_seed() {
        let g = GrayRaster::new(6, 6, vec![10; 36], 1.0).unwrap();
        let veg = BinaryMask::from_fn(6, 6, |_, _| true);
        let (m, _) = extract_shadow_mask(&g, &veg, 100.0).unwrap();
        assert_eq!(m.count(), 0);
    }

    #[test]
    fn block_survives_open_close() {
        let m = mask_from(&[
            "..........",
            "..........",
            "..####....",
            "..####....",
            "..####....",
            "..........",
            "..........",
            ".......#..",
            "..........",
        ]);
        let out = closing(&opening(&m));
        assert_eq!(out.count(), 12);
        assert!(!out.get(7, 7));
    }

    #[test]
    fn components_basics() {
        assert!(connected_components(&BinaryMask::empty(4, 4), &frame(1.0)).is_empty());

        let rect = mask_from(&[".....", ".###.", ".###.", "....."]);
        let comps = connected_components(&rect, &frame(10.0));
        assert_eq!(comps.len(), 1);
        let c = &comps[0];
        assert_eq!(c.pixel_count, 6);
        assert_eq!(c.long_axis_px, 3);
        assert_eq!(c.short_axis_px, 2);
        assert!((c.aspect_ratio - 1.5).abs() < 1e-12);
        assert_eq!(c.perimeter_px, 10);
        assert!((c.compactness - 4.0 * PI * 6.0 / 100.0).abs() < 1e-12);
        assert!((c.area_m2 - 600.0).abs() < 1e-9);
        assert_eq!(c.centroid_enu, EnuPoint::new(20.0, -15.0));

        let diag = mask_from(&["#.", ".#"]);
        assert_eq!(connected_components(&diag, &frame(1.0)).len(), 1);
        let apart = mask_from(&["#..", "..#"]);
        assert_eq!(connected_components(&apart, &frame(1.0)).len(), 2);
    }

    #[test]
    fn filter_examples() {
        let f = ComponentFilter::default();
        let two = mask_from(&["##"]);
        let c = &connected_components(&two, &frame(10.0))[0];
        assert_eq!(c.area_m2, 200.0);
        assert!(f.accepts(c));
        let one = mask_from(&["#"]);
        let c = &connected_components(&one, &frame(10.0))[0];
        assert_eq!(c.area_m2, 100.0);
        assert!(f.accepts(c));
        let line: String = "#".repeat(300);
        let thin = BinaryMask::from_fn(300, 25, |col, row| row == 12 && line.as_bytes()[col] == b'#');
        let c = &connected_components(&thin, &frame(1.0))[0];
        assert!(c.aspect_ratio > 4.5);
        assert!(filter_components(std::slice::from_ref(c), &f).is_empty());
    }

    #[test]
    fn height_examples() {
        let p = ShemParams::default();
        let e = estimate_height(&component_with_axis(2, 0.5), &meta(45.0, 10.0), &p).unwrap();
        assert!((e.height_m - 20.0).abs() < 1e-9);

        let e = estimate_height(&component_with_axis(5, 0.5), &meta(56.19, 10.0), &p).unwrap();
        let expected = 35.0 * 56.19f64.to_radians().tan();
        assert!((e.height_pre_clamp_m - expected).abs() < 1e-9);
        assert!((e.height_pre_clamp_m - 52.3).abs() < 0.05);
        assert_eq!(e.height_m, 35.0);

        let e = estimate_height(&component_with_axis(1, 0.5), &meta(10.0, 10.0), &p).unwrap();
        assert!((e.height_pre_clamp_m - 1.763).abs() < 1e-3);
        assert_eq!(e.height_m, 3.0);
    }

    #[test]
    fn fixed_pixel_size_overrides_gsd() {
        let p = ShemParams { long_axis_max_px: 3.5, pixel_m: Some(10.0) };
        let e = estimate_height(&component_with_axis(12, 0.5), &meta(56.19, 0.93), &p).unwrap();
        assert!((e.height_pre_clamp_m - 52.3).abs() < 0.05);
        // sigma still follows the imagery GSD
        assert!((e.sigma_m - 0.40).abs() < 0.01);
    }

    #[test]
    fn degenerate_elevation_rejected() {
        let c = component_with_axis(2, 0.5);
        for beta in [0.0, 90.0, -5.0] {
            assert!(estimate_height(&c, &meta(beta, 10.0), &ShemParams::default()).is_err());
        }
    }

    #[test]
    fn confidence_examples() {
        assert!((confidence(56.19, 0.5) - 0.78).abs() < 1e-12);
        assert!((confidence(30.0, 0.25) - 0.552).abs() < 1e-12);
        assert!((confidence(56.19, 1e-9) - 0.6 * 0.78).abs() < 1e-6);
    }

    #[test]
    fn uncertainty_examples() {
        assert!((height_uncertainty(56.19, 10.0) - 4.31).abs() < 0.01);
        assert!((height_uncertainty(56.19, 0.93) - 0.40).abs() < 0.005);
        assert!((height_uncertainty(30.0, 10.0) - 1.667).abs() < 1e-3);
    }

    #[test]
    fn blob_footprint() {
        let rect = mask_from(&["###", "###"]);
        let c = &connected_components(&rect, &frame(10.0))[0];
        let (w, l) = footprint_from_blob(c, 10.0);
        assert!((w - 14.0).abs() < 1e-9 && (l - 21.0).abs() < 1e-9);
        let dot = &connected_components(&mask_from(&["#"]), &frame(10.0))[0];
        let (w, l) = footprint_from_blob(dot, 10.0);
        assert!((w - 7.0).abs() < 1e-9 && (l - 7.0).abs() < 1e-9);
    }

    fn arb_mask() -> impl Strategy<Value = BinaryMask> {
        (1usize..24, 1usize..24).prop_flat_map(|(w, h)| {
            prop::collection::vec(any::<bool>(), w * h)
                .prop_map(move |bits| BinaryMask { width: w, height: h, bits })
        })
    }

    proptest! {
        #[test]
        fn estimate_always_within_clamp(long in 1usize..50, beta in 0.5f64..89.5, gsd in 0.1f64..30.0) {
            let e = estimate_height(&component_with_axis(long, 0.3), &meta(beta, gsd), &ShemParams::default()).unwrap();
            prop_assert!(e.height_m >= H_MIN_M && e.height_m <= H_MAX_M);
        }

        #[test]
        fn pre_clamp_monotone(long in 1usize..10, beta in 1.0f64..80.0, gsd in 0.5f64..20.0, db in 0.0f64..9.0) {
            let p = ShemParams::default();
            let a = estimate_height(&component_with_axis(long, 0.3), &meta(beta, gsd), &p).unwrap();
            let b = estimate_height(&component_with_axis(long + 1, 0.3), &meta(beta, gsd), &p).unwrap();
            let c = estimate_height(&component_with_axis(long, 0.3), &meta(beta + db, gsd), &p).unwrap();
            prop_assert!(b.height_pre_clamp_m >= a.height_pre_clamp_m);
            prop_assert!(c.height_pre_clamp_m >= a.height_pre_clamp_m);
        }

        #[test]
        fn confidence_shape(beta in 0.1f64..89.9, db in 0.0f64..40.0, comp in 0.001f64..1.0, dc in 0.0f64..1.0) {
            let b2 = (beta + db).min(89.9);
            prop_assert!(confidence(b2, comp) >= confidence(beta, comp) - 1e-12);
            prop_assert!(confidence(beta, comp + dc) >= confidence(beta, comp) - 1e-12);
            if beta >= 41.25 {
                prop_assert!((confidence(beta, comp) - confidence(89.0, comp)).abs() < 1e-12);
            }
            if comp >= 0.5 {
                prop_assert!((confidence(beta, comp) - confidence(beta, 0.9)).abs() < 1e-12);
            }
            prop_assert!(confidence(beta, comp) > 0.0 && confidence(beta, comp) <= 0.78 + 1e-12);
        }

        #[test]
        fn uncertainty_linear_in_gsd(beta in 1.0f64..85.0, gsd in 0.1f64..20.0, k in 0.1f64..10.0) {
            let a = height_uncertainty(beta, gsd);
            let b = height_uncertainty(beta, gsd * k);
            prop_assert!((b - k * a).abs() <= 1e-9 * b.abs().max(1.0));
        }

        #[test]
        fn lower_threshold_never_adds_shadow(values in prop::collection::vec(any::<u8>(), 64), t in 1.0f64..255.0, dt in 0.0f64..100.0) {
            let g = GrayRaster::new(8, 8, values, 1.0).unwrap();
            let veg = BinaryMask::empty(8, 8);
            let (_, hi) = extract_shadow_mask(&g, &veg, t).unwrap();
            let (_, lo) = extract_shadow_mask(&g, &veg, (t - dt).max(0.0)).unwrap();
            prop_assert!(lo <= hi);
        }

        #[test]
        fn open_close_idempotent(m in arb_mask()) {
            let once = closing(&opening(&m));
            let twice = closing(&opening(&once));
            prop_assert_eq!(&once, &twice);
            prop_assert_eq!(opening(&opening(&m)), opening(&m));
            prop_assert_eq!(closing(&closing(&m)), closing(&m));
        }

        #[test]
        fn component_invariants(m in arb_mask()) {
            let comps = connected_components(&m, &frame(1.0));
            prop_assert_eq!(comps.iter().map(|c| c.pixel_count).sum::<usize>(), m.count());
            for c in comps {
                prop_assert!(c.compactness > 0.0 && c.compactness <= 1.05);
                prop_assert!(c.aspect_ratio >= 1.0);
            }
        }
    }
}
