//! Synthetic scenes with known building heights.
//!
//! Buildings are axis-aligned boxes; each casts a parallel-projected shadow
//! (its footprint swept along the anti-solar ground vector). Surfaces are
//! flat grey at a target L* level, so the rendered luminance channel is
//! known exactly when noise is off.

use chrono::{DateTime, Utc};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::UtmPoint;
use crate::ingest::SceneMetadata;
use crate::raster::RgbRaster;
use crate::shem::lightness;

/// Axis-aligned rectangle in scene meters: `e` grows east from the western
/// edge, `n` grows north from the southern edge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min_e: f64,
    pub min_n: f64,
    pub max_e: f64,
    pub max_n: f64,
}

impl Rect {
    pub fn contains(&self, e: f64, n: f64) -> bool {
        e >= self.min_e && e <= self.max_e && n >= self.min_n && n <= self.max_n
    }

    fn valid(&self) -> bool {
        [self.min_e, self.min_n, self.max_e, self.max_n]
            .iter()
            .all(|v| v.is_finite())
            && self.min_e < self.max_e
            && self.min_n < self.max_n
    }

    fn within(&self, width_m: f64, height_m: f64) -> bool {
        self.min_e >= 0.0 && self.min_n >= 0.0 && self.max_e <= width_m && self.max_n <= height_m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthBuilding {
    #[serde(default)]
    pub id: Option<String>,
    pub footprint: Rect,
    pub height_m: f64,
}

/// Surface brightness on the 0..=255 L* scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Luminances {
    pub ground: f64,
    pub roof: f64,
    pub shadow: f64,
    /// Dark non-shadow surfaces (water, asphalt); defaults to the shadow level.
    pub dark_patch: Option<f64>,
}

impl Default for Luminances {
    fn default() -> Self {
        Luminances {
            ground: 150.0,
            roof: 170.0,
            shadow: 60.0,
            dark_patch: None,
        }
    }
}

const VEGETATION_RGB: [u8; 3] = [70, 120, 50];

fn default_zone() -> String {
    "32N".into()
}

fn default_origin_e() -> f64 {
    500_000.0
}

fn default_origin_n() -> f64 {
    5_000_000.0
}

fn default_time() -> DateTime<Utc> {
    DateTime::parse_from_rfc3339("2023-04-26T10:16:01Z")
        .expect("valid literal")
        .with_timezone(&Utc)
}

fn default_source() -> String {
    "synthetic".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub width_m: f64,
    pub height_m: f64,
    pub gsd_m: f64,
    pub solar_elevation_deg: f64,
    pub solar_azimuth_deg: f64,
    #[serde(default)]
    pub buildings: Vec<SynthBuilding>,
    #[serde(default)]
    pub luminance: Luminances,
    #[serde(default)]
    pub vegetation: Vec<Rect>,
    /// Flat dark areas that are not shadows.
    #[serde(default)]
    pub dark_patches: Vec<Rect>,
    #[serde(default)]
    pub noise_std: f64,
    #[serde(default)]
    pub seed: u64,
    /// UTM position of the scene's south-west corner.
    #[serde(default = "default_origin_e")]
    pub origin_easting: f64,
    #[serde(default = "default_origin_n")]
    pub origin_northing: f64,
    #[serde(default = "default_zone")]
    pub zone_label: String,
    #[serde(default)]
    pub cloud_fraction: f64,
    #[serde(default = "default_time")]
    pub acquisition_time: DateTime<Utc>,
    #[serde(default = "default_source")]
    pub source_label: String,
}

impl SceneSpec {
    pub fn new(width_m: f64, height_m: f64, gsd_m: f64, beta_deg: f64, azimuth_deg: f64) -> Self {
        SceneSpec {
            width_m,
            height_m,
            gsd_m,
            solar_elevation_deg: beta_deg,
            solar_azimuth_deg: azimuth_deg,
            buildings: Vec::new(),
            luminance: Luminances::default(),
            vegetation: Vec::new(),
            dark_patches: Vec::new(),
            noise_std: 0.0,
            seed: 0,
            origin_easting: default_origin_e(),
            origin_northing: default_origin_n(),
            zone_label: default_zone(),
            cloud_fraction: 0.0,
            acquisition_time: default_time(),
            source_label: default_source(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let spec: SceneSpec = serde_path_to_error::deserialize(de)
            .map_err(|e| Error::Malformed(format!("scene spec at {}: {}", e.path(), e.inner())))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        for (key, v) in [("width_m", self.width_m), ("height_m", self.height_m), ("gsd_m", self.gsd_m)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(key, format!("{v} must be > 0")));
            }
        }
        if !(self.solar_elevation_deg > 0.0 && self.solar_elevation_deg < 90.0) {
            return Err(Error::invalid("solar_elevation_deg", "must be in (0, 90)"));
        }
        if !self.solar_azimuth_deg.is_finite() {
            return Err(Error::invalid("solar_azimuth_deg", "not finite"));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(Error::invalid("noise_std", "must be >= 0"));
        }
        let lum = &self.luminance;
        if lum.shadow.partial_cmp(&lum.ground) != Some(std::cmp::Ordering::Less) {
            return Err(Error::invalid("luminance", "shadow must be darker than ground"));
        }
        for (i, b) in self.buildings.iter().enumerate() {
            if !(b.footprint.valid() && b.footprint.within(self.width_m, self.height_m)) {
                return Err(Error::invalid(
                    format!("buildings[{i}].footprint"),
                    "empty or outside the scene",
                ));
            }
            if !(b.height_m.is_finite() && b.height_m > 0.0) {
                return Err(Error::invalid(format!("buildings[{i}].height_m"), "must be > 0"));
            }
        }
        for (name, rects) in [("vegetation", &self.vegetation), ("dark_patches", &self.dark_patches)] {
            if let Some(i) = rects.iter().position(|r| !r.valid()) {
                return Err(Error::invalid(format!("{name}[{i}]"), "empty rectangle"));
            }
        }
        Ok(())
    }

    pub fn raster_size(&self) -> (usize, usize) {
        (
            (self.width_m / self.gsd_m).round().max(1.0) as usize,
            (self.height_m / self.gsd_m).round().max(1.0) as usize,
        )
    }

    /// Scene coordinates of a pixel center. Row 0 is the northern edge.
    pub fn pixel_center(&self, col: usize, row: usize) -> (f64, f64) {
        let (_, rows) = self.raster_size();
        (
            (col as f64 + 0.5) * self.gsd_m,
            (rows as f64 - row as f64 - 0.5) * self.gsd_m,
        )
    }

    pub fn metadata(&self) -> SceneMetadata {
        SceneMetadata {
            solar_elevation_deg: self.solar_elevation_deg,
            solar_azimuth_deg: self.solar_azimuth_deg,
            gsd_m: self.gsd_m,
            cloud_fraction: self.cloud_fraction,
            acquisition_time: self.acquisition_time,
            source_label: self.source_label.clone(),
        }
    }

    fn building_id(&self, i: usize) -> String {
        self.buildings[i]
            .id
            .clone()
            .unwrap_or_else(|| format!("synth-{i:04}"))
    }
}

/// Ground vector (east, north) of the shadow cast by a point `height_m`
/// above ground: length `h / tan(beta)`, pointing away from the sun.
pub fn shadow_extent(height_m: f64, beta_deg: f64, azimuth_deg: f64) -> Result<[f64; 2]> {
    if !(beta_deg > 0.0 && beta_deg < 90.0) {
        return Err(Error::invalid("solar_elevation_deg", format!("{beta_deg} outside (0, 90)")));
    }
    let len = height_m / beta_deg.to_radians().tan();
    let az = azimuth_deg.to_radians();
    Ok([-az.sin() * len, -az.cos() * len])
}

/// True when `(e, n) - t * v` lies in `rect` for some `t` in `[0, 1]`.
fn in_sweep(rect: &Rect, v: [f64; 2], e: f64, n: f64) -> bool {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for (p, d, min, max) in [(e, v[0], rect.min_e, rect.max_e), (n, v[1], rect.min_n, rect.max_n)] {
        if d.abs() < 1e-12 {
            if p < min || p > max {
                return false;
            }
        } else {
            let (a, b) = ((p - max) / d, (p - min) / d);
            lo = lo.max(a.min(b));
            hi = hi.min(a.max(b));
        }
    }
    lo <= hi
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Surface {
    Ground,
    Vegetation,
    DarkPatch,
    Shadow,
    Roof,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRow {
    pub id: String,
    pub min_easting: f64,
    pub min_northing: f64,
    pub max_easting: f64,
    pub max_northing: f64,
    pub height_m: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedScene {
    pub raster: RgbRaster,
    /// Surface painted at each pixel, row-major.
    pub surfaces: Vec<Surface>,
    pub truth: Vec<TruthRow>,
}

impl RenderedScene {
    pub fn count(&self, s: Surface) -> usize {
        self.surfaces.iter().filter(|&&x| x == s).count()
    }
}

/// Grey level whose L* byte is closest to `target`, for every target byte.
fn grey_for_luminance() -> [u8; 256] {
    let levels: Vec<f64> = (0..=255u8)
        .map(|v| lightness([v, v, v]) * 255.0 / 100.0)
        .collect();
    let mut lut = [0u8; 256];
    for (target, slot) in lut.iter_mut().enumerate() {
        let t = target as f64;
        *slot = (0..=255usize)
            .min_by(|&a, &b| (levels[a].round() - t).abs().total_cmp(&(levels[b].round() - t).abs()))
            .unwrap() as u8;
    }
    lut
}

/// Which surface is visible at a scene point.
pub fn surface_at(spec: &SceneSpec, shadows: &[[f64; 2]], e: f64, n: f64) -> Surface {
    if spec.buildings.iter().any(|b| b.footprint.contains(e, n)) {
        Surface::Roof
    } else if spec
        .buildings
        .iter()
        .zip(shadows)
        .any(|(b, v)| in_sweep(&b.footprint, *v, e, n))
    {
        Surface::Shadow
    } else if spec.dark_patches.iter().any(|r| r.contains(e, n)) {
        Surface::DarkPatch
    } else if spec.vegetation.iter().any(|r| r.contains(e, n)) {
        Surface::Vegetation
    } else {
        Surface::Ground
    }
}

pub fn render_scene(spec: &SceneSpec) -> Result<RenderedScene> {
    spec.validate()?;
    let (cols, rows) = spec.raster_size();
    let shadows = spec
        .buildings
        .iter()
        .map(|b| shadow_extent(b.height_m, spec.solar_elevation_deg, spec.solar_azimuth_deg))
        .collect::<Result<Vec<_>>>()?;
    let lut = grey_for_luminance();
    let lum = spec.luminance;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| Error::invalid("noise_std", e.to_string()))?;

    let mut pixels = Vec::with_capacity(cols * rows * 3);
    let mut surfaces = Vec::with_capacity(cols * rows);
    for row in 0..rows {
        for col in 0..cols {
            let (e, n) = spec.pixel_center(col, row);
            let s = surface_at(spec, &shadows, e, n);
            surfaces.push(s);
            if s == Surface::Vegetation {
                pixels.extend_from_slice(&VEGETATION_RGB);
                continue;
            }
            let target = match s {
                Surface::Roof => lum.roof,
                Surface::Shadow => lum.shadow,
                Surface::DarkPatch => lum.dark_patch.unwrap_or(lum.shadow),
                _ => lum.ground,
            };
            let jitter = if spec.noise_std > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            let level = lut[(target + jitter).round().clamp(0.0, 255.0) as usize];
            pixels.extend_from_slice(&[level, level, level]);
        }
    }

    let origin = UtmPoint::new(
        spec.origin_easting + 0.5 * spec.gsd_m,
        spec.origin_northing + rows as f64 * spec.gsd_m - 0.5 * spec.gsd_m,
        spec.zone_label.clone(),
    );
    let raster = RgbRaster::new(cols, rows, pixels, spec.gsd_m, origin)?;
    let truth = spec
        .buildings
        .iter()
        .enumerate()
        .map(|(i, b)| TruthRow {
            id: spec.building_id(i),
            min_easting: spec.origin_easting + b.footprint.min_e,
            min_northing: spec.origin_northing + b.footprint.min_n,
            max_easting: spec.origin_easting + b.footprint.max_e,
            max_northing: spec.origin_northing + b.footprint.max_n,
            height_m: b.height_m,
            seed: spec.seed,
        })
        .collect();
    Ok(RenderedScene {
        raster,
        surfaces,
        truth,
    })
}

pub fn truth_csv(rows: &[TruthRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(["id", "min_easting", "min_northing", "max_easting", "max_northing", "height_m", "seed"])
            .map_err(|e| Error::Malformed(e.to_string()))?;
    }
    for r in rows {
        w.serialize(r).map_err(|e| Error::Malformed(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Malformed(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}
