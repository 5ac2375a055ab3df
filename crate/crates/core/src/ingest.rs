//! Readers for the five input streams: footprints (GeoJSON), UAV and vehicle
//! trajectories (CSV), scene metadata (flat JSON) and imagery (PNG / PPM P6
//! with a `<stem>.meta.json` georeference sidecar).
//!
//! Feature- and row-level defects are skipped and reported through
//! diagnostics; only document-level problems abort a parse.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::geo::{TrackPoint, UtmPoint};
use crate::raster::RgbRaster;

#[derive(Debug, Clone, PartialEq)]
pub struct SceneMetadata {
    pub solar_elevation_deg: f64,
    pub solar_azimuth_deg: f64,
    pub gsd_m: f64,
    pub cloud_fraction: f64,
    pub acquisition_time: DateTime<Utc>,
    pub source_label: String,
}

impl SceneMetadata {
    pub fn validate(&self) -> Result<()> {
        check_range("solar_elevation_deg", self.solar_elevation_deg, 0.0, 90.0)?;
        check_range("cloud_fraction", self.cloud_fraction, 0.0, 1.0)?;
        if !(self.solar_azimuth_deg.is_finite()) {
            return Err(Error::invalid("solar_azimuth_deg", "not finite"));
        }
        if !(self.gsd_m.is_finite() && self.gsd_m > 0.0) {
            return Err(Error::invalid("gsd_m", format!("{} must be > 0", self.gsd_m)));
        }
        Ok(())
    }
}

fn check_range(key: &str, v: f64, lo: f64, hi: f64) -> Result<()> {
    if v.is_finite() && v >= lo && v <= hi {
        Ok(())
    } else {
        Err(Error::invalid(key, format!("{v} outside [{lo}, {hi}]")))
    }
}

pub fn parse_scene_metadata(text: &str) -> Result<SceneMetadata> {
    let doc: Value = serde_json::from_str(text)
        .map_err(|e| Error::Malformed(format!("scene metadata line {}: {e}", e.line())))?;
    let obj = doc
        .as_object()
        .ok_or_else(|| Error::Malformed("scene metadata must be a JSON object".into()))?;

    let number = |key: &str| -> Result<f64> {
        let v = obj.get(key).ok_or_else(|| Error::MissingField(key.into()))?;
        match v {
            Value::Number(n) => n.as_f64().ok_or_else(|| Error::invalid(key, "not a number")),
            Value::String(s) => s
                .trim()
                .parse()
                .map_err(|_| Error::invalid(key, format!("`{s}` is not a number"))),
            _ => Err(Error::invalid(key, "not a number")),
        }
    };
    let text_field = |key: &str| -> Result<String> {
        match obj.get(key) {
            Some(Value::String(s)) => Ok(s.clone()),
            Some(_) => Err(Error::invalid(key, "not a string")),
            None => Err(Error::MissingField(key.into())),
        }
    };

    let time_text = text_field("acquisition_time")?;
    let acquisition_time = DateTime::parse_from_rfc3339(time_text.trim())
        .map_err(|e| Error::invalid("acquisition_time", e.to_string()))?
        .with_timezone(&Utc);

    let meta = SceneMetadata {
        solar_elevation_deg: number("solar_elevation_deg")?,
        solar_azimuth_deg: number("solar_azimuth_deg")?,
        gsd_m: number("gsd_m")?,
        cloud_fraction: number("cloud_fraction")?,
        acquisition_time,
        source_label: text_field("source_label")?,
    };
    meta.validate()?;
    Ok(meta)
}

pub fn scene_metadata_to_json(meta: &SceneMetadata) -> String {
    let doc = serde_json::json!({
        "solar_elevation_deg": meta.solar_elevation_deg,
        "solar_azimuth_deg": meta.solar_azimuth_deg,
        "gsd_m": meta.gsd_m,
        "cloud_fraction": meta.cloud_fraction,
        "acquisition_time": meta.acquisition_time.to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        "source_label": meta.source_label,
    });
    serde_json::to_string_pretty(&doc).expect("metadata serializes")
}

// ---------------------------------------------------------------------------
// Footprints

#[derive(Debug, Clone, PartialEq)]
pub struct Footprint {
    pub id: String,
    /// Closed exterior ring; the first vertex is repeated at the end.
    pub ring: Vec<UtmPoint>,
    pub height_tag_m: Option<f64>,
    pub levels_tag: Option<f64>,
    pub building_type: String,
}

impl Footprint {
    fn coords(&self) -> Vec<(f64, f64)> {
        // Relative to the first vertex so shoelace sums stay well conditioned.
        let (e0, n0) = (self.ring[0].easting, self.ring[0].northing);
        self.ring
            .iter()
            .map(|p| (p.easting - e0, p.northing - n0))
            .collect()
    }

    pub fn area_m2(&self) -> f64 {
        signed_area(&self.coords()).abs()
    }

    /// Area-weighted polygon centroid.
    pub fn centroid(&self) -> UtmPoint {
        let c = self.coords();
        let a = signed_area(&c);
        let (mut cx, mut cy) = (0.0, 0.0);
        for w in c.windows(2) {
            let cross = w[0].0 * w[1].1 - w[1].0 * w[0].1;
            cx += (w[0].0 + w[1].0) * cross;
            cy += (w[0].1 + w[1].1) * cross;
        }
        let first = &self.ring[0];
        UtmPoint::new(
            first.easting + cx / (6.0 * a),
            first.northing + cy / (6.0 * a),
            first.zone_label.clone(),
        )
    }

    pub fn validate(&self) -> std::result::Result<(), RingDefect> {
        validate_ring(&self.coords())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RingDefect {
    TooFewVertices,
    Open,
    SelfIntersecting,
    ZeroArea,
}

impl fmt::Display for RingDefect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RingDefect::TooFewVertices => "ring has fewer than 4 vertices",
            RingDefect::Open => "ring is not closed",
            RingDefect::SelfIntersecting => "ring self-intersects",
            RingDefect::ZeroArea => "ring has zero area",
        })
    }
}

fn signed_area(c: &[(f64, f64)]) -> f64 {
    c.windows(2)
        .map(|w| w[0].0 * w[1].1 - w[1].0 * w[0].1)
        .sum::<f64>()
        / 2.0
}

fn orient(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> f64 {
    (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)
}

fn on_segment(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> bool {
    p.0 >= a.0.min(b.0) && p.0 <= a.0.max(b.0) && p.1 >= a.1.min(b.1) && p.1 <= a.1.max(b.1)
}

fn segments_intersect(p1: (f64, f64), p2: (f64, f64), q1: (f64, f64), q2: (f64, f64)) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(q1, q2, p1))
        || (d2 == 0.0 && on_segment(q1, q2, p2))
        || (d3 == 0.0 && on_segment(p1, p2, q1))
        || (d4 == 0.0 && on_segment(p1, p2, q2))
}

/// Validity rules for a footprint ring: closed, at least four vertices
/// (three distinct plus the closing repeat), simple, and positive area.
pub fn validate_ring(c: &[(f64, f64)]) -> std::result::Result<(), RingDefect> {
    if c.len() < 4 {
        return Err(RingDefect::TooFewVertices);
    }
    if c.first() != c.last() {
        return Err(RingDefect::Open);
    }
    let edges = c.len() - 1;
    for i in 0..edges {
        for j in (i + 2)..edges {
            if i == 0 && j == edges - 1 {
                continue; // first and last edges share the closing vertex
            }
            if segments_intersect(c[i], c[i + 1], c[j], c[j + 1]) {
                return Err(RingDefect::SelfIntersecting);
            }
        }
    }
    if signed_area(c).abs() <= f64::EPSILON {
        return Err(RingDefect::ZeroArea);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub enum FootprintIssue {
    /// The feature was dropped.
    Dropped(String),
    /// The feature was kept but a tag could not be read.
    UnreadableTag { key: String, raw: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FootprintDiagnostic {
    pub feature_index: usize,
    pub id: Option<String>,
    pub issue: FootprintIssue,
}

impl fmt::Display for FootprintDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "features[{}]", self.feature_index)?;
        if let Some(id) = &self.id {
            write!(f, " ({id})")?;
        }
        match &self.issue {
            FootprintIssue::Dropped(why) => write!(f, ": dropped, {why}"),
            FootprintIssue::UnreadableTag { key, raw } => {
                write!(f, ": ignored unreadable `{key}` tag `{raw}`")
            }
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParsedFootprints {
    pub footprints: Vec<Footprint>,
    pub diagnostics: Vec<FootprintDiagnostic>,
}

impl ParsedFootprints {
    pub fn dropped(&self) -> usize {
        self.diagnostics
            .iter()
            .filter(|d| matches!(d.issue, FootprintIssue::Dropped(_)))
            .count()
    }
}

/// Reads free-text OSM numeric tags: `"12"`, `"12 m"`, `"12.0"`, `"12,5"`.
pub fn parse_numeric_tag(v: &Value) -> Option<f64> {
    let x = match v {
        Value::Number(n) => n.as_f64()?,
        Value::String(s) => {
            let trimmed = s
                .trim()
                .trim_end_matches(|c: char| c.is_alphabetic() || c.is_whitespace() || c == '.');
            let normalized = if trimmed.contains('.') {
                trimmed.to_string()
            } else {
                trimmed.replace(',', ".")
            };
            normalized.parse().ok()?
        }
        _ => return None,
    };
    x.is_finite().then_some(x)
}

fn feature_id(feature: &Value, props: Option<&serde_json::Map<String, Value>>) -> Option<String> {
    let as_text = |v: &Value| match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    };
    feature
        .get("id")
        .and_then(as_text)
        .or_else(|| props.and_then(|p| p.get("@id")).and_then(as_text))
        .or_else(|| props.and_then(|p| p.get("id")).and_then(as_text))
}

/// Parses a GeoJSON FeatureCollection of Polygon features whose coordinates
/// are already UTM meters in `zone_label`.
pub fn parse_footprints(document: &str, zone_label: &str) -> Result<ParsedFootprints> {
    let doc: Value = serde_json::from_str(document).map_err(|e| {
        Error::Malformed(format!(
            "footprint GeoJSON line {} column {}: {e}",
            e.line(),
            e.column()
        ))
    })?;
    if doc.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(Error::Malformed(
            "footprint document is not a GeoJSON FeatureCollection".into(),
        ));
    }
    let features = doc
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Malformed("FeatureCollection has no `features` array".into()))?;

    let mut out = ParsedFootprints::default();
    for (index, feature) in features.iter().enumerate() {
        let props = feature.get("properties").and_then(Value::as_object);
        let id = feature_id(feature, props);
        let drop = |out: &mut ParsedFootprints, why: String| {
            out.diagnostics.push(FootprintDiagnostic {
                feature_index: index,
                id: id.clone(),
                issue: FootprintIssue::Dropped(why),
            })
        };

        let geometry = feature.get("geometry");
        let gtype = geometry.and_then(|g| g.get("type")).and_then(Value::as_str);
        if gtype != Some("Polygon") {
            drop(
                &mut out,
                format!("geometry type {} is not Polygon", gtype.unwrap_or("missing")),
            );
            continue;
        }
        let Some(exterior) = geometry
            .and_then(|g| g.get("coordinates"))
            .and_then(Value::as_array)
            .and_then(|rings| rings.first())
            .and_then(Value::as_array)
        else {
            drop(&mut out, "polygon has no exterior ring".into());
            continue;
        };
        let coords: Option<Vec<(f64, f64)>> = exterior
            .iter()
            .map(|p| {
                let p = p.as_array()?;
                Some((p.first()?.as_f64()?, p.get(1)?.as_f64()?))
            })
            .collect();
        let Some(coords) = coords else {
            drop(&mut out, "ring has non-numeric coordinates".into());
            continue;
        };
        let origin = coords.first().copied().unwrap_or((0.0, 0.0));
        let relative: Vec<(f64, f64)> = coords
            .iter()
            .map(|&(e, n)| (e - origin.0, n - origin.1))
            .collect();
        if let Err(defect) = validate_ring(&relative) {
            drop(&mut out, defect.to_string());
            continue;
        }

        let mut read_tag = |keys: &[&str]| -> Option<f64> {
            let (key, raw) = keys
                .iter()
                .find_map(|k| props.and_then(|p| p.get(*k)).map(|v| (*k, v)))?;
            let parsed = parse_numeric_tag(raw);
            if parsed.is_none() && !raw.is_null() {
                out.diagnostics.push(FootprintDiagnostic {
                    feature_index: index,
                    id: id.clone(),
                    issue: FootprintIssue::UnreadableTag {
                        key: key.to_string(),
                        raw: raw.to_string(),
                    },
                });
            }
            parsed
        };
        let height_tag_m = read_tag(&["height", "building:height"]);
        let levels_tag = read_tag(&["building:levels"]);
        let building_type = props
            .and_then(|p| p.get("building"))
            .and_then(Value::as_str)
            .unwrap_or("yes")
            .trim()
            .to_ascii_lowercase();

        out.footprints.push(Footprint {
            id: id.unwrap_or_else(|| format!("feature-{index}")),
            ring: coords
                .iter()
                .map(|&(e, n)| UtmPoint::new(e, n, zone_label))
                .collect(),
            height_tag_m,
            levels_tag,
            building_type,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Trajectories

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackKind {
    Uav,
    Vehicle,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackSample {
    pub point: TrackPoint,
    pub lane_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub kind: TrackKind,
    pub samples: Vec<TrackSample>,
    /// Rows dropped because a numeric field could not be parsed.
    pub skipped_rows: usize,
}

impl Track {
    pub fn points(&self) -> Vec<TrackPoint> {
        self.samples.iter().map(|s| s.point.clone()).collect()
    }
}

/// Column names for trajectory CSVs. `None` means "try the usual synonyms".
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnMapping {
    pub timestamp: Option<String>,
    pub easting: Option<String>,
    pub northing: Option<String>,
    pub speed: Option<String>,
    pub lane_id: Option<String>,
}

fn find_column(
    headers: &csv::StringRecord,
    explicit: Option<&str>,
    synonyms: &[&str],
) -> Option<usize> {
    let wanted: Vec<String> = match explicit {
        Some(name) => vec![name.trim().to_ascii_lowercase()],
        None => synonyms.iter().map(|s| s.to_string()).collect(),
    };
    wanted.iter().find_map(|w| {
        headers
            .iter()
            .position(|h| h.trim().to_ascii_lowercase() == *w)
    })
}

fn parse_timestamp(raw: &str) -> Option<f64> {
    let raw = raw.trim();
    if let Ok(t) = raw.parse::<f64>() {
        return t.is_finite().then_some(t);
    }
    let dt = DateTime::parse_from_rfc3339(raw).ok()?;
    Some(dt.timestamp() as f64 + f64::from(dt.timestamp_subsec_nanos()) * 1e-9)
}

fn parse_finite(raw: &str) -> Option<f64> {
    raw.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Parses a headered, comma-separated trajectory. Required columns:
/// timestamp, easting/x, northing/y, speed; `lane_id` is optional.
pub fn parse_trajectory_csv(
    text: &str,
    kind: TrackKind,
    zone_label: &str,
    columns: &ColumnMapping,
) -> Result<Track> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::Malformed(format!("trajectory header: {e}")))?
        .clone();

    let col = |explicit: &Option<String>, synonyms: &[&str], name: &str| {
        find_column(&headers, explicit.as_deref(), synonyms).ok_or_else(|| {
            Error::MissingColumn(explicit.clone().unwrap_or_else(|| name.to_string()))
        })
    };
    let t_col = col(&columns.timestamp, &["timestamp", "time", "t"], "timestamp")?;
    let e_col = col(&columns.easting, &["easting", "x", "utm_e"], "easting")?;
    let n_col = col(&columns.northing, &["northing", "y", "utm_n"], "northing")?;
    let s_col = col(&columns.speed, &["speed", "speed_mps", "v"], "speed")?;
    let lane_col = match &columns.lane_id {
        Some(_) => Some(col(&columns.lane_id, &[], "lane_id")?),
        None => find_column(&headers, None, &["lane_id", "lane"]),
    };

    let mut samples = Vec::new();
    let mut skipped_rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| Error::Malformed(format!("trajectory row: {e}")))?;
        let field = |i: usize| record.get(i).unwrap_or("");
        let parsed = (|| {
            Some((
                parse_timestamp(field(t_col))?,
                parse_finite(field(e_col))?,
                parse_finite(field(n_col))?,
                parse_finite(field(s_col))?,
            ))
        })();
        let Some((timestamp, easting, northing, speed)) = parsed else {
            skipped_rows += 1;
            continue;
        };
        let lane_id = lane_col
            .map(|i| field(i).to_string())
            .filter(|s| !s.is_empty());
        samples.push(TrackSample {
            point: TrackPoint {
                timestamp,
                position: UtmPoint::new(easting, northing, zone_label),
                speed_mps: speed,
            },
            lane_id,
        });
    }
    samples.sort_by(|a, b| a.point.timestamp.total_cmp(&b.point.timestamp));
    Ok(Track {
        kind,
        samples,
        skipped_rows,
    })
}

// ---------------------------------------------------------------------------
// Rasters

/// Georeference sidecar stored next to a raster as `<stem>.meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RasterSidecar {
    pub gsd_m: f64,
    pub origin_easting: f64,
    pub origin_northing: f64,
    pub zone_label: String,
}

pub fn sidecar_path(raster_path: &Path) -> PathBuf {
    let stem = raster_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    raster_path.with_file_name(format!("{stem}.meta.json"))
}

/// Decodes PNG or binary PPM (P6) bytes into a raster with the given
/// georeference.
pub fn decode_raster(bytes: &[u8], sidecar: &RasterSidecar) -> Result<RgbRaster> {
    let (width, height, pixels) = if bytes.starts_with(b"\x89PNG") {
        decode_png(bytes)?
    } else if bytes.starts_with(b"P6") {
        decode_ppm(bytes)?
    } else {
        return Err(Error::UnsupportedFormat(
            "expected PNG or binary PPM (P6)".into(),
        ));
    };
    RgbRaster::new(
        width,
        height,
        pixels,
        sidecar.gsd_m,
        UtmPoint::new(
            sidecar.origin_easting,
            sidecar.origin_northing,
            sidecar.zone_label.clone(),
        ),
    )
}

fn decode_png(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)?;
    use image::DynamicImage as D;
    let rgb = match img {
        D::ImageRgb8(i) => i,
        D::ImageRgba8(_) | D::ImageLuma8(_) | D::ImageLumaA8(_) => img.to_rgb8(),
        other => {
            return Err(Error::UnsupportedFormat(format!(
                "PNG color type {:?} is not 8-bit",
                other.color()
            )))
        }
    };
    let (w, h) = rgb.dimensions();
    Ok((w as usize, h as usize, rgb.into_raw()))
}

fn decode_ppm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let mut pos = 2;
    let mut header = [0usize; 3];
    for slot in header.iter_mut() {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&c| c != b'\n') {
                        pos += 1;
                    }
                }
                Some(c) if c.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *slot = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Malformed("PPM header is truncated".into()))?;
    }
    let [width, height, maxval] = header;
    if maxval != 255 {
        return Err(Error::UnsupportedFormat(format!(
            "PPM maxval {maxval}; only 8-bit (255) is supported"
        )));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::Malformed("PPM header is truncated".into()));
    }
    let data = &bytes[pos + 1..];
    let expected = width * height * 3;
    if data.len() < expected {
        return Err(Error::TruncatedRaster {
            expected,
            found: data.len(),
        });
    }
    Ok((width, height, data[..expected].to_vec()))
}

pub fn load_raster(path: &Path) -> Result<RgbRaster> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    let side_text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let sidecar: RasterSidecar = serde_json::from_str(&side_text)
        .map_err(|e| Error::Malformed(format!("{}: {e}", side.display())))?;
    decode_raster(&bytes, &sidecar)
}

/// Writes the raster as PNG (or P6 when the extension is `.ppm`) plus its
/// georeference sidecar.
pub fn write_raster(raster: &RgbRaster, path: &Path) -> Result<()> {
    let is_ppm = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("ppm"));
    if is_ppm {
        let mut bytes = format!("P6\n{} {}\n255\n", raster.width, raster.height).into_bytes();
        bytes.extend_from_slice(&raster.pixels);
        fs::write(path, bytes).map_err(|e| Error::output(path, e))?;
    } else {
        image::save_buffer_with_format(
            path,
            &raster.pixels,
            raster.width as u32,
            raster.height as u32,
            image::ExtendedColorType::Rgb8,
            image::ImageFormat::Png,
        )?;
    }
    let sidecar = RasterSidecar {
        gsd_m: raster.gsd_m,
        origin_easting: raster.origin_utm.easting,
        origin_northing: raster.origin_utm.northing,
        zone_label: raster.origin_utm.zone_label.clone(),
    };
    let side = sidecar_path(path);
    fs::write(
        &side,
        serde_json::to_string_pretty(&sidecar).expect("sidecar serializes"),
    )
    .map_err(|e| Error::output(&side, e))
}
