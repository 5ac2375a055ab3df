//! The assembled location prior and its LPSP-v0 JSON encoding.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fallback::{classify_semantic, HeightAssignment, HeightMethod, SemanticClass, MAX_FALLBACK_SIGMA_M};
use crate::gate::{GateResult, ValidatorResult};
use crate::geo::{utm_to_enu, EnuPoint, Region, UtmPoint};
use crate::ingest::{Footprint, SceneMetadata};
use crate::shem::HeightEstimate;
use crate::topology::{is_occluder, RoadGraph};

pub const LPSP_VERSION: &str = "0";
pub const LPGF_VERSION: &str = "0.1.0";

/// Decimal places kept for every number in an LPSP document.
const DECIMALS: f64 = 1000.0;

/// Slack for the region-membership check on parse, covering coordinate
/// rounding.
const REGION_SLACK_M: f64 = 2e-3;

pub fn quantize(x: f64) -> f64 {
    let r = (x * DECIMALS).round() / DECIMALS;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildingRecord {
    pub id: String,
    pub centroid_enu: EnuPoint,
    pub height_m: f64,
    pub height_uncertainty_m: f64,
    pub confidence: f64,
    pub semantic_class: SemanticClass,
    pub height_method: HeightMethod,
    pub occluder: bool,
    /// Source footprint id; `None` for records derived from shadow blobs.
    pub footprint_ref: Option<String>,
}

impl BuildingRecord {
    pub fn validate(&self) -> Result<()> {
        let key = |f: &str| format!("buildings[{}].{f}", self.id);
        if !(self.height_m.is_finite() && self.height_m > 0.0) {
            return Err(Error::invalid(key("height_m"), format!("{} must be > 0", self.height_m)));
        }
        if !(self.confidence > 0.0 && self.confidence <= 1.0) {
            return Err(Error::invalid(
                key("confidence"),
                format!("{} outside (0, 1]", self.confidence),
            ));
        }
        let sigma = self.height_uncertainty_m;
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::invalid(key("height_uncertainty_m"), format!("{sigma} must be >= 0")));
        }
        if self.height_method.is_fallback() && sigma > MAX_FALLBACK_SIGMA_M {
            return Err(Error::invalid(
                key("height_uncertainty_m"),
                format!("{sigma} exceeds {MAX_FALLBACK_SIGMA_M} for a fallback record"),
            ));
        }
        if !(self.centroid_enu.e.is_finite() && self.centroid_enu.n.is_finite()) {
            return Err(Error::invalid(key("centroid_enu"), "not finite"));
        }
        Ok(())
    }
}

/// Condensed validator outcome carried in the prior's metadata.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PostValidatorSummary {
    pub count: usize,
    pub mean_h_m: f64,
    pub std_h_m: f64,
    pub clip_ratio: f64,
    pub passed: bool,
}

impl From<&ValidatorResult> for PostValidatorSummary {
    fn from(v: &ValidatorResult) -> Self {
        PostValidatorSummary {
            count: v.count,
            mean_h_m: v.mean_h_m,
            std_h_m: v.std_h_m,
            clip_ratio: v.clip_ratio,
            passed: v.passed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub acquisition_date: DateTime<Utc>,
    pub solar_elevation_deg: f64,
    pub gsd_m: f64,
    pub gate: GateResult,
    pub post_validator: Option<PostValidatorSummary>,
    pub lpgf_version: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocationPrior {
    pub region: Region,
    pub buildings: Vec<BuildingRecord>,
    pub road_graph: RoadGraph,
    pub annotations: BTreeMap<String, String>,
    pub provenance: Provenance,
}

impl LocationPrior {
    pub fn validate(&self) -> Result<()> {
        if !(self.region.radius.is_finite() && self.region.radius > 0.0) {
            return Err(Error::invalid("region.radius_m", "must be > 0"));
        }
        let mut seen = BTreeSet::new();
        for b in &self.buildings {
            b.validate()?;
            if !seen.insert(b.id.as_str()) {
                return Err(Error::invalid("buildings", format!("duplicate id `{}`", b.id)));
            }
            if b.centroid_enu.e.hypot(b.centroid_enu.n) > self.region.radius + REGION_SLACK_M {
                return Err(Error::invalid(
                    format!("buildings[{}].centroid_enu", b.id),
                    "outside the region",
                ));
            }
        }
        self.road_graph.validate()
    }

    /// Rounds every number to the precision LPSP documents carry and sorts
    /// buildings by id.
    pub fn quantized(&self) -> LocationPrior {
        let mut p = self.clone();
        p.region.center.easting = quantize(p.region.center.easting);
        p.region.center.northing = quantize(p.region.center.northing);
        p.region.radius = quantize(p.region.radius);
        for b in &mut p.buildings {
            b.centroid_enu = EnuPoint::new(quantize(b.centroid_enu.e), quantize(b.centroid_enu.n));
            b.height_m = quantize(b.height_m);
            b.height_uncertainty_m = quantize(b.height_uncertainty_m);
            b.confidence = quantize(b.confidence);
        }
        p.buildings.sort_by(|a, b| a.id.cmp(&b.id));
        for v in &mut p.road_graph.vertices {
            *v = EnuPoint::new(quantize(v.e), quantize(v.n));
        }
        let prov = &mut p.provenance;
        prov.solar_elevation_deg = quantize(prov.solar_elevation_deg);
        prov.gsd_m = quantize(prov.gsd_m);
        prov.gate.kappa = quantize(prov.gate.kappa);
        if let Some(v) = &mut prov.post_validator {
            v.mean_h_m = quantize(v.mean_h_m);
            v.std_h_m = quantize(v.std_h_m);
            v.clip_ratio = quantize(v.clip_ratio);
        }
        p
    }

    pub fn count_by_method(&self) -> BTreeMap<HeightMethod, usize> {
        let mut out = BTreeMap::new();
        for b in &self.buildings {
            *out.entry(b.height_method).or_insert(0) += 1;
        }
        out
    }

    pub fn count_by_class(&self) -> BTreeMap<SemanticClass, usize> {
        let mut out: BTreeMap<SemanticClass, usize> = SemanticClass::ALL.iter().map(|&c| (c, 0)).collect();
        for b in &self.buildings {
            *out.entry(b.semantic_class).or_insert(0) += 1;
        }
        out
    }
}

/// `max(2 sigma, d_min)`: clearance to keep around a building of uncertain
/// height.
pub fn inflation_margin(sigma_m: f64, d_min_m: f64) -> f64 {
    (2.0 * sigma_m).max(d_min_m)
}

// ---------------------------------------------------------------------------
// Assembly

/// A shadow-derived building: the estimate plus where its blob sits.
#[derive(Debug, Clone, PartialEq)]
pub struct ShemBuilding {
    pub estimate: HeightEstimate,
    pub centroid_enu: EnuPoint,
}

pub enum HeightSource<'a> {
    /// Footprints paired index-wise with their fallback assignments.
    Fallback {
        footprints: &'a [Footprint],
        assignments: &'a [HeightAssignment],
    },
    Shem(&'a [ShemBuilding]),
}

pub struct PriorInputs<'a> {
    pub region: &'a Region,
    pub heights: HeightSource<'a>,
    pub road_graph: RoadGraph,
    pub meta: &'a SceneMetadata,
    pub gate: GateResult,
    pub validator: Option<&'a ValidatorResult>,
    pub annotations: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assembled {
    pub prior: LocationPrior,
    /// Ids of candidates left out, with the reason.
    pub excluded: Vec<(String, String)>,
}

#[allow(clippy::too_many_arguments)]
fn record(
    id: String,
    centroid: EnuPoint,
    height_m: f64,
    sigma_m: f64,
    confidence: f64,
    method: HeightMethod,
    footprint_ref: Option<String>,
    graph: &RoadGraph,
) -> Result<BuildingRecord> {
    Ok(BuildingRecord {
        semantic_class: classify_semantic(height_m)?,
        occluder: is_occluder(&centroid, height_m, graph),
        id,
        centroid_enu: centroid,
        height_m,
        height_uncertainty_m: sigma_m,
        confidence,
        height_method: method,
        footprint_ref,
    })
}

/// Builds the prior in one pass over the height source. Candidates outside
/// the region are excluded and listed in [`Assembled::excluded`].
pub fn assemble_prior(inputs: PriorInputs<'_>) -> Result<Assembled> {
    let region = inputs.region;
    let graph = &inputs.road_graph;
    let mut buildings = Vec::new();
    let mut excluded = Vec::new();

    match inputs.heights {
        HeightSource::Fallback { footprints, assignments } => {
            if footprints.len() != assignments.len() {
                return Err(Error::Contract(format!(
                    "{} footprints but {} height assignments",
                    footprints.len(),
                    assignments.len()
                )));
            }
            let mut seen = BTreeSet::new();
            for (fp, a) in footprints.iter().zip(assignments) {
                let centroid = utm_to_enu(&fp.centroid(), &region.center)?;
                if !region.contains_enu(&centroid) {
                    excluded.push((fp.id.clone(), "outside region".to_string()));
                    continue;
                }
                if !seen.insert(fp.id.clone()) {
                    excluded.push((fp.id.clone(), "duplicate id".to_string()));
                    continue;
                }
                buildings.push(record(
                    fp.id.clone(),
                    centroid,
                    a.height_m,
                    a.sigma_m,
                    a.confidence,
                    a.method,
                    Some(fp.id.clone()),
                    graph,
                )?);
            }
        }
        HeightSource::Shem(items) => {
            for item in items {
                let id = format!("shem-{:04}", item.estimate.source_component);
                if !region.contains_enu(&item.centroid_enu) {
                    excluded.push((id, "outside region".to_string()));
                    continue;
                }
                let e = &item.estimate;
                buildings.push(record(
                    id,
                    item.centroid_enu,
                    e.height_m,
                    e.sigma_m,
                    e.confidence,
                    HeightMethod::Shem,
                    None,
                    graph,
                )?);
            }
        }
    }

    let prior = LocationPrior {
        region: region.clone(),
        buildings,
        road_graph: inputs.road_graph,
        annotations: inputs.annotations,
        provenance: Provenance {
            acquisition_date: inputs.meta.acquisition_time,
            solar_elevation_deg: inputs.meta.solar_elevation_deg,
            gsd_m: inputs.meta.gsd_m,
            gate: inputs.gate,
            post_validator: inputs.validator.map(PostValidatorSummary::from),
            lpgf_version: LPGF_VERSION.to_string(),
        },
    }
    .quantized();
    prior.validate()?;
    Ok(Assembled { prior, excluded })
}

// ---------------------------------------------------------------------------
// LPSP-v0 wire format. Field order here is the key order on the wire.

#[derive(Serialize, Deserialize)]
struct Doc {
    lpsp_version: String,
    region: RegionDoc,
    buildings: Vec<BuildingDoc>,
    road_graph: GraphDoc,
    annotations: BTreeMap<String, String>,
    metadata: MetadataDoc,
}

#[derive(Serialize, Deserialize)]
struct RegionDoc {
    center_easting: f64,
    center_northing: f64,
    zone: String,
    radius_m: f64,
}

#[derive(Serialize, Deserialize)]
struct BuildingDoc {
    id: String,
    centroid_enu_e: f64,
    centroid_enu_n: f64,
    height_m: f64,
    height_uncertainty_m: f64,
    confidence: f64,
    semantic_class: SemanticClass,
    height_method: HeightMethod,
    occluder: bool,
}

#[derive(Serialize, Deserialize)]
struct GraphDoc {
    vertices: Vec<[f64; 2]>,
    edges: Vec<(usize, usize, String)>,
}

#[derive(Serialize, Deserialize)]
struct MetadataDoc {
    acquisition_date: String,
    solar_elevation_deg: f64,
    gsd_m: f64,
    quality_gate_result: GateDoc,
    lpgf_version: String,
}

#[derive(Serialize, Deserialize)]
struct GateDoc {
    c1_solar: bool,
    c2_cloud: bool,
    c3_gsd: bool,
    c4_contrast: bool,
    kappa: f64,
    passed: bool,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    forced_fallback: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    post_validator: Option<PostValidatorSummary>,
}

pub fn serialize_lpsp(prior: &LocationPrior) -> String {
    let p = prior.quantized();
    let prov = &p.provenance;
    let doc = Doc {
        lpsp_version: LPSP_VERSION.to_string(),
        region: RegionDoc {
            center_easting: p.region.center.easting,
            center_northing: p.region.center.northing,
            zone: p.region.center.zone_label.clone(),
            radius_m: p.region.radius,
        },
        buildings: p
            .buildings
            .iter()
            .map(|b| BuildingDoc {
                id: b.id.clone(),
                centroid_enu_e: b.centroid_enu.e,
                centroid_enu_n: b.centroid_enu.n,
                height_m: b.height_m,
                height_uncertainty_m: b.height_uncertainty_m,
                confidence: b.confidence,
                semantic_class: b.semantic_class,
                height_method: b.height_method,
                occluder: b.occluder,
            })
            .collect(),
        road_graph: GraphDoc {
            vertices: p.road_graph.vertices.iter().map(|v| [v.e, v.n]).collect(),
            edges: p.road_graph.edges.clone(),
        },
        annotations: p.annotations.clone(),
        metadata: MetadataDoc {
            acquisition_date: prov.acquisition_date.to_rfc3339_opts(SecondsFormat::Secs, true),
            solar_elevation_deg: prov.solar_elevation_deg,
            gsd_m: prov.gsd_m,
            quality_gate_result: GateDoc {
                c1_solar: prov.gate.c1_solar,
                c2_cloud: prov.gate.c2_cloud,
                c3_gsd: prov.gate.c3_gsd,
                c4_contrast: prov.gate.c4_contrast,
                kappa: prov.gate.kappa,
                passed: prov.gate.passed,
                forced_fallback: prov.gate.forced_fallback,
                post_validator: prov.post_validator,
            },
            lpgf_version: prov.lpgf_version.clone(),
        },
    };
    let mut text = serde_json::to_string_pretty(&doc).expect("LPSP document serializes");
    text.push('\n');
    text
}

fn missing_field_name(msg: &str) -> Option<&str> {
    let rest = msg.split("missing field `").nth(1)?;
    rest.split('`').next()
}

pub fn parse_lpsp(text: &str) -> Result<LocationPrior> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let doc: Doc = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.inner().to_string();
        match missing_field_name(&inner) {
            Some(field) if path == "." => Error::MissingField(field.to_string()),
            Some(field) => Error::MissingField(format!("{path}.{field}")),
            None => Error::Malformed(format!("{path}: {inner}")),
        }
    })?;
    if doc.lpsp_version != LPSP_VERSION {
        return Err(Error::invalid(
            "lpsp_version",
            format!("unsupported version `{}`", doc.lpsp_version),
        ));
    }
    let m = doc.metadata;
    let acquisition_date = DateTime::parse_from_rfc3339(&m.acquisition_date)
        .map_err(|e| Error::invalid("metadata.acquisition_date", e.to_string()))?
        .with_timezone(&Utc);
    let g = m.quality_gate_result;
    let prior = LocationPrior {
        region: Region::new(
            UtmPoint::new(doc.region.center_easting, doc.region.center_northing, doc.region.zone),
            doc.region.radius_m,
        )?,
        buildings: doc
            .buildings
            .into_iter()
            .map(|b| BuildingRecord {
                footprint_ref: b.height_method.is_fallback().then(|| b.id.clone()),
                id: b.id,
                centroid_enu: EnuPoint::new(b.centroid_enu_e, b.centroid_enu_n),
                height_m: b.height_m,
                height_uncertainty_m: b.height_uncertainty_m,
                confidence: b.confidence,
                semantic_class: b.semantic_class,
                height_method: b.height_method,
                occluder: b.occluder,
            })
            .collect(),
        road_graph: RoadGraph {
            vertices: doc.road_graph.vertices.iter().map(|v| EnuPoint::new(v[0], v[1])).collect(),
            edges: doc.road_graph.edges,
        },
        annotations: doc.annotations,
        provenance: Provenance {
            acquisition_date,
            solar_elevation_deg: m.solar_elevation_deg,
            gsd_m: m.gsd_m,
            gate: GateResult {
                c1_solar: g.c1_solar,
                c2_cloud: g.c2_cloud,
                c3_gsd: g.c3_gsd,
                c4_contrast: g.c4_contrast,
                kappa: g.kappa,
                passed: g.passed,
                forced_fallback: g.forced_fallback,
            },
            post_validator: g.post_validator,
            lpgf_version: m.lpgf_version,
        },
    };
    prior.validate()?;
    Ok(prior)
}
