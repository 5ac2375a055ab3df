//! End-to-end run: region, inputs, strategy decision, assembly, output.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fallback::{assign_height, HeightAssignment, HeightMethod, SemanticClass, TypeDefaultTable};
use crate::gate::{
    evaluate_post_validator, evaluate_pre_gate, select_strategy, shadow_contrast_masked, GateResult,
    GateThresholds, Strategy, StrategyKind, ValidatorResult, ValidatorThresholds,
};
use crate::geo::{hover_center, utm_to_enu, EnuPoint, Region};
use crate::ingest::{
    load_raster, parse_footprints, parse_scene_metadata, parse_trajectory_csv, scene_metadata_to_json,
    write_raster, ColumnMapping, SceneMetadata, TrackKind,
};
use crate::prior::{assemble_prior, serialize_lpsp, HeightSource, LocationPrior, PriorInputs, ShemBuilding};
use crate::raster::{BinaryMask, GrayRaster, PixelFrame, RgbRaster};
use crate::shem::{
    luminance_channel, run_shem, threshold_candidates, vegetation_mask, ComponentFilter, ShemOutput, ShemParams,
    ThresholdSet,
};
use crate::synth::{render_scene, truth_csv, SceneSpec};
use crate::topology::{build_road_graph, group_by_lane, lane_centerline, Lane};

pub const PRIOR_FILE: &str = "prior.lpsp.json";
pub const REPORT_TEXT_FILE: &str = "report.txt";
pub const REPORT_JSON_FILE: &str = "report.json";
pub const HISTOGRAM_FILE: &str = "height_histogram.csv";
pub const CLASS_STATS_FILE: &str = "class_box_stats.csv";
pub const COMPONENTS_FILE: &str = "components.csv";
pub const MASK_FILE: &str = "shadow_mask.png";

/// Width of the height histogram bins, meters.
pub const HISTOGRAM_BIN_M: f64 = 2.0;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputPaths {
    pub footprints: PathBuf,
    pub metadata: PathBuf,
    pub uav_csv: PathBuf,
    #[serde(default)]
    pub raster: Option<PathBuf>,
    #[serde(default)]
    pub vehicle_csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnOverrides {
    pub uav: ColumnMapping,
    pub vehicle: ColumnMapping,
}

fn default_zone() -> String {
    "32N".into()
}

fn default_radius() -> f64 {
    800.0
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("lpgf-out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "default_radius")]
    pub region_radius_m: f64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// UTM zone of every input; trajectory files carry bare coordinates.
    #[serde(default = "default_zone")]
    pub zone_label: String,
    #[serde(default)]
    pub force_fallback: bool,
    /// Also write the component table and the shadow mask image.
    #[serde(default)]
    pub debug_outputs: bool,
    pub inputs: InputPaths,
    #[serde(default)]
    pub gate: GateThresholds,
    #[serde(default)]
    pub validator: ValidatorThresholds,
    #[serde(default)]
    pub defaults: TypeDefaultTable,
    #[serde(default)]
    pub shem: ShemParams,
    #[serde(default)]
    pub component_filter: ComponentFilter,
    #[serde(default)]
    pub columns: ColumnOverrides,
}

impl PipelineConfig {
    pub fn new(inputs: InputPaths, output_dir: impl Into<PathBuf>) -> Self {
        PipelineConfig {
            region_radius_m: default_radius(),
            output_dir: output_dir.into(),
            zone_label: default_zone(),
            force_fallback: false,
            debug_outputs: false,
            inputs,
            gate: GateThresholds::default(),
            validator: ValidatorThresholds::default(),
            defaults: TypeDefaultTable::default(),
            shem: ShemParams::default(),
            component_filter: ComponentFilter::default(),
            columns: ColumnOverrides::default(),
        }
    }

    /// Parses TOML. Relative paths are resolved against `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        };
        resolve(&mut cfg.output_dir);
        resolve(&mut cfg.inputs.footprints);
        resolve(&mut cfg.inputs.metadata);
        resolve(&mut cfg.inputs.uav_csv);
        if let Some(p) = cfg.inputs.raster.as_mut() {
            resolve(p);
        }
        if let Some(p) = cfg.inputs.vehicle_csv.as_mut() {
            resolve(p);
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_toml(&text, base)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.region_radius_m.is_finite() && self.region_radius_m > 0.0) {
            return Err(Error::invalid("region_radius_m", "must be > 0"));
        }
        self.gate.validate()?;
        self.validator.validate()?;
        self.defaults.validate()?;
        let s = &self.shem;
        if !(s.long_axis_max_px.is_finite() && s.long_axis_max_px > 0.0) {
            return Err(Error::invalid("shem.long_axis_max_px", "must be > 0"));
        }
        if let Some(p) = s.pixel_m {
            if !(p.is_finite() && p > 0.0) {
                return Err(Error::invalid("shem.pixel_m", "must be > 0"));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Report

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoverSummary {
    pub easting: f64,
    pub northing: f64,
    pub zone: String,
    pub hover_samples: usize,
    pub used_full_track: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FootprintSummary {
    pub parsed: usize,
    pub dropped: usize,
    pub unreadable_tags: usize,
    pub nonpositive_tags: usize,
    pub excluded: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ShemSummary {
    pub thresholds: Option<ThresholdSet>,
    pub shadow_ratio: Option<f64>,
    pub components_total: usize,
    pub components_accepted: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneSummary {
    pub lane_id: String,
    pub point_count: usize,
    pub vertices: usize,
    pub direction: [f64; 2],
    pub residual_rms_m: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub stage1_region_ms: f64,
    pub stage2_inputs_ms: f64,
    pub stage3_strategy_ms: f64,
    pub stage4_assembly_ms: f64,
    pub stage5_output_ms: f64,
    pub total_ms: f64,
}

/// Everything a run decided, minus wall-clock timings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub strategy: StrategyKind,
    pub reason: String,
    pub failed_criteria: Vec<String>,
    pub gate: GateResult,
    pub validator: Option<ValidatorResult>,
    pub shem: ShemSummary,
    pub hover_center: HoverSummary,
    pub region_radius_m: f64,
    pub footprints: FootprintSummary,
    pub buildings: usize,
    pub methods: BTreeMap<String, usize>,
    pub classes: BTreeMap<String, usize>,
    pub occluders: usize,
    pub lanes: Vec<LaneSummary>,
    pub lane_failures: Vec<String>,
    pub vehicle_rows_skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub summary: RunSummary,
    pub timings: StageTimings,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub prior: LocationPrior,
    pub report: RunReport,
    pub written: Vec<PathBuf>,
    /// Present when the shadow estimator ran.
    pub shem: Option<ShemOutput>,
}

// ---------------------------------------------------------------------------
// Stages

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::output(path, e))
}

/// Luminance, vegetation and out-of-region masks for the part of the raster
/// inside the region disc.
pub struct RegionImagery {
    pub gray: GrayRaster,
    pub vegetation: BinaryMask,
    /// Vegetation or outside the region: ignored by every statistic.
    pub excluded: BinaryMask,
    pub frame: PixelFrame,
}

impl RegionImagery {
    pub fn new(raster: &RgbRaster, region: &Region) -> Result<Self> {
        let origin = utm_to_enu(&raster.origin_utm, &region.center)?;
        let frame = PixelFrame {
            gsd_m: raster.gsd_m,
            origin_enu: origin,
        };
        let gray = luminance_channel(raster);
        let vegetation = vegetation_mask(raster);
        let outside = BinaryMask::from_fn(raster.width, raster.height, |c, r| {
            !region.contains_enu(&frame.pixel_center(c as f64, r as f64))
        });
        if outside.count() == outside.bits.len() {
            return Err(Error::invalid("raster", "does not overlap the region"));
        }
        let excluded = vegetation.or(&outside)?;
        Ok(RegionImagery {
            gray,
            vegetation,
            excluded,
            frame,
        })
    }

    /// Shadow contrast with the provisional `mean - 1.3 std` split.
    pub fn contrast(&self) -> Result<(f64, ThresholdSet)> {
        let t = threshold_candidates(&self.gray, &self.excluded)?;
        let kappa = shadow_contrast_masked(&self.gray, &self.excluded, t.adaptive)?;
        Ok((kappa, t))
    }
}

fn method_counts(prior: &LocationPrior) -> BTreeMap<String, usize> {
    let mut out: BTreeMap<String, usize> = HeightMethod::ALL.iter().map(|m| (m.label().to_string(), 0)).collect();
    for (m, n) in prior.count_by_method() {
        out.insert(m.label().to_string(), n);
    }
    out
}

fn class_counts(prior: &LocationPrior) -> BTreeMap<String, usize> {
    prior
        .count_by_class()
        .into_iter()
        .map(|(c, n)| (c.label().to_string(), n))
        .collect()
}

fn ms_since(t: Instant) -> f64 {
    (t.elapsed().as_secs_f64() * 1e6).round() / 1e3
}

/// Runs all five stages and writes the outputs into `config.output_dir`.
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunOutcome> {
    config.validate()?;
    let t_start = Instant::now();

    // Stage 1: metadata and region.
    let t = Instant::now();
    let meta = parse_scene_metadata(&read_text(&config.inputs.metadata)?)?;
    let uav_text = read_text(&config.inputs.uav_csv)?;
    let uav = parse_trajectory_csv(&uav_text, TrackKind::Uav, &config.zone_label, &config.columns.uav)?;
    let hover = hover_center(&uav.points())?;
    hover.point.validate()?;
    let region = Region::new(hover.point.clone(), config.region_radius_m)?;
    let zone = region.center.zone_label.clone();
    let stage1 = ms_since(t);

    // Stage 2: footprints and lanes.
    let t = Instant::now();
    let parsed = parse_footprints(&read_text(&config.inputs.footprints)?, &zone)?;
    let (lanes, lane_failures, vehicle_rows_skipped) = match &config.inputs.vehicle_csv {
        Some(path) => {
            let track = parse_trajectory_csv(&read_text(path)?, TrackKind::Vehicle, &zone, &config.columns.vehicle)?;
            let points = track
                .samples
                .iter()
                .map(|s| Ok((s.lane_id.clone(), utm_to_enu(&s.point.position, &region.center)?)))
                .collect::<Result<Vec<(Option<String>, EnuPoint)>>>()?;
            let mut lanes: Vec<Lane> = Vec::new();
            let mut failures = Vec::new();
            for (id, pts) in group_by_lane(points) {
                match lane_centerline(&pts, &id) {
                    Ok(l) => lanes.push(l),
                    Err(e) => failures.push(e.to_string()),
                }
            }
            (lanes, failures, track.skipped_rows)
        }
        None => (Vec::new(), Vec::new(), 0),
    };
    let road_graph = build_road_graph(&lanes);
    let stage2 = ms_since(t);

    // Stage 3: gate, shadow path, validator, decision.
    let t = Instant::now();
    let raster = config.inputs.raster.as_deref().map(load_raster).transpose()?;
    let mut shem_summary = ShemSummary::default();
    let imagery = match &raster {
        Some(r) => match RegionImagery::new(r, &region) {
            Ok(img) => Some(img),
            Err(e) => {
                shem_summary.error = Some(e.to_string());
                None
            }
        },
        None => None,
    };
    let kappa = match imagery.as_ref().map(RegionImagery::contrast) {
        Some(Ok((k, _))) => k,
        Some(Err(e)) => {
            shem_summary.error = Some(e.to_string());
            0.0
        }
        None => 0.0,
    };
    let mut gate = evaluate_pre_gate(&meta, kappa, &config.gate);
    if config.force_fallback {
        gate.passed = false;
        gate.forced_fallback = true;
    }

    let mut shem_output = None;
    let mut validator = None;
    let strategy = if gate.passed {
        let img = imagery.as_ref().expect("gate cannot pass without imagery");
        match run_shem(
            &img.gray,
            &img.excluded,
            &img.excluded,
            &img.frame,
            &meta,
            &config.shem,
            &config.component_filter,
        ) {
            Ok(out) => {
                let v = evaluate_post_validator(&out.estimates, &config.validator);
                shem_summary.thresholds = Some(out.thresholds);
                shem_summary.shadow_ratio = Some(out.shadow_ratio);
                shem_summary.components_total = out.components.len();
                shem_summary.components_accepted = out.accepted.len();
                validator = Some(v);
                shem_output = Some(out);
                select_strategy(&gate, validator.as_ref())?
            }
            Err(e) => {
                shem_summary.error = Some(e.to_string());
                Strategy {
                    kind: StrategyKind::Fallback,
                    reason: "shadow estimation error".into(),
                    failed_criteria: vec!["shem_error".into()],
                }
            }
        }
    } else {
        select_strategy(&gate, None)?
    };
    let stage3 = ms_since(t);

    // Stage 4: heights, assembly and occluders.
    let t = Instant::now();
    let mut annotations = BTreeMap::new();
    annotations.insert("strategy".to_string(), strategy.kind.to_string());
    annotations.insert("strategy_reason".to_string(), strategy.reason.clone());
    annotations.insert("lane_count".to_string(), lanes.len().to_string());
    annotations.insert("hover_samples".to_string(), hover.hover_samples.to_string());
    if hover.used_full_track {
        annotations.insert("hover_center_fallback".to_string(), "full track".to_string());
    }

    let assignments: Vec<HeightAssignment>;
    let shem_buildings: Vec<ShemBuilding>;
    let heights = match (&strategy.kind, &shem_output) {
        (StrategyKind::Shem, Some(out)) => {
            shem_buildings = out
                .estimates
                .iter()
                .map(|e| ShemBuilding {
                    estimate: e.clone(),
                    centroid_enu: out
                        .component(e.source_component)
                        .map(|c| c.centroid_enu)
                        .expect("every estimate has an accepted component"),
                })
                .collect();
            HeightSource::Shem(&shem_buildings)
        }
        _ => {
            assignments = parsed
                .footprints
                .iter()
                .map(|f| assign_height(f, &config.defaults))
                .collect();
            HeightSource::Fallback {
                footprints: &parsed.footprints,
                assignments: &assignments,
            }
        }
    };
    let nonpositive_tags = match &heights {
        HeightSource::Fallback { assignments, .. } => assignments.iter().map(|a| a.ignored_tags.len()).sum(),
        HeightSource::Shem(_) => 0,
    };
    let assembled = assemble_prior(PriorInputs {
        region: &region,
        heights,
        road_graph,
        meta: &meta,
        gate,
        validator: validator.as_ref(),
        annotations,
    })?;
    let mut prior = assembled.prior;
    let occluders = prior.buildings.iter().filter(|b| b.occluder).count();
    prior
        .annotations
        .insert("occluder_count".to_string(), occluders.to_string());
    let stage4 = ms_since(t);

    let unreadable_tags = parsed
        .diagnostics
        .iter()
        .filter(|d| matches!(d.issue, crate::ingest::FootprintIssue::UnreadableTag { .. }))
        .count();
    let summary = RunSummary {
        strategy: strategy.kind,
        reason: strategy.reason.clone(),
        failed_criteria: strategy.failed_criteria.clone(),
        gate,
        validator,
        shem: shem_summary,
        hover_center: HoverSummary {
            easting: crate::prior::quantize(hover.point.easting),
            northing: crate::prior::quantize(hover.point.northing),
            zone: zone.clone(),
            hover_samples: hover.hover_samples,
            used_full_track: hover.used_full_track,
        },
        region_radius_m: config.region_radius_m,
        footprints: FootprintSummary {
            parsed: parsed.footprints.len(),
            dropped: parsed.dropped(),
            unreadable_tags,
            nonpositive_tags,
            excluded: assembled.excluded.len(),
        },
        buildings: prior.buildings.len(),
        methods: method_counts(&prior),
        classes: class_counts(&prior),
        occluders,
        lanes: lanes
            .iter()
            .map(|l| LaneSummary {
                lane_id: l.lane_id.clone(),
                point_count: l.point_count,
                vertices: l.centerline.len(),
                direction: l.direction,
                residual_rms_m: l.residual_rms_m,
            })
            .collect(),
        lane_failures,
        vehicle_rows_skipped,
    };

    // Stage 5: outputs.
    let t = Instant::now();
    let out_dir = &config.output_dir;
    fs::create_dir_all(out_dir).map_err(|e| Error::output(out_dir, e))?;
    let mut written = Vec::new();
    let mut emit = |name: &str, contents: Vec<u8>| -> Result<()> {
        let path = out_dir.join(name);
        write_file(&path, contents)?;
        written.push(path);
        Ok(())
    };
    emit(PRIOR_FILE, serialize_lpsp(&prior).into_bytes())?;
    emit(HISTOGRAM_FILE, height_histogram_csv(&prior).into_bytes())?;
    emit(CLASS_STATS_FILE, class_box_stats_csv(&prior).into_bytes())?;
    if config.debug_outputs {
        if let Some(out) = &shem_output {
            emit(COMPONENTS_FILE, components_csv(out).into_bytes())?;
            let path = out_dir.join(MASK_FILE);
            write_mask_png(&out.mask, &path)?;
            written.push(path);
        }
    }
    let stage5 = ms_since(t);

    let report = RunReport {
        summary,
        timings: StageTimings {
            stage1_region_ms: stage1,
            stage2_inputs_ms: stage2,
            stage3_strategy_ms: stage3,
            stage4_assembly_ms: stage4,
            stage5_output_ms: stage5,
            total_ms: ms_since(t_start),
        },
    };
    let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    let text = report_text(&report);
    let mut emit = |name: &str, contents: String| -> Result<()> {
        let path = out_dir.join(name);
        write_file(&path, contents)?;
        written.push(path);
        Ok(())
    };
    emit(REPORT_JSON_FILE, json)?;
    emit(REPORT_TEXT_FILE, text)?;

    Ok(RunOutcome {
        prior,
        report,
        written,
        shem: shem_output,
    })
}

// ---------------------------------------------------------------------------
// Report and statistics files

fn yes_no(b: bool) -> &'static str {
    if b {
        "pass"
    } else {
        "FAIL"
    }
}

pub fn report_text(report: &RunReport) -> String {
    use std::fmt::Write;
    let s = &report.summary;
    let g = &s.gate;
    let mut out = String::new();
    let _ = writeln!(out, "LPGF run report");
    let _ = writeln!(out, "strategy: {} ({})", s.strategy, s.reason);
    if !s.failed_criteria.is_empty() {
        let _ = writeln!(out, "failed criteria: {}", s.failed_criteria.join(", "));
    }
    let _ = writeln!(
        out,
        "region: center {:.1} E {:.1} N ({}), radius {} m, hover samples {}{}",
        s.hover_center.easting,
        s.hover_center.northing,
        s.hover_center.zone,
        s.region_radius_m,
        s.hover_center.hover_samples,
        if s.hover_center.used_full_track { " (no hover, full track)" } else { "" }
    );
    let _ = writeln!(out);
    let _ = writeln!(out, "pre-extraction gate{}:", if g.forced_fallback { " (fallback forced)" } else { "" });
    let _ = writeln!(out, "  c1 solar elevation  {}", yes_no(g.c1_solar));
    let _ = writeln!(out, "  c2 cloud fraction   {}", yes_no(g.c2_cloud));
    let _ = writeln!(out, "  c3 gsd              {}", yes_no(g.c3_gsd));
    let _ = writeln!(out, "  c4 contrast         {} (kappa {:.3})", yes_no(g.c4_contrast), g.kappa);
    if let Some(v) = &s.validator {
        let _ = writeln!(out, "post-extraction validator:");
        let _ = writeln!(out, "  count       {:>8}  {}", v.count, yes_no(v.count_ok));
        let _ = writeln!(out, "  mean_h_m    {:>8.3}  {}", v.mean_h_m, yes_no(v.mean_ok));
        let _ = writeln!(out, "  clip_ratio  {:>8.3}  {}", v.clip_ratio, yes_no(v.clip_ok));
        let _ = writeln!(out, "  std_h_m     {:>8.3}  {}", v.std_h_m, yes_no(v.std_ok));
    }
    if let Some(t) = &s.shem.thresholds {
        let _ = writeln!(
            out,
            "thresholds: adaptive {:.2}, p25 {:.0}, valley {}, otsu {:.0}, active {:.2}",
            t.adaptive,
            t.p25,
            t.valley.map_or("none".to_string(), |v| format!("{v:.0}")),
            t.otsu,
            t.active
        );
        let _ = writeln!(
            out,
            "shadow ratio {:.4}; components {} total, {} accepted",
            s.shem.shadow_ratio.unwrap_or(0.0),
            s.shem.components_total,
            s.shem.components_accepted
        );
    }
    if let Some(e) = &s.shem.error {
        let _ = writeln!(out, "shadow estimation note: {e}");
    }
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "footprints: {} parsed, {} dropped, {} outside region, {} unreadable tags, {} nonpositive tags",
        s.footprints.parsed, s.footprints.dropped, s.footprints.excluded, s.footprints.unreadable_tags, s.footprints.nonpositive_tags
    );
    let _ = writeln!(out, "buildings: {} ({} occluders)", s.buildings, s.occluders);
    for (m, n) in &s.methods {
        let _ = writeln!(out, "  method {m:<16} {n}");
    }
    for (c, n) in &s.classes {
        let _ = writeln!(out, "  class  {c:<16} {n}");
    }
    let _ = writeln!(out, "lanes: {}", s.lanes.len());
    for l in &s.lanes {
        let _ = writeln!(
            out,
            "  {:<12} points {:>5}  vertices {:>4}  residual rms {:.2} m",
            l.lane_id, l.point_count, l.vertices, l.residual_rms_m
        );
    }
    for f in &s.lane_failures {
        let _ = writeln!(out, "  skipped: {f}");
    }
    let t = &report.timings;
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "timings (ms): region {:.1}, inputs {:.1}, strategy {:.1}, assembly {:.1}, output {:.1}, total {:.1}",
        t.stage1_region_ms, t.stage2_inputs_ms, t.stage3_strategy_ms, t.stage4_assembly_ms, t.stage5_output_ms, t.total_ms
    );
    out
}

/// Counts per 2 m height bin, `[lo, hi)`, from 0 to the tallest building.
pub fn height_histogram_csv(prior: &LocationPrior) -> String {
    let mut out = String::from("bin_start_m,bin_end_m,count\n");
    let max = prior.buildings.iter().map(|b| b.height_m).fold(0.0, f64::max);
    let bins = (max / HISTOGRAM_BIN_M).floor() as usize + 1;
    let mut counts = vec![0usize; bins];
    for b in &prior.buildings {
        counts[((b.height_m / HISTOGRAM_BIN_M).floor() as usize).min(bins - 1)] += 1;
    }
    for (i, c) in counts.iter().enumerate() {
        out.push_str(&format!(
            "{:.1},{:.1},{c}\n",
            i as f64 * HISTOGRAM_BIN_M,
            (i + 1) as f64 * HISTOGRAM_BIN_M
        ));
    }
    out
}

/// Linear-interpolated quantile of sorted values.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Five-number summary and mean of heights per semantic class.
pub fn class_box_stats_csv(prior: &LocationPrior) -> String {
    let mut out = String::from("class,count,min_m,q1_m,median_m,q3_m,max_m,mean_m\n");
    for class in SemanticClass::ALL {
        let mut h: Vec<f64> = prior
            .buildings
            .iter()
            .filter(|b| b.semantic_class == class)
            .map(|b| b.height_m)
            .collect();
        if h.is_empty() {
            out.push_str(&format!("{class},0,,,,,,\n"));
            continue;
        }
        h.sort_by(f64::total_cmp);
        let mean = h.iter().sum::<f64>() / h.len() as f64;
        out.push_str(&format!(
            "{class},{},{:.3},{:.3},{:.3},{:.3},{:.3},{:.3}\n",
            h.len(),
            h[0],
            quantile(&h, 0.25),
            quantile(&h, 0.5),
            quantile(&h, 0.75),
            h[h.len() - 1],
            mean
        ));
    }
    out
}

pub fn components_csv(out: &ShemOutput) -> String {
    let mut s = String::from(
        "id,pixel_count,area_m2,long_axis_px,short_axis_px,aspect_ratio,compactness,centroid_e,centroid_n,accepted,height_pre_clamp_m,height_m\n",
    );
    for c in &out.components {
        let est = out.estimates.iter().find(|e| e.source_component == c.id);
        s.push_str(&format!(
            "{},{},{:.3},{},{},{:.3},{:.4},{:.3},{:.3},{},{},{}\n",
            c.id,
            c.pixel_count,
            c.area_m2,
            c.long_axis_px,
            c.short_axis_px,
            c.aspect_ratio,
            c.compactness,
            c.centroid_enu.e,
            c.centroid_enu.n,
            out.component(c.id).is_some(),
            est.map_or(String::new(), |e| format!("{:.3}", e.height_pre_clamp_m)),
            est.map_or(String::new(), |e| format!("{:.3}", e.height_m)),
        ));
    }
    s
}

fn write_mask_png(mask: &BinaryMask, path: &Path) -> Result<()> {
    let bytes: Vec<u8> = mask.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
    image::save_buffer_with_format(
        path,
        &bytes,
        mask.width as u32,
        mask.height as u32,
        image::ExtendedColorType::L8,
        image::ImageFormat::Png,
    )?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Synthetic fixtures

pub const SCENE_FILE: &str = "scene.png";
pub const SCENE_METADATA_FILE: &str = "scene_metadata.json";
pub const TRUTH_FILE: &str = "truth.csv";

/// Renders a scene spec into `out_dir`: image plus georeference sidecar,
/// scene metadata and the ground-truth table.
pub fn run_synth(spec_path: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let spec = SceneSpec::from_json(&read_text(spec_path)?)?;
    write_synth(&spec, out_dir)
}

pub fn write_synth(spec: &SceneSpec, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let scene = render_scene(spec)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::output(out_dir, e))?;
    let image = out_dir.join(SCENE_FILE);
    write_raster(&scene.raster, &image)?;
    let meta_path = out_dir.join(SCENE_METADATA_FILE);
    write_file(&meta_path, scene_metadata_to_json(&spec.metadata()) + "\n")?;
    let truth_path = out_dir.join(TRUTH_FILE);
    write_file(&truth_path, truth_csv(&scene.truth)?)?;
    Ok(vec![image.clone(), crate::ingest::sidecar_path(&image), meta_path, truth_path])
}

/// Metadata for an already parsed scene, for callers that render in memory.
pub fn synth_metadata(spec: &SceneSpec) -> SceneMetadata {
    spec.metadata()
}
