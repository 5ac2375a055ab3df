#![allow(dead_code)]

use std::path::{Path, PathBuf};

use lpgf_core::pipeline::{write_synth, InputPaths, PipelineConfig, SCENE_FILE};
use lpgf_core::synth::SceneSpec;

pub fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(rel)
}

pub fn read_fixture(rel: &str) -> String {
    std::fs::read_to_string(fixture(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
}

/// Renders a fixture scene spec into `dir` and returns the image path.
pub fn render_fixture(spec_rel: &str, dir: &Path) -> PathBuf {
    let spec = SceneSpec::from_json(&read_fixture(spec_rel)).expect("fixture spec parses");
    write_synth(&spec, dir).expect("fixture renders");
    dir.join(SCENE_FILE)
}

/// A50 inputs with the given metadata file and optional raster.
pub fn a50_config(metadata: &str, raster: Option<PathBuf>, out: &Path) -> PipelineConfig {
    PipelineConfig::new(
        InputPaths {
            footprints: fixture("a50/footprints.geojson"),
            metadata: fixture(metadata),
            uav_csv: fixture("a50/uav.csv"),
            raster,
            vehicle_csv: Some(fixture("a50/vehicle.csv")),
        },
        out,
    )
}
