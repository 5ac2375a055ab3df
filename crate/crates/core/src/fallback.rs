//! Structured height fallback and height-based semantic classes.
//!
//! Heights come from the first available source: an explicit height tag,
//! the storey count times a fixed storey height, or a per-category default.
//! Each tier carries a fixed confidence and uncertainty.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::Footprint;

/// Upper bound on the uncertainty of any fallback height, in meters.
pub const MAX_FALLBACK_SIGMA_M: f64 = 5.0;

pub const DEFAULT_STORY_HEIGHT_M: f64 = 3.2;

/// Where a building height came from. Serialized as the LPSP method label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum HeightMethod {
    #[serde(rename = "osm_height_tag")]
    HeightTag,
    #[serde(rename = "osm_levels_x3.2")]
    Levels,
    #[serde(rename = "type_default")]
    TypeDefault,
    #[serde(rename = "shem")]
    Shem,
}

impl HeightMethod {
    pub const ALL: [HeightMethod; 4] = [
        HeightMethod::HeightTag,
        HeightMethod::Levels,
        HeightMethod::TypeDefault,
        HeightMethod::Shem,
    ];

    pub fn label(self) -> &'static str {
        match self {
            HeightMethod::HeightTag => "osm_height_tag",
            HeightMethod::Levels => "osm_levels_x3.2",
            HeightMethod::TypeDefault => "type_default",
            HeightMethod::Shem => "shem",
        }
    }

    /// Fallback tier number, `None` for shadow estimates.
    pub fn tier(self) -> Option<u8> {
        match self {
            HeightMethod::HeightTag => Some(1),
            HeightMethod::Levels => Some(2),
            HeightMethod::TypeDefault => Some(3),
            HeightMethod::Shem => None,
        }
    }

    pub fn is_fallback(self) -> bool {
        self.tier().is_some()
    }

    /// Fixed (confidence, sigma) of a fallback tier.
    pub fn fallback_quality(self) -> Option<(f64, f64)> {
        match self {
            HeightMethod::HeightTag => Some((0.85, 1.0)),
            HeightMethod::Levels => Some((0.80, 2.5)),
            HeightMethod::TypeDefault => Some((0.30, 5.0)),
            HeightMethod::Shem => None,
        }
    }
}

impl fmt::Display for HeightMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeightAssignment {
    pub height_m: f64,
    pub sigma_m: f64,
    pub confidence: f64,
    pub method: HeightMethod,
    /// Tags that were present but not positive and so were ignored.
    pub ignored_tags: Vec<&'static str>,
}

impl HeightAssignment {
    pub fn tier(&self) -> u8 {
        self.method.tier().expect("fallback assignments always have a tier")
    }

    fn new(height_m: f64, method: HeightMethod, ignored_tags: Vec<&'static str>) -> Self {
        let (confidence, sigma_m) = method.fallback_quality().expect("fallback method");
        HeightAssignment {
            height_m,
            sigma_m,
            confidence,
            method,
            ignored_tags,
        }
    }
}

/// Category default heights and the building-tag to category map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TypeDefaultTable {
    pub category_heights_m: BTreeMap<String, f64>,
    pub tag_categories: BTreeMap<String, String>,
    /// Category used for tags missing from `tag_categories`.
    pub unknown_category: String,
    pub story_height_m: f64,
}

impl Default for TypeDefaultTable {
    fn default() -> Self {
        let category_heights_m = [("industrial", 6.5), ("residential", 9.0), ("mid_rise", 17.5)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        let tag_categories = [
            ("farm", "industrial"),
            ("farm_auxiliary", "industrial"),
            ("warehouse", "industrial"),
            ("industrial", "industrial"),
            ("yes", "residential"),
            ("residential", "residential"),
            ("house", "residential"),
            ("apartments", "mid_rise"),
            ("commercial", "mid_rise"),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
        TypeDefaultTable {
            category_heights_m,
            tag_categories,
            unknown_category: "residential".into(),
            story_height_m: DEFAULT_STORY_HEIGHT_M,
        }
    }
}

impl TypeDefaultTable {
    pub fn validate(&self) -> Result<()> {
        for (cat, &h) in &self.category_heights_m {
            if !(h.is_finite() && h > 0.0) {
                return Err(Error::invalid(
                    format!("defaults.category_heights_m.{cat}"),
                    format!("{h} must be > 0"),
                ));
            }
        }
        let referenced = self
            .tag_categories
            .values()
            .chain(std::iter::once(&self.unknown_category));
        for cat in referenced {
            if !self.category_heights_m.contains_key(cat) {
                return Err(Error::invalid(
                    "defaults.tag_categories",
                    format!("category `{cat}` has no default height"),
                ));
            }
        }
        if !(self.story_height_m.is_finite() && self.story_height_m > 0.0) {
            return Err(Error::invalid("defaults.story_height_m", "must be > 0"));
        }
        Ok(())
    }

    pub fn category_of(&self, building_type: &str) -> &str {
        self.tag_categories
            .get(building_type)
            .unwrap_or(&self.unknown_category)
    }

    pub fn default_height(&self, building_type: &str) -> f64 {
        let cat = self.category_of(building_type);
        // validate() guarantees presence; fall back to the unknown category
        // for tables built by hand.
        self.category_heights_m
            .get(cat)
            .or_else(|| self.category_heights_m.get(&self.unknown_category))
            .copied()
            .unwrap_or(9.0)
    }
}

fn usable(tag: Option<f64>, name: &'static str, ignored: &mut Vec<&'static str>) -> Option<f64> {
    match tag {
        Some(v) if v.is_finite() && v > 0.0 => Some(v),
        Some(_) => {
            ignored.push(name);
            None
        }
        None => None,
    }
}

pub fn assign_height(fp: &Footprint, table: &TypeDefaultTable) -> HeightAssignment {
    let mut ignored = Vec::new();
    let tag = usable(fp.height_tag_m, "height", &mut ignored);
    let levels = usable(fp.levels_tag, "building:levels", &mut ignored);
    if let Some(h) = tag {
        HeightAssignment::new(h, HeightMethod::HeightTag, ignored)
    } else if let Some(l) = levels {
        HeightAssignment::new(l * table.story_height_m, HeightMethod::Levels, ignored)
    } else {
        HeightAssignment::new(
            table.default_height(&fp.building_type),
            HeightMethod::TypeDefault,
            ignored,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SemanticClass {
    Industrial,
    Residential,
    MidRise,
    HighRise,
}

impl SemanticClass {
    pub const ALL: [SemanticClass; 4] = [
        SemanticClass::Industrial,
        SemanticClass::Residential,
        SemanticClass::MidRise,
        SemanticClass::HighRise,
    ];

    pub fn label(self) -> &'static str {
        match self {
            SemanticClass::Industrial => "industrial",
            SemanticClass::Residential => "residential",
            SemanticClass::MidRise => "mid_rise",
            SemanticClass::HighRise => "high_rise",
        }
    }
}

impl fmt::Display for SemanticClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Upper bounds (inclusive) of the first three classes.
const CLASS_BOUNDS_M: [(f64, SemanticClass); 3] = [
    (8.0, SemanticClass::Industrial),
    (15.0, SemanticClass::Residential),
    (25.0, SemanticClass::MidRise),
];

pub fn classify_semantic(height_m: f64) -> Result<SemanticClass> {
    if !(height_m.is_finite() && height_m > 0.0) {
        return Err(Error::invalid("height_m", format!("{height_m} must be > 0")));
    }
    Ok(CLASS_BOUNDS_M
        .iter()
        .find(|(bound, _)| height_m <= *bound)
        .map(|&(_, c)| c)
        .unwrap_or(SemanticClass::HighRise))
}
