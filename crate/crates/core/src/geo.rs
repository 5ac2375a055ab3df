//! Projected coordinate frames and the circular operational region.
//!
//! All inputs are already projected to UTM; there is no datum or
//! reprojection math here. The local ENU frame is a plain translation of the
//! UTM grid to the region center (up is not modelled).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ground speed below which a UAV sample counts as hovering, in m/s.
pub const HOVER_SPEED_MPS: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtmPoint {
    pub easting: f64,
    pub northing: f64,
    pub zone_label: String,
}

impl UtmPoint {
    pub fn new(easting: f64, northing: f64, zone_label: impl Into<String>) -> Self {
        UtmPoint {
            easting,
            northing,
            zone_label: zone_label.into(),
        }
    }

    /// Checks the UTM grid invariants: easting in [100 km, 900 km) and a
    /// non-negative northing.
    pub fn validate(&self) -> Result<()> {
        if !(self.easting.is_finite() && (100_000.0..900_000.0).contains(&self.easting)) {
            return Err(Error::invalid(
                "easting",
                format!("{} outside [100000, 900000)", self.easting),
            ));
        }
        if !(self.northing.is_finite() && self.northing >= 0.0) {
            return Err(Error::invalid(
                "northing",
                format!("{} is negative or not finite", self.northing),
            ));
        }
        Ok(())
    }

    fn same_zone(&self, other: &UtmPoint) -> Result<()> {
        if self.zone_label.eq_ignore_ascii_case(&other.zone_label) {
            Ok(())
        } else {
            Err(Error::ZoneMismatch(
                self.zone_label.clone(),
                other.zone_label.clone(),
            ))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnuPoint {
    pub e: f64,
    pub n: f64,
}

impl EnuPoint {
    pub const fn new(e: f64, n: f64) -> Self {
        EnuPoint { e, n }
    }

    pub fn distance(&self, other: &EnuPoint) -> f64 {
        (self.e - other.e).hypot(self.n - other.n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub center: UtmPoint,
    pub radius: f64,
}

impl Region {
    pub fn new(center: UtmPoint, radius: f64) -> Result<Self> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::invalid("radius", format!("{radius} must be > 0")));
        }
        Ok(Region { center, radius })
    }

    /// Membership test for a point already expressed in this region's ENU
    /// frame. Inclusive at the boundary.
    pub fn contains_enu(&self, p: &EnuPoint) -> bool {
        p.e.hypot(p.n) <= self.radius
    }
}

/// One timestamped position fix with its ground speed.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackPoint {
    pub timestamp: f64,
    pub position: UtmPoint,
    pub speed_mps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HoverCenter {
    pub point: UtmPoint,
    /// Number of samples that qualified as hovering.
    pub hover_samples: usize,
    /// Set when no sample was slow enough and the whole track was averaged.
    pub used_full_track: bool,
}

/// Centroid of the samples with ground speed below [`HOVER_SPEED_MPS`].
///
/// When nothing qualifies, the centroid of the whole track is returned with
/// `used_full_track` raised.
pub fn hover_center(track: &[TrackPoint]) -> Result<HoverCenter> {
    let first = track.first().ok_or(Error::EmptyTrack)?;
    let zone = &first.position.zone_label;
    for p in track {
        first.position.same_zone(&p.position)?;
    }

    let hovering: Vec<&TrackPoint> = track
        .iter()
        .filter(|p| p.speed_mps < HOVER_SPEED_MPS)
        .collect();
    let (subset, used_full_track): (Vec<&TrackPoint>, bool) = if hovering.is_empty() {
        (track.iter().collect(), true)
    } else {
        (hovering, false)
    };

    // Averaging offsets from the first sample keeps precision at UTM magnitudes.
    let (e0, n0) = (first.position.easting, first.position.northing);
    let count = subset.len() as f64;
    let (de, dn) = subset.iter().fold((0.0, 0.0), |(se, sn), p| {
        (se + (p.position.easting - e0), sn + (p.position.northing - n0))
    });

    Ok(HoverCenter {
        point: UtmPoint::new(e0 + de / count, n0 + dn / count, zone.clone()),
        hover_samples: if used_full_track { 0 } else { subset.len() },
        used_full_track,
    })
}

pub fn utm_to_enu(p: &UtmPoint, origin: &UtmPoint) -> Result<EnuPoint> {
    p.same_zone(origin)?;
    Ok(EnuPoint::new(
        p.easting - origin.easting,
        p.northing - origin.northing,
    ))
}

pub fn enu_to_utm(p: &EnuPoint, origin: &UtmPoint) -> UtmPoint {
    UtmPoint::new(
        origin.easting + p.e,
        origin.northing + p.n,
        origin.zone_label.clone(),
    )
}

pub fn within_region(p: &UtmPoint, region: &Region) -> Result<bool> {
    let offset = utm_to_enu(p, &region.center)?;
    Ok(region.contains_enu(&offset))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p0() -> UtmPoint {
        UtmPoint::new(511525.7, 5026509.1, "32N")
    }

    fn fix(e: f64, n: f64, speed: f64) -> TrackPoint {
        TrackPoint {
            timestamp: 0.0,
            position: UtmPoint::new(e, n, "32N"),
            speed_mps: speed,
        }
    }

    #[test]
    fn single_stationary_point_is_its_own_center() {
        let c = hover_center(&[fix(511525.7, 5026509.1, 0.0)]).unwrap();
        assert!((c.point.easting - 511525.7).abs() < 1e-9);
        assert!((c.point.northing - 5026509.1).abs() < 1e-9);
        assert!(!c.used_full_track);
    }

    #[test]
    fn two_hover_points_average() {
        let c = hover_center(&[fix(0.0, 0.0, 0.0), fix(10.0, 0.0, 0.0)]).unwrap();
        assert_eq!(c.point.easting, 5.0);
        assert_eq!(c.point.northing, 0.0);
        assert_eq!(c.hover_samples, 2);
    }

    #[test]
    fn fast_samples_are_excluded() {
        let c = hover_center(&[
            fix(100.0, 100.0, 0.1),
            fix(102.0, 100.0, 0.4),
            fix(500.0, 900.0, 12.0),
            fix(101.0, 100.0, 0.5),
        ])
        .unwrap();
        assert_eq!(c.point.easting, 101.0);
        assert_eq!(c.hover_samples, 2);
    }

    #[test]
    fn no_hover_falls_back_to_whole_track() {
        let c = hover_center(&[fix(0.0, 0.0, 3.0), fix(4.0, 2.0, 3.0)]).unwrap();
        assert!(c.used_full_track);
        assert_eq!((c.point.easting, c.point.northing), (2.0, 1.0));
    }

    #[test]
    fn empty_track_is_an_error() {
        assert!(matches!(hover_center(&[]), Err(Error::EmptyTrack)));
    }

    #[test]
    fn enu_offsets() {
        let o = p0();
        assert_eq!(utm_to_enu(&o, &o).unwrap(), EnuPoint::new(0.0, 0.0));
        let p = UtmPoint::new(o.easting + 100.0, o.northing - 50.0, "32N");
        let enu = utm_to_enu(&p, &o).unwrap();
        assert!((enu.e - 100.0).abs() < 1e-9 && (enu.n + 50.0).abs() < 1e-9);
        let q = UtmPoint::new(511625.7, 5026509.1, "32N");
        let enu = utm_to_enu(&q, &o).unwrap();
        assert!((enu.e - 100.0).abs() < 1e-9 && enu.n.abs() < 1e-9);
    }

    #[test]
    fn zone_mismatch_rejected() {
        let q = UtmPoint::new(511625.7, 5026509.1, "33N");
        assert!(matches!(utm_to_enu(&q, &p0()), Err(Error::ZoneMismatch(..))));
    }

    #[test]
    fn region_boundary_is_inclusive() {
        let r = Region::new(p0(), 800.0).unwrap();
        assert!(within_region(&p0(), &r).unwrap());
        let east = UtmPoint::new(p0().easting + 800.0, p0().northing, "32N");
        assert!(within_region(&east, &r).unwrap());
        let beyond = UtmPoint::new(p0().easting + 800.1, p0().northing, "32N");
        assert!(!within_region(&beyond, &r).unwrap());
    }

    #[test]
    fn region_rejects_nonpositive_radius() {
        assert!(Region::new(p0(), 0.0).is_err());
        assert!(Region::new(p0(), -5.0).is_err());
    }

    #[test]
    fn utm_validation() {
        assert!(p0().validate().is_ok());
        assert!(UtmPoint::new(99_999.0, 10.0, "32N").validate().is_err());
        assert!(UtmPoint::new(500_000.0, -1.0, "32N").validate().is_err());
    }

    proptest! {
        #[test]
        fn origin_maps_to_zero(e in 100_000.0f64..899_999.0, n in 0.0f64..9_000_000.0) {
            let o = UtmPoint::new(e, n, "32N");
            prop_assert_eq!(utm_to_enu(&o, &o).unwrap(), EnuPoint::new(0.0, 0.0));
        }

        #[test]
        fn region_membership_is_rotation_invariant(
            dist in 0.0f64..1600.0,
            a in 0.0f64..std::f64::consts::TAU,
            b in 0.0f64..std::f64::consts::TAU,
        ) {
            // Keep clear of the boundary where rounding could legitimately differ.
            prop_assume!((dist - 800.0).abs() > 1e-6);
            let r = Region::new(p0(), 800.0).unwrap();
            let at = |ang: f64| UtmPoint::new(
                p0().easting + dist * ang.cos(),
                p0().northing + dist * ang.sin(),
                "32N",
            );
            prop_assert_eq!(within_region(&at(a), &r).unwrap(), within_region(&at(b), &r).unwrap());
        }

        #[test]
        fn hover_center_is_order_independent(
            pts in prop::collection::vec((0.0f64..1000.0, 0.0f64..1000.0, 0.0f64..2.0), 1..40),
            seed in any::<u64>(),
        ) {
            let track: Vec<TrackPoint> = pts
                .iter()
                .map(|&(e, n, s)| fix(500_000.0 + e, 5_000_000.0 + n, s))
                .collect();
            let mut shuffled = track.clone();
            // Deterministic Fisher-Yates driven by the proptest seed.
            let mut state = seed | 1;
            for i in (1..shuffled.len()).rev() {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                shuffled.swap(i, (state % (i as u64 + 1)) as usize);
            }
            let a = hover_center(&track).unwrap();
            let b = hover_center(&shuffled).unwrap();
            prop_assert!((a.point.easting - b.point.easting).abs() < 1e-6);
            prop_assert!((a.point.northing - b.point.northing).abs() < 1e-6);
        }
    }
}
