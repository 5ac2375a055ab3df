//! Lane centerlines from vehicle GPS points and the road graph built from
//! them.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::EnuPoint;
use crate::prior::BuildingRecord;

/// Minimum spacing between consecutive centerline vertices, meters.
pub const VERTEX_SPACING_M: f64 = 5.0;
pub const OCCLUDER_DISTANCE_M: f64 = 30.0;
pub const OCCLUDER_MIN_HEIGHT_M: f64 = 10.0;

/// Lane id given to points whose trajectory has no lane column.
pub const DEFAULT_LANE_ID: &str = "lane-0";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lane {
    pub lane_id: String,
    /// Unit principal direction; the larger-magnitude component is positive.
    pub direction: [f64; 2],
    pub centerline: Vec<EnuPoint>,
    pub point_count: usize,
    /// RMS cross-track distance of the input points from the fitted axis.
    pub residual_rms_m: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RoadGraph {
    pub vertices: Vec<EnuPoint>,
    pub edges: Vec<(usize, usize, String)>,
}

impl RoadGraph {
    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        match self.edges.iter().find(|(a, b, _)| *a >= n || *b >= n) {
            Some((a, b, lane)) => Err(Error::invalid(
                "road_graph.edges",
                format!("edge ({a}, {b}, {lane}) references a vertex beyond {n}"),
            )),
            None => Ok(()),
        }
    }

    pub fn lane_ids(&self) -> BTreeSet<&str> {
        self.edges.iter().map(|(_, _, l)| l.as_str()).collect()
    }

    /// Segments of one lane's polyline, in edge order.
    fn segments(&self) -> impl Iterator<Item = (EnuPoint, EnuPoint)> + '_ {
        self.edges
            .iter()
            .map(|&(a, b, _)| (self.vertices[a], self.vertices[b]))
    }
}

/// Principal direction of a centered point cloud: the first right singular
/// vector of the N x 2 matrix of offsets.
fn principal_direction(offsets: &[[f64; 2]]) -> Result<[f64; 2]> {
    let m = DMatrix::from_fn(offsets.len(), 2, |r, c| offsets[r][c]);
    let svd = m.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::Degenerate("SVD did not converge".into()))?;
    let top = svd.singular_values.imax();
    if svd.singular_values[top] <= 0.0 {
        return Err(Error::Degenerate("lane points are coincident".into()));
    }
    let (mut x, mut y) = (v_t[(top, 0)], v_t[(top, 1)]);
    let norm = x.hypot(y);
    x /= norm;
    y /= norm;
    let dominant = if x.abs() >= y.abs() { x } else { y };
    if dominant < 0.0 {
        x = -x;
        y = -y;
    }
    Ok([x, y])
}

/// Fits one straight centerline through a lane's points.
pub fn lane_centerline(points: &[EnuPoint], lane_id: &str) -> Result<Lane> {
    if points.len() < 2 {
        return Err(Error::Degenerate(format!(
            "lane {lane_id}: {} point(s), need at least 2",
            points.len()
        )));
    }
    let n = points.len() as f64;
    let mean_e = points.iter().map(|p| p.e).sum::<f64>() / n;
    let mean_n = points.iter().map(|p| p.n).sum::<f64>() / n;
    let offsets: Vec<[f64; 2]> = points.iter().map(|p| [p.e - mean_e, p.n - mean_n]).collect();
    let d = principal_direction(&offsets)
        .map_err(|e| Error::Degenerate(format!("lane {lane_id}: {e}")))?;

    let mut along: Vec<f64> = offsets.iter().map(|o| o[0] * d[0] + o[1] * d[1]).collect();
    let cross_sq: f64 = offsets
        .iter()
        .map(|o| (o[1] * d[0] - o[0] * d[1]).powi(2))
        .sum();
    along.sort_by(f64::total_cmp);

    let (first, last) = (along[0], along[along.len() - 1]);
    let mut kept = vec![first];
    for &t in &along[1..] {
        if t - kept[kept.len() - 1] >= VERTEX_SPACING_M {
            kept.push(t);
        }
    }
    let tail = kept[kept.len() - 1];
    if tail < last {
        if last - tail < VERTEX_SPACING_M && kept.len() > 1 {
            *kept.last_mut().unwrap() = last;
        } else {
            kept.push(last);
        }
    }
    if kept.len() < 2 {
        return Err(Error::Degenerate(format!("lane {lane_id}: zero extent")));
    }

    Ok(Lane {
        lane_id: lane_id.to_string(),
        direction: d,
        centerline: kept
            .into_iter()
            .map(|t| EnuPoint::new(mean_e + t * d[0], mean_n + t * d[1]))
            .collect(),
        point_count: points.len(),
        residual_rms_m: (cross_sq / n).sqrt(),
    })
}

/// Groups points by lane label. Unlabelled points share [`DEFAULT_LANE_ID`].
pub fn group_by_lane(points: impl IntoIterator<Item = (Option<String>, EnuPoint)>) -> BTreeMap<String, Vec<EnuPoint>> {
    let mut groups: BTreeMap<String, Vec<EnuPoint>> = BTreeMap::new();
    for (id, p) in points {
        groups
            .entry(id.unwrap_or_else(|| DEFAULT_LANE_ID.to_string()))
            .or_default()
            .push(p);
    }
    groups
}

/// Chains each lane's centerline; lanes are not merged with each other.
pub fn build_road_graph(lanes: &[Lane]) -> RoadGraph {
    let mut g = RoadGraph::default();
    for lane in lanes {
        let base = g.vertices.len();
        g.vertices.extend(lane.centerline.iter().copied());
        for i in 1..lane.centerline.len() {
            g.edges.push((base + i - 1, base + i, lane.lane_id.clone()));
        }
    }
    g
}

pub fn point_segment_distance(p: &EnuPoint, a: &EnuPoint, b: &EnuPoint) -> f64 {
    let (dx, dy) = (b.e - a.e, b.n - a.n);
    let len_sq = dx * dx + dy * dy;
    if len_sq == 0.0 {
        return p.distance(a);
    }
    let t = (((p.e - a.e) * dx + (p.n - a.n) * dy) / len_sq).clamp(0.0, 1.0);
    p.distance(&EnuPoint::new(a.e + t * dx, a.n + t * dy))
}

/// Distance from `p` to the nearest road segment, `None` for an empty graph.
pub fn distance_to_road(p: &EnuPoint, graph: &RoadGraph) -> Option<f64> {
    graph
        .segments()
        .map(|(a, b)| point_segment_distance(p, &a, &b))
        .min_by(f64::total_cmp)
}

pub fn is_occluder(centroid: &EnuPoint, height_m: f64, graph: &RoadGraph) -> bool {
    height_m >= OCCLUDER_MIN_HEIGHT_M
        && distance_to_road(centroid, graph).is_some_and(|d| d <= OCCLUDER_DISTANCE_M)
}

/// Ids of buildings tall enough and close enough to a lane to block views.
pub fn flag_occluders(buildings: &[BuildingRecord], lanes: &[Lane]) -> BTreeSet<String> {
    let graph = build_road_graph(lanes);
    buildings
        .iter()
        .filter(|b| is_occluder(&b.centroid_enu, b.height_m, &graph))
        .map(|b| b.id.clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fallback::{HeightMethod, SemanticClass};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn line(n: usize, dir: [f64; 2], spacing: f64) -> Vec<EnuPoint> {
        (0..n)
            .map(|i| EnuPoint::new(dir[0] * i as f64 * spacing, dir[1] * i as f64 * spacing))
            .collect()
    }

    /// Closed-form principal eigenvector of the 2x2 scatter matrix.
    fn scatter_direction(points: &[EnuPoint]) -> [f64; 2] {
        let n = points.len() as f64;
        let me = points.iter().map(|p| p.e).sum::<f64>() / n;
        let mn = points.iter().map(|p| p.n).sum::<f64>() / n;
        let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
        for p in points {
            let (x, y) = (p.e - me, p.n - mn);
            sxx += x * x;
            syy += y * y;
            sxy += x * y;
        }
        let theta = 0.5 * (2.0 * sxy).atan2(sxx - syy);
        [theta.cos(), theta.sin()]
    }

    fn angle_between(a: [f64; 2], b: [f64; 2]) -> f64 {
        (a[0] * b[0] + a[1] * b[1]).abs().min(1.0).acos().to_degrees()
    }

    fn record(id: &str, e: f64, n: f64, h: f64) -> BuildingRecord {
        BuildingRecord {
            id: id.into(),
            centroid_enu: EnuPoint::new(e, n),
            height_m: h,
            height_uncertainty_m: 1.0,
            confidence: 0.85,
            semantic_class: SemanticClass::Residential,
            height_method: HeightMethod::HeightTag,
            occluder: false,
            footprint_ref: None,
        }
    }

    #[test]
    fn exact_lines() {
        let l = lane_centerline(&line(20, [1.0, 0.0], 3.0), "a").unwrap();
        assert_eq!(l.direction, [1.0, 0.0]);
        assert!(l.residual_rms_m < 1e-12);

        let s = std::f64::consts::FRAC_1_SQRT_2;
        let l = lane_centerline(&line(20, [s, s], 3.0), "b").unwrap();
        assert!((l.direction[0] - s).abs() < 1e-12 && (l.direction[1] - s).abs() < 1e-12);

        let reversed: Vec<EnuPoint> = line(10, [-1.0, 0.0], 2.0);
        assert_eq!(lane_centerline(&reversed, "c").unwrap().direction, [1.0, 0.0]);
        let vertical = line(10, [0.0, -1.0], 2.0);
        let d = lane_centerline(&vertical, "d").unwrap().direction;
        assert!(d[1] == 1.0 && d[0].abs() < 1e-15);
    }

    #[test]
    fn noisy_direction_within_one_degree() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let pts: Vec<EnuPoint> = (0..500)
            .map(|i| EnuPoint::new(300.0 * i as f64 / 499.0, noise.sample(&mut rng)))
            .collect();
        let l = lane_centerline(&pts, "n").unwrap();
        assert!(angle_between(l.direction, [1.0, 0.0]) < 1.0);
        assert!(angle_between(l.direction, scatter_direction(&pts)) < 1e-6);
        assert!((l.residual_rms_m - 1.0).abs() < 0.15);
    }

    #[test]
    fn centerline_spacing_and_endpoints() {
        let l = lane_centerline(&line(101, [1.0, 0.0], 0.5), "a").unwrap();
        let c = &l.centerline;
        assert_eq!(c.first().unwrap().e, 0.0);
        assert_eq!(c.last().unwrap().e, 50.0);
        for w in c.windows(2) {
            assert!(w[1].e - w[0].e >= VERTEX_SPACING_M - 1e-9);
        }
        let short = lane_centerline(&[EnuPoint::new(0.0, 0.0), EnuPoint::new(2.0, 0.0)], "s").unwrap();
        assert_eq!(short.centerline.len(), 2);
    }

    #[test]
    fn degenerate_lanes() {
        assert!(lane_centerline(&[EnuPoint::new(1.0, 1.0)], "x").is_err());
        assert!(lane_centerline(&[EnuPoint::new(1.0, 1.0); 5], "x").is_err());
    }

    #[test]
    fn graph_shapes() {
        let g = build_road_graph(&[]);
        assert!(g.vertices.is_empty() && g.edges.is_empty());
        let lane = Lane {
            lane_id: "a".into(),
            direction: [1.0, 0.0],
            centerline: vec![EnuPoint::new(0.0, 0.0), EnuPoint::new(5.0, 0.0), EnuPoint::new(10.0, 0.0)],
            point_count: 3,
            residual_rms_m: 0.0,
        };
        let g = build_road_graph(&[lane.clone(), lane]);
        assert_eq!(g.vertices.len(), 6);
        assert_eq!(g.edges, vec![
            (0, 1, "a".into()),
            (1, 2, "a".into()),
            (3, 4, "a".into()),
            (4, 5, "a".into())
        ]);
        assert!(g.validate().is_ok());
    }

    #[test]
    fn occluder_rule() {
        let lane = lane_centerline(&line(41, [1.0, 0.0], 5.0), "a").unwrap();
        let b = [
            record("near-tall", 100.0, 25.0, 12.0),
            record("near-low", 100.0, 25.0, 9.0),
            record("far-tall", 100.0, 35.0, 12.0),
            record("edge", 100.0, -30.0, 10.0),
            record("past-end", 240.0, 0.0, 20.0),
        ];
        let flagged = flag_occluders(&b, &[lane]);
        assert_eq!(
            flagged.into_iter().collect::<Vec<_>>(),
            vec!["edge".to_string(), "near-tall".to_string()]
        );
    }

    #[test]
    fn grouping() {
        let g = group_by_lane(vec![
            (Some("b".into()), EnuPoint::new(0.0, 0.0)),
            (None, EnuPoint::new(1.0, 0.0)),
            (Some("b".into()), EnuPoint::new(2.0, 0.0)),
        ]);
        assert_eq!(g["b"].len(), 2);
        assert_eq!(g[DEFAULT_LANE_ID].len(), 1);
    }

    proptest! {
        #[test]
        fn direction_invariant_under_translation_and_scale(
            pts in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 3..40),
            de in -1e4f64..1e4, dn in -1e4f64..1e4, k in 0.1f64..50.0,
        ) {
            let a: Vec<EnuPoint> = pts.iter().map(|&(e, n)| EnuPoint::new(e, n)).collect();
            let b: Vec<EnuPoint> = pts.iter().map(|&(e, n)| EnuPoint::new(k * e + de, k * n + dn)).collect();
            let (Ok(la), Ok(lb)) = (lane_centerline(&a, "a"), lane_centerline(&b, "b")) else {
                return Ok(());
            };
            // Near-isotropic clouds have no stable principal axis.
            let sa = scatter_direction(&a);
            prop_assume!({
                let n = a.len() as f64;
                let me = a.iter().map(|p| p.e).sum::<f64>() / n;
                let mn = a.iter().map(|p| p.n).sum::<f64>() / n;
                let (mut l1, mut l2) = (0.0, 0.0);
                for p in &a {
                    let along = (p.e - me) * sa[0] + (p.n - mn) * sa[1];
                    let cross = (p.n - mn) * sa[0] - (p.e - me) * sa[1];
                    l1 += along * along;
                    l2 += cross * cross;
                }
                l1 > 1.5 * l2
            });
            prop_assert!(angle_between(la.direction, lb.direction) < 1e-4);
            prop_assert!(angle_between(la.direction, sa) < 1e-4);
            prop_assert!((la.direction[0].hypot(la.direction[1]) - 1.0).abs() < 1e-12);
        }

        #[test]
        fn centerline_strictly_ordered(
            pts in prop::collection::vec((-300.0f64..300.0, -5.0f64..5.0), 2..80),
        ) {
            let a: Vec<EnuPoint> = pts.iter().map(|&(e, n)| EnuPoint::new(e, n)).collect();
            if let Ok(l) = lane_centerline(&a, "a") {
                prop_assert!(l.centerline.len() >= 2);
                for w in l.centerline.windows(2) {
                    let t0 = w[0].e * l.direction[0] + w[0].n * l.direction[1];
                    let t1 = w[1].e * l.direction[0] + w[1].n * l.direction[1];
                    prop_assert!(t1 > t0);
                }
            }
        }

        #[test]
        fn occluders_order_independent(
            bs in prop::collection::vec((-100.0f64..300.0, -60.0f64..60.0, 3.0f64..30.0), 0..30),
            rot in 0usize..30,
        ) {
            let lane = lane_centerline(&line(41, [1.0, 0.0], 5.0), "a").unwrap();
            let recs: Vec<BuildingRecord> = bs
                .iter()
                .enumerate()
                .map(|(i, &(e, n, h))| record(&format!("b{i}"), e, n, h))
                .collect();
            let mut rotated = recs.clone();
            if !rotated.is_empty() {
                let r = rot % rotated.len();
                rotated.rotate_left(r);
                rotated.reverse();
            }
            prop_assert_eq!(
                flag_occluders(&recs, std::slice::from_ref(&lane)),
                flag_occluders(&rotated, std::slice::from_ref(&lane))
            );
        }
    }
}
