//! Road-constrained snapping and geofencing.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;
use std::path::Path;

use rstar::primitives::{GeomWithData, Line};
use rstar::{PointDistance, RTree};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{latlon_to_local, project_onto_segment, Point};
use crate::lte::Pci;

#[derive(Debug, Error)]
pub enum RouteError {
    #[error("road graph has no edges")]
    EmptyGraph,
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("{file}:{line}: {msg}")]
    Parse { file: String, line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn parse_err(file: &str, line: usize, msg: impl Into<String>) -> RouteError {
    RouteError::Parse {
        file: file.to_string(),
        line,
        msg: msg.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub a: u64,
    pub b: u64,
    pub max_speed_mps: f64,
}

type IndexedSegment = GeomWithData<Line<[f64; 2]>, usize>;

#[derive(Debug, Clone)]
pub struct RoadGraph {
    nodes: BTreeMap<u64, Point>,
    edges: Vec<Edge>,
    tree: RTree<IndexedSegment>,
}

/// A projection of a fix onto one edge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub point: Point,
    pub edge: usize,
    /// Position along the edge in [0, 1].
    pub t: f64,
    pub distance: f64,
}

impl RoadGraph {
    pub fn new(nodes: BTreeMap<u64, Point>, edges: Vec<Edge>) -> Result<Self, RouteError> {
        for (i, e) in edges.iter().enumerate() {
            for id in [e.a, e.b] {
                if !nodes.contains_key(&id) {
                    return Err(RouteError::Geometry(format!("edge {i} references missing node {id}")));
                }
            }
            if !(e.max_speed_mps > 0.0) || !e.max_speed_mps.is_finite() {
                return Err(RouteError::Geometry(format!("edge {i} has non-positive max speed")));
            }
        }
        if nodes.values().any(|p| !p.is_finite()) {
            return Err(RouteError::Geometry("node coordinates must be finite".into()));
        }
        let segs = edges
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let (a, b) = (nodes[&e.a], nodes[&e.b]);
                GeomWithData::new(Line::new([a.x, a.y], [b.x, b.y]), i)
            })
            .collect();
        Ok(Self {
            nodes,
            edges,
            tree: RTree::bulk_load(segs),
        })
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn node(&self, id: u64) -> Option<Point> {
        self.nodes.get(&id).copied()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn max_speed(&self) -> f64 {
        self.edges.iter().map(|e| e.max_speed_mps).fold(0.0, f64::max)
    }

    pub fn segment(&self, edge: usize) -> (Point, Point) {
        let e = &self.edges[edge];
        (self.nodes[&e.a], self.nodes[&e.b])
    }

    /// The `k` nearest edge projections of `p`; ties by (edge, parameter).
    pub fn k_nearest(&self, p: Point, k: usize) -> Vec<Candidate> {
        let q = [p.x, p.y];
        let mut out: Vec<Candidate> = Vec::new();
        let mut cutoff = f64::INFINITY;
        for seg in self.tree.nearest_neighbor_iter(&q) {
            let d2 = seg.geom().distance_2(&q);
            // keep pulling while distances tie with the k-th so ordering is stable
            if out.len() >= k && d2.sqrt() > cutoff + 1e-12 {
                break;
            }
            let (a, b) = self.segment(seg.data);
            let (point, t) = project_onto_segment(p, a, b);
            out.push(Candidate {
                point,
                edge: seg.data,
                t,
                distance: point.distance(p),
            });
            if out.len() == k {
                cutoff = out.iter().map(|c| c.distance).fold(0.0, f64::max);
            }
        }
        out.sort_by(|a, b| {
            a.distance
                .total_cmp(&b.distance)
                .then(a.edge.cmp(&b.edge))
                .then(a.t.total_cmp(&b.t))
        });
        out.truncate(k);
        out
    }

    pub fn nearest_distance(&self, p: Point) -> Option<f64> {
        self.k_nearest(p, 1).first().map(|c| c.distance)
    }

    /// Edge list CSV: `node_a_id,node_b_id,ax,ay,bx,by,max_speed_mps`, or the
    /// lat/lon variant `node_a_id,node_b_id,a_lat,a_lon,b_lat,b_lon,max_speed_mps`
    /// projected about `origin` (defaults to the first node).
    pub fn from_csv<R: Read>(reader: R, name: &str, origin: Option<(f64, f64)>) -> Result<Self, RouteError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers().map_err(|e| parse_err(name, 1, e.to_string()))?.clone();
        let cols: Vec<&str> = headers.iter().collect();
        let planar = ["node_a_id", "node_b_id", "ax", "ay", "bx", "by", "max_speed_mps"];
        let geo = ["node_a_id", "node_b_id", "a_lat", "a_lon", "b_lat", "b_lon", "max_speed_mps"];
        let latlon = if cols == planar {
            false
        } else if cols == geo {
            true
        } else {
            return Err(parse_err(
                name,
                1,
                format!("expected header {} or {}", planar.join(","), geo.join(",")),
            ));
        };
        let mut nodes: BTreeMap<u64, Point> = BTreeMap::new();
        let mut edges = Vec::new();
        let mut origin = origin;
        for (i, rec) in rdr.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| parse_err(name, line, e.to_string()))?;
            let field = |j: usize| -> Result<&str, RouteError> {
                rec.get(j).ok_or_else(|| parse_err(name, line, format!("missing column {}", cols[j])))
            };
            let num = |j: usize| -> Result<f64, RouteError> {
                let s = field(j)?;
                let v: f64 = s
                    .parse()
                    .map_err(|_| parse_err(name, line, format!("{}: '{s}' is not a number", cols[j])))?;
                if !v.is_finite() {
                    return Err(parse_err(name, line, format!("{}: not finite", cols[j])));
                }
                Ok(v)
            };
            let id = |j: usize| -> Result<u64, RouteError> {
                let s = field(j)?;
                s.parse().map_err(|_| parse_err(name, line, format!("{}: '{s}' is not a node id", cols[j])))
            };
            let (na, nb) = (id(0)?, id(1)?);
            let (mut a, mut b) = (Point::new(num(2)?, num(3)?), Point::new(num(4)?, num(5)?));
            if latlon {
                let o = *origin.get_or_insert((a.x, a.y));
                a = latlon_to_local(a.x, a.y, o.0, o.1);
                b = latlon_to_local(b.x, b.y, o.0, o.1);
            }
            let speed = num(6)?;
            if speed <= 0.0 {
                return Err(parse_err(name, line, "max_speed_mps must be positive"));
            }
            for (nid, p) in [(na, a), (nb, b)] {
                match nodes.get(&nid) {
                    Some(q) if q.distance(p) > 1e-6 => {
                        return Err(parse_err(name, line, format!("node {nid} has inconsistent coordinates")))
                    }
                    Some(_) => {}
                    None => {
                        nodes.insert(nid, p);
                    }
                }
            }
            edges.push(Edge {
                a: na,
                b: nb,
                max_speed_mps: speed,
            });
        }
        Self::new(nodes, edges)
    }

    pub fn from_csv_path(path: &Path, origin: Option<(f64, f64)>) -> Result<Self, RouteError> {
        let f = std::fs::File::open(path)?;
        Self::from_csv(f, &path.display().to_string(), origin)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnapStatus {
    /// No snapping was applied.
    #[default]
    Raw,
    /// First fix of the trajectory: nearest road point.
    Initial,
    /// Nearest survivor, within `dt * max_speed` of the previous snapped point.
    Constrained,
    /// Nearest survivor, but farther from the previous snapped point than the
    /// graph speed limit allows (it was reached from another candidate, or
    /// through the slack).
    Rebranched,
    /// Speed filter removed every candidate; unconstrained restart.
    Reseeded,
}

impl SnapStatus {
    /// Whether the speed-feasibility invariant applies to this fix.
    pub fn speed_checked(self) -> bool {
        self == SnapStatus::Constrained
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fix {
    pub t: f64,
    pub position: Point,
    #[serde(default)]
    pub snapped: Option<Point>,
    #[serde(default)]
    pub candidates: Vec<Point>,
    #[serde(default)]
    pub status: SnapStatus,
}

impl Fix {
    pub fn new(t: f64, position: Point) -> Self {
        Self {
            t,
            position,
            snapped: None,
            candidates: Vec::new(),
            status: SnapStatus::Raw,
        }
    }

    /// Snapped position when present, raw otherwise.
    pub fn best(&self) -> Point {
        self.snapped.unwrap_or(self.position)
    }
}

/// Map-matches fixes to the road graph under per-edge speed limits.
///
/// A candidate survives when it lies within `dt * max_speed(edge)` of any
/// candidate that survived at the previous fix; the nearest survivor is the
/// snapped point.
pub fn snap_trajectory(fixes: &[Fix], graph: &RoadGraph, k: usize) -> Result<Vec<Fix>, RouteError> {
    snap_trajectory_with_slack(fixes, graph, k, 0.0)
}

/// As [`snap_trajectory`], widening the reachability radius by `slack_m`
/// to absorb position noise in the raw fixes. Without it, fixes noisier than
/// the speed budget lose their on-road candidate and the chain can lock onto
/// a junction that every step keeps "reaching".
pub fn snap_trajectory_with_slack(fixes: &[Fix], graph: &RoadGraph, k: usize, slack_m: f64) -> Result<Vec<Fix>, RouteError> {
    if graph.is_empty() {
        return Err(RouteError::EmptyGraph);
    }
    if k == 0 {
        return Err(RouteError::Geometry("k must be at least 1".into()));
    }
    if !(slack_m >= 0.0 && slack_m.is_finite()) {
        return Err(RouteError::Geometry(format!("slack must be finite and non-negative, got {slack_m}")));
    }
    if fixes.windows(2).any(|w| !(w[1].t > w[0].t)) {
        return Err(RouteError::Geometry("fix times must be strictly increasing".into()));
    }
    let v_max = graph.max_speed();
    let mut out = Vec::with_capacity(fixes.len());
    let mut prev: Vec<Candidate> = Vec::new();
    let mut prev_snap: Option<(f64, Point)> = None;
    for fix in fixes {
        let cands = graph.k_nearest(fix.position, k);
        let (kept, status) = match prev_snap {
            None => (cands, SnapStatus::Initial),
            Some((t0, s0)) => {
                let dt = fix.t - t0;
                let survivors: Vec<Candidate> = cands
                    .iter()
                    .filter(|c| prev.iter().any(|q| c.point.distance(q.point) <= dt * graph.edges[c.edge].max_speed_mps + slack_m))
                    .copied()
                    .collect();
                if survivors.is_empty() {
                    (cands, SnapStatus::Reseeded)
                } else if survivors[0].point.distance(s0) <= dt * v_max {
                    (survivors, SnapStatus::Constrained)
                } else {
                    (survivors, SnapStatus::Rebranched)
                }
            }
        };
        let snapped = kept[0].point;
        out.push(Fix {
            t: fix.t,
            position: fix.position,
            snapped: Some(snapped),
            candidates: kept.iter().map(|c| c.point).collect(),
            status,
        });
        prev = kept;
        prev_snap = Some((fix.t, snapped));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FenceMode {
    Enter,
    Exit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeofenceRegion {
    pub polygon: Vec<Point>,
    pub mode: FenceMode,
    #[serde(default)]
    pub allowed_pcis: Option<BTreeSet<Pci>>,
}

fn segments_cross(a: Point, b: Point, c: Point, d: Point) -> bool {
    let o = |p: Point, q: Point, r: Point| (q - p).cross(r - p);
    let (d1, d2, d3, d4) = (o(c, d, a), o(c, d, b), o(a, b, c), o(a, b, d));
    ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
}

impl GeofenceRegion {
    pub fn new(polygon: Vec<Point>, mode: FenceMode, allowed_pcis: Option<BTreeSet<Pci>>) -> Result<Self, RouteError> {
        let n = polygon.len();
        if n < 3 {
            return Err(RouteError::Geometry(format!("polygon needs at least 3 vertices, got {n}")));
        }
        if polygon.iter().any(|p| !p.is_finite()) {
            return Err(RouteError::Geometry("polygon vertices must be finite".into()));
        }
        for i in 0..n {
            for j in i + 1..n {
                let adjacent = j == i + 1 || (i == 0 && j == n - 1);
                if adjacent {
                    continue;
                }
                if segments_cross(polygon[i], polygon[(i + 1) % n], polygon[j], polygon[(j + 1) % n]) {
                    return Err(RouteError::Geometry(format!("polygon edges {i} and {j} intersect")));
                }
            }
        }
        Ok(Self {
            polygon,
            mode,
            allowed_pcis,
        })
    }

    /// Crossing-number point-in-polygon test.
    pub fn contains(&self, p: Point) -> bool {
        let poly = &self.polygon;
        let n = poly.len();
        let mut inside = false;
        let mut j = n - 1;
        for i in 0..n {
            let (a, b) = (poly[i], poly[j]);
            if (a.y > p.y) != (b.y > p.y) {
                let x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
                if p.x < x {
                    inside = !inside;
                }
            }
            j = i;
        }
        inside
    }

    /// Inside the polygon and, when a PCI allow-list is set, hearing at least
    /// one allowed cell.
    pub fn state(&self, p: Point, detected: Option<&BTreeSet<Pci>>) -> bool {
        let mut inside = self.contains(p);
        if let (Some(allowed), Some(seen)) = (&self.allowed_pcis, detected) {
            inside &= !allowed.is_disjoint(seen);
        }
        inside
    }

    /// File format: `mode,<enter|exit>`, optional `allowed_pcis,<a;b;...>`,
    /// a header `x,y`, then one vertex per line.
    pub fn from_csv<R: Read>(mut reader: R, name: &str) -> Result<Self, RouteError> {
        let mut text = String::new();
        reader.read_to_string(&mut text)?;
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (ln, first) = lines.next().ok_or_else(|| parse_err(name, 1, "empty geofence file"))?;
        let mode = match first.split(',').map(str::trim).collect::<Vec<_>>().as_slice() {
            ["mode", "enter"] => FenceMode::Enter,
            ["mode", "exit"] => FenceMode::Exit,
            _ => return Err(parse_err(name, ln + 1, "first line must be 'mode,enter' or 'mode,exit'")),
        };
        let mut allowed = None;
        let mut header_seen = false;
        let mut polygon = Vec::new();
        for (ln, line) in lines {
            let parts: Vec<&str> = line.split(',').map(str::trim).collect();
            if !header_seen {
                if parts.first() == Some(&"allowed_pcis") && allowed.is_none() {
                    let list = parts.get(1).copied().unwrap_or("");
                    let mut set = BTreeSet::new();
                    for tok in list.split(';').map(str::trim).filter(|s| !s.is_empty()) {
                        let v: u16 = tok.parse().map_err(|_| parse_err(name, ln + 1, format!("bad PCI '{tok}'")))?;
                        set.insert(Pci::new(v).map_err(|e| parse_err(name, ln + 1, e.to_string()))?);
                    }
                    allowed = Some(set);
                    continue;
                }
                if parts == ["x", "y"] {
                    header_seen = true;
                    continue;
                }
                return Err(parse_err(name, ln + 1, "expected 'allowed_pcis,...' or header 'x,y'"));
            }
            if parts.len() != 2 {
                return Err(parse_err(name, ln + 1, "vertex lines need exactly x,y"));
            }
            let x: f64 = parts[0].parse().map_err(|_| parse_err(name, ln + 1, format!("x: '{}' is not a number", parts[0])))?;
            let y: f64 = parts[1].parse().map_err(|_| parse_err(name, ln + 1, format!("y: '{}' is not a number", parts[1])))?;
            polygon.push(Point::new(x, y));
        }
        if !header_seen {
            return Err(parse_err(name, 1, "missing 'x,y' header"));
        }
        Self::new(polygon, mode, allowed)
    }

    pub fn from_csv_path(path: &Path) -> Result<Self, RouteError> {
        let f = std::fs::File::open(path)?;
        Self::from_csv(f, &path.display().to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FenceEvent {
    Enter,
    Exit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeofenceAlert {
    pub t: f64,
    pub fix_index: usize,
    pub event: FenceEvent,
}

/// Every inside/outside transition, regardless of the region's mode.
pub fn transitions(fixes: &[Fix], region: &GeofenceRegion, detected: Option<&[BTreeSet<Pci>]>) -> Vec<GeofenceAlert> {
    let mut out = Vec::new();
    let mut prev: Option<bool> = None;
    for (i, f) in fixes.iter().enumerate() {
        let state = region.state(f.best(), detected.and_then(|d| d.get(i)));
        if let Some(p) = prev {
            if p != state {
                out.push(GeofenceAlert {
                    t: f.t,
                    fix_index: i,
                    event: if state { FenceEvent::Enter } else { FenceEvent::Exit },
                });
            }
        }
        prev = Some(state);
    }
    out
}

/// Alerts matching the region's mode.
pub fn geofence_events(fixes: &[Fix], region: &GeofenceRegion, detected: Option<&[BTreeSet<Pci>]>) -> Vec<GeofenceAlert> {
    let want = match region.mode {
        FenceMode::Enter => FenceEvent::Enter,
        FenceMode::Exit => FenceEvent::Exit,
    };
    transitions(fixes, region, detected).into_iter().filter(|a| a.event == want).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn straight_road() -> RoadGraph {
        let nodes = BTreeMap::from([(1, Point::new(0.0, 0.0)), (2, Point::new(1000.0, 0.0))]);
        RoadGraph::new(nodes, vec![Edge { a: 1, b: 2, max_speed_mps: 20.0 }]).unwrap()
    }

    fn square() -> GeofenceRegion {
        let p = vec![Point::new(0.0, 0.0), Point::new(100.0, 0.0), Point::new(100.0, 100.0), Point::new(0.0, 100.0)];
        GeofenceRegion::new(p, FenceMode::Exit, None).unwrap()
    }

    #[test]
    fn perpendicular_snap() {
        let g = straight_road();
        let s = snap_trajectory(&[Fix::new(0.0, Point::new(400.0, 30.0))], &g, 5).unwrap();
        let p = s[0].snapped.unwrap();
        assert!(p.distance(Point::new(400.0, 0.0)) < 1e-12);
        assert!((p.distance(Point::new(400.0, 30.0)) - 30.0).abs() < 1e-12);
    }

    #[test]
    fn on_road_fixes_are_fixed_points() {
        let g = straight_road();
        let fixes: Vec<Fix> = (0..10).map(|i| Fix::new(i as f64, Point::new(15.0 * i as f64, 0.0))).collect();
        for f in snap_trajectory(&fixes, &g, 5).unwrap() {
            assert!(f.snapped.unwrap().distance(f.position) < 1e-6);
        }
    }

    #[test]
    fn too_fast_candidate_is_rejected() {
        // two parallel roads 100 m apart, 20 m/s limit
        let nodes = BTreeMap::from([
            (1, Point::new(0.0, 0.0)),
            (2, Point::new(1000.0, 0.0)),
            (3, Point::new(0.0, 100.0)),
            (4, Point::new(1000.0, 100.0)),
        ]);
        let edges = vec![Edge { a: 1, b: 2, max_speed_mps: 20.0 }, Edge { a: 3, b: 4, max_speed_mps: 20.0 }];
        let g = RoadGraph::new(nodes, edges).unwrap();
        let fixes = vec![Fix::new(0.0, Point::new(500.0, 0.0)), Fix::new(1.0, Point::new(500.0, 100.0))];
        let s = snap_trajectory(&fixes, &g, 1).unwrap();
        // the only candidate (upper road) is 100 m from every previous one: re-seed
        assert_eq!(s[1].status, SnapStatus::Reseeded);
        // with k = 2 the upper road survives through the first fix's upper
        // candidate; it is nearest, so it is taken but flagged
        let s = snap_trajectory(&fixes, &g, 2).unwrap();
        assert_eq!(s[1].status, SnapStatus::Rebranched);
        assert!(s[1].snapped.unwrap().distance(Point::new(500.0, 100.0)) < 1e-9);
    }

    #[test]
    fn slack_absorbs_fix_noise() {
        // 9 m/s on a 20 m/s road with +-10 m along-road noise: steps of 29 m and -11 m
        let g = straight_road();
        let fixes: Vec<Fix> = (0..8)
            .map(|i| Fix::new(i as f64, Point::new(100.0 + 9.0 * i as f64 + if i % 2 == 0 { -10.0 } else { 10.0 }, 3.0)))
            .collect();
        let strict = snap_trajectory(&fixes, &g, 3).unwrap();
        assert!(strict.iter().any(|f| f.status == SnapStatus::Reseeded));
        let loose = snap_trajectory_with_slack(&fixes, &g, 3, 20.0).unwrap();
        for (i, f) in loose.iter().enumerate().skip(1) {
            let want = if i % 2 == 1 { SnapStatus::Rebranched } else { SnapStatus::Constrained };
            assert_eq!(f.status, want, "fix {i}");
        }
        for f in &loose {
            assert!((f.snapped.unwrap().distance(f.position) - 3.0).abs() < 1e-9);
        }
        assert!(snap_trajectory_with_slack(&fixes, &g, 3, -1.0).is_err());
    }

    #[test]
    fn empty_graph_is_an_error() {
        let g = RoadGraph::new(BTreeMap::new(), vec![]).unwrap();
        assert!(matches!(snap_trajectory(&[], &g, 3), Err(RouteError::EmptyGraph)));
    }

    #[test]
    fn single_exit_crossing() {
        let r = square();
        let fixes: Vec<Fix> = (0..10).map(|i| Fix::new(i as f64, Point::new(55.0 + 10.0 * i as f64, 50.0))).collect();
        let ev = geofence_events(&fixes, &r, None);
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].event, FenceEvent::Exit);
        assert_eq!(fixes[ev[0].fix_index].position.x, 105.0);
        let inside: Vec<Fix> = (0..5).map(|i| Fix::new(i as f64, Point::new(20.0 + i as f64, 50.0))).collect();
        assert!(geofence_events(&inside, &r, None).is_empty());
    }

    #[test]
    fn pci_allow_list_forces_outside() {
        let mut r = square();
        r.allowed_pcis = Some(BTreeSet::from([Pci::new(7).unwrap()]));
        let fixes = vec![Fix::new(0.0, Point::new(50.0, 50.0)), Fix::new(1.0, Point::new(51.0, 50.0))];
        let seen = vec![BTreeSet::from([Pci::new(7).unwrap()]), BTreeSet::from([Pci::new(9).unwrap()])];
        let ev = geofence_events(&fixes, &r, Some(&seen));
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].fix_index, 1);
    }

    #[test]
    fn self_intersecting_polygon_rejected() {
        let bow = vec![Point::new(0.0, 0.0), Point::new(1.0, 1.0), Point::new(1.0, 0.0), Point::new(0.0, 1.0)];
        assert!(GeofenceRegion::new(bow, FenceMode::Exit, None).is_err());
        assert!(GeofenceRegion::new(vec![Point::new(0.0, 0.0), Point::new(1.0, 1.0)], FenceMode::Exit, None).is_err());
    }

    #[test]
    fn csv_formats_parse() {
        let edges = "node_a_id,node_b_id,ax,ay,bx,by,max_speed_mps\n1,2,0,0,10,0,13.9\n2,3,10,0,10,10,13.9\n";
        let g = RoadGraph::from_csv(edges.as_bytes(), "edges.csv", None).unwrap();
        assert_eq!(g.edges().len(), 2);
        let bad = "node_a_id,node_b_id,ax,ay,bx,by,max_speed_mps\n1,2,0,0,10,0,fast\n";
        let err = RoadGraph::from_csv(bad.as_bytes(), "edges.csv", None).unwrap_err().to_string();
        assert!(err.contains("edges.csv:2") && err.contains("max_speed_mps"), "{err}");
        let ll = "node_a_id,node_b_id,a_lat,a_lon,b_lat,b_lon,max_speed_mps\n1,2,47.0,8.0,47.0,8.001,10\n";
        let g = RoadGraph::from_csv(ll.as_bytes(), "ll.csv", None).unwrap();
        let (a, b) = g.segment(0);
        assert!(a.distance(Point::new(0.0, 0.0)) < 1e-9);
        assert!((b.x - 75.8).abs() < 0.5, "{b:?}");

        let fence = "mode,exit\nallowed_pcis,1;2\nx,y\n0,0\n10,0\n10,10\n";
        let r = GeofenceRegion::from_csv(fence.as_bytes(), "f.csv").unwrap();
        assert_eq!(r.mode, FenceMode::Exit);
        assert_eq!(r.allowed_pcis.as_ref().unwrap().len(), 2);
        assert!(GeofenceRegion::from_csv("mode,sideways\nx,y\n".as_bytes(), "f.csv").is_err());
    }
}
