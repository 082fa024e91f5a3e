//! Static road scene: lanes, routes, conflict zones and right-of-way.
//!
//! Every position is an arc length `s` along a route. Zone geometry is reduced
//! to per-route `[s_stop, s_target]` intervals when the map is authored.

use std::collections::HashMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAP_VERSION: u32 = 1;
/// Spacing of the precomputed heading table.
pub const HEADING_STEP: f64 = 0.5;
pub const HEADING_LOOKAHEAD: f64 = 100.0;
/// Distance past the last target line at which a vehicle leaves the scene.
pub const EXIT_ALLOWANCE: f64 = 20.0;
/// Reinserted vehicles start at least this far before the first stop line.
pub const REINSERT_CLEARANCE: f64 = 45.0;
/// Zones closer than this along a route are crossed as one unit.
pub const CLUSTER_GAP: f64 = 15.0;

#[derive(Debug, Error)]
pub enum MapError {
    #[error("map document does not match the schema at {path}: {msg}")]
    Schema { path: String, msg: String },
    #[error("unsupported map_version {0} (expected {MAP_VERSION})")]
    Version(u32),
    #[error("{path}: {msg}")]
    Invalid { path: String, msg: String },
    #[error("unknown {what} `{id}`")]
    Unknown { what: &'static str, id: String },
}

fn invalid(path: impl Into<String>, msg: impl Into<String>) -> MapError {
    MapError::Invalid {
        path: path.into(),
        msg: msg.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    MainRoadIntersection,
    RightBeforeLeft,
    Roundabout,
    Narrowing,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapDocument {
    pub map_version: u32,
    pub scenario_kind: ScenarioKind,
    pub lanes: Vec<LaneDoc>,
    pub routes: Vec<RouteDoc>,
    pub conflict_zones: Vec<ZoneDoc>,
    pub entries: Vec<EntryDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaneDoc {
    pub id: String,
    pub points: Vec<[f64; 2]>,
    pub speed_limit_mps: f64,
    #[serde(default)]
    pub successors: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouteDoc {
    pub id: String,
    pub lane_ids: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZoneDoc {
    pub id: String,
    pub approaches: Vec<ApproachDoc>,
    #[serde(default)]
    pub precedence: Vec<[usize; 2]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApproachDoc {
    pub route_id: String,
    pub s_stop_m: f64,
    pub s_target_m: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntryDoc {
    pub route_id: String,
    pub spawn_s_min_m: f64,
    pub spawn_s_max_m: f64,
}

#[derive(Debug, Clone)]
pub struct Lane {
    pub id: String,
    pub points: Vec<[f64; 2]>,
    pub speed_limit: f64,
    pub successors: Vec<usize>,
    cum: Vec<f64>,
}

impl Lane {
    pub fn length(&self) -> f64 {
        *self.cum.last().unwrap()
    }

    fn segment(&self, s: f64) -> usize {
        let k = self.cum.partition_point(|&c| c <= s);
        k.clamp(1, self.points.len() - 1) - 1
    }

    fn heading_of(&self, seg: usize) -> f64 {
        let [x0, y0] = self.points[seg];
        let [x1, y1] = self.points[seg + 1];
        (y1 - y0).atan2(x1 - x0)
    }

    /// Point and heading at arc length `s` (clamped to the lane).
    pub fn pose(&self, s: f64) -> ([f64; 2], f64) {
        let s = s.clamp(0.0, self.length());
        let k = self.segment(s);
        let len = self.cum[k + 1] - self.cum[k];
        let u = ((s - self.cum[k]) / len).clamp(0.0, 1.0);
        let [x0, y0] = self.points[k];
        let [x1, y1] = self.points[k + 1];
        ([x0 + u * (x1 - x0), y0 + u * (y1 - y0)], self.heading_of(k))
    }
}

/// One zone passage on a route, sorted by `s_stop`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RouteZone {
    pub zone: usize,
    pub approach: usize,
    pub s_stop: f64,
    pub s_target: f64,
    pub cluster: usize,
}

/// Consecutive zones on one route that are crossed without a chance to stop
/// in between. `zones` indexes `Route::zones`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub start: f64,
    pub end: f64,
    pub zones: std::ops::Range<usize>,
}

#[derive(Debug, Clone, Copy)]
struct RouteSample {
    dpsi: f64,
    limit: f64,
    limit_ahead: f64,
}

#[derive(Debug, Clone)]
pub struct Route {
    pub id: String,
    pub lanes: Vec<usize>,
    pub lane_starts: Vec<f64>,
    pub total_length: f64,
    /// Beyond this point the vehicle has left the scene.
    pub exit_s: f64,
    pub zones: Vec<RouteZone>,
    pub clusters: Vec<Cluster>,
    samples: Vec<RouteSample>,
}

impl Route {
    /// Index into `lanes` of the lane containing `s`.
    pub fn lane_pos(&self, s: f64) -> usize {
        self.lane_starts.partition_point(|&b| b <= s).max(1) - 1
    }

    /// Index of the first zone whose stop line lies strictly ahead of `s`.
    pub fn next_zone(&self, s: f64) -> Option<usize> {
        let k = self.zones.partition_point(|z| z.s_stop <= s);
        (k < self.zones.len()).then_some(k)
    }

    fn sample(&self, s: f64) -> &RouteSample {
        let k = (s.max(0.0) / HEADING_STEP) as usize;
        &self.samples[k.min(self.samples.len() - 1)]
    }

    /// Heading change within the lookahead, from the 0.5 m table.
    pub fn delta_psi(&self, s: f64) -> f64 {
        self.sample(s).dpsi
    }

    /// Lane speed limit at `s`.
    pub fn speed_limit(&self, s: f64) -> f64 {
        self.sample(s).limit
    }

    /// Speed limit at `s` lowered so that upcoming limits can be met with
    /// comfortable braking.
    pub fn speed_limit_ahead(&self, s: f64) -> f64 {
        self.sample(s).limit_ahead
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Approach {
    pub route: usize,
    pub s_stop: f64,
    pub s_target: f64,
    /// Approaches with the same group share the lane at the stop line and
    /// never conflict with each other.
    pub group: usize,
}

#[derive(Debug, Clone)]
pub struct ConflictZone {
    pub id: String,
    pub approaches: Vec<Approach>,
    pub precedence: Vec<(usize, usize)>,
    prec: Vec<i8>,
}

impl ConflictZone {
    /// `Some(true)` if approach `a` has right of way over `b`.
    pub fn precedes(&self, a: usize, b: usize) -> Option<bool> {
        match self.prec[a * self.approaches.len() + b] {
            1 => Some(true),
            -1 => Some(false),
            _ => None,
        }
    }

    pub fn conflicting(&self, a: usize, b: usize) -> bool {
        self.approaches[a].group != self.approaches[b].group
    }
}

#[derive(Debug, Clone)]
pub struct Entry {
    pub route: usize,
    pub lane: usize,
    pub spawn_s_min: f64,
    pub spawn_s_max: f64,
    /// Routes starting at the entry lane, sorted by id.
    pub routes: Vec<usize>,
    pub insert_s: f64,
}

/// A zone shared by two routes on conflicting approaches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairConflict {
    pub zone: usize,
    /// Index into the first route's `zones`.
    pub rz_a: usize,
    /// Index into the second route's `zones`.
    pub rz_b: usize,
}

/// Lanes driven by both routes, in each route's coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
struct SharedSegment {
    a_start: f64,
    b_start: f64,
    len: f64,
}

#[derive(Debug, Clone)]
pub struct RoadNetwork {
    pub kind: ScenarioKind,
    pub lanes: Vec<Lane>,
    pub routes: Vec<Route>,
    pub zones: Vec<ConflictZone>,
    pub entries: Vec<Entry>,
    lane_ids: HashMap<String, usize>,
    route_ids: HashMap<String, usize>,
    conflicts: Vec<Vec<PairConflict>>,
    shared: Vec<Vec<SharedSegment>>,
    perceived: Vec<Vec<(usize, f64)>>,
}

fn wrap(a: f64) -> f64 {
    let mut a = a % (2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    } else if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// Parse and validate a map document.
pub fn load_network(text: &str) -> Result<RoadNetwork, MapError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let doc: MapDocument = serde_path_to_error::deserialize(de).map_err(|e| MapError::Schema {
        path: e.path().to_string(),
        msg: e.inner().to_string(),
    })?;
    RoadNetwork::from_document(&doc)
}

impl RoadNetwork {
    pub fn from_document(doc: &MapDocument) -> Result<Self, MapError> {
        if doc.map_version != MAP_VERSION {
            return Err(MapError::Version(doc.map_version));
        }
        let mut lane_ids = HashMap::new();
        for (k, l) in doc.lanes.iter().enumerate() {
            if lane_ids.insert(l.id.clone(), k).is_some() {
                return Err(invalid(
                    format!("lanes[{k}].id"),
                    format!("duplicate lane `{}`", l.id),
                ));
            }
        }
        let mut lanes: Vec<Lane> = Vec::with_capacity(doc.lanes.len());
        for (k, l) in doc.lanes.iter().enumerate() {
            let path = format!("lanes[{k}]");
            if l.points.len() < 2 {
                return Err(invalid(
                    format!("{path}.points"),
                    "polyline needs at least 2 points",
                ));
            }
            if !(l.speed_limit_mps > 0.0 && l.speed_limit_mps.is_finite()) {
                return Err(invalid(
                    format!("{path}.speed_limit_mps"),
                    "speed limit must be positive",
                ));
            }
            let mut cum = vec![0.0];
            for (p, w) in l.points.windows(2).enumerate() {
                let d = (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
                if d.is_nan() || d <= 1e-9 {
                    return Err(invalid(
                        format!("{path}.points[{}]", p + 1),
                        "consecutive points coincide",
                    ));
                }
                cum.push(cum[p] + d);
            }
            let mut successors = Vec::new();
            for (q, sid) in l.successors.iter().enumerate() {
                let &t = lane_ids.get(sid).ok_or_else(|| {
                    invalid(
                        format!("{path}.successors[{q}]"),
                        format!("unknown lane `{sid}`"),
                    )
                })?;
                successors.push(t);
            }
            lanes.push(Lane {
                id: l.id.clone(),
                points: l.points.clone(),
                speed_limit: l.speed_limit_mps,
                successors,
                cum,
            });
        }

        let mut route_ids = HashMap::new();
        let mut routes = Vec::with_capacity(doc.routes.len());
        for (k, r) in doc.routes.iter().enumerate() {
            let path = format!("routes[{k}]");
            if route_ids.insert(r.id.clone(), k).is_some() {
                return Err(invalid(
                    format!("{path}.id"),
                    format!("duplicate route `{}`", r.id),
                ));
            }
            if r.lane_ids.is_empty() {
                return Err(invalid(format!("{path}.lane_ids"), "route has no lanes"));
            }
            let mut ls: Vec<usize> = Vec::new();
            let mut starts = Vec::new();
            let mut total = 0.0;
            for (q, lid) in r.lane_ids.iter().enumerate() {
                let &li = lane_ids.get(lid).ok_or_else(|| {
                    invalid(
                        format!("{path}.lane_ids[{q}]"),
                        format!("unknown lane `{lid}`"),
                    )
                })?;
                if let Some(&prev) = ls.last() {
                    if !lanes[prev].successors.contains(&li) {
                        return Err(invalid(
                            format!("{path}.lane_ids[{q}]"),
                            format!("`{lid}` is not a successor of `{}`", lanes[prev].id),
                        ));
                    }
                }
                if ls.contains(&li) {
                    return Err(invalid(
                        format!("{path}.lane_ids[{q}]"),
                        "lane visited twice",
                    ));
                }
                ls.push(li);
                starts.push(total);
                total += lanes[li].length();
            }
            routes.push(Route {
                id: r.id.clone(),
                lanes: ls,
                lane_starts: starts,
                total_length: total,
                exit_s: total,
                zones: Vec::new(),
                clusters: Vec::new(),
                samples: Vec::new(),
            });
        }

        let mut zones = Vec::with_capacity(doc.conflict_zones.len());
        for (k, z) in doc.conflict_zones.iter().enumerate() {
            let path = format!("conflict_zones[{k}]");
            if z.approaches.len() < 2 {
                return Err(invalid(
                    format!("{path}.approaches"),
                    "zone needs at least 2 approaches",
                ));
            }
            let mut approaches: Vec<Approach> = Vec::new();
            for (q, a) in z.approaches.iter().enumerate() {
                let apath = format!("{path}.approaches[{q}]");
                let &ri = route_ids.get(&a.route_id).ok_or_else(|| {
                    invalid(
                        format!("{apath}.route_id"),
                        format!("unknown route `{}`", a.route_id),
                    )
                })?;
                if approaches.iter().any(|b| b.route == ri) {
                    return Err(invalid(apath, "route appears twice in one zone"));
                }
                let len = routes[ri].total_length;
                if !(0.0 <= a.s_stop_m && a.s_stop_m < a.s_target_m && a.s_target_m <= len + 1e-9) {
                    return Err(invalid(
                        apath,
                        format!(
                            "need 0 <= s_stop < s_target <= {len:.3}, got [{}, {}]",
                            a.s_stop_m, a.s_target_m
                        ),
                    ));
                }
                let route = &routes[ri];
                let lane = route.lanes[route.lane_pos(a.s_stop_m)];
                approaches.push(Approach {
                    route: ri,
                    s_stop: a.s_stop_m,
                    s_target: a.s_target_m,
                    group: lane,
                });
            }
            let n = approaches.len();
            let mut reach = vec![false; n * n];
            for (q, &[w, l]) in z.precedence.iter().enumerate() {
                if w >= n || l >= n {
                    return Err(invalid(
                        format!("{path}.precedence[{q}]"),
                        "approach index out of range",
                    ));
                }
                if w == l {
                    return Err(invalid(
                        format!("{path}.precedence[{q}]"),
                        "precedence must be irreflexive",
                    ));
                }
                reach[w * n + l] = true;
            }
            for m in 0..n {
                for a in 0..n {
                    for b in 0..n {
                        if reach[a * n + m] && reach[m * n + b] {
                            reach[a * n + b] = true;
                        }
                    }
                }
            }
            let mut prec = vec![0i8; n * n];
            for a in 0..n {
                if reach[a * n + a] {
                    return Err(invalid(
                        format!("{path}.precedence"),
                        "precedence contains a cycle",
                    ));
                }
                for b in 0..n {
                    if reach[a * n + b] {
                        prec[a * n + b] = 1;
                        prec[b * n + a] = -1;
                    }
                }
            }
            zones.push(ConflictZone {
                id: z.id.clone(),
                approaches,
                precedence: z.precedence.iter().map(|&[w, l]| (w, l)).collect(),
                prec,
            });
        }

        for (zi, z) in zones.iter().enumerate() {
            for (ai, a) in z.approaches.iter().enumerate() {
                routes[a.route].zones.push(RouteZone {
                    zone: zi,
                    approach: ai,
                    s_stop: a.s_stop,
                    s_target: a.s_target,
                    cluster: 0,
                });
            }
        }
        for r in &mut routes {
            r.zones
                .sort_by(|a, b| a.s_stop.total_cmp(&b.s_stop).then(a.zone.cmp(&b.zone)));
            let mut clusters: Vec<Cluster> = Vec::new();
            for k in 0..r.zones.len() {
                let z = r.zones[k];
                match clusters.last_mut() {
                    Some(c) if z.s_stop <= c.end + CLUSTER_GAP => {
                        c.end = c.end.max(z.s_target);
                        c.zones.end = k + 1;
                    }
                    _ => clusters.push(Cluster {
                        start: z.s_stop,
                        end: z.s_target,
                        zones: k..k + 1,
                    }),
                }
                r.zones[k].cluster = clusters.len() - 1;
            }
            r.clusters = clusters;
            let last_target = r
                .zones
                .iter()
                .map(|z| z.s_target)
                .fold(f64::NEG_INFINITY, f64::max);
            r.exit_s = if last_target.is_finite() {
                (last_target + EXIT_ALLOWANCE).min(r.total_length)
            } else {
                r.total_length
            };
        }

        let mut entries = Vec::with_capacity(doc.entries.len());
        for (k, e) in doc.entries.iter().enumerate() {
            let path = format!("entries[{k}]");
            let &ri = route_ids.get(&e.route_id).ok_or_else(|| {
                invalid(
                    format!("{path}.route_id"),
                    format!("unknown route `{}`", e.route_id),
                )
            })?;
            let lane = routes[ri].lanes[0];
            if entries.iter().any(|x: &Entry| x.lane == lane) {
                return Err(invalid(path, "two entries share one lane"));
            }
            if !(0.0 <= e.spawn_s_min_m && e.spawn_s_min_m <= e.spawn_s_max_m)
                || e.spawn_s_max_m > lanes[lane].length()
            {
                return Err(invalid(path, "spawn interval must lie on the entry lane"));
            }
            let mut from: Vec<usize> = (0..routes.len())
                .filter(|&r| routes[r].lanes[0] == lane)
                .collect();
            from.sort_by(|&a, &b| routes[a].id.cmp(&routes[b].id));
            let first_stop = from
                .iter()
                .filter_map(|&r| routes[r].zones.first().map(|z| z.s_stop))
                .fold(f64::INFINITY, f64::min);
            let insert_s = if first_stop.is_finite() {
                (first_stop - REINSERT_CLEARANCE).max(0.0)
            } else {
                e.spawn_s_max_m
            };
            entries.push(Entry {
                route: ri,
                lane,
                spawn_s_min: e.spawn_s_min_m,
                spawn_s_max: e.spawn_s_max_m,
                routes: from,
                insert_s,
            });
        }

        let mut net = RoadNetwork {
            kind: doc.scenario_kind,
            lanes,
            routes,
            zones,
            entries,
            lane_ids,
            route_ids,
            conflicts: Vec::new(),
            shared: Vec::new(),
            perceived: Vec::new(),
        };
        net.derive_tables();
        Ok(net)
    }

    fn derive_tables(&mut self) {
        let nr = self.routes.len();
        let mut conflicts = vec![Vec::new(); nr * nr];
        let mut shared = vec![Vec::new(); nr * nr];
        for a in 0..nr {
            for b in 0..nr {
                if a == b {
                    continue;
                }
                let (ra, rb) = (&self.routes[a], &self.routes[b]);
                for (ia, za) in ra.zones.iter().enumerate() {
                    for (ib, zb) in rb.zones.iter().enumerate() {
                        if za.zone == zb.zone
                            && self.zones[za.zone].conflicting(za.approach, zb.approach)
                        {
                            conflicts[a * nr + b].push(PairConflict {
                                zone: za.zone,
                                rz_a: ia,
                                rz_b: ib,
                            });
                        }
                    }
                }
                let mut segs: Vec<SharedSegment> = Vec::new();
                for (pa, &la) in ra.lanes.iter().enumerate() {
                    if let Some(pb) = rb.lanes.iter().position(|&l| l == la) {
                        let seg = SharedSegment {
                            a_start: ra.lane_starts[pa],
                            b_start: rb.lane_starts[pb],
                            len: self.lanes[la].length(),
                        };
                        match segs.last_mut() {
                            Some(s)
                                if (s.a_start + s.len - seg.a_start).abs() < 1e-9
                                    && (s.b_start + s.len - seg.b_start).abs() < 1e-9 =>
                            {
                                s.len += seg.len
                            }
                            _ => segs.push(seg),
                        }
                    }
                }
                shared[a * nr + b] = segs;
            }
        }
        self.conflicts = conflicts;
        self.shared = shared;

        // Route an observer assumes for a vehicle seen on a given lane.
        let mut lane_guess = vec![None::<(usize, f64)>; self.lanes.len()];
        for (li, guess) in lane_guess.iter_mut().enumerate() {
            let mut best: Option<(usize, usize, f64)> = None;
            for (ri, r) in self.routes.iter().enumerate() {
                let Some(p) = r.lanes.iter().position(|&l| l == li) else {
                    continue;
                };
                let start = r.lane_starts[p];
                let remaining = r.zones.iter().filter(|z| z.s_target > start).count();
                let better = match best {
                    None => true,
                    Some((br, bc, _)) => {
                        remaining > bc || (remaining == bc && r.id < self.routes[br].id)
                    }
                };
                if better {
                    best = Some((ri, remaining, start));
                }
            }
            *guess = best.map(|(r, _, s)| (r, s));
        }
        self.perceived = self
            .routes
            .iter()
            .map(|r| {
                r.lanes
                    .iter()
                    .zip(&r.lane_starts)
                    .map(|(&l, &own)| {
                        let (g, start) = lane_guess[l].expect("lane lies on a route");
                        (g, start - own)
                    })
                    .collect()
            })
            .collect();

        let lanes = &self.lanes;
        for r in &mut self.routes {
            r.samples = build_samples(lanes, r);
        }
    }

    pub fn lane_index(&self, id: &str) -> Option<usize> {
        self.lane_ids.get(id).copied()
    }

    pub fn route_index(&self, id: &str) -> Option<usize> {
        self.route_ids.get(id).copied()
    }

    pub fn route(&self, r: usize) -> &Route {
        &self.routes[r]
    }

    /// Zones shared with route `b` on conflicting approaches, seen from `a`.
    pub fn conflicts(&self, a: usize, b: usize) -> &[PairConflict] {
        &self.conflicts[a * self.routes.len() + b]
    }

    /// Position of a vehicle on route `b` expressed on route `a`, if its
    /// front or rear is on a lane that both routes share.
    pub fn map_onto(&self, a: usize, b: usize, s: f64, length: f64) -> Option<f64> {
        if a == b {
            return Some(s);
        }
        let rear = s - length;
        self.shared[a * self.routes.len() + b]
            .iter()
            .find(|g| {
                (s >= g.b_start && s <= g.b_start + g.len)
                    || (rear >= g.b_start && rear < g.b_start + g.len)
            })
            .map(|g| g.a_start + (s - g.b_start))
    }

    /// Route and position an observer assumes for a vehicle at `s` on route
    /// `r`: the most conflicting route through its current lane.
    pub fn perceived(&self, r: usize, s: f64) -> (usize, f64) {
        let (g, off) = self.perceived[r][self.routes[r].lane_pos(s)];
        (g, s + off)
    }

    /// World position and heading at `s` along route `r`.
    pub fn pose(&self, r: usize, s: f64) -> ([f64; 2], f64) {
        let route = &self.routes[r];
        let p = route.lane_pos(s.max(0.0));
        self.lanes[route.lanes[p]].pose(s - route.lane_starts[p])
    }

    pub fn entry_of(&self, route: usize) -> Option<usize> {
        let lane = self.routes[route].lanes[0];
        self.entries.iter().position(|e| e.lane == lane)
    }

    /// Among the routes starting at `entry_lane`, the one passing the most
    /// zone approaches; ties go to the smallest id.
    pub fn most_conflicting_route(&self, entry_lane: &str) -> Result<&Route, MapError> {
        let lane = self
            .lane_index(entry_lane)
            .ok_or_else(|| MapError::Unknown {
                what: "lane",
                id: entry_lane.to_string(),
            })?;
        self.routes
            .iter()
            .filter(|r| r.lanes[0] == lane)
            .max_by(|a, b| {
                a.zones
                    .len()
                    .cmp(&b.zones.len())
                    .then_with(|| b.id.cmp(&a.id))
            })
            .ok_or_else(|| MapError::Unknown {
                what: "entry lane",
                id: entry_lane.to_string(),
            })
    }

    /// Largest absolute heading change between `s` and any point of the
    /// next `lookahead` meters, evaluated on the polyline segments.
    pub fn max_upcoming_heading_diff(&self, route: usize, s: f64, lookahead: f64) -> f64 {
        let r = &self.routes[route];
        let s = s.clamp(0.0, r.total_length);
        let end = (s + lookahead).min(r.total_length);
        let mut h0 = None;
        let mut best: f64 = 0.0;
        for (p, &li) in r.lanes.iter().enumerate() {
            let lane = &self.lanes[li];
            let base = r.lane_starts[p];
            if base > end || base + lane.length() < s {
                continue;
            }
            for k in 0..lane.points.len() - 1 {
                let (a, b) = (base + lane.cum[k], base + lane.cum[k + 1]);
                if b <= s {
                    continue;
                }
                if a >= end && a > s {
                    break;
                }
                let h = lane.heading_of(k);
                let h0 = *h0.get_or_insert(h);
                best = best.max(wrap(h - h0).abs());
            }
        }
        best
    }
}

fn build_samples(lanes: &[Lane], r: &Route) -> Vec<RouteSample> {
    let n = (r.total_length / HEADING_STEP).floor() as usize + 1;
    let mut heading = Vec::with_capacity(n);
    let mut limit = Vec::with_capacity(n);
    for k in 0..n {
        let s = k as f64 * HEADING_STEP;
        let p = r.lane_pos(s);
        let lane = &lanes[r.lanes[p]];
        heading.push(lane.heading_of(lane.segment(s - r.lane_starts[p])));
        limit.push(lane.speed_limit);
    }
    let la = (HEADING_LOOKAHEAD / HEADING_STEP).round() as usize;
    // comfortable deceleration used to anticipate lower limits ahead
    let b = 2.0;
    (0..n)
        .map(|k| {
            let hi = (k + la).min(n - 1);
            let dpsi = heading[k..=hi]
                .iter()
                .map(|&h| wrap(h - heading[k]).abs())
                .fold(0.0, f64::max);
            let limit_ahead = (k..=hi)
                .map(|m| (limit[m] * limit[m] + 2.0 * b * (m - k) as f64 * HEADING_STEP).sqrt())
                .fold(f64::INFINITY, f64::min);
            RouteSample {
                dpsi,
                limit: limit[k],
                limit_ahead,
            }
        })
        .collect()
}
