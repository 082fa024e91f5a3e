//! Centralized maneuver planner over priority sets.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::driver::DriverParams;
use crate::map::RoadNetwork;
use crate::mlp::MlpModel;
use crate::predictor::{rollout_many, time_loss, RolloutParams, ScenePrediction};
use crate::sim::{is_active, SceneState, VehicleId};

pub const DEFAULT_BUDGET: usize = 100;
/// Cycle time the planner is expected to meet.
pub const CYCLE_TARGET_S: f64 = 0.2;
/// Cost of one changed entry in the predicted crossing order.
pub const SWITCH_PENALTY_S: f64 = 1.0;

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("pair <{0},{0}> is reflexive")]
    Reflexive(VehicleId),
    #[error("pairs <{0},{1}> and <{1},{0}> both present")]
    NotAntisymmetric(VehicleId, VehicleId),
    #[error("unknown planning method `{0}`")]
    UnknownMethod(String),
    #[error("urgency model expects {0} inputs, need 4")]
    ModelShape(usize),
    #[error("method heur requires an urgency model")]
    MissingModel,
}

/// Ordered pairs ⟨prioritized, yielding⟩, kept sorted and deduplicated.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PrioritySet {
    pairs: Vec<(VehicleId, VehicleId)>,
}

impl PrioritySet {
    pub fn from_pairs(
        pairs: impl IntoIterator<Item = (VehicleId, VehicleId)>,
    ) -> Result<Self, PlanError> {
        let mut pairs: Vec<_> = pairs.into_iter().collect();
        pairs.sort_unstable();
        pairs.dedup();
        for &(i, j) in &pairs {
            if i == j {
                return Err(PlanError::Reflexive(i));
            }
            if pairs.binary_search(&(j, i)).is_ok() {
                return Err(PlanError::NotAntisymmetric(i.min(j), i.max(j)));
            }
        }
        Ok(PrioritySet { pairs })
    }

    pub fn pairs(&self) -> &[(VehicleId, VehicleId)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn contains(&self, pair: (VehicleId, VehicleId)) -> bool {
        self.pairs.binary_search(&pair).is_ok()
    }

    /// Vehicles appearing in any pair.
    pub fn vehicles(&self) -> BTreeSet<VehicleId> {
        self.pairs.iter().flat_map(|&(i, j)| [i, j]).collect()
    }

    fn with(
        &self,
        add: &[(VehicleId, VehicleId)],
        remove: &[(VehicleId, VehicleId)],
    ) -> Option<Self> {
        PrioritySet::from_pairs(
            self.pairs
                .iter()
                .copied()
                .filter(|p| !remove.contains(p))
                .chain(add.iter().copied()),
        )
        .ok()
    }
}

impl fmt::Display for PrioritySet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (k, (i, j)) in self.pairs.iter().enumerate() {
            if k > 0 {
                write!(f, ", ")?;
            }
            write!(f, "<{i},{j}>")?;
        }
        write!(f, "}}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintEntry {
    pub s: f64,
    pub t_min: f64,
    pub t_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSet {
    pub vehicle: VehicleId,
    pub entries: Vec<ConstraintEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    None,
    Nc,
    Fifo,
    Heur,
    Opt,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::None,
        Method::Nc,
        Method::Fifo,
        Method::Heur,
        Method::Opt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::None => "none",
            Method::Nc => "nc",
            Method::Fifo => "fifo",
            Method::Heur => "heur",
            Method::Opt => "opt",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = PlanError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| PlanError::UnknownMethod(s.to_string()))
    }
}

pub type NcSets = BTreeMap<VehicleId, BTreeSet<VehicleId>>;

#[derive(Debug, Clone, PartialEq)]
pub struct PlanResult {
    pub chosen: PrioritySet,
    pub constraints: Vec<ConstraintSet>,
    pub non_conflicting: NcSets,
    pub metric: f64,
    pub candidates_evaluated: usize,
    pub cycle_runtime: f64,
    /// Pairs left out of the constraints: the prioritized vehicle had no exit in the prediction.
    pub dropped_pairs: Vec<(VehicleId, VehicleId)>,
    /// The cycle overran its budget and the previous maneuver was kept.
    pub kept_previous: bool,
}

impl PlanResult {
    fn empty(non_conflicting: NcSets) -> Self {
        PlanResult {
            chosen: PrioritySet::default(),
            constraints: Vec::new(),
            non_conflicting,
            metric: 0.0,
            candidates_evaluated: 0,
            cycle_runtime: 0.0,
            dropped_pairs: Vec::new(),
            kept_previous: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannerConfig {
    pub budget: usize,
    /// Runtime limit per cycle in seconds; `None` never falls back, which
    /// keeps runs reproducible.
    pub cycle_budget: Option<f64>,
    pub rollout: RolloutParams,
    pub driver: DriverParams,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            budget: DEFAULT_BUDGET,
            cycle_budget: None,
            rollout: RolloutParams::default(),
            driver: DriverParams::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlannerMemory {
    pub previous: PrioritySet,
    pub last: Option<PlanResult>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UrgencyFeatures {
    pub d_stop: f64,
    pub v: f64,
    pub n_lead: f64,
    pub n_foll: f64,
}

impl UrgencyFeatures {
    pub fn to_array(self) -> [f64; 4] {
        [self.d_stop, self.v, self.n_lead, self.n_foll]
    }
}

/// Estimated time to reach the next zone; smaller is more urgent.
pub fn fifo_urgency(d_stop: f64, v: f64) -> f64 {
    d_stop / v.max(0.1)
}

/// Weight of a vehicle's time loss after waiting `t_slow` seconds.
pub fn waiting_weight(t_slow: f64) -> f64 {
    1.0 + t_slow / 10.0
}

pub fn weights(scene: &SceneState) -> Vec<f64> {
    scene
        .vehicles
        .iter()
        .map(|v| waiting_weight(v.t_slow))
        .collect()
}

/// Distance to the stop line of the first zone not yet cleared; 0 inside a zone.
pub fn distance_to_stop(net: &RoadNetwork, scene: &SceneState, i: VehicleId) -> f64 {
    let v = &scene.vehicles[i];
    net.routes[v.route]
        .zones
        .iter()
        .find(|z| v.rear() < z.s_target)
        .map_or(f64::INFINITY, |z| (z.s_stop - v.s).max(0.0))
}

/// Distance, speed and queue counts around vehicle `i`.
pub fn urgency_features(net: &RoadNetwork, scene: &SceneState, i: VehicleId) -> UrgencyFeatures {
    let me = &scene.vehicles[i];
    let route = &net.routes[me.route];
    let d_stop = distance_to_stop(net, scene, i);
    let stop_s = if d_stop.is_finite() {
        me.s + d_stop
    } else {
        route.exit_s
    };
    let mut n_lead = 0.0;
    let mut n_foll = 0.0;
    for o in &scene.vehicles {
        if o.id == i || !is_active(net, o) {
            continue;
        }
        if let Some(pos) = net.map_onto(me.route, o.route, o.s, o.length) {
            if pos > me.s && pos <= stop_s {
                n_lead += 1.0;
            } else if pos < me.s && pos >= me.s - 100.0 {
                n_foll += 1.0;
            }
        }
    }
    UrgencyFeatures {
        d_stop: if d_stop.is_finite() { d_stop } else { 0.0 },
        v: me.v,
        n_lead,
        n_foll,
    }
}

/// An unordered conflicting CAV pair `a < b` and the zones still ahead of both.
#[derive(Debug, Clone, PartialEq)]
pub struct ConflictPair {
    pub a: VehicleId,
    pub b: VehicleId,
    pub zones: Vec<usize>,
}

pub fn conflicting_cav_pairs(scene: &SceneState, net: &RoadNetwork) -> Vec<ConflictPair> {
    let cavs: Vec<_> = scene
        .vehicles
        .iter()
        .filter(|v| v.is_cav() && is_active(net, v))
        .collect();
    let mut out = Vec::new();
    for (k, va) in cavs.iter().enumerate() {
        for vb in &cavs[k + 1..] {
            let zones: Vec<usize> = net
                .conflicts(va.route, vb.route)
                .iter()
                .filter(|pc| {
                    va.rear() < net.routes[va.route].zones[pc.rz_a].s_target
                        && vb.rear() < net.routes[vb.route].zones[pc.rz_b].s_target
                })
                .map(|pc| pc.zone)
                .collect();
            if !zones.is_empty() {
                out.push(ConflictPair {
                    a: va.id,
                    b: vb.id,
                    zones,
                });
            }
        }
    }
    out
}

pub fn non_conflicting_sets(scene: &SceneState, net: &RoadNetwork) -> NcSets {
    let conflicting: BTreeSet<(VehicleId, VehicleId)> = conflicting_cav_pairs(scene, net)
        .iter()
        .map(|c| (c.a, c.b))
        .collect();
    let cavs: Vec<VehicleId> = scene
        .vehicles
        .iter()
        .filter(|v| v.is_cav() && is_active(net, v))
        .map(|v| v.id)
        .collect();
    cavs.iter()
        .map(|&i| {
            let set = cavs
                .iter()
                .copied()
                .filter(|&j| j != i && !conflicting.contains(&(i.min(j), i.max(j))))
                .collect();
            (i, set)
        })
        .collect()
}

/// Each zone's induced precedence relation must be acyclic, and every pair
/// must still be conflicting.
fn is_valid_set(
    set: &PrioritySet,
    conflicts: &BTreeMap<(VehicleId, VehicleId), Vec<usize>>,
) -> bool {
    let mut by_zone: BTreeMap<usize, Vec<(VehicleId, VehicleId)>> = BTreeMap::new();
    for &(i, j) in set.pairs() {
        let Some(zones) = conflicts.get(&(i.min(j), i.max(j))) else {
            return false;
        };
        for &z in zones {
            by_zone.entry(z).or_default().push((i, j));
        }
    }
    by_zone.values().all(|edges| acyclic(edges))
}

fn acyclic(edges: &[(VehicleId, VehicleId)]) -> bool {
    if edges.len() < 3 {
        return true;
    }
    let nodes: BTreeSet<VehicleId> = edges.iter().flat_map(|&(a, b)| [a, b]).collect();
    let mut indeg: BTreeMap<VehicleId, usize> = nodes.iter().map(|&n| (n, 0)).collect();
    for &(_, b) in edges {
        *indeg.get_mut(&b).unwrap() += 1;
    }
    let mut ready: Vec<VehicleId> = indeg
        .iter()
        .filter(|(_, &d)| d == 0)
        .map(|(&n, _)| n)
        .collect();
    let mut seen = 0;
    while let Some(n) = ready.pop() {
        seen += 1;
        for &(a, b) in edges {
            if a == n {
                let d = indeg.get_mut(&b).unwrap();
                *d -= 1;
                if *d == 0 {
                    ready.push(b);
                }
            }
        }
    }
    seen == nodes.len()
}

fn conflict_map(pairs: &[ConflictPair]) -> BTreeMap<(VehicleId, VehicleId), Vec<usize>> {
    pairs
        .iter()
        .map(|c| ((c.a, c.b), c.zones.clone()))
        .collect()
}

/// Restrict a set to pairs that are still conflicting.
pub fn prune(set: &PrioritySet, pairs: &[ConflictPair]) -> PrioritySet {
    let live: BTreeSet<(VehicleId, VehicleId)> = pairs.iter().map(|c| (c.a, c.b)).collect();
    PrioritySet::from_pairs(
        set.pairs()
            .iter()
            .copied()
            .filter(|&(i, j)| live.contains(&(i.min(j), i.max(j)))),
    )
    .expect("subset of a valid set")
}

/// Local-search neighbourhood of the previous set, in a fixed order and
/// truncated to `budget`. Index 0 is always the (pruned) previous set.
pub fn generate_opt(
    previous: &PrioritySet,
    scene: &SceneState,
    net: &RoadNetwork,
    budget: usize,
) -> Vec<PrioritySet> {
    let pairs = conflicting_cav_pairs(scene, net);
    opt_neighbourhood(&prune(previous, &pairs), &pairs, budget)
}

/// Candidate list around `prev` for the given conflicting pairs, truncated to `budget`.
pub fn opt_neighbourhood(
    prev: &PrioritySet,
    pairs: &[ConflictPair],
    budget: usize,
) -> Vec<PrioritySet> {
    let conflicts = conflict_map(pairs);
    let mut out: Vec<PrioritySet> = vec![prev.clone()];
    let mut seen: BTreeSet<PrioritySet> = out.iter().cloned().collect();
    let mut push = |cand: Option<PrioritySet>, out: &mut Vec<PrioritySet>| {
        if out.len() >= budget {
            return;
        }
        if let Some(c) = cand {
            if is_valid_set(&c, &conflicts) && seen.insert(c.clone()) {
                out.push(c);
            }
        }
    };
    push(Some(PrioritySet::default()), &mut out);
    for &p in prev.pairs() {
        push(prev.with(&[], &[p]), &mut out);
    }
    for &(i, j) in prev.pairs() {
        push(prev.with(&[(j, i)], &[(i, j)]), &mut out);
    }
    let free: Vec<&ConflictPair> = pairs
        .iter()
        .filter(|c| !prev.contains((c.a, c.b)) && !prev.contains((c.b, c.a)))
        .collect();
    let singles: Vec<(usize, (VehicleId, VehicleId))> = free
        .iter()
        .enumerate()
        .flat_map(|(k, c)| [(k, (c.a, c.b)), (k, (c.b, c.a))])
        .collect();
    for &(_, p) in &singles {
        push(prev.with(&[p], &[]), &mut out);
    }
    'outer: for (x, &(kx, px)) in singles.iter().enumerate() {
        for &(ky, py) in &singles[x + 1..] {
            if out.len() >= budget {
                break 'outer;
            }
            if kx != ky {
                push(prev.with(&[px, py], &[]), &mut out);
            }
        }
    }
    out
}

/// Orders each conflicting pair by a per-vehicle urgency (larger first);
/// exact ties go to the smaller id.
fn order_by_urgency(pairs: &[ConflictPair], u: impl Fn(VehicleId) -> f64) -> PrioritySet {
    PrioritySet::from_pairs(pairs.iter().map(|c| {
        let (ua, ub) = (u(c.a), u(c.b));
        if ua > ub || (ua == ub && c.a < c.b) {
            (c.a, c.b)
        } else {
            (c.b, c.a)
        }
    }))
    .expect("a total order yields an antisymmetric set")
}

pub fn generate_fifo(scene: &SceneState, net: &RoadNetwork) -> PrioritySet {
    let pairs = conflicting_cav_pairs(scene, net);
    order_by_urgency(&pairs, |i| {
        -fifo_urgency(distance_to_stop(net, scene, i), scene.vehicles[i].v)
    })
}

pub fn generate_heur(
    scene: &SceneState,
    net: &RoadNetwork,
    model: &MlpModel,
) -> Result<PrioritySet, PlanError> {
    if model.n_inputs() != 4 {
        return Err(PlanError::ModelShape(model.n_inputs()));
    }
    let pairs = conflicting_cav_pairs(scene, net);
    let u: BTreeMap<VehicleId, f64> = pairs
        .iter()
        .flat_map(|c| [c.a, c.b])
        .collect::<BTreeSet<_>>()
        .into_iter()
        .map(|i| {
            (
                i,
                model.predict(&urgency_features(net, scene, i).to_array()),
            )
        })
        .collect();
    Ok(order_by_urgency(&pairs, |i| u[&i]))
}

/// L̃ = weighted time loss + penalty per crossing-order pair not in the
/// previous prediction.
pub fn maneuver_metric(pred: &ScenePrediction, weights: &[f64], previous: &ScenePrediction) -> f64 {
    let prev: BTreeSet<_> = previous.crossing_order.iter().collect();
    let switched = pred
        .crossing_order
        .iter()
        .filter(|o| !prev.contains(o))
        .count();
    time_loss(pred, weights) + SWITCH_PENALTY_S * switched as f64
}

/// A prediction may be executed if every pair is honoured and no predicted
/// collision involves a vehicle the set constrains.
pub fn is_valid_prediction(set: &PrioritySet, pred: &ScenePrediction) -> bool {
    if !pred.priority_fulfilled {
        return false;
    }
    let involved = set.vehicles();
    !pred
        .collision_pairs
        .iter()
        .any(|(a, b)| involved.contains(a) || involved.contains(b))
}

/// Space-time constraints from the chosen prediction, absolute times. Returns
/// the constraint sets and the pairs dropped for lack of an exit.
pub fn extract_constraints(
    chosen: &PrioritySet,
    pred: &ScenePrediction,
    net: &RoadNetwork,
    scene: &SceneState,
) -> (Vec<ConstraintSet>, Vec<(VehicleId, VehicleId)>) {
    let mut per: BTreeMap<VehicleId, Vec<ConstraintEntry>> = BTreeMap::new();
    let mut dropped = Vec::new();
    let mut add = |v: VehicleId, e: ConstraintEntry| {
        let list = per.entry(v).or_default();
        match list.iter_mut().find(|x| x.s == e.s) {
            Some(x) => {
                x.t_min = x.t_min.max(e.t_min);
                x.t_max = x.t_max.min(e.t_max);
            }
            None => list.push(e),
        }
    };
    for &(i, j) in chosen.pairs() {
        let (vi, vj) = (&scene.vehicles[i], &scene.vehicles[j]);
        let mut entries = Vec::new();
        let mut ok = true;
        for pc in net.conflicts(vi.route, vj.route) {
            let zi = net.routes[vi.route].zones[pc.rz_a];
            let zj = net.routes[vj.route].zones[pc.rz_b];
            if vi.rear() >= zi.s_target || vj.rear() >= zj.s_target {
                continue;
            }
            match pred.event(i, pc.zone) {
                Some(e) if e.t_exit.is_finite() => {
                    let t = pred.start_time + e.t_exit;
                    entries.push((zi.s_target, zj.s_stop, t));
                }
                _ => ok = false,
            }
        }
        if !ok {
            dropped.push((i, j));
            continue;
        }
        for (s_i, s_j, t) in entries {
            add(
                i,
                ConstraintEntry {
                    s: s_i,
                    t_min: f64::NEG_INFINITY,
                    t_max: t,
                },
            );
            add(
                j,
                ConstraintEntry {
                    s: s_j,
                    t_min: t,
                    t_max: f64::INFINITY,
                },
            );
        }
    }
    let sets = per
        .into_iter()
        .map(|(vehicle, mut entries)| {
            entries.sort_by(|a, b| a.s.total_cmp(&b.s));
            ConstraintSet { vehicle, entries }
        })
        .collect();
    (sets, dropped)
}

#[cfg(not(target_arch = "wasm32"))]
fn clock() -> impl FnOnce() -> f64 {
    let t = std::time::Instant::now();
    move || t.elapsed().as_secs_f64()
}

#[cfg(target_arch = "wasm32")]
fn clock() -> impl FnOnce() -> f64 {
    || 0.0
}

/// One planning cycle: generate candidates, predict, select and extract.
pub fn plan_cycle(
    scene: &SceneState,
    net: &RoadNetwork,
    method: Method,
    memory: &mut PlannerMemory,
    cfg: &PlannerConfig,
    model: Option<&MlpModel>,
) -> Result<PlanResult, PlanError> {
    let elapsed = clock();
    if method == Method::None {
        return Ok(PlanResult::empty(NcSets::new()));
    }
    let nc = non_conflicting_sets(scene, net);
    let mut result = match method {
        Method::None => unreachable!(),
        Method::Nc => PlanResult::empty(nc),
        Method::Fifo | Method::Heur => {
            let cand = if method == Method::Fifo {
                generate_fifo(scene, net)
            } else {
                generate_heur(scene, net, model.ok_or(PlanError::MissingModel)?)?
            };
            let mut result = PlanResult::empty(nc.clone());
            if !cand.is_empty() {
                let pred = rollout_many(
                    net,
                    scene,
                    std::slice::from_ref(&cand),
                    &memory.previous,
                    &nc,
                    &cfg.driver,
                    &cfg.rollout,
                )
                .pop()
                .unwrap();
                result.candidates_evaluated = 1;
                if is_valid_prediction(&cand, &pred) {
                    result.metric = time_loss(&pred, &weights(scene));
                    let (constraints, dropped) = extract_constraints(&cand, &pred, net, scene);
                    result.constraints = constraints;
                    result.dropped_pairs = dropped;
                    result.chosen = cand;
                }
            }
            result
        }
        Method::Opt => {
            let cands = generate_opt(&memory.previous, scene, net, cfg.budget);
            let mut result = PlanResult::empty(nc.clone());
            if cands.len() > 1 {
                let preds = rollout_many(
                    net,
                    scene,
                    &cands,
                    &memory.previous,
                    &nc,
                    &cfg.driver,
                    &cfg.rollout,
                );
                let w = weights(scene);
                let best = cands
                    .iter()
                    .zip(&preds)
                    .enumerate()
                    .filter(|(_, (c, p))| is_valid_prediction(c, p))
                    .map(|(k, (_, p))| (k, maneuver_metric(p, &w, &preds[0])))
                    .fold(None, |best: Option<(usize, f64)>, (k, m)| match best {
                        Some((_, bm)) if bm <= m => best,
                        _ => Some((k, m)),
                    });
                result.candidates_evaluated = cands.len();
                if let Some((k, m)) = best {
                    let (constraints, dropped) =
                        extract_constraints(&cands[k], &preds[k], net, scene);
                    result.constraints = constraints;
                    result.dropped_pairs = dropped;
                    result.chosen = cands[k].clone();
                    result.metric = m;
                }
            }
            result
        }
    };
    result.cycle_runtime = elapsed();
    if let (Some(limit), Some(last)) = (cfg.cycle_budget, &memory.last) {
        if result.cycle_runtime > limit {
            let mut kept = last.clone();
            kept.cycle_runtime = result.cycle_runtime;
            kept.kept_previous = true;
            return Ok(kept);
        }
    }
    memory.previous = result.chosen.clone();
    memory.last = Some(result.clone());
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::predictor::rollout;
    use crate::sim::{Kind, VehicleState};

    fn set(p: &[(usize, usize)]) -> PrioritySet {
        PrioritySet::from_pairs(p.iter().copied()).unwrap()
    }

    fn pair(a: usize, b: usize) -> ConflictPair {
        ConflictPair {
            a,
            b,
            zones: vec![0],
        }
    }

    #[test]
    fn priority_set_invariants() {
        assert_eq!(
            PrioritySet::from_pairs([(1, 1)]),
            Err(PlanError::Reflexive(1))
        );
        assert_eq!(
            PrioritySet::from_pairs([(1, 2), (2, 1)]),
            Err(PlanError::NotAntisymmetric(1, 2))
        );
        assert_eq!(set(&[(2, 1), (0, 1), (2, 1)]).pairs(), &[(0, 1), (2, 1)]);
    }

    #[test]
    fn opt_from_empty_with_one_pair() {
        let c = opt_neighbourhood(&PrioritySet::default(), &[pair(0, 1)], 100);
        assert_eq!(c, vec![set(&[]), set(&[(0, 1)]), set(&[(1, 0)])]);
    }

    #[test]
    fn opt_deduplicates_removal() {
        let c = opt_neighbourhood(&set(&[(0, 1)]), &[pair(0, 1)], 100);
        assert_eq!(c, vec![set(&[(0, 1)]), set(&[]), set(&[(1, 0)])]);
    }

    #[test]
    fn opt_drops_cyclic_sets() {
        let pairs = [pair(0, 1), pair(0, 2), pair(1, 2)];
        let c = opt_neighbourhood(&set(&[(0, 1), (1, 2)]), &pairs, 100);
        assert!(!c.contains(&set(&[(0, 1), (1, 2), (2, 0)])));
        assert!(c.contains(&set(&[(0, 1), (1, 2), (0, 2)])));
    }

    #[test]
    fn fifo_urgency_examples() {
        assert!((fifo_urgency(10.0, 5.0) - 2.0).abs() < 1e-9);
        assert!((fifo_urgency(10.0, 0.0) - 100.0).abs() < 1e-9);
        assert!((waiting_weight(20.0) - 3.0).abs() < 1e-9);
    }

    #[test]
    fn urgency_order_and_tie_break() {
        let pairs = [pair(0, 1)];
        assert_eq!(order_by_urgency(&pairs, |i| [3.0, 1.0][i]), set(&[(0, 1)]));
        assert_eq!(order_by_urgency(&pairs, |i| [1.0, 3.0][i]), set(&[(1, 0)]));
        assert_eq!(order_by_urgency(&pairs, |_| 2.0), set(&[(0, 1)]));
        let three = [pair(0, 1), pair(0, 2), pair(1, 2)];
        let s = order_by_urgency(&three, |i| [2.0, 5.0, 1.0][i]);
        assert_eq!(s, set(&[(0, 2), (1, 0), (1, 2)]));
        assert!(acyclic(s.pairs()));
    }

    fn two_cavs(route_a: &str, s_a: f64, route_b: &str, s_b: f64) -> (RoadNetwork, SceneState) {
        let net = fixtures::load("main_road_4arm").unwrap();
        let scene = SceneState::new(vec![
            VehicleState::new(0, Kind::Cav, net.route_index(route_a).unwrap(), s_a, 10.0),
            VehicleState::new(1, Kind::Cav, net.route_index(route_b).unwrap(), s_b, 10.0),
        ]);
        (net, scene)
    }

    #[test]
    fn conflict_detection() {
        let (net, scene) = two_cavs("S_straight", 80.0, "E_straight", 80.0);
        assert_eq!(conflicting_cav_pairs(&scene, &net).len(), 1);
        let (net, scene) = two_cavs("S_right", 80.0, "N_right", 80.0);
        assert!(conflicting_cav_pairs(&scene, &net).is_empty());
        let nc = non_conflicting_sets(&scene, &net);
        assert!(nc[&0].contains(&1) && nc[&1].contains(&0));
        let (net, scene) = two_cavs("S_straight", 140.0, "E_straight", 80.0);
        assert!(conflicting_cav_pairs(&scene, &net).is_empty());
    }

    #[test]
    fn fifo_prioritizes_earlier_arrival() {
        let (net, scene) = two_cavs("S_straight", 100.0, "E_straight", 90.0);
        assert_eq!(generate_fifo(&scene, &net), set(&[(0, 1)]));
    }

    #[test]
    fn switching_penalty_counts_changed_order() {
        let mut a = ScenePrediction::from_speed_samples(0.1, &[vec![(10.0, 10.0); 2]]);
        let mut b = a.clone();
        a.crossing_order = vec![(0, 1), (2, 3)];
        b.crossing_order = vec![(0, 1), (3, 2)];
        assert_eq!(maneuver_metric(&a, &[1.0], &a), 0.0);
        assert_eq!(maneuver_metric(&b, &[1.0], &a), 1.0);
    }

    #[test]
    fn opt_prioritizes_closer_vehicle() {
        let (net, scene) = two_cavs("S_straight", 100.0, "W_straight", 80.0);
        let cfg = PlannerConfig::default();
        let cands = generate_opt(&PrioritySet::default(), &scene, &net, cfg.budget);
        assert_eq!(cands.len(), 3);
        let preds = rollout_many(
            &net,
            &scene,
            &cands,
            &PrioritySet::default(),
            &NcSets::new(),
            &cfg.driver,
            &cfg.rollout,
        );
        let w = weights(&scene);
        let scores: Vec<f64> = preds
            .iter()
            .map(|p| maneuver_metric(p, &w, &preds[0]))
            .collect();
        let mut memory = PlannerMemory::default();
        let res = plan_cycle(&scene, &net, Method::Opt, &mut memory, &cfg, None).unwrap();
        assert_eq!(res.chosen, set(&[(0, 1)]), "{scores:?}");
        assert!(scores[1] < scores[2]);
    }

    #[test]
    fn extraction_matches_exit_time() {
        let (net, scene) = two_cavs("S_straight", 90.0, "E_straight", 90.0);
        let cand = set(&[(0, 1)]);
        let p = DriverParams::default();
        let pred = rollout(
            &net,
            &scene,
            &cand,
            &PrioritySet::default(),
            &p,
            &RolloutParams::default(),
        );
        let (cs, dropped) = extract_constraints(&cand, &pred, &net, &scene);
        assert!(dropped.is_empty());
        let zone = net.conflicts(scene.vehicles[0].route, scene.vehicles[1].route)[0].zone;
        let t = pred.event(0, zone).unwrap().t_exit;
        assert_eq!(cs[0].entries[0].t_max, t);
        assert_eq!(cs[1].entries[0].t_min, t);
        assert!(
            extract_constraints(&PrioritySet::default(), &pred, &net, &scene)
                .0
                .is_empty()
        );
    }

    #[test]
    fn no_cavs_gives_empty_plans() {
        let net = fixtures::load("main_road_4arm").unwrap();
        let scene = SceneState::new(vec![VehicleState::new(0, Kind::Hdv, 0, 50.0, 10.0)]);
        for m in [Method::None, Method::Nc, Method::Fifo, Method::Opt] {
            let mut memory = PlannerMemory::default();
            let r = plan_cycle(
                &scene,
                &net,
                m,
                &mut memory,
                &PlannerConfig::default(),
                None,
            )
            .unwrap();
            assert!(
                r.chosen.is_empty() && r.constraints.is_empty() && r.non_conflicting.is_empty()
            );
        }
    }
}
