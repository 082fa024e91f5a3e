//! Closed-loop rollouts of the whole scene under a candidate priority set.

use std::collections::{BTreeMap, BTreeSet};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::driver::{decide, perceive, DriverParams, Relations};
use crate::map::RoadNetwork;
use crate::planner::PrioritySet;
use crate::sim::{is_active, zone_passages, Kind, SceneState, VehicleId};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutParams {
    pub horizon: f64,
    pub dt: f64,
    /// Span during which the committed set is still followed.
    pub commit: f64,
    pub record_trajectories: bool,
}

impl Default for RolloutParams {
    fn default() -> Self {
        RolloutParams {
            horizon: 12.0,
            dt: 0.1,
            commit: 1.0,
            record_trajectories: false,
        }
    }
}

impl RolloutParams {
    fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    fn commit_steps(&self) -> usize {
        ((self.commit / self.dt).round() as usize).min(self.steps())
    }
}

/// Occupancy of one zone by one vehicle, times relative to the rollout start.
/// A vehicle inside at the start has `t_enter = 0`; one that never leaves
/// within the horizon has `t_exit = ∞`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZoneEvent {
    pub vehicle: VehicleId,
    pub zone: usize,
    pub approach: usize,
    pub group: usize,
    pub t_enter: f64,
    pub t_exit: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenePrediction {
    pub start_time: f64,
    pub horizon: f64,
    pub dt: f64,
    /// `(s, v)` per vehicle at every step including t = 0, if recorded.
    pub trajectories: Vec<Vec<(f64, f64)>>,
    /// Route each vehicle was rolled out on.
    pub routes: Vec<usize>,
    pub events: Vec<ZoneEvent>,
    pub collision: bool,
    pub collision_pairs: Vec<(VehicleId, VehicleId)>,
    pub priority_fulfilled: bool,
    pub crossing_order: Vec<(VehicleId, VehicleId)>,
    /// Unweighted time loss per vehicle.
    pub losses: Vec<f64>,
}

impl ScenePrediction {
    pub fn event(&self, vehicle: VehicleId, zone: usize) -> Option<&ZoneEvent> {
        self.events
            .iter()
            .find(|e| e.vehicle == vehicle && e.zone == zone)
    }

    /// Builds a prediction's loss terms from sampled `(v, v_max)` series.
    /// Sample 0 is the initial state and does not contribute.
    pub fn from_speed_samples(dt: f64, samples: &[Vec<(f64, f64)>]) -> Self {
        let losses = samples
            .iter()
            .map(|series| {
                series
                    .iter()
                    .skip(1)
                    .map(|&(v, vmax)| dt * loss_rate(v, vmax))
                    .sum()
            })
            .collect();
        ScenePrediction {
            start_time: 0.0,
            horizon: dt
                * samples
                    .iter()
                    .map(|s| s.len().saturating_sub(1))
                    .max()
                    .unwrap_or(0) as f64,
            dt,
            trajectories: Vec::new(),
            routes: Vec::new(),
            events: Vec::new(),
            collision: false,
            collision_pairs: Vec::new(),
            priority_fulfilled: true,
            crossing_order: Vec::new(),
            losses,
        }
    }
}

fn loss_rate(v: f64, vmax: f64) -> f64 {
    (1.0 - v / vmax).max(0.0)
}

/// Weighted time loss.
pub fn time_loss(pred: &ScenePrediction, weights: &[f64]) -> f64 {
    pred.losses
        .iter()
        .enumerate()
        .map(|(i, l)| weights.get(i).copied().unwrap_or(1.0) * l)
        .sum()
}

#[derive(Debug, Clone)]
struct RolloutState {
    scene: SceneState,
    t: f64,
    open: Vec<Vec<Option<f64>>>,
    events: Vec<ZoneEvent>,
    losses: Vec<f64>,
    traj: Vec<Vec<(f64, f64)>>,
    accels: Vec<f64>,
}

impl RolloutState {
    fn new(net: &RoadNetwork, scene: &SceneState, rp: &RolloutParams) -> Self {
        let mut scene = scene.clone();
        for v in &mut scene.vehicles {
            if v.kind == Kind::Hdv {
                (v.route, v.s) = net.perceived(v.route, v.s);
            }
        }
        let open = scene
            .vehicles
            .iter()
            .map(|v| {
                let active = is_active(net, v);
                net.routes[v.route]
                    .zones
                    .iter()
                    .map(|z| (active && v.s >= z.s_stop && v.rear() < z.s_target).then_some(0.0))
                    .collect()
            })
            .collect();
        let n = scene.vehicles.len();
        let traj = if rp.record_trajectories {
            scene.vehicles.iter().map(|v| vec![(v.s, v.v)]).collect()
        } else {
            Vec::new()
        };
        RolloutState {
            scene,
            t: 0.0,
            open,
            events: Vec::new(),
            losses: vec![0.0; n],
            traj,
            accels: vec![0.0; n],
        }
    }

    fn run(
        &mut self,
        net: &RoadNetwork,
        rel: &Relations,
        p: &DriverParams,
        rp: &RolloutParams,
        steps: usize,
    ) {
        for _ in 0..steps {
            let view = perceive(net, &self.scene);
            for i in 0..self.scene.vehicles.len() {
                self.accels[i] = decide(net, &self.scene, i, &view, rel, p).accel;
            }
            let before: Vec<f64> = self.scene.vehicles.iter().map(|v| v.s).collect();
            self.scene.advance(net, &self.accels, rp.dt);
            let t0 = self.t;
            self.t += rp.dt;
            for (i, v) in self.scene.vehicles.iter().enumerate() {
                let route = &net.routes[v.route];
                let open = &mut self.open[i];
                let events = &mut self.events;
                zone_passages(route, before[i], v.s, v.length, |k, entered, f| {
                    let t = t0 + f * rp.dt;
                    if entered {
                        open[k] = Some(t);
                    } else if let Some(t_enter) = open[k].take() {
                        let z = route.zones[k];
                        events.push(ZoneEvent {
                            vehicle: i,
                            zone: z.zone,
                            approach: z.approach,
                            group: net.zones[z.zone].approaches[z.approach].group,
                            t_enter,
                            t_exit: t,
                        });
                    }
                });
                if is_active(net, v) {
                    self.losses[i] += rp.dt * loss_rate(v.v, route.speed_limit(v.s));
                }
                if rp.record_trajectories {
                    self.traj[i].push((v.s, v.v));
                }
            }
        }
    }

    fn finish(
        mut self,
        net: &RoadNetwork,
        start: &SceneState,
        candidate: &PrioritySet,
        rp: &RolloutParams,
    ) -> ScenePrediction {
        for (i, open) in self.open.iter().enumerate() {
            let route = &net.routes[self.scene.vehicles[i].route];
            for (k, t) in open.iter().enumerate() {
                if let Some(t_enter) = *t {
                    let z = route.zones[k];
                    self.events.push(ZoneEvent {
                        vehicle: i,
                        zone: z.zone,
                        approach: z.approach,
                        group: net.zones[z.zone].approaches[z.approach].group,
                        t_enter,
                        t_exit: f64::INFINITY,
                    });
                }
            }
        }
        let mut events = self.events;
        events.sort_by(|a, b| {
            a.zone
                .cmp(&b.zone)
                .then(a.t_enter.total_cmp(&b.t_enter))
                .then(a.vehicle.cmp(&b.vehicle))
        });

        let mut collision_pairs = BTreeSet::new();
        let mut order = BTreeSet::new();
        for (a_idx, a) in events.iter().enumerate() {
            for b in events[a_idx + 1..].iter().take_while(|b| b.zone == a.zone) {
                if a.group == b.group || a.vehicle == b.vehicle {
                    continue;
                }
                order.insert((a.vehicle, b.vehicle));
                if b.t_enter < a.t_exit {
                    collision_pairs.insert((a.vehicle.min(b.vehicle), a.vehicle.max(b.vehicle)));
                }
            }
        }

        let routes: Vec<usize> = self.scene.vehicles.iter().map(|v| v.route).collect();
        let fulfilled = candidate.pairs().iter().all(|&(i, j)| {
            let (vi, vj) = (&start.vehicles[i], &start.vehicles[j]);
            net.conflicts(routes[i], routes[j]).iter().all(|pc| {
                let zi = net.routes[routes[i]].zones[pc.rz_a];
                let zj = net.routes[routes[j]].zones[pc.rz_b];
                if vi.rear() >= zi.s_target || vj.rear() >= zj.s_target {
                    return true;
                }
                let find =
                    |v: VehicleId| events.iter().find(|e| e.vehicle == v && e.zone == pc.zone);
                match (find(i), find(j)) {
                    (_, None) => true,
                    (Some(ei), Some(ej)) => ej.t_enter >= ei.t_exit,
                    (None, Some(_)) => false,
                }
            })
        });

        ScenePrediction {
            start_time: start.time,
            horizon: rp.horizon,
            dt: rp.dt,
            trajectories: self.traj,
            routes,
            events,
            collision: !collision_pairs.is_empty(),
            collision_pairs: collision_pairs.into_iter().collect(),
            priority_fulfilled: fulfilled,
            crossing_order: order.into_iter().collect(),
            losses: self.losses,
        }
    }
}

/// Non-conflicting masks as seen by CAV observers.
pub fn apply_non_conflicting(rel: &mut Relations, nc: &BTreeMap<VehicleId, BTreeSet<VehicleId>>) {
    for (&i, others) in nc {
        for &j in others {
            rel.set_non_conflicting(i, j);
        }
    }
}

/// Rolls out every candidate; the committed prefix is simulated once and
/// shared, so all predictions agree up to the end of the commitment window.
pub fn rollout_many(
    net: &RoadNetwork,
    scene: &SceneState,
    candidates: &[PrioritySet],
    committed: &PrioritySet,
    nc: &BTreeMap<VehicleId, BTreeSet<VehicleId>>,
    p: &DriverParams,
    rp: &RolloutParams,
) -> Vec<ScenePrediction> {
    let n = scene.vehicles.len();
    let mut rel = Relations::with_priorities(n, committed);
    apply_non_conflicting(&mut rel, nc);
    let mut prefix = RolloutState::new(net, scene, rp);
    prefix.run(net, &rel, p, rp, rp.commit_steps());
    let rest = rp.steps() - rp.commit_steps();
    let one = |cand: &PrioritySet| {
        let mut rel = rel.clone();
        rel.set_priorities(cand);
        let mut st = prefix.clone();
        st.run(net, &rel, p, rp, rest);
        st.finish(net, scene, cand, rp)
    };
    #[cfg(feature = "parallel")]
    {
        candidates.par_iter().map(one).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        candidates.iter().map(one).collect()
    }
}

pub fn rollout(
    net: &RoadNetwork,
    scene: &SceneState,
    candidate: &PrioritySet,
    committed: &PrioritySet,
    p: &DriverParams,
    rp: &RolloutParams,
) -> ScenePrediction {
    rollout_many(
        net,
        scene,
        std::slice::from_ref(candidate),
        committed,
        &BTreeMap::new(),
        p,
        rp,
    )
    .pop()
    .unwrap()
}
