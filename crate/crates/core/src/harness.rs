//! Scenario sampling, the closed-loop simulation and HEUR training data.

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cav::{cav_accel, CavControlState};
use crate::driver::{decide, perceive, DriverParams, Relations};
use crate::fixtures;
use crate::map::{MapError, RoadNetwork};
use crate::metrics::{compute_run_metrics, Occupancy, RunMetrics, SimLog, VehicleSummary};
use crate::mlp::{
    sign_accuracy, train_pairwise, MlpError, MlpModel, PairSample, TrainConfig, URGENCY_LAYERS,
};
use crate::planner::{
    conflicting_cav_pairs, non_conflicting_sets, plan_cycle, urgency_features, Method, PlanError,
    PlanResult, PlannerConfig, PlannerMemory, PrioritySet,
};
use crate::predictor::{rollout_many, time_loss, RolloutParams};
use crate::protocol::{
    apply_message, cav_feasibility, decode, decode_message, encode, Coordinator, ManeuverResponse,
    Outcome, ProtocolError,
};
use crate::sim::{
    is_active, reinsert, Kind, SceneState, SimError, VehicleState, DT_SIM, PLAN_EVERY,
};

pub const MAX_VEHICLES: usize = 10;
pub const PLACEMENT_ATTEMPTS: usize = 1000;
/// Stream of the scenario RNG that draws positions, routes and speeds.
const STREAM_PLACEMENT: u64 = 0;
const STREAM_KINDS: u64 = 1;
/// Reinsertion streams start here, one per vehicle slot.
const STREAM_SLOTS: u64 = 16;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Mlp(#[from] MlpError),
    #[error("no valid placement after {attempts} attempts for {spec}")]
    Placement { spec: String, attempts: usize },
    #[error("invalid scenario: {0}")]
    InvalidSpec(String),
    #[error("method heur needs a trained urgency model")]
    MissingModel,
    #[error("no training samples were generated")]
    NoSamples,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub map: String,
    pub seed: u64,
    pub vehicle_count: usize,
    pub cav_pct: u32,
    pub duration: f64,
    pub method: Method,
}

impl ScenarioSpec {
    pub fn new(map: &str, seed: u64, method: Method, cav_pct: u32) -> Self {
        ScenarioSpec {
            map: map.to_string(),
            seed,
            vehicle_count: MAX_VEHICLES,
            cav_pct,
            duration: 60.0,
            method,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::InvalidSpec(m));
        if self.vehicle_count == 0 || self.vehicle_count > MAX_VEHICLES {
            return bad(format!(
                "vehicle_count {} outside 1..={MAX_VEHICLES}",
                self.vehicle_count
            ));
        }
        if self.cav_pct > 100 {
            return bad(format!("cav_pct {} above 100", self.cav_pct));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return bad(format!("duration {} must be positive", self.duration));
        }
        Ok(())
    }
}

pub fn cav_count(n: usize, pct: u32) -> usize {
    (n as f64 * pct as f64 / 100.0).round() as usize
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Random initial scene. Positions depend only on the seed, so the same seed
/// gives the same traffic for every method and CAV share.
pub fn sample_scenario(
    net: &RoadNetwork,
    spec: &ScenarioSpec,
    p: &DriverParams,
) -> Result<SceneState, HarnessError> {
    spec.validate()?;
    let mut rng = stream_rng(spec.seed, STREAM_PLACEMENT);
    let n = spec.vehicle_count;
    for _ in 0..PLACEMENT_ATTEMPTS {
        let mut placed: Vec<(usize, usize, f64, f64)> = (0..n)
            .map(|_| {
                let e = rng.gen_range(0..net.entries.len());
                let entry = &net.entries[e];
                let route = entry.routes[rng.gen_range(0..entry.routes.len())];
                let s = rng.gen_range(entry.spawn_s_min..=entry.spawn_s_max);
                let v = rng.gen_range(0.0..=1.0) * net.routes[route].speed_limit(s);
                (e, route, s, v)
            })
            .collect();
        if let Some(vehicles) = settle(net, &mut placed, p) {
            let mut kinds = stream_rng(spec.seed, STREAM_KINDS);
            let cavs = sample(&mut kinds, n, cav_count(n, spec.cav_pct));
            let scene = vehicles
                .into_iter()
                .enumerate()
                .map(|(id, (route, s, v))| {
                    let kind = if cavs.iter().any(|c| c == id) {
                        Kind::Cav
                    } else {
                        Kind::Hdv
                    };
                    VehicleState::new(id, kind, route, s, v)
                })
                .collect();
            return Ok(SceneState::new(scene));
        }
    }
    Err(HarnessError::Placement {
        spec: format!("{spec:?}"),
        attempts: PLACEMENT_ATTEMPTS,
    })
}

/// Lowers speeds to IDM-consistent gaps and to what allows a comfortable
/// stop before the first stop line. `None` if two vehicles are too close.
fn settle(
    net: &RoadNetwork,
    placed: &mut [(usize, usize, f64, f64)],
    p: &DriverParams,
) -> Option<Vec<(usize, f64, f64)>> {
    let mut order: Vec<usize> = (0..placed.len()).collect();
    order.sort_by(|&a, &b| {
        placed[a]
            .0
            .cmp(&placed[b].0)
            .then(placed[b].2.total_cmp(&placed[a].2))
    });
    for w in order.windows(2) {
        let (lead, foll) = (placed[w[0]], placed[w[1]]);
        if lead.0 != foll.0 {
            continue;
        }
        let gap = lead.2 - p.vehicle_length - foll.2;
        if gap <= p.s0 {
            return None;
        }
        placed[w[1]].3 = foll.3.min((gap - p.s0) / p.t_headway);
    }
    Some(
        placed
            .iter()
            .map(|&(_, route, s, v)| {
                let d = net.routes[route]
                    .zones
                    .first()
                    .map_or(f64::INFINITY, |z| z.s_stop - s);
                (route, s, v.min((2.0 * p.b_comf * d).sqrt()))
            })
            .collect(),
    )
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOptions {
    pub driver: DriverParams,
    pub planner: PlannerConfig,
    pub jerk_limit: Option<f64>,
    /// Record a frame every this many steps.
    pub frame_stride: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SafetyReport {
    /// Steps in which two CAVs of an accepted pair were inside a shared zone together.
    pub maneuver_co_occupancy: usize,
    /// Issued pairs whose yielder `t_min` was below the prioritized `t_max`.
    pub constraint_order_violations: usize,
    pub pairs_checked: usize,
    pub accepted_pairs: usize,
    pub messages: usize,
    pub rejects: usize,
    pub late_rejects: usize,
    pub aborts: usize,
    pub dropped_pairs: usize,
    /// Overlapping conflicting occupancies among all vehicles.
    pub collisions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameVehicle {
    pub id: usize,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub v: f64,
    pub cav: bool,
    pub active: bool,
    pub holding: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub t: f64,
    pub vehicles: Vec<FrameVehicle>,
    pub priorities: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub log: SimLog,
    pub metrics: RunMetrics,
    pub safety: SafetyReport,
    pub frames: Vec<Frame>,
}

/// A running scenario with its coordinator and CAV agents.
pub struct Simulation<'a> {
    net: &'a RoadNetwork,
    spec: ScenarioSpec,
    opts: RunOptions,
    model: Option<&'a MlpModel>,
    scene: SceneState,
    memory: PlannerMemory,
    coordinator: Coordinator,
    agents: Vec<CavControlState>,
    accepted: PrioritySet,
    cycle: u64,
    open: Vec<Vec<Option<f64>>>,
    occupancies: Vec<Occupancy>,
    cycle_ms: Vec<f64>,
    safety: SafetyReport,
    slot_rngs: Vec<ChaCha8Rng>,
    frames: Vec<Frame>,
    last_plan: Option<PlanResult>,
}

impl<'a> Simulation<'a> {
    pub fn new(
        net: &'a RoadNetwork,
        spec: &ScenarioSpec,
        opts: &RunOptions,
        model: Option<&'a MlpModel>,
    ) -> Result<Self, HarnessError> {
        if spec.method == Method::Heur && model.is_none() {
            return Err(HarnessError::MissingModel);
        }
        let scene = sample_scenario(net, spec, &opts.driver)?;
        Ok(Self::from_scene(net, spec, opts, model, scene))
    }

    pub fn from_scene(
        net: &'a RoadNetwork,
        spec: &ScenarioSpec,
        opts: &RunOptions,
        model: Option<&'a MlpModel>,
        scene: SceneState,
    ) -> Self {
        let n = scene.vehicles.len();
        let open = scene
            .vehicles
            .iter()
            .map(|v| vec![None; net.routes[v.route].zones.len()])
            .collect();
        let agents = (0..n)
            .map(|_| CavControlState {
                jerk_limit: opts.jerk_limit,
                ..Default::default()
            })
            .collect();
        let mut opts = opts.clone();
        opts.planner.driver = opts.driver;
        let mut sim = Simulation {
            net,
            spec: spec.clone(),
            opts,
            model,
            scene,
            memory: PlannerMemory::default(),
            coordinator: Coordinator::default(),
            agents,
            accepted: PrioritySet::default(),
            cycle: 0,
            open,
            occupancies: Vec::new(),
            cycle_ms: Vec::new(),
            safety: SafetyReport::default(),
            slot_rngs: (0..n as u64)
                .map(|i| stream_rng(spec.seed, STREAM_SLOTS + i))
                .collect(),
            frames: Vec::new(),
            last_plan: None,
        };
        sim.record_frame();
        sim
    }

    pub fn scene(&self) -> &SceneState {
        &self.scene
    }

    pub fn accepted(&self) -> &PrioritySet {
        &self.accepted
    }

    pub fn last_plan(&self) -> Option<&PlanResult> {
        self.last_plan.as_ref()
    }

    pub fn safety(&self) -> &SafetyReport {
        &self.safety
    }

    pub fn steps_total(&self) -> u64 {
        (self.spec.duration / DT_SIM).round() as u64
    }

    pub fn done(&self) -> bool {
        self.scene.k >= self.steps_total()
    }

    fn relations(&self) -> Relations {
        let mut rel = Relations::with_priorities(self.scene.vehicles.len(), &self.accepted);
        for (i, a) in self.agents.iter().enumerate() {
            for &j in &a.non_conflicting {
                rel.set_non_conflicting(i, j);
            }
        }
        rel
    }

    fn abort(&mut self) {
        self.agents.iter_mut().for_each(CavControlState::withdraw);
        self.accepted = PrioritySet::default();
        self.safety.aborts += 1;
    }

    fn check_constraint_order(&mut self, plan: &PlanResult) {
        let entry = |v: usize, s: f64| {
            plan.constraints
                .iter()
                .filter(|c| c.vehicle == v)
                .flat_map(|c| c.entries.iter())
                .find(|e| e.s == s)
                .copied()
        };
        for &(i, j) in plan.chosen.pairs() {
            if plan.dropped_pairs.contains(&(i, j)) {
                continue;
            }
            let (vi, vj) = (&self.scene.vehicles[i], &self.scene.vehicles[j]);
            for pc in self.net.conflicts(vi.route, vj.route) {
                let zi = self.net.routes[vi.route].zones[pc.rz_a];
                let zj = self.net.routes[vj.route].zones[pc.rz_b];
                // zones already cleared carry no constraint
                if vi.rear() >= zi.s_target || vj.rear() >= zj.s_target {
                    continue;
                }
                if let (Some(ei), Some(ej)) = (entry(i, zi.s_target), entry(j, zj.s_stop)) {
                    self.safety.pairs_checked += 1;
                    // NaN counts as a violation
                    if ej.t_min.is_nan() || ei.t_max.is_nan() || ej.t_min < ei.t_max {
                        self.safety.constraint_order_violations += 1;
                    }
                }
            }
        }
    }

    fn plan(&mut self) -> Result<(), HarnessError> {
        let plan = plan_cycle(
            &self.scene,
            self.net,
            self.spec.method,
            &mut self.memory,
            &self.opts.planner,
            self.model,
        )?;
        self.cycle_ms.push(plan.cycle_runtime * 1000.0);
        self.safety.dropped_pairs += plan.dropped_pairs.len();
        self.check_constraint_order(&plan);
        let msgs = self.coordinator.issue(&plan, self.cycle);
        self.cycle += 1;
        let mut addressed = vec![false; self.agents.len()];
        let mut aborted = false;
        for msg in msgs {
            let (msg, _) = decode_message(&encode(&msg)?)?;
            let resp = cav_feasibility(&self.scene, self.net, &msg, &self.opts.driver)?;
            let (resp, _): (ManeuverResponse, usize) = decode(&encode(&resp)?)?;
            apply_message(&mut self.agents[msg.recipient], &msg, &resp);
            addressed[msg.recipient] = true;
            self.safety.messages += 1;
            if resp.reason.is_some() {
                self.safety.rejects += 1;
            }
            if self.coordinator.handle_response(&mut self.memory, &resp) == Outcome::Aborted {
                aborted = true;
            }
        }
        for (a, _) in self
            .agents
            .iter_mut()
            .zip(&addressed)
            .filter(|(_, &hit)| !hit)
        {
            a.withdraw();
            a.non_conflicting.clear();
        }
        if aborted {
            self.abort();
        } else {
            self.accepted = plan.chosen.clone();
            self.safety.accepted_pairs += self.accepted.len();
        }
        self.last_plan = Some(plan);
        Ok(())
    }

    fn occupying(&self, v: usize, rz: usize) -> bool {
        let veh = &self.scene.vehicles[v];
        let z = self.net.routes[veh.route].zones[rz];
        veh.s >= z.s_stop && veh.rear() < z.s_target
    }

    pub fn step(&mut self) -> Result<(), HarnessError> {
        let net = self.net;
        if self.spec.method != Method::None && self.scene.k.is_multiple_of(PLAN_EVERY) {
            self.plan()?;
        }
        let rel = self.relations();
        let view = perceive(net, &self.scene);
        let p = self.opts.driver;
        let n = self.scene.vehicles.len();
        let mut accels = vec![0.0; n];
        let mut late = Vec::new();
        for (i, a) in accels.iter_mut().enumerate() {
            if self.scene.vehicles[i].is_cav() {
                let c = cav_accel(&self.scene, net, i, &view, &rel, &self.agents[i], &p);
                *a = c.accel;
                if let (Some(r), Some(id)) = (c.late_reject, self.agents[i].maneuver_id) {
                    late.push(ManeuverResponse::reject(id, r));
                }
            } else {
                *a = decide(net, &self.scene, i, &view, &rel, &p).accel;
            }
        }
        let before: Vec<f64> = self.scene.vehicles.iter().map(|v| v.s).collect();
        let t0 = self.scene.time;
        self.scene.advance(net, &accels, DT_SIM);

        for (i, v) in self.scene.vehicles.iter().enumerate() {
            let route = &net.routes[v.route];
            let open = &mut self.open[i];
            let log = &mut self.occupancies;
            crate::sim::zone_passages(route, before[i], v.s, v.length, |k, entered, f| {
                let t = t0 + f * DT_SIM;
                if entered {
                    open[k] = Some(t);
                } else if let Some(t_enter) = open[k].take() {
                    let z = route.zones[k];
                    log.push(Occupancy {
                        zone: z.zone,
                        group: net.zones[z.zone].approaches[z.approach].group,
                        vehicle: i,
                        t_enter,
                        t_exit: t,
                    });
                }
            });
        }

        for &(i, j) in self.accepted.pairs() {
            let (ri, rj) = (self.scene.vehicles[i].route, self.scene.vehicles[j].route);
            if net
                .conflicts(ri, rj)
                .iter()
                .any(|pc| self.occupying(i, pc.rz_a) && self.occupying(j, pc.rz_b))
            {
                self.safety.maneuver_co_occupancy += 1;
            }
        }

        for resp in late {
            self.safety.late_rejects += 1;
            if self.coordinator.handle_response(&mut self.memory, &resp) == Outcome::Aborted {
                self.abort();
            }
        }

        for i in 0..n {
            if is_active(net, &self.scene.vehicles[i]) {
                continue;
            }
            if self.open[i].iter().any(Option::is_some) {
                continue;
            }
            if reinsert(&mut self.scene, net, i, &p, &mut self.slot_rngs[i])? {
                self.open[i] = vec![None; net.routes[self.scene.vehicles[i].route].zones.len()];
                self.agents[i].withdraw();
                if self.accepted.vehicles().contains(&i) {
                    self.accepted = PrioritySet::from_pairs(
                        self.accepted
                            .pairs()
                            .iter()
                            .copied()
                            .filter(|&(a, b)| a != i && b != i),
                    )?;
                }
            }
        }
        if let Some(stride) = self.opts.frame_stride {
            if self.scene.k.is_multiple_of(stride.max(1) as u64) {
                self.record_frame();
            }
        }
        Ok(())
    }

    fn record_frame(&mut self) {
        if self.opts.frame_stride.is_none() {
            return;
        }
        let vehicles =
            self.scene
                .vehicles
                .iter()
                .map(|v| {
                    let ([x, y], heading) = self.net.pose(v.route, v.s);
                    FrameVehicle {
                        id: v.id,
                        x,
                        y,
                        heading,
                        v: v.v,
                        cav: v.is_cav(),
                        active: is_active(self.net, v),
                        holding: self.agents[v.id].constraints.iter().any(|e| {
                            e.t_min.is_finite() && e.t_min > self.scene.time && v.s <= e.s
                        }),
                    }
                })
                .collect();
        self.frames.push(Frame {
            t: self.scene.time,
            vehicles,
            priorities: self.accepted.pairs().to_vec(),
        });
    }

    pub fn run_to_end(&mut self) -> Result<(), HarnessError> {
        while !self.done() {
            self.step()?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> RunOutput {
        let now = self.scene.time;
        for (i, open) in self.open.iter().enumerate() {
            let route = &self.net.routes[self.scene.vehicles[i].route];
            for (k, t) in open.iter().enumerate() {
                if let Some(t_enter) = *t {
                    let z = route.zones[k];
                    self.occupancies.push(Occupancy {
                        zone: z.zone,
                        group: self.net.zones[z.zone].approaches[z.approach].group,
                        vehicle: i,
                        t_enter,
                        t_exit: now,
                    });
                }
            }
        }
        let log = SimLog {
            map: self.spec.map.clone(),
            seed: self.spec.seed,
            method: self.spec.method.to_string(),
            cav_pct: self.spec.cav_pct,
            duration: self.spec.duration,
            vehicles: self
                .scene
                .vehicles
                .iter()
                .map(|v| VehicleSummary {
                    id: v.id,
                    kind: v.kind,
                    wait_accum: v.wait_accum,
                    ever_stopped: v.ever_stopped,
                    crossings: v.crossings,
                })
                .collect(),
            occupancies: self.occupancies,
            cycle_ms: self.cycle_ms,
        };
        let metrics = compute_run_metrics(&log);
        self.safety.collisions = metrics.pet_collisions;
        RunOutput {
            log,
            metrics,
            safety: self.safety,
            frames: self.frames,
        }
    }
}

pub fn run_scenario(
    net: &RoadNetwork,
    spec: &ScenarioSpec,
    opts: &RunOptions,
    model: Option<&MlpModel>,
) -> Result<RunOutput, HarnessError> {
    let mut sim = Simulation::new(net, spec, opts, model)?;
    sim.run_to_end()?;
    Ok(sim.finish())
}

/// Loads the fixture named in the spec and runs it.
pub fn run_spec(
    spec: &ScenarioSpec,
    opts: &RunOptions,
    model: Option<&MlpModel>,
) -> Result<RunOutput, HarnessError> {
    let net = fixtures::load(&spec.map)?;
    run_scenario(&net, spec, opts, model)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub runs: usize,
    pub run_length: f64,
    pub seed: u64,
    /// Horizon of the two labelling rollouts.
    pub horizon: f64,
    /// Label one planning cycle out of this many.
    pub cycle_stride: u64,
    pub driver: DriverParams,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            runs: 200,
            run_length: 120.0,
            seed: 0,
            horizon: 10.0,
            cycle_stride: 1,
            driver: DriverParams::default(),
        }
    }
}

/// Weighted time loss of both orders of one CAV pair; returns
/// `(x_i, x_j, L(⟨j,i⟩) - L(⟨i,j⟩))`.
pub fn label_pair(
    net: &RoadNetwork,
    scene: &SceneState,
    i: usize,
    j: usize,
    committed: &PrioritySet,
    p: &DriverParams,
    rp: &RolloutParams,
) -> PairSample {
    let cands = [
        PrioritySet::from_pairs([(i, j)]).expect("distinct vehicles"),
        PrioritySet::from_pairs([(j, i)]).expect("distinct vehicles"),
    ];
    let nc = non_conflicting_sets(scene, net);
    let preds = rollout_many(net, scene, &cands, committed, &nc, p, rp);
    let w = vec![1.0; scene.vehicles.len()];
    PairSample {
        x_i: urgency_features(net, scene, i).to_array().to_vec(),
        x_j: urgency_features(net, scene, j).to_array().to_vec(),
        target: time_loss(&preds[1], &w) - time_loss(&preds[0], &w),
    }
}

/// FIFO-driven runs with all-CAV traffic on random maps; at labelled cycles a
/// random conflicting pair is rolled out in both orders.
pub fn generate_heur_dataset(cfg: &DatasetConfig) -> Result<Vec<PairSample>, HarnessError> {
    let nets: Vec<RoadNetwork> = fixtures::NAMES
        .iter()
        .map(|n| fixtures::load(n))
        .collect::<Result<_, _>>()?;
    let one = |r: usize| -> Result<Vec<PairSample>, HarnessError> {
        let mut rng = stream_rng(cfg.seed, r as u64);
        let m = rng.gen_range(0..nets.len());
        let spec = ScenarioSpec {
            map: fixtures::NAMES[m].to_string(),
            seed: rng.gen(),
            vehicle_count: MAX_VEHICLES,
            cav_pct: 100,
            duration: cfg.run_length,
            method: Method::Fifo,
        };
        let opts = RunOptions {
            driver: cfg.driver,
            ..Default::default()
        };
        let rp = RolloutParams {
            horizon: cfg.horizon,
            ..Default::default()
        };
        let mut sim = Simulation::new(&nets[m], &spec, &opts, None)?;
        let mut out = Vec::new();
        while !sim.done() {
            let k = sim.scene().k;
            if k.is_multiple_of(PLAN_EVERY) && (k / PLAN_EVERY).is_multiple_of(cfg.cycle_stride.max(1)) {
                let pairs = conflicting_cav_pairs(sim.scene(), &nets[m]);
                if let Some(c) = pairs.choose(&mut rng) {
                    out.push(label_pair(
                        &nets[m],
                        sim.scene(),
                        c.a,
                        c.b,
                        sim.accepted(),
                        &cfg.driver,
                        &rp,
                    ));
                }
            }
            sim.step()?;
        }
        Ok(out)
    };
    #[cfg(feature = "parallel")]
    let per_run: Vec<_> = {
        use rayon::prelude::*;
        (0..cfg.runs).into_par_iter().map(one).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let per_run: Vec<_> = (0..cfg.runs).map(one).collect();
    let mut all = Vec::new();
    for r in per_run {
        all.extend(r?);
    }
    Ok(all)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub model: MlpModel,
    pub samples: usize,
    pub train: usize,
    pub holdout: usize,
    pub loss_history: Vec<f64>,
    pub train_accuracy: f64,
    pub holdout_accuracy: f64,
}

/// Shuffles with the seed, holds out the last fifth and trains on the rest.
pub fn train_heur(data: &[PairSample], cfg: &TrainConfig) -> Result<TrainReport, HarnessError> {
    if data.is_empty() {
        return Err(HarnessError::NoSamples);
    }
    let mut shuffled = data.to_vec();
    shuffled.shuffle(&mut stream_rng(cfg.seed, 1));
    let n_hold = data.len() / 5;
    let (train, hold) = shuffled.split_at(data.len() - n_hold);
    let init = MlpModel::new(&URGENCY_LAYERS, cfg.seed);
    let (model, loss_history) = train_pairwise(&init, train, cfg)?;
    Ok(TrainReport {
        train_accuracy: sign_accuracy(&model, train),
        holdout_accuracy: sign_accuracy(&model, hold),
        samples: data.len(),
        train: train.len(),
        holdout: hold.len(),
        model,
        loss_history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cav_counts() {
        assert_eq!(cav_count(10, 40), 4);
        assert_eq!(cav_count(10, 0), 0);
        assert_eq!(cav_count(10, 100), 10);
    }

    #[test]
    fn sampling_respects_spec() {
        let p = DriverParams::default();
        for name in fixtures::NAMES {
            let net = fixtures::load(name).unwrap();
            for seed in 0..5 {
                let spec = ScenarioSpec::new(name, seed, Method::None, 40);
                let scene = sample_scenario(&net, &spec, &p).unwrap();
                assert_eq!(scene.vehicles.len(), 10);
                assert_eq!(scene.vehicles.iter().filter(|v| v.is_cav()).count(), 4);
                for v in &scene.vehicles {
                    let route = &net.routes[v.route];
                    assert!(v.v <= route.speed_limit(v.s) + 1e-12);
                    assert!(v.s < route.zones[0].s_stop);
                }
                let again =
                    sample_scenario(&net, &ScenarioSpec::new(name, seed, Method::Opt, 100), &p)
                        .unwrap();
                let pos = |s: &SceneState| {
                    s.vehicles
                        .iter()
                        .map(|v| (v.route, v.s, v.v))
                        .collect::<Vec<_>>()
                };
                assert_eq!(pos(&scene), pos(&again));
            }
        }
        let net = fixtures::load("main_road_4arm").unwrap();
        let mut one = ScenarioSpec::new("main_road_4arm", 3, Method::None, 0);
        one.vehicle_count = 1;
        let scene = sample_scenario(&net, &one, &p).unwrap();
        assert_eq!(scene.vehicles.len(), 1);
        assert!(!scene.vehicles[0].is_cav());
        one.vehicle_count = 11;
        assert!(matches!(
            sample_scenario(&net, &one, &p),
            Err(HarnessError::InvalidSpec(_))
        ));
    }

    #[test]
    fn heur_without_model_is_an_error() {
        let spec = ScenarioSpec::new("main_road_4arm", 0, Method::Heur, 100);
        assert!(matches!(
            run_spec(&spec, &RunOptions::default(), None),
            Err(HarnessError::MissingModel)
        ));
    }

    #[test]
    fn short_run_is_deterministic() {
        let mut spec = ScenarioSpec::new("main_road_4arm", 1, Method::Opt, 100);
        spec.duration = 5.0;
        let a = run_spec(&spec, &RunOptions::default(), None).unwrap();
        let b = run_spec(&spec, &RunOptions::default(), None).unwrap();
        assert_eq!(a.log.vehicles, b.log.vehicles);
        assert_eq!(a.log.occupancies, b.log.occupancies);
        assert_eq!(a.safety.maneuver_co_occupancy, 0);
    }
}
