//! Vehicle state, longitudinal integration and reinsertion.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::driver::DriverParams;
use crate::map::{RoadNetwork, Route};

pub type VehicleId = usize;

pub const DT_SIM: f64 = 0.05;
/// Planner runs on every fourth simulation step (5 Hz).
pub const PLAN_EVERY: u64 = 4;
pub const VEHICLE_LENGTH: f64 = 4.5;
pub const V_SLOW: f64 = 10.0 / 3.6;
pub const V_WAIT: f64 = 5.0 / 3.6;
pub const V_STOP: f64 = 1.0 / 3.6;
pub const V_REINSERT: f64 = 30.0 / 3.6;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("unknown vehicle {0}")]
    UnknownVehicle(VehicleId),
    #[error("vehicle {0} has no acceleration entry")]
    MissingAccel(VehicleId),
    #[error("time step must be positive, got {0}")]
    BadStep(f64),
    #[error("vehicle {0} did not start on an entry lane")]
    NoEntry(VehicleId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Hdv,
    Cav,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleState {
    pub id: VehicleId,
    pub kind: Kind,
    pub route: usize,
    pub s: f64,
    pub v: f64,
    pub a: f64,
    pub length: f64,
    pub t_slow: f64,
    pub wait_accum: f64,
    pub ever_stopped: bool,
    pub crossings: u32,
}

impl VehicleState {
    pub fn new(id: VehicleId, kind: Kind, route: usize, s: f64, v: f64) -> Self {
        VehicleState {
            id,
            kind,
            route,
            s,
            v,
            a: 0.0,
            length: VEHICLE_LENGTH,
            t_slow: 0.0,
            wait_accum: 0.0,
            ever_stopped: false,
            crossings: 0,
        }
    }

    pub fn rear(&self) -> f64 {
        self.s - self.length
    }

    pub fn is_cav(&self) -> bool {
        self.kind == Kind::Cav
    }
}

/// Whether the vehicle is still inside the modeled scene.
pub fn is_active(net: &RoadNetwork, v: &VehicleState) -> bool {
    v.s < net.routes[v.route].exit_s
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneState {
    pub time: f64,
    pub k: u64,
    pub vehicles: Vec<VehicleState>,
}

impl SceneState {
    pub fn new(vehicles: Vec<VehicleState>) -> Self {
        debug_assert!(vehicles.iter().enumerate().all(|(k, v)| v.id == k));
        SceneState {
            time: 0.0,
            k: 0,
            vehicles,
        }
    }

    pub fn vehicle(&self, id: VehicleId) -> Result<&VehicleState, SimError> {
        self.vehicles.get(id).ok_or(SimError::UnknownVehicle(id))
    }

    /// Advance all vehicles by `dt` with the given accelerations.
    pub fn step(
        &mut self,
        net: &RoadNetwork,
        accels: &BTreeMap<VehicleId, f64>,
        dt: f64,
    ) -> Result<(), SimError> {
        if let Some(&id) = accels.keys().find(|&&id| id >= self.vehicles.len()) {
            return Err(SimError::UnknownVehicle(id));
        }
        let a: Vec<f64> = (0..self.vehicles.len())
            .map(|id| accels.get(&id).copied().ok_or(SimError::MissingAccel(id)))
            .collect::<Result<_, _>>()?;
        if dt.is_nan() || dt <= 0.0 {
            return Err(SimError::BadStep(dt));
        }
        self.advance(net, &a, dt);
        Ok(())
    }

    /// Semi-implicit Euler step; `accels` is indexed by vehicle id.
    pub fn advance(&mut self, net: &RoadNetwork, accels: &[f64], dt: f64) {
        for (veh, &a) in self.vehicles.iter_mut().zip(accels) {
            let route = &net.routes[veh.route];
            let last_target = route.zones.last().map(|z| z.s_target);
            let rear0 = veh.rear();
            veh.a = a;
            veh.v = (veh.v + a * dt).max(0.0);
            veh.s = (veh.s + veh.v * dt).min(route.total_length);
            if let Some(t) = last_target {
                if rear0 < t && veh.rear() >= t {
                    veh.crossings += 1;
                }
            }
            if veh.v < V_SLOW {
                veh.t_slow += dt;
            } else {
                veh.t_slow = 0.0;
            }
            if veh.v < V_WAIT {
                veh.wait_accum += dt;
            }
            if veh.v < V_STOP {
                veh.ever_stopped = true;
            }
        }
        self.time += dt;
        self.k += 1;
    }
}

/// Zone boundary passages during one step from `s0` to `s1`: calls
/// `f(route zone index, entered, fraction of the step)`.
pub fn zone_passages(
    route: &Route,
    s0: f64,
    s1: f64,
    length: f64,
    mut f: impl FnMut(usize, bool, f64),
) {
    if s1 <= s0 {
        return;
    }
    let frac = |x: f64| (x - s0) / (s1 - s0);
    for (k, z) in route.zones.iter().enumerate() {
        if s0 < z.s_stop && z.s_stop <= s1 {
            f(k, true, frac(z.s_stop));
        }
        if s0 - length < z.s_target && z.s_target <= s1 - length {
            f(k, false, frac(z.s_target + length));
        }
    }
}

/// Move a vehicle that left the scene back onto its originating entry.
/// Returns `Ok(false)` if the entry has no room yet.
pub fn reinsert<R: Rng>(
    scene: &mut SceneState,
    net: &RoadNetwork,
    id: VehicleId,
    params: &DriverParams,
    rng: &mut R,
) -> Result<bool, SimError> {
    let veh = scene.vehicle(id)?;
    let entry = &net.entries[net.entry_of(veh.route).ok_or(SimError::NoEntry(id))?];
    let v = veh.v.min(V_REINSERT);
    let gap = params.s0 + v * params.t_headway;
    let tail = scene
        .vehicles
        .iter()
        .filter(|o| o.id != id && is_active(net, o) && net.routes[o.route].lanes[0] == entry.lane)
        .map(|o| o.rear())
        .fold(f64::INFINITY, f64::min);
    let s = entry.insert_s.min(tail - gap);
    if s < 0.0 {
        return Ok(false);
    }
    let route = entry.routes[rng.gen_range(0..entry.routes.len())];
    let veh = &mut scene.vehicles[id];
    veh.route = route;
    veh.s = s;
    veh.v = v;
    veh.a = 0.0;
    veh.t_slow = 0.0;
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn one(v: f64, a: f64) -> VehicleState {
        let net = fixtures::load("main_road_4arm").unwrap();
        let mut scene = SceneState::new(vec![VehicleState::new(0, Kind::Hdv, 0, 10.0, v)]);
        scene.step(&net, &BTreeMap::from([(0, a)]), 0.1).unwrap();
        scene.vehicles[0].clone()
    }

    #[test]
    fn rest_stays_at_rest() {
        let v = one(0.0, 0.0);
        assert_eq!((v.v, v.s), (0.0, 10.0));
    }

    #[test]
    fn no_reverse_motion() {
        let v = one(1.0, -20.0);
        assert_eq!((v.v, v.s), (0.0, 10.0));
    }

    #[test]
    fn semi_implicit_update() {
        let v = one(10.0, 2.0);
        assert!((v.v - 10.2).abs() < 1e-12);
        assert!((v.s - 11.02).abs() < 1e-12);
    }

    #[test]
    fn step_rejects_bad_input() {
        let net = fixtures::load("main_road_4arm").unwrap();
        let mut scene = SceneState::new(vec![VehicleState::new(0, Kind::Hdv, 0, 10.0, 1.0)]);
        assert_eq!(
            scene.step(&net, &BTreeMap::from([(3, 0.0)]), 0.1),
            Err(SimError::UnknownVehicle(3))
        );
        assert_eq!(
            scene.step(&net, &BTreeMap::new(), 0.1),
            Err(SimError::MissingAccel(0))
        );
    }

    #[test]
    fn bookkeeping_thresholds() {
        let net = fixtures::load("main_road_4arm").unwrap();
        let mut scene = SceneState::new(vec![VehicleState::new(0, Kind::Hdv, 0, 10.0, 2.0)]);
        for _ in 0..10 {
            scene.advance(&net, &[0.0], 0.1);
        }
        let v = &scene.vehicles[0];
        assert!((v.t_slow - 1.0).abs() < 1e-12);
        assert_eq!(v.wait_accum, 0.0);
        assert!(!v.ever_stopped);
        scene.advance(&net, &[-20.0], 0.1);
        let v = &scene.vehicles[0];
        assert!(v.ever_stopped);
        assert!((v.wait_accum - 0.1).abs() < 1e-12);
        scene.vehicles[0].v = 12.0;
        scene.advance(&net, &[0.0], 0.1);
        assert_eq!(scene.vehicles[0].t_slow, 0.0);
    }

    #[test]
    fn crossing_counted_once_at_last_target() {
        let net = fixtures::load("main_road_4arm").unwrap();
        let target = net.routes[0].zones.last().unwrap().s_target;
        let mut scene = SceneState::new(vec![VehicleState::new(0, Kind::Hdv, 0, target, 10.0)]);
        for _ in 0..20 {
            scene.advance(&net, &[0.0], 0.1);
        }
        assert_eq!(scene.vehicles[0].crossings, 1);
    }

    #[test]
    fn reinsertion_caps_speed_and_uses_clearance_point() {
        let net = fixtures::load("main_road_4arm").unwrap();
        let r = net.route_index("S_straight").unwrap();
        let exit = net.routes[r].exit_s;
        let mut scene = SceneState::new(vec![VehicleState::new(0, Kind::Cav, r, exit + 1.0, 13.0)]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(reinsert(&mut scene, &net, 0, &DriverParams::default(), &mut rng).unwrap());
        let v = &scene.vehicles[0];
        assert!((v.v - 8.333333333333334).abs() < 1e-12);
        assert_eq!(v.kind, Kind::Cav);
        assert_eq!(net.routes[v.route].lanes[0], net.routes[r].lanes[0]);
        let first_stop = net.routes[r].zones[0].s_stop;
        assert!((v.s - (first_stop - 45.0)).abs() < 1e-9);
    }

    #[test]
    fn reinsertion_queues_behind_tail() {
        let net = fixtures::load("main_road_4arm").unwrap();
        let p = DriverParams::default();
        let r = net.route_index("S_straight").unwrap();
        let exit = net.routes[r].exit_s;
        let s_q = 60.0;
        let mut scene = SceneState::new(vec![
            VehicleState::new(0, Kind::Hdv, r, exit + 1.0, 13.0),
            VehicleState::new(1, Kind::Hdv, r, s_q + VEHICLE_LENGTH, 0.0),
        ]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(reinsert(&mut scene, &net, 0, &p, &mut rng).unwrap());
        let expect = s_q - (p.s0 + V_REINSERT * p.t_headway);
        assert!((scene.vehicles[0].s - expect).abs() < 1e-9);
    }

    #[test]
    fn full_entry_holds_vehicle_back() {
        let net = fixtures::load("main_road_4arm").unwrap();
        let r = net.route_index("S_straight").unwrap();
        let exit = net.routes[r].exit_s;
        let mut scene = SceneState::new(vec![
            VehicleState::new(0, Kind::Hdv, r, exit + 1.0, 13.0),
            VehicleState::new(1, Kind::Hdv, r, 8.0, 0.0),
        ]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(!reinsert(&mut scene, &net, 0, &DriverParams::default(), &mut rng).unwrap());
        assert_eq!(scene.vehicles[0].s, exit + 1.0);
    }
}
