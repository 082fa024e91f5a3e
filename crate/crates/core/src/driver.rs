//! Analytic driver model: IDM car following, rule-based gap acceptance and
//! the yield policy that combines them per zone.

use serde::{Deserialize, Serialize};

use crate::map::RoadNetwork;
use crate::planner::PrioritySet;
use crate::sim::{is_active, SceneState, SimError, VehicleId, VEHICLE_LENGTH};

/// Margin kept to a stop line when braking kinematically for it.
const STOP_MARGIN: f64 = 0.25;
/// Below this speed both vehicles count as standing for deadlock release.
const V_STANDING: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriverParams {
    pub v0_factor: f64,
    #[serde(rename = "T")]
    pub t_headway: f64,
    pub a_max: f64,
    pub b_comf: f64,
    pub s0: f64,
    pub delta: f64,
    pub b_emergency: f64,
    pub a_lat_max: f64,
    pub tau_gap: f64,
    pub vehicle_length: f64,
    pub lookahead: f64,
}

impl Default for DriverParams {
    fn default() -> Self {
        DriverParams {
            v0_factor: 1.0,
            t_headway: 1.5,
            a_max: 2.0,
            b_comf: 2.0,
            s0: 2.0,
            delta: 4.0,
            b_emergency: 6.0,
            a_lat_max: 2.5,
            tau_gap: 1.5,
            vehicle_length: VEHICLE_LENGTH,
            lookahead: 100.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvObservation {
    pub d_stop: f64,
    pub v: f64,
    pub v_max: f64,
    pub delta_psi_max: f64,
    pub d_lead: f64,
    pub v_lead: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapObservation {
    pub d_targ: f64,
    pub v: f64,
    pub d_stop_other: f64,
    pub v_other: f64,
}

pub fn gap_accept(gap: &GapObservation, p: &DriverParams) -> bool {
    if gap.d_stop_other.is_infinite() {
        return true;
    }
    let eta_other = gap.d_stop_other / gap.v_other.max(0.1);
    let eta_clear = gap.d_targ / gap.v.max(0.5);
    eta_other > eta_clear + p.tau_gap
}

/// Desired speed: speed limit reduced by the curvature cap.
pub fn desired_speed(obs: &EnvObservation, p: &DriverParams) -> f64 {
    let kappa = (obs.delta_psi_max / p.lookahead).max(1e-9);
    let v_curve = (p.a_lat_max / kappa).sqrt();
    p.v0_factor * obs.v_max.min(v_curve)
}

fn spacing(v: f64, dv: f64, p: &DriverParams) -> f64 {
    p.s0 + (v * p.t_headway + v * dv / (2.0 * (p.a_max * p.b_comf).sqrt())).max(0.0)
}

/// IDM interaction term `(s*/gap)²` toward the leader and the yield point.
fn interaction(obs: &EnvObservation, yield_point: Option<f64>, p: &DriverParams) -> f64 {
    let mut term: f64 = 0.0;
    if obs.d_lead.is_finite() {
        let gap = (obs.d_lead - p.vehicle_length).max(1e-3);
        term = term.max((spacing(obs.v, obs.v - obs.v_lead, p) / gap).powi(2));
    }
    if let Some(yp) = yield_point {
        let gap = yp.max(1e-3);
        term = term.max((spacing(obs.v, obs.v, p) / gap).powi(2));
    }
    term
}

pub fn idm_accel(obs: &EnvObservation, yield_point: Option<f64>, p: &DriverParams) -> f64 {
    let v_des = desired_speed(obs, p).max(1e-3);
    let free = 1.0 - (obs.v / v_des).powf(p.delta);
    let mut a = p.a_max * (free - interaction(obs, yield_point, p));
    if let Some(yp) = yield_point {
        let a_kin = -obs.v * obs.v / (2.0 * (yp - STOP_MARGIN).max(0.01));
        if a_kin < -p.b_comf {
            a = a.min(a_kin);
        }
    }
    a.clamp(-p.b_emergency, p.a_max)
}

/// Acceleration limit from the leader alone, without the desired-speed term.
pub fn follow_limit(obs: &EnvObservation, p: &DriverParams) -> f64 {
    p.a_max * (1.0 - interaction(obs, None, p))
}

/// Pairwise relations seen by the policy: planner priorities and
/// non-conflicting masks, indexed by vehicle id.
#[derive(Debug, Clone, PartialEq)]
pub struct Relations {
    n: usize,
    prio: Vec<i8>,
    nc: Vec<bool>,
}

impl Relations {
    pub fn new(n: usize) -> Self {
        Relations {
            n,
            prio: vec![0; n * n],
            nc: vec![false; n * n],
        }
    }

    pub fn with_priorities(n: usize, set: &PrioritySet) -> Self {
        let mut r = Relations::new(n);
        r.set_priorities(set);
        r
    }

    pub fn set_priorities(&mut self, set: &PrioritySet) {
        self.prio.iter_mut().for_each(|x| *x = 0);
        for &(i, j) in set.pairs() {
            if i < self.n && j < self.n {
                self.prio[i * self.n + j] = 1;
                self.prio[j * self.n + i] = -1;
            }
        }
    }

    /// Observer `i` ignores vehicle `j`.
    pub fn set_non_conflicting(&mut self, i: VehicleId, j: VehicleId) {
        self.nc[i * self.n + j] = true;
    }

    pub fn clear_non_conflicting(&mut self) {
        self.nc.iter_mut().for_each(|x| *x = false);
    }

    /// 1 if `i` is prioritized over `j`, -1 if `i` must yield to `j`.
    pub fn priority(&self, i: VehicleId, j: VehicleId) -> i8 {
        self.prio[i * self.n + j]
    }

    pub fn ignores(&self, i: VehicleId, j: VehicleId) -> bool {
        self.nc[i * self.n + j]
    }
}

/// Route and position every vehicle is assumed to follow by others.
pub fn perceive(net: &RoadNetwork, scene: &SceneState) -> Vec<(usize, f64)> {
    scene
        .vehicles
        .iter()
        .map(|v| net.perceived(v.route, v.s))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub accel: f64,
    pub obs: EnvObservation,
    /// Stop line the vehicle currently yields at.
    pub yield_s: Option<f64>,
}

fn eta(d: f64, v: f64) -> f64 {
    d / v.max(0.1)
}

/// Longitudinal decision of vehicle `i` given what it perceives of the others.
pub fn decide(
    net: &RoadNetwork,
    scene: &SceneState,
    i: VehicleId,
    view: &[(usize, f64)],
    rel: &Relations,
    p: &DriverParams,
) -> Decision {
    let me = &scene.vehicles[i];
    let route = &net.routes[me.route];
    let mut obs = EnvObservation {
        d_stop: f64::INFINITY,
        v: me.v,
        v_max: route.speed_limit_ahead(me.s),
        delta_psi_max: route.delta_psi(me.s),
        d_lead: f64::INFINITY,
        v_lead: 0.0,
    };
    if me.s >= route.exit_s {
        return Decision {
            accel: 0.0,
            obs,
            yield_s: None,
        };
    }
    for o in &scene.vehicles {
        if o.id == i || !is_active(net, o) {
            continue;
        }
        if let Some(pos) = net.map_onto(me.route, o.route, o.s, o.length) {
            let d = pos - me.s;
            if d > 0.0 && d < obs.d_lead {
                obs.d_lead = d;
                obs.v_lead = o.v;
            }
        }
    }

    let mut yield_s = None;
    if let Some(z0) = route.next_zone(me.s) {
        let first = route.zones[z0];
        obs.d_stop = first.s_stop - me.s;
        let cluster = &route.clusters[first.cluster];
        let committed = me.s >= cluster.start;
        let check = z0..cluster.zones.end;
        let blocked = scene.vehicles.iter().any(|o| {
            if o.id == i || rel.ignores(i, o.id) || !is_active(net, o) {
                return false;
            }
            // partners of a priority pair know each other's route
            let (pr, ps) = if rel.priority(i, o.id) != 0 {
                (o.route, o.s)
            } else {
                view[o.id]
            };
            let other = &net.routes[pr];
            net.conflicts(me.route, pr).iter().any(|pc| {
                if !check.contains(&pc.rz_a) {
                    return false;
                }
                let zi = route.zones[pc.rz_a];
                let zj = other.zones[pc.rz_b];
                if ps - o.length >= zj.s_target {
                    return false;
                }
                if ps >= zj.s_stop {
                    return true;
                }
                if ps >= other.clusters[zj.cluster].start {
                    if committed {
                        let (di, dj) = (zi.s_stop - me.s, zj.s_stop - ps);
                        return !(di < dj || (di == dj && i < o.id));
                    }
                    return true;
                }
                match rel.priority(i, o.id) {
                    -1 => return true,
                    1 => return false,
                    _ if committed => return false,
                    _ => {}
                }
                let yields = match net.zones[pc.zone].precedes(zi.approach, zj.approach) {
                    Some(own) => !own,
                    None => {
                        let (ei, ej) = (eta(zi.s_stop - me.s, me.v), eta(zj.s_stop - ps, o.v));
                        !(ei < ej || (ei == ej && i < o.id))
                    }
                };
                if !yields {
                    return false;
                }
                let gap = GapObservation {
                    d_targ: zi.s_target - me.s,
                    v: me.v,
                    d_stop_other: zj.s_stop - ps,
                    v_other: o.v,
                };
                if gap_accept(&gap, p) {
                    return false;
                }
                let standing = me.v < V_STANDING && o.v < V_STANDING;
                !(standing && (me.t_slow > o.t_slow || (me.t_slow == o.t_slow && i < o.id)))
            })
        });
        if blocked {
            yield_s = Some(first.s_stop);
        }
    }
    let accel = idm_accel(&obs, yield_s.map(|y| y - me.s), p);
    Decision {
        accel,
        obs,
        yield_s,
    }
}

/// Acceleration of a human driver, optionally with priority overrides.
pub fn hdv_policy(
    scene: &SceneState,
    net: &RoadNetwork,
    id: VehicleId,
    overrides: Option<&PrioritySet>,
    p: &DriverParams,
) -> Result<f64, SimError> {
    scene.vehicle(id)?;
    let n = scene.vehicles.len();
    let rel = match overrides {
        Some(set) => Relations::with_priorities(n, set),
        None => Relations::new(n),
    };
    let view = perceive(net, scene);
    Ok(decide(net, scene, id, &view, &rel, p).accel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::sim::{Kind, VehicleState};

    fn free(v: f64, v_max: f64) -> EnvObservation {
        EnvObservation {
            d_stop: f64::INFINITY,
            v,
            v_max,
            delta_psi_max: 0.0,
            d_lead: f64::INFINITY,
            v_lead: 0.0,
        }
    }

    #[test]
    fn gap_examples() {
        let p = DriverParams::default();
        let g = |d_targ, v, d_stop_other, v_other| GapObservation {
            d_targ,
            v,
            d_stop_other,
            v_other,
        };
        assert!(gap_accept(&g(15.0, 5.0, f64::INFINITY, 10.0), &p));
        assert!(gap_accept(&g(15.0, 5.0, 100.0, 10.0), &p));
        assert!(!gap_accept(&g(15.0, 5.0, 30.0, 10.0), &p));
    }

    #[test]
    fn equilibrium_on_free_road() {
        let p = DriverParams::default();
        assert!(idm_accel(&free(13.89, 13.89), None, &p).abs() < 0.05);
    }

    #[test]
    fn holds_at_yield_point() {
        let p = DriverParams::default();
        assert!(idm_accel(&free(0.0, 13.89), Some(p.s0), &p) <= 0.0);
    }

    #[test]
    fn follows_textbook_formula() {
        let p = DriverParams::default();
        let obs = EnvObservation {
            d_lead: 20.0 + p.vehicle_length,
            v_lead: 10.0,
            ..free(10.0, 13.89)
        };
        // a = a(1 - (v/v0)^4 - ((s0 + vT)/s)^2) with dv = 0
        let expect = 2.0 * (1.0 - (10.0f64 / 13.89).powi(4) - ((2.0 + 15.0) / 20.0f64).powi(2));
        assert!((idm_accel(&obs, None, &p) - expect).abs() < 1e-12);
    }

    #[test]
    fn curvature_caps_desired_speed() {
        let p = DriverParams::default();
        let obs = EnvObservation {
            delta_psi_max: std::f64::consts::FRAC_PI_2,
            ..free(0.0, 30.0)
        };
        let expect = (2.5 / (std::f64::consts::FRAC_PI_2 / 100.0)).sqrt();
        assert!((desired_speed(&obs, &p) - expect).abs() < 1e-12);
    }

    fn minor_major() -> (RoadNetwork, SceneState) {
        let net = fixtures::load("main_road_4arm").unwrap();
        let s = net.route_index("S_straight").unwrap();
        let e = net.route_index("E_straight").unwrap();
        let scene = SceneState::new(vec![
            VehicleState::new(0, Kind::Cav, s, 100.0, 8.0),
            VehicleState::new(1, Kind::Cav, e, 95.0, 13.0),
        ]);
        (net, scene)
    }

    #[test]
    fn minor_road_yields_to_major() {
        let (net, scene) = minor_major();
        let p = DriverParams::default();
        let a = hdv_policy(&scene, &net, 0, None, &p).unwrap();
        assert!(a < 0.0, "{a}");
        assert!(hdv_policy(&scene, &net, 1, None, &p).unwrap() > 0.0);
    }

    #[test]
    fn override_lets_minor_proceed() {
        let (net, scene) = minor_major();
        let p = DriverParams::default();
        let set = PrioritySet::from_pairs([(0, 1)]).unwrap();
        let a = hdv_policy(&scene, &net, 0, Some(&set), &p).unwrap();
        assert!(a > 0.0, "{a}");
        assert!(hdv_policy(&scene, &net, 1, Some(&set), &p).unwrap() < 0.0);
    }

    #[test]
    fn lone_vehicle_drives_free() {
        let net = fixtures::load("main_road_4arm").unwrap();
        let scene = SceneState::new(vec![VehicleState::new(0, Kind::Hdv, 0, 20.0, 5.0)]);
        let p = DriverParams::default();
        let a = hdv_policy(&scene, &net, 0, None, &p).unwrap();
        let expect = idm_accel(&free(5.0, 13.89), None, &p);
        assert!((a - expect).abs() < 1e-12);
        assert_eq!(
            hdv_policy(&scene, &net, 4, None, &p),
            Err(SimError::UnknownVehicle(4))
        );
    }
}
