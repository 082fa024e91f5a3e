//! Longitudinal control of a CAV under accepted space-time constraints.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::driver::{decide, follow_limit, idm_accel, DriverParams, Relations};
use crate::map::{RoadNetwork, Route};
use crate::planner::ConstraintEntry;
use crate::sim::{SceneState, VehicleId, VehicleState};

/// Aim this far ahead of a deadline so discretization cannot overshoot it.
pub const T_MAX_MARGIN: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    InfeasibleTmin,
    InfeasibleTmax,
    Internal,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CavControlState {
    pub constraints: Vec<ConstraintEntry>,
    pub maneuver_id: Option<u64>,
    pub non_conflicting: BTreeSet<VehicleId>,
    /// Bound on how fast acceleration may rise, m/s³. Braking is never limited.
    pub jerk_limit: Option<f64>,
}

impl CavControlState {
    /// Drops the maneuver but keeps route facts.
    pub fn withdraw(&mut self) {
        self.constraints.clear();
        self.maneuver_id = None;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CavCommand {
    pub accel: f64,
    /// Set when a constraint can no longer be met.
    pub late_reject: Option<RejectReason>,
}

/// Earliest time to cover `d` from speed `v`: full `a_max` up to `v_cap`,
/// then cruise.
pub fn min_arrival_time(d: f64, v: f64, a_max: f64, v_cap: f64) -> f64 {
    if d <= 0.0 {
        return 0.0;
    }
    if v >= v_cap || a_max <= 0.0 {
        return if v > 0.0 { d / v } else { f64::INFINITY };
    }
    let d_acc = (v_cap * v_cap - v * v) / (2.0 * a_max);
    if d_acc >= d {
        ((v * v + 2.0 * a_max * d).sqrt() - v) / a_max
    } else {
        (v_cap - v) / a_max + (d - d_acc) / v_cap
    }
}

/// Time to cover `d` when braking at `b` from `v`; infinite if the vehicle
/// stops first.
pub fn braking_arrival_time(d: f64, v: f64, b: f64) -> f64 {
    if d <= 0.0 {
        return 0.0;
    }
    let disc = v * v - 2.0 * b * d;
    if disc < 0.0 {
        f64::INFINITY
    } else {
        (v - disc.sqrt()) / b
    }
}

/// Constant acceleration, saturating at `v_cap`, that covers `d` in exactly
/// `t`. `None` if even cruising at the cap is too slow.
pub fn required_accel(d: f64, t: f64, v: f64, v_cap: f64) -> Option<f64> {
    if d <= 0.0 {
        return Some(f64::NEG_INFINITY);
    }
    if t <= 0.0 {
        return None;
    }
    let a = 2.0 * (d - v * t) / (t * t);
    if v * t >= d || v + a * t <= v_cap {
        return Some(a);
    }
    if v_cap * t > d {
        Some((v_cap - v).powi(2) / (2.0 * (v_cap * t - d)))
    } else {
        None
    }
}

/// Line a yielder holds at: the start of the waypoint's cluster until the
/// vehicle has passed it, the waypoint itself afterwards.
pub fn hold_line(route: &Route, waypoint: f64, s: f64) -> f64 {
    route
        .zones
        .iter()
        .find(|z| z.s_stop == waypoint)
        .map(|z| route.clusters[z.cluster].start)
        .filter(|&start| s < start)
        .unwrap_or(waypoint)
}

/// Checks one constraint entry against the current state. `t_min` entries
/// sit on stop lines and refer to the front; `t_max` entries sit on target
/// lines and refer to the rear.
pub fn entry_feasible(
    e: &ConstraintEntry,
    veh: &VehicleState,
    route: &Route,
    now: f64,
    p: &DriverParams,
) -> Result<(), RejectReason> {
    let v_cap = route.speed_limit(veh.s).max(veh.v);
    if e.t_min.is_finite() {
        if veh.s > e.s {
            return Err(RejectReason::InfeasibleTmin);
        }
        let stop = veh.v * veh.v / (2.0 * p.b_emergency);
        let can_stop = stop <= e.s - veh.s;
        if !can_stop && now + min_arrival_time(e.s - veh.s, veh.v, p.a_max, v_cap) < e.t_min {
            return Err(RejectReason::InfeasibleTmin);
        }
    }
    if e.t_max.is_finite() {
        let d = e.s + veh.length - veh.s;
        if now + min_arrival_time(d, veh.v, p.a_max, v_cap) > e.t_max {
            return Err(RejectReason::InfeasibleTmax);
        }
    }
    Ok(())
}

/// Acceleration of a CAV: the human policy with accepted priorities and
/// non-conflicting masks, then held for `t_min` and pushed for `t_max`.
pub fn cav_accel(
    scene: &SceneState,
    net: &RoadNetwork,
    id: VehicleId,
    view: &[(usize, f64)],
    rel: &Relations,
    control: &CavControlState,
    p: &DriverParams,
) -> CavCommand {
    let veh = &scene.vehicles[id];
    let route = &net.routes[veh.route];
    let base = decide(net, scene, id, view, rel, p);
    let now = scene.time;
    let mut a = base.accel;
    let mut late_reject = None;
    let v_cap = route.speed_limit(veh.s).max(veh.v);

    if base.yield_s.is_none() {
        for e in control.constraints.iter().filter(|e| e.t_max.is_finite()) {
            let d = e.s + veh.length - veh.s;
            if d <= 0.0 {
                continue;
            }
            match required_accel(d, e.t_max - T_MAX_MARGIN - now, veh.v, v_cap) {
                Some(need) => a = a.max(need.min(follow_limit(&base.obs, p))),
                None => a = a.max(p.a_max.min(follow_limit(&base.obs, p))),
            }
        }
    }
    for e in &control.constraints {
        if e.t_max.is_finite() && e.s + veh.length > veh.s {
            let d = e.s + veh.length - veh.s;
            if now + min_arrival_time(d, veh.v, p.a_max, v_cap) > e.t_max {
                late_reject.get_or_insert(RejectReason::InfeasibleTmax);
            }
        }
        if e.t_min.is_finite() && now < e.t_min && veh.s <= e.s {
            let hold = hold_line(route, e.s, veh.s);
            a = a.min(idm_accel(&base.obs, Some(hold - veh.s), p));
            let reach = braking_arrival_time(e.s - veh.s, veh.v, p.b_emergency);
            if now + reach < e.t_min {
                late_reject.get_or_insert(RejectReason::InfeasibleTmin);
            }
        }
    }
    if let Some(j) = control.jerk_limit {
        let rise = veh.a + j * crate::sim::DT_SIM;
        if a > rise {
            a = rise.max(base.accel.min(a));
        }
    }
    CavCommand {
        accel: a.clamp(-p.b_emergency, p.a_max),
        late_reject,
    }
}
