//! Maneuver messages between the coordinator and CAVs, and the
//! accept/reject loop.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cav::{entry_feasible, CavControlState, RejectReason};
use crate::driver::DriverParams;
use crate::map::RoadNetwork;
use crate::planner::{ConstraintEntry, PlanResult, PlannerMemory};
use crate::sim::{SceneState, VehicleId};

pub const MCM_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("frame truncated: need {need} bytes, have {have}")]
    Truncated { need: usize, have: usize },
    #[error("unsupported message version {0}")]
    Version(u32),
    #[error("message for unknown vehicle {0}")]
    UnknownRecipient(VehicleId),
    #[error("constraint at s = {s} has t_min > t_max")]
    InvertedWindow { s: f64 },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireConstraint {
    pub s_m: f64,
    pub t_min_s: Option<f64>,
    pub t_max_s: Option<f64>,
}

impl From<&ConstraintEntry> for WireConstraint {
    fn from(e: &ConstraintEntry) -> Self {
        WireConstraint {
            s_m: e.s,
            t_min_s: e.t_min.is_finite().then_some(e.t_min),
            t_max_s: e.t_max.is_finite().then_some(e.t_max),
        }
    }
}

impl From<&WireConstraint> for ConstraintEntry {
    fn from(w: &WireConstraint) -> Self {
        ConstraintEntry {
            s: w.s_m,
            t_min: w.t_min_s.unwrap_or(f64::NEG_INFINITY),
            t_max: w.t_max_s.unwrap_or(f64::INFINITY),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManeuverMessage {
    pub mcm_version: u32,
    pub cycle: u64,
    pub maneuver_id: u64,
    pub recipient: VehicleId,
    pub constraints: Vec<WireConstraint>,
    pub non_conflicting: Vec<VehicleId>,
}

impl ManeuverMessage {
    pub fn entries(&self) -> Vec<ConstraintEntry> {
        self.constraints.iter().map(ConstraintEntry::from).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accept,
    Reject,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManeuverResponse {
    pub maneuver_id: u64,
    pub verdict: Verdict,
    pub reason: Option<RejectReason>,
}

impl ManeuverResponse {
    pub fn accept(maneuver_id: u64) -> Self {
        ManeuverResponse {
            maneuver_id,
            verdict: Verdict::Accept,
            reason: None,
        }
    }

    pub fn reject(maneuver_id: u64, reason: RejectReason) -> Self {
        ManeuverResponse {
            maneuver_id,
            verdict: Verdict::Reject,
            reason: Some(reason),
        }
    }
}

/// Length-prefixed frame: 4-byte big-endian length, then the JSON body.
pub fn encode<T: Serialize>(msg: &T) -> Result<Vec<u8>, ProtocolError> {
    let body = serde_json::to_vec(msg)?;
    let mut out = Vec::with_capacity(body.len() + 4);
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(&body);
    Ok(out)
}

/// Decodes one frame, returning the value and the bytes consumed.
pub fn decode<T: for<'de> Deserialize<'de>>(buf: &[u8]) -> Result<(T, usize), ProtocolError> {
    if buf.len() < 4 {
        return Err(ProtocolError::Truncated {
            need: 4,
            have: buf.len(),
        });
    }
    let len = u32::from_be_bytes([buf[0], buf[1], buf[2], buf[3]]) as usize;
    if buf.len() < 4 + len {
        return Err(ProtocolError::Truncated {
            need: 4 + len,
            have: buf.len(),
        });
    }
    Ok((serde_json::from_slice(&buf[4..4 + len])?, 4 + len))
}

pub fn decode_message(buf: &[u8]) -> Result<(ManeuverMessage, usize), ProtocolError> {
    let (msg, n): (ManeuverMessage, usize) = decode(buf)?;
    if msg.mcm_version != MCM_VERSION {
        return Err(ProtocolError::Version(msg.mcm_version));
    }
    if let Some(w) = msg.entries().iter().find(|e| e.t_min > e.t_max) {
        return Err(ProtocolError::InvertedWindow { s: w.s });
    }
    Ok((msg, n))
}

/// Coordinator side: numbers maneuvers and tracks which one is live.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Coordinator {
    next_id: u64,
    current: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ignored,
    Accepted,
    Aborted,
}

impl Coordinator {
    pub fn current(&self) -> Option<u64> {
        self.current
    }

    /// One message per CAV with constraints or non-conflicting vehicles; all
    /// share a fresh maneuver id.
    pub fn issue(&mut self, plan: &PlanResult, cycle: u64) -> Vec<ManeuverMessage> {
        let mut recipients: BTreeSet<VehicleId> =
            plan.constraints.iter().map(|c| c.vehicle).collect();
        recipients.extend(
            plan.non_conflicting
                .iter()
                .filter(|(_, s)| !s.is_empty())
                .map(|(&v, _)| v),
        );
        if recipients.is_empty() {
            self.current = None;
            return Vec::new();
        }
        self.next_id += 1;
        let id = self.next_id;
        self.current = Some(id);
        recipients
            .into_iter()
            .map(|r| ManeuverMessage {
                mcm_version: MCM_VERSION,
                cycle,
                maneuver_id: id,
                recipient: r,
                constraints: plan
                    .constraints
                    .iter()
                    .filter(|c| c.vehicle == r)
                    .flat_map(|c| c.entries.iter().map(WireConstraint::from))
                    .collect(),
                non_conflicting: plan
                    .non_conflicting
                    .get(&r)
                    .map(|s| s.iter().copied().collect())
                    .unwrap_or_default(),
            })
            .collect()
    }

    /// A reject for the live maneuver aborts it: the planner forgets its
    /// priority set and the caller withdraws all constraints.
    pub fn handle_response(
        &mut self,
        memory: &mut PlannerMemory,
        resp: &ManeuverResponse,
    ) -> Outcome {
        if self.current != Some(resp.maneuver_id) {
            return Outcome::Ignored;
        }
        match resp.verdict {
            Verdict::Accept => Outcome::Accepted,
            Verdict::Reject => {
                memory.previous = Default::default();
                if let Some(last) = &mut memory.last {
                    last.chosen = Default::default();
                    last.constraints.clear();
                }
                self.current = None;
                Outcome::Aborted
            }
        }
    }
}

/// CAV side: checks every entry of a message against the current state.
pub fn cav_feasibility(
    scene: &SceneState,
    net: &RoadNetwork,
    msg: &ManeuverMessage,
    p: &DriverParams,
) -> Result<ManeuverResponse, ProtocolError> {
    let veh = scene
        .vehicles
        .get(msg.recipient)
        .ok_or(ProtocolError::UnknownRecipient(msg.recipient))?;
    let route = &net.routes[veh.route];
    for e in msg.entries() {
        if let Err(reason) = entry_feasible(&e, veh, route, scene.time, p) {
            return Ok(ManeuverResponse::reject(msg.maneuver_id, reason));
        }
    }
    Ok(ManeuverResponse::accept(msg.maneuver_id))
}

/// Installs an accepted message in the CAV's control state. Rejected
/// maneuvers leave only the non-conflicting set.
pub fn apply_message(state: &mut CavControlState, msg: &ManeuverMessage, resp: &ManeuverResponse) {
    state.non_conflicting = msg.non_conflicting.iter().copied().collect();
    if resp.verdict == Verdict::Accept {
        state.constraints = msg.entries();
        state.maneuver_id = Some(msg.maneuver_id);
    } else {
        state.withdraw();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planner::{ConstraintSet, NcSets, PrioritySet};

    fn plan(pairs: &[(usize, usize)], nc: NcSets) -> PlanResult {
        let mut constraints = Vec::new();
        for &(i, j) in pairs {
            constraints.push(ConstraintSet {
                vehicle: i,
                entries: vec![ConstraintEntry {
                    s: 130.0,
                    t_min: f64::NEG_INFINITY,
                    t_max: 6.4,
                }],
            });
            constraints.push(ConstraintSet {
                vehicle: j,
                entries: vec![ConstraintEntry {
                    s: 110.0,
                    t_min: 6.4,
                    t_max: f64::INFINITY,
                }],
            });
        }
        PlanResult {
            chosen: PrioritySet::from_pairs(pairs.iter().copied()).unwrap(),
            constraints,
            non_conflicting: nc,
            metric: 0.0,
            candidates_evaluated: 0,
            cycle_runtime: 0.0,
            dropped_pairs: Vec::new(),
            kept_previous: false,
        }
    }

    #[test]
    fn issue_counts() {
        let mut c = Coordinator::default();
        assert!(c.issue(&plan(&[], NcSets::new()), 0).is_empty());
        let nc: NcSets = [
            (0, BTreeSet::from([1])),
            (1, BTreeSet::from([0])),
            (2, BTreeSet::new()),
        ]
        .into();
        assert_eq!(c.issue(&plan(&[], nc), 1).len(), 2);
        let msgs = c.issue(&plan(&[(0, 1)], NcSets::new()), 2);
        assert_eq!(msgs.len(), 2);
        assert!(msgs.iter().all(|m| m.maneuver_id == 2));
    }

    #[test]
    fn wire_format_is_stable_and_round_trips() {
        let mut c = Coordinator::default();
        let msg = c.issue(&plan(&[(0, 1)], NcSets::new()), 7).remove(1);
        let bytes = encode(&msg).unwrap();
        assert_eq!(bytes, encode(&msg).unwrap());
        let body = std::str::from_utf8(&bytes[4..]).unwrap();
        assert_eq!(
            body,
            r#"{"mcm_version":1,"cycle":7,"maneuver_id":1,"recipient":1,"constraints":[{"s_m":110.0,"t_min_s":6.4,"t_max_s":null}],"non_conflicting":[]}"#
        );
        assert_eq!(&bytes[..4], &(body.len() as u32).to_be_bytes());
        let (back, n) = decode_message(&bytes).unwrap();
        assert_eq!((back, n), (msg, bytes.len()));
        let resp = ManeuverResponse::reject(3, RejectReason::InfeasibleTmax);
        let bytes = encode(&resp).unwrap();
        assert_eq!(
            std::str::from_utf8(&bytes[4..]).unwrap(),
            r#"{"maneuver_id":3,"verdict":"reject","reason":"infeasible_tmax"}"#
        );
        assert_eq!(decode::<ManeuverResponse>(&bytes).unwrap().0, resp);
        assert!(matches!(
            decode_message(&bytes[..bytes.len() - 1]),
            Err(ProtocolError::Truncated { .. })
        ));
    }

    #[test]
    fn bad_version_is_refused() {
        let mut c = Coordinator::default();
        let mut msg = c.issue(&plan(&[(0, 1)], NcSets::new()), 0).remove(0);
        msg.mcm_version = 2;
        assert!(matches!(
            decode_message(&encode(&msg).unwrap()),
            Err(ProtocolError::Version(2))
        ));
    }

    #[test]
    fn reject_aborts_and_stale_ids_are_ignored() {
        let mut c = Coordinator::default();
        let p = plan(&[(0, 1), (0, 2)], NcSets::new());
        let mut memory = PlannerMemory {
            previous: p.chosen.clone(),
            last: Some(p.clone()),
        };
        let msgs = c.issue(&p, 0);
        assert_eq!(msgs.len(), 3);
        let id = msgs[0].maneuver_id;
        assert_eq!(
            c.handle_response(&mut memory, &ManeuverResponse::accept(id)),
            Outcome::Accepted
        );
        assert_eq!(memory.previous, p.chosen);
        assert_eq!(
            c.handle_response(
                &mut memory,
                &ManeuverResponse::reject(id, RejectReason::InfeasibleTmin)
            ),
            Outcome::Aborted
        );
        assert!(memory.previous.is_empty());
        assert!(memory.last.as_ref().unwrap().constraints.is_empty());

        let mut memory = PlannerMemory {
            previous: p.chosen.clone(),
            last: None,
        };
        let old = c.issue(&p, 1)[0].maneuver_id;
        c.issue(&p, 2);
        let stale = ManeuverResponse::reject(old, RejectReason::Internal);
        assert_eq!(c.handle_response(&mut memory, &stale), Outcome::Ignored);
        assert_eq!(memory.previous, p.chosen);
    }
}
