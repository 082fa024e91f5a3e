use std::collections::{BTreeMap, BTreeSet};

use coopsim::cav::RejectReason;
use coopsim::driver::{gap_accept, DriverParams, GapObservation};
use coopsim::fixtures;
use coopsim::harness::{RunOptions, ScenarioSpec, Simulation};
use coopsim::map::RoadNetwork;
use coopsim::mlp::{MlpModel, URGENCY_LAYERS};
use coopsim::planner::{
    conflicting_cav_pairs, generate_fifo, generate_heur, generate_opt, is_valid_prediction,
    plan_cycle, Method, PlannerConfig, PlannerMemory, PrioritySet,
};
use coopsim::predictor::{rollout_many, RolloutParams};
use coopsim::protocol::{
    decode_message, encode, Coordinator, ManeuverMessage, ManeuverResponse, Outcome, WireConstraint,
};
use coopsim::sim::SceneState;
use proptest::prelude::*;

/// A scene some way into a FIFO run, so vehicles are queued and mid-zone.
fn scene_after(map: &str, seed: u64, steps: u64) -> (RoadNetwork, SceneState) {
    let net = fixtures::load(map).unwrap();
    let spec = ScenarioSpec::new(map, seed, Method::Fifo, 100);
    let scene = {
        let mut sim = Simulation::new(&net, &spec, &RunOptions::default(), None).unwrap();
        for _ in 0..steps {
            sim.step().unwrap();
        }
        sim.scene().clone()
    };
    (net, scene)
}

/// Independent check: every pair conflicts, no pair appears both ways and the
/// relation restricted to each shared zone has no cycle.
fn check_set(set: &PrioritySet, scene: &SceneState, net: &RoadNetwork) -> Result<(), String> {
    let conflicts: BTreeMap<(usize, usize), Vec<usize>> = conflicting_cav_pairs(scene, net)
        .into_iter()
        .map(|c| ((c.a.min(c.b), c.a.max(c.b)), c.zones))
        .collect();
    let mut per_zone: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
    for &(i, j) in set.pairs() {
        if i == j || set.contains((j, i)) {
            return Err(format!("bad pair {i},{j}"));
        }
        let zones = conflicts
            .get(&(i.min(j), i.max(j)))
            .ok_or(format!("{i},{j} do not conflict"))?;
        for &z in zones {
            per_zone.entry(z).or_default().push((i, j));
        }
    }
    for (z, edges) in per_zone {
        let nodes: BTreeSet<usize> = edges.iter().flat_map(|&(a, b)| [a, b]).collect();
        // Kahn's algorithm
        let mut indeg: BTreeMap<usize, usize> = nodes.iter().map(|&n| (n, 0)).collect();
        for &(_, b) in &edges {
            *indeg.get_mut(&b).unwrap() += 1;
        }
        let mut ready: Vec<usize> = indeg
            .iter()
            .filter(|(_, &d)| d == 0)
            .map(|(&n, _)| n)
            .collect();
        let mut seen = 0;
        while let Some(n) = ready.pop() {
            seen += 1;
            for &(a, b) in &edges {
                if a == n {
                    let d = indeg.get_mut(&b).unwrap();
                    *d -= 1;
                    if *d == 0 {
                        ready.push(b);
                    }
                }
            }
        }
        if seen != nodes.len() {
            return Err(format!("cycle in zone {z}"));
        }
    }
    Ok(())
}

fn map_name() -> impl Strategy<Value = &'static str> {
    prop::sample::select(fixtures::NAMES.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn heuristic_sets_are_valid(map in map_name(), seed in 0u64..1000, steps in 0u64..400, model_seed in 0u64..50) {
        let (net, scene) = scene_after(map, seed, steps);
        let fifo = generate_fifo(&scene, &net);
        prop_assert!(check_set(&fifo, &scene, &net).is_ok(), "{}", fifo);
        let model = MlpModel::new(&URGENCY_LAYERS, model_seed);
        let heur = generate_heur(&scene, &net, &model).unwrap();
        prop_assert!(check_set(&heur, &scene, &net).is_ok(), "{}", heur);
        prop_assert_eq!(heur.len(), conflicting_cav_pairs(&scene, &net).len());
    }

    #[test]
    fn opt_candidates_are_valid(map in map_name(), seed in 0u64..1000, steps in 0u64..400) {
        let (net, scene) = scene_after(map, seed, steps);
        let fifo = generate_fifo(&scene, &net);
        let cands = generate_opt(&fifo, &scene, &net, 100);
        prop_assert!(cands.len() <= 100);
        let unique: BTreeSet<_> = cands.iter().collect();
        prop_assert_eq!(unique.len(), cands.len());
        for c in &cands {
            prop_assert!(check_set(c, &scene, &net).is_ok(), "{}", c);
        }
    }

    #[test]
    fn opt_choice_is_executable_and_deterministic(seed in 0u64..1000, steps in 0u64..400) {
        let (net, scene) = scene_after("main_road_4arm", seed, steps);
        let cfg = PlannerConfig::default();
        let mut m1 = PlannerMemory::default();
        let mut m2 = PlannerMemory::default();
        let a = plan_cycle(&scene, &net, Method::Opt, &mut m1, &cfg, None).unwrap();
        let b = plan_cycle(&scene, &net, Method::Opt, &mut m2, &cfg, None).unwrap();
        prop_assert_eq!(&a.chosen, &b.chosen);
        prop_assert_eq!(a.metric, b.metric);
        let pred = rollout_many(&net, &scene, std::slice::from_ref(&a.chosen), &PrioritySet::default(), &a.non_conflicting, &cfg.driver, &cfg.rollout).pop().unwrap();
        prop_assert!(is_valid_prediction(&a.chosen, &pred));
        for c in &a.constraints {
            prop_assert!(a.chosen.vehicles().contains(&c.vehicle));
        }
    }

    #[test]
    fn commitment_prefix_is_shared(seed in 0u64..1000, steps in 0u64..400) {
        let (net, scene) = scene_after("main_road_4arm", seed, steps);
        let p = DriverParams::default();
        let rp = RolloutParams { record_trajectories: true, ..Default::default() };
        let cands = generate_opt(&PrioritySet::default(), &scene, &net, 20);
        let preds = rollout_many(&net, &scene, &cands, &PrioritySet::default(), &BTreeMap::new(), &p, &rp);
        let commit_steps = (rp.commit / rp.dt).round() as usize;
        for pred in &preds[1..] {
            for (a, b) in pred.trajectories.iter().zip(&preds[0].trajectories) {
                prop_assert_eq!(&a[..=commit_steps], &b[..=commit_steps]);
            }
        }
    }

    #[test]
    fn gap_acceptance_is_monotone(d_targ in 0.0f64..40.0, v in 0.0f64..15.0, d1 in -5.0f64..200.0, extra in 0.0f64..100.0, v_other in 0.0f64..15.0) {
        let p = DriverParams::default();
        let g = |d| GapObservation { d_targ, v, d_stop_other: d, v_other };
        if gap_accept(&g(d1), &p) {
            prop_assert!(gap_accept(&g(d1 + extra), &p));
        }
    }

    #[test]
    fn wire_round_trip(cycle in 0u64..1_000_000, id in 1u64..1_000_000, recipient in 0usize..10,
                       entries in prop::collection::vec((0.0f64..300.0, prop::option::of(0.0f64..100.0), prop::option::of(0.0f64..100.0)), 0..5),
                       nc in prop::collection::btree_set(0usize..10, 0..5)) {
        let msg = ManeuverMessage {
            mcm_version: coopsim::protocol::MCM_VERSION,
            cycle,
            maneuver_id: id,
            recipient,
            constraints: entries
                .into_iter()
                .map(|(s_m, a, b)| {
                    // windows are ordered; the decoder refuses inverted ones
                    let (t_min_s, t_max_s) = match (a, b) {
                        (Some(x), Some(y)) => (Some(x.min(y)), Some(x.max(y))),
                        other => other,
                    };
                    WireConstraint { s_m, t_min_s, t_max_s }
                })
                .collect(),
            non_conflicting: nc.into_iter().collect(),
        };
        let buf = encode(&msg).unwrap();
        let (back, used) = decode_message(&buf).unwrap();
        prop_assert_eq!(used, buf.len());
        prop_assert_eq!(&back, &msg);
        let mut inverted = msg;
        inverted.constraints.push(WireConstraint { s_m: 1.0, t_min_s: Some(2.0), t_max_s: Some(1.0) });
        prop_assert!(decode_message(&encode(&inverted).unwrap()).is_err());
    }

    #[test]
    fn stale_responses_never_abort(seed in 0u64..1000, steps in 0u64..400, stale in 0u64..5) {
        let (net, scene) = scene_after("main_road_4arm", seed, steps);
        let cfg = PlannerConfig::default();
        let mut memory = PlannerMemory::default();
        let plan = plan_cycle(&scene, &net, Method::Fifo, &mut memory, &cfg, None).unwrap();
        let mut coord = Coordinator::default();
        let first = coord.issue(&plan, 0);
        let second = coord.issue(&plan, 1);
        if let (Some(old), Some(new)) = (first.first(), second.first()) {
            prop_assert!(new.maneuver_id > old.maneuver_id);
            let before = memory.clone();
            let r = ManeuverResponse::reject(old.maneuver_id.saturating_sub(stale), RejectReason::InfeasibleTmin);
            prop_assert_eq!(coord.handle_response(&mut memory, &r), Outcome::Ignored);
            prop_assert_eq!(&memory, &before);
            let r = ManeuverResponse::reject(new.maneuver_id, RejectReason::InfeasibleTmax);
            prop_assert_eq!(coord.handle_response(&mut memory, &r), Outcome::Aborted);
            prop_assert!(memory.previous.is_empty());
        }
    }
}
