//! Browser bindings. Each export returns a JSON string; the `*_json`
//! functions hold the logic so they can be tested natively.

use coopsim::driver::{gap_accept, DriverParams, GapObservation};
use coopsim::fixtures;
use coopsim::harness::{run_scenario, RunOptions, ScenarioSpec, Simulation};
use coopsim::planner::{
    generate_opt, is_valid_prediction, maneuver_metric, non_conflicting_sets, weights, Method,
    PlannerConfig,
};
use coopsim::predictor::rollout_many;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

const MAX_DURATION: f64 = 120.0;

fn method(name: &str) -> Result<Method, String> {
    let m: Method = name.parse().map_err(|e| format!("{e}"))?;
    if m == Method::Heur {
        // the demo ships without a trained urgency model
        return Err("heur needs a trained model; use the CLI".into());
    }
    Ok(m)
}

fn lanes(map: &str) -> Result<Value, String> {
    let net = fixtures::load(map).map_err(|e| e.to_string())?;
    Ok(net.lanes.iter().map(|l| json!(l.points)).collect())
}

pub fn maps_json() -> String {
    json!(fixtures::NAMES).to_string()
}

/// Full run with frames every 0.2 s.
pub fn simulate_json(
    map: &str,
    seed: u64,
    method_name: &str,
    cav_pct: u32,
    duration: f64,
) -> Result<String, String> {
    if !(duration > 0.0 && duration <= MAX_DURATION) {
        return Err(format!("duration must be in (0, {MAX_DURATION}] s"));
    }
    let net = fixtures::load(map).map_err(|e| e.to_string())?;
    let spec = ScenarioSpec {
        duration,
        ..ScenarioSpec::new(map, seed, method(method_name)?, cav_pct)
    };
    let opts = RunOptions {
        frame_stride: Some(4),
        ..Default::default()
    };
    let out = run_scenario(&net, &spec, &opts, None).map_err(|e| e.to_string())?;
    let m = &out.metrics;
    Ok(json!({
        "lanes": lanes(map)?,
        "frames": out.frames,
        "metrics": {
            "mean_wait_s": m.mean_wait,
            "throughput_per_h": m.throughput,
            "stop_rate": m.stop_rate,
            "pet_count": m.pet_values.len(),
            "critical_pet_rate": m.critical_pet_rate,
        },
        "safety": out.safety,
    })
    .to_string())
}

/// Runs OPT up to `t` and scores every candidate of the next cycle.
pub fn plan_snapshot_json(map: &str, seed: u64, cav_pct: u32, t: f64) -> Result<String, String> {
    if !(0.0..=MAX_DURATION).contains(&t) {
        return Err(format!("t must be in [0, {MAX_DURATION}] s"));
    }
    let net = fixtures::load(map).map_err(|e| e.to_string())?;
    let spec = ScenarioSpec {
        duration: MAX_DURATION,
        ..ScenarioSpec::new(map, seed, Method::Opt, cav_pct)
    };
    let mut sim =
        Simulation::new(&net, &spec, &RunOptions::default(), None).map_err(|e| e.to_string())?;
    while sim.scene().time + 1e-9 < t && !sim.done() {
        sim.step().map_err(|e| e.to_string())?;
    }
    let scene = sim.scene();
    let cfg = PlannerConfig::default();
    let previous = sim.accepted().clone();
    let cands = generate_opt(&previous, scene, &net, cfg.budget);
    let nc = non_conflicting_sets(scene, &net);
    let preds = rollout_many(
        &net,
        scene,
        &cands,
        &previous,
        &nc,
        &cfg.driver,
        &cfg.rollout,
    );
    let w = weights(scene);
    let mut rows: Vec<Value> = cands
        .iter()
        .zip(&preds)
        .map(|(c, p)| {
            json!({
                "pairs": c.pairs(),
                "valid": is_valid_prediction(c, p),
                "metric": maneuver_metric(p, &w, &preds[0]),
            })
        })
        .collect();
    rows.sort_by(|a, b| {
        let key = |v: &Value| {
            (
                !v["valid"].as_bool().unwrap_or(false),
                v["metric"].as_f64().unwrap_or(f64::INFINITY),
            )
        };
        let (ka, kb) = (key(a), key(b));
        ka.0.cmp(&kb.0).then(ka.1.total_cmp(&kb.1))
    });
    let vehicles: Vec<Value> = scene
        .vehicles
        .iter()
        .map(|v| {
            json!({
                "id": v.id, "route": net.routes[v.route].id, "s": v.s, "v": v.v,
                "cav": v.kind == coopsim::sim::Kind::Cav, "t_slow": v.t_slow,
            })
        })
        .collect();
    Ok(json!({
        "t": scene.time,
        "previous": previous.pairs(),
        "vehicles": vehicles,
        "candidates": rows,
    })
    .to_string())
}

/// Human gap decision with the default driver parameters.
pub fn gap_check_json(d_targ: f64, v: f64, d_stop_other: f64, v_other: f64) -> String {
    let p = DriverParams::default();
    let g = GapObservation {
        d_targ,
        v,
        d_stop_other,
        v_other,
    };
    json!({
        "accept": gap_accept(&g, &p),
        "eta_clear_s": d_targ / v.max(0.5),
        "eta_other_s": d_stop_other / v_other.max(0.1),
        "tau_gap_s": p.tau_gap,
    })
    .to_string()
}

#[wasm_bindgen]
pub fn maps() -> String {
    maps_json()
}

#[wasm_bindgen]
pub fn simulate(
    map: &str,
    seed: u32,
    method: &str,
    cav_pct: u32,
    duration: f64,
) -> Result<String, JsError> {
    simulate_json(map, seed.into(), method, cav_pct, duration).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn plan_snapshot(map: &str, seed: u32, cav_pct: u32, t: f64) -> Result<String, JsError> {
    plan_snapshot_json(map, seed.into(), cav_pct, t).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn gap_check(d_targ: f64, v: f64, d_stop_other: f64, v_other: f64) -> String {
    gap_check_json(d_targ, v, d_stop_other, v_other)
}
