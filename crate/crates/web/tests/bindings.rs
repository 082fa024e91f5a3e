use coopsim_web::{gap_check_json, maps_json, plan_snapshot_json, simulate_json};
use serde_json::Value;

#[test]
fn simulate_returns_frames_and_metrics() {
    let v: Value =
        serde_json::from_str(&simulate_json("main_road_4arm", 3, "fifo", 100, 20.0).unwrap())
            .unwrap();
    let frames = v["frames"].as_array().unwrap();
    assert!(frames.len() >= 99);
    assert!(v["lanes"].as_array().unwrap().len() > 4);
    assert!(v["metrics"]["mean_wait_s"].as_f64().unwrap() >= 0.0);
    assert_eq!(v["safety"]["maneuver_co_occupancy"], 0);
}

#[test]
fn simulate_rejects_bad_input() {
    assert!(simulate_json("main_road_4arm", 0, "heur", 100, 10.0).is_err());
    assert!(simulate_json("nowhere", 0, "opt", 100, 10.0).is_err());
    assert!(simulate_json("main_road_4arm", 0, "opt", 100, 1e6).is_err());
}

#[test]
fn snapshot_puts_best_valid_candidate_first() {
    let v: Value =
        serde_json::from_str(&plan_snapshot_json("main_road_4arm", 1, 100, 5.0).unwrap()).unwrap();
    let c = v["candidates"].as_array().unwrap();
    assert!(!c.is_empty());
    assert_eq!(c[0]["valid"], true);
    let valid: Vec<f64> = c
        .iter()
        .filter(|r| r["valid"] == true)
        .map(|r| r["metric"].as_f64().unwrap())
        .collect();
    assert!(valid.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn gap_and_maps() {
    let v: Value = serde_json::from_str(&gap_check_json(15.0, 5.0, 100.0, 10.0)).unwrap();
    assert_eq!(v["accept"], true);
    assert!((v["eta_clear_s"].as_f64().unwrap() - 3.0).abs() < 1e-12);
    let v: Value = serde_json::from_str(&gap_check_json(15.0, 5.0, 20.0, 10.0)).unwrap();
    assert_eq!(v["accept"], false);
    assert!(maps_json().contains("roundabout_4arm"));
}
