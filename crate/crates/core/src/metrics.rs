//! Efficiency and criticality metrics of a finished run.

use serde::{Deserialize, Serialize};

use crate::sim::{Kind, VehicleId};

/// PET below this is critical, seconds.
pub const CRITICAL_PET: f64 = 1.0;

/// One passage through a conflict zone: front in at `t_enter`, rear out at
/// `t_exit`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Occupancy {
    pub zone: usize,
    pub group: usize,
    pub vehicle: VehicleId,
    pub t_enter: f64,
    pub t_exit: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PetResult {
    pub values: Vec<f64>,
    /// Consecutive conflicting occupancies that overlapped.
    pub collisions: usize,
}

fn order_key(a: &Occupancy, b: &Occupancy) -> std::cmp::Ordering {
    a.zone
        .cmp(&b.zone)
        .then(a.t_enter.total_cmp(&b.t_enter))
        .then(a.t_exit.total_cmp(&b.t_exit))
        .then(a.vehicle.cmp(&b.vehicle))
}

fn record(out: &mut PetResult, first: &Occupancy, second: &Occupancy) {
    let pet = second.t_enter - first.t_exit;
    if pet < 0.0 {
        out.collisions += 1;
    } else {
        out.values.push(pet);
    }
}

/// PET of every pair of consecutive occupancies of a zone that come from
/// different conflict groups, in zone then time order.
pub fn compute_pet(log: &[Occupancy]) -> PetResult {
    let mut sorted = log.to_vec();
    sorted.sort_by(order_key);
    let mut out = PetResult::default();
    for w in sorted.windows(2) {
        if w[0].zone == w[1].zone && w[0].group != w[1].group {
            record(&mut out, &w[0], &w[1]);
        }
    }
    out
}

/// Quadratic scan: a pair counts when nothing else in the zone falls between
/// its two members in time order. Output order matches `compute_pet`.
pub fn pet_brute_force(log: &[Occupancy]) -> PetResult {
    use std::cmp::Ordering::Less;
    let mut pairs: Vec<(&Occupancy, &Occupancy)> = Vec::new();
    for a in log {
        for b in log {
            if a.zone != b.zone || a.group == b.group || order_key(a, b) != Less {
                continue;
            }
            let between = log
                .iter()
                .any(|c| c.zone == a.zone && order_key(a, c) == Less && order_key(c, b) == Less);
            if !between {
                pairs.push((a, b));
            }
        }
    }
    pairs.sort_by(|x, y| order_key(x.0, y.0));
    let mut out = PetResult::default();
    for (a, b) in pairs {
        record(&mut out, a, b);
    }
    out
}

/// Per-vehicle totals at the end of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleSummary {
    pub id: VehicleId,
    pub kind: Kind,
    pub wait_accum: f64,
    pub ever_stopped: bool,
    pub crossings: u32,
}

/// Everything a run leaves behind for post-processing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimLog {
    pub map: String,
    pub seed: u64,
    pub method: String,
    pub cav_pct: u32,
    pub duration: f64,
    pub vehicles: Vec<VehicleSummary>,
    pub occupancies: Vec<Occupancy>,
    /// Planner wall-clock time per cycle, milliseconds.
    pub cycle_ms: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub mean_wait: f64,
    pub throughput: f64,
    pub stop_rate: f64,
    pub pet_values: Vec<f64>,
    pub critical_pet_rate: f64,
    pub pet_collisions: usize,
    pub max_cycle_ms: f64,
    pub p97_cycle_ms: f64,
    /// Set when the run had no vehicles and every metric is zero.
    pub empty: bool,
}

/// Nearest-rank percentile; 0 for an empty sample.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((q / 100.0) * v.len() as f64).ceil().max(1.0) as usize;
    v[rank.min(v.len()) - 1]
}

pub fn critical_rate(pets: &[f64]) -> f64 {
    if pets.is_empty() {
        0.0
    } else {
        pets.iter().filter(|&&p| p < CRITICAL_PET).count() as f64 / pets.len() as f64
    }
}

pub fn compute_run_metrics(log: &SimLog) -> RunMetrics {
    let pet = compute_pet(&log.occupancies);
    let max_cycle_ms = log.cycle_ms.iter().copied().fold(0.0, f64::max);
    let p97_cycle_ms = percentile(&log.cycle_ms, 97.0);
    let n = log.vehicles.len();
    if n == 0 || log.duration <= 0.0 {
        return RunMetrics {
            mean_wait: 0.0,
            throughput: 0.0,
            stop_rate: 0.0,
            pet_values: Vec::new(),
            critical_pet_rate: 0.0,
            pet_collisions: 0,
            max_cycle_ms,
            p97_cycle_ms,
            empty: true,
        };
    }
    let crossings: u32 = log.vehicles.iter().map(|v| v.crossings).sum();
    RunMetrics {
        mean_wait: log.vehicles.iter().map(|v| v.wait_accum).sum::<f64>() / n as f64,
        throughput: crossings as f64 / log.duration * 3600.0,
        stop_rate: log.vehicles.iter().filter(|v| v.ever_stopped).count() as f64 / n as f64,
        critical_pet_rate: critical_rate(&pet.values),
        pet_values: pet.values,
        pet_collisions: pet.collisions,
        max_cycle_ms,
        p97_cycle_ms,
        empty: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn occ(zone: usize, group: usize, vehicle: usize, t_enter: f64, t_exit: f64) -> Occupancy {
        Occupancy {
            zone,
            group,
            vehicle,
            t_enter,
            t_exit,
        }
    }

    #[test]
    fn pet_examples() {
        let r = compute_pet(&[occ(0, 0, 0, 3.0, 5.0), occ(0, 1, 1, 5.8, 7.0)]);
        assert_eq!(r.values.len(), 1);
        assert!((r.values[0] - 0.8).abs() < 1e-12);
        assert_eq!(critical_rate(&r.values), 1.0);
        let same = compute_pet(&[occ(0, 0, 0, 3.0, 5.0), occ(0, 0, 1, 5.2, 7.0)]);
        assert!(same.values.is_empty());
        let overlap = compute_pet(&[occ(0, 0, 0, 3.0, 5.0), occ(0, 1, 1, 4.0, 7.0)]);
        assert_eq!((overlap.values.len(), overlap.collisions), (0, 1));
        let other_zone = compute_pet(&[occ(0, 0, 0, 3.0, 5.0), occ(1, 1, 1, 5.5, 7.0)]);
        assert!(other_zone.values.is_empty());
    }

    #[test]
    fn matches_brute_force_on_random_logs() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..200 {
            let n = rng.gen_range(0..25);
            let log: Vec<Occupancy> = (0..n)
                .map(|v| {
                    let t: f64 = (rng.gen_range(0..200) as f64) * 0.05;
                    occ(
                        rng.gen_range(0..3),
                        rng.gen_range(0..3),
                        v,
                        t,
                        t + rng.gen_range(1..40) as f64 * 0.05,
                    )
                })
                .collect();
            assert_eq!(compute_pet(&log), pet_brute_force(&log));
        }
    }

    #[test]
    fn nearest_rank_percentile() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&v, 97.0), 97.0);
        assert_eq!(percentile(&[5.0], 97.0), 5.0);
        assert_eq!(percentile(&[3.0, 1.0, 2.0], 50.0), 2.0);
        assert_eq!(percentile(&[], 97.0), 0.0);
    }

    fn summary(id: usize, wait: f64, stopped: bool, crossings: u32) -> VehicleSummary {
        VehicleSummary {
            id,
            kind: Kind::Hdv,
            wait_accum: wait,
            ever_stopped: stopped,
            crossings,
        }
    }

    #[test]
    fn run_metric_examples() {
        let mut log = SimLog {
            map: "m".into(),
            seed: 0,
            method: "none".into(),
            cav_pct: 0,
            duration: 60.0,
            vehicles: (0..10).map(|i| summary(i, 0.0, false, 1)).collect(),
            occupancies: Vec::new(),
            cycle_ms: vec![1.0, 3.0, 2.0],
        };
        let m = compute_run_metrics(&log);
        assert_eq!(m.mean_wait, 0.0);
        assert!((m.throughput - 600.0).abs() < 1e-9);
        assert_eq!(m.stop_rate, 0.0);
        assert_eq!(m.max_cycle_ms, 3.0);
        log.vehicles[0] = summary(0, 10.0, true, 1);
        let m = compute_run_metrics(&log);
        assert!((m.mean_wait - 1.0).abs() < 1e-12);
        assert!((m.stop_rate - 0.1).abs() < 1e-12);
        assert_eq!(m, compute_run_metrics(&log));
        log.vehicles.clear();
        assert!(compute_run_metrics(&log).empty);
    }
}
