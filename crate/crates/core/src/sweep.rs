//! Experiment sweeps: independent cells over maps, seeds, CAV shares and
//! methods, their CSV rows and the aggregate report.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::driver::DriverParams;
use crate::fixtures;
use crate::harness::{
    run_scenario, HarnessError, RunOptions, SafetyReport, ScenarioSpec, MAX_VEHICLES,
};
use crate::map::RoadNetwork;
use crate::metrics::CRITICAL_PET;
use crate::mlp::MlpModel;
use crate::planner::{Method, PlannerConfig, DEFAULT_BUDGET};

#[derive(Debug, Error)]
pub enum SweepError {
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("invalid sweep config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub maps: Vec<String>,
    /// Scenarios per map; scenario `k` uses seed `seed + k`.
    pub scenarios: usize,
    pub seed: u64,
    pub cav_pcts: Vec<u32>,
    pub methods: Vec<Method>,
    pub duration: f64,
    pub vehicle_count: usize,
    pub budget: usize,
    /// Path of a trained urgency model, read by the caller.
    pub heur_model: Option<String>,
    pub driver: DriverParams,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            maps: fixtures::NAMES.iter().map(|s| s.to_string()).collect(),
            scenarios: 30,
            seed: 0,
            cav_pcts: vec![0, 20, 40, 60, 80, 100],
            methods: Method::ALL.to_vec(),
            duration: 60.0,
            vehicle_count: MAX_VEHICLES,
            budget: DEFAULT_BUDGET,
            heur_model: None,
            driver: DriverParams::default(),
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<(), SweepError> {
        let bad = |m: &str| Err(SweepError::Config(m.to_string()));
        if self.maps.is_empty()
            || self.cav_pcts.is_empty()
            || self.methods.is_empty()
            || self.scenarios == 0
        {
            return bad("maps, cav_pcts, methods and scenarios must be non-empty");
        }
        if self.budget == 0 {
            return bad("budget must be at least 1");
        }
        for m in &self.maps {
            if !fixtures::NAMES.contains(&m.as_str()) {
                return Err(SweepError::Config(format!("unknown map {m}")));
            }
        }
        Ok(())
    }

    pub fn run_options(&self) -> RunOptions {
        RunOptions {
            driver: self.driver,
            planner: PlannerConfig {
                budget: self.budget,
                driver: self.driver,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    pub fn spec(&self, map: &str, seed: u64, method: Method, cav_pct: u32) -> ScenarioSpec {
        ScenarioSpec {
            map: map.to_string(),
            seed,
            vehicle_count: self.vehicle_count,
            cav_pct,
            duration: self.duration,
            method,
        }
    }

    /// Every cell in map, seed, share, method order.
    pub fn cells(&self) -> Vec<ScenarioSpec> {
        let mut out = Vec::new();
        for map in &self.maps {
            for k in 0..self.scenarios as u64 {
                for &pct in &self.cav_pcts {
                    for &m in &self.methods {
                        out.push(self.spec(map, self.seed + k, m, pct));
                    }
                }
            }
        }
        out
    }
}

/// One CSV line; enough to replay the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub map: String,
    pub seed: u64,
    pub method: Method,
    pub cav_pct: u32,
    pub mean_wait_s: f64,
    pub throughput_per_h: f64,
    pub stop_rate: f64,
    pub critical_pet_rate: f64,
    pub max_cycle_ms: f64,
    pub p97_cycle_ms: f64,
}

impl CsvRow {
    /// The deterministic metric fields as written to the CSV; the two cycle
    /// time columns are wall-clock and left out.
    pub fn metric_text(&self) -> String {
        format!(
            "{},{},{},{}",
            self.mean_wait_s, self.throughput_per_h, self.stop_rate, self.critical_pet_rate
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub row: CsvRow,
    pub safety: SafetyReport,
    pub pet_count: usize,
    pub critical_count: usize,
    pub cycle_ms: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellFailure {
    pub spec: ScenarioSpec,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepOutcome {
    pub cells: Vec<CellResult>,
    pub failures: Vec<CellFailure>,
}

pub fn run_cell(
    net: &RoadNetwork,
    spec: &ScenarioSpec,
    opts: &RunOptions,
    model: Option<&MlpModel>,
) -> Result<CellResult, HarnessError> {
    let out = run_scenario(net, spec, opts, model)?;
    let m = &out.metrics;
    Ok(CellResult {
        row: CsvRow {
            map: spec.map.clone(),
            seed: spec.seed,
            method: spec.method,
            cav_pct: spec.cav_pct,
            mean_wait_s: m.mean_wait,
            throughput_per_h: m.throughput,
            stop_rate: m.stop_rate,
            critical_pet_rate: m.critical_pet_rate,
            max_cycle_ms: m.max_cycle_ms,
            p97_cycle_ms: m.p97_cycle_ms,
        },
        safety: out.safety,
        pet_count: m.pet_values.len(),
        critical_count: m.pet_values.iter().filter(|&&p| p < CRITICAL_PET).count(),
        cycle_ms: out.log.cycle_ms,
    })
}

/// Runs every cell; failed cells are collected rather than aborting the sweep.
pub fn run_sweep(cfg: &SweepConfig, model: Option<&MlpModel>) -> Result<SweepOutcome, SweepError> {
    cfg.validate()?;
    if cfg.methods.contains(&Method::Heur) && model.is_none() {
        return Err(HarnessError::MissingModel.into());
    }
    let nets: BTreeMap<&str, RoadNetwork> = cfg
        .maps
        .iter()
        .map(|m| fixtures::load(m).map(|n| (m.as_str(), n)))
        .collect::<Result<_, _>>()
        .map_err(HarnessError::from)?;
    let opts = cfg.run_options();
    let cells = cfg.cells();
    let one = |spec: &ScenarioSpec| run_cell(&nets[spec.map.as_str()], spec, &opts, model);
    #[cfg(feature = "parallel")]
    let results: Vec<_> = {
        use rayon::prelude::*;
        cells.par_iter().map(one).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<_> = cells.iter().map(one).collect();
    let mut out = SweepOutcome::default();
    for (spec, r) in cells.into_iter().zip(results) {
        match r {
            Ok(c) => out.cells.push(c),
            Err(e) => out.failures.push(CellFailure {
                spec,
                error: e.to_string(),
            }),
        }
    }
    Ok(out)
}

/// Re-runs the cell a CSV row describes under the sweep's settings.
pub fn replay_row(
    row: &CsvRow,
    cfg: &SweepConfig,
    model: Option<&MlpModel>,
) -> Result<CsvRow, SweepError> {
    let net = fixtures::load(&row.map).map_err(HarnessError::from)?;
    let spec = cfg.spec(&row.map, row.seed, row.method, row.cav_pct);
    Ok(run_cell(&net, &spec, &cfg.run_options(), model)?.row)
}

pub fn write_csv<W: Write>(rows: &[CsvRow], w: W) -> Result<(), SweepError> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_csv<R: std::io::Read>(r: R) -> Result<Vec<CsvRow>, SweepError> {
    csv::Reader::from_reader(r)
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(SweepError::from)
}

/// Mean metrics of one (map, method, share) cell group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportCell {
    pub map: String,
    pub method: Method,
    pub cav_pct: u32,
    pub runs: usize,
    pub mean_wait_s: f64,
    pub throughput_per_h: f64,
    pub stop_rate: f64,
    pub critical_pet_rate: f64,
    pub max_cycle_ms: f64,
    pub p97_cycle_ms: f64,
    /// Ratio of means against NONE over the seeds both share.
    pub wait_ratio: Option<f64>,
    pub throughput_ratio: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub cells: Vec<ReportCell>,
    pub failures: usize,
}

type GroupKey = (String, u32, Method);

fn by_seed(rows: &[CsvRow]) -> BTreeMap<GroupKey, BTreeMap<u64, &CsvRow>> {
    let mut g: BTreeMap<GroupKey, BTreeMap<u64, &CsvRow>> = BTreeMap::new();
    for r in rows {
        g.entry((r.map.clone(), r.cav_pct, r.method))
            .or_default()
            .insert(r.seed, r);
    }
    g
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    if den > 0.0 {
        Some(num / den)
    } else if num == 0.0 {
        Some(1.0)
    } else {
        None
    }
}

pub fn build_report(rows: &[CsvRow], failures: usize) -> ExperimentReport {
    let groups = by_seed(rows);
    let mut cells = Vec::new();
    for ((map, pct, method), seeds) in &groups {
        let n = seeds.len() as f64;
        let mean = |f: fn(&CsvRow) -> f64| seeds.values().map(|r| f(r)).sum::<f64>() / n;
        let base = groups.get(&(map.clone(), *pct, Method::None));
        let paired = |f: fn(&CsvRow) -> f64| {
            let base = base?;
            let (mut a, mut b) = (0.0, 0.0);
            for (s, r) in seeds {
                if let Some(br) = base.get(s) {
                    a += f(r);
                    b += f(br);
                }
            }
            ratio(a, b)
        };
        cells.push(ReportCell {
            map: map.clone(),
            method: *method,
            cav_pct: *pct,
            runs: seeds.len(),
            mean_wait_s: mean(|r| r.mean_wait_s),
            throughput_per_h: mean(|r| r.throughput_per_h),
            stop_rate: mean(|r| r.stop_rate),
            critical_pet_rate: mean(|r| r.critical_pet_rate),
            max_cycle_ms: seeds.values().map(|r| r.max_cycle_ms).fold(0.0, f64::max),
            p97_cycle_ms: mean(|r| r.p97_cycle_ms),
            wait_ratio: paired(|r| r.mean_wait_s),
            throughput_ratio: paired(|r| r.throughput_per_h),
        });
    }
    ExperimentReport { cells, failures }
}

/// Per-seed metric pairs `(a, b)` of two methods on the same map and share.
pub fn paired_values(
    rows: &[CsvRow],
    map: &str,
    cav_pct: u32,
    a: Method,
    b: Method,
    f: fn(&CsvRow) -> f64,
) -> Vec<(f64, f64)> {
    let groups = by_seed(rows);
    let key = |m| (map.to_string(), cav_pct, m);
    let (Some(ga), Some(gb)) = (groups.get(&key(a)), groups.get(&key(b))) else {
        return Vec::new();
    };
    ga.iter()
        .filter_map(|(s, ra)| gb.get(s).map(|rb| (f(ra), f(rb))))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignTest {
    /// Pairs with `a < b`.
    pub below: usize,
    pub above: usize,
    pub ties: usize,
    /// One-sided p-value of `below` under a fair coin.
    pub p_value: f64,
}

/// One-sided sign test for `a < b` over paired samples; ties are dropped.
pub fn sign_test_less(pairs: &[(f64, f64)]) -> SignTest {
    let below = pairs.iter().filter(|(a, b)| a < b).count();
    let above = pairs.iter().filter(|(a, b)| a > b).count();
    let n = below + above;
    SignTest {
        below,
        above,
        ties: pairs.len() - n,
        p_value: binomial_upper_tail(n, below),
    }
}

/// P(X ≥ k) for X ~ Binomial(n, 1/2).
pub fn binomial_upper_tail(n: usize, k: usize) -> f64 {
    if k == 0 {
        return 1.0;
    }
    let mut coef = 1.0f64;
    let mut total = 0.0;
    for i in 0..=n {
        if i >= k {
            total += coef;
        }
        coef = coef * (n - i) as f64 / (i + 1) as f64;
    }
    total / 2f64.powi(n as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(seed: u64, method: Method, wait: f64, thr: f64) -> CsvRow {
        CsvRow {
            map: "m".into(),
            seed,
            method,
            cav_pct: 100,
            mean_wait_s: wait,
            throughput_per_h: thr,
            stop_rate: 0.0,
            critical_pet_rate: 0.0,
            max_cycle_ms: 0.0,
            p97_cycle_ms: 0.0,
        }
    }

    #[test]
    fn binomial_tail_values() {
        assert_eq!(binomial_upper_tail(0, 0), 1.0);
        assert!((binomial_upper_tail(1, 1) - 0.5).abs() < 1e-15);
        assert!((binomial_upper_tail(3, 2) - 0.5).abs() < 1e-15);
        assert!((binomial_upper_tail(5, 5) - 1.0 / 32.0).abs() < 1e-15);
        // 20 of 30 is the first significant count
        assert!(binomial_upper_tail(30, 20) < 0.05);
        assert!(binomial_upper_tail(30, 19) > 0.05);
    }

    #[test]
    fn sign_test_drops_ties() {
        let t = sign_test_less(&[(1.0, 2.0), (2.0, 2.0), (3.0, 1.0), (0.0, 5.0)]);
        assert_eq!((t.below, t.above, t.ties), (2, 1, 1));
        assert!((t.p_value - 0.5).abs() < 1e-15);
    }

    #[test]
    fn none_ratio_is_one() {
        let rows = vec![
            row(0, Method::None, 10.0, 100.0),
            row(1, Method::None, 20.0, 200.0),
            row(0, Method::Opt, 5.0, 150.0),
            row(1, Method::Opt, 10.0, 150.0),
        ];
        let rep = build_report(&rows, 0);
        let get = |m| rep.cells.iter().find(|c| c.method == m).unwrap();
        assert_eq!(get(Method::None).wait_ratio, Some(1.0));
        assert_eq!(get(Method::Opt).wait_ratio, Some(0.5));
        assert_eq!(get(Method::Opt).throughput_ratio, Some(1.0));
        assert_eq!(
            paired_values(&rows, "m", 100, Method::Opt, Method::None, |r| r
                .mean_wait_s)
            .len(),
            2
        );
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![row(3, Method::Heur, 1.0 / 3.0, 1234.5)];
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(
            "map,seed,method,cav_pct,mean_wait_s,throughput_per_h,stop_rate,critical_pet_rate,max_cycle_ms,p97_cycle_ms\n"
        ));
        assert_eq!(read_csv(&buf[..]).unwrap(), rows);
    }

    #[test]
    fn config_defaults_and_cells() {
        let cfg = SweepConfig {
            maps: vec!["main_road_4arm".into()],
            scenarios: 1,
            cav_pcts: vec![100],
            methods: vec![Method::None, Method::Fifo],
            ..Default::default()
        };
        assert_eq!(cfg.cells().len(), 2);
        let out = run_sweep(&cfg, None).unwrap();
        assert_eq!(out.cells.len(), 2);
        assert!(out.failures.is_empty());
        let again = run_sweep(&cfg, None).unwrap();
        let text = |o: &SweepOutcome| {
            o.cells
                .iter()
                .map(|c| c.row.metric_text())
                .collect::<Vec<_>>()
        };
        assert_eq!(text(&out), text(&again));
        assert!(matches!(
            run_sweep(
                &SweepConfig {
                    methods: vec![Method::Heur],
                    ..cfg.clone()
                },
                None
            ),
            Err(SweepError::Harness(HarnessError::MissingModel))
        ));
        let bad = SweepConfig {
            maps: vec!["nowhere".into()],
            ..cfg
        };
        assert!(bad.validate().is_err());
    }
}
