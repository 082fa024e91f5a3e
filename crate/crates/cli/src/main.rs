use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use coopsim::harness::{
    generate_heur_dataset, run_spec, train_heur, DatasetConfig, RunOptions, ScenarioSpec,
};
use coopsim::metrics::{compute_pet, pet_brute_force, SimLog};
use coopsim::mlp::{MlpModel, TrainConfig};
use coopsim::planner::Method;
use coopsim::sweep::{build_report, run_sweep, write_csv, CsvRow, SweepConfig};

#[derive(Parser)]
#[command(
    name = "coopsim",
    version,
    about = "Mixed-traffic intersection simulator with a cooperative maneuver planner"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario and write its log.
    Simulate {
        #[arg(long, default_value = "main_road_4arm")]
        map: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "opt")]
        method: Method,
        #[arg(long, default_value_t = 100)]
        cav_pct: u32,
        #[arg(long, default_value_t = 60.0)]
        duration: f64,
        /// Urgency model for the heur method.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Log file (JSON); metrics go to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate the pairwise dataset and train the urgency model.
    TrainHeur {
        #[arg(long, default_value_t = 200)]
        runs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        epochs: usize,
        #[arg(long)]
        out_model: PathBuf,
    },
    /// Run a sweep described by a TOML file.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Recompute PET of a saved log and compare with the quadratic scan.
    PetCheck {
        #[arg(long)]
        log: PathBuf,
    },
}

fn load_model(path: &Path) -> Result<MlpModel> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading model {}", path.display()))?;
    MlpModel::from_json(&text).with_context(|| format!("parsing model {}", path.display()))
}

fn simulate(
    map: String,
    seed: u64,
    method: Method,
    cav_pct: u32,
    duration: f64,
    model: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Result<()> {
    let model = model.as_deref().map(load_model).transpose()?;
    let spec = ScenarioSpec {
        duration,
        ..ScenarioSpec::new(&map, seed, method, cav_pct)
    };
    let run = run_spec(&spec, &RunOptions::default(), model.as_ref())?;
    if let Some(path) = out {
        fs::write(&path, serde_json::to_string_pretty(&run.log)?)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    let m = &run.metrics;
    println!(
        "{}",
        serde_json::json!({
            "map": map, "seed": seed, "method": method, "cav_pct": cav_pct,
            "mean_wait_s": m.mean_wait, "throughput_per_h": m.throughput,
            "stop_rate": m.stop_rate, "critical_pet_rate": m.critical_pet_rate,
            "pet_count": m.pet_values.len(), "max_cycle_ms": m.max_cycle_ms,
            "p97_cycle_ms": m.p97_cycle_ms, "safety": run.safety,
        })
    );
    Ok(())
}

fn train(runs: usize, seed: u64, epochs: usize, out_model: PathBuf) -> Result<()> {
    let data = generate_heur_dataset(&DatasetConfig {
        runs,
        seed,
        ..Default::default()
    })?;
    eprintln!("{} samples from {runs} runs", data.len());
    let rep = train_heur(
        &data,
        &TrainConfig {
            epochs,
            seed,
            ..Default::default()
        },
    )?;
    fs::write(&out_model, rep.model.to_json()?)
        .with_context(|| format!("writing {}", out_model.display()))?;
    println!(
        "samples {} train {} holdout {} | loss {:.4} -> {:.4} | sign accuracy train {:.3} holdout {:.3}",
        rep.samples,
        rep.train,
        rep.holdout,
        rep.loss_history.first().copied().unwrap_or(f64::NAN),
        rep.loss_history.last().copied().unwrap_or(f64::NAN),
        rep.train_accuracy,
        rep.holdout_accuracy
    );
    Ok(())
}

fn sweep(config: PathBuf, out_dir: PathBuf) -> Result<()> {
    let text =
        fs::read_to_string(&config).with_context(|| format!("reading {}", config.display()))?;
    let cfg: SweepConfig =
        toml::from_str(&text).with_context(|| format!("parsing {}", config.display()))?;
    let model = match &cfg.heur_model {
        // relative to the config file
        Some(p) => Some(load_model(
            &config.parent().unwrap_or(Path::new(".")).join(p),
        )?),
        None if cfg.methods.contains(&Method::Heur) => {
            bail!("methods include heur but heur_model is not set")
        }
        None => None,
    };
    fs::create_dir_all(&out_dir)?;
    let out = run_sweep(&cfg, model.as_ref())?;
    let rows: Vec<CsvRow> = out.cells.iter().map(|c| c.row.clone()).collect();
    write_csv(&rows, fs::File::create(out_dir.join("results.csv"))?)?;
    let report = build_report(&rows, out.failures.len());
    fs::write(
        out_dir.join("report.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    for f in &out.failures {
        eprintln!(
            "failed {} seed {} {} {}%: {}",
            f.spec.map, f.spec.seed, f.spec.method, f.spec.cav_pct, f.error
        );
    }
    let co: usize = out
        .cells
        .iter()
        .map(|c| c.safety.maneuver_co_occupancy)
        .sum();
    let order: usize = out
        .cells
        .iter()
        .map(|c| c.safety.constraint_order_violations)
        .sum();
    println!(
        "{} runs, {} failed, maneuver co-occupancy {co}, constraint order violations {order}",
        rows.len(),
        out.failures.len()
    );
    for c in &report.cells {
        println!(
            "{:24} {:>3}% {:5} wait {:7.2} s ({}) throughput {:7.1} /h ({})",
            c.map,
            c.cav_pct,
            c.method.name(),
            c.mean_wait_s,
            c.wait_ratio.map_or("-".into(), |r| format!("{r:.3}")),
            c.throughput_per_h,
            c.throughput_ratio.map_or("-".into(), |r| format!("{r:.3}")),
        );
    }
    Ok(())
}

fn pet_check(log: PathBuf) -> Result<()> {
    let text = fs::read_to_string(&log).with_context(|| format!("reading {}", log.display()))?;
    let log: SimLog = serde_json::from_str(&text).context("parsing log")?;
    let fast = compute_pet(&log.occupancies);
    let slow = pet_brute_force(&log.occupancies);
    println!(
        "{} occupancies, {} PET values, {} overlaps, critical {:.4}",
        log.occupancies.len(),
        fast.values.len(),
        fast.collisions,
        coopsim::metrics::critical_rate(&fast.values)
    );
    if fast != slow {
        bail!("PET differs from the quadratic scan");
    }
    println!("matches quadratic scan");
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Simulate {
            map,
            seed,
            method,
            cav_pct,
            duration,
            model,
            out,
        } => simulate(map, seed, method, cav_pct, duration, model, out),
        Cmd::TrainHeur {
            runs,
            seed,
            epochs,
            out_model,
        } => train(runs, seed, epochs, out_model),
        Cmd::Sweep { config, out_dir } => sweep(config, out_dir),
        Cmd::PetCheck { log } => pet_check(log),
    }
}
