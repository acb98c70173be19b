use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::error;

use dode_core::dnl::{assign_path_flows, run_dnl};
use dode_core::estimator::default_route_proportions;
use dode_core::network::{validate_network, write_network, write_node_coords, write_od_pairs, write_path_file};
use dode_core::observation::{write_detections, SyntheticDetections};
use dode_core::scenario::{
    build_network, compare_solvers, run_scenario, sensitivity_suite, truth_demand, NetworkSource, ScenarioConfig,
    SensitivityAxis,
};
use dode_core::{Error, Result, NUM_CLASSES};

#[derive(Parser)]
#[command(name = "dode", version, about = "Multi-class dynamic OD demand estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Overrides {
    /// Scenario config (TOML) or a run summary (JSON) to replay.
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
}

impl Overrides {
    fn load(&self) -> Result<ScenarioConfig> {
        let mut cfg = ScenarioConfig::from_file(&self.config)?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        if let Some(e) = self.epochs {
            cfg.estimator.epochs = e;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    ErrorLevel,
    SnapshotFrequency,
}

#[derive(Clone, Copy, ValueEnum)]
enum SyntheticNet {
    Toy,
    Grid,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario.
    Run(Overrides),
    /// Repeat a scenario over values of one setting.
    Sensitivity {
        #[command(flatten)]
        base: Overrides,
        #[arg(long, value_enum)]
        axis: Axis,
        /// Comma-separated values: noise levels or snapshot spacing in seconds.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long, default_value_t = 5)]
        replications: usize,
    },
    /// Compare the gradient solver with PC-SPSA at equal loader budgets.
    Compare(Overrides),
    /// Check a config and its network without solving.
    Validate(Overrides),
    /// Write a synthetic network, ground truth, detections and a config.
    GenSynthetic {
        #[arg(long, value_enum, default_value = "toy")]
        network: SyntheticNet,
        #[arg(long, default_value_t = 4)]
        rows: usize,
        #[arg(long, default_value_t = 4)]
        cols: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        intervals: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn gen_synthetic(kind: SyntheticNet, rows: usize, cols: usize, seed: u64, intervals: usize, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    let mut cfg = ScenarioConfig {
        name: "synthetic".into(),
        network: match kind {
            SyntheticNet::Toy => NetworkSource::Toy,
            SyntheticNet::Grid => NetworkSource::Grid { rows, cols, seed },
        },
        ..ScenarioConfig::default()
    };
    cfg.truth.seed = seed;
    cfg.dnl.horizon_intervals = intervals;
    let (net, paths) = build_network(&cfg)?;
    let truth = truth_demand(&cfg, &net)?;
    write_network(&net, &out.join("links.csv"))?;
    write_od_pairs(&net, &out.join("od.csv"))?;
    write_node_coords(&net, &out.join("nodes.csv"))?;
    write_path_file(&net, &paths, &out.join("paths.csv"))?;
    truth.write_csv(&net, &out.join("truth.csv"))?;

    let p = default_route_proportions(&paths, &cfg.dnl)?;
    let f = assign_path_flows(&truth, &p, &paths)?;
    let states = run_dnl(&net, &paths, &f, &cfg.dnl, 0)?.states;
    let mut dets = Vec::new();
    for t in 0..intervals {
        let remaining: [Vec<f64>; NUM_CLASSES] =
            std::array::from_fn(|c| (0..net.num_links()).map(|l| states.remaining[c][states.idx(l, t)]).collect());
        let gen = SyntheticDetections {
            net: &net,
            snapshot_id: t as u32,
            interval: t,
            lateral_m: 4.0,
            clutter: 20,
        };
        dets.extend(gen.generate(&remaining, seed.wrapping_add(t as u64))?);
    }
    write_detections(&dets, &out.join("detections.csv"))?;

    cfg.network = NetworkSource::Files {
        links: "links.csv".into(),
        od: "od.csv".into(),
        nodes: Some("nodes.csv".into()),
        paths: Some("paths.csv".into()),
    };
    cfg.truth.file = Some("truth.csv".into());
    cfg.out_dir = "run".into();
    write_text(&out.join("scenario.toml"), &cfg.to_toml()?)?;
    println!(
        "wrote {} links, {} OD pairs, {} detections to {}",
        net.num_links(),
        net.num_od(),
        dets.len(),
        out.display()
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(o) => {
            let cfg = o.load()?;
            let rep = run_scenario(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&rep.summary.metrics).unwrap_or_default());
            println!(
                "demand MAE car {:.3} truck {:.3}; outputs in {}",
                rep.summary.demand_mae[0],
                rep.summary.demand_mae[1],
                cfg.out_dir.display()
            );
        }
        Command::Sensitivity {
            base,
            axis,
            values,
            replications,
        } => {
            let cfg = base.load()?;
            let axis = match axis {
                Axis::ErrorLevel => SensitivityAxis::ErrorLevel,
                Axis::SnapshotFrequency => SensitivityAxis::SnapshotFrequency,
            };
            let rep = sensitivity_suite(&cfg, axis, &values, replications)?;
            for r in &rep.rows {
                let fmt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
                println!(
                    "{:>8} {:<8} {:<10} r2 mean {} min {} max {}",
                    r.value,
                    r.stream,
                    r.subset,
                    fmt(r.r2_mean),
                    fmt(r.r2_min),
                    fmt(r.r2_max)
                );
            }
        }
        Command::Compare(o) => {
            let cfg = o.load()?;
            let rep = compare_solvers(&cfg)?;
            let last = |v: Vec<f64>| v.last().copied().unwrap_or(f64::NAN);
            println!(
                "budget {}: gradient {:.4}, pc-spsa {:.4} (final normalized loss)",
                rep.budget,
                last(rep.cg_normalized()),
                last(rep.spsa_normalized())
            );
        }
        Command::Validate(o) => {
            let cfg = o.load()?;
            let (net, paths) = build_network(&cfg)?;
            let violations = validate_network(&net);
            for v in &violations {
                println!("{v}");
            }
            if !violations.is_empty() {
                return Err(Error::Invariant(format!("{} network violations", violations.len())));
            }
            truth_demand(&cfg, &net)?.check()?;
            println!(
                "ok: {} links, {} segments, {} OD pairs, {} car paths, {} truck paths",
                net.num_links(),
                net.segment_indices().len(),
                net.num_od(),
                paths.class(dode_core::VehicleClass::Car).len(),
                paths.class(dode_core::VehicleClass::Truck).len()
            );
        }
        Command::GenSynthetic {
            network,
            rows,
            cols,
            seed,
            intervals,
            out,
        } => gen_synthetic(network, rows, cols, seed, intervals, &out)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
