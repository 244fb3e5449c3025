use std::fs;
use std::io::BufReader;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use harness_lab::experiments::{run_experiment, ExperimentConfig, EXPERIMENTS};
use harness_lab::harris::{evolve, read_events_jsonl, Variant};
use harness_lab::{Error, HeightField, Kernel, Region};
use harness_lab::lattice::Grid;

/// Lattice harness-process laboratory: seeded experiments, event replay, and
/// tolerance-checked reports.
#[derive(Parser)]
#[command(name = "harness-lab", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config and print its report.
    Run {
        /// Path to the experiment config (JSON).
        config: PathBuf,
    },
    /// List the registered experiment names.
    ListExperiments,
    /// Re-apply an exported event stream and emit the trajectory as CSV.
    Replay {
        /// Path to the exported events (JSON lines: site, time, eps, jump).
        events: PathBuf,
        /// Path to the kernel description (JSON).
        #[arg(long)]
        kernel: PathBuf,
        /// Path to the region description (JSON).
        #[arg(long)]
        region: PathBuf,
        /// Length of the time window the events live in.
        #[arg(long)]
        window: f64,
        /// Snapshot times for the CSV output (the final time is always included).
        #[arg(long, value_delimiter = ',')]
        snapshots: Vec<f64>,
    },
}

fn init_threads() {
    if let Ok(v) = std::env::var("HARNESS_LAB_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n > 0 {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global();
            }
        }
    }
}

fn cmd_run(config_path: &PathBuf) -> Result<bool, Error> {
    let text = fs::read_to_string(config_path)?;
    let config = ExperimentConfig::from_json(&text)?;
    let report = run_experiment(&config)?;
    println!("experiment: {}", report.experiment);
    println!("anchor:     {}", report.anchor);
    println!("seed:       {}", report.seed);
    for c in &report.criteria {
        let mark = if c.pass { "PASS" } else { "FAIL" };
        println!(
            "  [{mark}] {}: {:.6e} (threshold {:.6e}) — {}",
            c.name, c.value, c.threshold, c.note
        );
    }
    println!("result: {}", if report.pass { "PASS" } else { "FAIL" });
    if let Some(dir) = &config.output_dir {
        println!("report written to {}", dir.join("report.json").display());
    }
    Ok(report.pass)
}

fn cmd_replay(
    events: &PathBuf,
    kernel: &PathBuf,
    region: &PathBuf,
    window: f64,
    snapshots: &[f64],
) -> Result<(), Error> {
    let kernel: Kernel = serde_json::from_str(&fs::read_to_string(kernel)?)
        .map_err(|e| Error::SchemaError(e.to_string()))?;
    let region: Region = serde_json::from_str(&fs::read_to_string(region)?)
        .map_err(|e| Error::SchemaError(e.to_string()))?;
    let grid = Grid::new(&kernel, &region)?;
    let file = fs::File::open(events)?;
    let stream = read_events_jsonl(&grid, BufReader::new(file), window)?;
    let initial = HeightField::flat(grid.len(), 0.0);
    let mut times: Vec<f64> = snapshots.to_vec();
    times.sort_by(|a, b| a.partial_cmp(b).expect("finite snapshot times"));
    let out = evolve(&grid, &stream, &initial, Variant::Standard, &times)?;
    let d = kernel.dimension();
    let coords: String = (0..d).map(|k| format!(",x{k}")).collect();
    println!("time{coords},value");
    let mut rows: Vec<(f64, &HeightField)> =
        out.snapshots.iter().map(|(t, f)| (*t, f)).collect();
    rows.push((window, &out.last));
    for (t, field) in rows {
        for (site, v) in grid.sites().iter().zip(&field.values) {
            let cs: String = site.iter().map(|c| format!(",{c}")).collect();
            println!("{t}{cs},{v}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    init_threads();
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run { config } => cmd_run(config),
        Command::ListExperiments => {
            for name in EXPERIMENTS {
                println!("{name}");
            }
            Ok(true)
        }
        Command::Replay {
            events,
            kernel,
            region,
            window,
            snapshots,
        } => cmd_replay(events, kernel, region, *window, snapshots).map(|_| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
