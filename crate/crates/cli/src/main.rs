use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use causal_order_lab::pipeline::{run_pipeline, worldline_samples, RunConfig, RunOutput, Stage};
use causal_order_lab::Error;
use clap::{Parser, Subcommand};

const EXIT_VALIDATION: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const PLOT_SAMPLES: usize = 200;

#[derive(Parser)]
#[command(
    name = "causal-lab",
    version,
    about = "Causal order on superposed spacetimes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run pipeline stages on a scenario config.
    Run(RunArgs),
}

#[derive(clap::Args)]
struct RunArgs {
    /// JSON scenario config.
    config: PathBuf,
    /// verdict, align, lightcones, sweep, protocol or all; repeat or comma-separate.
    #[arg(long = "stage", value_delimiter = ',')]
    stages: Vec<Stage>,
    /// Number of random diffeomorphism pairs in the sweep.
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Also write worldlines.csv and bloch.csv.
    #[arg(long)]
    emit_plot_data: bool,
}

/// Failure classified by exit code.
enum Failure {
    Validation(anyhow::Error),
    Numerical(anyhow::Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_validation() {
            Failure::Validation(e.into())
        } else {
            Failure::Numerical(e.into())
        }
    }
}

fn load_config(args: &RunArgs) -> Result<RunConfig, Failure> {
    let text = fs::read_to_string(&args.config)
        .with_context(|| format!("cannot read config {}", args.config.display()))
        .map_err(Failure::Validation)?;
    let mut config = RunConfig::from_json(&text)?;
    if let Some(trials) = args.trials {
        config.numerics.trials = trials;
    }
    if let Some(seed) = args.seed {
        config.numerics.seed = seed;
    }
    Ok(config)
}

fn write_outputs(out: &RunOutput, args: &RunArgs) -> anyhow::Result<()> {
    fs::create_dir_all(&args.out)
        .with_context(|| format!("cannot create {}", args.out.display()))?;
    let json = serde_json::to_string_pretty(&out.report)?;
    fs::write(args.out.join("result.json"), json + "\n")?;
    if args.emit_plot_data {
        write_worldlines(out, &args.out.join("worldlines.csv"))?;
        write_bloch(out, &args.out.join("bloch.csv"))?;
    }
    Ok(())
}

fn write_worldlines(out: &RunOutput, path: &Path) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let dim = out.scenario.branch_a.dim();
    let mut header = vec![
        "branch".to_string(),
        "curve".to_string(),
        "lambda".to_string(),
    ];
    header.extend((0..dim).map(|k| format!("x{k}")));
    w.write_record(&header)?;
    for row in worldline_samples(&out.scenario, PLOT_SAMPLES) {
        let mut record = vec![
            row.branch.to_string(),
            row.curve.to_string(),
            row.lambda.to_string(),
        ];
        record.extend(row.coords.iter().map(f64::to_string));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

fn write_bloch(out: &RunOutput, path: &Path) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["x", "y", "z", "class"])?;
    if let Some(q) = &out.report.order_qubit {
        let [x, y, z] = q.bloch;
        w.write_record([x.to_string(), y.to_string(), z.to_string(), q.class.clone()])?;
    }
    w.flush()?;
    Ok(())
}

fn summarize(out: &RunOutput) {
    let r = &out.report;
    println!(
        "{}: s^A = {}, s^B = {}, product = {}, verdict = {:?}",
        r.scenario, r.branch.a.s, r.branch.b.s, r.product, r.verdict
    );
    if let Some(a) = &r.alignment {
        println!(
            "align: aligned = {}, max offset = {:e}, product = {}",
            a.aligned, a.max_event_offset, a.product
        );
    }
    if let Some(l) = &r.lightcones {
        println!(
            "lightcones: definite = {}, product = {}",
            l.lightcone_definite, l.product
        );
    }
    if let Some(s) = &r.sweep {
        println!(
            "sweep: {}/{} passed, product preserved in {}, max rel tau deviation {:e}",
            s.passes, s.trials, s.product_preserved, s.max_rel_tau_deviation
        );
    }
    if let Some(q) = &r.order_qubit {
        println!(
            "order qubit: bloch = {:?}, class = {}, p(phi+) = {}",
            q.bloch, q.class, q.postselect_prob
        );
    }
}

fn run(args: &RunArgs) -> Result<(), Failure> {
    let config = load_config(args)?;
    let stages = if args.stages.is_empty() {
        config.stages.clone()
    } else {
        args.stages.clone()
    };
    let out = run_pipeline(&config, &stages)?;
    write_outputs(&out, args).map_err(Failure::Numerical)?;
    summarize(&out);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_VALIDATION)
        }
        Err(Failure::Numerical(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_NUMERICAL)
        }
    }
}
