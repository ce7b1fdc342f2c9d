//! Command-line front end: dataset generation, training, evaluation, single runs and
//! robustness of a recorded trace.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use stlctl::learn::{load_params, save_params, train, DatasetRecord};
use stlctl::pipeline::{
    emit_plot_data, evaluate, generate_dataset, read_dataset, run_rnn_controller, write_dataset,
    DatasetOptions, EvalOptions, PipelineError, Scenario,
};
use stlctl::stl::{
    eval_boolean, eval_robustness_agm, eval_robustness_traditional, parse_formula, PredicateTable, Trace,
};

#[derive(Parser)]
#[command(name = "stlctl", version, about = "STL control synthesis with CBF safety filtering")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Semantics {
    Agm,
    Traditional,
    Boolean,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the direct solution from random initial states and keep satisfying trajectories.
    GenDataset {
        /// Built-in scenario name (case1, case2) or a TOML file.
        #[arg(long)]
        scenario: String,
        /// Number of attempted runs.
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Stop once this many runs are accepted.
        #[arg(long)]
        target: Option<usize>,
    },
    /// Fit the recurrent controller to a dataset. Unset options take the scenario's `[training]`
    /// values.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Scenario supplying the control bounds and training defaults; inferred from the dataset
        /// hash when omitted.
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long)]
        lr: Option<f64>,
        /// Learning rate reached at the last epoch (geometric decay).
        #[arg(long)]
        final_lr: Option<f64>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        hidden: Option<usize>,
        #[arg(long)]
        layers: Option<usize>,
    },
    /// Closed-loop evaluation of trained parameters.
    Eval {
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        params: PathBuf,
        #[arg(long, default_value_t = 100)]
        runs: usize,
        #[arg(long)]
        report: PathBuf,
        /// First evaluation seed; run i uses seed + i.
        #[arg(long, default_value_t = 1_000_000)]
        seed: u64,
        /// Runs re-solved with the direct solution for the timing comparison.
        #[arg(long, default_value_t = 2)]
        direct_runs: usize,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// One closed-loop run of trained parameters, with plot output.
    Run {
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        params: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// SVG output; the JSON plot data is written next to it.
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Robustness of a CSV trace (one state per row) at time 0.
    Robustness {
        #[arg(long)]
        formula: String,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, value_enum, default_value_t = Semantics::Agm)]
        semantics: Semantics,
        /// Scenario whose regions name the predicates. Components are always available as
        /// `x0`, `x1`, ... meaning `x_i >= 0`.
        #[arg(long)]
        scenario: Option<String>,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::GenDataset { scenario, count, out, seed, workers, target } => {
            let sc = Scenario::resolve(&scenario)?;
            let opts = DatasetOptions {
                attempts: count,
                target_accepted: target,
                seed,
                workers,
            };
            let (records, summary) = generate_dataset(&sc, &opts)?;
            write_dataset(&out, &records).with_context(|| format!("writing {}", out.display()))?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Cmd::Train { data, out, epochs, seed, scenario, lr, final_lr, batch, hidden, layers } => {
            let records = read_dataset(&data).with_context(|| format!("reading {}", data.display()))?;
            let sc = training_scenario(scenario.as_deref(), &records)?;
            let mut cfg = sc.training().clone();
            cfg.epochs = epochs.unwrap_or(cfg.epochs);
            cfg.seed = seed.unwrap_or(cfg.seed);
            cfg.learning_rate = lr.unwrap_or(cfg.learning_rate);
            cfg.final_learning_rate = final_lr.or(cfg.final_learning_rate);
            cfg.batch_size = batch.unwrap_or(cfg.batch_size);
            cfg.hidden = hidden.unwrap_or(cfg.hidden);
            cfg.layers = layers.unwrap_or(cfg.layers);
            let outcome = train(&records, sc.model.bounds(), &cfg)?;
            save_params(&outcome.params, &out)?;
            let summary = serde_json::json!({
                "records": records.len(),
                "epochs": cfg.epochs,
                "learning_rate": cfg.learning_rate,
                "final_learning_rate": cfg.final_learning_rate,
                "batch_size": cfg.batch_size,
                "best_epoch": outcome.best_epoch,
                "initial_train_loss": outcome.train_loss.first(),
                "final_train_loss": outcome.train_loss.last(),
                "best_holdout_loss": outcome.holdout_loss.get(outcome.best_epoch),
            });
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Cmd::Eval { scenario, params, runs, report, seed, direct_runs, workers } => {
            let sc = Scenario::resolve(&scenario)?;
            let p = load_params(&params)?;
            let opts = EvalOptions {
                n_runs: runs,
                seed,
                direct_runs,
                workers,
            };
            let (r, _) = evaluate(&p, &sc, &opts)?;
            let text = r.to_json()?;
            std::fs::write(&report, &text).with_context(|| format!("writing {}", report.display()))?;
            println!(
                "success {:.3} ({} / {}), speedup {:.1}x",
                r.success_rate, r.n_success, r.n_runs, r.speedup
            );
        }
        Cmd::Run { scenario, params, seed, plot } => {
            let sc = Scenario::resolve(&scenario)?;
            let p = load_params(&params)?;
            let r = run_rnn_controller(&p, &sc, seed)?;
            if let Some(svg) = plot {
                let json = svg.with_extension("json");
                emit_plot_data(&r, &sc, &json, Some(&svg))?;
            }
            println!(
                "robustness {:.6} satisfied {} safe {} aborted {}",
                r.robustness,
                r.satisfied,
                r.safe,
                r.aborted.as_deref().unwrap_or("no")
            );
        }
        Cmd::Robustness { formula, trace, semantics, scenario } => {
            let tr = read_trace(&trace)?;
            let mut table = match scenario {
                Some(s) => Scenario::resolve(&s)?.table,
                None => PredicateTable::new(),
            };
            for i in 0..tr.dim() {
                let name = format!("x{i}");
                if table.get(&name).is_none() {
                    let mut e = vec![0.0; i + 1];
                    e[i] = 1.0;
                    table.insert_halfplane(&name, e, 0.0, 1.0)?;
                }
            }
            let f = parse_formula(&formula, &table).map_err(PipelineError::from)?;
            match semantics {
                Semantics::Agm => println!("{}", eval_robustness_agm(&f, &tr, 0)?.value),
                Semantics::Traditional => println!("{}", eval_robustness_traditional(&f, &tr, 0)?.value),
                Semantics::Boolean => println!("{}", eval_boolean(&f, &tr, 0)?),
            }
        }
    }
    Ok(())
}

/// Control bounds come from the named scenario, else from the built-in whose hash the records carry.
fn training_scenario(spec: Option<&str>, records: &[DatasetRecord<f64>]) -> Result<Scenario> {
    if let Some(s) = spec {
        return Ok(Scenario::resolve(s)?);
    }
    let hash = records.first().map(|r| r.scenario_hash.as_str()).unwrap_or_default();
    for name in ["case1", "case2"] {
        let sc = Scenario::builtin(name).expect("built-in");
        if sc.hash() == hash {
            return Ok(sc);
        }
    }
    bail!("dataset does not come from a built-in scenario; pass --scenario")
}

/// Numeric CSV, one state per row; a non-numeric first row is treated as a header.
fn read_trace(path: &Path) -> Result<Trace<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let parsed: Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(r) => rows.push(r),
            Err(_) if i == 0 => continue,
            Err(e) => bail!("row {}: {e}", i + 1),
        }
    }
    if rows.iter().any(|r| r.len() != rows[0].len()) {
        bail!("rows have different lengths");
    }
    Trace::from_states(&rows, 0).context("trace is empty")
}
