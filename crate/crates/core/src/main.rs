use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use blescope::baseline::{FingerprintDb, KnnModel};
use blescope::bench::{self, BenchConfig};
use blescope::data::{Brand, RssiWindow};
use blescope::eval::{evaluate, export_cdf, EvalReport};
use blescope::experiment::{
    load_split_runs, read_json, simulate_dataset, write_json, ExperimentConfig, SimulateConfig,
};
use blescope::model::Localizer;
use blescope::stats::{compute_stat_matrix, format_receiver_table, receiver_stats};
use blescope::train::{
    default_grid, labeled_windows, runs_of_brands, train_scenario1, train_scenario2,
    train_scenario3, tune_weights, TrainReport,
};
use blescope::{Error, Result};

#[derive(Parser)]
#[command(
    name = "blescope",
    version,
    about = "BLE RSSI indoor localization toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate CSV runs and a manifest from a phone catalog.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print receiver diagnostics per phone; optionally write brand statistic matrices.
    Stats {
        /// Run manifest.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model for one scenario.
    Train {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
        scenario: u8,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a trained model on the test split.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Non-learned baselines.
    Baseline {
        #[command(subcommand)]
        method: BaselineMethod,
    },
    /// Synthetic five-brand benchmark.
    Bench {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Run a single seed instead of the configured list.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum BaselineMethod {
    /// Weighted k-nearest-neighbor fingerprinting.
    Knn {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Simulate { config, seed, out } => {
            let (cfg, base) = match &config {
                Some(p) => (
                    read_json::<SimulateConfig>(p)?,
                    p.parent().unwrap_or(Path::new(".")).to_path_buf(),
                ),
                None => (SimulateConfig::default(), PathBuf::from(".")),
            };
            let manifest = simulate_dataset(&cfg, &base, seed, &out)?;
            println!("wrote {} runs to {}", manifest.runs.len(), out.display());
        }
        Command::Stats { config, out } => stats(&config, out.as_deref())?,
        Command::Train {
            scenario,
            config,
            seed,
            out,
        } => return train(scenario, &config, seed, &out),
        Command::Evaluate { config, model, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let runs = load_split_runs(&cfg.manifest)?;
            let model = Localizer::load(&model)?;
            let test = labeled_windows(&runs.test, model.config.horizon)?;
            let method = if model.transnet.is_some() {
                "transnet+locnet"
            } else {
                "locnet"
            };
            let report = evaluate(&model, &test, method, None)?;
            finish_eval(&report, &runs, &out)?;
        }
        Command::Baseline {
            method: BaselineMethod::Knn { config, k, out },
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let runs = load_split_runs(&cfg.manifest)?;
            let horizon = cfg.training.horizon;
            let db = FingerprintDb::from_samples(&labeled_windows(&runs.train, horizon)?)?;
            let model = KnnModel {
                db,
                k: k.unwrap_or(cfg.knn_k),
            };
            let test = labeled_windows(&runs.test, horizon)?;
            let report = evaluate(&model, &test, &format!("knn (k={})", model.k), None)?;
            finish_eval(&report, &runs, &out)?;
        }
        Command::Bench { config, seed, out } => {
            let mut cfg = match &config {
                Some(p) => read_json::<BenchConfig>(p)?,
                None => BenchConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seeds = vec![s];
            }
            create_dir(&out)?;
            let summary = bench::run(&cfg)?;
            for o in &summary.outcomes {
                println!(
                    "seed {}: unseen locnet-only {:.3} m, unseen translated {:.3} m, adapted {:.3} -> {:.3} m (labeled-only continuation {:.3} m)",
                    o.seed, o.baseline2_unseen, o.scenario2_unseen, o.scenario2_adapted, o.scenario3_adapted, o.continued_adapted
                );
            }
            println!(
                "mean: unseen locnet-only {:.3} m, unseen translated {:.3} m, adapted {:.3} -> {:.3} m (labeled-only continuation {:.3} m)",
                summary.baseline2_unseen,
                summary.scenario2_unseen,
                summary.scenario2_adapted,
                summary.scenario3_adapted,
                summary.continued_adapted
            );
            write_json(&out.join("bench.json"), &summary)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn stats(manifest: &Path, out: Option<&Path>) -> Result<()> {
    let runs = load_split_runs(manifest)?;
    let mut by_phone: Vec<(usize, Vec<&blescope::data::Run>)> = Vec::new();
    for r in runs.train.iter().chain(&runs.unlabeled) {
        match by_phone.iter_mut().find(|(i, _)| *i == r.phone.index) {
            Some((_, v)) => v.push(r),
            None => by_phone.push((r.phone.index, vec![r])),
        }
    }
    by_phone.sort_by_key(|(i, _)| *i);
    let mut rows = Vec::new();
    for (index, rs) in &by_phone {
        let readings = rs.iter().flat_map(|r| r.readings.iter().map(Vec::as_slice));
        rows.push((
            runs.phone_name(*index),
            blescope::stats::receiver_stats_of(readings)?,
        ));
    }
    if rows.is_empty() {
        for r in &runs.val {
            rows.push((runs.phone_name(r.phone.index), receiver_stats(r)?));
        }
    }
    print!("{}", format_receiver_table(&rows));
    if let Some(out) = out {
        create_dir(out)?;
        for brand in Brand::ALL {
            let readings: Vec<&[f64]> = runs
                .train
                .iter()
                .filter(|r| r.phone.brand == brand)
                .flat_map(|r| r.readings.iter().map(Vec::as_slice))
                .collect();
            if readings.is_empty() {
                continue;
            }
            let m = compute_stat_matrix(readings, brand)?;
            let path = out.join(format!("stat_{}.csv", brand.name().to_lowercase()));
            fs::write(&path, m.to_csv()).map_err(|e| Error::Io { path, source: e })?;
        }
    }
    Ok(())
}

fn train(scenario: u8, config: &Path, seed: Option<u64>, out: &Path) -> Result<ExitCode> {
    let cfg = ExperimentConfig::load(config)?;
    let mut training = cfg.training.clone();
    training.scenario = scenario;
    if let Some(s) = seed {
        training.seed = s;
    }
    training.validate()?;
    let runs = load_split_runs(&cfg.manifest)?;
    create_dir(out)?;

    let fit = |t: &blescope::train::ScenarioConfig| -> Result<(Localizer, TrainReport)> {
        match scenario {
            1 => train_scenario1(&runs.train, &runs.val, t),
            2 => train_scenario2(&runs.train, &runs.val, t),
            _ => train_scenario3(&runs.train, &runs.val, &runs.unlabeled, t),
        }
    };
    if cfg.tune && scenario >= 2 {
        let grid = cfg.grid.clone().unwrap_or_else(default_grid);
        let val = labeled_windows(
            &runs_of_brands(&runs.val, &training.known_brands),
            training.horizon,
        )?;
        let result = tune_weights(&grid, &val, |w| {
            let t = blescope::train::ScenarioConfig {
                weights: *w,
                ..training.clone()
            };
            let (model, _) = fit(&t)?;
            Ok(move |win: &RssiWindow| model.predict(win))
        })?;
        println!("selected weights: {:?}", result.best);
        write_json(&out.join("tuning.json"), &result)?;
        training.weights = result.best;
    }
    let (model, mut report) = fit(&training)?;
    let model_path = out.join("model.json");
    model.save(&model_path)?;
    report.checkpoint = Some(model_path.display().to_string());
    write_json(&out.join("report.json"), &report)?;
    if let Some(last) = report.epochs.last() {
        println!(
            "scenario {scenario}: {} epochs, final train loss {:.4}, val mean AE {}",
            report.epochs.len(),
            last.train_loss,
            last.val_mean_ae
                .map_or("n/a".into(), |v| format!("{v:.3} m"))
        );
    }
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    if let Some(reason) = &report.aborted {
        eprintln!("training aborted: {reason}; last finite parameters saved");
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn finish_eval(
    report: &EvalReport,
    runs: &blescope::experiment::SplitRuns,
    out: &Path,
) -> Result<()> {
    create_dir(out)?;
    print!("{}", report.to_table(&|p| runs.phone_name(p.index)));
    report.save_json(&out.join("report.json"))?;
    export_cdf(report, &out.join("cdf.csv"))
}
