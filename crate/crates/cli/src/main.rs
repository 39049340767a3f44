use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use spikerul::dataset::{generate_suite, RunSeries, SuiteKind};
use spikerul::forecaster::ForecasterModel;
use spikerul::onset::{detect, RegressionMode};
use spikerul::pipeline::{
    self, ablate, analyse, evaluate_predictions, extract_vibration_file, fit_forecaster,
    load_corpus, metrics_csv, rank_runs, run_experiment, trace_record, trace_run, write_text,
    DataSource, ModeSelection, OutputLayout, PipelineConfig, Preprocessing, RunTrace,
};
use spikerul::{Error, ErrorClass, Result};

#[derive(Parser, Debug)]
#[command(name = "spikerul", version, about = "Spike-aware remaining-useful-life pipeline")]
struct Cli {
    /// Pipeline configuration file (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (overrides `seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Sensitivity coefficient(s) of the onset threshold; repeat to compare.
    #[arg(long = "k-sigma", global = true)]
    k_sigma: Vec<f64>,
    /// Evaluation mode.
    #[arg(long, global = true, value_enum)]
    mode: Option<ModeArg>,
    /// Read runs from a directory of CSV files instead of the synthetic suite.
    #[arg(long, global = true)]
    runs: Option<PathBuf>,
    /// Comma-separated held-out run ids (with --runs).
    #[arg(long = "test-runs", global = true, value_delimiter = ',')]
    test_runs: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Segment,
    Full,
    Both,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SuiteArg {
    Standard,
    Incipient,
    Healthy,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic suite: one CSV and one `.meta.toml` sidecar per run.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        suite: Option<SuiteArg>,
        #[arg(long = "n-train")]
        n_train: Option<usize>,
        #[arg(long = "n-test")]
        n_test: Option<usize>,
    },
    /// Extract window features from a raw vibration CSV (columns H and/or V).
    Features {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2048)]
        window: usize,
        #[arg(long = "sample-rate", default_value_t = 25_600.0)]
        sample_rate: f64,
        #[arg(long, default_value_t = 8)]
        bins: usize,
    },
    /// Rank features by |Spearman| against RUL over the training runs.
    Rank {
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit scaling and the forecaster; writes models into `<out>/models`.
    TrainForecaster {
        #[arg(long)]
        out: PathBuf,
    },
    /// Detect onsets of every run with a trained forecaster.
    Detect {
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the segment and full-length ensembles with a trained forecaster.
    TrainEnsemble {
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recompute metrics from a predictions CSV.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the whole pipeline and write every artifact under `out`.
    Run {
        #[arg(long)]
        out: PathBuf,
    },
    /// Spike-aware vs full-length ablation over four regression heads.
    Ablate {
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Config => 2,
        ErrorClass::Io => 3,
        ErrorClass::Data => 4,
        ErrorClass::Numeric => 5,
    }
}

fn resolve_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::read(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    match cli.k_sigma.as_slice() {
        [] => {}
        [k] => {
            cfg.spike.k_sigma = *k;
            cfg.k_sigma_values.clear();
        }
        ks => {
            cfg.spike.k_sigma = ks[0];
            cfg.k_sigma_values = ks.to_vec();
        }
    }
    if let Some(m) = cli.mode {
        cfg.mode = match m {
            ModeArg::Segment => ModeSelection::Segment,
            ModeArg::Full => ModeSelection::Full,
            ModeArg::Both => ModeSelection::Both,
        };
    }
    if let Some(dir) = &cli.runs {
        cfg.data.source = DataSource::RunsDir;
        cfg.data.runs_dir = Some(dir.clone());
    }
    if !cli.test_runs.is_empty() {
        cfg.data.test_runs = cli.test_runs.clone();
    }
    let cfg = cfg.resolved();
    cfg.validate()?;
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn load_models(dir: &Path) -> Result<(Preprocessing, ForecasterModel)> {
    let layout = OutputLayout::new(dir);
    let models = if layout.forecaster().exists() {
        layout
    } else {
        OutputLayout::new(dir.parent().unwrap_or(dir))
    };
    Ok((
        Preprocessing::load(&models.preprocessing())?,
        ForecasterModel::load(&models.forecaster())?,
    ))
}

fn trace_all(
    runs: &[RunSeries],
    model: &ForecasterModel,
    pre: &Preprocessing,
) -> Result<Vec<RunTrace>> {
    runs.iter().map(|r| trace_run(model, pre, r)).collect()
}

fn execute(cli: &Cli) -> Result<()> {
    let cfg = resolve_config(cli)?;
    match &cli.command {
        Command::Synth {
            out,
            suite,
            n_train,
            n_test,
        } => {
            let mut s = cfg.data.suite.clone();
            if let Some(k) = suite {
                s.kind = match k {
                    SuiteArg::Standard => SuiteKind::Standard,
                    SuiteArg::Incipient => SuiteKind::Incipient,
                    SuiteArg::Healthy => SuiteKind::Healthy,
                };
            }
            s.n_train = n_train.unwrap_or(s.n_train);
            s.n_test = n_test.unwrap_or(s.n_test);
            create_dir(out)?;
            let runs = generate_suite(&s)?;
            for r in &runs {
                r.write(out)?;
            }
            println!("wrote {} runs to {}", runs.len(), out.display());
        }
        Command::Features {
            input,
            out,
            window,
            sample_rate,
            bins,
        } => {
            let run = extract_vibration_file(input, *window, *sample_rate, *bins)?;
            run.write_csv(out)?;
            println!("wrote {} windows x {} features to {}", run.len(), run.schema().len(), out.display());
        }
        Command::Rank { out } => {
            let corpus = load_corpus(&cfg.data).map_err(|e| e.at_stage("load"))?;
            let report = rank_runs(&corpus.train).map_err(|e| e.at_stage("rank"))?;
            write_text(out, &report.to_csv())?;
            print!("{}", report.to_table());
        }
        Command::TrainForecaster { out } => {
            let layout = OutputLayout::new(out);
            layout.create()?;
            let corpus = load_corpus(&cfg.data).map_err(|e| e.at_stage("load"))?;
            let (pre, _) = Preprocessing::fit(&corpus.train, &cfg.data.indicator)
                .map_err(|e| e.at_stage("normalize"))?;
            let series = corpus
                .train
                .iter()
                .map(|r| pre.indicator_series(r))
                .collect::<Result<Vec<_>>>()?;
            let (model, report) =
                fit_forecaster(&cfg.forecaster, &series).map_err(|e| e.at_stage("forecaster"))?;
            for l in report.progress_lines() {
                println!("{l}");
            }
            model.save(&layout.forecaster())?;
            pre.save(&layout.preprocessing())?;
        }
        Command::Detect { models, out } => {
            let (pre, model) = load_models(models)?;
            let layout = OutputLayout::new(out);
            layout.create()?;
            let corpus = load_corpus(&cfg.data).map_err(|e| e.at_stage("load"))?;
            let runs: Vec<RunSeries> = corpus.train.iter().chain(&corpus.test).cloned().collect();
            let traces = trace_all(&runs, &model, &pre).map_err(|e| e.at_stage("predict"))?;
            for k in cfg.k_values() {
                let spike = spikerul::onset::SpikeConfig {
                    k_sigma: k,
                    ..cfg.spike.clone()
                };
                for tr in &traces {
                    let on = detect(&tr.pred, &spike).map_err(|e| e.at_stage("detect"))?;
                    write_text(&layout.onset_record(&tr.run_id, k), &trace_record(tr, &on, &spike))?;
                    let onset = tr
                        .onset_time(&on)
                        .map_or_else(|| "none".to_string(), |t| t.to_string());
                    println!(
                        "{} k_sigma={k} onset={onset} n_spike={} mode={}",
                        tr.run_id,
                        on.n_spike(),
                        on.mode
                    );
                }
            }
        }
        Command::TrainEnsemble { models, out } => {
            let (pre, model) = load_models(models)?;
            let layout = OutputLayout::new(out);
            layout.create()?;
            let corpus = load_corpus(&cfg.data).map_err(|e| e.at_stage("load"))?;
            let train = trace_all(&corpus.train, &model, &pre).map_err(|e| e.at_stage("predict"))?;
            let test = trace_all(&corpus.test, &model, &pre).map_err(|e| e.at_stage("predict"))?;
            for k in cfg.k_values() {
                let an = analyse(&cfg, k, &train, &test)?;
                an.full_model.save(&layout.ensemble(RegressionMode::Full, k))?;
                if let Some(m) = &an.segment_model {
                    m.save(&layout.ensemble(RegressionMode::Segment, k))?;
                }
                println!(
                    "k_sigma={k} segment_runs={} alpha_segment={} alpha_full={}",
                    an.train_segment_rows.len(),
                    an.segment_model
                        .as_ref()
                        .map_or("none".to_string(), |m| m.blend.alpha.to_string()),
                    an.full_model.blend.alpha
                );
            }
        }
        Command::Evaluate { predictions, out } => {
            let reports = evaluate_predictions(predictions, cfg.metrics.epsilon)?;
            write_text(out, &metrics_csv(&reports))?;
            print!("{}", metrics_csv(&reports));
        }
        Command::Run { out } => {
            let exp = run_experiment(&cfg, out)?;
            print!("{}", metrics_csv(&exp.report.metrics));
        }
        Command::Ablate { out } => {
            let rows = ablate(&cfg, Some(out))?;
            print!("{}", pipeline::ablation_csv(&rows));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.class()))
        }
    }
}
