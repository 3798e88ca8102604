use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use bci_app::config::PipelineConfig;
use bci_app::pipeline::{
    self, load_or_synthesize, read_spec, to_json, train_both, write_file, write_trained, AtStage,
    Stage, TrainedPipeline, AGREEMENT_FILE, EVALUATION_FILE, MODEL_FILE, SPEC_FILE,
};
use bci_app::service::{self, ServeOptions};
use bci_core::classify::{ClassifierKind, Model};
use bci_core::BciError;
use bci_core::dataset::{load_dataset, save_dataset, split_half};
use bci_core::validate::{evaluate, two_instance_agreement};
use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "bci", version, about = "ECoG movement-intention classifier and car controller")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML pipeline config; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    classifier: Option<ClassifierKind>,
    #[arg(long, global = true)]
    snr: Option<f64>,
    /// Load trials from a dataset directory instead of synthesizing.
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long, global = true)]
    tick_hz: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset to <out-dir>/dataset.
    Synth,
    /// Train pre-onset and execution models into <out-dir>/pre and <out-dir>/exec.
    Train,
    /// Evaluate a trained model on the held-out half.
    Eval {
        /// Directory holding model.json and spec.json (default <out-dir>/pre).
        #[arg(long)]
        model_dir: Option<PathBuf>,
    },
    /// Two-instance agreement between the pre-onset and execution models.
    Agree {
        /// Directory holding pre/ and exec/ (default <out-dir>).
        #[arg(long)]
        model_dir: Option<PathBuf>,
    },
    /// Full run: train, evaluate, agree and drive the controller.
    Simulate,
    /// Run the telemetry and steering service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
        /// Directory of UI assets served at `/`.
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
}

fn build_config(common: &Common) -> anyhow::Result<PipelineConfig> {
    let mut config = match &common.config {
        Some(path) => PipelineConfig::load(path).at(Stage::Config)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(kind) = common.classifier {
        config.classifier = kind;
    }
    if let Some(snr) = common.snr {
        config.synth.snr = snr;
    }
    if let Some(dataset) = &common.dataset {
        config.dataset = Some(dataset.clone());
    }
    if let Some(tick_hz) = common.tick_hz {
        config.tick_hz = tick_hz;
    }
    config.validate().at(Stage::Config)?;
    Ok(config)
}

fn load_trained(dir: &Path) -> anyhow::Result<TrainedPipeline> {
    let model = Model::load(&dir.join(MODEL_FILE)).at(Stage::Train)?;
    let spec = read_spec(&dir.join(SPEC_FILE)).at(Stage::Features)?;
    Ok(TrainedPipeline { spec, model })
}

fn write_report<T: serde::Serialize>(out_dir: &Path, name: &str, value: &T) -> anyhow::Result<()> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| BciError::Io {
            path: out_dir.to_path_buf(),
            source: e,
        })
        .at(Stage::Output)?;
    write_file(&out_dir.join(name), &to_json(value, name).at(Stage::Output)?).at(Stage::Output)?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let config = build_config(&cli.common)?;
    let out_dir = &cli.common.out_dir;
    match cli.command {
        Command::Synth => {
            let dataset = load_or_synthesize(&config)?;
            let dir = out_dir.join("dataset");
            save_dataset(&dataset, &dir).at(Stage::Output)?;
            println!("wrote {} trials to {}", dataset.trials.len(), dir.display());
        }
        Command::Train => {
            let dataset = load_or_synthesize(&config)?;
            let (train, _) = split_half(&dataset, config.seed).at(Stage::Split)?;
            let (pre, exec) = train_both(&config, &train)?;
            write_trained(&out_dir.join("pre"), &pre).at(Stage::Output)?;
            write_trained(&out_dir.join("exec"), &exec).at(Stage::Output)?;
            println!("trained on {} trials; models in {}", train.trials.len(), out_dir.display());
        }
        Command::Eval { model_dir } => {
            let trained = load_trained(&model_dir.unwrap_or_else(|| out_dir.join("pre")))?;
            let test = match &config.dataset {
                Some(path) => load_dataset(path).at(Stage::Data)?,
                None => {
                    let dataset = load_or_synthesize(&config)?;
                    split_half(&dataset, config.seed).at(Stage::Split)?.1
                }
            };
            let report = evaluate(&trained.model, &trained.spec, &test).at(Stage::Evaluate)?;
            write_report(out_dir, EVALUATION_FILE, &report)?;
            print!("{}", report.render());
        }
        Command::Agree { model_dir } => {
            let dir = model_dir.unwrap_or_else(|| out_dir.clone());
            let pre = load_trained(&dir.join("pre"))?;
            let exec = load_trained(&dir.join("exec"))?;
            let dataset = load_or_synthesize(&config)?;
            let (_, test) = split_half(&dataset, config.seed).at(Stage::Split)?;
            let report = two_instance_agreement(&pre.model, &exec.model, &pre.spec, &exec.spec, &test)
                .at(Stage::Agree)?;
            write_report(out_dir, AGREEMENT_FILE, &report)?;
            println!("agreement rate {:.3} over {} trials", report.agreement_rate, report.pairs.len());
        }
        Command::Simulate => {
            let output = pipeline::run_end_to_end(&config)?;
            pipeline::write_outputs(&output, out_dir)?;
            print!("{}", output.evaluation.render());
            println!(
                "agreement rate {:.3}; {} state changes over {} ticks",
                output.summary.agreement_rate,
                output.summary.state_changes,
                output.command_log.len()
            );
        }
        Command::Serve { bind, static_dir } => {
            let runtime = tokio::runtime::Runtime::new().context("cannot start async runtime")?;
            runtime.block_on(async {
                let handle = service::start(config, &bind, ServeOptions { static_dir, ring_capacity: None }).await?;
                eprintln!("serving on http://{}", handle.local_addr());
                tokio::signal::ctrl_c().await.context("cannot listen for ctrl-c")?;
                handle.shutdown().await;
                anyhow::Ok(())
            })?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
