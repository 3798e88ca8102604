//! The full two-stage chain: data, split, features, classifier, evaluation,
//! two-instance agreement and the control stream.

use std::fmt;
use std::fs;
use std::path::Path;

use bci_core::classify::{encode_class, Model};
use bci_core::control::{
    count_state_changes, compass_to_command, Acknowledgment, CommandRecord, CommandWord,
    CompassPoint, Controller, DevicePort, FilePort, LoopbackPort, TcpPort,
};
use bci_core::dataset::{load_dataset, split_half, synthesize_dataset, Dataset};
use bci_core::features::{extract_all, fit_feature_spec, FeatureSpec};
use bci_core::validate::{evaluate, two_instance_agreement, AgreementReport, EvaluationReport};
use bci_core::{BciError, Result};
use serde::Serialize;
use thiserror::Error;

use crate::config::{PipelineConfig, PortKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Data,
    Split,
    Features,
    Train,
    Evaluate,
    Agree,
    Control,
    Output,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Config => "config",
            Stage::Data => "data",
            Stage::Split => "split",
            Stage::Features => "features",
            Stage::Train => "train",
            Stage::Evaluate => "evaluate",
            Stage::Agree => "agree",
            Stage::Control => "control",
            Stage::Output => "output",
        })
    }
}

#[derive(Debug, Error)]
#[error("{stage} stage failed: {source}")]
pub struct StageError {
    pub stage: Stage,
    #[source]
    pub source: BciError,
}

pub trait AtStage<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, StageError>;
}

impl<T> AtStage<T> for Result<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, StageError> {
        self.map_err(|source| StageError { stage, source })
    }
}

pub type StageResult<T> = std::result::Result<T, StageError>;

/// A fitted feature spec and the model trained on it.
#[derive(Debug, Clone)]
pub struct TrainedPipeline {
    pub spec: FeatureSpec,
    pub model: Model,
}

pub fn load_or_synthesize(config: &PipelineConfig) -> StageResult<Dataset> {
    config.validate().at(Stage::Config)?;
    match &config.dataset {
        Some(path) => load_dataset(path),
        None => synthesize_dataset(&config.effective_synth()),
    }
    .at(Stage::Data)
}

/// Fits normalization on `train` for `base` and trains the configured
/// classifier.
pub fn train_pipeline(
    config: &PipelineConfig,
    train: &Dataset,
    base: &FeatureSpec,
) -> StageResult<TrainedPipeline> {
    let spec = fit_feature_spec(train, base).at(Stage::Features)?;
    let vectors = extract_all(train, &spec).at(Stage::Features)?;
    let labels: Vec<_> = train.trials.iter().map(|t| t.label).collect();
    let model = Model::train(config.classifier, &vectors, &labels, config.rejection_percentile)
        .at(Stage::Train)?;
    Ok(TrainedPipeline { spec, model })
}

/// Pre-onset and execution-window pipelines trained on the same half.
pub fn train_both(
    config: &PipelineConfig,
    train: &Dataset,
) -> StageResult<(TrainedPipeline, TrainedPipeline)> {
    let pre = train_pipeline(config, train, &config.features)?;
    let exec = train_pipeline(
        config,
        train,
        &config.features.with_window(config.execution_window),
    )?;
    Ok((pre, exec))
}

/// Writes to an in-memory log and, optionally, to a second port.
pub struct TeePort {
    pub log: LoopbackPort,
    pub extra: Option<Box<dyn DevicePort + Send>>,
}

impl TeePort {
    pub fn open(kind: &PortKind) -> Result<Self> {
        let extra: Option<Box<dyn DevicePort + Send>> = match kind {
            PortKind::Loopback => None,
            PortKind::File { path } => Some(Box::new(FilePort::open(path)?)),
            PortKind::Tcp { addr } => Some(Box::new(TcpPort::connect(addr.as_str())?)),
        };
        Ok(TeePort {
            log: LoopbackPort::new(),
            extra,
        })
    }
}

impl DevicePort for TeePort {
    fn transmit(&mut self, word: CommandWord, tick: u64) -> Result<Acknowledgment> {
        if let Some(extra) = self.extra.as_mut() {
            extra.transmit(word, tick)?;
        }
        self.log.transmit(word, tick)
    }

    fn close(&mut self) {
        if let Some(extra) = self.extra.as_mut() {
            extra.close();
        }
        self.log.close();
    }

    fn is_open(&self) -> bool {
        self.log.is_open()
    }
}

/// Streams each prediction's code through the controller, one per tick.
pub fn drive_controller(
    config: &PipelineConfig,
    evaluation: &EvaluationReport,
) -> StageResult<Vec<CommandRecord>> {
    let mut controller = Controller::new(config.tick_hz, config.car_speed_mps).at(Stage::Control)?;
    let mut port = TeePort::open(&config.port).at(Stage::Control)?;
    for prediction in &evaluation.predictions {
        controller
            .step(encode_class(prediction.predicted), &mut port)
            .at(Stage::Control)?;
    }
    port.close();
    Ok(port.log.log().to_vec())
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub n_train: usize,
    pub n_test: usize,
    pub failure_rate: f64,
    pub agreement_rate: f64,
    pub non_other_predictions: usize,
    pub state_changes: usize,
    pub final_compass: Option<CompassPoint>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub evaluation: EvaluationReport,
    pub agreement: AgreementReport,
    pub command_log: Vec<CommandRecord>,
    pub pre: TrainedPipeline,
    pub exec: TrainedPipeline,
    pub summary: RunSummary,
}

pub fn run_end_to_end(config: &PipelineConfig) -> StageResult<RunOutput> {
    let dataset = load_or_synthesize(config)?;
    let (train, test) = split_half(&dataset, config.seed).at(Stage::Split)?;
    let (pre, exec) = train_both(config, &train)?;
    let evaluation = evaluate(&pre.model, &pre.spec, &test).at(Stage::Evaluate)?;
    let agreement = two_instance_agreement(&pre.model, &exec.model, &pre.spec, &exec.spec, &test)
        .at(Stage::Agree)?;
    let command_log = drive_controller(config, &evaluation)?;
    let initial = compass_to_command(CompassPoint::N);
    let summary = RunSummary {
        n_train: train.trials.len(),
        n_test: test.trials.len(),
        failure_rate: evaluation.failure_rate,
        agreement_rate: agreement.agreement_rate,
        non_other_predictions: evaluation.n_test - evaluation.n_other(),
        state_changes: count_state_changes(&command_log, initial),
        final_compass: command_log.last().map(|r| r.compass),
    };
    Ok(RunOutput {
        evaluation,
        agreement,
        command_log,
        pre,
        exec,
        summary,
    })
}

pub const EVALUATION_FILE: &str = "evaluation.json";
pub const AGREEMENT_FILE: &str = "agreement.json";
pub const COMMAND_LOG_FILE: &str = "command_log.ndjson";
pub const SUMMARY_FILE: &str = "summary.json";
pub const MODEL_FILE: &str = "model.json";
pub const SPEC_FILE: &str = "spec.json";

pub fn to_json<T: Serialize>(value: &T, context: &str) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|source| BciError::Json {
        context: context.to_string(),
        source,
    })
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| BciError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn write_trained(dir: &Path, trained: &TrainedPipeline) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| BciError::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    trained.model.save(&dir.join(MODEL_FILE))?;
    write_file(&dir.join(SPEC_FILE), &to_json(&trained.spec, SPEC_FILE)?)
}

pub fn read_spec(path: &Path) -> Result<FeatureSpec> {
    let text = fs::read_to_string(path).map_err(|e| BciError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    serde_json::from_str(&text).map_err(|source| BciError::Json {
        context: path.display().to_string(),
        source,
    })
}

/// Writes reports, the command log and the pre-onset model to `out_dir`.
pub fn write_outputs(output: &RunOutput, out_dir: &Path) -> StageResult<()> {
    fs::create_dir_all(out_dir)
        .map_err(|e| BciError::Io {
            path: out_dir.to_path_buf(),
            source: e,
        })
        .at(Stage::Output)?;
    let write = |name: &str, contents: String| write_file(&out_dir.join(name), &contents);
    (|| {
        write(EVALUATION_FILE, to_json(&output.evaluation, EVALUATION_FILE)?)?;
        write(AGREEMENT_FILE, to_json(&output.agreement, AGREEMENT_FILE)?)?;
        write(SUMMARY_FILE, to_json(&output.summary, SUMMARY_FILE)?)?;
        write(
            COMMAND_LOG_FILE,
            output.command_log.iter().map(CommandRecord::to_json_line).collect(),
        )?;
        write_trained(out_dir, &output.pre)
    })()
    .at(Stage::Output)
}
