//! Held-out evaluation, two-instance agreement and invalid-input probing.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::classify::{encode_class, Classifier, DigitalCode};
use crate::dataset::{Dataset, MovementClass, Trial};
use crate::error::{BciError, Result};
use crate::features::{extract_features, FeatureSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub trial_id: String,
    pub truth: MovementClass,
    pub predicted: MovementClass,
    pub distance: f64,
    pub code: DigitalCode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    /// `confusion[predicted][truth]`; rows RTR, RTL, WF, OTHER, columns RTR, RTL, WF.
    pub confusion: [[usize; 3]; 4],
    pub failure_rate: f64,
    pub per_class_accuracy: BTreeMap<MovementClass, f64>,
    pub n_test: usize,
    pub predictions: Vec<Prediction>,
}

impl EvaluationReport {
    pub fn from_predictions(predictions: Vec<Prediction>) -> Result<Self> {
        if predictions.is_empty() {
            return Err(BciError::InvalidDataset("empty test set".into()));
        }
        let mut confusion = [[0usize; 3]; 4];
        for p in &predictions {
            if p.truth == MovementClass::Other {
                return Err(BciError::trial(&p.trial_id, "OTHER is not a test label"));
            }
            confusion[p.predicted.index()][p.truth.index()] += 1;
        }
        let n_test = predictions.len();
        let correct: usize = (0..3).map(|i| confusion[i][i]).sum();
        let per_class_accuracy = MovementClass::MOVEMENTS
            .into_iter()
            .filter_map(|c| {
                let total: usize = confusion.iter().map(|row| row[c.index()]).sum();
                (total > 0).then(|| (c, confusion[c.index()][c.index()] as f64 / total as f64))
            })
            .collect();
        Ok(EvaluationReport {
            confusion,
            failure_rate: 1.0 - correct as f64 / n_test as f64,
            per_class_accuracy,
            n_test,
            predictions,
        })
    }

    pub fn n_other(&self) -> usize {
        self.confusion[MovementClass::Other.index()].iter().sum()
    }

    /// Plain-text confusion matrix, predicted classes down, true classes across.
    pub fn render(&self) -> String {
        let mut out = String::from("pred\\true     RTR    RTL     WF\n");
        for class in MovementClass::ALL {
            let row = &self.confusion[class.index()];
            out.push_str(&format!(
                "{:<10}{:>7}{:>7}{:>7}\n",
                class.as_str(),
                row[0],
                row[1],
                row[2]
            ));
        }
        out.push_str(&format!(
            "n_test {}  failure_rate {:.4}\n",
            self.n_test, self.failure_rate
        ));
        out
    }
}

fn check_fingerprint(model: &dyn Classifier, spec: &FeatureSpec) -> Result<()> {
    let spec_fp = spec.fingerprint();
    if model.spec_fingerprint() != spec_fp {
        return Err(BciError::FingerprintMismatch {
            model: model.spec_fingerprint().to_string(),
            spec: spec_fp,
        });
    }
    Ok(())
}

pub fn predict(model: &dyn Classifier, spec: &FeatureSpec, trial: &Trial) -> Result<(MovementClass, f64)> {
    let v = extract_features(trial, spec)?;
    model.classify(&v)
}

/// Classifies every test trial. Any prediction other than the true label,
/// including OTHER, is a failure.
pub fn evaluate(model: &dyn Classifier, spec: &FeatureSpec, test: &Dataset) -> Result<EvaluationReport> {
    check_fingerprint(model, spec)?;
    if test.trials.is_empty() {
        return Err(BciError::InvalidDataset("empty test set".into()));
    }
    let predictions = test
        .trials
        .iter()
        .map(|t| {
            let (predicted, distance) = predict(model, spec, t)?;
            Ok(Prediction {
                trial_id: t.trial_id.clone(),
                truth: t.label,
                predicted,
                distance,
                code: encode_class(predicted),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    EvaluationReport::from_predictions(predictions)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementPair {
    pub trial_id: String,
    pub pre: MovementClass,
    pub exec: MovementClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub agreement_rate: f64,
    pub pairs: Vec<AgreementPair>,
}

impl AgreementReport {
    pub fn from_pairs(pairs: Vec<AgreementPair>) -> Self {
        let matching = pairs.iter().filter(|p| p.pre == p.exec).count();
        let agreement_rate = if pairs.is_empty() {
            0.0
        } else {
            matching as f64 / pairs.len() as f64
        };
        AgreementReport {
            agreement_rate,
            pairs,
        }
    }
}

/// Runs two pipelines over the same trials and counts exact output
/// matches (OTHER = OTHER counts). No window constraints are applied.
pub fn agreement_between(
    model_a: &dyn Classifier,
    spec_a: &FeatureSpec,
    model_b: &dyn Classifier,
    spec_b: &FeatureSpec,
    test: &Dataset,
) -> Result<AgreementReport> {
    check_fingerprint(model_a, spec_a)?;
    check_fingerprint(model_b, spec_b)?;
    let pairs = test
        .trials
        .iter()
        .map(|t| {
            Ok(AgreementPair {
                trial_id: t.trial_id.clone(),
                pre: predict(model_a, spec_a, t)?.0,
                exec: predict(model_b, spec_b, t)?.0,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AgreementReport::from_pairs(pairs))
}

/// Agreement between a pre-onset pipeline and an execution-window pipeline.
pub fn two_instance_agreement(
    model_pre: &dyn Classifier,
    model_exec: &dyn Classifier,
    spec_pre: &FeatureSpec,
    spec_exec: &FeatureSpec,
    test: &Dataset,
) -> Result<AgreementReport> {
    if spec_pre.analysis_window.end_s > 0.0 {
        return Err(BciError::InvalidWindow(format!(
            "pre-onset window must end at or before onset, ends at {} s",
            spec_pre.analysis_window.end_s
        )));
    }
    if spec_exec.analysis_window.start_s < 0.0 {
        return Err(BciError::InvalidWindow(format!(
            "execution window must start at or after onset, starts at {} s",
            spec_exec.analysis_window.start_s
        )));
    }
    agreement_between(model_pre, spec_pre, model_exec, spec_exec, test)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum ProbeOutcome {
    Classified { class: MovementClass, distance: f64 },
    Error { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub n_trials: usize,
    pub n_classified: usize,
    pub n_rejected: usize,
    pub errors_raised: usize,
    /// Fraction of classified (non-error) probes mapped to OTHER.
    pub rejection_rate: f64,
    pub outcomes: Vec<(String, ProbeOutcome)>,
}

/// Feeds inputs from no trained class through the pipeline. Structural
/// violations surface as recorded errors; the probe itself never fails.
pub fn robustness_probe(model: &dyn Classifier, spec: &FeatureSpec, trials: &[Trial]) -> RobustnessReport {
    let fingerprint_error = check_fingerprint(model, spec).err().map(|e| e.to_string());
    let outcomes: Vec<(String, ProbeOutcome)> = trials
        .iter()
        .map(|t| {
            let outcome = match &fingerprint_error {
                Some(message) => ProbeOutcome::Error {
                    message: message.clone(),
                },
                None => match predict(model, spec, t) {
                    Ok((class, distance)) => ProbeOutcome::Classified { class, distance },
                    Err(e) => ProbeOutcome::Error {
                        message: e.to_string(),
                    },
                },
            };
            (t.trial_id.clone(), outcome)
        })
        .collect();
    let n_classified = outcomes
        .iter()
        .filter(|(_, o)| matches!(o, ProbeOutcome::Classified { .. }))
        .count();
    let n_rejected = outcomes
        .iter()
        .filter(|(_, o)| {
            matches!(
                o,
                ProbeOutcome::Classified {
                    class: MovementClass::Other,
                    ..
                }
            )
        })
        .count();
    RobustnessReport {
        n_trials: trials.len(),
        n_classified,
        n_rejected,
        errors_raised: trials.len() - n_classified,
        rejection_rate: if n_classified == 0 {
            0.0
        } else {
            n_rejected as f64 / n_classified as f64
        },
        outcomes,
    }
}
