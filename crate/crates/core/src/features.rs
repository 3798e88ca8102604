//! ERP templates, ERD/ERS percent-change curves and the combined per-trial
//! feature vector.
//!
//! A feature vector is laid out as
//! `[erd(ch0, band0), erd(ch0, band1), .., erd(chN, bandM), erp(ch0, block0), .., erp(chN, blockK)]`
//! where `erd` is the mean percent change over the analysis window and
//! `erp` is the block-averaged raw waveform. The whole vector is then
//! z-scored with statistics learned from training data.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{Dataset, Trial};
use crate::error::{BciError, Result};
use crate::preprocess::{
    band_power, extract_absolute, extract_window, reference_power, FrequencyBand, WindowSpec,
};

#[derive(Debug, Clone, PartialEq)]
pub struct ErpWaveform {
    pub values: Vec<Vec<f64>>,
    pub window: WindowSpec,
    pub n_trials_averaged: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErdErsCurve {
    /// `percent[channel][frame]`, 100 x (A - R) / R.
    pub percent: Vec<Vec<f64>>,
    pub band: FrequencyBand,
    pub frame_hop_s: f64,
}

impl ErdErsCurve {
    pub fn channel_means(&self) -> Vec<f64> {
        self.percent
            .iter()
            .map(|row| row.iter().sum::<f64>() / row.len() as f64)
            .collect()
    }
}

/// Interval measured from the first sample of the trial, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AbsoluteWindow {
    pub start_s: f64,
    pub end_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureSpec {
    pub sampling_rate_hz: f64,
    pub bands: Vec<FrequencyBand>,
    pub analysis_window: WindowSpec,
    pub reference_window: AbsoluteWindow,
    pub erp_downsample_factor: usize,
    pub frame_s: f64,
    pub hop_s: f64,
    pub normalization: Option<Normalization>,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        FeatureSpec {
            sampling_rate_hz: 600.0,
            bands: vec![FrequencyBand::MU, FrequencyBand::BETA, FrequencyBand::GAMMA],
            analysis_window: WindowSpec::PRE_ONSET,
            reference_window: AbsoluteWindow {
                start_s: 0.0,
                end_s: 1.0,
            },
            erp_downsample_factor: 90,
            frame_s: 0.25,
            hop_s: 0.125,
            normalization: None,
        }
    }
}

impl FeatureSpec {
    /// Same spec over a different analysis window, without normalization.
    pub fn with_window(&self, window: WindowSpec) -> FeatureSpec {
        FeatureSpec {
            analysis_window: window,
            normalization: None,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sampling_rate_hz > 0.0 && self.sampling_rate_hz.is_finite()) {
            return Err(BciError::InvalidConfig(format!(
                "sampling rate {} must be positive",
                self.sampling_rate_hz
            )));
        }
        if self.bands.is_empty() {
            return Err(BciError::InvalidConfig("feature spec has no bands".into()));
        }
        for band in &self.bands {
            band.validate(self.sampling_rate_hz)?;
        }
        self.analysis_window.validate()?;
        WindowSpec::new(self.reference_window.start_s, self.reference_window.end_s)?;
        if self.reference_window.start_s < 0.0 {
            return Err(BciError::InvalidWindow("reference window starts before trial".into()));
        }
        if self.erp_downsample_factor == 0 {
            return Err(BciError::InvalidConfig("erp_downsample_factor must be >= 1".into()));
        }
        if !(self.frame_s > 0.0 && self.hop_s > 0.0) {
            return Err(BciError::InvalidConfig("frame and hop must be positive".into()));
        }
        if let Some(norm) = &self.normalization {
            if norm.mean.len() != norm.std.len() || norm.std.iter().any(|&s| !(s > 0.0)) {
                return Err(BciError::InvalidConfig(
                    "normalization needs equal-length mean/std with std > 0".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn erp_blocks(&self) -> usize {
        self.analysis_window
            .n_samples(self.sampling_rate_hz)
            .div_ceil(self.erp_downsample_factor)
    }

    pub fn feature_len(&self, n_channels: usize) -> usize {
        n_channels * (self.bands.len() + self.erp_blocks())
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("feature spec serializes");
        let digest = Sha256::digest(&json);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub fingerprint: String,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Self {
        FeatureVector {
            values,
            fingerprint: String::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Pointwise mean of the onset-locked windows of `trials`.
pub fn compute_erp_template(
    trials: &[Trial],
    window: WindowSpec,
    sampling_rate_hz: f64,
) -> Result<ErpWaveform> {
    let first = trials
        .first()
        .ok_or_else(|| BciError::InvalidDataset("ERP template of zero trials".into()))?;
    let mut sum = extract_window(first, window, sampling_rate_hz)?.samples;
    for trial in &trials[1..] {
        if trial.n_channels() != sum.len() {
            return Err(BciError::trial(
                &trial.trial_id,
                format!("{} channels, template has {}", trial.n_channels(), sum.len()),
            ));
        }
        let epoch = extract_window(trial, window, sampling_rate_hz)?;
        for (acc, ch) in sum.iter_mut().zip(&epoch.samples) {
            acc.iter_mut().zip(ch).for_each(|(a, v)| *a += v);
        }
    }
    let n = trials.len() as f64;
    sum.iter_mut().flatten().for_each(|v| *v /= n);
    Ok(ErpWaveform {
        values: sum,
        window,
        n_trials_averaged: trials.len(),
    })
}

pub fn compute_erd_ers(trial: &Trial, band: FrequencyBand, spec: &FeatureSpec) -> Result<ErdErsCurve> {
    let rate = spec.sampling_rate_hz;
    let reference_epoch = extract_absolute(
        trial,
        spec.reference_window.start_s,
        spec.reference_window.end_s,
        rate,
    )?;
    let reference = band_power(&reference_epoch, band, spec.frame_s, spec.hop_s)?;
    let reference = reference_power(&reference, 0..reference.n_frames())?;
    if let Some(channel) = reference.iter().position(|&r| !(r > 0.0)) {
        return Err(BciError::ZeroReferencePower { channel });
    }
    let analysis = extract_window(trial, spec.analysis_window, rate)?;
    let power = band_power(&analysis, band, spec.frame_s, spec.hop_s)?;
    let percent = power
        .values
        .iter()
        .zip(&reference)
        .map(|(row, r)| row.iter().map(|a| 100.0 * (a - r) / r).collect())
        .collect();
    Ok(ErdErsCurve {
        percent,
        band,
        frame_hop_s: power.frame_hop_s,
    })
}

fn raw_features(trial: &Trial, spec: &FeatureSpec) -> Result<Vec<f64>> {
    trial.validate_signal()?;
    let n_channels = trial.n_channels();
    let mut erd = vec![0.0; n_channels * spec.bands.len()];
    for (b, band) in spec.bands.iter().enumerate() {
        let curve = compute_erd_ers(trial, *band, spec)?;
        for (ch, mean) in curve.channel_means().into_iter().enumerate() {
            erd[ch * spec.bands.len() + b] = mean;
        }
    }
    let epoch = extract_window(trial, spec.analysis_window, spec.sampling_rate_hz)?;
    let mut values = erd;
    values.reserve(n_channels * spec.erp_blocks());
    for ch in &epoch.samples {
        values.extend(
            ch.chunks(spec.erp_downsample_factor)
                .map(|block| block.iter().sum::<f64>() / block.len() as f64),
        );
    }
    debug_assert_eq!(values.len(), spec.feature_len(n_channels));
    Ok(values)
}

pub fn extract_features(trial: &Trial, spec: &FeatureSpec) -> Result<FeatureVector> {
    let mut values = raw_features(trial, spec)?;
    if let Some(norm) = &spec.normalization {
        if norm.mean.len() != values.len() {
            return Err(BciError::LengthMismatch {
                expected: norm.mean.len(),
                actual: values.len(),
            });
        }
        for ((v, m), s) in values.iter_mut().zip(&norm.mean).zip(&norm.std) {
            *v = (*v - m) / s;
        }
    }
    Ok(FeatureVector {
        values,
        fingerprint: spec.fingerprint(),
    })
}

pub fn extract_all(dataset: &Dataset, spec: &FeatureSpec) -> Result<Vec<FeatureVector>> {
    dataset
        .trials
        .iter()
        .map(|t| extract_features(t, spec))
        .collect()
}

/// Learns per-feature z-score statistics (population standard deviation)
/// from `train`. Features without spread get std 1.
pub fn fit_feature_spec(train: &Dataset, base: &FeatureSpec) -> Result<FeatureSpec> {
    if train.trials.is_empty() {
        return Err(BciError::InvalidDataset("cannot fit features on an empty training set".into()));
    }
    let mut spec = FeatureSpec {
        sampling_rate_hz: train.sampling_rate_hz,
        normalization: None,
        ..base.clone()
    };
    spec.validate()?;
    let rows = train
        .trials
        .iter()
        .map(|t| raw_features(t, &spec))
        .collect::<Result<Vec<_>>>()?;
    let n = rows.len() as f64;
    let dim = rows[0].len();
    let mut mean = vec![0.0; dim];
    for row in &rows {
        mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for row in &rows {
        for ((acc, v), m) in var.iter_mut().zip(row).zip(&mean) {
            *acc += (v - m) * (v - m);
        }
    }
    let std = var
        .iter()
        .zip(&mean)
        .map(|(v, m)| {
            let s = (v / n).sqrt();
            if s <= 1e-12 * m.abs().max(1.0) {
                1.0
            } else {
                s
            }
        })
        .collect();
    spec.normalization = Some(Normalization { mean, std });
    Ok(spec)
}
