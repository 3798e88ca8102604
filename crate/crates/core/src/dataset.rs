//! Labeled ECoG trial collections: on-disk format, synthesis, half split and
//! bootstrap resampling.
//!
//! A dataset directory holds a `manifest.json` plus one headerless CSV per
//! trial (one row per time sample, one column per channel, microvolts).

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{BciError, Result};
use crate::preprocess::{band_limit, FrequencyBand};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Arm movement classes. `Other` is the rejection output and never a
/// training label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MovementClass {
    #[serde(rename = "RTR")]
    Rtr,
    #[serde(rename = "RTL")]
    Rtl,
    #[serde(rename = "WF")]
    Wf,
    #[serde(rename = "OTHER")]
    Other,
}

impl MovementClass {
    /// The three trainable movements, in canonical order.
    pub const MOVEMENTS: [MovementClass; 3] =
        [MovementClass::Rtr, MovementClass::Rtl, MovementClass::Wf];

    pub const ALL: [MovementClass; 4] = [
        MovementClass::Rtr,
        MovementClass::Rtl,
        MovementClass::Wf,
        MovementClass::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MovementClass::Rtr => "RTR",
            MovementClass::Rtl => "RTL",
            MovementClass::Wf => "WF",
            MovementClass::Other => "OTHER",
        }
    }

    /// Position in [`MovementClass::ALL`].
    pub fn index(self) -> usize {
        match self {
            MovementClass::Rtr => 0,
            MovementClass::Rtl => 1,
            MovementClass::Wf => 2,
            MovementClass::Other => 3,
        }
    }
}

impl fmt::Display for MovementClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MovementClass {
    type Err = BciError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "RTR" => Ok(MovementClass::Rtr),
            "RTL" => Ok(MovementClass::Rtl),
            "WF" => Ok(MovementClass::Wf),
            "OTHER" => Ok(MovementClass::Other),
            other => Err(BciError::InvalidDataset(format!(
                "unknown movement class {other:?}"
            ))),
        }
    }
}

/// One labeled multichannel recording. `samples[channel][time]` in µV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub trial_id: String,
    pub label: MovementClass,
    pub onset_index: usize,
    pub samples: Vec<Vec<f64>>,
}

impl Trial {
    pub fn n_channels(&self) -> usize {
        self.samples.len()
    }

    pub fn n_samples(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }

    /// Checks shape, finiteness and onset placement. The label is not
    /// checked here so that unlabeled probe trials can reuse it.
    pub fn validate_signal(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(BciError::trial(&self.trial_id, "no channels"));
        }
        let len = self.n_samples();
        for (ch, row) in self.samples.iter().enumerate() {
            if row.len() != len {
                return Err(BciError::trial(
                    &self.trial_id,
                    format!("channel {ch} has {} samples, expected {len}", row.len()),
                ));
            }
            if let Some(t) = row.iter().position(|v| !v.is_finite()) {
                return Err(BciError::trial(
                    &self.trial_id,
                    format!("non-finite sample at channel {ch}, time {t}"),
                ));
            }
        }
        if self.onset_index == 0 || self.onset_index >= len {
            return Err(BciError::trial(
                &self.trial_id,
                format!("onset outside trial: {} not in (0, {len})", self.onset_index),
            ));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.label == MovementClass::Other {
            return Err(BciError::trial(&self.trial_id, "OTHER is not a trial label"));
        }
        self.validate_signal()
    }

    /// Mean over all channels and samples.
    pub fn mean_voltage(&self) -> f64 {
        let n = (self.n_channels() * self.n_samples()) as f64;
        self.samples.iter().flatten().sum::<f64>() / n
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub sampling_rate_hz: f64,
    pub channel_names: Vec<String>,
    pub trials: Vec<Trial>,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        if !(self.sampling_rate_hz > 0.0 && self.sampling_rate_hz.is_finite()) {
            return Err(BciError::InvalidDataset(format!(
                "sampling rate {} must be positive",
                self.sampling_rate_hz
            )));
        }
        if self.channel_names.is_empty() {
            return Err(BciError::InvalidDataset("no channels".into()));
        }
        let mut ids = HashSet::new();
        let mut length = None;
        for trial in &self.trials {
            if !ids.insert(trial.trial_id.as_str()) {
                return Err(BciError::trial(&trial.trial_id, "duplicate trial_id"));
            }
            trial.validate()?;
            if trial.n_channels() != self.channel_names.len() {
                return Err(BciError::trial(
                    &trial.trial_id,
                    format!(
                        "{} channels, dataset has {}",
                        trial.n_channels(),
                        self.channel_names.len()
                    ),
                ));
            }
            match length {
                None => length = Some(trial.n_samples()),
                Some(len) if len != trial.n_samples() => {
                    return Err(BciError::trial(
                        &trial.trial_id,
                        format!("length {} differs from {len}", trial.n_samples()),
                    ));
                }
                Some(_) => {}
            }
        }
        Ok(())
    }

    pub fn n_channels(&self) -> usize {
        self.channel_names.len()
    }

    pub fn class_counts(&self) -> BTreeMap<MovementClass, usize> {
        let mut counts = BTreeMap::new();
        for t in &self.trials {
            *counts.entry(t.label).or_insert(0) += 1;
        }
        counts
    }

    /// Same header, different trials.
    pub fn with_trials(&self, trials: Vec<Trial>) -> Dataset {
        Dataset {
            sampling_rate_hz: self.sampling_rate_hz,
            channel_names: self.channel_names.clone(),
            trials,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    sampling_rate_hz: f64,
    channel_names: Vec<String>,
    trials: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    trial_id: String,
    label: MovementClass,
    onset_index: usize,
    file: String,
}

pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    dataset.validate()?;
    fs::create_dir_all(dir).map_err(|e| BciError::io(dir, e))?;
    let mut entries = Vec::with_capacity(dataset.trials.len());
    for trial in &dataset.trials {
        let file = format!("{}.csv", trial.trial_id);
        let path = dir.join(&file);
        let mut writer = csv::WriterBuilder::new()
            .has_headers(false)
            .from_path(&path)
            .map_err(|source| BciError::Csv {
                path: path.clone(),
                source,
            })?;
        let mut row = Vec::with_capacity(trial.n_channels());
        for t in 0..trial.n_samples() {
            row.clear();
            // `Display` for f64 is the shortest representation that parses back exactly.
            row.extend(trial.samples.iter().map(|ch| ch[t].to_string()));
            writer.write_record(&row).map_err(|source| BciError::Csv {
                path: path.clone(),
                source,
            })?;
        }
        writer.flush().map_err(|e| BciError::io(&path, e))?;
        entries.push(ManifestEntry {
            trial_id: trial.trial_id.clone(),
            label: trial.label,
            onset_index: trial.onset_index,
            file,
        });
    }
    let manifest = Manifest {
        sampling_rate_hz: dataset.sampling_rate_hz,
        channel_names: dataset.channel_names.clone(),
        trials: entries,
    };
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).map_err(|source| BciError::Json {
        context: path.display().to_string(),
        source,
    })?;
    fs::write(&path, json).map_err(|e| BciError::io(&path, e))
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| BciError::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|source| BciError::Json {
        context: manifest_path.display().to_string(),
        source,
    })?;
    let n_channels = manifest.channel_names.len();
    let mut trials = Vec::with_capacity(manifest.trials.len());
    for entry in manifest.trials {
        let path = dir.join(&entry.file);
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .from_path(&path)
            .map_err(|source| BciError::Csv {
                path: path.clone(),
                source,
            })?;
        let mut samples = vec![Vec::new(); n_channels];
        for (row, record) in reader.records().enumerate() {
            let record = record.map_err(|source| BciError::Csv {
                path: path.clone(),
                source,
            })?;
            if record.len() != n_channels {
                return Err(BciError::trial(
                    &entry.trial_id,
                    format!("row {row} has {} columns, expected {n_channels}", record.len()),
                ));
            }
            for (column, cell) in record.iter().enumerate() {
                let value: f64 = cell.trim().parse().map_err(|_| {
                    BciError::trial(
                        &entry.trial_id,
                        format!("unparseable cell {cell:?} at row {row}, column {column}"),
                    )
                })?;
                if !value.is_finite() {
                    return Err(BciError::NonFiniteSample { file: path, row, column });
                }
                samples[column].push(value);
            }
        }
        trials.push(Trial {
            trial_id: entry.trial_id,
            label: entry.label,
            onset_index: entry.onset_index,
            samples,
        });
    }
    let dataset = Dataset {
        sampling_rate_hz: manifest.sampling_rate_hz,
        channel_names: manifest.channel_names,
        trials,
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Parameters of the synthetic ECoG generator.
///
/// Each trial is 1/f background noise plus, per modulated band, an ongoing
/// rhythm of fixed amplitude at a random in-band frequency. Inside the modulation interval
/// `[onset - 1.5 s, onset + post_onset_s)` the content of every
/// `modulated_bands` band is scaled by `1 + snr * erd_depth[class][ch]`
/// (clamped at 0). A slow ERP ramp of peak `snr * erp_amplitude_uv *
/// erp_weights[class][ch]` rises linearly over the second before onset and
/// decays linearly to zero over `post_onset_s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub counts: BTreeMap<MovementClass, usize>,
    pub channels: usize,
    pub sampling_rate_hz: f64,
    pub trial_duration_s: f64,
    pub onset_time_s: f64,
    pub snr: f64,
    /// Per class, one fractional band-amplitude change per channel.
    pub erd_depth: BTreeMap<MovementClass, Vec<f64>>,
    pub erp_amplitude_uv: f64,
    /// Per class, signed per-channel ERP gain.
    pub erp_weights: BTreeMap<MovementClass, Vec<f64>>,
    pub modulated_bands: Vec<FrequencyBand>,
    pub noise_exponent: f64,
    pub noise_rms_uv: f64,
    /// Amplitude of the ongoing rhythm added in each modulated band.
    pub rhythm_amplitude_uv: f64,
    /// How long class modulation persists after onset.
    pub post_onset_s: f64,
    pub seed: u64,
}

pub const PRE_ONSET_MODULATION_S: f64 = 1.5;
pub const ERP_RAMP_S: f64 = 1.0;

impl Default for SynthConfig {
    fn default() -> Self {
        let channels = 8;
        let counts = BTreeMap::from([
            (MovementClass::Rtr, 25),
            (MovementClass::Rtl, 23),
            (MovementClass::Wf, 27),
        ]);
        let mut erd_depth = BTreeMap::new();
        let mut erp_weights = BTreeMap::new();
        // Each movement modulates its own pair of channels; 6 and 7 carry noise only.
        for (k, class) in MovementClass::MOVEMENTS.into_iter().enumerate() {
            let mut depth = vec![0.0; channels];
            let mut weights = vec![0.0; channels];
            depth[2 * k] = -0.3;
            depth[2 * k + 1] = -0.3;
            let polarity = if class == MovementClass::Rtl { -1.0 } else { 1.0 };
            weights[2 * k] = polarity;
            weights[2 * k + 1] = polarity;
            erd_depth.insert(class, depth);
            erp_weights.insert(class, weights);
        }
        SynthConfig {
            counts,
            channels,
            sampling_rate_hz: 600.0,
            trial_duration_s: 6.0,
            onset_time_s: 3.0,
            snr: 3.0,
            erd_depth,
            erp_amplitude_uv: 15.0,
            erp_weights,
            modulated_bands: vec![FrequencyBand::MU, FrequencyBand::BETA],
            noise_exponent: 1.0,
            noise_rms_uv: 10.0,
            rhythm_amplitude_uv: 20.0,
            post_onset_s: 1.5,
            seed: 42,
        }
    }
}

impl SynthConfig {
    /// A config whose classes are indistinguishable: no ERD, no ERP.
    pub fn chance_level(&self) -> SynthConfig {
        SynthConfig {
            snr: 0.0,
            ..self.clone()
        }
    }

    pub fn n_samples(&self) -> usize {
        (self.trial_duration_s * self.sampling_rate_hz).round() as usize
    }

    pub fn onset_index(&self) -> usize {
        (self.onset_time_s * self.sampling_rate_hz).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(BciError::InvalidConfig(msg));
        if self.channels == 0 {
            return bad("channels must be at least 1".into());
        }
        if !(self.sampling_rate_hz > 0.0 && self.sampling_rate_hz.is_finite()) {
            return bad(format!("sampling rate {} must be positive", self.sampling_rate_hz));
        }
        if !(self.onset_time_s > 0.0 && self.onset_time_s < self.trial_duration_s) {
            return bad(format!(
                "onset {} s must lie strictly inside trial duration {} s",
                self.onset_time_s, self.trial_duration_s
            ));
        }
        let onset = self.onset_index();
        if onset == 0 || onset >= self.n_samples() {
            return bad("onset rounds to a trial boundary".into());
        }
        if !(self.snr >= 0.0 && self.snr.is_finite()) {
            return bad(format!("snr {} must be finite and >= 0", self.snr));
        }
        if self.counts.contains_key(&MovementClass::Other) {
            return bad("OTHER cannot be synthesized as a class".into());
        }
        for (name, table) in [("erd_depth", &self.erd_depth), ("erp_weights", &self.erp_weights)] {
            for (class, row) in table {
                if row.len() != self.channels {
                    return bad(format!(
                        "{name} for {class} has {} entries, expected {}",
                        row.len(),
                        self.channels
                    ));
                }
                if row.iter().any(|v| !v.is_finite()) {
                    return bad(format!("{name} for {class} contains non-finite values"));
                }
            }
        }
        if let Some((class, _)) = self
            .erd_depth
            .iter()
            .find(|(_, row)| row.iter().any(|&d| d < -1.0))
        {
            return bad(format!("erd_depth for {class} below -1"));
        }
        if !self.erp_amplitude_uv.is_finite()
            || !self.noise_exponent.is_finite()
            || !(self.noise_rms_uv >= 0.0 && self.noise_rms_uv.is_finite())
            || !(self.rhythm_amplitude_uv >= 0.0 && self.rhythm_amplitude_uv.is_finite())
        {
            return bad("erp amplitude, noise exponent and noise rms must be finite".into());
        }
        if !(self.post_onset_s >= 0.0 && self.post_onset_s.is_finite()) {
            return bad("post_onset_s must be >= 0".into());
        }
        let nyquist = self.sampling_rate_hz / 2.0;
        for band in &self.modulated_bands {
            band.validate(self.sampling_rate_hz)
                .map_err(|e| BciError::InvalidConfig(format!("modulated band: {e} (nyquist {nyquist})")))?;
        }
        Ok(())
    }
}

pub fn channel_names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("ch{i:02}")).collect()
}

/// Generates a labeled dataset. Trials are ordered by class (RTR, RTL, WF)
/// and identified as `<CLASS>-<index>`.
pub fn synthesize_dataset(config: &SynthConfig) -> Result<Dataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut planner = FftPlanner::new();
    let mut trials = Vec::new();
    for class in MovementClass::MOVEMENTS {
        let count = config.counts.get(&class).copied().unwrap_or(0);
        for i in 0..count {
            let samples = synthesize_signal(config, Some(class), &mut rng, &mut planner);
            trials.push(Trial {
                trial_id: format!("{class}-{i:03}"),
                label: class,
                onset_index: config.onset_index(),
                samples,
            });
        }
    }
    let dataset = Dataset {
        sampling_rate_hz: config.sampling_rate_hz,
        channel_names: channel_names(config.channels),
        trials,
    };
    debug_assert!(dataset.validate().is_ok());
    Ok(dataset)
}

/// Background-only trials (no class modulation) at the configured noise
/// amplitude. Labeled `OTHER`; intended as invalid-input probes.
pub fn synthesize_noise_trials(config: &SynthConfig, n: usize, seed: u64) -> Result<Vec<Trial>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut planner = FftPlanner::new();
    Ok((0..n)
        .map(|i| Trial {
            trial_id: format!("noise-{i:03}"),
            label: MovementClass::Other,
            onset_index: config.onset_index(),
            samples: synthesize_signal(config, None, &mut rng, &mut planner),
        })
        .collect())
}

fn synthesize_signal(
    config: &SynthConfig,
    class: Option<MovementClass>,
    rng: &mut ChaCha8Rng,
    planner: &mut FftPlanner<f64>,
) -> Vec<Vec<f64>> {
    let n = config.n_samples();
    let rate = config.sampling_rate_hz;
    let onset = config.onset_index();
    let mod_start = onset.saturating_sub((PRE_ONSET_MODULATION_S * rate).round() as usize);
    let mod_end = (onset + (config.post_onset_s * rate).round() as usize).min(n);
    let ramp_len = (ERP_RAMP_S * rate).round() as usize;
    let decay_len = (config.post_onset_s * rate).round() as usize;

    (0..config.channels)
        .map(|ch| {
            let mut signal = pink_noise(n, config.noise_exponent, config.noise_rms_uv, rng, planner);
            for band in &config.modulated_bands {
                add_rhythm(&mut signal, *band, config.rhythm_amplitude_uv, rate, rng);
            }
            let Some(class) = class else {
                return signal;
            };
            let depth = config
                .erd_depth
                .get(&class)
                .map_or(0.0, |row| row[ch]);
            let gain = (1.0 + config.snr * depth).max(0.0) - 1.0;
            if gain != 0.0 {
                let mut band_content = vec![0.0; n];
                for band in &config.modulated_bands {
                    let part = band_limit(&signal, rate, *band, planner)
                        .expect("modulated bands validated against sampling rate");
                    band_content.iter_mut().zip(part).for_each(|(acc, p)| *acc += p);
                }
                for t in mod_start..mod_end {
                    signal[t] += gain * band_content[t];
                }
            }
            let weight = config.erp_weights.get(&class).map_or(0.0, |row| row[ch]);
            let peak = config.snr * config.erp_amplitude_uv * weight;
            if peak != 0.0 {
                for (t, value) in signal.iter_mut().enumerate() {
                    *value += peak * erp_shape(t, onset, ramp_len, decay_len);
                }
            }
            signal
        })
        .collect()
}

/// Sinusoid at a random frequency in the central half of `band`, random phase.
fn add_rhythm(signal: &mut [f64], band: FrequencyBand, amplitude: f64, rate: f64, rng: &mut ChaCha8Rng) {
    let width = band.high_hz - band.low_hz;
    let freq = rng.gen_range(band.low_hz + width / 4.0..=band.high_hz - width / 4.0);
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    if amplitude == 0.0 {
        return;
    }
    let omega = std::f64::consts::TAU * freq / rate;
    for (t, v) in signal.iter_mut().enumerate() {
        *v += amplitude * (omega * t as f64 + phase).sin();
    }
}

/// Unit-peak ramp: rises over `ramp_len` samples to onset, then decays
/// over `decay_len` samples.
fn erp_shape(t: usize, onset: usize, ramp_len: usize, decay_len: usize) -> f64 {
    if t < onset {
        let start = onset.saturating_sub(ramp_len);
        if t < start || ramp_len == 0 {
            0.0
        } else {
            (t - start) as f64 / ramp_len as f64
        }
    } else if decay_len == 0 || t - onset >= decay_len {
        0.0
    } else {
        1.0 - (t - onset) as f64 / decay_len as f64
    }
}

/// Gaussian noise with a `1/f^exponent` power spectrum, scaled to the given
/// RMS. The DC bin is removed.
fn pink_noise(
    n: usize,
    exponent: f64,
    rms: f64,
    rng: &mut ChaCha8Rng,
    planner: &mut FftPlanner<f64>,
) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = (0..n)
        .map(|_| Complex::new(rng.sample::<f64, _>(StandardNormal), 0.0))
        .collect();
    planner.plan_fft_forward(n).process(&mut buf);
    buf[0] = Complex::new(0.0, 0.0);
    for k in 1..n {
        let freq_index = k.min(n - k) as f64;
        buf[k] *= freq_index.powf(-exponent / 2.0);
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let mut out: Vec<f64> = buf.iter().map(|c| c.re).collect();
    let current = (out.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    if current > 0.0 {
        let scale = rms / current;
        out.iter_mut().for_each(|v| *v *= scale);
    }
    out
}

/// Stratified half split. Odd class counts put the extra trial in train.
/// Both halves keep the original trial order.
pub fn split_half(dataset: &Dataset, seed: u64) -> Result<(Dataset, Dataset)> {
    let mut by_class: BTreeMap<MovementClass, Vec<usize>> = BTreeMap::new();
    for (i, t) in dataset.trials.iter().enumerate() {
        by_class.entry(t.label).or_default().push(i);
    }
    if let Some((class, idx)) = by_class.iter().find(|(_, idx)| idx.len() < 2) {
        return Err(BciError::TooFewTrials {
            class: class.to_string(),
            count: idx.len(),
            needed: 2,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_train = vec![false; dataset.trials.len()];
    for idx in by_class.values_mut() {
        idx.shuffle(&mut rng);
        let n_train = idx.len().div_ceil(2);
        for &i in &idx[..n_train] {
            in_train[i] = true;
        }
    }
    let (train, test): (Vec<_>, Vec<_>) = dataset
        .trials
        .iter()
        .zip(&in_train)
        .partition(|(_, &train)| train);
    let collect = |part: Vec<(&Trial, &bool)>| part.into_iter().map(|(t, _)| t.clone()).collect();
    Ok((dataset.with_trials(collect(train)), dataset.with_trials(collect(test))))
}

/// Draws `n` whole trials uniformly with replacement. Each copy gets the id
/// `boot<k>:<source id>`.
pub fn bootstrap_resample(trials: &[Trial], n: usize, seed: u64) -> Result<Vec<Trial>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    if trials.is_empty() {
        return Err(BciError::InvalidDataset(
            "cannot bootstrap from an empty trial list".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|k| {
            let source = &trials[rng.gen_range(0..trials.len())];
            Trial {
                trial_id: format!("boot{k}:{}", source.trial_id),
                ..source.clone()
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> SynthConfig {
        SynthConfig {
            counts: BTreeMap::from([
                (MovementClass::Rtr, 2),
                (MovementClass::Rtl, 1),
                (MovementClass::Wf, 0),
            ]),
            channels: 2,
            sampling_rate_hz: 100.0,
            trial_duration_s: 4.0,
            onset_time_s: 2.0,
            erd_depth: BTreeMap::from([(MovementClass::Rtr, vec![-0.3, 0.0])]),
            erp_weights: BTreeMap::from([(MovementClass::Rtl, vec![0.0, 1.0])]),
            ..SynthConfig::default()
        }
    }

    #[test]
    fn default_counts_give_75_trials() {
        let ds = synthesize_dataset(&SynthConfig::default()).unwrap();
        assert_eq!(ds.trials.len(), 75);
        let counts = ds.class_counts();
        assert_eq!(counts[&MovementClass::Rtr], 25);
        assert_eq!(counts[&MovementClass::Rtl], 23);
        assert_eq!(counts[&MovementClass::Wf], 27);
        ds.validate().unwrap();
    }

    #[test]
    fn synthesis_is_deterministic() {
        let a = synthesize_dataset(&small_config()).unwrap();
        let b = synthesize_dataset(&small_config()).unwrap();
        assert_eq!(a, b);
        let other_seed = synthesize_dataset(&SynthConfig {
            seed: 7,
            ..small_config()
        })
        .unwrap();
        assert_ne!(a.trials[0].samples, other_seed.trials[0].samples);
    }

    #[test]
    fn noise_rms_matches_config() {
        let cfg = SynthConfig {
            snr: 0.0,
            rhythm_amplitude_uv: 0.0,
            ..small_config()
        };
        let ds = synthesize_dataset(&cfg).unwrap();
        for ch in &ds.trials[0].samples {
            let rms = (ch.iter().map(|v| v * v).sum::<f64>() / ch.len() as f64).sqrt();
            assert!((rms - cfg.noise_rms_uv).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let mut cfg = small_config();
        cfg.onset_time_s = 4.0;
        assert!(synthesize_dataset(&cfg).is_err());
        let mut cfg = small_config();
        cfg.erd_depth.insert(MovementClass::Rtr, vec![-1.5, 0.0]);
        assert!(synthesize_dataset(&cfg).is_err());
        let mut cfg = small_config();
        cfg.erd_depth.insert(MovementClass::Rtr, vec![0.0]);
        assert!(synthesize_dataset(&cfg).is_err());
        let mut cfg = small_config();
        cfg.counts.insert(MovementClass::Other, 3);
        assert!(synthesize_dataset(&cfg).is_err());
        let mut cfg = small_config();
        cfg.snr = -1.0;
        assert!(synthesize_dataset(&cfg).is_err());
    }

    #[test]
    fn erp_shape_ramps_and_decays() {
        assert_eq!(erp_shape(0, 200, 100, 50), 0.0);
        assert_eq!(erp_shape(100, 200, 100, 50), 0.0);
        assert_eq!(erp_shape(150, 200, 100, 50), 0.5);
        assert_eq!(erp_shape(200, 200, 100, 50), 1.0);
        assert_eq!(erp_shape(225, 200, 100, 50), 0.5);
        assert_eq!(erp_shape(250, 200, 100, 50), 0.0);
        assert_eq!(erp_shape(200, 200, 100, 0), 0.0);
    }

    #[test]
    fn split_odd_count_favors_train() {
        let ds = synthesize_dataset(&SynthConfig::default()).unwrap();
        let (train, test) = split_half(&ds, 1).unwrap();
        assert_eq!(train.class_counts()[&MovementClass::Rtr], 13);
        assert_eq!(test.class_counts()[&MovementClass::Rtr], 12);
        assert_eq!(train.class_counts()[&MovementClass::Rtl], 12);
        assert_eq!(test.class_counts()[&MovementClass::Rtl], 11);
        assert_eq!(train.class_counts()[&MovementClass::Wf], 14);
        assert_eq!(test.class_counts()[&MovementClass::Wf], 13);
    }

    #[test]
    fn split_rejects_singleton_class() {
        let ds = synthesize_dataset(&small_config()).unwrap();
        assert!(matches!(
            split_half(&ds, 0),
            Err(BciError::TooFewTrials { count: 1, .. })
        ));
    }

    #[test]
    fn bootstrap_edge_cases() {
        assert!(bootstrap_resample(&[], 0, 1).unwrap().is_empty());
        assert!(bootstrap_resample(&[], 3, 1).is_err());
        let ds = synthesize_dataset(&small_config()).unwrap();
        let copies = bootstrap_resample(&ds.trials[..1], 5, 9).unwrap();
        assert_eq!(copies.len(), 5);
        let ids: HashSet<_> = copies.iter().map(|t| t.trial_id.clone()).collect();
        assert_eq!(ids.len(), 5);
        for c in &copies {
            assert_eq!(c.samples, ds.trials[0].samples);
            assert!(c.trial_id.ends_with(&ds.trials[0].trial_id));
        }
    }

    #[test]
    fn trial_onset_bounds() {
        let mut t = Trial {
            trial_id: "t".into(),
            label: MovementClass::Rtr,
            onset_index: 3,
            samples: vec![vec![0.0; 3]],
        };
        let err = t.validate().unwrap_err().to_string();
        assert!(err.contains("onset outside trial"), "{err}");
        t.onset_index = 0;
        assert!(t.validate().is_err());
        t.onset_index = 1;
        t.validate().unwrap();
        t.label = MovementClass::Other;
        assert!(t.validate().is_err());
        assert!(t.validate_signal().is_ok());
    }
}
