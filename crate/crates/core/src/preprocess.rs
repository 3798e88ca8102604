//! Onset-locked windowing and per-band power over time.
//!
//! Band limiting is done by discrete-spectrum masking: the frame is
//! transformed, every bin outside `[low_hz, high_hz]` is zeroed, and the
//! inverse transform is squared and averaged. Frames are rectangular and
//! frames that would overrun the epoch are dropped.

use std::ops::Range;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::dataset::Trial;
use crate::error::{BciError, Result};

/// Seconds relative to movement onset; negative values lie before onset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub start_s: f64,
    pub end_s: f64,
}

impl WindowSpec {
    pub const PRE_ONSET: WindowSpec = WindowSpec {
        start_s: -1.5,
        end_s: 0.0,
    };
    pub const EXECUTION: WindowSpec = WindowSpec {
        start_s: 0.0,
        end_s: 1.5,
    };

    pub fn new(start_s: f64, end_s: f64) -> Result<Self> {
        let w = WindowSpec { start_s, end_s };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.start_s.is_finite() && self.end_s.is_finite() && self.start_s < self.end_s) {
            return Err(BciError::InvalidWindow(format!(
                "[{}, {}) s must be finite with start < end",
                self.start_s, self.end_s
            )));
        }
        Ok(())
    }

    /// Sample offsets from onset: `[round(start*rate), round(end*rate))`.
    pub fn offsets(&self, rate: f64) -> (i64, i64) {
        (
            (self.start_s * rate).round() as i64,
            (self.end_s * rate).round() as i64,
        )
    }

    pub fn n_samples(&self, rate: f64) -> usize {
        let (a, b) = self.offsets(rate);
        (b - a).max(0) as usize
    }
}

/// A window of one trial. `samples[channel][time]` in µV.
#[derive(Debug, Clone, PartialEq)]
pub struct Epoch {
    pub samples: Vec<Vec<f64>>,
    pub trial_id: String,
    pub window: WindowSpec,
    pub sampling_rate_hz: f64,
}

impl Epoch {
    pub fn n_channels(&self) -> usize {
        self.samples.len()
    }

    pub fn len(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.sampling_rate_hz
    }

    /// Re-windows this epoch; `window` is still relative to onset and must
    /// lie inside the current window.
    pub fn sub_window(&self, window: WindowSpec) -> Result<Epoch> {
        window.validate()?;
        let (own_start, _) = self.window.offsets(self.sampling_rate_hz);
        let (start, end) = window.offsets(self.sampling_rate_hz);
        let from = start - own_start;
        let to = end - own_start;
        check_range(&self.trial_id, from, to, self.len())?;
        Ok(Epoch {
            samples: self
                .samples
                .iter()
                .map(|ch| ch[from as usize..to as usize].to_vec())
                .collect(),
            trial_id: self.trial_id.clone(),
            window,
            sampling_rate_hz: self.sampling_rate_hz,
        })
    }
}

fn check_range(trial_id: &str, from: i64, to: i64, len: usize) -> Result<()> {
    if from < 0 || from > len as i64 {
        return Err(BciError::WindowOutOfBounds {
            trial_id: trial_id.to_string(),
            bound: "start",
            index: from,
            len,
        });
    }
    if to > len as i64 || to < 0 {
        return Err(BciError::WindowOutOfBounds {
            trial_id: trial_id.to_string(),
            bound: "end",
            index: to,
            len,
        });
    }
    if to <= from {
        return Err(BciError::InvalidWindow(format!(
            "trial {trial_id}: window resolves to empty sample range [{from}, {to})"
        )));
    }
    Ok(())
}

/// Copies `[onset + round(start*rate), onset + round(end*rate))` from every
/// channel.
pub fn extract_window(trial: &Trial, window: WindowSpec, sampling_rate_hz: f64) -> Result<Epoch> {
    window.validate()?;
    let (start, end) = window.offsets(sampling_rate_hz);
    let onset = trial.onset_index as i64;
    let (from, to) = (onset + start, onset + end);
    check_range(&trial.trial_id, from, to, trial.n_samples())?;
    Ok(Epoch {
        samples: trial
            .samples
            .iter()
            .map(|ch| ch[from as usize..to as usize].to_vec())
            .collect(),
        trial_id: trial.trial_id.clone(),
        window,
        sampling_rate_hz,
    })
}

/// Like [`extract_window`] but with `[start_s, end_s)` measured from the
/// first sample of the trial. The returned epoch's window is re-expressed
/// relative to onset.
pub fn extract_absolute(
    trial: &Trial,
    start_s: f64,
    end_s: f64,
    sampling_rate_hz: f64,
) -> Result<Epoch> {
    let onset_s = trial.onset_index as f64 / sampling_rate_hz;
    let from = (start_s * sampling_rate_hz).round() as i64;
    let to = (end_s * sampling_rate_hz).round() as i64;
    WindowSpec {
        start_s,
        end_s,
    }
    .validate()?;
    check_range(&trial.trial_id, from, to, trial.n_samples())?;
    Ok(Epoch {
        samples: trial
            .samples
            .iter()
            .map(|ch| ch[from as usize..to as usize].to_vec())
            .collect(),
        trial_id: trial.trial_id.clone(),
        window: WindowSpec {
            start_s: start_s - onset_s,
            end_s: end_s - onset_s,
        },
        sampling_rate_hz,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyBand {
    pub low_hz: f64,
    pub high_hz: f64,
}

impl FrequencyBand {
    pub const MU: FrequencyBand = FrequencyBand {
        low_hz: 8.0,
        high_hz: 12.0,
    };
    pub const BETA: FrequencyBand = FrequencyBand {
        low_hz: 16.0,
        high_hz: 24.0,
    };
    pub const GAMMA: FrequencyBand = FrequencyBand {
        low_hz: 75.0,
        high_hz: 100.0,
    };

    pub fn new(low_hz: f64, high_hz: f64) -> Self {
        FrequencyBand { low_hz, high_hz }
    }

    pub fn validate(&self, sampling_rate_hz: f64) -> Result<()> {
        let reason = if !(self.low_hz.is_finite() && self.high_hz.is_finite()) {
            Some("edges must be finite".to_string())
        } else if self.low_hz < 0.0 {
            Some("low edge below 0".to_string())
        } else if self.low_hz >= self.high_hz {
            Some("low edge must be below high edge".to_string())
        } else if self.high_hz > sampling_rate_hz / 2.0 {
            Some(format!("high edge above nyquist {}", sampling_rate_hz / 2.0))
        } else {
            None
        };
        match reason {
            Some(reason) => Err(BciError::InvalidBand {
                low_hz: self.low_hz,
                high_hz: self.high_hz,
                reason,
            }),
            None => Ok(()),
        }
    }

    /// Non-negative bin indices `k <= n/2` whose frequency `k*rate/n` lies
    /// in the closed band.
    fn bins(&self, n: usize, rate: f64) -> Range<usize> {
        let resolution = rate / n as f64;
        let lo = (self.low_hz / resolution).ceil().max(0.0) as usize;
        let hi = ((self.high_hz / resolution).floor() as usize).min(n / 2);
        lo..(hi + 1).max(lo)
    }
}

/// Zeroes every spectral bin of `signal` outside `band` and returns the
/// real inverse transform.
pub fn band_limit(
    signal: &[f64],
    sampling_rate_hz: f64,
    band: FrequencyBand,
    planner: &mut FftPlanner<f64>,
) -> Result<Vec<f64>> {
    band.validate(sampling_rate_hz)?;
    let n = signal.len();
    let kept = band.bins(n, sampling_rate_hz);
    if n == 0 || kept.is_empty() {
        return Err(BciError::InvalidBand {
            low_hz: band.low_hz,
            high_hz: band.high_hz,
            reason: format!("no spectral bins for {n} samples at {sampling_rate_hz} Hz"),
        });
    }
    let mut buf: Vec<Complex<f64>> = signal.iter().map(|&v| Complex::new(v, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    let mut masked = vec![Complex::new(0.0, 0.0); n];
    for k in kept {
        masked[k] = buf[k];
        if k != 0 && 2 * k != n {
            masked[n - k] = buf[n - k];
        }
    }
    planner.plan_fft_inverse(n).process(&mut masked);
    let scale = 1.0 / n as f64;
    Ok(masked.iter().map(|c| c.re * scale).collect())
}

/// Power (µV²) per channel and frame.
#[derive(Debug, Clone, PartialEq)]
pub struct BandPowerSeries {
    pub values: Vec<Vec<f64>>,
    pub frame_hop_s: f64,
    pub band: FrequencyBand,
}

impl BandPowerSeries {
    pub fn n_frames(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }
}

/// Number of whole frames of `frame` samples at hop `hop` in `len` samples.
pub fn frame_count(len: usize, frame: usize, hop: usize) -> usize {
    if frame == 0 || frame > len {
        0
    } else {
        (len - frame) / hop.max(1) + 1
    }
}

pub fn band_power(
    epoch: &Epoch,
    band: FrequencyBand,
    frame_s: f64,
    hop_s: f64,
) -> Result<BandPowerSeries> {
    let rate = epoch.sampling_rate_hz;
    band.validate(rate)?;
    if !(frame_s > 0.0 && hop_s > 0.0) {
        return Err(BciError::InvalidConfig(format!(
            "frame {frame_s} s and hop {hop_s} s must be positive"
        )));
    }
    let frame = ((frame_s * rate).round() as usize).max(1);
    let hop = ((hop_s * rate).round() as usize).max(1);
    if frame > epoch.len() {
        return Err(BciError::FrameTooLong {
            frame,
            epoch: epoch.len(),
        });
    }
    let n_frames = frame_count(epoch.len(), frame, hop);
    let mut planner = FftPlanner::new();
    let mut values = Vec::with_capacity(epoch.n_channels());
    for channel in &epoch.samples {
        let mut row = Vec::with_capacity(n_frames);
        for f in 0..n_frames {
            let start = f * hop;
            let limited = band_limit(&channel[start..start + frame], rate, band, &mut planner)?;
            row.push(limited.iter().map(|v| v * v).sum::<f64>() / frame as f64);
        }
        values.push(row);
    }
    Ok(BandPowerSeries {
        values,
        frame_hop_s: hop as f64 / rate,
        band,
    })
}

/// Per-channel mean frame power over `frames`.
pub fn reference_power(series: &BandPowerSeries, frames: Range<usize>) -> Result<Vec<f64>> {
    if frames.is_empty() || frames.end > series.n_frames() {
        return Err(BciError::InvalidWindow(format!(
            "reference frames {frames:?} empty or beyond {} frames",
            series.n_frames()
        )));
    }
    let n = frames.len() as f64;
    Ok(series
        .values
        .iter()
        .map(|row| row[frames.clone()].iter().sum::<f64>() / n)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::MovementClass;
    use std::f64::consts::PI;

    fn trial(len: usize, onset: usize) -> Trial {
        Trial {
            trial_id: "t0".into(),
            label: MovementClass::Rtr,
            onset_index: onset,
            samples: vec![(0..len).map(|i| i as f64).collect(), vec![1.0; len]],
        }
    }

    fn sine_epoch(freqs: &[(f64, f64)], len: usize, rate: f64) -> Epoch {
        let x = (0..len)
            .map(|i| {
                let t = i as f64 / rate;
                freqs.iter().map(|(f, a)| a * (2.0 * PI * f * t).sin()).sum()
            })
            .collect();
        Epoch {
            samples: vec![x],
            trial_id: "sine".into(),
            window: WindowSpec::new(0.0, len as f64 / rate).unwrap(),
            sampling_rate_hz: rate,
        }
    }

    #[test]
    fn pre_onset_window_indices() {
        let t = trial(3600, 1800);
        let e = extract_window(&t, WindowSpec::PRE_ONSET, 600.0).unwrap();
        assert_eq!(e.len(), 900);
        assert_eq!(e.samples[0][0], 900.0);
        assert_eq!(e.samples[0][899], 1799.0);
    }

    #[test]
    fn sub_sample_window_rounds_to_one_sample() {
        let t = trial(3600, 1800);
        let e = extract_window(&t, WindowSpec::new(0.0, 0.001).unwrap(), 600.0).unwrap();
        assert_eq!(e.len(), 1);
        assert_eq!(e.samples[0][0], 1800.0);
    }

    #[test]
    fn window_before_trial_start_is_rejected() {
        let t = trial(3600, 1800);
        let err = extract_window(&t, WindowSpec::new(-4.0, 0.0).unwrap(), 600.0).unwrap_err();
        match err {
            BciError::WindowOutOfBounds { trial_id, bound, .. } => {
                assert_eq!(trial_id, "t0");
                assert_eq!(bound, "start");
            }
            other => panic!("unexpected {other}"),
        }
        assert!(extract_window(&t, WindowSpec::new(0.0, 3.5).unwrap(), 600.0).is_err());
        assert!(WindowSpec::new(1.0, 1.0).is_err());
    }

    #[test]
    fn absolute_window_is_reexpressed_relative_to_onset() {
        let t = trial(3600, 1800);
        let e = extract_absolute(&t, 0.0, 1.0, 600.0).unwrap();
        assert_eq!(e.len(), 600);
        assert_eq!(e.samples[0][0], 0.0);
        assert_eq!(e.window, WindowSpec::new(-3.0, -2.0).unwrap());
    }

    #[test]
    fn zero_signal_has_zero_power() {
        let e = Epoch {
            samples: vec![vec![0.0; 600]; 3],
            trial_id: "z".into(),
            window: WindowSpec::new(0.0, 1.0).unwrap(),
            sampling_rate_hz: 600.0,
        };
        let s = band_power(&e, FrequencyBand::MU, 0.25, 0.125).unwrap();
        assert_eq!(s.n_frames(), 7);
        assert!(s.values.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn frame_arithmetic() {
        assert_eq!(frame_count(900, 150, 75), 11);
        assert_eq!(frame_count(600, 150, 75), 7);
        assert_eq!(frame_count(100, 150, 75), 0);
        assert_eq!(frame_count(150, 150, 75), 1);
    }

    #[test]
    fn frame_longer_than_epoch() {
        let e = sine_epoch(&[(10.0, 1.0)], 100, 600.0);
        assert!(matches!(
            band_power(&e, FrequencyBand::MU, 0.5, 0.1),
            Err(BciError::FrameTooLong { .. })
        ));
    }

    #[test]
    fn band_without_bins_is_rejected() {
        // 10 samples at 600 Hz: bins every 60 Hz, nothing in 8-12 Hz.
        let e = sine_epoch(&[(10.0, 1.0)], 10, 600.0);
        assert!(matches!(
            band_power(&e, FrequencyBand::MU, 10.0 / 600.0, 10.0 / 600.0),
            Err(BciError::InvalidBand { .. })
        ));
        assert!(FrequencyBand::new(250.0, 400.0).validate(600.0).is_err());
        assert!(FrequencyBand::new(12.0, 8.0).validate(600.0).is_err());
    }

    #[test]
    fn reference_power_means() {
        let s = BandPowerSeries {
            values: vec![vec![5.0, 5.0, 1.0, 3.0, 9.0], vec![2.0; 5]],
            frame_hop_s: 0.1,
            band: FrequencyBand::MU,
        };
        assert_eq!(reference_power(&s, 2..4).unwrap(), vec![2.0, 2.0]);
        assert_eq!(reference_power(&s, 4..5).unwrap(), vec![9.0, 2.0]);
        assert_eq!(reference_power(&s, 0..5).unwrap()[1], 2.0);
        assert!(reference_power(&s, 3..3).is_err());
        assert!(reference_power(&s, 3..6).is_err());
    }

    #[test]
    fn band_limit_keeps_nyquist_once() {
        // Alternating signal is pure Nyquist; full band must return it unchanged.
        let x: Vec<f64> = (0..8).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let mut planner = FftPlanner::new();
        let y = band_limit(&x, 8.0, FrequencyBand::new(0.0, 4.0), &mut planner).unwrap();
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
