use std::f64::consts::PI;

use bci_core::dataset::{MovementClass, Trial};
use bci_core::features::{compute_erd_ers, compute_erp_template, FeatureSpec};
use bci_core::preprocess::{band_power, extract_window, Epoch, FrequencyBand, WindowSpec};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const RATE: f64 = 600.0;

fn sine(len: usize, components: &[(f64, f64, f64)]) -> Vec<f64> {
    (0..len)
        .map(|i| {
            let t = i as f64 / RATE;
            components
                .iter()
                .map(|(f, a, phase)| a * (2.0 * PI * f * t + phase).sin())
                .sum()
        })
        .collect()
}

fn epoch(signal: Vec<f64>) -> Epoch {
    let len = signal.len();
    Epoch {
        samples: vec![signal],
        trial_id: "oracle".into(),
        window: WindowSpec::new(0.0, len as f64 / RATE).unwrap(),
        sampling_rate_hz: RATE,
    }
}

/// Band power with one frame spanning the whole epoch.
fn full_frame_power(signal: Vec<f64>, band: FrequencyBand) -> f64 {
    let e = epoch(signal);
    let frame = e.duration_s();
    band_power(&e, band, frame, frame).unwrap().values[0][0]
}

#[test]
fn parseval_pure_sine_in_band() {
    for (amplitude, freq, len) in [(1.0, 10.0, 900), (3.5, 10.0, 600), (0.2, 9.0, 1200), (12.0, 11.0, 1800)] {
        let p = full_frame_power(sine(len, &[(freq, amplitude, 0.3)]), FrequencyBand::MU);
        let expected = amplitude * amplitude / 2.0;
        assert!((p - expected).abs() <= 0.01 * expected, "{freq} Hz A={amplitude}: {p} vs {expected}");
    }
}

#[test]
fn sine_has_no_power_outside_its_band() {
    let x = sine(900, &[(10.0, 2.0, 0.0)]);
    let total = 2.0;
    for band in [FrequencyBand::BETA, FrequencyBand::GAMMA, FrequencyBand::new(13.0, 300.0)] {
        let p = full_frame_power(x.clone(), band);
        assert!(p <= 0.02 * total, "{band:?}: {p}");
    }
}

#[test]
fn additive_spectrum_isolates_component() {
    let alone = full_frame_power(sine(900, &[(10.0, 1.5, 0.2)]), FrequencyBand::MU);
    let mixed = full_frame_power(sine(900, &[(10.0, 1.5, 0.2), (20.0, 4.0, 1.1)]), FrequencyBand::MU);
    assert!((mixed - alone).abs() <= 0.02 * alone, "{mixed} vs {alone}");
    let beta = full_frame_power(sine(900, &[(10.0, 1.5, 0.2), (20.0, 4.0, 1.1)]), FrequencyBand::BETA);
    assert!((beta - 8.0).abs() <= 0.02 * 8.0, "{beta}");
}

#[test]
fn framed_power_matches_per_frame_oracle() {
    // Frames of 0.5 s hold exactly five 10 Hz cycles.
    let x = sine(1800, &[(10.0, 2.0, 0.7)]);
    let series = band_power(&epoch(x), FrequencyBand::MU, 0.5, 0.25).unwrap();
    assert_eq!(series.n_frames(), 11);
    for v in &series.values[0] {
        assert!((v - 2.0).abs() < 1e-9, "{v}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn power_scales_with_square_of_gain(k in 0.01f64..100.0, seed in 0u64..1000) {
        let noise = Normal::new(0.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..600).map(|_| noise.sample(&mut rng)).collect();
        let scaled: Vec<f64> = x.iter().map(|v| v * k).collect();
        let a = band_power(&epoch(x), FrequencyBand::BETA, 0.25, 0.125).unwrap();
        let b = band_power(&epoch(scaled), FrequencyBand::BETA, 0.25, 0.125).unwrap();
        for (pa, pb) in a.values[0].iter().zip(&b.values[0]) {
            prop_assert!((pb - k * k * pa).abs() <= 1e-9 * pb.abs().max(1e-300));
        }
    }

    #[test]
    fn sub_window_composes_with_extraction(
        a in -30i64..0, b in 1i64..30, c in 0i64..20, d in 0i64..20,
    ) {
        let len = 3600;
        let trial = Trial {
            trial_id: "t".into(),
            label: MovementClass::Wf,
            onset_index: 1800,
            samples: vec![(0..len).map(|i| i as f64).collect(), (0..len).map(|i| -(i as f64)).collect()],
        };
        let outer = WindowSpec::new(a as f64 / 10.0, b as f64 / 10.0).unwrap();
        let start = a + c.min(b - a - 1);
        let end = (start + 1 + d).min(b);
        let inner = WindowSpec::new(start as f64 / 10.0, end as f64 / 10.0).unwrap();
        let via_outer = extract_window(&trial, outer, RATE).unwrap().sub_window(inner).unwrap();
        let direct = extract_window(&trial, inner, RATE).unwrap();
        prop_assert_eq!(via_outer.samples, direct.samples);
    }
}

/// A 6 s trial with onset at 3 s whose single channel is a 10 Hz sine of
/// amplitude `before` up to 1.5 s and `after` from then on.
fn stepped_trial(before: f64, after: f64) -> Trial {
    let samples = (0..3600)
        .map(|i| {
            let amplitude = if i < 900 { before } else { after };
            amplitude * (2.0 * PI * 10.0 * i as f64 / RATE).sin()
        })
        .collect();
    Trial {
        trial_id: "step".into(),
        label: MovementClass::Rtr,
        onset_index: 1800,
        samples: vec![samples],
    }
}

fn half_second_frames() -> FeatureSpec {
    FeatureSpec {
        frame_s: 0.5,
        hop_s: 0.25,
        ..FeatureSpec::default()
    }
}

#[test]
fn erd_identity_and_halving() {
    let spec = half_second_frames();
    let same = compute_erd_ers(&stepped_trial(1.0, 1.0), FrequencyBand::MU, &spec).unwrap();
    assert!(same.percent[0].iter().all(|p| p.abs() < 1e-9), "{:?}", same.percent);
    let halved = compute_erd_ers(&stepped_trial(1.0, 0.5f64.sqrt()), FrequencyBand::MU, &spec).unwrap();
    assert!(halved.percent[0].iter().all(|p| (p + 50.0).abs() < 1e-9), "{:?}", halved.percent);
    let doubled = compute_erd_ers(&stepped_trial(1.0, 2.0f64.sqrt()), FrequencyBand::MU, &spec).unwrap();
    assert!(doubled.percent[0].iter().all(|p| (p - 100.0).abs() < 1e-9));
}

#[test]
fn erd_percent_ignores_overall_gain() {
    let spec = FeatureSpec::default();
    let noise = Normal::new(0.0, 10.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let base: Vec<Vec<f64>> = (0..3).map(|_| (0..3600).map(|_| noise.sample(&mut rng)).collect()).collect();
    let trial = Trial {
        trial_id: "n".into(),
        label: MovementClass::Rtl,
        onset_index: 1800,
        samples: base,
    };
    let reference = compute_erd_ers(&trial, FrequencyBand::BETA, &spec).unwrap();
    for k in [1e-6, 0.37, 250.0, 1e6] {
        let scaled = Trial {
            samples: trial.samples.iter().map(|r| r.iter().map(|v| v * k).collect()).collect(),
            ..trial.clone()
        };
        let curve = compute_erd_ers(&scaled, FrequencyBand::BETA, &spec).unwrap();
        for (a, b) in reference.percent.iter().flatten().zip(curve.percent.iter().flatten()) {
            assert!((a - b).abs() < 1e-6, "k={k}: {a} vs {b}");
        }
    }
}

fn noisy_copies(template: &[Vec<f64>], n: usize, sigma: f64, seed: u64) -> Vec<Trial> {
    let noise = Normal::new(0.0, sigma).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| Trial {
            trial_id: format!("c{i}"),
            label: MovementClass::Wf,
            onset_index: 1800,
            samples: template
                .iter()
                .map(|row| row.iter().map(|v| v + noise.sample(&mut rng)).collect())
                .collect(),
        })
        .collect()
}

#[test]
fn erp_average_error_shrinks_like_sqrt_n() {
    let template: Vec<Vec<f64>> = (0..3)
        .map(|ch| sine(3600, &[(1.0 + ch as f64, 5.0, 0.0)]))
        .collect();
    let window = WindowSpec::PRE_ONSET;
    let sigma = 4.0;
    let mut mean_rms = 0.0;
    for seed in 0..20 {
        let trials = noisy_copies(&template, 100, sigma, seed);
        let est = compute_erp_template(&trials, window, RATE).unwrap();
        let mut sq = 0.0;
        let mut count = 0.0;
        for (e, t) in est.values.iter().zip(&template) {
            for (a, b) in e.iter().zip(&t[900..1800]) {
                sq += (a - b) * (a - b);
                count += 1.0;
            }
        }
        mean_rms += (sq / count).sqrt() / 20.0;
    }
    let expected = sigma / 10.0;
    assert!((mean_rms - expected).abs() <= 0.3 * expected, "{mean_rms} vs {expected}");
}

#[test]
fn erp_template_is_linear() {
    let zero = vec![vec![0.0; 3600]; 2];
    let xs = noisy_copies(&zero, 7, 3.0, 1);
    let ys = noisy_copies(&zero, 7, 5.0, 2);
    let (a, b) = (2.5, -0.75);
    let combined: Vec<Trial> = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| Trial {
            samples: x
                .samples
                .iter()
                .zip(&y.samples)
                .map(|(rx, ry)| rx.iter().zip(ry).map(|(u, v)| a * u + b * v).collect())
                .collect(),
            ..x.clone()
        })
        .collect();
    let window = WindowSpec::EXECUTION;
    let tx = compute_erp_template(&xs, window, RATE).unwrap();
    let ty = compute_erp_template(&ys, window, RATE).unwrap();
    let tc = compute_erp_template(&combined, window, RATE).unwrap();
    for ((c, x), y) in tc.values.iter().flatten().zip(tx.values.iter().flatten()).zip(ty.values.iter().flatten()) {
        assert!((c - (a * x + b * y)).abs() < 1e-9);
    }
}
