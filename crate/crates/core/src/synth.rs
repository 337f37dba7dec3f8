//! Synthetic phonocardiograms with known S1/S2 positions.
//!
//! Each heart sound is a Gaussian-windowed sinusoid. The annotated time of a
//! sound is its start, taken as two standard deviations before the window
//! centre.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::signal_io::{Annotation, AnnotationSet, PcgSignal, SoundLabel};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub duration_s: f64,
    pub sample_rate: u32,
    pub bpm: f64,
    /// S1 start to S2 start.
    pub systole_s: f64,
    pub s1_hz: f64,
    pub s2_hz: f64,
    pub s1_sigma_s: f64,
    pub s2_sigma_s: f64,
    pub s1_amplitude: f64,
    pub s2_amplitude: f64,
    /// Start of the first S1.
    pub first_onset_s: f64,
    /// White-noise level relative to the clean signal power; `None` is
    /// noise-free.
    pub snr_db: Option<f64>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            duration_s: 30.0,
            sample_rate: 4000,
            bpm: 80.0,
            systole_s: 0.3,
            s1_hz: 45.0,
            s2_hz: 70.0,
            s1_sigma_s: 0.02,
            s2_sigma_s: 0.015,
            s1_amplitude: 1.0,
            s2_amplitude: 0.8,
            first_onset_s: 0.25,
            snr_db: Some(10.0),
            seed: 7,
        }
    }
}

/// Adds `amplitude · exp(-(t-c)²/2σ²) · sin(2πf(t-c) + phase)` into `out`.
pub fn add_bump(out: &mut [f64], rate: f64, center_s: f64, sigma_s: f64, freq_hz: f64, amplitude: f64, phase: f64) {
    let lo = ((center_s - 5.0 * sigma_s) * rate).floor().max(0.0) as usize;
    let hi = (((center_s + 5.0 * sigma_s) * rate).ceil() as usize).min(out.len());
    for (i, v) in out.iter_mut().enumerate().take(hi).skip(lo) {
        let d = i as f64 / rate - center_s;
        *v += amplitude * (-d * d / (2.0 * sigma_s * sigma_s)).exp() * (2.0 * PI * freq_hz * d + phase).sin();
    }
}

/// Generates a recording and its annotations (sample units at
/// `cfg.sample_rate`). The output is scaled to a peak of 0.9.
pub fn synthetic_pcg(cfg: &SynthConfig, recording_id: &str) -> (PcgSignal, AnnotationSet) {
    let rate = cfg.sample_rate as f64;
    let n = (cfg.duration_s * rate).round() as usize;
    let mut x = vec![0.0; n];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let period = 60.0 / cfg.bpm;

    let mut entries = Vec::new();
    let mut start = cfg.first_onset_s;
    let sounds = [
        (SoundLabel::S1, 0.0, cfg.s1_sigma_s, cfg.s1_hz, cfg.s1_amplitude),
        (SoundLabel::S2, cfg.systole_s, cfg.s2_sigma_s, cfg.s2_hz, cfg.s2_amplitude),
    ];
    'cycles: loop {
        for &(label, offset, sigma, freq, amp) in &sounds {
            let onset = start + offset;
            let center = onset + 2.0 * sigma;
            if center + 3.0 * sigma > cfg.duration_s {
                break 'cycles;
            }
            let phase = rng.random_range(0.0..2.0 * PI);
            add_bump(&mut x, rate, center, sigma, freq, amp, phase);
            entries.push(Annotation {
                time: (onset * rate).round() as u64,
                label,
            });
        }
        start += period;
    }

    if let Some(snr_db) = cfg.snr_db {
        let power = x.iter().map(|v| v * v).sum::<f64>() / n.max(1) as f64;
        let noise_sd = (power / 10f64.powf(snr_db / 10.0)).sqrt();
        let normal = Normal::new(0.0, noise_sd).expect("finite noise level");
        for v in x.iter_mut() {
            *v += normal.sample(&mut rng);
        }
    }

    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        for v in x.iter_mut() {
            *v *= 0.9 / peak;
        }
    }

    let signal = PcgSignal::new(x, cfg.sample_rate).expect("positive rate");
    let annotations = AnnotationSet::new(recording_id, entries).expect("generated in order");
    (signal, annotations)
}

/// Isolated event windows of `len` samples, each holding one bump of
/// `freq_hz` with jittered centre, width, phase and amplitude plus noise.
pub fn synthetic_events(freq_hz: f64, count: usize, len: usize, sample_rate: u32, seed: u64) -> Vec<Vec<f64>> {
    let rate = sample_rate as f64;
    let span = len as f64 / rate;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.05).expect("valid sd");
    (0..count)
        .map(|_| {
            let mut x = vec![0.0; len];
            let center = span * rng.random_range(0.4..0.6);
            let sigma = span * rng.random_range(0.12..0.2);
            let amp = rng.random_range(0.5..1.0);
            let phase = rng.random_range(0.0..2.0 * PI);
            add_bump(&mut x, rate, center, sigma, freq_hz, amp, phase);
            for v in x.iter_mut() {
                *v += noise.sample(&mut rng);
            }
            x
        })
        .collect()
}
