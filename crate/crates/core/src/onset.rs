//! Onset detection on a log-power mel spectrogram.
//!
//! The strength envelope is the rectified spectral flux
//! `mean_f max(0, S[f,t] - ref[f,t-lag])`, where `ref` is `S` after a
//! max filter across neighbouring mel bands. Onsets are envelope peaks,
//! rolled back to the preceding envelope minimum.

use std::f64::consts::PI;
use std::fmt::Write as _;

use num_complex::Complex64;

use crate::filtering::fft::{fft_in_place, padded_len};
use crate::signal_io::PcgSignal;

pub const LOG_FLOOR: f64 = 1e-10;

/// Log-power mel spectrogram, stored band-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    values: Vec<f64>,
    pub n_mels: usize,
    pub n_frames: usize,
    pub frame_len: usize,
    pub frame_hop: usize,
    pub sample_rate: u32,
    /// Input was shorter than one frame and was zero-padded.
    pub padded: bool,
    /// Frames whose analysis window contains no padding.
    pub interior: std::ops::Range<usize>,
}

impl MelSpectrogram {
    pub fn get(&self, band: usize, frame: usize) -> f64 {
        self.values[band * self.n_frames + frame]
    }

    pub fn band(&self, band: usize) -> &[f64] {
        &self.values[band * self.n_frames..(band + 1) * self.n_frames]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filter edges: `n_mels + 2` frequencies equally spaced on the
/// mel scale from 0 Hz to Nyquist.
pub fn mel_band_edges(n_mels: usize, sample_rate: f64) -> Vec<f64> {
    let top = hz_to_mel(sample_rate / 2.0);
    (0..n_mels + 2)
        .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
        .collect()
}

/// Weight of band `m` at `hz`; peak 1 at the band centre.
pub fn triangle_weight(edges: &[f64], m: usize, hz: f64) -> f64 {
    let (lo, c, hi) = (edges[m], edges[m + 1], edges[m + 2]);
    let up = (hz - lo) / (c - lo);
    let down = (hi - hz) / (hi - c);
    up.min(down).max(0.0)
}

fn hann(len: usize) -> Vec<f64> {
    // periodic form
    (0..len)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / len as f64).cos())
        .collect()
}

/// Frames are centred on `t * hop` with zero padding of `frame_len / 2` at
/// both ends, so frame `t` describes sample `t * hop`. Band powers are
/// floored at [`LOG_FLOOR`] before the log.
pub fn mel_spectrogram(signal: &PcgSignal, frame_len: usize, hop: usize, n_mels: usize) -> MelSpectrogram {
    mel_spectrogram_with_range(signal, frame_len, hop, n_mels, None)
}

/// As [`mel_spectrogram`], additionally flooring band powers at `top_db`
/// below the loudest band power of the whole spectrogram.
pub fn mel_spectrogram_with_range(
    signal: &PcgSignal,
    frame_len: usize,
    hop: usize,
    n_mels: usize,
    top_db: Option<f64>,
) -> MelSpectrogram {
    assert!(hop > 0 && frame_len >= hop, "need frame_len >= hop > 0");
    assert!(n_mels >= 1, "need at least one mel band");
    let x = signal.samples();
    let rate = signal.sample_rate() as f64;
    let half = frame_len / 2;

    let (padded_signal, n_frames, padded) = if x.len() < frame_len {
        log::warn!(
            "mel_spectrogram: {} samples is shorter than one frame ({frame_len}); zero-padding",
            x.len()
        );
        let mut p = x.to_vec();
        p.resize(frame_len, 0.0);
        (p, 1, true)
    } else {
        let n = x.len();
        let mut p = vec![0.0; half];
        p.extend_from_slice(x);
        p.resize(n + 2 * half, 0.0);
        (p, 1 + n / hop, false)
    };

    let nfft = padded_len(frame_len);
    let n_bins = nfft / 2 + 1;
    let window = hann(frame_len);
    let edges = mel_band_edges(n_mels, rate);
    // (first bin, weights) per band
    let bank: Vec<(usize, Vec<f64>)> = (0..n_mels)
        .map(|m| {
            let weights: Vec<f64> = (0..n_bins)
                .map(|k| triangle_weight(&edges, m, k as f64 * rate / nfft as f64))
                .collect();
            let first = weights.iter().position(|&w| w > 0.0).unwrap_or(n_bins);
            let last = weights.iter().rposition(|&w| w > 0.0).map_or(first, |l| l + 1);
            (first, weights[first..last].to_vec())
        })
        .collect();

    let mut values = vec![0.0; n_mels * n_frames];
    let mut buf = vec![Complex64::new(0.0, 0.0); nfft];
    let mut power = vec![0.0; n_bins];
    for t in 0..n_frames {
        let start = t * hop;
        buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
        for (i, (b, w)) in buf.iter_mut().zip(&window).enumerate() {
            b.re = padded_signal.get(start + i).copied().unwrap_or(0.0) * w;
        }
        fft_in_place(&mut buf);
        for (p, c) in power.iter_mut().zip(&buf) {
            *p = c.norm_sqr();
        }
        for (m, (first, weights)) in bank.iter().enumerate() {
            let e: f64 = weights.iter().zip(&power[*first..]).map(|(w, p)| w * p).sum();
            values[m * n_frames + t] = e;
        }
    }
    let mut floor = LOG_FLOOR;
    if let Some(db) = top_db {
        let loudest = values.iter().copied().fold(0.0, f64::max);
        floor = floor.max(loudest * 10f64.powf(-db / 10.0));
    }
    for v in values.iter_mut() {
        *v = v.max(floor).ln();
    }

    let interior = if padded {
        0..0
    } else {
        // frames whose window lies entirely within the signal
        let first = half.div_ceil(hop);
        let last = (x.len() - (frame_len - half)) / hop;
        first..(last + 1).min(n_frames)
    };

    MelSpectrogram {
        values,
        n_mels,
        n_frames,
        frame_len,
        frame_hop: hop,
        sample_rate: signal.sample_rate(),
        padded,
        interior,
    }
}

/// Per-frame onset strength.
#[derive(Debug, Clone, PartialEq)]
pub struct OnsetEnvelope {
    pub strength: Vec<f64>,
    pub frame_hop: usize,
    pub lag: usize,
    pub sample_rate: u32,
}

impl OnsetEnvelope {
    pub fn len(&self) -> usize {
        self.strength.len()
    }

    pub fn is_empty(&self) -> bool {
        self.strength.is_empty()
    }

    pub fn frame_seconds(&self) -> f64 {
        self.frame_hop as f64 / self.sample_rate as f64
    }

    pub fn frame_to_sample(&self, frame: usize) -> u64 {
        (frame * self.frame_hop) as u64
    }

    /// Nearest frame to a time in seconds, clamped to the envelope.
    pub fn frame_at(&self, time_s: f64) -> usize {
        let f = (time_s / self.frame_seconds()).round().max(0.0) as usize;
        f.min(self.len().saturating_sub(1))
    }

    /// `frame,time_s,strength` rows.
    pub fn dump(&self) -> String {
        let mut out = String::from("frame,time_s,strength\n");
        let dt = self.frame_seconds();
        for (i, s) in self.strength.iter().enumerate() {
            let _ = writeln!(out, "{i},{},{s}", i as f64 * dt);
        }
        out
    }
}

/// Spectral-flux envelope with a `max_filter`-band reference.
///
/// Strength is zero for the first `lag` frames and wherever frame `t` or
/// frame `t - lag` overlaps the padding at either end of the signal.
pub fn onset_strength_with_filter(mel: &MelSpectrogram, lag: usize, max_filter: usize) -> OnsetEnvelope {
    assert!(lag >= 1, "lag must be at least 1");
    let (nm, nf) = (mel.n_mels, mel.n_frames);
    let reach = max_filter.max(1) / 2;
    let mut strength = vec![0.0; nf];
    for (t, s) in strength.iter_mut().enumerate().skip(lag) {
        if !mel.interior.contains(&t) || !mel.interior.contains(&(t - lag)) {
            continue;
        }
        let mut acc = 0.0;
        for f in 0..nm {
            let lo = f.saturating_sub(reach);
            let hi = (f + reach).min(nm - 1);
            let reference = (lo..=hi)
                .map(|g| mel.get(g, t - lag))
                .fold(f64::NEG_INFINITY, f64::max);
            acc += (mel.get(f, t) - reference).max(0.0);
        }
        *s = acc / nm as f64;
    }
    OnsetEnvelope {
        strength,
        frame_hop: mel.frame_hop,
        lag,
        sample_rate: mel.sample_rate,
    }
}

/// Envelope with the default 3-band reference filter.
pub fn onset_strength(mel: &MelSpectrogram, lag: usize) -> OnsetEnvelope {
    onset_strength_with_filter(mel, lag, 3)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakPickParams {
    pub pre_max: usize,
    pub post_max: usize,
    pub pre_avg: usize,
    pub post_avg: usize,
    pub delta: f64,
    pub wait: usize,
}

/// Frames accepted as envelope peaks, scanning left to right.
///
/// Frame `t` is accepted when
/// - `strength[t] > 0` and it is the maximum of `[t-pre_max, t+post_max]`,
///   strictly greater than the earlier frames of that window (plateaus
///   resolve to their first frame),
/// - `strength[t] >= mean([t-pre_avg, t+post_avg]) + delta`,
/// - it lies at least `wait` frames after the last accepted peak.
///
/// Windows are clipped at the envelope boundaries.
pub fn pick_peaks(env: &OnsetEnvelope, p: &PeakPickParams) -> Vec<usize> {
    let x = &env.strength;
    let n = x.len();
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    for v in x {
        prefix.push(prefix.last().unwrap() + v);
    }

    let mut peaks = Vec::new();
    let mut last: Option<usize> = None;
    for t in 0..n {
        let v = x[t];
        if v <= 0.0 {
            continue;
        }
        if let Some(l) = last {
            if t < l + p.wait {
                continue;
            }
        }
        let lo = t.saturating_sub(p.pre_max);
        let hi = (t + p.post_max).min(n - 1);
        if x[lo..t].iter().any(|&u| u >= v) || x[t + 1..=hi].iter().any(|&u| u > v) {
            continue;
        }
        let alo = t.saturating_sub(p.pre_avg);
        let ahi = (t + p.post_avg).min(n - 1);
        let mean = (prefix[ahi + 1] - prefix[alo]) / (ahi + 1 - alo) as f64;
        if v - mean >= p.delta {
            peaks.push(t);
            last = Some(t);
        }
    }
    peaks
}

/// Largest `m <= peak` with `strength[m-1] >= strength[m] <= strength[m+1]`,
/// or 0. A neighbour outside the envelope counts as satisfied.
pub fn backtrack_to_minimum(env: &OnsetEnvelope, peak: usize) -> usize {
    let x = &env.strength;
    let peak = peak.min(x.len().saturating_sub(1));
    for m in (1..=peak).rev() {
        let right_ok = x.get(m + 1).is_none_or(|&r| x[m] <= r);
        if x[m - 1] >= x[m] && right_ok {
            return m;
        }
    }
    0
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OnsetParams {
    pub frame_len: usize,
    pub hop: usize,
    pub n_mels: usize,
    /// Dynamic range kept below the loudest band power, dB.
    pub top_db: Option<f64>,
    pub lag: usize,
    /// Width in mel bands of the reference max filter.
    pub max_filter: usize,
    pub pre_max: usize,
    pub post_max: usize,
    pub pre_avg: usize,
    pub post_avg: usize,
    /// Peak threshold as a fraction of the envelope maximum.
    pub delta_scale: f64,
    /// Minimum spacing between peaks.
    pub wait_s: f64,
    pub backtrack: bool,
}

impl Default for OnsetParams {
    fn default() -> Self {
        Self {
            frame_len: 256,
            hop: 64,
            n_mels: 40,
            top_db: Some(15.0),
            lag: 1,
            max_filter: 3,
            pre_max: 3,
            post_max: 3,
            pre_avg: 6,
            post_avg: 6,
            delta_scale: 0.07,
            wait_s: 0.12,
            backtrack: true,
        }
    }
}

impl OnsetParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.hop == 0 || self.frame_len < self.hop {
            return Err("onset: need frame_len >= hop > 0".into());
        }
        if self.n_mels == 0 || self.lag == 0 {
            return Err("onset: n_mels and lag must be at least 1".into());
        }
        if self.pre_max == 0 || self.post_max == 0 || self.pre_avg == 0 || self.post_avg == 0 {
            return Err("onset: peak-picking windows must be at least 1".into());
        }
        if self.top_db.is_some_and(|d| !(d > 0.0)) {
            return Err("onset: top_db must be positive".into());
        }
        if !(self.delta_scale >= 0.0) || !(self.wait_s >= 0.0) {
            return Err("onset: delta_scale and wait_s must be non-negative".into());
        }
        Ok(())
    }

    /// Peak-picking parameters for a concrete envelope.
    pub fn peak_params(&self, env: &OnsetEnvelope) -> PeakPickParams {
        let max = env.strength.iter().copied().fold(0.0, f64::max);
        let wait = (self.wait_s / env.frame_seconds() - 1e-9).ceil().max(1.0) as usize;
        PeakPickParams {
            pre_max: self.pre_max,
            post_max: self.post_max,
            pre_avg: self.pre_avg,
            post_avg: self.post_avg,
            delta: self.delta_scale * max,
            wait,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Onset {
    /// Sample index at `OnsetSequence::source_rate`.
    pub time: u64,
    /// Envelope value at the (pre-backtrack) peak frame.
    pub env_strength: f64,
    pub frame: usize,
    pub peak_frame: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OnsetSequence {
    pub onsets: Vec<Onset>,
    pub source_rate: u32,
}

impl OnsetSequence {
    pub fn len(&self) -> usize {
        self.onsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.onsets.is_empty()
    }

    pub fn time_s(&self, i: usize) -> f64 {
        self.onsets[i].time as f64 / self.source_rate as f64
    }

    pub fn times_s(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.time_s(i)).collect()
    }
}

/// Full detector, also returning the envelope it ran on.
pub fn detect_onsets_with_envelope(signal: &PcgSignal, params: &OnsetParams) -> (OnsetSequence, OnsetEnvelope) {
    let mel = mel_spectrogram_with_range(signal, params.frame_len, params.hop, params.n_mels, params.top_db);
    let env = onset_strength_with_filter(&mel, params.lag, params.max_filter);
    let peaks = pick_peaks(&env, &params.peak_params(&env));

    let mut onsets: Vec<Onset> = Vec::with_capacity(peaks.len());
    for peak in peaks {
        let mut frame = if params.backtrack {
            backtrack_to_minimum(&env, peak)
        } else {
            peak
        };
        if let Some(prev) = onsets.last() {
            frame = frame.max(prev.frame + 1);
        }
        onsets.push(Onset {
            time: env.frame_to_sample(frame),
            env_strength: env.strength[peak],
            frame,
            peak_frame: peak,
        });
    }
    let seq = OnsetSequence {
        onsets,
        source_rate: signal.sample_rate(),
    };
    (seq, env)
}

pub fn detect_onsets(signal: &PcgSignal, params: &OnsetParams) -> OnsetSequence {
    detect_onsets_with_envelope(signal, params).0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{add_bump, synthetic_pcg, SynthConfig};
    use proptest::prelude::*;

    fn env_of(strength: Vec<f64>) -> OnsetEnvelope {
        OnsetEnvelope {
            strength,
            frame_hop: 64,
            lag: 1,
            sample_rate: 4000,
        }
    }

    fn sig(x: Vec<f64>) -> PcgSignal {
        PcgSignal::new(x, 4000).unwrap()
    }

    /// Direct restatement of the three acceptance conditions.
    fn brute_force_peaks(x: &[f64], p: &PeakPickParams) -> Vec<usize> {
        let n = x.len() as i64;
        let clip = |a: i64, b: i64| (a.max(0) as usize, b.min(n - 1) as usize);
        let mut out: Vec<usize> = Vec::new();
        for t in 0..x.len() {
            let ti = t as i64;
            let (lo, hi) = clip(ti - p.pre_max as i64, ti + p.post_max as i64);
            let is_max = (lo..=hi).all(|u| x[u] <= x[t]) && (lo..t).all(|u| x[u] < x[t]);
            let (alo, ahi) = clip(ti - p.pre_avg as i64, ti + p.post_avg as i64);
            let mean: f64 = (alo..=ahi).map(|u| x[u]).sum::<f64>() / (ahi - alo + 1) as f64;
            let spaced = out.last().is_none_or(|&l| t >= l + p.wait);
            if x[t] > 0.0 && is_max && x[t] - mean >= p.delta && spaced {
                out.push(t);
            }
        }
        out
    }

    fn params(delta: f64, wait: usize) -> PeakPickParams {
        PeakPickParams {
            pre_max: 3,
            post_max: 3,
            pre_avg: 6,
            post_avg: 6,
            delta,
            wait,
        }
    }

    fn burst_env(centres: &[(usize, f64)], n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| {
                centres
                    .iter()
                    .map(|&(c, a)| a * (-((i as f64 - c as f64).powi(2)) / 4.0).exp())
                    .sum()
            })
            .collect()
    }

    #[test]
    fn zero_signal_hits_log_floor() {
        let mel = mel_spectrogram(&sig(vec![0.0; 4000]), 256, 64, 40);
        assert!(mel.values().iter().all(|&v| v == LOG_FLOOR.ln()));
        assert_eq!(mel.n_frames, 1 + 4000 / 64);
    }

    #[test]
    fn short_signal_gives_single_padded_frame() {
        let mel = mel_spectrogram(&sig(vec![0.1; 100]), 256, 64, 40);
        assert!(mel.padded);
        assert_eq!(mel.n_frames, 1);
    }

    #[test]
    fn noise_frame_exceeds_silence_in_every_band() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut x = vec![0.0; 4096];
        for v in x.iter_mut().skip(2048) {
            *v = rng.random_range(-1.0..1.0);
        }
        let mel = mel_spectrogram(&sig(x), 256, 64, 40);
        let (quiet, loud) = (8, 56);
        for m in 0..40 {
            assert!(mel.get(m, loud) > mel.get(m, quiet), "band {m}");
        }
    }

    #[test]
    fn sine_energy_in_bands_covering_its_frequency() {
        let x: Vec<f64> = (0..8000).map(|i| (2.0 * PI * 100.0 * i as f64 / 4000.0).sin()).collect();
        let mel = mel_spectrogram(&sig(x), 256, 64, 40);
        let edges = mel_band_edges(40, 4000.0);
        let covering: Vec<usize> = (0..40).filter(|&m| triangle_weight(&edges, m, 100.0) > 0.0).collect();
        assert!(!covering.is_empty());
        let frame = mel.n_frames / 2;
        let best = (0..40).max_by(|&a, &b| mel.get(a, frame).total_cmp(&mel.get(b, frame))).unwrap();
        assert!(covering.contains(&best), "best band {best}, covering {covering:?}");
        for m in 0..40 {
            if !covering.contains(&m) && edges[m] > 300.0 {
                assert!(mel.get(m, frame) < mel.get(best, frame) - 5.0);
            }
        }
    }

    #[test]
    fn steady_tone_has_no_flux() {
        let x: Vec<f64> = (0..8000).map(|i| 0.5 * (2.0 * PI * 60.0 * i as f64 / 4000.0).sin()).collect();
        let mel = mel_spectrogram_with_range(&sig(x), 256, 64, 40, OnsetParams::default().top_db);
        let env = onset_strength(&mel, 1);
        assert_eq!(env.strength[0], 0.0);
        let worst = env.strength[2..].iter().copied().fold(0.0, f64::max);
        assert!(worst < 0.05, "{worst}");
    }

    #[test]
    fn decaying_signal_has_zero_flux() {
        let x: Vec<f64> = (0..8000)
            .map(|i| {
                let t = i as f64 / 4000.0;
                (-3.0 * t).exp() * (2.0 * PI * 60.0 * t).sin()
            })
            .collect();
        let mel = mel_spectrogram_with_range(&sig(x), 256, 64, 40, OnsetParams::default().top_db);
        let env = onset_strength(&mel, 1);
        let worst = env.strength[2..].iter().copied().fold(0.0, f64::max);
        assert!(worst < 0.02, "{worst}");
    }

    #[test]
    fn burst_after_silence_peaks_near_burst() {
        let burst_at = 6000;
        let x: Vec<f64> = (0..12000)
            .map(|i| if i >= burst_at { (2.0 * PI * 80.0 * i as f64 / 4000.0).sin() } else { 0.0 })
            .collect();
        let env = onset_strength(&mel_spectrogram(&sig(x), 256, 64, 40), 1);
        let argmax = (0..env.len()).max_by(|&a, &b| env.strength[a].total_cmp(&env.strength[b])).unwrap();
        let expect = burst_at / 64;
        assert!((argmax as i64 - expect as i64).abs() <= 2, "{argmax} vs {expect}");
    }

    #[test]
    fn monotone_envelope_has_at_most_one_peak() {
        let env = env_of((0..50).map(|i| i as f64).collect());
        assert!(pick_peaks(&env, &params(1.0, 1)).len() <= 1);
    }

    #[test]
    fn two_spaced_bursts_give_two_peaks() {
        let x = burst_env(&[(20, 1.0), (40, 0.8)], 60);
        let p = params(0.1, 8);
        let got = pick_peaks(&env_of(x.clone()), &p);
        assert_eq!(got, brute_force_peaks(&x, &p));
        assert_eq!(got, vec![20, 40]);
    }

    #[test]
    fn close_bursts_give_the_earlier_peak() {
        let x = burst_env(&[(20, 0.9), (25, 1.0)], 60);
        let p = params(0.1, 8);
        let got = pick_peaks(&env_of(x.clone()), &p);
        assert_eq!(got, brute_force_peaks(&x, &p));
        assert_eq!(got.len(), 1);
    }

    #[test]
    fn plateau_resolves_to_first_frame() {
        let mut x = vec![0.0; 30];
        x[10] = 1.0;
        x[11] = 1.0;
        assert_eq!(pick_peaks(&env_of(x), &params(0.1, 1)), vec![10]);
    }

    #[test]
    fn backtrack_fixed_point_at_minimum() {
        let env = env_of(vec![3.0, 2.0, 1.0, 1.0, 2.0, 3.0]);
        assert_eq!(backtrack_to_minimum(&env, 3), 3);
    }

    #[test]
    fn backtrack_ramp_goes_to_zero() {
        let env = env_of((0..20).map(|i| i as f64).collect());
        assert_eq!(backtrack_to_minimum(&env, 19), 0);
    }

    #[test]
    fn backtrack_bump_to_its_start() {
        let x: Vec<f64> = (0..100)
            .map(|i| if (50..=70).contains(&i) { 1.0 - ((i as f64 - 60.0) / 10.0).powi(2) } else { 0.0 })
            .collect();
        let m = backtrack_to_minimum(&env_of(x), 60);
        assert!((48..=52).contains(&m), "{m}");
    }

    #[test]
    fn silence_gives_no_onsets() {
        assert!(detect_onsets(&sig(vec![0.0; 20000]), &OnsetParams::default()).is_empty());
    }

    #[test]
    fn single_bump_single_onset() {
        let mut x = vec![0.0; 12000];
        let (sigma, center) = (0.02, 1.5);
        add_bump(&mut x, 4000.0, center, sigma, 50.0, 1.0, 0.0);
        let seq = detect_onsets(&sig(x), &OnsetParams::default());
        assert_eq!(seq.len(), 1);
        let start = center - 2.0 * sigma;
        assert!((seq.time_s(0) - start).abs() <= 0.05, "{}", seq.time_s(0));
    }

    #[test]
    fn synthetic_recording_onsets_match_ground_truth() {
        let cfg = SynthConfig { duration_s: 10.0, ..Default::default() };
        let (signal, truth) = synthetic_pcg(&cfg, "syn");
        let seq = detect_onsets(&signal, &OnsetParams::default());
        assert!((26..=28).contains(&seq.len()), "{} onsets", seq.len());
        for a in truth.entries() {
            let t = a.time as f64 / 4000.0;
            let nearest = seq.times_s().iter().map(|&o| (o - t).abs()).fold(f64::INFINITY, f64::min);
            assert!(nearest <= 0.05, "truth {t}: nearest onset {nearest} s away");
        }
    }

    proptest! {
        #[test]
        fn peak_picking_matches_brute_force(
            x in prop::collection::vec(0.0f64..1.0, 1..80),
            delta in 0.0f64..0.3,
            wait in 1usize..10,
        ) {
            let p = params(delta, wait);
            prop_assert_eq!(pick_peaks(&env_of(x.clone()), &p), brute_force_peaks(&x, &p));
        }

        #[test]
        fn backtrack_never_moves_forward(x in prop::collection::vec(0.0f64..1.0, 1..80), peak in 0usize..80) {
            let env = env_of(x);
            let peak = peak.min(env.len() - 1);
            prop_assert!(backtrack_to_minimum(&env, peak) <= peak);
        }

        #[test]
        fn envelope_is_non_negative(seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..2000).map(|_| rng.random_range(-1.0..1.0)).collect();
            let env = onset_strength(&mel_spectrogram(&sig(x), 256, 64, 40), 1);
            prop_assert!(env.strength.iter().all(|&s| s >= 0.0));
        }
    }

    #[test]
    fn peak_set_invariant_under_amplitude_scaling() {
        let cfg = SynthConfig { duration_s: 6.0, ..Default::default() };
        let (signal, _) = synthetic_pcg(&cfg, "syn");
        let peaks_at = |c: f64| {
            let scaled = signal.with_samples(signal.samples().iter().map(|v| v * c).collect());
            let env = onset_strength(&mel_spectrogram(&scaled, 256, 64, 40), 1);
            pick_peaks(&env, &params(0.0, 8))
        };
        let base = peaks_at(1.0);
        assert!(!base.is_empty());
        assert_eq!(peaks_at(0.5), base);
        assert_eq!(peaks_at(2.0), base);
    }

    #[test]
    fn time_shift_by_whole_hops_shifts_onsets() {
        let cfg = SynthConfig { duration_s: 6.0, ..Default::default() };
        let (signal, _) = synthetic_pcg(&cfg, "syn");
        let k = 5;
        let mut shifted = vec![0.0; k * 64];
        shifted.extend_from_slice(signal.samples());
        shifted.truncate(signal.len());
        let base = detect_onsets(&signal, &OnsetParams::default());
        let moved = detect_onsets(&signal.with_samples(shifted), &OnsetParams::default());
        // drop onsets near the boundaries
        let inner = |s: &OnsetSequence, off: usize| -> Vec<usize> {
            s.onsets
                .iter()
                .map(|o| o.frame - off.min(o.frame))
                .filter(|&f| f > 20 && f < 320)
                .collect()
        };
        assert_eq!(inner(&base, 0), inner(&moved, k));
    }
}
