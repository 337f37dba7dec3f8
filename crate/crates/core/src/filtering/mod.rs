//! Pre-processing: Butterworth bandpass, then per-recording dominant
//! frequency filtering in the FFT domain.

mod butterworth;
pub mod fft;

use std::fmt::Write as _;

use num_complex::Complex64;
use thiserror::Error;

use crate::signal_io::PcgSignal;

pub use butterworth::{bandpass_samples, BandpassConfig, Biquad, SosFilter};
pub use fft::{fft, ifft, Spectrum};

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("filter configuration: {0}")]
    Config(String),
}

/// Zero-phase Butterworth bandpass of a recording.
pub fn butterworth_bandpass(signal: &PcgSignal, cfg: &BandpassConfig) -> Result<PcgSignal, FilterError> {
    let out = bandpass_samples(signal.samples(), signal.sample_rate() as f64, cfg)?;
    Ok(signal.with_samples(out))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FftFilterConfig {
    /// Number of spectral peaks kept.
    pub n_dominant: usize,
    /// Half-width in Hz of the band retained around each peak.
    pub delta_hz: f64,
    /// Half-width of the spectral smoothing applied before peak picking;
    /// 0 picks on raw bins.
    pub smooth_hz: f64,
}

impl Default for FftFilterConfig {
    fn default() -> Self {
        Self {
            n_dominant: 2,
            delta_hz: 10.0,
            smooth_hz: 5.0,
        }
    }
}

impl FftFilterConfig {
    pub fn validate(&self) -> Result<(), FilterError> {
        if self.n_dominant == 0 {
            return Err(FilterError::Config("n_dominant must be at least 1".into()));
        }
        if !(self.delta_hz > 0.0 && self.delta_hz.is_finite()) {
            return Err(FilterError::Config("delta_hz must be positive".into()));
        }
        if !(self.smooth_hz >= 0.0 && self.smooth_hz.is_finite()) {
            return Err(FilterError::Config("smooth_hz must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DominantPeaks {
    /// Peak bins, ascending.
    pub bins: Vec<usize>,
    /// Peak frequencies in Hz, ascending.
    pub frequencies: Vec<f64>,
    /// Fewer local maxima than requested were available.
    pub truncated: bool,
}

/// The `n` strongest local maxima of the raw magnitude spectrum among bins
/// `1..=N/2`.
///
/// A bin qualifies when its magnitude is non-zero and strictly greater than
/// both neighbours. Equal magnitudes rank the lower frequency first.
pub fn dominant_frequencies(spectrum: &Spectrum, n: usize) -> DominantPeaks {
    pick_dominant(spectrum, &spectrum.magnitudes(), n)
}

/// As [`dominant_frequencies`], but on the magnitude spectrum smoothed by a
/// Hann kernel spanning `±smooth_hz`.
///
/// Periodic recordings have a line spectrum at multiples of the heart rate;
/// smoothing merges those lines into the broad spectral peaks.
pub fn dominant_frequencies_smoothed(spectrum: &Spectrum, n: usize, smooth_hz: f64) -> DominantPeaks {
    let mags = spectrum.magnitudes();
    let reach = (smooth_hz / spectrum.bin_hz).floor() as usize;
    if reach == 0 {
        return pick_dominant(spectrum, &mags, n);
    }
    let len = mags.len();
    let kernel: Vec<f64> = (0..=2 * reach)
        .map(|i| {
            let u = (i as f64 - reach as f64) / (reach as f64 + 1.0);
            0.5 + 0.5 * (std::f64::consts::PI * u).cos()
        })
        .collect();
    let smoothed: Vec<f64> = (0..len)
        .map(|k| {
            kernel
                .iter()
                .enumerate()
                .map(|(i, w)| {
                    // circular: the spectrum of a real signal wraps at DC
                    let j = (k + len * (reach + 1) + i - reach) % len;
                    w * mags[j]
                })
                .sum()
        })
        .collect();
    pick_dominant(spectrum, &smoothed, n)
}

fn pick_dominant(spectrum: &Spectrum, mags: &[f64], n: usize) -> DominantPeaks {
    let len = mags.len();
    let mut candidates: Vec<usize> = if len < 2 {
        Vec::new()
    } else {
        (1..=len / 2)
            .filter(|&k| {
                let m = mags[k];
                m > 0.0 && m > mags[k - 1] && m > mags[(k + 1) % len]
            })
            .collect()
    };
    candidates.sort_by(|&a, &b| mags[b].total_cmp(&mags[a]).then(a.cmp(&b)));

    let truncated = candidates.len() < n;
    if truncated {
        log::warn!(
            "dominant_frequencies: requested {n} peaks, only {} available",
            candidates.len()
        );
    }
    candidates.truncate(n);
    candidates.sort_unstable();
    DominantPeaks {
        frequencies: candidates.iter().map(|&k| spectrum.frequency(k)).collect(),
        bins: candidates,
        truncated,
    }
}

/// Zeroes every bin outside `[f - δ, f + δ]` of the dominant peaks, on
/// both sides of the spectrum.
pub fn zero_outside_bands(spectrum: &mut Spectrum, peaks: &[f64], delta_hz: f64) {
    let n = spectrum.len();
    let bin_hz = spectrum.bin_hz;
    for (k, bin) in spectrum.bins.iter_mut().enumerate() {
        let folded = k.min(n - k) as f64 * bin_hz;
        let keep = peaks.iter().any(|&f| (folded - f).abs() <= delta_hz);
        if !keep {
            *bin = Complex64::new(0.0, 0.0);
        }
    }
}

/// Dominant-frequency filtering. Returns the filtered signal together with
/// the peaks that were retained.
pub fn fft_filter_with_peaks(
    signal: &PcgSignal,
    cfg: &FftFilterConfig,
) -> Result<(PcgSignal, DominantPeaks), FilterError> {
    cfg.validate()?;
    if signal.is_empty() {
        return Ok((
            signal.clone(),
            DominantPeaks {
                bins: Vec::new(),
                frequencies: Vec::new(),
                truncated: true,
            },
        ));
    }
    let mut spectrum = fft(signal.samples(), signal.sample_rate() as f64);
    let peaks = dominant_frequencies_smoothed(&spectrum, cfg.n_dominant, cfg.smooth_hz);
    zero_outside_bands(&mut spectrum, &peaks.frequencies, cfg.delta_hz);
    let mut out = ifft(&spectrum);
    out.truncate(signal.len());
    Ok((signal.with_samples(out), peaks))
}

pub fn fft_filter(signal: &PcgSignal, cfg: &FftFilterConfig) -> Result<PcgSignal, FilterError> {
    fft_filter_with_peaks(signal, cfg).map(|(s, _)| s)
}

/// `freq_hz,magnitude` rows for bins `0..=N/2`.
pub fn spectrum_dump(spectrum: &Spectrum) -> String {
    let mut out = String::from("freq_hz,magnitude\n");
    for k in 0..=spectrum.len() / 2 {
        let _ = writeln!(out, "{},{}", spectrum.frequency(k), spectrum.bins[k].norm());
    }
    out
}
