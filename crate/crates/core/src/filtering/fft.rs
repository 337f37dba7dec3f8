//! In-place iterative radix-2 Cooley-Tukey FFT.

use std::f64::consts::PI;

use num_complex::Complex64;

/// Spectrum of a (zero-padded) real signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub bins: Vec<Complex64>,
    /// Frequency resolution in Hz: `sample_rate / N`.
    pub bin_hz: f64,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    pub fn frequency(&self, bin: usize) -> f64 {
        bin as f64 * self.bin_hz
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.bins.iter().map(|c| c.norm()).collect()
    }
}

/// Forward transform of `buf` in place. `buf.len()` must be a power of two.
pub fn fft_in_place(buf: &mut [Complex64]) {
    transform(buf, false);
}

/// Inverse transform of `buf` in place, including the `1/N` scale.
pub fn ifft_in_place(buf: &mut [Complex64]) {
    transform(buf, true);
    let scale = 1.0 / buf.len() as f64;
    for c in buf.iter_mut() {
        *c *= scale;
    }
}

fn transform(buf: &mut [Complex64], inverse: bool) {
    let n = buf.len();
    assert!(n.is_power_of_two(), "FFT length {n} is not a power of two");
    if n <= 1 {
        return;
    }

    // bit-reversal permutation
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }

    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        // Twiddles are computed directly rather than by repeated
        // multiplication so rounding error does not accumulate along a stage.
        let twiddles: Vec<Complex64> = (0..half)
            .map(|k| Complex64::from_polar(1.0, sign * 2.0 * PI * k as f64 / len as f64))
            .collect();
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let a = buf[start + k];
                let b = buf[start + k + half] * twiddles[k];
                buf[start + k] = a + b;
                buf[start + k + half] = a - b;
            }
        }
        len <<= 1;
    }
}

/// Transform size used for a signal of `len` samples.
pub fn padded_len(len: usize) -> usize {
    len.max(1).next_power_of_two()
}

/// Spectrum of `samples`, zero-padded to the next power of two.
pub fn fft(samples: &[f64], sample_rate: f64) -> Spectrum {
    let n = padded_len(samples.len());
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for (b, &s) in buf.iter_mut().zip(samples) {
        b.re = s;
    }
    fft_in_place(&mut buf);
    Spectrum {
        bins: buf,
        bin_hz: sample_rate / n as f64,
    }
}

/// Inverse transform returning the real part and the fraction of energy
/// that was left in the imaginary part.
pub fn ifft_with_residue(spectrum: &Spectrum) -> (Vec<f64>, f64) {
    let mut buf = spectrum.bins.clone();
    ifft_in_place(&mut buf);
    let total: f64 = buf.iter().map(|c| c.norm_sqr()).sum();
    let imag: f64 = buf.iter().map(|c| c.im * c.im).sum();
    let residue = if total > 0.0 { imag / total } else { 0.0 };
    (buf.into_iter().map(|c| c.re).collect(), residue)
}

/// Inverse transform of a spectrum of real-signal provenance.
///
/// Returns the real part; logs a warning when the imaginary residue exceeds
/// `1e-6` of the output energy.
pub fn ifft(spectrum: &Spectrum) -> Vec<f64> {
    let (out, residue) = ifft_with_residue(spectrum);
    if residue > 1e-6 {
        log::warn!("ifft: spectrum is not conjugate-symmetric (imaginary residue {residue:.3e})");
    }
    out
}
