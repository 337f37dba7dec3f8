//! Butterworth bandpass as a cascade of second-order sections.
//!
//! The analog lowpass prototype poles `exp(jπ(2k+N+1)/(2N))` are mapped to a
//! bandpass with the lowpass-to-bandpass substitution, then to the z-plane
//! with the bilinear transform using pre-warped band edges. An order-N
//! bandpass has 2N poles, giving N biquads that each carry one zero at
//! `z = 1` and one at `z = -1`.

use std::f64::consts::PI;

use num_complex::Complex64;

use super::FilterError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandpassConfig {
    pub low_hz: f64,
    pub high_hz: f64,
    pub order: usize,
}

impl Default for BandpassConfig {
    fn default() -> Self {
        Self {
            low_hz: 20.0,
            high_hz: 250.0,
            order: 5,
        }
    }
}

impl BandpassConfig {
    pub fn validate(&self, sample_rate: f64) -> Result<(), FilterError> {
        let nyquist = sample_rate / 2.0;
        if self.order == 0 {
            return Err(FilterError::Config("bandpass order must be at least 1".into()));
        }
        if !(self.low_hz > 0.0 && self.low_hz < self.high_hz && self.high_hz < nyquist) {
            return Err(FilterError::Config(format!(
                "bandpass edges must satisfy 0 < low < high < Nyquist ({nyquist} Hz), got {}..{}",
                self.low_hz, self.high_hz
            )));
        }
        Ok(())
    }
}

/// One biquad, `b0 + b1 z^-1 + b2 z^-2` over `1 + a1 z^-1 + a2 z^-2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    pub fn response(&self, w: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -w);
        let z2 = z1 * z1;
        (self.b[0] + self.b[1] * z1 + self.b[2] * z2) / (1.0 + self.a[0] * z1 + self.a[1] * z2)
    }

    /// Transposed direct form II over `buf`, starting from rest.
    fn run(&self, buf: &mut [f64]) {
        let (mut s1, mut s2) = (0.0, 0.0);
        for x in buf.iter_mut() {
            let y = self.b[0] * *x + s1;
            s1 = self.b[1] * *x - self.a[0] * y + s2;
            s2 = self.b[2] * *x - self.a[1] * y;
            *x = y;
        }
    }
}

/// Designed filter: biquads in cascade order.
#[derive(Debug, Clone, PartialEq)]
pub struct SosFilter {
    pub sections: Vec<Biquad>,
}

impl SosFilter {
    pub fn bandpass(cfg: &BandpassConfig, sample_rate: f64) -> Result<Self, FilterError> {
        cfg.validate(sample_rate)?;
        let n = cfg.order;
        let fs2 = 2.0 * sample_rate;
        let warp = |f: f64| fs2 * (PI * f / sample_rate).tan();
        let w_lo = warp(cfg.low_hz);
        let w_hi = warp(cfg.high_hz);
        let bw = w_hi - w_lo;
        let w0_sq = w_lo * w_hi;
        // digital centre frequency, rad/sample
        let center = 2.0 * (w0_sq.sqrt() / fs2).atan();

        let bilinear = |s: Complex64| (fs2 + s) / (fs2 - s);
        let section = |z1: Complex64, z2: Complex64| {
            let mut bq = Biquad {
                b: [1.0, 0.0, -1.0],
                a: [-(z1 + z2).re, (z1 * z2).re],
            };
            let g = bq.response(center).norm();
            for b in bq.b.iter_mut() {
                *b /= g;
            }
            bq
        };

        let mut sections = Vec::with_capacity(n);
        for k in 0..n {
            let p = Complex64::from_polar(1.0, PI * (2 * k + n + 1) as f64 / (2 * n) as f64);
            // Conjugate prototype poles yield the conjugate sections; keep the
            // upper half plane and the real pole of odd orders.
            if p.im < -1e-12 {
                continue;
            }
            let half = p * bw / 2.0;
            let root = (half * half - w0_sq).sqrt();
            let (sa, sb) = (half + root, half - root);
            if p.im.abs() <= 1e-12 {
                sections.push(section(bilinear(sa), bilinear(sb)));
            } else {
                let (za, zb) = (bilinear(sa), bilinear(sb));
                sections.push(section(za, za.conj()));
                sections.push(section(zb, zb.conj()));
            }
        }
        Ok(Self { sections })
    }

    /// Magnitude of the single-pass response at `freq_hz`.
    pub fn gain(&self, freq_hz: f64, sample_rate: f64) -> f64 {
        let w = 2.0 * PI * freq_hz / sample_rate;
        self.sections.iter().map(|s| s.response(w).norm()).product()
    }

    /// Causal single pass.
    pub fn filter(&self, buf: &mut [f64]) {
        for s in &self.sections {
            s.run(buf);
        }
    }

    /// Forward-backward pass with odd-reflection padding of `pad` samples
    /// at each end.
    pub fn filtfilt(&self, input: &[f64], pad: usize) -> Vec<f64> {
        let n = input.len();
        if n == 0 {
            return Vec::new();
        }
        let pad = pad.min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        let (first, last) = (input[0], input[n - 1]);
        ext.extend((1..=pad).rev().map(|i| 2.0 * first - input[i]));
        ext.extend_from_slice(input);
        ext.extend((1..=pad).map(|i| 2.0 * last - input[n - 1 - i]));

        self.filter(&mut ext);
        ext.reverse();
        self.filter(&mut ext);
        ext.reverse();
        ext.drain(..pad);
        ext.truncate(n);
        ext
    }
}

/// Zero-phase Butterworth bandpass of `samples`.
pub fn bandpass_samples(
    samples: &[f64],
    sample_rate: f64,
    cfg: &BandpassConfig,
) -> Result<Vec<f64>, FilterError> {
    let sos = SosFilter::bandpass(cfg, sample_rate)?;
    // six periods of the lower edge
    let pad = (6.0 * sample_rate / cfg.low_hz).ceil() as usize;
    Ok(sos.filtfilt(samples, pad))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Closed-form squared magnitude of the analog prototype evaluated at
    /// the pre-warped frequency.
    fn analytic_gain_sq(f: f64, fs: f64, cfg: &BandpassConfig) -> f64 {
        let warp = |x: f64| 2.0 * fs * (PI * x / fs).tan();
        let (wl, wh, w) = (warp(cfg.low_hz), warp(cfg.high_hz), warp(f));
        let x = (w * w - wl * wh) / (w * (wh - wl));
        1.0 / (1.0 + x.powi(2 * cfg.order as i32))
    }

    #[test]
    fn section_count_matches_order() {
        for order in 1..=8 {
            let cfg = BandpassConfig { order, ..Default::default() };
            let sos = SosFilter::bandpass(&cfg, 4000.0).unwrap();
            assert_eq!(sos.sections.len(), order);
        }
    }

    #[test]
    fn digital_response_matches_prototype() {
        let fs = 4000.0;
        for order in [1, 2, 5] {
            let cfg = BandpassConfig { order, ..Default::default() };
            let sos = SosFilter::bandpass(&cfg, fs).unwrap();
            for f in [3.0, 10.0, 20.0, 45.0, 70.0, 150.0, 250.0, 600.0, 1500.0] {
                let g = sos.gain(f, fs);
                let expect = analytic_gain_sq(f, fs, &cfg).sqrt();
                assert!((g - expect).abs() < 1e-9, "order {order} f {f}: {g} vs {expect}");
            }
        }
    }

    #[test]
    fn poles_inside_unit_circle() {
        let sos = SosFilter::bandpass(&BandpassConfig::default(), 4000.0).unwrap();
        for s in &sos.sections {
            // stable iff |a2| < 1 and |a1| < 1 + a2
            assert!(s.a[1].abs() < 1.0 && s.a[0].abs() < 1.0 + s.a[1], "{s:?}");
        }
    }

    #[test]
    fn rejects_edges_at_nyquist() {
        let cfg = BandpassConfig { low_hz: 20.0, high_hz: 2000.0, order: 5 };
        assert!(SosFilter::bandpass(&cfg, 4000.0).is_err());
        let cfg = BandpassConfig { low_hz: 300.0, high_hz: 250.0, order: 5 };
        assert!(SosFilter::bandpass(&cfg, 4000.0).is_err());
    }

    #[test]
    fn zero_in_zero_out() {
        let out = bandpass_samples(&[0.0; 1000], 4000.0, &BandpassConfig::default()).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn steady_state_gain_matches_squared_response() {
        let fs = 4000.0;
        let cfg = BandpassConfig::default();
        for f in [5.0, 30.0, 100.0, 240.0, 1000.0] {
            let x: Vec<f64> = (0..8000).map(|i| (2.0 * PI * f * i as f64 / fs).sin()).collect();
            let y = bandpass_samples(&x, fs, &cfg).unwrap();
            let peak = y[2000..6000].iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let expect = analytic_gain_sq(f, fs, &cfg);
            assert!((peak - expect).abs() < 0.01, "{f} Hz: {peak} vs {expect}");
        }
    }
}
