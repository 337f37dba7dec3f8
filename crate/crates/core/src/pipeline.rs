//! End-to-end segmentation and its flat `section.key = value` configuration.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::dp_labeler::{backtrack_onsets, correct_sequence, label_onsets, DpConfig, DpError, LabeledSequence};
use crate::filtering::{
    butterworth_bandpass, fft_filter_with_peaks, BandpassConfig, DominantPeaks, FftFilterConfig, FilterError,
};
use crate::onset::{detect_onsets_with_envelope, OnsetEnvelope, OnsetParams, OnsetSequence};
use crate::siamese::{Hyper, SiameseError, TrainConfig};
use crate::signal_io::{resample, PcgSignal, SignalError, CANONICAL_RATE};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("bad value {value:?} for `{key}`: {reason}")]
    Value { key: String, value: String, reason: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("cannot read config {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Dp(#[from] DpError),
    #[error(transparent)]
    Siamese(#[from] SiameseError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DpSettings {
    pub tau1: f64,
    pub tau2: f64,
    pub max_gap: f64,
    /// `alpha = alpha_scale * median(env_strength)` unless `alpha` is set.
    pub alpha_scale: f64,
    pub alpha: Option<f64>,
}

impl Default for DpSettings {
    fn default() -> Self {
        let d = DpConfig::default();
        Self {
            tau1: d.tau1,
            tau2: d.tau2,
            max_gap: d.max_gap,
            alpha_scale: 0.8,
            alpha: None,
        }
    }
}

impl DpSettings {
    pub fn resolve(&self, seq: &OnsetSequence) -> DpConfig {
        let base = DpConfig {
            tau1: self.tau1,
            tau2: self.tau2,
            max_gap: self.max_gap,
            alpha: self.alpha.unwrap_or(1.0),
        };
        match self.alpha {
            Some(_) => base,
            None => base.with_alpha_from_median(seq, self.alpha_scale),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SiameseSettings {
    pub hyper: Hyper,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub threshold: f64,
}

impl Default for SiameseSettings {
    fn default() -> Self {
        Self {
            hyper: Hyper::default(),
            learning_rate: 0.003,
            epochs: 10,
            batch_size: 32,
            threshold: 0.5,
        }
    }
}

impl SiameseSettings {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Processing rate; recordings at other rates are resampled.
    pub sample_rate: u32,
    pub bandpass: BandpassConfig,
    pub fft_filter: FftFilterConfig,
    pub onset: OnsetParams,
    pub dp: DpSettings,
    pub siamese: SiameseSettings,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            sample_rate: CANONICAL_RATE,
            bandpass: BandpassConfig::default(),
            fft_filter: FftFilterConfig::default(),
            onset: OnsetParams::default(),
            dp: DpSettings::default(),
            siamese: SiameseSettings::default(),
            seed: 0,
        }
    }
}

/// Every key with a one-line description.
pub const CONFIG_KEYS: &[(&str, &str)] = &[
    ("sample_rate", "processing rate in Hz"),
    ("seed", "seed for all randomness"),
    ("bandpass.low_hz", "lower cutoff, Hz"),
    ("bandpass.high_hz", "upper cutoff, Hz"),
    ("bandpass.order", "Butterworth prototype order"),
    ("fft_filter.n_dominant", "number of spectral peaks kept"),
    ("fft_filter.delta_hz", "half-width of each kept band, Hz"),
    ("fft_filter.smooth_hz", "half-width of the peak-picking smoother, Hz (0 = raw bins)"),
    ("onset.frame_len", "analysis frame, samples"),
    ("onset.hop", "frame hop, samples"),
    ("onset.n_mels", "mel bands"),
    ("onset.top_db", "log-power range below the maximum, dB (none = unbounded)"),
    ("onset.lag", "flux lag, frames"),
    ("onset.max_filter", "reference max filter width, bands"),
    ("onset.pre_max", "peak window before, frames"),
    ("onset.post_max", "peak window after, frames"),
    ("onset.pre_avg", "mean window before, frames"),
    ("onset.post_avg", "mean window after, frames"),
    ("onset.delta_scale", "peak threshold as a fraction of the envelope maximum"),
    ("onset.wait_s", "minimum spacing between onsets, s"),
    ("onset.backtrack", "roll peaks back to the preceding envelope minimum"),
    ("dp.tau1", "S1 to S2 threshold, s"),
    ("dp.tau2", "S2 to S1 threshold, s"),
    ("dp.max_gap", "longest transition considered, s"),
    ("dp.alpha_scale", "alpha as a multiple of the median onset strength"),
    ("dp.alpha", "fixed alpha (auto = use alpha_scale)"),
    ("siamese.event_len", "event length L"),
    ("siamese.n_filters", "convolution filters"),
    ("siamese.kernel_len", "convolution kernel length"),
    ("siamese.pool_len", "max-pool width"),
    ("siamese.embed_dim", "embedding size"),
    ("siamese.learning_rate", "SGD step size"),
    ("siamese.epochs", "training epochs"),
    ("siamese.batch_size", "pairs per mini-batch"),
    ("siamese.threshold", "mean similarity needed for S1"),
];

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| ConfigError::Value {
        key: key.to_string(),
        value: value.to_string(),
        reason: e.to_string(),
    })
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(ConfigError::Value {
            key: key.to_string(),
            value: value.to_string(),
            reason: "expected true or false".into(),
        }),
    }
}

fn parse_opt(key: &str, value: &str, none: &str) -> Result<Option<f64>, ConfigError> {
    if value == none {
        Ok(None)
    } else {
        parse_num(key, value).map(Some)
    }
}

fn fmt_opt(v: Option<f64>, none: &str) -> String {
    v.map_or_else(|| none.to_string(), |x| x.to_string())
}

impl PipelineConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        match key.trim() {
            "sample_rate" => self.sample_rate = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "bandpass.low_hz" => self.bandpass.low_hz = parse_num(key, v)?,
            "bandpass.high_hz" => self.bandpass.high_hz = parse_num(key, v)?,
            "bandpass.order" => self.bandpass.order = parse_num(key, v)?,
            "fft_filter.n_dominant" => self.fft_filter.n_dominant = parse_num(key, v)?,
            "fft_filter.delta_hz" => self.fft_filter.delta_hz = parse_num(key, v)?,
            "fft_filter.smooth_hz" => self.fft_filter.smooth_hz = parse_num(key, v)?,
            "onset.frame_len" => self.onset.frame_len = parse_num(key, v)?,
            "onset.hop" => self.onset.hop = parse_num(key, v)?,
            "onset.n_mels" => self.onset.n_mels = parse_num(key, v)?,
            "onset.top_db" => self.onset.top_db = parse_opt(key, v, "none")?,
            "onset.lag" => self.onset.lag = parse_num(key, v)?,
            "onset.max_filter" => self.onset.max_filter = parse_num(key, v)?,
            "onset.pre_max" => self.onset.pre_max = parse_num(key, v)?,
            "onset.post_max" => self.onset.post_max = parse_num(key, v)?,
            "onset.pre_avg" => self.onset.pre_avg = parse_num(key, v)?,
            "onset.post_avg" => self.onset.post_avg = parse_num(key, v)?,
            "onset.delta_scale" => self.onset.delta_scale = parse_num(key, v)?,
            "onset.wait_s" => self.onset.wait_s = parse_num(key, v)?,
            "onset.backtrack" => self.onset.backtrack = parse_bool(key, v)?,
            "dp.tau1" => self.dp.tau1 = parse_num(key, v)?,
            "dp.tau2" => self.dp.tau2 = parse_num(key, v)?,
            "dp.max_gap" => self.dp.max_gap = parse_num(key, v)?,
            "dp.alpha_scale" => self.dp.alpha_scale = parse_num(key, v)?,
            "dp.alpha" => self.dp.alpha = parse_opt(key, v, "auto")?,
            "siamese.event_len" => self.siamese.hyper.event_len = parse_num(key, v)?,
            "siamese.n_filters" => self.siamese.hyper.n_filters = parse_num(key, v)?,
            "siamese.kernel_len" => self.siamese.hyper.kernel_len = parse_num(key, v)?,
            "siamese.pool_len" => self.siamese.hyper.pool_len = parse_num(key, v)?,
            "siamese.embed_dim" => self.siamese.hyper.embed_dim = parse_num(key, v)?,
            "siamese.learning_rate" => self.siamese.learning_rate = parse_num(key, v)?,
            "siamese.epochs" => self.siamese.epochs = parse_num(key, v)?,
            "siamese.batch_size" => self.siamese.batch_size = parse_num(key, v)?,
            "siamese.threshold" => self.siamese.threshold = parse_num(key, v)?,
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let s = |v: &dyn ToString| Some(v.to_string());
        match key {
            "sample_rate" => s(&self.sample_rate),
            "seed" => s(&self.seed),
            "bandpass.low_hz" => s(&self.bandpass.low_hz),
            "bandpass.high_hz" => s(&self.bandpass.high_hz),
            "bandpass.order" => s(&self.bandpass.order),
            "fft_filter.n_dominant" => s(&self.fft_filter.n_dominant),
            "fft_filter.delta_hz" => s(&self.fft_filter.delta_hz),
            "fft_filter.smooth_hz" => s(&self.fft_filter.smooth_hz),
            "onset.frame_len" => s(&self.onset.frame_len),
            "onset.hop" => s(&self.onset.hop),
            "onset.n_mels" => s(&self.onset.n_mels),
            "onset.top_db" => Some(fmt_opt(self.onset.top_db, "none")),
            "onset.lag" => s(&self.onset.lag),
            "onset.max_filter" => s(&self.onset.max_filter),
            "onset.pre_max" => s(&self.onset.pre_max),
            "onset.post_max" => s(&self.onset.post_max),
            "onset.pre_avg" => s(&self.onset.pre_avg),
            "onset.post_avg" => s(&self.onset.post_avg),
            "onset.delta_scale" => s(&self.onset.delta_scale),
            "onset.wait_s" => s(&self.onset.wait_s),
            "onset.backtrack" => s(&self.onset.backtrack),
            "dp.tau1" => s(&self.dp.tau1),
            "dp.tau2" => s(&self.dp.tau2),
            "dp.max_gap" => s(&self.dp.max_gap),
            "dp.alpha_scale" => s(&self.dp.alpha_scale),
            "dp.alpha" => Some(fmt_opt(self.dp.alpha, "auto")),
            "siamese.event_len" => s(&self.siamese.hyper.event_len),
            "siamese.n_filters" => s(&self.siamese.hyper.n_filters),
            "siamese.kernel_len" => s(&self.siamese.hyper.kernel_len),
            "siamese.pool_len" => s(&self.siamese.hyper.pool_len),
            "siamese.embed_dim" => s(&self.siamese.hyper.embed_dim),
            "siamese.learning_rate" => s(&self.siamese.learning_rate),
            "siamese.epochs" => s(&self.siamese.epochs),
            "siamese.batch_size" => s(&self.siamese.batch_size),
            "siamese.threshold" => s(&self.siamese.threshold),
            _ => None,
        }
    }

    /// Applies `key = value` lines on top of `self`. `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                text: raw.to_string(),
            })?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        self.apply_text(&text)
    }

    /// Every key with its current value and description, parseable by
    /// [`PipelineConfig::from_text`].
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (key, doc) in CONFIG_KEYS {
            let _ = writeln!(out, "# {doc}\n{key} = {}", self.get(key).expect("listed key"));
        }
        out
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        if self.sample_rate == 0 {
            return Err(ConfigError::Invalid("sample_rate must be positive".into()));
        }
        self.bandpass.validate(self.sample_rate as f64).map_err(|e| invalid(&e))?;
        self.fft_filter.validate().map_err(|e| invalid(&e))?;
        self.onset.validate().map_err(|e| invalid(&e))?;
        let dp = DpConfig {
            tau1: self.dp.tau1,
            tau2: self.dp.tau2,
            max_gap: self.dp.max_gap,
            alpha: self.dp.alpha.unwrap_or(self.dp.alpha_scale),
        };
        dp.validate().map_err(|e| invalid(&e))?;
        self.siamese.hyper.validate().map_err(|e| invalid(&e))?;
        let s = &self.siamese;
        if !(s.learning_rate > 0.0) || s.batch_size == 0 || !(0.0..=1.0).contains(&s.threshold) {
            return Err(ConfigError::Invalid(
                "siamese: need learning_rate > 0, batch_size >= 1, threshold in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Intermediate and final products of one segmentation run.
#[derive(Debug, Clone)]
pub struct Segmentation {
    /// Bandpassed and dominant-frequency filtered signal at the processing rate.
    pub filtered: PcgSignal,
    pub peaks: DominantPeaks,
    pub envelope: OnsetEnvelope,
    pub onsets: OnsetSequence,
    pub dp: DpConfig,
    /// DP chain before correction.
    pub chain: LabeledSequence,
    /// Corrected and backtracked.
    pub labeled: LabeledSequence,
}

/// Resamples to the processing rate and applies both filters.
pub fn prefilter(signal: &PcgSignal, cfg: &PipelineConfig) -> Result<(PcgSignal, DominantPeaks), PipelineError> {
    signal.ensure_non_empty()?;
    let at_rate = if signal.sample_rate() == cfg.sample_rate {
        signal.clone()
    } else {
        resample(signal, cfg.sample_rate)?
    };
    let band = butterworth_bandpass(&at_rate, &cfg.bandpass)?;
    Ok(fft_filter_with_peaks(&band, &cfg.fft_filter)?)
}

/// Filter, detect onsets, label with the DP, correct, backtrack.
pub fn segment(signal: &PcgSignal, cfg: &PipelineConfig) -> Result<Segmentation, PipelineError> {
    cfg.validate()?;
    let (filtered, peaks) = prefilter(signal, cfg)?;
    let (onsets, envelope) = detect_onsets_with_envelope(&filtered, &cfg.onset);
    let dp = cfg.dp.resolve(&onsets);
    let chain = label_onsets(&onsets, &dp);
    let labeled = backtrack_onsets(&correct_sequence(&chain), &envelope);
    log::debug!(
        "segment: {} onsets, chain {}, final {} (alpha {:.4})",
        onsets.len(),
        chain.len(),
        labeled.len(),
        dp.alpha
    );
    Ok(Segmentation {
        filtered,
        peaks,
        envelope,
        onsets,
        dp,
        chain,
        labeled,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dp_labeler::{heart_rate, CycleDefinition};
    use crate::synth::{synthetic_pcg, SynthConfig};

    #[test]
    fn text_round_trip() {
        let mut cfg = PipelineConfig::default();
        cfg.dp.tau1 = 0.28;
        cfg.onset.top_db = None;
        cfg.dp.alpha = Some(0.4);
        cfg.seed = 99;
        let back = PipelineConfig::from_text(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn every_listed_key_is_settable() {
        let cfg = PipelineConfig::default();
        for (key, _) in CONFIG_KEYS {
            let mut c = cfg.clone();
            c.set(key, &cfg.get(key).unwrap()).unwrap();
            assert_eq!(c, cfg, "{key}");
        }
    }

    #[test]
    fn unknown_key_and_bad_value_rejected() {
        assert!(matches!(
            PipelineConfig::from_text("dp.tua1 = 0.3"),
            Err(ConfigError::UnknownKey(k)) if k == "dp.tua1"
        ));
        assert!(matches!(PipelineConfig::from_text("dp.tau1 = fast"), Err(ConfigError::Value { .. })));
        assert!(matches!(PipelineConfig::from_text("dp.tau1"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(PipelineConfig::from_text("dp.tau1 = 2.0"), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn comments_and_blank_lines() {
        let cfg = PipelineConfig::from_text("# header\n\nseed = 5 # trailing\n").unwrap();
        assert_eq!(cfg.seed, 5);
    }

    #[test]
    fn synthetic_segmentation_alternates_at_80_bpm() {
        let (sig, _) = synthetic_pcg(&SynthConfig { duration_s: 12.0, ..Default::default() }, "s");
        let seg = segment(&sig, &PipelineConfig::default()).unwrap();
        assert!(seg.labeled.is_alternating());
        let hr = heart_rate(&seg.labeled, CycleDefinition::S1ToS1).unwrap();
        assert!((hr - 80.0).abs() < 2.0, "{hr}");
    }

    #[test]
    fn resamples_foreign_rates() {
        let cfg = SynthConfig { duration_s: 6.0, sample_rate: 8000, ..Default::default() };
        let (sig, _) = synthetic_pcg(&cfg, "s");
        let seg = segment(&sig, &PipelineConfig::default()).unwrap();
        assert_eq!(seg.filtered.sample_rate(), CANONICAL_RATE);
        assert_eq!(seg.filtered.len(), 24000);
    }
}
