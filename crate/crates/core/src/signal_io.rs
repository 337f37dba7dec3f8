//! Recording and annotation I/O.
//!
//! WAV decoding goes through `hound`; everything downstream sees a
//! [`PcgSignal`] of `f64` samples normalized to `[-1, 1]`. Annotation files
//! are small delimited text tables of `time_samples,label` rows.

use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::io;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Processing rate every recording is brought to before analysis.
pub const CANONICAL_RATE: u32 = 4000;

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("i/o error on {path}")]
    Io { path: String, source: io::Error },
    #[error("malformed WAV file: {0}")]
    Format(String),
    #[error("unsupported WAV encoding: {0}")]
    Unsupported(String),
    #[error("invalid signal: {0}")]
    Invalid(String),
    #[error("{path}:{row}: {message}")]
    Parse {
        path: String,
        row: usize,
        message: String,
    },
    #[error("{path}: annotation times not strictly ascending at row {row} ({prev} then {time})")]
    NonMonotone {
        path: String,
        row: usize,
        prev: u64,
        time: u64,
    },
}

/// A mono sampled recording.
#[derive(Debug, Clone, PartialEq)]
pub struct PcgSignal {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl PcgSignal {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self, SignalError> {
        if sample_rate == 0 {
            return Err(SignalError::Invalid("sample rate must be positive".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Same rate, new samples.
    pub fn with_samples(&self, samples: Vec<f64>) -> Self {
        Self {
            samples,
            sample_rate: self.sample_rate,
        }
    }

    /// Errors if the signal cannot enter the pipeline.
    pub fn ensure_non_empty(&self) -> Result<(), SignalError> {
        if self.samples.is_empty() {
            Err(SignalError::Invalid("signal has no samples".into()))
        } else {
            Ok(())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SoundLabel {
    S1,
    S2,
}

impl SoundLabel {
    pub fn other(self) -> Self {
        match self {
            SoundLabel::S1 => SoundLabel::S2,
            SoundLabel::S2 => SoundLabel::S1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SoundLabel::S1 => "S1",
            SoundLabel::S2 => "S2",
        }
    }
}

impl fmt::Display for SoundLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SoundLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "S1" | "s1" => Ok(SoundLabel::S1),
            "S2" | "s2" => Ok(SoundLabel::S2),
            other => Err(format!("unknown label {other:?} (expected S1 or S2)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Annotation {
    /// Sample index at the recording's native rate.
    pub time: u64,
    pub label: SoundLabel,
}

/// Ground-truth heart sound positions for one recording.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationSet {
    pub recording_id: String,
    entries: Vec<Annotation>,
}

impl AnnotationSet {
    /// Builds a set, rejecting entries that are not strictly ascending.
    pub fn new(recording_id: impl Into<String>, entries: Vec<Annotation>) -> Result<Self, SignalError> {
        let recording_id = recording_id.into();
        for (row, pair) in entries.windows(2).enumerate() {
            if pair[1].time <= pair[0].time {
                return Err(SignalError::NonMonotone {
                    path: recording_id,
                    row: row + 2,
                    prev: pair[0].time,
                    time: pair[1].time,
                });
            }
        }
        Ok(Self {
            recording_id,
            entries,
        })
    }

    pub fn entries(&self) -> &[Annotation] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> SignalError + '_ {
    move |source| SignalError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Reads channel 0 of a PCM or 32-bit float WAV file.
///
/// Integer samples are divided by `2^(bits-1)`.
pub fn read_wav(path: impl AsRef<Path>) -> Result<PcgSignal, SignalError> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| map_hound(path, e))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(SignalError::Format("zero channels".into()));
    }
    if channels > 1 {
        log::warn!(
            "{}: {} channels, using channel 0 only",
            path.display(),
            channels
        );
    }

    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .step_by(channels)
            .map(|s| s.map(f64::from))
            .collect::<Result<_, _>>()
            .map_err(|e| map_hound(path, e))?,
        (hound::SampleFormat::Int, bits @ (8 | 16 | 24 | 32)) => {
            let scale = (1u64 << (bits - 1)) as f64;
            reader
                .into_samples::<i32>()
                .step_by(channels)
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<Result<_, _>>()
                .map_err(|e| map_hound(path, e))?
        }
        (format, bits) => {
            return Err(SignalError::Unsupported(format!(
                "{format:?} samples with {bits} bits"
            )))
        }
    };

    PcgSignal::new(samples, spec.sample_rate)
}

fn map_hound(path: &Path, err: hound::Error) -> SignalError {
    match err {
        hound::Error::IoError(e) if e.kind() == io::ErrorKind::UnexpectedEof => {
            SignalError::Format(format!("{}: truncated file", path.display()))
        }
        hound::Error::IoError(e) => io_err(path)(e),
        hound::Error::FormatError(msg) => SignalError::Format(format!("{}: {msg}", path.display())),
        hound::Error::Unsupported => {
            SignalError::Unsupported(format!("{}: non-PCM or unknown encoding", path.display()))
        }
        other => SignalError::Format(format!("{}: {other}", path.display())),
    }
}

/// Writes a mono 16-bit PCM WAV. Samples are clamped to `[-1, 1]`.
pub fn write_wav(path: impl AsRef<Path>, signal: &PcgSignal) -> Result<(), SignalError> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: signal.sample_rate(),
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| map_hound(path, e))?;
    for &s in signal.samples() {
        let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(v).map_err(|e| map_hound(path, e))?;
    }
    writer.finalize().map_err(|e| map_hound(path, e))
}

/// Zeros crossed by the interpolation kernel on each side.
const SINC_HALF_ZEROS: f64 = 32.0;
/// Passband edge as a fraction of the lower Nyquist rate.
const SINC_ROLLOFF: f64 = 0.95;

/// Band-limited resampling with a Blackman-windowed sinc kernel.
///
/// Every output sample is normalized by its kernel weight sum, so constant
/// signals pass unchanged, including near the edges.
pub fn resample(signal: &PcgSignal, target_rate: u32) -> Result<PcgSignal, SignalError> {
    if target_rate == 0 {
        return Err(SignalError::Invalid("target rate must be positive".into()));
    }
    let src_rate = signal.sample_rate();
    if src_rate == target_rate || signal.is_empty() {
        return PcgSignal::new(signal.samples().to_vec(), target_rate);
    }

    let input = signal.samples();
    let ratio = target_rate as f64 / src_rate as f64;
    let out_len = ((input.len() as f64) * ratio).round().max(1.0) as usize;
    // Cutoff in cycles per input sample.
    let cutoff = 0.5 * SINC_ROLLOFF * ratio.min(1.0);
    let half_width = SINC_HALF_ZEROS / (2.0 * cutoff);

    let mut out = Vec::with_capacity(out_len);
    for m in 0..out_len {
        let center = m as f64 / ratio;
        let lo = ((center - half_width).ceil().max(0.0)) as usize;
        let hi = ((center + half_width).floor() as usize).min(input.len() - 1);
        let mut acc = 0.0;
        let mut wsum = 0.0;
        for (n, &x) in input.iter().enumerate().take(hi + 1).skip(lo) {
            let d = n as f64 - center;
            let w = sinc(2.0 * cutoff * d) * blackman(d / half_width);
            acc += w * x;
            wsum += w;
        }
        out.push(if wsum.abs() > 1e-12 { acc / wsum } else { 0.0 });
    }
    PcgSignal::new(out, target_rate)
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Blackman window on `u ∈ [-1, 1]`, zero outside.
fn blackman(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        return 0.0;
    }
    let t = PI * (u + 1.0);
    0.42 - 0.5 * t.cos() + 0.08 * (2.0 * t).cos()
}

/// Loads a `time_samples,label` table (comma or tab separated).
///
/// A first row whose first field is not numeric is treated as a header.
/// The recording id is the file stem.
pub fn load_annotations(path: impl AsRef<Path>) -> Result<AnnotationSet, SignalError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_annotations(&id, &path.display().to_string(), &text)
}

pub(crate) fn parse_annotations(
    recording_id: &str,
    origin: &str,
    text: &str,
) -> Result<AnnotationSet, SignalError> {
    let parse_err = |row: usize, message: String| SignalError::Parse {
        path: origin.to_string(),
        row,
        message,
    };

    let mut entries: Vec<Annotation> = Vec::new();
    let mut seen_content = false;
    for (idx, line) in text.lines().enumerate() {
        let row = idx + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split([',', '\t']).map(str::trim);
        let time_field = fields.next().unwrap_or("");
        let first_row = !seen_content;
        seen_content = true;
        let time = match parse_time(time_field) {
            Some(t) => t,
            None if first_row && time_field.parse::<f64>().is_err() => continue,
            None => return Err(parse_err(row, format!("invalid time {time_field:?}"))),
        };
        let label_field = fields
            .next()
            .ok_or_else(|| parse_err(row, "missing label column".into()))?;
        let label: SoundLabel = label_field.parse().map_err(|m| parse_err(row, m))?;
        if let Some(prev) = entries.last() {
            if time <= prev.time {
                return Err(SignalError::NonMonotone {
                    path: origin.to_string(),
                    row,
                    prev: prev.time,
                    time,
                });
            }
        }
        entries.push(Annotation { time, label });
    }
    Ok(AnnotationSet {
        recording_id: recording_id.to_string(),
        entries,
    })
}

/// Integer sample index, also accepting integral floats such as `1200.0`.
fn parse_time(field: &str) -> Option<u64> {
    if let Ok(v) = field.parse::<u64>() {
        return Some(v);
    }
    let v = field.parse::<f64>().ok()?;
    (v.is_finite() && v >= 0.0 && v.fract() == 0.0).then_some(v as u64)
}

/// Writes annotations in the format [`load_annotations`] reads.
pub fn write_annotations(path: impl AsRef<Path>, set: &AnnotationSet) -> Result<(), SignalError> {
    let path = path.as_ref();
    let mut text = String::from("time_samples,label\n");
    for a in set.entries() {
        text.push_str(&format!("{},{}\n", a.time, a.label));
    }
    fs::write(path, text).map_err(io_err(path))
}
