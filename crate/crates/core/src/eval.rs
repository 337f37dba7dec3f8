//! Total segmentation error against annotated heart sounds.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::dp_labeler::LabeledSequence;
use crate::pipeline::{segment, PipelineConfig, PipelineError};
use crate::signal_io::{load_annotations, read_wav, AnnotationSet, SignalError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("cannot list {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error("recording {recording} failed")]
    Pipeline {
        recording: String,
        #[source]
        source: PipelineError,
    },
    #[error("could not start {0} worker threads: {1}")]
    Threads(usize, String),
}

/// How predictions are paired with annotations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatchRule {
    /// Each annotation against the nearest prediction with its label.
    #[default]
    NearestSameLabel,
    /// The k-th annotation against the k-th prediction.
    IndexAligned,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecordingScore {
    pub samples: f64,
    pub seconds: f64,
    /// Some annotation had no prediction it could be matched under the rule.
    pub flagged: bool,
}

pub fn samples_to_seconds(samples: f64, sample_rate: u32) -> f64 {
    samples / sample_rate as f64
}

/// Error of one recording in annotation sample units.
///
/// Predicted times (seconds) are converted with `sample_rate` and rounded
/// to the nearest sample. An annotation without a same-label prediction
/// falls back to the nearest prediction of any label; with no predictions
/// at all it contributes its own offset from the start of the recording.
/// Either fallback flags the recording.
pub fn total_error(predicted: &LabeledSequence, annotated: &AnnotationSet, sample_rate: u32, rule: MatchRule) -> RecordingScore {
    let pred: Vec<(i64, _)> = predicted
        .onsets
        .iter()
        .map(|o| ((o.time * sample_rate as f64).round() as i64, o.label))
        .collect();
    let mut flagged = false;
    let mut sum = 0.0;
    for (k, a) in annotated.entries().iter().enumerate() {
        let t = a.time as i64;
        let nearest = |label_filter: Option<crate::signal_io::SoundLabel>| {
            pred.iter()
                .filter(|(_, l)| label_filter.is_none_or(|want| *l == want))
                .map(|(p, _)| (p - t).abs())
                .min()
        };
        let d = match rule {
            MatchRule::NearestSameLabel => nearest(Some(a.label)).or_else(|| {
                flagged = true;
                nearest(None)
            }),
            MatchRule::IndexAligned => match pred.get(k) {
                Some((p, _)) => Some((p - t).abs()),
                None => {
                    flagged = true;
                    nearest(None)
                }
            },
        };
        sum += match d {
            Some(d) => d as f64,
            None => {
                flagged = true;
                t as f64
            }
        };
    }
    RecordingScore {
        samples: sum,
        seconds: samples_to_seconds(sum, sample_rate),
        flagged,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecordingError {
    pub recording_id: String,
    pub error_samples: f64,
    pub error_seconds: f64,
    pub n_annotated: usize,
    pub n_predicted: usize,
    pub sample_rate: u32,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorReport {
    pub rule: MatchRule,
    pub per_recording: Vec<RecordingError>,
    pub total_samples: f64,
    pub total_seconds: f64,
}

impl ErrorReport {
    /// Sums in the given order.
    pub fn from_rows(rule: MatchRule, per_recording: Vec<RecordingError>) -> Self {
        let (total_samples, total_seconds) = per_recording
            .iter()
            .fold((0.0, 0.0), |(s, t), r| (s + r.error_samples, t + r.error_seconds));
        Self {
            rule,
            per_recording,
            total_samples,
            total_seconds,
        }
    }

    pub fn any_flagged(&self) -> bool {
        self.per_recording.iter().any(|r| r.flagged)
    }

    /// One row per recording, then a `TOTAL` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("recording,error_samples,error_seconds,n_annotated,n_predicted,sample_rate,flagged\n");
        for r in &self.per_recording {
            let _ = writeln!(
                out,
                "{},{},{:.6},{},{},{},{}",
                r.recording_id, r.error_samples, r.error_seconds, r.n_annotated, r.n_predicted, r.sample_rate, r.flagged
            );
        }
        let _ = writeln!(
            out,
            "TOTAL,{},{:.6},{},{},,{}",
            self.total_samples,
            self.total_seconds,
            self.per_recording.iter().map(|r| r.n_annotated).sum::<usize>(),
            self.per_recording.iter().map(|r| r.n_predicted).sum::<usize>(),
            self.any_flagged()
        );
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

const ANNOTATION_EXTENSIONS: [&str; 3] = ["csv", "tsv", "txt"];

/// WAV files of `dir` in name order, each with its annotation file if one
/// shares its stem.
pub fn discover(dir: &Path) -> Result<Vec<(PathBuf, Option<PathBuf>)>, EvalError> {
    let io = |source| EvalError::Io {
        path: dir.display().to_string(),
        source,
    };
    let mut wavs: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    wavs.sort();
    Ok(wavs
        .into_iter()
        .map(|w| {
            let ann = ANNOTATION_EXTENSIONS
                .iter()
                .map(|ext| w.with_extension(ext))
                .find(|p| p.is_file());
            (w, ann)
        })
        .collect())
}

fn evaluate_one(wav: &Path, ann: &Path, cfg: &PipelineConfig, rule: MatchRule) -> Result<RecordingError, EvalError> {
    let id = wav.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    let signal = read_wav(wav)?;
    let annotations = load_annotations(ann)?;
    let seg = segment(&signal, cfg).map_err(|source| EvalError::Pipeline {
        recording: id.clone(),
        source,
    })?;
    let rate = signal.sample_rate();
    let score = total_error(&seg.labeled, &annotations, rate, rule);
    if score.flagged {
        log::warn!("{id}: some annotations had no prediction of their label");
    }
    Ok(RecordingError {
        recording_id: id,
        error_samples: score.samples,
        error_seconds: score.seconds,
        n_annotated: annotations.len(),
        n_predicted: seg.labeled.len(),
        sample_rate: rate,
        flagged: score.flagged,
    })
}

/// Runs the full pipeline on every annotated recording of `dir` using up
/// to `jobs` threads. Rows keep file-name order regardless of `jobs`.
pub fn evaluate_dataset(dir: &Path, cfg: &PipelineConfig, jobs: usize, rule: MatchRule) -> Result<ErrorReport, EvalError> {
    let mut work = Vec::new();
    for (wav, ann) in discover(dir)? {
        match ann {
            Some(a) => work.push((wav, a)),
            None => log::warn!("{}: no annotation file, skipped", wav.display()),
        }
    }
    let jobs = jobs.max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| EvalError::Threads(jobs, e.to_string()))?;
    let rows: Vec<Result<RecordingError, EvalError>> =
        pool.install(|| work.par_iter().map(|(w, a)| evaluate_one(w, a, cfg, rule)).collect());
    let rows = rows.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(ErrorReport::from_rows(rule, rows))
}
