//! Event images cut from recordings between consecutive heart sounds.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::eval::{discover, EvalError};
use crate::pipeline::{prefilter, segment, PipelineConfig, Segmentation};
use crate::siamese::{extract_event, EventImage, PairSample, SiameseError};
use crate::signal_io::{load_annotations, read_wav, AnnotationSet, PcgSignal, SoundLabel};

/// Events starting at an S1 and events starting anywhere else.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledEvents {
    pub s1: Vec<Arc<EventImage>>,
    pub other: Vec<Arc<EventImage>>,
}

impl LabeledEvents {
    fn extend(&mut self, more: LabeledEvents) {
        self.s1.extend(more.s1);
        self.other.extend(more.other);
    }
}

fn rescale(sample: u64, from: u32, to: u32) -> usize {
    (sample as f64 * to as f64 / from as f64).round() as usize
}

/// One event per pair of consecutive annotations, classed by the first.
///
/// Annotations are at `native_rate`; `filtered` may be at another rate.
/// Spans shorter than two samples after rescaling are dropped.
pub fn annotated_events(
    filtered: &PcgSignal,
    annotations: &AnnotationSet,
    native_rate: u32,
    len: usize,
) -> Result<LabeledEvents, SiameseError> {
    let rate = filtered.sample_rate();
    let mut out = LabeledEvents::default();
    for w in annotations.entries().windows(2) {
        let start = rescale(w[0].time, native_rate, rate);
        let end = rescale(w[1].time, native_rate, rate).min(filtered.len());
        if end < start + 2 {
            log::debug!("{}: span {start}..{end} too short, dropped", annotations.recording_id);
            continue;
        }
        let ev = Arc::new(extract_event(filtered, &annotations.recording_id, start, end, len)?);
        match w[0].label {
            SoundLabel::S1 => out.s1.push(ev),
            SoundLabel::S2 => out.other.push(ev),
        }
    }
    Ok(out)
}

/// Events between consecutive segmented onsets, with the index of the
/// onset each one starts at.
pub fn segment_events(
    seg: &Segmentation,
    recording_id: &str,
    len: usize,
) -> Result<Vec<(usize, EventImage)>, SiameseError> {
    let rate = seg.filtered.sample_rate() as f64;
    let n = seg.filtered.len();
    let mut out = Vec::new();
    for (i, w) in seg.labeled.onsets.windows(2).enumerate() {
        let start = (w[0].time * rate).round() as usize;
        let end = ((w[1].time * rate).round() as usize).min(n);
        if end >= start + 2 {
            out.push((i, extract_event(&seg.filtered, recording_id, start, end, len)?));
        }
    }
    Ok(out)
}

/// Where training events are cut.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EventSpans {
    /// Between consecutive annotations.
    Annotated,
    /// Between consecutive segmented onsets, classed by the annotation
    /// nearest each event's start. Matches what `segment_events` produces.
    #[default]
    Segmented,
}

/// Segmented events whose start lies within `tolerance_s` of an
/// annotation, classed by that annotation's label.
pub fn matched_events(
    seg: &Segmentation,
    annotations: &AnnotationSet,
    native_rate: u32,
    len: usize,
    tolerance_s: f64,
) -> Result<LabeledEvents, SiameseError> {
    let truth: Vec<(f64, SoundLabel)> = annotations
        .entries()
        .iter()
        .map(|a| (a.time as f64 / native_rate as f64, a.label))
        .collect();
    let mut out = LabeledEvents::default();
    for (i, ev) in segment_events(seg, &annotations.recording_id, len)? {
        let t = seg.labeled.onsets[i].time;
        let nearest = truth
            .iter()
            .min_by(|a, b| (a.0 - t).abs().total_cmp(&(b.0 - t).abs()))
            .filter(|a| (a.0 - t).abs() <= tolerance_s);
        match nearest {
            Some((_, SoundLabel::S1)) => out.s1.push(Arc::new(ev)),
            Some((_, SoundLabel::S2)) => out.other.push(Arc::new(ev)),
            None => log::debug!("{}: onset at {t:.3} s matches no annotation", annotations.recording_id),
        }
    }
    Ok(out)
}

/// Largest onset-to-annotation distance accepted by [`dataset_events`].
pub const MATCH_TOLERANCE_S: f64 = 0.1;

fn subsample(events: Vec<Arc<EventImage>>, max: usize, rng: &mut ChaCha8Rng) -> Vec<Arc<EventImage>> {
    if events.len() <= max {
        return events;
    }
    let mut keep = rand::seq::index::sample(rng, events.len(), max).into_vec();
    keep.sort_unstable();
    keep.into_iter().map(|i| events[i].clone()).collect()
}

/// Which recordings of a directory feed training and how much of each
/// class is kept. All draws are seeded from the pipeline seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EventSelection {
    pub spans: EventSpans,
    /// Annotated recordings drawn at random; all when `None`.
    pub recordings: Option<usize>,
    pub max_per_class: usize,
}

impl Default for EventSelection {
    fn default() -> Self {
        Self {
            spans: EventSpans::default(),
            recordings: None,
            max_per_class: 100,
        }
    }
}

/// Labeled events from the annotated recordings of `dir` chosen by `sel`,
/// plus the ids of those recordings in name order.
pub fn dataset_events(
    dir: &Path,
    cfg: &PipelineConfig,
    sel: &EventSelection,
) -> Result<(LabeledEvents, Vec<String>), EvalError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut annotated = Vec::new();
    for (wav, ann) in discover(dir)? {
        match ann {
            Some(ann) => annotated.push((wav, ann)),
            None => log::warn!("{}: no annotation file, skipped", wav.display()),
        }
    }
    if let Some(k) = sel.recordings.filter(|&k| k < annotated.len()) {
        let mut keep = rand::seq::index::sample(&mut rng, annotated.len(), k).into_vec();
        keep.sort_unstable();
        annotated = keep.into_iter().map(|i| annotated[i].clone()).collect();
    }

    let mut all = LabeledEvents::default();
    let mut ids = Vec::new();
    for (wav, ann) in &annotated {
        let id = wav.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
        let signal = read_wav(wav)?;
        let annotations = load_annotations(ann)?;
        let pipeline = |source| EvalError::Pipeline {
            recording: id.clone(),
            source,
        };
        let (rate, len) = (signal.sample_rate(), cfg.siamese.hyper.event_len);
        let events = match sel.spans {
            EventSpans::Annotated => {
                let (filtered, _) = prefilter(&signal, cfg).map_err(pipeline)?;
                annotated_events(&filtered, &annotations, rate, len)
            }
            EventSpans::Segmented => {
                let seg = segment(&signal, cfg).map_err(pipeline)?;
                matched_events(&seg, &annotations, rate, len, MATCH_TOLERANCE_S)
            }
        }
        .map_err(|e| pipeline(e.into()))?;
        all.extend(events);
        ids.push(id);
    }
    let events = LabeledEvents {
        s1: subsample(all.s1, sel.max_per_class, &mut rng),
        other: subsample(all.other, sel.max_per_class, &mut rng),
    };
    Ok((events, ids))
}

/// At most `max` of `events`, drawn with `seed`, in their original order.
pub fn choose_events(events: &[Arc<EventImage>], max: usize, seed: u64) -> Vec<Arc<EventImage>> {
    subsample(events.to_vec(), max, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// `a_recording,a_start,a_end,b_recording,b_start,b_end,target` rows.
pub fn pairs_csv(pairs: &[PairSample]) -> String {
    let mut out = String::from("a_recording,a_start,a_end,b_recording,b_start,b_end,target\n");
    for p in pairs {
        let (a, b) = (&p.a.source, &p.b.source);
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            a.recording_id, a.start, a.end, b.recording_id, b.start, b.end, p.target
        );
    }
    out
}
