//! Siamese 1D-CNN over inter-onset event slices.
//!
//! The shared base network is valid convolution, ReLU, non-overlapping max
//! pooling, a dense layer, ReLU and L2 normalization. Two events are
//! compared by the dot product of their embeddings, which lies in `[0, 1]`
//! because the embeddings are non-negative unit vectors.

mod format;
mod grad;
mod train;

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::signal_io::PcgSignal;

pub use format::{
    decode_exemplars, decode_model, encode_exemplars, encode_model, read_exemplars, read_model, write_exemplars,
    write_model,
};
pub use grad::{loss, loss_gradient, Gradient};
pub use train::{evaluate_pairs, train, EpochStats, TrainConfig};

/// Added to every embedding component before normalization.
pub const EMBED_GUARD: f64 = 1e-12;
/// Variance floor of event standardization.
pub const VARIANCE_FLOOR: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum SiameseError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("event slice {start}..{end} is unusable: {reason}")]
    Slice { start: usize, end: usize, reason: String },
    #[error("need at least 2 class-1 events to build pairs, got {0}")]
    TooFewEvents(usize),
    #[error("no exemplars given")]
    NoExemplars,
    #[error("no training pairs given")]
    NoPairs,
    #[error("training diverged at epoch {epoch}, batch {batch}: loss {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },
    #[error("{0}")]
    Format(String),
    #[error("i/o error on {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Hyper {
    /// Event length L.
    pub event_len: usize,
    pub n_filters: usize,
    pub kernel_len: usize,
    pub pool_len: usize,
    pub embed_dim: usize,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            event_len: 512,
            n_filters: 8,
            kernel_len: 16,
            pool_len: 4,
            embed_dim: 32,
        }
    }
}

impl Hyper {
    pub fn conv_len(&self) -> usize {
        self.event_len + 1 - self.kernel_len
    }

    pub fn pooled_len(&self) -> usize {
        self.conv_len() / self.pool_len
    }

    pub fn flat_len(&self) -> usize {
        self.n_filters * self.pooled_len()
    }

    pub fn validate(&self) -> Result<(), SiameseError> {
        let all_positive = [self.event_len, self.n_filters, self.kernel_len, self.pool_len, self.embed_dim]
            .iter()
            .all(|&v| v > 0);
        if !all_positive {
            return Err(SiameseError::Config(format!("all sizes must be positive: {self:?}")));
        }
        if self.kernel_len > self.event_len || self.pooled_len() == 0 {
            return Err(SiameseError::Config(format!(
                "kernel {} and pool {} leave no pooled output for L = {}",
                self.kernel_len, self.pool_len, self.event_len
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SiameseModel {
    pub hyper: Hyper,
    /// `n_filters × kernel_len`, row-major.
    pub conv_kernels: Vec<f64>,
    pub conv_bias: Vec<f64>,
    /// `embed_dim × flat_len`, row-major.
    pub dense_weights: Vec<f64>,
    pub dense_bias: Vec<f64>,
}

impl SiameseModel {
    /// Glorot-uniform weights, zero biases.
    pub fn init(hyper: Hyper, seed: u64) -> Result<Self, SiameseError> {
        hyper.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut glorot = |n: usize, fan_in: usize, fan_out: usize| -> Vec<f64> {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            (0..n).map(|_| rng.random_range(-limit..=limit)).collect()
        };
        let conv_kernels = glorot(
            hyper.n_filters * hyper.kernel_len,
            hyper.kernel_len,
            hyper.n_filters * hyper.kernel_len,
        );
        let dense_weights = glorot(hyper.embed_dim * hyper.flat_len(), hyper.flat_len(), hyper.embed_dim);
        Ok(Self {
            hyper,
            conv_kernels,
            conv_bias: vec![0.0; hyper.n_filters],
            dense_weights,
            dense_bias: vec![0.0; hyper.embed_dim],
        })
    }

    pub fn validate(&self) -> Result<(), SiameseError> {
        let h = &self.hyper;
        h.validate()?;
        let expect = [
            ("conv_kernels", self.conv_kernels.len(), h.n_filters * h.kernel_len),
            ("conv_bias", self.conv_bias.len(), h.n_filters),
            ("dense_weights", self.dense_weights.len(), h.embed_dim * h.flat_len()),
            ("dense_bias", self.dense_bias.len(), h.embed_dim),
        ];
        for (name, got, want) in expect {
            if got != want {
                return Err(SiameseError::Config(format!("{name} has {got} values, expected {want}")));
            }
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.conv_kernels.len() + self.conv_bias.len() + self.dense_weights.len() + self.dense_bias.len()
    }

    pub(crate) fn tensors(&self) -> [&[f64]; 4] {
        [&self.conv_kernels, &self.conv_bias, &self.dense_weights, &self.dense_bias]
    }

    pub(crate) fn tensors_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [
            &mut self.conv_kernels,
            &mut self.conv_bias,
            &mut self.dense_weights,
            &mut self.dense_bias,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventSource {
    pub recording_id: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventImage {
    pub values: Vec<f64>,
    pub source: EventSource,
}

/// Resamples `samples[start..end]` to `len` points by linear interpolation
/// (end points aligned) and standardizes to zero mean, unit variance.
pub fn event_from_slice(slice: &[f64], len: usize) -> Vec<f64> {
    let n = slice.len();
    let mut out: Vec<f64> = if len == 1 {
        vec![slice[0]]
    } else {
        let step = (n - 1) as f64 / (len - 1) as f64;
        (0..len)
            .map(|i| {
                let pos = i as f64 * step;
                let k = (pos.floor() as usize).min(n - 2);
                let frac = pos - k as f64;
                slice[k] + frac * (slice[k + 1] - slice[k])
            })
            .collect()
    };
    // shifted by the first value so a constant slice gives exact zeros
    let shift = out[0];
    out.iter_mut().for_each(|v| *v -= shift);
    let mean = out.iter().sum::<f64>() / len as f64;
    let var = out.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / len as f64;
    let scale = var.max(VARIANCE_FLOOR).sqrt();
    for v in out.iter_mut() {
        *v = (*v - mean) / scale;
    }
    out
}

pub fn extract_event(
    signal: &PcgSignal,
    recording_id: &str,
    start: usize,
    end: usize,
    len: usize,
) -> Result<EventImage, SiameseError> {
    let slice_err = |reason: &str| SiameseError::Slice {
        start,
        end,
        reason: reason.to_string(),
    };
    if start >= end || end > signal.len() {
        return Err(slice_err(&format!("outside the signal of {} samples", signal.len())));
    }
    if end - start < 2 {
        return Err(slice_err("fewer than 2 samples"));
    }
    if len == 0 {
        return Err(slice_err("target length is 0"));
    }
    Ok(EventImage {
        values: event_from_slice(&signal.samples()[start..end], len),
        source: EventSource {
            recording_id: recording_id.to_string(),
            start,
            end,
        },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairSample {
    pub a: Arc<EventImage>,
    pub b: Arc<EventImage>,
    /// 1 for a positive pair, 0 for a negative one.
    pub target: f64,
}

/// All unordered class-1 pairs as positives, then every class-1 × class-2
/// pair as a negative.
pub fn make_pairs(class1: &[Arc<EventImage>], class2: &[Arc<EventImage>]) -> Result<Vec<PairSample>, SiameseError> {
    if class1.len() < 2 {
        return Err(SiameseError::TooFewEvents(class1.len()));
    }
    let n1 = class1.len();
    let mut pairs = Vec::with_capacity(n1 * (n1 - 1) / 2 + n1 * class2.len());
    for i in 0..n1 {
        for j in i + 1..n1 {
            pairs.push(PairSample {
                a: Arc::clone(&class1[i]),
                b: Arc::clone(&class1[j]),
                target: 1.0,
            });
        }
    }
    for a in class1 {
        for b in class2 {
            pairs.push(PairSample {
                a: Arc::clone(a),
                b: Arc::clone(b),
                target: 0.0,
            });
        }
    }
    Ok(pairs)
}

/// Intermediate activations of one forward pass.
#[derive(Debug, Clone)]
pub(crate) struct Forward {
    /// Pre-activation convolution output, `n_filters × conv_len`.
    pub conv: Vec<f64>,
    /// Flattened pooled activations and the conv index each came from.
    pub pooled: Vec<f64>,
    pub argmax: Vec<usize>,
    /// Pre-activation dense output.
    pub dense: Vec<f64>,
    /// Guarded vector before normalization and its norm.
    pub norm: f64,
    pub embedding: Vec<f64>,
}

pub(crate) fn forward(model: &SiameseModel, x: &[f64]) -> Forward {
    let h = &model.hyper;
    let (cl, pl, k) = (h.conv_len(), h.pooled_len(), h.kernel_len);
    let mut conv = vec![0.0; h.n_filters * cl];
    for f in 0..h.n_filters {
        let w = &model.conv_kernels[f * k..(f + 1) * k];
        for p in 0..cl {
            let mut acc = model.conv_bias[f];
            for (wi, xi) in w.iter().zip(&x[p..p + k]) {
                acc += wi * xi;
            }
            conv[f * cl + p] = acc;
        }
    }

    let mut pooled = vec![0.0; h.flat_len()];
    let mut argmax = vec![0; h.flat_len()];
    for f in 0..h.n_filters {
        for q in 0..pl {
            let base = f * cl + q * h.pool_len;
            let mut best = base;
            for i in base + 1..base + h.pool_len {
                if conv[i] > conv[best] {
                    best = i;
                }
            }
            pooled[f * pl + q] = conv[best].max(0.0);
            argmax[f * pl + q] = best;
        }
    }

    let flat = h.flat_len();
    let mut dense = vec![0.0; h.embed_dim];
    for (e, d) in dense.iter_mut().enumerate() {
        let row = &model.dense_weights[e * flat..(e + 1) * flat];
        *d = model.dense_bias[e] + row.iter().zip(&pooled).map(|(w, v)| w * v).sum::<f64>();
    }

    let guarded: Vec<f64> = dense.iter().map(|&u| u.max(0.0) + EMBED_GUARD).collect();
    let norm = guarded.iter().map(|v| v * v).sum::<f64>().sqrt();
    let embedding = guarded.iter().map(|v| v / norm).collect();
    Forward {
        conv,
        pooled,
        argmax,
        dense,
        norm,
        embedding,
    }
}

/// Unit-norm embedding of one event.
pub fn embed(model: &SiameseModel, event: &EventImage) -> Result<Vec<f64>, SiameseError> {
    if event.values.len() != model.hyper.event_len {
        return Err(SiameseError::Config(format!(
            "event has {} values, model expects {}",
            event.values.len(),
            model.hyper.event_len
        )));
    }
    Ok(forward(model, &event.values).embedding)
}

/// Dot product clamped to `[0, 1]`.
pub fn similarity(e1: &[f64], e2: &[f64]) -> f64 {
    e1.iter().zip(e2).map(|(a, b)| a * b).sum::<f64>().clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventClass {
    S1,
    NotS1,
}

/// Mean similarity against the exemplars, and the class it implies
/// (S1 iff the mean exceeds `threshold`).
pub fn classify_event(
    model: &SiameseModel,
    event: &EventImage,
    exemplars: &[Vec<f64>],
    threshold: f64,
) -> Result<(EventClass, f64), SiameseError> {
    if exemplars.is_empty() {
        return Err(SiameseError::NoExemplars);
    }
    let e = embed(model, event)?;
    let mean = exemplars.iter().map(|x| similarity(&e, x)).sum::<f64>() / exemplars.len() as f64;
    let class = if mean > threshold { EventClass::S1 } else { EventClass::NotS1 };
    Ok((class, mean))
}

/// Embeddings of a set of exemplar events.
pub fn embed_exemplars(model: &SiameseModel, events: &[Arc<EventImage>]) -> Result<Vec<Vec<f64>>, SiameseError> {
    events.iter().map(|e| embed(model, e)).collect()
}
