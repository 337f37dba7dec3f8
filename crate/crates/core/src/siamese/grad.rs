//! Binary cross-entropy on pair similarity and its gradient.

use rayon::prelude::*;

use super::{forward, Forward, PairSample, SiameseModel};

const PROB_CLAMP: f64 = 1e-7;

/// Parameter-shaped gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub conv_kernels: Vec<f64>,
    pub conv_bias: Vec<f64>,
    pub dense_weights: Vec<f64>,
    pub dense_bias: Vec<f64>,
}

impl Gradient {
    pub fn zeros_like(model: &SiameseModel) -> Self {
        Self {
            conv_kernels: vec![0.0; model.conv_kernels.len()],
            conv_bias: vec![0.0; model.conv_bias.len()],
            dense_weights: vec![0.0; model.dense_weights.len()],
            dense_bias: vec![0.0; model.dense_bias.len()],
        }
    }

    pub fn tensors(&self) -> [&[f64]; 4] {
        [&self.conv_kernels, &self.conv_bias, &self.dense_weights, &self.dense_bias]
    }

    fn tensors_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [
            &mut self.conv_kernels,
            &mut self.conv_bias,
            &mut self.dense_weights,
            &mut self.dense_bias,
        ]
    }

    fn add(&mut self, other: &Gradient) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }

    fn scale(&mut self, c: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= c);
        }
    }
}

fn bce(s: f64, target: f64) -> f64 {
    let p = s.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    -(target * p.ln() + (1.0 - target) * (1.0 - p).ln())
}

/// Loss of one pair.
pub fn loss(model: &SiameseModel, pair: &PairSample) -> f64 {
    let a = forward(model, &pair.a.values).embedding;
    let b = forward(model, &pair.b.values).embedding;
    bce(super::similarity(&a, &b), pair.target)
}

/// Accumulates the gradient of one branch given `dL/d(embedding)`.
fn backward(model: &SiameseModel, x: &[f64], f: &Forward, d_embed: &[f64], grad: &mut Gradient) {
    let h = &model.hyper;
    let (cl, k, flat) = (h.conv_len(), h.kernel_len, h.flat_len());

    // y = v / |v|  =>  dv = (g - y (y . g)) / |v|
    let yg: f64 = f.embedding.iter().zip(d_embed).map(|(y, g)| y * g).sum();
    let d_dense: Vec<f64> = f
        .embedding
        .iter()
        .zip(d_embed)
        .zip(&f.dense)
        .map(|((y, g), &u)| if u > 0.0 { (g - y * yg) / f.norm } else { 0.0 })
        .collect();

    let mut d_pooled = vec![0.0; flat];
    for (e, &du) in d_dense.iter().enumerate() {
        if du == 0.0 {
            continue;
        }
        grad.dense_bias[e] += du;
        let row = &model.dense_weights[e * flat..(e + 1) * flat];
        let g_row = &mut grad.dense_weights[e * flat..(e + 1) * flat];
        for j in 0..flat {
            g_row[j] += du * f.pooled[j];
            d_pooled[j] += du * row[j];
        }
    }

    let mut d_conv = vec![0.0; h.n_filters * cl];
    for (j, &dp) in d_pooled.iter().enumerate() {
        let i = f.argmax[j];
        if f.conv[i] > 0.0 {
            d_conv[i] += dp;
        }
    }
    for filt in 0..h.n_filters {
        let g_w = &mut grad.conv_kernels[filt * k..(filt + 1) * k];
        for p in 0..cl {
            let dz = d_conv[filt * cl + p];
            if dz == 0.0 {
                continue;
            }
            grad.conv_bias[filt] += dz;
            for (g, xi) in g_w.iter_mut().zip(&x[p..p + k]) {
                *g += dz * xi;
            }
        }
    }
}

fn pair_gradient(model: &SiameseModel, pair: &PairSample) -> (f64, Gradient) {
    let fa = forward(model, &pair.a.values);
    let fb = forward(model, &pair.b.values);
    let dot: f64 = fa.embedding.iter().zip(&fb.embedding).map(|(a, b)| a * b).sum();
    let s = dot.clamp(0.0, 1.0);
    let value = bce(s, pair.target);

    let mut grad = Gradient::zeros_like(model);
    let p = s.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    // the clamps pass no gradient where they bind
    let inside = dot > PROB_CLAMP && dot < 1.0 - PROB_CLAMP;
    if inside {
        let ds = (p - pair.target) / (p * (1.0 - p));
        let ga: Vec<f64> = fb.embedding.iter().map(|v| ds * v).collect();
        let gb: Vec<f64> = fa.embedding.iter().map(|v| ds * v).collect();
        backward(model, &pair.a.values, &fa, &ga, &mut grad);
        backward(model, &pair.b.values, &fb, &gb, &mut grad);
    }
    (value, grad)
}

/// Mean loss over `batch` and its gradient. Per-pair work runs in parallel;
/// the reduction is a sequential fold in batch order.
pub fn loss_gradient(model: &SiameseModel, batch: &[PairSample]) -> (f64, Gradient) {
    let parts: Vec<(f64, Gradient)> = batch.par_iter().map(|p| pair_gradient(model, p)).collect();
    let mut total = Gradient::zeros_like(model);
    let mut sum = 0.0;
    for (l, g) in &parts {
        sum += l;
        total.add(g);
    }
    if !batch.is_empty() {
        let inv = 1.0 / batch.len() as f64;
        total.scale(inv);
        sum *= inv;
    }
    (sum, total)
}
