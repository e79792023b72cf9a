//! Product quantization of latent frames with Gumbel-softmax training.

use rand::Rng;

use crate::neural::{argmax, Graph, Linear, ParamId, ParamStore, Tensor, Var};
use crate::rng::{uniform, StreamRng};

/// `groups` codebooks of `entries` vectors each; a frame selects one entry
/// per group and the selections are concatenated.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebooks {
    pub groups: usize,
    pub entries: usize,
    /// Width of the concatenated code vector.
    pub d_code: usize,
    /// Gumbel-softmax temperature used when sampling in training mode.
    pub temperature: f64,
    pub logits: Linear,
    pub books: Vec<ParamId>,
}

impl Codebooks {
    pub fn new(
        store: &mut ParamStore<f64>,
        d_latent: usize,
        groups: usize,
        entries: usize,
        d_code: usize,
        rng: &mut StreamRng,
    ) -> Self {
        assert!(groups >= 1 && entries >= 1 && d_code % groups == 0, "invalid codebook geometry");
        // unit-variance weights so that code choices, not Gumbel noise, drive
        // the first updates
        let n = groups * entries;
        let w = (0..d_latent * n).map(|_| uniform(rng, -3f64.sqrt(), 3f64.sqrt())).collect();
        let w = store.add("quantizer.logits.weight", Tensor::from_rows(d_latent, n, w));
        let b = store.add("quantizer.logits.bias", Tensor::zeros(1, n));
        let logits = Linear { w, b, d_in: d_latent, d_out: n };
        let width = d_code / groups;
        let books = (0..groups)
            .map(|g| {
                let values = (0..entries * width).map(|_| uniform(rng, -1.0, 1.0)).collect();
                store.add(format!("quantizer.codebook{g}"), Tensor::from_rows(entries, width, values))
            })
            .collect();
        Self { groups, entries, d_code, temperature: 2.0, logits, books }
    }

    /// Size of the composite vocabulary, `entries ^ groups`.
    pub fn vocab_size(&self) -> usize {
        self.entries.pow(self.groups as u32)
    }

    /// Group 0 is the most significant digit.
    pub fn composite_id(&self, per_group: &[usize]) -> usize {
        per_group.iter().fold(0, |acc, &j| acc * self.entries + j)
    }

    pub fn split_id(&self, id: usize) -> Vec<usize> {
        let mut digits = vec![0; self.groups];
        let mut rest = id;
        for g in (0..self.groups).rev() {
            digits[g] = rest % self.entries;
            rest /= self.entries;
        }
        digits
    }

    /// Concatenated code vector for a composite id.
    pub fn code_vector(&self, store: &ParamStore<f64>, id: usize) -> Vec<f64> {
        self.split_id(id)
            .into_iter()
            .zip(&self.books)
            .flat_map(|(j, &book)| store.get(book).row(j).to_vec())
            .collect()
    }
}

/// Discrete units for a run of frames.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedUnits {
    /// Composite ids in `[0, entries ^ groups)`.
    pub ids: Vec<usize>,
    /// `frames x d_code` concatenated code vectors.
    pub vectors: Tensor<f64>,
}

pub enum QuantizeMode<'a> {
    /// Hard argmax of the logits, ties to the lowest index.
    Inference,
    /// Gumbel sampling at temperature `tau`. Without `straight_through` the
    /// selection is a constant and only the codebook entries get gradient
    /// from downstream losses; with it the backward pass goes through the
    /// soft sample.
    Training { tau: f64, rng: &'a mut StreamRng, straight_through: bool },
}

pub struct QuantizerOutput {
    pub vectors: Var,
    pub logits: Var,
    pub ids: Vec<usize>,
}

/// Quantizes `latent` (`frames x d_latent`) on the tape.
pub fn quantize_graph(
    g: &mut Graph<f64>,
    store: &ParamStore<f64>,
    cb: &Codebooks,
    latent: Var,
    mode: QuantizeMode<'_>,
) -> QuantizerOutput {
    let logits = cb.logits.forward(g, store, latent);
    let frames = g.value(logits).rows();
    let mut group_ids = vec![Vec::with_capacity(cb.groups); frames];
    let mut parts = Vec::with_capacity(cb.groups);
    let mut mode = mode;
    for (gi, &book) in cb.books.iter().enumerate() {
        let z = g.slice_cols(logits, gi * cb.entries, cb.entries);
        let onehot = match &mut mode {
            QuantizeMode::Inference => {
                let zt = g.value(z);
                let mut hard = Tensor::zeros(frames, cb.entries);
                for (r, ids) in group_ids.iter_mut().enumerate() {
                    let j = argmax(zt.row(r));
                    hard.row_mut(r)[j] = 1.0;
                    ids.push(j);
                }
                g.constant(hard)
            }
            QuantizeMode::Training { tau, rng, straight_through } => {
                let noise: Vec<f64> = (0..frames * cb.entries)
                    .map(|_| {
                        let u: f64 = rng.random::<f64>().max(1e-12);
                        -(-u.ln()).ln()
                    })
                    .collect();
                let noise = g.constant(Tensor::from_rows(frames, cb.entries, noise));
                let perturbed = g.add(z, noise);
                let scaled = g.scale(perturbed, 1.0 / *tau);
                let soft = g.softmax(scaled);
                let hard = g.straight_through(soft);
                let hard = if *straight_through {
                    hard
                } else {
                    let v = g.value(hard).clone();
                    g.constant(v)
                };
                let ht = g.value(hard);
                for (r, ids) in group_ids.iter_mut().enumerate() {
                    ids.push(argmax(ht.row(r)));
                }
                hard
            }
        };
        let entries = g.param(store, book);
        parts.push(g.matmul(onehot, entries));
    }
    let vectors = if parts.len() == 1 { parts[0] } else { g.concat_cols(&parts) };
    let ids = group_ids.iter().map(|d| cb.composite_id(d)).collect();
    QuantizerOutput { vectors, logits, ids }
}

/// `1 - mean_g [H(avg p_g) - avg H(p_g)] / ln(entries)` where `p_g` is the
/// per-frame softmax of group `g`. The first entropy rewards spreading usage
/// over the codebook, the second rewards confident per-frame choices, so
/// flat logits cannot satisfy it. Zero when frames pick codes with
/// certainty and use every entry equally often.
pub fn diversity_penalty(g: &mut Graph<f64>, cb: &Codebooks, logits: Var) -> Var {
    let frames = g.value(logits).rows();
    let eps = g.constant(Tensor::full(frames, cb.entries, 1e-12));
    let eps_avg = g.constant(Tensor::full(1, cb.entries, 1e-12));
    let mut terms = Vec::with_capacity(cb.groups);
    for gi in 0..cb.groups {
        let z = g.slice_cols(logits, gi * cb.entries, cb.entries);
        let p = g.softmax(z);
        let avg = g.mean_rows(p);
        // sum p ln p is minus the entropy
        let shifted = g.add(avg, eps_avg);
        let log = g.ln(shifted);
        let plogp = g.mul(avg, log);
        let neg_h_avg = g.sum(plogp);
        let shifted = g.add(p, eps);
        let log = g.ln(shifted);
        let plogp = g.mul(p, log);
        let neg_h_frames = g.sum(plogp);
        let mean_neg_h = g.scale(neg_h_frames, 1.0 / frames as f64);
        // -MI = -H(avg) + mean H(p)
        let neg_mean = g.scale(mean_neg_h, -1.0);
        terms.push(g.add(neg_h_avg, neg_mean));
    }
    let neg_mi = terms.into_iter().reduce(|a, b| g.add(a, b)).expect("at least one group");
    let k = 1.0 / (cb.groups as f64 * (cb.entries as f64).ln());
    let scaled = g.scale(neg_mi, k);
    let one = g.constant(Tensor::scalar(1.0));
    g.add(one, scaled)
}

/// Per-group sums over frames of the noise-free code probabilities,
/// `groups` rows of `entries` values.
pub fn code_probability_sums(cb: &Codebooks, logits: &Tensor<f64>) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; cb.entries]; cb.groups];
    for r in 0..logits.rows() {
        for (gi, sum) in sums.iter_mut().enumerate() {
            let z = &logits.row(r)[gi * cb.entries..(gi + 1) * cb.entries];
            let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
            let total: f64 = e.iter().sum();
            sum.iter_mut().zip(&e).for_each(|(s, v)| *s += v / total);
        }
    }
    sums
}

/// One sequence's share of [`diversity_penalty`] taken over a whole batch.
/// `log_usage[g]` is the log of the batch-mean probabilities of group `g`
/// and `batch_frames` the number of frames in the batch; both are held
/// constant. Over the batch the shares sum to the batch penalty minus one,
/// and their gradients sum to its gradient, because the term dropped from
/// the derivative of `H(avg p)` is constant across entries and the softmax
/// ignores it.
pub fn diversity_share(g: &mut Graph<f64>, cb: &Codebooks, logits: Var, log_usage: &[Vec<f64>], batch_frames: usize) -> Var {
    assert_eq!(log_usage.len(), cb.groups, "one usage row per group");
    let frames = g.value(logits).rows();
    let eps = g.constant(Tensor::full(frames, cb.entries, 1e-12));
    let mut terms = Vec::with_capacity(cb.groups);
    for (gi, usage) in log_usage.iter().enumerate() {
        let z = g.slice_cols(logits, gi * cb.entries, cb.entries);
        let p = g.softmax(z);
        let col = g.constant(Tensor::from_rows(cb.entries, 1, usage.clone()));
        let cross = g.matmul(p, col);
        let cross = g.sum(cross);
        let shifted = g.add(p, eps);
        let log = g.ln(shifted);
        let plogp = g.mul(p, log);
        let neg_h = g.sum(plogp);
        let neg_h = g.scale(neg_h, -1.0);
        terms.push(g.add(cross, neg_h));
    }
    let total = terms.into_iter().reduce(|a, b| g.add(a, b)).expect("at least one group");
    let k = 1.0 / (batch_frames as f64 * cb.groups as f64 * (cb.entries as f64).ln());
    g.scale(total, k)
}
