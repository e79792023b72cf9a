//! Contrastive pretraining loop.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{BatchUsage, StepLoss, StepRngs};
use super::{Alphabet, AcousticModel};
use crate::audio::Segment;
use crate::error::{Error, Result};
use crate::neural::{Adam, Gradients, LinearSchedule};
use crate::rng::{substream, Purpose};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_frac: f64,
    pub seed: u64,
    /// Threads computing per-example gradients. Results do not depend on it.
    pub workers: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self { epochs: 5, batch_size: 8, lr: 1e-3, warmup_frac: 0.1, seed: 0, workers: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    /// Mean total objective over the epoch's segments.
    pub loss: f64,
    pub contrastive: f64,
    /// Batch diversity penalty, averaged over segments.
    pub diversity: f64,
}

struct ExampleResult {
    grads: Gradients<f64>,
    loss: f64,
    contrastive: f64,
    diversity_share: f64,
}

/// CSV with header `epoch,loss,contrastive,diversity`.
pub fn loss_curve_csv(curve: &[EpochLoss]) -> String {
    let mut out = String::from("epoch,loss,contrastive,diversity\n");
    for e in curve {
        out.push_str(&format!("{},{},{},{}\n", e.epoch, e.loss, e.contrastive, e.diversity));
    }
    out
}

impl AcousticModel {
    /// Trains in place and returns the per-epoch mean loss. Afterwards the
    /// alphabet is rebuilt from code usage over `corpus`.
    pub fn pretrain(&mut self, corpus: &[Segment<f64>], cfg: &PretrainConfig) -> Result<Vec<EpochLoss>> {
        if corpus.is_empty() {
            return Err(Error::EmptyInput);
        }
        if cfg.batch_size == 0 || cfg.workers == 0 || !(cfg.lr > 0.0) {
            return Err(Error::InvalidConfig("batch size, workers and learning rate must be positive".into()));
        }
        if cfg.epochs == 0 {
            return Ok(Vec::new());
        }
        let pool = crate::worker_pool(cfg.workers)?;
        let n = corpus.len();
        let per_epoch = n.div_ceil(cfg.batch_size);
        let total = cfg.epochs * per_epoch;
        let schedule = LinearSchedule { base_lr: cfg.lr, total_steps: total, warmup_frac: cfg.warmup_frac };
        let mut adam = Adam::new(&self.params);
        let mut curve = Vec::with_capacity(cfg.epochs);
        let mut step = 0;
        for epoch in 0..cfg.epochs {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut substream(cfg.seed, Purpose::Data, epoch as u64));
            let (mut sum, mut sum_c, mut sum_d) = (0.0, 0.0, 0.0);
            for batch in order.chunks(cfg.batch_size) {
                let frac = if total > 1 { step as f64 / (total - 1) as f64 } else { 0.0 };
                let tau = self.config.tau_start + (self.config.tau_end - self.config.tau_start) * frac;
                // usage over the whole batch comes first; each example then
                // differentiates its share of the penalty against it
                let sums: Vec<Result<(Vec<Vec<f64>>, usize)>> =
                    pool.install(|| batch.par_iter().map(|&i| self.code_probabilities(&corpus[i].samples)).collect());
                let usage = BatchUsage::from_sums(&sums.into_iter().collect::<Result<Vec<_>>>()?);
                let results: Vec<Result<ExampleResult>> = pool.install(|| {
                    batch.par_iter().map(|&i| self.example(corpus, i, epoch, tau, &usage, cfg.seed)).collect()
                });
                let (mut penalty, mut batch_c) = (1.0, 0.0);
                let mut grads = Gradients::new(self.params.len());
                for (r, &i) in results.into_iter().zip(batch) {
                    let r = r?;
                    if !r.loss.is_finite() || !r.grads.all_finite() {
                        return Err(Error::NonFiniteLoss(format!(
                            "epoch {epoch}, step {step}, segment {} of {}: loss {} (contrastive {}, diversity share {})",
                            corpus[i].index, corpus[i].source_id, r.loss, r.contrastive, r.diversity_share
                        )));
                    }
                    grads.merge(&r.grads);
                    sum_c += r.contrastive;
                    batch_c += r.contrastive;
                    penalty += r.diversity_share;
                }
                let b = batch.len() as f64;
                sum += batch_c + self.config.diversity_weight * penalty * b;
                sum_d += penalty * b;
                grads.scale(1.0 / batch.len() as f64);
                adam.update(&mut self.params, &grads, schedule.lr(step));
                step += 1;
            }
            let k = n as f64;
            curve.push(EpochLoss { epoch: epoch + 1, loss: sum / k, contrastive: sum_c / k, diversity: sum_d / k });
        }
        self.codebooks.temperature = self.config.tau_end;
        self.alphabet = Alphabet::from_usage(&self.code_usage(corpus)?);
        Ok(curve)
    }

    fn example(
        &self,
        corpus: &[Segment<f64>],
        i: usize,
        epoch: usize,
        tau: f64,
        usage: &BatchUsage,
        seed: u64,
    ) -> Result<ExampleResult> {
        let key = (epoch * corpus.len() + i) as u64;
        let mut rngs = StepRngs {
            mask: substream(seed, Purpose::Masking, key),
            gumbel: substream(seed, Purpose::Gumbel, key),
            distractors: substream(seed, Purpose::Distractors, key),
            dropout: substream(seed, Purpose::Dropout, key),
        };
        let StepLoss { graph, loss, contrastive, diversity_share, .. } =
            self.step_loss(&self.params, &corpus[i].samples, tau, usage, &mut rngs)?;
        let value = graph.value(loss).item();
        let grads = graph.backward(loss).param_grads(self.params.len());
        Ok(ExampleResult { grads, loss: value, contrastive, diversity_share })
    }
}

/// Mean over groups of the entropy of hard code usage, divided by
/// `ln(entries)`. 1 means every entry of every group is used equally.
pub fn codebook_usage_entropy(model: &AcousticModel, corpus: &[Segment<f64>]) -> Result<f64> {
    let cb = &model.codebooks;
    let mut counts = vec![vec![0u64; cb.entries]; cb.groups];
    for seg in corpus {
        for id in model.units(seg)?.ids {
            for (g, j) in cb.split_id(id).into_iter().enumerate() {
                counts[g][j] += 1;
            }
        }
    }
    let entropy = |c: &[u64]| {
        let total: u64 = c.iter().sum();
        if total == 0 {
            return 0.0;
        }
        -c.iter()
            .filter(|&&x| x > 0)
            .map(|&x| {
                let p = x as f64 / total as f64;
                p * p.ln()
            })
            .sum::<f64>()
    };
    let mean: f64 = counts.iter().map(|c| entropy(c)).sum::<f64>() / cb.groups as f64;
    Ok(mean / (cb.entries as f64).ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acoustic::AcousticConfig;
    use crate::neural::EncoderConfig;
    use crate::rng::{stream, uniform};

    fn tiny() -> AcousticConfig {
        AcousticConfig {
            conv_channels: 8,
            d_latent: 16,
            d_code: 16,
            entries: 4,
            context: EncoderConfig { d_model: 16, heads: 2, layers: 1, ff_mult: 2, dropout: 0.1 },
            mask_prob: 0.2,
            mask_span: 2,
            distractors: 4,
            ..AcousticConfig::default()
        }
    }

    fn corpus(n: usize) -> Vec<Segment<f64>> {
        (0..n)
            .map(|i| {
                let mut rng = stream(i as u64, Purpose::Synth);
                let f = 200.0 + 50.0 * i as f64;
                let s = (0..3_200)
                    .map(|t| 0.5 * (std::f64::consts::TAU * f * t as f64 / 16_000.0).sin() + uniform(&mut rng, -0.05, 0.05))
                    .collect();
                Segment::new(s, 16_000, i, "c")
            })
            .collect()
    }

    #[test]
    fn zero_epochs_leaves_parameters() {
        let mut model = AcousticModel::new(tiny(), 1).unwrap();
        let before = model.params.clone();
        let curve = model.pretrain(&corpus(2), &PretrainConfig { epochs: 0, ..Default::default() }).unwrap();
        assert!(curve.is_empty());
        assert_eq!(model.params, before);
    }

    #[test]
    fn empty_corpus_rejected() {
        let mut model = AcousticModel::new(tiny(), 1).unwrap();
        assert!(matches!(model.pretrain(&[], &PretrainConfig::default()), Err(Error::EmptyInput)));
    }

    #[test]
    fn reproducible_across_runs_and_workers() {
        let data = corpus(6);
        let run = |workers| {
            let mut model = AcousticModel::new(tiny(), 3).unwrap();
            let cfg = PretrainConfig { epochs: 2, batch_size: 4, workers, seed: 7, ..Default::default() };
            let curve = model.pretrain(&data, &cfg).unwrap();
            (curve, model.to_checkpoint().to_json().unwrap())
        };
        let a = run(1);
        assert_eq!(a, run(1));
        assert_eq!(a, run(3));
        assert_eq!(a.0.len(), 2);
    }
}
