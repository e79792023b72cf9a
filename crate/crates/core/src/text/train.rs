//! Masked-token pretraining and sentiment fine-tuning loops.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::TextModel;
use super::tokenizer::mlm_corrupt;
use super::{LabeledTranscript, PhoneticTranscript};
use crate::error::{Error, Result};
use crate::neural::{argmax, Adam, Gradients, Graph, LinearSchedule, ParamStore};
use crate::rng::{substream, Purpose};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlmConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_frac: f64,
    pub mask_prob: f64,
    pub seed: u64,
    pub workers: usize,
}

impl Default for MlmConfig {
    fn default() -> Self {
        Self { epochs: 5, batch_size: 32, lr: 1e-3, warmup_frac: 0.1, mask_prob: 0.15, seed: 0, workers: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlmEpoch {
    pub epoch: usize,
    /// Mean cross-entropy over masked positions.
    pub loss: f64,
    /// Share of masked positions whose original token is the argmax.
    pub accuracy: f64,
}

/// CSV with header `epoch,loss,accuracy`.
pub fn mlm_curve_csv(curve: &[MlmEpoch]) -> String {
    let mut out = String::from("epoch,loss,accuracy\n");
    for e in curve {
        out.push_str(&format!("{},{},{}\n", e.epoch, e.loss, e.accuracy));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_frac: f64,
    pub seed: u64,
    pub workers: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self { epochs: 15, batch_size: 32, lr: 1e-3, warmup_frac: 0.1, seed: 0, workers: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingCurve {
    pub epochs: Vec<EpochMetrics>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: Option<usize>,
}

impl TrainingCurve {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,train_acc,val_acc\n");
        for m in &self.epochs {
            out.push_str(&format!("{},{},{},{},{}\n", m.epoch, m.train_loss, m.val_loss, m.train_acc, m.val_acc));
        }
        out
    }

    /// Parses the output of [`TrainingCurve::to_csv`]. The best epoch is not
    /// part of the CSV and comes back as `None`.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        if lines.next().map(str::trim) != Some("epoch,train_loss,val_loss,train_acc,val_acc") {
            return Err(Error::SchemaMismatch("training curve CSV header".into()));
        }
        let bad = |l: &str| Error::SchemaMismatch(format!("training curve row {l:?}"));
        let mut epochs = Vec::new();
        for l in lines {
            let f: Vec<&str> = l.trim().split(',').collect();
            if f.len() != 5 {
                return Err(bad(l));
            }
            let num = |i: usize| f[i].parse::<f64>().map_err(|_| bad(l));
            epochs.push(EpochMetrics {
                epoch: f[0].parse().map_err(|_| bad(l))?,
                train_loss: num(1)?,
                val_loss: num(2)?,
                train_acc: num(3)?,
                val_acc: num(4)?,
            });
        }
        Ok(Self { epochs, best_epoch: None })
    }
}

struct Example {
    grads: Option<Gradients<f64>>,
    loss_sum: f64,
    correct: usize,
    count: usize,
}

fn check_finite(ex: &Example, what: &str) -> Result<()> {
    let grads_ok = ex.grads.as_ref().is_none_or(|g| g.all_finite());
    if !ex.loss_sum.is_finite() || !grads_ok {
        return Err(Error::NonFiniteLoss(format!("{what}: loss {}", ex.loss_sum)));
    }
    Ok(())
}

impl TextModel {
    fn mlm_example(&self, params: &ParamStore<f64>, t: &PhoneticTranscript, p: f64, key: u64, seed: u64) -> Result<Example> {
        let seq = self.tokenize(t);
        let (corrupted, labels) = mlm_corrupt(&seq, p, &mut substream(seed, Purpose::Masking, key));
        if labels.is_empty() {
            return Ok(Example { grads: None, loss_sum: 0.0, correct: 0, count: 0 });
        }
        let positions: Vec<usize> = labels.iter().map(|l| l.0).collect();
        let targets: Vec<usize> = labels.iter().map(|l| l.1).collect();
        let mut g = Graph::new();
        let mut rng = substream(seed, Purpose::Dropout, key);
        let logits = self.mlm_logits(&mut g, params, &corrupted, &positions, true, &mut rng)?;
        let correct = (0..targets.len()).filter(|&r| argmax(g.value(logits).row(r)) == targets[r]).count();
        let loss = g.cross_entropy(logits, &targets);
        let n = targets.len();
        // the mean over this example's positions, rescaled to a sum so batches
        // weight every masked position equally
        let scaled = g.scale(loss, n as f64);
        let grads = g.backward(scaled).param_grads(params.len());
        Ok(Example { grads: Some(grads), loss_sum: g.value(scaled).item(), correct, count: n })
    }

    /// Masked-token pretraining of the encoder and token head.
    pub fn pretrain_mlm(&mut self, corpus: &[PhoneticTranscript], cfg: &MlmConfig) -> Result<Vec<MlmEpoch>> {
        if corpus.is_empty() {
            return Err(Error::EmptyInput);
        }
        if cfg.batch_size == 0 || !(cfg.lr > 0.0) || !(0.0..=1.0).contains(&cfg.mask_prob) {
            return Err(Error::InvalidConfig("invalid masked-token training settings".into()));
        }
        if cfg.epochs == 0 {
            return Ok(Vec::new());
        }
        let pool = crate::worker_pool(cfg.workers)?;
        let n = corpus.len();
        let total = cfg.epochs * n.div_ceil(cfg.batch_size);
        let schedule = LinearSchedule { base_lr: cfg.lr, total_steps: total, warmup_frac: cfg.warmup_frac };
        let mut adam = Adam::new(&self.params);
        let mut curve = Vec::new();
        let mut step = 0;
        for epoch in 0..cfg.epochs {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut substream(cfg.seed, Purpose::Data, epoch as u64));
            let (mut loss, mut correct, mut count) = (0.0, 0, 0);
            for batch in order.chunks(cfg.batch_size) {
                let this = &*self;
                let results: Vec<Result<Example>> = pool.install(|| {
                    batch
                        .par_iter()
                        .map(|&i| {
                            let key = (epoch * n + i) as u64;
                            this.mlm_example(&this.params, &corpus[i], cfg.mask_prob, key, cfg.seed)
                        })
                        .collect()
                });
                let mut grads = Gradients::new(self.params.len());
                let mut batch_count = 0;
                for (r, &i) in results.into_iter().zip(batch) {
                    let r = r?;
                    check_finite(&r, &format!("epoch {epoch}, transcript {}", corpus[i].source))?;
                    if let Some(g) = &r.grads {
                        grads.merge(g);
                    }
                    loss += r.loss_sum;
                    correct += r.correct;
                    count += r.count;
                    batch_count += r.count;
                }
                if batch_count > 0 {
                    grads.scale(1.0 / batch_count as f64);
                    adam.update(&mut self.params, &grads, schedule.lr(step));
                }
                step += 1;
            }
            let denom = count.max(1) as f64;
            curve.push(MlmEpoch { epoch: epoch + 1, loss: loss / denom, accuracy: correct as f64 / denom });
        }
        Ok(curve)
    }

    fn class_example(
        &self,
        params: &ParamStore<f64>,
        ex: &LabeledTranscript,
        training: bool,
        key: u64,
        seed: u64,
    ) -> Result<Example> {
        let seq = self.tokenize(&ex.transcript);
        let mut g = Graph::new();
        let mut rng = substream(seed, Purpose::Dropout, key);
        let logits = self.class_logits(&mut g, params, &seq, training, &mut rng)?;
        let correct = usize::from(argmax(g.value(logits).values()) == ex.label.index());
        let loss = g.cross_entropy(logits, &[ex.label.index()]);
        let grads = training.then(|| g.backward(loss).param_grads(params.len()));
        Ok(Example { grads, loss_sum: g.value(loss).item(), correct, count: 1 })
    }

    /// Mean loss and accuracy over `data` at inference.
    pub fn evaluate(&self, data: &[LabeledTranscript], workers: usize) -> Result<(f64, f64)> {
        if data.is_empty() {
            return Err(Error::EmptyInput);
        }
        let results: Vec<Result<Example>> = crate::worker_pool(workers)?
            .install(|| data.par_iter().map(|ex| self.class_example(&self.params, ex, false, 0, 0)).collect());
        let (mut loss, mut correct) = (0.0, 0);
        for r in results {
            let r = r?;
            loss += r.loss_sum;
            correct += r.correct;
        }
        let n = data.len() as f64;
        Ok((loss / n, correct as f64 / n))
    }

    /// Fine-tunes for sentiment and keeps the parameters of the epoch with
    /// the best validation accuracy, the earlier epoch on ties.
    pub fn train_classifier(
        &mut self,
        train: &[LabeledTranscript],
        val: &[LabeledTranscript],
        cfg: &ClassifierConfig,
    ) -> Result<TrainingCurve> {
        if train.is_empty() {
            return Err(Error::EmptySplit("train"));
        }
        if val.is_empty() {
            return Err(Error::EmptySplit("validation"));
        }
        if cfg.batch_size == 0 || !(cfg.lr > 0.0) {
            return Err(Error::InvalidConfig("batch size and learning rate must be positive".into()));
        }
        let mut curve = TrainingCurve::default();
        if cfg.epochs == 0 {
            return Ok(curve);
        }
        let pool = crate::worker_pool(cfg.workers)?;
        let n = train.len();
        let total = cfg.epochs * n.div_ceil(cfg.batch_size);
        let schedule = LinearSchedule { base_lr: cfg.lr, total_steps: total, warmup_frac: cfg.warmup_frac };
        let mut adam = Adam::new(&self.params);
        let mut best: Option<(f64, ParamStore<f64>)> = None;
        let mut step = 0;
        for epoch in 0..cfg.epochs {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut substream(cfg.seed, Purpose::Data, epoch as u64));
            let (mut loss, mut correct) = (0.0, 0);
            for batch in order.chunks(cfg.batch_size) {
                let this = &*self;
                let results: Vec<Result<Example>> = pool.install(|| {
                    batch
                        .par_iter()
                        .map(|&i| this.class_example(&this.params, &train[i], true, (epoch * n + i) as u64, cfg.seed))
                        .collect()
                });
                let mut grads = Gradients::new(self.params.len());
                for (r, &i) in results.into_iter().zip(batch) {
                    let r = r?;
                    check_finite(&r, &format!("epoch {epoch}, transcript {}", train[i].transcript.source))?;
                    grads.merge(r.grads.as_ref().expect("training example has gradients"));
                    loss += r.loss_sum;
                    correct += r.correct;
                }
                grads.scale(1.0 / batch.len() as f64);
                adam.update(&mut self.params, &grads, schedule.lr(step));
                step += 1;
            }
            let (val_loss, val_acc) = self.evaluate(val, cfg.workers)?;
            if !val_loss.is_finite() {
                return Err(Error::NonFiniteLoss(format!("epoch {epoch}: validation loss {val_loss}")));
            }
            curve.epochs.push(EpochMetrics {
                epoch: epoch + 1,
                train_loss: loss / n as f64,
                val_loss,
                train_acc: correct as f64 / n as f64,
                val_acc,
            });
            if best.as_ref().is_none_or(|(acc, _)| val_acc > *acc) {
                best = Some((val_acc, self.params.clone()));
                curve.best_epoch = Some(epoch + 1);
            }
        }
        if let Some((_, params)) = best {
            self.params = params;
        }
        Ok(curve)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::EncoderConfig;
    use crate::text::{Sentiment, TextConfig};

    fn cfg(d: usize, dropout: f64) -> TextConfig {
        TextConfig { encoder: EncoderConfig { d_model: d, heads: 2, layers: 2, ff_mult: 2, dropout }, max_len: 32 }
    }

    #[test]
    fn curve_csv_round_trip() {
        let m = |e: usize, v: f64| EpochMetrics { epoch: e, train_loss: v, val_loss: v / 3.0, train_acc: 0.1 * v, val_acc: 0.7 };
        let c = TrainingCurve { epochs: vec![m(1, 0.8125), m(2, 1.0 / 7.0)], best_epoch: None };
        assert_eq!(TrainingCurve::from_csv(&c.to_csv()).unwrap(), c);
        assert!(TrainingCurve::from_csv("epoch,loss\n1,2\n").is_err());
        assert!(TrainingCurve::from_csv("epoch,train_loss,val_loss,train_acc,val_acc\n1,x,1,1,1\n").is_err());
    }

    #[test]
    fn zero_epochs_keep_parameters() {
        let mut m = TextModel::new(cfg(16, 0.1), 1).unwrap();
        let before = m.params.clone();
        let corpus = vec![PhoneticTranscript::new("AEAE", "a")];
        assert!(m.pretrain_mlm(&corpus, &MlmConfig { epochs: 0, ..Default::default() }).unwrap().is_empty());
        let lab = vec![LabeledTranscript { transcript: corpus[0].clone(), label: Sentiment::Neutral }];
        let curve = m.train_classifier(&lab, &lab, &ClassifierConfig { epochs: 0, ..Default::default() }).unwrap();
        assert!(curve.is_empty());
        assert_eq!(m.params, before);
    }

    #[test]
    fn empty_splits_rejected() {
        let mut m = TextModel::new(cfg(16, 0.1), 1).unwrap();
        let lab = vec![LabeledTranscript { transcript: PhoneticTranscript::new("A", "a"), label: Sentiment::Neutral }];
        let c = ClassifierConfig::default();
        assert!(matches!(m.train_classifier(&[], &lab, &c), Err(Error::EmptySplit("train"))));
        assert!(matches!(m.train_classifier(&lab, &[], &c), Err(Error::EmptySplit("validation"))));
    }

    #[test]
    fn mlm_learns_alternating_pattern() {
        let corpus: Vec<_> = (0..256)
            .map(|i| {
                let start = if i % 2 == 0 { "AE" } else { "EA" };
                PhoneticTranscript::new(start.repeat(12), format!("p{i}"))
            })
            .collect();
        let run = || {
            let mut m = TextModel::new(cfg(32, 0.0), 2).unwrap();
            let c = MlmConfig { epochs: 5, batch_size: 8, lr: 3e-3, seed: 4, ..Default::default() };
            m.pretrain_mlm(&corpus, &c).unwrap()
        };
        let curve = run();
        assert_eq!(curve.len(), 5);
        assert!(curve[4].loss < curve[0].loss, "{curve:?}");
        assert!(curve[4].accuracy > 0.5, "{curve:?}");
        assert_eq!(curve, run());
    }

    #[test]
    fn classifier_separates_signature_corpus() {
        let make = |n: usize, offset: usize| -> Vec<LabeledTranscript> {
            (0..n)
                .map(|i| {
                    let label = Sentiment::ALL[(i + offset) % 3];
                    let sig = ["KT", "AO", "EI"][label.index()];
                    let fill = ["M", "N", "R"][(i / 3) % 3];
                    let text = format!("{fill}{sig}{fill} {sig}{fill}");
                    LabeledTranscript { transcript: PhoneticTranscript::new(text, format!("s{i}")), label }
                })
                .collect()
        };
        let (train, val) = (make(90, 0), make(30, 1));
        let c = ClassifierConfig { epochs: 15, batch_size: 16, lr: 3e-3, seed: 9, workers: 2, ..Default::default() };
        let run = || {
            let mut m = TextModel::new(cfg(16, 0.1), 3).unwrap();
            let curve = m.train_classifier(&train, &val, &c).unwrap();
            (m, curve)
        };
        let (m, curve) = run();
        assert_eq!(curve.len(), 15);
        assert!(curve.epochs.iter().all(|e| e.val_loss.is_finite() && (0.0..=1.0).contains(&e.val_acc)));
        assert!(curve.epochs.last().unwrap().val_acc >= 0.9, "{curve:?}");
        let best = curve.best_epoch.unwrap();
        assert_eq!(m.evaluate(&val, 1).unwrap().1, curve.epochs[best - 1].val_acc);
        assert_eq!(run().1, curve);
        assert!(curve.to_csv().starts_with("epoch,train_loss,val_loss,train_acc,val_acc\n1,"));
    }
}
