use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{
    code_probability_sums, contrastive_loss, diversity_share, frames_for_len, hop, quantize_graph, receptive_field, span_mask, Alphabet,
    Codebooks, LatentFrames, QuantizeMode, QuantizedUnits, STRIDE_SCHEDULE,
};
use crate::audio::{Segment, CANONICAL_RATE};
use crate::error::{Error, Result};
use crate::neural::{
    positional_encoding, Checkpoint, Encoder, EncoderConfig, Graph, LayerNormParams, Linear, ParamId, ParamStore,
    Tensor, Var,
};
use crate::rng::{stream, Purpose, StreamRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcousticConfig {
    pub conv_channels: usize,
    pub d_latent: usize,
    pub groups: usize,
    pub entries: usize,
    pub d_code: usize,
    /// Context network; its `d_model` must equal `d_latent`.
    pub context: EncoderConfig,
    pub mask_prob: f64,
    pub mask_span: usize,
    pub distractors: usize,
    pub kappa: f64,
    pub diversity_weight: f64,
    pub tau_start: f64,
    pub tau_end: f64,
    /// Let the contrastive loss reach the code logits through the soft
    /// Gumbel sample. Off by default because that path collapses small
    /// codebooks; the logits then learn from the diversity term only.
    pub straight_through: bool,
}

impl Default for AcousticConfig {
    fn default() -> Self {
        Self {
            conv_channels: 32,
            d_latent: 64,
            groups: 2,
            entries: 16,
            d_code: 64,
            context: EncoderConfig::default(),
            mask_prob: 0.065,
            mask_span: 10,
            distractors: 10,
            kappa: 0.1,
            diversity_weight: 0.1,
            tau_start: 2.0,
            tau_end: 0.5,
            straight_through: false,
        }
    }
}

impl AcousticConfig {
    pub fn validate(&self) -> Result<()> {
        self.context.validate()?;
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.context.d_model != self.d_latent {
            return bad(format!("context width {} differs from latent width {}", self.context.d_model, self.d_latent));
        }
        if self.groups == 0 || self.entries < 2 || self.d_code % self.groups != 0 {
            return bad(format!("{} groups of {} entries with code width {}", self.groups, self.entries, self.d_code));
        }
        if self.conv_channels == 0 || self.mask_span == 0 || !(0.0..=1.0).contains(&self.mask_prob) {
            return bad("conv channels, mask span and mask probability must be positive".into());
        }
        if self.kappa <= 0.0 || self.tau_start <= 0.0 || self.tau_end <= 0.0 {
            return bad("temperatures must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct ConvLayer {
    w: ParamId,
    b: ParamId,
    norm: LayerNormParams,
    kernel: usize,
    stride: usize,
}

/// Per-example randomness for one pretraining step.
pub(crate) struct StepRngs {
    pub mask: StreamRng,
    pub gumbel: StreamRng,
    pub distractors: StreamRng,
    pub dropout: StreamRng,
}

/// Code usage of a whole batch, held fixed while each example's share of
/// the diversity penalty is differentiated.
pub(crate) struct BatchUsage {
    /// Log of the batch-mean code probabilities, per group.
    pub log_avg: Vec<Vec<f64>>,
    pub frames: usize,
    pub examples: usize,
}

impl BatchUsage {
    /// From per-example `(probability sums, frames)` pairs.
    pub fn from_sums(parts: &[(Vec<Vec<f64>>, usize)]) -> Self {
        let frames: usize = parts.iter().map(|p| p.1).sum();
        let mut total = parts[0].0.clone();
        for (sums, _) in &parts[1..] {
            for (t, s) in total.iter_mut().zip(sums) {
                t.iter_mut().zip(s).for_each(|(a, b)| *a += b);
            }
        }
        let log_avg = total.iter().map(|row| row.iter().map(|v| (v / frames as f64 + 1e-12).ln()).collect()).collect();
        Self { log_avg, frames, examples: parts.len() }
    }
}

pub(crate) struct StepLoss {
    pub graph: Graph<f64>,
    pub loss: Var,
    pub contrastive: f64,
    /// This example's share of the batch diversity penalty.
    pub diversity_share: f64,
    #[cfg_attr(not(test), allow(dead_code))]
    pub masked: usize,
}

/// Convolutional encoder, context transformer and codebooks with their
/// parameters.
#[derive(Debug, Clone)]
pub struct AcousticModel {
    pub config: AcousticConfig,
    pub params: ParamStore<f64>,
    pub codebooks: Codebooks,
    pub alphabet: Alphabet,
    conv: Vec<ConvLayer>,
    projection: Linear,
    mask_embedding: ParamId,
    context: Encoder,
    head: Linear,
}

impl AcousticModel {
    pub fn new(config: AcousticConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream(seed, Purpose::Init);
        let mut params = ParamStore::new();
        let mut c_in = 1;
        let mut conv = Vec::with_capacity(STRIDE_SCHEDULE.len());
        for (i, &(kernel, stride)) in STRIDE_SCHEDULE.iter().enumerate() {
            let c = config.conv_channels;
            let w = params.add_uniform(format!("conv{i}.weight"), kernel * c_in, c, kernel * c_in, &mut rng);
            let b = params.add_uniform(format!("conv{i}.bias"), 1, c, kernel * c_in, &mut rng);
            let norm = LayerNormParams::new(&mut params, &format!("conv{i}.norm"), c);
            conv.push(ConvLayer { w, b, norm, kernel, stride });
            c_in = c;
        }
        let projection = Linear::new(&mut params, "projection", c_in, config.d_latent, &mut rng);
        let mask_embedding = params.add_uniform("mask_embedding", 1, config.d_latent, config.d_latent, &mut rng);
        let context = Encoder::new(&mut params, "context", config.context, &mut rng)?;
        let head = Linear::new(&mut params, "context_head", config.d_latent, config.d_code, &mut rng);
        let codebooks =
            Codebooks::new(&mut params, config.d_latent, config.groups, config.entries, config.d_code, &mut rng);
        let alphabet = Alphabet::uniform(codebooks.vocab_size());
        Ok(Self { config, params, codebooks, alphabet, conv, projection, mask_embedding, context, head })
    }

    pub fn vocab_size(&self) -> usize {
        self.codebooks.vocab_size()
    }

    /// Latent frames of raw 16 kHz `samples` on the tape, `F x d_latent`,
    /// reading weights from `params` (this model's store or a copy of it).
    pub fn encode_graph(&self, g: &mut Graph<f64>, params: &ParamStore<f64>, samples: &[f64]) -> Result<Var> {
        if frames_for_len(samples.len(), &STRIDE_SCHEDULE).is_none() {
            return Err(Error::EmptyEncoding(samples.len()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidWaveform("non-finite sample".into()));
        }
        let mut h = g.constant(Tensor::from_rows(samples.len(), 1, samples.to_vec()));
        for layer in &self.conv {
            let w = g.param(params, layer.w);
            let b = g.param(params, layer.b);
            let c = g.conv1d(h, w, b, layer.kernel, layer.stride);
            let n = layer.norm.forward(g, params, c);
            h = g.gelu(n);
        }
        Ok(self.projection.forward(g, params, h))
    }

    fn check_segment(seg: &Segment<f64>) -> Result<()> {
        if seg.sample_rate != CANONICAL_RATE {
            return Err(Error::InvalidWaveform(format!("expected {CANONICAL_RATE} Hz, got {}", seg.sample_rate)));
        }
        Ok(())
    }

    pub fn conv_encode(&self, seg: &Segment<f64>) -> Result<LatentFrames> {
        Self::check_segment(seg)?;
        let mut g = Graph::new();
        let latent = self.encode_graph(&mut g, &self.params, &seg.samples)?;
        Ok(LatentFrames {
            frames: g.value(latent).clone(),
            frame_rate: CANONICAL_RATE as f64 / hop(&STRIDE_SCHEDULE) as f64,
            receptive_field: receptive_field(&STRIDE_SCHEDULE),
        })
    }

    /// Inference uses argmax codes; training draws a Gumbel sample at the
    /// codebooks' current temperature.
    pub fn quantize(&self, frames: &LatentFrames, training: bool, rng: &mut StreamRng) -> QuantizedUnits {
        let mut g = Graph::new();
        let x = g.constant(frames.frames.clone());
        let mode = if training {
            QuantizeMode::Training { tau: self.codebooks.temperature, rng, straight_through: true }
        } else {
            QuantizeMode::Inference
        };
        let out = quantize_graph(&mut g, &self.params, &self.codebooks, x, mode);
        QuantizedUnits { ids: out.ids, vectors: g.value(out.vectors).clone() }
    }

    pub fn units(&self, seg: &Segment<f64>) -> Result<QuantizedUnits> {
        let frames = self.conv_encode(seg)?;
        // the rng is unused at inference
        Ok(self.quantize(&frames, false, &mut stream(0, Purpose::Gumbel)))
    }

    pub fn transcribe(&self, seg: &Segment<f64>) -> Result<String> {
        Ok(self.alphabet.transcribe(&self.units(seg)?))
    }

    /// Context vectors projected to code width, `F x d_code`.
    pub fn context(&self, seg: &Segment<f64>) -> Result<Tensor<f64>> {
        Self::check_segment(seg)?;
        let mut g = Graph::new();
        let latent = self.encode_graph(&mut g, &self.params, &seg.samples)?;
        let mut rng = stream(0, Purpose::Dropout);
        let c = self.context_graph(&mut g, &self.params, latent, None, false, &mut rng)?;
        Ok(g.value(c).clone())
    }

    fn context_graph(
        &self,
        g: &mut Graph<f64>,
        params: &ParamStore<f64>,
        latent: Var,
        mask: Option<&[bool]>,
        training: bool,
        rng: &mut StreamRng,
    ) -> Result<Var> {
        let frames = g.value(latent).rows();
        let mut x = latent;
        if let Some(mask) = mask {
            let fill = g.param(params, self.mask_embedding);
            x = g.replace_rows(x, fill, mask);
        }
        let pe = g.constant(positional_encoding(frames, self.config.d_latent)?);
        let x = g.add(x, pe);
        let c = self.context.forward(g, params, x, None, training, rng)?;
        Ok(self.head.forward(g, params, c))
    }

    /// Noise-free code probabilities of `samples` summed over frames, with
    /// the frame count.
    pub(crate) fn code_probabilities(&self, samples: &[f64]) -> Result<(Vec<Vec<f64>>, usize)> {
        let mut g = Graph::new();
        let latent = self.encode_graph(&mut g, &self.params, samples)?;
        let logits = self.codebooks.logits.forward(&mut g, &self.params, latent);
        let z = g.value(logits);
        Ok((code_probability_sums(&self.codebooks, z), z.rows()))
    }

    /// One segment's pretraining objective: its contrastive loss plus its
    /// weighted share of the batch diversity penalty, scaled by the batch
    /// size so that the batch mean of these losses has the gradient of
    /// mean contrastive loss plus weighted batch penalty.
    pub(crate) fn step_loss(
        &self,
        params: &ParamStore<f64>,
        samples: &[f64],
        tau: f64,
        usage: &BatchUsage,
        rngs: &mut StepRngs,
    ) -> Result<StepLoss> {
        let mut g = Graph::new();
        let latent = self.encode_graph(&mut g, params, samples)?;
        let frames = g.value(latent).rows();
        let mask = span_mask(frames, self.config.mask_prob, self.config.mask_span, &mut rngs.mask);
        let q = quantize_graph(
            &mut g,
            params,
            &self.codebooks,
            latent,
            QuantizeMode::Training { tau, rng: &mut rngs.gumbel, straight_through: self.config.straight_through },
        );
        let c = self.context_graph(&mut g, params, latent, Some(&mask.masked), true, &mut rngs.dropout)?;
        let contrastive = contrastive_loss(
            &mut g,
            c,
            q.vectors,
            &mask,
            self.config.distractors,
            self.config.kappa,
            &mut rngs.distractors,
        )?;
        let share = diversity_share(&mut g, &self.codebooks, q.logits, &usage.log_avg, usage.frames);
        let weighted = g.scale(share, self.config.diversity_weight * usage.examples as f64);
        let loss = g.add(contrastive, weighted);
        Ok(StepLoss {
            contrastive: g.value(contrastive).item(),
            diversity_share: g.value(share).item(),
            masked: mask.count(),
            loss,
            graph: g,
        })
    }

    /// Composite-code counts over a corpus at inference.
    pub fn code_usage(&self, corpus: &[Segment<f64>]) -> Result<Vec<u64>> {
        let mut usage = vec![0u64; self.vocab_size()];
        for seg in corpus {
            for id in self.units(seg)?.ids {
                usage[id] += 1;
            }
        }
        Ok(usage)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let hyper = json!({
            "kind": "acoustic",
            "config": self.config,
            "alphabet": self.alphabet.encode(),
            "temperature": self.codebooks.temperature,
        });
        Checkpoint::new(hyper, &self.params)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let h = &ckpt.hyperparameters;
        if h.get("kind").and_then(|k| k.as_str()) != Some("acoustic") {
            return Err(Error::Checkpoint("not an acoustic encoder checkpoint".into()));
        }
        let config: AcousticConfig = serde_json::from_value(h["config"].clone())?;
        let mut model = Self::new(config, 0)?;
        model.params.load_named(&ckpt.parameters)?;
        let alphabet = h["alphabet"].as_str().and_then(Alphabet::decode);
        model.alphabet = match alphabet {
            Some(a) if a.len() == model.vocab_size() => a,
            _ => return Err(Error::Checkpoint("missing or malformed alphabet".into())),
        };
        if let Some(t) = h["temperature"].as_f64() {
            model.codebooks.temperature = t;
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::uniform;

    pub(crate) fn small_config() -> AcousticConfig {
        AcousticConfig {
            conv_channels: 8,
            d_latent: 16,
            d_code: 16,
            entries: 4,
            context: EncoderConfig { d_model: 16, heads: 2, layers: 1, ff_mult: 2, dropout: 0.0 },
            mask_prob: 0.3,
            mask_span: 2,
            distractors: 3,
            ..AcousticConfig::default()
        }
    }

    fn noise(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = stream(seed, Purpose::Data);
        (0..len).map(|_| uniform(&mut rng, -0.5, 0.5)).collect()
    }

    #[test]
    fn encode_geometry_and_errors() {
        let model = AcousticModel::new(small_config(), 1).unwrap();
        let lf = model.conv_encode(&Segment::whole(noise(16_000, 1), "a")).unwrap();
        assert_eq!(lf.frames.shape(), &[49, 16]);
        assert!(lf.frames.all_finite());
        assert_eq!(lf.frame_rate, 50.0);
        assert_eq!(lf.receptive_field, 400);
        let lf = model.conv_encode(&Segment::whole(noise(3_200, 2), "a")).unwrap();
        assert_eq!(lf.len(), 9);
        assert!(matches!(model.conv_encode(&Segment::whole(noise(300, 3), "a")), Err(Error::EmptyEncoding(300))));
        let again = model.conv_encode(&Segment::whole(noise(3_200, 2), "a")).unwrap();
        assert_eq!(lf, again);
    }

    #[test]
    fn default_config_is_valid() {
        let model = AcousticModel::new(AcousticConfig::default(), 0).unwrap();
        assert_eq!(model.vocab_size(), 256);
        let mut bad = AcousticConfig::default();
        bad.d_latent = 48;
        assert!(AcousticModel::new(bad, 0).is_err());
    }

    #[test]
    fn step_loss_gradient_off_the_code_path() {
        let model = AcousticModel::new(small_config(), 4).unwrap();
        let samples = noise(2_000, 4);
        let rngs = || StepRngs {
            mask: stream(1, Purpose::Masking),
            gumbel: stream(1, Purpose::Gumbel),
            distractors: stream(1, Purpose::Distractors),
            dropout: stream(1, Purpose::Dropout),
        };
        let usage = BatchUsage::from_sums(&[model.code_probabilities(&samples).unwrap()]);
        let loss_at = |p: &ParamStore<f64>| {
            let l = model.step_loss(p, &samples, 1.5, &usage, &mut rngs()).unwrap();
            l.graph.value(l.loss).item()
        };
        let step = model.step_loss(&model.params, &samples, 1.5, &usage, &mut rngs()).unwrap();
        assert!(step.masked > 0);
        let grads = step.graph.backward(step.loss).param_grads(model.params.len());
        // hard code choices are piecewise constant, so finite differences only
        // agree with the straight-through gradient downstream of the choice
        let mut p = model.params.clone();
        let h = 1e-5;
        let mut worst = 0f64;
        for id in model.params.ids() {
            let name = model.params.name(id);
            if !(name.starts_with("context") || name == "mask_embedding" || name.starts_with("quantizer.codebook")) {
                continue;
            }
            let len = p.get(id).len();
            for i in (0..len).step_by(len.div_ceil(3)) {
                let orig = p.get(id).values()[i];
                p.get_mut(id).values_mut()[i] = orig + h;
                let plus = loss_at(&p);
                p.get_mut(id).values_mut()[i] = orig - h;
                let minus = loss_at(&p);
                p.get_mut(id).values_mut()[i] = orig;
                let n = (plus - minus) / (2.0 * h);
                let a = grads.get(id).map_or(0.0, |g| g.values()[i]);
                worst = worst.max((a - n).abs() / 1f64.max(a.abs()).max(n.abs()));
            }
        }
        assert!(worst < 1e-4, "{worst}");
    }

    #[test]
    fn conv_stack_passes_grad_check() {
        use crate::neural::grad_check_subset;
        for seed in 0..3 {
            let model = AcousticModel::new(small_config(), seed).unwrap();
            // 1300 samples give three frames
            let samples = noise(1_300, seed + 10);
            let mut rng = stream(seed, Purpose::Data);
            let r = Tensor::from_rows(3, 16, (0..48).map(|_| uniform(&mut rng, -1.0, 1.0)).collect());
            let loss = |p: &ParamStore<f64>| -> Result<(Graph<f64>, Var)> {
                let mut g = Graph::new();
                let h = model.encode_graph(&mut g, p, &samples)?;
                let rc = g.constant(r.clone());
                let m = g.mul(h, rc);
                let l = g.sum(m);
                Ok((g, l))
            };
            let (g, l) = loss(&model.params).unwrap();
            let grads = g.backward(l).param_grads(model.params.len());
            let mut store = model.params.clone();
            let rep = grad_check_subset(&mut store, &grads, 1e-5, 6, |p| {
                let (g, l) = loss(p)?;
                Ok(g.value(l).item())
            })
            .unwrap();
            assert!(rep.max_rel_error < 1e-4, "seed {seed}: {rep:?}");
        }
    }

    #[test]
    fn checkpoint_roundtrip_preserves_units() {
        let mut model = AcousticModel::new(small_config(), 9).unwrap();
        let seg = Segment::whole(noise(8_000, 9), "x");
        model.alphabet = Alphabet::from_usage(&model.code_usage(std::slice::from_ref(&seg)).unwrap());
        let text = model.to_checkpoint().to_json().unwrap();
        let back = AcousticModel::from_checkpoint(&Checkpoint::from_json(&text).unwrap()).unwrap();
        assert_eq!(back.units(&seg).unwrap(), model.units(&seg).unwrap());
        assert_eq!(back.transcribe(&seg).unwrap(), model.transcribe(&seg).unwrap());
        assert_eq!(back.alphabet, model.alphabet);
    }
}
