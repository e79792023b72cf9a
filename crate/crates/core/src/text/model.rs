use serde::{Deserialize, Serialize};
use serde_json::json;

use super::tokenizer::{tokenize, TokenSequence, VOCAB_SIZE};
use super::{PhoneticTranscript, Sentiment};
use crate::error::{Error, Result};
use crate::neural::{
    argmax, positional_encoding, Checkpoint, Encoder, EncoderConfig, Graph, Linear, ParamId, ParamStore, Tensor, Var,
};
use crate::rng::{stream, Purpose, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TextConfig {
    pub encoder: EncoderConfig,
    pub max_len: usize,
}

impl Default for TextConfig {
    fn default() -> Self {
        Self { encoder: EncoderConfig::default(), max_len: 128 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentimentResult {
    pub label: Sentiment,
    /// Probabilities in class order.
    pub probs: [f64; 3],
}

impl SentimentResult {
    /// Softmax of `logits`; the label is the argmax, ties to the lower class.
    pub fn from_logits(logits: &[f64]) -> Self {
        assert_eq!(logits.len(), 3, "three class logits");
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
        let total: f64 = e.iter().sum();
        let probs = [e[0] / total, e[1] / total, e[2] / total];
        let label = Sentiment::ALL[argmax(logits)];
        Self { label, probs }
    }
}

/// Character encoder with a masked-token head and a sentence classifier
/// reading the CLS position.
#[derive(Debug, Clone)]
pub struct TextModel {
    pub config: TextConfig,
    pub params: ParamStore<f64>,
    embedding: ParamId,
    encoder: Encoder,
    mlm_head: Linear,
    classifier: Linear,
}

impl TextModel {
    pub fn new(config: TextConfig, seed: u64) -> Result<Self> {
        config.encoder.validate()?;
        if config.max_len < 2 {
            return Err(Error::InvalidConfig("max_len must be at least 2".into()));
        }
        let d = config.encoder.d_model;
        let mut rng = stream(seed, Purpose::Init);
        let mut params = ParamStore::new();
        let embedding = params.add_uniform("embedding", VOCAB_SIZE, d, d, &mut rng);
        let encoder = Encoder::new(&mut params, "encoder", config.encoder, &mut rng)?;
        let mlm_head = Linear::new(&mut params, "mlm_head", d, VOCAB_SIZE, &mut rng);
        let classifier = Linear::new(&mut params, "classifier", d, 3, &mut rng);
        Ok(Self { config, params, embedding, encoder, mlm_head, classifier })
    }

    pub fn tokenize(&self, t: &PhoneticTranscript) -> TokenSequence {
        tokenize(&t.text, self.config.max_len)
    }

    /// Hidden states of the unpadded sequence. Dropping padding is
    /// equivalent to masking it as attention keys.
    pub(crate) fn hidden(
        &self,
        g: &mut Graph<f64>,
        params: &ParamStore<f64>,
        ids: &[usize],
        training: bool,
        rng: &mut StreamRng,
    ) -> Result<Var> {
        let table = g.param(params, self.embedding);
        let x = g.gather_rows(table, ids);
        // scaled up so token identity is not drowned by the unit-amplitude
        // positional signal
        let d = self.config.encoder.d_model;
        let x = g.scale(x, (d as f64).sqrt());
        let pe = g.constant(positional_encoding(ids.len(), d)?);
        let x = g.add(x, pe);
        self.encoder.forward(g, params, x, None, training, rng)
    }

    /// Class logits `1 x 3` from the CLS position.
    pub fn class_logits(
        &self,
        g: &mut Graph<f64>,
        params: &ParamStore<f64>,
        seq: &TokenSequence,
        training: bool,
        rng: &mut StreamRng,
    ) -> Result<Var> {
        let h = self.hidden(g, params, seq.unpadded(), training, rng)?;
        let cls = g.gather_rows(h, &[0]);
        Ok(self.classifier.forward(g, params, cls))
    }

    /// Vocabulary logits at `positions`, `positions.len() x VOCAB_SIZE`.
    pub fn mlm_logits(
        &self,
        g: &mut Graph<f64>,
        params: &ParamStore<f64>,
        seq: &TokenSequence,
        positions: &[usize],
        training: bool,
        rng: &mut StreamRng,
    ) -> Result<Var> {
        let h = self.hidden(g, params, seq.unpadded(), training, rng)?;
        let rows = g.gather_rows(h, positions);
        Ok(self.mlm_head.forward(g, params, rows))
    }

    pub fn classify(&self, t: &PhoneticTranscript) -> Result<SentimentResult> {
        let mut g = Graph::new();
        let mut rng = stream(0, Purpose::Dropout);
        let logits = self.class_logits(&mut g, &self.params, &self.tokenize(t), false, &mut rng)?;
        Ok(SentimentResult::from_logits(g.value(logits).values()))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(json!({ "kind": "text", "config": self.config }), &self.params)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let h = &ckpt.hyperparameters;
        if h.get("kind").and_then(|k| k.as_str()) != Some("text") {
            return Err(Error::Checkpoint("not a text model checkpoint".into()));
        }
        let config: TextConfig = serde_json::from_value(h["config"].clone())?;
        let mut model = Self::new(config, 0)?;
        model.params.load_named(&ckpt.parameters)?;
        Ok(model)
    }

    /// Sets the classifier head directly; used to pin logits in tests and
    /// by callers that train the head elsewhere.
    pub fn set_classifier(&mut self, weight: Tensor<f64>, bias: Tensor<f64>) -> Result<()> {
        let (w, b) = (self.params.get(self.classifier.w), self.params.get(self.classifier.b));
        if !weight.same_shape(w) || !bias.same_shape(b) {
            return Err(Error::ShapeMismatch("classifier head".into()));
        }
        *self.params.get_mut(self.classifier.w) = weight;
        *self.params.get_mut(self.classifier.b) = bias;
        Ok(())
    }
}
