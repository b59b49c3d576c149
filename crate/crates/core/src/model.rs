use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dynvocab::VocabPredictorParams;
use crate::emotion::EmotionId;
use crate::encdec::{encode, ModelDims, Seq2SeqParams};
use crate::error::{Error, Result};
use crate::dynvocab::predict_vocab_probs;
use crate::numerics::{ParameterStore, Tape, Tensor};
use crate::text::{TokenId, Vocabulary};

/// Seq2seq network and vocabulary predictor sharing one parameter store
/// (`s2s.*` and `beta.*` names), plus the vocabulary they index.
#[derive(Debug, Clone)]
pub struct DvErgModel {
    pub store: ParameterStore<f32>,
    pub s2s: Seq2SeqParams,
    pub beta: VocabPredictorParams,
    pub vocab: Vocabulary,
}

impl DvErgModel {
    pub fn new(
        vocab: Vocabulary,
        dims: ModelDims,
        word_emb: Option<Tensor<f32>>,
        seed: u64,
    ) -> Result<Self> {
        if dims.vocab != vocab.len() {
            return Err(Error::shape(format!(
                "dims.vocab = {} but vocabulary has {} ids",
                dims.vocab,
                vocab.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParameterStore::new();
        let s2s = Seq2SeqParams::init(&mut store, dims, word_emb, &mut rng)?;
        let beta = VocabPredictorParams::init(
            &mut store,
            dims.annotation(),
            dims.emotions,
            dims.emotion_dim,
            dims.beta_hidden,
            vocab.content_ids().len(),
            &mut rng,
        )?;
        Ok(DvErgModel {
            store,
            s2s,
            beta,
            vocab,
        })
    }

    pub fn from_store(store: ParameterStore<f32>, vocab: Vocabulary) -> Result<Self> {
        let beta = VocabPredictorParams::bind(&store)?;
        let s2s = Seq2SeqParams::bind(&store, beta.hidden)?;
        if s2s.dims.vocab != vocab.len() || beta.content != vocab.content_ids().len() {
            return Err(Error::Checkpoint(
                "parameter shapes do not match the vocabulary".into(),
            ));
        }
        Ok(DvErgModel {
            store,
            s2s,
            beta,
            vocab,
        })
    }

    pub fn dims(&self) -> ModelDims {
        self.s2s.dims
    }

    /// Content-word selection probabilities for one question.
    pub fn vocab_probs(&self, question: &[TokenId], emotion: EmotionId) -> Result<Vec<f32>> {
        let mut tape = Tape::new(&self.store);
        let enc = encode(&mut tape, &self.s2s, question)?;
        let p = predict_vocab_probs(&mut tape, &self.beta, enc.h, emotion)?;
        Ok(tape.value(p).to_vec())
    }

    /// Copy of the parameters restricted to one component prefix.
    pub fn component(&self, prefix: &str) -> ParameterStore<f32> {
        self.store.filter_prefix(prefix)
    }
}
