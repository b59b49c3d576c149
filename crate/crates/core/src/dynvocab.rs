//! Per-input dynamic vocabulary: a predictor from `⟨h, e⟩` to independent
//! selection probabilities over content words, the rule that turns those
//! probabilities into an active id set, and the predictor's training loss.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::emotion::EmotionId;
use crate::error::{Error, Result};
use crate::numerics::{ParamId, ParameterStore, Scalar, Tape, Tensor, Var};
use crate::text::{content_positions, TokenId, TokenKind, Vocabulary, EOS};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VocabPredictorParams {
    pub emo_emb: ParamId,
    pub hid_w: ParamId,
    pub hid_b: ParamId,
    pub out_w: ParamId,
    pub out_b: ParamId,
    pub content: usize,
    pub hidden: usize,
}

pub const BETA_PREFIX: &str = "beta.";

impl VocabPredictorParams {
    /// `state_dim` is the width of the encoder summary `h`; one output unit
    /// per content word.
    pub fn init<T: Scalar>(
        store: &mut ParameterStore<T>,
        state_dim: usize,
        emotions: usize,
        emotion_dim: usize,
        hidden: usize,
        content: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(VocabPredictorParams {
            emo_emb: store.insert("beta.emo_emb", Tensor::xavier(vec![emotions, emotion_dim], rng))?,
            hid_w: store.insert(
                "beta.hid.w",
                Tensor::xavier(vec![hidden, state_dim + emotion_dim], rng),
            )?,
            hid_b: store.insert("beta.hid.b", Tensor::zeros(vec![hidden]))?,
            out_w: store.insert("beta.out.w", Tensor::xavier(vec![content, hidden], rng))?,
            out_b: store.insert("beta.out.b", Tensor::zeros(vec![content]))?,
            content,
            hidden,
        })
    }

    pub fn bind<T: Scalar>(store: &ParameterStore<T>) -> Result<Self> {
        let out_w = store.id("beta.out.w")?;
        let (content, hidden) = store.get(out_w).matrix_dims();
        Ok(VocabPredictorParams {
            emo_emb: store.id("beta.emo_emb")?,
            hid_w: store.id("beta.hid.w")?,
            hid_b: store.id("beta.hid.b")?,
            out_w,
            out_b: store.id("beta.out.b")?,
            content,
            hidden,
        })
    }

    pub fn is_member(name: &str) -> bool {
        name.starts_with(BETA_PREFIX)
    }
}

/// `P_c = σ(out_c · relu(W [h ‖ emo(e)] + b) + b_c)` for every content word.
pub fn predict_vocab_probs<T: Scalar>(
    tape: &mut Tape<'_, T>,
    p: &VocabPredictorParams,
    h: Var,
    emotion: EmotionId,
) -> Result<Var> {
    let emo_table = tape.param(p.emo_emb);
    if emotion.0 >= tape.dims(emo_table).0 {
        return Err(Error::UnknownEmotion(emotion.to_string()));
    }
    let emo = tape.row(emo_table, emotion.0)?;
    let x = tape.concat(&[h, emo]);
    let (w, b) = (tape.param(p.hid_w), tape.param(p.hid_b));
    let z = tape.matvec(w, x)?;
    let z = tape.add(z, b)?;
    let z = tape.relu(z);
    let (ow, ob) = (tape.param(p.out_w), tape.param(p.out_b));
    let logits = tape.matvec(ow, z)?;
    let logits = tape.add(logits, ob)?;
    Ok(tape.sigmoid(logits))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Threshold,
    ForcedFunction,
    ForcedQuestion,
    ForcedReference,
}

/// Sorted active token ids with the reason each one is present, plus the
/// selection probabilities they were derived from (empty in static mode).
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicVocab {
    active: Vec<TokenId>,
    provenance: Vec<Provenance>,
    probs: Vec<f32>,
}

impl DynamicVocab {
    /// Every id of `vocab`: the static full-vocabulary baseline.
    pub fn full(vocab: &Vocabulary) -> Self {
        let provenance = (0..vocab.len())
            .map(|id| match vocab.kind(id) {
                TokenKind::Content => Provenance::Threshold,
                _ => Provenance::ForcedFunction,
            })
            .collect();
        DynamicVocab {
            active: (0..vocab.len()).collect(),
            provenance,
            probs: Vec::new(),
        }
    }

    /// An explicit id set; must contain EOS to be decodable.
    pub fn from_active(mut active: Vec<TokenId>) -> Self {
        active.sort_unstable();
        active.dedup();
        let provenance = vec![Provenance::Threshold; active.len()];
        DynamicVocab {
            active,
            provenance,
            probs: Vec::new(),
        }
    }

    pub fn active(&self) -> &[TokenId] {
        &self.active
    }

    pub fn provenance(&self) -> &[Provenance] {
        &self.provenance
    }

    pub fn probs(&self) -> &[f32] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.active.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }

    pub fn contains(&self, id: TokenId) -> bool {
        self.active.binary_search(&id).is_ok()
    }

    /// Index of `id` within the active list (and thus within step logits).
    pub fn position(&self, id: TokenId) -> Option<usize> {
        self.active.binary_search(&id).ok()
    }

    /// Adds any missing `reference` ids so a teacher-forced likelihood is
    /// always defined.
    pub fn force_include(&mut self, reference: &[TokenId]) {
        for &id in reference {
            if let Err(pos) = self.active.binary_search(&id) {
                self.active.insert(pos, id);
                self.provenance.insert(pos, Provenance::ForcedReference);
            }
        }
    }
}

/// Active set = reserved ∪ function words ∪ question content words ∪
/// `{c : P_c ≥ tau}`, where the thresholded part keeps only the `cap`
/// most probable words when `cap > 0`. Ties rank the lower id first.
pub fn build_dynamic_vocab(
    probs: Vec<f32>,
    vocab: &Vocabulary,
    question: &[TokenId],
    tau: f32,
    cap: usize,
) -> DynamicVocab {
    let content = vocab.content_ids();
    let mut entries: Vec<(TokenId, Provenance)> = vocab
        .reserved_ids()
        .chain(vocab.function_ids().iter().copied())
        .map(|id| (id, Provenance::ForcedFunction))
        .collect();

    let forced: BTreeSet<usize> = content_positions(vocab, question).into_iter().collect();
    entries.extend(forced.iter().map(|&c| (content[c], Provenance::ForcedQuestion)));

    let mut chosen: Vec<usize> = (0..content.len())
        .filter(|c| !forced.contains(c) && probs.get(*c).is_some_and(|&p| p >= tau))
        .collect();
    if cap > 0 && chosen.len() > cap {
        chosen.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
        chosen.truncate(cap);
    }
    entries.extend(chosen.into_iter().map(|c| (content[c], Provenance::Threshold)));
    entries.sort_unstable_by_key(|e| e.0);
    debug_assert!(entries.binary_search_by_key(&EOS, |e| e.0).is_ok());

    let (active, provenance) = entries.into_iter().unzip();
    DynamicVocab {
        active,
        provenance,
        probs,
    }
}

/// Negatives per positive for a content vocabulary of the given size:
/// every negative below 10,000 content words, five per positive above.
pub fn default_neg_ratio(content_len: usize) -> usize {
    if content_len < 10_000 {
        0
    } else {
        5
    }
}

/// `(content position, target)` pairs: 1 for content words of the
/// reference, 0 for negatives. `neg_ratio == 0` uses every negative;
/// otherwise `neg_ratio * max(1, #positives)` are drawn without replacement.
pub fn vocab_loss_terms(
    vocab: &Vocabulary,
    reference: &[TokenId],
    neg_ratio: usize,
    seed: u64,
) -> Vec<(usize, bool)> {
    let positives = content_positions(vocab, reference);
    let n = vocab.content_ids().len();
    let mut is_pos = vec![false; n];
    for &c in &positives {
        is_pos[c] = true;
    }
    let negatives: Vec<usize> = (0..n).filter(|&c| !is_pos[c]).collect();
    let mut terms: Vec<(usize, bool)> = positives.iter().map(|&c| (c, true)).collect();
    if neg_ratio == 0 {
        terms.extend(negatives.iter().map(|&c| (c, false)));
    } else {
        let want = (neg_ratio * positives.len().max(1)).min(negatives.len());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked: Vec<usize> = sample(&mut rng, negatives.len(), want)
            .into_iter()
            .map(|i| negatives[i])
            .collect();
        picked.sort_unstable();
        terms.extend(picked.into_iter().map(|c| (c, false)));
    }
    terms
}

/// Mean binary cross-entropy of `probs` (one entry per content word)
/// against the reference's content words and sampled negatives.
pub fn vocab_loss<T: Scalar>(
    tape: &mut Tape<'_, T>,
    probs: Var,
    reference: &[TokenId],
    vocab: &Vocabulary,
    neg_ratio: usize,
    seed: u64,
) -> Result<Var> {
    if reference.is_empty() {
        return Err(Error::EmptyInput("reference"));
    }
    let terms: Vec<(usize, T)> = vocab_loss_terms(vocab, reference, neg_ratio, seed)
        .into_iter()
        .map(|(c, t)| (c, if t { T::one() } else { T::zero() }))
        .collect();
    tape.bce(probs, &terms)
}
