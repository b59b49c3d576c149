//! Staged training: emotion-conditioned seq2seq, then the vocabulary
//! predictor on a frozen encoder, then one of three fine-tune regimes.

use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynvocab::{build_dynamic_vocab, default_neg_ratio, predict_vocab_probs, vocab_loss, DynamicVocab, VocabPredictorParams};
use crate::emotion::{ClassifierParams, EmotionClassifier, EmotionMap, EmotionTaxonomy};
use crate::encdec::{encode, sequence_nll, ModelDims, Seq2SeqParams};
use crate::error::{Error, Result};
use crate::model::DvErgModel;
use crate::numerics::checkpoint::{params_from_bytes, params_to_bytes};
use crate::numerics::{Adam, AdamConfig, Gradients, ParamId, ParameterStore, Tape, Tensor};
use crate::text::{TrainingExample, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FinetuneMode {
    #[serde(rename = "no-ft")]
    NoFt,
    #[serde(rename = "ft-target")]
    FtTarget,
    #[serde(rename = "ft-both")]
    FtBoth,
}

impl fmt::Display for FinetuneMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FinetuneMode::NoFt => "no-ft",
            FinetuneMode::FtTarget => "ft-target",
            FinetuneMode::FtBoth => "ft-both",
        })
    }
}

impl std::str::FromStr for FinetuneMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "no-ft" => Ok(FinetuneMode::NoFt),
            "ft-target" => Ok(FinetuneMode::FtTarget),
            "ft-both" => Ok(FinetuneMode::FtBoth),
            other => Err(Error::Invalid(format!(
                "unknown fine-tune mode `{other}` (expected no-ft, ft-target or ft-both)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f32,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub hidden: usize,
    pub emb_dim: usize,
    pub emotion_dim: usize,
    pub attn_dim: usize,
    pub readout_dim: usize,
    pub beta_hidden: usize,
    pub adam_beta1: f32,
    pub adam_beta2: f32,
    pub adam_eps: f32,
    pub mode: FinetuneMode,
    pub lambda: f32,
    pub clip_norm: f32,
    /// Negatives per positive in the vocabulary loss; `None` picks by size.
    pub neg_ratio: Option<usize>,
    /// Selection threshold and cap used to build vocabularies while fine-tuning.
    pub tau: f32,
    pub cap: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.001,
            epochs: 10,
            batch_size: 32,
            seed: 0,
            hidden: 128,
            emb_dim: 300,
            emotion_dim: 32,
            attn_dim: 128,
            readout_dim: 128,
            beta_hidden: 128,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            mode: FinetuneMode::FtTarget,
            lambda: 1.0,
            clip_norm: 5.0,
            neg_ratio: None,
            tau: 0.5,
            cap: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Invalid(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Invalid("batch size must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Invalid(format!("tau must be in [0, 1], got {}", self.tau)));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    pub fn dims(&self, vocab: usize, emotions: usize) -> ModelDims {
        ModelDims {
            vocab,
            emotions,
            emb: self.emb_dim,
            hidden: self.hidden,
            emotion_dim: self.emotion_dim,
            attn: self.attn_dim,
            readout: self.readout_dim,
            beta_hidden: self.beta_hidden,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    S2s,
    Vocab,
    Finetuned,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::S2s => "s2s",
            Stage::Vocab => "vocab",
            Stage::Finetuned => "finetuned",
        })
    }
}

/// Everything needed to resume training or serve: parameters, vocabulary,
/// emotion configuration, the config that produced it and its stage.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: DvErgModel,
    pub classifier: Option<EmotionClassifier>,
    pub taxonomy: EmotionTaxonomy,
    pub emotion_map: EmotionMap,
    pub config: TrainConfig,
    pub stage: Stage,
}

pub const PARAMS_FILE: &str = "params.dverg";
pub const META_FILE: &str = "meta.json";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    stage: Stage,
    config: TrainConfig,
    taxonomy: EmotionTaxonomy,
    emotion_map: EmotionMap,
    vocab: Vocabulary,
}

impl Checkpoint {
    pub fn require_stage(&self, required: Stage) -> Result<()> {
        if self.stage != required {
            return Err(Error::Stage {
                required: required.to_string(),
                found: self.stage.to_string(),
            });
        }
        Ok(())
    }

    /// All parameters in one store: model first, then classifier.
    pub fn params(&self) -> ParameterStore<f32> {
        let mut all = self.model.store.clone();
        if let Some(c) = &self.classifier {
            all.merge(&c.store).expect("component prefixes are disjoint");
        }
        all
    }

    pub fn params_bytes(&self) -> Vec<u8> {
        params_to_bytes(&self.params())
    }

    /// Writes `params.dverg` and `meta.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(PARAMS_FILE), self.params_bytes())?;
        let meta = Meta {
            stage: self.stage,
            config: self.config,
            taxonomy: self.taxonomy.clone(),
            emotion_map: self.emotion_map.clone(),
            vocab: self.model.vocab.clone(),
        };
        let mut json = serde_json::to_string_pretty(&meta)?;
        json.push('\n');
        fs::write(dir.join(META_FILE), json)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: Meta = serde_json::from_slice(&fs::read(dir.join(META_FILE))?)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", dir.join(META_FILE).display())))?;
        let all = params_from_bytes(&fs::read(dir.join(PARAMS_FILE))?)?;
        let mut model_store = ParameterStore::new();
        let mut cls_store = ParameterStore::new();
        for (name, t) in all.iter() {
            if ClassifierParams::is_member(name) {
                cls_store.insert(name, t.clone())?;
            } else {
                model_store.insert(name, t.clone())?;
            }
        }
        let classifier = if cls_store.is_empty() {
            None
        } else {
            Some(EmotionClassifier::from_store(cls_store)?)
        };
        let model = DvErgModel::from_store(model_store, meta.vocab)?;
        if model.dims().emotions != meta.taxonomy.len() {
            return Err(Error::Checkpoint("emotion table does not match the taxonomy".into()));
        }
        Ok(Checkpoint {
            model,
            classifier,
            taxonomy: meta.taxonomy,
            emotion_map: meta.emotion_map,
            config: meta.config,
            stage: meta.stage,
        })
    }
}

fn mask_for(store: &ParameterStore<f32>, pred: impl Fn(&str) -> bool) -> Vec<bool> {
    store.ids().map(|id| pred(store.name(id))).collect()
}

fn example_seed(seed: u64, epoch: usize, index: usize) -> u64 {
    seed ^ ((epoch as u64) << 32) ^ (index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

fn check_examples(examples: &[TrainingExample], model: &DvErgModel) -> Result<()> {
    if examples.is_empty() {
        return Err(Error::EmptyInput("training corpus"));
    }
    let dims = model.dims();
    for ex in examples {
        if ex.question.is_empty() || ex.response.is_empty() {
            return Err(Error::EmptyInput("question or response"));
        }
        if ex.response_emotion.0 >= dims.emotions {
            return Err(Error::UnknownEmotion(ex.response_emotion.to_string()));
        }
        if let Some(&bad) = ex.question.iter().chain(&ex.response).find(|&&t| t >= dims.vocab) {
            return Err(Error::Invalid(format!("token id {bad} outside the vocabulary")));
        }
    }
    Ok(())
}

/// Shuffled mini-batches of example indices for one epoch.
fn batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

fn apply(
    opt: &mut Adam,
    store: &mut ParameterStore<f32>,
    grads: &mut Gradients<f32>,
    mask: &[bool],
    clip: f32,
) {
    Adam::clip(grads, |id: ParamId| mask[id.0], clip);
    opt.step(store, grads, |id| mask[id.0]);
}

/// Teacher-forced training of the seq2seq network over the full static
/// vocabulary, with `e` taken from each example's response emotion. The
/// vocabulary predictor is initialised but left untouched. `on_epoch`
/// receives the epoch's mean per-token loss.
pub fn train_seq2seq(
    examples: &[TrainingExample],
    vocab: Vocabulary,
    taxonomy: EmotionTaxonomy,
    emotion_map: EmotionMap,
    word_emb: Option<Tensor<f32>>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f32),
) -> Result<Checkpoint> {
    cfg.validate()?;
    let dims = cfg.dims(vocab.len(), taxonomy.len());
    let mut model = DvErgModel::new(vocab, dims, word_emb, cfg.seed)?;
    check_examples(examples, &model)?;
    let mask = mask_for(&model.store, Seq2SeqParams::is_member);
    let mut opt = Adam::new(cfg.adam(), &model.store);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let full = DynamicVocab::full(&model.vocab);
    let targets: Vec<_> = examples.iter().map(TrainingExample::targets).collect();

    for epoch in 0..cfg.epochs {
        let (mut total, mut tokens) = (0f64, 0usize);
        for batch in batches(examples.len(), cfg.batch_size, &mut rng) {
            let batch_tokens: usize = batch.iter().map(|&i| targets[i].len()).sum();
            let mut grads = Gradients::new(&model.store);
            for &i in &batch {
                let ex = &examples[i];
                let mut tape = Tape::new(&model.store);
                let enc = encode(&mut tape, &model.s2s, &ex.question)?;
                let nll = sequence_nll(&mut tape, &model.s2s, &enc, ex.response_emotion, &targets[i], &full)?;
                total += f64::from(tape.scalar(nll));
                let loss = tape.scale(nll, 1.0 / batch_tokens as f32);
                tape.backward(loss, &mut grads)?;
            }
            tokens += batch_tokens;
            apply(&mut opt, &mut model.store, &mut grads, &mask, cfg.clip_norm);
        }
        on_epoch(epoch, (total / tokens as f64) as f32);
    }
    Ok(Checkpoint {
        model,
        classifier: None,
        taxonomy,
        emotion_map,
        config: *cfg,
        stage: Stage::S2s,
    })
}

/// Mean per-token NLL over the full vocabulary.
pub fn evaluate_nll(model: &DvErgModel, examples: &[TrainingExample]) -> Result<f32> {
    let full = DynamicVocab::full(&model.vocab);
    let (mut total, mut tokens) = (0f64, 0usize);
    for ex in examples {
        let targets = ex.targets();
        let mut tape = Tape::new(&model.store);
        let enc = encode(&mut tape, &model.s2s, &ex.question)?;
        let nll = sequence_nll(&mut tape, &model.s2s, &enc, ex.response_emotion, &targets, &full)?;
        total += f64::from(tape.scalar(nll));
        tokens += targets.len();
    }
    Ok((total / tokens.max(1) as f64) as f32)
}

fn neg_ratio(cfg: &TrainConfig, model: &DvErgModel) -> usize {
    cfg.neg_ratio
        .unwrap_or_else(|| default_neg_ratio(model.vocab.content_ids().len()))
}

/// Trains only the vocabulary predictor on top of the frozen encoder.
/// `on_epoch` receives the epoch's mean vocabulary loss.
pub fn train_vocab_model(
    examples: &[TrainingExample],
    mut ckpt: Checkpoint,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f32),
) -> Result<Checkpoint> {
    cfg.validate()?;
    ckpt.require_stage(Stage::S2s)?;
    check_examples(examples, &ckpt.model)?;
    let model = &mut ckpt.model;
    let ratio = neg_ratio(cfg, model);
    // The encoder is frozen, so every h can be computed once.
    let states: Vec<Vec<f32>> = examples
        .iter()
        .map(|ex| {
            let mut tape = Tape::new(&model.store);
            let enc = encode(&mut tape, &model.s2s, &ex.question)?;
            Ok(tape.value(enc.h).to_vec())
        })
        .collect::<Result<_>>()?;

    let mask = mask_for(&model.store, VocabPredictorParams::is_member);
    let mut opt = Adam::new(cfg.adam(), &model.store);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xb37a);
    for epoch in 0..cfg.epochs {
        let mut total = 0f64;
        for batch in batches(examples.len(), cfg.batch_size, &mut rng) {
            let mut grads = Gradients::new(&model.store);
            for &i in &batch {
                let ex = &examples[i];
                let mut tape = Tape::new(&model.store);
                let h = tape.input(states[i].clone());
                let probs = predict_vocab_probs(&mut tape, &model.beta, h, ex.response_emotion)?;
                let lv = vocab_loss(&mut tape, probs, &ex.response, &model.vocab, ratio, example_seed(cfg.seed, epoch, i))?;
                total += f64::from(tape.scalar(lv));
                let loss = tape.scale(lv, 1.0 / batch.len() as f32);
                tape.backward(loss, &mut grads)?;
            }
            apply(&mut opt, &mut model.store, &mut grads, &mask, cfg.clip_norm);
        }
        on_epoch(epoch, (total / examples.len() as f64) as f32);
    }
    ckpt.stage = Stage::Vocab;
    Ok(ckpt)
}

/// Mean vocabulary loss with the same negatives as epoch 0 of training.
pub fn evaluate_vocab_loss(model: &DvErgModel, examples: &[TrainingExample], cfg: &TrainConfig) -> Result<f32> {
    let ratio = neg_ratio(cfg, model);
    let mut total = 0f64;
    for (i, ex) in examples.iter().enumerate() {
        let mut tape = Tape::new(&model.store);
        let enc = encode(&mut tape, &model.s2s, &ex.question)?;
        let probs = predict_vocab_probs(&mut tape, &model.beta, enc.h, ex.response_emotion)?;
        let lv = vocab_loss(&mut tape, probs, &ex.response, &model.vocab, ratio, example_seed(cfg.seed, 0, i))?;
        total += f64::from(tape.scalar(lv));
    }
    Ok((total / examples.len().max(1) as f64) as f32)
}

/// Training-time vocabulary: the predicted set plus every reference word.
fn training_vocab(model: &DvErgModel, probs: Vec<f32>, ex: &TrainingExample, targets: &[usize], cfg: &TrainConfig) -> DynamicVocab {
    let mut dv = build_dynamic_vocab(probs, &model.vocab, &ex.question, cfg.tau, cfg.cap);
    dv.force_include(targets);
    dv
}

/// Joint objective `Σ NLL / Σ tokens + λ · mean vocab loss`, with the
/// generation NLL computed over each example's training-time vocabulary.
pub fn joint_loss(model: &DvErgModel, examples: &[TrainingExample], cfg: &TrainConfig) -> Result<f32> {
    let ratio = neg_ratio(cfg, model);
    let (mut nll_sum, mut tokens, mut voc_sum) = (0f64, 0usize, 0f64);
    for (i, ex) in examples.iter().enumerate() {
        let targets = ex.targets();
        let mut tape = Tape::new(&model.store);
        let enc = encode(&mut tape, &model.s2s, &ex.question)?;
        let probs = predict_vocab_probs(&mut tape, &model.beta, enc.h, ex.response_emotion)?;
        let dv = training_vocab(model, tape.value(probs).to_vec(), ex, &targets, cfg);
        let nll = sequence_nll(&mut tape, &model.s2s, &enc, ex.response_emotion, &targets, &dv)?;
        let lv = vocab_loss(&mut tape, probs, &ex.response, &model.vocab, ratio, example_seed(cfg.seed, 0, i))?;
        nll_sum += f64::from(tape.scalar(nll));
        voc_sum += f64::from(tape.scalar(lv));
        tokens += targets.len();
    }
    let n = examples.len().max(1) as f64;
    Ok((nll_sum / tokens.max(1) as f64 + f64::from(cfg.lambda) * voc_sum / n) as f32)
}

/// Joint fine-tuning. `no-ft` returns the parameters untouched,
/// `ft-target` updates only the vocabulary predictor, `ft-both` updates
/// everything. `on_epoch` receives the epoch's mean joint loss.
pub fn finetune(
    examples: &[TrainingExample],
    mut ckpt: Checkpoint,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f32),
) -> Result<Checkpoint> {
    cfg.validate()?;
    ckpt.require_stage(Stage::Vocab)?;
    check_examples(examples, &ckpt.model)?;
    ckpt.stage = Stage::Finetuned;
    if cfg.mode == FinetuneMode::NoFt {
        return Ok(ckpt);
    }
    let both = cfg.mode == FinetuneMode::FtBoth;
    let model = &mut ckpt.model;
    let ratio = neg_ratio(cfg, model);
    let mask = mask_for(&model.store, |name| {
        VocabPredictorParams::is_member(name) || (both && Seq2SeqParams::is_member(name))
    });
    let mut opt = Adam::new(cfg.adam(), &model.store);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xf1e7);
    let targets: Vec<_> = examples.iter().map(TrainingExample::targets).collect();
    let lambda = cfg.lambda;

    for epoch in 0..cfg.epochs {
        let (mut nll_sum, mut tokens, mut voc_sum) = (0f64, 0usize, 0f64);
        for batch in batches(examples.len(), cfg.batch_size, &mut rng) {
            let batch_tokens: usize = batch.iter().map(|&i| targets[i].len()).sum();
            let mut grads = Gradients::new(&model.store);
            for &i in &batch {
                let ex = &examples[i];
                let mut tape = Tape::new(&model.store);
                let enc = encode(&mut tape, &model.s2s, &ex.question)?;
                // Vocabulary selection is discrete, so the generation term
                // only reaches the predictor through the shared encoder.
                let h = if both { enc.h } else { tape.detach(enc.h) };
                let probs = predict_vocab_probs(&mut tape, &model.beta, h, ex.response_emotion)?;
                let dv = training_vocab(model, tape.value(probs).to_vec(), ex, &targets[i], cfg);
                let lv = vocab_loss(&mut tape, probs, &ex.response, &model.vocab, ratio, example_seed(cfg.seed, epoch, i))?;
                let lv_scaled = tape.scale(lv, lambda / batch.len() as f32);
                voc_sum += f64::from(tape.scalar(lv));
                let loss = if both {
                    let nll = sequence_nll(&mut tape, &model.s2s, &enc, ex.response_emotion, &targets[i], &dv)?;
                    nll_sum += f64::from(tape.scalar(nll));
                    let gen = tape.scale(nll, 1.0 / batch_tokens as f32);
                    tape.add(gen, lv_scaled)?
                } else {
                    let mut value_tape = Tape::new(&model.store);
                    let enc = encode(&mut value_tape, &model.s2s, &ex.question)?;
                    let nll = sequence_nll(&mut value_tape, &model.s2s, &enc, ex.response_emotion, &targets[i], &dv)?;
                    nll_sum += f64::from(value_tape.scalar(nll));
                    lv_scaled
                };
                tape.backward(loss, &mut grads)?;
            }
            tokens += batch_tokens;
            apply(&mut opt, &mut model.store, &mut grads, &mask, cfg.clip_norm);
        }
        let joint = nll_sum / tokens as f64 + f64::from(lambda) * voc_sum / examples.len() as f64;
        on_epoch(epoch, joint as f32);
    }
    Ok(ckpt)
}

/// `-log softmax(logits)[target]`, value only.
pub fn nll_loss(logits: &[f32], target: usize) -> Result<f32> {
    let store = ParameterStore::<f32>::new();
    let mut tape = Tape::new(&store);
    let l = tape.input(logits.to_vec());
    let loss = tape.nll(l, target)?;
    Ok(tape.scalar(loss))
}
