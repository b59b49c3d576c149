//! Emotion-conditioned Bi-GRU encoder / GRU decoder with additive attention.
//!
//! The decoder consumes `[word_emb(prev) ‖ emotion_emb(e) ‖ context]` at every
//! step and projects onto an explicit list of active token ids, so the
//! output layer costs `O(|active|)` rather than `O(|V|)`.

use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynvocab::{build_dynamic_vocab, predict_vocab_probs, DynamicVocab};
use crate::emotion::EmotionId;
use crate::error::{Error, Result};
use crate::model::DvErgModel;
use crate::numerics::{log_softmax, ParamId, ParameterStore, Scalar, Tape, Tensor, Var};
use crate::text::{TokenId, BOS, EOS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub vocab: usize,
    pub emotions: usize,
    pub emb: usize,
    pub hidden: usize,
    pub emotion_dim: usize,
    pub attn: usize,
    pub readout: usize,
    pub beta_hidden: usize,
}

impl ModelDims {
    /// 300-d embeddings, hidden 128 in encoder and decoder, 32-d emotions.
    pub fn new(vocab: usize, emotions: usize) -> Self {
        ModelDims {
            vocab,
            emotions,
            emb: 300,
            hidden: 128,
            emotion_dim: 32,
            attn: 128,
            readout: 128,
            beta_hidden: 128,
        }
    }

    pub fn annotation(&self) -> usize {
        2 * self.hidden
    }

    pub fn decoder_input(&self) -> usize {
        self.emb + self.emotion_dim + self.annotation()
    }
}

/// Gate parameters of one GRU: `z = σ(Wz x + Uz h + bz)`,
/// `r = σ(Wr x + Ur h + br)`, `h̃ = tanh(W x + U (r ⊙ h) + b)`,
/// `h' = (1 - z) ⊙ h + z ⊙ h̃`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GruParams {
    pub wz: ParamId,
    pub uz: ParamId,
    pub bz: ParamId,
    pub wr: ParamId,
    pub ur: ParamId,
    pub br: ParamId,
    pub wh: ParamId,
    pub uh: ParamId,
    pub bh: ParamId,
    pub input: usize,
    pub hidden: usize,
}

const GATES: [&str; 9] = ["wz", "uz", "bz", "wr", "ur", "br", "wh", "uh", "bh"];

impl GruParams {
    pub fn init<T: Scalar>(
        store: &mut ParameterStore<T>,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut ids = Vec::with_capacity(9);
        for name in GATES {
            let t = match name.as_bytes()[0] {
                b'w' => Tensor::xavier(vec![hidden, input], rng),
                b'u' => Tensor::xavier(vec![hidden, hidden], rng),
                _ => Tensor::zeros(vec![hidden]),
            };
            ids.push(store.insert(format!("{prefix}.{name}"), t)?);
        }
        Ok(Self::from_ids(&ids, input, hidden))
    }

    pub fn bind<T: Scalar>(store: &ParameterStore<T>, prefix: &str) -> Result<Self> {
        let ids = GATES
            .iter()
            .map(|n| store.id(&format!("{prefix}.{n}")))
            .collect::<Result<Vec<_>>>()?;
        let (hidden, input) = store.get(ids[0]).matrix_dims();
        Ok(Self::from_ids(&ids, input, hidden))
    }

    fn from_ids(ids: &[ParamId], input: usize, hidden: usize) -> Self {
        GruParams {
            wz: ids[0],
            uz: ids[1],
            bz: ids[2],
            wr: ids[3],
            ur: ids[4],
            br: ids[5],
            wh: ids[6],
            uh: ids[7],
            bh: ids[8],
            input,
            hidden,
        }
    }
}

fn affine2<T: Scalar>(tape: &mut Tape<'_, T>, w: ParamId, x: Var, u: ParamId, h: Var, b: ParamId) -> Result<Var> {
    let (w, u, b) = (tape.param(w), tape.param(u), tape.param(b));
    let wx = tape.matvec(w, x)?;
    let uh = tape.matvec(u, h)?;
    let s = tape.add(wx, uh)?;
    tape.add(s, b)
}

/// One GRU step.
pub fn gru_cell<T: Scalar>(tape: &mut Tape<'_, T>, x: Var, h_prev: Var, g: &GruParams) -> Result<Var> {
    if tape.numel(x) != g.input || tape.numel(h_prev) != g.hidden {
        return Err(Error::shape(format!(
            "gru_cell: expected input {} and state {}, got {} and {}",
            g.input,
            g.hidden,
            tape.numel(x),
            tape.numel(h_prev)
        )));
    }
    let z = affine2(tape, g.wz, x, g.uz, h_prev, g.bz)?;
    let z = tape.sigmoid(z);
    let r = affine2(tape, g.wr, x, g.ur, h_prev, g.br)?;
    let r = tape.sigmoid(r);
    let rh = tape.mul(r, h_prev)?;
    let cand = affine2(tape, g.wh, x, g.uh, rh, g.bh)?;
    let cand = tape.tanh(cand);
    let keep = tape.one_minus(z);
    let keep = tape.mul(keep, h_prev)?;
    let update = tape.mul(z, cand)?;
    tape.add(keep, update)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Seq2SeqParams {
    pub word_emb: ParamId,
    pub emo_emb: ParamId,
    pub enc_fwd: GruParams,
    pub enc_bwd: GruParams,
    pub dec: GruParams,
    pub att_wa: ParamId,
    pub att_ua: ParamId,
    pub att_v: ParamId,
    pub init_w: ParamId,
    pub init_b: ParamId,
    pub read_w: ParamId,
    pub read_b: ParamId,
    pub out_w: ParamId,
    pub out_b: ParamId,
    pub dims: ModelDims,
}

pub const S2S_PREFIX: &str = "s2s.";

impl Seq2SeqParams {
    /// Xavier-uniform weights and zero biases. `word_emb`, when given,
    /// replaces the random embedding table (e.g. pre-trained vectors).
    pub fn init<T: Scalar>(
        store: &mut ParameterStore<T>,
        dims: ModelDims,
        word_emb: Option<Tensor<T>>,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let d = dims;
        let a = d.annotation();
        let word_emb = match word_emb {
            Some(t) if t.shape() == [d.vocab, d.emb] => t,
            Some(t) => {
                return Err(Error::shape(format!(
                    "embedding table {:?}, model expects [{}, {}]",
                    t.shape(),
                    d.vocab,
                    d.emb
                )))
            }
            None => Tensor::xavier(vec![d.vocab, d.emb], rng),
        };
        let word_emb = store.insert("s2s.word_emb", word_emb)?;
        let emo_emb = store.insert("s2s.emo_emb", Tensor::xavier(vec![d.emotions, d.emotion_dim], rng))?;
        let enc_fwd = GruParams::init(store, "s2s.enc_fwd", d.emb, d.hidden, rng)?;
        let enc_bwd = GruParams::init(store, "s2s.enc_bwd", d.emb, d.hidden, rng)?;
        let dec = GruParams::init(store, "s2s.dec", d.decoder_input(), d.hidden, rng)?;
        Ok(Seq2SeqParams {
            word_emb,
            emo_emb,
            enc_fwd,
            enc_bwd,
            dec,
            att_wa: store.insert("s2s.att.wa", Tensor::xavier(vec![d.attn, d.hidden], rng))?,
            att_ua: store.insert("s2s.att.ua", Tensor::xavier(vec![d.attn, a], rng))?,
            att_v: store.insert("s2s.att.v", Tensor::xavier(vec![d.attn], rng))?,
            init_w: store.insert("s2s.init.w", Tensor::xavier(vec![d.hidden, a], rng))?,
            init_b: store.insert("s2s.init.b", Tensor::zeros(vec![d.hidden]))?,
            read_w: store.insert(
                "s2s.readout.w",
                Tensor::xavier(vec![d.readout, d.hidden + a + d.emb], rng),
            )?,
            read_b: store.insert("s2s.readout.b", Tensor::zeros(vec![d.readout]))?,
            out_w: store.insert("s2s.out.w", Tensor::xavier(vec![d.vocab, d.readout], rng))?,
            out_b: store.insert("s2s.out.b", Tensor::zeros(vec![d.vocab]))?,
            dims,
        })
    }

    pub fn bind<T: Scalar>(store: &ParameterStore<T>, beta_hidden: usize) -> Result<Self> {
        let word_emb = store.id("s2s.word_emb")?;
        let emo_emb = store.id("s2s.emo_emb")?;
        let enc_fwd = GruParams::bind(store, "s2s.enc_fwd")?;
        let att_wa = store.id("s2s.att.wa")?;
        let read_w = store.id("s2s.readout.w")?;
        let (vocab, emb) = store.get(word_emb).matrix_dims();
        let (emotions, emotion_dim) = store.get(emo_emb).matrix_dims();
        let dims = ModelDims {
            vocab,
            emotions,
            emb,
            hidden: enc_fwd.hidden,
            emotion_dim,
            attn: store.get(att_wa).matrix_dims().0,
            readout: store.get(read_w).matrix_dims().0,
            beta_hidden,
        };
        Ok(Seq2SeqParams {
            word_emb,
            emo_emb,
            enc_fwd,
            enc_bwd: GruParams::bind(store, "s2s.enc_bwd")?,
            dec: GruParams::bind(store, "s2s.dec")?,
            att_wa,
            att_ua: store.id("s2s.att.ua")?,
            att_v: store.id("s2s.att.v")?,
            init_w: store.id("s2s.init.w")?,
            init_b: store.id("s2s.init.b")?,
            read_w,
            read_b: store.id("s2s.readout.b")?,
            out_w: store.id("s2s.out.w")?,
            out_b: store.id("s2s.out.b")?,
            dims,
        })
    }

    pub fn is_member(name: &str) -> bool {
        name.starts_with(S2S_PREFIX)
    }
}

/// Encoder result on a tape: per-position annotations `[fwd_t ‖ bwd_t]`,
/// their attention keys `Ua a_t`, and `h = [fwd_T ‖ bwd_1]`.
#[derive(Debug, Clone)]
pub struct EncoderOutput {
    pub annotations: Vec<Var>,
    pub keys: Vec<Var>,
    pub h: Var,
}

pub fn encode<T: Scalar>(tape: &mut Tape<'_, T>, p: &Seq2SeqParams, question: &[TokenId]) -> Result<EncoderOutput> {
    if question.is_empty() {
        return Err(Error::EmptyInput("question"));
    }
    if let Some(&bad) = question.iter().find(|&&t| t >= p.dims.vocab) {
        return Err(Error::Invalid(format!("token id {bad} outside vocabulary of {}", p.dims.vocab)));
    }
    let emb = tape.param(p.word_emb);
    let xs: Vec<Var> = question
        .iter()
        .map(|&t| tape.row(emb, t))
        .collect::<Result<_>>()?;
    let zero = vec![T::zero(); p.dims.hidden];

    let mut h = tape.input(zero.clone());
    let mut fwd = Vec::with_capacity(xs.len());
    for &x in &xs {
        h = gru_cell(tape, x, h, &p.enc_fwd)?;
        fwd.push(h);
    }
    let mut h = tape.input(zero);
    let mut bwd = vec![h; xs.len()];
    for (t, &x) in xs.iter().enumerate().rev() {
        h = gru_cell(tape, x, h, &p.enc_bwd)?;
        bwd[t] = h;
    }
    let annotations: Vec<Var> = fwd
        .iter()
        .zip(&bwd)
        .map(|(&f, &b)| tape.concat(&[f, b]))
        .collect();
    let ua = tape.param(p.att_ua);
    let keys = annotations
        .iter()
        .map(|&a| tape.matvec(ua, a))
        .collect::<Result<_>>()?;
    let h = tape.concat(&[fwd[fwd.len() - 1], bwd[0]]);
    Ok(EncoderOutput { annotations, keys, h })
}

/// Additive attention: `score_t = vᵀ tanh(Wa s + Ua a_t)`, softmax over t,
/// context `Σ w_t a_t`. Returns `(context, weights)`.
pub fn attend<T: Scalar>(
    tape: &mut Tape<'_, T>,
    p: &Seq2SeqParams,
    state: Var,
    annotations: &[Var],
) -> Result<(Var, Var)> {
    if annotations.is_empty() {
        return Err(Error::EmptyInput("annotations"));
    }
    let ua = tape.param(p.att_ua);
    let keys = annotations
        .iter()
        .map(|&a| tape.matvec(ua, a))
        .collect::<Result<Vec<_>>>()?;
    attend_keys(tape, p, state, annotations, &keys)
}

fn attend_keys<T: Scalar>(
    tape: &mut Tape<'_, T>,
    p: &Seq2SeqParams,
    state: Var,
    annotations: &[Var],
    keys: &[Var],
) -> Result<(Var, Var)> {
    let wa = tape.param(p.att_wa);
    let v = tape.param(p.att_v);
    let query = tape.matvec(wa, state)?;
    let scores = keys
        .iter()
        .map(|&k| {
            let s = tape.add(query, k)?;
            let s = tape.tanh(s);
            tape.dot(v, s)
        })
        .collect::<Result<Vec<_>>>()?;
    let scores = tape.concat(&scores);
    let weights = tape.softmax(scores)?;
    let context = tape.weighted_sum(weights, annotations)?;
    Ok((context, weights))
}

pub fn initial_state<T: Scalar>(tape: &mut Tape<'_, T>, p: &Seq2SeqParams, enc: &EncoderOutput) -> Result<Var> {
    let (w, b) = (tape.param(p.init_w), tape.param(p.init_b));
    let s = tape.matvec(w, enc.h)?;
    let s = tape.add(s, b)?;
    Ok(tape.tanh(s))
}

/// One decoder step over the ids in `active` (sorted, must contain EOS).
/// Returns logits aligned with `active` and the new decoder state.
pub fn decode_step<T: Scalar>(
    tape: &mut Tape<'_, T>,
    p: &Seq2SeqParams,
    prev_token: TokenId,
    state: Var,
    context: Var,
    emotion: EmotionId,
    active: &[TokenId],
) -> Result<(Var, Var)> {
    if active.binary_search(&EOS).is_err() {
        return Err(Error::MissingEos);
    }
    if emotion.0 >= p.dims.emotions {
        return Err(Error::UnknownEmotion(emotion.to_string()));
    }
    let emb = tape.param(p.word_emb);
    let prev = tape.row(emb, prev_token)?;
    let emo_table = tape.param(p.emo_emb);
    let emo = tape.row(emo_table, emotion.0)?;
    let x = tape.concat(&[prev, emo, context]);
    let state = gru_cell(tape, x, state, &p.dec)?;

    let (rw, rb) = (tape.param(p.read_w), tape.param(p.read_b));
    let feat = tape.concat(&[state, context, prev]);
    let r = tape.matvec(rw, feat)?;
    let r = tape.add(r, rb)?;
    let r = tape.tanh(r);

    let (ow, ob) = (tape.param(p.out_w), tape.param(p.out_b));
    let logits = tape.gather_matvec(ow, active, r)?;
    let bias = tape.gather(ob, active)?;
    let logits = tape.add(logits, bias)?;
    Ok((logits, state))
}

/// Summed teacher-forced NLL of `targets` (which should end in EOS) with
/// every target resolved inside `vocab`.
pub fn sequence_nll<T: Scalar>(
    tape: &mut Tape<'_, T>,
    p: &Seq2SeqParams,
    enc: &EncoderOutput,
    emotion: EmotionId,
    targets: &[TokenId],
    vocab: &DynamicVocab,
) -> Result<Var> {
    if targets.is_empty() {
        return Err(Error::EmptyInput("targets"));
    }
    let mut state = initial_state(tape, p, enc)?;
    let mut prev = BOS;
    let mut losses = Vec::with_capacity(targets.len());
    for &y in targets {
        let (context, _) = attend_keys(tape, p, state, &enc.annotations, &enc.keys)?;
        let (logits, next) = decode_step(tape, p, prev, state, context, emotion, vocab.active())?;
        let pos = vocab.position(y).ok_or(Error::TargetNotActive(y))?;
        losses.push(tape.nll(logits, pos)?);
        state = next;
        prev = y;
    }
    let all = tape.concat(&losses);
    Ok(tape.sum(all))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum DecodeMode {
    Greedy,
    Beam { width: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum VocabMode {
    /// Full vocabulary at every step (the plain attention seq2seq baseline).
    Static,
    /// Per-input vocabulary from the predictor; `cap == 0` means no cap.
    Dynamic { tau: f32, cap: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub mode: DecodeMode,
    pub max_len: usize,
    /// EOS is suppressed until this many tokens were produced.
    pub min_len: usize,
    pub vocab: VocabMode,
    /// Seeds response-emotion sampling in the serving pipeline.
    pub seed: u64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            mode: DecodeMode::Greedy,
            max_len: 20,
            min_len: 0,
            vocab: VocabMode::Dynamic { tau: 0.5, cap: 0 },
            seed: 0,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_len == 0 {
            return Err(Error::Invalid("max length must be at least 1".into()));
        }
        if let DecodeMode::Beam { width: 0 } = self.mode {
            return Err(Error::Invalid("beam width must be at least 1".into()));
        }
        if let VocabMode::Dynamic { tau, .. } = self.vocab {
            if !(0.0..=1.0).contains(&tau) {
                return Err(Error::Invalid(format!("tau must be in [0, 1], got {tau}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub encode_ms: f64,
    pub vocab_ms: f64,
    pub decode_ms: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    /// Response ids without the trailing EOS.
    pub tokens: Vec<TokenId>,
    pub vocab: DynamicVocab,
    /// Total log-probability, including EOS when it was produced.
    pub log_prob: f64,
    /// `log_prob` divided by the number of scored tokens.
    pub score: f64,
    pub timing: StageTiming,
}

#[derive(Clone)]
struct Hypothesis {
    tokens: Vec<TokenId>,
    state: Var,
    log_prob: f64,
    finished: bool,
}

impl Hypothesis {
    fn scored_len(&self) -> usize {
        self.tokens.len() + usize::from(self.finished)
    }

    fn score(&self) -> f64 {
        self.log_prob / self.scored_len().max(1) as f64
    }
}

/// Encodes the question, builds its vocabulary once, and decodes.
pub fn generate(
    model: &DvErgModel,
    question: &[TokenId],
    emotion: EmotionId,
    cfg: &GenerationConfig,
) -> Result<Generation> {
    cfg.validate()?;
    let p = &model.s2s;
    let mut tape = Tape::new(&model.store);

    let t0 = Instant::now();
    let enc = encode(&mut tape, p, question)?;
    let t1 = Instant::now();
    let vocab = match cfg.vocab {
        VocabMode::Static => DynamicVocab::full(&model.vocab),
        VocabMode::Dynamic { tau, cap } => {
            let probs = predict_vocab_probs(&mut tape, &model.beta, enc.h, emotion)?;
            let probs = tape.value(probs).to_vec();
            build_dynamic_vocab(probs, &model.vocab, question, tau, cap)
        }
    };
    let t2 = Instant::now();
    let state = initial_state(&mut tape, p, &enc)?;
    let mut ctx = Decoder {
        tape,
        p,
        enc: &enc,
        emotion,
        active: vocab.active(),
        eos_pos: vocab.position(EOS).ok_or(Error::MissingEos)?,
        min_len: cfg.min_len,
        steps: 0,
    };
    let greedy = ctx.greedy(state, cfg.max_len)?;
    let best = match cfg.mode {
        DecodeMode::Greedy | DecodeMode::Beam { width: 1 } => greedy,
        DecodeMode::Beam { width } => {
            let beam = ctx.beam(state, cfg.max_len, width)?;
            if beam.score() >= greedy.score() {
                beam
            } else {
                greedy
            }
        }
    };
    let steps = ctx.steps;
    let t3 = Instant::now();
    let ms = |a: Instant, b: Instant| (b - a).as_secs_f64() * 1e3;
    Ok(Generation {
        score: best.score(),
        log_prob: best.log_prob,
        tokens: best.tokens,
        vocab,
        timing: StageTiming {
            encode_ms: ms(t0, t1),
            vocab_ms: ms(t1, t2),
            decode_ms: ms(t2, t3),
            steps,
        },
    })
}

struct Decoder<'t, 'p> {
    tape: Tape<'t, f32>,
    p: &'p Seq2SeqParams,
    enc: &'p EncoderOutput,
    emotion: EmotionId,
    active: &'p [TokenId],
    eos_pos: usize,
    min_len: usize,
    steps: usize,
}

impl Decoder<'_, '_> {
    fn step(&mut self, prev: TokenId, state: Var, produced: usize) -> Result<(Vec<f64>, Var)> {
        self.steps += 1;
        let (context, _) = attend_keys(&mut self.tape, self.p, state, &self.enc.annotations, &self.enc.keys)?;
        let (logits, next) = decode_step(&mut self.tape, self.p, prev, state, context, self.emotion, self.active)?;
        let mut logp: Vec<f64> = log_softmax(self.tape.value(logits))
            .into_iter()
            .map(f64::from)
            .collect();
        if produced < self.min_len {
            logp[self.eos_pos] = f64::NEG_INFINITY;
        }
        Ok((logp, next))
    }

    fn greedy(&mut self, state: Var, max_len: usize) -> Result<Hypothesis> {
        let mut h = Hypothesis {
            tokens: Vec::new(),
            state,
            log_prob: 0.0,
            finished: false,
        };
        while h.tokens.len() < max_len {
            let prev = h.tokens.last().copied().unwrap_or(BOS);
            let (logp, next) = self.step(prev, h.state, h.tokens.len())?;
            let best = argmax(&logp);
            h.log_prob += logp[best];
            h.state = next;
            if best == self.eos_pos {
                h.finished = true;
                break;
            }
            h.tokens.push(self.active[best]);
        }
        Ok(h)
    }

    /// Length-normalised beam search; ties keep the lower active position.
    fn beam(&mut self, state: Var, max_len: usize, width: usize) -> Result<Hypothesis> {
        let mut live = vec![Hypothesis {
            tokens: Vec::new(),
            state,
            log_prob: 0.0,
            finished: false,
        }];
        let mut done: Vec<Hypothesis> = Vec::new();
        for _ in 0..max_len {
            let mut pool: Vec<(f64, usize, usize, f64, Var)> = Vec::new();
            for (hi, h) in live.iter().enumerate() {
                let prev = h.tokens.last().copied().unwrap_or(BOS);
                let (logp, next) = self.step(prev, h.state, h.tokens.len())?;
                for pos in top_k(&logp, width) {
                    let lp = h.log_prob + logp[pos];
                    let len = h.tokens.len() + 1;
                    pool.push((lp / len as f64, hi, pos, lp, next));
                }
            }
            pool.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            let mut next_live = Vec::with_capacity(width);
            for (_, hi, pos, lp, next) in pool.into_iter().take(width) {
                let mut h = live[hi].clone();
                h.log_prob = lp;
                h.state = next;
                if pos == self.eos_pos {
                    h.finished = true;
                    done.push(h);
                } else {
                    h.tokens.push(self.active[pos]);
                    next_live.push(h);
                }
            }
            live = next_live;
            if live.is_empty() || done.len() >= width {
                break;
            }
        }
        done.extend(live);
        let mut best = done.swap_remove(0);
        for h in done {
            if h.score() > best.score() {
                best = h;
            }
        }
        Ok(best)
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn top_k(xs: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..xs.len()).filter(|&i| xs[i].is_finite()).collect();
    let k = k.min(idx.len());
    if k == 0 {
        return idx;
    }
    idx.select_nth_unstable_by(k - 1, |&a, &b| xs[b].total_cmp(&xs[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx.sort_by(|&a, &b| xs[b].total_cmp(&xs[a]).then(a.cmp(&b)));
    idx
}

/// Log-probability of `tokens` (plus EOS when `with_eos`) under the model,
/// decoding over `vocab`.
pub fn sequence_log_prob(
    model: &DvErgModel,
    question: &[TokenId],
    emotion: EmotionId,
    tokens: &[TokenId],
    with_eos: bool,
    vocab: &DynamicVocab,
) -> Result<f64> {
    let mut targets = tokens.to_vec();
    if with_eos {
        targets.push(EOS);
    }
    if targets.is_empty() {
        return Ok(0.0);
    }
    let mut tape = Tape::new(&model.store);
    let enc = encode(&mut tape, &model.s2s, question)?;
    let nll = sequence_nll(&mut tape, &model.s2s, &enc, emotion, &targets, vocab)?;
    Ok(-f64::from(tape.scalar(nll)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_dims() -> ModelDims {
        ModelDims {
            vocab: 9,
            emotions: 3,
            emb: 4,
            hidden: 3,
            emotion_dim: 2,
            attn: 3,
            readout: 4,
            beta_hidden: 3,
        }
    }

    fn randomize<T: Scalar>(store: &mut ParameterStore<T>, rng: &mut impl Rng) {
        for id in store.ids().collect::<Vec<_>>() {
            for v in store.get_mut(id).data_mut() {
                *v = T::of(rng.gen_range(-1.0..1.0));
            }
        }
    }

    fn random_s2s<T: Scalar>(seed: u64) -> (ParameterStore<T>, Seq2SeqParams) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParameterStore::new();
        let p = Seq2SeqParams::init(&mut store, small_dims(), None, &mut rng).unwrap();
        randomize(&mut store, &mut rng);
        (store, p)
    }

    fn zero_gru() -> (ParameterStore<f64>, GruParams) {
        let mut store = ParameterStore::new();
        let g = GruParams::init(&mut store, "g", 2, 3, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for id in store.ids().collect::<Vec<_>>() {
            store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        (store, g)
    }

    #[test]
    fn gru_cell_hand_values() {
        let (store, g) = zero_gru();
        let mut t = Tape::new(&store);
        let x = t.input(vec![0.0, 0.0]);
        let h = t.input(vec![0.0; 3]);
        let out = gru_cell(&mut t, x, h, &g).unwrap();
        assert_eq!(t.value(out), &[0.0; 3]);

        let x = t.input(vec![0.7, -0.2]);
        let h = t.input(vec![0.4, -0.8, 0.1]);
        let out = gru_cell(&mut t, x, h, &g).unwrap();
        assert_eq!(t.value(out), &[0.2, -0.4, 0.05]);

        let bad = t.input(vec![0.0; 2]);
        assert!(matches!(gru_cell(&mut t, x, bad, &g), Err(Error::Shape(_))));
    }

    #[test]
    fn gru_cell_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParameterStore::<f64>::new();
        let g = GruParams::init(&mut store, "g", 4, 3, &mut rng).unwrap();
        randomize(&mut store, &mut rng);
        let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let h: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let err = grad_check(&store, 1e-3, |t| {
            let x = t.input(x.clone());
            let h = t.input(h.clone());
            let out = gru_cell(t, x, h, &g)?;
            Ok(t.sum(out))
        })
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn gru_state_stays_bounded() {
        let (mut store, g) = zero_gru();
        randomize(&mut store, &mut ChaCha8Rng::seed_from_u64(9));
        let mut t = Tape::new(&store);
        let x = t.input(vec![5.0, -5.0]);
        let h = t.input(vec![0.99, -0.99, 0.5]);
        let out = gru_cell(&mut t, x, h, &g).unwrap();
        assert!(t.value(out).iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn encoder_shapes_and_zero_params() {
        let dims = ModelDims {
            vocab: 10,
            emotions: 2,
            ..ModelDims::new(10, 2)
        };
        let mut store = ParameterStore::<f32>::new();
        let p = Seq2SeqParams::init(&mut store, dims, None, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut t = Tape::new(&store);
        let enc = encode(&mut t, &p, &[4, 5, 6, 7, 8]).unwrap();
        assert_eq!(enc.annotations.len(), 5);
        assert!(enc.annotations.iter().all(|&a| t.numel(a) == 256));
        assert_eq!(t.numel(enc.h), 256);
        assert!(encode(&mut t, &p, &[]).is_err());

        let mut zero = store.clone();
        for id in zero.ids().collect::<Vec<_>>() {
            zero.get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let mut t = Tape::new(&zero);
        let enc = encode(&mut t, &p, &[4, 5]).unwrap();
        for a in enc.annotations {
            assert!(t.value(a).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn encoder_h_is_last_forward_and_first_backward() {
        let (store, p) = random_s2s::<f64>(3);
        let mut t = Tape::new(&store);
        let enc = encode(&mut t, &p, &[4, 5, 6]).unwrap();
        let hd = p.dims.hidden;
        let h = t.value(enc.h).to_vec();
        assert_eq!(&h[..hd], &t.value(enc.annotations[2])[..hd]);
        assert_eq!(&h[hd..], &t.value(enc.annotations[0])[hd..]);
    }

    #[test]
    fn encoder_gradient_check() {
        let (store, p) = random_s2s::<f64>(4);
        let err = grad_check(&store, 1e-3, |t| {
            let enc = encode(t, &p, &[4, 1, 7])?;
            let all = t.concat(&enc.annotations);
            Ok(t.sum(all))
        })
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn attention_hand_values() {
        let (mut store, p) = random_s2s::<f64>(6);
        let a = p.dims.annotation();
        // Wa = 0, Ua picks the first annotation entry, v = 2 on one unit.
        store.get_mut(p.att_wa).data_mut().iter_mut().for_each(|v| *v = 0.0);
        let ua = store.get_mut(p.att_ua).data_mut();
        ua.iter_mut().for_each(|v| *v = 0.0);
        ua[0] = 1.0;
        let v = store.get_mut(p.att_v).data_mut();
        v.iter_mut().for_each(|x| *x = 0.0);
        v[0] = 2.0;

        let mut t = Tape::new(&store);
        let s = t.input(vec![0.3; p.dims.hidden]);
        let mut a1 = vec![0.5; a];
        a1[0] = 0.0;
        let mut a2 = vec![-0.5; a];
        a2[0] = (3f64.ln() / 2.0).atanh();
        let (a1v, a2v) = (t.input(a1.clone()), t.input(a2.clone()));
        let (ctx, w) = attend(&mut t, &p, s, &[a1v, a2v]).unwrap();
        let w = t.value(w).to_vec();
        assert!((w[0] - 0.25).abs() < 1e-12 && (w[1] - 0.75).abs() < 1e-12);
        let c = t.value(ctx);
        assert!((c[1] - (0.25 * 0.5 - 0.75 * 0.5)).abs() < 1e-12);

        let (ctx, w) = attend(&mut t, &p, s, &[a1v]).unwrap();
        assert_eq!(t.value(w), &[1.0]);
        assert_eq!(t.value(ctx), a1.as_slice());

        // equal scores -> mean annotation
        let (ctx, w) = attend(&mut t, &p, s, &[a1v, a1v, a1v]).unwrap();
        assert!(t.value(w).iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-12));
        assert!(t.value(ctx).iter().zip(&a1).all(|(x, y)| (x - y).abs() < 1e-12));
        assert!(attend(&mut t, &p, s, &[]).is_err());
    }

    #[test]
    fn decode_step_contracts() {
        let (mut store, p) = random_s2s::<f64>(8);
        let full: Vec<TokenId> = (0..p.dims.vocab).collect();
        let sub = vec![3, 5, 7];
        let mut t = Tape::new(&store);
        let enc = encode(&mut t, &p, &[4, 5]).unwrap();
        let s0 = initial_state(&mut t, &p, &enc).unwrap();
        let (ctx, _) = attend(&mut t, &p, s0, &enc.annotations).unwrap();
        let (lf, _) = decode_step(&mut t, &p, BOS, s0, ctx, EmotionId(0), &full).unwrap();
        let (ls, _) = decode_step(&mut t, &p, BOS, s0, ctx, EmotionId(0), &sub).unwrap();
        let lf = t.value(lf).to_vec();
        assert_eq!(t.value(ls), &[lf[3], lf[5], lf[7]]);
        let (le, _) = decode_step(&mut t, &p, BOS, s0, ctx, EmotionId(1), &sub).unwrap();
        assert_ne!(t.value(le), t.value(ls));
        assert!(matches!(
            decode_step(&mut t, &p, BOS, s0, ctx, EmotionId(0), &[4, 5]),
            Err(Error::MissingEos)
        ));
        drop(t);

        for id in [p.out_w, p.out_b] {
            store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let mut t = Tape::new(&store);
        let enc = encode(&mut t, &p, &[4]).unwrap();
        let s0 = initial_state(&mut t, &p, &enc).unwrap();
        let (ctx, _) = attend(&mut t, &p, s0, &enc.annotations).unwrap();
        let (l, _) = decode_step(&mut t, &p, BOS, s0, ctx, EmotionId(2), &[3, 8]).unwrap();
        assert_eq!(t.value(l), &[0.0, 0.0]);
    }

    #[test]
    fn teacher_forced_step_gradient_check() {
        let (store, p) = random_s2s::<f64>(10);
        let vocab = DynamicVocab::from_active((0..p.dims.vocab).collect());
        // eps 1e-3 leaves ~1e-4 truncation error on the smallest entries of
        // this deep composition; 1e-5 in f64 is well clear of rounding.
        let err = grad_check(&store, 1e-5, |t| {
            let enc = encode(t, &p, &[5, 6, 4])?;
            sequence_nll(t, &p, &enc, EmotionId(1), &[7, 8, EOS], &vocab)
        })
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }
}
