//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::HashSet;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dverg_bench::{run_qps, sweep_vocab_latency, QpsConfig};
use dverg_core::dynvocab::{build_dynamic_vocab, predict_vocab_probs, vocab_loss, DynamicVocab, VocabPredictorParams};
use dverg_core::emotion::EmotionId;
use dverg_core::encdec::{encode, generate, sequence_nll, GenerationConfig, ModelDims, Seq2SeqParams, VocabMode, DecodeMode};
use dverg_core::metrics::{bleu2, content_recall, distinct_n, embedding_metrics, WordVectors};
use dverg_core::numerics::{grad_check, ParameterStore};
use dverg_core::synth::{toy_corpus, ToyCorpus, TOY_TEMPLATES};
use dverg_core::text::{TrainingExample, Vocabulary, EOS};
use dverg_core::training::{
    evaluate_nll, finetune, joint_loss, train_seq2seq, train_vocab_model, Checkpoint, FinetuneMode, TrainConfig,
};

const GRAD_TOL: f64 = 1e-4;
const GRAD_EPS: f64 = 1e-3;
const GRAD_BUDGET: Duration = Duration::from_secs(60);
const OVERFIT_MAX_EPOCHS: usize = 500;
const OVERFIT_LOSS: f32 = 0.1;
const OVERFIT_EXACT: f64 = 0.95;
const OVERFIT_BUDGET: Duration = Duration::from_secs(15 * 60);
const RECALL_MIN: f64 = 0.9;
const VOCSIZE_MAX_FRACTION: f64 = 0.25;
const FT_EPOCHS: usize = 50;
const EMOTION_DIFF_MIN: f64 = 0.8;
const BIG_VOCAB: usize = 20_000;
const DYN_FRACTION: f64 = 0.08;
const SPEEDUP_MIN: f64 = 1.3;
const STUB_MS: f64 = 10.87;
const STUB_QPS: f64 = 92.0;
const STUB_TOL: f64 = 0.10;
const ORACLE_CASES: usize = 100;
const ORACLE_TOL: f64 = 1e-12;
const HAND_TOL: f64 = 5e-5;
const EQUIV_QUESTIONS: usize = 50;

const DIM: usize = 64;

fn toy_cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        lr: 0.005,
        batch_size: 10,
        epochs,
        emb_dim: DIM,
        hidden: DIM,
        emotion_dim: 16,
        attn_dim: DIM,
        readout_dim: DIM,
        beta_hidden: DIM,
        seed: 1,
        ..Default::default()
    }
}

type Outcome = Result<String, String>;

fn ensure(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

struct Toy {
    corpus: ToyCorpus,
    examples: Vec<TrainingExample>,
    s2s: Option<Checkpoint>,
    vocab: Option<Checkpoint>,
}

impl Toy {
    fn new() -> Self {
        let corpus = toy_corpus(TOY_TEMPLATES, 7);
        let vocab = corpus.vocabulary().expect("toy vocabulary");
        let examples = corpus.examples(&vocab);
        Toy { corpus, examples, s2s: None, vocab: None }
    }
}

fn randomized<T: dverg_core::numerics::Scalar>(store: &mut ParameterStore<T>, rng: &mut ChaCha8Rng) {
    for id in store.ids().collect::<Vec<_>>() {
        for v in store.get_mut(id).data_mut() {
            *v = T::of(rng.gen_range(-0.5..0.5));
        }
    }
}

fn gradient_integrity() -> Outcome {
    let start = Instant::now();
    let fw = ["the", "a"].iter().map(|s| s.to_string()).collect();
    let words = ["the", "a", "cat", "dog", "sat", "ran", "mat", "sun"];
    let vocab = Vocabulary::from_words(&words, &fw).map_err(err)?;
    let dims = ModelDims {
        vocab: vocab.len(),
        emotions: 3,
        emb: 5,
        hidden: 4,
        emotion_dim: 3,
        attn: 4,
        readout: 5,
        beta_hidden: 4,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut store = ParameterStore::<f64>::new();
    let s2s = Seq2SeqParams::init(&mut store, dims, None, &mut rng).map_err(err)?;
    let content = vocab.content_ids().len();
    let beta = VocabPredictorParams::init(&mut store, dims.annotation(), 3, 3, 4, content, &mut rng).map_err(err)?;
    randomized(&mut store, &mut rng);

    let question = [6, 4, 9, 7];
    let response = [8, 4, 10];
    let mut targets = response.to_vec();
    targets.push(EOS);
    // A strict subset of the vocabulary exercises the gathered projection.
    let active = DynamicVocab::from_active(vec![0, 1, 2, 3, 4, 5, 7, 8, 10]);
    let e = EmotionId(2);

    let step = grad_check(&store, GRAD_EPS, |t| {
        let enc = encode(t, &s2s, &question)?;
        sequence_nll(t, &s2s, &enc, e, &targets, &active)
    })
    .map_err(err)?;
    let voc = grad_check(&store, GRAD_EPS, |t| {
        let enc = encode(t, &s2s, &question)?;
        let p = predict_vocab_probs(t, &beta, enc.h, e)?;
        vocab_loss(t, p, &response, &vocab, 0, 3)
    })
    .map_err(err)?;
    let secs = start.elapsed();
    ensure(
        step < GRAD_TOL && voc < GRAD_TOL && secs < GRAD_BUDGET,
        format!(
            "max rel err: training step {step:.2e}, vocab loss {voc:.2e} (< {GRAD_TOL:.0e}); {:.1} s (< {} s)",
            secs.as_secs_f64(),
            GRAD_BUDGET.as_secs()
        ),
    )
}

fn overfit(toy: &mut Toy) -> Outcome {
    let start = Instant::now();
    let epochs = 120;
    assert!(epochs <= OVERFIT_MAX_EPOCHS);
    let vocab = toy.corpus.vocabulary().map_err(err)?;
    let v = vocab.len();
    let mut last = f32::NAN;
    let ck = train_seq2seq(
        &toy.examples,
        vocab,
        toy.corpus.taxonomy.clone(),
        toy.corpus.emotion_map.clone(),
        None,
        &toy_cfg(epochs),
        |_, l| last = l,
    )
    .map_err(err)?;
    let nll = evaluate_nll(&ck.model, &toy.examples).map_err(err)?;
    let g = GenerationConfig { vocab: VocabMode::Static, max_len: 30, ..Default::default() };
    let mut exact = 0;
    for x in &toy.examples {
        if generate(&ck.model, &x.question, x.response_emotion, &g).map_err(err)?.tokens == x.response {
            exact += 1;
        }
    }
    let frac = exact as f64 / toy.examples.len() as f64;
    let secs = start.elapsed();
    let detail = format!(
        "{} pairs, |V| = {v}, {epochs} epochs: last-epoch loss {last:.4}, eval loss {nll:.4} (< {OVERFIT_LOSS}); \
         greedy exact {exact}/{} = {frac:.3} (>= {OVERFIT_EXACT}); {:.0} s (< {} s)",
        toy.examples.len(),
        toy.examples.len(),
        secs.as_secs_f64(),
        OVERFIT_BUDGET.as_secs()
    );
    toy.s2s = Some(ck);
    ensure(
        toy.examples.len() == 200 && toy.corpus.taxonomy.len() == 4 && last < OVERFIT_LOSS && nll < OVERFIT_LOSS
            && frac >= OVERFIT_EXACT && secs < OVERFIT_BUDGET,
        detail,
    )
}

fn vocab_recall(toy: &mut Toy) -> Outcome {
    let s2s = toy.s2s.clone().ok_or("needs the trained seq2seq model from criterion 2")?;
    let ck = train_vocab_model(&toy.examples, s2s, &toy_cfg(60), |_, _| {}).map_err(err)?;
    let m = &ck.model;
    let (mut recall, mut size) = (0.0, 0.0);
    let mut scored = 0;
    for x in &toy.examples {
        let p = m.vocab_probs(&x.question, x.response_emotion).map_err(err)?;
        let dv = build_dynamic_vocab(p, &m.vocab, &x.question, 0.5, 0);
        if let Some(r) = content_recall(&dv, &m.vocab, &x.response) {
            recall += r;
            scored += 1;
        }
        size += dv.len() as f64;
    }
    let recall = recall / scored as f64;
    let size = size / toy.examples.len() as f64;
    let frac = size / m.vocab.len() as f64;
    toy.vocab = Some(ck);
    ensure(
        recall >= RECALL_MIN && frac <= VOCSIZE_MAX_FRACTION,
        format!(
            "content recall at tau=0.5 {recall:.4} (>= {RECALL_MIN}); mean VocSize {size:.1} = {:.1}% of |V| (<= {:.0}%)",
            100.0 * frac,
            100.0 * VOCSIZE_MAX_FRACTION
        ),
    )
}

fn bits(store: &ParameterStore<f32>, member: fn(&str) -> bool) -> Vec<u32> {
    store
        .iter()
        .filter(|(n, _)| member(n))
        .flat_map(|(_, t)| t.data().iter().map(|x| x.to_bits()))
        .collect()
}

fn finetune_contracts(toy: &Toy) -> Outcome {
    let ck = toy.vocab.clone().ok_or("needs the vocabulary checkpoint from criterion 3")?;
    let ex = &toy.examples;

    let noft = finetune(ex, ck.clone(), &TrainConfig { mode: FinetuneMode::NoFt, ..toy_cfg(FT_EPOCHS) }, |_, _| {})
        .map_err(err)?;
    let noft_ok = noft.params_bytes() == ck.params_bytes();

    let target = finetune(ex, ck.clone(), &TrainConfig { mode: FinetuneMode::FtTarget, ..toy_cfg(5) }, |_, _| {})
        .map_err(err)?;
    let s2s_same = bits(&target.model.store, Seq2SeqParams::is_member) == bits(&ck.model.store, Seq2SeqParams::is_member);
    let beta_moved =
        bits(&target.model.store, VocabPredictorParams::is_member) != bits(&ck.model.store, VocabPredictorParams::is_member);

    let cfg = TrainConfig { mode: FinetuneMode::FtBoth, ..toy_cfg(FT_EPOCHS) };
    let before = joint_loss(&ck.model, ex, &cfg).map_err(err)?;
    let both = finetune(ex, ck, &cfg, |_, _| {}).map_err(err)?;
    let after = joint_loss(&both.model, ex, &cfg).map_err(err)?;
    ensure(
        noft_ok && s2s_same && beta_moved && after < before,
        format!(
            "no-ft bit-identical: {noft_ok}; ft-target seq2seq unchanged: {s2s_same}, predictor changed: {beta_moved}; \
             ft-both joint loss {before:.3e} -> {after:.3e} over {FT_EPOCHS} epochs"
        ),
    )
}

fn emotion_control(toy: &Toy) -> Outcome {
    let ck = toy.vocab.as_ref().ok_or("needs the vocabulary checkpoint from criterion 3")?;
    let g = GenerationConfig::default();
    let emotions = ck.taxonomy.len();
    let mut seen: HashSet<Vec<usize>> = HashSet::new();
    let (mut differ, mut total) = (0, 0);
    for x in toy.examples.iter().step_by(emotions) {
        if !seen.insert(x.question.clone()) {
            continue;
        }
        let outs: Vec<Vec<usize>> = (0..emotions)
            .map(|e| generate(&ck.model, &x.question, EmotionId(e), &g).map(|o| o.tokens))
            .collect::<Result<_, _>>()
            .map_err(err)?;
        for a in 0..emotions {
            for b in a + 1..emotions {
                total += 1;
                differ += usize::from(outs[a] != outs[b]);
            }
        }
    }
    let frac = differ as f64 / total as f64;
    ensure(
        frac >= EMOTION_DIFF_MIN,
        format!(
            "{} questions x every emotion pair: {differ}/{total} = {frac:.3} responses differ (>= {EMOTION_DIFF_MIN})",
            seen.len()
        ),
    )
}

fn speedup(toy: &Toy) -> Outcome {
    let stub = |_: &String, _: u64| -> Result<_, String> {
        std::thread::sleep(Duration::from_secs_f64(STUB_MS / 1e3));
        Ok(None)
    };
    let qs = vec!["q".to_string()];
    let report = run_qps(stub, &qs, &QpsConfig { concurrency: 1, duration_s: 1.0, seed: 0 }).map_err(err)?;
    let stub_ok = (report.si_qps - STUB_QPS).abs() <= STUB_TOL * STUB_QPS;

    let vocab = toy.corpus.padded_vocabulary(BIG_VOCAB, 7).map_err(err)?;
    let examples = toy.corpus.examples(&vocab);
    let cfg = toy_cfg(2);
    let ck = train_seq2seq(&examples, vocab, toy.corpus.taxonomy.clone(), toy.corpus.emotion_map.clone(), None, &cfg, |_, _| {})
        .map_err(err)?;
    let ck = train_vocab_model(&examples, ck, &TrainConfig { epochs: 3, ..cfg }, |_, _| {}).map_err(err)?;
    let m = &ck.model;
    let n = m.vocab.len();
    let always = 4 + m.vocab.function_ids().len();
    let questions: Vec<_> = examples.iter().step_by(4).map(|x| (x.question.clone(), x.response_emotion)).collect();
    // The predictor fills the remainder of the 8% budget after forced words.
    let per_question = questions
        .iter()
        .map(|(q, _)| dverg_core::text::content_positions(&m.vocab, q).len())
        .sum::<usize>()
        / questions.len();
    let cap = (DYN_FRACTION * n as f64) as usize - always - per_question;
    let base = GenerationConfig { max_len: 20, min_len: 20, ..Default::default() };
    let rows = sweep_vocab_latency(m, &questions, &[VocabMode::Static, VocabMode::Dynamic { tau: 0.0, cap }], &base, 2)
        .map_err(err)?;
    let (dynamic, full) = (&rows[0], &rows[1]);
    let ratio = full.decode_ms / dynamic.decode_ms;
    let frac = dynamic.voc_size / n as f64;
    ensure(
        stub_ok && ratio >= SPEEDUP_MIN && (frac - DYN_FRACTION).abs() < 0.01 && full.voc_size == n as f64,
        format!(
            "|V| = {n}: full {:.2} ms vs dynamic {:.2} ms at VocSize {:.0} ({:.1}%): {ratio:.2}x (>= {SPEEDUP_MIN}x); \
             {STUB_MS} ms stub si-QPS {:.1} (~{STUB_QPS} +/- {:.0}%)",
            full.decode_ms,
            dynamic.decode_ms,
            dynamic.voc_size,
            100.0 * frac,
            report.si_qps,
            100.0 * STUB_TOL
        ),
    )
}

/// Brute-force n-gram counting with plain vectors and linear scans.
mod oracle {
    fn grams(t: &[String], n: usize) -> Vec<Vec<String>> {
        if t.len() < n {
            return vec![];
        }
        (0..=t.len() - n).map(|i| t[i..i + n].to_vec()).collect()
    }

    fn count(gs: &[Vec<String>], g: &[String]) -> usize {
        gs.iter().filter(|x| x.as_slice() == g).count()
    }

    pub fn bleu2(c: &[String], refs: &[Vec<String>]) -> f64 {
        if c.is_empty() {
            return 0.0;
        }
        let mut prod = 1.0;
        for n in 1..=2 {
            let cg = grams(c, n);
            let mut uniq: Vec<Vec<String>> = vec![];
            for g in &cg {
                if !uniq.contains(g) {
                    uniq.push(g.clone());
                }
            }
            let mut m = 0;
            for g in &uniq {
                let best = refs.iter().map(|r| count(&grams(r, n), g)).max().unwrap();
                m += count(&cg, g).min(best);
            }
            let p = if m == 0 { 1.0 / (cg.len() + 1) as f64 } else { m as f64 / cg.len() as f64 };
            prod *= p;
        }
        let mut best = refs[0].len();
        for r in refs {
            let (d, bd) = (r.len().abs_diff(c.len()), best.abs_diff(c.len()));
            if d < bd || (d == bd && r.len() < best) {
                best = r.len();
            }
        }
        let bp = if c.len() >= best { 1.0 } else { (1.0 - best as f64 / c.len() as f64).exp() };
        bp * prod.sqrt()
    }

    pub fn distinct(cs: &[Vec<String>], n: usize) -> f64 {
        let all: Vec<Vec<String>> = cs.iter().flat_map(|c| grams(c, n)).collect();
        let mut uniq: Vec<&Vec<String>> = vec![];
        for g in &all {
            if !uniq.contains(&g) {
                uniq.push(g);
            }
        }
        if all.is_empty() {
            0.0
        } else {
            uniq.len() as f64 / all.len() as f64
        }
    }
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let words = ["a", "b", "c", "d", "e"];
    let sent = |rng: &mut ChaCha8Rng| -> Vec<String> {
        let len = rng.gen_range(0..9);
        (0..len).map(|_| words[rng.gen_range(0..words.len())].to_string()).collect()
    };
    let (mut max_bleu, mut distinct_mismatch) = (0f64, 0);
    for _ in 0..ORACLE_CASES {
        let c = sent(&mut rng);
        let refs: Vec<Vec<String>> = (0..rng.gen_range(1..4)).map(|_| sent(&mut rng)).collect();
        max_bleu = max_bleu.max((bleu2(&c, &refs).map_err(err)? - oracle::bleu2(&c, &refs)).abs());
        let cands: Vec<Vec<String>> = (0..rng.gen_range(1..4)).map(|_| sent(&mut rng)).collect();
        for n in 1..=2 {
            if distinct_n(&cands, n) != oracle::distinct(&cands, n) {
                distinct_mismatch += 1;
            }
        }
    }
    let t = |s: &str| s.split_whitespace().map(String::from).collect::<Vec<_>>();
    let mut v = WordVectors::new(2);
    v.insert("x", &[1.0, 0.0]).map_err(err)?;
    v.insert("y", &[0.0, 1.0]).map_err(err)?;
    let emb = embedding_metrics(&t("x"), &t("x y"), &v).map_err(err)?;
    let hand = [
        ("bleu2(a b c | a b d)", bleu2(&t("a b c"), &[t("a b d")]).map_err(err)?, 0.5774),
        ("distinct-1(a b a b)", distinct_n(&[t("a b a b")], 1), 0.5),
        ("distinct-2(a b a b)", distinct_n(&[t("a b a b")], 2), 0.6667),
        ("greedy", emb.greedy, 0.75),
        ("average", emb.average, 0.7071),
        ("extreme", emb.extreme, 0.7071),
    ];
    let bad: Vec<String> = hand
        .iter()
        .filter(|(_, got, want)| (got - want).abs() >= HAND_TOL)
        .map(|(name, got, want)| format!("{name} = {got:.6} != {want}"))
        .collect();
    ensure(
        max_bleu <= ORACLE_TOL && distinct_mismatch == 0 && bad.is_empty(),
        format!(
            "{ORACLE_CASES} random cases: max |bleu2 - oracle| {max_bleu:.1e} (<= {ORACLE_TOL:.0e}), \
             distinct-n mismatches {distinct_mismatch}; hand examples to 4 dp: {}",
            if bad.is_empty() { "all match".to_string() } else { bad.join(", ") }
        ),
    )
}

fn equivalence(toy: &Toy) -> Outcome {
    let ck = toy.vocab.as_ref().ok_or("needs the vocabulary checkpoint from criterion 3")?;
    let m = &ck.model;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut mismatches = 0;
    for i in 0..EQUIV_QUESTIONS {
        let len = rng.gen_range(3..10);
        let q: Vec<usize> = (0..len).map(|_| rng.gen_range(4..m.vocab.len())).collect();
        let e = EmotionId(i % ck.taxonomy.len());
        for mode in [DecodeMode::Greedy, DecodeMode::Beam { width: 3 }] {
            let stat = GenerationConfig { mode, vocab: VocabMode::Static, ..Default::default() };
            let dynm = GenerationConfig { mode, vocab: VocabMode::Dynamic { tau: 0.0, cap: 0 }, ..Default::default() };
            let a = generate(m, &q, e, &stat).map_err(err)?;
            let b = generate(m, &q, e, &dynm).map_err(err)?;
            if a.tokens != b.tokens || b.vocab.len() != m.vocab.len() {
                mismatches += 1;
            }
        }
    }
    ensure(
        mismatches == 0,
        format!("{EQUIV_QUESTIONS} seeded questions, greedy and beam 3: {mismatches} token mismatches vs static decoding"),
    )
}

fn dverg(dir: &Path, args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_dverg"))
        .current_dir(dir)
        .args(args)
        .output()
        .map_err(err)?;
    if !out.status.success() {
        return Err(format!("`dverg {}` failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)));
    }
    Ok(out.stdout)
}

fn tree_bytes(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .map_err(err)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .map_err(err)?;
    files.sort();
    files
        .into_iter()
        .filter(|p| p.is_file())
        .map(|p| Ok((p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).map_err(err)?)))
        .collect()
}

const CLI_CONFIG: &str = r#"
[paths]
corpus = "data/corpus.jsonl"
function_words = "data/function_words.txt"
taxonomy = "data/taxonomy.txt"
emotion_map = "data/emotion_map.txt"

[train]
lr = 0.01
batch_size = 8
epochs = 4
emb_dim = 16
hidden = 16
emotion_dim = 8
attn_dim = 16
readout_dim = 16
beta_hidden = 16
seed = 5
mode = "ft-both"

[classifier]
epochs = 3
hidden = 8
"#;

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(err)?;
    let mut compared = Vec::new();
    let mut runs = Vec::new();
    for run in ["a", "b"] {
        let dir = tmp.path().join(run);
        fs::create_dir_all(&dir).map_err(err)?;
        fs::write(dir.join("cfg.toml"), CLI_CONFIG).map_err(err)?;
        let mut out: Vec<(String, Vec<u8>)> = Vec::new();
        let c = ["--config", "cfg.toml"];
        let mut step = |label: &str, args: &[&str]| -> Result<(), String> {
            let stdout = dverg(&dir, &[&c[..], args].concat())?;
            out.push((format!("{label} stdout"), stdout));
            Ok(())
        };
        step("synth", &["synth", "--out", "data", "--templates", "8", "--seed", "3"])?;
        step("train-s2s", &["train-s2s", "--out", "s2s"])?;
        step("train-vocab", &["train-vocab", "--checkpoint", "s2s", "--out", "voc"])?;
        step("finetune", &["finetune", "--checkpoint", "voc", "--out", "ft"])?;
        step("train-classifier", &["train-classifier", "--checkpoint", "ft", "--out", "full"])?;
        fs::write(dir.join("qs.txt"), "my printer is not working , can you help ?\nwhy is the order late ?\n").map_err(err)?;
        step("generate", &["generate", "--checkpoint", "full", "--input", "qs.txt", "--output", "gen.jsonl"])?;
        step("generate beam", &["generate", "--checkpoint", "full", "--input", "qs.txt", "--beam-width", "3", "--output", "beam.jsonl"])?;
        step("eval", &["eval", "--checkpoint", "full", "--output", "report.json"])?;
        for sub in ["data", "s2s", "voc", "ft", "full"] {
            for (name, bytes) in tree_bytes(&dir.join(sub))? {
                out.push((format!("{sub}/{name}"), bytes));
            }
        }
        for f in ["gen.jsonl", "beam.jsonl", "report.json"] {
            out.push((f.to_string(), fs::read(dir.join(f)).map_err(err)?));
        }
        runs.push(out);
    }
    let mut differing = Vec::new();
    for ((name, a), (_, b)) in runs[0].iter().zip(&runs[1]) {
        compared.push(name.clone());
        if a != b {
            differing.push(name.clone());
        }
    }
    ensure(
        differing.is_empty() && runs[0].len() == runs[1].len(),
        format!(
            "{} outputs of synth/train-s2s/train-vocab/finetune/train-classifier/generate/eval compared byte for byte; differing: {}",
            compared.len(),
            if differing.is_empty() { "none".to_string() } else { differing.join(", ") }
        ),
    )
}

fn main() {
    let mut toy = Toy::new();
    let mut failed = 0;
    let mut report = |n: usize, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {n} [{tag}] {name}: {detail} [{secs:.1} s]");
    };
    report(1, "gradient integrity", &mut gradient_integrity);
    report(2, "overfit toy corpus", &mut || overfit(&mut toy));
    report(3, "vocabulary recall", &mut || vocab_recall(&mut toy));
    report(4, "fine-tune contracts", &mut || finetune_contracts(&toy));
    report(5, "emotion control", &mut || emotion_control(&toy));
    report(6, "dynamic vocabulary speedup", &mut || speedup(&toy));
    report(7, "metric oracles", &mut metric_oracles);
    report(8, "static equivalence", &mut || equivalence(&toy));
    report(9, "determinism", &mut determinism);
    println!("acceptance: {} passed, {failed} failed", 9 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
