//! `dverg`: train, fine-tune, generate, chat, evaluate and benchmark.

mod config;

use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use dverg_bench::{run_qps, sweep_csv, sweep_vocab_latency, QpsConfig};
use dverg_core::dynvocab::{build_dynamic_vocab, DynamicVocab};
use dverg_core::emotion::{map_emotions, sample_response_emotion, train_classifier, EmotionMap, EmotionTaxonomy};
use dverg_core::encdec::{generate, GenerationConfig, VocabMode};
use dverg_core::metrics::{word_recall, Coverage, MetricsReport, WordVectors};
use dverg_core::pipeline::{question_emotion, respond};
use dverg_core::synth::{toy_corpus, TOY_TEMPLATES};
use dverg_core::text::{build_vocab, load_corpus, load_embeddings, load_word_list, tokenize, TrainingExample};
use dverg_core::training::{finetune, train_seq2seq, train_vocab_model, Checkpoint, FinetuneMode, TrainConfig};

use config::{config_err, existing, optional, AppConfig, ConfigError};

#[derive(Parser)]
#[command(name = "dverg", version, about = "Emotion-controlled response generation with a dynamic vocabulary")]
struct Cli {
    /// TOML config with [paths], [train], [vocab], [generation] and [classifier] sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct PathArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    function_words: Option<PathBuf>,
    #[arg(long)]
    taxonomy: Option<PathBuf>,
    #[arg(long)]
    emotion_map: Option<PathBuf>,
    /// Input checkpoint directory.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args, Default)]
struct TrainArgs {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f32>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    emb_dim: Option<usize>,
    #[arg(long)]
    emotion_dim: Option<usize>,
    #[arg(long)]
    lambda: Option<f32>,
    #[arg(long)]
    clip_norm: Option<f32>,
    #[arg(long)]
    neg_ratio: Option<usize>,
}

#[derive(Args, Default)]
struct GenArgs {
    #[arg(long)]
    beam_width: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    min_len: Option<usize>,
    /// Decode over the full vocabulary.
    #[arg(long)]
    static_vocab: bool,
    #[arg(long)]
    tau: Option<f32>,
    #[arg(long)]
    cap: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the toy corpus and its emotion files.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = TOY_TEMPLATES)]
        templates: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Train the question-emotion classifier and attach it to a checkpoint.
    TrainClassifier {
        #[command(flatten)]
        paths: PathArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f32>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the emotion-conditioned seq2seq model.
    TrainS2s {
        #[command(flatten)]
        paths: PathArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        max_vocab: Option<usize>,
        #[arg(long)]
        min_count: Option<usize>,
    },
    /// Train the vocabulary predictor on a seq2seq checkpoint.
    TrainVocab {
        #[command(flatten)]
        paths: PathArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Jointly fine-tune a vocabulary checkpoint.
    Finetune {
        #[command(flatten)]
        paths: PathArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        mode: Option<FinetuneMode>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Answer questions from a file, one per line, as JSONL.
    Generate {
        #[command(flatten)]
        paths: PathArgs,
        #[command(flatten)]
        gen: GenArgs,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
        /// Use this response emotion instead of classifying and mapping.
        #[arg(long)]
        emotion_override: Option<String>,
    },
    /// Interactive loop on standard input.
    Chat {
        #[command(flatten)]
        paths: PathArgs,
        #[command(flatten)]
        gen: GenArgs,
    },
    /// Score candidates (or generations) against the corpus responses.
    Eval {
        #[command(flatten)]
        paths: PathArgs,
        #[command(flatten)]
        gen: GenArgs,
        /// One candidate per corpus line; generated from the checkpoint when absent.
        #[arg(long)]
        candidates: Option<PathBuf>,
        /// Word vectors for the embedding metrics; defaults to the embeddings path.
        #[arg(long)]
        vectors: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Closed-loop throughput of the full serving path.
    Bench {
        #[command(flatten)]
        paths: PathArgs,
        #[command(flatten)]
        gen: GenArgs,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 1)]
        concurrency: usize,
        #[arg(long, default_value_t = 5.0)]
        duration: f64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Decode latency across vocabulary settings, as CSV.
    Sweep {
        #[command(flatten)]
        paths: PathArgs,
        #[command(flatten)]
        gen: GenArgs,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_delimiter = ',')]
        taus: Vec<f32>,
        /// Caps applied at tau = 0.
        #[arg(long, value_delimiter = ',')]
        caps: Vec<usize>,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Serialize)]
struct GeneratedLine<'a> {
    question: &'a str,
    question_emotion: &'a str,
    chosen_emotion: &'a str,
    response: &'a str,
    voc_size: usize,
}

impl PathArgs {
    fn merge(&self, cfg: &mut AppConfig) {
        let p = &mut cfg.paths;
        let pick = |flag: &Option<PathBuf>, slot: &mut Option<PathBuf>| {
            if flag.is_some() {
                slot.clone_from(flag);
            }
        };
        pick(&self.corpus, &mut p.corpus);
        pick(&self.embeddings, &mut p.embeddings);
        pick(&self.function_words, &mut p.function_words);
        pick(&self.taxonomy, &mut p.taxonomy);
        pick(&self.emotion_map, &mut p.emotion_map);
        pick(&self.checkpoint, &mut p.checkpoint);
    }
}

impl TrainArgs {
    fn apply(&self, t: &mut TrainConfig) {
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { t.$f = v; })* };
        }
        set!(epochs, lr, batch_size, seed, hidden, emb_dim, emotion_dim, lambda, clip_norm);
        if self.neg_ratio.is_some() {
            t.neg_ratio = self.neg_ratio;
        }
    }
}

impl GenArgs {
    fn resolve(&self, cfg: &AppConfig) -> Result<GenerationConfig> {
        let mut g = cfg.generation;
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { g.$f = v; })* };
        }
        set!(beam_width, max_len, min_len, tau, cap, seed);
        if self.static_vocab {
            g.dynamic = false;
        }
        let g = g.to_config();
        g.validate().map_err(|e| config_err(e.to_string()))?;
        Ok(g)
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<AppConfig> {
    match path {
        Some(p) => AppConfig::load(p),
        None => Ok(AppConfig::default()),
    }
}

fn validated(t: TrainConfig) -> Result<TrainConfig> {
    t.validate().map_err(|e| config_err(e.to_string()))?;
    Ok(t)
}

fn load_checkpoint(cfg: &AppConfig) -> Result<Checkpoint> {
    let dir = existing(&cfg.paths.checkpoint, "checkpoint")?;
    Checkpoint::load(&dir).with_context(|| format!("loading checkpoint {}", dir.display()))
}

/// Train config for later stages: the checkpoint's echo unless a config
/// file was given, then flags.
fn stage_config(ckpt: &Checkpoint, file: &Option<PathBuf>, app: &AppConfig, args: &TrainArgs) -> Result<TrainConfig> {
    let mut t = if file.is_some() { app.train } else { ckpt.config };
    args.apply(&mut t);
    validated(t)
}

fn corpus_examples(cfg: &AppConfig, ckpt: &Checkpoint) -> Result<Vec<TrainingExample>> {
    let corpus = existing(&cfg.paths.corpus, "corpus")?;
    let records = load_corpus(&corpus, &ckpt.taxonomy)?;
    Ok(records.iter().map(|r| TrainingExample::encode(r, &ckpt.model.vocab)).collect())
}

fn epoch_logger() -> impl FnMut(usize, f32) {
    |epoch, loss| println!("epoch {epoch} loss {loss:.6}")
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}

fn write_or_print(path: &Option<PathBuf>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli.config)?;
    match cli.command {
        Command::Synth { out, templates, seed } => {
            if templates == 0 {
                return Err(config_err("--templates must be at least 1"));
            }
            let toy = toy_corpus(templates, seed);
            toy.write(&out)?;
            println!("wrote {} pairs to {}", toy.records.len(), out.display());
        }
        Command::TrainClassifier { paths, out, epochs, lr, seed } => {
            paths.merge(&mut cfg);
            let mut c = cfg.classifier;
            c.epochs = epochs.unwrap_or(c.epochs);
            c.lr = lr.unwrap_or(c.lr);
            c.seed = seed.unwrap_or(c.seed);
            if !(c.lr > 0.0) {
                return Err(config_err("classifier learning rate must be positive"));
            }
            let mut ckpt = load_checkpoint(&cfg)?;
            let labelled: Vec<_> = corpus_examples(&cfg, &ckpt)?
                .into_iter()
                .filter_map(|x| x.question_emotion.map(|e| (x.question, e)))
                .collect();
            let word_emb = ckpt
                .model
                .store
                .by_name("s2s.word_emb")
                .context("checkpoint has no word embeddings")?
                .clone();
            let (clf, loss) = train_classifier(&labelled, word_emb, &ckpt.taxonomy, &c.to_config())?;
            println!("classifier loss {loss:.6} on {} questions", labelled.len());
            ckpt.classifier = Some(clf);
            ckpt.save(&out)?;
        }
        Command::TrainS2s { paths, train, out, max_vocab, min_count } => {
            paths.merge(&mut cfg);
            train.apply(&mut cfg.train);
            let t = validated(cfg.train)?;
            let corpus = existing(&cfg.paths.corpus, "corpus")?;
            let fw_path = optional(&cfg.paths.function_words, "function-word list")?;
            let emb_path = optional(&cfg.paths.embeddings, "embeddings")?;
            let taxonomy = match optional(&cfg.paths.taxonomy, "taxonomy")? {
                Some(p) => EmotionTaxonomy::load(&p)?,
                None => EmotionTaxonomy::default(),
            };
            let emotion_map = match optional(&cfg.paths.emotion_map, "emotion map")? {
                Some(p) => EmotionMap::load(&p, &taxonomy)?,
                None => EmotionMap::default_for(&taxonomy),
            };
            let function_words = match fw_path {
                Some(p) => load_word_list(&p)?,
                None => Default::default(),
            };
            let records = load_corpus(&corpus, &taxonomy)?;
            let seqs: Vec<Vec<String>> = records
                .iter()
                .flat_map(|r| [tokenize(&r.question), tokenize(&r.response)])
                .collect();
            let vocab = build_vocab(
                seqs.iter().map(Vec::as_slice),
                max_vocab.unwrap_or(cfg.vocab.max_size),
                min_count.unwrap_or(cfg.vocab.min_count),
                &function_words,
            )?;
            let word_emb = match emb_path {
                Some(p) => Some(load_embeddings(&p, &vocab, t.emb_dim, t.seed)?),
                None => None,
            };
            let examples: Vec<_> = records.iter().map(|r| TrainingExample::encode(r, &vocab)).collect();
            println!("vocabulary {} ids, {} pairs", vocab.len(), examples.len());
            let ckpt = train_seq2seq(&examples, vocab, taxonomy, emotion_map, word_emb, &t, epoch_logger())?;
            ckpt.save(&out)?;
        }
        Command::TrainVocab { paths, train, out } => {
            paths.merge(&mut cfg);
            let ckpt = load_checkpoint(&cfg)?;
            let t = stage_config(&ckpt, &cli.config, &cfg, &train)?;
            let examples = corpus_examples(&cfg, &ckpt)?;
            let ckpt = train_vocab_model(&examples, ckpt, &t, epoch_logger())?;
            ckpt.save(&out)?;
        }
        Command::Finetune { paths, train, mode, out } => {
            paths.merge(&mut cfg);
            let ckpt = load_checkpoint(&cfg)?;
            let mut t = stage_config(&ckpt, &cli.config, &cfg, &train)?;
            if let Some(m) = mode {
                t.mode = m;
            }
            let examples = corpus_examples(&cfg, &ckpt)?;
            let ckpt = finetune(&examples, ckpt, &t, epoch_logger())?;
            ckpt.save(&out)?;
        }
        Command::Generate { paths, gen, input, output, emotion_override } => {
            paths.merge(&mut cfg);
            let g = gen.resolve(&cfg)?;
            let ckpt = load_checkpoint(&cfg)?;
            let forced = match emotion_override {
                Some(label) => Some(ckpt.taxonomy.id(&label).map_err(|e| config_err(e.to_string()))?),
                None => None,
            };
            let mut out = String::new();
            for (i, q) in read_lines(&input)?.iter().enumerate() {
                let r = respond(&ckpt, q, forced, &g, g.seed.wrapping_add(i as u64))
                    .with_context(|| format!("question {} (`{q}`)", i + 1))?;
                let line = GeneratedLine {
                    question: q,
                    question_emotion: ckpt.taxonomy.label(r.question_emotion),
                    chosen_emotion: ckpt.taxonomy.label(r.chosen_emotion),
                    response: &r.response,
                    voc_size: r.generation.vocab.len(),
                };
                out.push_str(&serde_json::to_string(&line)?);
                out.push('\n');
            }
            write_or_print(&output, &out)?;
        }
        Command::Chat { paths, gen } => {
            paths.merge(&mut cfg);
            let g = gen.resolve(&cfg)?;
            let ckpt = load_checkpoint(&cfg)?;
            chat(&ckpt, &g)?;
        }
        Command::Eval { paths, gen, candidates, vectors, output } => {
            paths.merge(&mut cfg);
            let g = gen.resolve(&cfg)?;
            let report = eval(&cfg, &g, candidates, vectors)?;
            let mut text = serde_json::to_string_pretty(&report)?;
            text.push('\n');
            if output.is_some() {
                print!("{}", report.to_table());
            }
            write_or_print(&output, &text)?;
        }
        Command::Bench { paths, gen, input, concurrency, duration, output } => {
            paths.merge(&mut cfg);
            let g = gen.resolve(&cfg)?;
            let ckpt = load_checkpoint(&cfg)?;
            let questions = read_lines(&input)?;
            let qps = QpsConfig { concurrency, duration_s: duration, seed: g.seed };
            if concurrency == 0 || !(duration > 0.0) {
                return Err(config_err("concurrency must be >= 1 and duration > 0"));
            }
            let engine = |q: &String, seed: u64| respond(&ckpt, q, None, &g, seed).map(|r| Some(r.generation.timing));
            let report = run_qps(engine, &questions, &qps)?;
            write_or_print(&output, &(report.to_json() + "\n"))?;
        }
        Command::Sweep { paths, gen, input, taus, caps, repeats, output } => {
            paths.merge(&mut cfg);
            let g = gen.resolve(&cfg)?;
            let ckpt = load_checkpoint(&cfg)?;
            let mut settings: Vec<VocabMode> = taus.iter().map(|&tau| VocabMode::Dynamic { tau, cap: 0 }).collect();
            settings.extend(caps.iter().map(|&cap| VocabMode::Dynamic { tau: 0.0, cap }));
            if settings.is_empty() {
                settings.push(g.vocab);
            }
            for s in &settings {
                GenerationConfig { vocab: *s, ..g }.validate().map_err(|e| config_err(e.to_string()))?;
            }
            let mut questions = Vec::new();
            for (i, q) in read_lines(&input)?.iter().enumerate() {
                let ids = ckpt.model.vocab.encode(&tokenize(q));
                let qe = question_emotion(&ckpt, &ids)?;
                let e = sample_response_emotion(map_emotions(qe, &ckpt.emotion_map)?, g.seed.wrapping_add(i as u64))?;
                questions.push((ids, e));
            }
            let rows = sweep_vocab_latency(&ckpt.model, &questions, &settings, &g, repeats)?;
            write_or_print(&output, &sweep_csv(&rows))?;
        }
    }
    Ok(())
}

fn chat(ckpt: &Checkpoint, g: &GenerationConfig) -> Result<()> {
    let stdin = io::stdin();
    let mut stdout = io::stdout();
    let mut turn: u64 = 0;
    let mut line = String::new();
    loop {
        print!("> ");
        stdout.flush()?;
        line.clear();
        if stdin.lock().read_line(&mut line)? == 0 {
            println!();
            return Ok(());
        }
        let q = line.trim();
        if tokenize(q).is_empty() {
            continue;
        }
        match respond(ckpt, q, None, g, g.seed.wrapping_add(turn)) {
            Ok(r) => println!(
                "[{} → {}] {}",
                ckpt.taxonomy.label(r.question_emotion),
                ckpt.taxonomy.label(r.chosen_emotion),
                r.response
            ),
            Err(e) => eprintln!("error: {e}"),
        }
        turn += 1;
    }
}

fn eval(cfg: &AppConfig, g: &GenerationConfig, candidates: Option<PathBuf>, vectors: Option<PathBuf>) -> Result<MetricsReport> {
    let corpus = existing(&cfg.paths.corpus, "corpus")?;
    let vectors_path = optional(&vectors.or_else(|| cfg.paths.embeddings.clone()), "word vectors")?;
    let ckpt = match &cfg.paths.checkpoint {
        Some(_) => Some(load_checkpoint(cfg)?),
        None => None,
    };
    let taxonomy = match (&ckpt, optional(&cfg.paths.taxonomy, "taxonomy")?) {
        (Some(c), _) => c.taxonomy.clone(),
        (None, Some(p)) => EmotionTaxonomy::load(&p)?,
        (None, None) => EmotionTaxonomy::default(),
    };
    let records = load_corpus(&corpus, &taxonomy)?;
    let references: Vec<Vec<String>> = records.iter().map(|r| tokenize(&r.response)).collect();

    let mut coverage = Vec::new();
    let mut generated = Vec::new();
    if let Some(ck) = &ckpt {
        for r in &records {
            let x = TrainingExample::encode(r, &ck.model.vocab);
            let dv = match g.vocab {
                VocabMode::Static => DynamicVocab::full(&ck.model.vocab),
                VocabMode::Dynamic { tau, cap } => {
                    let probs = ck.model.vocab_probs(&x.question, x.response_emotion)?;
                    build_dynamic_vocab(probs, &ck.model.vocab, &x.question, tau, cap)
                }
            };
            coverage.push(Coverage {
                recall: word_recall(&dv, &x.response)?,
                voc_size: dv.len(),
            });
            if candidates.is_none() {
                let out = generate(&ck.model, &x.question, x.response_emotion, g)?;
                generated.push(tokenize(&ck.model.vocab.decode(&out.tokens)));
            }
        }
    }
    let cands: Vec<Vec<String>> = match candidates {
        Some(p) => {
            let p = existing(&Some(p), "candidates file")?;
            let text = fs::read_to_string(&p)?;
            let lines: Vec<Vec<String>> = text.lines().map(tokenize).collect();
            if lines.len() != references.len() {
                anyhow::bail!(
                    "{}: {} candidates for {} corpus pairs",
                    p.display(),
                    lines.len(),
                    references.len()
                );
            }
            lines
        }
        None if ckpt.is_some() => generated,
        None => return Err(config_err("eval needs --candidates or a checkpoint to generate from")),
    };
    let vectors = match vectors_path {
        Some(p) => Some(WordVectors::load(&p)?),
        None => None,
    };
    Ok(MetricsReport::compute(&cands, &references, &coverage, vectors.as_ref())?)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.chain().any(|c| c.is::<ConfigError>()) {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
