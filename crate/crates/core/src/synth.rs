//! Deterministic toy corpus: `K` question templates × 4 response emotions,
//! where the response is a fixed function of (template, emotion).

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::emotion::{EmotionId, EmotionMap, EmotionTaxonomy};
use crate::error::Result;
use crate::text::{build_vocab, tokenize, CorpusRecord, TrainingExample, Vocabulary};

pub const TOY_TEMPLATES: usize = 50;
pub const TOY_LABELS: [&str; 4] = ["non-emotional", "satisfied", "aggrieved", "regretful"];

pub const FUNCTION_WORDS: [&str; 24] = [
    "i", "you", "we", "it", "my", "your", "the", "a", "is", "was", "to", "for", "and", "of", "with",
    "can", "will", "not", "this", "that", "please", "do", "have", "be",
];

const QUESTION_SHAPES: [&str; 5] = [
    "my {0} {1} is not {2} , can you help ?",
    "why is the {0} {1} {2} ?",
    "i have a {0} with the {1} {2} .",
    "can you {0} my {1} {2} ?",
    "the {0} was {1} and {2} .",
];

// Response opening per emotion, in `TOY_LABELS` order.
const OPENINGS: [&str; 4] = ["noted ,", "great news ,", "this is unacceptable ,", "we are sorry ,"];

const RESPONSE_SHAPES: [&str; 3] = [
    "{o} your {c} will be {w0} {w1} .",
    "{o} we {w0} the {c} {w1} .",
    "{o} the {c} is {w0} and {w1} .",
];

const ONSETS: [&str; 16] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "sh", "tr"];
const NUCLEI: [&str; 6] = ["a", "e", "i", "o", "u", "ai"];

/// Toy corpus plus the configuration files it comes with.
#[derive(Debug, Clone)]
pub struct ToyCorpus {
    pub records: Vec<CorpusRecord>,
    pub taxonomy: EmotionTaxonomy,
    pub emotion_map: EmotionMap,
    pub function_words: Vec<String>,
}

/// `n` distinct pronounceable pseudo-words, none of which appear in `exclude`.
pub fn pseudo_words(n: usize, seed: u64, exclude: &HashSet<String>) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen: HashSet<String> = HashSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        // Longer words once short ones get crowded.
        let syllables = 2 + rng.gen_range(0..2) + out.len() / 4000;
        let mut w = String::new();
        for _ in 0..syllables {
            w.push_str(ONSETS[rng.gen_range(0..ONSETS.len())]);
            w.push_str(NUCLEI[rng.gen_range(0..NUCLEI.len())]);
        }
        if !exclude.contains(&w) && seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

fn fill(shape: &str, slots: &[(&str, &str)]) -> String {
    let mut s = shape.to_string();
    for (k, v) in slots {
        s = s.replace(k, v);
    }
    s
}

fn reserved_words() -> HashSet<String> {
    let mut all: HashSet<String> = FUNCTION_WORDS.iter().map(|s| s.to_string()).collect();
    for text in QUESTION_SHAPES.iter().chain(&RESPONSE_SHAPES).chain(&OPENINGS) {
        all.extend(tokenize(text));
    }
    all
}

/// Builds the corpus for `templates` questions (the standard toy corpus
/// uses 50, giving 200 pairs and roughly 600 word types).
pub fn toy_corpus(templates: usize, seed: u64) -> ToyCorpus {
    let labels: Vec<String> = TOY_LABELS.iter().map(|s| s.to_string()).collect();
    let taxonomy = EmotionTaxonomy::new(labels).expect("toy labels are valid");
    let emotions = TOY_LABELS.len();
    // 3 question words per template, 2 response words per (template, emotion).
    let words = pseudo_words(templates * (3 + 2 * emotions), seed, &reserved_words());
    let mut words = words.into_iter();
    let mut next = || words.next().expect("enough pseudo-words");

    let mut records = Vec::with_capacity(templates * emotions);
    for t in 0..templates {
        let q = [next(), next(), next()];
        let question = fill(
            QUESTION_SHAPES[t % QUESTION_SHAPES.len()],
            &[("{0}", &q[0]), ("{1}", &q[1]), ("{2}", &q[2])],
        );
        let question_emotion = EmotionId(t % emotions);
        for (e, opening) in OPENINGS.iter().enumerate() {
            let (w0, w1) = (next(), next());
            let response = fill(
                RESPONSE_SHAPES[(t + e) % RESPONSE_SHAPES.len()],
                &[("{o}", opening), ("{c}", &q[1]), ("{w0}", &w0), ("{w1}", &w1)],
            );
            records.push(CorpusRecord {
                question: question.clone(),
                response,
                response_emotion: EmotionId(e),
                question_emotion: Some(question_emotion),
            });
        }
    }
    // Every question appears with every response emotion, so the map is total.
    let all = (0..emotions).map(|e| TOY_LABELS[e]).collect::<Vec<_>>().join(", ");
    let map_text: String = TOY_LABELS.iter().map(|q| format!("{q} -> {all}\n")).collect();
    let emotion_map = EmotionMap::parse(&map_text, &taxonomy).expect("toy map is total");
    ToyCorpus {
        records,
        taxonomy,
        emotion_map,
        function_words: FUNCTION_WORDS.iter().map(|s| s.to_string()).collect(),
    }
}

impl ToyCorpus {
    pub fn function_word_set(&self) -> HashSet<String> {
        self.function_words.iter().cloned().collect()
    }

    /// Vocabulary over every question and response token.
    pub fn vocabulary(&self) -> Result<Vocabulary> {
        let seqs: Vec<Vec<String>> = self
            .records
            .iter()
            .flat_map(|r| [tokenize(&r.question), tokenize(&r.response)])
            .collect();
        build_vocab(seqs.iter().map(Vec::as_slice), usize::MAX, 1, &self.function_word_set())
    }

    /// The toy vocabulary followed by `extra` unused pseudo-words, all content.
    pub fn padded_vocabulary(&self, total: usize, seed: u64) -> Result<Vocabulary> {
        let base = self.vocabulary()?;
        let mut words: Vec<String> = (4..base.len()).map(|id| base.token(id).to_string()).collect();
        let mut taken: HashSet<String> = words.iter().cloned().collect();
        taken.extend(reserved_words());
        words.extend(pseudo_words(total.saturating_sub(base.len()), seed ^ 0x5eed, &taken));
        Vocabulary::from_words(&words, &self.function_word_set())
    }

    pub fn examples(&self, vocab: &Vocabulary) -> Vec<TrainingExample> {
        self.records.iter().map(|r| TrainingExample::encode(r, vocab)).collect()
    }

    /// Distinct questions in first-appearance order.
    pub fn questions(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        self.records
            .iter()
            .filter(|r| seen.insert(r.question.clone()))
            .map(|r| r.question.clone())
            .collect()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            let mut line = json!({
                "question": r.question,
                "response": r.response,
                "response_emotion": self.taxonomy.label(r.response_emotion),
            });
            if let Some(q) = r.question_emotion {
                line["question_emotion"] = json!(self.taxonomy.label(q));
            }
            out.push_str(&line.to_string());
            out.push('\n');
        }
        out
    }

    /// Writes `corpus.jsonl`, `function_words.txt`, `taxonomy.txt` and
    /// `emotion_map.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("corpus.jsonl"), self.to_jsonl())?;
        fs::write(dir.join("function_words.txt"), self.function_words.join("\n") + "\n")?;
        fs::write(dir.join("taxonomy.txt"), self.taxonomy.labels().join("\n") + "\n")?;
        fs::write(dir.join("emotion_map.txt"), self.emotion_map.to_text(&self.taxonomy))?;
        Ok(())
    }
}
