//! Tokenization, corpus loading, vocabulary construction and pre-trained
//! embedding loading.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::emotion::{EmotionId, EmotionTaxonomy};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub type TokenId = usize;

pub const PAD: TokenId = 0;
pub const UNK: TokenId = 1;
pub const BOS: TokenId = 2;
pub const EOS: TokenId = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<unk>", "<bos>", "<eos>"];

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation() || (!c.is_alphanumeric() && !c.is_whitespace() && !c.is_control())
}

/// Lowercased whitespace split; every punctuation mark becomes its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for c in text.chars() {
        if c.is_whitespace() {
            if !word.is_empty() {
                out.push(std::mem::take(&mut word));
            }
        } else if is_punct(c) {
            if !word.is_empty() {
                out.push(std::mem::take(&mut word));
            }
            out.push(c.to_string());
        } else {
            word.extend(c.to_lowercase());
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

pub fn is_punctuation_token(tok: &str) -> bool {
    !tok.is_empty() && tok.chars().all(is_punct)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenKind {
    Reserved,
    Function,
    Content,
}

/// Token table split into reserved, function and content ids. Content ids
/// also carry a dense content index used by the vocabulary predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "VocabFile", try_from = "VocabFile")]
pub struct Vocabulary {
    tokens: Vec<String>,
    kinds: Vec<TokenKind>,
    index: HashMap<String, TokenId>,
    function_ids: Vec<TokenId>,
    content_ids: Vec<TokenId>,
    content_pos: Vec<Option<usize>>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    tokens: Vec<String>,
    kinds: Vec<TokenKind>,
}

impl From<Vocabulary> for VocabFile {
    fn from(v: Vocabulary) -> Self {
        VocabFile {
            tokens: v.tokens,
            kinds: v.kinds,
        }
    }
}

impl TryFrom<VocabFile> for Vocabulary {
    type Error = Error;

    fn try_from(f: VocabFile) -> Result<Self> {
        if f.tokens.len() != f.kinds.len() || f.tokens.len() < RESERVED.len() {
            return Err(Error::Invalid("vocabulary tokens/kinds mismatch".into()));
        }
        for (i, r) in RESERVED.iter().enumerate() {
            if f.tokens[i] != *r || f.kinds[i] != TokenKind::Reserved {
                return Err(Error::Invalid(format!("reserved id {i} must be {r}")));
            }
        }
        Vocabulary::from_kinds(f.tokens, f.kinds)
    }
}

impl Vocabulary {
    fn from_kinds(tokens: Vec<String>, kinds: Vec<TokenKind>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        let mut function_ids = Vec::new();
        let mut content_ids = Vec::new();
        let mut content_pos = vec![None; tokens.len()];
        for (id, (tok, kind)) in tokens.iter().zip(&kinds).enumerate() {
            if index.insert(tok.clone(), id).is_some() {
                return Err(Error::Invalid(format!("duplicate token `{tok}`")));
            }
            match kind {
                TokenKind::Reserved if id >= RESERVED.len() => {
                    return Err(Error::Invalid(format!("token `{tok}` marked reserved")));
                }
                TokenKind::Reserved => {}
                TokenKind::Function => function_ids.push(id),
                TokenKind::Content => {
                    content_pos[id] = Some(content_ids.len());
                    content_ids.push(id);
                }
            }
        }
        Ok(Vocabulary {
            tokens,
            kinds,
            index,
            function_ids,
            content_ids,
            content_pos,
        })
    }

    /// Reserved tokens followed by `words` in order. Words in
    /// `function_words`, and punctuation, become function words.
    pub fn from_words<S: AsRef<str>>(words: &[S], function_words: &HashSet<String>) -> Result<Self> {
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let mut kinds = vec![TokenKind::Reserved; RESERVED.len()];
        for w in words {
            let w = w.as_ref();
            tokens.push(w.to_string());
            kinds.push(if function_words.contains(w) || is_punctuation_token(w) {
                TokenKind::Function
            } else {
                TokenKind::Content
            });
        }
        Self::from_kinds(tokens, kinds)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.tokens[id]
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> TokenId {
        self.id(token).unwrap_or(UNK)
    }

    pub fn kind(&self, id: TokenId) -> TokenKind {
        self.kinds[id]
    }

    pub fn reserved_ids(&self) -> std::ops::Range<TokenId> {
        0..RESERVED.len()
    }

    pub fn function_ids(&self) -> &[TokenId] {
        &self.function_ids
    }

    pub fn content_ids(&self) -> &[TokenId] {
        &self.content_ids
    }

    /// Position of `id` among the content words, if it is one.
    pub fn content_index(&self, id: TokenId) -> Option<usize> {
        self.content_pos.get(id).copied().flatten()
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<TokenId> {
        tokens.iter().map(|t| self.id_or_unk(t.as_ref())).collect()
    }

    /// Joins tokens up to the first EOS, skipping PAD and BOS.
    pub fn decode(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .take_while(|&&id| id != EOS)
            .filter(|&&id| id != PAD && id != BOS)
            .map(|&id| self.tokens[id].as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Ranks corpus tokens by frequency (ties lexicographic) and keeps at most
/// `max_size` ids including the four reserved tokens.
pub fn build_vocab<'a, I>(
    corpus: I,
    max_size: usize,
    min_count: usize,
    function_words: &HashSet<String>,
) -> Result<Vocabulary>
where
    I: IntoIterator<Item = &'a [String]>,
{
    if max_size < RESERVED.len() {
        return Err(Error::Invalid(format!(
            "max_size {max_size} cannot hold the {} reserved tokens",
            RESERVED.len()
        )));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    let mut sequences = 0;
    for seq in corpus {
        sequences += 1;
        for tok in seq {
            if !RESERVED.contains(&tok.as_str()) {
                *counts.entry(tok.as_str()).or_default() += 1;
            }
        }
    }
    if sequences == 0 {
        return Err(Error::EmptyInput("corpus"));
    }
    let mut ranked: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|&(_, c)| c >= min_count.max(1))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(max_size - RESERVED.len());
    let words: Vec<&str> = ranked.into_iter().map(|(w, _)| w).collect();
    Vocabulary::from_words(&words, function_words)
}

/// One token per line; blank lines ignored, entries lowercased.
pub fn load_word_list(path: &Path) -> Result<HashSet<String>> {
    Ok(fs::read_to_string(path)?
        .lines()
        .map(|l| l.trim().to_lowercase())
        .filter(|l| !l.is_empty())
        .collect())
}

/// A corpus line with emotions resolved but text not yet encoded.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusRecord {
    pub question: String,
    pub response: String,
    pub response_emotion: EmotionId,
    pub question_emotion: Option<EmotionId>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CorpusLine {
    question: String,
    response: String,
    response_emotion: String,
    #[serde(default)]
    question_emotion: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub question: Vec<TokenId>,
    pub response: Vec<TokenId>,
    pub response_emotion: EmotionId,
    pub question_emotion: Option<EmotionId>,
}

impl TrainingExample {
    pub fn encode(record: &CorpusRecord, vocab: &Vocabulary) -> Self {
        TrainingExample {
            question: vocab.encode(&tokenize(&record.question)),
            response: vocab.encode(&tokenize(&record.response)),
            response_emotion: record.response_emotion,
            question_emotion: record.question_emotion,
        }
    }

    /// Decoder targets: the response followed by EOS.
    pub fn targets(&self) -> Vec<TokenId> {
        let mut t = self.response.clone();
        t.push(EOS);
        t
    }
}

/// Reads a JSONL corpus: one `{question, response, response_emotion,
/// question_emotion?}` object per non-blank line.
pub fn load_corpus(path: &Path, taxonomy: &EmotionTaxonomy) -> Result<Vec<CorpusRecord>> {
    let text = fs::read_to_string(path)?;
    parse_corpus(&text, path, taxonomy)
}

pub fn parse_corpus(text: &str, path: &Path, taxonomy: &EmotionTaxonomy) -> Result<Vec<CorpusRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno,
            msg,
        };
        let rec: CorpusLine = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        if tokenize(&rec.question).is_empty() || tokenize(&rec.response).is_empty() {
            return Err(err("question and response must contain at least one token".into()));
        }
        let response_emotion = taxonomy.id(&rec.response_emotion)?;
        let question_emotion = rec
            .question_emotion
            .as_deref()
            .map(|l| taxonomy.id(l))
            .transpose()?;
        out.push(CorpusRecord {
            question: rec.question,
            response: rec.response,
            response_emotion,
            question_emotion,
        });
    }
    Ok(out)
}

pub const EMBEDDING_INIT_RANGE: f64 = 0.1;

/// Loads word2vec text vectors for `vocab`. Rows missing from the file are
/// drawn uniformly from [-0.1, 0.1] in id order; reserved rows are zero
/// except UNK, which is drawn like a missing word.
pub fn load_embeddings(path: &Path, vocab: &Vocabulary, dim: usize, seed: u64) -> Result<Tensor<f32>> {
    let text = fs::read_to_string(path)?;
    parse_embeddings(&text, path, vocab, dim, seed)
}

pub fn parse_embeddings(
    text: &str,
    path: &Path,
    vocab: &Vocabulary,
    dim: usize,
    seed: u64,
) -> Result<Tensor<f32>> {
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| err(1, "missing header".into()))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    let file_dim: usize = match fields.as_slice() {
        [_, d] => d
            .parse()
            .map_err(|_| err(1, format!("bad header `{header}`")))?,
        _ => return Err(err(1, format!("bad header `{header}`"))),
    };
    if file_dim != dim {
        return Err(err(
            1,
            format!("file has dimension {file_dim}, requested {dim}"),
        ));
    }

    let mut data = vec![0f32; vocab.len() * dim];
    let mut found = vec![false; vocab.len()];
    for (i, line) in lines {
        let mut parts = line.split_whitespace();
        let Some(token) = parts.next() else { continue };
        let values = parts
            .map(|v| {
                v.parse::<f32>()
                    .map_err(|_| err(i + 1, format!("non-numeric entry `{v}`")))
            })
            .collect::<Result<Vec<f32>>>()?;
        if values.len() != dim {
            return Err(err(
                i + 1,
                format!("expected {dim} values, got {}", values.len()),
            ));
        }
        if let Some(id) = vocab.id(token) {
            if vocab.kind(id) != TokenKind::Reserved && !found[id] {
                data[id * dim..(id + 1) * dim].copy_from_slice(&values);
                found[id] = true;
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for id in 0..vocab.len() {
        let random = if vocab.kind(id) == TokenKind::Reserved {
            id == UNK
        } else {
            !found[id]
        };
        if random {
            for v in &mut data[id * dim..(id + 1) * dim] {
                *v = rng.gen_range(-EMBEDDING_INIT_RANGE..=EMBEDDING_INIT_RANGE) as f32;
            }
        }
    }
    Tensor::from_vec(vec![vocab.len(), dim], data)
}

/// Unique content-word positions of `ids`, sorted.
pub fn content_positions(vocab: &Vocabulary, ids: &[TokenId]) -> Vec<usize> {
    ids.iter()
        .filter_map(|&id| vocab.content_index(id))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}
