//! Emotion taxonomy, question->response emotion mapping, and a
//! label-embedding attention classifier for user questions.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Adam, AdamConfig, Gradients, ParamId, ParameterStore, Scalar, Tape, Tensor, Var};
use crate::text::TokenId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EmotionId(pub usize);

impl fmt::Display for EmotionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

pub const NON_EMOTIONAL: &str = "non-emotional";

pub const DEFAULT_LABELS: [&str; 6] = [
    NON_EMOTIONAL,
    "satisfied",
    "aggrieved",
    "regretful",
    "abusing",
    "grateful",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct EmotionTaxonomy {
    labels: Vec<String>,
    index: HashMap<String, EmotionId>,
}

impl TryFrom<Vec<String>> for EmotionTaxonomy {
    type Error = Error;

    fn try_from(labels: Vec<String>) -> Result<Self> {
        EmotionTaxonomy::new(labels)
    }
}

impl From<EmotionTaxonomy> for Vec<String> {
    fn from(t: EmotionTaxonomy) -> Self {
        t.labels
    }
}

impl Default for EmotionTaxonomy {
    fn default() -> Self {
        EmotionTaxonomy::new(DEFAULT_LABELS.iter().map(|s| s.to_string()).collect())
            .expect("default taxonomy is valid")
    }
}

impl EmotionTaxonomy {
    pub fn new(labels: Vec<String>) -> Result<Self> {
        let mut index = HashMap::new();
        for (i, l) in labels.iter().enumerate() {
            if index.insert(l.clone(), EmotionId(i)).is_some() {
                return Err(Error::Invalid(format!("duplicate emotion label `{l}`")));
            }
        }
        if !index.contains_key(NON_EMOTIONAL) {
            return Err(Error::Invalid(format!("taxonomy must contain `{NON_EMOTIONAL}`")));
        }
        Ok(EmotionTaxonomy { labels, index })
    }

    /// One label per line; blank lines and `#` comments skipped.
    pub fn parse(text: &str) -> Result<Self> {
        Self::new(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(str::to_string)
                .collect(),
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn id(&self, label: &str) -> Result<EmotionId> {
        self.index
            .get(label)
            .copied()
            .ok_or_else(|| Error::UnknownEmotion(label.to_string()))
    }

    pub fn label(&self, id: EmotionId) -> &str {
        &self.labels[id.0]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn neutral(&self) -> EmotionId {
        self.index[NON_EMOTIONAL]
    }
}

/// Total map from question emotion to admissible response emotions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmotionMap {
    targets: Vec<Vec<EmotionId>>,
}

impl EmotionMap {
    pub fn identity(taxonomy: &EmotionTaxonomy) -> Self {
        EmotionMap {
            targets: (0..taxonomy.len()).map(|i| vec![EmotionId(i)]).collect(),
        }
    }

    /// Identity, except an abusing question may get an aggrieved or a
    /// regretful response.
    pub fn default_for(taxonomy: &EmotionTaxonomy) -> Self {
        let mut map = Self::identity(taxonomy);
        if let (Ok(q), Ok(a), Ok(r)) = (
            taxonomy.id("abusing"),
            taxonomy.id("aggrieved"),
            taxonomy.id("regretful"),
        ) {
            map.targets[q.0] = vec![a, r];
            map.targets[q.0].sort();
        }
        map
    }

    /// Lines of the form `question_emotion -> resp1, resp2`. Every taxonomy
    /// label must have exactly one line.
    pub fn parse(text: &str, taxonomy: &EmotionTaxonomy) -> Result<Self> {
        let mut targets: Vec<Option<Vec<EmotionId>>> = vec![None; taxonomy.len()];
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |msg: String| Error::Parse {
                path: "emotion map".into(),
                line: i + 1,
                msg,
            };
            let (lhs, rhs) = line
                .split_once("->")
                .ok_or_else(|| bad(format!("expected `q -> r1, r2`, got `{line}`")))?;
            let q = taxonomy.id(lhs.trim())?;
            let set: BTreeSet<EmotionId> = rhs
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| taxonomy.id(s))
                .collect::<Result<_>>()?;
            if set.is_empty() {
                return Err(bad(format!("`{}` maps to nothing", lhs.trim())));
            }
            if targets[q.0].replace(set.into_iter().collect()).is_some() {
                return Err(bad(format!("`{}` mapped twice", lhs.trim())));
            }
        }
        let targets = targets
            .into_iter()
            .enumerate()
            .map(|(i, t)| {
                t.ok_or_else(|| {
                    Error::Invalid(format!(
                        "emotion map has no entry for `{}`",
                        taxonomy.label(EmotionId(i))
                    ))
                })
            })
            .collect::<Result<_>>()?;
        Ok(EmotionMap { targets })
    }

    pub fn load(path: &Path, taxonomy: &EmotionTaxonomy) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?, taxonomy)
    }

    pub fn to_text(&self, taxonomy: &EmotionTaxonomy) -> String {
        self.targets
            .iter()
            .enumerate()
            .map(|(q, rs)| {
                let rs: Vec<&str> = rs.iter().map(|&r| taxonomy.label(r)).collect();
                format!("{} -> {}\n", taxonomy.label(EmotionId(q)), rs.join(", "))
            })
            .collect()
    }

    pub fn candidates(&self, question_emotion: EmotionId) -> Result<&[EmotionId]> {
        self.targets
            .get(question_emotion.0)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UnknownEmotion(question_emotion.to_string()))
    }
}

pub fn map_emotions(question_emotion: EmotionId, map: &EmotionMap) -> Result<&[EmotionId]> {
    map.candidates(question_emotion)
}

/// Uniform draw from `candidates`, determined by `seed`.
pub fn sample_response_emotion(candidates: &[EmotionId], seed: u64) -> Result<EmotionId> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    candidates
        .choose(&mut rng)
        .copied()
        .ok_or(Error::EmptyInput("candidate emotion set"))
}

/// Parameter handles of the label-embedding attention classifier. The word
/// embedding table is stored alongside but never trained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifierParams {
    pub word_emb: ParamId,
    pub label_emb: ParamId,
    pub proj_w: ParamId,
    pub proj_b: ParamId,
    pub out_w: ParamId,
    pub out_b: ParamId,
    pub labels: usize,
    pub dim: usize,
}

const CLS: &str = "cls.";

impl ClassifierParams {
    /// Registers freshly initialised parameters. `word_emb` is `[|V|, d]`.
    pub fn init<T: Scalar>(
        store: &mut ParameterStore<T>,
        word_emb: Tensor<T>,
        labels: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let dim = word_emb.matrix_dims().1;
        Ok(ClassifierParams {
            word_emb: store.insert("cls.word_emb.frozen", word_emb.frozen())?,
            label_emb: store.insert("cls.label_emb", Tensor::xavier(vec![labels, dim], rng))?,
            proj_w: store.insert("cls.proj.w", Tensor::xavier(vec![hidden, dim], rng))?,
            proj_b: store.insert("cls.proj.b", Tensor::zeros(vec![hidden]))?,
            out_w: store.insert("cls.out.w", Tensor::xavier(vec![labels, hidden], rng))?,
            out_b: store.insert("cls.out.b", Tensor::zeros(vec![labels]))?,
            labels,
            dim,
        })
    }

    pub fn bind<T: Scalar>(store: &ParameterStore<T>) -> Result<Self> {
        let word_emb = store.id("cls.word_emb.frozen")?;
        let label_emb = store.id("cls.label_emb")?;
        let (labels, dim) = store.get(label_emb).matrix_dims();
        if store.get(word_emb).matrix_dims().1 != dim {
            return Err(Error::shape("classifier label and word embeddings differ in width"));
        }
        Ok(ClassifierParams {
            word_emb,
            label_emb,
            proj_w: store.id("cls.proj.w")?,
            proj_b: store.id("cls.proj.b")?,
            out_w: store.id("cls.out.w")?,
            out_b: store.id("cls.out.b")?,
            labels,
            dim,
        })
    }

    pub fn is_member(name: &str) -> bool {
        name.starts_with(CLS)
    }
}

pub struct ClassifierGraph {
    pub logits: Var,
    pub probs: Var,
    pub attention: Var,
}

/// Forward pass: cosine compatibility between every token and label
/// embedding, max over labels per token, softmax over tokens, attention-
/// weighted mean embedding, tanh projection, linear output.
pub fn classifier_forward<T: Scalar>(
    tape: &mut Tape<'_, T>,
    p: &ClassifierParams,
    question: &[TokenId],
) -> Result<ClassifierGraph> {
    if question.is_empty() {
        return Err(Error::EmptyInput("question"));
    }
    let word_emb = tape.param(p.word_emb);
    let label_emb = tape.param(p.label_emb);
    let labels: Vec<Var> = (0..p.labels)
        .map(|l| tape.row(label_emb, l))
        .collect::<Result<_>>()?;
    let mut tokens = Vec::with_capacity(question.len());
    let mut scores = Vec::with_capacity(question.len());
    for &id in question {
        let e = tape.row(word_emb, id)?;
        let compat: Vec<Var> = labels
            .iter()
            .map(|&c| tape.cosine(c, e))
            .collect::<Result<_>>()?;
        let g = tape.concat(&compat);
        scores.push(tape.max(g)?);
        tokens.push(e);
    }
    let scores = tape.concat(&scores);
    let attention = tape.softmax(scores)?;
    let feature = tape.weighted_sum(attention, &tokens)?;
    let (pw, pb, ow, ob) = (
        tape.param(p.proj_w),
        tape.param(p.proj_b),
        tape.param(p.out_w),
        tape.param(p.out_b),
    );
    let z = tape.matvec(pw, feature)?;
    let z = tape.add(z, pb)?;
    let z = tape.tanh(z);
    let logits = tape.matvec(ow, z)?;
    let logits = tape.add(logits, ob)?;
    let probs = tape.softmax(logits)?;
    Ok(ClassifierGraph {
        logits,
        probs,
        attention,
    })
}

#[derive(Debug, Clone)]
pub struct EmotionClassifier {
    pub store: ParameterStore<f32>,
    pub params: ClassifierParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub probs: Vec<f32>,
    pub attention: Vec<f32>,
}

impl Classification {
    pub fn argmax(&self) -> EmotionId {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        EmotionId(best)
    }
}

impl EmotionClassifier {
    pub fn new(word_emb: Tensor<f32>, labels: usize, hidden: usize, seed: u64) -> Result<Self> {
        let mut store = ParameterStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = ClassifierParams::init(&mut store, word_emb, labels, hidden, &mut rng)?;
        Ok(EmotionClassifier { store, params })
    }

    pub fn from_store(store: ParameterStore<f32>) -> Result<Self> {
        let params = ClassifierParams::bind(&store)?;
        Ok(EmotionClassifier { store, params })
    }

    pub fn classify(&self, question: &[TokenId]) -> Result<Classification> {
        classify_emotion(question, self)
    }
}

pub fn classify_emotion(question: &[TokenId], classifier: &EmotionClassifier) -> Result<Classification> {
    let mut tape = Tape::new(&classifier.store);
    let g = classifier_forward(&mut tape, &classifier.params, question)?;
    Ok(Classification {
        probs: tape.value(g.probs).to_vec(),
        attention: tape.value(g.attention).to_vec(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub hidden: usize,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            epochs: 20,
            batch_size: 32,
            hidden: 64,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

/// Cross-entropy training with Adam; returns the trained classifier and
/// the mean loss of the final epoch (NaN when `epochs == 0`).
pub fn train_classifier(
    examples: &[(Vec<TokenId>, EmotionId)],
    word_emb: Tensor<f32>,
    taxonomy: &EmotionTaxonomy,
    cfg: &ClassifierConfig,
) -> Result<(EmotionClassifier, f32)> {
    if examples.is_empty() {
        return Err(Error::EmptyInput("labelled questions"));
    }
    if let Some((_, bad)) = examples.iter().find(|(_, l)| l.0 >= taxonomy.len()) {
        return Err(Error::UnknownEmotion(bad.to_string()));
    }
    let mut clf = EmotionClassifier::new(word_emb, taxonomy.len(), cfg.hidden, cfg.seed)?;
    let mut opt = Adam::new(cfg.adam, &clf.store);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut last = f32::NAN;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size.max(1)) {
            let mut grads = Gradients::new(&clf.store);
            for &i in batch {
                let (q, label) = &examples[i];
                let mut tape = Tape::new(&clf.store);
                let g = classifier_forward(&mut tape, &clf.params, q)?;
                let loss = tape.nll(g.logits, label.0)?;
                total += tape.scalar(loss);
                tape.backward(loss, &mut grads)?;
            }
            grads.scale(1.0 / batch.len() as f32);
            opt.step(&mut clf.store, &grads, |_| true);
        }
        last = total / examples.len() as f32;
    }
    Ok((clf, last))
}
