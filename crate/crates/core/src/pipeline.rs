//! Serving path: classify the question's emotion, map it to admissible
//! response emotions, sample one, and generate under it.

use crate::emotion::{map_emotions, sample_response_emotion, EmotionId};
use crate::encdec::{generate, Generation, GenerationConfig};
use crate::error::{Error, Result};
use crate::text::tokenize;
use crate::training::Checkpoint;

#[derive(Debug, Clone, PartialEq)]
pub struct Reply {
    pub question_emotion: EmotionId,
    pub chosen_emotion: EmotionId,
    pub response: String,
    pub generation: Generation,
}

/// Question emotion from the checkpoint's classifier, or the neutral label
/// when it was trained without one.
pub fn question_emotion(ckpt: &Checkpoint, question: &[usize]) -> Result<EmotionId> {
    match &ckpt.classifier {
        Some(c) => Ok(c.classify(question)?.argmax()),
        None => Ok(ckpt.taxonomy.neutral()),
    }
}

/// Answers one raw-text question. `emotion_override` skips mapping and
/// sampling; `seed` drives the sampling otherwise.
pub fn respond(
    ckpt: &Checkpoint,
    question: &str,
    emotion_override: Option<EmotionId>,
    cfg: &GenerationConfig,
    seed: u64,
) -> Result<Reply> {
    let vocab = &ckpt.model.vocab;
    let ids = vocab.encode(&tokenize(question));
    if ids.is_empty() {
        return Err(Error::EmptyInput("question"));
    }
    let question_emotion = question_emotion(ckpt, &ids)?;
    let chosen_emotion = match emotion_override {
        Some(e) if e.0 >= ckpt.taxonomy.len() => return Err(Error::UnknownEmotion(e.to_string())),
        Some(e) => e,
        None => sample_response_emotion(map_emotions(question_emotion, &ckpt.emotion_map)?, seed)?,
    };
    let generation = generate(&ckpt.model, &ids, chosen_emotion, cfg)?;
    Ok(Reply {
        question_emotion,
        chosen_emotion,
        response: vocab.decode(&generation.tokens),
        generation,
    })
}
