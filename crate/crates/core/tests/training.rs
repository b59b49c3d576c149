use dverg_core::encdec::{generate, GenerationConfig, Seq2SeqParams, VocabMode};
use dverg_core::numerics::ParameterStore;
use dverg_core::synth::toy_corpus;
use dverg_core::text::TrainingExample;
use dverg_core::training::{
    evaluate_nll, evaluate_vocab_loss, finetune, joint_loss, train_seq2seq, train_vocab_model, Checkpoint,
    FinetuneMode, Stage, TrainConfig,
};
use dverg_core::dynvocab::VocabPredictorParams;
use dverg_core::Error;

fn small_cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        lr: 0.01,
        batch_size: 5,
        epochs,
        emb_dim: 24,
        hidden: 24,
        emotion_dim: 8,
        attn_dim: 24,
        readout_dim: 24,
        beta_hidden: 24,
        seed: 3,
        ..Default::default()
    }
}

fn tiny() -> (dverg_core::synth::ToyCorpus, Vec<TrainingExample>, dverg_core::text::Vocabulary) {
    let mut toy = toy_corpus(3, 11);
    toy.records.truncate(10);
    let vocab = toy.vocabulary().unwrap();
    let ex = toy.examples(&vocab);
    (toy, ex, vocab)
}

fn s2s(epochs: usize) -> (Checkpoint, Vec<TrainingExample>) {
    let (toy, ex, vocab) = tiny();
    let ck = train_seq2seq(&ex, vocab, toy.taxonomy, toy.emotion_map, None, &small_cfg(epochs), |_, _| {}).unwrap();
    (ck, ex)
}

fn component(store: &ParameterStore<f32>, member: fn(&str) -> bool) -> Vec<(String, Vec<u32>)> {
    store
        .iter()
        .filter(|(n, _)| member(n))
        .map(|(n, t)| (n.to_string(), t.data().iter().map(|x| x.to_bits()).collect()))
        .collect()
}

#[test]
fn random_init_loss_is_near_uniform() {
    let (ck, ex) = s2s(0);
    let nll = evaluate_nll(&ck.model, &ex).unwrap();
    let uniform = (ck.model.vocab.len() as f32).ln();
    assert!((nll - uniform).abs() / uniform < 0.05, "{nll} vs {uniform}");
}

#[test]
fn tiny_corpus_overfits_and_loss_trends_down() {
    let mut losses = Vec::new();
    let (ck, ex) = {
        let (toy, ex, vocab) = tiny();
        let ck = train_seq2seq(&ex, vocab, toy.taxonomy, toy.emotion_map, None, &small_cfg(300), |_, l| {
            losses.push(l)
        })
        .unwrap();
        (ck, ex)
    };
    assert_eq!(losses.len(), 300);
    assert!(*losses.last().unwrap() < 0.1, "final loss {}", losses.last().unwrap());
    for w in losses.windows(20).step_by(20) {
        if w[0] > 0.01 {
            assert!(w[19] < w[0], "window {:?}", (w[0], w[19]));
        }
    }
    assert!(evaluate_nll(&ck.model, &ex).unwrap() < 0.1);
    let cfg = GenerationConfig { vocab: VocabMode::Static, ..Default::default() };
    for x in &ex {
        assert_eq!(generate(&ck.model, &x.question, x.response_emotion, &cfg).unwrap().tokens, x.response);
    }
}

#[test]
fn training_is_deterministic() {
    let (a, _) = s2s(3);
    let (b, _) = s2s(3);
    assert_eq!(a.params_bytes(), b.params_bytes());
    let (c, _) = {
        let (toy, ex, vocab) = tiny();
        let cfg = TrainConfig { seed: 4, ..small_cfg(3) };
        (train_seq2seq(&ex, vocab, toy.taxonomy, toy.emotion_map, None, &cfg, |_, _| {}).unwrap(), ex)
    };
    assert_ne!(a.params_bytes(), c.params_bytes());
}

#[test]
fn vocab_stage_freezes_seq2seq_and_learns() {
    let (ck, ex) = s2s(40);
    let before = component(&ck.model.store, Seq2SeqParams::is_member);
    let beta_init = component(&ck.model.store, VocabPredictorParams::is_member);

    let zero = train_vocab_model(&ex, ck.clone(), &small_cfg(0), |_, _| {}).unwrap();
    assert_eq!(zero.stage, Stage::Vocab);
    assert_eq!(component(&zero.model.store, VocabPredictorParams::is_member), beta_init);

    let cfg = small_cfg(60);
    let start = evaluate_vocab_loss(&ck.model, &ex, &cfg).unwrap();
    let trained = train_vocab_model(&ex, ck, &cfg, |_, _| {}).unwrap();
    assert_eq!(component(&trained.model.store, Seq2SeqParams::is_member), before);
    let end = evaluate_vocab_loss(&trained.model, &ex, &cfg).unwrap();
    assert!(end < 0.15 && end < start, "{start} -> {end}");
}

#[test]
fn stage_prerequisites_are_enforced() {
    let (ck, ex) = s2s(0);
    let err = finetune(&ex, ck.clone(), &small_cfg(1), |_, _| {}).unwrap_err();
    assert!(matches!(err, Error::Stage { ref required, .. } if required == "vocab"), "{err}");
    let v = train_vocab_model(&ex, ck, &small_cfg(0), |_, _| {}).unwrap();
    assert!(matches!(train_vocab_model(&ex, v, &small_cfg(0), |_, _| {}), Err(Error::Stage { .. })));
}

#[test]
fn finetune_update_masks() {
    let (ck, ex) = s2s(30);
    let ck = train_vocab_model(&ex, ck, &small_cfg(20), |_, _| {}).unwrap();

    let noft = finetune(&ex, ck.clone(), &TrainConfig { mode: FinetuneMode::NoFt, ..small_cfg(5) }, |_, _| {}).unwrap();
    assert_eq!(noft.stage, Stage::Finetuned);
    assert_eq!(noft.params_bytes(), ck.params_bytes());

    let cfg = TrainConfig { mode: FinetuneMode::FtTarget, ..small_cfg(5) };
    let target = finetune(&ex, ck.clone(), &cfg, |_, _| {}).unwrap();
    assert_eq!(
        component(&target.model.store, Seq2SeqParams::is_member),
        component(&ck.model.store, Seq2SeqParams::is_member)
    );
    assert_ne!(
        component(&target.model.store, VocabPredictorParams::is_member),
        component(&ck.model.store, VocabPredictorParams::is_member)
    );

    let cfg = TrainConfig { mode: FinetuneMode::FtBoth, ..small_cfg(20) };
    let start = joint_loss(&ck.model, &ex, &cfg).unwrap();
    let both = finetune(&ex, ck.clone(), &cfg, |_, _| {}).unwrap();
    assert_ne!(
        component(&both.model.store, Seq2SeqParams::is_member),
        component(&ck.model.store, Seq2SeqParams::is_member)
    );
    assert!(joint_loss(&both.model, &ex, &cfg).unwrap() < start);
}

#[test]
fn checkpoint_round_trips_through_disk() {
    let (ck, _) = s2s(1);
    let dir = tempfile::tempdir().unwrap();
    ck.save(dir.path()).unwrap();
    let back = Checkpoint::load(dir.path()).unwrap();
    assert_eq!(back.params_bytes(), ck.params_bytes());
    assert_eq!(back.stage, Stage::S2s);
    assert_eq!(back.config, ck.config);
    assert_eq!(back.model.vocab, ck.model.vocab);
    assert_eq!(back.taxonomy, ck.taxonomy);
    std::fs::write(dir.path().join("params.dverg"), b"nope").unwrap();
    assert!(Checkpoint::load(dir.path()).is_err());
}

#[test]
fn bad_inputs_are_rejected() {
    let (toy, mut ex, vocab) = tiny();
    assert!(matches!(
        train_seq2seq(&[], vocab.clone(), toy.taxonomy.clone(), toy.emotion_map.clone(), None, &small_cfg(1), |_, _| {}),
        Err(Error::EmptyInput(_))
    ));
    let cfg = TrainConfig { lr: -1.0, ..small_cfg(1) };
    assert!(train_seq2seq(&ex, vocab.clone(), toy.taxonomy.clone(), toy.emotion_map.clone(), None, &cfg, |_, _| {}).is_err());
    ex[0].response_emotion = dverg_core::emotion::EmotionId(9);
    assert!(train_seq2seq(&ex, vocab, toy.taxonomy, toy.emotion_map, None, &small_cfg(1), |_, _| {}).is_err());
}
