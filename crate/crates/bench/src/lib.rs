//! Throughput and latency measurement for a single model instance.
//!
//! [`run_qps`] drives a fixed number of closed-loop workers against a
//! shared engine and reports sustained queries per second. [`sweep_vocab_latency`]
//! times decoding under several vocabulary settings.

use std::fmt::Display;
use std::time::{Duration, Instant};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use dverg_core::emotion::EmotionId;
use dverg_core::encdec::{generate, GenerationConfig, StageTiming, VocabMode};
use dverg_core::model::DvErgModel;
use dverg_core::text::TokenId;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("concurrency must be at least 1")]
    Concurrency,
    #[error("duration must be positive, got {0}")]
    Duration(f64),
    #[error("no questions to run")]
    NoQuestions,
    #[error("engine failed on question {index} (`{question}`): {message}")]
    Engine {
        index: usize,
        question: String,
        message: String,
    },
    #[error(transparent)]
    Core(#[from] dverg_core::Error),
}

pub type Result<T, E = BenchError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QpsConfig {
    pub concurrency: usize,
    pub duration_s: f64,
    pub seed: u64,
}

impl Default for QpsConfig {
    fn default() -> Self {
        QpsConfig {
            concurrency: 1,
            duration_s: 5.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub p99_ms: f64,
}

impl LatencyStats {
    /// Nearest-rank percentiles.
    pub fn from_samples(samples: &[f64]) -> Self {
        if samples.is_empty() {
            return LatencyStats::default();
        }
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        let rank = |p: f64| s[((p / 100.0 * s.len() as f64).ceil() as usize).clamp(1, s.len()) - 1];
        LatencyStats {
            mean_ms: s.iter().sum::<f64>() / s.len() as f64,
            p50_ms: rank(50.0),
            p95_ms: rank(95.0),
            p99_ms: rank(99.0),
        }
    }
}

/// Mean per-query stage timings.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageBreakdown {
    pub encode_ms: f64,
    pub vocab_ms: f64,
    pub decode_ms: f64,
    pub decode_step_ms: f64,
}

impl StageBreakdown {
    fn from_timings(t: &[StageTiming]) -> Option<Self> {
        if t.is_empty() {
            return None;
        }
        let n = t.len() as f64;
        let steps: usize = t.iter().map(|x| x.steps).sum();
        let decode: f64 = t.iter().map(|x| x.decode_ms).sum();
        Some(StageBreakdown {
            encode_ms: t.iter().map(|x| x.encode_ms).sum::<f64>() / n,
            vocab_ms: t.iter().map(|x| x.vocab_ms).sum::<f64>() / n,
            decode_ms: decode / n,
            decode_step_ms: if steps == 0 { 0.0 } else { decode / steps as f64 },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub si_qps: f64,
    pub concurrency: usize,
    pub queries: usize,
    /// Measured wall time, warmup excluded.
    pub wall_s: f64,
    pub latency: LatencyStats,
    pub stages: Option<StageBreakdown>,
}

impl BenchReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

struct Sample {
    latency_ms: f64,
    finished: Instant,
    timing: Option<StageTiming>,
}

/// Closed-loop load: `concurrency` workers share `engine`, each issuing its
/// next query as soon as the previous one returns, cycling through
/// `questions` from its own offset. The first 10% of `duration_s` is
/// warmup. A query counts when it starts inside the measured window;
/// `si_qps` divides those by the time until the last of them finished.
/// The engine gets a per-query seed from a worker RNG seeded `seed + worker`.
pub fn run_qps<Q, F, E>(engine: F, questions: &[Q], cfg: &QpsConfig) -> Result<BenchReport>
where
    Q: Display + Sync,
    F: Fn(&Q, u64) -> Result<Option<StageTiming>, E> + Sync,
    E: Display,
{
    if cfg.concurrency == 0 {
        return Err(BenchError::Concurrency);
    }
    if !(cfg.duration_s > 0.0) || !cfg.duration_s.is_finite() {
        return Err(BenchError::Duration(cfg.duration_s));
    }
    if questions.is_empty() {
        return Err(BenchError::NoQuestions);
    }
    let t0 = Instant::now();
    let measure_from = t0 + Duration::from_secs_f64(cfg.duration_s * 0.1);
    let stop_at = measure_from + Duration::from_secs_f64(cfg.duration_s);

    let worker = |w: usize| -> Result<Vec<Sample>> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(w as u64));
        let mut out = Vec::new();
        let mut i = w % questions.len();
        loop {
            let start = Instant::now();
            if start >= stop_at {
                return Ok(out);
            }
            let q = &questions[i];
            let timing = engine(q, rng.next_u64()).map_err(|e| BenchError::Engine {
                index: i,
                question: q.to_string(),
                message: e.to_string(),
            })?;
            let finished = Instant::now();
            if start >= measure_from {
                out.push(Sample {
                    latency_ms: (finished - start).as_secs_f64() * 1e3,
                    finished,
                    timing,
                });
            }
            i = (i + 1) % questions.len();
        }
    };

    let per_worker: Vec<Result<Vec<Sample>>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..cfg.concurrency).map(|w| s.spawn(move || worker(w))).collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("bench worker panicked"))
            .collect()
    });
    let mut samples = Vec::new();
    for r in per_worker {
        samples.extend(r?);
    }
    let end = samples.iter().map(|s| s.finished).max().unwrap_or(stop_at);
    let wall_s = end.saturating_duration_since(measure_from).as_secs_f64();
    let latencies: Vec<f64> = samples.iter().map(|s| s.latency_ms).collect();
    let timings: Vec<StageTiming> = samples.iter().filter_map(|s| s.timing).collect();
    Ok(BenchReport {
        si_qps: if wall_s > 0.0 { samples.len() as f64 / wall_s } else { 0.0 },
        concurrency: cfg.concurrency,
        queries: samples.len(),
        wall_s,
        latency: LatencyStats::from_samples(&latencies),
        stages: StageBreakdown::from_timings(&timings),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub vocab: VocabMode,
    pub voc_size: f64,
    /// Mean end-to-end generation latency per query.
    pub decode_ms: f64,
    /// Sequential throughput implied by `decode_ms`.
    pub si_qps: f64,
    pub stages: StageBreakdown,
}

/// Times `generate` for every question under each vocabulary setting,
/// with everything else in `base` held fixed. Each setting gets one
/// untimed pass, then `repeats` timed passes. Rows come back ordered by
/// mean vocabulary size.
pub fn sweep_vocab_latency(
    model: &DvErgModel,
    questions: &[(Vec<TokenId>, EmotionId)],
    settings: &[VocabMode],
    base: &GenerationConfig,
    repeats: usize,
) -> Result<Vec<SweepRow>> {
    if questions.is_empty() {
        return Err(BenchError::NoQuestions);
    }
    let mut rows = Vec::with_capacity(settings.len());
    for &vocab in settings {
        let cfg = GenerationConfig { vocab, ..*base };
        for (q, e) in questions {
            generate(model, q, *e, &cfg)?;
        }
        let (mut total_ms, mut sizes, mut timings) = (0.0, 0usize, Vec::new());
        for _ in 0..repeats.max(1) {
            for (q, e) in questions {
                let t = Instant::now();
                let g = generate(model, q, *e, &cfg)?;
                total_ms += t.elapsed().as_secs_f64() * 1e3;
                sizes += g.vocab.len();
                timings.push(g.timing);
            }
        }
        let n = timings.len() as f64;
        let decode_ms = total_ms / n;
        rows.push(SweepRow {
            vocab,
            voc_size: sizes as f64 / n,
            decode_ms,
            si_qps: 1e3 / decode_ms,
            stages: StageBreakdown::from_timings(&timings).unwrap_or_default(),
        });
    }
    rows.sort_by(|a, b| a.voc_size.total_cmp(&b.voc_size));
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("voc_size,decode_ms,si_qps\n");
    for r in rows {
        out.push_str(&format!("{:.2},{:.4},{:.2}\n", r.voc_size, r.decode_ms, r.si_qps));
    }
    out
}
