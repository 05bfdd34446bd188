//! Planted-relevance stream generator, policy runner, and threshold sweep.
//!
//! Frames are grouped into contiguous event blocks; every token of an event
//! frame is the event's unit centroid plus isotropic Gaussian noise. Events
//! recur, so the ground-truth relevant set of a query is every frame of its
//! event observed up to the query. Answer options are event centroids.
//!
//! Queries come in two horizons relative to the local window `C`:
//!
//! * `past`: the answer event occurred before the window and is absent from
//!   it. The local answer is a guess; recall is needed.
//! * `current`: the answer event is the one on screen. A share of the query
//!   tokens (`ambiguity`) is drawn near a distractor option seen earlier in
//!   the stream, so recalling history drags that distractor into context.
//!
//! Distractor options are always events absent from the local window.

use std::collections::BTreeSet;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gate::Branch;
use crate::math::Embedding;
use crate::memory::{read_stream_jsonl, write_stream_jsonl, MemoryBuffer, StreamFrame};
use crate::pipeline::{answer_query, AnswerTrace, MockAnswerer, PipelineConfig};
use crate::retrieval::QueryRecord;
use crate::sope::{read_jsonl, write_jsonl};

/// Placement attempts per query before generation gives up.
const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryHorizon {
    Current,
    Past,
    Mixed,
}

impl FromStr for QueryHorizon {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "current" => Ok(Self::Current),
            "past" => Ok(Self::Past),
            "mixed" => Ok(Self::Mixed),
            other => Err(Error::Config(format!(
                "unknown horizon {other:?} (expected current, past or mixed)"
            ))),
        }
    }
}

/// Horizon of one generated query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Horizon {
    Current,
    Past,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StreamConfig {
    pub n_frames: usize,
    pub dim: usize,
    pub tokens_per_frame: usize,
    pub n_events: usize,
    pub noise_sigma: f64,
    pub n_queries: usize,
    pub query_horizon: QueryHorizon,
    pub seed: u64,
    pub query_tokens: usize,
    pub n_options: usize,
    /// Frames per second; frame `i` is stamped `i / fps`.
    pub fps: f64,
    /// Local window used to decide which events count as "current".
    pub window_c: usize,
    pub block_min: usize,
    pub block_max: usize,
    /// Share of a current query's tokens drawn near a past distractor.
    pub ambiguity: f64,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            n_frames: 500,
            dim: 32,
            tokens_per_frame: 8,
            n_events: 8,
            noise_sigma: 0.1,
            n_queries: 100,
            query_horizon: QueryHorizon::Mixed,
            seed: 0,
            query_tokens: 4,
            n_options: 4,
            fps: 1.0,
            window_c: 64,
            block_min: 30,
            block_max: 70,
            ambiguity: 0.5,
        }
    }
}

impl StreamConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.n_frames == 0 {
            return fail("n_frames must be at least 1".into());
        }
        if self.dim < 2 {
            return fail(format!("dim must be at least 2, got {}", self.dim));
        }
        if self.tokens_per_frame == 0 || self.query_tokens == 0 {
            return fail("tokens_per_frame and query_tokens must be at least 1".into());
        }
        if self.n_events == 0 || self.n_events > self.n_frames {
            return fail(format!(
                "n_events must be in 1..=n_frames ({}), got {}",
                self.n_frames, self.n_events
            ));
        }
        if self.n_options == 0 || self.n_options > self.n_events {
            return fail(format!(
                "n_options must be in 1..=n_events ({}), got {}",
                self.n_events, self.n_options
            ));
        }
        if !self.noise_sigma.is_finite() || self.noise_sigma < 0.0 {
            return fail(format!(
                "noise_sigma must be >= 0, got {}",
                self.noise_sigma
            ));
        }
        if !self.fps.is_finite() || self.fps <= 0.0 {
            return fail(format!("fps must be > 0, got {}", self.fps));
        }
        if self.window_c == 0 {
            return fail("window_c must be at least 1".into());
        }
        if self.block_min == 0 || self.block_min > self.block_max {
            return fail(format!(
                "block lengths need 1 <= block_min <= block_max, got {}..{}",
                self.block_min, self.block_max
            ));
        }
        if !(0.0..=1.0).contains(&self.ambiguity) {
            return fail(format!(
                "ambiguity must be in [0, 1], got {}",
                self.ambiguity
            ));
        }
        Ok(())
    }
}

/// One line of `queries.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuerySpec {
    /// The query is issued right after this frame arrives.
    pub at_frame: usize,
    pub t: f64,
    pub horizon: Horizon,
    pub tokens: Vec<Vec<f64>>,
    pub options: Vec<Vec<f64>>,
    pub correct: usize,
    /// Frames of the answer event observed up to `at_frame`.
    pub relevant: Vec<usize>,
}

impl QuerySpec {
    pub fn record(&self) -> Result<QueryRecord> {
        QueryRecord::new(
            self.tokens
                .iter()
                .map(|t| Embedding::new(t.clone()))
                .collect::<Result<_>>()?,
        )
    }

    pub fn option_embeddings(&self) -> Result<Vec<Embedding>> {
        self.options
            .iter()
            .map(|o| Embedding::new(o.clone()))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedStream {
    pub frames: Vec<StreamFrame>,
    /// Sorted by `at_frame`.
    pub queries: Vec<QuerySpec>,
}

impl GeneratedStream {
    pub fn dim(&self) -> Option<usize> {
        self.frames.first().and_then(StreamFrame::dim)
    }

    pub fn write_jsonl<W1: Write, W2: Write>(&self, frames: W1, queries: W2) -> Result<()> {
        write_stream_jsonl(frames, &self.frames)?;
        write_jsonl(queries, &self.queries)
    }

    pub fn read_jsonl<R1: BufRead, R2: BufRead>(frames: R1, queries: R2) -> Result<Self> {
        let frames = read_stream_jsonl(frames)?;
        let mut queries: Vec<QuerySpec> = read_jsonl(queries)?;
        for (i, q) in queries.iter().enumerate() {
            if q.at_frame >= frames.len() {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!(
                        "query issued at frame {} but stream has {} frames",
                        q.at_frame,
                        frames.len()
                    ),
                });
            }
            if q.correct >= q.options.len() {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("correct option {} out of range", q.correct),
                });
            }
        }
        queries.sort_by_key(|q| q.at_frame);
        Ok(Self { frames, queries })
    }
}

fn unit_centroids(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(n);
    while out.len() < n {
        let mut v: Vec<f64> = (0..dim).map(|_| normal.sample(rng)).collect();
        // Gram-Schmidt while there is room, so events are orthonormal when n <= dim.
        if out.len() < dim {
            for u in &out {
                let proj: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                for (x, y) in v.iter_mut().zip(u) {
                    *x -= proj * y;
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            out.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    out
}

fn noisy(rng: &mut ChaCha8Rng, noise: &Normal<f64>, centroid: &[f64], sigma: f64) -> Vec<f64> {
    centroid
        .iter()
        .map(|c| {
            if sigma > 0.0 {
                c + noise.sample(rng)
            } else {
                *c
            }
        })
        .collect()
}

fn event_label(e: usize) -> String {
    format!("event-{e}")
}

/// Builds a reproducible planted-relevance stream and its queries.
pub fn generate_stream(cfg: &StreamConfig) -> Result<GeneratedStream> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.noise_sigma.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::Config(e.to_string()))?;
    let centroids = unit_centroids(&mut rng, cfg.n_events, cfg.dim);

    let mut frame_event = Vec::with_capacity(cfg.n_frames);
    let mut previous: Option<usize> = None;
    while frame_event.len() < cfg.n_frames {
        let len = rng.gen_range(cfg.block_min..=cfg.block_max);
        let event = loop {
            let e = rng.gen_range(0..cfg.n_events);
            if cfg.n_events == 1 || Some(e) != previous {
                break e;
            }
        };
        previous = Some(event);
        let remaining = cfg.n_frames - frame_event.len();
        frame_event.extend(std::iter::repeat_n(event, len.min(remaining)));
    }

    let frames: Vec<StreamFrame> = frame_event
        .iter()
        .enumerate()
        .map(|(i, &e)| StreamFrame {
            t: i as f64 / cfg.fps,
            tokens: (0..cfg.tokens_per_frame)
                .map(|_| noisy(&mut rng, &noise, &centroids[e], cfg.noise_sigma))
                .collect(),
            label: Some(event_label(e)),
        })
        .collect();

    let mut horizons: Vec<Horizon> = match cfg.query_horizon {
        QueryHorizon::Current => vec![Horizon::Current; cfg.n_queries],
        QueryHorizon::Past => vec![Horizon::Past; cfg.n_queries],
        QueryHorizon::Mixed => {
            let current = cfg.n_queries / 2;
            let mut h = vec![Horizon::Current; current];
            h.extend(std::iter::repeat_n(Horizon::Past, cfg.n_queries - current));
            h
        }
    };
    horizons.shuffle(&mut rng);

    let mut queries = Vec::with_capacity(cfg.n_queries);
    for horizon in horizons {
        queries.push(place_query(
            cfg,
            &mut rng,
            &noise,
            &centroids,
            &frame_event,
            horizon,
        )?);
    }
    queries.sort_by_key(|q| q.at_frame);
    Ok(GeneratedStream { frames, queries })
}

fn place_query(
    cfg: &StreamConfig,
    rng: &mut ChaCha8Rng,
    noise: &Normal<f64>,
    centroids: &[Vec<f64>],
    frame_event: &[usize],
    horizon: Horizon,
) -> Result<QuerySpec> {
    let n = frame_event.len();
    for _ in 0..MAX_PLACEMENT_ATTEMPTS {
        let at = rng.gen_range(0..n);
        let window_start = (at + 1).saturating_sub(cfg.window_c);
        let in_window: BTreeSet<usize> = frame_event[window_start..=at].iter().copied().collect();
        let seen_before_window: BTreeSet<usize> =
            frame_event[..window_start].iter().copied().collect();

        let correct_event = match horizon {
            Horizon::Current => frame_event[at],
            Horizon::Past => {
                let candidates: Vec<usize> = seen_before_window
                    .iter()
                    .copied()
                    .filter(|e| !in_window.contains(e))
                    .collect();
                match candidates.choose(rng) {
                    Some(&e) => e,
                    None => continue,
                }
            }
        };
        let mut pool: Vec<usize> = (0..cfg.n_events)
            .filter(|e| *e != correct_event && !in_window.contains(e))
            .collect();
        if pool.len() < cfg.n_options - 1 {
            continue;
        }
        pool.shuffle(rng);
        let distractors = &pool[..cfg.n_options - 1];

        let confuser = match horizon {
            Horizon::Current if cfg.ambiguity > 0.0 => distractors
                .iter()
                .copied()
                .find(|e| seen_before_window.contains(e)),
            _ => None,
        };
        let n_confused = confuser.map_or(0, |_| {
            ((cfg.ambiguity * cfg.query_tokens as f64).round() as usize).min(cfg.query_tokens)
        });
        let tokens = (0..cfg.query_tokens)
            .map(|j| {
                let e = match confuser {
                    Some(c) if j < n_confused => c,
                    _ => correct_event,
                };
                noisy(rng, noise, &centroids[e], cfg.noise_sigma)
            })
            .collect();

        let mut option_events: Vec<usize> = std::iter::once(correct_event)
            .chain(distractors.iter().copied())
            .collect();
        option_events.shuffle(rng);
        let correct = option_events
            .iter()
            .position(|&e| e == correct_event)
            .expect("correct event is an option");

        return Ok(QuerySpec {
            at_frame: at,
            t: at as f64 / cfg.fps,
            horizon,
            tokens,
            options: option_events
                .iter()
                .map(|&e| centroids[e].clone())
                .collect(),
            correct,
            relevant: (0..=at)
                .filter(|&i| frame_event[i] == correct_event)
                .collect(),
        });
    }
    Err(Error::Config(format!(
        "could not place a {horizon:?} query: need at least {} events outside a {}-frame window",
        cfg.n_options, cfg.window_c
    )))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Policy {
    LocalOnly,
    AlwaysRecall,
    Gated(f64),
}

impl Policy {
    /// `local_only` is the `+∞` threshold and `always_recall` is `0`.
    pub fn delta(&self) -> f64 {
        match self {
            Policy::LocalOnly => f64::INFINITY,
            Policy::AlwaysRecall => 0.0,
            Policy::Gated(d) => *d,
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Policy::LocalOnly => write!(f, "local_only"),
            Policy::AlwaysRecall => write!(f, "always_recall"),
            Policy::Gated(d) => write!(f, "gated({d})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub pipeline: PipelineConfig,
    pub tau: f64,
}

/// Answerer temperature when none is configured.
pub const DEFAULT_TAU: f64 = 0.1;

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            pipeline: PipelineConfig::default(),
            tau: DEFAULT_TAU,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    /// Mean over queries that recalled; 0 when none did.
    pub recall_at_k: f64,
    pub answer_accuracy: f64,
    pub mean_sim_ops: f64,
    pub recall_trigger_rate: f64,
    pub mean_wall_ms: f64,
}

impl EpisodeMetrics {
    /// Equality on every deterministic field.
    pub fn same_outcome(&self, other: &EpisodeMetrics) -> bool {
        self.recall_at_k == other.recall_at_k
            && self.answer_accuracy == other.answer_accuracy
            && self.mean_sim_ops == other.mean_sim_ops
            && self.recall_trigger_rate == other.recall_trigger_rate
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryOutcome {
    pub query_index: usize,
    pub at_frame: usize,
    pub horizon: Horizon,
    pub correct: bool,
    pub trace: AnswerTrace,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeReport {
    pub metrics: EpisodeMetrics,
    pub outcomes: Vec<QueryOutcome>,
}

impl EpisodeReport {
    pub fn accuracy_on(&self, horizon: Horizon) -> Option<f64> {
        let picked: Vec<_> = self
            .outcomes
            .iter()
            .filter(|o| o.horizon == horizon)
            .collect();
        if picked.is_empty() {
            return None;
        }
        Some(picked.iter().filter(|o| o.correct).count() as f64 / picked.len() as f64)
    }

    /// True when no trace touches a frame appended after its query.
    pub fn is_causal(&self) -> bool {
        self.outcomes.iter().all(|o| {
            o.trace.context_frame_ids.iter().all(|&id| id <= o.at_frame)
                && o.trace
                    .retrieved
                    .as_ref()
                    .is_none_or(|r| r.entries.iter().all(|e| e.frame_id <= o.at_frame))
        })
    }
}

/// `|retrieved ∩ relevant| / min(|relevant|, k)`.
pub fn recall_at_k(retrieved: &[usize], relevant: &[usize], k: usize) -> f64 {
    let denom = relevant.len().min(k);
    if denom == 0 {
        return 0.0;
    }
    let relevant: BTreeSet<usize> = relevant.iter().copied().collect();
    let hits = retrieved.iter().filter(|id| relevant.contains(id)).count();
    hits as f64 / denom as f64
}

/// Replays the stream frame by frame and answers each query as soon as its
/// issuing frame has been appended.
pub fn run_episode(
    stream: &GeneratedStream,
    policy: Policy,
    cfg: &EpisodeConfig,
) -> Result<EpisodeReport> {
    let dim = stream
        .dim()
        .ok_or(Error::EmptyInput("stream has no frames"))?;
    let pipeline = PipelineConfig {
        delta: policy.delta(),
        ..cfg.pipeline
    };
    let answerer = MockAnswerer::new(cfg.tau)?;
    let mut memory = MemoryBuffer::new(dim, pipeline.window_c)?;

    let mut order: Vec<usize> = (0..stream.queries.len()).collect();
    order.sort_by_key(|&i| (stream.queries[i].at_frame, i));
    let mut pending = order.into_iter().peekable();
    let mut outcomes = Vec::with_capacity(stream.queries.len());

    for (frame_id, frame) in stream.frames.iter().enumerate() {
        memory.append(frame.t, frame.embeddings()?, frame.label.clone())?;
        while let Some(&qi) = pending.peek() {
            let spec = &stream.queries[qi];
            if spec.at_frame != frame_id {
                break;
            }
            pending.next();
            let trace = answer_query(
                &memory.snapshot(),
                &spec.record()?,
                &spec.option_embeddings()?,
                &pipeline,
                &answerer,
            )?;
            outcomes.push(QueryOutcome {
                query_index: qi,
                at_frame: spec.at_frame,
                horizon: spec.horizon,
                correct: trace.chosen_option == spec.correct,
                trace,
            });
        }
    }
    if let Some(qi) = pending.next() {
        return Err(Error::InvalidParameter(format!(
            "query {qi} is issued at frame {} beyond the stream",
            stream.queries[qi].at_frame
        )));
    }

    let metrics = aggregate(stream, &outcomes, pipeline.k);
    Ok(EpisodeReport { metrics, outcomes })
}

fn aggregate(stream: &GeneratedStream, outcomes: &[QueryOutcome], k: usize) -> EpisodeMetrics {
    let n = outcomes.len();
    if n == 0 {
        return EpisodeMetrics {
            recall_at_k: 0.0,
            answer_accuracy: 0.0,
            mean_sim_ops: 0.0,
            recall_trigger_rate: 0.0,
            mean_wall_ms: 0.0,
        };
    }
    let mut correct = 0usize;
    let mut recalled = 0usize;
    let mut recall_sum = 0.0;
    let mut sim_ops = 0u64;
    let mut wall = 0.0;
    for o in outcomes {
        correct += o.correct as usize;
        sim_ops += o.trace.sim_ops_total;
        wall += o.trace.wall_ms;
        if o.trace.gate.branch == Branch::Recall {
            recalled += 1;
            if let Some(r) = &o.trace.retrieved {
                recall_sum +=
                    recall_at_k(&r.frame_ids(), &stream.queries[o.query_index].relevant, k);
            }
        }
    }
    EpisodeMetrics {
        recall_at_k: if recalled == 0 {
            0.0
        } else {
            recall_sum / recalled as f64
        },
        answer_accuracy: correct as f64 / n as f64,
        mean_sim_ops: sim_ops as f64 / n as f64,
        recall_trigger_rate: recalled as f64 / n as f64,
        mean_wall_ms: wall / n as f64,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub delta: f64,
    pub metrics: EpisodeMetrics,
}

/// One episode per threshold on the same stream. Episodes run in parallel;
/// rows come back in input order.
pub fn sweep_threshold(
    stream: &GeneratedStream,
    deltas: &[f64],
    cfg: &EpisodeConfig,
) -> Result<Vec<SweepRow>> {
    if deltas.is_empty() {
        return Err(Error::InvalidParameter("no thresholds to sweep".into()));
    }
    deltas
        .par_iter()
        .map(|&delta| {
            run_episode(stream, Policy::Gated(delta), cfg).map(|r| SweepRow {
                delta,
                metrics: r.metrics,
            })
        })
        .collect()
}

/// Drops repeated thresholds, keeping first occurrences. Returns the kept
/// list and the dropped duplicates.
pub fn dedup_deltas(deltas: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut kept: Vec<f64> = Vec::with_capacity(deltas.len());
    let mut dropped = Vec::new();
    for &d in deltas {
        if kept.iter().any(|k| k.to_bits() == d.to_bits()) {
            dropped.push(d);
        } else {
            kept.push(d);
        }
    }
    (kept, dropped)
}

pub const CSV_HEADER: &str =
    "delta,recall_at_k,answer_accuracy,mean_sim_ops,recall_trigger_rate,mean_wall_ms";

fn fmt_delta(d: f64) -> String {
    if d.is_infinite() {
        "inf".into()
    } else {
        d.to_string()
    }
}

pub fn csv_row(delta: f64, m: &EpisodeMetrics) -> String {
    format!(
        "{},{},{},{},{},{:.4}",
        fmt_delta(delta),
        m.recall_at_k,
        m.answer_accuracy,
        m.mean_sim_ops,
        m.recall_trigger_rate,
        m.mean_wall_ms
    )
}

pub fn write_sweep_csv<W: Write>(mut w: W, rows: &[SweepRow]) -> Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(w, "{}", csv_row(r.delta, &r.metrics))?;
    }
    Ok(())
}
