//! Gated answering: look at the local window first, recall only if needed.

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gate::{decide, Branch, GateDecision, DEFAULT_DELTA_NATS};
use crate::math::{cosine, softmax, Distribution, Embedding};
use crate::memory::{FrameRecord, Snapshot, DEFAULT_WINDOW_C};
use crate::retrieval::{c2f_load, QueryRecord, RetrievalResult, DEFAULT_K, DEFAULT_M_COARSE};

/// Schema version written into every exported trace.
pub const TRACE_VERSION: u32 = 1;

/// Anything that turns a context of frames plus a query into a distribution
/// over answer options. Must be deterministic.
pub trait Answerer: Sync {
    fn score(
        &self,
        context: &[Arc<FrameRecord>],
        q: &QueryRecord,
        options: &[Embedding],
    ) -> Result<Distribution>;
}

/// Stand-in answerer: option `a` gets logit `max_frame cos(pooled_key, option_a)`
/// and the distribution is `softmax(logits / tau)`.
///
/// It scores pooled keys by cosine, not by max-sim, so answering never reuses
/// the retrieval scorer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MockAnswerer {
    tau: f64,
}

impl MockAnswerer {
    pub fn new(tau: f64) -> Result<Self> {
        if !tau.is_finite() || tau <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "temperature must be positive and finite, got {tau}"
            )));
        }
        Ok(Self { tau })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }
}

impl Answerer for MockAnswerer {
    fn score(
        &self,
        context: &[Arc<FrameRecord>],
        _q: &QueryRecord,
        options: &[Embedding],
    ) -> Result<Distribution> {
        if context.is_empty() {
            return Err(Error::EmptyInput("answer context has no frames"));
        }
        if options.is_empty() {
            return Err(Error::EmptyInput("no answer options"));
        }
        let mut logits = Vec::with_capacity(options.len());
        for (a, option) in options.iter().enumerate() {
            if option.norm() == 0.0 {
                return Err(Error::ZeroNorm(format!("option {a} embedding")));
            }
            let mut best = f64::NEG_INFINITY;
            for frame in context {
                best = best.max(cosine(&frame.pooled_key, option)?);
            }
            logits.push(best);
        }
        softmax(&logits, self.tau)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Entropy threshold in nats; `0` always recalls, `+∞` never does.
    pub delta: f64,
    pub k: usize,
    pub m_coarse: usize,
    pub window_c: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            delta: DEFAULT_DELTA_NATS,
            k: DEFAULT_K,
            m_coarse: DEFAULT_M_COARSE,
            window_c: DEFAULT_WINDOW_C,
        }
    }
}

/// Everything that happened while answering one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerTrace {
    pub v: u32,
    pub local_dist: Distribution,
    pub gate: GateDecision,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retrieved: Option<RetrievalResult>,
    /// Frames the final answer was computed from, in chronological order.
    pub context_frame_ids: Vec<usize>,
    pub final_dist: Distribution,
    pub chosen_option: usize,
    pub sim_ops_total: u64,
    pub wall_ms: f64,
}

impl AnswerTrace {
    /// Equality on every field except the wall-clock timing.
    pub fn same_outcome(&self, other: &AnswerTrace) -> bool {
        AnswerTrace {
            wall_ms: 0.0,
            ..self.clone()
        } == AnswerTrace {
            wall_ms: 0.0,
            ..other.clone()
        }
    }

    pub fn recalled(&self) -> bool {
        self.gate.branch == Branch::Recall
    }
}

/// Answers `q` from the last `C` frames, then re-answers from recalled frames
/// plus the local window when the local answer's entropy reaches `delta`.
pub fn answer_query<A: Answerer + ?Sized>(
    view: &Snapshot,
    q: &QueryRecord,
    options: &[Embedding],
    cfg: &PipelineConfig,
    answerer: &A,
) -> Result<AnswerTrace> {
    let started = Instant::now();
    if view.is_empty() {
        return Err(Error::EmptyMemory);
    }
    if options.is_empty() {
        return Err(Error::EmptyInput("no answer options"));
    }
    if cfg.window_c == 0 {
        return Err(Error::InvalidParameter(
            "window C must be at least 1".into(),
        ));
    }

    let local = view.local_window(cfg.window_c);
    let local_dist = answerer.score(local, q, options)?;
    let gate = decide(&local_dist, cfg.delta)?;

    let (retrieved, context_frame_ids, final_dist) = match gate.branch {
        Branch::LocalAnswer => {
            let ids = local.iter().map(|f| f.frame_id).collect();
            (None, ids, local_dist.clone())
        }
        Branch::Recall => {
            let recalled = c2f_load(view, q, cfg.m_coarse, cfg.k)?;
            let mut ids: Vec<usize> = recalled
                .entries
                .iter()
                .map(|e| e.frame_id)
                .chain(local.iter().map(|f| f.frame_id))
                .collect();
            // Frame ids are append order, so sorting by id is chronological.
            ids.sort_unstable();
            ids.dedup();
            let context: Vec<Arc<FrameRecord>> = ids
                .iter()
                .map(|&id| Arc::clone(&view.frames()[id]))
                .collect();
            let dist = answerer.score(&context, q, options)?;
            (Some(recalled), ids, dist)
        }
    };

    let sim_ops_total = retrieved.as_ref().map_or(0, |r| r.sim_ops);
    Ok(AnswerTrace {
        v: TRACE_VERSION,
        chosen_option: final_dist.argmax(),
        local_dist,
        gate,
        retrieved,
        context_frame_ids,
        final_dist,
        sim_ops_total,
        wall_ms: started.elapsed().as_secs_f64() * 1e3,
    })
}
