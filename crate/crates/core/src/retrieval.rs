//! Coarse pooled-cosine loading, max-sim late-interaction scoring, and their
//! coarse-to-fine composition.
//!
//! Every result carries `sim_ops`, the number of elementary dot products the
//! call performed. It is counted in the scoring loops, not derived, so it can
//! be checked against the closed-form cost:
//!
//! ```text
//! coarse  n
//! fine    Σᵢ N_q·Nᵢ               over all frames
//! c2f     n + Σᵢ N_q·Nᵢ           over the coarse candidates
//! ```

use std::cmp::Ordering;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{check_dim, dot_unchecked, mean_pool, Embedding};
use crate::memory::{FrameRecord, Snapshot};

/// Recalled-frame budget.
pub const DEFAULT_K: usize = 64;
/// Coarse candidate count, `4 · DEFAULT_K`.
pub const DEFAULT_M_COARSE: usize = 4 * DEFAULT_K;

/// Frame counts at or above this are scored on the rayon pool.
const PARALLEL_THRESHOLD: usize = 2048;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryRecord {
    pub token_keys: Vec<Embedding>,
    pub pooled_key: Embedding,
}

impl QueryRecord {
    pub fn new(token_keys: Vec<Embedding>) -> Result<Self> {
        let pooled_key = mean_pool(&token_keys)?;
        Ok(Self {
            token_keys,
            pooled_key,
        })
    }

    pub fn dim(&self) -> usize {
        self.pooled_key.dim()
    }

    pub fn n_tokens(&self) -> usize {
        self.token_keys.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Coarse,
    Fine,
    C2f,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredFrame {
    pub frame_id: usize,
    pub score: f64,
}

/// Ranked frames, best first; ties go to the smaller frame id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub entries: Vec<ScoredFrame>,
    pub stage: Stage,
    pub sim_ops: u64,
}

impl RetrievalResult {
    pub fn frame_ids(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.frame_id).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn rank_order(a: &ScoredFrame, b: &ScoredFrame) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.frame_id.cmp(&b.frame_id))
}

/// Keeps the best `k` entries in rank order without sorting the rest.
fn select_top(mut scored: Vec<ScoredFrame>, k: usize) -> Vec<ScoredFrame> {
    if k == 0 {
        return Vec::new();
    }
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, rank_order);
        scored.truncate(k);
    }
    scored.sort_unstable_by(rank_order);
    scored
}

fn positive(name: &str, value: usize) -> Result<()> {
    if value == 0 {
        Err(Error::InvalidParameter(format!(
            "{name} must be at least 1"
        )))
    } else {
        Ok(())
    }
}

/// Scores every frame, in parallel for long histories. Errors surface in
/// frame order so the reported offender is deterministic.
fn score_frames<F>(frames: &[Arc<FrameRecord>], score: F) -> Result<Vec<(f64, u64)>>
where
    F: Fn(&FrameRecord) -> Result<(f64, u64)> + Sync,
{
    let raw: Vec<Result<(f64, u64)>> = if frames.len() >= PARALLEL_THRESHOLD {
        frames.par_iter().map(|f| score(f)).collect()
    } else {
        frames.iter().map(|f| score(f)).collect()
    };
    raw.into_iter().collect()
}

fn max_sim_counted(frame: &FrameRecord, q: &QueryRecord) -> Result<(f64, u64)> {
    check_dim(q.dim(), frame.pooled_key.dim())?;
    let mut total = 0.0;
    let mut ops = 0u64;
    for qt in &q.token_keys {
        let mut best = f64::NEG_INFINITY;
        for ft in &frame.token_keys {
            let s = dot_unchecked(qt.as_slice(), ft.as_slice());
            ops += 1;
            if s > best {
                best = s;
            }
        }
        total += best;
    }
    // Canonicalise -0.0 so ranking never depends on the sign of zero.
    Ok((total + 0.0, ops))
}

/// `Σⱼ maxₖ ⟨query token j, frame token k⟩`, costing `N_q · Nᵢ` dot products.
pub fn max_sim(frame: &FrameRecord, q: &QueryRecord) -> Result<f64> {
    max_sim_counted(frame, q).map(|(s, _)| s)
}

/// Top-`m_coarse` frames by cosine between pooled frame key and pooled
/// query key.
pub fn coarse_load(view: &Snapshot, q: &QueryRecord, m_coarse: usize) -> Result<RetrievalResult> {
    positive("m_coarse", m_coarse)?;
    check_dim(view.dim(), q.dim())?;
    let q_norm = q.pooled_key.norm();
    if q_norm == 0.0 {
        return Err(Error::ZeroNorm("query pooled key".into()));
    }
    let q_key = q.pooled_key.as_slice();
    let scores = score_frames(view.frames(), |f| {
        let norm = f.pooled_key.norm();
        if norm == 0.0 {
            return Err(Error::ZeroNorm(format!(
                "pooled key of frame {}",
                f.frame_id
            )));
        }
        let cos = dot_unchecked(f.pooled_key.as_slice(), q_key) / (norm * q_norm);
        Ok((cos + 0.0, 1))
    })?;

    let sim_ops = scores.iter().map(|(_, ops)| ops).sum();
    let scored = scores
        .into_iter()
        .enumerate()
        .map(|(frame_id, (score, _))| ScoredFrame { frame_id, score })
        .collect();
    let result = RetrievalResult {
        entries: select_top(scored, m_coarse),
        stage: Stage::Coarse,
        sim_ops,
    };
    debug_assert_eq!(result.sim_ops, coarse_sim_ops(view));
    Ok(result)
}

/// Coarse contraction to `m_coarse` candidates, then the top `k` of those by
/// [`max_sim`]. Coarse scores are discarded.
pub fn c2f_load(
    view: &Snapshot,
    q: &QueryRecord,
    m_coarse: usize,
    k: usize,
) -> Result<RetrievalResult> {
    positive("k", k)?;
    let coarse = coarse_load(view, q, m_coarse)?;
    let mut sim_ops = coarse.sim_ops;
    let mut scored = Vec::with_capacity(coarse.entries.len());
    for entry in &coarse.entries {
        let frame = &view.frames()[entry.frame_id];
        let (score, ops) = max_sim_counted(frame, q)?;
        sim_ops += ops;
        scored.push(ScoredFrame {
            frame_id: entry.frame_id,
            score,
        });
    }
    let result = RetrievalResult {
        entries: select_top(scored, k),
        stage: Stage::C2f,
        sim_ops,
    };
    debug_assert_eq!(result.sim_ops, c2f_sim_ops(view, q, &coarse.frame_ids()));
    Ok(result)
}

/// Exhaustive max-sim over every frame followed by a full sort. This is the
/// reference that [`c2f_load`] must match when the coarse pass keeps
/// everything.
pub fn fine_oracle(view: &Snapshot, q: &QueryRecord, k: usize) -> Result<RetrievalResult> {
    positive("k", k)?;
    let mut sim_ops = 0u64;
    let mut all = Vec::with_capacity(view.len());
    for frame in view.frames() {
        let (score, ops) = max_sim_counted(frame, q)?;
        sim_ops += ops;
        all.push(ScoredFrame {
            frame_id: frame.frame_id,
            score,
        });
    }
    all.sort_by(|a, b| match b.score.partial_cmp(&a.score) {
        Some(Ordering::Equal) | None => a.frame_id.cmp(&b.frame_id),
        Some(o) => o,
    });
    all.truncate(k);
    let result = RetrievalResult {
        entries: all,
        stage: Stage::Fine,
        sim_ops,
    };
    debug_assert_eq!(result.sim_ops, fine_sim_ops(view, q));
    Ok(result)
}

/// Closed-form cost of [`coarse_load`]: one pooled comparison per frame.
pub fn coarse_sim_ops(view: &Snapshot) -> u64 {
    view.len() as u64
}

/// Closed-form cost of [`fine_oracle`]: `Σᵢ N_q · Nᵢ` over every frame.
pub fn fine_sim_ops(view: &Snapshot, q: &QueryRecord) -> u64 {
    view.frames()
        .iter()
        .map(|f| (q.n_tokens() * f.n_tokens()) as u64)
        .sum()
}

/// Closed-form cost of [`c2f_load`]: `n + Σ N_q · Nᵢ` over the coarse
/// candidates.
pub fn c2f_sim_ops(view: &Snapshot, q: &QueryRecord, candidates: &[usize]) -> u64 {
    coarse_sim_ops(view)
        + candidates
            .iter()
            .map(|&id| (q.n_tokens() * view.frames()[id].n_tokens()) as u64)
            .sum::<u64>()
}
