//! Streaming frame memory with entropy-gated, coarse-to-fine recall.
//!
//! Frames arrive as sets of token key vectors and are appended to an
//! append-only [`MemoryBuffer`]. A query is first answered from the most
//! recent window of frames; when the answer distribution is too uncertain
//! (entropy at or above a threshold) the engine recalls history with a
//! cheap pooled-cosine pass followed by max-sim late-interaction reranking.
//!
//! The crate also ships the order-reconstruction data transform used to
//! teach temporal order ([`sope`]) and a planted-relevance simulator
//! ([`simulator`]) that measures the accuracy/cost trade-off of the gate.

pub mod error;
pub mod gate;
pub mod math;
pub mod memory;
pub mod pipeline;
pub mod retrieval;
pub mod simulator;
pub mod sope;

pub use error::{Error, Result};
pub use gate::{decide, Branch, GateDecision, DEFAULT_DELTA_NATS};
pub use math::{cosine, dot, entropy, mean_pool, softmax, Distribution, Embedding};
pub use memory::{FrameRecord, MemoryBuffer, Snapshot, StreamFrame, DEFAULT_WINDOW_C};
pub use pipeline::{answer_query, AnswerTrace, Answerer, MockAnswerer, PipelineConfig};
pub use retrieval::{
    c2f_load, coarse_load, fine_oracle, max_sim, QueryRecord, RetrievalResult, Stage, DEFAULT_K,
    DEFAULT_M_COARSE,
};
pub use simulator::{
    generate_stream, run_episode, sweep_threshold, EpisodeConfig, EpisodeMetrics, GeneratedStream,
    Policy, QueryHorizon, StreamConfig,
};
