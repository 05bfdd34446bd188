//! Fixtures shared by the retrieval benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use weavecache::{Embedding, MemoryBuffer, QueryRecord};

fn random_token(rng: &mut ChaCha8Rng, dim: usize) -> Embedding {
    Embedding::new((0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("finite")
}

/// `n` frames of `tokens` random tokens each, one frame per second.
pub fn random_memory(n: usize, tokens: usize, dim: usize, seed: u64) -> MemoryBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = MemoryBuffer::new(dim, 64).expect("valid dims");
    for i in 0..n {
        let toks = (0..tokens).map(|_| random_token(&mut rng, dim)).collect();
        m.append(i as f64, toks, None).expect("monotone timestamps");
    }
    m
}

pub fn random_query(tokens: usize, dim: usize, seed: u64) -> QueryRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    QueryRecord::new((0..tokens).map(|_| random_token(&mut rng, dim)).collect())
        .expect("non-empty query")
}
