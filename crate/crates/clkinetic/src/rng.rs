//! Counter-based random streams.
//!
//! A stream is a ChaCha8 keystream whose key is built from `(seed, worker)` and
//! whose 64-bit stream selector is `stream`. Any two distinct triples give
//! statistically independent sequences, and the sequence a piece of work sees
//! depends only on its triple, never on which thread ran it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub type StreamRng = ChaCha8Rng;

/// Opens the stream identified by `(seed, worker, stream)`.
pub fn stream(seed: u64, worker: u64, stream: u64) -> StreamRng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&worker.to_le_bytes());
    key[16..24].copy_from_slice(&0x636c_6b69_6e65_7469u64.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(stream);
    rng
}

/// Splits `n` samples into fixed-size blocks, runs `f(block_rng, count)` on each
/// block in parallel and returns the per-block results in block order.
///
/// Block `b` always draws from `stream(seed, worker, b)`, so the returned vector
/// is identical for every thread count.
pub fn par_blocks<T, F>(seed: u64, worker: u64, n: usize, block: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut StreamRng, usize) -> T + Sync,
{
    par_blocks_indexed(seed, worker, n, block, |rng, _, count| f(rng, count))
}

/// Like [`par_blocks`], also passing the block index so callers can address
/// their own slice of per-item data.
pub fn par_blocks_indexed<T, F>(seed: u64, worker: u64, n: usize, block: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut StreamRng, usize, usize) -> T + Sync,
{
    let block = block.max(1);
    let n_blocks = n.div_ceil(block);
    (0..n_blocks)
        .into_par_iter()
        .map(|b| {
            let count = block.min(n - b * block);
            let mut rng = stream(seed, worker, b as u64);
            f(&mut rng, b, count)
        })
        .collect()
}
