//! Deterministic chunked random streams.
//!
//! Row-generating routines split their index range into fixed-size chunks,
//! each driven by its own ChaCha stream, so output is independent of the
//! number of worker threads.

use ndarray::{Array2, ArrayViewMut1, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub(crate) const CHUNK_ROWS: usize = 4096;

pub(crate) fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Fills an `n x d` matrix row by row, one random stream per chunk.
pub(crate) fn fill_rows<F>(n: usize, d: usize, seed: u64, fill: F) -> Array2<f64>
where
    F: Fn(&mut ChaCha8Rng, ArrayViewMut1<'_, f64>) + Sync,
{
    let mut out = Array2::<f64>::zeros((n, d));
    out.axis_chunks_iter_mut(Axis(0), CHUNK_ROWS)
        .into_par_iter()
        .enumerate()
        .for_each(|(chunk, mut block)| {
            let mut rng = stream(seed, chunk as u64);
            for row in block.rows_mut() {
                fill(&mut rng, row);
            }
        });
    out
}

/// SplitMix64 finaliser, used to hash floating-point state into seeds.
pub(crate) fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
