//! Deterministic RNG streams and the Gumbel draw used for edge sampling.
//!
//! Every randomized stage derives an independent ChaCha stream from a base
//! seed plus a structural index (sample, epoch, hypothesis). Work split across
//! threads therefore produces bytes identical to a serial run.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent stream `stream` of the generator seeded by `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Standard Gumbel(0, 1) sample via inverse CDF.
pub fn gumbel(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return -(-u.ln()).ln();
        }
    }
}

/// Row-major array of i.i.d. Gumbel(0, 1) draws; the draw order is part of
/// the reproducibility contract.
pub fn gumbel_array(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> ndarray::Array2<f64> {
    let mut out = ndarray::Array2::zeros((rows, cols));
    for r in 0..rows {
        for c in 0..cols {
            out[[r, c]] = gumbel(rng);
        }
    }
    out
}
