//! Seeded randomness.
//!
//! Every random draw in the toolkit comes from a ChaCha20 generator keyed by
//! the user seed. Independent consumers use distinct ChaCha stream ids, so
//! adding draws to one consumer never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub type Rng = ChaCha20Rng;

/// Named ChaCha stream ids.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    /// Weight initialisation.
    Init = 1,
    /// Per-epoch minibatch shuffling.
    Shuffle = 2,
    /// Patch subsampling in dataset preparation.
    Subsample = 3,
    /// Synthetic problems and images (demos, gradient checks).
    Synthetic = 4,
}

pub fn stream(seed: u64, stream: Stream) -> Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}
