use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator used for every stochastic choice in the crate.
pub type KgRng = ChaCha8Rng;

/// Independent purposes that draw from the same run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Step = 2,
    Eval = 3,
    Split = 4,
    Subsample = 5,
    Toy = 6,
}

/// A generator for `(seed, purpose, counter)`. Distinct counters give
/// independent streams, so per-step draws do not depend on how much
/// randomness earlier steps consumed.
pub fn stream_rng(seed: u64, purpose: Stream, counter: u64) -> KgRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((purpose as u64) << 56));
    rng.set_stream(counter);
    rng
}
