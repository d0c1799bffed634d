use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Counter-based generator used for every stochastic operation.
pub type Rng = ChaCha8Rng;

/// Independent stream `stream` of the generator seeded with `seed`.
pub fn seeded(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
