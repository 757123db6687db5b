use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent, reproducible random stream for one purpose under one seed.
pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
