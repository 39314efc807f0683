//! Seeded random streams. Every consumer gets its own ChaCha stream derived
//! from the run seed, so adding draws in one place never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    DataMeans = 0,
    DataLabeled = 1,
    DataUnlabeled = 2,
    DataTest = 3,
    ModelInit = 16,
    Training = 17,
    FineTune = 18,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}
