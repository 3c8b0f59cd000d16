use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Seeded random stream. ChaCha output is specified bit-for-bit, so a seed
/// reproduces the same draws on every platform.
///
/// Streams are single-owner; concurrent tasks each take their own stream
/// through [`RngStream::substream`].
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    inner: ChaCha8Rng,
}

pub const RNG_ALGORITHM: &str = "chacha8";

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn algorithm(&self) -> &'static str {
        RNG_ALGORITHM
    }

    /// Independent stream keyed by `(seed, id)`. Does not advance `self`.
    pub fn substream(&self, id: u64) -> RngStream {
        RngStream::new(splitmix64(self.seed ^ splitmix64(id.wrapping_add(1))))
    }

    /// Uniform draw on [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}
