use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent random stream for `(seed, domain, key)`. Streams for distinct
/// keys never overlap, so per-item randomness does not depend on the order in
/// which items are produced.
pub fn keyed_rng(seed: u64, domain: u64, key: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ domain.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(key);
    rng
}

pub(crate) mod domain {
    pub const SPEAKER: u64 = 1;
    pub const UTTERANCE: u64 = 2;
    pub const ENTRY: u64 = 3;
    pub const RIR: u64 = 4;
    pub const NOISE: u64 = 5;
    pub const INIT: u64 = 6;
    pub const SHUFFLE: u64 = 7;
    pub const RCPE: u64 = 8;
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: u64 = keyed_rng(7, 1, 3).random();
        let b: u64 = keyed_rng(7, 1, 3).random();
        let c: u64 = keyed_rng(7, 1, 4).random();
        let d: u64 = keyed_rng(7, 2, 3).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }
}
