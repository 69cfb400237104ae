//! Deterministic seed derivation.
//!
//! Every source of randomness in the crate is keyed by `(master, stream)`:
//! one master seed from the caller, one fixed stream id per purpose. Streams
//! are decorrelated with a splitmix64 finalizer so that neighbouring ids do
//! not produce correlated generators.

use rand_chacha::ChaCha12Rng;
use rand::SeedableRng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent seed for a given purpose from a master seed.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    splitmix64(master ^ splitmix64(stream))
}

/// ChaCha generator for a derived seed. Counter-based, identical on every
/// platform, unaffected by how many values other generators have consumed.
pub fn rng_for(master: u64, stream: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(derive_seed(master, stream))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derive_is_deterministic() {
        assert_eq!(derive_seed(42, 1), derive_seed(42, 1));
        assert_ne!(derive_seed(42, 1), derive_seed(42, 2));
        assert_ne!(derive_seed(42, 1), derive_seed(43, 1));
    }

    #[test]
    fn neighbouring_streams_decorrelate() {
        // Low bits must not be shared between adjacent stream ids.
        let a = derive_seed(0, 0);
        let b = derive_seed(0, 1);
        assert_ne!(a & 0xFFFF, b & 0xFFFF);
    }
}
