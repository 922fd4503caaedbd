//! Seed streams.
//!
//! Every random draw in a run comes from a generator keyed by the run seed, a
//! purpose tag and a tuple of indices, so that results do not depend on the
//! order in which samples are processed or on the thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is used for; distinct purposes never share draws.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Params = 1,
    TrainBatch = 2,
    Validation = 3,
    Test = 4,
    Messages = 5,
    Baseline = 6,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator for `(seed, purpose, indices)`.
pub fn stream(seed: u64, purpose: Purpose, indices: &[u64]) -> ChaCha8Rng {
    let mut h = splitmix(seed ^ splitmix(purpose as u64));
    for &i in indices {
        h = splitmix(h ^ splitmix(i.wrapping_add(0x1234_5678)));
    }
    ChaCha8Rng::seed_from_u64(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn same_key_same_draws() {
        let a: u64 = stream(7, Purpose::Test, &[1, 2]).random();
        let b: u64 = stream(7, Purpose::Test, &[1, 2]).random();
        assert_eq!(a, b);
    }

    #[test]
    fn keys_are_separated() {
        let base: u64 = stream(7, Purpose::Test, &[1, 2]).random();
        for other in [
            stream(8, Purpose::Test, &[1, 2]),
            stream(7, Purpose::Validation, &[1, 2]),
            stream(7, Purpose::Test, &[2, 1]),
            stream(7, Purpose::Test, &[1, 2, 0]),
        ] {
            let mut other = other;
            assert_ne!(base, other.random::<u64>());
        }
    }
}
