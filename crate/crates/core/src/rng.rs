//! Deterministic random-number plumbing.
//!
//! Every stochastic routine in this crate draws from ChaCha8. The run seed
//! selects the key and the epoch index selects the stream, so the draws of one
//! epoch never depend on how many draws earlier epochs consumed. Two runs with
//! the same seed see identical delay realizations even when their policies
//! differ, which is what makes paired policy comparisons tight.
//!
//! Stream layout within one seed:
//!
//! * stream 0: the warm-up phase before the first successful delivery,
//! * stream `k` for `k >= 1`: renewal epoch `k`,
//! * stream `u64::MAX`: auxiliary initialization draws (randomized starting
//!   points and similar one-off needs).

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Stream index reserved for one-off initialization draws.
pub const INIT_STREAM: u64 = u64::MAX;

/// Generator for one epoch's randomness under the given run seed.
pub fn epoch_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One uniform draw from the open interval (0, 1).
///
/// Consumes exactly one 64-bit word and maps its top 53 bits to interval
/// midpoints, so neither endpoint is reachable and quantile transforms stay
/// finite. Callers that need a fixed draw count per event rely on the
/// one-word guarantee.
pub fn unit_open(rng: &mut impl RngCore) -> f64 {
    let bits = rng.next_u64() >> 11;
    (bits as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Generator whose words are the bitwise complement of the wrapped one.
///
/// Through [`unit_open`] the complemented word yields `1 - u` where `u` is
/// the wrapped generator's draw, up to one part in 2^53 of rounding, because
/// the 53-bit midpoint lattice is symmetric about one half. Running the same
/// stream plain and mirrored gives an antithetic pair: both sides follow the
/// channel law, and their smooth functionals are negatively correlated, which
/// tightens Monte-Carlo means without touching the estimator.
pub struct Mirrored<R>(pub R);

impl<R: RngCore> RngCore for Mirrored<R> {
    fn next_u32(&mut self) -> u32 {
        !self.0.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        !self.0.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.0.fill_bytes(dest);
        for b in dest {
            *b = !*b;
        }
    }
}
