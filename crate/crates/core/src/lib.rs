//! Learning-based spectrum sensing and access.
//!
//! The crate simulates licensed-user spectrum occupancy driven by a
//! time-frequency Markov chain, estimates the chain from noisy, budgeted
//! sensing with Baum-Welch, computes sensing policies with a Monte-Carlo,
//! fragmented PERSEUS solver, and coordinates several cognitive radios through
//! neighbour discovery and ranked-ballot access ordering.
//!
//! Module map:
//!
//! | module | contents |
//! |---|---|
//! | [`occupancy`] | transition model, sampling, likelihood, BIC |
//! | [`channel`] | sensing observations, fading, outage, rate adaptation |
//! | [`estimator`] | forward-backward E-step, closed-form M-step, EM loop |
//! | [`belief`] | Bayes updates, prior propagation, access rule, rewards |
//! | [`solver`] | fragmentation and the point-based sensing-policy solver |
//! | [`multiagent`] | discovery, ballots, consensus, distributed episodes |
//! | [`scenario`] | configuration, end-to-end runs, metrics, CSV reports |

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod belief;
pub mod channel;
pub mod error;
pub mod estimator;
pub mod multiagent;
pub mod occupancy;
pub mod scenario;
pub mod solver;

pub use error::{Error, Result};

use rand::SeedableRng;

/// Random source used by every simulation path.
pub type SimRng = rand_chacha::ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

/// Derives an independent child seed from `base` and a stream tag.
///
/// SplitMix64 finaliser over the combined words; used to give every fragment,
/// agent and backup its own reproducible stream.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    let mut z = base ^ 0x9E37_79B9_7F4A_7C15;
    for &t in tags {
        z = z
            .wrapping_add(t.wrapping_mul(0xBF58_476D_1CE4_E5B9))
            .wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}
