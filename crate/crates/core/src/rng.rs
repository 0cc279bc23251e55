//! Deterministic random streams.
//!
//! Every random draw in a run comes from a ChaCha stream whose seed is a
//! function of `(master seed, client, round, purpose)`. Two runs with the same
//! master seed therefore see the same randomness no matter how the client
//! loop is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// What a stream is used for. Distinct purposes never share randomness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Compressor = 1,
    Minibatch = 2,
    Participation = 3,
    Init = 4,
    Output = 5,
    Data = 6,
    Frame = 7,
    Check = 8,
}

/// Seed expansion: splitmix64 applied to a running state.
fn splitmix(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A stream keyed by the master seed and an ordered list of tags.
pub fn stream(master: u64, purpose: Purpose, tags: &[u64]) -> Stream {
    let mut state = master;
    let mut mix = splitmix(&mut state) ^ (purpose as u64).wrapping_mul(0xD6E8_FEB8_6659_FD93);
    for &t in tags {
        state ^= mix;
        mix = splitmix(&mut state) ^ t.wrapping_mul(0xA076_1D64_78BD_642F);
    }
    state ^= mix;
    let mut seed = [0u8; 32];
    for chunk in seed.chunks_mut(8) {
        chunk.copy_from_slice(&splitmix(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}

/// The randomness available to one round of an algorithm.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoundSeed {
    pub master: u64,
    pub round: u64,
}

impl RoundSeed {
    pub fn new(master: u64, round: u64) -> Self {
        RoundSeed { master, round }
    }

    pub fn client(&self, client: usize, purpose: Purpose) -> Stream {
        stream(self.master, purpose, &[client as u64, self.round])
    }
}
