//! Named random sub-streams derived from one master seed.
//!
//! Every concern (availability, data generation, local batching, policy
//! sampling) draws from its own stream, so swapping the selection policy
//! leaves the availability and data streams untouched.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    /// Per-client availability parameters (lognormal draws).
    AvailabilityParams,
    /// Per-round availability realizations.
    Availability,
    /// Dataset generation.
    Data,
    /// Mini-batch sampling inside local SGD.
    Batching,
    /// Randomized selection policies.
    Policy,
    /// Model initialization and miscellaneous test draws.
    Init,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::AvailabilityParams => 0x11,
            Stream::Availability => 0x22,
            Stream::Data => 0x33,
            Stream::Batching => 0x44,
            Stream::Policy => 0x55,
            Stream::Init => 0x66,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Source of the named sub-streams for one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedStreams {
    master: u64,
}

impl SeedStreams {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    pub fn stream(&self, which: Stream) -> StreamRng {
        self.keyed(which, &[])
    }

    /// A stream keyed by extra integers, e.g. `(round, client)` for the
    /// per-client batching stream.
    pub fn keyed(&self, which: Stream, keys: &[u64]) -> StreamRng {
        let mut h = splitmix64(self.master ^ splitmix64(which.tag()));
        for &k in keys {
            h = splitmix64(h ^ splitmix64(k.wrapping_add(0xA5A5_A5A5)));
        }
        ChaCha8Rng::seed_from_u64(h)
    }
}
