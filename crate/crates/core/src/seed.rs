//! Seed derivation. Every random quantity is drawn from a ChaCha8 stream
//! keyed by `(master, stream, index)`, so results never depend on the order
//! in which frames are generated or on the thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Independent random streams. Each propagation path between two entities
/// has its own stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u64)]
pub enum Stream {
    Fleet = 1,
    LegitToReceiver = 2,
    AttackerToReceiver = 3,
    AttackerToColluder = 4,
    TargetToColluder = 5,
    ClassifierInit = 6,
    ClassifierShuffle = 7,
    VaeInit = 8,
    VaeNoise = 9,
    Targets = 10,
    Check = 11,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, stream: Stream, index: u64) -> u64 {
    let a = splitmix64(master ^ 0x5246_4653_4200_0000);
    let b = splitmix64(a ^ (stream as u64).wrapping_mul(0xd6e8_feb8_6659_fd93));
    splitmix64(b ^ splitmix64(index))
}

/// Packs a `(group, item)` pair such as `(device, frame)` into one index.
pub fn pair_index(group: u64, item: u64) -> u64 {
    (group << 32) ^ item
}

pub fn rng_for(master: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, stream, index))
}
