//! Named random streams.
//!
//! Every consumer of randomness draws from its own ChaCha8 stream derived from
//! the single run seed and a fixed stream name, so adding draws in one place
//! never shifts the numbers seen elsewhere.
//!
//! | name                    | consumer                               |
//! |-------------------------|----------------------------------------|
//! | `nn.init`               | weight initialization                  |
//! | `nn.shuffle`            | per-epoch minibatch order              |
//! | `nn.dropout`            | dropout masks                          |
//! | `sim.excitation.<run>`  | steering excitation during collection  |
//! | `sim.disturbance.<run>` | injected input disturbances            |

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const NN_INIT: &str = "nn.init";
pub const NN_SHUFFLE: &str = "nn.shuffle";
pub const NN_DROPOUT: &str = "nn.dropout";

pub fn excitation_stream(run: usize) -> String {
    format!("sim.excitation.{run}")
}

pub fn disturbance_stream(run: usize) -> String {
    format!("sim.disturbance.{run}")
}

/// 64-bit FNV-1a; stable across platforms and releases.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn stream(seed: u64, name: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(name.as_bytes()));
    rng
}

/// Stable hash used for parameter fingerprints in log metadata.
pub fn fingerprint(text: &str) -> u64 {
    fnv1a(text.as_bytes())
}
