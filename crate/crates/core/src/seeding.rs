//! Independent RNG streams derived from one master seed.
//!
//! Each purpose (data generation, parameter init, training, sampling, start
//! assignments) hashes its label together with the master seed, so enabling
//! or disabling one consumer never shifts the numbers another one sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

pub fn derive_seed(master: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update((label.len() as u64).to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

pub fn rng_for(master: u64, label: &str) -> Rng {
    Rng::seed_from_u64(derive_seed(master, label))
}
