//! Seed derivation for independent deterministic random streams. Every
//! consumer (weight init, shuffling, loss perturbation, per-epoch noise)
//! mixes the run seed with fixed stream tags so streams never collide or
//! correlate across uses.

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Collapse an ordered list of seed parts into one well-dispersed seed.
pub(crate) fn mix(parts: &[u64]) -> u64 {
    let mut h = 0u64;
    for &p in parts {
        h = splitmix64(h ^ splitmix64(p));
    }
    h
}

/// Stream tags for [`mix`]; distinct per consumer.
pub(crate) mod stream {
    pub const INIT: u64 = 0x494E_4954;
    pub const SHUFFLE: u64 = 0x5348_5546;
    pub const LOSS_NOISE: u64 = 0x4C4F_5353;
    pub const DATA_NOISE: u64 = 0x4E4F_4953;
    pub const EXPERIMENT: u64 = 0x4558_5052;
}
