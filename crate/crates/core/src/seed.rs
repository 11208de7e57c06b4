//! Seed derivation. Every random stream in a run is keyed off the experiment
//! seed plus a fixed tuple of indices, so results never depend on the order in
//! which work is scheduled.

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `parts` into `base`, one splitmix round per part.
pub fn derive(base: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(splitmix64(base), |acc, &p| {
        splitmix64(acc ^ p.wrapping_mul(0xD6E8_FEB8_6659_FD93))
    })
}

// stream tags
pub(crate) const SAMPLE: u64 = 0x5a3d_0001;
pub(crate) const TRAIN: u64 = 0x5a3d_0002;
pub(crate) const INIT: u64 = 0x5a3d_0003;
