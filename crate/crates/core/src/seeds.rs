//! Deterministic derivation of per-stage RNG seeds from a single run seed.

/// Stage tags used when one user-facing seed drives several RNG streams.
pub mod stream {
    pub const DATA: u64 = 1;
    pub const BASE_TRAIN: u64 = 2;
    pub const MODEL_INIT: u64 = 3;
    pub const FINETUNE: u64 = 4;
    pub const HEAD_INIT: u64 = 5;
    pub const SHUFFLE: u64 = 6;
}

/// Mix a seed with a stream tag through splitmix64 so distinct stages get
/// decorrelated RNG streams while staying reproducible.
pub fn derive(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
