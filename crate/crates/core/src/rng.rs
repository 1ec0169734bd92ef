//! Seed derivation for independent random streams.

/// One splitmix64 step.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for sub-stream `stream` of `master`. Distinct streams of the same
/// master give unrelated seeds, and the value depends on nothing else.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(master) ^ stream.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

/// Named sub-streams used throughout the toolkit.
pub mod stream {
    pub const CLOUD: u64 = 1;
    pub const AMPLITUDE: u64 = 2;
    pub const NOISE: u64 = 3;
    pub const IMAGE: u64 = 4;
    pub const INIT: u64 = 5;
    /// Per-pair offset; pair `k` uses streams `PAIR_BASE * (k + 1) + s`.
    pub const PAIR_BASE: u64 = 1 << 16;
}
