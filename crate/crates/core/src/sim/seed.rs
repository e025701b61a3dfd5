/// SplitMix64 finalizer.
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for stream `(a, b)` under `master`; used as `h(master, scenario, replicate)`.
pub fn mix_seed(master: u64, a: u64, b: u64) -> u64 {
    splitmix(splitmix(splitmix(master) ^ a) ^ b)
}
