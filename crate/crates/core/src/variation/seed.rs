/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for one independent variation call.
///
/// Stateless and platform independent, so a repeat's noise does not depend on
/// the order in which repeats or samples are scheduled.
pub fn derive_seed(experiment_seed: u64, sample_id: u64, repeat_index: u32) -> u64 {
    let h = mix64(experiment_seed);
    let h = mix64(h ^ sample_id.wrapping_mul(0xd6e8_feb8_6659_fd93));
    mix64(h ^ (repeat_index as u64).wrapping_mul(0xa076_1d64_78bd_642f) ^ 0x5151)
}

/// Seeds for repeats `0..n` of one sample.
pub fn repeat_seeds(experiment_seed: u64, sample_id: u64, n: usize) -> Vec<u64> {
    (0..n as u32)
        .map(|r| derive_seed(experiment_seed, sample_id, r))
        .collect()
}
