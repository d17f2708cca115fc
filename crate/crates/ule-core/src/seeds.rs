//! Seed derivation.  Every consumer of randomness (data shuffling, each
//! network's dropout, each sweep cell) gets its own stream derived from the
//! master seed, so adding draws to one consumer never perturbs another.

/// splitmix64 round: the standard 64-bit finaliser.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from a master seed and a path of stream indices.
pub fn derive(master: u64, path: &[u64]) -> u64 {
    let mut s = mix(master);
    for &p in path {
        s = mix(s ^ p.wrapping_mul(0xd6e8_feb8_6659_fd93));
    }
    s
}

/// Stream index for the batch shuffler.
pub const STREAM_DATA: u64 = 1;
/// Stream index for the student network's dropout.
pub const STREAM_STUDENT: u64 = 2;
/// Stream index for the teacher network's dropout (and the only network in
/// single-model training, which matches the teacher's draws by design).
pub const STREAM_TEACHER: u64 = 3;
/// Stream index for dataset synthesis.
pub const STREAM_SYNTH: u64 = 4;
/// Stream index for train/validation carving.
pub const STREAM_SPLIT: u64 = 5;
/// Stream index for sweep cells; combined with the cell index and repeat.
pub const STREAM_SWEEP: u64 = 6;
