pub mod geometry;
pub mod skeleton;
pub mod autodiff;
pub mod encoders;
pub mod motion_vae;
pub mod data;
pub mod metrics;

/// splitmix64 finalizer folded over three words; derives independent seeds
/// from `(seed, stream, index)`.
pub fn mix_seed(a: u64, b: u64, c: u64) -> u64 {
    let mut z = a;
    for w in [b, c] {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(w);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}
