//! Fixtures shared by the criterion benchmarks in `benches/`.

use mhca_core::Tensor;

/// Deterministic pseudo-random values in [-1, 1].
pub fn tensor(shape: &[usize], seed: u64) -> Tensor<f32> {
    let mut state = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
    Tensor::from_fn(shape, |_| {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 40) as f32 / (1u64 << 23) as f32 - 1.0
    })
}
