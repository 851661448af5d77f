//! Seeded two-class texture images.
//!
//! Class 0 (`blobs`) has one to three Gaussian bright spots; class 1
//! (`rings`) has a concentric ring texture. Both sit on a noisy background
//! whose brightness and illumination ramp vary per image, so global
//! intensity statistics do not separate the classes but local structure does.

use std::f32::consts::TAU;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

pub const CLASS_NAMES: [&str; 2] = ["blobs", "rings"];
pub const MIN_SIZE: usize = 16;
const NOISE_STD: f32 = 0.05;

/// `2 · n_per_class` RGB images of size `size×size`, labels alternating
/// 0, 1, 0, 1, ...; image `i` uses its own random stream.
pub fn generate_synthetic_dataset(n_per_class: usize, size: usize, seed: u64) -> Result<Dataset> {
    if n_per_class == 0 {
        return Err(Error::invalid("n_per_class must be at least 1"));
    }
    if size < MIN_SIZE {
        return Err(Error::invalid(format!("synthetic images need size >= {MIN_SIZE}, got {size}")));
    }
    let n = 2 * n_per_class;
    let mut pixels = Vec::with_capacity(n * size * size * 3);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % 2;
        let mut r = rng::derived(seed, i as u64);
        let gray = render(label, size, &mut r);
        pixels.extend(gray.iter().flat_map(|&v| [v; 3]));
        labels.push(label);
    }
    Dataset::new(
        Tensor::new(vec![n, size, size, 3], pixels)?,
        labels,
        CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
        vec![format!("synthetic:{seed}")],
    )
}

fn render(label: usize, s: usize, r: &mut impl Rng) -> Vec<f32> {
    let sf = s as f32;
    let base = r.random_range(0.15..0.55f32);
    let noise = Normal::new(0.0, NOISE_STD).expect("valid std");
    let coords = |p: usize| ((p % s) as f32 + 0.5, (p / s) as f32 + 0.5);
    // Linear illumination ramp in a random direction.
    let (angle, ramp) = (r.random_range(0.0..TAU), r.random_range(0.0..0.35f32));
    let (gx, gy) = (angle.cos() * ramp / sf, angle.sin() * ramp / sf);
    let mut img: Vec<f32> = (0..s * s)
        .map(|p| {
            let (x, y) = coords(p);
            base + gx * (x - sf / 2.0) + gy * (y - sf / 2.0) + noise.sample(r)
        })
        .collect();
    if label == 0 {
        for _ in 0..r.random_range(1..=3) {
            let (cx, cy) = (r.random_range(0.2..0.8) * sf, r.random_range(0.2..0.8) * sf);
            let sigma = r.random_range(0.05..0.09) * sf;
            let amp = r.random_range(0.3..0.5f32);
            for (p, v) in img.iter_mut().enumerate() {
                let (x, y) = coords(p);
                let d2 = (x - cx).powi(2) + (y - cy).powi(2);
                *v += amp * (-d2 / (2.0 * sigma * sigma)).exp();
            }
        }
    } else {
        let (cx, cy) = (r.random_range(0.3..0.7) * sf, r.random_range(0.3..0.7) * sf);
        let period = r.random_range(0.15..0.22) * sf;
        let phase = r.random_range(0.0..TAU);
        let extent = r.random_range(0.35..0.5) * sf;
        let amp = r.random_range(0.3..0.55f32);
        for (p, v) in img.iter_mut().enumerate() {
            let (x, y) = coords(p);
            let d = ((x - cx).powi(2) + (y - cy).powi(2)).sqrt();
            let envelope = (-(d / extent).powi(4)).exp();
            *v += amp * 0.5 * (1.0 + (TAU * d / period + phase).cos()) * envelope;
        }
    }
    img.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    img
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_in_range() {
        let a = generate_synthetic_dataset(5, 16, 3).unwrap();
        let b = generate_synthetic_dataset(5, 16, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_synthetic_dataset(5, 16, 4).unwrap());
        assert_eq!(a.images.shape(), &[10, 16, 16, 3]);
        assert!(a.images.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(a.class_counts(), vec![5, 5]);
    }

    #[test]
    fn rejects_degenerate_requests() {
        assert!(generate_synthetic_dataset(0, 32, 0).is_err());
        assert!(generate_synthetic_dataset(1, 15, 0).is_err());
    }
}
