use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub const DEFAULT_TEST_FRACTION: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitIndices {
    /// Sorted ascending.
    pub train: Vec<usize>,
    /// Sorted ascending.
    pub test: Vec<usize>,
    pub seed: u64,
    pub test_fraction: f64,
}

/// Test samples taken from a class of `n` items: `floor(fraction · n)`.
pub fn test_count(n: usize, fraction: f64) -> usize {
    // The slack keeps products like 0.2 · 1250 from rounding down to 249.
    ((fraction * n as f64) + 1e-9).floor() as usize
}

/// Per class, shuffles that class's indices with an independent seeded
/// stream and sends the first `floor(fraction · n_c)` to the test split.
pub fn stratified_split(labels: &[usize], num_classes: usize, test_fraction: f64, seed: u64) -> Result<SplitIndices> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid(format!("test fraction must be in (0, 1), got {test_fraction}")));
    }
    let mut by_class = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class.get_mut(l).ok_or_else(|| Error::invalid(format!("label {l} outside 0..{num_classes}")))?.push(i);
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (c, mut idx) in by_class.into_iter().enumerate() {
        if idx.is_empty() {
            return Err(Error::EmptyClass(c));
        }
        let mut r = rng::derived(seed, c as u64);
        rng::shuffle(&mut idx, &mut r);
        let k = test_count(idx.len(), test_fraction);
        test.extend_from_slice(&idx[..k]);
        train.extend_from_slice(&idx[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitIndices { train, test, seed, test_fraction })
}
