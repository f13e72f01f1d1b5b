//! Shared fixtures for the benchmark suite. The measurable work all lives in
//! `domino-core`; this crate only wires it into Criterion harnesses.

use domino_core::*;

/// One default-family phantom sample, deterministic.
pub fn sample(index: u64) -> PhantomSample {
    generate(&PhantomConfig::default(), index).expect("default phantom generates")
}

/// Random logits of the given shape, deterministic in `seed`.
pub fn logits(width: usize, height: usize, classes: usize, seed: u64) -> LogitMap {
    let mut rng = SplitMix64::new(seed);
    let data = (0..width * height * classes)
        .map(|_| rng.uniform_in(-3.0, 3.0))
        .collect();
    LogitMap::new(width, height, classes, data).expect("valid logits")
}

/// Random labels of the given shape, deterministic in `seed`.
pub fn labels(width: usize, height: usize, classes: usize, seed: u64) -> LabelMap {
    let mut rng = SplitMix64::new(seed);
    let data = (0..width * height)
        .map(|_| (rng.next_u64() as usize % classes) as u8)
        .collect();
    LabelMap::new(width, height, classes, data).expect("valid labels")
}

/// A random scatter of points inside a square, deterministic in `seed`.
pub fn points(count: usize, extent: u64, seed: u64) -> Vec<(usize, usize)> {
    let mut rng = SplitMix64::new(seed);
    (0..count)
        .map(|_| {
            (
                (rng.next_u64() % extent) as usize,
                (rng.next_u64() % extent) as usize,
            )
        })
        .collect()
}
