use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::FeatureError;
use crate::format::{Example, Label, RawEvent};

pub trait Labeled {
    fn label(&self) -> Label;
}

impl Labeled for Example {
    fn label(&self) -> Label {
        self.label
    }
}

impl Labeled for RawEvent {
    fn label(&self) -> Label {
        self.label
    }
}

impl<T: Labeled> Labeled for std::sync::Arc<T> {
    fn label(&self) -> Label {
        (**self).label()
    }
}

pub fn class_counts<T: Labeled>(items: &[T]) -> [usize; 3] {
    let mut counts = [0; 3];
    for it in items {
        counts[it.label().index()] += 1;
    }
    counts
}

/// Downsamples every class uniformly at random to the smallest class count.
/// Survivors keep their relative order.
pub fn undersample<T: Labeled>(items: Vec<T>, seed: u64) -> Result<Vec<T>, FeatureError> {
    let counts = class_counts(&items);
    if let Some(empty) = Label::ALL.iter().find(|l| counts[l.index()] == 0) {
        return Err(FeatureError::EmptyClass(*empty));
    }
    let target = *counts.iter().min().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![false; items.len()];
    for label in Label::ALL {
        let members: Vec<usize> = items
            .iter()
            .enumerate()
            .filter(|(_, it)| it.label() == label)
            .map(|(i, _)| i)
            .collect();
        for j in index::sample(&mut rng, members.len(), target) {
            keep[members[j]] = true;
        }
    }
    Ok(items
        .into_iter()
        .zip(keep)
        .filter_map(|(it, k)| k.then_some(it))
        .collect())
}

/// Seeded uniform permutation.
pub fn shuffle<T>(items: &mut [T], seed: u64) {
    items.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
}

/// Number of training items for a split of `n` at `fraction`: `floor(fraction * n)`.
pub fn train_len(n: usize, fraction: f64) -> usize {
    // the epsilon absorbs binary rounding of products like 0.7 * 10
    ((fraction * n as f64) + 1e-9).floor() as usize
}

/// Splits off the first `floor(fraction * n)` items as the training set.
pub fn split<T>(mut items: Vec<T>, fraction: f64) -> Result<(Vec<T>, Vec<T>), FeatureError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(FeatureError::BadFraction(fraction));
    }
    let n_train = train_len(items.len(), fraction);
    let test = items.split_off(n_train);
    Ok((items, test))
}

/// Shuffle then split.
pub fn shuffle_split<T>(
    mut items: Vec<T>,
    fraction: f64,
    seed: u64,
) -> Result<(Vec<T>, Vec<T>), FeatureError> {
    shuffle(&mut items, seed);
    split(items, fraction)
}
