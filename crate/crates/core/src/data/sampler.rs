use rand::Rng;

/// `round(fraction × count)`, at least 1 (for a non-empty set).
pub fn subset_size(count: usize, fraction: f64) -> usize {
    ((fraction * count as f64).round() as usize).clamp(1.min(count), count)
}

/// Uniform random subset without replacement, in shuffled order.
pub fn sample_subset(count: usize, fraction: f64, rng: &mut impl Rng) -> Vec<usize> {
    assert!(fraction > 0.0 && fraction <= 1.0, "fraction must lie in (0, 1]");
    rand::seq::index::sample(rng, count, subset_size(count, fraction)).into_vec()
}

/// Consecutive mini-batches covering `indices`; the last may be short.
pub fn batches(indices: &[usize], batch_size: usize) -> impl Iterator<Item = &[usize]> {
    indices.chunks(batch_size.max(1))
}
