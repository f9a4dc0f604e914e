use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::prompt::Label;

// Separate ChaCha streams keep the split and the demo draw independent
// for the same seed.
const SPLIT_STREAM: u64 = 1;
const FEW_SHOT_STREAM: u64 = 2;

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Test-set size for a holdout fraction: `round(f * n)`, at least one item
/// and leaving at least one for training.
pub fn holdout_size(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64).round() as usize).clamp(1, n - 1)
}

/// Seeded shuffle split into `(train, test)` index lists. Both lists are
/// returned in dataset order.
pub fn split_holdout(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>), String> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(format!("holdout fraction {fraction} must lie in (0, 1)"));
    }
    if n < 2 {
        return Err(format!("cannot split {n} item(s) into train and test"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng(seed, SPLIT_STREAM));
    let n_test = holdout_size(n, fraction);
    let mut test = order[..n_test].to_vec();
    let mut train = order[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok((train, test))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingStrategy {
    /// Per-class quotas proportional to class frequency, rounded with the
    /// largest-remainder method.
    #[default]
    Stratified,
    Uniform,
}

/// Per-class demo counts summing to `k`. `counts` must be positive and sum
/// to at least `k`.
pub fn largest_remainder(counts: &[usize], k: usize) -> Vec<usize> {
    let total: usize = counts.iter().sum();
    let mut alloc: Vec<usize> = counts.iter().map(|&c| c * k / total).collect();
    let assigned: usize = alloc.iter().sum();
    let mut by_remainder: Vec<usize> = (0..counts.len()).collect();
    // Remainders compared exactly as c*k mod total; ties go to the earlier class.
    by_remainder.sort_by(|&a, &b| {
        ((counts[b] * k) % total)
            .cmp(&((counts[a] * k) % total))
            .then(a.cmp(&b))
    });
    for &i in by_remainder.iter().take(k - assigned) {
        alloc[i] += 1;
    }
    alloc
}

/// Picks `k` demonstration indices out of `labels` (one gold label per
/// candidate). The result order is itself shuffled so demos of one class
/// are not grouped together.
pub fn select_few_shot(
    labels: &[&Label],
    k: usize,
    seed: u64,
    strategy: SamplingStrategy,
) -> Result<Vec<usize>, String> {
    if k > labels.len() {
        return Err(format!(
            "requested {k} demonstrations from a pool of {}",
            labels.len()
        ));
    }
    let mut r = rng(seed, FEW_SHOT_STREAM);
    let mut chosen = match strategy {
        SamplingStrategy::Uniform => {
            let mut idx: Vec<usize> = (0..labels.len()).collect();
            idx.shuffle(&mut r);
            idx.truncate(k);
            idx
        }
        SamplingStrategy::Stratified => {
            let mut by_class: BTreeMap<&Label, Vec<usize>> = BTreeMap::new();
            for (i, l) in labels.iter().enumerate() {
                by_class.entry(*l).or_default().push(i);
            }
            let counts: Vec<usize> = by_class.values().map(Vec::len).collect();
            let quotas = if k == 0 { vec![0; counts.len()] } else { largest_remainder(&counts, k) };
            let mut out = Vec::with_capacity(k);
            for (mut members, q) in by_class.into_values().zip(quotas) {
                members.shuffle(&mut r);
                out.extend_from_slice(&members[..q]);
            }
            out
        }
    };
    chosen.shuffle(&mut r);
    Ok(chosen)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_sizes_and_disjointness() {
        let (train, test) = split_holdout(20, 0.1, 7).unwrap();
        assert_eq!(test.len(), 2);
        assert_eq!(train.len(), 18);
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..20).collect::<Vec<_>>());
        assert_eq!(split_holdout(20, 0.1, 7).unwrap(), (train, test));
        assert_eq!(split_holdout(3, 0.1, 0).unwrap().1.len(), 1);
        assert!(split_holdout(1, 0.5, 0).is_err());
        assert!(split_holdout(5, 1.0, 0).is_err());
    }

    #[test]
    fn largest_remainder_allocation() {
        // quotas 5*6/10=3.0, 5*3/10=1.5, 5*1/10=0.5 -> floors 3,1,0; one
        // seat left, tie on .5 goes to the earlier class
        assert_eq!(largest_remainder(&[6, 3, 1], 5), vec![3, 2, 0]);
        assert_eq!(largest_remainder(&[1, 1, 1, 1], 4), vec![1, 1, 1, 1]);
        assert_eq!(largest_remainder(&[7, 2, 1], 10), vec![7, 2, 1]);
        for k in 0..=10 {
            assert_eq!(largest_remainder(&[4, 3, 2, 1], k).iter().sum::<usize>(), k);
        }
    }

    #[test]
    fn stratified_draw_respects_quotas() {
        let l1 = Label::Int(1);
        let l2 = Label::Int(2);
        let labels: Vec<&Label> = (0..10).map(|i| if i < 6 { &l1 } else { &l2 }).collect();
        let picked = select_few_shot(&labels, 5, 3, SamplingStrategy::Stratified).unwrap();
        assert_eq!(picked.len(), 5);
        assert_eq!(picked.iter().filter(|&&i| i < 6).count(), 3);
        let mut dedup = picked.clone();
        dedup.sort_unstable();
        dedup.dedup();
        assert_eq!(dedup.len(), 5);
        assert_eq!(select_few_shot(&labels, 5, 3, SamplingStrategy::Stratified).unwrap(), picked);
        assert!(select_few_shot(&labels, 11, 3, SamplingStrategy::Uniform).is_err());
    }
}
