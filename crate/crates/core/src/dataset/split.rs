//! Deterministic train/val/test assignment.

use super::{DatasetManifest, Split};
use std::collections::BTreeMap;

/// Which assignment rule to apply, always per species.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitScheme {
    /// Repeating 10-position pattern over files sorted by duration
    /// descending: train, train, val, test, train, train, val, test,
    /// train, train.
    Pattern,
    /// Per-class proportional 62.7/15.2/22.1 split with largest-remainder
    /// rounding and at least one file per subset (when the class has three
    /// or more files).
    Stratified,
}

const PATTERN: [Split; 10] = [
    Split::Train,
    Split::Train,
    Split::Val,
    Split::Test,
    Split::Train,
    Split::Train,
    Split::Val,
    Split::Test,
    Split::Train,
    Split::Train,
];

const STRATIFIED_FRACTIONS: [f64; 3] = [0.627, 0.152, 0.221];

/// Assigns every recording to a subset. Ties in duration break on id, so
/// the result is a pure function of the manifest contents.
pub fn assign_splits(manifest: &mut DatasetManifest, scheme: SplitScheme) {
    let mut by_label: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, e) in manifest.entries.iter().enumerate() {
        by_label.entry(e.label.clone()).or_default().push(i);
    }

    for (_, mut indices) in by_label {
        indices.sort_by(|&a, &b| {
            let (ea, eb) = (&manifest.entries[a], &manifest.entries[b]);
            eb.duration_s
                .partial_cmp(&ea.duration_s)
                .unwrap()
                .then_with(|| ea.id.cmp(&eb.id))
        });
        match scheme {
            SplitScheme::Pattern => {
                for (pos, &i) in indices.iter().enumerate() {
                    manifest.entries[i].split = PATTERN[pos % PATTERN.len()];
                }
            }
            SplitScheme::Stratified => {
                let counts = largest_remainder(indices.len(), &STRATIFIED_FRACTIONS);
                let (n_train, n_val, _) = (counts[0], counts[1], counts[2]);
                for (pos, &i) in indices.iter().enumerate() {
                    manifest.entries[i].split = if pos < n_train {
                        Split::Train
                    } else if pos < n_train + n_val {
                        Split::Val
                    } else {
                        Split::Test
                    };
                }
            }
        }
    }
}

/// Largest-remainder apportionment of `n` items over `fractions`, with a
/// minimum of one per bucket when `n` allows it.
fn largest_remainder(n: usize, fractions: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    // Distribute leftovers by descending fractional part (ties: bucket order).
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let (fa, fb) = (quotas[a] - quotas[a].floor(), quotas[b] - quotas[b].floor());
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for k in 0..n - assigned {
        counts[order[k % order.len()]] += 1;
    }
    if n >= fractions.len() {
        // Guarantee representation in every subset.
        loop {
            let Some(empty) = counts.iter().position(|&c| c == 0) else {
                break;
            };
            let donor = counts
                .iter()
                .enumerate()
                .max_by_key(|&(_, &c)| c)
                .map(|(i, _)| i)
                .unwrap();
            counts[donor] -= 1;
            counts[empty] += 1;
        }
    }
    counts
}
