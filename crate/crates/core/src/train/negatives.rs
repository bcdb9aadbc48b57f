use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

/// `count` distinct items drawn uniformly from `0..n` minus `exclude`.
pub fn sample_negatives<R: Rng + ?Sized>(
    n: usize,
    exclude: &BTreeSet<usize>,
    count: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    let eligible: Vec<usize> = (0..n).filter(|i| !exclude.contains(i)).collect();
    if count > eligible.len() {
        return Err(Error::Sampling(format!(
            "{count} negatives requested but only {} of {n} items are eligible",
            eligible.len()
        )));
    }
    Ok(eligible.choose_multiple(rng, count).copied().collect())
}

/// Negatives for each training position `1..L` of a sequence.
///
/// Position `e` excludes every item among events `0..=e`. When that leaves
/// too few items only the target is excluded.
pub fn position_negatives<R: Rng + ?Sized>(
    n: usize,
    items: &[usize],
    count: usize,
    rng: &mut R,
) -> Result<Vec<Vec<usize>>> {
    let mut seen: BTreeSet<usize> = BTreeSet::new();
    let mut out = Vec::with_capacity(items.len().saturating_sub(1));
    for (e, &item) in items.iter().enumerate() {
        seen.insert(item);
        if e == 0 {
            continue;
        }
        if n - seen.len() >= count {
            out.push(sample_negatives(n, &seen, count, rng)?);
        } else {
            out.push(sample_negatives(n, &BTreeSet::from([item]), count, rng)?);
        }
    }
    Ok(out)
}
