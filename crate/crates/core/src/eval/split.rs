//! Calibration/evaluation splits.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::scores::ScoredInstance;
use crate::{Error, Result};

/// Upper limit on enumerated splits.
pub const MAX_EXHAUSTIVE_SPLITS: u128 = 1_000_000;

/// A split: calibration indices and evaluation indices into the dataset.
pub type Split = (Vec<usize>, Vec<usize>);

/// Shuffles `0..total` and takes the first `calib` then the next `eval` indices.
pub fn uniform_split<R: Rng + ?Sized>(total: usize, calib: usize, eval: usize, rng: &mut R) -> Result<Split> {
    if calib + eval > total {
        return Err(Error::InsufficientData(format!(
            "{calib} calibration + {eval} evaluation items requested from {total}"
        )));
    }
    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(rng);
    let eval_part = order[calib..calib + eval].to_vec();
    order.truncate(calib);
    Ok((order, eval_part))
}

/// Draws `n_total` items with equal shares from every stratum (strata named by
/// the `key` metadata field), fills the remainder uniformly from the items
/// left over, shuffles the selection and puts its first `calib` items in the
/// calibration part.
pub fn stratified_split<R: Rng + ?Sized>(
    dataset: &[ScoredInstance],
    key: &str,
    n_total: usize,
    calib: usize,
    rng: &mut R,
) -> Result<Split> {
    if calib > n_total || n_total > dataset.len() {
        return Err(Error::InsufficientData(format!(
            "{n_total} items ({calib} calibration) requested from {}",
            dataset.len()
        )));
    }
    let mut strata: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, inst) in dataset.iter().enumerate() {
        let stratum = inst.meta().get(key).ok_or_else(|| {
            Error::invalid(format!("instance `{}` has no `{key}` metadata", inst.id()))
        })?;
        strata.entry(stratum.as_str()).or_default().push(i);
    }
    let share = n_total / strata.len().max(1);
    let mut chosen = Vec::with_capacity(n_total);
    let mut leftover = Vec::new();
    for members in strata.values_mut() {
        members.shuffle(rng);
        let take = share.min(members.len());
        chosen.extend_from_slice(&members[..take]);
        leftover.extend_from_slice(&members[take..]);
    }
    let remainder = n_total - chosen.len();
    leftover.shuffle(rng);
    chosen.extend_from_slice(&leftover[..remainder]);
    chosen.shuffle(rng);
    let eval_part = chosen.split_off(calib);
    Ok((chosen, eval_part))
}

/// `C(n, k)`, or `None` on overflow.
pub fn binomial(n: usize, k: usize) -> Option<u128> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.checked_mul((n - i) as u128)? / (i as u128 + 1);
    }
    Some(acc)
}

/// Every `k`-subset of `0..n` in lexicographic order.
pub fn combinations(n: usize, k: usize) -> Result<Vec<Vec<usize>>> {
    let count = binomial(n, k).filter(|&c| c <= MAX_EXHAUSTIVE_SPLITS).ok_or_else(|| {
        Error::invalid(format!("C({n}, {k}) exceeds {MAX_EXHAUSTIVE_SPLITS} splits"))
    })?;
    let mut out = Vec::with_capacity(count as usize);
    if k > n {
        return Ok(out);
    }
    let mut cur: Vec<usize> = (0..k).collect();
    loop {
        out.push(cur.clone());
        let Some(i) = (0..k).rev().find(|&i| cur[i] < n - k + i) else {
            return Ok(out);
        };
        cur[i] += 1;
        for j in i + 1..k {
            cur[j] = cur[j - 1] + 1;
        }
    }
}

/// Evaluation part for a listed calibration set: the first `eval` indices of
/// its complement.
pub(crate) fn complement_split(calib: &[usize], total: usize, eval: usize) -> Result<Split> {
    let mut taken = vec![false; total];
    for &i in calib {
        if i >= total || std::mem::replace(&mut taken[i], true) {
            return Err(Error::invalid(format!(
                "split index {i} is out of range or repeated (dataset has {total} items)"
            )));
        }
    }
    let rest: Vec<usize> = (0..total).filter(|&i| !taken[i]).take(eval).collect();
    if rest.len() < eval {
        return Err(Error::InsufficientData(format!(
            "split leaves {} evaluation items, {eval} requested",
            rest.len()
        )));
    }
    Ok((calib.to_vec(), rest))
}
