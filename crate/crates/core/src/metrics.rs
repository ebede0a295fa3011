//! Sample-quality metrics over sets of sequences: n-gram Hellinger distance,
//! n-gram outlier fraction, normalized pairwise edit distance and the
//! parroting ratio.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::forward::Sequence;

fn check_n(n: usize, samples: &[Sequence], what: &str) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::Domain(format!("{what} set is empty")));
    }
    if n == 0 {
        return Err(Error::Domain("n-gram order must be positive".into()));
    }
    if let Some(x) = samples.iter().find(|x| x.len() < n) {
        return Err(Error::Domain(format!(
            "n={n} exceeds sequence length {}",
            x.len()
        )));
    }
    Ok(())
}

/// Counts of every length-`n` window across `samples`.
pub fn ngram_counts(samples: &[Sequence], n: usize) -> BTreeMap<Vec<usize>, usize> {
    let mut counts = BTreeMap::new();
    for x in samples {
        for w in x.windows(n) {
            *counts.entry(w.to_vec()).or_insert(0) += 1;
        }
    }
    counts
}

/// Hellinger distance `(1/sqrt 2) * || sqrt p - sqrt q ||` between two
/// discrete distributions given as aligned probability slices.
pub fn hellinger(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch {
            expected: p.len(),
            got: q.len(),
        });
    }
    let s: f64 = p
        .iter()
        .zip(q)
        .map(|(a, b)| (a.sqrt() - b.sqrt()).powi(2))
        .sum();
    Ok((s / 2.0).sqrt().min(1.0))
}

/// Hellinger distance between the empirical n-gram distributions of two sets.
pub fn ngram_hellinger(generated: &[Sequence], reference: &[Sequence], n: usize) -> Result<f64> {
    check_n(n, generated, "generated")?;
    check_n(n, reference, "reference")?;
    let cg = ngram_counts(generated, n);
    let cr = ngram_counts(reference, n);
    let tg: usize = cg.values().sum();
    let tr: usize = cr.values().sum();
    let support: BTreeSet<&Vec<usize>> = cg.keys().chain(cr.keys()).collect();
    let (mut p, mut q) = (
        Vec::with_capacity(support.len()),
        Vec::with_capacity(support.len()),
    );
    for g in support {
        p.push(cg.get(g).copied().unwrap_or(0) as f64 / tg as f64);
        q.push(cr.get(g).copied().unwrap_or(0) as f64 / tr as f64);
    }
    hellinger(&p, &q)
}

/// Fraction of generated n-gram occurrences that never occur in `train`.
pub fn ngram_outliers(generated: &[Sequence], train: &[Sequence], n: usize) -> Result<f64> {
    check_n(n, generated, "generated")?;
    let known: BTreeSet<&[usize]> = train.iter().flat_map(|x| x.windows(n)).collect();
    let (mut novel, mut total) = (0usize, 0usize);
    for x in generated {
        for w in x.windows(n) {
            total += 1;
            if !known.contains(w) {
                novel += 1;
            }
        }
    }
    Ok(novel as f64 / total as f64)
}

/// Levenshtein distance with unit insert, delete and substitute costs.
pub fn levenshtein(a: &[usize], b: &[usize]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, &ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Mean and population standard deviation of pairwise edit distance
/// divided by the sequence length.
pub fn diverse_edit_distance(samples: &[Sequence]) -> Result<(f64, f64)> {
    if samples.len() < 2 {
        return Err(Error::Domain(
            "edit distance needs at least two samples".into(),
        ));
    }
    let d = samples[0].len();
    if d == 0 {
        return Err(Error::Domain("sequences are empty".into()));
    }
    if let Some(x) = samples.iter().find(|x| x.len() != d) {
        return Err(Error::LengthMismatch {
            expected: d,
            got: x.len(),
        });
    }
    let dists: Vec<f64> = (0..samples.len())
        .into_par_iter()
        .flat_map_iter(|i| {
            (i + 1..samples.len())
                .map(move |j| levenshtein(&samples[i], &samples[j]) as f64 / d as f64)
        })
        .collect();
    let count = dists.len() as f64;
    let mean = dists.iter().sum::<f64>() / count;
    let var = dists.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / count;
    Ok((mean, var.sqrt()))
}

/// `(1 / (tr + ts)) * (tr / ts)`. Infinite when `ts` is zero.
pub fn parroting_ratio(dist_tr: f64, dist_ts: f64) -> Result<f64> {
    if !(dist_tr >= 0.0 && dist_ts >= 0.0) {
        return Err(Error::Domain("distances must be non-negative".into()));
    }
    if dist_ts == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(dist_tr / dist_ts / (dist_tr + dist_ts))
}
