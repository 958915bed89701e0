//! Sparsification of posterior draws and the greedy DIC rank search.

use crate::error::{Error, Result};
use crate::model::{dic, fit, draws::quantile_sorted, Dataset, FitConfig};
use crate::par;

/// Iteration cap of each 1-d Lloyd run.
const LLOYD_MAX_ITER: usize = 100;
/// Cap on the number of nested re-splits per draw.
const MAX_SPLITS: usize = 10_000;

/// Lloyd's 2-means on sorted values, started from (min, max). Returns the
/// size of the lower cluster, or `None` when all values are equal. Values
/// exactly at the midpoint go to the lower cluster.
fn two_means_sorted(x: &[f64], prefix: &[f64]) -> Option<usize> {
    let m = x.len();
    if m < 2 || x[0] == x[m - 1] {
        return None;
    }
    let mean = |a: usize, b: usize| (prefix[b] - prefix[a]) / (b - a) as f64;
    let (mut lo, mut hi) = (x[0], x[m - 1]);
    let mut k = 0;
    for _ in 0..LLOYD_MAX_ITER {
        let mid = 0.5 * (lo + hi);
        let next = x.partition_point(|&v| v <= mid).clamp(1, m - 1);
        if next == k {
            break;
        }
        k = next;
        lo = mean(0, k);
        hi = mean(k, m);
    }
    Some(k)
}

/// Number of zero-valued elements in one draw: split `|θ|` into a lower and
/// an upper cluster, then keep re-splitting the lower cluster while its two
/// halves' means differ by more than `b`; the upper half of every such split
/// counts as signal. The remaining cluster is the zero set.
pub fn zero_count(theta: &[f64], b: f64) -> usize {
    let mut x: Vec<f64> = theta.iter().map(|v| v.abs()).collect();
    x.sort_by(f64::total_cmp);
    let mut prefix = Vec::with_capacity(x.len() + 1);
    prefix.push(0.0);
    for v in &x {
        prefix.push(prefix.last().unwrap() + v);
    }
    let Some(mut size) = two_means_sorted(&x, &prefix) else {
        return x.len();
    };
    for _ in 0..MAX_SPLITS {
        let Some(k) = two_means_sorted(&x[..size], &prefix[..=size]) else {
            break;
        };
        let lower = prefix[k] / k as f64;
        let upper = (prefix[size] - prefix[k]) / (size - k) as f64;
        if (upper - lower).abs() > b {
            size = k;
        } else {
            break;
        }
    }
    size
}

/// Default gap threshold: `1e-3 ×` the median over draws of `max |θ⁽ˢ⁾|`.
pub fn default_gap(draws: &[f64], p: usize) -> f64 {
    let mut maxes: Vec<f64> = draws
        .chunks_exact(p)
        .map(|d| d.iter().fold(0.0f64, |m, v| m.max(v.abs())))
        .collect();
    maxes.sort_by(f64::total_cmp);
    1e-3 * quantile_sorted(&maxes, 0.5)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sparsified {
    /// Elementwise posterior median with the `n_z` smallest magnitudes zeroed.
    pub estimate: Vec<f64>,
    pub n_z: usize,
    /// Zero count of every draw.
    pub per_draw: Vec<usize>,
    /// Gap threshold used.
    pub b: f64,
}

/// Sequential 2-means on `S` draws of a `p`-vector, stored draw-major.
/// `n_z` is the median per-draw zero count, rounded to the nearest integer.
pub fn sequential_2means(draws: &[f64], p: usize, b: f64) -> Result<Sparsified> {
    if p < 2 {
        return Err(Error::InvalidParameter(format!("2-means needs at least 2 parameters, got {p}")));
    }
    if draws.is_empty() || !draws.len().is_multiple_of(p) {
        return Err(Error::Shape(format!("{} values are not a whole number of {p}-draws", draws.len())));
    }
    if b.is_nan() || b <= 0.0 {
        return Err(Error::InvalidParameter(format!("gap threshold must be positive, got {b}")));
    }
    let s = draws.len() / p;
    let per_draw = par::map(s, |d| zero_count(&draws[d * p..(d + 1) * p], b));
    let mut counts: Vec<f64> = per_draw.iter().map(|&c| c as f64).collect();
    counts.sort_by(f64::total_cmp);
    let n_z = quantile_sorted(&counts, 0.5).round() as usize;

    let mut estimate = par::map(p, |v| {
        let mut col: Vec<f64> = (0..s).map(|d| draws[d * p + v]).collect();
        col.sort_by(f64::total_cmp);
        quantile_sorted(&col, 0.5)
    });
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| estimate[a].abs().total_cmp(&estimate[b].abs()).then(a.cmp(&b)));
    for &v in &order[..n_z] {
        estimate[v] = 0.0;
    }
    Ok(Sparsified { estimate, n_z, per_draw, b })
}

/// One fitted rank vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Visit {
    pub ranks: Vec<usize>,
    /// `f64::INFINITY` when the fit failed.
    pub dic: f64,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankSearchTrace {
    pub visited: Vec<Visit>,
    pub selected: Vec<usize>,
}

impl RankSearchTrace {
    pub fn dic_of(&self, ranks: &[usize]) -> Option<f64> {
        self.visited.iter().find(|v| v.ranks == ranks).map(|v| v.dic)
    }
}

/// Greedy rank search for a tensor of order `order`.
///
/// Phase 1 fits equal ranks `r = 1, 2, …` (up to `max_rank`) until the DIC
/// stops decreasing. Phase 2 starts from the best of those and repeatedly
/// tries lowering one margin by 1, last margin first, skipping rank vectors
/// already fitted; the best improving candidate (ties to the lowest margin
/// index) becomes the new baseline. Candidates of one round are fitted in
/// parallel. `fit_dic` returns the DIC of a rank vector.
pub fn rank_search<F>(fit_dic: F, order: usize, max_rank: usize) -> Result<RankSearchTrace>
where
    F: Fn(&[usize]) -> Result<f64> + Sync + Send,
{
    if order == 0 || max_rank == 0 {
        return Err(Error::InvalidParameter("order and max rank must be >= 1".into()));
    }
    let evaluate = |ranks: &Vec<usize>| match fit_dic(ranks) {
        Ok(d) if d.is_finite() => Visit { ranks: ranks.clone(), dic: d, error: None },
        Ok(d) => Visit { ranks: ranks.clone(), dic: f64::INFINITY, error: Some(format!("non-finite DIC {d}")) },
        Err(e) => Visit { ranks: ranks.clone(), dic: f64::INFINITY, error: Some(e.to_string()) },
    };
    let mut visited: Vec<Visit> = Vec::new();

    for r in 1..=max_rank {
        let v = evaluate(&vec![r; order]);
        let stop = visited.last().is_some_and(|prev: &Visit| v.dic >= prev.dic);
        visited.push(v);
        if stop {
            break;
        }
    }
    let mut baseline = argmin(&visited).clone();

    loop {
        let candidates: Vec<(usize, Vec<usize>)> = (0..order)
            .rev()
            .filter(|&j| baseline.ranks[j] > 1)
            .map(|j| {
                let mut r = baseline.ranks.clone();
                r[j] -= 1;
                (j, r)
            })
            .filter(|(_, r)| !visited.iter().any(|v| &v.ranks == r))
            .collect();
        if candidates.is_empty() {
            break;
        }
        let results = par::map(candidates.len(), |k| evaluate(&candidates[k].1));
        let mut best: Option<(usize, &Visit)> = None;
        for ((j, _), v) in candidates.iter().zip(&results) {
            let better = match best {
                None => true,
                Some((bj, bv)) => v.dic < bv.dic || (v.dic == bv.dic && *j < bj),
            };
            if better {
                best = Some((*j, v));
            }
        }
        let improved = best.filter(|(_, v)| v.dic < baseline.dic).map(|(_, v)| v.clone());
        visited.extend(results);
        match improved {
            Some(v) => baseline = v,
            None => break,
        }
    }
    Ok(RankSearchTrace { selected: baseline.ranks, visited })
}

/// First visit with the smallest DIC.
fn argmin(visited: &[Visit]) -> &Visit {
    visited
        .iter()
        .reduce(|a, b| if b.dic < a.dic { b } else { a })
        .expect("at least one visit")
}

/// [`rank_search`] driven by real fits of `base` with the ranks replaced.
pub fn rank_search_fits(data: &Dataset, base: &FitConfig, max_rank: usize) -> Result<RankSearchTrace> {
    rank_search(
        |ranks| {
            let mut cfg = base.clone();
            cfg.ranks = ranks.to_vec();
            cfg.auto_raise_rank1 = false;
            let out = fit(data, &cfg)?;
            Ok(dic(&out.draws, data)?.dic)
        },
        data.order(),
        max_rank,
    )
}
