//! Weighted k-median on the pixel grid under the ℓ1 ground distance.
//!
//! The best k-sparse approximation of a nonnegative image under EMD is the
//! weighted k-median clustering of its support: every pixel ships its mass to
//! the nearest of `k` centers. This module computes such clusterings, exactly
//! when the candidate space is small and by seeded local search otherwise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};
use crate::grid::GridImage;

/// Default limit on the number of center combinations enumerated exactly.
pub const EXACT_COMBINATION_LIMIT: u128 = 100_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KMedianMethod {
    /// Every combination of candidate centers was tried.
    Exact,
    LocalSearch,
    /// At most `k` weighted points: each one is its own center.
    Trivial,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMedianSolution {
    /// Center pixels as `(row, col)`, at most `k` of them.
    pub centers: Vec<(usize, usize)>,
    /// `Σ w_p · min_c ‖p − c‖₁`.
    pub cost: f64,
    pub method: KMedianMethod,
}

impl KMedianSolution {
    /// The k-sparse image that puts each cluster's weight on its center.
    pub fn sparse_image(&self, x: &GridImage) -> GridImage {
        let grid = x.grid();
        let mut out = GridImage::zeros(grid);
        if self.centers.is_empty() {
            return out;
        }
        for ((r, c), w) in x.support() {
            let j = nearest(&self.centers, r, c).0;
            let (cr, cc) = self.centers[j];
            out.add_at(cr, cc, w);
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct KMedianOptions {
    pub seed: u64,
    pub exact_limit: u128,
    /// Independent local-search starts; the best result is kept.
    pub restarts: usize,
    /// Extra centers tried as a warm start (for example the centers of a
    /// related instance).
    pub warm_start: Option<Vec<(usize, usize)>>,
}

impl Default for KMedianOptions {
    fn default() -> Self {
        Self { seed: 0, exact_limit: EXACT_COMBINATION_LIMIT, restarts: 4, warm_start: None }
    }
}

#[derive(Clone, Copy, Debug)]
struct Point {
    r: i64,
    c: i64,
    w: f64,
}

#[inline]
fn dist(a: (i64, i64), b: (i64, i64)) -> f64 {
    ((a.0 - b.0).abs() + (a.1 - b.1).abs()) as f64
}

fn nearest(centers: &[(usize, usize)], r: usize, c: usize) -> (usize, f64) {
    let p = (r as i64, c as i64);
    let mut best = (0, f64::INFINITY);
    for (j, &(cr, cc)) in centers.iter().enumerate() {
        let d = dist(p, (cr as i64, cc as i64));
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Weighted k-median of the nonnegative image `x`.
pub fn kmedian(x: &GridImage, k: usize, opts: &KMedianOptions) -> Result<KMedianSolution> {
    if k == 0 {
        return invalid("k must be at least 1");
    }
    if !x.is_nonneg() {
        return invalid("k-median weights must be nonnegative");
    }
    let points: Vec<Point> = x
        .support()
        .filter(|(_, w)| *w > 0.0)
        .map(|((r, c), w)| Point { r: r as i64, c: c as i64, w })
        .collect();
    if points.len() <= k {
        let centers = points.iter().map(|p| (p.r as usize, p.c as usize)).collect();
        return Ok(KMedianSolution { centers, cost: 0.0, method: KMedianMethod::Trivial });
    }
    let candidates = hanan_candidates(&points);
    if binomial(candidates.len() as u128, k as u128, opts.exact_limit) <= opts.exact_limit {
        return Ok(exact(&points, &candidates, k));
    }
    Ok(local_search(&points, k, opts))
}

/// Cost of the best k-sparse approximation of `x` under EMD, as found by [`kmedian`].
pub fn best_k_sparse_emd(x: &GridImage, k: usize, opts: &KMedianOptions) -> Result<f64> {
    Ok(kmedian(x, k, opts)?.cost)
}

/// Cost of serving `points` from `centers`.
pub fn clustering_cost(x: &GridImage, centers: &[(usize, usize)]) -> f64 {
    if centers.is_empty() {
        return if x.mass() == 0.0 { 0.0 } else { f64::INFINITY };
    }
    x.support().map(|((r, c), w)| w * nearest(centers, r, c).1).sum()
}

/// `C(n, k)`, saturating once it exceeds `cap`.
fn binomial(n: u128, k: u128, cap: u128) -> u128 {
    if k > n {
        return 0;
    }
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) / (i + 1);
        if acc > cap {
            return cap + 1;
        }
    }
    acc
}

/// Rows of the support crossed with columns of the support. Each coordinate of
/// an ℓ1 median is a weighted median of that coordinate, so some optimal set of
/// centers lies on this grid.
fn hanan_candidates(points: &[Point]) -> Vec<(i64, i64)> {
    let mut rows: Vec<i64> = points.iter().map(|p| p.r).collect();
    let mut cols: Vec<i64> = points.iter().map(|p| p.c).collect();
    rows.sort_unstable();
    rows.dedup();
    cols.sort_unstable();
    cols.dedup();
    rows.iter().flat_map(|&r| cols.iter().map(move |&c| (r, c))).collect()
}

fn exact(points: &[Point], candidates: &[(i64, i64)], k: usize) -> KMedianSolution {
    // dist[p][c] cached row by row
    let nc = candidates.len();
    let table: Vec<f64> = points
        .iter()
        .flat_map(|p| candidates.iter().map(move |&c| p.w * dist((p.r, p.c), c)))
        .collect();
    let mut idx: Vec<usize> = (0..k).collect();
    let mut best_cost = f64::INFINITY;
    let mut best = idx.clone();
    loop {
        let mut cost = 0.0;
        for p in 0..points.len() {
            let row = &table[p * nc..(p + 1) * nc];
            let m = idx.iter().map(|&j| row[j]).fold(f64::INFINITY, f64::min);
            cost += m;
            if cost >= best_cost {
                break;
            }
        }
        if cost < best_cost {
            best_cost = cost;
            best.clone_from(&idx);
        }
        // next combination in lexicographic order
        let mut i = k;
        loop {
            if i == 0 {
                let centers = best.iter().map(|&j| to_pixel(candidates[j])).collect();
                return KMedianSolution { centers, cost: best_cost, method: KMedianMethod::Exact };
            }
            i -= 1;
            if idx[i] < nc - k + i {
                break;
            }
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

fn to_pixel(c: (i64, i64)) -> (usize, usize) {
    (c.0 as usize, c.1 as usize)
}

/// Nearest and second-nearest center distances per point.
struct Assignment {
    first: Vec<usize>,
    d1: Vec<f64>,
    d2: Vec<f64>,
}

fn assign(points: &[Point], centers: &[(i64, i64)]) -> Assignment {
    let mut a = Assignment {
        first: vec![0; points.len()],
        d1: vec![f64::INFINITY; points.len()],
        d2: vec![f64::INFINITY; points.len()],
    };
    for (i, p) in points.iter().enumerate() {
        for (j, &c) in centers.iter().enumerate() {
            let d = dist((p.r, p.c), c);
            if d < a.d1[i] {
                a.d2[i] = a.d1[i];
                a.d1[i] = d;
                a.first[i] = j;
            } else if d < a.d2[i] {
                a.d2[i] = d;
            }
        }
    }
    a
}

fn cost_of(points: &[Point], centers: &[(i64, i64)]) -> f64 {
    points
        .iter()
        .map(|p| p.w * centers.iter().map(|&c| dist((p.r, p.c), c)).fold(f64::INFINITY, f64::min))
        .sum()
}

fn weighted_median(mut vals: Vec<(i64, f64)>) -> i64 {
    vals.sort_unstable_by_key(|v| v.0);
    let total: f64 = vals.iter().map(|v| v.1).sum();
    let mut acc = 0.0;
    for (v, w) in &vals {
        acc += w;
        if 2.0 * acc >= total {
            return *v;
        }
    }
    vals.last().map_or(0, |v| v.0)
}

/// Alternate assignment and per-cluster coordinate medians until stable.
fn lloyd(points: &[Point], centers: &mut [(i64, i64)]) {
    for _ in 0..50 {
        let a = assign(points, centers);
        let mut changed = false;
        for (j, center) in centers.iter_mut().enumerate() {
            let members: Vec<&Point> =
                points.iter().zip(&a.first).filter(|(_, &f)| f == j).map(|(p, _)| p).collect();
            if members.is_empty() {
                continue;
            }
            let r = weighted_median(members.iter().map(|p| (p.r, p.w)).collect());
            let c = weighted_median(members.iter().map(|p| (p.c, p.w)).collect());
            if (r, c) != *center {
                *center = (r, c);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
}

/// Best single swap of one center for one candidate; applied when it improves.
fn swap_pass(points: &[Point], centers: &mut [(i64, i64)], candidates: &[(i64, i64)]) -> bool {
    let a = assign(points, centers);
    let current: f64 = points.iter().zip(&a.d1).map(|(p, d)| p.w * d).sum();
    let mut best = (current * (1.0 - 1e-12), None);
    for (j, _) in centers.iter().enumerate() {
        for &cand in candidates {
            if centers.contains(&cand) {
                continue;
            }
            let mut cost = 0.0;
            for (i, p) in points.iter().enumerate() {
                let keep = if a.first[i] == j { a.d2[i] } else { a.d1[i] };
                cost += p.w * keep.min(dist((p.r, p.c), cand));
                if cost >= best.0 {
                    break;
                }
            }
            if cost < best.0 {
                best = (cost, Some((j, cand)));
            }
        }
    }
    match best.1 {
        Some((j, cand)) => {
            centers[j] = cand;
            true
        }
        None => false,
    }
}

fn improve(points: &[Point], centers: &mut [(i64, i64)], candidates: &[(i64, i64)]) -> f64 {
    loop {
        lloyd(points, centers);
        if !swap_pass(points, centers, candidates) {
            return cost_of(points, centers);
        }
    }
}

/// k-means++-style seeding with ℓ1 distances.
fn seeded_start(points: &[Point], k: usize, rng: &mut ChaCha8Rng) -> Vec<(i64, i64)> {
    let total: f64 = points.iter().map(|p| p.w).sum();
    let mut pick = rng.random::<f64>() * total;
    let mut first = points[points.len() - 1];
    for p in points {
        pick -= p.w;
        if pick <= 0.0 {
            first = *p;
            break;
        }
    }
    let mut centers = vec![(first.r, first.c)];
    while centers.len() < k {
        let weights: Vec<f64> = points
            .iter()
            .map(|p| p.w * centers.iter().map(|&c| dist((p.r, p.c), c)).fold(f64::INFINITY, f64::min))
            .collect();
        let sum: f64 = weights.iter().sum();
        if sum <= 0.0 {
            break;
        }
        let mut pick = rng.random::<f64>() * sum;
        let mut chosen = points.len() - 1;
        for (i, w) in weights.iter().enumerate() {
            pick -= w;
            if pick <= 0.0 && *w > 0.0 {
                chosen = i;
                break;
            }
        }
        centers.push((points[chosen].r, points[chosen].c));
    }
    centers
}

fn local_search(points: &[Point], k: usize, opts: &KMedianOptions) -> KMedianSolution {
    let candidates = hanan_candidates(points);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut starts: Vec<Vec<(i64, i64)>> = Vec::new();
    if let Some(warm) = &opts.warm_start {
        let mut w: Vec<(i64, i64)> = warm.iter().map(|&(r, c)| (r as i64, c as i64)).collect();
        w.dedup();
        w.truncate(k);
        if !w.is_empty() {
            starts.push(w);
        }
    }
    for _ in 0..opts.restarts.max(1) {
        starts.push(seeded_start(points, k, &mut rng));
    }
    let mut best: Option<(f64, Vec<(i64, i64)>)> = None;
    for mut centers in starts {
        // top up short starts with the heaviest uncovered points
        let mut order: Vec<usize> = (0..points.len()).collect();
        order.sort_by(|&a, &b| points[b].w.total_cmp(&points[a].w));
        for i in order {
            if centers.len() >= k {
                break;
            }
            let p = (points[i].r, points[i].c);
            if !centers.contains(&p) {
                centers.push(p);
            }
        }
        let cost = improve(points, &mut centers, &candidates);
        if best.as_ref().is_none_or(|(b, _)| cost < *b) {
            best = Some((cost, centers));
        }
    }
    let (cost, centers) = best.expect("at least one start");
    KMedianSolution { centers: centers.into_iter().map(to_pixel).collect(), cost, method: KMedianMethod::LocalSearch }
}
