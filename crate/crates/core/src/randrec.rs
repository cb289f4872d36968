//! Randomized recovery over the value-constrained tree model.
//!
//! A vector `y` on the cell tree is sketched twice. The support sketch hashes
//! every fine level into `u` buckets (plain sums, so each bucket overestimates
//! its nonnegative cells) and stores the coarse levels outright. The set-query
//! sketch is a signed, repeated hashing of the same fine levels. Recovery walks
//! the tree top down, keeping the `2s` children with the largest bucket
//! estimates per level, then reads values on the chosen support from the
//! set-query sketch.
//!
//! Hashes are pairwise independent rather than fully random.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::grid::{Grid, TreeSupport};

const MERSENNE_61: u64 = (1 << 61) - 1;

/// `x ↦ ((a·x + b) mod (2^61 − 1)) mod range`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairwiseHash {
    a: u64,
    b: u64,
    range: usize,
}

impl PairwiseHash {
    pub fn random<R: Rng>(rng: &mut R, range: usize) -> Self {
        assert!(range > 0, "hash range must be positive");
        Self { a: rng.random_range(1..MERSENNE_61), b: rng.random_range(0..MERSENNE_61), range }
    }

    #[inline]
    pub fn apply(&self, x: u64) -> usize {
        let v = (self.a as u128 * x as u128 + self.b as u128) % MERSENNE_61 as u128;
        // Reducing the field value directly keeps it nearly linear in x, so
        // arithmetic progressions of indices pile into one bucket. The mixer
        // is a bijection and leaves pairwise independence intact.
        (mix64(v as u64) % self.range as u64) as usize
    }

    pub fn range(&self) -> usize {
        self.range
    }
}

/// The splitmix64 finalizer.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Bucket multiplier from the collision analysis: `u = 32·s′` with `s′ = 8s`.
pub const PROOF_BUCKET_FACTOR: usize = 256;

/// Shape of a [`LevelHashSketch`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelHashConfig {
    pub delta: usize,
    /// Target width `s`; the recovered support has width at most `2s`.
    pub s: usize,
    /// Buckets `u` per hashed level.
    pub buckets: usize,
    pub seed: u64,
}

impl LevelHashConfig {
    pub fn with_proof_constants(delta: usize, s: usize, seed: u64) -> Self {
        Self { delta, s, buckets: PROOF_BUCKET_FACTOR * s, seed }
    }
}

/// Per-level bucket sums for the fine levels plus raw values for the coarse
/// ones. Levels `0..explicit_from` are hashed; a level is stored raw when it
/// has at most `max(2s, u)` cells.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelHashSketch {
    config: LevelHashConfig,
    grid: Grid,
    explicit_from: u32,
    hashes: Vec<PairwiseHash>,
}

impl LevelHashSketch {
    pub fn new(config: LevelHashConfig) -> Result<Self> {
        let grid = Grid::new(config.delta)?;
        if config.s == 0 || config.buckets == 0 {
            return invalid("support sketch needs s >= 1 and at least one bucket");
        }
        let raw_limit = (2 * config.s).max(config.buckets);
        let explicit_from = (0..=grid.top_level()).find(|&i| grid.cells_at(i) <= raw_limit).unwrap_or(0);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let hashes = (0..explicit_from).map(|_| PairwiseHash::random(&mut rng, config.buckets)).collect();
        Ok(Self { config, grid, explicit_from, hashes })
    }

    pub fn config(&self) -> LevelHashConfig {
        self.config
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn s(&self) -> usize {
        self.config.s
    }

    /// Lowest level stored raw; levels below it are hashed.
    pub fn explicit_from(&self) -> u32 {
        self.explicit_from
    }

    pub fn hashed_levels(&self) -> usize {
        self.explicit_from as usize
    }

    /// Cells stored raw: indices `0..explicit_len()`.
    pub fn explicit_len(&self) -> usize {
        self.grid.level_offset(self.explicit_from) + self.grid.cells_at(self.explicit_from)
    }

    pub fn rows(&self) -> usize {
        self.explicit_len() + self.hashed_levels() * self.config.buckets
    }

    fn hashed_row(&self, index: usize, level: u32) -> usize {
        let local = index - self.grid.level_offset(level);
        self.explicit_len() + level as usize * self.config.buckets + self.hashes[level as usize].apply(local as u64)
    }

    /// Measurement row that cell `index` contributes to.
    pub fn row_of(&self, index: usize) -> usize {
        let level = self.grid.level_of(index);
        if level >= self.explicit_from {
            index
        } else {
            self.hashed_row(index, level)
        }
    }

    pub fn apply(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.grid.t(), "vector length must equal t");
        let mut out = vec![0.0; self.rows()];
        out[..self.explicit_len()].copy_from_slice(&y[..self.explicit_len()]);
        for level in 0..self.explicit_from {
            for index in self.grid.level_range(level) {
                if y[index] != 0.0 {
                    out[self.hashed_row(index, level)] += y[index];
                }
            }
        }
        out
    }

    /// Bucket value of cell `index`; exact on raw levels.
    pub fn estimate(&self, measurements: &[f64], index: usize) -> f64 {
        measurements[self.row_of(index)]
    }
}

/// Quantities from the per-level selection analysis, computed against the
/// true vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelDiagnostic {
    pub level: u32,
    pub candidates: usize,
    pub kept: usize,
    /// Largest true value among candidates that were not kept.
    pub skipped_max: f64,
    /// Mass of the parent level outside the parents kept there.
    pub parent_miss: f64,
    /// `s`-th largest true value among the kept cells.
    pub kept_sth: f64,
}

impl LevelDiagnostic {
    pub fn threshold(&self, s: usize) -> f64 {
        (self.parent_miss / (4 * s) as f64).max(2.0 * self.kept_sth)
    }

    pub fn holds(&self, s: usize) -> bool {
        self.skipped_max <= self.threshold(s) * (1.0 + 1e-12) + 1e-12
    }
}

/// Top-down support search; the result has width at most `2s` on every level
/// with more than `2s` cells.
pub fn find_support(sketch: &LevelHashSketch, measurements: &[f64]) -> Result<TreeSupport> {
    Ok(find_support_traced(sketch, measurements, None)?.0)
}

/// [`find_support`] plus per-level diagnostics when the true vector is given.
pub fn find_support_traced(
    sketch: &LevelHashSketch,
    measurements: &[f64],
    truth: Option<&[f64]>,
) -> Result<(TreeSupport, Vec<LevelDiagnostic>)> {
    if measurements.len() != sketch.rows() {
        return invalid(format!("{} measurements for a {}-row sketch", measurements.len(), sketch.rows()));
    }
    if let Some(y) = truth {
        if y.len() != sketch.grid.t() {
            return invalid("true vector length must equal t");
        }
    }
    let grid = sketch.grid;
    let width = 2 * sketch.s();
    let mut support = TreeSupport::empty(grid);
    let mut diagnostics = Vec::new();
    let mut level = grid.top_level();
    // Coarse levels with at most 2s cells are taken whole.
    loop {
        if grid.cells_at(level) > width {
            break;
        }
        for index in grid.level_range(level) {
            support.insert_with_ancestors(index);
        }
        if level == 0 {
            return Ok((support.with_width_bound(width), diagnostics));
        }
        level -= 1;
    }
    let mut parents: Vec<usize> = grid.level_range(level + 1).collect();
    loop {
        let mut candidates: Vec<(usize, f64)> = parents
            .iter()
            .flat_map(|&p| grid.child_indices(p).expect("parents lie above level 0"))
            .map(|c| (c, sketch.estimate(measurements, c)))
            .collect();
        candidates.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let kept: Vec<usize> = candidates.iter().take(width).map(|c| c.0).collect();
        if let Some(y) = truth {
            diagnostics.push(diagnose(grid, y, level, &parents, &candidates, &kept, sketch.s()));
        }
        for &c in &kept {
            support.insert_with_ancestors(c);
        }
        if level == 0 {
            break;
        }
        level -= 1;
        parents = kept;
    }
    Ok((support.with_width_bound(width), diagnostics))
}

fn diagnose(
    grid: Grid,
    y: &[f64],
    level: u32,
    parents: &[usize],
    candidates: &[(usize, f64)],
    kept: &[usize],
    s: usize,
) -> LevelDiagnostic {
    let skipped_max = candidates[kept.len()..].iter().map(|c| y[c.0]).fold(0.0, f64::max);
    let parent_level = grid.level_range(level + 1);
    let parent_total: f64 = y[parent_level].iter().map(|v| v.abs()).sum();
    let parent_kept: f64 = parents.iter().map(|&p| y[p].abs()).sum();
    let mut kept_values: Vec<f64> = kept.iter().map(|&c| y[c]).collect();
    kept_values.sort_by(|a, b| b.total_cmp(a));
    LevelDiagnostic {
        level,
        candidates: candidates.len(),
        kept: kept.len(),
        skipped_max,
        parent_miss: (parent_total - parent_kept).max(0.0),
        kept_sth: kept_values.get(s - 1).copied().unwrap_or(0.0),
    }
}

/// Shape of a [`SetQuerySketch`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SetQueryConfig {
    /// Largest support that may be queried.
    pub max_support: usize,
    /// Buckets per support element in each repetition.
    pub bucket_factor: usize,
    pub repetitions: usize,
    pub seed: u64,
}

/// Signed hashing of the cells `covered_from..t` into `bucket_factor ·
/// max_support` buckets, repeated. Queries are exact when the vector lives on
/// the queried set and peeling resolves every index.
#[derive(Clone, Debug, PartialEq)]
pub struct SetQuerySketch {
    config: SetQueryConfig,
    dim: usize,
    covered_from: usize,
    buckets: usize,
    hashes: Vec<(PairwiseHash, PairwiseHash)>,
}

impl SetQuerySketch {
    pub fn new(config: SetQueryConfig, dim: usize, covered_from: usize) -> Result<Self> {
        if config.repetitions == 0 || config.bucket_factor == 0 {
            return invalid("set query needs at least one repetition and one bucket per element");
        }
        if covered_from > dim {
            return invalid("covered range starts past the vector");
        }
        let buckets = config.bucket_factor * config.max_support.max(1);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let hashes = (0..config.repetitions)
            .map(|_| (PairwiseHash::random(&mut rng, buckets), PairwiseHash::random(&mut rng, 2)))
            .collect();
        Ok(Self { config, dim, covered_from, buckets, hashes })
    }

    pub fn config(&self) -> SetQueryConfig {
        self.config
    }

    pub fn rows(&self) -> usize {
        if self.covered_from == self.dim {
            0
        } else {
            self.buckets * self.config.repetitions
        }
    }

    pub fn covered(&self) -> std::ops::Range<usize> {
        self.covered_from..self.dim
    }

    #[inline]
    fn locate(&self, rep: usize, index: usize) -> (usize, f64) {
        let (h, sign) = &self.hashes[rep];
        let x = (index - self.covered_from) as u64;
        let sign = if sign.apply(x) == 0 { 1.0 } else { -1.0 };
        (rep * self.buckets + h.apply(x), sign)
    }

    pub fn apply(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.dim, "vector length must match the set query sketch");
        let mut out = vec![0.0; self.rows()];
        if out.is_empty() {
            return out;
        }
        for index in self.covered() {
            if y[index] != 0.0 {
                for rep in 0..self.config.repetitions {
                    let (row, sign) = self.locate(rep, index);
                    out[row] += sign * y[index];
                }
            }
        }
        out
    }

    /// Median-of-repetitions estimates of `y` on `support`.
    pub fn query(&self, measurements: &[f64], support: &[usize]) -> Result<Vec<f64>> {
        if measurements.len() != self.rows() {
            return invalid(format!("{} measurements for a {}-row set query sketch", measurements.len(), self.rows()));
        }
        if support.len() > self.config.max_support {
            return invalid(format!("support of size {} exceeds the limit {}", support.len(), self.config.max_support));
        }
        if let Some(&bad) = support.iter().find(|&&i| !self.covered().contains(&i)) {
            return invalid(format!("index {bad} is not covered by the set query sketch"));
        }
        // Peeling: an index alone among the unresolved ones in some bucket is
        // read from that bucket and subtracted everywhere. Indices still
        // tangled at the end fall back to the median over repetitions.
        let reps = self.config.repetitions;
        let slots: Vec<Vec<(usize, f64)>> =
            support.iter().map(|&i| (0..reps).map(|rep| self.locate(rep, i)).collect()).collect();
        let mut residual = measurements.to_vec();
        let mut load = vec![0usize; self.rows()];
        for cells in &slots {
            for &(row, _) in cells {
                load[row] += 1;
            }
        }
        let mut estimate = vec![0.0; support.len()];
        let mut open: Vec<usize> = (0..support.len()).collect();
        let mut votes = Vec::with_capacity(reps);
        loop {
            let before = open.len();
            open.retain(|&j| {
                votes.clear();
                votes.extend(slots[j].iter().filter(|(row, _)| load[*row] == 1).map(|&(row, sign)| sign * residual[row]));
                if votes.is_empty() {
                    return true;
                }
                let v = median(&mut votes);
                estimate[j] = v;
                for &(row, sign) in &slots[j] {
                    residual[row] -= sign * v;
                    load[row] -= 1;
                }
                false
            });
            if open.is_empty() || open.len() == before {
                break;
            }
        }
        for &j in &open {
            votes.clear();
            votes.extend(slots[j].iter().map(|&(row, sign)| sign * residual[row]));
            estimate[j] = median(&mut votes);
        }
        Ok(estimate)
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Parameters of the combined randomized sketch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomizedConfig {
    pub delta: usize,
    pub s: usize,
    /// `u = bucket_factor · s` buckets per hashed level.
    pub bucket_factor: usize,
    /// Set-query buckets per support element.
    pub query_factor: usize,
    pub repetitions: usize,
    pub seed: u64,
}

impl RandomizedConfig {
    pub fn new(delta: usize, s: usize, seed: u64) -> Self {
        Self { delta, s, bucket_factor: PROOF_BUCKET_FACTOR, query_factor: 8, repetitions: 3, seed }
    }
}

/// Support sketch and set-query sketch stacked; measurements are the support
/// rows followed by the set-query rows.
#[derive(Clone, Debug, PartialEq)]
pub struct RandomizedSketch {
    pub config: RandomizedConfig,
    pub support: LevelHashSketch,
    pub query: SetQuerySketch,
}

impl RandomizedSketch {
    pub fn new(config: RandomizedConfig) -> Result<Self> {
        let support = LevelHashSketch::new(LevelHashConfig {
            delta: config.delta,
            s: config.s,
            buckets: config.bucket_factor * config.s,
            seed: config.seed,
        })?;
        let max_support = 2 * config.s * support.hashed_levels();
        let query = SetQuerySketch::new(
            SetQueryConfig {
                max_support,
                bucket_factor: config.query_factor,
                repetitions: config.repetitions,
                seed: config.seed ^ 0x5e7_0be5,
            },
            support.grid().t(),
            support.explicit_len(),
        )?;
        Ok(Self { config, support, query })
    }

    pub fn grid(&self) -> Grid {
        self.support.grid()
    }

    pub fn rows(&self) -> usize {
        self.support.rows() + self.query.rows()
    }

    pub fn apply(&self, y: &[f64]) -> Vec<f64> {
        let mut out = self.support.apply(y);
        out.extend(self.query.apply(y));
        out
    }

    fn split<'a>(&self, measurements: &'a [f64]) -> Result<(&'a [f64], &'a [f64])> {
        if measurements.len() != self.rows() {
            return invalid(format!("{} measurements for a {}-row sketch", measurements.len(), self.rows()));
        }
        Ok(measurements.split_at(self.support.rows()))
    }
}

#[derive(Clone, Debug)]
pub struct RandomizedRecovery {
    pub y: Vec<f64>,
    pub support: TreeSupport,
}

/// Support search followed by set query. Estimates are clamped at zero since
/// the model is nonnegative.
pub fn randomized_l1l1_recover(sketch: &RandomizedSketch, measurements: &[f64]) -> Result<RandomizedRecovery> {
    let (support_meas, query_meas) = sketch.split(measurements)?;
    let support = find_support(&sketch.support, support_meas)?;
    let explicit = sketch.support.explicit_len();
    let mut y = vec![0.0; sketch.grid().t()];
    let indices = support.indices();
    let (raw, hashed): (Vec<usize>, Vec<usize>) = indices.into_iter().partition(|&i| i < explicit);
    for i in raw {
        y[i] = support_meas[i].max(0.0);
    }
    for (i, v) in hashed.iter().zip(sketch.query.query(query_meas, &hashed)?) {
        y[*i] = v.max(0.0);
    }
    Ok(RandomizedRecovery { y, support })
}

/// `Some(message)` when `k` is below `log₂ log₂ n`, the regime where the
/// per-level failure probabilities are no longer small.
pub fn small_k_warning(k: usize, n: usize) -> Option<String> {
    let bound = (n.max(4) as f64).log2().log2();
    ((k as f64) < bound).then(|| {
        format!("k = {k} is below log2 log2 n = {bound:.2}; the randomized scheme's success rate may degrade")
    })
}

/// Greedy approximation of the closest point of the model with width `s`:
/// keep the `s` largest children of the kept cells per level, clamp at zero,
/// then scale children down wherever a value is below twice its children's sum.
pub fn project_to_model(grid: Grid, y: &[f64], s: usize) -> Vec<f64> {
    assert_eq!(y.len(), grid.t(), "vector length must equal t");
    let mut out = vec![0.0; grid.t()];
    if s == 0 {
        return out;
    }
    out[0] = y[0].max(0.0);
    let mut kept = vec![0usize];
    for _ in 0..grid.top_level() {
        let mut candidates: Vec<usize> =
            kept.iter().flat_map(|&p| grid.child_indices(p).expect("not a leaf")).collect();
        candidates.sort_by(|&a, &b| y[b].total_cmp(&y[a]).then(a.cmp(&b)));
        candidates.truncate(s);
        candidates.retain(|&c| y[c] > 0.0);
        for &c in &candidates {
            out[c] = y[c];
        }
        kept = candidates;
        if kept.is_empty() {
            break;
        }
    }
    for q in 0..grid.level_offset(0) {
        let children = grid.child_indices(q).expect("not a leaf");
        let sum: f64 = children.iter().map(|&c| out[c]).sum();
        if 2.0 * sum > out[q] {
            let f = out[q] / (2.0 * sum);
            for c in children {
                out[c] *= f;
            }
        }
    }
    out
}

/// `min_{y′} ‖y − y′‖₁` estimates over the model with width `s`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelBenchmark {
    pub greedy: f64,
    pub planted: Option<f64>,
}

impl ModelBenchmark {
    pub fn value(&self) -> f64 {
        self.planted.map_or(self.greedy, |p| p.min(self.greedy))
    }
}

/// Benchmark from [`project_to_model`], optionally improved by a known model
/// member `planted`.
pub fn model_benchmark(grid: Grid, y: &[f64], s: usize, planted: Option<&[f64]>) -> ModelBenchmark {
    let l1 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| (p - q).abs()).sum::<f64>();
    ModelBenchmark { greedy: l1(y, &project_to_model(grid, y, s)), planted: planted.map(|p| l1(y, p)) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pyramid::pyramid_transform;
    use crate::sparsemodel::value_constraints_hold;
    use crate::synth::{generate, GenSpec, ImageKind};
    use crate::PyramidCoeffs;

    fn cluster_pyramid(delta: usize, k: usize, seed: u64) -> Vec<f64> {
        let x = generate(&GenSpec::new(ImageKind::ClustersPlusNoise, delta, k, 1.5, seed)).unwrap();
        pyramid_transform(&x).into_values()
    }

    #[test]
    fn pairwise_hash_is_in_range_and_spread() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let h = PairwiseHash::random(&mut rng, 10);
        let mut counts = [0usize; 10];
        for x in 0..10_000 {
            counts[h.apply(x)] += 1;
        }
        assert!(counts.iter().all(|&c| (700..1300).contains(&c)), "{counts:?}");
    }

    #[test]
    fn bucket_sums_are_exact_and_overestimate() {
        let grid = Grid::new(32).unwrap();
        let sk = LevelHashSketch::new(LevelHashConfig { delta: 32, s: 4, buckets: 32, seed: 1 }).unwrap();
        assert_eq!(sk.explicit_from(), 3);
        assert_eq!(sk.rows(), 21 + 3 * 32);
        let y = cluster_pyramid(32, 4, 0);
        let b = sk.apply(&y);
        let mut sums = vec![0.0; sk.rows()];
        for (i, v) in y.iter().enumerate() {
            sums[sk.row_of(i)] += v;
        }
        for (a, b) in sums.iter().zip(&b) {
            assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
        }
        for i in 0..grid.t() {
            assert!(sk.estimate(&b, i) >= y[i] - 1e-9);
        }
    }

    #[test]
    fn zero_vector_loses_nothing() {
        let sk = LevelHashSketch::new(LevelHashConfig { delta: 16, s: 2, buckets: 16, seed: 0 }).unwrap();
        let s = find_support(&sk, &vec![0.0; sk.rows()]).unwrap();
        assert!(s.is_valid_tree());
        assert!(s.max_width() <= 4 || s.grid().cells_at(s.grid().top_level()) <= 4);
    }

    #[test]
    fn support_has_bounded_width() {
        let grid = Grid::new(32).unwrap();
        let y = cluster_pyramid(32, 4, 3);
        let sk = LevelHashSketch::new(LevelHashConfig { delta: 32, s: 3, buckets: 24, seed: 9 }).unwrap();
        let s = find_support(&sk, &sk.apply(&y)).unwrap();
        assert!(s.is_valid_tree());
        for level in 0..=grid.top_level() {
            assert!(s.width_at(level) <= 6);
        }
    }

    #[test]
    fn large_width_covers_everything() {
        let grid = Grid::new(8).unwrap();
        let sk = RandomizedSketch::new(RandomizedConfig::new(8, 64, 0)).unwrap();
        assert_eq!(sk.support.hashed_levels(), 0);
        let y = cluster_pyramid(8, 2, 1);
        let rec = randomized_l1l1_recover(&sk, &sk.apply(&y)).unwrap();
        assert_eq!(rec.support.len(), grid.t());
        assert_eq!(rec.y, y);
    }

    #[test]
    fn set_query_is_exact_without_collisions() {
        let sq = SetQuerySketch::new(SetQueryConfig { max_support: 4, bucket_factor: 64, repetitions: 3, seed: 5 }, 100, 20)
            .unwrap();
        let mut y = vec![0.0; 100];
        y[5] = 7.0; // outside the covered range, never seen
        y[30] = 2.0;
        y[77] = -1.5;
        let est = sq.query(&sq.apply(&y), &[30, 77]).unwrap();
        assert_eq!(est, vec![2.0, -1.5]);
        assert!(sq.query(&sq.apply(&y), &[5]).is_err());
        assert!(sq.query(&sq.apply(&y), &[21, 22, 23, 24, 25]).is_err());
        assert_eq!(sq.query(&vec![0.0; sq.rows()], &[40]).unwrap(), vec![0.0]);
    }

    #[test]
    fn selection_bound_holds_at_full_bucket_count() {
        let mut held = 0;
        for seed in 0..40 {
            let y = cluster_pyramid(64, 4, seed);
            let sk = LevelHashSketch::new(LevelHashConfig::with_proof_constants(64, 4, seed)).unwrap();
            let (_, diag) = find_support_traced(&sk, &sk.apply(&y), Some(&y)).unwrap();
            assert!(!diag.is_empty());
            if diag.iter().all(|d| d.holds(4)) {
                held += 1;
            }
        }
        assert!(held >= 39, "{held}/40");
    }

    #[test]
    fn projection_lands_in_the_model() {
        let grid = Grid::new(16).unwrap();
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let y: Vec<f64> = (0..grid.t()).map(|_| rng.random_range(-1.0..4.0)).collect();
            let p = project_to_model(grid, &y, 3);
            let pc = PyramidCoeffs::from_values(grid, p.clone()).unwrap();
            assert!(value_constraints_hold(grid, pc.values()));
            let supp = TreeSupport::closure_of(grid, (0..grid.t()).filter(|&i| p[i] != 0.0));
            assert!(supp.max_width() <= 3);
            assert_eq!(supp.len(), p.iter().filter(|v| **v != 0.0).count());
        }
    }

    #[test]
    fn pyramid_vectors_are_their_own_projection_at_full_width() {
        let grid = Grid::new(8).unwrap();
        let y = cluster_pyramid(8, 2, 4);
        let b = model_benchmark(grid, &y, 64, Some(&y));
        assert!(b.greedy.abs() < 1e-9);
        assert_eq!(b.value(), 0.0);
    }

    #[test]
    fn warning_for_tiny_k() {
        assert!(small_k_warning(1, 1024).is_some());
        assert!(small_k_warning(4, 1024).is_none());
    }
}
