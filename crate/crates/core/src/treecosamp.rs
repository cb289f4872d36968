//! Dense Gaussian sketches and model-based CoSaMP.
//!
//! The iteration is the usual one: form the proxy `Aᵀr`, merge the model
//! support of the proxy with the current support, fit by least squares on the
//! merged columns, and prune back into the model. The model enters only
//! through a [`SupportProjector`], so the same loop serves tree-sparse
//! pyramid coefficients, plain `K`-sparse vectors and Haar supernode trees.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::grid::Grid;
use crate::haar::{supernode_coefficients, supernode_grid, supernode_of};
use crate::sparsemodel::{best_subtree, top_k_support, NodeScore};

/// Reproducible description of a [`DenseSketch`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenseSketchSpec {
    pub rows: usize,
    pub cols: usize,
    pub seed: u64,
}

/// An `m × t` matrix of i.i.d. `N(0, 1/m)` entries drawn from a seeded stream.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseSketch {
    spec: DenseSketchSpec,
    /// Row-major.
    entries: Vec<f64>,
}

impl DenseSketch {
    pub fn new(spec: DenseSketchSpec) -> Result<Self> {
        if spec.rows == 0 || spec.cols == 0 {
            return invalid(format!("sketch must be non-empty, got {}x{}", spec.rows, spec.cols));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let scale = 1.0 / (spec.rows as f64).sqrt();
        let entries = (0..spec.rows * spec.cols)
            .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
            .collect();
        Ok(Self { spec, entries })
    }

    pub fn spec(&self) -> DenseSketchSpec {
        self.spec
    }

    pub fn rows(&self) -> usize {
        self.spec.rows
    }

    pub fn cols(&self) -> usize {
        self.spec.cols
    }

    #[inline]
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.spec.cols + j]
    }

    /// `Ay`.
    pub fn apply(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.cols(), "vector length must match sketch columns");
        let nz: Vec<(usize, f64)> = y.iter().copied().enumerate().filter(|(_, v)| *v != 0.0).collect();
        self.entries
            .chunks(self.cols())
            .map(|row| nz.iter().map(|&(j, v)| row[j] * v).sum())
            .collect()
    }

    /// `Aᵀr`.
    pub fn apply_transpose(&self, r: &[f64]) -> Vec<f64> {
        assert_eq!(r.len(), self.rows(), "vector length must match sketch rows");
        let mut out = vec![0.0; self.cols()];
        for (row, &ri) in self.entries.chunks(self.cols()).zip(r) {
            if ri == 0.0 {
                continue;
            }
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * ri;
            }
        }
        out
    }

    /// Mean ℓ2 norm of the columns.
    pub fn mean_column_norm(&self) -> f64 {
        let t = self.cols();
        let mut sq = vec![0.0; t];
        for row in self.entries.chunks(t) {
            for (s, a) in sq.iter_mut().zip(row) {
                *s += a * a;
            }
        }
        sq.iter().map(|s| s.sqrt()).sum::<f64>() / t as f64
    }

    fn submatrix(&self, cols: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows(), cols.len(), |i, j| self.entry(i, cols[j]))
    }
}

/// `m = ⌈c_rows · K⌉` rows over `t` columns; `m > t` is rejected.
pub fn build_dense_sketch(t: usize, budget: usize, c_rows: f64, seed: u64) -> Result<DenseSketch> {
    let rows = (c_rows * budget as f64).ceil() as usize;
    if rows > t {
        return invalid(format!("{rows} rows exceed the {t} columns"));
    }
    DenseSketch::new(DenseSketchSpec { rows, cols: t, seed })
}

/// Model projection used by CoSaMP: the support of the best model
/// approximation of a vector.
pub trait SupportProjector: Send + Sync {
    /// Length of the vectors this projector accepts.
    fn dim(&self) -> usize;

    /// Support of the best ℓ2 approximation with budget `budget`.
    fn support(&self, v: &[f64], budget: usize) -> Vec<usize>;

    /// Support of the best ℓ1 approximation with budget `budget`.
    fn support_l1(&self, v: &[f64], budget: usize) -> Vec<usize>;

    /// `min_{y′ in model} ‖v − y′‖₁`.
    fn l1_model_error(&self, v: &[f64], budget: usize) -> f64 {
        let keep = self.support_l1(v, budget);
        let mut mask = vec![false; v.len()];
        for i in keep {
            mask[i] = true;
        }
        v.iter().zip(&mask).filter(|(_, &m)| !m).map(|(x, _)| x.abs()).sum()
    }
}

/// Rooted subtrees of the cell tree (pyramid coefficients).
#[derive(Clone, Copy, Debug)]
pub struct TreeProjector {
    pub grid: Grid,
}

impl TreeProjector {
    fn project(&self, v: &[f64], budget: usize, score: NodeScore) -> Vec<usize> {
        let scores: Vec<f64> = v.iter().map(|&x| score.of(x)).collect();
        best_subtree(self.grid, &scores, budget)
            .indices()
            .into_iter()
            .filter(|&i| v[i] != 0.0)
            .collect()
    }
}

impl SupportProjector for TreeProjector {
    fn dim(&self) -> usize {
        self.grid.t()
    }

    fn support(&self, v: &[f64], budget: usize) -> Vec<usize> {
        self.project(v, budget, NodeScore::Energy)
    }

    fn support_l1(&self, v: &[f64], budget: usize) -> Vec<usize> {
        self.project(v, budget, NodeScore::Magnitude)
    }
}

/// Plain `K`-sparse vectors.
#[derive(Clone, Copy, Debug)]
pub struct SparseProjector {
    pub dim: usize,
}

impl SupportProjector for SparseProjector {
    fn dim(&self) -> usize {
        self.dim
    }

    fn support(&self, v: &[f64], budget: usize) -> Vec<usize> {
        top_k_support(v, budget)
    }

    fn support_l1(&self, v: &[f64], budget: usize) -> Vec<usize> {
        top_k_support(v, budget)
    }
}

/// Rooted subtrees of Haar supernodes; `budget` counts supernodes.
#[derive(Clone, Copy, Debug)]
pub struct SupernodeProjector {
    /// The image grid (`n` coefficients).
    pub grid: Grid,
}

impl SupernodeProjector {
    fn project(&self, v: &[f64], budget: usize, score: NodeScore) -> Vec<usize> {
        let Some(sg) = supernode_grid(self.grid) else {
            return if v[0] != 0.0 && budget > 0 { vec![0] } else { vec![] };
        };
        let mut scores = vec![0.0; sg.t()];
        for (i, &x) in v.iter().enumerate() {
            scores[supernode_of(i)] += score.of(x);
        }
        let mut out: Vec<usize> = best_subtree(sg, &scores, budget)
            .indices()
            .into_iter()
            .flat_map(supernode_coefficients)
            .filter(|&i| v[i] != 0.0)
            .collect();
        out.sort_unstable();
        out
    }
}

impl SupportProjector for SupernodeProjector {
    fn dim(&self) -> usize {
        self.grid.n()
    }

    fn support(&self, v: &[f64], budget: usize) -> Vec<usize> {
        self.project(v, budget, NodeScore::Energy)
    }

    fn support_l1(&self, v: &[f64], budget: usize) -> Vec<usize> {
        self.project(v, budget, NodeScore::Magnitude)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CosampOptions {
    pub max_iters: usize,
    /// Stop once the residual drops by less than this fraction.
    pub tolerance: f64,
    /// Budget multiplier for both the merge and the prune projection.
    pub support_factor: usize,
    /// The signal is known to be integer valued: try rounding each iterate
    /// and stop when the rounded iterate explains the measurements.
    pub integer_signal: bool,
}

impl Default for CosampOptions {
    fn default() -> Self {
        Self { max_iters: 30, tolerance: 1e-6, support_factor: 2, integer_signal: false }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CosampResult {
    /// Iterate with the smallest residual.
    pub y: Vec<f64>,
    pub iterations: usize,
    pub residual_norm: f64,
    /// Residual norm after the first iteration.
    pub first_residual_norm: f64,
    /// Some least-squares step fell back to a ridge solve.
    pub regularized: bool,
    pub rounded: bool,
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn residual(a: &DenseSketch, b: &[f64], y: &[f64]) -> Vec<f64> {
    a.apply(y).iter().zip(b).map(|(ay, bi)| bi - ay).collect()
}

/// Least squares on the columns `cols`; falls back to a ridge solve when the
/// system is rank deficient. Returns the solution and whether it fell back.
pub fn least_squares(a: &DenseSketch, cols: &[usize], b: &[f64]) -> (Vec<f64>, bool) {
    if cols.is_empty() {
        return (Vec::new(), false);
    }
    let m = a.submatrix(cols);
    let rhs = DVector::from_column_slice(b);
    if cols.len() <= a.rows() {
        let qr = m.clone().qr();
        let r = qr.r();
        let diag: Vec<f64> = (0..cols.len()).map(|i| r[(i, i)].abs()).collect();
        let max = diag.iter().copied().fold(0.0, f64::max);
        let min = diag.iter().copied().fold(f64::INFINITY, f64::min);
        if max > 0.0 && min > 1e-10 * max {
            let qtb = qr.q().transpose() * &rhs;
            if let Some(z) = r.solve_upper_triangular(&qtb) {
                return (z.iter().copied().collect(), false);
            }
        }
    }
    let gram = m.transpose() * &m;
    let trace = gram.trace();
    let lambda = if trace > 0.0 { 1e-10 * trace } else { 1e-300 };
    let reg = &gram + DMatrix::identity(cols.len(), cols.len()) * lambda;
    let atb = m.transpose() * rhs;
    let z = match reg.clone().cholesky() {
        Some(ch) => ch.solve(&atb),
        None => reg.lu().solve(&atb).unwrap_or_else(|| DVector::zeros(cols.len())),
    };
    (z.iter().copied().collect(), true)
}

fn merge(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut out: Vec<usize> = a.iter().chain(b).copied().collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// Model-based CoSaMP with budget `K`; the output lies in the model with
/// budget `support_factor · K`.
pub fn model_cosamp(
    a: &DenseSketch,
    b: &[f64],
    budget: usize,
    projector: &dyn SupportProjector,
    opts: &CosampOptions,
) -> Result<CosampResult> {
    if projector.dim() != a.cols() {
        return invalid(format!("projector dimension {} != sketch columns {}", projector.dim(), a.cols()));
    }
    if b.len() != a.rows() {
        return invalid(format!("{} measurements for a {}-row sketch", b.len(), a.rows()));
    }
    let t = a.cols();
    let wide = opts.support_factor.max(1) * budget;
    let b_norm = norm2(b);
    let mut y = vec![0.0; t];
    let mut result = CosampResult {
        y: y.clone(),
        iterations: 1,
        residual_norm: b_norm,
        first_residual_norm: b_norm,
        regularized: false,
        rounded: false,
    };
    if b_norm == 0.0 {
        return Ok(result);
    }
    let mut r = b.to_vec();
    let mut prev = b_norm;
    let mut best = f64::INFINITY;
    for it in 1..=opts.max_iters {
        result.iterations = it;
        let proxy = a.apply_transpose(&r);
        let current: Vec<usize> = (0..t).filter(|&i| y[i] != 0.0).collect();
        let omega = merge(&projector.support(&proxy, wide), &current);
        let (z, reg) = least_squares(a, &omega, b);
        result.regularized |= reg;
        let mut full = vec![0.0; t];
        for (&i, &v) in omega.iter().zip(&z) {
            full[i] = v;
        }
        let mut next = vec![0.0; t];
        for i in projector.support(&full, wide) {
            next[i] = full[i];
        }
        if opts.integer_signal {
            let rounded: Vec<f64> = next.iter().map(|v| v.round()).collect();
            let rr = residual(a, b, &rounded);
            if norm2(&rr) <= 1e-9 * b_norm {
                result.y = rounded;
                result.residual_norm = norm2(&rr);
                result.rounded = true;
                if it == 1 {
                    result.first_residual_norm = result.residual_norm;
                }
                return Ok(result);
            }
        }
        r = residual(a, b, &next);
        let rn = norm2(&r);
        if it == 1 {
            result.first_residual_norm = rn;
        }
        if rn < best {
            best = rn;
            result.y.clone_from(&next);
            result.residual_norm = rn;
        }
        y = next;
        if rn <= 1e-13 * b_norm || prev - rn < opts.tolerance * prev {
            break;
        }
        prev = rn;
    }
    Ok(result)
}

/// ℓ1/ℓ1 recovery over the tree model with budget `K`.
///
/// Runs [`model_cosamp`] with budget `K`, so the output lies in the model with
/// budget `2K`; the sketch should be built for `2K` (for example
/// `m = c_rows · 2K`).
pub fn l1l1_tree_recover(
    a: &DenseSketch,
    b: &[f64],
    budget: usize,
    projector: &dyn SupportProjector,
    opts: &CosampOptions,
) -> Result<CosampResult> {
    model_cosamp(a, b, budget, projector, opts)
}

/// Largest `|‖Az‖₂² − 1|` over `trials` random unit vectors with `sparsity`
/// nonzeros: an empirical stand-in for the restricted isometry constant.
pub fn estimate_rip_constant(a: &DenseSketch, sparsity: usize, trials: usize, seed: u64) -> f64 {
    let t = a.cols();
    let sparsity = sparsity.clamp(1, t);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let mut z = vec![0.0; t];
        for i in rand::seq::index::sample(&mut rng, t, sparsity) {
            z[i] = rng.sample::<f64, _>(StandardNormal);
        }
        let nz = norm2(&z);
        if nz == 0.0 {
            continue;
        }
        z.iter_mut().for_each(|v| *v /= nz);
        let az = norm2(&a.apply(&z));
        worst = worst.max((az * az - 1.0).abs());
    }
    worst
}

/// Both sides of `‖Az‖₂ ≤ √(1+δ)(‖z_S‖₂ + ‖z‖₁/√s)`, `S` the top `s` entries.
pub fn l2l1_sides(a: &DenseSketch, z: &[f64], s: usize, delta: f64) -> (f64, f64) {
    let lhs = norm2(&a.apply(z));
    let top = top_k_support(z, s);
    let zs = top.iter().map(|&i| z[i] * z[i]).sum::<f64>().sqrt();
    let l1: f64 = z.iter().map(|v| v.abs()).sum();
    let rhs = (1.0 + delta).sqrt() * (zs + l1 / (s.max(1) as f64).sqrt());
    (lhs, rhs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::CellId;
    use crate::sparsemodel::{model_contains, ModelKind, ModelSpec};
    use crate::PyramidCoeffs;

    fn random_tree_signal(g: Grid, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut tree = crate::TreeSupport::empty(g);
        tree.insert_with_ancestors(0);
        while tree.len() < k {
            let members = tree.indices();
            let parent = members[rng.random_range(0..members.len())];
            if let Some(ch) = g.child_indices(parent) {
                let c = ch[rng.random_range(0..4)];
                if !tree.contains(c) {
                    tree.insert_with_ancestors(c);
                }
            }
        }
        let mut y = vec![0.0; g.t()];
        for i in tree.indices() {
            y[i] = rng.sample::<f64, _>(StandardNormal);
        }
        y
    }

    #[test]
    fn sketch_is_reproducible() {
        let a = build_dense_sketch(21, 4, 4.0, 7).unwrap();
        assert_eq!((a.rows(), a.cols()), (16, 21));
        assert_eq!(a, build_dense_sketch(21, 4, 4.0, 7).unwrap());
        assert_ne!(a, build_dense_sketch(21, 4, 4.0, 8).unwrap());
        assert!(build_dense_sketch(21, 4, 8.0, 7).is_err());
    }

    #[test]
    fn columns_have_unit_norm_on_average() {
        let a = DenseSketch::new(DenseSketchSpec { rows: 64, cols: 341, seed: 1 }).unwrap();
        let m = a.mean_column_norm();
        assert!((0.8..=1.2).contains(&m), "{m}");
    }

    #[test]
    fn transpose_is_adjoint() {
        let a = DenseSketch::new(DenseSketchSpec { rows: 5, cols: 9, seed: 3 }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let y: Vec<f64> = (0..9).map(|_| rng.random()).collect();
        let r: Vec<f64> = (0..5).map(|_| rng.random()).collect();
        let lhs: f64 = a.apply(&y).iter().zip(&r).map(|(a, b)| a * b).sum();
        let rhs: f64 = a.apply_transpose(&r).iter().zip(&y).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn zero_signal_stops_at_once() {
        let g = Grid::new(8).unwrap();
        let a = build_dense_sketch(g.t(), 4, 8.0, 0).unwrap();
        let res = model_cosamp(&a, &vec![0.0; a.rows()], 4, &TreeProjector { grid: g }, &CosampOptions::default())
            .unwrap();
        assert_eq!(res.iterations, 1);
        assert!(res.y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn noiseless_tree_recovery() {
        let g = Grid::new(8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut ok = 0;
        for seed in 0..20 {
            let y = random_tree_signal(g, 4, &mut rng);
            let a = build_dense_sketch(g.t(), 4, 8.0, seed).unwrap();
            let b = a.apply(&y);
            let res = model_cosamp(&a, &b, 4, &TreeProjector { grid: g }, &CosampOptions::default()).unwrap();
            let out = PyramidCoeffs::from_values(g, res.y.clone()).unwrap();
            assert!(model_contains(&ModelSpec::new(ModelKind::Tree, 8), &out));
            assert!(res.residual_norm <= res.first_residual_norm);
            let err = norm2(&res.y.iter().zip(&y).map(|(a, b)| a - b).collect::<Vec<_>>());
            if err <= 1e-6 * norm2(&y) {
                ok += 1;
            }
        }
        assert!(ok >= 18, "{ok}/20");
    }

    #[test]
    fn rank_deficient_system_is_regularized() {
        let a = DenseSketch::new(DenseSketchSpec { rows: 3, cols: 6, seed: 2 }).unwrap();
        let (z, reg) = least_squares(&a, &[0, 1, 2, 3, 4], &[1.0, 2.0, 3.0]);
        assert!(reg);
        assert_eq!(z.len(), 5);
        assert!(z.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn integer_signals_round_early() {
        let g = Grid::new(4).unwrap();
        let mut y = vec![0.0; g.t()];
        y[0] = 4.0;
        y[g.index_of(CellId::new(1, 1, 0))] = 2.0;
        let a = build_dense_sketch(g.t(), 2, 8.0, 5).unwrap();
        let opts = CosampOptions { integer_signal: true, ..Default::default() };
        let res = model_cosamp(&a, &a.apply(&y), 2, &TreeProjector { grid: g }, &opts).unwrap();
        assert!(res.rounded);
        assert_eq!(res.y, y);
    }

    #[test]
    fn supernode_projection_keeps_whole_groups() {
        let g = Grid::new(4).unwrap();
        let mut v = vec![0.0; 16];
        v[5] = 3.0; // supernode 1
        v[6] = 0.5;
        v[14] = 9.0; // supernode 4, child of root
        let p = SupernodeProjector { grid: g };
        assert_eq!(p.support(&v, 2), vec![14]);
        let mut w = v.clone();
        w[0] = 1.0;
        assert_eq!(p.support(&w, 3), vec![0, 5, 6, 14]);
    }

    #[test]
    fn l2l1_inequality_on_samples() {
        let a = DenseSketch::new(DenseSketchSpec { rows: 48, cols: 85, seed: 9 }).unwrap();
        let s = 6;
        let delta = estimate_rip_constant(&a, s, 1000, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let z: Vec<f64> = (0..85).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let (lhs, rhs) = l2l1_sides(&a, &z, s, delta + 0.1);
            assert!(lhs <= rhs);
        }
    }
}
