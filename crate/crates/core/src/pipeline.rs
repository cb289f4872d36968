//! End-to-end EMD/EMD schemes: embed the image, sketch the embedding, recover
//! it with an ℓ1/ℓ1 recoverer, and map back.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::emd::emd_norm;
use crate::error::{invalid, Error, Result};
use crate::grid::{Grid, GridImage, PyramidCoeffs};
use crate::haar::{haar_inverse, haar_transform, HaarCoeffs};
use crate::kmedian::{kmedian, KMedianOptions, KMedianSolution};
use crate::pyramid::{pyramid_invert, pyramid_transform};
use crate::randrec::{randomized_l1l1_recover, RandomizedConfig, RandomizedSketch};
use crate::treecosamp::{
    model_cosamp, CosampOptions, DenseSketch, DenseSketchSpec, SparseProjector, SupernodeProjector,
    SupportProjector, TreeProjector,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Pyramid embedding, Gaussian sketch, CoSaMP over plain `K`-sparse vectors.
    PyramidDense,
    /// Pyramid embedding, Gaussian sketch, CoSaMP over rooted subtrees.
    PyramidTreeCosamp,
    /// Pyramid embedding, hashed level sketch plus set query.
    PyramidRandomized,
    /// Reweighted Haar embedding, Gaussian sketch, CoSaMP over supernode trees.
    HaarTreeCosamp,
}

impl Scheme {
    pub const ALL: [Scheme; 4] =
        [Scheme::PyramidDense, Scheme::PyramidTreeCosamp, Scheme::PyramidRandomized, Scheme::HaarTreeCosamp];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::PyramidDense => "pyramid_dense",
            Scheme::PyramidTreeCosamp => "pyramid_tree_cosamp",
            Scheme::PyramidRandomized => "pyramid_randomized",
            Scheme::HaarTreeCosamp => "haar_tree_cosamp",
        }
    }

    pub fn embedding(self) -> Embedding {
        match self {
            Scheme::HaarTreeCosamp => Embedding::Haar,
            _ => Embedding::Pyramid,
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown scheme {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Embedding {
    Pyramid,
    Haar,
}

impl Embedding {
    pub fn apply(self, x: &GridImage) -> Vec<f64> {
        match self {
            Embedding::Pyramid => pyramid_transform(x).into_values(),
            Embedding::Haar => haar_transform(x).into_values(),
        }
    }

    pub fn dim(self, grid: Grid) -> usize {
        match self {
            Embedding::Pyramid => grid.t(),
            Embedding::Haar => grid.n(),
        }
    }
}

/// Multipliers in the row and budget formulas.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowConstants {
    /// `K = ⌈c_k · (k/ε²) · log₂(n/k)⌉`.
    pub c_k: f64,
    /// Dense rows `⌈c_dense · K · log₂(t/K)⌉`.
    pub c_dense: f64,
    /// Tree rows `⌈c_rows · 2K⌉` (pyramid) and `⌈c_rows · 2(3K + 1)⌉` (Haar).
    pub c_rows: f64,
    /// Randomized width `s = ⌈c_s · k/ε²⌉`.
    pub c_s: f64,
    /// Buckets per hashed level, in multiples of `s`.
    pub c_u: usize,
    /// Set-query buckets per support element.
    pub c_sq: usize,
}

impl Default for RowConstants {
    fn default() -> Self {
        Self { c_k: 1.0, c_dense: 2.0, c_rows: 4.0, c_s: 2.0, c_u: 8, c_sq: 2 }
    }
}

const SET_QUERY_REPETITIONS: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemeConfig {
    pub scheme: Scheme,
    pub delta: usize,
    pub k: usize,
    pub eps: f64,
    #[serde(default)]
    pub constants: RowConstants,
    pub seed: u64,
}

impl SchemeConfig {
    pub fn new(scheme: Scheme, delta: usize, k: usize, eps: f64, seed: u64) -> Self {
        Self { scheme, delta, k, eps, constants: RowConstants::default(), seed }
    }

    pub fn grid(&self) -> Result<Grid> {
        let grid = Grid::new(self.delta)?;
        if self.k == 0 || 2 * self.k > grid.n() {
            return invalid(format!("k must lie in [1, n/2] = [1, {}], got {}", grid.n() / 2, self.k));
        }
        if !(self.eps > 0.0 && self.eps <= 1.0) {
            return invalid(format!("eps must lie in (0, 1], got {}", self.eps));
        }
        let c = &self.constants;
        if !(c.c_k > 0.0 && c.c_dense > 0.0 && c.c_rows > 0.0 && c.c_s > 0.0) {
            return invalid("row constants must be positive");
        }
        if c.c_u < 2 || c.c_sq == 0 {
            return invalid("need c_u >= 2 and c_sq >= 1");
        }
        Ok(grid)
    }

    /// `k/ε²`.
    fn load(&self) -> f64 {
        self.k as f64 / (self.eps * self.eps)
    }

    /// `log₂(n/k)`.
    fn log_ratio(&self, grid: Grid) -> f64 {
        (grid.n() as f64 / self.k as f64).log2()
    }

    /// Inner sparsity budget `K`: cells for the pyramid schemes, supernodes
    /// for the Haar scheme.
    pub fn budget(&self) -> Result<usize> {
        let grid = self.grid()?;
        let k = (self.constants.c_k * self.load() * self.log_ratio(grid)).ceil() as usize;
        let cap = match self.scheme.embedding() {
            Embedding::Pyramid => grid.t(),
            Embedding::Haar => supernode_count(grid),
        };
        Ok(k.clamp(1, cap))
    }

    /// Width `s` of the randomized scheme.
    pub fn width(&self) -> Result<usize> {
        self.grid()?;
        Ok(((self.constants.c_s * self.load()).ceil() as usize).max(1))
    }

    pub fn randomized_config(&self) -> Result<RandomizedConfig> {
        Ok(RandomizedConfig {
            delta: self.delta,
            s: self.width()?,
            bucket_factor: self.constants.c_u,
            query_factor: self.constants.c_sq,
            repetitions: SET_QUERY_REPETITIONS,
            seed: self.seed,
        })
    }

    /// Measurement count.
    pub fn rows(&self) -> Result<usize> {
        let grid = self.grid()?;
        let c = &self.constants;
        let kk = self.budget()? as f64;
        Ok(match self.scheme {
            Scheme::PyramidDense => {
                let t = grid.t() as f64;
                ((c.c_dense * kk * (t / kk).log2()).ceil() as usize).clamp(1, grid.t())
            }
            Scheme::PyramidTreeCosamp => ((c.c_rows * 2.0 * kk).ceil() as usize).min(grid.t()),
            Scheme::HaarTreeCosamp => ((c.c_rows * 2.0 * (3.0 * kk + 1.0)).ceil() as usize).min(grid.n()),
            Scheme::PyramidRandomized => RandomizedSketch::new(self.randomized_config()?)?.rows(),
        })
    }

    /// Constant `c` of the asymptotic row shape implied by the formulas.
    pub fn row_bound_constant(&self) -> f64 {
        let c = &self.constants;
        match self.scheme {
            Scheme::PyramidDense => 2.0 * c.c_dense * (c.c_k + 1.0) + 1.0,
            Scheme::PyramidTreeCosamp => 2.0 * c.c_rows * (c.c_k + 1.0) + 1.0,
            Scheme::HaarTreeCosamp => 8.0 * c.c_rows * (c.c_k + 1.0) + 1.0,
            Scheme::PyramidRandomized => {
                let per_level = c.c_u as f64 + 2.0 * SET_QUERY_REPETITIONS as f64 * c.c_sq as f64;
                (c.c_s + 1.0) * (4.0 / 3.0 * c.c_u as f64 + 1.5 * per_level)
            }
        }
    }

    /// `c · (k/ε²) · log₂(n/k)`, times `log₂ n` for the dense scheme.
    pub fn row_bound(&self) -> Result<f64> {
        let grid = self.grid()?;
        let mut shape = self.load() * self.log_ratio(grid);
        if self.scheme == Scheme::PyramidDense {
            shape *= (grid.n() as f64).log2();
        }
        Ok(self.row_bound_constant() * shape)
    }

    /// Builds the measurement operator.
    pub fn build(&self) -> Result<SchemeSketch> {
        let grid = self.grid()?;
        let budget = self.budget()?;
        let operator = match self.scheme {
            Scheme::PyramidRandomized => Operator::Randomized(RandomizedSketch::new(self.randomized_config()?)?),
            _ => Operator::Dense(DenseSketch::new(DenseSketchSpec {
                rows: self.rows()?,
                cols: self.scheme.embedding().dim(grid),
                seed: self.seed,
            })?),
        };
        Ok(SchemeSketch { config: self.clone(), grid, budget, operator })
    }
}

fn supernode_count(grid: Grid) -> usize {
    crate::haar::supernode_grid(grid).map_or(1, |g| g.t())
}

#[derive(Clone, Debug)]
enum Operator {
    Dense(DenseSketch),
    Randomized(RandomizedSketch),
}

/// A built scheme: the embedding composed with its inner sketch.
#[derive(Clone, Debug)]
pub struct SchemeSketch {
    config: SchemeConfig,
    grid: Grid,
    budget: usize,
    operator: Operator,
}

/// Output of [`SchemeSketch::recover`].
#[derive(Clone, Debug)]
pub struct Recovery {
    pub image: GridImage,
    /// Recovered embedding `y*`.
    pub inner: Vec<f64>,
    pub inner_support: usize,
    pub iterations: usize,
}

impl SchemeSketch {
    pub fn config(&self) -> &SchemeConfig {
        &self.config
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn rows(&self) -> usize {
        match &self.operator {
            Operator::Dense(a) => a.rows(),
            Operator::Randomized(r) => r.rows(),
        }
    }

    /// Sketch of an already embedded vector.
    pub fn sketch_embedded(&self, y: &[f64]) -> Result<Vec<f64>> {
        let dim = self.config.scheme.embedding().dim(self.grid);
        if y.len() != dim {
            return invalid(format!("embedded vector has length {}, expected {dim}", y.len()));
        }
        Ok(match &self.operator {
            Operator::Dense(a) => a.apply(y),
            Operator::Randomized(r) => r.apply(y),
        })
    }

    pub fn sketch(&self, x: &GridImage) -> Result<Vec<f64>> {
        if x.grid() != self.grid {
            return invalid(format!("image side {} does not match the scheme's {}", x.delta(), self.grid.delta()));
        }
        if !x.is_nonneg() {
            return invalid("sketched images must be nonnegative");
        }
        self.sketch_embedded(&self.config.scheme.embedding().apply(x))
    }

    pub fn recover(&self, measurements: &[f64]) -> Result<Recovery> {
        if measurements.len() != self.rows() {
            return invalid(format!("{} measurements for a {}-row scheme", measurements.len(), self.rows()));
        }
        let (mut inner, iterations) = match &self.operator {
            Operator::Randomized(r) => (randomized_l1l1_recover(r, measurements)?.y, 1),
            Operator::Dense(a) => {
                let projector: Box<dyn SupportProjector> = match self.config.scheme {
                    Scheme::PyramidDense => Box::new(SparseProjector { dim: self.grid.t() }),
                    Scheme::PyramidTreeCosamp => Box::new(TreeProjector { grid: self.grid }),
                    Scheme::HaarTreeCosamp => Box::new(SupernodeProjector { grid: self.grid }),
                    Scheme::PyramidRandomized => unreachable!("randomized scheme has no dense operator"),
                };
                let res = model_cosamp(a, measurements, self.budget, projector.as_ref(), &CosampOptions::default())?;
                (res.y, res.iterations)
            }
        };
        let image = match self.config.scheme.embedding() {
            Embedding::Pyramid => {
                // Px is nonnegative, so clamping can only move y* closer to it.
                inner.iter_mut().for_each(|v| *v = v.max(0.0));
                pyramid_invert(&PyramidCoeffs::from_values(self.grid, inner.clone())?)?
            }
            Embedding::Haar => haar_inverse(&HaarCoeffs::from_values(self.grid, inner.clone())?),
        };
        let inner_support = inner.iter().filter(|v| **v != 0.0).count();
        Ok(Recovery { image, inner, inner_support, iterations })
    }
}

/// The terms of `‖x − x*‖_EMD ≤ ‖B(x − x*)‖₁ ≤ ‖y* − Bx‖₁ + ‖y* − Bx*‖₁`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainTerms {
    pub emd_error: f64,
    pub embedded_error: f64,
    pub inner_error: f64,
    pub inverse_error: f64,
}

impl ChainTerms {
    pub fn compute(embedding: Embedding, x: &GridImage, rec: &Recovery) -> Self {
        let diff = x - &rec.image;
        let bx = embedding.apply(x);
        let bxs = embedding.apply(&rec.image);
        let l1 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| (p - q).abs()).sum::<f64>();
        ChainTerms {
            emd_error: emd_norm(&diff),
            embedded_error: l1(&bx, &bxs),
            inner_error: l1(&rec.inner, &bx),
            inverse_error: l1(&rec.inner, &bxs),
        }
    }

    fn le(a: f64, b: f64) -> bool {
        a <= b + 1e-9 * b.abs().max(1.0)
    }

    /// `‖x − x*‖_EMD ≤ ‖B(x − x*)‖₁`.
    pub fn expansion_holds(&self) -> bool {
        Self::le(self.emd_error, self.embedded_error)
    }

    /// `‖B(x − x*)‖₁ ≤ ‖y* − Bx‖₁ + ‖y* − Bx*‖₁`.
    pub fn triangle_holds(&self) -> bool {
        Self::le(self.embedded_error, self.inner_error + self.inverse_error)
    }

    pub fn holds(&self) -> bool {
        self.expansion_holds() && self.triangle_holds()
    }
}

/// A `k`-sparse image close to `x*` under EMD.
#[derive(Clone, Debug)]
pub struct StrictSparse {
    pub image: GridImage,
    /// `None` when `x*` already had at most `k` nonzeros.
    pub clustering: Option<KMedianSolution>,
    /// `‖x̂ − x*‖_EMD`.
    pub cost: f64,
}

/// Weighted k-median of `x*` with each cluster's weight moved to its center.
/// Negative entries of `x*` are dropped first.
pub fn strict_sparsify(x_star: &GridImage, k: usize, opts: &KMedianOptions) -> Result<StrictSparse> {
    if k == 0 {
        return invalid("k must be at least 1");
    }
    let x = if x_star.is_nonneg() { x_star.clone() } else { x_star.clamped_nonneg() };
    if x.nnz() <= k {
        return Ok(StrictSparse { image: x, clustering: None, cost: 0.0 });
    }
    let sol = kmedian(&x, k, opts)?;
    Ok(StrictSparse { image: sol.sparse_image(&x), cost: sol.cost, clustering: Some(sol) })
}

/// Measured constants of the strict-sparsity composition and its bound
/// `‖x̂ − x‖ ≤ [(C′ + 1)C + C′]·‖x′ − x‖`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrictBound {
    pub c: f64,
    pub c_prime: f64,
    pub lhs: f64,
    pub rhs: f64,
}

impl StrictBound {
    /// `C` is infinite when `best` is zero.
    ///
    /// `best` is `‖x′ − x‖_EMD` for the k-sparse `x′` found by k-median,
    /// `x_prime` that image, and `x_star`, `x_hat` the recovery before and
    /// after sparsification.
    pub fn measure(
        x: &GridImage,
        x_prime: &GridImage,
        best: f64,
        x_star: &GridImage,
        x_hat: &StrictSparse,
    ) -> Self {
        let recovery_error = emd_norm(&(x - x_star));
        let c = if best > 0.0 { recovery_error / best } else { f64::INFINITY };
        let reference = emd_norm(&(x_prime - x_star));
        let denom = match &x_hat.clustering {
            Some(sol) => sol.cost.min(reference),
            None => reference,
        };
        let achieved = emd_norm(&(&x_hat.image - x_star));
        let c_prime = if denom > 0.0 { achieved / denom } else { 0.0 };
        let lhs = emd_norm(&(&x_hat.image - x));
        // C·best is written out so that best = 0 stays finite.
        let rhs = (c_prime + 1.0) * recovery_error + c_prime * best;
        Self { c, c_prime, lhs, rhs }
    }

    pub fn holds(&self) -> bool {
        self.lhs <= self.rhs * (1.0 + 1e-9) + 1e-9
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, GenSpec, ImageKind};

    fn image(kind: ImageKind, delta: usize, k: usize, spread: f64, seed: u64) -> GridImage {
        generate(&GenSpec::new(kind, delta, k, spread, seed)).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(SchemeConfig::new(Scheme::PyramidDense, 8, 0, 1.0, 0).grid().is_err());
        assert!(SchemeConfig::new(Scheme::PyramidDense, 8, 33, 1.0, 0).grid().is_err());
        assert!(SchemeConfig::new(Scheme::PyramidDense, 8, 2, 1.5, 0).grid().is_err());
        assert!(SchemeConfig::new(Scheme::PyramidDense, 12, 2, 1.0, 0).grid().is_err());
        for s in Scheme::ALL {
            assert_eq!(s.name().parse::<Scheme>().unwrap(), s);
        }
    }

    #[test]
    fn rows_respect_their_bounds() {
        for scheme in Scheme::ALL {
            for &(delta, k, eps) in &[(8, 1, 1.0), (16, 2, 1.0), (32, 4, 1.0), (32, 4, 0.5), (64, 8, 1.0)] {
                let cfg = SchemeConfig::new(scheme, delta, k, eps, 0);
                let rows = cfg.rows().unwrap() as f64;
                assert!(rows <= cfg.row_bound().unwrap(), "{scheme} {delta} {k} {eps}");
                assert_eq!(cfg.build().unwrap().rows() as f64, rows);
            }
        }
    }

    #[test]
    fn sketches_are_linear() {
        for scheme in Scheme::ALL {
            let sk = SchemeConfig::new(scheme, 16, 2, 1.0, 3).build().unwrap();
            let a = image(ImageKind::Clusters, 16, 2, 1.0, 1);
            let b = image(ImageKind::UniformNoise, 16, 2, 1.0, 2);
            let lhs = sk.sketch(&(&a + &b)).unwrap();
            let rhs: Vec<f64> = sk.sketch(&a).unwrap().iter().zip(sk.sketch(&b).unwrap()).map(|(p, q)| p + q).collect();
            for (p, q) in lhs.iter().zip(&rhs) {
                assert!((p - q).abs() <= 1e-9 * p.abs().max(1.0));
            }
            let zero = sk.sketch(&GridImage::zeros(sk.grid())).unwrap();
            assert!(zero.iter().all(|v| *v == 0.0));
            let rec = sk.recover(&zero).unwrap();
            assert_eq!(rec.image.l1_norm(), 0.0);
        }
    }

    #[test]
    fn sparse_images_are_recovered() {
        for scheme in Scheme::ALL {
            let sk = SchemeConfig::new(scheme, 16, 2, 1.0, 5).build().unwrap();
            let x = image(ImageKind::Clusters, 16, 2, 0.0, 7);
            let rec = sk.recover(&sk.sketch(&x).unwrap()).unwrap();
            let err = emd_norm(&(&x - &rec.image));
            assert!(err <= 1e-6 * 16.0 * x.l1_norm(), "{scheme}: {err}");
            let chain = ChainTerms::compute(scheme.embedding(), &x, &rec);
            assert!(chain.triangle_holds());
        }
    }

    #[test]
    fn strict_sparsify_cases() {
        let g = Grid::new(8).unwrap();
        let mut x = GridImage::zeros(g);
        x.set(0, 0, 2.0);
        x.set(7, 7, 3.0);
        let out = strict_sparsify(&x, 2, &KMedianOptions::default()).unwrap();
        assert_eq!(out.image, x);
        assert_eq!(out.cost, 0.0);
        x.set(0, 1, 1.0);
        x.set(1, 0, 1.0);
        let out = strict_sparsify(&x, 2, &KMedianOptions::default()).unwrap();
        assert_eq!(out.image.nnz(), 2);
        assert!((out.image.mass() - x.mass()).abs() < 1e-9);
        assert_eq!(out.image.get(0, 0), 4.0);
        assert!((emd_norm(&(&out.image - &x)) - out.cost).abs() < 1e-9);
    }

    #[test]
    fn strict_bound_holds_on_noisy_recovery() {
        let x = image(ImageKind::ClustersPlusNoise, 16, 2, 1.0, 9);
        let sk = SchemeConfig::new(Scheme::PyramidTreeCosamp, 16, 2, 1.0, 1).build().unwrap();
        let rec = sk.recover(&sk.sketch(&x).unwrap()).unwrap();
        let opts = KMedianOptions::default();
        let best = kmedian(&x, 2, &opts).unwrap();
        let x_prime = best.sparse_image(&x);
        let hat = strict_sparsify(&rec.image, 2, &opts).unwrap();
        let bound = StrictBound::measure(&x, &x_prime, best.cost, &rec.image, &hat);
        assert!(bound.holds(), "{bound:?}");
        assert!(hat.image.nnz() <= 2);
    }
}
