//! Signal models on the cell tree and the exact tree projection.
//!
//! Models: general `K`-sparse vectors (`Σ_K`), rooted subtrees of at most `K`
//! cells (`T_K`), the same with at most `s` cells per level (`T_K^s`), and the
//! value-constrained model `M` in which every coefficient is nonnegative and
//! at least twice the ℓ1 mass of its children.

use serde::{Deserialize, Serialize};

use crate::grid::{Grid, PyramidCoeffs, TreeSupport};

/// Absolute slack for the value constraints of model `M`.
pub const VALUE_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    GeneralSparse,
    Tree,
    TreeWidth { s: usize },
    ValueTree { s: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Sparsity budget `K`.
    pub budget: usize,
}

impl ModelSpec {
    pub fn new(kind: ModelKind, budget: usize) -> Self {
        Self { kind, budget }
    }
}

/// Whether `y` belongs to the model.
pub fn model_contains(spec: &ModelSpec, y: &PyramidCoeffs) -> bool {
    let grid = y.grid();
    let v = y.values();
    if let ModelKind::GeneralSparse = spec.kind {
        return v.iter().filter(|&&x| x != 0.0).count() <= spec.budget;
    }
    // The smallest rooted tree holding supp(y) is its parent closure; any
    // admissible support must contain it.
    let closure = TreeSupport::closure_of(grid, nonzero_indices(v));
    if closure.len() > spec.budget {
        return false;
    }
    match spec.kind {
        ModelKind::GeneralSparse | ModelKind::Tree => true,
        ModelKind::TreeWidth { s } => closure.max_width() <= s,
        ModelKind::ValueTree { s } => closure.max_width() <= s && value_constraints_hold(grid, v),
    }
}

fn nonzero_indices(v: &[f64]) -> impl Iterator<Item = usize> + '_ {
    v.iter().enumerate().filter(|(_, &x)| x != 0.0).map(|(i, _)| i)
}

/// `y ≥ 0` and `y_q ≥ 2‖y_{C(q)}‖₁` at every cell.
pub fn value_constraints_hold(grid: Grid, v: &[f64]) -> bool {
    (0..grid.t()).all(|q| {
        if v[q] < -VALUE_TOLERANCE {
            return false;
        }
        match grid.child_indices(q) {
            None => true,
            Some(ch) => {
                let kids: f64 = ch.iter().map(|&r| v[r].abs()).sum();
                v[q] >= 2.0 * kids - VALUE_TOLERANCE * (1.0 + v[q].abs())
            }
        }
    })
}

/// Per-node objective of a tree projection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeScore {
    /// `y_q²`: minimizes the ℓ2 error of the projection.
    Energy,
    /// `|y_q|`: minimizes the ℓ1 error.
    Magnitude,
}

impl NodeScore {
    #[inline]
    pub fn of(self, v: f64) -> f64 {
        match self {
            NodeScore::Energy => v * v,
            NodeScore::Magnitude => v.abs(),
        }
    }
}

/// Rooted subtree of the cell tree of `grid` with at most `budget` cells
/// maximizing `Σ scores`. Scores must be nonnegative.
///
/// Bottom-up knapsack: `best[v][j]` is the best score of a subtree rooted at
/// `v` using at most `j` cells. Children are merged one at a time; among
/// equally good splits the earlier child keeps the larger share, so a child
/// adding nothing receives no budget.
pub fn best_subtree(grid: Grid, scores: &[f64], budget: usize) -> TreeSupport {
    assert_eq!(scores.len(), grid.t(), "one score per cell");
    let t = grid.t();
    let budget = budget.min(t);
    if budget == 0 {
        return TreeSupport::empty(grid);
    }
    let mut best: Vec<Vec<f64>> = vec![Vec::new(); t];
    // split[v][c][j]: cells given to child c when children 0..=c share j
    let mut split: Vec<[Vec<u32>; 4]> = vec![Default::default(); grid.level_offset(0)];
    for v in (0..t).rev() {
        let score = scores[v];
        let Some(children) = grid.child_indices(v) else {
            best[v] = vec![0.0, score];
            continue;
        };
        let mut g = vec![0.0];
        let mut choices: [Vec<u32>; 4] = Default::default();
        for (ci, &c) in children.iter().enumerate() {
            let bc = &best[c];
            let len = (g.len() - 1 + bc.len() - 1).min(budget - 1) + 1;
            let mut ng = vec![f64::NEG_INFINITY; len];
            let mut pick = vec![0u32; len];
            for (j, slot) in ng.iter_mut().enumerate() {
                let lo = j.saturating_sub(g.len() - 1);
                let hi = j.min(bc.len() - 1);
                for a in lo..=hi {
                    let val = g[j - a] + bc[a];
                    if val > *slot {
                        *slot = val;
                        pick[j] = a as u32;
                    }
                }
            }
            g = ng;
            choices[ci] = pick;
        }
        let mut b = Vec::with_capacity(g.len() + 1);
        b.push(0.0);
        b.extend(g.iter().map(|x| score + x));
        best[v] = b;
        split[v] = choices;
    }
    let mut out = TreeSupport::empty(grid);
    let root_budget = budget.min(best[0].len() - 1);
    let mut stack = vec![(0usize, root_budget)];
    while let Some((v, j)) = stack.pop() {
        if j == 0 {
            continue;
        }
        out.insert_with_ancestors(v);
        let Some(children) = grid.child_indices(v) else { continue };
        let mut rem = j - 1;
        for ci in (0..4).rev() {
            let table = &split[v][ci];
            rem = rem.min(table.len() - 1);
            let a = table[rem] as usize;
            stack.push((children[ci], a));
            rem -= a;
        }
    }
    out
}

/// Support of the best `budget`-cell tree approximation of `y` under `score`.
pub fn tree_project_support(grid: Grid, y: &[f64], budget: usize, score: NodeScore) -> TreeSupport {
    let scores: Vec<f64> = y.iter().map(|&v| score.of(v)).collect();
    best_subtree(grid, &scores, budget)
}

/// `y` restricted to its best `K`-cell rooted subtree in ℓ2.
pub fn tree_project(y: &PyramidCoeffs, budget: usize) -> PyramidCoeffs {
    tree_project_with(y, budget, NodeScore::Energy)
}

pub fn tree_project_with(y: &PyramidCoeffs, budget: usize, score: NodeScore) -> PyramidCoeffs {
    let s = tree_project_support(y.grid(), y.values(), budget, score);
    y.restricted(&s)
}

/// Indices of the `budget` largest `|v_i|`, ties toward lower index.
pub fn top_k_support(v: &[f64], budget: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).filter(|&i| v[i] != 0.0).collect();
    if idx.len() > budget {
        idx.sort_by(|&a, &b| v[b].abs().total_cmp(&v[a].abs()).then(a.cmp(&b)));
        idx.truncate(budget);
    }
    idx.sort_unstable();
    idx
}

/// A tree holding a set of pixels, as used to embed `Σ_k` in `T_K`.
#[derive(Clone, Debug)]
pub struct EmbeddedTree {
    pub support: TreeSupport,
    /// `|support| / (k · log2(n/k))`.
    pub measured_constant: f64,
}

/// All cells within `⌈log₄ k⌉` levels of the root plus the root paths of
/// every pixel in `pixels`.
pub fn embed_sparse_in_tree(grid: Grid, pixels: &[(usize, usize)]) -> EmbeddedTree {
    let k = pixels.len().max(1);
    let mut depth = 0u32;
    while (1usize << (2 * depth)) < k {
        depth += 1;
    }
    let top = grid.top_level();
    let lowest = top.saturating_sub(depth);
    let mut support = TreeSupport::empty(grid);
    for level in lowest..=top {
        for i in grid.level_range(level) {
            support.insert_with_ancestors(i);
        }
    }
    for &(r, c) in pixels {
        support.insert_with_ancestors(grid.pixel_index(r, c) + grid.level_offset(0));
    }
    let n = grid.n() as f64;
    let denom = (k as f64) * (n / k as f64).log2().max(1.0);
    let measured_constant = support.len() as f64 / denom;
    EmbeddedTree { support, measured_constant }
}
