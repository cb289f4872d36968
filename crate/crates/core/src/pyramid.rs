//! The pyramid embedding `P` and its approximate inverse.
//!
//! `(Px)_q = 2^i · Σ_{p ∈ q} x_p` for a cell `q` at level `i`. For nonnegative
//! `x` every internal coefficient is exactly twice the sum of its children's.
//!
//! Inversion works with *surpluses*: with `p_q = b_q / 2^i` the mass claimed by
//! cell `q`, the surplus `s_q = p_q − Σ_{r ∈ C(q)} p_r` is the mass not
//! accounted for by the children (at pixels, `s_q = p_q`).

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use crate::error::{invalid, Error, Result};
use crate::grid::{parse_token, parse_values, CellId, Grid, GridImage, PyramidCoeffs, TreeSupport};
use crate::kmedian::{kmedian, KMedianOptions, KMedianSolution};

/// Relative slack under which a negative surplus counts as rounding noise.
pub const SURPLUS_TOLERANCE: f64 = 1e-9;

/// `Px`.
pub fn pyramid_transform(x: &GridImage) -> PyramidCoeffs {
    let grid = x.grid();
    let mut out = vec![0.0; grid.t()];
    // level sums, bottom-up
    let mut sums = x.values().to_vec();
    for level in 0..=grid.top_level() {
        let side = grid.side(level);
        let offset = grid.level_offset(level);
        let scale = (1u64 << level) as f64;
        for (i, s) in sums.iter().enumerate() {
            out[offset + i] = scale * s;
        }
        if level == grid.top_level() {
            break;
        }
        let half = side / 2;
        let mut next = vec![0.0; half * half];
        for r in 0..side {
            for c in 0..side {
                next[(r / 2) * half + c / 2] += sums[r * side + c];
            }
        }
        sums = next;
    }
    PyramidCoeffs::from_values(grid, out).expect("length t by construction")
}

#[inline]
fn level_scale(level: u32) -> f64 {
    (1u64 << level) as f64
}

/// Surplus of every cell.
pub fn surpluses(b: &PyramidCoeffs) -> Vec<f64> {
    let grid = b.grid();
    let v = b.values();
    (0..grid.t()).map(|q| surplus_at(grid, v, q, grid.level_of(q))).collect()
}

fn surplus_at(grid: Grid, v: &[f64], q: usize, level: u32) -> f64 {
    let p = v[q] / level_scale(level);
    match grid.child_indices(q) {
        None => p,
        Some(ch) => p - ch.iter().map(|&r| v[r]).sum::<f64>() / level_scale(level - 1),
    }
}

fn surplus_slack(grid: Grid, v: &[f64], q: usize, level: u32) -> f64 {
    let own = v[q].abs() / level_scale(level);
    let kids = match grid.child_indices(q) {
        None => 0.0,
        Some(ch) => ch.iter().map(|&r| v[r].abs()).sum::<f64>() / level_scale(level - 1),
    };
    SURPLUS_TOLERANCE * own.max(kids)
}

/// `y = Σ_q s_q · e_q` with `e_q` the center pixel of `q`.
///
/// When every surplus is nonnegative this `y` minimizes `‖b − Py‖₁`.
pub fn invert_nonneg_surpluses(b: &PyramidCoeffs) -> Result<GridImage> {
    let grid = b.grid();
    invert_on(b, 0..grid.t())
}

fn invert_on(b: &PyramidCoeffs, cells: impl IntoIterator<Item = usize>) -> Result<GridImage> {
    let grid = b.grid();
    let v = b.values();
    let mut y = GridImage::zeros(grid);
    for q in cells {
        let level = grid.level_of(q);
        let s = surplus_at(grid, v, q, level);
        if s < 0.0 {
            if s < -surplus_slack(grid, v, q, level) {
                let cell = grid.cell_of(q);
                return Err(Error::PreconditionViolation(format!(
                    "negative surplus {s} at cell {cell:?}"
                )));
            }
            continue;
        }
        if s > 0.0 {
            let (r, c) = grid.center_pixel(grid.cell_of(q));
            y.add_at(r, c, s);
        }
    }
    Ok(y)
}

/// What the top-down repair pass touched.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RepairTrace {
    /// Cells whose coefficient was read (the root plus four per expanded node).
    pub visits: usize,
    /// Nonzero cells of the repaired vector, parents before children.
    pub support: Vec<usize>,
}

/// Top-down repair making every surplus nonnegative.
///
/// Requires `b ≥ 0`. Guarantees `‖b − b′‖₁ ≤ 3 · min_y ‖Py − b‖₁`.
pub fn make_nonneg_surpluses(b: &PyramidCoeffs) -> Result<PyramidCoeffs> {
    Ok(make_nonneg_surpluses_traced(b)?.0)
}

/// [`make_nonneg_surpluses`] plus a record of the traversal.
///
/// A node whose repaired value is zero forces all its descendants to zero, so
/// the descent stops there and the work is linear in `|supp(b)|`.
pub fn make_nonneg_surpluses_traced(b: &PyramidCoeffs) -> Result<(PyramidCoeffs, RepairTrace)> {
    let grid = b.grid();
    let v = b.values();
    if let Some(i) = v.iter().position(|&x| !(x >= 0.0)) {
        return invalid(format!("coefficient {i} is {} (must be nonnegative)", v[i]));
    }
    let mut out = PyramidCoeffs::zeros(grid);
    let mut trace = RepairTrace { visits: 1, support: Vec::new() };
    if v[0] == 0.0 {
        return Ok((out, trace));
    }
    out.values_mut()[0] = v[0];
    let mut stack: Vec<(usize, CellId)> = vec![(0, grid.root())];
    while let Some((q, cell)) = stack.pop() {
        trace.support.push(q);
        let Some(children) = cell.children_array() else { continue };
        let idx = children.map(|c| grid.index_of(c));
        let mut vals = idx.map(|i| v[i]);
        trace.visits += 4;
        let o = out.values()[q];
        // surplus s_q = o/2^i − Σ vals/2^(i−1); the deficit in child units is Σ vals − o/2
        let mut excess = vals.iter().sum::<f64>() - o / 2.0;
        if excess > 0.0 {
            for val in vals.iter_mut() {
                let cut = excess.min(*val);
                *val -= cut;
                excess -= cut;
                if excess <= 0.0 {
                    break;
                }
            }
        }
        let ov = out.values_mut();
        for j in (0..4).rev() {
            ov[idx[j]] = vals[j];
            if vals[j] > 0.0 {
                stack.push((idx[j], children[j]));
            }
        }
    }
    Ok((out, trace))
}

/// Approximate inverse: `‖Py − Px‖₁ ≤ 8‖b − Px‖₁` for every `x ≥ 0`.
pub fn pyramid_invert(b: &PyramidCoeffs) -> Result<GridImage> {
    Ok(pyramid_invert_traced(b)?.0)
}

pub fn pyramid_invert_traced(b: &PyramidCoeffs) -> Result<(GridImage, RepairTrace)> {
    let (repaired, trace) = make_nonneg_surpluses_traced(b)?;
    let y = invert_on(&repaired, trace.support.iter().copied())?;
    Ok((y, trace))
}

/// Number of same-level cells (per center) whose pixels can come within ℓ1
/// distance `(2/ε)·2^i` of a center: offsets `(a, b)` with
/// `(|a|−1)⁺ + (|b|−1)⁺ < 2/ε`.
pub fn ball_width(eps: f64) -> usize {
    let r = 2.0 / eps;
    let reach = r.ceil() as i64 + 1;
    let mut count = 0;
    for a in -reach..=reach {
        for b in -reach..=reach {
            let da = (a.abs() - 1).max(0);
            let db = (b.abs() - 1).max(0);
            if ((da + db) as f64) < r {
                count += 1;
            }
        }
    }
    count
}

#[derive(Clone, Debug, Default)]
pub struct AlignmentOptions {
    pub kmedian: KMedianOptions,
    /// Per-center width allowance; defaults to [`ball_width`].
    pub width_per_center: Option<usize>,
}

/// A tree `S` certifying that `Px` is close to tree-sparse.
#[derive(Clone, Debug)]
pub struct AlignmentCertificate {
    /// Carries the width bound `k · w(ε)`.
    pub support: TreeSupport,
    pub clustering: KMedianSolution,
    /// `‖x − x′‖_EMD` for the clustering actually used.
    pub kmedian_cost: f64,
    /// `‖(Px)_S̄‖₁`.
    pub residual: f64,
    pub eps: f64,
    pub width_bound: usize,
    /// `Σ_i min(|G_i|, width_bound)`: the size cap implied by the width bound.
    pub size_bound: usize,
}

impl AlignmentCertificate {
    /// `‖(Px)_S̄‖₁ ≤ ε·‖x − x′‖_EMD` (up to rounding).
    pub fn holds(&self) -> bool {
        self.residual <= self.eps * self.kmedian_cost * (1.0 + 1e-12) + 1e-12
    }

    pub fn width_ok(&self) -> bool {
        self.support.max_width() <= self.width_bound && self.support.is_valid_tree()
    }
}

pub(crate) fn check_sparsity(grid: Grid, k: usize, eps: f64) -> Result<()> {
    if k == 0 || 2 * k > grid.n() {
        return invalid(format!("k = {k} must lie in [1, n/2] with n = {}", grid.n()));
    }
    if !(eps > 0.0 && eps <= 1.0) {
        return invalid(format!("eps = {eps} must lie in (0, 1]"));
    }
    Ok(())
}

/// Tree of cells near a k-median solution of `x`.
pub fn alignment_certificate(
    x: &GridImage,
    k: usize,
    eps: f64,
    opts: &AlignmentOptions,
) -> Result<AlignmentCertificate> {
    let grid = x.grid();
    check_sparsity(grid, k, eps)?;
    if !x.is_nonneg() {
        return invalid("alignment certificate needs a nonnegative image");
    }
    let clustering = kmedian(x, k, &opts.kmedian)?;
    let support = cells_near(grid, &clustering.centers, eps);
    let width_bound = k * opts.width_per_center.unwrap_or_else(|| ball_width(eps));
    let px = pyramid_transform(x);
    let residual = px
        .values()
        .iter()
        .enumerate()
        .filter(|(i, _)| !support.contains(*i))
        .map(|(_, v)| v.abs())
        .sum();
    let size_bound = (0..=grid.top_level()).map(|l| grid.cells_at(l).min(width_bound)).sum();
    Ok(AlignmentCertificate {
        support: support.with_width_bound(width_bound),
        kmedian_cost: clustering.cost,
        clustering,
        residual,
        eps,
        width_bound,
        size_bound,
    })
}

/// All cells containing a pixel at ℓ1 distance `< (2/ε)·2^i` from some center,
/// at every level `i`.
pub fn cells_near(grid: Grid, centers: &[(usize, usize)], eps: f64) -> TreeSupport {
    let mut s = TreeSupport::empty(grid);
    for level in 0..=grid.top_level() {
        let size = 1usize << level;
        let radius = 2.0 / eps * size as f64;
        let side = grid.side(level);
        for &(r, c) in centers {
            let reach = (radius.ceil() as usize) / size + 1;
            let (cr, cc) = (r / size, c / size);
            for a in cr.saturating_sub(reach)..=(cr + reach).min(side - 1) {
                let dr = axis_gap(r, a * size, size);
                if dr as f64 >= radius {
                    continue;
                }
                for b in cc.saturating_sub(reach)..=(cc + reach).min(side - 1) {
                    let dc = axis_gap(c, b * size, size);
                    if ((dr + dc) as f64) < radius {
                        s.insert_with_ancestors(grid.index_of(CellId::new(level, a, b)));
                    }
                }
            }
        }
    }
    s
}

/// Distance from `p` to the interval `[start, start + len)`.
fn axis_gap(p: usize, start: usize, len: usize) -> usize {
    if p < start {
        start - p
    } else if p >= start + len {
        p + 1 - start - len
    } else {
        0
    }
}

impl PyramidCoeffs {
    /// `EMDPYR v1 <delta>` followed by the `t` coefficients, one level per line.
    pub fn to_emdpyr(&self) -> String {
        let grid = self.grid();
        let mut out = format!("EMDPYR v1 {}\n", grid.delta());
        for level in (0..=grid.top_level()).rev() {
            let vals = &self.values()[grid.level_range(level)];
            for (i, v) in vals.iter().enumerate() {
                if i > 0 {
                    out.push(' ');
                }
                let _ = write!(out, "{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn parse_emdpyr(text: &str) -> Result<Self> {
        let mut tokens = text.split_whitespace();
        if tokens.next() != Some("EMDPYR") || tokens.next() != Some("v1") {
            return Err(Error::Parse("expected `EMDPYR v1` header".into()));
        }
        let delta: usize = parse_token(tokens.next(), "delta")?;
        let grid = Grid::new(delta)?;
        let values = parse_values(&mut tokens, grid.t())?;
        PyramidCoeffs::from_values(grid, values)
    }

    pub fn write_emdpyr<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(self.to_emdpyr().as_bytes())?;
        Ok(())
    }

    pub fn read_emdpyr<R: BufRead>(mut r: R) -> Result<Self> {
        let mut text = String::new();
        r.read_to_string(&mut text)?;
        Self::parse_emdpyr(&text)
    }
}
