//! The reweighted non-standard 2-D Haar embedding `W = DH`.
//!
//! Coefficient `0` is the all-constant row with weight `2Δ`. Every cell at
//! level `i ≥ 1` then owns three difference rows:
//!
//! * horizontal: `+` on the left half, `−` on the right half;
//! * vertical: `+` on the top half, `−` on the bottom half;
//! * diagonal: `+` on the top-left and bottom-right quadrants, `−` elsewhere.
//!
//! Horizontal and vertical entries are `±2^{i−2}`. A diagonal column of `W⁻¹`
//! with that weight would have EMD `(2 + 4^{1−i})/3`, since each quadrant can
//! send mass to both of its neighbours, so diagonal rows carry that extra
//! factor. Every column of `W⁻¹` then has unit EMD norm, and
//! `‖x‖_EMD ≤ ‖Wx‖₁` by the triangle inequality.
//!
//! Cells at level `i ≥ 1` are in bijection with the cells of the `Δ/2` grid
//! (level `i − 1`). A cell's three coefficients form a *supernode*: supernode
//! `j` (the `j`-th cell of the `Δ/2` grid in its enumeration) owns
//! coefficients `1 + 3j .. 4 + 3j`, and the constant coefficient rides along
//! with the root supernode. Tree models on `W`-coefficients are tree models on
//! the `Δ/2` cell tree.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::grid::{CellId, Grid, GridImage, TreeSupport};
use crate::pyramid::{alignment_certificate, AlignmentCertificate, AlignmentOptions};

/// Horizontal, vertical, diagonal.
pub const ORIENTATIONS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Orientation {
    Horizontal,
    Vertical,
    Diagonal,
}

/// What a Haar coefficient measures.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum HaarIndex {
    Constant,
    Detail { cell: CellId, orientation: Orientation },
}

/// `Wx`: a length-`n` coefficient vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HaarCoeffs {
    grid: Grid,
    values: Vec<f64>,
}

impl HaarCoeffs {
    pub fn zeros(grid: Grid) -> Self {
        Self { grid, values: vec![0.0; grid.n()] }
    }

    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n() {
            return invalid(format!("expected {} Haar coefficients, got {}", grid.n(), values.len()));
        }
        Ok(Self { grid, values })
    }

    /// The coefficient vector with a single 1 at `index`.
    pub fn unit(grid: Grid, index: usize) -> Self {
        let mut h = Self::zeros(grid);
        h.values[index] = 1.0;
        h
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn l1_norm(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum()
    }
}

/// Weight of the all-constant row.
pub fn constant_weight(grid: Grid) -> f64 {
    2.0 * grid.delta() as f64
}

/// Weight `2^{i−2}` of the horizontal and vertical rows at level `i ≥ 1`.
pub fn detail_weight(level: u32) -> f64 {
    2f64.powi(level as i32 - 2)
}

/// EMD of the level-`i` checkerboard `±2^{−i}/4^{i−1}` pattern: `(2 + 4^{1−i})/3`.
pub fn diagonal_factor(level: u32) -> f64 {
    (2.0 + 4f64.powi(1 - level as i32)) / 3.0
}

pub fn orientation_weight(level: u32, orientation: Orientation) -> f64 {
    match orientation {
        Orientation::Horizontal | Orientation::Vertical => detail_weight(level),
        Orientation::Diagonal => detail_weight(level) * diagonal_factor(level),
    }
}

/// The `Δ/2` grid whose cells index supernodes; `None` for a `1 × 1` image.
pub fn supernode_grid(grid: Grid) -> Option<Grid> {
    (grid.delta() >= 2).then(|| Grid::new(grid.delta() / 2).expect("halving a valid delta"))
}

/// Index of the first of the three coefficients of `cell` (level ≥ 1).
pub fn detail_offset(grid: Grid, cell: CellId) -> usize {
    debug_assert!(cell.level >= 1 && grid.is_valid(cell));
    let sg = supernode_grid(grid).expect("cells above level 0 need delta >= 2");
    1 + ORIENTATIONS * sg.index_of(CellId::new(cell.level - 1, cell.row, cell.col))
}

/// Supernode owning coefficient `index` (the constant belongs to the root).
pub fn supernode_of(index: usize) -> usize {
    if index == 0 {
        0
    } else {
        (index - 1) / ORIENTATIONS
    }
}

/// Coefficients owned by supernode `j`.
pub fn supernode_coefficients(j: usize) -> impl Iterator<Item = usize> {
    let first = 1 + ORIENTATIONS * j;
    (j == 0).then_some(0).into_iter().chain(first..first + ORIENTATIONS)
}

pub fn describe(grid: Grid, index: usize) -> Result<HaarIndex> {
    if index >= grid.n() {
        return invalid(format!("Haar index {index} out of range (n = {})", grid.n()));
    }
    if index == 0 {
        return Ok(HaarIndex::Constant);
    }
    let sg = supernode_grid(grid).expect("n > 1");
    let j = supernode_of(index);
    let c = sg.cell_of(j);
    let orientation = match (index - 1) % ORIENTATIONS {
        0 => Orientation::Horizontal,
        1 => Orientation::Vertical,
        _ => Orientation::Diagonal,
    };
    Ok(HaarIndex::Detail { cell: CellId::new(c.level + 1, c.row, c.col), orientation })
}

/// `Wx` in `O(n)`.
pub fn haar_transform(x: &GridImage) -> HaarCoeffs {
    let grid = x.grid();
    let mut out = HaarCoeffs::zeros(grid);
    let mut sums = x.values().to_vec();
    for level in 1..=grid.top_level() {
        let side = grid.side(level);
        let child_side = 2 * side;
        let (w, wd) = (detail_weight(level), orientation_weight(level, Orientation::Diagonal));
        let mut next = vec![0.0; side * side];
        for r in 0..side {
            for c in 0..side {
                let at = |dr: usize, dc: usize| sums[(2 * r + dr) * child_side + 2 * c + dc];
                let (nw, ne, sw, se) = (at(0, 0), at(0, 1), at(1, 0), at(1, 1));
                let o = detail_offset(grid, CellId::new(level, r, c));
                out.values[o] = w * (nw + sw - ne - se);
                out.values[o + 1] = w * (nw + ne - sw - se);
                out.values[o + 2] = wd * (nw + se - ne - sw);
                next[r * side + c] = nw + ne + sw + se;
            }
        }
        sums = next;
    }
    out.values[0] = constant_weight(grid) * sums[0];
    out
}

/// `W⁻¹y`, exact up to rounding.
pub fn haar_inverse(y: &HaarCoeffs) -> GridImage {
    let grid = y.grid();
    let mut sums = vec![y.values[0] / constant_weight(grid)];
    for level in (1..=grid.top_level()).rev() {
        let side = grid.side(level);
        let child_side = 2 * side;
        let (w, wd) = (detail_weight(level), orientation_weight(level, Orientation::Diagonal));
        let mut next = vec![0.0; child_side * child_side];
        for r in 0..side {
            for c in 0..side {
                let o = detail_offset(grid, CellId::new(level, r, c));
                let s = sums[r * side + c];
                let (h, v, d) = (y.values[o] / w, y.values[o + 1] / w, y.values[o + 2] / wd);
                next[2 * r * child_side + 2 * c] = (s + h + v + d) / 4.0;
                next[2 * r * child_side + 2 * c + 1] = (s - h + v - d) / 4.0;
                next[(2 * r + 1) * child_side + 2 * c] = (s + h - v - d) / 4.0;
                next[(2 * r + 1) * child_side + 2 * c + 1] = (s - h - v + d) / 4.0;
            }
        }
        sums = next;
    }
    GridImage::from_values(grid.delta(), sums).expect("n values by construction")
}

/// Row `index` of `W` as a dense image (test oracle and documentation aid).
pub fn haar_row(grid: Grid, index: usize) -> Result<GridImage> {
    let mut row = GridImage::zeros(grid);
    match describe(grid, index)? {
        HaarIndex::Constant => {
            row.values_mut().fill(constant_weight(grid));
        }
        HaarIndex::Detail { cell, orientation } => {
            let w = orientation_weight(cell.level, orientation);
            let half = 1usize << (cell.level - 1);
            let (rows, cols) = cell.pixel_span();
            for r in rows.clone() {
                for c in cols.clone() {
                    let top = r - rows.start < half;
                    let left = c - cols.start < half;
                    let sign = match orientation {
                        Orientation::Horizontal => left,
                        Orientation::Vertical => top,
                        Orientation::Diagonal => top == left,
                    };
                    row.set(r, c, if sign { w } else { -w });
                }
            }
        }
    }
    Ok(row)
}

/// Lift of the pyramid certificate to `W`-coefficients.
#[derive(Clone, Debug)]
pub struct HaarAlignment {
    pub pyramid: AlignmentCertificate,
    /// `S′`: the constant plus the three coefficients of each level-≥1 cell of `S`.
    pub coefficients: Vec<bool>,
    /// Supernodes (cells of the `Δ/2` grid) covered by `S′`.
    pub supernodes: Option<TreeSupport>,
    /// `‖(Wx)_S̄′‖₁`.
    pub residual: f64,
    /// `Σ_{q ∉ S, level(q) ≥ 1} (Px)_q`, of which `residual` is at most three quarters.
    pub pyramid_detail_residual: f64,
}

impl HaarAlignment {
    pub fn holds(&self) -> bool {
        let p = &self.pyramid;
        self.residual <= p.eps * p.kmedian_cost * (1.0 + 1e-12) + 1e-12
    }

    pub fn three_quarter_bound_holds(&self) -> bool {
        self.residual <= 0.75 * self.pyramid_detail_residual * (1.0 + 1e-12) + 1e-12
    }
}

pub fn haar_alignment_certificate(
    x: &GridImage,
    k: usize,
    eps: f64,
    opts: &AlignmentOptions,
) -> Result<HaarAlignment> {
    let grid = x.grid();
    let pyramid = alignment_certificate(x, k, eps, opts)?;
    let mut coefficients = vec![false; grid.n()];
    coefficients[0] = true;
    let mut supernodes = supernode_grid(grid).map(TreeSupport::empty);
    let px = crate::pyramid::pyramid_transform(x);
    let mut pyramid_detail_residual = 0.0;
    for q in 0..grid.t() {
        let cell = grid.cell_of(q);
        if cell.level == 0 {
            continue;
        }
        if pyramid.support.contains(q) {
            let o = detail_offset(grid, cell);
            coefficients[o..o + ORIENTATIONS].fill(true);
            if let Some(s) = supernodes.as_mut() {
                s.insert_with_ancestors(supernode_of(o));
            }
        } else {
            pyramid_detail_residual += px.values()[q].abs();
        }
    }
    let wx = haar_transform(x);
    let residual = wx
        .values()
        .iter()
        .zip(&coefficients)
        .filter(|(_, &keep)| !keep)
        .map(|(v, _)| v.abs())
        .sum();
    Ok(HaarAlignment { pyramid, coefficients, supernodes, residual, pyramid_detail_residual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense_w(grid: Grid) -> Vec<Vec<f64>> {
        (0..grid.n()).map(|i| haar_row(grid, i).unwrap().into_values()).collect()
    }

    fn matvec(m: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
        m.iter().map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
    }

    #[test]
    fn constant_image_has_one_coefficient() {
        let x = GridImage::from_values(4, vec![1.0; 16]).unwrap();
        let wx = haar_transform(&x);
        assert_eq!(wx.values()[0], 128.0);
        assert!(wx.values()[1..].iter().all(|&v| v == 0.0));
        assert_eq!(haar_inverse(&wx), x);
    }

    #[test]
    fn point_mass_on_two_by_two() {
        let g = Grid::new(2).unwrap();
        let wx = haar_transform(&GridImage::point(g, 0, 0));
        assert_eq!(wx.values(), &[4.0, 0.5, 0.5, 0.5]);
        let dense = matvec(&dense_w(g), GridImage::point(g, 0, 0).values());
        assert_eq!(dense, wx.values());
    }

    #[test]
    fn fast_transform_matches_dense_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for delta in [1, 2, 4, 8] {
            let g = Grid::new(delta).unwrap();
            let w = dense_w(g);
            let x: Vec<f64> = (0..g.n()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let fast = haar_transform(&GridImage::from_values(delta, x.clone()).unwrap());
            for (a, b) in fast.values().iter().zip(matvec(&w, &x)) {
                assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
            }
        }
    }

    #[test]
    fn inverse_round_trip() {
        let g = Grid::new(8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let y = HaarCoeffs::from_values(g, (0..g.n()).map(|_| rng.random_range(-5.0..5.0)).collect()).unwrap();
        let back = haar_transform(&haar_inverse(&y));
        let err: f64 = back.values().iter().zip(y.values()).map(|(a, b)| (a - b).abs()).sum();
        assert!(err <= 1e-9 * y.l1_norm());
        for p in 0..g.n() {
            let (r, c) = g.pixel_coords(p);
            let e = GridImage::point(g, r, c);
            let back = haar_inverse(&haar_transform(&e));
            for (a, b) in back.values().iter().zip(e.values()) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
        assert_eq!(haar_inverse(&HaarCoeffs::zeros(g)), GridImage::zeros(g));
    }

    #[test]
    fn inverse_columns_have_unit_emd() {
        for delta in [2, 4, 16] {
            let g = Grid::new(delta).unwrap();
            for i in 0..g.n().min(64) {
                let v = haar_inverse(&HaarCoeffs::unit(g, i));
                assert!((crate::emd::emd_norm(&v) - 1.0).abs() < 1e-9, "delta {delta} column {i}");
            }
        }
    }

    #[test]
    fn supernode_layout() {
        let g = Grid::new(8).unwrap();
        assert_eq!(supernode_coefficients(0).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
        assert_eq!(supernode_coefficients(2).collect::<Vec<_>>(), vec![7, 8, 9]);
        for i in 0..g.n() {
            assert!(supernode_coefficients(supernode_of(i)).any(|j| j == i));
        }
        assert_eq!(
            describe(g, 1).unwrap(),
            HaarIndex::Detail { cell: CellId::new(3, 0, 0), orientation: Orientation::Horizontal }
        );
        assert!(describe(g, 64).is_err());
    }

    #[test]
    fn detail_rows_are_quarter_of_pyramid_rows() {
        let g = Grid::new(8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = GridImage::from_values(8, (0..64).map(|_| rng.random_range(0.0..3.0)).collect()).unwrap();
        let wx = haar_transform(&x);
        let px = crate::pyramid::pyramid_transform(&x);
        for q in 0..g.t() {
            let cell = g.cell_of(q);
            if cell.level == 0 {
                continue;
            }
            let o = detail_offset(g, cell);
            for v in &wx.values()[o..o + 3] {
                assert!(v.abs() <= 0.25 * px.values()[q] + 1e-12);
            }
        }
    }

    #[test]
    fn alignment_lift() {
        let g = Grid::new(16).unwrap();
        let x = GridImage::from_values(16, vec![1.0; g.n()]).unwrap();
        let cert = haar_alignment_certificate(&x, 2, 1.0, &AlignmentOptions::default()).unwrap();
        assert_eq!(cert.residual, 0.0);
        let mut sparse = GridImage::zeros(g);
        sparse.set(3, 4, 2.0);
        let cert = haar_alignment_certificate(&sparse, 1, 0.5, &AlignmentOptions::default()).unwrap();
        assert_eq!(cert.residual, 0.0);
        assert!(cert.supernodes.unwrap().is_valid_tree());
    }
}
