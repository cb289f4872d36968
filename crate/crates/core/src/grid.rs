//! Dyadic grid geometry and the data types shared by every other module.
//!
//! A `Δ × Δ` image (`Δ = 2^l`) is covered by `l + 1` nested grids. The grid at
//! level `i` partitions the image into cells of side `2^i`; level `0` cells are
//! pixels and the single level-`l` cell is the root of a 4-ary tree.
//!
//! All cells are enumerated level-major, root first, row-major inside a level.
//! Parents therefore always precede their children, so any rooted tree is
//! handled by one forward (top-down) or backward (bottom-up) sweep.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::ops::{Add, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Largest supported `log2(Δ)`.
pub const MAX_LOG_DELTA: u32 = 12;

/// Side length and level structure of a square dyadic grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct Grid {
    log_delta: u32,
}

impl Grid {
    pub fn new(delta: usize) -> Result<Self> {
        if delta == 0 || !delta.is_power_of_two() {
            return invalid(format!("delta must be a power of two, got {delta}"));
        }
        let log_delta = delta.trailing_zeros();
        if log_delta > MAX_LOG_DELTA {
            return invalid(format!("delta {delta} exceeds 2^{MAX_LOG_DELTA}"));
        }
        Ok(Self { log_delta })
    }

    #[inline]
    pub fn delta(&self) -> usize {
        1 << self.log_delta
    }

    /// Index of the root level, `l = log2(Δ)`.
    #[inline]
    pub fn top_level(&self) -> u32 {
        self.log_delta
    }

    /// Number of pixels, `n = Δ²`.
    #[inline]
    pub fn n(&self) -> usize {
        self.delta() * self.delta()
    }

    /// Number of cells over all levels, `t = (4n − 1)/3`.
    #[inline]
    pub fn t(&self) -> usize {
        (4 * self.n() - 1) / 3
    }

    /// Cells per side at `level`.
    #[inline]
    pub fn side(&self, level: u32) -> usize {
        self.delta() >> level
    }

    #[inline]
    pub fn cells_at(&self, level: u32) -> usize {
        self.side(level) * self.side(level)
    }

    /// Index of the first cell of `level` in the enumeration.
    #[inline]
    pub fn level_offset(&self, level: u32) -> usize {
        let depth = self.log_delta - level;
        ((1usize << (2 * depth)) - 1) / 3
    }

    /// Index range of `level` in the enumeration.
    pub fn level_range(&self, level: u32) -> std::ops::Range<usize> {
        let start = self.level_offset(level);
        start..start + self.cells_at(level)
    }

    pub fn is_valid(&self, c: CellId) -> bool {
        c.level <= self.log_delta && c.row < self.side(c.level) && c.col < self.side(c.level)
    }

    /// Position of `c` in the level-major, root-first enumeration.
    pub fn cell_index(&self, c: CellId) -> Result<usize> {
        if !self.is_valid(c) {
            return invalid(format!("cell {c:?} is outside a grid of side {}", self.delta()));
        }
        Ok(self.index_of(c))
    }

    #[inline]
    pub(crate) fn index_of(&self, c: CellId) -> usize {
        self.level_offset(c.level) + c.row * self.side(c.level) + c.col
    }

    /// Inverse of [`Grid::cell_index`].
    pub fn cell_at(&self, index: usize) -> Result<CellId> {
        if index >= self.t() {
            return invalid(format!("cell index {index} out of range (t = {})", self.t()));
        }
        Ok(self.cell_of(index))
    }

    pub(crate) fn cell_of(&self, index: usize) -> CellId {
        let mut level = self.log_delta;
        loop {
            let range = self.level_range(level);
            if range.contains(&index) {
                let local = index - range.start;
                let side = self.side(level);
                return CellId { level, row: local / side, col: local % side };
            }
            level -= 1;
        }
    }

    /// Level of the cell at `index`.
    pub fn level_of(&self, index: usize) -> u32 {
        // depth d satisfies (4^d − 1)/3 <= index < (4^(d+1) − 1)/3
        let mut depth = 0;
        while ((1usize << (2 * (depth + 1))) - 1) / 3 <= index {
            depth += 1;
        }
        self.log_delta - depth
    }

    pub fn root(&self) -> CellId {
        CellId { level: self.log_delta, row: 0, col: 0 }
    }

    pub fn parent(&self, c: CellId) -> Option<CellId> {
        (c.level < self.log_delta).then(|| CellId { level: c.level + 1, row: c.row / 2, col: c.col / 2 })
    }

    /// Parent index of the cell at `index`; `None` for the root.
    pub fn parent_index(&self, index: usize) -> Option<usize> {
        if index == 0 {
            return None;
        }
        self.parent(self.cell_of(index)).map(|p| self.index_of(p))
    }

    /// Children indices in NW, NE, SW, SE order; `None` at pixels.
    pub fn child_indices(&self, index: usize) -> Option<[usize; 4]> {
        let c = self.cell_of(index);
        c.children_array().map(|ch| ch.map(|k| self.index_of(k)))
    }

    /// All cells in enumeration order.
    pub fn cells(&self) -> impl Iterator<Item = CellId> + '_ {
        (0..=self.log_delta).rev().flat_map(move |level| {
            let side = self.side(level);
            (0..side * side).map(move |i| CellId { level, row: i / side, col: i % side })
        })
    }

    /// Level-`level` cell containing the pixel `(row, col)`.
    #[inline]
    pub fn cell_containing(&self, row: usize, col: usize, level: u32) -> CellId {
        CellId { level, row: row >> level, col: col >> level }
    }

    /// Fixed representative pixel of a cell: offset `⌊(2^i − 1)/2⌋` on both axes.
    pub fn center_pixel(&self, c: CellId) -> (usize, usize) {
        let size = 1usize << c.level;
        let off = (size - 1) / 2;
        (c.row * size + off, c.col * size + off)
    }

    #[inline]
    pub fn pixel_index(&self, row: usize, col: usize) -> usize {
        row * self.delta() + col
    }

    #[inline]
    pub fn pixel_coords(&self, index: usize) -> (usize, usize) {
        (index / self.delta(), index % self.delta())
    }
}

impl TryFrom<usize> for Grid {
    type Error = Error;

    fn try_from(delta: usize) -> Result<Self> {
        Grid::new(delta)
    }
}

impl From<Grid> for usize {
    fn from(g: Grid) -> usize {
        g.delta()
    }
}

/// A cell of the grid at `level`, covering pixels
/// `[row·2^level, (row+1)·2^level) × [col·2^level, (col+1)·2^level)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellId {
    pub level: u32,
    pub row: usize,
    pub col: usize,
}

impl CellId {
    pub fn new(level: u32, row: usize, col: usize) -> Self {
        Self { level, row, col }
    }

    /// The four children in NW, NE, SW, SE order; empty for a pixel.
    pub fn children(&self) -> Vec<CellId> {
        self.children_array().map(Vec::from).unwrap_or_default()
    }

    pub fn children_array(&self) -> Option<[CellId; 4]> {
        if self.level == 0 {
            return None;
        }
        let (level, r, c) = (self.level - 1, 2 * self.row, 2 * self.col);
        Some([
            CellId { level, row: r, col: c },
            CellId { level, row: r, col: c + 1 },
            CellId { level, row: r + 1, col: c },
            CellId { level, row: r + 1, col: c + 1 },
        ])
    }

    /// Half-open pixel ranges `(rows, cols)` covered by the cell.
    pub fn pixel_span(&self) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let size = 1usize << self.level;
        (self.row * size..(self.row + 1) * size, self.col * size..(self.col + 1) * size)
    }

    pub fn contains_pixel(&self, row: usize, col: usize) -> bool {
        (row >> self.level) == self.row && (col >> self.level) == self.col
    }
}

/// A `Δ × Δ` real-valued image stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridImage {
    grid: Grid,
    values: Vec<f64>,
}

impl GridImage {
    pub fn zeros(grid: Grid) -> Self {
        Self { grid, values: vec![0.0; grid.n()] }
    }

    pub fn from_values(delta: usize, values: Vec<f64>) -> Result<Self> {
        let grid = Grid::new(delta)?;
        if values.len() != grid.n() {
            return invalid(format!("expected {} values for delta {delta}, got {}", grid.n(), values.len()));
        }
        Ok(Self { grid, values })
    }

    /// Unit mass at one pixel.
    pub fn point(grid: Grid, row: usize, col: usize) -> Self {
        let mut img = Self::zeros(grid);
        img.values[grid.pixel_index(row, col)] = 1.0;
        img
    }

    #[inline]
    pub fn grid(&self) -> Grid {
        self.grid
    }

    #[inline]
    pub fn delta(&self) -> usize {
        self.grid.delta()
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[self.grid.pixel_index(row, col)]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        let i = self.grid.pixel_index(row, col);
        self.values[i] = v;
    }

    #[inline]
    pub fn add_at(&mut self, row: usize, col: usize, v: f64) {
        let i = self.grid.pixel_index(row, col);
        self.values[i] += v;
    }

    pub fn l1_norm(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum()
    }

    /// Signed sum of all pixels.
    pub fn mass(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn is_nonneg(&self) -> bool {
        self.values.iter().all(|&v| v >= 0.0)
    }

    /// Number of nonzero pixels.
    pub fn nnz(&self) -> usize {
        self.values.iter().filter(|&&v| v != 0.0).count()
    }

    /// Nonzero pixels as `((row, col), value)`.
    pub fn support(&self) -> impl Iterator<Item = ((usize, usize), f64)> + '_ {
        self.values
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(i, &v)| (self.grid.pixel_coords(i), v))
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { grid: self.grid, values: self.values.iter().map(|v| v * factor).collect() }
    }

    /// Negative entries replaced by zero.
    pub fn clamped_nonneg(&self) -> Self {
        Self { grid: self.grid, values: self.values.iter().map(|&v| v.max(0.0)).collect() }
    }

    fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.grid, other.grid, "images live on different grids");
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        Self { grid: self.grid, values }
    }

    /// Serialize as `EMDIMG <delta>` followed by `Δ` rows of values.
    ///
    /// Values are printed with the shortest representation that parses back to
    /// the same `f64`, so every image round-trips bit-exactly.
    pub fn to_emdimg(&self) -> String {
        let delta = self.delta();
        let mut out = format!("EMDIMG {delta}\n");
        for row in self.values.chunks(delta) {
            let mut first = true;
            for v in row {
                if !first {
                    out.push(' ');
                }
                first = false;
                let _ = write!(out, "{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn parse_emdimg(text: &str) -> Result<Self> {
        let mut tokens = text.split_whitespace();
        match tokens.next() {
            Some("EMDIMG") => {}
            other => return Err(Error::Parse(format!("expected EMDIMG header, found {other:?}"))),
        }
        let delta: usize = parse_token(tokens.next(), "delta")?;
        let grid = Grid::new(delta)?;
        let values = parse_values(&mut tokens, grid.n())?;
        Ok(Self { grid, values })
    }

    pub fn write_emdimg<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(self.to_emdimg().as_bytes())?;
        Ok(())
    }

    pub fn read_emdimg<R: BufRead>(mut r: R) -> Result<Self> {
        let mut text = String::new();
        r.read_to_string(&mut text)?;
        Self::parse_emdimg(&text)
    }
}

impl Sub for &GridImage {
    type Output = GridImage;

    fn sub(self, rhs: &GridImage) -> GridImage {
        self.zip_with(rhs, |a, b| a - b)
    }
}

impl Add for &GridImage {
    type Output = GridImage;

    fn add(self, rhs: &GridImage) -> GridImage {
        self.zip_with(rhs, |a, b| a + b)
    }
}

pub(crate) fn parse_token<T: std::str::FromStr>(tok: Option<&str>, what: &str) -> Result<T> {
    let tok = tok.ok_or_else(|| Error::Parse(format!("missing {what}")))?;
    tok.parse().map_err(|_| Error::Parse(format!("bad {what}: {tok:?}")))
}

pub(crate) fn parse_values<'a>(tokens: &mut impl Iterator<Item = &'a str>, count: usize) -> Result<Vec<f64>> {
    let values: Vec<f64> = tokens
        .by_ref()
        .take(count)
        .map(|t| t.parse::<f64>().map_err(|_| Error::Parse(format!("bad value {t:?}"))))
        .collect::<Result<_>>()?;
    if values.len() != count {
        return Err(Error::Parse(format!("expected {count} values, found {}", values.len())));
    }
    if tokens.next().is_some() {
        return Err(Error::Parse("trailing data after values".into()));
    }
    Ok(values)
}

/// A length-`t` vector indexed by cells in the grid enumeration: the image of
/// the pyramid map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PyramidCoeffs {
    grid: Grid,
    values: Vec<f64>,
}

impl PyramidCoeffs {
    pub fn zeros(grid: Grid) -> Self {
        Self { grid, values: vec![0.0; grid.t()] }
    }

    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.t() {
            return invalid(format!("expected {} coefficients, got {}", grid.t(), values.len()));
        }
        Ok(Self { grid, values })
    }

    #[inline]
    pub fn grid(&self) -> Grid {
        self.grid
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, c: CellId) -> f64 {
        self.values[self.grid.index_of(c)]
    }

    pub fn l1_norm(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum()
    }

    /// `‖self − other‖₁`.
    pub fn l1_distance(&self, other: &Self) -> f64 {
        l1_distance(&self.values, &other.values)
    }

    /// Copy with every entry outside `support` zeroed.
    pub fn restricted(&self, support: &TreeSupport) -> Self {
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(i, &v)| if support.contains(i) { v } else { 0.0 })
            .collect();
        Self { grid: self.grid, values }
    }
}

pub(crate) fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// A rooted, parent-closed set of cells, optionally with a per-level width cap.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TreeSupport {
    grid: Grid,
    member: Vec<bool>,
    len: usize,
    width_bound: Option<usize>,
}

impl TreeSupport {
    pub fn empty(grid: Grid) -> Self {
        Self { grid, member: vec![false; grid.t()], len: 0, width_bound: None }
    }

    /// Every cell of the grid.
    pub fn full(grid: Grid) -> Self {
        Self { grid, member: vec![true; grid.t()], len: grid.t(), width_bound: None }
    }

    /// Smallest tree containing all `indices` (closure under parents).
    pub fn closure_of(grid: Grid, indices: impl IntoIterator<Item = usize>) -> Self {
        let mut s = Self::empty(grid);
        for i in indices {
            s.insert_with_ancestors(i);
        }
        s
    }

    pub fn with_width_bound(mut self, s: usize) -> Self {
        self.width_bound = Some(s);
        self
    }

    #[inline]
    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn width_bound(&self) -> Option<usize> {
        self.width_bound
    }

    #[inline]
    pub fn contains(&self, index: usize) -> bool {
        self.member[index]
    }

    pub fn contains_cell(&self, c: CellId) -> bool {
        self.grid.is_valid(c) && self.member[self.grid.index_of(c)]
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Insert `index` and every ancestor not yet present.
    pub fn insert_with_ancestors(&mut self, index: usize) {
        let mut cur = Some(index);
        while let Some(i) = cur {
            if self.member[i] {
                break;
            }
            self.member[i] = true;
            self.len += 1;
            cur = self.grid.parent_index(i);
        }
    }

    /// Membership indices in increasing (top-down) order.
    pub fn indices(&self) -> Vec<usize> {
        self.member.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect()
    }

    pub fn cells(&self) -> Vec<CellId> {
        self.indices().into_iter().map(|i| self.grid.cell_of(i)).collect()
    }

    pub fn width_at(&self, level: u32) -> usize {
        self.grid.level_range(level).filter(|&i| self.member[i]).count()
    }

    pub fn max_width(&self) -> usize {
        (0..=self.grid.top_level()).map(|l| self.width_at(l)).max().unwrap_or(0)
    }

    /// Rooted when nonempty, closed under parent, and within the width bound.
    pub fn is_valid_tree(&self) -> bool {
        if self.len > 0 && !self.member[0] {
            return false;
        }
        let closed = (1..self.grid.t())
            .filter(|&i| self.member[i])
            .all(|i| self.grid.parent_index(i).is_some_and(|p| self.member[p]));
        closed && self.width_bound.is_none_or(|s| self.max_width() <= s)
    }

    pub fn as_mask(&self) -> &[bool] {
        &self.member
    }
}
