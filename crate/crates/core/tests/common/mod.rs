//! Independent oracles: linear programs and exhaustive enumeration.
#![allow(dead_code)]

use emdsparse::{Grid, GridImage};
use microlp::{ComparisonOp, OptimizationDirection, Problem, Variable};

fn solve(problem: &Problem) -> microlp::Solution {
    problem.solve().expect("LP solves").into_solution().expect("LP is not interrupted")
}

/// Signed EMD as a bipartite transport LP: every unit of `w⁺` and `w⁻` is
/// either matched at ℓ1 cost or discarded at `2Δ`.
pub fn lp_emd(w: &GridImage) -> f64 {
    let grid = w.grid();
    let d = 2.0 * grid.delta() as f64;
    let pos: Vec<(usize, f64)> = w.values().iter().copied().enumerate().filter(|(_, v)| *v > 0.0).collect();
    let neg: Vec<(usize, f64)> =
        w.values().iter().copied().enumerate().filter(|(_, v)| *v < 0.0).map(|(i, v)| (i, -v)).collect();
    if pos.is_empty() && neg.is_empty() {
        return 0.0;
    }
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let mut flows: Vec<Vec<Variable>> = Vec::new();
    for &(p, _) in &pos {
        let (pr, pc) = grid.pixel_coords(p);
        flows.push(
            neg.iter()
                .map(|&(q, _)| {
                    let (qr, qc) = grid.pixel_coords(q);
                    let dist = (pr.abs_diff(qr) + pc.abs_diff(qc)) as f64;
                    lp.add_var(dist, (0.0, f64::INFINITY))
                })
                .collect(),
        );
    }
    let drop_pos: Vec<Variable> = pos.iter().map(|_| lp.add_var(d, (0.0, f64::INFINITY))).collect();
    let drop_neg: Vec<Variable> = neg.iter().map(|_| lp.add_var(d, (0.0, f64::INFINITY))).collect();
    for (a, &(_, mass)) in pos.iter().enumerate() {
        let mut expr: Vec<(Variable, f64)> = flows[a].iter().map(|&v| (v, 1.0)).collect();
        expr.push((drop_pos[a], 1.0));
        lp.add_constraint(expr, ComparisonOp::Eq, mass);
    }
    for (b, &(_, mass)) in neg.iter().enumerate() {
        let mut expr: Vec<(Variable, f64)> = flows.iter().map(|row| (row[b], 1.0)).collect();
        expr.push((drop_neg[b], 1.0));
        lp.add_constraint(expr, ComparisonOp::Eq, mass);
    }
    solve(&lp).objective()
}

/// `min_y ‖b − Py‖₁` over all real `y`.
pub fn lp_pyramid_fit(grid: Grid, b: &[f64]) -> f64 {
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let y: Vec<Variable> = (0..grid.n()).map(|_| lp.add_var(0.0, (f64::NEG_INFINITY, f64::INFINITY))).collect();
    for level in 0..=grid.top_level() {
        let scale = (1u64 << level) as f64;
        for (index, cell) in grid.level_range(level).zip(cells_at(grid, level)) {
            let e = lp.add_var(1.0, (0.0, f64::INFINITY));
            let (rows, cols) = cell.pixel_span();
            let mut terms: Vec<(Variable, f64)> = Vec::new();
            for r in rows {
                for c in cols.clone() {
                    terms.push((y[grid.pixel_index(r, c)], scale));
                }
            }
            // e ≥ b − Py and e ≥ Py − b
            let mut up = terms.clone();
            up.push((e, 1.0));
            lp.add_constraint(up, ComparisonOp::Ge, b[index]);
            let mut down: Vec<(Variable, f64)> = terms.into_iter().map(|(v, a)| (v, -a)).collect();
            down.push((e, 1.0));
            lp.add_constraint(down, ComparisonOp::Ge, -b[index]);
        }
    }
    solve(&lp).objective()
}

fn cells_at(grid: Grid, level: u32) -> Vec<emdsparse::CellId> {
    let side = grid.side(level);
    (0..side * side).map(|i| emdsparse::CellId::new(level, i / side, i % side)).collect()
}

/// `min ‖y − y′‖₁` over `y′ ≥ 0` supported on `support` with every value at
/// least twice the sum of its children.
pub fn lp_model_fit(grid: Grid, y: &[f64], support: &[usize]) -> f64 {
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let vars: Vec<Variable> = support.iter().map(|_| lp.add_var(0.0, (0.0, f64::INFINITY))).collect();
    let off: f64 = (0..grid.t()).filter(|i| !support.contains(i)).map(|i| y[i].abs()).sum();
    for (slot, &q) in support.iter().enumerate() {
        let e = lp.add_var(1.0, (0.0, f64::INFINITY));
        lp.add_constraint(vec![(e, 1.0), (vars[slot], -1.0)], ComparisonOp::Ge, -y[q]);
        lp.add_constraint(vec![(e, 1.0), (vars[slot], 1.0)], ComparisonOp::Ge, y[q]);
        if let Some(children) = grid.child_indices(q) {
            let mut expr = vec![(vars[slot], 1.0)];
            for c in children {
                if let Some(cs) = support.iter().position(|&s| s == c) {
                    expr.push((vars[cs], -2.0));
                }
            }
            lp.add_constraint(expr, ComparisonOp::Ge, 0.0);
        }
    }
    off + solve(&lp).objective()
}

/// All parent-closed subsets of the cell tree with at most `max_size` cells
/// and at most `max_width` cells per level (root included when nonempty).
pub fn rooted_subtrees(grid: Grid, max_size: usize, max_width: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    if max_size == 0 {
        return out;
    }
    let mut stack = vec![vec![0usize]];
    while let Some(tree) = stack.pop() {
        // Extend only by cells after the last added one in a canonical order
        // so that each set is produced once.
        let last = *tree.last().expect("nonempty");
        if tree.len() < max_size {
            for c in (last + 1)..grid.t() {
                let parent = grid.parent_index(c).expect("non-root");
                if !tree.contains(&parent) {
                    continue;
                }
                let level = grid.level_of(c);
                if tree.iter().filter(|&&q| grid.level_of(q) == level).count() >= max_width {
                    continue;
                }
                let mut next = tree.clone();
                next.push(c);
                stack.push(next);
            }
        }
        out.push(tree);
    }
    out
}

/// Brute-force tree projection: the best subtree under `score`.
pub fn brute_best_subtree(grid: Grid, scores: &[f64], budget: usize) -> (f64, Vec<usize>) {
    let mut best = (0.0, Vec::new());
    for tree in rooted_subtrees(grid, budget, usize::MAX) {
        let v: f64 = tree.iter().map(|&i| scores[i]).sum();
        if v > best.0 {
            let mut sorted = tree.clone();
            sorted.sort_unstable();
            best = (v, sorted);
        }
    }
    best
}

/// Exhaustive weighted k-median over every set of `k` pixels.
pub fn brute_kmedian(x: &GridImage, k: usize) -> f64 {
    let grid = x.grid();
    let pts: Vec<((usize, usize), f64)> = x.support().collect();
    let n = grid.n();
    let mut best = f64::INFINITY;
    let mut combo: Vec<usize> = (0..k).collect();
    loop {
        let cost: f64 = pts
            .iter()
            .map(|&((r, c), w)| {
                w * combo
                    .iter()
                    .map(|&p| {
                        let (pr, pc) = grid.pixel_coords(p);
                        (pr.abs_diff(r) + pc.abs_diff(c)) as f64
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .sum();
        best = best.min(cost);
        // next combination
        let mut i = k;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if combo[i] < n - k + i {
                combo[i] += 1;
                for j in i + 1..k {
                    combo[j] = combo[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Image with i.i.d. integer entries in `lo..=hi`.
pub fn random_int_image(grid: Grid, rng: &mut impl rand::Rng, lo: i32, hi: i32) -> GridImage {
    let v = (0..grid.n()).map(|_| rng.random_range(lo..=hi) as f64).collect();
    GridImage::from_values(grid.delta(), v).unwrap()
}
