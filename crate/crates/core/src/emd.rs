//! Exact Earth-Mover Distance.
//!
//! `‖w‖_EMD` is the cheapest way to ship the positive part of `w` onto its
//! negative part with unit cost per pixel step (ℓ1 ground distance), where any
//! mass left unmatched is charged `D = 2Δ` per unit.
//!
//! Because the ℓ1 distance between two pixels equals the length of a shortest
//! path in the 4-neighbour grid graph, the transport problem is solved as an
//! uncapacitated min-cost flow on that graph with one extra overflow sink for the
//! unmatched mass. Successive shortest paths with Dijkstra on reduced costs
//! gives the exact optimum; all arc costs are integers, so potentials stay
//! exact in `f64`.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use crate::error::{invalid, Result};
use crate::grid::{Grid, GridImage};

/// Absolute tolerance for the equal-mass precondition.
pub const MASS_TOLERANCE: f64 = 1e-9;

/// Cost per unit of unmatched mass, `D = 2Δ`.
pub fn unmatched_penalty(grid: Grid) -> f64 {
    2.0 * grid.delta() as f64
}

/// One transport edge: `mass` moved from pixel `source` to pixel `sink`
/// (row-major pixel indices).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowEdge {
    pub source: usize,
    pub sink: usize,
    pub mass: f64,
}

/// A witnessing transport plan.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowPlan {
    pub grid: Grid,
    pub edges: Vec<FlowEdge>,
    /// Pixels whose mass is destroyed rather than shipped, with the amount.
    pub unmatched: Vec<(usize, f64)>,
}

impl FlowPlan {
    pub fn unmatched_mass(&self) -> f64 {
        self.unmatched.iter().map(|(_, m)| m).sum()
    }

    /// `Σ mass·‖p − q‖₁ + D·unmatched`.
    pub fn cost(&self) -> f64 {
        let transport: f64 = self
            .edges
            .iter()
            .map(|e| e.mass * pixel_distance(self.grid, e.source, e.sink) as f64)
            .sum();
        transport + unmatched_penalty(self.grid) * self.unmatched_mass()
    }

    /// Mass leaving each pixel through transport edges.
    pub fn source_marginal(&self) -> GridImage {
        let mut img = GridImage::zeros(self.grid);
        for e in &self.edges {
            img.values_mut()[e.source] += e.mass;
        }
        img
    }

    /// Mass arriving at each pixel through transport edges.
    pub fn sink_marginal(&self) -> GridImage {
        let mut img = GridImage::zeros(self.grid);
        for e in &self.edges {
            img.values_mut()[e.sink] += e.mass;
        }
        img
    }
}

/// Optimal cost together with a plan achieving it.
#[derive(Clone, Debug)]
pub struct EmdSolution {
    pub cost: f64,
    pub plan: FlowPlan,
}

pub fn pixel_distance(grid: Grid, p: usize, q: usize) -> usize {
    let (pr, pc) = grid.pixel_coords(p);
    let (qr, qc) = grid.pixel_coords(q);
    pr.abs_diff(qr) + pc.abs_diff(qc)
}

/// `EMD*(x, y)` for nonnegative images of equal total mass.
///
/// The plan's row sums reproduce `x` and its column sums reproduce `y`
/// (mass common to both sits on zero-length self edges).
pub fn emd_equal_mass(x: &GridImage, y: &GridImage) -> Result<EmdSolution> {
    if x.grid() != y.grid() {
        return invalid("images have different sizes");
    }
    if !x.is_nonneg() || !y.is_nonneg() {
        return invalid("EMD* requires nonnegative images");
    }
    let (mx, my) = (x.mass(), y.mass());
    if (mx - my).abs() > MASS_TOLERANCE {
        return invalid(format!("mass mismatch: {mx} vs {my}"));
    }
    let mut sol = emd_norm_with_plan(&(x - y));
    for (p, (&a, &b)) in x.values().iter().zip(y.values()).enumerate() {
        let common = a.min(b);
        if common > 0.0 {
            sol.plan.edges.push(FlowEdge { source: p, sink: p, mass: common });
        }
    }
    Ok(sol)
}

/// `‖w‖_EMD` for a signed image.
pub fn emd_norm(w: &GridImage) -> f64 {
    emd_norm_with_plan(w).cost
}

/// `‖w‖_EMD` with a plan shipping `w⁺` onto `w⁻`; unmatched entries carry the
/// leftover of whichever side is heavier.
pub fn emd_norm_with_plan(w: &GridImage) -> EmdSolution {
    let grid = w.grid();
    if w.mass() >= 0.0 {
        GridFlow::solve(grid, w.values())
    } else {
        let neg: Vec<f64> = w.values().iter().map(|v| -v).collect();
        let mut sol = GridFlow::solve(grid, &neg);
        for e in &mut sol.plan.edges {
            std::mem::swap(&mut e.source, &mut e.sink);
        }
        sol
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Key(f64);

impl Eq for Key {}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Key {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Arc leaving a node in the residual graph.
#[derive(Clone, Copy, Debug)]
enum Arc {
    Right,
    Left,
    Down,
    Up,
    ToOverflow,
    /// Overflow node back to a pixel, cancelling overflow flow.
    FromOverflow,
}

/// Min-cost flow on the pixel grid. Requires `Σ supply ≥ 0`; the excess is
/// absorbed by an overflow node at cost `D` per unit.
struct GridFlow {
    grid: Grid,
    delta: usize,
    /// Net flow on horizontal edge (r,c)–(r,c+1); positive means rightwards.
    horiz: Vec<f64>,
    /// Net flow on vertical edge (r,c)–(r+1,c); positive means downwards.
    vert: Vec<f64>,
    /// Flow from each pixel into the overflow node.
    overflow: Vec<f64>,
    excess: Vec<f64>,
    penalty: f64,
    eps: f64,
    overflow_active: bool,
}

impl GridFlow {
    fn solve(grid: Grid, supply: &[f64]) -> EmdSolution {
        let n = grid.n();
        let delta = grid.delta();
        let total: f64 = supply.iter().sum();
        let scale: f64 = supply.iter().map(|v| v.abs()).sum();
        let mut excess = supply.to_vec();
        excess.push(-total);
        let eps = 1e-13 * scale.max(f64::MIN_POSITIVE);
        let mut flow = GridFlow {
            grid,
            delta,
            horiz: vec![0.0; n],
            vert: vec![0.0; n],
            overflow: vec![0.0; n],
            excess,
            penalty: unmatched_penalty(grid),
            eps,
            overflow_active: total > eps,
        };
        for e in &mut flow.excess {
            if e.abs() <= eps {
                *e = 0.0;
            }
        }
        flow.run();
        let cost = flow.cost();
        let plan = flow.decompose(supply);
        EmdSolution { cost, plan }
    }

    #[inline]
    fn overflow_node(&self) -> usize {
        self.grid.n()
    }

    fn cost(&self) -> f64 {
        let moved: f64 = self.horiz.iter().chain(&self.vert).map(|f| f.abs()).sum();
        moved + self.penalty * self.overflow.iter().sum::<f64>()
    }

    /// Residual arcs out of `u` as `(target, arc, cost, capacity)`.
    fn for_each_arc(&self, u: usize, mut f: impl FnMut(usize, Arc, f64, f64)) {
        let o = self.overflow_node();
        if u == o {
            for (p, &h) in self.overflow.iter().enumerate() {
                if h > 0.0 {
                    f(p, Arc::FromOverflow, -self.penalty, h);
                }
            }
            return;
        }
        let (r, c) = (u / self.delta, u % self.delta);
        let edge = |g: f64, forward: bool| -> (f64, f64) {
            // moving along the edge's positive direction cancels negative flow
            let signed = if forward { g } else { -g };
            if signed < 0.0 {
                (-1.0, -signed)
            } else {
                (1.0, f64::INFINITY)
            }
        };
        if c + 1 < self.delta {
            let (cost, cap) = edge(self.horiz[u], true);
            f(u + 1, Arc::Right, cost, cap);
        }
        if c > 0 {
            let (cost, cap) = edge(self.horiz[u - 1], false);
            f(u - 1, Arc::Left, cost, cap);
        }
        if r + 1 < self.delta {
            let (cost, cap) = edge(self.vert[u], true);
            f(u + self.delta, Arc::Down, cost, cap);
        }
        if r > 0 {
            let (cost, cap) = edge(self.vert[u - self.delta], false);
            f(u - self.delta, Arc::Up, cost, cap);
        }
        if self.overflow_active {
            f(o, Arc::ToOverflow, self.penalty, f64::INFINITY);
        }
    }

    fn capacity(&self, u: usize, arc: Arc, v: usize) -> f64 {
        let cancel = |g: f64| if g > 0.0 { g } else { f64::INFINITY };
        match arc {
            Arc::Right => cancel(-self.horiz[u]),
            Arc::Left => cancel(self.horiz[v]),
            Arc::Down => cancel(-self.vert[u]),
            Arc::Up => cancel(self.vert[v]),
            Arc::ToOverflow => f64::INFINITY,
            Arc::FromOverflow => self.overflow[v],
        }
    }

    fn push(&mut self, u: usize, arc: Arc, v: usize, amount: f64) {
        match arc {
            Arc::Right => self.horiz[u] += amount,
            Arc::Left => self.horiz[v] -= amount,
            Arc::Down => self.vert[u] += amount,
            Arc::Up => self.vert[v] -= amount,
            Arc::ToOverflow => self.overflow[u] += amount,
            Arc::FromOverflow => self.overflow[v] -= amount,
        }
        let eps = self.eps;
        let slot = match arc {
            Arc::Right => &mut self.horiz[u],
            Arc::Down => &mut self.vert[u],
            Arc::Left => &mut self.horiz[v],
            Arc::Up => &mut self.vert[v],
            Arc::ToOverflow => &mut self.overflow[u],
            Arc::FromOverflow => &mut self.overflow[v],
        };
        if slot.abs() <= eps {
            *slot = 0.0;
        }
    }

    fn run(&mut self) {
        let nodes = self.grid.n() + 1;
        let mut potential = vec![0.0f64; nodes];
        let mut dist = vec![f64::INFINITY; nodes];
        let mut settled = vec![false; nodes];
        let mut pred: Vec<Option<(usize, Arc)>> = vec![None; nodes];
        let mut heap = BinaryHeap::new();

        loop {
            let sources: Vec<usize> = (0..nodes).filter(|&v| self.excess[v] > 0.0).collect();
            if sources.is_empty() {
                break;
            }
            dist.fill(f64::INFINITY);
            settled.fill(false);
            pred.fill(None);
            heap.clear();
            let top = sources.iter().map(|&s| potential[s]).fold(f64::NEG_INFINITY, f64::max);
            for &s in &sources {
                dist[s] = top - potential[s];
                heap.push(Reverse((Key(dist[s]), s)));
            }

            let mut target = None;
            while let Some(Reverse((Key(d), u))) = heap.pop() {
                if settled[u] || d > dist[u] {
                    continue;
                }
                settled[u] = true;
                if self.excess[u] < 0.0 {
                    target = Some(u);
                    break;
                }
                self.for_each_arc(u, |v, arc, cost, cap| {
                    if cap <= 0.0 || settled[v] {
                        return;
                    }
                    let nd = d + cost + potential[u] - potential[v];
                    if nd < dist[v] {
                        dist[v] = nd;
                        pred[v] = Some((u, arc));
                        heap.push(Reverse((Key(nd), v)));
                    }
                });
            }
            let Some(t) = target else {
                // no reachable deficit: remaining excess is numerical residue
                break;
            };

            let dt = dist[t];
            for v in 0..nodes {
                potential[v] += if settled[v] { dist[v] } else { dt };
            }

            // bottleneck along the path
            let mut amount = -self.excess[t];
            let mut v = t;
            while let Some((u, arc)) = pred[v] {
                amount = amount.min(self.capacity(u, arc, v));
                v = u;
            }
            let s = v;
            amount = amount.min(self.excess[s]);

            let mut v = t;
            while let Some((u, arc)) = pred[v] {
                self.push(u, arc, v, amount);
                v = u;
            }
            self.excess[s] -= amount;
            self.excess[t] += amount;
            for x in [s, t] {
                if self.excess[x].abs() <= self.eps {
                    self.excess[x] = 0.0;
                }
            }
        }
    }

    /// Split the optimal flow into source-to-sink transport edges.
    fn decompose(&self, supply: &[f64]) -> FlowPlan {
        let n = self.grid.n();
        let o = self.overflow_node();
        let mut horiz = self.horiz.clone();
        let mut vert = self.vert.clone();
        let mut overflow = self.overflow.clone();
        let mut remaining: Vec<f64> = supply.iter().map(|v| v.max(0.0)).collect();
        let mut demand: Vec<f64> = supply.iter().map(|v| (-v).max(0.0)).collect();
        let mut edges: Vec<FlowEdge> = Vec::new();
        let mut unmatched: Vec<(usize, f64)> = Vec::new();
        let delta = self.delta;

        // outgoing positive-flow arc from pixel u
        // residues at or below eps are treated as empty
        let eps = self.eps;
        let next_arc = |u: usize, horiz: &[f64], vert: &[f64], overflow: &[f64]| -> Option<(usize, Arc, f64)> {
            let (r, c) = (u / delta, u % delta);
            if c + 1 < delta && horiz[u] > eps {
                return Some((u + 1, Arc::Right, horiz[u]));
            }
            if c > 0 && horiz[u - 1] < -eps {
                return Some((u - 1, Arc::Left, -horiz[u - 1]));
            }
            if r + 1 < delta && vert[u] > eps {
                return Some((u + delta, Arc::Down, vert[u]));
            }
            if r > 0 && vert[u - delta] < -eps {
                return Some((u - delta, Arc::Up, -vert[u - delta]));
            }
            if overflow[u] > eps {
                return Some((o, Arc::ToOverflow, overflow[u]));
            }
            None
        };

        for s in 0..n {
            let mut guard = 0usize;
            while remaining[s] > self.eps && guard < 8 * n + 8 {
                guard += 1;
                // a source with its own demand never occurs (supply is signed)
                let mut path: Vec<(usize, Arc, usize)> = Vec::new();
                let mut u = s;
                let mut amount = remaining[s];
                let mut sink = None;
                let mut steps = 0usize;
                loop {
                    if u != s && u < n && demand[u] > self.eps {
                        amount = amount.min(demand[u]);
                        sink = Some(u);
                        break;
                    }
                    if u == o {
                        sink = Some(o);
                        break;
                    }
                    let Some((v, arc, f)) = next_arc(u, &horiz, &vert, &overflow) else { break };
                    amount = amount.min(f);
                    path.push((u, arc, v));
                    u = v;
                    steps += 1;
                    if steps > 4 * n {
                        break;
                    }
                }
                let Some(sink) = sink else { break };
                for &(a, arc, b) in &path {
                    match arc {
                        Arc::Right => horiz[a] -= amount,
                        Arc::Left => horiz[b] += amount,
                        Arc::Down => vert[a] -= amount,
                        Arc::Up => vert[b] += amount,
                        Arc::ToOverflow => overflow[a] -= amount,
                        Arc::FromOverflow => unreachable!(),
                    }
                }
                remaining[s] -= amount;
                if sink == o {
                    unmatched.push((s, amount));
                } else {
                    demand[sink] -= amount;
                    edges.push(FlowEdge { source: s, sink, mass: amount });
                }
            }
        }
        merge_edges(&mut edges);
        FlowPlan { grid: self.grid, edges, unmatched }
    }
}

fn merge_edges(edges: &mut Vec<FlowEdge>) {
    edges.sort_by_key(|e| (e.source, e.sink));
    let mut merged: Vec<FlowEdge> = Vec::with_capacity(edges.len());
    for e in edges.drain(..) {
        match merged.last_mut() {
            Some(last) if last.source == e.source && last.sink == e.sink => last.mass += e.mass,
            _ => merged.push(e),
        }
    }
    *edges = merged;
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(delta: usize) -> Grid {
        Grid::new(delta).unwrap()
    }

    #[test]
    fn opposite_corners() {
        let g = grid(4);
        let x = GridImage::point(g, 0, 0);
        let y = GridImage::point(g, 3, 3);
        let sol = emd_equal_mass(&x, &y).unwrap();
        assert_eq!(sol.cost, 6.0);
        assert_eq!(sol.plan.edges, vec![FlowEdge { source: 0, sink: 15, mass: 1.0 }]);
    }

    #[test]
    fn identical_images_cost_nothing() {
        let g = grid(8);
        let mut x = GridImage::zeros(g);
        x.set(1, 2, 3.0);
        x.set(5, 5, 1.5);
        let sol = emd_equal_mass(&x, &x).unwrap();
        assert_eq!(sol.cost, 0.0);
        assert_eq!(sol.plan.source_marginal(), x);
        assert_eq!(sol.plan.sink_marginal(), x);
    }

    #[test]
    fn mass_mismatch_is_rejected() {
        let g = grid(4);
        let x = GridImage::point(g, 0, 0);
        let y = GridImage::point(g, 0, 0).scaled(2.0);
        assert!(emd_equal_mass(&x, &y).is_err());
        assert!(emd_equal_mass(&x, &x.scaled(-1.0)).is_err());
    }

    #[test]
    fn matched_pair_and_lone_unit() {
        let g = grid(8);
        let w = &GridImage::point(g, 1, 6) - &GridImage::point(g, 4, 2);
        assert_eq!(emd_norm(&w), 7.0);
        assert_eq!(emd_norm(&GridImage::point(g, 2, 2)), 16.0);
        assert_eq!(emd_norm(&GridImage::point(g, 2, 2).scaled(-1.0)), 16.0);
        assert_eq!(emd_norm(&GridImage::zeros(g)), 0.0);
    }

    #[test]
    fn unbalanced_plan_reports_unmatched() {
        let g = grid(4);
        let mut w = GridImage::zeros(g);
        w.set(0, 0, 2.0);
        w.set(0, 3, -0.5);
        let sol = emd_norm_with_plan(&w);
        assert!((sol.cost - (0.5 * 3.0 + 1.5 * 8.0)).abs() < 1e-12);
        assert!((sol.plan.unmatched_mass() - 1.5).abs() < 1e-12);
        assert!((sol.plan.cost() - sol.cost).abs() < 1e-9);
    }

    #[test]
    fn plan_cost_matches_on_clustered_input() {
        let g = grid(16);
        let mut x = GridImage::zeros(g);
        let mut y = GridImage::zeros(g);
        for i in 0..16 {
            x.add_at(i, (i * 5) % 16, 1.0 + (i % 3) as f64);
            y.add_at((i * 7) % 16, 15 - i, 1.0 + (i % 3) as f64);
        }
        let sol = emd_equal_mass(&x, &y).unwrap();
        assert!((sol.plan.cost() - sol.cost).abs() < 1e-9);
        let src = sol.plan.source_marginal();
        let snk = sol.plan.sink_marginal();
        for p in 0..g.n() {
            assert!((src.values()[p] - x.values()[p]).abs() < 1e-9);
            assert!((snk.values()[p] - y.values()[p]).abs() < 1e-9);
        }
    }
}
