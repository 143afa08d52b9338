//! Structured solver based on the Lagrangian dual.
//!
//! For `γ = +1` the survival rows read `s_k·D_k ≥ 0` with
//! `D_k = Σ_{j≤k} (u_j0 − u_j1)`. Writing `M_j = Σ_{k≥j} μ_k s_k`, the
//! Lagrangian separates over nodes: arm 0 sees shift `+M_j`, arm 1 sees `−M_j`.
//! Dual feasibility `μ ≥ 0` becomes the V-shaped order
//! `M_1 ≥ … ≥ M_{v+1} ≤ … ≤ M_m ≤ M_{m+1} = 0`, and minimizing the dual is an
//! isotonic regression with convex separable losses whose derivative at node
//! `j` is `x_j(M) = u_j0(M) − u_j1(M)`.
//!
//! Both arms of the V are solved once with pool-adjacent-violators, keeping a
//! persistent stack so every prefix and suffix state is available. For a
//! given `v` the root node `v+1` then absorbs neighbouring blocks in order of
//! increasing value; the remaining nodes are the unconstrained solutions
//! clamped from below by the root value. `γ = −1` is the same problem with the
//! arms exchanged.

use rayon::prelude::*;

use super::{Coord, Coords, Response};
use crate::constraints::{ConstraintKind, ConstraintSystem, Dominance};
use crate::data::CAP;
use crate::scalar::Scalar;

/// Output of the structured route for one `(θ, γ)`.
#[derive(Debug, Clone)]
pub(crate) struct Candidate<T> {
    pub u0: Vec<T>,
    pub u1: Vec<T>,
    pub mu: Vec<T>,
    pub iterations: usize,
    /// Some multiplier is infinite.
    pub unbounded: bool,
}

impl<T: Scalar> Candidate<T> {
    fn swap_arms(self) -> Self {
        Self {
            u0: self.u1,
            u1: self.u0,
            ..self
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Node<T> {
    c0: Coord<T>,
    c1: Coord<T>,
}

impl<T: Scalar> Node<T> {
    /// Right limit of `x(c)`.
    #[inline]
    fn x_above(&self, c: T) -> T {
        self.c0.response_above(c) - self.c1.response_below(-c)
    }

    /// Left limit of `x(c)`.
    #[inline]
    fn x_below(&self, c: T) -> T {
        self.c0.response_below(c) - self.c1.response_above(-c)
    }

    #[inline]
    fn slope(&self, c: T) -> T {
        self.c0.response_slope(c) + self.c1.response_slope(-c)
    }

    fn kinks(&self) -> impl Iterator<Item = T> {
        let a = self.c0.kink();
        let b = self.c1.kink().map(|k| -k);
        a.into_iter().chain(b)
    }
}

fn nodes<T: Scalar>(coords: &Coords<T>) -> Vec<Node<T>> {
    coords.arms[0]
        .iter()
        .zip(&coords.arms[1])
        .map(|(&c0, &c1)| Node { c0, c1 })
        .collect()
}

fn sum_above<T: Scalar>(nodes: &[Node<T>], c: T) -> T {
    nodes.iter().fold(T::zero(), |s, n| s + n.x_above(c))
}

fn sum_below<T: Scalar>(nodes: &[Node<T>], c: T) -> T {
    nodes.iter().fold(T::zero(), |s, n| s + n.x_below(c))
}

/// `inf{c : Σ x_j(c+) ≥ 0}` over a contiguous block; may be `±∞`.
pub(crate) fn solve_block<T: Scalar>(nodes: &[Node<T>], iters: &mut usize) -> T {
    let mut kinks: Vec<T> = nodes.iter().flat_map(|n| n.kinks()).collect();
    kinks.sort_by(|a, b| a.partial_cmp(b).expect("finite kinks"));
    kinks.dedup();

    let i = kinks.partition_point(|&k| sum_above(nodes, k) < T::zero());
    let lo = if i > 0 { Some(kinks[i - 1]) } else { None };
    let hi = kinks.get(i).copied();
    if let Some(k) = hi {
        if sum_below(nodes, k) < T::zero() {
            return k;
        }
    }
    continuous_root(nodes, lo, hi, iters)
}

/// Root of the continuous sum on `(lo, hi)`, where the sum is negative just
/// above `lo` and non-negative just below `hi`.
fn continuous_root<T: Scalar>(nodes: &[Node<T>], lo: Option<T>, hi: Option<T>, iters: &mut usize) -> T {
    let s = |c: T| sum_above(nodes, c);
    let one = T::one();
    let two = T::lit(2.0);

    let (mut a, mut b) = match (lo, hi) {
        (Some(a), Some(b)) => (a, b),
        (Some(a), None) => {
            if nodes.iter().all(|n| matches!(n.c1, Coord::Pinned)) {
                return T::infinity();
            }
            match expand(a, one, &s, iters) {
                Some(b) => (a, b),
                None => return T::infinity(),
            }
        }
        (None, Some(b)) => {
            if nodes.iter().all(|n| matches!(n.c0, Coord::Pinned)) {
                return T::neg_infinity();
            }
            match expand(b, -one, &s, iters) {
                Some(a) => (a, b),
                None => return T::neg_infinity(),
            }
        }
        (None, None) => {
            let s0 = s(T::zero());
            if s0 >= T::zero() {
                if nodes.iter().all(|n| matches!(n.c0, Coord::Pinned)) {
                    return T::neg_infinity();
                }
                match expand(T::zero(), -one, &s, iters) {
                    Some(a) => (a, T::zero()),
                    None => return T::neg_infinity(),
                }
            } else {
                if nodes.iter().all(|n| matches!(n.c1, Coord::Pinned)) {
                    return T::infinity();
                }
                match expand(T::zero(), one, &s, iters) {
                    Some(b) => (T::zero(), b),
                    None => return T::infinity(),
                }
            }
        }
    };

    let eps = T::epsilon();
    let mut c = a + (b - a) / two;
    let mut width = b - a;
    for _ in 0..400 {
        *iters += 1;
        let v = s(c);
        if v >= T::zero() {
            b = c;
        } else {
            a = c;
        }
        if v == T::zero() {
            return c;
        }
        let scale = c.abs().max(T::min_positive_value());
        if b - a <= T::lit(4.0) * eps * scale {
            return b;
        }
        let d = nodes.iter().fold(T::zero(), |acc, n| acc + n.slope(c));
        let step = if d > T::zero() { v / d } else { T::infinity() };
        let newton = c - step;
        if step.abs() <= T::lit(2.0) * eps * scale && v < T::zero() {
            // converged from below: probe just above
            let probe = c + T::lit(8.0) * eps * scale;
            if probe < b && s(probe) >= T::zero() {
                return probe;
            }
        }
        let shrunk = b - a <= width / two;
        width = b - a;
        c = if newton > a && newton < b && (shrunk || step.abs() < (b - a) / T::lit(4.0)) {
            newton
        } else {
            a + (b - a) / two
        };
        if !(c > a && c < b) {
            return b;
        }
    }
    b
}

/// Walks from `start` in direction `dir` with doubling steps until the sum
/// changes sign.
fn expand<T: Scalar, F: Fn(T) -> T>(start: T, dir: T, s: &F, iters: &mut usize) -> Option<T> {
    let mut step = start.abs().max(T::one());
    for _ in 0..2100 {
        *iters += 1;
        let c = start + dir * step;
        if !c.is_finite() {
            return None;
        }
        let v = s(c);
        if (dir > T::zero() && v >= T::zero()) || (dir < T::zero() && v < T::zero()) {
            return Some(c);
        }
        step = step * T::lit(2.0);
    }
    None
}

#[derive(Debug, Clone, Copy)]
struct Block<T> {
    start: usize,
    end: usize,
    value: T,
    fixed: bool,
    below: Option<usize>,
}

/// Persistent stacks of pool-adjacent-violators blocks for every prefix and
/// suffix of the node sequence.
struct Chains<T> {
    arena: Vec<Block<T>>,
    /// `left[v]`: non-increasing fit of nodes `0..v`.
    left: Vec<Option<usize>>,
    /// `right[s]`: non-decreasing fit of nodes `s..m` followed by the fixed
    /// zero node.
    right: Vec<Option<usize>>,
    iterations: usize,
}

impl<T: Scalar> Chains<T> {
    fn build(nodes: &[Node<T>]) -> Self {
        let m = nodes.len();
        let mut iterations = 0;
        let mut arena: Vec<Block<T>> = Vec::with_capacity(4 * m + 1);
        let mut single = Vec::with_capacity(m);
        for j in 0..m {
            single.push(solve_block(&nodes[j..=j], &mut iterations));
        }

        let mut left = Vec::with_capacity(m + 1);
        left.push(None);
        let mut top: Option<usize> = None;
        for j in 0..m {
            let mut blk = Block {
                start: j,
                end: j,
                value: single[j],
                fixed: false,
                below: None,
            };
            while let Some(t) = top {
                let prev = arena[t];
                if prev.value < blk.value {
                    blk.start = prev.start;
                    blk.value = solve_block(&nodes[blk.start..=blk.end], &mut iterations);
                    top = prev.below;
                } else {
                    break;
                }
            }
            blk.below = top;
            arena.push(blk);
            top = Some(arena.len() - 1);
            left.push(top);
        }

        let mut right = vec![None; m + 1];
        arena.push(Block {
            start: m,
            end: m.wrapping_sub(1),
            value: T::zero(),
            fixed: true,
            below: None,
        });
        let mut top = Some(arena.len() - 1);
        right[m] = top;
        for j in (0..m).rev() {
            let mut blk = Block {
                start: j,
                end: j,
                value: single[j],
                fixed: false,
                below: None,
            };
            while let Some(t) = top {
                let next = arena[t];
                if blk.value > next.value {
                    if next.fixed {
                        blk.end = next
                            .end
                            .max(blk.end)
                            .max(if next.start > next.end { blk.end } else { next.end });
                        blk.value = T::zero();
                        blk.fixed = true;
                    } else {
                        blk.end = next.end;
                        blk.value = solve_block(&nodes[blk.start..=blk.end], &mut iterations);
                    }
                    top = next.below;
                } else {
                    break;
                }
            }
            blk.below = top;
            arena.push(blk);
            top = Some(arena.len() - 1);
            right[j] = top;
        }

        Self {
            arena,
            left,
            right,
            iterations,
        }
    }

    fn blocks(&self, mut top: Option<usize>) -> Vec<Block<T>> {
        let mut out = Vec::new();
        while let Some(t) = top {
            out.push(self.arena[t]);
            top = self.arena[t].below;
        }
        out
    }

    /// Dual variables `M_1..M_m` for split `v`.
    fn multipliers(&self, nodes: &[Node<T>], v: usize, iters: &mut usize) -> Vec<T> {
        let m = nodes.len();
        let mut out = vec![T::zero(); m];
        let left = self.blocks(self.left[v]);
        if v == m {
            for b in &left {
                for j in b.start..=b.end {
                    out[j] = b.value.max(T::zero());
                }
            }
            return out;
        }
        let right = self.blocks(self.right[v + 1]);

        // merge order: ascending block value, interleaving both sides
        let mut order: Vec<(bool, usize)> = Vec::with_capacity(left.len() + right.len());
        let (mut i, mut k) = (0, 0);
        while i < left.len() || k < right.len() {
            let take_left = k >= right.len() || (i < left.len() && left[i].value <= right[k].value);
            if take_left {
                order.push((true, i));
                i += 1;
            } else {
                order.push((false, k));
                k += 1;
            }
        }
        let value = |idx: usize| -> T {
            let (is_left, pos) = order[idx];
            if is_left {
                left[pos].value
            } else {
                right[pos].value
            }
        };
        // root value after absorbing the first `count` blocks
        let root = |count: usize, iters: &mut usize| -> T {
            let (mut lo, mut hi) = (v, v);
            for &(is_left, pos) in &order[..count] {
                if is_left {
                    lo = left[pos].start;
                } else {
                    if right[pos].fixed {
                        return T::zero();
                    }
                    hi = right[pos].end;
                }
            }
            solve_block(&nodes[lo..=hi], iters)
        };
        let done = |count: usize, c: T| count >= order.len() || c <= value(count);

        // galloping search for the first count whose root stays below the
        // next block value
        let mut prev_bad: Option<usize> = None;
        let mut probe = 0usize;
        let (mut good, mut good_c);
        loop {
            let c = root(probe, iters);
            if done(probe, c) {
                good = probe;
                good_c = c;
                break;
            }
            prev_bad = Some(probe);
            probe = if probe == 0 { 1 } else { (probe * 2).min(order.len()) };
        }
        let mut lo = prev_bad.map_or(0, |p| p + 1);
        while lo < good {
            let mid = lo + (good - lo) / 2;
            let c = root(mid, iters);
            if done(mid, c) {
                good = mid;
                good_c = c;
            } else {
                lo = mid + 1;
            }
        }
        let c = good_c;

        out[v] = c;
        for b in &left {
            let val = b.value.max(c);
            for j in b.start..=b.end {
                out[j] = val;
            }
        }
        for b in &right {
            if b.start > b.end || b.start >= m {
                continue;
            }
            let val = b.value.max(c);
            for j in b.start..=b.end.min(m - 1) {
                out[j] = val;
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
struct Interval<T> {
    lo: T,
    hi: T,
}

impl<T: Scalar> Interval<T> {
    fn all() -> Self {
        Self {
            lo: T::neg_infinity(),
            hi: T::infinity(),
        }
    }

    fn point(x: T) -> Self {
        Self { lo: x, hi: x }
    }

    fn intersect(self, other: Self) -> Self {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        if lo <= hi {
            Self { lo, hi }
        } else {
            // empty only through rounding; collapse to the nearest point
            let mid = if lo.is_finite() && hi.is_finite() {
                (lo + hi) / T::lit(2.0)
            } else if lo.is_finite() {
                lo
            } else {
                hi
            };
            Self::point(mid)
        }
    }

    fn minus(self, x: Self) -> Self {
        Self {
            lo: self.lo - x.hi,
            hi: self.hi - x.lo,
        }
    }

    fn clamp(self, x: T) -> T {
        x.max(self.lo).min(self.hi)
    }

    fn sign_half(sign: i8) -> Self {
        if sign > 0 {
            Self {
                lo: T::zero(),
                hi: T::infinity(),
            }
        } else {
            Self {
                lo: T::neg_infinity(),
                hi: T::zero(),
            }
        }
    }
}

/// Values of `x = u0 − u1` compatible with the Lagrangian at `M`.
struct NodeChoice<T> {
    u0: Response<T>,
    u1: Response<T>,
    range: Interval<T>,
    target: T,
}

fn node_choice<T: Scalar>(node: &Node<T>, m: T) -> NodeChoice<T> {
    let cap = T::lit(CAP);
    let u0 = node.c0.response(m);
    let u1 = node.c1.response(-m);
    let (range, target) = match (u0, u1) {
        (Response::Point(a), Response::Point(b)) => (Interval::point(a - b), a - b),
        (Response::Kink, Response::Point(b)) => (Interval { lo: -cap - b, hi: -b }, -b),
        (Response::Point(a), Response::Kink) => (Interval { lo: a, hi: a + cap }, a),
        (Response::Kink, Response::Kink) => (Interval { lo: -cap, hi: cap }, T::zero()),
    };
    NodeChoice { u0, u1, range, target }
}

fn split_choice<T: Scalar>(ch: &NodeChoice<T>, x: T) -> (T, T) {
    let cap = T::lit(CAP);
    let clamp = |u: T| u.max(-cap).min(T::zero());
    match (ch.u0, ch.u1) {
        (Response::Point(a), Response::Point(b)) => (a, b),
        (Response::Kink, Response::Point(b)) => (clamp(x + b), b),
        (Response::Point(a), Response::Kink) => (a, clamp(a - x)),
        (Response::Kink, Response::Kink) => {
            if x >= T::zero() {
                (T::zero(), clamp(-x))
            } else {
                (clamp(x), T::zero())
            }
        }
    }
}

/// Primal point for prefix rows from dual variables `M` (γ = +1 orientation).
fn recover_prefix<T: Scalar>(nodes: &[Node<T>], mm: &[T], signs: &[i8]) -> (Vec<T>, Vec<T>, Vec<T>) {
    let m = nodes.len();
    let mut mu = vec![T::zero(); m];
    for k in 0..m {
        let next = if k + 1 < m { mm[k + 1] } else { T::zero() };
        if mm[k] != next {
            mu[k] = T::lit(f64::from(signs[k])) * (mm[k] - next);
        }
    }
    let choices: Vec<NodeChoice<T>> = nodes.iter().zip(mm).map(|(n, &v)| node_choice(n, v)).collect();
    let row = |k: usize| {
        let mut iv = Interval::sign_half(signs[k]);
        if mu[k] > T::zero() {
            iv = iv.intersect(Interval::point(T::zero()));
        }
        iv
    };

    // reach[k]: admissible values of D_k that can still be completed
    let mut reach = vec![Interval::all(); m];
    if m > 0 {
        reach[m - 1] = row(m - 1);
        for k in (1..m).rev() {
            reach[k - 1] = reach[k].minus(choices[k].range).intersect(row(k - 1));
        }
    }

    let mut u0 = Vec::with_capacity(m);
    let mut u1 = Vec::with_capacity(m);
    let mut acc = T::zero();
    for k in 0..m {
        let ch = &choices[k];
        let want = Interval {
            lo: reach[k].lo - acc,
            hi: reach[k].hi - acc,
        };
        let x = ch.range.intersect(want).clamp(ch.target);
        let x = ch.range.clamp(x);
        let (a, b) = split_choice(ch, x);
        acc = acc + (a - b);
        u0.push(a);
        u1.push(b);
    }
    (u0, u1, mu)
}

/// Structured fits of the survival system for each split `v` in `vs`.
pub(crate) fn survival_candidates<T: Scalar>(coords: &Coords<T>, gamma: Dominance, vs: &[usize]) -> Vec<Candidate<T>> {
    let oriented = match gamma {
        Dominance::Control => coords.clone(),
        Dominance::Treatment => coords.swapped(),
    };
    let nodes = nodes(&oriented);
    let m = nodes.len();
    let chains = Chains::build(&nodes);
    let base = chains.iterations;
    let solve = |&v: &usize| {
        let mut iters = base;
        let mm = chains.multipliers(&nodes, v, &mut iters);
        let signs: Vec<i8> = (0..m).map(|k| if k < v { 1 } else { -1 }).collect();
        let unbounded = mm.iter().any(|x| !x.is_finite());
        let (u0, u1, mu) = recover_prefix(&nodes, &mm, &signs);
        let cand = Candidate {
            u0,
            u1,
            mu,
            iterations: iters,
            unbounded,
        };
        match gamma {
            Dominance::Control => cand,
            Dominance::Treatment => cand.swap_arms(),
        }
    };
    if vs.len() > 1 {
        vs.par_iter().map(solve).collect()
    } else {
        vs.iter().map(solve).collect()
    }
}

/// Per-node solutions of the pointwise (hazard) system.
pub(crate) struct HazardNodes<T> {
    nodes: Vec<Node<T>>,
    km: Vec<(T, T)>,
    pooled: Vec<T>,
    iterations: usize,
}

impl<T: Scalar> HazardNodes<T> {
    pub(crate) fn new(coords: &Coords<T>) -> Self {
        let nodes = nodes(coords);
        let mut iterations = 0;
        let pooled = nodes
            .iter()
            .map(|n| solve_block(std::slice::from_ref(n), &mut iterations))
            .collect();
        let km = nodes
            .iter()
            .map(|n| (n.c0.response_above(T::zero()), n.c1.response_above(T::zero())))
            .collect();
        Self {
            nodes,
            km,
            pooled,
            iterations,
        }
    }

    /// Optimal `(u_j0, u_j1, μ_j)` at node `j` under `sign·(u_j0 − u_j1) ≥ 0`.
    pub(crate) fn node(&self, j: usize, sign: i8) -> (T, T, T) {
        let (a, b) = self.km[j];
        let s = T::lit(f64::from(sign));
        if s * (a - b) >= T::zero() {
            return (a, b, T::zero());
        }
        let c = self.pooled[j];
        let ch = node_choice(&self.nodes[j], c);
        let mu = (s * c).max(T::zero());
        let mut allowed = Interval::sign_half(sign);
        if mu > T::zero() {
            allowed = allowed.intersect(Interval::point(T::zero()));
        }
        let x = ch.range.intersect(allowed).clamp(ch.target);
        let (u0, u1) = split_choice(&ch, ch.range.clamp(x));
        (u0, u1, mu)
    }

    pub(crate) fn solve(&self, system: &ConstraintSystem) -> Candidate<T> {
        debug_assert_eq!(system.kind(), ConstraintKind::Hazard);
        let m = self.nodes.len();
        let mut u0 = Vec::with_capacity(m);
        let mut u1 = Vec::with_capacity(m);
        let mut mu = Vec::with_capacity(m);
        let mut unbounded = false;
        for j in 0..m {
            let (a, b, l) = self.node(j, system.sign(j));
            unbounded |= !l.is_finite();
            u0.push(a);
            u1.push(b);
            mu.push(l);
        }
        Candidate {
            u0,
            u1,
            mu,
            iterations: self.iterations,
            unbounded,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn node(d0: usize, r0: usize, d1: usize, r1: usize) -> Node<f64> {
        Node {
            c0: Coord::new(d0, r0, ConstraintKind::Survival),
            c1: Coord::new(d1, r1, ConstraintKind::Survival),
        }
    }

    #[test]
    fn single_node_symmetric_root_is_zero() {
        let mut it = 0;
        let c = solve_block(&[node(1, 2, 1, 2)], &mut it);
        assert!(c.abs() < 1e-12, "{c}");
    }

    #[test]
    fn block_root_balances_sum() {
        let ns = [node(1, 10, 3, 10), node(2, 9, 1, 7), node(0, 6, 1, 6)];
        let mut it = 0;
        let c = solve_block(&ns, &mut it);
        assert!(sum_above(&ns, c).abs() < 1e-10);
    }

    #[test]
    fn kink_root() {
        // arm 0 has no events, arm 1 has one: x = u0 − u1 jumps at c = −R0
        let ns = [node(0, 3, 1, 3)];
        let mut it = 0;
        let c = solve_block(&ns, &mut it);
        assert_eq!(c, -3.0);
    }

    #[test]
    fn pinned_arm_gives_infinite_value() {
        let ns = [node(0, 0, 1, 3)];
        let mut it = 0;
        assert_eq!(solve_block(&ns, &mut it), f64::NEG_INFINITY);
        let ns = [node(1, 3, 0, 0)];
        assert_eq!(solve_block(&ns, &mut it), f64::INFINITY);
    }
}
