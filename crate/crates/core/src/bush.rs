//! Unit source-to-sink flow minimizing `Σ_c s_c^q`, where the load
//! `s_c = Σ_{arcs e at c} (len_e / 2) f_e` counts every arc touching the cell.
//!
//! This is the dual of the discrete modulus problem. Its optimality
//! condition is that every used path is a shortest path for the cell costs
//! `s_c^{q-1}`, which is what the solver drives towards. The flow lives on an
//! acyclic sub-network rooted at the sources (a "bush"); each pass compares,
//! for every node, the cheapest and the most expensive used path reaching it
//! and moves flow between the two segments where they diverge. Arcs that
//! would shorten a path are added between passes and unused ones dropped.
//!
//! Nodes are the cells plus a virtual origin `O` (joined to every source)
//! and a virtual destination `D` (joined from every sink). Arcs `0..m` are
//! the grid arcs in adjacency order, `m + c` is `O -> c` and `m + n + c` is
//! `c -> D`.

use std::collections::VecDeque;

use crate::curves::{CurveFamily, ShortestPathTree};
use crate::geometry::Adjacency;

const NONE: u32 = u32::MAX;
const SOURCE: u8 = 1;
const SINK: u8 = 2;

pub(crate) struct Bush<'a> {
    adj: &'a Adjacency,
    n: usize,
    m: usize,
    half: Vec<f64>,
    rev: Vec<u32>,
    role: Vec<u8>,
    /// `1/(p-1)`: cell cost is `load^expo`.
    expo: f64,
    flow: Vec<f64>,
    in_bush: Vec<bool>,
    member: Vec<bool>,
    load: Vec<f64>,
    cost: Vec<f64>,
    order: Vec<u32>,
    pos: Vec<u32>,
    umin: Vec<f64>,
    umax_used: Vec<f64>,
    umax_all: Vec<f64>,
    pmin_node: Vec<u32>,
    pmin_arc: Vec<u32>,
    pmax_node: Vec<u32>,
    pmax_arc: Vec<u32>,
    weight: Vec<f64>,
    marked: Vec<bool>,
    touched: Vec<u32>,
    seg_min: Vec<u32>,
    seg_max: Vec<u32>,
}

impl<'a> Bush<'a> {
    /// Starts from `tree` (a shortest-path tree of the family) with the unit
    /// demand split evenly over the reachable sinks.
    pub(crate) fn new(family: &'a CurveFamily, p: f64, tree: &ShortestPathTree) -> Self {
        let domain = family.domain();
        let adj = domain.adjacency();
        let n = domain.len();
        let m = adj.arc_count();
        let mut rev = vec![NONE; m];
        for u in 0..n as u32 {
            for j in adj.range(u) {
                let v = adj.targets[j];
                rev[j] = adj
                    .range(v)
                    .find(|&k| adj.targets[k] == u)
                    .expect("adjacency is symmetric") as u32;
            }
        }
        let mut role = vec![0u8; n];
        for &s in family.source() {
            role[s as usize] = SOURCE;
        }
        for &t in family.sink() {
            role[t as usize] = SINK;
        }
        let member: Vec<bool> = tree.dist.iter().map(|d| d.is_finite()).collect();
        let mut bush = Self {
            adj,
            n,
            m,
            half: adj.lengths.iter().map(|l| 0.5 * l).collect(),
            rev,
            role,
            expo: 1.0 / (p - 1.0),
            flow: vec![0.0; m + 2 * n],
            in_bush: vec![false; m],
            member,
            load: vec![0.0; n],
            cost: vec![0.0; n],
            order: Vec::new(),
            pos: vec![0; n + 2],
            umin: vec![0.0; n + 2],
            umax_used: vec![0.0; n + 2],
            umax_all: vec![0.0; n + 2],
            pmin_node: vec![NONE; n + 2],
            pmin_arc: vec![NONE; n + 2],
            pmax_node: vec![NONE; n + 2],
            pmax_arc: vec![NONE; n + 2],
            weight: vec![0.0; n],
            marked: vec![false; n],
            touched: Vec::new(),
            seg_min: Vec::new(),
            seg_max: Vec::new(),
        };
        let mut tree_arc = vec![NONE; n];
        for v in 0..n {
            let u = tree.pred[v];
            if u != NONE {
                let j = adj.range(v as u32).find(|&k| adj.targets[k] == u).expect("tree edge");
                let a = bush.rev[j];
                bush.in_bush[a as usize] = true;
                tree_arc[v] = a;
            }
        }
        let sinks = &tree.settled_sinks;
        let share = 1.0 / sinks.len() as f64;
        for &t in sinks {
            bush.flow[m + n + t as usize] += share;
            let mut v = t as usize;
            while tree_arc[v] != NONE {
                bush.flow[tree_arc[v] as usize] += share;
                v = tree.pred[v] as usize;
            }
            bush.flow[m + v] += share;
        }
        bush.refresh_loads();
        bush
    }

    #[inline]
    fn cost_of(&self, s: f64) -> f64 {
        if s <= 0.0 {
            0.0
        } else if self.expo == 1.0 {
            s
        } else if self.expo == 0.5 {
            s.sqrt()
        } else {
            s.powf(self.expo)
        }
    }

    #[inline]
    fn cost_slope(&self, s: f64) -> f64 {
        if self.expo == 1.0 {
            1.0
        } else if s <= 0.0 {
            f64::INFINITY
        } else {
            self.expo * self.cost_of(s) / s
        }
    }

    /// Half length of arc `a` (zero for the virtual arcs).
    #[inline]
    fn half_of(&self, a: u32) -> f64 {
        let a = a as usize;
        if a < self.m {
            self.half[self.adj.kinds[a] as usize]
        } else {
            0.0
        }
    }

    /// Grid cells at the ends of arc `a` (`NONE` for virtual endpoints).
    #[inline]
    fn ends(&self, a: u32, head: u32) -> (u32, u32) {
        let a = a as usize;
        if a < self.m {
            (self.adj.targets[self.rev[a] as usize], head)
        } else if a < self.m + self.n {
            (NONE, (a - self.m) as u32)
        } else {
            ((a - self.m - self.n) as u32, NONE)
        }
    }

    pub(crate) fn loads(&self) -> &[f64] {
        &self.load
    }

    pub(crate) fn refresh_loads(&mut self) {
        self.load.iter_mut().for_each(|s| *s = 0.0);
        for u in 0..self.n {
            for j in self.adj.range(u as u32) {
                let f = self.flow[j];
                if f > 0.0 {
                    let w = self.half[self.adj.kinds[j] as usize] * f;
                    self.load[u] += w;
                    self.load[self.adj.targets[j] as usize] += w;
                }
            }
        }
        for c in 0..self.n {
            self.cost[c] = self.cost_of(self.load[c]);
        }
    }

    fn origin(&self) -> u32 {
        self.n as u32
    }

    fn dest(&self) -> u32 {
        self.n as u32 + 1
    }

    /// Topological order of the member cells (Kahn, FIFO from the sources).
    pub(crate) fn sort(&mut self) {
        let adj = self.adj;
        let mut indeg = vec![0u32; self.n];
        for u in 0..self.n {
            if !self.member[u] {
                continue;
            }
            for j in adj.range(u as u32) {
                if self.in_bush[j] {
                    indeg[adj.targets[j] as usize] += 1;
                }
            }
        }
        let mut queue: VecDeque<u32> = (0..self.n as u32)
            .filter(|&c| self.member[c as usize] && self.role[c as usize] == SOURCE)
            .collect();
        self.order.clear();
        while let Some(u) = queue.pop_front() {
            self.order.push(u);
            for j in adj.range(u) {
                if self.in_bush[j] {
                    let v = adj.targets[j] as usize;
                    indeg[v] -= 1;
                    if indeg[v] == 0 {
                        queue.push_back(v as u32);
                    }
                }
            }
        }
        debug_assert_eq!(self.order.len(), self.member.iter().filter(|&&b| b).count(), "bush has a cycle");
        let (o, d) = (self.origin() as usize, self.dest() as usize);
        self.pos[o] = 0;
        for (i, &c) in self.order.iter().enumerate() {
            self.pos[c as usize] = i as u32 + 1;
        }
        self.pos[d] = self.order.len() as u32 + 1;
    }

    /// Cheapest, most expensive used, and most expensive bush path labels.
    pub(crate) fn label(&mut self) {
        let adj = self.adj;
        let m = self.m;
        let origin = self.origin();
        for idx in 0..self.order.len() {
            let v = self.order[idx];
            let vi = v as usize;
            if self.role[vi] == SOURCE {
                self.umin[vi] = 0.0;
                self.umax_used[vi] = 0.0;
                self.umax_all[vi] = 0.0;
                self.pmin_node[vi] = origin;
                self.pmin_arc[vi] = (m + vi) as u32;
                self.pmax_node[vi] = origin;
                self.pmax_arc[vi] = (m + vi) as u32;
                continue;
            }
            let cv = self.cost[vi];
            let (mut lo, mut lo_node, mut lo_arc) = (f64::INFINITY, NONE, NONE);
            let (mut hi, mut hi_node, mut hi_arc) = (f64::NEG_INFINITY, NONE, NONE);
            let mut all = f64::NEG_INFINITY;
            for j in adj.range(v) {
                let a = self.rev[j] as usize;
                if !self.in_bush[a] {
                    continue;
                }
                let u = adj.targets[j] as usize;
                let t = self.half[adj.kinds[j] as usize] * (self.cost[u] + cv);
                let x = self.umin[u] + t;
                if x < lo {
                    lo = x;
                    lo_node = u as u32;
                    lo_arc = a as u32;
                }
                all = all.max(self.umax_all[u] + t);
                if self.flow[a] > 0.0 {
                    let y = self.umax_used[u] + t;
                    if y > hi {
                        hi = y;
                        hi_node = u as u32;
                        hi_arc = a as u32;
                    }
                }
            }
            self.umin[vi] = lo;
            self.pmin_node[vi] = lo_node;
            self.pmin_arc[vi] = lo_arc;
            self.umax_all[vi] = all;
            if hi_arc == NONE {
                self.umax_used[vi] = lo;
                self.pmax_node[vi] = lo_node;
                self.pmax_arc[vi] = lo_arc;
            } else {
                self.umax_used[vi] = hi;
                self.pmax_node[vi] = hi_node;
                self.pmax_arc[vi] = hi_arc;
            }
        }
        let d = self.dest() as usize;
        let (mut lo, mut lo_node) = (f64::INFINITY, NONE);
        let (mut hi, mut hi_node) = (f64::NEG_INFINITY, NONE);
        let mut all = f64::NEG_INFINITY;
        for &t in &self.order {
            let ti = t as usize;
            if self.role[ti] != SINK {
                continue;
            }
            if self.umin[ti] < lo {
                lo = self.umin[ti];
                lo_node = t;
            }
            all = all.max(self.umax_all[ti]);
            if self.flow[m + self.n + ti] > 0.0 && self.umax_used[ti] > hi {
                hi = self.umax_used[ti];
                hi_node = t;
            }
        }
        self.umin[d] = lo;
        self.umax_all[d] = all;
        self.pmin_node[d] = lo_node;
        self.pmin_arc[d] = (m + self.n) as u32 + lo_node;
        if hi_node == NONE {
            hi = lo;
            hi_node = lo_node;
        }
        self.umax_used[d] = hi;
        self.pmax_node[d] = hi_node;
        self.pmax_arc[d] = (m + self.n) as u32 + hi_node;
    }

    /// Shortest path cost to the destination and the spread of used path
    /// costs, from the last labelling.
    pub(crate) fn spread(&self) -> (f64, f64) {
        let d = self.dest() as usize;
        (self.umin[d], self.umax_used[d] - self.umin[d])
    }

    /// One pass of flow moves over all nodes, destination first. At each
    /// node every used in-arc whose path cost exceeds the cheapest by more
    /// than `eps` sends flow to the cheapest path.
    pub(crate) fn shift_pass(&mut self, eps: f64) -> usize {
        let (m, n) = (self.m, self.n);
        let mut moves = 0;
        let d = self.dest();
        let mut cand: Vec<(u32, u32)> = Vec::new();
        for &t in &self.order {
            let ti = t as usize;
            if self.role[ti] == SINK && self.flow[m + n + ti] > 0.0 && self.umax_used[ti] - self.umin[d as usize] > eps {
                cand.push(((m + n) as u32 + t, t));
            }
        }
        for &(arc, node) in &cand {
            if arc != self.pmin_arc[d as usize] && self.try_shift(d, arc, node, eps) {
                moves += 1;
            }
        }
        let adj = self.adj;
        for idx in (0..self.order.len()).rev() {
            let v = self.order[idx];
            let vi = v as usize;
            if self.role[vi] == SOURCE || self.umax_used[vi] - self.umin[vi] <= eps {
                continue;
            }
            cand.clear();
            let cv = self.cost[vi];
            for j in adj.range(v) {
                let a = self.rev[j];
                if a == self.pmin_arc[vi] || !(self.flow[a as usize] > 0.0) {
                    continue;
                }
                let u = adj.targets[j];
                let t = self.half[adj.kinds[j] as usize] * (self.cost[u as usize] + cv);
                if self.umax_used[u as usize] + t - self.umin[vi] > eps {
                    cand.push((a, u));
                }
            }
            for k in 0..cand.len() {
                let (arc, node) = cand[k];
                if self.try_shift(v, arc, node, eps) {
                    moves += 1;
                }
            }
        }
        moves
    }

    /// Moves flow from the used path ending with `arc` (from `from`, then
    /// following the most expensive used predecessors) to the cheapest path
    /// into `j`.
    fn try_shift(&mut self, j: u32, arc: u32, from: u32, eps: f64) -> bool {
        let ji = j as usize;
        let origin = self.origin();
        self.seg_min.clear();
        self.seg_max.clear();
        self.seg_min.push(self.pmin_arc[ji]);
        self.seg_max.push(arc);
        let mut a = self.pmin_node[ji];
        let mut b = from;
        while a != b {
            let pa = if a == origin { 0 } else { self.pos[a as usize] };
            let pb = if b == origin { 0 } else { self.pos[b as usize] };
            if pa > pb {
                self.seg_min.push(self.pmin_arc[a as usize]);
                a = self.pmin_node[a as usize];
            } else {
                self.seg_max.push(self.pmax_arc[b as usize]);
                b = self.pmax_node[b as usize];
            }
        }
        let mut cap = f64::INFINITY;
        for &e in &self.seg_max {
            cap = cap.min(self.flow[e as usize]);
        }
        if !(cap > 0.0) {
            return false;
        }
        // load change per unit moved, per touched cell
        let mut head = j;
        for k in 0..self.seg_min.len() {
            let e = self.seg_min[k];
            let (t, h) = self.ends(e, head);
            let w = self.half_of(e);
            self.bump(t, w);
            self.bump(h, w);
            head = t;
        }
        head = j;
        for k in 0..self.seg_max.len() {
            let e = self.seg_max[k];
            let (t, h) = self.ends(e, head);
            let w = self.half_of(e);
            self.bump(t, -w);
            self.bump(h, -w);
            head = t;
        }
        let gap = self.excess(0.0);
        let moved = if gap > eps { self.solve_move(gap, cap) } else { 0.0 };
        if moved > 0.0 {
            for &e in &self.seg_min {
                self.flow[e as usize] += moved;
            }
            for &e in &self.seg_max {
                let f = &mut self.flow[e as usize];
                *f = if *f <= moved { 0.0 } else { *f - moved };
            }
            for &c in &self.touched {
                let ci = c as usize;
                let s = (self.load[ci] + self.weight[ci] * moved).max(0.0);
                self.load[ci] = s;
                self.cost[ci] = self.cost_of(s);
            }
        }
        for &c in &self.touched {
            self.weight[c as usize] = 0.0;
            self.marked[c as usize] = false;
        }
        self.touched.clear();
        moved > 0.0
    }

    #[inline]
    fn bump(&mut self, c: u32, w: f64) {
        if c == NONE || w == 0.0 {
            return;
        }
        let ci = c as usize;
        if !self.marked[ci] {
            self.marked[ci] = true;
            self.touched.push(c);
        }
        self.weight[ci] += w;
    }

    /// Cost of the expensive segment minus the cheap one after moving `x`.
    fn excess(&self, x: f64) -> f64 {
        let mut g = 0.0;
        for &c in &self.touched {
            let ci = c as usize;
            let w = self.weight[ci];
            g -= w * self.cost_of((self.load[ci] + w * x).max(0.0));
        }
        g
    }

    fn excess_slope(&self, x: f64) -> f64 {
        let mut d = 0.0;
        for &c in &self.touched {
            let ci = c as usize;
            let w = self.weight[ci];
            if w != 0.0 {
                d += w * w * self.cost_slope((self.load[ci] + w * x).max(0.0));
            }
        }
        d
    }

    /// Amount in `[0, cap]` that equalizes the two segment costs.
    fn solve_move(&self, gap: f64, cap: f64) -> f64 {
        if self.expo == 1.0 {
            let d = self.excess_slope(0.0);
            return if d > 0.0 { (gap / d).min(cap) } else { cap };
        }
        if self.excess(cap) >= 0.0 {
            return cap;
        }
        let (mut lo, mut hi) = (0.0, cap);
        let mut x = 0.0;
        let mut g = gap;
        for _ in 0..60 {
            let d = self.excess_slope(x);
            let newton = if d.is_finite() && d > 0.0 { x + g / d } else { f64::NAN };
            x = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
            g = self.excess(x);
            if g > 0.0 {
                lo = x;
            } else {
                hi = x;
            }
            if g.abs() <= 1e-14 * gap || hi - lo <= 1e-15 * cap {
                break;
            }
        }
        x
    }

    /// Drops unused arcs (keeping each node's cheapest in-arc) and adds arcs
    /// that shorten a cheapest path without creating a cycle. Expects fresh
    /// labels. Returns the number of arcs added.
    pub(crate) fn grow(&mut self) -> usize {
        let adj = self.adj;
        for idx in 0..self.order.len() {
            let v = self.order[idx] as usize;
            for j in adj.range(v as u32) {
                let a = self.rev[j] as usize;
                if self.in_bush[a] && self.flow[a] <= 0.0 && a as u32 != self.pmin_arc[v] {
                    self.in_bush[a] = false;
                }
            }
        }
        let mut added = 0;
        for idx in 0..self.order.len() {
            let v = self.order[idx] as usize;
            if self.role[v] == SOURCE {
                continue;
            }
            let cv = self.cost[v];
            for j in adj.range(v as u32) {
                let a = self.rev[j] as usize;
                let u = adj.targets[j] as usize;
                if self.in_bush[a] || !self.member[u] || self.role[u] == SINK {
                    continue;
                }
                let t = self.half[adj.kinds[j] as usize] * (self.cost[u] + cv);
                let shorter = self.umin[u] + t < self.umin[v];
                let ordered = self.umax_all[u] < self.umax_all[v]
                    || (self.umax_all[u] == self.umax_all[v] && self.pos[u] < self.pos[v]);
                if shorter && ordered {
                    self.in_bush[a] = true;
                    added += 1;
                }
            }
        }
        added
    }

    /// Greedy path decomposition of the flow (largest remaining in-arc
    /// first), at most `limit` paths. Returns `(cells, amount)` pairs.
    pub(crate) fn decompose(&self, limit: usize) -> Vec<(Vec<u32>, f64)> {
        let adj = self.adj;
        let (m, n) = (self.m, self.n);
        let mut rest = self.flow.clone();
        let mut out = Vec::new();
        let sinks: Vec<u32> = self.order.iter().copied().filter(|&t| self.role[t as usize] == SINK).collect();
        while out.len() < limit {
            let Some(&t) = sinks
                .iter()
                .filter(|&&t| rest[m + n + t as usize] > 0.0)
                .max_by(|a, b| rest[m + n + **a as usize].total_cmp(&rest[m + n + **b as usize]).then(b.cmp(a)))
            else {
                break;
            };
            let mut arcs = vec![m + n + t as usize];
            let mut cells = vec![t];
            let mut v = t;
            while self.role[v as usize] != SOURCE {
                let mut best = NONE as usize;
                let mut amount = 0.0;
                for j in adj.range(v) {
                    let a = self.rev[j] as usize;
                    if rest[a] > amount {
                        amount = rest[a];
                        best = a;
                    }
                }
                if best == NONE as usize {
                    break;
                }
                arcs.push(best);
                v = adj.targets[self.rev[best] as usize];
                cells.push(v);
            }
            if self.role[v as usize] != SOURCE {
                break;
            }
            arcs.push(m + v as usize);
            let amount = arcs.iter().map(|&a| rest[a]).fold(f64::INFINITY, f64::min);
            for &a in &arcs {
                rest[a] = if rest[a] <= amount { 0.0 } else { rest[a] - amount };
            }
            cells.reverse();
            out.push((cells, amount));
        }
        out
    }
}
