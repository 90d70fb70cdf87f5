use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::Serialize;

use super::{BinningTable, CutCriterion};
use crate::ctxstats::{entropy_unchecked, ContextStats};
use crate::error::{Error, Result};

/// Deltas below this are treated as exactly zero before tie-breaking.
const DELTA_FLOOR: f64 = 1e-15;

/// Rate increase of pooling two context subsets:
/// `(p_s + p_r) H(P_{s∪r}) - p_s H(P_s) - p_r H(P_r)`.
pub fn merge_delta(p_s: f64, dist_s: &[f64], p_r: f64, dist_r: &[f64]) -> f64 {
    let p = p_s + p_r;
    if p <= 0.0 {
        return 0.0;
    }
    let merged: Vec<f64> = dist_s
        .iter()
        .zip(dist_r)
        .map(|(a, b)| (p_s * a + p_r * b) / p)
        .collect();
    // non-negative by concavity; clamp roundoff
    (p * entropy_unchecked(&merged) - p_s * entropy_unchecked(dist_s) - p_r * entropy_unchecked(dist_r)).max(0.0)
}

/// `p H(P)` from the joint mass vector `q = p P`.
fn weighted_entropy(mass: &[f64]) -> f64 {
    let p: f64 = mass.iter().sum();
    if p <= 0.0 {
        return 0.0;
    }
    mass.iter()
        .filter(|&&q| q > 0.0)
        .map(|&q| -q * (q / p).log2())
        .sum()
}

#[derive(Debug, Clone, Serialize)]
pub struct MergeNode {
    /// Sorted context ids covered by this node.
    pub members: Vec<usize>,
    pub p: f64,
    #[serde(skip)]
    pub dist: Vec<f64>,
    /// Delta paid when this node was formed; 0 for leaves.
    pub merge_cost: f64,
    pub children: Option<(usize, usize)>,
    #[serde(skip)]
    mass: Vec<f64>,
    #[serde(skip)]
    weighted_h: f64,
}

impl MergeNode {
    fn leaf(members: Vec<usize>, mass: Vec<f64>, alphabet: usize) -> Self {
        let p: f64 = mass.iter().sum();
        let dist = if p > 0.0 {
            mass.iter().map(|q| q / p).collect()
        } else {
            vec![1.0 / alphabet as f64; alphabet]
        };
        let weighted_h = weighted_entropy(&mass);
        Self {
            members,
            p,
            dist,
            merge_cost: 0.0,
            children: None,
            mass,
            weighted_h,
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_none()
    }

    pub fn min_member(&self) -> usize {
        self.members[0]
    }
}

/// Binary tree of context subsets from greedy merging.
#[derive(Debug, Clone, Serialize)]
pub struct MergeTree {
    pub nodes: Vec<MergeNode>,
    pub root: usize,
    pub context_count: usize,
    pub leaf_count: usize,
    /// Leaf holding every context never observed, if any.
    pub unseen_leaf: Option<usize>,
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    delta: f64,
    lo: usize,
    hi: usize,
    a: u32,
    b: u32,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    // reversed: BinaryHeap pops the cheapest candidate, ties by smaller member ids
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .delta
            .total_cmp(&self.delta)
            .then_with(|| other.lo.cmp(&self.lo))
            .then_with(|| other.hi.cmp(&self.hi))
    }
}

fn candidate(nodes: &[MergeNode], a: usize, b: usize) -> Candidate {
    let (na, nb) = (&nodes[a], &nodes[b]);
    let merged: Vec<f64> = na.mass.iter().zip(&nb.mass).map(|(x, y)| x + y).collect();
    let mut delta = weighted_entropy(&merged) - na.weighted_h - nb.weighted_h;
    if delta < DELTA_FLOOR {
        delta = 0.0;
    }
    let (ma, mb) = (na.min_member(), nb.min_member());
    Candidate {
        delta,
        lo: ma.min(mb),
        hi: ma.max(mb),
        a: a as u32,
        b: b as u32,
    }
}

/// Greedy agglomerative merging of contexts, cheapest merge first.
///
/// Empty contexts are pooled into one leaf before merging starts. Stale heap
/// entries are skipped lazily via availability flags.
pub fn build_merge_tree(stats: &ContextStats) -> Result<MergeTree> {
    if stats.is_empty() {
        return Err(Error::EmptyStats);
    }
    let m = stats.alphabet_size();
    let total = stats.window_total() as f64;
    let mut nodes = Vec::new();
    let mut unseen_members = Vec::new();
    let mut unseen_at = None;
    for c in 0..stats.context_count() {
        let row = stats.row(c);
        if row.iter().all(|&n| n == 0) {
            if unseen_at.is_none() {
                unseen_at = Some(nodes.len());
                nodes.push(MergeNode::leaf(Vec::new(), vec![0.0; m], m));
            }
            unseen_members.push(c);
        } else {
            let mass = row.iter().map(|&n| n as f64 / total).collect();
            nodes.push(MergeNode::leaf(vec![c], mass, m));
        }
    }
    if let Some(u) = unseen_at {
        nodes[u].members = unseen_members;
    }
    let leaf_count = nodes.len();

    let mut heap = BinaryHeap::with_capacity(leaf_count * leaf_count.saturating_sub(1) / 2);
    for a in 0..leaf_count {
        for b in a + 1..leaf_count {
            heap.push(candidate(&nodes, a, b));
        }
    }
    let mut available = vec![true; leaf_count];
    let mut live: Vec<usize> = (0..leaf_count).collect();
    for _ in 1..leaf_count {
        let best = loop {
            let c = heap.pop().expect("heap holds a candidate for every live pair");
            if available[c.a as usize] && available[c.b as usize] {
                break c;
            }
        };
        let (a, b) = (best.a as usize, best.b as usize);
        available[a] = false;
        available[b] = false;
        live.retain(|&n| n != a && n != b);

        let mut members: Vec<usize> = nodes[a].members.iter().chain(&nodes[b].members).copied().collect();
        members.sort_unstable();
        let mass: Vec<f64> = nodes[a].mass.iter().zip(&nodes[b].mass).map(|(x, y)| x + y).collect();
        let mut node = MergeNode::leaf(members, mass, m);
        node.merge_cost = best.delta;
        node.children = Some((a, b));
        let id = nodes.len();
        nodes.push(node);
        available.push(true);
        for &other in &live {
            heap.push(candidate(&nodes, id, other));
        }
        live.push(id);
    }
    Ok(MergeTree {
        root: nodes.len() - 1,
        nodes,
        context_count: stats.context_count(),
        leaf_count,
        unseen_leaf: unseen_at,
    })
}

#[derive(Debug, Clone, Copy)]
struct Splittable {
    cost: f64,
    node: usize,
}

impl PartialEq for Splittable {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Splittable {}

impl PartialOrd for Splittable {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Splittable {
    fn cmp(&self, other: &Self) -> Ordering {
        self.cost
            .total_cmp(&other.cost)
            .then_with(|| self.node.cmp(&other.node))
    }
}

impl MergeTree {
    /// Sum of every merge cost: rate of the single-bin model minus the full rate.
    pub fn total_cost(&self) -> f64 {
        self.nodes.iter().map(|n| n.merge_cost).sum()
    }

    /// Frontier after `splits` greedy expansions from the root, most expensive merge undone first.
    fn frontier_sequence(&self) -> Vec<usize> {
        // order in which internal nodes are split
        let mut order = Vec::new();
        let mut heap = BinaryHeap::new();
        if !self.nodes[self.root].is_leaf() {
            heap.push(Splittable {
                cost: self.nodes[self.root].merge_cost,
                node: self.root,
            });
        }
        while let Some(s) = heap.pop() {
            order.push(s.node);
            let (l, r) = self.nodes[s.node].children.unwrap();
            for c in [l, r] {
                if !self.nodes[c].is_leaf() {
                    heap.push(Splittable {
                        cost: self.nodes[c].merge_cost,
                        node: c,
                    });
                }
            }
        }
        order
    }

    fn frontier_after(&self, split: &[usize]) -> Vec<usize> {
        let mut is_split = vec![false; self.nodes.len()];
        split.iter().for_each(|&n| is_split[n] = true);
        let mut frontier = Vec::new();
        let mut stack = vec![self.root];
        while let Some(n) = stack.pop() {
            if is_split[n] {
                let (l, r) = self.nodes[n].children.unwrap();
                stack.push(l);
                stack.push(r);
            } else {
                frontier.push(n);
            }
        }
        frontier
    }

    /// Penalty of every cut in the greedy family: `(bins, penalty_bpv)` from 1 bin to all leaves.
    pub fn cut_curve(&self) -> Vec<(usize, f64)> {
        let order = self.frontier_sequence();
        let mut penalty = self.total_cost();
        let mut out = vec![(1, penalty.max(0.0))];
        for (i, &n) in order.iter().enumerate() {
            penalty -= self.nodes[n].merge_cost;
            out.push((i + 2, penalty.max(0.0)));
        }
        out
    }

    /// Grows a frontier from the root by undoing the most expensive merge until `criterion` binds.
    pub fn cut(&self, criterion: CutCriterion) -> BinningTable {
        let order = self.frontier_sequence();
        let mut penalty = self.total_cost();
        let mut splits = 0;
        while splits < order.len() {
            let next = self.nodes[order[splits]].merge_cost;
            let stop = match criterion {
                CutCriterion::MaxBins(k) => splits + 1 >= k.max(1),
                CutCriterion::MaxPenalty(b) => penalty <= b,
                CutCriterion::MaxStepCost(b) => next <= b,
            };
            if stop {
                break;
            }
            penalty -= next;
            splits += 1;
        }
        self.table_for(&self.frontier_after(&order[..splits]))
    }

    fn table_for(&self, frontier: &[usize]) -> BinningTable {
        let mut frontier = frontier.to_vec();
        let holds_unseen = |n: usize| {
            self.unseen_leaf
                .is_some_and(|u| self.nodes[n].members.contains(&self.nodes[u].members[0]))
        };
        frontier.sort_by_key(|&n| (!holds_unseen(n), self.nodes[n].min_member()));
        let mut bins = vec![0u32; self.context_count];
        for (b, &n) in frontier.iter().enumerate() {
            for &c in &self.nodes[n].members {
                bins[c] = b as u32;
            }
        }
        let penalty: f64 = frontier.iter().map(|&n| self.subtree_cost(n)).sum();
        BinningTable::new(bins, frontier.len())
            .expect("frontier covers every context")
            .with_penalty(penalty)
    }

    fn subtree_cost(&self, n: usize) -> f64 {
        let mut total = 0.0;
        let mut stack = vec![n];
        while let Some(n) = stack.pop() {
            if let Some((l, r)) = self.nodes[n].children {
                total += self.nodes[n].merge_cost;
                stack.push(l);
                stack.push(r);
            }
        }
        total
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("tree serializes")
    }
}
