// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

//! Weighted modularity and Louvain community detection.
//!
//! Each level repeatedly moves single nodes to the neighbouring community
//! with the largest modularity gain until no move helps, then collapses
//! communities into nodes. Candidate communities are compared by gain, ties
//! going to the smallest community id, and a move must beat staying put by
//! more than [`MIN_GAIN`]. After the last level a final round of single-node
//! moves runs on the original graph; if it changes anything the levels are
//! resumed from there.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::seed::{self, Stream};

/// Smallest (scaled) gain that justifies a move.
pub const MIN_GAIN: f64 = 1e-12;

/// Undirected weighted graph in adjacency-list form. A self-loop of weight
/// `w` contributes `2w` to its node's strength.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedGraph {
    /// Neighbour lists sorted by index; self-loops stored once.
    adj: Vec<Vec<(usize, f64)>>,
    strength: Vec<f64>,
    total: f64,
}

impl WeightedGraph {
    /// Duplicate edges are merged by adding their weights.
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<Self> {
        let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (a, b, w) in edges {
            if a >= n || b >= n {
                return Err(Error::InvalidInput(format!("edge ({a}, {b}) outside {n} nodes")));
            }
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::InvalidInput(format!("edge ({a}, {b}) has weight {w}")));
            }
            adj[a].push((b, w));
            if a != b {
                adj[b].push((a, w));
            }
        }
        for list in adj.iter_mut() {
            list.sort_by_key(|e| e.0);
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(list.len());
            for &(j, w) in list.iter() {
                match merged.last_mut() {
                    Some(last) if last.0 == j => last.1 += w,
                    _ => merged.push((j, w)),
                }
            }
            *list = merged;
        }
        let strength: Vec<f64> = adj
            .iter()
            .enumerate()
            .map(|(i, l)| l.iter().map(|&(j, w)| if j == i { 2.0 * w } else { w }).sum())
            .collect();
        let total = strength.iter().sum();
        Ok(WeightedGraph { adj, strength, total })
    }

    pub fn node_count(&self) -> usize {
        self.adj.len()
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.adj[i]
    }

    pub fn strength(&self, i: usize) -> f64 {
        self.strength[i]
    }

    /// Twice the total edge weight.
    pub fn total_strength(&self) -> f64 {
        self.total
    }

    /// Graph whose nodes are the communities of `labels` (values `0..k`).
    fn aggregate(&self, labels: &[usize], k: usize) -> WeightedGraph {
        let mut edges = Vec::new();
        for (i, list) in self.adj.iter().enumerate() {
            for &(j, w) in list {
                if j >= i {
                    edges.push((labels[i], labels[j], w));
                }
            }
        }
        WeightedGraph::from_edges(k, edges).expect("aggregation keeps edges valid")
    }
}

/// Newman modularity of a labelling; zero for a graph without edges.
pub fn modularity(g: &WeightedGraph, labels: &[usize]) -> f64 {
    let m2 = g.total_strength();
    if m2 <= 0.0 {
        return 0.0;
    }
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut inside = vec![0.0; k];
    let mut tot = vec![0.0; k];
    for i in 0..g.node_count() {
        tot[labels[i]] += g.strength(i);
        for &(j, w) in g.neighbors(i) {
            if labels[j] == labels[i] {
                inside[labels[i]] += if j == i { 2.0 * w } else { w };
            }
        }
    }
    inside
        .iter()
        .zip(&tot)
        .map(|(a, t)| a / m2 - (t / m2) * (t / m2))
        .sum()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LouvainConfig {
    /// `None` makes the first run visit nodes in index order; otherwise every
    /// sweep uses a shuffle drawn from this seed.
    pub seed: Option<u64>,
    /// Independent runs; runs after the first always use seeded shuffles.
    /// The run with the highest modularity is kept, ties going to the
    /// earlier run.
    pub runs: usize,
}

impl Default for LouvainConfig {
    fn default() -> Self {
        LouvainConfig { seed: None, runs: 16 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LouvainResult {
    /// Community per node, numbered by first appearance in node order.
    pub labels: Vec<usize>,
    pub count: usize,
    pub modularity: f64,
    /// Modularity of the original graph after each level.
    pub level_modularity: Vec<f64>,
}

/// Renumbers labels by first appearance; returns the community count.
fn compact(labels: &mut [usize]) -> usize {
    let mut map: Vec<Option<usize>> = vec![None; labels.len().max(1)];
    let mut next = 0;
    for l in labels.iter_mut() {
        if *l >= map.len() {
            map.resize(*l + 1, None);
        }
        *l = *map[*l].get_or_insert_with(|| {
            next += 1;
            next - 1
        });
    }
    next
}

/// Single-node moves until stable; a node may also leave for an empty
/// community. Returns whether any node moved.
fn local_moves(
    g: &WeightedGraph,
    labels: &mut [usize],
    order: &mut [usize],
    mut rng: Option<&mut rand_chacha::ChaCha8Rng>,
) -> bool {
    let n = g.node_count();
    let m2 = g.total_strength();
    if m2 <= 0.0 {
        return false;
    }
    let mut tot = vec![0.0; n];
    let mut size = vec![0usize; n];
    for i in 0..n {
        tot[labels[i]] += g.strength(i);
        size[labels[i]] += 1;
    }
    let mut link = vec![0.0; n];
    let mut seen = vec![false; n];
    let mut touched: Vec<usize> = Vec::new();
    let mut moved_any = false;
    loop {
        if let Some(r) = rng.as_deref_mut() {
            order.shuffle(r);
        }
        let mut moved = false;
        for &i in order.iter() {
            let own = labels[i];
            let ki = g.strength(i);
            for &(j, w) in g.neighbors(i) {
                if j == i {
                    continue;
                }
                let c = labels[j];
                if !seen[c] {
                    seen[c] = true;
                    touched.push(c);
                }
                link[c] += w;
            }
            tot[own] -= ki;
            // Gain of joining community c from isolation, scaled by m2 / 2.
            let gain = |c: usize, link: &[f64]| link[c] - tot[c] * ki / m2;
            let stay = gain(own, &link);
            touched.sort_unstable();
            let mut best = own;
            let mut best_gain = f64::NEG_INFINITY;
            for &c in touched.iter().filter(|&&c| c != own) {
                let gc = gain(c, &link);
                if gc > best_gain + MIN_GAIN {
                    best = c;
                    best_gain = gc;
                }
            }
            // Leaving for an empty community has zero gain.
            if size[own] > 1 && 0.0 > best_gain + MIN_GAIN {
                if let Some(empty) = size.iter().position(|&s| s == 0) {
                    best = empty;
                    best_gain = 0.0;
                }
            }
            if best_gain <= stay + MIN_GAIN {
                best = own;
            }
            tot[best] += ki;
            size[own] -= 1;
            size[best] += 1;
            if best != own {
                labels[i] = best;
                moved = true;
                moved_any = true;
            }
            for &c in &touched {
                link[c] = 0.0;
                seen[c] = false;
            }
            touched.clear();
        }
        if !moved {
            return moved_any;
        }
    }
}

pub fn louvain(g: &WeightedGraph, cfg: &LouvainConfig) -> LouvainResult {
    let mut best: Option<LouvainResult> = None;
    for r in 0..cfg.runs.max(1) {
        let rng = match (r, cfg.seed) {
            (0, None) => None,
            (_, s) => Some(seed::rng(s.unwrap_or(0), Stream::Louvain, r as u64)),
        };
        let res = louvain_run(g, rng);
        if best.as_ref().is_none_or(|b| res.modularity > b.modularity + MIN_GAIN) {
            best = Some(res);
        }
    }
    best.expect("at least one run")
}

fn louvain_run(g: &WeightedGraph, mut rng: Option<rand_chacha::ChaCha8Rng>) -> LouvainResult {
    let n = g.node_count();
    let mut labels: Vec<usize> = (0..n).collect();
    let mut level_modularity = Vec::new();
    loop {
        // Levels from the current labelling.
        let mut count = compact(&mut labels);
        let mut graph = g.aggregate(&labels, count);
        loop {
            let mut sub: Vec<usize> = (0..count).collect();
            let mut order: Vec<usize> = (0..count).collect();
            if !local_moves(&graph, &mut sub, &mut order, rng.as_mut()) {
                break;
            }
            let k = compact(&mut sub);
            for l in labels.iter_mut() {
                *l = sub[*l];
            }
            level_modularity.push(modularity(g, &labels));
            graph = graph.aggregate(&sub, k);
            count = k;
        }
        // Refinement on the original graph.
        let mut order: Vec<usize> = (0..n).collect();
        if !local_moves(g, &mut labels, &mut order, rng.as_mut()) {
            break;
        }
        compact(&mut labels);
        level_modularity.push(modularity(g, &labels));
    }
    let count = compact(&mut labels);
    let q = modularity(g, &labels);
    if level_modularity.is_empty() {
        level_modularity.push(q);
    }
    LouvainResult {
        labels,
        count,
        modularity: q,
        level_modularity,
    }
}

/// Best modularity over every set partition of a small graph.
pub fn exhaustive_optimum(g: &WeightedGraph) -> (f64, Vec<usize>) {
    let n = g.node_count();
    assert!(n <= 10, "exhaustive search is limited to 10 nodes");
    let mut labels = vec![0usize; n];
    let mut best = (f64::NEG_INFINITY, labels.clone());
    // Restricted growth strings enumerate each set partition once.
    fn rec(i: usize, max: usize, labels: &mut Vec<usize>, g: &WeightedGraph, best: &mut (f64, Vec<usize>)) {
        if i == labels.len() {
            let q = modularity(g, labels);
            if q > best.0 {
                *best = (q, labels.clone());
            }
            return;
        }
        for c in 0..=max + 1 {
            labels[i] = c;
            rec(i + 1, max.max(c), labels, g, best);
        }
    }
    if n == 0 {
        return (0.0, labels);
    }
    labels[0] = 0;
    rec(1, 0, &mut labels, g, &mut best);
    best
}
