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

//! Merchant-category co-spending correlation.
//!
//! For categories `a` and `b`,
//!
//! ```text
//! rho(a, b) = n * sum_u r(a,u) r(b,u) / (sum_u r(a,u) * sum_u r(b,u))
//! ```
//!
//! where `r(c, u)` is the share of ego `u`'s non-cash spending that went to
//! category `c`. Values above one mean the two categories are bought together
//! more often than independent choice would give.

use std::collections::BTreeMap;
use std::path::Path;

use log::warn;
use rayon::prelude::*;
use serde::Serialize;

use crate::csvio;
use crate::error::{Error, Result};
use crate::louvain::{self, LouvainConfig, WeightedGraph};
use crate::model::{EgoId, PurchaseDistribution, TransactionLedger};
use crate::taxonomy::CategoryTaxonomy;

/// Minimum corpus-wide purchase count for a category to be kept.
pub const DEFAULT_MIN_PURCHASES: usize = 100;
pub const DEFAULT_RHO_MIN: f64 = 1.5;
/// Population of the reference corpus the common-consumer floor scales from.
const REFERENCE_POPULATION: f64 = 3_680_652.0;
const REFERENCE_COMMON: f64 = 1000.0;
/// Egos per accumulation shard.
const SHARD: usize = 2048;

#[derive(Debug, Clone, PartialEq)]
pub struct Distributions {
    /// Sorted by ego.
    pub items: Vec<PurchaseDistribution>,
    /// Categories removed for having too few purchases, with their counts.
    pub dropped_categories: Vec<(u32, usize)>,
    /// Egos left without any in-scope purchase.
    pub excluded_egos: usize,
    /// Transactions on cash categories or codes missing from the taxonomy.
    pub out_of_scope_transactions: usize,
}

/// `r(c, u)` for every ego. Cash and unknown categories are removed first,
/// then categories with fewer than `min_purchases` transactions corpus-wide.
pub fn purchase_distributions(
    ledger: &TransactionLedger,
    taxonomy: &CategoryTaxonomy,
    min_purchases: usize,
) -> Distributions {
    let in_scope = |mcc: u32| taxonomy.get(mcc).is_some() && !taxonomy.is_cash(mcc);
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    let mut out_of_scope = 0;
    for t in ledger.transactions() {
        if in_scope(t.mcc) {
            *counts.entry(t.mcc).or_insert(0) += 1;
        } else {
            out_of_scope += 1;
        }
    }
    let dropped: Vec<(u32, usize)> = counts
        .iter()
        .filter(|(_, &c)| c < min_purchases)
        .map(|(&m, &c)| (m, c))
        .collect();
    let keep = |mcc: u32| counts.get(&mcc).is_some_and(|&c| c >= min_purchases);
    let mut items = Vec::new();
    let mut excluded = 0;
    for (ego, txs) in ledger.by_ego() {
        let mut cents: BTreeMap<u32, i64> = BTreeMap::new();
        for t in txs.iter().filter(|t| in_scope(t.mcc) && keep(t.mcc)) {
            *cents.entry(t.mcc).or_insert(0) += t.amount.cents();
        }
        let total: i64 = cents.values().sum();
        if total <= 0 {
            excluded += 1;
            continue;
        }
        let entries = cents
            .into_iter()
            .filter(|&(_, c)| c > 0)
            .map(|(m, c)| (m, c as f64 / total as f64))
            .collect();
        items.push(PurchaseDistribution::new_unchecked(ego, entries));
    }
    Distributions {
        items,
        dropped_categories: dropped,
        excluded_egos: excluded,
        out_of_scope_transactions: out_of_scope,
    }
}

/// Upper-triangle accumulators over a fixed category index.
#[derive(Debug, Clone, PartialEq)]
struct Accum {
    c: usize,
    col: Vec<f64>,
    prod: Vec<f64>,
    common: Vec<u32>,
}

impl Accum {
    fn new(c: usize) -> Self {
        let t = c * (c + 1) / 2;
        Accum {
            c,
            col: vec![0.0; c],
            prod: vec![0.0; t],
            common: vec![0; t],
        }
    }

    fn add(&mut self, entries: &[(usize, f64)]) {
        for (x, &(i, ri)) in entries.iter().enumerate() {
            self.col[i] += ri;
            for &(j, rj) in &entries[x..] {
                let t = tri(self.c, i, j);
                self.prod[t] += ri * rj;
                self.common[t] += 1;
            }
        }
    }

    fn merge(&mut self, other: &Accum) {
        for (a, b) in self.col.iter_mut().zip(&other.col) {
            *a += b;
        }
        for (a, b) in self.prod.iter_mut().zip(&other.prod) {
            *a += b;
        }
        for (a, b) in self.common.iter_mut().zip(&other.common) {
            *a += b;
        }
    }
}

/// Index into a row-major upper triangle (diagonal included); `i <= j`.
fn tri(c: usize, i: usize, j: usize) -> usize {
    i * c - i * i.saturating_sub(1) / 2 - i + j
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    n: usize,
    categories: Vec<u32>,
    acc: Accum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairEntry {
    pub a: u32,
    pub b: u32,
    pub rho: f64,
    pub common: u32,
}

impl CorrelationMatrix {
    /// Number of egos.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Categories with at least one purchaser, ascending.
    pub fn categories(&self) -> &[u32] {
        &self.categories
    }

    fn index(&self, mcc: u32) -> Option<usize> {
        self.categories.binary_search(&mcc).ok()
    }

    fn slot(&self, a: u32, b: u32) -> Option<usize> {
        let (i, j) = (self.index(a)?, self.index(b)?);
        Some(tri(self.categories.len(), i.min(j), i.max(j)))
    }

    /// `rho(a, b)`; `None` for unknown categories or a zero denominator.
    pub fn rho(&self, a: u32, b: u32) -> Option<f64> {
        let (i, j) = (self.index(a)?, self.index(b)?);
        self.rho_at(i.min(j), i.max(j))
    }

    fn rho_at(&self, i: usize, j: usize) -> Option<f64> {
        let den = self.acc.col[i] * self.acc.col[j];
        let t = tri(self.categories.len(), i, j);
        (den > 0.0).then(|| self.n as f64 * self.acc.prod[t] / den)
    }

    /// Egos spending on both categories.
    pub fn common(&self, a: u32, b: u32) -> u32 {
        self.slot(a, b).map_or(0, |t| self.acc.common[t])
    }

    /// Pairs `a <= b` with at least one common consumer, row-major.
    pub fn entries(&self) -> Vec<PairEntry> {
        let c = self.categories.len();
        let mut out = Vec::new();
        for i in 0..c {
            for j in i..c {
                let t = tri(c, i, j);
                if self.acc.common[t] == 0 {
                    continue;
                }
                if let Some(rho) = self.rho_at(i, j) {
                    out.push(PairEntry {
                        a: self.categories[i],
                        b: self.categories[j],
                        rho,
                        common: self.acc.common[t],
                    });
                }
            }
        }
        out
    }

    /// Sparse triplets `a,b,rho,common` over the upper triangle.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csvio::writer(path)?;
        w.write_record(["c_i", "c_j", "rho", "common"])?;
        for e in self.entries() {
            w.write_record([
                e.a.to_string(),
                e.b.to_string(),
                e.rho.to_string(),
                e.common.to_string(),
            ])?;
        }
        csvio::finish(w, path)
    }
}

/// Sparse accumulation over each ego's nonzero categories, in fixed-size ego
/// shards merged in shard order.
pub fn correlation_matrix(dists: &[PurchaseDistribution]) -> Result<CorrelationMatrix> {
    if dists.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "correlation needs at least 2 egos, got {}",
            dists.len()
        )));
    }
    let mut categories: Vec<u32> = dists
        .iter()
        .flat_map(|d| d.entries().iter().filter(|e| e.1 > 0.0).map(|e| e.0))
        .collect();
    categories.sort_unstable();
    categories.dedup();
    let c = categories.len();
    let shards: Vec<Accum> = dists
        .par_chunks(SHARD)
        .map(|chunk| {
            let mut acc = Accum::new(c);
            let mut buf = Vec::new();
            for d in chunk {
                buf.clear();
                buf.extend(
                    d.entries()
                        .iter()
                        .filter(|e| e.1 > 0.0)
                        .map(|&(m, r)| (categories.binary_search(&m).unwrap(), r)),
                );
                acc.add(&buf);
            }
            acc
        })
        .collect();
    let mut acc = Accum::new(c);
    for s in &shards {
        acc.merge(s);
    }
    Ok(CorrelationMatrix {
        n: dists.len(),
        categories,
        acc,
    })
}

/// Common-consumer floor for a population of `n` egos.
pub fn default_min_common(n: usize) -> u32 {
    ((REFERENCE_COMMON * n as f64 / REFERENCE_POPULATION).ceil() as u32).max(10)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategoryEdge {
    pub a: u32,
    pub b: u32,
    pub rho: f64,
}

/// Thresholded co-spending graph over categories.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryGraph {
    /// Categories with at least one edge, ascending.
    pub nodes: Vec<u32>,
    /// `a < b`, lexicographic.
    pub edges: Vec<CategoryEdge>,
    pub rho_min: f64,
    pub min_common: u32,
}

impl CategoryGraph {
    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn weighted(&self) -> WeightedGraph {
        let idx = |m: u32| self.nodes.binary_search(&m).unwrap();
        WeightedGraph::from_edges(
            self.nodes.len(),
            self.edges.iter().map(|e| (idx(e.a), idx(e.b), e.rho)),
        )
        .expect("category graph edges are valid")
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csvio::writer(path)?;
        w.write_record(["c_i", "c_j", "rho"])?;
        for e in &self.edges {
            w.write_record([e.a.to_string(), e.b.to_string(), e.rho.to_string()])?;
        }
        csvio::finish(w, path)
    }
}

/// Keeps off-diagonal pairs with `rho > rho_min` and at least `min_common`
/// common consumers; isolated categories are dropped.
pub fn build_graph(m: &CorrelationMatrix, rho_min: f64, min_common: u32) -> Result<CategoryGraph> {
    if !(rho_min > 0.0) || min_common == 0 {
        return Err(Error::Config(format!(
            "thresholds must be positive (rho_min {rho_min}, min_common {min_common})"
        )));
    }
    let edges: Vec<CategoryEdge> = m
        .entries()
        .into_iter()
        .filter(|e| e.a != e.b && e.rho > rho_min && e.common >= min_common)
        .map(|e| CategoryEdge {
            a: e.a,
            b: e.b,
            rho: e.rho,
        })
        .collect();
    let mut nodes: Vec<u32> = edges.iter().flat_map(|e| [e.a, e.b]).collect();
    nodes.sort_unstable();
    nodes.dedup();
    if edges.is_empty() {
        warn!("no category pair passes rho > {rho_min} with {min_common} common consumers");
    }
    Ok(CategoryGraph {
        nodes,
        edges,
        rho_min,
        min_common,
    })
}

/// Community label per category.
#[derive(Debug, Clone, PartialEq)]
pub struct Communities {
    /// `(mcc, community)`, ascending by code; communities numbered from 1 in
    /// order of their smallest code.
    pub labels: Vec<(u32, usize)>,
    pub count: usize,
    pub modularity: f64,
    /// Modularity after each aggregation level.
    pub level_modularity: Vec<f64>,
}

impl Communities {
    pub fn community_of(&self, mcc: u32) -> Option<usize> {
        self.labels
            .binary_search_by_key(&mcc, |l| l.0)
            .ok()
            .map(|i| self.labels[i].1)
    }

    pub fn members(&self, community: usize) -> Vec<u32> {
        self.labels
            .iter()
            .filter(|l| l.1 == community)
            .map(|l| l.0)
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csvio::writer(path)?;
        w.write_record(["mcc", "community"])?;
        for (m, c) in &self.labels {
            w.write_record([m.to_string(), c.to_string()])?;
        }
        csvio::finish(w, path)
    }
}

/// Louvain communities of the category graph. Nodes are visited in
/// ascending category order, or in a seeded shuffle when `seed` is given.
pub fn louvain_communities(g: &CategoryGraph, seed: Option<u64>) -> Result<Communities> {
    if g.is_empty() {
        return Err(Error::InvalidInput("category graph has no edges".into()));
    }
    let res = louvain::louvain(&g.weighted(), &LouvainConfig { seed, ..LouvainConfig::default() });
    Ok(Communities {
        labels: g
            .nodes
            .iter()
            .zip(&res.labels)
            .map(|(&m, &l)| (m, l + 1))
            .collect(),
        count: res.count,
        modularity: res.modularity,
        level_modularity: res.level_modularity,
    })
}

/// Distributions keyed by ego, for lookups.
pub fn by_ego(dists: &[PurchaseDistribution]) -> BTreeMap<EgoId, &PurchaseDistribution> {
    dists.iter().map(|d| (d.ego(), d)).collect()
}
