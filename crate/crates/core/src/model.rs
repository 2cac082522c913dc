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

//! Shared domain types.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Sub};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::taxonomy::CategoryTaxonomy;

/// Tolerance on the sum-to-one invariant of normalized vectors.
pub const SUM_TOLERANCE: f64 = 1e-9;

/// Opaque individual identifier. Input files carry it as an unsigned integer
/// (hashed identifiers in the source data are already numeric).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EgoId(pub u64);

impl fmt::Display for EgoId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl FromStr for EgoId {
    type Err = std::num::ParseIntError;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        s.trim().parse().map(EgoId)
    }
}

/// Purchase category group identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GroupId(pub u16);

impl fmt::Display for GroupId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Socioeconomic class index, 1 = lowest.
pub type ClassId = u16;

/// Non-negative fixed-point money amount in hundredths of the currency unit.
///
/// Integer arithmetic keeps aggregated sums independent of summation order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Money(i64);

impl Money {
    pub const ZERO: Money = Money(0);

    pub fn from_cents(cents: i64) -> Money {
        debug_assert!(cents >= 0, "negative money amount");
        Money(cents)
    }

    /// Rounds a non-negative real amount to the nearest cent.
    pub fn from_f64(amount: f64) -> Money {
        debug_assert!(amount >= 0.0 && amount.is_finite());
        Money((amount * 100.0).round() as i64)
    }

    pub fn cents(self) -> i64 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / 100.0
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }
}

impl Add for Money {
    type Output = Money;
    fn add(self, rhs: Money) -> Money {
        Money(self.0 + rhs.0)
    }
}

impl AddAssign for Money {
    fn add_assign(&mut self, rhs: Money) {
        self.0 += rhs.0;
    }
}

impl Sub for Money {
    type Output = Money;
    fn sub(self, rhs: Money) -> Money {
        Money(self.0 - rhs.0)
    }
}

impl Sum for Money {
    fn sum<I: Iterator<Item = Money>>(iter: I) -> Money {
        iter.fold(Money::ZERO, Add::add)
    }
}

impl<'a> Sum<&'a Money> for Money {
    fn sum<I: Iterator<Item = &'a Money>>(iter: I) -> Money {
        iter.copied().sum()
    }
}

impl fmt::Display for Money {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:02}", self.0 / 100, self.0 % 100)
    }
}

impl FromStr for Money {
    type Err = String;

    /// Accepts `123`, `123.4` and `123.45`; rejects signs, exponents and
    /// more than two fraction digits.
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let s = s.trim();
        let (int, frac) = match s.split_once('.') {
            Some((i, f)) => (i, f),
            None => (s, ""),
        };
        let digits = |t: &str| t.bytes().all(|b| b.is_ascii_digit());
        if int.is_empty() || !digits(int) || !digits(frac) || frac.len() > 2 {
            return Err(format!("invalid amount {s:?}"));
        }
        let int: i64 = int.parse().map_err(|_| format!("amount out of range {s:?}"))?;
        let frac: i64 = match frac.len() {
            0 => 0,
            1 => frac.parse::<i64>().unwrap() * 10,
            _ => frac.parse().unwrap(),
        };
        int.checked_mul(100)
            .and_then(|c| c.checked_add(frac))
            .map(Money)
            .ok_or_else(|| format!("amount out of range {s:?}"))
    }
}

/// Calendar month, stored as `year * 12 + (month - 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Month(i32);

impl Month {
    pub fn new(year: i32, month: u32) -> Option<Month> {
        (1..=12)
            .contains(&month)
            .then(|| Month(year * 12 + month as i32 - 1))
    }

    pub fn year(self) -> i32 {
        self.0.div_euclid(12)
    }

    pub fn month(self) -> u32 {
        self.0.rem_euclid(12) as u32 + 1
    }

    pub fn index(self) -> i32 {
        self.0
    }

    pub fn offset(self, months: i32) -> Month {
        Month(self.0 + months)
    }
}

impl fmt::Display for Month {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year(), self.month())
    }
}

impl FromStr for Month {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let s = s.trim();
        let (y, m) = s
            .split_once('-')
            .ok_or_else(|| format!("invalid month {s:?}, expected YYYY-MM"))?;
        if y.len() != 4 || m.len() != 2 {
            return Err(format!("invalid month {s:?}, expected YYYY-MM"));
        }
        let year: i32 = y.parse().map_err(|_| format!("invalid year in {s:?}"))?;
        let month: u32 = m.parse().map_err(|_| format!("invalid month in {s:?}"))?;
        Month::new(year, month).ok_or_else(|| format!("month out of range in {s:?}"))
    }
}

/// Encoded 0 = female, 1 = male.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Gender {
    Female,
    Male,
}

impl Gender {
    pub fn code(self) -> u8 {
        match self {
            Gender::Female => 0,
            Gender::Male => 1,
        }
    }

    pub fn letter(self) -> &'static str {
        match self {
            Gender::Female => "F",
            Gender::Male => "M",
        }
    }
}

impl FromStr for Gender {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "F" | "f" => Ok(Gender::Female),
            "M" | "m" => Ok(Gender::Male),
            other => Err(format!("invalid gender {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EgoProfile {
    pub id: EgoId,
    pub age: u32,
    /// Records without gender are kept but skipped by gender statistics.
    pub gender: Option<Gender>,
    pub zip: Option<String>,
}

/// One purchase. Field order defines the canonical ledger ordering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Transaction {
    pub ego: EgoId,
    pub month: Month,
    pub mcc: u32,
    pub amount: Money,
}

/// Purchases sorted by `(ego, month, mcc, amount)`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TransactionLedger {
    txs: Vec<Transaction>,
}

impl TransactionLedger {
    pub fn new(mut txs: Vec<Transaction>) -> Self {
        txs.sort_unstable();
        TransactionLedger { txs }
    }

    pub fn len(&self) -> usize {
        self.txs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.txs.is_empty()
    }

    pub fn transactions(&self) -> &[Transaction] {
        &self.txs
    }

    /// Per-ego slices in ascending ego order.
    pub fn by_ego(&self) -> impl Iterator<Item = (EgoId, &[Transaction])> + '_ {
        self.txs.chunk_by(|a, b| a.ego == b.ego).map(|c| (c[0].ego, c))
    }

    pub fn egos(&self) -> Vec<EgoId> {
        self.by_ego().map(|(e, _)| e).collect()
    }

    pub fn ego_count(&self) -> usize {
        self.by_ego().count()
    }

    pub fn retain_egos(&self, mut keep: impl FnMut(EgoId) -> bool) -> TransactionLedger {
        TransactionLedger {
            txs: self.txs.iter().copied().filter(|t| keep(t.ego)).collect(),
        }
    }

    pub fn total(&self) -> Money {
        self.txs.iter().map(|t| t.amount).sum()
    }
}

/// Number of distinct months with at least one purchase in an ego's slice.
pub fn active_months(txs: &[Transaction]) -> usize {
    txs.chunk_by(|a, b| a.month == b.month).count()
}

/// Undirected simple graph over ego identifiers, stored as sorted adjacency
/// lists indexed by the position of each ego in the sorted node list.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SocialGraph {
    nodes: Vec<EgoId>,
    offsets: Vec<usize>,
    adj: Vec<u32>,
}

impl SocialGraph {
    pub fn empty() -> Self {
        SocialGraph {
            nodes: Vec::new(),
            offsets: vec![0],
            adj: Vec::new(),
        }
    }

    /// Builds a graph from node-index pairs. `nodes` must be strictly
    /// increasing; edges must be loop-free, unique and in range.
    pub fn from_index_edges(nodes: Vec<EgoId>, edges: &[(u32, u32)]) -> Result<Self> {
        if nodes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Invariant(
                "graph node list must be sorted and unique".into(),
            ));
        }
        let n = nodes.len();
        let mut deg = vec![0usize; n];
        for &(u, v) in edges {
            if u == v {
                return Err(Error::Invariant(format!(
                    "self-loop on node {}",
                    nodes.get(u as usize).map_or(u as u64, |e| e.0)
                )));
            }
            if u as usize >= n || v as usize >= n {
                return Err(Error::Invariant(format!(
                    "edge ({u}, {v}) references a node outside the graph"
                )));
            }
            deg[u as usize] += 1;
            deg[v as usize] += 1;
        }
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        for d in &deg {
            offsets.push(offsets.last().unwrap() + d);
        }
        let mut fill = offsets[..n].to_vec();
        let mut adj = vec![0u32; offsets[n]];
        for &(u, v) in edges {
            adj[fill[u as usize]] = v;
            fill[u as usize] += 1;
            adj[fill[v as usize]] = u;
            fill[v as usize] += 1;
        }
        for i in 0..n {
            let list = &mut adj[offsets[i]..offsets[i + 1]];
            list.sort_unstable();
            if list.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::Invariant(format!(
                    "duplicate edge at node {}",
                    nodes[i]
                )));
            }
        }
        Ok(SocialGraph {
            nodes,
            offsets,
            adj,
        })
    }

    /// Builds a graph from identifier pairs. Every endpoint must appear in `nodes`.
    pub fn from_id_edges(
        nodes: impl IntoIterator<Item = EgoId>,
        edges: &[(EgoId, EgoId)],
    ) -> Result<Self> {
        let mut nodes: Vec<EgoId> = nodes.into_iter().collect();
        nodes.sort_unstable();
        nodes.dedup();
        let lookup = |id: EgoId| {
            nodes
                .binary_search(&id)
                .map(|i| i as u32)
                .map_err(|_| Error::Invariant(format!("edge endpoint {id} is not a graph node")))
        };
        let idx = edges
            .iter()
            .map(|&(a, b)| Ok((lookup(a)?, lookup(b)?)))
            .collect::<Result<Vec<_>>>()?;
        SocialGraph::from_index_edges(nodes, &idx)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.adj.len() / 2
    }

    pub fn nodes(&self) -> &[EgoId] {
        &self.nodes
    }

    pub fn node(&self, i: u32) -> EgoId {
        self.nodes[i as usize]
    }

    pub fn index_of(&self, id: EgoId) -> Option<u32> {
        self.nodes.binary_search(&id).ok().map(|i| i as u32)
    }

    pub fn neighbors(&self, i: u32) -> &[u32] {
        let i = i as usize;
        &self.adj[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn degree(&self, i: u32) -> usize {
        let i = i as usize;
        self.offsets[i + 1] - self.offsets[i]
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.offsets.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn has_edge(&self, u: u32, v: u32) -> bool {
        self.neighbors(u).binary_search(&v).is_ok()
    }

    /// Edges as `(u, v)` with `u < v`, in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        (0..self.nodes.len() as u32).flat_map(move |u| {
            self.neighbors(u)
                .iter()
                .copied()
                .filter(move |&v| v > u)
                .map(move |v| (u, v))
        })
    }

    pub fn edge_list(&self) -> Vec<(u32, u32)> {
        self.edges().collect()
    }

    pub fn id_edges(&self) -> impl Iterator<Item = (EgoId, EgoId)> + '_ {
        self.edges().map(|(u, v)| (self.node(u), self.node(v)))
    }

    /// Subgraph induced by the nodes for which `keep` holds.
    pub fn induced(&self, mut keep: impl FnMut(EgoId) -> bool) -> SocialGraph {
        let mut remap = vec![u32::MAX; self.nodes.len()];
        let mut nodes = Vec::new();
        for (i, &id) in self.nodes.iter().enumerate() {
            if keep(id) {
                remap[i] = nodes.len() as u32;
                nodes.push(id);
            }
        }
        let edges: Vec<(u32, u32)> = self
            .edges()
            .filter_map(|(u, v)| {
                let (a, b) = (remap[u as usize], remap[v as usize]);
                (a != u32::MAX && b != u32::MAX).then_some((a, b))
            })
            .collect();
        SocialGraph::from_index_edges(nodes, &edges).expect("induced subgraph of a simple graph")
    }

    /// Component label per node, labels numbered in order of smallest member.
    pub fn components(&self) -> Vec<u32> {
        let n = self.nodes.len();
        let mut label = vec![u32::MAX; n];
        let mut next = 0u32;
        let mut stack = Vec::new();
        for s in 0..n {
            if label[s] != u32::MAX {
                continue;
            }
            label[s] = next;
            stack.push(s as u32);
            while let Some(u) = stack.pop() {
                for &v in self.neighbors(u) {
                    if label[v as usize] == u32::MAX {
                        label[v as usize] = next;
                        stack.push(v);
                    }
                }
            }
            next += 1;
        }
        label
    }

    pub fn is_connected(&self) -> bool {
        self.components().iter().all(|&c| c == 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Non-cash groups only; cash share is reported separately.
    #[serde(rename = "ex-cash")]
    ExcludingCash,
    /// All retained groups including the cash group.
    #[serde(rename = "inc-cash")]
    IncludingCash,
}

impl Variant {
    pub fn tag(self) -> &'static str {
        match self {
            Variant::ExcludingCash => "ex-cash",
            Variant::IncludingCash => "inc-cash",
        }
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "ex-cash" => Ok(Variant::ExcludingCash),
            "inc-cash" => Ok(Variant::IncludingCash),
            other => Err(format!("unknown variant {other:?} (expected ex-cash or inc-cash)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VectorOwner {
    Ego(EgoId),
    Class(ClassId),
}

/// Fractions of spending across purchase category groups.
#[derive(Debug, Clone, PartialEq)]
pub struct SpendingVector {
    owner: VectorOwner,
    variant: Variant,
    components: Vec<(GroupId, f64)>,
}

impl SpendingVector {
    pub fn new(owner: VectorOwner, variant: Variant, components: Vec<(GroupId, f64)>) -> Result<Self> {
        check_fractions(components.iter().map(|c| c.1), "spending vector")?;
        Ok(SpendingVector {
            owner,
            variant,
            components,
        })
    }

    pub fn owner(&self) -> VectorOwner {
        self.owner
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn components(&self) -> &[(GroupId, f64)] {
        &self.components
    }

    pub fn get(&self, group: GroupId) -> Option<f64> {
        self.components
            .iter()
            .find(|(g, _)| *g == group)
            .map(|c| c.1)
    }
}

/// Per-ego fractions of non-cash spending across merchant categories, `r(c, u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PurchaseDistribution {
    ego: EgoId,
    entries: Vec<(u32, f64)>,
}

impl PurchaseDistribution {
    /// `entries` must be sorted by category code, sum to one and contain no
    /// category of the taxonomy's cash group.
    pub fn new(ego: EgoId, entries: Vec<(u32, f64)>, taxonomy: &CategoryTaxonomy) -> Result<Self> {
        check_fractions(entries.iter().map(|e| e.1), "purchase distribution")?;
        if entries.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::Invariant(format!(
                "purchase distribution of {ego} is not sorted by category"
            )));
        }
        if let Some(&(mcc, _)) = entries.iter().find(|e| taxonomy.is_cash(e.0)) {
            return Err(Error::Invariant(format!(
                "purchase distribution of {ego} contains cash category {mcc}"
            )));
        }
        Ok(PurchaseDistribution { ego, entries })
    }

    pub(crate) fn new_unchecked(ego: EgoId, entries: Vec<(u32, f64)>) -> Self {
        PurchaseDistribution { ego, entries }
    }

    pub fn ego(&self) -> EgoId {
        self.ego
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn share(&self, mcc: u32) -> f64 {
        self.entries
            .binary_search_by_key(&mcc, |e| e.0)
            .map_or(0.0, |i| self.entries[i].1)
    }
}

fn check_fractions(values: impl Iterator<Item = f64>, what: &str) -> Result<()> {
    let mut sum = 0.0;
    for v in values {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Invariant(format!("{what} component {v} outside [0, 1]")));
        }
        sum += v;
    }
    if (sum - 1.0).abs() > SUM_TOLERANCE {
        return Err(Error::Invariant(format!("{what} sums to {sum}, not 1")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn money_parses_and_prints() {
        assert_eq!("12.34".parse::<Money>().unwrap().cents(), 1234);
        assert_eq!("12.3".parse::<Money>().unwrap().cents(), 1230);
        assert_eq!("7".parse::<Money>().unwrap().cents(), 700);
        assert_eq!(Money::from_cents(1205).to_string(), "12.05");
        for bad in ["-1", "1.234", "", "1e3", ".5", "a"] {
            assert!(bad.parse::<Money>().is_err(), "{bad}");
        }
    }

    #[test]
    fn month_parses_and_prints() {
        let m: Month = "2015-03".parse().unwrap();
        assert_eq!((m.year(), m.month()), (2015, 3));
        assert_eq!(m.to_string(), "2015-03");
        assert_eq!(m.offset(10).to_string(), "2016-01");
        assert!("2015-13".parse::<Month>().is_err());
        assert!("15-03".parse::<Month>().is_err());
    }

    #[test]
    fn graph_rejects_loops_and_duplicates() {
        let nodes = vec![EgoId(1), EgoId(2), EgoId(3)];
        assert!(SocialGraph::from_index_edges(nodes.clone(), &[(0, 0)]).is_err());
        assert!(SocialGraph::from_index_edges(nodes.clone(), &[(0, 1), (1, 0)]).is_err());
        assert!(SocialGraph::from_index_edges(nodes.clone(), &[(0, 5)]).is_err());
        let g = SocialGraph::from_index_edges(nodes, &[(0, 1), (2, 1)]).unwrap();
        assert_eq!(g.edge_count(), 2);
        assert_eq!(g.edge_list(), vec![(0, 1), (1, 2)]);
        assert_eq!(g.degrees(), vec![1, 2, 1]);
        assert!(g.is_connected());
    }

    #[test]
    fn spending_vector_sum_checked() {
        let v = SpendingVector::new(
            VectorOwner::Ego(EgoId(1)),
            Variant::ExcludingCash,
            vec![(GroupId(2), 0.25), (GroupId(3), 0.75)],
        )
        .unwrap();
        assert_eq!(v.get(GroupId(3)), Some(0.75));
        assert!(SpendingVector::new(
            VectorOwner::Class(1),
            Variant::ExcludingCash,
            vec![(GroupId(2), 0.5), (GroupId(3), 0.4)],
        )
        .is_err());
    }

    #[test]
    fn ledger_groups_by_ego() {
        let m = Month::new(2020, 1).unwrap();
        let tx = |e, mo: i32, c| Transaction {
            ego: EgoId(e),
            month: m.offset(mo),
            mcc: 5411,
            amount: Money::from_cents(c),
        };
        let l = TransactionLedger::new(vec![tx(2, 0, 5), tx(1, 1, 3), tx(1, 0, 4), tx(1, 1, 1)]);
        let groups: Vec<_> = l.by_ego().map(|(e, t)| (e.0, t.len(), active_months(t))).collect();
        assert_eq!(groups, vec![(1, 3, 2), (2, 1, 1)]);
    }
}
