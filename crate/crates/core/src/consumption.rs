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

//! Class-level consumption statistics over purchase category groups.
//!
//! Group totals are kept in integer cents, so every aggregate is independent
//! of summation order. Groups that together carry less than
//! [`LOW_SHARE_CUTOFF`] of all spending are flagged and left out of the
//! retained group set; the remaining groups (the cash group always among
//! them) index the spending vectors.

use std::collections::BTreeMap;
use std::path::Path;

use log::warn;
use serde::Serialize;

use crate::csvio;
use crate::error::{Error, Result};
use crate::model::{
    ClassId, EgoId, GroupId, SocialGraph, SpendingVector, TransactionLedger, Variant, VectorOwner,
};
use crate::nullmodel::NodeValues;
use crate::socioeco::ClassPartition;
use crate::taxonomy::CategoryTaxonomy;

/// Combined share of total spending below which the smallest groups are dropped.
pub const LOW_SHARE_CUTOFF: f64 = 0.003;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupRow {
    pub group: GroupId,
    pub total_cents: i64,
    /// `r(k, s_j)` for j = 1..n.
    pub shares: Vec<f64>,
}

/// `r(k, s_j)`: how each group's spending splits across classes.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupSpendingMatrix {
    n: usize,
    /// Nonzero groups, ascending by id.
    rows: Vec<GroupRow>,
    /// Groups flagged by the low-share rule, ascending by id.
    low_share: Vec<GroupId>,
    /// Groups in the taxonomy with no spending at all.
    zero: Vec<GroupId>,
    cash: GroupId,
    /// Transactions whose category is unknown to the taxonomy or ungrouped.
    pub skipped_transactions: usize,
}

impl GroupSpendingMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn rows(&self) -> &[GroupRow] {
        &self.rows
    }

    pub fn row(&self, g: GroupId) -> Option<&GroupRow> {
        self.rows.iter().find(|r| r.group == g)
    }

    pub fn low_share(&self) -> &[GroupId] {
        &self.low_share
    }

    pub fn zero_groups(&self) -> &[GroupId] {
        &self.zero
    }

    /// Nonzero groups that survive the low-share filter, ascending by id.
    pub fn retained(&self) -> RetainedGroups {
        RetainedGroups {
            groups: self
                .rows
                .iter()
                .map(|r| r.group)
                .filter(|g| !self.low_share.contains(g))
                .collect(),
            cash: self.cash,
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csvio::writer(path)?;
        let mut header = vec!["group".to_string(), "retained".to_string()];
        header.extend((1..=self.n).map(|j| format!("s{j}")));
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![
                r.group.to_string(),
                u8::from(!self.low_share.contains(&r.group)).to_string(),
            ];
            rec.extend(r.shares.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        csvio::finish(w, path)
    }
}

/// The group set used for spending vectors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetainedGroups {
    /// Ascending by id; may or may not contain the cash group.
    pub groups: Vec<GroupId>,
    pub cash: GroupId,
}

impl RetainedGroups {
    /// Vector index set for a variant: the non-cash retained groups, with
    /// the cash group prepended for [`Variant::IncludingCash`].
    pub fn index_set(&self, variant: Variant) -> Vec<GroupId> {
        let non_cash = self.groups.iter().copied().filter(|&g| g != self.cash);
        match variant {
            Variant::ExcludingCash => non_cash.collect(),
            Variant::IncludingCash => std::iter::once(self.cash).chain(non_cash).collect(),
        }
    }

    pub fn contains(&self, g: GroupId) -> bool {
        g == self.cash || self.groups.contains(&g)
    }
}

/// Per-ego group totals in cents, over all groups of the taxonomy.
fn ego_group_cents(
    ledger: &TransactionLedger,
    taxonomy: &CategoryTaxonomy,
) -> (Vec<(EgoId, BTreeMap<GroupId, i64>)>, usize) {
    let mut skipped = 0;
    let out = ledger
        .by_ego()
        .map(|(ego, txs)| {
            let mut m = BTreeMap::new();
            for t in txs {
                match taxonomy.pcg_of(t.mcc) {
                    Some(g) => *m.entry(g).or_insert(0) += t.amount.cents(),
                    None => skipped += 1,
                }
            }
            (ego, m)
        })
        .collect();
    (out, skipped)
}

/// Indices of the groups flagged by the low-share rule: sorted ascending by
/// total (ties by id), the longest prefix whose cumulative share stays below
/// `cutoff`. The cash group is never flagged.
fn low_share_groups(totals: &[(GroupId, i64)], cash: GroupId, cutoff: f64) -> Vec<GroupId> {
    let grand: i64 = totals.iter().map(|t| t.1).sum();
    let mut order: Vec<(GroupId, i64)> = totals.iter().copied().filter(|t| t.0 != cash).collect();
    order.sort_by_key(|t| (t.1, t.0));
    let mut flagged = Vec::new();
    let mut running = 0i64;
    for (g, c) in order {
        running += c;
        if (running as f64) < cutoff * grand as f64 {
            flagged.push(g);
        } else {
            break;
        }
    }
    flagged.sort();
    flagged
}

pub fn group_spending_shares(
    ledger: &TransactionLedger,
    partition: &ClassPartition,
    taxonomy: &CategoryTaxonomy,
) -> Result<GroupSpendingMatrix> {
    let n = partition.n();
    let (per_ego, skipped) = ego_group_cents(ledger, taxonomy);
    let mut by_group: BTreeMap<GroupId, Vec<i64>> = BTreeMap::new();
    for (ego, groups) in &per_ego {
        let class = partition
            .class_of(*ego)
            .ok_or_else(|| Error::InvalidInput(format!("ego {ego} has no class")))?;
        for (g, c) in groups {
            by_group.entry(*g).or_insert_with(|| vec![0; n])[class as usize - 1] += c;
        }
    }
    let mut rows = Vec::new();
    let mut zero = Vec::new();
    for (g, _) in taxonomy.groups() {
        let cents = by_group.get(&g);
        let total: i64 = cents.map_or(0, |c| c.iter().sum());
        if total == 0 {
            zero.push(g);
            continue;
        }
        let shares = cents
            .unwrap()
            .iter()
            .map(|&c| c as f64 / total as f64)
            .collect();
        rows.push(GroupRow {
            group: g,
            total_cents: total,
            shares,
        });
    }
    if !zero.is_empty() {
        warn!("{} groups have no spending and are omitted", zero.len());
    }
    let totals: Vec<(GroupId, i64)> = rows.iter().map(|r| (r.group, r.total_cents)).collect();
    let low_share = low_share_groups(&totals, taxonomy.cash_group(), LOW_SHARE_CUTOFF);
    Ok(GroupSpendingMatrix {
        n,
        rows,
        low_share,
        zero,
        cash: taxonomy.cash_group(),
        skipped_transactions: skipped,
    })
}

/// Dense per-ego spending vectors over one index set.
#[derive(Debug, Clone, PartialEq)]
pub struct EgoVectors {
    variant: Variant,
    groups: Vec<GroupId>,
    /// Sorted.
    egos: Vec<EgoId>,
    /// Row-major, `egos.len() x groups.len()`.
    values: Vec<f64>,
    /// Cash share of each ego against its total over the retained groups.
    cash: Vec<f64>,
    /// Egos with no in-scope spending.
    pub excluded: usize,
}

impl EgoVectors {
    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn groups(&self) -> &[GroupId] {
        &self.groups
    }

    pub fn width(&self) -> usize {
        self.groups.len()
    }

    pub fn egos(&self) -> &[EgoId] {
        &self.egos
    }

    pub fn len(&self) -> usize {
        self.egos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.egos.is_empty()
    }

    pub fn index_of(&self, ego: EgoId) -> Option<usize> {
        self.egos.binary_search(&ego).ok()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let k = self.groups.len();
        &self.values[i * k..(i + 1) * k]
    }

    pub fn cash_share(&self, i: usize) -> f64 {
        self.cash[i]
    }

    pub fn get(&self, ego: EgoId) -> Option<&[f64]> {
        self.index_of(ego).map(|i| self.row(i))
    }

    pub fn to_spending_vector(&self, i: usize) -> Result<SpendingVector> {
        SpendingVector::new(
            VectorOwner::Ego(self.egos[i]),
            self.variant,
            self.groups.iter().copied().zip(self.row(i).iter().copied()).collect(),
        )
    }
}

impl EgoVectors {
    /// Per-node values for the null model: the vector columns, then the
    /// cash share when `with_cash` is set. Every graph node needs a vector
    /// and a class.
    pub fn node_values(
        &self,
        graph: &SocialGraph,
        partition: &ClassPartition,
        with_cash: bool,
    ) -> Result<NodeValues> {
        let width = self.width() + usize::from(with_cash);
        let mut values = Vec::with_capacity(graph.node_count() * width);
        let mut class = Vec::with_capacity(graph.node_count());
        for &ego in graph.nodes() {
            let i = self
                .index_of(ego)
                .ok_or_else(|| Error::InvalidInput(format!("graph node {ego} has no spending vector")))?;
            let c = partition
                .class_of(ego)
                .ok_or_else(|| Error::InvalidInput(format!("graph node {ego} has no class")))?;
            values.extend_from_slice(self.row(i));
            if with_cash {
                values.push(self.cash_share(i));
            }
            class.push(c - 1);
        }
        NodeValues::new(width, values, class, partition.n())
    }
}

/// `SV(u)` for every ego with positive spending in the variant's index set.
pub fn spending_vectors(
    ledger: &TransactionLedger,
    taxonomy: &CategoryTaxonomy,
    retained: &RetainedGroups,
    variant: Variant,
) -> EgoVectors {
    let groups = retained.index_set(variant);
    let (per_ego, _) = ego_group_cents(ledger, taxonomy);
    let mut egos = Vec::new();
    let mut values = Vec::new();
    let mut cash = Vec::new();
    let mut excluded = 0;
    for (ego, totals) in per_ego {
        let row: Vec<i64> = groups.iter().map(|g| totals.get(g).copied().unwrap_or(0)).collect();
        let in_scope: i64 = row.iter().sum();
        let retained_total: i64 = totals
            .iter()
            .filter(|(g, _)| retained.contains(**g))
            .map(|(_, c)| c)
            .sum();
        if in_scope <= 0 || retained_total <= 0 {
            excluded += 1;
            continue;
        }
        egos.push(ego);
        values.extend(row.iter().map(|&c| c as f64 / in_scope as f64));
        let c = totals.get(&retained.cash).copied().unwrap_or(0);
        cash.push(c as f64 / retained_total as f64);
    }
    EgoVectors {
        variant,
        groups,
        egos,
        values,
        cash,
        excluded,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassStats {
    pub class: ClassId,
    pub members: usize,
    /// `None` when the class has no member with a vector.
    pub mean: Option<Vec<f64>>,
    pub mean_cash: Option<f64>,
    pub dispersion: Option<f64>,
    pub entropy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassVectorStats {
    pub variant: Variant,
    pub groups: Vec<GroupId>,
    pub classes: Vec<ClassStats>,
}

impl ClassVectorStats {
    pub fn means(&self) -> Vec<Option<Vec<f64>>> {
        self.classes.iter().map(|c| c.mean.clone()).collect()
    }

    pub fn cash_means(&self) -> Vec<Option<f64>> {
        self.classes.iter().map(|c| c.mean_cash).collect()
    }

    /// Class-average vector as a validated [`SpendingVector`].
    pub fn class_vector(&self, j: usize) -> Option<Result<SpendingVector>> {
        let c = &self.classes[j];
        c.mean.as_ref().map(|m| {
            SpendingVector::new(
                VectorOwner::Class(c.class),
                self.variant,
                self.groups.iter().copied().zip(m.iter().copied()).collect(),
            )
        })
    }
}

/// Members of each class (0-based) as row indices into `vectors`.
pub fn class_members(vectors: &EgoVectors, partition: &ClassPartition) -> Vec<Vec<usize>> {
    let mut members = vec![Vec::new(); partition.n()];
    for (i, &e) in vectors.egos().iter().enumerate() {
        if let Some(c) = partition.class_of(e) {
            members[c as usize - 1].push(i);
        }
    }
    members
}

fn mean_of(vectors: &EgoVectors, rows: &[usize]) -> Option<Vec<f64>> {
    if rows.is_empty() {
        return None;
    }
    let mut m = vec![0.0; vectors.width()];
    for &i in rows {
        for (a, x) in m.iter_mut().zip(vectors.row(i)) {
            *a += x;
        }
    }
    m.iter_mut().for_each(|a| *a /= rows.len() as f64);
    Some(m)
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `sigma_SV(s_j)`: mean distance of member vectors to the class mean.
pub fn class_dispersion(vectors: &EgoVectors, partition: &ClassPartition) -> Vec<Option<f64>> {
    class_members(vectors, partition)
        .iter()
        .map(|rows| {
            mean_of(vectors, rows).map(|m| {
                rows.iter().map(|&i| euclid(vectors.row(i), &m)).sum::<f64>() / rows.len() as f64
            })
        })
        .collect()
}

/// Shannon entropy (natural log) of a mean vector, with `0 ln 0 = 0`.
pub fn entropy(mean: &[f64]) -> f64 {
    mean.iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum::<f64>()
        .max(0.0)
}

/// `S_SV(s_j)` for each class mean.
pub fn class_entropy(means: &[Option<Vec<f64>>]) -> Vec<Option<f64>> {
    means.iter().map(|m| m.as_deref().map(entropy)).collect()
}

pub fn class_vector_stats(vectors: &EgoVectors, partition: &ClassPartition) -> ClassVectorStats {
    let members = class_members(vectors, partition);
    let classes = members
        .iter()
        .enumerate()
        .map(|(j, rows)| {
            let mean = mean_of(vectors, rows);
            let dispersion = mean.as_ref().map(|m| {
                rows.iter().map(|&i| euclid(vectors.row(i), m)).sum::<f64>() / rows.len() as f64
            });
            let mean_cash = (!rows.is_empty()).then(|| {
                rows.iter().map(|&i| vectors.cash_share(i)).sum::<f64>() / rows.len() as f64
            });
            ClassStats {
                class: (j + 1) as ClassId,
                members: rows.len(),
                entropy: mean.as_deref().map(entropy),
                mean,
                mean_cash,
                dispersion,
            }
        })
        .collect();
    ClassVectorStats {
        variant: vectors.variant(),
        groups: vectors.groups().to_vec(),
        classes,
    }
}

/// Symmetric matrix of Euclidean distances between class means; entries
/// involving a class without a mean are `None`.
pub fn class_distance_matrix(means: &[Option<Vec<f64>>]) -> Vec<Vec<Option<f64>>> {
    let n = means.len();
    let mut d = vec![vec![None; n]; n];
    for i in 0..n {
        for j in i..n {
            if let (Some(a), Some(b)) = (&means[i], &means[j]) {
                let v = if i == j { 0.0 } else { euclid(a, b) };
                d[i][j] = Some(v);
                d[j][i] = Some(v);
            }
        }
    }
    d
}

/// Distance between class-mean cash shares.
pub fn class_scalar_distance(values: &[Option<f64>]) -> Vec<Vec<Option<f64>>> {
    let means: Vec<Option<Vec<f64>>> = values.iter().map(|v| v.map(|x| vec![x])).collect();
    class_distance_matrix(&means)
}

pub fn write_matrix(path: &Path, m: &[Vec<Option<f64>>]) -> Result<()> {
    let mut w = csvio::writer(path)?;
    let mut header = vec!["class".to_string()];
    header.extend((1..=m.len()).map(|j| format!("s{j}")));
    w.write_record(&header)?;
    for (i, row) in m.iter().enumerate() {
        let mut rec = vec![(i + 1).to_string()];
        rec.extend(row.iter().map(|v| csvio::fmt_opt(*v)));
        w.write_record(&rec)?;
    }
    csvio::finish(w, path)
}

impl ClassVectorStats {
    /// Long format: class,group,mean.
    pub fn write_means(&self, path: &Path) -> Result<()> {
        let mut w = csvio::writer(path)?;
        w.write_record(["class", "group", "mean"])?;
        for c in &self.classes {
            for (k, g) in self.groups.iter().enumerate() {
                let v = c.mean.as_ref().map(|m| m[k]);
                w.write_record([c.class.to_string(), g.to_string(), csvio::fmt_opt(v)])?;
            }
        }
        csvio::finish(w, path)
    }

    pub fn write_dispersion_entropy(&self, path: &Path) -> Result<()> {
        let mut w = csvio::writer(path)?;
        w.write_record(["class", "members", "dispersion", "entropy", "mean_cash_share"])?;
        for c in &self.classes {
            w.write_record([
                c.class.to_string(),
                c.members.to_string(),
                csvio::fmt_opt(c.dispersion),
                csvio::fmt_opt(c.entropy),
                csvio::fmt_opt(c.mean_cash),
            ])?;
        }
        csvio::finish(w, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Money, Month, Transaction};
    use proptest::prelude::*;

    const FOOD: u32 = 5411;
    const GAS: u32 = 5541;

    fn tx(ego: u64, mcc: u32, cents: i64) -> Transaction {
        Transaction {
            ego: EgoId(ego),
            month: Month::new(2015, 1).unwrap(),
            mcc,
            amount: Money::from_cents(cents),
        }
    }

    fn partition(classes: &[(u64, ClassId)], n: usize) -> ClassPartition {
        ClassPartition::from_assignment(n, classes.iter().map(|&(e, c)| (EgoId(e), c)), None)
            .unwrap()
    }

    fn all_groups(t: &CategoryTaxonomy) -> RetainedGroups {
        RetainedGroups {
            groups: t.groups().map(|g| g.0).collect(),
            cash: t.cash_group(),
        }
    }

    #[test]
    fn one_class_owns_everything() {
        let t = CategoryTaxonomy::bundled();
        let ledger = TransactionLedger::new(vec![tx(1, FOOD, 100), tx(2, GAS, 50), tx(2, FOOD, 7)]);
        let m = group_spending_shares(&ledger, &partition(&[(1, 1), (2, 1)], 1), &t).unwrap();
        assert!(m.rows().iter().all(|r| r.shares == vec![1.0]));
    }

    #[test]
    fn shares_split_by_class() {
        let t = CategoryTaxonomy::bundled();
        let ledger = TransactionLedger::new(vec![tx(1, FOOD, 3000), tx(2, FOOD, 7000)]);
        let m = group_spending_shares(&ledger, &partition(&[(1, 1), (2, 2)], 2), &t).unwrap();
        let row = m.row(t.pcg_of(FOOD).unwrap()).unwrap();
        assert_eq!(row.shares, vec![0.3, 0.7]);
    }

    #[test]
    fn unclassified_ego_rejected() {
        let t = CategoryTaxonomy::bundled();
        let ledger = TransactionLedger::new(vec![tx(1, FOOD, 3000), tx(9, FOOD, 1)]);
        assert!(group_spending_shares(&ledger, &partition(&[(1, 1)], 1), &t).is_err());
    }

    #[test]
    fn low_share_prefix() {
        let g = |i| GroupId(i);
        let totals = [(g(1), 500), (g(2), 9_000), (g(3), 1), (g(4), 2), (g(5), 497)];
        // grand = 10_000; 0.3% = 30: groups 3 and 4 (cumulative 3) are flagged,
        // adding group 5 would cross.
        assert_eq!(low_share_groups(&totals, g(1), 0.003), vec![g(3), g(4)]);
        // The cash group is exempt even when tiny.
        assert_eq!(low_share_groups(&totals, g(3), 0.003), vec![g(4)]);
    }

    #[test]
    fn single_group_vector() {
        let t = CategoryTaxonomy::bundled();
        let ledger = TransactionLedger::new(vec![tx(1, FOOD, 100), tx(1, FOOD, 300)]);
        let v = spending_vectors(&ledger, &t, &all_groups(&t), Variant::ExcludingCash);
        let k = v.groups().iter().position(|&g| Some(g) == t.pcg_of(FOOD)).unwrap();
        let row = v.row(0);
        assert_eq!(row[k], 1.0);
        assert_eq!(row.iter().sum::<f64>(), 1.0);
        v.to_spending_vector(0).unwrap();
    }

    #[test]
    fn half_and_half() {
        let t = CategoryTaxonomy::bundled();
        let ledger = TransactionLedger::new(vec![tx(1, FOOD, 250), tx(1, GAS, 250)]);
        let v = spending_vectors(&ledger, &t, &all_groups(&t), Variant::ExcludingCash);
        let nz: Vec<f64> = v.row(0).iter().copied().filter(|&x| x > 0.0).collect();
        assert_eq!(nz, vec![0.5, 0.5]);
    }

    #[test]
    fn cash_share_against_retained_total() {
        let t = CategoryTaxonomy::bundled();
        let ledger = TransactionLedger::new(vec![tx(1, 24, 200), tx(1, FOOD, 300), tx(1, GAS, 500)]);
        let r = all_groups(&t);
        let ex = spending_vectors(&ledger, &t, &r, Variant::ExcludingCash);
        assert_eq!(ex.cash_share(0), 0.2);
        assert!((ex.row(0).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(!ex.groups().contains(&t.cash_group()));
        let inc = spending_vectors(&ledger, &t, &r, Variant::IncludingCash);
        assert_eq!(inc.groups()[0], t.cash_group());
        assert_eq!(inc.row(0)[0], 0.2);
        assert_eq!(inc.cash_share(0), 0.2);
    }

    #[test]
    fn cash_only_ego_excluded_from_ex_cash() {
        let t = CategoryTaxonomy::bundled();
        let ledger = TransactionLedger::new(vec![tx(1, 24, 200), tx(2, FOOD, 1)]);
        let v = spending_vectors(&ledger, &t, &all_groups(&t), Variant::ExcludingCash);
        assert_eq!(v.len(), 1);
        assert_eq!(v.excluded, 1);
    }

    #[test]
    fn distance_examples() {
        let d = class_distance_matrix(&[Some(vec![1.0, 0.0]), Some(vec![0.0, 1.0]), None]);
        assert_eq!(d[0][0], Some(0.0));
        assert_eq!(d[0][1], Some(2f64.sqrt()));
        assert_eq!(d[1][0], d[0][1]);
        assert_eq!(d[2][0], None);
        let s = class_scalar_distance(&[Some(0.1), Some(0.4)]);
        assert!((s[0][1].unwrap() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn dispersion_examples() {
        let t = CategoryTaxonomy::bundled();
        let ledger = TransactionLedger::new(vec![
            tx(1, FOOD, 100),
            tx(2, GAS, 100),
            tx(3, FOOD, 5),
            tx(4, FOOD, 9),
        ]);
        let v = spending_vectors(&ledger, &t, &all_groups(&t), Variant::ExcludingCash);
        let p = partition(&[(1, 1), (2, 1), (3, 2), (4, 2)], 2);
        let s = class_dispersion(&v, &p);
        assert!((s[0].unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(s[1], Some(0.0));
        let stats = class_vector_stats(&v, &p);
        assert_eq!(stats.classes[1].entropy, Some(0.0));
        assert_eq!(stats.classes[0].dispersion, s[0]);
        stats.class_vector(0).unwrap().unwrap();
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(entropy(&[0.0, 1.0, 0.0]), 0.0);
        let u = vec![1.0 / 16.0; 16];
        assert!((entropy(&u) - 16f64.ln()).abs() < 1e-12);
        assert!((entropy(&u) - 2.7726).abs() < 1e-4);
    }

    proptest! {
        #[test]
        fn entropy_matches_direct_sum(raw in proptest::collection::vec(0.0f64..1.0, 1..20)) {
            let s: f64 = raw.iter().sum();
            prop_assume!(s > 0.0);
            let p: Vec<f64> = raw.iter().map(|x| x / s).collect();
            let mut direct = 0.0;
            for &x in &p {
                if x > 0.0 {
                    direct += -x * x.ln();
                }
            }
            prop_assert!((entropy(&p) - direct).abs() < 1e-12);
            prop_assert!(entropy(&p) <= (p.len() as f64).ln() + 1e-12);
        }

        #[test]
        fn distance_matrix_is_a_metric(
            pts in proptest::collection::vec(proptest::collection::vec(0.0f64..1.0, 4), 3..8)
        ) {
            let means: Vec<Option<Vec<f64>>> = pts.into_iter().map(Some).collect();
            let d = class_distance_matrix(&means);
            let n = d.len();
            for i in 0..n {
                prop_assert_eq!(d[i][i], Some(0.0));
                for j in 0..n {
                    prop_assert_eq!(d[i][j], d[j][i]);
                    for k in 0..n {
                        let (a, b, c) = (d[i][j].unwrap(), d[j][k].unwrap(), d[i][k].unwrap());
                        prop_assert!(c <= a + b + 1e-12);
                    }
                }
            }
        }

        #[test]
        fn shares_rows_sum_to_one(
            spend in proptest::collection::vec((0u64..30, 0usize..4, 1i64..10_000), 1..200)
        ) {
            let t = CategoryTaxonomy::bundled();
            let mccs = [FOOD, GAS, 24, 5812];
            let ledger = TransactionLedger::new(
                spend.iter().map(|&(e, m, c)| tx(e, mccs[m], c)).collect(),
            );
            let classes: Vec<(u64, ClassId)> =
                ledger.egos().iter().map(|e| (e.0, (e.0 % 3) as ClassId + 1)).collect();
            let m = group_spending_shares(&ledger, &partition(&classes, 3), &t).unwrap();
            for r in m.rows() {
                prop_assert!((r.shares.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }
}
