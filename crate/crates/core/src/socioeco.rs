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

//! Average monthly purchase (AMP) and equal-sum socioeconomic classes.

use std::cmp::Ordering;
use std::path::Path;

use serde::Serialize;

use crate::csvio;
use crate::error::{Error, Result};
use crate::model::{active_months, ClassId, EgoId, Money, TransactionLedger};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmpEntry {
    pub ego: EgoId,
    /// Total spending divided by the number of active months.
    pub amp: f64,
    pub active_months: u32,
}

/// Per-ego AMP, sorted by ego id.
#[derive(Debug, Clone, PartialEq)]
pub struct AmpTable {
    entries: Vec<AmpEntry>,
    /// Egos whose purchases all had zero amount.
    pub excluded: usize,
}

impl AmpTable {
    /// Builds a table from raw `(ego, amp)` values with one active month each.
    /// Intended for tests and for callers that compute AMP elsewhere.
    pub fn from_values(values: impl IntoIterator<Item = (EgoId, f64)>) -> Result<Self> {
        let mut entries: Vec<AmpEntry> = values
            .into_iter()
            .map(|(ego, amp)| AmpEntry {
                ego,
                amp,
                active_months: 1,
            })
            .collect();
        if let Some(e) = entries.iter().find(|e| !(e.amp > 0.0) || !e.amp.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "AMP of ego {} must be positive, got {}",
                e.ego, e.amp
            )));
        }
        entries.sort_by_key(|e| e.ego);
        if entries.windows(2).any(|w| w[0].ego == w[1].ego) {
            return Err(Error::InvalidInput("duplicate ego in AMP table".into()));
        }
        Ok(AmpTable {
            entries,
            excluded: 0,
        })
    }

    pub fn entries(&self) -> &[AmpEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, ego: EgoId) -> Option<&AmpEntry> {
        self.entries
            .binary_search_by_key(&ego, |e| e.ego)
            .ok()
            .map(|i| &self.entries[i])
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|e| e.amp).sum()
    }

    /// Entries ascending by AMP, ties by ego id.
    pub fn sorted_by_amp(&self) -> Vec<AmpEntry> {
        let mut v = self.entries.clone();
        v.sort_by(|a, b| {
            a.amp
                .partial_cmp(&b.amp)
                .unwrap_or(Ordering::Equal)
                .then(a.ego.cmp(&b.ego))
        });
        v
    }

    /// Same egos and month counts with every AMP multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> AmpTable {
        AmpTable {
            entries: self
                .entries
                .iter()
                .map(|e| AmpEntry {
                    amp: e.amp * factor,
                    ..*e
                })
                .collect(),
            excluded: self.excluded,
        }
    }
}

pub fn compute_amp(ledger: &TransactionLedger) -> Result<AmpTable> {
    if ledger.is_empty() {
        return Err(Error::InvalidInput("empty transaction ledger".into()));
    }
    let mut entries = Vec::new();
    let mut excluded = 0;
    for (ego, txs) in ledger.by_ego() {
        let total: Money = txs.iter().map(|t| t.amount).sum();
        if total.is_zero() {
            excluded += 1;
            continue;
        }
        let months = active_months(txs) as u32;
        entries.push(AmpEntry {
            ego,
            amp: total.as_f64() / months as f64,
            active_months: months,
        });
    }
    Ok(AmpTable { entries, excluded })
}

/// Normalized cumulative AMP curve: points `(f, C(f))` from `(0, 0)` to
/// `(1, 1)`, with egos sorted ascending by AMP.
pub fn cumulative_curve(amp: &AmpTable) -> Result<Vec<(f64, f64)>> {
    if amp.is_empty() {
        return Err(Error::InvalidInput("cumulative curve of an empty population".into()));
    }
    let sorted = amp.sorted_by_amp();
    let n = sorted.len() as f64;
    let total: f64 = sorted.iter().map(|e| e.amp).sum();
    let mut curve = Vec::with_capacity(sorted.len() + 1);
    curve.push((0.0, 0.0));
    let mut running = 0.0;
    for (i, e) in sorted.iter().enumerate() {
        running += e.amp;
        curve.push(((i + 1) as f64 / n, running / total));
    }
    // Pin the endpoint against rounding drift.
    curve.last_mut().unwrap().1 = 1.0;
    Ok(curve)
}

/// Gini coefficient from the cumulative curve: one minus twice the area
/// under it (trapezoid rule, exact for a finite population).
pub fn gini_from_curve(curve: &[(f64, f64)]) -> f64 {
    let area: f64 = curve
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum();
    1.0 - 2.0 * area
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassInfo {
    pub class: ClassId,
    pub size: usize,
    pub amp_sum: f64,
    /// `None` for an empty class.
    pub mean_amp: Option<f64>,
    pub min_amp: Option<f64>,
    pub max_amp: Option<f64>,
}

/// Assignment of egos to `n` ordered classes (1 = lowest).
#[derive(Debug, Clone, PartialEq)]
pub struct ClassPartition {
    n: usize,
    /// Sorted by ego id.
    assignment: Vec<(EgoId, ClassId)>,
    classes: Vec<ClassInfo>,
}

impl ClassPartition {
    /// Builds a partition from an explicit assignment, with class summaries
    /// taken from `amp` when the ego is present there.
    pub fn from_assignment(
        n: usize,
        assignment: impl IntoIterator<Item = (EgoId, ClassId)>,
        amp: Option<&AmpTable>,
    ) -> Result<Self> {
        let mut assignment: Vec<(EgoId, ClassId)> = assignment.into_iter().collect();
        assignment.sort_by_key(|a| a.0);
        if assignment.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::Invariant("ego assigned to more than one class".into()));
        }
        if let Some(&(e, c)) = assignment.iter().find(|a| a.1 == 0 || a.1 as usize > n) {
            return Err(Error::Invariant(format!("ego {e} has class {c} outside 1..={n}")));
        }
        let mut members: Vec<Vec<f64>> = vec![Vec::new(); n];
        let mut sizes = vec![0usize; n];
        for &(e, c) in &assignment {
            sizes[c as usize - 1] += 1;
            if let Some(a) = amp.and_then(|t| t.get(e)) {
                members[c as usize - 1].push(a.amp);
            }
        }
        let classes = (0..n)
            .map(|j| summarize(j, sizes[j], &members[j]))
            .collect();
        Ok(ClassPartition {
            n,
            assignment,
            classes,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn class_of(&self, ego: EgoId) -> Option<ClassId> {
        self.assignment
            .binary_search_by_key(&ego, |a| a.0)
            .ok()
            .map(|i| self.assignment[i].1)
    }

    pub fn assignment(&self) -> &[(EgoId, ClassId)] {
        &self.assignment
    }

    pub fn classes(&self) -> &[ClassInfo] {
        &self.classes
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.classes.iter().map(|c| c.size).collect()
    }

    /// Partition restricted to `keep` egos, keeping the original class
    /// boundaries and recomputing the per-class summaries.
    pub fn restricted(&self, amp: Option<&AmpTable>, mut keep: impl FnMut(EgoId) -> bool) -> Self {
        Self::from_assignment(
            self.n,
            self.assignment.iter().copied().filter(|a| keep(a.0)),
            amp,
        )
        .expect("subset of a valid partition")
    }

    pub fn write_csv(&self, path: &Path, amp: &AmpTable) -> Result<()> {
        let mut w = csvio::writer(path)?;
        w.write_record(["ego_id", "class", "amp"])?;
        for &(e, c) in &self.assignment {
            let a = amp.get(e).map(|a| a.amp);
            w.write_record([e.to_string(), c.to_string(), csvio::fmt_opt(a)])?;
        }
        csvio::finish(w, path)
    }
}

fn summarize(j: usize, size: usize, amps: &[f64]) -> ClassInfo {
    let sum: f64 = amps.iter().sum();
    let nonempty = !amps.is_empty();
    ClassInfo {
        class: (j + 1) as ClassId,
        size,
        amp_sum: sum,
        mean_amp: nonempty.then(|| sum / amps.len() as f64),
        min_amp: amps.iter().copied().reduce(f64::min),
        max_amp: amps.iter().copied().reduce(f64::max),
    }
}

/// Splits the AMP-sorted population into `n` contiguous classes of (nearly)
/// equal AMP sum.
///
/// Class `j` closes at the ego whose inclusion makes the running sum reach
/// or cross `j * total / n`; that ego belongs to class `j`. Ties in AMP are
/// ordered by ego id. The last class takes whatever remains.
pub fn partition_classes(amp: &AmpTable, n: usize) -> Result<ClassPartition> {
    if n == 0 {
        return Err(Error::Config("class count must be at least 1".into()));
    }
    if n > amp.len() {
        return Err(Error::InvalidInput(format!(
            "cannot form {n} classes from {} egos",
            amp.len()
        )));
    }
    let sorted = amp.sorted_by_amp();
    let total: f64 = sorted.iter().map(|e| e.amp).sum();
    let mut assignment = Vec::with_capacity(sorted.len());
    let mut class = 1usize;
    let mut running = 0.0;
    for e in &sorted {
        running += e.amp;
        assignment.push((e.ego, class as ClassId));
        if class < n && running >= class as f64 * total / n as f64 {
            class += 1;
        }
    }
    ClassPartition::from_assignment(n, assignment, Some(amp))
}

pub fn write_curve(path: &Path, curve: &[(f64, f64)]) -> Result<()> {
    let mut w = csvio::writer(path)?;
    w.write_record(["f", "C"])?;
    for (f, c) in curve {
        w.write_record([f.to_string(), c.to_string()])?;
    }
    csvio::finish(w, path)
}
