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

//! Log parsing, social graph construction and corpus joining.
//!
//! The interaction log becomes a directed event graph, which is pruned to
//! its largest subgraph where every node both sends and receives, then made
//! undirected. Joining with the bank side keeps only identifiers present in
//! both corpora and the largest connected component of what remains.

use std::collections::{HashSet, VecDeque};
use std::fmt;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use crate::csvio;
use crate::error::{Error, Result};
use crate::model::{
    active_months, EgoId, EgoProfile, Gender, Money, Month, SocialGraph, Transaction,
    TransactionLedger,
};

pub const INTERACTIONS_HEADER: [&str; 5] = ["caller_id", "callee_id", "timestamp", "kind", "duration"];
pub const TRANSACTIONS_HEADER: [&str; 4] = ["ego_id", "month", "amount", "mcc"];
pub const PROFILES_HEADER: [&str; 4] = ["ego_id", "age", "gender", "zip"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InteractionKind {
    Call,
    Sms,
}

impl fmt::Display for InteractionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InteractionKind::Call => "call",
            InteractionKind::Sms => "sms",
        })
    }
}

impl FromStr for InteractionKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "call" => Ok(InteractionKind::Call),
            "sms" => Ok(InteractionKind::Sms),
            other => Err(format!("unknown interaction kind {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InteractionEvent {
    pub caller: EgoId,
    pub callee: EgoId,
    pub timestamp: i64,
    pub kind: InteractionKind,
    /// Seconds; always 0 for SMS.
    pub duration: u32,
}

/// Row accounting for one parsed file.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ParseStats {
    pub rows: usize,
    pub accepted: usize,
    pub malformed: usize,
    pub self_interactions: usize,
}

impl ParseStats {
    fn check(&self, path: &Path) -> Result<()> {
        if self.malformed * 10 > self.rows {
            Err(Error::TooManyMalformed {
                path: path.to_path_buf(),
                malformed: self.malformed,
                rows: self.rows,
            })
        } else {
            Ok(())
        }
    }
}

fn parse_event(rec: &csv::StringRecord) -> Option<InteractionEvent> {
    if rec.len() != 5 {
        return None;
    }
    let kind: InteractionKind = rec[3].parse().ok()?;
    let duration: u32 = rec[4].parse().ok()?;
    if kind == InteractionKind::Sms && duration != 0 {
        return None;
    }
    Some(InteractionEvent {
        caller: rec[0].parse().ok()?,
        callee: rec[1].parse().ok()?,
        timestamp: rec[2].parse().ok()?,
        kind,
        duration,
    })
}

/// Streaming reader over an interaction log. Malformed rows and
/// self-interactions are skipped and counted; call [`finish`](Self::finish)
/// after draining to apply the malformed-row limit.
pub struct InteractionStream<R: Read> {
    records: csv::StringRecordsIntoIter<R>,
    stats: ParseStats,
    path: PathBuf,
}

impl<R: Read> InteractionStream<R> {
    pub fn from_reader(reader: R, label: impl Into<PathBuf>) -> Result<Self> {
        let path = label.into();
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        csvio::check_header(&mut rdr, &INTERACTIONS_HEADER, &path.display().to_string())?;
        Ok(InteractionStream {
            records: rdr.into_records(),
            stats: ParseStats::default(),
            path,
        })
    }

    pub fn stats(&self) -> &ParseStats {
        &self.stats
    }

    /// Drains the stream and returns the row accounting, failing when more
    /// than 10% of rows were malformed.
    pub fn finish(mut self) -> Result<ParseStats> {
        for _ in self.by_ref() {}
        self.stats.check(&self.path)?;
        Ok(self.stats)
    }
}

impl<R: Read> Iterator for InteractionStream<R> {
    type Item = InteractionEvent;

    fn next(&mut self) -> Option<InteractionEvent> {
        loop {
            let rec = self.records.next()?;
            self.stats.rows += 1;
            let Some(ev) = rec.ok().as_ref().and_then(parse_event) else {
                self.stats.malformed += 1;
                continue;
            };
            if ev.caller == ev.callee {
                self.stats.self_interactions += 1;
                continue;
            }
            self.stats.accepted += 1;
            return Some(ev);
        }
    }
}

pub fn parse_interactions(path: impl AsRef<Path>) -> Result<InteractionStream<std::fs::File>> {
    let path = path.as_ref();
    InteractionStream::from_reader(csvio::open(path)?, path)
}

pub fn read_interactions(path: impl AsRef<Path>) -> Result<(Vec<InteractionEvent>, ParseStats)> {
    let mut stream = parse_interactions(path)?;
    let events: Vec<_> = stream.by_ref().collect();
    let stats = stream.finish()?;
    Ok((events, stats))
}

pub fn write_interactions(path: impl AsRef<Path>, events: &[InteractionEvent]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csvio::writer(path)?;
    w.write_record(INTERACTIONS_HEADER)?;
    for e in events {
        w.write_record([
            e.caller.to_string(),
            e.callee.to_string(),
            e.timestamp.to_string(),
            e.kind.to_string(),
            e.duration.to_string(),
        ])?;
    }
    csvio::finish(w, path)
}

fn parse_transaction(rec: &csv::StringRecord) -> Option<Transaction> {
    if rec.len() != 4 {
        return None;
    }
    Some(Transaction {
        ego: rec[0].parse().ok()?,
        month: rec[1].parse::<Month>().ok()?,
        amount: rec[2].parse::<Money>().ok()?,
        mcc: rec[3].parse().ok()?,
    })
}

/// Reads `ego_id,month,amount,mcc`. Codes are kept as-is; validity against a
/// taxonomy is decided downstream.
pub fn read_transactions(path: impl AsRef<Path>) -> Result<(TransactionLedger, ParseStats)> {
    let path = path.as_ref();
    let mut rdr = csvio::reader(path)?;
    csvio::check_header(&mut rdr, &TRANSACTIONS_HEADER, &path.display().to_string())?;
    let mut stats = ParseStats::default();
    let mut txs = Vec::new();
    for rec in rdr.records() {
        stats.rows += 1;
        match rec.ok().as_ref().and_then(parse_transaction) {
            Some(t) => {
                stats.accepted += 1;
                txs.push(t);
            }
            None => stats.malformed += 1,
        }
    }
    stats.check(path)?;
    Ok((TransactionLedger::new(txs), stats))
}

pub fn write_transactions(path: impl AsRef<Path>, ledger: &TransactionLedger) -> Result<()> {
    let path = path.as_ref();
    let mut w = csvio::writer(path)?;
    w.write_record(TRANSACTIONS_HEADER)?;
    for t in ledger.transactions() {
        w.write_record([
            t.ego.to_string(),
            t.month.to_string(),
            t.amount.to_string(),
            t.mcc.to_string(),
        ])?;
    }
    csvio::finish(w, path)
}

fn parse_profile(rec: &csv::StringRecord) -> Option<EgoProfile> {
    if rec.len() != 4 {
        return None;
    }
    let gender = match &rec[2] {
        "" => None,
        g => Some(g.parse::<Gender>().ok()?),
    };
    Some(EgoProfile {
        id: rec[0].parse().ok()?,
        age: rec[1].parse().ok()?,
        gender,
        zip: (!rec[3].is_empty()).then(|| rec[3].to_string()),
    })
}

/// Reads `ego_id,age,gender,zip`; an empty gender cell is kept as unknown.
/// Profiles are returned sorted by id; a repeated id is an error.
pub fn read_profiles(path: impl AsRef<Path>) -> Result<(Vec<EgoProfile>, ParseStats)> {
    let path = path.as_ref();
    let mut rdr = csvio::reader(path)?;
    csvio::check_header(&mut rdr, &PROFILES_HEADER, &path.display().to_string())?;
    let mut stats = ParseStats::default();
    let mut profiles = Vec::new();
    for rec in rdr.records() {
        stats.rows += 1;
        match rec.ok().as_ref().and_then(parse_profile) {
            Some(p) => {
                stats.accepted += 1;
                profiles.push(p);
            }
            None => stats.malformed += 1,
        }
    }
    stats.check(path)?;
    profiles.sort_by_key(|p| p.id);
    if let Some(w) = profiles.windows(2).find(|w| w[0].id == w[1].id) {
        return Err(Error::InvalidInput(format!(
            "{}: duplicate profile for ego {}",
            path.display(),
            w[0].id
        )));
    }
    Ok((profiles, stats))
}

pub fn write_profiles(path: impl AsRef<Path>, profiles: &[EgoProfile]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csvio::writer(path)?;
    w.write_record(PROFILES_HEADER)?;
    for p in profiles {
        w.write_record([
            p.id.to_string(),
            p.age.to_string(),
            p.gender.map(Gender::letter).unwrap_or("").to_string(),
            p.zip.clone().unwrap_or_default(),
        ])?;
    }
    csvio::finish(w, path)
}

/// Directed multigraph of interaction events with per-node degree counters
/// (counted with multiplicity).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectedEventGraph {
    nodes: Vec<EgoId>,
    edges: Vec<(u32, u32)>,
    in_deg: Vec<u32>,
    out_deg: Vec<u32>,
}

impl DirectedEventGraph {
    /// Self-loops are dropped; every endpoint becomes a node.
    pub fn from_id_edges(pairs: impl IntoIterator<Item = (EgoId, EgoId)>) -> Self {
        let pairs: Vec<(EgoId, EgoId)> = pairs.into_iter().filter(|(a, b)| a != b).collect();
        let mut nodes: Vec<EgoId> = pairs.iter().flat_map(|&(a, b)| [a, b]).collect();
        nodes.sort_unstable();
        nodes.dedup();
        let idx = |id: EgoId| nodes.binary_search(&id).unwrap() as u32;
        let edges = pairs.iter().map(|&(a, b)| (idx(a), idx(b))).collect();
        Self::from_parts(nodes, edges)
    }

    pub fn from_events(events: impl IntoIterator<Item = InteractionEvent>) -> Self {
        Self::from_id_edges(events.into_iter().map(|e| (e.caller, e.callee)))
    }

    fn from_parts(nodes: Vec<EgoId>, edges: Vec<(u32, u32)>) -> Self {
        let mut in_deg = vec![0u32; nodes.len()];
        let mut out_deg = vec![0u32; nodes.len()];
        for &(a, b) in &edges {
            out_deg[a as usize] += 1;
            in_deg[b as usize] += 1;
        }
        DirectedEventGraph {
            nodes,
            edges,
            in_deg,
            out_deg,
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn nodes(&self) -> &[EgoId] {
        &self.nodes
    }

    pub fn edges(&self) -> impl Iterator<Item = (EgoId, EgoId)> + '_ {
        self.edges
            .iter()
            .map(|&(a, b)| (self.nodes[a as usize], self.nodes[b as usize]))
    }

    pub fn in_degree(&self, id: EgoId) -> Option<u32> {
        self.nodes.binary_search(&id).ok().map(|i| self.in_deg[i])
    }

    pub fn out_degree(&self, id: EgoId) -> Option<u32> {
        self.nodes.binary_search(&id).ok().map(|i| self.out_deg[i])
    }

    /// Recursively removes nodes with no incoming or no outgoing events.
    ///
    /// Work-queue fixed point, O(V + E). The result is the unique maximal
    /// subgraph in which every node has positive in- and out-degree.
    pub fn prune_inactive(&self) -> DirectedEventGraph {
        let n = self.nodes.len();
        let csr = |key: fn(&(u32, u32)) -> u32, val: fn(&(u32, u32)) -> u32| {
            let mut off = vec![0usize; n + 1];
            for e in &self.edges {
                off[key(e) as usize + 1] += 1;
            }
            for i in 0..n {
                off[i + 1] += off[i];
            }
            let mut fill = off.clone();
            let mut list = vec![0u32; self.edges.len()];
            for e in &self.edges {
                let k = key(e) as usize;
                list[fill[k]] = val(e);
                fill[k] += 1;
            }
            (off, list)
        };
        let (out_off, out_list) = csr(|e| e.0, |e| e.1);
        let (in_off, in_list) = csr(|e| e.1, |e| e.0);

        let mut in_deg = self.in_deg.clone();
        let mut out_deg = self.out_deg.clone();
        let mut alive = vec![true; n];
        let mut queue: VecDeque<u32> = (0..n as u32)
            .filter(|&i| in_deg[i as usize] == 0 || out_deg[i as usize] == 0)
            .collect();
        while let Some(u) = queue.pop_front() {
            let u = u as usize;
            if !alive[u] {
                continue;
            }
            alive[u] = false;
            for &w in &out_list[out_off[u]..out_off[u + 1]] {
                let w = w as usize;
                if alive[w] {
                    in_deg[w] -= 1;
                    if in_deg[w] == 0 {
                        queue.push_back(w as u32);
                    }
                }
            }
            for &w in &in_list[in_off[u]..in_off[u + 1]] {
                let w = w as usize;
                if alive[w] {
                    out_deg[w] -= 1;
                    if out_deg[w] == 0 {
                        queue.push_back(w as u32);
                    }
                }
            }
        }

        let mut remap = vec![u32::MAX; n];
        let mut nodes = Vec::new();
        for i in 0..n {
            if alive[i] {
                remap[i] = nodes.len() as u32;
                nodes.push(self.nodes[i]);
            }
        }
        let edges = self
            .edges
            .iter()
            .filter(|&&(a, b)| alive[a as usize] && alive[b as usize])
            .map(|&(a, b)| (remap[a as usize], remap[b as usize]))
            .collect();
        DirectedEventGraph::from_parts(nodes, edges)
    }

    /// One undirected edge per unordered pair with at least one event.
    pub fn undirect(&self) -> SocialGraph {
        let mut pairs: Vec<(u32, u32)> = self
            .edges
            .iter()
            .map(|&(a, b)| (a.min(b), a.max(b)))
            .collect();
        pairs.sort_unstable();
        pairs.dedup();
        SocialGraph::from_index_edges(self.nodes.clone(), &pairs)
            .expect("loop-free deduplicated pairs form a simple graph")
    }
}

/// Induced subgraph on the largest connected component; equal-size
/// components are ranked by their smallest node id.
pub fn largest_connected_component(g: &SocialGraph) -> SocialGraph {
    if g.node_count() == 0 {
        return SocialGraph::empty();
    }
    let labels = g.components();
    let count = *labels.iter().max().unwrap() as usize + 1;
    let mut sizes = vec![0usize; count];
    for &l in &labels {
        sizes[l as usize] += 1;
    }
    // Labels are numbered by smallest member, so the first maximum wins ties.
    let best = (0..count).fold(0, |b, c| if sizes[c] > sizes[b] { c } else { b }) as u32;
    let mut i = 0;
    g.induced(|_| {
        let keep = labels[i] == best;
        i += 1;
        keep
    })
}

/// Keeps egos with purchases in at least `min_months` distinct months.
pub fn filter_active(ledger: &TransactionLedger, min_months: usize) -> Result<TransactionLedger> {
    if min_months == 0 {
        return Err(Error::Config("min_months must be at least 1".into()));
    }
    let keep: HashSet<EgoId> = ledger
        .by_ego()
        .filter(|(_, txs)| active_months(txs) >= min_months)
        .map(|(e, _)| e)
        .collect();
    Ok(ledger.retain_egos(|e| keep.contains(&e)))
}

/// Social graph, profiles and purchases of the egos present in both corpora.
#[derive(Debug, Clone)]
pub struct JoinedDataset {
    pub graph: SocialGraph,
    /// Sorted by id, aligned with `graph.nodes()`.
    pub profiles: Vec<EgoProfile>,
    pub ledger: TransactionLedger,
}

impl JoinedDataset {
    pub fn validate(&self) -> Result<()> {
        if !self.graph.is_connected() {
            return Err(Error::Invariant("joined social graph is not connected".into()));
        }
        let ids: Vec<EgoId> = self.profiles.iter().map(|p| p.id).collect();
        if ids != self.graph.nodes() {
            return Err(Error::Invariant(
                "joined profiles do not match the graph nodes".into(),
            ));
        }
        if self.ledger.egos() != self.graph.nodes() {
            return Err(Error::Invariant(
                "some joined egos lack transactions or the ledger holds egos outside the graph"
                    .into(),
            ));
        }
        Ok(())
    }
}

/// Intersects identifiers, induces the subgraph and keeps its largest
/// connected component. `profiles` must be sorted by id.
pub fn join_datasets(
    graph: &SocialGraph,
    profiles: &[EgoProfile],
    ledger: &TransactionLedger,
) -> Result<JoinedDataset> {
    let with_tx: HashSet<EgoId> = ledger.egos().into_iter().collect();
    let with_profile: HashSet<EgoId> = profiles.iter().map(|p| p.id).collect();
    let matched = graph
        .nodes()
        .iter()
        .filter(|id| with_tx.contains(id) && with_profile.contains(id))
        .count();
    if matched == 0 {
        return Err(Error::EmptyJoin(format!(
            "social graph ({} nodes), profiles ({}) and transactions ({} egos)",
            graph.node_count(),
            profiles.len(),
            with_tx.len()
        )));
    }
    let mut g = graph.induced(|id| with_tx.contains(&id) && with_profile.contains(&id));
    loop {
        let next = largest_connected_component(&g);
        if next.node_count() == g.node_count() {
            break;
        }
        g = next;
    }
    let keep: HashSet<EgoId> = g.nodes().iter().copied().collect();
    let joined = JoinedDataset {
        profiles: profiles
            .iter()
            .filter(|p| keep.contains(&p.id))
            .cloned()
            .collect(),
        ledger: ledger.retain_egos(|e| keep.contains(&e)),
        graph: g,
    };
    joined.validate()?;
    Ok(joined)
}
