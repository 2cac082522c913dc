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

//! Synthetic populations with planted structure.
//!
//! Generation runs in stages, each on its own seeded stream:
//!
//! 1. Wealth: monthly spending levels drawn from a Pareto law. Egos are
//!    ranked by wealth and cut into planted classes with the same equal-sum
//!    rule used by [`partition_classes`](crate::socioeco::partition_classes).
//! 2. Profiles: every planted class gets a preference point on the simplex
//!    of active groups; each ego mixes its class point (weight
//!    `profile_concentration`) with a private random point (weight 1).
//! 3. Edges: each ego draws `max(1, Poisson(mean_degree / 2))` stubs. With
//!    probability `homophily` the partner comes from the same or an adjacent
//!    planted class, otherwise from the whole population. When
//!    `partner_candidates > 1` the partner is then re-drawn inside the chosen
//!    class as the most similar (near classes) or most dissimilar (classes
//!    two or more apart) of that many candidates. The class mixing is set
//!    by `homophily` alone; the candidate choice only moves ties within a
//!    class.
//! 4. Ledger: active months, monthly totals and group splits around the
//!    ego profile, each group's money spent on one item of an ego-specific
//!    bundle of related categories. A trickle of small purchases goes to the
//!    inactive groups.
//! 5. Demographics: age rises with wealth rank, male share rises mildly.

use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal, Pareto, Poisson};

use crate::csvio;
use crate::error::{Error, Result};
use crate::ingestion::{InteractionEvent, InteractionKind};
use crate::model::{
    ClassId, EgoId, EgoProfile, Gender, GroupId, Money, Month, SocialGraph, Transaction,
    TransactionLedger,
};
use crate::seed::{self, Stream};
use crate::taxonomy::CategoryTaxonomy;

/// How class preference points are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProfileShape {
    /// Independent symmetric Dirichlet(1) point per class.
    Independent,
    /// Class preferences flatten with rank (entropy rises) and egos cluster
    /// tighter around them (dispersion falls).
    Monotone,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_egos: usize,
    pub pareto_shape: f64,
    pub n_classes_planted: usize,
    /// Probability that a tie stays within the same or an adjacent class.
    pub homophily: f64,
    pub mean_degree: f64,
    /// Weight of the class preference against an ego's private taste.
    pub profile_concentration: f64,
    pub months: u32,
    pub seed: u64,
    /// Candidates compared when placing a tie inside its target class; 1
    /// disables taste-based partner choice.
    pub partner_candidates: usize,
    pub profile_shape: ProfileShape,
    /// In [0, 1]: share of age variation explained by wealth rank.
    pub age_wealth_coupling: f64,
    /// Number of purchase groups (including cash) that receive regular spending.
    pub active_groups: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_egos: 10_000,
            pareto_shape: 2.0,
            n_classes_planted: 9,
            homophily: 0.8,
            mean_degree: 10.0,
            profile_concentration: 10.0,
            months: 8,
            seed: 1,
            partner_candidates: 8,
            profile_shape: ProfileShape::Independent,
            age_wealth_coupling: 0.6,
            active_groups: 17,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_egos < 2 {
            return bad(format!("n_egos must be at least 2, got {}", self.n_egos));
        }
        if !(self.pareto_shape > 0.0) {
            return bad(format!("pareto_shape must be positive, got {}", self.pareto_shape));
        }
        if self.n_classes_planted == 0 || self.n_classes_planted > self.n_egos {
            return bad(format!(
                "n_classes_planted must be in 1..={}, got {}",
                self.n_egos, self.n_classes_planted
            ));
        }
        if !(0.0..=1.0).contains(&self.homophily) {
            return bad(format!("homophily must be in [0, 1], got {}", self.homophily));
        }
        if !(self.mean_degree > 0.0) {
            return bad(format!("mean_degree must be positive, got {}", self.mean_degree));
        }
        if self.mean_degree >= self.n_egos as f64 {
            return bad(format!(
                "mean_degree {} is infeasible for {} egos",
                self.mean_degree, self.n_egos
            ));
        }
        if !(self.profile_concentration > 0.0) {
            return bad(format!(
                "profile_concentration must be positive, got {}",
                self.profile_concentration
            ));
        }
        if self.months == 0 {
            return bad("months must be at least 1".into());
        }
        if self.partner_candidates == 0 {
            return bad("partner_candidates must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.age_wealth_coupling) {
            return bad(format!(
                "age_wealth_coupling must be in [0, 1], got {}",
                self.age_wealth_coupling
            ));
        }
        if self.active_groups < 2 {
            return bad("active_groups must be at least 2".into());
        }
        Ok(())
    }
}

/// A generated population.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub graph: SocialGraph,
    /// Sorted by id.
    pub profiles: Vec<EgoProfile>,
    pub ledger: TransactionLedger,
    /// Sorted by id.
    pub planted: Vec<(EgoId, ClassId)>,
    /// Monthly spending level per ego, sorted by id.
    pub wealth: Vec<(EgoId, f64)>,
    /// Group preference profile per ego (over `groups`), sorted by id.
    pub profiles_by_group: Vec<(EgoId, Vec<f64>)>,
    /// Active groups, cash group first.
    pub groups: Vec<GroupId>,
    pub first_month: Month,
    seed: u64,
}

/// Pareto minimum monthly spending level.
const WEALTH_SCALE: f64 = 50.0;
/// Gamma shape of the month-to-month spending factor (mean 1).
const MONTH_SHAPE: f64 = 16.0;
const ACTIVE_MONTH_PROB: f64 = 0.92;
const TRICKLE_PROB: f64 = 0.05;
const TRICKLE_SHARE: f64 = 0.002;
const BUNDLE_SIZE: usize = 4;
const MAX_RETRIES: usize = 32;

fn by_id<T>(mut v: Vec<(EgoId, T)>) -> Vec<(EgoId, T)> {
    v.sort_by_key(|x| x.0);
    v
}

fn dirichlet(rng: &mut ChaCha8Rng, alpha: &[f64]) -> Vec<f64> {
    let mut v: Vec<f64> = alpha
        .iter()
        .map(|&a| Gamma::new(a, 1.0).unwrap().sample(rng))
        .collect();
    let s: f64 = v.iter().sum();
    if s > 0.0 {
        v.iter_mut().for_each(|x| *x /= s);
    } else {
        let k = v.len() as f64;
        v.iter_mut().for_each(|x| *x = 1.0 / k);
    }
    v
}

fn mix(class_point: &[f64], private: &[f64], concentration: f64) -> Vec<f64> {
    class_point
        .iter()
        .zip(private)
        .map(|(c, p)| (concentration * c + p) / (concentration + 1.0))
        .collect()
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Contiguous equal-sum class ranges over ascending wealth.
fn planted_ranges(sorted_wealth: &[f64], n: usize) -> Vec<std::ops::Range<usize>> {
    let total: f64 = sorted_wealth.iter().sum();
    let mut starts = vec![0usize];
    let mut running = 0.0;
    let mut class = 1;
    for (i, w) in sorted_wealth.iter().enumerate() {
        running += w;
        if class < n && running >= class as f64 * total / n as f64 {
            class += 1;
            starts.push(i + 1);
        }
    }
    while starts.len() < n {
        starts.push(sorted_wealth.len());
    }
    starts.push(sorted_wealth.len());
    starts.windows(2).map(|w| w[0]..w[1]).collect()
}

/// Groups that receive regular spending: the cash group, then the
/// lowest-numbered non-cash groups that have categories.
fn pick_active_groups(taxonomy: &CategoryTaxonomy, count: usize) -> Result<Vec<GroupId>> {
    let cash = taxonomy.cash_group();
    if taxonomy.members(cash).is_empty() {
        return Err(Error::InvalidInput("taxonomy cash group has no categories".into()));
    }
    let mut groups = vec![cash];
    groups.extend(
        taxonomy
            .groups()
            .map(|(g, _)| g)
            .filter(|&g| g != cash && !taxonomy.members(g).is_empty())
            .take(count - 1),
    );
    if groups.len() < 2 {
        return Err(Error::InvalidInput("taxonomy has no non-cash groups".into()));
    }
    Ok(groups)
}

pub fn generate(cfg: &SynthConfig, taxonomy: &CategoryTaxonomy) -> Result<SyntheticCorpus> {
    cfg.validate()?;
    let n = cfg.n_egos;
    let groups = pick_active_groups(taxonomy, cfg.active_groups)?;
    let k = groups.len();

    // Stage 1: wealth, ranked ascending; internal index = wealth rank.
    let mut rng = seed::rng(cfg.seed, Stream::Wealth, 0);
    let pareto = Pareto::new(WEALTH_SCALE, cfg.pareto_shape).unwrap();
    let mut wealth: Vec<f64> = (0..n).map(|_| pareto.sample(&mut rng)).collect();
    wealth.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut id_perm: Vec<u64> = (0..n as u64).collect();
    id_perm.shuffle(&mut rng);
    let ids: Vec<EgoId> = id_perm.iter().map(|&p| EgoId(100_000 + p)).collect();
    let ranges = planted_ranges(&wealth, cfg.n_classes_planted);
    let mut class_of = vec![0usize; n];
    for (c, r) in ranges.iter().enumerate() {
        for i in r.clone() {
            class_of[i] = c;
        }
    }

    // Stage 2: class preference points and ego profiles.
    let mut rng = seed::rng(cfg.seed, Stream::Profiles, 0);
    let nc = cfg.n_classes_planted;
    let ones = vec![1.0; k];
    let (class_points, class_conc): (Vec<Vec<f64>>, Vec<f64>) = match cfg.profile_shape {
        ProfileShape::Independent => (
            (0..nc).map(|_| dirichlet(&mut rng, &ones)).collect(),
            vec![cfg.profile_concentration; nc],
        ),
        ProfileShape::Monotone => {
            let sharp = dirichlet(&mut rng, &vec![0.3; k]);
            (0..nc)
                .map(|c| {
                    let t = if nc > 1 { c as f64 / (nc - 1) as f64 } else { 0.0 };
                    let flat = 0.9 * t;
                    let point = sharp
                        .iter()
                        .map(|s| (1.0 - flat) * s + flat / k as f64)
                        .collect();
                    (point, cfg.profile_concentration * (1.0 + 3.0 * t))
                })
                .unzip()
        }
    };
    let ego_profile: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let c = class_of[i];
            let private = dirichlet(&mut rng, &ones);
            mix(&class_points[c], &private, class_conc[c])
        })
        .collect();

    // Stage 3: edges.
    let edges = place_edges(cfg, &ranges, &class_of, &ego_profile)?;

    // Stage 4: purchases.
    let first_month = Month::new(2015, 1).unwrap();
    let ledger = build_ledger(cfg, taxonomy, &groups, &wealth, &ego_profile, &ids, first_month);

    // Stage 5: demographics.
    let mut rng = seed::rng(cfg.seed, Stream::Demographics, 0);
    let noise = Normal::new(0.0, 5.0).unwrap();
    let mut profiles: Vec<EgoProfile> = (0..n)
        .map(|i| {
            let rank = (i as f64 + 0.5) / n as f64;
            let u: f64 = rng.random();
            let c = cfg.age_wealth_coupling;
            let age = 18.0 + 50.0 * (c * rank + (1.0 - c) * u) + noise.sample(&mut rng);
            let p_male = 0.4 + 0.2 * rank;
            let gender = if rng.random_bool(0.02) {
                None
            } else if rng.random_bool(p_male) {
                Some(Gender::Male)
            } else {
                Some(Gender::Female)
            };
            EgoProfile {
                id: ids[i],
                age: age.round().clamp(18.0, 95.0) as u32,
                gender,
                zip: Some(format!("{:05}", 10_000 + rng.random_range(0..50u32) * 37)),
            }
        })
        .collect();
    profiles.sort_by_key(|p| p.id);

    let id_edges: Vec<(EgoId, EgoId)> = edges
        .iter()
        .map(|&(a, b)| (ids[a as usize], ids[b as usize]))
        .collect();
    let graph = SocialGraph::from_id_edges(ids.iter().copied(), &id_edges)?;

    Ok(SyntheticCorpus {
        graph,
        profiles,
        ledger,
        planted: by_id((0..n).map(|i| (ids[i], class_of[i] as ClassId + 1)).collect()),
        wealth: by_id((0..n).map(|i| (ids[i], wealth[i])).collect()),
        profiles_by_group: by_id((0..n).map(|i| (ids[i], ego_profile[i].clone())).collect()),
        groups,
        first_month,
        seed: cfg.seed,
    })
}

fn place_edges(
    cfg: &SynthConfig,
    ranges: &[std::ops::Range<usize>],
    class_of: &[usize],
    profile: &[Vec<f64>],
) -> Result<Vec<(u32, u32)>> {
    let n = class_of.len();
    let nc = ranges.len();
    let mut rng = seed::rng(cfg.seed, Stream::Edges, 0);
    let stubs = Poisson::new(cfg.mean_degree / 2.0).unwrap();
    let mut seen: HashSet<u64> = HashSet::new();
    let mut edges = Vec::new();
    let key = |a: usize, b: usize| ((a.min(b) as u64) << 32) | a.max(b) as u64;
    for u in 0..n {
        let count = (stubs.sample(&mut rng) as usize).max(1);
        let cu = class_of[u];
        // Band of the same and adjacent classes (contiguous in rank order).
        let lo = ranges[cu.saturating_sub(1)].start;
        let hi = ranges[(cu + 1).min(nc - 1)].end;
        for _ in 0..count {
            for _ in 0..MAX_RETRIES {
                let v0 = if rng.random_bool(cfg.homophily) {
                    rng.random_range(lo..hi)
                } else {
                    rng.random_range(0..n)
                };
                let cv = class_of[v0];
                let v = if cfg.partner_candidates > 1 {
                    let r = &ranges[cv];
                    let near = cv.abs_diff(cu) <= 1;
                    let mut best = v0;
                    let mut best_d = dist2(&profile[u], &profile[v0]);
                    for _ in 1..cfg.partner_candidates {
                        let c = rng.random_range(r.clone());
                        let d = dist2(&profile[u], &profile[c]);
                        if (near && d < best_d) || (!near && d > best_d) {
                            best = c;
                            best_d = d;
                        }
                    }
                    best
                } else {
                    v0
                };
                if v != u && seen.insert(key(u, v)) {
                    edges.push((u.min(v) as u32, u.max(v) as u32));
                    break;
                }
            }
        }
    }
    edges.sort_unstable();
    Ok(edges)
}

fn build_ledger(
    cfg: &SynthConfig,
    taxonomy: &CategoryTaxonomy,
    groups: &[GroupId],
    wealth: &[f64],
    profile: &[Vec<f64>],
    ids: &[EgoId],
    first_month: Month,
) -> TransactionLedger {
    let mut rng = seed::rng(cfg.seed, Stream::Ledger, 0);
    let k = groups.len();
    let members: Vec<Vec<u32>> = groups.iter().map(|&g| taxonomy.members(g)).collect();
    // Bundles: runs of consecutive codes within a group.
    let bundles: Vec<Vec<&[u32]>> = members
        .iter()
        .map(|m| m.chunks(BUNDLE_SIZE).collect())
        .collect();
    let active: HashSet<GroupId> = groups.iter().copied().collect();
    let trickle_pool: Vec<u32> = taxonomy
        .categories()
        .filter(|c| c.pcg.is_some_and(|g| !active.contains(&g)))
        .map(|c| c.mcc)
        .collect();
    let month_noise = Gamma::new(MONTH_SHAPE, 1.0 / MONTH_SHAPE).unwrap();
    let ones = vec![1.0; k];
    let mut txs = Vec::new();
    for i in 0..wealth.len() {
        // Ego-specific bundle per group, with a preferred item weighting.
        let picks: Vec<(&[u32], Vec<f64>)> = bundles
            .iter()
            .map(|b| {
                // Zipf-like bundle popularity.
                let weights: Vec<f64> = (0..b.len()).map(|r| 1.0 / (r + 1) as f64).collect();
                let total: f64 = weights.iter().sum();
                let mut x = rng.random::<f64>() * total;
                let mut chosen = b.len() - 1;
                for (j, w) in weights.iter().enumerate() {
                    if x < *w {
                        chosen = j;
                        break;
                    }
                    x -= w;
                }
                let items = b[chosen];
                let w = dirichlet(&mut rng, &vec![1.0; items.len()]);
                (items, w)
            })
            .collect();
        let mut months: Vec<u32> = (0..cfg.months)
            .filter(|_| rng.random_bool(ACTIVE_MONTH_PROB))
            .collect();
        if months.is_empty() {
            months.push(rng.random_range(0..cfg.months));
        }
        for m in months {
            let month = first_month.offset(m as i32);
            let total = wealth[i] * month_noise.sample(&mut rng);
            let split = mix(&profile[i], &dirichlet(&mut rng, &ones), cfg.profile_concentration);
            for (g, share) in split.iter().enumerate() {
                let (items, w) = &picks[g];
                let mut x: f64 = rng.random();
                let mut item = items[items.len() - 1];
                for (j, wj) in w.iter().enumerate() {
                    if x < *wj {
                        item = items[j];
                        break;
                    }
                    x -= wj;
                }
                let amount = Money::from_f64(total * share);
                if !amount.is_zero() {
                    txs.push(Transaction {
                        ego: ids[i],
                        month,
                        mcc: item,
                        amount,
                    });
                }
            }
            if !trickle_pool.is_empty() && rng.random_bool(TRICKLE_PROB) {
                let mcc = trickle_pool[rng.random_range(0..trickle_pool.len())];
                let amount = Money::from_f64(total * TRICKLE_SHARE);
                if !amount.is_zero() {
                    txs.push(Transaction {
                        ego: ids[i],
                        month,
                        mcc,
                        amount,
                    });
                }
            }
        }
    }
    TransactionLedger::new(txs)
}

impl SyntheticCorpus {
    /// Interaction log consistent with the graph: every tie carries events in
    /// both directions, plus one-way events from service numbers that the
    /// inactivity pruning removes.
    pub fn interactions(&self) -> Vec<InteractionEvent> {
        let mut rng = seed::rng(self.seed, Stream::Interactions, 0);
        let extra = Poisson::new(1.0).unwrap();
        let start = 1_420_070_400i64; // 2015-01-01T00:00:00Z
        let span = 30 * 86_400 * 8;
        let event = |rng: &mut ChaCha8Rng, a: EgoId, b: EgoId| {
            let call = rng.random_bool(0.7);
            InteractionEvent {
                caller: a,
                callee: b,
                timestamp: start + rng.random_range(0..span),
                kind: if call { InteractionKind::Call } else { InteractionKind::Sms },
                duration: if call { rng.random_range(1..600) } else { 0 },
            }
        };
        let mut events = Vec::new();
        for (a, b) in self.graph.id_edges() {
            for (x, y) in [(a, b), (b, a)] {
                for _ in 0..1 + extra.sample(&mut rng) as usize {
                    events.push(event(&mut rng, x, y));
                }
            }
        }
        let nodes = self.graph.nodes();
        let services = (nodes.len() / 1000).max(1);
        for s in 0..services {
            let caller = EgoId(900_000_000 + s as u64);
            for _ in 0..20 {
                let callee = nodes[rng.random_range(0..nodes.len())];
                events.push(event(&mut rng, caller, callee));
            }
        }
        events.sort_by_key(|e| (e.timestamp, e.caller, e.callee));
        events
    }

    pub fn planted_class(&self, ego: EgoId) -> Option<ClassId> {
        self.planted
            .binary_search_by_key(&ego, |p| p.0)
            .ok()
            .map(|i| self.planted[i].1)
    }

    /// Writes `interactions.csv`, `transactions.csv`, `profiles.csv` and
    /// `planted_classes.csv` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        crate::ingestion::write_interactions(dir.join("interactions.csv"), &self.interactions())?;
        crate::ingestion::write_transactions(dir.join("transactions.csv"), &self.ledger)?;
        crate::ingestion::write_profiles(dir.join("profiles.csv"), &self.profiles)?;
        let path = dir.join("planted_classes.csv");
        let mut w = csvio::writer(&path)?;
        w.write_record(["ego_id", "class"])?;
        for (e, c) in &self.planted {
            w.write_record([e.to_string(), c.to_string()])?;
        }
        csvio::finish(w, &path)
    }
}

/// Pearson correlation of planted class indices across edge endpoints
/// (each edge counted in both orientations).
pub fn class_assortativity(graph: &SocialGraph, class_of: impl Fn(EgoId) -> ClassId) -> f64 {
    let (mut sx, mut sxx, mut sxy, mut m) = (0.0, 0.0, 0.0, 0.0);
    for (a, b) in graph.id_edges() {
        let (x, y) = (class_of(a) as f64, class_of(b) as f64);
        sx += x + y;
        sxx += x * x + y * y;
        sxy += 2.0 * x * y;
        m += 2.0;
    }
    let mean = sx / m;
    let var = sxx / m - mean * mean;
    if var <= 0.0 {
        return 0.0;
    }
    (sxy / m - mean * mean) / var
}
