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

//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use std::time::Instant;

use conspat_core::consumption::{
    class_dispersion, class_distance_matrix, class_vector_stats, entropy, group_spending_shares,
    spending_vectors, EgoVectors,
};
use conspat_core::correlation::{correlation_matrix, purchase_distributions};
use conspat_core::demographics::{afs, pearson};
use conspat_core::kmeans::{kmeans, kmeans_select, planted_blobs, KMeansConfig, SelectionConfig};
use conspat_core::louvain::{exhaustive_optimum, louvain, LouvainConfig, WeightedGraph};
use conspat_core::nullmodel::{edge_swap_randomize, l_ratio, LRatioResult, NodeValues, SwapPlan};
use conspat_core::pipeline::{Pipeline, RunConfig};
use conspat_core::seed::{self, Stream};
use conspat_core::socioeco::{compute_amp, partition_classes, ClassPartition};
use conspat_core::synthgen::{generate, ProfileShape, SynthConfig, SyntheticCorpus};
use conspat_core::{CategoryTaxonomy, EgoId, PurchaseDistribution, SocialGraph, Variant};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

struct Outcome {
    failed: usize,
}

impl Outcome {
    fn line(&mut self, id: &str, ok: bool, detail: String) {
        println!("{} {id}: {detail}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            self.failed += 1;
        }
    }
}

fn corpus(cfg: SynthConfig) -> SyntheticCorpus {
    generate(&cfg, &CategoryTaxonomy::bundled()).unwrap()
}

/// Classes, ex-cash vectors and the graph induced on egos having both.
struct Prepared {
    partition: ClassPartition,
    vectors: EgoVectors,
    graph: SocialGraph,
}

fn prepare(c: &SyntheticCorpus, partition: ClassPartition) -> Prepared {
    let tax = CategoryTaxonomy::bundled();
    let matrix = group_spending_shares(&c.ledger, &partition, &tax).unwrap();
    let vectors = spending_vectors(&c.ledger, &tax, &matrix.retained(), Variant::ExcludingCash);
    let graph = c
        .graph
        .induced(|e| vectors.index_of(e).is_some() && partition.class_of(e).is_some());
    Prepared {
        partition,
        vectors,
        graph,
    }
}

fn amp_partition(c: &SyntheticCorpus, n: usize) -> ClassPartition {
    partition_classes(&compute_amp(&c.ledger).unwrap(), n).unwrap()
}

fn planted_partition(c: &SyntheticCorpus, n: usize) -> ClassPartition {
    ClassPartition::from_assignment(n, c.planted.clone(), None).unwrap()
}

fn run_l(p: &Prepared, values: &NodeValues, replicas: usize, seed: u64) -> LRatioResult {
    let plan = SwapPlan {
        swap_multiplier: 5,
        replicas,
        seed,
    };
    l_ratio(&p.graph, values, p.vectors.width(), true, &plan).unwrap()
}

fn equal_sum_partition(out: &mut Outcome) {
    let c = corpus(SynthConfig {
        n_egos: 10_000,
        seed: 11,
        ..SynthConfig::default()
    });
    let start = Instant::now();
    let amp = compute_amp(&c.ledger).unwrap();
    let part = partition_classes(&amp, 9).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let max_p = amp.entries().iter().map(|e| e.amp).fold(0.0, f64::max);
    let target = amp.total() / 9.0;
    let worst = part
        .classes()
        .iter()
        .map(|i| (i.amp_sum - target).abs())
        .fold(0.0, f64::max);
    let means: Vec<f64> = part.classes().iter().map(|i| i.mean_amp.unwrap()).collect();
    let ordered = means.windows(2).all(|w| w[0] <= w[1]);
    let scaled = partition_classes(&amp.scaled(37.5), 9).unwrap();
    let invariant = scaled.assignment() == part.assignment();
    out.line(
        "1 equal-sum partition",
        worst <= max_p && ordered && invariant && secs < 5.0,
        format!(
            "max |class sum - total/9| = {worst:.1} <= max P_u = {max_p:.1}; \
             means ordered {ordered}; rescale-invariant {invariant}; {secs:.2}s"
        ),
    );
}

fn is_simple(g: &SocialGraph) -> bool {
    let mut seen = HashSet::new();
    g.edges().all(|(a, b)| a != b && seen.insert((a.min(b), a.max(b))))
}

/// Whole ego records (vector, cash share and class) permuted across nodes,
/// so nothing about an ego depends on where it sits in the graph.
fn shuffled_values(p: &Prepared, seed: u64) -> NodeValues {
    let base = p.vectors.node_values(&p.graph, &p.partition, true).unwrap();
    let n = base.nodes();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed, Stream::Shuffle, 0));
    let values = order.iter().flat_map(|&i| base.row(i).to_vec()).collect();
    let class = order.iter().map(|&i| base.class(i) as u16).collect();
    NodeValues::new(base.width(), values, class, base.n_classes()).unwrap()
}

fn null_soundness(out: &mut Outcome) {
    let c = corpus(SynthConfig {
        n_egos: 10_000,
        seed: 12,
        ..SynthConfig::default()
    });
    let g = &c.graph;
    let start = Instant::now();
    let degrees = g.degrees();
    let plan = SwapPlan {
        swap_multiplier: 5,
        replicas: 100,
        seed: 12,
    };
    let mut preserved = true;
    let mut simple = true;
    for r in 0..plan.replicas {
        let o = edge_swap_randomize(g, &plan, r).unwrap();
        preserved &= o.graph.degrees() == degrees && o.graph.nodes() == g.nodes();
        simple &= is_simple(&o.graph);
    }
    let secs = start.elapsed().as_secs_f64();
    out.line(
        "2a null model degrees and simplicity",
        preserved && simple && secs < 120.0,
        format!(
            "{} nodes, {} edges, 100 replicas: degrees preserved {preserved}, simple {simple}; {secs:.1}s",
            g.node_count(),
            g.edge_count()
        ),
    );

    let p = prepare(&c, amp_partition(&c, 9));
    let start = Instant::now();
    // Per class pair: (seeds defined, seeds within 3 null sd).
    let mut cover: BTreeMap<(usize, usize), (usize, usize)> = BTreeMap::new();
    let mut clean_seeds = 0;
    let mut worst_z: f64 = 0.0;
    for s in 1..=20u64 {
        let res = run_l(&p, &shuffled_values(&p, s), 100, s);
        let mut all_in = true;
        for st in res.null_stats() {
            if let (Some(l), Some(sd)) = (st.l_sv, st.null_sd) {
                let z = (l - 1.0).abs() / sd;
                worst_z = worst_z.max(z);
                let e = cover.entry((st.class_i, st.class_j)).or_insert((0, 0));
                e.0 += 1;
                e.1 += usize::from(z <= 3.0);
                all_in &= z <= 3.0;
            }
        }
        clean_seeds += usize::from(all_in);
    }
    let secs = start.elapsed().as_secs_f64();
    let worst_cover = cover
        .values()
        .map(|&(n, ok)| ok as f64 / n as f64)
        .fold(1.0, f64::min);
    println!("INFO 2b seeds with all {} entries within 3 null sd: {clean_seeds}/20", cover.len());
    out.line(
        "2b null model calibration",
        !cover.is_empty() && worst_cover >= 0.95,
        format!(
            "shuffled ego records, 20 seeds: every L_SV entry within 3 null sd of 1 in >= {:.0}% \
             of seeds (largest z {worst_z:.2}); {secs:.1}s",
            100.0 * worst_cover
        ),
    );
}

fn homophily_detection(out: &mut Outcome) {
    let start = Instant::now();
    let mut good = 0;
    let mut diag_counts = Vec::new();
    let mut far_l = Vec::new();
    for s in 1..=20u64 {
        let c = corpus(SynthConfig {
            n_egos: 10_000,
            homophily: 0.8,
            profile_concentration: 10.0,
            profile_shape: ProfileShape::Monotone,
            seed: 100 + s,
            ..SynthConfig::default()
        });
        let p = prepare(&c, amp_partition(&c, 9));
        let values = p.vectors.node_values(&p.graph, &p.partition, true).unwrap();
        let lsv = run_l(&p, &values, 20, s).l_sv_matrix();
        let n = lsv.len();
        let diag = (0..n).filter(|&i| lsv[i][i].is_some_and(|v| v < 1.0)).count();
        let d = &class_distance_matrix(&class_vector_stats(&p.vectors, &p.partition).means());
        let max_d = (0..n)
            .flat_map(|i| (i + 1..n).filter_map(move |j| d[i][j]))
            .fold(0.0, f64::max);
        let far: Vec<f64> = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .filter(|&(i, j)| d[i][j] == Some(max_d))
            .map(|(i, j)| lsv[i][j].unwrap_or(f64::NAN))
            .collect();
        let far_ok = !far.is_empty() && far.iter().all(|&v| v > 1.0);
        diag_counts.push(diag);
        far_l.push(far.iter().copied().fold(f64::INFINITY, f64::min));
        good += usize::from(diag >= 8 && far_ok);
    }
    let secs = start.elapsed().as_secs_f64();
    out.line(
        "3 homophily detection",
        good >= 16,
        format!(
            "diagonal < 1 for >= 8 of 9 and max-distance pair > 1 in {good}/20 seeds \
             (diagonal counts {diag_counts:?}; max-distance L_SV {:?}); {secs:.1}s",
            far_l.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>()
        ),
    );
}

fn random_distributions(n_egos: usize, n_cat: usize, seed: u64) -> Vec<PurchaseDistribution> {
    let tax = CategoryTaxonomy::bundled();
    let cats: Vec<u32> = tax
        .categories()
        .filter(|c| !tax.is_cash(c.mcc))
        .map(|c| c.mcc)
        .take(n_cat)
        .collect();
    assert_eq!(cats.len(), n_cat);
    let mut rng = seed::rng(seed, Stream::Shuffle, 1);
    (0..n_egos)
        .map(|u| {
            let k = rng.random_range(1..=12);
            let mut picks: Vec<u32> = cats.choose_multiple(&mut rng, k).copied().collect();
            picks.sort_unstable();
            let w: Vec<f64> = picks.iter().map(|_| rng.random::<f64>() + 0.01).collect();
            let t: f64 = w.iter().sum();
            let entries = picks.into_iter().zip(w.iter().map(|x| x / t)).collect();
            PurchaseDistribution::new(EgoId(u as u64), entries, &tax).unwrap()
        })
        .collect()
}

fn rho_oracle(out: &mut Outcome) {
    let dists = random_distributions(500, 50, 4);
    let m = correlation_matrix(&dists).unwrap();
    let cats = m.categories().to_vec();
    let n = dists.len() as f64;
    let dense: Vec<Vec<f64>> = dists
        .iter()
        .map(|d| cats.iter().map(|&c| d.share(c)).collect())
        .collect();
    let mut worst: f64 = 0.0;
    let mut symmetric = true;
    for (i, &a) in cats.iter().enumerate() {
        for (j, &b) in cats.iter().enumerate() {
            let num: f64 = dense.iter().map(|row| row[i] * row[j]).sum();
            let sa: f64 = dense.iter().map(|row| row[i]).sum();
            let sb: f64 = dense.iter().map(|row| row[j]).sum();
            let expect = n * num / (sa * sb);
            let got = m.rho(a, b).unwrap();
            worst = worst.max((got - expect).abs());
            symmetric &= m.rho(b, a).unwrap().to_bits() == got.to_bits();
        }
    }
    let same: Vec<PurchaseDistribution> = (0..300)
        .map(|u| PurchaseDistribution::new(EgoId(u), dists[0].entries().to_vec(), &CategoryTaxonomy::bundled()).unwrap())
        .collect();
    let ms = correlation_matrix(&same).unwrap();
    let ones = ms.entries().iter().map(|e| (e.rho - 1.0).abs()).fold(0.0, f64::max);
    out.line(
        "4 rho oracle",
        cats.len() == 50 && worst <= 1e-12 && symmetric && ones <= 1e-12,
        format!(
            "500 egos x {} categories: max |sparse - dense| = {worst:.2e}; symmetric {symmetric}; \
             identical corpus max |rho - 1| = {ones:.2e}",
            cats.len()
        ),
    );
}

fn entropy_dispersion(out: &mut Outcome) {
    let ln16 = 16f64.ln();
    let mut in_bounds = true;
    let mut sigma = Vec::new();
    for conc in [1.0, 10.0, 100.0, 1e3, 1e4] {
        let c = corpus(SynthConfig {
            n_egos: 3000,
            profile_concentration: conc,
            seed: 21,
            ..SynthConfig::default()
        });
        for part in [amp_partition(&c, 9), planted_partition(&c, 9)] {
            let p = prepare(&c, part);
            let stats = class_vector_stats(&p.vectors, &p.partition);
            for s in stats.classes.iter().filter_map(|s| s.entropy) {
                in_bounds &= (0.0..=ln16 + 1e-12).contains(&s);
            }
        }
        let p = prepare(&c, planted_partition(&c, 9));
        let worst = class_dispersion(&p.vectors, &p.partition)
            .into_iter()
            .flatten()
            .fold(0.0, f64::max);
        sigma.push(worst);
    }
    let mut one_hot = vec![0.0; 16];
    one_hot[3] = 1.0;
    let single = entropy(&one_hot);
    let uniform = entropy(&[1.0 / 16.0; 16]);
    let decreasing = sigma.windows(2).all(|w| w[1] < w[0]);
    let last = *sigma.last().unwrap();
    out.line(
        "5 entropy and dispersion",
        in_bounds && single == 0.0 && (uniform - ln16).abs() < 1e-12 && decreasing && last < 0.01,
        format!(
            "0 <= S <= ln 16 on every class {in_bounds}; single group S = {single}, uniform S = {uniform:.6}; \
             max class sigma by concentration 1..1e4 = {:?}",
            sigma.iter().map(|s| format!("{s:.4}")).collect::<Vec<_>>()
        ),
    );
    single_group_class(out);
}

fn single_group_class(out: &mut Outcome) {
    use conspat_core::{Money, Month, Transaction, TransactionLedger};
    let tax = CategoryTaxonomy::bundled();
    let g = tax.groups().map(|(g, _)| g).find(|&g| g != tax.cash_group()).unwrap();
    let mcc = tax.members(g)[0];
    let txs = (0..5u64)
        .map(|u| Transaction {
            ego: EgoId(u),
            month: Month::new(2024, 1).unwrap(),
            mcc,
            amount: Money::from_cents(1000 + 250 * u as i64),
        })
        .collect();
    let ledger = TransactionLedger::new(txs);
    let part = ClassPartition::from_assignment(1, (0..5).map(|u| (EgoId(u), 1)).collect::<Vec<_>>(), None).unwrap();
    let matrix = group_spending_shares(&ledger, &part, &tax).unwrap();
    let vectors = spending_vectors(&ledger, &tax, &matrix.retained(), Variant::ExcludingCash);
    let stats = class_vector_stats(&vectors, &part);
    let s = stats.classes[0].entropy.unwrap();
    let sd = stats.classes[0].dispersion.unwrap();
    out.line(
        "5 single-group class",
        s == 0.0 && sd == 0.0,
        format!("S = {s}, sigma = {sd}"),
    );
}

fn wg(n: usize, edges: &[(usize, usize, f64)]) -> WeightedGraph {
    WeightedGraph::from_edges(n, edges.iter().copied()).unwrap()
}

fn clique(nodes: &[usize], w: f64) -> Vec<(usize, usize, f64)> {
    let mut e = Vec::new();
    for (x, &a) in nodes.iter().enumerate() {
        for &b in &nodes[x + 1..] {
            e.push((a, b, w));
        }
    }
    e
}

fn small_graphs() -> Vec<(String, WeightedGraph)> {
    let mut out = Vec::new();
    for n in 2..=8 {
        out.push((format!("K{n}"), wg(n, &clique(&(0..n).collect::<Vec<_>>(), 1.0))));
        out.push((format!("path{n}"), wg(n, &(1..n).map(|i| (i - 1, i, 1.0)).collect::<Vec<_>>())));
        out.push((format!("star{n}"), wg(n, &(1..n).map(|i| (0, i, 1.0)).collect::<Vec<_>>())));
    }
    for n in 3..=8 {
        out.push((format!("cycle{n}"), wg(n, &(0..n).map(|i| (i, (i + 1) % n, 1.0)).collect::<Vec<_>>())));
    }
    for bridge in [0.05, 0.1, 0.5, 1.0] {
        let mut e = clique(&[0, 1, 2], 1.0);
        e.extend(clique(&[3, 4, 5], 1.0));
        e.push((2, 3, bridge));
        out.push((format!("two-triangles/{bridge}"), wg(6, &e)));
        let mut e = clique(&[0, 1, 2, 3], 1.0);
        e.extend(clique(&[4, 5, 6, 7], 1.0));
        e.push((3, 4, bridge));
        out.push((format!("barbell4/{bridge}"), wg(8, &e)));
    }
    let mut e = clique(&[0, 1, 2], 2.0);
    e.extend(clique(&[3, 4, 5, 6], 1.0));
    e.extend([(2, 3, 0.3), (0, 7, 0.2), (7, 6, 0.2)]);
    out.push(("weighted-mixed".into(), wg(8, &e)));
    out
}

fn louvain_small(out: &mut Outcome) {
    let graphs = small_graphs();
    let mut missed = Vec::new();
    let mut above = false;
    for (name, g) in &graphs {
        let r = louvain(g, &LouvainConfig::default());
        let (opt, _) = exhaustive_optimum(g);
        above |= r.modularity > opt + 1e-9;
        if opt - r.modularity > 1e-9 {
            missed.push(format!("{name} ({:.4} vs {opt:.4})", r.modularity));
        }
    }
    println!("INFO 6 small graphs below the optimum: {missed:?}");

    let mut rng = seed::rng(6, Stream::Shuffle, 6);
    let (mut miss, mut total) = (0, 0);
    for _ in 0..2000 {
        let n = rng.random_range(2..=8);
        let m = rng.random_range(1..20);
        let edges: Vec<(usize, usize, f64)> = (0..m)
            .map(|_| (rng.random_range(0..n), rng.random_range(0..n), rng.random_range(0.1..3.0)))
            .filter(|e| e.0 != e.1)
            .collect();
        if edges.is_empty() {
            continue;
        }
        let g = wg(n, &edges);
        total += 1;
        if exhaustive_optimum(&g).0 - louvain(&g, &LouvainConfig::default()).modularity > 1e-9 {
            miss += 1;
        }
    }
    println!("INFO 6 random graphs (<= 8 nodes) below the optimum: {miss}/{total}");

    out.line(
        "6 louvain small graphs",
        !above && missed.len() <= 1,
        format!("{} graphs, never above the optimum, {} below it", graphs.len(), missed.len()),
    );

    let mut nondecreasing = true;
    let mut levels = 0;
    for s in 0..50u64 {
        let mut rng = seed::rng(s, Stream::Shuffle, 7);
        let n = 200;
        let edges: Vec<(usize, usize, f64)> = (0..800)
            .map(|_| {
                let a = rng.random_range(0..n);
                // Planted blocks of 20 with some cross links.
                let b = if rng.random_bool(0.8) {
                    a / 20 * 20 + rng.random_range(0..20)
                } else {
                    rng.random_range(0..n)
                };
                (a, b, rng.random_range(0.5..2.0))
            })
            .filter(|e| e.0 != e.1)
            .collect();
        let r = louvain(&wg(n, &edges), &LouvainConfig { seed: Some(s), runs: 4 });
        levels = levels.max(r.level_modularity.len());
        nondecreasing &= r.level_modularity.windows(2).all(|w| w[1] >= w[0] - 1e-12);
    }
    out.line(
        "6 louvain levels",
        nondecreasing,
        format!("modularity non-decreasing across levels on 50 graphs of 200 nodes (up to {levels} levels)"),
    );
}

fn kmeans_selection(out: &mut Outcome) {
    let start = Instant::now();
    let mut ok = true;
    let mut detail = Vec::new();
    let mut monotone = true;
    for k_true in [3, 5, 15] {
        let mut hits = 0;
        for s in 1..=20u64 {
            let (pts, _) = planted_blobs(k_true, 30, 3, 0.25, 10.0, 2.0, s).unwrap();
            let r = kmeans_select(&pts, &SelectionConfig { seed: s, ..SelectionConfig::default() }).unwrap();
            let votes = [r.best_db, r.best_ch, Some(r.best_gap)]
                .iter()
                .filter(|&&k| k == Some(k_true))
                .count();
            hits += usize::from(votes >= 2);
            let fit = kmeans(&pts, k_true, &KMeansConfig { seed: s, ..KMeansConfig::default() }).unwrap();
            monotone &= fit.trace.windows(2).all(|w| w[1] <= w[0]);
        }
        ok &= hits >= 16;
        detail.push(format!("k={k_true}: {hits}/20"));
    }
    let secs = start.elapsed().as_secs_f64();
    out.line(
        "7 k-means selection",
        ok && monotone,
        format!(
            "two of three criteria pick k_true: {}; inertia non-increasing {monotone}; {secs:.1}s",
            detail.join(", ")
        ),
    );
}

/// Weighted feature average straight from the definition.
fn oracle_feature(buyers: &[(f64, u32)]) -> f64 {
    let mut values: Vec<u32> = buyers.iter().map(|b| b.1).collect();
    values.sort_unstable();
    values.dedup();
    let mut num = 0.0;
    let mut den = 0.0;
    for v in values {
        let rs: Vec<f64> = buyers.iter().filter(|b| b.1 == v).map(|b| b.0).collect();
        let alpha = rs.iter().sum::<f64>() / rs.len() as f64;
        num += alpha * v as f64;
        den += alpha;
    }
    num / den
}

fn afs_checks(out: &mut Outcome) {
    let tax = CategoryTaxonomy::bundled();
    let c = corpus(SynthConfig {
        n_egos: 1000,
        seed: 31,
        ..SynthConfig::default()
    });
    let part = amp_partition(&c, 9);
    let dists = purchase_distributions(&c.ledger, &tax, 5).items;
    let set = afs(&dists, &c.profiles, &part);
    let profile: BTreeMap<EgoId, _> = c.profiles.iter().map(|p| (p.id, p)).collect();
    let mut by_cat: BTreeMap<u32, Vec<(f64, u32, u32, u32)>> = BTreeMap::new();
    for d in &dists {
        let p = profile[&d.ego()];
        let (Some(g), Some(cl)) = (p.gender, part.class_of(d.ego())) else {
            continue;
        };
        for &(m, r) in d.entries() {
            by_cat
                .entry(m)
                .or_default()
                .push((r, p.age, u32::from(g.code()), u32::from(cl)));
        }
    }
    let mut worst: f64 = 0.0;
    let mut matched = 0;
    for (m, buyers) in &by_cat {
        let got = set.get(*m).unwrap();
        let age = oracle_feature(&buyers.iter().map(|b| (b.0, b.1)).collect::<Vec<_>>());
        let gender = oracle_feature(&buyers.iter().map(|b| (b.0, b.2)).collect::<Vec<_>>());
        let seg = oracle_feature(&buyers.iter().map(|b| (b.0, b.3)).collect::<Vec<_>>());
        worst = worst
            .max((got.age - age).abs())
            .max((got.gender - gender).abs())
            .max((got.seg - seg).abs());
        matched += 1;
    }
    out.line(
        "8 AFS oracle",
        matched == set.len() && matched > 0 && worst <= 1e-12,
        format!("{matched} categories on 1000 egos: max |afs - oracle| = {worst:.2e}"),
    );

    let c = corpus(SynthConfig {
        n_egos: 10_000,
        seed: 32,
        ..SynthConfig::default()
    });
    let part = amp_partition(&c, 9);
    let dists = purchase_distributions(&c.ledger, &tax, 100).items;
    let set = afs(&dists, &c.profiles, &part);
    let p = pearson(&set.ages(), &set.segs()).unwrap();
    out.line(
        "8 age-SEG coupling",
        p.r > 0.0 && p.p < 0.01,
        format!("{} categories: Pearson r = {:.3}, p = {:.2e}", p.n, p.r, p.p),
    );
}

fn read_dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

fn determinism(out: &mut Outcome) {
    let root = tempfile::tempdir().unwrap();
    let input = root.path().join("corpus");
    let mut gen = RunConfig::default();
    gen.set("out_dir", input.to_str().unwrap()).unwrap();
    gen.set("n_egos", "10000").unwrap();
    gen.set("seed", "41").unwrap();
    Pipeline::new(gen).unwrap().run(conspat_core::pipeline::Stage::Generate).unwrap();
    let mut runs = Vec::new();
    let mut worst = 0.0f64;
    for name in ["a", "b"] {
        let mut cfg = RunConfig::default();
        cfg.set("input_dir", input.to_str().unwrap()).unwrap();
        cfg.set("out_dir", root.path().join(name).to_str().unwrap()).unwrap();
        cfg.set("seed", "41").unwrap();
        cfg.svg = true;
        let start = Instant::now();
        Pipeline::new(cfg).unwrap().run_all().unwrap();
        worst = worst.max(start.elapsed().as_secs_f64());
        runs.push(read_dir_bytes(&root.path().join(name)));
    }
    let same = runs[0] == runs[1];
    out.line(
        "9 determinism",
        same && runs[0].len() > 10 && worst < 300.0,
        format!(
            "two `all` runs on 10000 egos: {} artifacts byte-identical {same}; slowest run {worst:.1}s",
            runs[0].len()
        ),
    );
}

fn main() {
    let mut out = Outcome { failed: 0 };
    equal_sum_partition(&mut out);
    null_soundness(&mut out);
    homophily_detection(&mut out);
    rho_oracle(&mut out);
    entropy_dispersion(&mut out);
    louvain_small(&mut out);
    kmeans_selection(&mut out);
    afs_checks(&mut out);
    determinism(&mut out);
    if out.failed > 0 {
        println!("{} acceptance checks failed", out.failed);
        std::process::exit(1);
    }
}
