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

//! Run configuration and the staged analysis pipeline.
//!
//! Each stage writes its own CSV artifacts into the output directory and
//! merges a summary section into `report.json`. Stages recompute what they
//! depend on from the input corpus, so any stage can run on its own; within
//! one [`Pipeline`] intermediate results are computed once.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::{info, warn};
use serde_json::{json, Map, Value};

use crate::consumption::{
    self, class_distance_matrix, class_scalar_distance, class_vector_stats, group_spending_shares,
    spending_vectors, ClassVectorStats, EgoVectors, GroupSpendingMatrix, RetainedGroups,
};
use crate::correlation::{
    self, build_graph, correlation_matrix, default_min_common, louvain_communities,
    purchase_distributions, CategoryGraph, Communities, CorrelationMatrix, Distributions,
};
use crate::demographics::{afs, community_afs, feature_correlations, CategoryFeatureSet, Pearson};
use crate::error::{Error, Result};
use crate::ingestion::{self, filter_active, join_datasets, DirectedEventGraph, JoinedDataset};
use crate::kmeans::{kmeans_select, SelectionConfig, DEFAULT_GAP_REFERENCES, DEFAULT_RESTARTS};
use crate::model::{EgoProfile, SocialGraph, TransactionLedger, Variant};
use crate::nullmodel::{l_ratio, LRatioResult, SwapPlan};
use crate::socioeco::{
    compute_amp, cumulative_curve, gini_from_curve, partition_classes, write_curve, AmpTable,
    ClassPartition,
};
use crate::svg;
use crate::synthgen::{self, ProfileShape, SynthConfig};
use crate::taxonomy::CategoryTaxonomy;

pub const REPORT_FILE: &str = "report.json";
pub const REPORT_VERSION: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Generate,
    Ingest,
    Classes,
    Consumption,
    NullModel,
    Categories,
    Communities,
    Demographics,
    Report,
}

impl Stage {
    /// Stages run by `all`, in order.
    pub const ANALYSIS: [Stage; 8] = [
        Stage::Ingest,
        Stage::Classes,
        Stage::Consumption,
        Stage::NullModel,
        Stage::Categories,
        Stage::Communities,
        Stage::Demographics,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Generate => "generate",
            Stage::Ingest => "ingest",
            Stage::Classes => "classes",
            Stage::Consumption => "consumption",
            Stage::NullModel => "nullmodel",
            Stage::Categories => "categories",
            Stage::Communities => "communities",
            Stage::Demographics => "demographics",
            Stage::Report => "report",
        }
    }

    /// Artifact files written by the stage (SVG figures excluded).
    pub fn artifacts(self) -> &'static [&'static str] {
        match self {
            Stage::Generate => &["interactions.csv", "transactions.csv", "profiles.csv", "planted_classes.csv"],
            Stage::Ingest => &["social_edges.csv"],
            Stage::Classes => &["classes.csv", "curve.csv"],
            Stage::Consumption => &[
                "r_matrix.csv",
                "sv_class_means_ex-cash.csv",
                "sv_class_means_inc-cash.csv",
                "d_matrix_ex-cash.csv",
                "d_matrix_inc-cash.csv",
                "d_matrix_k1.csv",
                "dispersion_entropy_ex-cash.csv",
                "dispersion_entropy_inc-cash.csv",
            ],
            Stage::NullModel => &["L_sv.csv", "L_k1.csv", "null_stats.csv"],
            Stage::Categories => &["rho_matrix.csv", "graph_edges.csv"],
            Stage::Communities => &["communities.csv"],
            Stage::Demographics => &["afs.csv", "clusters.csv", "selection.csv", "community_afs.csv"],
            Stage::Report => &["summary.md"],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Stage::Generate]
            .into_iter()
            .chain(Stage::ANALYSIS)
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub input_dir: PathBuf,
    pub out_dir: PathBuf,
    /// Taxonomy CSV; the bundled table when absent.
    pub taxonomy: Option<PathBuf>,
    pub seed: u64,
    pub n_classes: usize,
    pub swap_mult: usize,
    pub replicas: usize,
    pub rho_min: f64,
    /// Scaled from the corpus size when absent.
    pub min_common: Option<u32>,
    pub min_purchases: usize,
    pub min_active_months: usize,
    pub k_min: usize,
    pub k_max: usize,
    pub gap_refs: usize,
    pub kmeans_restarts: usize,
    pub standardize: bool,
    pub variant: Variant,
    pub svg: bool,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            input_dir: PathBuf::from("."),
            out_dir: PathBuf::from("out"),
            taxonomy: None,
            seed: 1,
            n_classes: 9,
            swap_mult: 5,
            replicas: 100,
            rho_min: correlation::DEFAULT_RHO_MIN,
            min_common: None,
            min_purchases: correlation::DEFAULT_MIN_PURCHASES,
            min_active_months: 2,
            k_min: 2,
            k_max: 20,
            gap_refs: DEFAULT_GAP_REFERENCES,
            kmeans_restarts: DEFAULT_RESTARTS,
            standardize: true,
            variant: Variant::ExcludingCash,
            svg: false,
            synth: SynthConfig::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected a boolean, got {value:?}"))),
    }
}

/// Parses `a..b`, `a-b` or `a:b` into an inclusive range.
pub fn parse_k_range(value: &str) -> Result<(usize, usize)> {
    let split = ["..=", "..", "-", ":"]
        .iter()
        .find_map(|sep| value.split_once(sep));
    let (a, b) = split.ok_or_else(|| Error::Config(format!("k_range: expected a..b, got {value:?}")))?;
    let (a, b) = (parse("k_range", a.trim())?, parse("k_range", b.trim())?);
    if a < 2 || a > b {
        return Err(Error::Config(format!("k_range: need 2 <= min <= max, got {a}..{b}")));
    }
    Ok((a, b))
}

impl RunConfig {
    /// Keys accepted by [`set`](Self::set) and in config files.
    pub const KEYS: [&'static str; 27] = [
        "input_dir",
        "out_dir",
        "taxonomy",
        "seed",
        "n_classes",
        "swap_mult",
        "replicas",
        "rho_min",
        "min_common",
        "min_purchases",
        "min_active_months",
        "k_range",
        "gap_refs",
        "kmeans_restarts",
        "standardize",
        "variant",
        "svg",
        "n_egos",
        "pareto_shape",
        "planted_classes",
        "homophily",
        "mean_degree",
        "concentration",
        "months",
        "partner_candidates",
        "profile_shape",
        "age_wealth_coupling",
    ];

    /// Sets one parameter from its textual value. Dashes in `key` are read
    /// as underscores, so flag names work too.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('-', "_");
        let value = value.trim();
        let k = key.as_str();
        match k {
            "input_dir" => self.input_dir = PathBuf::from(value),
            "out_dir" => self.out_dir = PathBuf::from(value),
            "taxonomy" => self.taxonomy = (!value.is_empty()).then(|| PathBuf::from(value)),
            "seed" => {
                self.seed = parse(k, value)?;
                self.synth.seed = self.seed;
            }
            "n_classes" => self.n_classes = parse(k, value)?,
            "swap_mult" => self.swap_mult = parse(k, value)?,
            "replicas" => self.replicas = parse(k, value)?,
            "rho_min" => self.rho_min = parse(k, value)?,
            "min_common" => {
                self.min_common = match value {
                    "" | "auto" => None,
                    v => Some(parse(k, v)?),
                }
            }
            "min_purchases" => self.min_purchases = parse(k, value)?,
            "min_active_months" => self.min_active_months = parse(k, value)?,
            "k_range" => (self.k_min, self.k_max) = parse_k_range(value)?,
            "gap_refs" => self.gap_refs = parse(k, value)?,
            "kmeans_restarts" => self.kmeans_restarts = parse(k, value)?,
            "standardize" => self.standardize = parse_bool(k, value)?,
            "variant" => self.variant = value.parse().map_err(Error::Config)?,
            "svg" => self.svg = parse_bool(k, value)?,
            "n_egos" => self.synth.n_egos = parse(k, value)?,
            "pareto_shape" => self.synth.pareto_shape = parse(k, value)?,
            "planted_classes" => self.synth.n_classes_planted = parse(k, value)?,
            "homophily" => self.synth.homophily = parse(k, value)?,
            "mean_degree" => self.synth.mean_degree = parse(k, value)?,
            "concentration" => self.synth.profile_concentration = parse(k, value)?,
            "months" => self.synth.months = parse(k, value)?,
            "partner_candidates" => self.synth.partner_candidates = parse(k, value)?,
            "profile_shape" => {
                self.synth.profile_shape = match value {
                    "independent" => ProfileShape::Independent,
                    "monotone" => ProfileShape::Monotone,
                    _ => return Err(Error::Config(format!("profile_shape: unknown shape {value:?}"))),
                }
            }
            "age_wealth_coupling" => self.synth.age_wealth_coupling = parse(k, value)?,
            _ => return Err(Error::Config(format!("unknown configuration key {key:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_kv(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            self.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(())
    }

    pub fn load_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingInput(path.to_path_buf()),
            _ => Error::io(path, e),
        })?;
        self.apply_kv(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_classes == 0 {
            return bad("n_classes must be at least 1");
        }
        if self.swap_mult == 0 || self.replicas == 0 {
            return bad("swap_mult and replicas must be at least 1");
        }
        if !(self.rho_min > 0.0) {
            return bad("rho_min must be positive");
        }
        if self.min_common == Some(0) {
            return bad("min_common must be positive");
        }
        if self.min_active_months == 0 {
            return bad("min_active_months must be at least 1");
        }
        if self.gap_refs == 0 || self.kmeans_restarts == 0 {
            return bad("gap_refs and kmeans_restarts must be at least 1");
        }
        self.synth.validate()
    }

    /// Every parameter, as echoed into the report. Output locations are
    /// left out so reruns into different directories report identically.
    pub fn parameters(&self) -> Value {
        let s = &self.synth;
        json!({
            "input_dir": self.input_dir.display().to_string(),
            "taxonomy": self.taxonomy.as_ref().map(|p| p.display().to_string()).unwrap_or_else(|| "bundled".into()),
            "seed": self.seed,
            "n_classes": self.n_classes,
            "swap_mult": self.swap_mult,
            "replicas": self.replicas,
            "rho_min": self.rho_min,
            "min_common": self.min_common.map_or(Value::from("auto"), Value::from),
            "min_purchases": self.min_purchases,
            "min_active_months": self.min_active_months,
            "k_range": [self.k_min, self.k_max],
            "gap_refs": self.gap_refs,
            "kmeans_restarts": self.kmeans_restarts,
            "standardize": self.standardize,
            "variant": self.variant.tag(),
            "svg": self.svg,
            "generator": {
                "n_egos": s.n_egos,
                "pareto_shape": s.pareto_shape,
                "planted_classes": s.n_classes_planted,
                "homophily": s.homophily,
                "mean_degree": s.mean_degree,
                "concentration": s.profile_concentration,
                "months": s.months,
                "partner_candidates": s.partner_candidates,
                "profile_shape": match s.profile_shape {
                    ProfileShape::Independent => "independent",
                    ProfileShape::Monotone => "monotone",
                },
                "age_wealth_coupling": s.age_wealth_coupling,
                "active_groups": s.active_groups,
            },
        })
    }
}

struct Ingested {
    joined: JoinedDataset,
    active: TransactionLedger,
    profiles: Vec<EgoProfile>,
    summary: Value,
}

struct Classes {
    amp: AmpTable,
    partition: ClassPartition,
    curve: Vec<(f64, f64)>,
    /// Active ledger restricted to classified egos.
    classified: TransactionLedger,
}

struct Consumption {
    matrix: GroupSpendingMatrix,
    retained: RetainedGroups,
    /// Ex-cash, then inc-cash.
    vectors: [EgoVectors; 2],
    stats: [ClassVectorStats; 2],
}

struct Categories {
    dists: Distributions,
    matrix: CorrelationMatrix,
    graph: CategoryGraph,
}

fn variant_slot(v: Variant) -> usize {
    match v {
        Variant::ExcludingCash => 0,
        Variant::IncludingCash => 1,
    }
}

fn opt_json(v: Option<f64>) -> Value {
    v.map_or(Value::Null, Value::from)
}

fn pearson_json(p: Option<Pearson>) -> Value {
    p.map_or(Value::Null, |p| json!({ "r": p.r, "p": p.p, "n": p.n }))
}

fn matrix_json(m: &[Vec<Option<f64>>]) -> Value {
    Value::Array(
        m.iter()
            .map(|row| Value::Array(row.iter().map(|v| opt_json(*v)).collect()))
            .collect(),
    )
}

pub struct Pipeline {
    cfg: RunConfig,
    taxonomy: CategoryTaxonomy,
    ingested: Option<Ingested>,
    classes: Option<Classes>,
    consumption: Option<Consumption>,
    categories: Option<Categories>,
    communities: Option<Option<Communities>>,
}

impl Pipeline {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let taxonomy = match &cfg.taxonomy {
            Some(p) => CategoryTaxonomy::load(p)?,
            None => CategoryTaxonomy::bundled(),
        };
        Ok(Pipeline {
            cfg,
            taxonomy,
            ingested: None,
            classes: None,
            consumption: None,
            categories: None,
            communities: None,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    fn out(&self, name: &str) -> PathBuf {
        self.cfg.out_dir.join(name)
    }

    /// Runs one stage and records its summary in the report.
    pub fn run(&mut self, stage: Stage) -> Result<()> {
        std::fs::create_dir_all(&self.cfg.out_dir).map_err(|e| Error::io(&self.cfg.out_dir, e))?;
        info!("stage {stage}");
        let section = match stage {
            Stage::Generate => self.generate()?,
            Stage::Ingest => self.ingest_stage()?,
            Stage::Classes => self.classes_stage()?,
            Stage::Consumption => self.consumption_stage()?,
            Stage::NullModel => self.nullmodel_stage()?,
            Stage::Categories => self.categories_stage()?,
            Stage::Communities => self.communities_stage()?,
            Stage::Demographics => self.demographics_stage()?,
            Stage::Report => return self.report_stage(),
        };
        self.update_report(stage, section)
    }

    /// Every analysis stage in order, ending with the report digest.
    pub fn run_all(&mut self) -> Result<()> {
        for stage in Stage::ANALYSIS {
            self.run(stage)?;
        }
        Ok(())
    }

    fn update_report(&self, stage: Stage, section: Value) -> Result<()> {
        let path = self.out(REPORT_FILE);
        let mut root = match std::fs::read_to_string(&path) {
            Ok(text) => match serde_json::from_str::<Value>(&text)? {
                Value::Object(m) => m,
                _ => Map::new(),
            },
            Err(_) => Map::new(),
        };
        root.insert("report_version".into(), REPORT_VERSION.into());
        root.insert("parameters".into(), self.cfg.parameters());
        root.insert(
            "seed_streams".into(),
            json!({
                "wealth": 1, "profiles": 2, "edges": 3, "ledger": 4, "demographics": 5,
                "interactions": 6, "swap_replica": 16, "louvain": 17, "kmeans_restart": 18,
                "gap_reference": 19, "shuffle": 20,
            }),
        );
        let stages = root
            .entry("stages")
            .or_insert_with(|| Value::Object(Map::new()));
        if let Value::Object(m) = stages {
            m.insert(stage.name().into(), section);
        }
        let text = serde_json::to_string_pretty(&Value::Object(root))? + "\n";
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    fn generate(&mut self) -> Result<Value> {
        let mut synth = self.cfg.synth.clone();
        synth.seed = self.cfg.seed;
        let corpus = synthgen::generate(&synth, &self.taxonomy)?;
        corpus.write_to(&self.cfg.out_dir)?;
        let assort = synthgen::class_assortativity(&corpus.graph, |e| corpus.planted_class(e).unwrap_or(0));
        Ok(json!({
            "egos": corpus.profiles.len(),
            "edges": corpus.graph.edge_count(),
            "transactions": corpus.ledger.len(),
            "planted_assortativity": assort,
        }))
    }

    fn ingested(&mut self) -> Result<&Ingested> {
        if self.ingested.is_none() {
            let dir = &self.cfg.input_dir;
            let mut stream = ingestion::parse_interactions(dir.join("interactions.csv"))?;
            let directed = DirectedEventGraph::from_events(stream.by_ref());
            let istats = stream.finish()?;
            let pruned = directed.prune_inactive();
            let social = pruned.undirect();
            let (ledger, tstats) = ingestion::read_transactions(dir.join("transactions.csv"))?;
            let (mut profiles, pstats) = ingestion::read_profiles(dir.join("profiles.csv"))?;
            profiles.sort_by_key(|p| p.id);
            let active = filter_active(&ledger, self.cfg.min_active_months)?;
            let joined = join_datasets(&social, &profiles, &active)?;
            let summary = json!({
                "interactions": istats,
                "transactions": tstats,
                "profiles": pstats,
                "directed_nodes": directed.node_count(),
                "directed_edges": directed.edge_count(),
                "pruned_nodes": pruned.node_count(),
                "social_nodes": social.node_count(),
                "social_edges": social.edge_count(),
                "ledger_egos": ledger.ego_count(),
                "active_egos": active.ego_count(),
                "joined_nodes": joined.graph.node_count(),
                "joined_edges": joined.graph.edge_count(),
            });
            self.ingested = Some(Ingested {
                joined,
                active,
                profiles,
                summary,
            });
        }
        Ok(self.ingested.as_ref().unwrap())
    }

    fn ingest_stage(&mut self) -> Result<Value> {
        let path = self.out("social_edges.csv");
        let ing = self.ingested()?;
        write_edges(&path, &ing.joined.graph)?;
        Ok(ing.summary.clone())
    }

    fn classes(&mut self) -> Result<&Classes> {
        if self.classes.is_none() {
            let n = self.cfg.n_classes;
            let active = &self.ingested()?.active;
            let amp = compute_amp(active)?;
            let partition = partition_classes(&amp, n)?;
            check_partition(&amp, &partition)?;
            let curve = cumulative_curve(&amp)?;
            let classified = active.retain_egos(|e| partition.class_of(e).is_some());
            self.classes = Some(Classes {
                amp,
                partition,
                curve,
                classified,
            });
        }
        Ok(self.classes.as_ref().unwrap())
    }

    fn classes_stage(&mut self) -> Result<Value> {
        let (classes_path, curve_path) = (self.out("classes.csv"), self.out("curve.csv"));
        let c = self.classes()?;
        c.partition.write_csv(&classes_path, &c.amp)?;
        write_curve(&curve_path, &c.curve)?;
        let info = c.partition.classes();
        Ok(json!({
            "egos": c.amp.len(),
            "excluded_zero_spending": c.amp.excluded,
            "total_amp": c.amp.total(),
            "gini": gini_from_curve(&c.curve),
            "class_sizes": info.iter().map(|i| i.size).collect::<Vec<_>>(),
            "class_amp_sums": info.iter().map(|i| i.amp_sum).collect::<Vec<_>>(),
            "class_mean_amp": info.iter().map(|i| opt_json(i.mean_amp)).collect::<Vec<_>>(),
        }))
    }

    fn consumption(&mut self) -> Result<&Consumption> {
        if self.consumption.is_none() {
            self.classes()?;
            let c = self.classes.as_ref().unwrap();
            let matrix = group_spending_shares(&c.classified, &c.partition, &self.taxonomy)?;
            for row in matrix.rows() {
                let s: f64 = row.shares.iter().sum();
                if (s - 1.0).abs() > 1e-9 {
                    return Err(Error::Invariant(format!(
                        "class shares of group {} sum to {s}, not 1",
                        row.group
                    )));
                }
            }
            let retained = matrix.retained();
            let vectors = [Variant::ExcludingCash, Variant::IncludingCash]
                .map(|v| spending_vectors(&c.classified, &self.taxonomy, &retained, v));
            let stats = [0, 1].map(|i| class_vector_stats(&vectors[i], &c.partition));
            self.consumption = Some(Consumption {
                matrix,
                retained,
                vectors,
                stats,
            });
        }
        Ok(self.consumption.as_ref().unwrap())
    }

    fn consumption_stage(&mut self) -> Result<Value> {
        let dir = self.cfg.out_dir.clone();
        let cons = self.consumption()?;
        cons.matrix.write_csv(&dir.join("r_matrix.csv"))?;
        let mut variants = Map::new();
        for (i, v) in [Variant::ExcludingCash, Variant::IncludingCash].into_iter().enumerate() {
            let stats = &cons.stats[i];
            stats.write_means(&dir.join(format!("sv_class_means_{}.csv", v.tag())))?;
            let d = class_distance_matrix(&stats.means());
            consumption::write_matrix(&dir.join(format!("d_matrix_{}.csv", v.tag())), &d)?;
            stats.write_dispersion_entropy(&dir.join(format!("dispersion_entropy_{}.csv", v.tag())))?;
            variants.insert(
                v.tag().into(),
                json!({
                    "groups": stats.groups.iter().map(|g| g.0).collect::<Vec<_>>(),
                    "vectors": cons.vectors[i].len(),
                    "excluded_egos": cons.vectors[i].excluded,
                    "dispersion": stats.classes.iter().map(|c| opt_json(c.dispersion)).collect::<Vec<_>>(),
                    "entropy": stats.classes.iter().map(|c| opt_json(c.entropy)).collect::<Vec<_>>(),
                }),
            );
        }
        let dk1 = class_scalar_distance(&cons.stats[0].cash_means());
        consumption::write_matrix(&dir.join("d_matrix_k1.csv"), &dk1)?;
        Ok(json!({
            "retained_groups": cons.retained.groups.iter().map(|g| g.0).collect::<Vec<_>>(),
            "low_share_groups": cons.matrix.low_share().iter().map(|g| g.0).collect::<Vec<_>>(),
            "zero_groups": cons.matrix.zero_groups().iter().map(|g| g.0).collect::<Vec<_>>(),
            "skipped_transactions": cons.matrix.skipped_transactions,
            "variants": variants,
            "mean_cash_share": cons.stats[0].cash_means().into_iter().map(opt_json).collect::<Vec<_>>(),
        }))
    }

    /// Joined graph restricted to nodes with a vector of the configured
    /// variant and a class, and the L ratios on it.
    fn l_ratio(&mut self) -> Result<(SocialGraph, LRatioResult)> {
        self.ingested()?;
        self.consumption()?;
        let graph_full = &self.ingested.as_ref().unwrap().joined.graph;
        let partition = &self.classes.as_ref().unwrap().partition;
        let vectors = &self.consumption.as_ref().unwrap().vectors[variant_slot(self.cfg.variant)];
        let graph = graph_full.induced(|e| vectors.index_of(e).is_some() && partition.class_of(e).is_some());
        let values = vectors.node_values(&graph, partition, true)?;
        let plan = SwapPlan {
            swap_multiplier: self.cfg.swap_mult,
            replicas: self.cfg.replicas,
            seed: self.cfg.seed,
        };
        let res = l_ratio(&graph, &values, vectors.width(), true, &plan)?;
        Ok((graph, res))
    }

    fn nullmodel_stage(&mut self) -> Result<Value> {
        let (graph, res) = self.l_ratio()?;
        let lsv = res.l_sv_matrix();
        let lk1 = res.l_cash_matrix();
        consumption::write_matrix(&self.out("L_sv.csv"), &lsv)?;
        consumption::write_matrix(&self.out("L_k1.csv"), &lk1)?;
        res.write_null_stats(&self.out("null_stats.csv"))?;
        if self.cfg.svg {
            let labels: Vec<String> = (1..=lsv.len()).map(|j| j.to_string()).collect();
            svg::heatmap(&self.out("L_sv.svg"), "L_SV", &labels, &lsv, 1.0)?;
        }
        let attempts = self.cfg.swap_mult * graph.edge_count();
        let accepted = &res.swaps_accepted;
        let mean_accept = accepted.iter().sum::<usize>() as f64 / accepted.len().max(1) as f64;
        let n = lsv.len();
        Ok(json!({
            "nodes": graph.node_count(),
            "edges": graph.edge_count(),
            "swap_attempts_per_replica": attempts,
            "mean_swaps_accepted": mean_accept,
            "diagonal_l_sv": (0..n).map(|i| opt_json(lsv[i][i])).collect::<Vec<_>>(),
            "defined_entries": lsv.iter().flatten().filter(|v| v.is_some()).count(),
            "l_sv": matrix_json(&lsv),
            "l_k1": matrix_json(&lk1),
        }))
    }

    fn categories(&mut self) -> Result<&Categories> {
        if self.categories.is_none() {
            self.ingested()?;
            let active = &self.ingested.as_ref().unwrap().active;
            let dists = purchase_distributions(active, &self.taxonomy, self.cfg.min_purchases);
            let matrix = correlation_matrix(&dists.items)?;
            let min_common = self
                .cfg
                .min_common
                .unwrap_or_else(|| default_min_common(dists.items.len()));
            let graph = build_graph(&matrix, self.cfg.rho_min, min_common)?;
            if graph.is_empty() {
                warn!("category graph is empty at rho > {} with {min_common} common consumers", self.cfg.rho_min);
            }
            self.categories = Some(Categories { dists, matrix, graph });
        }
        Ok(self.categories.as_ref().unwrap())
    }

    fn categories_stage(&mut self) -> Result<Value> {
        let (rho_path, edge_path) = (self.out("rho_matrix.csv"), self.out("graph_edges.csv"));
        let cat = self.categories()?;
        cat.matrix.write_csv(&rho_path)?;
        cat.graph.write_csv(&edge_path)?;
        Ok(json!({
            "egos": cat.dists.items.len(),
            "excluded_egos": cat.dists.excluded_egos,
            "out_of_scope_transactions": cat.dists.out_of_scope_transactions,
            "dropped_categories": cat.dists.dropped_categories.iter().map(|d| json!([d.0, d.1])).collect::<Vec<_>>(),
            "categories": cat.matrix.categories().len(),
            "rho_min": cat.graph.rho_min,
            "min_common": cat.graph.min_common,
            "graph_nodes": cat.graph.nodes.len(),
            "graph_edges": cat.graph.edges.len(),
        }))
    }

    fn communities(&mut self) -> Result<Option<&Communities>> {
        if self.communities.is_none() {
            let seed = self.cfg.seed;
            let graph = &self.categories()?.graph;
            let comms = if graph.is_empty() {
                None
            } else {
                let c = louvain_communities(graph, Some(seed))?;
                if c.labels.len() != graph.nodes.len() {
                    return Err(Error::Invariant("communities do not cover the category graph".into()));
                }
                Some(c)
            };
            self.communities = Some(comms);
        }
        Ok(self.communities.as_ref().unwrap().as_ref())
    }

    fn communities_stage(&mut self) -> Result<Value> {
        let path = self.out("communities.csv");
        let svg_path = self.cfg.svg.then(|| self.out("rho_heatmap.svg"));
        let section = match self.communities()? {
            Some(c) => {
                c.write_csv(&path)?;
                json!({
                    "count": c.count,
                    "modularity": c.modularity,
                    "level_modularity": c.level_modularity,
                    "sizes": (1..=c.count).map(|k| c.members(k).len()).collect::<Vec<_>>(),
                })
            }
            None => {
                Communities {
                    labels: vec![],
                    count: 0,
                    modularity: 0.0,
                    level_modularity: vec![],
                }
                .write_csv(&path)?;
                json!({ "count": 0, "modularity": Value::Null, "note": "empty category graph" })
            }
        };
        if let Some(svg_path) = svg_path {
            let comms = self.communities.clone().flatten();
            let cat = self.categories.as_ref().unwrap();
            let mut order = cat.graph.nodes.clone();
            if let Some(c) = &comms {
                order.sort_by_key(|&m| (c.community_of(m), m));
            }
            let m: Vec<Vec<Option<f64>>> = order
                .iter()
                .map(|&a| order.iter().map(|&b| cat.matrix.rho(a, b)).collect())
                .collect();
            let labels: Vec<String> = order.iter().map(|m| m.to_string()).collect();
            svg::heatmap(&svg_path, "rho by community", &labels, &m, 1.0)?;
        }
        Ok(section)
    }

    fn demographics_stage(&mut self) -> Result<Value> {
        self.categories()?;
        self.classes()?;
        self.communities()?;
        let dists = &self.categories.as_ref().unwrap().dists.items;
        let partition = &self.classes.as_ref().unwrap().partition;
        let profiles = &self.ingested.as_ref().unwrap().profiles;
        let set = afs(dists, profiles, partition);
        set.write_csv(&self.out("afs.csv"))?;
        let corr = feature_correlations(&set);

        let ids: Vec<u32> = set.rows.iter().map(|r| r.id).collect();
        let points = set.points();
        let k_max = self.cfg.k_max.min(points.len().saturating_sub(2));
        let clustering = if k_max >= self.cfg.k_min {
            let sel = SelectionConfig {
                k_min: self.cfg.k_min,
                k_max,
                restarts: self.cfg.kmeans_restarts,
                gap_references: self.cfg.gap_refs,
                standardize: self.cfg.standardize,
                seed: self.cfg.seed,
                ..SelectionConfig::default()
            };
            match kmeans_select(&points, &sel) {
                Ok(r) => Some(r),
                Err(Error::Degenerate(m)) => {
                    warn!("clustering skipped: {m}");
                    None
                }
                Err(e) => return Err(e),
            }
        } else {
            warn!("clustering skipped: {} categories are too few for k >= {}", points.len(), self.cfg.k_min);
            None
        };
        match &clustering {
            Some(r) => {
                r.write_clusters(&self.out("clusters.csv"), "mcc", &ids)?;
                r.write_selection(&self.out("selection.csv"))?;
            }
            None => {
                write_header(&self.out("clusters.csv"), &["mcc", "cluster"])?;
                write_header(&self.out("selection.csv"), &["k", "db", "ch", "gap", "gap_s", "inertia"])?;
            }
        }

        let comm_set = match self.communities.as_ref().unwrap() {
            Some(c) => community_afs(dists, profiles, partition, c),
            None => CategoryFeatureSet::default(),
        };
        comm_set.write_community_csv(&self.out("community_afs.csv"))?;
        let comm_corr = feature_correlations(&comm_set);

        if self.cfg.svg && !set.is_empty() {
            let pts: Vec<svg::ScatterPoint> = set
                .rows
                .iter()
                .enumerate()
                .map(|(i, r)| svg::ScatterPoint {
                    x: r.age,
                    y: r.seg,
                    r: 2.0 + 6.0 * (r.gender - 0.5).abs(),
                    square: r.gender > 0.5,
                    group: clustering.as_ref().map_or(0, |c| c.labels[i] - 1),
                })
                .collect();
            svg::scatter(&self.out("afs_scatter.svg"), "category features", "age", "SEG", &pts)?;
        }

        Ok(json!({
            "categories": set.len(),
            "flagged_categories": set.flagged,
            "incomplete_egos": set.incomplete_egos,
            "age_seg": pearson_json(corr.age_seg),
            "gender_seg": pearson_json(corr.gender_seg),
            "age_gender": pearson_json(corr.age_gender),
            "clustering": clustering.as_ref().map_or(Value::Null, |c| json!({
                "k": c.k,
                "best_db": c.best_db,
                "best_ch": c.best_ch,
                "best_gap": c.best_gap,
                "inertia": c.inertia,
            })),
            "communities": comm_set.len(),
            "community_age_seg": pearson_json(comm_corr.age_seg),
        }))
    }

    /// Renders `summary.md` from the report written by earlier stages.
    fn report_stage(&self) -> Result<()> {
        let path = self.out(REPORT_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingInput(path.clone()),
            _ => Error::io(&path, e),
        })?;
        let root: Value = serde_json::from_str(&text)?;
        let summary = render_summary(&root);
        let out = self.out("summary.md");
        std::fs::write(&out, summary).map_err(|e| Error::io(&out, e))
    }
}

fn write_edges(path: &Path, g: &SocialGraph) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(Error::from)?;
    w.write_record(["ego_a", "ego_b"])?;
    for (a, b) in g.id_edges() {
        w.write_record([a.to_string(), b.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_header(path: &Path, header: &[&str]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(Error::from)?;
    w.write_record(header)?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn check_partition(amp: &AmpTable, p: &ClassPartition) -> Result<()> {
    if p.len() != amp.len() {
        return Err(Error::Invariant(format!(
            "partition covers {} of {} egos",
            p.len(),
            amp.len()
        )));
    }
    let max = amp.entries().iter().map(|e| e.amp).fold(0.0, f64::max);
    let target = amp.total() / p.n() as f64;
    for c in p.classes() {
        if (c.amp_sum - target).abs() > max * (1.0 + 1e-9) {
            return Err(Error::Invariant(format!(
                "class {} holds AMP {} against a target of {target}",
                c.class, c.amp_sum
            )));
        }
    }
    Ok(())
}

fn fmt_num(v: &Value) -> String {
    match v.as_f64() {
        Some(x) if v.is_f64() => format!("{x:.4}"),
        _ if v.is_null() => "n/a".into(),
        _ => v.to_string(),
    }
}

fn render_summary(root: &Value) -> String {
    let st = &root["stages"];
    let mut s = String::from("# Run summary\n\n");
    s.push_str(&format!("Seed {}.\n\n", fmt_num(&root["parameters"]["seed"])));
    if let Some(i) = st.get("ingest") {
        s.push_str(&format!(
            "- social graph: {} nodes, {} edges after joining ({} active bank egos)\n",
            fmt_num(&i["joined_nodes"]),
            fmt_num(&i["joined_edges"]),
            fmt_num(&i["active_egos"])
        ));
    }
    if let Some(c) = st.get("classes") {
        s.push_str(&format!(
            "- classes: sizes {}, Gini {}\n",
            c["class_sizes"],
            fmt_num(&c["gini"])
        ));
    }
    if let Some(c) = st.get("consumption") {
        s.push_str(&format!(
            "- retained groups {}, flagged low-share groups {}\n",
            c["retained_groups"], c["low_share_groups"]
        ));
    }
    if let Some(n) = st.get("nullmodel") {
        let diag: Vec<String> = n["diagonal_l_sv"]
            .as_array()
            .map(|a| a.iter().map(fmt_num).collect())
            .unwrap_or_default();
        s.push_str(&format!("- diagonal L_SV: {}\n", diag.join(", ")));
    }
    if let Some(c) = st.get("categories") {
        s.push_str(&format!(
            "- category graph: {} nodes, {} edges (rho > {}, common >= {})\n",
            fmt_num(&c["graph_nodes"]),
            fmt_num(&c["graph_edges"]),
            fmt_num(&c["rho_min"]),
            fmt_num(&c["min_common"])
        ));
    }
    if let Some(c) = st.get("communities") {
        s.push_str(&format!(
            "- communities: {} (modularity {})\n",
            fmt_num(&c["count"]),
            fmt_num(&c["modularity"])
        ));
    }
    if let Some(d) = st.get("demographics") {
        s.push_str(&format!(
            "- age-SEG Pearson r {} (p {}); clusters k = {}\n",
            fmt_num(&d["age_seg"]["r"]),
            fmt_num(&d["age_seg"]["p"]),
            fmt_num(&d["clustering"]["k"])
        ));
    }
    s
}
