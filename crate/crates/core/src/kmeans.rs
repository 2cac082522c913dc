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

//! k-means with k-means++ seeding and cluster-count selection by the
//! Davies-Bouldin index, the Calinski-Harabasz ratio and the gap statistic.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Serialize;

use crate::csvio;
use crate::error::{Error, Result};
use crate::seed::{self, Stream};

pub const DEFAULT_RESTARTS: usize = 10;
pub const DEFAULT_MAX_ITER: usize = 300;
pub const DEFAULT_GAP_REFERENCES: usize = 50;
/// Restarts per reference sample when computing the gap statistic.
pub const DEFAULT_GAP_RESTARTS: usize = 3;
/// Minimum per-coordinate spread of planted centers, in blob sds.
pub const MIN_SPREAD_SDS: f64 = 4.0;

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_points(points: &[Vec<f64>]) -> Result<usize> {
    let Some(first) = points.first() else {
        return Err(Error::InvalidInput("no points to cluster".into()));
    };
    let dim = first.len();
    if dim == 0 || points.iter().any(|p| p.len() != dim) {
        return Err(Error::InvalidInput("points must share a nonzero dimension".into()));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite coordinate".into()));
    }
    Ok(dim)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Standardized {
    pub points: Vec<Vec<f64>>,
    pub means: Vec<f64>,
    /// Population standard deviations; constant dimensions get 1.
    pub sds: Vec<f64>,
}

/// Zero mean and unit variance per dimension. Fails when every point is
/// identical.
pub fn standardize(points: &[Vec<f64>]) -> Result<Standardized> {
    let dim = check_points(points)?;
    let n = points.len() as f64;
    let means: Vec<f64> = (0..dim)
        .map(|d| points.iter().map(|p| p[d]).sum::<f64>() / n)
        .collect();
    let vars: Vec<f64> = (0..dim)
        .map(|d| points.iter().map(|p| (p[d] - means[d]).powi(2)).sum::<f64>() / n)
        .collect();
    if vars.iter().all(|&v| v == 0.0) {
        return Err(Error::Degenerate("all feature points are identical".into()));
    }
    let sds: Vec<f64> = vars
        .iter()
        .map(|&v| if v > 0.0 { v.sqrt() } else { 1.0 })
        .collect();
    let points = points
        .iter()
        .map(|p| (0..dim).map(|d| (p[d] - means[d]) / sds[d]).collect())
        .collect();
    Ok(Standardized { points, means, sds })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansConfig {
    pub restarts: usize,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig {
            restarts: DEFAULT_RESTARTS,
            max_iter: DEFAULT_MAX_ITER,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub k: usize,
    /// 0-based cluster per point.
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    /// Inertia after each assignment step of the winning restart.
    pub trace: Vec<f64>,
    /// Winning restart index.
    pub restart: usize,
}

impl KMeansFit {
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &l in &self.labels {
            s[l] += 1;
        }
        s
    }
}

fn plus_plus<R: Rng>(points: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centers = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 && target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            while d2[chosen] == 0.0 {
                chosen -= 1;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = points[pick].clone();
        for (p, d) in points.iter().zip(d2.iter_mut()) {
            *d = d.min(dist2(p, &c));
        }
        centers.push(c);
    }
    centers
}

/// Lloyd iterations from the given centers. A point keeps its cluster on
/// ties and an emptied cluster keeps its centroid, so inertia never rises.
fn lloyd(points: &[Vec<f64>], mut centers: Vec<Vec<f64>>, max_iter: usize) -> KMeansFit {
    let k = centers.len();
    let dim = points[0].len();
    let mut labels = vec![usize::MAX; points.len()];
    let mut trace = Vec::new();
    for _ in 0..max_iter.max(1) {
        let mut changed = false;
        let mut inertia = 0.0;
        for (p, l) in points.iter().zip(labels.iter_mut()) {
            let (mut best, mut best_d) = match *l {
                usize::MAX => (0, dist2(p, &centers[0])),
                cur => (cur, dist2(p, &centers[cur])),
            };
            for (j, c) in centers.iter().enumerate() {
                let d = dist2(p, c);
                if d < best_d {
                    best = j;
                    best_d = d;
                }
            }
            if *l != best {
                *l = best;
                changed = true;
            }
            inertia += best_d;
        }
        trace.push(inertia);
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(p) {
                *s += v;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                centers[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
    }
    let inertia = points
        .iter()
        .zip(&labels)
        .map(|(p, &l)| dist2(p, &centers[l]))
        .sum();
    KMeansFit {
        k,
        labels,
        centroids: centers,
        inertia,
        trace,
        restart: 0,
    }
}

fn kmeans_stream(points: &[Vec<f64>], k: usize, cfg: &KMeansConfig, stream: Stream, tag: u64) -> Result<KMeansFit> {
    check_points(points)?;
    if k == 0 || k > points.len() {
        return Err(Error::InvalidInput(format!(
            "k = {k} outside 1..={}",
            points.len()
        )));
    }
    let fits: Vec<KMeansFit> = (0..cfg.restarts.max(1))
        .into_par_iter()
        .map(|r| {
            let mut rng = seed::rng(cfg.seed, stream, (tag << 32) | (k as u64) << 16 | r as u64);
            let mut fit = lloyd(points, plus_plus(points, k, &mut rng), cfg.max_iter);
            fit.restart = r;
            fit
        })
        .collect();
    let mut best = None::<KMeansFit>;
    for f in fits {
        if best.as_ref().is_none_or(|b| f.inertia < b.inertia) {
            best = Some(f);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Best of `cfg.restarts` seeded runs; ties go to the lowest restart index.
pub fn kmeans(points: &[Vec<f64>], k: usize, cfg: &KMeansConfig) -> Result<KMeansFit> {
    kmeans_stream(points, k, cfg, Stream::KMeansRestart, 0)
}

/// Mean over clusters of the worst `(s_i + s_j) / d(c_i, c_j)`, with `s` the
/// mean distance of members to their centroid. Lower is better.
pub fn davies_bouldin(points: &[Vec<f64>], fit: &KMeansFit) -> Option<f64> {
    let sizes = fit.sizes();
    let live: Vec<usize> = (0..fit.k).filter(|&j| sizes[j] > 0).collect();
    if live.len() < 2 {
        return None;
    }
    let mut scatter = vec![0.0; fit.k];
    for (p, &l) in points.iter().zip(&fit.labels) {
        scatter[l] += dist2(p, &fit.centroids[l]).sqrt();
    }
    for j in &live {
        scatter[*j] /= sizes[*j] as f64;
    }
    let mut total = 0.0;
    for &i in &live {
        let mut worst: f64 = 0.0;
        for &j in &live {
            if i != j {
                let d = dist2(&fit.centroids[i], &fit.centroids[j]).sqrt();
                if d == 0.0 {
                    return None;
                }
                worst = worst.max((scatter[i] + scatter[j]) / d);
            }
        }
        total += worst;
    }
    Some(total / live.len() as f64)
}

/// Between-cluster over within-cluster dispersion, each per degree of
/// freedom. Higher is better.
pub fn calinski_harabasz(points: &[Vec<f64>], fit: &KMeansFit) -> Option<f64> {
    let n = points.len();
    let k = fit.k;
    if k < 2 || n <= k || fit.inertia <= 0.0 {
        return None;
    }
    let dim = points[0].len();
    let mean: Vec<f64> = (0..dim)
        .map(|d| points.iter().map(|p| p[d]).sum::<f64>() / n as f64)
        .collect();
    let sizes = fit.sizes();
    let between: f64 = (0..k)
        .map(|j| sizes[j] as f64 * dist2(&fit.centroids[j], &mean))
        .sum();
    Some((between / (k - 1) as f64) / (fit.inertia / (n - k) as f64))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionConfig {
    pub k_min: usize,
    pub k_max: usize,
    pub restarts: usize,
    pub max_iter: usize,
    pub gap_references: usize,
    pub gap_restarts: usize,
    pub standardize: bool,
    pub seed: u64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            k_min: 2,
            k_max: 20,
            restarts: DEFAULT_RESTARTS,
            max_iter: DEFAULT_MAX_ITER,
            gap_references: DEFAULT_GAP_REFERENCES,
            gap_restarts: DEFAULT_GAP_RESTARTS,
            standardize: true,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SelectionRow {
    pub k: usize,
    pub inertia: f64,
    pub db: Option<f64>,
    pub ch: Option<f64>,
    pub gap: f64,
    /// `sd * sqrt(1 + 1/B)` of the reference log-dispersions.
    pub gap_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusteringResult {
    pub k: usize,
    /// 1-based cluster per input point.
    pub labels: Vec<usize>,
    /// Centroids in the clustering space (standardized unless disabled).
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    pub scores: Vec<SelectionRow>,
    pub best_db: Option<usize>,
    pub best_ch: Option<usize>,
    pub best_gap: usize,
}

impl ClusteringResult {
    /// Writes `k,db,ch,gap` plus the gap spread and inertia.
    pub fn write_selection(&self, path: &Path) -> Result<()> {
        let mut w = csvio::writer(path)?;
        w.write_record(["k", "db", "ch", "gap", "gap_s", "inertia"])?;
        for r in &self.scores {
            w.write_record([
                r.k.to_string(),
                csvio::fmt_opt(r.db),
                csvio::fmt_opt(r.ch),
                r.gap.to_string(),
                r.gap_s.to_string(),
                r.inertia.to_string(),
            ])?;
        }
        csvio::finish(w, path)
    }

    /// Writes `<id_label>,cluster` with the given point ids.
    pub fn write_clusters(&self, path: &Path, id_label: &str, ids: &[u32]) -> Result<()> {
        let mut w = csvio::writer(path)?;
        w.write_record([id_label, "cluster"])?;
        for (id, l) in ids.iter().zip(&self.labels) {
            w.write_record([id.to_string(), l.to_string()])?;
        }
        csvio::finish(w, path)
    }
}

fn log_dispersion(inertia: f64) -> f64 {
    inertia.max(f64::MIN_POSITIVE).ln()
}

/// Smallest k with `Gap(k) >= Gap(k+1) - s(k+1)`, else the largest k tried.
pub fn gap_choice(rows: &[SelectionRow]) -> usize {
    rows.windows(2)
        .find(|w| w[0].gap >= w[1].gap - w[1].gap_s)
        .map(|w| w[0].k)
        .unwrap_or_else(|| rows.last().map(|r| r.k).unwrap_or(0))
}

/// Value two criteria agree on, else the Calinski-Harabasz choice, else Gap.
pub fn consensus(db: Option<usize>, ch: Option<usize>, gap: usize) -> usize {
    match (db, ch) {
        (Some(d), Some(c)) if d == c => d,
        (Some(d), _) if d == gap => d,
        (_, Some(c)) => c,
        _ => gap,
    }
}

fn argbest(rows: &[SelectionRow], score: impl Fn(&SelectionRow) -> Option<f64>, lower: bool) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for r in rows {
        if let Some(s) = score(r) {
            let better = match best {
                None => true,
                Some((_, b)) => if lower { s < b } else { s > b },
            };
            if better {
                best = Some((r.k, s));
            }
        }
    }
    best.map(|b| b.0)
}

/// Clusters for every k in the range, scores each, and keeps the consensus k.
pub fn kmeans_select(points: &[Vec<f64>], cfg: &SelectionConfig) -> Result<ClusteringResult> {
    let dim = check_points(points)?;
    let n = points.len();
    if cfg.k_min < 2 || cfg.k_min > cfg.k_max || cfg.k_max + 1 > n {
        return Err(Error::Config(format!(
            "k range {}..={} must lie within 2..={}",
            cfg.k_min,
            cfg.k_max,
            n.saturating_sub(1)
        )));
    }
    let data = if cfg.standardize {
        standardize(points)?.points
    } else {
        standardize(points)?;
        points.to_vec()
    };
    let km = KMeansConfig {
        restarts: cfg.restarts,
        max_iter: cfg.max_iter,
        seed: cfg.seed,
    };
    let fits: Vec<KMeansFit> = (cfg.k_min..=cfg.k_max)
        .map(|k| kmeans(&data, k, &km))
        .collect::<Result<_>>()?;

    let lo: Vec<f64> = (0..dim)
        .map(|d| data.iter().map(|p| p[d]).fold(f64::INFINITY, f64::min))
        .collect();
    let hi: Vec<f64> = (0..dim)
        .map(|d| data.iter().map(|p| p[d]).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let ref_cfg = KMeansConfig {
        restarts: cfg.gap_restarts,
        ..km
    };
    let b = cfg.gap_references.max(1);
    // ref_logw[b][k - k_min]
    let ref_logw: Vec<Vec<f64>> = (0..b)
        .into_par_iter()
        .map(|bi| {
            let mut rng = seed::rng(cfg.seed, Stream::GapReference, bi as u64);
            let sample: Vec<Vec<f64>> = (0..n)
                .map(|_| {
                    (0..dim)
                        .map(|d| lo[d] + rng.random::<f64>() * (hi[d] - lo[d]))
                        .collect()
                })
                .collect();
            (cfg.k_min..=cfg.k_max)
                .map(|k| {
                    kmeans_stream(&sample, k, &ref_cfg, Stream::GapReference, bi as u64 + 1)
                        .map(|f| log_dispersion(f.inertia))
                        .unwrap_or(0.0)
                })
                .collect()
        })
        .collect();

    let scores: Vec<SelectionRow> = fits
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let refs: Vec<f64> = ref_logw.iter().map(|r| r[i]).collect();
            let mean = refs.iter().sum::<f64>() / b as f64;
            let sd = (refs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / b as f64).sqrt();
            SelectionRow {
                k: f.k,
                inertia: f.inertia,
                db: davies_bouldin(&data, f),
                ch: calinski_harabasz(&data, f),
                gap: mean - log_dispersion(f.inertia),
                gap_s: sd * (1.0 + 1.0 / b as f64).sqrt(),
            }
        })
        .collect();

    let best_db = argbest(&scores, |r| r.db, true);
    let best_ch = argbest(&scores, |r| r.ch, false);
    let best_gap = gap_choice(&scores);
    let k = consensus(best_db, best_ch, best_gap);
    let fit = &fits[k - cfg.k_min];
    Ok(ClusteringResult {
        k,
        labels: fit.labels.iter().map(|l| l + 1).collect(),
        centroids: fit.centroids.clone(),
        inertia: fit.inertia,
        scores,
        best_db,
        best_ch,
        best_gap,
    })
}

/// Isotropic Gaussian blobs with centers drawn uniformly in `[0, box_size]^dim`
/// at least `min_separation` apart. Layouts in which some coordinate of the
/// centers spreads less than `MIN_SPREAD_SDS * sd` are redrawn, since that
/// coordinate would be pure noise once standardized. Returns the points and
/// their 0-based blob.
pub fn planted_blobs(
    k: usize,
    per_blob: usize,
    dim: usize,
    sd: f64,
    box_size: f64,
    min_separation: f64,
    seed: u64,
) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    let mut rng = seed::rng(seed, Stream::Demographics, 1);
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut tries = 0;
    while centers.len() < k {
        tries += 1;
        if tries > 100_000 {
            return Err(Error::Config(format!(
                "cannot place {k} centers {min_separation} apart in the box"
            )));
        }
        let c: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() * box_size).collect();
        if centers
            .iter()
            .all(|o| dist2(o, &c) >= min_separation * min_separation)
        {
            centers.push(c);
        }
        if centers.len() == k && k > 1 && !spread_ok(&centers, MIN_SPREAD_SDS * sd) {
            centers.clear();
        }
    }
    blobs_around(&centers, per_blob, sd, &mut rng)
}

fn spread_ok(centers: &[Vec<f64>], min_sd: f64) -> bool {
    let n = centers.len() as f64;
    (0..centers[0].len()).all(|d| {
        let m = centers.iter().map(|c| c[d]).sum::<f64>() / n;
        let var = centers.iter().map(|c| (c[d] - m).powi(2)).sum::<f64>() / n;
        var.sqrt() >= min_sd
    })
}

/// Gaussian blobs around fixed centers.
pub fn blobs_at(centers: &[Vec<f64>], per_blob: usize, sd: f64, seed: u64) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    blobs_around(centers, per_blob, sd, &mut seed::rng(seed, Stream::Demographics, 2))
}

fn blobs_around<R: Rng>(
    centers: &[Vec<f64>],
    per_blob: usize,
    sd: f64,
    rng: &mut R,
) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    let noise = Normal::new(0.0, sd).map_err(|e| Error::Config(e.to_string()))?;
    let mut points = Vec::with_capacity(centers.len() * per_blob);
    let mut labels = Vec::with_capacity(centers.len() * per_blob);
    for (j, c) in centers.iter().enumerate() {
        for _ in 0..per_blob {
            points.push(c.iter().map(|x| x + noise.sample(rng)).collect());
            labels.push(j);
        }
    }
    Ok((points, labels))
}
