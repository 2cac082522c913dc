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

//! Average feature sets of merchant categories and feature correlations.
//!
//! For a category `c` and an integer-valued feature `v` (age in whole years,
//! gender coded 0 = female / 1 = male, class id), purchasers are grouped by
//! their value of `v`. Each distinct value gets the weight
//! `alpha(v) = mean of r(c, u) over purchasers u with v_u = v`, and the
//! category average is `sum(alpha(v) * v) / sum(alpha(v))` over the distinct
//! values present.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use statrs::function::beta::beta_reg;

use crate::correlation::Communities;
use crate::csvio;
use crate::error::{Error, Result};
use crate::model::{EgoId, EgoProfile, PurchaseDistribution};
use crate::socioeco::ClassPartition;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategoryFeatures {
    /// Category code, or community number for pooled sets.
    pub id: u32,
    pub age: f64,
    pub gender: f64,
    pub seg: f64,
    pub n_purchasers: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CategoryFeatureSet {
    /// Ascending by id.
    pub rows: Vec<CategoryFeatures>,
    /// Categories with purchasers but none with a complete profile.
    pub flagged: Vec<u32>,
    /// Purchasers skipped for a missing profile, gender or class.
    pub incomplete_egos: usize,
}

impl CategoryFeatureSet {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, id: u32) -> Option<&CategoryFeatures> {
        self.rows
            .binary_search_by_key(&id, |r| r.id)
            .ok()
            .map(|i| &self.rows[i])
    }

    /// `[age, gender, seg]` per row, in row order.
    pub fn points(&self) -> Vec<Vec<f64>> {
        self.rows.iter().map(|r| vec![r.age, r.gender, r.seg]).collect()
    }

    pub fn ages(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.age).collect()
    }

    pub fn genders(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.gender).collect()
    }

    pub fn segs(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.seg).collect()
    }

    /// Writes `mcc,age,gender,seg,n_purchasers`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        self.write_with_label(path, "mcc")
    }

    /// Writes `community,age,gender,seg,n_purchasers`.
    pub fn write_community_csv(&self, path: &Path) -> Result<()> {
        self.write_with_label(path, "community")
    }

    fn write_with_label(&self, path: &Path, label: &str) -> Result<()> {
        let mut w = csvio::writer(path)?;
        w.write_record([label, "age", "gender", "seg", "n_purchasers"])?;
        for r in &self.rows {
            w.write_record([
                r.id.to_string(),
                r.age.to_string(),
                r.gender.to_string(),
                r.seg.to_string(),
                r.n_purchasers.to_string(),
            ])?;
        }
        csvio::finish(w, path)
    }
}

/// A purchaser with complete features.
#[derive(Debug, Clone, Copy)]
struct Purchaser {
    r: f64,
    age: u32,
    gender: u32,
    class: u32,
}

/// Weighted average over distinct feature values.
fn value_weighted_mean(items: impl Iterator<Item = (u32, f64)>) -> f64 {
    let mut groups: BTreeMap<u32, (f64, usize)> = BTreeMap::new();
    for (v, r) in items {
        let e = groups.entry(v).or_insert((0.0, 0));
        e.0 += r;
        e.1 += 1;
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (v, (sum, count)) in groups {
        let alpha = sum / count as f64;
        num += alpha * f64::from(v);
        den += alpha;
    }
    num / den
}

fn features_of(id: u32, buyers: &[Purchaser]) -> CategoryFeatures {
    CategoryFeatures {
        id,
        age: value_weighted_mean(buyers.iter().map(|p| (p.age, p.r))),
        gender: value_weighted_mean(buyers.iter().map(|p| (p.gender, p.r))),
        seg: value_weighted_mean(buyers.iter().map(|p| (p.class, p.r))),
        n_purchasers: buyers.len(),
    }
}

type Features = (u32, u32, u32);

fn feature_lookup(profiles: &[EgoProfile], partition: &ClassPartition) -> HashMap<EgoId, Features> {
    profiles
        .iter()
        .filter_map(|p| {
            let g = p.gender?;
            let c = partition.class_of(p.id)?;
            Some((p.id, (p.age, u32::from(g.code()), u32::from(c))))
        })
        .collect()
}

/// Groups `(key, ego, r)` triples into per-key purchaser lists and computes
/// the feature set. Keys with only incomplete purchasers are flagged.
fn pooled(
    keyed: impl Iterator<Item = (u32, EgoId, f64)>,
    lookup: &HashMap<EgoId, Features>,
) -> CategoryFeatureSet {
    let mut buyers: BTreeMap<u32, Vec<Purchaser>> = BTreeMap::new();
    let mut incomplete: Vec<EgoId> = Vec::new();
    for (key, ego, r) in keyed {
        let list = buyers.entry(key).or_default();
        match lookup.get(&ego) {
            Some(&(age, gender, class)) => list.push(Purchaser { r, age, gender, class }),
            None => incomplete.push(ego),
        }
    }
    incomplete.sort_unstable();
    incomplete.dedup();
    let entries: Vec<(u32, Vec<Purchaser>)> = buyers.into_iter().collect();
    let flagged = entries
        .iter()
        .filter(|(_, b)| b.is_empty())
        .map(|(k, _)| *k)
        .collect();
    let rows = entries
        .par_iter()
        .filter(|(_, b)| !b.is_empty())
        .map(|(k, b)| features_of(*k, b))
        .collect();
    CategoryFeatureSet {
        rows,
        flagged,
        incomplete_egos: incomplete.len(),
    }
}

/// Per-category average age, gender and class of purchasers, weighted by
/// purchase share.
pub fn afs(
    dists: &[PurchaseDistribution],
    profiles: &[EgoProfile],
    partition: &ClassPartition,
) -> CategoryFeatureSet {
    let lookup = feature_lookup(profiles, partition);
    pooled(
        dists
            .iter()
            .flat_map(|d| d.entries().iter().map(move |&(m, r)| (m, d.ego(), r))),
        &lookup,
    )
}

/// Feature sets of communities: an ego's share of a community is the sum of
/// its shares over the community's categories. Categories outside every
/// community are ignored.
pub fn community_afs(
    dists: &[PurchaseDistribution],
    profiles: &[EgoProfile],
    partition: &ClassPartition,
    communities: &Communities,
) -> CategoryFeatureSet {
    let lookup = feature_lookup(profiles, partition);
    let mut keyed = Vec::new();
    for d in dists {
        let mut per: BTreeMap<u32, f64> = BTreeMap::new();
        for &(m, r) in d.entries() {
            if let Some(c) = communities.community_of(m) {
                *per.entry(c as u32).or_insert(0.0) += r;
            }
        }
        keyed.extend(per.into_iter().map(|(c, r)| (c, d.ego(), r)));
    }
    pooled(keyed.into_iter(), &lookup)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Pearson {
    pub r: f64,
    /// Two-sided, from Student's t with n - 2 degrees of freedom.
    pub p: f64,
    pub n: usize,
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<Pearson> {
    if x.len() != y.len() {
        return Err(Error::InvalidInput(format!(
            "pearson: lengths differ ({} vs {})",
            x.len(),
            y.len()
        )));
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::InvalidInput(format!("pearson: need at least 3 points, got {n}")));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("pearson: non-finite value".into()));
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate("pearson: zero variance".into()));
    }
    let r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    let df = nf - 2.0;
    let p = if r.abs() == 1.0 {
        0.0
    } else {
        let t2 = r * r * df / (1.0 - r * r);
        beta_reg(df / 2.0, 0.5, df / (df + t2))
    };
    Ok(Pearson { r, p, n })
}

/// Pairwise correlations between the three averaged features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FeatureCorrelations {
    pub age_seg: Option<Pearson>,
    pub gender_seg: Option<Pearson>,
    pub age_gender: Option<Pearson>,
}

pub fn feature_correlations(set: &CategoryFeatureSet) -> FeatureCorrelations {
    let (a, g, s) = (set.ages(), set.genders(), set.segs());
    FeatureCorrelations {
        age_seg: pearson(&a, &s).ok(),
        gender_seg: pearson(&g, &s).ok(),
        age_gender: pearson(&a, &g).ok(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Gender;
    use proptest::prelude::*;

    fn profile(id: u64, age: u32, gender: Gender) -> EgoProfile {
        EgoProfile {
            id: EgoId(id),
            age,
            gender: Some(gender),
            zip: None,
        }
    }

    fn partition(classes: &[(u64, u16)]) -> ClassPartition {
        let n = classes.iter().map(|c| c.1).max().unwrap_or(1) as usize;
        ClassPartition::from_assignment(n, classes.iter().map(|&(e, c)| (EgoId(e), c)), None).unwrap()
    }

    fn dist(ego: u64, entries: &[(u32, f64)]) -> PurchaseDistribution {
        PurchaseDistribution::new_unchecked(EgoId(ego), entries.to_vec())
    }

    #[test]
    fn single_purchaser() {
        let set = afs(
            &[dist(1, &[(5411, 1.0)])],
            &[profile(1, 30, Gender::Male)],
            &partition(&[(1, 4)]),
        );
        let row = set.get(5411).unwrap();
        assert_eq!(row.age, 30.0);
        assert_eq!(row.gender, 1.0);
        assert_eq!(row.seg, 4.0);
        assert_eq!(row.n_purchasers, 1);
    }

    #[test]
    fn symmetric_pair_averages() {
        let set = afs(
            &[dist(1, &[(5411, 0.5)]), dist(2, &[(5411, 0.5)])],
            &[profile(1, 20, Gender::Female), profile(2, 40, Gender::Female)],
            &partition(&[(1, 1), (2, 1)]),
        );
        assert_eq!(set.get(5411).unwrap().age, 30.0);
        assert_eq!(set.get(5411).unwrap().gender, 0.0);
    }

    #[test]
    fn weights_follow_purchase_shares() {
        let set = afs(
            &[dist(1, &[(5411, 0.1)]), dist(2, &[(5411, 0.3)])],
            &[profile(1, 20, Gender::Female), profile(2, 40, Gender::Male)],
            &partition(&[(1, 1), (2, 2)]),
        );
        let row = set.get(5411).unwrap();
        let expect = (0.1 * 20.0 + 0.3 * 40.0) / 0.4;
        assert!((row.age - 35.0).abs() < 1e-12 && (row.age - expect).abs() < 1e-15);
        assert!((row.gender - 0.75).abs() < 1e-12);
    }

    #[test]
    fn same_value_purchasers_share_one_weight() {
        // Two 20-year-olds with r 0.1 and 0.3 average to alpha 0.2.
        let set = afs(
            &[
                dist(1, &[(5411, 0.1)]),
                dist(2, &[(5411, 0.3)]),
                dist(3, &[(5411, 0.2)]),
            ],
            &[
                profile(1, 20, Gender::Female),
                profile(2, 20, Gender::Female),
                profile(3, 50, Gender::Female),
            ],
            &partition(&[(1, 1), (2, 1), (3, 1)]),
        );
        assert!((set.get(5411).unwrap().age - 35.0).abs() < 1e-12);
    }

    #[test]
    fn incomplete_profiles_flag_categories() {
        let mut anon = profile(2, 33, Gender::Male);
        anon.gender = None;
        let set = afs(
            &[dist(1, &[(5411, 1.0)]), dist(2, &[(7011, 1.0)])],
            &[profile(1, 30, Gender::Male), anon],
            &partition(&[(1, 1), (2, 1)]),
        );
        assert_eq!(set.len(), 1);
        assert_eq!(set.flagged, vec![7011]);
        assert_eq!(set.incomplete_egos, 1);
    }

    #[test]
    fn community_pools_member_categories() {
        let comms = Communities {
            labels: vec![(5411, 1), (5412, 1), (7011, 2)],
            count: 2,
            modularity: 0.0,
            level_modularity: vec![],
        };
        let set = community_afs(
            &[
                dist(1, &[(5411, 0.2), (5412, 0.2), (7011, 0.6)]),
                dist(2, &[(5411, 1.0)]),
            ],
            &[profile(1, 20, Gender::Female), profile(2, 40, Gender::Male)],
            &partition(&[(1, 1), (2, 3)]),
            &comms,
        );
        let c1 = set.get(1).unwrap();
        assert!((c1.age - (0.4 * 20.0 + 1.0 * 40.0) / 1.4).abs() < 1e-12);
        assert_eq!(c1.n_purchasers, 2);
        assert_eq!(set.get(2).unwrap().age, 20.0);
    }

    #[test]
    fn pearson_lines() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        let p = pearson(&x, &y).unwrap();
        assert!((p.r - 1.0).abs() < 1e-14);
        assert!(p.p < 1e-12);
        let y: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &y).unwrap().r + 1.0).abs() < 1e-14);
    }

    #[test]
    fn pearson_matches_high_precision_oracle() {
        // Reference values computed at 50 significant digits.
        let x = [1.2, 2.5, 3.1, 4.8, 5.0, 6.3, 7.7, 8.1, 9.4, 10.6];
        let y = [3.0, 1.9, 4.4, 2.5, 5.9, 3.0, 6.1, 4.3, 7.0, 5.2];
        let p = pearson(&x, &y).unwrap();
        assert!((p.r - 0.650_476_599_325_463_420_52).abs() < 1e-12, "{}", p.r);
        assert!((p.p - 0.041_698_031_010_108_646_762).abs() < 1e-12, "{}", p.p);
    }

    #[test]
    fn pearson_rejects_bad_input() {
        assert!(matches!(pearson(&[1.0, 2.0], &[1.0, 2.0]), Err(Error::InvalidInput(_))));
        assert!(matches!(
            pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0]),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(
            pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(Error::Degenerate(_))
        ));
    }

    proptest! {
        #[test]
        fn pearson_affine_invariant(
            pts in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 3..40),
            a in 0.01f64..50.0, b in -100.0f64..100.0,
            c in 0.01f64..50.0, d in -100.0f64..100.0,
        ) {
            let x: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
            let Ok(base) = pearson(&x, &y) else { return Ok(()); };
            let xt: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            let yt: Vec<f64> = y.iter().map(|v| c * v + d).collect();
            let t = pearson(&xt, &yt).unwrap();
            prop_assert!((t.r - base.r).abs() < 1e-12);
            prop_assert!(t.p >= 0.0 && t.p <= 1.0);
        }

        #[test]
        fn uniform_r_gives_mean_of_distinct_values(
            ages in prop::collection::vec(18u32..90, 1..30),
            r in 0.001f64..1.0,
        ) {
            let dists: Vec<_> = (0..ages.len()).map(|i| dist(i as u64, &[(5411, r)])).collect();
            let profiles: Vec<_> = ages.iter().enumerate()
                .map(|(i, &a)| profile(i as u64, a, if i % 2 == 0 { Gender::Female } else { Gender::Male }))
                .collect();
            let classes: Vec<_> = (0..ages.len()).map(|i| (i as u64, 1u16)).collect();
            let set = afs(&dists, &profiles, &partition(&classes));
            let mut distinct = ages.clone();
            distinct.sort_unstable();
            distinct.dedup();
            let mean = distinct.iter().map(|&a| f64::from(a)).sum::<f64>() / distinct.len() as f64;
            let row = set.get(5411).unwrap();
            prop_assert!((row.age - mean).abs() < 1e-9);
            prop_assert!(row.gender >= 0.0 && row.gender <= 1.0);
            prop_assert_eq!(row.seg, 1.0);
        }
    }
}
