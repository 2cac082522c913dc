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

//! Merchant category taxonomy and its grouping into purchase category groups.
//!
//! The taxonomy file has the columns `mcc,name,pcg_id,pcg_name,is_cash`. A
//! group's name may be given on any of its rows; every referenced group must
//! be named at least once, and all `is_cash` rows must share one group. The
//! bundled default lists 271 categories plus the cash/transfer category 24.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::model::GroupId;

const BUNDLED: &str = include_str!("../data/taxonomy.csv");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MerchantCategory {
    pub mcc: u32,
    pub name: String,
    pub pcg: Option<GroupId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoryTaxonomy {
    categories: BTreeMap<u32, MerchantCategory>,
    pcg_names: BTreeMap<GroupId, String>,
    cash_group: GroupId,
}

#[derive(Debug, Deserialize)]
struct Row {
    mcc: u32,
    name: String,
    pcg_id: Option<u16>,
    pcg_name: Option<String>,
    is_cash: Option<String>,
}

fn parse_flag(raw: Option<&str>, row: usize) -> Result<bool> {
    match raw.map(str::trim).unwrap_or("") {
        "" | "0" | "false" | "no" => Ok(false),
        "1" | "true" | "yes" => Ok(true),
        other => Err(Error::TaxonomyRow {
            row,
            reason: format!("invalid is_cash value {other:?}"),
        }),
    }
}

impl CategoryTaxonomy {
    pub fn new(
        categories: impl IntoIterator<Item = MerchantCategory>,
        pcg_names: BTreeMap<GroupId, String>,
        cash_group: GroupId,
    ) -> Result<Self> {
        let mut map = BTreeMap::new();
        for c in categories {
            if c.name.trim().is_empty() {
                return Err(Error::TaxonomyRow {
                    row: 0,
                    reason: format!("category {} has an empty name", c.mcc),
                });
            }
            if let Some(pcg) = c.pcg {
                if !pcg_names.contains_key(&pcg) {
                    return Err(Error::UnknownGroup { mcc: c.mcc, pcg: pcg.0 });
                }
            }
            let mcc = c.mcc;
            if map.insert(mcc, c).is_some() {
                return Err(Error::DuplicateMcc(mcc));
            }
        }
        if map.is_empty() {
            return Err(Error::EmptyTaxonomy);
        }
        if !pcg_names.contains_key(&cash_group) {
            return Err(Error::CashGroup(0));
        }
        Ok(CategoryTaxonomy {
            categories: map,
            pcg_names,
            cash_group,
        })
    }

    /// The taxonomy shipped with the crate.
    pub fn bundled() -> Self {
        Self::from_reader(BUNDLED.as_bytes()).expect("bundled taxonomy is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingInput(path.to_path_buf()),
            _ => Error::io(path, e),
        })?;
        Self::from_reader(file)
    }

    pub fn from_reader(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut categories = Vec::new();
        let mut pcg_names: BTreeMap<GroupId, String> = BTreeMap::new();
        let mut cash_groups: Vec<GroupId> = Vec::new();
        for (i, rec) in rdr.deserialize::<Row>().enumerate() {
            let row = i + 2;
            let rec = rec?;
            let pcg = rec.pcg_id.map(GroupId);
            if let (Some(g), Some(name)) = (pcg, rec.pcg_name.as_deref()) {
                if !name.is_empty() {
                    match pcg_names.get(&g) {
                        Some(prev) if prev != name => {
                            return Err(Error::TaxonomyRow {
                                row,
                                reason: format!("group {g} named both {prev:?} and {name:?}"),
                            })
                        }
                        _ => {
                            pcg_names.insert(g, name.to_string());
                        }
                    }
                }
            }
            if parse_flag(rec.is_cash.as_deref(), row)? {
                let g = pcg.ok_or_else(|| Error::TaxonomyRow {
                    row,
                    reason: "cash category without a group".into(),
                })?;
                if !cash_groups.contains(&g) {
                    cash_groups.push(g);
                }
            }
            categories.push(MerchantCategory {
                mcc: rec.mcc,
                name: rec.name,
                pcg,
            });
        }
        if categories.is_empty() {
            return Err(Error::EmptyTaxonomy);
        }
        if cash_groups.len() != 1 {
            return Err(Error::CashGroup(cash_groups.len()));
        }
        Self::new(categories, pcg_names, cash_groups[0])
    }

    pub fn to_writer(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .quote_style(csv::QuoteStyle::NonNumeric)
            .from_writer(writer);
        w.write_record(["mcc", "name", "pcg_id", "pcg_name", "is_cash"])?;
        for c in self.categories.values() {
            let (id, name) = match c.pcg {
                Some(g) => (g.0.to_string(), self.pcg_names[&g].clone()),
                None => (String::new(), String::new()),
            };
            let cash = if c.pcg == Some(self.cash_group) { "1" } else { "0" };
            w.write_record([c.mcc.to_string().as_str(), &c.name, &id, &name, cash])?;
        }
        w.flush().map_err(|e| Error::io("<taxonomy writer>", e))?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.to_writer(file)
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn get(&self, mcc: u32) -> Option<&MerchantCategory> {
        self.categories.get(&mcc)
    }

    pub fn categories(&self) -> impl Iterator<Item = &MerchantCategory> {
        self.categories.values()
    }

    /// Group of a category; `None` for unknown or ungrouped codes.
    pub fn pcg_of(&self, mcc: u32) -> Option<GroupId> {
        self.categories.get(&mcc).and_then(|c| c.pcg)
    }

    pub fn is_cash(&self, mcc: u32) -> bool {
        self.pcg_of(mcc) == Some(self.cash_group)
    }

    pub fn cash_group(&self) -> GroupId {
        self.cash_group
    }

    pub fn group_name(&self, g: GroupId) -> Option<&str> {
        self.pcg_names.get(&g).map(String::as_str)
    }

    pub fn groups(&self) -> impl Iterator<Item = (GroupId, &str)> {
        self.pcg_names.iter().map(|(g, n)| (*g, n.as_str()))
    }

    pub fn non_cash_count(&self) -> usize {
        self.categories
            .values()
            .filter(|c| c.pcg != Some(self.cash_group))
            .count()
    }

    /// Non-cash categories of a group, ascending by code.
    pub fn members(&self, g: GroupId) -> Vec<u32> {
        self.categories
            .values()
            .filter(|c| c.pcg == Some(g))
            .map(|c| c.mcc)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "mcc,name,pcg_id,pcg_name,is_cash\n";

    #[test]
    fn bundled_has_271_non_cash_categories() {
        let t = CategoryTaxonomy::bundled();
        assert_eq!(t.non_cash_count(), 271);
        assert_eq!(t.len(), 272);
        assert_eq!(t.groups().count(), 28);
    }

    #[test]
    fn pcg_lookups() {
        let t = CategoryTaxonomy::bundled();
        assert_eq!(t.pcg_of(24), Some(t.cash_group()));
        assert!(t.is_cash(24));
        assert_eq!(t.pcg_of(99999), None);
        let g = t.pcg_of(5411).unwrap();
        assert_eq!(t.group_name(g), Some("Retail Stores"));
        assert!(!t.is_cash(5411));
    }

    #[test]
    fn empty_taxonomy_rejected() {
        let err = CategoryTaxonomy::from_reader(HEADER.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::EmptyTaxonomy));
        assert_eq!(err.to_string(), "empty taxonomy");
    }

    #[test]
    fn duplicate_code_rejected() {
        let src = format!(
            "{HEADER}24,\"Cash\",1,\"Service Providers\",1\n\
             742,\"Veterinary Serv.\",8,\"Professional Services\",0\n\
             742,\"Veterinary Serv.\",8,\"Professional Services\",0\n"
        );
        let err = CategoryTaxonomy::from_reader(src.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::DuplicateMcc(742)), "{err}");
    }

    #[test]
    fn unknown_group_rejected() {
        let src = format!(
            "{HEADER}24,\"Cash\",1,\"Service Providers\",1\n742,\"Veterinary Serv.\",8,,0\n"
        );
        let err = CategoryTaxonomy::from_reader(src.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::UnknownGroup { mcc: 742, pcg: 8 }), "{err}");
    }

    #[test]
    fn cash_group_must_be_unique() {
        let none = format!("{HEADER}742,\"Vet\",8,\"Prof\",0\n");
        assert!(matches!(
            CategoryTaxonomy::from_reader(none.as_bytes()).unwrap_err(),
            Error::CashGroup(0)
        ));
        let two = format!("{HEADER}24,\"Cash\",1,\"SP\",1\n6011,\"ATM\",2,\"ATM\",1\n");
        assert!(matches!(
            CategoryTaxonomy::from_reader(two.as_bytes()).unwrap_err(),
            Error::CashGroup(2)
        ));
    }

    #[test]
    fn bundled_round_trips() {
        let t = CategoryTaxonomy::bundled();
        let mut buf = Vec::new();
        t.to_writer(&mut buf).unwrap();
        assert_eq!(CategoryTaxonomy::from_reader(buf.as_slice()).unwrap(), t);
    }
}
