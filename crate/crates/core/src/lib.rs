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

//! Socioeconomic consumption-pattern analysis over coupled social and
//! transaction data.
//!
//! The pipeline runs from raw interaction and purchase logs to:
//! equal-sum socioeconomic classes ([`socioeco`]), class-level spending
//! statistics ([`consumption`]), a degree-preserving null model of the social
//! graph ([`nullmodel`]), the merchant-category co-spending network and its
//! communities ([`correlation`], [`louvain`]), and per-category demographic
//! averages with k-means clustering ([`demographics`], [`kmeans`]).
//! [`synthgen`] produces synthetic populations with planted structure.

pub(crate) mod csvio;
pub mod error;
pub mod consumption;
pub mod correlation;
pub mod demographics;
pub mod ingestion;
pub mod kmeans;
pub mod louvain;
pub mod model;
pub mod nullmodel;
pub mod pipeline;
pub mod seed;
pub mod socioeco;
pub mod svg;
pub mod synthgen;
pub mod taxonomy;

pub use error::{Error, Result};
pub use model::{
    ClassId, EgoId, EgoProfile, Gender, GroupId, Money, Month, PurchaseDistribution,
    SocialGraph, SpendingVector, Transaction, TransactionLedger, Variant,
};
pub use taxonomy::{CategoryTaxonomy, MerchantCategory};
