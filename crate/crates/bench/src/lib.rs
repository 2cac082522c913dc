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

//! Shared fixtures for the benchmarks.

use conspat_core::correlation::{purchase_distributions, Distributions, DEFAULT_MIN_PURCHASES};
use conspat_core::synthgen::{generate, SynthConfig, SyntheticCorpus};
use conspat_core::CategoryTaxonomy;

/// Synthetic corpus with default generator settings.
pub fn corpus(n_egos: usize, seed: u64) -> SyntheticCorpus {
    let cfg = SynthConfig {
        n_egos,
        seed,
        ..SynthConfig::default()
    };
    generate(&cfg, &CategoryTaxonomy::bundled()).expect("valid generator config")
}

pub fn distributions(corpus: &SyntheticCorpus) -> Distributions {
    purchase_distributions(&corpus.ledger, &CategoryTaxonomy::bundled(), DEFAULT_MIN_PURCHASES)
}
