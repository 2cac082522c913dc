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

//! Seed splitting.
//!
//! Every random stream in the crate is a `ChaCha8Rng` seeded from
//! `derive(master, stream, index)`. The derivation runs the SplitMix64
//! finalizer over the master seed, a per-purpose stream tag and an index, so
//! replicas, restarts and generator stages get independent streams that do
//! not depend on thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags. Values are part of the reproducibility contract; do not renumber.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Wealth = 1,
    Profiles = 2,
    Edges = 3,
    Ledger = 4,
    Demographics = 5,
    Interactions = 6,
    SwapReplica = 16,
    Louvain = 17,
    KMeansRestart = 18,
    GapReference = 19,
    Shuffle = 20,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the seed of sub-stream `index` of `stream` under `master`.
pub fn derive(master: u64, stream: Stream, index: u64) -> u64 {
    let a = splitmix64(master);
    let b = splitmix64(a ^ (stream as u64).wrapping_mul(GOLDEN));
    splitmix64(b ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

pub fn rng(master: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(master, stream, index))
}
