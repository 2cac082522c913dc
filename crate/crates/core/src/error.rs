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

use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing input file {}", .0.display())]
    MissingInput(PathBuf),

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("empty taxonomy")]
    EmptyTaxonomy,

    #[error("duplicate merchant category code {0}")]
    DuplicateMcc(u32),

    #[error("unknown purchase category group {pcg} referenced by mcc {mcc}")]
    UnknownGroup { mcc: u32, pcg: u16 },

    #[error("malformed taxonomy row {row}: {reason}")]
    TaxonomyRow { row: usize, reason: String },

    #[error("taxonomy must designate exactly one cash group, found {0}")]
    CashGroup(usize),

    #[error("{}: {malformed} of {rows} rows malformed (more than 10%)", path.display())]
    TooManyMalformed {
        path: PathBuf,
        malformed: usize,
        rows: usize,
    },

    #[error("no identifiers shared between {0}")]
    EmptyJoin(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("undefined result: {0}")]
    Degenerate(String),

    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
