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

use std::fs::File;
use std::io::{BufWriter, ErrorKind};
use std::path::Path;

use crate::error::{Error, Result};

pub(crate) fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| match e.kind() {
        ErrorKind::NotFound => Error::MissingInput(path.to_path_buf()),
        _ => Error::io(path, e),
    })
}

pub(crate) fn reader(path: &Path) -> Result<csv::Reader<File>> {
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(open(path)?))
}

/// Fails unless the header row starts with `expected`.
pub(crate) fn check_header<R: std::io::Read>(
    rdr: &mut csv::Reader<R>,
    expected: &[&str],
    label: &str,
) -> Result<()> {
    let headers = rdr.headers()?;
    let ok = headers.len() >= expected.len()
        && expected.iter().zip(headers.iter()).all(|(e, h)| *e == h);
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "{label}: expected header {}, found {}",
            expected.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )))
    }
}

pub(crate) fn writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::WriterBuilder::new().from_writer(BufWriter::new(file)))
}

pub(crate) fn finish<W: std::io::Write>(mut w: csv::Writer<W>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

/// Shortest round-trip text for a float; missing values print as empty cells.
pub(crate) fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}
