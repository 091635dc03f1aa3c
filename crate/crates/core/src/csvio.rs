//! Small CSV helpers shared by every table the tools emit.
//!
//! Each file may start with `#` comment lines carrying run metadata; readers
//! skip them.

use std::io::{Read, Write};

use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CsvMeta {
    pub seed: u64,
    pub config_hash: String,
}

pub fn write_meta<W: Write>(mut w: W, meta: &CsvMeta) -> Result<()> {
    writeln!(w, "# seed={} config_sha256={}", meta.seed, meta.config_hash)?;
    Ok(())
}

/// Writes a header row and data rows.
pub fn write_table<W: Write, S: AsRef<str>>(
    w: W,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<S>>,
) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(header)?;
    for row in rows {
        wr.write_record(row.iter().map(|s| s.as_ref()))?;
    }
    wr.flush()?;
    Ok(())
}

/// Header and rows, skipping comment lines.
pub fn read_table<R: Read>(r: R) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut rd = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
    let header = rd.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in rd.records() {
        rows.push(rec?.iter().map(str::to_string).collect());
    }
    Ok((header, rows))
}

/// Parses the metadata comment if present.
pub fn read_meta(text: &str) -> Option<CsvMeta> {
    let line = text.lines().find(|l| l.starts_with("# seed="))?;
    let mut seed = None;
    let mut hash = None;
    for tok in line.trim_start_matches('#').split_whitespace() {
        if let Some(v) = tok.strip_prefix("seed=") {
            seed = v.parse().ok();
        } else if let Some(v) = tok.strip_prefix("config_sha256=") {
            hash = Some(v.to_string());
        }
    }
    Some(CsvMeta {
        seed: seed?,
        config_hash: hash?,
    })
}

/// Everything except comment lines.
pub fn body(text: &str) -> String {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .flat_map(|l| [l, "\n"])
        .collect()
}
