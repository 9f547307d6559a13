//! Staged output: everything is rendered in memory first, then each file is
//! written to a temporary sibling and renamed into place.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use tempfile::NamedTempFile;

use crate::Failure;

#[derive(Debug, Default)]
pub struct Staged {
    files: Vec<(String, Vec<u8>)>,
}

/// 17 significant digits, so every value round-trips.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

impl Staged {
    /// Numeric table: a time column followed by `row`.
    pub fn csv<'a, I>(&mut self, name: &str, header: &[String], rows: I)
    where
        I: IntoIterator<Item = (f64, &'a [f64])>,
    {
        let lines = rows.into_iter().map(|(t, row)| {
            let mut s = fmt_f64(t);
            for v in row {
                s.push(',');
                s.push_str(&fmt_f64(*v));
            }
            s
        });
        self.csv_lines(name, header, lines);
    }

    /// Rows already rendered as comma-separated text.
    pub fn csv_lines<I: IntoIterator<Item = String>>(&mut self, name: &str, header: &[String], lines: I) {
        let mut s = header.join(",");
        s.push('\n');
        for line in lines {
            s.push_str(&line);
            s.push('\n');
        }
        self.files.push((name.to_owned(), s.into_bytes()));
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) {
        let mut s = serde_json::to_string_pretty(value).expect("reports serialize");
        s.push('\n');
        self.files.push((name.to_owned(), s.into_bytes()));
    }

    pub fn commit(self, dir: &Path) -> Result<Vec<PathBuf>, Failure> {
        let io = |e: std::io::Error| Failure::Config(format!("cannot write to {}: {e}", dir.display()));
        std::fs::create_dir_all(dir).map_err(io)?;
        let mut written = Vec::new();
        for (name, bytes) in self.files {
            let mut tmp = NamedTempFile::new_in(dir).map_err(io)?;
            tmp.write_all(&bytes).map_err(io)?;
            tmp.as_file().sync_all().map_err(io)?;
            let dest = dir.join(&name);
            tmp.persist(&dest).map_err(|e| io(e.error))?;
            written.push(dest);
        }
        Ok(written)
    }
}

pub fn indexed(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (1..=n).map(move |i| format!("{prefix}{i}"))
}

pub fn matrix_header(prefix: &str, n: usize) -> Vec<String> {
    let mut out = Vec::with_capacity(n * n);
    for i in 1..=n {
        for j in 1..=n {
            let mut s = String::from(prefix);
            let _ = write!(s, "{i}_{j}");
            out.push(s);
        }
    }
    out
}
