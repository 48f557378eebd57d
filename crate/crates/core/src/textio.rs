//! Shared helpers for the versioned line-oriented text formats.
//!
//! Reals are written with 17 significant digits so that a save/load cycle
//! reproduces every `f64` bit for bit.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};

pub(crate) fn fmt_f64(x: f64) -> String {
    format!("{:.16e}", x)
}

pub(crate) fn push_row(out: &mut String, values: &[f64]) {
    let mut first = true;
    for v in values {
        if !first {
            out.push(' ');
        }
        first = false;
        let _ = write!(out, "{:.16e}", v);
    }
    out.push('\n');
}

/// Line cursor that remembers line numbers for diagnostics. Blank lines and
/// lines starting with `#` are skipped.
pub(crate) struct Records<'a> {
    name: String,
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
    last_line: usize,
}

impl<'a> Records<'a> {
    pub(crate) fn new(name: impl Into<String>, text: &'a str) -> Self {
        Self {
            name: name.into(),
            lines: text.lines().enumerate(),
            last_line: 0,
        }
    }

    pub(crate) fn error(&self, line: usize, msg: impl Into<String>) -> Error {
        Error::Parse {
            source_name: self.name.clone(),
            line,
            msg: msg.into(),
        }
    }

    pub(crate) fn next_record(&mut self) -> Result<(usize, &'a str)> {
        self.try_next().ok_or_else(|| {
            let line = self.last_line + 1;
            self.error(line, "unexpected end of file")
        })
    }

    pub(crate) fn try_next(&mut self) -> Option<(usize, &'a str)> {
        for (idx, line) in self.lines.by_ref() {
            self.last_line = idx + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            return Some((idx + 1, trimmed));
        }
        None
    }

    pub(crate) fn expect_header(&mut self, header: &str) -> Result<()> {
        let (line, text) = self.next_record()?;
        if text != header {
            return Err(self.error(line, format!("expected header `{header}`, found `{text}`")));
        }
        Ok(())
    }

    pub(crate) fn floats(&mut self, n: usize) -> Result<Vec<f64>> {
        let (line, text) = self.next_record()?;
        self.parse_floats_at(line, text, n)
    }

    pub(crate) fn parse_floats_at(&self, line: usize, text: &str, n: usize) -> Result<Vec<f64>> {
        let values = text
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>()
                    .map_err(|_| self.error(line, format!("invalid number `{tok}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if values.len() != n {
            return Err(self.error(line, format!("expected {n} values, found {}", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(self.error(line, "non-finite value"));
        }
        Ok(values)
    }

    pub(crate) fn value<T: FromStr>(&mut self) -> Result<T> {
        let (line, text) = self.next_record()?;
        text.parse::<T>()
            .map_err(|_| self.error(line, format!("invalid value `{text}`")))
    }

    /// Reads a `key value...` line and returns the remainder after the key.
    pub(crate) fn keyed(&mut self, key: &str) -> Result<(usize, &'a str)> {
        let (line, text) = self.next_record()?;
        match text.split_once(char::is_whitespace) {
            Some((k, rest)) if k == key => Ok((line, rest.trim())),
            _ if text == key => Ok((line, "")),
            _ => Err(self.error(line, format!("expected `{key}` record, found `{text}`"))),
        }
    }

    pub(crate) fn keyed_value<T: FromStr>(&mut self, key: &str) -> Result<T> {
        let (line, rest) = self.keyed(key)?;
        rest.parse::<T>()
            .map_err(|_| self.error(line, format!("invalid value `{rest}` for `{key}`")))
    }

    pub(crate) fn keyed_floats(&mut self, key: &str, n: usize) -> Result<Vec<f64>> {
        let (line, rest) = self.keyed(key)?;
        self.parse_floats_at(line, rest, n)
    }
}
