//! Self-describing data files.
//!
//! A table is a set of equal-length named columns, the first being the axis
//! (time or frequency). Both formats carry the same header: tool and format
//! version, kind, seed, sample interval, free key-value metadata, column
//! names and units.
//!
//! Text: `#`-prefixed header lines, then one whitespace-separated row per
//! sample. Values are printed in shortest round-trip exponent form, so a
//! text file reads back bit-exactly.
//!
//! Binary: the magic `PSYNCBIN`, a little-endian `u32` format version, a
//! `u32` header length and the header text, a `u64` row count, a `u32`
//! column count, then row-major little-endian `f64` values.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::scenario::DataFormat;
use crate::series::{TimeSeries, Unit};

/// Version of both file layouts.
pub const FORMAT_VERSION: u32 = 1;
/// Version of the tool that wrote a file.
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
const MAGIC: &[u8; 8] = b"PSYNCBIN";

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub unit: Unit,
    pub values: Vec<f64>,
}

impl Column {
    pub fn new(name: impl Into<String>, unit: Unit, values: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            unit,
            values,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    /// What produced the table, e.g. `simulate` or `psd`.
    pub kind: String,
    pub seed: Option<u64>,
    /// Sample interval of time tables, s.
    pub dt: Option<f64>,
    /// Extra header entries in insertion order. Keys hold no whitespace or `:`.
    pub meta: Vec<(String, String)>,
    pub columns: Vec<Column>,
}

impl Table {
    pub fn new(kind: impl Into<String>) -> Self {
        Self {
            kind: kind.into(),
            seed: None,
            dt: None,
            meta: Vec::new(),
            columns: Vec::new(),
        }
    }

    /// Time table of equally sampled series, with a leading `time` column.
    pub fn from_series(kind: impl Into<String>, series: &[(&str, &TimeSeries)]) -> Result<Self> {
        let (_, first) = series
            .first()
            .ok_or_else(|| crate::error::invalid("series", "a table needs at least one series"))?;
        let dt = first.dt();
        for (_, s) in series {
            crate::series::check_compatible(first, s)?;
        }
        let mut t = Self::new(kind);
        t.dt = Some(dt);
        t.columns.push(Column::new("time", Unit::Seconds, first.times()));
        for (name, s) in series {
            t.columns.push(Column::new(*name, s.unit(), s.samples().to_vec()));
        }
        Ok(t)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.push((key.to_string(), value.to_string()));
        self
    }

    /// Appends a column; its length must match the existing ones.
    pub fn push(&mut self, column: Column) -> Result<()> {
        if let Some(c) = self.columns.first() {
            if c.values.len() != column.values.len() {
                return Err(Error::LengthMismatch {
                    what: "table column",
                    left: c.values.len(),
                    right: column.values.len(),
                });
            }
        }
        self.columns.push(column);
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.columns.first().map_or(0, |c| c.values.len())
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Column `name` as a series sampled at the table's `dt`.
    pub fn series(&self, name: &str) -> Result<TimeSeries> {
        let dt = self.dt.ok_or_else(|| Error::Format("table has no sample interval".into()))?;
        let c = self
            .column(name)
            .ok_or_else(|| Error::Format(format!("no column `{name}`")))?;
        TimeSeries::new(dt, c.values.clone(), c.unit)
    }

    fn validate(&self) -> Result<()> {
        if self.columns.is_empty() {
            return Err(Error::Format("table has no columns".into()));
        }
        let n = self.rows();
        for c in &self.columns {
            if c.values.len() != n {
                return Err(Error::LengthMismatch {
                    what: "table column",
                    left: n,
                    right: c.values.len(),
                });
            }
            if c.name.is_empty() || c.name.contains(char::is_whitespace) {
                return Err(Error::Format(format!("column name `{}` must be a single word", c.name)));
            }
        }
        for (k, v) in &self.meta {
            if k.is_empty() || k.contains(|ch: char| ch.is_whitespace() || ch == ':') || v.contains('\n') {
                return Err(Error::Format(format!("bad header entry `{k}`")));
            }
        }
        if self.kind.contains(char::is_whitespace) {
            return Err(Error::Format("kind must be a single word".into()));
        }
        Ok(())
    }

    fn header(&self) -> String {
        let mut h = String::new();
        let _ = writeln!(h, "# phasesync {TOOL_VERSION} format {FORMAT_VERSION}");
        let _ = writeln!(h, "# kind: {}", self.kind);
        if let Some(s) = self.seed {
            let _ = writeln!(h, "# seed: {s}");
        }
        if let Some(dt) = self.dt {
            let _ = writeln!(h, "# dt: {dt:e}");
        }
        for (k, v) in &self.meta {
            let _ = writeln!(h, "# {k}: {v}");
        }
        let names: Vec<&str> = self.columns.iter().map(|c| c.name.as_str()).collect();
        let units: Vec<String> = self.columns.iter().map(|c| c.unit.to_string()).collect();
        let _ = writeln!(h, "# columns: {}", names.join(" "));
        let _ = writeln!(h, "# units: {}", units.join(" "));
        h
    }

    /// Text rendering.
    pub fn to_text(&self) -> Result<String> {
        self.validate()?;
        let mut out = self.header();
        let mut line = String::new();
        for r in 0..self.rows() {
            line.clear();
            for (i, c) in self.columns.iter().enumerate() {
                if i > 0 {
                    line.push(' ');
                }
                let _ = write!(line, "{:e}", c.values[r]);
            }
            out.push_str(&line);
            out.push('\n');
        }
        Ok(out)
    }

    /// Binary rendering.
    pub fn to_binary(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let header = self.header();
        let cols = self.columns.len();
        let rows = self.rows();
        let mut out = Vec::with_capacity(32 + header.len() + 8 * rows * cols);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        out.extend_from_slice(&(rows as u64).to_le_bytes());
        out.extend_from_slice(&(cols as u32).to_le_bytes());
        for r in 0..rows {
            for c in &self.columns {
                out.extend_from_slice(&c.values[r].to_le_bytes());
            }
        }
        Ok(out)
    }

    /// Parses either format, recognised by the binary magic.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.starts_with(MAGIC) {
            parse_binary(bytes)
        } else {
            let text = std::str::from_utf8(bytes).map_err(|_| Error::Format("text file is not UTF-8".into()))?;
            parse_text(text)
        }
    }
}

struct Header {
    kind: String,
    seed: Option<u64>,
    dt: Option<f64>,
    meta: Vec<(String, String)>,
    names: Vec<String>,
    units: Vec<Unit>,
}

fn parse_header<'a>(lines: impl Iterator<Item = &'a str>) -> Result<Header> {
    let mut lines = lines;
    let first = lines.next().ok_or_else(|| Error::Format("empty file".into()))?;
    let words: Vec<&str> = first.trim_start_matches('#').split_whitespace().collect();
    match words.as_slice() {
        ["phasesync", _, "format", v] => {
            let v: u32 = v.parse().map_err(|_| Error::Format(format!("bad format version `{v}`")))?;
            if v != FORMAT_VERSION {
                return Err(Error::Format(format!("unsupported format version {v}")));
            }
        }
        _ => return Err(Error::Format("missing `# phasesync <version> format <n>` line".into())),
    }
    let mut h = Header {
        kind: String::new(),
        seed: None,
        dt: None,
        meta: Vec::new(),
        names: Vec::new(),
        units: Vec::new(),
    };
    for line in lines {
        let body = line
            .strip_prefix('#')
            .ok_or_else(|| Error::Format(format!("header line without `#`: `{line}`")))?;
        let (k, v) = body
            .split_once(':')
            .ok_or_else(|| Error::Format(format!("header line without `key: value`: `{line}`")))?;
        let (k, v) = (k.trim(), v.trim());
        let num = |what: &str| Error::Format(format!("bad {what} `{v}`"));
        match k {
            "kind" => h.kind = v.to_string(),
            "seed" => h.seed = Some(v.parse().map_err(|_| num("seed"))?),
            "dt" => h.dt = Some(v.parse().map_err(|_| num("dt"))?),
            "columns" => h.names = v.split_whitespace().map(str::to_string).collect(),
            "units" => h.units = v.split_whitespace().map(Unit::from_str).collect::<Result<_>>()?,
            _ => h.meta.push((k.to_string(), v.to_string())),
        }
    }
    if h.names.is_empty() {
        return Err(Error::Format("header lists no columns".into()));
    }
    if h.units.len() != h.names.len() {
        return Err(Error::Format(format!(
            "{} column names but {} units",
            h.names.len(),
            h.units.len()
        )));
    }
    Ok(h)
}

fn assemble(h: Header, values: Vec<Vec<f64>>) -> Table {
    Table {
        kind: h.kind,
        seed: h.seed,
        dt: h.dt,
        meta: h.meta,
        columns: h
            .names
            .into_iter()
            .zip(h.units)
            .zip(values)
            .map(|((name, unit), values)| Column { name, unit, values })
            .collect(),
    }
}

fn parse_text(text: &str) -> Result<Table> {
    let header_end = text.lines().take_while(|l| l.starts_with('#')).count();
    let h = parse_header(text.lines().take(header_end))?;
    let mut values = vec![Vec::new(); h.names.len()];
    for (i, line) in text.lines().skip(header_end).enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut n = 0;
        for (c, w) in line.split_whitespace().enumerate() {
            let col = values
                .get_mut(c)
                .ok_or_else(|| Error::Format(format!("row {i} has more than {} values", h.names.len())))?;
            col.push(w.parse().map_err(|_| Error::Format(format!("row {i}: bad number `{w}`")))?);
            n += 1;
        }
        if n != h.names.len() {
            return Err(Error::Format(format!("row {i} has {n} values, expected {}", h.names.len())));
        }
    }
    Ok(assemble(h, values))
}

fn parse_binary(bytes: &[u8]) -> Result<Table> {
    let mut at = MAGIC.len();
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = bytes
            .get(at..at + n)
            .ok_or_else(|| Error::Format("binary file truncated".into()))?;
        at += n;
        Ok(s)
    };
    let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().expect("4 bytes"));
    let version = u32_at(take(4)?);
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported format version {version}")));
    }
    let hlen = u32_at(take(4)?) as usize;
    let header = std::str::from_utf8(take(hlen)?).map_err(|_| Error::Format("header is not UTF-8".into()))?;
    let h = parse_header(header.lines())?;
    let rows = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes")) as usize;
    let cols = u32_at(take(4)?) as usize;
    if cols != h.names.len() {
        return Err(Error::Format(format!("{cols} columns stored but header lists {}", h.names.len())));
    }
    let data = take(rows.checked_mul(cols).and_then(|n| n.checked_mul(8)).ok_or_else(|| Error::Format("size overflow".into()))?)?;
    let mut values = vec![Vec::with_capacity(rows); cols];
    for (i, chunk) in data.chunks_exact(8).enumerate() {
        values[i % cols].push(f64::from_le_bytes(chunk.try_into().expect("8 bytes")));
    }
    if at != bytes.len() {
        return Err(Error::Format("trailing bytes after data".into()));
    }
    Ok(assemble(h, values))
}

/// File extension used for `format`.
pub fn extension(format: DataFormat) -> &'static str {
    match format {
        DataFormat::Text => "txt",
        DataFormat::Binary => "bin",
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `table` to `path` in `format`.
pub fn write_table(path: &Path, table: &Table, format: DataFormat) -> Result<()> {
    let bytes = match format {
        DataFormat::Text => table.to_text()?.into_bytes(),
        DataFormat::Binary => table.to_binary()?,
    };
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(&bytes).map_err(io_err(path))?;
    Ok(())
}

/// Reads a table written in either format.
pub fn read_table(path: &Path) -> Result<Table> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Table::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Table {
        let a = TimeSeries::new(1e-4, vec![0.1, -2.5e-17, f64::MAX, 1.0 / 3.0], Unit::Rad).unwrap();
        let b = TimeSeries::new(1e-4, vec![1.0, 2.0, 3.0, 4.0], Unit::Hz).unwrap();
        Table::from_series("test", &[("a", &a), ("b", &b)])
            .unwrap()
            .with_seed(42)
            .with_meta("note", "two series")
    }

    #[test]
    fn text_round_trip_is_exact() {
        let t = sample();
        let back = Table::from_bytes(t.to_text().unwrap().as_bytes()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn binary_round_trip_is_exact() {
        let t = sample();
        let bytes = t.to_binary().unwrap();
        assert!(bytes.starts_with(MAGIC));
        assert_eq!(Table::from_bytes(&bytes).unwrap(), t);
    }

    #[test]
    fn header_describes_the_data() {
        let text = sample().to_text().unwrap();
        let head: Vec<&str> = text.lines().take(7).collect();
        assert_eq!(head[0], format!("# phasesync {TOOL_VERSION} format 1"));
        assert!(head.contains(&"# seed: 42"));
        assert!(head.contains(&"# dt: 1e-4"));
        assert!(head.contains(&"# columns: time a b"));
        assert!(head.contains(&"# units: s rad Hz"));
    }

    #[test]
    fn truncated_binary_is_rejected() {
        let bytes = sample().to_binary().unwrap();
        assert!(matches!(Table::from_bytes(&bytes[..bytes.len() - 3]), Err(Error::Format(_))));
    }

    #[test]
    fn ragged_text_is_rejected() {
        let text = "# phasesync 0.1.0 format 1\n# columns: x y\n# units: s rad\n1 2\n3\n";
        assert!(matches!(Table::from_bytes(text.as_bytes()), Err(Error::Format(_))));
    }

    #[test]
    fn series_comes_back() {
        let t = sample();
        let s = t.series("b").unwrap();
        assert_eq!(s.dt(), 1e-4);
        assert_eq!(s.unit(), Unit::Hz);
        assert_eq!(s.samples(), &[1.0, 2.0, 3.0, 4.0]);
    }
}
