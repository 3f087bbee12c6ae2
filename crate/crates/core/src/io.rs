// SPDX-License-Identifier: MIT OR Apache-2.0

//! Delimited-text ingestion and report serialisation.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::detector::{ChangepointSet, PlotData, TestReport};
use crate::error::{Error, Result};
use crate::rca::TimeSeries;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ColumnSel {
    /// Zero-based field index.
    Index(usize),
    /// Header name; requires a header row.
    Name(String),
}

impl FromStr for ColumnSel {
    type Err = std::convert::Infallible;

    /// All-digit text is an index, anything else a header name.
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s.parse::<usize>() {
            Ok(i) => ColumnSel::Index(i),
            Err(_) => ColumnSel::Name(s.to_string()),
        })
    }
}

impl fmt::Display for ColumnSel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ColumnSel::Index(i) => write!(f, "{i}"),
            ColumnSel::Name(n) => f.write_str(n),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    #[default]
    None,
    /// `ln x`, needs `x > 0`.
    Log,
    /// `ln x_i - ln x_{i-1}`; one value shorter.
    LogDiff,
    /// `ln(1 + x)`, needs `x >= 0`.
    LogPlusOne,
}

impl FromStr for Transform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "none" => Ok(Transform::None),
            "log" => Ok(Transform::Log),
            "logdiff" => Ok(Transform::LogDiff),
            "logplusone" | "log1p" => Ok(Transform::LogPlusOne),
            _ => Err(Error::InvalidParameter(format!(
                "unknown transform '{s}' (none, log, log-diff, log-plus-one)"
            ))),
        }
    }
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Transform::None => "none",
            Transform::Log => "log",
            Transform::LogDiff => "log-diff",
            Transform::LogPlusOne => "log-plus-one",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSpec {
    pub path: PathBuf,
    pub column: ColumnSel,
    pub transform: Transform,
    pub date_column: Option<ColumnSel>,
}

impl IngestSpec {
    pub fn new(path: impl Into<PathBuf>, column: ColumnSel) -> Self {
        Self {
            path: path.into(),
            column,
            transform: Transform::None,
            date_column: None,
        }
    }

    pub fn with_transform(mut self, transform: Transform) -> Self {
        self.transform = transform;
        self
    }

    pub fn with_dates(mut self, column: ColumnSel) -> Self {
        self.date_column = Some(column);
        self
    }
}

/// A loaded series with the labels of its observations.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedSeries {
    pub series: TimeSeries,
    /// One label per value of `series`, when a date column was given.
    pub dates: Option<Vec<String>>,
    /// Source line number of every value (1-based).
    pub lines: Vec<usize>,
    pub delimiter: u8,
    pub has_header: bool,
}

fn data_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Data {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Picks the most frequent of comma, semicolon and tab on the first data line.
fn detect_delimiter(path: &Path) -> Result<u8> {
    let reader = BufReader::new(File::open(path)?);
    for line in reader.lines() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let count = |c: char| line.matches(c).count();
        let best = [(b',', count(',')), (b';', count(';')), (b'\t', count('\t'))]
            .into_iter()
            .max_by_key(|&(_, n)| n)
            .expect("non-empty");
        return Ok(if best.1 == 0 { b',' } else { best.0 });
    }
    Err(data_err(path, 1, "no data rows"))
}

fn parse_number(s: &str) -> Option<f64> {
    let v: f64 = s.trim().parse().ok()?;
    v.is_finite().then_some(v)
}

fn resolve(sel: &ColumnSel, header: Option<&csv::StringRecord>, path: &Path) -> Result<usize> {
    match sel {
        ColumnSel::Index(i) => Ok(*i),
        ColumnSel::Name(name) => {
            let h = header.ok_or_else(|| {
                data_err(
                    path,
                    1,
                    format!("column '{name}' given but the file has no header"),
                )
            })?;
            h.iter()
                .position(|f| f.trim() == name)
                .ok_or_else(|| data_err(path, 1, format!("no column named '{name}'")))
        }
    }
}

/// Reads one numeric column, applies the transform, and labels the series
/// `path:column` (plus the transform when there is one).
pub fn load_series(spec: &IngestSpec) -> Result<LoadedSeries> {
    let path = spec.path.as_path();
    if !path.exists() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{}: no such file", path.display()),
        )));
    }
    let delimiter = detect_delimiter(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .from_path(path)?;

    let mut records = reader.records();
    let mut raw: Vec<(usize, csv::StringRecord)> = Vec::new();
    for rec in &mut records {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            data_err(path, line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.iter().all(|f| f.trim().is_empty()) {
            continue;
        }
        raw.push((line, rec));
    }
    let Some((first_line, first)) = raw.first().cloned() else {
        return Err(data_err(path, 1, "no data rows"));
    };
    // a header is present when a name is requested or the value cell is not numeric
    let has_header = match &spec.column {
        ColumnSel::Name(_) => true,
        ColumnSel::Index(i) => first.get(*i).and_then(parse_number).is_none(),
    };
    let header = has_header.then_some(&first);
    let col = resolve(&spec.column, header, path)?;
    let date_col = spec
        .date_column
        .as_ref()
        .map(|d| resolve(d, header, path))
        .transpose()?;
    if !has_header && first.get(col).is_none() {
        return Err(data_err(
            path,
            first_line,
            format!("row has no field {col}"),
        ));
    }

    let body = if has_header { &raw[1..] } else { &raw[..] };
    let mut values = Vec::with_capacity(body.len());
    let mut lines = Vec::with_capacity(body.len());
    let mut dates = date_col.map(|_| Vec::with_capacity(body.len()));
    for (line, rec) in body {
        let cell = rec.get(col).ok_or_else(|| {
            data_err(
                path,
                *line,
                format!("row has {} field(s), column {col} missing", rec.len()),
            )
        })?;
        let v = parse_number(cell).ok_or_else(|| {
            data_err(
                path,
                *line,
                format!("not a finite number: '{}'", cell.trim()),
            )
        })?;
        let ok = match spec.transform {
            Transform::None => true,
            Transform::Log | Transform::LogDiff => v > 0.0,
            Transform::LogPlusOne => v >= 0.0,
        };
        if !ok {
            let need = if spec.transform == Transform::LogPlusOne {
                ">= 0"
            } else {
                "> 0"
            };
            return Err(data_err(
                path,
                *line,
                format!("transform {} needs values {need}, got {v}", spec.transform),
            ));
        }
        values.push(v);
        lines.push(*line);
        if let (Some(d), Some(c)) = (dates.as_mut(), date_col) {
            d.push(rec.get(c).unwrap_or("").trim().to_string());
        }
    }

    let values: Vec<f64> = match spec.transform {
        Transform::None => values,
        Transform::Log => values.iter().map(|v| v.ln()).collect(),
        Transform::LogPlusOne => values.iter().map(|v| v.ln_1p()).collect(),
        Transform::LogDiff => {
            lines.remove(0);
            if let Some(d) = dates.as_mut() {
                if !d.is_empty() {
                    d.remove(0);
                }
            }
            values.windows(2).map(|w| w[1].ln() - w[0].ln()).collect()
        }
    };
    let mut label = format!("{}:{}", path.display(), spec.column);
    if spec.transform != Transform::None {
        label.push_str(&format!(" ({})", spec.transform));
    }
    let series = TimeSeries::new(values, label)?;
    Ok(LoadedSeries {
        series,
        dates,
        lines,
        delimiter,
        has_header,
    })
}

/// Everything a run produced, with the configuration that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Effective configuration as given to the library.
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub input: Option<InputInfo>,
    pub elapsed_seconds: f64,
    pub tests: Vec<TestReport>,
    pub segmentations: Vec<ChangepointSet>,
    pub plot: Option<PlotData>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputInfo {
    pub label: String,
    pub n: usize,
    pub path: Option<PathBuf>,
    pub transform: Option<Transform>,
    /// Date labels of the first and last observation.
    pub date_range: Option<(String, String)>,
}

impl ReportDocument {
    pub fn new(command: impl Into<String>, config: serde_json::Value) -> Self {
        Self {
            tool: "rca-cusum".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config,
            seeds: BTreeMap::new(),
            input: None,
            elapsed_seconds: 0.0,
            tests: Vec::new(),
            segmentations: Vec::new(),
            plot: None,
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Structured,
    Delimited,
    PlotData,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "json" | "structured" => Ok(ReportFormat::Structured),
            "csv" | "delimited" => Ok(ReportFormat::Delimited),
            "plot" | "plot-data" | "plot_data" => Ok(ReportFormat::PlotData),
            _ => Err(Error::InvalidParameter(format!(
                "unknown report format '{s}'"
            ))),
        }
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn report_row(source: &str, r: &TestReport) -> Vec<String> {
    vec![
        source.to_string(),
        r.statistic.clone(),
        r.n.to_string(),
        r.alpha.to_string(),
        r.statistic_value.to_string(),
        r.critical_value.to_string(),
        r.reject.to_string(),
        opt(r.breakdate),
        opt(r.t_hat),
        opt(r.eta_hat_sq),
    ]
}

/// Serialises `doc`. Structured output is JSON; delimited output has one row
/// per test and per detected break; plot data has one row per grid point.
pub fn emit_report(doc: &ReportDocument, format: ReportFormat) -> Result<Vec<u8>> {
    match format {
        ReportFormat::Structured => {
            let mut out = serde_json::to_vec_pretty(doc)?;
            out.push(b'\n');
            Ok(out)
        }
        ReportFormat::Delimited => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record([
                "source",
                "statistic",
                "n",
                "alpha",
                "value",
                "critical_value",
                "reject",
                "breakdate",
                "t_hat",
                "eta_hat_sq",
            ])?;
            for r in &doc.tests {
                w.write_record(report_row("test", r))?;
            }
            for (s, set) in doc.segmentations.iter().enumerate() {
                for (idx, r) in &set.breaks {
                    let mut row = report_row(&format!("segment{s}"), r);
                    row[7] = idx.to_string();
                    w.write_record(row)?;
                }
            }
            w.into_inner().map_err(|e| Error::Io(e.into_error()))
        }
        ReportFormat::PlotData => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["k", "t", "value", "threshold"])?;
            if let Some(p) = &doc.plot {
                for row in &p.rows {
                    w.write_record([
                        row.k.to_string(),
                        row.t.to_string(),
                        row.value.to_string(),
                        opt(row.threshold),
                    ])?;
                }
            }
            w.into_inner().map_err(|e| Error::Io(e.into_error()))
        }
    }
}
