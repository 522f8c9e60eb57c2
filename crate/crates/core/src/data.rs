//! Two-arm mixed-type covariate tables with missingness, censored outcomes and CSV ingestion.

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("schema: {0}")]
    Schema(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("unknown column `{0}` in header")]
    UnknownColumn(String),
    #[error("header is missing column `{0}`")]
    MissingColumn(String),
    #[error("row {row}, column `{column}`: {reason}")]
    Cell { row: usize, column: String, reason: String },
    #[error("schema mismatch on column `{0}`")]
    SchemaMismatch(String),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnKind {
    Categorical { num_levels: u32 },
    Continuous,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    #[serde(flatten)]
    pub kind: ColumnKind,
}

impl Column {
    pub fn categorical(name: impl Into<String>, num_levels: u32) -> Self {
        Column { name: name.into(), kind: ColumnKind::Categorical { num_levels } }
    }
    pub fn continuous(name: impl Into<String>) -> Self {
        Column { name: name.into(), kind: ColumnKind::Continuous }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Column>", into = "Vec<Column>")]
pub struct CovariateSchema {
    columns: Vec<Column>,
}

impl TryFrom<Vec<Column>> for CovariateSchema {
    type Error = DataError;
    fn try_from(columns: Vec<Column>) -> Result<Self, DataError> {
        CovariateSchema::new(columns)
    }
}

impl From<CovariateSchema> for Vec<Column> {
    fn from(s: CovariateSchema) -> Self {
        s.columns
    }
}

impl CovariateSchema {
    pub fn new(columns: Vec<Column>) -> Result<Self, DataError> {
        let mut seen = HashMap::new();
        for c in &columns {
            if let ColumnKind::Categorical { num_levels } = c.kind {
                if num_levels < 2 {
                    return Err(DataError::Schema(format!("column `{}` needs at least 2 levels", c.name)));
                }
            }
            if c.name.starts_with('_') {
                return Err(DataError::Schema(format!("column `{}`: leading underscore is reserved", c.name)));
            }
            if seen.insert(c.name.clone(), ()).is_some() {
                return Err(DataError::Schema(format!("duplicate column `{}`", c.name)));
            }
        }
        Ok(Self { columns })
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }
    pub fn len(&self) -> usize {
        self.columns.len()
    }
    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }
    pub fn n_continuous(&self) -> usize {
        self.columns.iter().filter(|c| c.kind == ColumnKind::Continuous).count()
    }

    /// First column whose name or kind differs, if any.
    pub fn first_difference(&self, other: &CovariateSchema) -> Option<String> {
        for i in 0..self.len().max(other.len()) {
            match (self.columns.get(i), other.columns.get(i)) {
                (Some(a), Some(b)) if a == b => continue,
                (Some(a), _) => return Some(a.name.clone()),
                (None, Some(b)) => return Some(b.name.clone()),
                (None, None) => unreachable!(),
            }
        }
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Cell {
    Missing,
    Level(u32),
    Value(f64),
}

impl Cell {
    pub fn is_missing(&self) -> bool {
        matches!(self, Cell::Missing)
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            Cell::Value(v) => Some(*v),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Treatment,
    Rwd,
}

impl Arm {
    pub const BOTH: [Arm; 2] = [Arm::Treatment, Arm::Rwd];

    /// Array index: 0 for the trial arm, 1 for real-world data.
    #[inline]
    pub fn idx(self) -> usize {
        match self {
            Arm::Treatment => 0,
            Arm::Rwd => 1,
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Arm::Treatment => "treatment",
            Arm::Rwd => "rwd",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    pub row: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CensorStatus {
    Observed,
    Censored { lower: f64, upper: f64 },
}

/// Outcome on the modeled scale (log time in survival mode).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CensoredOutcome {
    pub y: f64,
    pub status: CensorStatus,
}

impl CensoredOutcome {
    pub fn observed(y: f64) -> Self {
        Self { y, status: CensorStatus::Observed }
    }
    pub fn right_censored(y: f64) -> Self {
        Self { y, status: CensorStatus::Censored { lower: y, upper: f64::INFINITY } }
    }
    pub fn interval(lower: f64, upper: f64) -> Self {
        let y = if lower.is_finite() { lower } else { upper };
        Self { y, status: CensorStatus::Censored { lower, upper } }
    }
    pub fn is_observed(&self) -> bool {
        matches!(self.status, CensorStatus::Observed)
    }
    pub fn bounds(&self) -> Option<(f64, f64)> {
        match self.status {
            CensorStatus::Observed => None,
            CensorStatus::Censored { lower, upper } => Some((lower, upper)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeMode {
    None,
    Continuous,
    Survival,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedDataset {
    pub arm: Arm,
    pub schema: CovariateSchema,
    pub rows: Vec<Vec<Cell>>,
    pub provenance: Vec<Provenance>,
    pub outcomes: Option<Vec<CensoredOutcome>>,
}

impl MixedDataset {
    /// Builds a dataset after checking every cell against the schema.
    pub fn new(
        arm: Arm,
        schema: CovariateSchema,
        rows: Vec<Vec<Cell>>,
        outcomes: Option<Vec<CensoredOutcome>>,
        source: &str,
    ) -> Result<Self, DataError> {
        let provenance = (0..rows.len()).map(|row| Provenance { source: source.to_string(), row }).collect();
        let ds = Self { arm, schema, rows, provenance, outcomes };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let cols = self.schema.columns();
        for (r, row) in self.rows.iter().enumerate() {
            if row.len() != cols.len() {
                return Err(DataError::Invalid(format!("row {r} has {} cells, schema has {}", row.len(), cols.len())));
            }
            for (cell, col) in row.iter().zip(cols) {
                match (cell, col.kind) {
                    (Cell::Missing, _) => {}
                    (Cell::Level(l), ColumnKind::Categorical { num_levels }) if *l < num_levels => {}
                    (Cell::Value(v), ColumnKind::Continuous) if v.is_finite() => {}
                    _ => {
                        return Err(DataError::Cell { row: r, column: col.name.clone(), reason: format!("{cell:?} invalid for {:?}", col.kind) })
                    }
                }
            }
        }
        if self.provenance.len() != self.rows.len() {
            return Err(DataError::Invalid("provenance length differs from row count".into()));
        }
        if let Some(out) = &self.outcomes {
            if out.len() != self.rows.len() {
                return Err(DataError::Invalid("outcome length differs from row count".into()));
            }
            for (r, o) in out.iter().enumerate() {
                if let Some((l, u)) = o.bounds() {
                    if !(l < u) {
                        return Err(DataError::Invalid(format!("row {r}: censoring interval ({l}, {u}) is empty")));
                    }
                } else if !o.y.is_finite() {
                    return Err(DataError::Invalid(format!("row {r}: observed outcome is not finite")));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn missing_count(&self) -> usize {
        self.rows.iter().flatten().filter(|c| c.is_missing()).count()
    }

    /// Rows picked by index (with repetition), keeping provenance and outcomes.
    pub fn select(&self, idx: &[usize]) -> MixedDataset {
        MixedDataset {
            arm: self.arm,
            schema: self.schema.clone(),
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
            provenance: idx.iter().map(|&i| self.provenance[i].clone()).collect(),
            outcomes: self.outcomes.as_ref().map(|o| idx.iter().map(|&i| o[i]).collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyData {
    pub treatment: MixedDataset,
    pub rwd: MixedDataset,
}

impl StudyData {
    pub fn new(treatment: MixedDataset, rwd: MixedDataset) -> Result<Self, DataError> {
        if let Some(col) = treatment.schema.first_difference(&rwd.schema) {
            return Err(DataError::SchemaMismatch(col));
        }
        if treatment.outcomes.is_some() != rwd.outcomes.is_some() {
            return Err(DataError::Invalid("outcomes must be present in both arms or neither".into()));
        }
        if treatment.arm != Arm::Treatment || rwd.arm != Arm::Rwd {
            return Err(DataError::Invalid("arm labels do not match their slots".into()));
        }
        Ok(Self { treatment, rwd })
    }

    pub fn schema(&self) -> &CovariateSchema {
        &self.treatment.schema
    }

    pub fn arm(&self, arm: Arm) -> &MixedDataset {
        match arm {
            Arm::Treatment => &self.treatment,
            Arm::Rwd => &self.rwd,
        }
    }

    pub fn has_outcomes(&self) -> bool {
        self.treatment.outcomes.is_some()
    }

    /// Copy with outcomes dropped, for covariate-only fits.
    pub fn without_outcomes(&self) -> StudyData {
        let mut s = self.clone();
        s.treatment.outcomes = None;
        s.rwd.outcomes = None;
        s
    }

    /// Standardizes continuous columns by the mean and SD pooled over both arms.
    pub fn standardized(&self) -> StudyData {
        let mut out = self.clone();
        for (j, col) in self.schema().columns().iter().enumerate() {
            if col.kind != ColumnKind::Continuous {
                continue;
            }
            let vals: Vec<f64> = Arm::BOTH
                .iter()
                .flat_map(|&a| self.arm(a).rows.iter().filter_map(move |r| match r[j] {
                    Cell::Value(v) => Some(v),
                    _ => None,
                }))
                .collect();
            if vals.len() < 2 {
                continue;
            }
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64).sqrt();
            let sd = if sd > 0.0 { sd } else { 1.0 };
            for ds in [&mut out.treatment, &mut out.rwd] {
                for row in &mut ds.rows {
                    if let Cell::Value(v) = row[j] {
                        row[j] = Cell::Value((v - mean) / sd);
                    }
                }
            }
        }
        out
    }
}

/// Outcome columns expected in an input file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum OutcomeColumns {
    /// Event time in original units and an event indicator (1 event, 0 right-censored).
    Survival { time: String, status: String },
    Continuous { value: String },
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub missing_tokens: Vec<String>,
    pub outcome: Option<OutcomeColumns>,
    pub source: Option<String>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self { missing_tokens: vec![String::new(), "NA".to_string()], outcome: None, source: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadReport {
    pub rows: usize,
    pub missing_per_column: Vec<(String, usize)>,
}

const SOURCE_COL: &str = "_source";
const ROW_COL: &str = "_row";

pub fn load_csv(
    path: impl AsRef<Path>,
    schema: &CovariateSchema,
    arm: Arm,
    opts: &LoadOptions,
) -> Result<(MixedDataset, LoadReport), DataError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| DataError::Io { path: path.display().to_string(), source })?;
    let mut opts = opts.clone();
    if opts.source.is_none() {
        opts.source = Some(path.display().to_string());
    }
    read_csv(file, schema, arm, &opts)
}

pub fn read_csv<R: Read>(
    reader: R,
    schema: &CovariateSchema,
    arm: Arm,
    opts: &LoadOptions,
) -> Result<(MixedDataset, LoadReport), DataError> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let mut col_pos = vec![usize::MAX; schema.len()];
    let (mut time_pos, mut status_pos, mut value_pos) = (None, None, None);
    let (mut src_pos, mut row_pos) = (None, None);
    for (h, name) in header.iter().enumerate() {
        if let Some(j) = schema.index_of(name) {
            col_pos[j] = h;
            continue;
        }
        match (&opts.outcome, name.as_str()) {
            (Some(OutcomeColumns::Survival { time, .. }), n) if n == time => time_pos = Some(h),
            (Some(OutcomeColumns::Survival { status, .. }), n) if n == status => status_pos = Some(h),
            (Some(OutcomeColumns::Continuous { value }), n) if n == value => value_pos = Some(h),
            (_, SOURCE_COL) => src_pos = Some(h),
            (_, ROW_COL) => row_pos = Some(h),
            (_, n) if n.starts_with('_') => {}
            (_, n) => return Err(DataError::UnknownColumn(n.to_string())),
        }
    }
    if let Some(j) = col_pos.iter().position(|&p| p == usize::MAX) {
        return Err(DataError::MissingColumn(schema.columns()[j].name.clone()));
    }
    match &opts.outcome {
        Some(OutcomeColumns::Survival { time, status }) => {
            if time_pos.is_none() {
                return Err(DataError::MissingColumn(time.clone()));
            }
            if status_pos.is_none() {
                return Err(DataError::MissingColumn(status.clone()));
            }
        }
        Some(OutcomeColumns::Continuous { value }) if value_pos.is_none() => {
            return Err(DataError::MissingColumn(value.clone()));
        }
        _ => {}
    }
    let is_missing = |s: &str| opts.missing_tokens.iter().any(|t| t == s);
    let source = opts.source.clone().unwrap_or_else(|| "<reader>".to_string());

    let mut rows = Vec::new();
    let mut provenance = Vec::new();
    let mut outcomes = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let mut row = Vec::with_capacity(schema.len());
        for (j, col) in schema.columns().iter().enumerate() {
            let raw = rec.get(col_pos[j]).unwrap_or("");
            let cell_err = |reason: String| DataError::Cell { row: r, column: col.name.clone(), reason };
            let cell = if is_missing(raw) {
                Cell::Missing
            } else {
                match col.kind {
                    ColumnKind::Categorical { num_levels } => {
                        let l: u32 = raw.parse().map_err(|_| cell_err(format!("`{raw}` is not a level index")))?;
                        if l >= num_levels {
                            return Err(cell_err(format!("level {l} out of range [0, {num_levels})")));
                        }
                        Cell::Level(l)
                    }
                    ColumnKind::Continuous => {
                        let v: f64 = raw.parse().map_err(|_| cell_err(format!("`{raw}` is not a number")))?;
                        if !v.is_finite() {
                            return Err(cell_err(format!("`{raw}` is not finite")));
                        }
                        Cell::Value(v)
                    }
                }
            };
            row.push(cell);
        }
        let get = |p: Option<usize>| rec.get(p.unwrap()).unwrap_or("");
        match &opts.outcome {
            Some(OutcomeColumns::Survival { time, status }) => {
                let t_raw = get(time_pos);
                let t: f64 = t_raw
                    .parse()
                    .map_err(|_| DataError::Cell { row: r, column: time.clone(), reason: format!("`{t_raw}` is not a number") })?;
                if !(t > 0.0 && t.is_finite()) {
                    return Err(DataError::Cell { row: r, column: time.clone(), reason: format!("survival time {t} must be positive") });
                }
                let s_raw = get(status_pos);
                let out = match s_raw {
                    "1" => CensoredOutcome::observed(t.ln()),
                    "0" => CensoredOutcome::right_censored(t.ln()),
                    _ => {
                        return Err(DataError::Cell { row: r, column: status.clone(), reason: format!("status `{s_raw}` must be 0 or 1") })
                    }
                };
                outcomes.push(out);
            }
            Some(OutcomeColumns::Continuous { value }) => {
                let raw = get(value_pos);
                if is_missing(raw) {
                    outcomes.push(CensoredOutcome::interval(f64::NEG_INFINITY, f64::INFINITY));
                } else {
                    let v: f64 = raw
                        .parse()
                        .map_err(|_| DataError::Cell { row: r, column: value.clone(), reason: format!("`{raw}` is not a number") })?;
                    outcomes.push(CensoredOutcome::observed(v));
                }
            }
            None => {}
        }
        let prov = match (src_pos, row_pos) {
            (Some(sp), Some(rp)) => {
                let src = rec.get(sp).unwrap_or("").to_string();
                let orig = rec.get(rp).unwrap_or("").parse().unwrap_or(r);
                Provenance { source: src, row: orig }
            }
            _ => Provenance { source: source.clone(), row: r },
        };
        provenance.push(prov);
        rows.push(row);
    }
    let missing_per_column = schema
        .columns()
        .iter()
        .enumerate()
        .map(|(j, c)| (c.name.clone(), rows.iter().filter(|row: &&Vec<Cell>| row[j].is_missing()).count()))
        .collect();
    let report = LoadReport { rows: rows.len(), missing_per_column };
    let outcomes = opts.outcome.as_ref().map(|_| outcomes);
    let ds = MixedDataset { arm, schema: schema.clone(), rows, provenance, outcomes };
    ds.validate()?;
    Ok((ds, report))
}

/// Writes a dataset in the ingestion dialect, with provenance columns appended.
pub fn write_csv<W: Write>(ds: &MixedDataset, outcome: Option<&OutcomeColumns>, writer: W) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = ds.schema.columns().iter().map(|c| c.name.clone()).collect();
    match outcome {
        Some(OutcomeColumns::Survival { time, status }) => {
            header.push(time.clone());
            header.push(status.clone());
        }
        Some(OutcomeColumns::Continuous { value }) => header.push(value.clone()),
        None => {}
    }
    header.push(SOURCE_COL.into());
    header.push(ROW_COL.into());
    w.write_record(&header)?;
    for (i, row) in ds.rows.iter().enumerate() {
        let mut rec: Vec<String> = row
            .iter()
            .map(|c| match c {
                Cell::Missing => "NA".to_string(),
                Cell::Level(l) => l.to_string(),
                // `{:?}` prints the shortest representation that round-trips exactly.
                Cell::Value(v) => format!("{v:?}"),
            })
            .collect();
        if let (Some(spec), Some(out)) = (outcome, ds.outcomes.as_ref()) {
            let o = out[i];
            match spec {
                OutcomeColumns::Survival { .. } => {
                    let status = if o.is_observed() { "1" } else { "0" };
                    rec.push(format!("{:?}", o.y.exp()));
                    rec.push(status.into());
                }
                OutcomeColumns::Continuous { .. } => {
                    rec.push(if o.is_observed() { format!("{:?}", o.y) } else { "NA".into() });
                }
            }
        }
        rec.push(ds.provenance[i].source.clone());
        rec.push(ds.provenance[i].row.to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|source| DataError::Io { path: "<writer>".into(), source })?;
    Ok(())
}

/// Concatenates RWD sources into one RWD set, keeping per-row provenance.
pub fn merge_historical(datasets: &[MixedDataset]) -> Result<MixedDataset, DataError> {
    let first = datasets.first().ok_or_else(|| DataError::Invalid("no datasets to merge".into()))?;
    let mut merged = first.clone();
    for ds in datasets {
        if ds.arm != Arm::Rwd {
            return Err(DataError::Invalid("only RWD datasets can be merged".into()));
        }
        if let Some(col) = first.schema.first_difference(&ds.schema) {
            return Err(DataError::SchemaMismatch(col));
        }
        if ds.outcomes.is_some() != first.outcomes.is_some() {
            return Err(DataError::Invalid("outcomes present in some sources only".into()));
        }
    }
    for ds in &datasets[1..] {
        merged.rows.extend(ds.rows.iter().cloned());
        merged.provenance.extend(ds.provenance.iter().cloned());
        if let (Some(m), Some(o)) = (merged.outcomes.as_mut(), ds.outcomes.as_ref()) {
            m.extend_from_slice(o);
        }
    }
    Ok(merged)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioDiagnostics {
    pub n1: usize,
    pub n2: usize,
    pub ratio: f64,
    pub warning: Option<String>,
}

pub fn validate_ratio(study: &StudyData) -> RatioDiagnostics {
    let n1 = study.treatment.len();
    let n2 = study.rwd.len();
    let ratio = n2 as f64 / n1.max(1) as f64;
    let warning = (ratio < 1.0).then(|| format!("RWD ({n2} rows) is smaller than the trial arm ({n1} rows)"));
    RatioDiagnostics { n1, n2, ratio, warning }
}
