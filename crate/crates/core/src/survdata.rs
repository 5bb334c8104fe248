//! Clustered right-censored survival data.
//!
//! A [`SurvivalDataset`] is immutable once built. Every observation keeps the
//! row number it had in its source file so that downstream reports can name
//! cases.

use std::collections::{BTreeSet, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const KIDNEY_CSV: &str = include_str!("../data/kidney.csv");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CovariateKind {
    Numeric,
    /// Treatment-coded factor. `levels` is ordered; indicator columns are
    /// emitted for every level except `reference`. An empty level list asks
    /// the CSV loader to infer the levels (sorted) from the data.
    Categorical {
        levels: Vec<String>,
        reference: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Covariate {
    pub name: String,
    pub kind: CovariateKind,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CovariateSchema {
    pub covariates: Vec<Covariate>,
}

impl CovariateSchema {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn numeric(mut self, name: impl Into<String>) -> Self {
        self.covariates.push(Covariate { name: name.into(), kind: CovariateKind::Numeric });
        self
    }

    /// Add a categorical covariate. `levels[0]` is the reference level unless
    /// `reference` says otherwise.
    pub fn categorical<S: Into<String>>(
        mut self,
        name: impl Into<String>,
        levels: impl IntoIterator<Item = S>,
        reference: Option<&str>,
    ) -> Self {
        self.covariates.push(Covariate {
            name: name.into(),
            kind: CovariateKind::Categorical {
                levels: levels.into_iter().map(Into::into).collect(),
                reference: reference.map(str::to_owned),
            },
        });
        self
    }

    pub fn len(&self) -> usize {
        self.covariates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.covariates.is_empty()
    }

    /// Names of the expanded design columns, e.g. `Sex:Male`.
    pub fn expanded_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for cov in &self.covariates {
            match &cov.kind {
                CovariateKind::Numeric => names.push(cov.name.clone()),
                CovariateKind::Categorical { levels, .. } => {
                    let reference = self.reference_index(cov);
                    for (i, level) in levels.iter().enumerate() {
                        if Some(i) != reference {
                            names.push(format!("{}:{}", cov.name, level));
                        }
                    }
                }
            }
        }
        names
    }

    pub fn width(&self) -> usize {
        self.covariates
            .iter()
            .map(|c| match &c.kind {
                CovariateKind::Numeric => 1,
                CovariateKind::Categorical { levels, .. } => levels.len().saturating_sub(1),
            })
            .sum()
    }

    fn reference_index(&self, cov: &Covariate) -> Option<usize> {
        match &cov.kind {
            CovariateKind::Numeric => None,
            CovariateKind::Categorical { levels, reference } => match reference {
                Some(r) => levels.iter().position(|l| l == r),
                None if levels.is_empty() => None,
                None => Some(0),
            },
        }
    }

    /// Expand one observation's covariates into design columns.
    pub fn expand_into(&self, values: &[CovariateValue], out: &mut Vec<f64>) {
        for (cov, value) in self.covariates.iter().zip(values) {
            match (&cov.kind, value) {
                (CovariateKind::Numeric, CovariateValue::Numeric(v)) => out.push(*v),
                (CovariateKind::Categorical { levels, .. }, CovariateValue::Level(k)) => {
                    let reference = self.reference_index(cov);
                    for i in 0..levels.len() {
                        if Some(i) != reference {
                            out.push(if i == *k { 1.0 } else { 0.0 });
                        }
                    }
                }
                _ => unreachable!("covariate value does not match schema kind"),
            }
        }
    }

    fn validate(&self) -> Result<()> {
        for cov in &self.covariates {
            if let CovariateKind::Categorical { levels, reference } = &cov.kind {
                let unique: BTreeSet<_> = levels.iter().collect();
                if unique.len() != levels.len() {
                    return Err(Error::invalid(format!("duplicate levels for `{}`", cov.name)));
                }
                if let Some(r) = reference {
                    if !levels.is_empty() && !levels.contains(r) {
                        return Err(Error::invalid(format!(
                            "reference level `{r}` not among levels of `{}`",
                            cov.name
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CovariateValue {
    Numeric(f64),
    /// Index into the covariate's level list.
    Level(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    /// Original 1-based data row number.
    pub row_id: usize,
    pub time: f64,
    pub status: bool,
    /// Index into [`SurvivalDataset::cluster_labels`].
    pub cluster: usize,
    pub covariates: Vec<CovariateValue>,
}

/// Unvalidated input row used to build a dataset.
#[derive(Debug, Clone)]
pub struct Record {
    pub row_id: usize,
    pub time: f64,
    pub status: u8,
    pub cluster: String,
    pub covariates: Vec<CovariateValue>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalDataset {
    observations: Vec<Observation>,
    schema: CovariateSchema,
    cluster_labels: Vec<String>,
    cluster_index: Vec<Vec<usize>>,
}

impl SurvivalDataset {
    /// Build and validate a dataset. Clusters are numbered in order of first
    /// appearance.
    pub fn new(schema: CovariateSchema, records: impl IntoIterator<Item = Record>) -> Result<Self> {
        schema.validate()?;
        let mut labels: Vec<String> = Vec::new();
        let mut lookup: HashMap<String, usize> = HashMap::new();
        let mut cluster_index: Vec<Vec<usize>> = Vec::new();
        let mut observations = Vec::new();
        for rec in records {
            if !(rec.time.is_finite() && rec.time > 0.0) {
                return Err(Error::row(rec.row_id, format!("time must be positive, got {}", rec.time)));
            }
            if rec.status > 1 {
                return Err(Error::row(rec.row_id, format!("status must be 0 or 1, got {}", rec.status)));
            }
            if rec.covariates.len() != schema.len() {
                return Err(Error::row(
                    rec.row_id,
                    format!("expected {} covariates, got {}", schema.len(), rec.covariates.len()),
                ));
            }
            for (cov, value) in schema.covariates.iter().zip(&rec.covariates) {
                match (&cov.kind, value) {
                    (CovariateKind::Numeric, CovariateValue::Numeric(v)) if v.is_finite() => {}
                    (CovariateKind::Categorical { levels, .. }, CovariateValue::Level(k)) if *k < levels.len() => {}
                    _ => return Err(Error::row(rec.row_id, format!("invalid value for `{}`", cov.name))),
                }
            }
            let next = labels.len();
            let cluster = *lookup.entry(rec.cluster.clone()).or_insert_with(|| {
                labels.push(rec.cluster.clone());
                cluster_index.push(Vec::new());
                next
            });
            cluster_index[cluster].push(observations.len());
            observations.push(Observation {
                row_id: rec.row_id,
                time: rec.time,
                status: rec.status == 1,
                cluster,
                covariates: rec.covariates,
            });
        }
        if !observations.iter().any(|o| o.status) {
            return Err(Error::NoEvents);
        }
        Ok(Self { observations, schema, cluster_labels: labels, cluster_index })
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn schema(&self) -> &CovariateSchema {
        &self.schema
    }

    pub fn cluster_labels(&self) -> &[String] {
        &self.cluster_labels
    }

    /// Observation indices belonging to each cluster.
    pub fn cluster_index(&self) -> &[Vec<usize>] {
        &self.cluster_index
    }

    pub fn cluster_of(&self, label: &str) -> Option<usize> {
        self.cluster_labels.iter().position(|l| l == label)
    }

    /// Number of observations.
    pub fn n(&self) -> usize {
        self.observations.len()
    }

    /// Number of clusters.
    pub fn g(&self) -> usize {
        self.cluster_labels.len()
    }

    pub fn events(&self) -> usize {
        self.observations.iter().filter(|o| o.status).count()
    }

    pub fn censoring_rate(&self) -> f64 {
        censoring_rate(self)
    }

    /// Row-major expanded design matrix (`n × width`).
    pub fn design(&self) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.n() * self.schema.width());
        for obs in &self.observations {
            self.schema.expand_into(&obs.covariates, &mut x);
        }
        x
    }

    pub fn position_of_row(&self, row_id: usize) -> Option<usize> {
        self.observations.iter().position(|o| o.row_id == row_id)
    }

    /// Copy of the dataset without the given original row ids. Unknown ids
    /// are an error.
    pub fn without_rows(&self, row_ids: &[usize]) -> Result<Self> {
        for id in row_ids {
            if self.position_of_row(*id).is_none() {
                return Err(Error::invalid(format!("row {id} is not in the dataset")));
            }
        }
        let keep: Vec<usize> = (0..self.n()).filter(|&i| !row_ids.contains(&self.observations[i].row_id)).collect();
        self.subset(&keep)
    }

    /// Dataset restricted to the given observation positions (cluster labels
    /// are re-indexed).
    pub fn subset(&self, positions: &[usize]) -> Result<Self> {
        let records = positions.iter().map(|&i| {
            let o = &self.observations[i];
            Record {
                row_id: o.row_id,
                time: o.time,
                status: o.status as u8,
                cluster: self.cluster_labels[o.cluster].clone(),
                covariates: o.covariates.clone(),
            }
        });
        Self::new(self.schema.clone(), records)
    }

    /// Replace the covariates while keeping times, status, clusters and row
    /// ids. Used to refit the same outcomes under a different model form.
    pub fn with_covariates(
        &self,
        schema: CovariateSchema,
        covariates: impl Fn(&Observation) -> Vec<CovariateValue>,
    ) -> Result<Self> {
        let records: Vec<Record> = self
            .observations
            .iter()
            .map(|o| Record {
                row_id: o.row_id,
                time: o.time,
                status: o.status as u8,
                cluster: self.cluster_labels[o.cluster].clone(),
                covariates: covariates(o),
            })
            .collect();
        Self::new(schema, records)
    }

    /// Write the dataset as CSV using `map` for column names.
    pub fn write_csv<W: Write>(&self, writer: W, map: &ColumnMap) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = Vec::new();
        if let Some(col) = &map.row_id {
            header.push(col.clone());
        }
        header.push(map.cluster.clone());
        header.push(map.time.clone());
        header.push(map.status.clone());
        for cov in &self.schema.covariates {
            header.push(map.column_for(&cov.name).to_owned());
        }
        w.write_record(&header)?;
        for obs in &self.observations {
            let mut rec = Vec::with_capacity(header.len());
            if map.row_id.is_some() {
                rec.push(obs.row_id.to_string());
            }
            rec.push(self.cluster_labels[obs.cluster].clone());
            rec.push(format_float(obs.time));
            rec.push((obs.status as u8).to_string());
            for (cov, value) in self.schema.covariates.iter().zip(&obs.covariates) {
                rec.push(match (&cov.kind, value) {
                    (CovariateKind::Categorical { levels, .. }, CovariateValue::Level(k)) => levels[*k].clone(),
                    (_, CovariateValue::Numeric(v)) => format_float(*v),
                    _ => unreachable!(),
                });
            }
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

/// Shortest representation that round-trips exactly.
pub(crate) fn format_float(v: f64) -> String {
    format!("{v}")
}

/// Mapping from logical fields to CSV column names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub time: String,
    pub status: String,
    pub cluster: String,
    /// Optional column holding original row ids; rows are numbered from 1 in
    /// file order when absent.
    pub row_id: Option<String>,
    /// Covariate name -> column name. Covariates not listed use their own
    /// name.
    pub covariates: HashMap<String, String>,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            time: "time".into(),
            status: "status".into(),
            cluster: "cluster".into(),
            row_id: None,
            covariates: HashMap::new(),
        }
    }
}

impl ColumnMap {
    pub fn new(time: &str, status: &str, cluster: &str) -> Self {
        Self { time: time.into(), status: status.into(), cluster: cluster.into(), ..Self::default() }
    }

    pub fn column_for<'a>(&'a self, covariate: &'a str) -> &'a str {
        self.covariates.get(covariate).map(String::as_str).unwrap_or(covariate)
    }

    /// Column layout of the embedded kidney dataset.
    pub fn kidney() -> Self {
        Self::new("Time", "Status", "ID")
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &CovariateSchema, map: &ColumnMap) -> Result<SurvivalDataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema, map)
}

fn parse_missing(s: &str) -> bool {
    let s = s.trim();
    s.is_empty() || s.eq_ignore_ascii_case("na") || s.eq_ignore_ascii_case("nan")
}

/// Parse CSV from any reader. See [`load_csv`].
pub fn read_csv<R: Read>(reader: R, schema: &CovariateSchema, map: &ColumnMap) -> Result<SurvivalDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let column =
        |name: &str| headers.iter().position(|h| h.trim() == name).ok_or_else(|| Error::MissingColumn(name.to_owned()));
    let time_col = column(&map.time)?;
    let status_col = column(&map.status)?;
    let cluster_col = column(&map.cluster)?;
    let row_col = map.row_id.as_deref().map(column).transpose()?;
    let cov_cols = schema.covariates.iter().map(|c| column(map.column_for(&c.name))).collect::<Result<Vec<_>>>()?;

    let rows: Vec<csv::StringRecord> = rdr.records().collect::<std::result::Result<_, _>>()?;

    // Resolve categorical levels, inferring them where the schema leaves the
    // level list empty.
    let mut schema = schema.clone();
    for (cov, &col) in schema.covariates.iter_mut().zip(&cov_cols) {
        if let CovariateKind::Categorical { levels, reference } = &mut cov.kind {
            if levels.is_empty() {
                let seen: BTreeSet<String> = rows
                    .iter()
                    .filter_map(|r| r.get(col))
                    .map(|s| s.trim().to_owned())
                    .filter(|s| !parse_missing(s))
                    .collect();
                *levels = seen.into_iter().collect();
                if let Some(r) = reference.as_ref() {
                    if let Some(pos) = levels.iter().position(|l| l == r) {
                        let level = levels.remove(pos);
                        levels.insert(0, level);
                    }
                }
                *reference = levels.first().cloned();
            }
        }
    }

    let mut records = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        let default_row = i + 1;
        let field = |col: usize| row.get(col).map(str::trim).unwrap_or("");
        let row_id = match row_col {
            Some(col) => field(col)
                .parse::<usize>()
                .map_err(|_| Error::row(default_row, format!("invalid row id `{}`", field(col))))?,
            None => default_row,
        };
        let time_s = field(time_col);
        if parse_missing(time_s) {
            return Err(Error::row(row_id, "missing time"));
        }
        let time: f64 = time_s.parse().map_err(|_| Error::row(row_id, format!("unparseable time `{time_s}`")))?;
        if !(time > 0.0) || !time.is_finite() {
            return Err(Error::row(row_id, format!("time must be positive, got {time_s}")));
        }
        let status = match field(status_col) {
            "0" | "0.0" => 0,
            "1" | "1.0" => 1,
            other => return Err(Error::row(row_id, format!("status must be 0 or 1, got `{other}`"))),
        };
        let cluster = field(cluster_col);
        if parse_missing(cluster) {
            return Err(Error::row(row_id, "missing cluster id"));
        }
        let mut covariates = Vec::with_capacity(schema.len());
        for (cov, &col) in schema.covariates.iter().zip(&cov_cols) {
            let raw = field(col);
            if parse_missing(raw) {
                return Err(Error::row(row_id, format!("missing value for `{}`", cov.name)));
            }
            covariates.push(match &cov.kind {
                CovariateKind::Numeric => CovariateValue::Numeric(
                    raw.parse().map_err(|_| Error::row(row_id, format!("unparseable `{}` value `{raw}`", cov.name)))?,
                ),
                CovariateKind::Categorical { levels, .. } => CovariateValue::Level(
                    levels
                        .iter()
                        .position(|l| l == raw)
                        .ok_or_else(|| Error::row(row_id, format!("unknown level `{raw}` for `{}`", cov.name)))?,
                ),
            });
        }
        records.push(Record { row_id, time, status, cluster: cluster.to_owned(), covariates });
    }
    SurvivalDataset::new(schema, records)
}

/// Covariate schema of the kidney infection data: Age, Sex (reference
/// Female) and Disease (reference Other).
pub fn kidney_schema() -> CovariateSchema {
    CovariateSchema::new().numeric("Age").categorical("Sex", ["Female", "Male"], Some("Female")).categorical(
        "Disease",
        ["Other", "GN", "AN", "PKD"],
        Some("Other"),
    )
}

/// The McGilchrist–Aisbett kidney catheter infection data: 38 patients with
/// two recurrence times each.
pub fn kidney_dataset() -> SurvivalDataset {
    read_csv(KIDNEY_CSV.as_bytes(), &kidney_schema(), &ColumnMap::kidney()).expect("embedded kidney data is valid")
}

/// Raw text of the embedded kidney CSV.
pub fn kidney_csv() -> &'static str {
    KIDNEY_CSV
}

pub fn censoring_rate(data: &SurvivalDataset) -> f64 {
    if data.n() == 0 {
        return 0.0;
    }
    let censored = data.observations.iter().filter(|o| !o.status).count();
    censored as f64 / data.n() as f64
}
