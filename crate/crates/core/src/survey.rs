//! Survey data model: strata of clusters, each carrying a sampling weight,
//! a size, a category count vector and a covariate vector.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRecord {
    pub stratum: i64,
    pub cluster: i64,
    pub weight: f64,
    pub size: u64,
    /// Counts per response category, length d+1.
    pub counts: Vec<u64>,
    /// Covariates with the leading intercept entry, length k+1.
    pub covariates: Vec<f64>,
}

impl ClusterRecord {
    fn validation(&self, message: impl Into<String>) -> Error {
        Error::Validation {
            stratum: self.stratum,
            cluster: self.cluster,
            message: message.into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.weight.is_finite() && self.weight >= 0.0) {
            return Err(self.validation(format!(
                "weight must be finite and >= 0, got {}",
                self.weight
            )));
        }
        if self.size == 0 {
            return Err(self.validation("cluster size must be positive"));
        }
        let total: u64 = self.counts.iter().sum();
        if total != self.size {
            return Err(self.validation(format!(
                "counts sum to {total} but cluster size is {}",
                self.size
            )));
        }
        match self.covariates.first() {
            Some(&1.0) => {}
            _ => return Err(self.validation("first covariate entry must be the intercept 1")),
        }
        if self.covariates.iter().any(|v| !v.is_finite()) {
            return Err(self.validation("covariates must be finite"));
        }
        Ok(())
    }

    /// Weighted size w·m, the cluster's share of τ.
    pub fn weighted_size(&self) -> f64 {
        self.weight * self.size as f64
    }
}

/// Validated, immutable collection of cluster records in read order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyDataset {
    records: Vec<ClusterRecord>,
    num_categories: usize,
    num_covariates: usize,
    tau: f64,
}

impl SurveyDataset {
    pub fn new(records: Vec<ClusterRecord>) -> Result<Self> {
        let first = records
            .first()
            .ok_or_else(|| Error::InsufficientData("dataset has no clusters".into()))?;
        let num_categories = first.counts.len();
        let num_covariates = first.covariates.len();
        if num_categories < 2 {
            return Err(Error::Dimension(format!(
                "need at least 2 response categories, found {num_categories}"
            )));
        }
        if num_covariates < 1 {
            return Err(Error::Dimension(
                "covariate vector must contain the intercept".into(),
            ));
        }
        for r in &records {
            if r.counts.len() != num_categories || r.covariates.len() != num_covariates {
                return Err(Error::Dimension(format!(
                    "cluster (stratum {}, cluster {}) has {} categories and {} covariates, expected {} and {}",
                    r.stratum,
                    r.cluster,
                    r.counts.len(),
                    r.covariates.len(),
                    num_categories,
                    num_covariates
                )));
            }
            r.validate()?;
        }
        let tau: f64 = records.iter().map(ClusterRecord::weighted_size).sum();
        if !(tau > 0.0) {
            return Err(Error::InsufficientData(
                "total weighted size tau must be positive".into(),
            ));
        }
        Ok(Self {
            records,
            num_categories,
            num_covariates,
            tau,
        })
    }

    pub fn records(&self) -> &[ClusterRecord] {
        &self.records
    }

    /// d+1.
    pub fn num_categories(&self) -> usize {
        self.num_categories
    }

    /// k+1, including the intercept.
    pub fn num_covariates(&self) -> usize {
        self.num_covariates
    }

    /// Length of the flattened parameter vector, d(k+1).
    pub fn num_params(&self) -> usize {
        (self.num_categories - 1) * self.num_covariates
    }

    /// Total number of clusters n = Σ n_h.
    pub fn n_clusters(&self) -> usize {
        self.records.len()
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Clusters per stratum, n_h.
    pub fn strata(&self) -> BTreeMap<i64, usize> {
        let mut out = BTreeMap::new();
        for r in &self.records {
            *out.entry(r.stratum).or_insert(0) += 1;
        }
        out
    }

    /// Clusters that carry information (positive weight).
    pub fn informative_clusters(&self) -> usize {
        self.records.iter().filter(|r| r.weight > 0.0).count()
    }

    /// Returns a copy with every weight multiplied by `factor`.
    pub fn scale_weights(&self, factor: f64) -> Result<Self> {
        let records = self
            .records
            .iter()
            .map(|r| ClusterRecord {
                weight: r.weight * factor,
                ..r.clone()
            })
            .collect();
        Self::new(records)
    }

    pub fn position(&self, stratum: i64, cluster: i64) -> Option<usize> {
        self.records
            .iter()
            .position(|r| r.stratum == stratum && r.cluster == cluster)
    }
}

/// p̂ = (1/τ)(w_11 ŷ_11, …, w_Hn_H ŷ_Hn_H), clusters in dataset order.
pub fn empirical_probability_vector(data: &SurveyDataset) -> Vec<f64> {
    let tau = data.tau();
    data.records()
        .iter()
        .flat_map(|r| r.counts.iter().map(move |&y| r.weight * y as f64 / tau))
        .collect()
}

/// Column names used to bind CSV fields.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub stratum: String,
    pub cluster: String,
    pub weight: String,
    pub size: String,
    /// Count columns are `<prefix>1 .. <prefix>{d+1}`.
    pub count_prefix: String,
    /// Covariate columns are `<prefix>1 .. <prefix>k`; the intercept is implicit.
    pub covariate_prefix: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            stratum: "stratum".into(),
            cluster: "cluster".into(),
            weight: "weight".into(),
            size: "m".into(),
            count_prefix: "y".into(),
            covariate_prefix: "x".into(),
        }
    }
}

fn numbered_columns(headers: &csv::StringRecord, prefix: &str) -> Result<Vec<usize>> {
    let mut found: BTreeMap<usize, usize> = BTreeMap::new();
    for (pos, name) in headers.iter().enumerate() {
        let name = name.trim();
        if let Some(rest) = name.strip_prefix(prefix) {
            if !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()) {
                let idx: usize = rest.parse().map_err(|_| Error::Parse {
                    row: 0,
                    message: format!("bad column name {name}"),
                })?;
                if found.insert(idx, pos).is_some() {
                    return Err(Error::Parse {
                        row: 0,
                        message: format!("duplicate column {name}"),
                    });
                }
            }
        }
    }
    for (expected, &idx) in (1..).zip(found.keys()) {
        if idx != expected {
            return Err(Error::Parse {
                row: 0,
                message: format!(
                    "columns {prefix}1..{prefix}N must be contiguous; missing {prefix}{expected}"
                ),
            });
        }
    }
    Ok(found.into_values().collect())
}

fn named_column(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h.trim() == name)
}

pub fn read_dataset<R: Read>(reader: R, schema: &CsvSchema) -> Result<SurveyDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse {
            row: 0,
            message: e.to_string(),
        })?
        .clone();
    let require = |name: &str| {
        named_column(&headers, name).ok_or_else(|| Error::Parse {
            row: 0,
            message: format!("missing required column `{name}`"),
        })
    };
    let stratum_col = require(&schema.stratum)?;
    let cluster_col = require(&schema.cluster)?;
    let size_col = require(&schema.size)?;
    let weight_col = named_column(&headers, &schema.weight);
    let count_cols = numbered_columns(&headers, &schema.count_prefix)?;
    let covariate_cols = numbered_columns(&headers, &schema.covariate_prefix)?;
    if count_cols.len() < 2 {
        return Err(Error::Dimension(format!(
            "need at least 2 count columns ({}1, {}2, ...), found {}",
            schema.count_prefix,
            schema.count_prefix,
            count_cols.len()
        )));
    }

    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row_no = i + 1;
        let row = row.map_err(|e| Error::Parse {
            row: row_no,
            message: e.to_string(),
        })?;
        let field = |col: usize| -> Result<&str> {
            row.get(col).map(str::trim).ok_or_else(|| Error::Parse {
                row: row_no,
                message: format!("missing field {}", headers.get(col).unwrap_or("?")),
            })
        };
        let parse_int = |col: usize| -> Result<i64> {
            let s = field(col)?;
            s.parse().map_err(|_| Error::Parse {
                row: row_no,
                message: format!("column {}: expected an integer, got `{s}`", &headers[col]),
            })
        };
        let parse_count = |col: usize| -> Result<u64> {
            let s = field(col)?;
            s.parse().map_err(|_| Error::Parse {
                row: row_no,
                message: format!(
                    "column {}: expected a nonnegative integer, got `{s}`",
                    &headers[col]
                ),
            })
        };
        let parse_real = |col: usize| -> Result<f64> {
            let s = field(col)?;
            s.parse().map_err(|_| Error::Parse {
                row: row_no,
                message: format!("column {}: expected a number, got `{s}`", &headers[col]),
            })
        };
        let weight = match weight_col {
            Some(c) => parse_real(c)?,
            None => 1.0,
        };
        let mut covariates = Vec::with_capacity(covariate_cols.len() + 1);
        covariates.push(1.0);
        for &c in &covariate_cols {
            covariates.push(parse_real(c)?);
        }
        let record = ClusterRecord {
            stratum: parse_int(stratum_col)?,
            cluster: parse_int(cluster_col)?,
            weight,
            size: parse_count(size_col)?,
            counts: count_cols
                .iter()
                .map(|&c| parse_count(c))
                .collect::<Result<_>>()?,
            covariates,
        };
        record.validate().map_err(|e| Error::Parse {
            row: row_no,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    SurveyDataset::new(records)
}

pub fn load_dataset(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<SurveyDataset> {
    read_dataset(File::open(path)?, schema)
}

/// Canonical CSV: `stratum,cluster,weight,m,y1..y{d+1},x1..x{k}`.
pub fn write_dataset<W: Write>(data: &SurveyDataset, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec![
        "stratum".to_string(),
        "cluster".into(),
        "weight".into(),
        "m".into(),
    ];
    header.extend((1..=data.num_categories()).map(|s| format!("y{s}")));
    header.extend((1..data.num_covariates()).map(|j| format!("x{j}")));
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    wtr.write_record(&header).map_err(csv_err)?;
    for r in data.records() {
        let mut row = vec![
            r.stratum.to_string(),
            r.cluster.to_string(),
            r.weight.to_string(),
            r.size.to_string(),
        ];
        row.extend(r.counts.iter().map(u64::to_string));
        row.extend(r.covariates[1..].iter().map(f64::to_string));
        wtr.write_record(&row).map_err(csv_err)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn save_dataset(data: &SurveyDataset, path: impl AsRef<Path>) -> Result<()> {
    write_dataset(data, File::create(path)?)
}
