//! Problem ingestion: a structured spec file naming a CSV dataset and a
//! unit dictionary, plus the plumbing that turns both into a `Problem`.
//!
//! Spec files are TOML:
//!
//! ```toml
//! name = "fqe"
//! data = "fqe.csv"          # CSV path, relative to this file
//! target = "F"              # optional; defaults to the last column
//! truth = "q * E"           # optional ground-truth expression
//! difficulty = "easy"
//!
//! [units]
//! q = "C"
//! E = "V/m"
//! F = "N"
//! ```
//!
//! The CSV must carry a header row; every non-target column is a
//! feature, in header order. Unit strings use the unit grammar
//! (`kg*m*s^-2`, `V/m`, `1`). Columns without a unit entry default to
//! dimensionless — callers that need dimensions reject such specs via
//! [`ProblemSpec::missing_units`].

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bench::expr::parse_expression;
use crate::dimension::{parse_unit, DimVec, Op};
use crate::fitness::Problem;
use crate::genome::{ExprTree, SymbolTable};

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed problem spec: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("malformed csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("dataset needs a header and at least 2 columns, got {0}")]
    TooFewColumns(usize),
    #[error("dataset has no data rows")]
    EmptyData,
    #[error("row {row}, column '{column}': '{value}' is not a number")]
    BadNumber {
        row: usize,
        column: String,
        value: String,
    },
    #[error("target column '{0}' not found in the csv header")]
    TargetMissing(String),
    #[error("unit for '{column}' does not parse: {message}")]
    BadUnit { column: String, message: String },
    #[error("unit dictionary names '{0}', which is not a csv column")]
    UnknownUnitColumn(String),
    #[error("truth expression does not parse: {0}")]
    BadTruth(String),
}

/// Declarative description of one regression problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub name: String,
    /// CSV file, relative to the spec file's directory.
    pub data: String,
    /// Designated target column; `None` means the last column.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    /// Ground-truth expression over the feature columns.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<String>,
    /// Carried verbatim; `easy`/`medium`/`hard` by convention.
    pub difficulty: String,
    /// Unit string per column name.
    #[serde(default)]
    pub units: BTreeMap<String, String>,
}

impl ProblemSpec {
    /// Parses a spec document and validates that every unit string in
    /// the dictionary parses.
    pub fn from_toml_str(text: &str) -> Result<ProblemSpec, ProblemError> {
        let spec: ProblemSpec = toml::from_str(text)?;
        for (column, unit) in &spec.units {
            parse_unit(unit).map_err(|e| ProblemError::BadUnit {
                column: column.clone(),
                message: e.to_string(),
            })?;
        }
        Ok(spec)
    }

    /// Reads a spec file; the returned handle remembers where the data
    /// file lives.
    pub fn load(path: &Path) -> Result<LoadedProblem, ProblemError> {
        let text = std::fs::read_to_string(path).map_err(|source| ProblemError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let spec = ProblemSpec::from_toml_str(&text)?;
        let data_path = path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(&spec.data);
        Ok(LoadedProblem { spec, data_path })
    }

    /// Columns (features and target) that the unit dictionary does not
    /// cover. Dimension-aware modes refuse to run when this is
    /// non-empty.
    pub fn missing_units(&self, dataset: &Dataset) -> Vec<String> {
        let mut missing: Vec<String> = dataset
            .feature_names
            .iter()
            .filter(|n| !self.units.contains_key(*n))
            .cloned()
            .collect();
        if !self.units.contains_key(&dataset.target_name) {
            missing.push(dataset.target_name.clone());
        }
        missing
    }

    /// Dimension of a column, defaulting to dimensionless when the
    /// dictionary has no entry. Units were validated at load time.
    fn dim_of(&self, column: &str) -> DimVec {
        self.units
            .get(column)
            .map(|u| parse_unit(u).expect("validated at load"))
            .unwrap_or(DimVec::ZERO)
    }

    /// Builds the runnable problem: symbol table over `ops` plus the
    /// dataset's features, with an ephemeral-constant terminal if asked.
    pub fn build_problem(
        &self,
        dataset: &Dataset,
        ops: &[Op],
        with_constant: bool,
    ) -> Result<Problem, ProblemError> {
        for column in self.units.keys() {
            let known = dataset.feature_names.iter().any(|n| n == column)
                || *column == dataset.target_name;
            if !known {
                return Err(ProblemError::UnknownUnitColumn(column.clone()));
            }
        }
        let variables: Vec<(String, DimVec)> = dataset
            .feature_names
            .iter()
            .map(|n| (n.clone(), self.dim_of(n)))
            .collect();
        let table = SymbolTable::new(ops, &variables, with_constant);
        Ok(Problem {
            x: dataset.x.clone(),
            y: dataset.y.clone(),
            feature_names: dataset.feature_names.clone(),
            feature_dims: variables.into_iter().map(|(_, d)| d).collect(),
            target_dim: self.dim_of(&dataset.target_name),
            table,
        })
    }

    /// Parses the ground-truth expression against a problem's table,
    /// verifying it references only declared features.
    pub fn truth_tree(&self, table: &SymbolTable) -> Result<Option<ExprTree>, ProblemError> {
        match &self.truth {
            None => Ok(None),
            Some(text) => parse_expression(text, table)
                .map(Some)
                .map_err(|e| ProblemError::BadTruth(e.to_string())),
        }
    }
}

/// A spec plus the resolved location of its data file.
#[derive(Debug, Clone)]
pub struct LoadedProblem {
    pub spec: ProblemSpec,
    pub data_path: PathBuf,
}

impl LoadedProblem {
    /// Reads and shapes the CSV: header row, numeric cells, the
    /// designated (or last) column as target, the rest as features.
    pub fn read_dataset(&self) -> Result<Dataset, ProblemError> {
        let file = std::fs::File::open(&self.data_path).map_err(|source| ProblemError::Io {
            path: self.data_path.clone(),
            source,
        })?;
        let mut reader = csv::Reader::from_reader(file);
        let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        if headers.len() < 2 {
            return Err(ProblemError::TooFewColumns(headers.len()));
        }
        let target_idx = match &self.spec.target {
            None => headers.len() - 1,
            Some(name) => headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| ProblemError::TargetMissing(name.clone()))?,
        };
        let mut columns: Vec<Vec<f64>> = vec![Vec::new(); headers.len()];
        for (r, record) in reader.records().enumerate() {
            let record = record?;
            for (c, cell) in record.iter().enumerate() {
                let value: f64 = cell.trim().parse().map_err(|_| ProblemError::BadNumber {
                    row: r + 1,
                    column: headers.get(c).cloned().unwrap_or_default(),
                    value: cell.to_string(),
                })?;
                columns[c].push(value);
            }
        }
        if columns[0].is_empty() {
            return Err(ProblemError::EmptyData);
        }
        let y = columns.remove(target_idx);
        let target_name = headers[target_idx].clone();
        let feature_names: Vec<String> = headers
            .into_iter()
            .enumerate()
            .filter_map(|(i, h)| (i != target_idx).then_some(h))
            .collect();
        Ok(Dataset {
            feature_names,
            target_name,
            x: columns,
            y,
        })
    }
}

/// Column-major numeric data with the target split out.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub target_name: String,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
}
