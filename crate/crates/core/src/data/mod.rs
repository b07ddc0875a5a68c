//! Datasets: ingestion, synthetic generation, preprocessing and splitting.

mod io;
mod split;
mod synthetic;

use serde::{Deserialize, Serialize};

pub use io::{bundled_theophylline, load_csv, load_schema, theophylline, write_csv, GlmSchema, Schema, THEOPHYLLINE_CSV};
pub use split::{split, unit_count, SplitSpec};
pub use synthetic::{
    gen_synthetic_ard, gen_synthetic_logistic, gen_synthetic_logistic_scaled, gen_synthetic_poisson, ArdShape, PoissonShape, SyntheticLogistic,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResponseKind {
    Binary,
    Count,
    Continuous,
}

/// How a design-matrix column was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ColumnKind {
    /// z-standardized on the training portion of a split.
    Continuous,
    /// One-hot indicator of `level` for the categorical column `source`.
    Indicator { source: String, level: String },
}

/// Per-column standardization fitted on a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

/// Regression data: a row-major `n × d` design matrix and one response per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tabular {
    pub response_name: String,
    pub response_kind: ResponseKind,
    pub feature_names: Vec<String>,
    pub column_kinds: Vec<ColumnKind>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// Grouping key per row; rows sharing an id are split together.
    pub unit_ids: Vec<String>,
    pub preprocessing: Option<Standardization>,
}

impl Tabular {
    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.n_features();
        &self.x[i * d..(i + 1) * d]
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        let d = self.n_features();
        (0..self.n_rows()).map(move |i| self.x[i * d + j])
    }

    pub(crate) fn select_rows(&self, rows: &[usize]) -> Tabular {
        let d = self.n_features();
        let mut x = Vec::with_capacity(rows.len() * d);
        for &i in rows {
            x.extend_from_slice(self.row(i));
        }
        Tabular {
            x,
            y: rows.iter().map(|&i| self.y[i]).collect(),
            unit_ids: rows.iter().map(|&i| self.unit_ids[i].clone()).collect(),
            ..self.clone()
        }
    }
}

/// One subject of a longitudinal pharmacokinetic study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Patient {
    pub id: String,
    /// Administered dose, mg/kg.
    pub dose: f64,
    /// Sampling times, hours.
    pub times: Vec<f64>,
    /// Measured concentrations, mg/L.
    pub concentrations: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Longitudinal {
    pub patients: Vec<Patient>,
}

impl Longitudinal {
    pub fn n_observations(&self) -> usize {
        self.patients.iter().map(|p| p.times.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Dataset {
    Tabular(Tabular),
    Longitudinal(Longitudinal),
}

impl Dataset {
    pub fn as_tabular(&self) -> Option<&Tabular> {
        match self {
            Dataset::Tabular(t) => Some(t),
            Dataset::Longitudinal(_) => None,
        }
    }

    pub fn as_longitudinal(&self) -> Option<&Longitudinal> {
        match self {
            Dataset::Longitudinal(l) => Some(l),
            Dataset::Tabular(_) => None,
        }
    }

    /// Rows (tabular) or observations (longitudinal).
    pub fn n_rows(&self) -> usize {
        match self {
            Dataset::Tabular(t) => t.n_rows(),
            Dataset::Longitudinal(l) => l.n_observations(),
        }
    }

    /// The schema under which [`write_csv`] output loads back to `self`.
    pub fn schema(&self) -> Schema {
        match self {
            Dataset::Longitudinal(_) => Schema::Theophylline { exclude_time_zero: true },
            Dataset::Tabular(t) => {
                let mut continuous = Vec::new();
                let mut indicators = Vec::new();
                for (name, kind) in t.feature_names.iter().zip(&t.column_kinds) {
                    match kind {
                        ColumnKind::Continuous => continuous.push(name.clone()),
                        ColumnKind::Indicator { .. } => indicators.push(name.clone()),
                    }
                }
                Schema::Glm(GlmSchema {
                    response: t.response_name.clone(),
                    response_kind: t.response_kind,
                    unit_column: Some("unit_id".into()),
                    continuous,
                    categorical: Vec::new(),
                    indicators,
                })
            }
        }
    }
}
