use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ColumnKind, Dataset, Longitudinal, Patient, ResponseKind, Tabular};
use crate::error::{Error, Result};

/// Bundled Theophylline study: 12 patients, 11 samples each including the
/// pre-dose measurement at `t = 0`. Doses are mg/kg.
pub const THEOPHYLLINE_CSV: &str = include_str!("../../data/theophylline.csv");

/// Describes how to read a CSV file into a [`Dataset`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Schema {
    /// Columns `patient, dose, time, concentration`.
    Theophylline {
        #[serde(default = "yes")]
        exclude_time_zero: bool,
    },
    Glm(GlmSchema),
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GlmSchema {
    pub response: String,
    pub response_kind: ResponseKind,
    /// Rows sharing a value in this column form one unit; otherwise each row is a unit.
    #[serde(default)]
    pub unit_column: Option<String>,
    /// Numeric columns, z-standardized at split time.
    #[serde(default)]
    pub continuous: Vec<String>,
    /// String-valued columns, one-hot encoded over the levels present in the file.
    #[serde(default)]
    pub categorical: Vec<String>,
    /// Pre-encoded 0/1 indicator columns named `source=level`.
    #[serde(default)]
    pub indicators: Vec<String>,
}

/// Reads a schema descriptor (TOML).
pub fn load_schema(path: impl AsRef<Path>) -> Result<Schema> {
    let text = std::fs::read_to_string(path.as_ref())?;
    toml::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.as_ref().display())))
}

pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset> {
    let path = path.as_ref();
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    let ds = parse_csv(&text, schema, path)?;
    log::info!("{}: loaded {} rows", path.display(), ds.n_rows());
    Ok(ds)
}

/// The bundled Theophylline data with the `t = 0` rows removed.
pub fn theophylline() -> Longitudinal {
    bundled_theophylline(true)
}

pub fn bundled_theophylline(exclude_time_zero: bool) -> Longitudinal {
    let schema = Schema::Theophylline { exclude_time_zero };
    match parse_csv(THEOPHYLLINE_CSV, &schema, Path::new("<bundled theophylline>")) {
        Ok(Dataset::Longitudinal(l)) => l,
        _ => unreachable!("bundled data is valid"),
    }
}

struct Table<'a> {
    path: &'a Path,
    headers: Vec<String>,
    rows: Vec<csv::StringRecord>,
}

impl Table<'_> {
    fn column(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Data(format!("{}: missing column `{name}`", self.path.display())))
    }

    fn number(&self, row: usize, col: usize) -> Result<f64> {
        let raw = self.rows[row].get(col).unwrap_or("").trim();
        match raw.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            Ok(_) => Err(self.cell_error(row, col, format!("non-finite value `{raw}`"))),
            Err(_) => Err(self.cell_error(row, col, format!("cannot parse `{raw}` as a number"))),
        }
    }

    fn text(&self, row: usize, col: usize) -> &str {
        self.rows[row].get(col).unwrap_or("").trim()
    }

    fn cell_error(&self, row: usize, col: usize, reason: String) -> Error {
        Error::Cell { path: self.path.to_path_buf(), row: row + 1, column: self.headers[col].clone(), reason }
    }
}

fn parse_csv(text: &str, schema: &Schema, path: &Path) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    let rows = reader.records().collect::<std::result::Result<Vec<_>, _>>()?;
    if headers.iter().all(|h| h.is_empty()) || rows.is_empty() {
        return Err(Error::Data(format!("{}: empty file", path.display())));
    }
    let table = Table { path, headers, rows };
    match schema {
        Schema::Theophylline { exclude_time_zero } => parse_longitudinal(&table, *exclude_time_zero),
        Schema::Glm(glm) => parse_tabular(&table, glm),
    }
}

fn parse_longitudinal(table: &Table, exclude_time_zero: bool) -> Result<Dataset> {
    let [pc, dc, tc, cc] = ["patient", "dose", "time", "concentration"].map(|c| table.column(c));
    let (pc, dc, tc, cc) = (pc?, dc?, tc?, cc?);
    let mut patients: Vec<Patient> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for r in 0..table.rows.len() {
        let id = table.text(r, pc).to_owned();
        if id.is_empty() {
            return Err(table.cell_error(r, pc, "empty patient id".into()));
        }
        let dose = table.number(r, dc)?;
        let time = table.number(r, tc)?;
        let conc = table.number(r, cc)?;
        if time < 0.0 {
            return Err(table.cell_error(r, tc, "negative time".into()));
        }
        let slot = *index.entry(id.clone()).or_insert_with(|| {
            patients.push(Patient { id, dose, times: Vec::new(), concentrations: Vec::new() });
            patients.len() - 1
        });
        let p = &mut patients[slot];
        if p.dose != dose {
            return Err(table.cell_error(r, dc, format!("dose differs from earlier rows of patient {}", p.id)));
        }
        if exclude_time_zero && time == 0.0 {
            continue;
        }
        p.times.push(time);
        p.concentrations.push(conc);
    }
    Ok(Dataset::Longitudinal(Longitudinal { patients }))
}

fn parse_tabular(table: &Table, schema: &GlmSchema) -> Result<Dataset> {
    let n = table.rows.len();
    let yc = table.column(&schema.response)?;
    let uc = schema.unit_column.as_deref().map(|c| table.column(c)).transpose()?;
    let cont: Vec<usize> = schema.continuous.iter().map(|c| table.column(c)).collect::<Result<_>>()?;
    let cats: Vec<usize> = schema.categorical.iter().map(|c| table.column(c)).collect::<Result<_>>()?;
    let inds: Vec<usize> = schema.indicators.iter().map(|c| table.column(c)).collect::<Result<_>>()?;

    let mut feature_names: Vec<String> = schema.continuous.clone();
    let mut column_kinds = vec![ColumnKind::Continuous; cont.len()];
    let mut levels: Vec<Vec<String>> = Vec::new();
    for (name, &c) in schema.categorical.iter().zip(&cats) {
        let set: BTreeSet<&str> = (0..n).map(|r| table.text(r, c)).collect();
        let lv: Vec<String> = set.into_iter().map(str::to_owned).collect();
        for l in &lv {
            feature_names.push(format!("{name}={l}"));
            column_kinds.push(ColumnKind::Indicator { source: name.clone(), level: l.clone() });
        }
        levels.push(lv);
    }
    for name in &schema.indicators {
        let (source, level) = name
            .split_once('=')
            .ok_or_else(|| Error::Data(format!("indicator column `{name}` is not named `source=level`")))?;
        feature_names.push(name.clone());
        column_kinds.push(ColumnKind::Indicator { source: source.into(), level: level.into() });
    }

    let d = feature_names.len();
    let mut x = Vec::with_capacity(n * d);
    let mut y = Vec::with_capacity(n);
    let mut unit_ids = Vec::with_capacity(n);
    for r in 0..n {
        let v = table.number(r, yc)?;
        let ok = match schema.response_kind {
            ResponseKind::Binary => v == 0.0 || v == 1.0,
            ResponseKind::Count => v >= 0.0 && v.fract() == 0.0,
            ResponseKind::Continuous => true,
        };
        if !ok {
            return Err(table.cell_error(r, yc, format!("`{v}` is not a valid {:?} response", schema.response_kind)));
        }
        y.push(v);
        for &c in &cont {
            x.push(table.number(r, c)?);
        }
        for (&c, lv) in cats.iter().zip(&levels) {
            let value = table.text(r, c);
            x.extend(lv.iter().map(|l| if l == value { 1.0 } else { 0.0 }));
        }
        for &c in &inds {
            let v = table.number(r, c)?;
            if v != 0.0 && v != 1.0 {
                return Err(table.cell_error(r, c, format!("indicator value `{v}` is not 0/1")));
            }
            x.push(v);
        }
        unit_ids.push(match uc {
            Some(c) => table.text(r, c).to_owned(),
            None => r.to_string(),
        });
    }
    Ok(Dataset::Tabular(Tabular {
        response_name: schema.response.clone(),
        response_kind: schema.response_kind,
        feature_names,
        column_kinds,
        x,
        y,
        unit_ids,
        preprocessing: None,
    }))
}

/// Writes `dataset` so that `load_csv(path, &dataset.schema())` reads it back.
pub fn write_csv<W: Write>(dataset: &Dataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    match dataset {
        Dataset::Longitudinal(l) => {
            w.write_record(["patient", "dose", "time", "concentration"])?;
            for p in &l.patients {
                for (t, c) in p.times.iter().zip(&p.concentrations) {
                    w.write_record([p.id.clone(), p.dose.to_string(), t.to_string(), c.to_string()])?;
                }
            }
        }
        Dataset::Tabular(t) => {
            let mut header = vec!["unit_id".to_owned(), t.response_name.clone()];
            header.extend(t.feature_names.iter().cloned());
            w.write_record(&header)?;
            for i in 0..t.n_rows() {
                let mut rec = vec![t.unit_ids[i].clone(), t.y[i].to_string()];
                rec.extend(t.row(i).iter().map(f64::to_string));
                w.write_record(&rec)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
