use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{ColumnKind, Dataset, Longitudinal, Standardization, Tabular};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Train/test ratio such as 9:3 or 8:1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub train: usize,
    pub test: usize,
    /// Split individual rows instead of units (patients, `unit_id` groups).
    #[serde(default)]
    pub row_level: bool,
}

impl SplitSpec {
    pub fn new(train: usize, test: usize) -> Self {
        Self { train, test, row_level: false }
    }

    /// Number of test units out of `n`.
    pub fn n_test(&self, n: usize) -> Result<usize> {
        let parts = self.train + self.test;
        if parts == 0 {
            return Err(Error::Config("split ratio must have a positive part".into()));
        }
        if parts > n {
            return Err(Error::Data(format!(
                "split ratio {}:{} is infeasible for {n} units",
                self.train, self.test
            )));
        }
        let n_test = ((n * self.test) as f64 / parts as f64).round() as usize;
        if self.train > 0 && n_test == n {
            return Err(Error::Data(format!("split ratio {}:{} leaves no training units", self.train, self.test)));
        }
        Ok(n_test)
    }
}

/// Units of a dataset in first-appearance order, as row-index groups.
fn units(ds: &Dataset, row_level: bool) -> Vec<Vec<usize>> {
    match ds {
        Dataset::Longitudinal(l) => (0..l.patients.len()).map(|i| vec![i]).collect(),
        Dataset::Tabular(t) if row_level => (0..t.n_rows()).map(|i| vec![i]).collect(),
        Dataset::Tabular(t) => {
            let mut order: Vec<&str> = Vec::new();
            let mut groups: std::collections::HashMap<&str, Vec<usize>> = Default::default();
            for (i, id) in t.unit_ids.iter().enumerate() {
                groups
                    .entry(id.as_str())
                    .or_insert_with(|| {
                        order.push(id);
                        Vec::new()
                    })
                    .push(i);
            }
            order.into_iter().map(|id| groups.remove(id).unwrap_or_default()).collect()
        }
    }
}

pub fn unit_count(ds: &Dataset, row_level: bool) -> usize {
    units(ds, row_level).len()
}

/// Randomly partitions units into train and test sets. For tabular data the
/// continuous columns are z-standardized with statistics fitted on the
/// training rows and applied unchanged to the test rows.
pub fn split(ds: &Dataset, spec: &SplitSpec, rng: &mut Rng) -> Result<(Dataset, Dataset)> {
    let groups = units(ds, spec.row_level);
    let n_test = spec.n_test(groups.len())?;
    let mut perm: Vec<usize> = (0..groups.len()).collect();
    perm.shuffle(rng);
    let mut test_units = perm[..n_test].to_vec();
    let mut train_units = perm[n_test..].to_vec();
    test_units.sort_unstable();
    train_units.sort_unstable();
    let rows_of = |us: &[usize]| -> Vec<usize> {
        let mut rows: Vec<usize> = us.iter().flat_map(|&u| groups[u].iter().copied()).collect();
        rows.sort_unstable();
        rows
    };
    match ds {
        Dataset::Longitudinal(l) => {
            let pick = |rows: Vec<usize>| Longitudinal { patients: rows.into_iter().map(|i| l.patients[i].clone()).collect() };
            Ok((
                Dataset::Longitudinal(pick(rows_of(&train_units))),
                Dataset::Longitudinal(pick(rows_of(&test_units))),
            ))
        }
        Dataset::Tabular(t) => {
            let mut train = t.select_rows(&rows_of(&train_units));
            let mut test = t.select_rows(&rows_of(&test_units));
            let st = fit_standardization(&train);
            apply_standardization(&mut train, &st);
            apply_standardization(&mut test, &st);
            train.preprocessing = Some(st.clone());
            test.preprocessing = Some(st);
            Ok((Dataset::Tabular(train), Dataset::Tabular(test)))
        }
    }
}

/// Mean and unbiased SD of every continuous column; indicator columns get
/// the identity transform. Constant columns are centered only.
fn fit_standardization(t: &Tabular) -> Standardization {
    let d = t.n_features();
    let n = t.n_rows() as f64;
    let mut means = vec![0.0; d];
    let mut sds = vec![1.0; d];
    for j in 0..d {
        if !matches!(t.column_kinds[j], ColumnKind::Continuous) || t.n_rows() == 0 {
            continue;
        }
        let mean = t.column(j).sum::<f64>() / n;
        means[j] = mean;
        if t.n_rows() > 1 {
            let var = t.column(j).map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
            if var > 0.0 {
                sds[j] = var.sqrt();
            }
        }
    }
    Standardization { means, sds }
}

fn apply_standardization(t: &mut Tabular, st: &Standardization) {
    let d = t.n_features();
    for row in t.x.chunks_mut(d.max(1)) {
        for j in 0..d {
            row[j] = (row[j] - st.means[j]) / st.sds[j];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic_logistic, theophylline, ResponseKind};
    use crate::rng;
    use proptest::prelude::*;

    fn toy(n: usize) -> Dataset {
        Dataset::Tabular(Tabular {
            response_name: "y".into(),
            response_kind: ResponseKind::Continuous,
            feature_names: vec!["a".into(), "b".into()],
            column_kinds: vec![ColumnKind::Continuous, ColumnKind::Continuous],
            x: (0..2 * n).map(|i| (i as f64 * 0.37).sin() * 5.0 + 3.0).collect(),
            y: (0..n).map(|i| i as f64).collect(),
            unit_ids: (0..n).map(|i| i.to_string()).collect(),
            preprocessing: None,
        })
    }

    #[test]
    fn theophylline_nine_three() {
        let ds = Dataset::Longitudinal(theophylline());
        let (tr, te) = split(&ds, &SplitSpec::new(9, 3), &mut rng::stream(3)).unwrap();
        assert_eq!(tr.as_longitudinal().unwrap().patients.len(), 9);
        assert_eq!(te.as_longitudinal().unwrap().patients.len(), 3);
    }

    #[test]
    fn zero_test_part_gives_empty_test() {
        let (tr, te) = split(&toy(20), &SplitSpec::new(5, 0), &mut rng::stream(1)).unwrap();
        assert_eq!(tr.n_rows(), 20);
        assert_eq!(te.n_rows(), 0);
    }

    #[test]
    fn infeasible_ratio() {
        assert!(split(&toy(5), &SplitSpec::new(9, 3), &mut rng::stream(1)).is_err());
    }

    #[test]
    fn standardization_fit_on_train_only() {
        let ds = gen_synthetic_logistic(200, 5, 10.0, (1.0, 0.1), 4).unwrap().dataset;
        let (tr, te) = split(&ds, &SplitSpec::new(8, 1), &mut rng::stream(2)).unwrap();
        let (tr, te) = (tr.as_tabular().unwrap(), te.as_tabular().unwrap());
        for j in 0..tr.n_features() {
            let n = tr.n_rows() as f64;
            let mean = tr.column(j).sum::<f64>() / n;
            let sd = (tr.column(j).map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            assert!(mean.abs() < 1e-10 && (sd - 1.0).abs() < 1e-10);
        }
        let leak = (0..te.n_features()).any(|j| (te.column(j).sum::<f64>() / te.n_rows() as f64).abs() > 1e-6);
        assert!(leak, "test columns should not be exactly centered");
    }

    #[test]
    fn grouped_rows_stay_together() {
        let mut ds = toy(30);
        if let Dataset::Tabular(t) = &mut ds {
            t.unit_ids = (0..30).map(|i| (i / 3).to_string()).collect();
        }
        let (tr, te) = split(&ds, &SplitSpec::new(4, 1), &mut rng::stream(5)).unwrap();
        assert_eq!(te.n_rows(), 6);
        let train_ids: std::collections::HashSet<_> = tr.as_tabular().unwrap().unit_ids.iter().cloned().collect();
        assert!(te.as_tabular().unwrap().unit_ids.iter().all(|u| !train_ids.contains(u)));
    }

    proptest! {
        #[test]
        fn split_is_a_deterministic_partition(n in 2usize..120, a in 1usize..10, b in 0usize..10, seed: u64) {
            prop_assume!(a + b <= n);
            let ds = toy(n);
            let spec = SplitSpec::new(a, b);
            let Ok((tr, te)) = split(&ds, &spec, &mut rng::stream(seed)) else { return Ok(()); };
            let (tr, te) = (tr.as_tabular().unwrap(), te.as_tabular().unwrap());
            let mut all: Vec<f64> = tr.y.iter().chain(&te.y).copied().collect();
            all.sort_by(f64::total_cmp);
            prop_assert_eq!(all, (0..n).map(|i| i as f64).collect::<Vec<_>>());
            let (tr2, te2) = split(&ds, &spec, &mut rng::stream(seed)).unwrap();
            prop_assert_eq!(&tr.y, &tr2.as_tabular().unwrap().y);
            prop_assert_eq!(&te.y, &te2.as_tabular().unwrap().y);
        }
    }
}
