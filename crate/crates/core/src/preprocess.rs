//! Train-fold standardization and median initialization.
//!
//! Statistics are always fitted on the observed cells of the training split
//! only, then applied unchanged to any split, so no information leaks from
//! held-out rows.

use crate::data::DataMatrix;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Per-feature statistics fitted on a training split: population mean/std
/// of observed values, plus the median of the standardized observed values
/// used for missing-cell initialization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldStats {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub medians: Vec<f64>,
}

impl FoldStats {
    pub fn n_features(&self) -> usize {
        self.means.len()
    }
}

/// Fit per-column statistics on the observed train cells. Degenerate
/// columns (fewer than 2 observed values, or near-zero spread) standardize
/// with std 1 and are reported as warnings rather than errors.
pub fn fit(train: &DataMatrix) -> Result<(FoldStats, Vec<String>)> {
    let cols = train.cols();
    let mut means = vec![0.0; cols];
    let mut stds = vec![1.0; cols];
    let mut medians = vec![0.0; cols];
    let mut warnings = Vec::new();

    for j in 0..cols {
        let mut vals: Vec<f64> = train.observed_in_column(j).collect();
        if vals.is_empty() {
            return Err(Error::EmptyColumn(j));
        }
        if vals.len() < 2 {
            warnings.push(format!("column {}: only one observed train value", j));
        }
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let mut std = var.sqrt();
        if std < 1e-12 {
            warnings.push(format!("column {}: near-zero variance, standardizing with std 1", j));
            std = 1.0;
        }
        means[j] = mean;
        stds[j] = std;

        vals.sort_by(f64::total_cmp);
        let m = vals.len();
        let median_raw = if m % 2 == 1 {
            vals[m / 2]
        } else {
            0.5 * (vals[m / 2 - 1] + vals[m / 2])
        };
        medians[j] = (median_raw - mean) / std;
    }
    Ok((FoldStats { means, stds, medians }, warnings))
}

fn check_width(stats: &FoldStats, m: &DataMatrix) -> Result<()> {
    if stats.n_features() != m.cols() {
        return Err(Error::ShapeMismatch {
            op: "standardize",
            lhs: vec![stats.n_features()],
            rhs: vec![m.cols()],
        });
    }
    Ok(())
}

/// Apply `(x - mean) / std` to the observed cells; missing cells stay missing.
pub fn standardize(stats: &FoldStats, m: &DataMatrix) -> Result<DataMatrix> {
    check_width(stats, m)?;
    let mut out = m.clone();
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            if let Some(v) = m.get(i, j) {
                out.set(i, j, (v - stats.means[j]) / stats.stds[j]);
            }
        }
    }
    Ok(out)
}

/// Map a standardized value back to the original scale of column `j`.
pub fn destandardize_value(stats: &FoldStats, j: usize, v: f64) -> f64 {
    v * stats.stds[j] + stats.means[j]
}

/// Dense standardized working matrix: observed cells standardized, missing
/// cells filled with the train-fold standardized medians.
pub fn standardized_filled(stats: &FoldStats, m: &DataMatrix) -> Result<Vec<f64>> {
    check_width(stats, m)?;
    let (rows, cols) = (m.rows(), m.cols());
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[i * cols + j] = match m.get(i, j) {
                Some(v) => (v - stats.means[j]) / stats.stds[j],
                None => stats.medians[j],
            };
        }
    }
    Ok(out)
}

/// 0/1 mask matrix aligned with [`standardized_filled`], 1 = observed.
pub fn mask_matrix(m: &DataMatrix) -> Vec<f64> {
    let (rows, cols) = (m.rows(), m.cols());
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            if m.is_observed(i, j) {
                out[i * cols + j] = 1.0;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ObservationMask;

    #[test]
    fn two_point_column_standardizes_to_unit() {
        // observed [0, 2]: population mean 1, std 1.
        let train = DataMatrix::full(2, 1, vec![0.0, 2.0]).unwrap();
        let (stats, warnings) = fit(&train).unwrap();
        assert_eq!(stats.means, vec![1.0]);
        assert_eq!(stats.stds, vec![1.0]);
        assert!(warnings.is_empty());
        let std = standardize(&stats, &train).unwrap();
        assert_eq!(std.values(), &[-1.0, 1.0]);
    }

    #[test]
    fn standardize_round_trip_is_identity() {
        let train =
            DataMatrix::full(3, 2, vec![1.5, -2.0, 3.25, 4.0, -0.5, 8.0]).unwrap();
        let (stats, _) = fit(&train).unwrap();
        let std = standardize(&stats, &train).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let back = destandardize_value(&stats, j, std.get(i, j).unwrap());
                assert!((back - train.get(i, j).unwrap()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn target_split_uses_train_statistics() {
        let train = DataMatrix::full(2, 1, vec![0.0, 2.0]).unwrap();
        let shifted_test = DataMatrix::full(2, 1, vec![100.0, 102.0]).unwrap();
        let (stats, _) = fit(&train).unwrap();
        let std = standardize(&stats, &shifted_test).unwrap();
        // (100 - 1) / 1, not standardized by the test split's own stats.
        assert_eq!(std.values(), &[99.0, 101.0]);
    }

    #[test]
    fn degenerate_column_warns_and_uses_unit_std() {
        let train = DataMatrix::full(3, 1, vec![5.0, 5.0, 5.0]).unwrap();
        let (stats, warnings) = fit(&train).unwrap();
        assert_eq!(stats.stds, vec![1.0]);
        assert_eq!(warnings.len(), 1);
    }

    #[test]
    fn median_fill_uses_standardized_train_median() {
        let mask = ObservationMask::from_vec(4, 1, vec![true, true, true, false]).unwrap();
        let m =
            DataMatrix::with_mask(4, 1, vec![1.0, 2.0, 9.0, f64::NAN], mask).unwrap();
        let (stats, _) = fit(&m).unwrap();
        let work = standardized_filled(&stats, &m).unwrap();
        // median of raw observed [1,2,9] is 2 -> standardized (2-mean)/std
        let expected = (2.0 - stats.means[0]) / stats.stds[0];
        assert!((work[3] - expected).abs() < 1e-12);
        assert_eq!(stats.medians[0], expected);
    }
}
