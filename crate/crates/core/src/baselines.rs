//! Reference imputers: column-median fill and KNN over a
//! missing-aware Euclidean distance.

use crate::data::DataMatrix;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct KnnConfig {
    pub k: usize,
}

impl Default for KnnConfig {
    fn default() -> Self {
        KnnConfig { k: 5 }
    }
}

fn check_widths(train: &DataMatrix, target: &DataMatrix) -> Result<()> {
    if train.cols() != target.cols() {
        return Err(Error::ShapeMismatch {
            op: "impute",
            lhs: vec![train.rows(), train.cols()],
            rhs: vec![target.rows(), target.cols()],
        });
    }
    Ok(())
}

/// Median of the observed train values in column `j`; even counts average
/// the two middle values.
fn column_median(train: &DataMatrix, j: usize) -> Result<f64> {
    let mut vals: Vec<f64> = train.observed_in_column(j).collect();
    if vals.is_empty() {
        return Err(Error::EmptyColumn(j));
    }
    vals.sort_by(f64::total_cmp);
    let n = vals.len();
    Ok(if n % 2 == 1 {
        vals[n / 2]
    } else {
        0.5 * (vals[n / 2 - 1] + vals[n / 2])
    })
}

/// Train-split column medians; errors if any column has no observed value.
pub fn train_medians(train: &DataMatrix) -> Result<Vec<f64>> {
    (0..train.cols()).map(|j| column_median(train, j)).collect()
}

/// Fill each missing target cell with its column's train-split median.
pub fn impute_median(train: &DataMatrix, target: &DataMatrix) -> Result<DataMatrix> {
    check_widths(train, target)?;
    let medians = train_medians(train)?;
    let mut out = target.clone();
    for i in 0..target.rows() {
        for j in 0..target.cols() {
            if !target.is_observed(i, j) {
                out.set(i, j, medians[j]);
            }
        }
    }
    Ok(out)
}

/// Distance between two rows over mutually observed features:
/// `sqrt(sum((a - b)^2) / overlap)`; `None` when the overlap is empty.
fn row_distance(a: &DataMatrix, i: usize, b: &DataMatrix, t: usize) -> Option<f64> {
    let mut sum = 0.0;
    let mut overlap = 0usize;
    for j in 0..a.cols() {
        if let (Some(x), Some(y)) = (a.get(i, j), b.get(t, j)) {
            let d = x - y;
            sum += d * d;
            overlap += 1;
        }
    }
    (overlap > 0).then(|| (sum / overlap as f64).sqrt())
}

/// KNN imputation: each missing cell takes the unweighted mean of the k
/// nearest train rows that observe the feature, with distance ties broken
/// by lower train-row index and a train-median fallback when no candidate
/// neighbor exists.
pub fn impute_knn(train: &DataMatrix, target: &DataMatrix, cfg: &KnnConfig) -> Result<DataMatrix> {
    check_widths(train, target)?;
    if cfg.k == 0 {
        return Err(Error::invalid("knn: k must be at least 1"));
    }
    if cfg.k > train.rows() {
        return Err(Error::invalid(format!(
            "knn: k = {} exceeds {} train rows",
            cfg.k,
            train.rows()
        )));
    }

    let mut out = target.clone();
    let mut median_cache: Vec<Option<f64>> = vec![None; train.cols()];

    for i in 0..target.rows() {
        if (0..target.cols()).all(|j| target.is_observed(i, j)) {
            continue;
        }
        // Rank candidate train rows once per target row.
        let mut ranked: Vec<(f64, usize)> = (0..train.rows())
            .filter_map(|t| row_distance(target, i, train, t).map(|d| (d, t)))
            .collect();
        ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

        for j in 0..target.cols() {
            if target.is_observed(i, j) {
                continue;
            }
            let mut sum = 0.0;
            let mut count = 0usize;
            for &(_, t) in &ranked {
                if let Some(v) = train.get(t, j) {
                    sum += v;
                    count += 1;
                    if count == cfg.k {
                        break;
                    }
                }
            }
            let value = if count > 0 {
                sum / count as f64
            } else {
                match median_cache[j] {
                    Some(m) => m,
                    None => {
                        let m = column_median(train, j)?;
                        median_cache[j] = Some(m);
                        m
                    }
                }
            };
            out.set(i, j, value);
        }
    }
    Ok(out)
}
