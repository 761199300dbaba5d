//! MCAR / MAR / MNAR observation-mask simulation.
//!
//! Each generator is a pure function of `(data, spec)`: the spec's seed
//! fully determines the mask. MAR uses a logistic model driven by a seeded
//! subset of fully-observed columns; MNAR uses logistic self-masking on the
//! column's own standardized value. Intercepts are calibrated by bisection
//! so the expected missing fraction hits the requested rate.

use crate::data::{DataMatrix, ObservationMask};
use crate::error::{Error, Result};
use crate::rng::stream;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MissingKind {
    Mcar,
    Mar,
    Mnar,
}

impl MissingKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            MissingKind::Mcar => "mcar",
            MissingKind::Mar => "mar",
            MissingKind::Mnar => "mnar",
        }
    }
}

impl std::str::FromStr for MissingKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mcar" => Ok(MissingKind::Mcar),
            "mar" => Ok(MissingKind::Mar),
            "mnar" => Ok(MissingKind::Mnar),
            other => Err(Error::invalid(format!("unknown missing kind '{}'", other))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MnarDirection {
    /// High values are more likely to go missing.
    High,
    /// Low values are more likely to go missing.
    Low,
    /// Extreme values in either direction are more likely to go missing.
    Both,
}

/// Fully determines one simulated mask.
#[derive(Clone, Copy, Debug)]
pub struct MissingnessSpec {
    pub kind: MissingKind,
    pub rate: f64,
    pub seed: u64,
    /// Fraction of features kept fully observed as MAR drivers (min one).
    pub driver_fraction: f64,
    pub direction: MnarDirection,
    pub steepness: f64,
}

impl MissingnessSpec {
    pub fn new(kind: MissingKind, rate: f64, seed: u64) -> Self {
        MissingnessSpec {
            kind,
            rate,
            seed,
            driver_fraction: 0.1,
            direction: MnarDirection::High,
            steepness: 1.0,
        }
    }
}

/// A simulated mask plus any per-column mechanism warnings.
#[derive(Clone, Debug)]
pub struct GeneratedMask {
    pub mask: ObservationMask,
    pub warnings: Vec<String>,
}

pub fn generate(data: &DataMatrix, spec: &MissingnessSpec) -> Result<GeneratedMask> {
    match spec.kind {
        MissingKind::Mcar => generate_mcar(data, spec),
        MissingKind::Mar => generate_mar(data, spec),
        MissingKind::Mnar => generate_mnar(data, spec),
    }
}

fn check_rate(rate: f64) -> Result<()> {
    if !(rate > 0.0 && rate < 1.0) {
        return Err(Error::invalid(format!("missing rate {} outside (0,1)", rate)));
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Bisect the intercept `c` so that `mean_i sigmoid(scores[i] + c)` hits
/// `target`. Monotone in `c`; 40 iterations, tolerance 1e-4 in the rate.
fn calibrate_intercept(scores: &[f64], target: f64) -> f64 {
    let expected = |c: f64| scores.iter().map(|&s| sigmoid(s + c)).sum::<f64>() / scores.len() as f64;
    let (mut lo, mut hi) = (-60.0, 60.0);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        let e = expected(mid);
        if (e - target).abs() < 1e-4 {
            return mid;
        }
        if e < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Ensure every row keeps at least one observed entry by restoring one
/// uniformly chosen cell in fully-missing rows.
fn restore_rows(mask: &mut ObservationMask, rng: &mut impl Rng) {
    let (rows, cols) = (mask.rows(), mask.cols());
    for i in 0..rows {
        if (0..cols).all(|j| !mask.is_observed(i, j)) {
            let j = rng.random_range(0..cols);
            mask.set(i, j, true);
        }
    }
}

fn column_mean_std(data: &DataMatrix, j: usize) -> (f64, f64) {
    let n = data.rows() as f64;
    let mean = (0..data.rows()).map(|i| data.raw(i, j)).sum::<f64>() / n;
    let var = (0..data.rows())
        .map(|i| {
            let d = data.raw(i, j) - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    (mean, var.sqrt())
}

fn require_complete(data: &DataMatrix, mechanism: &str) -> Result<()> {
    if data.mask().missing_count() > 0 {
        return Err(Error::invalid(format!(
            "{} simulation needs a complete ground-truth matrix",
            mechanism
        )));
    }
    Ok(())
}

/// Every cell goes missing independently with probability `rate`.
pub fn generate_mcar(data: &DataMatrix, spec: &MissingnessSpec) -> Result<GeneratedMask> {
    check_rate(spec.rate)?;
    let (rows, cols) = (data.rows(), data.cols());
    let mut rng = stream(spec.seed, "missingness/mcar");
    let mut mask = ObservationMask::all_observed(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            if rng.random::<f64>() < spec.rate {
                mask.set(i, j, false);
            }
        }
    }
    restore_rows(&mut mask, &mut rng);
    Ok(GeneratedMask { mask, warnings: Vec::new() })
}

/// Missingness of non-driver columns depends on observed driver columns
/// through a logistic model; drivers stay fully observed.
pub fn generate_mar(data: &DataMatrix, spec: &MissingnessSpec) -> Result<GeneratedMask> {
    check_rate(spec.rate)?;
    require_complete(data, "MAR")?;
    let (rows, cols) = (data.rows(), data.cols());
    if cols < 2 {
        return Err(Error::invalid("MAR needs at least 2 features"));
    }
    let n_drivers = ((spec.driver_fraction * cols as f64).ceil() as usize).max(1);
    let max_rate = (cols - n_drivers) as f64 / cols as f64;
    if spec.rate * cols as f64 > (cols - n_drivers) as f64 + 1e-12 {
        return Err(Error::invalid(format!(
            "MAR rate {} infeasible with {} driver columns; maximum achievable rate is {}",
            spec.rate, n_drivers, max_rate
        )));
    }
    // Non-driver columns absorb the drivers' zero rate.
    let column_rate = (spec.rate * cols as f64 / (cols - n_drivers) as f64).min(1.0);

    let mut rng = stream(spec.seed, "missingness/mar");
    let mut order: Vec<usize> = (0..cols).collect();
    for i in (1..cols).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let drivers: Vec<usize> = {
        let mut d = order[..n_drivers].to_vec();
        d.sort_unstable();
        d
    };

    // Standardized driver values per row.
    let stats: Vec<(f64, f64)> = drivers.iter().map(|&j| column_mean_std(data, j)).collect();
    let driver_values = |i: usize| -> Vec<f64> {
        drivers
            .iter()
            .zip(&stats)
            .map(|(&j, &(mean, std))| {
                let s = if std > 1e-12 { std } else { 1.0 };
                (data.raw(i, j) - mean) / s
            })
            .collect()
    };

    let normal = StandardNormal;
    let mut mask = ObservationMask::all_observed(rows, cols);
    for j in 0..cols {
        if drivers.contains(&j) {
            continue;
        }
        // Seeded random unit vector over the driver subspace.
        let mut w: Vec<f64> = (0..n_drivers).map(|_| normal.sample(&mut rng)).collect();
        let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        w.iter_mut().for_each(|v| *v /= norm);

        let scores: Vec<f64> = (0..rows)
            .map(|i| {
                let dv = driver_values(i);
                spec.steepness * w.iter().zip(&dv).map(|(&a, &b)| a * b).sum::<f64>()
            })
            .collect();
        let c = calibrate_intercept(&scores, column_rate);
        for (i, &s) in scores.iter().enumerate() {
            if rng.random::<f64>() < sigmoid(s + c) {
                mask.set(i, j, false);
            }
        }
    }
    restore_rows(&mut mask, &mut rng);
    Ok(GeneratedMask { mask, warnings: Vec::new() })
}

/// Self-masking: each cell's missing probability depends on its own
/// (standardized) value. Constant columns fall back to MCAR with a warning.
pub fn generate_mnar(data: &DataMatrix, spec: &MissingnessSpec) -> Result<GeneratedMask> {
    check_rate(spec.rate)?;
    require_complete(data, "MNAR")?;
    let (rows, cols) = (data.rows(), data.cols());
    let mut rng = stream(spec.seed, "missingness/mnar");
    let mut mask = ObservationMask::all_observed(rows, cols);
    let mut warnings = Vec::new();

    for j in 0..cols {
        let (mean, std) = column_mean_std(data, j);
        if std < 1e-12 {
            warnings.push(format!(
                "column {} has zero variance; fell back to MCAR for this column",
                j
            ));
            for i in 0..rows {
                if rng.random::<f64>() < spec.rate {
                    mask.set(i, j, false);
                }
            }
            continue;
        }
        let scores: Vec<f64> = (0..rows)
            .map(|i| {
                let z = (data.raw(i, j) - mean) / std;
                let signed = match spec.direction {
                    MnarDirection::High => z,
                    MnarDirection::Low => -z,
                    MnarDirection::Both => z.abs(),
                };
                spec.steepness * signed
            })
            .collect();
        let c = calibrate_intercept(&scores, spec.rate);
        for (i, &s) in scores.iter().enumerate() {
            if rng.random::<f64>() < sigmoid(s + c) {
                mask.set(i, j, false);
            }
        }
    }
    restore_rows(&mut mask, &mut rng);
    Ok(GeneratedMask { mask, warnings })
}
