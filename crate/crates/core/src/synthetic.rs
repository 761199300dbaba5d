//! Bundled synthetic dataset: correlated Gaussian factors plus noise.
//!
//! Features are linear mixes of a few shared latent factors, then shifted
//! and rescaled per column so standardization is exercised. Fully observed;
//! missingness is simulated on top of it.

use crate::data::DataMatrix;
use crate::rng::stream;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Clone, Copy, Debug)]
pub struct SyntheticSpec {
    pub rows: usize,
    pub cols: usize,
    pub factors: usize,
    /// Std of the additive feature noise relative to unit-variance factors.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec { rows: 500, cols: 10, factors: 3, noise: 0.3, seed: 0 }
    }
}

pub fn generate(spec: &SyntheticSpec) -> DataMatrix {
    let mut load_rng = stream(spec.seed, "synthetic/loadings");
    let mut factor_rng = stream(spec.seed, "synthetic/factors");
    let mut noise_rng = stream(spec.seed, "synthetic/noise");
    let normal = StandardNormal;

    let loadings: Vec<f64> = (0..spec.factors * spec.cols)
        .map(|_| normal.sample(&mut load_rng))
        .collect();
    let scales: Vec<f64> = (0..spec.cols)
        .map(|_| 0.5 + 2.5 * load_rng.random::<f64>())
        .collect();
    let shifts: Vec<f64> = (0..spec.cols)
        .map(|_| 4.0 * load_rng.random::<f64>() - 2.0)
        .collect();

    let mut values = vec![0.0; spec.rows * spec.cols];
    for i in 0..spec.rows {
        let factors: Vec<f64> = (0..spec.factors)
            .map(|_| normal.sample(&mut factor_rng))
            .collect();
        for j in 0..spec.cols {
            let signal: f64 = (0..spec.factors)
                .map(|k| factors[k] * loadings[k * spec.cols + j])
                .sum();
            let eps: f64 = normal.sample(&mut noise_rng);
            values[i * spec.cols + j] = shifts[j] + scales[j] * (signal + spec.noise * eps);
        }
    }

    let mut m = DataMatrix::full(spec.rows, spec.cols, values).expect("consistent dims");
    m.set_column_names((0..spec.cols).map(|j| format!("x{}", j)).collect());
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_correlated() {
        let spec = SyntheticSpec { rows: 300, cols: 6, ..Default::default() };
        let a = generate(&spec);
        let b = generate(&spec);
        assert_eq!(a.values(), b.values());

        // Factor structure implies at least one strongly correlated pair.
        let col = |j: usize| -> Vec<f64> { (0..a.rows()).map(|i| a.raw(i, j)).collect() };
        let mut best: f64 = 0.0;
        for j in 0..a.cols() {
            for k in (j + 1)..a.cols() {
                let (x, y) = (col(j), col(k));
                let n = x.len() as f64;
                let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
                let cov: f64 = x.iter().zip(&y).map(|(&a, &b)| (a - mx) * (b - my)).sum::<f64>() / n;
                let (vx, vy) = (
                    x.iter().map(|&v| (v - mx) * (v - mx)).sum::<f64>() / n,
                    y.iter().map(|&v| (v - my) * (v - my)).sum::<f64>() / n,
                );
                best = best.max((cov / (vx * vy).sqrt()).abs());
            }
        }
        assert!(best > 0.5, "expected correlated features, best |r| = {}", best);
    }
}
