//! CutMix corruption of a mini-batch: selected cells of each sample are
//! replaced by the same cells of another sample from the batch. Values are
//! borrowed, never invented.

use crate::error::{Error, Result};
use rand::Rng;

/// The exact corruption applied to one batch, kept for reproducibility.
#[derive(Clone, Debug)]
pub struct CutMixPlan {
    /// Row-major `rows x cols`; `true` keeps the sample's own value.
    pub keep: Vec<bool>,
    /// Partner row per sample; `partner[i] != i` whenever `rows > 1`.
    pub partner: Vec<usize>,
    pub p_cutmix: f64,
}

/// Corrupt `values` (a dense `rows x cols` batch, missing cells already
/// filled) with probability `p_cutmix` per cell.
pub fn cutmix(
    values: &[f64],
    rows: usize,
    cols: usize,
    p_cutmix: f64,
    rng: &mut impl Rng,
) -> Result<(Vec<f64>, CutMixPlan)> {
    if rows == 0 {
        return Err(Error::invalid("cutmix: empty batch"));
    }
    if values.len() != rows * cols {
        return Err(Error::invalid(format!(
            "cutmix: {} values for {}x{} batch",
            values.len(),
            rows,
            cols
        )));
    }
    if !(0.0..1.0).contains(&p_cutmix) {
        return Err(Error::invalid(format!(
            "cutmix probability {} outside [0,1)",
            p_cutmix
        )));
    }

    let partner: Vec<usize> = (0..rows)
        .map(|i| {
            if rows == 1 {
                return 0;
            }
            loop {
                let j = rng.random_range(0..rows);
                if j != i {
                    return j;
                }
            }
        })
        .collect();
    let keep: Vec<bool> = (0..rows * cols)
        .map(|_| rng.random::<f64>() >= p_cutmix)
        .collect();

    let plan = CutMixPlan { keep, partner, p_cutmix };
    let corrupted = apply_plan(values, rows, cols, &plan)?;
    Ok((corrupted, plan))
}

/// Apply a previously generated plan: `x̃ = x ⊙ I + x[partner] ⊙ (1 − I)`.
pub fn apply_plan(values: &[f64], rows: usize, cols: usize, plan: &CutMixPlan) -> Result<Vec<f64>> {
    if plan.keep.len() != rows * cols || plan.partner.len() != rows {
        return Err(Error::invalid("cutmix plan does not match batch shape"));
    }
    let mut out = values.to_vec();
    for i in 0..rows {
        let p = plan.partner[i];
        for k in 0..cols {
            if !plan.keep[i * cols + k] {
                out[i * cols + k] = values[p * cols + k];
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn batch(rows: usize, cols: usize, seed: u64) -> Vec<f64> {
        let mut rng = stream(seed, "test/cutmix");
        (0..rows * cols).map(|_| rng.random::<f64>() * 10.0).collect()
    }

    #[test]
    fn zero_probability_is_identity() {
        let x = batch(16, 5, 1);
        let mut rng = stream(1, "cutmix");
        let (corrupted, plan) = cutmix(&x, 16, 5, 0.0, &mut rng).unwrap();
        assert_eq!(corrupted, x);
        assert!(plan.keep.iter().all(|&k| k));
    }

    #[test]
    fn all_zero_keep_swaps_whole_rows() {
        let x = batch(4, 3, 2);
        let plan = CutMixPlan {
            keep: vec![false; 12],
            partner: vec![2, 0, 3, 1],
            p_cutmix: 1.0,
        };
        let out = apply_plan(&x, 4, 3, &plan).unwrap();
        for i in 0..4 {
            let p = plan.partner[i];
            assert_eq!(&out[i * 3..(i + 1) * 3], &x[p * 3..(p + 1) * 3]);
        }
    }

    #[test]
    fn corrupted_values_are_borrowed_per_column() {
        let x = batch(32, 6, 3);
        let mut rng = stream(5, "cutmix");
        let (out, _) = cutmix(&x, 32, 6, 0.5, &mut rng).unwrap();
        for k in 0..6 {
            let column: Vec<f64> = (0..32).map(|i| x[i * 6 + k]).collect();
            for i in 0..32 {
                assert!(
                    column.contains(&out[i * 6 + k]),
                    "cell ({},{}) = {} not borrowed from column",
                    i,
                    k,
                    out[i * 6 + k]
                );
            }
        }
    }

    #[test]
    fn corrupted_fraction_matches_probability() {
        let x = batch(128, 20, 4);
        let mut rng = stream(6, "cutmix");
        let (_, plan) = cutmix(&x, 128, 20, 0.3, &mut rng).unwrap();
        let dropped = plan.keep.iter().filter(|&&k| !k).count() as f64;
        let frac = dropped / (128.0 * 20.0);
        assert!((0.25..=0.35).contains(&frac), "fraction = {}", frac);
    }

    #[test]
    fn partners_never_self_when_batch_is_larger_than_one() {
        for seed in 0..20 {
            let x = batch(9, 4, seed);
            let mut rng = stream(seed, "cutmix");
            let (_, plan) = cutmix(&x, 9, 4, 0.4, &mut rng).unwrap();
            assert!(plan.partner.iter().enumerate().all(|(i, &p)| p != i));
        }
        // Batch of one is allowed to self-pair.
        let x = batch(1, 4, 0);
        let mut rng = stream(0, "cutmix");
        let (out, plan) = cutmix(&x, 1, 4, 0.4, &mut rng).unwrap();
        assert_eq!(plan.partner, vec![0]);
        assert_eq!(out, x);
    }

    #[test]
    fn deterministic_per_stream_label() {
        let x = batch(16, 5, 7);
        let run = |label: &str| {
            let mut rng = stream(42, label);
            cutmix(&x, 16, 5, 0.3, &mut rng).unwrap().0
        };
        assert_eq!(run("cutmix/0/0"), run("cutmix/0/0"));
        assert_ne!(run("cutmix/0/0"), run("cutmix/1/0"));
    }
}
