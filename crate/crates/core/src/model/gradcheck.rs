//! Whole-model gradient verification against central finite differences.
//!
//! Probes the training loss as a black-box function of each parameter
//! element; never touches the backward pass it is checking.

use super::{ImputationModel, ModelConfig};
use crate::augmentation::cutmix;
use crate::autodiff::{ParamStore, Tape};
use crate::error::Result;
use crate::rng::stream;
use crate::tensor::Tensor;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

const FD_STEP: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub total: usize,
    pub passed: usize,
    pub worst_rel: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn pass_fraction(&self) -> f64 {
        self.passed as f64 / self.total as f64
    }
}

fn loss_value(
    model: &ImputationModel,
    store: &ParamStore,
    x: &Tensor,
    x_tilde: &Tensor,
    mask: &Tensor,
) -> Result<f64> {
    // Dropout is disabled (config.dropout == 0), so these streams are unread.
    let mut sink_a = stream(0, "gradcheck/sink");
    let mut sink_b = stream(0, "gradcheck/sink");
    let mut tape = Tape::new();
    let loss = model.training_loss(
        &mut tape,
        store,
        false,
        x.clone(),
        x_tilde.clone(),
        mask.clone(),
        &mut sink_a,
        &mut sink_b,
    )?;
    Ok(tape.data(loss.total)[0])
}

/// Compare every parameter gradient of the full training loss with central
/// finite differences on a fixed batch. Dropout is forced off; the CutMix
/// plan is drawn once and reused so the probed function is deterministic.
pub fn finite_difference_check(
    config: &ModelConfig,
    n_features: usize,
    rows: usize,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let mut config = *config;
    config.dropout = 0.0;
    let mut model = ImputationModel::new(n_features, config)?;

    let mut data_rng = stream(config.seed, "gradcheck/batch");
    let normal = StandardNormal;
    let x_vals: Vec<f64> = (0..rows * n_features)
        .map(|_| normal.sample(&mut data_rng))
        .collect();
    let mask_vals: Vec<f64> = (0..rows * n_features)
        .map(|_| if data_rng.random::<f64>() < 0.7 { 1.0 } else { 0.0 })
        .collect();
    let mut cut_rng = stream(config.seed, "gradcheck/cutmix");
    let (xt_vals, _) = cutmix(&x_vals, rows, n_features, config.p_cutmix, &mut cut_rng)?;

    let x = Tensor::new(vec![rows, n_features], x_vals)?;
    let x_tilde = Tensor::new(vec![rows, n_features], xt_vals)?;
    let mask = Tensor::new(vec![rows, n_features], mask_vals)?;

    // Reverse-mode gradients, once.
    let mut sink_a = stream(0, "gradcheck/sink");
    let mut sink_b = stream(0, "gradcheck/sink");
    let mut tape = Tape::new();
    model.store.zero_grads();
    let loss = {
        let store = &model.store;
        model.training_loss(
            &mut tape,
            store,
            true,
            x.clone(),
            x_tilde.clone(),
            mask.clone(),
            &mut sink_a,
            &mut sink_b,
        )?
    };
    tape.backward(loss.total, &mut model.store)?;
    let grads: Vec<Vec<f64>> = model.store.iter().map(|(_, p)| p.grad.clone()).collect();
    drop(tape);

    let param_ids: Vec<_> = model.store.ids().collect();
    let results: Vec<(usize, usize, f64)> = param_ids
        .par_iter()
        .map(|&pid| {
            let mut store = model.store.clone();
            let len = store.value(pid).numel();
            let mut passed = 0usize;
            let mut worst: f64 = 0.0;
            for i in 0..len {
                let orig = store.value(pid).data()[i];
                store.value_mut(pid).data_mut()[i] = orig + FD_STEP;
                let hi = loss_value(&model, &store, &x, &x_tilde, &mask).expect("forward");
                store.value_mut(pid).data_mut()[i] = orig - FD_STEP;
                let lo = loss_value(&model, &store, &x, &x_tilde, &mask).expect("forward");
                store.value_mut(pid).data_mut()[i] = orig;
                let fd = (hi - lo) / (2.0 * FD_STEP);
                let ad = grads[pid.0][i];
                let rel = (ad - fd).abs() / ad.abs().max(fd.abs()).max(1e-6);
                worst = worst.max(rel);
                if rel < tolerance {
                    passed += 1;
                }
            }
            (len, passed, worst)
        })
        .collect();

    let total: usize = results.iter().map(|r| r.0).sum();
    let passed: usize = results.iter().map(|r| r.1).sum();
    let worst_rel = results.iter().map(|r| r.2).fold(0.0, f64::max);
    Ok(GradCheckReport { total, passed, worst_rel, tolerance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::AttentionMode;

    #[test]
    fn tiny_joint_model_passes_gradient_check() {
        let config = ModelConfig {
            embed_dim: 4,
            heads: 2,
            blocks: 1,
            dropout: 0.0,
            mode: AttentionMode::Joint,
            seed: 3,
            ..ModelConfig::default()
        };
        let report = finite_difference_check(&config, 3, 4, 1e-3).unwrap();
        assert!(
            report.pass_fraction() >= 0.99,
            "pass fraction {:.4} (worst rel {:.2e})",
            report.pass_fraction(),
            report.worst_rel
        );
    }
}
