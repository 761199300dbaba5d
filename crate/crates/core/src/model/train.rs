//! Training loop and the frozen imputer it produces.

use super::{reconstruction_loss, ImputationModel, ModelConfig};
use crate::augmentation::cutmix;
use crate::autodiff::{AdamConfig, AdamState, Tape};
use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::preprocess::{self, FoldStats};
use crate::rng::stream;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct EpochLoss {
    pub recon: f64,
    pub contrastive: f64,
    pub total: f64,
}

/// Frozen model parameters plus the train-fold statistics needed to impute
/// unseen rows. Immutable after training; safe to share across threads for
/// concurrent imputation.
pub struct TrainedImputer {
    pub(crate) model: ImputationModel,
    pub stats: FoldStats,
    pub loss_history: Vec<EpochLoss>,
    /// Evaluation-mode reconstruction loss over the full training split,
    /// measured once after the final epoch.
    pub final_eval_recon: f64,
    pub warnings: Vec<String>,
}

/// Train on one (already masked) split: statistics are fitted here, on this
/// split only, then the loop runs on the standardized, median-initialized
/// working matrix.
pub fn train(train_data: &DataMatrix, config: &ModelConfig) -> Result<TrainedImputer> {
    config.validate()?;
    let (stats, warnings) = preprocess::fit(train_data)?;
    let work = preprocess::standardized_filled(&stats, train_data)?;
    let mask = preprocess::mask_matrix(train_data);
    let rows = train_data.rows();
    let n = train_data.cols();

    let mut model = ImputationModel::new(n, *config)?;
    let mut adam = AdamState::new(
        &model.store,
        AdamConfig {
            lr: config.lr,
            beta1: config.beta1,
            beta2: config.beta2,
            eps: 1e-8,
            weight_decay: config.weight_decay,
        },
    );

    let mut loss_history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..rows).collect();
        let mut shuffle_rng = stream(config.seed, &format!("shuffle/{epoch}"));
        for i in (1..rows).rev() {
            let j = rand::Rng::random_range(&mut shuffle_rng, 0..=i);
            order.swap(i, j);
        }

        let mut epoch_recon = 0.0;
        let mut epoch_con = 0.0;
        let mut batches = 0usize;
        for (batch_idx, chunk) in order.chunks(config.batch_size).enumerate() {
            let (recon, con) =
                train_step(&mut model, &mut adam, &work, &mask, n, chunk, epoch, batch_idx)?;
            epoch_recon += recon;
            epoch_con += con;
            batches += 1;
        }
        let b = batches as f64;
        loss_history.push(EpochLoss {
            recon: epoch_recon / b,
            contrastive: epoch_con / b,
            total: (epoch_recon + config.lambda_contrastive * epoch_con) / b,
        });
    }

    let final_eval_recon = eval_reconstruction(&model, &work, &mask, rows, n)?;
    Ok(TrainedImputer { model, stats, loss_history, final_eval_recon, warnings })
}

#[allow(clippy::too_many_arguments)]
fn train_step(
    model: &mut ImputationModel,
    adam: &mut AdamState,
    work: &[f64],
    mask: &[f64],
    n: usize,
    chunk: &[usize],
    epoch: usize,
    batch_idx: usize,
) -> Result<(f64, f64)> {
    let config = model.config;
    let bsz = chunk.len();
    let mut x = Vec::with_capacity(bsz * n);
    let mut m = Vec::with_capacity(bsz * n);
    for &row in chunk {
        x.extend_from_slice(&work[row * n..(row + 1) * n]);
        m.extend_from_slice(&mask[row * n..(row + 1) * n]);
    }

    let mut cutmix_rng = stream(config.seed, &format!("cutmix/{epoch}/{batch_idx}"));
    let (x_tilde, _plan) = cutmix(&x, bsz, n, config.p_cutmix, &mut cutmix_rng)?;

    // The two views use independent dropout streams.
    let mut drop_corrupt = stream(config.seed, &format!("dropout/corrupt/{epoch}/{batch_idx}"));
    let mut drop_clean = stream(config.seed, &format!("dropout/clean/{epoch}/{batch_idx}"));

    let mut tape = Tape::new();
    let loss = model.training_loss(
        &mut tape,
        &model.store,
        true,
        Tensor::new(vec![bsz, n], x)?,
        Tensor::new(vec![bsz, n], x_tilde)?,
        Tensor::new(vec![bsz, n], m)?,
        &mut drop_clean,
        &mut drop_corrupt,
    )?;

    let loss_val = tape.data(loss.total)[0];
    if !loss_val.is_finite() {
        return Err(Error::NonFiniteLoss {
            epoch,
            batch: batch_idx,
            loss: loss_val,
            recon: loss.recon_value,
            contrastive: loss.contrastive_value,
        });
    }

    tape.backward(loss.total, &mut model.store)?;
    adam.step(&mut model.store)?;
    Ok((loss.recon_value, loss.contrastive_value))
}

/// Evaluation-mode reconstruction loss over a working matrix, batched in
/// stored row order; equals the single-batch loss because each batch is
/// weighted by its row count.
fn eval_reconstruction(
    model: &ImputationModel,
    work: &[f64],
    mask: &[f64],
    rows: usize,
    n: usize,
) -> Result<f64> {
    let mut total = 0.0;
    let order: Vec<usize> = (0..rows).collect();
    for chunk in order.chunks(model.config.batch_size) {
        let bsz = chunk.len();
        let mut x = Vec::with_capacity(bsz * n);
        let mut m = Vec::with_capacity(bsz * n);
        for &row in chunk {
            x.extend_from_slice(&work[row * n..(row + 1) * n]);
            m.extend_from_slice(&mask[row * n..(row + 1) * n]);
        }
        let mut tape = Tape::new();
        let xhat = model.forward_eval(&mut tape, Tensor::new(vec![bsz, n], x.clone())?)?;
        let x_node = tape.constant(Tensor::new(vec![bsz, n], x)?);
        let m_node = tape.constant(Tensor::new(vec![bsz, n], m)?);
        let loss = reconstruction_loss(&mut tape, xhat, x_node, m_node)?;
        total += tape.data(loss)[0] * bsz as f64;
    }
    Ok(total / rows as f64)
}

impl TrainedImputer {
    pub fn config(&self) -> &ModelConfig {
        &self.model.config
    }

    pub fn n_features(&self) -> usize {
        self.model.n_features
    }

    /// Impute missing cells of `data` (original scale): standardize and
    /// median-initialize with the stored train-fold statistics, run the
    /// network in evaluation mode over batches in stored row order, then
    /// substitute predictions only at masked cells.
    pub fn impute(&self, data: &DataMatrix) -> Result<DataMatrix> {
        if data.cols() != self.model.n_features {
            return Err(Error::ShapeMismatch {
                op: "impute",
                lhs: vec![data.cols()],
                rhs: vec![self.model.n_features],
            });
        }
        let n = data.cols();
        let work = preprocess::standardized_filled(&self.stats, data)?;
        let mut out = data.clone();
        let order: Vec<usize> = (0..data.rows()).collect();
        for chunk in order.chunks(self.model.config.batch_size) {
            let bsz = chunk.len();
            let mut x = Vec::with_capacity(bsz * n);
            for &row in chunk {
                x.extend_from_slice(&work[row * n..(row + 1) * n]);
            }
            let mut tape = Tape::new();
            let xhat = self
                .model
                .forward_eval(&mut tape, Tensor::new(vec![bsz, n], x)?)?;
            let pred = tape.data(xhat);
            for (bi, &row) in chunk.iter().enumerate() {
                for j in 0..n {
                    if !data.is_observed(row, j) {
                        out.set(row, j, preprocess::destandardize_value(&self.stats, j, pred[bi * n + j]));
                    }
                }
            }
        }
        Ok(out)
    }

    /// Evaluation-mode reconstruction loss of `data` under the stored
    /// statistics; replaying the training split reproduces
    /// [`TrainedImputer::final_eval_recon`] exactly.
    pub fn reconstruction_error(&self, data: &DataMatrix) -> Result<f64> {
        let work = preprocess::standardized_filled(&self.stats, data)?;
        let mask = preprocess::mask_matrix(data);
        eval_reconstruction(&self.model, &work, &mask, data.rows(), data.cols())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ObservationMask;
    use crate::missingness::{generate_mcar, MissingKind, MissingnessSpec};
    use crate::model::AttentionMode;
    use crate::synthetic::{generate, SyntheticSpec};

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            embed_dim: 8,
            heads: 2,
            blocks: 1,
            batch_size: 64,
            epochs: 3,
            seed: 9,
            ..ModelConfig::default()
        }
    }

    fn masked_synthetic(rows: usize, cols: usize, rate: f64, seed: u64) -> DataMatrix {
        let data = generate(&SyntheticSpec { rows, cols, seed, ..Default::default() });
        let spec = MissingnessSpec::new(MissingKind::Mcar, rate, seed);
        let mask = generate_mcar(&data, &spec).unwrap().mask;
        data.masked(&mask).unwrap()
    }

    #[test]
    fn smoke_training_keeps_losses_finite() {
        let data = masked_synthetic(200, 8, 0.3, 1);
        let mut config = tiny_config();
        config.epochs = 5;
        let imputer = train(&data, &config).unwrap();
        assert_eq!(imputer.loss_history.len(), 5);
        assert!(imputer
            .loss_history
            .iter()
            .all(|l| l.total.is_finite() && l.recon.is_finite()));
    }

    #[test]
    fn plain_masked_autoencoding_reduces_reconstruction_loss() {
        // lambda = 0, no CutMix, no dropout: pure masked autoencoding.
        let data = masked_synthetic(200, 8, 0.3, 2);
        let config = ModelConfig {
            lambda_contrastive: 0.0,
            p_cutmix: 0.0,
            dropout: 0.0,
            epochs: 50,
            lr: 1e-3,
            mode: AttentionMode::Feature,
            ..tiny_config()
        };
        let imputer = train(&data, &config).unwrap();
        let first = imputer.loss_history.first().unwrap().recon;
        let best = imputer
            .loss_history
            .iter()
            .map(|l| l.recon)
            .fold(f64::INFINITY, f64::min);
        let last_best = imputer.loss_history[imputer.loss_history.len() - 10..]
            .iter()
            .map(|l| l.recon)
            .fold(f64::INFINITY, f64::min);
        assert!(best < first, "no improvement: first={} best={}", first, best);
        assert!(last_best <= first * 0.9, "late best {} vs first {}", last_best, first);
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let data = masked_synthetic(120, 6, 0.3, 3);
        let mut config = tiny_config();
        config.epochs = 2;
        let a = train(&data, &config).unwrap();
        let b = train(&data, &config).unwrap();
        for (pa, pb) in a.model.store.iter().zip(b.model.store.iter()) {
            assert_eq!(pa.1.value.data(), pb.1.value.data(), "param {}", pa.1.name);
        }
        assert_eq!(a.final_eval_recon.to_bits(), b.final_eval_recon.to_bits());
    }

    #[test]
    fn impute_passes_observed_cells_through() {
        let data = masked_synthetic(80, 5, 0.4, 4);
        let mut config = tiny_config();
        config.epochs = 2;
        let imputer = train(&data, &config).unwrap();
        let out = imputer.impute(&data).unwrap();
        for i in 0..data.rows() {
            for j in 0..data.cols() {
                if let Some(v) = data.get(i, j) {
                    assert_eq!(out.get(i, j), Some(v));
                } else {
                    let got = out.get(i, j).unwrap();
                    assert!(got.is_finite());
                }
            }
        }
    }

    #[test]
    fn impute_with_no_missing_cells_is_identity() {
        let train_data = masked_synthetic(80, 5, 0.3, 5);
        let mut config = tiny_config();
        config.epochs = 2;
        let imputer = train(&train_data, &config).unwrap();
        let complete = generate(&SyntheticSpec { rows: 20, cols: 5, seed: 6, ..Default::default() });
        let out = imputer.impute(&complete).unwrap();
        assert_eq!(out.values(), complete.values());
    }

    #[test]
    fn impute_rejects_feature_count_mismatch() {
        let data = masked_synthetic(60, 5, 0.3, 7);
        let mut config = tiny_config();
        config.epochs = 1;
        let imputer = train(&data, &config).unwrap();
        let wrong = generate(&SyntheticSpec { rows: 10, cols: 4, seed: 8, ..Default::default() });
        assert!(imputer.impute(&wrong).is_err());
    }

    #[test]
    fn reconstruction_error_replays_final_eval_value() {
        let data = masked_synthetic(100, 6, 0.3, 9);
        let mut config = tiny_config();
        config.epochs = 3;
        let imputer = train(&data, &config).unwrap();
        let replay = imputer.reconstruction_error(&data).unwrap();
        assert_eq!(replay.to_bits(), imputer.final_eval_recon.to_bits());
    }

    #[test]
    fn training_and_eval_paths_coincide_without_noise() {
        // dropout 0 and p_cutmix 0: the corrupted path equals the clean
        // path, so the training-path reconstruction equals forward_eval.
        let data = masked_synthetic(40, 5, 0.3, 10);
        let config = ModelConfig {
            dropout: 0.0,
            p_cutmix: 0.0,
            epochs: 1,
            ..tiny_config()
        };
        let (stats, _) = preprocess::fit(&data).unwrap();
        let work = preprocess::standardized_filled(&stats, &data).unwrap();
        let model = ImputationModel::new(5, config).unwrap();

        let bsz = data.rows();
        let mut tape = Tape::new();
        let bound = model.bind_frozen(&mut tape);
        let x = tape.constant(Tensor::new(vec![bsz, 5], work.clone()).unwrap());
        let mut cut_rng = stream(config.seed, "cutmix/0/0");
        let (x_tilde, _) = cutmix(&work, bsz, 5, 0.0, &mut cut_rng).unwrap();
        let xt = tape.constant(Tensor::new(vec![bsz, 5], x_tilde).unwrap());
        let mut rng = stream(0, "unused");
        let emb = model.embed(&mut tape, &bound, xt).unwrap();
        let enc = model.encode(&mut tape, &bound, emb, true, &mut rng).unwrap();
        let train_xhat = model.reconstruct(&mut tape, &bound, enc).unwrap();
        let _ = x;

        let mut eval_tape = Tape::new();
        let eval_xhat = model
            .forward_eval(&mut eval_tape, Tensor::new(vec![bsz, 5], work).unwrap())
            .unwrap();
        assert_eq!(tape.data(train_xhat), eval_tape.data(eval_xhat));
    }

    #[test]
    fn all_missing_column_contributes_nothing_to_loss() {
        let mask = ObservationMask::from_vec(2, 2, vec![true, false, true, false]).unwrap();
        let data =
            DataMatrix::with_mask(2, 2, vec![1.0, f64::NAN, 2.0, f64::NAN], mask).unwrap();
        let m = preprocess::mask_matrix(&data);
        let mut tape = Tape::new();
        let xhat = tape.constant(Tensor::new(vec![2, 2], vec![1.0, 99.0, 2.0, -99.0]).unwrap());
        let target = tape.constant(Tensor::new(vec![2, 2], vec![1.0, 0.0, 2.0, 0.0]).unwrap());
        let mnode = tape.constant(Tensor::new(vec![2, 2], m).unwrap());
        let loss = reconstruction_loss(&mut tape, xhat, target, mnode).unwrap();
        assert_eq!(tape.data(loss)[0], 0.0);
    }
}
