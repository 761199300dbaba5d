//! Runtime property suite behind the `verify` subcommand: gradient checks,
//! mask-rate calibration, loss identities, and determinism probes.

use crate::augmentation::cutmix;
use crate::autodiff::{AdamConfig, AdamState, ParamStore, Tape};
use crate::data::DataMatrix;
use crate::evaluation::make_folds;
use crate::missingness::{self, MissingKind, MissingnessSpec};
use crate::model::{contrastive_loss, finite_difference_check, ModelConfig};
use crate::preprocess;
use crate::rng::stream;
use crate::tensor::Tensor;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Clone, Debug)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &str, passed: bool, detail: String) -> Check {
    Check { name: name.to_string(), passed, detail }
}

fn gaussian(rows: usize, cols: usize, seed: u64) -> DataMatrix {
    let mut rng = stream(seed, "verify/gaussian");
    let normal = StandardNormal;
    let values = (0..rows * cols).map(|_| normal.sample(&mut rng)).collect();
    DataMatrix::full(rows, cols, values).expect("consistent dims")
}

fn gradient_check() -> Check {
    let config = ModelConfig {
        embed_dim: 4,
        heads: 2,
        blocks: 1,
        dropout: 0.0,
        seed: 17,
        ..ModelConfig::default()
    };
    match finite_difference_check(&config, 3, 4, 1e-3) {
        Ok(report) => check(
            "model gradients vs central finite differences",
            report.pass_fraction() >= 0.99,
            format!(
                "{}/{} parameters within 1e-3 (worst rel {:.2e})",
                report.passed, report.total, report.worst_rel
            ),
        ),
        Err(e) => check("model gradients vs central finite differences", false, e.to_string()),
    }
}

fn adam_identities() -> Check {
    let run = || -> crate::Result<(f64, f64)> {
        let mut store = ParamStore::new();
        let w = store.register("w", Tensor::scalar(0.0))?;
        store.accumulate_grad(w, &[1.0])?;
        let mut adam = AdamState::new(
            &store,
            AdamConfig { lr: 1e-4, weight_decay: 0.0, ..AdamConfig::default() },
        );
        adam.step(&mut store)?;
        let first = store.value(w).data()[0];

        let mut store2 = ParamStore::new();
        let w2 = store2.register("w", Tensor::scalar(1.0))?;
        let mut adam2 = AdamState::new(
            &store2,
            AdamConfig { lr: 1e-4, weight_decay: 0.01, ..AdamConfig::default() },
        );
        adam2.step(&mut store2)?;
        Ok((first, store2.value(w2).data()[0]))
    };
    match run() {
        Ok((first, decayed)) => {
            let ok = (first + 1e-4).abs() < 1e-10 && (decayed - (1.0 - 1e-6)).abs() < 1e-15;
            check(
                "adam first-step and decoupled-decay identities",
                ok,
                format!("step: {first:.3e}, decayed weight: {decayed}"),
            )
        }
        Err(e) => check("adam first-step and decoupled-decay identities", false, e.to_string()),
    }
}

fn mask_rates() -> Vec<Check> {
    // Wide matrix: the one-observed-cell-per-row restoration bias scales as
    // rate^n / n, negligible at n = 50 even for rate 0.9.
    let data = gaussian(200, 50, 23);
    let mut checks = Vec::new();
    for kind in [MissingKind::Mcar, MissingKind::Mar, MissingKind::Mnar] {
        for rate in [0.1, 0.5, 0.9] {
            let spec = MissingnessSpec::new(kind, rate, 29);
            match missingness::generate(&data, &spec) {
                Ok(got) => {
                    let realized = got.mask.missing_fraction();
                    checks.push(check(
                        &format!("{} rate calibration at {}", kind.as_str(), rate),
                        (realized - rate).abs() <= 0.015,
                        format!("realized {realized:.4}"),
                    ));
                }
                Err(e) => checks.push(check(
                    &format!("{} rate calibration at {}", kind.as_str(), rate),
                    false,
                    e.to_string(),
                )),
            }
        }
    }

    // MNAR-high mean shift strictly positive per column.
    let spec = MissingnessSpec::new(MissingKind::Mnar, 0.3, 31);
    let shift_ok = match missingness::generate(&data, &spec) {
        Ok(got) => (0..data.cols()).all(|j| {
            let (mut sm, mut nm, mut so, mut no) = (0.0, 0usize, 0.0, 0usize);
            for i in 0..data.rows() {
                if got.mask.is_observed(i, j) {
                    so += data.raw(i, j);
                    no += 1;
                } else {
                    sm += data.raw(i, j);
                    nm += 1;
                }
            }
            nm > 0 && no > 0 && sm / nm as f64 > so / no as f64
        }),
        Err(_) => false,
    };
    checks.push(check(
        "mnar-high shifts missing values upward",
        shift_ok,
        "per-column masked-vs-observed mean gap".into(),
    ));

    // MCAR independence on a larger matrix.
    let wide = gaussian(2000, 10, 37);
    let spec = MissingnessSpec::new(MissingKind::Mcar, 0.3, 41);
    let corr = missingness::generate(&wide, &spec).map(|got| {
        let n = (wide.rows() * wide.cols()) as f64;
        let (mut sx, mut sy, mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for i in 0..wide.rows() {
            for j in 0..wide.cols() {
                let x = wide.raw(i, j);
                let y = if got.mask.is_observed(i, j) { 0.0 } else { 1.0 };
                sx += x;
                sy += y;
                sxy += x * y;
                sxx += x * x;
                syy += y * y;
            }
        }
        let cov = sxy / n - sx / n * (sy / n);
        (cov / ((sxx / n - (sx / n).powi(2)) * (syy / n - (sy / n).powi(2))).sqrt()).abs()
    });
    checks.push(match corr {
        Ok(r) => check("mcar mask independent of values", r < 0.05, format!("|r| = {r:.4}")),
        Err(e) => check("mcar mask independent of values", false, e.to_string()),
    });
    checks
}

fn loss_identities() -> Vec<Check> {
    let mut checks = Vec::new();

    let mut tape = Tape::new();
    let z1 = tape.constant(Tensor::new(vec![1, 3], vec![1.0, 0.0, 0.0]).unwrap());
    let zt1 = tape.constant(Tensor::new(vec![1, 3], vec![0.0, 1.0, 0.0]).unwrap());
    let single = contrastive_loss(&mut tape, z1, zt1, 0.7)
        .map(|l| tape.data(l)[0])
        .unwrap_or(f64::NAN);
    checks.push(check(
        "contrastive loss with batch of one is zero",
        single == 0.0,
        format!("value {single}"),
    ));

    let mut tape = Tape::new();
    let z = tape.constant(Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
    let zt = tape.constant(Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
    let got = contrastive_loss(&mut tape, z, zt, 1.0)
        .map(|l| tape.data(l)[0])
        .unwrap_or(f64::NAN);
    let want = -2.0 * (std::f64::consts::E / (std::f64::consts::E + 1.0)).ln();
    checks.push(check(
        "contrastive orthogonal-pair hand value",
        (got - want).abs() < 1e-9,
        format!("got {got:.12}, want {want:.12}"),
    ));

    let mut tape = Tape::new();
    let xhat = tape.constant(Tensor::new(vec![2, 2], vec![9.0, 1.0, -9.0, 2.0]).unwrap());
    let target = tape.constant(Tensor::new(vec![2, 2], vec![0.0, 1.0, 0.0, 2.0]).unwrap());
    let mask = tape.constant(Tensor::new(vec![2, 2], vec![0.0, 1.0, 0.0, 1.0]).unwrap());
    let recon = crate::model::reconstruction_loss(&mut tape, xhat, target, mask)
        .map(|l| tape.data(l)[0])
        .unwrap_or(f64::NAN);
    checks.push(check(
        "reconstruction loss ignores masked cells exactly",
        recon == 0.0,
        format!("value {recon}"),
    ));
    checks
}

fn mechanics() -> Vec<Check> {
    let mut checks = Vec::new();

    let mut rng = stream(43, "verify/softmax");
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::from_fn(vec![6, 5], || rng.random::<f64>() * 30.0 - 15.0));
    let y = tape.row_softmax(x).unwrap();
    let rows_ok = tape
        .data(y)
        .chunks(5)
        .all(|row| row.iter().all(|&v| v >= 0.0) && (row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    checks.push(check("row softmax is row-stochastic", rows_ok, "6x5 random logits".into()));

    let mut tape = Tape::new();
    let x = tape.constant(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let mut drng = stream(1, "verify/dropout");
    let a = tape.dropout(x, 0.0, true, &mut drng).unwrap();
    let b = tape.dropout(x, 0.5, false, &mut drng).unwrap();
    checks.push(check(
        "dropout identity at rate zero / eval",
        a == x && b == x,
        "returns the input node".into(),
    ));

    let batch: Vec<f64> = (0..40).map(|v| v as f64).collect();
    let mut crng = stream(2, "verify/cutmix");
    let identity = cutmix(&batch, 8, 5, 0.0, &mut crng)
        .map(|(out, _)| out == batch)
        .unwrap_or(false);
    checks.push(check("cutmix with p = 0 is the identity", identity, "8x5 batch".into()));

    let folds_ok = make_folds(12, 5)
        .map(|s| {
            let sizes: Vec<usize> = s.folds.iter().map(|f| f.len()).collect();
            sizes == vec![3, 3, 2, 2, 2] && make_folds(12, 5).unwrap() == s
        })
        .unwrap_or(false);
    checks.push(check("fold partition rule and determinism", folds_ok, "12 rows".into()));

    let data = gaussian(50, 4, 47);
    let stats_ok = preprocess::fit(&data)
        .and_then(|(stats, _)| {
            let std = preprocess::standardize(&stats, &data)?;
            Ok((0..50).all(|i| {
                (0..4).all(|j| {
                    let back = preprocess::destandardize_value(&stats, j, std.get(i, j).unwrap());
                    (back - data.get(i, j).unwrap()).abs() < 1e-12
                })
            }))
        })
        .unwrap_or(false);
    checks.push(check(
        "standardize / destandardize round trip",
        stats_ok,
        "50x4 gaussian".into(),
    ));
    checks
}

/// Run the full property suite; every check reports pass/fail with detail.
pub fn run_all() -> Vec<Check> {
    let mut checks = Vec::new();
    checks.push(gradient_check());
    checks.push(adam_identities());
    checks.extend(mask_rates());
    checks.extend(loss_identities());
    checks.extend(mechanics());
    checks
}
