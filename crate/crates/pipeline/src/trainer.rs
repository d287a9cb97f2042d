//! Optimization loops: per-batch sampling of the rate weight and SNR,
//! Adam updates over the non-frozen parameters, validation-driven learning
//! rate decay, and divergence reporting.

use candle_core::Tensor;
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use hdjscc_core::channel::db_to_linear;
use hdjscc_core::data::{DatasetStore, Split};
use hdjscc_core::rng::{purpose, stream};
use hdjscc_models::channel_graph::ChannelKind;
use hdjscc_models::model::JSCC_PREFIXES;
use hdjscc_models::FullModel;
use rand::Rng;

use crate::batching::{batch_tensor, epoch_indices};
use crate::forward::{
    draw_batch_channel, hdjscc_step, jscc_step, DistortionTarget, StepContext, StepStats,
};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    /// Analog codec only (MSE); trains the `f_s`/`g_d` parameter groups.
    JsccPretrain,
    /// Full hybrid objective; optionally keeps the analog codec frozen and
    /// optionally measures distortion against the relay reconstruction.
    Hdjscc {
        freeze_jscc: bool,
        distortion_to_relay: bool,
    },
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub step_losses: Vec<StepStats>,
    pub val_losses: Vec<f64>,
    pub final_lr: f64,
    pub steps: u64,
}

/// Uniform draws for one batch: the rate index from the lambda grid and
/// the SNR in dB from the training range.
fn sample_batch_conditions(
    cfg: &hdjscc_core::config::ExperimentConfig,
    seed: u64,
    epoch: usize,
    batch: usize,
) -> (usize, f64) {
    let mut rng = stream(seed, purpose::SAMPLING, &[epoch as u64, batch as u64]);
    let ell = if cfg.lambda_count() > 1 {
        rng.gen_range(1..=cfg.lambda_count())
    } else {
        1
    };
    let eta_db = if cfg.eta_max_db > cfg.eta_min_db {
        rng.gen_range(cfg.eta_min_db..cfg.eta_max_db)
    } else {
        cfg.eta_min_db
    };
    (ell, eta_db)
}

fn objective_step(
    model: &FullModel,
    s: &Tensor,
    objective: Objective,
    kind: ChannelKind,
    ctx: &StepContext,
) -> Result<(Tensor, StepStats)> {
    let b = s.dim(0)?;
    let bc = draw_batch_channel(kind, ctx.eta, b, ctx.seed, ctx.epoch, ctx.batch);
    match objective {
        Objective::JsccPretrain => jscc_step(model, s, &bc, ctx),
        Objective::Hdjscc {
            freeze_jscc,
            distortion_to_relay,
        } => hdjscc_step(
            model,
            s,
            &bc,
            ctx,
            freeze_jscc,
            if distortion_to_relay {
                DistortionTarget::RelayReconstruction
            } else {
                DistortionTarget::Source
            },
        ),
    }
}

/// Deterministic validation loss: fixed conditions (range midpoints) and
/// fixed noise streams, so epochs are comparable.
pub fn validation_loss(
    model: &FullModel,
    store: &DatasetStore,
    objective: Objective,
    kind: ChannelKind,
) -> Result<f64> {
    let cfg = &model.cfg;
    let n = store.len(Split::Val).min(if cfg.max_val_images == 0 {
        usize::MAX
    } else {
        cfg.max_val_images
    });
    if n == 0 {
        return Ok(f64::NAN);
    }
    let eta_db = 0.5 * (cfg.eta_min_db + cfg.eta_max_db);
    let ell = cfg.lambda_count().div_ceil(2).max(1);
    let mut total = 0.0;
    let mut batches = 0usize;
    let indices: Vec<usize> = (0..n).collect();
    for (bi, chunk) in indices.chunks(cfg.batch_size).enumerate() {
        let s = batch_tensor(store, Split::Val, chunk, model.dtype(), model.store.device())?;
        // The EVAL purpose tag keeps validation noise disjoint from, and
        // independent of, the training epoch.
        let ctx = StepContext {
            seed: cfg.seed ^ 0x5EED_E7A1,
            epoch: 0,
            batch: bi,
            lambda: cfg.lambda(ell)?,
            ell,
            eta: db_to_linear(eta_db),
        };
        let (_t, stats) = objective_step(model, &s, objective, kind, &ctx)?;
        total += stats.loss;
        batches += 1;
    }
    Ok(total / batches.max(1) as f64)
}

/// Runs the configured number of epochs. Parameter groups outside the
/// objective's trainable set never move; the learning rate drops by the
/// configured factor when the validation loss fails to improve for the
/// plateau window.
pub fn train_model(
    model: &mut FullModel,
    store: &DatasetStore,
    objective: Objective,
    mut on_epoch: impl FnMut(usize, f64, f64),
) -> Result<TrainReport> {
    let cfg = model.cfg.clone();
    cfg.validate()?;
    let kind = ChannelKind::from_name(&cfg.channel)?;
    let vars = match objective {
        Objective::JsccPretrain => model.store.vars_with_prefix(JSCC_PREFIXES),
        Objective::Hdjscc {
            freeze_jscc: true, ..
        } => model.store.vars_without_prefix(JSCC_PREFIXES),
        Objective::Hdjscc { .. } => model.store.all_vars(),
    };
    let mut lr = cfg.optimizer.learning_rate;
    let mut opt = AdamW::new(
        vars,
        ParamsAdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        },
    )?;

    let mut report = TrainReport {
        step_losses: Vec::new(),
        val_losses: Vec::new(),
        final_lr: lr,
        steps: 0,
    };
    let mut best_val = f64::INFINITY;
    let mut stall = 0usize;

    for epoch in 0..cfg.epochs {
        let order = epoch_indices(store.len(Split::Train), cfg.max_train_images, cfg.seed, epoch);
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            if chunk.len() < 2 {
                continue;
            }
            let s = batch_tensor(store, Split::Train, chunk, model.dtype(), model.store.device())?;
            let (ell, eta_db) = sample_batch_conditions(&cfg, cfg.seed, epoch, bi);
            let ctx = StepContext {
                seed: cfg.seed,
                epoch,
                batch: bi,
                lambda: cfg.lambda(ell)?,
                ell,
                eta: db_to_linear(eta_db),
            };
            let (loss, stats) = objective_step(model, &s, objective, kind, &ctx)?;
            opt.backward_step(&loss)?;
            report.step_losses.push(stats);
            report.steps += 1;
        }

        let val = validation_loss(model, store, objective, kind)?;
        report.val_losses.push(val);
        on_epoch(epoch, report.step_losses.last().map_or(f64::NAN, |s| s.loss), val);
        if val.is_nan() {
            continue;
        }
        if val < best_val - 1e-6 {
            best_val = val;
            stall = 0;
        } else {
            stall += 1;
            if stall >= cfg.optimizer.plateau_epochs {
                lr *= cfg.optimizer.plateau_factor;
                opt.set_learning_rate(lr);
                stall = 0;
            }
        }
    }
    report.final_lr = lr;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::DType;
    use hdjscc_core::config::ExperimentConfig;
    use hdjscc_core::data::{ingest_synthetic, SyntheticSpec};

    fn tiny_setup(epochs: usize) -> (ExperimentConfig, DatasetStore) {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec {
            height: 32,
            width: 32,
            n_train: 48,
            n_val: 8,
            n_test: 8,
            seed: 11,
        };
        ingest_synthetic(dir.path(), &spec).unwrap();
        let store = DatasetStore::open(dir.path()).unwrap();
        std::mem::forget(dir); // keep tempdir alive for the store's lifetime
        let mut cfg = ExperimentConfig::desk_32();
        cfg.epochs = epochs;
        cfg.batch_size = 8;
        cfg.max_train_images = 32;
        cfg.max_val_images = 8;
        cfg.jscc.internal_channels = 8;
        cfg.jscc.n_residual_blocks = 1;
        cfg.compressor.internal_channels = 8;
        cfg.compressor.c_z = 6;
        cfg.compressor.c_v = 4;
        cfg.optimizer.learning_rate = 1e-3;
        (cfg, store)
    }

    #[test]
    fn training_reduces_the_jscc_loss() {
        let (cfg, store) = tiny_setup(4);
        let mut model = FullModel::new(&cfg, DType::F32, cfg.seed).unwrap();
        let report = train_model(&mut model, &store, Objective::JsccPretrain, |_, _, _| {}).unwrap();
        let first = report.step_losses.first().unwrap().loss;
        let last = report.step_losses.last().unwrap().loss;
        assert!(last < first, "loss did not improve: {first} -> {last}");
    }

    #[test]
    fn frozen_codec_never_moves_during_hybrid_training() {
        let (cfg, store) = tiny_setup(2);
        let mut model = FullModel::new(&cfg, DType::F32, cfg.seed).unwrap();
        let before = model.jscc_weights_hash();
        let comp_before = model.store.weights_hash(&["g_a.", "prior."]);
        train_model(
            &mut model,
            &store,
            Objective::Hdjscc {
                freeze_jscc: true,
                distortion_to_relay: false,
            },
            |_, _, _| {},
        )
        .unwrap();
        assert_eq!(model.jscc_weights_hash(), before);
        assert_ne!(model.store.weights_hash(&["g_a.", "prior."]), comp_before);
    }

    #[test]
    fn loss_trajectory_is_deterministic_for_a_fixed_seed() {
        let (cfg, store) = tiny_setup(2);
        let mut m1 = FullModel::new(&cfg, DType::F32, cfg.seed).unwrap();
        let r1 = train_model(
            &mut m1,
            &store,
            Objective::Hdjscc {
                freeze_jscc: false,
                distortion_to_relay: false,
            },
            |_, _, _| {},
        )
        .unwrap();
        let mut m2 = FullModel::new(&cfg, DType::F32, cfg.seed).unwrap();
        let r2 = train_model(
            &mut m2,
            &store,
            Objective::Hdjscc {
                freeze_jscc: false,
                distortion_to_relay: false,
            },
            |_, _, _| {},
        )
        .unwrap();
        assert_eq!(r1.steps, r2.steps);
        for (a, b) in r1.step_losses.iter().zip(&r2.step_losses) {
            assert_eq!(a.loss, b.loss);
            assert_eq!(a.bpp, b.bpp);
        }
    }
}
