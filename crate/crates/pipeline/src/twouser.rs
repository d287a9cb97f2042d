//! Two-mobile-user extension: a second wireless access link after the
//! wired segment. The first stage (analog codec plus compressor) comes
//! from a trained hybrid model and stays fixed; only the second link's
//! codec pair is fine-tuned.

use candle_core::Tensor;
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use hdjscc_core::channel::db_to_linear;
use hdjscc_core::data::{DatasetStore, ImageTensor, Split};
use hdjscc_core::rng::{purpose, stream};
use hdjscc_entropy::CdfTable;
use hdjscc_models::channel_graph::{standard_normal_tensor, BatchChannel, ChannelKind};
use hdjscc_models::model::JSCC_PREFIXES;
use hdjscc_models::FullModel;

use crate::batching::{batch_tensor, image_to_tensor, tensor_to_images};
use crate::deploy::compress_reconstruct;
use crate::forward::draw_batch_channel;
use crate::trainer::TrainReport;
use crate::Result;

pub struct TwoUserSystem {
    /// Trained first stage: analog codec and compressor, all frozen.
    pub first: FullModel,
    pub prior_tables: Vec<CdfTable>,
    /// Second access link codec (`f_s^t`, `g_d^t`), initialized from the
    /// first stage and fine-tuned.
    pub second: FullModel,
}

impl TwoUserSystem {
    pub fn from_trained(first: FullModel, prior_tables: Vec<CdfTable>, seed: u64) -> Result<Self> {
        let mut second = FullModel::new(&first.cfg, first.dtype(), seed)?;
        second.load_jscc_from(&first)?;
        Ok(Self {
            first,
            prior_tables,
            second,
        })
    }

    /// First stage at deployment settings: analog hop, rounding
    /// quantization, decompression at the far radio head. Gradients never
    /// flow through here.
    pub fn first_stage(
        &self,
        s: &Tensor,
        eta1_db: f64,
        ell: usize,
        seed: u64,
        epoch: usize,
        batch: usize,
    ) -> Result<Tensor> {
        let b = s.dim(0)?;
        let (_bb, _c, h, w) = s.dims4()?;
        let kind = ChannelKind::from_name(&self.first.cfg.channel)?;
        let bc = draw_batch_channel(kind, db_to_linear(eta1_db), b, seed, epoch, batch);
        let enc_cond = self.first.cond(&bc.encoder_eta_db(), ell)?;
        let dec_cond = self.first.cond(&[bc.eta_db(); 1].repeat(b), ell)?;
        let x = self.first.f_s.forward(s, &enc_cond)?;
        let mut rng = stream(seed, purpose::CHANNEL_NOISE, &[epoch as u64, batch as u64, 7]);
        let noise = standard_normal_tensor(&mut rng, x.dims(), x.dtype(), x.device())?;
        let x_hat = bc.propagate(&x, &noise)?;
        let s_tilde = self.first.g_d.forward(&x_hat, &dec_cond, h, w)?;
        // Deployment-mode compression: one image at a time through the
        // rounding and coding chain.
        let imgs = tensor_to_images(&s_tilde)?;
        let eta_q = f64::from(eta1_db as f32);
        let mut out = Vec::with_capacity(imgs.len());
        for img in &imgs {
            let t = image_to_tensor(img, self.first.dtype(), self.first.store.device())?;
            let c = compress_reconstruct(&self.first, &self.prior_tables, &t, eta_q, ell)?;
            out.push(image_to_tensor(&c.s_hat, self.first.dtype(), self.first.store.device())?);
        }
        Ok(Tensor::cat(&out, 0)?.detach())
    }

    /// Second hop: re-encode the decompressed image and cross the second
    /// wireless link. Noise variance follows the first hop's convention
    /// (`1/eta_2`).
    pub fn second_hop(
        &self,
        s_t: &Tensor,
        eta2_db: f64,
        ell: usize,
        seed: u64,
        epoch: usize,
        batch: usize,
    ) -> Result<Tensor> {
        let b = s_t.dim(0)?;
        let (_bb, _c, h, w) = s_t.dims4()?;
        let kind = ChannelKind::from_name(&self.second.cfg.channel)?;
        let bc = draw_batch_channel(kind, db_to_linear(eta2_db), b, seed, epoch, batch + 104_729);
        let enc_cond = self.second.cond(&bc.encoder_eta_db(), ell)?;
        let dec_cond = self.second.cond(&[bc.eta_db(); 1].repeat(b), ell)?;
        let x = self.second.f_s.forward(s_t, &enc_cond)?;
        let mut rng = stream(
            seed,
            purpose::CHANNEL_NOISE,
            &[epoch as u64, batch as u64, 8],
        );
        let noise = standard_normal_tensor(&mut rng, x.dims(), x.dtype(), x.device())?;
        let y = bc.propagate(&x, &noise)?;
        self.second.g_d.forward(&y, &dec_cond, h, w)
    }

    /// End-to-end forward for one image.
    pub fn forward(
        &self,
        source: &ImageTensor,
        eta1_db: f64,
        eta2_db: f64,
        ell: usize,
        seed: u64,
        tag: usize,
    ) -> Result<(ImageTensor, ImageTensor)> {
        let s = image_to_tensor(source, self.first.dtype(), self.first.store.device())?;
        let s_t = self.first_stage(&s, eta1_db, ell, seed, 0, tag)?;
        let s_hat = self.second_hop(&s_t, eta2_db, ell, seed, 0, tag)?;
        Ok((
            tensor_to_images(&s_t)?.remove(0),
            tensor_to_images(&s_hat)?.remove(0),
        ))
    }

    /// Fine-tunes the second link's codec to deliver its input faithfully;
    /// every first-stage parameter stays fixed.
    pub fn fine_tune(
        &mut self,
        store: &DatasetStore,
        eta_db: f64,
        ell: usize,
        epochs: usize,
    ) -> Result<TrainReport> {
        let cfg = self.second.cfg.clone();
        let vars = self.second.store.vars_with_prefix(JSCC_PREFIXES);
        let mut opt = AdamW::new(
            vars,
            ParamsAdamW {
                lr: cfg.optimizer.learning_rate,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
                weight_decay: 0.0,
            },
        )?;
        let mut report = TrainReport {
            step_losses: Vec::new(),
            val_losses: Vec::new(),
            final_lr: cfg.optimizer.learning_rate,
            steps: 0,
        };
        for epoch in 0..epochs {
            let order = crate::batching::epoch_indices(
                store.len(Split::Train),
                cfg.max_train_images,
                cfg.seed,
                epoch,
            );
            for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
                if chunk.len() < 2 {
                    continue;
                }
                let s = batch_tensor(
                    store,
                    Split::Train,
                    chunk,
                    self.second.dtype(),
                    self.second.store.device(),
                )?;
                let s_t = self.first_stage(&s, eta_db, ell, cfg.seed, epoch, bi)?;
                let s_hat = self.second_hop(&s_t, eta_db, ell, cfg.seed, epoch, bi)?;
                let mse = (&s_t - &s_hat)?.sqr()?.mean_all()?;
                opt.backward_step(&mse)?;
                let m = mse.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?;
                report.step_losses.push(crate::forward::StepStats {
                    loss: m,
                    bpp: 0.0,
                    mse: m,
                    lambda: 0.0,
                    eta_db,
                });
                report.steps += 1;
            }
        }
        Ok(report)
    }

    pub fn frozen_hashes(&self) -> (u64, u64) {
        (
            self.first.store.weights_hash(&[]),
            self.second
                .store
                .weights_hash(&["g_a.", "h_a.", "g_s.", "h_s.", "prior.", "scaling_factors."]),
        )
    }
}
