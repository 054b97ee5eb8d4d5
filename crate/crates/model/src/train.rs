//! Mini-batch Adam training with per-epoch metric logging.

use std::path::Path;

use ldct_core::conjugate::ConjugateMap;
use ldct_core::dataset::Sample;
use ldct_core::geometry::FanGeometry;
use ldct_core::metrics::sample_metrics;
use ldct_core::rng::SplitMix64;
use ldct_nn::adam::{adam_step, AdamState, LrSchedule};
use ldct_nn::ckpt;
use ldct_nn::params::{ParamStore, Session};
use ldct_nn::tape::Tape;
use ldct_nn::tensor::{Scalar, TensorData};

use crate::config::{ModelConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::loss::{total_loss, SampleTargets};
use crate::net::DenoiseModel;

/// One sample converted to training precision.
struct PreparedSample<T> {
    s_ld: TensorData<T>,
    s_nd: TensorData<T>,
    s_nd_f64: Vec<f64>,
    i_ld: TensorData<T>,
    i_nd: TensorData<T>,
}

fn prepare<T: Scalar>(samples: &[Sample], cfg: &ModelConfig) -> Result<Vec<PreparedSample<T>>> {
    let (p, d, w) = (cfg.num_views, cfg.num_detectors, cfg.image_size);
    samples
        .iter()
        .enumerate()
        .map(|(k, s)| {
            if s.s_ld.num_views() != p || s.s_ld.num_detectors() != d {
                return Err(Error::config(format!(
                    "sample {k}: sinogram {}x{} does not match the model ({p}x{d})",
                    s.s_ld.num_views(),
                    s.s_ld.num_detectors()
                )));
            }
            if s.i_ld.width != w || s.i_ld.height != w {
                return Err(Error::config(format!(
                    "sample {k}: image {}x{} does not match the model ({w}x{w})",
                    s.i_ld.width, s.i_ld.height
                )));
            }
            Ok(PreparedSample {
                s_ld: TensorData::from_f64_slice(vec![p, d], &s.s_ld.data)?,
                s_nd: TensorData::from_f64_slice(vec![p, d], &s.s_nd.data)?,
                s_nd_f64: s.s_nd.data.clone(),
                i_ld: TensorData::from_f64_slice(vec![1, w, w], &s.i_ld.data)?,
                i_nd: TensorData::from_f64_slice(vec![1, w, w], &s.i_nd.data)?,
            })
        })
        .collect()
}

/// Fisher-Yates with a stream keyed by `(seed, epoch)`.
fn epoch_order(n: usize, seed: u64, epoch: u32) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = SplitMix64::new(seed ^ ((epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)));
    for i in (1..n).rev() {
        let j = rng.below(i as u64 + 1) as usize;
        order.swap(i, j);
    }
    order
}

pub const METRIC_HEADER: &str =
    "epoch,lr,train_loss,psnr_sino,ssim_sino,rmse_sino,psnr_img,ssim_img,rmse_img";

/// Result of a training run.
pub struct TrainOutcome<T> {
    pub params: ParamStore<T>,
    pub adam: AdamState,
    /// Per-epoch CSV rows under [`METRIC_HEADER`].
    pub log: String,
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// Train on `(s_ld, s_nd, i_ld, i_nd)` quadruples. Deterministic for a
/// fixed seed. `geometry` must describe the sinogram grid (it feeds the
/// conjugate table of the structure loss). Checkpoints are written under
/// `train_cfg.out_dir` every `checkpoint_every` epochs when that is
/// nonzero and the directory is set.
pub fn train<T: Scalar>(
    model: &DenoiseModel,
    geometry: &FanGeometry,
    train_samples: &[Sample],
    val_samples: &[Sample],
    train_cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    if train_samples.is_empty() {
        return Err(Error::config("training dataset is empty"));
    }
    if train_cfg.batch_size == 0 {
        return Err(Error::config("batch size must be positive"));
    }
    let cfg = &model.config;
    let map = ConjugateMap::new(geometry)?;
    let prepared: Vec<PreparedSample<T>> = prepare(train_samples, cfg)?;
    let val: Vec<PreparedSample<T>> = if val_samples.is_empty() {
        prepare(train_samples, cfg)?
    } else {
        prepare(val_samples, cfg)?
    };

    let mut params: ParamStore<T> = model.init_params(train_cfg.seed)?;
    let mut adam = AdamState::default();
    let schedule = LrSchedule {
        initial_lr: train_cfg.lr,
        decay: train_cfg.lr_decay,
        period: train_cfg.lr_period,
    };

    let mut log = String::new();
    log.push_str(METRIC_HEADER);
    log.push('\n');
    let mut initial_loss = f64::NAN;
    let mut final_loss = f64::NAN;

    for epoch in 0..train_cfg.epochs {
        let lr = schedule.lr(epoch);
        let order = epoch_order(prepared.len(), train_cfg.seed, epoch);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(train_cfg.batch_size) {
            let tape: Tape<T> = Tape::new();
            let session = Session::new(&tape, &params);
            let mut batch_terms = Vec::with_capacity(batch.len());
            for &idx in batch {
                let ps = &prepared[idx];
                let s_ld = tape.leaf(ps.s_ld.clone());
                let i_ld = tape.leaf(ps.i_ld.clone());
                let out = model.forward(&session, s_ld, i_ld)?;
                let targets = SampleTargets {
                    s_nd: tape.leaf(ps.s_nd.clone()),
                    s_nd_f64: ps.s_nd_f64.clone(),
                    i_nd: tape.leaf(ps.i_nd.clone()),
                    i_ld,
                    _phantom: std::marker::PhantomData,
                };
                batch_terms.push(total_loss(
                    &session, cfg, out.s_hat, out.i_hat, out.i_noise, &targets, &map,
                )?);
            }
            let mut batch_loss = batch_terms[0];
            for t in &batch_terms[1..] {
                batch_loss = tape.add(batch_loss, *t)?;
            }
            if batch_terms.len() > 1 {
                batch_loss = tape.scale(batch_loss, 1.0 / batch_terms.len() as f64);
            }
            let grads = tape.backward(batch_loss)?;
            let param_grads = session.param_gradients(&grads);
            adam_step(&mut params, &param_grads, &mut adam, lr)?;
            epoch_loss += tape.scalar_value(batch_loss)?.as_f64() * batch.len() as f64;
        }
        epoch_loss /= prepared.len() as f64;
        if epoch == 0 {
            initial_loss = epoch_loss;
        }
        final_loss = epoch_loss;

        let vm = validate(model, &params, &val)?;
        log.push_str(&format!(
            "{epoch},{lr:.3e},{epoch_loss:.6e},{:.4},{:.6},{:.6e},{:.4},{:.6},{:.6e}\n",
            vm.0.psnr, vm.0.ssim, vm.0.rmse, vm.1.psnr, vm.1.ssim, vm.1.rmse
        ));

        if train_cfg.checkpoint_every > 0
            && !train_cfg.out_dir.as_os_str().is_empty()
            && (epoch + 1) % train_cfg.checkpoint_every == 0
        {
            let path = train_cfg.out_dir.join(format!("ckpt_epoch_{:04}.ckpt", epoch + 1));
            save_checkpoint(&path, model, &params, train_cfg.save_optimizer.then_some(&adam))?;
        }
    }

    Ok(TrainOutcome {
        params,
        adam,
        log,
        initial_loss,
        final_loss,
    })
}

type MeanMetrics = (ldct_core::metrics::SampleMetrics, ldct_core::metrics::SampleMetrics);

/// Like [`sample_metrics`] but reports `NaN` SSIM for frames smaller than
/// the 11-pixel window instead of failing.
fn metrics_lenient(
    pred: &[f64],
    reference: &[f64],
    width: usize,
    height: usize,
) -> Result<ldct_core::metrics::SampleMetrics> {
    if width >= 11 && height >= 11 {
        return Ok(sample_metrics(pred, reference, width, height)?);
    }
    let (p, r) = ldct_core::metrics::normalize_pair(pred, reference);
    Ok(ldct_core::metrics::SampleMetrics {
        psnr: ldct_core::metrics::psnr(&p, &r)?,
        ssim: f64::NAN,
        rmse: ldct_core::metrics::rmse(&p, &r)?,
    })
}

/// Mean sinogram- and image-domain metrics of the model on `samples`.
fn validate<T: Scalar>(
    model: &DenoiseModel,
    params: &ParamStore<T>,
    samples: &[PreparedSample<T>],
) -> Result<MeanMetrics> {
    let cfg = &model.config;
    let (p, d, w) = (cfg.num_views, cfg.num_detectors, cfg.image_size);
    let mut sino = ldct_core::metrics::MetricReport::default();
    let mut img = ldct_core::metrics::MetricReport::default();
    for (k, ps) in samples.iter().enumerate() {
        let tape: Tape<T> = Tape::new();
        let session = Session::new(&tape, params);
        let s_ld = tape.leaf(ps.s_ld.clone());
        let i_ld = tape.leaf(ps.i_ld.clone());
        let out = model.forward(&session, s_ld, i_ld)?;
        let s_hat: Vec<f64> = tape.value(out.s_hat).iter().map(|v| v.as_f64()).collect();
        let i_hat: Vec<f64> = tape.value(out.i_hat).iter().map(|v| v.as_f64()).collect();
        let s_ref: Vec<f64> = ps.s_nd.data.iter().map(|v| v.as_f64()).collect();
        let i_ref: Vec<f64> = ps.i_nd.data.iter().map(|v| v.as_f64()).collect();
        sino.push(format!("{k}"), metrics_lenient(&s_hat, &s_ref, d, p)?);
        img.push(format!("{k}"), metrics_lenient(&i_hat, &i_ref, w, w)?);
    }
    Ok((sino.mean().unwrap(), img.mean().unwrap()))
}

/// Write parameters (+ optional optimizer state) with the model config in
/// the metadata.
pub fn save_checkpoint<T: Scalar>(
    path: impl AsRef<Path>,
    model: &DenoiseModel,
    params: &ParamStore<T>,
    adam: Option<&AdamState>,
) -> Result<()> {
    let meta = model.config.to_meta();
    Ok(ckpt::write_checkpoint(path, params, adam, &meta)?)
}

/// Load a checkpoint and rebuild the model it describes.
pub fn load_checkpoint<T: Scalar>(
    path: impl AsRef<Path>,
) -> Result<(DenoiseModel, ParamStore<T>, Option<AdamState>)> {
    let ck: ckpt::Checkpoint<T> = ckpt::read_checkpoint(path)?;
    let cfg = ModelConfig::from_meta(&ck.meta)?;
    let model = DenoiseModel::new(cfg)?;
    Ok((model, ck.params, ck.adam))
}

/// Apply a trained model to one `(s_ld, i_ld)` pair; returns
/// `(s_hat, i_hat, i_noise)` at f64.
pub fn denoise_pair<T: Scalar>(
    model: &DenoiseModel,
    params: &ParamStore<T>,
    s_ld: &ldct_core::Sinogram,
    i_ld: &ldct_core::Image,
) -> Result<(ldct_core::Sinogram, ldct_core::Image, ldct_core::Image)> {
    let cfg = &model.config;
    let (p, d, w) = (cfg.num_views, cfg.num_detectors, cfg.image_size);
    if s_ld.num_views() != p || s_ld.num_detectors() != d {
        return Err(Error::config(format!(
            "sinogram {}x{} does not match the model ({p}x{d})",
            s_ld.num_views(),
            s_ld.num_detectors()
        )));
    }
    if i_ld.width != w || i_ld.height != w {
        return Err(Error::config(format!(
            "image {}x{} does not match the model ({w}x{w})",
            i_ld.width, i_ld.height
        )));
    }
    let tape: Tape<T> = Tape::new();
    let session = Session::new(&tape, params);
    let s_in = tape.leaf(TensorData::from_f64_slice(vec![p, d], &s_ld.data)?);
    let i_in = tape.leaf(TensorData::from_f64_slice(vec![1, w, w], &i_ld.data)?);
    let out = model.forward(&session, s_in, i_in)?;
    let to64 = |v: ldct_nn::tape::Var| -> Vec<f64> {
        tape.value(v).iter().map(|x| x.as_f64()).collect()
    };
    let s_hat = ldct_core::Sinogram::new(s_ld.geometry.clone(), to64(out.s_hat))?;
    let i_hat = ldct_core::Image::new(w, w, i_ld.pixel_size, to64(out.i_hat))?;
    let i_noise = ldct_core::Image::new(w, w, i_ld.pixel_size, to64(out.i_noise))?;
    Ok((s_hat, i_hat, i_noise))
}
