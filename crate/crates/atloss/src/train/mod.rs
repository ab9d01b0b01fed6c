//! Deterministic training driver for 1-step precipitation forecasting, plus
//! the paired clean/dirty consistency experiment.
//!
//! Every source of randomness (weight init, shuffling, loss perturbation,
//! per-epoch data corruption) draws from its own stream derived from the run
//! seed, so a run is bit-reproducible and the clean and dirty tracks of a
//! pair share identical initialization and batch order.

pub mod adam;
pub mod conv;
pub(crate) mod fastmath;
pub mod model;
pub mod norm;
pub mod tensor;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::noise::{inject_noise, NoiseSpec};
use crate::data::window::WindowedDataset;
use crate::error::{Error, Result};
use crate::grid::GridField;
use crate::loss::{
    at_loss, baseline_loss, AnnealSchedule, AtLossParams, BaselineLossKind, LossEval,
};
use crate::metrics::{csi, pod_far_hss, ContingencyTable, MetricValue, PSNR_CAP_DB};
use crate::seedmix::{mix, stream};

pub use adam::{AdamConfig, AdamState};
pub use conv::{Conv2d, ConvGrads};
pub use model::{CnnModel, ModelCache, ModelGrads, HIDDEN_CHANNELS, KERNEL_SIZE};
pub use norm::{swish_backward, swish_forward, InstanceNorm2d, INSTANCE_NORM_EPS};
pub use tensor::Tensor4;

pub const DEFAULT_BATCH_SIZE: usize = 16;

/// Which objective drives the weight updates.
#[derive(Debug, Clone, PartialEq)]
pub enum LossSpec {
    /// The AT loss on denormalized (mm/h) predictions, with its temperature
    /// annealed by `schedule`; `params.tau` is ignored in favor of the
    /// schedule's per-epoch value.
    At {
        params: AtLossParams,
        schedule: AnnealSchedule,
    },
    /// A pointwise baseline on normalized values.
    Baseline(BaselineLossKind),
}

impl LossSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LossSpec::At { .. } => "at",
            LossSpec::Baseline(kind) => kind.name(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LossSpec::At { params, .. } => params.validate(),
            LossSpec::Baseline(kind) => kind.validate(),
        }
    }
}

/// Whether model inputs are fed as refined, or corrupted anew each epoch.
/// Loss targets stay clean on both tracks.
#[derive(Debug, Clone, PartialEq)]
pub enum Track {
    Clean,
    Dirty(NoiseSpec),
}

impl Track {
    pub fn name(&self) -> &'static str {
        match self {
            Track::Clean => "clean",
            Track::Dirty(_) => "dirty",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub loss: LossSpec,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub track: Track,
    /// 1 feeds the window's latest available frame; 5 stacks all five
    /// history frames as input channels.
    pub input_frames: usize,
    /// Exceedance threshold (mm/h) for validation metrics.
    pub threshold: f64,
}

impl TrainConfig {
    pub fn new(loss: LossSpec, epochs: usize, seed: u64) -> Self {
        TrainConfig {
            loss,
            epochs,
            batch_size: DEFAULT_BATCH_SIZE,
            adam: AdamConfig::default(),
            seed,
            track: Track::Clean,
            input_frames: 1,
            threshold: crate::loss::at::DEFAULT_THRESHOLD,
        }
    }

    pub fn with_track(mut self, track: Track) -> Self {
        self.track = track;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.adam.validate()?;
        if self.batch_size == 0 {
            return Err(Error::invalid_param("batch_size", "must be positive"));
        }
        if self.input_frames != 1 && self.input_frames != 5 {
            return Err(Error::invalid_param(
                "input_frames",
                format!("must be 1 or 5, got {}", self.input_frames),
            ));
        }
        if !self.threshold.is_finite() || self.threshold < 0.0 {
            return Err(Error::invalid_param("threshold", "must be finite and >= 0"));
        }
        if let Track::Dirty(spec) = &self.track {
            spec.validate()?;
        }
        Ok(())
    }

    /// True when the two configs form a valid clean/dirty pair apart from
    /// their tracks.
    pub fn matches_except_track(&self, other: &TrainConfig) -> bool {
        self.loss == other.loss
            && self.epochs == other.epochs
            && self.batch_size == other.batch_size
            && self.adam == other.adam
            && self.seed == other.seed
            && self.input_frames == other.input_frames
            && self.threshold == other.threshold
    }
}

/// One row of the per-epoch metric log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Annealed temperature; absent for baseline losses.
    pub tau: Option<f64>,
    pub train_loss: f64,
    pub val_csi: MetricValue,
    pub val_hss: MetricValue,
    pub val_pod: MetricValue,
    pub val_far: MetricValue,
}

impl EpochLog {
    pub const CSV_HEADER: &'static str = "epoch,tau,train_loss,val_csi,val_hss,val_pod,val_far";

    pub fn to_csv_line(&self) -> String {
        let tau = self.tau.map(|t| t.to_string()).unwrap_or_default();
        format!(
            "{},{tau},{},{},{},{},{}",
            self.epoch, self.train_loss, self.val_csi, self.val_hss, self.val_pod, self.val_far
        )
    }
}

pub fn epoch_logs_to_csv(logs: &[EpochLog]) -> String {
    let mut out = String::from(EpochLog::CSV_HEADER);
    out.push('\n');
    for log in logs {
        out.push_str(&log.to_csv_line());
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: CnnModel,
    pub log: Vec<EpochLog>,
    /// Weight-initialization scheme and seed, recorded for reproducibility.
    pub init_scheme: &'static str,
    pub init_seed: u64,
}

/// Normalize one physical frame into a tensor plane.
fn fill_plane(plane: &mut [f64], frame: &GridField, norm: &crate::data::NormalizationSpec) {
    for (dst, v) in plane.iter_mut().zip(frame.values()) {
        *dst = norm.normalize_value(*v);
    }
}

/// Train a fresh model on `data`. Validation metrics are computed per epoch
/// against `val` when given (callers build `val` with the training set's
/// normalization via [`WindowedDataset::with_norm`]); otherwise the val
/// columns are undefined.
pub fn train(
    config: &TrainConfig,
    data: &WindowedDataset,
    val: Option<&WindowedDataset>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let count = data.window_count();
    if count == 0 {
        return Err(Error::EmptyDataset);
    }
    let norm = *data.norm();
    let (h, w) = (data.height(), data.width());
    // gradient of the denormalization map applied to AT-loss gradients
    let span_half = norm.span() * 0.5;

    let init_seed = mix(&[stream::INIT, config.seed]);
    let mut model = CnnModel::new(config.input_frames, init_seed)?;
    let mut adam = AdamState::new(config.adam, model.param_count())?;

    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let at_params = match &config.loss {
            LossSpec::At { params, schedule } => Some(params.at_tau(schedule.tau(epoch))?),
            LossSpec::Baseline(_) => None,
        };

        // The dirty track corrupts the frame sequence anew each epoch; the
        // corrupted frames feed the model inputs while loss targets stay clean.
        let epoch_frames: Option<Vec<GridField>> = match &config.track {
            Track::Clean => None,
            Track::Dirty(spec) => {
                let mut corrupted = Vec::with_capacity(data.frames().len());
                for (i, f) in data.frames().iter().enumerate() {
                    let s = spec.with_seed(mix(&[
                        stream::DATA_NOISE,
                        spec.seed,
                        config.seed,
                        epoch as u64,
                        i as u64,
                    ]));
                    corrupted.push(inject_noise(f, &s, &norm)?);
                }
                Some(corrupted)
            }
        };
        let frame = |i: usize| -> &GridField {
            epoch_frames
                .as_ref()
                .map(|frames| &frames[i])
                .unwrap_or(&data.frames()[i])
        };

        let mut order: Vec<usize> = (0..count).collect();
        let mut shuffle_rng =
            ChaCha8Rng::seed_from_u64(mix(&[stream::SHUFFLE, config.seed, epoch as u64]));
        for i in (1..count).rev() {
            let j = shuffle_rng.gen_range(0..=i);
            order.swap(i, j);
        }

        let mut loss_sum = 0.0;
        for (batch_idx, chunk) in order.chunks(config.batch_size).enumerate() {
            let bn = chunk.len();
            let inv_bn = 1.0 / bn as f64;
            // Samples stream through the model one at a time so every
            // activation tensor stays cache-resident; accumulating the
            // per-sample gradients in order matches a batched backward pass
            // bit for bit.
            let mut batch_grads: Option<ModelGrads> = None;
            let mut input = Tensor4::zeros(1, config.input_frames, h, w)?;
            for &wi in chunk {
                for ch in 0..config.input_frames {
                    let fi = if config.input_frames == 1 { wi + 4 } else { wi + ch };
                    fill_plane(input.plane_mut(0, ch), frame(fi), &norm);
                }

                let (pred, cache) = model.forward(&input)?;
                if !pred.is_all_finite() {
                    let bad = pred
                        .data()
                        .iter()
                        .copied()
                        .find(|v| !v.is_finite())
                        .unwrap_or(f64::NAN);
                    return Err(Error::NonFiniteLoss {
                        epoch,
                        batch: batch_idx,
                        value: bad,
                    });
                }

                let target = &data.frames()[wi + 5];
                let pred_plane = pred.plane(0, 0);
                let eval: LossEval = match (&config.loss, &at_params) {
                    (LossSpec::At { .. }, Some(p)) => {
                        let phys: Vec<f64> = pred_plane
                            .iter()
                            .map(|v| norm.denormalize_value(*v))
                            .collect();
                        let pred_field = GridField::new(h, w, phys)?;
                        let p = AtLossParams {
                            seed: mix(&[
                                stream::LOSS_NOISE,
                                p.seed,
                                config.seed,
                                epoch as u64,
                                wi as u64,
                            ]),
                            ..p.clone()
                        };
                        let mut e = at_loss(target, &pred_field, &p)?;
                        for g in e.grad.iter_mut() {
                            *g *= span_half;
                        }
                        e
                    }
                    (LossSpec::Baseline(kind), _) => {
                        let tgt: Vec<f64> = target
                            .values()
                            .iter()
                            .map(|v| norm.normalize_value(*v))
                            .collect();
                        let tgt_field = GridField::new(h, w, tgt)?;
                        let pred_field = GridField::new(h, w, pred_plane.to_vec())?;
                        baseline_loss(&tgt_field, &pred_field, *kind)?
                    }
                    (LossSpec::At { .. }, None) => unreachable!(),
                };
                if !eval.value.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        epoch,
                        batch: batch_idx,
                        value: eval.value,
                    });
                }
                loss_sum += eval.value;

                let mut grad_out = Tensor4::zeros(1, 1, h, w)?;
                for (dst, g) in grad_out.plane_mut(0, 0).iter_mut().zip(&eval.grad) {
                    *dst = g * inv_bn;
                }
                let grads = model.backward(&grad_out, &cache)?;
                match &mut batch_grads {
                    Some(acc) => acc.add(&grads),
                    None => batch_grads = Some(grads),
                }
            }

            let grads = batch_grads.expect("chunks are non-empty");
            adam.step(model.param_slices_mut(), grads.slices())?;
        }
        let train_loss = loss_sum / count as f64;

        let (val_csi, val_hss, val_pod, val_far) = match val {
            Some(vd) => {
                let table = validation_table(&model, vd, config)?;
                let (pod, far, hss) = pod_far_hss(&table);
                (csi(&table), hss, pod, far)
            }
            None => (
                MetricValue::Undefined,
                MetricValue::Undefined,
                MetricValue::Undefined,
                MetricValue::Undefined,
            ),
        };

        log.push(EpochLog {
            epoch,
            tau: at_params.as_ref().map(|p| p.tau),
            train_loss,
            val_csi,
            val_hss,
            val_pod,
            val_far,
        });
    }

    Ok(TrainOutcome {
        model,
        log,
        init_scheme: "uniform-fan-in-zero-head",
        init_seed,
    })
}

/// Contingency counts of thresholded forecasts against targets over a whole
/// dataset, in physical units.
fn validation_table(
    model: &CnnModel,
    data: &WindowedDataset,
    config: &TrainConfig,
) -> Result<ContingencyTable> {
    let preds = forecast(model, data, config.input_frames)?;
    let mut table = ContingencyTable::default();
    for (i, pred) in preds.iter().enumerate() {
        let t = crate::metrics::contingency(data.target_frame(i), pred, config.threshold)?;
        table.merge(&t);
    }
    Ok(table)
}

/// 1-step forecasts for every window of `data`, in physical units. The
/// dataset's own normalization feeds the model and denormalizes its output.
pub fn forecast(
    model: &CnnModel,
    data: &WindowedDataset,
    input_frames: usize,
) -> Result<Vec<GridField>> {
    if model.in_channels() != input_frames {
        return Err(Error::ConfigMismatch {
            field: "input_frames",
        });
    }
    let norm = data.norm();
    let (h, w) = (data.height(), data.width());
    let count = data.window_count();
    let mut out = Vec::with_capacity(count);

    let mut start = 0;
    while start < count {
        let bn = (count - start).min(DEFAULT_BATCH_SIZE);
        let mut input = Tensor4::zeros(bn, input_frames, h, w)?;
        for s in 0..bn {
            let wi = start + s;
            for ch in 0..input_frames {
                let f = if input_frames == 1 {
                    data.input_frame(wi)
                } else {
                    &data.window(wi)[ch]
                };
                fill_plane(input.plane_mut(s, ch), f, norm);
            }
        }
        let pred = model.predict(&input)?;
        for s in 0..bn {
            let phys: Vec<f64> = pred
                .plane(s, 0)
                .iter()
                .map(|v| norm.denormalize_value(*v))
                .collect();
            out.push(GridField::new(h, w, phys)?);
        }
        start += bn;
    }
    Ok(out)
}

/// Aggregate MAE and PSNR between two forecast sets over all cells of all
/// windows; `peak` is the PSNR reference range.
pub fn compare_forecasts(a: &[GridField], b: &[GridField], peak: f64) -> Result<(f64, f64)> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::invalid_param(
            "forecasts",
            format!("need equal non-empty sets, got {} vs {}", a.len(), b.len()),
        ));
    }
    if !peak.is_finite() || peak <= 0.0 {
        return Err(Error::invalid_param("peak", "must be finite and > 0"));
    }
    let mut abs_sum = 0.0;
    let mut sq_sum = 0.0;
    let mut n = 0usize;
    for (fa, fb) in a.iter().zip(b) {
        crate::grid::check_same_shape(fa, fb)?;
        for (va, vb) in fa.values().iter().zip(fb.values()) {
            let d = va - vb;
            abs_sum += d.abs();
            sq_sum += d * d;
            n += 1;
        }
    }
    let mae = abs_sum / n as f64;
    let mse = sq_sum / n as f64;
    let psnr = if mse == 0.0 {
        PSNR_CAP_DB
    } else {
        (10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB)
    };
    Ok((mae, psnr))
}

/// Result of one paired clean/dirty run: how far apart the two tracks'
/// forecasts are on shared evaluation inputs (lower MAE and higher PSNR mean
/// the loss trains more consistently under corruption).
#[derive(Debug, Clone)]
pub struct ConsistencyOutcome {
    pub mae: f64,
    pub psnr: f64,
    pub clean: TrainOutcome,
    pub dirty: TrainOutcome,
}

/// Train the paired tracks and compare their forecasts on `eval_data`.
/// `eval_data` should carry the training set's normalization so both models
/// see inputs on the scale they were trained with.
pub fn consistency_experiment(
    clean_cfg: &TrainConfig,
    dirty_cfg: &TrainConfig,
    train_data: &WindowedDataset,
    eval_data: &WindowedDataset,
) -> Result<ConsistencyOutcome> {
    if !matches!(clean_cfg.track, Track::Clean) {
        return Err(Error::ConfigMismatch { field: "track" });
    }
    if !matches!(dirty_cfg.track, Track::Dirty(_)) {
        return Err(Error::ConfigMismatch { field: "track" });
    }
    if !clean_cfg.matches_except_track(dirty_cfg) {
        return Err(Error::ConfigMismatch {
            field: "non-track fields",
        });
    }
    let clean = train(clean_cfg, train_data, None)?;
    let dirty = train(dirty_cfg, train_data, None)?;
    let fa = forecast(&clean.model, eval_data, clean_cfg.input_frames)?;
    let fb = forecast(&dirty.model, eval_data, dirty_cfg.input_frames)?;
    let (mae, psnr) = compare_forecasts(&fa, &fb, train_data.norm().physical_max)?;
    Ok(ConsistencyOutcome {
        mae,
        psnr,
        clean,
        dirty,
    })
}
