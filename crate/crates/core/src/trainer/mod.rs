//! Mini-batch training with Adam, paired augmentation and a
//! reduce-on-plateau learning-rate policy.

mod adam;
mod schedule;

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adam::{adam_update, AdamConfig, AdamState};
pub use schedule::{LrEvent, LrSchedule};

use crate::augment::{augment_pair, AugmentError, AugmentationPolicy};
use crate::loss::{LossError, SegmentationLoss, SoftJaccard};
use crate::model::checkpoint::NamedTensor;
use crate::model::{Checkpoint, FeatureMap, Gradients, ModelError, Network, NetworkConfig, WeightInit};
use crate::raster_io::{DatasetManifest, RasterError};
use crate::scalar::Scalar;
use crate::tiling::{
    cut_mask, cut_patches, normalize, resize_mask, resize_patch, MaskKind, MaskPatch, ResizeMethod,
    SpectralPatch, TilingError, PATCH_SIZE,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training set is empty")]
    EmptyDataset,
    #[error("non-finite loss {loss} in epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize, loss: f64 },
    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("bad checkpoint state: {0}")]
    State(String),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Tiling(#[from] TilingError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub initial_lr: f64,
    pub decay_rate: f64,
    pub patience: usize,
    pub lr_floor: f64,
    /// Minimum decrease of the monitored value that counts as progress.
    pub improvement_tolerance: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    pub init: WeightInit,
    /// Share of samples held out to drive the schedule; 0 monitors the
    /// training loss instead.
    pub validation_fraction: f64,
    /// Side of the cells scenes are cut into before resizing to the
    /// network input.
    pub patch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            initial_lr: 1e-4,
            decay_rate: 0.7,
            patience: 15,
            lr_floor: 1e-9,
            improvement_tolerance: 1e-8,
            max_epochs: 200,
            batch_size: 16,
            seed: 0,
            adam: AdamConfig::default(),
            init: WeightInit::default(),
            validation_fraction: 0.0,
            patch_size: PATCH_SIZE,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return bad(format!("initial_lr must be positive, got {}", self.initial_lr));
        }
        if !(self.decay_rate > 0.0 && self.decay_rate < 1.0) {
            return bad(format!("decay_rate must lie in (0, 1), got {}", self.decay_rate));
        }
        if self.patience == 0 {
            return bad("patience must be at least 1".into());
        }
        if !(self.lr_floor >= 0.0 && self.lr_floor <= self.initial_lr) {
            return bad(format!("lr_floor {} must lie in [0, initial_lr]", self.lr_floor));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad(format!("validation_fraction must lie in [0, 1), got {}", self.validation_fraction));
        }
        if self.patch_size == 0 {
            return bad("patch_size must be positive".into());
        }
        Ok(())
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule::new(
            self.initial_lr,
            self.decay_rate,
            self.patience,
            self.lr_floor,
            self.improvement_tolerance,
        )
    }
}

/// One network-sized training pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample<T> {
    pub patch: SpectralPatch<T>,
    pub mask: MaskPatch<T>,
}

impl<T: Scalar> Sample<T> {
    pub fn new(patch: SpectralPatch<T>, mask: MaskPatch<T>) -> Result<Self> {
        if patch.side != mask.side {
            return Err(TrainError::ShapeMismatch(format!(
                "patch side {} vs mask side {}",
                patch.side, mask.side
            )));
        }
        if mask.kind != MaskKind::Binary {
            return Err(TrainError::ShapeMismatch("training masks must be binary".into()));
        }
        Ok(Self { patch, mask })
    }
}

/// Loads every manifest entry, cuts it into `patch_size` cells and resizes
/// each cell to `input_side` (bilinear for bands, nearest for masks).
pub fn load_samples<T: Scalar>(
    manifest: &DatasetManifest,
    patch_size: usize,
    input_side: usize,
) -> Result<Vec<Sample<T>>> {
    let per_entry: Vec<Result<Vec<Sample<T>>>> = manifest
        .entries
        .par_iter()
        .map(|entry| {
            let scene = entry.load_scene()?;
            let gt = entry
                .load_gt(&scene)?
                .ok_or_else(|| RasterError::MissingGt(entry.scene_id.clone()))?;
            let (_, patches) = cut_patches(&scene, patch_size);
            let (_, masks) = cut_mask(&entry.scene_id, gt.mask(), patch_size)?;
            patches
                .iter()
                .zip(&masks)
                .map(|(p, m)| {
                    let p = resize_patch(&normalize::<T>(p), input_side, ResizeMethod::Bilinear)?;
                    let m = resize_mask(m, input_side, ResizeMethod::Nearest)?;
                    let values = m.values.iter().map(|&v| T::lit(f64::from(v))).collect();
                    let m = MaskPatch::new(m.grid_row, m.grid_col, input_side, values, MaskKind::Binary)?;
                    Sample::new(p, m)
                })
                .collect()
        })
        .collect();
    let mut out = Vec::new();
    for r in per_entry {
        out.extend(r?);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// One-based epoch number.
    pub epoch: usize,
    /// Mean per-sample training loss.
    pub loss: f64,
    /// Learning rate used during the epoch.
    pub lr: f64,
    /// Value fed to the schedule (validation loss when a split is held out).
    pub monitored: f64,
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState<T> {
    pub network: Network<T>,
    pub adam: AdamState<T>,
    pub schedule: LrSchedule,
    /// Completed epochs.
    pub epoch: usize,
    pub history: Vec<EpochRecord>,
}

#[derive(Serialize, Deserialize)]
struct StateMeta {
    epoch: usize,
    adam_step: u64,
    adam: AdamConfig,
    schedule: LrSchedule,
    history: Vec<EpochRecord>,
}

const ADAM_M: &str = "adam.m.";
const ADAM_V: &str = "adam.v.";

impl<T: Scalar> TrainState<T> {
    pub fn new(net_config: NetworkConfig, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let network = Network::build(net_config, cfg.init, cfg.seed)?;
        let adam = AdamState::new(cfg.adam, network.params());
        Ok(Self {
            network,
            adam,
            schedule: cfg.schedule(),
            epoch: 0,
            history: Vec::new(),
        })
    }

    pub fn lr(&self) -> f64 {
        self.schedule.current_lr
    }

    /// Feeds one monitored value to the learning-rate schedule.
    pub fn lr_step(&mut self, monitored: f64) -> LrEvent {
        self.schedule.step(monitored)
    }

    /// Network weights, then Adam moments, with schedule and history in meta.
    pub fn to_checkpoint(&self) -> Checkpoint<T> {
        let mut ck = Checkpoint::from_network(&self.network);
        for (prefix, moments) in [(ADAM_M, &self.adam.m), (ADAM_V, &self.adam.v)] {
            for (t, values) in self.network.params().tensors().iter().zip(moments) {
                ck.tensors.push(NamedTensor {
                    name: format!("{prefix}{}", t.name),
                    shape: t.shape.clone(),
                    values: values.clone(),
                });
            }
        }
        ck.meta = serde_json::to_value(StateMeta {
            epoch: self.epoch,
            adam_step: self.adam.step,
            adam: self.adam.config,
            schedule: self.schedule.clone(),
            history: self.history.clone(),
        })
        .expect("state metadata serializes");
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint<T>, expected: Option<&NetworkConfig>) -> Result<Self> {
        let network = ck.to_network(expected)?;
        let meta: StateMeta = serde_json::from_value(ck.meta.clone())
            .map_err(|e| TrainError::State(format!("checkpoint has no training state: {e}")))?;
        let moments = |prefix: &str| -> Result<Vec<Vec<T>>> {
            network
                .params()
                .tensors()
                .iter()
                .map(|t| {
                    let name = format!("{prefix}{}", t.name);
                    match ck.tensor(&name) {
                        Some(s) if s.values.len() == t.values.len() => Ok(s.values.clone()),
                        _ => Err(TrainError::State(format!("missing or misshaped {name}"))),
                    }
                })
                .collect()
        };
        let adam = AdamState {
            config: meta.adam,
            m: moments(ADAM_M)?,
            v: moments(ADAM_V)?,
            step: meta.adam_step,
        };
        Ok(Self {
            network,
            adam,
            schedule: meta.schedule,
            epoch: meta.epoch,
            history: meta.history,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(self.to_checkpoint().save(path)?)
    }

    pub fn load(path: &Path, expected: Option<&NetworkConfig>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?, expected)
    }
}

/// Writes the `epoch,loss,lr` history table.
pub fn write_history_csv(path: &Path, history: &[EpochRecord]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "epoch,loss,lr")?;
    for r in history {
        writeln!(w, "{},{},{}", r.epoch, r.loss, r.lr)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    MaxEpochs,
    /// A plateau completed with the rate already at its floor.
    ScheduleExhausted,
}

pub struct TrainOutcome<T> {
    pub state: TrainState<T>,
    /// Weights at the lowest monitored value seen.
    pub best: Network<T>,
    pub best_monitored: f64,
    pub stop: StopReason,
}

/// Per-epoch notification; returning an error aborts training.
pub trait EpochObserver<T> {
    fn on_epoch(&mut self, state: &TrainState<T>, record: &EpochRecord, event: LrEvent) -> Result<()>;
}

impl<T, F> EpochObserver<T> for F
where
    F: FnMut(&TrainState<T>, &EpochRecord, LrEvent) -> Result<()>,
{
    fn on_epoch(&mut self, state: &TrainState<T>, record: &EpochRecord, event: LrEvent) -> Result<()> {
        self(state, record, event)
    }
}

fn to_input<T: Scalar>(patch: &SpectralPatch<T>) -> FeatureMap<T> {
    FeatureMap::new(patch.pixels.len() / (patch.side * patch.side), patch.side, patch.pixels.clone())
}

/// Loss and gradient of one sample, after augmentation.
fn sample_step<T: Scalar>(
    net: &Network<T>,
    sample: &Sample<T>,
    policy: &AugmentationPolicy,
    loss: &dyn SegmentationLoss<T>,
    epoch: usize,
    index: usize,
) -> Result<(T, Gradients<T>)> {
    let mut rng = policy.sample_rng(epoch, index);
    let (patch, mask) = augment_pair(&sample.patch, &sample.mask, policy, &mut rng)?;
    let trace = net.forward_trace(&to_input(&patch))?;
    let (l, dy) = loss.loss_grad(&mask.values, &trace.output().data)?;
    Ok((l, net.backward(&trace, &dy)?))
}

/// Mean loss over `samples` without augmentation.
pub fn mean_loss<T: Scalar>(
    net: &Network<T>,
    samples: &[Sample<T>],
    loss: &dyn SegmentationLoss<T>,
) -> Result<f64> {
    let losses: Vec<Result<f64>> = samples
        .par_iter()
        .map(|s| {
            let y = net.forward_one(&to_input(&s.patch))?;
            Ok(loss.loss(&s.mask.values, &y.data)?.to_f64().unwrap_or(f64::NAN))
        })
        .collect();
    let mut sum = 0.0;
    for l in losses {
        sum += l?;
    }
    Ok(sum / samples.len().max(1) as f64)
}

/// Splits off the held-out share deterministically. Returns (train, validation).
pub fn split_validation<T: Clone>(samples: &[T], fraction: f64, seed: u64) -> (Vec<T>, Vec<T>) {
    let held = (samples.len() as f64 * fraction).ceil() as usize;
    if held == 0 || held >= samples.len() {
        return (samples.to_vec(), Vec::new());
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x7661_6c69_6461_7465));
    let (train, val) = order.split_at(samples.len() - held);
    let pick = |ix: &[usize]| {
        let mut ix = ix.to_vec();
        ix.sort_unstable();
        ix.into_iter().map(|i| samples[i].clone()).collect()
    };
    (pick(train), pick(val))
}

/// Trains with the soft Jaccard loss on samples loaded from `manifest`.
pub fn train<T: Scalar>(
    manifest: &DatasetManifest,
    net_config: NetworkConfig,
    cfg: &TrainConfig,
    policy: &AugmentationPolicy,
) -> Result<TrainOutcome<T>> {
    let samples = load_samples(manifest, cfg.patch_size, net_config.input_side)?;
    let state = TrainState::new(net_config, cfg)?;
    train_samples(state, &samples, cfg, policy, &SoftJaccard::default(), &mut |_: &TrainState<T>, _: &EpochRecord, _| Ok(()))
}

/// Runs epochs from `state` until `cfg.max_epochs` total epochs have been
/// completed or the schedule is exhausted.
///
/// Per-sample gradients are computed in parallel but always summed in batch
/// order, so results do not depend on the thread count.
pub fn train_samples<T: Scalar>(
    mut state: TrainState<T>,
    samples: &[Sample<T>],
    cfg: &TrainConfig,
    policy: &AugmentationPolicy,
    loss: &dyn SegmentationLoss<T>,
    observer: &mut dyn EpochObserver<T>,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    policy.validate()?;
    if samples.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let (train_set, val_set) = split_validation(samples, cfg.validation_fraction, cfg.seed);
    let group = rayon::current_num_threads().max(1);
    let mut best = state.network.clone();
    let mut best_monitored = state.schedule.best;
    let mut stop = StopReason::MaxEpochs;

    while state.epoch < cfg.max_epochs {
        if state.schedule.exhausted {
            stop = StopReason::ScheduleExhausted;
            break;
        }
        let epoch = state.epoch;
        let lr = state.lr();
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        shuffle_rng.set_stream(epoch as u64 + 1);
        order.shuffle(&mut shuffle_rng);

        let mut loss_sum = 0.0f64;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut grads = Gradients::zeros_like(state.network.params());
            let mut batch_loss = 0.0f64;
            for chunk in batch.chunks(group) {
                let net = &state.network;
                let results: Vec<Result<(T, Gradients<T>)>> = chunk
                    .par_iter()
                    .map(|&i| sample_step(net, &train_set[i], policy, loss, epoch, i))
                    .collect();
                for r in results {
                    let (l, g) = r?;
                    batch_loss += l.to_f64().unwrap_or(f64::NAN);
                    grads.add_assign(&g);
                }
            }
            if !batch_loss.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch: epoch + 1,
                    batch: b,
                    loss: batch_loss / batch.len() as f64,
                });
            }
            loss_sum += batch_loss;
            grads.scale(T::one() / T::lit(batch.len() as f64));
            adam_update(state.network.params_mut(), &grads, &mut state.adam, lr)?;
        }

        let train_loss = loss_sum / train_set.len() as f64;
        let monitored = if val_set.is_empty() {
            train_loss
        } else {
            mean_loss(&state.network, &val_set, loss)?
        };
        state.epoch += 1;
        let event = state.lr_step(monitored);
        if event == LrEvent::Improved {
            best.clone_from(&state.network);
            best_monitored = monitored;
        }
        let record = EpochRecord {
            epoch: state.epoch,
            loss: train_loss,
            lr,
            monitored,
        };
        state.history.push(record.clone());
        observer.on_epoch(&state, &record, event)?;
    }
    if state.schedule.exhausted {
        stop = StopReason::ScheduleExhausted;
    }
    Ok(TrainOutcome {
        state,
        best,
        best_monitored,
        stop,
    })
}
