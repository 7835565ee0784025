//! Dataset preparation, the mini-batch training loop and held-out scoring.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::config::RunConfig;
use crate::data::{
    augment, preprocess, sample_patches_2d, sample_patches_3d, stream_seed, ImageRecord, SampleSet,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate_region, EvalReport};
use crate::model::{build_model, multiscale_targets, total_loss, LossConfig, ModelGraph};
use crate::optim::{AdamConfig, AdamState};
use crate::tensor::Tensor;

pub const LOSS_HEADER: &str = "step,main,aux2,aux3,total";

/// Unweighted per-scale losses and the weighted total of one step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub step: u64,
    pub main: f64,
    pub aux2: f64,
    pub aux3: f64,
    pub total: f64,
}

impl LossRecord {
    pub fn csv(&self) -> String {
        format!("{},{},{},{},{}", self.step, self.main, self.aux2, self.aux3, self.total)
    }
}

/// Records plus the training and held-out patch sets drawn from them.
/// Held-out patches come from held-out records only.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub records: Vec<ImageRecord>,
    pub train: SampleSet,
    pub held_out: SampleSet,
}

fn offset(mut set: SampleSet, by: usize) -> SampleSet {
    set.origins.iter_mut().for_each(|o| o.record += by);
    set
}

/// Preprocesses `records`, holds out a seeded `holdout` share of them,
/// augments the rest (2D) and samples patches from each side.
pub fn prepare_dataset(cfg: &RunConfig, records: Vec<ImageRecord>) -> Result<Dataset> {
    if records.is_empty() {
        return Err(Error::Data("dataset has no records".into()));
    }
    if let Some(r) = records.iter().find(|r| r.spatial_rank() != cfg.spatial_rank) {
        return Err(Error::Data(format!(
            "record `{}` is {}D but the run is {}D",
            r.id,
            r.spatial_rank(),
            cfg.spatial_rank
        )));
    }
    let pre = cfg.preprocess();
    let mut records = records.iter().map(|r| preprocess(r, &pre)).collect::<Result<Vec<_>>>()?;
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, 2)));
    let n_hold = if cfg.holdout > 0.0 && records.len() > 1 {
        ((cfg.holdout * records.len() as f64).round() as usize).clamp(1, records.len() - 1)
    } else {
        0
    };
    let held: Vec<ImageRecord> = order[..n_hold].iter().map(|&i| records[i].clone()).collect();
    let mut keep = vec![true; records.len()];
    order[..n_hold].iter().for_each(|&i| keep[i] = false);
    let mut idx = 0;
    records.retain(|_| {
        idx += 1;
        keep[idx - 1]
    });
    let mut pool = records;
    if cfg.spatial_rank == 2 {
        let originals = pool.len();
        for copy in 0..cfg.augment_copies {
            for i in 0..originals {
                let seed = stream_seed(cfg.seed, 1000 + (copy * originals + i) as u64);
                let mut r = augment(&pool[i], seed)?;
                r.id = format!("{}-aug{copy}", r.id);
                pool.push(r);
            }
        }
    }
    let sample_seed = stream_seed(cfg.seed, 1);
    let (train, held_out) = if cfg.spatial_rank == 2 {
        let n_val = if held.is_empty() { 0 } else { (cfg.holdout * cfg.train_patches as f64).round() as usize };
        let train = sample_patches_2d(&pool, cfg.train_patches - n_val, cfg.patch, sample_seed)?;
        let val = if held.is_empty() {
            SampleSet { patch: train.patch.clone(), origins: Vec::new() }
        } else {
            sample_patches_2d(&held, n_val, cfg.patch, stream_seed(sample_seed, 1))?
        };
        (train, val)
    } else {
        let train = sample_patches_3d(&pool, cfg.plan(), sample_seed)?;
        let val = if held.is_empty() {
            SampleSet { patch: train.patch.clone(), origins: Vec::new() }
        } else {
            sample_patches_3d(&held, cfg.plan(), stream_seed(sample_seed, 1))?
        };
        (train, val)
    };
    let base = pool.len();
    pool.extend(held);
    Ok(Dataset {
        records: pool,
        train,
        held_out: offset(held_out, base),
    })
}

/// A model with its optimiser state.
pub struct Trainer {
    pub model: ModelGraph<f32>,
    adam: AdamState<f32>,
    loss: LossConfig,
    step: u64,
}

impl Trainer {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let model = build_model::<f32>(cfg.model_spec(), cfg.seed)?;
        Ok(Self::from_model(model, cfg))
    }

    pub fn from_model(model: ModelGraph<f32>, cfg: &RunConfig) -> Self {
        let adam = AdamState::new(
            model.params.values(),
            AdamConfig {
                learning_rate: cfg.learning_rate,
                ..AdamConfig::default()
            },
        );
        Self {
            model,
            adam,
            loss: cfg.loss(),
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One optimisation step on inputs `[N, 1, S...]` and 0/1 targets.
    pub fn step(&mut self, x: &Tensor<f32>, y: &Tensor<f32>) -> Result<LossRecord> {
        let targets = multiscale_targets(y)?;
        let mut tape = Tape::new();
        let params = self.model.params.bind(&mut tape, true);
        let input = tape.constant(x.clone());
        let outputs = self.model.forward_train(&mut tape, &params, input)?;
        let terms = total_loss(&mut tape, &outputs, &targets, self.loss)?;
        self.step += 1;
        let value = |v| tape.value(v).data()[0] as f64;
        let record = LossRecord {
            step: self.step,
            main: value(terms.main),
            aux2: value(terms.aux2),
            aux3: value(terms.aux3),
            total: value(terms.total),
        };
        if !record.total.is_finite() {
            return Err(Error::Numeric(format!("loss at step {} is {}", self.step, record.total)));
        }
        tape.backward(terms.total)?;
        let grads: Vec<_> = params.iter().map(|&p| tape.grad(p).cloned()).collect();
        self.adam.step(self.model.params.values_mut(), &grads)?;
        Ok(record)
    }

    /// One pass over `data.train` in a seeded order.
    pub fn epoch(
        &mut self,
        data: &Dataset,
        epoch: usize,
        batch: usize,
        seed: u64,
        log: &mut dyn FnMut(&LossRecord) -> Result<()>,
    ) -> Result<()> {
        if data.train.is_empty() {
            return Err(Error::Data("no training patches".into()));
        }
        let mut order: Vec<usize> = (0..data.train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(stream_seed(seed, 100 + epoch as u64)));
        for chunk in order.chunks(batch.max(1)) {
            let (x, y) = data.train.batch(&data.records, chunk)?;
            log(&self.step(&x, &y)?)?;
        }
        Ok(())
    }
}

/// Trains for `cfg.epochs`, calling `log` after every step and `on_epoch`
/// after every epoch.
pub fn train(
    cfg: &RunConfig,
    data: &Dataset,
    log: &mut dyn FnMut(&LossRecord) -> Result<()>,
    on_epoch: &mut dyn FnMut(usize, &ModelGraph<f32>) -> Result<()>,
) -> Result<ModelGraph<f32>> {
    let mut trainer = Trainer::new(cfg)?;
    for epoch in 0..cfg.epochs {
        trainer.epoch(data, epoch, cfg.batch_size(), cfg.seed, log)?;
        on_epoch(epoch, &trainer.model)?;
    }
    Ok(trainer.model)
}

/// Scores a model on every patch of `set`, pooled into one report.
pub fn evaluate_patches(
    model: &ModelGraph<f32>,
    records: &[ImageRecord],
    set: &SampleSet,
    batch: usize,
    threshold: f64,
) -> Result<EvalReport> {
    if set.is_empty() {
        return Err(Error::Data("no patches to evaluate".into()));
    }
    let mut probs = Vec::new();
    let mut truth = Vec::new();
    let indices: Vec<usize> = (0..set.len()).collect();
    for chunk in indices.chunks(batch.max(1)) {
        let (x, y) = set.batch(records, chunk)?;
        probs.extend_from_slice(model.predict(&x)?.data());
        truth.extend(y.data().iter().map(|&v| v as u8));
    }
    let n = probs.len();
    evaluate_region(&Tensor::new(vec![n], probs)?, &Tensor::new(vec![n], truth)?, None, threshold)
}
