//! Minibatch training loop with per-example gradients computed in parallel
//! and reduced in a fixed order.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::GraphTransformer;
use super::optim::{ema_update, AdamW};
use super::tape::{Graph, Var};
use crate::error::{Error, Result};
use crate::par::{map_range, Parallelism};
use crate::util::{mix64, stream_rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub ema_decay: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Global gradient-norm clip; 0 disables.
    pub grad_clip: f64,
    /// Linear learning-rate warmup length in steps.
    pub warmup_steps: usize,
    #[serde(skip)]
    pub parallelism: Parallelism,
}

impl TrainConfig {
    pub fn paper() -> Self {
        Self {
            batch_size: 128,
            learning_rate: 1e-4,
            weight_decay: 0.0,
            ema_decay: 0.999,
            epochs: 2000,
            seed: 0,
            grad_clip: 1.0,
            warmup_steps: 0,
            parallelism: Parallelism::default(),
        }
    }

    /// Small-batch, higher learning-rate settings for CPU runs.
    pub fn desk() -> Self {
        Self {
            batch_size: 16,
            learning_rate: 2e-3,
            weight_decay: 0.0,
            ema_decay: 0.99,
            epochs: 60,
            seed: 0,
            grad_clip: 1.0,
            warmup_steps: 20,
            parallelism: Parallelism::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.batch_size > 0
            && self.learning_rate >= 0.0
            && self.learning_rate.is_finite()
            && self.weight_decay >= 0.0
            && self.ema_decay >= 0.0
            && self.ema_decay < 1.0
            && self.grad_clip >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid training config {self:?}")))
        }
    }
}

/// A differentiable per-example loss.
pub trait Objective: Sync {
    type Example: Sync;

    fn loss(
        &self,
        g: &mut Graph,
        model: &GraphTransformer,
        example: &Self::Example,
        epoch: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Var>;
}

pub struct Trainer<'m> {
    pub model: &'m mut GraphTransformer,
    pub config: TrainConfig,
    opt: AdamW,
    step: usize,
}

impl<'m> Trainer<'m> {
    pub fn new(model: &'m mut GraphTransformer, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let opt = AdamW::new(&model.params, config.learning_rate, config.weight_decay);
        Ok(Self {
            model,
            config,
            opt,
            step: 0,
        })
    }

    pub fn steps(&self) -> usize {
        self.step
    }

    fn lr(&self) -> f64 {
        let w = self.config.warmup_steps;
        if w > 0 && self.step < w {
            self.config.learning_rate * (self.step + 1) as f64 / w as f64
        } else {
            self.config.learning_rate
        }
    }

    /// One optimizer step on `batch`; returns the mean loss.
    pub fn step<O: Objective>(&mut self, obj: &O, batch: &[&O::Example], epoch: usize) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        let model: &GraphTransformer = self.model;
        let step_seed = mix64(self.config.seed ^ mix64(self.step as u64));
        let chunk = match self.config.parallelism {
            Parallelism::Sequential => 1,
            Parallelism::Rayon => 2 * std::thread::available_parallelism().map_or(1, |n| n.get()),
        };
        let mut total = model.params.zeros_like();
        let mut loss_sum = 0.0;
        for start in (0..batch.len()).step_by(chunk) {
            let end = (start + chunk).min(batch.len());
            let results = map_range(end - start, self.config.parallelism, |k| {
                let i = start + k;
                let mut rng = stream_rng(step_seed, i as u64);
                let mut g = Graph::new(&model.params);
                let l = obj.loss(&mut g, model, batch[i], epoch, &mut rng)?;
                let value = g.value(l).data[0];
                Ok::<_, Error>((value, g.backward(l)))
            });
            for (k, r) in results.into_iter().enumerate() {
                let (value, grads) = r?;
                if !value.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        step: self.step,
                        detail: format!("example {} of the batch has loss {value}", start + k),
                    });
                }
                loss_sum += value;
                total.add_assign(&grads);
            }
        }
        let b = batch.len() as f64;
        total.scale(1.0 / b);
        let norm = total.norm();
        if !norm.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: self.step,
                detail: format!("gradient norm {norm}"),
            });
        }
        if self.config.grad_clip > 0.0 && norm > self.config.grad_clip {
            total.scale(self.config.grad_clip / norm);
        }
        let lr = self.lr();
        self.opt.update(&mut self.model.params, &total, lr);
        ema_update(&mut self.model.ema, &self.model.params, self.config.ema_decay);
        self.step += 1;
        Ok(loss_sum / b)
    }

    /// Runs `config.epochs` epochs over shuffled minibatches. `on_epoch`
    /// receives the epoch index and its mean loss.
    pub fn fit<O: Objective>(
        &mut self,
        obj: &O,
        examples: &[O::Example],
        mut on_epoch: impl FnMut(usize, f64),
    ) -> Result<Vec<f64>> {
        if examples.is_empty() {
            return Err(Error::InsufficientData { needed: 1, got: 0 });
        }
        let mut history = Vec::with_capacity(self.config.epochs);
        let mut order: Vec<usize> = (0..examples.len()).collect();
        for epoch in 0..self.config.epochs {
            let mut rng = stream_rng(mix64(self.config.seed), 0x7368_7566 ^ epoch as u64);
            order.shuffle(&mut rng);
            let mut sum = 0.0;
            let mut batches = 0;
            for chunk in order.chunks(self.config.batch_size) {
                let batch: Vec<&O::Example> = chunk.iter().map(|&i| &examples[i]).collect();
                sum += self.step(obj, &batch, epoch)?;
                batches += 1;
            }
            let mean = sum / batches as f64;
            on_epoch(epoch, mean);
            history.push(mean);
        }
        Ok(history)
    }
}
