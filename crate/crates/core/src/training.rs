//! Unsupervised training over random graph sizes.

use std::fmt::Write as _;
use std::time::Instant;

use crate::autodiff::{adam_step, AdamState};
use crate::beamcore::Utility;
use crate::bgnn::{bmp_forward, objective_and_grad, BgnnConfig, BgnnParams, InitialMessages};
use crate::channel::{db_to_linear, sample_instance, BipartiteChannel, ScenarioConfig};
use crate::error::{Error, Result};
use crate::exec::{tree_sum, Execution};
use crate::rng::{stream, Purpose};
use rand::Rng;

/// Samples whose gradients are held in memory at once.
const GRADIENT_CHUNK: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: BgnnConfig,
    pub scenario: ScenarioConfig,
    pub epochs: usize,
    pub batches_per_epoch: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub validation_size: usize,
    pub seed: u64,
    /// Weight of each round in the objective; empty means all ones.
    pub step_weights: Vec<f64>,
    /// Per-sample SNR drawn uniformly from this dB range instead of the scenario power.
    pub snr_db_range: Option<(f64, f64)>,
    pub execution: Execution,
}

impl TrainConfig {
    /// Laptop-sized run: up to 4 antennas and users, six rounds, 20 batches of 64 per epoch.
    /// Sum rate trains for 30 epochs; the minimum rate objective learns more slowly and gets 150.
    pub fn desk(mode: Utility) -> Self {
        Self {
            model: BgnnConfig::new(mode, 5, 6),
            scenario: ScenarioConfig::default(),
            epochs: match mode {
                Utility::SumRate => 30,
                Utility::MinRate => 150,
            },
            batches_per_epoch: 20,
            batch_size: 64,
            learning_rate: 1e-3,
            validation_size: 200,
            seed: 1,
            step_weights: Vec::new(),
            snr_db_range: None,
            execution: Execution::Parallel,
        }
    }

    /// Full-size hyperparameters: sizes up to 8, ten rounds, 100×50 batches of 1000.
    pub fn full(mode: Utility) -> Self {
        Self {
            model: BgnnConfig::new(mode, 5, 10),
            scenario: ScenarioConfig { max_antennas: 8, max_users: 8, ..ScenarioConfig::default() },
            epochs: 100,
            batches_per_epoch: 50,
            batch_size: 1000,
            learning_rate: 5e-4,
            validation_size: 1000,
            ..Self::desk(mode)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        if self.batches_per_epoch == 0 || self.batch_size == 0 || self.validation_size == 0 {
            return Err(Error::Config("batch counts, batch size and validation size must be at least 1".into()));
        }
        if self.model.msg_dim == 0 || self.model.iterations == 0 || self.model.hidden == 0 {
            return Err(Error::Config("message length, rounds and hidden width must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if !self.step_weights.is_empty() && self.step_weights.len() != self.model.iterations {
            return Err(Error::Config(format!("{} step weights for {} rounds", self.step_weights.len(), self.model.iterations)));
        }
        if let Some((lo, hi)) = self.snr_db_range {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::Config(format!("bad SNR range {lo}..{hi} dB")));
            }
        }
        Ok(())
    }

    pub fn weights(&self) -> Vec<f64> {
        if self.step_weights.is_empty() {
            vec![1.0; self.model.iterations]
        } else {
            self.step_weights.clone()
        }
    }

    /// Instance `idx` of batch `batch` in epoch `epoch` (both zero based).
    pub fn training_sample(&self, epoch: usize, batch: usize, idx: usize) -> Result<(BipartiteChannel, InitialMessages)> {
        let mut rng = stream(self.seed, Purpose::TrainBatch, &[epoch as u64, batch as u64, idx as u64]);
        let mut inst = sample_instance(&self.scenario, &mut rng)?;
        if let Some((lo, hi)) = self.snr_db_range {
            inst = inst.with_power(db_to_linear(rng.random_range(lo..=hi)))?;
        }
        let init = InitialMessages::sample(inst.n(), inst.k(), self.model.msg_dim, &mut rng);
        Ok((inst, init))
    }

    /// Held-out set, drawn from its own seed stream.
    pub fn validation_set(&self) -> Result<Vec<(BipartiteChannel, InitialMessages)>> {
        (0..self.validation_size)
            .map(|i| {
                let mut rng = stream(self.seed, Purpose::Validation, &[i as u64]);
                let inst = sample_instance(&self.scenario, &mut rng)?;
                let init = InitialMessages::sample(inst.n(), inst.k(), self.model.msg_dim, &mut rng);
                Ok((inst, init))
            })
            .collect()
    }

    pub fn initial_params(&self) -> BgnnParams {
        BgnnParams::init(self.model, &mut stream(self.seed, Purpose::Params, &[]))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// One-based epoch number.
    pub epoch: usize,
    /// Mean training objective over the epoch's batches.
    pub objective: f64,
    pub validation: f64,
    /// Whether this epoch produced a new best checkpoint.
    pub best: bool,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    /// Validation utility of the untrained model.
    pub initial_validation: f64,
    pub epochs: Vec<EpochRecord>,
}

impl TrainReport {
    /// One line per epoch: `epoch objective validation best seconds`.
    pub fn to_text(&self) -> String {
        let mut s = String::from("# epoch objective validation best seconds\n");
        let _ = writeln!(s, "0 - {:.6} 0 0", self.initial_validation);
        for r in &self.epochs {
            let _ = writeln!(s, "{} {:.6} {:.6} {} {:.3}", r.epoch, r.objective, r.validation, u8::from(r.best), r.seconds);
        }
        s
    }

    /// Validation utilities at which checkpoints were stored, in order.
    pub fn checkpoint_utilities(&self) -> Vec<f64> {
        self.epochs.iter().filter(|r| r.best).map(|r| r.validation).collect()
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters with the best validation utility seen, including the untrained start.
    pub best: BgnnParams,
    pub best_validation: f64,
    pub last: BgnnParams,
    pub report: TrainReport,
}

/// Mean final-round utility over `set`.
pub fn validation_utility(params: &BgnnParams, set: &[(BipartiteChannel, InitialMessages)], exec: Execution) -> Result<f64> {
    let vals = exec.map(set.len(), |i| bmp_forward(params, &set[i].0, &set[i].1).map(|o| o.last().utility));
    let mut total = 0.0;
    for v in vals {
        total += v?;
    }
    Ok(total / set.len() as f64)
}

/// Mean objective and mean gradient over a batch.
pub fn batch_gradient(
    params: &BgnnParams,
    batch: &[(BipartiteChannel, InitialMessages)],
    weights: &[f64],
    exec: Execution,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    let mut chunk_grads = Vec::new();
    let mut objective = 0.0;
    for chunk in batch.chunks(GRADIENT_CHUNK) {
        let results = exec.map(chunk.len(), |i| objective_and_grad(params, &chunk[i].0, &chunk[i].1, weights));
        let mut grads = Vec::with_capacity(chunk.len());
        for r in results {
            let (f, g) = r?;
            objective += f;
            grads.push(g);
        }
        chunk_grads.push(tree_sum(grads).expect("chunks are nonempty"));
    }
    let mut grad = tree_sum(chunk_grads).expect("batch is nonempty");
    let scale = 1.0 / batch.len() as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    if let Some(pos) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite { op: "batch gradient", node: pos });
    }
    Ok((objective * scale, grad))
}

/// Runs the training loop.
///
/// `on_epoch` sees every epoch record and, when validation improved, the new
/// best parameters.
pub fn train(cfg: &TrainConfig, mut on_epoch: impl FnMut(&EpochRecord, Option<&BgnnParams>) -> Result<()>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let weights = cfg.weights();
    let validation = cfg.validation_set()?;
    let mut params = cfg.initial_params();
    let initial_validation = validation_utility(&params, &validation, cfg.execution)?;
    let mut best = params.clone();
    let mut best_validation = f64::NEG_INFINITY;
    let mut report = TrainReport { initial_validation, epochs: Vec::new() };
    let mut adam = AdamState::new(params.param_count(), cfg.learning_rate);
    let mut flat = params.flatten();

    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let mut objective = 0.0;
        for b in 0..cfg.batches_per_epoch {
            let batch: Vec<_> = (0..cfg.batch_size).map(|i| cfg.training_sample(epoch, b, i)).collect::<Result<_>>()?;
            let (f, grad) = batch_gradient(&params, &batch, &weights, cfg.execution).map_err(|e| Error::BatchFailed {
                epoch: epoch + 1,
                batch: b + 1,
                source: Box::new(e),
                instances: batch.iter().map(|(inst, _)| inst.clone()).collect(),
            })?;
            objective += f;
            adam_step(&mut flat, &grad, &mut adam)?;
            params.load_flat(&flat)?;
        }
        let val = validation_utility(&params, &validation, cfg.execution)?;
        let improved = val > best_validation;
        if improved {
            best_validation = val;
            best = params.clone();
        }
        let record = EpochRecord {
            epoch: epoch + 1,
            objective: objective / cfg.batches_per_epoch as f64,
            validation: val,
            best: improved,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&record, improved.then_some(&best))?;
        report.epochs.push(record);
    }
    if best_validation == f64::NEG_INFINITY {
        best_validation = initial_validation;
    }
    Ok(TrainOutcome { best, best_validation, last: params, report })
}
