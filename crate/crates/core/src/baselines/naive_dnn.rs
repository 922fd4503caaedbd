use rand::Rng;

use super::BaselineResult;
use crate::autodiff::{adam_step, Activation, AdamState, DenseNet, Tape, Var};
use crate::beamcore::{recover_beams, recover_minrate_beams, BeamFeature, TapeInstance, Utility};
use crate::bgnn::{normalize_features, step_utility};
use crate::channel::{sample_fixed, BipartiteChannel, ScenarioConfig};
use crate::error::{Error, Result};
use crate::exec::{tree_sum, Execution};
use crate::rng::{stream, Purpose};

/// Fully connected map from the whole channel matrix to beam features.
///
/// The input layer is sized for one `(N, K)`, so any other size is rejected.
#[derive(Clone, Debug, PartialEq)]
pub struct NaiveDnn {
    n: usize,
    k: usize,
    mode: Utility,
    net: DenseNet,
}

fn feature_dim(mode: Utility) -> usize {
    match mode {
        Utility::SumRate => 2,
        Utility::MinRate => 1,
    }
}

impl NaiveDnn {
    /// Two hidden layers whose common width brings the parameter count closest to `target`.
    pub fn new<R: Rng + ?Sized>(n: usize, k: usize, mode: Utility, target: usize, rng: &mut R) -> Self {
        let (i, o) = (2 * n * k, k * feature_dim(mode));
        // w² + (i + o + 2)·w + o = target
        let b = (i + o + 2) as f64;
        let w = ((-b + (b * b + 4.0 * (target as f64 - o as f64)).max(0.0).sqrt()) / 2.0).round().max(1.0) as usize;
        let net = DenseNet::init(&[i, w, w, o], Activation::Relu, Activation::Sigmoid, rng);
        Self { n, k, mode, net }
    }

    pub fn param_count(&self) -> usize {
        self.net.param_count()
    }

    pub fn sizes(&self) -> (usize, usize) {
        (self.n, self.k)
    }

    fn check(&self, inst: &BipartiteChannel) -> Result<()> {
        if (inst.n(), inst.k()) != (self.n, self.k) {
            return Err(Error::Shape(format!(
                "network was built for N={}, K={} but the instance has N={}, K={}",
                self.n,
                self.k,
                inst.n(),
                inst.k()
            )));
        }
        Ok(())
    }

    fn features<'p>(&'p self, tape: &mut Tape<'p>, inst: &BipartiteChannel, trainable: bool) -> (Var, crate::autodiff::BoundNet) {
        let mut x = Vec::with_capacity(2 * self.n * self.k);
        for u in 0..self.k {
            for z in inst.h().row(u) {
                x.push(z.re);
                x.push(z.im);
            }
        }
        let bound = self.net.bind(tape, trainable);
        let input = tape.constant(x, 1, 2 * self.n * self.k);
        let raw = bound.forward(tape, input);
        let raw = tape.reshape(raw, self.k, feature_dim(self.mode));
        (normalize_features(tape, raw, inst.power()), bound)
    }

    pub fn objective_and_grad(&self, inst: &BipartiteChannel) -> Result<(f64, Vec<f64>)> {
        self.check(inst)?;
        let mut tape = Tape::new();
        let (f, bound) = self.features(&mut tape, inst, true);
        let ti = TapeInstance::new(&mut tape, inst);
        let u = step_utility(&mut tape, &ti, self.mode, f)?;
        tape.check()?;
        let grads = tape.backward(u)?;
        let mut flat = vec![0.0; self.param_count()];
        bound.accumulate_grads(&grads, &mut flat);
        Ok((tape.scalar(u), flat))
    }

    pub fn infer(&self, inst: &BipartiteChannel) -> Result<BaselineResult> {
        self.check(inst)?;
        let mut tape = Tape::new();
        let (f, _) = self.features(&mut tape, inst, false);
        tape.check()?;
        let vals = tape.value(f);
        let k = self.k;
        let v = match self.mode {
            Utility::SumRate => {
                let feature = BeamFeature { p: (0..k).map(|u| vals[2 * u]).collect(), q: (0..k).map(|u| vals[2 * u + 1]).collect() };
                recover_beams(inst, &feature)?
            }
            Utility::MinRate => recover_minrate_beams(inst, vals)?.v,
        };
        Ok(BaselineResult::new(inst, v, self.mode, 1, true, Vec::new()))
    }

    /// Trains on instances of the configured fixed size.
    pub fn train(cfg: &NaiveTrainConfig) -> Result<Self> {
        let mut model = Self::new(cfg.n, cfg.k, cfg.mode, cfg.target_params, &mut stream(cfg.seed, Purpose::Params, &[1]));
        let mut flat = Vec::new();
        model.net.flatten_into(&mut flat);
        let mut adam = AdamState::new(flat.len(), cfg.learning_rate);
        for epoch in 0..cfg.epochs {
            for b in 0..cfg.batches_per_epoch {
                let batch: Vec<BipartiteChannel> = (0..cfg.batch_size)
                    .map(|i| {
                        let mut rng = stream(cfg.seed, Purpose::Baseline, &[epoch as u64, b as u64, i as u64]);
                        sample_fixed(&cfg.scenario, cfg.n, cfg.k, &mut rng)
                    })
                    .collect::<Result<_>>()?;
                let results = cfg.execution.map(batch.len(), |i| model.objective_and_grad(&batch[i]).map(|(_, g)| g));
                let grads = results.into_iter().collect::<Result<Vec<_>>>()?;
                let mut g = tree_sum(grads).expect("batch is nonempty");
                g.iter_mut().for_each(|x| *x /= batch.len() as f64);
                adam_step(&mut flat, &g, &mut adam)?;
                model.net.load_flat(&flat)?;
            }
        }
        Ok(model)
    }
}

#[derive(Clone, Debug)]
pub struct NaiveTrainConfig {
    pub n: usize,
    pub k: usize,
    pub mode: Utility,
    pub scenario: ScenarioConfig,
    pub target_params: usize,
    pub epochs: usize,
    pub batches_per_epoch: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub execution: Execution,
}
