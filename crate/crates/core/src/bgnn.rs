//! Bipartite message passing between antennas and users.
//!
//! Edge `(i, k)` between antenna `i` and user `k` is stored at row `k·N + i`
//! of every per-edge matrix. Each vertex step only reads rows belonging to
//! its own edges, and all aggregation is plain summation.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{Activation, BoundNet, DenseNet, Tape, Var};
use crate::beamcore::{recover_beams, recover_minrate_beams, BeamFeature, BeamSolution, TapeInstance, Utility};
use crate::channel::BipartiteChannel;
use crate::error::{Error, Result};

/// Shape of a network family.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BgnnConfig {
    pub mode: Utility,
    /// Message length M.
    pub msg_dim: usize,
    /// Message-passing rounds T.
    pub iterations: usize,
    /// Width of both hidden layers of every network.
    pub hidden: usize,
}

impl BgnnConfig {
    /// Hidden widths 200 for sum rate and 40 for minimum rate.
    pub fn new(mode: Utility, msg_dim: usize, iterations: usize) -> Self {
        let hidden = match mode {
            Utility::SumRate => 200,
            Utility::MinRate => 40,
        };
        Self { mode, msg_dim, iterations, hidden }
    }

    /// Per-user feature length: `(p, q)` for sum rate, `q` for minimum rate.
    pub fn feature_dim(&self) -> usize {
        match self.mode {
            Utility::SumRate => 2,
            Utility::MinRate => 1,
        }
    }
}

/// The three shared networks and their hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct BgnnParams {
    pub config: BgnnConfig,
    /// User message network: `[s_k/P, b_k, Re h, Im h]` → M.
    pub c_net: DenseNet,
    /// Antenna message network: `[m_ik, c_i, Re h, Im h]` → M.
    pub m_net: DenseNet,
    /// Decision network: `m_k` → feature.
    pub d_net: DenseNet,
}

impl BgnnParams {
    fn dims(cfg: &BgnnConfig) -> [[usize; 4]; 3] {
        let (m, f, w) = (cfg.msg_dim, cfg.feature_dim(), cfg.hidden);
        [[f + m + 2, w, w, m], [3 * m + 2, w, w, m], [2 * m, w, w, f]]
    }

    pub fn init<R: Rng + ?Sized>(cfg: BgnnConfig, rng: &mut R) -> Self {
        let [c, m, d] = Self::dims(&cfg);
        Self {
            config: cfg,
            c_net: DenseNet::init(&c, Activation::Relu, Activation::Tanh, rng),
            m_net: DenseNet::init(&m, Activation::Relu, Activation::Tanh, rng),
            d_net: DenseNet::init(&d, Activation::Relu, Activation::Sigmoid, rng),
        }
    }

    pub fn zeros(cfg: BgnnConfig) -> Self {
        let [c, m, d] = Self::dims(&cfg);
        Self {
            config: cfg,
            c_net: DenseNet::zeros(&c, Activation::Relu, Activation::Tanh),
            m_net: DenseNet::zeros(&m, Activation::Relu, Activation::Tanh),
            d_net: DenseNet::zeros(&d, Activation::Relu, Activation::Sigmoid),
        }
    }

    /// Rebuilds from stored networks, checking that their shapes fit `config`.
    pub fn from_nets(config: BgnnConfig, c_net: DenseNet, m_net: DenseNet, d_net: DenseNet) -> Result<Self> {
        let (m, f) = (config.msg_dim, config.feature_dim());
        let want = [(f + m + 2, m), (3 * m + 2, m), (2 * m, f)];
        for ((name, net), (i, o)) in [("C", &c_net), ("M", &m_net), ("D", &d_net)].into_iter().zip(want) {
            if net.input_dim() != i || net.output_dim() != o {
                return Err(Error::Shape(format!("{name}-net maps {}→{}, expected {i}→{o}", net.input_dim(), net.output_dim())));
            }
        }
        Ok(Self { config, c_net, m_net, d_net })
    }

    pub fn param_count(&self) -> usize {
        self.c_net.param_count() + self.m_net.param_count() + self.d_net.param_count()
    }

    /// C, M and D parameters concatenated.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.c_net.flatten_into(&mut out);
        self.m_net.flatten_into(&mut out);
        self.d_net.flatten_into(&mut out);
        out
    }

    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Shape(format!("{} values for {} parameters", flat.len(), self.param_count())));
        }
        let mut at = self.c_net.load_flat(flat)?;
        at += self.m_net.load_flat(&flat[at..])?;
        self.d_net.load_flat(&flat[at..])?;
        Ok(())
    }

    pub fn bind<'p>(&'p self, tape: &mut Tape<'p>, trainable: bool) -> BoundParams {
        BoundParams {
            config: self.config,
            c: self.c_net.bind(tape, trainable),
            m: self.m_net.bind(tape, trainable),
            d: self.d_net.bind(tape, trainable),
        }
    }
}

/// Networks registered on one tape.
#[derive(Clone, Debug)]
pub struct BoundParams {
    config: BgnnConfig,
    c: BoundNet,
    m: BoundNet,
    d: BoundNet,
}

impl BoundParams {
    /// Parameter gradients in [`BgnnParams::flatten`] order.
    pub fn accumulate_grads(&self, grads: &crate::autodiff::Gradients, out: &mut [f64]) {
        let mut at = self.c.accumulate_grads(grads, out);
        at += self.m.accumulate_grads(grads, &mut out[at..]);
        self.d.accumulate_grads(grads, &mut out[at..]);
    }
}

/// Initial antenna messages `b_ik⁽⁰⁾`, stored per edge in `k·N + i` order.
#[derive(Clone, Debug, PartialEq)]
pub struct InitialMessages {
    pub n: usize,
    pub k: usize,
    pub msg_dim: usize,
    pub values: Vec<f64>,
}

impl InitialMessages {
    /// Entries drawn from the standard normal distribution.
    pub fn sample<R: Rng + ?Sized>(n: usize, k: usize, msg_dim: usize, rng: &mut R) -> Self {
        let values = (0..n * k * msg_dim).map(|_| StandardNormal.sample(rng)).collect();
        Self { n, k, msg_dim, values }
    }

    pub fn zeros(n: usize, k: usize, msg_dim: usize) -> Self {
        Self { n, k, msg_dim, values: vec![0.0; n * k * msg_dim] }
    }

    /// Messages for the instance permuted by [`BipartiteChannel::permuted`].
    pub fn permuted(&self, users: &[usize], antennas: &[usize]) -> Self {
        let m = self.msg_dim;
        let mut values = Vec::with_capacity(self.values.len());
        for &u in users {
            for &a in antennas {
                let e = u * self.n + a;
                values.extend_from_slice(&self.values[e * m..(e + 1) * m]);
            }
        }
        Self { values, ..*self }
    }
}

/// Message state on a tape after some round `t`.
#[derive(Clone, Copy, Debug)]
pub struct MessageState {
    /// c_ki, E×M.
    pub c_edge: Var,
    /// c_i = Σ_k c_ki, N×M.
    pub c_antenna: Var,
    /// b_ik, E×M.
    pub b_edge: Var,
    /// b_k = Σ_i b_ik, K×M.
    pub b_user: Var,
    /// m_ik = (b_ik, Σ_{l≠k} b_il), E×2M.
    pub m_edge: Var,
    /// m_k = Σ_i m_ik, K×2M.
    pub m_user: Var,
    /// Features s_k, K×f.
    pub features: Var,
}

/// Index bookkeeping for one bipartite graph on one tape.
pub struct GraphContext {
    n: usize,
    k: usize,
    power: f64,
    user_of_edge: Vec<usize>,
    antenna_of_edge: Vec<usize>,
    /// Re/Im of h_ki per edge, E×2.
    h_edge: Var,
}

impl GraphContext {
    pub fn new(tape: &mut Tape<'_>, inst: &BipartiteChannel) -> Self {
        let (n, k) = (inst.n(), inst.k());
        let edges = n * k;
        let mut h = Vec::with_capacity(2 * edges);
        for u in 0..k {
            for z in inst.h().row(u) {
                h.push(z.re);
                h.push(z.im);
            }
        }
        Self {
            n,
            k,
            power: inst.power(),
            user_of_edge: (0..edges).map(|e| e / n).collect(),
            antenna_of_edge: (0..edges).map(|e| e % n).collect(),
            h_edge: tape.constant(h, edges, 2),
        }
    }

    fn pool_users(&self, tape: &mut Tape<'_>, edge: Var) -> Var {
        tape.scatter_add_rows(edge, self.user_of_edge.clone(), self.k)
    }

    fn pool_antennas(&self, tape: &mut Tape<'_>, edge: Var) -> Var {
        tape.scatter_add_rows(edge, self.antenna_of_edge.clone(), self.n)
    }

    /// Derives every aggregate from antenna messages `b_edge`.
    fn antenna_aggregates(&self, tape: &mut Tape<'_>, b_edge: Var) -> (Var, Var, Var) {
        let b_user = self.pool_users(tape, b_edge);
        let at_antenna = self.pool_antennas(tape, b_edge);
        let spread = tape.gather_rows(at_antenna, self.antenna_of_edge.clone());
        let leakage = tape.sub(spread, b_edge);
        let m_edge = tape.concat_cols(&[b_edge, leakage]);
        let m_user = self.pool_users(tape, m_edge);
        (b_user, m_edge, m_user)
    }

    /// Round-0 state: given `b⁽⁰⁾`, uniform features, no user messages yet.
    pub fn init_state(&self, tape: &mut Tape<'_>, init: &InitialMessages, feature_dim: usize) -> Result<MessageState> {
        if (init.n, init.k) != (self.n, self.k) {
            return Err(Error::Shape(format!("initial messages are for N={}, K={}, graph has N={}, K={}", init.n, init.k, self.n, self.k)));
        }
        let m = init.msg_dim;
        let edges = self.n * self.k;
        let b_edge = tape.constant(init.values.clone(), edges, m);
        let (b_user, m_edge, m_user) = self.antenna_aggregates(tape, b_edge);
        let features = tape.constant(vec![self.power / self.k as f64; self.k * feature_dim], self.k, feature_dim);
        let c_edge = tape.constant(vec![0.0; edges * m], edges, m);
        let c_antenna = tape.constant(vec![0.0; self.n * m], self.n, m);
        Ok(MessageState { c_edge, c_antenna, b_edge, b_user, m_edge, m_user, features })
    }

    /// User vertices emit `c_ki` from their features, pooled antenna messages and the edge weight.
    pub fn user_message_step(&self, tape: &mut Tape<'_>, state: &MessageState, net: &BoundNet) -> MessageState {
        let shares = tape.scale(state.features, 1.0 / self.power);
        let s = tape.gather_rows(shares, self.user_of_edge.clone());
        let b = tape.gather_rows(state.b_user, self.user_of_edge.clone());
        let input = tape.concat_cols(&[s, b, self.h_edge]);
        let c_edge = net.forward(tape, input);
        let c_antenna = self.pool_antennas(tape, c_edge);
        MessageState { c_edge, c_antenna, ..*state }
    }

    /// Antenna vertices emit `b_ik` from the previous composite message, pooled user messages and the edge weight.
    pub fn antenna_message_step(&self, tape: &mut Tape<'_>, state: &MessageState, net: &BoundNet) -> MessageState {
        let c = tape.gather_rows(state.c_antenna, self.antenna_of_edge.clone());
        let input = tape.concat_cols(&[state.m_edge, c, self.h_edge]);
        let b_edge = net.forward(tape, input);
        let (b_user, m_edge, m_user) = self.antenna_aggregates(tape, b_edge);
        MessageState { b_edge, b_user, m_edge, m_user, ..*state }
    }

    /// Decision network output normalized so each feature column sums to P.
    pub fn decide_features(&self, tape: &mut Tape<'_>, state: &MessageState, net: &BoundNet) -> MessageState {
        let raw = net.forward(tape, state.m_user);
        let features = normalize_features(tape, raw, self.power);
        MessageState { features, ..*state }
    }

    /// One full round.
    pub fn round(&self, tape: &mut Tape<'_>, state: &MessageState, nets: &BoundParams) -> MessageState {
        let s = self.user_message_step(tape, state, &nets.c);
        let s = self.antenna_message_step(tape, &s, &nets.m);
        self.decide_features(tape, &s, &nets.d)
    }
}

/// Scales each column of positive raw outputs (K×f) to sum to `power`.
pub fn normalize_features(tape: &mut Tape<'_>, raw: Var, power: f64) -> Var {
    let totals = tape.col_sums(raw);
    let inv = tape.recip(totals);
    let shares = tape.mul_cols(raw, inv);
    tape.scale(shares, power)
}

/// Column `j` of a K×f feature node as a 1×K row.
fn feature_row(tape: &mut Tape<'_>, features: Var, j: usize) -> Var {
    let (k, f) = tape.shape(features);
    tape.gather(features, (0..k).map(|u| u * f + j).collect(), 1, k)
}

/// Runs `T` rounds and returns the feature node of every round.
pub fn rollout(tape: &mut Tape<'_>, graph: &GraphContext, nets: &BoundParams, init: &InitialMessages) -> Result<Vec<Var>> {
    let cfg = nets.config;
    if init.msg_dim != cfg.msg_dim {
        return Err(Error::Shape(format!("messages have length {}, network expects {}", init.msg_dim, cfg.msg_dim)));
    }
    let mut state = graph.init_state(tape, init, cfg.feature_dim())?;
    let mut out = Vec::with_capacity(cfg.iterations);
    for _ in 0..cfg.iterations {
        state = graph.round(tape, &state, nets);
        out.push(state.features);
    }
    Ok(out)
}

/// Utility of one round's features as a scalar tape node.
///
/// Sum rate recovers downlink beams directly. Minimum rate scores the dual
/// uplink, which needs no eigenproblem and is differentiable in `q`.
pub fn step_utility(tape: &mut Tape<'_>, ti: &TapeInstance, mode: Utility, features: Var) -> Result<Var> {
    match mode {
        Utility::SumRate => {
            let p = feature_row(tape, features, 0);
            let q = feature_row(tape, features, 1);
            let v = ti.recover_beams(tape, p, q)?;
            let r = ti.rates(tape, v);
            Ok(tape.sum(r))
        }
        Utility::MinRate => {
            let q = feature_row(tape, features, 0);
            let d = ti.directions(tape, q)?;
            let r = ti.ul_rates(tape, q, d);
            Ok(tape.min(r))
        }
    }
}

/// Weighted multi-step objective `Σ_t w_t U_t` for one instance.
pub fn objective_on_tape(
    tape: &mut Tape<'_>,
    nets: &BoundParams,
    inst: &BipartiteChannel,
    init: &InitialMessages,
    weights: &[f64],
) -> Result<Var> {
    let cfg = nets.config;
    if weights.len() != cfg.iterations {
        return Err(Error::Shape(format!("{} step weights for {} rounds", weights.len(), cfg.iterations)));
    }
    let graph = GraphContext::new(tape, inst);
    let ti = TapeInstance::new(tape, inst);
    let features = rollout(tape, &graph, nets, init)?;
    let mut terms = Vec::with_capacity(features.len());
    for (&f, &w) in features.iter().zip(weights) {
        let u = step_utility(tape, &ti, cfg.mode, f)?;
        terms.push(tape.scale(u, w));
    }
    let all = tape.concat_cols(&terms);
    let total = tape.sum(all);
    tape.check()?;
    Ok(total)
}

/// Objective value and its gradient with respect to the flattened parameters.
pub fn objective_and_grad(
    params: &BgnnParams,
    inst: &BipartiteChannel,
    init: &InitialMessages,
    weights: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let mut tape = Tape::new();
    let nets = params.bind(&mut tape, true);
    let obj = objective_on_tape(&mut tape, &nets, inst, init, weights)?;
    let grads = tape.backward(obj)?;
    let mut flat = vec![0.0; params.param_count()];
    nets.accumulate_grads(&grads, &mut flat);
    Ok((tape.scalar(obj), flat))
}

/// Objective value without gradients.
pub fn objective_value(params: &BgnnParams, inst: &BipartiteChannel, init: &InitialMessages, weights: &[f64]) -> Result<f64> {
    let mut tape = Tape::new();
    let nets = params.bind(&mut tape, false);
    let obj = objective_on_tape(&mut tape, &nets, inst, init, weights)?;
    Ok(tape.scalar(obj))
}

/// Per-round features and the beams they produce.
#[derive(Clone, Debug)]
pub struct Inference {
    pub features: Vec<BeamFeature>,
    pub solutions: Vec<BeamSolution>,
}

impl Inference {
    pub fn last(&self) -> &BeamSolution {
        self.solutions.last().expect("at least one round")
    }
}

/// Full inference: message passing, then beam recovery after every round.
///
/// Minimum-rate features are turned into beams through the eigenvalue
/// recovery, so reported rates are true downlink rates.
pub fn bmp_forward(params: &BgnnParams, inst: &BipartiteChannel, init: &InitialMessages) -> Result<Inference> {
    let cfg = params.config;
    if cfg.iterations == 0 {
        return Err(Error::Config("at least one message-passing round is required".into()));
    }
    let mut tape = Tape::new();
    let nets = params.bind(&mut tape, false);
    let graph = GraphContext::new(&mut tape, inst);
    let rounds = rollout(&mut tape, &graph, &nets, init)?;
    tape.check()?;
    let k = inst.k();
    let mut features = Vec::with_capacity(rounds.len());
    let mut solutions = Vec::with_capacity(rounds.len());
    for f in rounds {
        let vals = tape.value(f);
        let (feature, v) = match cfg.mode {
            Utility::SumRate => {
                let feature = BeamFeature { p: (0..k).map(|u| vals[2 * u]).collect(), q: (0..k).map(|u| vals[2 * u + 1]).collect() };
                let v = recover_beams(inst, &feature)?;
                (feature, v)
            }
            Utility::MinRate => {
                let q = vals.to_vec();
                let out = recover_minrate_beams(inst, &q)?;
                (BeamFeature { p: out.p, q }, out.v)
            }
        };
        solutions.push(BeamSolution::evaluate(inst, v, cfg.mode));
        features.push(feature);
    }
    Ok(Inference { features, solutions })
}
