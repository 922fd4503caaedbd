use rand::Rng;

use super::{Gradients, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn code(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Tanh => 2,
            Activation::Sigmoid => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => Activation::Identity,
            1 => Activation::Relu,
            2 => Activation::Tanh,
            3 => Activation::Sigmoid,
            _ => return None,
        })
    }

    fn apply(self, tape: &mut Tape<'_>, x: Var) -> Var {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Tanh => tape.tanh(x),
            Activation::Sigmoid => tape.sigmoid(x),
            Activation::Identity => x,
        }
    }
}

/// One fully connected layer, `y = act(x·W + b)` with `W` stored n_in×n_out row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub act: Activation,
}

impl Dense {
    pub fn zeros(n_in: usize, n_out: usize, act: Activation) -> Self {
        Self { n_in, n_out, weights: vec![0.0; n_in * n_out], bias: vec![0.0; n_out], act }
    }

    /// Weights uniform on ±√(6/(n_in+n_out)), zero bias.
    pub fn init<R: Rng + ?Sized>(n_in: usize, n_out: usize, act: Activation, rng: &mut R) -> Self {
        let limit = (6.0 / (n_in + n_out) as f64).sqrt();
        let weights = (0..n_in * n_out).map(|_| rng.random_range(-limit..=limit)).collect();
        Self { n_in, n_out, weights, bias: vec![0.0; n_out], act }
    }

    pub fn param_count(&self) -> usize {
        self.n_in * self.n_out + self.n_out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseNet {
    layers: Vec<Dense>,
}

impl DenseNet {
    pub fn new(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("network has no layers".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weights.len() != l.n_in * l.n_out || l.bias.len() != l.n_out {
                return Err(Error::Shape(format!("layer {i}: buffers do not match {}x{}", l.n_in, l.n_out)));
            }
        }
        for (i, w) in layers.windows(2).enumerate() {
            if w[0].n_out != w[1].n_in {
                return Err(Error::Shape(format!("layer {i} emits {} values but layer {} expects {}", w[0].n_out, i + 1, w[1].n_in)));
            }
        }
        Ok(Self { layers })
    }

    /// `dims` lists widths from input to output; hidden layers use `hidden`, the last uses `output`.
    pub fn init<R: Rng + ?Sized>(dims: &[usize], hidden: Activation, output: Activation, rng: &mut R) -> Self {
        Self::build(dims, hidden, output, |i, o, a| Dense::init(i, o, a, rng))
    }

    pub fn zeros(dims: &[usize], hidden: Activation, output: Activation) -> Self {
        Self::build(dims, hidden, output, Dense::zeros)
    }

    fn build(dims: &[usize], hidden: Activation, output: Activation, mut make: impl FnMut(usize, usize, Activation) -> Dense) -> Self {
        assert!(dims.len() >= 2, "a network needs at least input and output widths");
        let last = dims.len() - 2;
        let layers = dims.windows(2).enumerate().map(|(i, w)| make(w[0], w[1], if i == last { output } else { hidden })).collect();
        Self { layers }
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].n_out
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    /// Parameters in layer order, weights before bias.
    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
    }

    /// Inverse of [`flatten_into`](Self::flatten_into); returns the number of values consumed.
    pub fn load_flat(&mut self, flat: &[f64]) -> Result<usize> {
        let need = self.param_count();
        if flat.len() < need {
            return Err(Error::Shape(format!("need {need} parameters, got {}", flat.len())));
        }
        let mut at = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&flat[at..at + nw]);
            at += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[at..at + nb]);
            at += nb;
        }
        Ok(at)
    }

    /// Registers the parameters on `tape`, as differentiable leaves when `trainable`.
    pub fn bind<'p>(&'p self, tape: &mut Tape<'p>, trainable: bool) -> BoundNet {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let (w, b) = if trainable {
                    (tape.param(&l.weights, l.n_in, l.n_out), tape.param(&l.bias, 1, l.n_out))
                } else {
                    (tape.constant_ref(&l.weights, l.n_in, l.n_out), tape.constant_ref(&l.bias, 1, l.n_out))
                };
                (w, b, l.act)
            })
            .collect();
        BoundNet { layers, n_in: self.input_dim() }
    }
}

/// A [`DenseNet`] whose parameters live on a tape.
#[derive(Clone, Debug)]
pub struct BoundNet {
    layers: Vec<(Var, Var, Activation)>,
    n_in: usize,
}

impl BoundNet {
    /// Applies the network to every row of `x`.
    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Var {
        assert_eq!(tape.shape(x).1, self.n_in, "network input width");
        self.layers.iter().fold(x, |h, &(w, b, act)| {
            let z = tape.affine(h, w, b);
            act.apply(tape, z)
        })
    }

    /// Adds the parameter gradients into `out`, in [`DenseNet::flatten_into`] order.
    pub fn accumulate_grads(&self, grads: &Gradients, out: &mut [f64]) -> usize {
        let mut at = 0;
        for &(w, b, _) in &self.layers {
            for v in [w, b] {
                let n = grads.wrt(v).len();
                grads.accumulate_into(v, &mut out[at..at + n]);
                at += n;
            }
        }
        at
    }
}

/// Evaluates `net` on each row of `input` without recording gradients.
pub fn forward_dense(net: &DenseNet, input: &Tensor) -> Result<Tensor> {
    if input.cols != net.input_dim() {
        return Err(Error::Shape(format!("network expects {} inputs, got {}", net.input_dim(), input.cols)));
    }
    let mut tape = Tape::new();
    let x = tape.constant_ref(&input.data, input.rows, input.cols);
    let y = net.bind(&mut tape, false).forward(&mut tape, x);
    tape.check()?;
    Ok(tape.tensor(y))
}
