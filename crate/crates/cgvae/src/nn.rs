//! Small neural-network building blocks over the autodiff tensors.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{Tape, Tensor};
use crate::error::Result;

/// Anything that owns a flat collection of named parameter tensors.
///
/// Names are stable dotted paths ("fg.0.filter.hidden.w"), used to key
/// optimizer state and checkpoint entries.
pub trait Params: Clone {
    fn for_each(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor));
    fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor));

    /// All parameters as (name, tensor) pairs.
    fn named(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.for_each("", &mut |name, t| out.push((name.to_string(), t.clone())));
        out
    }

    /// Copy with every tensor registered as a leaf of `tape`.
    fn watched(&self, tape: &Tape) -> Self {
        let mut c = self.clone();
        c.for_each_mut("", &mut |_, t| *t = tape.watch(t));
        c
    }

    /// Copy with tensors replaced by `f(name, tensor)`.
    fn mapped(&self, f: &mut dyn FnMut(&str, &Tensor) -> Tensor) -> Self {
        let mut c = self.clone();
        c.for_each_mut("", &mut |name, t| *t = f(name, t));
        c
    }

    fn num_scalars(&self) -> usize {
        let mut n = 0;
        self.for_each("", &mut |_, t| n += t.len());
        n
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{}.{}", prefix, name)
    }
}

/// Dense affine layer `x·W + b` with `W: [fan_in, fan_out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: Tensor,
    pub b: Tensor,
}

impl Linear {
    pub fn init<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Self {
        Self::init_gain(rng, fan_in, fan_out, 1.0)
    }

    pub fn init_gain<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize, gain: f64) -> Self {
        let scale = gain / (fan_in as f64).sqrt();
        let w: Vec<f64> = (0..fan_in * fan_out)
            .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
            .collect();
        Linear {
            w: Tensor::new(w, &[fan_in, fan_out]).expect("linear weight shape"),
            b: Tensor::zeros(&[fan_out]),
        }
    }

    pub fn apply(&self, tape: &Tape, x: &Tensor) -> Result<Tensor> {
        let h = tape.matmul(x, &self.w)?;
        tape.add(&h, &self.b)
    }

    pub fn fan_in(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn fan_out(&self) -> usize {
        self.w.shape()[1]
    }
}

impl Params for Linear {
    fn for_each(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&join(prefix, "w"), &self.w);
        f(&join(prefix, "b"), &self.b);
    }

    fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&join(prefix, "w"), &mut self.w);
        f(&join(prefix, "b"), &mut self.b);
    }
}

/// Two-layer perceptron with a swish hidden layer and linear output.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub hidden: Linear,
    pub out: Linear,
}

impl Mlp {
    pub fn init<R: Rng>(rng: &mut R, fan_in: usize, width: usize, fan_out: usize) -> Self {
        Self::init_gain(rng, fan_in, width, fan_out, 1.0)
    }

    /// `gain` scales the output-layer weights only.
    pub fn init_gain<R: Rng>(
        rng: &mut R,
        fan_in: usize,
        width: usize,
        fan_out: usize,
        gain: f64,
    ) -> Self {
        Mlp {
            hidden: Linear::init(rng, fan_in, width),
            out: Linear::init_gain(rng, width, fan_out, gain),
        }
    }

    pub fn apply(&self, tape: &Tape, x: &Tensor) -> Result<Tensor> {
        let h = self.hidden.apply(tape, x)?;
        let a = tape.swish(&h)?;
        self.out.apply(tape, &a)
    }

    /// Zero the output layer so the whole network maps everything to 0
    /// (used to switch individual decoder filters off).
    pub fn zero_output(&mut self) {
        self.out.w = Tensor::zeros(self.out.w.shape());
        self.out.b = Tensor::zeros(self.out.b.shape());
    }
}

impl Params for Mlp {
    fn for_each(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.hidden.for_each(&join(prefix, "hidden"), f);
        self.out.for_each(&join(prefix, "out"), f);
    }

    fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.hidden.for_each_mut(&join(prefix, "hidden"), f);
        self.out.for_each_mut(&join(prefix, "out"), f);
    }
}

/// Square channel-mixing matrix initialized near identity.
pub fn init_mix<R: Rng>(rng: &mut R, f: usize) -> Tensor {
    let scale = 0.1 / (f as f64).sqrt();
    let mut data = vec![0.0; f * f];
    for i in 0..f {
        for j in 0..f {
            data[i * f + j] = rng.sample::<f64, _>(StandardNormal) * scale
                + if i == j { 1.0 } else { 0.0 };
        }
    }
    Tensor::new(data, &[f, f]).expect("mix matrix shape")
}
