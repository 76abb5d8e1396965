//! Fully-connected layers with hand-written backpropagation.
//!
//! Both the annotator head and the triage network are small ReLU MLPs; this
//! module holds the shared forward/backward machinery. Weight matrices are
//! stored row-major with shape `(out_dim, in_dim)`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Dense<T> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Dense {
            in_dim,
            out_dim,
            weights: vec![T::zero(); in_dim * out_dim],
            bias: vec![T::zero(); out_dim],
        }
    }

    /// He-normal weights, zero bias.
    pub fn he<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let std = (2.0 / in_dim.max(1) as f64).sqrt();
        let weights = (0..in_dim * out_dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                T::lit(z * std)
            })
            .collect();
        Dense {
            in_dim,
            out_dim,
            weights,
            bias: vec![T::zero(); out_dim],
        }
    }

    pub fn forward_into(&self, x: &[T], out: &mut Vec<T>) {
        debug_assert_eq!(x.len(), self.in_dim);
        out.clear();
        out.extend(self.weights.chunks_exact(self.in_dim).zip(&self.bias).map(
            |(row, &b)| row.iter().zip(x).fold(b, |acc, (&w, &xi)| acc + w * xi),
        ));
    }

    pub fn row(&self, o: usize) -> &[T] {
        &self.weights[o * self.in_dim..(o + 1) * self.in_dim]
    }
}

/// Activations recorded by a forward pass, consumed by [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct Trace<T> {
    /// `inputs[l]` is the input of layer `l` (after ReLU and dropout for `l > 0`).
    pub inputs: Vec<Vec<T>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Vec<T>>,
    /// Inverted-dropout multipliers of the hidden layers, when dropout was on.
    masks: Vec<Option<Vec<T>>>,
    pub output: Vec<T>,
}

impl<T> Trace<T> {
    /// Input of the output layer.
    pub fn last_layer_input(&self) -> &[T] {
        self.inputs.last().expect("network has at least one layer")
    }
}

/// Dropout applied to hidden activations during training.
pub struct Dropout<'a, R: ?Sized> {
    pub rate: f64,
    pub rng: &'a mut R,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Mlp<T> {
    pub layers: Vec<Dense<T>>,
}

/// Gradients with the same layout as an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads<T> {
    pub layers: Vec<(Vec<T>, Vec<T>)>,
}

impl<T: Scalar> Grads<T> {
    pub fn zeros_like(net: &Mlp<T>) -> Self {
        Grads {
            layers: net
                .layers
                .iter()
                .map(|l| (vec![T::zero(); l.weights.len()], vec![T::zero(); l.bias.len()]))
                .collect(),
        }
    }

    pub fn scale(&mut self, s: T) {
        for (w, b) in &mut self.layers {
            w.iter_mut().chain(b.iter_mut()).for_each(|g| *g = *g * s);
        }
    }

    pub fn flat(&self) -> Vec<T> {
        self.layers
            .iter()
            .flat_map(|(w, b)| w.iter().chain(b.iter()).copied())
            .collect()
    }
}

impl<T: Scalar> Mlp<T> {
    /// `dims = [input, hidden..., output]`; hidden layers He-initialised,
    /// output layer zero-initialised when `zero_output` is set.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], zero_output: bool, rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "an MLP needs input and output dims");
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|l| {
                if zero_output && l == n - 1 {
                    Dense::zeros(dims[l], dims[l + 1])
                } else {
                    Dense::he(dims[l], dims[l + 1], rng)
                }
            })
            .collect();
        Mlp { layers }
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Mlp {
            layers: dims.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.layers[0].in_dim];
        d.extend(self.layers.iter().map(|l| l.out_dim));
        d
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.out_dim).unwrap_or(0)
    }

    /// Inference forward pass (no dropout).
    pub fn forward(&self, x: &[T]) -> Vec<T> {
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            layer.forward_into(&cur, &mut next);
            if l < last {
                next.iter_mut().for_each(|v| *v = v.max(T::zero()));
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    pub fn forward_trace<R: Rng + ?Sized>(
        &self,
        x: &[T],
        mut dropout: Option<Dropout<'_, R>>,
    ) -> Trace<T> {
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(last);
        let mut masks = Vec::with_capacity(last);
        let mut cur = x.to_vec();
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            layer.forward_into(&cur, &mut out);
            inputs.push(std::mem::take(&mut cur));
            if l < last {
                let z = out.clone();
                let mut act: Vec<T> = z.iter().map(|v| v.max(T::zero())).collect();
                let mask = match dropout.as_mut() {
                    Some(d) if d.rate > 0.0 => {
                        let keep = T::lit(1.0 / (1.0 - d.rate));
                        let m: Vec<T> = act
                            .iter()
                            .map(|_| {
                                if d.rng.gen::<f64>() < d.rate {
                                    T::zero()
                                } else {
                                    keep
                                }
                            })
                            .collect();
                        act.iter_mut().zip(&m).for_each(|(a, &k)| *a = *a * k);
                        Some(m)
                    }
                    _ => None,
                };
                pre.push(z);
                masks.push(mask);
                cur = act;
            }
        }
        Trace {
            inputs,
            pre,
            masks,
            output: out,
        }
    }

    /// Accumulates into `grads` the gradient of a loss whose derivative with
    /// respect to the network output is `d_out`.
    pub fn backward(&self, trace: &Trace<T>, d_out: &[T], grads: &mut Grads<T>) {
        let mut delta = d_out.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input = &trace.inputs[l];
            let (gw, gb) = &mut grads.layers[l];
            for (o, &d) in delta.iter().enumerate() {
                if d == T::zero() {
                    continue;
                }
                gb[o] = gb[o] + d;
                let row = &mut gw[o * layer.in_dim..(o + 1) * layer.in_dim];
                row.iter_mut().zip(input).for_each(|(g, &xi)| *g = *g + d * xi);
            }
            if l == 0 {
                break;
            }
            let mut d_in = vec![T::zero(); layer.in_dim];
            for (o, &d) in delta.iter().enumerate() {
                if d == T::zero() {
                    continue;
                }
                d_in.iter_mut()
                    .zip(layer.row(o))
                    .for_each(|(di, &w)| *di = *di + w * d);
            }
            let z = &trace.pre[l - 1];
            if let Some(mask) = &trace.masks[l - 1] {
                d_in.iter_mut().zip(mask).for_each(|(di, &m)| *di = *di * m);
            }
            d_in.iter_mut().zip(z).for_each(|(di, &zi)| {
                if zi <= T::zero() {
                    *di = T::zero();
                }
            });
            delta = d_in;
        }
    }

    /// Plain gradient-descent step: `theta -= lr * grads`.
    pub fn descend(&mut self, grads: &Grads<T>, lr: T) {
        for (layer, (gw, gb)) in self.layers.iter_mut().zip(&grads.layers) {
            layer.weights.iter_mut().zip(gw).for_each(|(w, &g)| *w = *w - lr * g);
            layer.bias.iter_mut().zip(gb).for_each(|(b, &g)| *b = *b - lr * g);
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Flat parameter access in the same order as [`Grads::flat`].
    pub fn param_mut(&mut self, mut idx: usize) -> &mut T {
        for layer in &mut self.layers {
            if idx < layer.weights.len() {
                return &mut layer.weights[idx];
            }
            idx -= layer.weights.len();
            if idx < layer.bias.len() {
                return &mut layer.bias[idx];
            }
            idx -= layer.bias.len();
        }
        panic!("parameter index out of range");
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }
}

pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let m = logits.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let exps: Vec<T> = logits.iter().map(|&z| (z - m).exp()).collect();
    let s: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / s).collect()
}

pub fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}
