//! Reverse-mode differentiation over a linear record of operations.

use super::ops::{self, BnCache, CeCache, UpsampleMode};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        cache: BnCache<T>,
    },
    Relu(Var),
    Add(Var, Var),
    Scale(Var, T),
    MulSpatial {
        x: Var,
        gate: Var,
    },
    Concat {
        xs: Vec<Var>,
        widths: Vec<usize>,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    Upsample {
        x: Var,
        factor: usize,
        mode: UpsampleMode,
    },
    Sigmoid(Var),
    ChannelMean(Var),
    ChannelMax {
        x: Var,
        argmax: Vec<usize>,
    },
    CrossEntropy {
        logits: Var,
        cache: CeCache<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Records a forward computation so gradients can be replayed in reverse.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let y = ops::conv2d(self.value(x), self.value(w), b.map(|b| self.value(b)), stride, pad)?;
        Ok(self.push(y, Op::Conv2d { x, w, b, stride, pad }))
    }

    /// Batch norm with statistics of the current batch. Also returns the batch
    /// mean and biased variance so callers can maintain running estimates.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var) -> Result<(Var, Vec<T>, Vec<T>)> {
        let (mean, var) = ops::channel_stats(self.value(x))?;
        let (y, cache) = ops::batch_norm(self.value(x), self.value(gamma), self.value(beta), &mean, &var, true)?;
        Ok((self.push(y, Op::BatchNorm { x, gamma, beta, cache }), mean, var))
    }

    /// Batch norm with fixed statistics.
    pub fn batch_norm_eval(&mut self, x: Var, gamma: Var, beta: Var, mean: &[T], var: &[T]) -> Result<Var> {
        let c = self.value(x).channels();
        if mean.len() != c || var.len() != c {
            return Err(Error::shape(
                "batch_norm",
                format!("running stats sized {} for {c} channels", mean.len()),
            ));
        }
        let (y, cache) = ops::batch_norm(self.value(x), self.value(gamma), self.value(beta), mean, var, false)?;
        Ok(self.push(y, Op::BatchNorm { x, gamma, beta, cache }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = ops::relu(self.value(x));
        self.push(y, Op::Relu(x))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).add(self.value(b))?;
        Ok(self.push(y, Op::Add(a, b)))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let y = self.value(x).scale(s);
        self.push(y, Op::Scale(x, s))
    }

    pub fn mul_spatial(&mut self, x: Var, gate: Var) -> Result<Var> {
        let y = ops::mul_spatial(self.value(x), self.value(gate))?;
        Ok(self.push(y, Op::MulSpatial { x, gate }))
    }

    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let vals: Vec<&Tensor<T>> = xs.iter().map(|&v| self.value(v)).collect();
        let y = ops::concat_channels(&vals)?;
        let widths = vals.iter().map(|t| t.channels()).collect();
        Ok(self.push(
            y,
            Op::Concat {
                xs: xs.to_vec(),
                widths,
            },
        ))
    }

    pub fn max_pool(&mut self, x: Var, factor: usize) -> Result<Var> {
        let (y, argmax) = ops::max_pool(self.value(x), factor)?;
        Ok(self.push(y, Op::MaxPool { x, argmax }))
    }

    pub fn upsample(&mut self, x: Var, factor: usize, mode: UpsampleMode) -> Result<Var> {
        let y = ops::upsample(self.value(x), factor, mode)?;
        Ok(self.push(y, Op::Upsample { x, factor, mode }))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = ops::sigmoid(self.value(x));
        self.push(y, Op::Sigmoid(x))
    }

    pub fn channel_mean(&mut self, x: Var) -> Result<Var> {
        let y = ops::channel_mean(self.value(x))?;
        Ok(self.push(y, Op::ChannelMean(x)))
    }

    pub fn channel_max(&mut self, x: Var) -> Result<Var> {
        let (y, argmax) = ops::channel_max(self.value(x))?;
        Ok(self.push(y, Op::ChannelMax { x, argmax }))
    }

    /// Scalar weighted cross-entropy; see [`ops::weighted_cross_entropy`].
    pub fn cross_entropy(&mut self, logits: Var, labels: &[u8], class_weights: &[T], ignore: u8) -> Result<Var> {
        let (loss, cache) = ops::cross_entropy_forward(self.value(logits), labels, class_weights, ignore)?;
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy { logits, cache }))
    }

    /// Gradients of the sum of `root`'s elements with respect to every recorded value.
    pub fn backward(&self, root: Var) -> Gradients<T> {
        let seed = Tensor::full(self.value(root).shape(), T::one());
        self.backward_from(root, seed)
    }

    /// Vector-Jacobian product: gradients of `sum(seed * root)`.
    pub fn backward_from(&self, root: Var, seed: Tensor<T>) -> Gradients<T> {
        assert_eq!(seed.shape(), self.value(root).shape(), "seed gradient shape");
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(seed);

        fn acc<T: Scalar>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g).expect("gradient shape"),
                slot => *slot = Some(g),
            }
        }

        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::Conv2d { x, w, b, stride, pad } => {
                    let cg = ops::conv2d_backward(self.value(*x), self.value(*w), b.is_some(), *stride, *pad, &g)
                        .expect("conv2d shapes validated in forward");
                    acc(&mut grads, *x, cg.dx);
                    acc(&mut grads, *w, cg.dweight);
                    if let (Some(b), Some(db)) = (b, cg.dbias) {
                        acc(&mut grads, *b, db);
                    }
                }
                Op::BatchNorm { x, gamma, beta, cache } => {
                    let (dx, dg, db) = ops::batch_norm_backward(self.value(*gamma), cache, &g);
                    acc(&mut grads, *x, dx);
                    acc(&mut grads, *gamma, dg);
                    acc(&mut grads, *beta, db);
                }
                Op::Relu(x) => {
                    let xv = self.value(*x).data();
                    let mut d = g.clone();
                    for (dv, &v) in d.data_mut().iter_mut().zip(xv) {
                        if v <= T::zero() {
                            *dv = T::zero();
                        }
                    }
                    acc(&mut grads, *x, d);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::Scale(x, s) => acc(&mut grads, *x, g.scale(*s)),
                Op::MulSpatial { x, gate } => {
                    let xv = self.value(*x);
                    let gv = self.value(*gate);
                    let c = xv.channels();
                    let dx = ops::mul_spatial(&g, gv).expect("gate shape");
                    let dgate: Vec<T> = g
                        .data()
                        .chunks_exact(c)
                        .zip(xv.data().chunks_exact(c))
                        .map(|(gp, xp)| gp.iter().zip(xp).map(|(&a, &b)| a * b).sum())
                        .collect();
                    acc(&mut grads, *x, dx);
                    acc(
                        &mut grads,
                        *gate,
                        Tensor::new(gv.shape().to_vec(), dgate).expect("gate grad"),
                    );
                }
                Op::Concat { xs, widths } => {
                    for (v, part) in xs.iter().zip(ops::split_channels(&g, widths)) {
                        acc(&mut grads, *v, part);
                    }
                }
                Op::MaxPool { x, argmax } => {
                    let d = ops::max_pool_backward(self.value(*x).shape(), argmax, &g);
                    acc(&mut grads, *x, d);
                }
                Op::Upsample { x, factor, mode } => {
                    let d = ops::upsample_backward(self.value(*x).shape(), *factor, *mode, &g);
                    acc(&mut grads, *x, d);
                }
                Op::Sigmoid(x) => {
                    let s = &node.value;
                    let mut d = g.clone();
                    for (dv, &sv) in d.data_mut().iter_mut().zip(s.data()) {
                        *dv *= sv * (T::one() - sv);
                    }
                    acc(&mut grads, *x, d);
                }
                Op::ChannelMean(x) => {
                    let xv = self.value(*x);
                    let c = xv.channels();
                    let inv = T::one() / T::from_usize(c).unwrap();
                    let mut d = Vec::with_capacity(xv.len());
                    for &gv in g.data() {
                        d.extend(std::iter::repeat_n(gv * inv, c));
                    }
                    acc(&mut grads, *x, Tensor::new(xv.shape().to_vec(), d).expect("mean grad"));
                }
                Op::ChannelMax { x, argmax } => {
                    let xv = self.value(*x);
                    let c = xv.channels();
                    let mut d = Tensor::zeros(xv.shape());
                    for (p, (&a, &gv)) in argmax.iter().zip(g.data()).enumerate() {
                        d.data_mut()[p * c + a] = gv;
                    }
                    acc(&mut grads, *x, d);
                }
                Op::CrossEntropy { logits, cache } => {
                    let d = ops::cross_entropy_backward(self.value(*logits).shape(), cache, g.item());
                    acc(&mut grads, *logits, d);
                }
            }
        }
        Gradients { grads }
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient for leaf `v`, or `None` when `v` does not influence the root.
    /// Gradients of intermediate values are released during the sweep.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}
