//! Reverse-mode differentiation by operation recording.
//!
//! Every operation appends a node holding its output value and whatever
//! forward context its backward rule needs. [`Tape::backward`] walks the nodes
//! in reverse and accumulates gradients into every leaf that requested one.

use crate::error::{arg_err, shape_err, Result};
use crate::ops;
use crate::real::Real;
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding of `k / 2` on every side.
    Same,
    Valid,
}

pub(crate) enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `y = f(x)` with the pointwise derivative `f'(x)` saved.
    Pointwise {
        x: Var,
        deriv: Vec<T>,
    },
    /// `y = x + b` where `b` matches the trailing dimensions of `x`.
    AddTrailing {
        x: Var,
        b: Var,
    },
    /// `y[n,c,h,w] = x[n,c,h,w] * g[n,0,h,w]`.
    MulChannel {
        x: Var,
        g: Var,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
    },
    ConvTranspose2x2 {
        x: Var,
        w: Var,
        b: Var,
    },
    MaxPool2 {
        x: Var,
        argmax: Vec<usize>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    BatchMatMul {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    Softmax {
        x: Var,
        axis: usize,
    },
    Reshape {
        x: Var,
    },
    Permute {
        x: Var,
        perm: Vec<usize>,
    },
    Concat {
        xs: Vec<Var>,
        axis: usize,
    },
    MeanAxis {
        x: Var,
        axis: usize,
    },
    Sum {
        x: Var,
    },
    BceWithLogits {
        logits: Var,
        target: Vec<T>,
    },
    Focal {
        probs: Var,
        labels: Vec<usize>,
        weights: Vec<T>,
        gamma: T,
    },
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) => vec![*a, *b],
            Pointwise { x, .. }
            | MaxPool2 { x, .. }
            | Softmax { x, .. }
            | Reshape { x }
            | Permute { x, .. }
            | MeanAxis { x, .. }
            | Sum { x } => vec![*x],
            AddTrailing { x, b } => vec![*x, *b],
            MulChannel { x, g } => vec![*x, *g],
            Conv2d { x, w, b, .. } | ConvTranspose2x2 { x, w, b } | Linear { x, w, b } => {
                vec![*x, *w, *b]
            }
            BatchNorm { x, gamma, beta, .. } | LayerNorm { x, gamma, beta, .. } => {
                vec![*x, *gamma, *beta]
            }
            BatchMatMul { a, b, .. } => vec![*a, *b],
            Concat { xs, .. } => xs.clone(),
            BceWithLogits { logits, .. } => vec![*logits],
            Focal { probs, .. } => vec![*probs],
        }
    }
}

pub(crate) struct Node<T> {
    pub(crate) shape: Vec<usize>,
    pub(crate) value: Vec<T>,
    pub(crate) op: Op<T>,
    pub(crate) requires_grad: bool,
}

/// Gradient accumulator handed to backward rules.
pub(crate) struct GradSink<'a, T> {
    nodes: &'a [Node<T>],
    grads: &'a mut [Option<Vec<T>>],
}

impl<'a, T: Real> GradSink<'a, T> {
    pub(crate) fn node(&self, v: Var) -> &'a Node<T> {
        &self.nodes[v.0]
    }

    pub(crate) fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulation buffer for `v`, zero-initialised on first use.
    pub(crate) fn buf(&mut self, v: Var) -> &mut [T] {
        let len = self.nodes[v.0].value.len();
        self.grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
    }

    pub(crate) fn add(&mut self, v: Var, g: Vec<T>) {
        if !self.wants(v) {
            return;
        }
        match &mut self.grads[v.0] {
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += *b),
            slot @ None => *slot = Some(g),
        }
    }
}

/// Recording of one forward computation.
pub struct Tape<T: Real> {
    pub(crate) nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    kinks: u64,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            kinks: 0xcbf2_9ce4_8422_2325,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf. Gradients are only accumulated for leaves with
    /// `requires_grad` and for nodes downstream of them.
    pub fn leaf(&mut self, t: &Tensor<T>, requires_grad: bool) -> Var {
        self.push_node(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, t: &Tensor<T>) -> Var {
        self.leaf(t, false)
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.value.clone()).expect("node shape invariant")
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last [`backward`](Self::backward) loss w.r.t. a leaf.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Hash of every activation pattern and pooling choice recorded so far.
    ///
    /// Two evaluations of the same graph with equal signatures lie on the same
    /// piecewise-smooth branch, which is what finite-difference checks need.
    pub fn kink_signature(&self) -> u64 {
        self.kinks
    }

    pub(crate) fn note_kinks(&mut self, bits: impl Iterator<Item = u64>) {
        for b in bits {
            self.kinks ^= b.wrapping_add(0x9e37_79b9_7f4a_7c15);
            self.kinks = self.kinks.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    fn push_node(&mut self, shape: Vec<usize>, value: Vec<T>, op: Op<T>, leaf_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let requires_grad = match &op {
            Op::Leaf => leaf_grad,
            other => other.inputs().iter().any(|v| self.nodes[v.0].requires_grad),
        };
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn push(&mut self, shape: Vec<usize>, value: Vec<T>, op: Op<T>) -> Var {
        self.push_node(shape, value, op, false)
    }

    /// Populates gradients for every leaf reachable from `loss`.
    ///
    /// Intermediate gradients are released as soon as they have been
    /// propagated; only leaf gradients remain readable through [`grad`](Self::grad).
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if loss.0 >= self.nodes.len() {
            return arg_err("backward", "loss is not on this tape");
        }
        if self.nodes[loss.0].value.len() != 1 {
            return shape_err(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.nodes[loss.0].shape),
            );
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            let mut sink = GradSink {
                nodes: &self.nodes,
                grads: &mut self.grads,
            };
            ops::backward(node, &g, &mut sink);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(&Tensor::new([3], vec![1.0, -2.0, 5.0]).unwrap(), true);
        let s = tape.sum(x);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(&Tensor::new([2], vec![1.0, 2.0]).unwrap(), true);
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(&Tensor::zeros([2]), true);
        assert!(matches!(tape.backward(x), Err(crate::TensorError::Shape { .. })));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(&Tensor::new([2], vec![1.0, 2.0]).unwrap(), true);
        let c = tape.constant(&Tensor::new([2], vec![3.0, 4.0]).unwrap());
        let y = tape.mul(x, c).unwrap();
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[3.0, 4.0]);
        assert!(tape.grad(c).is_none());
    }

    #[test]
    fn shared_input_accumulates_once_per_use() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(&Tensor::new([1], vec![3.0]).unwrap(), true);
        let a = tape.add(x, x).unwrap();
        let b = tape.mul(a, x).unwrap();
        let s = tape.sum(b);
        tape.backward(s).unwrap();
        // d/dx (2x·x) = 4x
        assert_eq!(tape.grad(x).unwrap(), &[12.0]);
    }
}
