mod conv;
mod elementwise;
mod linalg;
mod loss;
mod norm;
mod shape;

pub use elementwise::Activation;
pub use loss::PROB_CLAMP;
pub use norm::{update_running_stats, BatchNormOutput, BatchStats};

use crate::real::Real;
use crate::tape::{GradSink, Node, Op};

pub(crate) fn add_into<T: Real>(acc: &mut [T], g: &[T]) {
    acc.iter_mut().zip(g).for_each(|(a, b)| *a += *b);
}

/// Dispatches a node's backward rule.
pub(crate) fn backward<T: Real>(node: &Node<T>, g: &[T], sink: &mut GradSink<'_, T>) {
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            for v in [*a, *b] {
                if sink.wants(v) {
                    add_into(sink.buf(v), g);
                }
            }
        }
        Op::Sub(a, b) => {
            if sink.wants(*a) {
                add_into(sink.buf(*a), g);
            }
            if sink.wants(*b) {
                sink.buf(*b).iter_mut().zip(g).for_each(|(d, gi)| *d -= *gi);
            }
        }
        Op::Mul(a, b) => elementwise::mul_backward(*a, *b, g, sink),
        Op::Pointwise { x, deriv } => {
            if sink.wants(*x) {
                sink.buf(*x)
                    .iter_mut()
                    .zip(g.iter().zip(deriv))
                    .for_each(|(d, (gi, di))| *d += *gi * *di);
            }
        }
        Op::AddTrailing { x, b } => elementwise::add_trailing_backward(*x, *b, g, sink),
        Op::MulChannel { x, g: gate } => elementwise::mul_channel_backward(*x, *gate, g, sink),
        Op::Conv2d {
            x,
            w,
            b,
            stride,
            pad,
        } => conv::conv2d_backward(node, *x, *w, *b, *stride, *pad, g, sink),
        Op::ConvTranspose2x2 { x, w, b } => conv::conv_transpose_backward(*x, *w, *b, g, sink),
        Op::MaxPool2 { x, argmax } => {
            if sink.wants(*x) {
                let dx = sink.buf(*x);
                for (o, &i) in argmax.iter().enumerate() {
                    dx[i] += g[o];
                }
            }
        }
        Op::BatchNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            batch_stats,
        } => norm::batch_norm_backward(
            node,
            *x,
            *gamma,
            *beta,
            xhat,
            inv_std,
            *batch_stats,
            g,
            sink,
        ),
        Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
        } => norm::layer_norm_backward(*x, *gamma, *beta, xhat, inv_std, g, sink),
        Op::Linear { x, w, b } => linalg::linear_backward(*x, *w, *b, g, sink),
        Op::BatchMatMul { a, b, trans_b } => {
            linalg::batch_matmul_backward(node, *a, *b, *trans_b, g, sink)
        }
        Op::Softmax { x, axis } => shape::softmax_backward(node, *x, *axis, g, sink),
        Op::Reshape { x } => {
            if sink.wants(*x) {
                add_into(sink.buf(*x), g);
            }
        }
        Op::Permute { x, perm } => shape::permute_backward(node, *x, perm, g, sink),
        Op::Concat { xs, axis } => shape::concat_backward(xs, *axis, g, sink),
        Op::MeanAxis { x, axis } => shape::mean_axis_backward(*x, *axis, g, sink),
        Op::Sum { x } => {
            if sink.wants(*x) {
                let g0 = g[0];
                sink.buf(*x).iter_mut().for_each(|d| *d += g0);
            }
        }
        Op::BceWithLogits { logits, target } => loss::bce_backward(*logits, target, g[0], sink),
        Op::Focal {
            probs,
            labels,
            weights,
            gamma,
        } => loss::focal_backward(*probs, labels, weights, *gamma, g[0], sink),
    }
}
