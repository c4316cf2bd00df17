use crate::error::{arg_err, shape_err, Result};
use crate::real::Real;
use crate::tape::{GradSink, Node, Op, Tape, Var};
use crate::Mode;

/// Per-channel statistics of the batch a training-mode batch norm saw.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Unbiased variance, used for the running estimate.
    pub var: Vec<T>,
}

pub struct BatchNormOutput<T> {
    pub y: Var,
    /// Present in training mode only.
    pub stats: Option<BatchStats<T>>,
}

/// `running = momentum·running + (1 - momentum)·batch`.
pub fn update_running_stats<T: Real>(
    running_mean: &mut [T],
    running_var: &mut [T],
    stats: &BatchStats<T>,
    momentum: T,
) {
    let keep = T::one() - momentum;
    for (r, &b) in running_mean.iter_mut().zip(&stats.mean) {
        *r = momentum * *r + keep * b;
    }
    for (r, &b) in running_var.iter_mut().zip(&stats.var) {
        *r = momentum * *r + keep * b;
    }
}

impl<T: Real> Tape<T> {
    /// Batch normalization over `N,H,W` of a `[N,C,H,W]` input.
    ///
    /// Training mode normalizes with the batch statistics and returns them so
    /// the caller can fold them into its running estimates; inference mode uses
    /// `running_mean` / `running_var`.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm2d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[T],
        running_var: &[T],
        mode: Mode,
        eps: T,
    ) -> Result<BatchNormOutput<T>> {
        const OP: &str = "batch_norm2d";
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 {
            return shape_err(OP, format!("input must be rank 4, got {xs:?}"));
        }
        let (n, c, hw) = (xs[0], xs[1], xs[2] * xs[3]);
        if n == 0 {
            return shape_err(OP, "empty batch");
        }
        for (what, v) in [("gamma", gamma), ("beta", beta)] {
            if self.shape(v) != [c] {
                return shape_err(OP, format!("{what} must be [{c}], got {:?}", self.shape(v)));
            }
        }
        if running_mean.len() != c || running_var.len() != c {
            return shape_err(OP, format!("running statistics must have {c} channels"));
        }
        if eps <= T::zero() {
            return arg_err(OP, "epsilon must be positive");
        }
        let xv = self.value(x);
        let m = n * hw;
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        match mode {
            Mode::Train => {
                for ci in 0..c {
                    let mut s = T::zero();
                    for ni in 0..n {
                        let off = (ni * c + ci) * hw;
                        s += xv[off..off + hw].iter().copied().sum::<T>();
                    }
                    let mu = s / T::lit(m as f64);
                    let mut ss = T::zero();
                    for ni in 0..n {
                        let off = (ni * c + ci) * hw;
                        ss += xv[off..off + hw].iter().map(|&v| (v - mu) * (v - mu)).sum::<T>();
                    }
                    mean[ci] = mu;
                    var[ci] = ss / T::lit(m as f64);
                }
            }
            Mode::Infer => {
                mean.copy_from_slice(running_mean);
                var.copy_from_slice(running_var);
            }
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let gv = self.value(gamma);
        let bv = self.value(beta);
        let mut xhat = vec![T::zero(); xv.len()];
        let mut out = vec![T::zero(); xv.len()];
        for ni in 0..n {
            for ci in 0..c {
                let off = (ni * c + ci) * hw;
                for p in off..off + hw {
                    let h = (xv[p] - mean[ci]) * inv_std[ci];
                    xhat[p] = h;
                    out[p] = gv[ci] * h + bv[ci];
                }
            }
        }
        let stats = (mode == Mode::Train).then(|| {
            let bessel = if m > 1 {
                T::lit(m as f64 / (m - 1) as f64)
            } else {
                T::one()
            };
            BatchStats {
                mean,
                var: var.iter().map(|&v| v * bessel).collect(),
            }
        });
        let y = self.push(
            xs,
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats: mode == Mode::Train,
            },
        );
        Ok(BatchNormOutput { y, stats })
    }

    /// Layer normalization over the last axis.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let d = *xs.last().expect("tensors have rank >= 1");
        for (what, v) in [("gamma", gamma), ("beta", beta)] {
            if self.shape(v) != [d] {
                return shape_err("layer_norm", format!("{what} must be [{d}], got {:?}", self.shape(v)));
            }
        }
        let xv = self.value(x);
        let gv = self.value(gamma);
        let bv = self.value(beta);
        let rows = xv.len() / d;
        let mut xhat = vec![T::zero(); xv.len()];
        let mut out = vec![T::zero(); xv.len()];
        let mut inv_std = Vec::with_capacity(rows);
        let df = T::lit(d as f64);
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mu = row.iter().copied().sum::<T>() / df;
            let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() / df;
            let is = T::one() / (var + eps).sqrt();
            inv_std.push(is);
            for j in 0..d {
                let h = (row[j] - mu) * is;
                xhat[r * d + j] = h;
                out[r * d + j] = gv[j] * h + bv[j];
            }
        }
        Ok(self.push(
            xs,
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        ))
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn batch_norm_backward<T: Real>(
    node: &Node<T>,
    x: Var,
    gamma: Var,
    beta: Var,
    xhat: &[T],
    inv_std: &[T],
    batch_stats: bool,
    g: &[T],
    sink: &mut GradSink<'_, T>,
) {
    let (n, c, hw) = (node.shape[0], node.shape[1], node.shape[2] * node.shape[3]);
    let mut sum_g = vec![T::zero(); c];
    let mut sum_gx = vec![T::zero(); c];
    for ni in 0..n {
        for ci in 0..c {
            let off = (ni * c + ci) * hw;
            for p in off..off + hw {
                sum_g[ci] += g[p];
                sum_gx[ci] += g[p] * xhat[p];
            }
        }
    }
    let gv = &sink.node(gamma).value;
    if sink.wants(x) {
        let m = T::lit((n * hw) as f64);
        let dx = sink.buf(x);
        for ni in 0..n {
            for ci in 0..c {
                let off = (ni * c + ci) * hw;
                let scale = gv[ci] * inv_std[ci];
                if batch_stats {
                    let k = scale / m;
                    for p in off..off + hw {
                        dx[p] += k * (m * g[p] - sum_g[ci] - xhat[p] * sum_gx[ci]);
                    }
                } else {
                    for p in off..off + hw {
                        dx[p] += scale * g[p];
                    }
                }
            }
        }
    }
    if sink.wants(gamma) {
        super::add_into(sink.buf(gamma), &sum_gx);
    }
    if sink.wants(beta) {
        super::add_into(sink.buf(beta), &sum_g);
    }
}

pub(crate) fn layer_norm_backward<T: Real>(
    x: Var,
    gamma: Var,
    beta: Var,
    xhat: &[T],
    inv_std: &[T],
    g: &[T],
    sink: &mut GradSink<'_, T>,
) {
    let gv = &sink.node(gamma).value;
    let d = gv.len();
    let rows = g.len() / d;
    if sink.wants(x) {
        let df = T::lit(d as f64);
        let dx = sink.buf(x);
        for r in 0..rows {
            let mut s = T::zero();
            let mut sx = T::zero();
            for j in 0..d {
                let dh = g[r * d + j] * gv[j];
                s += dh;
                sx += dh * xhat[r * d + j];
            }
            let k = inv_std[r] / df;
            for j in 0..d {
                let p = r * d + j;
                dx[p] += k * (df * g[p] * gv[j] - s - xhat[p] * sx);
            }
        }
    }
    if sink.wants(gamma) {
        let dg = sink.buf(gamma);
        for (p, (&gi, &h)) in g.iter().zip(xhat).enumerate() {
            dg[p % d] += gi * h;
        }
    }
    if sink.wants(beta) {
        let db = sink.buf(beta);
        for (p, &gi) in g.iter().enumerate() {
            db[p % d] += gi;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tensor;

    fn channel_moments(v: &[f64], n: usize, c: usize, hw: usize, ci: usize) -> (f64, f64) {
        let vals: Vec<f64> = (0..n)
            .flat_map(|ni| v[(ni * c + ci) * hw..(ni * c + ci + 1) * hw].to_vec())
            .collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / vals.len() as f64;
        (m, var)
    }

    #[test]
    fn train_mode_standardizes_each_channel() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(&Tensor::from_fn([2, 3, 4, 4], |i| ((i * 37) % 11) as f64 * 0.7 - 2.0));
        let gamma = tape.constant(&Tensor::full([3], 1.0));
        let beta = tape.constant(&Tensor::zeros([3]));
        let out = tape
            .batch_norm2d(x, gamma, beta, &[0.0; 3], &[1.0; 3], Mode::Train, 1e-5)
            .unwrap();
        for ci in 0..3 {
            let (m, v) = channel_moments(tape.value(out.y), 2, 3, 16, ci);
            assert!(m.abs() < 1e-5);
            assert!((v - 1.0).abs() < 1e-5, "var {v}");
        }
        assert!(out.stats.is_some());
    }

    #[test]
    fn affine_params_set_mean_and_std() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(&Tensor::from_fn([2, 2, 3, 3], |i| (i as f64).sin() * 3.0));
        let gamma = tape.constant(&Tensor::full([2], 2.0));
        let beta = tape.constant(&Tensor::full([2], 3.0));
        let out = tape
            .batch_norm2d(x, gamma, beta, &[0.0; 2], &[1.0; 2], Mode::Train, 1e-5)
            .unwrap();
        for ci in 0..2 {
            let (m, v) = channel_moments(tape.value(out.y), 2, 2, 9, ci);
            assert!((m - 3.0).abs() < 1e-5);
            assert!((v.sqrt() - 2.0).abs() < 1e-4);
        }
    }

    #[test]
    fn infer_mode_uses_running_stats() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(&Tensor::full([1, 1, 2, 2], 5.0));
        let gamma = tape.constant(&Tensor::full([1], 1.0));
        let beta = tape.constant(&Tensor::zeros([1]));
        let out = tape
            .batch_norm2d(x, gamma, beta, &[1.0], &[4.0 - 1e-5], Mode::Infer, 1e-5)
            .unwrap();
        for &v in tape.value(out.y) {
            assert!((v - 2.0).abs() < 1e-12);
        }
        assert!(out.stats.is_none());
    }

    #[test]
    fn running_update_uses_momentum() {
        let mut mean = vec![0.0f64];
        let mut var = vec![1.0f64];
        let stats = BatchStats {
            mean: vec![10.0],
            var: vec![3.0],
        };
        update_running_stats(&mut mean, &mut var, &stats, 0.9);
        assert!((mean[0] - 1.0).abs() < 1e-12);
        assert!((var[0] - 1.2).abs() < 1e-12);
    }
}
