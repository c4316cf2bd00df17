use crate::error::{shape_err, Result};
use crate::real::Real;
use crate::tape::{GradSink, Node, Op, Tape, Var};

fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Gathers `src` (laid out as `shape`) into the axis order `perm`.
fn permute_data<T: Copy>(src: &[T], shape: &[usize], perm: &[usize]) -> Vec<T> {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let rank = shape.len();
    let mut idx = vec![0usize; rank];
    let mut offset = 0usize;
    let mut out = Vec::with_capacity(src.len());
    for _ in 0..src.len() {
        out.push(src[offset]);
        for d in (0..rank).rev() {
            idx[d] += 1;
            offset += src_strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            offset -= src_strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    out
}

impl<T: Real> Tape<T> {
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(x).len() || shape.contains(&0) {
            return shape_err("reshape", format!("{:?} -> {shape:?}", self.shape(x)));
        }
        let value = self.value(x).to_vec();
        Ok(self.push(shape.to_vec(), value, Op::Reshape { x }))
    }

    /// Reorders axes so that output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true)) {
            return shape_err("permute", format!("{perm:?} is not a permutation of rank {}", shape.len()));
        }
        let value = permute_data(self.value(x), &shape, perm);
        let out_shape = perm.iter().map(|&p| shape[p]).collect();
        Ok(self.push(
            out_shape,
            value,
            Op::Permute {
                x,
                perm: perm.to_vec(),
            },
        ))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = xs.first() else {
            return shape_err("concat", "no inputs");
        };
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return shape_err("concat", format!("axis {axis} out of range for {base:?}"));
        }
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            if s.len() != base.len() || s.iter().enumerate().any(|(i, &d)| i != axis && d != base[i]) {
                return shape_err("concat", format!("{s:?} incompatible with {base:?} on axis {axis}"));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in xs {
                let chunk = self.shape(v)[axis] * inner;
                out.extend_from_slice(&self.value(v)[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        Ok(self.push(
            shape,
            out,
            Op::Concat {
                xs: xs.to_vec(),
                axis,
            },
        ))
    }

    /// Mean over one axis, which is removed from the shape.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || shape.len() < 2 {
            return shape_err("mean_axis", format!("axis {axis} for {shape:?}"));
        }
        let (outer, len, inner) = split_at_axis(&shape, axis);
        let xv = self.value(x);
        let scale = T::one() / T::lit(len as f64);
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for a in 0..len {
                let src = &xv[(o * len + a) * inner..(o * len + a + 1) * inner];
                out[o * inner..(o + 1) * inner]
                    .iter_mut()
                    .zip(src)
                    .for_each(|(d, &s)| *d += s);
            }
        }
        out.iter_mut().for_each(|v| *v *= scale);
        let mut out_shape = shape;
        out_shape.remove(axis);
        Ok(self.push(out_shape, out, Op::MeanAxis { x, axis }))
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return shape_err("softmax", format!("axis {axis} out of range for {shape:?}"));
        }
        let (outer, len, inner) = split_at_axis(&shape, axis);
        let xv = self.value(x);
        let mut out = vec![T::zero(); xv.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |a: usize| (o * len + a) * inner + i;
                let mut mx = T::neg_infinity();
                for a in 0..len {
                    mx = mx.max(xv[at(a)]);
                }
                let mut z = T::zero();
                for a in 0..len {
                    let e = (xv[at(a)] - mx).exp();
                    out[at(a)] = e;
                    z += e;
                }
                for a in 0..len {
                    out[at(a)] /= z;
                }
            }
        }
        Ok(self.push(shape, out, Op::Softmax { x, axis }))
    }
}

pub(crate) fn softmax_backward<T: Real>(
    node: &Node<T>,
    x: Var,
    axis: usize,
    g: &[T],
    sink: &mut GradSink<'_, T>,
) {
    if !sink.wants(x) {
        return;
    }
    let (outer, len, inner) = split_at_axis(&node.shape, axis);
    let y = &node.value;
    let dx = sink.buf(x);
    for o in 0..outer {
        for i in 0..inner {
            let at = |a: usize| (o * len + a) * inner + i;
            let dot: T = (0..len).map(|a| g[at(a)] * y[at(a)]).sum();
            for a in 0..len {
                dx[at(a)] += y[at(a)] * (g[at(a)] - dot);
            }
        }
    }
}

pub(crate) fn permute_backward<T: Real>(
    node: &Node<T>,
    x: Var,
    perm: &[usize],
    g: &[T],
    sink: &mut GradSink<'_, T>,
) {
    if !sink.wants(x) {
        return;
    }
    let mut inverse = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inverse[p] = i;
    }
    let back = permute_data(g, &node.shape, &inverse);
    super::add_into(sink.buf(x), &back);
}

pub(crate) fn concat_backward<T: Real>(xs: &[Var], axis: usize, g: &[T], sink: &mut GradSink<'_, T>) {
    let shape0 = &sink.node(xs[0]).shape;
    let outer: usize = shape0[..axis].iter().product();
    let inner: usize = shape0[axis + 1..].iter().product();
    let total: usize = xs.iter().map(|&v| sink.node(v).shape[axis]).sum();
    let mut start = 0;
    for &v in xs {
        let len = sink.node(v).shape[axis];
        if sink.wants(v) {
            let d = sink.buf(v);
            for o in 0..outer {
                let src = &g[(o * total + start) * inner..(o * total + start + len) * inner];
                super::add_into(&mut d[o * len * inner..(o + 1) * len * inner], src);
            }
        }
        start += len;
    }
}

pub(crate) fn mean_axis_backward<T: Real>(x: Var, axis: usize, g: &[T], sink: &mut GradSink<'_, T>) {
    if !sink.wants(x) {
        return;
    }
    let (outer, len, inner) = split_at_axis(&sink.node(x).shape, axis);
    let scale = T::one() / T::lit(len as f64);
    let dx = sink.buf(x);
    for o in 0..outer {
        for a in 0..len {
            let dst = &mut dx[(o * len + a) * inner..(o * len + a + 1) * inner];
            dst.iter_mut()
                .zip(&g[o * inner..(o + 1) * inner])
                .for_each(|(d, &gi)| *d += gi * scale);
        }
    }
}

#[cfg(test)]
mod tests {
    use crate::{Tape, Tensor};

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(&Tensor::zeros([3]));
        let y = tape.softmax(x, 0).unwrap();
        for &v in tape.value(y) {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_slices_sum_to_one_on_inner_axis() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(&Tensor::from_fn([2, 4, 3], |i| (i as f64 * 1.7).sin() * 5.0));
        let y = tape.softmax(x, 1).unwrap();
        let v = tape.value(y);
        for o in 0..2 {
            for i in 0..3 {
                let s: f64 = (0..4).map(|a| v[(o * 4 + a) * 3 + i]).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn softmax_rejects_bad_axis() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(&Tensor::zeros([2, 2]));
        assert!(tape.softmax(x, 2).is_err());
    }

    #[test]
    fn permute_transposes_matrix() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(&Tensor::new([2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap());
        let y = tape.permute(x, &[1, 0]).unwrap();
        assert_eq!(tape.shape(y), &[3, 2]);
        assert_eq!(tape.value(y), &[1., 4., 2., 5., 3., 6.]);
        assert!(tape.permute(x, &[0, 0]).is_err());
    }

    #[test]
    fn concat_along_channels() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(&Tensor::full([2, 1, 2], 1.0));
        let b = tape.constant(&Tensor::full([2, 2, 2], 2.0));
        let y = tape.concat(&[a, b], 1).unwrap();
        assert_eq!(tape.shape(y), &[2, 3, 2]);
        assert_eq!(tape.value(y), &[1., 1., 2., 2., 2., 2., 1., 1., 2., 2., 2., 2.]);
    }
}
