use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{arg_err, shape_err, Result};
use crate::real::Real;
use crate::tape::{GradSink, Op, Tape, Var};
use crate::Mode;

/// Activation functions available to the models.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    /// Softmax along the given axis.
    Softmax(usize),
    /// Tanh approximation of GELU.
    Gelu,
}

pub(crate) fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

fn gelu_parts<T: Real>(v: T) -> (T, T) {
    let c = T::lit((2.0 / std::f64::consts::PI).sqrt());
    let a = T::lit(0.044715);
    let half = T::lit(0.5);
    let inner = c * (v + a * v * v * v);
    let t = inner.tanh();
    let y = half * v * (T::one() + t);
    let dinner = c * (T::one() + T::lit(3.0) * a * v * v);
    let dy = half * (T::one() + t) + half * v * (T::one() - t * t) * dinner;
    (y, dy)
}

impl<T: Real> Tape<T> {
    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return shape_err(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Vec<T> {
        self.value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.zip_map(a, b, |x, y| x + y);
        Ok(self.push(self.shape(a).to_vec(), v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.zip_map(a, b, |x, y| x - y);
        Ok(self.push(self.shape(a).to_vec(), v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.zip_map(a, b, |x, y| x * y);
        Ok(self.push(self.shape(a).to_vec(), v, Op::Mul(a, b)))
    }

    /// Applies `f` element-wise; `df` is its derivative, evaluated at the input.
    pub fn pointwise(&mut self, x: Var, f: impl Fn(T) -> T, df: impl Fn(T) -> T) -> Var {
        let xs = self.value(x);
        let value = xs.iter().map(|&v| f(v)).collect();
        let deriv = xs.iter().map(|&v| df(v)).collect();
        self.push(self.shape(x).to_vec(), value, Op::Pointwise { x, deriv })
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        self.pointwise(x, |v| v * c, |_| c)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let words: Vec<u64> = self
            .value(x)
            .chunks(64)
            .map(|c| {
                c.iter()
                    .enumerate()
                    .fold(0u64, |acc, (i, &v)| acc | (u64::from(v > T::zero()) << i))
            })
            .collect();
        self.note_kinks(words.into_iter());
        self.pointwise(
            x,
            |v| if v > T::zero() { v } else { T::zero() },
            |v| if v > T::zero() { T::one() } else { T::zero() },
        )
    }

    /// Logistic function. Strictly inside (0, 1) for |x| below ~36 in f64
    /// (~16 in f32); beyond that it rounds to the bound.
    pub fn sigmoid(&mut self, x: Var) -> Var {
        let xs = self.value(x);
        let value: Vec<T> = xs.iter().map(|&v| sigmoid(v)).collect();
        let deriv = value.iter().map(|&y| y * (T::one() - y)).collect();
        self.push(self.shape(x).to_vec(), value, Op::Pointwise { x, deriv })
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let (value, deriv) = self.value(x).iter().map(|&v| gelu_parts(v)).unzip();
        self.push(self.shape(x).to_vec(), value, Op::Pointwise { x, deriv })
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        Ok(match kind {
            Activation::Relu => self.relu(x),
            Activation::Sigmoid => self.sigmoid(x),
            Activation::Gelu => self.gelu(x),
            Activation::Softmax(axis) => self.softmax(x, axis)?,
        })
    }

    /// `x + b` with `b` broadcast over the leading dimensions of `x`.
    pub fn add_trailing(&mut self, x: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x);
        let bs = self.shape(b);
        if bs.len() > xs.len() || xs[xs.len() - bs.len()..] != *bs {
            return shape_err("add_trailing", format!("{bs:?} is not a suffix of {xs:?}"));
        }
        let bv = self.value(b);
        let value = self
            .value(x)
            .iter()
            .enumerate()
            .map(|(i, &v)| v + bv[i % bv.len()])
            .collect();
        Ok(self.push(xs.to_vec(), value, Op::AddTrailing { x, b }))
    }

    /// Multiplies `[N,C,H,W]` features by a `[N,1,H,W]` map shared across channels.
    pub fn mul_channel(&mut self, x: Var, g: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let gs = self.shape(g);
        if xs.len() != 4 || gs.len() != 4 || gs[1] != 1 || gs[0] != xs[0] || gs[2..] != xs[2..] {
            return shape_err("mul_channel", format!("features {xs:?}, map {gs:?}"));
        }
        let (n, c, hw) = (xs[0], xs[1], xs[2] * xs[3]);
        let xv = self.value(x);
        let gv = self.value(g);
        let mut value = Vec::with_capacity(xv.len());
        for ni in 0..n {
            let gmap = &gv[ni * hw..(ni + 1) * hw];
            for ci in 0..c {
                let off = (ni * c + ci) * hw;
                value.extend(xv[off..off + hw].iter().zip(gmap).map(|(&a, &b)| a * b));
            }
        }
        Ok(self.push(xs, value, Op::MulChannel { x, g }))
    }

    /// Inverted dropout: survivors are scaled by `1 / (1 - rate)`.
    ///
    /// Identity in inference mode or at rate zero. The mask is a pure
    /// function of `seed`.
    pub fn dropout(&mut self, x: Var, rate: f64, mode: Mode, seed: u64) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return arg_err("dropout", format!("rate {rate} outside [0, 1)"));
        }
        if mode == Mode::Infer || rate == 0.0 {
            return Ok(x);
        }
        let keep = T::lit(1.0 / (1.0 - rate));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.value(x).len();
        let deriv: Vec<T> = (0..n)
            .map(|_| {
                if rng.gen::<f64>() < rate {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        let value = self
            .value(x)
            .iter()
            .zip(&deriv)
            .map(|(&v, &m)| v * m)
            .collect();
        Ok(self.push(self.shape(x).to_vec(), value, Op::Pointwise { x, deriv }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().copied().sum();
        self.push(vec![1], vec![s], Op::Sum { x })
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = T::lit(self.value(x).len() as f64);
        let s = self.sum(x);
        self.scale(s, T::one() / n)
    }
}

pub(crate) fn mul_backward<T: Real>(a: Var, b: Var, g: &[T], sink: &mut GradSink<'_, T>) {
    let av = &sink.node(a).value;
    let bv = &sink.node(b).value;
    if sink.wants(a) {
        let d = sink.buf(a);
        for i in 0..g.len() {
            d[i] += g[i] * bv[i];
        }
    }
    if sink.wants(b) {
        let d = sink.buf(b);
        for i in 0..g.len() {
            d[i] += g[i] * av[i];
        }
    }
}

pub(crate) fn add_trailing_backward<T: Real>(x: Var, b: Var, g: &[T], sink: &mut GradSink<'_, T>) {
    if sink.wants(x) {
        super::add_into(sink.buf(x), g);
    }
    if sink.wants(b) {
        let d = sink.buf(b);
        let len = d.len();
        for (i, &gi) in g.iter().enumerate() {
            d[i % len] += gi;
        }
    }
}

pub(crate) fn mul_channel_backward<T: Real>(
    x: Var,
    gate: Var,
    g: &[T],
    sink: &mut GradSink<'_, T>,
) {
    let shape = &sink.node(x).shape;
    let (n, c, hw) = (shape[0], shape[1], shape[2] * shape[3]);
    let xv = &sink.node(x).value;
    let gv = &sink.node(gate).value;
    if sink.wants(x) {
        let d = sink.buf(x);
        for ni in 0..n {
            for ci in 0..c {
                let off = (ni * c + ci) * hw;
                for p in 0..hw {
                    d[off + p] += g[off + p] * gv[ni * hw + p];
                }
            }
        }
    }
    if sink.wants(gate) {
        let d = sink.buf(gate);
        for ni in 0..n {
            for ci in 0..c {
                let off = (ni * c + ci) * hw;
                for p in 0..hw {
                    d[ni * hw + p] += g[off + p] * xv[off + p];
                }
            }
        }
    }
}
