//! Randomized finite-difference cases covering every primitive with a
//! backward rule. Each case draws its shapes and values from a seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
use crate::tape::{Padding, Tape, Var};
use crate::tensor::Tensor;
use crate::Mode;

pub type CaseFn = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + Send + Sync>;

/// A scalar function of some inputs, ready for [`grad_check`].
pub struct GradCase {
    pub name: String,
    pub inputs: Vec<Tensor<f64>>,
    pub f: CaseFn,
    pub opts: GradCheckOptions,
}

impl GradCase {
    pub fn new(name: impl Into<String>, inputs: Vec<Tensor<f64>>, f: CaseFn, seed: u64) -> Self {
        Self {
            name: name.into(),
            inputs,
            f,
            opts: GradCheckOptions {
                seed,
                ..GradCheckOptions::default()
            },
        }
    }

    pub fn run(&self) -> Result<GradCheckReport> {
        grad_check(&self.f, &self.inputs, &self.opts)
    }
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-scale..scale))
}

/// `Σ y ⊙ r` for a fixed random `r`, so that no output direction is
/// degenerate (plain sums of softmax or batch-norm outputs are constant).
pub fn weighted_sum(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let r = random_tensor(&mut rng, tape.shape(y), 1.0);
    let rv = tape.constant(&r);
    let prod = tape.mul(y, rv)?;
    Ok(tape.sum(prod))
}

/// One case per differentiable primitive plus a conv→bn→relu→pool→dense chain.
pub fn primitive_cases(seed: u64) -> Vec<GradCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = Vec::new();
    let s = seed;

    {
        let n = rng.gen_range(1..=2);
        let c = rng.gen_range(1..=3);
        let f = rng.gen_range(1..=3);
        let k = [1, 3, 5][rng.gen_range(0..3)];
        let h = rng.gen_range(k.max(3)..=6);
        let w = rng.gen_range(k.max(3)..=6);
        let stride = rng.gen_range(1..=2);
        let padding = if rng.gen_bool(0.5) { Padding::Same } else { Padding::Valid };
        let inputs = vec![
            random_tensor(&mut rng, &[n, c, h, w], 1.0),
            random_tensor(&mut rng, &[f, c, k, k], 0.5),
            random_tensor(&mut rng, &[f], 0.5),
        ];
        cases.push(GradCase::new(
            format!("conv2d k{k} s{stride} {padding:?}"),
            inputs,
            Box::new(move |t, v| {
                let y = t.conv2d(v[0], v[1], v[2], stride, padding)?;
                weighted_sum(t, y, s)
            }),
            s,
        ));
    }
    {
        let (n, c, f) = (rng.gen_range(1..=2), rng.gen_range(1..=3), rng.gen_range(1..=3));
        let (h, w) = (rng.gen_range(1..=4), rng.gen_range(1..=4));
        let inputs = vec![
            random_tensor(&mut rng, &[n, c, h, w], 1.0),
            random_tensor(&mut rng, &[c, f, 2, 2], 0.5),
            random_tensor(&mut rng, &[f], 0.5),
        ];
        cases.push(GradCase::new(
            "conv_transpose2d",
            inputs,
            Box::new(move |t, v| {
                let y = t.conv_transpose2d(v[0], v[1], v[2])?;
                weighted_sum(t, y, s)
            }),
            s,
        ));
    }
    {
        let shape = [1, rng.gen_range(1..=2), 2 * rng.gen_range(1..=3), 2 * rng.gen_range(1..=3)];
        let inputs = vec![random_tensor(&mut rng, &shape, 1.0)];
        cases.push(GradCase::new(
            "maxpool2d",
            inputs,
            Box::new(move |t, v| {
                let y = t.maxpool2d(v[0])?;
                weighted_sum(t, y, s)
            }),
            s,
        ));
    }
    for mode in [Mode::Train, Mode::Infer] {
        let c = rng.gen_range(1..=3);
        let shape = [rng.gen_range(1..=3), c, rng.gen_range(2..=4), rng.gen_range(2..=4)];
        let inputs = vec![
            random_tensor(&mut rng, &shape, 2.0),
            random_tensor(&mut rng, &[c], 1.5),
            random_tensor(&mut rng, &[c], 1.0),
        ];
        let rm: Vec<f64> = (0..c).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let rv: Vec<f64> = (0..c).map(|_| rng.gen_range(0.5..2.0)).collect();
        cases.push(GradCase::new(
            format!("batch_norm2d {mode:?}"),
            inputs,
            Box::new(move |t, v| {
                let out = t.batch_norm2d(v[0], v[1], v[2], &rm, &rv, mode, 1e-5)?;
                weighted_sum(t, out.y, s)
            }),
            s,
        ));
    }
    for (name, which) in [("relu", 0u8), ("sigmoid", 1), ("gelu", 2), ("softmax", 3)] {
        let shape = [rng.gen_range(1..=3), rng.gen_range(2..=5)];
        let axis = rng.gen_range(0..2);
        let inputs = vec![random_tensor(&mut rng, &shape, 3.0)];
        cases.push(GradCase::new(
            name,
            inputs,
            Box::new(move |t, v| {
                let y = match which {
                    0 => t.relu(v[0]),
                    1 => t.sigmoid(v[0]),
                    2 => t.gelu(v[0]),
                    _ => t.softmax(v[0], axis)?,
                };
                weighted_sum(t, y, s)
            }),
            s,
        ));
    }
    {
        let (rows, d, e) = (rng.gen_range(1..=4), rng.gen_range(1..=5), rng.gen_range(1..=5));
        let inputs = vec![
            random_tensor(&mut rng, &[rows, d], 1.0),
            random_tensor(&mut rng, &[d, e], 1.0),
            random_tensor(&mut rng, &[e], 1.0),
        ];
        cases.push(GradCase::new(
            "dense",
            inputs,
            Box::new(move |t, v| {
                let y = t.linear(v[0], v[1], v[2])?;
                weighted_sum(t, y, s)
            }),
            s,
        ));
    }
    {
        let shape = [rng.gen_range(1..=3), rng.gen_range(1..=3), rng.gen_range(2..=6)];
        let d = shape[2];
        let inputs = vec![
            random_tensor(&mut rng, &shape, 2.0),
            random_tensor(&mut rng, &[d], 1.5),
            random_tensor(&mut rng, &[d], 1.0),
        ];
        cases.push(GradCase::new(
            "layer_norm",
            inputs,
            Box::new(move |t, v| {
                let y = t.layer_norm(v[0], v[1], v[2], 1e-5)?;
                weighted_sum(t, y, s)
            }),
            s,
        ));
    }
    for trans_b in [false, true] {
        let (b, m, k, n) = (rng.gen_range(1..=3), rng.gen_range(1..=4), rng.gen_range(1..=4), rng.gen_range(1..=4));
        let bshape = if trans_b { [b, n, k] } else { [b, k, n] };
        let inputs = vec![
            random_tensor(&mut rng, &[b, m, k], 1.0),
            random_tensor(&mut rng, &bshape, 1.0),
        ];
        cases.push(GradCase::new(
            format!("batch_matmul trans_b={trans_b}"),
            inputs,
            Box::new(move |t, v| {
                let y = t.batch_matmul(v[0], v[1], trans_b)?;
                weighted_sum(t, y, s)
            }),
            s,
        ));
    }
    {
        let shape = [2, rng.gen_range(1..=3), rng.gen_range(1..=3), 2];
        let inputs = vec![random_tensor(&mut rng, &shape, 1.0)];
        cases.push(GradCase::new(
            "permute+reshape",
            inputs,
            Box::new(move |t, v| {
                let p = t.permute(v[0], &[2, 0, 3, 1])?;
                let n = t.value(p).len();
                let r = t.reshape(p, &[n])?;
                weighted_sum(t, r, s)
            }),
            s,
        ));
    }
    {
        let (n, h) = (rng.gen_range(1..=2), rng.gen_range(1..=3));
        let inputs = vec![
            random_tensor(&mut rng, &[n, 1, h, 2], 1.0),
            random_tensor(&mut rng, &[n, 2, h, 2], 1.0),
        ];
        cases.push(GradCase::new(
            "concat",
            inputs,
            Box::new(move |t, v| {
                let y = t.concat(&[v[0], v[1]], 1)?;
                weighted_sum(t, y, s)
            }),
            s,
        ));
    }
    {
        let shape = [rng.gen_range(1..=3), rng.gen_range(1..=4), rng.gen_range(1..=3)];
        let axis = rng.gen_range(0..3);
        let inputs = vec![random_tensor(&mut rng, &shape, 1.0)];
        cases.push(GradCase::new(
            "mean_axis",
            inputs,
            Box::new(move |t, v| {
                let y = t.mean_axis(v[0], axis)?;
                weighted_sum(t, y, s)
            }),
            s,
        ));
    }
    {
        let (t_len, d) = (rng.gen_range(1..=4), rng.gen_range(1..=4));
        let inputs = vec![
            random_tensor(&mut rng, &[2, t_len, d], 1.0),
            random_tensor(&mut rng, &[t_len, d], 1.0),
        ];
        cases.push(GradCase::new(
            "add_trailing",
            inputs,
            Box::new(move |t, v| {
                let y = t.add_trailing(v[0], v[1])?;
                weighted_sum(t, y, s)
            }),
            s,
        ));
    }
    {
        let (n, c, h, w) = (rng.gen_range(1..=2), rng.gen_range(1..=3), rng.gen_range(1..=3), rng.gen_range(1..=3));
        let inputs = vec![
            random_tensor(&mut rng, &[n, c, h, w], 1.0),
            random_tensor(&mut rng, &[n, 1, h, w], 1.0),
        ];
        cases.push(GradCase::new(
            "mul_channel",
            inputs,
            Box::new(move |t, v| {
                let y = t.mul_channel(v[0], v[1])?;
                weighted_sum(t, y, s)
            }),
            s,
        ));
    }
    {
        let shape = [rng.gen_range(1..=3), rng.gen_range(1..=4)];
        let inputs = vec![
            random_tensor(&mut rng, &shape, 1.0),
            random_tensor(&mut rng, &shape, 1.0),
        ];
        cases.push(GradCase::new(
            "add/sub/mul",
            inputs,
            Box::new(move |t, v| {
                let a = t.add(v[0], v[1])?;
                let b = t.sub(v[0], v[1])?;
                let y = t.mul(a, b)?;
                let y = t.scale(y, 0.7);
                weighted_sum(t, y, s)
            }),
            s,
        ));
    }
    {
        let inputs = vec![random_tensor(&mut rng, &[3, 5], 1.0)];
        cases.push(GradCase::new(
            "dropout",
            inputs,
            Box::new(move |t, v| {
                let y = t.dropout(v[0], 0.3, Mode::Train, s)?;
                weighted_sum(t, y, s)
            }),
            s,
        ));
    }
    {
        let n = rng.gen_range(1..=8);
        let inputs = vec![random_tensor(&mut rng, &[n], 4.0)];
        let target: Vec<f64> = (0..n).map(|_| f64::from(u8::from(rng.gen_bool(0.5)))).collect();
        cases.push(GradCase::new(
            "bce_with_logits",
            inputs,
            Box::new(move |t, v| t.bce_with_logits(v[0], &target)),
            s,
        ));
    }
    {
        let n = rng.gen_range(1..=5);
        let probs = Tensor::from_fn([n, 2], |_| rng.gen_range(0.05..0.95));
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        let weights = vec![rng.gen_range(0.5..2.0), rng.gen_range(0.5..2.0)];
        let gamma = [0.0, 0.5, 1.0, 2.0][rng.gen_range(0..4)];
        cases.push(GradCase::new(
            format!("focal_loss gamma={gamma}"),
            vec![probs],
            Box::new(move |t, v| t.focal_loss(v[0], &labels, &weights, gamma)),
            s,
        ));
    }
    {
        let (c, f, e) = (2, 3, 2);
        let inputs = vec![
            random_tensor(&mut rng, &[2, c, 4, 4], 1.0),
            random_tensor(&mut rng, &[f, c, 3, 3], 0.5),
            random_tensor(&mut rng, &[f], 0.2),
            random_tensor(&mut rng, &[f], 1.0),
            random_tensor(&mut rng, &[f], 0.5),
            random_tensor(&mut rng, &[f * 4, e], 0.5),
            random_tensor(&mut rng, &[e], 0.5),
        ];
        cases.push(GradCase::new(
            "conv>bn>relu>pool>dense",
            inputs,
            Box::new(move |t, v| {
                let y = t.conv2d(v[0], v[1], v[2], 1, Padding::Same)?;
                let y = t.batch_norm2d(y, v[3], v[4], &[0.0; 3], &[1.0; 3], Mode::Train, 1e-5)?.y;
                let y = t.relu(y);
                let y = t.maxpool2d(y)?;
                let y = t.reshape(y, &[2, f * 4])?;
                let y = t.linear(y, v[5], v[6])?;
                let y = t.sigmoid(y);
                weighted_sum(t, y, s)
            }),
            s,
        ));
    }
    cases
}
