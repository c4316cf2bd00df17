//! Parameter groups shared by both models and the forward-pass context that
//! threads the tape, bound parameters and mode through them.

use rand::Rng;
use tbd_tensor::{
    init, update_running_stats, BatchStats, Bound, Mode, Padding, ParamId, ParamStore, Real,
    Tape, Tensor, Var,
};

use crate::error::Result;

pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPS: f64 = 1e-5;
pub const LN_EPS: f64 = 1e-5;

/// SplitMix64 finalizer; derives independent per-site seeds from one seed.
pub fn mix_seed(seed: u64, site: u64) -> u64 {
    let mut z = seed ^ site.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Clone, Copy, Debug)]
pub struct ConvIds {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl ConvIds {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        k: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let fan_in = in_ch * k * k;
        Ok(Self {
            weight: store.add(
                format!("{name}.weight"),
                init::fan_in_uniform([out_ch, in_ch, k, k], fan_in, 2f64.sqrt(), rng),
                true,
            )?,
            bias: store.add(format!("{name}.bias"), Tensor::zeros([out_ch]), true)?,
        })
    }

    /// Transposed 2×2 kernel `[in, out, 2, 2]`.
    pub fn transposed<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            weight: store.add(
                format!("{name}.weight"),
                init::fan_in_uniform([in_ch, out_ch, 2, 2], in_ch, 1.0, rng),
                true,
            )?,
            bias: store.add(format!("{name}.bias"), Tensor::zeros([out_ch]), true)?,
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BatchNormIds {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNormIds {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, ch: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::full([ch], T::one()), true)?,
            beta: store.add(format!("{name}.beta"), Tensor::zeros([ch]), true)?,
            running_mean: store.add(format!("{name}.running_mean"), Tensor::zeros([ch]), false)?,
            running_var: store.add(format!("{name}.running_var"), Tensor::full([ch], T::one()), false)?,
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct DenseIds {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl DenseIds {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            weight: store.add(
                format!("{name}.weight"),
                init::fan_in_uniform([d_in, d_out], d_in, 1.0, rng),
                true,
            )?,
            bias: store.add(format!("{name}.bias"), Tensor::zeros([d_out]), true)?,
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LayerNormIds {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNormIds {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, d: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::full([d], T::one()), true)?,
            beta: store.add(format!("{name}.beta"), Tensor::zeros([d]), true)?,
        })
    }
}

/// Batch statistics a training-mode pass observed for one batch-norm layer.
#[derive(Clone, Debug)]
pub struct BnUpdate<T> {
    pub ids: BatchNormIds,
    pub stats: BatchStats<T>,
}

/// Applies batch statistics to the running estimates in `store`.
pub fn apply_bn_updates<T: Real>(store: &mut ParamStore<T>, updates: &[BnUpdate<T>]) {
    let momentum = T::lit(BN_MOMENTUM);
    for u in updates {
        let mut mean = store.value(u.ids.running_mean).to_vec();
        let mut var = store.value(u.ids.running_var).to_vec();
        update_running_stats(&mut mean, &mut var, &u.stats, momentum);
        store
            .get_mut(u.ids.running_mean)
            .tensor
            .data_mut()
            .copy_from_slice(&mean);
        store
            .get_mut(u.ids.running_var)
            .tensor
            .data_mut()
            .copy_from_slice(&var);
    }
}

/// One forward pass: the tape being recorded, the parameters bound to it,
/// and everything the layers need to know about the mode.
pub struct Pass<'a, T: Real> {
    pub tape: &'a mut Tape<T>,
    pub bound: &'a Bound,
    pub store: &'a ParamStore<T>,
    pub mode: Mode,
    pub seed: u64,
    pub bn_updates: Vec<BnUpdate<T>>,
    dropout_sites: u64,
}

impl<'a, T: Real> Pass<'a, T> {
    pub fn new(
        tape: &'a mut Tape<T>,
        bound: &'a Bound,
        store: &'a ParamStore<T>,
        mode: Mode,
        seed: u64,
    ) -> Self {
        Self {
            tape,
            bound,
            store,
            mode,
            seed,
            bn_updates: Vec::new(),
            dropout_sites: 0,
        }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.bound[id]
    }

    pub fn conv(&mut self, ids: ConvIds, x: Var) -> Result<Var> {
        Ok(self
            .tape
            .conv2d(x, self.bound[ids.weight], self.bound[ids.bias], 1, Padding::Same)?)
    }

    pub fn conv_transpose(&mut self, ids: ConvIds, x: Var) -> Result<Var> {
        Ok(self
            .tape
            .conv_transpose2d(x, self.bound[ids.weight], self.bound[ids.bias])?)
    }

    pub fn batch_norm(&mut self, ids: BatchNormIds, x: Var) -> Result<Var> {
        let out = self.tape.batch_norm2d(
            x,
            self.bound[ids.gamma],
            self.bound[ids.beta],
            self.store.value(ids.running_mean),
            self.store.value(ids.running_var),
            self.mode,
            T::lit(BN_EPS),
        )?;
        if let Some(stats) = out.stats {
            self.bn_updates.push(BnUpdate { ids, stats });
        }
        Ok(out.y)
    }

    pub fn dense(&mut self, ids: DenseIds, x: Var) -> Result<Var> {
        Ok(self
            .tape
            .linear(x, self.bound[ids.weight], self.bound[ids.bias])?)
    }

    pub fn layer_norm(&mut self, ids: LayerNormIds, x: Var) -> Result<Var> {
        Ok(self.tape.layer_norm(
            x,
            self.bound[ids.gamma],
            self.bound[ids.beta],
            T::lit(LN_EPS),
        )?)
    }

    /// Dropout whose mask seed depends on the pass seed and on how many
    /// dropout sites preceded it in this pass.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Result<Var> {
        self.dropout_sites += 1;
        let seed = mix_seed(self.seed, self.dropout_sites);
        Ok(self.tape.dropout(x, rate, self.mode, seed)?)
    }
}
