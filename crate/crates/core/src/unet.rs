//! Attention residual U-Net: residual encoder/decoder blocks, additive
//! attention gates on the skip connections and a sigmoid 1×1 head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tbd_tensor::{Bound, Mode, ParamStore, Real, Tape, Var};

use crate::error::{contract, Error, Result};
use crate::layers::{apply_bn_updates, BatchNormIds, BnUpdate, ConvIds, Pass};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UNetConfig {
    pub in_channels: usize,
    pub base_channels: usize,
    /// Number of down/up-sampling levels.
    pub depth: usize,
    pub dropout_rate: f64,
    pub patch_side: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            base_channels: 16,
            depth: 3,
            dropout_rate: 0.1,
            patch_side: 64,
        }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.base_channels == 0 || self.depth == 0 {
            return Err(Error::Config(
                "unet in_channels, base_channels and depth must be at least 1".into(),
            ));
        }
        if self.patch_side == 0 || !self.patch_side.is_multiple_of(1 << self.depth) {
            return Err(Error::Config(format!(
                "unet patch_side {} is not divisible by 2^depth = {}",
                self.patch_side,
                1usize << self.depth
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "unet dropout_rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    /// Feature width at encoder level `level`; `level == depth` is the bottleneck.
    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }
}

/// Two 3×3 conv + batch-norm stages with a shortcut that is the identity, or
/// a 1×1 projection when the channel count changes.
#[derive(Clone, Copy, Debug)]
pub struct ResidualBlock {
    pub conv1: ConvIds,
    pub bn1: BatchNormIds,
    pub conv2: ConvIds,
    pub bn2: BatchNormIds,
    pub projection: Option<ConvIds>,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl ResidualBlock {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let conv1 = ConvIds::new(store, &format!("{name}.conv1"), in_channels, out_channels, 3, rng)?;
        let bn1 = BatchNormIds::new(store, &format!("{name}.bn1"), out_channels)?;
        let conv2 = ConvIds::new(store, &format!("{name}.conv2"), out_channels, out_channels, 3, rng)?;
        let bn2 = BatchNormIds::new(store, &format!("{name}.bn2"), out_channels)?;
        let projection = if in_channels != out_channels {
            Some(ConvIds::new(store, &format!("{name}.proj"), in_channels, out_channels, 1, rng)?)
        } else {
            None
        };
        Ok(Self {
            conv1,
            bn1,
            conv2,
            bn2,
            projection,
            in_channels,
            out_channels,
        })
    }

    /// `ReLU(BN(conv(ReLU(BN(conv(x))))) + shortcut(x))`.
    pub fn forward<T: Real>(&self, pass: &mut Pass<'_, T>, x: Var) -> Result<Var> {
        let shape = pass.tape.shape(x);
        if shape.len() != 4 || shape[1] != self.in_channels {
            return contract(
                "residual_block_forward",
                format!(
                    "expected [N,{},H,W] input, got {:?}",
                    self.in_channels, shape
                ),
            );
        }
        let h = pass.conv(self.conv1, x)?;
        let h = pass.batch_norm(self.bn1, h)?;
        let h = pass.tape.relu(h);
        let h = pass.conv(self.conv2, h)?;
        let h = pass.batch_norm(self.bn2, h)?;
        let shortcut = match self.projection {
            Some(p) => pass.conv(p, x)?,
            None => x,
        };
        let sum = pass.tape.add(h, shortcut)?;
        Ok(pass.tape.relu(sum))
    }
}

/// Additive attention over a skip connection.
#[derive(Clone, Copy, Debug)]
pub struct AttentionGate {
    pub w_g: ConvIds,
    pub w_x: ConvIds,
    pub psi: ConvIds,
    pub inter_channels: usize,
}

impl AttentionGate {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        skip_channels: usize,
        gate_channels: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let inter_channels = (skip_channels / 2).max(1);
        Ok(Self {
            w_g: ConvIds::new(store, &format!("{name}.w_g"), gate_channels, inter_channels, 1, rng)?,
            w_x: ConvIds::new(store, &format!("{name}.w_x"), skip_channels, inter_channels, 1, rng)?,
            psi: ConvIds::new(store, &format!("{name}.psi"), inter_channels, 1, 1, rng)?,
            inter_channels,
        })
    }

    /// Returns `(skip ⊙ alpha, alpha)` where
    /// `alpha = sigmoid(psi(ReLU(W_g·gate + W_x·skip)))` has one channel.
    pub fn forward<T: Real>(
        &self,
        pass: &mut Pass<'_, T>,
        skip: Var,
        gate: Var,
    ) -> Result<(Var, Var)> {
        let (ss, gs) = (pass.tape.shape(skip).to_vec(), pass.tape.shape(gate).to_vec());
        if ss.len() != 4 || gs.len() != 4 || ss[0] != gs[0] || ss[2..] != gs[2..] {
            return contract(
                "attention_gate_forward",
                format!("skip {ss:?} and gate {gs:?} are not spatially aligned"),
            );
        }
        let g = pass.conv(self.w_g, gate)?;
        let x = pass.conv(self.w_x, skip)?;
        let sum = pass.tape.add(g, x)?;
        let act = pass.tape.relu(sum);
        let logits = pass.conv(self.psi, act)?;
        let alpha = pass.tape.sigmoid(logits);
        let gated = pass.tape.mul_channel(skip, alpha)?;
        Ok((gated, alpha))
    }
}

/// Result of a forward pass.
pub struct UNetOutput<T> {
    /// Pre-sigmoid logits `[N,1,S,S]`.
    pub logits: Var,
    /// Attention maps `[N,1,H_i,W_i]`, shallowest level first.
    pub alphas: Vec<Var>,
    /// Batch statistics to fold into running estimates after a training step.
    pub bn_updates: Vec<BnUpdate<T>>,
}

#[derive(Clone, Debug)]
pub struct UNet<T: Real> {
    config: UNetConfig,
    params: ParamStore<T>,
    encoder: Vec<ResidualBlock>,
    bottleneck: ResidualBlock,
    /// Indexed by level; `up[i]` maps level `i+1` features to level `i`.
    up: Vec<ConvIds>,
    gates: Vec<AttentionGate>,
    decoder: Vec<ResidualBlock>,
    head: ConvIds,
}

impl<T: Real> UNet<T> {
    /// Builds a model with seeded fan-in-uniform initialisation.
    pub fn new(config: UNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let depth = config.depth;
        let mut encoder = Vec::with_capacity(depth);
        for level in 0..depth {
            let c_in = if level == 0 {
                config.in_channels
            } else {
                config.channels(level - 1)
            };
            encoder.push(ResidualBlock::new(
                &mut params,
                &format!("enc{level}"),
                c_in,
                config.channels(level),
                &mut rng,
            )?);
        }
        let bottleneck = ResidualBlock::new(
            &mut params,
            "bottleneck",
            config.channels(depth - 1),
            config.channels(depth),
            &mut rng,
        )?;
        let (mut up, mut gates, mut decoder) = (Vec::new(), Vec::new(), Vec::new());
        for level in 0..depth {
            let c = config.channels(level);
            up.push(ConvIds::transposed(
                &mut params,
                &format!("up{level}"),
                config.channels(level + 1),
                c,
                &mut rng,
            )?);
            gates.push(AttentionGate::new(&mut params, &format!("att{level}"), c, c, &mut rng)?);
            decoder.push(ResidualBlock::new(
                &mut params,
                &format!("dec{level}"),
                2 * c,
                c,
                &mut rng,
            )?);
        }
        let head = ConvIds::new(&mut params, "head", config.channels(0), 1, 1, &mut rng)?;
        Ok(Self {
            config,
            params,
            encoder,
            bottleneck,
            up,
            gates,
            decoder,
            head,
        })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn apply_bn_updates(&mut self, updates: &[BnUpdate<T>]) {
        apply_bn_updates(&mut self.params, updates);
    }

    /// Same architecture with parameters converted to another precision.
    pub fn cast<U: Real>(&self) -> UNet<U> {
        UNet {
            config: self.config.clone(),
            params: self.params.cast(),
            encoder: self.encoder.clone(),
            bottleneck: self.bottleneck,
            up: self.up.clone(),
            gates: self.gates.clone(),
            decoder: self.decoder.clone(),
            head: self.head,
        }
    }

    /// Forward to logits. `x` is `[N, in_channels, S, S]` with `S` divisible
    /// by `2^depth`; `bound` must come from `self.params().attach(tape, ..)`.
    pub fn forward_logits(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        x: Var,
        mode: Mode,
        seed: u64,
    ) -> Result<UNetOutput<T>> {
        let shape = tape.shape(x).to_vec();
        let cells = 1usize << self.config.depth;
        if shape.len() != 4
            || shape[1] != self.config.in_channels
            || !shape[2].is_multiple_of(cells)
            || !shape[3].is_multiple_of(cells)
        {
            return contract(
                "unet_forward",
                format!(
                    "input {shape:?} must be [N,{},S,S] with S divisible by {cells}",
                    self.config.in_channels
                ),
            );
        }
        let rate = self.config.dropout_rate;
        let mut pass = Pass::new(tape, bound, &self.params, mode, seed);
        let mut skips = Vec::with_capacity(self.config.depth);
        let mut h = x;
        for block in &self.encoder {
            let s = block.forward(&mut pass, h)?;
            skips.push(s);
            h = pass.tape.maxpool2d(s)?;
        }
        h = self.bottleneck.forward(&mut pass, h)?;
        h = pass.dropout(h, rate)?;
        let mut alphas = Vec::with_capacity(self.config.depth);
        for level in (0..self.config.depth).rev() {
            let up = pass.conv_transpose(self.up[level], h)?;
            let (gated, alpha) = self.gates[level].forward(&mut pass, skips[level], up)?;
            alphas.push(alpha);
            let cat = pass.tape.concat(&[gated, up], 1)?;
            let cat = pass.dropout(cat, rate)?;
            h = self.decoder[level].forward(&mut pass, cat)?;
        }
        alphas.reverse();
        let logits = pass.conv(self.head, h)?;
        Ok(UNetOutput {
            logits,
            alphas,
            bn_updates: pass.bn_updates,
        })
    }

    /// Forward to per-pixel probabilities `[N,1,S,S]`.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        x: Var,
        mode: Mode,
        seed: u64,
    ) -> Result<Var> {
        let out = self.forward_logits(tape, bound, x, mode, seed)?;
        Ok(tape.sigmoid(out.logits))
    }

    /// Inference convenience: probabilities for a `[N,C,S,S]` batch given as
    /// a flat row-major buffer.
    pub fn predict(&self, batch: tbd_tensor::Tensor<T>) -> Result<Vec<T>> {
        let mut tape = Tape::new();
        let bound = self.params.attach(&mut tape, false);
        let x = tape.constant(&batch);
        let y = self.forward(&mut tape, &bound, x, Mode::Infer, 0)?;
        Ok(tape.value(y).to_vec())
    }
}
