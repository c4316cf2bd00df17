//! Compact vision transformer that classifies ROI crops as bacilli or not:
//! patch embedding, learned positional embeddings, pre-norm encoder blocks,
//! mean pooling and a two-way softmax head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tbd_tensor::{init, Bound, Mode, ParamId, ParamStore, Real, Tape, Tensor, Var};

use crate::error::{contract, Error, Result};
use crate::layers::{DenseIds, LayerNormIds, Pass};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ViTConfig {
    pub roi_side: usize,
    pub vit_patch: usize,
    pub embed_dim: usize,
    pub num_heads: usize,
    pub num_layers: usize,
    pub mlp_dim: usize,
    pub dropout_rate: f64,
    pub num_classes: usize,
}

impl Default for ViTConfig {
    fn default() -> Self {
        Self {
            roi_side: 32,
            vit_patch: 8,
            embed_dim: 64,
            num_heads: 4,
            num_layers: 4,
            mlp_dim: 128,
            dropout_rate: 0.1,
            num_classes: 2,
        }
    }
}

impl ViTConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.vit_patch == 0 || self.roi_side == 0 || !self.roi_side.is_multiple_of(self.vit_patch) {
            return bad(format!(
                "vit roi_side {} is not divisible by vit_patch {}",
                self.roi_side, self.vit_patch
            ));
        }
        if self.num_heads == 0 || self.embed_dim == 0 || !self.embed_dim.is_multiple_of(self.num_heads) {
            return bad(format!(
                "vit embed_dim {} is not divisible by num_heads {}",
                self.embed_dim, self.num_heads
            ));
        }
        if self.mlp_dim == 0 || self.num_classes < 2 {
            return bad("vit mlp_dim must be ≥ 1 and num_classes ≥ 2".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("vit dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        Ok(())
    }

    pub fn grid(&self) -> usize {
        self.roi_side / self.vit_patch
    }

    pub fn num_tokens(&self) -> usize {
        self.grid() * self.grid()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FocalLossConfig {
    pub gamma: f64,
    /// Per-class weights; `None` derives them from the training label counts.
    pub class_weights: Option<Vec<f64>>,
}

impl Default for FocalLossConfig {
    fn default() -> Self {
        Self {
            gamma: 2.0,
            class_weights: None,
        }
    }
}

/// Inverse-frequency weights `total / (K · count_c)`; balanced counts give
/// all ones. An empty class is treated as having one sample.
pub fn adaptive_class_weights(counts: &[usize]) -> Vec<f64> {
    let total: usize = counts.iter().sum();
    let k = counts.len() as f64;
    counts
        .iter()
        .map(|&c| total.max(1) as f64 / (k * c.max(1) as f64))
        .collect()
}

/// One pre-norm encoder block.
#[derive(Clone, Copy, Debug)]
pub struct EncoderBlock {
    pub ln1: LayerNormIds,
    pub q: DenseIds,
    pub k: DenseIds,
    pub v: DenseIds,
    pub out: DenseIds,
    pub ln2: LayerNormIds,
    pub mlp1: DenseIds,
    pub mlp2: DenseIds,
}

/// Multi-head self-attention output and the per-head attention weights
/// `[N·H, T, T]`.
pub struct Attention {
    pub output: Var,
    pub weights: Var,
}

#[derive(Clone, Debug)]
pub struct TBViT<T: Real> {
    config: ViTConfig,
    params: ParamStore<T>,
    patch_embed: DenseIds,
    pos_embed: ParamId,
    blocks: Vec<EncoderBlock>,
    ln_final: LayerNormIds,
    head: DenseIds,
}

impl<T: Real> TBViT<T> {
    pub fn new(config: ViTConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let d = config.embed_dim;
        let patch_dim = 3 * config.vit_patch * config.vit_patch;
        let patch_embed = DenseIds::new(&mut params, "patch_embed", patch_dim, d, &mut rng)?;
        let pos_embed = params.add(
            "pos_embed",
            init::uniform([config.num_tokens(), d], 0.02 * 3f64.sqrt(), &mut rng),
            true,
        )?;
        let mut blocks = Vec::with_capacity(config.num_layers);
        for l in 0..config.num_layers {
            let n = |s: &str| format!("block{l}.{s}");
            blocks.push(EncoderBlock {
                ln1: LayerNormIds::new(&mut params, &n("ln1"), d)?,
                q: DenseIds::new(&mut params, &n("q"), d, d, &mut rng)?,
                k: DenseIds::new(&mut params, &n("k"), d, d, &mut rng)?,
                v: DenseIds::new(&mut params, &n("v"), d, d, &mut rng)?,
                out: DenseIds::new(&mut params, &n("out"), d, d, &mut rng)?,
                ln2: LayerNormIds::new(&mut params, &n("ln2"), d)?,
                mlp1: DenseIds::new(&mut params, &n("mlp1"), d, config.mlp_dim, &mut rng)?,
                mlp2: DenseIds::new(&mut params, &n("mlp2"), config.mlp_dim, d, &mut rng)?,
            });
        }
        let ln_final = LayerNormIds::new(&mut params, "ln_final", d)?;
        let head = DenseIds::new(&mut params, "head", d, config.num_classes, &mut rng)?;
        Ok(Self {
            config,
            params,
            patch_embed,
            pos_embed,
            blocks,
            ln_final,
            head,
        })
    }

    pub fn config(&self) -> &ViTConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn blocks(&self) -> &[EncoderBlock] {
        &self.blocks
    }

    pub fn cast<U: Real>(&self) -> TBViT<U> {
        TBViT {
            config: self.config.clone(),
            params: self.params.cast(),
            patch_embed: self.patch_embed,
            pos_embed: self.pos_embed,
            blocks: self.blocks.clone(),
            ln_final: self.ln_final,
            head: self.head,
        }
    }

    /// Flattens each `p×p×3` block (row-major over the patch grid) and
    /// projects it to `embed_dim`, before positional embeddings.
    pub fn patch_projections(&self, pass: &mut Pass<'_, T>, x: Var) -> Result<Var> {
        let c = &self.config;
        let s = pass.tape.shape(x).to_vec();
        if s.len() != 4 || s[1] != 3 || s[2] != c.roi_side || s[3] != c.roi_side {
            return contract(
                "patchify_and_embed",
                format!("expected [N,3,{0},{0}] input, got {s:?}", c.roi_side),
            );
        }
        let (n, g, p) = (s[0], c.grid(), c.vit_patch);
        let t = pass.tape.reshape(x, &[n, 3, g, p, g, p])?;
        let t = pass.tape.permute(t, &[0, 2, 4, 1, 3, 5])?;
        let t = pass.tape.reshape(t, &[n, g * g, 3 * p * p])?;
        pass.dense(self.patch_embed, t)
    }

    /// Token sequence `[N, T, D]`: patch projections plus positional embeddings.
    pub fn patchify_and_embed(&self, pass: &mut Pass<'_, T>, x: Var) -> Result<Var> {
        let proj = self.patch_projections(pass, x)?;
        Ok(pass.tape.add_trailing(proj, pass.var(self.pos_embed))?)
    }

    /// Scaled dot-product attention over `num_heads` heads.
    pub fn mhsa(&self, pass: &mut Pass<'_, T>, block: &EncoderBlock, x: Var) -> Result<Attention> {
        let s = pass.tape.shape(x).to_vec();
        let (h, d) = (self.config.num_heads, self.config.embed_dim);
        if s.len() != 3 || s[2] != d || d % h != 0 {
            return contract(
                "mhsa_forward",
                format!("tokens {s:?} incompatible with embed_dim {d} and {h} heads"),
            );
        }
        let (n, t, dh) = (s[0], s[1], d / h);
        let split = |pass: &mut Pass<'_, T>, ids: DenseIds| -> Result<Var> {
            let y = pass.dense(ids, x)?;
            let y = pass.tape.reshape(y, &[n, t, h, dh])?;
            let y = pass.tape.permute(y, &[0, 2, 1, 3])?;
            Ok(pass.tape.reshape(y, &[n * h, t, dh])?)
        };
        let q = split(pass, block.q)?;
        let k = split(pass, block.k)?;
        let v = split(pass, block.v)?;
        let scores = pass.tape.batch_matmul(q, k, true)?;
        let scores = pass.tape.scale(scores, T::lit(1.0 / (dh as f64).sqrt()));
        let weights = pass.tape.softmax(scores, 2)?;
        let ctx = pass.tape.batch_matmul(weights, v, false)?;
        let ctx = pass.tape.reshape(ctx, &[n, h, t, dh])?;
        let ctx = pass.tape.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = pass.tape.reshape(ctx, &[n, t, d])?;
        let output = pass.dense(block.out, ctx)?;
        Ok(Attention { output, weights })
    }

    fn encoder_block(&self, pass: &mut Pass<'_, T>, block: &EncoderBlock, x: Var) -> Result<Var> {
        let rate = self.config.dropout_rate;
        let a = pass.layer_norm(block.ln1, x)?;
        let a = self.mhsa(pass, block, a)?.output;
        let a = pass.dropout(a, rate)?;
        let x = pass.tape.add(x, a)?;
        let m = pass.layer_norm(block.ln2, x)?;
        let m = pass.dense(block.mlp1, m)?;
        let m = pass.tape.gelu(m);
        let m = pass.dense(block.mlp2, m)?;
        let m = pass.dropout(m, rate)?;
        Ok(pass.tape.add(x, m)?)
    }

    /// Class logits `[N, num_classes]`.
    pub fn forward_logits(&self, pass: &mut Pass<'_, T>, x: Var) -> Result<Var> {
        let mut h = self.patchify_and_embed(pass, x)?;
        h = pass.dropout(h, self.config.dropout_rate)?;
        for block in &self.blocks {
            h = self.encoder_block(pass, block, h)?;
        }
        let h = pass.layer_norm(self.ln_final, h)?;
        let pooled = pass.tape.mean_axis(h, 1)?;
        pass.dense(self.head, pooled)
    }

    /// Class probabilities `[N, num_classes]`, rows summing to one.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        x: Var,
        mode: Mode,
        seed: u64,
    ) -> Result<Var> {
        let mut pass = Pass::new(tape, bound, &self.params, mode, seed);
        let logits = self.forward_logits(&mut pass, x)?;
        Ok(tape.softmax(logits, 1)?)
    }

    /// Inference convenience returning the flat `[N, num_classes]` probabilities.
    pub fn predict(&self, batch: Tensor<T>) -> Result<Vec<T>> {
        let mut tape = Tape::new();
        let bound = self.params.attach(&mut tape, false);
        let x = tape.constant(&batch);
        let y = self.forward(&mut tape, &bound, x, Mode::Infer, 0)?;
        Ok(tape.value(y).to_vec())
    }
}
