use rand::seq::SliceRandom;
use tbd_tensor::{Adam, AdamConfig, Mode, Tape, Tensor};

use super::{rng, split_validation, CallbackState, Decision, EarlyStopping, EpochLog, ReduceLrOnPlateau, TrainConfig, TrainOutcome};
use crate::error::{contract, Result};
use crate::imaging::{BinaryMask, RasterImage};
use crate::io::save_checkpoint;
use crate::layers::mix_seed;
use crate::unet::{UNet, UNetConfig};

/// A training patch and its mask.
pub type PatchPair = (RasterImage, BinaryMask);

/// Stacks patches into a `[B, 3, p, p]` tensor and flat `{0, 1}` targets.
pub fn patch_batch(pairs: &[PatchPair], idx: &[usize]) -> Result<(Tensor<f32>, Vec<f32>)> {
    let (w, h) = (pairs[idx[0]].0.width(), pairs[idx[0]].0.height());
    let mut x = Vec::with_capacity(idx.len() * 3 * w * h);
    let mut y = Vec::with_capacity(idx.len() * w * h);
    for &i in idx {
        let (img, mask) = &pairs[i];
        x.extend(img.to_chw());
        y.extend(mask.bits().iter().map(|&b| if b { 1.0 } else { 0.0 }));
    }
    Ok((Tensor::new([idx.len(), 3, h, w], x)?, y))
}

struct Eval {
    loss: f64,
    acc: f64,
    jaccard: f64,
}

fn evaluate(model: &UNet<f32>, pairs: &[PatchPair], idx: &[usize], batch: usize) -> Result<Eval> {
    let (mut loss, mut correct, mut total) = (0.0, 0usize, 0usize);
    let (mut inter, mut union) = (0usize, 0usize);
    for chunk in idx.chunks(batch) {
        let (x, y) = patch_batch(pairs, chunk)?;
        let mut tape = Tape::new();
        let bound = model.params().attach(&mut tape, false);
        let xv = tape.constant(&x);
        let out = model.forward_logits(&mut tape, &bound, xv, Mode::Infer, 0)?;
        let l = tape.bce_with_logits(out.logits, &y)?;
        loss += f64::from(tape.value(l)[0]) * y.len() as f64;
        for (&z, &t) in tape.value(out.logits).iter().zip(&y) {
            let (p, t) = (z > 0.0, t > 0.5);
            correct += (p == t) as usize;
            inter += (p && t) as usize;
            union += (p || t) as usize;
        }
        total += y.len();
    }
    Ok(Eval {
        loss: loss / total as f64,
        acc: correct as f64 / total as f64,
        jaccard: if union == 0 { 1.0 } else { inter as f64 / union as f64 },
    })
}

/// Minimises pixelwise binary cross-entropy with Adam. Validation Jaccard
/// (pooled over the held-out patches, threshold 0.5) drives early stopping,
/// learning-rate reduction and best-model selection.
pub fn train_segmenter(
    pairs: &[PatchPair],
    unet_cfg: &UNetConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<UNet<f32>>> {
    cfg.validate()?;
    unet_cfg.validate()?;
    if pairs.is_empty() {
        return contract("train_segmenter", "empty dataset");
    }
    let p = unet_cfg.patch_side;
    for (i, (img, mask)) in pairs.iter().enumerate() {
        if img.width() != p || img.height() != p || !(mask.width() == p && mask.height() == p) {
            return contract(
                "train_segmenter",
                format!("patch {i} is not {p}x{p} or its mask does not match"),
            );
        }
    }
    let mut rng = rng(cfg.seed);
    let (mut train_idx, val_idx) = split_validation(pairs.len(), cfg.val_fraction, &mut rng)?;
    let mut model = UNet::<f32>::new(unet_cfg.clone(), mix_seed(cfg.seed, 1))?;
    let mut adam = Adam::new(AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    });
    let mut early = EarlyStopping::new(cfg.early_stop_patience, cfg.min_delta);
    let mut plateau = ReduceLrOnPlateau::new(cfg.lr_factor, cfg.lr_patience, cfg.min_lr, cfg.min_delta);
    let mut state = CallbackState::default();
    let mut best = model.clone();
    let mut logs = Vec::new();
    let mut step = 0u64;
    for epoch in 1..=cfg.epochs {
        train_idx.shuffle(&mut rng);
        let lr = adam.lr();
        let (mut loss_sum, mut correct, mut total) = (0.0, 0usize, 0usize);
        for chunk in train_idx.chunks(cfg.batch_size) {
            step += 1;
            let (x, y) = patch_batch(pairs, chunk)?;
            let mut tape = Tape::new();
            let bound = model.params().attach(&mut tape, true);
            let xv = tape.constant(&x);
            let out = model.forward_logits(&mut tape, &bound, xv, Mode::Train, mix_seed(cfg.seed, step))?;
            let loss = tape.bce_with_logits(out.logits, &y)?;
            loss_sum += f64::from(tape.value(loss)[0]) * y.len() as f64;
            correct += tape
                .value(out.logits)
                .iter()
                .zip(&y)
                .filter(|(&z, &t)| (z > 0.0) == (t > 0.5))
                .count();
            total += y.len();
            tape.backward(loss)?;
            model.params_mut().collect_grads(&tape, &bound)?;
            adam.step(model.params_mut())?;
            model.apply_bn_updates(&out.bn_updates);
        }
        model.params_mut().zero_grads();
        let val = evaluate(&model, pairs, &val_idx, cfg.batch_size)?;
        logs.push(EpochLog {
            epoch,
            train_loss: loss_sum / total as f64,
            train_acc: correct as f64 / total as f64,
            val_loss: val.loss,
            val_acc: val.acc,
            lr,
            val_metric: val.jaccard,
        });
        if state.observe(epoch, val.jaccard) {
            best = model.clone();
            if let Some(dir) = &cfg.checkpoint_dir {
                save_checkpoint(&best, dir)?;
                state.best_checkpoint = Some(dir.clone());
            }
        }
        adam.set_lr(plateau.update(val.jaccard, lr));
        if early.update(val.jaccard) == Decision::Halt {
            break;
        }
    }
    Ok(TrainOutcome {
        model: best,
        logs,
        best_epoch: state.best_epoch,
        best_metric: state.best_metric.unwrap_or(f64::NAN),
    })
}
