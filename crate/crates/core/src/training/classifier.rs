use rand::seq::SliceRandom;
use tbd_tensor::{Adam, AdamConfig, Mode, Tape, Tensor};

use super::{rng, split_validation, CallbackState, Decision, EarlyStopping, EpochLog, ReduceLrOnPlateau, TrainConfig, TrainOutcome};
use crate::error::{contract, Result};
use crate::imaging::{resize_bilinear, RasterImage};
use crate::io::save_checkpoint;
use crate::layers::{mix_seed, Pass};
use crate::vit::{adaptive_class_weights, FocalLossConfig, TBViT, ViTConfig};

/// A region crop with its class (`true` = bacillus).
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledRoi {
    pub crop: RasterImage,
    pub label: bool,
}

/// Resizes crops to `side` and stacks them into `[N, 3, side, side]`.
pub fn roi_tensor<'a>(crops: impl IntoIterator<Item = &'a RasterImage>, side: usize) -> Result<Tensor<f32>> {
    let mut data = Vec::new();
    let mut n = 0;
    for c in crops {
        data.extend(resize_bilinear(c, side));
        n += 1;
    }
    Ok(Tensor::new([n, 3, side, side], data)?)
}

struct Prepared {
    inputs: Vec<Vec<f32>>,
    labels: Vec<usize>,
    side: usize,
}

impl Prepared {
    fn batch(&self, idx: &[usize]) -> Result<(Tensor<f32>, Vec<usize>)> {
        let mut data = Vec::with_capacity(idx.len() * self.inputs[0].len());
        for &i in idx {
            data.extend_from_slice(&self.inputs[i]);
        }
        Ok((
            Tensor::new([idx.len(), 3, self.side, self.side], data)?,
            idx.iter().map(|&i| self.labels[i]).collect(),
        ))
    }
}

fn argmax_correct(probs: &[f32], labels: &[usize], k: usize) -> usize {
    probs
        .chunks(k)
        .zip(labels)
        .filter(|(row, &y)| {
            let pred = (0..k).fold(0, |best, c| if row[c] > row[best] { c } else { best });
            pred == y
        })
        .count()
}

/// Minimises the class-weighted focal loss with Adam; validation accuracy
/// drives the callbacks and best-model selection.
pub fn train_classifier(
    rois: &[LabeledRoi],
    vit_cfg: &ViTConfig,
    focal: &FocalLossConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<TBViT<f32>>> {
    cfg.validate()?;
    vit_cfg.validate()?;
    if rois.is_empty() {
        return contract("train_classifier", "empty dataset");
    }
    let labels: Vec<usize> = rois.iter().map(|r| r.label as usize).collect();
    let mut counts = vec![0usize; vit_cfg.num_classes];
    for &l in &labels {
        counts[l] += 1;
    }
    if counts.iter().filter(|&&c| c > 0).count() < 2 {
        return contract(
            "train_classifier",
            format!("training ROIs contain a single class (counts {counts:?})"),
        );
    }
    let mut rng = rng(cfg.seed);
    let (mut train_idx, val_idx) = split_validation(rois.len(), cfg.val_fraction, &mut rng)?;
    let weights: Vec<f32> = match &focal.class_weights {
        Some(w) if w.len() == vit_cfg.num_classes => w.iter().map(|&v| v as f32).collect(),
        Some(w) => {
            return contract(
                "train_classifier",
                format!("{} class weights given for {} classes", w.len(), vit_cfg.num_classes),
            )
        }
        None => {
            let mut train_counts = vec![0usize; vit_cfg.num_classes];
            for &i in &train_idx {
                train_counts[labels[i]] += 1;
            }
            adaptive_class_weights(&train_counts).into_iter().map(|v| v as f32).collect()
        }
    };
    let gamma = focal.gamma as f32;
    let data = Prepared {
        inputs: rois.iter().map(|r| resize_bilinear(&r.crop, vit_cfg.roi_side)).collect(),
        labels,
        side: vit_cfg.roi_side,
    };
    let k = vit_cfg.num_classes;
    let mut model = TBViT::<f32>::new(vit_cfg.clone(), mix_seed(cfg.seed, 2))?;
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
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for chunk in train_idx.chunks(cfg.batch_size) {
            step += 1;
            let (x, y) = data.batch(chunk)?;
            let mut tape = Tape::new();
            let bound = model.params().attach(&mut tape, true);
            let xv = tape.constant(&x);
            let mut pass = Pass::new(&mut tape, &bound, model.params(), Mode::Train, mix_seed(cfg.seed, step));
            let logits = model.forward_logits(&mut pass, xv)?;
            let probs = tape.softmax(logits, 1)?;
            let loss = tape.focal_loss(probs, &y, &weights, gamma)?;
            loss_sum += f64::from(tape.value(loss)[0]) * chunk.len() as f64;
            correct += argmax_correct(tape.value(probs), &y, k);
            tape.backward(loss)?;
            model.params_mut().collect_grads(&tape, &bound)?;
            adam.step(model.params_mut())?;
        }
        model.params_mut().zero_grads();
        let (mut val_loss, mut val_correct) = (0.0, 0usize);
        for chunk in val_idx.chunks(cfg.batch_size) {
            let (x, y) = data.batch(chunk)?;
            let mut tape = Tape::new();
            let bound = model.params().attach(&mut tape, false);
            let xv = tape.constant(&x);
            let probs = model.forward(&mut tape, &bound, xv, Mode::Infer, 0)?;
            let loss = tape.focal_loss(probs, &y, &weights, gamma)?;
            val_loss += f64::from(tape.value(loss)[0]) * chunk.len() as f64;
            val_correct += argmax_correct(tape.value(probs), &y, k);
        }
        let val_acc = val_correct as f64 / val_idx.len() as f64;
        logs.push(EpochLog {
            epoch,
            train_loss: loss_sum / train_idx.len() as f64,
            train_acc: correct as f64 / train_idx.len() as f64,
            val_loss: val_loss / val_idx.len() as f64,
            val_acc,
            lr,
            val_metric: val_acc,
        });
        if state.observe(epoch, val_acc) {
            best = model.clone();
            if let Some(dir) = &cfg.checkpoint_dir {
                save_checkpoint(&best, dir)?;
                state.best_checkpoint = Some(dir.clone());
            }
        }
        adam.set_lr(plateau.update(val_acc, lr));
        if early.update(val_acc) == Decision::Halt {
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
