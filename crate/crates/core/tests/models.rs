mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tbd_core::gradsuite::model_cases;
use tbd_core::imaging::BinaryMask;
use tbd_core::io::{synth_generate, SynthConfig};
use tbd_core::training::{build_balanced_roi_set, patch_batch, roi_tensor, AnnotatedImage, PatchPair};
use tbd_core::unet::{UNet, UNetConfig};
use tbd_core::vit::{TBViT, ViTConfig};
use tbd_tensor::{Adam, AdamConfig, Mode, Tape};

#[test]
fn checkpoint_roundtrip_is_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    match common::check_checkpoint_fidelity(dir.path()) {
        Ok(s) => println!("{s}"),
        Err(e) => panic!("{e}"),
    }
}

#[test]
fn model_gradients_match_finite_differences() {
    for seed in 0..3 {
        for case in model_cases(seed) {
            let r = case.run().unwrap();
            assert!(r.passed, "{} seed {seed}: {:?}", case.name, r);
            assert!(r.checked > 0, "{} checked nothing", case.name);
        }
    }
}

fn small_scene(seed: u64, side: usize) -> PatchPair {
    let s = synth_generate(&SynthConfig {
        width: side,
        height: side,
        bacilli: (2, 2),
        rod_length: (8.0, 12.0),
        rod_width: (2.0, 3.0),
        distractors: (1, 1),
        distractor_radius: (3.0, 4.0),
        seed,
        ..SynthConfig::default()
    })
    .unwrap();
    (s.image, s.mask)
}

#[test]
fn small_unet_overfits_one_patch() {
    let pair = small_scene(3, 32);
    assert!(pair.1.count() > 0);
    let pairs = vec![pair];
    let cfg = UNetConfig {
        base_channels: 4,
        depth: 2,
        patch_side: 32,
        ..UNetConfig::default()
    };
    let mut model = UNet::<f32>::new(cfg, 1).unwrap();
    let mut adam = Adam::new(AdamConfig::default());
    let (x, y) = patch_batch(&pairs, &[0]).unwrap();
    let mut reached = None;
    for step in 1..=300u64 {
        let mut tape = Tape::new();
        let bound = model.params().attach(&mut tape, true);
        let xv = tape.constant(&x);
        let out = model.forward_logits(&mut tape, &bound, xv, Mode::Train, step).unwrap();
        let loss = tape.bce_with_logits(out.logits, &y).unwrap();
        if tape.value(loss)[0] < 0.05 {
            reached = Some(step);
            break;
        }
        tape.backward(loss).unwrap();
        model.params_mut().collect_grads(&tape, &bound).unwrap();
        adam.step(model.params_mut()).unwrap();
        model.apply_bn_updates(&out.bn_updates);
    }
    let step = reached.expect("BCE did not fall below 0.05 within 300 steps");
    println!("BCE < 0.05 after {step} steps");
}

#[test]
fn small_vit_overfits_sixteen_rois() {
    let scenes: Vec<PatchPair> = (0..6).map(|s| small_scene(40 + s, 64)).collect();
    let annotated: Vec<AnnotatedImage<'_>> = scenes
        .iter()
        .map(|(image, mask)| AnnotatedImage { name: "scene", image, mask })
        .collect();
    let rois = build_balanced_roi_set(&annotated, 4.0, 9).unwrap();
    let pos: Vec<_> = rois.iter().filter(|r| r.label).take(8).collect();
    let neg: Vec<_> = rois.iter().filter(|r| !r.label).take(8).collect();
    assert_eq!((pos.len(), neg.len()), (8, 8));
    let chosen: Vec<_> = pos.into_iter().chain(neg).collect();
    let labels: Vec<usize> = chosen.iter().map(|r| usize::from(r.label)).collect();
    let cfg = ViTConfig {
        embed_dim: 32,
        num_heads: 4,
        num_layers: 2,
        mlp_dim: 64,
        ..ViTConfig::default()
    };
    let x = roi_tensor(chosen.iter().map(|r| &r.crop), cfg.roi_side).unwrap();
    let mut model = TBViT::<f32>::new(cfg, 2).unwrap();
    let mut adam = Adam::new(AdamConfig::default());
    let accuracy = |m: &TBViT<f32>| {
        let p = m.predict(x.clone()).unwrap();
        p.chunks(2).zip(&labels).filter(|(r, &y)| usize::from(r[1] > r[0]) == y).count()
    };
    let mut reached = None;
    for step in 1..=500u64 {
        let mut tape = Tape::new();
        let bound = model.params().attach(&mut tape, true);
        let xv = tape.constant(&x);
        let probs = model.forward(&mut tape, &bound, xv, Mode::Train, step).unwrap();
        let loss = tape.focal_loss(probs, &labels, &[1.0, 1.0], 2.0).unwrap();
        tape.backward(loss).unwrap();
        model.params_mut().collect_grads(&tape, &bound).unwrap();
        adam.step(model.params_mut()).unwrap();
        if step % 25 == 0 && accuracy(&model) >= 15 {
            reached = Some(step);
            break;
        }
    }
    let step = reached.expect("training accuracy stayed below 15/16 for 500 steps");
    println!("≥ 15/16 correct after {step} steps");
}

#[test]
fn synthetic_mask_components_equal_rod_count() {
    use tbd_core::imaging::connected_components;
    use tbd_core::io::ComponentKind;
    for seed in 0..20 {
        let s = synth_generate(&SynthConfig { seed, ..SynthConfig::default() }).unwrap();
        let rods = s.components.iter().filter(|c| c.kind == ComponentKind::Bacillus).count();
        assert_eq!(connected_components(&s.mask).len(), rods, "seed {seed}");
    }
}

#[test]
fn empty_scene_has_empty_mask() {
    let s = synth_generate(&SynthConfig {
        bacilli: (0, 0),
        distractors: (0, 0),
        noise: 0.0,
        ..SynthConfig::default()
    })
    .unwrap();
    assert_eq!(s.mask, BinaryMask::empty(256, 256));
    // only the smooth illumination gradient remains
    let bg = SynthConfig::default().background_color;
    assert!(s
        .image
        .data()
        .chunks(3)
        .all(|p| p.iter().zip(bg).all(|(&v, b)| v.abs_diff(b) <= 13)));
    assert!(s.components.is_empty());
}

#[test]
fn init_is_seeded() {
    let _ = ChaCha8Rng::seed_from_u64(0);
    let a = UNet::<f32>::new(UNetConfig::default(), 4).unwrap();
    let b = UNet::<f32>::new(UNetConfig::default(), 4).unwrap();
    assert!(a.params().iter().zip(b.params().iter()).all(|(p, q)| p.tensor.data() == q.tensor.data()));
}
