//! The full finite-difference oracle suite: every tensor primitive plus the
//! model building blocks and both complete models, at 64-bit precision.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tbd_tensor::gradcases::{primitive_cases, random_tensor, weighted_sum, CaseFn, GradCase};
use tbd_tensor::{Bound, GradCheckReport, Mode, ParamStore, Tape, Tensor, Var};

use crate::error::Result;
use crate::layers::Pass;
use crate::unet::{AttentionGate, ResidualBlock, UNet, UNetConfig};
use crate::vit::{TBViT, ViTConfig};

/// Coordinates sampled per input tensor in model-level cases.
pub const MODEL_COORDS_PER_INPUT: usize = 12;

/// Binds trainable parameters to the given vars (in store order) and the
/// rest to constants.
fn bind(tape: &mut Tape<f64>, store: &ParamStore<f64>, vars: &[Var]) -> Bound {
    let mut it = vars.iter();
    Bound::from_vars(
        store
            .iter()
            .map(|p| {
                if p.trainable {
                    *it.next().expect("one var per trainable parameter")
                } else {
                    tape.constant(&p.tensor)
                }
            })
            .collect(),
    )
}

fn trainable(store: &ParamStore<f64>) -> Vec<Tensor<f64>> {
    store
        .iter()
        .filter(|p| p.trainable)
        .map(|p| p.tensor.clone())
        .collect()
}

/// Perturbs zero-initialised biases and norm affines so their gradients are
/// exercised away from the special initial point.
fn jitter(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng) {
    for p in store.iter_mut().filter(|p| p.trainable) {
        for v in p.tensor.data_mut() {
            *v += rng.gen_range(-0.1..0.1);
        }
    }
}

/// Builds a case whose inputs are `data` followed by the trainable
/// parameters of `store`; `body` receives the data vars and a pass.
fn store_case<F>(
    name: String,
    store: ParamStore<f64>,
    data: Vec<Tensor<f64>>,
    seed: u64,
    body: F,
) -> GradCase
where
    F: Fn(&mut Pass<'_, f64>, &[Var]) -> Result<Var> + Send + Sync + 'static,
{
    let n_data = data.len();
    let mut inputs = data;
    inputs.extend(trainable(&store));
    let f: CaseFn = Box::new(move |tape, vars| {
        let bound = bind(tape, &store, &vars[n_data..]);
        let mut pass = Pass::new(tape, &bound, &store, Mode::Train, seed);
        body(&mut pass, &vars[..n_data]).map_err(|e| match e {
            crate::Error::Tensor(t) => t,
            other => tbd_tensor::TensorError::Argument {
                op: "gradsuite",
                detail: other.to_string(),
            },
        })
    });
    let mut case = GradCase::new(name, inputs, f, seed);
    case.opts.max_coords_per_input = Some(MODEL_COORDS_PER_INPUT);
    case
}

/// Residual block, attention gate, one attention layer, the depth-2/base-4
/// U-Net on `1×3×16×16` and a 2-layer, `D = 16` transformer.
pub fn model_cases(seed: u64) -> Vec<GradCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6d6f_6465_6c73);
    let mut cases = Vec::new();

    {
        let c_out = rng.gen_range(2..=3);
        let mut store = ParamStore::new();
        let block = ResidualBlock::new(&mut store, "block", 2, c_out, &mut rng).expect("fresh store");
        jitter(&mut store, &mut rng);
        let x = random_tensor(&mut rng, &[1, 2, 8, 8], 1.0);
        cases.push(store_case(format!("residual block 2->{c_out}"), store, vec![x], seed, move |p, v| {
            let y = block.forward(p, v[0])?;
            Ok(weighted_sum(p.tape, y, seed)?)
        }));
    }
    {
        let (c, cg) = (rng.gen_range(2..=4), rng.gen_range(1..=3));
        let mut store = ParamStore::new();
        let gate = AttentionGate::new(&mut store, "gate", c, cg, &mut rng).expect("fresh store");
        jitter(&mut store, &mut rng);
        let skip = random_tensor(&mut rng, &[2, c, 4, 4], 1.0);
        let g = random_tensor(&mut rng, &[2, cg, 4, 4], 1.0);
        cases.push(store_case(format!("attention gate c{c} g{cg}"), store, vec![skip, g], seed, move |p, v| {
            let (gated, alpha) = gate.forward(p, v[0], v[1])?;
            let a = weighted_sum(p.tape, gated, seed)?;
            let b = weighted_sum(p.tape, alpha, seed + 1)?;
            Ok(p.tape.add(a, b)?)
        }));
    }
    {
        let cfg = UNetConfig {
            base_channels: 4,
            depth: 2,
            patch_side: 16,
            ..UNetConfig::default()
        };
        let mut net = UNet::<f64>::new(cfg, seed).expect("valid config");
        jitter(net.params_mut(), &mut rng);
        let x = random_tensor(&mut rng, &[1, 3, 16, 16], 1.0);
        let target: Vec<f64> = (0..256).map(|_| f64::from(rng.gen_bool(0.3) as u8)).collect();
        let store = net.params().clone();
        cases.push(store_case("unet depth2 base4".into(), store, vec![x], seed, move |p, v| {
            let out = net.forward_logits(p.tape, p.bound, v[0], Mode::Train, seed)?;
            Ok(p.tape.bce_with_logits(out.logits, &target)?)
        }));
    }
    {
        let cfg = ViTConfig {
            roi_side: 8,
            vit_patch: 4,
            embed_dim: 8,
            num_heads: 2,
            num_layers: 1,
            mlp_dim: 8,
            ..ViTConfig::default()
        };
        let mut vit = TBViT::<f64>::new(cfg, seed).expect("valid config");
        jitter(vit.params_mut(), &mut rng);
        let block = vit.blocks()[0];
        let x = random_tensor(&mut rng, &[1, 4, 8], 1.0);
        let store = vit.params().clone();
        cases.push(store_case("multi-head attention T4 D8".into(), store, vec![x], seed, move |p, v| {
            let att = vit.mhsa(p, &block, v[0])?;
            Ok(weighted_sum(p.tape, att.output, seed)?)
        }));
    }
    {
        let cfg = ViTConfig {
            roi_side: 8,
            vit_patch: 4,
            embed_dim: 16,
            num_heads: 2,
            num_layers: 2,
            mlp_dim: 16,
            ..ViTConfig::default()
        };
        let mut vit = TBViT::<f64>::new(cfg, seed).expect("valid config");
        jitter(vit.params_mut(), &mut rng);
        let x = random_tensor(&mut rng, &[3, 3, 8, 8], 1.0);
        let labels: Vec<usize> = (0..3).map(|_| rng.gen_range(0..2)).collect();
        let weights = [rng.gen_range(0.5..2.0), rng.gen_range(0.5..2.0)];
        let store = vit.params().clone();
        cases.push(store_case("tbvit 2 layers D16 focal".into(), store, vec![x], seed, move |p, v| {
            let logits = vit.forward_logits(p, v[0])?;
            let probs = p.tape.softmax(logits, 1)?;
            Ok(p.tape.focal_loss(probs, &labels, &weights, 2.0)?)
        }));
    }
    cases
}

#[derive(Clone, Debug)]
pub struct SuiteEntry {
    pub name: String,
    pub seed: u64,
    pub report: GradCheckReport,
}

#[derive(Clone, Debug, Default)]
pub struct SuiteReport {
    pub entries: Vec<SuiteEntry>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        !self.entries.is_empty() && self.entries.iter().all(|e| e.report.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.report.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn failures(&self) -> impl Iterator<Item = &SuiteEntry> {
        self.entries.iter().filter(|e| !e.report.passed)
    }
}

/// Runs every primitive and model case for `count` seeds starting at
/// `first_seed`.
pub fn run_suite(first_seed: u64, count: u64) -> Result<SuiteReport> {
    let mut report = SuiteReport::default();
    for seed in first_seed..first_seed + count {
        for case in primitive_cases(seed).into_iter().chain(model_cases(seed)) {
            let r = case.run()?;
            report.entries.push(SuiteEntry {
                name: case.name.clone(),
                seed,
                report: r,
            });
        }
    }
    Ok(report)
}
