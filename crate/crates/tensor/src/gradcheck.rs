//! Central finite-difference verification of backward rules.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Gradients smaller than this are compared absolutely rather than
    /// relatively.
    pub abs_floor: f64,
    /// Check at most this many randomly chosen coordinates per input.
    pub max_coords_per_input: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            abs_floor: 1e-4,
            max_coords_per_input: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mismatch {
    pub input: usize,
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: Option<Mismatch>,
    pub checked: usize,
    /// Coordinates whose perturbation crossed a ReLU or pooling switch and
    /// were therefore not differentiable at the chosen step.
    pub skipped: usize,
    pub passed: bool,
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn evaluate<F>(f: &F, inputs: &[Tensor<f64>]) -> Result<(f64, u64)>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t, false)).collect();
    let out = f(&mut tape, &vars)?;
    Ok((tape.value(out)[0], tape.kink_signature()))
}

/// Compares the tape's gradient of the scalar `f` w.r.t. each input against
/// central differences.
///
/// Perturbations that change the activation pattern (see
/// [`Tape::kink_signature`]) are skipped and counted; the check passes only if
/// at least one coordinate was compared and every compared coordinate is
/// within tolerance.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t, true)).collect();
    let out = f(&mut tape, &vars)?;
    let base_sig = tape.kink_signature();
    tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| tape.grad(v).map_or_else(|| vec![0.0; t.numel()], <[f64]>::to_vec))
        .collect();
    drop(tape);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        skipped: 0,
        passed: false,
    };
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let n = input.numel();
        let coords: Vec<usize> = match opts.max_coords_per_input {
            Some(m) if m < n => {
                let mut c = sample(&mut rng, n, m).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..n).collect(),
        };
        for j in coords {
            let orig = input.data()[j];
            work[i].data_mut()[j] = orig + opts.step;
            let (fp, sp) = evaluate(&f, &work)?;
            work[i].data_mut()[j] = orig - opts.step;
            let (fm, sm) = evaluate(&f, &work)?;
            work[i].data_mut()[j] = orig;
            if sp != base_sig || sm != base_sig {
                report.skipped += 1;
                continue;
            }
            let numeric = (fp - fm) / (2.0 * opts.step);
            let a = analytic[i][j];
            let err = relative_error(a, numeric, opts.abs_floor);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some(Mismatch {
                    input: i,
                    coord: j,
                    analytic: a,
                    numeric,
                });
            }
        }
    }
    report.passed = report.checked > 0 && report.max_rel_error < opts.tolerance;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_is_exact_on_dyadic_point() {
        let x = Tensor::new([4], vec![1.0, -2.0, 3.0, 0.5]).unwrap();
        let opts = GradCheckOptions {
            step: 2f64.powi(-16),
            ..GradCheckOptions::default()
        };
        let r = grad_check(|t, v| Ok(t.sum(v[0])), &[x], &opts).unwrap();
        assert_eq!(r.max_rel_error, 0.0);
        assert!(r.passed);
        assert_eq!(r.checked, 4);
    }

    #[test]
    fn corrupted_backward_rule_fails() {
        let x = Tensor::new([3], vec![0.3, -1.2, 2.0]).unwrap();
        // derivative of x² deliberately given as x instead of 2x
        let r = grad_check(
            |t, v| {
                let y = t.pointwise(v[0], |a| a * a, |a| a);
                Ok(t.sum(y))
            },
            &[x],
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(!r.passed);
        assert!(r.max_rel_error > 0.4);
    }

    #[test]
    fn kink_crossings_are_skipped() {
        let x = Tensor::new([2], vec![1e-7, 1.0]).unwrap();
        let r = grad_check(
            |t, v| {
                let y = t.relu(v[0]);
                Ok(t.sum(y))
            },
            &[x],
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert_eq!(r.skipped, 1);
        assert_eq!(r.checked, 1);
        assert!(r.passed);
    }
}
