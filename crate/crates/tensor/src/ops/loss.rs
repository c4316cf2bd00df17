use crate::error::{arg_err, shape_err, Result};
use crate::real::Real;
use crate::tape::{GradSink, Op, Tape, Var};

use super::elementwise::sigmoid;

/// Lower clamp applied to the true-class probability before the log.
pub const PROB_CLAMP: f64 = 1e-7;

impl<T: Real> Tape<T> {
    /// Mean binary cross-entropy of `sigmoid(logits)` against `target ∈ [0,1]`,
    /// evaluated in the overflow-free logit form.
    pub fn bce_with_logits(&mut self, logits: Var, target: &[T]) -> Result<Var> {
        let z = self.value(logits);
        if z.len() != target.len() {
            return shape_err("bce", format!("{} logits vs {} targets", z.len(), target.len()));
        }
        let loss = z
            .iter()
            .zip(target)
            .map(|(&z, &t)| z.max(T::zero()) - z * t + (T::one() + (-z.abs()).exp()).ln())
            .sum::<T>()
            / T::lit(z.len() as f64);
        Ok(self.push(
            vec![1],
            vec![loss],
            Op::BceWithLogits {
                logits,
                target: target.to_vec(),
            },
        ))
    }

    /// Class-weighted focal loss on probabilities `[N, K]`:
    /// mean over rows of `-w_y · (1 - p_y)^γ · ln p_y`.
    ///
    /// `p_y` is clamped to `[1e-7, 1]`; the gradient is evaluated at the
    /// clamped value and passed straight through so saturated rows still train.
    /// A certain correct prediction (`p_y = 1`) costs exactly zero.
    pub fn focal_loss(&mut self, probs: Var, labels: &[usize], weights: &[T], gamma: T) -> Result<Var> {
        let shape = self.shape(probs).to_vec();
        if shape.len() != 2 || shape[0] != labels.len() || shape[1] != weights.len() {
            return shape_err(
                "focal_loss",
                format!("probs {shape:?}, {} labels, {} weights", labels.len(), weights.len()),
            );
        }
        if gamma < T::zero() {
            return arg_err("focal_loss", "gamma must be non-negative");
        }
        if weights.iter().any(|&w| w <= T::zero()) {
            return arg_err("focal_loss", "class weights must be positive");
        }
        let k = shape[1];
        if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
            return arg_err("focal_loss", format!("label {bad} out of range for {k} classes"));
        }
        let pv = self.value(probs);
        let lo = T::lit(PROB_CLAMP);
        let total: T = labels
            .iter()
            .enumerate()
            .map(|(i, &y)| {
                let p = pv[i * k + y].max(lo).min(T::one());
                -weights[y] * (T::one() - p).powf(gamma) * p.ln()
            })
            .sum();
        let loss = total / T::lit(labels.len() as f64);
        Ok(self.push(
            vec![1],
            vec![loss],
            Op::Focal {
                probs,
                labels: labels.to_vec(),
                weights: weights.to_vec(),
                gamma,
            },
        ))
    }
}

pub(crate) fn bce_backward<T: Real>(logits: Var, target: &[T], g0: T, sink: &mut GradSink<'_, T>) {
    if !sink.wants(logits) {
        return;
    }
    let z = &sink.node(logits).value;
    let scale = g0 / T::lit(z.len() as f64);
    let d = sink.buf(logits);
    for i in 0..z.len() {
        d[i] += scale * (sigmoid(z[i]) - target[i]);
    }
}

pub(crate) fn focal_backward<T: Real>(
    probs: Var,
    labels: &[usize],
    weights: &[T],
    gamma: T,
    g0: T,
    sink: &mut GradSink<'_, T>,
) {
    if !sink.wants(probs) {
        return;
    }
    let k = weights.len();
    let pv = &sink.node(probs).value;
    let lo = T::lit(PROB_CLAMP);
    let scale = g0 / T::lit(labels.len() as f64);
    let d = sink.buf(probs);
    for (i, &y) in labels.iter().enumerate() {
        let p = pv[i * k + y].max(lo).min(T::one());
        let q = T::one() - p;
        let mut dl = q.powf(gamma) / p;
        // at q = 0 the modulating term's derivative multiplies ln 1 = 0
        if gamma > T::zero() && q > T::zero() {
            dl -= gamma * q.powf(gamma - T::one()) * p.ln();
        }
        d[i * k + y] += -scale * weights[y] * dl;
    }
}

#[cfg(test)]
mod tests {
    use crate::{Tape, Tensor};

    #[test]
    fn focal_spot_value() {
        let mut tape = Tape::<f64>::new();
        let p = tape.constant(&Tensor::new([1, 2], vec![0.5, 0.5]).unwrap());
        let l = tape.focal_loss(p, &[1], &[1.0, 1.0], 2.0).unwrap();
        let expect = 0.25 * std::f64::consts::LN_2;
        assert!((tape.value(l)[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn certain_prediction_costs_nothing() {
        let mut tape = Tape::<f64>::new();
        let p = tape.constant(&Tensor::new([1, 2], vec![0.0, 1.0]).unwrap());
        for gamma in [0.0, 0.5, 2.0, 5.0] {
            let l = tape.focal_loss(p, &[1], &[1.0, 1.0], gamma).unwrap();
            assert_eq!(tape.value(l)[0], 0.0);
        }
    }

    #[test]
    fn rejects_bad_labels_and_weights() {
        let mut tape = Tape::<f64>::new();
        let p = tape.constant(&Tensor::new([1, 2], vec![0.5, 0.5]).unwrap());
        assert!(tape.focal_loss(p, &[2], &[1.0, 1.0], 2.0).is_err());
        assert!(tape.focal_loss(p, &[0], &[0.0, 1.0], 2.0).is_err());
        assert!(tape.focal_loss(p, &[0], &[1.0, 1.0], -1.0).is_err());
    }

    #[test]
    fn bce_matches_probability_form() {
        let mut tape = Tape::<f64>::new();
        let z = [-3.0, -0.2, 0.0, 1.5, 4.0];
        let t = [0.0, 1.0, 1.0, 0.0, 1.0];
        let x = tape.constant(&Tensor::new([5], z.to_vec()).unwrap());
        let l = tape.bce_with_logits(x, &t).unwrap();
        let expect: f64 = z
            .iter()
            .zip(&t)
            .map(|(&z, &t)| {
                let p = 1.0 / (1.0 + (-z).exp());
                -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
            })
            .sum::<f64>()
            / 5.0;
        assert!((tape.value(l)[0] - expect).abs() < 1e-12);
    }
}
