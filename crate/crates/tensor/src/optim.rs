use crate::error::{Result, TensorError};
use crate::param::ParamStore;
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adaptive-moment optimizer with bias-corrected first and second moments.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    config: AdamConfig,
    step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn lr(&self) -> f64 {
        self.config.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Moment buffers, one pair per parameter in store order.
    pub fn moments(&self) -> (&[Vec<T>], &[Vec<T>]) {
        (&self.first, &self.second)
    }

    /// Applies one update to every trainable parameter of `params`.
    ///
    /// Every trainable parameter must carry a gradient.
    pub fn step(&mut self, params: &mut ParamStore<T>) -> Result<()> {
        if let Some(p) = params.iter().find(|p| p.trainable && p.tensor.grad().is_none()) {
            return Err(TensorError::MissingGrad(p.name.clone()));
        }
        if self.first.len() != params.len() {
            self.first = params.iter().map(|p| vec![T::zero(); p.tensor.numel()]).collect();
            self.second = self.first.clone();
        }
        self.step += 1;
        let c = self.config;
        let b1 = T::lit(c.beta1);
        let b2 = T::lit(c.beta2);
        let bias1 = T::lit(1.0 - c.beta1.powi(self.step as i32));
        let bias2 = T::lit(1.0 - c.beta2.powi(self.step as i32));
        let lr = T::lit(c.lr);
        let eps = T::lit(c.eps);
        for (i, p) in params.iter_mut().enumerate() {
            if !p.trainable {
                continue;
            }
            let grad = p.tensor.grad().expect("checked above").to_vec();
            let m = &mut self.first[i];
            let v = &mut self.second[i];
            for (j, w) in p.tensor.data_mut().iter_mut().enumerate() {
                let g = grad[j];
                m[j] = b1 * m[j] + (T::one() - b1) * g;
                v[j] = b2 * v[j] + (T::one() - b2) * g * g;
                let mh = m[j] / bias1;
                let vh = v[j] / bias2;
                *w -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{Tape, Tensor};

    fn quadratic_grad(params: &mut ParamStore<f64>, coeffs: &[f64]) -> f64 {
        let mut tape = Tape::new();
        let bound = params.attach(&mut tape, true);
        let w = bound.vars()[0];
        let c = tape.constant(&Tensor::new([coeffs.len()], coeffs.to_vec()).unwrap());
        let sq = tape.mul(w, w).unwrap();
        let weighted = tape.mul(sq, c).unwrap();
        let loss = tape.sum(weighted);
        tape.backward(loss).unwrap();
        params.collect_grads(&tape, &bound).unwrap();
        tape.value(loss)[0]
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut params = ParamStore::<f64>::new();
        params.add("w", Tensor::new([2], vec![0.3, -0.7]).unwrap(), true).unwrap();
        params.add("stat", Tensor::new([1], vec![5.0]).unwrap(), false).unwrap();
        params.iter_mut().next().unwrap().tensor.set_grad(Some(vec![0.0, 0.0])).unwrap();
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut params).unwrap();
        assert_eq!(params.iter().next().unwrap().tensor.data(), &[0.3, -0.7]);
        assert_eq!(params.iter().nth(1).unwrap().tensor.data(), &[5.0]);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn step_moves_toward_minimum() {
        let mut params = ParamStore::<f64>::new();
        params.add("w", Tensor::new([1], vec![1.0]).unwrap(), true).unwrap();
        quadratic_grad(&mut params, &[1.0]);
        let mut adam = Adam::new(AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        });
        adam.step(&mut params).unwrap();
        let w = params.iter().next().unwrap().tensor.data()[0];
        assert!(w < 1.0 && w > 0.0);
    }

    #[test]
    fn converges_on_convex_quadratic() {
        let mut params = ParamStore::<f64>::new();
        params.add("w", Tensor::new([2], vec![1.0, -1.5]).unwrap(), true).unwrap();
        let mut adam = Adam::new(AdamConfig {
            lr: 0.05,
            ..AdamConfig::default()
        });
        let mut loss = f64::INFINITY;
        for _ in 0..200 {
            loss = quadratic_grad(&mut params, &[1.0, 3.0]);
            adam.step(&mut params).unwrap();
        }
        let final_loss = quadratic_grad(&mut params, &[1.0, 3.0]);
        assert!(final_loss < 1e-3, "loss {loss} -> {final_loss}");
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut params = ParamStore::<f32>::new();
        params.add("w", Tensor::zeros([1]), true).unwrap();
        let mut adam = Adam::new(AdamConfig::default());
        assert_eq!(
            adam.step(&mut params),
            Err(TensorError::MissingGrad("w".into()))
        );
    }
}
