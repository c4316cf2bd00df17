//! Validation-driven callbacks. Metrics are "higher is better".

/// Shared improvement rule: a metric improves on the best so far when it
/// exceeds it by at least `min_delta`; the first observation always does.
#[derive(Clone, Debug)]
struct Plateau {
    min_delta: f64,
    best: Option<f64>,
    wait: usize,
}

impl Plateau {
    fn new(min_delta: f64) -> Self {
        Self {
            min_delta,
            best: None,
            wait: 0,
        }
    }

    /// Returns the number of consecutive non-improving observations.
    fn observe(&mut self, metric: f64) -> usize {
        match self.best {
            Some(b) if metric - b < self.min_delta => self.wait += 1,
            _ => {
                self.best = Some(metric);
                self.wait = 0;
            }
        }
        self.wait
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decision {
    Continue,
    Halt,
}

/// Halts after `patience` consecutive epochs without improvement.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    plateau: Plateau,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        Self {
            patience: patience.max(1),
            plateau: Plateau::new(min_delta),
        }
    }

    pub fn update(&mut self, metric: f64) -> Decision {
        if self.plateau.observe(metric) >= self.patience {
            Decision::Halt
        } else {
            Decision::Continue
        }
    }

    pub fn epochs_since_improvement(&self) -> usize {
        self.plateau.wait
    }
}

/// Multiplies the learning rate by `factor` after `patience` epochs without
/// improvement, never going below `min_lr`.
#[derive(Clone, Debug)]
pub struct ReduceLrOnPlateau {
    factor: f64,
    patience: usize,
    min_lr: f64,
    plateau: Plateau,
}

impl ReduceLrOnPlateau {
    pub fn new(factor: f64, patience: usize, min_lr: f64, min_delta: f64) -> Self {
        Self {
            factor,
            patience: patience.max(1),
            min_lr,
            plateau: Plateau::new(min_delta),
        }
    }

    pub fn update(&mut self, metric: f64, lr: f64) -> f64 {
        if self.plateau.observe(metric) >= self.patience {
            self.plateau.wait = 0;
            (lr * self.factor).max(self.min_lr)
        } else {
            lr
        }
    }
}

/// Tracks the best validation metric seen (strictly greater wins) and the
/// epoch at which it occurred.
#[derive(Clone, Debug, Default)]
pub struct CallbackState {
    pub best_metric: Option<f64>,
    pub best_epoch: usize,
    pub epochs_since_improvement: usize,
    pub best_checkpoint: Option<std::path::PathBuf>,
}

impl CallbackState {
    /// Returns true when `metric` is a new best.
    pub fn observe(&mut self, epoch: usize, metric: f64) -> bool {
        if self.best_metric.is_none_or(|b| metric > b) {
            self.best_metric = Some(metric);
            self.best_epoch = epoch;
            self.epochs_since_improvement = 0;
            true
        } else {
            self.epochs_since_improvement += 1;
            false
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn improving_sequence_never_halts() {
        let mut es = EarlyStopping::new(3, 1e-4);
        for i in 0..50 {
            assert_eq!(es.update(i as f64 * 0.01), Decision::Continue);
        }
    }

    #[test]
    fn flat_sequence_halts_on_fourth_epoch() {
        let mut es = EarlyStopping::new(3, 1e-4);
        let decisions: Vec<_> = (0..4).map(|_| es.update(0.5)).collect();
        assert_eq!(
            decisions,
            vec![Decision::Continue, Decision::Continue, Decision::Continue, Decision::Halt]
        );
    }

    #[test]
    fn sub_delta_gains_do_not_count() {
        let mut es = EarlyStopping::new(2, 1e-4);
        assert_eq!(es.update(0.5), Decision::Continue);
        assert_eq!(es.update(0.50005), Decision::Continue);
        assert_eq!(es.update(0.50009), Decision::Halt);
    }

    #[test]
    fn improving_metric_keeps_lr() {
        let mut r = ReduceLrOnPlateau::new(0.5, 2, 1e-5, 1e-4);
        for i in 0..10 {
            assert_eq!(r.update(i as f64, 1e-3), 1e-3);
        }
    }

    #[test]
    fn three_flat_epochs_halve_once() {
        let mut r = ReduceLrOnPlateau::new(0.5, 2, 1e-5, 1e-4);
        let mut lr = 1e-3;
        let mut trace = Vec::new();
        for _ in 0..3 {
            lr = r.update(0.7, lr);
            trace.push(lr);
        }
        assert_eq!(trace, vec![1e-3, 1e-3, 5e-4]);
    }

    #[test]
    fn lr_floor_holds() {
        let mut r = ReduceLrOnPlateau::new(0.5, 2, 1e-5, 1e-4);
        let mut lr: f64 = 1e-3;
        for _ in 0..100 {
            let next = r.update(0.1, lr);
            assert!(next <= lr && next >= 1e-5);
            lr = next;
        }
        assert_eq!(lr, 1e-5);
    }

    #[test]
    fn best_tracking_is_strict() {
        let mut s = CallbackState::default();
        assert!(s.observe(1, 0.3));
        assert!(!s.observe(2, 0.3));
        assert!(s.observe(3, 0.31));
        assert!(!s.observe(4, 0.2));
        assert_eq!((s.best_epoch, s.best_metric), (3, Some(0.31)));
    }
}
