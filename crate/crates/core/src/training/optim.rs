use crate::autodiff::{Real, Tensor};
use crate::network::Parameter;
use crate::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// Adam with bias correction. Moments are kept in `f64` per parameter.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new<T: Real>(params: &[Parameter<T>], lr: f64) -> Result<Self> {
        if !lr.is_finite() || lr <= 0.0 {
            return Err(Error::invalid(format!("learning rate {lr} must be positive")));
        }
        Ok(Self {
            lr,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPSILON,
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.value.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.value.numel()]).collect(),
        })
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update. `grads[i]` is `None` for parameters that took no
    /// part in the loss; those and frozen parameters are left untouched.
    /// Returns `false`, without changing anything, if a gradient is not finite.
    pub fn step<T: Real>(&mut self, params: &mut [Parameter<T>], grads: &[Option<Tensor<T>>]) -> Result<bool> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::invalid("optimizer state does not match the parameter list"));
        }
        if grads.iter().flatten().any(|g| !g.is_finite()) {
            return Ok(false);
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let Some(g) = g else { continue };
            if p.frozen {
                continue;
            }
            if g.shape() != p.value.shape() {
                return Err(Error::invalid(format!("gradient shape mismatch for {}", p.name)));
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (k, (w, gk)) in p.value.data_mut().iter_mut().zip(g.data()).enumerate() {
                let gk = gk.to_f64().unwrap_or(0.0);
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * gk;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * gk * gk;
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                let delta = self.lr * m_hat / (v_hat.sqrt() + self.eps);
                *w = T::from_f64_lossy(w.to_f64().unwrap_or(0.0) - delta);
            }
        }
        Ok(true)
    }
}

/// Percentile with linear interpolation between order statistics at index
/// `(n − 1)·p/100`.
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("percentile of an empty history"));
    }
    if !(p > 0.0 && p <= 100.0) {
        return Err(Error::invalid(format!("percentile {p} outside (0, 100]")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = (sorted.len() - 1) as f64 * p / 100.0;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    Ok(sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo]))
}

/// Gradient clipping to a percentile of all gradient norms seen so far.
#[derive(Debug, Clone)]
pub struct AutoClip {
    percentile: f64,
    history: Vec<f64>,
}

impl AutoClip {
    pub fn new(percentile: f64) -> Result<Self> {
        if !(percentile > 0.0 && percentile <= 100.0) {
            return Err(Error::invalid(format!("clip percentile {percentile} outside (0, 100]")));
        }
        Ok(Self {
            percentile,
            history: Vec::new(),
        })
    }

    pub fn history(&self) -> &[f64] {
        &self.history
    }

    pub fn percentile(&self) -> f64 {
        self.percentile
    }

    pub fn threshold(&self) -> Result<f64> {
        percentile(&self.history, self.percentile)
    }

    /// Records `norm` and returns the updated threshold.
    pub fn observe(&mut self, norm: f64) -> Result<f64> {
        self.history.push(norm);
        self.threshold()
    }
}

pub fn global_norm<T: Real>(grads: &[Option<Tensor<T>>]) -> f64 {
    grads
        .iter()
        .flatten()
        .flat_map(|g| g.data())
        .map(|x| {
            let x = x.to_f64().unwrap_or(f64::NAN);
            x * x
        })
        .sum::<f64>()
        .sqrt()
}

/// Rescales all gradients so their global norm is at most `threshold`.
/// Returns the norm after clipping.
pub fn clip_global_norm<T: Real>(grads: &mut [Option<Tensor<T>>], threshold: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > threshold && norm > 0.0 {
        let scale = T::from_f64_lossy(threshold / norm);
        for g in grads.iter_mut().flatten() {
            g.data_mut().iter_mut().for_each(|x| *x = *x * scale);
        }
        return global_norm(grads);
    }
    norm
}

/// Halves the learning rate when the windowed validation loss stops improving.
#[derive(Debug, Clone)]
pub struct LrSchedule {
    pub window: usize,
    pub warmup: usize,
    pub patience: usize,
    pub tolerance: f64,
    best: f64,
    stale_windows: usize,
    halvings: usize,
}

impl LrSchedule {
    pub fn new(window: usize, warmup: usize, patience: usize, tolerance: f64) -> Result<Self> {
        if window == 0 || warmup == 0 || patience == 0 {
            return Err(Error::invalid("schedule window, warmup and patience must be positive"));
        }
        Ok(Self {
            window,
            warmup,
            patience,
            tolerance,
            best: f64::INFINITY,
            stale_windows: 0,
            halvings: 0,
        })
    }

    /// Window 100, warmup 500, patience 5, relative tolerance 1e-4.
    pub fn reference() -> Self {
        Self::new(100, 500, 5, 1e-4).expect("valid constants")
    }

    pub fn is_boundary(&self, iteration: usize) -> bool {
        iteration > 0 && iteration.is_multiple_of(self.window)
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn halvings(&self) -> usize {
        self.halvings
    }

    /// Feeds the windowed loss at a window boundary and returns the learning
    /// rate to use from here on. Windows ending at or before the warmup
    /// iteration never count against patience.
    pub fn step(&mut self, iteration: usize, windowed_loss: f64, lr: f64) -> f64 {
        if !self.best.is_finite() || windowed_loss < self.best - self.tolerance * self.best.abs() {
            self.best = windowed_loss;
            self.stale_windows = 0;
            return lr;
        }
        if iteration <= self.warmup {
            return lr;
        }
        self.stale_windows += 1;
        if self.stale_windows >= self.patience {
            self.stale_windows = 0;
            self.halvings += 1;
            return lr / 2.0;
        }
        lr
    }
}
