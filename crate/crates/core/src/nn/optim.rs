use serde::{Deserialize, Serialize};

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub steps: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(len: usize) -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, steps: 0, m: vec![0.0; len], v: vec![0.0; len] }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.steps += 1;
        let c1 = 1.0 - self.beta1.powi(self.steps as i32);
        let c2 = 1.0 - self.beta2.powi(self.steps as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// Exponential moving average of parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ema {
    pub decay: f64,
    pub shadow: Vec<f64>,
    /// Use `min(decay, (1 + k) / (10 + k))` at update `k` so early shadows
    /// are not dominated by the initialization.
    pub warmup: bool,
    pub updates: u64,
}

impl Ema {
    pub fn new(params: &[f64], decay: f64) -> Self {
        Self { decay, shadow: params.to_vec(), warmup: false, updates: 0 }
    }

    pub fn with_warmup(params: &[f64], decay: f64) -> Self {
        Self { warmup: true, ..Self::new(params, decay) }
    }

    /// `shadow <- d * shadow + (1 - d) * params`.
    pub fn update(&mut self, params: &[f64]) {
        let k = self.updates as f64;
        self.updates += 1;
        let d = if self.warmup { self.decay.min((1.0 + k) / (10.0 + k)) } else { self.decay };
        for (s, p) in self.shadow.iter_mut().zip(params) {
            *s = d * *s + (1.0 - d) * p;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_null_update() {
        let mut p = vec![1.0, -2.0, 0.5];
        let before = p.clone();
        let mut opt = Adam::new(3);
        opt.step(&mut p, &[0.0; 3], 1e-3);
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = vec![1.0, 1.0];
        let mut opt = Adam::new(2);
        opt.step(&mut p, &[3.0, -0.1], 0.01);
        assert!((p[0] - 0.99).abs() < 1e-8 && (p[1] - 1.01).abs() < 1e-6);
    }

    #[test]
    fn ema_endpoints() {
        let mut e = Ema::new(&[1.0, 2.0], 1.0);
        e.update(&[5.0, 6.0]);
        assert_eq!(e.shadow, vec![1.0, 2.0]);
        e.decay = 0.0;
        e.update(&[5.0, 6.0]);
        assert_eq!(e.shadow, vec![5.0, 6.0]);
    }

    #[test]
    fn warmup_caps_early_decay() {
        let mut e = Ema::with_warmup(&[0.0], 0.999);
        e.update(&[10.0]);
        assert!((e.shadow[0] - 9.0).abs() < 1e-12);
    }
}
