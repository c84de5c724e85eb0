//! Adam and the linear warmup schedule.

use crate::Scalar;

/// Adam with bias-corrected moment estimates over a set of parameter slices.
#[derive(Debug, Clone)]
pub struct Adam<S> {
    beta1: S,
    beta2: S,
    epsilon: S,
    m: Vec<S>,
    v: Vec<S>,
    t: i32,
}

impl<S: Scalar> Adam<S> {
    pub fn new(num_params: usize, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Adam {
            beta1: S::lit(beta1),
            beta2: S::lit(beta2),
            epsilon: S::lit(epsilon),
            m: vec![S::zero(); num_params],
            v: vec![S::zero(); num_params],
            t: 0,
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    /// One update. `params` and `grads` are matching slices laid end to end.
    pub fn step(&mut self, params: &mut [&mut [S]], grads: &[&[S]], lr: S) {
        self.t += 1;
        let one = S::one();
        let bc1 = one - self.beta1.powi(self.t);
        let bc2 = one - self.beta2.powi(self.t);
        let mut offset = 0;
        for (p, g) in params.iter_mut().zip(grads) {
            assert_eq!(p.len(), g.len(), "parameter/gradient length mismatch");
            for (i, (theta, &grad)) in p.iter_mut().zip(g.iter()).enumerate() {
                let j = offset + i;
                self.m[j] = self.beta1 * self.m[j] + (one - self.beta1) * grad;
                self.v[j] = self.beta2 * self.v[j] + (one - self.beta2) * grad * grad;
                let m_hat = self.m[j] / bc1;
                let v_hat = self.v[j] / bc2;
                *theta -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
            offset += p.len();
        }
        assert_eq!(offset, self.m.len(), "optimizer sized for a different parameter count");
    }
}

/// Linear ramp from 0 to `peak` over `warmup_steps`, constant afterwards.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearWarmup {
    pub peak: f64,
    pub warmup_steps: usize,
}

impl LinearWarmup {
    pub fn new(peak: f64, total_steps: usize, warmup_fraction: f64) -> Self {
        LinearWarmup { peak, warmup_steps: (total_steps as f64 * warmup_fraction).ceil() as usize }
    }

    /// Rate for the 1-based optimizer step `step`.
    pub fn rate(&self, step: usize) -> f64 {
        if self.warmup_steps == 0 || step >= self.warmup_steps {
            self.peak
        } else {
            self.peak * step as f64 / self.warmup_steps as f64
        }
    }
}
