//! Adam optimizer with the conventional moment coefficients.

use super::params::ParamVec;

pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(lr: f64, n: usize) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    /// One update step. Parameters are re-quantized to f32 afterwards so the
    /// in-memory model always equals its checkpoint image.
    pub fn step(&mut self, params: &mut ParamVec, grads: &[f64]) {
        assert_eq!(params.len(), grads.len());
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..grads.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / b1t;
            let vhat = self.v[i] / b2t;
            params.data[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
        params.quantize_f32();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn descends_a_quadratic() {
        let mut p = ParamVec::new();
        p.add("x", &[1]);
        p.data[0] = 3.0;
        let mut opt = Adam::new(0.1, 1);
        for _ in 0..200 {
            let g = vec![2.0 * p.data[0]];
            opt.step(&mut p, &g);
        }
        assert!(p.data[0].abs() < 0.05);
    }
}
