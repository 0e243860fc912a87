use crate::error::{NnError, Result};
use crate::param::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Bias-corrected Adam.
#[derive(Debug, Clone)]
pub struct Adam<F> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor<F>>,
    v: Vec<Tensor<F>>,
}

impl<F: Scalar> Adam<F> {
    /// Optimizer with default moments (β1 = 0.9, β2 = 0.999, ε = 1e-8) and no
    /// state; call [`Adam::init`] before the first step.
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn for_params(params: &ParamStore<F>, lr: f64) -> Self {
        let mut adam = Adam::new(lr);
        adam.init(params);
        adam
    }

    /// Zeroes the moments to match `params` and resets the step count.
    pub fn init(&mut self, params: &ParamStore<F>) {
        self.m = params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        self.v = self.m.clone();
        self.step = 0;
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Tensor<F>], &[Tensor<F>]) {
        (&self.m, &self.v)
    }

    /// Restores saved state; shapes are checked on the next step.
    pub fn restore(&mut self, step: u64, m: Vec<Tensor<F>>, v: Vec<Tensor<F>>) {
        self.step = step;
        self.m = m;
        self.v = v;
    }

    fn check(&self, params: &ParamStore<F>) -> Result<()> {
        if self.m.len() != params.len() || self.v.len() != params.len() {
            return Err(NnError::Uninitialized(format!(
                "{} moment arrays for {} parameters",
                self.m.len(),
                params.len()
            )));
        }
        for ((p, m), v) in params.iter().zip(&self.m).zip(&self.v) {
            if p.value.shape() != m.shape() || p.value.shape() != v.shape() {
                return Err(NnError::Uninitialized(format!(
                    "{}: parameter {:?} vs moments {:?}/{:?}",
                    p.name,
                    p.value.shape(),
                    m.shape(),
                    v.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn step(&mut self, params: &mut ParamStore<F>) -> Result<()> {
        self.check(params)?;
        self.step += 1;
        let t = self.step as i32;
        let bc1 = F::from_f64_lossy(1.0 - self.beta1.powi(t));
        let bc2 = F::from_f64_lossy(1.0 - self.beta2.powi(t));
        let (b1, b2) = (F::from_f64_lossy(self.beta1), F::from_f64_lossy(self.beta2));
        let (one_b1, one_b2) = (F::from_f64_lossy(1.0 - self.beta1), F::from_f64_lossy(1.0 - self.beta2));
        let lr = F::from_f64_lossy(self.lr);
        let eps = F::from_f64_lossy(self.eps);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let grad = p.grad.data();
            let value = p.value.data_mut();
            for (((x, &g), mi), vi) in value
                .iter_mut()
                .zip(grad)
                .zip(m.data_mut().iter_mut())
                .zip(v.data_mut().iter_mut())
            {
                *mi = b1 * *mi + one_b1 * g;
                *vi = b2 * *vi + one_b2 * g * g;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *x -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
