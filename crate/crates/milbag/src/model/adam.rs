//! Adam optimizer over flat parameter lists.

use crate::tensor::{Matrix, TensorError};

use super::{Gradients, MilNetwork, ModelError};

/// Adam with bias-corrected moment estimates. Defaults: beta1 0.9,
/// beta2 0.999, epsilon 1e-8. The learning rate is passed per step.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first_moment: Vec<Matrix>,
    second_moment: Vec<Matrix>,
}

impl Adam {
    pub fn new(param_shapes: &[(usize, usize)]) -> Self {
        let zeros: Vec<Matrix> = param_shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect();
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
        }
    }

    pub fn for_network(net: &MilNetwork) -> Self {
        Self::new(&net.params().iter().map(|m| m.shape()).collect::<Vec<_>>())
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update over a flat parameter list. Parameters and gradients must
    /// line up with the shapes this optimizer was built for.
    pub fn step(
        &mut self,
        params: &mut [&mut Matrix],
        grads: &[&Matrix],
        lr: f64,
    ) -> Result<(), ModelError> {
        if params.len() != self.first_moment.len() || grads.len() != self.first_moment.len() {
            return Err(ModelError::Config(format!(
                "optimizer tracks {} parameters, got {} params and {} grads",
                self.first_moment.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let bias1 = 1.0 - self.beta1.powi(self.step as i32);
        let bias2 = 1.0 - self.beta2.powi(self.step as i32);
        for ((param, grad), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first_moment.iter_mut().zip(&mut self.second_moment))
        {
            if param.shape() != grad.shape() || param.shape() != m.shape() {
                return Err(ModelError::Shape(TensorError::ShapeMismatch {
                    op: "adam_step",
                    left_rows: param.rows(),
                    left_cols: param.cols(),
                    right_rows: grad.rows(),
                    right_cols: grad.cols(),
                }));
            }
            for ((p, &g), (m, v)) in param
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut()))
            {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / bias1;
                let v_hat = *v / bias2;
                *p -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }

    /// Convenience wrapper pairing a network with its gradient bundle.
    pub fn step_network(
        &mut self,
        net: &mut MilNetwork,
        grads: &Gradients,
        lr: f64,
    ) -> Result<(), ModelError> {
        let grad_refs = grads.params();
        let mut param_refs = net.params_mut();
        self.step(&mut param_refs, &grad_refs, lr)
    }
}
