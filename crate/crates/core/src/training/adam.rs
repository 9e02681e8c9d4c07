use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Adam with bias correction. Moments mirror the parameter shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl Adam {
    pub fn new(lr: f64, params: &[Tensor]) -> Self {
        let zeros = |p: &Tensor| Tensor::zeros(p.rows(), p.cols());
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: params.iter().map(zeros).collect(),
            second: params.iter().map(zeros).collect(),
        }
    }

    pub fn first_moments(&self) -> &[Tensor] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Tensor] {
        &self.second
    }

    /// One update. `names` label parameters in error messages.
    pub fn step(
        &mut self,
        params: &mut [Tensor],
        grads: &[Tensor],
        names: &[String],
    ) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.first.len() {
            return Err(Error::Contract(format!(
                "{} parameters, {} gradients, {} moment slots",
                params.len(),
                grads.len(),
                self.first.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::Dimension {
                    op: "adam_step",
                    left: p.shape(),
                    right: g.shape(),
                });
            }
            if !g.all_finite() {
                let name = names.get(i).cloned().unwrap_or_else(|| format!("#{i}"));
                return Err(Error::NanGradient(name));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            for k in 0..p.len() {
                let gk = g.data()[k];
                let mk = &mut m.data_mut()[k];
                *mk = self.beta1 * *mk + (1.0 - self.beta1) * gk;
                let vk = &mut v.data_mut()[k];
                *vk = self.beta2 * *vk + (1.0 - self.beta2) * gk * gk;
                let m_hat = m.data()[k] / c1;
                let v_hat = v.data()[k] / c2;
                p.data_mut()[k] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
