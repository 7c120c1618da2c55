use crate::{AdError, AdResult, Real, Tensor};

/// Adam optimizer state over a fixed list of parameter tensors.
///
/// Moment buffers are shaped like their parameters; the step counter is
/// incremented before bias correction.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub learning_rate: T,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(shapes: &[&[usize]], learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self {
            learning_rate: T::from_f64(learning_rate),
            beta1: T::from_f64(beta1),
            beta2: T::from_f64(beta2),
            epsilon: T::from_f64(epsilon),
            step: 0,
            m: shapes.iter().map(|s| Tensor::zeros(s.to_vec())).collect(),
            v: shapes.iter().map(|s| Tensor::zeros(s.to_vec())).collect(),
        }
    }

    /// Standard defaults: lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8.
    pub fn with_defaults(shapes: &[&[usize]]) -> Self {
        Self::new(shapes, 1e-3, 0.9, 0.999, 1e-8)
    }

    /// One bias-corrected update of every parameter in place.
    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[&Tensor<T>]) -> AdResult<()> {
        let mut refs: Vec<&mut Tensor<T>> = params.iter_mut().collect();
        self.step_refs(&mut refs, grads)
    }

    /// As [`AdamState::step`], over mutable references (parameters that live
    /// inside a larger store).
    pub fn step_refs(&mut self, params: &mut [&mut Tensor<T>], grads: &[&Tensor<T>]) -> AdResult<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(AdError::Config(format!(
                "adam state tracks {} tensors, got {} params / {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = T::one() - self.beta1.powi(t);
        let bc2 = T::one() - self.beta2.powi(t);
        let one = T::one();
        for ((p, g), (m, v)) in params
            .iter_mut()
            .map(|p| &mut **p)
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(AdError::Config(format!(
                    "adam shape mismatch: param {:?} grad {:?} moment {:?}",
                    p.shape(),
                    g.shape(),
                    m.shape()
                )));
            }
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut())
                .zip(v.data_mut().iter_mut())
            {
                *mv = self.beta1 * *mv + (one - self.beta1) * gv;
                *vv = self.beta2 * *vv + (one - self.beta2) * gv * gv;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *pv = *pv - self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}
