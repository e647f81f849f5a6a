use super::array::Array;
use super::param::ParamSet;

/// Adam with bias-corrected moment estimates.
#[derive(Clone, Debug)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m: Vec<Array>,
    v: Vec<Array>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Applies one update from the gradients held in `params`.
    pub fn step(&mut self, params: &mut ParamSet) {
        if self.m.len() != params.len() {
            self.m = params.iter().map(|p| Array::zeros(p.value.shape().to_vec())).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let lr = self.learning_rate;
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let grads = p.grad.data();
            let values = p.value.data_mut();
            for (((w, g), m), v) in values
                .iter_mut()
                .zip(grads)
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimises_quadratic() {
        let mut ps = ParamSet::new();
        ps.add("x", Array::from_vec(vec![3.0, -2.0]));
        let mut opt = Adam::new(0.1);
        for _ in 0..500 {
            ps.zero_grad();
            let x = ps.get(0).value.data().to_vec();
            ps.get_mut(0).grad.data_mut().copy_from_slice(&[2.0 * x[0], 2.0 * x[1]]);
            opt.step(&mut ps);
        }
        assert!(ps.get(0).value.data().iter().all(|v| v.abs() < 1e-2));
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut ps = ParamSet::new();
        ps.add("x", Array::from_vec(vec![1.0]));
        ps.get_mut(0).grad.data_mut()[0] = 123.0;
        let mut opt = Adam::new(1e-3);
        opt.step(&mut ps);
        assert!((ps.get(0).value.data()[0] - (1.0 - 1e-3)).abs() < 1e-9);
    }
}
