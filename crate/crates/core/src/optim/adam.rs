use oarseg_tensor::{Param, Tensor};

/// Adam with bias correction and no weight decay. Moments live in `f32`
/// alongside each parameter; the learning rate is set by the caller before
/// every step.
pub struct Adam {
    params: Vec<Param>,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    steps: u64,
}

pub fn make_optimizer(params: Vec<Param>, lr0: f64) -> Adam {
    Adam::new(params, lr0)
}

impl Adam {
    pub fn new(params: Vec<Param>, lr: f64) -> Self {
        assert!(lr > 0.0, "learning rate must be positive");
        let first = params.iter().map(|p| Tensor::zeros(&p.shape())).collect();
        let second = params.iter().map(|p| Tensor::zeros(&p.shape())).collect();
        Self {
            params,
            first,
            second,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            steps: 0,
        }
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn zero_grad(&self) {
        self.params.iter().for_each(Param::zero_grad);
    }

    /// One update from the gradients currently stored on the parameters.
    pub fn step(&mut self) {
        self.steps += 1;
        let t = self.steps as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let step_size = (self.lr / bc1) as f32;
        let bc2_sqrt = bc2.sqrt() as f32;
        let (b1, b2, eps) = (self.beta1 as f32, self.beta2 as f32, self.eps as f32);
        for ((p, m), v) in self.params.iter().zip(&mut self.first).zip(&mut self.second) {
            p.update(|w, g| {
                let (m, v) = (m.data_mut(), v.data_mut());
                for i in 0..g.numel() {
                    let gi = g.data()[i];
                    m[i] = b1 * m[i] + (1.0 - b1) * gi;
                    v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                    let denom = v[i].sqrt() / bc2_sqrt + eps;
                    w.data_mut()[i] -= step_size * m[i] / denom;
                }
            });
        }
    }

    /// Flattened moment buffers plus the step count, for checkpoints.
    pub fn state(&self) -> (u64, Vec<Tensor>, Vec<Tensor>) {
        (self.steps, self.first.clone(), self.second.clone())
    }

    pub fn load_state(&mut self, steps: u64, first: Vec<Tensor>, second: Vec<Tensor>) {
        assert_eq!(first.len(), self.params.len());
        assert_eq!(second.len(), self.params.len());
        self.steps = steps;
        self.first = first;
        self.second = second;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(v: f32) -> Param {
        Param::new(Tensor::new(vec![1], vec![v]))
    }

    #[test]
    fn one_step_descends_on_square() {
        let p = scalar_param(1.0);
        let mut opt = make_optimizer(vec![p.clone()], 0.1);
        p.accumulate_grad(&Tensor::new(vec![1], vec![2.0]));
        opt.step();
        let w = p.value().data()[0];
        assert!(w.abs() < 1.0);
        assert!((w - 0.9).abs() < 1e-6, "first Adam step moves by lr: {w}");
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let p = Param::new(Tensor::new(vec![3], vec![0.5, -1.0, 2.0]));
        let mut opt = make_optimizer(vec![p.clone()], 0.01);
        for _ in 0..5 {
            opt.zero_grad();
            opt.step();
        }
        assert_eq!(p.value().data(), &[0.5, -1.0, 2.0]);
    }

    #[test]
    fn converges_on_quadratic() {
        // f(x, y) = (x - 1)^2 + 4 (y + 2)^2
        let p = Param::new(Tensor::new(vec![2], vec![-1.0, 1.0]));
        let mut opt = make_optimizer(vec![p.clone()], 0.1);
        let f = |w: &[f32]| (w[0] - 1.0).powi(2) + 4.0 * (w[1] + 2.0).powi(2);
        for _ in 0..200 {
            opt.zero_grad();
            let w = p.value().data().to_vec();
            p.accumulate_grad(&Tensor::new(vec![2], vec![2.0 * (w[0] - 1.0), 8.0 * (w[1] + 2.0)]));
            opt.step();
        }
        let loss = f(p.value().data());
        assert!(loss < 1e-3, "{loss}");
    }
}
