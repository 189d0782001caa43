use crate::tensor::ParamStore;

/// Adam with bias correction. A nonzero `weight_decay` adds `wd·p` to each
/// gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub m: ParamStore,
    pub v: ParamStore,
    pub t: u64,
}

impl Adam {
    pub fn new(like: &ParamStore, beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        Adam {
            beta1,
            beta2,
            eps,
            weight_decay,
            m: like.zeros_like(),
            v: like.zeros_like(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &ParamStore, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let ((b1, b2), (eps, wd)) = ((self.beta1, self.beta2), (self.eps, self.weight_decay));
        for ((name, p), ((_, m), (_, v))) in params
            .iter_mut()
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let g = grads.get(name).expect("gradient for every parameter");
            let (p, m, v) = (p.data_mut(), m.data_mut(), v.data_mut());
            for i in 0..p.len() {
                let gi = g.data()[i] + wd * p[i];
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn zero_gradient_keeps_parameters() {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::from_fn(&[3], |i| i as f64 - 1.0));
        let before = p.clone();
        let mut adam = Adam::new(&p, 0.9, 0.999, 1e-8, 0.0);
        let zero = p.zeros_like();
        adam.step(&mut p, &zero, 1e-3);
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // with bias correction the first update is lr·g/(|g| + eps)
        let mut p = ParamStore::new();
        p.insert("w", Tensor::new(vec![2], vec![1.0, 1.0]).unwrap());
        let mut g = ParamStore::new();
        g.insert("w", Tensor::new(vec![2], vec![0.5, -2.0]).unwrap());
        let mut adam = Adam::new(&p, 0.9, 0.999, 1e-8, 0.0);
        adam.step(&mut p, &g, 0.1);
        let w = p.get("w").unwrap().data();
        assert!((w[0] - 0.9).abs() < 1e-7);
        assert!((w[1] - 1.1).abs() < 1e-7);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = ParamStore::new();
        p.insert("x", Tensor::scalar(3.0));
        let mut adam = Adam::new(&p, 0.9, 0.999, 1e-8, 0.0);
        for _ in 0..2000 {
            let x = p.get("x").unwrap().data()[0];
            let mut g = ParamStore::new();
            g.insert("x", Tensor::scalar(2.0 * (x - 1.0)));
            adam.step(&mut p, &g, 0.01);
        }
        assert!((p.get("x").unwrap().data()[0] - 1.0).abs() < 1e-3);
    }
}
