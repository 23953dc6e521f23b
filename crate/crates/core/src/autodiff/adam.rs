use super::Array;

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Array>,
    v: Vec<Array>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: vec![], v: vec![] }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    /// Updates `params` in place. `grads[i]` may be `None` for a parameter
    /// that received no gradient this step (treated as zero).
    pub fn step(&mut self, params: &mut [&mut Array], grads: &[Option<Array>]) {
        assert_eq!(params.len(), grads.len(), "adam: parameter/gradient count");
        if self.m.is_empty() {
            self.m = params.iter().map(|p| Array::zeros(p.raw_dim())).collect();
            self.v = self.m.clone();
        }
        assert_eq!(self.m.len(), params.len(), "adam: parameter set changed between steps");
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (i, p) in params.iter_mut().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            match &grads[i] {
                Some(g) => {
                    assert_eq!(g.shape(), p.shape(), "adam: gradient shape");
                    ndarray::Zip::from(&mut **p).and(&mut *m).and(&mut *v).and(g).for_each(|p, m, v, &g| {
                        *m = b1 * *m + (1.0 - b1) * g;
                        *v = b2 * *v + (1.0 - b2) * g * g;
                        *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
                    });
                }
                None => {
                    ndarray::Zip::from(&mut **p).and(&mut *m).and(&mut *v).for_each(|p, m, v| {
                        *m *= b1;
                        *v *= b2;
                        *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
                    });
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, IxDyn};

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = arr1(&[1.0, -2.0]).into_dyn();
        let before = p.clone();
        let mut opt = Adam::new(1e-3);
        opt.step(&mut [&mut p], &[Some(Array::zeros(IxDyn(&[2])))]);
        assert_eq!(p, before);
    }

    #[test]
    fn descends_on_square() {
        let mut w = arr1(&[1.0]).into_dyn();
        let mut opt = Adam::new(0.1);
        let g = w.mapv(|x| 2.0 * x);
        opt.step(&mut [&mut w], &[Some(g)]);
        assert!(w[0] < 1.0);
    }

    #[test]
    fn converges_on_quadratic() {
        // f(w) = sum_i c_i (w_i - t_i)^2
        let c = [1.0, 3.0, 0.5];
        let t = [0.3, -1.0, 2.0];
        let mut w = Array::zeros(IxDyn(&[3]));
        let mut opt = Adam::new(0.1);
        let grad = |w: &Array| Array::from_shape_fn(IxDyn(&[3]), |i| 2.0 * c[i[0]] * (w[i[0]] - t[i[0]]));
        for _ in 0..200 {
            let g = grad(&w);
            opt.step(&mut [&mut w], &[Some(g)]);
        }
        let gn = grad(&w).mapv(|x| x * x).sum().sqrt();
        assert!(gn < 1e-3, "{gn}");
    }
}
