//! Adam update rule for tabular parameters.

use ndarray::{Array2, Zip};

#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Array2<f64>,
    v: Array2<f64>,
    t: i32,
}

impl Adam {
    pub fn new(learning_rate: f64, dim: (usize, usize)) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: Array2::zeros(dim),
            v: Array2::zeros(dim),
            t: 0,
        }
    }

    /// Moves `params` along `grad` (ascent).
    pub fn ascend(&mut self, params: &mut Array2<f64>, grad: &Array2<f64>) {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let lr = self.learning_rate;
        let eps = self.eps;
        Zip::from(params)
            .and(&mut self.m)
            .and(&mut self.v)
            .and(grad)
            .for_each(|p, m, v, &g| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p += lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
    }

    /// Moves `params` against `grad` (descent).
    pub fn descend(&mut self, params: &mut Array2<f64>, grad: &Array2<f64>) {
        let neg = -grad;
        self.ascend(params, &neg);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn adam_finds_quadratic_maximum() {
        let mut x = array![[3.0, -2.0]];
        let mut opt = Adam::new(0.05, (1, 2));
        for _ in 0..5000 {
            let g = x.mapv(|v| -(v - 1.0));
            opt.ascend(&mut x, &g);
        }
        assert!(x.iter().all(|v| (v - 1.0).abs() < 1e-3));
    }

    #[test]
    fn first_step_has_learning_rate_size() {
        let mut x = array![[0.0]];
        let mut opt = Adam::new(0.1, (1, 1));
        opt.descend(&mut x, &array![[123.0]]);
        assert!((x[[0, 0]] + 0.1).abs() < 1e-9);
    }
}
