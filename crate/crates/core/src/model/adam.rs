use ndarray::{Array2, Zip};

/// Adam state for one matrix parameter.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Array2<f64>,
    v: Array2<f64>,
    t: i32,
}

impl Adam {
    pub fn new(dim: (usize, usize), lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: Array2::zeros(dim),
            v: Array2::zeros(dim),
            t: 0,
        }
    }

    /// Ascent step: moves `param` along `grad`.
    pub fn ascend(&mut self, param: &mut Array2<f64>, grad: &Array2<f64>) {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let (lr, eps) = (self.lr, self.eps);
        Zip::from(param)
            .and(&mut self.m)
            .and(&mut self.v)
            .and(grad)
            .for_each(|p, m, v, &g| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p += lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn first_step_has_size_lr() {
        let mut p = array![[0.0, 0.0]];
        let mut a = Adam::new((1, 2), 0.1);
        a.ascend(&mut p, &array![[3.0, -0.002]]);
        assert!((p[[0, 0]] - 0.1).abs() < 1e-8);
        assert!((p[[0, 1]] + 0.1).abs() < 1e-5);
    }

    #[test]
    fn climbs_a_concave_bowl() {
        let mut p = array![[5.0, -4.0]];
        let mut a = Adam::new((1, 2), 0.1);
        for _ in 0..2000 {
            let g = p.mapv(|x| -2.0 * (x - 1.0));
            a.ascend(&mut p, &g);
        }
        assert!(p.iter().all(|x| (x - 1.0).abs() < 1e-3), "{p}");
    }
}
