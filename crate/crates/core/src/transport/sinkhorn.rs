//! Log-domain Sinkhorn-Knopp normalisation and its reverse-mode derivative.
//!
//! One pass subtracts the column log-sum-exp and then the row log-sum-exp,
//! so rows of the result sum to 1 exactly and columns converge towards 1.
//! The forward pass records only the normaliser vectors; the backward pass
//! rebuilds every intermediate state from the output by adding them back.

use ndarray::{Array1, Array2};

use crate::error::{Result, VebmError};
use crate::types::SoftPermutation;

use super::ScoreMatrix;

/// `sinkhorn(x / tau)` with `n_s` passes.
pub fn sinkhorn(x: &ScoreMatrix, tau: f64, n_s: usize) -> Result<SoftPermutation> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(VebmError::InvalidArgument(format!(
            "tau must be positive, got {tau}"
        )));
    }
    let l0 = x.as_array() / tau;
    let tape = SinkhornTape::forward(l0, n_s)?;
    Ok(tape.soft_permutation())
}

/// Forward state kept for differentiation.
#[derive(Clone, Debug)]
pub(crate) struct SinkhornTape {
    log_s: Array2<f64>,
    soft: Array2<f64>,
    col_lse: Vec<Array1<f64>>,
    row_lse: Vec<Array1<f64>>,
}

impl SinkhornTape {
    /// Runs `n_s` passes starting from the log-matrix `l0`.
    pub(crate) fn forward(l0: Array2<f64>, n_s: usize) -> Result<Self> {
        if n_s == 0 {
            return Err(VebmError::InvalidArgument("n_s must be at least 1".into()));
        }
        let n = l0.nrows();
        if n == 0 || l0.ncols() != n {
            return Err(VebmError::DimensionMismatch(format!(
                "sinkhorn needs a square non-empty matrix, got {:?}",
                l0.dim()
            )));
        }
        if l0.iter().any(|v| !v.is_finite()) {
            return Err(VebmError::NonFinite(
                "sinkhorn input (tau too small for the score magnitudes?)".into(),
            ));
        }
        let mut log_s = l0.as_standard_layout().into_owned();
        let mut col_lse = Vec::with_capacity(n_s);
        let mut row_lse = Vec::with_capacity(n_s);
        for _ in 0..n_s {
            col_lse.push(normalise_columns(&mut log_s, n));
            row_lse.push(normalise_rows(&mut log_s, n));
        }
        let soft = log_s.mapv(f64::exp);
        if soft.iter().any(|v| !v.is_finite()) || log_s.iter().any(|v| v.is_nan()) {
            return Err(VebmError::NonFinite("sinkhorn intermediate".into()));
        }
        Ok(Self {
            log_s,
            soft,
            col_lse,
            row_lse,
        })
    }

    pub(crate) fn soft(&self) -> &Array2<f64> {
        &self.soft
    }

    pub(crate) fn soft_permutation(self) -> SoftPermutation {
        SoftPermutation::from_sinkhorn(self.soft)
    }

    pub(crate) fn log_soft(&self) -> &Array2<f64> {
        &self.log_s
    }

    /// Maps `∂f/∂S` to `∂f/∂l0`.
    #[cfg(test)]
    pub(crate) fn backward(&self, grad_soft: &Array2<f64>) -> Array2<f64> {
        self.backward_log(grad_soft * &self.soft)
    }

    /// Maps `∂f/∂(log S)` to `∂f/∂l0`.
    pub(crate) fn backward_log(&self, grad_log_soft: Array2<f64>) -> Array2<f64> {
        let n = self.soft.nrows();
        let mut g = grad_log_soft.as_standard_layout().into_owned();
        let mut y = self.log_s.clone();
        let gs = g.as_slice_mut().expect("standard layout");
        let ys = y.as_slice_mut().expect("standard layout");
        let mut col_acc = vec![0.0; n];
        for (cl, rl) in self.col_lse.iter().zip(&self.row_lse).rev() {
            // row step: y = l - lse_row(l)
            for (r, (grow, yrow)) in gs
                .chunks_exact_mut(n)
                .zip(ys.chunks_exact_mut(n))
                .enumerate()
            {
                let sum: f64 = grow.iter().sum();
                let shift = rl[r];
                for (gv, yv) in grow.iter_mut().zip(yrow.iter_mut()) {
                    *gv -= yv.exp() * sum;
                    *yv += shift;
                }
            }
            // column step: y = l - lse_col(l)
            col_acc.iter_mut().for_each(|v| *v = 0.0);
            for grow in gs.chunks_exact(n) {
                for (a, gv) in col_acc.iter_mut().zip(grow) {
                    *a += gv;
                }
            }
            for (grow, yrow) in gs.chunks_exact_mut(n).zip(ys.chunks_exact_mut(n)) {
                for (((gv, yv), a), c) in grow.iter_mut().zip(yrow.iter_mut()).zip(&col_acc).zip(cl)
                {
                    *gv -= yv.exp() * a;
                    *yv += c;
                }
            }
        }
        g
    }
}

fn normalise_rows(m: &mut Array2<f64>, n: usize) -> Array1<f64> {
    let s = m.as_slice_mut().expect("standard layout");
    let mut out = Array1::zeros(n);
    for (row, o) in s.chunks_exact_mut(n).zip(out.iter_mut()) {
        let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - mx).exp()).sum();
        let l = mx + sum.ln();
        row.iter_mut().for_each(|v| *v -= l);
        *o = l;
    }
    out
}

fn normalise_columns(m: &mut Array2<f64>, n: usize) -> Array1<f64> {
    let s = m.as_slice_mut().expect("standard layout");
    let mut mx = vec![f64::NEG_INFINITY; n];
    for row in s.chunks_exact(n) {
        for (a, v) in mx.iter_mut().zip(row) {
            *a = a.max(*v);
        }
    }
    let mut sum = vec![0.0; n];
    for row in s.chunks_exact(n) {
        for ((a, v), m) in sum.iter_mut().zip(row).zip(&mx) {
            *a += (v - m).exp();
        }
    }
    let out: Array1<f64> = mx.iter().zip(&sum).map(|(m, s)| m + s.ln()).collect();
    for row in s.chunks_exact_mut(n) {
        for (v, l) in row.iter_mut().zip(out.iter()) {
            *v -= l;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;
    use ndarray::array;
    use rand::Rng;

    fn random_scores(n: usize, scale: f64, rng: &mut SeededRng) -> ScoreMatrix {
        ScoreMatrix::new(Array2::from_shape_fn((n, n), |_| {
            scale * (rng.random::<f64>() - 0.5)
        }))
        .unwrap()
    }

    #[test]
    fn zero_scores_give_uniform() {
        for tau in [0.01, 1.0, 100.0] {
            let s = sinkhorn(&ScoreMatrix::zeros(2), tau, 1).unwrap();
            assert_eq!(s.matrix(), &array![[0.5, 0.5], [0.5, 0.5]]);
        }
    }

    #[test]
    fn dominant_diagonal_near_identity() {
        // Hand-iterated log-space oracle: the 2x2 symmetric case keeps
        // l = [[a, b], [b, a]] and each normalisation maps a to
        // a - ln(e^a + e^b); the fixed point is S = [[p, q], [q, p]] with
        // p = e^10 / (e^10 + 1).
        let x = ScoreMatrix::new(array![[10.0, 0.0], [0.0, 10.0]]).unwrap();
        let s = sinkhorn(&x, 1.0, 20).unwrap();
        let p = 1.0 / (1.0 + (-10f64).exp());
        assert!((s.matrix()[[0, 0]] - p).abs() < 1e-14);
        assert!((s.matrix()[[0, 1]] - (1.0 - p)).abs() < 1e-14);
        let eye = array![[1.0, 0.0], [0.0, 1.0]];
        assert!((s.matrix() - &eye).iter().all(|d| d.abs() < 1e-4));
    }

    #[test]
    fn rows_exact_and_columns_converged() {
        let mut rng = SeededRng::new(1);
        for n in [1, 3, 8, 25] {
            for _ in 0..20 {
                let x = random_scores(n, 6.0, &mut rng);
                let s = sinkhorn(&x, 1.0, 50).unwrap();
                let rows = s.matrix().sum_axis(ndarray::Axis(1));
                assert!(rows.iter().all(|r| (r - 1.0).abs() < 1e-12));
                assert!(s.max_marginal_error() < 1e-6);
                assert!(s.matrix().iter().all(|&v| v >= 0.0));
            }
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        let x = ScoreMatrix::zeros(3);
        assert!(sinkhorn(&x, 0.0, 5).is_err());
        assert!(sinkhorn(&x, 1.0, 0).is_err());
        let big = ScoreMatrix::new(Array2::from_elem((2, 2), 1e300)).unwrap();
        assert!(matches!(
            sinkhorn(&big, 1e-300, 5),
            Err(VebmError::NonFinite(_))
        ));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = SeededRng::new(9);
        let n = 5;
        let l0 = Array2::from_shape_fn((n, n), |_| 3.0 * (rng.random::<f64>() - 0.5));
        let w = Array2::from_shape_fn((n, n), |_| rng.random::<f64>() - 0.5);
        let f = |l: &Array2<f64>| -> f64 {
            let t = SinkhornTape::forward(l.clone(), 7).unwrap();
            (t.soft() * &w).sum()
        };
        let tape = SinkhornTape::forward(l0.clone(), 7).unwrap();
        let g = tape.backward(&w);
        let h = 1e-5;
        for i in 0..n {
            for j in 0..n {
                let mut lp = l0.clone();
                lp[[i, j]] += h;
                let mut lm = l0.clone();
                lm[[i, j]] -= h;
                let fd = (f(&lp) - f(&lm)) / (2.0 * h);
                assert!(
                    (fd - g[[i, j]]).abs() < 1e-8,
                    "({i},{j}) fd {fd} vs {}",
                    g[[i, j]]
                );
            }
        }
    }
}
