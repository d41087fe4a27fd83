//! Data log-likelihood of a soft permutation.
//!
//! Two relaxations of the hard-sequence likelihood are provided; both are
//! exact at the vertices of the Birkhoff polytope.
//!
//! Log mixing gives position `n` the expected log-density
//! `Σ_j S[n][j]·log p[i][j]`. For individual `i` the stage-`k` term is then
//! `C_i + Σ_{n<k} D[i][n]` with `D = (log_p − log_c)·Sᵀ` and
//! `C_i = Σ_j log_c[i][j]·colsum(S)_j`, one matrix product in all.
//!
//! Density mixing permutes the density tables themselves: position `n` gets
//! `log Σ_j S[n][j]·p[i][j]`. Rows of each table are shifted by their
//! maximum before exponentiating so the products stay in range; entries
//! whose mixed density still underflows are recomputed with a log-sum-exp.

use ndarray::{Array1, Array2, Axis, Zip};

use crate::error::{Result, VebmError};
use crate::numeric::lse;
use crate::types::{EventSequence, LikelihoodTables, Relaxation, SoftPermutation};

/// Mixed densities below this are recomputed in log space.
const DENSITY_FLOOR: f64 = 1e-200;

/// Position-indexed expected log-likelihoods `(log_p·Sᵀ, log_c·Sᵀ)`.
pub fn permuted_tables(
    t: &LikelihoodTables,
    s: &SoftPermutation,
) -> Result<(Array2<f64>, Array2<f64>)> {
    check_dims(t, s.n())?;
    let st = s.matrix().t();
    Ok((t.log_p().dot(&st), t.log_c().dot(&st)))
}

/// `Σ_i log[(1/(N+1)) Σ_k exp(Σ_{n<k} Λᵖ[i][n] + Σ_{n≥k} Λᶜ[i][n])]` with
/// `Λ` from [`permuted_tables`].
pub fn data_loglik(t: &LikelihoodTables, s: &SoftPermutation) -> Result<f64> {
    soft_loglik(t, s, Relaxation::LogMixing)
}

/// Data log-likelihood under either relaxation.
pub fn soft_loglik(
    t: &LikelihoodTables,
    s: &SoftPermutation,
    relaxation: Relaxation,
) -> Result<f64> {
    check_dims(t, s.n())?;
    let m = s.matrix();
    let log_s = m.mapv(f64::ln);
    let (ll, _) = PreparedTables::new(t, relaxation).evaluate(m, &log_s, false);
    if !ll.is_finite() {
        return Err(VebmError::NonFinite("data log-likelihood".into()));
    }
    Ok(ll)
}

fn check_dims(t: &LikelihoodTables, n: usize) -> Result<()> {
    if t.n_features() != n {
        return Err(VebmError::DimensionMismatch(format!(
            "{} features but a {n}x{n} permutation",
            t.n_features()
        )));
    }
    Ok(())
}

/// Per-individual stage sums from position terms: `v_0 = Σ_n b[n]`,
/// `v_{k+1} = v_k + a[k] − b[k]`. Returns `(lse(v), P(stage > n))`.
fn stage_sums(
    a: ndarray::ArrayView1<f64>,
    b: ndarray::ArrayView1<f64>,
    v: &mut [f64],
    later: &mut [f64],
) -> f64 {
    let n = a.len();
    v[0] = b.sum();
    for k in 0..n {
        v[k + 1] = v[k] + a[k] - b[k];
    }
    let z = lse(v);
    let mut acc = 0.0;
    for k in (1..=n).rev() {
        acc += (v[k] - z).exp();
        later[k - 1] = acc;
    }
    z
}

/// Tables rearranged for repeated likelihood and gradient evaluation.
pub(crate) struct PreparedTables<'a> {
    log_p: &'a Array2<f64>,
    log_c: &'a Array2<f64>,
    kind: Prepared,
}

enum Prepared {
    Log {
        diff: Array2<f64>,
        control_totals: Array1<f64>,
    },
    Density {
        /// `exp(log_p − row max)` and the row maxima; likewise for controls.
        q_p: Array2<f64>,
        shift_p: Array1<f64>,
        q_c: Array2<f64>,
        shift_c: Array1<f64>,
    },
}

fn shifted_exp(l: &Array2<f64>) -> (Array2<f64>, Array1<f64>) {
    let shift: Array1<f64> = l
        .outer_iter()
        .map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let mut q = l.clone();
    for (mut row, m) in q.outer_iter_mut().zip(&shift) {
        row.mapv_inplace(|v| (v - m).exp());
    }
    (q, shift)
}

impl<'a> PreparedTables<'a> {
    pub(crate) fn new(t: &'a LikelihoodTables, relaxation: Relaxation) -> Self {
        let kind = match relaxation {
            Relaxation::LogMixing => Prepared::Log {
                diff: t.log_p() - t.log_c(),
                control_totals: t.log_c().sum_axis(Axis(0)),
            },
            Relaxation::DensityMixing => {
                let (q_p, shift_p) = shifted_exp(t.log_p());
                let (q_c, shift_c) = shifted_exp(t.log_c());
                Prepared::Density {
                    q_p,
                    shift_p,
                    q_c,
                    shift_c,
                }
            }
        };
        Self {
            log_p: t.log_p(),
            log_c: t.log_c(),
            kind,
        }
    }

    pub(crate) fn n_events(&self) -> usize {
        self.log_p.ncols()
    }

    /// Log-likelihood at `s` (whose elementwise log is `log_s`) and, if
    /// requested, its gradient with respect to `log S`.
    pub(crate) fn evaluate(
        &self,
        s: &Array2<f64>,
        log_s: &Array2<f64>,
        want_grad: bool,
    ) -> (f64, Option<Array2<f64>>) {
        match &self.kind {
            Prepared::Log {
                diff,
                control_totals,
            } => self.evaluate_log(diff, control_totals, s, want_grad),
            Prepared::Density {
                q_p,
                shift_p,
                q_c,
                shift_c,
            } => {
                let (a, fa) = mixed_log_density(q_p, shift_p, self.log_p, s, log_s);
                let (b, fb) = mixed_log_density(q_c, shift_c, self.log_c, s, log_s);
                let n = s.nrows();
                let log_prior = ((n + 1) as f64).ln();
                let mut v = vec![0.0; n + 1];
                let mut later = vec![0.0; n];
                let mut w_a = want_grad.then(|| Array2::<f64>::zeros(a.dim()));
                let mut w_b = want_grad.then(|| Array2::<f64>::zeros(a.dim()));
                let mut total = 0.0;
                for i in 0..a.nrows() {
                    total += stage_sums(a.row(i), b.row(i), &mut v, &mut later) - log_prior;
                    if let (Some(wa), Some(wb)) = (w_a.as_mut(), w_b.as_mut()) {
                        // P(stage ≤ n) summed from the bottom to avoid 1 − P(stage > n)
                        let mut acc = 0.0;
                        let z = lse(&v);
                        for k in 0..n {
                            acc += (v[k] - z).exp();
                            wb[[i, k]] = acc;
                            wa[[i, k]] = later[k];
                        }
                    }
                }
                let grad = match (w_a, w_b) {
                    (Some(wa), Some(wb)) => {
                        let mut g = Array2::<f64>::zeros(s.dim());
                        mixed_density_grad(&mut g, wa, &a, &fa, q_p, shift_p, self.log_p, s, log_s);
                        mixed_density_grad(&mut g, wb, &b, &fb, q_c, shift_c, self.log_c, s, log_s);
                        Some(g)
                    }
                    _ => None,
                };
                (total, grad)
            }
        }
    }

    fn evaluate_log(
        &self,
        diff: &Array2<f64>,
        control_totals: &Array1<f64>,
        s: &Array2<f64>,
        want_grad: bool,
    ) -> (f64, Option<Array2<f64>>) {
        let n = s.nrows();
        let d = diff.dot(&s.t());
        let c = self.log_c.dot(&s.sum_axis(Axis(0)));
        let log_prior = ((n + 1) as f64).ln();
        let mut g = want_grad.then(|| Array2::<f64>::zeros(d.dim()));
        let mut v = vec![0.0; n + 1];
        let mut total = 0.0;
        for (i, drow) in d.outer_iter().enumerate() {
            v[0] = c[i];
            for k in 0..n {
                v[k + 1] = v[k] + drow[k];
            }
            let z = lse(&v);
            total += z - log_prior;
            if let Some(g) = g.as_mut() {
                // ∂/∂D[i][n] = P(stage > n)
                let mut acc = 0.0;
                let mut grow = g.row_mut(i);
                for k in (1..=n).rev() {
                    acc += (v[k] - z).exp();
                    grow[k - 1] = acc;
                }
            }
        }
        let grad = g.map(|g| {
            let mut ds = g.t().dot(diff);
            ds += control_totals;
            ds * s
        });
        (total, grad)
    }
}

/// `log Σ_j S[n][j]·exp(l[i][j])` for every `(i, n)`, plus the entries that
/// needed the log-space fallback.
fn mixed_log_density(
    q: &Array2<f64>,
    shift: &Array1<f64>,
    l: &Array2<f64>,
    s: &Array2<f64>,
    log_s: &Array2<f64>,
) -> (Array2<f64>, Vec<(usize, usize)>) {
    let mut out = q.dot(&s.t());
    let mut fallback = Vec::new();
    let mut buf = vec![0.0; s.ncols()];
    for ((i, n), v) in out.indexed_iter_mut() {
        if *v > DENSITY_FLOOR {
            *v = shift[i] + v.ln();
        } else {
            for ((b, ls), lv) in buf.iter_mut().zip(log_s.row(n)).zip(l.row(i)) {
                *b = ls + lv;
            }
            *v = lse(&buf);
            fallback.push((i, n));
        }
    }
    (out, fallback)
}

/// Adds `Σ_i w[i][n]·∂a[i][n]/∂log S[n][j]` to `g`, where
/// `∂a[i][n]/∂log S[n][j] = S[n][j]·exp(l[i][j] − a[i][n])`.
#[allow(clippy::too_many_arguments)]
fn mixed_density_grad(
    g: &mut Array2<f64>,
    mut w: Array2<f64>,
    a: &Array2<f64>,
    fallback: &[(usize, usize)],
    q: &Array2<f64>,
    shift: &Array1<f64>,
    l: &Array2<f64>,
    s: &Array2<f64>,
    log_s: &Array2<f64>,
) {
    for &(i, n) in fallback {
        let wv = w[[i, n]];
        for (j, gv) in g.row_mut(n).iter_mut().enumerate() {
            *gv += wv * (log_s[[n, j]] + l[[i, j]] - a[[i, n]]).exp();
        }
        w[[i, n]] = 0.0;
    }
    // w / (a in linear units relative to the row shift)
    Zip::indexed(&mut w).and(a).for_each(|(i, _), wv, &av| {
        if *wv != 0.0 {
            *wv /= (av - shift[i]).exp();
        }
    });
    let mut m = w.t().dot(q);
    m *= s;
    *g += &m;
}

/// Unnormalised log posterior over stages `0..=N` for one individual under a
/// hard sequence.
pub(crate) fn stage_log_weights(t: &LikelihoodTables, seq: &EventSequence, i: usize) -> Vec<f64> {
    let (lp, lc) = (t.log_p().row(i), t.log_c().row(i));
    let mut v = Vec::with_capacity(seq.len() + 1);
    let mut acc: f64 = lc.sum();
    v.push(acc);
    for &e in seq.order() {
        acc += lp[e] - lc[e];
        v.push(acc);
    }
    v
}
