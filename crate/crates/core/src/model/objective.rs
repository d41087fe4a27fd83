//! Single-sample ELBO over the score matrix and its exact gradient.

use ndarray::Array2;

use crate::error::{Result, VebmError};
use crate::transport::{kl_grad, kl_value, ScoreMatrix, SinkhornTape};
use crate::types::{LikelihoodTables, ModelConfig};

use super::likelihood::PreparedTables;

/// `data_loglik(sinkhorn((x + ε)/τ)) − KL(x)`. `noise` must be given exactly
/// when `cfg.use_gumbel_noise` is set.
pub fn elbo(
    x: &ScoreMatrix,
    t: &LikelihoodTables,
    cfg: &ModelConfig,
    noise: Option<&Array2<f64>>,
) -> Result<f64> {
    Objective::new(t, cfg)?
        .evaluate(x.as_array(), noise, false)
        .map(|(v, _)| v)
}

/// Reverse-mode gradient of [`elbo`] with respect to `x`.
pub fn elbo_grad(
    x: &ScoreMatrix,
    t: &LikelihoodTables,
    cfg: &ModelConfig,
    noise: Option<&Array2<f64>>,
) -> Result<Array2<f64>> {
    let (_, g) = Objective::new(t, cfg)?.evaluate(x.as_array(), noise, true)?;
    Ok(g.expect("gradient requested"))
}

pub(crate) struct Objective<'a> {
    tables: PreparedTables<'a>,
    cfg: &'a ModelConfig,
}

impl<'a> Objective<'a> {
    pub(crate) fn new(t: &'a LikelihoodTables, cfg: &'a ModelConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            tables: PreparedTables::new(t, cfg.relaxation),
            cfg,
        })
    }

    pub(crate) fn evaluate(
        &self,
        x: &Array2<f64>,
        noise: Option<&Array2<f64>>,
        want_grad: bool,
    ) -> Result<(f64, Option<Array2<f64>>)> {
        let n = self.tables.n_events();
        if x.dim() != (n, n) {
            return Err(VebmError::DimensionMismatch(format!(
                "score matrix {:?} for {n} events",
                x.dim()
            )));
        }
        let tau = self.cfg.tau;
        let l0 = match (noise, self.cfg.use_gumbel_noise) {
            (Some(eps), true) => {
                if eps.dim() != x.dim() {
                    return Err(VebmError::DimensionMismatch(format!(
                        "noise {:?} vs scores {:?}",
                        eps.dim(),
                        x.dim()
                    )));
                }
                (x + eps) / tau
            }
            (None, false) => x / tau,
            (Some(_), false) => {
                return Err(VebmError::InvalidArgument(
                    "noise given but use_gumbel_noise is off".into(),
                ))
            }
            (None, true) => {
                return Err(VebmError::InvalidArgument(
                    "use_gumbel_noise is on but no noise was given".into(),
                ))
            }
        };
        let tape = SinkhornTape::forward(l0, self.cfg.n_s)?;
        let (ll, d_log) = self
            .tables
            .evaluate(tape.soft(), tape.log_soft(), want_grad);
        let kl = kl_value(x, tau, self.cfg.tau_prior)?;
        let value = ll - kl;
        if !value.is_finite() {
            return Err(VebmError::NonFinite("ELBO".into()));
        }
        let grad = match d_log {
            Some(dl) => {
                let mut g = tape.backward_log(dl) / tau;
                g -= &kl_grad(x, tau, self.cfg.tau_prior)?;
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(VebmError::NonFinite("ELBO gradient".into()));
                }
                Some(g)
            }
            None => None,
        };
        Ok((value, grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::likelihood::soft_loglik;
    use crate::rng::SeededRng;
    use crate::transport::kl_gumbel_sinkhorn_grad;
    use crate::types::{Relaxation, SoftPermutation};
    use rand::Rng;

    fn random_tables(i: usize, j: usize, rng: &mut SeededRng) -> LikelihoodTables {
        let lp = Array2::from_shape_fn((i, j), |_| -2.0 * rng.random::<f64>());
        let lc = Array2::from_shape_fn((i, j), |_| -2.0 * rng.random::<f64>());
        LikelihoodTables::new(lp, lc).unwrap()
    }

    #[test]
    fn prior_case_is_uniform_loglik() {
        let mut rng = SeededRng::new(1);
        let t = random_tables(6, 4, &mut rng);
        let cfg = ModelConfig::default();
        let v = elbo(&ScoreMatrix::zeros(4), &t, &cfg, None).unwrap();
        let u = soft_loglik(&t, &SoftPermutation::uniform(4), cfg.relaxation).unwrap();
        assert!((v - u).abs() < 1e-12);
    }

    #[test]
    fn noise_must_match_config() {
        let mut rng = SeededRng::new(2);
        let t = random_tables(3, 3, &mut rng);
        let x = ScoreMatrix::zeros(3);
        let eps = Array2::zeros((3, 3));
        assert!(elbo(&x, &t, &ModelConfig::default(), Some(&eps)).is_err());
        let noisy = ModelConfig {
            use_gumbel_noise: true,
            ..ModelConfig::default()
        };
        assert!(elbo(&x, &t, &noisy, None).is_err());
        assert!(elbo(&x, &t, &noisy, Some(&eps)).is_ok());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = SeededRng::new(3);
        for (tau, relaxation) in [0.1, 1.0, 10.0]
            .into_iter()
            .flat_map(|t| [(t, Relaxation::DensityMixing), (t, Relaxation::LogMixing)])
        {
            let t = random_tables(8, 4, &mut rng);
            let cfg = ModelConfig {
                tau,
                relaxation,
                ..ModelConfig::default()
            };
            let x0 = Array2::from_shape_fn((4, 4), |_| rng.random::<f64>() - 0.5);
            let obj = Objective::new(&t, &cfg).unwrap();
            let (_, g) = obj.evaluate(&x0, None, true).unwrap();
            let g = g.unwrap();
            let h = 1e-4;
            let mut fd = Array2::zeros((4, 4));
            for ((a, b), v) in fd.indexed_iter_mut() {
                let mut xp = x0.clone();
                xp[[a, b]] += h;
                let mut xm = x0.clone();
                xm[[a, b]] -= h;
                *v = (obj.evaluate(&xp, None, false).unwrap().0
                    - obj.evaluate(&xm, None, false).unwrap().0)
                    / (2.0 * h);
            }
            let scale = fd.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let err = (&g - &fd).iter().fold(0.0f64, |m, v| m.max(v.abs())) / scale;
            assert!(err < 1e-4, "tau {tau} {relaxation:?}: rel err {err}");
        }
    }

    #[test]
    fn symmetric_point_has_permuted_rows() {
        let col: Vec<f64> = vec![-1.0, -0.2, -3.0, -0.7, -1.5];
        let lp = Array2::from_shape_fn((5, 3), |(i, _)| col[i]);
        let lc = Array2::from_shape_fn((5, 3), |(i, _)| -col[i] * 0.5 - 1.0);
        let t = LikelihoodTables::new(lp, lc).unwrap();
        let g = elbo_grad(&ScoreMatrix::zeros(3), &t, &ModelConfig::default(), None).unwrap();
        let mut rows: Vec<Vec<f64>> = g
            .outer_iter()
            .map(|r| {
                let mut v = r.to_vec();
                v.sort_by(f64::total_cmp);
                v
            })
            .collect();
        let first = rows.remove(0);
        for r in rows {
            for (a, b) in r.iter().zip(&first) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn kl_part_matches_analytic_form() {
        // all-zero tables: the data term is flat so the gradient is −∂KL/∂x
        let t = LikelihoodTables::new(Array2::zeros((2, 3)), Array2::zeros((2, 3))).unwrap();
        let mut rng = SeededRng::new(4);
        let x = ScoreMatrix::new(Array2::from_shape_fn((3, 3), |_| rng.random::<f64>())).unwrap();
        let cfg = ModelConfig {
            tau: 0.5,
            tau_prior: 2.0,
            ..ModelConfig::default()
        };
        let g = elbo_grad(&x, &t, &cfg, None).unwrap();
        let k = kl_gumbel_sinkhorn_grad(&x, 0.5, 2.0).unwrap();
        assert!((&g + &k).iter().all(|v| v.abs() < 1e-12));
    }
}
