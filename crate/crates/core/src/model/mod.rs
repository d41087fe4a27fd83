//! The variational event-based model: soft likelihood, ELBO, optimisation
//! loop, staging and posterior sampling.

mod adam;
mod likelihood;
mod objective;

pub use adam::Adam;
pub use likelihood::{data_loglik, permuted_tables, soft_loglik};
pub use objective::{elbo, elbo_grad};

use ndarray::{Array2, Axis, Zip};
use rayon::prelude::*;

use crate::error::{Result, VebmError};
use crate::mixture::{build_tables, fit_mixtures};
use crate::numeric::lse;
use crate::rng::SeededRng;
use crate::transport::{gumbel_noise, hungarian, soft_to_sequence, SinkhornTape};
use crate::types::{
    validate_dataset, Dataset, EventSequence, FittedModel, LikelihoodTables, MixtureParams,
    ModelConfig, ScoreInit, SoftPermutation, StagePosterior,
};

use objective::Objective;

/// Stream label for the per-step Gumbel draws during fitting.
const FIT_NOISE_STREAM: u64 = 1;

/// Result of optimising the score matrix against fixed tables.
#[derive(Clone, Debug)]
pub struct Inference {
    pub x_scores: Array2<f64>,
    pub soft_perm: SoftPermutation,
    pub sequence: EventSequence,
    pub elbo_trace: Vec<f64>,
}

/// Fits mixtures, builds tables and optimises the ELBO.
pub fn fit(d: &Dataset, cfg: &ModelConfig) -> Result<FittedModel> {
    cfg.validate()?;
    validate_dataset(d)?;
    let mixtures = fit_mixtures(d)?;
    let tables = build_tables(d, &mixtures)?;
    let inf = infer(&tables, cfg)?;
    Ok(FittedModel {
        x_scores: inf.x_scores,
        soft_perm: inf.soft_perm,
        sequence: inf.sequence,
        mixtures,
        elbo_trace: inf.elbo_trace,
        config: cfg.clone(),
    })
}

/// The optimisation loop alone, on precomputed tables.
pub fn infer(t: &LikelihoodTables, cfg: &ModelConfig) -> Result<Inference> {
    let n = t.n_features();
    let x0 = match cfg.init {
        ScoreInit::Zero => Array2::zeros((n, n)),
        ScoreInit::EventFrequency => event_frequency_scores(t),
    };
    infer_from(t, cfg, x0)
}

/// [`infer`] from a given starting score matrix; `cfg.init` is ignored.
pub fn infer_from(t: &LikelihoodTables, cfg: &ModelConfig, x0: Array2<f64>) -> Result<Inference> {
    let obj = Objective::new(t, cfg)?;
    let n = t.n_features();
    if x0.dim() != (n, n) {
        return Err(VebmError::DimensionMismatch(format!(
            "initial scores {:?} for {n} events",
            x0.dim()
        )));
    }
    let mut x = x0;
    let mut adam = Adam::new((n, n), cfg.learning_rate);
    let mut rng = SeededRng::new(cfg.seed).fork(FIT_NOISE_STREAM);
    let mut trace = Vec::with_capacity(cfg.n_opt);
    for _ in 0..cfg.n_opt {
        let eps = cfg.use_gumbel_noise.then(|| gumbel_noise(n, &mut rng));
        let (value, grad) = obj.evaluate(&x, eps.as_ref(), true)?;
        trace.push(value);
        adam.ascend(&mut x, &grad.expect("gradient requested"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(VebmError::NonFinite(
            "score matrix after optimisation".into(),
        ));
    }
    let soft_perm = SinkhornTape::forward(&x / cfg.tau, cfg.n_s)?.soft_permutation();
    let sequence = soft_to_sequence(&soft_perm, cfg.decoder)?;
    Ok(Inference {
        x_scores: x,
        soft_perm,
        sequence,
        elbo_trace: trace,
    })
}

/// Scores peaked around the ordering of events by how many individuals look
/// abnormal on each feature: `x[n][j] = −|n − rank_j|`.
fn event_frequency_scores(t: &LikelihoodTables) -> Array2<f64> {
    let n = t.n_features();
    let mut abnormal = vec![0usize; n];
    Zip::from(t.log_p())
        .and(t.log_c())
        .and_broadcast(&ndarray::Array1::from_iter(0..n))
        .for_each(|p, c, &j| {
            if p > c {
                abnormal[j] += 1;
            }
        });
    let mut events: Vec<usize> = (0..n).collect();
    events.sort_by(|&a, &b| abnormal[b].cmp(&abnormal[a]).then(a.cmp(&b)));
    let mut rank = vec![0usize; n];
    for (r, &e) in events.iter().enumerate() {
        rank[e] = r;
    }
    Array2::from_shape_fn((n, n), |(p, e)| -(p as f64 - rank[e] as f64).abs())
}

/// Stage posteriors under the fitted hard sequence.
pub fn stage(fm: &FittedModel, d: &Dataset) -> Result<Vec<StagePosterior>> {
    if d.n_features() != fm.mixtures.len() {
        return Err(VebmError::FeatureMismatch(format!(
            "dataset has {} features, model has {}",
            d.n_features(),
            fm.mixtures.len()
        )));
    }
    let tables = build_tables(d, &fm.mixtures)?;
    stage_with_tables(&tables, &fm.sequence)
}

/// Stage posteriors for every individual of `t` under `seq`.
pub fn stage_with_tables(t: &LikelihoodTables, seq: &EventSequence) -> Result<Vec<StagePosterior>> {
    if t.n_features() != seq.len() {
        return Err(VebmError::FeatureMismatch(format!(
            "{} features for a {}-event sequence",
            t.n_features(),
            seq.len()
        )));
    }
    Ok((0..t.n_individuals())
        .into_par_iter()
        .map(|i| {
            let v = likelihood::stage_log_weights(t, seq, i);
            let z = lse(&v);
            let probabilities: Vec<f64> = v.iter().map(|x| (x - z).exp()).collect();
            let ml_stage = probabilities.iter().enumerate().fold(0, |best, (k, &p)| {
                if p > probabilities[best] {
                    k
                } else {
                    best
                }
            });
            StagePosterior {
                probabilities,
                ml_stage,
            }
        })
        .collect())
}

/// Event-by-position placement counts over Gumbel-perturbed posterior draws.
#[derive(Clone, Debug, PartialEq)]
pub struct PositionalVariance {
    /// `counts[event][position]`
    pub counts: Array2<u64>,
    pub n_samples: u64,
}

impl PositionalVariance {
    /// `F[event][position]`, the fraction of draws placing the event there.
    pub fn frequencies(&self) -> Array2<f64> {
        let n = self.n_samples as f64;
        self.counts.mapv(|c| c as f64 / n)
    }
}

/// Draws `n_samples` hard sequences `hungarian(sinkhorn((X + ε)/τ))` with
/// `τ` and `n_s` taken from `cfg`.
pub fn sample_positional_variance(
    fm: &FittedModel,
    cfg: &ModelConfig,
    n_samples: usize,
    rng: &mut SeededRng,
) -> Result<PositionalVariance> {
    if n_samples == 0 {
        return Err(VebmError::InvalidArgument(
            "n_samples must be at least 1".into(),
        ));
    }
    cfg.validate()?;
    let n = fm.n_events();
    let mut counts = Array2::<u64>::zeros((n, n));
    for _ in 0..n_samples {
        let eps = gumbel_noise(n, rng);
        let tape = SinkhornTape::forward((&fm.x_scores + &eps) / cfg.tau, cfg.n_s)?;
        let seq = hungarian(tape.soft())?;
        for (pos, &e) in seq.order().iter().enumerate() {
            counts[[e, pos]] += 1;
        }
    }
    debug_assert!(counts
        .sum_axis(Axis(1))
        .iter()
        .all(|&c| c == n_samples as u64));
    Ok(PositionalVariance {
        counts,
        n_samples: n_samples as u64,
    })
}

/// Rebuilds a model from stored scores, recomputing the soft permutation and
/// hard sequence from `cfg`.
pub fn model_from_scores(
    x_scores: Array2<f64>,
    mixtures: MixtureParams,
    elbo_trace: Vec<f64>,
    cfg: ModelConfig,
) -> Result<FittedModel> {
    cfg.validate()?;
    let n = x_scores.nrows();
    if x_scores.ncols() != n || mixtures.len() != n {
        return Err(VebmError::DimensionMismatch(format!(
            "scores {:?} with {} mixtures",
            x_scores.dim(),
            mixtures.len()
        )));
    }
    let soft_perm = SinkhornTape::forward(&x_scores / cfg.tau, cfg.n_s)?.soft_permutation();
    let sequence = soft_to_sequence(&soft_perm, cfg.decoder)?;
    Ok(FittedModel {
        x_scores,
        soft_perm,
        sequence,
        mixtures,
        elbo_trace,
        config: cfg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{FeatureMixture, Label};
    use ndarray::array;

    fn toy_model(x: Array2<f64>, tau: f64) -> FittedModel {
        let n = x.nrows();
        let mix = MixtureParams {
            features: vec![
                FeatureMixture {
                    mu_c: 0.0,
                    sigma_c: 1.0,
                    mu_p: 2.0,
                    sigma_p: 1.0,
                    w: 0.5
                };
                n
            ],
        };
        let cfg = ModelConfig {
            tau,
            ..ModelConfig::default()
        };
        model_from_scores(x, mix, vec![], cfg).unwrap()
    }

    #[test]
    fn single_feature_fits_trivially() {
        let d = Dataset::from_nan_missing(
            array![[0.0], [0.1], [-0.1], [2.0], [2.1], [1.9]],
            vec![
                Label::Control,
                Label::Control,
                Label::Control,
                Label::Patient,
                Label::Patient,
                Label::Patient,
            ],
            vec!["a".into()],
        )
        .unwrap();
        let cfg = ModelConfig {
            n_opt: 5,
            ..ModelConfig::default()
        };
        let fm = fit(&d, &cfg).unwrap();
        assert_eq!(fm.sequence.order(), &[0]);
        assert_eq!(fm.elbo_trace.len(), 5);
    }

    #[test]
    fn staging_extremes() {
        let t = LikelihoodTables::new(
            array![[-5.0, -5.0, -5.0], [0.0, 0.0, 0.0]],
            array![[0.0, 0.0, 0.0], [-5.0, -5.0, -5.0]],
        )
        .unwrap();
        let st = stage_with_tables(&t, &EventSequence::new(vec![2, 0, 1]).unwrap()).unwrap();
        assert_eq!(st[0].ml_stage, 0);
        assert_eq!(st[1].ml_stage, 3);
        for s in &st {
            assert!((s.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn all_missing_row_is_uniform() {
        let t = LikelihoodTables::new(Array2::zeros((1, 4)), Array2::zeros((1, 4))).unwrap();
        let st = stage_with_tables(&t, &EventSequence::identity(4)).unwrap();
        assert!(st[0].probabilities.iter().all(|p| (p - 0.2).abs() < 1e-15));
        assert_eq!(st[0].ml_stage, 0);
    }

    #[test]
    fn single_draw_is_a_permutation_indicator() {
        let fm = toy_model(Array2::zeros((4, 4)), 1.0);
        let pv = sample_positional_variance(&fm, &fm.config, 1, &mut SeededRng::new(3)).unwrap();
        assert!(pv.counts.iter().all(|&c| c <= 1));
        assert!(pv.counts.sum_axis(Axis(0)).iter().all(|&c| c == 1));
        assert!(pv.counts.sum_axis(Axis(1)).iter().all(|&c| c == 1));
    }

    #[test]
    fn cold_posterior_concentrates_on_sequence() {
        let seq = EventSequence::new(vec![3, 1, 0, 4, 2]).unwrap();
        let x = seq.to_matrix() * 20.0;
        let fm = toy_model(x, 1.0);
        assert_eq!(fm.sequence, seq);
        let cold = ModelConfig {
            tau: 0.01,
            n_s: 100,
            ..ModelConfig::default()
        };
        let pv = sample_positional_variance(&fm, &cold, 200, &mut SeededRng::new(8)).unwrap();
        let f = pv.frequencies();
        for (pos, &e) in seq.order().iter().enumerate() {
            assert_eq!(f[[e, pos]], 1.0);
        }
        assert!(pv.counts.sum_axis(Axis(1)).iter().all(|&c| c == 200));
    }

    #[test]
    fn stage_rejects_feature_mismatch() {
        let fm = toy_model(Array2::zeros((3, 3)), 1.0);
        let d = Dataset::from_nan_missing(
            array![[0.0, 1.0]],
            vec![Label::Unlabelled],
            vec!["a".into(), "b".into()],
        )
        .unwrap();
        assert!(matches!(stage(&fm, &d), Err(VebmError::FeatureMismatch(_))));
    }
}
