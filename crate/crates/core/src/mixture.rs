//! Per-feature two-component Gaussian mixtures and the likelihood look-up
//! tables built from them.
//!
//! The control component starts from the sample moments of labelled
//! controls and the patient component from labelled patients, which fixes
//! which component means "normal". EM then runs over every observed value of
//! the feature, labelled or not.

use ndarray::Array2;
use rayon::prelude::*;

use crate::error::{Result, VebmError};
use crate::numeric::log_normal_pdf;
use crate::types::{
    validate_dataset, Dataset, FeatureMixture, Label, LikelihoodTables, MixtureParams,
};

/// EM stops once the log-likelihood moves less than this.
pub const EM_TOLERANCE: f64 = 1e-6;
pub const EM_MAX_ITER: usize = 200;
/// Component standard deviations never drop below this multiple of the
/// feature's sample standard deviation.
pub const SIGMA_FLOOR_FRACTION: f64 = 1e-3;

/// One feature's EM result with its log-likelihood history.
#[derive(Clone, Debug)]
pub struct MixtureFit {
    pub params: FeatureMixture,
    /// Observed-data log-likelihood, starting with the initial parameters.
    pub loglik_trace: Vec<f64>,
    pub sigma_floor: f64,
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}

fn mixture_loglik(values: &[f64], m: &FeatureMixture) -> f64 {
    let (lw_p, lw_c) = (m.w.ln(), (1.0 - m.w).ln());
    values
        .iter()
        .map(|&v| {
            let a = lw_p + log_normal_pdf(v, m.mu_p, m.sigma_p);
            let b = lw_c + log_normal_pdf(v, m.mu_c, m.sigma_c);
            log_add(a, b)
        })
        .sum()
}

#[inline]
fn log_add(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Fits the mixture for feature `j`.
pub fn fit_feature(d: &Dataset, j: usize) -> Result<MixtureFit> {
    let mut all = Vec::with_capacity(d.n_individuals());
    let mut controls = Vec::new();
    let mut patients = Vec::new();
    for (i, label) in d.labels().iter().enumerate() {
        if let Some(v) = d.get(i, j) {
            all.push(v);
            match label {
                Label::Control => controls.push(v),
                Label::Patient => patients.push(v),
                Label::Unlabelled => {}
            }
        }
    }
    if controls.len() < 2 || patients.len() < 2 {
        return Err(VebmError::InsufficientData {
            feature: j,
            reason: format!(
                "need at least 2 observed controls and 2 observed patients, got {} and {}",
                controls.len(),
                patients.len()
            ),
        });
    }
    let (_, sd_all) = mean_sd(&all);
    if !(sd_all > 0.0) {
        return Err(VebmError::InsufficientData {
            feature: j,
            reason: "observed values have zero variance".into(),
        });
    }
    let floor = SIGMA_FLOOR_FRACTION * sd_all;

    let (mu_c, sd_c) = mean_sd(&controls);
    let (mu_p, sd_p) = mean_sd(&patients);
    let mut m = FeatureMixture {
        mu_c,
        sigma_c: sd_c.max(floor),
        mu_p,
        sigma_p: sd_p.max(floor),
        w: patients.len() as f64 / (patients.len() + controls.len()) as f64,
    };

    let mut prev = mixture_loglik(&all, &m);
    let mut trace = vec![prev];
    let mut resp = vec![0.0; all.len()];
    for _ in 0..EM_MAX_ITER {
        let (lw_p, lw_c) = (m.w.ln(), (1.0 - m.w).ln());
        for (r, &v) in resp.iter_mut().zip(&all) {
            let a = lw_p + log_normal_pdf(v, m.mu_p, m.sigma_p);
            let b = lw_c + log_normal_pdf(v, m.mu_c, m.sigma_c);
            *r = (a - log_add(a, b)).exp();
        }
        let n_p: f64 = resp.iter().sum();
        let n_c = all.len() as f64 - n_p;
        if !(n_p > f64::MIN_POSITIVE && n_c > f64::MIN_POSITIVE) {
            return Err(VebmError::EmDiverged {
                feature: j,
                reason: format!("a component lost all responsibility (patient mass {n_p})"),
            });
        }
        let mu_p = resp.iter().zip(&all).map(|(r, v)| r * v).sum::<f64>() / n_p;
        let mu_c = resp
            .iter()
            .zip(&all)
            .map(|(r, v)| (1.0 - r) * v)
            .sum::<f64>()
            / n_c;
        let var_p = resp
            .iter()
            .zip(&all)
            .map(|(r, v)| r * (v - mu_p).powi(2))
            .sum::<f64>()
            / n_p;
        let var_c = resp
            .iter()
            .zip(&all)
            .map(|(r, v)| (1.0 - r) * (v - mu_c).powi(2))
            .sum::<f64>()
            / n_c;
        m = FeatureMixture {
            mu_c,
            sigma_c: var_c.sqrt().max(floor),
            mu_p,
            sigma_p: var_p.sqrt().max(floor),
            w: (n_p / all.len() as f64).clamp(0.0, 1.0),
        };
        if m.validate().is_err() {
            return Err(VebmError::EmDiverged {
                feature: j,
                reason: format!("non-finite parameters {m:?}"),
            });
        }
        let ll = mixture_loglik(&all, &m);
        trace.push(ll);
        if (ll - prev).abs() < EM_TOLERANCE {
            break;
        }
        prev = ll;
    }
    Ok(MixtureFit {
        params: m,
        loglik_trace: trace,
        sigma_floor: floor,
    })
}

/// Fits every feature independently (in parallel).
pub fn fit_mixtures(d: &Dataset) -> Result<MixtureParams> {
    validate_dataset(d)?;
    let features = (0..d.n_features())
        .into_par_iter()
        .map(|j| fit_feature(d, j).map(|f| f.params))
        .collect::<Result<Vec<_>>>()?;
    Ok(MixtureParams { features })
}

/// Log-density tables under each component; missing cells are 0 in both.
pub fn build_tables(d: &Dataset, m: &MixtureParams) -> Result<LikelihoodTables> {
    if m.len() != d.n_features() {
        return Err(VebmError::FeatureMismatch(format!(
            "{} mixtures for {} features",
            m.len(),
            d.n_features()
        )));
    }
    for f in &m.features {
        f.validate()?;
    }
    let shape = (d.n_individuals(), d.n_features());
    let mut log_p = Array2::zeros(shape);
    let mut log_c = Array2::zeros(shape);
    for i in 0..shape.0 {
        for (j, f) in m.features.iter().enumerate() {
            if let Some(v) = d.get(i, j) {
                let (p, c) = (
                    log_normal_pdf(v, f.mu_p, f.sigma_p),
                    log_normal_pdf(v, f.mu_c, f.sigma_c),
                );
                if !(p.is_finite() && c.is_finite()) {
                    return Err(VebmError::NonFinite(format!(
                        "log-density at individual {i}, feature {j} (value {v}, {f:?})"
                    )));
                }
                log_p[[i, j]] = p;
                log_c[[i, j]] = c;
            }
        }
    }
    LikelihoodTables::new(log_p, log_c)
}
