//! Synthetic cross-sectional data from a known event sequence.
//!
//! A random sequence is drawn, each individual gets a uniform stage in
//! `0..=J`, and feature `order[q]` is abnormal for that individual iff
//! `q < stage`. Normal values are `N(0, σ²)`, abnormal values
//! `N(mean_j, σ²)` with `mean_j ~ U(patient_mean_range)` fixed per feature.
//! Individuals in the lowest `control_fraction` of stages are labelled
//! controls, the rest patients.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, VebmError};
use crate::rng::SeededRng;
use crate::types::{Dataset, EventSequence, Label};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_individuals: usize,
    pub n_features: usize,
    pub sigma: f64,
    pub control_fraction: f64,
    pub patient_mean_range: (f64, f64),
    /// Probability that any one cell is missing.
    pub missing_fraction: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_individuals: 100,
            n_features: 10,
            sigma: 0.1,
            control_fraction: 0.2,
            patient_mean_range: (1.0, 3.0),
            missing_fraction: 0.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn new(n_individuals: usize, n_features: usize, sigma: f64, seed: u64) -> Self {
        Self {
            n_individuals,
            n_features,
            sigma,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_individuals < 2 {
            return Err(VebmError::InvalidArgument(
                "need at least 2 individuals".into(),
            ));
        }
        if self.n_features < 1 {
            return Err(VebmError::InvalidArgument("need at least 1 feature".into()));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(VebmError::InvalidArgument(format!(
                "sigma must be positive, got {}",
                self.sigma
            )));
        }
        if !(self.control_fraction > 0.0 && self.control_fraction < 1.0) {
            return Err(VebmError::InvalidArgument(format!(
                "control_fraction must lie in (0, 1), got {}",
                self.control_fraction
            )));
        }
        let (lo, hi) = self.patient_mean_range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(VebmError::InvalidArgument(format!(
                "patient_mean_range must be a finite interval, got ({lo}, {hi})"
            )));
        }
        if !(0.0..1.0).contains(&self.missing_fraction) {
            return Err(VebmError::InvalidArgument(format!(
                "missing_fraction must lie in [0, 1), got {}",
                self.missing_fraction
            )));
        }
        Ok(())
    }

    /// Stages strictly below this value are labelled controls.
    pub fn control_stage_bound(&self) -> f64 {
        self.control_fraction * (self.n_features + 1) as f64
    }
}

#[derive(Clone, Debug)]
pub struct SynthData {
    pub dataset: Dataset,
    pub sequence: EventSequence,
    pub stages: Vec<usize>,
    /// Abnormal-component mean of each feature (indexed by feature).
    pub patient_means: Vec<f64>,
}

pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let (n_i, n_j) = (spec.n_individuals, spec.n_features);
    let root = SeededRng::new(spec.seed);

    let mut rng = root.fork(0);
    let mut order: Vec<usize> = (0..n_j).collect();
    order.shuffle(&mut rng);
    let sequence = EventSequence::new(order)?;
    let positions = sequence.positions();

    let mut rng = root.fork(1);
    let (lo, hi) = spec.patient_mean_range;
    let patient_means: Vec<f64> = (0..n_j)
        .map(|_| lo + (hi - lo) * rng.random::<f64>())
        .collect();

    let mut rng = root.fork(2);
    let stages: Vec<usize> = (0..n_i).map(|_| rng.random_range(0..=n_j)).collect();
    let bound = spec.control_stage_bound();
    let labels = stages
        .iter()
        .map(|&k| {
            if (k as f64) < bound {
                Label::Control
            } else {
                Label::Patient
            }
        })
        .collect();

    let mut rng = root.fork(3);
    let values = Array2::from_shape_fn((n_i, n_j), |(i, j)| {
        let z: f64 = rng.sample(StandardNormal);
        let mean = if positions[j] < stages[i] {
            patient_means[j]
        } else {
            0.0
        };
        mean + spec.sigma * z
    });

    let mut rng = root.fork(4);
    let observed = if spec.missing_fraction > 0.0 {
        Array2::from_shape_simple_fn((n_i, n_j), || rng.random::<f64>() >= spec.missing_fraction)
    } else {
        Array2::from_elem((n_i, n_j), true)
    };

    let names = (0..n_j).map(|j| format!("f{j}")).collect();
    let dataset = Dataset::new(values, observed, labels, names)?;
    Ok(SynthData {
        dataset,
        sequence,
        stages,
        patient_means,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_abnormal_sets_are_prefixes() {
        let spec = SynthSpec::new(200, 8, 1e-6, 3);
        let g = generate(&spec).unwrap();
        for i in 0..200 {
            let k = g.stages[i];
            for (q, &e) in g.sequence.order().iter().enumerate() {
                let v = g.dataset.get(i, e).unwrap();
                assert_eq!(v > g.patient_means[e] / 2.0, q < k, "individual {i}");
            }
        }
    }

    #[test]
    fn twenty_percent_controls_are_stages_up_to_two() {
        let g = generate(&SynthSpec::new(500, 10, 0.5, 1)).unwrap();
        for (k, l) in g.stages.iter().zip(g.dataset.labels()) {
            assert_eq!(*l == Label::Control, *k <= 2);
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let a = generate(&SynthSpec::new(50, 5, 0.3, 9)).unwrap();
        let b = generate(&SynthSpec::new(50, 5, 0.3, 9)).unwrap();
        assert_eq!(a.dataset.values(), b.dataset.values());
        assert_eq!(a.sequence, b.sequence);
        assert_eq!(a.stages, b.stages);
        let c = generate(&SynthSpec::new(50, 5, 0.3, 10)).unwrap();
        assert_ne!(a.dataset.values(), c.dataset.values());
    }

    #[test]
    fn missing_fraction_masks_cells_only() {
        let full = generate(&SynthSpec::new(400, 5, 0.3, 2)).unwrap();
        let spec = SynthSpec {
            missing_fraction: 0.25,
            ..SynthSpec::new(400, 5, 0.3, 2)
        };
        let holes = generate(&spec).unwrap();
        let missing = holes.dataset.observed().iter().filter(|o| !**o).count();
        let frac = missing as f64 / 2000.0;
        assert!((frac - 0.25).abs() < 0.04, "{frac}");
        assert_eq!(full.dataset.values(), holes.dataset.values());
    }

    #[test]
    fn invalid_specs() {
        assert!(generate(&SynthSpec::new(1, 5, 0.1, 0)).is_err());
        assert!(generate(&SynthSpec::new(10, 0, 0.1, 0)).is_err());
        let e = generate(&SynthSpec::new(10, 5, 0.0, 0)).unwrap_err();
        assert!(e.to_string().contains("sigma must be positive"));
    }
}
