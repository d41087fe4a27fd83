//! Domain types shared across the crate.

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Result, VebmError};

/// Tolerance on row and column sums for a matrix to count as doubly stochastic.
pub const BIRKHOFF_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Control,
    Patient,
    Unlabelled,
}

/// Cross-sectional observations: one row per individual, one column per
/// feature. Cells with `observed == false` are missing at random.
#[derive(Clone, Debug)]
pub struct Dataset {
    values: Array2<f64>,
    observed: Array2<bool>,
    labels: Vec<Label>,
    feature_names: Vec<String>,
}

impl Dataset {
    /// Checks shapes and finiteness of observed cells. Label composition is
    /// only checked by [`validate_dataset`], since staging data may be
    /// entirely unlabelled.
    pub fn new(
        values: Array2<f64>,
        observed: Array2<bool>,
        labels: Vec<Label>,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        let d = Self {
            values,
            observed,
            labels,
            feature_names,
        };
        d.check_structure()?;
        Ok(d)
    }

    /// Builds a dataset where NaN marks a missing cell.
    pub fn from_nan_missing(
        values: Array2<f64>,
        labels: Vec<Label>,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        let observed = values.mapv(|v| !v.is_nan());
        Self::new(values, observed, labels, feature_names)
    }

    fn check_structure(&self) -> Result<()> {
        let (i, j) = self.values.dim();
        if i == 0 || j == 0 {
            return Err(VebmError::DimensionMismatch(format!(
                "dataset must have at least one individual and one feature, got {i}x{j}"
            )));
        }
        if self.observed.dim() != (i, j) {
            return Err(VebmError::DimensionMismatch(format!(
                "observed mask is {:?}, values are {i}x{j}",
                self.observed.dim()
            )));
        }
        if self.labels.len() != i {
            return Err(VebmError::DimensionMismatch(format!(
                "{} labels for {i} individuals",
                self.labels.len()
            )));
        }
        if self.feature_names.len() != j {
            return Err(VebmError::DimensionMismatch(format!(
                "{} feature names for {j} features",
                self.feature_names.len()
            )));
        }
        for ((r, c), &v) in self.values.indexed_iter() {
            if self.observed[[r, c]] && !v.is_finite() {
                return Err(VebmError::NonFinite(format!(
                    "observed value at individual {r}, feature {c} is {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn n_individuals(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn observed(&self) -> &Array2<bool> {
        &self.observed
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    /// Value of a cell, `None` when missing.
    pub fn get(&self, individual: usize, feature: usize) -> Option<f64> {
        self.observed[[individual, feature]].then(|| self.values[[individual, feature]])
    }

    /// New dataset whose column `k` is this dataset's column `perm[k]`.
    pub fn permute_features(&self, perm: &[usize]) -> Result<Self> {
        EventSequence::new(perm.to_vec())?;
        if perm.len() != self.n_features() {
            return Err(VebmError::LengthMismatch {
                left: perm.len(),
                right: self.n_features(),
            });
        }
        Self::new(
            self.values.select(Axis(1), perm),
            self.observed.select(Axis(1), perm),
            self.labels.clone(),
            perm.iter()
                .map(|&k| self.feature_names[k].clone())
                .collect(),
        )
    }

    /// (controls, patients, unlabelled)
    pub fn label_counts(&self) -> (usize, usize, usize) {
        self.labels.iter().fold((0, 0, 0), |(c, p, u), l| match l {
            Label::Control => (c + 1, p, u),
            Label::Patient => (c, p + 1, u),
            Label::Unlabelled => (c, p, u + 1),
        })
    }
}

/// Full check of a dataset intended for model fitting.
pub fn validate_dataset(d: &Dataset) -> Result<()> {
    d.check_structure()?;
    let (controls, patients, _) = d.label_counts();
    if patients == 0 {
        return Err(VebmError::NoPatients);
    }
    if controls == 0 {
        return Err(VebmError::NoControls);
    }
    Ok(())
}

/// Two-component Gaussian mixture for one feature. `w` is the weight of the
/// patient ("abnormal") component.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureMixture {
    pub mu_c: f64,
    pub sigma_c: f64,
    pub mu_p: f64,
    pub sigma_p: f64,
    pub w: f64,
}

impl FeatureMixture {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.mu_c, self.sigma_c, self.mu_p, self.sigma_p, self.w]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(VebmError::NonFinite(format!("mixture parameters {self:?}")));
        }
        if self.sigma_c <= 0.0 || self.sigma_p <= 0.0 {
            return Err(VebmError::InvalidArgument(format!(
                "mixture standard deviations must be positive: {self:?}"
            )));
        }
        if !(0.0..=1.0).contains(&self.w) {
            return Err(VebmError::InvalidArgument(format!(
                "mixture weight {} outside [0, 1]",
                self.w
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MixtureParams {
    pub features: Vec<FeatureMixture>,
}

impl MixtureParams {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

/// Per-cell log-densities under the patient and control components.
/// Missing cells hold 0 in both tables so they cancel everywhere.
#[derive(Clone, Debug, PartialEq)]
pub struct LikelihoodTables {
    log_p: Array2<f64>,
    log_c: Array2<f64>,
}

impl LikelihoodTables {
    pub fn new(log_p: Array2<f64>, log_c: Array2<f64>) -> Result<Self> {
        if log_p.dim() != log_c.dim() {
            return Err(VebmError::DimensionMismatch(format!(
                "patient table {:?} vs control table {:?}",
                log_p.dim(),
                log_c.dim()
            )));
        }
        if log_p.is_empty() {
            return Err(VebmError::Empty("likelihood tables"));
        }
        if let Some(v) = log_p.iter().chain(log_c.iter()).find(|v| !v.is_finite()) {
            return Err(VebmError::NonFinite(format!("likelihood table entry {v}")));
        }
        Ok(Self {
            log_p: log_p.as_standard_layout().into_owned(),
            log_c: log_c.as_standard_layout().into_owned(),
        })
    }

    pub fn log_p(&self) -> &Array2<f64> {
        &self.log_p
    }

    pub fn log_c(&self) -> &Array2<f64> {
        &self.log_c
    }

    pub fn n_individuals(&self) -> usize {
        self.log_p.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.log_p.ncols()
    }
}

/// Point in (or, for short Sinkhorn runs, near) the Birkhoff polytope.
/// Rows index sequence positions, columns index events.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftPermutation {
    matrix: Array2<f64>,
}

impl SoftPermutation {
    /// Validates non-negativity and unit row/column sums within
    /// [`BIRKHOFF_TOLERANCE`].
    pub fn new(matrix: Array2<f64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() || matrix.is_empty() {
            return Err(VebmError::DimensionMismatch(format!(
                "soft permutation must be square and non-empty, got {:?}",
                matrix.dim()
            )));
        }
        if let Some(v) = matrix.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(VebmError::NotDoublyStochastic(format!("entry {v}")));
        }
        let s = Self { matrix };
        let err = s.max_marginal_error();
        if err > BIRKHOFF_TOLERANCE {
            return Err(VebmError::NotDoublyStochastic(format!(
                "marginal error {err:e} exceeds {BIRKHOFF_TOLERANCE:e}"
            )));
        }
        Ok(s)
    }

    /// Sinkhorn output with few iterations may miss the column constraint;
    /// callers that need membership should check [`Self::max_marginal_error`].
    pub(crate) fn from_sinkhorn(matrix: Array2<f64>) -> Self {
        Self { matrix }
    }

    /// Vertex of the polytope for a hard sequence.
    pub fn from_sequence(seq: &EventSequence) -> Self {
        Self {
            matrix: seq.to_matrix(),
        }
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            matrix: Array2::from_elem((n, n), 1.0 / n as f64),
        }
    }

    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> Array2<f64> {
        self.matrix
    }

    /// Largest deviation of any row or column sum from 1.
    pub fn max_marginal_error(&self) -> f64 {
        let rows = self.matrix.sum_axis(Axis(1));
        let cols = self.matrix.sum_axis(Axis(0));
        rows.iter()
            .chain(cols.iter())
            .map(|s| (s - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Hard ordering of events: `order[position] = event`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct EventSequence {
    order: Vec<usize>,
}

impl EventSequence {
    pub fn new(order: Vec<usize>) -> Result<Self> {
        if order.is_empty() {
            return Err(VebmError::Empty("event sequence"));
        }
        let n = order.len();
        let mut seen = vec![false; n];
        for &e in &order {
            if e >= n || seen[e] {
                return Err(VebmError::NotAPermutation(format!("{order:?}")));
            }
            seen[e] = true;
        }
        Ok(Self { order })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            order: (0..n).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Event at a sequence position.
    pub fn event_at(&self, position: usize) -> usize {
        self.order[position]
    }

    /// Inverse permutation: `positions()[event] = position`.
    pub fn positions(&self) -> Vec<usize> {
        let mut pos = vec![0; self.order.len()];
        for (p, &e) in self.order.iter().enumerate() {
            pos[e] = p;
        }
        pos
    }

    /// Permutation matrix with `m[position][event] = 1`.
    pub fn to_matrix(&self) -> Array2<f64> {
        let n = self.order.len();
        let mut m = Array2::zeros((n, n));
        for (p, &e) in self.order.iter().enumerate() {
            m[[p, e]] = 1.0;
        }
        m
    }

    /// Swaps the events at two positions.
    pub fn swap_positions(&mut self, a: usize, b: usize) {
        self.order.swap(a, b);
    }
}

impl TryFrom<Vec<usize>> for EventSequence {
    type Error = VebmError;

    fn try_from(order: Vec<usize>) -> Result<Self> {
        Self::new(order)
    }
}

impl From<EventSequence> for Vec<usize> {
    fn from(s: EventSequence) -> Self {
        s.order
    }
}

/// Starting point for the score matrix.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreInit {
    /// All zeros: the uniform soft permutation, matching the prior.
    #[default]
    Zero,
    /// Scores peaked on the ordering of events by how often each feature
    /// looks abnormal (`log_p > log_c`) across individuals.
    EventFrequency,
}

/// How the final soft permutation is turned into a hard sequence.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decoder {
    /// Maximum-weight assignment on the soft permutation.
    #[default]
    Hungarian,
    /// Sort events by expected position `Sᵀ·[0, 1, …, N-1]`.
    Barycentre,
}

/// How a soft permutation combines the per-event likelihood columns.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relaxation {
    /// Position `n` gets `log Σ_j S[n][j]·p_j`.
    #[default]
    DensityMixing,
    /// Position `n` gets `Σ_j S[n][j]·log p_j`. Cheaper, but the uniform
    /// matrix is a stationary point whenever stage posteriors are sharp.
    LogMixing,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Posterior temperature.
    pub tau: f64,
    /// Prior temperature.
    pub tau_prior: f64,
    /// Sinkhorn passes per evaluation.
    pub n_s: usize,
    /// Optimiser iterations.
    pub n_opt: usize,
    pub learning_rate: f64,
    /// Draw fresh Gumbel noise every optimiser step instead of using ε = 0.
    pub use_gumbel_noise: bool,
    pub seed: u64,
    pub init: ScoreInit,
    pub decoder: Decoder,
    pub relaxation: Relaxation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            tau: 1.0,
            tau_prior: 1.0,
            n_s: 20,
            n_opt: 200,
            learning_rate: 0.1,
            use_gumbel_noise: false,
            seed: 0,
            init: ScoreInit::Zero,
            decoder: Decoder::Hungarian,
            relaxation: Relaxation::DensityMixing,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(VebmError::InvalidArgument(format!(
                    "{name} must be positive and finite, got {v}"
                )))
            }
        };
        positive("tau", self.tau)?;
        positive("tau_prior", self.tau_prior)?;
        positive("learning_rate", self.learning_rate)?;
        if self.n_s == 0 {
            return Err(VebmError::InvalidArgument("n_s must be at least 1".into()));
        }
        if self.n_opt == 0 {
            return Err(VebmError::InvalidArgument(
                "n_opt must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Output of [`crate::model::fit`].
#[derive(Clone, Debug)]
pub struct FittedModel {
    /// Learned score matrix X (positions × events).
    pub x_scores: Array2<f64>,
    /// `sinkhorn(X / τ, n_s)`
    pub soft_perm: SoftPermutation,
    /// Decoded hard sequence.
    pub sequence: EventSequence,
    pub mixtures: MixtureParams,
    /// ELBO at each optimiser step, before the update.
    pub elbo_trace: Vec<f64>,
    pub config: ModelConfig,
}

impl FittedModel {
    pub fn n_events(&self) -> usize {
        self.x_scores.nrows()
    }
}

/// Posterior over stages `0..=N` for one individual.
#[derive(Clone, Debug, PartialEq)]
pub struct StagePosterior {
    pub probabilities: Vec<f64>,
    /// Most probable stage, lowest index on ties.
    pub ml_stage: usize,
}
