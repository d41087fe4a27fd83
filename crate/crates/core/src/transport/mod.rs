//! Entropy-regularised transport over permutations: the Sinkhorn operator,
//! Gumbel perturbations, hard decoding and the variational KL term.

mod hungarian;
mod kl;
mod sinkhorn;

pub use hungarian::hungarian;
pub(crate) use kl::{kl_grad, kl_value};
pub use kl::{kl_gumbel_sinkhorn, kl_gumbel_sinkhorn_grad};
pub use sinkhorn::sinkhorn;
pub(crate) use sinkhorn::SinkhornTape;

use ndarray::Array2;
use rand::Rng;

use crate::error::{Result, VebmError};
use crate::rng::SeededRng;
use crate::types::{Decoder, EventSequence, SoftPermutation};

/// Unnormalised assignment scores X (positions × events).
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMatrix(Array2<f64>);

impl ScoreMatrix {
    pub fn new(x: Array2<f64>) -> Result<Self> {
        if x.is_empty() || x.nrows() != x.ncols() {
            return Err(VebmError::DimensionMismatch(format!(
                "score matrix must be square and non-empty, got {:?}",
                x.dim()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(VebmError::NonFinite("score matrix entry".into()));
        }
        Ok(Self(x))
    }

    pub fn zeros(n: usize) -> Self {
        Self(Array2::zeros((n, n)))
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }
}

/// Standard Gumbel variate from a uniform draw, `−ln(−ln u)`. `u` is clamped
/// into the open unit interval.
#[inline]
pub fn gumbel_from_uniform(u: f64) -> f64 {
    let u = u.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON);
    -(-u.ln()).ln()
}

/// `n × n` matrix of i.i.d. standard Gumbel noise.
pub fn gumbel_noise(n: usize, rng: &mut SeededRng) -> Array2<f64> {
    Array2::from_shape_simple_fn((n, n), || gumbel_from_uniform(rng.random::<f64>()))
}

/// Hard sequence from a soft permutation.
pub fn soft_to_sequence(s: &SoftPermutation, decoder: Decoder) -> Result<EventSequence> {
    match decoder {
        Decoder::Hungarian => hungarian(s.matrix()),
        Decoder::Barycentre => {
            let m = s.matrix();
            let n = m.nrows();
            let expected: Vec<f64> = (0..n)
                .map(|e| (0..n).map(|p| p as f64 * m[[p, e]]).sum())
                .collect();
            let mut events: Vec<usize> = (0..n).collect();
            events.sort_by(|&a, &b| expected[a].total_cmp(&expected[b]).then(a.cmp(&b)));
            EventSequence::new(events)
        }
    }
}
