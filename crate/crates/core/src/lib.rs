//! Variational event-based model (vEBM).
//!
//! Infers the order in which features become abnormal from cross-sectional
//! data. The ordering is relaxed to a doubly stochastic matrix produced by
//! Sinkhorn normalisation of a learnable score matrix, which is fitted by
//! maximising an ELBO with Adam and decoded with the Hungarian algorithm.
//!
//! ```no_run
//! use vebm::{fit, generate, kendalls_tau, ModelConfig, SynthSpec};
//!
//! let data = generate(&SynthSpec::new(100, 10, 0.1, 7)).unwrap();
//! let model = fit(&data.dataset, &ModelConfig::default()).unwrap();
//! let tau = kendalls_tau(&data.sequence, &model.sequence).unwrap();
//! println!("Kendall's tau {tau:.3}");
//! ```

pub mod baseline;
pub mod error;
pub mod eval;
pub mod mixture;
pub mod model;
pub mod numeric;
pub mod rng;
pub mod synth;
pub mod transport;
pub mod types;

pub use baseline::{ebm_fit, ebm_greedy, ebm_mcmc, hard_seq_loglik, GreedyFit, McmcTrace};
pub use error::{Result, VebmError};
pub use eval::{fraction_correct, kendalls_tau, positional_variance_diagram};
pub use mixture::{build_tables, fit_mixtures};
pub use model::{
    data_loglik, elbo, elbo_grad, fit, infer, permuted_tables, sample_positional_variance,
    soft_loglik, stage,
};
pub use numeric::log_sum_exp;
pub use rng::SeededRng;
pub use synth::{generate, SynthData, SynthSpec};
pub use transport::{
    gumbel_noise, hungarian, kl_gumbel_sinkhorn, sinkhorn, soft_to_sequence, ScoreMatrix,
};
pub use types::{
    validate_dataset, Dataset, Decoder, EventSequence, FeatureMixture, FittedModel, Label,
    LikelihoodTables, MixtureParams, ModelConfig, Relaxation, ScoreInit, SoftPermutation,
    StagePosterior,
};
