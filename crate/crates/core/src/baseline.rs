//! Classical event-based model: exact likelihood of a hard sequence, greedy
//! swap search and a Metropolis sampler over permutations.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Result, VebmError};
use crate::rng::SeededRng;
use crate::types::{EventSequence, LikelihoodTables};

/// `Σ_i log[(1/(N+1)) Σ_k exp(P_i[k] + C_i[k])]` where `P_i[k]` sums the
/// patient log-densities of the first `k` events of `s` and `C_i[k]` the
/// control log-densities of the rest.
pub fn hard_seq_loglik(t: &LikelihoodTables, s: &EventSequence) -> Result<f64> {
    if t.n_features() != s.len() {
        return Err(VebmError::DimensionMismatch(format!(
            "{} features but a {}-event sequence",
            t.n_features(),
            s.len()
        )));
    }
    Ok(loglik_unchecked(t, s.order()))
}

fn loglik_unchecked(t: &LikelihoodTables, order: &[usize]) -> f64 {
    let n = order.len();
    let log_prior = ((n + 1) as f64).ln();
    let (lp, lc) = (t.log_p(), t.log_c());
    let (lp, lc) = (
        lp.as_slice().expect("tables are standard layout"),
        lc.as_slice().expect("tables are standard layout"),
    );
    let mut prefix_p = vec![0.0; n + 1];
    let mut suffix_c = vec![0.0; n + 1];
    let mut stage = vec![0.0; n + 1];
    let mut total = 0.0;
    for (lp, lc) in lp.chunks_exact(n).zip(lc.chunks_exact(n)) {
        for (k, &e) in order.iter().enumerate() {
            prefix_p[k + 1] = prefix_p[k] + lp[e];
        }
        for (k, &e) in order.iter().enumerate().rev() {
            suffix_c[k] = suffix_c[k + 1] + lc[e];
        }
        let mut mx = f64::NEG_INFINITY;
        for k in 0..=n {
            stage[k] = prefix_p[k] + suffix_c[k];
            mx = mx.max(stage[k]);
        }
        // terms below e^-708 are subnormal and cannot change a sum that
        // already holds the 1 from the maximum
        let sum: f64 = stage
            .iter()
            .map(|v| v - mx)
            .filter(|d| *d > -708.0)
            .map(f64::exp)
            .sum();
        total += mx + sum.ln() - log_prior;
    }
    total
}

/// Two distinct positions, uniform over unordered pairs.
fn propose_swap(n: usize, rng: &mut SeededRng) -> (usize, usize) {
    let a = rng.random_range(0..n);
    let mut b = rng.random_range(0..n - 1);
    if b >= a {
        b += 1;
    }
    (a, b)
}

#[derive(Clone, Debug)]
pub struct GreedyFit {
    /// Best sequence across all starts.
    pub sequence: EventSequence,
    pub log_lik: f64,
    /// Per start, the accepted-state log-likelihood after each iteration
    /// (entry 0 is the random start).
    pub traces: Vec<Vec<f64>>,
}

/// Pairwise-swap hill climbing from `n_seeds` random starts of `n_iter`
/// proposals each. Starts run in parallel on independent forks of `rng`.
pub fn ebm_greedy(
    t: &LikelihoodTables,
    n_iter: usize,
    n_seeds: usize,
    rng: &mut SeededRng,
) -> Result<GreedyFit> {
    if n_seeds == 0 {
        return Err(VebmError::InvalidArgument(
            "n_seeds must be at least 1".into(),
        ));
    }
    let n = t.n_features();
    let label: u64 = rng.random();
    let base = rng.fork(label);
    let runs: Vec<(Vec<usize>, f64, Vec<f64>)> = (0..n_seeds)
        .into_par_iter()
        .map(|k| {
            let mut rng = base.fork(k as u64);
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let mut current = loglik_unchecked(t, &order);
            let mut trace = Vec::with_capacity(n_iter + 1);
            trace.push(current);
            for _ in 0..n_iter {
                if n >= 2 {
                    let (a, b) = propose_swap(n, &mut rng);
                    order.swap(a, b);
                    let proposed = loglik_unchecked(t, &order);
                    if proposed > current {
                        current = proposed;
                    } else {
                        order.swap(a, b);
                    }
                }
                trace.push(current);
            }
            (order, current, trace)
        })
        .collect();
    let best = runs
        .iter()
        .enumerate()
        .fold(0, |b, (k, r)| if r.1 > runs[b].1 { k } else { b });
    let log_lik = runs[best].1;
    let sequence = EventSequence::new(runs[best].0.clone())?;
    Ok(GreedyFit {
        sequence,
        log_lik,
        traces: runs.into_iter().map(|r| r.2).collect(),
    })
}

#[derive(Clone, Debug)]
pub struct McmcTrace {
    /// Chain state after every `thin`-th step.
    pub samples: Vec<EventSequence>,
    pub log_liks: Vec<f64>,
    pub acceptance_rate: f64,
    pub accepted: usize,
    pub steps: usize,
    /// Highest-likelihood state visited (including the start).
    pub map: EventSequence,
    pub map_log_lik: f64,
}

/// Metropolis chain with uniform pairwise-swap proposals, accepted with
/// probability `min(1, exp(Δ log-lik))`. No burn-in; the MAP is tracked over
/// every step, stored or not.
pub fn ebm_mcmc(
    t: &LikelihoodTables,
    init: &EventSequence,
    n_samples: usize,
    thin: usize,
    rng: &mut SeededRng,
) -> Result<McmcTrace> {
    if n_samples == 0 || thin == 0 {
        return Err(VebmError::InvalidArgument(
            "n_samples and thin must be at least 1".into(),
        ));
    }
    let mut current = hard_seq_loglik(t, init)?;
    let n = init.len();
    let mut order = init.order().to_vec();
    let mut map = order.clone();
    let mut map_log_lik = current;
    let mut samples = Vec::with_capacity(n_samples / thin);
    let mut log_liks = Vec::with_capacity(n_samples / thin);
    let mut accepted = 0;
    for step in 1..=n_samples {
        if n >= 2 {
            let (a, b) = propose_swap(n, rng);
            order.swap(a, b);
            let proposed = loglik_unchecked(t, &order);
            let delta = proposed - current;
            if delta >= 0.0 || rng.random::<f64>() < delta.exp() {
                current = proposed;
                accepted += 1;
                if current > map_log_lik {
                    map_log_lik = current;
                    map.copy_from_slice(&order);
                }
            } else {
                order.swap(a, b);
            }
        } else {
            accepted += 1;
        }
        if step % thin == 0 {
            samples.push(EventSequence::new(order.clone())?);
            log_liks.push(current);
        }
    }
    Ok(McmcTrace {
        samples,
        log_liks,
        acceptance_rate: accepted as f64 / n_samples as f64,
        accepted,
        steps: n_samples,
        map: EventSequence::new(map)?,
        map_log_lik,
    })
}

#[derive(Clone, Debug)]
pub struct BaselineFit {
    pub greedy: GreedyFit,
    pub mcmc: McmcTrace,
    /// MAP of the chain, which starts from the greedy optimum.
    pub sequence: EventSequence,
}

/// Greedy search followed by an MCMC chain started at its result.
pub fn ebm_fit(
    t: &LikelihoodTables,
    n_iter: usize,
    n_seeds: usize,
    n_samples: usize,
    thin: usize,
    rng: &mut SeededRng,
) -> Result<BaselineFit> {
    let greedy = ebm_greedy(t, n_iter, n_seeds, rng)?;
    let mcmc = ebm_mcmc(t, &greedy.sequence, n_samples, thin, rng)?;
    let sequence = mcmc.map.clone();
    Ok(BaselineFit {
        greedy,
        mcmc,
        sequence,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    fn separable_two_events() -> LikelihoodTables {
        // event 1 is abnormal in everyone who shows event 0
        let lp = array![[-0.1, -0.1], [-5.0, -0.1], [-5.0, -5.0], [-5.0, -0.1]];
        let lc = array![[-5.0, -5.0], [-0.1, -5.0], [-0.1, -0.1], [-0.1, -5.0]];
        LikelihoodTables::new(lp, lc).unwrap()
    }

    #[test]
    fn zero_tables_give_zero() {
        let t = LikelihoodTables::new(Array2::zeros((3, 4)), Array2::zeros((3, 4))).unwrap();
        let s = EventSequence::new(vec![2, 3, 0, 1]).unwrap();
        assert_eq!(hard_seq_loglik(&t, &s).unwrap(), 0.0);
    }

    #[test]
    fn greedy_orders_two_events() {
        let t = separable_two_events();
        let right = hard_seq_loglik(&t, &EventSequence::new(vec![1, 0]).unwrap()).unwrap();
        let wrong = hard_seq_loglik(&t, &EventSequence::new(vec![0, 1]).unwrap()).unwrap();
        assert!(right > wrong);
        let g = ebm_greedy(&t, 10, 3, &mut SeededRng::new(1)).unwrap();
        assert_eq!(g.sequence.order(), &[1, 0]);
    }

    #[test]
    fn zero_iterations_keep_best_start() {
        let t = separable_two_events();
        let g = ebm_greedy(&t, 0, 4, &mut SeededRng::new(2)).unwrap();
        assert!(g.traces.iter().all(|tr| tr.len() == 1));
        let best = g
            .traces
            .iter()
            .map(|tr| tr[0])
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(g.log_lik, best);
    }

    #[test]
    fn greedy_traces_are_monotone() {
        let mut rng = SeededRng::new(3);
        let t = LikelihoodTables::new(
            Array2::from_shape_fn((10, 6), |_| -3.0 * rng.random::<f64>()),
            Array2::from_shape_fn((10, 6), |_| -3.0 * rng.random::<f64>()),
        )
        .unwrap();
        let g = ebm_greedy(&t, 200, 4, &mut rng).unwrap();
        for tr in &g.traces {
            assert!(tr.windows(2).all(|w| w[1] >= w[0]));
        }
    }

    #[test]
    fn flat_tables_accept_everything() {
        let t = LikelihoodTables::new(Array2::zeros((2, 4)), Array2::zeros((2, 4))).unwrap();
        let tr = ebm_mcmc(
            &t,
            &EventSequence::identity(4),
            500,
            1,
            &mut SeededRng::new(4),
        )
        .unwrap();
        assert_eq!(tr.acceptance_rate, 1.0);
        assert_eq!(tr.samples.len(), 500);
        assert_eq!(tr.samples.len(), tr.log_liks.len());
    }

    #[test]
    fn mcmc_is_deterministic_and_thins() {
        let t = separable_two_events();
        let init = EventSequence::identity(2);
        let a = ebm_mcmc(&t, &init, 1000, 10, &mut SeededRng::new(5)).unwrap();
        let b = ebm_mcmc(&t, &init, 1000, 10, &mut SeededRng::new(5)).unwrap();
        assert_eq!(a.samples, b.samples);
        assert_eq!(a.log_liks, b.log_liks);
        assert_eq!(a.samples.len(), 100);
        assert_eq!(a.map.order(), &[1, 0]);
        assert_eq!(a.accepted as f64 / a.steps as f64, a.acceptance_rate);
    }

    #[test]
    fn mismatched_sequence_is_rejected() {
        let t = separable_two_events();
        assert!(hard_seq_loglik(&t, &EventSequence::identity(3)).is_err());
    }
}
