//! Tabular MDPs with exact occupancy-measure solves.
//!
//! This is the oracle substrate for the embedding checks: small enough to
//! push state distributions forward exactly, while still supporting seeded
//! Monte Carlo draws from the occupancy measure.

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Row-stochastic policy over a finite MDP: `probs[(s, a)]` is pi(a|s).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyTable<T: Real> {
    pub probs: DMatrix<T>,
}

impl<T: Real> PolicyTable<T> {
    pub fn validate(&self) -> Result<()> {
        let tol = T::of(1e-9);
        for s in 0..self.probs.nrows() {
            let mut sum = T::zero();
            for a in 0..self.probs.ncols() {
                let p = self.probs[(s, a)];
                if p < T::zero() {
                    return Err(Error::domain("policy table has negative probability"));
                }
                sum += p;
            }
            if (sum - T::one()).abs() > tol {
                return Err(Error::domain(format!(
                    "policy table row {s} sums to {} rather than 1",
                    sum.to_f64_lossy()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FiniteMdp<T: Real> {
    pub n_states: usize,
    pub n_actions: usize,
    /// Flat transition tensor indexed as `[s][a][s']`.
    transition: Vec<T>,
    /// Reward table indexed by (state, action).
    pub reward: DMatrix<T>,
    pub initial_dist: DVector<T>,
    pub gamma: T,
}

impl<T: Real> FiniteMdp<T> {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<T>,
        reward: DMatrix<T>,
        initial_dist: DVector<T>,
        gamma: T,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::config("finite MDP needs at least one state and action"));
        }
        if transition.len() != n_states * n_actions * n_states {
            return Err(Error::config("transition tensor has wrong size"));
        }
        if reward.nrows() != n_states || reward.ncols() != n_actions {
            return Err(Error::config("reward table has wrong shape"));
        }
        if initial_dist.len() != n_states {
            return Err(Error::config("initial distribution has wrong length"));
        }
        if !(gamma > T::zero() && gamma < T::one()) {
            return Err(Error::config("gamma must lie in (0, 1)"));
        }
        let mdp = FiniteMdp { n_states, n_actions, transition, reward, initial_dist, gamma };
        let tol = T::of(1e-12);
        for s in 0..n_states {
            for a in 0..n_actions {
                let mut sum = T::zero();
                for sp in 0..n_states {
                    let p = mdp.p(s, a, sp);
                    if p < T::zero() {
                        return Err(Error::config("negative transition probability"));
                    }
                    sum += p;
                }
                if (sum - T::one()).abs() > tol {
                    return Err(Error::config(format!(
                        "transition row ({s},{a}) sums to {}",
                        sum.to_f64_lossy()
                    )));
                }
            }
        }
        let init_sum: T = mdp.initial_dist.iter().copied().sum();
        if (init_sum - T::one()).abs() > tol {
            return Err(Error::config("initial distribution does not sum to 1"));
        }
        Ok(mdp)
    }

    #[inline]
    pub fn p(&self, s: usize, a: usize, sp: usize) -> T {
        self.transition[(s * self.n_actions + a) * self.n_states + sp]
    }

    /// Dimension of the one-hot state-action encoding.
    pub fn atom_dim(&self) -> usize {
        self.n_states + self.n_actions
    }

    /// One-hot encoding of a state-action pair: concatenated state and
    /// action indicators, so distinct atoms sit at distance sqrt(2) or 2.
    pub fn atom_vector(&self, s: usize, a: usize) -> DVector<T> {
        let mut v = DVector::zeros(self.atom_dim());
        v[s] = T::one();
        v[self.n_states + a] = T::one();
        v
    }

    /// All state-action atoms in row-major (s, a) order.
    pub fn atoms(&self) -> Vec<DVector<T>> {
        let mut out = Vec::with_capacity(self.n_states * self.n_actions);
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                out.push(self.atom_vector(s, a));
            }
        }
        out
    }

    /// Pushes the state distribution one step forward under `policy`.
    fn push_forward(&self, dist: &DVector<T>, policy: &PolicyTable<T>) -> DVector<T> {
        let mut next = DVector::zeros(self.n_states);
        for s in 0..self.n_states {
            let ds = dist[s];
            if ds == T::zero() {
                continue;
            }
            for a in 0..self.n_actions {
                let w = ds * policy.probs[(s, a)];
                if w == T::zero() {
                    continue;
                }
                for sp in 0..self.n_states {
                    next[sp] += w * self.p(s, a, sp);
                }
            }
        }
        next
    }

    /// Exact discounted occupancy measure
    /// `rho(s,a) = (1-gamma) * sum_t gamma^t P(S_t=s, A_t=a)`,
    /// computed by iterating state-distribution pushforwards until the
    /// remaining geometric mass `gamma^t` drops below `tol`.
    pub fn exact_occupancy(&self, policy: &PolicyTable<T>, tol: T) -> Result<DMatrix<T>> {
        if !(tol > T::zero()) {
            return Err(Error::domain("tol must be positive"));
        }
        policy.validate()?;
        if policy.probs.nrows() != self.n_states || policy.probs.ncols() != self.n_actions {
            return Err(Error::domain("policy table shape does not match MDP"));
        }
        let mut rho = DMatrix::zeros(self.n_states, self.n_actions);
        let mut dist = self.initial_dist.clone();
        let scale = T::one() - self.gamma;
        let mut discount = T::one();
        while discount >= tol {
            for s in 0..self.n_states {
                for a in 0..self.n_actions {
                    rho[(s, a)] += scale * discount * dist[s] * policy.probs[(s, a)];
                }
            }
            dist = self.push_forward(&dist, policy);
            discount *= self.gamma;
        }
        Ok(rho)
    }

    /// State-action distributions P(S_t, A_t) for t in 0..horizon, flattened
    /// in (s, a) order. Used for exact truncated-feature expectations.
    pub fn stepwise_distributions(
        &self,
        policy: &PolicyTable<T>,
        horizon: usize,
    ) -> Vec<DVector<T>> {
        let mut out = Vec::with_capacity(horizon);
        let mut dist = self.initial_dist.clone();
        for _ in 0..horizon {
            let mut joint = DVector::zeros(self.n_states * self.n_actions);
            for s in 0..self.n_states {
                for a in 0..self.n_actions {
                    joint[s * self.n_actions + a] = dist[s] * policy.probs[(s, a)];
                }
            }
            out.push(joint);
            dist = self.push_forward(&dist, policy);
        }
        out
    }

    fn sample_categorical(&self, probs: impl Iterator<Item = T>, u: T) -> usize {
        let mut acc = T::zero();
        let mut last = 0;
        for (i, p) in probs.enumerate() {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
        last
    }

    fn sample_action(&self, policy: &PolicyTable<T>, s: usize, rng: &mut ChaCha8Rng) -> usize {
        let u = T::uniform_01(rng);
        self.sample_categorical((0..self.n_actions).map(|a| policy.probs[(s, a)]), u)
    }

    fn sample_next(&self, s: usize, a: usize, rng: &mut ChaCha8Rng) -> usize {
        let u = T::uniform_01(rng);
        self.sample_categorical((0..self.n_states).map(|sp| self.p(s, a, sp)), u)
    }

    /// Geometric(1-gamma) time index, truncated at `horizon` by resampling.
    fn sample_time_index(&self, horizon: usize, rng: &mut ChaCha8Rng) -> usize {
        let ln_gamma = self.gamma.ln();
        loop {
            let u = T::uniform_01(rng);
            // floor(ln(1-u)/ln(gamma)) is Geometric(1-gamma) on {0,1,...}.
            let t = ((T::one() - u).ln() / ln_gamma).floor();
            let t = t.to_usize().unwrap_or(horizon);
            if t < horizon {
                return t;
            }
        }
    }

    /// Draws `n` i.i.d. samples from the occupancy measure: each sample is
    /// the state-action pair visited at a Geometric(1-gamma) time index of a
    /// fresh episode. Returns per-atom frequencies (flattened (s, a) order).
    pub fn sample_occupancy_frequencies(
        &self,
        policy: &PolicyTable<T>,
        n: usize,
        horizon: usize,
        rng: &mut ChaCha8Rng,
    ) -> DVector<T> {
        let mut counts = DVector::zeros(self.n_states * self.n_actions);
        let unit = T::one() / T::from_usize(n).unwrap();
        for _ in 0..n {
            let t_idx = self.sample_time_index(horizon, rng);
            let mut s =
                self.sample_categorical(self.initial_dist.iter().copied(), T::uniform_01(rng));
            for _ in 0..t_idx {
                let a = self.sample_action(policy, s, rng);
                s = self.sample_next(s, a, rng);
            }
            let a = self.sample_action(policy, s, rng);
            counts[s * self.n_actions + a] += unit;
        }
        counts
    }

    /// Rolls out `n` episodes of length `horizon` and returns the mean
    /// discounted visitation vector
    /// `(1/n) sum_j (1-gamma) sum_t gamma^t e(s_t, a_t)`.
    ///
    /// The trajectory embedding of the whole batch is this vector times the
    /// atom feature matrix, so callers can defer the (expensive) feature
    /// product to one matrix-vector multiply.
    pub fn sample_discounted_visitation(
        &self,
        policy: &PolicyTable<T>,
        n: usize,
        horizon: usize,
        rng: &mut ChaCha8Rng,
    ) -> DVector<T> {
        let mut counts = DVector::zeros(self.n_states * self.n_actions);
        let scale = (T::one() - self.gamma) / T::from_usize(n).unwrap();
        for _ in 0..n {
            let mut s =
                self.sample_categorical(self.initial_dist.iter().copied(), T::uniform_01(rng));
            let mut discount = T::one();
            for _ in 0..horizon {
                let a = self.sample_action(policy, s, rng);
                counts[s * self.n_actions + a] += scale * discount;
                discount *= self.gamma;
                s = self.sample_next(s, a, rng);
            }
        }
        counts
    }
}

/// Random ergodic MDP for harnesses and tests: transition rows and the
/// initial distribution are normalized uniforms.
pub fn random_finite_mdp<T: Real>(
    n_states: usize,
    n_actions: usize,
    gamma: T,
    rng: &mut ChaCha8Rng,
) -> FiniteMdp<T> {
    let mut transition = Vec::with_capacity(n_states * n_actions * n_states);
    for _ in 0..n_states * n_actions {
        let row: Vec<T> = (0..n_states).map(|_| T::uniform_01(rng) + T::of(1e-3)).collect();
        let sum: T = row.iter().copied().sum();
        // Pin the last entry so the row sums to 1 exactly up to one rounding.
        let mut acc = T::zero();
        for (i, x) in row.iter().enumerate() {
            if i + 1 == n_states {
                transition.push(T::one() - acc);
            } else {
                let p = *x / sum;
                transition.push(p);
                acc += p;
            }
        }
    }
    let reward = DMatrix::from_fn(n_states, n_actions, |_, _| T::uniform_01(rng));
    let raw: Vec<T> = (0..n_states).map(|_| T::uniform_01(rng) + T::of(1e-3)).collect();
    let sum: T = raw.iter().copied().sum();
    let mut initial = DVector::zeros(n_states);
    let mut acc = T::zero();
    for i in 0..n_states {
        if i + 1 == n_states {
            initial[i] = T::one() - acc;
        } else {
            initial[i] = raw[i] / sum;
            acc += initial[i];
        }
    }
    FiniteMdp::new(n_states, n_actions, transition, reward, initial, gamma)
        .expect("random construction is valid")
}

/// Random row-stochastic policy table.
pub fn random_policy_table<T: Real>(
    n_states: usize,
    n_actions: usize,
    rng: &mut ChaCha8Rng,
) -> PolicyTable<T> {
    let mut probs = DMatrix::zeros(n_states, n_actions);
    for s in 0..n_states {
        let row: Vec<T> = (0..n_actions).map(|_| T::uniform_01(rng) + T::of(1e-3)).collect();
        let sum: T = row.iter().copied().sum();
        let mut acc = T::zero();
        for a in 0..n_actions {
            if a + 1 == n_actions {
                probs[(s, a)] = T::one() - acc;
            } else {
                probs[(s, a)] = row[a] / sum;
                acc += probs[(s, a)];
            }
        }
    }
    PolicyTable { probs }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::rng_from_seed;

    #[test]
    fn single_state_single_action_occupancy_is_one() {
        let mdp = FiniteMdp::new(
            1,
            1,
            vec![1.0f64],
            DMatrix::from_element(1, 1, 0.0),
            DVector::from_element(1, 1.0),
            0.9,
        )
        .unwrap();
        let policy = PolicyTable { probs: DMatrix::from_element(1, 1, 1.0) };
        let rho = mdp.exact_occupancy(&policy, 1e-12).unwrap();
        assert!((rho[(0, 0)] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn two_state_cycle_matches_power_iteration_oracle() {
        // Deterministic cycle 0 -> 1 -> 0 with a single action each.
        let mdp = FiniteMdp::new(
            2,
            1,
            vec![0.0, 1.0, 1.0, 0.0],
            DMatrix::from_element(2, 1, 0.0),
            DVector::from_vec(vec![1.0f64, 0.0]),
            0.9,
        )
        .unwrap();
        let policy = PolicyTable { probs: DMatrix::from_element(2, 1, 1.0) };
        let rho = mdp.exact_occupancy(&policy, 1e-12).unwrap();

        // Independent oracle: brute-force the geometric series directly.
        let gamma: f64 = 0.9;
        let mut expect = [0.0f64; 2];
        let mut dist = [1.0f64, 0.0];
        let mut disc = 1.0;
        for _ in 0..2000 {
            expect[0] += (1.0 - gamma) * disc * dist[0];
            expect[1] += (1.0 - gamma) * disc * dist[1];
            dist = [dist[1], dist[0]];
            disc *= gamma;
        }
        assert!((rho[(0, 0)] - expect[0]).abs() < 1e-10);
        assert!((rho[(1, 0)] - expect[1]).abs() < 1e-10);
        // Closed form of the alternating geometric split.
        assert!((expect[0] - 1.0 / (1.0 + gamma)).abs() < 1e-10);
    }

    #[test]
    fn occupancy_sums_to_one() {
        let mut rng = rng_from_seed(2);
        let mdp = random_finite_mdp::<f64>(5, 3, 0.9, &mut rng);
        let policy = random_policy_table(5, 3, &mut rng);
        let rho = mdp.exact_occupancy(&policy, 1e-12).unwrap();
        let total: f64 = rho.iter().sum();
        assert!((total - 1.0).abs() < 1e-10, "total {total}");
    }

    #[test]
    fn non_stochastic_policy_is_rejected() {
        let mut rng = rng_from_seed(3);
        let mdp = random_finite_mdp::<f64>(3, 2, 0.9, &mut rng);
        let policy = PolicyTable { probs: DMatrix::from_element(3, 2, 0.7) };
        assert!(mdp.exact_occupancy(&policy, 1e-10).is_err());
    }

    #[test]
    fn sampled_frequencies_approach_exact_occupancy() {
        let mut rng = rng_from_seed(4);
        let mdp = random_finite_mdp::<f64>(4, 2, 0.9, &mut rng);
        let policy = random_policy_table(4, 2, &mut rng);
        let rho = mdp.exact_occupancy(&policy, 1e-12).unwrap();
        let freq = mdp.sample_occupancy_frequencies(&policy, 40_000, 200, &mut rng);
        for s in 0..4 {
            for a in 0..2 {
                let err = (freq[s * 2 + a] - rho[(s, a)]).abs();
                assert!(err < 0.01, "atom ({s},{a}) err {err}");
            }
        }
    }

    #[test]
    fn discounted_visitation_is_normalized_up_to_truncation() {
        let mut rng = rng_from_seed(5);
        let mdp = random_finite_mdp::<f64>(4, 2, 0.9, &mut rng);
        let policy = random_policy_table(4, 2, &mut rng);
        let horizon = 200;
        let counts = mdp.sample_discounted_visitation(&policy, 50, horizon, &mut rng);
        let total: f64 = counts.iter().sum();
        let expect = 1.0 - 0.9f64.powi(horizon as i32);
        assert!((total - expect).abs() < 1e-9, "total {total}");
    }

    #[test]
    fn stepwise_distributions_are_joint_laws() {
        let mut rng = rng_from_seed(6);
        let mdp = random_finite_mdp::<f64>(3, 3, 0.8, &mut rng);
        let policy = random_policy_table(3, 3, &mut rng);
        for dist in mdp.stepwise_distributions(&policy, 10) {
            let total: f64 = dist.iter().sum();
            assert!((total - 1.0).abs() < 1e-10);
        }
    }
}
