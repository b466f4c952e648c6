//! Empirical check of the MMD approximation on tabular MDPs.
//!
//! For pairs of random policies on a small finite MDP, this harness compares
//! two embedding-distance estimators against the exact kernel-trick MMD of
//! the exact occupancy measures:
//!
//! * the single-draw estimator (one state-action pair per episode at a
//!   Geometric(1-gamma) time index), and
//! * the trajectory estimator (discounted feature sums over whole episodes).
//!
//! Both estimators factor through per-atom visitation vectors, so the
//! feature matrix of the S*A atoms is built once per (D, seed) and each
//! embedding is a single matrix-vector product. The module also exposes the
//! exact truncated feature means used to verify the sqrt(2) * gamma^T
//! truncation-bias bound.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::embedding::{exact_mmd, sample_rff, DiscreteDistribution, RffMap};
use crate::env::{random_policy_table, FiniteMdp, PolicyTable};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::seeding::{self, tag};

/// Largest state-action product accepted for exact solves.
pub const DEFAULT_ATOM_CAP: usize = 4096;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepOptions<T: Real> {
    /// Episode length used for sampling and truncation.
    pub horizon: usize,
    /// Kernel bandwidth on the one-hot atoms; defaults to sqrt(S + A).
    pub sigma: Option<T>,
    /// Refuse exact solves above this many state-action atoms.
    pub atom_cap: usize,
    /// Tolerance of the exact occupancy solve.
    pub occupancy_tol: T,
}

impl<T: Real> Default for SweepOptions<T> {
    fn default() -> Self {
        SweepOptions {
            horizon: 200,
            sigma: None,
            atom_cap: DEFAULT_ATOM_CAP,
            occupancy_tol: T::of(1e-12),
        }
    }
}

/// One sweep measurement: absolute estimator errors against the exact MMD.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow<T: Real> {
    pub n_features: usize,
    pub n_samples: usize,
    pub seed_index: usize,
    pub pair_index: usize,
    pub exact: T,
    pub err_single_draw: T,
    pub err_trajectory: T,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepTable<T: Real> {
    pub rows: Vec<SweepRow<T>>,
    pub sigma: T,
    pub horizon: usize,
}

impl<T: Real> SweepTable<T> {
    /// Trajectory-estimator errors at one grid cell.
    pub fn errors_at(&self, n_features: usize, n_samples: usize) -> Vec<T> {
        self.rows
            .iter()
            .filter(|r| r.n_features == n_features && r.n_samples == n_samples)
            .map(|r| r.err_trajectory)
            .collect()
    }

    pub fn mean_error_at(&self, n_features: usize, n_samples: usize) -> T {
        let errs = self.errors_at(n_features, n_samples);
        let total: T = errs.iter().copied().sum();
        total / T::from_usize(errs.len().max(1)).unwrap()
    }
}

/// Runs the sweep over every (D, n, seed, pair) combination.
///
/// Draws are shared across feature counts (the visitation vectors are
/// sampled once per (seed, pair, n)), so differences along the D axis
/// reflect feature noise alone.
pub fn theorem1_sweep<T: Real>(
    mdp: &FiniteMdp<T>,
    policy_pairs: &[(PolicyTable<T>, PolicyTable<T>)],
    feature_grid: &[usize],
    sample_grid: &[usize],
    seeds: &[u64],
    options: &SweepOptions<T>,
) -> Result<SweepTable<T>> {
    let n_atoms = mdp.n_states * mdp.n_actions;
    if n_atoms > options.atom_cap {
        return Err(Error::resource(format!(
            "{n_atoms} state-action atoms exceed the exact-solve cap {}",
            options.atom_cap
        )));
    }
    if policy_pairs.is_empty() || feature_grid.is_empty() || sample_grid.is_empty() {
        return Err(Error::domain("sweep grids and policy pairs must be nonempty"));
    }
    let sigma = options.sigma.unwrap_or_else(|| RffMap::<T>::default_sigma(mdp.atom_dim()));
    let atoms = mdp.atoms();

    // Exact MMD values, once per pair.
    let mut exact_values = Vec::with_capacity(policy_pairs.len());
    for (p, q) in policy_pairs {
        let rho_p = mdp.exact_occupancy(p, options.occupancy_tol)?;
        let rho_q = mdp.exact_occupancy(q, options.occupancy_tol)?;
        let dist_p = occupancy_distribution(mdp, &rho_p)?;
        let dist_q = occupancy_distribution(mdp, &rho_q)?;
        exact_values.push(exact_mmd(&dist_p, &dist_q, sigma)?);
    }

    let mut rows = Vec::new();
    for (seed_index, &seed) in seeds.iter().enumerate() {
        // Atom feature matrices, once per (seed, D).
        let feature_maps: Vec<(usize, DMatrix<T>)> = feature_grid
            .iter()
            .map(|&d_feat| {
                let map_seed = seeding::derive_seed(seed, &[tag::SWEEP, d_feat as u64]);
                let rff = sample_rff::<T>(map_seed, d_feat, mdp.atom_dim(), 0, sigma)?;
                Ok((d_feat, rff.atom_features(&atoms)))
            })
            .collect::<Result<_>>()?;

        for (pair_index, (p, q)) in policy_pairs.iter().enumerate() {
            for &n in sample_grid {
                let mut rng = seeding::derive_rng(
                    seed,
                    &[tag::SWEEP, 0x5a, pair_index as u64, n as u64],
                );
                let freq_p = mdp.sample_occupancy_frequencies(p, n, options.horizon, &mut rng);
                let freq_q = mdp.sample_occupancy_frequencies(q, n, options.horizon, &mut rng);
                let visit_p = mdp.sample_discounted_visitation(p, n, options.horizon, &mut rng);
                let visit_q = mdp.sample_discounted_visitation(q, n, options.horizon, &mut rng);

                for (d_feat, phi_matrix) in &feature_maps {
                    let dist_single =
                        (phi_matrix.tr_mul(&freq_p) - phi_matrix.tr_mul(&freq_q)).norm();
                    let dist_traj =
                        (phi_matrix.tr_mul(&visit_p) - phi_matrix.tr_mul(&visit_q)).norm();
                    let exact = exact_values[pair_index];
                    rows.push(SweepRow {
                        n_features: *d_feat,
                        n_samples: n,
                        seed_index,
                        pair_index,
                        exact,
                        err_single_draw: (dist_single - exact).abs(),
                        err_trajectory: (dist_traj - exact).abs(),
                    });
                }
            }
        }
    }
    Ok(SweepTable { rows, sigma, horizon: options.horizon })
}

/// Wraps an exact occupancy table as an explicit finite distribution over
/// one-hot atoms. The truncated solve leaves a tiny geometric-tail deficit,
/// so weights are rescaled to sum to one.
pub fn occupancy_distribution<T: Real>(
    mdp: &FiniteMdp<T>,
    rho: &DMatrix<T>,
) -> Result<DiscreteDistribution<T>> {
    let mut weights = Vec::with_capacity(mdp.n_states * mdp.n_actions);
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            weights.push(rho[(s, a)]);
        }
    }
    let total: T = weights.iter().copied().sum();
    let weights = weights.into_iter().map(|w| w / total).collect();
    DiscreteDistribution::new(mdp.atoms(), weights)
}

/// Exact mean feature vector under the exact occupancy measure
/// (the infinite-horizon limit of the trajectory features).
pub fn exact_feature_mean<T: Real>(
    mdp: &FiniteMdp<T>,
    policy: &PolicyTable<T>,
    rff: &RffMap<T>,
    tol: T,
) -> Result<DVector<T>> {
    let rho = mdp.exact_occupancy(policy, tol)?;
    let phi_matrix = rff.atom_features(&mdp.atoms());
    let mut vec = DVector::zeros(mdp.n_states * mdp.n_actions);
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            vec[s * mdp.n_actions + a] = rho[(s, a)];
        }
    }
    Ok(phi_matrix.tr_mul(&vec))
}

/// Exact expectation of the truncated trajectory feature
/// `z^T = (1-gamma) sum_{t<T} gamma^t phi(s_t, a_t)`.
pub fn exact_truncated_feature_mean<T: Real>(
    mdp: &FiniteMdp<T>,
    policy: &PolicyTable<T>,
    rff: &RffMap<T>,
    horizon: usize,
) -> Result<DVector<T>> {
    let phi_matrix = rff.atom_features(&mdp.atoms());
    let steps = mdp.stepwise_distributions(policy, horizon);
    let mut weighted = DVector::zeros(mdp.n_states * mdp.n_actions);
    let mut discount = T::one() - mdp.gamma;
    for dist in steps {
        weighted.axpy(discount, &dist, T::one());
        discount *= mdp.gamma;
    }
    Ok(phi_matrix.tr_mul(&weighted))
}

/// Truncation bias allowed by the geometric tail: sqrt(2) * gamma^T.
pub fn truncation_bias_bound<T: Real>(gamma: T, horizon: usize) -> T {
    T::of(2.0).sqrt() * gamma.powi(horizon as i32)
}

/// Random policy pairs for a sweep.
pub fn random_policy_pairs<T: Real>(
    mdp: &FiniteMdp<T>,
    n_pairs: usize,
    seed: u64,
) -> Vec<(PolicyTable<T>, PolicyTable<T>)> {
    let mut rng = seeding::derive_rng(seed, &[tag::SWEEP, 0x9a17]);
    (0..n_pairs)
        .map(|_| {
            (
                random_policy_table(mdp.n_states, mdp.n_actions, &mut rng),
                random_policy_table(mdp.n_states, mdp.n_actions, &mut rng),
            )
        })
        .collect()
}
