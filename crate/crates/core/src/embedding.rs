//! Random Fourier features, policy embeddings, and the exact MMD oracle.
//!
//! The feature map phi(s, a) = sqrt(2/D) * cos(W [s;a] + b) with rows of W
//! drawn from N(0, sigma^-2 I) and offsets from U[0, 2pi) approximates the
//! Gaussian kernel k(x, y) = exp(-||x - y||^2 / (2 sigma^2)): inner products
//! of features converge to kernel values as D grows. A policy is embedded as
//! the mean discounted feature vector of its trajectories, so Euclidean
//! distances between embeddings approximate the MMD between the policies'
//! discounted visitation distributions.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::env::Trajectory;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::seeding;

/// Per-coordinate running mean/variance (Welford), used to normalize states
/// before featurization. Starts as the identity transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningNorm<T: Real> {
    pub count: u64,
    pub mean: Vec<T>,
    m2: Vec<T>,
}

impl<T: Real> RunningNorm<T> {
    pub fn new(dim: usize) -> Self {
        RunningNorm { count: 0, mean: vec![T::zero(); dim], m2: vec![T::zero(); dim] }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn observe(&mut self, x: &DVector<T>) {
        debug_assert_eq!(x.len(), self.mean.len());
        self.count += 1;
        let n = T::from_u64(self.count).unwrap();
        for i in 0..self.mean.len() {
            let delta = x[i] - self.mean[i];
            self.mean[i] += delta / n;
            self.m2[i] += delta * (x[i] - self.mean[i]);
        }
    }

    pub fn variance(&self, i: usize) -> T {
        if self.count < 2 {
            T::one()
        } else {
            self.m2[i] / T::from_u64(self.count).unwrap()
        }
    }

    pub fn normalize_into(&self, x: &DVector<T>, out: &mut DVector<T>) {
        let eps = T::of(1e-8);
        if self.count < 2 {
            out.copy_from(x);
            return;
        }
        for i in 0..self.mean.len() {
            out[i] = (x[i] - self.mean[i]) / (self.variance(i) + eps).sqrt();
        }
    }
}

/// Frozen random feature parameters plus the running state normalizer.
/// `W` and `b` are resampled from `seed` on load, so only the seed, the
/// shape, and the normalizer state need to be persisted.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RffMap<T: Real> {
    pub seed: u64,
    pub n_features: usize,
    pub input_dim: usize,
    pub state_dim: usize,
    pub sigma: T,
    #[serde(skip)]
    weights: DMatrix<T>,
    #[serde(skip)]
    offsets: DVector<T>,
    pub normalizer: RunningNorm<T>,
}

/// Samples a fresh feature map: rows of `W` i.i.d. N(0, sigma^-2 I),
/// offsets i.i.d. U[0, 2pi). `state_dim` of the `input_dim` coordinates are
/// normalized; the remaining (action) coordinates pass through raw.
pub fn sample_rff<T: Real>(
    seed: u64,
    n_features: usize,
    input_dim: usize,
    state_dim: usize,
    sigma: T,
) -> Result<RffMap<T>> {
    if n_features == 0 || input_dim == 0 {
        return Err(Error::config("feature count and input dim must be positive"));
    }
    if state_dim > input_dim {
        return Err(Error::config("state_dim cannot exceed input_dim"));
    }
    if !(sigma > T::zero()) {
        return Err(Error::domain("sigma must be positive"));
    }
    let mut map = RffMap {
        seed,
        n_features,
        input_dim,
        state_dim,
        sigma,
        weights: DMatrix::zeros(0, 0),
        offsets: DVector::zeros(0),
        normalizer: RunningNorm::new(state_dim),
    };
    map.resample_features();
    Ok(map)
}

impl<T: Real> RffMap<T> {
    /// Default kernel bandwidth: sqrt of the state-action dimension, on
    /// normalized inputs.
    pub fn default_sigma(input_dim: usize) -> T {
        T::from_usize(input_dim).unwrap().sqrt()
    }

    /// Regenerates `W` and `b` from the stored seed; called after
    /// deserialization.
    pub fn resample_features(&mut self) {
        let mut rng = seeding::rng_from_seed(self.seed);
        let inv_sigma = T::one() / self.sigma;
        self.weights = DMatrix::from_fn(self.n_features, self.input_dim, |_, _| {
            T::standard_normal(&mut rng) * inv_sigma
        });
        let two_pi = T::two_pi();
        self.offsets = DVector::from_fn(self.n_features, |_, _| T::uniform_01(&mut rng) * two_pi);
    }

    pub fn weights(&self) -> &DMatrix<T> {
        &self.weights
    }

    /// phi(s, a): normalizes the state, concatenates the raw action, and
    /// applies the cosine features. Every coordinate lies in
    /// [-sqrt(2/D), sqrt(2/D)].
    pub fn phi(&self, state: &DVector<T>, action: &DVector<T>) -> Result<DVector<T>> {
        if state.len() != self.state_dim || state.len() + action.len() != self.input_dim {
            return Err(Error::config(format!(
                "phi expects state {} + action {} dims, got {} + {}",
                self.state_dim,
                self.input_dim - self.state_dim,
                state.len(),
                action.len()
            )));
        }
        let mut x = DVector::zeros(self.input_dim);
        let mut normed = DVector::zeros(self.state_dim);
        self.normalizer.normalize_into(state, &mut normed);
        x.rows_mut(0, self.state_dim).copy_from(&normed);
        x.rows_mut(self.state_dim, action.len()).copy_from(action);
        Ok(self.phi_raw(&x))
    }

    /// Cosine features of an already-assembled input vector.
    pub fn phi_raw(&self, x: &DVector<T>) -> DVector<T> {
        let mut z = &self.weights * x + &self.offsets;
        let scale = (T::of(2.0) / T::from_usize(self.n_features).unwrap()).sqrt();
        z.apply(|v| *v = v.cos() * scale);
        z
    }

    /// Feature matrix of a fixed atom set (one row per atom). Lets finite
    /// MDP embeddings be computed as `Phi^T . visitation`.
    pub fn atom_features(&self, atoms: &[DVector<T>]) -> DMatrix<T> {
        let mut out = DMatrix::zeros(atoms.len(), self.n_features);
        for (i, atom) in atoms.iter().enumerate() {
            out.row_mut(i).copy_from(&self.phi_raw(atom).transpose());
        }
        out
    }

    /// Discounted feature sum of one episode:
    /// `z = (1-gamma) * sum_t gamma^t phi(s_t, a_t)`, over realized steps.
    pub fn embed_trajectory(&self, traj: &Trajectory<T>, gamma: T) -> Result<DVector<T>> {
        if traj.is_empty() {
            return Err(Error::domain("cannot embed an empty trajectory"));
        }
        if !(gamma > T::zero() && gamma < T::one()) {
            return Err(Error::domain("gamma must lie in (0, 1)"));
        }
        let mut z = DVector::zeros(self.n_features);
        let mut discount = T::one() - gamma;
        for tr in &traj.transitions {
            let phi = self.phi(&tr.state, &tr.action)?;
            z.axpy(discount, &phi, T::one());
            discount *= gamma;
        }
        Ok(z)
    }

    /// Mean trajectory embedding over a batch of episodes.
    pub fn embed_policy(
        &self,
        trajectories: &[Trajectory<T>],
        gamma: T,
    ) -> Result<PolicyEmbedding<T>> {
        if trajectories.is_empty() {
            return Err(Error::domain("cannot embed an empty trajectory set"));
        }
        let mut psi = DVector::zeros(self.n_features);
        for traj in trajectories {
            psi += self.embed_trajectory(traj, gamma)?;
        }
        psi /= T::from_usize(trajectories.len()).unwrap();
        Ok(PolicyEmbedding { psi, n_trajectories: trajectories.len() })
    }

    /// Feeds every state of the batch into the normalizer, in order.
    /// Call between evaluation batches, never during one.
    pub fn observe_trajectories(&mut self, trajectories: &[Trajectory<T>]) {
        for traj in trajectories {
            for tr in &traj.transitions {
                self.normalizer.observe(&tr.state);
            }
        }
    }
}

/// A policy's embedding: the mean discounted feature vector of its rollouts.
/// Its norm never exceeds sqrt(2).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyEmbedding<T: Real> {
    pub psi: DVector<T>,
    pub n_trajectories: usize,
}

/// Euclidean distance between two policy embeddings; approximates the MMD
/// between the underlying occupancy measures.
pub fn rff_mmd<T: Real>(psi1: &DVector<T>, psi2: &DVector<T>) -> Result<T> {
    if psi1.len() != psi2.len() {
        return Err(Error::config("embedding lengths differ"));
    }
    Ok((psi1 - psi2).norm())
}

/// An explicit finite distribution: weighted atoms in R^d.
#[derive(Debug, Clone)]
pub struct DiscreteDistribution<T: Real> {
    pub atoms: Vec<DVector<T>>,
    pub weights: Vec<T>,
}

impl<T: Real> DiscreteDistribution<T> {
    pub fn new(atoms: Vec<DVector<T>>, weights: Vec<T>) -> Result<Self> {
        if atoms.len() != weights.len() || atoms.is_empty() {
            return Err(Error::domain("atoms and weights must be nonempty and equal length"));
        }
        if weights.iter().any(|w| *w < T::zero()) {
            return Err(Error::domain("weights must be nonnegative"));
        }
        let total: T = weights.iter().copied().sum();
        if (total - T::one()).abs() > T::of(1e-9) {
            return Err(Error::domain(format!(
                "weights sum to {}, expected 1",
                total.to_f64_lossy()
            )));
        }
        Ok(DiscreteDistribution { atoms, weights })
    }
}

fn gaussian_kernel<T: Real>(x: &DVector<T>, y: &DVector<T>, sigma: T) -> T {
    let d2 = (x - y).norm_squared();
    (-d2 / (T::of(2.0) * sigma * sigma)).exp()
}

/// Exact MMD between two finite distributions under the Gaussian kernel,
/// via the kernel-trick expansion
/// `MMD^2 = E[k(X,X')] + E[k(Y,Y')] - 2 E[k(X,Y)]`.
/// Tiny negative radicands from floating-point Gram sums (>= -1e-12) are
/// clamped to zero.
pub fn exact_mmd<T: Real>(
    p: &DiscreteDistribution<T>,
    q: &DiscreteDistribution<T>,
    sigma: T,
) -> Result<T> {
    if !(sigma > T::zero()) {
        return Err(Error::domain("sigma must be positive"));
    }
    let mut pp = T::zero();
    for (xi, wi) in p.atoms.iter().zip(&p.weights) {
        for (xj, wj) in p.atoms.iter().zip(&p.weights) {
            pp += *wi * *wj * gaussian_kernel(xi, xj, sigma);
        }
    }
    let mut qq = T::zero();
    for (yi, wi) in q.atoms.iter().zip(&q.weights) {
        for (yj, wj) in q.atoms.iter().zip(&q.weights) {
            qq += *wi * *wj * gaussian_kernel(yi, yj, sigma);
        }
    }
    let mut pq = T::zero();
    for (xi, wi) in p.atoms.iter().zip(&p.weights) {
        for (yj, wj) in q.atoms.iter().zip(&q.weights) {
            pq += *wi * *wj * gaussian_kernel(xi, yj, sigma);
        }
    }
    let radicand = pp + qq - T::of(2.0) * pq;
    if radicand < -T::of(1e-12) {
        return Err(Error::numerical(format!(
            "MMD^2 radicand {} is too negative",
            radicand.to_f64_lossy()
        )));
    }
    Ok(radicand.max(T::zero()).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Transition;

    fn constant_trajectory(len: usize, state: DVector<f64>, action: DVector<f64>) -> Trajectory<f64> {
        Trajectory {
            transitions: (0..len)
                .map(|_| Transition {
                    state: state.clone(),
                    action: action.clone(),
                    reward: 0.0,
                    next_state: state.clone(),
                    terminal: false,
                })
                .collect(),
        }
    }

    #[test]
    fn sampling_is_deterministic_and_shaped() {
        let a = sample_rff::<f64>(12, 100, 6, 4, 1.5).unwrap();
        let b = sample_rff::<f64>(12, 100, 6, 4, 1.5).unwrap();
        assert_eq!(a.weights(), b.weights());
        assert_eq!(a.weights().nrows(), 100);
        assert_eq!(a.weights().ncols(), 6);
        assert_eq!(a.offsets.len(), 100);
    }

    #[test]
    fn weight_mean_obeys_law_of_large_numbers() {
        let sigma = 2.0f64;
        let map = sample_rff::<f64>(77, 10_000, 3, 3, sigma).unwrap();
        for c in 0..3 {
            let mean: f64 = map.weights().column(c).iter().sum::<f64>() / 10_000.0;
            let bound = 3.0 / sigma / (10_000.0f64).sqrt();
            assert!(mean.abs() < bound, "column {c} mean {mean} exceeds {bound}");
        }
    }

    #[test]
    fn phi_handles_degenerate_features() {
        // One feature, zero weight: phi = sqrt(2) * cos(b).
        let mut map = sample_rff::<f64>(1, 1, 2, 1, 1.0).unwrap();
        map.weights = DMatrix::zeros(1, 2);
        map.offsets = DVector::from_vec(vec![0.0]);
        let phi = map
            .phi(&DVector::from_vec(vec![0.3]), &DVector::from_vec(vec![0.5]))
            .unwrap();
        assert!((phi[0] - 2.0f64.sqrt()).abs() < 1e-15);

        map.offsets = DVector::from_vec(vec![std::f64::consts::FRAC_PI_2]);
        let phi = map
            .phi(&DVector::from_vec(vec![0.3]), &DVector::from_vec(vec![0.5]))
            .unwrap();
        assert!(phi[0].abs() < 1e-15);
    }

    #[test]
    fn phi_coordinates_are_bounded() {
        let map = sample_rff::<f64>(5, 64, 5, 3, 1.0).unwrap();
        let bound = (2.0f64 / 64.0).sqrt() + 1e-15;
        let mut rng = crate::seeding::rng_from_seed(9);
        for _ in 0..200 {
            let s = DVector::from_fn(3, |_, _| f64::standard_normal(&mut rng));
            let a = DVector::from_fn(2, |_, _| f64::standard_normal(&mut rng));
            let phi = map.phi(&s, &a).unwrap();
            assert!(phi.amax() <= bound);
            assert!(phi.norm() <= 2.0f64.sqrt() + 1e-12);
        }
    }

    #[test]
    fn single_step_embedding_is_scaled_phi() {
        let map = sample_rff::<f64>(3, 32, 4, 2, 1.0).unwrap();
        let s = DVector::from_vec(vec![0.1, -0.2]);
        let a = DVector::from_vec(vec![0.5, 0.5]);
        let traj = constant_trajectory(1, s.clone(), a.clone());
        let gamma = 0.9;
        let z = map.embed_trajectory(&traj, gamma).unwrap();
        let phi = map.phi(&s, &a).unwrap();
        assert!((z - phi * (1.0 - gamma)).norm() < 1e-14);
    }

    #[test]
    fn constant_trajectory_embedding_is_truncated_geometric() {
        let map = sample_rff::<f64>(3, 32, 4, 2, 1.0).unwrap();
        let s = DVector::from_vec(vec![0.1, -0.2]);
        let a = DVector::from_vec(vec![0.5, 0.5]);
        let t = 17;
        let traj = constant_trajectory(t, s.clone(), a.clone());
        let gamma: f64 = 0.9;
        let z = map.embed_trajectory(&traj, gamma).unwrap();
        let phi = map.phi(&s, &a).unwrap();
        let expect = phi * (1.0 - gamma.powi(t as i32));
        assert!((z - expect).norm() < 1e-13);
        // And the norm bound for constant features.
        let z = map.embed_trajectory(&traj, gamma).unwrap();
        assert!(z.norm() <= 2.0f64.sqrt() * (1.0 - gamma.powi(t as i32)) + 1e-12);
    }

    #[test]
    fn embed_policy_is_mean_of_trajectories() {
        let map = sample_rff::<f64>(4, 16, 3, 1, 1.0).unwrap();
        let t1 = constant_trajectory(3, DVector::from_vec(vec![1.0]), DVector::from_vec(vec![0.2, 0.1]));
        let t2 = constant_trajectory(5, DVector::from_vec(vec![-1.0]), DVector::from_vec(vec![0.0, 0.4]));
        let gamma = 0.8;
        let e_both = map.embed_policy(&[t1.clone(), t2.clone()], gamma).unwrap();
        let z1 = map.embed_trajectory(&t1, gamma).unwrap();
        let z2 = map.embed_trajectory(&t2, gamma).unwrap();
        assert!((e_both.psi.clone() - (z1.clone() + z2.clone()) * 0.5).norm() < 1e-14);

        // Identical trajectories collapse to a single embedding.
        let e_same = map.embed_policy(&[t1.clone(), t1.clone(), t1.clone()], gamma).unwrap();
        assert!((e_same.psi - z1).norm() < 1e-14);
        assert!(e_both.psi.norm() <= 2.0f64.sqrt());
    }

    #[test]
    fn rff_mmd_is_a_metric_on_samples() {
        let mut rng = crate::seeding::rng_from_seed(10);
        for _ in 0..100 {
            let a = DVector::from_fn(8, |_, _| f64::standard_normal(&mut rng));
            let b = DVector::from_fn(8, |_, _| f64::standard_normal(&mut rng));
            let c = DVector::from_fn(8, |_, _| f64::standard_normal(&mut rng));
            assert_eq!(rff_mmd(&a, &a).unwrap(), 0.0);
            assert_eq!(rff_mmd(&a, &b).unwrap(), rff_mmd(&b, &a).unwrap());
            let (ab, bc, ac) = (
                rff_mmd(&a, &b).unwrap(),
                rff_mmd(&b, &c).unwrap(),
                rff_mmd(&a, &c).unwrap(),
            );
            assert!(ac <= ab + bc + 1e-12);
        }
    }

    #[test]
    fn exact_mmd_identities() {
        let atoms = vec![
            DVector::from_vec(vec![0.0f64, 0.0]),
            DVector::from_vec(vec![1.0, 0.0]),
        ];
        let p = DiscreteDistribution::new(atoms.clone(), vec![0.5, 0.5]).unwrap();
        assert!(exact_mmd(&p, &p, 1.0).unwrap() < 1e-9);

        // Two point masses at distance t: MMD = sqrt(2 - 2 exp(-t^2 / (2 sigma^2))).
        let t = 1.7f64;
        let sigma = 0.9f64;
        let p = DiscreteDistribution::new(vec![DVector::from_vec(vec![0.0])], vec![1.0]).unwrap();
        let q = DiscreteDistribution::new(vec![DVector::from_vec(vec![t])], vec![1.0]).unwrap();
        let got = exact_mmd(&p, &q, sigma).unwrap();
        let expect = (2.0 - 2.0 * (-t * t / (2.0 * sigma * sigma)).exp()).sqrt();
        assert!((got - expect).abs() < 1e-12);
        assert_eq!(got, exact_mmd(&q, &p, sigma).unwrap());
    }

    #[test]
    fn exact_mmd_rejects_unnormalized_inputs() {
        let p = DiscreteDistribution::<f64>::new(
            vec![DVector::from_vec(vec![0.0])],
            vec![0.7],
        );
        assert!(p.is_err());
    }

    #[test]
    fn normalizer_matches_two_pass_statistics() {
        let mut norm = RunningNorm::<f64>::new(2);
        let mut rng = crate::seeding::rng_from_seed(11);
        let data: Vec<DVector<f64>> = (0..500)
            .map(|_| DVector::from_fn(2, |_, _| f64::standard_normal(&mut rng) * 3.0 + 1.0))
            .collect();
        for x in &data {
            norm.observe(x);
        }
        for i in 0..2 {
            let mean = data.iter().map(|x| x[i]).sum::<f64>() / 500.0;
            let var = data.iter().map(|x| (x[i] - mean).powi(2)).sum::<f64>() / 500.0;
            assert!((norm.mean[i] - mean).abs() < 1e-10);
            assert!((norm.variance(i) - var).abs() < 1e-9);
        }
    }
}
