//! CMA-ES: rank-based Gaussian search with covariance adaptation.
//!
//! This is the canonical (mu/mu_w, lambda) formulation with cumulative step
//! size adaptation and rank-1 plus rank-mu covariance updates. All strategy
//! constants are the published defaults as functions of the dimension and
//! population size; the exact formulas are listed in `docs/optimizer.md`.
//! Updates consume only the *order* of candidates, never objective
//! magnitudes, which is what lets archive-improvement rankings drive the
//! search.

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

const EIGEN_FLOOR: f64 = 1e-14;
const CONDITION_LIMIT: f64 = 1e14;

/// Full optimizer state. Serializable for checkpointing; the
/// eigendecomposition is rebuilt on load.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CmaEs<T: Real> {
    pub dim: usize,
    pub lambda: usize,
    mu: usize,
    weights: DVector<T>,
    mu_eff: T,
    c_sigma: T,
    d_sigma: T,
    c_c: T,
    c_1: T,
    c_mu: T,
    chi_n: T,

    pub mean: DVector<T>,
    pub step_size: T,
    covariance: DMatrix<T>,
    p_sigma: DVector<T>,
    p_c: DVector<T>,
    pub generation: u64,

    #[serde(skip)]
    eigen_basis: DMatrix<T>,
    #[serde(skip)]
    eigen_sqrt: DVector<T>,
    #[serde(skip)]
    eigen_fresh: bool,
}

impl<T: Real> CmaEs<T> {
    /// Initializes the search distribution at `N(x0, sigma0^2 I)`.
    pub fn new(dim: usize, x0: &[T], sigma0: T, lambda: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("dimension must be positive"));
        }
        if x0.len() != dim {
            return Err(Error::config("x0 length does not match dimension"));
        }
        if !(sigma0 > T::zero()) {
            return Err(Error::config("sigma0 must be positive"));
        }
        if lambda < 2 {
            return Err(Error::config("lambda must be at least 2"));
        }
        let n = T::from_usize(dim).unwrap();
        let mu = lambda / 2;
        let lambda_t = T::from_usize(lambda).unwrap();

        // Logarithmic recombination weights over the top half.
        let log_norm = ((lambda_t + T::one()) / T::of(2.0)).ln();
        let mut weights = DVector::zeros(mu);
        for i in 0..mu {
            weights[i] = log_norm - T::from_usize(i + 1).unwrap().ln();
        }
        let wsum: T = weights.iter().copied().sum();
        weights /= wsum;
        let w2: T = weights.iter().map(|w| *w * *w).sum();
        let mu_eff = T::one() / w2;

        let c_sigma = (mu_eff + T::of(2.0)) / (n + mu_eff + T::of(5.0));
        let d_sigma = T::one()
            + T::of(2.0) * T::zero().max(((mu_eff - T::one()) / (n + T::one())).sqrt() - T::one())
            + c_sigma;
        let c_c = (T::of(4.0) + mu_eff / n) / (n + T::of(4.0) + T::of(2.0) * mu_eff / n);
        let c_1 = T::of(2.0) / ((n + T::of(1.3)) * (n + T::of(1.3)) + mu_eff);
        let c_mu = (T::one() - c_1).min(
            T::of(2.0) * (mu_eff - T::of(2.0) + T::one() / mu_eff)
                / ((n + T::of(2.0)) * (n + T::of(2.0)) + mu_eff),
        );
        let chi_n = n.sqrt()
            * (T::one() - T::one() / (T::of(4.0) * n)
                + T::one() / (T::of(21.0) * n * n));

        let mut state = CmaEs {
            dim,
            lambda,
            mu,
            weights,
            mu_eff,
            c_sigma,
            d_sigma,
            c_c,
            c_1,
            c_mu,
            chi_n,
            mean: DVector::from_column_slice(x0),
            step_size: sigma0,
            covariance: DMatrix::identity(dim, dim),
            p_sigma: DVector::zeros(dim),
            p_c: DVector::zeros(dim),
            generation: 0,
            eigen_basis: DMatrix::zeros(0, 0),
            eigen_sqrt: DVector::zeros(0),
            eigen_fresh: false,
        };
        state.refresh_eigen();
        Ok(state)
    }

    pub fn covariance(&self) -> &DMatrix<T> {
        &self.covariance
    }

    /// Rebuilds the cached eigendecomposition, flooring eigenvalues at
    /// 1e-14 to keep the covariance positive definite.
    pub fn refresh_eigen(&mut self) {
        // Enforce symmetry before decomposing.
        let sym = (&self.covariance + self.covariance.transpose()) * T::of(0.5);
        self.covariance = sym.clone();
        let eig = sym.symmetric_eigen();
        let floor = T::of(EIGEN_FLOOR);
        let mut vals = eig.eigenvalues;
        let mut floored = false;
        for v in vals.iter_mut() {
            if *v < floor {
                *v = floor;
                floored = true;
            }
        }
        if floored {
            // Push the floor back into C so state and factorization agree.
            let mut rebuilt = DMatrix::zeros(self.dim, self.dim);
            for i in 0..self.dim {
                let col = eig.eigenvectors.column(i);
                rebuilt += col * col.transpose() * vals[i];
            }
            self.covariance = (&rebuilt + rebuilt.transpose()) * T::of(0.5);
        }
        self.eigen_basis = eig.eigenvectors;
        self.eigen_sqrt = vals.map(|v| v.sqrt());
        self.eigen_fresh = true;
    }

    fn ensure_eigen(&mut self) {
        if !self.eigen_fresh || self.eigen_basis.nrows() != self.dim {
            self.refresh_eigen();
        }
    }

    pub fn condition_number(&self) -> T {
        let mut lo = self.eigen_sqrt[0];
        let mut hi = self.eigen_sqrt[0];
        for v in self.eigen_sqrt.iter() {
            lo = lo.min(*v);
            hi = hi.max(*v);
        }
        (hi / lo) * (hi / lo)
    }

    pub fn is_finite(&self) -> bool {
        self.step_size.is_finite_scalar()
            && self.mean.iter().all(|v| v.is_finite_scalar())
            && self.covariance.iter().all(|v| v.is_finite_scalar())
    }

    /// Samples `lambda` candidates from `N(mean, step_size^2 C)`.
    pub fn ask(&mut self, rng: &mut ChaCha8Rng) -> Result<Vec<DVector<T>>> {
        if !self.is_finite() {
            return Err(Error::numerical("optimizer state is non-finite"));
        }
        self.ensure_eigen();
        let mut out = Vec::with_capacity(self.lambda);
        for _ in 0..self.lambda {
            let z = DVector::from_fn(self.dim, |_, _| T::standard_normal(rng));
            let scaled = z.component_mul(&self.eigen_sqrt);
            let y = &self.eigen_basis * scaled;
            out.push(&self.mean + y * self.step_size);
        }
        Ok(out)
    }

    /// Applies one CMA-ES update. `ranking` lists candidate indices from
    /// best to worst; only the order matters.
    pub fn tell(&mut self, candidates: &[DVector<T>], ranking: &[usize]) -> Result<()> {
        if candidates.len() != self.lambda {
            return Err(Error::domain(format!(
                "expected {} candidates, got {}",
                self.lambda,
                candidates.len()
            )));
        }
        if !is_permutation(ranking, candidates.len()) {
            return Err(Error::domain("ranking is not a permutation of candidate indices"));
        }
        self.ensure_eigen();
        let old_mean = self.mean.clone();
        let sigma = self.step_size;

        // Recombination over the mu best.
        let mut new_mean = DVector::zeros(self.dim);
        for i in 0..self.mu {
            new_mean.axpy(self.weights[i], &candidates[ranking[i]], T::one());
        }
        let y_w = (&new_mean - &old_mean) / sigma;
        self.mean = new_mean;

        // C^{-1/2} y_w through the cached factorization.
        let mut c_inv_sqrt_y = self.eigen_basis.tr_mul(&y_w);
        for i in 0..self.dim {
            c_inv_sqrt_y[i] /= self.eigen_sqrt[i];
        }
        let c_inv_sqrt_y = &self.eigen_basis * c_inv_sqrt_y;

        let cs = self.c_sigma;
        let path_scale = (cs * (T::of(2.0) - cs) * self.mu_eff).sqrt();
        self.p_sigma = &self.p_sigma * (T::one() - cs) + c_inv_sqrt_y * path_scale;

        let gen1 = self.generation + 1;
        let decay = (T::one() - cs).powi(2 * gen1 as i32);
        let expected = self.chi_n;
        let h_sigma_threshold =
            (T::of(1.4) + T::of(2.0) / (T::from_usize(self.dim).unwrap() + T::one())) * expected;
        let corrected = self.p_sigma.norm() / (T::one() - decay).sqrt();
        let h_sigma = corrected < h_sigma_threshold;

        let cc = self.c_c;
        let pc_scale = (cc * (T::of(2.0) - cc) * self.mu_eff).sqrt();
        self.p_c *= T::one() - cc;
        if h_sigma {
            self.p_c.axpy(pc_scale, &y_w, T::one());
        }

        // Covariance: rank-1 + rank-mu, with the stall correction when the
        // step-size path is long.
        let mut new_c = &self.covariance * (T::one() - self.c_1 - self.c_mu);
        let rank1 = &self.p_c * self.p_c.transpose();
        new_c += rank1 * self.c_1;
        if !h_sigma {
            new_c += &self.covariance * (self.c_1 * cc * (T::of(2.0) - cc));
        }
        for i in 0..self.mu {
            let y_i = (&candidates[ranking[i]] - &old_mean) / sigma;
            let outer = &y_i * y_i.transpose();
            new_c += outer * (self.c_mu * self.weights[i]);
        }
        self.covariance = new_c;

        self.step_size =
            sigma * ((cs / self.d_sigma) * (self.p_sigma.norm() / expected - T::one())).exp();

        self.generation = gen1;
        self.refresh_eigen();
        Ok(())
    }

    /// Restart predicate: fires every 100 iterations, on conditioning
    /// beyond 1e14, and on any non-finite state.
    pub fn needs_restart(&self, iteration: u64) -> bool {
        if !self.is_finite() {
            return true;
        }
        if iteration > 0 && iteration % 100 == 0 {
            return true;
        }
        self.condition_number() > T::of(CONDITION_LIMIT)
    }
}

fn is_permutation(ranking: &[usize], n: usize) -> bool {
    if ranking.len() != n {
        return false;
    }
    let mut seen = vec![false; n];
    for &r in ranking {
        if r >= n || seen[r] {
            return false;
        }
        seen[r] = true;
    }
    true
}

/// Ranks candidates by archive improvement, best first. Ties on the
/// improvement value break toward higher fitness, then lower index, so
/// rankings are total and deterministic.
pub fn rank_by_improvement<T: Real>(improvements: &[T], fitness: &[T]) -> Vec<usize> {
    debug_assert_eq!(improvements.len(), fitness.len());
    let mut order: Vec<usize> = (0..improvements.len()).collect();
    order.sort_by(|&a, &b| {
        match improvements[b].partial_cmp(&improvements[a]) {
            Some(std::cmp::Ordering::Equal) | None => {}
            Some(other) => return other,
        }
        match fitness[b].partial_cmp(&fitness[a]) {
            Some(std::cmp::Ordering::Equal) | None => {}
            Some(other) => return other,
        }
        a.cmp(&b)
    });
    order
}
