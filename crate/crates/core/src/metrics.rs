//! Population evaluation: diversity scores, hand-crafted-descriptor QD
//! scores, descriptor stability, and adaptation sweeps.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::archive::{ArchiveConfig, GridArchive, Occupant};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::seeding::{self, tag};

/// Symmetric similarity matrix with unit diagonal and entries in [0, 1].
#[derive(Debug, Clone)]
pub struct KernelMatrix<T: Real> {
    pub matrix: DMatrix<T>,
    /// Bandwidth parameter actually used, kept for audit output.
    pub gamma: T,
    /// Set when all embeddings coincide and the median heuristic is
    /// undefined; the matrix is then all ones.
    pub degenerate: bool,
}

/// Gaussian kernel matrix over embeddings with the median heuristic:
/// `gamma = ln 2 / median(pairwise squared distances)`, so a pair at the
/// median distance has similarity exactly 1/2. With more than 1000 rows the
/// median is estimated on a seeded subsample of 1000.
pub fn build_kernel<T: Real>(embeddings: &[DVector<T>], median_seed: u64) -> Result<KernelMatrix<T>> {
    let n = embeddings.len();
    if n < 2 {
        return Err(Error::domain("kernel needs at least two embeddings"));
    }
    let dim = embeddings[0].len();
    if embeddings.iter().any(|e| e.len() != dim) {
        return Err(Error::config("embeddings have inconsistent lengths"));
    }

    let median_rows: Vec<usize> = if n > 1000 {
        let mut rng = seeding::derive_rng(median_seed, &[tag::METRICS, n as u64]);
        let mut picked = Vec::with_capacity(1000);
        let mut pool: Vec<usize> = (0..n).collect();
        for _ in 0..1000 {
            let j = (T::uniform_01(&mut rng).to_f64_lossy() * pool.len() as f64) as usize;
            picked.push(pool.swap_remove(j.min(pool.len() - 1)));
        }
        picked.sort_unstable();
        picked
    } else {
        (0..n).collect()
    };

    let mut sq_dists = Vec::with_capacity(median_rows.len() * (median_rows.len() - 1) / 2);
    for (i, &a) in median_rows.iter().enumerate() {
        for &b in median_rows.iter().skip(i + 1) {
            sq_dists.push((&embeddings[a] - &embeddings[b]).norm_squared());
        }
    }
    let median = crate::descriptor::quantile(&sq_dists, T::of(0.5));

    if median <= T::zero() {
        log::warn!("all embeddings identical; kernel degenerates to all ones");
        return Ok(KernelMatrix {
            matrix: DMatrix::from_element(n, n, T::one()),
            gamma: T::zero(),
            degenerate: true,
        });
    }
    let gamma = T::of(2.0).ln() / median;
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = T::one();
        for j in (i + 1)..n {
            let v = (-gamma * (&embeddings[i] - &embeddings[j]).norm_squared()).exp();
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(KernelMatrix { matrix: k, gamma, degenerate: false })
}

/// Vendi score: the exponential entropy of the normalized kernel spectrum,
/// read as an effective population size in [1, n]. Eigenvalues are clamped
/// at zero before normalizing (floating-point PSD drift).
pub fn vendi<T: Real>(kernel: &KernelMatrix<T>) -> T {
    let eig = kernel.matrix.clone().symmetric_eigen();
    let clamped: Vec<T> = eig.eigenvalues.iter().map(|v| v.max(T::zero())).collect();
    let total: T = clamped.iter().copied().sum();
    if total <= T::zero() {
        return T::one();
    }
    let mut entropy = T::zero();
    for v in &clamped {
        let p = *v / total;
        if p > T::zero() {
            entropy -= p * p.ln();
        }
    }
    entropy.exp()
}

/// Quality-weighted Vendi score: mean scaled fitness times the Vendi score.
/// Every `(f + offset) / divisor` must land in [0, 1].
pub fn qvs<T: Real>(fitness: &[T], kernel: &KernelMatrix<T>, offset: T, divisor: T) -> Result<T> {
    if !(divisor > T::zero()) {
        return Err(Error::domain("divisor must be positive"));
    }
    if fitness.len() != kernel.matrix.nrows() {
        return Err(Error::domain("fitness length must match kernel size"));
    }
    let mut total = T::zero();
    for f in fitness {
        let scaled = (*f + offset) / divisor;
        if scaled < -T::of(1e-12) || scaled > T::one() + T::of(1e-12) {
            return Err(Error::domain(format!(
                "scaled fitness {} outside [0, 1]",
                scaled.to_f64_lossy()
            )));
        }
        total += scaled.clamp(T::zero(), T::one());
    }
    let mean = total / T::from_usize(fitness.len()).unwrap();
    Ok(mean * vendi(kernel))
}

/// A population member as seen by the evaluation metrics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluatedMember<T: Real> {
    pub fitness: T,
    pub gt_descriptor: Vec<T>,
}

/// QD score against hand-crafted descriptors: every member is inserted
/// elitist-style (best per cell wins) into a fresh grid over the
/// ground-truth bounds, and the resulting archive is scored.
pub fn gt_qd_score<T: Real>(
    members: &[EvaluatedMember<T>],
    gt_config: &ArchiveConfig<T>,
) -> Result<T> {
    let mut grid = GridArchive::elitist(gt_config.clone())?;
    for m in members {
        grid.insert(Occupant {
            params: vec![],
            fitness: m.fitness,
            descriptor: m.gt_descriptor.clone(),
            embedding: vec![],
            eval_seeds: vec![],
        });
    }
    Ok(grid.qd_score())
}

/// Per-axis variance of a sample of descriptors after min-max scaling each
/// axis to [0, 1]. Axes with zero spread scale to a constant, so their
/// variance is exactly zero.
pub fn scaled_descriptor_variance<T: Real>(descriptors: &[DVector<T>]) -> Vec<T> {
    assert!(descriptors.len() >= 2, "variance needs at least two descriptors");
    let k = descriptors[0].len();
    let n = T::from_usize(descriptors.len()).unwrap();
    let mut out = Vec::with_capacity(k);
    for axis in 0..k {
        let vals: Vec<T> = descriptors.iter().map(|d| d[axis]).collect();
        let lo = vals.iter().copied().fold(vals[0], |a, b| a.min(b));
        let hi = vals.iter().copied().fold(vals[0], |a, b| a.max(b));
        let spread = hi - lo;
        if spread <= T::zero() {
            out.push(T::zero());
            continue;
        }
        let scaled: Vec<T> = vals.iter().map(|v| (*v - lo) / spread).collect();
        let mean: T = scaled.iter().copied().sum::<T>() / n;
        let var: T = scaled.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() / n;
        out.push(var);
    }
    out
}

/// Adaptation sweep output: per-grid-point returns for every policy, the
/// best-policy curve, its trapezoidal AUC, and per-threshold success counts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdaptationReport<T: Real> {
    pub grid: Vec<T>,
    /// `returns[g][i]` is policy i's mean return at grid point g.
    pub returns: Vec<Vec<T>>,
    pub best_curve: Vec<T>,
    pub auc: T,
    pub thresholds: Vec<T>,
    /// `success_counts[p][g]` counts policies with mean return at least
    /// `reference * thresholds[p]` at grid point g.
    pub success_counts: Vec<Vec<usize>>,
    /// The reference return R used for success counting.
    pub reference: T,
}

/// Builds an [`AdaptationReport`] from precomputed returns. `returns[g]`
/// holds every policy's mean return at grid point `g`; the grid must be
/// sorted ascending.
pub fn adaptation_report<T: Real>(
    grid: &[T],
    returns: Vec<Vec<T>>,
    thresholds: &[T],
    reference: T,
) -> Result<AdaptationReport<T>> {
    if grid.is_empty() || returns.len() != grid.len() {
        return Err(Error::domain("grid and returns must be nonempty and aligned"));
    }
    if returns.iter().any(|r| r.is_empty()) {
        return Err(Error::domain("adaptation sweep needs a nonempty population"));
    }
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::domain("grid must be strictly ascending"));
    }
    let best_curve: Vec<T> = returns
        .iter()
        .map(|r| r.iter().copied().fold(r[0], |a, b| a.max(b)))
        .collect();
    let auc = trapezoid(grid, &best_curve);
    let mut success_counts = Vec::with_capacity(thresholds.len());
    for &p in thresholds {
        let cutoff = reference * p;
        let counts: Vec<usize> =
            returns.iter().map(|r| r.iter().filter(|x| **x >= cutoff).count()).collect();
        success_counts.push(counts);
    }
    Ok(AdaptationReport {
        grid: grid.to_vec(),
        returns,
        best_curve,
        auc,
        thresholds: thresholds.to_vec(),
        success_counts,
        reference,
    })
}

/// Trapezoidal integral of `curve` over `grid`; zero for a single point.
pub fn trapezoid<T: Real>(grid: &[T], curve: &[T]) -> T {
    debug_assert_eq!(grid.len(), curve.len());
    let mut auc = T::zero();
    let half = T::of(0.5);
    for i in 1..grid.len() {
        auc += (grid[i] - grid[i - 1]) * (curve[i] + curve[i - 1]) * half;
    }
    auc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::rng_from_seed;

    fn identity_kernel(n: usize) -> KernelMatrix<f64> {
        KernelMatrix { matrix: DMatrix::identity(n, n), gamma: 1.0, degenerate: false }
    }

    #[test]
    fn vendi_identities() {
        for n in [2usize, 10, 100] {
            assert!((vendi(&identity_kernel(n)) - n as f64).abs() < 1e-9);
            let ones = KernelMatrix {
                matrix: DMatrix::from_element(n, n, 1.0f64),
                gamma: 1.0,
                degenerate: false,
            };
            assert!((vendi(&ones) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn vendi_two_by_two_worked_example() {
        let k = KernelMatrix {
            matrix: DMatrix::from_row_slice(2, 2, &[1.0f64, 0.5, 0.5, 1.0]),
            gamma: 1.0,
            degenerate: false,
        };
        // Eigenvalues 1.5 and 0.5 -> normalized 0.75/0.25 -> exp(entropy).
        let expect = (-(0.75f64 * 0.75f64.ln() + 0.25 * 0.25f64.ln())).exp();
        assert!((vendi(&k) - expect).abs() < 1e-12);
        assert!((vendi(&k) - 1.7548).abs() < 1e-4);
    }

    #[test]
    fn vendi_is_permutation_invariant() {
        let mut rng = rng_from_seed(50);
        let embeddings: Vec<DVector<f64>> =
            (0..12).map(|_| DVector::from_fn(4, |_, _| f64::standard_normal(&mut rng))).collect();
        let k = build_kernel(&embeddings, 1).unwrap();
        let mut permuted = embeddings.clone();
        permuted.reverse();
        let kp = build_kernel(&permuted, 1).unwrap();
        assert!((vendi(&k) - vendi(&kp)).abs() < 1e-9);
        let n = embeddings.len() as f64;
        let v = vendi(&k);
        assert!((1.0..=n + 1e-9).contains(&v));
    }

    #[test]
    fn median_pair_has_half_similarity() {
        // Three collinear points: squared distances 1, 1, 4; median 1.
        let embeddings = vec![
            DVector::from_vec(vec![0.0f64]),
            DVector::from_vec(vec![1.0]),
            DVector::from_vec(vec![2.0]),
        ];
        let k = build_kernel(&embeddings, 0).unwrap();
        assert!((k.matrix[(0, 1)] - 0.5).abs() < 1e-12);
        for i in 0..3 {
            assert_eq!(k.matrix[(i, i)], 1.0);
        }
    }

    #[test]
    fn identical_embeddings_degenerate_to_ones() {
        let embeddings = vec![DVector::from_vec(vec![1.0f64, 2.0]); 4];
        let k = build_kernel(&embeddings, 0).unwrap();
        assert!(k.degenerate);
        assert_eq!(k.matrix, DMatrix::from_element(4, 4, 1.0));
    }

    #[test]
    fn qvs_scales_vendi_by_mean_quality() {
        let k = identity_kernel(4);
        // All scaled fitness 1 -> qvs = vendi.
        let full = qvs(&[2.0f64; 4], &k, 0.0, 2.0).unwrap();
        assert!((full - 4.0).abs() < 1e-9);
        // All scaled fitness 0 -> 0.
        let zero = qvs(&[0.0f64; 4], &k, 0.0, 2.0).unwrap();
        assert_eq!(zero, 0.0);
        // Mean scaled fitness 0.5 with identity kernel n=4 -> 2.
        let half = qvs(&[1.0f64; 4], &k, 0.0, 2.0).unwrap();
        assert!((half - 2.0).abs() < 1e-9);
        // qvs never exceeds vendi for in-range fitness.
        assert!(half <= vendi(&k));
        // Out-of-range scaling is rejected.
        assert!(qvs(&[5.0f64; 4], &k, 0.0, 2.0).is_err());
    }

    #[test]
    fn gt_qd_score_follows_elitist_rules() {
        let cfg = ArchiveConfig::with_bounds(vec![-1.0, -1.0], vec![1.0, 1.0], 10, 0.01);
        assert_eq!(gt_qd_score::<f64>(&[], &cfg).unwrap(), 0.0);

        let distinct = vec![
            EvaluatedMember { fitness: 2.0, gt_descriptor: vec![-0.5, 0.0] },
            EvaluatedMember { fitness: 3.0, gt_descriptor: vec![0.5, 0.0] },
        ];
        assert_eq!(gt_qd_score(&distinct, &cfg).unwrap(), 5.0);

        let colliding = vec![
            EvaluatedMember { fitness: 2.0, gt_descriptor: vec![0.5, 0.0] },
            EvaluatedMember { fitness: 3.0, gt_descriptor: vec![0.5, 0.0] },
        ];
        assert_eq!(gt_qd_score(&colliding, &cfg).unwrap(), 3.0);

        // Permutation invariance and monotone growth when filling a cell.
        let reversed: Vec<_> = distinct.iter().rev().cloned().collect();
        assert_eq!(gt_qd_score(&distinct, &cfg).unwrap(), gt_qd_score(&reversed, &cfg).unwrap());
        let mut extended = distinct.clone();
        extended.push(EvaluatedMember { fitness: 1.0, gt_descriptor: vec![0.0, 0.9] });
        assert!(gt_qd_score(&extended, &cfg).unwrap() > gt_qd_score(&distinct, &cfg).unwrap());
    }

    #[test]
    fn scaled_variance_handles_constant_and_spread_axes() {
        let descs = vec![
            DVector::from_vec(vec![1.0f64, 3.0]),
            DVector::from_vec(vec![1.0, 5.0]),
            DVector::from_vec(vec![1.0, 4.0]),
        ];
        let var = scaled_descriptor_variance(&descs);
        assert_eq!(var[0], 0.0);
        // Axis scaled to {0, 1, 0.5}: mean 0.5, var = (0.25 + 0.25 + 0)/3.
        assert!((var[1] - 1.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn adaptation_report_matches_hand_computation() {
        // Constant best curve v over [a, b] integrates to v * (b - a).
        let grid = vec![1.0f64, 2.0, 4.0];
        let returns = vec![vec![5.0f64, 3.0], vec![5.0, 2.0], vec![5.0, 1.0]];
        let report = adaptation_report(&grid, returns, &[0.7], 10.0).unwrap();
        assert_eq!(report.best_curve, vec![5.0, 5.0, 5.0]);
        assert_eq!(report.auc, 15.0);
        // Success at p = 0.7, R = 10: cutoff 7, nobody qualifies.
        assert_eq!(report.success_counts[0], vec![0, 0, 0]);

        // Returns {10, 5, 3} with R = 10, p = 0.7 -> one success.
        let report =
            adaptation_report(&[1.0f64], vec![vec![10.0, 5.0, 3.0]], &[0.7, 0.0], 10.0).unwrap();
        assert_eq!(report.success_counts[0], vec![1]);
        // p = 0 with nonnegative returns counts everyone.
        assert_eq!(report.success_counts[1], vec![3]);
        // Single-point grid: zero-width trapezoid.
        assert_eq!(report.auc, 0.0);
    }

    #[test]
    fn auc_is_linear_and_refinement_invariant() {
        let grid = vec![0.0f64, 1.0, 2.0];
        let curve = vec![1.0f64, 3.0, 5.0];
        let auc = trapezoid(&grid, &curve);
        // Piecewise-linear curve: refining the grid cannot change the area.
        let fine_grid = vec![0.0f64, 0.5, 1.0, 1.5, 2.0];
        let fine_curve = vec![1.0f64, 2.0, 3.0, 4.0, 5.0];
        assert!((trapezoid(&fine_grid, &fine_curve) - auc).abs() < 1e-12);
        // Linearity in the curve.
        let doubled: Vec<f64> = curve.iter().map(|x| 2.0 * x).collect();
        assert!((trapezoid(&grid, &doubled) - 2.0 * auc).abs() < 1e-12);
    }
}
