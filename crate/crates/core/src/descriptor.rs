//! Calibrated weighted PCA: fits the affine map from embedding space to the
//! behavior-descriptor box.
//!
//! The fit has three steps. Fitness scores are normalized into a weight
//! distribution with a 1/m floor, so every policy contributes at least
//! minimally. The embeddings are centered at the weighted mean and scaled by
//! sqrt(w_i) before taking the top-k singular directions, biasing the
//! components toward variation among high-fitness policies. Finally each
//! axis is calibrated so the 5th/95th percentiles of the (unweighted)
//! projections land on -1/+1, which keeps archive bounds fixed while most
//! solutions fall inside them.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Fitted affine descriptor map `desc(psi) = A psi + b`, stored with its
/// ingredients: orthonormal components P (D x k), weighted mean mu, per-axis
/// scale s and offset c, where `A = diag(s) P^T` and `b = c - A mu`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CwPcaFit<T: Real> {
    pub components: DMatrix<T>,
    pub mean: DVector<T>,
    pub scale: DVector<T>,
    pub offset: DVector<T>,
}

impl<T: Real> CwPcaFit<T> {
    pub fn embedding_dim(&self) -> usize {
        self.components.nrows()
    }

    pub fn descriptor_dim(&self) -> usize {
        self.components.ncols()
    }

    /// `A = diag(s) P^T`.
    pub fn a_matrix(&self) -> DMatrix<T> {
        let mut a = self.components.transpose();
        for (i, mut row) in a.row_iter_mut().enumerate() {
            row *= self.scale[i];
        }
        a
    }

    /// `b = c - A mu`.
    pub fn b_vector(&self) -> DVector<T> {
        &self.offset - self.a_matrix() * &self.mean
    }
}

/// Projects an embedding through the fitted map.
pub fn project<T: Real>(fit: &CwPcaFit<T>, psi: &DVector<T>) -> Result<DVector<T>> {
    if psi.len() != fit.embedding_dim() {
        return Err(Error::config(format!(
            "embedding has length {}, fit expects {}",
            psi.len(),
            fit.embedding_dim()
        )));
    }
    let centered = psi - &fit.mean;
    let mut out = fit.components.tr_mul(&centered);
    for i in 0..out.len() {
        out[i] = out[i] * fit.scale[i] + fit.offset[i];
    }
    Ok(out)
}

/// Normalizes fitness scores into a weight distribution:
/// `f~_i = max((f_i - min f) / (max f - min f), 1/m)`, weights proportional
/// to `f~`. A degenerate spread (all fitness equal) yields uniform weights.
pub fn normalize_scores<T: Real>(fitness: &[T]) -> Vec<T> {
    let m = fitness.len();
    assert!(m >= 1, "normalize_scores needs at least one score");
    let mn = fitness.iter().copied().fold(fitness[0], |a, b| a.min(b));
    let mx = fitness.iter().copied().fold(fitness[0], |a, b| a.max(b));
    let floor = T::one() / T::from_usize(m).unwrap();
    let spread = mx - mn;
    let tilde: Vec<T> = if spread > T::zero() {
        fitness.iter().map(|f| ((*f - mn) / spread).max(floor)).collect()
    } else {
        vec![floor; m]
    };
    let total: T = tilde.iter().copied().sum();
    tilde.into_iter().map(|t| t / total).collect()
}

/// Linear-interpolation quantile of unsorted data (the `h = p (m - 1)`
/// convention).
pub fn quantile<T: Real>(values: &[T], p: T) -> T {
    debug_assert!(!values.is_empty());
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("quantile of non-finite values"));
    let m = sorted.len();
    if m == 1 {
        return sorted[0];
    }
    let h = p * T::from_usize(m - 1).unwrap();
    let lo = h.floor().to_usize().unwrap().min(m - 1);
    let hi = (lo + 1).min(m - 1);
    let frac = h - T::from_usize(lo).unwrap();
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Fits the calibrated weighted PCA map on `embeddings` (one row per
/// policy) with the given fitness scores.
///
/// The principal directions come from a symmetric eigendecomposition of the
/// weighted Gram matrix (the smaller of the D x D or m x m forms). When the
/// data has fewer than `k` positive singular values, the remaining axes are
/// an arbitrary orthonormal completion with unit scale and zero offset. Each
/// component's sign is fixed so its largest-magnitude coordinate is
/// positive, making fits reproducible across eigensolvers.
pub fn fit_cwpca<T: Real>(
    embeddings: &DMatrix<T>,
    fitness: &[T],
    k: usize,
) -> Result<CwPcaFit<T>> {
    let m = embeddings.nrows();
    let d = embeddings.ncols();
    if m < 2 {
        return Err(Error::domain("cwPCA needs at least two embeddings"));
    }
    if fitness.len() != m {
        return Err(Error::domain("fitness length must match embedding rows"));
    }
    if k == 0 || k > m.min(d) {
        return Err(Error::domain(format!("k = {k} must lie in 1..=min(m, D) = {}", m.min(d))));
    }

    let weights = normalize_scores(fitness);

    // Weighted mean and weighted centered rows.
    let mut mean = DVector::zeros(d);
    for i in 0..m {
        mean.axpy(weights[i], &embeddings.row(i).transpose(), T::one());
    }
    let mut weighted = DMatrix::zeros(m, d);
    for i in 0..m {
        let sw = weights[i].sqrt();
        for j in 0..d {
            weighted[(i, j)] = sw * (embeddings[(i, j)] - mean[j]);
        }
    }

    let components = principal_directions(&weighted, k);

    // Calibration quantiles over the unweighted projections.
    let mut scale = DVector::from_element(k, T::one());
    let mut offset = DVector::zeros(k);
    let mut projections = vec![vec![T::zero(); m]; k];
    for i in 0..m {
        let centered = embeddings.row(i).transpose() - &mean;
        let u = components.tr_mul(&centered);
        for axis in 0..k {
            projections[axis][i] = u[axis];
        }
    }
    let (p_lo, p_hi) = (T::of(0.05), T::of(0.95));
    let two = T::of(2.0);
    for axis in 0..k {
        let q_lo = quantile(&projections[axis], p_lo);
        let q_hi = quantile(&projections[axis], p_hi);
        let spread = q_hi - q_lo;
        if spread < T::of(1e-8) {
            // Collapsed axis: keep unit scale, center the degenerate range.
            scale[axis] = T::one();
            offset[axis] = -(q_lo + q_hi) / two;
        } else {
            scale[axis] = two / spread;
            offset[axis] = -T::one() - scale[axis] * q_lo;
        }
    }

    Ok(CwPcaFit { components, mean, scale, offset })
}

/// Top-k right singular directions of `x` (m x d), as orthonormal columns
/// of a d x k matrix, via the eigendecomposition of the smaller Gram matrix.
fn principal_directions<T: Real>(x: &DMatrix<T>, k: usize) -> DMatrix<T> {
    let (m, d) = (x.nrows(), x.ncols());
    let mut dirs: Vec<DVector<T>> = Vec::with_capacity(k);

    if d <= m {
        // Right-singular vectors are eigenvectors of X^T X (d x d).
        let gram = x.tr_mul(x);
        let eig = gram.symmetric_eigen();
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| {
            eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).expect("finite eigenvalues")
        });
        for &idx in order.iter().take(k) {
            if eig.eigenvalues[idx] > T::of(1e-12) {
                dirs.push(eig.eigenvectors.column(idx).into_owned());
            }
        }
    } else {
        // Eigenvectors u of X X^T (m x m) lift to directions X^T u.
        let gram = x * x.transpose();
        let eig = gram.symmetric_eigen();
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| {
            eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).expect("finite eigenvalues")
        });
        for &idx in order.iter().take(k) {
            let lambda = eig.eigenvalues[idx];
            if lambda > T::of(1e-12) {
                let v = x.tr_mul(&eig.eigenvectors.column(idx).into_owned());
                let n = v.norm();
                if n > T::zero() {
                    dirs.push(v / n);
                }
            }
        }
    }

    // Rank-deficient data: complete to k orthonormal columns from the
    // standard basis.
    let mut basis_cursor = 0usize;
    while dirs.len() < k && basis_cursor < d {
        let mut candidate: DVector<T> = DVector::zeros(d);
        candidate[basis_cursor] = T::one();
        basis_cursor += 1;
        for existing in &dirs {
            let proj = existing.dot(&candidate);
            candidate.axpy(-proj, existing, T::one());
        }
        let n = candidate.norm();
        if n > T::of(1e-6) {
            dirs.push(candidate / n);
        }
    }

    let mut out = DMatrix::zeros(d, k);
    for (c, dir) in dirs.iter().enumerate() {
        out.set_column(c, dir);
    }

    // Sign convention: largest-magnitude coordinate positive.
    for mut col in out.column_iter_mut() {
        let mut best = 0usize;
        let mut best_abs = T::zero();
        for i in 0..col.len() {
            if col[i].abs() > best_abs {
                best_abs = col[i].abs();
                best = i;
            }
        }
        if col[best] < T::zero() {
            col.neg_mut();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::rng_from_seed;

    #[test]
    fn normalize_scores_matches_hand_computation() {
        // f = [0, 5, 10] -> f~ = [1/3, 1/2, 1] -> w = [2/11, 3/11, 6/11]
        let w = normalize_scores(&[0.0f64, 5.0, 10.0]);
        assert!((w[0] - 2.0 / 11.0).abs() < 1e-15);
        assert!((w[1] - 3.0 / 11.0).abs() < 1e-15);
        assert!((w[2] - 6.0 / 11.0).abs() < 1e-15);
    }

    #[test]
    fn normalize_scores_degenerate_cases() {
        let w = normalize_scores(&[4.2f64, 4.2, 4.2, 4.2]);
        for wi in &w {
            assert!((wi - 0.25).abs() < 1e-15);
        }
        let w = normalize_scores(&[3.0f64]);
        assert_eq!(w, vec![1.0]);
    }

    #[test]
    fn normalize_scores_always_positive_and_normalized() {
        let mut rng = rng_from_seed(13);
        for _ in 0..50 {
            let m = 1 + (f64::uniform_01(&mut rng) * 20.0) as usize;
            let f: Vec<f64> = (0..m).map(|_| f64::standard_normal(&mut rng) * 10.0).collect();
            let w = normalize_scores(&f);
            let total: f64 = w.iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
            assert!(w.iter().all(|x| *x > 0.0));
        }
    }

    #[test]
    fn quantile_interpolates_linearly() {
        let vals = vec![10.0f64, 0.0, 20.0, 30.0];
        // sorted: 0 10 20 30; h = 0.5 * 3 = 1.5 -> 15
        assert_eq!(quantile(&vals, 0.5), 15.0);
        assert_eq!(quantile(&vals, 0.0), 0.0);
        assert_eq!(quantile(&vals, 1.0), 30.0);
    }

    #[test]
    fn line_data_recovers_direction() {
        // Points on a 1-D line in R^3.
        let dir = DVector::from_vec(vec![2.0f64, -1.0, 0.5]).normalize();
        let m = 40;
        let mut data = DMatrix::zeros(m, 3);
        for i in 0..m {
            let t = (i as f64) / (m as f64) - 0.5;
            for j in 0..3 {
                data[(i, j)] = t * dir[j];
            }
        }
        let fit = fit_cwpca(&data, &vec![1.0; m], 1).unwrap();
        let c = fit.components.column(0);
        let dot = c.dot(&dir).abs();
        assert!((dot - 1.0).abs() < 1e-10, "dot {dot}");
        // Sign rule: largest-magnitude coordinate positive.
        assert!(c[0] > 0.0);
    }

    #[test]
    fn calibration_maps_quantiles_to_unit_interval() {
        let mut rng = rng_from_seed(14);
        let (m, d, k) = (101, 12, 3);
        let data = DMatrix::from_fn(m, d, |_, _| f64::standard_normal(&mut rng));
        let fitness: Vec<f64> = (0..m).map(|_| f64::uniform_01(&mut rng)).collect();
        let fit = fit_cwpca(&data, &fitness, k).unwrap();

        let mut per_axis: Vec<Vec<f64>> = vec![Vec::new(); k];
        for i in 0..m {
            let desc = project(&fit, &data.row(i).transpose()).unwrap();
            for axis in 0..k {
                per_axis[axis].push(desc[axis]);
            }
        }
        for axis in 0..k {
            let lo = quantile(&per_axis[axis], 0.05);
            let hi = quantile(&per_axis[axis], 0.95);
            assert!((lo + 1.0).abs() < 1e-9, "axis {axis} lo {lo}");
            assert!((hi - 1.0).abs() < 1e-9, "axis {axis} hi {hi}");
        }
    }

    #[test]
    fn projection_of_mean_is_offset() {
        let mut rng = rng_from_seed(15);
        let data = DMatrix::from_fn(30, 6, |_, _| f64::standard_normal(&mut rng));
        let fitness: Vec<f64> = (0..30).map(|_| f64::uniform_01(&mut rng)).collect();
        let fit = fit_cwpca(&data, &fitness, 2).unwrap();
        let desc = project(&fit, &fit.mean.clone()).unwrap();
        for axis in 0..2 {
            assert!((desc[axis] - fit.offset[axis]).abs() < 1e-10);
        }
    }

    #[test]
    fn projection_is_affine() {
        let mut rng = rng_from_seed(16);
        let data = DMatrix::from_fn(25, 7, |_, _| f64::standard_normal(&mut rng));
        let fitness: Vec<f64> = (0..25).map(|_| f64::uniform_01(&mut rng)).collect();
        let fit = fit_cwpca(&data, &fitness, 3).unwrap();
        for _ in 0..20 {
            let x = DVector::from_fn(7, |_, _| f64::standard_normal(&mut rng));
            let y = DVector::from_fn(7, |_, _| f64::standard_normal(&mut rng));
            let alpha = f64::uniform_01(&mut rng);
            let mix = &x * alpha + &y * (1.0 - alpha);
            let lhs = project(&fit, &mix).unwrap();
            let rhs = project(&fit, &x).unwrap() * alpha + project(&fit, &y).unwrap() * (1.0 - alpha);
            assert!((lhs - rhs).norm() < 1e-10);
        }
    }

    #[test]
    fn uniform_weights_match_plain_svd_on_small_matrix() {
        // 4 x 3 example checked against nalgebra's full SVD of the centered
        // data (the production path uses the Gram eigendecomposition).
        let data = DMatrix::from_row_slice(4, 3, &[
            1.0f64, 2.0, 0.5, //
            -1.0, 0.5, 1.5, //
            2.0, -0.5, 0.0, //
            0.0, 1.0, -1.0,
        ]);
        let fit = fit_cwpca(&data, &[1.0; 4], 2).unwrap();

        let mean = DVector::from_fn(3, |j, _| data.column(j).sum() / 4.0);
        let mut centered = data.clone();
        for i in 0..4 {
            for j in 0..3 {
                centered[(i, j)] -= mean[j];
            }
        }
        let svd = centered.svd(false, true);
        let vt = svd.v_t.unwrap();
        for axis in 0..2 {
            let reference = vt.row(axis).transpose();
            let dot = fit.components.column(axis).dot(&reference).abs();
            assert!((dot - 1.0).abs() < 1e-10, "axis {axis} |dot| {dot}");
        }
    }

    #[test]
    fn components_are_orthonormal_and_a_at_is_diagonal() {
        let mut rng = rng_from_seed(17);
        let data = DMatrix::from_fn(40, 9, |_, _| f64::standard_normal(&mut rng));
        let fitness: Vec<f64> = (0..40).map(|_| f64::uniform_01(&mut rng)).collect();
        let fit = fit_cwpca(&data, &fitness, 4).unwrap();
        let ptp = fit.components.tr_mul(&fit.components);
        for i in 0..4 {
            for j in 0..4 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((ptp[(i, j)] - expect).abs() < 1e-8);
            }
        }
        let a = fit.a_matrix();
        let aat = &a * a.transpose();
        for i in 0..4 {
            for j in 0..4 {
                if i == j {
                    assert!((aat[(i, j)] - fit.scale[i] * fit.scale[i]).abs() < 1e-8);
                } else {
                    assert!(aat[(i, j)].abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn rank_deficient_data_still_yields_k_axes() {
        // Rank-1 data, k = 3: two axes come from the orthonormal completion.
        let mut data = DMatrix::zeros(10, 5);
        for i in 0..10 {
            data[(i, 0)] = i as f64;
        }
        let fit = fit_cwpca(&data, &vec![1.0; 10], 3).unwrap();
        let ptp = fit.components.tr_mul(&fit.components);
        for i in 0..3 {
            assert!((ptp[(i, i)] - 1.0).abs() < 1e-8);
        }
        // Completion axes keep unit scale.
        assert_eq!(fit.scale[1], 1.0);
        assert_eq!(fit.scale[2], 1.0);
    }

    #[test]
    fn degenerate_axis_spread_is_centered() {
        // All points identical: every axis collapses.
        let data = DMatrix::from_element(5, 4, 1.5f64);
        let fit = fit_cwpca(&data, &[1.0; 5], 2).unwrap();
        for axis in 0..2 {
            assert_eq!(fit.scale[axis], 1.0);
            let desc = project(&fit, &data.row(0).transpose()).unwrap();
            assert!(desc[axis].abs() < 1e-9);
        }
    }
}
