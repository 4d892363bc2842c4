//! Linear (POD) and quadratic-manifold state approximations built from
//! snapshot data: compression h(q) = V^T (q - q̄), decompression
//! g(q̂) = q̄ + V q̂ + W̃ (q̂ ⊗̃ q̂), and the decoder Jacobian.

use nalgebra::{DMatrix, DVector, DVectorView};

use crate::error::{Error, Result};
use crate::kernels::{compressed_len, compressed_quadratic, quadratic_pair_index};
use crate::linalg::cholesky_with_jitter;

/// Choice of the reference vector q̄.
#[derive(Debug, Clone, PartialEq)]
pub enum QbarMode {
    Zero,
    MeanSnapshot,
    Fixed(DVector<f64>),
}

/// Snapshot trajectories of a full-order model on a shared uniform time grid.
#[derive(Debug, Clone)]
pub struct SnapshotSet {
    pub times: Vec<f64>,
    /// One parameter vector per trajectory.
    pub params: Vec<Vec<f64>>,
    /// Trajectories, each n_q × (n_t + 1).
    pub trajectories: Vec<DMatrix<f64>>,
    /// Exact state time derivatives, when available (same shapes).
    pub derivatives: Option<Vec<DMatrix<f64>>>,
}

impl SnapshotSet {
    pub fn new(
        times: Vec<f64>,
        params: Vec<Vec<f64>>,
        trajectories: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        if trajectories.is_empty() {
            return Err(Error::invalid("snapshot set must contain at least one trajectory"));
        }
        if params.len() != trajectories.len() {
            return Err(Error::DimensionMismatch {
                context: "snapshot parameters",
                expected: trajectories.len(),
                got: params.len(),
            });
        }
        if times.len() < 2 {
            return Err(Error::invalid("time grid needs at least two points"));
        }
        let dt = times[1] - times[0];
        for k in 1..times.len() {
            if ((times[k] - times[k - 1]) - dt).abs() > 1e-9 * dt.abs().max(1e-300) {
                return Err(Error::invalid("snapshot time grid must be uniform"));
            }
        }
        let n_q = trajectories[0].nrows();
        for t in &trajectories {
            if t.nrows() != n_q || t.ncols() != times.len() {
                return Err(Error::DimensionMismatch {
                    context: "snapshot trajectory shape",
                    expected: n_q * times.len(),
                    got: t.nrows() * t.ncols(),
                });
            }
        }
        Ok(SnapshotSet {
            times,
            params,
            trajectories,
            derivatives: None,
        })
    }

    pub fn with_derivatives(mut self, derivs: Vec<DMatrix<f64>>) -> Result<Self> {
        if derivs.len() != self.trajectories.len() {
            return Err(Error::DimensionMismatch {
                context: "snapshot derivatives",
                expected: self.trajectories.len(),
                got: derivs.len(),
            });
        }
        for (d, t) in derivs.iter().zip(&self.trajectories) {
            if d.shape() != t.shape() {
                return Err(Error::invalid("derivative trajectory shape mismatch"));
            }
        }
        self.derivatives = Some(derivs);
        Ok(self)
    }

    pub fn state_dim(&self) -> usize {
        self.trajectories[0].nrows()
    }

    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn total_columns(&self) -> usize {
        self.trajectories.len() * self.times.len()
    }

    /// All snapshots stacked column-wise, trajectory by trajectory.
    pub fn stacked(&self) -> DMatrix<f64> {
        let n_q = self.state_dim();
        let mut q = DMatrix::zeros(n_q, self.total_columns());
        let mut col = 0;
        for t in &self.trajectories {
            q.columns_mut(col, t.ncols()).copy_from(t);
            col += t.ncols();
        }
        q
    }

    pub fn reference(&self, mode: &QbarMode) -> Result<DVector<f64>> {
        let n_q = self.state_dim();
        Ok(match mode {
            QbarMode::Zero => DVector::zeros(n_q),
            QbarMode::MeanSnapshot => {
                let mut acc = DVector::zeros(n_q);
                for t in &self.trajectories {
                    for c in t.column_iter() {
                        acc += c;
                    }
                }
                acc / self.total_columns() as f64
            }
            QbarMode::Fixed(v) => {
                if v.len() != n_q {
                    return Err(Error::DimensionMismatch {
                        context: "fixed reference vector",
                        expected: n_q,
                        got: v.len(),
                    });
                }
                v.clone()
            }
        })
    }
}

/// A fitted state approximation: q ≈ q̄ + V q̂ (+ W̃ (q̂ ⊗̃ q̂) for QM).
#[derive(Debug, Clone)]
pub struct Reduction {
    pub qbar: DVector<f64>,
    /// Orthonormal basis V, n_q × r.
    pub basis: DMatrix<f64>,
    /// Compressed quadratic weights W̃, n_q × r(r+1)/2, orthogonal to V.
    pub wtilde: Option<DMatrix<f64>>,
    /// Numerical rank of the shifted snapshot matrix observed during the fit;
    /// smaller than r means trailing basis vectors come from null-space completion.
    pub numerical_rank: usize,
    /// QM regularization used, if any.
    pub rho: Option<f64>,
}

impl Reduction {
    pub fn r(&self) -> usize {
        self.basis.ncols()
    }

    pub fn state_dim(&self) -> usize {
        self.basis.nrows()
    }

    /// h(q) = V^T (q - q̄).
    pub fn compress(&self, q: DVectorView<'_, f64>) -> DVector<f64> {
        self.basis.transpose() * (q - &self.qbar)
    }

    pub fn compress_matrix(&self, q: &DMatrix<f64>) -> DMatrix<f64> {
        let shifted = subtract_column(q, &self.qbar);
        self.basis.transpose() * shifted
    }

    /// g(q̂) = q̄ + V q̂ + W̃ (q̂ ⊗̃ q̂).
    pub fn decompress(&self, qhat: DVectorView<'_, f64>) -> DVector<f64> {
        let mut q = &self.qbar + &self.basis * qhat;
        if let Some(w) = &self.wtilde {
            q += w * compressed_quadratic(qhat);
        }
        q
    }

    /// Decoder Jacobian g'(q̂) = V + W̃ J_{⊗̃}(q̂), of shape n_q × r.
    pub fn decoder_jacobian(&self, qhat: DVectorView<'_, f64>) -> DMatrix<f64> {
        let mut jac = self.basis.clone();
        if let Some(w) = &self.wtilde {
            let r = self.r();
            // Row (i <= j) of the compressed quadratic map has derivative
            // q_j w.r.t. q_i plus q_i w.r.t. q_j (doubling on the diagonal).
            for i in 0..r {
                for j in i..r {
                    let col = w.column(quadratic_pair_index(r, i, j));
                    if i == j {
                        let mut c = jac.column_mut(i);
                        c.axpy(2.0 * qhat[i], &col, 1.0);
                    } else {
                        jac.column_mut(i).axpy(qhat[j], &col, 1.0);
                        jac.column_mut(j).axpy(qhat[i], &col, 1.0);
                    }
                }
            }
        }
        jac
    }
}

fn subtract_column(q: &DMatrix<f64>, qbar: &DVector<f64>) -> DMatrix<f64> {
    let mut out = q.clone();
    for mut c in out.column_iter_mut() {
        c -= qbar;
    }
    out
}

/// Fix singular vector signs: the largest-magnitude entry of each column is
/// made positive (first such index on ties) for reproducibility.
fn fix_signs(u: &mut DMatrix<f64>) {
    for mut col in u.column_iter_mut() {
        let mut imax = 0;
        let mut vmax = 0.0;
        for (i, v) in col.iter().enumerate() {
            if v.abs() > vmax {
                vmax = v.abs();
                imax = i;
            }
        }
        if col[imax] < 0.0 {
            col.neg_mut();
        }
    }
}

struct PodFactors {
    u: DMatrix<f64>,
    singular_values: DVector<f64>,
    numerical_rank: usize,
}

fn pod_factors(snapshots: &SnapshotSet, qbar: &DVector<f64>) -> PodFactors {
    let q = subtract_column(&snapshots.stacked(), qbar);
    let (nr, nc) = q.shape();
    let svd = q.svd(true, false);
    let mut u = svd.u.expect("left singular vectors");
    fix_signs(&mut u);
    let smax = svd.singular_values.max();
    let tol = smax * f64::EPSILON * (nr.max(nc) as f64);
    let numerical_rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    PodFactors {
        u,
        singular_values: svd.singular_values,
        numerical_rank,
    }
}

/// POD: V spans the first r left singular vectors of the shifted snapshot matrix.
pub fn pod(snapshots: &SnapshotSet, r: usize, qbar_mode: &QbarMode) -> Result<Reduction> {
    let max_r = snapshots.state_dim().min(snapshots.total_columns());
    if r == 0 || r > max_r {
        return Err(Error::invalid(format!(
            "reduced dimension r = {r} must be in 1..={max_r}"
        )));
    }
    let qbar = snapshots.reference(qbar_mode)?;
    let factors = pod_factors(snapshots, &qbar);
    Ok(Reduction {
        qbar,
        basis: factors.u.columns(0, r).clone_owned(),
        wtilde: None,
        numerical_rank: factors.numerical_rank.min(r),
        rho: None,
    })
}

/// Singular values of the shifted snapshot matrix (for diagnostics and oracles).
pub fn pod_singular_values(snapshots: &SnapshotSet, qbar_mode: &QbarMode) -> Result<DVector<f64>> {
    let qbar = snapshots.reference(qbar_mode)?;
    Ok(pod_factors(snapshots, &qbar).singular_values)
}

/// Greedy quadratic-manifold fit: V columns are chosen one at a time from the
/// `n_candidates` leading left singular vectors, each step solving the ridge
/// problem for W̃ and keeping the candidate with the smallest objective
/// ||(I - V V^T) Q - W̃ (V^T Q ⊗̃ V^T Q)||_F^2 + ρ ||W̃||_F^2.
pub fn greedy_qm(
    snapshots: &SnapshotSet,
    r: usize,
    rho: f64,
    n_candidates: usize,
    qbar_mode: &QbarMode,
) -> Result<Reduction> {
    let max_r = snapshots.state_dim().min(snapshots.total_columns());
    if r == 0 || r > max_r {
        return Err(Error::invalid(format!(
            "reduced dimension r = {r} must be in 1..={max_r}"
        )));
    }
    if n_candidates < r {
        return Err(Error::invalid(format!(
            "candidate pool size {n_candidates} must be at least r = {r}"
        )));
    }
    if !(rho >= 0.0) {
        return Err(Error::invalid("rho must be nonnegative"));
    }
    let qbar = snapshots.reference(qbar_mode)?;
    let q = subtract_column(&snapshots.stacked(), &qbar);
    let factors = pod_factors(snapshots, &qbar);
    let pool_size = n_candidates.min(factors.u.ncols());
    let pool = factors.u.columns(0, pool_size).clone_owned();

    // Quantities shared by every candidate evaluation. The compressed
    // quadratic features of any subset of pool coordinates are a row subset of
    // the full pool features, so the per-candidate ridge solves reduce to
    // small dense systems assembled from these precomputed blocks.
    let z_pool = pool.transpose() * &q; // pool_size × m
    let n_pairs = compressed_len(pool_size, 2);
    let m = q.ncols();
    let mut phi_pool = DMatrix::zeros(n_pairs, m);
    for c in 0..m {
        phi_pool.set_column(c, &compressed_quadratic(z_pool.column(c)));
    }
    let gram_pool = &phi_pool * phi_pool.transpose();
    let pq = &phi_pool * q.transpose(); // n_pairs × n_q
    let z_norms: Vec<f64> = (0..pool_size).map(|i| z_pool.row(i).norm_squared()).collect();
    let q_norm2 = q.norm_squared();

    let pair_rows = |subset: &[usize]| -> Vec<usize> {
        let s = subset.len();
        let mut rows = Vec::with_capacity(compressed_len(s, 2));
        for a in 0..s {
            for b in a..s {
                rows.push(quadratic_pair_index(pool_size, subset[a], subset[b]));
            }
        }
        rows
    };

    // Ridge solve for the subset, returning (W̃^T, objective value).
    let solve_subset = |subset: &[usize]| -> Result<(DMatrix<f64>, f64)> {
        let rows = pair_rows(subset);
        let p = rows.len();
        let v_sub = select_columns(&pool, subset);
        let pq_sub = select_rows(&pq, &rows);
        // B = Φ_sub R^T with R = (I - V V^T) Q.
        let b = &pq_sub - (&pq_sub * &v_sub) * v_sub.transpose();
        let mut g_sub = DMatrix::zeros(p, p);
        for (a, &ra) in rows.iter().enumerate() {
            for (bi, &rb) in rows.iter().enumerate() {
                g_sub[(a, bi)] = gram_pool[(ra, rb)];
            }
        }
        for i in 0..p {
            g_sub[(i, i)] += rho;
        }
        let (chol, _) = cholesky_with_jitter(&g_sub)?;
        let x = chol.solve(&b); // W̃^T, p × n_q
        let r_norm2 = q_norm2 - subset.iter().map(|&i| z_norms[i]).sum::<f64>();
        let objective = r_norm2 - x.dot(&b);
        Ok((x, objective))
    };

    let mut selected: Vec<usize> = Vec::with_capacity(r);
    for _ in 0..r {
        let mut best: Option<(usize, f64)> = None;
        for c in 0..pool_size {
            if selected.contains(&c) {
                continue;
            }
            let mut trial = selected.clone();
            trial.push(c);
            trial.sort_unstable();
            let (_, obj) = solve_subset(&trial)?;
            match best {
                None => best = Some((c, obj)),
                Some((_, best_obj)) => {
                    // Lowest pool index wins on ties within 1e-12 relative.
                    if obj < best_obj - 1e-12 * best_obj.abs() {
                        best = Some((c, obj));
                    }
                }
            }
        }
        let (chosen, _) = best.expect("candidate pool exhausted");
        selected.push(chosen);
        selected.sort_unstable();
    }

    let v = select_columns(&pool, &selected);
    let (x, _) = solve_subset(&selected)?;
    let mut wtilde = x.transpose();
    // Enforce V^T W̃ = 0 exactly.
    wtilde -= &v * (v.transpose() * &wtilde);

    Ok(Reduction {
        qbar,
        basis: v,
        wtilde: Some(wtilde),
        numerical_rank: factors.numerical_rank.min(r),
        rho: Some(rho),
    })
}

fn select_columns(a: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows(), cols.len());
    for (k, &c) in cols.iter().enumerate() {
        out.set_column(k, &a.column(c));
    }
    out
}

fn select_rows(a: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(rows.len(), a.ncols());
    for (k, &r) in rows.iter().enumerate() {
        out.set_row(k, &a.row(r));
    }
    out
}

/// Norm choice for the projection error metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpNorm {
    L1,
    L2,
}

fn lp_norm(v: DVectorView<'_, f64>, p: LpNorm) -> f64 {
    match p {
        LpNorm::L1 => v.iter().map(|x| x.abs()).sum(),
        LpNorm::L2 => v.norm(),
    }
}

/// Relative L∞-Lp projection error of the snapshots under g ∘ h:
/// max_k ||q_k - g(h(q_k))||_p / max_k ||q_k||_p over all snapshot columns.
pub fn projection_error(snapshots: &SnapshotSet, red: &Reduction, norm: LpNorm) -> Result<f64> {
    let mut num: f64 = 0.0;
    let mut den: f64 = 0.0;
    for t in &snapshots.trajectories {
        for q in t.column_iter() {
            let recon = red.decompress(red.compress(q).as_view());
            num = num.max(lp_norm((q - recon).as_view(), norm));
            den = den.max(lp_norm(q, norm));
        }
    }
    if den == 0.0 {
        return Err(Error::DegenerateTrajectory);
    }
    Ok(num / den)
}

/// Training reconstruction residual ||Q_shift - [V Ẑ + W̃ (Ẑ ⊗̃ Ẑ)]||_F, the
/// quantity the QM objective controls (with Ẑ = V^T Q_shift).
pub fn reconstruction_residual(snapshots: &SnapshotSet, red: &Reduction) -> f64 {
    let mut acc = 0.0;
    for t in &snapshots.trajectories {
        for q in t.column_iter() {
            let recon = red.decompress(red.compress(q).as_view());
            acc += (q - recon).norm_squared();
        }
    }
    acc.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn single_traj(q: DMatrix<f64>) -> SnapshotSet {
        let n = q.ncols();
        let times: Vec<f64> = (0..n).map(|k| k as f64).collect();
        SnapshotSet::new(times, vec![vec![0.0]], vec![q]).unwrap()
    }

    fn random_orthonormal(n: usize, r: usize, rng: &mut StdRng) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, r, |_, _| rng.gen_range(-1.0..1.0));
        let qr = a.qr();
        qr.q()
    }

    #[test]
    fn pod_rank_one() {
        let mut q = DMatrix::zeros(4, 3);
        q.set_column(1, &DVector::from_column_slice(&[3.0, 0.0, -4.0, 0.0]));
        let red = pod(&single_traj(q), 1, &QbarMode::Zero).unwrap();
        let v = red.basis.column(0);
        // Sign convention makes the largest-magnitude entry positive.
        assert_relative_eq!(v[0], -0.6, max_relative = 1e-12);
        assert_relative_eq!(v[2], 0.8, max_relative = 1e-12);
    }

    #[test]
    fn pod_dominant_direction() {
        let mut q = DMatrix::zeros(3, 2);
        q[(0, 0)] = 2.0;
        q[(1, 1)] = 1.0;
        let red = pod(&single_traj(q), 1, &QbarMode::Zero).unwrap();
        let v = red.basis.column(0);
        assert_relative_eq!(v[0], 1.0, max_relative = 1e-12);
        assert!(v[1].abs() < 1e-12 && v[2].abs() < 1e-12);
    }

    #[test]
    fn pod_reconstruction_matches_tail_energy() {
        let mut rng = StdRng::seed_from_u64(1);
        let q = DMatrix::from_fn(20, 40, |_, _| rng.gen_range(-1.0..1.0));
        let svals = q.clone().svd(false, false).singular_values;
        for r in [1, 3, 7, 15] {
            let red = pod(&single_traj(q.clone()), r, &QbarMode::Zero).unwrap();
            let recon_err = (&q - &red.basis * (red.basis.transpose() * &q)).norm();
            let tail: f64 = svals.iter().skip(r).map(|s| s * s).sum::<f64>().sqrt();
            assert_relative_eq!(recon_err, tail, max_relative = 1e-8);
        }
    }

    #[test]
    fn pod_mean_reference() {
        let mut rng = StdRng::seed_from_u64(2);
        let q = DMatrix::from_fn(5, 8, |_, _| rng.gen_range(0.0..1.0));
        let snaps = single_traj(q.clone());
        let red = pod(&snaps, 2, &QbarMode::MeanSnapshot).unwrap();
        let mean = q.column_sum() / 8.0;
        assert_relative_eq!(red.qbar, mean, max_relative = 1e-12);
    }

    #[test]
    fn compress_decompress_identities() {
        let mut rng = StdRng::seed_from_u64(3);
        let q = DMatrix::from_fn(10, 20, |_, _| rng.gen_range(-1.0..1.0));
        let red = pod(&single_traj(q), 4, &QbarMode::MeanSnapshot).unwrap();
        // h(q̄) = 0 and h(q̄ + V e1) = e1.
        assert!(red.compress(red.qbar.as_view()).norm() < 1e-12);
        let e1 = &red.qbar + red.basis.column(0);
        let z = red.compress(e1.as_view());
        assert_relative_eq!(z[0], 1.0, max_relative = 1e-12);
        // h ∘ g identity on random reduced states.
        for _ in 0..1000 {
            let zhat = DVector::from_fn(4, |_, _| rng.gen_range(-2.0..2.0));
            let back = red.compress(red.decompress(zhat.as_view()).as_view());
            assert!((back - &zhat).norm() <= 1e-10 * (1.0 + zhat.norm()));
        }
    }

    fn planted_qm_snapshots(
        n_q: usize,
        r: usize,
        m_half: usize,
        rng: &mut StdRng,
    ) -> (SnapshotSet, DMatrix<f64>, DMatrix<f64>) {
        let v = random_orthonormal(n_q, r, rng);
        let mut w = DMatrix::from_fn(n_q, compressed_len(r, 2), |_, _| rng.gen_range(-1.0..1.0));
        w -= &v * (v.transpose() * &w);
        w *= 0.1;
        // Include ±z pairs so the linear and quadratic parts decouple exactly
        // and the leading POD vectors recover the planted span.
        let mut cols = Vec::new();
        for _ in 0..m_half {
            let z = DVector::from_fn(r, |_, _| rng.gen_range(-1.0..1.0f64));
            for sign in [1.0, -1.0] {
                let zs = &z * sign;
                cols.push(&v * &zs + &w * compressed_quadratic(zs.as_view()));
            }
        }
        let mut q = DMatrix::zeros(n_q, cols.len());
        for (j, c) in cols.iter().enumerate() {
            q.set_column(j, c);
        }
        (single_traj(q), v, w)
    }

    #[test]
    fn greedy_qm_recovers_planted_manifold() {
        let mut rng = StdRng::seed_from_u64(4);
        let (snaps, _, _) = planted_qm_snapshots(12, 3, 30, &mut rng);
        let red = greedy_qm(&snaps, 3, 0.0, 6, &QbarMode::Zero).unwrap();
        let q = snaps.stacked();
        let resid = reconstruction_residual(&snaps, &red);
        assert!(
            resid <= 1e-6 * q.norm(),
            "planted manifold residual {resid} vs {}",
            q.norm()
        );
        // Orthogonality invariants.
        let v = &red.basis;
        let w = red.wtilde.as_ref().unwrap();
        assert!((v.transpose() * v - DMatrix::identity(3, 3)).norm() <= 1e-10);
        assert!((v.transpose() * w).norm() <= 1e-8 * w.norm().max(1e-300));
    }

    #[test]
    fn greedy_qm_large_rho_kills_wtilde() {
        let mut rng = StdRng::seed_from_u64(5);
        let (snaps, _, _) = planted_qm_snapshots(10, 2, 25, &mut rng);
        let red = greedy_qm(&snaps, 2, 1e12, 4, &QbarMode::Zero).unwrap();
        let w = red.wtilde.as_ref().unwrap();
        assert!(w.norm() <= 1e-6, "||W̃|| = {} at huge rho", w.norm());
        // Objective collapses to the POD residual.
        let pod_red = pod(&snaps, 2, &QbarMode::Zero).unwrap();
        let qm_resid = reconstruction_residual(&snaps, &red);
        let pod_resid = reconstruction_residual(&snaps, &pod_red);
        assert!(qm_resid <= pod_resid * (1.0 + 1e-6) + 1e-9);
    }

    #[test]
    fn greedy_qm_degenerate_pool_is_pod_basis() {
        let mut rng = StdRng::seed_from_u64(6);
        let q = DMatrix::from_fn(8, 30, |_, _| rng.gen_range(-1.0..1.0));
        let snaps = single_traj(q);
        let red = greedy_qm(&snaps, 3, 1e-3, 3, &QbarMode::Zero).unwrap();
        let pod_red = pod(&snaps, 3, &QbarMode::Zero).unwrap();
        assert_relative_eq!(red.basis, pod_red.basis, max_relative = 1e-12);
    }

    #[test]
    fn qm_residual_dominates_pod_with_fixed_basis() {
        let mut rng = StdRng::seed_from_u64(7);
        let q = DMatrix::from_fn(8, 30, |_, _| rng.gen_range(-1.0..1.0));
        let snaps = single_traj(q);
        let red = greedy_qm(&snaps, 3, 1e-8, 3, &QbarMode::Zero).unwrap();
        let pod_red = pod(&snaps, 3, &QbarMode::Zero).unwrap();
        let qm_resid = reconstruction_residual(&snaps, &red);
        let pod_resid = reconstruction_residual(&snaps, &pod_red);
        assert!(
            qm_resid <= pod_resid + 1e-10,
            "W̃ = 0 is feasible, so QM residual {qm_resid} must not exceed POD residual {pod_resid}"
        );
    }

    #[test]
    fn decoder_jacobian_cases() {
        let mut rng = StdRng::seed_from_u64(8);
        let (snaps, _, _) = planted_qm_snapshots(10, 3, 25, &mut rng);
        let pod_red = pod(&snaps, 3, &QbarMode::Zero).unwrap();
        let z = DVector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0));
        // POD: Jacobian is V for any q̂.
        assert_relative_eq!(pod_red.decoder_jacobian(z.as_view()), pod_red.basis);
        let qm = greedy_qm(&snaps, 3, 1e-6, 6, &QbarMode::Zero).unwrap();
        // QM at the origin: the quadratic term has zero Jacobian.
        let j0 = qm.decoder_jacobian(DVector::zeros(3).as_view());
        assert_relative_eq!(j0, qm.basis, max_relative = 1e-14);
        // QM at random q̂: matches central finite differences.
        let jac = qm.decoder_jacobian(z.as_view());
        let h = 1e-6;
        for k in 0..3 {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[k] += h;
            zm[k] -= h;
            let fd = (qm.decompress(zp.as_view()) - qm.decompress(zm.as_view())) / (2.0 * h);
            let col = jac.column(k);
            assert!((col - &fd).norm() <= 1e-6 * (1.0 + fd.norm()));
        }
    }

    #[test]
    fn g_of_h_is_idempotent() {
        let mut rng = StdRng::seed_from_u64(9);
        let (snaps, _, _) = planted_qm_snapshots(10, 2, 20, &mut rng);
        let qm = greedy_qm(&snaps, 2, 1e-4, 4, &QbarMode::Zero).unwrap();
        for _ in 0..100 {
            let q = DVector::from_fn(10, |_, _| rng.gen_range(-1.0..1.0));
            let gh = qm.decompress(qm.compress(q.as_view()).as_view());
            let ghgh = qm.decompress(qm.compress(gh.as_view()).as_view());
            assert!((ghgh - &gh).norm() <= 1e-8 * (1.0 + gh.norm()));
        }
    }

    #[test]
    fn projection_error_cases() {
        let mut rng = StdRng::seed_from_u64(10);
        // Snapshots inside span(V) project exactly.
        let v = random_orthonormal(8, 3, &mut rng);
        let z = DMatrix::from_fn(3, 12, |_, _| rng.gen_range(-1.0..1.0));
        let snaps = single_traj(&v * z);
        let red = pod(&snaps, 3, &QbarMode::Zero).unwrap();
        assert!(projection_error(&snaps, &red, LpNorm::L2).unwrap() <= 1e-10);

        // Rank-2 data, r = 1: the ratio is computable from the SVD.
        let mut q = DMatrix::zeros(4, 2);
        q[(0, 0)] = 2.0;
        q[(1, 1)] = 1.0;
        let snaps = single_traj(q);
        let red = pod(&snaps, 1, &QbarMode::Zero).unwrap();
        let err = projection_error(&snaps, &red, LpNorm::L2).unwrap();
        // Dropping sigma_2 = 1 leaves the e2 column with error 1; denominator 2.
        assert_relative_eq!(err, 0.5, max_relative = 1e-12);
    }

    #[test]
    fn qm_huge_rho_projection_error_matches_pod() {
        let mut rng = StdRng::seed_from_u64(11);
        let q = DMatrix::from_fn(16, 40, |_, _| rng.gen_range(-1.0..1.0));
        let snaps = single_traj(q);
        let qm = greedy_qm(&snaps, 4, 1e8, 8, &QbarMode::Zero).unwrap();
        let pod_red = pod(&snaps, 4, &QbarMode::Zero).unwrap();
        let e_qm = projection_error(&snaps, &qm, LpNorm::L2).unwrap();
        let e_pod = projection_error(&snaps, &pod_red, LpNorm::L2).unwrap();
        assert!(
            (e_qm - e_pod).abs() <= 0.01 * e_pod,
            "rho → ∞ projection error {e_qm} vs POD {e_pod}"
        );
    }

    #[test]
    fn rejects_bad_arguments() {
        let snaps = single_traj(DMatrix::from_element(4, 3, 1.0));
        assert!(pod(&snaps, 0, &QbarMode::Zero).is_err());
        assert!(pod(&snaps, 5, &QbarMode::Zero).is_err());
        assert!(greedy_qm(&snaps, 2, 1.0, 1, &QbarMode::Zero).is_err());
        assert!(greedy_qm(&snaps, 2, -1.0, 4, &QbarMode::Zero).is_err());
    }
}
