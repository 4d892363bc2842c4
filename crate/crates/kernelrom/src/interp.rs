//! Regularized vector-valued kernel interpolation.
//!
//! Fits interpolants of the form s(x) = Ω^T K(X, x) by solving
//! (K(X,X) + γ I) Ω = Y^T, caches the explicit feature coefficient matrix
//! C = c_φ Ω^T φ(X)^T G when the kernel has a feature-map part, and computes
//! RKHS norms and pointwise power-function bounds.

use nalgebra::{DMatrix, DVector, DVectorView};

use crate::error::{Error, Result};
use crate::kernels::{self, power_function, KernelSpec, RbfGenerator};
use crate::linalg::cholesky_with_jitter;

/// Fitted regularized kernel interpolant.
#[derive(Debug, Clone)]
pub struct Interpolant {
    pub kernel: KernelSpec,
    /// Centers X, one column per data site (n_x × m).
    pub centers: DMatrix<f64>,
    /// Coefficients Ω (m × p).
    pub omega: DMatrix<f64>,
    pub gamma: f64,
    /// Explicit feature coefficients C = c_φ Ω^T φ(X)^T G (p × n_φ), present
    /// when the kernel contains a feature-map part.
    pub feature_coeffs: Option<DMatrix<f64>>,
    /// Relative residual of (K + γI) Ω = Y^T recorded at fit time.
    pub fit_residual: f64,
    /// Diagonal jitter that had to be added for the factorization, if any.
    pub jitter: f64,
}

/// Kernel Gram matrix cached for repeated fits with different γ
/// (used by the regularization grid search).
pub struct GramCache {
    pub kernel: KernelSpec,
    pub centers: DMatrix<f64>,
    gram: DMatrix<f64>,
}

impl GramCache {
    pub fn new(kernel: KernelSpec, centers: DMatrix<f64>) -> Result<Self> {
        if let Some((i, j)) = kernels::duplicate_columns(&centers) {
            return Err(Error::DuplicateCenters { i, j });
        }
        let gram = kernel.matrix(&centers, &centers)?;
        Ok(GramCache {
            kernel,
            centers,
            gram,
        })
    }

    /// Solve (K + γI) Ω = Y^T for the outputs Y (p × m).
    pub fn fit(&self, outputs: &DMatrix<f64>, gamma: f64) -> Result<Interpolant> {
        let m = self.centers.ncols();
        if outputs.ncols() != m {
            return Err(Error::DimensionMismatch {
                context: "interpolation outputs",
                expected: m,
                got: outputs.ncols(),
            });
        }
        if !(gamma >= 0.0) {
            return Err(Error::invalid(format!("gamma must be nonnegative, got {gamma}")));
        }
        let mut a = self.gram.clone();
        for i in 0..m {
            a[(i, i)] += gamma;
        }
        let (chol, jitter) = if gamma == 0.0 {
            // The unregularized problem requires an invertible Gram matrix.
            match a.clone().cholesky() {
                Some(ch) => (ch, 0.0),
                None => return Err(Error::SingularGram),
            }
        } else {
            cholesky_with_jitter(&a)?
        };
        let yt = outputs.transpose();
        let omega = chol.solve(&yt);
        let y_norm = outputs.norm();
        let fit_residual = if y_norm > 0.0 {
            (&a * &omega - &yt).norm() / y_norm
        } else {
            0.0
        };
        let feature_coeffs = self.kernel.feature_part().map(|(c_phi, fm)| {
            let inputs = match self.kernel.normalization() {
                Some((sigma, xbar)) => kernels::normalize_matrix(&self.centers, sigma, xbar),
                None => self.centers.clone(),
            };
            let phi = fm.eval_matrix(&inputs);
            let mut gphi = phi;
            let mut row = 0;
            for (deg, size) in fm.block_degrees().iter().zip(fm.block_sizes()) {
                gphi.view_mut((row, 0), (size, m))
                    .scale_mut(fm.weight_of_degree(*deg));
                row += size;
            }
            (&gphi * &omega).transpose() * c_phi
        });
        Ok(Interpolant {
            kernel: self.kernel.clone(),
            centers: self.centers.clone(),
            omega,
            gamma,
            feature_coeffs,
            fit_residual,
            jitter,
        })
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }
}

/// Fit a regularized vector-valued interpolant to inputs X (n_x × m) and
/// outputs Y (p × m).
pub fn fit(
    kernel: KernelSpec,
    inputs: DMatrix<f64>,
    outputs: &DMatrix<f64>,
    gamma: f64,
) -> Result<Interpolant> {
    GramCache::new(kernel, inputs)?.fit(outputs, gamma)
}

impl Interpolant {
    pub fn output_dim(&self) -> usize {
        self.omega.ncols()
    }

    pub fn input_dim(&self) -> usize {
        self.centers.nrows()
    }

    /// Evaluate s(x). Pure feature-map kernels use the cached coefficients
    /// C φ(x); hybrids use C φ(x) + c_ψ Ω^T ψ_ε(x); otherwise Ω^T K(X, x).
    pub fn evaluate(&self, x: DVectorView<'_, f64>) -> Result<DVector<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "interpolant evaluation point",
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        match (&self.feature_coeffs, self.kernel.rbf_part()) {
            (Some(c), None) => {
                let nx = self.normalized(x);
                let (_, fm) = self.kernel.feature_part().expect("feature part");
                Ok(c * fm.eval(nx.as_view()))
            }
            (Some(c), Some((c_psi, rbf))) => {
                let nx = self.normalized(x);
                let (_, fm) = self.kernel.feature_part().expect("feature part");
                let mut out = c * fm.eval(nx.as_view());
                let centers = self.normalized_centers();
                let psi = DVector::from_fn(centers.ncols(), |j, _| {
                    rbf.eval_dist((centers.column(j) - &nx).norm())
                });
                out += self.omega.transpose() * psi * c_psi;
                Ok(out)
            }
            _ => self.evaluate_direct(x),
        }
    }

    /// Evaluate via the representer form Ω^T K(X, x) regardless of any cached
    /// feature coefficients.
    pub fn evaluate_direct(&self, x: DVectorView<'_, f64>) -> Result<DVector<f64>> {
        let xm = DMatrix::from_column_slice(x.len(), 1, x.clone_owned().as_slice());
        let k = self.kernel.matrix(&self.centers, &xm)?;
        let kv = DVector::from_column_slice(k.as_slice());
        Ok(self.omega.transpose() * kv)
    }

    /// Jacobian ds/dx (p × n_x). Analytic for feature maps and for Gaussian,
    /// inverse-quadratic, and inverse-multiquadric RBF parts; finite
    /// differences otherwise.
    pub fn evaluate_jacobian(&self, x: DVectorView<'_, f64>) -> Result<DMatrix<f64>> {
        let analytic_rbf = match self.kernel.rbf_part() {
            None => true,
            Some((_, rbf)) => matches!(
                rbf.generator,
                RbfGenerator::Gaussian
                    | RbfGenerator::InverseQuadratic
                    | RbfGenerator::InverseMultiquadric
            ),
        };
        if !analytic_rbf || self.feature_coeffs.is_none() && self.kernel.rbf_part().is_none() {
            return self.jacobian_fd(x);
        }
        let n = self.input_dim();
        let p = self.output_dim();
        let mut jac = DMatrix::zeros(p, n);
        let nx = self.normalized(x);
        if let (Some(c), Some((_, fm))) = (&self.feature_coeffs, self.kernel.feature_part()) {
            let mut jphi = c * fm.jacobian(nx.as_view());
            if let Some((sigma, _)) = self.kernel.normalization() {
                for k in 0..n {
                    jphi.column_mut(k).scale_mut(1.0 / sigma[k]);
                }
            }
            jac += jphi;
        }
        if let Some((c_psi, rbf)) = self.kernel.rbf_part() {
            let centers = self.normalized_centers();
            let m = centers.ncols();
            let eps = rbf.shape_epsilon;
            // d/dx ψ(ε d) = w(d) (x - x_j)^T with the division by d folded in.
            let mut jpsi = DMatrix::zeros(m, n);
            for j in 0..m {
                let diff = &nx - centers.column(j);
                let d2 = diff.norm_squared();
                let w = match rbf.generator {
                    RbfGenerator::Gaussian => -2.0 * eps * eps * (-eps * eps * d2).exp(),
                    RbfGenerator::InverseQuadratic => {
                        let t = 1.0 + eps * eps * d2;
                        -2.0 * eps * eps / (t * t)
                    }
                    RbfGenerator::InverseMultiquadric => {
                        let t = 1.0 + eps * eps * d2;
                        -eps * eps / (t * t.sqrt())
                    }
                    _ => unreachable!("finite differences handle other generators"),
                };
                for k in 0..n {
                    jpsi[(j, k)] = w * diff[k];
                }
            }
            if let Some((sigma, _)) = self.kernel.normalization() {
                for k in 0..n {
                    jpsi.column_mut(k).scale_mut(1.0 / sigma[k]);
                }
            }
            jac += (self.omega.transpose() * jpsi) * c_psi;
        }
        Ok(jac)
    }

    fn jacobian_fd(&self, x: DVectorView<'_, f64>) -> Result<DMatrix<f64>> {
        let n = self.input_dim();
        let p = self.output_dim();
        let mut jac = DMatrix::zeros(p, n);
        let x0 = x.clone_owned();
        for k in 0..n {
            let h = 1e-6 * (1.0 + x0[k].abs());
            let mut xp = x0.clone();
            let mut xm = x0.clone();
            xp[k] += h;
            xm[k] -= h;
            let df = (self.evaluate(xp.as_view())? - self.evaluate(xm.as_view())?) / (2.0 * h);
            jac.set_column(k, &df);
        }
        Ok(jac)
    }

    /// RKHS norm of the vector interpolant:
    /// sqrt( Σ_i ω_i^T K(X,X) ω_i ) over the p component coefficient vectors.
    pub fn rkhs_norm(&self) -> f64 {
        if self.centers.ncols() == 0 {
            return 0.0;
        }
        let k = self
            .kernel
            .matrix(&self.centers, &self.centers)
            .expect("centers consistent with kernel");
        let komega = &k * &self.omega;
        let mut acc = 0.0;
        for i in 0..self.omega.ncols() {
            acc += self.omega.column(i).dot(&komega.column(i));
        }
        acc.max(0.0).sqrt()
    }

    fn normalized(&self, x: DVectorView<'_, f64>) -> DVector<f64> {
        match self.kernel.normalization() {
            Some((sigma, xbar)) => kernels::normalize_vec(&x.clone_owned(), sigma, xbar),
            None => x.clone_owned(),
        }
    }

    fn normalized_centers(&self) -> DMatrix<f64> {
        match self.kernel.normalization() {
            Some((sigma, xbar)) => kernels::normalize_matrix(&self.centers, sigma, xbar),
            None => self.centers.clone(),
        }
    }
}

/// Pointwise error bound P_{K,X}(x) · ||L||_2 · ||v||, with the caller
/// supplying the RKHS norm estimate and the operator norm of the weight's
/// Cholesky factor.
pub fn pointwise_bound(
    interp: &Interpolant,
    x: DVectorView<'_, f64>,
    norm_estimate: f64,
    l_opnorm: f64,
) -> Result<f64> {
    if !(norm_estimate >= 0.0) {
        return Err(Error::invalid("norm estimate must be nonnegative"));
    }
    let p = power_function(&interp.kernel, &interp.centers, x)?;
    Ok(p * l_opnorm * norm_estimate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{FeatureMapSpec, PowerFunction, RbfSpec};
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn gaussian(eps: f64) -> KernelSpec {
        KernelSpec::Rbf(RbfSpec::new(RbfGenerator::Gaussian, eps).unwrap())
    }

    #[test]
    fn single_center_unregularized() {
        let x = DMatrix::from_column_slice(1, 1, &[0.0]);
        let y = DMatrix::from_column_slice(1, 1, &[5.0]);
        let s = fit(gaussian(1.0), x, &y, 0.0).unwrap();
        assert_relative_eq!(s.omega[(0, 0)], 5.0, max_relative = 1e-14);
        let v = s.evaluate(DVector::from_column_slice(&[0.0]).as_view()).unwrap();
        assert_relative_eq!(v[0], 5.0, max_relative = 1e-14);
    }

    #[test]
    fn linear_ridge_recovers_slope() {
        let fm = FeatureMapSpec::new(false, 1, vec![1.0], 1).unwrap();
        let x = DMatrix::from_column_slice(1, 2, &[1.0, 2.0]);
        let y = DMatrix::from_column_slice(1, 2, &[2.0, 4.0]);
        let s = fit(KernelSpec::FeatureMap(fm), x, &y, 1e-10).unwrap();
        let c = s.feature_coeffs.as_ref().unwrap();
        assert!((c[(0, 0)] - 2.0).abs() < 1e-4, "C = {c}");
    }

    #[test]
    fn zero_outputs_zero_interpolant() {
        let mut rng = StdRng::seed_from_u64(1);
        let x = DMatrix::from_fn(2, 6, |_, _| rng.gen_range(-1.0..1.0));
        let y = DMatrix::zeros(3, 6);
        let s = fit(gaussian(1.0), x, &y, 0.5).unwrap();
        assert_eq!(s.omega, DMatrix::zeros(6, 3));
        assert_eq!(s.rkhs_norm(), 0.0);
        let v = s
            .evaluate(DVector::from_column_slice(&[0.1, 0.2]).as_view())
            .unwrap();
        assert_eq!(v, DVector::zeros(3));
    }

    #[test]
    fn exact_interpolation_at_centers() {
        let mut rng = StdRng::seed_from_u64(2);
        let x = DMatrix::from_fn(3, 12, |_, _| rng.gen_range(-1.0..1.0));
        let y = DMatrix::from_fn(2, 12, |_, _| rng.gen_range(-1.0..1.0));
        let s = fit(gaussian(1.0), x.clone(), &y, 0.0).unwrap();
        for j in 0..12 {
            let v = s.evaluate(x.column(j)).unwrap();
            let err = (v - y.column(j)).norm() / y.column(j).norm().max(1e-300);
            assert!(err <= 1e-8, "training residual {err} at column {j}");
        }
        assert!(s.fit_residual <= 1e-8);
    }

    #[test]
    fn duplicate_centers_rejected() {
        let x = DMatrix::from_column_slice(1, 2, &[1.0, 1.0]);
        let y = DMatrix::zeros(1, 2);
        let err = fit(gaussian(1.0), x, &y, 0.0);
        assert!(matches!(err, Err(Error::DuplicateCenters { .. })));
    }

    #[test]
    fn singular_gram_without_regularization() {
        // Rank-1 feature-map Gram over 2 centers is singular at γ = 0.
        let fm = FeatureMapSpec::new(false, 1, vec![1.0], 1).unwrap();
        let x = DMatrix::from_column_slice(1, 2, &[1.0, 2.0]);
        let y = DMatrix::from_column_slice(1, 2, &[1.0, 2.0]);
        let err = fit(KernelSpec::FeatureMap(fm), x, &y, 0.0);
        assert!(matches!(err, Err(Error::SingularGram)));
    }

    #[test]
    fn rkhs_norm_examples() {
        // Single center with K(x1,x1) = 1 and Ω = [[3]] has norm 3.
        let x = DMatrix::from_column_slice(1, 1, &[0.0]);
        let y = DMatrix::from_column_slice(1, 1, &[3.0]);
        let s = fit(gaussian(1.0), x, &y, 0.0).unwrap();
        assert_relative_eq!(s.rkhs_norm(), 3.0, max_relative = 1e-12);

        // Two centers at 0 and 1 with Ω = [1, 1]: norm^2 = 2 + 2 e^{-1}.
        let x = DMatrix::from_column_slice(1, 2, &[0.0, 1.0]);
        let k = gaussian(1.0);
        let gram = k.matrix(&x, &x).unwrap();
        let omega = DVector::from_column_slice(&[1.0, 1.0]);
        let rhs = &gram * &omega;
        let y = DMatrix::from_fn(1, 2, |_, j| rhs[j]);
        let s = fit(k, x, &y, 0.0).unwrap();
        assert_relative_eq!(
            s.rkhs_norm(),
            (2.0 + 2.0 * (-1.0f64).exp()).sqrt(),
            max_relative = 1e-10
        );
    }

    #[test]
    fn hybrid_dual_path_equality() {
        let fm = FeatureMapSpec::new(true, 2, vec![1.0, 1.0, 0.5], 2).unwrap();
        let rbf = RbfSpec::new(RbfGenerator::Gaussian, 0.4).unwrap();
        let kernel = KernelSpec::hybrid(1.3, fm, 0.7, rbf).unwrap();
        let mut rng = StdRng::seed_from_u64(3);
        let x = DMatrix::from_fn(2, 10, |_, _| rng.gen_range(-1.0..1.0));
        let y = DMatrix::from_fn(3, 10, |_, _| rng.gen_range(-1.0..1.0));
        let s = fit(kernel, x, &y, 1e-8).unwrap();
        for _ in 0..100 {
            let q = DVector::from_fn(2, |_, _| rng.gen_range(-1.5..1.5));
            let a = s.evaluate(q.as_view()).unwrap();
            let b = s.evaluate_direct(q.as_view()).unwrap();
            let rel = (&a - &b).norm() / (1.0 + b.norm());
            assert!(rel <= 1e-10, "dual path mismatch {rel}");
        }
    }

    #[test]
    fn representer_optimality_under_perturbation() {
        let mut rng = StdRng::seed_from_u64(4);
        let x = DMatrix::from_fn(2, 8, |_, _| rng.gen_range(-1.0..1.0));
        let y = DMatrix::from_fn(2, 8, |_, _| rng.gen_range(-1.0..1.0));
        let kernel = gaussian(0.8);
        let gamma = 1e-2;
        let gram = kernel.matrix(&x, &x).unwrap();
        let s = fit(kernel, x, &y, gamma).unwrap();
        let objective = |omega: &DMatrix<f64>| {
            let resid = (&gram * omega - y.transpose()).norm_squared();
            let mut norm2 = 0.0;
            let komega = &gram * omega;
            for i in 0..omega.ncols() {
                norm2 += omega.column(i).dot(&komega.column(i));
            }
            resid + gamma * norm2
        };
        let base = objective(&s.omega);
        for _ in 0..10 {
            let mut delta = DMatrix::from_fn(8, 2, |_, _| rng.gen_range(-1.0..1.0));
            delta *= 1e-3 / delta.norm();
            let perturbed = objective(&(&s.omega + delta));
            assert!(
                perturbed >= base - 1e-12 * base.max(1.0),
                "perturbation decreased objective: {perturbed} < {base}"
            );
        }
    }

    #[test]
    fn power_function_bound_on_planted_rkhs_element() {
        let mut rng = StdRng::seed_from_u64(5);
        let kernel = gaussian(1.2);
        // Plant v in the RKHS with 12 centers and a known norm from the
        // kernel-matrix quadratic form.
        let centers = DMatrix::from_fn(2, 12, |_, _| rng.gen_range(-1.0..1.0));
        let omega = DVector::from_fn(12, |_, _| rng.gen_range(-1.0..1.0));
        let gram = kernel.matrix(&centers, &centers).unwrap();
        let v_norm = (omega.dot(&(&gram * &omega))).sqrt();
        let v = |q: DVectorView<'_, f64>| -> f64 {
            (0..12)
                .map(|j| {
                    omega[j] * kernel.eval(centers.column(j), q).unwrap()
                })
                .sum()
        };
        // Fit an unregularized interpolant of v on a subset of its centers.
        let sub = centers.columns(0, 6).clone_owned();
        let y = DMatrix::from_fn(1, 6, |_, j| v(sub.column(j)));
        let s = fit(kernel.clone(), sub.clone(), &y, 0.0).unwrap();
        let pf = PowerFunction::new(&kernel, &sub).unwrap();
        for _ in 0..1000 {
            let q = DVector::from_fn(2, |_, _| rng.gen_range(-1.5..1.5));
            let truth = v(q.as_view());
            let fitted = s.evaluate(q.as_view()).unwrap()[0];
            let p = pf.eval(q.as_view()).unwrap();
            assert!(
                (truth - fitted).abs() <= p * v_norm + 1e-8,
                "power bound violated: |{truth} - {fitted}| > {p} * {v_norm}"
            );
        }
    }

    #[test]
    fn training_residual_monotone_in_gamma() {
        let mut rng = StdRng::seed_from_u64(6);
        let x = DMatrix::from_fn(2, 10, |_, _| rng.gen_range(-1.0..1.0));
        let y = DMatrix::from_fn(1, 10, |_, _| rng.gen_range(-1.0..1.0));
        let kernel = gaussian(0.9);
        let mut last = -1.0;
        for gamma in [0.0, 1e-6, 1e-3, 1.0] {
            let s = fit(kernel.clone(), x.clone(), &y, gamma).unwrap();
            let resid: f64 = (0..10)
                .map(|j| {
                    let v = s.evaluate(x.column(j)).unwrap();
                    (v - y.column(j)).norm_squared()
                })
                .sum();
            assert!(
                resid >= last - 1e-12,
                "residual not monotone: {resid} < {last} at gamma {gamma}"
            );
            last = resid;
        }
    }

    #[test]
    fn pointwise_bound_examples() {
        let kernel = gaussian(1.0);
        let x = DMatrix::from_column_slice(1, 1, &[0.0]);
        let y = DMatrix::from_column_slice(1, 1, &[1.0]);
        let s = fit(kernel, x, &y, 0.0).unwrap();
        // At a center the power function vanishes.
        let b = pointwise_bound(&s, DVector::from_column_slice(&[0.0]).as_view(), 1.0, 1.0).unwrap();
        assert!(b <= 1e-7);
        // Zero norm estimate gives a zero bound.
        let b = pointwise_bound(&s, DVector::from_column_slice(&[2.0]).as_view(), 0.0, 1.0).unwrap();
        assert_eq!(b, 0.0);
        // Matches the power-function value otherwise.
        let b = pointwise_bound(&s, DVector::from_column_slice(&[2.0]).as_view(), 1.0, 1.0).unwrap();
        assert_relative_eq!(b, (1.0 - (-8.0f64).exp()).sqrt(), max_relative = 1e-10);
    }

    #[test]
    fn analytic_jacobians_match_finite_differences() {
        let fm = FeatureMapSpec::new(true, 2, vec![1.0, 1.0, 0.5], 2).unwrap();
        let rbf = RbfSpec::new(RbfGenerator::InverseQuadratic, 0.6).unwrap();
        let mut rng = StdRng::seed_from_u64(7);
        let x = DMatrix::from_fn(2, 8, |_, _| rng.gen_range(-1.0..1.0));
        let y = DMatrix::from_fn(2, 8, |_, _| rng.gen_range(-1.0..1.0));
        let specs = vec![
            gaussian(0.7),
            KernelSpec::FeatureMap(fm.clone()),
            KernelSpec::hybrid(1.0, fm.clone(), 0.5, rbf).unwrap(),
            KernelSpec::normalized(
                KernelSpec::FeatureMap(fm),
                DVector::from_column_slice(&[1.7, 0.9]),
                DVector::from_column_slice(&[0.2, -0.1]),
            )
            .unwrap(),
        ];
        for kernel in specs {
            let s = fit(kernel, x.clone(), &y, 1e-10).unwrap();
            let q = DVector::from_fn(2, |_, _| rng.gen_range(-0.8..0.8));
            let jac = s.evaluate_jacobian(q.as_view()).unwrap();
            let fd = s.jacobian_fd(q.as_view()).unwrap();
            let rel = (&jac - &fd).norm() / (1.0 + fd.norm());
            assert!(rel <= 1e-6, "jacobian mismatch {rel} for {:?}", s.kernel);
        }
    }
}
