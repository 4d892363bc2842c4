//! Full-order models: 1D advection-diffusion (periodic, upwind) and viscous
//! Burgers (Dirichlet), plus Gaussian initial conditions and Latin hypercube
//! parameter sampling.

use nalgebra::{DMatrix, DVector, DVectorView};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};

/// Tridiagonal operator with optional periodic wrap corners.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    /// Coefficient of q[i-1] in row i (wraps to q[n-1] in row 0 if periodic).
    pub sub: Vec<f64>,
    pub diag: Vec<f64>,
    /// Coefficient of q[i+1] in row i (wraps to q[0] in row n-1 if periodic).
    pub sup: Vec<f64>,
    pub periodic: bool,
}

impl BandMatrix {
    pub fn n(&self) -> usize {
        self.diag.len()
    }

    pub fn apply(&self, q: DVectorView<'_, f64>) -> DVector<f64> {
        let n = self.n();
        let mut out = DVector::zeros(n);
        for i in 0..n {
            let mut acc = self.diag[i] * q[i];
            if i > 0 {
                acc += self.sub[i] * q[i - 1];
            } else if self.periodic {
                acc += self.sub[i] * q[n - 1];
            }
            if i + 1 < n {
                acc += self.sup[i] * q[i + 1];
            } else if self.periodic {
                acc += self.sup[i] * q[0];
            }
            out[i] = acc;
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut a = DMatrix::zeros(n, n);
        for i in 0..n {
            a[(i, i)] = self.diag[i];
            if i > 0 {
                a[(i, i - 1)] = self.sub[i];
            } else if self.periodic {
                a[(0, n - 1)] = self.sub[0];
            }
            if i + 1 < n {
                a[(i, i + 1)] = self.sup[i];
            } else if self.periodic {
                a[(n - 1, 0)] = self.sup[n - 1];
            }
        }
        a
    }

    fn constant(n: usize, sub: f64, diag: f64, sup: f64, periodic: bool) -> Self {
        BandMatrix {
            sub: vec![sub; n],
            diag: vec![diag; n],
            sup: vec![sup; n],
            periodic,
        }
    }
}

/// Linear FOM dq/dt = A q.
#[derive(Debug, Clone)]
pub struct LinearFom {
    pub a: BandMatrix,
    pub dx: f64,
    pub grid: Vec<f64>,
}

/// Quadratic FOM dq/dt = A q + B(q, q) with the symmetrized bilinear form
/// B(q, p) = -1/2 (q ⊙ D1 p + p ⊙ D1 q) induced by the upwind convection term.
#[derive(Debug, Clone)]
pub struct QuadraticFom {
    pub a: BandMatrix,
    pub d1_upwind: BandMatrix,
    pub dx: f64,
    pub grid: Vec<f64>,
}

#[derive(Debug, Clone)]
pub enum FomModel {
    Linear(LinearFom),
    Quadratic(QuadraticFom),
}

impl FomModel {
    pub fn state_dim(&self) -> usize {
        match self {
            FomModel::Linear(m) => m.a.n(),
            FomModel::Quadratic(m) => m.a.n(),
        }
    }

    pub fn grid(&self) -> &[f64] {
        match self {
            FomModel::Linear(m) => &m.grid,
            FomModel::Quadratic(m) => &m.grid,
        }
    }

    pub fn rhs(&self, q: DVectorView<'_, f64>) -> DVector<f64> {
        match self {
            FomModel::Linear(m) => m.a.apply(q),
            FomModel::Quadratic(m) => {
                let mut out = m.a.apply(q);
                let d1q = m.d1_upwind.apply(q);
                for i in 0..out.len() {
                    out[i] -= q[i] * d1q[i];
                }
                out
            }
        }
    }

    /// Symmetrized bilinear form B(q, p); zero for linear models.
    pub fn bilinear(&self, q: DVectorView<'_, f64>, p: DVectorView<'_, f64>) -> DVector<f64> {
        match self {
            FomModel::Linear(m) => DVector::zeros(m.a.n()),
            FomModel::Quadratic(m) => {
                let d1p = m.d1_upwind.apply(p);
                let d1q = m.d1_upwind.apply(q);
                DVector::from_fn(q.len(), |i, _| -0.5 * (q[i] * d1p[i] + p[i] * d1q[i]))
            }
        }
    }

    /// Jacobian of the right-hand side in band form.
    pub fn jacobian_band(&self, q: DVectorView<'_, f64>) -> BandMatrix {
        match self {
            FomModel::Linear(m) => m.a.clone(),
            FomModel::Quadratic(m) => {
                // d/dq [A q - q ⊙ (D1 q)] = A - diag(D1 q) - diag(q) D1.
                let n = m.a.n();
                let d1q = m.d1_upwind.apply(q);
                let mut jac = m.a.clone();
                for i in 0..n {
                    jac.diag[i] -= d1q[i] + q[i] * m.d1_upwind.diag[i];
                    jac.sub[i] -= q[i] * m.d1_upwind.sub[i];
                    jac.sup[i] -= q[i] * m.d1_upwind.sup[i];
                }
                jac
            }
        }
    }

    pub fn jacobian(&self, q: DVectorView<'_, f64>) -> DMatrix<f64> {
        self.jacobian_band(q).to_dense()
    }
}

/// Periodic advection-diffusion semi-discretization on n_q points of [0, 1):
/// A = κ D2 - β D1_upwind, with the centered second difference and the
/// first-order backward (upwind for β > 0) difference, both with wrap.
pub fn build_advdiff(n_q: usize, kappa: f64, beta: f64) -> Result<FomModel> {
    if n_q < 3 {
        return Err(Error::invalid("advection-diffusion grid needs n_q >= 3"));
    }
    if !(kappa > 0.0) || !(beta >= 0.0) {
        return Err(Error::invalid("advection-diffusion needs kappa > 0 and beta >= 0"));
    }
    let dx = 1.0 / n_q as f64;
    let idx2 = 1.0 / (dx * dx);
    let idx = 1.0 / dx;
    let a = BandMatrix::constant(
        n_q,
        kappa * idx2 + beta * idx,
        -2.0 * kappa * idx2 - beta * idx,
        kappa * idx2,
        true,
    );
    let grid = (0..n_q).map(|i| i as f64 * dx).collect();
    Ok(FomModel::Linear(LinearFom { a, dx, grid }))
}

/// Viscous Burgers semi-discretization on n_q interior points of (0, 1) with
/// homogeneous Dirichlet ghost values: A = ν D2, convection -q ⊙ (D1_upwind q)
/// with the backward difference (upwind for q >= 0).
pub fn build_burgers(n_q: usize, nu: f64) -> Result<FomModel> {
    if n_q < 3 {
        return Err(Error::invalid("Burgers grid needs n_q >= 3"));
    }
    if !(nu > 0.0) {
        return Err(Error::invalid("Burgers needs nu > 0"));
    }
    let dx = 1.0 / (n_q + 1) as f64;
    let idx2 = 1.0 / (dx * dx);
    let idx = 1.0 / dx;
    let a = BandMatrix::constant(n_q, nu * idx2, -2.0 * nu * idx2, nu * idx2, false);
    let d1_upwind = BandMatrix::constant(n_q, -idx, idx, 0.0, false);
    let grid = (1..=n_q).map(|i| i as f64 * dx).collect();
    Ok(FomModel::Quadratic(QuadraticFom {
        a,
        d1_upwind,
        dx,
        grid,
    }))
}

/// Gaussian pulse initial condition q0(x) = exp(-(x - μ1)^2 / μ2^2).
pub fn gaussian_ic(grid: &[f64], mu1: f64, mu2: f64) -> DVector<f64> {
    DVector::from_fn(grid.len(), |i, _| {
        let d = (grid[i] - mu1) / mu2;
        (-d * d).exp()
    })
}

/// Latin hypercube sample: one midpoint per stratum per dimension, strata
/// permuted by a seeded PRNG.
pub fn latin_hypercube(m: usize, bounds: &[(f64, f64)], seed: u64) -> Result<Vec<Vec<f64>>> {
    if m < 1 {
        return Err(Error::invalid("Latin hypercube sample count must be at least 1"));
    }
    if bounds.iter().any(|(lo, hi)| !(hi > lo)) {
        return Err(Error::invalid("Latin hypercube bounds must satisfy lo < hi"));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut samples = vec![vec![0.0; bounds.len()]; m];
    for (d, (lo, hi)) in bounds.iter().enumerate() {
        let mut perm: Vec<usize> = (0..m).collect();
        // Fisher-Yates
        for i in (1..m).rev() {
            let j = rng.gen_range(0..=i);
            perm.swap(i, j);
        }
        for (i, sample) in samples.iter_mut().enumerate() {
            let stratum = perm[i];
            sample[d] = lo + (hi - lo) * (stratum as f64 + 0.5) / m as f64;
        }
    }
    Ok(samples)
}

/// Right-hand side f(q) of the model.
pub fn fom_rhs(model: &FomModel, q: DVectorView<'_, f64>) -> DVector<f64> {
    model.rhs(q)
}

/// Jacobian f'(q) in band (sparse) form.
pub fn fom_jacobian(model: &FomModel, q: DVectorView<'_, f64>) -> BandMatrix {
    model.jacobian_band(q)
}
