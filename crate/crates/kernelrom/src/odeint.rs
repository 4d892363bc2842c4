//! Time integration (implicit trapezoid with Newton, classical RK4) and
//! finite-difference estimation of reduced-state time derivatives.

use nalgebra::{DMatrix, DVector, DVectorView};

use crate::error::{Error, Result};
use crate::reduce::Reduction;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    ImplicitTrapezoid,
    Rk4,
}

#[derive(Debug, Clone)]
pub struct IntegratorOptions {
    pub method: Method,
    pub newton_tol: f64,
    pub max_newton: usize,
    /// Internal substeps per output interval.
    pub substeps: usize,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        IntegratorOptions {
            method: Method::ImplicitTrapezoid,
            newton_tol: 1e-10,
            max_newton: 25,
            substeps: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IntegratorStats {
    pub steps: usize,
    pub newton_iters: usize,
}

/// Solution recorded on the output grid; column 0 is the initial condition.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// d × (n_t + 1).
    pub states: DMatrix<f64>,
    pub stats: IntegratorStats,
}

pub type RhsFn<'a> = dyn Fn(DVectorView<'_, f64>) -> DVector<f64> + 'a;
pub type JacFn<'a> = dyn Fn(DVectorView<'_, f64>) -> DMatrix<f64> + 'a;

/// Integrate dq/dt = rhs(q) from q0 over the uniform output grid `t_grid`.
/// The implicit trapezoid rule solves each substep with a modified Newton
/// iteration using the supplied Jacobian; RK4 is the classical explicit scheme.
pub fn integrate(
    rhs: &RhsFn<'_>,
    jac: Option<&JacFn<'_>>,
    q0: &DVector<f64>,
    t_grid: &[f64],
    opts: &IntegratorOptions,
) -> Result<Trajectory> {
    if t_grid.len() < 2 {
        return Err(Error::invalid("time grid needs at least two points"));
    }
    let dt_out = t_grid[1] - t_grid[0];
    if !(dt_out > 0.0) {
        return Err(Error::invalid("time grid must be increasing"));
    }
    for k in 1..t_grid.len() {
        if ((t_grid[k] - t_grid[k - 1]) - dt_out).abs() > 1e-9 * dt_out {
            return Err(Error::invalid("time grid must be uniform"));
        }
    }
    if opts.substeps == 0 {
        return Err(Error::invalid("substeps must be at least 1"));
    }
    if matches!(opts.method, Method::ImplicitTrapezoid) && jac.is_none() {
        return Err(Error::invalid("implicit trapezoid requires a Jacobian"));
    }

    let d = q0.len();
    let n_out = t_grid.len();
    let dt = dt_out / opts.substeps as f64;
    let mut states = DMatrix::zeros(d, n_out);
    states.set_column(0, q0);
    let mut stats = IntegratorStats::default();
    let mut q = q0.clone();

    for k in 1..n_out {
        for _ in 0..opts.substeps {
            q = match opts.method {
                Method::Rk4 => rk4_step(rhs, &q, dt),
                Method::ImplicitTrapezoid => {
                    trapezoid_step(rhs, jac.unwrap(), &q, dt, opts, k, &mut stats)?
                }
            };
            stats.steps += 1;
            if !q.iter().all(|v| v.is_finite()) {
                return Err(Error::IntegrationFailure {
                    step: k,
                    max_newton: opts.max_newton,
                });
            }
        }
        states.set_column(k, &q);
    }
    Ok(Trajectory {
        times: t_grid.to_vec(),
        states,
        stats,
    })
}

fn rk4_step(rhs: &RhsFn<'_>, q: &DVector<f64>, dt: f64) -> DVector<f64> {
    let k1 = rhs(q.as_view());
    let k2 = rhs((q + &k1 * (dt / 2.0)).as_view());
    let k3 = rhs((q + &k2 * (dt / 2.0)).as_view());
    let k4 = rhs((q + &k3 * dt).as_view());
    q + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
}

fn trapezoid_step(
    rhs: &RhsFn<'_>,
    jac: &JacFn<'_>,
    q: &DVector<f64>,
    dt: f64,
    opts: &IntegratorOptions,
    out_step: usize,
    stats: &mut IntegratorStats,
) -> Result<DVector<f64>> {
    let d = q.len();
    let fq = rhs(q.as_view());
    let scale = 1.0 + q.amax();
    // Explicit Euler predictor.
    let mut y = q + &fq * dt;
    let residual = |y: &DVector<f64>| -> DVector<f64> {
        y - q - (&fq + rhs(y.as_view())) * (dt / 2.0)
    };
    let factor = |y: &DVector<f64>| {
        let m = DMatrix::identity(d, d) - jac(y.as_view()) * (dt / 2.0);
        m.lu()
    };
    let mut lu = factor(&y);
    let mut res = residual(&y);
    for it in 0..opts.max_newton {
        if res.iter().all(|v| v.is_finite()) && res.amax() <= opts.newton_tol * scale {
            return Ok(y);
        }
        if !res.iter().all(|v| v.is_finite()) {
            break;
        }
        // Refresh the factorization if plain modified Newton stalls.
        if it == opts.max_newton / 2 {
            lu = factor(&y);
        }
        match lu.solve(&(-&res)) {
            Some(delta) => y += delta,
            None => break,
        }
        stats.newton_iters += 1;
        res = residual(&y);
    }
    if res.iter().all(|v| v.is_finite()) && res.amax() <= opts.newton_tol * scale {
        return Ok(y);
    }
    Err(Error::IntegrationFailure {
        step: out_step,
        max_newton: opts.max_newton,
    })
}

/// Reduced-state time derivatives by finite differences: backward differences
/// for columns 1..n_t, forward difference for column 0.
pub fn fd_derivatives(qhat: &DMatrix<f64>, t_grid: &[f64]) -> Result<DMatrix<f64>> {
    if qhat.ncols() != t_grid.len() {
        return Err(Error::DimensionMismatch {
            context: "finite-difference derivative columns",
            expected: t_grid.len(),
            got: qhat.ncols(),
        });
    }
    if t_grid.len() < 2 {
        return Err(Error::invalid("need at least two time points"));
    }
    let dt = t_grid[1] - t_grid[0];
    let n = qhat.ncols();
    let mut z = DMatrix::zeros(qhat.nrows(), n);
    let fwd = (qhat.column(1) - qhat.column(0)) / dt;
    z.set_column(0, &fwd);
    for k in 1..n {
        let bwd = (qhat.column(k) - qhat.column(k - 1)) / dt;
        z.set_column(k, &bwd);
    }
    Ok(z)
}

/// Exact reduced derivatives from full-state derivatives: Ẑ = V^T (d/dt Q).
pub fn project_exact_derivatives(
    snapshot_derivs: &DMatrix<f64>,
    red: &Reduction,
) -> Result<DMatrix<f64>> {
    if snapshot_derivs.nrows() != red.state_dim() {
        return Err(Error::DimensionMismatch {
            context: "derivative state dimension",
            expected: red.state_dim(),
            got: snapshot_derivs.nrows(),
        });
    }
    Ok(red.basis.transpose() * snapshot_derivs)
}
