//! Reduced-order models: training-data assembly, kernel ROM and
//! operator-inference learning, intrusive Galerkin construction for linear and
//! quadratic full-order models (including quartic quadratic-manifold
//! structure), simulation, and regularization grid search.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, DVectorView};

use crate::error::{Error, Result};
use crate::fom::FomModel;
use crate::interp::{self, GramCache, Interpolant};
use crate::kernels::{self, FeatureMapSpec, KernelSpec};
use crate::linalg::cholesky_with_jitter;
use crate::odeint::{self, IntegratorOptions, Trajectory};
use crate::reduce::{Reduction, SnapshotSet};

/// How reduced-state time derivatives are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerivMode {
    /// Finite differences of the reduced states.
    Fd,
    /// V^T applied to exact full-state derivatives carried by the snapshot set.
    ProjectedExact,
}

/// Reduced states and their time derivatives, deduplicated so kernel centers
/// are pairwise distinct.
#[derive(Debug, Clone)]
pub struct TrainingData {
    /// Q̂, r × m.
    pub qhat: DMatrix<f64>,
    /// Ẑ, r × m.
    pub zhat: DMatrix<f64>,
    pub provenance: DerivMode,
}

/// Compress snapshots and derivative estimates into training matrices.
/// `include_first_column` keeps or drops the k = 0 column of every trajectory
/// (whose derivative is a forward-difference fill rather than the displayed
/// backward difference).
pub fn assemble_training(
    snapshots: &SnapshotSet,
    red: &Reduction,
    deriv_mode: DerivMode,
    include_first_column: bool,
) -> Result<TrainingData> {
    let r = red.r();
    let mut q_cols: Vec<DVector<f64>> = Vec::new();
    let mut z_cols: Vec<DVector<f64>> = Vec::new();
    for (ell, traj) in snapshots.trajectories.iter().enumerate() {
        let qhat = red.compress_matrix(traj);
        let zhat = match deriv_mode {
            DerivMode::Fd => odeint::fd_derivatives(&qhat, &snapshots.times)?,
            DerivMode::ProjectedExact => {
                let derivs = snapshots.derivatives.as_ref().ok_or_else(|| {
                    Error::invalid("projected-exact derivatives require snapshot derivatives")
                })?;
                odeint::project_exact_derivatives(&derivs[ell], red)?
            }
        };
        let start = usize::from(!include_first_column);
        for k in start..qhat.ncols() {
            q_cols.push(qhat.column(k).clone_owned());
            z_cols.push(zhat.column(k).clone_owned());
        }
    }
    let total = q_cols.len();
    // Keep the first occurrence of each duplicate class.
    let mut kept_q: Vec<DVector<f64>> = Vec::new();
    let mut kept_z: Vec<DVector<f64>> = Vec::new();
    'outer: for (q, z) in q_cols.into_iter().zip(z_cols) {
        let scale = 1.0 + q.amax();
        for prev in &kept_q {
            if (prev - &q).amax() <= 1e-12 * scale {
                continue 'outer;
            }
        }
        kept_q.push(q);
        kept_z.push(z);
    }
    if total > 1 && kept_q.len() == 1 {
        return Err(Error::DegenerateData);
    }
    let m = kept_q.len();
    let mut qhat = DMatrix::zeros(r, m);
    let mut zhat = DMatrix::zeros(r, m);
    for j in 0..m {
        qhat.set_column(j, &kept_q[j]);
        zhat.set_column(j, &kept_z[j]);
    }
    Ok(TrainingData {
        qhat,
        zhat,
        provenance: deriv_mode,
    })
}

/// Non-intrusive kernel ROM: dq̂/dt = Ω^T K(Q̂, q̂).
#[derive(Debug, Clone)]
pub struct KernelRom {
    pub interp: Interpolant,
}

/// Explicit polynomial ROM: dq̂/dt = C φ(q̂). Both intrusive Galerkin ROMs and
/// operator-inference ROMs take this form.
#[derive(Debug, Clone)]
pub struct PolyRom {
    /// C, r × n_φ.
    pub coeffs: DMatrix<f64>,
    pub fm: FeatureMapSpec,
}

#[derive(Debug, Clone)]
pub enum RomModel {
    Kernel(KernelRom),
    Poly(PolyRom),
}

impl RomModel {
    pub fn reduced_dim(&self) -> usize {
        match self {
            RomModel::Kernel(k) => k.interp.output_dim(),
            RomModel::Poly(p) => p.coeffs.nrows(),
        }
    }

    pub fn rhs(&self, qhat: DVectorView<'_, f64>) -> Result<DVector<f64>> {
        match self {
            RomModel::Kernel(k) => k.interp.evaluate(qhat),
            RomModel::Poly(p) => Ok(&p.coeffs * p.fm.eval(qhat)),
        }
    }

    pub fn jacobian(&self, qhat: DVectorView<'_, f64>) -> Result<DMatrix<f64>> {
        match self {
            RomModel::Kernel(k) => k.interp.evaluate_jacobian(qhat),
            RomModel::Poly(p) => Ok(&p.coeffs * p.fm.jacobian(qhat)),
        }
    }

    /// Named polynomial coefficient blocks (degree, coefficient matrix), whose
    /// concatenation is the full coefficient matrix. Kernel ROMs expose the
    /// blocks of the cached feature coefficients when the kernel has a
    /// feature-map part.
    pub fn structure_blocks(&self) -> Option<Vec<(usize, DMatrix<f64>)>> {
        let (c, fm): (&DMatrix<f64>, &FeatureMapSpec) = match self {
            RomModel::Poly(p) => (&p.coeffs, &p.fm),
            RomModel::Kernel(k) => {
                let c = k.interp.feature_coeffs.as_ref()?;
                let (_, fm) = k.interp.kernel.feature_part()?;
                (c, fm)
            }
        };
        Some(
            fm.block_ranges()
                .into_iter()
                .map(|(deg, range)| {
                    (deg, c.columns(range.start, range.end - range.start).clone_owned())
                })
                .collect(),
        )
    }
}

pub fn rom_rhs(rom: &RomModel, qhat: DVectorView<'_, f64>) -> Result<DVector<f64>> {
    rom.rhs(qhat)
}

pub fn rom_jacobian(rom: &RomModel, qhat: DVectorView<'_, f64>) -> Result<DMatrix<f64>> {
    rom.jacobian(qhat)
}

/// Learn a kernel ROM by regularized kernel interpolation of the training
/// derivatives. With `normalize`, the kernel is wrapped so inputs are mapped
/// row-wise to [0, 1] using the training ranges.
pub fn fit_kernel_rom(
    td: &TrainingData,
    kernel: KernelSpec,
    gamma: f64,
    normalize: bool,
) -> Result<RomModel> {
    let kernel = if normalize {
        let (sigma, xbar) = normalization_from_rows(&td.qhat);
        KernelSpec::normalized(kernel, sigma, xbar)?
    } else {
        kernel
    };
    let interp = interp::fit(kernel, td.qhat.clone(), &td.zhat, gamma)?;
    Ok(RomModel::Kernel(KernelRom { interp }))
}

/// Row-wise normalization per the training inputs: sigma_i = max - min,
/// xbar_i = min. Constant rows fall back to unit scale.
pub fn normalization_from_rows(qhat: &DMatrix<f64>) -> (DVector<f64>, DVector<f64>) {
    let r = qhat.nrows();
    let mut sigma = DVector::zeros(r);
    let mut xbar = DVector::zeros(r);
    for i in 0..r {
        let row = qhat.row(i);
        let min = row.min();
        let max = row.max();
        xbar[i] = min;
        sigma[i] = if max > min { max - min } else { 1.0 };
    }
    (sigma, xbar)
}

/// Learn an operator-inference ROM: solve
/// (D^T D + Γ^T Γ) Ô^T = D^T Ẑ^T with D = φ(Q̂)^T and Γ diagonal with one
/// value per feature block.
pub fn fit_opinf_rom(
    td: &TrainingData,
    fm: &FeatureMapSpec,
    gamma_per_block: &[f64],
) -> Result<RomModel> {
    let n_blocks = fm.block_degrees().len();
    if gamma_per_block.len() != n_blocks {
        return Err(Error::DimensionMismatch {
            context: "operator-inference regularization blocks",
            expected: n_blocks,
            got: gamma_per_block.len(),
        });
    }
    if gamma_per_block.iter().any(|&g| !(g >= 0.0)) {
        return Err(Error::invalid("block regularization values must be nonnegative"));
    }
    let phi = fm.eval_matrix(&td.qhat); // n_φ × m
    let mut normal = &phi * phi.transpose();
    for ((_, range), &g) in fm.block_ranges().iter().zip(gamma_per_block) {
        for i in range.clone() {
            normal[(i, i)] += g * g;
        }
    }
    let rhs = &phi * td.zhat.transpose(); // n_φ × r
    let all_zero = gamma_per_block.iter().all(|&g| g == 0.0);
    let solution = if all_zero {
        match normal.clone().cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => return Err(Error::SingularGram),
        }
    } else {
        let (ch, _) = cholesky_with_jitter(&normal)?;
        ch.solve(&rhs)
    };
    Ok(RomModel::Poly(PolyRom {
        coeffs: solution.transpose(),
        fm: fm.clone(),
    }))
}

/// Exact Galerkin projection of a linear or quadratic FOM through the linear
/// or quadratic decoder. The reduced dynamics V^T f(g(q̂)) are assembled as an
/// explicit polynomial in compressed-monomial layout by expanding the decoder
/// blocks, which covers the affine, quadratic, and full quartic cases
/// (including a nonzero reference state) in one path.
pub fn intrusive_rom(model: &FomModel, red: &Reduction) -> Result<RomModel> {
    if model.state_dim() != red.state_dim() {
        return Err(Error::DimensionMismatch {
            context: "intrusive projection state dimension",
            expected: model.state_dim(),
            got: red.state_dim(),
        });
    }
    let r = red.r();
    let n_q = red.state_dim();
    let has_qbar = red.qbar.iter().any(|&v| v != 0.0);
    let quadratic_fom = matches!(model, FomModel::Quadratic(_));

    // Decoder g(q̂) as a list of (monomial tuple, n_q coefficient column).
    let mut g_terms: Vec<(Vec<usize>, DVector<f64>)> = Vec::new();
    if has_qbar {
        g_terms.push((vec![], red.qbar.clone()));
    }
    for i in 0..r {
        g_terms.push((vec![i], red.basis.column(i).clone_owned()));
    }
    if let Some(w) = &red.wtilde {
        for (idx, tuple) in kernels::monomial_tuples(r, 2).into_iter().enumerate() {
            g_terms.push((tuple, w.column(idx).clone_owned()));
        }
    }

    // f(g(q̂)) term by term in the monomial basis.
    let mut out: BTreeMap<Vec<usize>, DVector<f64>> = BTreeMap::new();
    let mut add = |tuple: Vec<usize>, col: DVector<f64>| {
        out.entry(tuple)
            .and_modify(|acc| *acc += &col)
            .or_insert(col);
    };
    let a_apply = |v: DVectorView<'_, f64>| match model {
        FomModel::Linear(m) => m.a.apply(v),
        FomModel::Quadratic(m) => m.a.apply(v),
    };
    for (tuple, col) in &g_terms {
        add(tuple.clone(), a_apply(col.as_view()));
    }
    if quadratic_fom {
        for (ia, (ta, ca)) in g_terms.iter().enumerate() {
            for (tb, cb) in g_terms.iter().skip(ia) {
                let mut tuple: Vec<usize> = ta.iter().chain(tb.iter()).copied().collect();
                tuple.sort_unstable();
                let mut col = model.bilinear(ca.as_view(), cb.as_view());
                if !std::ptr::eq(ta, tb) {
                    col *= 2.0;
                }
                add(tuple, col);
            }
        }
    }

    let max_degree = out.keys().map(Vec::len).max().unwrap_or(1).max(1);
    let include_constant = out.contains_key(&Vec::new());
    let fm = FeatureMapSpec::unit_weights(include_constant, max_degree, r);
    let mut coeffs = DMatrix::zeros(r, fm.n_phi());
    let vt = red.basis.transpose();
    for (deg, range) in fm.block_ranges() {
        let tuples = kernels::monomial_tuples(r, deg);
        for (offset, tuple) in tuples.iter().enumerate() {
            if let Some(col) = out.get(tuple) {
                coeffs.set_column(range.start + offset, &(&vt * col));
            }
        }
    }
    let _ = n_q;
    Ok(RomModel::Poly(PolyRom { coeffs, fm }))
}

/// Integrate a ROM from the compressed initial state and reconstruct the
/// full-state approximation column by column.
pub fn simulate_rom(
    rom: &RomModel,
    red: &Reduction,
    q0_full: DVectorView<'_, f64>,
    t_grid: &[f64],
    opts: &IntegratorOptions,
) -> Result<(Trajectory, DMatrix<f64>)> {
    let q0 = red.compress(q0_full);
    let traj = simulate_rom_reduced(rom, &q0, t_grid, opts)?;
    let mut recon = DMatrix::zeros(red.state_dim(), t_grid.len());
    for (k, col) in traj.states.column_iter().enumerate() {
        recon.set_column(k, &red.decompress(col));
    }
    Ok((traj, recon))
}

/// Integrate a ROM directly from a reduced initial state.
pub fn simulate_rom_reduced(
    rom: &RomModel,
    qhat0: &DVector<f64>,
    t_grid: &[f64],
    opts: &IntegratorOptions,
) -> Result<Trajectory> {
    let rhs = |q: DVectorView<'_, f64>| rom.rhs(q).expect("rom rhs dimensions fixed at fit");
    let jac = |q: DVectorView<'_, f64>| rom.jacobian(q).expect("rom jacobian dimensions fixed at fit");
    odeint::integrate(&rhs, Some(&jac), qhat0, t_grid, opts)
}

/// Result of a regularization grid search.
#[derive(Debug, Clone)]
pub struct GridSearchResult<T> {
    pub best: T,
    /// (candidate, training objective); failed candidates score infinity.
    pub table: Vec<(T, f64)>,
}

/// Training objective of a fitted ROM: the accumulated 2-norm deviation from
/// the reduced training snapshots when the ROM is re-simulated from each
/// training initial state. Integration failures score infinity.
fn training_objective(
    rom: &RomModel,
    snapshots: &SnapshotSet,
    red: &Reduction,
    opts: &IntegratorOptions,
) -> f64 {
    let mut score = 0.0;
    for traj in &snapshots.trajectories {
        let qhat = red.compress_matrix(traj);
        let q0 = qhat.column(0).clone_owned();
        match simulate_rom_reduced(rom, &q0, &snapshots.times, opts) {
            Ok(sim) => {
                for k in 0..qhat.ncols() {
                    score += (qhat.column(k) - sim.states.column(k)).norm();
                }
            }
            Err(_) => return f64::INFINITY,
        }
    }
    score
}

/// Grid search over the kernel regularization γ, minimizing the training
/// objective; ties resolve to the smaller γ.
pub fn grid_search_gamma(
    snapshots: &SnapshotSet,
    red: &Reduction,
    kernel: KernelSpec,
    gamma_grid: &[f64],
    deriv_mode: DerivMode,
    include_first_column: bool,
    normalize: bool,
    opts: &IntegratorOptions,
) -> Result<GridSearchResult<f64>> {
    if gamma_grid.is_empty() {
        return Err(Error::invalid("gamma grid must not be empty"));
    }
    let td = assemble_training(snapshots, red, deriv_mode, include_first_column)?;
    let kernel = if normalize {
        let (sigma, xbar) = normalization_from_rows(&td.qhat);
        KernelSpec::normalized(kernel, sigma, xbar)?
    } else {
        kernel
    };
    let mut grid: Vec<f64> = gamma_grid.to_vec();
    grid.sort_by(f64::total_cmp);
    let cache = GramCache::new(kernel, td.qhat.clone())?;
    let mut table = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, f64)> = None;
    for &gamma in &grid {
        let score = match cache.fit(&td.zhat, gamma) {
            Ok(interp) => {
                let rom = RomModel::Kernel(KernelRom { interp });
                training_objective(&rom, snapshots, red, opts)
            }
            Err(_) => f64::INFINITY,
        };
        table.push((gamma, score));
        let better = match best {
            None => score < f64::INFINITY,
            Some((_, best_score)) => score < best_score,
        };
        if better {
            best = Some((gamma, score));
        }
    }
    match best {
        Some((gamma, _)) => Ok(GridSearchResult { best: gamma, table }),
        None => Err(Error::NoViableRegularization),
    }
}

/// Grid search for operator inference over per-group regularization values:
/// `groups` partitions the feature blocks, and every combination of grid
/// values across groups is scored. Returns the per-block values of the best
/// combination.
pub fn grid_search_opinf(
    snapshots: &SnapshotSet,
    red: &Reduction,
    fm: &FeatureMapSpec,
    gamma_grid: &[f64],
    groups: &[Vec<usize>],
    deriv_mode: DerivMode,
    include_first_column: bool,
    opts: &IntegratorOptions,
) -> Result<GridSearchResult<Vec<f64>>> {
    if gamma_grid.is_empty() {
        return Err(Error::invalid("gamma grid must not be empty"));
    }
    let n_blocks = fm.block_degrees().len();
    let mut seen = vec![false; n_blocks];
    for g in groups {
        for &b in g {
            if b >= n_blocks || seen[b] {
                return Err(Error::invalid("groups must partition the feature blocks"));
            }
            seen[b] = true;
        }
    }
    let td = assemble_training(snapshots, red, deriv_mode, include_first_column)?;
    let mut grid: Vec<f64> = gamma_grid.to_vec();
    grid.sort_by(f64::total_cmp);
    let n_combos = grid.len().pow(groups.len() as u32);
    let mut table = Vec::with_capacity(n_combos);
    let mut best: Option<(Vec<f64>, f64)> = None;
    for combo in 0..n_combos {
        let mut per_block = vec![0.0; n_blocks];
        let mut rem = combo;
        for g in groups {
            let value = grid[rem % grid.len()];
            rem /= grid.len();
            for &b in g {
                per_block[b] = value;
            }
        }
        let score = match fit_opinf_rom(&td, fm, &per_block) {
            Ok(rom) => training_objective(&rom, snapshots, red, opts),
            Err(_) => f64::INFINITY,
        };
        table.push((per_block.clone(), score));
        let better = match &best {
            None => score < f64::INFINITY,
            Some((_, best_score)) => score < *best_score,
        };
        if better {
            best = Some((per_block, score));
        }
    }
    match best {
        Some((per_block, _)) => Ok(GridSearchResult {
            best: per_block,
            table,
        }),
        None => Err(Error::NoViableRegularization),
    }
}
