//! Positive-definite kernels: RBF, feature-map, hybrid, and normalized variants,
//! plus kernel matrices, compressed-Kronecker feature maps, and the power function.

use nalgebra::{Cholesky, DMatrix, DVector, DVectorView, Dyn};

use crate::error::{Error, Result};
use crate::linalg::{cholesky_with_jitter, JITTER_REL};

// ---------------------------------------------------------------------------
// Compressed Kronecker products
// ---------------------------------------------------------------------------

/// Binomial coefficient, exact for the small arguments used here.
fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut num: u128 = 1;
    let mut den: u128 = 1;
    for i in 0..k {
        num *= (n - i) as u128;
        den *= (i + 1) as u128;
    }
    (num / den) as usize
}

/// Number of degree-`degree` monomials in `dim` variables with duplicates removed,
/// i.e. the length of a compressed Kronecker block: C(dim + degree - 1, degree).
pub fn compressed_len(dim: usize, degree: usize) -> usize {
    if degree == 0 {
        return 1;
    }
    binomial(dim + degree - 1, degree)
}

/// All nondecreasing index tuples (i1 <= ... <= id) in lexicographic order.
/// These index the monomials of a compressed degree-`degree` block.
pub fn monomial_tuples(dim: usize, degree: usize) -> Vec<Vec<usize>> {
    fn rec(dim: usize, degree: usize, start: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if degree == 0 {
            out.push(prefix.clone());
            return;
        }
        for i in start..dim {
            prefix.push(i);
            rec(dim, degree - 1, i, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::with_capacity(compressed_len(dim, degree));
    rec(dim, degree, 0, &mut Vec::new(), &mut out);
    out
}

/// Offset of the first tuple with leading index `i` within the compressed block
/// of the given dimension and degree.
fn block_group_start(dim: usize, degree: usize, i: usize) -> usize {
    // Tuples with first index < i number C(dim+degree-1, degree) - C(dim-i+degree-1, degree).
    compressed_len(dim, degree) - compressed_len(dim - i, degree)
}

/// Evaluate the compressed degree-`degree` Kronecker block of `x`:
/// all monomials x_{i1} ... x_{id} with i1 <= ... <= id, lexicographic order.
pub fn compressed_power(x: DVectorView<'_, f64>, degree: usize) -> DVector<f64> {
    let dim = x.len();
    let mut prev: Vec<f64> = x.iter().copied().collect();
    if degree == 0 {
        return DVector::from_element(1, 1.0);
    }
    for d in 2..=degree {
        let mut next = Vec::with_capacity(compressed_len(dim, d));
        for i in 0..dim {
            let start = block_group_start(dim, d - 1, i);
            for v in &prev[start..] {
                next.push(x[i] * v);
            }
        }
        prev = next;
    }
    DVector::from_vec(prev)
}

/// Compressed quadratic product x ⊗̃ x of length r(r+1)/2.
pub fn compressed_quadratic(x: DVectorView<'_, f64>) -> DVector<f64> {
    compressed_power(x, 2)
}

/// Position of the pair (i, j), i <= j, inside the compressed quadratic block.
pub fn quadratic_pair_index(dim: usize, i: usize, j: usize) -> usize {
    debug_assert!(i <= j && j < dim);
    block_group_start(dim, 2, i) + (j - i)
}

/// Fold a matrix acting on the full Kronecker product q ⊗ q into the equivalent
/// matrix acting on the compressed product: columns (i,j) and (j,i) are summed.
pub fn compress_quadratic_operator(w_full: &DMatrix<f64>, dim: usize) -> DMatrix<f64> {
    assert_eq!(w_full.ncols(), dim * dim, "operator must act on q ⊗ q");
    let mut w = DMatrix::zeros(w_full.nrows(), compressed_len(dim, 2));
    for i in 0..dim {
        for j in i..dim {
            let col = quadratic_pair_index(dim, i, j);
            let mut acc = w_full.column(i * dim + j).clone_owned();
            if i != j {
                acc += w_full.column(j * dim + i);
            }
            w.set_column(col, &acc);
        }
    }
    w
}

/// Expand a compressed quadratic operator into a full-Kronecker equivalent with
/// the coefficient of each off-diagonal pair split evenly between (i,j) and (j,i).
pub fn expand_quadratic_operator(w: &DMatrix<f64>, dim: usize) -> DMatrix<f64> {
    assert_eq!(w.ncols(), compressed_len(dim, 2));
    let mut w_full = DMatrix::zeros(w.nrows(), dim * dim);
    for i in 0..dim {
        for j in i..dim {
            let col = w.column(quadratic_pair_index(dim, i, j));
            if i == j {
                w_full.set_column(i * dim + i, &col);
            } else {
                let half = col * 0.5;
                w_full.set_column(i * dim + j, &half);
                w_full.set_column(j * dim + i, &half);
            }
        }
    }
    w_full
}

// ---------------------------------------------------------------------------
// RBF kernels
// ---------------------------------------------------------------------------

/// Kernel-generating radial functions ψ.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RbfGenerator {
    Gaussian,
    BasicMatern,
    InverseQuadratic,
    InverseMultiquadric,
    ThinPlateSpline,
}

impl RbfGenerator {
    pub fn eval(self, s: f64) -> f64 {
        match self {
            RbfGenerator::Gaussian => (-s * s).exp(),
            RbfGenerator::BasicMatern => (-s).exp(),
            RbfGenerator::InverseQuadratic => 1.0 / (1.0 + s * s),
            RbfGenerator::InverseMultiquadric => 1.0 / (1.0 + s * s).sqrt(),
            // s^2 log(s), continuously extended by 0 at s = 0.
            RbfGenerator::ThinPlateSpline => {
                if s == 0.0 {
                    0.0
                } else {
                    s * s * s.ln()
                }
            }
        }
    }

    /// Whether the generator yields a positive semi-definite kernel matrix for
    /// every center configuration. The thin plate spline is only conditionally
    /// positive definite, so no PSD guarantee is made for it.
    pub fn psd_guaranteed(self) -> bool {
        !matches!(self, RbfGenerator::ThinPlateSpline)
    }

    pub fn name(self) -> &'static str {
        match self {
            RbfGenerator::Gaussian => "gaussian",
            RbfGenerator::BasicMatern => "basic-matern",
            RbfGenerator::InverseQuadratic => "inverse-quadratic",
            RbfGenerator::InverseMultiquadric => "inverse-multiquadric",
            RbfGenerator::ThinPlateSpline => "thin-plate-spline",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "gaussian" => RbfGenerator::Gaussian,
            "basic-matern" => RbfGenerator::BasicMatern,
            "inverse-quadratic" => RbfGenerator::InverseQuadratic,
            "inverse-multiquadric" => RbfGenerator::InverseMultiquadric,
            "thin-plate-spline" => RbfGenerator::ThinPlateSpline,
            other => return Err(Error::invalid(format!("unknown RBF generator `{other}`"))),
        })
    }
}

/// Radial basis function kernel K(x, x') = ψ(ε ||x - x'||_2).
#[derive(Debug, Clone, PartialEq)]
pub struct RbfSpec {
    pub generator: RbfGenerator,
    pub shape_epsilon: f64,
}

impl RbfSpec {
    pub fn new(generator: RbfGenerator, shape_epsilon: f64) -> Result<Self> {
        if !(shape_epsilon > 0.0) {
            return Err(Error::invalid(format!(
                "RBF shape parameter must be positive, got {shape_epsilon}"
            )));
        }
        Ok(RbfSpec {
            generator,
            shape_epsilon,
        })
    }

    pub fn eval_dist(&self, dist: f64) -> f64 {
        self.generator.eval(self.shape_epsilon * dist)
    }
}

// ---------------------------------------------------------------------------
// Feature-map kernels
// ---------------------------------------------------------------------------

/// Polynomial feature map with compressed Kronecker blocks and a block-diagonal
/// weighting matrix G; each block is a scalar multiple of the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMapSpec {
    pub include_constant: bool,
    pub max_degree: usize,
    /// One positive weight per block: [constant,] degree 1, ..., degree max_degree.
    pub block_weights: Vec<f64>,
    /// Input dimension r.
    pub dim: usize,
}

impl FeatureMapSpec {
    pub fn new(
        include_constant: bool,
        max_degree: usize,
        block_weights: Vec<f64>,
        dim: usize,
    ) -> Result<Self> {
        if !(1..=4).contains(&max_degree) {
            return Err(Error::invalid(format!(
                "feature map degree must be in 1..=4, got {max_degree}"
            )));
        }
        if dim == 0 {
            return Err(Error::invalid("feature map input dimension must be positive"));
        }
        let expected = max_degree + usize::from(include_constant);
        if block_weights.len() != expected {
            return Err(Error::invalid(format!(
                "expected {expected} block weights, got {}",
                block_weights.len()
            )));
        }
        if block_weights.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::invalid("block weights must be positive"));
        }
        Ok(FeatureMapSpec {
            include_constant,
            max_degree,
            block_weights,
            dim,
        })
    }

    /// Uniform weights of 1 on every block.
    pub fn unit_weights(include_constant: bool, max_degree: usize, dim: usize) -> Self {
        let n_blocks = max_degree + usize::from(include_constant);
        FeatureMapSpec::new(include_constant, max_degree, vec![1.0; n_blocks], dim)
            .expect("unit weights are valid")
    }

    /// Degrees of the blocks, in feature order (0 denotes the constant block).
    pub fn block_degrees(&self) -> Vec<usize> {
        let mut degs = Vec::new();
        if self.include_constant {
            degs.push(0);
        }
        degs.extend(1..=self.max_degree);
        degs
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        self.block_degrees()
            .iter()
            .map(|&d| compressed_len(self.dim, d))
            .collect()
    }

    /// Total feature dimension n_phi.
    pub fn n_phi(&self) -> usize {
        self.block_sizes().iter().sum()
    }

    /// Evaluate φ(x).
    pub fn eval(&self, x: DVectorView<'_, f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.dim, "feature map input dimension");
        let mut out = Vec::with_capacity(self.n_phi());
        if self.include_constant {
            out.push(1.0);
        }
        for d in 1..=self.max_degree {
            out.extend(compressed_power(x, d).iter());
        }
        DVector::from_vec(out)
    }

    /// Evaluate φ column-wise over the columns of X.
    pub fn eval_matrix(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut phi = DMatrix::zeros(self.n_phi(), x.ncols());
        for (j, col) in x.column_iter().enumerate() {
            phi.set_column(j, &self.eval(col));
        }
        phi
    }

    /// Jacobian dφ/dx, of shape n_phi × dim.
    pub fn jacobian(&self, x: DVectorView<'_, f64>) -> DMatrix<f64> {
        assert_eq!(x.len(), self.dim);
        let dim = self.dim;
        let mut jac = DMatrix::zeros(self.n_phi(), dim);
        let mut row = 0;
        if self.include_constant {
            row += 1;
        }
        // degree-1 block: identity
        for k in 0..dim {
            jac[(row + k, k)] = 1.0;
        }
        // Recurrence over degrees: block_d = concat_i x_i * block_{d-1}[start_i..],
        // so J_d group i = e_i * block_{d-1}[start_i..]^T + x_i * J_{d-1}[start_i.., :].
        let mut prev_vals = DVector::from_fn(dim, |i, _| x[i]);
        let mut prev_jac = DMatrix::<f64>::identity(dim, dim);
        row += dim;
        for d in 2..=self.max_degree {
            let len = compressed_len(dim, d);
            let mut vals = DVector::zeros(len);
            let mut jd = DMatrix::zeros(len, dim);
            let mut pos = 0;
            for i in 0..dim {
                let start = block_group_start(dim, d - 1, i);
                for s in start..prev_vals.len() {
                    vals[pos] = x[i] * prev_vals[s];
                    for k in 0..dim {
                        jd[(pos, k)] = x[i] * prev_jac[(s, k)];
                    }
                    jd[(pos, i)] += prev_vals[s];
                    pos += 1;
                }
            }
            if d <= self.max_degree {
                jac.view_mut((row, 0), (len, dim)).copy_from(&jd);
                row += len;
            }
            prev_vals = vals;
            prev_jac = jd;
        }
        jac
    }

    /// G φ(x): scale each block of φ by its weight.
    fn apply_g(&self, phi: &mut DMatrix<f64>) {
        let mut row = 0;
        for (deg, size) in self.block_degrees().iter().zip(self.block_sizes()) {
            let w = self.block_weights[self.block_index_of_degree(*deg)];
            phi.view_mut((row, 0), (size, phi.ncols())).scale_mut(w);
            row += size;
        }
    }

    fn block_index_of_degree(&self, degree: usize) -> usize {
        if self.include_constant {
            degree
        } else {
            degree - 1
        }
    }

    /// Weight applied to the block of the given degree.
    pub fn weight_of_degree(&self, degree: usize) -> f64 {
        self.block_weights[self.block_index_of_degree(degree)]
    }

    /// Row range occupied by each block, paired with its degree.
    pub fn block_ranges(&self) -> Vec<(usize, std::ops::Range<usize>)> {
        let mut out = Vec::new();
        let mut row = 0;
        for (deg, size) in self.block_degrees().into_iter().zip(self.block_sizes()) {
            out.push((deg, row..row + size));
            row += size;
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Kernel specification
// ---------------------------------------------------------------------------

/// Declarative description of a positive-definite kernel.
#[derive(Debug, Clone, PartialEq)]
pub enum KernelSpec {
    Rbf(RbfSpec),
    FeatureMap(FeatureMapSpec),
    Hybrid {
        c_phi: f64,
        fm: FeatureMapSpec,
        c_psi: f64,
        rbf: RbfSpec,
    },
    /// K(ν(x), ν(x')) with ν(x) = Σ^{-1}(x - x̄), Σ = diag(sigma).
    Normalized {
        inner: Box<KernelSpec>,
        sigma: DVector<f64>,
        xbar: DVector<f64>,
    },
}

impl KernelSpec {
    pub fn hybrid(c_phi: f64, fm: FeatureMapSpec, c_psi: f64, rbf: RbfSpec) -> Result<Self> {
        if !(c_phi > 0.0) || !(c_psi > 0.0) {
            return Err(Error::invalid("hybrid kernel weights must be positive"));
        }
        Ok(KernelSpec::Hybrid {
            c_phi,
            fm,
            c_psi,
            rbf,
        })
    }

    pub fn normalized(inner: KernelSpec, sigma: DVector<f64>, xbar: DVector<f64>) -> Result<Self> {
        if sigma.len() != xbar.len() {
            return Err(Error::DimensionMismatch {
                context: "normalized kernel scale/shift",
                expected: sigma.len(),
                got: xbar.len(),
            });
        }
        if sigma.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::invalid("normalization scales must be positive"));
        }
        Ok(KernelSpec::Normalized {
            inner: Box::new(inner),
            sigma,
            xbar,
        })
    }

    /// Input dimension required by the kernel, when it is determined by the spec.
    pub fn expected_dim(&self) -> Option<usize> {
        match self {
            KernelSpec::Rbf(_) => None,
            KernelSpec::FeatureMap(fm) => Some(fm.dim),
            KernelSpec::Hybrid { fm, .. } => Some(fm.dim),
            KernelSpec::Normalized { sigma, .. } => Some(sigma.len()),
        }
    }

    /// The feature-map part (c_phi, map) if the kernel has one, looking through
    /// normalization wrappers.
    pub fn feature_part(&self) -> Option<(f64, &FeatureMapSpec)> {
        match self {
            KernelSpec::Rbf(_) => None,
            KernelSpec::FeatureMap(fm) => Some((1.0, fm)),
            KernelSpec::Hybrid { c_phi, fm, .. } => Some((*c_phi, fm)),
            KernelSpec::Normalized { inner, .. } => inner.feature_part(),
        }
    }

    /// The RBF part (c_psi, spec) if the kernel has one, looking through
    /// normalization wrappers.
    pub fn rbf_part(&self) -> Option<(f64, &RbfSpec)> {
        match self {
            KernelSpec::Rbf(rbf) => Some((1.0, rbf)),
            KernelSpec::FeatureMap(_) => None,
            KernelSpec::Hybrid { c_psi, rbf, .. } => Some((*c_psi, rbf)),
            KernelSpec::Normalized { inner, .. } => inner.rbf_part(),
        }
    }

    /// Normalization map ν(x) = Σ^{-1}(x - x̄) applied to a vector, if any.
    pub fn normalization(&self) -> Option<(&DVector<f64>, &DVector<f64>)> {
        match self {
            KernelSpec::Normalized { sigma, xbar, .. } => Some((sigma, xbar)),
            _ => None,
        }
    }

    fn check_dims(&self, x: usize, y: usize) -> Result<()> {
        if x != y {
            return Err(Error::DimensionMismatch {
                context: "kernel arguments",
                expected: x,
                got: y,
            });
        }
        if let Some(d) = self.expected_dim() {
            if x != d {
                return Err(Error::DimensionMismatch {
                    context: "kernel input dimension",
                    expected: d,
                    got: x,
                });
            }
        }
        Ok(())
    }

    /// Evaluate K(x, x').
    pub fn eval(&self, x: DVectorView<'_, f64>, y: DVectorView<'_, f64>) -> Result<f64> {
        self.check_dims(x.len(), y.len())?;
        Ok(self.eval_unchecked(x, y))
    }

    fn eval_unchecked(&self, x: DVectorView<'_, f64>, y: DVectorView<'_, f64>) -> f64 {
        match self {
            KernelSpec::Rbf(rbf) => rbf.eval_dist((x - y).norm()),
            KernelSpec::FeatureMap(fm) => {
                let px = fm.eval(x);
                let py = fm.eval(y);
                let mut acc = 0.0;
                let mut row = 0;
                for (deg, size) in fm.block_degrees().iter().zip(fm.block_sizes()) {
                    let w = fm.weight_of_degree(*deg);
                    acc += w * px.rows(row, size).dot(&py.rows(row, size));
                    row += size;
                }
                acc
            }
            KernelSpec::Hybrid {
                c_phi,
                fm,
                c_psi,
                rbf,
            } => {
                c_phi * KernelSpec::FeatureMap(fm.clone()).eval_unchecked(x, y)
                    + c_psi * rbf.eval_dist((x - y).norm())
            }
            KernelSpec::Normalized { inner, sigma, xbar } => {
                let nx = normalize_vec(&x.clone_owned(), sigma, xbar);
                let ny = normalize_vec(&y.clone_owned(), sigma, xbar);
                inner.eval_unchecked(nx.as_view(), ny.as_view())
            }
        }
    }

    /// Kernel matrix with entries K(X_i, Y_j) over the columns of X and Y.
    pub fn matrix(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_dims(x.nrows(), y.nrows())?;
        Ok(self.matrix_unchecked(x, y))
    }

    fn matrix_unchecked(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            KernelSpec::Rbf(rbf) => {
                let mut k = DMatrix::zeros(x.ncols(), y.ncols());
                for j in 0..y.ncols() {
                    let yj = y.column(j);
                    for i in 0..x.ncols() {
                        k[(i, j)] = rbf.eval_dist((x.column(i) - yj).norm());
                    }
                }
                k
            }
            KernelSpec::FeatureMap(fm) => {
                let px = fm.eval_matrix(x);
                let mut py = fm.eval_matrix(y);
                fm.apply_g(&mut py);
                px.transpose() * py
            }
            KernelSpec::Hybrid {
                c_phi,
                fm,
                c_psi,
                rbf,
            } => {
                let fm_k = KernelSpec::FeatureMap(fm.clone()).matrix_unchecked(x, y);
                let rbf_k = KernelSpec::Rbf(rbf.clone()).matrix_unchecked(x, y);
                fm_k * *c_phi + rbf_k * *c_psi
            }
            KernelSpec::Normalized { inner, sigma, xbar } => {
                let nx = normalize_matrix(x, sigma, xbar);
                let ny = normalize_matrix(y, sigma, xbar);
                inner.matrix_unchecked(&nx, &ny)
            }
        }
    }

    /// Serialize to flat dotted-key pairs under the given prefix
    /// (e.g. `kernel.type = "hybrid"`, `kernel.rbf.epsilon = 0.1`).
    pub fn to_config_pairs(&self, prefix: &str) -> Vec<(String, String)> {
        let key = |s: &str| {
            if prefix.is_empty() {
                s.to_string()
            } else {
                format!("{prefix}.{s}")
            }
        };
        let mut pairs = Vec::new();
        match self {
            KernelSpec::Rbf(rbf) => {
                pairs.push((key("type"), "rbf".into()));
                pairs.push((key("rbf.generator"), rbf.generator.name().into()));
                pairs.push((key("rbf.epsilon"), fmt_f64(rbf.shape_epsilon)));
            }
            KernelSpec::FeatureMap(fm) => {
                pairs.push((key("type"), "feature-map".into()));
                pairs.extend(fm_pairs(&key(""), fm));
            }
            KernelSpec::Hybrid {
                c_phi,
                fm,
                c_psi,
                rbf,
            } => {
                pairs.push((key("type"), "hybrid".into()));
                pairs.push((key("c_phi"), fmt_f64(*c_phi)));
                pairs.push((key("c_psi"), fmt_f64(*c_psi)));
                pairs.extend(fm_pairs(&key(""), fm));
                pairs.push((key("rbf.generator"), rbf.generator.name().into()));
                pairs.push((key("rbf.epsilon"), fmt_f64(rbf.shape_epsilon)));
            }
            KernelSpec::Normalized { inner, sigma, xbar } => {
                pairs.push((key("type"), "normalized".into()));
                pairs.push((key("sigma"), fmt_f64_list(sigma.as_slice())));
                pairs.push((key("xbar"), fmt_f64_list(xbar.as_slice())));
                let inner_prefix = key("inner");
                pairs.extend(inner.to_config_pairs(&inner_prefix));
            }
        }
        pairs
    }

    /// Parse from flat dotted-key pairs under the given prefix. Consumed keys
    /// are removed from the map so callers can reject leftovers.
    pub fn from_config_pairs(
        map: &mut std::collections::BTreeMap<String, String>,
        prefix: &str,
    ) -> Result<Self> {
        let key = |s: &str| {
            if prefix.is_empty() {
                s.to_string()
            } else {
                format!("{prefix}.{s}")
            }
        };
        let take = |map: &mut std::collections::BTreeMap<String, String>, k: &str| -> Result<String> {
            map.remove(k).ok_or_else(|| Error::Config {
                location: k.to_string(),
                message: "missing key".into(),
            })
        };
        let ty = take(map, &key("type"))?;
        match ty.as_str() {
            "rbf" => {
                let gen = RbfGenerator::parse(&take(map, &key("rbf.generator"))?)?;
                let eps = parse_f64(&take(map, &key("rbf.epsilon"))?, "rbf.epsilon")?;
                Ok(KernelSpec::Rbf(RbfSpec::new(gen, eps)?))
            }
            "feature-map" => Ok(KernelSpec::FeatureMap(fm_from_pairs(map, &key(""))?)),
            "hybrid" => {
                let c_phi = parse_f64(&take(map, &key("c_phi"))?, "c_phi")?;
                let c_psi = parse_f64(&take(map, &key("c_psi"))?, "c_psi")?;
                let fm = fm_from_pairs(map, &key(""))?;
                let gen = RbfGenerator::parse(&take(map, &key("rbf.generator"))?)?;
                let eps = parse_f64(&take(map, &key("rbf.epsilon"))?, "rbf.epsilon")?;
                KernelSpec::hybrid(c_phi, fm, c_psi, RbfSpec::new(gen, eps)?)
            }
            "normalized" => {
                let sigma = parse_f64_list(&take(map, &key("sigma"))?, "sigma")?;
                let xbar = parse_f64_list(&take(map, &key("xbar"))?, "xbar")?;
                let inner_prefix = key("inner");
                let inner = KernelSpec::from_config_pairs(map, &inner_prefix)?;
                KernelSpec::normalized(
                    inner,
                    DVector::from_vec(sigma),
                    DVector::from_vec(xbar),
                )
            }
            other => Err(Error::Config {
                location: key("type"),
                message: format!("unknown kernel type `{other}`"),
            }),
        }
    }
}

fn fm_pairs(prefix: &str, fm: &FeatureMapSpec) -> Vec<(String, String)> {
    let key = |s: &str| {
        if prefix.is_empty() {
            s.to_string()
        } else {
            format!("{prefix}.{s}")
        }
    };
    vec![
        (key("fm.include_constant"), fm.include_constant.to_string()),
        (key("fm.max_degree"), fm.max_degree.to_string()),
        (key("fm.dim"), fm.dim.to_string()),
        (key("fm.block_weights"), fmt_f64_list(&fm.block_weights)),
    ]
}

fn fm_from_pairs(
    map: &mut std::collections::BTreeMap<String, String>,
    prefix: &str,
) -> Result<FeatureMapSpec> {
    let key = |s: &str| {
        if prefix.is_empty() {
            s.to_string()
        } else {
            format!("{prefix}.{s}")
        }
    };
    let take = |map: &mut std::collections::BTreeMap<String, String>, k: &str| -> Result<String> {
        map.remove(k).ok_or_else(|| Error::Config {
            location: k.to_string(),
            message: "missing key".into(),
        })
    };
    let inc = take(map, &key("fm.include_constant"))?
        .parse::<bool>()
        .map_err(|e| Error::Config {
            location: key("fm.include_constant"),
            message: e.to_string(),
        })?;
    let deg = take(map, &key("fm.max_degree"))?
        .parse::<usize>()
        .map_err(|e| Error::Config {
            location: key("fm.max_degree"),
            message: e.to_string(),
        })?;
    let dim = take(map, &key("fm.dim"))?
        .parse::<usize>()
        .map_err(|e| Error::Config {
            location: key("fm.dim"),
            message: e.to_string(),
        })?;
    let weights = parse_f64_list(&take(map, &key("fm.block_weights"))?, "fm.block_weights")?;
    FeatureMapSpec::new(inc, deg, weights, dim)
}

pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub(crate) fn fmt_f64_list(vs: &[f64]) -> String {
    vs.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(",")
}

pub(crate) fn parse_f64(s: &str, what: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|e| Error::Config {
        location: what.to_string(),
        message: e.to_string(),
    })
}

pub(crate) fn parse_f64_list(s: &str, what: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| parse_f64(t, what))
        .collect::<Result<Vec<_>>>()
}

pub(crate) fn normalize_vec(x: &DVector<f64>, sigma: &DVector<f64>, xbar: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(x.len(), |i, _| (x[i] - xbar[i]) / sigma[i])
}

pub(crate) fn normalize_matrix(
    x: &DMatrix<f64>,
    sigma: &DVector<f64>,
    xbar: &DVector<f64>,
) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| (x[(i, j)] - xbar[i]) / sigma[i])
}

// ---------------------------------------------------------------------------
// Power function
// ---------------------------------------------------------------------------

enum PowerRoute {
    /// No centers: P(x) = sqrt(K(x, x)).
    Empty,
    /// Pure feature-map kernel: P(x)^2 = ||u||^2 - ||B^T u||^2 with
    /// u = sqrt(G) φ(ν(x)) and B an orthonormal basis of the span of the
    /// weighted training features. Exact pseudo-inverse result, stable for
    /// rank-deficient Gram matrices.
    Feature { basis: DMatrix<f64> },
    /// General kernels: factorize K(X, X) directly (with jitter if needed).
    Gram { chol: Cholesky<f64, Dyn> },
}

/// Power function P_{K,X} with the center-dependent factorization cached,
/// so repeated queries along a trajectory are cheap.
pub struct PowerFunction {
    kernel: KernelSpec,
    centers: DMatrix<f64>,
    route: PowerRoute,
}

impl PowerFunction {
    pub fn new(kernel: &KernelSpec, centers: &DMatrix<f64>) -> Result<Self> {
        if centers.ncols() == 0 {
            return Ok(PowerFunction {
                kernel: kernel.clone(),
                centers: centers.clone(),
                route: PowerRoute::Empty,
            });
        }
        let route = if let Some(basis) = feature_basis(kernel, centers) {
            PowerRoute::Feature { basis }
        } else {
            let gram = kernel.matrix(centers, centers)?;
            let (chol, _) = cholesky_with_jitter(&gram)?;
            PowerRoute::Gram { chol }
        };
        Ok(PowerFunction {
            kernel: kernel.clone(),
            centers: centers.clone(),
            route,
        })
    }

    pub fn eval(&self, x: DVectorView<'_, f64>) -> Result<f64> {
        let kxx = self.kernel.eval(x, x)?;
        let p2 = match &self.route {
            PowerRoute::Empty => kxx,
            PowerRoute::Feature { basis } => {
                let u = weighted_feature(&self.kernel, &x.clone_owned());
                let proj = basis.transpose() * &u;
                u.norm_squared() - proj.norm_squared()
            }
            PowerRoute::Gram { chol } => {
                let k = self.kernel.matrix(&self.centers, &x.clone_owned().reshape_generic(
                    Dyn(x.len()),
                    Dyn(1),
                ))?;
                let kv = DVector::from_column_slice(k.as_slice());
                let w = chol.solve(&kv);
                kxx - kv.dot(&w)
            }
        };
        Ok(p2.max(0.0).sqrt())
    }
}

/// Orthonormal basis of the span of sqrt(G) φ(ν(X)) when the kernel is a pure
/// feature-map kernel (possibly normalized); None otherwise.
fn feature_basis(kernel: &KernelSpec, centers: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if kernel.rbf_part().is_some() {
        return None;
    }
    let (_, fm) = kernel.feature_part()?;
    let inputs = match kernel.normalization() {
        Some((sigma, xbar)) => normalize_matrix(centers, sigma, xbar),
        None => centers.clone(),
    };
    let mut s = fm.eval_matrix(&inputs);
    scale_blocks_sqrt(fm, &mut s);
    let (nrows, ncols) = s.shape();
    let svd = s.svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let smax = svd.singular_values.max();
    let tol = smax * f64::EPSILON * (nrows.max(ncols) as f64);
    let rank = svd.singular_values.iter().filter(|&&sv| sv > tol).count();
    Some(u.columns(0, rank).clone_owned())
}

fn scale_blocks_sqrt(fm: &FeatureMapSpec, phi: &mut DMatrix<f64>) {
    let mut row = 0;
    for (deg, size) in fm.block_degrees().iter().zip(fm.block_sizes()) {
        let w = fm.weight_of_degree(*deg).sqrt();
        phi.view_mut((row, 0), (size, phi.ncols())).scale_mut(w);
        row += size;
    }
}

/// sqrt(G) φ(ν(x)) for a pure feature-map kernel.
fn weighted_feature(kernel: &KernelSpec, x: &DVector<f64>) -> DVector<f64> {
    let (_, fm) = kernel.feature_part().expect("feature-map kernel");
    let nx = match kernel.normalization() {
        Some((sigma, xbar)) => normalize_vec(x, sigma, xbar),
        None => x.clone(),
    };
    let mut phi = fm.eval(nx.as_view());
    let mut row = 0;
    for (deg, size) in fm.block_degrees().iter().zip(fm.block_sizes()) {
        let w = fm.weight_of_degree(*deg).sqrt();
        phi.rows_mut(row, size).scale_mut(w);
        row += size;
    }
    phi
}

/// One-shot power function evaluation
/// P(x) = sqrt(max(0, K(x,x) - K(X,x)^T K(X,X)^{-1} K(X,x))).
pub fn power_function(
    kernel: &KernelSpec,
    centers: &DMatrix<f64>,
    x: DVectorView<'_, f64>,
) -> Result<f64> {
    PowerFunction::new(kernel, centers)?.eval(x)
}

/// Duplicate-column tolerance: columns i, j are considered equal when
/// ||x_i - x_j||_inf <= 1e-12 (1 + ||x_i||_inf).
pub fn duplicate_columns(x: &DMatrix<f64>) -> Option<(usize, usize)> {
    for i in 0..x.ncols() {
        let ci = x.column(i);
        let scale = 1.0 + ci.amax();
        for j in (i + 1)..x.ncols() {
            if (ci - x.column(j)).amax() <= JITTER_REL * scale {
                return Some((i, j));
            }
        }
    }
    None
}
