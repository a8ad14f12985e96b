//! Continuous-model algebra: interaction coefficients, detailed-balance
//! weights, pressures and the Rao entropy functionals.

use std::collections::VecDeque;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::noise::NoiseSpec;

/// Relative tolerance of the detailed-balance verification.
pub const DETAILED_BALANCE_TOL: f64 = 1e-10;

/// Tolerance on eigenvalue real parts.
pub const EIGENVALUE_TOL: f64 = 1e-10;

/// Square matrix of nonnegative interaction coefficients `a_ij`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct CoefficientMatrix {
    n: usize,
    a: Vec<f64>,
}

impl CoefficientMatrix {
    pub fn new(n: usize, a: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::param("model.A", "need at least one species"));
        }
        if a.len() != n * n {
            return Err(Error::param(
                "model.A",
                format!("expected {} entries for {n} species, got {}", n * n, a.len()),
            ));
        }
        if let Some((k, v)) = a.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::param(
                "model.A",
                format!("entry ({}, {}) = {v} must be finite and nonnegative", k / n, k % n),
            ));
        }
        Ok(CoefficientMatrix { n, a })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != n) {
            return Err(Error::param(
                "model.A",
                format!("row {i} has {} entries, matrix must be {n}x{n}", r.len()),
            ));
        }
        Self::new(n, rows.concat())
    }

    pub fn identity(n: usize) -> Self {
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            a[i * n + i] = 1.0;
        }
        CoefficientMatrix { n, a }
    }

    pub fn zeros(n: usize) -> Self {
        CoefficientMatrix {
            n,
            a: vec![0.0; n * n],
        }
    }

    /// The symmetric two-species matrix `[[2, 1], [1, 2]]`.
    pub fn symmetric_pair() -> Self {
        CoefficientMatrix {
            n: 2,
            a: vec![2.0, 1.0, 1.0, 2.0],
        }
    }

    /// Three-species cyclic matrix with `a_12 = a_23 = a_31 = 1` and zeros elsewhere.
    pub fn cyclic_three() -> Self {
        CoefficientMatrix {
            n: 3,
            a: vec![0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.a[i * self.n..(i + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.a
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.a.chunks(self.n).map(|r| r.to_vec()).collect()
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.n, &self.a)
    }
}

impl TryFrom<Vec<Vec<f64>>> for CoefficientMatrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::from_rows(&rows)
    }
}

impl From<CoefficientMatrix> for Vec<Vec<f64>> {
    fn from(m: CoefficientMatrix) -> Self {
        m.to_rows()
    }
}

/// Strictly positive weights `π` with `π_i a_ij = π_j a_ji`.
#[derive(Debug, Clone, PartialEq)]
pub struct DetailedBalanceWeights {
    pi: Vec<f64>,
}

impl DetailedBalanceWeights {
    /// Validate user-supplied weights against `a`.
    pub fn new(pi: Vec<f64>, a: &CoefficientMatrix) -> Result<Self> {
        if pi.len() != a.n() {
            return Err(Error::DimensionMismatch {
                context: "detailed-balance weights",
                expected: a.n(),
                actual: pi.len(),
            });
        }
        if let Some(p) = pi.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
            return Err(Error::param("model.pi", format!("weights must be positive, got {p}")));
        }
        verify_balance(&pi, a)?;
        Ok(DetailedBalanceWeights { pi })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.pi
    }

    pub fn len(&self) -> usize {
        self.pi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pi.is_empty()
    }

    /// Dense symmetric matrix `(π_i a_ij)`.
    pub fn weighted_matrix(&self, a: &CoefficientMatrix) -> DMatrix<f64> {
        DMatrix::from_fn(a.n(), a.n(), |i, j| self.pi[i] * a.get(i, j))
    }
}

fn verify_balance(pi: &[f64], a: &CoefficientMatrix) -> Result<()> {
    let n = a.n();
    for i in 0..n {
        for j in (i + 1)..n {
            let lhs = pi[i] * a.get(i, j);
            let rhs = pi[j] * a.get(j, i);
            let scale = lhs.abs().max(rhs.abs());
            if (lhs - rhs).abs() > DETAILED_BALANCE_TOL * scale {
                return Err(Error::NotReversible(format!(
                    "pi_{i} a_{i}{j} = {lhs} but pi_{j} a_{j}{i} = {rhs}"
                )));
            }
        }
    }
    Ok(())
}

/// Everything that defines one instance of the cross-diffusion system.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub delta: f64,
    pub a: CoefficientMatrix,
    pub pi: Option<DetailedBalanceWeights>,
    pub noise: NoiseSpec,
    /// Use `max(ū, 0)` for the face-averaged density in the cross-diffusion flux.
    pub clamp_positive_part: bool,
}

impl ModelParams {
    /// Builds the parameters and derives `π` when the matrix admits one.
    pub fn new(delta: f64, a: CoefficientMatrix, noise: NoiseSpec) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::param("model.delta", format!("must be positive, got {delta}")));
        }
        noise.validate()?;
        let pi = find_detailed_balance_weights(&a).ok();
        Ok(ModelParams {
            delta,
            a,
            pi,
            noise,
            clamp_positive_part: false,
        })
    }

    pub fn n(&self) -> usize {
        self.a.n()
    }

    /// Two species, `δ = 1`, `A = [[2, 1], [1, 2]]`.
    pub fn two_species_symmetric(noise: NoiseSpec) -> Self {
        Self::new(1.0, CoefficientMatrix::symmetric_pair(), noise)
            .expect("reference parameters are valid")
    }

    /// Three species, `δ = 1`, cyclic interactions.
    pub fn three_species_cyclic(noise: NoiseSpec) -> Self {
        Self::new(1.0, CoefficientMatrix::cyclic_three(), noise)
            .expect("reference parameters are valid")
    }
}

/// Species densities on the grid nodes, stored species-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeciesField {
    n: usize,
    nodes: usize,
    values: Vec<f64>,
}

impl SpeciesField {
    pub fn zeros(n: usize, grid: &GridSpec) -> Self {
        SpeciesField {
            n,
            nodes: grid.nodes(),
            values: vec![0.0; n * grid.nodes()],
        }
    }

    pub fn constant(values: &[f64], grid: &GridSpec) -> Self {
        let nodes = grid.nodes();
        let mut out = Vec::with_capacity(values.len() * nodes);
        for &c in values {
            out.extend(std::iter::repeat_n(c, nodes));
        }
        SpeciesField {
            n: values.len(),
            nodes,
            values: out,
        }
    }

    /// Evaluate `f(species, x)` at every node.
    pub fn from_fn(n: usize, grid: &GridSpec, f: impl Fn(usize, f64) -> f64) -> Self {
        let nodes = grid.nodes();
        let mut values = Vec::with_capacity(n * nodes);
        for i in 0..n {
            for j in 0..nodes {
                values.push(f(i, grid.x(j)));
            }
        }
        SpeciesField { n, nodes, values }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::param("field", "need at least one species"));
        }
        let nodes = rows[0].len();
        if let Some(r) = rows.iter().find(|r| r.len() != nodes) {
            return Err(Error::DimensionMismatch {
                context: "SpeciesField::from_rows",
                expected: nodes,
                actual: r.len(),
            });
        }
        Ok(SpeciesField {
            n,
            nodes,
            values: rows.concat(),
        })
    }

    pub fn n_species(&self) -> usize {
        self.n
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    /// Number of cells `J`, i.e. `nodes - 1`.
    pub fn cells(&self) -> usize {
        self.nodes - 1
    }

    pub fn species(&self, i: usize) -> &[f64] {
        &self.values[i * self.nodes..(i + 1) * self.nodes]
    }

    pub fn species_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.nodes..(i + 1) * self.nodes]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.nodes + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn scaled(&self, c: f64) -> Self {
        SpeciesField {
            n: self.n,
            nodes: self.nodes,
            values: self.values.iter().map(|v| c * v).collect(),
        }
    }

    /// Keep every `stride`-th node, mapping a fine grid onto a nested coarse one.
    pub fn restrict(&self, stride: usize) -> Result<Self> {
        if stride == 0 || !(self.nodes - 1).is_multiple_of(stride) {
            return Err(Error::param(
                "restrict",
                format!("stride {stride} does not divide {} cells", self.nodes - 1),
            ));
        }
        let nodes = (self.nodes - 1) / stride + 1;
        let mut values = Vec::with_capacity(self.n * nodes);
        for i in 0..self.n {
            values.extend(self.species(i).iter().step_by(stride).copied());
        }
        Ok(SpeciesField {
            n: self.n,
            nodes,
            values,
        })
    }

    pub fn check_grid(&self, grid: &GridSpec, context: &'static str) -> Result<()> {
        if self.nodes != grid.nodes() {
            return Err(Error::DimensionMismatch {
                context,
                expected: grid.nodes(),
                actual: self.nodes,
            });
        }
        Ok(())
    }

    pub fn check_species(&self, n: usize, context: &'static str) -> Result<()> {
        if self.n != n {
            return Err(Error::DimensionMismatch {
                context,
                expected: n,
                actual: self.n,
            });
        }
        Ok(())
    }
}

/// Nodewise pressures `p_i = Σ_ℓ a_iℓ u_ℓ`.
pub fn pressure(u: &SpeciesField, a: &CoefficientMatrix) -> Result<SpeciesField> {
    u.check_species(a.n(), "pressure")?;
    let mut p = SpeciesField {
        n: u.n,
        nodes: u.nodes,
        values: vec![0.0; u.values.len()],
    };
    for i in 0..a.n() {
        let out = &mut p.values[i * u.nodes..(i + 1) * u.nodes];
        for l in 0..a.n() {
            let a_il = a.get(i, l);
            if a_il == 0.0 {
                continue;
            }
            for (o, v) in out.iter_mut().zip(u.species(l)) {
                *o += a_il * v;
            }
        }
    }
    Ok(p)
}

/// True iff every eigenvalue of `a` has real part above [`EIGENVALUE_TOL`].
///
/// Closed-form roots of the characteristic polynomial for `n ≤ 3`, a real
/// Schur decomposition beyond that. If the QR iteration stalls (permutation
/// matrices are the classic case) the Lyapunov criterion decides instead.
pub fn eigenvalues_have_positive_real_part(a: &CoefficientMatrix) -> bool {
    match eigenvalue_real_parts(a) {
        Some(re) => re.iter().all(|re| *re > EIGENVALUE_TOL),
        None => lyapunov_positive_stable(a),
    }
}

/// Real parts of the eigenvalues of `a` (with multiplicity, unordered), or
/// `None` if the Schur iteration used for `n > 3` did not converge.
pub fn eigenvalue_real_parts(a: &CoefficientMatrix) -> Option<Vec<f64>> {
    match a.n() {
        1 => Some(vec![a.get(0, 0)]),
        2 => {
            let tr = a.get(0, 0) + a.get(1, 1);
            let det = a.get(0, 0) * a.get(1, 1) - a.get(0, 1) * a.get(1, 0);
            let disc = tr * tr - 4.0 * det;
            if disc >= 0.0 {
                let s = disc.sqrt();
                Some(vec![0.5 * (tr - s), 0.5 * (tr + s)])
            } else {
                Some(vec![0.5 * tr, 0.5 * tr])
            }
        }
        3 => Some(cubic_root_real_parts(a)),
        n => nalgebra::Schur::try_new(a.to_dmatrix(), f64::EPSILON, 200 * n)
            .map(|s| s.complex_eigenvalues().iter().map(|z| z.re).collect()),
    }
}

// A is positive stable iff the solution X of AᵀX + XA = 2I exists and is
// positive definite.
fn lyapunov_positive_stable(a: &CoefficientMatrix) -> bool {
    let n = a.n();
    let m = a.to_dmatrix();
    let at = m.transpose();
    let eye = DMatrix::<f64>::identity(n, n);
    // column-major vec: vec(AᵀX + XA) = (I ⊗ Aᵀ + Aᵀ ⊗ I) vec(X)
    let op = eye.kronecker(&at) + at.kronecker(&eye);
    let rhs = nalgebra::DVector::from_iterator(n * n, (2.0 * &eye).iter().copied());
    let Some(x) = op.lu().solve(&rhs) else {
        return false;
    };
    let x = DMatrix::from_column_slice(n, n, x.as_slice());
    let sym = (&x + x.transpose()) * 0.5;
    sym.cholesky().is_some()
}

// λ³ - c2 λ² + c1 λ - c0 with c2 = tr, c1 = sum of principal 2-minors, c0 = det
fn cubic_root_real_parts(a: &CoefficientMatrix) -> Vec<f64> {
    let m = |i, j| a.get(i, j);
    let tr = m(0, 0) + m(1, 1) + m(2, 2);
    let minors = m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0) + m(0, 0) * m(2, 2) - m(0, 2) * m(2, 0)
        + m(1, 1) * m(2, 2)
        - m(1, 2) * m(2, 1);
    let det = m(0, 0) * (m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1))
        - m(0, 1) * (m(1, 0) * m(2, 2) - m(1, 2) * m(2, 0))
        + m(0, 2) * (m(1, 0) * m(2, 1) - m(1, 1) * m(2, 0));

    // substitute λ = t + tr/3 to get t³ + p t + q = 0
    let shift = tr / 3.0;
    let p = minors - tr * tr / 3.0;
    let q = -2.0 * tr.powi(3) / 27.0 + tr * minors / 3.0 - det;
    let disc = (q / 2.0).powi(2) + (p / 3.0).powi(3);
    if disc > 0.0 {
        // one real root, one complex-conjugate pair
        let s = disc.sqrt();
        let t1 = (-q / 2.0 + s).cbrt() + (-q / 2.0 - s).cbrt();
        let re_pair = -t1 / 2.0;
        vec![t1 + shift, re_pair + shift, re_pair + shift]
    } else if p == 0.0 {
        vec![shift; 3]
    } else {
        let r = 2.0 * (-p / 3.0).sqrt();
        let arg = (3.0 * q / (p * r)).clamp(-1.0, 1.0);
        let phi = arg.acos() / 3.0;
        (0..3)
            .map(|k| r * (phi - 2.0 * std::f64::consts::PI * k as f64 / 3.0).cos() + shift)
            .collect()
    }
}

/// Solve `π_i a_ij = π_j a_ji` by propagating along a spanning forest of the
/// interaction graph, then verify every pair.
///
/// The first node of each connected component gets weight 1.
pub fn find_detailed_balance_weights(a: &CoefficientMatrix) -> Result<DetailedBalanceWeights> {
    let n = a.n();
    for i in 0..n {
        for j in (i + 1)..n {
            let (fwd, back) = (a.get(i, j), a.get(j, i));
            if (fwd > 0.0) != (back > 0.0) {
                return Err(Error::NotReversible(format!(
                    "a_{i}{j} = {fwd} but a_{j}{i} = {back}; one-way interaction"
                )));
            }
        }
    }

    let mut pi = vec![0.0; n];
    let mut seen = vec![false; n];
    let mut queue = VecDeque::new();
    for root in 0..n {
        if seen[root] {
            continue;
        }
        seen[root] = true;
        pi[root] = 1.0;
        queue.push_back(root);
        while let Some(i) = queue.pop_front() {
            for j in 0..n {
                if seen[j] || j == i || a.get(i, j) == 0.0 {
                    continue;
                }
                pi[j] = pi[i] * a.get(i, j) / a.get(j, i);
                seen[j] = true;
                queue.push_back(j);
            }
        }
    }
    verify_balance(&pi, a)?;
    Ok(DetailedBalanceWeights { pi })
}

/// Trapezoid-weighted mean of every species.
pub fn spatial_average(u: &SpeciesField, grid: &GridSpec) -> Vec<f64> {
    (0..u.n_species())
        .map(|i| crate::grid::weighted_mass(u.species(i), grid))
        .collect()
}

fn quadratic_form_integral(
    u: &SpeciesField,
    shift: Option<&[f64]>,
    pi: &DetailedBalanceWeights,
    a: &CoefficientMatrix,
    grid: &GridSpec,
) -> Result<f64> {
    u.check_species(a.n(), "rao_entropy")?;
    u.check_grid(grid, "rao_entropy")?;
    if pi.len() != a.n() {
        return Err(Error::DimensionMismatch {
            context: "rao_entropy weights",
            expected: a.n(),
            actual: pi.len(),
        });
    }
    let n = a.n();
    let pa: Vec<f64> = (0..n * n).map(|k| pi.pi[k / n] * a.as_slice()[k]).collect();
    let zero = vec![0.0; n];
    let shift = shift.unwrap_or(&zero);
    let mut total = 0.0;
    let mut v = vec![0.0; n];
    for j in 0..grid.nodes() {
        for i in 0..n {
            v[i] = u.get(i, j) - shift[i];
        }
        let mut h = 0.0;
        for i in 0..n {
            for l in 0..n {
                h += pa[i * n + l] * v[i] * v[l];
            }
        }
        total += grid.weight(j) * 0.5 * h;
    }
    Ok(total)
}

/// Discrete Rao entropy `Σ_j w_j ½ Σ_{i,ℓ} π_i a_iℓ u_i u_ℓ`.
pub fn rao_entropy(
    u: &SpeciesField,
    pi: &DetailedBalanceWeights,
    a: &CoefficientMatrix,
    grid: &GridSpec,
) -> Result<f64> {
    quadratic_form_integral(u, None, pi, a, grid)
}

/// Rao entropy of `u - ū`, the distance from spatial homogeneity.
pub fn relative_rao_entropy(
    u: &SpeciesField,
    pi: &DetailedBalanceWeights,
    a: &CoefficientMatrix,
    grid: &GridSpec,
) -> Result<f64> {
    u.check_grid(grid, "relative_rao_entropy")?;
    let mean = spatial_average(u, grid);
    quadratic_form_integral(u, Some(&mean), pi, a, grid)
}
