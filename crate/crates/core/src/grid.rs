//! Uniform node-centred grid on (0, 1), the Neumann discrete Laplacian and
//! the factored semi-implicit operator `I + δΔt A_Δ`.
//!
//! All spatial integrals use trapezoidal weights (`Δx/2` at the two boundary
//! nodes, `Δx` inside). The Laplacian uses ghost-node reflection
//! (`u_{-1} = u_1`), which makes it symmetric with respect to these weights
//! and annihilates constants, so the implicit solve conserves weighted mass.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform grid with `cells + 1` nodes `x_j = j Δx` on the unit interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    cells: usize,
}

impl GridSpec {
    pub fn new(cells: usize) -> Result<Self> {
        if cells < 2 {
            return Err(Error::param("grid.J", format!("need at least 2 cells, got {cells}")));
        }
        Ok(GridSpec { cells })
    }

    /// Number of cells `J`.
    pub fn cells(&self) -> usize {
        self.cells
    }

    /// Number of nodes `J + 1`.
    pub fn nodes(&self) -> usize {
        self.cells + 1
    }

    pub fn dx(&self) -> f64 {
        1.0 / self.cells as f64
    }

    pub fn x(&self, j: usize) -> f64 {
        j as f64 / self.cells as f64
    }

    /// Trapezoidal quadrature weight of node `j`.
    #[inline]
    pub fn weight(&self, j: usize) -> f64 {
        let dx = self.dx();
        if j == 0 || j == self.cells {
            0.5 * dx
        } else {
            dx
        }
    }

    pub fn weights(&self) -> Vec<f64> {
        (0..self.nodes()).map(|j| self.weight(j)).collect()
    }
}

/// Trapezoidal integral `Σ_j w_j u_j` over the unit interval.
pub fn weighted_mass(u: &[f64], grid: &GridSpec) -> f64 {
    debug_assert_eq!(u.len(), grid.nodes());
    let n = u.len();
    if n == 0 {
        return 0.0;
    }
    let inner: f64 = u[1..n - 1].iter().sum();
    grid.dx() * (inner + 0.5 * (u[0] + u[n - 1]))
}

/// Tridiagonal matrix of `-∂²/∂x²` with Neumann (reflection) closure.
///
/// `sub[j]` couples node `j` to `j - 1` (unused at `j = 0`), `sup[j]` couples
/// node `j` to `j + 1` (unused at `j = J`).
#[derive(Debug, Clone, PartialEq)]
pub struct LaplacianOperator {
    grid: GridSpec,
    sub: Vec<f64>,
    diag: Vec<f64>,
    sup: Vec<f64>,
}

impl LaplacianOperator {
    pub fn neumann(grid: GridSpec) -> Self {
        let n = grid.nodes();
        let inv_dx2 = 1.0 / (grid.dx() * grid.dx());
        let mut sub = vec![-inv_dx2; n];
        let diag = vec![2.0 * inv_dx2; n];
        let mut sup = vec![-inv_dx2; n];
        sub[0] = 0.0;
        sup[n - 1] = 0.0;
        // ghost node u_{-1} = u_1 (and symmetrically at x = 1)
        sup[0] = -2.0 * inv_dx2;
        sub[n - 1] = -2.0 * inv_dx2;
        LaplacianOperator {
            grid,
            sub,
            diag,
            sup,
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn sub(&self) -> &[f64] {
        &self.sub
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn sup(&self) -> &[f64] {
        &self.sup
    }

    /// `out = A_Δ u`.
    pub fn apply(&self, u: &[f64], out: &mut [f64]) -> Result<()> {
        let n = self.diag.len();
        check_len("LaplacianOperator::apply", n, u.len())?;
        check_len("LaplacianOperator::apply", n, out.len())?;
        for j in 0..n {
            let mut acc = self.diag[j] * u[j];
            if j > 0 {
                acc += self.sub[j] * u[j - 1];
            }
            if j + 1 < n {
                acc += self.sup[j] * u[j + 1];
            }
            out[j] = acc;
        }
        Ok(())
    }

    /// Entry `(row, col)` of the dense matrix; zero off the three bands.
    pub fn entry(&self, row: usize, col: usize) -> f64 {
        if row == col {
            self.diag[row]
        } else if col + 1 == row {
            self.sub[row]
        } else if row + 1 == col {
            self.sup[row]
        } else {
            0.0
        }
    }
}

/// Build the Neumann Laplacian for `grid`.
pub fn build_neumann_laplacian(grid: &GridSpec) -> LaplacianOperator {
    LaplacianOperator::neumann(*grid)
}

/// Precomputed Thomas forward sweep for `M = I + δΔt A_Δ`.
///
/// Immutable after construction; `solve` only writes into caller buffers so a
/// single factor is shared by every sample of an ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct SemiImplicitFactor {
    delta: f64,
    dt: f64,
    // original bands of M, kept for residual checks
    sub: Vec<f64>,
    diag: Vec<f64>,
    sup: Vec<f64>,
    // modified super-diagonal c'_j and reciprocal pivots 1 / (b_j - a_j c'_{j-1})
    c_prime: Vec<f64>,
    inv_pivot: Vec<f64>,
}

impl SemiImplicitFactor {
    pub fn new(op: &LaplacianOperator, delta: f64, dt: f64) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::param("delta", format!("must be positive, got {delta}")));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::param("dt", format!("must be positive, got {dt}")));
        }
        let s = delta * dt;
        let n = op.diag.len();
        let sub: Vec<f64> = op.sub.iter().map(|a| s * a).collect();
        let sup: Vec<f64> = op.sup.iter().map(|a| s * a).collect();
        let diag: Vec<f64> = op.diag.iter().map(|a| 1.0 + s * a).collect();

        for j in 0..n {
            let off = sub[j].abs() + sup[j].abs();
            assert!(
                diag[j].abs() > off,
                "I + δΔt A_Δ lost strict diagonal dominance at row {j}"
            );
        }

        let mut c_prime = vec![0.0; n];
        let mut inv_pivot = vec![0.0; n];
        inv_pivot[0] = 1.0 / diag[0];
        c_prime[0] = sup[0] * inv_pivot[0];
        for j in 1..n {
            let pivot = diag[j] - sub[j] * c_prime[j - 1];
            inv_pivot[j] = 1.0 / pivot;
            c_prime[j] = sup[j] * inv_pivot[j];
        }
        Ok(SemiImplicitFactor {
            delta,
            dt,
            sub,
            diag,
            sup,
            c_prime,
            inv_pivot,
        })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// Solve `M x = b` into `x`.
    pub fn solve_into(&self, b: &[f64], x: &mut [f64]) -> Result<()> {
        let n = self.len();
        check_len("SemiImplicitFactor::solve", n, b.len())?;
        check_len("SemiImplicitFactor::solve", n, x.len())?;
        x[0] = b[0] * self.inv_pivot[0];
        for j in 1..n {
            x[j] = (b[j] - self.sub[j] * x[j - 1]) * self.inv_pivot[j];
        }
        for j in (0..n - 1).rev() {
            x[j] -= self.c_prime[j] * x[j + 1];
        }
        Ok(())
    }

    /// Solve `M x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) -> Result<()> {
        let n = self.len();
        check_len("SemiImplicitFactor::solve", n, b.len())?;
        b[0] *= self.inv_pivot[0];
        for j in 1..n {
            b[j] = (b[j] - self.sub[j] * b[j - 1]) * self.inv_pivot[j];
        }
        for j in (0..n - 1).rev() {
            b[j] -= self.c_prime[j] * b[j + 1];
        }
        Ok(())
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let mut x = vec![0.0; b.len()];
        self.solve_into(b, &mut x)?;
        Ok(x)
    }

    /// `out = M x`.
    pub fn apply(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        let n = self.len();
        check_len("SemiImplicitFactor::apply", n, x.len())?;
        check_len("SemiImplicitFactor::apply", n, out.len())?;
        for j in 0..n {
            let mut acc = self.diag[j] * x[j];
            if j > 0 {
                acc += self.sub[j] * x[j - 1];
            }
            if j + 1 < n {
                acc += self.sup[j] * x[j + 1];
            }
            out[j] = acc;
        }
        Ok(())
    }
}

/// Factor `I + δΔt A_Δ` for repeated solves.
pub fn factor_semi_implicit(op: &LaplacianOperator, delta: f64, dt: f64) -> Result<SemiImplicitFactor> {
    SemiImplicitFactor::new(op, delta, dt)
}

fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            actual,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn wnorm(u: &[f64], grid: &GridSpec) -> f64 {
        u.iter()
            .enumerate()
            .map(|(j, v)| grid.weight(j) * v * v)
            .sum::<f64>()
            .sqrt()
    }

    #[test]
    fn rejects_tiny_grids() {
        assert!(GridSpec::new(1).is_err());
        assert!(GridSpec::new(0).is_err());
        assert!(GridSpec::new(2).is_ok());
    }

    #[test]
    fn constants_in_kernel() {
        let grid = GridSpec::new(10).unwrap();
        let op = build_neumann_laplacian(&grid);
        let c = vec![3.25; grid.nodes()];
        let mut out = vec![1.0; grid.nodes()];
        op.apply(&c, &mut out).unwrap();
        assert!(out.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn three_node_stencil() {
        let grid = GridSpec::new(2).unwrap();
        let op = build_neumann_laplacian(&grid);
        let mut out = vec![0.0; 3];
        op.apply(&[0.0, 1.0, 0.0], &mut out).unwrap();
        assert_eq!(out, vec![-8.0, 8.0, -8.0]);
    }

    #[test]
    fn weighted_symmetry() {
        let grid = GridSpec::new(7).unwrap();
        let op = build_neumann_laplacian(&grid);
        for i in 0..grid.nodes() {
            for j in 0..grid.nodes() {
                let lhs = grid.weight(i) * op.entry(i, j);
                let rhs = grid.weight(j) * op.entry(j, i);
                assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
            }
        }
    }

    #[test]
    fn cosine_mode_eigenvalue() {
        let grid = GridSpec::new(64).unwrap();
        let op = build_neumann_laplacian(&grid);
        let dx = grid.dx();
        let u: Vec<f64> = (0..grid.nodes()).map(|j| (PI * grid.x(j)).cos()).collect();
        let mut out = vec![0.0; grid.nodes()];
        op.apply(&u, &mut out).unwrap();
        let lambda = 2.0 / (dx * dx) * (1.0 - (PI * dx).cos());
        // cos(πx) is an exact eigenvector of the reflected stencil
        for j in 0..grid.nodes() {
            assert!((out[j] - lambda * u[j]).abs() < 1e-9, "node {j}");
        }
        assert!((lambda - PI * PI).abs() < PI.powi(4) * dx * dx / 12.0 + 1e-12);
    }

    #[test]
    fn solve_fixes_constants_and_zero() {
        let grid = GridSpec::new(12).unwrap();
        let op = build_neumann_laplacian(&grid);
        let f = factor_semi_implicit(&op, 1.0, 1e-2).unwrap();
        let x = f.solve(&vec![0.0; grid.nodes()]).unwrap();
        assert!(x.iter().all(|v| *v == 0.0));
        let x = f.solve(&vec![2.5; grid.nodes()]).unwrap();
        for v in x {
            assert!((v - 2.5).abs() < 1e-14);
        }
    }

    #[test]
    fn small_dt_is_near_identity() {
        let grid = GridSpec::new(16).unwrap();
        let op = build_neumann_laplacian(&grid);
        let b: Vec<f64> = (0..grid.nodes()).map(|j| (3.0 * grid.x(j)).sin()).collect();
        let mut ab = vec![0.0; b.len()];
        op.apply(&b, &mut ab).unwrap();
        let ab_norm = wnorm(&ab, &grid);
        for &dt in &[1e-4, 1e-6, 1e-8] {
            let f = factor_semi_implicit(&op, 1.0, dt).unwrap();
            let x = f.solve(&b).unwrap();
            let diff: Vec<f64> = x.iter().zip(&b).map(|(a, b)| a - b).collect();
            assert!(wnorm(&diff, &grid) <= dt * ab_norm * (1.0 + 1e-6));
        }
    }

    #[test]
    fn residual_and_mass_on_random_rhs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let grid = GridSpec::new(50).unwrap();
        let op = build_neumann_laplacian(&grid);
        let f = factor_semi_implicit(&op, 1.0, 1e-3).unwrap();
        for _ in 0..20 {
            let b: Vec<f64> = (0..grid.nodes()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x = f.solve(&b).unwrap();
            let mut mx = vec![0.0; b.len()];
            f.apply(&x, &mut mx).unwrap();
            let res: f64 = mx.iter().zip(&b).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let bn: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(res / bn <= 1e-12);
            let (m0, m1) = (weighted_mass(&b, &grid), weighted_mass(&x, &grid));
            assert!((m0 - m1).abs() <= 1e-12 * b.iter().map(|v| v.abs()).sum::<f64>());
            assert!(wnorm(&x, &grid) <= wnorm(&b, &grid));
        }
    }

    #[test]
    fn solve_in_place_matches_solve() {
        let grid = GridSpec::new(9).unwrap();
        let op = build_neumann_laplacian(&grid);
        let f = factor_semi_implicit(&op, 0.7, 3e-3).unwrap();
        let b: Vec<f64> = (0..grid.nodes()).map(|j| (j as f64).sqrt()).collect();
        let x = f.solve(&b).unwrap();
        let mut y = b.clone();
        f.solve_in_place(&mut y).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn length_mismatch_and_bad_params() {
        let grid = GridSpec::new(4).unwrap();
        let op = build_neumann_laplacian(&grid);
        assert!(factor_semi_implicit(&op, 0.0, 1e-3).is_err());
        assert!(factor_semi_implicit(&op, 1.0, -1e-3).is_err());
        let f = factor_semi_implicit(&op, 1.0, 1e-3).unwrap();
        assert!(matches!(
            f.solve(&[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn weighted_mass_examples() {
        let grid = GridSpec::new(100).unwrap();
        assert!((weighted_mass(&vec![1.0; grid.nodes()], &grid) - 1.0).abs() < 1e-14);
        let lin: Vec<f64> = (0..grid.nodes()).map(|j| grid.x(j)).collect();
        assert!((weighted_mass(&lin, &grid) - 0.5).abs() < 1e-14);
        let mut e0 = vec![0.0; grid.nodes()];
        e0[0] = 1.0;
        assert_eq!(weighted_mass(&e0, &grid), grid.dx() / 2.0);
    }
}
