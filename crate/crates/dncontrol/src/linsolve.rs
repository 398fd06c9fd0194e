//! Direct sparse factorization of the per-step saddle-point systems.
//!
//! One LU factorization serves plain and transposed solves; the transposed
//! solve is what turns the forward step operator into the discrete adjoint
//! operator, so the adjoint inherits solver accuracy for free. Every
//! accepted solve is residual-checked against the stored matrix, with one
//! step of iterative refinement before giving up.
//!
//! A [`FactorizedSystem`] is immutable; concurrent solves with distinct
//! right-hand sides are safe.

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{Argsort, Pair, SparseColMat, SymbolicSparseColMat, Triplet};
use faer::Mat;
use thiserror::Error;

/// Scaled residual bound accepted by [`FactorizedSystem::solve`].
pub const SOLVE_RESIDUAL_BOUND: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum LinSolveError {
    #[error("matrix is singular{}", .dof.map(|d| format!(" (empty row/column at dof {d})")).unwrap_or_default())]
    Singular { dof: Option<usize> },
    #[error("right-hand side contains a non-finite entry at index {0}")]
    NonFiniteRhs(usize),
    #[error("solve residual {residual:.3e} exceeds bound {bound:.3e}")]
    ResidualTooLarge { residual: f64, bound: f64 },
    #[error("matrix construction failed: {0}")]
    Construction(String),
}

/// Reusable symbolic analysis: the sparsity pattern of the step systems is
/// fixed by the mesh, so the fill-reducing ordering is computed once.
#[derive(Clone)]
pub struct SymbolicPattern(SymbolicLu<usize>);

/// Full precomputed analysis of a fixed assembly pattern: the CSC symbolic
/// structure, the scatter from assembly (triplet) order into it, and the
/// symbolic LU. Repeated factorizations then skip all index work and pay
/// only for the numeric sweep.
#[derive(Clone)]
pub struct SystemPattern {
    n: usize,
    nnz_in: usize,
    symbolic: SymbolicSparseColMat<usize>,
    argsort: Argsort<usize>,
    symbolic_lu: SymbolicLu<usize>,
}

/// Analyze the pattern of a system given its triplet positions (in the
/// exact order assembly will emit them on every call).
pub fn analyze_pattern(
    n: usize,
    triplets: &[(usize, usize, f64)],
) -> Result<SystemPattern, LinSolveError> {
    let pairs: Vec<Pair<usize, usize>> = triplets
        .iter()
        .map(|&(r, c, _)| Pair { row: r, col: c })
        .collect();
    let (symbolic, argsort) = SymbolicSparseColMat::try_new_from_indices(n, n, &pairs)
        .map_err(|e| LinSolveError::Construction(format!("{e:?}")))?;
    let symbolic_lu = SymbolicLu::try_new(symbolic.as_ref()).map_err(|_| {
        LinSolveError::Singular {
            dof: None,
        }
    })?;
    Ok(SystemPattern {
        n,
        nnz_in: triplets.len(),
        symbolic,
        argsort,
        symbolic_lu,
    })
}

/// Numeric factorization against a precomputed [`SystemPattern`]. The
/// triplet sequence must carry the same positions, in the same order, as
/// the one the pattern was analyzed from.
pub fn factorize_with_pattern(
    pattern: &SystemPattern,
    triplets: &[(usize, usize, f64)],
) -> Result<FactorizedSystem, LinSolveError> {
    assert_eq!(
        triplets.len(),
        pattern.nnz_in,
        "assembly emitted a different triplet count than the analyzed pattern"
    );
    let values: Vec<f64> = triplets.iter().map(|t| t.2).collect();
    let matrix =
        SparseColMat::new_from_argsort(pattern.symbolic.clone(), &pattern.argsort, &values)
            .map_err(|e| LinSolveError::Construction(format!("{e:?}")))?;
    let lu = Lu::try_new_with_symbolic(pattern.symbolic_lu.clone(), matrix.as_ref())
        .map_err(|_| LinSolveError::Singular {
            dof: find_empty_row_or_col(&matrix, pattern.n),
        })?;
    let inf_norm = inf_norm(&matrix, pattern.n);
    Ok(FactorizedSystem {
        n: pattern.n,
        matrix,
        lu,
        inf_norm,
    })
}

/// LU factorization of one assembled system together with the matrix it was
/// built from (kept for residual verification).
pub struct FactorizedSystem {
    n: usize,
    matrix: SparseColMat<usize, f64>,
    lu: Lu<usize, f64>,
    inf_norm: f64,
}

/// Factorize a square system given as triplets, reusing a cached symbolic
/// analysis when one is supplied.
///
/// On numerical singularity the error names an offending dof when a
/// structurally empty row or column identifies one (a lost inf-sup pair or
/// a broken constraint elimination shows up this way).
pub fn factorize(
    n: usize,
    triplets: &[(usize, usize, f64)],
    symbolic: Option<&SymbolicPattern>,
) -> Result<(FactorizedSystem, SymbolicPattern), LinSolveError> {
    let faer_trips: Vec<Triplet<usize, usize, f64>> = triplets
        .iter()
        .map(|&(r, c, v)| Triplet::new(r, c, v))
        .collect();
    let matrix = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &faer_trips)
        .map_err(|e| LinSolveError::Construction(format!("{e:?}")))?;

    let symbolic = match symbolic {
        Some(s) => s.clone(),
        None => SymbolicPattern(
            SymbolicLu::try_new(matrix.symbolic())
                .map_err(|_| LinSolveError::Singular { dof: find_empty_row_or_col(&matrix, n) })?,
        ),
    };
    let lu = Lu::try_new_with_symbolic(symbolic.0.clone(), matrix.as_ref())
        .map_err(|_| LinSolveError::Singular { dof: find_empty_row_or_col(&matrix, n) })?;

    let inf_norm = inf_norm(&matrix, n);
    Ok((
        FactorizedSystem {
            n,
            matrix,
            lu,
            inf_norm,
        },
        symbolic,
    ))
}

fn find_empty_row_or_col(m: &SparseColMat<usize, f64>, n: usize) -> Option<usize> {
    let sym = m.symbolic();
    let mut row_nonzero = vec![false; n];
    for col in 0..n {
        if sym.row_idx_of_col_raw(col).is_empty() {
            return Some(col);
        }
        for &r in sym.row_idx_of_col_raw(col) {
            row_nonzero[r] = true;
        }
    }
    row_nonzero.iter().position(|&nz| !nz)
}

/// Row-sum norm of the matrix.
fn inf_norm(m: &SparseColMat<usize, f64>, n: usize) -> f64 {
    let sym = m.symbolic();
    let mut sums = vec![0.0f64; n];
    for col in 0..n {
        for (k, &r) in sym.row_idx_of_col_raw(col).iter().enumerate() {
            sums[r] += m.val_of_col(col)[k].abs();
        }
    }
    sums.into_iter().fold(0.0, f64::max)
}

impl FactorizedSystem {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Solve `A x = b`.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>, LinSolveError> {
        self.solve_impl(rhs, false)
    }

    /// Solve `A^T x = b`.
    pub fn solve_transposed(&self, rhs: &[f64]) -> Result<Vec<f64>, LinSolveError> {
        self.solve_impl(rhs, true)
    }

    fn solve_impl(&self, rhs: &[f64], transposed: bool) -> Result<Vec<f64>, LinSolveError> {
        assert_eq!(rhs.len(), self.n);
        if let Some(bad) = rhs.iter().position(|v| !v.is_finite()) {
            return Err(LinSolveError::NonFiniteRhs(bad));
        }
        let b = Mat::<f64>::from_fn(self.n, 1, |i, _| rhs[i]);
        let mut x = if transposed {
            self.lu.solve_transpose(&b)
        } else {
            self.lu.solve(&b)
        };

        for _refinement in 0..2 {
            let (residual, norm) = self.residual(rhs, &x, transposed);
            if residual_ok(norm, self.inf_norm, &x, rhs) {
                return Ok((0..self.n).map(|i| x[(i, 0)]).collect());
            }
            let r = Mat::<f64>::from_fn(self.n, 1, |i, _| residual[i]);
            let dx = if transposed {
                self.lu.solve_transpose(&r)
            } else {
                self.lu.solve(&r)
            };
            for i in 0..self.n {
                x[(i, 0)] += dx[(i, 0)];
            }
        }
        let (_, norm) = self.residual(rhs, &x, transposed);
        let scale = self.inf_norm * mat_inf(&x) + slice_inf(rhs);
        Err(LinSolveError::ResidualTooLarge {
            residual: norm / scale.max(f64::MIN_POSITIVE),
            bound: SOLVE_RESIDUAL_BOUND,
        })
    }

    /// `b - A x` (or `b - A^T x`) and its max norm.
    fn residual(&self, b: &[f64], x: &Mat<f64>, transposed: bool) -> (Vec<f64>, f64) {
        let mut r: Vec<f64> = b.to_vec();
        let sym = self.matrix.symbolic();
        for col in 0..self.n {
            let rows = sym.row_idx_of_col_raw(col);
            let vals = self.matrix.val_of_col(col);
            if transposed {
                let mut acc = 0.0;
                for (k, &row) in rows.iter().enumerate() {
                    acc += vals[k] * x[(row, 0)];
                }
                r[col] -= acc;
            } else {
                let xc = x[(col, 0)];
                for (k, &row) in rows.iter().enumerate() {
                    r[row] -= vals[k] * xc;
                }
            }
        }
        let norm = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        (r, norm)
    }
}

fn mat_inf(x: &Mat<f64>) -> f64 {
    (0..x.nrows()).fold(0.0f64, |m, i| m.max(x[(i, 0)].abs()))
}

fn slice_inf(x: &[f64]) -> f64 {
    x.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

fn residual_ok(res_norm: f64, a_norm: f64, x: &Mat<f64>, b: &[f64]) -> bool {
    let scale = a_norm * mat_inf(x) + slice_inf(b);
    res_norm <= SOLVE_RESIDUAL_BOUND * scale.max(f64::MIN_POSITIVE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_and_diagonal() {
        let trips = vec![(0, 0, 1.0), (1, 1, 1.0)];
        let (f, _) = factorize(2, &trips, None).unwrap();
        assert_eq!(f.solve(&[3.0, -4.0]).unwrap(), vec![3.0, -4.0]);

        let trips = vec![(0, 0, 2.0), (1, 1, 4.0)];
        let (f, _) = factorize(2, &trips, None).unwrap();
        assert_eq!(f.solve(&[2.0, 8.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let trips = vec![(0, 0, 2.0), (0, 1, 1.0), (1, 0, -1.0), (1, 1, 3.0)];
        let (f, _) = factorize(2, &trips, None).unwrap();
        assert_eq!(f.solve(&[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn rejects_nan_rhs() {
        let trips = vec![(0, 0, 1.0), (1, 1, 1.0)];
        let (f, _) = factorize(2, &trips, None).unwrap();
        assert!(matches!(
            f.solve(&[f64::NAN, 0.0]),
            Err(LinSolveError::NonFiniteRhs(0))
        ));
    }

    #[test]
    fn reports_singularity_with_dof() {
        // Row/column 1 is empty.
        let trips = vec![(0, 0, 1.0), (2, 2, 1.0), (0, 2, 0.5)];
        match factorize(3, &trips, None) {
            Err(LinSolveError::Singular { dof: Some(1) }) => {}
            Err(other) => panic!("expected singular at dof 1, got {other:?}"),
            Ok(_) => panic!("expected singular at dof 1, got a factorization"),
        }
    }

    #[test]
    fn adjoint_identity_on_random_sparse_matrix() {
        let n = 50;
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut trips: Vec<(usize, usize, f64)> = (0..n).map(|i| (i, i, 3.0 + rng.gen::<f64>())).collect();
        for _ in 0..300 {
            let r = rng.gen_range(0..n);
            let c = rng.gen_range(0..n);
            trips.push((r, c, rng.gen_range(-1.0..1.0)));
        }
        let (f, _) = factorize(n, &trips, None).unwrap();
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let c: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = f.solve(&b).unwrap();
        let y = f.solve_transposed(&c).unwrap();
        let lhs: f64 = x.iter().zip(&c).map(|(a, b)| a * b).sum();
        let rhs: f64 = b.iter().zip(&y).map(|(a, b)| a * b).sum();
        let scale = lhs.abs().max(rhs.abs());
        assert!((lhs - rhs).abs() <= 1e-12 * scale, "{lhs} vs {rhs}");
    }

    #[test]
    fn symbolic_reuse_gives_identical_solutions() {
        let trips = vec![(0, 0, 2.0), (0, 1, 1.0), (1, 0, -1.0), (1, 1, 3.0)];
        let (f1, pattern) = factorize(2, &trips, None).unwrap();
        let (f2, _) = factorize(2, &trips, Some(&pattern)).unwrap();
        let b = [1.0, 2.0];
        assert_eq!(f1.solve(&b).unwrap(), f2.solve(&b).unwrap());
    }

    #[test]
    fn transposed_solve_on_symmetric_matrix_agrees() {
        let trips = vec![(0, 0, 4.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 3.0)];
        let (f, _) = factorize(2, &trips, None).unwrap();
        let b = [1.0, -2.0];
        assert_eq!(f.solve(&b).unwrap(), f.solve_transposed(&b).unwrap());
    }
}
