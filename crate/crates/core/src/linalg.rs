//! Linear algebra helpers: small SPD inverses, a block-sparse symmetric matrix
//! with 6x6 blocks, dense Cholesky and block-Jacobi preconditioned CG.

use nalgebra::{Cholesky, DMatrix, DVector, Matrix3, Matrix6, Vector6};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::Real;

/// Inverse of a symmetric positive definite 3x3 matrix, symmetrized.
pub fn spd_inverse3<T: Real>(m: &Matrix3<T>) -> Option<Matrix3<T>> {
    let inv = m.cholesky()?.inverse();
    Some((inv + inv.transpose()) * T::lit(0.5))
}

/// Symmetric matrix made of 6x6 blocks. Both `(i, j)` and `(j, i)` are stored;
/// each row lists its blocks sorted by column.
#[derive(Debug, Clone)]
pub struct BlockSparse6<T: Real> {
    pub rows: Vec<Vec<(usize, Matrix6<T>)>>,
}

impl<T: Real> BlockSparse6<T> {
    pub fn block_dim(&self) -> usize {
        self.rows.len()
    }

    pub fn dim(&self) -> usize {
        6 * self.rows.len()
    }

    /// Number of stored nonzero blocks (diagonal included).
    pub fn nnz_blocks(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn block(&self, i: usize, j: usize) -> Option<&Matrix6<T>> {
        let row = &self.rows[i];
        row.binary_search_by_key(&j, |e| e.0).ok().map(|k| &row[k].1)
    }

    pub fn diagonal_block(&self, i: usize) -> Matrix6<T> {
        self.block(i, i).copied().unwrap_or_else(Matrix6::zeros)
    }

    pub fn to_dense(&self) -> DMatrix<T> {
        let n = self.dim();
        let mut d = DMatrix::zeros(n, n);
        for (i, row) in self.rows.iter().enumerate() {
            for (j, b) in row {
                d.fixed_view_mut::<6, 6>(6 * i, 6 * *j).copy_from(b);
            }
        }
        d
    }

    /// `y = A x`, parallel over block rows; each row sums in column order.
    pub fn mul_vec(&self, x: &DVector<T>) -> DVector<T> {
        let rows: Vec<Vector6<T>> = self
            .rows
            .par_iter()
            .map(|row| {
                let mut acc = Vector6::zeros();
                for (j, b) in row {
                    acc += b * x.fixed_rows::<6>(6 * j);
                }
                acc
            })
            .collect();
        let mut y = DVector::zeros(self.dim());
        for (i, r) in rows.iter().enumerate() {
            y.fixed_rows_mut::<6>(6 * i).copy_from(r);
        }
        y
    }
}

/// Solves `A x = b` for symmetric positive definite `A` by dense Cholesky.
pub fn dense_cholesky_solve<T: Real>(a: DMatrix<T>, b: &DVector<T>) -> Result<DVector<T>> {
    let chol = Cholesky::new(a).ok_or(Error::NotPositiveDefinite { cluster: None })?;
    Ok(chol.solve(b))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PcgOptions {
    pub relative_tolerance: f64,
    pub max_iterations: usize,
}

impl Default for PcgOptions {
    fn default() -> Self {
        Self {
            relative_tolerance: 1e-6,
            max_iterations: 500,
        }
    }
}

/// Conjugate gradients with a block-Jacobi preconditioner (inverse 6x6
/// diagonal blocks). Returns the solution and the iteration count.
pub fn block_jacobi_pcg<T: Real>(
    a: &BlockSparse6<T>,
    b: &DVector<T>,
    options: &PcgOptions,
) -> Result<(DVector<T>, usize)> {
    let nb = a.block_dim();
    let mut precond = Vec::with_capacity(nb);
    for i in 0..nb {
        let d = a.diagonal_block(i);
        let inv = d.cholesky().ok_or(Error::NotPositiveDefinite { cluster: None })?.inverse();
        precond.push(inv);
    }
    let apply_precond = |r: &DVector<T>| {
        let mut z = DVector::zeros(r.len());
        for (i, p) in precond.iter().enumerate() {
            z.fixed_rows_mut::<6>(6 * i).copy_from(&(p * r.fixed_rows::<6>(6 * i)));
        }
        z
    };

    let b_norm = b.norm();
    let mut x = DVector::zeros(b.len());
    if b_norm == T::zero() {
        return Ok((x, 0));
    }
    let tol = T::lit(options.relative_tolerance) * b_norm;
    let mut r = b.clone();
    let mut z = apply_precond(&r);
    let mut p = z.clone();
    let mut rz = r.dot(&z);
    for it in 1..=options.max_iterations {
        let ap = a.mul_vec(&p);
        let pap = p.dot(&ap);
        if pap <= T::zero() {
            return Err(Error::NotPositiveDefinite { cluster: None });
        }
        let alpha = rz / pap;
        x.axpy(alpha, &p, T::one());
        r.axpy(-alpha, &ap, T::one());
        if r.norm() <= tol {
            return Ok((x, it));
        }
        z = apply_precond(&r);
        let rz_new = r.dot(&z);
        let beta = rz_new / rz;
        rz = rz_new;
        p = &z + &p * beta;
    }
    Err(Error::PcgStalled {
        iterations: options.max_iterations,
        relative_residual: (r.norm() / b_norm).as_f64(),
    })
}
