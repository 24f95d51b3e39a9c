//! Block-sparse symmetric systems over 3×3 pose blocks, solved by sparse
//! Cholesky with a fill-reducing ordering.

use std::sync::Once;

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, Par, Side};
use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

static SEQUENTIAL: Once = Once::new();

/// Results must not depend on thread scheduling.
fn force_sequential() {
    SEQUENTIAL.call_once(|| faer::set_global_parallelism(Par::Seq));
}

/// Symmetric matrix assembled from 3×3 blocks plus a right-hand side.
/// Only the lower triangle is stored.
#[derive(Clone, Debug)]
pub struct BlockSystem {
    blocks: usize,
    triplets: Vec<Triplet<usize, usize, f64>>,
    rhs: Vec<f64>,
}

impl BlockSystem {
    pub fn new(blocks: usize) -> Self {
        Self {
            blocks,
            triplets: Vec::new(),
            rhs: vec![0.0; 3 * blocks],
        }
    }

    pub fn dim(&self) -> usize {
        3 * self.blocks
    }

    /// Adds `m` at block `(i, j)` and, for `i != j`, its transpose at `(j, i)`.
    pub fn add_block(&mut self, i: usize, j: usize, m: &Matrix3<f64>) {
        let (bi, bj, mm) = if i >= j { (i, j, *m) } else { (j, i, m.transpose()) };
        for r in 0..3 {
            for c in 0..3 {
                let (row, col) = (3 * bi + r, 3 * bj + c);
                if row >= col && mm[(r, c)] != 0.0 {
                    self.triplets.push(Triplet::new(row, col, mm[(r, c)]));
                }
            }
        }
    }

    pub fn add_rhs(&mut self, i: usize, v: &Vector3<f64>) {
        for k in 0..3 {
            self.rhs[3 * i + k] += v[k];
        }
    }

    /// Diagonal of the assembled matrix.
    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.dim()];
        for t in &self.triplets {
            if t.row == t.col {
                d[t.row] += t.val;
            }
        }
        d
    }

    fn matrix_with_damping(&self, damping: &[f64]) -> Result<SparseColMat<usize, f64>> {
        let n = self.dim();
        let mut entries = self.triplets.clone();
        for (i, d) in damping.iter().enumerate() {
            entries.push(Triplet::new(i, i, *d));
        }
        // every diagonal slot must exist for the symbolic pattern
        for i in 0..n {
            entries.push(Triplet::new(i, i, 0.0));
        }
        SparseColMat::try_new_from_triplets(n, n, &entries).map_err(|_| Error::SingularSystem)
    }

    /// Factorizes `A + diag(damping)`.
    pub fn factorize(&self, damping: &[f64]) -> Result<Factor> {
        force_sequential();
        let m = self.matrix_with_damping(damping)?;
        let llt = m.sp_cholesky(Side::Lower).map_err(|_| Error::SingularSystem)?;
        Ok(Factor { llt, n: self.dim() })
    }

    /// Solves `(A + diag(damping)) x = rhs`.
    pub fn solve(&self, damping: &[f64]) -> Result<Vec<f64>> {
        let factor = self.factorize(damping)?;
        factor.solve_vec(&self.rhs)
    }

    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }
}

pub struct Factor {
    llt: faer::sparse::linalg::solvers::Llt<usize, f64>,
    n: usize,
}

impl Factor {
    pub fn solve_vec(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let mut b = Mat::<f64>::from_fn(self.n, 1, |i, _| rhs[i]);
        self.llt.solve_in_place(b.as_mut());
        let x: Vec<f64> = (0..self.n).map(|i| b[(i, 0)]).collect();
        if x.iter().all(|v| v.is_finite()) {
            Ok(x)
        } else {
            Err(Error::SingularSystem)
        }
    }

    /// Diagonal 3×3 blocks of the inverse for the requested block indices.
    pub fn inverse_diagonal_blocks(&self, blocks: &[usize]) -> Vec<Matrix3<f64>> {
        const BATCH: usize = 32;
        let mut out = Vec::with_capacity(blocks.len());
        for chunk in blocks.chunks(BATCH) {
            let mut b = Mat::<f64>::zeros(self.n, 3 * chunk.len());
            for (k, blk) in chunk.iter().enumerate() {
                for r in 0..3 {
                    b[(3 * blk + r, 3 * k + r)] = 1.0;
                }
            }
            self.llt.solve_in_place(b.as_mut());
            for (k, blk) in chunk.iter().enumerate() {
                out.push(Matrix3::from_fn(|r, c| b[(3 * blk + r, 3 * k + c)]));
            }
        }
        out
    }
}
