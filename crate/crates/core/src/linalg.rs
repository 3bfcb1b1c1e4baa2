//! Sparse matrices, SPD solves, and discrete dual norms.
//!
//! `SparseSpd` solves with a dense Cholesky factorization below a size cutoff
//! and Jacobi-preconditioned conjugate gradients above it; either way the
//! relative residual is verified against the 1e-12 contract.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::{Error, Result};

/// Builder for sparse matrices: duplicate entries are summed.
#[derive(Debug, Clone)]
pub struct Triplets {
    pub nrows: usize,
    pub ncols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl Triplets {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Triplets { nrows, ncols, entries: Vec::new() }
    }
    pub fn push(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.nrows && j < self.ncols);
        if v != 0.0 {
            self.entries.push((i, j, v));
        }
    }
    pub fn build(mut self) -> SparseMatrix {
        // deterministic accumulation order
        self.entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; self.nrows + 1];
        let mut col_idx = Vec::new();
        let mut vals: Vec<f64> = Vec::new();
        let mut it = self.entries.into_iter().peekable();
        for i in 0..self.nrows {
            while let Some(&(r, c, v)) = it.peek() {
                if r != i {
                    break;
                }
                it.next();
                if vals.len() > row_ptr[i] && *col_idx.last().unwrap() == c {
                    *vals.last_mut().unwrap() += v;
                } else {
                    col_idx.push(c);
                    vals.push(v);
                }
            }
            row_ptr[i + 1] = col_idx.len();
        }
        SparseMatrix { nrows: self.nrows, ncols: self.ncols, row_ptr, col_idx, vals }
    }
}

/// CSR matrix.
#[derive(Debug, Clone)]
pub struct SparseMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub vals: Vec<f64>,
}

impl SparseMatrix {
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        let mut y = vec![0.0; self.nrows];
        for i in 0..self.nrows {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[k] * x[self.col_idx[k]];
            }
            y[i] = acc;
        }
        y
    }

    pub fn tr_matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows);
        let mut y = vec![0.0; self.ncols];
        for i in 0..self.nrows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                y[self.col_idx[k]] += self.vals[k] * x[i];
            }
        }
        y
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                m[(i, self.col_idx[k])] = self.vals[k];
            }
        }
        m
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Coordinate-format text export: one `i j value` line per entry.
    pub fn export_coordinate(&self) -> String {
        let mut out = String::new();
        for i in 0..self.nrows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                out.push_str(&format!("{} {} {:.17e}\n", i, self.col_idx[k], self.vals[k]));
            }
        }
        out
    }

    /// Largest relative symmetry defect (for square matrices).
    pub fn symmetry_defect(&self) -> f64 {
        assert_eq!(self.nrows, self.ncols);
        let mut scale: f64 = 0.0;
        for v in &self.vals {
            scale = scale.max(v.abs());
        }
        if scale == 0.0 {
            return 0.0;
        }
        let d = self.to_dense();
        let mut defect: f64 = 0.0;
        for i in 0..self.nrows {
            for j in (i + 1)..self.ncols {
                defect = defect.max((d[(i, j)] - d[(j, i)]).abs());
            }
        }
        defect / scale
    }
}

/// Residual tolerance contract for SPD solves.
pub const SPD_SOLVE_TOL: f64 = 1e-12;
const DENSE_CUTOFF: usize = 1500;
const SYMMETRY_TOL: f64 = 1e-14;

/// Symmetric positive definite matrix with a solver.
pub struct SparseSpd {
    pub mat: SparseMatrix,
    chol: Option<Cholesky<f64, Dyn>>,
    inv_diag: Vec<f64>,
    scale: Vec<f64>,
    anorm: f64,
}

impl SparseSpd {
    /// Wraps a CSR matrix, verifying symmetry; factorizes densely when small.
    pub fn new(mat: SparseMatrix) -> Result<Self> {
        if mat.nrows != mat.ncols {
            return Err(Error::Mismatch("SPD matrix must be square".into()));
        }
        if mat.nrows > 0 && mat.nrows <= 4000 {
            let defect = mat.symmetry_defect();
            if defect > SYMMETRY_TOL {
                return Err(Error::Mismatch(format!("matrix not symmetric: defect {defect:.3e}")));
            }
        }
        let mut inv_diag = vec![1.0; mat.nrows];
        for i in 0..mat.nrows {
            for k in mat.row_ptr[i]..mat.row_ptr[i + 1] {
                if mat.col_idx[k] == i && mat.vals[k] > 0.0 {
                    inv_diag[i] = 1.0 / mat.vals[k];
                }
            }
        }
        // symmetric Jacobi scaling tames mixed row scales before factorizing
        let scale: Vec<f64> = inv_diag.iter().map(|d| d.sqrt()).collect();
        let chol = if mat.nrows <= DENSE_CUTOFF && mat.nrows > 0 {
            let mut dense = mat.to_dense();
            for i in 0..mat.nrows {
                for j in 0..mat.ncols {
                    dense[(i, j)] *= scale[i] * scale[j];
                }
            }
            Some(Cholesky::new(dense).ok_or_else(|| Error::Solver {
                what: "dense Cholesky (matrix not positive definite)".into(),
                iterations: 0,
                residual: f64::NAN,
            })?)
        } else {
            None
        };
        // infinity norm for the backward-error residual test
        let mut anorm: f64 = 0.0;
        for i in 0..mat.nrows {
            let row: f64 =
                (mat.row_ptr[i]..mat.row_ptr[i + 1]).map(|k| mat.vals[k].abs()).sum();
            anorm = anorm.max(row);
        }
        Ok(SparseSpd { mat, chol, inv_diag, scale, anorm })
    }

    pub fn n(&self) -> usize {
        self.mat.nrows
    }

    fn solve_once(&self, b: &[f64]) -> Result<Vec<f64>> {
        if let Some(chol) = &self.chol {
            // solve the symmetrically scaled system: x = D y, (DAD) y = D b
            let sb: Vec<f64> = b.iter().zip(&self.scale).map(|(v, s)| v * s).collect();
            let y = chol.solve(&DVector::from_column_slice(&sb));
            Ok(y.iter().zip(&self.scale).map(|(v, s)| v * s).collect())
        } else {
            self.pcg(b)
        }
    }

    /// Solves Ax = b to backward-error relative residual
    /// |r| <= 1e-12 (|A| |x| + |b|), with iterative refinement on top of the
    /// factorization or PCG.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        if bnorm == 0.0 {
            return Ok(vec![0.0; self.n()]);
        }
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let denom = |x: &[f64]| self.anorm * norm(x) + bnorm;
        let mut x = self.solve_once(b)?;
        let mut last = f64::INFINITY;
        for _ in 0..3 {
            let r: Vec<f64> =
                self.mat.matvec(&x).iter().zip(b).map(|(ax, bi)| bi - ax).collect();
            let rnorm = norm(&r);
            if rnorm <= SPD_SOLVE_TOL * denom(&x) {
                return Ok(x);
            }
            if rnorm >= last {
                break; // refinement stalled
            }
            last = rnorm;
            let dx = self.solve_once(&r)?;
            for (xi, di) in x.iter_mut().zip(&dx) {
                *xi += di;
            }
        }
        let r: Vec<f64> = self.mat.matvec(&x).iter().zip(b).map(|(ax, bi)| bi - ax).collect();
        let rnorm = norm(&r);
        if rnorm > SPD_SOLVE_TOL * denom(&x) {
            return Err(Error::Solver {
                what: "SPD solve".into(),
                iterations: 0,
                residual: rnorm / denom(&x),
            });
        }
        Ok(x)
    }

    /// Jacobi-preconditioned conjugate gradients.
    fn pcg(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.n();
        let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        let target = 0.1 * SPD_SOLVE_TOL * bnorm;
        let mut x = vec![0.0; n];
        let mut r = b.to_vec();
        let mut z: Vec<f64> = r.iter().zip(&self.inv_diag).map(|(a, d)| a * d).collect();
        let mut p = z.clone();
        let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let max_iter = 40 * n + 200;
        for it in 0..max_iter {
            let ap = self.mat.matvec(&p);
            let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
            if pap <= 0.0 {
                return Err(Error::Solver {
                    what: "PCG breakdown (matrix not positive definite)".into(),
                    iterations: it,
                    residual: f64::NAN,
                });
            }
            let alpha = rz / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            let rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if rnorm <= target {
                return Ok(x);
            }
            z = r.iter().zip(&self.inv_diag).map(|(a, d)| a * d).collect();
            let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        let rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        Err(Error::Solver { what: "PCG".into(), iterations: max_iter, residual: rnorm / bnorm })
    }
}

/// Discrete dual norm sqrt(F^T K^{-1} F) of a load vector over the enriched
/// test space whose norm Gram matrix is K.
pub fn dual_norm(load: &[f64], gram: &SparseSpd) -> Result<f64> {
    let x = gram.solve(load)?;
    let v: f64 = load.iter().zip(&x).map(|(a, b)| a * b).sum();
    // round-off can push a zero functional's square slightly negative
    Ok(v.max(0.0).sqrt())
}

/// Enriched test space together with the Gram matrix of its mesh-weighted
/// norm; evaluates the discrete dual-norm proxy of load vectors.
pub struct DualNormContext {
    pub space: std::sync::Arc<crate::fespace::FeSpace>,
    pub gram: SparseSpd,
}

impl DualNormContext {
    /// V-norm context: Lagrange space of the given degree with zero trace,
    /// Gram of |v|_H1(Omega)^2 + sum_T h_T^2 |v|_H2(T)^2.
    pub fn scalar(mesh: &std::sync::Arc<crate::mesh::Mesh>, degree: usize) -> Result<Self> {
        let space =
            crate::fespace::FeSpace::lagrange(mesh.clone(), degree, crate::fespace::BcMode::Essential)?;
        let gram = space.norm_gram_scalar()?;
        Ok(DualNormContext { space, gram })
    }

    /// W-norm context: edge elements with vanishing tangential trace, Gram of
    /// ||a||_L2(Omega)^2 + sum_T h_T^2 |a|_H1(T)^2.
    pub fn oneform(mesh: &std::sync::Arc<crate::mesh::Mesh>, degree: usize) -> Result<Self> {
        let space = crate::fespace::FeSpace::edge_oneform(
            mesh.clone(),
            degree,
            crate::fespace::BcMode::Essential,
        )?;
        let gram = space.norm_gram_oneform()?;
        Ok(DualNormContext { space, gram })
    }

    /// Dual norm of a full-length load vector over this context's space.
    pub fn dual_norm(&self, load_full: &[f64]) -> Result<f64> {
        dual_norm(&self.space.restrict(load_full), &self.gram)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, seed: u64) -> (SparseMatrix, DMatrix<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = DMatrix::<f64>::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let mut a = &b * b.transpose();
        for i in 0..n {
            a[(i, i)] += n as f64;
        }
        let mut t = Triplets::new(n, n);
        for i in 0..n {
            for j in 0..n {
                t.push(i, j, a[(i, j)]);
            }
        }
        (t.build(), a)
    }

    #[test]
    fn identity_solve() {
        let mut t = Triplets::new(4, 4);
        for i in 0..4 {
            t.push(i, i, 1.0);
        }
        let a = SparseSpd::new(t.build()).unwrap();
        let b = vec![1.0, -2.0, 3.0, 0.5];
        let x = a.solve(&b).unwrap();
        for (xi, bi) in x.iter().zip(&b) {
            assert!((xi - bi).abs() < 1e-14);
        }
    }

    #[test]
    fn random_spd_vs_dense_oracle() {
        let (sp, dense) = random_spd(50, 3);
        let a = SparseSpd::new(sp).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let b: Vec<f64> = (0..50).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = a.solve(&b).unwrap();
        let oracle = dense.clone().lu().solve(&DVector::from_column_slice(&b)).unwrap();
        for i in 0..50 {
            assert!((x[i] - oracle[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn pcg_path_matches_contract() {
        // force the iterative path with a matrix above the dense cutoff
        let n = 1600;
        let mut t = Triplets::new(n, n);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for i in 0..n {
            t.push(i, i, 4.0 + rng.gen_range(0.0..1.0));
            if i + 1 < n {
                t.push(i, i + 1, -1.0);
                t.push(i + 1, i, -1.0);
            }
        }
        let a = SparseSpd::new(t.build()).unwrap();
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = a.solve(&b).unwrap();
        let r: Vec<f64> = a.mat.matvec(&x).iter().zip(&b).map(|(ax, bi)| bi - ax).collect();
        // well-conditioned system: plain relative residual meets the contract
        let rel = r.iter().map(|v| v * v).sum::<f64>().sqrt()
            / b.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(rel <= 10.0 * SPD_SOLVE_TOL);
    }

    #[test]
    fn rejects_asymmetric_and_indefinite() {
        let mut t = Triplets::new(2, 2);
        t.push(0, 0, 1.0);
        t.push(0, 1, 0.5);
        t.push(1, 0, 0.2);
        t.push(1, 1, 1.0);
        assert!(SparseSpd::new(t.build()).is_err());
        let mut t = Triplets::new(2, 2);
        t.push(0, 0, 1.0);
        t.push(1, 1, -1.0);
        assert!(SparseSpd::new(t.build()).is_err());
    }

    #[test]
    fn dual_norm_properties() {
        let (sp, dense) = random_spd(20, 7);
        let k = SparseSpd::new(sp).unwrap();
        // F = 0 -> 0
        assert_eq!(dual_norm(&vec![0.0; 20], &k).unwrap(), 0.0);
        // homogeneity and the K w oracle
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let w: Vec<f64> = (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let f = k.mat.matvec(&w);
        let nf = dual_norm(&f, &k).unwrap();
        let wkw = {
            let kw = dense * DVector::from_column_slice(&w);
            (DVector::from_column_slice(&w).dot(&kw)).sqrt()
        };
        assert!((nf - wkw).abs() < 1e-9 * wkw);
        let f2: Vec<f64> = f.iter().map(|v| 2.0 * v).collect();
        assert!((dual_norm(&f2, &k).unwrap() - 2.0 * nf).abs() < 1e-9 * nf);
    }

    #[test]
    fn triplets_sum_duplicates_and_export() {
        let mut t = Triplets::new(2, 2);
        t.push(0, 0, 1.0);
        t.push(0, 0, 2.0);
        t.push(1, 0, -1.0);
        let m = t.build();
        assert_eq!(m.nnz(), 2);
        let d = m.to_dense();
        assert_eq!(d[(0, 0)], 3.0);
        assert_eq!(d[(1, 0)], -1.0);
        let txt = m.export_coordinate();
        assert!(txt.lines().count() == 2);
        assert!(txt.starts_with("0 0 "));
    }
}
