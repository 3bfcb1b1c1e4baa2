//! Polynomial bases on triangles and edges, and degree-exact quadrature.
//!
//! Triangle rules are conical products: a Gauss-Jacobi(1,0) rule in the
//! collapsed direction times a Gauss-Legendre rule, so a rule of any requested
//! exactness degree is available without tables.  Weights are normalized to
//! sum to one; integrals are `area * sum(w_i f(p_i))`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, SymmetricEigen};

use crate::{Error, Result};

/// Largest supported exactness degree for triangle/edge rules.
pub const MAX_QUAD_DEGREE: usize = 40;

/// Quadrature rule on the reference triangle {(0,0),(1,0),(0,1)}.
#[derive(Debug, Clone)]
pub struct TriQuadRule {
    /// Barycentric coordinates of the nodes.
    pub points: Vec<[f64; 3]>,
    /// Area-normalized weights (sum to 1).
    pub weights: Vec<f64>,
    /// Total polynomial degree integrated exactly.
    pub degree: usize,
}

/// Quadrature rule on [0,1].
#[derive(Debug, Clone)]
pub struct EdgeQuadRule {
    pub points: Vec<f64>,
    /// Length-normalized weights (sum to 1).
    pub weights: Vec<f64>,
    pub degree: usize,
}

/// Gauss rule nodes/weights from the Golub-Welsch tridiagonal eigenproblem.
/// `diag`/`offdiag` are the Jacobi-matrix recurrence coefficients and `mu0`
/// the total mass of the weight function.
fn golub_welsch(diag: &[f64], offdiag: &[f64], mu0: f64) -> (Vec<f64>, Vec<f64>) {
    let m = diag.len();
    let mut j = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        j[(i, i)] = diag[i];
        if i + 1 < m {
            j[(i, i + 1)] = offdiag[i];
            j[(i + 1, i)] = offdiag[i];
        }
    }
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..m)
        .map(|i| (eig.eigenvalues[i], mu0 * eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    (pairs.iter().map(|p| p.0).collect(), pairs.iter().map(|p| p.1).collect())
}

/// m-point Gauss-Legendre rule on [-1,1] (exact through degree 2m-1).
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(m >= 1);
    let diag = vec![0.0; m];
    let offdiag: Vec<f64> =
        (1..m).map(|k| k as f64 / ((4 * k * k - 1) as f64).sqrt()).collect();
    golub_welsch(&diag, &offdiag, 2.0)
}

/// m-point Gauss-Jacobi rule with weight (1-x) on [-1,1].
fn gauss_jacobi10(m: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(m >= 1);
    let diag: Vec<f64> =
        (0..m).map(|k| -1.0 / (((2 * k + 1) * (2 * k + 3)) as f64)).collect();
    let offdiag: Vec<f64> = (1..m)
        .map(|k| ((k * (k + 1)) as f64).sqrt() / ((2 * k + 1) as f64))
        .collect();
    golub_welsch(&diag, &offdiag, 2.0)
}

/// Degree-exact rule on the reference triangle.
pub fn tri_rule(degree: usize) -> Result<TriQuadRule> {
    if degree > MAX_QUAD_DEGREE {
        return Err(Error::Quadrature(format!(
            "triangle rule degree {degree} exceeds supported maximum {MAX_QUAD_DEGREE}"
        )));
    }
    let m = degree / 2 + 1; // 2m-1 >= degree
    let (xj, wj) = gauss_jacobi10(m);
    let (xl, wl) = gauss_legendre(m);
    let mut points = Vec::with_capacity(m * m);
    let mut weights = Vec::with_capacity(m * m);
    for i in 0..m {
        let x = 0.5 * (1.0 + xj[i]);
        for j in 0..m {
            let eta = 0.5 * (1.0 + xl[j]);
            let y = (1.0 - x) * eta;
            points.push([1.0 - x - y, x, y]);
            // integral over T = (1/2) * sum(w f); w normalized to sum 1
            weights.push(wj[i] * wl[j] / 4.0);
        }
    }
    Ok(TriQuadRule { points, weights, degree })
}

/// Degree-exact rule on [0,1].
pub fn edge_rule(degree: usize) -> Result<EdgeQuadRule> {
    if degree > MAX_QUAD_DEGREE {
        return Err(Error::Quadrature(format!(
            "edge rule degree {degree} exceeds supported maximum {MAX_QUAD_DEGREE}"
        )));
    }
    let m = degree / 2 + 1;
    let (x, w) = gauss_legendre(m);
    Ok(EdgeQuadRule {
        points: x.iter().map(|&t| 0.5 * (1.0 + t)).collect(),
        weights: w.iter().map(|&v| 0.5 * v).collect(),
        degree,
    })
}

/// Shifted Legendre polynomial values P~_0..P~_r at s in [0,1].
pub fn shifted_legendre(r: usize, s: f64) -> Vec<f64> {
    let x = 2.0 * s - 1.0;
    let mut p = Vec::with_capacity(r + 1);
    p.push(1.0);
    if r >= 1 {
        p.push(x);
    }
    for n in 1..r {
        let next = (((2 * n + 1) as f64) * x * p[n] - n as f64 * p[n - 1]) / (n + 1) as f64;
        p.push(next);
    }
    p
}

/// Exponent pairs (a,b) with a+b <= d, in a fixed order.
pub fn monomial_exponents(d: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for total in 0..=d {
        for a in (0..=total).rev() {
            out.push((a, total - a));
        }
    }
    out
}

/// Exact integral of x^a y^b over the reference triangle: a! b! / (a+b+2)!.
pub fn ref_monomial_integral(a: usize, b: usize) -> f64 {
    // a!b!/(a+b)! = prod_{k=1..b} k/(a+k), in product form to keep
    // intermediate magnitudes tame
    let mut val = 1.0;
    for k in 1..=b {
        val *= k as f64 / (a + k) as f64;
    }
    val / (((a + b + 1) * (a + b + 2)) as f64)
}

/// Number of scalar basis functions of degree r on a triangle.
pub fn tri_dim(r: usize) -> usize {
    (r + 1) * (r + 2) / 2
}

/// Bernstein basis of total degree r on the reference triangle, with
/// derivatives through second order in reference coordinates
/// (lambda = (1-x-y, x, y)).
#[derive(Debug)]
pub struct BernsteinBasis {
    pub degree: usize,
    /// Multi-indices (i,j,k), i+j+k = degree, in the crate-wide fixed order.
    pub indices: Vec<[usize; 3]>,
    coeffs: Vec<f64>, // multinomial coefficients
    /// Quadrature points recur across triangles (reference coordinates), so
    /// evaluations are memoized by the bit patterns of the barycentrics.
    memo: Mutex<HashMap<[u64; 3], Arc<BasisEval>>>,
}

/// Values/derivatives of every basis function at one point.
#[derive(Debug, Clone)]
pub struct BasisEval {
    pub values: Vec<f64>,
    /// Reference-coordinate gradients (d/dx, d/dy).
    pub grads: Vec<[f64; 2]>,
    /// Reference-coordinate Hessians (d2/dxx, d2/dxy, d2/dyy).
    pub hess: Vec<[f64; 3]>,
}

impl BernsteinBasis {
    pub fn new(degree: usize) -> Self {
        let mut indices = Vec::with_capacity(tri_dim(degree));
        for j in 0..=degree {
            for k in 0..=(degree - j) {
                indices.push([degree - j - k, j, k]);
            }
        }
        let coeffs = indices
            .iter()
            .map(|&[i, j, k]| {
                let mut c = 1.0;
                let mut rem = degree;
                for part in [i, j, k] {
                    for q in 1..=part {
                        c *= rem as f64 / q as f64;
                        rem -= 1;
                    }
                }
                c
            })
            .collect();
        BernsteinBasis { degree, indices, coeffs, memo: Mutex::new(HashMap::new()) }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Evaluates all basis functions with first and second derivatives
    /// (memoized; quadrature points repeat across triangles).
    pub fn eval(&self, bary: [f64; 3]) -> Arc<BasisEval> {
        let key = [bary[0].to_bits(), bary[1].to_bits(), bary[2].to_bits()];
        if let Some(hit) = self.memo.lock().unwrap().get(&key) {
            return hit.clone();
        }
        let fresh = Arc::new(self.eval_uncached(bary));
        let mut memo = self.memo.lock().unwrap();
        // keep the cache bounded; assembly uses a handful of rules
        if memo.len() > 4096 {
            memo.clear();
        }
        memo.insert(key, fresh.clone());
        fresh
    }

    fn eval_uncached(&self, bary: [f64; 3]) -> BasisEval {
        let n = self.len();
        let mut values = vec![0.0; n];
        let mut grads = vec![[0.0; 2]; n];
        let mut hess = vec![[0.0; 3]; n];
        // d lambda / d(x,y): lambda1 -> (-1,-1), lambda2 -> (1,0), lambda3 -> (0,1)
        const DL: [[f64; 2]; 3] = [[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]];
        let pow = |base: f64, e: usize| -> f64 {
            let mut v = 1.0;
            for _ in 0..e {
                v *= base;
            }
            v
        };
        for (b, &[i, j, k]) in self.indices.iter().enumerate() {
            let c = self.coeffs[b];
            let e = [i, j, k];
            values[b] = c * pow(bary[0], i) * pow(bary[1], j) * pow(bary[2], k);
            // first derivatives with respect to each lambda
            let mut dl = [0.0; 3];
            for a in 0..3 {
                if e[a] >= 1 {
                    let mut v = c * e[a] as f64 * pow(bary[a], e[a] - 1);
                    for o in 0..3 {
                        if o != a {
                            v *= pow(bary[o], e[o]);
                        }
                    }
                    dl[a] = v;
                }
            }
            for a in 0..3 {
                grads[b][0] += dl[a] * DL[a][0];
                grads[b][1] += dl[a] * DL[a][1];
            }
            // second derivatives with respect to lambda pairs
            let mut d2l = [[0.0; 3]; 3];
            for a in 0..3 {
                for o in a..3 {
                    let mut exps = e;
                    let mut factor = 1.0;
                    let mut ok = true;
                    for idx in [a, o] {
                        if exps[idx] == 0 {
                            ok = false;
                            break;
                        }
                        factor *= exps[idx] as f64;
                        exps[idx] -= 1;
                    }
                    if ok {
                        let v = c
                            * factor
                            * pow(bary[0], exps[0])
                            * pow(bary[1], exps[1])
                            * pow(bary[2], exps[2]);
                        d2l[a][o] = v;
                        d2l[o][a] = v;
                    }
                }
            }
            for a in 0..3 {
                for o in 0..3 {
                    hess[b][0] += d2l[a][o] * DL[a][0] * DL[o][0];
                    hess[b][1] += d2l[a][o] * DL[a][0] * DL[o][1];
                    hess[b][2] += d2l[a][o] * DL[a][1] * DL[o][1];
                }
            }
        }
        BasisEval { values, grads, hess }
    }

    /// Evaluates the polynomial with the given Bernstein coefficients.
    pub fn eval_coeffs(&self, coeffs: &[f64], bary: [f64; 3]) -> f64 {
        let e = self.eval(bary);
        coeffs.iter().zip(&e.values).map(|(c, v)| c * v).sum()
    }

    /// Domain (lattice) points used for interpolation onto this basis.
    pub fn lattice(&self) -> Vec<[f64; 3]> {
        if self.degree == 0 {
            return vec![[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]];
        }
        self.indices
            .iter()
            .map(|&[i, j, k]| {
                let d = self.degree as f64;
                [i as f64 / d, j as f64 / d, k as f64 / d]
            })
            .collect()
    }
}

/// LU-factorized Bernstein collocation matrix: converts point values at the
/// lattice into Bernstein coefficients.
pub struct BernsteinInterp {
    pub basis: BernsteinBasis,
    lattice: Vec<[f64; 3]>,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl BernsteinInterp {
    pub fn new(degree: usize) -> Self {
        let basis = BernsteinBasis::new(degree);
        let lattice = basis.lattice();
        let n = basis.len();
        let mut m = DMatrix::<f64>::zeros(n, n);
        for (p, &pt) in lattice.iter().enumerate() {
            let ev = basis.eval(pt);
            for b in 0..n {
                m[(p, b)] = ev.values[b];
            }
        }
        let lu = m.lu();
        BernsteinInterp { basis, lattice, lu }
    }

    /// Bernstein coefficients of the polynomial with the given values at
    /// `self.lattice()` points.
    pub fn coeffs_from_values(&self, values: &[f64]) -> Vec<f64> {
        let rhs = nalgebra::DVector::from_column_slice(values);
        let sol = self.lu.solve(&rhs).expect("Bernstein collocation matrix is invertible");
        sol.iter().copied().collect()
    }

    /// Bernstein coefficients of a polynomial given as a point evaluator
    /// (barycentric coordinates -> value).
    pub fn project(&self, f: impl Fn([f64; 3]) -> f64) -> Vec<f64> {
        let values: Vec<f64> = self.lattice.iter().map(|&p| f(p)).collect();
        self.coeffs_from_values(&values)
    }
}
