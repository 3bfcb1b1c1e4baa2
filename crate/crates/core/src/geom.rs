//! Pointwise Riemannian formulas from metric 2-jets.
//!
//! Everything here is a pure function of jets at a single point, in physical
//! coordinates.  Index conventions: `dg[k]` is the k-th partial of the metric,
//! `d2g[m]` packs the second partials in the order (xx, xy, yy); the
//! Christoffel array is `gamma[k][i][j]` = Gamma^k_ij; the covariant
//! derivative of a one-form is `(grad alpha)[i][j] = (nabla_i alpha)_j`.

use crate::{Error, Result};

/// Symmetric 2x2 tensor value.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct Sym2 {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl Sym2 {
    pub const ZERO: Sym2 = Sym2 { xx: 0.0, xy: 0.0, yy: 0.0 };
    pub const IDENTITY: Sym2 = Sym2 { xx: 1.0, xy: 0.0, yy: 1.0 };

    pub fn new(xx: f64, xy: f64, yy: f64) -> Self {
        Sym2 { xx, xy, yy }
    }
    pub fn diag(a: f64, b: f64) -> Self {
        Sym2 { xx: a, xy: 0.0, yy: b }
    }
    pub fn at(&self, i: usize, j: usize) -> f64 {
        match (i, j) {
            (0, 0) => self.xx,
            (1, 1) => self.yy,
            _ => self.xy,
        }
    }
    pub fn det(&self) -> f64 {
        self.xx * self.yy - self.xy * self.xy
    }
    pub fn trace(&self) -> f64 {
        self.xx + self.yy
    }
    pub fn is_spd(&self) -> bool {
        self.xx > 0.0 && self.det() > 0.0
    }
    pub fn inverse(&self) -> Sym2 {
        let d = self.det();
        Sym2 { xx: self.yy / d, xy: -self.xy / d, yy: self.xx / d }
    }
    /// Bilinear form value g(v, w).
    pub fn apply(&self, v: [f64; 2], w: [f64; 2]) -> f64 {
        self.xx * v[0] * w[0] + self.xy * (v[0] * w[1] + v[1] * w[0]) + self.yy * v[1] * w[1]
    }
    /// Matrix-vector product (lowering when `self` is a metric).
    pub fn mul_vec(&self, v: [f64; 2]) -> [f64; 2] {
        [self.xx * v[0] + self.xy * v[1], self.xy * v[0] + self.yy * v[1]]
    }
    pub fn scale(&self, c: f64) -> Sym2 {
        Sym2 { xx: c * self.xx, xy: c * self.xy, yy: c * self.yy }
    }
    pub fn add(&self, o: &Sym2) -> Sym2 {
        Sym2 { xx: self.xx + o.xx, xy: self.xy + o.xy, yy: self.yy + o.yy }
    }
    pub fn sub(&self, o: &Sym2) -> Sym2 {
        Sym2 { xx: self.xx - o.xx, xy: self.xy - o.xy, yy: self.yy - o.yy }
    }
    /// Smaller eigenvalue (both are real for symmetric matrices).
    pub fn min_eigenvalue(&self) -> f64 {
        let half_tr = 0.5 * self.trace();
        let disc = (0.5 * (self.xx - self.yy)).powi(2) + self.xy * self.xy;
        half_tr - disc.sqrt()
    }
}

/// Pointwise 2-jet of a metric: values, first, second partials, all in
/// physical coordinates.  `d2g` packs derivative pairs as (xx, xy, yy).
#[derive(Debug, Clone, Copy)]
pub struct MetricJet {
    pub g: Sym2,
    pub dg: [Sym2; 2],
    pub d2g: [Sym2; 3],
}

/// Pointwise jet of a symmetric (0,2)-tensor direction field.  Second
/// partials are carried along for the integrated-by-parts forms.
#[derive(Debug, Clone, Copy)]
pub struct SymTensorJet {
    pub value: Sym2,
    pub grad: [Sym2; 2],
    pub hess: [Sym2; 3],
}

/// Pointwise 2-jet of a scalar field. `d2` packs (xx, xy, yy).
#[derive(Debug, Clone, Copy, Default)]
pub struct ScalarJet {
    pub v: f64,
    pub d: [f64; 2],
    pub d2: [f64; 3],
}

/// Pointwise 1-jet of a one-form. `d[i][j]` is the i-th partial of the j-th
/// component.
#[derive(Debug, Clone, Copy, Default)]
pub struct OneFormJet {
    pub a: [f64; 2],
    pub d: [[f64; 2]; 2],
}

fn pair_index(i: usize, j: usize) -> usize {
    i + j // (0,0)->0, (0,1)/(1,0)->1, (1,1)->2
}

impl MetricJet {
    pub fn constant(g: Sym2) -> Self {
        MetricJet { g, dg: [Sym2::ZERO; 2], d2g: [Sym2::ZERO; 3] }
    }
    pub fn euclidean() -> Self {
        Self::constant(Sym2::IDENTITY)
    }
    /// Conformal metric e^{2 phi} delta from a 2-jet of phi.
    pub fn conformal(phi: &ScalarJet) -> Self {
        let s = (2.0 * phi.v).exp();
        let g = Sym2::diag(s, s);
        let dg = [g.scale(2.0 * phi.d[0]), g.scale(2.0 * phi.d[1])];
        let mut d2g = [Sym2::ZERO; 3];
        for (m, (i, j)) in [(0usize, 0usize), (0, 1), (1, 1)].iter().enumerate() {
            d2g[m] = g.scale(2.0 * phi.d2[m] + 4.0 * phi.d[*i] * phi.d[*j]);
        }
        MetricJet { g, dg, d2g }
    }
    /// Metric of the graph z = f(x,y): g = delta + df (x) df.  Requires third
    /// partials of f, packed (xxx, xxy, xyy, yyy).
    pub fn graph(f_d: [f64; 2], f_d2: [f64; 3], f_d3: [f64; 4]) -> Self {
        let d2 = |i: usize, j: usize| f_d2[pair_index(i, j)];
        let d3 = |i: usize, j: usize, k: usize| f_d3[i + j + k];
        let entry = |i: usize, j: usize| (i == j) as usize as f64 + f_d[i] * f_d[j];
        let g = Sym2::new(entry(0, 0), entry(0, 1), entry(1, 1));
        let dentry = |k: usize, i: usize, j: usize| d2(i, k) * f_d[j] + f_d[i] * d2(j, k);
        let dg = [
            Sym2::new(dentry(0, 0, 0), dentry(0, 0, 1), dentry(0, 1, 1)),
            Sym2::new(dentry(1, 0, 0), dentry(1, 0, 1), dentry(1, 1, 1)),
        ];
        let d2entry = |l: usize, k: usize, i: usize, j: usize| {
            d3(i, k, l) * f_d[j] + d2(i, k) * d2(j, l) + d2(i, l) * d2(j, k) + f_d[i] * d3(j, k, l)
        };
        let mut d2g = [Sym2::ZERO; 3];
        for (m, (l, k)) in [(0usize, 0usize), (0, 1), (1, 1)].iter().enumerate() {
            d2g[m] = Sym2::new(
                d2entry(*l, *k, 0, 0),
                d2entry(*l, *k, 0, 1),
                d2entry(*l, *k, 1, 1),
            );
        }
        MetricJet { g, dg, d2g }
    }
    pub fn d2(&self, i: usize, j: usize) -> &Sym2 {
        &self.d2g[pair_index(i, j)]
    }
    pub fn check_spd(&self, context: &str) -> Result<()> {
        if self.g.is_spd() {
            Ok(())
        } else {
            Err(Error::NotPositiveDefinite { what: "metric".into(), location: context.into() })
        }
    }
}

impl SymTensorJet {
    pub fn constant(s: Sym2) -> Self {
        SymTensorJet { value: s, grad: [Sym2::ZERO; 2], hess: [Sym2::ZERO; 3] }
    }
    pub fn from_metric(m: &MetricJet) -> Self {
        SymTensorJet { value: m.g, grad: m.dg, hess: m.d2g }
    }
    pub fn d2(&self, i: usize, j: usize) -> &Sym2 {
        &self.hess[pair_index(i, j)]
    }
    pub fn scale(&self, c: f64) -> Self {
        SymTensorJet {
            value: self.value.scale(c),
            grad: [self.grad[0].scale(c), self.grad[1].scale(c)],
            hess: [self.hess[0].scale(c), self.hess[1].scale(c), self.hess[2].scale(c)],
        }
    }
    pub fn sub(&self, o: &SymTensorJet) -> Self {
        SymTensorJet {
            value: self.value.sub(&o.value),
            grad: [self.grad[0].sub(&o.grad[0]), self.grad[1].sub(&o.grad[1])],
            hess: [
                self.hess[0].sub(&o.hess[0]),
                self.hess[1].sub(&o.hess[1]),
                self.hess[2].sub(&o.hess[2]),
            ],
        }
    }
}

/// Christoffel symbols Gamma^k_ij of the Levi-Civita connection,
/// Gamma^k_ij = 1/2 g^{kl} (d_i g_jl + d_j g_il - d_l g_ij).
pub fn christoffel(jet: &MetricJet) -> [[[f64; 2]; 2]; 2] {
    let gi = jet.g.inverse();
    let mut gamma = [[[0.0; 2]; 2]; 2];
    for k in 0..2 {
        for i in 0..2 {
            for j in 0..2 {
                let mut v = 0.0;
                for l in 0..2 {
                    v += gi.at(k, l)
                        * (jet.dg[i].at(j, l) + jet.dg[j].at(i, l) - jet.dg[l].at(i, j));
                }
                gamma[k][i][j] = 0.5 * v;
            }
        }
    }
    gamma
}

/// Partial derivatives of the Christoffel symbols:
/// `out[m][k][i][j]` = d_m Gamma^k_ij.  Needs the metric's second partials.
pub fn christoffel_derivative(jet: &MetricJet) -> [[[[f64; 2]; 2]; 2]; 2] {
    let gi = jet.g.inverse();
    // d_m g^{kl} = -g^{ka} (d_m g_ab) g^{bl}
    let mut dgi = [Sym2::ZERO; 2];
    for m in 0..2 {
        let mut e = [[0.0; 2]; 2];
        for k in 0..2 {
            for l in 0..2 {
                let mut v = 0.0;
                for a in 0..2 {
                    for b in 0..2 {
                        v -= gi.at(k, a) * jet.dg[m].at(a, b) * gi.at(b, l);
                    }
                }
                e[k][l] = v;
            }
        }
        dgi[m] = Sym2::new(e[0][0], e[0][1], e[1][1]);
    }
    let mut out = [[[[0.0; 2]; 2]; 2]; 2];
    for m in 0..2 {
        for k in 0..2 {
            for i in 0..2 {
                for j in 0..2 {
                    let mut v = 0.0;
                    for l in 0..2 {
                        v += dgi[m].at(k, l)
                            * (jet.dg[i].at(j, l) + jet.dg[j].at(i, l) - jet.dg[l].at(i, j));
                        v += gi.at(k, l)
                            * (jet.d2(m, i).at(j, l) + jet.d2(m, j).at(i, l)
                                - jet.d2(m, l).at(i, j));
                    }
                    out[m][k][i][j] = 0.5 * v;
                }
            }
        }
    }
    out
}

/// Gaussian curvature from R_1212 / det g.
pub fn gauss_curvature(jet: &MetricJet) -> Result<f64> {
    jet.check_spd("gauss_curvature")?;
    let gamma = christoffel(jet);
    let dgamma = christoffel_derivative(jet);
    // R^l_{k i j} = d_i Gamma^l_jk - d_j Gamma^l_ik
    //              + Gamma^l_im Gamma^m_jk - Gamma^l_jm Gamma^m_ik,
    // with (k,i,j) = (2,1,2) in 1-based indices.
    let (k, i, j) = (1usize, 0usize, 1usize);
    let mut r = [0.0; 2]; // R^l_{212}
    for (l, rl) in r.iter_mut().enumerate() {
        let mut v = dgamma[i][l][j][k] - dgamma[j][l][i][k];
        for m in 0..2 {
            v += gamma[l][i][m] * gamma[m][j][k] - gamma[l][j][m] * gamma[m][i][k];
        }
        *rl = v;
    }
    let r1212 = jet.g.at(0, 0) * r[0] + jet.g.at(0, 1) * r[1];
    Ok(r1212 / jet.g.det())
}

/// Trace of sigma with respect to g.
pub fn trace_g(g: &Sym2, sigma: &Sym2) -> f64 {
    let gi = g.inverse();
    gi.xx * sigma.xx + 2.0 * gi.xy * sigma.xy + gi.yy * sigma.yy
}

/// S sigma = sigma - g Tr_g sigma (an involution in 2D).
pub fn s_operator(g: &Sym2, sigma: &Sym2) -> Sym2 {
    sigma.sub(&g.scale(trace_g(g, sigma)))
}

/// Full jet of S sigma from the jets of g and sigma.
pub fn s_operator_jet(jet: &MetricJet, sigma: &SymTensorJet) -> SymTensorJet {
    let gi = jet.g.inverse();
    let contract = |gi: &Sym2, s: &Sym2| gi.xx * s.xx + 2.0 * gi.xy * s.xy + gi.yy * s.yy;
    // d_k g^{ab}
    let mut dgi = [Sym2::ZERO; 2];
    for k in 0..2 {
        let mut e = [[0.0; 2]; 2];
        for a in 0..2 {
            for b in 0..2 {
                let mut v = 0.0;
                for c in 0..2 {
                    for d in 0..2 {
                        v -= gi.at(a, c) * jet.dg[k].at(c, d) * gi.at(d, b);
                    }
                }
                e[a][b] = v;
            }
        }
        dgi[k] = Sym2::new(e[0][0], e[0][1], e[1][1]);
    }
    // d_l d_k g^{ab} = -d_l ( g^{ac} dg_k g^{cb} )
    let d2gi_pair = |l: usize, k: usize| -> Sym2 {
        let mut e = [[0.0; 2]; 2];
        for a in 0..2 {
            for b in 0..2 {
                let mut v = 0.0;
                for c in 0..2 {
                    for d in 0..2 {
                        v -= dgi[l].at(a, c) * jet.dg[k].at(c, d) * gi.at(d, b);
                        v -= gi.at(a, c) * jet.d2(l, k).at(c, d) * gi.at(d, b);
                        v -= gi.at(a, c) * jet.dg[k].at(c, d) * dgi[l].at(d, b);
                    }
                }
                e[a][b] = v;
            }
        }
        Sym2::new(e[0][0], e[0][1], e[1][1])
    };

    let t = contract(&gi, &sigma.value);
    let dt = [
        contract(&dgi[0], &sigma.value) + contract(&gi, &sigma.grad[0]),
        contract(&dgi[1], &sigma.value) + contract(&gi, &sigma.grad[1]),
    ];
    let d2t = |l: usize, k: usize| {
        contract(&d2gi_pair(l, k), &sigma.value)
            + contract(&dgi[l], &sigma.grad[k])
            + contract(&dgi[k], &sigma.grad[l])
            + contract(&gi, sigma.d2(l, k))
    };

    let value = sigma.value.sub(&jet.g.scale(t));
    let grad = [
        sigma.grad[0].sub(&jet.dg[0].scale(t)).sub(&jet.g.scale(dt[0])),
        sigma.grad[1].sub(&jet.dg[1].scale(t)).sub(&jet.g.scale(dt[1])),
    ];
    let mut hess = [Sym2::ZERO; 3];
    for (m, (l, k)) in [(0usize, 0usize), (0, 1), (1, 1)].iter().enumerate() {
        hess[m] = sigma
            .d2(*l, *k)
            .sub(&jet.d2(*l, *k).scale(t))
            .sub(&jet.dg[*k].scale(dt[*l]))
            .sub(&jet.dg[*l].scale(dt[*k]))
            .sub(&jet.g.scale(d2t(*l, *k)));
    }
    SymTensorJet { value, grad, hess }
}

/// Riemannian Hessian of a scalar: (Hess v)_ij = d_i d_j v - Gamma^k_ij d_k v.
pub fn hessian(jet: &MetricJet, v: &ScalarJet) -> Sym2 {
    hessian_with(&christoffel(jet), v)
}

/// Hessian with precomputed Christoffel symbols (assembly hot path).
pub fn hessian_with(gamma: &[[[f64; 2]; 2]; 2], v: &ScalarJet) -> Sym2 {
    let entry = |i: usize, j: usize| {
        v.d2[pair_index(i, j)] - gamma[0][i][j] * v.d[0] - gamma[1][i][j] * v.d[1]
    };
    Sym2::new(entry(0, 0), entry(0, 1), entry(1, 1))
}

/// Covariant derivative of a one-form: out[i][j] = (nabla_i alpha)_j.
pub fn cov_deriv_oneform(jet: &MetricJet, alpha: &OneFormJet) -> [[f64; 2]; 2] {
    cov_deriv_oneform_with(&christoffel(jet), alpha)
}

/// One-form covariant derivative with precomputed Christoffel symbols.
pub fn cov_deriv_oneform_with(
    gamma: &[[[f64; 2]; 2]; 2],
    alpha: &OneFormJet,
) -> [[f64; 2]; 2] {
    let mut out = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = alpha.d[i][j] - gamma[0][i][j] * alpha.a[0] - gamma[1][i][j] * alpha.a[1];
        }
    }
    out
}

/// Covariant derivative of a symmetric (0,2)-tensor: out[i] = nabla_i sigma.
pub fn cov_deriv_symtensor(jet: &MetricJet, sigma: &SymTensorJet) -> [Sym2; 2] {
    let gamma = christoffel(jet);
    let mut out = [Sym2::ZERO; 2];
    for (i, o) in out.iter_mut().enumerate() {
        let entry = |j: usize, k: usize| {
            let mut v = sigma.grad[i].at(j, k);
            for l in 0..2 {
                v -= gamma[l][i][j] * sigma.value.at(l, k);
                v -= gamma[l][i][k] * sigma.value.at(j, l);
            }
            v
        };
        *o = Sym2::new(entry(0, 0), entry(0, 1), entry(1, 1));
    }
    out
}

/// div sigma = Tr nabla sigma as a one-form: (div sigma)_k = g^{ij} (nabla_i sigma)_jk.
pub fn div_symtensor(jet: &MetricJet, sigma: &SymTensorJet) -> [f64; 2] {
    let gi = jet.g.inverse();
    let ds = cov_deriv_symtensor(jet, sigma);
    let mut out = [0.0; 2];
    for (k, o) in out.iter_mut().enumerate() {
        let mut v = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                v += gi.at(i, j) * ds[i].at(j, k);
            }
        }
        *o = v;
    }
    out
}

/// One-form div S sigma.
pub fn div_s_sigma(jet: &MetricJet, sigma: &SymTensorJet) -> [f64; 2] {
    let s = s_operator_jet(jet, sigma);
    div_symtensor(jet, &s)
}

/// Scalar div div S sigma.  Needs second partials of both g and sigma.
pub fn div_div_s_sigma(jet: &MetricJet, sigma: &SymTensorJet) -> f64 {
    let p = s_operator_jet(jet, sigma);
    let gi = jet.g.inverse();
    let gamma = christoffel(jet);
    let dgamma = christoffel_derivative(jet);
    let mut dgi = [Sym2::ZERO; 2];
    for m in 0..2 {
        let mut e = [[0.0; 2]; 2];
        for a in 0..2 {
            for b in 0..2 {
                let mut v = 0.0;
                for c in 0..2 {
                    for d in 0..2 {
                        v -= gi.at(a, c) * jet.dg[m].at(c, d) * gi.at(d, b);
                    }
                }
                e[a][b] = v;
            }
        }
        dgi[m] = Sym2::new(e[0][0], e[0][1], e[1][1]);
    }

    // covariant tensor derivative and its coordinate partials
    let nabla = |a: usize, b: usize, j: usize| {
        let mut v = p.grad[a].at(b, j);
        for l in 0..2 {
            v -= gamma[l][a][b] * p.value.at(l, j);
            v -= gamma[l][a][j] * p.value.at(b, l);
        }
        v
    };
    let dnabla = |i: usize, a: usize, b: usize, j: usize| {
        let mut v = p.d2(i, a).at(b, j);
        for l in 0..2 {
            v -= dgamma[i][l][a][b] * p.value.at(l, j) + gamma[l][a][b] * p.grad[i].at(l, j);
            v -= dgamma[i][l][a][j] * p.value.at(b, l) + gamma[l][a][j] * p.grad[i].at(b, l);
        }
        v
    };

    // beta_j = (div S sigma)_j and its partials
    let beta = |j: usize| {
        let mut v = 0.0;
        for a in 0..2 {
            for b in 0..2 {
                v += gi.at(a, b) * nabla(a, b, j);
            }
        }
        v
    };
    let dbeta = |i: usize, j: usize| {
        let mut v = 0.0;
        for a in 0..2 {
            for b in 0..2 {
                v += dgi[i].at(a, b) * nabla(a, b, j) + gi.at(a, b) * dnabla(i, a, b, j);
            }
        }
        v
    };

    let mut out = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            let mut v = dbeta(i, j);
            for k in 0..2 {
                v -= gamma[k][i][j] * beta(k);
            }
            out += gi.at(i, j) * v;
        }
    }
    out
}

/// g-unit tangent and outward g-unit normal on a straight edge.
///
/// `tangent_ccw` is the (non-unit) Euclidean direction of the CCW traversal
/// of the triangle boundary along this edge; the returned `(n, tau)` frame is
/// right-handed and `n` points outward.
pub fn edge_frame(g: &Sym2, tangent_ccw: [f64; 2]) -> Result<([f64; 2], [f64; 2])> {
    let t = tangent_ccw;
    let norm2 = g.apply(t, t);
    if !(norm2 > 0.0) || !g.is_spd() {
        return Err(Error::Degenerate("edge_frame needs an SPD metric and nonzero tangent".into()));
    }
    let tau = [t[0] / norm2.sqrt(), t[1] / norm2.sqrt()];
    // n^i = sqrt(det g) g^{ik} eps_kj tau^j: outward for CCW traversal.
    let w = [tau[1], -tau[0]];
    let gi = g.inverse();
    let s = g.det().sqrt();
    let n = [s * (gi.xx * w[0] + gi.xy * w[1]), s * (gi.xy * w[0] + gi.yy * w[1])];
    Ok((tau, n))
}

/// Geodesic curvature of a straight edge: k = -g(n, nabla_tau tau), where the
/// unit tangent varies along the edge through g only.
pub fn geodesic_curvature(jet: &MetricJet, tangent_ccw: [f64; 2]) -> Result<f64> {
    let (tau, n) = edge_frame(&jet.g, tangent_ccw)?;
    let t = tangent_ccw;
    let q = jet.g.apply(t, t);
    // d/du of g(t,t) along the edge (u = Euclidean edge parameter)
    let dq = t[0] * jet.dg[0].apply(t, t) + t[1] * jet.dg[1].apply(t, t);
    // d tau/du = -t dq / (2 q^{3/2}); nabla_tau tau = (1/|t|_g) dtau/du + Gamma(tau,tau)
    let dtau_du = [-t[0] * dq / (2.0 * q.powf(1.5)), -t[1] * dq / (2.0 * q.powf(1.5))];
    let gamma = christoffel(jet);
    let mut cov = [0.0; 2];
    for (k, c) in cov.iter_mut().enumerate() {
        let mut v = dtau_du[k] / q.sqrt();
        for i in 0..2 {
            for j in 0..2 {
                v += gamma[k][i][j] * tau[i] * tau[j];
            }
        }
        *c = v;
    }
    Ok(-jet.g.apply(n, cov))
}

/// Euclidean-parameter derivative of sigma(n, tau) along a straight edge,
/// where (n, tau) is the g-frame of [`edge_frame`] and both vary through g.
/// Divide by |t|_g for the g-arclength derivative.
pub fn d_sigma_n_tau_du(jet: &MetricJet, sigma: &SymTensorJet, tangent_ccw: [f64; 2]) -> f64 {
    let t = tangent_ccw;
    let (tau, n) = edge_frame(&jet.g, t).expect("valid frame");
    let q = jet.g.apply(t, t);
    let dq = t[0] * jet.dg[0].apply(t, t) + t[1] * jet.dg[1].apply(t, t);
    let dtau = [-t[0] * dq / (2.0 * q.powf(1.5)), -t[1] * dq / (2.0 * q.powf(1.5))];
    // dg/du and its friends
    let dg_du = Sym2::new(
        t[0] * jet.dg[0].xx + t[1] * jet.dg[1].xx,
        t[0] * jet.dg[0].xy + t[1] * jet.dg[1].xy,
        t[0] * jet.dg[0].yy + t[1] * jet.dg[1].yy,
    );
    let gi = jet.g.inverse();
    // d(g^{-1})/du = -g^{-1} (dg/du) g^{-1}
    let m = {
        let mut e = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                let mut v = 0.0;
                for k in 0..2 {
                    for l in 0..2 {
                        v -= gi.at(i, k) * dg_du.at(k, l) * gi.at(l, j);
                    }
                }
                e[i][j] = v;
            }
        }
        Sym2::new(e[0][0], e[0][1], e[1][1])
    };
    let det = jet.g.det();
    let ddet_du = jet.g.xx * dg_du.yy + dg_du.xx * jet.g.yy - 2.0 * jet.g.xy * dg_du.xy;
    let s = det.sqrt();
    let ds_du = 0.5 * ddet_du / s;
    // n = s * g^{-1} w with w = (tau_y, -tau_x)
    let w = [tau[1], -tau[0]];
    let dw = [dtau[1], -dtau[0]];
    let giw = gi.mul_vec(w);
    let dn = [
        ds_du * giw[0] + s * (m.mul_vec(w)[0] + gi.mul_vec(dw)[0]),
        ds_du * giw[1] + s * (m.mul_vec(w)[1] + gi.mul_vec(dw)[1]),
    ];
    // d/du sigma(n,tau) = (t . grad sigma)(n,tau) + sigma(dn,tau) + sigma(n,dtau)
    let dsig = Sym2::new(
        t[0] * sigma.grad[0].xx + t[1] * sigma.grad[1].xx,
        t[0] * sigma.grad[0].xy + t[1] * sigma.grad[1].xy,
        t[0] * sigma.grad[0].yy + t[1] * sigma.grad[1].yy,
    );
    dsig.apply(n, tau) + sigma.value.apply(dn, tau) + sigma.value.apply(n, dtau)
}

/// Interior angle between edge directions t1, t2 measured by g, in (0, pi).
pub fn interior_angle(g: &Sym2, t1: [f64; 2], t2: [f64; 2]) -> Result<f64> {
    let cross = t1[0] * t2[1] - t1[1] * t2[0];
    let scale = (t1[0].hypot(t1[1])) * (t2[0].hypot(t2[1]));
    if cross.abs() <= 1e-14 * scale {
        return Err(Error::Degenerate("interior_angle: parallel directions".into()));
    }
    let c = g.apply(t1, t2) / (g.apply(t1, t1) * g.apply(t2, t2)).sqrt();
    if c.abs() > 1.0 + 1e-12 {
        return Err(Error::Internal(format!("cosine {c} far outside [-1,1]")));
    }
    Ok(c.clamp(-1.0, 1.0).acos())
}

/// Hodge star of a one-form with respect to g ((star beta)(tau) = beta(n) for
/// a right-handed orthonormal (n, tau); star dx = dy for the Euclidean metric).
pub fn hodge_star_oneform(g: &Sym2, beta: [f64; 2]) -> [f64; 2] {
    let gi = g.inverse();
    let u = gi.mul_vec(beta);
    let s = g.det().sqrt();
    [-s * u[1], s * u[0]]
}

/// Lower an index: v^i -> g_ij v^j.
pub fn flat(g: &Sym2, v: [f64; 2]) -> [f64; 2] {
    g.mul_vec(v)
}
