//! Regge finite elements: piecewise polynomial symmetric (0,2)-tensor fields
//! with single-valued tangential-tangential components across edges.
//!
//! Degrees of freedom are global: per edge, moments of sigma(t,t) against
//! shifted Legendre polynomials along the globally oriented unit tangent t
//! (r+1 of them), and per triangle, moments against a monomial basis of
//! symmetric tensor polynomials of degree r-1.  tt-continuity holds by
//! construction because the edge trace of sigma(t,t), a degree-r polynomial
//! on the edge, is determined by the shared edge moments alone.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::fields::{MetricGiver, TensorField, TensorFieldC2};
use crate::geom::{MetricJet, Sym2, SymTensorJet};
use crate::mesh::Mesh;
use crate::polyquad::{edge_rule, shifted_legendre, tri_rule, BernsteinBasis};
use crate::{Error, Result};

/// Frobenius pairing basis for symmetric 2x2 tensors.
const E_BASIS: [Sym2; 3] = [
    Sym2 { xx: 1.0, xy: 0.0, yy: 0.0 },
    Sym2 { xx: 0.0, xy: 1.0, yy: 0.0 },
    Sym2 { xx: 0.0, xy: 0.0, yy: 1.0 },
];

fn frobenius(a: &Sym2, b: &Sym2) -> f64 {
    a.xx * b.xx + 2.0 * a.xy * b.xy + a.yy * b.yy
}

/// Degree-of-freedom layout and per-triangle nodal bases for Sigma_h^r.
pub struct ReggeSpace {
    pub mesh: Arc<Mesh>,
    pub degree: usize,
    bernstein: BernsteinBasis,
    /// Per triangle: nodal coefficients, `local[t][dof]` = 3 Bernstein blocks.
    local: Vec<Vec<[Vec<f64>; 3]>>,
    /// Interior monomial weight exponents (degree <= r-1).
    int_exps: Vec<(usize, usize)>,
}

impl ReggeSpace {
    pub fn edge_dofs_per_edge(&self) -> usize {
        self.degree + 1
    }
    pub fn tri_dofs_per_tri(&self) -> usize {
        3 * self.degree * (self.degree + 1) / 2
    }
    pub fn ndof(&self) -> usize {
        self.mesh.n_edges() * self.edge_dofs_per_edge()
            + self.mesh.n_triangles() * self.tri_dofs_per_tri()
    }
    pub fn edge_dof(&self, e: usize, m: usize) -> usize {
        e * self.edge_dofs_per_edge() + m
    }
    pub fn tri_dof(&self, t: usize, m: usize) -> usize {
        self.mesh.n_edges() * self.edge_dofs_per_edge() + t * self.tri_dofs_per_tri() + m
    }

    /// Local DOF ids of triangle `t` in the order: 3 edges x (r+1) moments,
    /// then interior moments.
    pub fn local_to_global(&self, t: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(3 * (self.degree + 1) + self.tri_dofs_per_tri());
        for k in 0..3 {
            let (e, _) = self.mesh.tri_edge(t, k);
            for m in 0..=self.degree {
                out.push(self.edge_dof(e, m));
            }
        }
        for m in 0..self.tri_dofs_per_tri() {
            out.push(self.tri_dof(t, m));
        }
        out
    }

    pub fn new(mesh: Arc<Mesh>, degree: usize) -> Result<Self> {
        if degree > 3 {
            return Err(Error::Mismatch(format!("Regge degree {degree} unsupported (0..=3)")));
        }
        let bernstein = BernsteinBasis::new(degree);
        let int_exps = if degree > 0 {
            crate::polyquad::monomial_exponents(degree - 1)
        } else {
            Vec::new()
        };
        let mut space = ReggeSpace { mesh, degree, bernstein, local: Vec::new(), int_exps };
        space.build_local_bases()?;
        Ok(space)
    }

    /// Applies every local DOF functional of triangle `t` to a polynomial
    /// tensor given by its three Bernstein blocks.
    fn apply_local_dofs(&self, t: usize, blocks: &[Vec<f64>; 3]) -> Vec<f64> {
        let r = self.degree;
        let erule = edge_rule(2 * r).expect("supported degree");
        let trule = tri_rule(2 * r).expect("supported degree");
        let mesh = &self.mesh;
        let eval = |bary: [f64; 3]| -> Sym2 {
            let ev = self.bernstein.eval(bary);
            let comp =
                |c: usize| -> f64 { blocks[c].iter().zip(&ev.values).map(|(a, b)| a * b).sum() };
            Sym2::new(comp(0), comp(1), comp(2))
        };
        let mut out = Vec::new();
        for k in 0..3 {
            let (e, fwd) = mesh.tri_edge(t, k);
            let evec = mesh.edge_vec(e);
            let len = mesh.edge_len(e);
            let that = [evec[0] / len, evec[1] / len];
            let mut moments = vec![0.0; r + 1];
            for (q, &s) in erule.points.iter().enumerate() {
                // convert global edge parameter to CCW-local parameter
                let u = if fwd { s } else { 1.0 - s };
                let bary = mesh.ccw_edge_bary(t, k, u);
                let val = eval(bary).apply(that, that);
                let leg = shifted_legendre(r, s);
                for (m, lm) in leg.iter().enumerate() {
                    moments[m] += erule.weights[q] * val * lm;
                }
            }
            out.extend(moments);
        }
        if r > 0 {
            let centroid = mesh.bary_to_phys(t, [1.0 / 3.0; 3]);
            let h = mesh.tri_diam(t);
            for &(a, b) in &self.int_exps {
                for ec in &E_BASIS {
                    let mut v = 0.0;
                    for (q, &bary) in trule.points.iter().enumerate() {
                        let x = mesh.bary_to_phys(t, bary);
                        let qm = ((x[0] - centroid[0]) / h).powi(a as i32)
                            * ((x[1] - centroid[1]) / h).powi(b as i32);
                        v += trule.weights[q] * frobenius(&eval(bary), ec) * qm;
                    }
                    out.push(v);
                }
            }
        }
        out
    }

    fn build_local_bases(&mut self) -> Result<()> {
        let nb = self.bernstein.len();
        let nspan = 3 * nb;
        let mesh = self.mesh.clone();
        let mut local = Vec::with_capacity(mesh.n_triangles());
        for t in 0..mesh.n_triangles() {
            let mut vand = DMatrix::<f64>::zeros(nspan, nspan);
            for s in 0..nspan {
                let (c, b) = (s / nb, s % nb);
                let mut blocks = [vec![0.0; nb], vec![0.0; nb], vec![0.0; nb]];
                blocks[c][b] = 1.0;
                let dofs = self.apply_local_dofs(t, &blocks);
                debug_assert_eq!(dofs.len(), nspan);
                for (d, v) in dofs.iter().enumerate() {
                    vand[(d, s)] = *v;
                }
            }
            let inv = vand.try_inverse().ok_or_else(|| {
                Error::Internal(format!("singular Regge DOF system on triangle {t}"))
            })?;
            let mut tri_basis = Vec::with_capacity(nspan);
            for dof in 0..nspan {
                let mut blocks = [vec![0.0; nb], vec![0.0; nb], vec![0.0; nb]];
                for s in 0..nspan {
                    blocks[s / nb][s % nb] = inv[(s, dof)];
                }
                tri_basis.push(blocks);
            }
            local.push(tri_basis);
        }
        self.local = local;
        Ok(())
    }

    /// Nodal basis blocks of triangle `t` (same order as [`Self::local_to_global`]).
    pub fn nodal_blocks(&self, t: usize) -> &[[Vec<f64>; 3]] {
        &self.local[t]
    }

    pub fn bernstein(&self) -> &BernsteinBasis {
        &self.bernstein
    }

    /// Canonical interpolant of a tensor field onto Sigma_h^r relative to the
    /// piecewise constant reference metric `gbar` (None = Euclidean).
    ///
    /// For a piecewise constant SPD reference metric, the edge measure and
    /// the tt-component scale by edge-wise constants, so the weighted edge
    /// moment conditions coincide with Euclidean ones; the interior
    /// conditions use the weighted pairing explicitly.
    pub fn interp(
        self: &Arc<Self>,
        field: &dyn TensorField,
        gbar: Option<&ReggeField>,
    ) -> Result<ReggeField> {
        if let Some(gb) = gbar {
            if gb.space.degree != 0 {
                return Err(Error::Mismatch("reference metric must be piecewise constant".into()));
            }
        }
        let r = self.degree;
        let mesh = &self.mesh;
        let erule = edge_rule((2 * r + 10).min(crate::polyquad::MAX_QUAD_DEGREE)).unwrap();
        let trule = tri_rule((2 * r + 10).min(crate::polyquad::MAX_QUAD_DEGREE)).unwrap();
        let mut dofs = vec![0.0; self.ndof()];

        // Edge pass: tt-moments along the global unit tangent; the reference
        // metric's tt-continuity is asserted on interior edges.
        for e in 0..mesh.n_edges() {
            let edge = mesh.edge(e);
            let (t0, _) = edge.sides[0];
            if let Some(gb) = gbar {
                if edge.nsides == 2 {
                    let evec = mesh.edge_vec(e);
                    let x = midpoint(mesh, e);
                    let t1 = edge.sides[1].0;
                    let g0 = gb.value(t0, clamp_bary(mesh.phys_to_bary(t0, x))).apply(evec, evec);
                    let g1 = gb.value(t1, clamp_bary(mesh.phys_to_bary(t1, x))).apply(evec, evec);
                    if (g0 - g1).abs() > 1e-10 * g0.abs().max(1.0) {
                        return Err(Error::Mismatch("reference metric lacks tt-continuity".into()));
                    }
                }
            }
            let evec = mesh.edge_vec(e);
            let len = mesh.edge_len(e);
            let that = [evec[0] / len, evec[1] / len];
            let start = mesh.vertex(edge.v[0]);
            for (q, &s) in erule.points.iter().enumerate() {
                let x = [start[0] + s * evec[0], start[1] + s * evec[1]];
                let bary = clamp_bary(mesh.phys_to_bary(t0, x));
                let val = field.value(t0, bary).apply(that, that);
                let leg = shifted_legendre(r, s);
                for (m, lm) in leg.iter().enumerate() {
                    dofs[self.edge_dof(e, m)] += erule.weights[q] * val * lm;
                }
            }
        }

        // Interior pass: solve the weighted moment conditions for the
        // interior DOFs given the edge DOFs.
        if r > 0 {
            let nint = self.tri_dofs_per_tri();
            let nedge = 3 * (r + 1);
            for t in 0..mesh.n_triangles() {
                let gb = match gbar {
                    Some(gb) => gb.value(t, [1.0 / 3.0; 3]),
                    None => Sym2::IDENTITY,
                };
                if !gb.is_spd() {
                    return Err(Error::NotPositiveDefinite {
                        what: "reference metric".into(),
                        location: format!("triangle {t}"),
                    });
                }
                let gbi = gb.inverse();
                let vol = gb.det().sqrt();
                let pair = |s: &Sym2, rho: &Sym2| -> f64 {
                    let mut v = 0.0;
                    for i in 0..2 {
                        for j in 0..2 {
                            for k in 0..2 {
                                for l in 0..2 {
                                    v += gbi.at(i, k) * gbi.at(j, l) * s.at(i, j) * rho.at(k, l);
                                }
                            }
                        }
                    }
                    v * vol
                };
                let centroid = mesh.bary_to_phys(t, [1.0 / 3.0; 3]);
                let h = mesh.tri_diam(t);
                let weight = |m: usize, x: [f64; 2]| -> Sym2 {
                    let (a, b) = self.int_exps[m / 3];
                    let q = ((x[0] - centroid[0]) / h).powi(a as i32)
                        * ((x[1] - centroid[1]) / h).powi(b as i32);
                    E_BASIS[m % 3].scale(q)
                };
                let l2g = self.local_to_global(t);
                let mut a = DMatrix::<f64>::zeros(nint, nint);
                let mut rhs = vec![0.0; nint];
                for (q, &bary) in trule.points.iter().enumerate() {
                    let x = mesh.bary_to_phys(t, bary);
                    let wq = trule.weights[q];
                    let ev = self.bernstein.eval(bary);
                    let basis_val = |ld: usize| -> Sym2 {
                        let blocks = &self.local[t][ld];
                        let comp = |c: usize| -> f64 {
                            blocks[c].iter().zip(&ev.values).map(|(a, b)| a * b).sum()
                        };
                        Sym2::new(comp(0), comp(1), comp(2))
                    };
                    let mut edge_part = Sym2::ZERO;
                    for ld in 0..nedge {
                        edge_part = edge_part.add(&basis_val(ld).scale(dofs[l2g[ld]]));
                    }
                    let resid = field.value(t, bary).sub(&edge_part);
                    for m in 0..nint {
                        let rho = weight(m, x);
                        rhs[m] += wq * pair(&resid, &rho);
                        for n in 0..nint {
                            a[(m, n)] += wq * pair(&basis_val(nedge + n), &rho);
                        }
                    }
                }
                let sol = a
                    .lu()
                    .solve(&nalgebra::DVector::from_column_slice(&rhs))
                    .ok_or_else(|| Error::Internal(format!("singular interior system on {t}")))?;
                for m in 0..nint {
                    dofs[self.tri_dof(t, m)] = sol[m];
                }
            }
        }
        Ok(ReggeField::from_dofs(self.clone(), dofs))
    }

    /// The Euclidean metric as an element of Sigma_h^r (exact).
    pub fn euclidean(self: &Arc<Self>) -> ReggeField {
        let mesh = self.mesh.clone();
        let field = crate::fields::FnTensor {
            mesh,
            f: |_x: [f64; 2]| SymTensorJet::constant(Sym2::IDENTITY),
        };
        self.interp(&field, None).expect("constant interpolation succeeds")
    }
}

fn midpoint(mesh: &Mesh, e: usize) -> [f64; 2] {
    let [a, b] = mesh.edge(e).v;
    let (p, q) = (mesh.vertex(a), mesh.vertex(b));
    [0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])]
}

/// Guards round-off when an edge quadrature point maps slightly outside.
pub(crate) fn clamp_bary(b: [f64; 3]) -> [f64; 3] {
    [b[0].clamp(0.0, 1.0), b[1].clamp(0.0, 1.0), b[2].clamp(0.0, 1.0)]
}

/// A member of Sigma_h^r: global DOF vector plus cached per-triangle
/// Bernstein blocks for the three components.
#[derive(Clone)]
pub struct ReggeField {
    pub space: Arc<ReggeSpace>,
    pub dofs: Vec<f64>,
    blocks: Vec<[Vec<f64>; 3]>,
}

#[derive(Serialize, Deserialize)]
struct ReggeFieldJson {
    degree: usize,
    edge_moments: Vec<Vec<f64>>,
    tri_interior: Vec<Vec<f64>>,
}

impl ReggeField {
    pub fn from_dofs(space: Arc<ReggeSpace>, dofs: Vec<f64>) -> Self {
        assert_eq!(dofs.len(), space.ndof());
        let nb = space.bernstein.len();
        let mut blocks = Vec::with_capacity(space.mesh.n_triangles());
        for t in 0..space.mesh.n_triangles() {
            let l2g = space.local_to_global(t);
            let mut tri = [vec![0.0; nb], vec![0.0; nb], vec![0.0; nb]];
            for (ld, &gd) in l2g.iter().enumerate() {
                let w = dofs[gd];
                if w != 0.0 {
                    let nodal = &space.local[t][ld];
                    for c in 0..3 {
                        for b in 0..nb {
                            tri[c][b] += w * nodal[c][b];
                        }
                    }
                }
            }
            blocks.push(tri);
        }
        ReggeField { space, dofs, blocks }
    }

    pub fn degree(&self) -> usize {
        self.space.degree
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.space.mesh
    }

    /// Linear combination a*self + b*other (same space).
    pub fn lincomb(&self, a: f64, other: &ReggeField, b: f64) -> ReggeField {
        assert!(Arc::ptr_eq(&self.space, &other.space), "fields from different spaces");
        let dofs =
            self.dofs.iter().zip(&other.dofs).map(|(x, y)| a * x + b * y).collect();
        ReggeField::from_dofs(self.space.clone(), dofs)
    }

    /// Full jet (value, gradient, Hessian) in physical coordinates; no SPD check.
    pub fn tensor_jet(&self, tri: usize, bary: [f64; 3]) -> SymTensorJet {
        let ev = self.space.bernstein.eval(bary);
        let jac = self.space.mesh.jacobian(tri);
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        // inverse-transpose of the Jacobian
        let jit = [[jac[1][1] / det, -jac[1][0] / det], [-jac[0][1] / det, jac[0][0] / det]];
        let blocks = &self.blocks[tri];
        let mut comp_val = [0.0; 3];
        let mut comp_grad = [[0.0; 2]; 3];
        let mut comp_hess = [[0.0; 3]; 3];
        for (c, block) in blocks.iter().enumerate() {
            let mut gr = [0.0; 2];
            let mut hr = [0.0; 3];
            for (b, &w) in block.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                comp_val[c] += w * ev.values[b];
                gr[0] += w * ev.grads[b][0];
                gr[1] += w * ev.grads[b][1];
                hr[0] += w * ev.hess[b][0];
                hr[1] += w * ev.hess[b][1];
                hr[2] += w * ev.hess[b][2];
            }
            for i in 0..2 {
                comp_grad[c][i] = jit[i][0] * gr[0] + jit[i][1] * gr[1];
            }
            let href = [[hr[0], hr[1]], [hr[1], hr[2]]];
            let mut hphys = [[0.0; 2]; 2];
            for i in 0..2 {
                for j in 0..2 {
                    let mut v = 0.0;
                    for a in 0..2 {
                        for b2 in 0..2 {
                            v += jit[i][a] * href[a][b2] * jit[j][b2];
                        }
                    }
                    hphys[i][j] = v;
                }
            }
            comp_hess[c] = [hphys[0][0], hphys[0][1], hphys[1][1]];
        }
        SymTensorJet {
            value: Sym2::new(comp_val[0], comp_val[1], comp_val[2]),
            grad: [
                Sym2::new(comp_grad[0][0], comp_grad[1][0], comp_grad[2][0]),
                Sym2::new(comp_grad[0][1], comp_grad[1][1], comp_grad[2][1]),
            ],
            hess: [
                Sym2::new(comp_hess[0][0], comp_hess[1][0], comp_hess[2][0]),
                Sym2::new(comp_hess[0][1], comp_hess[1][1], comp_hess[2][1]),
                Sym2::new(comp_hess[0][2], comp_hess[1][2], comp_hess[2][2]),
            ],
        }
    }

    /// SPD check at the quadrature points of a degree-`density` rule on each
    /// triangle and edge; reports the first failure.
    pub fn is_metric(&self, density: usize) -> MetricReport {
        let mesh = &self.space.mesh;
        let trule = tri_rule(density.min(crate::polyquad::MAX_QUAD_DEGREE)).unwrap();
        let erule = edge_rule(density.min(crate::polyquad::MAX_QUAD_DEGREE)).unwrap();
        for t in 0..mesh.n_triangles() {
            for &bary in &trule.points {
                if !self.value(t, bary).is_spd() {
                    return MetricReport {
                        positive_definite: false,
                        failure: Some(format!("triangle {t} at {bary:?}")),
                    };
                }
            }
            for k in 0..3 {
                for &s in &erule.points {
                    let bary = mesh.ccw_edge_bary(t, k, s);
                    if !self.value(t, bary).is_spd() {
                        return MetricReport {
                            positive_definite: false,
                            failure: Some(format!("triangle {t}, edge {k} at s={s}")),
                        };
                    }
                }
            }
        }
        MetricReport { positive_definite: true, failure: None }
    }

    pub fn to_json(&self) -> String {
        let r = self.space.degree;
        let ne = self.space.mesh.n_edges();
        let edge_moments: Vec<Vec<f64>> = (0..ne)
            .map(|e| (0..=r).map(|m| self.dofs[self.space.edge_dof(e, m)]).collect())
            .collect();
        let tri_interior: Vec<Vec<f64>> = (0..self.space.mesh.n_triangles())
            .map(|t| {
                (0..self.space.tri_dofs_per_tri())
                    .map(|m| self.dofs[self.space.tri_dof(t, m)])
                    .collect()
            })
            .collect();
        serde_json::to_string_pretty(&ReggeFieldJson { degree: r, edge_moments, tri_interior })
            .expect("serializes")
    }

    pub fn from_json(space: Arc<ReggeSpace>, s: &str) -> Result<Self> {
        let raw: ReggeFieldJson =
            serde_json::from_str(s).map_err(|e| Error::Config(format!("bad field JSON: {e}")))?;
        if raw.degree != space.degree {
            return Err(Error::Mismatch("field degree does not match space".into()));
        }
        let mut dofs = vec![0.0; space.ndof()];
        for (e, moments) in raw.edge_moments.iter().enumerate() {
            for (m, &v) in moments.iter().enumerate() {
                dofs[space.edge_dof(e, m)] = v;
            }
        }
        for (t, cs) in raw.tri_interior.iter().enumerate() {
            for (m, &v) in cs.iter().enumerate() {
                dofs[space.tri_dof(t, m)] = v;
            }
        }
        Ok(ReggeField::from_dofs(space, dofs))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricReport {
    pub positive_definite: bool,
    pub failure: Option<String>,
}

impl TensorField for ReggeField {
    fn value(&self, tri: usize, bary: [f64; 3]) -> Sym2 {
        let ev = self.space.bernstein.eval(bary);
        let blocks = &self.blocks[tri];
        let comp = |c: usize| -> f64 { blocks[c].iter().zip(&ev.values).map(|(a, b)| a * b).sum() };
        Sym2::new(comp(0), comp(1), comp(2))
    }
}

impl TensorFieldC2 for ReggeField {
    fn jet(&self, tri: usize, bary: [f64; 3]) -> SymTensorJet {
        self.tensor_jet(tri, bary)
    }
}

impl MetricGiver for ReggeField {
    fn metric_jet(&self, tri: usize, bary: [f64; 3]) -> Result<MetricJet> {
        let jet = self.tensor_jet(tri, bary);
        if !jet.value.is_spd() {
            return Err(Error::NotPositiveDefinite {
                what: "Regge field".into(),
                location: format!("triangle {tri} at {bary:?}"),
            });
        }
        Ok(MetricJet { g: jet.value, dg: jet.grad, d2g: jet.hess })
    }
}
