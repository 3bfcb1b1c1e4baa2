//! Finite element spaces on triangulations of planar polygonal domains:
//! Lagrange scalars V_h^k, first-kind edge one-forms W_h^k (the 2D Nedelec
//! family, trimmed polynomial degree k), discontinuous two-forms X_h^r with a
//! scalar proxy (F = f dx^dy), and Lagrange vector fields U_h^k.
//!
//! Degrees of freedom are the canonical moment functionals: vertex values,
//! edge moments of the trace / tangential component against shifted Legendre
//! polynomials along the globally oriented edge, and interior moments against
//! centered monomial weights.  Nodal bases are built per triangle by
//! inverting the DOF matrix over a spanning set whose components are held as
//! Bernstein coefficient blocks.
//!
//! Essential constraints are imposed by DOF elimination: zero trace on the
//! domain boundary for scalars, zero tangential trace for one-forms.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::fields::{
    MetricGiver, OneFormField, OneFormFieldC1, ScalarField, ScalarFieldC2, TensorField,
    VectorField, VectorFieldC1, VectorJet,
};
use crate::geom::{MetricJet, OneFormJet, ScalarJet, Sym2};
use crate::linalg::{SparseMatrix, SparseSpd, Triplets};
use crate::mesh::Mesh;
use crate::polyquad::{
    edge_rule, monomial_exponents, shifted_legendre, tri_rule, BernsteinBasis,
    BernsteinInterp,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpaceKind {
    LagrangeScalar,
    EdgeOneForm,
    DgTwoForm,
    LagrangeVector,
}

/// Whether the kind's essential constraints are imposed
/// (zero trace for scalars, zero tangential trace for one-forms).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BcMode {
    Essential,
    Natural,
}

#[derive(Debug, Clone, Copy)]
enum LocalDof {
    VertexValue { corner: usize, comp: usize },
    /// Moment of the `comp` trace against shifted Legendre m on side `side`.
    EdgeMoment { side: usize, m: usize, comp: usize },
    /// Moment of the tangential component against shifted Legendre m.
    EdgeTangMoment { side: usize, m: usize },
    /// Interior moment: index into the space's weight list.
    TriMoment { w: usize },
}

/// Interior moment weight: centered-scaled monomial exponents + component.
#[derive(Debug, Clone, Copy)]
struct TriWeight {
    exps: (usize, usize),
    comp: usize,
}

pub struct FeSpace {
    pub mesh: Arc<Mesh>,
    pub kind: SpaceKind,
    /// Polynomial degree of the components (k for Lagrange/edge, r for DG).
    pub degree: usize,
    bc: BcMode,
    ncomp: usize,
    tri_weights: Vec<TriWeight>,
    local_dofs: Vec<LocalDof>,
    bernstein: BernsteinBasis,
    interp_tbl: BernsteinInterp,
    /// Per triangle, per local dof: component Bernstein blocks.
    local: Vec<Vec<Vec<Vec<f64>>>>,
    l2g: Vec<Vec<usize>>,
    constrained: Vec<bool>,
    free_of_full: Vec<Option<usize>>,
    full_of_free: Vec<usize>,
}

impl FeSpace {
    /// Lagrange space of degree k >= 1 (a subspace of V when `Essential`).
    pub fn lagrange(mesh: Arc<Mesh>, k: usize, bc: BcMode) -> Result<Arc<Self>> {
        if k < 1 {
            return Err(Error::Mismatch("Lagrange degree must be >= 1".into()));
        }
        Self::build(mesh, SpaceKind::LagrangeScalar, k, bc)
    }
    /// Trimmed (first-kind) edge element space of degree k >= 1.
    pub fn edge_oneform(mesh: Arc<Mesh>, k: usize, bc: BcMode) -> Result<Arc<Self>> {
        if k < 1 {
            return Err(Error::Mismatch("edge element degree must be >= 1".into()));
        }
        Self::build(mesh, SpaceKind::EdgeOneForm, k, bc)
    }
    /// Discontinuous two-form space of degree r >= 0 (scalar proxy storage).
    pub fn dg_twoform(mesh: Arc<Mesh>, r: usize) -> Result<Arc<Self>> {
        Self::build(mesh, SpaceKind::DgTwoForm, r, BcMode::Natural)
    }
    /// Continuous Lagrange vector fields of degree k >= 1.
    pub fn lagrange_vector(mesh: Arc<Mesh>, k: usize) -> Result<Arc<Self>> {
        if k < 1 {
            return Err(Error::Mismatch("vector Lagrange degree must be >= 1".into()));
        }
        Self::build(mesh, SpaceKind::LagrangeVector, k, BcMode::Natural)
    }

    fn build(mesh: Arc<Mesh>, kind: SpaceKind, degree: usize, bc: BcMode) -> Result<Arc<Self>> {
        if !mesh.edge_classes_agree() {
            return Err(Error::Mesh(
                "mesh has a 2-triangle edge with both endpoints on the boundary; \
                 finite element spaces require the interior-edge classifications to agree"
                    .into(),
            ));
        }
        let k = degree;
        let (ncomp, vert_count, edge_moments, tri_weights): (usize, usize, usize, Vec<TriWeight>) =
            match kind {
                SpaceKind::LagrangeScalar => {
                    let tw = if k >= 3 {
                        monomial_exponents(k - 3)
                            .into_iter()
                            .map(|exps| TriWeight { exps, comp: 0 })
                            .collect()
                    } else {
                        Vec::new()
                    };
                    (1, 1, k.saturating_sub(1), tw)
                }
                SpaceKind::EdgeOneForm => {
                    let tw = if k >= 2 {
                        monomial_exponents(k - 2)
                            .into_iter()
                            .flat_map(|exps| (0..2).map(move |comp| TriWeight { exps, comp }))
                            .collect()
                    } else {
                        Vec::new()
                    };
                    (2, 0, k, tw)
                }
                SpaceKind::DgTwoForm => {
                    let tw = monomial_exponents(k)
                        .into_iter()
                        .map(|exps| TriWeight { exps, comp: 0 })
                        .collect();
                    (1, 0, 0, tw)
                }
                SpaceKind::LagrangeVector => {
                    let tw = if k >= 3 {
                        monomial_exponents(k - 3)
                            .into_iter()
                            .flat_map(|exps| (0..2).map(move |comp| TriWeight { exps, comp }))
                            .collect()
                    } else {
                        Vec::new()
                    };
                    (2, 2, 2 * k.saturating_sub(1), tw)
                }
            };
        let edge_count = edge_moments
            * match kind {
                SpaceKind::LagrangeVector => 1, // moments already doubled
                _ => 1,
            };
        let tri_count = tri_weights.len();
        let vc = vert_count;

        // fixed local dof order: vertices, edges, interior
        let mut local_dofs = Vec::new();
        for corner in 0..3 {
            for comp in 0..ncomp.min(vc.max(1)) {
                if vc > 0 {
                    local_dofs.push(LocalDof::VertexValue { corner, comp });
                }
            }
        }
        for side in 0..3 {
            match kind {
                SpaceKind::EdgeOneForm => {
                    for m in 0..edge_moments {
                        local_dofs.push(LocalDof::EdgeTangMoment { side, m });
                    }
                }
                SpaceKind::LagrangeScalar => {
                    for m in 0..edge_moments {
                        local_dofs.push(LocalDof::EdgeMoment { side, m, comp: 0 });
                    }
                }
                SpaceKind::LagrangeVector => {
                    for m in 0..edge_moments / 2 {
                        for comp in 0..2 {
                            local_dofs.push(LocalDof::EdgeMoment { side, m, comp });
                        }
                    }
                }
                SpaceKind::DgTwoForm => {}
            }
        }
        for w in 0..tri_count {
            local_dofs.push(LocalDof::TriMoment { w });
        }

        let bernstein = BernsteinBasis::new(degree);
        let interp_tbl = BernsteinInterp::new(degree);

        let nv = mesh.n_vertices();
        let ne = mesh.n_edges();
        let nt = mesh.n_triangles();
        let ndof = nv * vc + ne * edge_count + nt * tri_count;

        let mut space = FeSpace {
            mesh: mesh.clone(),
            kind,
            degree,
            bc,
            ncomp,
            tri_weights,
            local_dofs,
            bernstein,
            interp_tbl,
            local: Vec::new(),
            l2g: Vec::new(),
            constrained: vec![false; ndof],
            free_of_full: Vec::new(),
            full_of_free: Vec::new(),
        };

        // local-to-global map
        for t in 0..nt {
            let tri = mesh.triangle(t);
            let mut map = Vec::with_capacity(space.local_dofs.len());
            for dof in &space.local_dofs {
                let g = match *dof {
                    LocalDof::VertexValue { corner, comp } => tri[corner] * vc + comp,
                    LocalDof::EdgeMoment { side, m, comp } => {
                        let (e, _) = mesh.tri_edge(t, side);
                        nv * vc + e * edge_count + m * space.ncomp_edge() + comp
                    }
                    LocalDof::EdgeTangMoment { side, m } => {
                        let (e, _) = mesh.tri_edge(t, side);
                        nv * vc + e * edge_count + m
                    }
                    LocalDof::TriMoment { w } => nv * vc + ne * edge_count + t * tri_count + w,
                };
                map.push(g);
            }
            space.l2g.push(map);
        }

        // essential constraints
        if bc == BcMode::Essential {
            match kind {
                SpaceKind::LagrangeScalar => {
                    for v in 0..nv {
                        if mesh.vertex_is_boundary(v) {
                            space.constrained[v] = true;
                        }
                    }
                    for e in 0..ne {
                        if mesh.edge_is_boundary(e) {
                            for m in 0..edge_count {
                                space.constrained[nv * vc + e * edge_count + m] = true;
                            }
                        }
                    }
                }
                SpaceKind::EdgeOneForm => {
                    for e in 0..ne {
                        if mesh.edge_is_boundary(e) {
                            for m in 0..edge_count {
                                space.constrained[e * edge_count + m] = true;
                            }
                        }
                    }
                }
                _ => {}
            }
        }
        let mut free_of_full = vec![None; ndof];
        let mut full_of_free = Vec::new();
        for i in 0..ndof {
            if !space.constrained[i] {
                free_of_full[i] = Some(full_of_free.len());
                full_of_free.push(i);
            }
        }
        space.free_of_full = free_of_full;
        space.full_of_free = full_of_free;

        space.build_local_bases()?;
        Ok(Arc::new(space))
    }

    fn ncomp_edge(&self) -> usize {
        match self.kind {
            SpaceKind::LagrangeVector => 2,
            _ => 1,
        }
    }

    pub fn ndof(&self) -> usize {
        self.constrained.len()
    }
    pub fn nfree(&self) -> usize {
        self.full_of_free.len()
    }
    pub fn is_constrained(&self, i: usize) -> bool {
        self.constrained[i]
    }
    pub fn free_index(&self, i: usize) -> Option<usize> {
        self.free_of_full[i]
    }
    pub fn full_index(&self, free: usize) -> usize {
        self.full_of_free[free]
    }
    pub fn l2g(&self, t: usize) -> &[usize] {
        &self.l2g[t]
    }
    pub fn n_local_dofs(&self) -> usize {
        self.local_dofs.len()
    }
    pub fn bc_mode(&self) -> BcMode {
        self.bc
    }

    /// Restricts a full-length vector to free DOFs.
    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        self.full_of_free.iter().map(|&i| full[i]).collect()
    }
    /// Embeds a free vector into a full-length vector (constrained = 0).
    pub fn embed(&self, free: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.ndof()];
        for (fi, &i) in self.full_of_free.iter().enumerate() {
            full[i] = free[fi];
        }
        full
    }

    // -- DOF functionals ----------------------------------------------------

    /// Applies the local DOF functionals of triangle `t` to a local function
    /// given by component evaluation at barycentric points.
    fn apply_local_dofs(&self, t: usize, f: &dyn Fn([f64; 3]) -> Vec<f64>) -> Vec<f64> {
        self.apply_local_dofs_deg(t, f, 2 * self.degree + 2)
    }

    /// DOF application with a caller-chosen quadrature degree (interpolation
    /// of smooth fields wants a finer rule than polynomial unisolvence).
    fn apply_local_dofs_deg(
        &self,
        t: usize,
        f: &dyn Fn([f64; 3]) -> Vec<f64>,
        qdeg: usize,
    ) -> Vec<f64> {
        let mesh = &self.mesh;
        let qdeg = qdeg.min(crate::polyquad::MAX_QUAD_DEGREE);
        let erule = edge_rule(qdeg).unwrap();
        let trule = tri_rule(qdeg).unwrap();
        let centroid = mesh.bary_to_phys(t, [1.0 / 3.0; 3]);
        let h = mesh.tri_diam(t);
        // evaluate the field once per quadrature point, then apply every DOF
        let corner_vals: Vec<Vec<f64>> = (0..3)
            .map(|c| {
                let mut bary = [0.0; 3];
                bary[c] = 1.0;
                f(bary)
            })
            .collect();
        // edge_vals[side][q], with the matching global parameter and legendre row
        let mut edge_vals: Vec<Vec<Vec<f64>>> = Vec::with_capacity(3);
        let mut edge_leg: Vec<Vec<Vec<f64>>> = Vec::with_capacity(3);
        for side in 0..3 {
            let (_, fwd) = mesh.tri_edge(t, side);
            let mut vals = Vec::with_capacity(erule.points.len());
            let mut legs = Vec::with_capacity(erule.points.len());
            for &s in &erule.points {
                let u = if fwd { s } else { 1.0 - s };
                vals.push(f(mesh.ccw_edge_bary(t, side, u)));
                legs.push(shifted_legendre(self.degree, s));
            }
            edge_vals.push(vals);
            edge_leg.push(legs);
        }
        let tri_vals: Vec<Vec<f64>> = trule.points.iter().map(|&b| f(b)).collect();
        let tri_q: Vec<[f64; 2]> = trule
            .points
            .iter()
            .map(|&b| {
                let x = mesh.bary_to_phys(t, b);
                [(x[0] - centroid[0]) / h, (x[1] - centroid[1]) / h]
            })
            .collect();

        let mut out = Vec::with_capacity(self.local_dofs.len());
        for dof in &self.local_dofs {
            let v = match *dof {
                LocalDof::VertexValue { corner, comp } => corner_vals[corner][comp],
                LocalDof::EdgeMoment { side, m, comp } => {
                    let mut acc = 0.0;
                    for (q, w) in erule.weights.iter().enumerate() {
                        acc += w * edge_vals[side][q][comp] * edge_leg[side][q][m];
                    }
                    acc
                }
                LocalDof::EdgeTangMoment { side, m } => {
                    let (e, _) = mesh.tri_edge(t, side);
                    let evec = mesh.edge_vec(e);
                    let len = mesh.edge_len(e);
                    let that = [evec[0] / len, evec[1] / len];
                    let mut acc = 0.0;
                    for (q, w) in erule.weights.iter().enumerate() {
                        let a = &edge_vals[side][q];
                        acc += w * (a[0] * that[0] + a[1] * that[1]) * edge_leg[side][q][m];
                    }
                    acc
                }
                LocalDof::TriMoment { w } => {
                    let tw = self.tri_weights[w];
                    let mut acc = 0.0;
                    for (q, wq) in trule.weights.iter().enumerate() {
                        let qm = tri_q[q][0].powi(tw.exps.0 as i32)
                            * tri_q[q][1].powi(tw.exps.1 as i32);
                        acc += wq * tri_vals[q][tw.comp] * qm;
                    }
                    acc
                }
            };
            out.push(v);
        }
        out
    }

    /// Spanning set of the local polynomial space, as component Bernstein
    /// blocks of degree `self.degree`.
    fn spanning_blocks(&self, t: usize) -> Vec<Vec<Vec<f64>>> {
        let nb = self.bernstein.len();
        match self.kind {
            SpaceKind::LagrangeScalar | SpaceKind::DgTwoForm => (0..nb)
                .map(|b| {
                    let mut block = vec![0.0; nb];
                    block[b] = 1.0;
                    vec![block]
                })
                .collect(),
            SpaceKind::LagrangeVector => (0..2 * nb)
                .map(|s| {
                    let (c, b) = (s / nb, s % nb);
                    let mut blocks = vec![vec![0.0; nb], vec![0.0; nb]];
                    blocks[c][b] = 1.0;
                    blocks
                })
                .collect(),
            SpaceKind::EdgeOneForm => {
                let k = self.degree;
                let mesh = &self.mesh;
                let centroid = mesh.bary_to_phys(t, [1.0 / 3.0; 3]);
                let h = mesh.tri_diam(t);
                let lower = BernsteinBasis::new(k - 1);
                let mut out = Vec::new();
                // P_{k-1} dx and P_{k-1} dy, degree-elevated by collocation
                for c in 0..2 {
                    for b in 0..lower.len() {
                        let comp_c = self.interp_tbl.project(|bary| lower.eval(bary).values[b]);
                        let zero = vec![0.0; nb];
                        let blocks = if c == 0 {
                            vec![comp_c, zero]
                        } else {
                            vec![zero, comp_c]
                        };
                        out.push(blocks);
                    }
                }
                // Koszul extension: h_a (x dy - y dx) in centered-scaled coords
                for a in 0..k {
                    let pow = move |x: [f64; 2]| {
                        let xs = (x[0] - centroid[0]) / h;
                        let ys = (x[1] - centroid[1]) / h;
                        (xs.powi(a as i32) * ys.powi((k - 1 - a) as i32), xs, ys)
                    };
                    let comp_x = self.interp_tbl.project(|bary| {
                        let (p, _, ys) = pow(mesh.bary_to_phys(t, bary));
                        -p * ys
                    });
                    let comp_y = self.interp_tbl.project(|bary| {
                        let (p, xs, _) = pow(mesh.bary_to_phys(t, bary));
                        p * xs
                    });
                    out.push(vec![comp_x, comp_y]);
                }
                out
            }
        }
    }

    fn build_local_bases(&mut self) -> Result<()> {
        let nt = self.mesh.n_triangles();
        let ndl = self.local_dofs.len();
        let nb = self.bernstein.len();
        let mut local = Vec::with_capacity(nt);
        for t in 0..nt {
            let span = self.spanning_blocks(t);
            if span.len() != ndl {
                return Err(Error::Internal(format!(
                    "spanning set size {} != local dof count {ndl}",
                    span.len()
                )));
            }
            let mut vand = DMatrix::<f64>::zeros(ndl, ndl);
            for (s, blocks) in span.iter().enumerate() {
                let f = |bary: [f64; 3]| -> Vec<f64> {
                    let ev = self.bernstein.eval(bary);
                    blocks
                        .iter()
                        .map(|block| block.iter().zip(&ev.values).map(|(a, b)| a * b).sum())
                        .collect()
                };
                let dofs = self.apply_local_dofs(t, &f);
                for (d, v) in dofs.iter().enumerate() {
                    vand[(d, s)] = *v;
                }
            }
            let inv = vand.try_inverse().ok_or_else(|| {
                Error::Internal(format!("singular DOF system ({:?}) on triangle {t}", self.kind))
            })?;
            let mut tri_basis = Vec::with_capacity(ndl);
            for dof in 0..ndl {
                let mut blocks = vec![vec![0.0; nb]; self.ncomp];
                for (s, span_blocks) in span.iter().enumerate() {
                    let w = inv[(s, dof)];
                    if w != 0.0 {
                        for (c, sb) in span_blocks.iter().enumerate() {
                            for b in 0..nb {
                                blocks[c][b] += w * sb[b];
                            }
                        }
                    }
                }
                tri_basis.push(blocks);
            }
            local.push(tri_basis);
        }
        self.local = local;
        Ok(())
    }

    // -- basis evaluation ----------------------------------------------------

    fn jacobian_invt(&self, t: usize) -> [[f64; 2]; 2] {
        let jac = self.mesh.jacobian(t);
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        [[jac[1][1] / det, -jac[1][0] / det], [-jac[0][1] / det, jac[0][0] / det]]
    }

    fn component_jets(&self, t: usize, bary: [f64; 3]) -> Vec<Vec<ScalarJet>> {
        let ev = self.bernstein.eval(bary);
        let jit = self.jacobian_invt(t);
        self.local[t]
            .iter()
            .map(|blocks| {
                blocks
                    .iter()
                    .map(|block| {
                        let mut v = 0.0;
                        let mut gr = [0.0; 2];
                        let mut hr = [0.0; 3];
                        for (b, &w) in block.iter().enumerate() {
                            if w == 0.0 {
                                continue;
                            }
                            v += w * ev.values[b];
                            gr[0] += w * ev.grads[b][0];
                            gr[1] += w * ev.grads[b][1];
                            hr[0] += w * ev.hess[b][0];
                            hr[1] += w * ev.hess[b][1];
                            hr[2] += w * ev.hess[b][2];
                        }
                        let g = [
                            jit[0][0] * gr[0] + jit[0][1] * gr[1],
                            jit[1][0] * gr[0] + jit[1][1] * gr[1],
                        ];
                        let href = [[hr[0], hr[1]], [hr[1], hr[2]]];
                        let mut hp = [[0.0; 2]; 2];
                        for i in 0..2 {
                            for j in 0..2 {
                                let mut acc = 0.0;
                                for a in 0..2 {
                                    for b2 in 0..2 {
                                        acc += jit[i][a] * href[a][b2] * jit[j][b2];
                                    }
                                }
                                hp[i][j] = acc;
                            }
                        }
                        ScalarJet { v, d: g, d2: [hp[0][0], hp[0][1], hp[1][1]] }
                    })
                    .collect()
            })
            .collect()
    }

    /// Scalar basis jets (LagrangeScalar / DgTwoForm proxy).
    pub fn scalar_basis(&self, t: usize, bary: [f64; 3]) -> Vec<ScalarJet> {
        debug_assert!(self.ncomp == 1);
        self.component_jets(t, bary).into_iter().map(|mut c| c.remove(0)).collect()
    }

    /// One-form basis jets (EdgeOneForm).
    pub fn oneform_basis(&self, t: usize, bary: [f64; 3]) -> Vec<OneFormJet> {
        debug_assert!(self.kind == SpaceKind::EdgeOneForm);
        self.component_jets(t, bary)
            .into_iter()
            .map(|c| OneFormJet {
                a: [c[0].v, c[1].v],
                d: [[c[0].d[0], c[1].d[0]], [c[0].d[1], c[1].d[1]]],
            })
            .collect()
    }

    /// Vector basis jets (LagrangeVector).
    pub fn vector_basis(&self, t: usize, bary: [f64; 3]) -> Vec<VectorJet> {
        debug_assert!(self.kind == SpaceKind::LagrangeVector);
        self.component_jets(t, bary)
            .into_iter()
            .map(|c| VectorJet {
                u: [c[0].v, c[1].v],
                d: [[c[0].d[0], c[1].d[0]], [c[0].d[1], c[1].d[1]]],
            })
            .collect()
    }

    // -- canonical interpolation ----------------------------------------------

    fn interp_coeffs(&self, per_tri: &dyn Fn(usize, [f64; 3]) -> Vec<f64>) -> Vec<f64> {
        // each global DOF is evaluated once, from the owner side of its entity
        let mesh = &self.mesh;
        let mut coeffs = vec![0.0; self.ndof()];
        let mut done = vec![false; self.ndof()];
        for t in 0..mesh.n_triangles() {
            let f = |bary: [f64; 3]| per_tri(t, bary);
            let owner = |dof: &LocalDof| -> bool {
                match *dof {
                    LocalDof::VertexValue { .. } => true, // continuous inputs: any side
                    LocalDof::EdgeMoment { side, .. } | LocalDof::EdgeTangMoment { side, .. } => {
                        let (e, _) = mesh.tri_edge(t, side);
                        mesh.edge(e).sides[0].0 == t
                    }
                    LocalDof::TriMoment { .. } => true,
                }
            };
            let needed: Vec<usize> = self
                .local_dofs
                .iter()
                .enumerate()
                .filter(|(ld, dof)| owner(dof) && !done[self.l2g[t][*ld]])
                .map(|(ld, _)| ld)
                .collect();
            if needed.is_empty() {
                continue;
            }
            let vals = self.apply_local_dofs_deg(t, &f, 2 * self.degree + 10);
            for ld in needed {
                let g = self.l2g[t][ld];
                coeffs[g] = vals[ld];
                done[g] = true;
            }
        }
        coeffs
    }

    /// Canonical interpolant of a scalar field (vertex values, edge trace
    /// moments, interior moments).
    pub fn interp_scalar(self: &Arc<Self>, f: &dyn ScalarField) -> FeFunction {
        assert_eq!(self.kind, SpaceKind::LagrangeScalar);
        let coeffs = self.interp_coeffs(&|t, bary| vec![f.value(t, bary)]);
        FeFunction { space: self.clone(), coeffs }
    }

    /// Canonical interpolant of a one-form (edge tangential moments,
    /// interior moments).
    pub fn interp_oneform(self: &Arc<Self>, f: &dyn OneFormField) -> FeOneForm {
        assert_eq!(self.kind, SpaceKind::EdgeOneForm);
        let coeffs = self.interp_coeffs(&|t, bary| f.value(t, bary).to_vec());
        FeOneForm { space: self.clone(), coeffs }
    }

    /// Canonical interpolant of a two-form given by its scalar proxy
    /// (F = f dx^dy).
    pub fn interp_twoform(self: &Arc<Self>, f: &dyn ScalarField) -> FeTwoForm {
        assert_eq!(self.kind, SpaceKind::DgTwoForm);
        let coeffs = self.interp_coeffs(&|t, bary| vec![f.value(t, bary)]);
        FeTwoForm { space: self.clone(), coeffs }
    }

    /// Lagrange interpolant of a continuous vector field (vertex values, edge
    /// and interior moments).  For a piecewise constant SPD reference metric
    /// the weighted moment conditions span the same constraints, so the
    /// interpolant is reference-independent and computed with Euclidean
    /// moments.
    pub fn interp_vector(self: &Arc<Self>, f: &dyn VectorField) -> FeVectorField {
        assert_eq!(self.kind, SpaceKind::LagrangeVector);
        let coeffs = self.interp_coeffs(&|t, bary| f.value(t, bary).to_vec());
        FeVectorField { space: self.clone(), coeffs }
    }

    // -- matrices ---------------------------------------------------------------

    /// Metric-weighted mass matrix on free DOFs.  Pass `None` for the
    /// Euclidean metric.  `quad_degree` controls the rule for the
    /// metric-dependent integrand.
    pub fn mass_matrix(
        &self,
        g: Option<&dyn MetricGiver>,
        quad_degree: usize,
    ) -> Result<SparseSpd> {
        let rule = tri_rule(quad_degree.min(crate::polyquad::MAX_QUAD_DEGREE))?;
        let mesh = &self.mesh;
        let mut trip = Triplets::new(self.nfree(), self.nfree());
        for t in 0..mesh.n_triangles() {
            let area = mesh.tri_area(t);
            let nl = self.n_local_dofs();
            let mut elem = vec![vec![0.0; nl]; nl];
            for (q, &bary) in rule.points.iter().enumerate() {
                let jet = match g {
                    Some(g) => g.metric_jet(t, bary)?,
                    None => MetricJet::euclidean(),
                };
                let w = rule.weights[q] * area;
                let vol = jet.g.det().sqrt();
                match self.kind {
                    SpaceKind::LagrangeScalar => {
                        let basis = self.scalar_basis(t, bary);
                        for i in 0..nl {
                            for j in 0..=i {
                                elem[i][j] += w * vol * basis[i].v * basis[j].v;
                            }
                        }
                    }
                    SpaceKind::DgTwoForm => {
                        // <f dx^dy, g dx^dy>_g = f g / det g
                        let basis = self.scalar_basis(t, bary);
                        for i in 0..nl {
                            for j in 0..=i {
                                elem[i][j] += w * basis[i].v * basis[j].v / vol;
                            }
                        }
                    }
                    SpaceKind::EdgeOneForm => {
                        let gi = jet.g.inverse();
                        let basis = self.oneform_basis(t, bary);
                        for i in 0..nl {
                            for j in 0..=i {
                                elem[i][j] += w * vol * gi.apply(basis[i].a, basis[j].a);
                            }
                        }
                    }
                    SpaceKind::LagrangeVector => {
                        let basis = self.vector_basis(t, bary);
                        for i in 0..nl {
                            for j in 0..=i {
                                elem[i][j] += w * vol * jet.g.apply(basis[i].u, basis[j].u);
                            }
                        }
                    }
                }
            }
            for i in 0..nl {
                let Some(gi) = self.free_of_full[self.l2g[t][i]] else { continue };
                for j in 0..nl {
                    let Some(gj) = self.free_of_full[self.l2g[t][j]] else { continue };
                    let v = if j <= i { elem[i][j] } else { elem[j][i] };
                    trip.push(gi, gj, v);
                }
            }
        }
        SparseSpd::new(trip.build())
    }

    /// Gram matrix of the mesh-weighted V norm |v|_H1(Omega)^2 +
    /// sum_T h_T^2 |v|_H2(T)^2 (Euclidean seminorms), on free DOFs.
    pub fn norm_gram_scalar(&self) -> Result<SparseSpd> {
        assert_eq!(self.kind, SpaceKind::LagrangeScalar);
        let rule = tri_rule(2 * self.degree)?;
        let mesh = &self.mesh;
        let mut trip = Triplets::new(self.nfree(), self.nfree());
        for t in 0..mesh.n_triangles() {
            let area = mesh.tri_area(t);
            let ht2 = mesh.tri_diam(t).powi(2);
            let nl = self.n_local_dofs();
            let mut elem = vec![vec![0.0; nl]; nl];
            for (q, &bary) in rule.points.iter().enumerate() {
                let w = rule.weights[q] * area;
                let basis = self.scalar_basis(t, bary);
                for i in 0..nl {
                    for j in 0..=i {
                        let grad = basis[i].d[0] * basis[j].d[0] + basis[i].d[1] * basis[j].d[1];
                        let hess = basis[i].d2[0] * basis[j].d2[0]
                            + 2.0 * basis[i].d2[1] * basis[j].d2[1]
                            + basis[i].d2[2] * basis[j].d2[2];
                        elem[i][j] += w * (grad + ht2 * hess);
                    }
                }
            }
            for i in 0..nl {
                let Some(gi) = self.free_of_full[self.l2g[t][i]] else { continue };
                for j in 0..nl {
                    let Some(gj) = self.free_of_full[self.l2g[t][j]] else { continue };
                    let v = if j <= i { elem[i][j] } else { elem[j][i] };
                    trip.push(gi, gj, v);
                }
            }
        }
        SparseSpd::new(trip.build())
    }

    /// Gram matrix of the mesh-weighted W norm ||a||_L2(Omega)^2 +
    /// sum_T h_T^2 |a|_H1(T)^2 (Euclidean, componentwise), on free DOFs.
    pub fn norm_gram_oneform(&self) -> Result<SparseSpd> {
        assert_eq!(self.kind, SpaceKind::EdgeOneForm);
        let rule = tri_rule(2 * self.degree)?;
        let mesh = &self.mesh;
        let mut trip = Triplets::new(self.nfree(), self.nfree());
        for t in 0..mesh.n_triangles() {
            let area = mesh.tri_area(t);
            let ht2 = mesh.tri_diam(t).powi(2);
            let nl = self.n_local_dofs();
            let mut elem = vec![vec![0.0; nl]; nl];
            for (q, &bary) in rule.points.iter().enumerate() {
                let w = rule.weights[q] * area;
                let basis = self.oneform_basis(t, bary);
                for i in 0..nl {
                    for j in 0..=i {
                        let l2 = basis[i].a[0] * basis[j].a[0] + basis[i].a[1] * basis[j].a[1];
                        let mut h1 = 0.0;
                        for a in 0..2 {
                            for b in 0..2 {
                                h1 += basis[i].d[a][b] * basis[j].d[a][b];
                            }
                        }
                        elem[i][j] += w * (l2 + ht2 * h1);
                    }
                }
            }
            for i in 0..nl {
                let Some(gi) = self.free_of_full[self.l2g[t][i]] else { continue };
                for j in 0..nl {
                    let Some(gj) = self.free_of_full[self.l2g[t][j]] else { continue };
                    let v = if j <= i { elem[i][j] } else { elem[j][i] };
                    trip.push(gi, gj, v);
                }
            }
        }
        SparseSpd::new(trip.build())
    }

    /// Projects a functional onto the space with the g-weighted mass matrix;
    /// returns the full coefficient vector (constrained entries zero).
    pub fn project(
        &self,
        load_full: &[f64],
        g: Option<&dyn MetricGiver>,
        quad_degree: usize,
    ) -> Result<Vec<f64>> {
        let mass = self.mass_matrix(g, quad_degree)?;
        let x = mass.solve(&self.restrict(load_full))?;
        Ok(self.embed(&x))
    }
}

/// Exterior-derivative matrix d0: V_h^k -> W_h^k on free DOFs.
/// Entry (i,j) is the i-th W DOF of d(phi_j).
pub fn d0_matrix(v: &FeSpace, w: &FeSpace) -> Result<SparseMatrix> {
    if v.kind != SpaceKind::LagrangeScalar || w.kind != SpaceKind::EdgeOneForm {
        return Err(Error::Mismatch("d0 needs (LagrangeScalar, EdgeOneForm)".into()));
    }
    if v.degree != w.degree {
        return Err(Error::Mismatch("d0 degree mismatch".into()));
    }
    if !Arc::ptr_eq(&v.mesh, &w.mesh) {
        return Err(Error::Mismatch("d0 spaces on different meshes".into()));
    }
    let mesh = &v.mesh;
    let mut trip = Triplets::new(w.nfree(), v.nfree());
    let mut written = vec![false; w.ndof()];
    for t in 0..mesh.n_triangles() {
        let owner = |dof: &LocalDof| -> bool {
            match *dof {
                LocalDof::EdgeTangMoment { side, .. } => {
                    let (e, _) = mesh.tri_edge(t, side);
                    mesh.edge(e).sides[0].0 == t
                }
                LocalDof::TriMoment { .. } => true,
                _ => false,
            }
        };
        for (ldv, &gv) in v.l2g[t].iter().enumerate() {
            let Some(fv) = v.free_of_full[gv] else { continue };
            // d(phi): one-form with components = gradient of the scalar basis
            let f = |bary: [f64; 3]| -> Vec<f64> {
                let jets = v.scalar_basis(t, bary);
                vec![jets[ldv].d[0], jets[ldv].d[1]]
            };
            let dofs = w.apply_local_dofs(t, &f);
            for (ldw, &gw) in w.l2g[t].iter().enumerate() {
                if !owner(&w.local_dofs[ldw]) || written[gw] {
                    continue;
                }
                if let Some(fw) = w.free_of_full[gw] {
                    if dofs[ldw].abs() > 1e-13 {
                        trip.push(fw, fv, dofs[ldw]);
                    }
                }
            }
        }
        for (ldw, &gw) in w.l2g[t].iter().enumerate() {
            if owner(&w.local_dofs[ldw]) {
                written[gw] = true;
            }
        }
    }
    Ok(trip.build())
}

/// Exterior-derivative matrix d1: W_h^k -> X_h^{k-1} on free DOFs.
pub fn d1_matrix(w: &FeSpace, x: &FeSpace) -> Result<SparseMatrix> {
    if w.kind != SpaceKind::EdgeOneForm || x.kind != SpaceKind::DgTwoForm {
        return Err(Error::Mismatch("d1 needs (EdgeOneForm, DgTwoForm)".into()));
    }
    if w.degree != x.degree + 1 {
        return Err(Error::Mismatch("d1 degree mismatch (need X degree = W degree - 1)".into()));
    }
    if !Arc::ptr_eq(&w.mesh, &x.mesh) {
        return Err(Error::Mismatch("d1 spaces on different meshes".into()));
    }
    let mesh = &w.mesh;
    let mut trip = Triplets::new(x.nfree(), w.nfree());
    for t in 0..mesh.n_triangles() {
        for (ldw, &gw) in w.l2g[t].iter().enumerate() {
            let Some(fw) = w.free_of_full[gw] else { continue };
            // d(alpha) = (d_x a_y - d_y a_x) dx^dy: scalar proxy
            let f = |bary: [f64; 3]| -> Vec<f64> {
                let jets = w.oneform_basis(t, bary);
                vec![jets[ldw].d[0][1] - jets[ldw].d[1][0]]
            };
            let dofs = x.apply_local_dofs(t, &f);
            for (ldx, &gx) in x.l2g[t].iter().enumerate() {
                if let Some(fx) = x.free_of_full[gx] {
                    if dofs[ldx].abs() > 1e-13 {
                        trip.push(fx, fw, dofs[ldx]);
                    }
                }
            }
        }
    }
    Ok(trip.build())
}

// -- finite element fields -----------------------------------------------------

macro_rules! fe_field {
    ($name:ident) => {
        #[derive(Clone)]
        pub struct $name {
            pub space: Arc<FeSpace>,
            pub coeffs: Vec<f64>,
        }

        impl $name {
            pub fn zero(space: &Arc<FeSpace>) -> Self {
                $name { space: space.clone(), coeffs: vec![0.0; space.ndof()] }
            }
            pub fn from_free(space: &Arc<FeSpace>, free: &[f64]) -> Self {
                $name { space: space.clone(), coeffs: space.embed(free) }
            }
        }
    };
}

fe_field!(FeFunction);
fe_field!(FeOneForm);
fe_field!(FeTwoForm);
fe_field!(FeVectorField);

impl FeFunction {
    fn jet_impl(&self, tri: usize, bary: [f64; 3]) -> ScalarJet {
        let basis = self.space.scalar_basis(tri, bary);
        let mut out = ScalarJet::default();
        for (ld, &g) in self.space.l2g[tri].iter().enumerate() {
            let c = self.coeffs[g];
            if c == 0.0 {
                continue;
            }
            out.v += c * basis[ld].v;
            for i in 0..2 {
                out.d[i] += c * basis[ld].d[i];
            }
            for i in 0..3 {
                out.d2[i] += c * basis[ld].d2[i];
            }
        }
        out
    }
    /// Value at a mesh vertex (single-valued for conforming functions).
    pub fn vertex_value(&self, z: usize) -> f64 {
        let t = self.space.mesh.star(z)[0];
        let pos = self.space.mesh.triangle(t).iter().position(|&v| v == z).unwrap();
        let mut bary = [0.0; 3];
        bary[pos] = 1.0;
        self.value(t, bary)
    }
}

impl ScalarField for FeFunction {
    fn value(&self, tri: usize, bary: [f64; 3]) -> f64 {
        self.jet_impl(tri, bary).v
    }
}
impl ScalarFieldC2 for FeFunction {
    fn jet(&self, tri: usize, bary: [f64; 3]) -> ScalarJet {
        self.jet_impl(tri, bary)
    }
}

impl FeOneForm {
    fn jet_impl(&self, tri: usize, bary: [f64; 3]) -> OneFormJet {
        let basis = self.space.oneform_basis(tri, bary);
        let mut out = OneFormJet::default();
        for (ld, &g) in self.space.l2g[tri].iter().enumerate() {
            let c = self.coeffs[g];
            if c == 0.0 {
                continue;
            }
            out.a[0] += c * basis[ld].a[0];
            out.a[1] += c * basis[ld].a[1];
            for i in 0..2 {
                for j in 0..2 {
                    out.d[i][j] += c * basis[ld].d[i][j];
                }
            }
        }
        out
    }
}
impl OneFormField for FeOneForm {
    fn value(&self, tri: usize, bary: [f64; 3]) -> [f64; 2] {
        self.jet_impl(tri, bary).a
    }
}
impl OneFormFieldC1 for FeOneForm {
    fn jet(&self, tri: usize, bary: [f64; 3]) -> OneFormJet {
        self.jet_impl(tri, bary)
    }
}

impl FeTwoForm {
    /// Scalar proxy value (F = f dx^dy).
    pub fn proxy_value(&self, tri: usize, bary: [f64; 3]) -> f64 {
        let basis = self.space.scalar_basis(tri, bary);
        let mut v = 0.0;
        for (ld, &g) in self.space.l2g[tri].iter().enumerate() {
            v += self.coeffs[g] * basis[ld].v;
        }
        v
    }
}

impl FeVectorField {
    fn jet_impl(&self, tri: usize, bary: [f64; 3]) -> VectorJet {
        let basis = self.space.vector_basis(tri, bary);
        let mut out = VectorJet::default();
        for (ld, &g) in self.space.l2g[tri].iter().enumerate() {
            let c = self.coeffs[g];
            if c == 0.0 {
                continue;
            }
            out.u[0] += c * basis[ld].u[0];
            out.u[1] += c * basis[ld].u[1];
            for i in 0..2 {
                for j in 0..2 {
                    out.d[i][j] += c * basis[ld].d[i][j];
                }
            }
        }
        out
    }
}
impl VectorField for FeVectorField {
    fn value(&self, tri: usize, bary: [f64; 3]) -> [f64; 2] {
        self.jet_impl(tri, bary).u
    }
}
impl VectorFieldC1 for FeVectorField {
    fn jet(&self, tri: usize, bary: [f64; 3]) -> VectorJet {
        self.jet_impl(tri, bary)
    }
}

/// A dual-space element represented by its action on the basis of a chosen
/// test space (full-length load vector; constrained entries zero).
#[derive(Clone)]
pub struct Functional {
    pub space: Arc<FeSpace>,
    pub load: Vec<f64>,
}

impl Functional {
    pub fn zero(space: &Arc<FeSpace>) -> Self {
        Functional { space: space.clone(), load: vec![0.0; space.ndof()] }
    }
    /// Pairing with a finite element function of the same space.
    pub fn pair(&self, coeffs: &[f64]) -> f64 {
        self.load.iter().zip(coeffs).map(|(a, b)| a * b).sum()
    }
}

/// The deformation operator eps u = 1/2 L_u g as a tensor field:
/// (eps u)_ij = 1/2 (d_i ub_j + d_j ub_i) - Gamma^k_ij ub_k with ub = g u.
pub struct Deformation<'a> {
    pub u: &'a dyn VectorFieldC1,
    pub g: &'a dyn MetricGiver,
}

impl<'a> TensorField for Deformation<'a> {
    fn value(&self, tri: usize, bary: [f64; 3]) -> Sym2 {
        let ujet = self.u.jet(tri, bary);
        let gjet = self.g.metric_jet(tri, bary).expect("metric SPD inside deformation");
        let gamma = crate::geom::christoffel(&gjet);
        // flat components and their partials
        let ub = gjet.g.mul_vec(ujet.u);
        let dub = |i: usize, j: usize| -> f64 {
            // d_i (g_jk u^k) = (d_i g_jk) u^k + g_jk d_i u^k
            let mut v = 0.0;
            for k in 0..2 {
                v += gjet.dg[i].at(j, k) * ujet.u[k] + gjet.g.at(j, k) * ujet.d[i][k];
            }
            v
        };
        let entry = |i: usize, j: usize| -> f64 {
            0.5 * (dub(i, j) + dub(j, i)) - gamma[0][i][j] * ub[0] - gamma[1][i][j] * ub[1]
        };
        Sym2::new(entry(0, 0), entry(0, 1), entry(1, 1))
    }
}

/// Euclidean metric giver on a mesh (for the common g = delta case).
pub struct EuclideanMetric;

impl MetricGiver for EuclideanMetric {
    fn metric_jet(&self, _tri: usize, _bary: [f64; 3]) -> Result<MetricJet> {
        Ok(MetricJet::euclidean())
    }
}
