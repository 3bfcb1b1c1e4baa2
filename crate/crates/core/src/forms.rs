//! The metric-dependent bilinear forms b_h and c_h, each in two independent
//! algebraic guises, as scalars and as matrices over the discrete spaces.
//!
//! Direct guises:
//!   b_h(g; sigma, v)     = sum_T <S sigma, Hess v>_{g,T}
//!                        + sum_{e in E_h} <sigma(tau,tau), [[grad_n v]]>_{g,e}
//!   c_h(g; sigma, alpha) = sum_T <S sigma, grad alpha>_{g,T}
//!                        + sum_{e in E_h} <sigma(tau,tau), [[alpha(n)]]>_{g,e}
//! Integrated-by-parts guises:
//!   b_h = sum_T <div div S sigma, v>
//!       - sum_{e in E0} <[[(div S sigma)(n) + grad_tau(sigma(n,tau))]], v>
//!       + sum_{z in V0} v(z) sum_{T in star(z)} [[sigma(n,tau)]]_zT
//!   c_h = -sum_T <div S sigma, alpha> + sum_{e in E0} <[[sigma(n,tau)]], alpha(tau)>
//!
//! Edge sums in the direct guises run over all edges with one-sided values on
//! boundary edges; jumps are sums of one-sided values, each side using its
//! own outward g-frame.  Edge integrals use the g-arclength element
//! ds = |t_E|_g dl, single-valued by tt-continuity of g (asserted at runtime
//! on interior edges).

use std::sync::Arc;

use crate::fespace::FeSpace;
use crate::fields::{MetricGiver, OneFormField, OneFormFieldC1, ScalarField, ScalarFieldC2, TensorField, TensorFieldC2};
use crate::geom::{
    christoffel, cov_deriv_oneform, cov_deriv_oneform_with, d_sigma_n_tau_du, div_div_s_sigma,
    div_s_sigma, edge_frame, hessian, hessian_with, s_operator, OneFormJet, Sym2,
};
use crate::linalg::{SparseMatrix, Triplets};
use crate::mesh::Mesh;
use crate::polyquad::{edge_rule, tri_rule, EdgeQuadRule, TriQuadRule};
use crate::regge::{clamp_bary, ReggeSpace};
use crate::{Error, Result};

/// Verification-harness fault injection for mutation regression tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Flip the sign of the normal-derivative jump in the direct b_h guise.
    FlipNormalJumpSign,
}

/// Quadrature configuration for metric-dependent integrands: rules of degree
/// 2 r_metric + 10 + boost (measured to give <= 1e-10 assembly consistency on
/// the convergence-study metrics at desk scale).
#[derive(Debug, Clone, Copy, Default)]
pub struct QuadConfig {
    pub boost: usize,
}

/// Mesh + metric + quadrature bundle for assembling the forms.
pub struct FormContext<'a> {
    pub mesh: Arc<Mesh>,
    pub metric: &'a dyn MetricGiver,
    /// Polynomial degree of the metric (drives default quadrature degree).
    pub metric_degree: usize,
    pub quad: QuadConfig,
    fault: Option<Fault>,
}

impl<'a> FormContext<'a> {
    pub fn new(mesh: Arc<Mesh>, metric: &'a dyn MetricGiver, metric_degree: usize) -> Self {
        FormContext { mesh, metric, metric_degree, quad: QuadConfig::default(), fault: None }
    }

    pub fn with_boost(mut self, boost: usize) -> Self {
        self.quad.boost = boost;
        self
    }

    /// Injects a deliberate defect; only the verification harness uses this.
    pub fn with_fault(mut self, fault: Fault) -> Self {
        self.fault = Some(fault);
        self
    }

    fn qdeg(&self) -> usize {
        (2 * self.metric_degree + 10 + self.quad.boost).min(crate::polyquad::MAX_QUAD_DEGREE)
    }
    pub fn tri_rule(&self) -> TriQuadRule {
        tri_rule(self.qdeg()).expect("supported degree")
    }
    pub fn edge_rule(&self) -> EdgeQuadRule {
        edge_rule(self.qdeg()).expect("supported degree")
    }

    fn jump_sign(&self) -> f64 {
        match self.fault {
            Some(Fault::FlipNormalJumpSign) => -1.0,
            None => 1.0,
        }
    }

    /// Checks that the metric's tangential-tangential trace is single-valued
    /// on an interior edge (sampled at the midpoint).
    fn assert_tt_continuity(&self, e: usize) -> Result<()> {
        let mesh = &self.mesh;
        let edge = mesh.edge(e);
        if edge.nsides < 2 {
            return Ok(());
        }
        let evec = mesh.edge_vec(e);
        let [a, b] = edge.v;
        let (p, q) = (mesh.vertex(a), mesh.vertex(b));
        let x = [0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])];
        let mut vals = [0.0; 2];
        for side in 0..2 {
            let t = edge.sides[side].0;
            let bary = clamp_bary(mesh.phys_to_bary(t, x));
            vals[side] = self.metric.metric_jet(t, bary)?.g.apply(evec, evec);
        }
        if (vals[0] - vals[1]).abs() > 1e-9 * vals[0].abs().max(1.0) {
            return Err(Error::Mismatch(format!(
                "metric tt-trace jumps across edge {e}: {} vs {}",
                vals[0], vals[1]
            )));
        }
        Ok(())
    }
}

/// g-weighted inner product of symmetric (0,2)-tensors:
/// g^{ik} g^{jl} a_ij b_kl.
fn inner_sym(g: &Sym2, a: &Sym2, b: &Sym2) -> f64 {
    let gi = g.inverse();
    let mut v = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                for l in 0..2 {
                    v += gi.at(i, k) * gi.at(j, l) * a.at(i, j) * b.at(k, l);
                }
            }
        }
    }
    v
}

/// g-weighted pairing of a symmetric tensor with a (non-symmetric) 2-tensor
/// m[i][j]; only the symmetric part of m contributes.
fn inner_sym_full(g: &Sym2, a: &Sym2, m: &[[f64; 2]; 2]) -> f64 {
    let gi = g.inverse();
    let mut v = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                for l in 0..2 {
                    v += gi.at(i, k) * gi.at(j, l) * a.at(i, j) * m[k][l];
                }
            }
        }
    }
    v
}

/// Direct guise of b_h.
pub fn bh_direct(
    ctx: &FormContext,
    sigma: &dyn TensorField,
    v: &dyn ScalarFieldC2,
) -> Result<f64> {
    let mesh = &ctx.mesh;
    let trule = ctx.tri_rule();
    let erule = ctx.edge_rule();
    let mut total = 0.0;

    for t in 0..mesh.n_triangles() {
        let area = mesh.tri_area(t);
        for (q, &bary) in trule.points.iter().enumerate() {
            let jet = ctx.metric.metric_jet(t, bary)?;
            let s = s_operator(&jet.g, &sigma.value(t, bary));
            let hess = hessian(&jet, &v.jet(t, bary));
            total += trule.weights[q] * area * inner_sym(&jet.g, &s, &hess) * jet.g.det().sqrt();
        }
    }

    for e in 0..mesh.n_edges() {
        ctx.assert_tt_continuity(e)?;
        let edge = mesh.edge(e);
        let evec = mesh.edge_vec(e);
        let len = mesh.edge_len(e);
        let that = [evec[0] / len, evec[1] / len];
        let start = mesh.vertex(edge.v[0]);
        for (q, &sq) in erule.points.iter().enumerate() {
            let x = [start[0] + sq * evec[0], start[1] + sq * evec[1]];
            // sigma(tau,tau) and ds from the first side (single-valued)
            let (t0, _) = edge.sides[0];
            let bary0 = clamp_bary(mesh.phys_to_bary(t0, x));
            let g0 = ctx.metric.metric_jet(t0, bary0)?.g;
            let tt_g = g0.apply(that, that);
            let sig_tt = sigma.value(t0, bary0).apply(that, that) / tt_g;
            let ds = tt_g.sqrt();
            // jump of grad_n v: sum of one-sided values, each with its own
            // outward g-normal
            let mut jump = 0.0;
            for side in 0..edge.nsides {
                let (t, k) = edge.sides[side];
                let bary = clamp_bary(mesh.phys_to_bary(t, x));
                let g = ctx.metric.metric_jet(t, bary)?.g;
                let (_, n) = edge_frame(&g, mesh.ccw_edge_vec(t, k))?;
                let dv = v.jet(t, bary).d;
                jump += dv[0] * n[0] + dv[1] * n[1];
            }
            total += ctx.jump_sign() * erule.weights[q] * len * sig_tt * jump * ds;
        }
    }
    Ok(total)
}

/// Integrated-by-parts guise of b_h (needs per-triangle second derivatives of
/// sigma).
pub fn bh_ibp(ctx: &FormContext, sigma: &dyn TensorFieldC2, v: &dyn ScalarField) -> Result<f64> {
    let mesh = &ctx.mesh;
    let trule = ctx.tri_rule();
    let erule = ctx.edge_rule();
    let mut total = 0.0;

    for t in 0..mesh.n_triangles() {
        let area = mesh.tri_area(t);
        for (q, &bary) in trule.points.iter().enumerate() {
            let jet = ctx.metric.metric_jet(t, bary)?;
            let dds = div_div_s_sigma(&jet, &sigma.jet(t, bary));
            total += trule.weights[q] * area * dds * v.value(t, bary) * jet.g.det().sqrt();
        }
    }

    for e in mesh.interior_edges() {
        ctx.assert_tt_continuity(e)?;
        let edge = mesh.edge(e);
        let evec = mesh.edge_vec(e);
        let len = mesh.edge_len(e);
        let start = mesh.vertex(edge.v[0]);
        for (q, &sq) in erule.points.iter().enumerate() {
            let x = [start[0] + sq * evec[0], start[1] + sq * evec[1]];
            let (t0, _) = edge.sides[0];
            let bary0 = clamp_bary(mesh.phys_to_bary(t0, x));
            let vval = v.value(t0, bary0);
            let ds = ctx.metric.metric_jet(t0, bary0)?.g.apply(evec, evec).sqrt() / len;
            let mut jump = 0.0;
            for side in 0..2 {
                let (t, k) = edge.sides[side];
                let bary = clamp_bary(mesh.phys_to_bary(t, x));
                let jet = ctx.metric.metric_jet(t, bary)?;
                let sjet = sigma.jet(t, bary);
                let tangent = mesh.ccw_edge_vec(t, k);
                let (_, n) = edge_frame(&jet.g, tangent)?;
                let dss = div_s_sigma(&jet, &sjet);
                let tnorm = jet.g.apply(tangent, tangent).sqrt();
                jump += dss[0] * n[0] + dss[1] * n[1]
                    + d_sigma_n_tau_du(&jet, &sjet, tangent) / tnorm;
            }
            total -= erule.weights[q] * len * jump * vval * ds;
        }
    }

    for z in mesh.interior_vertices() {
        let star0 = mesh.star(z)[0];
        let pos0 = mesh.triangle(star0).iter().position(|&v| v == z).unwrap();
        let mut bary0 = [0.0; 3];
        bary0[pos0] = 1.0;
        let vz = v.value(star0, bary0);
        let mut acc = 0.0;
        for &t in mesh.star(z) {
            let pos = mesh.triangle(t).iter().position(|&v| v == z).unwrap();
            let mut bary = [0.0; 3];
            bary[pos] = 1.0;
            let jet = ctx.metric.metric_jet(t, bary)?;
            let sig = sigma.value(t, bary);
            // incoming edge (CCW tangent points toward z), then outgoing
            let local_in = (pos + 1) % 3;
            let local_out = (pos + 2) % 3;
            let mut jump_zt = 0.0;
            for (local, sign) in [(local_in, 1.0), (local_out, -1.0)] {
                let (tau, n) = edge_frame(&jet.g, mesh.ccw_edge_vec(t, local))?;
                jump_zt += sign * sig.apply(n, tau);
            }
            acc += jump_zt;
        }
        total += vz * acc;
    }
    Ok(total)
}

/// Direct guise of c_h (needs the covariant derivative of alpha).
pub fn ch_direct(
    ctx: &FormContext,
    sigma: &dyn TensorField,
    alpha: &dyn OneFormFieldC1,
) -> Result<f64> {
    let mesh = &ctx.mesh;
    let trule = ctx.tri_rule();
    let erule = ctx.edge_rule();
    let mut total = 0.0;

    for t in 0..mesh.n_triangles() {
        let area = mesh.tri_area(t);
        for (q, &bary) in trule.points.iter().enumerate() {
            let jet = ctx.metric.metric_jet(t, bary)?;
            let s = s_operator(&jet.g, &sigma.value(t, bary));
            let grad = cov_deriv_oneform(&jet, &alpha.jet(t, bary));
            total +=
                trule.weights[q] * area * inner_sym_full(&jet.g, &s, &grad) * jet.g.det().sqrt();
        }
    }

    for e in 0..mesh.n_edges() {
        ctx.assert_tt_continuity(e)?;
        let edge = mesh.edge(e);
        let evec = mesh.edge_vec(e);
        let len = mesh.edge_len(e);
        let that = [evec[0] / len, evec[1] / len];
        let start = mesh.vertex(edge.v[0]);
        for (q, &sq) in erule.points.iter().enumerate() {
            let x = [start[0] + sq * evec[0], start[1] + sq * evec[1]];
            let (t0, _) = edge.sides[0];
            let bary0 = clamp_bary(mesh.phys_to_bary(t0, x));
            let g0 = ctx.metric.metric_jet(t0, bary0)?.g;
            let tt_g = g0.apply(that, that);
            let sig_tt = sigma.value(t0, bary0).apply(that, that) / tt_g;
            let ds = tt_g.sqrt();
            let mut jump = 0.0;
            for side in 0..edge.nsides {
                let (t, k) = edge.sides[side];
                let bary = clamp_bary(mesh.phys_to_bary(t, x));
                let g = ctx.metric.metric_jet(t, bary)?.g;
                let (_, n) = edge_frame(&g, mesh.ccw_edge_vec(t, k))?;
                let a = alpha.value(t, bary);
                jump += a[0] * n[0] + a[1] * n[1];
            }
            total += erule.weights[q] * len * sig_tt * jump * ds;
        }
    }
    Ok(total)
}

/// Integrated-by-parts guise of c_h.
pub fn ch_ibp(ctx: &FormContext, sigma: &dyn TensorFieldC2, alpha: &dyn OneFormField) -> Result<f64> {
    let mesh = &ctx.mesh;
    let trule = ctx.tri_rule();
    let erule = ctx.edge_rule();
    let mut total = 0.0;

    for t in 0..mesh.n_triangles() {
        let area = mesh.tri_area(t);
        for (q, &bary) in trule.points.iter().enumerate() {
            let jet = ctx.metric.metric_jet(t, bary)?;
            let dss = div_s_sigma(&jet, &sigma.jet(t, bary));
            let a = alpha.value(t, bary);
            let gi = jet.g.inverse();
            let pairing = gi.apply(dss, a);
            total -= trule.weights[q] * area * pairing * jet.g.det().sqrt();
        }
    }

    // <[[sigma(n,tau)]], alpha(tau)>: sum of per-side products, each side with
    // its own right-handed outward frame
    for e in mesh.interior_edges() {
        ctx.assert_tt_continuity(e)?;
        let edge = mesh.edge(e);
        let evec = mesh.edge_vec(e);
        let len = mesh.edge_len(e);
        let start = mesh.vertex(edge.v[0]);
        for (q, &sq) in erule.points.iter().enumerate() {
            let x = [start[0] + sq * evec[0], start[1] + sq * evec[1]];
            let (t0, _) = edge.sides[0];
            let bary0 = clamp_bary(mesh.phys_to_bary(t0, x));
            let ds = ctx.metric.metric_jet(t0, bary0)?.g.apply(evec, evec).sqrt() / len;
            let mut acc = 0.0;
            for side in 0..2 {
                let (t, k) = edge.sides[side];
                let bary = clamp_bary(mesh.phys_to_bary(t, x));
                let jet = ctx.metric.metric_jet(t, bary)?;
                let (tau, n) = edge_frame(&jet.g, mesh.ccw_edge_vec(t, k))?;
                let sig = sigma.value(t, bary);
                let a = alpha.value(t, bary);
                acc += sig.apply(n, tau) * (a[0] * tau[0] + a[1] * tau[1]);
            }
            total += erule.weights[q] * len * acc * ds;
        }
    }
    Ok(total)
}

/// Load vector over V_h: v_i -> b_h(g; sigma, phi_i), full-length.
pub fn bh_load_v(
    ctx: &FormContext,
    sigma: &dyn TensorField,
    vh: &Arc<FeSpace>,
) -> Result<Vec<f64>> {
    let mesh = &ctx.mesh;
    let trule = ctx.tri_rule();
    let erule = ctx.edge_rule();
    let mut load = vec![0.0; vh.ndof()];

    for t in 0..mesh.n_triangles() {
        let area = mesh.tri_area(t);
        for (q, &bary) in trule.points.iter().enumerate() {
            let jet = ctx.metric.metric_jet(t, bary)?;
            let gamma = christoffel(&jet);
            let s = s_operator(&jet.g, &sigma.value(t, bary));
            let w = trule.weights[q] * area * jet.g.det().sqrt();
            let basis = vh.scalar_basis(t, bary);
            for (ld, &g) in vh.l2g(t).iter().enumerate() {
                let hess = hessian_with(&gamma, &basis[ld]);
                load[g] += w * inner_sym(&jet.g, &s, &hess);
            }
        }
    }

    for e in 0..mesh.n_edges() {
        let edge = mesh.edge(e);
        let evec = mesh.edge_vec(e);
        let len = mesh.edge_len(e);
        let that = [evec[0] / len, evec[1] / len];
        let start = mesh.vertex(edge.v[0]);
        for (q, &sq) in erule.points.iter().enumerate() {
            let x = [start[0] + sq * evec[0], start[1] + sq * evec[1]];
            let (t0, _) = edge.sides[0];
            let bary0 = clamp_bary(mesh.phys_to_bary(t0, x));
            let g0 = ctx.metric.metric_jet(t0, bary0)?.g;
            let tt_g = g0.apply(that, that);
            let sig_tt = sigma.value(t0, bary0).apply(that, that) / tt_g;
            let common = erule.weights[q] * len * sig_tt * tt_g.sqrt();
            for side in 0..edge.nsides {
                let (t, k) = edge.sides[side];
                let bary = clamp_bary(mesh.phys_to_bary(t, x));
                let g = ctx.metric.metric_jet(t, bary)?.g;
                let (_, n) = edge_frame(&g, mesh.ccw_edge_vec(t, k))?;
                let basis = vh.scalar_basis(t, bary);
                for (ld, &gdof) in vh.l2g(t).iter().enumerate() {
                    let dn = basis[ld].d[0] * n[0] + basis[ld].d[1] * n[1];
                    load[gdof] += common * dn;
                }
            }
        }
    }
    // functionals on V carry zeros at constrained entries
    for i in 0..vh.ndof() {
        if vh.is_constrained(i) {
            load[i] = 0.0;
        }
    }
    Ok(load)
}

/// Load vector over W_h: alpha_i -> c_h(g; sigma, alpha_i), full-length.
pub fn ch_load_w(
    ctx: &FormContext,
    sigma: &dyn TensorField,
    wh: &Arc<FeSpace>,
) -> Result<Vec<f64>> {
    let mesh = &ctx.mesh;
    let trule = ctx.tri_rule();
    let erule = ctx.edge_rule();
    let mut load = vec![0.0; wh.ndof()];

    for t in 0..mesh.n_triangles() {
        let area = mesh.tri_area(t);
        for (q, &bary) in trule.points.iter().enumerate() {
            let jet = ctx.metric.metric_jet(t, bary)?;
            let gamma = christoffel(&jet);
            let s = s_operator(&jet.g, &sigma.value(t, bary));
            let w = trule.weights[q] * area * jet.g.det().sqrt();
            let basis = wh.oneform_basis(t, bary);
            for (ld, &g) in wh.l2g(t).iter().enumerate() {
                let grad = cov_deriv_oneform_with(&gamma, &basis[ld]);
                load[g] += w * inner_sym_full(&jet.g, &s, &grad);
            }
        }
    }

    for e in 0..mesh.n_edges() {
        let edge = mesh.edge(e);
        let evec = mesh.edge_vec(e);
        let len = mesh.edge_len(e);
        let that = [evec[0] / len, evec[1] / len];
        let start = mesh.vertex(edge.v[0]);
        for (q, &sq) in erule.points.iter().enumerate() {
            let x = [start[0] + sq * evec[0], start[1] + sq * evec[1]];
            let (t0, _) = edge.sides[0];
            let bary0 = clamp_bary(mesh.phys_to_bary(t0, x));
            let g0 = ctx.metric.metric_jet(t0, bary0)?.g;
            let tt_g = g0.apply(that, that);
            let sig_tt = sigma.value(t0, bary0).apply(that, that) / tt_g;
            let common = erule.weights[q] * len * sig_tt * tt_g.sqrt();
            for side in 0..edge.nsides {
                let (t, k) = edge.sides[side];
                let bary = clamp_bary(mesh.phys_to_bary(t, x));
                let g = ctx.metric.metric_jet(t, bary)?.g;
                let (_, n) = edge_frame(&g, mesh.ccw_edge_vec(t, k))?;
                let basis = wh.oneform_basis(t, bary);
                for (ld, &gdof) in wh.l2g(t).iter().enumerate() {
                    let an = basis[ld].a[0] * n[0] + basis[ld].a[1] * n[1];
                    load[gdof] += common * an;
                }
            }
        }
    }
    for i in 0..wh.ndof() {
        if wh.is_constrained(i) {
            load[i] = 0.0;
        }
    }
    Ok(load)
}

/// Matrix of b_h over (free V_h dofs) x (all Regge dofs):
/// B[i][j] = b_h(g; sigma_j, phi_i).
pub fn bh_matrix(
    ctx: &FormContext,
    regge: &Arc<ReggeSpace>,
    vh: &Arc<FeSpace>,
) -> Result<SparseMatrix> {
    let mesh = &ctx.mesh;
    let trule = ctx.tri_rule();
    let erule = ctx.edge_rule();
    let mut trip = Triplets::new(vh.nfree(), regge.ndof());

    for t in 0..mesh.n_triangles() {
        let area = mesh.tri_area(t);
        let l2g_r = regge.local_to_global(t);
        let nb = regge.bernstein().len();
        for (q, &bary) in trule.points.iter().enumerate() {
            let jet = ctx.metric.metric_jet(t, bary)?;
            let gamma = christoffel(&jet);
            let w = trule.weights[q] * area * jet.g.det().sqrt();
            let vbasis = vh.scalar_basis(t, bary);
            let hessians: Vec<Sym2> =
                vbasis.iter().map(|b| hessian_with(&gamma, b)).collect();
            let bern = regge.bernstein().eval(bary);
            for (ldr, &gr) in l2g_r.iter().enumerate() {
                let blocks = &regge.nodal_blocks(t)[ldr];
                let comp = |c: usize| -> f64 {
                    blocks[c].iter().zip(&bern.values).take(nb).map(|(a, b)| a * b).sum()
                };
                let sig = Sym2::new(comp(0), comp(1), comp(2));
                let s = s_operator(&jet.g, &sig);
                for (ldv, &gv) in vh.l2g(t).iter().enumerate() {
                    if let Some(fv) = vh.free_index(gv) {
                        trip.push(fv, gr, w * inner_sym(&jet.g, &s, &hessians[ldv]));
                    }
                }
            }
        }
    }

    for e in 0..mesh.n_edges() {
        let edge = mesh.edge(e);
        let evec = mesh.edge_vec(e);
        let len = mesh.edge_len(e);
        let that = [evec[0] / len, evec[1] / len];
        let start = mesh.vertex(edge.v[0]);
        let r = regge.degree;
        for (q, &sq) in erule.points.iter().enumerate() {
            let x = [start[0] + sq * evec[0], start[1] + sq * evec[1]];
            let (t0, _) = edge.sides[0];
            let bary0 = clamp_bary(mesh.phys_to_bary(t0, x));
            let g0 = ctx.metric.metric_jet(t0, bary0)?.g;
            let tt_g = g0.apply(that, that);
            // tt-traces of the edge's own Regge DOF basis (others vanish)
            let bern0 = regge.bernstein().eval(bary0);
            let l2g_r0 = regge.local_to_global(t0);
            let k0 = (0..3).position(|k| mesh.tri_edge(t0, k).0 == e).unwrap();
            let mut edge_tt = Vec::with_capacity(r + 1);
            for m in 0..=r {
                let ldr = k0 * (r + 1) + m;
                let blocks = &regge.nodal_blocks(t0)[ldr];
                let comp = |c: usize| -> f64 {
                    blocks[c].iter().zip(&bern0.values).map(|(a, b)| a * b).sum()
                };
                let sig = Sym2::new(comp(0), comp(1), comp(2));
                edge_tt.push((l2g_r0[ldr], sig.apply(that, that) / tt_g));
            }
            let common = erule.weights[q] * len * tt_g.sqrt();
            for side in 0..edge.nsides {
                let (t, k) = edge.sides[side];
                let bary = clamp_bary(mesh.phys_to_bary(t, x));
                let g = ctx.metric.metric_jet(t, bary)?.g;
                let (_, n) = edge_frame(&g, mesh.ccw_edge_vec(t, k))?;
                let basis = vh.scalar_basis(t, bary);
                for (ldv, &gv) in vh.l2g(t).iter().enumerate() {
                    let Some(fv) = vh.free_index(gv) else { continue };
                    let dn = basis[ldv].d[0] * n[0] + basis[ldv].d[1] * n[1];
                    for &(gr, tt) in &edge_tt {
                        trip.push(fv, gr, common * tt * dn);
                    }
                }
            }
        }
    }
    Ok(trip.build())
}

/// Matrix of c_h over (free W_h dofs) x (all Regge dofs):
/// C[i][j] = c_h(g; sigma_j, alpha_i).
pub fn ch_matrix(
    ctx: &FormContext,
    regge: &Arc<ReggeSpace>,
    wh: &Arc<FeSpace>,
) -> Result<SparseMatrix> {
    let mesh = &ctx.mesh;
    let trule = ctx.tri_rule();
    let erule = ctx.edge_rule();
    let mut trip = Triplets::new(wh.nfree(), regge.ndof());

    for t in 0..mesh.n_triangles() {
        let area = mesh.tri_area(t);
        let l2g_r = regge.local_to_global(t);
        for (q, &bary) in trule.points.iter().enumerate() {
            let jet = ctx.metric.metric_jet(t, bary)?;
            let gamma = christoffel(&jet);
            let w = trule.weights[q] * area * jet.g.det().sqrt();
            let wbasis = wh.oneform_basis(t, bary);
            let grads: Vec<[[f64; 2]; 2]> =
                wbasis.iter().map(|b| cov_deriv_oneform_with(&gamma, b)).collect();
            let bern = regge.bernstein().eval(bary);
            for (ldr, &gr) in l2g_r.iter().enumerate() {
                let blocks = &regge.nodal_blocks(t)[ldr];
                let comp = |c: usize| -> f64 {
                    blocks[c].iter().zip(&bern.values).map(|(a, b)| a * b).sum()
                };
                let sig = Sym2::new(comp(0), comp(1), comp(2));
                let s = s_operator(&jet.g, &sig);
                for (ldw, &gw) in wh.l2g(t).iter().enumerate() {
                    if let Some(fw) = wh.free_index(gw) {
                        trip.push(fw, gr, w * inner_sym_full(&jet.g, &s, &grads[ldw]));
                    }
                }
            }
        }
    }

    for e in 0..mesh.n_edges() {
        let edge = mesh.edge(e);
        let evec = mesh.edge_vec(e);
        let len = mesh.edge_len(e);
        let that = [evec[0] / len, evec[1] / len];
        let start = mesh.vertex(edge.v[0]);
        let r = regge.degree;
        for (q, &sq) in erule.points.iter().enumerate() {
            let x = [start[0] + sq * evec[0], start[1] + sq * evec[1]];
            let (t0, _) = edge.sides[0];
            let bary0 = clamp_bary(mesh.phys_to_bary(t0, x));
            let g0 = ctx.metric.metric_jet(t0, bary0)?.g;
            let tt_g = g0.apply(that, that);
            let bern0 = regge.bernstein().eval(bary0);
            let l2g_r0 = regge.local_to_global(t0);
            let k0 = (0..3).position(|k| mesh.tri_edge(t0, k).0 == e).unwrap();
            let mut edge_tt = Vec::with_capacity(r + 1);
            for m in 0..=r {
                let ldr = k0 * (r + 1) + m;
                let blocks = &regge.nodal_blocks(t0)[ldr];
                let comp = |c: usize| -> f64 {
                    blocks[c].iter().zip(&bern0.values).map(|(a, b)| a * b).sum()
                };
                let sig = Sym2::new(comp(0), comp(1), comp(2));
                edge_tt.push((l2g_r0[ldr], sig.apply(that, that) / tt_g));
            }
            let common = erule.weights[q] * len * tt_g.sqrt();
            for side in 0..edge.nsides {
                let (t, k) = edge.sides[side];
                let bary = clamp_bary(mesh.phys_to_bary(t, x));
                let g = ctx.metric.metric_jet(t, bary)?.g;
                let (_, n) = edge_frame(&g, mesh.ccw_edge_vec(t, k))?;
                let basis = wh.oneform_basis(t, bary);
                for (ldw, &gw) in wh.l2g(t).iter().enumerate() {
                    let Some(fw) = wh.free_index(gw) else { continue };
                    let an = basis[ldw].a[0] * n[0] + basis[ldw].a[1] * n[1];
                    for &(gr, tt) in &edge_tt {
                        trip.push(fw, gr, common * tt * an);
                    }
                }
            }
        }
    }
    Ok(trip.build())
}

/// The differential of a scalar field as a one-form field.
pub struct Differential<'a>(pub &'a dyn ScalarFieldC2);

impl<'a> OneFormField for Differential<'a> {
    fn value(&self, tri: usize, bary: [f64; 3]) -> [f64; 2] {
        self.0.jet(tri, bary).d
    }
}
impl<'a> OneFormFieldC1 for Differential<'a> {
    fn jet(&self, tri: usize, bary: [f64; 3]) -> OneFormJet {
        let j = self.0.jet(tri, bary);
        OneFormJet { a: j.d, d: [[j.d2[0], j.d2[1]], [j.d2[1], j.d2[2]]] }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fespace::{BcMode, FeFunction, FeOneForm};
    use crate::fields::{FnMetric, FnScalar, FnTensor};
    use crate::geom::{MetricJet, ScalarJet, SymTensorJet};
    use crate::regge::ReggeField;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_square(n: usize) -> Arc<Mesh> {
        Arc::new(Mesh::structured([0.0, 0.0, 1.0, 1.0], n).unwrap())
    }

    fn conformal_phi(amp: f64, x: [f64; 2]) -> ScalarJet {
        let pi = std::f64::consts::PI;
        let (sx, cx) = (pi * x[0]).sin_cos();
        let (sy, cy) = (pi * x[1]).sin_cos();
        ScalarJet {
            v: amp * sx * sy,
            d: [amp * pi * cx * sy, amp * pi * sx * cy],
            d2: [-amp * pi * pi * sx * sy, amp * pi * pi * cx * cy, -amp * pi * pi * sx * sy],
        }
    }

    fn interp_conformal(mesh: &Arc<Mesh>, r: usize, amp: f64) -> ReggeField {
        let sp = Arc::new(ReggeSpace::new(mesh.clone(), r).unwrap());
        let f = FnTensor {
            mesh: mesh.clone(),
            f: move |x: [f64; 2]| {
                SymTensorJet::from_metric(&MetricJet::conformal(&conformal_phi(amp, x)))
            },
        };
        sp.interp(&f, None).unwrap()
    }

    fn random_v(mesh: &Arc<Mesh>, k: usize, seed: u64) -> FeFunction {
        let vh = FeSpace::lagrange(mesh.clone(), k, BcMode::Essential).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let free: Vec<f64> = (0..vh.nfree()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        FeFunction::from_free(&vh, &free)
    }

    fn random_regge(space: &Arc<ReggeSpace>, seed: u64) -> ReggeField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dofs: Vec<f64> = (0..space.ndof()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        ReggeField::from_dofs(space.clone(), dofs)
    }

    /// delta + a random Regge perturbation rescaled so the deviation from
    /// the identity stays below `target` in eigenvalue terms.
    fn random_metric(space: &Arc<ReggeSpace>, seed: u64, target: f64) -> ReggeField {
        let pert = random_regge(space, seed);
        let rule = tri_rule(8).unwrap();
        let mut extreme: f64 = 0.0;
        for t in 0..space.mesh.n_triangles() {
            for &bary in &rule.points {
                let v = pert.value(t, bary);
                let lo = v.min_eigenvalue();
                let hi = v.trace() - lo;
                extreme = extreme.max(lo.abs()).max(hi.abs());
            }
        }
        let delta = space.euclidean();
        delta.lincomb(1.0, &pert, target / extreme.max(1e-12))
    }

    #[test]
    fn bh_euclidean_on_delta_vanishes() {
        let mesh = unit_square(2);
        let sp = Arc::new(ReggeSpace::new(mesh.clone(), 1).unwrap());
        let delta = sp.euclidean();
        let ctx = FormContext::new(mesh.clone(), &delta, 1);
        let v = random_v(&mesh, 2, 3);
        let val = bh_direct(&ctx, &delta, &v).unwrap();
        assert!(val.abs() < 1e-12, "b_h(delta; delta, v) = {val}");
    }

    #[test]
    fn bh_euclidean_oracle_two_triangle_square() {
        // independent Euclidean evaluation on the 2-triangle unit square:
        // sigma = E11, v = x y (1-x)(1-y)
        let mesh = unit_square(1);
        let delta = FnMetric { mesh: mesh.clone(), f: |_| MetricJet::euclidean() };
        let sigma = FnTensor {
            mesh: mesh.clone(),
            f: |_| SymTensorJet::constant(Sym2::new(1.0, 0.0, 0.0)),
        };
        let v = FnScalar {
            mesh: mesh.clone(),
            f: |p: [f64; 2]| {
                let (x, y) = (p[0], p[1]);
                ScalarJet {
                    v: x * y * (1.0 - x) * (1.0 - y),
                    d: [
                        (1.0 - 2.0 * x) * y * (1.0 - y),
                        x * (1.0 - x) * (1.0 - 2.0 * y),
                    ],
                    d2: [
                        -2.0 * y * (1.0 - y),
                        (1.0 - 2.0 * x) * (1.0 - 2.0 * y),
                        -2.0 * x * (1.0 - x),
                    ],
                }
            },
        };
        let ctx = FormContext::new(mesh.clone(), &delta, 2);
        let got = bh_direct(&ctx, &sigma, &v).unwrap();

        // oracle coded independently with plain Euclidean calculus:
        // S sigma = diag(0,-1); <S sigma, D^2 v> = -v_yy
        let trule = tri_rule(10).unwrap();
        let mut oracle = 0.0;
        for t in 0..mesh.n_triangles() {
            let area = mesh.tri_area(t);
            for (q, &bary) in trule.points.iter().enumerate() {
                let p = mesh.bary_to_phys(t, bary);
                let vyy = -2.0 * p[0] * (1.0 - p[0]);
                oracle += trule.weights[q] * area * (-vyy);
            }
        }
        // edge term: sigma(t,t) [[dv/dn]] with Euclidean outward normals
        let erule = edge_rule(10).unwrap();
        for e in 0..mesh.n_edges() {
            let edge = mesh.edge(e);
            let evec = mesh.edge_vec(e);
            let len = mesh.edge_len(e);
            let that = [evec[0] / len, evec[1] / len];
            let sig_tt = that[0] * that[0]; // E11(t,t)
            let start = mesh.vertex(edge.v[0]);
            for (q, &s) in erule.points.iter().enumerate() {
                let p = [start[0] + s * evec[0], start[1] + s * evec[1]];
                let dv = [
                    (1.0 - 2.0 * p[0]) * p[1] * (1.0 - p[1]),
                    p[0] * (1.0 - p[0]) * (1.0 - 2.0 * p[1]),
                ];
                let mut jump = 0.0;
                for side in 0..edge.nsides {
                    let (t, k) = edge.sides[side];
                    let tv = mesh.ccw_edge_vec(t, k);
                    let tn = (tv[0] * tv[0] + tv[1] * tv[1]).sqrt();
                    let n = [tv[1] / tn, -tv[0] / tn]; // Euclidean outward
                    jump += dv[0] * n[0] + dv[1] * n[1];
                }
                oracle += erule.weights[q] * len * sig_tt * jump;
            }
        }
        assert!((got - oracle).abs() < 1e-12 * oracle.abs().max(1.0), "{got} vs {oracle}");
    }

    #[test]
    fn bh_guise_equivalence_random() {
        let mut case = 0u64;
        for n in [2usize, 4] {
            let mesh = unit_square(n);
            for r in [1usize, 2] {
                let sp = Arc::new(ReggeSpace::new(mesh.clone(), r).unwrap());
                for _ in 0..3 {
                    case += 1;
                    let g = random_metric(&sp, 900 + case, 0.03);
                    let sigma = random_regge(&sp, 100 + case);
                    let v = random_v(&mesh, r + 1, 200 + case);
                    let ctx = FormContext::new(mesh.clone(), &g, r);
                    let direct = bh_direct(&ctx, &sigma, &v).unwrap();
                    let ibp = bh_ibp(&ctx, &sigma, &v).unwrap();
                    let scale = direct.abs().max(ibp.abs()).max(1e-3);
                    assert!(
                        (direct - ibp).abs() <= 1e-9 * scale,
                        "n={n} r={r}: {direct} vs {ibp}"
                    );
                }
            }
        }
    }

    #[test]
    fn bh_guises_strong_metric_boosted() {
        // formula check away from delta: boosted quadrature makes the
        // remaining defect pure algebra
        for r in [1usize, 2] {
            let mesh = unit_square(2);
            let g = interp_conformal(&mesh, r, 0.3);
            let v = random_v(&mesh, r + 1, 17 + r as u64);
            let sigma = random_regge(&g.space, 23 + r as u64);
            let ctx = FormContext::new(mesh.clone(), &g, r).with_boost(14);
            let direct = bh_direct(&ctx, &sigma, &v).unwrap();
            let ibp = bh_ibp(&ctx, &sigma, &v).unwrap();
            assert!(
                (direct - ibp).abs() < 1e-10 * direct.abs().max(1.0),
                "r={r}: {direct} vs {ibp}"
            );
        }
    }

    #[test]
    fn bh_guises_with_sigma_equal_g() {
        let mesh = unit_square(2);
        let sp = Arc::new(ReggeSpace::new(mesh.clone(), 2).unwrap());
        let g = random_metric(&sp, 41, 0.03);
        let v = random_v(&mesh, 3, 17);
        let ctx = FormContext::new(mesh.clone(), &g, 2);
        let direct = bh_direct(&ctx, &g, &v).unwrap();
        let ibp = bh_ibp(&ctx, &g, &v).unwrap();
        assert!((direct - ibp).abs() < 1e-9 * direct.abs().max(1.0));
    }

    #[test]
    fn bh_ibp_piecewise_constant_vertex_term_only() {
        // piecewise constant sigma: interior and edge integrands vanish for
        // g = delta; for sigma = delta even the vertex term is zero
        let mesh = unit_square(2);
        let sp = Arc::new(ReggeSpace::new(mesh.clone(), 0).unwrap());
        let delta = sp.euclidean();
        let ctx = FormContext::new(mesh.clone(), &delta, 0);
        let v = random_v(&mesh, 1, 5);
        let val = bh_ibp(&ctx, &delta, &v).unwrap();
        assert!(val.abs() < 1e-13);
        // a random piecewise-constant sigma: only the vertex term survives;
        // cross-check the full ibp value against the direct guise
        let sigma = random_regge(&sp, 31);
        let direct = bh_direct(&ctx, &sigma, &v).unwrap();
        let ibp = bh_ibp(&ctx, &sigma, &v).unwrap();
        assert!((direct - ibp).abs() < 1e-10 * direct.abs().max(1.0), "{direct} vs {ibp}");
    }

    #[test]
    fn ch_euclidean_on_delta_vanishes() {
        let mesh = unit_square(2);
        let sp = Arc::new(ReggeSpace::new(mesh.clone(), 1).unwrap());
        let delta = sp.euclidean();
        let ctx = FormContext::new(mesh.clone(), &delta, 1);
        let wh = FeSpace::edge_oneform(mesh.clone(), 2, BcMode::Essential).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let free: Vec<f64> = (0..wh.nfree()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let alpha = FeOneForm::from_free(&wh, &free);
        let val = ch_direct(&ctx, &delta, &alpha).unwrap();
        assert!(val.abs() < 1e-12, "c_h(delta; delta, alpha) = {val}");
    }

    #[test]
    fn ch_dv_equals_bh() {
        for (n, r) in [(2usize, 1usize), (2, 2), (4, 1)] {
            let mesh = unit_square(n);
            let g = interp_conformal(&mesh, r, 0.25);
            let sp = g.space.clone();
            let sigma = random_regge(&sp, 50 + n as u64 + r as u64);
            let v = random_v(&mesh, r + 1, 60 + n as u64 * 3 + r as u64);
            let ctx = FormContext::new(mesh.clone(), &g, r);
            let bh = bh_direct(&ctx, &sigma, &v).unwrap();
            let ch = ch_direct(&ctx, &sigma, &Differential(&v)).unwrap();
            assert!((bh - ch).abs() <= 1e-10 * bh.abs().max(1.0), "{bh} vs {ch}");
        }
    }

    #[test]
    fn ch_guise_equivalence_random() {
        for n in [2usize, 4] {
            let mesh = unit_square(n);
            for r in [1usize, 2] {
                let sp = Arc::new(ReggeSpace::new(mesh.clone(), r).unwrap());
                let g = random_metric(&sp, 71 + n as u64 + r as u64, 0.03);
                let sigma = random_regge(&sp, 81 + n as u64 + r as u64);
                let wh = FeSpace::edge_oneform(mesh.clone(), r + 1, BcMode::Essential).unwrap();
                let mut rng = ChaCha8Rng::seed_from_u64(91 + n as u64 + r as u64);
                let free: Vec<f64> = (0..wh.nfree()).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let alpha = FeOneForm::from_free(&wh, &free);
                let ctx = FormContext::new(mesh.clone(), &g, r);
                let direct = ch_direct(&ctx, &sigma, &alpha).unwrap();
                let ibp = ch_ibp(&ctx, &sigma, &alpha).unwrap();
                let scale = direct.abs().max(ibp.abs()).max(1e-3);
                assert!((direct - ibp).abs() <= 1e-9 * scale, "n={n} r={r}: {direct} vs {ibp}");
            }
        }
    }

    #[test]
    fn matrix_actions_match_scalar_assembly() {
        let mesh = unit_square(2);
        let r = 1;
        let g = interp_conformal(&mesh, r, 0.3);
        let sp = g.space.clone();
        let vh = FeSpace::lagrange(mesh.clone(), r + 1, BcMode::Essential).unwrap();
        let wh = FeSpace::edge_oneform(mesh.clone(), r + 1, BcMode::Essential).unwrap();
        let ctx = FormContext::new(mesh.clone(), &g, r);
        let b = bh_matrix(&ctx, &sp, &vh).unwrap();
        let c = ch_matrix(&ctx, &sp, &wh).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for case in 0..20 {
            let sigma = random_regge(&sp, 300 + case);
            let vfree: Vec<f64> = (0..vh.nfree()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let v = FeFunction::from_free(&vh, &vfree);
            let bv = b.matvec(&sigma.dofs);
            let matrix_val: f64 = bv.iter().zip(&vfree).map(|(a, b)| a * b).sum();
            let scalar_val = bh_direct(&ctx, &sigma, &v).unwrap();
            assert!(
                (matrix_val - scalar_val).abs() <= 1e-12 * scalar_val.abs().max(1.0),
                "case {case}: {matrix_val} vs {scalar_val}"
            );
            let wfree: Vec<f64> = (0..wh.nfree()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let alpha = FeOneForm::from_free(&wh, &wfree);
            let cv = c.matvec(&sigma.dofs);
            let matrix_val: f64 = cv.iter().zip(&wfree).map(|(a, b)| a * b).sum();
            let scalar_val = ch_direct(&ctx, &sigma, &alpha).unwrap();
            assert!(
                (matrix_val - scalar_val).abs() <= 1e-12 * scalar_val.abs().max(1.0),
                "case {case} (c_h): {matrix_val} vs {scalar_val}"
            );
        }
    }

    #[test]
    fn bh_matrix_is_d0t_times_ch_matrix() {
        // b_h(g; sigma, v) = c_h(g; sigma, dv) pointwise, so B = D0^T C
        let mesh = unit_square(2);
        let r = 1;
        let g = interp_conformal(&mesh, r, 0.35);
        let sp = g.space.clone();
        let vh = FeSpace::lagrange(mesh.clone(), r + 1, BcMode::Essential).unwrap();
        let wh = FeSpace::edge_oneform(mesh.clone(), r + 1, BcMode::Essential).unwrap();
        let ctx = FormContext::new(mesh.clone(), &g, r);
        let b = bh_matrix(&ctx, &sp, &vh).unwrap().to_dense();
        let c = ch_matrix(&ctx, &sp, &wh).unwrap().to_dense();
        let d0 = crate::fespace::d0_matrix(&vh, &wh).unwrap().to_dense();
        let prod = d0.transpose() * c;
        assert!((b.clone() - prod).norm() <= 1e-11 * b.norm());
    }

    #[test]
    fn euclidean_kernel_deformations() {
        // b_h(delta; eps u, v) = 0 for continuous piecewise polynomial u
        let mesh = unit_square(2);
        let sp = Arc::new(ReggeSpace::new(mesh.clone(), 1).unwrap());
        let delta = sp.euclidean();
        let ctx = FormContext::new(mesh.clone(), &delta, 1);
        let uh = FeSpace::lagrange_vector(mesh.clone(), 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for case in 0..5 {
            let coeffs: Vec<f64> = (0..uh.ndof()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let u = crate::fespace::FeVectorField { space: uh.clone(), coeffs };
            let eps = crate::fespace::Deformation { u: &u, g: &crate::fespace::EuclideanMetric };
            let v = random_v(&mesh, 2, 400 + case);
            let val = bh_direct(&ctx, &eps, &v).unwrap();
            assert!(val.abs() < 1e-11, "case {case}: {val}");
        }
    }

    #[test]
    fn quadrature_refinement_stability() {
        // convergence-study regime: interpolated conformal metric, amp 0.2
        for r in [1usize, 2] {
            let mesh = unit_square(4);
            let g = interp_conformal(&mesh, r, 0.2);
            let sigma = random_regge(&g.space, 77 + r as u64);
            let v = random_v(&mesh, r + 1, 78 + r as u64);
            let base = {
                let ctx = FormContext::new(mesh.clone(), &g, r);
                bh_direct(&ctx, &sigma, &v).unwrap()
            };
            let boosted = {
                let ctx = FormContext::new(mesh.clone(), &g, r).with_boost(2 * r + 10);
                bh_direct(&ctx, &sigma, &v).unwrap()
            };
            assert!(
                (base - boosted).abs() <= 1e-10 * base.abs().max(1.0),
                "r={r}: {base} vs {boosted}"
            );
        }
    }

    #[test]
    fn fault_injection_changes_bh() {
        let mesh = unit_square(2);
        let g = interp_conformal(&mesh, 1, 0.3);
        let sigma = random_regge(&g.space, 5);
        let v = random_v(&mesh, 2, 6);
        let honest = bh_direct(&FormContext::new(mesh.clone(), &g, 1), &sigma, &v).unwrap();
        let faulty = bh_direct(
            &FormContext::new(mesh.clone(), &g, 1).with_fault(Fault::FlipNormalJumpSign),
            &sigma,
            &v,
        )
        .unwrap();
        assert!((honest - faulty).abs() > 1e-6 * honest.abs().max(1.0));
    }
}
