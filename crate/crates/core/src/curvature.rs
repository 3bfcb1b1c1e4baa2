//! Distributional curvature of Regge metrics and its finite element
//! projections: angle defects, geodesic-curvature jumps, the distributional
//! curvature two-form, the discrete Gaussian curvature, and the canonical
//! distributional/discrete Levi-Civita connection one-forms obtained by
//! integrating -1/2 c_h along the metric segment (1-t) delta + t g.

use std::sync::Arc;

use serde::Serialize;

use crate::fespace::{FeFunction, FeOneForm, FeSpace, Functional, SpaceKind};
use crate::fields::{MetricGiver, OneFormField, ScalarField, TensorField};
use crate::forms::{bh_load_v, ch_load_w, FormContext, QuadConfig};
use crate::geom::{
    div_s_sigma, gauss_curvature, geodesic_curvature, hodge_star_oneform, interior_angle,
    MetricJet, Sym2, SymTensorJet,
};
use crate::mesh::Mesh;
use crate::polyquad::{edge_rule, tri_rule, gauss_legendre};
use crate::regge::{clamp_bary, ReggeField};
use crate::{Error, Result};

/// Decomposition of the distributional curvature action.
#[derive(Debug, Clone, Serialize)]
pub struct CurvatureReport {
    /// Integral of kappa_T v omega per triangle.
    pub per_triangle: Vec<f64>,
    /// (edge id, integral of [[k_e]] v ds) per interior edge.
    pub per_edge: Vec<(usize, f64)>,
    /// (vertex id, angle defect, Theta_z v(z)) per interior vertex.
    pub per_vertex: Vec<(usize, f64, f64)>,
    pub total: f64,
}

impl CurvatureReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializes")
    }
}

/// Angle defect Theta_z = 2 pi - sum of interior angles at an interior
/// vertex, each measured by the incident triangle's own metric.
pub fn angle_defect(g: &ReggeField, z: usize) -> Result<f64> {
    let mesh = g.mesh().clone();
    if mesh.vertex_is_boundary(z) {
        return Err(Error::Mismatch(format!("vertex {z} is on the boundary")));
    }
    let mut sum = 0.0;
    for &t in mesh.star(z) {
        let tri = mesh.triangle(t);
        let pos = tri.iter().position(|&v| v == z).unwrap();
        let mut bary = [0.0; 3];
        bary[pos] = 1.0;
        let gval = g.value(t, bary);
        if !gval.is_spd() {
            return Err(Error::NotPositiveDefinite {
                what: "Regge metric".into(),
                location: format!("vertex {z}, triangle {t}"),
            });
        }
        let pz = mesh.vertex(z);
        let (pa, pb) = (mesh.vertex(tri[(pos + 1) % 3]), mesh.vertex(tri[(pos + 2) % 3]));
        let t1 = [pa[0] - pz[0], pa[1] - pz[1]];
        let t2 = [pb[0] - pz[0], pb[1] - pz[1]];
        sum += interior_angle(&gval, t1, t2)?;
    }
    Ok(2.0 * std::f64::consts::PI - sum)
}

/// Jump of the geodesic curvature across an interior edge at global edge
/// parameter s: the sum of the two one-sided geodesic curvatures, each with
/// its own outward frame.
pub fn jump_geodesic_at(g: &ReggeField, e: usize, s: f64) -> Result<f64> {
    let mesh = g.mesh().clone();
    if mesh.edge_is_boundary(e) {
        return Err(Error::Mismatch(format!("edge {e} is on the boundary")));
    }
    let edge = mesh.edge(e);
    let evec = mesh.edge_vec(e);
    let start = mesh.vertex(edge.v[0]);
    let x = [start[0] + s * evec[0], start[1] + s * evec[1]];
    let mut jump = 0.0;
    for side in 0..2 {
        let (t, k) = edge.sides[side];
        let jet = g.metric_jet(t, clamp_bary(mesh.phys_to_bary(t, x)))?;
        jump += geodesic_curvature(&jet, mesh.ccw_edge_vec(t, k))?;
    }
    Ok(jump)
}

/// Action of the distributional curvature two-form of `g` on `v`, decomposed
/// into triangle, interior-edge, and interior-vertex contributions.
pub fn distributional_curvature(
    g: &ReggeField,
    v: &dyn ScalarField,
    quad: QuadConfig,
) -> Result<(f64, CurvatureReport)> {
    let mesh = g.mesh().clone();
    let qdeg = (2 * g.degree() + 10 + quad.boost).min(crate::polyquad::MAX_QUAD_DEGREE);
    let trule = tri_rule(qdeg)?;
    let erule = edge_rule(qdeg)?;

    let mut per_triangle = Vec::with_capacity(mesh.n_triangles());
    for t in 0..mesh.n_triangles() {
        let area = mesh.tri_area(t);
        let mut acc = 0.0;
        for (q, &bary) in trule.points.iter().enumerate() {
            let jet = g.metric_jet(t, bary)?;
            let kappa = gauss_curvature(&jet)?;
            acc += trule.weights[q] * area * kappa * v.value(t, bary) * jet.g.det().sqrt();
        }
        per_triangle.push(acc);
    }

    let mut per_edge = Vec::new();
    for e in mesh.interior_edges() {
        let edge = mesh.edge(e);
        let evec = mesh.edge_vec(e);
        let len = mesh.edge_len(e);
        let start = mesh.vertex(edge.v[0]);
        let mut acc = 0.0;
        for (q, &s) in erule.points.iter().enumerate() {
            let x = [start[0] + s * evec[0], start[1] + s * evec[1]];
            let (t0, _) = edge.sides[0];
            let bary0 = clamp_bary(mesh.phys_to_bary(t0, x));
            let ds = g.metric_jet(t0, bary0)?.g.apply(evec, evec).sqrt() / len;
            let mut jmp = 0.0;
            for side in 0..2 {
                let (t, k) = edge.sides[side];
                let jet = g.metric_jet(t, clamp_bary(mesh.phys_to_bary(t, x)))?;
                jmp += geodesic_curvature(&jet, mesh.ccw_edge_vec(t, k))?;
            }
            acc += erule.weights[q] * len * jmp * v.value(t0, bary0) * ds;
        }
        per_edge.push((e, acc));
    }

    let mut per_vertex = Vec::new();
    for z in mesh.interior_vertices() {
        let defect = angle_defect(g, z)?;
        let t = mesh.star(z)[0];
        let pos = mesh.triangle(t).iter().position(|&v| v == z).unwrap();
        let mut bary = [0.0; 3];
        bary[pos] = 1.0;
        per_vertex.push((z, defect, defect * v.value(t, bary)));
    }

    let total = per_triangle.iter().sum::<f64>()
        + per_edge.iter().map(|p| p.1).sum::<f64>()
        + per_vertex.iter().map(|p| p.2).sum::<f64>();
    Ok((total, CurvatureReport { per_triangle, per_edge, per_vertex, total }))
}

/// Load vector over V_h: phi_i -> <(kappa omega)_dist(g), phi_i>.
pub fn curvature_load_v(
    g: &ReggeField,
    vh: &Arc<FeSpace>,
    quad: QuadConfig,
) -> Result<Functional> {
    assert_eq!(vh.kind, SpaceKind::LagrangeScalar);
    let mesh = g.mesh().clone();
    let qdeg = (2 * g.degree() + 10 + quad.boost).min(crate::polyquad::MAX_QUAD_DEGREE);
    let trule = tri_rule(qdeg)?;
    let erule = edge_rule(qdeg)?;
    let mut load = vec![0.0; vh.ndof()];

    for t in 0..mesh.n_triangles() {
        let area = mesh.tri_area(t);
        for (q, &bary) in trule.points.iter().enumerate() {
            let jet = g.metric_jet(t, bary)?;
            let kappa = gauss_curvature(&jet)?;
            let w = trule.weights[q] * area * kappa * jet.g.det().sqrt();
            let basis = vh.scalar_basis(t, bary);
            for (ld, &gd) in vh.l2g(t).iter().enumerate() {
                load[gd] += w * basis[ld].v;
            }
        }
    }

    for e in mesh.interior_edges() {
        let edge = mesh.edge(e);
        let evec = mesh.edge_vec(e);
        let len = mesh.edge_len(e);
        let start = mesh.vertex(edge.v[0]);
        for (q, &s) in erule.points.iter().enumerate() {
            let x = [start[0] + s * evec[0], start[1] + s * evec[1]];
            let (t0, _) = edge.sides[0];
            let bary0 = clamp_bary(mesh.phys_to_bary(t0, x));
            let ds = g.metric_jet(t0, bary0)?.g.apply(evec, evec).sqrt() / len;
            let mut jmp = 0.0;
            for side in 0..2 {
                let (t, k) = edge.sides[side];
                let jet = g.metric_jet(t, clamp_bary(mesh.phys_to_bary(t, x)))?;
                jmp += geodesic_curvature(&jet, mesh.ccw_edge_vec(t, k))?;
            }
            let w = erule.weights[q] * len * jmp * ds;
            let basis = vh.scalar_basis(t0, bary0);
            for (ld, &gd) in vh.l2g(t0).iter().enumerate() {
                load[gd] += w * basis[ld].v;
            }
        }
    }

    // vertex term: the vertex-value DOF-dual basis function is 1 at its
    // vertex and every other basis function vanishes there
    for z in mesh.interior_vertices() {
        load[z] += angle_defect(g, z)?;
    }

    for i in 0..vh.ndof() {
        if vh.is_constrained(i) {
            load[i] = 0.0;
        }
    }
    Ok(Functional { space: vh.clone(), load })
}

/// Discrete Gaussian curvature: the g-weighted V_h Riesz representative of
/// the distributional curvature.
pub fn discrete_curvature(
    g: &ReggeField,
    vh: &Arc<FeSpace>,
    quad: QuadConfig,
) -> Result<FeFunction> {
    let load = curvature_load_v(g, vh, quad)?;
    let qdeg = 2 * g.degree() + 10 + quad.boost;
    let coeffs = vh.project(&load.load, Some(g), qdeg)?;
    Ok(FeFunction { space: vh.clone(), coeffs })
}

/// Adaptive composite Gauss-Legendre (5-point panels, halving until the
/// panel-sum change is below `tol` relative, panel cap 2^10) of a
/// vector-valued integrand on [0,1].
pub struct TimeQuadInfo {
    pub panels: usize,
    pub rel_change: f64,
}

pub fn adaptive_time_quad(
    f: &mut dyn FnMut(f64) -> Result<Vec<f64>>,
    tol: f64,
) -> Result<(Vec<f64>, TimeQuadInfo)> {
    let (nodes, weights) = gauss_legendre(5);
    let eval_panels = |f: &mut dyn FnMut(f64) -> Result<Vec<f64>>,
                       panels: usize|
     -> Result<Vec<f64>> {
        let mut acc: Option<Vec<f64>> = None;
        let width = 1.0 / panels as f64;
        for p in 0..panels {
            for (i, &xi) in nodes.iter().enumerate() {
                let t = (p as f64 + 0.5 * (1.0 + xi)) * width;
                let v = f(t)?;
                let w = 0.5 * weights[i] * width;
                match &mut acc {
                    None => acc = Some(v.iter().map(|x| w * x).collect()),
                    Some(a) => {
                        for (ai, vi) in a.iter_mut().zip(&v) {
                            *ai += w * vi;
                        }
                    }
                }
            }
        }
        Ok(acc.expect("at least one panel"))
    };
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut panels = 1usize;
    let mut prev = eval_panels(f, panels)?;
    loop {
        panels *= 2;
        let next = eval_panels(f, panels)?;
        let diff: Vec<f64> = next.iter().zip(&prev).map(|(a, b)| a - b).collect();
        let rel = norm(&diff) / norm(&next).max(1e-300);
        // absolute floor: a vanishing integrand only produces round-off noise
        if norm(&diff) <= tol * norm(&next) + 1e-14 {
            return Ok((next, TimeQuadInfo { panels, rel_change: rel }));
        }
        if panels >= 1 << 10 {
            return Err(Error::TimeQuadrature { achieved: rel, target: tol });
        }
        prev = next;
    }
}

/// Relative tolerance of the adaptive time quadrature.
pub const TIME_QUAD_TOL: f64 = 1e-10;

/// Load vector of the canonical distributional connection one-form over W_h:
/// alpha_i -> -1/2 int_0^1 c_h((1-t) delta + t g; g - delta, alpha_i) dt.
pub fn connection_load_w(
    g: &ReggeField,
    wh: &Arc<FeSpace>,
    quad: QuadConfig,
) -> Result<(Functional, TimeQuadInfo)> {
    assert_eq!(wh.kind, SpaceKind::EdgeOneForm);
    let delta = g.space.euclidean();
    let sigma = g.lincomb(1.0, &delta, -1.0);
    let mesh = g.mesh().clone();
    let mut eval = |t: f64| -> Result<Vec<f64>> {
        let gt = delta.lincomb(1.0 - t, g, t);
        let mut ctx = FormContext::new(mesh.clone(), &gt, g.degree());
        ctx.quad = quad;
        let load = ch_load_w(&ctx, &sigma, wh)?;
        Ok(load.iter().map(|v| -0.5 * v).collect())
    };
    let (load, info) = adaptive_time_quad(&mut eval, TIME_QUAD_TOL)?;
    Ok((Functional { space: wh.clone(), load }, info))
}

/// Canonical connection one-form: the distributional load over W_h, or its
/// g-weighted Riesz representative in W_h (the discrete connection).
pub enum ConnectionForm {
    Distributional(Functional),
    Discrete(FeOneForm),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConnectionTarget {
    Distributional,
    Discrete,
}

pub struct ConnectionOneForm {
    pub form: ConnectionForm,
    pub time_quad: TimeQuadInfo,
}

pub fn canonical_connection(
    g: &ReggeField,
    wh: &Arc<FeSpace>,
    target: ConnectionTarget,
    quad: QuadConfig,
) -> Result<ConnectionOneForm> {
    let (load, time_quad) = connection_load_w(g, wh, quad)?;
    let form = match target {
        ConnectionTarget::Distributional => ConnectionForm::Distributional(load),
        ConnectionTarget::Discrete => {
            let qdeg = 2 * g.degree() + 10 + quad.boost;
            let coeffs = wh.project(&load.load, Some(g), qdeg)?;
            ConnectionForm::Discrete(FeOneForm { space: wh.clone(), coeffs })
        }
    };
    Ok(ConnectionOneForm { form, time_quad })
}

/// The discrete curvature through the time-integral formula
/// <kappa_h, v>_g = 1/2 int_0^1 b_h((1-t) delta + t g; g - delta, v) dt.
pub fn disccurvint_load_v(
    g: &ReggeField,
    vh: &Arc<FeSpace>,
    quad: QuadConfig,
) -> Result<(Functional, TimeQuadInfo)> {
    assert_eq!(vh.kind, SpaceKind::LagrangeScalar);
    let delta = g.space.euclidean();
    let sigma = g.lincomb(1.0, &delta, -1.0);
    let mesh = g.mesh().clone();
    let mut eval = |t: f64| -> Result<Vec<f64>> {
        let gt = delta.lincomb(1.0 - t, g, t);
        let mut ctx = FormContext::new(mesh.clone(), &gt, g.degree());
        ctx.quad = quad;
        let load = bh_load_v(&ctx, &sigma, vh)?;
        Ok(load.iter().map(|v| 0.5 * v).collect())
    };
    let (load, info) = adaptive_time_quad(&mut eval, TIME_QUAD_TOL)?;
    Ok((Functional { space: vh.clone(), load }, info))
}

/// Pointwise reference connection one-form of a smooth metric:
/// A(x) = -1/2 int_0^1 star_G div_G S_G (g - delta) dt along
/// G(t) = (1-t) delta + t g.
pub fn reference_connection_pointwise(
    gjet: &MetricJet,
    t_tol: f64,
) -> Result<[f64; 2]> {
    let sigma = SymTensorJet {
        value: gjet.g.sub(&Sym2::IDENTITY),
        grad: gjet.dg,
        hess: gjet.d2g,
    };
    let mut eval = |t: f64| -> Result<Vec<f64>> {
        let gt = MetricJet {
            g: Sym2::IDENTITY.scale(1.0 - t).add(&gjet.g.scale(t)),
            dg: [gjet.dg[0].scale(t), gjet.dg[1].scale(t)],
            d2g: [gjet.d2g[0].scale(t), gjet.d2g[1].scale(t), gjet.d2g[2].scale(t)],
        };
        let dss = div_s_sigma(&gt, &sigma);
        let star = hodge_star_oneform(&gt.g, dss);
        Ok(vec![-0.5 * star[0], -0.5 * star[1]])
    };
    let (a, _) = adaptive_time_quad(&mut eval, t_tol)?;
    Ok([a[0], a[1]])
}

/// Load vector over W_h of the reference action <star_g A(g), alpha>_{g,S}
/// for a smooth closed-form metric.
pub fn reference_connection_load(
    mesh: &Arc<Mesh>,
    gjet_at: &dyn Fn([f64; 2]) -> MetricJet,
    wh: &Arc<FeSpace>,
    qdeg: usize,
) -> Result<Vec<f64>> {
    assert_eq!(wh.kind, SpaceKind::EdgeOneForm);
    let trule = tri_rule(qdeg.min(crate::polyquad::MAX_QUAD_DEGREE))?;
    let mut load = vec![0.0; wh.ndof()];
    for t in 0..mesh.n_triangles() {
        let area = mesh.tri_area(t);
        for (q, &bary) in trule.points.iter().enumerate() {
            let x = mesh.bary_to_phys(t, bary);
            let jet = gjet_at(x);
            let a = reference_connection_pointwise(&jet, TIME_QUAD_TOL)?;
            let beta = hodge_star_oneform(&jet.g, a);
            let gi = jet.g.inverse();
            let w = trule.weights[q] * area * jet.g.det().sqrt();
            let basis = wh.oneform_basis(t, bary);
            for (ld, &gd) in wh.l2g(t).iter().enumerate() {
                load[gd] += w * gi.apply(beta, basis[ld].a);
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

/// Scalar action <star_g A(g), alpha>_{g,S} of the reference connection on a
/// given one-form field.
pub fn reference_connection_action(
    mesh: &Arc<Mesh>,
    gjet_at: &dyn Fn([f64; 2]) -> MetricJet,
    alpha: &dyn OneFormField,
    qdeg: usize,
) -> Result<f64> {
    let trule = tri_rule(qdeg.min(crate::polyquad::MAX_QUAD_DEGREE))?;
    let mut total = 0.0;
    for t in 0..mesh.n_triangles() {
        let area = mesh.tri_area(t);
        for (q, &bary) in trule.points.iter().enumerate() {
            let x = mesh.bary_to_phys(t, bary);
            let jet = gjet_at(x);
            let a = reference_connection_pointwise(&jet, TIME_QUAD_TOL)?;
            let beta = hodge_star_oneform(&jet.g, a);
            let gi = jet.g.inverse();
            total += trule.weights[q]
                * area
                * jet.g.det().sqrt()
                * gi.apply(beta, alpha.value(t, bary));
        }
    }
    Ok(total)
}

/// Simple `index,value` CSV export of a coefficient vector.
pub fn coeffs_to_csv(coeffs: &[f64]) -> String {
    let mut s = String::from("index,value\n");
    for (i, v) in coeffs.iter().enumerate() {
        s.push_str(&format!("{i},{v:.17e}\n"));
    }
    s
}

/// A fan of `m` triangles around the origin with outer radius 1 (used for
/// cone-metric tests; every interior edge is a spoke through the center).
pub fn fan_mesh(m: usize) -> Result<Mesh> {
    let mut vertices = vec![[0.0, 0.0]];
    for k in 0..m {
        let a = 2.0 * std::f64::consts::PI * k as f64 / m as f64;
        vertices.push([a.cos(), a.sin()]);
    }
    let triangles: Vec<[usize; 3]> =
        (0..m - 1).map(|k| [0, k + 1, k + 2]).collect();
    Mesh::from_parts(vertices, triangles)
}

/// Closed fan: m triangles covering the full disk.
pub fn closed_fan_mesh(m: usize) -> Result<Mesh> {
    let mut vertices = vec![[0.0, 0.0]];
    for k in 0..m {
        let a = 2.0 * std::f64::consts::PI * k as f64 / m as f64;
        vertices.push([a.cos(), a.sin()]);
    }
    let triangles: Vec<[usize; 3]> =
        (0..m).map(|k| [0, k + 1, (k + 1) % m + 1]).collect();
    Mesh::from_parts(vertices, triangles)
}

/// The piecewise constant Regge metric with prescribed squared edge lengths.
pub fn regge_from_squared_lengths(
    space: &Arc<crate::regge::ReggeSpace>,
    sq_lengths: &dyn Fn(usize) -> f64,
) -> ReggeField {
    assert_eq!(space.degree, 0);
    let mesh = &space.mesh;
    let mut dofs = vec![0.0; space.ndof()];
    for e in 0..mesh.n_edges() {
        // r = 0 edge DOF is the mean of sigma(t,t) along the unit tangent:
        // squared metric length / squared Euclidean length
        let len = mesh.edge_len(e);
        dofs[space.edge_dof(e, 0)] = sq_lengths(e) / (len * len);
    }
    ReggeField::from_dofs(space.clone(), dofs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fespace::BcMode;
    use crate::fespace::{d0_matrix, d1_matrix};
    use crate::fields::{FnScalar, FnTensor};
    use crate::geom::edge_frame;
    use crate::geom::ScalarJet;
    use crate::regge::ReggeSpace;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_square(n: usize) -> Arc<Mesh> {
        Arc::new(Mesh::structured([0.0, 0.0, 1.0, 1.0], n).unwrap())
    }

    fn conformal_interp(mesh: &Arc<Mesh>, r: usize, amp: f64) -> ReggeField {
        let sp = Arc::new(ReggeSpace::new(mesh.clone(), r).unwrap());
        let f = FnTensor {
            mesh: mesh.clone(),
            f: move |x: [f64; 2]| {
                let pi = std::f64::consts::PI;
                let (sx, cx) = (pi * x[0]).sin_cos();
                let (sy, cy) = (pi * x[1]).sin_cos();
                SymTensorJet::from_metric(&MetricJet::conformal(&ScalarJet {
                    v: amp * sx * sy,
                    d: [amp * pi * cx * sy, amp * pi * sx * cy],
                    d2: [
                        -amp * pi * pi * sx * sy,
                        amp * pi * pi * cx * cy,
                        -amp * pi * pi * sx * sy,
                    ],
                }))
            },
        };
        sp.interp(&f, None).unwrap()
    }

    fn one(mesh: &Arc<Mesh>) -> FnScalar<impl Fn([f64; 2]) -> ScalarJet> {
        FnScalar { mesh: mesh.clone(), f: |_x| ScalarJet { v: 1.0, d: [0.0; 2], d2: [0.0; 3] } }
    }

    #[test]
    fn angle_defect_flat_and_cone() {
        // flat fan: zero defect
        let mesh = Arc::new(closed_fan_mesh(6).unwrap());
        let sp = Arc::new(ReggeSpace::new(mesh.clone(), 0).unwrap());
        let flat = sp.euclidean();
        assert!(angle_defect(&flat, 0).unwrap().abs() < 1e-13);
        assert!(angle_defect(&flat, 1).is_err()); // boundary vertex rejected

        // cone of 5 unit equilateral triangles: defect pi/3
        let mesh = Arc::new(closed_fan_mesh(5).unwrap());
        let sp = Arc::new(ReggeSpace::new(mesh.clone(), 0).unwrap());
        let cone = regge_from_squared_lengths(&sp, &|_e| 1.0);
        let d = angle_defect(&cone, 0).unwrap();
        assert!((d - std::f64::consts::PI / 3.0).abs() < 1e-13, "{d}");
    }

    #[test]
    fn angle_defect_law_of_cosines_oracle() {
        let mesh = Arc::new(closed_fan_mesh(6).unwrap());
        let sp = Arc::new(ReggeSpace::new(mesh.clone(), 0).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sq: Vec<f64> = (0..mesh.n_edges())
            .map(|e| {
                let l = mesh.edge_len(e);
                l * l * (1.0 + rng.gen_range(-0.2..0.2))
            })
            .collect();
        let g = regge_from_squared_lengths(&sp, &|e| sq[e]);
        assert!(g.is_metric(4).positive_definite);
        let defect = angle_defect(&g, 0).unwrap();
        // oracle: law of cosines from the three metric lengths per triangle
        let mut sum = 0.0;
        for &t in mesh.star(0) {
            let tri = mesh.triangle(t);
            let pos = tri.iter().position(|&v| v == 0).unwrap();
            let lens: Vec<f64> = (0..3)
                .map(|k| {
                    let (e, _) = mesh.tri_edge(t, k);
                    sq[e].sqrt()
                })
                .collect();
            // angle at vertex pos is opposite local edge pos
            let (a, b, c) = (lens[(pos + 1) % 3], lens[(pos + 2) % 3], lens[pos]);
            sum += ((a * a + b * b - c * c) / (2.0 * a * b)).acos();
        }
        let oracle = 2.0 * std::f64::consts::PI - sum;
        assert!((defect - oracle).abs() < 1e-12, "{defect} vs {oracle}");
    }

    #[test]
    fn jump_geodesic_cases() {
        let mesh = unit_square(2);
        let sp = Arc::new(ReggeSpace::new(mesh.clone(), 0).unwrap());
        let delta = sp.euclidean();
        let e = mesh.interior_edges().next().unwrap();
        assert!(jump_geodesic_at(&delta, e, 0.3).unwrap().abs() < 1e-14);
        // any piecewise constant metric: straight edges are geodesics
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sq: Vec<f64> = (0..mesh.n_edges())
            .map(|e| {
                let l = mesh.edge_len(e);
                l * l * (1.0 + rng.gen_range(-0.1..0.1))
            })
            .collect();
        let g = regge_from_squared_lengths(&sp, &|e| sq[e]);
        assert!(jump_geodesic_at(&g, e, 0.62).unwrap().abs() < 1e-13);
        let be = (0..mesh.n_edges()).find(|&e| mesh.edge_is_boundary(e)).unwrap();
        assert!(jump_geodesic_at(&delta, be, 0.5).is_err());
        // interpolated conformal metric (r=2): matches an FD rebuild of the
        // defining formula on both sides
        let g2 = conformal_interp(&mesh, 2, 0.3);
        let s = 0.37;
        let jmp = jump_geodesic_at(&g2, e, s).unwrap();
        let edge = mesh.edge(e);
        let evec = mesh.edge_vec(e);
        let start = mesh.vertex(edge.v[0]);
        let x = [start[0] + s * evec[0], start[1] + s * evec[1]];
        let mut oracle = 0.0;
        for side in 0..2 {
            let (t, k) = edge.sides[side];
            let tangent = mesh.ccw_edge_vec(t, k);
            let jet = g2.metric_jet(t, clamp_bary(mesh.phys_to_bary(t, x))).unwrap();
            // FD of tau along the edge + Christoffel part
            let h = 1e-6;
            let taus: Vec<[f64; 2]> = [-h, 0.0, h]
                .iter()
                .map(|&d| {
                    let p = [x[0] + d * tangent[0], x[1] + d * tangent[1]];
                    let gv = g2.value(t, clamp_bary(mesh.phys_to_bary(t, p)));
                    let nn = gv.apply(tangent, tangent).sqrt();
                    [tangent[0] / nn, tangent[1] / nn]
                })
                .collect();
            let q = jet.g.apply(tangent, tangent).sqrt();
            let gamma = crate::geom::christoffel(&jet);
            let mut cov = [
                (taus[2][0] - taus[0][0]) / (2.0 * h * q),
                (taus[2][1] - taus[0][1]) / (2.0 * h * q),
            ];
            for k2 in 0..2 {
                for i in 0..2 {
                    for j in 0..2 {
                        cov[k2] += gamma[k2][i][j] * taus[1][i] * taus[1][j];
                    }
                }
            }
            let (_, n) = edge_frame(&jet.g, tangent).unwrap();
            oracle += -jet.g.apply(n, cov);
        }
        assert!((jmp - oracle).abs() < 1e-7, "{jmp} vs {oracle}");
    }

    #[test]
    fn distributional_curvature_flat_and_cone() {
        let mesh = unit_square(2);
        for r in [0usize, 1, 2] {
            let sp = Arc::new(ReggeSpace::new(mesh.clone(), r).unwrap());
            let delta = sp.euclidean();
            let v = one(&mesh);
            let (total, rep) = distributional_curvature(&delta, &v, QuadConfig::default()).unwrap();
            assert!(total.abs() < 1e-12, "r={r}");
            assert!(rep.per_triangle.iter().all(|x| x.abs() < 1e-13));
        }
        // cone: only the apex term survives, v(apex) = 1 hat function
        let mesh = Arc::new(closed_fan_mesh(5).unwrap());
        let sp = Arc::new(ReggeSpace::new(mesh.clone(), 0).unwrap());
        let cone = regge_from_squared_lengths(&sp, &|_| 1.0);
        let vh = FeSpace::lagrange(mesh.clone(), 1, BcMode::Essential).unwrap();
        let mut hat = FeFunction::zero(&vh);
        hat.coeffs[0] = 1.0; // apex vertex DOF
        let (total, rep) = distributional_curvature(&cone, &hat, QuadConfig::default()).unwrap();
        assert!((total - std::f64::consts::PI / 3.0).abs() < 1e-13, "{total}");
        assert!(rep.per_triangle.iter().all(|x| x.abs() < 1e-13));
        assert!(rep.per_edge.iter().all(|x| x.1.abs() < 1e-13));
        // report invariant
        let s: f64 = rep.per_triangle.iter().sum::<f64>()
            + rep.per_edge.iter().map(|p| p.1).sum::<f64>()
            + rep.per_vertex.iter().map(|p| p.2).sum::<f64>();
        assert_eq!(s, rep.total);
    }

    #[test]
    fn single_triangle_interior_term_only() {
        // globally smooth polynomial metric on one triangle: no interior
        // edges or vertices, so only the interior term contributes
        let mesh = Arc::new(
            Mesh::from_parts(vec![[0.0, 0.0], [1.0, 0.0], [0.2, 0.9]], vec![[0, 1, 2]]).unwrap(),
        );
        let sp = Arc::new(ReggeSpace::new(mesh.clone(), 2).unwrap());
        let f = FnTensor {
            mesh: mesh.clone(),
            f: |x: [f64; 2]| SymTensorJet {
                value: Sym2::new(1.0 + 0.2 * x[0] * x[0], 0.1 * x[0] * x[1], 1.0 + 0.2 * x[1]),
                grad: [
                    Sym2::new(0.4 * x[0], 0.1 * x[1], 0.0),
                    Sym2::new(0.0, 0.1 * x[0], 0.2),
                ],
                hess: [Sym2::new(0.4, 0.0, 0.0), Sym2::new(0.0, 0.1, 0.0), Sym2::ZERO],
            },
        };
        let g = sp.interp(&f, None).unwrap();
        let v = one(&mesh);
        let (total, rep) = distributional_curvature(&g, &v, QuadConfig::default()).unwrap();
        assert!(rep.per_edge.is_empty());
        assert!(rep.per_vertex.is_empty());
        assert!(total.abs() > 1e-4, "curved metric has nonzero interior term");
        assert_eq!(total, rep.per_triangle[0]);
    }

    #[test]
    fn gauss_bonnet_patch_sum() {
        // piecewise constant metric: <(kappa omega)_dist, v> with v = 1 on a
        // patch equals the sum of enclosed angle defects
        let mesh = unit_square(4);
        let sp = Arc::new(ReggeSpace::new(mesh.clone(), 0).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let sq: Vec<f64> = (0..mesh.n_edges())
            .map(|e| {
                let l = mesh.edge_len(e);
                l * l * (1.0 + rng.gen_range(-0.05..0.05))
            })
            .collect();
        let g = regge_from_squared_lengths(&sp, &|e| sq[e]);
        assert!(g.is_metric(2).positive_definite);
        let vh = FeSpace::lagrange(mesh.clone(), 1, BcMode::Essential).unwrap();
        let mut v = FeFunction::zero(&vh);
        let patch: Vec<usize> = mesh.interior_vertices().collect();
        for &z in &patch {
            v.coeffs[z] = 1.0;
        }
        let (total, _) = distributional_curvature(&g, &v, QuadConfig::default()).unwrap();
        let defects: f64 = patch.iter().map(|&z| angle_defect(&g, z).unwrap()).sum();
        assert!((total - defects).abs() < 1e-12, "{total} vs {defects}");
    }

    #[test]
    fn discrete_curvature_flat_and_remark_equivalence() {
        let mesh = unit_square(4);
        let r = 1;
        let sp = Arc::new(ReggeSpace::new(mesh.clone(), r).unwrap());
        let vh = FeSpace::lagrange(mesh.clone(), r + 1, BcMode::Essential).unwrap();
        // flat: kappa_h = 0
        let delta = sp.euclidean();
        let kh = discrete_curvature(&delta, &vh, QuadConfig::default()).unwrap();
        assert!(kh.coeffs.iter().all(|c| c.abs() < 1e-11));
        // Def 7.1 load vs the time-integral load on random v
        let g = conformal_interp(&mesh, r, 0.2);
        let geometric = curvature_load_v(&g, &vh, QuadConfig::default()).unwrap();
        let (integral, info) = disccurvint_load_v(&g, &vh, QuadConfig::default()).unwrap();
        assert!(info.rel_change <= TIME_QUAD_TOL);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..5 {
            let v: Vec<f64> = (0..vh.ndof()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let a = geometric.pair(&v);
            let b = integral.pair(&v);
            assert!((a - b).abs() <= 1e-8 * a.abs().max(1e-2), "{a} vs {b}");
        }
    }

    #[test]
    fn connection_flat_cases() {
        let mesh = unit_square(2);
        let sp = Arc::new(ReggeSpace::new(mesh.clone(), 1).unwrap());
        let wh = FeSpace::edge_oneform(mesh.clone(), 2, BcMode::Essential).unwrap();
        // g = delta: Gamma = 0 (sigma = 0)
        let delta = sp.euclidean();
        let (load, _) = connection_load_w(&delta, &wh, QuadConfig::default()).unwrap();
        assert!(load.load.iter().all(|v| v.abs() < 1e-14));
        // g = c delta: sigma proportional to the path metric, c_h vanishes
        let cdelta = delta.lincomb(2.5, &delta, 0.0);
        let (load, _) = connection_load_w(&cdelta, &wh, QuadConfig::default()).unwrap();
        let scale: f64 = load.load.iter().map(|v| v.abs()).fold(0.0, f64::max);
        assert!(scale < 1e-10, "|Gamma| = {scale}");
    }

    #[test]
    fn connection_compatibility_and_gauge_invariance() {
        let mesh = unit_square(4);
        let r = 1;
        let g = conformal_interp(&mesh, r, 0.2);
        let vh = FeSpace::lagrange(mesh.clone(), r + 1, BcMode::Essential).unwrap();
        let wh = FeSpace::edge_oneform(mesh.clone(), r + 1, BcMode::Essential).unwrap();
        let xh = FeSpace::dg_twoform(mesh.clone(), r).unwrap();
        let qdeg = 2 * r + 10;
        let kh = discrete_curvature(&g, &vh, QuadConfig::default()).unwrap();
        let conn = canonical_connection(&g, &wh, ConnectionTarget::Discrete, QuadConfig::default())
            .unwrap();
        let ConnectionForm::Discrete(gh) = conn.form else { panic!() };
        // residual of <Gamma_h, dv>_g + <kappa_h, v>_g over random v
        let d0 = d0_matrix(&vh, &wh).unwrap();
        let mw = wh.mass_matrix(Some(&g), qdeg).unwrap();
        let mv = vh.mass_matrix(Some(&g), qdeg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let gh_free = wh.restrict(&gh.coeffs);
        let kh_free = vh.restrict(&kh.coeffs);
        let mw_gh = mw.mat.matvec(&gh_free);
        let mv_kh = mv.mat.matvec(&kh_free);
        for _ in 0..5 {
            let v: Vec<f64> = (0..vh.nfree()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let dv = d0.matvec(&v);
            let lhs: f64 = dv.iter().zip(&mw_gh).map(|(a, b)| a * b).sum();
            let rhs: f64 = v.iter().zip(&mv_kh).map(|(a, b)| a * b).sum();
            assert!(
                (lhs + rhs).abs() <= 1e-8 * lhs.abs().max(rhs.abs()).max(1e-2),
                "{lhs} vs {rhs}"
            );
        }
        // gauge invariance: adding a co-exact load leaves <Gamma, dv> unchanged
        let d1 = d1_matrix(&wh, &xh).unwrap();
        let mx = xh.mass_matrix(Some(&g), qdeg).unwrap();
        let f: Vec<f64> = (0..xh.nfree()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let coexact = d1.tr_matvec(&mx.mat.matvec(&f)); // over free W dofs
        let (dist_load, _) = connection_load_w(&g, &wh, QuadConfig::default()).unwrap();
        let base = wh.restrict(&dist_load.load);
        for _ in 0..3 {
            let v: Vec<f64> = (0..vh.nfree()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let dv = d0.matvec(&v);
            let before: f64 = dv.iter().zip(&base).map(|(a, b)| a * b).sum();
            let after: f64 = dv
                .iter()
                .zip(base.iter().zip(&coexact))
                .map(|(a, (b, c))| a * (b - c))
                .sum();
            assert!((before - after).abs() <= 1e-12 * before.abs().max(1.0));
        }
    }

    #[test]
    fn reference_connection_cases() {
        let mesh = unit_square(2);
        // g = delta -> 0
        let a = reference_connection_pointwise(&MetricJet::euclidean(), 1e-12).unwrap();
        assert_eq!(a, [0.0, 0.0]);
        // t = 0 integrand equals the Euclidean closed form
        // -1/2 star_delta div_delta S_delta(g - delta)
        let gj = |x: [f64; 2]| {
            MetricJet::graph(
                [0.3 * x[0], 0.3 * x[1]],
                [0.3, 0.0, 0.3],
                [0.0; 4],
            )
        };
        let x0 = [0.4, 0.7];
        let jet = gj(x0);
        let sigma = SymTensorJet {
            value: jet.g.sub(&Sym2::IDENTITY),
            grad: jet.dg,
            hess: jet.d2g,
        };
        let dss = div_s_sigma(&MetricJet::euclidean(), &sigma);
        // Euclidean oracle: (div S sigma)_j = d_i sigma_ij - d_j tr sigma
        let oracle = [
            sigma.grad[0].xx + sigma.grad[1].xy - sigma.grad[0].trace(),
            sigma.grad[0].xy + sigma.grad[1].yy - sigma.grad[1].trace(),
        ];
        assert!((dss[0] - oracle[0]).abs() < 1e-14);
        assert!((dss[1] - oracle[1]).abs() < 1e-14);
        let star = hodge_star_oneform(&Sym2::IDENTITY, dss);
        let expected = [-0.5 * star[0], -0.5 * star[1]];
        let eval = |t: f64| -> Vec<f64> {
            let gt = MetricJet {
                g: Sym2::IDENTITY.scale(1.0 - t).add(&jet.g.scale(t)),
                dg: [jet.dg[0].scale(t), jet.dg[1].scale(t)],
                d2g: [jet.d2g[0].scale(t), jet.d2g[1].scale(t), jet.d2g[2].scale(t)],
            };
            let d = div_s_sigma(&gt, &sigma);
            let s = hodge_star_oneform(&gt.g, d);
            vec![-0.5 * s[0], -0.5 * s[1]]
        };
        let at0 = eval(0.0);
        assert!((at0[0] - expected[0]).abs() < 1e-14);
        assert!((at0[1] - expected[1]).abs() < 1e-14);
        let _ = mesh;
    }

    #[test]
    fn curvature_report_json() {
        let mesh = Arc::new(closed_fan_mesh(5).unwrap());
        let sp = Arc::new(ReggeSpace::new(mesh.clone(), 0).unwrap());
        let cone = regge_from_squared_lengths(&sp, &|_| 1.0);
        let v = one(&mesh);
        let (_, rep) = distributional_curvature(&cone, &v, QuadConfig::default()).unwrap();
        let js = rep.to_json();
        assert!(js.contains("per_vertex"));
        let parsed: serde_json::Value = serde_json::from_str(&js).unwrap();
        assert!(parsed["total"].as_f64().is_some());
        // csv export shape
        let csv = coeffs_to_csv(&[1.0, 2.0]);
        assert!(csv.lines().count() == 3 && csv.starts_with("index,value"));
    }
}
