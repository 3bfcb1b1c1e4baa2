//! Acceptance suite: one test per acceptance criterion, each printing a
//! PASS/FAIL line with the measured quantity and its pinned tolerance.

use std::sync::Arc;

use regge_curv::curvature::{
    angle_defect, canonical_connection, closed_fan_mesh, connection_load_w, curvature_load_v,
    discrete_curvature, disccurvint_load_v, distributional_curvature, regge_from_squared_lengths,
    ConnectionForm, ConnectionTarget,
};
use regge_curv::driver::{run_convergence, ExperimentConfig, MetricConfig};
use regge_curv::fespace::{d0_matrix, d1_matrix, BcMode, FeFunction, FeOneForm, FeSpace};
use regge_curv::fields::FnTensor;
use regge_curv::forms::{bh_direct, bh_ibp, ch_direct, ch_ibp, FormContext, QuadConfig};
use regge_curv::geom::{MetricJet, ScalarJet, SymTensorJet};
use regge_curv::regge::{ReggeField, ReggeSpace};
use regge_curv::verify::{
    central_fd, check_angledot, check_commuting, check_kappavoldot, check_kernel_and_kappa_u,
    check_klengthdot, random_metric, random_regge, rescale_direction_spd, FdSchedule,
};
use regge_curv::Mesh;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn unit_square(n: usize) -> Arc<Mesh> {
    Arc::new(Mesh::structured([0.0, 0.0, 1.0, 1.0], n).unwrap())
}

fn conformal_interp_on(sp: &Arc<ReggeSpace>, amp: f64) -> ReggeField {
    let mesh = &sp.mesh;
    let f = FnTensor {
        mesh: mesh.clone(),
        f: move |x: [f64; 2]| {
            let pi = std::f64::consts::PI;
            let (sx, cx) = (pi * x[0]).sin_cos();
            let (sy, cy) = (pi * x[1]).sin_cos();
            SymTensorJet::from_metric(&MetricJet::conformal(&ScalarJet {
                v: amp * sx * sy,
                d: [amp * pi * cx * sy, amp * pi * sx * cy],
                d2: [-amp * pi * pi * sx * sy, amp * pi * pi * cx * cy, -amp * pi * pi * sx * sy],
            }))
        },
    };
    sp.interp(&f, None).unwrap()
}

fn conformal_interp(mesh: &Arc<Mesh>, r: usize, amp: f64) -> ReggeField {
    let sp = Arc::new(ReggeSpace::new(mesh.clone(), r).unwrap());
    conformal_interp_on(&sp, amp)
}

fn random_v(mesh: &Arc<Mesh>, k: usize, seed: u64) -> FeFunction {
    let vh = FeSpace::lagrange(mesh.clone(), k, BcMode::Essential).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let free: Vec<f64> = (0..vh.nfree()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    FeFunction::from_free(&vh, &free)
}

fn random_alpha(mesh: &Arc<Mesh>, k: usize, seed: u64) -> FeOneForm {
    let wh = FeSpace::edge_oneform(mesh.clone(), k, BcMode::Essential).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let free: Vec<f64> = (0..wh.nfree()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    FeOneForm::from_free(&wh, &free)
}

/// Criterion 1: bh_direct vs bh_ibp and ch_direct vs ch_ibp agree to
/// relative 1e-9 on 50 seeded random (g, sigma, v/alpha) triples with
/// per-triangle polynomial data, meshes n in {2,4}, r in {1,2}.
#[test]
fn criterion_1_guise_equivalence() {
    const TOL: f64 = 1e-9;
    let mut worst_bh: f64 = 0.0;
    let mut worst_ch: f64 = 0.0;
    let mut count = 0u64;
    for n in [2usize, 4] {
        let mesh = unit_square(n);
        for r in [1usize, 2] {
            let sp = Arc::new(ReggeSpace::new(mesh.clone(), r).unwrap());
            for k in 0..13usize {
                if count >= 50 {
                    break;
                }
                count += 1;
                let seed = 1000 + count;
                let g = random_metric(&sp, seed, 0.03);
                let sigma = random_regge(&sp, seed + 500);
                let v = random_v(&mesh, r + 1, seed + 1000);
                let alpha = random_alpha(&mesh, r + 1, seed + 1500);
                let ctx = FormContext::new(mesh.clone(), &g, r);
                let (bd, bi) = (
                    bh_direct(&ctx, &sigma, &v).unwrap(),
                    bh_ibp(&ctx, &sigma, &v).unwrap(),
                );
                let rel_b = (bd - bi).abs() / bd.abs().max(bi.abs()).max(1e-3);
                let (cd, ci) = (
                    ch_direct(&ctx, &sigma, &alpha).unwrap(),
                    ch_ibp(&ctx, &sigma, &alpha).unwrap(),
                );
                let rel_c = (cd - ci).abs() / cd.abs().max(ci.abs()).max(1e-3);
                worst_bh = worst_bh.max(rel_b);
                worst_ch = worst_ch.max(rel_c);
                let _ = k;
            }
        }
    }
    let pass = worst_bh <= TOL && worst_ch <= TOL && count == 50;
    println!(
        "criterion 1 (guise equivalence of the assembled forms): {} — {count} triples, worst b_h rel {worst_bh:.3e}, worst c_h rel {worst_ch:.3e}, tol {TOL:.0e}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass);
}

/// Criterion 2: central-FD derivative of the distributional curvature equals
/// 1/2 b_h(g; sigma, v) with observed order >= 1.9 and Richardson agreement
/// <= 1e-6 relative, for 20 seeded cases including piecewise-constant, r=1,
/// r=2 Regge metrics.
#[test]
fn criterion_2_linearization() {
    const TOL: f64 = 1e-6;
    let mesh = unit_square(2);
    let quad = QuadConfig::default();
    let mut worst: f64 = 0.0;
    let mut worst_order = f64::INFINITY;
    let mut count = 0;
    for r in [0usize, 1, 2] {
        let sp = Arc::new(ReggeSpace::new(mesh.clone(), r).unwrap());
        let cases: usize = if r == 0 { 6 } else { 7 };
        for c in 0..cases {
            count += 1;
            let seed = 2000 + 10 * r as u64 + c as u64;
            let g = match c % 3 {
                0 => sp.euclidean(),
                1 => random_metric(&sp, seed, 0.08),
                _ => {
                    if r == 0 {
                        random_metric(&sp, seed, 0.08)
                    } else {
                        conformal_interp_on(&sp, 0.2)
                    }
                }
            };
            let sigma = rescale_direction_spd(&g, &random_regge(&sp, seed + 77), 1e-2);
            let v = random_v(&mesh, r + 1, seed + 11);
            let mut f = |t: f64| -> regge_curv::Result<f64> {
                let gt = g.lincomb(1.0, &sigma, t);
                Ok(distributional_curvature(&gt, &v, quad)?.0)
            };
            let fd = central_fd(&mut f, 0.0, &FdSchedule::default()).unwrap();
            let ctx = FormContext::new(mesh.clone(), &g, r);
            let formula = 0.5 * bh_direct(&ctx, &sigma, &v).unwrap();
            let rel = (fd.derivative - formula).abs()
                / fd.derivative.abs().max(formula.abs()).max(1e-3);
            worst = worst.max(rel);
            if let Some(o) = fd.observed_order {
                worst_order = worst_order.min(o);
            }
        }
    }
    let pass = worst <= TOL && worst_order >= 1.9 && count == 20;
    println!(
        "criterion 2 (linearization of the distributional curvature): {} — {count} cases, worst Richardson rel {worst:.3e} (tol {TOL:.0e}), min observed order {worst_order:.2} (>= 1.9)",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass);
}

/// Criterion 3: the piecewise-constant 5-equilateral-triangle cone yields an
/// apex defect of exactly pi/3 (1e-13), zero triangle/edge contributions;
/// flat metrics yield identically zero reports.
#[test]
fn criterion_3_curvature_decomposition() {
    let mesh = Arc::new(closed_fan_mesh(5).unwrap());
    let sp = Arc::new(ReggeSpace::new(mesh.clone(), 0).unwrap());
    let cone = regge_from_squared_lengths(&sp, &|_| 1.0);
    let defect = angle_defect(&cone, 0).unwrap();
    let defect_err = (defect - std::f64::consts::PI / 3.0).abs();
    let vh = FeSpace::lagrange(mesh.clone(), 1, BcMode::Essential).unwrap();
    let mut hat = FeFunction::zero(&vh);
    hat.coeffs[0] = 1.0;
    let (total, rep) = distributional_curvature(&cone, &hat, QuadConfig::default()).unwrap();
    let tri_leak: f64 = rep.per_triangle.iter().map(|x| x.abs()).fold(0.0, f64::max);
    let edge_leak: f64 = rep.per_edge.iter().map(|x| x.1.abs()).fold(0.0, f64::max);
    let total_err = (total - std::f64::consts::PI / 3.0).abs();

    let mut flat_leak: f64 = 0.0;
    for r in [0usize, 1, 2] {
        let square = unit_square(2);
        let spr = Arc::new(ReggeSpace::new(square.clone(), r).unwrap());
        let delta = spr.euclidean();
        let v = random_v(&square, r + 1, 33 + r as u64);
        let (t, rep) = distributional_curvature(&delta, &v, QuadConfig::default()).unwrap();
        flat_leak = flat_leak
            .max(t.abs())
            .max(rep.per_triangle.iter().map(|x| x.abs()).fold(0.0, f64::max))
            .max(rep.per_edge.iter().map(|x| x.1.abs()).fold(0.0, f64::max))
            .max(rep.per_vertex.iter().map(|x| x.2.abs()).fold(0.0, f64::max));
    }
    let pass = defect_err <= 1e-13
        && total_err <= 1e-13
        && tri_leak <= 1e-13
        && edge_leak <= 1e-13
        && flat_leak <= 1e-12;
    println!(
        "criterion 3 (curvature decomposition): {} — cone apex defect error {defect_err:.2e} (tol 1e-13), triangle/edge leakage {tri_leak:.2e}/{edge_leak:.2e}, flat-metric leakage {flat_leak:.2e}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass);
}

/// Criterion 4: the geometric discrete-curvature definition and the
/// time-integral formula agree to 1e-8 relative for interpolated conformal
/// metrics, r in {1,2}, n = 8.
#[test]
fn criterion_4_discrete_curvature_equivalence() {
    const TOL: f64 = 1e-8;
    let mesh = unit_square(8);
    let mut worst: f64 = 0.0;
    for r in [1usize, 2] {
        let g = conformal_interp(&mesh, r, 0.2);
        let vh = FeSpace::lagrange(mesh.clone(), r + 1, BcMode::Essential).unwrap();
        let geometric = curvature_load_v(&g, &vh, QuadConfig::default()).unwrap();
        let (integral, _) = disccurvint_load_v(&g, &vh, QuadConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99 + r as u64);
        for _ in 0..10 {
            let v: Vec<f64> = (0..vh.ndof()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let a = geometric.pair(&v);
            let b = integral.pair(&v);
            worst = worst.max((a - b).abs() / a.abs().max(b.abs()).max(1e-3));
        }
    }
    let pass = worst <= TOL;
    println!(
        "criterion 4 (discrete curvature equivalence): {} — worst rel difference {worst:.3e} over 20 random v (tol {TOL:.0e})",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass);
}

/// Criterion 5: <Gamma_h, dv>_g + <kappa_h, v>_g <= 1e-8 relative on 20
/// random v, and co-exact gauge perturbations leave the pairing invariant to
/// 1e-12.
#[test]
fn criterion_5_connection_compatibility() {
    const TOL: f64 = 1e-8;
    let mesh = unit_square(8);
    let mut worst: f64 = 0.0;
    let mut worst_gauge: f64 = 0.0;
    for r in [1usize, 2] {
        let g = conformal_interp(&mesh, r, 0.2);
        let vh = FeSpace::lagrange(mesh.clone(), r + 1, BcMode::Essential).unwrap();
        let wh = FeSpace::edge_oneform(mesh.clone(), r + 1, BcMode::Essential).unwrap();
        let xh = FeSpace::dg_twoform(mesh.clone(), r).unwrap();
        let qdeg = 2 * r + 10;
        let kh = discrete_curvature(&g, &vh, QuadConfig::default()).unwrap();
        let conn =
            canonical_connection(&g, &wh, ConnectionTarget::Discrete, QuadConfig::default())
                .unwrap();
        let ConnectionForm::Discrete(gh) = conn.form else { unreachable!() };
        let d0 = d0_matrix(&vh, &wh).unwrap();
        let mw = wh.mass_matrix(Some(&g), qdeg).unwrap();
        let mv = vh.mass_matrix(Some(&g), qdeg).unwrap();
        let mw_gh = mw.mat.matvec(&wh.restrict(&gh.coeffs));
        let mv_kh = mv.mat.matvec(&vh.restrict(&kh.coeffs));
        let mut rng = ChaCha8Rng::seed_from_u64(7 + r as u64);
        for _ in 0..10 {
            let v: Vec<f64> = (0..vh.nfree()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let dv = d0.matvec(&v);
            let lhs: f64 = dv.iter().zip(&mw_gh).map(|(a, b)| a * b).sum();
            let rhs: f64 = v.iter().zip(&mv_kh).map(|(a, b)| a * b).sum();
            worst = worst.max((lhs + rhs).abs() / lhs.abs().max(rhs.abs()).max(1e-3));
        }
        // gauge invariance of the pairing under co-exact perturbations
        let d1 = d1_matrix(&wh, &xh).unwrap();
        let mx = xh.mass_matrix(Some(&g), qdeg).unwrap();
        let (dist, _) = connection_load_w(&g, &wh, QuadConfig::default()).unwrap();
        let base = wh.restrict(&dist.load);
        let fvec: Vec<f64> = (0..xh.nfree()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let coexact = d1.tr_matvec(&mx.mat.matvec(&fvec));
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for _ in 0..5 {
            let v: Vec<f64> = (0..vh.nfree()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let dv = d0.matvec(&v);
            let before: f64 = dv.iter().zip(&base).map(|(a, b)| a * b).sum();
            let after: f64 = dv
                .iter()
                .zip(base.iter().zip(&coexact))
                .map(|(a, (b, c))| a * (b - c))
                .sum();
            // the drift is a D1 D0 cancellation; measure it against the
            // Cauchy-Schwarz scale of the perturbation pairing
            let scale = norm(&dv) * norm(&coexact);
            worst_gauge = worst_gauge.max((before - after).abs() / scale.max(1e-300));
            let _ = before;
        }
    }
    let pass = worst <= TOL && worst_gauge <= 1e-12;
    println!(
        "criterion 5 (connection compatibility): {} — worst compatibility rel {worst:.3e} (tol {TOL:.0e}), worst gauge drift {worst_gauge:.3e} (tol 1e-12)",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass);
}

/// Criterion 6: the three commuting diagrams hold to 1e-10 (items 1-2) and
/// quadrature tolerance 1e-8 (item 3) on n in {2,4}, r in {0,1,2}.
#[test]
fn criterion_6_commuting_diagrams() {
    let reports = check_commuting(4242).unwrap();
    let mut worst_name = String::new();
    let mut worst_margin = f64::NEG_INFINITY;
    let mut pass = true;
    for c in &reports {
        let margin = c.error / c.tolerance;
        if margin > worst_margin {
            worst_margin = margin;
            worst_name = c.name.clone();
        }
        pass &= c.passed;
    }
    println!(
        "criterion 6 (commuting diagrams): {} — {} checks, tightest: {worst_name} at {worst_margin:.2}x of tolerance",
        if pass { "PASS" } else { "FAIL" },
        reports.len()
    );
    assert!(pass);
}

/// Criterion 7: b_h(delta; eps u, v) = 0 to 1e-11 for piecewise polynomial
/// continuous u; b_h(g; eps u, v) + int kappa dv(u) omega <= 1e-8 relative
/// for the conformal benchmark.
#[test]
fn criterion_7_euclidean_kernel_and_kappa_u() {
    let reports = check_kernel_and_kappa_u(4242).unwrap();
    let pass = reports.iter().all(|c| c.passed);
    for c in &reports {
        println!(
            "criterion 7 ({}): {} — error {:.3e} (tol {:.0e})",
            c.name,
            if c.passed { "PASS" } else { "FAIL" },
            c.error,
            c.tolerance
        );
    }
    assert!(pass);
}

/// Criterion 8: D1 D0 = 0; nullity/rank assertions for r in {0,1,2} on
/// n in {2,4} with a dense-rank oracle.
///
/// Of the four stated assertions, three hold and are asserted; the fourth,
/// rank D1 = dim X_h, is unattainable for the boundary-constrained complex:
/// Stokes' theorem forces every d(alpha) with vanishing tangential boundary
/// trace to have zero total integral, and the alternating dimension sum
/// dim V - dim W + dim X equals 1 on any triangulated polygon.  The true
/// statement rank D1 = dim X_h - 1 (range = zero-mean subspace) is verified
/// instead, and the literal assertion is then evaluated and reported.
#[test]
fn criterion_8_complex_exactness() {
    let mut stated_rank_holds = true;
    let mut core_pass = true;
    for r in [0usize, 1, 2] {
        for n in [2usize, 4] {
            let mesh = unit_square(n);
            let vh = FeSpace::lagrange(mesh.clone(), r + 1, BcMode::Essential).unwrap();
            let wh = FeSpace::edge_oneform(mesh.clone(), r + 1, BcMode::Essential).unwrap();
            let xh = FeSpace::dg_twoform(mesh.clone(), r).unwrap();
            let d0 = d0_matrix(&vh, &wh).unwrap().to_dense();
            let d1 = d1_matrix(&wh, &xh).unwrap().to_dense();
            let dd = (&d1 * &d0).norm() / (d1.norm() * d0.norm());
            let rank0 = d0.rank(1e-9 * d0.norm().max(1.0));
            let rank1 = d1.rank(1e-9 * d1.norm().max(1.0));
            core_pass &= dd <= 1e-13;
            core_pass &= vh.nfree() - rank0 == 0; // nullity D0 = 0
            core_pass &= wh.nfree() - rank1 == rank0; // dim ker D1 = rank D0
            core_pass &= rank1 == xh.nfree() - 1; // range(D1) = zero-mean subspace
            stated_rank_holds &= rank1 == xh.nfree();
            // the surjectivity claim does hold for the natural (boundary
            //-condition-free) complex, where instead nullity D0 = 1
            let vn = FeSpace::lagrange(mesh.clone(), r + 1, BcMode::Natural).unwrap();
            let wn = FeSpace::edge_oneform(mesh.clone(), r + 1, BcMode::Natural).unwrap();
            let d1n = d1_matrix(&wn, &xh).unwrap().to_dense();
            let d0n = d0_matrix(&vn, &wn).unwrap().to_dense();
            core_pass &= d1n.rank(1e-9 * d1n.norm().max(1.0)) == xh.nfree();
            core_pass &= vn.nfree() - d0n.rank(1e-9 * d0n.norm().max(1.0)) == 1;
        }
    }
    println!(
        "criterion 8 (complex exactness): core assertions (D1 D0 = 0, nullity D0 = 0, ker D1 = rank D0, rank D1 = dim X - 1; natural complex surjective with nullity 1): {}",
        if core_pass { "PASS" } else { "FAIL" }
    );
    println!(
        "criterion 8 (complex exactness): literal assertion rank D1 = dim X_h: {} — mathematically unattainable for the boundary-constrained complex (Stokes forces zero total integral; dim V - dim W + dim X = 1)",
        if stated_rank_holds { "PASS" } else { "FAIL" }
    );
    assert!(core_pass, "core exactness structure must hold");
    assert!(
        stated_rank_holds,
        "rank D1 = dim X_h is unattainable for the boundary-constrained complex: \
         d(alpha) has zero total integral whenever alpha has vanishing tangential \
         boundary trace, so range(D1) is the zero-mean subspace and \
         rank D1 = dim X_h - 1 (verified above, along with surjectivity of the \
         natural complex)"
    );
}

/// Criterion 9: conformal benchmark phi = 0.2 sin(pi x) sin(pi y), levels
/// n = 4, 8, 16, 32: observed dual-norm rates for curvature and connection
/// fall in [r - 0.2, r + 0.3] on the finest two increments for r = 1, 2.
#[test]
fn criterion_9_convergence_rates() {
    let cfg = ExperimentConfig {
        metric: MetricConfig {
            id: "conformal".into(),
            params: serde_json::json!({"amp": 0.2}),
        },
        degrees: vec![1, 2],
        levels: vec![4, 8, 16, 32],
        quad_degree_boost: 0,
        enrich_degree: None,
        seed: 0,
        out: None,
    };
    let res = run_convergence(&cfg).unwrap();
    let mut pass = true;
    for r in [1usize, 2] {
        let (kappa, conn) = res.final_rates(r, 2);
        let lo = r as f64 - 0.2;
        let hi = r as f64 + 0.3;
        let ok = kappa.len() == 2
            && conn.len() == 2
            && kappa.iter().chain(conn.iter()).all(|&x| x >= lo && x <= hi);
        pass &= ok;
        println!(
            "criterion 9 (convergence rates, r = {r}): {} — kappa rates {kappa:?}, connection rates {conn:?}, window [{lo}, {hi}]",
            if ok { "PASS" } else { "FAIL" }
        );
        // rate monotonicity: the observed rate varies by <= 0.3 over the
        // finest three increments
        let (k3, c3) = res.final_rates(r, 3);
        for rates in [&k3, &c3] {
            let spread = rates.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                - rates.iter().cloned().fold(f64::INFINITY, f64::min);
            pass &= spread <= 0.3;
        }
    }
    println!("{}", res.to_csv());
    assert!(pass);
}

/// Criterion 10: the evolution-formula FD checks pass with order >= 1.9 and
/// <= 1e-6 Richardson agreement on the seeded path catalog.
#[test]
fn criterion_10_evolution_formulas() {
    let mut reports = check_kappavoldot().unwrap();
    reports.extend(check_klengthdot(4242).unwrap());
    reports.extend(check_angledot().unwrap());
    let pass = reports.iter().all(|c| c.passed);
    let worst = reports.iter().map(|c| c.error).fold(0.0f64, f64::max);
    let min_order = reports
        .iter()
        .filter_map(|c| c.observed_order)
        .fold(f64::INFINITY, f64::min);
    println!(
        "criterion 10 (evolution formulas): {} — {} checks, worst rel error {worst:.3e} (tol 1e-6), min observed order {min_order:.2} (>= 1.9)",
        if pass { "PASS" } else { "FAIL" },
        reports.len()
    );
    assert!(pass);
}
