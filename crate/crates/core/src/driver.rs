//! Convergence studies and the verification front end: experiment
//! configuration, manufactured metrics with exact curvature, dual-norm error
//! tables, and CSV/JSON emission.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::curvature::{
    connection_load_w, curvature_load_v, discrete_curvature, reference_connection_load,
};
use crate::fespace::{BcMode, FeSpace};
use crate::forms::{Fault, QuadConfig};
use crate::geom::{gauss_curvature, MetricJet, ScalarJet};
use crate::linalg::DualNormContext;
use crate::mesh::Mesh;
use crate::polyquad::tri_rule;
use crate::regge::ReggeSpace;
use crate::verify::{run_all_checks, VerifyReport};
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricConfig {
    pub id: String,
    #[serde(default)]
    pub params: serde_json::Value,
}

/// Experiment configuration (the `--config` JSON document).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub metric: MetricConfig,
    pub degrees: Vec<usize>,
    pub levels: Vec<usize>,
    #[serde(default)]
    pub quad_degree_boost: usize,
    /// Enrichment of the dual-norm test spaces relative to the Regge degree
    /// (Lagrange/edge elements of degree r + enrich_degree); default 3.
    #[serde(default)]
    pub enrich_degree: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<String>,
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(s).map_err(|e| Error::Config(format!("bad config JSON: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels.len() < 2 {
            return Err(Error::Config("need at least 2 levels for rates".into()));
        }
        for &r in &self.degrees {
            if r > 3 {
                return Err(Error::Config(format!("degree {r} unsupported (0..=3)")));
            }
        }
        for &n in &self.levels {
            if n < 2 {
                return Err(Error::Config("levels must have n >= 2".into()));
            }
        }
        ManufacturedMetric::from_config(&self.metric)?;
        Ok(())
    }

    pub fn enrich(&self) -> usize {
        self.enrich_degree.unwrap_or(3)
    }
}

/// Closed-form benchmark metrics with exact jets and exact curvature.
#[derive(Debug, Clone)]
pub enum ManufacturedMetric {
    /// g = e^{2 phi} delta with phi = amp sin(pi x) sin(pi y).
    Conformal { amp: f64 },
    /// Metric of the graph z = (coeff/2)(x^2 + y^2).
    Graph { coeff: f64 },
}

impl ManufacturedMetric {
    pub fn from_config(cfg: &MetricConfig) -> Result<Self> {
        let p = &cfg.params;
        match cfg.id.as_str() {
            "conformal" => {
                let amp = p.get("amp").and_then(|v| v.as_f64()).unwrap_or(0.2);
                Ok(ManufacturedMetric::Conformal { amp })
            }
            "graph" => {
                let coeff = p.get("coeff").and_then(|v| v.as_f64()).unwrap_or(0.5);
                Ok(ManufacturedMetric::Graph { coeff })
            }
            other => Err(Error::Config(format!("unknown metric id '{other}'"))),
        }
    }

    fn phi(&self, x: [f64; 2]) -> ScalarJet {
        match self {
            ManufacturedMetric::Conformal { amp } => {
                let pi = std::f64::consts::PI;
                let (sx, cx) = (pi * x[0]).sin_cos();
                let (sy, cy) = (pi * x[1]).sin_cos();
                ScalarJet {
                    v: amp * sx * sy,
                    d: [amp * pi * cx * sy, amp * pi * sx * cy],
                    d2: [
                        -amp * pi * pi * sx * sy,
                        amp * pi * pi * cx * cy,
                        -amp * pi * pi * sx * sy,
                    ],
                }
            }
            ManufacturedMetric::Graph { .. } => unreachable!("graph metric has no phi"),
        }
    }

    /// Exact metric 2-jet at a physical point.
    pub fn jet(&self, x: [f64; 2]) -> MetricJet {
        match self {
            ManufacturedMetric::Conformal { .. } => MetricJet::conformal(&self.phi(x)),
            ManufacturedMetric::Graph { coeff } => MetricJet::graph(
                [coeff * x[0], coeff * x[1]],
                [*coeff, 0.0, *coeff],
                [0.0; 4],
            ),
        }
    }

    /// Exact Gaussian curvature.
    pub fn kappa(&self, x: [f64; 2]) -> f64 {
        match self {
            ManufacturedMetric::Conformal { .. } => {
                let p = self.phi(x);
                -(-2.0 * p.v).exp() * (p.d2[0] + p.d2[2])
            }
            ManufacturedMetric::Graph { coeff } => {
                let r2 = x[0] * x[0] + x[1] * x[1];
                coeff * coeff / (1.0 + coeff * coeff * r2).powi(2)
            }
        }
    }

    /// Scalar proxy of the curvature two-form: kappa(g) omega(g) = (this) dx^dy.
    pub fn kappa_omega_proxy(&self, x: [f64; 2]) -> f64 {
        self.kappa(x) * self.jet(x).g.det().sqrt()
    }

    /// Cross-validates the closed-form curvature against the jet-based
    /// coordinate computation on sample points (1e-10 contract).
    pub fn validate(&self) -> Result<()> {
        for &x in &[[0.21, 0.37], [0.5, 0.5], [0.83, 0.12], [0.64, 0.95]] {
            let jet = self.jet(x);
            let computed = gauss_curvature(&jet)?;
            let formula = self.kappa(x);
            if (computed - formula).abs() > 1e-10 * formula.abs().max(1.0) {
                return Err(Error::Internal(format!(
                    "manufactured curvature mismatch at {x:?}: {computed} vs {formula}"
                )));
            }
        }
        Ok(())
    }
}

/// One row of the convergence table.
#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceRow {
    pub r: usize,
    pub n: usize,
    pub h: f64,
    pub e_kappa_dual: f64,
    pub rate_kappa: Option<f64>,
    pub e_conn_dual: f64,
    pub rate_conn: Option<f64>,
    pub e_kappa_l2: f64,
    pub skipped: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceResult {
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceResult {
    /// CSV with the columns
    /// r,n,h,E_kappa_dual,rate_kappa,E_conn_dual,rate_conn,E_kappa_L2.
    pub fn to_csv(&self) -> String {
        let mut s =
            String::from("r,n,h,E_kappa_dual,rate_kappa,E_conn_dual,rate_conn,E_kappa_L2\n");
        for row in &self.rows {
            let fmt_rate = |r: Option<f64>| r.map(|v| format!("{v:.6}")).unwrap_or_default();
            s.push_str(&format!(
                "{},{},{:.12e},{:.12e},{},{:.12e},{},{:.12e}\n",
                row.r,
                row.n,
                row.h,
                row.e_kappa_dual,
                fmt_rate(row.rate_kappa),
                row.e_conn_dual,
                fmt_rate(row.rate_conn),
                row.e_kappa_l2
            ));
        }
        s
    }

    /// Observed rates on the finest `count` increments for degree `r`.
    pub fn final_rates(&self, r: usize, count: usize) -> (Vec<f64>, Vec<f64>) {
        let rows: Vec<&ConvergenceRow> =
            self.rows.iter().filter(|row| row.r == r && !row.skipped).collect();
        let kappa: Vec<f64> =
            rows.iter().filter_map(|row| row.rate_kappa).collect();
        let conn: Vec<f64> = rows.iter().filter_map(|row| row.rate_conn).collect();
        let take = |v: &[f64]| v.iter().rev().take(count).rev().copied().collect::<Vec<f64>>();
        (take(&kappa), take(&conn))
    }
}

/// Tool-agnostic plot recipe emitted next to the CSV.
pub fn plot_template(csv_name: &str) -> String {
    format!(
        "# Plot recipe for {csv_name}\n\
         # Columns: r,n,h,E_kappa_dual,rate_kappa,E_conn_dual,rate_conn,E_kappa_L2\n\
         # Plot E_kappa_dual and E_conn_dual against h on log-log axes,\n\
         # one curve per degree r; slopes should approach r.\n\
         #\n\
         # gnuplot:\n\
         #   set logscale xy\n\
         #   plot '{csv_name}' using 3:4 with linespoints title 'E_kappa',\\\n\
         #        '{csv_name}' using 3:6 with linespoints title 'E_conn'\n\
         #\n\
         # matplotlib:\n\
         #   import pandas as pd, matplotlib.pyplot as plt\n\
         #   d = pd.read_csv('{csv_name}')\n\
         #   for r, grp in d.groupby('r'):\n\
         #       plt.loglog(grp.h, grp.E_kappa_dual, 'o-', label=f'kappa r={{r}}')\n\
         #       plt.loglog(grp.h, grp.E_conn_dual, 's--', label=f'conn r={{r}}')\n\
         #   plt.legend(); plt.xlabel('h'); plt.show()\n"
    )
}

/// Runs the convergence study of the distributional curvature and canonical
/// connection against the manufactured benchmark.
pub fn run_convergence(config: &ExperimentConfig) -> Result<ConvergenceResult> {
    config.validate()?;
    let metric = ManufacturedMetric::from_config(&config.metric)?;
    metric.validate()?;
    let quad = QuadConfig { boost: config.quad_degree_boost };
    let mut rows = Vec::new();

    for &r in &config.degrees {
        let enrich_deg = r + config.enrich();
        let mut prev: Option<(f64, f64, f64)> = None; // (h, E_kappa, E_conn)
        for &n in &config.levels {
            let mesh = Arc::new(Mesh::structured([0.0, 0.0, 1.0, 1.0], n)?);
            let sp = Arc::new(ReggeSpace::new(mesh.clone(), r)?);
            let m2 = metric.clone();
            let field = crate::fields::FnTensor {
                mesh: mesh.clone(),
                f: move |x: [f64; 2]| crate::geom::SymTensorJet::from_metric(&m2.jet(x)),
            };
            let gh = sp.interp(&field, None)?;
            if !gh.is_metric(2 * r + 6).positive_definite {
                // interpolant not positive definite at this resolution: report and skip
                rows.push(ConvergenceRow {
                    r,
                    n,
                    h: mesh.h_max(),
                    e_kappa_dual: f64::NAN,
                    rate_kappa: None,
                    e_conn_dual: f64::NAN,
                    rate_conn: None,
                    e_kappa_l2: f64::NAN,
                    skipped: true,
                });
                prev = None;
                continue;
            }
            let h = mesh.h_max();
            let qdeg_ref = 2 * r + 12 + config.quad_degree_boost;

            // curvature error in the V'-proxy norm over the enriched space
            let vctx = DualNormContext::scalar(&mesh, enrich_deg)?;
            let ve = vctx.space.clone();
            let mut f_kappa = curvature_load_v(&gh, &ve, quad)?.load;
            {
                let rule = tri_rule(qdeg_ref.min(crate::polyquad::MAX_QUAD_DEGREE))?;
                for t in 0..mesh.n_triangles() {
                    let area = mesh.tri_area(t);
                    for (q, &bary) in rule.points.iter().enumerate() {
                        let x = mesh.bary_to_phys(t, bary);
                        let w = rule.weights[q] * area * metric.kappa_omega_proxy(x);
                        let basis = ve.scalar_basis(t, bary);
                        for (ld, &gd) in ve.l2g(t).iter().enumerate() {
                            f_kappa[gd] -= w * basis[ld].v;
                        }
                    }
                }
                for i in 0..ve.ndof() {
                    if ve.is_constrained(i) {
                        f_kappa[i] = 0.0;
                    }
                }
            }
            let e_kappa = vctx.dual_norm(&f_kappa)?;

            // connection error in the W'-proxy norm over the enriched space
            let wctx = DualNormContext::oneform(&mesh, enrich_deg)?;
            let we = wctx.space.clone();
            let (gamma_load, _) = connection_load_w(&gh, &we, quad)?;
            let m3 = metric.clone();
            let ref_load =
                reference_connection_load(&mesh, &move |x| m3.jet(x), &we, qdeg_ref)?;
            let f_conn: Vec<f64> = gamma_load
                .load
                .iter()
                .zip(&ref_load)
                .map(|(a, b)| a - b)
                .collect();
            let e_conn = wctx.dual_norm(&f_conn)?;

            // diagnostic L2-lifted curvature error (no claimed rate)
            let vh = FeSpace::lagrange(mesh.clone(), r + 1, BcMode::Essential)?;
            let kh = discrete_curvature(&gh, &vh, quad)?;
            let e_l2 = {
                let rule = tri_rule((2 * r + 12).min(crate::polyquad::MAX_QUAD_DEGREE))?;
                let mut acc = 0.0;
                for t in 0..mesh.n_triangles() {
                    let area = mesh.tri_area(t);
                    for (q, &bary) in rule.points.iter().enumerate() {
                        let x = mesh.bary_to_phys(t, bary);
                        let diff = crate::fields::ScalarField::value(&kh, t, bary)
                            - metric.kappa(x);
                        acc += rule.weights[q] * area * diff * diff;
                    }
                }
                acc.sqrt()
            };

            let (rate_kappa, rate_conn) = match prev {
                Some((hp, ekp, ecp)) => {
                    let lr = (hp / h).ln();
                    (Some((ekp / e_kappa).ln() / lr), Some((ecp / e_conn).ln() / lr))
                }
                None => (None, None),
            };
            prev = Some((h, e_kappa, e_conn));
            rows.push(ConvergenceRow {
                r,
                n,
                h,
                e_kappa_dual: e_kappa,
                rate_kappa,
                e_conn_dual: e_conn,
                rate_conn,
                e_kappa_l2: e_l2,
                skipped: false,
            });
        }
    }
    Ok(ConvergenceResult { rows })
}

/// Runs every verification check with the configured seed.
pub fn run_verify(config: &ExperimentConfig) -> Result<VerifyReport> {
    config.validate()?;
    run_all_checks(config.seed, None)
}

/// Verification run with an injected defect (regression guard for the
/// mutation test).
pub fn run_verify_with_fault(config: &ExperimentConfig, fault: Fault) -> Result<VerifyReport> {
    config.validate()?;
    run_all_checks(config.seed, Some(fault))
}
