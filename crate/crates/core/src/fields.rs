//! Field traits: piecewise-defined scalar/one-form/tensor/vector fields
//! evaluated per (triangle, barycentric point).
//!
//! Two-sided quantities on edges are obtained by evaluating the same field
//! from the two adjacent triangles.  The `C1`/`C2` variants expose exact jets
//! in physical coordinates; closed-form fields wrap a closure over physical
//! points, finite element fields differentiate their local polynomials.

use std::sync::Arc;

use crate::geom::{MetricJet, OneFormJet, ScalarJet, Sym2, SymTensorJet};
use crate::mesh::Mesh;
use crate::Result;

pub trait ScalarField {
    fn value(&self, tri: usize, bary: [f64; 3]) -> f64;
}

pub trait ScalarFieldC2: ScalarField {
    fn jet(&self, tri: usize, bary: [f64; 3]) -> ScalarJet;
}

pub trait OneFormField {
    fn value(&self, tri: usize, bary: [f64; 3]) -> [f64; 2];
}

pub trait OneFormFieldC1: OneFormField {
    fn jet(&self, tri: usize, bary: [f64; 3]) -> OneFormJet;
}

pub trait TensorField {
    fn value(&self, tri: usize, bary: [f64; 3]) -> Sym2;
}

pub trait TensorFieldC2: TensorField {
    fn jet(&self, tri: usize, bary: [f64; 3]) -> SymTensorJet;
}

/// A tensor field usable as a metric: SPD-checked jets.
pub trait MetricGiver {
    fn metric_jet(&self, tri: usize, bary: [f64; 3]) -> Result<MetricJet>;
}

/// 1-jet of a vector field; `d[i][j]` = d_i u^j.
#[derive(Debug, Clone, Copy, Default)]
pub struct VectorJet {
    pub u: [f64; 2],
    pub d: [[f64; 2]; 2],
}

pub trait VectorField {
    fn value(&self, tri: usize, bary: [f64; 3]) -> [f64; 2];
}

pub trait VectorFieldC1: VectorField {
    fn jet(&self, tri: usize, bary: [f64; 3]) -> VectorJet;
}

// -- closed-form adapters ----------------------------------------------------

/// Scalar field from a physical-point jet closure.
pub struct FnScalar<F> {
    pub mesh: Arc<Mesh>,
    pub f: F,
}

impl<F: Fn([f64; 2]) -> ScalarJet> ScalarField for FnScalar<F> {
    fn value(&self, tri: usize, bary: [f64; 3]) -> f64 {
        (self.f)(self.mesh.bary_to_phys(tri, bary)).v
    }
}
impl<F: Fn([f64; 2]) -> ScalarJet> ScalarFieldC2 for FnScalar<F> {
    fn jet(&self, tri: usize, bary: [f64; 3]) -> ScalarJet {
        (self.f)(self.mesh.bary_to_phys(tri, bary))
    }
}

/// Symmetric tensor field from a physical-point jet closure.
pub struct FnTensor<F> {
    pub mesh: Arc<Mesh>,
    pub f: F,
}

impl<F: Fn([f64; 2]) -> SymTensorJet> TensorField for FnTensor<F> {
    fn value(&self, tri: usize, bary: [f64; 3]) -> Sym2 {
        (self.f)(self.mesh.bary_to_phys(tri, bary)).value
    }
}
impl<F: Fn([f64; 2]) -> SymTensorJet> TensorFieldC2 for FnTensor<F> {
    fn jet(&self, tri: usize, bary: [f64; 3]) -> SymTensorJet {
        (self.f)(self.mesh.bary_to_phys(tri, bary))
    }
}

/// Metric field from a physical-point jet closure (assumed smooth over the
/// whole domain).
pub struct FnMetric<F> {
    pub mesh: Arc<Mesh>,
    pub f: F,
}

impl<F: Fn([f64; 2]) -> MetricJet> TensorField for FnMetric<F> {
    fn value(&self, tri: usize, bary: [f64; 3]) -> Sym2 {
        (self.f)(self.mesh.bary_to_phys(tri, bary)).g
    }
}
impl<F: Fn([f64; 2]) -> MetricJet> TensorFieldC2 for FnMetric<F> {
    fn jet(&self, tri: usize, bary: [f64; 3]) -> SymTensorJet {
        SymTensorJet::from_metric(&(self.f)(self.mesh.bary_to_phys(tri, bary)))
    }
}
impl<F: Fn([f64; 2]) -> MetricJet> MetricGiver for FnMetric<F> {
    fn metric_jet(&self, tri: usize, bary: [f64; 3]) -> Result<MetricJet> {
        let jet = (self.f)(self.mesh.bary_to_phys(tri, bary));
        jet.check_spd(&format!("triangle {tri}"))?;
        Ok(jet)
    }
}

/// One-form field from a physical-point jet closure.
pub struct FnOneForm<F> {
    pub mesh: Arc<Mesh>,
    pub f: F,
}

impl<F: Fn([f64; 2]) -> OneFormJet> OneFormField for FnOneForm<F> {
    fn value(&self, tri: usize, bary: [f64; 3]) -> [f64; 2] {
        (self.f)(self.mesh.bary_to_phys(tri, bary)).a
    }
}
impl<F: Fn([f64; 2]) -> OneFormJet> OneFormFieldC1 for FnOneForm<F> {
    fn jet(&self, tri: usize, bary: [f64; 3]) -> OneFormJet {
        (self.f)(self.mesh.bary_to_phys(tri, bary))
    }
}

/// Vector field from a physical-point jet closure.
pub struct FnVector<F> {
    pub mesh: Arc<Mesh>,
    pub f: F,
}

impl<F: Fn([f64; 2]) -> VectorJet> VectorField for FnVector<F> {
    fn value(&self, tri: usize, bary: [f64; 3]) -> [f64; 2] {
        (self.f)(self.mesh.bary_to_phys(tri, bary)).u
    }
}
impl<F: Fn([f64; 2]) -> VectorJet> VectorFieldC1 for FnVector<F> {
    fn jet(&self, tri: usize, bary: [f64; 3]) -> VectorJet {
        (self.f)(self.mesh.bary_to_phys(tri, bary))
    }
}
