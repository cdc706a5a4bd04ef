//! Arterial network description: blood and wall properties, the visco-elastic
//! tube law, the aortic inflow waveform, terminal Windkessel beds and the
//! tree topology of the network.

mod config;
mod inflow;
mod network;
mod tube_law;

pub use config::{network_from_json, network_to_json, read_network, write_network};
pub use inflow::{inflow_at, inflow_waveform, reverse_lobe_width};
pub use network::{
    reference_network, scale_network_to_height, uniform_vessel, validate_network, Violation,
};
pub use tube_law::{tube_law_pressure, wave_speed, TubeLaw};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{HemoError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BloodProperties {
    /// kg·m⁻³
    pub density: f64,
    /// Pa·s
    pub dynamic_viscosity: f64,
    pub coriolis_coefficient: f64,
    pub velocity_profile_shape: f64,
}

impl Default for BloodProperties {
    fn default() -> Self {
        BloodProperties {
            density: 1060.0,
            dynamic_viscosity: 4e-3,
            coriolis_coefficient: 1.0,
            velocity_profile_shape: 9.0,
        }
    }
}

impl BloodProperties {
    /// Coefficient `K` of the friction source `-K·Q/A` in the momentum equation.
    pub fn friction_coefficient(&self) -> f64 {
        2.0 * self.dynamic_viscosity / self.density * (self.velocity_profile_shape + 2.0)
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.density > 0.0) {
            out.push("blood density must be positive".to_string());
        }
        if !(self.dynamic_viscosity >= 0.0) {
            out.push("blood viscosity must be non-negative".to_string());
        }
        if !(self.coriolis_coefficient >= 1.0) {
            out.push("Coriolis coefficient must be >= 1".to_string());
        }
        if !(self.velocity_profile_shape >= 2.0) {
            out.push("velocity profile shape must be >= 2".to_string());
        }
        out
    }
}

/// One axisymmetric, linearly tapered vessel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArterySegment {
    pub id: String,
    pub name: String,
    /// m
    pub length: f64,
    /// m
    pub proximal_radius: f64,
    /// m
    pub distal_radius: f64,
    /// m
    pub wall_thickness: f64,
    /// Pa
    pub elastic_modulus: f64,
    /// Pa·s
    pub wall_viscosity: f64,
    /// Pa
    pub external_pressure: f64,
    pub children: Vec<String>,
    pub terminal_bed: Option<String>,
}

impl ArterySegment {
    /// Lumen radius at fractional position `xi` ∈ [0, 1] along the vessel.
    pub fn radius_at(&self, xi: f64) -> f64 {
        self.proximal_radius + (self.distal_radius - self.proximal_radius) * xi
    }

    pub fn reference_area_at(&self, xi: f64) -> f64 {
        let r = self.radius_at(xi);
        std::f64::consts::PI * r * r
    }

    pub fn tube_law_at(&self, xi: f64) -> TubeLaw {
        TubeLaw::new(self, self.reference_area_at(xi))
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let id = &self.id;
        if !(self.length > 0.0) {
            out.push(format!("segment '{id}': length must be positive"));
        }
        if !(self.distal_radius > 0.0 && self.distal_radius <= self.proximal_radius) {
            out.push(format!(
                "segment '{id}': radii must satisfy 0 < distal <= proximal"
            ));
        }
        if !(self.wall_thickness > 0.0) {
            out.push(format!("segment '{id}': wall thickness must be positive"));
        }
        if !(self.elastic_modulus > 0.0) {
            out.push(format!("segment '{id}': elastic modulus must be positive"));
        }
        if !(self.wall_viscosity >= 0.0) {
            out.push(format!("segment '{id}': wall viscosity must be non-negative"));
        }
        if !self.external_pressure.is_finite() {
            out.push(format!("segment '{id}': external pressure must be finite"));
        }
        out
    }
}

/// Three-element (RCR) lumped model of a downstream vascular bed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindkesselBed {
    /// Pa·s·m⁻³
    pub proximal_resistance: f64,
    /// Pa·s·m⁻³
    pub distal_resistance: f64,
    /// m³·Pa⁻¹
    pub compliance: f64,
    /// Pa
    pub outflow_pressure: f64,
}

impl WindkesselBed {
    pub fn total_resistance(&self) -> f64 {
        self.proximal_resistance + self.distal_resistance
    }

    pub fn violations(&self, id: &str) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.proximal_resistance > 0.0 && self.distal_resistance > 0.0) {
            out.push(format!("bed '{id}': resistances must be positive"));
        }
        if !(self.compliance > 0.0) {
            out.push(format!("bed '{id}': compliance must be positive"));
        }
        if !self.outflow_pressure.is_finite() {
            out.push(format!("bed '{id}': outflow pressure must be finite"));
        }
        out
    }
}

/// Five-parameter description of left-ventricular ejection.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeartFunction {
    /// beats·min⁻¹
    pub heart_rate: f64,
    /// m³
    pub stroke_volume: f64,
    /// s
    pub lvet: f64,
    /// s
    pub peak_flow_time: f64,
    pub reverse_flow_fraction: f64,
}

impl HeartFunction {
    /// Cardiac period in seconds.
    pub fn period(&self) -> f64 {
        60.0 / self.heart_rate
    }

    /// Mean volumetric flow over a beat, m³·s⁻¹.
    pub fn mean_flow(&self) -> f64 {
        self.stroke_volume / self.period()
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.heart_rate > 0.0
            && self.stroke_volume > 0.0
            && self.peak_flow_time > 0.0
            && self.peak_flow_time < self.lvet
            && self.lvet < self.period()
            && self.reverse_flow_fraction >= 0.0
            && self.reverse_flow_fraction < 1.0;
        if ok {
            Ok(())
        } else {
            Err(HemoError::domain(
                "vascular_model",
                format!("heart function violates 0 < PFT < LVET < 60/HR, SV > 0, 0 <= RFV < 1: {self:?}"),
            ))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArterialNetwork {
    pub segments: BTreeMap<String, ArterySegment>,
    pub root: String,
    pub beds: BTreeMap<String, WindkesselBed>,
    pub blood: BloodProperties,
}

impl ArterialNetwork {
    pub fn segment(&self, id: &str) -> Option<&ArterySegment> {
        self.segments.get(id)
    }

    /// Segment ids in depth-first order starting at the root. Assumes a valid tree.
    pub fn depth_first(&self) -> Vec<&str> {
        let mut order = Vec::with_capacity(self.segments.len());
        let mut stack = vec![self.root.as_str()];
        while let Some(id) = stack.pop() {
            order.push(id);
            if let Some(seg) = self.segments.get(id) {
                for child in seg.children.iter().rev() {
                    stack.push(child.as_str());
                }
            }
        }
        order
    }

    /// Parallel combination of all bed resistances (R1 + R2 per bed).
    pub fn equivalent_bed_resistance(&self) -> f64 {
        let conductance: f64 = self
            .segments
            .values()
            .filter_map(|s| s.terminal_bed.as_ref())
            .filter_map(|b| self.beds.get(b))
            .map(|b| 1.0 / b.total_resistance())
            .sum();
        1.0 / conductance
    }
}
