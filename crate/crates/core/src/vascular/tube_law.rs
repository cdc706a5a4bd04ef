use std::f64::consts::PI;

use super::{ArterySegment, BloodProperties};
use crate::error::{HemoError, Result};

/// Local constitutive law of the vessel wall at one axial position.
///
/// `P(A) = Pext + β(√A − √A0) + (Γ/√A)·∂A/∂t` with
/// `β = (4/3)√π·E·h0/A0` and `Γ = (2/3)√π·φ·h0/A0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TubeLaw {
    pub reference_area: f64,
    pub beta: f64,
    pub gamma: f64,
    pub external_pressure: f64,
}

impl TubeLaw {
    pub fn new(seg: &ArterySegment, reference_area: f64) -> Self {
        let sqrt_pi = PI.sqrt();
        TubeLaw {
            reference_area,
            beta: 4.0 / 3.0 * sqrt_pi * seg.elastic_modulus * seg.wall_thickness / reference_area,
            gamma: 2.0 / 3.0 * sqrt_pi * seg.wall_viscosity * seg.wall_thickness / reference_area,
            external_pressure: seg.external_pressure,
        }
    }

    /// Elastic part of the pressure.
    pub fn elastic_pressure(&self, area: f64) -> f64 {
        self.external_pressure + self.beta * (area.sqrt() - self.reference_area.sqrt())
    }

    /// Viscous wall contribution `(Γ/√A)·∂A/∂t`.
    pub fn viscous_pressure(&self, area: f64, area_rate: f64) -> f64 {
        self.gamma / area.sqrt() * area_rate
    }

    pub fn pressure(&self, area: f64, area_rate: f64) -> f64 {
        self.elastic_pressure(area) + self.viscous_pressure(area, area_rate)
    }

    /// Area at which the elastic pressure equals `pressure`.
    pub fn area_for_pressure(&self, pressure: f64) -> f64 {
        let root = self.reference_area.sqrt() + (pressure - self.external_pressure) / self.beta;
        root * root
    }

    /// Pulse wave speed `c = sqrt(β√A / (2ρ))`.
    pub fn wave_speed(&self, area: f64, density: f64) -> f64 {
        (self.beta * area.sqrt() / (2.0 * density)).sqrt()
    }
}

/// Tube-law pressure for a segment with local reference area `a0`.
pub fn tube_law_pressure(area: f64, a0: f64, area_rate: f64, seg: &ArterySegment) -> Result<f64> {
    if !(area > 0.0) || !(a0 > 0.0) {
        return Err(HemoError::domain(
            "vascular_model",
            format!("tube law needs positive areas, got A = {area}, A0 = {a0}"),
        ));
    }
    Ok(TubeLaw::new(seg, a0).pressure(area, area_rate))
}

/// Wave speed at area `area` in a segment with local reference area `a0`.
pub fn wave_speed(area: f64, a0: f64, seg: &ArterySegment, blood: &BloodProperties) -> Result<f64> {
    if !(area > 0.0) || !(a0 > 0.0) {
        return Err(HemoError::domain(
            "vascular_model",
            format!("wave speed needs positive areas, got A = {area}, A0 = {a0}"),
        ));
    }
    Ok(TubeLaw::new(seg, a0).wave_speed(area, blood.density))
}
