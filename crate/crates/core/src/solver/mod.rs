//! Second-order finite-volume integration of the 1D blood-flow equations on
//! an arterial tree: MUSCL-Hancock reconstruction, HLL or local Lax-Friedrichs
//! interface fluxes, characteristic boundary conditions at the inlet,
//! junctions and Windkessel outlets.

mod boundary;
mod io;
mod run;
mod segment;
mod simulator;

pub use boundary::{junction_couple, windkessel_outflow, BedState, BoundaryState, JunctionSolution};
pub use io::{encode_result, read_result_binary, write_result_binary, write_result_csv};
pub use run::{run_simulation, run_with_inflow, MassBudget, SimulationResult};
pub use segment::SegmentState;
pub use simulator::{Inflow, Simulator, StepReport};

use serde::{Deserialize, Serialize};

use crate::error::{HemoError, Result};
use crate::units::mmhg_to_pa;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Limiter {
    Minmod,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FluxKind {
    Hll,
    LocalLaxFriedrichs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub cells_per_segment_min: usize,
    /// Upper bound on the cell length, m. Segments get
    /// `max(cells_per_segment_min, ceil(L / max_cell_length))` cells.
    pub max_cell_length: f64,
    pub cfl_number: f64,
    /// Simulated time cap, s.
    pub duration: f64,
    pub transient_beats_to_discard: usize,
    /// Hz
    pub output_sample_rate: f64,
    pub limiter: Limiter,
    pub flux: FluxKind,
    /// Beat-to-beat max pressure change that counts as periodic, Pa.
    pub periodicity_tolerance: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            cells_per_segment_min: 8,
            max_cell_length: 0.01,
            cfl_number: 0.9,
            duration: 30.0,
            transient_beats_to_discard: 3,
            output_sample_rate: 125.0,
            limiter: Limiter::Minmod,
            flux: FluxKind::Hll,
            periodicity_tolerance: mmhg_to_pa(0.5),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.cfl_number > 0.0
            && self.cfl_number <= 1.0
            && self.cells_per_segment_min >= 4
            && self.output_sample_rate > 0.0
            && self.max_cell_length > 0.0
            && self.duration > 0.0
            && self.periodicity_tolerance >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(HemoError::domain(
                "solver",
                format!("invalid solver config (need 0 < cfl <= 1, cells >= 4, rate > 0): {self:?}"),
            ))
        }
    }

    pub fn cells_for(&self, length: f64) -> usize {
        let by_length = (length / self.max_cell_length).ceil() as usize;
        by_length.max(self.cells_per_segment_min)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    Pressure,
    Flow,
    Area,
    BedVolume,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeRequest {
    pub segment_id: String,
    /// Fractional position along the segment, 0 = proximal end.
    pub position: f64,
    pub quantity: Quantity,
}

impl ProbeRequest {
    pub fn new(segment_id: impl Into<String>, position: f64, quantity: Quantity) -> Self {
        ProbeRequest {
            segment_id: segment_id.into(),
            position,
            quantity,
        }
    }
}
