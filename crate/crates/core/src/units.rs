//! Unit conversions. Everything inside the crate is SI; these helpers exist
//! for config ingestion and for reporting in clinical units.

pub const PA_PER_MMHG: f64 = 133.322_387_415;
pub const M3_PER_ML: f64 = 1e-6;
pub const M_PER_CM: f64 = 1e-2;
pub const M_PER_MM: f64 = 1e-3;

pub fn mmhg_to_pa(p: f64) -> f64 {
    p * PA_PER_MMHG
}

pub fn pa_to_mmhg(p: f64) -> f64 {
    p / PA_PER_MMHG
}

pub fn ml_to_m3(v: f64) -> f64 {
    v * M3_PER_ML
}

pub fn m3_to_ml(v: f64) -> f64 {
    v / M3_PER_ML
}

/// Cardiac output in L/min from heart rate (beats/min) and stroke volume (m³).
pub fn cardiac_output_l_per_min(heart_rate: f64, stroke_volume_m3: f64) -> f64 {
    heart_rate * stroke_volume_m3 * 1e3
}

/// Convert cardiac output in L/min to m³/s.
pub fn l_per_min_to_m3_per_s(co: f64) -> f64 {
    co * 1e-3 / 60.0
}
