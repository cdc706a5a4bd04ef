use serde::{Deserialize, Serialize};

use crate::error::{HemoError, Result};

/// Constants of `Eh = R_d·(k1·exp(k2·R_d) + k3(age))` with `k3` linear in age.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WallStiffness {
    /// Pa
    pub k1: f64,
    /// m⁻¹
    pub k2: f64,
    /// Pa, value of k3 at age 50
    pub k3_at_50: f64,
    /// Pa·year⁻¹
    pub k3_per_year: f64,
}

impl Default for WallStiffness {
    fn default() -> Self {
        WallStiffness {
            k1: 3.0e5,
            k2: -900.0,
            k3_at_50: 6.0e4,
            k3_per_year: 1.4e3,
        }
    }
}

impl WallStiffness {
    pub fn k3(&self, age: f64) -> f64 {
        self.k3_at_50 + self.k3_per_year * (age - 50.0)
    }

    /// `Eh` in Pa·m. Caller guarantees `r_d > 0`.
    pub fn eh(&self, r_d: f64, age: f64) -> f64 {
        r_d * (self.k1 * (self.k2 * r_d).exp() + self.k3(age))
    }
}

/// `Eh = R_d·(k1·exp(k2·R_d) + k3)`.
pub fn wall_stiffness(r_d: f64, k1: f64, k2: f64, k3: f64) -> Result<f64> {
    if !(r_d > 0.0) {
        return Err(HemoError::domain(
            "population",
            format!("distal radius must be positive, got {r_d}"),
        ));
    }
    Ok(r_d * (k1 * (k2 * r_d).exp() + k3))
}
