use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{HemoError, Result};
use crate::vascular::{BloodProperties, WindkesselBed};

const NEWTON_MAX_ITER: usize = 100;
const JUNCTION_TOL: f64 = 1e-10;

/// Interior state next to a boundary face together with the tube law at the face.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundaryState {
    pub a: f64,
    pub q: f64,
    pub beta: f64,
    pub a0: f64,
    pub external_pressure: f64,
}

impl BoundaryState {
    fn k(&self, density: f64) -> f64 {
        (self.beta / (2.0 * density)).sqrt()
    }

    fn wave_speed_at(&self, a: f64, density: f64) -> f64 {
        self.k(density) * a.sqrt().sqrt()
    }

    /// Forward Riemann invariant `u + 4c` of the interior state.
    pub fn forward_invariant(&self, density: f64) -> f64 {
        self.q / self.a + 4.0 * self.wave_speed_at(self.a, density)
    }

    /// Backward Riemann invariant `u − 4c` of the interior state.
    pub fn backward_invariant(&self, density: f64) -> f64 {
        self.q / self.a - 4.0 * self.wave_speed_at(self.a, density)
    }

    pub fn pressure_at(&self, a: f64) -> f64 {
        self.external_pressure + self.beta * (a.sqrt() - self.a0.sqrt())
    }
}

/// Scalar Newton iteration on an area, keeping iterates positive.
fn solve_area(f: impl Fn(f64) -> (f64, f64), start: f64) -> Option<f64> {
    let mut a = start;
    for _ in 0..NEWTON_MAX_ITER {
        let (r, dr) = f(a);
        if !r.is_finite() || !dr.is_finite() || dr == 0.0 {
            return None;
        }
        let mut step = -r / dr;
        while a + step <= 0.0 {
            step *= 0.5;
        }
        a += step;
        if step.abs() <= 1e-14 * a {
            return Some(a);
        }
    }
    None
}

/// Face state at the root inlet carrying the prescribed flow `q_in`, consistent
/// with the outgoing backward characteristic of the interior.
pub(crate) fn inlet_state(interior: &BoundaryState, q_in: f64, blood: &BloodProperties) -> Result<f64> {
    let rho = blood.density;
    let w2 = interior.backward_invariant(rho);
    let k = interior.k(rho);
    solve_area(
        |a| {
            let s = a.sqrt().sqrt();
            (q_in / a - 4.0 * k * s - w2, -q_in / (a * a) - k / (s * s * s))
        },
        interior.a,
    )
    .ok_or_else(|| HemoError::domain("solver", format!("inlet boundary solve failed for Q = {q_in:e}")))
}

/// Windkessel bed state: the capacitor pressure `P_c` (stored volume `C·P_c`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BedState {
    pub bed: WindkesselBed,
    pub pressure: f64,
}

impl BedState {
    pub fn new(bed: WindkesselBed, pressure: f64) -> Self {
        BedState { bed, pressure }
    }

    pub fn volume(&self) -> f64 {
        self.bed.compliance * self.pressure
    }

    /// Flow leaving through the distal resistance.
    pub fn outflow(&self) -> f64 {
        (self.pressure - self.bed.outflow_pressure) / self.bed.distal_resistance
    }

    /// Backward-Euler capacitor update as an affine function of the inflow:
    /// `P_c(n+1) = a + b·Q_in`.
    fn implicit(&self, dt: f64) -> (f64, f64) {
        let b = &self.bed;
        let denom = b.compliance + dt / b.distal_resistance;
        (
            (b.compliance * self.pressure + dt * b.outflow_pressure / b.distal_resistance) / denom,
            dt / denom,
        )
    }

    /// Advance with a prescribed inflow. Returns the new state and the pressure
    /// at the bed inlet, `P_c + R1·Q`.
    pub fn advance_with_flow(&self, q_in: f64, dt: f64) -> (BedState, f64) {
        let (a, b) = self.implicit(dt);
        let next = BedState {
            bed: self.bed,
            pressure: a + b * q_in,
        };
        (next, next.pressure + self.bed.proximal_resistance * q_in)
    }
}

/// Three-element Windkessel driven by the terminal pressure: backward Euler on
/// `C·dP_c/dt = (P_t − P_c)/R1 − (P_c − P_out)/R2`. Returns the flow into the
/// bed over the step and the updated state (stored volume `C·P_c`).
pub fn windkessel_outflow(state: &BedState, p_terminal: f64, dt: f64) -> Result<(f64, BedState)> {
    if !(dt > 0.0) {
        return Err(HemoError::domain("solver", format!("time step must be positive, got {dt}")));
    }
    let (a, b) = state.implicit(dt);
    let q = (p_terminal - a) / (state.bed.proximal_resistance + b);
    let next = BedState {
        bed: state.bed,
        pressure: a + b * q,
    };
    Ok((q, next))
}

/// Face state at a terminal outlet coupled implicitly to its bed. Returns the
/// face area and flow; the bed update follows from the flow.
pub(crate) fn terminal_state(
    interior: &BoundaryState,
    bed: &BedState,
    dt: f64,
    blood: &BloodProperties,
) -> Result<(f64, f64)> {
    let rho = blood.density;
    let w1 = interior.forward_invariant(rho);
    let k = interior.k(rho);
    let (pa, pb) = bed.implicit(dt);
    let r = bed.bed.proximal_resistance + pb;
    let a = solve_area(
        |a| {
            let s = a.sqrt().sqrt();
            let q = (interior.pressure_at(a) - pa) / r;
            let dq = interior.beta / (2.0 * a.sqrt()) / r;
            (q / a + 4.0 * k * s - w1, dq / a - q / (a * a) + k / (s * s * s))
        },
        interior.a,
    )
    .ok_or_else(|| HemoError::domain("solver", "terminal boundary solve failed"))?;
    Ok((a, (interior.pressure_at(a) - pa) / r))
}

#[derive(Clone, Debug, PartialEq)]
pub struct JunctionSolution {
    pub parent: (f64, f64),
    pub children: Vec<(f64, f64)>,
    pub iterations: usize,
    /// Max-norm of the normalized residual vector at exit.
    pub residual: f64,
}

/// Couple one parent end to the proximal ends of its children. Unknowns are the
/// face states `(A, Q)` of every vessel; equations are the incoming Riemann
/// invariant of each vessel, mass balance and continuity of total pressure
/// `P + ½ρu²`. Solved by damped Newton to a normalized residual below 1e-10.
pub fn junction_couple(
    parent_id: &str,
    parent: &BoundaryState,
    children: &[BoundaryState],
    blood: &BloodProperties,
) -> Result<JunctionSolution> {
    if children.is_empty() {
        return Err(HemoError::domain("solver", format!("junction '{parent_id}' has no children")));
    }
    let rho = blood.density;
    let vessels: Vec<&BoundaryState> = std::iter::once(parent).chain(children).collect();
    let m = vessels.len();
    let n = 2 * m;
    let invariants: Vec<f64> = vessels
        .iter()
        .enumerate()
        .map(|(j, v)| {
            if j == 0 {
                v.forward_invariant(rho)
            } else {
                v.backward_invariant(rho)
            }
        })
        .collect();
    let c_ref: Vec<f64> = vessels.iter().map(|v| v.wave_speed_at(v.a0, rho)).collect();
    let q_scale = parent.a0 * c_ref[0];
    let p_scale = rho * c_ref[0] * c_ref[0];

    let residual = |x: &DVector<f64>| -> DVector<f64> {
        let mut r = DVector::zeros(n);
        for (j, v) in vessels.iter().enumerate() {
            let (a, q) = (x[2 * j], x[2 * j + 1]);
            let sign = if j == 0 { 1.0 } else { -1.0 };
            r[j] = (q / a + sign * 4.0 * v.wave_speed_at(a, rho) - invariants[j]) / c_ref[j];
        }
        r[m] = (x[1] - (1..m).map(|j| x[2 * j + 1]).sum::<f64>()) / q_scale;
        let total = |j: usize| {
            let (a, q) = (x[2 * j], x[2 * j + 1]);
            vessels[j].pressure_at(a) + 0.5 * rho * (q / a) * (q / a)
        };
        let h0 = total(0);
        for j in 1..m {
            r[m + j] = (h0 - total(j)) / p_scale;
        }
        r
    };
    let jacobian = |x: &DVector<f64>| -> DMatrix<f64> {
        let mut jm = DMatrix::zeros(n, n);
        for (j, v) in vessels.iter().enumerate() {
            let (a, q) = (x[2 * j], x[2 * j + 1]);
            let sign = if j == 0 { 1.0 } else { -1.0 };
            let dc = v.wave_speed_at(a, rho) / (4.0 * a);
            jm[(j, 2 * j)] = (-q / (a * a) + sign * 4.0 * dc) / c_ref[j];
            jm[(j, 2 * j + 1)] = 1.0 / (a * c_ref[j]);
        }
        jm[(m, 1)] = 1.0 / q_scale;
        for j in 1..m {
            jm[(m, 2 * j + 1)] = -1.0 / q_scale;
        }
        let dh = |j: usize| {
            let (a, q) = (x[2 * j], x[2 * j + 1]);
            (
                vessels[j].beta / (2.0 * a.sqrt()) - rho * q * q / (a * a * a),
                rho * q / (a * a),
            )
        };
        let (h0a, h0q) = dh(0);
        for j in 1..m {
            let (hja, hjq) = dh(j);
            jm[(m + j, 0)] = h0a / p_scale;
            jm[(m + j, 1)] = h0q / p_scale;
            jm[(m + j, 2 * j)] = -hja / p_scale;
            jm[(m + j, 2 * j + 1)] = -hjq / p_scale;
        }
        jm
    };

    let mut x = DVector::from_iterator(n, vessels.iter().flat_map(|v| [v.a, v.q]));
    let mut r = residual(&x);
    let mut norm = r.amax();
    for iter in 0..NEWTON_MAX_ITER {
        if norm < JUNCTION_TOL {
            return Ok(JunctionSolution {
                parent: (x[0], x[1]),
                children: (1..m).map(|j| (x[2 * j], x[2 * j + 1])).collect(),
                iterations: iter,
                residual: norm,
            });
        }
        let Some(dx) = jacobian(&x).lu().solve(&(-&r)) else {
            break;
        };
        let mut lambda = 1.0;
        loop {
            let trial = &x + lambda * &dx;
            let positive = (0..m).all(|j| trial[2 * j] > 0.0);
            if positive {
                let rt = residual(&trial);
                let nt = rt.amax();
                if nt < norm || lambda < 1e-6 {
                    x = trial;
                    r = rt;
                    norm = nt;
                    break;
                }
            }
            lambda *= 0.5;
            if lambda < 1e-12 {
                return Err(HemoError::Coupling {
                    parent: parent_id.to_string(),
                    iterations: iter,
                    residual: norm,
                });
            }
        }
    }
    Err(HemoError::Coupling {
        parent: parent_id.to_string(),
        iterations: NEWTON_MAX_ITER,
        residual: norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vessel(a0: f64, a: f64, q: f64) -> BoundaryState {
        BoundaryState {
            a,
            q,
            beta: 4.0 / 3.0 * std::f64::consts::PI.sqrt() * 400.0 / a0,
            a0,
            external_pressure: 0.0,
        }
    }

    #[test]
    fn identical_child_is_transparent() {
        let blood = BloodProperties::default();
        let s = vessel(3e-4, 3.3e-4, 4e-5);
        let sol = junction_couple("p", &s, &[s], &blood).unwrap();
        assert!((sol.parent.0 - s.a).abs() < 1e-12 * s.a);
        assert!((sol.parent.1 - s.q).abs() < 1e-12 * s.q);
        assert!((sol.children[0].0 - s.a).abs() < 1e-12 * s.a);
        assert!((sol.children[0].1 - s.q).abs() < 1e-12 * s.q);
    }

    #[test]
    fn symmetric_split_halves_flow() {
        let blood = BloodProperties::default();
        let p = vessel(4e-4, 4.4e-4, 6e-5);
        let c = vessel(2e-4, 2.2e-4, 3e-5);
        let sol = junction_couple("p", &p, &[c, c], &blood).unwrap();
        assert!(sol.residual < 1e-10);
        let (q1, q2) = (sol.children[0].1, sol.children[1].1);
        assert!((q1 - q2).abs() < 1e-12 * q1.abs());
        assert!((q1 + q2 - sol.parent.1).abs() < 1e-12 * sol.parent.1.abs());
        assert!((q1 - sol.parent.1 / 2.0).abs() < 1e-12 * q1.abs());
    }

    #[test]
    fn junction_equations_hold_for_asymmetric_tree() {
        let blood = BloodProperties::default();
        let p = vessel(4e-4, 4.6e-4, 8e-5);
        let kids = [vessel(2.5e-4, 2.6e-4, 1e-5), vessel(1e-5, 1.1e-5, -1e-7), vessel(5e-5, 5.5e-5, 2e-6)];
        let sol = junction_couple("p", &p, &kids, &blood).unwrap();
        let rho = blood.density;
        let total = |v: &BoundaryState, (a, q): (f64, f64)| v.pressure_at(a) + 0.5 * rho * (q / a).powi(2);
        let h0 = total(&p, sol.parent);
        let qsum: f64 = sol.children.iter().map(|c| c.1).sum();
        assert!((qsum - sol.parent.1).abs() < 1e-10 * p.a0 * 5.0);
        for (v, s) in kids.iter().zip(&sol.children) {
            assert!((total(v, *s) - h0).abs() < 1e-10 * rho * 25.0);
            let w = s.1 / s.0 - 4.0 * (v.beta / (2.0 * rho)).sqrt() * s.0.powf(0.25);
            assert!((w - v.backward_invariant(rho)).abs() < 1e-9);
        }
    }

    #[test]
    fn rcr_steady_state_under_constant_flow() {
        let bed = WindkesselBed {
            proximal_resistance: 2e7,
            distal_resistance: 1.5e8,
            compliance: 1e-8,
            outflow_pressure: 500.0,
        };
        let q = 7e-5;
        let mut s = BedState::new(bed, 500.0);
        let mut p_in = 0.0;
        for _ in 0..40_000 {
            let (next, p) = s.advance_with_flow(q, 1e-3);
            s = next;
            p_in = p;
        }
        let expected = q * bed.total_resistance() + bed.outflow_pressure;
        assert!((p_in - expected).abs() < 1e-6 * expected);
    }

    #[test]
    fn rcr_equilibrium_and_decay() {
        let bed = WindkesselBed {
            proximal_resistance: 1e7,
            distal_resistance: 1e8,
            compliance: 1e-8,
            outflow_pressure: 0.0,
        };
        let (q, rest) = windkessel_outflow(&BedState::new(bed, 0.0), 0.0, 1e-3).unwrap();
        assert_eq!(q, 0.0);
        assert_eq!(rest.pressure, 0.0);

        let tau = bed.distal_resistance * bed.compliance;
        let dt = 1e-4;
        let mut s = BedState::new(bed, 1.0e4);
        let mut t = 0.0;
        while t < 2.0 * tau - 1e-12 {
            s = s.advance_with_flow(0.0, dt).0;
            t += dt;
        }
        let exact = 1.0e4 * (-t / tau).exp();
        assert!((s.pressure - exact).abs() < 0.01 * exact);
        assert!(windkessel_outflow(&s, 0.0, 0.0).is_err());
    }

    #[test]
    fn pressure_driven_bed_conserves_volume() {
        let bed = WindkesselBed {
            proximal_resistance: 1e7,
            distal_resistance: 1e8,
            compliance: 1e-8,
            outflow_pressure: 100.0,
        };
        let s = BedState::new(bed, 9000.0);
        let dt = 1e-3;
        let (q, next) = windkessel_outflow(&s, 12_000.0, dt).unwrap();
        let dv = next.volume() - s.volume();
        assert!((dv - dt * (q - next.outflow())).abs() < 1e-12 * s.volume());
        assert!((q - (12_000.0 - next.pressure) / bed.proximal_resistance).abs() < 1e-12 * q.abs());
    }

    #[test]
    fn inlet_state_matches_prescribed_flow() {
        let blood = BloodProperties::default();
        let s = vessel(3e-4, 3.2e-4, 1e-5);
        let a = inlet_state(&s, 2e-4, &blood).unwrap();
        let w = 2e-4 / a - 4.0 * (s.beta / (2.0 * blood.density)).sqrt() * a.powf(0.25);
        assert!((w - s.backward_invariant(blood.density)).abs() < 1e-10);
    }
}
