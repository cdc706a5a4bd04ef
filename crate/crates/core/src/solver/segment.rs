use serde::{Deserialize, Serialize};

use super::FluxKind;
use crate::vascular::{ArterySegment, BloodProperties, TubeLaw};

/// Discretized vessel: per-cell state `(A, Q)` plus the reference geometry
/// at cell centres and faces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentState {
    pub id: String,
    pub dz: f64,
    /// Cell centres, m.
    pub z: Vec<f64>,
    pub a: Vec<f64>,
    pub q: Vec<f64>,
    pub a0: Vec<f64>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    /// Reference area at the `n + 1` faces.
    pub a0_face: Vec<f64>,
    pub beta_face: Vec<f64>,
    pub external_pressure: f64,
    /// `∂A/∂t` from the previous step, used for the viscous wall term.
    pub area_rate: Vec<f64>,
}

impl SegmentState {
    /// Segment at rest (`Q = 0`) with uniform elastic pressure `pressure`.
    pub fn at_pressure(seg: &ArterySegment, cells: usize, pressure: f64) -> Self {
        let dz = seg.length / cells as f64;
        let z: Vec<f64> = (0..cells).map(|i| (i as f64 + 0.5) * dz).collect();
        let laws: Vec<TubeLaw> = z.iter().map(|&zi| seg.tube_law_at(zi / seg.length)).collect();
        let face_laws: Vec<TubeLaw> = (0..=cells)
            .map(|f| seg.tube_law_at(f as f64 / cells as f64))
            .collect();
        SegmentState {
            id: seg.id.clone(),
            dz,
            a: laws.iter().map(|l| l.area_for_pressure(pressure)).collect(),
            q: vec![0.0; cells],
            a0: laws.iter().map(|l| l.reference_area).collect(),
            beta: laws.iter().map(|l| l.beta).collect(),
            gamma: laws.iter().map(|l| l.gamma).collect(),
            a0_face: face_laws.iter().map(|l| l.reference_area).collect(),
            beta_face: face_laws.iter().map(|l| l.beta).collect(),
            external_pressure: seg.external_pressure,
            area_rate: vec![0.0; cells],
            z,
        }
    }

    pub fn cells(&self) -> usize {
        self.a.len()
    }

    pub fn length(&self) -> f64 {
        self.dz * self.cells() as f64
    }

    pub fn volume(&self) -> f64 {
        self.a.iter().sum::<f64>() * self.dz
    }

    pub fn elastic_pressure(&self, i: usize) -> f64 {
        self.external_pressure + self.beta[i] * (self.a[i].sqrt() - self.a0[i].sqrt())
    }

    pub fn viscous_pressure(&self, i: usize) -> f64 {
        self.gamma[i] / self.a[i].sqrt() * self.area_rate[i]
    }

    pub fn pressure(&self, i: usize) -> f64 {
        self.elastic_pressure(i) + self.viscous_pressure(i)
    }

    /// Largest stable time step for this segment at CFL number 1.
    pub fn max_stable_dt(&self, blood: &BloodProperties) -> f64 {
        let alpha = blood.coriolis_coefficient;
        let mut dt = f64::INFINITY;
        for i in 0..self.cells() {
            let u = self.q[i] / self.a[i];
            let c = wave_speed(self.beta[i], self.a[i], blood.density);
            let s = max_signal_speed(alpha, u, c);
            dt = dt.min(self.dz / s);
        }
        dt
    }

    /// Linear interpolation between cell centres at fractional position `xi`,
    /// clamped to the first and last centres.
    pub fn interpolate(&self, xi: f64, value: impl Fn(usize) -> f64) -> f64 {
        let n = self.cells();
        let s = xi * n as f64 - 0.5;
        if s <= 0.0 {
            return value(0);
        }
        if s >= (n - 1) as f64 {
            return value(n - 1);
        }
        let i = s.floor() as usize;
        let w = s - i as f64;
        (1.0 - w) * value(i) + w * value(i + 1)
    }
}

pub(crate) fn wave_speed(beta: f64, a: f64, density: f64) -> f64 {
    (beta * a.sqrt() / (2.0 * density)).sqrt()
}

/// Largest absolute eigenvalue of the flux Jacobian, `|αu| + sqrt(c² + α(α−1)u²)`.
pub(crate) fn max_signal_speed(alpha: f64, u: f64, c: f64) -> f64 {
    (alpha * u).abs() + (c * c + alpha * (alpha - 1.0) * u * u).sqrt()
}

fn eigenvalues(alpha: f64, u: f64, c: f64) -> (f64, f64) {
    let r = (c * c + alpha * (alpha - 1.0) * u * u).sqrt();
    (alpha * u - r, alpha * u + r)
}

/// Conservative flux `(Q, αQ²/A + βA^{3/2}/(3ρ))` with face stiffness `beta`.
pub(crate) fn physical_flux(a: f64, q: f64, beta: f64, alpha: f64, density: f64) -> (f64, f64) {
    (q, alpha * q * q / a + beta * a * a.sqrt() / (3.0 * density))
}

/// Numerical flux between left state `(al, ql)` and right state `(ar, qr)`.
pub(crate) fn numerical_flux(
    kind: FluxKind,
    (al, ql): (f64, f64),
    (ar, qr): (f64, f64),
    beta: f64,
    blood: &BloodProperties,
) -> (f64, f64) {
    let alpha = blood.coriolis_coefficient;
    let rho = blood.density;
    let fl = physical_flux(al, ql, beta, alpha, rho);
    let fr = physical_flux(ar, qr, beta, alpha, rho);
    let (ul, ur) = (ql / al, qr / ar);
    let (cl, cr) = (wave_speed(beta, al, rho), wave_speed(beta, ar, rho));
    match kind {
        FluxKind::Hll => {
            let (l_minus, l_plus) = eigenvalues(alpha, ul, cl);
            let (r_minus, r_plus) = eigenvalues(alpha, ur, cr);
            let sl = l_minus.min(r_minus);
            let sr = l_plus.max(r_plus);
            if sl >= 0.0 {
                fl
            } else if sr <= 0.0 {
                fr
            } else {
                let w = 1.0 / (sr - sl);
                (
                    (sr * fl.0 - sl * fr.0 + sl * sr * (ar - al)) * w,
                    (sr * fl.1 - sl * fr.1 + sl * sr * (qr - ql)) * w,
                )
            }
        }
        FluxKind::LocalLaxFriedrichs => {
            let s = max_signal_speed(alpha, ul, cl).max(max_signal_speed(alpha, ur, cr));
            (
                0.5 * (fl.0 + fr.0) - 0.5 * s * (ar - al),
                0.5 * (fl.1 + fr.1) - 0.5 * s * (qr - ql),
            )
        }
    }
}

pub(crate) fn minmod(a: f64, b: f64) -> f64 {
    if a * b <= 0.0 {
        0.0
    } else if a.abs() < b.abs() {
        a
    } else {
        b
    }
}

/// Half-step predicted states of one segment.
pub(crate) struct Predicted {
    /// State at the left face of each cell at `t + dt/2`.
    pub left: Vec<(f64, f64)>,
    /// State at the right face of each cell at `t + dt/2`.
    pub right: Vec<(f64, f64)>,
    /// Cell average at `t + dt/2`, used for sources.
    pub mid: Vec<(f64, f64)>,
}

/// MUSCL reconstruction with minmod slopes followed by the Hancock half-step
/// predictor. End cells use zero slope.
pub(crate) fn predict(seg: &SegmentState, dt: f64, blood: &BloodProperties) -> Predicted {
    let n = seg.cells();
    let alpha = blood.coriolis_coefficient;
    let rho = blood.density;
    let k = blood.friction_coefficient();
    let mut left = Vec::with_capacity(n);
    let mut right = Vec::with_capacity(n);
    let mut mid = Vec::with_capacity(n);
    for i in 0..n {
        let (sa, sq) = if i == 0 || i == n - 1 {
            (0.0, 0.0)
        } else {
            (
                minmod(seg.a[i] - seg.a[i - 1], seg.a[i + 1] - seg.a[i]),
                minmod(seg.q[i] - seg.q[i - 1], seg.q[i + 1] - seg.q[i]),
            )
        };
        let (al, ql) = (seg.a[i] - 0.5 * sa, seg.q[i] - 0.5 * sq);
        let (ar, qr) = (seg.a[i] + 0.5 * sa, seg.q[i] + 0.5 * sq);
        let pl = seg.beta_face[i] * (al.sqrt() - seg.a0_face[i].sqrt());
        let pr = seg.beta_face[i + 1] * (ar.sqrt() - seg.a0_face[i + 1].sqrt());
        let da = -(qr - ql) / seg.dz;
        let dq = -alpha * (qr * qr / ar - ql * ql / al) / seg.dz
            - seg.a[i] / rho * (pr - pl) / seg.dz
            - k * seg.q[i] / seg.a[i];
        let h = 0.5 * dt;
        left.push((al + h * da, ql + h * dq));
        right.push((ar + h * da, qr + h * dq));
        mid.push((seg.a[i] + h * da, seg.q[i] + h * dq));
    }
    Predicted { left, right, mid }
}

/// Momentum source at cell `i` evaluated at state `(a, q)`: friction plus the
/// taper terms left over from writing the pressure gradient in conservative form.
pub(crate) fn momentum_source(seg: &SegmentState, i: usize, (a, q): (f64, f64), blood: &BloodProperties) -> f64 {
    let dbeta = (seg.beta_face[i + 1] - seg.beta_face[i]) / seg.dz;
    let dbeta_sqrt_a0 = (seg.beta_face[i + 1] * seg.a0_face[i + 1].sqrt()
        - seg.beta_face[i] * seg.a0_face[i].sqrt())
        / seg.dz;
    -blood.friction_coefficient() * q / a
        - a / blood.density * (2.0 / 3.0 * a.sqrt() * dbeta - dbeta_sqrt_a0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minmod_picks_smaller_same_sign_slope() {
        assert_eq!(minmod(1.0, 2.0), 1.0);
        assert_eq!(minmod(-3.0, -2.0), -2.0);
        assert_eq!(minmod(1.0, -1.0), 0.0);
        assert_eq!(minmod(0.0, 5.0), 0.0);
    }

    #[test]
    fn fluxes_are_consistent() {
        let blood = BloodProperties::default();
        let state = (3e-4, 2e-5);
        for kind in [FluxKind::Hll, FluxKind::LocalLaxFriedrichs] {
            let f = numerical_flux(kind, state, state, 5e6, &blood);
            let exact = physical_flux(state.0, state.1, 5e6, 1.0, blood.density);
            assert!((f.0 - exact.0).abs() <= 1e-15 * exact.0.abs());
            assert!((f.1 - exact.1).abs() <= 1e-12 * exact.1.abs());
        }
    }

    #[test]
    fn interpolation_is_linear_between_centres() {
        let seg = ArterySegment {
            id: "s".into(),
            name: "s".into(),
            length: 1.0,
            proximal_radius: 0.01,
            distal_radius: 0.01,
            wall_thickness: 1e-3,
            elastic_modulus: 1e6,
            wall_viscosity: 0.0,
            external_pressure: 0.0,
            children: vec![],
            terminal_bed: Some("b".into()),
        };
        let mut s = SegmentState::at_pressure(&seg, 10, 0.0);
        for i in 0..10 {
            s.q[i] = i as f64;
        }
        let q = |xi: f64| s.interpolate(xi, |i| s.q[i]);
        assert_eq!(q(0.0), 0.0);
        assert_eq!(q(1.0), 9.0);
        assert!((q(0.5) - 4.5).abs() < 1e-12);
        assert!((q(0.25) - 2.0).abs() < 1e-12);
    }
}
