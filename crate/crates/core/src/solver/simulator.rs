use std::collections::BTreeMap;

use super::boundary::{inlet_state, junction_couple, terminal_state, BedState, BoundaryState};
use super::segment::{momentum_source, numerical_flux, physical_flux, predict, Predicted, SegmentState};
use super::{ProbeRequest, Quantity, SolverConfig};
use crate::error::{HemoError, Result};
use crate::vascular::{inflow_at, validate_network, ArterialNetwork, HeartFunction};

/// Flow prescribed at the root inlet.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Inflow {
    Heart(HeartFunction),
    Constant(f64),
}

impl Inflow {
    pub fn at(&self, t: f64) -> f64 {
        match self {
            Inflow::Heart(hf) => inflow_at(hf, t),
            Inflow::Constant(q) => *q,
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            Inflow::Heart(hf) => hf.mean_flow(),
            Inflow::Constant(q) => *q,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepReport {
    pub dt: f64,
    /// Volume entering at the root over the step.
    pub inflow_volume: f64,
    /// Volume leaving through all distal bed resistances over the step.
    pub outflow_volume: f64,
    /// Largest normalized junction residual on this step.
    pub junction_residual: f64,
}

#[derive(Clone, Debug)]
pub(crate) struct ResolvedProbe {
    pub segment: usize,
    pub position: f64,
    pub quantity: Quantity,
    pub bed: Option<usize>,
}

/// Time-stepping state of a whole network.
#[derive(Clone, Debug)]
pub struct Simulator {
    pub net: ArterialNetwork,
    pub cfg: SolverConfig,
    pub inflow: Inflow,
    pub segments: Vec<SegmentState>,
    pub beds: Vec<BedState>,
    pub bed_ids: Vec<String>,
    pub time: f64,
    index: BTreeMap<String, usize>,
    children: Vec<Vec<usize>>,
    bed_of: Vec<Option<usize>>,
    root: usize,
}

impl Simulator {
    /// Network at rest at the mean pressure implied by the mean inflow and the
    /// bed resistances, with beds charged to carry their share of that flow.
    pub fn new(net: &ArterialNetwork, cfg: &SolverConfig, inflow: Inflow) -> Result<Self> {
        cfg.validate()?;
        let violations = validate_network(net);
        if !violations.is_empty() {
            let list: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
            return Err(HemoError::domain("vascular_model", list.join("; ")));
        }
        let order: Vec<String> = net.depth_first().into_iter().map(str::to_string).collect();
        let index: BTreeMap<String, usize> =
            order.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();

        let leaf_beds: Vec<&crate::vascular::WindkesselBed> = order
            .iter()
            .filter_map(|id| net.segments[id].terminal_bed.as_ref())
            .map(|b| &net.beds[b])
            .collect();
        let conductance: f64 = leaf_beds.iter().map(|b| 1.0 / b.total_resistance()).sum();
        let p_out_mean = leaf_beds
            .iter()
            .map(|b| b.outflow_pressure / b.total_resistance())
            .sum::<f64>()
            / conductance;
        let p_mean = inflow.mean() / conductance + p_out_mean;

        let mut segments = Vec::with_capacity(order.len());
        let mut children = Vec::with_capacity(order.len());
        let mut bed_of = Vec::with_capacity(order.len());
        let mut beds = Vec::new();
        let mut bed_ids = Vec::new();
        for id in &order {
            let seg = &net.segments[id];
            segments.push(SegmentState::at_pressure(seg, cfg.cells_for(seg.length), p_mean));
            children.push(seg.children.iter().map(|c| index[c]).collect());
            bed_of.push(seg.terminal_bed.as_ref().map(|b| {
                let bed = net.beds[b];
                let q = (p_mean - bed.outflow_pressure) / bed.total_resistance();
                beds.push(BedState::new(bed, p_mean - bed.proximal_resistance * q));
                bed_ids.push(b.clone());
                beds.len() - 1
            }));
        }
        Ok(Simulator {
            net: net.clone(),
            cfg: cfg.clone(),
            inflow,
            segments,
            beds,
            bed_ids,
            time: 0.0,
            root: index[&net.root],
            index,
            children,
            bed_of,
        })
    }

    pub fn segment(&self, id: &str) -> Option<&SegmentState> {
        self.index.get(id).map(|&i| &self.segments[i])
    }

    pub fn segment_mut(&mut self, id: &str) -> Option<&mut SegmentState> {
        self.index.get(id).map(|&i| &mut self.segments[i])
    }

    /// Blood in the vessels plus volume stored in the beds, m³.
    pub fn total_volume(&self) -> f64 {
        self.segments.iter().map(SegmentState::volume).sum::<f64>()
            + self.beds.iter().map(BedState::volume).sum::<f64>()
    }

    /// Largest admissible step under the configured CFL number.
    pub fn stable_dt(&self) -> f64 {
        let blood = &self.net.blood;
        self.cfg.cfl_number
            * self
                .segments
                .iter()
                .map(|s| s.max_stable_dt(blood))
                .fold(f64::INFINITY, f64::min)
    }

    fn interior(seg: &SegmentState, state: (f64, f64), face: usize) -> BoundaryState {
        BoundaryState {
            a: state.0,
            q: state.1,
            beta: seg.beta_face[face],
            a0: seg.a0_face[face],
            external_pressure: seg.external_pressure,
        }
    }

    /// Advance all segments and beds by `dt` with inflow evaluated at mid-step.
    pub fn step(&mut self, dt: f64) -> Result<StepReport> {
        let limit = self.stable_dt();
        if !(dt > 0.0) || dt > limit * (1.0 + 1e-12) {
            return Err(HemoError::StepSize { dt, limit });
        }
        let blood = self.net.blood;
        let alpha = blood.coriolis_coefficient;
        let rho = blood.density;
        let q_in = self.inflow.at(self.time + 0.5 * dt);

        let predicted: Vec<Predicted> = self.segments.iter().map(|s| predict(s, dt, &blood)).collect();
        let mut fluxes: Vec<Vec<(f64, f64)>> = self
            .segments
            .iter()
            .zip(&predicted)
            .map(|(s, p)| {
                let n = s.cells();
                let mut f = vec![(0.0, 0.0); n + 1];
                for i in 1..n {
                    f[i] = numerical_flux(self.cfg.flux, p.right[i - 1], p.left[i], s.beta_face[i], &blood);
                }
                f
            })
            .collect();

        let root = &self.segments[self.root];
        let a_in = inlet_state(&Self::interior(root, predicted[self.root].left[0], 0), q_in, &blood)?;
        fluxes[self.root][0] = physical_flux(a_in, q_in, root.beta_face[0], alpha, rho);

        let mut report = StepReport {
            dt,
            inflow_volume: q_in * dt,
            ..Default::default()
        };
        let mut bed_flows = vec![0.0; self.beds.len()];
        for (p, kids) in self.children.iter().enumerate() {
            let seg = &self.segments[p];
            let n = seg.cells();
            let end = Self::interior(seg, predicted[p].right[n - 1], n);
            if let Some(b) = self.bed_of[p] {
                let (a, q) = terminal_state(&end, &self.beds[b], dt, &blood)?;
                fluxes[p][n] = physical_flux(a, q, seg.beta_face[n], alpha, rho);
                bed_flows[b] = q;
                continue;
            }
            let starts: Vec<BoundaryState> = kids
                .iter()
                .map(|&c| Self::interior(&self.segments[c], predicted[c].left[0], 0))
                .collect();
            let sol = junction_couple(&seg.id, &end, &starts, &blood)?;
            report.junction_residual = report.junction_residual.max(sol.residual);
            let mut mass = 0.0;
            for (&c, &(a, q)) in kids.iter().zip(&sol.children) {
                fluxes[c][0] = physical_flux(a, q, self.segments[c].beta_face[0], alpha, rho);
                mass += q;
            }
            let (a, q) = sol.parent;
            fluxes[p][n] = (mass, physical_flux(a, q, seg.beta_face[n], alpha, rho).1);
        }

        for (si, seg) in self.segments.iter_mut().enumerate() {
            let f = &fluxes[si];
            let mid = &predicted[si].mid;
            let n = seg.cells();
            let r = dt / seg.dz;
            let a_old = seg.a.clone();
            for i in 0..n {
                let source = momentum_source(seg, i, mid[i], &blood);
                seg.a[i] -= r * (f[i + 1].0 - f[i].0);
                seg.q[i] += -r * (f[i + 1].1 - f[i].1) + dt * source;
            }
            if seg.gamma.iter().any(|&g| g > 0.0) {
                let pv: Vec<f64> = (0..n)
                    .map(|i| seg.gamma[i] / a_old[i].sqrt() * seg.area_rate[i])
                    .collect();
                for i in 0..n {
                    let grad = if i == 0 {
                        (pv[1] - pv[0]) / seg.dz
                    } else if i == n - 1 {
                        (pv[n - 1] - pv[n - 2]) / seg.dz
                    } else {
                        (pv[i + 1] - pv[i - 1]) / (2.0 * seg.dz)
                    };
                    seg.q[i] -= dt * a_old[i] / rho * grad;
                }
            }
            for i in 0..n {
                if !(seg.a[i] > 0.0) || !seg.q[i].is_finite() {
                    return Err(HemoError::Stability {
                        segment: seg.id.clone(),
                        cell: i,
                        time: self.time + dt,
                    });
                }
                seg.area_rate[i] = (seg.a[i] - a_old[i]) / dt;
            }
        }

        for (bed, &q) in self.beds.iter_mut().zip(&bed_flows) {
            let (next, _) = bed.advance_with_flow(q, dt);
            *bed = next;
            report.outflow_volume += dt * bed.outflow();
        }
        self.time += dt;
        Ok(report)
    }

    pub(crate) fn resolve_probes(&self, probes: &[ProbeRequest]) -> Result<Vec<ResolvedProbe>> {
        probes
            .iter()
            .map(|p| {
                let &segment = self.index.get(&p.segment_id).ok_or_else(|| {
                    HemoError::domain("solver", format!("probe references unknown segment '{}'", p.segment_id))
                })?;
                if !(0.0..=1.0).contains(&p.position) {
                    return Err(HemoError::domain(
                        "solver",
                        format!("probe position {} outside [0, 1]", p.position),
                    ));
                }
                let bed = self.bed_of[segment];
                if p.quantity == Quantity::BedVolume && bed.is_none() {
                    return Err(HemoError::domain(
                        "solver",
                        format!("segment '{}' has no terminal bed to probe", p.segment_id),
                    ));
                }
                Ok(ResolvedProbe {
                    segment,
                    position: p.position,
                    quantity: p.quantity,
                    bed,
                })
            })
            .collect()
    }

    pub(crate) fn probe_value(&self, p: &ResolvedProbe) -> f64 {
        let s = &self.segments[p.segment];
        match p.quantity {
            Quantity::Pressure => s.interpolate(p.position, |i| s.pressure(i)),
            Quantity::Flow => s.interpolate(p.position, |i| s.q[i]),
            Quantity::Area => s.interpolate(p.position, |i| s.a[i]),
            Quantity::BedVolume => self.beds[p.bed.expect("resolved")].volume(),
        }
    }

    /// Mid-segment pressure monitors used for the periodicity criterion.
    pub(crate) fn monitor_probes(&self) -> Vec<ResolvedProbe> {
        (0..self.segments.len())
            .map(|segment| ResolvedProbe {
                segment,
                position: 0.5,
                quantity: Quantity::Pressure,
                bed: None,
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vascular::{reference_network, uniform_vessel, BloodProperties};

    fn rest_vessel() -> (ArterialNetwork, SolverConfig) {
        let mut net = uniform_vessel(0.5, 0.01, 1e-3, 4e5, BloodProperties::default());
        net.beds.get_mut("outlet").unwrap().outflow_pressure = 0.0;
        (net, SolverConfig::default())
    }

    #[test]
    fn rest_state_is_steady() {
        let (net, cfg) = rest_vessel();
        let mut sim = Simulator::new(&net, &cfg, Inflow::Constant(0.0)).unwrap();
        let before = sim.segments[0].clone();
        for _ in 0..200 {
            let dt = sim.stable_dt();
            sim.step(dt).unwrap();
        }
        let after = &sim.segments[0];
        for i in 0..after.cells() {
            assert!((after.a[i] - before.a[i]).abs() <= 1e-14 * before.a[i]);
            assert!(after.q[i].abs() <= 1e-14 * before.a[i]);
        }
    }

    #[test]
    fn oversized_step_is_rejected() {
        let (net, cfg) = rest_vessel();
        let mut sim = Simulator::new(&net, &cfg, Inflow::Constant(0.0)).unwrap();
        let dt = 2.0 * sim.stable_dt();
        assert!(matches!(sim.step(dt), Err(HemoError::StepSize { .. })));
    }

    #[test]
    fn one_step_volume_balance() {
        let net = reference_network();
        let hf = HeartFunction {
            heart_rate: 75.0,
            stroke_volume: 70e-6,
            lvet: 0.28,
            peak_flow_time: 0.1,
            reverse_flow_fraction: 0.03,
        };
        let mut sim = Simulator::new(&net, &SolverConfig::default(), Inflow::Heart(hf)).unwrap();
        for _ in 0..500 {
            let v0 = sim.total_volume();
            let dt = sim.stable_dt();
            let r = sim.step(dt).unwrap();
            let change = sim.total_volume() - v0;
            let expected = r.inflow_volume - r.outflow_volume;
            assert!((change - expected).abs() < 1e-10 * v0, "{change} vs {expected}");
            assert!(r.junction_residual < 1e-10);
        }
    }

    #[test]
    fn bad_probes_are_rejected() {
        let net = reference_network();
        let sim = Simulator::new(&net, &SolverConfig::default(), Inflow::Constant(0.0)).unwrap();
        assert!(sim.resolve_probes(&[ProbeRequest::new("nope", 0.5, Quantity::Flow)]).is_err());
        assert!(sim.resolve_probes(&[ProbeRequest::new("aorta", 1.5, Quantity::Flow)]).is_err());
        assert!(sim.resolve_probes(&[ProbeRequest::new("aorta", 0.5, Quantity::BedVolume)]).is_err());
        assert!(sim.resolve_probes(&[ProbeRequest::new("l_radial", 1.0, Quantity::BedVolume)]).is_ok());
    }
}
