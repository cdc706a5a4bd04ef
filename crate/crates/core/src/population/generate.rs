use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{apply_acceptance_filter, sample_subject, subject_seed, to_mmhg, AcceptanceFilter, MeasurementSites, PriorSpec, VirtualSubject};
use crate::error::Result;
use crate::solver::{run_simulation, ProbeRequest, Quantity, SolverConfig};
use crate::vascular::ArterialNetwork;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerateOptions {
    pub solver: SolverConfig,
    pub filter: AcceptanceFilter,
    pub sites: MeasurementSites,
}

/// One simulated subject: clean single-beat APW (mmHg) at the sampled radial
/// site and the stored volume of the radial bed on the same arm (m³), both on
/// `round(125·60/HR)` samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopulationRecord {
    pub subject: VirtualSubject,
    pub apw_mmhg: Vec<f64>,
    pub bed_volume: Vec<f64>,
    pub sbp: f64,
    pub dbp: f64,
    pub accepted: bool,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectFailure {
    pub subject_id: u64,
    pub error: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PopulationReport {
    pub attempted: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub failures: Vec<SubjectFailure>,
    /// Accepted records in subject order.
    pub records: Vec<PopulationRecord>,
}

impl PopulationReport {
    /// Accepted over attempted.
    pub fn acceptance_rate(&self) -> f64 {
        self.accepted as f64 / self.attempted.max(1) as f64
    }
}

/// Simulate one subject and apply the outlier filter. SVR is filled in as the
/// mean aortic-root pressure minus the outflow pressure, divided by CO.
pub fn simulate_subject(
    subject: &VirtualSubject,
    base: &ArterialNetwork,
    prior: &PriorSpec,
    opts: &GenerateOptions,
) -> Result<PopulationRecord> {
    let net = subject.personalize(base, &prior.stiffness)?;
    let radial = opts.sites.radial(subject.arm);
    let probes = [
        ProbeRequest::new(radial, subject.probe_position, Quantity::Pressure),
        ProbeRequest::new(radial, 1.0, Quantity::BedVolume),
        ProbeRequest::new(net.root.clone(), 0.0, Quantity::Pressure),
    ];
    let hf = subject.heart_function();
    let result = run_simulation(&net, &hf, &opts.solver, &probes)?;
    let conductance: f64 = net.beds.values().map(|b| 1.0 / b.total_resistance()).sum();
    let p_out = net
        .beds
        .values()
        .map(|b| b.outflow_pressure / b.total_resistance())
        .sum::<f64>()
        / conductance;
    let root = &result.last_beat[2];
    let map = root.iter().sum::<f64>() / root.len() as f64;

    let mut subject = subject.clone();
    subject.svr = Some((map - p_out) / hf.mean_flow());
    let apw = to_mmhg(&result.last_beat[0]);
    let decision = apply_acceptance_filter(&apw, &opts.filter)?;
    Ok(PopulationRecord {
        subject,
        apw_mmhg: apw,
        bed_volume: result.last_beat[1].clone(),
        sbp: decision.sbp,
        dbp: decision.dbp,
        accepted: decision.accepted,
        converged: result.converged,
    })
}

/// Sample, simulate and filter subjects `first .. first + n`. Each subject
/// owns the stream `subject_seed(seed, id)` so the outcome does not depend
/// on scheduling. Solver failures are reported per subject.
pub fn generate_population(
    first: u64,
    n: usize,
    prior: &PriorSpec,
    base: &ArterialNetwork,
    opts: &GenerateOptions,
    seed: u64,
) -> Result<PopulationReport> {
    prior.validate()?;
    opts.solver.validate()?;
    let outcomes: Vec<(u64, Result<PopulationRecord>)> = (first..first + n as u64)
        .into_par_iter()
        .map(|id| {
            let out = sample_subject(prior, id, subject_seed(seed, id))
                .and_then(|s| simulate_subject(&s, base, prior, opts));
            (id, out)
        })
        .collect();
    let mut report = PopulationReport {
        attempted: n,
        ..Default::default()
    };
    for (id, out) in outcomes {
        match out {
            Ok(rec) if rec.accepted => {
                report.accepted += 1;
                report.records.push(rec);
            }
            Ok(_) => report.rejected += 1,
            Err(e) => report.failures.push(SubjectFailure {
                subject_id: id,
                error: e.to_string(),
            }),
        }
    }
    Ok(report)
}
