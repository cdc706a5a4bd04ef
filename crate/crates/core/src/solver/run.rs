use serde::{Deserialize, Serialize};

use super::simulator::{Inflow, Simulator};
use super::{ProbeRequest, SolverConfig};
use crate::error::{HemoError, Result};
use crate::vascular::{ArterialNetwork, HeartFunction};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MassBudget {
    pub initial_volume: f64,
    pub final_volume: f64,
    pub inflow_volume: f64,
    pub outflow_volume: f64,
}

impl MassBudget {
    /// `|V(T) − V(0) − ∫(Q_in − Q_out)dt| / V(0)`.
    pub fn relative_drift(&self) -> f64 {
        (self.final_volume - self.initial_volume - (self.inflow_volume - self.outflow_volume)).abs()
            / self.initial_volume
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationResult {
    pub probes: Vec<ProbeRequest>,
    pub sample_rate: f64,
    /// One uniformly sampled series per probe covering the retained beats.
    pub series: Vec<Vec<f64>>,
    /// Sample index at which each retained beat starts.
    pub beat_boundaries: Vec<usize>,
    /// Cardiac period, s.
    pub period: f64,
    /// Final beat of each probe on a phase-locked grid of `round(rate·period)` points.
    pub last_beat: Vec<Vec<f64>>,
    /// Max-norm pressure change between consecutive beats at the monitors, Pa.
    /// Entry `k` compares beat `k + 1` with beat `k`.
    pub beat_deltas: Vec<f64>,
    /// Max |ΔP| between the last two beats, Pa.
    pub max_beat_delta: f64,
    /// False when the periodicity tolerance was not reached within the duration.
    pub converged: bool,
    pub beats_simulated: usize,
    pub steps: usize,
    pub mass: MassBudget,
}

/// Simulate `net` driven by `hf` until periodic or `cfg.duration` elapses.
pub fn run_simulation(
    net: &ArterialNetwork,
    hf: &HeartFunction,
    cfg: &SolverConfig,
    probes: &[ProbeRequest],
) -> Result<SimulationResult> {
    hf.validate()?;
    run_with_inflow(net, Inflow::Heart(*hf), hf.period(), cfg, probes)
}

/// As [`run_simulation`] with an arbitrary inflow; `period` sets the beat
/// bookkeeping used for periodicity checks and output segmentation.
pub fn run_with_inflow(
    net: &ArterialNetwork,
    inflow: Inflow,
    period: f64,
    cfg: &SolverConfig,
    probes: &[ProbeRequest],
) -> Result<SimulationResult> {
    let mut sim = Simulator::new(net, cfg, inflow)?;
    let resolved = sim.resolve_probes(probes)?;
    let monitors = sim.monitor_probes();
    let fs = cfg.output_sample_rate;
    let per_beat = ((fs * period).round() as usize).max(1);
    if !(period > 0.0) || period > cfg.duration {
        return Err(HemoError::domain(
            "solver",
            format!("period {period} s must be positive and fit in duration {} s", cfg.duration),
        ));
    }
    let max_beats = ((cfg.duration / period).floor() as usize).max(1);

    let read = |sim: &Simulator| -> Vec<f64> {
        resolved
            .iter()
            .chain(&monitors)
            .map(|p| sim.probe_value(p))
            .collect()
    };
    let np = resolved.len();
    let mut uniform: Vec<Vec<f64>> = vec![Vec::new(); np];
    let mut phase: Vec<Vec<f64>> = vec![Vec::new(); np + monitors.len()];
    let mut next_uniform = 0usize;
    let mut next_phase = 0usize;
    let phase_dt = period / per_beat as f64;

    let mut mass = MassBudget {
        initial_volume: sim.total_volume(),
        ..Default::default()
    };
    let mut prev = read(&sim);
    let mut beats = 0usize;
    let mut deltas = Vec::new();
    let mut converged = false;
    let mut steps = 0usize;

    let record = |t0: f64, t1: f64, v0: &[f64], v1: &[f64], t: f64| -> Vec<f64> {
        let w = (t - t0) / (t1 - t0);
        v0.iter().zip(v1).map(|(a, b)| a + (b - a) * w).collect()
    };

    // sample at t = 0
    for (i, v) in prev.iter().enumerate() {
        if i < np {
            uniform[i].push(*v);
        }
        phase[i].push(*v);
    }
    next_uniform += 1;
    next_phase += 1;

    while beats < max_beats {
        let t0 = sim.time;
        let dt = sim.stable_dt();
        let report = sim.step(dt)?;
        steps += 1;
        mass.inflow_volume += report.inflow_volume;
        mass.outflow_volume += report.outflow_volume;
        let t1 = sim.time;
        let now = read(&sim);

        while next_uniform as f64 / fs <= t1 {
            let v = record(t0, t1, &prev, &now, next_uniform as f64 / fs);
            for (i, s) in uniform.iter_mut().enumerate() {
                s.push(v[i]);
            }
            next_uniform += 1;
        }
        while next_phase as f64 * phase_dt <= t1 {
            let v = record(t0, t1, &prev, &now, next_phase as f64 * phase_dt);
            for (s, x) in phase.iter_mut().zip(v) {
                s.push(x);
            }
            next_phase += 1;
        }
        prev = now;

        while t1 >= (beats + 1) as f64 * period && beats < max_beats {
            let k = beats;
            beats += 1;
            if k >= 1 {
                let delta = monitors_delta(&phase[np..], k, per_beat);
                deltas.push(delta);
                if k >= cfg.transient_beats_to_discard && delta < cfg.periodicity_tolerance {
                    converged = true;
                }
            }
            if converged {
                break;
            }
        }
        if converged {
            break;
        }
    }
    mass.final_volume = sim.total_volume();

    let first_kept = cfg.transient_beats_to_discard.min(beats - 1);
    let start = index_at(first_kept as f64 * period, fs);
    let end = index_at(beats as f64 * period, fs).min(uniform.first().map_or(usize::MAX, Vec::len));
    let series = uniform
        .into_iter()
        .map(|s| s[start.min(s.len())..end.min(s.len())].to_vec())
        .collect();
    let beat_boundaries = (first_kept..beats)
        .map(|k| index_at(k as f64 * period, fs) - start)
        .collect();
    let last = beats - 1;
    let last_beat = phase[..np]
        .iter()
        .map(|s| s[last * per_beat..(last + 1) * per_beat].to_vec())
        .collect();

    Ok(SimulationResult {
        probes: probes.to_vec(),
        sample_rate: fs,
        series,
        beat_boundaries,
        period,
        last_beat,
        max_beat_delta: deltas.last().copied().unwrap_or(f64::INFINITY),
        beat_deltas: deltas,
        converged,
        beats_simulated: beats,
        steps,
        mass,
    })
}

fn index_at(t: f64, fs: f64) -> usize {
    (t * fs - 1e-9).ceil().max(0.0) as usize
}

fn monitors_delta(monitors: &[Vec<f64>], beat: usize, per_beat: usize) -> f64 {
    monitors
        .iter()
        .flat_map(|s| {
            let cur = &s[beat * per_beat..(beat + 1) * per_beat];
            let prev = &s[(beat - 1) * per_beat..beat * per_beat];
            cur.iter().zip(prev).map(|(a, b)| (a - b).abs())
        })
        .fold(0.0, f64::max)
}
