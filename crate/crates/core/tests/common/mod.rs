//! Fixtures and measurements shared by the integration tests and the
//! acceptance report.
#![allow(dead_code)]

use hemo::npe::{EncoderConfig, EncoderLayer, FlowConfig, LabeledData, ModelConfig, Normalization, PosteriorEstimator};
use hemo::solver::{run_with_inflow, Inflow, ProbeRequest, Quantity, Simulator, SolverConfig};
use hemo::vascular::{uniform_vessel, ArterialNetwork, BloodProperties, HeartFunction};
use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn heart(hr: f64, sv_ml: f64) -> HeartFunction {
    HeartFunction {
        heart_rate: hr,
        stroke_volume: sv_ml * 1e-6,
        lvet: 0.3,
        peak_flow_time: 0.1,
        reverse_flow_fraction: 0.02,
    }
}

/// Gaussian area bump in a long frictionless vessel, evolved for 0.08 s so
/// nothing reaches the ends. Returns cell areas.
pub fn bump(cells: usize) -> Vec<f64> {
    let blood = BloodProperties {
        dynamic_viscosity: 0.0,
        ..Default::default()
    };
    let net = uniform_vessel(2.0, 0.01, 1e-3, 4e5, blood);
    let cfg = SolverConfig {
        cells_per_segment_min: cells,
        max_cell_length: 1.0,
        ..Default::default()
    };
    let mut sim = Simulator::new(&net, &cfg, Inflow::Constant(0.0)).unwrap();
    let seg = sim.segment_mut("vessel").unwrap();
    for i in 0..cells {
        let z = seg.z[i];
        let a0 = seg.a0[i];
        seg.a[i] = a0 * (1.0 + 0.05 * (-((z - 1.0) / 0.12).powi(2)).exp());
    }
    let t_end = 0.08;
    let steps = (t_end / (0.8 * sim.stable_dt())).ceil() as usize;
    let dt = t_end / steps as f64;
    for _ in 0..steps {
        sim.step(dt).unwrap();
    }
    sim.segment("vessel").unwrap().a.clone()
}

fn l1_against(reference: &[f64], coarse: &[f64], length: f64) -> f64 {
    let ratio = reference.len() / coarse.len();
    let dz = length / coarse.len() as f64;
    coarse
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let avg = reference[i * ratio..(i + 1) * ratio].iter().sum::<f64>() / ratio as f64;
            (a - avg).abs() * dz
        })
        .sum()
}

/// L1 errors on 200, 400 and 800 cells against a 6400-cell reference, and
/// the observed orders between successive grids.
pub fn convergence_orders() -> (Vec<f64>, Vec<f64>) {
    let reference = bump(6400);
    let errors: Vec<f64> = [200, 400, 800].iter().map(|&n| l1_against(&reference, &bump(n), 2.0)).collect();
    let orders = errors.windows(2).map(|e| (e[0] / e[1]).log2()).collect();
    (errors, orders)
}

fn foot_time(series: &[f64], rate: f64) -> f64 {
    let base = series[0];
    let peak = series.iter().cloned().fold(f64::MIN, f64::max);
    let level = base + 0.2 * (peak - base);
    let j = series.iter().position(|&p| p >= level).unwrap();
    let w = (level - series[j - 1]) / (series[j] - series[j - 1]);
    (j as f64 - 1.0 + w) / rate
}

/// Foot-to-foot transit time between two probes on a uniform vessel with a
/// matched outlet. Returns (measured, analytic) wave speed.
pub fn measured_wave_speed() -> (f64, f64) {
    let blood = BloodProperties::default();
    let net = uniform_vessel(3.0, 0.01, 1e-3, 4e5, blood);
    let cfg = SolverConfig {
        max_cell_length: 0.005,
        output_sample_rate: 5000.0,
        duration: 0.8,
        transient_beats_to_discard: 0,
        ..Default::default()
    };
    let probes = [
        ProbeRequest::new("vessel", 0.25, Quantity::Pressure),
        ProbeRequest::new("vessel", 0.75, Quantity::Pressure),
    ];
    let r = run_with_inflow(&net, Inflow::Heart(heart(75.0, 2.0)), 0.8, &cfg, &probes).unwrap();
    let dt = foot_time(&r.series[1], r.sample_rate) - foot_time(&r.series[0], r.sample_rate);
    let seg = &net.segments["vessel"];
    let c = hemo::vascular::wave_speed(seg.reference_area_at(0.0), seg.reference_area_at(0.0), seg, &blood).unwrap();
    (1.5 / dt, c)
}

fn steady_vessel() -> ArterialNetwork {
    let blood = BloodProperties {
        dynamic_viscosity: 0.0,
        ..Default::default()
    };
    let mut net = uniform_vessel(0.3, 0.008, 8e-4, 5e5, blood);
    net.beds.get_mut("outlet").unwrap().outflow_pressure = 800.0;
    net
}

/// Terminal pressure under constant inflow after the transient, and the
/// analytic `Q(R1 + R2) + P_out`.
pub fn rcr_steady_state() -> (f64, f64) {
    let net = steady_vessel();
    let q = 5e-5;
    let cfg = SolverConfig {
        duration: 6.0,
        periodicity_tolerance: 0.0,
        ..Default::default()
    };
    let probes = [ProbeRequest::new("vessel", 1.0, Quantity::Pressure)];
    let r = run_with_inflow(&net, Inflow::Constant(q), 1.0, &cfg, &probes).unwrap();
    let bed = net.beds["outlet"];
    (*r.series[0].last().unwrap(), q * bed.total_resistance() + bed.outflow_pressure)
}

/// `(sbp, dbp, accepted)` in mmHg, covering every boundary of the default
/// filter.
pub const FILTER_CASES: [(f64, f64, bool); 20] = [
    (120.0, 80.0, true),
    (200.0, 80.0, true),
    (200.0001, 80.0, false),
    (60.0, 40.0, true),
    (59.999, 40.0, false),
    (150.0, 120.0, true),
    (150.0, 120.001, false),
    (250.0, 130.0, false),
    (30.0, 20.0, false),
    (100.0, 99.0, true),
    (199.0, 119.0, true),
    (61.0, 10.0, true),
    (201.0, 60.0, false),
    (90.0, 125.0, false),
    (180.0, 110.0, true),
    (60.0, 120.0, true),
    (200.0, 120.0, true),
    (0.0, 0.0, false),
    (1000.0, 50.0, false),
    (140.0, 90.0, true),
];

pub const LEN: usize = 32;

pub fn small_model(dim: usize) -> ModelConfig {
    let encoder = EncoderConfig {
        input_len: LEN,
        layers: vec![
            EncoderLayer::Conv { channels: 4, kernel: 3, stride: 2 },
            EncoderLayer::Conv { channels: 2, kernel: 3, stride: 2 },
        ],
    };
    let flow = FlowConfig {
        dim,
        context: encoder.embedding_dim() + 1,
        steps: 2,
        hidden: 16,
        hidden_layers: 2,
        ..FlowConfig::default()
    };
    ModelConfig { encoder, flow }
}

/// Random weights everywhere, respecting the autoregressive masks.
pub fn randomize(est: &mut PosteriorEstimator<f64>, scale: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for conv in &mut est.encoder.convs {
        conv.lin.w.mapv_inplace(|v| v + scale * rng.random_range(-1.0..1.0));
        conv.lin.b.mapv_inplace(|v| v + scale * rng.random_range(-1.0..1.0));
    }
    for made in &mut est.flow.steps {
        for (l, m) in made.layers.iter_mut().zip(&made.masks) {
            l.w.zip_mut_with(m, |w, &mk| *w = (*w + scale * rng.random_range(-1.0..1.0)) * mk);
            l.b.mapv_inplace(|v| v + scale * rng.random_range(-1.0..1.0));
        }
    }
}

/// Noisy sinusoids labeled by amplitude, frequency, offset and their
/// product.
pub fn toy_data(n: usize, dim: usize, seed: u64) -> LabeledData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Array2::zeros((n, LEN));
    let mut phi = Array2::zeros((n, dim));
    let mut age = Vec::new();
    for i in 0..n {
        let amp = rng.random_range(0.5..2.0);
        let freq = rng.random_range(0.1..0.6);
        let offset = rng.random_range(-1.0..1.0);
        for t in 0..LEN {
            x[[i, t]] = offset + amp * (freq * t as f64).sin() + 0.05 * rng.random_range(-1.0..1.0);
        }
        let feats = [amp, freq * 10.0, offset, amp * offset];
        for j in 0..dim {
            phi[[i, j]] = feats[j];
        }
        age.push(rng.random_range(20.0..80.0));
    }
    LabeledData::new(x, age, phi, (0..n as u64).collect()).unwrap()
}

pub fn fitted(dim: usize, data: &LabeledData, seed: u64) -> PosteriorEstimator<f64> {
    PosteriorEstimator::new(&small_model(dim), Normalization::fit(data).unwrap(), seed).unwrap()
}

fn randomized(n: usize, dim: usize, scale: f64, seed: u64) -> (PosteriorEstimator<f64>, Array2<f64>, Array2<f64>) {
    let data = toy_data(n, dim, seed);
    let mut est = fitted(dim, &data, seed + 1);
    randomize(&mut est, scale, seed + 2);
    let p = est.prepare(&data).unwrap();
    let h = est.context(&p.x, &p.age);
    (est, p.phi, h)
}

/// Largest coordinate error of `inverse(forward(phi))` and
/// `forward(inverse(z))` for random weights and inputs.
pub fn flow_round_trip_error(seed: u64) -> f64 {
    let (est, phi, h) = randomized(64, 4, 0.4, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 3);
    let phi = phi.mapv(|v| v + rng.random_range(-2.0..2.0));
    let z = est.flow.forward(&phi, &h).0;
    let back = est.flow.inverse(&z, &h);
    let z2 = Array2::from_shape_simple_fn(phi.dim(), || rng.random_range(-3.0..3.0));
    let again = est.flow.forward(&est.flow.inverse(&z2, &h), &h).0;
    let e1 = (&back - &phi).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let e2 = (&again - &z2).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    e1.max(e2)
}

/// Largest absolute gap between the flow's log-determinant and
/// `log|det J|` of a central-difference Jacobian, on 4-dimensional inputs.
pub fn log_det_error(seed: u64) -> f64 {
    let (est, phi, h) = randomized(6, 4, 0.4, seed);
    let d = 4;
    let mut worst = 0.0f64;
    for row in 0..phi.nrows() {
        let h1 = h.row(row).insert_axis(Axis(0)).to_owned();
        let phi0 = phi.row(row).to_owned();
        let (_, logdet, _) = est.flow.forward(&phi0.clone().insert_axis(Axis(0)), &h1);
        let eps = 1e-6;
        let mut jac = nalgebra::DMatrix::<f64>::zeros(d, d);
        for j in 0..d {
            let mut plus = phi0.clone();
            let mut minus = phi0.clone();
            plus[j] += eps;
            minus[j] -= eps;
            let zp = est.flow.forward(&plus.insert_axis(Axis(0)), &h1).0;
            let zm = est.flow.forward(&minus.insert_axis(Axis(0)), &h1).0;
            for i in 0..d {
                jac[(i, j)] = (zp[[0, i]] - zm[[0, i]]) / (2.0 * eps);
            }
        }
        worst = worst.max((jac.determinant().abs().ln() - logdet[0]).abs());
    }
    worst
}

/// Relative error of the analytic loss gradient against central
/// differences: one random admissible direction plus three coordinates in
/// every parameter block. Masked weights must carry an exactly zero
/// gradient; a nonzero one is reported as an infinite error.
pub fn gradient_error(seed: u64) -> f64 {
    let data = toy_data(12, 3, seed);
    let mut est = fitted(3, &data, seed + 1);
    randomize(&mut est, 0.3, seed + 2);
    let batch = est.prepare(&data).unwrap();
    let mut grad = est.zero_gradients();
    est.loss_and_grad(&batch, &mut grad, true);

    let mut dir = est.clone();
    for p in dir.params_mut() {
        p.iter_mut().for_each(|v| *v = 0.0);
    }
    randomize(&mut dir, 1.0, seed + 3);
    let analytic: f64 = grad
        .params()
        .iter()
        .zip(dir.params())
        .flat_map(|(g, d)| g.iter().zip(d).map(|(a, b)| a * b))
        .sum();
    // Small enough that the path rarely crosses a ReLU kink.
    let eps = 1e-6;
    let shifted = |sign: f64| {
        let mut e = est.clone();
        for (p, d) in e.params_mut().into_iter().zip(dir.params()) {
            p.iter_mut().zip(d).for_each(|(v, dv)| *v += sign * eps * dv);
        }
        e.mean_nll(&batch, usize::MAX)
    };
    let numeric = (shifted(1.0) - shifted(-1.0)) / (2.0 * eps);
    let mut worst = (analytic - numeric).abs() / analytic.abs().max(1.0);

    let mut rng = ChaCha8Rng::seed_from_u64(seed + 4);
    for b in 0..est.params().len() {
        let len = est.params()[b].len();
        for _ in 0..3 {
            let i = rng.random_range(0..len);
            let g = grad.params()[b][i];
            if est.params()[b][i] == 0.0 {
                if g != 0.0 {
                    return f64::INFINITY;
                }
                continue;
            }
            let value = |delta: f64| {
                let mut e = est.clone();
                e.params_mut()[b][i] += delta;
                e.mean_nll(&batch, usize::MAX)
            };
            let num = (value(eps) - value(-eps)) / (2.0 * eps);
            worst = worst.max((g - num).abs() / g.abs().max(1.0));
        }
    }
    worst
}
