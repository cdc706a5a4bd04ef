//! Virtual-subject sampling: uniform cardiac and anthropometric parameters,
//! the empirical LVET relation, height scaling of vessel lengths,
//! age-dependent wall stiffness and the SBP/DBP outlier filter.

mod dataset;
mod generate;
mod stiffness;

pub use dataset::{
    encode_chunk, generate_dataset, read_chunk, read_dataset, write_chunk, ChunkHeader, ChunkInfo, DatasetMetadata,
    RawDataset, METADATA_FILE,
};
pub use generate::{generate_population, simulate_subject, GenerateOptions, PopulationRecord, PopulationReport, SubjectFailure};
pub use stiffness::{wall_stiffness, WallStiffness};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{HemoError, Result};
use crate::units::{cardiac_output_l_per_min, ml_to_m3, PA_PER_MMHG};
use crate::vascular::{scale_network_to_height, ArterialNetwork, HeartFunction};

/// Closed interval sampled uniformly.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub low: f64,
    pub high: f64,
}

impl Range {
    pub const fn new(low: f64, high: f64) -> Self {
        Range { low, high }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.low <= x && x <= self.high
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        rng.random_range(self.low..self.high)
    }

    pub fn width(&self) -> f64 {
        self.high - self.low
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorSpec {
    /// beats·min⁻¹
    pub heart_rate: Range,
    /// mL
    pub stroke_volume_ml: Range,
    /// s
    pub peak_flow_time: Range,
    pub reverse_flow_fraction: Range,
    /// cm
    pub height_cm: Range,
    /// years
    pub age: Range,
    /// ms
    pub eps1_ms: Range,
    pub eps2: Range,
    pub eps3: Range,
    /// Standard deviation of the height offset used for length scaling, cm.
    pub height_noise_std_cm: f64,
    /// Multiplier applied to every distal bed resistance.
    pub bed_resistance_scale: Range,
    /// Fractional position of the APW probe along the radial artery.
    pub probe_position: Range,
    pub stiffness: WallStiffness,
}

impl Default for PriorSpec {
    fn default() -> Self {
        PriorSpec {
            heart_rate: Range::new(40.0, 120.0),
            stroke_volume_ml: Range::new(40.0, 120.0),
            peak_flow_time: Range::new(0.08, 0.12),
            reverse_flow_fraction: Range::new(0.0, 0.1),
            height_cm: Range::new(150.0, 190.0),
            age: Range::new(25.0, 75.0),
            eps1_ms: Range::new(-40.0, 40.0),
            eps2: Range::new(-0.05, 0.05),
            eps3: Range::new(-0.05, 0.05),
            height_noise_std_cm: 5.0,
            bed_resistance_scale: Range::new(0.7, 1.4),
            probe_position: Range::new(0.0, 1.0),
            stiffness: WallStiffness::default(),
        }
    }
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("heart_rate", self.heart_rate),
            ("stroke_volume_ml", self.stroke_volume_ml),
            ("peak_flow_time", self.peak_flow_time),
            ("reverse_flow_fraction", self.reverse_flow_fraction),
            ("height_cm", self.height_cm),
            ("age", self.age),
            ("eps1_ms", self.eps1_ms),
            ("eps2", self.eps2),
            ("eps3", self.eps3),
            ("bed_resistance_scale", self.bed_resistance_scale),
            ("probe_position", self.probe_position),
        ];
        for (name, r) in ranges {
            if !(r.low < r.high) {
                return Err(HemoError::domain("population", format!("prior range '{name}' needs low < high")));
            }
        }
        let fixed = [
            ("eps1_ms", self.eps1_ms, Range::new(-40.0, 40.0)),
            ("eps2", self.eps2, Range::new(-0.05, 0.05)),
            ("eps3", self.eps3, Range::new(-0.05, 0.05)),
        ];
        for (name, got, want) in fixed {
            if got != want {
                return Err(HemoError::domain(
                    "population",
                    format!("'{name}' must be [{}, {}]", want.low, want.high),
                ));
            }
        }
        let positive = self.heart_rate.low > 0.0
            && self.stroke_volume_ml.low > 0.0
            && self.peak_flow_time.low > 0.0
            && self.reverse_flow_fraction.low >= 0.0
            && self.reverse_flow_fraction.high < 1.0
            && self.bed_resistance_scale.low > 0.0
            && self.probe_position.low >= 0.0
            && self.probe_position.high <= 1.0
            && self.height_noise_std_cm >= 0.0;
        if !positive {
            return Err(HemoError::domain("population", "prior ranges outside physical bounds"));
        }
        Ok(())
    }
}

impl PriorSpec {
    /// Support of each biomarker under this prior, in `BIOMARKERS` order.
    /// SVR only exists after simulation, so its range is supplied.
    pub fn biomarker_ranges(&self, svr: Range) -> [Range; 4] {
        let (hr, sv) = (self.heart_rate, self.stroke_volume_ml);
        [
            hr,
            Range::new(hr.low * sv.low * 1e-3, hr.high * sv.high * 1e-3),
            svr,
            Range::new(
                lvet_ms(hr.high, sv.low, self.eps1_ms.low, self.eps2.high, self.eps3.low),
                lvet_ms(hr.low, sv.high, self.eps1_ms.high, self.eps2.low, self.eps3.high),
            ),
        ]
    }
}

/// `LVET = (244 + ε1) − (0.926 + ε2)·HR + (1.08 + ε3)·SV` in ms, HR in bpm, SV in mL.
pub fn lvet_ms(hr: f64, sv_ml: f64, eps1: f64, eps2: f64, eps3: f64) -> f64 {
    (244.0 + eps1) - (0.926 + eps2) * hr + (1.08 + eps3) * sv_ml
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Left,
    Right,
}

/// Segment ids of the APW/PPG measurement sites on each arm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSites {
    pub left_radial: String,
    pub right_radial: String,
}

impl Default for MeasurementSites {
    fn default() -> Self {
        MeasurementSites {
            left_radial: "l_radial".into(),
            right_radial: "r_radial".into(),
        }
    }
}

impl MeasurementSites {
    pub fn radial(&self, arm: Arm) -> &str {
        match arm {
            Arm::Left => &self.left_radial,
            Arm::Right => &self.right_radial,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VirtualSubject {
    pub subject_id: u64,
    pub rng_seed: u64,
    /// beats·min⁻¹
    pub heart_rate: f64,
    /// m³
    pub stroke_volume: f64,
    /// s
    pub peak_flow_time: f64,
    pub reverse_flow_fraction: f64,
    /// cm
    pub height_cm: f64,
    pub age: f64,
    /// ms
    pub eps1_ms: f64,
    pub eps2: f64,
    pub eps3: f64,
    /// Height offset used for length scaling, cm.
    pub height_noise_cm: f64,
    /// ms
    pub lvet_ms: f64,
    /// L·min⁻¹
    pub cardiac_output: f64,
    pub bed_resistance_scale: f64,
    pub arm: Arm,
    pub probe_position: f64,
    /// Pa·s·m⁻³; known only after simulation.
    pub svr: Option<f64>,
}

/// Biomarker order used throughout the toolkit.
pub const BIOMARKERS: [&str; 4] = ["HR", "CO", "SVR", "LVET"];

impl VirtualSubject {
    pub fn stroke_volume_ml(&self) -> f64 {
        self.stroke_volume * 1e6
    }

    pub fn heart_function(&self) -> HeartFunction {
        HeartFunction {
            heart_rate: self.heart_rate,
            stroke_volume: self.stroke_volume,
            lvet: self.lvet_ms * 1e-3,
            peak_flow_time: self.peak_flow_time,
            reverse_flow_fraction: self.reverse_flow_fraction,
        }
    }

    /// `(HR bpm, CO L/min, SVR Pa·s·m⁻³, LVET ms)`, once SVR is known.
    pub fn biomarkers(&self) -> Option<[f64; 4]> {
        self.svr
            .map(|svr| [self.heart_rate, self.cardiac_output, svr, self.lvet_ms])
    }

    /// Subject-specific network: lengths scaled to height, wall stiffness from
    /// `Eh(R_d, age)` and distal bed resistances scaled.
    pub fn personalize(&self, base: &ArterialNetwork, stiffness: &WallStiffness) -> Result<ArterialNetwork> {
        let mut net = scale_network_to_height(base, self.height_cm, self.height_noise_cm)?;
        for seg in net.segments.values_mut() {
            seg.elastic_modulus = stiffness.eh(seg.distal_radius, self.age) / seg.wall_thickness;
        }
        for bed in net.beds.values_mut() {
            bed.distal_resistance *= self.bed_resistance_scale;
        }
        Ok(net)
    }
}

const MAX_DRAWS: usize = 1000;

/// Mix a batch seed and subject index into an independent per-subject seed.
pub fn subject_seed(batch_seed: u64, index: u64) -> u64 {
    let mut z = batch_seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x6A09_E667_F3BC_C909);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draw one subject. Draws violating the heart-function invariants are
/// discarded and redrawn from the same stream.
pub fn sample_subject(prior: &PriorSpec, subject_id: u64, seed: u64) -> Result<VirtualSubject> {
    prior.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let height_noise = Normal::new(0.0, prior.height_noise_std_cm)
        .map_err(|e| HemoError::domain("population", e.to_string()))?;
    for _ in 0..MAX_DRAWS {
        let hr = prior.heart_rate.sample(&mut rng);
        let sv_ml = prior.stroke_volume_ml.sample(&mut rng);
        let pft = prior.peak_flow_time.sample(&mut rng);
        let rfv = prior.reverse_flow_fraction.sample(&mut rng);
        let height = prior.height_cm.sample(&mut rng);
        let age = prior.age.sample(&mut rng);
        let e1 = prior.eps1_ms.sample(&mut rng);
        let e2 = prior.eps2.sample(&mut rng);
        let e3 = prior.eps3.sample(&mut rng);
        let dh = height_noise.sample(&mut rng);
        let scale = prior.bed_resistance_scale.sample(&mut rng);
        let arm = if rng.random_bool(0.5) { Arm::Left } else { Arm::Right };
        let xi = prior.probe_position.sample(&mut rng);

        let subject = VirtualSubject {
            subject_id,
            rng_seed: seed,
            heart_rate: hr,
            stroke_volume: ml_to_m3(sv_ml),
            peak_flow_time: pft,
            reverse_flow_fraction: rfv,
            height_cm: height,
            age,
            eps1_ms: e1,
            eps2: e2,
            eps3: e3,
            height_noise_cm: dh,
            lvet_ms: lvet_ms(hr, sv_ml, e1, e2, e3),
            cardiac_output: cardiac_output_l_per_min(hr, ml_to_m3(sv_ml)),
            bed_resistance_scale: scale,
            arm,
            probe_position: xi,
            svr: None,
        };
        if subject.heart_function().validate().is_ok() && height + dh > 0.0 {
            return Ok(subject);
        }
    }
    Err(HemoError::PriorInconsistency { attempts: MAX_DRAWS })
}

/// Outlier thresholds, mmHg.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceFilter {
    pub dbp_max: f64,
    pub sbp_min: f64,
    pub sbp_max: f64,
}

impl Default for AcceptanceFilter {
    fn default() -> Self {
        AcceptanceFilter {
            dbp_max: 120.0,
            sbp_min: 60.0,
            sbp_max: 200.0,
        }
    }
}

impl AcceptanceFilter {
    /// Reject iff `DBP > dbp_max` or `SBP < sbp_min` or `SBP > sbp_max`.
    pub fn accepts(&self, sbp: f64, dbp: f64) -> bool {
        !(dbp > self.dbp_max || sbp < self.sbp_min || sbp > self.sbp_max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterDecision {
    pub accepted: bool,
    pub sbp: f64,
    pub dbp: f64,
}

/// SBP/DBP of a clean single-beat APW in mmHg and the filter decision.
pub fn apply_acceptance_filter(apw_mmhg: &[f64], filter: &AcceptanceFilter) -> Result<FilterDecision> {
    if apw_mmhg.is_empty() || apw_mmhg.iter().any(|x| !x.is_finite()) {
        return Err(HemoError::DegenerateSignal("APW beat is empty or non-finite".into()));
    }
    let sbp = apw_mmhg.iter().cloned().fold(f64::MIN, f64::max);
    let dbp = apw_mmhg.iter().cloned().fold(f64::MAX, f64::min);
    Ok(FilterDecision {
        accepted: filter.accepts(sbp, dbp),
        sbp,
        dbp,
    })
}

/// Convert a pressure series from Pa to mmHg.
pub fn to_mmhg(series: &[f64]) -> Vec<f64> {
    series.iter().map(|p| p / PA_PER_MMHG).collect()
}
