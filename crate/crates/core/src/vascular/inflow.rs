use std::f64::consts::PI;

use super::HeartFunction;
use crate::error::{HemoError, Result};

/// Fraction of the cardiac period occupied by the reverse-flow lobe.
const REVERSE_LOBE_FRACTION: f64 = 0.05;

/// Width of the reverse-flow lobe that follows ejection. Truncated so the lobe
/// always ends inside the beat.
pub fn reverse_lobe_width(hf: &HeartFunction) -> f64 {
    let period = hf.period();
    (REVERSE_LOBE_FRACTION * period).min(period - hf.lvet)
}

/// Aortic root inflow `Q(t)` for `0 <= t < 60/HR`.
///
/// Forward lobe: `Qmax·sin(π·g(t))` on `[0, LVET]`, where `g` maps `[0, PFT]`
/// onto `[0, ½]` and `[PFT, LVET]` onto `[½, 1]` so the peak sits at PFT.
/// Reverse lobe: a negative half-sine right after LVET carrying `RFV·SV`.
/// The forward lobe carries `SV·(1 + RFV)` so the net volume per beat is SV.
pub fn inflow_waveform(hf: &HeartFunction, t: f64) -> Result<f64> {
    hf.validate()?;
    let period = hf.period();
    if !(0.0..period).contains(&t) {
        return Err(HemoError::domain(
            "vascular_model",
            format!("inflow time {t} outside one cardiac period [0, {period})"),
        ));
    }
    Ok(evaluate(hf, t))
}

/// Periodic extension of [`inflow_waveform`] for any `t >= 0`. The heart
/// function must already be valid.
pub fn inflow_at(hf: &HeartFunction, t: f64) -> f64 {
    evaluate(hf, t.rem_euclid(hf.period()))
}

fn evaluate(hf: &HeartFunction, t: f64) -> f64 {
    let sv = hf.stroke_volume;
    let rfv = hf.reverse_flow_fraction;
    if t <= hf.lvet {
        let q_max = PI * sv * (1.0 + rfv) / (2.0 * hf.lvet);
        let phase = if t <= hf.peak_flow_time {
            0.5 * t / hf.peak_flow_time
        } else {
            0.5 + 0.5 * (t - hf.peak_flow_time) / (hf.lvet - hf.peak_flow_time)
        };
        return q_max * (PI * phase).sin();
    }
    let width = reverse_lobe_width(hf);
    let s = t - hf.lvet;
    if rfv > 0.0 && s < width {
        let q_rev = PI * rfv * sv / (2.0 * width);
        return -q_rev * (PI * s / width).sin();
    }
    0.0
}
