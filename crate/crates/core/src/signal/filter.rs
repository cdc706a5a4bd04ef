//! Zero-phase Butterworth bandpass as a cascade of second-order sections.

use std::f64::consts::PI;

use nalgebra::Complex;

/// One biquad `b0 b1 b2 / 1 a1 a2`, transposed direct form II.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    fn dc_gain(&self) -> f64 {
        self.b.iter().sum::<f64>() / (1.0 + self.a[0] + self.a[1])
    }

    /// State reached after an infinitely long unit step.
    fn step_state(&self) -> [f64; 2] {
        let g = self.dc_gain();
        let z1 = self.b[2] - self.a[1] * g;
        [self.b[1] - self.a[0] * g + z1, z1]
    }

    fn run(&self, x: &mut [f64], mut z: [f64; 2]) {
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        for v in x.iter_mut() {
            let y = b0 * *v + z[0];
            z[0] = b1 * *v - a1 * y + z[1];
            z[1] = b2 * *v - a2 * y;
            *v = y;
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bandpass {
    pub sections: Vec<Biquad>,
}

fn real_section(gain: f64, zero: f64, pole: Complex<f64>) -> Biquad {
    Biquad {
        b: [gain, -2.0 * zero * gain, gain],
        a: [-2.0 * pole.re, pole.norm_sqr()],
    }
}

impl Bandpass {
    /// Second-order Butterworth prototype mapped to a bandpass by the
    /// bilinear transform with prewarped corners (two sections).
    pub fn butterworth2(low_hz: f64, high_hz: f64, fs: f64) -> Self {
        assert!(0.0 < low_hz && low_hz < high_hz && high_hz < fs / 2.0);
        let fs2 = 2.0 * fs;
        let w1 = fs2 * (PI * low_hz / fs).tan();
        let w2 = fs2 * (PI * high_hz / fs).tan();
        let bw = w2 - w1;
        let w0sq = w1 * w2;

        let mut analog = Vec::with_capacity(4);
        for k in [3.0, 5.0] {
            let p = Complex::from_polar(1.0, PI * k / 4.0);
            let pb = p * bw / 2.0;
            let root = (pb * pb - w0sq).sqrt();
            analog.push(pb + root);
            analog.push(pb - root);
        }
        // Analog gain bw² with two zeros at s = 0 and two at infinity.
        let den = analog.iter().fold(Complex::new(1.0, 0.0), |acc, s| acc * (fs2 - s));
        let k = bw * bw * (Complex::new(fs2 * fs2, 0.0) / den).re;
        let poles: Vec<Complex<f64>> = analog.iter().map(|s| (fs2 + s) / (fs2 - s)).collect();

        let mut upper: Vec<Complex<f64>> = poles.iter().copied().filter(|p| p.im > 0.0).collect();
        upper.sort_by(|a, b| (1.0 - a.norm()).total_cmp(&(1.0 - b.norm())));
        // Pole pair nearest the unit circle takes the zeros at z = 1.
        Bandpass {
            sections: vec![real_section(k, -1.0, upper[1]), real_section(1.0, 1.0, upper[0])],
        }
    }

    /// The filter used by the dataset pipeline: 0.5–10 Hz at 125 Hz.
    pub fn standard() -> Self {
        Self::butterworth2(0.5, 10.0, 125.0)
    }

    /// Single causal pass with zero initial state.
    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        for s in &self.sections {
            s.run(&mut y, [0.0; 2]);
        }
        y
    }

    fn pass_from_steady_state(&self, y: &mut [f64]) {
        let mut scale = y[0];
        for s in &self.sections {
            let z = s.step_state();
            s.run(y, [z[0] * scale, z[1] * scale]);
            scale *= s.dc_gain();
        }
    }

    /// Forward-backward filtering with odd reflection of 15 samples at both
    /// ends and steady-state initial conditions.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let pad = (3 * (2 * self.sections.len() + 1)).min(x.len().saturating_sub(1));
        let n = x.len();
        if n == 0 {
            return Vec::new();
        }
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));
        self.pass_from_steady_state(&mut ext);
        ext.reverse();
        self.pass_from_steady_state(&mut ext);
        ext.reverse();
        ext[pad..pad + n].to_vec()
    }

    /// Amplitude response of forward-backward filtering at `f` Hz, i.e. `|H|²`.
    pub fn zero_phase_gain(&self, f: f64, fs: f64) -> f64 {
        let z = Complex::from_polar(1.0, 2.0 * PI * f / fs);
        let zi = z.inv();
        let h = self.sections.iter().fold(Complex::new(1.0, 0.0), |acc, s| {
            let num = s.b[0] + s.b[1] * zi + s.b[2] * zi * zi;
            let den = 1.0 + s.a[0] * zi + s.a[1] * zi * zi;
            acc * num / den
        });
        h.norm_sqr()
    }
}
