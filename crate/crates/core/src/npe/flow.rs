//! Conditional masked autoregressive flow with affine steps
//! `u_i = φ_i·exp(σ_i(φ<i, h)) + μ_i(φ<i, h)`.

use ndarray::{concatenate, Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{cast, columns, relu_backward, relu_inplace, Linear};
use super::Real;
use crate::error::{HemoError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowConfig {
    pub dim: usize,
    pub context: usize,
    pub steps: usize,
    pub hidden: usize,
    pub hidden_layers: usize,
    /// Raw log-scales are clamped to `[-scale_clamp, scale_clamp]`.
    pub scale_clamp: f64,
    pub permutation_seed: u64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            dim: 4,
            context: 91,
            steps: 3,
            hidden: 350,
            hidden_layers: 3,
            scale_clamp: 7.0,
            permutation_seed: 0x5eed,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 1 || self.steps < 1 || self.hidden_layers < 1 || self.hidden < self.dim {
            return Err(HemoError::domain("npe", "flow needs dim >= 1, steps >= 1, hidden_layers >= 1, hidden >= dim"));
        }
        if !(self.scale_clamp > 0.0) {
            return Err(HemoError::domain("npe", "scale clamp must be positive"));
        }
        Ok(())
    }

    /// One fixed shuffle between consecutive steps, never the identity when
    /// `dim > 1`.
    pub fn permutations(&self) -> Vec<Vec<usize>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.permutation_seed);
        (1..self.steps)
            .map(|_| loop {
                let mut p: Vec<usize> = (0..self.dim).collect();
                p.shuffle(&mut rng);
                if self.dim == 1 || p.iter().enumerate().any(|(i, &j)| i != j) {
                    break p;
                }
            })
            .collect()
    }
}

/// Masked MLP producing `(μ, σ)` for every dimension. Hidden units carry a
/// degree in `0..dim`; degree-0 units see only the context, so the first
/// dimension is still conditioned on `h`.
#[derive(Clone, Debug, PartialEq)]
pub struct Made<T> {
    pub layers: Vec<Linear<T>>,
    pub masks: Vec<Array2<T>>,
}

pub struct MadeCache<T> {
    input: Array2<T>,
    hidden: Vec<Array2<T>>,
    raw_sigma: Array2<T>,
}

impl<T: Real> Made<T> {
    pub fn new<R: Rng>(cfg: &FlowConfig, rng: &mut R) -> Self {
        let d = cfg.dim;
        let deg = |k: usize| k % d;
        let n_in = d + cfg.context;
        let mut layers = Vec::new();
        let mut masks = Vec::new();

        let mut first = Linear::new(rng, n_in, cfg.hidden);
        let m = Array2::from_shape_fn((n_in, cfg.hidden), |(j, k)| if j >= d || deg(k) > j { T::one() } else { T::zero() });
        first.w *= &m;
        layers.push(first);
        masks.push(m);
        for _ in 1..cfg.hidden_layers {
            let mut l = Linear::new(rng, cfg.hidden, cfg.hidden);
            let m = Array2::from_shape_fn((cfg.hidden, cfg.hidden), |(k, k2)| if deg(k2) >= deg(k) { T::one() } else { T::zero() });
            l.w *= &m;
            layers.push(l);
            masks.push(m);
        }
        // Output columns: μ_0..μ_{d-1}, σ_0..σ_{d-1}; zero so the flow starts
        // at the identity.
        let m = Array2::from_shape_fn((cfg.hidden, 2 * d), |(k, o)| if deg(k) <= o % d { T::one() } else { T::zero() });
        layers.push(Linear::zeros(cfg.hidden, 2 * d));
        masks.push(m);
        Made { layers, masks }
    }

    pub fn zeros_like(&self) -> Self {
        Made {
            layers: self.layers.iter().map(Linear::zeros_like).collect(),
            masks: self.masks.clone(),
        }
    }

    pub fn forward(&self, x: &Array2<T>, h: &Array2<T>, clamp: f64) -> (Array2<T>, Array2<T>, MadeCache<T>) {
        let d = x.ncols();
        let input = concatenate![Axis(1), *x, *h];
        let mut hidden = Vec::with_capacity(self.layers.len() - 1);
        let mut a = input.clone();
        for l in &self.layers[..self.layers.len() - 1] {
            let mut y = l.forward(a.view());
            relu_inplace(&mut y);
            hidden.push(y.clone());
            a = y;
        }
        let out = self.layers.last().unwrap().forward(a.view());
        let mu = columns(&out, 0, d);
        let raw_sigma = columns(&out, d, 2 * d);
        let c: T = cast(clamp);
        let sigma = raw_sigma.mapv(|s| s.max(-c).min(c));
        (mu, sigma, MadeCache { input, hidden, raw_sigma })
    }

    /// Returns `(∂L/∂x, ∂L/∂h)`.
    pub fn backward(&self, cache: MadeCache<T>, g_mu: &Array2<T>, g_sigma: &Array2<T>, clamp: f64, grad: &mut Made<T>) -> (Array2<T>, Array2<T>) {
        let d = g_mu.ncols();
        let c: T = cast(clamp);
        let mut gs = g_sigma.clone();
        ndarray::Zip::from(&mut gs).and(&cache.raw_sigma).for_each(|g, &r| {
            if r < -c || r > c {
                *g = T::zero();
            }
        });
        let mut g = concatenate![Axis(1), *g_mu, gs];
        let n = self.layers.len();
        for i in (0..n).rev() {
            let input = if i == 0 { &cache.input } else { &cache.hidden[i - 1] };
            let gx = self.layers[i].backward(input.view(), g.view(), &mut grad.layers[i]);
            grad.layers[i].w *= &self.masks[i];
            if i > 0 {
                g = gx;
                relu_backward(&cache.hidden[i - 1], &mut g);
            } else {
                g = gx;
            }
        }
        (columns(&g, 0, d), columns(&g, d, g.ncols()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Flow<T> {
    pub config: FlowConfig,
    pub steps: Vec<Made<T>>,
    pub permutations: Vec<Vec<usize>>,
}

/// Per step: input, `exp(σ)` and the conditioner cache.
pub struct FlowCache<T> {
    steps: Vec<(Array2<T>, Array2<T>, MadeCache<T>)>,
}

fn permute<T: Real>(x: &Array2<T>, p: &[usize]) -> Array2<T> {
    Array2::from_shape_fn(x.dim(), |(b, j)| x[[b, p[j]]])
}

fn unpermute<T: Real>(x: &Array2<T>, p: &[usize]) -> Array2<T> {
    let mut out = Array2::zeros(x.dim());
    for (j, &pj) in p.iter().enumerate() {
        out.column_mut(pj).assign(&x.column(j));
    }
    out
}

impl<T: Real> Flow<T> {
    pub fn new<R: Rng>(config: FlowConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let steps = (0..config.steps).map(|_| Made::new(&config, rng)).collect();
        let permutations = config.permutations();
        Ok(Flow {
            config,
            steps,
            permutations,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Flow {
            config: self.config.clone(),
            steps: self.steps.iter().map(Made::zeros_like).collect(),
            permutations: self.permutations.clone(),
        }
    }

    /// Map `φ` to `z`; returns `(z, log|det J|, cache)`.
    pub fn forward(&self, phi: &Array2<T>, h: &Array2<T>) -> (Array2<T>, Array1<T>, FlowCache<T>) {
        let clamp = self.config.scale_clamp;
        let mut x = phi.clone();
        let mut logdet = Array1::zeros(phi.nrows());
        let mut steps = Vec::with_capacity(self.steps.len());
        for (s, made) in self.steps.iter().enumerate() {
            let (mu, sigma, cache) = made.forward(&x, h, clamp);
            logdet += &sigma.sum_axis(Axis(1));
            let scale = sigma.mapv(T::exp);
            let u = &x * &scale + &mu;
            steps.push((x, scale, cache));
            x = match self.permutations.get(s) {
                Some(p) if s + 1 < self.steps.len() => permute(&u, p),
                _ => u,
            };
        }
        (x, logdet, FlowCache { steps })
    }

    /// Standard-normal log-density of `z` plus the log-Jacobian.
    pub fn log_prob(&self, phi: &Array2<T>, h: &Array2<T>) -> Array1<T> {
        let (z, logdet, _) = self.forward(phi, h);
        log_normal(&z) + logdet
    }

    /// Backpropagate `∂L/∂z` and `∂L/∂log|det J|`; returns `∂L/∂h`.
    pub fn backward(&self, cache: FlowCache<T>, g_z: &Array2<T>, g_logdet: &Array1<T>, grad: &mut Flow<T>) -> Array2<T> {
        let clamp = self.config.scale_clamp;
        let mut g_x = g_z.clone();
        let mut g_h: Option<Array2<T>> = None;
        let n = self.steps.len();
        for (s, (x, scale, made_cache)) in cache.steps.into_iter().enumerate().rev() {
            let g_u = match self.permutations.get(s) {
                Some(p) if s + 1 < n => unpermute(&g_x, p),
                _ => g_x,
            };
            let g_mu = g_u.clone();
            let mut g_sigma = &g_u * &x * &scale;
            for (mut row, &gl) in g_sigma.rows_mut().into_iter().zip(g_logdet) {
                row += gl;
            }
            let (gx_made, gh) = self.steps[s].backward(made_cache, &g_mu, &g_sigma, clamp, &mut grad.steps[s]);
            g_x = &g_u * &scale + gx_made;
            g_h = Some(match g_h {
                Some(acc) => acc + gh,
                None => gh,
            });
        }
        g_h.unwrap()
    }

    /// Invert `z` to `φ`, one dimension at a time per step.
    pub fn inverse(&self, z: &Array2<T>, h: &Array2<T>) -> Array2<T> {
        let clamp = self.config.scale_clamp;
        let d = self.config.dim;
        let n = self.steps.len();
        let mut y = z.clone();
        for s in (0..n).rev() {
            let u = match self.permutations.get(s) {
                Some(p) if s + 1 < n => unpermute(&y, p),
                _ => y,
            };
            let mut x = Array2::zeros(u.dim());
            for i in 0..d {
                let (mu, sigma, _) = self.steps[s].forward(&x, h, clamp);
                for b in 0..u.nrows() {
                    x[[b, i]] = (u[[b, i]] - mu[[b, i]]) * (-sigma[[b, i]]).exp();
                }
            }
            y = x;
        }
        y
    }

    pub fn params(&self) -> Vec<&[T]> {
        self.steps.iter().flat_map(|m| m.layers.iter().flat_map(|l| l.params())).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        self.steps
            .iter_mut()
            .flat_map(|m| m.layers.iter_mut().flat_map(|l| l.params_mut()))
            .collect()
    }
}

/// Row-wise `log N(z; 0, I)`.
pub fn log_normal<T: Real>(z: &Array2<T>) -> Array1<T> {
    let c: T = cast(0.5 * z.ncols() as f64 * (2.0 * std::f64::consts::PI).ln());
    let half: T = cast(0.5);
    z.map_axis(Axis(1), |r| -half * r.iter().map(|v| *v * *v).sum::<T>() - c)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_flow(seed: u64) -> (Flow<f64>, Array2<f64>, Array2<f64>) {
        let cfg = FlowConfig {
            context: 5,
            hidden: 24,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut flow: Flow<f64> = Flow::new(cfg, &mut rng).unwrap();
        for m in &mut flow.steps {
            let last = m.layers.last_mut().unwrap();
            last.w = Array2::from_shape_fn(last.w.dim(), |_| rng.random_range(-0.3..0.3));
            last.w *= m.masks.last().unwrap();
            last.b = Array1::from_shape_fn(last.b.len(), |_| rng.random_range(-0.3..0.3));
        }
        let phi = Array2::from_shape_fn((6, 4), |_| rng.random_range(-2.0..2.0));
        let h = Array2::from_shape_fn((6, 5), |_| rng.random_range(-1.0..1.0));
        (flow, phi, h)
    }

    #[test]
    fn identity_at_initialization() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let flow: Flow<f64> = Flow::new(FlowConfig::default(), &mut rng).unwrap();
        let phi = Array2::from_shape_fn((3, 4), |(b, j)| (b as f64 - 1.0) * 0.7 + j as f64 * 0.3);
        let h = Array2::from_elem((3, 91), 0.2);
        let lp = flow.log_prob(&phi, &h);
        for b in 0..3 {
            let sq: f64 = phi.row(b).iter().map(|v| v * v).sum();
            let want = -(0.5 * sq + 2.0 * (2.0 * std::f64::consts::PI).ln());
            assert!((lp[b] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn inverse_round_trip() {
        for seed in 0..5 {
            let (flow, phi, h) = random_flow(seed);
            let (z, _, _) = flow.forward(&phi, &h);
            let back = flow.inverse(&z, &h);
            let (z2, _, _) = flow.forward(&back, &h);
            for (a, b) in phi.iter().zip(&back) {
                assert!((a - b).abs() < 1e-9);
            }
            for (a, b) in z.iter().zip(&z2) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn autoregressive_structure() {
        let (flow, phi, h) = random_flow(7);
        let made = &flow.steps[0];
        let (mu0, s0, _) = made.forward(&phi, &h, 7.0);
        for j in 0..4 {
            let mut p = phi.clone();
            p.column_mut(j).mapv_inplace(|v| v + 0.5);
            let (mu1, s1, _) = made.forward(&p, &h, 7.0);
            for i in 0..=j {
                for b in 0..phi.nrows() {
                    assert_eq!(mu0[[b, i]], mu1[[b, i]]);
                    assert_eq!(s0[[b, i]], s1[[b, i]]);
                }
            }
        }
    }

    #[test]
    fn permutations_are_fixed_and_non_trivial() {
        let cfg = FlowConfig::default();
        let p = cfg.permutations();
        assert_eq!(p.len(), 2);
        assert_eq!(p, cfg.permutations());
        for q in &p {
            let mut s = q.clone();
            s.sort_unstable();
            assert_eq!(s, vec![0, 1, 2, 3]);
            assert_ne!(q, &vec![0, 1, 2, 3]);
        }
    }
}
