use ndarray::{Array2, Array3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{conv_out_len, maxpool_backward, maxpool_forward, relu3, relu3_backward, Conv1d};
use super::Real;
use crate::error::{HemoError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderLayer {
    /// Convolution followed by ReLU.
    Conv { channels: usize, kernel: usize, stride: usize },
    MaxPool { kernel: usize, stride: usize },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub input_len: usize,
    pub layers: Vec<EncoderLayer>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        use EncoderLayer::*;
        let conv = |channels| Conv {
            channels,
            kernel: 3,
            stride: 2,
        };
        EncoderConfig {
            input_len: 1000,
            layers: vec![conv(40), conv(40), conv(40), MaxPool { kernel: 3, stride: 3 }, conv(20), conv(10)],
        }
    }
}

impl EncoderConfig {
    /// Sequence length after each layer.
    pub fn length_trace(&self) -> Vec<usize> {
        let mut n = self.input_len;
        let mut out = vec![n];
        for l in &self.layers {
            n = match *l {
                EncoderLayer::Conv { kernel, stride, .. } | EncoderLayer::MaxPool { kernel, stride } => conv_out_len(n, kernel, stride),
            };
            out.push(n);
        }
        out
    }

    pub fn embedding_dim(&self) -> usize {
        let mut channels = 1;
        for l in &self.layers {
            if let EncoderLayer::Conv { channels: c, .. } = l {
                channels = *c;
            }
        }
        self.length_trace().last().unwrap() * channels
    }

    pub fn validate(&self) -> Result<()> {
        for l in &self.layers {
            if let EncoderLayer::MaxPool { kernel, stride } = l {
                if kernel != stride {
                    return Err(HemoError::domain("npe", "max-pool stride must equal its kernel"));
                }
            }
        }
        if self.embedding_dim() == 0 {
            return Err(HemoError::domain("npe", "encoder reduces the input to nothing"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Encoder<T> {
    pub config: EncoderConfig,
    pub convs: Vec<Conv1d<T>>,
}

enum Cache<T> {
    Conv { in_len: usize, cols: Array2<T>, out: Array3<T> },
    Pool { in_len: usize, arg: Vec<usize> },
}

pub struct EncoderCache<T> {
    layers: Vec<Cache<T>>,
    out_shape: (usize, usize, usize),
}

impl<T: Real> Encoder<T> {
    pub fn new<R: Rng>(config: EncoderConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut convs = Vec::new();
        let mut c_in = 1;
        for l in &config.layers {
            if let EncoderLayer::Conv { channels, kernel, stride } = *l {
                convs.push(Conv1d::new(rng, c_in, channels, kernel, stride));
                c_in = channels;
            }
        }
        Ok(Encoder { config, convs })
    }

    pub fn zeros_like(&self) -> Self {
        Encoder {
            config: self.config.clone(),
            convs: self.convs.iter().map(Conv1d::zeros_like).collect(),
        }
    }

    /// `(batch, input_len)` to `(batch, embedding_dim)`, flattened time-major.
    pub fn forward(&self, x: &Array2<T>) -> (Array2<T>, EncoderCache<T>) {
        let (b, len) = x.dim();
        let mut h = x.as_standard_layout().into_owned().into_shape_with_order((b, len, 1)).unwrap();
        let mut caches = Vec::with_capacity(self.config.layers.len());
        let mut convs = self.convs.iter();
        for l in &self.config.layers {
            let in_len = h.dim().1;
            match *l {
                EncoderLayer::Conv { .. } => {
                    let conv = convs.next().unwrap();
                    let (mut y, cols) = conv.forward(&h);
                    relu3(&mut y);
                    caches.push(Cache::Conv {
                        in_len,
                        cols,
                        out: y.clone(),
                    });
                    h = y;
                }
                EncoderLayer::MaxPool { kernel, .. } => {
                    let (y, arg) = maxpool_forward(&h, kernel);
                    caches.push(Cache::Pool { in_len, arg });
                    h = y;
                }
            }
        }
        let out_shape = h.dim();
        let flat = h.into_shape_with_order((b, out_shape.1 * out_shape.2)).unwrap();
        (flat, EncoderCache { layers: caches, out_shape })
    }

    pub fn embed(&self, x: &Array2<T>) -> Array2<T> {
        self.forward(x).0
    }

    /// Accumulate parameter gradients given `∂L/∂embedding`.
    pub fn backward(&self, cache: EncoderCache<T>, g: &Array2<T>, grad: &mut Encoder<T>) {
        let mut g = g.as_standard_layout().into_owned().into_shape_with_order(cache.out_shape).unwrap();
        let mut conv_idx = self.convs.len();
        for (i, c) in cache.layers.into_iter().enumerate().rev() {
            match c {
                Cache::Conv { in_len, cols, out } => {
                    conv_idx -= 1;
                    relu3_backward(&out, &mut g);
                    let first = i == 0;
                    let gx = self.convs[conv_idx].backward(in_len, &cols, &g, &mut grad.convs[conv_idx], !first);
                    if let Some(gx) = gx {
                        g = gx;
                    }
                }
                Cache::Pool { in_len, arg } => {
                    g = maxpool_backward(&g, &arg, in_len);
                }
            }
        }
    }

    pub fn params(&self) -> Vec<&[T]> {
        self.convs.iter().flat_map(|c| c.lin.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        self.convs.iter_mut().flat_map(|c| c.lin.params_mut()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_stack_gives_90_features() {
        let cfg = EncoderConfig::default();
        assert_eq!(cfg.length_trace(), vec![1000, 499, 249, 124, 41, 20, 9]);
        assert_eq!(cfg.embedding_dim(), 90);
        let enc: Encoder<f32> = Encoder::new(cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let x = Array2::from_shape_fn((3, 1000), |(b, t)| ((b + 1) as f32 * t as f32 * 0.01).sin());
        assert_eq!(enc.embed(&x).dim(), (3, 90));
    }

    #[test]
    fn zero_weights_embed_to_zero() {
        let enc: Encoder<f64> = Encoder::new(EncoderConfig::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let zero = enc.zeros_like();
        let x = Array2::from_elem((2, 1000), 3.0);
        assert!(zero.embed(&x).iter().all(|&v| v == 0.0));
    }
}
