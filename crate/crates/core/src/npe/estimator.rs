use std::path::Path;

use ndarray::{concatenate, s, Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::encoder::{Encoder, EncoderCache, EncoderConfig};
use super::flow::{log_normal, Flow, FlowCache, FlowConfig};
use super::layers::cast;
use super::{Real, TrainConfig};
use crate::error::{HemoError, Result};
use crate::signal::SegmentRecord;

/// Labeled examples in physical units.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LabeledData {
    /// `(n, input_len)` signals.
    pub x: Array2<f64>,
    pub age: Vec<f64>,
    /// `(n, dim)` biomarkers.
    pub phi: Array2<f64>,
    /// Identifier of each example, reported on non-finite losses.
    pub ids: Vec<u64>,
}

impl LabeledData {
    pub fn new(x: Array2<f64>, age: Vec<f64>, phi: Array2<f64>, ids: Vec<u64>) -> Result<Self> {
        let n = x.nrows();
        if age.len() != n || phi.nrows() != n || ids.len() != n {
            return Err(HemoError::domain("npe", "signals, ages, biomarkers and ids differ in length"));
        }
        Ok(LabeledData { x, age, phi, ids })
    }

    /// Processed segments with their biomarkers, in record order.
    pub fn from_segments(records: &[&SegmentRecord]) -> Self {
        let n = records.len();
        let len = records.first().map_or(0, |r| r.samples.len());
        LabeledData {
            x: Array2::from_shape_fn((n, len), |(i, t)| records[i].samples[t] as f64),
            age: records.iter().map(|r| r.age).collect(),
            phi: Array2::from_shape_fn((n, 4), |(i, j)| records[i].biomarkers[j]),
            ids: records.iter().map(|r| r.subject_id).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, rows: &[usize]) -> LabeledData {
        LabeledData {
            x: self.x.select(Axis(0), rows),
            age: rows.iter().map(|&i| self.age[i]).collect(),
            phi: self.phi.select(Axis(0), rows),
            ids: rows.iter().map(|&i| self.ids[i]).collect(),
        }
    }
}

/// Training-set statistics. Biomarkers are standardized per dimension; the
/// signal uses one mean and std over all samples and time points; age maps
/// `[25, 75]` to `[-1, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub biomarker_mean: Vec<f64>,
    pub biomarker_std: Vec<f64>,
    pub signal_mean: f64,
    pub signal_std: f64,
    pub age_center: f64,
    pub age_scale: f64,
}

impl Normalization {
    pub fn identity(dim: usize) -> Self {
        Normalization {
            biomarker_mean: vec![0.0; dim],
            biomarker_std: vec![1.0; dim],
            signal_mean: 0.0,
            signal_std: 1.0,
            age_center: 50.0,
            age_scale: 25.0,
        }
    }

    pub fn fit(data: &LabeledData) -> Result<Self> {
        if data.len() < 2 {
            return Err(HemoError::domain("npe", "need at least two training examples for normalization"));
        }
        let mean = data.phi.mean_axis(Axis(0)).unwrap();
        let std = data.phi.std_axis(Axis(0), 0.0);
        let signal_mean = data.x.mean().unwrap();
        let signal_std = data.x.std(0.0);
        if std.iter().any(|s| !(*s > 0.0)) || !(signal_std > 0.0) {
            return Err(HemoError::DegenerateSignal("constant biomarker or signal in training set".into()));
        }
        Ok(Normalization {
            biomarker_mean: mean.to_vec(),
            biomarker_std: std.to_vec(),
            signal_mean,
            signal_std,
            age_center: 50.0,
            age_scale: 25.0,
        })
    }

    pub fn log_std_sum(&self) -> f64 {
        self.biomarker_std.iter().map(|s| s.ln()).sum()
    }
}

/// Normalized tensors in working precision.
pub struct Prepared<T> {
    pub x: Array2<T>,
    pub age: Array1<T>,
    pub phi: Array2<T>,
    pub ids: Vec<u64>,
}

impl<T: Real> Prepared<T> {
    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn rows(&self, idx: &[usize]) -> Prepared<T> {
        Prepared {
            x: self.x.select(Axis(0), idx),
            age: self.age.select(Axis(0), idx),
            phi: self.phi.select(Axis(0), idx),
            ids: idx.iter().map(|&i| self.ids[i]).collect(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    #[serde(default)]
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub flow: FlowConfig,
}

/// Gradient buffers with the same layout as the estimator's weights.
pub struct Gradients<T> {
    pub encoder: Encoder<T>,
    pub flow: Flow<T>,
}

impl<T: Real> Gradients<T> {
    pub fn params(&self) -> Vec<&[T]> {
        let mut v = self.encoder.params();
        v.extend(self.flow.params());
        v
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorEstimator<T> {
    pub encoder: Encoder<T>,
    pub flow: Flow<T>,
    pub normalization: Normalization,
    pub train_config: Option<TrainConfig>,
    /// Free-form provenance, e.g. the modality and noise model trained on.
    pub label: String,
}

impl<T: Real> PosteriorEstimator<T> {
    pub fn new(model: &ModelConfig, normalization: Normalization, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = Encoder::new(model.encoder.clone(), &mut rng)?;
        if model.flow.context != model.encoder.embedding_dim() + 1 {
            return Err(HemoError::domain(
                "npe",
                format!(
                    "flow context {} must equal embedding size {} plus age",
                    model.flow.context,
                    model.encoder.embedding_dim()
                ),
            ));
        }
        if normalization.biomarker_mean.len() != model.flow.dim || normalization.biomarker_std.len() != model.flow.dim {
            return Err(HemoError::domain("npe", "normalization and flow dimensions differ"));
        }
        let flow = Flow::new(model.flow.clone(), &mut rng)?;
        Ok(PosteriorEstimator {
            encoder,
            flow,
            normalization,
            train_config: None,
            label: String::new(),
        })
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            encoder: self.encoder.config.clone(),
            flow: self.flow.config.clone(),
        }
    }

    pub fn dim(&self) -> usize {
        self.flow.config.dim
    }

    pub fn input_len(&self) -> usize {
        self.encoder.config.input_len
    }

    pub fn zero_gradients(&self) -> Gradients<T> {
        Gradients {
            encoder: self.encoder.zeros_like(),
            flow: self.flow.zeros_like(),
        }
    }

    pub fn params(&self) -> Vec<&[T]> {
        let mut v = self.encoder.params();
        v.extend(self.flow.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut v = self.encoder.params_mut();
        v.extend(self.flow.params_mut());
        v
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Same architecture and weights in another precision.
    pub fn convert<U: Real>(&self) -> PosteriorEstimator<U> {
        let mut out: PosteriorEstimator<U> = PosteriorEstimator::new(&self.model_config(), self.normalization.clone(), 0)
            .expect("architecture already validated");
        for (dst, src) in out.params_mut().into_iter().zip(self.params()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d = cast(s.to_f64().unwrap());
            }
        }
        // Masked entries are zero in both copies already.
        out.train_config = self.train_config.clone();
        out.label = self.label.clone();
        out
    }

    pub fn prepare(&self, data: &LabeledData) -> Result<Prepared<T>> {
        if data.x.ncols() != self.input_len() || data.phi.ncols() != self.dim() {
            return Err(HemoError::domain(
                "npe",
                format!("expected signals of {} samples and {} biomarkers", self.input_len(), self.dim()),
            ));
        }
        let n = &self.normalization;
        let x = data.x.mapv(|v| cast((v - n.signal_mean) / n.signal_std));
        let age = data.age.iter().map(|a| cast((a - n.age_center) / n.age_scale)).collect();
        let phi = Array2::from_shape_fn(data.phi.dim(), |(i, j)| cast((data.phi[[i, j]] - n.biomarker_mean[j]) / n.biomarker_std[j]));
        Ok(Prepared {
            x,
            age,
            phi,
            ids: data.ids.clone(),
        })
    }

    fn context_from(&self, emb: Array2<T>, age: &Array1<T>) -> Array2<T> {
        let age_col = age.view().insert_axis(Axis(1));
        concatenate![Axis(1), emb, age_col]
    }

    /// Conditioning vectors for normalized inputs.
    pub fn context(&self, x: &Array2<T>, age: &Array1<T>) -> Array2<T> {
        self.context_from(self.encoder.embed(x), age)
    }

    /// Conditioning vector (embedding followed by normalized age) of one
    /// segment given in physical units.
    pub fn encode(&self, samples: &[f64], age: f64) -> Result<Vec<f64>> {
        let (x, a) = self.single(samples, age)?;
        Ok(self.context(&x, &a).iter().map(|v| v.to_f64().unwrap()).collect())
    }

    fn single(&self, samples: &[f64], age: f64) -> Result<(Array2<T>, Array1<T>)> {
        if samples.len() != self.input_len() {
            return Err(HemoError::domain("npe", format!("expected {} samples, got {}", self.input_len(), samples.len())));
        }
        let n = &self.normalization;
        let x = Array2::from_shape_fn((1, samples.len()), |(_, t)| cast((samples[t] - n.signal_mean) / n.signal_std));
        let a = Array1::from_elem(1, cast((age - n.age_center) / n.age_scale));
        Ok((x, a))
    }

    /// Per-example log-density in normalized biomarker space.
    pub fn log_prob_normalized(&self, data: &Prepared<T>) -> Array1<T> {
        let h = self.context(&data.x, &data.age);
        self.flow.log_prob(&data.phi, &h)
    }

    /// Log posterior density of physical biomarkers `phi`.
    pub fn log_density(&self, phi: &[f64], samples: &[f64], age: f64) -> Result<f64> {
        if phi.len() != self.dim() || phi.iter().any(|v| !v.is_finite()) {
            return Err(HemoError::domain("npe", "biomarker vector must be finite with one entry per dimension"));
        }
        let (x, a) = self.single(samples, age)?;
        let h = self.context(&x, &a);
        let n = &self.normalization;
        let p = Array2::from_shape_fn((1, self.dim()), |(_, j)| cast((phi[j] - n.biomarker_mean[j]) / n.biomarker_std[j]));
        let lp = self.flow.log_prob(&p, &h)[0].to_f64().unwrap();
        Ok(lp - n.log_std_sum())
    }

    /// Draw `n` posterior samples in physical units.
    pub fn sample(&self, samples: &[f64], age: f64, n: usize, seed: u64) -> Result<Array2<f64>> {
        if n == 0 {
            return Err(HemoError::domain("npe", "sample count must be at least 1"));
        }
        let (x, a) = self.single(samples, age)?;
        let h1 = self.context(&x, &a);
        Ok(self.sample_context(&h1, n, seed))
    }

    /// Posterior draws for one precomputed conditioning row.
    pub fn sample_context(&self, h1: &Array2<T>, n: usize, seed: u64) -> Array2<f64> {
        let d = self.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = Array2::from_shape_simple_fn((n, d), || cast::<T>(StandardNormal.sample(&mut rng)));
        let h = h1.broadcast((n, h1.ncols())).unwrap().to_owned();
        let phi = self.flow.inverse(&z, &h);
        let nm = &self.normalization;
        Array2::from_shape_fn((n, d), |(i, j)| phi[[i, j]].to_f64().unwrap() * nm.biomarker_std[j] + nm.biomarker_mean[j])
    }

    /// Mean negative log-likelihood (normalized space) of a batch and its
    /// gradient, accumulated into `grad`. The encoder gradient is skipped
    /// when `encoder` is false.
    pub fn loss_and_grad(&self, batch: &Prepared<T>, grad: &mut Gradients<T>, encoder: bool) -> T {
        let b = batch.len();
        let inv_b: T = cast(1.0 / b as f64);
        let (emb, enc_cache): (Array2<T>, EncoderCache<T>) = self.encoder.forward(&batch.x);
        let h = self.context_from(emb, &batch.age);
        let (z, logdet, cache): (Array2<T>, Array1<T>, FlowCache<T>) = self.flow.forward(&batch.phi, &h);
        let lp = log_normal(&z) + &logdet;
        let loss = -lp.sum() * inv_b;
        let g_z = z.mapv(|v| v * inv_b);
        let g_logdet = Array1::from_elem(b, -inv_b);
        let g_h = self.flow.backward(cache, &g_z, &g_logdet, &mut grad.flow);
        if encoder {
            let e = self.encoder.config.embedding_dim();
            let g_emb = g_h.slice(s![.., ..e]).to_owned();
            self.encoder.backward(enc_cache, &g_emb, &mut grad.encoder);
        }
        loss
    }

    /// Mean NLL over `data`, evaluated in chunks.
    pub fn mean_nll(&self, data: &Prepared<T>, chunk: usize) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        let mut total = 0.0;
        let idx: Vec<usize> = (0..data.len()).collect();
        for c in idx.chunks(chunk.max(1)) {
            let part = data.rows(c);
            total -= self.log_prob_normalized(&part).iter().map(|v| v.to_f64().unwrap()).sum::<f64>();
        }
        total / data.len() as f64
    }
}

const MAGIC: &[u8; 4] = b"HNPE";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    permutations: Vec<Vec<usize>>,
    normalization: Normalization,
    train_config: Option<TrainConfig>,
    label: String,
    shapes: Vec<usize>,
}

impl<T: Real> PosteriorEstimator<T> {
    /// Versioned binary: magic, version, JSON header with architecture,
    /// normalization and training configuration, then `f32` weights.
    pub fn to_bytes(&self) -> Vec<u8> {
        let params = self.params();
        let header = Header {
            model: self.model_config(),
            permutations: self.flow.permutations.clone(),
            normalization: self.normalization.clone(),
            train_config: self.train_config.clone(),
            label: self.label.clone(),
            shapes: params.iter().map(|p| p.len()).collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(12 + json.len() + 4 * self.param_count());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for p in params {
            for v in p {
                out.extend_from_slice(&v.to_f32().unwrap().to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let bad = |m: &str| HemoError::format(origin, m);
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(bad("missing HNPE magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(bad(&format!("unsupported model version {version}")));
        }
        let hl = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let header: Header = serde_json::from_slice(bytes.get(12..12 + hl).ok_or_else(|| bad("truncated header"))?)
            .map_err(|e| HemoError::format(origin, e.to_string()))?;
        let mut est = PosteriorEstimator::new(&header.model, header.normalization, 0)?;
        est.flow.permutations = header.permutations;
        est.train_config = header.train_config;
        est.label = header.label;
        let shapes: Vec<usize> = est.params().iter().map(|p| p.len()).collect();
        if shapes != header.shapes {
            return Err(bad("layer shapes do not match the architecture"));
        }
        let mut data = bytes[12 + hl..].chunks_exact(4);
        if data.len() != shapes.iter().sum::<usize>() || !data.remainder().is_empty() {
            return Err(bad("weight section has the wrong length"));
        }
        for p in est.params_mut() {
            for v in p.iter_mut() {
                *v = cast(f32::from_le_bytes(data.next().unwrap().try_into().unwrap()) as f64);
            }
        }
        Ok(est)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| HemoError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| HemoError::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
