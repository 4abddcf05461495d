//! Dual-head risk model: one MLP per feature group, fused linearly.
//!
//! `R = w_nv * R_a + w_v * R_b`, where each head ends in a sigmoid so that
//! `R_a, R_b` and therefore `R` lie in `[0, 1]`. For CCE training the heads
//! instead emit two raw logits each and the fusion is applied to the logits.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::losses::{cce_risk, sigmoid};
use crate::survdata::{Dataset, SurvivalRecord};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionWeights {
    pub w_nv: f64,
    pub w_v: f64,
}

impl FusionWeights {
    pub fn new(w_nv: f64, w_v: f64) -> Result<Self> {
        if !(w_nv >= 0.0 && w_v >= 0.0) || (w_nv + w_v - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!(
                "fusion weights must be non-negative and sum to 1, got ({w_nv}, {w_v})"
            )));
        }
        Ok(FusionWeights { w_nv, w_v })
    }

    pub fn even() -> Self {
        FusionWeights {
            w_nv: 0.5,
            w_v: 0.5,
        }
    }

    pub fn fuse(&self, a: f64, b: f64) -> f64 {
        self.w_nv * a + self.w_v * b
    }
}

/// What the heads emit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelOutput {
    /// One sigmoid risk per head.
    Risk,
    /// Two raw logits per head, for the two-bin CCE likelihood.
    CceLogits,
}

impl ModelOutput {
    pub fn width(self) -> usize {
        match self {
            ModelOutput::Risk => 1,
            ModelOutput::CceLogits => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Dense {
    /// `(out, in)`
    weight: Array2<f64>,
    bias: Array1<f64>,
}

/// ReLU hidden layers, linear last layer, optional sigmoid on the output.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpHead {
    layer_sizes: Vec<usize>,
    layers: Vec<Dense>,
    sigmoid_output: bool,
}

/// Activations kept from a batch forward pass of one head.
#[derive(Debug, Clone)]
struct HeadCache {
    /// Input of every layer; `inputs[0]` is the feature matrix.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation of every layer.
    pre: Vec<Array2<f64>>,
    /// Head output after the optional sigmoid, `(batch, out)`.
    output: Array2<f64>,
}

impl MlpHead {
    fn init(layer_sizes: &[usize], sigmoid_output: bool, rng: &mut impl Rng) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(Error::config(format!(
                "layer sizes must list at least input and output, all >= 1: {layer_sizes:?}"
            )));
        }
        let layers = layer_sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / fan_in as f64).sqrt();
                let weight =
                    Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-limit..limit));
                Dense {
                    weight,
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Ok(MlpHead {
            layer_sizes: layer_sizes.to_vec(),
            layers,
            sigmoid_output,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    fn forward(&self, x: Array2<f64>) -> HeadCache {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut a = x;
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let z = a.dot(&layer.weight.t()) + &layer.bias;
            inputs.push(a);
            a = if l == last {
                if self.sigmoid_output {
                    z.mapv(sigmoid)
                } else {
                    z.clone()
                }
            } else {
                z.mapv(|v| v.max(0.0))
            };
            pre.push(z);
        }
        HeadCache {
            inputs,
            pre,
            output: a,
        }
    }

    /// Appends the gradient of every parameter, in `params` order, given
    /// d(loss)/d(head output).
    fn backward(&self, cache: &HeadCache, upstream: Array2<f64>, out: &mut Vec<f64>) {
        let n_layers = self.layers.len();
        let mut grads: Vec<(Array2<f64>, Array1<f64>)> = Vec::with_capacity(n_layers);
        let mut dz = if self.sigmoid_output {
            upstream * cache.output.mapv(|s| s * (1.0 - s))
        } else {
            upstream
        };
        for l in (0..n_layers).rev() {
            let dw = dz.t().dot(&cache.inputs[l]);
            let db = dz.sum_axis(Axis(0));
            if l > 0 {
                let da = dz.dot(&self.layers[l].weight);
                let mask = cache.pre[l - 1].mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
                dz = da * mask;
            }
            grads.push((dw, db));
        }
        for (dw, db) in grads.into_iter().rev() {
            out.extend(dw.iter());
            out.extend(db.iter());
        }
    }

    fn write_params(&self, out: &mut Vec<f64>) {
        for layer in &self.layers {
            out.extend(layer.weight.iter());
            out.extend(layer.bias.iter());
        }
    }

    fn read_params(&mut self, src: &[f64]) -> usize {
        let mut pos = 0;
        for layer in &mut self.layers {
            for w in layer.weight.iter_mut() {
                *w = src[pos];
                pos += 1;
            }
            for b in layer.bias.iter_mut() {
                *b = src[pos];
                pos += 1;
            }
        }
        pos
    }
}

/// Fused output for one record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskOutput {
    pub risk: f64,
    pub risk_a: f64,
    pub risk_b: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiskModel {
    pub head_a: MlpHead,
    pub head_b: MlpHead,
    pub fusion: FusionWeights,
    output: ModelOutput,
}

/// Result of a batch forward pass, kept for [`RiskModel::backward`].
#[derive(Debug, Clone)]
pub struct ForwardPass {
    cache_a: HeadCache,
    cache_b: HeadCache,
    /// Fused outputs, `width` values per sample, sample-major.
    pub outputs: Vec<f64>,
    pub width: usize,
}

impl ForwardPass {
    pub fn batch_len(&self) -> usize {
        self.outputs.len() / self.width
    }

    /// Per-head outputs before fusion (first column only for logits).
    pub fn head_outputs(&self) -> (Vec<f64>, Vec<f64>) {
        (
            self.cache_a.output.column(0).to_vec(),
            self.cache_b.output.column(0).to_vec(),
        )
    }
}

/// Gradient of the loss with respect to every parameter, in the order of
/// [`RiskModel::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterGradients(pub Vec<f64>);

impl RiskModel {
    /// He-uniform weights and zero biases from a seeded stream; head `a` is
    /// drawn first.
    pub fn init(
        seed: u64,
        layer_sizes_a: &[usize],
        layer_sizes_b: &[usize],
        fusion: FusionWeights,
    ) -> Result<Self> {
        Self::init_with_output(
            seed,
            layer_sizes_a,
            layer_sizes_b,
            fusion,
            ModelOutput::Risk,
        )
    }

    pub fn init_with_output(
        seed: u64,
        layer_sizes_a: &[usize],
        layer_sizes_b: &[usize],
        fusion: FusionWeights,
        output: ModelOutput,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sigmoid_output = output == ModelOutput::Risk;
        let head_a = MlpHead::init(layer_sizes_a, sigmoid_output, &mut rng)?;
        let head_b = MlpHead::init(layer_sizes_b, sigmoid_output, &mut rng)?;
        for head in [&head_a, &head_b] {
            if head.output_dim() != output.width() {
                return Err(Error::config(format!(
                    "head output size {} does not match the {:?} output width {}",
                    head.output_dim(),
                    output,
                    output.width()
                )));
            }
        }
        Ok(RiskModel {
            head_a,
            head_b,
            fusion,
            output,
        })
    }

    pub fn output(&self) -> ModelOutput {
        self.output
    }

    pub fn input_dims(&self) -> (usize, usize) {
        (self.head_a.input_dim(), self.head_b.input_dim())
    }

    pub fn check_dims(&self, dims: (usize, usize)) -> Result<()> {
        if self.input_dims() != dims {
            return Err(Error::DimensionMismatch {
                expected: format!("{:?}", self.input_dims()),
                got: format!("{:?}", dims),
            });
        }
        Ok(())
    }

    /// Fused risk of a single record. For a logit model `risk` is the
    /// probability of the first bin.
    pub fn forward(&self, record: &SurvivalRecord) -> Result<RiskOutput> {
        self.check_dims((record.features_a.len(), record.features_b.len()))?;
        let xa = Array2::from_shape_vec((1, record.features_a.len()), record.features_a.clone())
            .expect("row shape matches");
        let xb = Array2::from_shape_vec((1, record.features_b.len()), record.features_b.clone())
            .expect("row shape matches");
        let pass = self.forward_matrices(xa, xb);
        let (a, b) = pass.head_outputs();
        let risk = match self.output {
            ModelOutput::Risk => pass.outputs[0],
            ModelOutput::CceLogits => cce_risk([pass.outputs[0], pass.outputs[1]]),
        };
        Ok(RiskOutput {
            risk,
            risk_a: a[0],
            risk_b: b[0],
        })
    }

    /// Forward pass over `dataset[indices]`, caching what backward needs.
    pub fn forward_batch(&self, dataset: &Dataset, indices: &[usize]) -> Result<ForwardPass> {
        self.check_dims(dataset.feature_dims())?;
        let (xa, xb) = feature_matrices(dataset, indices);
        Ok(self.forward_matrices(xa, xb))
    }

    fn forward_matrices(&self, xa: Array2<f64>, xb: Array2<f64>) -> ForwardPass {
        let cache_a = self.head_a.forward(xa);
        let cache_b = self.head_b.forward(xb);
        let fused = &cache_a.output * self.fusion.w_nv + &cache_b.output * self.fusion.w_v;
        ForwardPass {
            outputs: fused.iter().copied().collect(),
            width: self.output.width(),
            cache_a,
            cache_b,
        }
    }

    /// Back-propagates d(loss)/d(fused output) through fusion and both heads.
    pub fn backward(&self, pass: &ForwardPass, upstream: &[f64]) -> Result<ParameterGradients> {
        if upstream.len() != pass.outputs.len() {
            return Err(Error::LengthMismatch {
                expected: pass.outputs.len(),
                got: upstream.len(),
            });
        }
        let g = Array2::from_shape_vec((pass.batch_len(), pass.width), upstream.to_vec())
            .expect("upstream shape matches outputs");
        let mut out = Vec::with_capacity(self.n_params());
        self.head_a
            .backward(&pass.cache_a, &g * self.fusion.w_nv, &mut out);
        self.head_b
            .backward(&pass.cache_b, &g * self.fusion.w_v, &mut out);
        Ok(ParameterGradients(out))
    }

    /// Risk scores used for ranking metrics.
    pub fn predict_risks(&self, dataset: &Dataset) -> Result<Vec<f64>> {
        let indices: Vec<usize> = (0..dataset.len()).collect();
        let pass = self.forward_batch(dataset, &indices)?;
        Ok(match self.output {
            ModelOutput::Risk => pass.outputs,
            ModelOutput::CceLogits => pass
                .outputs
                .chunks_exact(2)
                .map(|c| cce_risk([c[0], c[1]]))
                .collect(),
        })
    }

    pub fn n_params(&self) -> usize {
        self.head_a.n_params() + self.head_b.n_params()
    }

    /// All parameters flattened: head `a` then head `b`, each layer as
    /// row-major weights followed by biases.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        self.head_a.write_params(&mut out);
        self.head_b.write_params(&mut out);
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.n_params() {
            return Err(Error::LengthMismatch {
                expected: self.n_params(),
                got: params.len(),
            });
        }
        let used = self.head_a.read_params(params);
        self.head_b.read_params(&params[used..]);
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = BufWriter::new(File::create(path.as_ref())?);
        self.write_checkpoint(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::Checkpoint {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::read_checkpoint(&mut BufReader::new(file)).map_err(|e| match e {
            Error::Checkpoint { message, .. } => Error::Checkpoint {
                path: path.to_path_buf(),
                message,
            },
            Error::Io(io) => Error::Checkpoint {
                path: path.to_path_buf(),
                message: format!("truncated or unreadable: {io}"),
            },
            other => other,
        })
    }

    /// Loads a checkpoint and rejects it unless its input dims are `dims`.
    pub fn load_for(path: impl AsRef<Path>, dims: (usize, usize)) -> Result<Self> {
        let model = Self::load(path)?;
        model.check_dims(dims)?;
        Ok(model)
    }
}

// ---------------------------------------------------------------------------
// Checkpoint layout, all little-endian:
//
//   magic    8 bytes  "SRNKCKPT"
//   version  u32      1
//   output   u32      0 = risk, 1 = cce logits
//   w_nv     f64
//   w_v      f64
//   then for head a and head b:
//     n_sizes u32, sizes u32 * n_sizes, n_params u64, params f64 * n_params

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SRNKCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

fn bad_checkpoint(message: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: Default::default(),
        message: message.into(),
    }
}

impl RiskModel {
    pub fn write_checkpoint<W: Write>(&self, out: &mut W) -> Result<()> {
        out.write_all(CHECKPOINT_MAGIC)?;
        out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        let tag: u32 = match self.output {
            ModelOutput::Risk => 0,
            ModelOutput::CceLogits => 1,
        };
        out.write_all(&tag.to_le_bytes())?;
        out.write_all(&self.fusion.w_nv.to_le_bytes())?;
        out.write_all(&self.fusion.w_v.to_le_bytes())?;
        for head in [&self.head_a, &self.head_b] {
            out.write_all(&(head.layer_sizes.len() as u32).to_le_bytes())?;
            for &s in &head.layer_sizes {
                out.write_all(&(s as u32).to_le_bytes())?;
            }
            let mut params = Vec::with_capacity(head.n_params());
            head.write_params(&mut params);
            out.write_all(&(params.len() as u64).to_le_bytes())?;
            for p in params {
                out.write_all(&p.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(input: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(bad_checkpoint("not a model checkpoint (bad magic)"));
        }
        let version = read_u32(input)?;
        if version != CHECKPOINT_VERSION {
            return Err(bad_checkpoint(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let output = match read_u32(input)? {
            0 => ModelOutput::Risk,
            1 => ModelOutput::CceLogits,
            t => return Err(bad_checkpoint(format!("unknown output kind {t}"))),
        };
        let fusion = FusionWeights::new(read_f64(input)?, read_f64(input)?)
            .map_err(|e| bad_checkpoint(e.to_string()))?;

        let mut heads = Vec::with_capacity(2);
        for _ in 0..2 {
            let n_sizes = read_u32(input)? as usize;
            if !(2..=64).contains(&n_sizes) {
                return Err(bad_checkpoint(format!("implausible layer count {n_sizes}")));
            }
            let sizes = (0..n_sizes)
                .map(|_| read_u32(input).map(|s| s as usize))
                .collect::<Result<Vec<_>>>()?;
            let mut head = MlpHead::init(
                &sizes,
                output == ModelOutput::Risk,
                &mut ChaCha8Rng::seed_from_u64(0),
            )
            .map_err(|e| bad_checkpoint(e.to_string()))?;
            let n_params = read_u64(input)? as usize;
            if n_params != head.n_params() {
                return Err(bad_checkpoint(format!(
                    "parameter count {n_params} does not match layer sizes {sizes:?}"
                )));
            }
            let params = (0..n_params)
                .map(|_| read_f64(input))
                .collect::<Result<Vec<_>>>()?;
            head.read_params(&params);
            heads.push(head);
        }
        let head_b = heads.pop().unwrap();
        let head_a = heads.pop().unwrap();
        for head in [&head_a, &head_b] {
            if head.output_dim() != output.width() {
                return Err(bad_checkpoint(
                    "head output size does not match output kind",
                ));
            }
        }
        Ok(RiskModel {
            head_a,
            head_b,
            fusion,
            output,
        })
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

/// Feature matrices `(batch, dim_a)` and `(batch, dim_b)` for `indices`.
pub fn feature_matrices(dataset: &Dataset, indices: &[usize]) -> (Array2<f64>, Array2<f64>) {
    let (da, db) = dataset.feature_dims();
    let records = dataset.records();
    let xa = Array2::from_shape_fn((indices.len(), da), |(r, c)| {
        records[indices[r]].features_a[c]
    });
    let xb = Array2::from_shape_fn((indices.len(), db), |(r, c)| {
        records[indices[r]].features_b[c]
    });
    (xa, xb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::{evaluate, LossConfig, LossKind};
    use crate::survdata::{generate_synthetic, SynthConfig};

    fn zero_model(fusion: FusionWeights) -> RiskModel {
        let mut m = RiskModel::init(1, &[3, 4, 1], &[2, 1], fusion).unwrap();
        let n = m.n_params();
        m.set_params(&vec![0.0; n]).unwrap();
        m
    }

    fn record(a: Vec<f64>, b: Vec<f64>) -> SurvivalRecord {
        SurvivalRecord {
            id: 0,
            features_a: a,
            features_b: b,
            time: 1.0,
            event: true,
        }
    }

    #[test]
    fn fusion_arithmetic() {
        let w = FusionWeights::new(0.5, 0.5).unwrap();
        assert!((w.fuse(0.4, 0.8) - 0.6).abs() < 1e-15);
        assert_eq!(FusionWeights::new(1.0, 0.0).unwrap().fuse(0.37, 0.9), 0.37);
        assert!(FusionWeights::new(0.6, 0.6).is_err());
        assert!(FusionWeights::new(-0.1, 1.1).is_err());
    }

    #[test]
    fn zero_heads_output_half() {
        let m = zero_model(FusionWeights::new(0.3, 0.7).unwrap());
        let out = m
            .forward(&record(vec![1.0, -2.0, 3.0], vec![0.5, 0.1]))
            .unwrap();
        assert_eq!(out.risk_a, 0.5);
        assert_eq!(out.risk_b, 0.5);
        assert!((out.risk - 0.5).abs() < 1e-15);
    }

    #[test]
    fn forward_is_the_fused_head_outputs() {
        let fusion = FusionWeights::new(0.7, 0.3).unwrap();
        let m = RiskModel::init(5, &[3, 6, 4, 1], &[2, 3, 1], fusion).unwrap();
        let r = record(vec![0.2, -1.0, 0.4], vec![1.5, -0.3]);
        let out = m.forward(&r).unwrap();
        assert_eq!(out.risk, fusion.fuse(out.risk_a, out.risk_b));
        assert!((0.0..=1.0).contains(&out.risk));

        let only_a = RiskModel {
            fusion: FusionWeights::new(1.0, 0.0).unwrap(),
            ..m.clone()
        };
        assert_eq!(only_a.forward(&r).unwrap().risk, out.risk_a);
        assert!(matches!(
            m.forward(&record(vec![0.0], vec![0.0, 0.0])),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn init_is_seeded() {
        let w = FusionWeights::even();
        let a = RiskModel::init(3, &[24, 32, 16, 1], &[4, 8, 1], w).unwrap();
        let b = RiskModel::init(3, &[24, 32, 16, 1], &[4, 8, 1], w).unwrap();
        let c = RiskModel::init(4, &[24, 32, 16, 1], &[4, 8, 1], w).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.params(), c.params());
        assert_eq!(a.head_a.layer_sizes(), &[24, 32, 16, 1]);
        assert_eq!(
            a.n_params(),
            24 * 32 + 32 + 32 * 16 + 16 + 16 + 1 + 4 * 8 + 8 + 8 + 1
        );
        // biases start at zero
        assert!(a
            .head_a
            .layers
            .iter()
            .all(|l| l.bias.iter().all(|&b| b == 0.0)));
        assert!(RiskModel::init(3, &[24], &[4, 1], w).is_err());
        assert!(RiskModel::init(3, &[24, 2], &[4, 1], w).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let ds = generate_synthetic(&SynthConfig::with_unit_betas(10, 3, 2, 1)).unwrap();
        let m = RiskModel::init(2, &[3, 5, 1], &[2, 4, 1], FusionWeights::even()).unwrap();
        let idx: Vec<usize> = (0..10).collect();
        let pass = m.forward_batch(&ds, &idx).unwrap();
        let g = m.backward(&pass, &[0.0; 10]).unwrap();
        assert_eq!(g.0.len(), m.n_params());
        assert!(g.0.iter().all(|&v| v == 0.0));
        assert!(m.backward(&pass, &[0.0; 3]).is_err());
    }

    #[test]
    fn single_layer_chain_rule_by_hand() {
        // head a: R_a = sigmoid(w x + b); head b is constant 0.5.
        let fusion = FusionWeights::new(0.6, 0.4).unwrap();
        let mut m = RiskModel::init(0, &[1, 1], &[1, 1], fusion).unwrap();
        let (w, b) = (0.8, -0.3);
        m.set_params(&[w, b, 0.0, 0.0]).unwrap();
        let x = 1.7;
        let ds = Dataset::new("one", (1, 1), vec![record(vec![x], vec![2.0])]).unwrap();
        let pass = m.forward_batch(&ds, &[0]).unwrap();
        let s = 1.0 / (1.0 + (-(w * x + b)).exp());
        assert!((pass.outputs[0] - (0.6 * s + 0.4 * 0.5)).abs() < 1e-15);

        let upstream = 2.5;
        let g = m.backward(&pass, &[upstream]).unwrap().0;
        let dz = upstream * 0.6 * s * (1.0 - s);
        assert!((g[0] - dz * x).abs() < 1e-15);
        assert!((g[1] - dz).abs() < 1e-15);
        let dz_b = upstream * 0.4 * 0.25;
        assert!((g[2] - dz_b * 2.0).abs() < 1e-15);
        assert!((g[3] - dz_b).abs() < 1e-15);
    }

    fn model_loss(m: &RiskModel, ds: &Dataset, cfg: &LossConfig) -> f64 {
        let idx: Vec<usize> = (0..ds.len()).collect();
        let pass = m.forward_batch(ds, &idx).unwrap();
        evaluate(cfg, &ds.as_batch(), &pass.outputs).unwrap().value
    }

    fn fd_check(output: ModelOutput, cfg: LossConfig, seed: u64) -> f64 {
        let ds = generate_synthetic(&SynthConfig::with_unit_betas(24, 3, 2, seed)).unwrap();
        let w = output.width();
        let mut m = RiskModel::init_with_output(
            seed,
            &[3, 6, 4, w],
            &[2, 5, w],
            FusionWeights::new(0.7, 0.3).unwrap(),
            output,
        )
        .unwrap();
        let idx: Vec<usize> = (0..ds.len()).collect();
        let pass = m.forward_batch(&ds, &idx).unwrap();
        let loss = evaluate(&cfg, &ds.as_batch(), &pass.outputs).unwrap();
        let grad = m.backward(&pass, &loss.grad).unwrap().0;

        let params = m.params();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let h = 1e-5;
        let mut worst = 0.0f64;
        for _ in 0..5 {
            let k = rng.random_range(0..params.len());
            let mut p = params.clone();
            p[k] += h;
            m.set_params(&p).unwrap();
            let up = model_loss(&m, &ds, &cfg);
            p[k] -= 2.0 * h;
            m.set_params(&p).unwrap();
            let down = model_loss(&m, &ds, &cfg);
            m.set_params(&params).unwrap();
            let numeric = (up - down) / (2.0 * h);
            let denom = grad[k].abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((grad[k] - numeric).abs() / denom);
        }
        worst
    }

    #[test]
    fn backward_matches_finite_differences() {
        for seed in 0..5 {
            assert!(fd_check(ModelOutput::Risk, LossConfig::wci(0.5), seed) < 1e-4);
            assert!(fd_check(ModelOutput::Risk, LossConfig::new(LossKind::Cox), seed) < 1e-4);
            assert!(fd_check(ModelOutput::CceLogits, LossConfig::new(LossKind::Cce), seed) < 1e-4);
        }
    }

    #[test]
    fn checkpoint_roundtrip_and_rejection() {
        let m = RiskModel::init(
            9,
            &[3, 4, 1],
            &[2, 1],
            FusionWeights::new(0.7, 0.3).unwrap(),
        )
        .unwrap();
        let mut buf = Vec::new();
        m.write_checkpoint(&mut buf).unwrap();
        assert_eq!(&buf[..8], CHECKPOINT_MAGIC);
        let back = RiskModel::read_checkpoint(&mut buf.as_slice()).unwrap();
        assert_eq!(back, m);

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(RiskModel::read_checkpoint(&mut bad.as_slice()).is_err());
        assert!(RiskModel::read_checkpoint(&mut &buf[..buf.len() - 3]).is_err());

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        m.save(&path).unwrap();
        assert!(RiskModel::load_for(&path, (3, 2)).is_ok());
        assert!(matches!(
            RiskModel::load_for(&path, (4, 2)),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            RiskModel::load(dir.path().join("missing")),
            Err(Error::Checkpoint { .. })
        ));
    }
}
