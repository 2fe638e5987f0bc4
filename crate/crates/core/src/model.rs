//! Prunable sequential CNN backbone with a linear classifier and an optional
//! projection head, plus checkpoint persistence.
//!
//! Each stage is `3x3 conv (same padding) -> ReLU -> 2x2 max-pool`; a global
//! average pool produces the feature vector `h`. The classifier maps `h` to
//! logits and the projection head maps `h` through
//! `linear -> ReLU -> linear -> row L2 normalize` to the embedding `z`.

use std::io::Read;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{kernels, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackboneConfig {
    pub widths: Vec<usize>,
    pub in_channels: usize,
    pub img_size: usize,
    pub num_classes: usize,
    pub proj_dim: usize,
    pub proj_hidden: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            widths: vec![16, 32, 64, 128],
            in_channels: 3,
            img_size: 64,
            num_classes: 6,
            proj_dim: 128,
            proj_hidden: 256,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::Config(format!("stage widths must be >= 1, got {:?}", self.widths)));
        }
        if self.in_channels == 0 || self.proj_dim == 0 || self.proj_hidden == 0 {
            return Err(Error::Config("in_channels, proj_dim and proj_hidden must be >= 1".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config(format!("num_classes must be >= 2, got {}", self.num_classes)));
        }
        let div = 1usize << self.widths.len();
        if self.img_size == 0 || self.img_size % div != 0 {
            return Err(Error::Config(format!(
                "img_size {} is not divisible by 2^{} = {}",
                self.img_size,
                self.widths.len(),
                div
            )));
        }
        Ok(())
    }
}

/// Projection head geometry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectionShape {
    pub hidden: usize,
    pub dim: usize,
}

/// Architecture descriptor stored in checkpoints. Widths reflect pruning.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub in_channels: usize,
    pub img_size: usize,
    pub widths: Vec<usize>,
    pub num_classes: usize,
    pub projection: Option<ProjectionShape>,
}

impl Architecture {
    pub fn feature_dim(&self) -> usize {
        *self.widths.last().expect("at least one stage")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Conv {
    /// `c_out x c_in x 3 x 3`
    pub weight: Tensor<f32>,
    pub bias: Tensor<f32>,
}

/// Dense layer stored as `n_in x n_out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Tensor<f32>,
    pub bias: Tensor<f32>,
}

impl Linear {
    pub fn n_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn n_out(&self) -> usize {
        self.weight.shape()[1]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionHead {
    pub fc1: Linear,
    pub fc2: Linear,
}

/// Parameters and architecture of the full network.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub arch: Architecture,
    pub convs: Vec<Conv>,
    pub classifier: Linear,
    pub projection: Option<ProjectionHead>,
}

/// Outputs of an inference forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Forward {
    pub h: Tensor<f32>,
    pub logits: Tensor<f32>,
    pub z: Option<Tensor<f32>>,
}

/// Tape handles for a training forward pass.
pub struct TapeForward {
    /// Trainable leaves in [`Model::params`] order.
    pub params: Vec<Var>,
    pub h: Var,
    pub logits: Var,
    pub z: Option<Var>,
}

/// Per-layer parameter accounting.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ParamCount {
    pub total: usize,
    pub layers: Vec<(String, usize)>,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor<f32> {
    let bound = (6.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.random_range(-bound..bound) as f32)
}

fn linear(rng: &mut ChaCha8Rng, n_in: usize, n_out: usize) -> Linear {
    Linear { weight: uniform(rng, &[n_in, n_out], n_in), bias: Tensor::zeros(&[n_out]) }
}

/// Builds a freshly initialized model (fan-in scaled uniform weights, zero
/// biases).
pub fn build_model(cfg: &BackboneConfig, seed: u64) -> Result<Model> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut convs = Vec::with_capacity(cfg.widths.len());
    let mut c_in = cfg.in_channels;
    for &c_out in &cfg.widths {
        convs.push(Conv {
            weight: uniform(&mut rng, &[c_out, c_in, 3, 3], c_in * 9),
            bias: Tensor::zeros(&[c_out]),
        });
        c_in = c_out;
    }
    let feat = c_in;
    let classifier = linear(&mut rng, feat, cfg.num_classes);
    let projection = Some(ProjectionHead {
        fc1: linear(&mut rng, feat, cfg.proj_hidden),
        fc2: linear(&mut rng, cfg.proj_hidden, cfg.proj_dim),
    });
    Ok(Model {
        arch: Architecture {
            in_channels: cfg.in_channels,
            img_size: cfg.img_size,
            widths: cfg.widths.clone(),
            num_classes: cfg.num_classes,
            projection: Some(ProjectionShape { hidden: cfg.proj_hidden, dim: cfg.proj_dim }),
        },
        convs,
        classifier,
        projection,
    })
}

impl Model {
    /// Parameters in canonical order: conv stages (weight, bias), classifier,
    /// then projection head when present.
    pub fn params(&self) -> Vec<&Tensor<f32>> {
        let mut out = Vec::new();
        for c in &self.convs {
            out.push(&c.weight);
            out.push(&c.bias);
        }
        out.push(&self.classifier.weight);
        out.push(&self.classifier.bias);
        if let Some(p) = &self.projection {
            out.extend([&p.fc1.weight, &p.fc1.bias, &p.fc2.weight, &p.fc2.bias]);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<f32>> {
        let mut out = Vec::new();
        for c in &mut self.convs {
            out.push(&mut c.weight);
            out.push(&mut c.bias);
        }
        out.push(&mut self.classifier.weight);
        out.push(&mut self.classifier.bias);
        if let Some(p) = &mut self.projection {
            out.extend([&mut p.fc1.weight, &mut p.fc1.bias, &mut p.fc2.weight, &mut p.fc2.bias]);
        }
        out
    }

    pub fn param_count(&self) -> ParamCount {
        let mut layers = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            layers.push((format!("conv{}", i + 1), c.weight.numel() + c.bias.numel()));
        }
        let lin = |l: &Linear| l.weight.numel() + l.bias.numel();
        layers.push(("classifier".to_string(), lin(&self.classifier)));
        if let Some(p) = &self.projection {
            layers.push(("proj.fc1".to_string(), lin(&p.fc1)));
            layers.push(("proj.fc2".to_string(), lin(&p.fc2)));
        }
        ParamCount { total: layers.iter().map(|(_, n)| n).sum(), layers }
    }

    /// Parameters in the convolution stages only.
    pub fn conv_param_count(&self) -> usize {
        self.convs.iter().map(|c| c.weight.numel() + c.bias.numel()).sum()
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let s = self.arch.img_size;
        if shape.len() != 4 || shape[1] != self.arch.in_channels || shape[2] != s || shape[3] != s {
            return Err(Error::shape(
                "forward",
                format!(
                    "expected B x {} x {} x {}, got {:?}",
                    self.arch.in_channels, s, s, shape
                ),
            ));
        }
        Ok(())
    }

    /// Inference forward pass without recording.
    pub fn forward(&self, x: &Tensor<f32>) -> Result<Forward> {
        self.check_input(x.shape())?;
        let h = self.features(x);
        let logits = self.head(&h, &self.classifier);
        let z = self.projection.as_ref().map(|p| {
            let mut a = self.head(&h, &p.fc1);
            kernels::relu_inplace(a.data_mut());
            let b = self.head(&a, &p.fc2);
            normalize_rows(b)
        });
        Ok(Forward { h, logits, z })
    }

    /// Logits only; skips the projection head.
    pub fn logits(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.check_input(x.shape())?;
        let h = self.features(x);
        Ok(self.head(&h, &self.classifier))
    }

    fn features(&self, x: &Tensor<f32>) -> Tensor<f32> {
        let batch = x.shape()[0];
        let mut cur = x.data().to_vec();
        let (mut c, mut s) = (self.arch.in_channels, self.arch.img_size);
        for conv in &self.convs {
            let c_out = conv.weight.shape()[0];
            let geom = kernels::ConvGeom { batch, c_in: c, h: s, w: s, c_out, kh: 3, kw: 3, pad: 1 };
            let mut y = kernels::conv2d_forward(&geom, &cur, conv.weight.data(), conv.bias.data());
            kernels::relu_inplace(&mut y);
            cur = kernels::maxpool2_forward(&y, batch * c_out, s, s).0;
            c = c_out;
            s /= 2;
        }
        let h = kernels::global_avg_pool(&cur, batch * c, s * s);
        Tensor::new(&[batch, c], h).expect("feature shape")
    }

    fn head(&self, x: &Tensor<f32>, l: &Linear) -> Tensor<f32> {
        let rows = x.shape()[0];
        let y = kernels::linear(x.data(), rows, l.n_in(), l.weight.data(), l.bias.data());
        Tensor::new(&[rows, l.n_out()], y).expect("linear shape")
    }

    /// Records a training forward pass on `tape`. Parameters become trainable
    /// leaves; `x` is a constant input.
    pub fn forward_tape(&self, tape: &mut Tape<f32>, x: &Tensor<f32>) -> Result<TapeForward> {
        self.check_input(x.shape())?;
        let params: Vec<Var> = self.params().into_iter().map(|p| tape.param(p.clone())).collect();
        let mut cur = tape.constant(x.clone());
        for i in 0..self.convs.len() {
            let y = tape.conv2d(cur, params[2 * i], params[2 * i + 1], 1)?;
            let y = tape.relu(y);
            cur = tape.max_pool2(y)?;
        }
        let h = tape.global_avg_pool(cur)?;
        let k = 2 * self.convs.len();
        let logits = tape.matmul(h, params[k])?;
        let logits = tape.add_bias(logits, params[k + 1])?;
        let z = if self.projection.is_some() {
            let a = tape.matmul(h, params[k + 2])?;
            let a = tape.add_bias(a, params[k + 3])?;
            let a = tape.relu(a);
            let b = tape.matmul(a, params[k + 4])?;
            let b = tape.add_bias(b, params[k + 5])?;
            Some(tape.l2_normalize_rows(b))
        } else {
            None
        };
        Ok(TapeForward { params, h, logits, z })
    }
}

fn normalize_rows(mut t: Tensor<f32>) -> Tensor<f32> {
    let eps = crate::tensor::NORM_EPS as f32;
    let c = t.cols();
    for row in t.data_mut().chunks_mut(c) {
        let n = row.iter().map(|v| v * v).sum::<f32>().sqrt();
        let d = if n >= eps { n } else { eps };
        for v in row.iter_mut() {
            *v /= d;
        }
    }
    t
}

const MAGIC: &[u8; 8] = b"DBCLCKPT";
const FORMAT_VERSION: u32 = 1;
/// Fixed size of the JSON descriptor block; padded with spaces.
const DESCRIPTOR_BLOCK: usize = 1000;
/// Bytes preceding the tensor payload.
pub const HEADER_BYTES: usize = 8 + 4 + 4 + DESCRIPTOR_BLOCK;

impl Model {
    /// Serializes to the checkpoint byte layout:
    ///
    /// | offset | size  | content                                        |
    /// |--------|-------|------------------------------------------------|
    /// | 0      | 8     | magic `DBCLCKPT`                               |
    /// | 8      | 4     | format version, u32 LE (= 1)                   |
    /// | 12     | 4     | descriptor JSON length, u32 LE                 |
    /// | 16     | 1000  | descriptor JSON, space padded                  |
    /// | 1016   | 4 * n | parameters as f32 LE in [`Model::params`] order |
    pub fn to_bytes(&self) -> Vec<u8> {
        let desc = serde_json::to_vec(&self.arch).expect("descriptor serializes");
        assert!(desc.len() <= DESCRIPTOR_BLOCK, "architecture descriptor exceeds {DESCRIPTOR_BLOCK} bytes");
        let n: usize = self.params().iter().map(|p| p.numel()).sum();
        let mut out = Vec::with_capacity(HEADER_BYTES + 4 * n);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(desc.len() as u32).to_le_bytes());
        out.extend_from_slice(&desc);
        out.resize(HEADER_BYTES, b' ');
        for p in self.params() {
            for v in p.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Parses checkpoint bytes; `origin` is used in error messages.
    pub fn from_reader(mut r: impl Read, origin: &Path) -> Result<Self> {
        let io = |e: std::io::Error| Error::io(origin, e);
        let mut head = [0u8; 16];
        r.read_exact(&mut head).map_err(io)?;
        if &head[..8] != MAGIC {
            return Err(Error::Format(format!("{}: bad checkpoint magic", origin.display())));
        }
        let version = u32::from_le_bytes(head[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "{}: unsupported checkpoint version {}",
                origin.display(),
                version
            )));
        }
        let len = u32::from_le_bytes(head[12..16].try_into().unwrap()) as usize;
        if len > DESCRIPTOR_BLOCK {
            return Err(Error::Format(format!("{}: descriptor length {} too large", origin.display(), len)));
        }
        let mut block = vec![0u8; DESCRIPTOR_BLOCK];
        r.read_exact(&mut block).map_err(io)?;
        let arch: Architecture = serde_json::from_slice(&block[..len])
            .map_err(|e| Error::Format(format!("{}: bad descriptor: {}", origin.display(), e)))?;
        let mut model = skeleton(&arch)?;
        for p in model.params_mut() {
            let mut buf = vec![0u8; 4 * p.numel()];
            r.read_exact(&mut buf).map_err(io)?;
            for (v, b) in p.data_mut().iter_mut().zip(buf.chunks_exact(4)) {
                *v = f32::from_le_bytes(b.try_into().unwrap());
            }
        }
        Ok(model)
    }
}

/// Zero-filled model with the given architecture.
fn skeleton(arch: &Architecture) -> Result<Model> {
    if arch.widths.is_empty() || arch.widths.contains(&0) || arch.num_classes < 2 {
        return Err(Error::Format(format!("invalid architecture {:?}", arch)));
    }
    let mut convs = Vec::new();
    let mut c_in = arch.in_channels;
    for &c in &arch.widths {
        convs.push(Conv { weight: Tensor::zeros(&[c, c_in, 3, 3]), bias: Tensor::zeros(&[c]) });
        c_in = c;
    }
    let lin = |i: usize, o: usize| Linear { weight: Tensor::zeros(&[i, o]), bias: Tensor::zeros(&[o]) };
    Ok(Model {
        arch: arch.clone(),
        convs,
        classifier: lin(c_in, arch.num_classes),
        projection: arch.projection.map(|p| ProjectionHead { fc1: lin(c_in, p.hidden), fc2: lin(p.hidden, p.dim) }),
    })
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    std::fs::write(path, model.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Model::from_reader(std::io::BufReader::new(f), path)
}
