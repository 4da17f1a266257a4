//! Versioned binary checkpoints.
//!
//! Layout (all integers little-endian, reals as IEEE-754 bit patterns):
//!
//! ```text
//! "GSCA" | version u32 | config_hash u64 | stage u32 | epoch u32
//! rng_seed u64 | rng_word_pos u128
//! generator:     stage_count u32, then per stage:
//!                stage u32 | input shape | encoder block | decoder block
//! discriminator: feature_count u32, then per feature block:
//!                stage u32 | input shape | block
//!                has_head u8 [| head stage u32 | head block]
//! shape:         rank u32 | dims u32*
//! block:         layer_count u32, then per layer:
//!                kind u8 | a u32 | b u32 | kernel u32 | stride u32 | padding u32 | alpha f64
//!                [| weight param | bias param]     (conv, conv_transpose, dense)
//! param:         shape | len u64 | value f64*len | m f64*len | v f64*len | step u64
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::fsutil;
use crate::layer::{Block, Layer, LayerSpec};
use crate::model::{DiscriminatorStack, FeatureBlock, GeneratorStack, ShallowAutoencoder};
use crate::param::Parameter;
use crate::rng::RngState;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"GSCA";
pub const FORMAT_VERSION: u32 = 1;

/// Position in a training run: `stage` completed stages, `epoch` completed
/// epochs of the phase in progress.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Cursor {
    pub stage: u32,
    pub epoch: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub generator: GeneratorStack,
    pub discriminator: DiscriminatorStack,
    pub cursor: Cursor,
    pub rng: RngState,
    pub config_hash: u64,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        for x in v {
            self.0.extend_from_slice(&x.to_bits().to_le_bytes());
        }
    }
    fn shape(&mut self, s: &[usize]) {
        self.u32(s.len());
        s.iter().for_each(|&d| self.u32(d));
    }
    fn param(&mut self, p: &Parameter) {
        self.shape(p.shape());
        self.u64(p.value.len() as u64);
        self.f64s(p.value.data());
        self.f64s(p.first_moment.data());
        self.f64s(p.second_moment.data());
        self.u64(p.step);
    }
    fn block(&mut self, b: &Block) {
        self.u32(b.layers().len());
        for l in b.layers() {
            let (kind, fields, alpha) = match *l.spec() {
                LayerSpec::Conv {
                    in_channels,
                    out_channels,
                    kernel_size,
                    stride,
                    padding,
                } => (
                    0,
                    [in_channels, out_channels, kernel_size, stride, padding],
                    0.0,
                ),
                LayerSpec::ConvTranspose {
                    in_channels,
                    out_channels,
                    kernel_size,
                    stride,
                    padding,
                } => (
                    1,
                    [in_channels, out_channels, kernel_size, stride, padding],
                    0.0,
                ),
                LayerSpec::Dense {
                    in_features,
                    out_features,
                } => (2, [in_features, out_features, 0, 0, 0], 0.0),
                LayerSpec::LeakyRelu { alpha } => (3, [0; 5], alpha),
                LayerSpec::Sigmoid => (4, [0; 5], 0.0),
            };
            self.u8(kind);
            fields.iter().for_each(|&f| self.u32(f));
            self.f64s(&[alpha]);
            if let (Some(w), Some(b)) = (l.weight(), l.bias()) {
                self.param(w);
                self.param(b);
            }
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn fail(&self, reason: impl Into<String>) -> Error {
        Error::Format {
            what: "checkpoint",
            offset: self.pos,
            reason: reason.into(),
        }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.fail(format!(
                "truncated: need {n} bytes, {} remain",
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().unwrap()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(
            n.checked_mul(8)
                .ok_or_else(|| self.fail("length overflow"))?,
        )?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_bits(u64::from_le_bytes(c.try_into().unwrap())))
            .collect())
    }
    fn shape(&mut self) -> Result<Vec<usize>> {
        let rank = self.u32()?;
        if rank == 0 || rank > 8 {
            return Err(self.fail(format!("implausible rank {rank}")));
        }
        (0..rank).map(|_| self.u32()).collect()
    }
    fn param(&mut self) -> Result<Parameter> {
        let shape = self.shape()?;
        let len = self.u64()? as usize;
        let expected: usize = shape.iter().product();
        if len != expected {
            return Err(self.fail(format!(
                "parameter length {len} does not match shape {shape:?}"
            )));
        }
        let tensor = |r: &mut Self| -> Result<Tensor> {
            let at = r.pos;
            Tensor::new(shape.clone(), r.f64s(len)?).map_err(|e| Error::Format {
                what: "checkpoint",
                offset: at,
                reason: e.to_string(),
            })
        };
        let value = tensor(self)?;
        let first_moment = tensor(self)?;
        let second_moment = tensor(self)?;
        let step = self.u64()?;
        let mut p = Parameter::new(value);
        p.first_moment = first_moment;
        p.second_moment = second_moment;
        p.step = step;
        Ok(p)
    }
    fn block(&mut self) -> Result<Block> {
        let n = self.u32()?;
        let mut layers = Vec::with_capacity(n.min(64));
        for _ in 0..n {
            let at = self.pos;
            let kind = self.u8()?;
            let f: Vec<usize> = (0..5).map(|_| self.u32()).collect::<Result<_>>()?;
            let alpha = self.f64s(1)?[0];
            let spec = match kind {
                0 | 1 => {
                    let (in_channels, out_channels, kernel_size, stride, padding) =
                        (f[0], f[1], f[2], f[3], f[4]);
                    if kind == 0 {
                        LayerSpec::Conv {
                            in_channels,
                            out_channels,
                            kernel_size,
                            stride,
                            padding,
                        }
                    } else {
                        LayerSpec::ConvTranspose {
                            in_channels,
                            out_channels,
                            kernel_size,
                            stride,
                            padding,
                        }
                    }
                }
                2 => LayerSpec::Dense {
                    in_features: f[0],
                    out_features: f[1],
                },
                3 => LayerSpec::LeakyRelu { alpha },
                4 => LayerSpec::Sigmoid,
                k => {
                    self.pos = at;
                    return Err(self.fail(format!("unknown layer kind {k}")));
                }
            };
            let wrap = |e: Error| Error::Format {
                what: "checkpoint",
                offset: at,
                reason: e.to_string(),
            };
            let layer = if spec.param_shapes().is_some() {
                let w = self.param()?;
                let b = self.param()?;
                let mut layer =
                    Layer::with_params(spec, Some(w.value.clone()), Some(b.value.clone()))
                        .map_err(wrap)?;
                layer.replace_params(w, b).map_err(wrap)?;
                layer
            } else {
                Layer::activation(spec).map_err(wrap)?
            };
            layers.push(layer);
        }
        Block::new(layers).map_err(|e| self.fail(e.to_string()))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(FORMAT_VERSION as usize);
        w.u64(self.config_hash);
        w.u32(self.cursor.stage as usize);
        w.u32(self.cursor.epoch as usize);
        w.u64(self.rng.seed);
        w.0.extend_from_slice(&self.rng.word_pos.to_le_bytes());

        let stages = self.generator.stages();
        w.u32(stages.len());
        for s in stages {
            w.u32(s.stage());
            w.shape(crate::model::Sequential::input_shape(s).unwrap());
            w.block(s.encoder());
            w.block(s.decoder());
        }

        let (features, head) = self.discriminator.parts();
        w.u32(features.len());
        for f in features {
            w.u32(f.stage);
            w.shape(&f.input_shape);
            w.block(&f.block);
        }
        match head {
            None => w.u8(0),
            Some((k, h)) => {
                w.u8(1);
                w.u32(*k);
                w.block(h);
            }
        }
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            r.pos = 0;
            return Err(r.fail("bad magic, expected \"GSCA\""));
        }
        let version = r.u32()? as u32;
        if version != FORMAT_VERSION {
            r.pos = 4;
            return Err(r.fail(format!(
                "unsupported format version {version}, expected {FORMAT_VERSION}"
            )));
        }
        let config_hash = r.u64()?;
        let cursor = Cursor {
            stage: r.u32()? as u32,
            epoch: r.u32()? as u32,
        };
        let rng = RngState {
            seed: r.u64()?,
            word_pos: r.u128()?,
        };

        let mut generator = GeneratorStack::new();
        for _ in 0..r.u32()? {
            let at = r.pos;
            let stage = r.u32()?;
            let shape = r.shape()?;
            let enc = r.block()?;
            let dec = r.block()?;
            let ae = ShallowAutoencoder::new_overcomplete(stage, &shape, enc, dec)
                .and_then(|ae| generator.push(ae));
            if let Err(e) = ae {
                r.pos = at;
                return Err(r.fail(e.to_string()));
            }
        }

        let mut features: Vec<FeatureBlock> = Vec::new();
        for _ in 0..r.u32()? {
            let at = r.pos;
            let stage = r.u32()?;
            let input_shape = r.shape()?;
            let block = r.block()?;
            let chained = features
                .last()
                .is_none_or(|prev| prev.output_shape == input_shape);
            let output_shape = block.output_shape(&input_shape);
            match output_shape {
                Ok(output_shape) if chained && stage > 0 => features.push(FeatureBlock {
                    stage,
                    input_shape,
                    output_shape,
                    block,
                }),
                _ => {
                    r.pos = at;
                    return Err(r.fail("inconsistent discriminator feature chain"));
                }
            }
        }
        let head = match r.u8()? {
            0 => None,
            1 => {
                let at = r.pos;
                let k = r.u32()?;
                let block = r.block()?;
                let ok = features
                    .last()
                    .and_then(|f| block.output_shape(&f.output_shape).ok())
                    .is_some_and(|s| s == [1]);
                if !ok {
                    r.pos = at;
                    return Err(r.fail("discriminator head does not fit the feature chain"));
                }
                Some((k, block))
            }
            v => return Err(r.fail(format!("invalid head flag {v}"))),
        };
        if r.pos != bytes.len() {
            return Err(r.fail(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self {
            generator,
            discriminator: DiscriminatorStack::from_parts(features, head),
            cursor,
            rng,
            config_hash,
        })
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    fsutil::write_atomic(path, &ckpt.to_bytes())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&fsutil::read(path)?)
}
