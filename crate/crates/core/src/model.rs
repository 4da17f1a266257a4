//! Shallow autoencoders and discriminators, and their stacked forms.
//!
//! A generator stack of depth `m` applies encoders `1..=m` followed by
//! decoders `m..=1`. A discriminator stack applies every feature block in
//! order, then the head of the most recently stacked stage.

use crate::error::{Error, Result};
use crate::layer::{Block, BlockTape, LayerSpec};
use crate::param::Parameter;
use crate::rng::SeededRng;
use crate::tensor::Tensor;

/// Identifies one block of a stack by role and stage index (1-based).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BlockId {
    Encoder(usize),
    Decoder(usize),
    Features(usize),
    Head(usize),
}

/// Tape of a taped pass through a [`Sequential`] network.
#[derive(Clone, Debug)]
pub struct Tape {
    blocks: Vec<BlockTape>,
}

impl Tape {
    pub fn output(&self) -> &Tensor {
        self.blocks.last().expect("non-empty network").output()
    }
}

/// A network that is an ordered chain of blocks over per-item shaped input.
pub trait Sequential {
    /// Per-item input shape, `None` for an empty stack.
    fn input_shape(&self) -> Option<&[usize]>;
    fn blocks(&self) -> Vec<(BlockId, &Block)>;
    fn blocks_mut(&mut self) -> Vec<(BlockId, &mut Block)>;

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let expected = self
            .input_shape()
            .ok_or_else(|| Error::invalid("network has no stages"))?;
        if &x.shape()[1..] != expected {
            let mut want = vec![x.batch()];
            want.extend_from_slice(expected);
            return Err(Error::shape("network input", &want, x.shape()));
        }
        Ok(())
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_traced(x)?.0)
    }

    /// Forward pass that also reports the blocks applied, in order.
    fn forward_traced(&self, x: &Tensor) -> Result<(Tensor, Vec<BlockId>)> {
        self.check_input(x)?;
        let mut trace = Vec::new();
        let mut cur = x.clone();
        for (id, block) in self.blocks() {
            cur = block.forward(&cur)?;
            trace.push(id);
        }
        Ok((cur, trace))
    }

    fn forward_taped(&self, x: &Tensor) -> Result<Tape> {
        self.check_input(x)?;
        let mut blocks: Vec<BlockTape> = Vec::new();
        for (_, block) in self.blocks() {
            let input = blocks.last().map_or(x, BlockTape::output);
            let tape = block.forward_taped(input)?;
            blocks.push(tape);
        }
        Ok(Tape { blocks })
    }

    /// Accumulates parameter gradients and returns the gradient with respect
    /// to the network input.
    fn backward(&mut self, tape: &Tape, upstream: &Tensor) -> Result<Tensor> {
        let mut blocks = self.blocks_mut();
        if blocks.len() != tape.blocks.len() {
            return Err(Error::invalid("tape does not belong to this network"));
        }
        upstream.expect_same_shape("backward", tape.output())?;
        let mut grad = upstream.clone();
        for ((_, block), t) in blocks.iter_mut().zip(&tape.blocks).rev() {
            grad = block.backward(t, &grad)?;
        }
        Ok(grad)
    }

    fn params(&self) -> Vec<&Parameter> {
        self.blocks()
            .into_iter()
            .flat_map(|(_, b)| b.params())
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        self.blocks_mut()
            .into_iter()
            .flat_map(|(_, b)| b.params_mut())
            .collect()
    }

    fn zero_grads(&mut self) {
        self.params_mut().into_iter().for_each(Parameter::zero_grad);
    }

    fn reset_optimizer(&mut self) {
        self.params_mut()
            .into_iter()
            .for_each(Parameter::reset_optimizer);
    }
}

/// One encoder block and its mirrored decoder block.
#[derive(Clone, Debug, PartialEq)]
pub struct ShallowAutoencoder {
    stage: usize,
    input_shape: Vec<usize>,
    code_shape: Vec<usize>,
    encoder: Block,
    decoder: Block,
}

impl ShallowAutoencoder {
    /// Requires a code with no more elements than the input.
    pub fn new(
        stage: usize,
        input_shape: &[usize],
        encoder: Block,
        decoder: Block,
    ) -> Result<Self> {
        let ae = Self::new_overcomplete(stage, input_shape, encoder, decoder)?;
        let code_len: usize = ae.code_shape.iter().product();
        let in_len: usize = input_shape.iter().product();
        if code_len > in_len {
            return Err(Error::invalid(format!(
                "stage {stage}: code {:?} is larger than input {input_shape:?}",
                ae.code_shape
            )));
        }
        Ok(ae)
    }

    /// Like [`ShallowAutoencoder::new`] but allows codes larger than the input.
    pub fn new_overcomplete(
        stage: usize,
        input_shape: &[usize],
        encoder: Block,
        decoder: Block,
    ) -> Result<Self> {
        if stage == 0 {
            return Err(Error::invalid("stage indices start at 1"));
        }
        let code_shape = encoder.output_shape(input_shape)?;
        let out = decoder.output_shape(&code_shape)?;
        if out != input_shape {
            return Err(Error::shape("decoder output", input_shape, &out));
        }
        Ok(Self {
            stage,
            input_shape: input_shape.to_vec(),
            code_shape,
            encoder,
            decoder,
        })
    }

    pub fn stage(&self) -> usize {
        self.stage
    }

    pub fn code_shape(&self) -> &[usize] {
        &self.code_shape
    }

    pub fn encoder(&self) -> &Block {
        &self.encoder
    }

    pub fn decoder(&self) -> &Block {
        &self.decoder
    }

    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        self.encoder.forward(x)
    }
}

impl Sequential for ShallowAutoencoder {
    fn input_shape(&self) -> Option<&[usize]> {
        Some(&self.input_shape)
    }

    fn blocks(&self) -> Vec<(BlockId, &Block)> {
        vec![
            (BlockId::Encoder(self.stage), &self.encoder),
            (BlockId::Decoder(self.stage), &self.decoder),
        ]
    }

    fn blocks_mut(&mut self) -> Vec<(BlockId, &mut Block)> {
        vec![
            (BlockId::Encoder(self.stage), &mut self.encoder),
            (BlockId::Decoder(self.stage), &mut self.decoder),
        ]
    }
}

/// Stacked autoencoder `G`, applied as mirrored nesting.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GeneratorStack {
    stages: Vec<ShallowAutoencoder>,
}

impl GeneratorStack {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn depth(&self) -> usize {
        self.stages.len()
    }

    pub fn stages(&self) -> &[ShallowAutoencoder] {
        &self.stages
    }

    /// Shape of the innermost code, `None` when empty.
    pub fn code_shape(&self) -> Option<&[usize]> {
        self.stages.last().map(ShallowAutoencoder::code_shape)
    }

    /// Appends `stage` as the new innermost autoencoder. Existing stages are
    /// not touched; on error the stack is unchanged.
    pub fn push(&mut self, stage: ShallowAutoencoder) -> Result<()> {
        if let Some(code) = self.code_shape() {
            if stage.input_shape != code {
                return Err(Error::shape("stack_generator", code, &stage.input_shape));
            }
        }
        self.stages.push(stage);
        Ok(())
    }

    /// Code after every encoder.
    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut cur = x.clone();
        for s in &self.stages {
            cur = s.encoder.forward(&cur)?;
        }
        Ok(cur)
    }

    pub fn reconstruct(&self, x: &Tensor) -> Result<Tensor> {
        self.forward(x)
    }
}

impl Sequential for GeneratorStack {
    fn input_shape(&self) -> Option<&[usize]> {
        self.stages.first().map(|s| s.input_shape.as_slice())
    }

    fn blocks(&self) -> Vec<(BlockId, &Block)> {
        let enc = self
            .stages
            .iter()
            .map(|s| (BlockId::Encoder(s.stage), &s.encoder));
        let dec = self
            .stages
            .iter()
            .rev()
            .map(|s| (BlockId::Decoder(s.stage), &s.decoder));
        enc.chain(dec).collect()
    }

    fn blocks_mut(&mut self) -> Vec<(BlockId, &mut Block)> {
        let (enc, dec): (Vec<_>, Vec<_>) = self
            .stages
            .iter_mut()
            .map(|s| {
                (
                    (BlockId::Encoder(s.stage), &mut s.encoder),
                    (BlockId::Decoder(s.stage), &mut s.decoder),
                )
            })
            .unzip();
        enc.into_iter().chain(dec.into_iter().rev()).collect()
    }
}

/// A feature block plus a probability head.
#[derive(Clone, Debug, PartialEq)]
pub struct ShallowDiscriminator {
    stage: usize,
    input_shape: Vec<usize>,
    feature_shape: Vec<usize>,
    features: Block,
    head: Block,
}

impl ShallowDiscriminator {
    /// The head must map the feature output to a single sigmoid probability.
    pub fn new(stage: usize, input_shape: &[usize], features: Block, head: Block) -> Result<Self> {
        if stage == 0 {
            return Err(Error::invalid("stage indices start at 1"));
        }
        let feature_shape = features.output_shape(input_shape)?;
        let out = head.output_shape(&feature_shape)?;
        if out != [1] {
            return Err(Error::shape("discriminator head", &[1], &out));
        }
        if head.layers().last().map(|l| *l.spec()) != Some(LayerSpec::Sigmoid) {
            return Err(Error::invalid("discriminator head must end in a sigmoid"));
        }
        Ok(Self {
            stage,
            input_shape: input_shape.to_vec(),
            feature_shape,
            features,
            head,
        })
    }

    pub fn stage(&self) -> usize {
        self.stage
    }

    pub fn feature_shape(&self) -> &[usize] {
        &self.feature_shape
    }

    pub fn features(&self) -> &Block {
        &self.features
    }

    pub fn head(&self) -> &Block {
        &self.head
    }
}

impl Sequential for ShallowDiscriminator {
    fn input_shape(&self) -> Option<&[usize]> {
        Some(&self.input_shape)
    }

    fn blocks(&self) -> Vec<(BlockId, &Block)> {
        vec![
            (BlockId::Features(self.stage), &self.features),
            (BlockId::Head(self.stage), &self.head),
        ]
    }

    fn blocks_mut(&mut self) -> Vec<(BlockId, &mut Block)> {
        vec![
            (BlockId::Features(self.stage), &mut self.features),
            (BlockId::Head(self.stage), &mut self.head),
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct FeatureBlock {
    pub stage: usize,
    pub input_shape: Vec<usize>,
    pub output_shape: Vec<usize>,
    pub block: Block,
}

/// Stacked discriminator `D`: all feature blocks, newest head only.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DiscriminatorStack {
    features: Vec<FeatureBlock>,
    head: Option<(usize, Block)>,
}

impl DiscriminatorStack {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn depth(&self) -> usize {
        self.features.len()
    }

    pub fn head_stage(&self) -> Option<usize> {
        self.head.as_ref().map(|(k, _)| *k)
    }

    pub fn feature_blocks(&self) -> impl Iterator<Item = (usize, &Block)> {
        self.features.iter().map(|f| (f.stage, &f.block))
    }

    pub fn head(&self) -> Option<&Block> {
        self.head.as_ref().map(|(_, b)| b)
    }

    pub fn feature_output_shape(&self) -> Option<&[usize]> {
        self.features.last().map(|f| f.output_shape.as_slice())
    }

    /// Appends the stage's feature block and replaces the head with its head.
    /// On error the stack is unchanged.
    pub fn push(&mut self, stage: ShallowDiscriminator) -> Result<()> {
        if let Some(shape) = self.feature_output_shape() {
            if stage.input_shape != shape {
                return Err(Error::shape(
                    "stack_discriminator",
                    shape,
                    &stage.input_shape,
                ));
            }
        }
        self.features.push(FeatureBlock {
            stage: stage.stage,
            input_shape: stage.input_shape,
            output_shape: stage.feature_shape,
            block: stage.features,
        });
        self.head = Some((stage.stage, stage.head));
        Ok(())
    }

    pub(crate) fn from_parts(features: Vec<FeatureBlock>, head: Option<(usize, Block)>) -> Self {
        Self { features, head }
    }

    pub(crate) fn parts(&self) -> (&[FeatureBlock], Option<&(usize, Block)>) {
        (&self.features, self.head.as_ref())
    }

    pub fn discriminate(&self, x: &Tensor) -> Result<Tensor> {
        self.forward(x)
    }
}

impl Sequential for DiscriminatorStack {
    fn input_shape(&self) -> Option<&[usize]> {
        self.features.first().map(|f| f.input_shape.as_slice())
    }

    fn blocks(&self) -> Vec<(BlockId, &Block)> {
        let mut out: Vec<_> = self
            .features
            .iter()
            .map(|f| (BlockId::Features(f.stage), &f.block))
            .collect();
        if let Some((k, h)) = &self.head {
            out.push((BlockId::Head(*k), h));
        }
        out
    }

    fn blocks_mut(&mut self) -> Vec<(BlockId, &mut Block)> {
        let mut out: Vec<_> = self
            .features
            .iter_mut()
            .map(|f| (BlockId::Features(f.stage), &mut f.block))
            .collect();
        if let Some((k, h)) = &mut self.head {
            out.push((BlockId::Head(*k), h));
        }
        out
    }
}

pub fn encode(g: &GeneratorStack, x: &Tensor) -> Result<Tensor> {
    g.encode(x)
}

pub fn reconstruct(g: &GeneratorStack, x_phi: &Tensor) -> Result<Tensor> {
    g.reconstruct(x_phi)
}

pub fn discriminate(d: &DiscriminatorStack, x: &Tensor) -> Result<Tensor> {
    d.discriminate(x)
}

pub fn stack_generator(mut g: GeneratorStack, g_k: ShallowAutoencoder) -> Result<GeneratorStack> {
    g.push(g_k)?;
    Ok(g)
}

pub fn stack_discriminator(
    mut d: DiscriminatorStack,
    d_k: ShallowDiscriminator,
) -> Result<DiscriminatorStack> {
    d.push(d_k)?;
    Ok(d)
}

/// Builds stage `k` networks given the stage's per-item input shape.
pub trait StageFactory {
    fn autoencoder(
        &self,
        stage: usize,
        input_shape: &[usize],
        rng: &mut SeededRng,
    ) -> Result<ShallowAutoencoder>;
    fn discriminator(
        &self,
        stage: usize,
        input_shape: &[usize],
        rng: &mut SeededRng,
    ) -> Result<ShallowDiscriminator>;
}

/// Convolutional stage layout: stage `k` maps `stage_channels[k-2]` (or the
/// image channels for `k = 1`) to `stage_channels[k-1]` with a strided
/// convolution, and mirrors it with a transposed convolution. The outermost
/// decoder ends in a sigmoid; inner decoders end in leaky ReLU, matching the
/// range of the code they reconstruct.
#[derive(Clone, Debug, PartialEq)]
pub struct Architecture {
    pub stage_channels: Vec<usize>,
    pub kernel_size: usize,
    pub stride: usize,
    pub padding: usize,
    pub alpha: f64,
    pub allow_overcomplete: bool,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            stage_channels: vec![4, 8, 16],
            kernel_size: 4,
            stride: 2,
            padding: 1,
            alpha: 0.2,
            allow_overcomplete: false,
        }
    }
}

impl Architecture {
    fn out_channels(&self, stage: usize) -> Result<usize> {
        self.stage_channels
            .get(stage.wrapping_sub(1))
            .copied()
            .ok_or_else(|| {
                Error::invalid(format!(
                    "no channel count configured for stage {stage} ({} configured)",
                    self.stage_channels.len()
                ))
            })
    }

    fn conv(&self, in_channels: usize, out_channels: usize) -> LayerSpec {
        LayerSpec::Conv {
            in_channels,
            out_channels,
            kernel_size: self.kernel_size,
            stride: self.stride,
            padding: self.padding,
        }
    }

    /// Full generator of depth `m`, built by the same factory calls (in the
    /// same order) that layer-wise training would make.
    pub fn generator_stack(
        &self,
        image_shape: &[usize],
        m: usize,
        rng: &mut SeededRng,
    ) -> Result<GeneratorStack> {
        let mut g = GeneratorStack::new();
        let mut shape = image_shape.to_vec();
        for k in 1..=m {
            let s = self.autoencoder(k, &shape, rng)?;
            shape = s.code_shape().to_vec();
            g.push(s)?;
        }
        Ok(g)
    }

    pub fn discriminator_stack(
        &self,
        image_shape: &[usize],
        m: usize,
        rng: &mut SeededRng,
    ) -> Result<DiscriminatorStack> {
        let mut d = DiscriminatorStack::new();
        let mut shape = image_shape.to_vec();
        for k in 1..=m {
            let s = self.discriminator(k, &shape, rng)?;
            shape = s.feature_shape().to_vec();
            d.push(s)?;
        }
        Ok(d)
    }
}

impl StageFactory for Architecture {
    fn autoencoder(
        &self,
        stage: usize,
        input_shape: &[usize],
        rng: &mut SeededRng,
    ) -> Result<ShallowAutoencoder> {
        let &[c_in, _, _] = input_shape else {
            return Err(Error::shape("autoencoder input", &[0, 0, 0], input_shape));
        };
        let c = self.out_channels(stage)?;
        let act = LayerSpec::LeakyRelu { alpha: self.alpha };
        let encoder = Block::from_specs(&[self.conv(c_in, c), act], rng)?;
        let out_act = if stage == 1 { LayerSpec::Sigmoid } else { act };
        let decoder = Block::from_specs(
            &[
                LayerSpec::ConvTranspose {
                    in_channels: c,
                    out_channels: c_in,
                    kernel_size: self.kernel_size,
                    stride: self.stride,
                    padding: self.padding,
                },
                out_act,
            ],
            rng,
        )?;
        if self.allow_overcomplete {
            ShallowAutoencoder::new_overcomplete(stage, input_shape, encoder, decoder)
        } else {
            ShallowAutoencoder::new(stage, input_shape, encoder, decoder)
        }
    }

    fn discriminator(
        &self,
        stage: usize,
        input_shape: &[usize],
        rng: &mut SeededRng,
    ) -> Result<ShallowDiscriminator> {
        let &[c_in, _, _] = input_shape else {
            return Err(Error::shape("discriminator input", &[0, 0, 0], input_shape));
        };
        let c = self.out_channels(stage)?;
        let features = Block::from_specs(
            &[
                self.conv(c_in, c),
                LayerSpec::LeakyRelu { alpha: self.alpha },
            ],
            rng,
        )?;
        let feature_shape = features.output_shape(input_shape)?;
        let head = Block::from_specs(
            &[
                LayerSpec::Dense {
                    in_features: feature_shape.iter().product(),
                    out_features: 1,
                },
                LayerSpec::Sigmoid,
            ],
            rng,
        )?;
        ShallowDiscriminator::new(stage, input_shape, features, head)
    }
}
