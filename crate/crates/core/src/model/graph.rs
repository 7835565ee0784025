use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::blocks::{AttentionKind, CfStage, ConvBlock, DecoderStage, PlainStage};
use super::params::{Builder, ConvLayer, Ctx, ParamStore};
use crate::autodiff::{BnConfig, BnStats, Mode, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

/// The ablation ladder, from the bare U-Net to the full network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// U-Net trained on the main output only.
    UNetNoDS,
    UNet,
    UNetSE,
    UNetPSE,
    UNetCF,
    PCNet,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::UNetNoDS,
        Variant::UNet,
        Variant::UNetSE,
        Variant::UNetPSE,
        Variant::UNetCF,
        Variant::PCNet,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::UNetNoDS => "UNetNoDS",
            Variant::UNet => "UNet",
            Variant::UNetSE => "UNetSE",
            Variant::UNetPSE => "UNetPSE",
            Variant::UNetCF => "UNetCF",
            Variant::PCNet => "PCNet",
        }
    }

    pub fn attention(self) -> AttentionKind {
        match self {
            Variant::UNetSE => AttentionKind::Se,
            Variant::UNetPSE | Variant::PCNet => AttentionKind::Pse,
            _ => AttentionKind::None,
        }
    }

    pub fn coarse_to_fine(self) -> bool {
        matches!(self, Variant::UNetCF | Variant::PCNet)
    }

    /// Whether the auxiliary outputs contribute to the training loss.
    pub fn deep_supervision(self) -> bool {
        self != Variant::UNetNoDS
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::arg(format!("unknown variant `{s}`")))
    }
}

/// Architecture hyper-parameters. `levels` is the number of pooling steps;
/// the standard network uses 3 (48 → 24 → 12 → 6).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelSpec {
    pub variant: Variant,
    pub spatial_rank: usize,
    pub base_channels: usize,
    pub levels: usize,
}

impl ModelSpec {
    pub const LEVELS: usize = 3;

    pub fn new(variant: Variant, spatial_rank: usize, base_channels: usize) -> Self {
        Self {
            variant,
            spatial_rank,
            base_channels,
            levels: Self::LEVELS,
        }
    }

    pub fn with_levels(mut self, levels: usize) -> Self {
        self.levels = levels;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=3).contains(&self.spatial_rank) {
            return Err(Error::arg(format!("spatial rank must be 2 or 3, got {}", self.spatial_rank)));
        }
        if self.base_channels < 4 || self.base_channels % 4 != 0 {
            return Err(Error::arg(format!(
                "base_channels must be a multiple of 4 and at least 4, got {}",
                self.base_channels
            )));
        }
        if !(2..=4).contains(&self.levels) {
            return Err(Error::arg(format!("levels must be 2..=4, got {}", self.levels)));
        }
        Ok(())
    }

    /// Channel width at encoder level `i`; level `levels` is the bottleneck.
    pub fn width(&self, level: usize) -> usize {
        self.base_channels << level
    }
}

/// A built network: topology plus its parameters.
#[derive(Clone, Debug)]
pub struct ModelGraph<T> {
    spec: ModelSpec,
    pub params: ParamStore<T>,
    encoder: Vec<ConvBlock>,
    bottleneck: ConvBlock,
    /// Indexed by level, shallowest first.
    decoder: Vec<DecoderStage>,
    heads: [ConvLayer; 3],
}

/// Probability maps at full, half and quarter resolution.
pub type Outputs = [Var; 3];

pub fn build_model<T: Float>(spec: ModelSpec, seed: u64) -> Result<ModelGraph<T>> {
    spec.validate()?;
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = Builder {
        store: &mut store,
        rng: &mut rng,
        rank: spec.spatial_rank,
    };
    let attention = spec.variant.attention();
    let mut encoder = Vec::with_capacity(spec.levels);
    let mut c_in = 1;
    for level in 0..spec.levels {
        let c = spec.width(level);
        encoder.push(ConvBlock::new(&mut b, &format!("enc{level}"), c_in, c, attention)?);
        c_in = c;
    }
    let bottleneck = ConvBlock::new(&mut b, "bottleneck", c_in, spec.width(spec.levels), attention)?;
    let mut decoder = Vec::with_capacity(spec.levels);
    for level in (0..spec.levels).rev() {
        let (c_enc, c_deep) = (spec.width(level), spec.width(level + 1));
        let name = format!("dec{level}");
        let stage = if spec.variant.coarse_to_fine() {
            DecoderStage::CoarseToFine(CfStage::new(&mut b, &name, c_enc, c_deep, attention)?)
        } else {
            DecoderStage::Plain(PlainStage {
                block: ConvBlock::new(&mut b, &name, c_enc + c_deep, c_enc, attention)?,
            })
        };
        decoder.push(stage);
    }
    decoder.reverse();
    let head_width = |i: usize| spec.width(i.min(spec.levels));
    let heads = [
        b.conv("head1", head_width(0), 1, 1, false)?,
        b.conv("head2", head_width(1), 1, 1, false)?,
        b.conv("head3", head_width(2), 1, 1, false)?,
    ];
    Ok(ModelGraph {
        spec,
        params: store,
        encoder,
        bottleneck,
        decoder,
        heads,
    })
}

impl<T: Float> ModelGraph<T> {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn variant(&self) -> Variant {
        self.spec.variant
    }

    pub fn spatial_rank(&self) -> usize {
        self.spec.spatial_rank
    }

    pub fn parameter_count(&self) -> usize {
        self.params.parameter_count()
    }

    /// Number of convolutional blocks, counting a coarse-to-fine stage as one.
    pub fn block_count(&self) -> usize {
        self.encoder.len() + 1 + self.decoder.len()
    }

    /// Number of attention modules across all blocks.
    pub fn attention_count(&self) -> usize {
        let block = |b: &ConvBlock| usize::from(b.attention.is_some());
        let stage = |s: &DecoderStage| match s {
            DecoderStage::Plain(p) => block(&p.block),
            DecoderStage::CoarseToFine(cf) => block(&cf.conventional) + block(&cf.refine),
        };
        self.encoder.iter().map(block).sum::<usize>() + block(&self.bottleneck) + self.decoder.iter().map(stage).sum::<usize>()
    }

    /// Checks an input batch `[N, 1, S...]` against the pooling depth.
    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != self.spec.spatial_rank + 2 {
            return Err(Error::InvalidShape {
                shape: shape.to_vec(),
                detail: format!("expected [N, 1] plus {} spatial axes", self.spec.spatial_rank),
            });
        }
        if shape[1] != 1 {
            return Err(Error::shape(1, format!("expected 1 input channel, got {}", shape[1])));
        }
        let div = 1 << self.spec.levels;
        for (a, &e) in shape.iter().enumerate().skip(2) {
            if e % div != 0 {
                return Err(Error::shape(a, format!("extent {e} is not divisible by {div}")));
            }
        }
        Ok(())
    }

    /// Records one pass on `tape`. `params` are this model's parameters as
    /// bound by [`ParamStore::bind`]; `stats` are updated in training mode.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        params: &[Var],
        input: Var,
        stats: &mut [BnStats<T>],
        mode: Mode,
    ) -> Result<Outputs> {
        self.check_input(tape.value(input).shape())?;
        if params.len() != self.params.len() || stats.len() != self.params.buffer_names().len() {
            return Err(Error::arg("parameter or statistics list does not match the model"));
        }
        let mut ctx = Ctx {
            tape,
            params,
            stats,
            mode,
            bn: BnConfig::default(),
        };
        let mut skips = Vec::with_capacity(self.encoder.len());
        let mut h = input;
        for block in &self.encoder {
            let e = block.forward(&mut ctx, h)?;
            skips.push(e);
            h = ctx.tape.max_pool(e, &[2], &[2])?;
        }
        let bottom = self.bottleneck.forward(&mut ctx, h)?;
        let mut decoded = vec![bottom; self.decoder.len()];
        let mut deeper = bottom;
        for level in (0..self.decoder.len()).rev() {
            deeper = self.decoder[level].forward(&mut ctx, skips[level], deeper)?;
            decoded[level] = deeper;
        }
        decoded.push(bottom);
        let mut outs = [input; 3];
        for (i, head) in self.heads.iter().enumerate() {
            let logits = head.forward(&mut ctx, decoded[i])?;
            outs[i] = ctx.tape.sigmoid(logits)?;
        }
        Ok(outs)
    }

    /// Training-mode pass that updates this model's running statistics.
    pub fn forward_train(&mut self, tape: &mut Tape<T>, params: &[Var], input: Var) -> Result<Outputs> {
        let mut stats = std::mem::take(self.params.buffers_mut_vec());
        let out = self.forward(tape, params, input, &mut stats, Mode::Train);
        *self.params.buffers_mut_vec() = stats;
        out
    }

    /// Inference-mode main output for a batch `[N, 1, S...]`.
    pub fn predict(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let params = self.params.bind(&mut tape, false);
        let x = tape.constant(input.clone());
        let mut stats = self.params.buffers().to_vec();
        let outs = self.forward(&mut tape, &params, x, &mut stats, Mode::Eval)?;
        Ok(tape.value(outs[0]).clone())
    }

    pub fn cast<U: Float>(&self) -> ModelGraph<U> {
        ModelGraph {
            spec: self.spec,
            params: self.params.cast(),
            encoder: self.encoder.clone(),
            bottleneck: self.bottleneck.clone(),
            decoder: self.decoder.clone(),
            heads: self.heads.clone(),
        }
    }
}
