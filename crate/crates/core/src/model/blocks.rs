use rand::Rng;

use super::params::{BatchNormLayer, Builder, ConvLayer, Ctx};
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::tensor::Float;

/// Pyramid squeeze-and-excitation: channel weights from 1-, 2- and 3-cell
/// pooled grids, each rescaling the input, fused back to `C` channels.
#[derive(Clone, Debug)]
pub struct PseBlock {
    /// Branch convolutions with kernel side 1, 2, 3 (no padding).
    pub branches: [ConvLayer; 3],
    pub fuse: ConvLayer,
    pub norm: BatchNormLayer,
}

/// Intermediate values of one PSE pass.
#[derive(Clone, Copy, Debug)]
pub struct PseTrace {
    /// Sigmoid channel weights per branch, `[N, C, 1...]`.
    pub weights: [Var; 3],
    /// The input rescaled by each branch.
    pub weighted: [Var; 3],
    pub output: Var,
}

impl PseBlock {
    pub const GRIDS: [usize; 3] = [1, 2, 3];

    pub fn new<T: Float, R: Rng>(b: &mut Builder<'_, T, R>, name: &str, channels: usize) -> Result<Self> {
        let branches = [
            b.conv(&format!("{name}.branch1"), channels, channels, 1, false)?,
            b.conv(&format!("{name}.branch2"), channels, channels, 2, false)?,
            b.conv(&format!("{name}.branch3"), channels, channels, 3, false)?,
        ];
        let fuse = b.conv(&format!("{name}.fuse"), 3 * channels, channels, 3, true)?;
        let norm = b.batch_norm(&format!("{name}.bn"), channels)?;
        Ok(Self { branches, fuse, norm })
    }

    pub fn forward<T: Float>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        Ok(self.forward_traced(ctx, x)?.output)
    }

    pub fn forward_traced<T: Float>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<PseTrace> {
        let shape = ctx.tape.value(x).shape().to_vec();
        if let Some(axis) = (2..shape.len()).find(|&a| shape[a] < 3) {
            return Err(Error::shape(axis, format!("PSE needs spatial extent >= 3, got {}", shape[axis])));
        }
        let mut weights = [x; 3];
        let mut weighted = [x; 3];
        for (i, (conv, grid)) in self.branches.iter().zip(Self::GRIDS).enumerate() {
            let pooled = ctx.tape.adaptive_avg_pool(x, &[grid])?;
            let logits = conv.forward(ctx, pooled)?;
            weights[i] = ctx.tape.sigmoid(logits)?;
            weighted[i] = ctx.tape.channel_scale(x, weights[i])?;
        }
        let cat = ctx.tape.concat(&weighted)?;
        let fused = self.fuse.forward(ctx, cat)?;
        let output = self.norm.forward(ctx, fused)?;
        Ok(PseTrace {
            weights,
            weighted,
            output,
        })
    }
}

/// Squeeze-and-excitation with a `C / reduction` bottleneck.
#[derive(Clone, Debug)]
pub struct SeBlock {
    pub squeeze: ConvLayer,
    pub excite: ConvLayer,
}

impl SeBlock {
    pub const REDUCTION: usize = 4;

    pub fn new<T: Float, R: Rng>(
        b: &mut Builder<'_, T, R>,
        name: &str,
        channels: usize,
        reduction: usize,
    ) -> Result<Self> {
        if reduction == 0 || channels % reduction != 0 {
            return Err(Error::arg(format!(
                "SE block: {channels} channels not divisible by reduction {reduction}"
            )));
        }
        let hidden = channels / reduction;
        Ok(Self {
            squeeze: b.conv(&format!("{name}.squeeze"), channels, hidden, 1, false)?,
            excite: b.conv(&format!("{name}.excite"), hidden, channels, 1, false)?,
        })
    }

    pub fn forward<T: Float>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let pooled = ctx.tape.adaptive_avg_pool(x, &[1])?;
        let h = self.squeeze.forward(ctx, pooled)?;
        let h = ctx.tape.relu(h)?;
        let h = self.excite.forward(ctx, h)?;
        let w = ctx.tape.sigmoid(h)?;
        ctx.tape.channel_scale(x, w)
    }
}

#[derive(Clone, Debug)]
pub enum Attention {
    Se(SeBlock),
    Pse(PseBlock),
}

/// Two rounds of conv 3×3 → batch norm → relu, optionally followed by an
/// attention block.
#[derive(Clone, Debug)]
pub struct ConvBlock {
    pub layers: [(ConvLayer, BatchNormLayer); 2],
    pub attention: Option<Attention>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionKind {
    None,
    Se,
    Pse,
}

impl ConvBlock {
    pub fn new<T: Float, R: Rng>(
        b: &mut Builder<'_, T, R>,
        name: &str,
        c_in: usize,
        c_out: usize,
        attention: AttentionKind,
    ) -> Result<Self> {
        let layers = [
            (
                b.conv(&format!("{name}.conv1"), c_in, c_out, 3, true)?,
                b.batch_norm(&format!("{name}.bn1"), c_out)?,
            ),
            (
                b.conv(&format!("{name}.conv2"), c_out, c_out, 3, true)?,
                b.batch_norm(&format!("{name}.bn2"), c_out)?,
            ),
        ];
        let attention = match attention {
            AttentionKind::None => None,
            AttentionKind::Se => Some(Attention::Se(SeBlock::new(
                b,
                &format!("{name}.se"),
                c_out,
                SeBlock::REDUCTION,
            )?)),
            AttentionKind::Pse => Some(Attention::Pse(PseBlock::new(b, &format!("{name}.pse"), c_out)?)),
        };
        Ok(Self { layers, attention })
    }

    pub fn forward<T: Float>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let mut h = x;
        for (conv, bn) in &self.layers {
            h = conv.forward(ctx, h)?;
            h = bn.forward(ctx, h)?;
            h = ctx.tape.relu(h)?;
        }
        match &self.attention {
            None => Ok(h),
            Some(Attention::Se(se)) => se.forward(ctx, h),
            Some(Attention::Pse(pse)) => pse.forward(ctx, h),
        }
    }
}

/// Coarse-to-fine decoder stage. The upsampled deeper features are reduced
/// to the encoder width and subtracted from the encoder features; the signed
/// residual is concatenated with the ordinary decoder output and refined.
#[derive(Clone, Debug)]
pub struct CfStage {
    pub reduce: ConvLayer,
    pub reduce_norm: BatchNormLayer,
    pub conventional: ConvBlock,
    pub refine: ConvBlock,
}

/// Intermediate values of one coarse-to-fine pass.
#[derive(Clone, Copy, Debug)]
pub struct CfTrace {
    pub expanded: Var,
    pub reduced: Var,
    /// Positive where the encoder response exceeds the coarse prediction
    /// (missed structure), negative where it falls short (spurious).
    pub residual: Var,
    pub conventional: Var,
    pub output: Var,
}

impl CfStage {
    pub fn new<T: Float, R: Rng>(
        b: &mut Builder<'_, T, R>,
        name: &str,
        c_enc: usize,
        c_deep: usize,
        refine_attention: AttentionKind,
    ) -> Result<Self> {
        Ok(Self {
            reduce: b.conv(&format!("{name}.reduce"), c_deep, c_enc, 3, true)?,
            reduce_norm: b.batch_norm(&format!("{name}.reduce_bn"), c_enc)?,
            conventional: ConvBlock::new(
                b,
                &format!("{name}.conventional"),
                c_enc + c_deep,
                c_enc,
                AttentionKind::None,
            )?,
            refine: ConvBlock::new(b, &format!("{name}.refine"), 2 * c_enc, c_enc, refine_attention)?,
        })
    }

    pub fn forward<T: Float>(&self, ctx: &mut Ctx<'_, T>, encoder: Var, deeper: Var) -> Result<Var> {
        Ok(self.forward_traced(ctx, encoder, deeper)?.output)
    }

    pub fn forward_traced<T: Float>(&self, ctx: &mut Ctx<'_, T>, encoder: Var, deeper: Var) -> Result<CfTrace> {
        check_ratio(ctx.tape.value(encoder).shape(), ctx.tape.value(deeper).shape())?;
        let expanded = ctx.tape.upsample_linear(deeper)?;
        let reduced = self.reduce.forward(ctx, expanded)?;
        let reduced = self.reduce_norm.forward(ctx, reduced)?;
        let residual = ctx.tape.sub(encoder, reduced)?;
        let joined = ctx.tape.concat(&[encoder, expanded])?;
        let conventional = self.conventional.forward(ctx, joined)?;
        let both = ctx.tape.concat(&[residual, conventional])?;
        let output = self.refine.forward(ctx, both)?;
        Ok(CfTrace {
            expanded,
            reduced,
            residual,
            conventional,
            output,
        })
    }
}

/// Plain U-Net decoder stage: upsample, concatenate with the skip, conv block.
#[derive(Clone, Debug)]
pub struct PlainStage {
    pub block: ConvBlock,
}

impl PlainStage {
    pub fn forward<T: Float>(&self, ctx: &mut Ctx<'_, T>, encoder: Var, deeper: Var) -> Result<Var> {
        check_ratio(ctx.tape.value(encoder).shape(), ctx.tape.value(deeper).shape())?;
        let expanded = ctx.tape.upsample_linear(deeper)?;
        let joined = ctx.tape.concat(&[encoder, expanded])?;
        self.block.forward(ctx, joined)
    }
}

#[derive(Clone, Debug)]
pub enum DecoderStage {
    Plain(PlainStage),
    CoarseToFine(CfStage),
}

impl DecoderStage {
    pub fn forward<T: Float>(&self, ctx: &mut Ctx<'_, T>, encoder: Var, deeper: Var) -> Result<Var> {
        match self {
            DecoderStage::Plain(s) => s.forward(ctx, encoder, deeper),
            DecoderStage::CoarseToFine(s) => s.forward(ctx, encoder, deeper),
        }
    }
}

fn check_ratio(encoder: &[usize], deeper: &[usize]) -> Result<()> {
    if encoder.len() != deeper.len() {
        return Err(Error::shape(0, "encoder and deeper features differ in rank"));
    }
    if encoder[0] != deeper[0] {
        return Err(Error::shape(0, "encoder and deeper features differ in batch size"));
    }
    for a in 2..encoder.len() {
        if encoder[a] != 2 * deeper[a] {
            return Err(Error::shape(
                a,
                format!("encoder extent {} is not twice deeper extent {}", encoder[a], deeper[a]),
            ));
        }
    }
    Ok(())
}
