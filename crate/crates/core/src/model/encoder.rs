use crate::attention::FeatureMap;
use crate::error::{Error, Result};
use crate::nn::{Bound, Conv2d, LayerNorm, ParamBuilder};
use crate::tensor::Var;

/// Slice feature extractor geometry.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub height: usize,
    pub width: usize,
    /// Number of stride-2 stages; features are `H/2^r × W/2^r`.
    pub downsample: usize,
    /// Output channels of each stage; the last entry is `C`.
    pub channels: Vec<usize>,
    pub blocks_per_stage: usize,
}

impl EncoderConfig {
    /// Doubling schedule ending at `c`: `c/2^(r-1), …, c/2, c`.
    pub fn doubling(height: usize, width: usize, downsample: usize, c: usize) -> Self {
        let channels = (0..downsample)
            .map(|s| (c >> (downsample - 1 - s)).max(1))
            .collect();
        EncoderConfig {
            height,
            width,
            downsample,
            channels,
            blocks_per_stage: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let f = 1usize << self.downsample;
        if self.downsample == 0 || self.channels.len() != self.downsample {
            return Err(Error::config(format!(
                "encoder needs one channel count per stage ({} stages, {} counts)",
                self.downsample,
                self.channels.len()
            )));
        }
        if self.height % f != 0 || self.width % f != 0 {
            return Err(Error::config(format!(
                "input {}x{} is not divisible by 2^{}",
                self.height, self.width, self.downsample
            )));
        }
        if self.blocks_per_stage == 0 {
            return Err(Error::config("blocks_per_stage must be at least 1"));
        }
        Ok(())
    }

    pub fn feature_extent(&self) -> (usize, usize) {
        (self.height >> self.downsample, self.width >> self.downsample)
    }
}

/// conv3×3 → norm → ReLU → conv3×3 → norm, plus skip, then ReLU.
#[derive(Clone, Debug)]
pub struct ResidualBlock {
    conv1: Conv2d,
    norm1: LayerNorm,
    conv2: Conv2d,
    norm2: LayerNorm,
    skip: Option<Conv2d>,
}

impl ResidualBlock {
    pub fn new(b: &mut ParamBuilder, name: &str, in_ch: usize, out_ch: usize, stride: usize) -> Self {
        b.scope(name, |b| ResidualBlock {
            conv1: Conv2d::new(b, "conv1", in_ch, out_ch, 3, stride, 1),
            norm1: LayerNorm::new(b, "norm1", out_ch),
            conv2: Conv2d::new(b, "conv2", out_ch, out_ch, 3, 1, 1),
            norm2: LayerNorm::new(b, "norm2", out_ch),
            skip: (stride != 1 || in_ch != out_ch)
                .then(|| Conv2d::new(b, "skip", in_ch, out_ch, 1, stride, 0)),
        })
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let y = self.conv1.forward(p, x)?;
        let y = self.norm1.forward_chw(p, y)?.relu();
        let y = self.conv2.forward(p, y)?;
        let y = self.norm2.forward_chw(p, y)?;
        let s = match &self.skip {
            Some(conv) => conv.forward(p, x)?,
            None => x,
        };
        Ok(y.add(s)?.relu())
    }
}

/// Shared-weight slice encoder: `1×H×W → h×w×C`.
#[derive(Clone, Debug)]
pub struct SliceEncoder {
    pub config: EncoderConfig,
    stages: Vec<Vec<ResidualBlock>>,
}

impl SliceEncoder {
    pub fn new(b: &mut ParamBuilder, name: &str, config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let stages = b.scope(name, |b| {
            let mut in_ch = 1;
            config
                .channels
                .iter()
                .enumerate()
                .map(|(s, &out_ch)| {
                    let blocks = (0..config.blocks_per_stage)
                        .map(|i| {
                            let stride = if i == 0 { 2 } else { 1 };
                            let blk = ResidualBlock::new(b, &format!("stage{s}.block{i}"), in_ch, out_ch, stride);
                            in_ch = out_ch;
                            blk
                        })
                        .collect();
                    blocks
                })
                .collect()
        });
        Ok(SliceEncoder { config, stages })
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, slice: Var<'t>) -> Result<FeatureMap<'t>> {
        let shape = slice.shape();
        if shape != [1, self.config.height, self.config.width] {
            return Err(Error::config(format!(
                "encoder expects [1, {}, {}], got {shape:?}",
                self.config.height, self.config.width
            )));
        }
        let mut x = slice;
        for stage in &self.stages {
            for blk in stage {
                x = blk.forward(p, x)?;
            }
        }
        FeatureMap::from_chw(x)
    }
}
