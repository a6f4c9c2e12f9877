use crate::attention::FeatureMap;
use crate::error::Result;
use crate::nn::{Bound, Conv2d, ConvTranspose2d, LayerNorm, ParamBuilder};
use crate::tensor::Var;

/// ×2 transposed conv (halving channels), then a 3×3 conv branch added
/// back onto the upsampled map. Both paths have the same width, so the
/// residual needs no projection.
#[derive(Clone, Debug)]
pub struct DecoderBlock {
    up: ConvTranspose2d,
    conv: Conv2d,
    norm: LayerNorm,
}

impl DecoderBlock {
    pub fn new(b: &mut ParamBuilder, name: &str, in_ch: usize, out_ch: usize) -> Self {
        b.scope(name, |b| DecoderBlock {
            up: ConvTranspose2d::upsample2(b, "up", in_ch, out_ch),
            conv: Conv2d::new(b, "conv", out_ch, out_ch, 3, 1, 1),
            norm: LayerNorm::new(b, "norm", out_ch),
        })
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let u = self.up.forward(p, x)?;
        let v = self.conv.forward(p, u)?;
        let v = self.norm.forward_chw(p, v)?.relu();
        Ok(u.add(v)?.relu())
    }
}

/// `r` upsampling blocks and a 1×1 classification head producing logits.
#[derive(Clone, Debug)]
pub struct Decoder {
    blocks: Vec<DecoderBlock>,
    head: Conv2d,
    pub classes: usize,
}

impl Decoder {
    pub fn new(b: &mut ParamBuilder, name: &str, channels: usize, upsample: usize, classes: usize) -> Self {
        b.scope(name, |b| {
            let mut c = channels;
            let blocks = (0..upsample)
                .map(|i| {
                    let out = (c / 2).max(1);
                    let blk = DecoderBlock::new(b, &format!("block{i}"), c, out);
                    c = out;
                    blk
                })
                .collect();
            Decoder {
                blocks,
                head: Conv2d::new(b, "head", c, classes, 1, 1, 0),
                classes,
            }
        })
    }

    /// `h×w×C` features to `[K, h·2^r, w·2^r]` logits.
    pub fn forward<'t>(&self, p: &Bound<'t>, f: &FeatureMap<'t>) -> Result<Var<'t>> {
        let mut x = f.to_chw()?;
        for blk in &self.blocks {
            x = blk.forward(p, x)?;
        }
        self.head.forward(p, x)
    }
}
