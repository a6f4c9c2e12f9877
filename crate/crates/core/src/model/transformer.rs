use crate::attention::FeatureMap;
use crate::error::{Error, Result};
use crate::nn::{Bound, LayerNorm, Linear, ParamBuilder, ParamId};
use crate::tensor::Var;

#[derive(Clone, Debug, PartialEq)]
pub struct TransformerConfig {
    pub layers: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    /// Token count `hw`; one positional embedding row per token.
    pub tokens: usize,
    pub channels: usize,
}

/// Standard scaled dot-product multi-head self-attention with biases.
#[derive(Clone, Debug)]
pub struct SelfAttention {
    query: Linear,
    key: Linear,
    value: Linear,
    output: Linear,
    heads: usize,
    channels: usize,
}

impl SelfAttention {
    fn new(b: &mut ParamBuilder, name: &str, channels: usize, heads: usize) -> Self {
        b.scope(name, |b| SelfAttention {
            query: Linear::new(b, "query", channels, channels, true),
            key: Linear::new(b, "key", channels, channels, true),
            value: Linear::new(b, "value", channels, channels, true),
            output: Linear::new(b, "output", channels, channels, true),
            heads,
            channels,
        })
    }

    fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let d = self.channels / self.heads;
        let scale = 1.0 / (d as f64).sqrt();
        let q = self.query.forward(p, x)?;
        let k = self.key.forward(p, x)?;
        let v = self.value.forward(p, x)?;
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let r = h * d..(h + 1) * d;
            let (qh, kh, vh) = (q.slice(1, r.clone())?, k.slice(1, r.clone())?, v.slice(1, r)?);
            let a = qh.matmul(kh.transpose()?)?.mul_scalar(scale).softmax_rows()?;
            outs.push(a.matmul(vh)?);
        }
        self.output.forward(p, Var::concat(&outs, 1)?)
    }
}

/// Pre-norm block: `x + MHSA(LN(x))`, then `x + MLP(LN(x))` with GELU.
#[derive(Clone, Debug)]
pub struct TransformerBlock {
    norm1: LayerNorm,
    attn: SelfAttention,
    norm2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
}

impl TransformerBlock {
    pub fn new(b: &mut ParamBuilder, name: &str, cfg: &TransformerConfig) -> Self {
        let c = cfg.channels;
        b.scope(name, |b| TransformerBlock {
            norm1: LayerNorm::new(b, "norm1", c),
            attn: SelfAttention::new(b, "attn", c, cfg.heads),
            norm2: LayerNorm::new(b, "norm2", c),
            fc1: Linear::new(b, "fc1", c, cfg.mlp_ratio * c, true),
            fc2: Linear::new(b, "fc2", cfg.mlp_ratio * c, c, true),
        })
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let a = self.attn.forward(p, self.norm1.forward(p, x)?)?;
        let x = x.add(a)?;
        let m = self.fc1.forward(p, self.norm2.forward(p, x)?)?.gelu();
        x.add(self.fc2.forward(p, m)?)
    }
}

/// Transformer over `1×1` patches (one token per feature position).
#[derive(Clone, Debug)]
pub struct VisionTransformer {
    pub config: TransformerConfig,
    pub positions: ParamId,
    blocks: Vec<TransformerBlock>,
}

impl VisionTransformer {
    pub fn new(b: &mut ParamBuilder, name: &str, config: TransformerConfig) -> Result<Self> {
        if config.heads == 0 || config.channels % config.heads != 0 {
            return Err(Error::config(format!(
                "transformer width {} is not divisible by {} heads",
                config.channels, config.heads
            )));
        }
        let (positions, blocks) = b.scope(name, |b| {
            let pos = b.normal("positions", &[config.tokens, config.channels], 0.02);
            let blocks = (0..config.layers)
                .map(|i| TransformerBlock::new(b, &format!("block{i}"), &config))
                .collect();
            (pos, blocks)
        });
        Ok(VisionTransformer {
            config,
            positions,
            blocks,
        })
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, f: &FeatureMap<'t>) -> Result<FeatureMap<'t>> {
        if f.positions() != self.config.tokens || f.channels() != self.config.channels {
            return Err(Error::config(format!(
                "transformer built for {} tokens of width {}, got {} of width {}",
                self.config.tokens,
                self.config.channels,
                f.positions(),
                f.channels()
            )));
        }
        let mut x = f.tokens.add(p[self.positions])?;
        for blk in &self.blocks {
            x = blk.forward(p, x)?;
        }
        FeatureMap::new(x, f.h, f.w)
    }
}
