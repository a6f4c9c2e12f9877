//! Pixel-level attention between slice feature maps.
//!
//! Cross-slice attention takes its query from a neighboring slice and its
//! key/value pair from the center slice:
//!
//! ```text
//! CSA(f_c, f_n) = softmax((f_n·W_θ)(f_c·W_φ)ᵀ) (f_c·W_ψ) · W_g
//! ```
//!
//! In-slice attention is the same computation with all three projections
//! taken from the center slice. Feature maps are flattened to `hw × C`
//! token matrices, so the attention map is `hw × hw` and each softmax row
//! normalizes one query position over all key positions. With `k` heads
//! the `C/2` projection width is split into `k` blocks of `C/(2k)`.

use crate::error::{Error, Result};
use crate::nn::{Bound, Linear, ParamBuilder};
use crate::tensor::Var;

/// An `h × w × C` feature map stored as an `hw × C` token matrix.
#[derive(Clone, Copy, Debug)]
pub struct FeatureMap<'t> {
    pub h: usize,
    pub w: usize,
    pub tokens: Var<'t>,
}

impl<'t> FeatureMap<'t> {
    pub fn new(tokens: Var<'t>, h: usize, w: usize) -> Result<Self> {
        let shape = tokens.shape();
        if shape.len() != 2 || shape[0] != h * w {
            return Err(Error::dim(format!(
                "feature map {h}x{w} needs {} token rows, got {shape:?}",
                h * w
            )));
        }
        Ok(FeatureMap { h, w, tokens })
    }

    /// From a channel-first `[C, h, w]` map.
    pub fn from_chw(x: Var<'t>) -> Result<Self> {
        let shape = x.shape();
        let [c, h, w] = shape[..] else {
            return Err(Error::dim(format!("expected [C, h, w], got {shape:?}")));
        };
        let tokens = x.reshape(&[c, h * w])?.transpose()?;
        Ok(FeatureMap { h, w, tokens })
    }

    /// Back to channel-first `[C, h, w]`.
    pub fn to_chw(&self) -> Result<Var<'t>> {
        let c = self.channels();
        self.tokens.transpose()?.reshape(&[c, self.h, self.w])
    }

    pub fn channels(&self) -> usize {
        self.tokens.shape()[1]
    }

    pub fn positions(&self) -> usize {
        self.h * self.w
    }

    fn same_extent(&self, other: &FeatureMap<'_>) -> bool {
        self.h == other.h && self.w == other.w && self.channels() == other.channels()
    }
}

/// Query/key/value projections `C → C/2` and output projection `C/2 → C`.
#[derive(Clone, Debug)]
pub struct AttentionProjections {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub channels: usize,
    pub heads: usize,
    /// Divide scores by `√d`. Off unless asked for.
    pub scaled: bool,
}

impl AttentionProjections {
    pub fn new(b: &mut ParamBuilder, name: &str, channels: usize, heads: usize, scaled: bool) -> Result<Self> {
        if heads == 0 || channels % (2 * heads) != 0 {
            return Err(Error::config(format!(
                "{channels} channels cannot be split into {heads} heads of width C/(2k)"
            )));
        }
        let half = channels / 2;
        Ok(b.scope(name, |b| AttentionProjections {
            query: Linear::new(b, "query", channels, half, false),
            key: Linear::new(b, "key", channels, half, false),
            value: Linear::new(b, "value", channels, half, false),
            output: Linear::new(b, "output", half, channels, false),
            channels,
            heads,
            scaled,
        }))
    }

    pub fn head_width(&self) -> usize {
        self.channels / (2 * self.heads)
    }

    fn check(&self, maps: &[&FeatureMap<'_>]) -> Result<()> {
        for m in maps {
            if m.channels() != self.channels {
                return Err(Error::config(format!(
                    "attention built for {} channels, feature map has {}",
                    self.channels,
                    m.channels()
                )));
            }
            if !m.same_extent(maps[0]) {
                return Err(Error::dim(format!(
                    "feature maps differ: {}x{}x{} vs {}x{}x{}",
                    maps[0].h,
                    maps[0].w,
                    maps[0].channels(),
                    m.h,
                    m.w,
                    m.channels()
                )));
            }
        }
        Ok(())
    }

    /// Per-head attention maps (each `hw × hw`) for a query source and a
    /// key/value source.
    pub fn attention_maps<'t>(
        &self,
        p: &Bound<'t>,
        query_src: &FeatureMap<'t>,
        kv_src: &FeatureMap<'t>,
    ) -> Result<Vec<Var<'t>>> {
        self.check(&[query_src, kv_src])?;
        let q = self.query.forward(p, query_src.tokens)?;
        let k = self.key.forward(p, kv_src.tokens)?;
        (0..self.heads)
            .map(|h| self.head_scores(q, k, h)?.softmax_rows())
            .collect()
    }

    fn head_scores<'t>(&self, q: Var<'t>, k: Var<'t>, head: usize) -> Result<Var<'t>> {
        let d = self.head_width();
        let cols = head * d..(head + 1) * d;
        let (qh, kh) = if self.heads == 1 {
            (q, k)
        } else {
            (q.slice(1, cols.clone())?, k.slice(1, cols)?)
        };
        let scores = qh.matmul(kh.transpose()?)?;
        Ok(if self.scaled {
            scores.mul_scalar(1.0 / (d as f64).sqrt())
        } else {
            scores
        })
    }

    fn attend<'t>(
        &self,
        p: &Bound<'t>,
        query_src: &FeatureMap<'t>,
        kv_src: &FeatureMap<'t>,
    ) -> Result<FeatureMap<'t>> {
        self.check(&[query_src, kv_src])?;
        let d = self.head_width();
        let q = self.query.forward(p, query_src.tokens)?;
        let k = self.key.forward(p, kv_src.tokens)?;
        let v = self.value.forward(p, kv_src.tokens)?;
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let a = self.head_scores(q, k, h)?.softmax_rows()?;
            let vh = if self.heads == 1 {
                v
            } else {
                v.slice(1, h * d..(h + 1) * d)?
            };
            outs.push(a.matmul(vh)?);
        }
        let joined = if outs.len() == 1 {
            outs[0]
        } else {
            Var::concat(&outs, 1)?
        };
        let tokens = self.output.forward(p, joined)?;
        FeatureMap::new(tokens, query_src.h, query_src.w)
    }
}

/// Cross-slice attention: query from the neighbor, key/value from the center.
#[derive(Clone, Debug)]
pub struct CrossSliceAttention {
    pub proj: AttentionProjections,
}

impl CrossSliceAttention {
    pub fn new(b: &mut ParamBuilder, name: &str, channels: usize, heads: usize, scaled: bool) -> Result<Self> {
        Ok(CrossSliceAttention {
            proj: AttentionProjections::new(b, name, channels, heads, scaled)?,
        })
    }

    pub fn forward<'t>(
        &self,
        p: &Bound<'t>,
        center: &FeatureMap<'t>,
        neighbor: &FeatureMap<'t>,
    ) -> Result<FeatureMap<'t>> {
        self.proj.attend(p, neighbor, center)
    }
}

/// In-slice self-attention over the center slice.
#[derive(Clone, Debug)]
pub struct InSliceAttention {
    pub proj: AttentionProjections,
}

impl InSliceAttention {
    pub fn new(b: &mut ParamBuilder, name: &str, channels: usize, heads: usize, scaled: bool) -> Result<Self> {
        Ok(InSliceAttention {
            proj: AttentionProjections::new(b, name, channels, heads, scaled)?,
        })
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, center: &FeatureMap<'t>) -> Result<FeatureMap<'t>> {
        self.proj.attend(p, center, center)
    }
}

/// Concatenates `(a_prev, a_self, a_next, f_c)` along channels and projects
/// `4C → C`.
#[derive(Clone, Debug)]
pub struct AttentionAggregator {
    pub proj: Linear,
    pub channels: usize,
}

impl AttentionAggregator {
    pub fn new(b: &mut ParamBuilder, name: &str, channels: usize) -> Self {
        AttentionAggregator {
            proj: Linear::new(b, name, 4 * channels, channels, true),
            channels,
        }
    }

    pub fn forward<'t>(
        &self,
        p: &Bound<'t>,
        prev: &FeatureMap<'t>,
        own: &FeatureMap<'t>,
        next: &FeatureMap<'t>,
        center: &FeatureMap<'t>,
    ) -> Result<FeatureMap<'t>> {
        for m in [prev, own, next] {
            if !m.same_extent(center) {
                return Err(Error::dim(format!(
                    "aggregate: {}x{}x{} vs center {}x{}x{}",
                    m.h,
                    m.w,
                    m.channels(),
                    center.h,
                    center.w,
                    center.channels()
                )));
            }
        }
        if center.channels() != self.channels {
            return Err(Error::dim(format!(
                "aggregate built for {} channels, got {}",
                self.channels,
                center.channels()
            )));
        }
        let joined = Var::concat(&[prev.tokens, own.tokens, next.tokens, center.tokens], 1)?;
        FeatureMap::new(self.proj.forward(p, joined)?, center.h, center.w)
    }
}
