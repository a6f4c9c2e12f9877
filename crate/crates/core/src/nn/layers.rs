use super::params::{Bound, ParamBuilder, ParamId};
use crate::error::{Error, Result};
use crate::tensor::Var;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// 2-D convolution with zero padding.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    pub fn new(
        b: &mut ParamBuilder,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        b.scope(name, |b| Conv2d {
            weight: b.he_uniform("weight", &[out_ch, in_ch, kernel, kernel], in_ch * kernel * kernel),
            bias: b.zeros("bias", &[out_ch]),
            in_ch,
            out_ch,
            kernel,
            stride,
            padding,
        })
    }

    /// Spatial output extent for an input extent.
    pub fn out_extent(&self, input: usize) -> usize {
        (input + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        x.conv2d(p[self.weight], p[self.bias], self.stride, self.padding)
    }
}

/// Transposed convolution; kernel layout is `[in, out, k, k]`.
#[derive(Clone, Debug)]
pub struct ConvTranspose2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvTranspose2d {
    /// The ×2 upsampling configuration: kernel 2, stride 2.
    pub fn upsample2(b: &mut ParamBuilder, name: &str, in_ch: usize, out_ch: usize) -> Self {
        b.scope(name, |b| ConvTranspose2d {
            // Each output pixel receives exactly one kernel tap per input channel.
            weight: b.he_uniform("weight", &[in_ch, out_ch, 2, 2], in_ch),
            bias: b.zeros("bias", &[out_ch]),
            in_ch,
            out_ch,
            kernel: 2,
            stride: 2,
        })
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        x.conv_transpose2d(p[self.weight], p[self.bias], self.stride)
    }
}

/// Layer normalization over the channel axis.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub scale: ParamId,
    pub shift: ParamId,
    pub channels: usize,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(b: &mut ParamBuilder, name: &str, channels: usize) -> Self {
        b.scope(name, |b| LayerNorm {
            scale: b.ones("scale", &[channels]),
            shift: b.zeros("shift", &[channels]),
            channels,
            eps: LAYER_NORM_EPS,
        })
    }

    /// Rows of an `[N, C]` matrix.
    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        x.layer_norm_rows(p[self.scale], p[self.shift], self.eps)
    }

    /// Every spatial position of a `[C, H, W]` map.
    pub fn forward_chw<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let shape = x.shape();
        let [c, h, w] = shape[..] else {
            return Err(Error::dim(format!("layer norm expects [C, H, W], got {shape:?}")));
        };
        let rows = x.reshape(&[c, h * w])?.transpose()?;
        self.forward(p, rows)?.transpose()?.reshape(&[c, h, w])
    }
}

/// Dense projection `x·W (+ b)` on `[N, in]` rows, i.e. a 1×1 convolution
/// over flattened positions.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(b: &mut ParamBuilder, name: &str, in_dim: usize, out_dim: usize, bias: bool) -> Self {
        b.scope(name, |b| Linear {
            weight: b.xavier_uniform("weight", &[in_dim, out_dim], in_dim, out_dim),
            bias: bias.then(|| b.zeros("bias", &[out_dim])),
            in_dim,
            out_dim,
        })
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let y = x.matmul(p[self.weight])?;
        match self.bias {
            Some(b) => y.add_row_bias(p[b]),
            None => Ok(y),
        }
    }
}
