//! CSA-Net: shared slice encoder → cross/in-slice attention → aggregation →
//! 1×1-patch transformer → upsampling decoder.

mod decoder;
mod encoder;
mod loss;
mod transformer;

pub use decoder::{Decoder, DecoderBlock};
pub use encoder::{EncoderConfig, ResidualBlock, SliceEncoder};
pub use loss::{compute_loss, one_hot, Loss, LossWeights};
pub use transformer::{TransformerBlock, TransformerConfig, VisionTransformer};

use crate::attention::{AttentionAggregator, CrossSliceAttention, FeatureMap, InSliceAttention};
use crate::error::{Error, Result};
use crate::nn::{Bound, ParamBuilder, ParamStore};
use crate::tensor::{Tape, Tensor, Var};
use std::fmt;
use std::str::FromStr;

/// Which side of the cross-slice attention the center slice plays.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum CenterRole {
    /// Center supplies key and value; the neighbor supplies the query.
    #[default]
    KeyValue,
    /// Center supplies the query.
    Query,
}

impl fmt::Display for CenterRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CenterRole::KeyValue => "keyvalue",
            CenterRole::Query => "query",
        })
    }
}

impl FromStr for CenterRole {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "keyvalue" => Ok(CenterRole::KeyValue),
            "query" => Ok(CenterRole::Query),
            other => Err(Error::config(format!(
                "center role must be keyvalue or query, got {other:?}"
            ))),
        }
    }
}

/// Architecture hyper-parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Square input extent `H = W`.
    pub image_size: usize,
    pub downsample: usize,
    pub channels: usize,
    pub heads: usize,
    pub layers: usize,
    pub classes: usize,
    pub blocks_per_stage: usize,
    pub use_csa: bool,
    pub use_isa: bool,
    pub center_role: CenterRole,
    pub attn_scaling: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            image_size: 256,
            downsample: 4,
            channels: 64,
            heads: 4,
            layers: 2,
            classes: 2,
            blocks_per_stage: 1,
            use_csa: true,
            use_isa: true,
            center_role: CenterRole::KeyValue,
            attn_scaling: false,
        }
    }
}

impl ModelConfig {
    pub fn encoder(&self) -> EncoderConfig {
        let mut e = EncoderConfig::doubling(self.image_size, self.image_size, self.downsample, self.channels);
        e.blocks_per_stage = self.blocks_per_stage;
        e
    }

    pub fn transformer(&self) -> TransformerConfig {
        let h = self.image_size >> self.downsample;
        TransformerConfig {
            layers: self.layers,
            heads: self.heads,
            mlp_ratio: 4,
            tokens: h * h,
            channels: self.channels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder().validate()?;
        if self.heads == 0 || self.channels % (2 * self.heads) != 0 {
            return Err(Error::config(format!(
                "channels {} must be divisible by 2 × heads ({})",
                self.channels, self.heads
            )));
        }
        if self.classes < 2 || self.classes > 256 {
            return Err(Error::config(format!("classes must be in [2, 256], got {}", self.classes)));
        }
        Ok(())
    }
}

/// Prefixes of the parameter groups, in construction order.
pub const PARAM_GROUPS: [&str; 8] = [
    "encoder", "csa_prev", "csa_next", "isa", "aggregate", "vit", "decoder", "head",
];

/// The [`PARAM_GROUPS`] entry a parameter name belongs to.
pub fn param_group(name: &str) -> Option<&'static str> {
    if name.starts_with("decoder.head.") {
        return Some("head");
    }
    let prefix = name.split('.').next()?;
    PARAM_GROUPS.iter().copied().find(|g| *g == prefix && *g != "head")
}

/// Three slices of one triplet, each `[1, H, W]`.
#[derive(Clone, Debug)]
pub struct TripletInput {
    pub prev: Tensor,
    pub center: Tensor,
    pub next: Tensor,
}

/// Intermediate feature maps of one forward pass.
pub struct ForwardTrace<'t> {
    pub f_prev: FeatureMap<'t>,
    pub f_center: FeatureMap<'t>,
    pub f_next: FeatureMap<'t>,
    pub a_prev: FeatureMap<'t>,
    pub a_self: FeatureMap<'t>,
    pub a_next: FeatureMap<'t>,
    pub aggregated: FeatureMap<'t>,
    pub encoded: FeatureMap<'t>,
    pub logits: Var<'t>,
}

/// Layer structure with parameter handles; values live in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct CsaNet {
    pub config: ModelConfig,
    pub encoder: SliceEncoder,
    pub csa_prev: CrossSliceAttention,
    pub csa_next: CrossSliceAttention,
    pub isa: InSliceAttention,
    pub aggregate: AttentionAggregator,
    pub vit: VisionTransformer,
    pub decoder: Decoder,
}

impl CsaNet {
    /// Builds the architecture and its seeded initial parameters.
    pub fn new(config: ModelConfig, seed: u64) -> Result<(Self, ParamStore)> {
        config.validate()?;
        let c = config.channels;
        let mut b = ParamBuilder::new(seed);
        let encoder = SliceEncoder::new(&mut b, "encoder", config.encoder())?;
        let scaled = config.attn_scaling;
        let csa_prev = CrossSliceAttention::new(&mut b, "csa_prev", c, config.heads, scaled)?;
        let csa_next = CrossSliceAttention::new(&mut b, "csa_next", c, config.heads, scaled)?;
        let isa = InSliceAttention::new(&mut b, "isa", c, config.heads, scaled)?;
        let aggregate = AttentionAggregator::new(&mut b, "aggregate", c);
        let vit = VisionTransformer::new(&mut b, "vit", config.transformer())?;
        let decoder = Decoder::new(&mut b, "decoder", c, config.downsample, config.classes);
        let net = CsaNet {
            config,
            encoder,
            csa_prev,
            csa_next,
            isa,
            aggregate,
            vit,
            decoder,
        };
        Ok((net, b.finish()))
    }

    /// Flags, per parameter, whether training may update it. Disabled
    /// attention modules are frozen.
    pub fn trainable_mask(&self, store: &ParamStore) -> Vec<bool> {
        store
            .names()
            .iter()
            .map(|n| {
                let csa = n.starts_with("csa_prev.") || n.starts_with("csa_next.");
                let isa = n.starts_with("isa.");
                !(csa && !self.config.use_csa) && !(isa && !self.config.use_isa)
            })
            .collect()
    }

    fn cross<'t>(
        &self,
        module: &CrossSliceAttention,
        p: &Bound<'t>,
        center: &FeatureMap<'t>,
        neighbor: &FeatureMap<'t>,
    ) -> Result<FeatureMap<'t>> {
        match self.config.center_role {
            CenterRole::KeyValue => module.forward(p, center, neighbor),
            CenterRole::Query => module.forward(p, neighbor, center),
        }
    }

    fn zero_map<'t>(tape: &'t Tape, like: &FeatureMap<'t>) -> Result<FeatureMap<'t>> {
        let z = tape.constant(Tensor::zeros(&[like.positions(), like.channels()]));
        FeatureMap::new(z, like.h, like.w)
    }

    /// Full forward pass, returning every intermediate map.
    pub fn forward_trace<'t>(
        &self,
        tape: &'t Tape,
        p: &Bound<'t>,
        input: &TripletInput,
    ) -> Result<ForwardTrace<'t>> {
        let s = input.center.shape();
        if input.prev.shape() != s || input.next.shape() != s {
            return Err(Error::input(format!(
                "triplet slices differ in extent: {:?} / {:?} / {:?}",
                input.prev.shape(),
                s,
                input.next.shape()
            )));
        }
        let f_prev = self.encoder.forward(p, tape.constant(input.prev.clone()))?;
        let f_center = self.encoder.forward(p, tape.constant(input.center.clone()))?;
        let f_next = self.encoder.forward(p, tape.constant(input.next.clone()))?;

        let (a_prev, a_next) = if self.config.use_csa {
            (
                self.cross(&self.csa_prev, p, &f_center, &f_prev)?,
                self.cross(&self.csa_next, p, &f_center, &f_next)?,
            )
        } else {
            let z = Self::zero_map(tape, &f_center)?;
            (z, z)
        };
        let a_self = if self.config.use_isa {
            self.isa.forward(p, &f_center)?
        } else {
            Self::zero_map(tape, &f_center)?
        };
        let aggregated = self
            .aggregate
            .forward(p, &a_prev, &a_self, &a_next, &f_center)?;
        let encoded = self.vit.forward(p, &aggregated)?;
        let logits = self.decoder.forward(p, &encoded)?;
        Ok(ForwardTrace {
            f_prev,
            f_center,
            f_next,
            a_prev,
            a_self,
            a_next,
            aggregated,
            encoded,
            logits,
        })
    }

    /// `[K, H, W]` logits for the center slice.
    pub fn forward<'t>(&self, tape: &'t Tape, p: &Bound<'t>, input: &TripletInput) -> Result<Var<'t>> {
        Ok(self.forward_trace(tape, p, input)?.logits)
    }

    /// Inference without gradient bookkeeping.
    pub fn predict_logits(&self, store: &ParamStore, input: &TripletInput) -> Result<Tensor> {
        let tape = Tape::new();
        let p = store.bind_frozen(&tape);
        Ok(self.forward(&tape, &p, input)?.value())
    }
}

/// Per-pixel argmax over the class axis of `[K, H, W]` logits.
pub fn argmax_labels(logits: &Tensor) -> Vec<u8> {
    let (k, n) = (logits.shape()[0], logits.len() / logits.shape()[0]);
    (0..n)
        .map(|i| {
            let mut best = 0;
            for c in 1..k {
                if logits.data()[c * n + i] > logits.data()[best * n + i] {
                    best = c;
                }
            }
            best as u8
        })
        .collect()
}
