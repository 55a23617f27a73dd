//! The multi-modal tumor segmentation network and its comparison topologies.
//!
//! All variants are built from the same U-shaped branch: two 3×3×3 conv+ReLU
//! layers per scale, 2× max pooling down, nearest upsampling followed by
//! concatenation with the same-scale skip on the way up, and a 1×1×1 head.
//! Channels double at each coarser scale.
//!
//! * [`Variant::Mmtsn`]: sub-branches for WT (T2, Flair), TC (T1, T1c) and
//!   ET (T1c) plus a main branch on all four modalities. After each encoder
//!   scale the main branch fuses its own features with the three same-scale
//!   sub-branch encoder features through a spatial-channel fusion block.
//! * [`Variant::MmtsnNoScfb`]: same topology, fusion is concat + 3×3×3 conv.
//! * [`Variant::UnetPre`]: a single U-shape on the 4-channel input.
//! * [`Variant::UnetPost`]: one U-shape per modality, logits summed before softmax.

mod forward;
mod scfb;

use std::collections::HashMap;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phantom::Modality;
use crate::tensor::{ConvParams, Tensor};

pub use forward::ForwardOutputs;
pub use scfb::{scfb, scfb_traced, ScfbParams, ScfbTrace};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Mmtsn,
    UnetPre,
    UnetPost,
    MmtsnNoScfb,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Mmtsn, Variant::UnetPre, Variant::UnetPost, Variant::MmtsnNoScfb];

    pub fn has_branches(self) -> bool {
        matches!(self, Variant::Mmtsn | Variant::MmtsnNoScfb)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Mmtsn => "mmtsn",
            Variant::UnetPre => "unet_pre",
            Variant::UnetPost => "unet_post",
            Variant::MmtsnNoScfb => "mmtsn_no_scfb",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Number of resolution scales per U-shape.
    pub depth: usize,
    /// Feature channels at the finest scale.
    pub base_channels: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::Mmtsn,
            depth: 3,
            base_channels: 8,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 2 {
            return Err(Error::Config(format!("depth must be ≥ 2, got {}", self.depth)));
        }
        if self.base_channels < 2 {
            return Err(Error::Config(format!(
                "base_channels must be ≥ 2, got {}",
                self.base_channels
            )));
        }
        Ok(())
    }

    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Spatial extents must be divisible by this factor.
    pub fn extent_multiple(&self) -> usize {
        1 << (self.depth - 1)
    }
}

/// Input modalities and size of one U-shaped branch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BranchSpec {
    pub name: &'static str,
    pub input_modalities: Vec<Modality>,
    pub depth: usize,
    pub base_channels: usize,
    pub out_channels: usize,
}

pub const CLASSES: usize = crate::phantom::NUM_CLASSES;

impl ModelConfig {
    pub fn branch_specs(&self) -> Vec<BranchSpec> {
        let spec = |name, input_modalities: &[Modality], out_channels| BranchSpec {
            name,
            input_modalities: input_modalities.to_vec(),
            depth: self.depth,
            base_channels: self.base_channels,
            out_channels,
        };
        use Modality::*;
        match self.variant {
            Variant::Mmtsn | Variant::MmtsnNoScfb => vec![
                spec("wt", &[T2, Flair], 1),
                spec("tc", &[T1, T1c], 1),
                spec("et", &[T1c], 1),
                spec("bt", &Modality::ALL, CLASSES),
            ],
            Variant::UnetPre => vec![spec("bt", &Modality::ALL, CLASSES)],
            Variant::UnetPost => vec![
                spec("t1", &[T1], CLASSES),
                spec("t1c", &[T1c], CLASSES),
                spec("t2", &[T2], CLASSES),
                spec("flair", &[Flair], CLASSES),
            ],
        }
    }

    /// Every parameter name with its shape, in initialization order.
    pub fn declare_parameters(&self) -> Vec<(String, Vec<usize>)> {
        let mut decls = Vec::new();
        let mut conv = |name: String, in_c: usize, out_c: usize, k: usize| {
            decls.push((format!("{name}.weight"), vec![out_c, in_c, k, k, k]));
            decls.push((format!("{name}.bias"), vec![out_c]));
        };
        for branch in self.branch_specs() {
            let p = branch.name;
            let mut prev = branch.input_modalities.len();
            for l in 0..self.depth {
                let c = self.channels(l);
                conv(format!("{p}.enc{l}.conv1"), prev, c, 3);
                conv(format!("{p}.enc{l}.conv2"), c, c, 3);
                prev = c;
                if p == "bt" && self.variant.has_branches() {
                    let cat = 4 * c;
                    if self.variant == Variant::Mmtsn {
                        conv(format!("{p}.fuse{l}.channel_reduce"), cat, cat / 4, 1);
                        conv(format!("{p}.fuse{l}.channel_expand"), cat / 4, cat, 1);
                        conv(format!("{p}.fuse{l}.spatial"), cat, 1, 1);
                    }
                    conv(format!("{p}.fuse{l}.out"), cat, c, 3);
                }
            }
            for l in (0..self.depth - 1).rev() {
                let c = self.channels(l);
                conv(format!("{p}.dec{l}.conv1"), self.channels(l + 1) + c, c, 3);
                conv(format!("{p}.dec{l}.conv2"), c, c, 3);
            }
            conv(format!("{p}.head"), self.channels(0), branch.out_channels, 1);
        }
        decls
    }
}

/// A model variant with its named parameters.
#[derive(Clone, Debug)]
pub struct ModelGraph {
    config: ModelConfig,
    params: Vec<(String, Tensor)>,
    index: HashMap<String, usize>,
}

impl ModelGraph {
    /// He-normal kernels (`std = sqrt(2 / fan_in)`) and zero biases, drawn in
    /// declaration order from a ChaCha8 stream seeded with `seed`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = config
            .declare_parameters()
            .into_iter()
            .map(|(name, shape)| {
                let n: usize = shape.iter().product();
                let values = if shape.len() == 5 {
                    let fan_in = (shape[1] * shape[2] * shape[3] * shape[4]) as f64;
                    let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
                    (0..n).map(|_| normal.sample(&mut rng) as f32).collect()
                } else {
                    vec![0.0; n]
                };
                Ok((name, Tensor::param(&shape, values)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_params(config, params))
    }

    /// All parameters zero.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let params = config
            .declare_parameters()
            .into_iter()
            .map(|(name, shape)| (name, Tensor::zeros(&shape).into_param()))
            .collect();
        Ok(Self::from_params(config, params))
    }

    /// Builds a graph from externally supplied values, checking names and shapes
    /// against the declaration for `config`.
    pub fn from_values(config: ModelConfig, values: Vec<(String, Vec<usize>, Vec<f32>)>) -> Result<Self> {
        config.validate()?;
        let decls = config.declare_parameters();
        if decls.len() != values.len() {
            return Err(Error::Checkpoint(format!(
                "{} variant declares {} parameters, got {}",
                config.variant,
                decls.len(),
                values.len()
            )));
        }
        let params = decls
            .into_iter()
            .zip(values)
            .map(|((name, shape), (vname, vshape, data))| {
                if name != vname || shape != vshape {
                    return Err(Error::Checkpoint(format!(
                        "expected parameter {name} {:?}, found {vname} {:?}",
                        shape, vshape
                    )));
                }
                Tensor::param(&shape, data).map(|t| (name, t))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_params(config, params))
    }

    fn from_params(config: ModelConfig, params: Vec<(String, Tensor)>) -> Self {
        let index = params.iter().enumerate().map(|(i, (n, _))| (n.clone(), i)).collect();
        ModelGraph { config, params, index }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn parameters(&self) -> &[(String, Tensor)] {
        &self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn param(&self, name: &str) -> Result<&Tensor> {
        self.index
            .get(name)
            .map(|&i| &self.params[i].1)
            .ok_or_else(|| Error::Contract(format!("no parameter named {name}")))
    }

    /// Replaces a parameter's values with a fresh leaf (gradient cleared).
    pub fn set_param(&mut self, name: &str, values: Vec<f32>) -> Result<()> {
        let i = *self
            .index
            .get(name)
            .ok_or_else(|| Error::Contract(format!("no parameter named {name}")))?;
        let shape = self.params[i].1.shape().to_vec();
        self.params[i].1 = Tensor::param(&shape, values)?;
        Ok(())
    }

    pub(crate) fn set_param_at(&mut self, i: usize, values: Vec<f32>) -> Result<()> {
        let shape = self.params[i].1.shape().to_vec();
        self.params[i].1 = Tensor::param(&shape, values)?;
        Ok(())
    }

    /// Copy with one parameter replaced by `tensor` (which keeps its own
    /// gradient tracking). Shapes must match.
    pub fn with_param(&self, name: &str, tensor: Tensor) -> Result<ModelGraph> {
        let current = self.param(name)?;
        if current.shape() != tensor.shape() {
            return Err(Error::shape(format!(
                "parameter {name} is {:?}, replacement is {:?}",
                current.shape(),
                tensor.shape()
            )));
        }
        let mut out = self.clone();
        out.params[self.index[name]].1 = tensor;
        Ok(out)
    }

    /// Copy whose parameters do not track gradients, for inference.
    pub fn frozen(&self) -> ModelGraph {
        let params = self.params.iter().map(|(n, t)| (n.clone(), t.detach())).collect();
        Self::from_params(self.config, params)
    }

    pub fn zero_grad(&self) {
        self.params.iter().for_each(|(_, t)| t.zero_grad());
    }

    fn conv_params(&self, name: &str) -> Result<ConvParams> {
        ConvParams::same(
            self.param(&format!("{name}.weight"))?.clone(),
            self.param(&format!("{name}.bias"))?.clone(),
        )
    }

    pub fn scfb_params(&self, level: usize) -> Result<ScfbParams> {
        if self.config.variant != Variant::Mmtsn {
            return Err(Error::Contract(format!("{} has no fusion blocks", self.config.variant)));
        }
        let p = |part: &str| self.conv_params(&format!("bt.fuse{level}.{part}"));
        Ok(ScfbParams {
            channel_reduce: p("channel_reduce")?,
            channel_expand: p("channel_expand")?,
            spatial: p("spatial")?,
            out: p("out")?,
        })
    }
}
