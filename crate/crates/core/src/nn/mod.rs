//! Learned building blocks assembled from tensor kernels.
//!
//! Every block comes as a weight-free *spec* (topology, parameter inventory,
//! MAC accounting) and a loaded *params* struct that runs the forward pass.
//! Both are derived from the same spec so the inventory, the MAC count and
//! the executed graph cannot drift apart.

mod aggregation;
mod attention;
mod backbone;
mod blocks;

pub use aggregation::{
    aggregate_branch, AggregationBranchParams, AggregationBranchSpec, BranchUnit, BRANCH_BLOCKS, BRANCH_WIDTHS,
};
pub use attention::{scale_aware_attention, scale_unaware_attention, AttentionParams, AttentionSpec, ATTENTION_WIDTH};
pub use backbone::{extract_features, BackboneParams, BackboneSpec, Features};
pub use blocks::{
    inverted_residual, InvertedResidualParams, InvertedResidualSpec, UpBlockParams, UpBlockSpec, EXPANSION,
};

use crate::error::Result;
use crate::model::{ParamRole, ParamSpec, WeightStore};
use crate::tensor::{
    activation, affine_channels, conv2d, conv2d_transpose, conv_out_len, transpose_out_len, Activation, ConvParams,
    Tensor,
};

/// Shape of one convolution (or 4x4 stride-2 transposed convolution) with
/// its optional folded normalisation and activation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
    pub transpose: bool,
    pub norm: bool,
    pub act: Option<Activation>,
}

impl ConvSpec {
    /// `k x k` convolution with "same" padding.
    pub fn conv(c_in: usize, c_out: usize, k: usize, stride: usize) -> Self {
        ConvSpec { c_in, c_out, kernel: k, stride, pad: k / 2, groups: 1, transpose: false, norm: false, act: None }
    }

    pub fn pointwise(c_in: usize, c_out: usize) -> Self {
        Self::conv(c_in, c_out, 1, 1)
    }

    pub fn depthwise(channels: usize, stride: usize) -> Self {
        ConvSpec { groups: channels, ..Self::conv(channels, channels, 3, stride) }
    }

    /// 4x4 stride-2 transposed convolution that exactly doubles the grid.
    pub fn upsample(c_in: usize, c_out: usize) -> Self {
        ConvSpec { transpose: true, pad: 1, ..Self::conv(c_in, c_out, 4, 2) }
    }

    pub fn with_norm(mut self) -> Self {
        self.norm = true;
        self
    }

    pub fn with_act(mut self, act: Activation) -> Self {
        self.act = Some(act);
        self
    }

    pub fn kernel_dims(&self) -> [usize; 4] {
        let k = self.kernel;
        if self.transpose {
            [self.c_in, self.c_out, k, k]
        } else {
            [self.c_out, self.c_in / self.groups, k, k]
        }
    }

    pub fn fan_in(&self) -> usize {
        let [_, c, kh, kw] = self.kernel_dims();
        if self.transpose {
            // each output receives c_in * (k/stride)^2 taps
            self.c_in * (kh * kw) / (self.stride * self.stride)
        } else {
            c * kh * kw
        }
    }

    pub fn output_hw(&self, (h, w): (usize, usize)) -> Option<(usize, usize)> {
        let f = if self.transpose { transpose_out_len } else { conv_out_len };
        Some((f(h, self.kernel, self.stride, self.pad)?, f(w, self.kernel, self.stride, self.pad)?))
    }

    /// Multiply-accumulates executed for an `h x w` input. Transposed
    /// convolutions count every kernel tap applied to every input pixel.
    pub fn macs(&self, (h, w): (usize, usize)) -> u64 {
        let k2 = (self.kernel * self.kernel) as u64;
        if self.transpose {
            (self.c_in * self.c_out) as u64 * k2 * (h * w) as u64
        } else {
            let (oh, ow) = self.output_hw((h, w)).unwrap_or((0, 0));
            (self.c_out * (self.c_in / self.groups)) as u64 * k2 * (oh * ow) as u64
        }
    }

    pub fn params(&self, prefix: &str) -> Vec<ParamSpec> {
        let mut out = vec![
            ParamSpec { name: format!("{prefix}.kernel"), dims: self.kernel_dims().to_vec(), role: ParamRole::Kernel },
            ParamSpec { name: format!("{prefix}.bias"), dims: vec![self.c_out], role: ParamRole::Bias },
        ];
        if self.norm {
            out.push(ParamSpec {
                name: format!("{prefix}.norm.scale"),
                dims: vec![self.c_out],
                role: ParamRole::NormScale,
            });
            out.push(ParamSpec {
                name: format!("{prefix}.norm.shift"),
                dims: vec![self.c_out],
                role: ParamRole::NormShift,
            });
        }
        out
    }
}

/// Loaded convolution layer.
#[derive(Clone, Debug)]
pub struct Conv {
    pub spec: ConvSpec,
    pub kernel: Tensor,
    pub bias: Vec<f32>,
    /// Folded normalisation as per-channel `(scale, shift)`.
    pub norm: Option<(Vec<f32>, Vec<f32>)>,
}

impl Conv {
    pub fn load(store: &WeightStore, prefix: &str, spec: ConvSpec) -> Result<Self> {
        let kernel = store.kernel(&format!("{prefix}.kernel"), spec.kernel_dims())?;
        let bias = store.vector(&format!("{prefix}.bias"), spec.c_out)?.to_vec();
        let norm = if spec.norm {
            Some((
                store.vector(&format!("{prefix}.norm.scale"), spec.c_out)?.to_vec(),
                store.vector(&format!("{prefix}.norm.shift"), spec.c_out)?.to_vec(),
            ))
        } else {
            None
        };
        Ok(Conv { spec, kernel, bias, norm })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let s = &self.spec;
        let p = ConvParams::new(s.stride, s.pad).groups(s.groups);
        let mut y = if s.transpose {
            conv2d_transpose(x, &self.kernel, Some(&self.bias), p)?
        } else {
            conv2d(x, &self.kernel, Some(&self.bias), p)?
        };
        if let Some((scale, shift)) = &self.norm {
            y = affine_channels(&y, scale, shift)?;
        }
        if let Some(act) = s.act {
            y = activation(&y, act);
        }
        Ok(y)
    }
}

/// One parameterised layer visited while walking a topology.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerRecord {
    pub name: String,
    pub spec: ConvSpec,
    pub input_hw: (usize, usize),
    pub output_hw: (usize, usize),
}

impl LayerRecord {
    pub fn macs(&self) -> u64 {
        self.spec.macs(self.input_hw)
    }
}

/// Ordered list of layers produced by walking a spec at a given resolution.
#[derive(Clone, Debug, Default)]
pub struct Trace {
    pub layers: Vec<LayerRecord>,
}

impl Trace {
    pub(crate) fn conv(&mut self, name: String, spec: ConvSpec, hw: (usize, usize)) -> (usize, usize) {
        // Spec walks only happen on validated, stride-aligned grids.
        let out = spec.output_hw(hw).expect("layer does not fit traced grid");
        self.layers.push(LayerRecord { name, spec, input_hw: hw, output_hw: out });
        out
    }

    pub fn macs(&self) -> u64 {
        self.layers.iter().map(LayerRecord::macs).sum()
    }

    pub fn params(&self) -> Vec<ParamSpec> {
        self.layers.iter().flat_map(|l| l.spec.params(&l.name)).collect()
    }
}
