use super::{Conv, ConvSpec, Trace};
use crate::error::{Error, Result};
use crate::model::{AttentionMode, WeightStore};
use crate::tensor::{bilinear_resize, concat_channels, Activation, Tensor};
use crate::volume::AttentionMap;

/// Channel count of each per-scale intermediate feature.
pub const ATTENTION_WIDTH: usize = 32;

/// Spatial attention head. In scale-aware mode F8 and F16 are bilinearly
/// brought to the F4 grid, each of the three scales gets its own 3x3 conv,
/// the results are concatenated and a final 3x3 conv + sigmoid yields the
/// map. Quarter-only mode uses the F4 path alone.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionSpec {
    pub mode: AttentionMode,
    pub f4: usize,
    pub f8: usize,
    pub f16: usize,
}

impl AttentionSpec {
    fn scale_conv(c_in: usize) -> ConvSpec {
        ConvSpec::conv(c_in, ATTENTION_WIDTH, 3, 1).with_act(Activation::Relu)
    }

    fn scales(&self) -> usize {
        match self.mode {
            AttentionMode::ScaleAware => 3,
            AttentionMode::QuarterOnly => 1,
        }
    }

    pub fn output_conv(&self) -> ConvSpec {
        ConvSpec::conv(self.scales() * ATTENTION_WIDTH, 1, 3, 1).with_act(Activation::Sigmoid)
    }

    pub fn trace(&self, prefix: &str, hw4: (usize, usize), t: &mut Trace) {
        t.conv(format!("{prefix}.f4"), Self::scale_conv(self.f4), hw4);
        if self.mode == AttentionMode::ScaleAware {
            t.conv(format!("{prefix}.f8"), Self::scale_conv(self.f8), hw4);
            t.conv(format!("{prefix}.f16"), Self::scale_conv(self.f16), hw4);
        }
        t.conv(format!("{prefix}.out"), self.output_conv(), hw4);
    }
}

#[derive(Clone, Debug)]
pub struct AttentionParams {
    pub spec: AttentionSpec,
    pub f4: Conv,
    pub f8: Option<Conv>,
    pub f16: Option<Conv>,
    pub out: Conv,
}

impl AttentionParams {
    pub fn load(store: &WeightStore, prefix: &str, spec: AttentionSpec) -> Result<Self> {
        let scale_aware = spec.mode == AttentionMode::ScaleAware;
        let optional = |name: &str, c: usize| -> Result<Option<Conv>> {
            scale_aware
                .then(|| Conv::load(store, &format!("{prefix}.{name}"), AttentionSpec::scale_conv(c)))
                .transpose()
        };
        Ok(AttentionParams {
            f4: Conv::load(store, &format!("{prefix}.f4"), AttentionSpec::scale_conv(spec.f4))?,
            f8: optional("f8", spec.f8)?,
            f16: optional("f16", spec.f16)?,
            out: Conv::load(store, &format!("{prefix}.out"), spec.output_conv())?,
            spec,
        })
    }

    /// Dispatches on the configured mode.
    pub fn forward(&self, f4: &Tensor, f8: &Tensor, f16: &Tensor) -> Result<AttentionMap> {
        match self.spec.mode {
            AttentionMode::ScaleAware => scale_aware_attention(f4, f8, f16, self),
            AttentionMode::QuarterOnly => scale_unaware_attention(f4, self),
        }
    }
}

pub fn scale_aware_attention(f4: &Tensor, f8: &Tensor, f16: &Tensor, p: &AttentionParams) -> Result<AttentionMap> {
    let (Some(c8), Some(c16)) = (&p.f8, &p.f16) else {
        return Err(Error::InvalidArgument("attention head was loaded in quarter-only mode".into()));
    };
    let (s4, s8, s16) = (f4.shape(), f8.shape(), f16.shape());
    let consistent =
        s8.n == s4.n && s16.n == s4.n && s4.h == 2 * s8.h && s4.w == 2 * s8.w && s4.h == 4 * s16.h && s4.w == 4 * s16.w;
    if !consistent {
        return Err(Error::shape(
            "scale_aware_attention",
            format!("feature scales {s4}, {s8}, {s16} are not 1/4, 1/8, 1/16 of one image"),
        ));
    }
    let up8 = bilinear_resize(f8, s4.h, s4.w)?;
    let up16 = bilinear_resize(f16, s4.h, s4.w)?;
    let s = concat_channels(&[&c16.forward(&up16)?, &c8.forward(&up8)?, &p.f4.forward(f4)?])?;
    AttentionMap::new(p.out.forward(&s)?)
}

pub fn scale_unaware_attention(f4: &Tensor, p: &AttentionParams) -> Result<AttentionMap> {
    if p.spec.mode != AttentionMode::QuarterOnly {
        return Err(Error::InvalidArgument("attention head was loaded in scale-aware mode".into()));
    }
    AttentionMap::new(p.out.forward(&p.f4.forward(f4)?)?)
}
