use super::{Conv, ConvSpec, Trace};
use crate::error::{Error, Result};
use crate::model::WeightStore;
use crate::tensor::{add, Activation, Tensor};

/// Hidden-width multiplier of every inverted residual block.
pub const EXPANSION: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InvertedResidualSpec {
    pub c_in: usize,
    pub c_out: usize,
    pub stride: usize,
}

impl InvertedResidualSpec {
    pub fn new(c_in: usize, c_out: usize, stride: usize) -> Self {
        InvertedResidualSpec { c_in, c_out, stride }
    }

    pub fn hidden(&self) -> usize {
        EXPANSION * self.c_in
    }

    pub fn residual(&self) -> bool {
        self.stride == 1 && self.c_in == self.c_out
    }

    pub fn expand(&self) -> ConvSpec {
        ConvSpec::pointwise(self.c_in, self.hidden()).with_norm().with_act(Activation::Relu6)
    }

    pub fn depthwise(&self) -> ConvSpec {
        ConvSpec::depthwise(self.hidden(), self.stride).with_norm().with_act(Activation::Relu6)
    }

    pub fn project(&self) -> ConvSpec {
        ConvSpec::pointwise(self.hidden(), self.c_out).with_norm()
    }

    pub fn trace(&self, prefix: &str, hw: (usize, usize), t: &mut Trace) -> (usize, usize) {
        let hw = t.conv(format!("{prefix}.expand"), self.expand(), hw);
        let hw = t.conv(format!("{prefix}.dw"), self.depthwise(), hw);
        t.conv(format!("{prefix}.project"), self.project(), hw)
    }
}

/// Point-wise expansion, depth-wise 3x3, linear point-wise projection.
#[derive(Clone, Debug)]
pub struct InvertedResidualParams {
    pub spec: InvertedResidualSpec,
    pub expand: Conv,
    pub depthwise: Conv,
    pub project: Conv,
}

impl InvertedResidualParams {
    pub fn load(store: &WeightStore, prefix: &str, spec: InvertedResidualSpec) -> Result<Self> {
        Ok(InvertedResidualParams {
            spec,
            expand: Conv::load(store, &format!("{prefix}.expand"), spec.expand())?,
            depthwise: Conv::load(store, &format!("{prefix}.dw"), spec.depthwise())?,
            project: Conv::load(store, &format!("{prefix}.project"), spec.project())?,
        })
    }
}

pub fn inverted_residual(x: &Tensor, p: &InvertedResidualParams) -> Result<Tensor> {
    if x.shape().c != p.spec.c_in {
        return Err(Error::shape(
            "inverted_residual",
            format!("block expects {} channels, input is {}", p.spec.c_in, x.shape()),
        ));
    }
    let h = p.expand.forward(x)?;
    let h = p.depthwise.forward(&h)?;
    let y = p.project.forward(&h)?;
    if p.spec.residual() {
        add(x, &y)
    } else {
        Ok(y)
    }
}

/// Transposed 4x4 stride-2 convolution, additive merge with a same-scale
/// skip feature (through a 1x1 lateral conv when `lateral` names the skip
/// width), then a 3x3 convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UpBlockSpec {
    pub c_in: usize,
    pub c_out: usize,
    pub lateral: Option<usize>,
}

impl UpBlockSpec {
    pub fn deconv(&self) -> ConvSpec {
        ConvSpec::upsample(self.c_in, self.c_out).with_act(Activation::Relu)
    }

    pub fn lateral_conv(&self) -> Option<ConvSpec> {
        self.lateral.map(|c| ConvSpec::pointwise(c, self.c_out))
    }

    pub fn conv(&self) -> ConvSpec {
        ConvSpec::conv(self.c_out, self.c_out, 3, 1).with_act(Activation::Relu)
    }

    /// `hw` is the coarse input grid; `skip_hw` the grid of the skip feature.
    pub fn trace(&self, prefix: &str, hw: (usize, usize), skip_hw: (usize, usize), t: &mut Trace) -> (usize, usize) {
        let up = t.conv(format!("{prefix}.deconv"), self.deconv(), hw);
        if let Some(lat) = self.lateral_conv() {
            t.conv(format!("{prefix}.lateral"), lat, skip_hw);
        }
        t.conv(format!("{prefix}.conv"), self.conv(), up)
    }
}

#[derive(Clone, Debug)]
pub struct UpBlockParams {
    pub spec: UpBlockSpec,
    pub deconv: Conv,
    pub lateral: Option<Conv>,
    pub conv: Conv,
}

impl UpBlockParams {
    pub fn load(store: &WeightStore, prefix: &str, spec: UpBlockSpec) -> Result<Self> {
        Ok(UpBlockParams {
            spec,
            deconv: Conv::load(store, &format!("{prefix}.deconv"), spec.deconv())?,
            lateral: spec.lateral_conv().map(|s| Conv::load(store, &format!("{prefix}.lateral"), s)).transpose()?,
            conv: Conv::load(store, &format!("{prefix}.conv"), spec.conv())?,
        })
    }

    pub fn forward(&self, x: &Tensor, skip: &Tensor) -> Result<Tensor> {
        let up = self.deconv.forward(x)?;
        let merged = match &self.lateral {
            Some(lat) => add(&up, &lat.forward(skip)?)?,
            None => add(&up, skip)?,
        };
        self.conv.forward(&merged)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn store_for(spec: InvertedResidualSpec, fill: impl Fn(&str, usize) -> f32) -> WeightStore {
        let mut t = Trace::default();
        spec.trace("b", (4, 4), &mut t);
        let mut store = WeightStore::new();
        for p in t.params() {
            let vals = (0..p.numel()).map(|i| fill(&p.name, i)).collect();
            store.insert(p.name, p.dims, vals).unwrap();
        }
        store
    }

    #[test]
    fn zero_branch_is_pure_residual() {
        let spec = InvertedResidualSpec::new(3, 3, 1);
        let store = store_for(spec, |_, _| 0.0);
        let p = InvertedResidualParams::load(&store, "b", spec).unwrap();
        let x = Tensor::from_fn(Shape::new(1, 3, 5, 6), |_, c, y, x| c as f32 - 0.3 * y as f32 + 0.1 * x as f32);
        assert_eq!(inverted_residual(&x, &p).unwrap(), x);
    }

    #[test]
    fn identity_weights_double_the_input() {
        // expand duplicates each channel EXPANSION times, the depthwise conv
        // keeps only its centre tap, projection averages the copies back.
        let c = 2;
        let spec = InvertedResidualSpec::new(c, c, 1);
        let hidden = spec.hidden();
        let store = store_for(spec, |name, i| match name {
            "b.expand.kernel" => {
                let (o, ci) = (i / c, i % c);
                if o / EXPANSION == ci {
                    1.0
                } else {
                    0.0
                }
            }
            "b.dw.kernel" => {
                if i % 9 == 4 {
                    1.0
                } else {
                    0.0
                }
            }
            "b.project.kernel" => {
                let (o, hi) = (i / hidden, i % hidden);
                if hi / EXPANSION == o {
                    1.0 / EXPANSION as f32
                } else {
                    0.0
                }
            }
            n if n.ends_with("norm.scale") => 1.0,
            _ => 0.0,
        });
        let p = InvertedResidualParams::load(&store, "b", spec).unwrap();
        // keep values inside relu6's linear range
        let x = Tensor::from_fn(Shape::new(1, c, 4, 5), |_, ch, y, x| 0.25 * (ch + y + x) as f32);
        let y = inverted_residual(&x, &p).unwrap();
        assert!(y.max_abs_diff(&x.scale(2.0)) < 1e-6);
    }

    #[test]
    fn rejects_wrong_channel_count() {
        let spec = InvertedResidualSpec::new(3, 3, 1);
        let p = InvertedResidualParams::load(&store_for(spec, |_, _| 0.0), "b", spec).unwrap();
        assert!(inverted_residual(&Tensor::zeros(Shape::new(1, 4, 4, 4)), &p).is_err());
    }

    #[test]
    fn stride_two_halves_the_grid_and_drops_the_skip() {
        let spec = InvertedResidualSpec::new(2, 5, 2);
        assert!(!spec.residual());
        assert_eq!(spec.hidden(), 8);
        let p = InvertedResidualParams::load(&store_for(spec, |_, _| 0.1), "b", spec).unwrap();
        let y = inverted_residual(&Tensor::full(Shape::new(1, 2, 8, 6), 1.0), &p).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 5, 4, 3));
    }
}
