use super::blocks::{inverted_residual, InvertedResidualParams, InvertedResidualSpec, UpBlockParams, UpBlockSpec};
use super::{Conv, ConvSpec, Trace};
use crate::error::{Error, Result};
use crate::model::WeightStore;
use crate::tensor::{Activation, Tensor};

const STEM_WIDTH: usize = 32;

/// Inverted-residual encoder with MobileNetV2's stride schedule (stem at
/// 1/2, stages ending at 1/4, 1/8, 1/16, 1/32) and a three-step decoder
/// back up to 1/4 resolution.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BackboneSpec {
    pub stem: ConvSpec,
    pub stages: [Vec<InvertedResidualSpec>; 4],
    pub up16: UpBlockSpec,
    pub up8: UpBlockSpec,
    pub up4: UpBlockSpec,
}

impl BackboneSpec {
    /// `widths` are the encoder outputs at 1/4, 1/8, 1/16, 1/32;
    /// `features` the decoder outputs `[F4, F8, F16]`.
    pub fn new(widths: [usize; 4], features: [usize; 3]) -> Self {
        let [w4, w8, w16, w32] = widths;
        let mid = 2 * w8;
        let ir = InvertedResidualSpec::new;
        let repeat = |c: usize, n: usize| std::iter::repeat_n(ir(c, c, 1), n);
        let stages = [
            vec![ir(STEM_WIDTH, w4, 2), ir(w4, w4, 1)],
            std::iter::once(ir(w4, w8, 2)).chain(repeat(w8, 2)).collect(),
            std::iter::once(ir(w8, mid, 2))
                .chain(repeat(mid, 3))
                .chain(std::iter::once(ir(mid, w16, 1)))
                .chain(repeat(w16, 2))
                .collect(),
            std::iter::once(ir(w16, w32, 2)).chain(repeat(w32, 2)).collect(),
        ];
        let [f4, f8, f16] = features;
        BackboneSpec {
            stem: ConvSpec::conv(3, STEM_WIDTH, 3, 2).with_norm().with_act(Activation::Relu6),
            stages,
            up16: UpBlockSpec { c_in: w32, c_out: f16, lateral: Some(w16) },
            up8: UpBlockSpec { c_in: f16, c_out: f8, lateral: Some(w8) },
            up4: UpBlockSpec { c_in: f8, c_out: f4, lateral: Some(w4) },
        }
    }

    /// Walks the graph for an `h x w` image; returns the F4, F8, F16 grids.
    pub fn trace(&self, prefix: &str, hw: (usize, usize), t: &mut Trace) -> [(usize, usize); 3] {
        let mut hw = t.conv(format!("{prefix}.stem"), self.stem, hw);
        let mut skips = Vec::with_capacity(4);
        for (i, stage) in self.stages.iter().enumerate() {
            for (j, block) in stage.iter().enumerate() {
                hw = block.trace(&format!("{prefix}.stage{}.block{j}", i + 1), hw, t);
            }
            skips.push(hw);
        }
        let g16 = self.up16.trace(&format!("{prefix}.up16"), hw, skips[2], t);
        let g8 = self.up8.trace(&format!("{prefix}.up8"), g16, skips[1], t);
        let g4 = self.up4.trace(&format!("{prefix}.up4"), g8, skips[0], t);
        [g4, g8, g16]
    }
}

#[derive(Clone, Debug)]
pub struct BackboneParams {
    pub spec: BackboneSpec,
    pub stem: Conv,
    pub stages: Vec<Vec<InvertedResidualParams>>,
    pub up16: UpBlockParams,
    pub up8: UpBlockParams,
    pub up4: UpBlockParams,
}

impl BackboneParams {
    pub fn load(store: &WeightStore, prefix: &str, spec: BackboneSpec) -> Result<Self> {
        let stages = spec
            .stages
            .iter()
            .enumerate()
            .map(|(i, stage)| {
                stage
                    .iter()
                    .enumerate()
                    .map(|(j, b)| InvertedResidualParams::load(store, &format!("{prefix}.stage{}.block{j}", i + 1), *b))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(BackboneParams {
            stem: Conv::load(store, &format!("{prefix}.stem"), spec.stem)?,
            stages,
            up16: UpBlockParams::load(store, &format!("{prefix}.up16"), spec.up16)?,
            up8: UpBlockParams::load(store, &format!("{prefix}.up8"), spec.up8)?,
            up4: UpBlockParams::load(store, &format!("{prefix}.up4"), spec.up4)?,
            spec,
        })
    }
}

/// Multi-scale features of one view.
#[derive(Clone, Debug, PartialEq)]
pub struct Features {
    pub f4: Tensor,
    pub f8: Tensor,
    pub f16: Tensor,
}

/// Runs the backbone on a normalised image whose height and width are
/// multiples of 32.
pub fn extract_features(image: &Tensor, p: &BackboneParams) -> Result<Features> {
    let s = image.shape();
    if s.c != 3 {
        return Err(Error::shape("extract_features", format!("expected 3 channels, got {s}")));
    }
    if !s.h.is_multiple_of(32) || !s.w.is_multiple_of(32) {
        return Err(Error::shape("extract_features", format!("spatial size {}x{} is not a multiple of 32", s.h, s.w)));
    }
    let mut x = p.stem.forward(image)?;
    let mut skips = Vec::with_capacity(4);
    for stage in &p.stages {
        for block in stage {
            x = inverted_residual(&x, block)?;
        }
        skips.push(x.clone());
    }
    let f16 = p.up16.forward(&skips[3], &skips[2])?;
    let f8 = p.up8.forward(&f16, &skips[1])?;
    let f4 = p.up4.forward(&f8, &skips[0])?;
    Ok(Features { f4, f8, f16 })
}
