use super::blocks::{inverted_residual, InvertedResidualParams, InvertedResidualSpec, UpBlockParams, UpBlockSpec};
use super::{Conv, ConvSpec, Trace};
use crate::error::{Error, Result};
use crate::model::WeightStore;
use crate::tensor::{Activation, Tensor};

/// Cost-feature widths at 1/4, 1/8 and 1/16 of the image.
pub const BRANCH_WIDTHS: [usize; 3] = [32, 64, 128];
/// Inverted residual blocks at each of those scales (the stride-2 entry
/// blocks of the two coarser scales come on top).
pub const BRANCH_BLOCKS: [usize; 3] = [4, 6, 8];

/// One unit of the aggregation branch, in execution order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BranchUnit {
    Projection,
    InvertedResidual(InvertedResidualSpec),
    UpBlock(UpBlockSpec),
    Head,
}

/// 2D hourglass over the disparity-as-channels cost volume. Input and
/// output both have `levels` channels on the quarter-resolution grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AggregationBranchSpec {
    pub levels: usize,
}

impl AggregationBranchSpec {
    pub fn new(levels: usize) -> Self {
        AggregationBranchSpec { levels }
    }

    pub fn projection(&self) -> ConvSpec {
        ConvSpec::conv(self.levels, BRANCH_WIDTHS[0], 3, 1).with_act(Activation::Relu)
    }

    pub fn head(&self) -> ConvSpec {
        ConvSpec::conv(BRANCH_WIDTHS[0], self.levels, 3, 1)
    }

    fn scale_blocks(&self, scale: usize) -> Vec<InvertedResidualSpec> {
        let c = BRANCH_WIDTHS[scale];
        vec![InvertedResidualSpec::new(c, c, 1); BRANCH_BLOCKS[scale]]
    }

    fn down(&self, scale: usize) -> InvertedResidualSpec {
        InvertedResidualSpec::new(BRANCH_WIDTHS[scale - 1], BRANCH_WIDTHS[scale], 2)
    }

    fn up(&self, scale: usize) -> UpBlockSpec {
        UpBlockSpec { c_in: BRANCH_WIDTHS[scale], c_out: BRANCH_WIDTHS[scale - 1], lateral: None }
    }

    /// Execution-ordered unit list, for structural checks.
    pub fn units(&self) -> Vec<BranchUnit> {
        let mut u = vec![BranchUnit::Projection];
        u.extend(self.scale_blocks(0).into_iter().map(BranchUnit::InvertedResidual));
        u.push(BranchUnit::InvertedResidual(self.down(1)));
        u.extend(self.scale_blocks(1).into_iter().map(BranchUnit::InvertedResidual));
        u.push(BranchUnit::InvertedResidual(self.down(2)));
        u.extend(self.scale_blocks(2).into_iter().map(BranchUnit::InvertedResidual));
        u.push(BranchUnit::UpBlock(self.up(2)));
        u.push(BranchUnit::UpBlock(self.up(1)));
        u.push(BranchUnit::Head);
        u
    }

    pub fn trace(&self, prefix: &str, hw: (usize, usize), t: &mut Trace) -> (usize, usize) {
        let mut hw = t.conv(format!("{prefix}.proj"), self.projection(), hw);
        let mut skips = Vec::new();
        for (j, b) in self.scale_blocks(0).iter().enumerate() {
            hw = b.trace(&format!("{prefix}.s4.block{j}"), hw, t);
        }
        skips.push(hw);
        hw = self.down(1).trace(&format!("{prefix}.down8"), hw, t);
        for (j, b) in self.scale_blocks(1).iter().enumerate() {
            hw = b.trace(&format!("{prefix}.s8.block{j}"), hw, t);
        }
        skips.push(hw);
        hw = self.down(2).trace(&format!("{prefix}.down16"), hw, t);
        for (j, b) in self.scale_blocks(2).iter().enumerate() {
            hw = b.trace(&format!("{prefix}.s16.block{j}"), hw, t);
        }
        hw = self.up(2).trace(&format!("{prefix}.up8"), hw, skips[1], t);
        hw = self.up(1).trace(&format!("{prefix}.up4"), hw, skips[0], t);
        t.conv(format!("{prefix}.head"), self.head(), hw)
    }
}

#[derive(Clone, Debug)]
pub struct AggregationBranchParams {
    pub spec: AggregationBranchSpec,
    pub proj: Conv,
    pub s4: Vec<InvertedResidualParams>,
    pub down8: InvertedResidualParams,
    pub s8: Vec<InvertedResidualParams>,
    pub down16: InvertedResidualParams,
    pub s16: Vec<InvertedResidualParams>,
    pub up8: UpBlockParams,
    pub up4: UpBlockParams,
    pub head: Conv,
}

impl AggregationBranchParams {
    pub fn load(store: &WeightStore, prefix: &str, spec: AggregationBranchSpec) -> Result<Self> {
        let blocks = |scale: usize, tag: &str| {
            spec.scale_blocks(scale)
                .into_iter()
                .enumerate()
                .map(|(j, b)| InvertedResidualParams::load(store, &format!("{prefix}.{tag}.block{j}"), b))
                .collect::<Result<Vec<_>>>()
        };
        Ok(AggregationBranchParams {
            proj: Conv::load(store, &format!("{prefix}.proj"), spec.projection())?,
            s4: blocks(0, "s4")?,
            down8: InvertedResidualParams::load(store, &format!("{prefix}.down8"), spec.down(1))?,
            s8: blocks(1, "s8")?,
            down16: InvertedResidualParams::load(store, &format!("{prefix}.down16"), spec.down(2))?,
            s16: blocks(2, "s16")?,
            up8: UpBlockParams::load(store, &format!("{prefix}.up8"), spec.up(2))?,
            up4: UpBlockParams::load(store, &format!("{prefix}.up4"), spec.up(1))?,
            head: Conv::load(store, &format!("{prefix}.head"), spec.head())?,
            spec,
        })
    }
}

/// Aggregates a `(n, levels, h, w)` volume; `h` and `w` must be multiples of 4.
pub fn aggregate_branch(volume: &Tensor, p: &AggregationBranchParams) -> Result<Tensor> {
    let s = volume.shape();
    if s.c != p.spec.levels {
        return Err(Error::shape(
            "aggregate_branch",
            format!("branch expects {} disparity levels, volume is {s}", p.spec.levels),
        ));
    }
    if !s.h.is_multiple_of(4) || !s.w.is_multiple_of(4) {
        return Err(Error::shape("aggregate_branch", format!("volume grid {}x{} is not divisible by 4", s.h, s.w)));
    }
    let mut x = p.proj.forward(volume)?;
    for b in &p.s4 {
        x = inverted_residual(&x, b)?;
    }
    let e4 = x.clone();
    x = inverted_residual(&x, &p.down8)?;
    for b in &p.s8 {
        x = inverted_residual(&x, b)?;
    }
    let e8 = x.clone();
    x = inverted_residual(&x, &p.down16)?;
    for b in &p.s16 {
        x = inverted_residual(&x, b)?;
    }
    x = p.up8.forward(&x, &e8)?;
    x = p.up4.forward(&x, &e4)?;
    p.head.forward(&x)
}
