//! Full network graph: configuration, parameter inventory, seeded
//! initialisation and the single-call forward pass.

mod store;

pub use store::*;

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::nn::{
    aggregate_branch, extract_features, AggregationBranchParams, AggregationBranchSpec, AttentionParams, AttentionSpec,
    BackboneParams, BackboneSpec, Conv, ConvSpec, Features, Trace,
};
use crate::tensor::{Activation, Tensor};
use crate::volume::{
    build_correlation, convex_upsample, fuse, separate, soft_argmin, zero_fill_fraction, AttentionMap, CostVolume,
    DisparityMap, UPSAMPLE_CHANNELS, UPSAMPLE_FACTOR,
};

/// Hidden width of the convex-upsampling weight head.
pub const UPSAMPLE_HIDDEN: usize = 64;
/// Smallest accepted input height and width.
pub const MIN_INPUT: usize = 32;

/// Which features feed the attention head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionMode {
    /// F4, F8 and F16 combined.
    ScaleAware,
    /// F4 alone.
    QuarterOnly,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ModelConfig {
    pub d_max: usize,
    /// Encoder widths at 1/4, 1/8, 1/16, 1/32.
    pub backbone_widths: [usize; 4],
    /// Decoder feature widths `[F4, F8, F16]`.
    pub feature_widths: [usize; 3],
    pub attention: AttentionMode,
    /// `false` runs one aggregation branch on the ungated volume and skips
    /// the attention head entirely.
    pub bilateral: bool,
    pub pad_multiple: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_max: 192,
            backbone_widths: [24, 32, 96, 160],
            feature_widths: [48, 64, 96],
            attention: AttentionMode::ScaleAware,
            bilateral: true,
            pad_multiple: 32,
        }
    }
}

/// The three configurations compared in the ablation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Variant {
    Baseline,
    Bilateral,
    BilateralScaleAware,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Baseline, Variant::Bilateral, Variant::BilateralScaleAware];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Baseline => "Baseline",
            Variant::Bilateral => "BA",
            Variant::BilateralScaleAware => "BA+SSA",
        }
    }

    /// Variant selected by the two ablation switches; disabling bilateral
    /// aggregation also removes the attention head.
    pub fn from_switches(no_ba: bool, no_ssa: bool) -> Self {
        match (no_ba, no_ssa) {
            (true, _) => Variant::Baseline,
            (false, true) => Variant::Bilateral,
            (false, false) => Variant::BilateralScaleAware,
        }
    }

    pub fn config(self) -> ModelConfig {
        match self {
            Variant::Baseline => ModelConfig::baseline(),
            Variant::Bilateral => ModelConfig::bilateral_only(),
            Variant::BilateralScaleAware => ModelConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn baseline() -> Self {
        ModelConfig { bilateral: false, attention: AttentionMode::QuarterOnly, ..Self::default() }
    }

    pub fn bilateral_only() -> Self {
        ModelConfig { attention: AttentionMode::QuarterOnly, ..Self::default() }
    }

    /// Disparity levels of the quarter-resolution volume.
    pub fn levels(&self) -> usize {
        self.d_max / UPSAMPLE_FACTOR
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_max == 0 || !self.d_max.is_multiple_of(4) {
            return Err(Error::InvalidArgument(format!("d_max must be a positive multiple of 4, got {}", self.d_max)));
        }
        if self.backbone_widths.iter().chain(&self.feature_widths).any(|&w| w == 0) {
            return Err(Error::InvalidArgument("all widths must be at least 1".into()));
        }
        if self.pad_multiple == 0 || !self.pad_multiple.is_multiple_of(32) {
            return Err(Error::InvalidArgument(format!(
                "pad multiple must be a positive multiple of 32, got {}",
                self.pad_multiple
            )));
        }
        Ok(())
    }

    pub fn backbone(&self) -> BackboneSpec {
        BackboneSpec::new(self.backbone_widths, self.feature_widths)
    }

    /// `None` when the attention head is not part of the graph.
    pub fn attention_spec(&self) -> Option<AttentionSpec> {
        let [f4, f8, f16] = self.feature_widths;
        self.bilateral.then_some(AttentionSpec { mode: self.attention, f4, f8, f16 })
    }

    pub fn branch(&self) -> AggregationBranchSpec {
        AggregationBranchSpec::new(self.levels())
    }

    /// Branch parameter prefixes in execution order.
    pub fn branch_prefixes(&self) -> &'static [&'static str] {
        if self.bilateral {
            &["agg_detail", "agg_smooth"]
        } else {
            &["agg"]
        }
    }

    pub fn upsample_head(&self) -> [ConvSpec; 2] {
        [
            ConvSpec::conv(self.feature_widths[0], UPSAMPLE_HIDDEN, 3, 1).with_act(Activation::Relu),
            ConvSpec::conv(UPSAMPLE_HIDDEN, UPSAMPLE_CHANNELS, 3, 1),
        ]
    }

    /// Input size after zero padding.
    pub fn padded_size(&self, h: usize, w: usize) -> (usize, usize) {
        (h.div_ceil(self.pad_multiple) * self.pad_multiple, w.div_ceil(self.pad_multiple) * self.pad_multiple)
    }
}

/// Parameterised layers grouped by pipeline part, walked at a padded input
/// size. The backbone appears once; it runs on both views.
#[derive(Clone, Debug, Default)]
pub struct GraphTrace {
    pub backbone: Trace,
    pub attention: Trace,
    pub aggregation: Trace,
    pub upsample_head: Trace,
}

impl GraphTrace {
    pub fn all_layers(&self) -> impl Iterator<Item = &crate::nn::LayerRecord> {
        [&self.backbone, &self.attention, &self.aggregation, &self.upsample_head]
            .into_iter()
            .flat_map(|t| t.layers.iter())
    }
}

/// Walks the graph for a padded `h x w` input.
pub fn trace_graph(cfg: &ModelConfig, h: usize, w: usize) -> GraphTrace {
    let mut g = GraphTrace::default();
    let [g4, ..] = cfg.backbone().trace("backbone", (h, w), &mut g.backbone);
    if let Some(spec) = cfg.attention_spec() {
        spec.trace("attention", g4, &mut g.attention);
    }
    for prefix in cfg.branch_prefixes() {
        cfg.branch().trace(prefix, g4, &mut g.aggregation);
    }
    let [c1, c2] = cfg.upsample_head();
    let hw = g.upsample_head.conv("upsample.conv1".into(), c1, g4);
    g.upsample_head.conv("upsample.conv2".into(), c2, hw);
    g
}

/// Every parameter the configuration demands, in graph order.
pub fn inventory(cfg: &ModelConfig) -> Vec<ParamSpec> {
    trace_graph(cfg, 64, 64).all_layers().flat_map(|l| l.spec.params(&l.name)).collect()
}

/// Deterministic weights: kernels and biases uniform in `±1/sqrt(fan_in)`,
/// normalisation scale 1 and shift 0.
pub fn init_random(cfg: &ModelConfig, seed: u64) -> Result<WeightStore> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = WeightStore::new();
    for layer in trace_graph(cfg, 64, 64).all_layers() {
        let bound = 1.0 / (layer.spec.fan_in() as f32).sqrt();
        for p in layer.spec.params(&layer.name) {
            let values = match p.role {
                ParamRole::Kernel | ParamRole::Bias => (0..p.numel()).map(|_| rng.gen_range(-bound..bound)).collect(),
                ParamRole::NormScale => vec![1.0; p.numel()],
                ParamRole::NormShift => vec![0.0; p.numel()],
            };
            store.insert(p.name, p.dims, values)?;
        }
    }
    Ok(store)
}

#[derive(Clone, Debug)]
enum Aggregation {
    Bilateral { detail: Box<AggregationBranchParams>, smooth: Box<AggregationBranchParams> },
    Single(Box<AggregationBranchParams>),
}

/// Configuration plus validated, loaded parameters.
#[derive(Clone, Debug)]
pub struct Model {
    cfg: ModelConfig,
    backbone: BackboneParams,
    attention: Option<AttentionParams>,
    aggregation: Aggregation,
    upsample: [Conv; 2],
}

/// Per-stage record of one forward pass.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageRecord {
    pub name: &'static str,
    /// Shape of the stage's main output.
    pub shape: [usize; 4],
    pub elapsed_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Diagnostics {
    pub input_size: (usize, usize),
    pub padded_size: (usize, usize),
    /// Share of correlation entries filled with zero at the left border.
    pub zero_fill_fraction: f64,
    pub stages: Vec<StageRecord>,
    pub total_ms: f64,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// Full-resolution disparity, cropped to the input size.
    pub d1: DisparityMap,
    /// Quarter-resolution disparity, cropped to `ceil(h/4) x ceil(w/4)`.
    pub d0: DisparityMap,
    /// Absent when the configuration has no attention head.
    pub attention: Option<AttentionMap>,
    pub diagnostics: Diagnostics,
}

/// Stage names used by timing and benchmark reports.
pub const STAGES: [&str; 4] = ["features", "correlation", "aggregation", "regression"];

impl Model {
    pub fn new(cfg: ModelConfig, store: &WeightStore) -> Result<Self> {
        cfg.validate()?;
        store.validate(&inventory(&cfg))?;
        let backbone = BackboneParams::load(store, "backbone", cfg.backbone())?;
        let attention = cfg.attention_spec().map(|s| AttentionParams::load(store, "attention", s)).transpose()?;
        let branch = |prefix: &str| AggregationBranchParams::load(store, prefix, cfg.branch());
        let aggregation = if cfg.bilateral {
            Aggregation::Bilateral { detail: Box::new(branch("agg_detail")?), smooth: Box::new(branch("agg_smooth")?) }
        } else {
            Aggregation::Single(Box::new(branch("agg")?))
        };
        let [c1, c2] = cfg.upsample_head();
        let upsample = [Conv::load(store, "upsample.conv1", c1)?, Conv::load(store, "upsample.conv2", c2)?];
        Ok(Model { cfg, backbone, attention, aggregation, upsample })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    /// Features of both views with the shared backbone. Inputs must already
    /// be padded to a multiple of 32.
    pub fn features(&self, left: &Tensor, right: &Tensor) -> Result<(Features, Features)> {
        Ok((extract_features(left, &self.backbone)?, extract_features(right, &self.backbone)?))
    }

    pub fn correlation(&self, left: &Features, right: &Features) -> Result<CostVolume> {
        build_correlation(&left.f4, &right.f4, self.cfg.levels())
    }

    /// Attention map of the left view, if the configuration has a head.
    pub fn attention(&self, left: &Features) -> Result<Option<AttentionMap>> {
        self.attention.as_ref().map(|p| p.forward(&left.f4, &left.f8, &left.f16)).transpose()
    }

    /// Gates, aggregates and fuses the volume. Bilateral configurations
    /// require an attention map.
    pub fn aggregate(&self, volume: &CostVolume, attention: Option<&AttentionMap>) -> Result<CostVolume> {
        match &self.aggregation {
            Aggregation::Single(p) => Ok(CostVolume::new(aggregate_branch(volume.tensor(), p)?)),
            Aggregation::Bilateral { detail, smooth } => {
                let a = attention
                    .ok_or_else(|| Error::InvalidArgument("bilateral aggregation needs an attention map".into()))?;
                let (cd, cs) = separate(volume, a)?;
                let cd = CostVolume::new(aggregate_branch(cd.tensor(), detail)?);
                let cs = CostVolume::new(aggregate_branch(cs.tensor(), smooth)?);
                fuse(&cd, &cs, a)
            }
        }
    }

    /// Coarse and full-resolution disparity from the aggregated volume and
    /// the left F4 features.
    pub fn regress(&self, volume: &CostVolume, left_f4: &Tensor) -> Result<(DisparityMap, DisparityMap)> {
        let d0 = soft_argmin(volume)?;
        let weights = self.upsample[1].forward(&self.upsample[0].forward(left_f4)?)?;
        let d1 = convex_upsample(&d0, &weights)?;
        Ok((d0, d1))
    }

    pub fn forward(&self, left: &Tensor, right: &Tensor) -> Result<ForwardOutput> {
        let s = left.shape();
        if right.shape() != s {
            return Err(Error::shape("forward", format!("left view {s} vs right view {}", right.shape())));
        }
        if s.c != 3 {
            return Err(Error::shape("forward", format!("views must have 3 channels, got {s}")));
        }
        if s.h < MIN_INPUT || s.w < MIN_INPUT {
            return Err(Error::shape("forward", format!("views must be at least {MIN_INPUT}x{MIN_INPUT}, got {s}")));
        }
        let start = Instant::now();
        let (ph, pw) = self.cfg.padded_size(s.h, s.w);
        let mut stages = Vec::with_capacity(STAGES.len());
        let mut mark = Instant::now();
        let mut record = |name: &'static str, shape: [usize; 4]| {
            let now = Instant::now();
            stages.push(StageRecord { name, shape, elapsed_ms: (now - mark).as_secs_f64() * 1e3 });
            mark = now;
        };

        let (fl, fr) = self.features(&left.pad_to(ph, pw)?, &right.pad_to(ph, pw)?)?;
        record(STAGES[0], fl.f4.shape().dims());
        let volume = self.correlation(&fl, &fr)?;
        record(STAGES[1], volume.tensor().shape().dims());
        let attention = self.attention(&fl)?;
        let aggregated = self.aggregate(&volume, attention.as_ref())?;
        record(STAGES[2], aggregated.tensor().shape().dims());
        let (d0, d1) = self.regress(&aggregated, &fl.f4)?;
        record(STAGES[3], d1.tensor().shape().dims());

        let (qh, qw) = (s.h.div_ceil(UPSAMPLE_FACTOR), s.w.div_ceil(UPSAMPLE_FACTOR));
        let levels = self.cfg.levels();
        let grid_w = pw / UPSAMPLE_FACTOR;
        let mut warnings = Vec::new();
        if levels > grid_w {
            warnings.push(format!(
                "{levels} disparity levels exceed the {grid_w}-column volume width; upper levels are mostly zero"
            ));
        }
        Ok(ForwardOutput {
            d1: DisparityMap::new(d1.into_tensor().crop(s.h, s.w)?)?,
            d0: DisparityMap::new(d0.into_tensor().crop(qh, qw)?)?,
            attention: attention.map(|a| AttentionMap::new(a.into_tensor().crop(qh, qw)?)).transpose()?,
            diagnostics: Diagnostics {
                input_size: (s.h, s.w),
                padded_size: (ph, pw),
                zero_fill_fraction: zero_fill_fraction(levels, grid_w),
                stages,
                total_ms: start.elapsed().as_secs_f64() * 1e3,
                warnings,
            },
        })
    }
}

/// Builds the model and runs one forward pass.
pub fn forward(left: &Tensor, right: &Tensor, store: &WeightStore, cfg: &ModelConfig) -> Result<ForwardOutput> {
    Model::new(cfg.clone(), store)?.forward(left, right)
}
