use serde::Serialize;

use crate::model::{trace_graph, ModelConfig};
use crate::nn::Trace;
use crate::volume::UPSAMPLE_NEIGHBORS;

/// Cost of one pipeline part.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct StageCost {
    pub name: &'static str,
    pub macs: u64,
    pub params: u64,
}

/// Analytic MACs and parameter counts per stage for one stereo pair.
/// Counts are taken on the padded grid the forward pass actually runs on.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct MacBreakdown {
    pub input_size: (usize, usize),
    pub padded_size: (usize, usize),
    pub stages: Vec<StageCost>,
    pub total_macs: u64,
    pub total_params: u64,
}

impl MacBreakdown {
    pub fn stage(&self, name: &str) -> Option<&StageCost> {
        self.stages.iter().find(|s| s.name == name)
    }

    /// Fixed-width text table, one row per stage plus the total.
    pub fn table(&self) -> String {
        let mut out = format!(
            "input {}x{} (padded {}x{})\n{:<16} {:>16} {:>12}\n",
            self.input_size.1, self.input_size.0, self.padded_size.1, self.padded_size.0, "stage", "MACs", "params"
        );
        for s in &self.stages {
            out += &format!("{:<16} {:>16} {:>12}\n", s.name, s.macs, s.params);
        }
        out += &format!("{:<16} {:>16} {:>12}\n", "total", self.total_macs, self.total_params);
        out
    }
}

fn params(t: &Trace) -> u64 {
    t.params().iter().map(|p| p.numel() as u64).sum()
}

/// Conventions: convolutions count every kernel tap at every output pixel,
/// padded taps included; transposed convolutions count every kernel tap at
/// every input pixel; the correlation counts `Nc` per volume entry; the
/// regression counts one MAC per disparity level per coarse pixel and one
/// per neighbour per full-resolution pixel. Element-wise operations,
/// activations, softmax normalisation and bilinear resizing count zero.
pub fn count_macs(cfg: &ModelConfig, h: usize, w: usize) -> MacBreakdown {
    let (ph, pw) = cfg.padded_size(h, w);
    let g = trace_graph(cfg, ph, pw);
    let (qh, qw) = (ph / 4, pw / 4);
    let levels = cfg.levels() as u64;
    let quarter = (qh * qw) as u64;
    let stages = vec![
        StageCost { name: "backbone", macs: 2 * g.backbone.macs(), params: params(&g.backbone) },
        StageCost { name: "correlation", macs: cfg.feature_widths[0] as u64 * levels * quarter, params: 0 },
        StageCost { name: "attention", macs: g.attention.macs(), params: params(&g.attention) },
        StageCost { name: "aggregation", macs: g.aggregation.macs(), params: params(&g.aggregation) },
        StageCost { name: "upsample_head", macs: g.upsample_head.macs(), params: params(&g.upsample_head) },
        StageCost { name: "regression", macs: levels * quarter + (UPSAMPLE_NEIGHBORS * ph * pw) as u64, params: 0 },
    ];
    MacBreakdown {
        input_size: (h, w),
        padded_size: (ph, pw),
        total_macs: stages.iter().map(|s| s.macs).sum(),
        total_params: stages.iter().map(|s| s.params).sum(),
        stages,
    }
}

/// Per-layer MACs of the parameterised layers, backbone counted once.
pub fn layer_macs(cfg: &ModelConfig, h: usize, w: usize) -> Vec<(String, u64)> {
    let (ph, pw) = cfg.padded_size(h, w);
    trace_graph(cfg, ph, pw).all_layers().map(|l| (l.name.clone(), l.macs())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Variant;

    #[test]
    fn totals_are_stage_sums() {
        let b = count_macs(&ModelConfig::default(), 540, 960);
        assert_eq!(b.total_macs, b.stages.iter().map(|s| s.macs).sum::<u64>());
        assert_eq!(b.padded_size, (544, 960));
        assert_eq!(b.stage("correlation").unwrap().macs, 48 * 48 * 136 * 240);
    }

    #[test]
    fn params_match_inventory() {
        for v in Variant::ALL {
            let cfg = v.config();
            let inv: u64 = crate::model::inventory(&cfg).iter().map(|p| p.numel() as u64).sum();
            assert_eq!(count_macs(&cfg, 64, 64).total_params, inv);
        }
    }

    #[test]
    fn conv_stages_scale_quadratically() {
        let cfg = ModelConfig::default();
        let (a, b) = (count_macs(&cfg, 128, 192), count_macs(&cfg, 256, 384));
        for name in ["backbone", "attention", "aggregation", "upsample_head", "correlation", "regression"] {
            assert_eq!(4 * a.stage(name).unwrap().macs, b.stage(name).unwrap().macs, "{name}");
        }
    }

    #[test]
    fn variants_are_ordered() {
        let m: Vec<u64> = Variant::ALL.iter().map(|v| count_macs(&v.config(), 540, 960).total_macs).collect();
        assert!(m[0] < m[1] && m[1] < m[2], "{m:?}");
    }

    #[test]
    fn layer_sum_matches_stages() {
        let cfg = ModelConfig::default();
        let b = count_macs(&cfg, 96, 128);
        let layers: u64 = layer_macs(&cfg, 96, 128).iter().map(|l| l.1).sum();
        let conv_stages: u64 =
            ["attention", "aggregation", "upsample_head"].iter().map(|n| b.stage(n).unwrap().macs).sum::<u64>()
                + b.stage("backbone").unwrap().macs / 2;
        assert_eq!(layers, conv_stages);
    }
}
