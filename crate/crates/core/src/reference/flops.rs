//! Operation counts of a spiking transformer by component.

use serde::{Deserialize, Serialize};

use super::ModelConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlopsBreakdown {
    /// Fused Q/K/V projection MACs over all blocks.
    pub qkv_macs: u64,
    pub o_proj_macs: u64,
    pub mlp_macs: u64,
    /// `Q.K^T` and `S.V` MACs over all heads and blocks.
    pub attention_macs: u64,
    /// MACs of one `D x D` projection layer in one block, e.g. `W_Q`.
    pub projection_layer_macs: u64,
    pub lif_ops: u64,
    pub total_macs: u64,
    pub attention_fraction: f64,
    /// `qkv + o_proj + mlp` over `total_macs`.
    pub projection_mlp_fraction: f64,
    pub projection_layer_fraction: f64,
}

pub fn flops_breakdown<S>(cfg: &ModelConfig<S>) -> FlopsBreakdown {
    let (l, t, n, d) = (cfg.blocks as u64, cfg.t as u64, cfg.n as u64, cfg.d as u64);
    let hidden = d * cfg.mlp_ratio as u64;
    let tn = t * n;
    let projection_layer_macs = tn * d * d;
    let qkv_macs = l * 3 * projection_layer_macs;
    let o_proj_macs = l * projection_layer_macs;
    let mlp_macs = l * 2 * tn * d * hidden;
    // per head T*N*N*(D/H) for S and again for Y
    let attention_macs = l * 2 * t * n * n * d;
    // q, k, v, attn, ssa_out and mlp_out are D wide; mlp_hidden is hidden wide
    let lif_ops = l * tn * (6 * d + hidden);
    let total_macs = qkv_macs + o_proj_macs + mlp_macs + attention_macs;
    let frac = |x: u64| if total_macs == 0 { 0.0 } else { x as f64 / total_macs as f64 };
    FlopsBreakdown {
        qkv_macs,
        o_proj_macs,
        mlp_macs,
        attention_macs,
        projection_layer_macs,
        lif_ops,
        total_macs,
        attention_fraction: frac(attention_macs),
        projection_mlp_fraction: frac(qkv_macs + o_proj_macs + mlp_macs),
        projection_layer_fraction: frac(projection_layer_macs),
    }
}
