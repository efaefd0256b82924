//! Report schema. Every map is ordered so the JSON text is reproducible.

use serde::{Deserialize, Serialize};

use super::config::Mode;
use crate::cores::CoreStats;
use crate::ecp::EcpOpCounts;
use crate::memsys::{EnergyReport, LoopOrder};
use crate::reference::FlopsBreakdown;
use crate::ttb::SparsityMetrics;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StratSplit {
    pub theta_s: u32,
    pub dense_features: usize,
    pub sparse_features: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EcpSummary {
    pub q_rows_kept: u64,
    pub k_rows_kept: u64,
    /// Bundle rows considered, summed over heads.
    pub rows: u64,
    pub q_keep_fraction: f64,
    pub k_keep_fraction: f64,
    pub ops: EcpOpCounts,
    /// Largest true score among pruned entries.
    pub max_pruned_score: u32,
}

impl EcpSummary {
    pub fn merge(&mut self, o: &EcpSummary) {
        self.q_rows_kept += o.q_rows_kept;
        self.k_rows_kept += o.k_rows_kept;
        self.rows += o.rows;
        self.ops.merge(&o.ops);
        self.max_pruned_score = self.max_pruned_score.max(o.max_pruned_score);
        self.refresh();
    }

    pub(crate) fn refresh(&mut self) {
        let f = |k: u64| if self.rows == 0 { 1.0 } else { k as f64 / self.rows as f64 };
        self.q_keep_fraction = f(self.q_rows_kept);
        self.k_keep_fraction = f(self.k_rows_kept);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TileSummary {
    pub activation_tiles: u64,
    pub weight_tiles: u64,
    pub order: LoopOrder,
    pub steps: usize,
    pub dram_read_bytes: u64,
    pub dram_write_bytes: u64,
    pub dram_weight_bytes: u64,
    /// Activation bytes read plus written.
    pub dram_activation_bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    pub block: usize,
    /// One of `qkv`, `attention`, `o_proj`, `mlp1`, `mlp2`.
    pub name: String,
    pub d_in: usize,
    pub d_out: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub strat: Option<StratSplit>,
    pub dense: CoreStats,
    pub sparse: CoreStats,
    pub attention: CoreStats,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ecp: Option<EcpSummary>,
    pub stratifier_cycles: u64,
    pub spikegen_cycles: u64,
    /// Core-busy cycles hidden against DRAM transfers.
    pub compute_cycles: u64,
    pub transfer_cycles: u64,
    pub latency_cycles: u64,
    pub tiles: TileSummary,
    pub energy: EnergyReport,
}

impl LayerReport {
    /// Spike bits moved between memory levels: GLB to core plus DRAM.
    pub fn activation_traffic_bits(&self) -> u64 {
        self.dense.activation_bits
            + self.sparse.activation_bits
            + self.attention.activation_bits
            + 8 * self.tiles.dram_activation_bytes
    }

    pub fn weight_glb_reads(&self) -> u64 {
        self.dense.weight_words + self.sparse.weight_words
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub latency_cycles: u64,
    pub energy_pj: f64,
    pub edp: f64,
    pub dense: CoreStats,
    pub sparse: CoreStats,
    pub attention: CoreStats,
    /// Weight-GLB port words read by the projection cores.
    pub weight_glb_reads: u64,
    pub activation_traffic_bits: u64,
    pub dram_read_bytes: u64,
    pub dram_write_bytes: u64,
    pub dense_features: usize,
    pub sparse_features: usize,
    pub dense_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub schema_version: u32,
    pub config_hash: String,
    pub mode: Mode,
    pub bundle: String,
    pub layers: Vec<LayerReport>,
    pub totals: Totals,
    pub energy: EnergyReport,
    pub ecp: EcpSummary,
    pub sparsity: SparsityMetrics,
    pub flops: FlopsBreakdown,
}

impl SimReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> crate::Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Totals recomputed from the layers.
    pub(crate) fn totals_of(layers: &[LayerReport], energy: &EnergyReport) -> Totals {
        let mut dense = CoreStats::default();
        let mut sparse = CoreStats::default();
        let mut attention = CoreStats::default();
        let (mut df, mut sf) = (0, 0);
        for l in layers {
            dense.merge(&l.dense);
            sparse.merge(&l.sparse);
            attention.merge(&l.attention);
            if let Some(s) = &l.strat {
                df += s.dense_features;
                sf += s.sparse_features;
            }
        }
        Totals {
            latency_cycles: layers.iter().map(|l| l.latency_cycles).sum(),
            energy_pj: energy.total_pj,
            edp: energy.edp,
            dense,
            sparse,
            attention,
            weight_glb_reads: layers.iter().map(LayerReport::weight_glb_reads).sum(),
            activation_traffic_bits: layers.iter().map(LayerReport::activation_traffic_bits).sum(),
            dram_read_bytes: layers.iter().map(|l| l.tiles.dram_read_bytes).sum(),
            dram_write_bytes: layers.iter().map(|l| l.tiles.dram_write_bytes).sum(),
            dense_features: df,
            sparse_features: sf,
            dense_fraction: if df + sf == 0 { 0.0 } else { df as f64 / (df + sf) as f64 },
        }
    }
}
