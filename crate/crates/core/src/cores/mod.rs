//! Cycle and energy models of the dense, sparse and attention cores.

pub mod attention;
pub mod dense;
pub mod sparse;

use serde::{Deserialize, Serialize};

use crate::stratifier::WorkEstimator;
use crate::ttb::TtbGrid;

pub use attention::{simulate_mode1, simulate_mode2, AttnCoreConfig};
pub use dense::{simulate_dense, DenseCoreConfig};
pub use sparse::{simulate_sparse, SparseCoreConfig};

/// Counters of one core over one layer (or a sum of layers).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CoreStats {
    pub cycles: u64,
    pub tiles: u64,
    /// Select- or and-accumulate operations.
    pub ops: u64,
    /// Weight elements read from the weight GLB.
    pub weight_reads: u64,
    /// Weight-GLB port words behind `weight_reads`.
    pub weight_words: u64,
    /// Spike bits read from the TTB GLBs, bundle padding included.
    pub activation_bits: u64,
    pub activation_words: u64,
    /// Output partial sums handed to the output buffers.
    pub psum_writebacks: u64,
    pub register_accesses: u64,
    pub compute_pj: f64,
}

impl CoreStats {
    /// Sum counters; cycles add as for sequential execution.
    pub fn merge(&mut self, o: &CoreStats) {
        self.cycles += o.cycles;
        self.tiles += o.tiles;
        self.ops += o.ops;
        self.weight_reads += o.weight_reads;
        self.weight_words += o.weight_words;
        self.activation_bits += o.activation_bits;
        self.activation_words += o.activation_words;
        self.psum_writebacks += o.psum_writebacks;
        self.register_accesses += o.register_accesses;
        self.compute_pj += o.compute_pj;
    }
}

/// Compute-cycle estimates of the two projection cores for a layer with
/// `d_out` outputs, used to balance the stratification.
#[derive(Clone, Copy, Debug)]
pub struct CoreWorkEstimator {
    pub dense: DenseCoreConfig,
    pub sparse: SparseCoreConfig,
    pub d_out: usize,
}

impl WorkEstimator for CoreWorkEstimator {
    fn dense_work(&self, grid: &TtbGrid, features: &[usize]) -> u64 {
        dense::tile_cycles(
            &self.dense,
            grid.bundles_per_feature(),
            features.len(),
            self.d_out,
            grid.shape().volume(),
        )
    }

    fn sparse_work(&self, grid: &TtbGrid, features: &[usize]) -> u64 {
        let costs = sparse::item_costs(&self.sparse, grid, features, self.d_out);
        let total: u64 = costs.iter().sum();
        let max = costs.iter().copied().max().unwrap_or(0);
        total.div_ceil(self.sparse.units as u64).max(max)
    }
}
