//! Output-stationary dense core: a grid of PEs, one bundle per row and one
//! output feature per column, each accumulating selected weights.

use serde::{Deserialize, Serialize};

use super::CoreStats;
use crate::error::{shape_err, Result, SimError};
use crate::memsys::{EventKind, MemConfig, MemSys};
use crate::scalar::Scalar;
use crate::tensor::{Matrix, Tensor3};
use crate::ttb::TtbGrid;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenseCoreConfig {
    /// PE rows, bundles per tile.
    pub rows: usize,
    /// PE columns, output features per tile.
    pub cols: usize,
    /// Spikes a PE consumes per cycle.
    pub lanes: usize,
    /// Energy per occupied PE-cycle.
    pub e_pe_pj: f64,
}

impl Default for DenseCoreConfig {
    fn default() -> Self {
        Self {
            rows: 16,
            cols: 32,
            lanes: 10,
            e_pe_pj: 0.96,
        }
    }
}

impl DenseCoreConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 || self.lanes == 0 {
            return Err(SimError::Config("dense.rows, cols and lanes must be >= 1".into()));
        }
        if self.e_pe_pj.is_nan() || self.e_pe_pj < 0.0 {
            return Err(SimError::Config("dense.e_pe_pj must be >= 0".into()));
        }
        Ok(())
    }
}

/// Skew fill, accumulation over every input feature, row-by-row drain.
#[inline]
fn one_tile(r_t: usize, c_t: usize, d_in: usize, volume: usize, lanes: usize) -> u64 {
    ((r_t - 1) + (c_t - 1) + d_in * volume.div_ceil(lanes) + r_t) as u64
}

/// Tile extents `(start, len)` covering `total` in steps of `step`.
fn spans(total: usize, step: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..total.div_ceil(step)).map(move |i| (i * step, step.min(total - i * step)))
}

/// Total cycles for `bundles x d_out` outputs over `d_in` inputs.
pub fn tile_cycles(cfg: &DenseCoreConfig, bundles: usize, d_in: usize, d_out: usize, volume: usize) -> u64 {
    if bundles == 0 || d_in == 0 || d_out == 0 {
        return 0;
    }
    let mut cycles = 0;
    for (_, r_t) in spans(bundles, cfg.rows) {
        for (_, c_t) in spans(d_out, cfg.cols) {
            cycles += one_tile(r_t, c_t, d_in, volume, cfg.lanes);
        }
    }
    cycles
}

/// Simulate `X_D . W_D` on the dense core.
pub fn simulate_dense<S: Scalar>(
    x: &TtbGrid,
    w: &Matrix<S>,
    cfg: &DenseCoreConfig,
    mem_cfg: &MemConfig,
    weight_bits: u32,
    mem: &mut MemSys,
) -> Result<(Tensor3<S>, CoreStats)> {
    let d_in = x.features();
    if w.rows() != d_in {
        return shape_err(format!("W_D has {} rows for {d_in} dense features", w.rows()));
    }
    let (t, n, _) = x.backing().dims();
    let d_out = w.cols();
    let mut psum = Tensor3::zeros(t, n, d_out);
    let mut st = CoreStats::default();
    let bundles = x.bundles_per_feature();
    if d_in == 0 || d_out == 0 {
        return Ok((psum, st));
    }
    let volume = x.shape().volume();
    let backing = x.backing();

    for (p0, r_t) in spans(bundles, cfg.rows) {
        for (c0, c_t) in spans(d_out, cfg.cols) {
            let cycles = one_tile(r_t, c_t, d_in, volume, cfg.lanes);
            let mut cells = 0u64;
            for pos in p0..p0 + r_t {
                let (bn, bt) = x.coords(pos);
                let (tr, nr) = x.extent(bn, bt);
                cells += x.cells(bn, bt) as u64;
                for ti in tr.clone() {
                    for ni in nr.clone() {
                        let out = &mut psum.row_mut(ti, ni)[c0..c0 + c_t];
                        for f in 0..d_in {
                            if backing.get(ti, ni, f) {
                                for (o, &wv) in out.iter_mut().zip(&w.row(f)[c0..c0 + c_t]) {
                                    *o += wv;
                                }
                            }
                        }
                    }
                }
            }
            let weight_elems = (d_in * c_t) as u64;
            let weight_words = mem_cfg.weight_words(weight_elems * weight_bits as u64);
            let act_bits = (r_t * d_in * volume) as u64;
            let act_words = mem_cfg.ttb_words(act_bits);
            let writebacks = cells * c_t as u64;

            st.cycles += cycles;
            st.tiles += 1;
            st.ops += cells * (d_in * c_t) as u64;
            st.weight_reads += weight_elems;
            st.weight_words += weight_words;
            st.activation_bits += act_bits;
            st.activation_words += act_words;
            st.psum_writebacks += writebacks;
            st.register_accesses += writebacks;
            st.compute_pj += cfg.e_pe_pj * (r_t * c_t) as f64 * cycles as f64;

            mem.record(EventKind::WeightGlbRead, weight_words);
            mem.record(EventKind::TtbGlbRead, act_words);
            mem.record(EventKind::RegisterAccess, writebacks);
        }
    }
    Ok((psum, st))
}
