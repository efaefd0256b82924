//! Sparse core: independent bundle units that touch only active bundles.
//!
//! Each active `(bundle, feature)` pair is one work item. Items are list
//! scheduled longest-first onto the units; the layer takes the makespan.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use super::CoreStats;
use crate::error::{shape_err, Result, SimError};
use crate::memsys::{EventKind, MemConfig, MemSys};
use crate::scalar::Scalar;
use crate::tensor::{Matrix, Tensor3};
use crate::ttb::TtbGrid;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SparseCoreConfig {
    /// Parallel bundle units.
    pub units: usize,
    /// Output features a unit updates per cycle.
    pub out_par: usize,
    /// Dispatch cycles per work item.
    pub overhead: u64,
    /// Energy per spike-output accumulate.
    pub e_op_pj: f64,
}

impl Default for SparseCoreConfig {
    fn default() -> Self {
        Self {
            units: 128,
            out_par: 8,
            overhead: 1,
            e_op_pj: 0.141,
        }
    }
}

impl SparseCoreConfig {
    pub fn validate(&self) -> Result<()> {
        if self.units == 0 || self.out_par == 0 {
            return Err(SimError::Config("sparse.units and out_par must be >= 1".into()));
        }
        if self.e_op_pj.is_nan() || self.e_op_pj < 0.0 {
            return Err(SimError::Config("sparse.e_op_pj must be >= 0".into()));
        }
        Ok(())
    }

    fn passes(&self, d_out: usize) -> u64 {
        d_out.div_ceil(self.out_par) as u64
    }

    fn item_cost(&self, z: u16, d_out: usize) -> u64 {
        z as u64 * self.passes(d_out) + self.overhead
    }
}

/// Costs of the work items among `features` of `grid`.
pub fn item_costs(cfg: &SparseCoreConfig, grid: &TtbGrid, features: &[usize], d_out: usize) -> Vec<u64> {
    if d_out == 0 {
        return Vec::new();
    }
    let mut out = Vec::new();
    for pos in 0..grid.bundles_per_feature() {
        let tags = grid.position_tags(pos);
        for &f in features {
            if tags[f] > 0 {
                out.push(cfg.item_cost(tags[f], d_out));
            }
        }
    }
    out
}

/// Longest-processing-time list schedule. Items are taken by decreasing
/// cost, equal costs in index order, each onto the least-loaded unit (lowest
/// index on ties). Returns the unit each item ran on and the unit loads.
pub fn lpt_schedule(costs: &[u64], units: usize) -> (Vec<usize>, Vec<u64>) {
    let mut order: Vec<usize> = (0..costs.len()).collect();
    order.sort_by_key(|&i| (Reverse(costs[i]), i));
    let mut heap: BinaryHeap<Reverse<(u64, usize)>> = (0..units).map(|u| Reverse((0, u))).collect();
    let mut assignment = vec![0; costs.len()];
    let mut loads = vec![0; units];
    for i in order {
        let Reverse((load, u)) = heap.pop().expect("at least one unit");
        assignment[i] = u;
        loads[u] = load + costs[i];
        heap.push(Reverse((loads[u], u)));
    }
    (assignment, loads)
}

/// Simulate `X_S . W_S` on the sparse core.
pub fn simulate_sparse<S: Scalar>(
    x: &TtbGrid,
    w: &Matrix<S>,
    cfg: &SparseCoreConfig,
    mem_cfg: &MemConfig,
    weight_bits: u32,
    mem: &mut MemSys,
) -> Result<(Tensor3<S>, CoreStats)> {
    let d_in = x.features();
    if w.rows() != d_in {
        return shape_err(format!("W_S has {} rows for {d_in} sparse features", w.rows()));
    }
    let (t, n, _) = x.backing().dims();
    let d_out = w.cols();
    let mut psum = Tensor3::zeros(t, n, d_out);
    let mut st = CoreStats::default();
    if d_in == 0 || d_out == 0 {
        return Ok((psum, st));
    }

    // items in (bundle, feature) order
    let mut items = Vec::new();
    for pos in 0..x.bundles_per_feature() {
        for f in 0..d_in {
            let z = x.tag_at(pos, f);
            if z > 0 {
                items.push((pos, f, z));
            }
        }
    }
    let costs: Vec<u64> = items.iter().map(|&(_, _, z)| cfg.item_cost(z, d_out)).collect();
    let (_, loads) = lpt_schedule(&costs, cfg.units);

    let backing = x.backing();
    let volume = x.shape().volume() as u64;
    for &(pos, f, z) in &items {
        let (bn, bt) = x.coords(pos);
        let (tr, nr) = x.extent(bn, bt);
        let wrow = w.row(f);
        for ti in tr {
            for ni in nr.clone() {
                if backing.get(ti, ni, f) {
                    for (o, &wv) in psum.row_mut(ti, ni).iter_mut().zip(wrow) {
                        *o += wv;
                    }
                }
            }
        }
        let accs = z as u64 * d_out as u64;
        st.ops += accs;
        st.weight_reads += d_out as u64;
        st.activation_bits += volume;
        st.psum_writebacks += accs;
    }
    st.tiles = items.len() as u64;
    st.cycles = loads.iter().copied().max().unwrap_or(0);
    // the distribution network packs row fetches into full port words
    st.weight_words = mem_cfg.weight_words(st.weight_reads * weight_bits as u64);
    st.activation_words = mem_cfg.ttb_words(st.activation_bits);
    st.register_accesses = st.psum_writebacks;
    st.compute_pj = cfg.e_op_pj * st.ops as f64;

    mem.record(EventKind::WeightGlbRead, st.weight_words);
    mem.record(EventKind::TtbGlbRead, st.activation_words);
    mem.record(EventKind::RegisterAccess, st.register_accesses);
    Ok((psum, st))
}
