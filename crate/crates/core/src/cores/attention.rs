//! Reconfigurable attention core.
//!
//! Mode 1 keeps scores stationary in the PEs while Q bundles stream along
//! rows and K token groups (one token over the bundle's time points) down
//! columns, AND-accumulating one feature per cycle.
//! Mode 2 reuses the resident scores: V bundles stream down the columns and
//! partial `Y` sums flow out along the rows into the Y bundle buffers.

use serde::{Deserialize, Serialize};

use super::CoreStats;
use crate::ecp::PruneMask;
use crate::error::{shape_err, Result, SimError};
use crate::memsys::{EventKind, MemConfig, MemSys};
use crate::scalar::Scalar;
use crate::tensor::Tensor3;
use crate::ttb::SpikeTensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttnCoreConfig {
    /// PE rows, Q bundle rows per tile.
    pub rows: usize,
    /// PE columns, K token groups per tile.
    pub cols: usize,
    /// Spikes one PE can AND or select per cycle.
    pub lanes: usize,
    /// Time points per PE; defaults to the bundle's time extent.
    pub groups: Option<usize>,
    /// Width of the score registers.
    pub s_bits: u32,
    pub mode_switch_cycles: u64,
    pub e_and_pj: f64,
    pub e_sac_pj: f64,
}

impl Default for AttnCoreConfig {
    fn default() -> Self {
        Self {
            rows: 16,
            cols: 32,
            lanes: 10,
            groups: None,
            s_bits: 8,
            mode_switch_cycles: 1,
            e_and_pj: 0.03,
            e_sac_pj: 0.03,
        }
    }
}

impl AttnCoreConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 || self.lanes == 0 {
            return Err(SimError::Config("attn.rows, cols and lanes must be >= 1".into()));
        }
        if !(6..=10).contains(&self.s_bits) {
            return Err(SimError::Config(format!("attn.s_bits {} outside 6..=10", self.s_bits)));
        }
        if self.groups == Some(0) {
            return Err(SimError::Config("attn.groups must be >= 1".into()));
        }
        if !(self.e_and_pj >= 0.0 && self.e_sac_pj >= 0.0) {
            return Err(SimError::Config("attn energies must be >= 0".into()));
        }
        Ok(())
    }

    /// Scores of a `head_dim`-wide head must fit the score registers.
    pub fn check_head_dim(&self, head_dim: usize) -> Result<()> {
        let max = (1usize << self.s_bits) - 1;
        if head_dim > max {
            return Err(SimError::Config(format!(
                "head dim {head_dim} overflows {}-bit scores (max {max})",
                self.s_bits
            )));
        }
        Ok(())
    }
}

/// One array mapping of one time bundle: kept Q bundle rows on the PE rows,
/// tokens of kept K bundle rows on the columns.
#[derive(Clone, Debug, PartialEq)]
pub struct AttnTile {
    pub bt: usize,
    pub q_rows: Vec<usize>,
    pub k_tokens: Vec<usize>,
}

/// Tiles covering every kept `(Q row, K token)` pair, time bundle by time bundle.
pub fn attention_tiles(mask: &PruneMask, cfg: &AttnCoreConfig) -> Vec<AttnTile> {
    let (bs_n, n_bn) = (mask.shape.bs_n, mask.n.div_ceil(mask.shape.bs_n));
    let mut tiles = Vec::new();
    for bt in 0..mask.n_bt {
        let q: Vec<usize> = (0..n_bn).filter(|&bn| mask.keep_q[bn * mask.n_bt + bt]).collect();
        let k: Vec<usize> = (0..n_bn)
            .filter(|&bn| mask.keep_k[bn * mask.n_bt + bt])
            .flat_map(|bn| bn * bs_n..((bn + 1) * bs_n).min(mask.n))
            .collect();
        for qc in q.chunks(cfg.rows) {
            for kc in k.chunks(cfg.cols) {
                tiles.push(AttnTile {
                    bt,
                    q_rows: qc.to_vec(),
                    k_tokens: kc.to_vec(),
                });
            }
        }
    }
    tiles
}

struct TileGeometry {
    times: std::ops::Range<usize>,
    q_tokens: Vec<usize>,
}

fn geometry(mask: &PruneMask, tile: &AttnTile) -> TileGeometry {
    let (bs_t, bs_n) = (mask.shape.bs_t, mask.shape.bs_n);
    TileGeometry {
        times: tile.bt * bs_t..((tile.bt + 1) * bs_t).min(mask.t),
        q_tokens: tile
            .q_rows
            .iter()
            .flat_map(|&bn| bn * bs_n..((bn + 1) * bs_n).min(mask.n))
            .collect(),
    }
}

/// Each feature step ANDs one Q bundle with one K token group inside a PE,
/// `volume` spikes at most `lanes` per cycle.
fn skew_cycles(tile: &AttnTile, head_dim: usize, volume: usize, lanes: usize) -> u64 {
    ((tile.q_rows.len() - 1) + (tile.k_tokens.len() - 1) + head_dim * volume.div_ceil(lanes)) as u64
}

/// Mode 1: scores of one head on kept pairs; pruned entries stay zero.
pub fn simulate_mode1<S: Scalar>(
    q: &SpikeTensor,
    k: &SpikeTensor,
    mask: &PruneMask,
    cfg: &AttnCoreConfig,
    mem_cfg: &MemConfig,
    mem: &mut MemSys,
) -> Result<(Tensor3<S>, CoreStats)> {
    let (t, n, dh) = q.dims();
    if k.dims() != q.dims() || mask.t != t || mask.n != n {
        return shape_err(format!("Q {:?}, K {:?}, mask {}x{}", q.dims(), k.dims(), mask.t, mask.n));
    }
    cfg.check_head_dim(dh)?;
    let volume = mask.shape.volume() as u64;
    let mut s = Tensor3::zeros(t, n, n);
    let mut st = CoreStats::default();
    for tile in attention_tiles(mask, cfg) {
        let g = geometry(mask, &tile);
        let mut entries = 0u64;
        for ti in g.times.clone() {
            for &qi in &g.q_tokens {
                for &ki in &tile.k_tokens {
                    let dot = (0..dh).filter(|&d| q.get(ti, qi, d) && k.get(ti, ki, d)).count() as u32;
                    s.set(ti, qi, ki, S::from_count(dot));
                    entries += 1;
                }
            }
        }
        let q_bits = (tile.q_rows.len() * dh) as u64 * volume;
        let k_bits = (tile.k_tokens.len() * dh * mask.shape.bs_t) as u64;
        let words = mem_cfg.ttb_words(q_bits) + mem_cfg.ttb_words(k_bits);
        st.cycles += skew_cycles(&tile, dh, mask.shape.volume(), cfg.lanes);
        st.tiles += 1;
        st.ops += entries * dh as u64;
        st.activation_bits += q_bits + k_bits;
        st.activation_words += words;
        st.register_accesses += entries;
        mem.record(EventKind::TtbGlbRead, words);
        mem.record(EventKind::RegisterAccess, entries);
    }
    st.compute_pj = cfg.e_and_pj * st.ops as f64;
    Ok((s, st))
}

/// Mode 2: `Y = (S . V) * 2^-s_shift` on kept query rows, zero elsewhere.
pub fn simulate_mode2<S: Scalar>(
    s: &Tensor3<S>,
    v: &SpikeTensor,
    mask: &PruneMask,
    s_shift: u32,
    cfg: &AttnCoreConfig,
    mem_cfg: &MemConfig,
    mem: &mut MemSys,
) -> Result<(Tensor3<S>, CoreStats)> {
    let (t, n, dh) = v.dims();
    if s.dims() != (t, n, n) || mask.t != t || mask.n != n {
        return shape_err(format!(
            "scores {:?} do not pair with V {:?} under mask {}x{}",
            s.dims(),
            v.dims(),
            mask.t,
            mask.n
        ));
    }
    let mut acc: Tensor3<S> = Tensor3::zeros(t, n, dh);
    let mut st = CoreStats::default();
    for tile in attention_tiles(mask, cfg) {
        let g = geometry(mask, &tile);
        let mut pairs = 0u64;
        for ti in g.times.clone() {
            for &qi in &g.q_tokens {
                for &ki in &tile.k_tokens {
                    let sv = s.get(ti, qi, ki);
                    pairs += 1;
                    for j in 0..dh {
                        if v.get(ti, ki, j) {
                            acc.add_at(ti, qi, j, sv);
                        }
                    }
                }
            }
        }
        let v_bits = (tile.k_tokens.len() * dh * mask.shape.bs_t) as u64;
        let v_words = mem_cfg.ttb_words(v_bits);
        let y_partials = (g.times.len() * g.q_tokens.len() * dh) as u64;
        st.cycles += cfg.mode_switch_cycles + skew_cycles(&tile, dh, mask.shape.volume(), cfg.lanes);
        st.tiles += 1;
        st.ops += pairs * dh as u64;
        st.activation_bits += v_bits;
        st.activation_words += v_words;
        st.register_accesses += y_partials;
        mem.record(EventKind::TtbGlbRead, v_words);
        mem.record(EventKind::RegisterAccess, y_partials);
    }

    // shifter at readout, only rows that were kept are written back
    let mut y = Tensor3::zeros(t, n, dh);
    for ti in 0..t {
        for qi in mask.kept_q_tokens(ti) {
            for j in 0..dh {
                y.set(ti, qi, j, acc.get(ti, qi, j).scale_pow2(s_shift));
            }
            st.psum_writebacks += dh as u64;
        }
    }
    st.compute_pj = cfg.e_sac_pj * st.ops as f64;
    Ok((y, st))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ecp::{ecp_prune, mask_op_counts, pruned_attention, EcpConfig};
    use crate::memsys::EnergyTable;
    use crate::ttb::{pack_ttb, BundleShape};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mem() -> MemSys {
        MemSys::new(EnergyTable::default())
    }

    fn spikes(rng: &mut ChaCha8Rng, t: usize, n: usize, d: usize, p: f64) -> SpikeTensor {
        SpikeTensor::from_fn(t, n, d, |_, _, _| rng.random_bool(p)).unwrap()
    }

    #[test]
    fn full_tile_cycles() {
        // 16 Q bundle rows x 32 K tokens, head dim 64
        let shape = BundleShape::new(1, 1).unwrap();
        let mask = PruneMask::keep_all(1, 32, shape);
        let cfg = AttnCoreConfig::default();
        let tiles = attention_tiles(&mask, &cfg);
        assert_eq!(tiles.len(), 2);
        assert_eq!(skew_cycles(&tiles[0], 64, 1, cfg.lanes), 110);
        let q = SpikeTensor::zeros(1, 32, 64).unwrap();
        let (_, st) = simulate_mode1::<i32>(&q, &q, &mask, &cfg, &MemConfig::default(), &mut mem()).unwrap();
        assert_eq!(st.cycles, 220);
    }

    #[test]
    fn total_pruning_costs_nothing() {
        let mut mask = PruneMask::keep_all(2, 8, BundleShape::new(1, 2).unwrap());
        mask.keep_q.iter_mut().for_each(|k| *k = false);
        let q = SpikeTensor::zeros(2, 8, 4).unwrap();
        let (s, st) = simulate_mode1::<i32>(&q, &q, &mask, &AttnCoreConfig::default(), &MemConfig::default(), &mut mem())
            .unwrap();
        assert_eq!(st.ops, 0);
        assert_eq!(st.cycles, 0);
        assert!(s.as_slice().iter().all(|&x| x == 0));
    }

    #[test]
    fn identity_scores_pass_values() {
        let mask = PruneMask::keep_all(1, 3, BundleShape::new(1, 1).unwrap());
        let s = Tensor3::from_fn(1, 3, 3, |_, a, b| (a == b) as i32);
        let v = SpikeTensor::from_fn(1, 3, 2, |_, n, d| (n + d) % 2 == 0).unwrap();
        let (y, _) = simulate_mode2(&s, &v, &mask, 0, &AttnCoreConfig::default(), &MemConfig::default(), &mut mem())
            .unwrap();
        for n in 0..3 {
            for d in 0..2 {
                assert_eq!(y.get(0, n, d), v.get(0, n, d) as i32);
            }
        }
    }

    #[test]
    fn readout_shift_floors() {
        let mask = PruneMask::keep_all(1, 4, BundleShape::new(1, 2).unwrap());
        let s = Tensor3::from_fn(1, 4, 4, |_, a, b| (a * 7 + b * 3) as i32 % 11);
        let v = SpikeTensor::from_fn(1, 4, 3, |_, _, _| true).unwrap();
        let cfg = AttnCoreConfig::default();
        let (raw, _) = simulate_mode2(&s, &v, &mask, 0, &cfg, &MemConfig::default(), &mut mem()).unwrap();
        let (y, _) = simulate_mode2(&s, &v, &mask, 3, &cfg, &MemConfig::default(), &mut mem()).unwrap();
        for (a, b) in raw.as_slice().iter().zip(y.as_slice()) {
            assert_eq!(*b, a.div_euclid(8));
        }
    }

    #[test]
    fn overflowing_head_dim_rejected() {
        let cfg = AttnCoreConfig { s_bits: 6, ..AttnCoreConfig::default() };
        assert!(cfg.check_head_dim(63).is_ok());
        assert!(cfg.check_head_dim(64).is_err());
        assert!(AttnCoreConfig { s_bits: 11, ..cfg }.validate().is_err());
    }

    #[test]
    fn mode_shapes_must_agree() {
        let mask = PruneMask::keep_all(1, 3, BundleShape::new(1, 1).unwrap());
        let s: Tensor3<i32> = Tensor3::zeros(1, 3, 4);
        let v = SpikeTensor::zeros(1, 3, 2).unwrap();
        let r = simulate_mode2(&s, &v, &mask, 0, &AttnCoreConfig::default(), &MemConfig::default(), &mut mem());
        assert!(matches!(r, Err(SimError::Shape(_))));
    }

    proptest! {
        #[test]
        fn matches_pruned_oracle(seed in any::<u64>(), theta in 0u32..5, bt in 1usize..3, bn in 1usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (t, n, dh) = (rng.random_range(1..6), rng.random_range(1..40), rng.random_range(1..12));
            let q = spikes(&mut rng, t, n, dh, 0.2);
            let k = spikes(&mut rng, t, n, dh, 0.2);
            let v = spikes(&mut rng, t, n, dh, 0.5);
            let shape = BundleShape::new(bt, bn).unwrap();
            let mask = ecp_prune(&pack_ttb(q.clone(), shape), &pack_ttb(k.clone(), shape), &EcpConfig::uniform(theta)).unwrap();
            let cfg = AttnCoreConfig { rows: 3, cols: 4, ..AttnCoreConfig::default() };
            let mc = MemConfig::default();
            let (s, st1) = simulate_mode1::<i32>(&q, &k, &mask, &cfg, &mc, &mut mem()).unwrap();
            let (y, st2) = simulate_mode2(&s, &v, &mask, 1, &cfg, &mc, &mut mem()).unwrap();
            let (s_ref, y_ref, counts) = pruned_attention::<i32>(&q, &k, &v, &mask, 1).unwrap();
            prop_assert_eq!(&s, &s_ref);
            prop_assert_eq!(&y, &y_ref);
            prop_assert_eq!(st1.ops, counts.s_macs);
            prop_assert_eq!(st2.ops, mask_op_counts(&mask, dh).s_macs);
            // S-stationary: one register write per resident score
            prop_assert_eq!(st1.register_accesses * dh as u64, st1.ops);
            // reuse: each tile reads its Q and K rows once, where fetching
            // per PE would read them once per pair
            let vol = shape.volume() as u64;
            let mut reused = 0;
            let mut per_pair = 0;
            for tile in attention_tiles(&mask, &cfg) {
                let (r, c) = (tile.q_rows.len() as u64, tile.k_tokens.len() as u64);
                let q_bits = r * dh as u64 * vol;
                let k_bits = c * dh as u64 * bt as u64;
                reused += q_bits + k_bits;
                // without reuse every PE row fetches its own K groups
                per_pair += q_bits + r * k_bits;
            }
            prop_assert_eq!(st1.activation_bits, reused);
            prop_assert!(reused <= per_pair);
        }
    }
}
