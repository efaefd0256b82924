//! Error-constrained pruning of Q and K bundle rows.
//!
//! A bundle row is one `(bn, bt)` position across all features of a head.
//! Rows with fewer than `theta` active bundles are dropped; every score they
//! would have contributed is bounded by their active count.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result, SimError};
use crate::scalar::Scalar;
use crate::tensor::Tensor3;
use crate::ttb::{BundleShape, SpikeTensor, TtbGrid};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EcpConfig {
    #[serde(default)]
    pub theta_q: u32,
    #[serde(default)]
    pub theta_k: u32,
}

impl EcpConfig {
    pub fn uniform(theta: u32) -> Self {
        Self {
            theta_q: theta,
            theta_k: theta,
        }
    }

    pub fn is_disabled(&self) -> bool {
        self.theta_q == 0 && self.theta_k == 0
    }
}

/// Active-feature count per bundle row, indexed like [`TtbGrid::position`].
pub fn row_active_counts(grid: &TtbGrid) -> Vec<u32> {
    (0..grid.bundles_per_feature())
        .map(|pos| grid.position_tags(pos).iter().filter(|&&z| z > 0).count() as u32)
        .collect()
}

/// Keep/prune decision for every Q and K bundle row of one head.
#[derive(Clone, Debug, PartialEq)]
pub struct PruneMask {
    pub shape: BundleShape,
    pub t: usize,
    pub n: usize,
    pub n_bt: usize,
    pub keep_q: Vec<bool>,
    pub keep_k: Vec<bool>,
    pub n_ab_q: Vec<u32>,
    pub n_ab_k: Vec<u32>,
}

impl PruneMask {
    /// Mask that keeps every row.
    pub fn keep_all(t: usize, n: usize, shape: BundleShape) -> Self {
        let rows = t.div_ceil(shape.bs_t) * n.div_ceil(shape.bs_n);
        Self {
            shape,
            t,
            n,
            n_bt: t.div_ceil(shape.bs_t),
            keep_q: vec![true; rows],
            keep_k: vec![true; rows],
            n_ab_q: vec![0; rows],
            n_ab_k: vec![0; rows],
        }
    }

    /// Bundle row holding token `n` at time `t`.
    #[inline]
    pub fn row_of(&self, t: usize, n: usize) -> usize {
        (n / self.shape.bs_n) * self.n_bt + t / self.shape.bs_t
    }

    #[inline]
    pub fn q_kept(&self, t: usize, n: usize) -> bool {
        self.keep_q[self.row_of(t, n)]
    }

    #[inline]
    pub fn k_kept(&self, t: usize, m: usize) -> bool {
        self.keep_k[self.row_of(t, m)]
    }

    /// Whether score `S[t][n][m]` is computed.
    #[inline]
    pub fn s_computed(&self, t: usize, n: usize, m: usize) -> bool {
        self.q_kept(t, n) && self.k_kept(t, m)
    }

    pub fn kept_q_rows(&self) -> usize {
        self.keep_q.iter().filter(|&&k| k).count()
    }

    pub fn kept_k_rows(&self) -> usize {
        self.keep_k.iter().filter(|&&k| k).count()
    }

    pub fn q_keep_fraction(&self) -> f64 {
        self.kept_q_rows() as f64 / self.keep_q.len() as f64
    }

    pub fn k_keep_fraction(&self) -> f64 {
        self.kept_k_rows() as f64 / self.keep_k.len() as f64
    }

    /// Kept query tokens at time `t`, ascending.
    pub fn kept_q_tokens(&self, t: usize) -> Vec<usize> {
        (0..self.n).filter(|&n| self.q_kept(t, n)).collect()
    }

    pub fn kept_k_tokens(&self, t: usize) -> Vec<usize> {
        (0..self.n).filter(|&m| self.k_kept(t, m)).collect()
    }
}

fn keep_rows(n_ab: &[u32], theta: u32) -> Vec<bool> {
    n_ab.iter().map(|&c| c >= theta).collect()
}

/// Prune Q and K bundle rows of one head.
pub fn ecp_prune(q: &TtbGrid, k: &TtbGrid, cfg: &EcpConfig) -> Result<PruneMask> {
    if q.shape() != k.shape() {
        return shape_err(format!(
            "Q bundles {} differ from K bundles {}",
            q.shape(),
            k.shape()
        ));
    }
    if q.backing().dims() != k.backing().dims() {
        return shape_err(format!(
            "Q is {:?}, K is {:?}",
            q.backing().dims(),
            k.backing().dims()
        ));
    }
    let (t, n, _) = q.backing().dims();
    let n_ab_q = row_active_counts(q);
    let n_ab_k = row_active_counts(k);
    Ok(PruneMask {
        shape: q.shape(),
        t,
        n,
        n_bt: q.n_bt(),
        keep_q: keep_rows(&n_ab_q, cfg.theta_q),
        keep_k: keep_rows(&n_ab_k, cfg.theta_k),
        n_ab_q,
        n_ab_k,
    })
}

/// Work performed under a mask next to the unpruned baseline.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EcpOpCounts {
    /// AND-accumulates forming `S`.
    pub s_macs: u64,
    pub s_macs_baseline: u64,
    /// Value bits fetched, one `D/H` row per kept key token.
    pub v_reads: u64,
    pub v_reads_baseline: u64,
    /// Output elements written back, one `D/H` row per kept query token.
    pub y_writebacks: u64,
    pub y_writebacks_baseline: u64,
}

impl EcpOpCounts {
    pub fn merge(&mut self, o: &Self) {
        self.s_macs += o.s_macs;
        self.s_macs_baseline += o.s_macs_baseline;
        self.v_reads += o.v_reads;
        self.v_reads_baseline += o.v_reads_baseline;
        self.y_writebacks += o.y_writebacks;
        self.y_writebacks_baseline += o.y_writebacks_baseline;
    }

    pub fn s_fraction(&self) -> f64 {
        if self.s_macs_baseline == 0 {
            0.0
        } else {
            self.s_macs as f64 / self.s_macs_baseline as f64
        }
    }
}

/// Op counts implied by a mask for a head of width `dh`.
pub fn mask_op_counts(mask: &PruneMask, dh: usize) -> EcpOpCounts {
    let dh = dh as u64;
    let mut c = EcpOpCounts::default();
    for t in 0..mask.t {
        let kq = mask.kept_q_tokens(t).len() as u64;
        let kk = mask.kept_k_tokens(t).len() as u64;
        let n = mask.n as u64;
        c.s_macs += kq * kk * dh;
        c.s_macs_baseline += n * n * dh;
        c.v_reads += kk * dh;
        c.v_reads_baseline += n * dh;
        c.y_writebacks += kq * dh;
        c.y_writebacks_baseline += n * dh;
    }
    c
}

/// Attention output of one head computed only where the mask allows.
/// Returns the pruned scores (zeros where skipped), `Y` scaled by
/// `2^-s_shift`, and the op counts.
pub fn pruned_attention<S: Scalar>(
    q: &SpikeTensor,
    k: &SpikeTensor,
    v: &SpikeTensor,
    mask: &PruneMask,
    s_shift: u32,
) -> Result<(Tensor3<S>, Tensor3<S>, EcpOpCounts)> {
    let (t, n, dh) = q.dims();
    if k.dims() != q.dims() || v.dims() != q.dims() {
        return shape_err(format!(
            "Q {:?}, K {:?}, V {:?} differ",
            q.dims(),
            k.dims(),
            v.dims()
        ));
    }
    if mask.t != t || mask.n != n {
        return shape_err(format!(
            "mask covers {}x{}, tensors are {t}x{n}",
            mask.t, mask.n
        ));
    }
    let mut s = Tensor3::zeros(t, n, n);
    let mut y = Tensor3::zeros(t, n, dh);
    let mut acc = vec![S::zero(); dh];
    for ti in 0..t {
        let kept_k = mask.kept_k_tokens(ti);
        for qi in mask.kept_q_tokens(ti) {
            acc.iter_mut().for_each(|a| *a = S::zero());
            for &ki in &kept_k {
                let dot = (0..dh).filter(|&d| q.get(ti, qi, d) && k.get(ti, ki, d)).count() as u32;
                let sv = S::from_count(dot);
                s.set(ti, qi, ki, sv);
                for (j, a) in acc.iter_mut().enumerate() {
                    if v.get(ti, ki, j) {
                        *a += sv;
                    }
                }
            }
            for (j, &a) in acc.iter().enumerate() {
                y.set(ti, qi, j, a.scale_pow2(s_shift));
            }
        }
    }
    Ok((s, y, mask_op_counts(mask, dh)))
}

/// Largest true score dropped by pruning, per side.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PruningError {
    pub max_q: u32,
    pub max_k: u32,
}

/// Measure the error pruning introduced against the full scores and fail if
/// it reaches either threshold.
pub fn error_bound_check<S: Scalar>(
    full_s: &Tensor3<S>,
    mask: &PruneMask,
    cfg: &EcpConfig,
) -> Result<PruningError> {
    let (t, n, m) = full_s.dims();
    if t != mask.t || n != mask.n || m != mask.n {
        return shape_err(format!(
            "scores {:?} do not match mask {}x{}",
            full_s.dims(),
            mask.t,
            mask.n
        ));
    }
    let mut err = PruningError::default();
    for ti in 0..t {
        for qi in 0..n {
            for ki in 0..n {
                let v = full_s.get(ti, qi, ki).to_u32().unwrap_or(u32::MAX);
                if !mask.q_kept(ti, qi) {
                    err.max_q = err.max_q.max(v);
                }
                if !mask.k_kept(ti, ki) {
                    err.max_k = err.max_k.max(v);
                }
            }
        }
    }
    let q_pruned = mask.keep_q.iter().any(|&k| !k);
    let k_pruned = mask.keep_k.iter().any(|&k| !k);
    if q_pruned && err.max_q >= cfg.theta_q {
        return Err(SimError::BoundViolation(format!(
            "Q-pruned score {} not below theta {}",
            err.max_q, cfg.theta_q
        )));
    }
    if k_pruned && err.max_k >= cfg.theta_k {
        return Err(SimError::BoundViolation(format!(
            "K-pruned score {} not below theta {}",
            err.max_k, cfg.theta_k
        )));
    }
    Ok(err)
}
