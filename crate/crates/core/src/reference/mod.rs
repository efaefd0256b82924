//! Bit-exact functional model of spiking-transformer inference.
//!
//! Everything here is computed the straightforward way, element by element,
//! and serves as the oracle the accelerator model is checked against.

mod flops;
mod lif;
mod weights_io;

pub use flops::{flops_breakdown, FlopsBreakdown};
pub use lif::{fire_layer, lif_step, LifParams, LifState};
pub use weights_io::{read_ttbw, write_ttbw};

use serde::{Deserialize, Serialize};

use crate::ecp::EcpConfig;
use crate::error::{shape_err, Result, SimError};
use crate::scalar::Scalar;
use crate::tensor::{Matrix, Tensor3};
use crate::ttb::{BundleShape, SpikeTensor};

/// LIF parameters for every neuron layer of an encoder block.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound(deserialize = "S: Deserialize<'de> + Default"))]
pub struct LifRoles<S> {
    pub q: LifParams<S>,
    pub k: LifParams<S>,
    pub v: LifParams<S>,
    /// Layer over the concatenated head outputs.
    pub attn: LifParams<S>,
    /// Layer closing the attention block (after `W_O` and the residual).
    pub ssa_out: LifParams<S>,
    pub mlp_hidden: LifParams<S>,
    pub mlp_out: LifParams<S>,
}

impl<S: Scalar> LifRoles<S> {
    pub fn uniform(p: LifParams<S>) -> Self {
        Self {
            q: p,
            k: p,
            v: p,
            attn: p,
            ssa_out: p,
            mlp_hidden: p,
            mlp_out: p,
        }
    }

    fn all(&self) -> [(&'static str, &LifParams<S>); 7] {
        [
            ("q", &self.q),
            ("k", &self.k),
            ("v", &self.v),
            ("attn", &self.attn),
            ("ssa_out", &self.ssa_out),
            ("mlp_hidden", &self.mlp_hidden),
            ("mlp_out", &self.mlp_out),
        ]
    }
}

impl Default for LifRoles<i32> {
    fn default() -> Self {
        let p = |v_th| LifParams {
            v_th,
            v_leak: 0,
            v_init: 0,
        };
        Self {
            q: p(400),
            k: p(400),
            v: p(400),
            attn: p(8),
            ssa_out: p(400),
            mlp_hidden: p(400),
            mlp_out: p(400),
        }
    }
}

/// Shape and neuron parameters of a spiking transformer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound(deserialize = "S: Deserialize<'de> + Default"))]
pub struct ModelConfig<S = i32> {
    /// Encoder blocks.
    pub blocks: usize,
    /// Time points.
    pub t: usize,
    /// Tokens.
    pub n: usize,
    /// Features.
    pub d: usize,
    pub heads: usize,
    /// Attention outputs are scaled by `2^-s_shift`.
    #[serde(default)]
    pub s_shift: u32,
    #[serde(default = "default_mlp_ratio")]
    pub mlp_ratio: usize,
    #[serde(default = "default_weight_bits")]
    pub weight_bits: u32,
    /// Current injected per residual spike ahead of the block-closing LIF layers.
    pub residual_gain: S,
    pub lif: LifRoles<S>,
}

fn default_mlp_ratio() -> usize {
    4
}

fn default_weight_bits() -> u32 {
    8
}

impl Default for ModelConfig<i32> {
    fn default() -> Self {
        Self {
            blocks: 1,
            t: 4,
            n: 16,
            d: 32,
            heads: 2,
            s_shift: 1,
            mlp_ratio: 4,
            weight_bits: 8,
            residual_gain: 200,
            lif: LifRoles::default(),
        }
    }
}

impl<S: Scalar> ModelConfig<S> {
    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(SimError::Config(m));
        if self.blocks == 0 || self.t == 0 || self.n == 0 || self.d == 0 {
            return cfg(format!(
                "model dims must be >= 1 (blocks={}, T={}, N={}, D={})",
                self.blocks, self.t, self.n, self.d
            ));
        }
        if self.heads == 0 || !self.d.is_multiple_of(self.heads) {
            return cfg(format!("D={} not divisible by H={}", self.d, self.heads));
        }
        if self.mlp_ratio == 0 {
            return cfg("mlp_ratio must be >= 1".into());
        }
        if !(4..=16).contains(&self.weight_bits) {
            return cfg(format!("weight_bits {} outside 4..=16", self.weight_bits));
        }
        if self.residual_gain < S::zero() {
            return cfg("residual_gain must be non-negative".into());
        }
        for (role, p) in self.lif.all() {
            p.validate()
                .map_err(|e| SimError::Config(format!("lif.{role}: {e}")))?;
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.heads
    }

    pub fn hidden_dim(&self) -> usize {
        self.d * self.mlp_ratio
    }
}

/// Weights of one encoder block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockWeights<S> {
    pub w_q: Matrix<S>,
    pub w_k: Matrix<S>,
    pub w_v: Matrix<S>,
    pub w_o: Matrix<S>,
    pub w_mlp1: Matrix<S>,
    pub w_mlp2: Matrix<S>,
}

impl<S: Scalar> BlockWeights<S> {
    pub fn validate(&self, cfg: &ModelConfig<S>) -> Result<()> {
        let (d, h) = (cfg.d, cfg.hidden_dim());
        let expect = [
            ("W_Q", &self.w_q, d, d),
            ("W_K", &self.w_k, d, d),
            ("W_V", &self.w_v, d, d),
            ("W_O", &self.w_o, d, d),
            ("W_mlp1", &self.w_mlp1, d, h),
            ("W_mlp2", &self.w_mlp2, h, d),
        ];
        let lo = -(1i64 << (cfg.weight_bits - 1));
        let hi = (1i64 << (cfg.weight_bits - 1)) - 1;
        for (name, m, rows, cols) in expect {
            if m.rows() != rows || m.cols() != cols {
                return shape_err(format!(
                    "{name} is {}x{}, expected {rows}x{cols}",
                    m.rows(),
                    m.cols()
                ));
            }
            for &w in m.as_slice() {
                let v = w.to_i64().unwrap_or(i64::MAX);
                if v < lo || v > hi {
                    return Err(SimError::Config(format!(
                        "{name} entry {w:?} exceeds {}-bit signed range",
                        cfg.weight_bits
                    )));
                }
            }
        }
        Ok(())
    }

    /// `[W_Q | W_K | W_V]`, the fused first projection of the block.
    pub fn qkv(&self) -> Result<Matrix<S>> {
        self.w_q.hconcat(&self.w_k)?.hconcat(&self.w_v)
    }
}

/// Exact integer product of a binary tensor with a weight matrix, per `(t, n)`.
pub fn linear_project<S: Scalar>(x: &SpikeTensor, w: &Matrix<S>) -> Result<Tensor3<S>> {
    let (t, n, d) = x.dims();
    if d != w.rows() {
        return shape_err(format!(
            "activation has {d} features, weight has {} rows",
            w.rows()
        ));
    }
    let mut out = Tensor3::zeros(t, n, w.cols());
    x.for_each_spike(|ti, ni, di| {
        for (o, &wv) in out.row_mut(ti, ni).iter_mut().zip(w.row(di)) {
            *o += wv;
        }
    });
    Ok(out)
}

/// Binary tensor scaled into the current domain.
pub fn spikes_as_current<S: Scalar>(x: &SpikeTensor, gain: S) -> Tensor3<S> {
    let (t, n, d) = x.dims();
    let mut out = Tensor3::zeros(t, n, d);
    x.for_each_spike(|ti, ni, di| out.set(ti, ni, di, gain));
    out
}

/// Neuron state of every LIF layer in a block; zero-initialized per inference.
#[derive(Clone, Debug)]
pub struct BlockStates<S> {
    pub q: LifState<S>,
    pub k: LifState<S>,
    pub v: LifState<S>,
    pub attn: LifState<S>,
    pub ssa_out: LifState<S>,
    pub mlp_hidden: LifState<S>,
    pub mlp_out: LifState<S>,
}

impl<S: Scalar> BlockStates<S> {
    pub fn new(cfg: &ModelConfig<S>) -> Self {
        let nd = cfg.n * cfg.d;
        Self {
            q: LifState::new(nd, &cfg.lif.q),
            k: LifState::new(nd, &cfg.lif.k),
            v: LifState::new(nd, &cfg.lif.v),
            attn: LifState::new(nd, &cfg.lif.attn),
            ssa_out: LifState::new(nd, &cfg.lif.ssa_out),
            mlp_hidden: LifState::new(cfg.n * cfg.hidden_dim(), &cfg.lif.mlp_hidden),
            mlp_out: LifState::new(nd, &cfg.lif.mlp_out),
        }
    }
}

/// Bundle-row pruning applied to the attention scores.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pruning {
    pub shape: BundleShape,
    pub ecp: EcpConfig,
}

/// Intermediate tensors of one attention head.
#[derive(Clone, Debug)]
pub struct HeadTrace<S> {
    pub q: SpikeTensor,
    pub k: SpikeTensor,
    pub v: SpikeTensor,
    /// Scores before pruning, `T x N x N`.
    pub s_full: Tensor3<S>,
    /// Scores with pruned entries materialized as zero.
    pub s: Tensor3<S>,
    /// Scaled head output `(S . V) * 2^-s_shift`, `T x N x D/H`.
    pub y: Tensor3<S>,
    /// Kept Q bundle rows, indexed `bn * nBT + bt`; all true without pruning.
    pub keep_q: Vec<bool>,
    pub keep_k: Vec<bool>,
}

#[derive(Clone, Debug)]
pub struct SsaTrace<S> {
    pub q_current: Tensor3<S>,
    pub k_current: Tensor3<S>,
    pub v_current: Tensor3<S>,
    pub q: SpikeTensor,
    pub k: SpikeTensor,
    pub v: SpikeTensor,
    pub heads: Vec<HeadTrace<S>>,
    /// Concatenated head outputs feeding the attention LIF layer.
    pub attn_current: Tensor3<S>,
    pub o_temp: SpikeTensor,
    pub o_attn: Tensor3<S>,
}

/// Rows `(bn, bt)` whose count of active feature bundles reaches `theta`.
fn naive_keep_rows(x: &SpikeTensor, shape: BundleShape, theta: u32) -> Vec<bool> {
    let (t, n, d) = x.dims();
    let n_bt = t.div_ceil(shape.bs_t);
    let n_bn = n.div_ceil(shape.bs_n);
    let mut keep = vec![true; n_bn * n_bt];
    for bn in 0..n_bn {
        for bt in 0..n_bt {
            let t_range = bt * shape.bs_t..((bt + 1) * shape.bs_t).min(t);
            let n_range = bn * shape.bs_n..((bn + 1) * shape.bs_n).min(n);
            let n_ab = (0..d)
                .filter(|&di| x.count_window(t_range.clone(), n_range.clone(), di) > 0)
                .count() as u32;
            keep[bn * n_bt + bt] = n_ab >= theta;
        }
    }
    keep
}

fn attention_head<S: Scalar>(
    q: SpikeTensor,
    k: SpikeTensor,
    v: SpikeTensor,
    s_shift: u32,
    prune: Option<&Pruning>,
) -> HeadTrace<S> {
    let (t, n, dh) = q.dims();
    let (keep_q, keep_k, n_bt, shape) = match prune {
        Some(p) => (
            naive_keep_rows(&q, p.shape, p.ecp.theta_q),
            naive_keep_rows(&k, p.shape, p.ecp.theta_k),
            t.div_ceil(p.shape.bs_t),
            p.shape,
        ),
        None => {
            let one = BundleShape { bs_t: t, bs_n: n };
            (vec![true], vec![true], 1, one)
        }
    };
    let row = |ti: usize, ni: usize| (ni / shape.bs_n) * n_bt + ti / shape.bs_t;

    let mut s_full = Tensor3::zeros(t, n, n);
    let mut s = Tensor3::zeros(t, n, n);
    for ti in 0..t {
        for qi in 0..n {
            for ki in 0..n {
                let dot = (0..dh).filter(|&di| q.get(ti, qi, di) && k.get(ti, ki, di)).count() as u32;
                let val = S::from_count(dot);
                s_full.set(ti, qi, ki, val);
                if keep_q[row(ti, qi)] && keep_k[row(ti, ki)] {
                    s.set(ti, qi, ki, val);
                }
            }
        }
    }

    let mut y = Tensor3::zeros(t, n, dh);
    for ti in 0..t {
        for qi in 0..n {
            for j in 0..dh {
                let mut acc = S::zero();
                for ki in 0..n {
                    if v.get(ti, ki, j) {
                        acc += s.get(ti, qi, ki);
                    }
                }
                y.set(ti, qi, j, acc.scale_pow2(s_shift));
            }
        }
    }

    HeadTrace {
        q,
        k,
        v,
        s_full,
        s,
        y,
        keep_q,
        keep_k,
    }
}

/// Multi-head spiking self-attention with all intermediates retained.
pub fn ssa_forward<S: Scalar>(
    x: &SpikeTensor,
    w: &BlockWeights<S>,
    cfg: &ModelConfig<S>,
    states: &mut BlockStates<S>,
    prune: Option<&Pruning>,
) -> Result<(SsaTrace<S>, Tensor3<S>)> {
    if x.dims() != (cfg.t, cfg.n, cfg.d) {
        return shape_err(format!(
            "input is {:?}, model expects {:?}",
            x.dims(),
            (cfg.t, cfg.n, cfg.d)
        ));
    }
    let q_current = linear_project(x, &w.w_q)?;
    let k_current = linear_project(x, &w.w_k)?;
    let v_current = linear_project(x, &w.w_v)?;
    let q = fire_layer(&q_current, &cfg.lif.q, &mut states.q)?;
    let k = fire_layer(&k_current, &cfg.lif.k, &mut states.k)?;
    let v = fire_layer(&v_current, &cfg.lif.v, &mut states.v)?;

    let dh = cfg.head_dim();
    let mut heads = Vec::with_capacity(cfg.heads);
    let mut attn_current = Tensor3::zeros(cfg.t, cfg.n, cfg.d);
    for h in 0..cfg.heads {
        let head = attention_head(
            q.feature_slice(h * dh, dh)?,
            k.feature_slice(h * dh, dh)?,
            v.feature_slice(h * dh, dh)?,
            cfg.s_shift,
            prune,
        );
        for ti in 0..cfg.t {
            for ni in 0..cfg.n {
                attn_current.row_mut(ti, ni)[h * dh..(h + 1) * dh]
                    .copy_from_slice(head.y.row(ti, ni));
            }
        }
        heads.push(head);
    }

    let o_temp = fire_layer(&attn_current, &cfg.lif.attn, &mut states.attn)?;
    let o_attn = linear_project(&o_temp, &w.w_o)?;
    let trace = SsaTrace {
        q_current,
        k_current,
        v_current,
        q,
        k,
        v,
        heads,
        attn_current,
        o_temp,
        o_attn: o_attn.clone(),
    };
    Ok((trace, o_attn))
}

/// Full activation trace of one encoder block.
#[derive(Clone, Debug)]
pub struct BlockTrace<S> {
    pub input: SpikeTensor,
    pub ssa: SsaTrace<S>,
    /// `O_attn` plus the input residual, the current into `lif.ssa_out`.
    pub ssa_out_current: Tensor3<S>,
    pub ssa_out: SpikeTensor,
    pub mlp_hidden_current: Tensor3<S>,
    pub mlp_hidden: SpikeTensor,
    /// Second MLP projection plus residual, the current into `lif.mlp_out`.
    pub mlp_out_current: Tensor3<S>,
    pub output: SpikeTensor,
}

/// Attention block followed by the MLP block. Residual spikes are added as
/// `residual_gain` current right before the block-closing LIF layers.
pub fn block_forward<S: Scalar>(
    x: &SpikeTensor,
    w: &BlockWeights<S>,
    cfg: &ModelConfig<S>,
    states: &mut BlockStates<S>,
    prune: Option<&Pruning>,
) -> Result<(SpikeTensor, BlockTrace<S>)> {
    let (ssa, o_attn) = ssa_forward(x, w, cfg, states, prune)?;
    let ssa_out_current = o_attn.add(&spikes_as_current(x, cfg.residual_gain))?;
    let ssa_out = fire_layer(&ssa_out_current, &cfg.lif.ssa_out, &mut states.ssa_out)?;

    let mlp_hidden_current = linear_project(&ssa_out, &w.w_mlp1)?;
    let mlp_hidden = fire_layer(&mlp_hidden_current, &cfg.lif.mlp_hidden, &mut states.mlp_hidden)?;
    let mlp_out_current =
        linear_project(&mlp_hidden, &w.w_mlp2)?.add(&spikes_as_current(&ssa_out, cfg.residual_gain))?;
    let output = fire_layer(&mlp_out_current, &cfg.lif.mlp_out, &mut states.mlp_out)?;

    let trace = BlockTrace {
        input: x.clone(),
        ssa,
        ssa_out_current,
        ssa_out,
        mlp_hidden_current,
        mlp_hidden,
        mlp_out_current,
        output: output.clone(),
    };
    Ok((output, trace))
}

/// Run every block on fresh neuron state.
pub fn model_forward<S: Scalar>(
    x: &SpikeTensor,
    weights: &[BlockWeights<S>],
    cfg: &ModelConfig<S>,
    prune: Option<&Pruning>,
) -> Result<Vec<BlockTrace<S>>> {
    cfg.validate()?;
    if weights.len() != cfg.blocks {
        return shape_err(format!(
            "{} weight sets for {} blocks",
            weights.len(),
            cfg.blocks
        ));
    }
    let mut traces = Vec::with_capacity(cfg.blocks);
    let mut cur = x.clone();
    for w in weights {
        w.validate(cfg)?;
        let mut states = BlockStates::new(cfg);
        let (out, trace) = block_forward(&cur, w, cfg, &mut states, prune)?;
        traces.push(trace);
        cur = out;
    }
    Ok(traces)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spikes(rng: &mut ChaCha8Rng, t: usize, n: usize, d: usize, p: f64) -> SpikeTensor {
        SpikeTensor::from_fn(t, n, d, |_, _, _| rng.random_bool(p)).unwrap()
    }

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix<i32> {
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-128..=127))
    }

    fn random_weights(rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> BlockWeights<i32> {
        let (d, h) = (cfg.d, cfg.hidden_dim());
        BlockWeights {
            w_q: random_matrix(rng, d, d),
            w_k: random_matrix(rng, d, d),
            w_v: random_matrix(rng, d, d),
            w_o: random_matrix(rng, d, d),
            w_mlp1: random_matrix(rng, d, h),
            w_mlp2: random_matrix(rng, h, d),
        }
    }

    fn small_cfg(t: usize, n: usize, d: usize, heads: usize) -> ModelConfig {
        ModelConfig {
            t,
            n,
            d,
            heads,
            lif: LifRoles::uniform(LifParams::new(60, 0).unwrap()),
            residual_gain: 30,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn one_hot_selects_weight_row() {
        let w = Matrix::from_fn(4, 3, |r, c| (r * 10 + c) as i32 - 7);
        let mut x = SpikeTensor::zeros(1, 1, 4).unwrap();
        x.set(0, 0, 2, true);
        let y = linear_project(&x, &w).unwrap();
        assert_eq!(y.row(0, 0), w.row(2));
        let zero = linear_project(&SpikeTensor::zeros(2, 2, 4).unwrap(), &w).unwrap();
        assert!(zero.as_slice().iter().all(|&v| v == 0));
    }

    #[test]
    fn projection_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random_spikes(&mut rng, 2, 3, 4, 0.5);
        let w = random_matrix(&mut rng, 4, 5);
        let y = linear_project(&x, &w).unwrap();
        for t in 0..2 {
            for n in 0..3 {
                for c in 0..5 {
                    let mut acc = 0;
                    for d in 0..4 {
                        acc += x.get(t, n, d) as i32 * w.get(d, c);
                    }
                    assert_eq!(y.get(t, n, c), acc);
                }
            }
        }
        assert!(matches!(
            linear_project(&x, &random_matrix(&mut rng, 3, 5)),
            Err(SimError::Shape(_))
        ));
    }

    #[test]
    fn identity_attention_passes_values_through() {
        // Q = K = identity pattern over 2 tokens x 2 features
        let eye = SpikeTensor::from_fn(1, 2, 2, |_, n, d| n == d).unwrap();
        let v = SpikeTensor::from_fn(1, 2, 2, |_, n, d| (n + d) % 2 == 0 || n == 1).unwrap();
        let head: HeadTrace<i32> = attention_head(eye.clone(), eye, v.clone(), 0, None);
        for a in 0..2 {
            for b in 0..2 {
                assert_eq!(head.s.get(0, a, b), (a == b) as i32);
                assert_eq!(head.y.get(0, a, b), v.get(0, a, b) as i32);
            }
        }
    }

    #[test]
    fn zero_queries_zero_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = SpikeTensor::zeros(2, 4, 3).unwrap();
        let k = random_spikes(&mut rng, 2, 4, 3, 0.7);
        let v = random_spikes(&mut rng, 2, 4, 3, 0.7);
        let head: HeadTrace<i32> = attention_head(q, k, v, 0, None);
        assert!(head.s.as_slice().iter().all(|&x| x == 0));
        assert!(head.y.as_slice().iter().all(|&x| x == 0));
    }

    #[test]
    fn ssa_matches_elementwise_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cfg = ModelConfig { s_shift: 1, ..small_cfg(2, 3, 4, 1) };
        let w = random_weights(&mut rng, &cfg);
        let x = random_spikes(&mut rng, 2, 3, 4, 0.6);
        let mut states = BlockStates::new(&cfg);
        let (trace, o_attn) = ssa_forward(&x, &w, &cfg, &mut states, None).unwrap();

        // independent evaluation with explicit per-neuron loops
        let fire = |cur: &dyn Fn(usize, usize, usize) -> i32, d: usize, th: i32| {
            let mut v = vec![0i32; 3 * d];
            let mut out = vec![false; 2 * 3 * d];
            for t in 0..2 {
                for n in 0..3 {
                    for c in 0..d {
                        let nv = v[n * d + c] + cur(t, n, c);
                        if nv > th {
                            v[n * d + c] = 0;
                            out[(t * 3 + n) * d + c] = true;
                        } else {
                            v[n * d + c] = nv;
                        }
                    }
                }
            }
            out
        };
        let proj = |m: &Matrix<i32>| -> Vec<i32> {
            let mut out = Vec::new();
            for t in 0..2 {
                for n in 0..3 {
                    for c in 0..4 {
                        out.push((0..4).map(|d| x.get(t, n, d) as i32 * m.get(d, c)).sum());
                    }
                }
            }
            out
        };
        let (pq, pk, pv) = (proj(&w.w_q), proj(&w.w_k), proj(&w.w_v));
        let q = fire(&|t, n, c| pq[(t * 3 + n) * 4 + c], 4, 60);
        let k = fire(&|t, n, c| pk[(t * 3 + n) * 4 + c], 4, 60);
        let v = fire(&|t, n, c| pv[(t * 3 + n) * 4 + c], 4, 60);
        let at = |b: &Vec<bool>, t: usize, n: usize, c: usize| b[(t * 3 + n) * 4 + c] as i32;
        let y = |t: usize, n: usize, c: usize| -> i32 {
            let mut acc = 0;
            for m in 0..3 {
                let s: i32 = (0..4).map(|d| at(&q, t, n, d) * at(&k, t, m, d)).sum();
                acc += s * at(&v, t, m, c);
            }
            acc >> 1
        };
        let o_temp = fire(&y, 4, 60);
        for t in 0..2 {
            for n in 0..3 {
                for c in 0..4 {
                    assert_eq!(trace.q.get(t, n, c), q[(t * 3 + n) * 4 + c]);
                    assert_eq!(trace.attn_current.get(t, n, c), y(t, n, c));
                    assert_eq!(trace.o_temp.get(t, n, c), o_temp[(t * 3 + n) * 4 + c]);
                    let o: i32 = (0..4).map(|d| at(&o_temp, t, n, d) * w.w_o.get(d, c)).sum();
                    assert_eq!(o_attn.get(t, n, c), o);
                }
            }
        }
        // score range
        for head in &trace.heads {
            assert!(head.s.as_slice().iter().all(|&s| (0..=4).contains(&s)));
        }
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = small_cfg(3, 4, 8, 2);
        let w = random_weights(&mut rng, &cfg);
        let x = SpikeTensor::zeros(3, 4, 8).unwrap();
        let traces = model_forward(&x, &[w], &cfg, None).unwrap();
        assert_eq!(traces[0].output.popcount(), 0);
    }

    #[test]
    fn block_equals_manual_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let cfg = small_cfg(3, 5, 8, 2);
        let w = random_weights(&mut rng, &cfg);
        let x = random_spikes(&mut rng, 3, 5, 8, 0.4);
        let mut st = BlockStates::new(&cfg);
        let (out, trace) = block_forward(&x, &w, &cfg, &mut st, None).unwrap();

        let mut st2 = BlockStates::new(&cfg);
        let (_, o_attn) = ssa_forward(&x, &w, &cfg, &mut st2, None).unwrap();
        let res = o_attn.add(&spikes_as_current(&x, 30)).unwrap();
        let x1 = fire_layer(&res, &cfg.lif.ssa_out, &mut st2.ssa_out).unwrap();
        let h = fire_layer(&linear_project(&x1, &w.w_mlp1).unwrap(), &cfg.lif.mlp_hidden, &mut st2.mlp_hidden)
            .unwrap();
        let m = linear_project(&h, &w.w_mlp2).unwrap().add(&spikes_as_current(&x1, 30)).unwrap();
        let x2 = fire_layer(&m, &cfg.lif.mlp_out, &mut st2.mlp_out).unwrap();
        assert_eq!(trace.ssa_out, x1);
        assert_eq!(out, x2);
    }

    #[test]
    fn blocks_chain_and_are_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let cfg = ModelConfig { blocks: 2, ..small_cfg(2, 4, 8, 2) };
        let ws = vec![random_weights(&mut rng, &cfg), random_weights(&mut rng, &cfg)];
        let x = random_spikes(&mut rng, 2, 4, 8, 0.5);
        let a = model_forward(&x, &ws, &cfg, None).unwrap();
        let b = model_forward(&x, &ws, &cfg, None).unwrap();
        assert_eq!(a[1].input, a[0].output);
        assert_eq!(a[1].output, b[1].output);
        assert_eq!(a[0].ssa.o_attn, b[0].ssa.o_attn);
    }

    #[test]
    fn shift_scale_equals_floor_division() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let q = random_spikes(&mut rng, 2, 6, 5, 0.6);
        let k = random_spikes(&mut rng, 2, 6, 5, 0.6);
        let v = random_spikes(&mut rng, 2, 6, 5, 0.6);
        let raw: HeadTrace<i32> = attention_head(q.clone(), k.clone(), v.clone(), 0, None);
        for shift in 1..5 {
            let scaled: HeadTrace<i32> = attention_head(q.clone(), k.clone(), v.clone(), shift, None);
            for (a, b) in raw.y.as_slice().iter().zip(scaled.y.as_slice()) {
                assert_eq!(*b, a.div_euclid(1 << shift));
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig { heads: 3, ..ModelConfig::default() }.validate().is_err());
        assert!(ModelConfig { weight_bits: 3, ..ModelConfig::default() }.validate().is_err());
        assert!(ModelConfig::default().validate().is_ok());
        let cfg = ModelConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut w = random_weights(&mut rng, &cfg);
        w.w_q = Matrix::from_fn(cfg.d, cfg.d, |_, _| 128);
        assert!(w.validate(&cfg).is_err());
    }
}
