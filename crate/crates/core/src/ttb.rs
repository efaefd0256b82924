//! Bit-packed spike tensors and their token-time-bundle view.
//!
//! A [`SpikeTensor`] stores one bit per `(t, n, d)` in 64-bit words, laid out
//! time-major, then token, then feature. A [`TtbGrid`] partitions the
//! `(t, n)` plane of every feature into `BS_t x BS_n` bundles and records the
//! number of spikes falling into each one (its activity tag).

use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result, SimError};

const WORD_BITS: usize = 64;
const TTBS_MAGIC: &[u8; 4] = b"TTBS";

/// Binary activation tensor over `(time, token, feature)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpikeTensor {
    t: usize,
    n: usize,
    d: usize,
    words: Vec<u64>,
}

impl SpikeTensor {
    pub fn zeros(t: usize, n: usize, d: usize) -> Result<Self> {
        if t == 0 || n == 0 || d == 0 {
            return shape_err(format!("spike tensor dims must be >= 1, got {t}x{n}x{d}"));
        }
        let bits = t * n * d;
        Ok(Self {
            t,
            n,
            d,
            words: vec![0; bits.div_ceil(WORD_BITS)],
        })
    }

    pub fn from_fn(
        t: usize,
        n: usize,
        d: usize,
        mut f: impl FnMut(usize, usize, usize) -> bool,
    ) -> Result<Self> {
        let mut x = Self::zeros(t, n, d)?;
        for ti in 0..t {
            for ni in 0..n {
                for di in 0..d {
                    if f(ti, ni, di) {
                        x.set(ti, ni, di, true);
                    }
                }
            }
        }
        Ok(x)
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.t, self.n, self.d)
    }

    #[inline]
    fn bit_index(&self, t: usize, n: usize, d: usize) -> usize {
        debug_assert!(t < self.t && n < self.n && d < self.d);
        (t * self.n + n) * self.d + d
    }

    #[inline]
    pub fn get(&self, t: usize, n: usize, d: usize) -> bool {
        let i = self.bit_index(t, n, d);
        (self.words[i / WORD_BITS] >> (i % WORD_BITS)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, t: usize, n: usize, d: usize, v: bool) {
        let i = self.bit_index(t, n, d);
        let mask = 1u64 << (i % WORD_BITS);
        if v {
            self.words[i / WORD_BITS] |= mask;
        } else {
            self.words[i / WORD_BITS] &= !mask;
        }
    }

    pub fn len(&self) -> usize {
        self.t * self.n * self.d
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Total number of spikes.
    pub fn popcount(&self) -> u64 {
        self.words.iter().map(|w| w.count_ones() as u64).sum()
    }

    pub fn density(&self) -> f64 {
        self.popcount() as f64 / self.len() as f64
    }

    /// Number of spikes of feature `d` inside the given time and token ranges.
    pub fn count_window(&self, t: Range<usize>, n: Range<usize>, d: usize) -> u32 {
        let mut c = 0;
        for ti in t {
            for ni in n.clone() {
                c += self.get(ti, ni, d) as u32;
            }
        }
        c
    }

    /// Number of spikes in the `D`-wide row at `(t, n)`.
    pub fn row_popcount(&self, t: usize, n: usize) -> u32 {
        let start = self.bit_index(t, n, 0);
        count_bits(&self.words, start, start + self.d)
    }

    /// Visit every set bit as `(t, n, d)` in storage order.
    pub fn for_each_spike(&self, mut f: impl FnMut(usize, usize, usize)) {
        let nd = self.n * self.d;
        for (wi, &word) in self.words.iter().enumerate() {
            let mut w = word;
            while w != 0 {
                let b = w.trailing_zeros() as usize;
                w &= w - 1;
                let i = wi * WORD_BITS + b;
                f(i / nd, (i % nd) / self.d, i % self.d);
            }
        }
    }

    /// All-zero tensor of the same dims, empty partitions included.
    fn blank(&self) -> Self {
        Self {
            words: vec![0; self.words.len()],
            ..*self
        }
    }

    /// New tensor holding only the listed features, in list order.
    pub fn select_features(&self, features: &[usize]) -> Result<Self> {
        if let Some(&bad) = features.iter().find(|&&f| f >= self.d) {
            return Err(SimError::Index(format!("feature {bad} >= D={}", self.d)));
        }
        // An empty partition is represented with zero features; it never
        // reaches code that needs D >= 1.
        let mut out = Self {
            t: self.t,
            n: self.n,
            d: features.len(),
            words: vec![0; (self.t * self.n * features.len()).div_ceil(WORD_BITS)],
        };
        for t in 0..self.t {
            for n in 0..self.n {
                for (k, &f) in features.iter().enumerate() {
                    if self.get(t, n, f) {
                        out.set(t, n, k, true);
                    }
                }
            }
        }
        Ok(out)
    }

    /// Features `[start, start + width)`.
    pub fn feature_slice(&self, start: usize, width: usize) -> Result<Self> {
        let features: Vec<usize> = (start..start + width).collect();
        self.select_features(&features)
    }

    /// Concatenate along the feature axis.
    pub fn concat_features(parts: &[SpikeTensor]) -> Result<Self> {
        let Some(first) = parts.first() else {
            return shape_err("cannot concatenate zero tensors");
        };
        let (t, n, _) = first.dims();
        if parts.iter().any(|p| p.t != t || p.n != n) {
            return shape_err("concatenated tensors must share T and N");
        }
        let d: usize = parts.iter().map(|p| p.d).sum();
        let mut out = Self::zeros(t, n, d)?;
        let mut offset = 0;
        for p in parts {
            p.for_each_spike(|ti, ni, di| out.set(ti, ni, offset + di, true));
            offset += p.d;
        }
        Ok(out)
    }

    /// Serialize in the `TTBS` binary format.
    pub fn write_ttbs<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(TTBS_MAGIC)?;
        for dim in [self.t, self.n, self.d] {
            let v = u32::try_from(dim)
                .map_err(|_| SimError::Shape(format!("dimension {dim} exceeds u32")))?;
            w.write_all(&v.to_le_bytes())?;
        }
        let nbytes = self.len().div_ceil(8);
        let mut bytes = Vec::with_capacity(self.words.len() * 8);
        for word in &self.words {
            bytes.extend_from_slice(&word.to_le_bytes());
        }
        w.write_all(&bytes[..nbytes])?;
        Ok(())
    }

    pub fn read_ttbs<R: Read>(mut r: R) -> Result<Self> {
        let fmt_err = |reason: String| SimError::Format {
            format: "TTBS",
            reason,
        };
        let mut header = [0u8; 16];
        r.read_exact(&mut header)
            .map_err(|e| fmt_err(format!("short header: {e}")))?;
        if &header[..4] != TTBS_MAGIC {
            return Err(fmt_err(format!("bad magic {:?}", &header[..4])));
        }
        let dim = |i: usize| u32::from_le_bytes(header[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
        let (t, n, d) = (dim(0), dim(1), dim(2));
        let mut x = Self::zeros(t, n, d).map_err(|e| fmt_err(e.to_string()))?;
        let nbytes = x.len().div_ceil(8);
        let mut body = Vec::with_capacity(nbytes);
        r.read_to_end(&mut body)?;
        if body.len() != nbytes {
            return Err(fmt_err(format!(
                "expected {nbytes} payload bytes, found {}",
                body.len()
            )));
        }
        let tail_bits = x.len() % 8;
        if tail_bits != 0 && body[nbytes - 1] >> tail_bits != 0 {
            return Err(fmt_err("nonzero padding bits in final byte".into()));
        }
        for (wi, chunk) in body.chunks(8).enumerate() {
            let mut buf = [0u8; 8];
            buf[..chunk.len()].copy_from_slice(chunk);
            x.words[wi] = u64::from_le_bytes(buf);
        }
        Ok(x)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_ttbs(std::io::BufWriter::new(f))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_ttbs(std::io::BufReader::new(f))
    }
}

fn count_bits(words: &[u64], start: usize, end: usize) -> u32 {
    let mut c = 0;
    let mut i = start;
    while i < end {
        let wi = i / WORD_BITS;
        let off = i % WORD_BITS;
        let take = (WORD_BITS - off).min(end - i);
        let mask = if take == WORD_BITS {
            u64::MAX
        } else {
            ((1u64 << take) - 1) << off
        };
        c += (words[wi] & mask).count_ones();
        i += take;
    }
    c
}

/// Number of time points and tokens packed into one bundle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BundleShape {
    pub bs_t: usize,
    pub bs_n: usize,
}

impl BundleShape {
    /// Largest volume whose tags still fit the 16-bit tag store.
    pub const MAX_VOLUME: usize = u16::MAX as usize;

    pub fn new(bs_t: usize, bs_n: usize) -> Result<Self> {
        let s = Self { bs_t, bs_n };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.bs_t == 0 || self.bs_n == 0 {
            return Err(SimError::Config(format!(
                "bundle shape must be >= 1x1, got {}x{}",
                self.bs_t, self.bs_n
            )));
        }
        if self.volume() > Self::MAX_VOLUME {
            return Err(SimError::Config(format!(
                "bundle volume {} exceeds {}",
                self.volume(),
                Self::MAX_VOLUME
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn volume(&self) -> usize {
        self.bs_t * self.bs_n
    }

    /// Pick a shape for a target volume: `BS_t` is the largest divisor of
    /// `volume` not exceeding `sqrt(volume)` or `max_t`.
    pub fn for_volume(volume: usize, max_t: usize) -> Result<Self> {
        if volume == 0 {
            return Err(SimError::Config("bundle volume must be >= 1".into()));
        }
        let bs_t = (1..=volume)
            .filter(|&k| volume.is_multiple_of(k) && k * k <= volume && k <= max_t.max(1))
            .max()
            .unwrap_or(1);
        Self::new(bs_t, volume / bs_t)
    }
}

impl std::fmt::Display for BundleShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.bs_t, self.bs_n)
    }
}

impl std::str::FromStr for BundleShape {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| SimError::Config(format!("bundle shape {s:?} is not BTxBN")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<usize>()
                .map_err(|e| SimError::Config(format!("bundle shape {s:?}: {e}")))
        };
        Self::new(parse(a)?, parse(b)?)
    }
}

/// Activations re-indexed into token-time bundles with per-bundle tags.
#[derive(Clone, Debug)]
pub struct TtbGrid {
    shape: BundleShape,
    n_bt: usize,
    n_bn: usize,
    d: usize,
    /// `tags[(bn * n_bt + bt) * d + feature]`
    tags: Vec<u16>,
    backing: Arc<SpikeTensor>,
}

/// Pack a spike tensor into token-time bundles and tag every bundle.
pub fn pack_ttb(x: impl Into<Arc<SpikeTensor>>, shape: BundleShape) -> TtbGrid {
    let backing = x.into();
    let (t, n, d) = backing.dims();
    let n_bt = t.div_ceil(shape.bs_t);
    let n_bn = n.div_ceil(shape.bs_n);
    let mut tags = vec![0u16; n_bn * n_bt * d];
    backing.for_each_spike(|ti, ni, di| {
        let bt = ti / shape.bs_t;
        let bn = ni / shape.bs_n;
        tags[(bn * n_bt + bt) * d + di] += 1;
    });
    TtbGrid {
        shape,
        n_bt,
        n_bn,
        d,
        tags,
        backing,
    }
}

impl TtbGrid {
    pub fn shape(&self) -> BundleShape {
        self.shape
    }

    pub fn n_bt(&self) -> usize {
        self.n_bt
    }

    pub fn n_bn(&self) -> usize {
        self.n_bn
    }

    pub fn features(&self) -> usize {
        self.d
    }

    pub fn backing(&self) -> &Arc<SpikeTensor> {
        &self.backing
    }

    /// Bundle positions per feature, `nBN * nBT`.
    pub fn bundles_per_feature(&self) -> usize {
        self.n_bn * self.n_bt
    }

    pub fn total_bundles(&self) -> usize {
        self.bundles_per_feature() * self.d
    }

    /// Flattened position index of `(bn, bt)`.
    #[inline]
    pub fn position(&self, bn: usize, bt: usize) -> usize {
        bn * self.n_bt + bt
    }

    /// Inverse of [`TtbGrid::position`].
    #[inline]
    pub fn coords(&self, pos: usize) -> (usize, usize) {
        (pos / self.n_bt, pos % self.n_bt)
    }

    /// Real (unpadded) time and token ranges covered by bundle `(bn, bt)`.
    pub fn extent(&self, bn: usize, bt: usize) -> (Range<usize>, Range<usize>) {
        let (t, n, _) = self.backing.dims();
        let t0 = bt * self.shape.bs_t;
        let n0 = bn * self.shape.bs_n;
        (t0..(t0 + self.shape.bs_t).min(t), n0..(n0 + self.shape.bs_n).min(n))
    }

    /// Number of real cells in bundle `(bn, bt)`; smaller than the volume
    /// only for trailing padded bundles.
    pub fn cells(&self, bn: usize, bt: usize) -> usize {
        let (tr, nr) = self.extent(bn, bt);
        tr.len() * nr.len()
    }

    pub fn bundle_tag(&self, bn: usize, bt: usize, d: usize) -> Result<u16> {
        if bn >= self.n_bn || bt >= self.n_bt || d >= self.d {
            return Err(SimError::Index(format!(
                "bundle ({bn}, {bt}, {d}) outside grid {}x{}x{}",
                self.n_bn, self.n_bt, self.d
            )));
        }
        Ok(self.tag(bn, bt, d))
    }

    #[inline]
    pub fn tag(&self, bn: usize, bt: usize, d: usize) -> u16 {
        self.tags[(bn * self.n_bt + bt) * self.d + d]
    }

    #[inline]
    pub fn tag_at(&self, pos: usize, d: usize) -> u16 {
        self.tags[pos * self.d + d]
    }

    /// Tags of every feature at one bundle position.
    pub fn position_tags(&self, pos: usize) -> &[u16] {
        &self.tags[pos * self.d..(pos + 1) * self.d]
    }

    pub fn tag_sum(&self) -> u64 {
        self.tags.iter().map(|&z| z as u64).sum()
    }

    pub fn active_bundles(&self) -> usize {
        self.tags.iter().filter(|&&z| z > 0).count()
    }

    /// Bits of one position in bundle-compressed storage: active bundles at
    /// full volume plus one presence bit per feature. Tags are recounted on
    /// chip.
    pub fn max_stored_bits(&self) -> u64 {
        self.d as u64 * (self.shape.volume() as u64 + 1)
    }

    /// Bits each position occupies in bundle-compressed storage.
    pub fn stored_bits(&self) -> Vec<u64> {
        let vol = self.shape.volume() as u64;
        (0..self.bundles_per_feature())
            .map(|pos| {
                let active = self.position_tags(pos).iter().filter(|&&z| z > 0).count() as u64;
                active * vol + self.d as u64
            })
            .collect()
    }

    /// Active bundles of each feature, summed over all positions.
    pub fn feature_active_counts(&self) -> Vec<u32> {
        let mut counts = vec![0u32; self.d];
        for pos_tags in self.tags.chunks(self.d.max(1)) {
            for (c, &z) in counts.iter_mut().zip(pos_tags) {
                *c += (z > 0) as u32;
            }
        }
        counts
    }

    /// Spikes of feature `d` inside bundle `(bn, bt)` as `(t, n)` pairs.
    pub fn bundle_spikes(&self, bn: usize, bt: usize, d: usize) -> Vec<(usize, usize)> {
        let (tr, nr) = self.extent(bn, bt);
        let mut out = Vec::with_capacity(self.tag(bn, bt, d) as usize);
        for t in tr {
            for n in nr.clone() {
                if self.backing.get(t, n, d) {
                    out.push((t, n));
                }
            }
        }
        out
    }

    /// Rebuild the dense tensor by walking bundles; padding is dropped.
    pub fn unpack(&self) -> SpikeTensor {
        let mut out = self.backing.blank();
        for bn in 0..self.n_bn {
            for bt in 0..self.n_bt {
                for di in 0..self.d {
                    if self.tag(bn, bt, di) == 0 {
                        continue;
                    }
                    for (ti, ni) in self.bundle_spikes(bn, bt, di) {
                        out.set(ti, ni, di, true);
                    }
                }
            }
        }
        out
    }
}

/// Bundle-level sparsity statistics over a set of layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparsityMetrics {
    /// Sum of every bundle tag across all layers.
    pub l_bsp: u64,
    pub lambda: f64,
    /// `lambda * l_bsp`, the penalty term a training loop would add.
    pub weighted_penalty: f64,
    pub active_fraction: f64,
    pub dead_feature_fraction: f64,
}

pub fn sparsity_metrics<'a>(
    grids: impl IntoIterator<Item = &'a TtbGrid>,
    lambda: f64,
) -> SparsityMetrics {
    let mut l_bsp = 0u64;
    let mut active = 0usize;
    let mut total = 0usize;
    let mut dead = 0usize;
    let mut features = 0usize;
    for g in grids {
        l_bsp += g.tag_sum();
        active += g.active_bundles();
        total += g.total_bundles();
        dead += g.feature_active_counts().iter().filter(|&&c| c == 0).count();
        features += g.features();
    }
    let frac = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    SparsityMetrics {
        l_bsp,
        lambda,
        weighted_penalty: lambda * l_bsp as f64,
        active_fraction: frac(active, total),
        dead_feature_fraction: frac(dead, features),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn naive_tag(x: &SpikeTensor, shape: BundleShape, bn: usize, bt: usize, d: usize) -> u32 {
        let (t, n, _) = x.dims();
        let mut c = 0;
        for ti in bt * shape.bs_t..(bt + 1) * shape.bs_t {
            for ni in bn * shape.bs_n..(bn + 1) * shape.bs_n {
                if ti < t && ni < n && x.get(ti, ni, d) {
                    c += 1;
                }
            }
        }
        c
    }

    fn arb_tensor(max_t: usize, max_n: usize, max_d: usize) -> impl Strategy<Value = SpikeTensor> {
        (1..=max_t, 1..=max_n, 1..=max_d).prop_flat_map(|(t, n, d)| {
            proptest::collection::vec(any::<bool>(), t * n * d).prop_map(move |bits| {
                SpikeTensor::from_fn(t, n, d, |a, b, c| bits[(a * n + b) * d + c]).unwrap()
            })
        })
    }

    #[test]
    fn empty_partition_unpacks() {
        let x = SpikeTensor::from_fn(3, 5, 2, |_, _, _| true).unwrap();
        let g = pack_ttb(x.select_features(&[]).unwrap(), BundleShape::new(2, 2).unwrap());
        assert_eq!(g.unpack().dims(), (3, 5, 0));
        assert_eq!(g.active_bundles(), 0);
    }

    #[test]
    fn compressed_storage_counts_active_bundles() {
        // 2x4 bundles; one active bundle of feature 1
        let mut x = SpikeTensor::zeros(2, 8, 3).unwrap();
        x.set(1, 2, 1, true);
        x.set(0, 3, 1, true);
        let g = pack_ttb(x, BundleShape::new(2, 4).unwrap());
        assert_eq!(g.stored_bits(), vec![8 + 3, 3]);
        assert_eq!(g.max_stored_bits(), 27);
    }

    #[test]
    fn grid_dimensions_follow_ceiling() {
        let x = SpikeTensor::zeros(4, 6, 1).unwrap();
        let g = pack_ttb(x, BundleShape::new(2, 2).unwrap());
        assert_eq!((g.n_bt(), g.n_bn()), (2, 3));
        assert_eq!(g.bundles_per_feature(), 6);

        let x = SpikeTensor::from_fn(5, 3, 1, |_, _, _| true).unwrap();
        let g = pack_ttb(x, BundleShape::new(2, 2).unwrap());
        assert_eq!((g.n_bt(), g.n_bn()), (3, 2));
        // trailing bundle covers t=4, n=2 only
        assert_eq!(g.tag(1, 2, 0), 1);
        assert_eq!(g.tag(0, 0, 0), 4);
    }

    #[test]
    fn all_zero_tensor_has_zero_tags() {
        let x = SpikeTensor::zeros(4, 8, 16).unwrap();
        for (bt, bn) in [(1, 1), (2, 2), (3, 5), (4, 8)] {
            let g = pack_ttb(x.clone(), BundleShape::new(bt, bn).unwrap());
            assert_eq!(g.tag_sum(), 0);
            assert_eq!(g.active_bundles(), 0);
        }
    }

    #[test]
    fn single_spike_and_saturated_bundle() {
        let mut x = SpikeTensor::zeros(2, 2, 1).unwrap();
        x.set(0, 0, 0, true);
        let shape = BundleShape::new(2, 2).unwrap();
        assert_eq!(pack_ttb(x, shape).bundle_tag(0, 0, 0).unwrap(), 1);
        let full = SpikeTensor::from_fn(2, 2, 1, |_, _, _| true).unwrap();
        assert_eq!(pack_ttb(full, shape).bundle_tag(0, 0, 0).unwrap(), 4);
    }

    #[test]
    fn out_of_range_tag_is_index_error() {
        let g = pack_ttb(SpikeTensor::zeros(4, 4, 2).unwrap(), BundleShape::new(2, 2).unwrap());
        assert!(matches!(g.bundle_tag(2, 0, 0), Err(SimError::Index(_))));
        assert!(matches!(g.bundle_tag(0, 0, 2), Err(SimError::Index(_))));
    }

    #[test]
    fn zero_dims_rejected() {
        assert!(SpikeTensor::zeros(0, 1, 1).is_err());
        assert!(BundleShape::new(0, 3).is_err());
        assert!(BundleShape::new(256, 256).is_err());
    }

    #[test]
    fn shape_for_volume() {
        let shapes: Vec<_> = [2, 4, 8, 14, 20]
            .iter()
            .map(|&v| BundleShape::for_volume(v, 4).unwrap().to_string())
            .collect();
        assert_eq!(shapes, ["1x2", "2x2", "2x4", "2x7", "4x5"]);
        assert_eq!(BundleShape::for_volume(20, 2).unwrap().to_string(), "2x10");
        assert_eq!("3x5".parse::<BundleShape>().unwrap(), BundleShape::new(3, 5).unwrap());
    }

    #[test]
    fn metrics_direct_sum_and_additivity() {
        // one feature, four bundles with tags {0, 0, 3, 1}
        let mut x = SpikeTensor::zeros(2, 8, 1).unwrap();
        for (t, n) in [(0, 4), (0, 5), (1, 4), (1, 7)] {
            x.set(t, n, 0, true);
        }
        let g = pack_ttb(x, BundleShape::new(2, 2).unwrap());
        let tags: Vec<u16> = (0..4).map(|bn| g.tag(bn, 0, 0)).collect();
        assert_eq!(tags, [0, 0, 3, 1]);
        let m = sparsity_metrics([&g], 0.5);
        assert_eq!(m.l_bsp, 4);
        assert_eq!(m.active_fraction, 0.5);
        assert_eq!(m.weighted_penalty, 2.0);
        let m2 = sparsity_metrics([&g, &g], 0.5);
        assert_eq!(m2.l_bsp, 8);
    }

    #[test]
    fn metrics_of_empty_model() {
        let m = sparsity_metrics(std::iter::empty(), 1.0);
        assert_eq!(m.l_bsp, 0);
        assert_eq!(m.active_fraction, 0.0);
        assert_eq!(m.dead_feature_fraction, 0.0);
    }

    #[test]
    fn dead_feature_fraction_counts_silent_features() {
        // 10 of 96 features carry a spike somewhere
        let live = [3usize, 7, 11, 20, 33, 47, 50, 64, 80, 95];
        let x = SpikeTensor::from_fn(4, 8, 96, |t, n, d| live.contains(&d) && (t + n + d) % 5 == 0)
            .unwrap();
        let g = pack_ttb(x, BundleShape::new(2, 2).unwrap());
        let counted = g.feature_active_counts().iter().filter(|&&c| c == 0).count();
        // counting oracle: scan features directly
        let oracle = (0..96)
            .filter(|&d| {
                (0..4).all(|t| (0..8).all(|n| !g.backing().get(t, n, d)))
            })
            .count();
        assert_eq!(counted, oracle);
        assert_eq!(oracle, 86);
        let m = sparsity_metrics([&g], 1.0);
        assert_eq!(m.dead_feature_fraction, 86.0 / 96.0);
    }

    #[test]
    fn ttbs_rejects_bad_input() {
        let mut buf = Vec::new();
        SpikeTensor::zeros(1, 1, 3).unwrap().write_ttbs(&mut buf).unwrap();
        assert_eq!(buf.len(), 16 + 1);
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(SpikeTensor::read_ttbs(&bad[..]).is_err());
        let mut padded = buf.clone();
        padded[16] = 0b1000_0000;
        assert!(SpikeTensor::read_ttbs(&padded[..]).is_err());
        assert!(SpikeTensor::read_ttbs(&buf[..15]).is_err());
        let mut long = buf.clone();
        long.push(0);
        assert!(SpikeTensor::read_ttbs(&long[..]).is_err());
    }

    #[test]
    fn ttbs_layout_is_lsb_first_t_major() {
        let mut x = SpikeTensor::zeros(1, 2, 5).unwrap();
        x.set(0, 0, 1, true); // bit 1
        x.set(0, 1, 4, true); // bit 9
        let mut buf = Vec::new();
        x.write_ttbs(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"TTBS");
        assert_eq!(&buf[4..16], &[1, 0, 0, 0, 2, 0, 0, 0, 5, 0, 0, 0]);
        assert_eq!(&buf[16..], &[0b0000_0010, 0b0000_0010]);
    }

    proptest! {
        #[test]
        fn tags_match_naive_popcount(x in arb_tensor(6, 9, 5), bt in 1usize..4, bn in 1usize..5) {
            let shape = BundleShape::new(bt, bn).unwrap();
            let g = pack_ttb(x.clone(), shape);
            for b_n in 0..g.n_bn() {
                for b_t in 0..g.n_bt() {
                    for d in 0..g.features() {
                        prop_assert_eq!(g.tag(b_n, b_t, d) as u32, naive_tag(&x, shape, b_n, b_t, d));
                        prop_assert!(g.tag(b_n, b_t, d) as usize <= shape.volume());
                    }
                }
            }
            prop_assert_eq!(g.tag_sum(), x.popcount());
        }

        #[test]
        fn pack_unpack_round_trip(x in arb_tensor(7, 7, 6), bt in 1usize..5, bn in 1usize..5) {
            let g = pack_ttb(x.clone(), BundleShape::new(bt, bn).unwrap());
            prop_assert_eq!(g.unpack(), x);
        }

        #[test]
        fn ttbs_round_trip(x in arb_tensor(5, 6, 11)) {
            let mut buf = Vec::new();
            x.write_ttbs(&mut buf).unwrap();
            prop_assert_eq!(SpikeTensor::read_ttbs(&buf[..]).unwrap(), x);
        }

        #[test]
        fn clearing_a_bit_never_increases_metrics(
            x in arb_tensor(6, 6, 4), bt in 1usize..4, bn in 1usize..4, pick in any::<prop::sample::Index>()
        ) {
            let shape = BundleShape::new(bt, bn).unwrap();
            let mut spikes = Vec::new();
            x.for_each_spike(|t, n, d| spikes.push((t, n, d)));
            prop_assume!(!spikes.is_empty());
            let (t, n, d) = spikes[pick.index(spikes.len())];
            let mut y = x.clone();
            y.set(t, n, d, false);
            let gx = pack_ttb(x, shape);
            let gy = pack_ttb(y, shape);
            for pos in 0..gx.bundles_per_feature() {
                for f in 0..gx.features() {
                    prop_assert!(gy.tag_at(pos, f) <= gx.tag_at(pos, f));
                }
            }
            let mx = sparsity_metrics([&gx], 1.0);
            let my = sparsity_metrics([&gy], 1.0);
            prop_assert!(my.l_bsp < mx.l_bsp);
            prop_assert!(my.active_fraction <= mx.active_fraction);
            prop_assert_eq!(mx.l_bsp == 0, mx.active_fraction == 0.0);
        }

        #[test]
        fn row_popcount_matches_get(x in arb_tensor(3, 4, 70)) {
            let (t, n, d) = x.dims();
            for ti in 0..t {
                for ni in 0..n {
                    let naive = (0..d).filter(|&di| x.get(ti, ni, di)).count() as u32;
                    prop_assert_eq!(x.row_popcount(ti, ni), naive);
                }
            }
        }
    }
}
