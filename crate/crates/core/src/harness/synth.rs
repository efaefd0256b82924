//! Seeded synthetic activations and weights.

use rand::seq::index;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};

use super::config::{Bimodal, RunConfig};
use crate::error::{Result, SimError};
use crate::reference::{BlockWeights, ModelConfig};
use crate::tensor::Matrix;
use crate::ttb::{BundleShape, SpikeTensor};

const INPUT_STREAM: u64 = 0;
const WEIGHT_STREAM: u64 = 1;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Spikes at overall density `spike_rate`, clustered into bundles of `shape`
/// by `cluster` (0 = independent bits, 1 = fewest bundles per feature).
pub fn synth_workload(
    t: usize,
    n: usize,
    d: usize,
    spike_rate: f64,
    cluster: f64,
    shape: BundleShape,
    seed: u64,
) -> Result<SpikeTensor> {
    synth_features(t, n, &vec![spike_rate; d], cluster, shape, &mut rng_for(seed, INPUT_STREAM))
}

/// Like [`synth_workload`] with a separate rate per feature.
pub fn synth_features(
    t: usize,
    n: usize,
    rates: &[f64],
    cluster: f64,
    shape: BundleShape,
    rng: &mut impl Rng,
) -> Result<SpikeTensor> {
    if !(0.0..=1.0).contains(&cluster) {
        return Err(SimError::Config(format!("cluster {cluster} outside [0, 1]")));
    }
    if let Some(r) = rates.iter().find(|r| !(0.0..=1.0).contains(*r)) {
        return Err(SimError::Config(format!("spike rate {r} outside [0, 1]")));
    }
    shape.validate()?;
    let mut x = SpikeTensor::zeros(t, n, rates.len())?;
    let bundles = bundle_cells(t, n, shape);
    for (f, &rate) in rates.iter().enumerate() {
        if cluster == 0.0 {
            for ti in 0..t {
                for ni in 0..n {
                    if rng.random_bool(rate) {
                        x.set(ti, ni, f, true);
                    }
                }
            }
        } else {
            for (ti, ni) in clustered_feature(&bundles, t * n, rate, cluster, rng) {
                x.set(ti, ni, f, true);
            }
        }
    }
    Ok(x)
}

/// Cells of every bundle, in grid order.
fn bundle_cells(t: usize, n: usize, shape: BundleShape) -> Vec<Vec<(usize, usize)>> {
    let mut out = Vec::new();
    for bn in 0..n.div_ceil(shape.bs_n) {
        for bt in 0..t.div_ceil(shape.bs_t) {
            let mut cells = Vec::new();
            for ti in bt * shape.bs_t..((bt + 1) * shape.bs_t).min(t) {
                for ni in bn * shape.bs_n..((bn + 1) * shape.bs_n).min(n) {
                    cells.push((ti, ni));
                }
            }
            out.push(cells);
        }
    }
    out
}

fn clustered_feature(
    bundles: &[Vec<(usize, usize)>],
    cells: usize,
    rate: f64,
    cluster: f64,
    rng: &mut impl Rng,
) -> Vec<(usize, usize)> {
    let k = Binomial::new(cells as u64, rate).expect("rate checked").sample(rng) as usize;
    if k == 0 {
        return Vec::new();
    }
    let b = bundles.len();

    // fewest bundles that can hold k spikes
    let mut caps: Vec<usize> = bundles.iter().map(Vec::len).collect();
    caps.sort_unstable_by(|a, b| b.cmp(a));
    let mut m_min = 0;
    let mut held = 0;
    while held < k {
        held += caps[m_min];
        m_min += 1;
    }
    // expected active bundles for k independently placed spikes
    let p = k as f64 / cells as f64;
    let m_ind: f64 = bundles.iter().map(|c| 1.0 - (1.0 - p).powi(c.len() as i32)).sum();
    let m_max = k.min(b);
    let m_ind = (m_ind.round() as usize).clamp(m_min, m_max);
    let m = m_min + ((1.0 - cluster) * (m_ind - m_min) as f64).round() as usize;

    let mut chosen: Vec<usize> = index::sample(rng, b, m).into_vec();
    let mut rest: Vec<usize> = {
        let mut taken = vec![false; b];
        chosen.iter().for_each(|&i| taken[i] = true);
        (0..b).filter(|&i| !taken[i]).collect()
    };
    // swap in larger bundles until the chosen ones can hold k spikes
    rest.shuffle(rng);
    rest.sort_by_key(|&i| std::cmp::Reverse(bundles[i].len()));
    let mut cap: usize = chosen.iter().map(|&i| bundles[i].len()).sum();
    let mut next = 0;
    while cap < k {
        let (slot, _) = chosen
            .iter()
            .enumerate()
            .min_by_key(|(_, &i)| bundles[i].len())
            .expect("m >= 1");
        let incoming = rest[next];
        next += 1;
        cap = cap - bundles[chosen[slot]].len() + bundles[incoming].len();
        chosen[slot] = incoming;
    }

    // one spike per chosen bundle, the rest anywhere among their free cells
    let mut out = Vec::with_capacity(k);
    let mut free = Vec::new();
    for &i in &chosen {
        let cells = &bundles[i];
        let first = rng.random_range(0..cells.len());
        out.push(cells[first]);
        free.extend(cells.iter().enumerate().filter(|&(j, _)| j != first).map(|(_, &c)| c));
    }
    for j in index::sample(rng, free.len(), k - m) {
        out.push(free[j]);
    }
    out
}

/// Per-feature rates: a seeded `dense_fraction` of features at `dense_rate`.
pub fn bimodal_rates(d: usize, b: &Bimodal, rng: &mut impl Rng) -> Vec<f64> {
    let n_dense = (b.dense_fraction * d as f64).round() as usize;
    let mut rates: Vec<f64> = (0..d)
        .map(|i| if i < n_dense { b.dense_rate } else { b.sparse_rate })
        .collect();
    rates.shuffle(rng);
    rates
}

/// Uniform signed weights in the configured bit-width.
pub fn random_weights(cfg: &ModelConfig, rng: &mut impl Rng) -> Vec<BlockWeights<i32>> {
    let hi = (1i32 << (cfg.weight_bits - 1)) - 1;
    let lo = -hi - 1;
    let mut m = |r: usize, c: usize| Matrix::from_fn(r, c, |_, _| rng.random_range(lo..=hi));
    let (d, h) = (cfg.d, cfg.hidden_dim());
    (0..cfg.blocks)
        .map(|_| BlockWeights {
            w_q: m(d, d),
            w_k: m(d, d),
            w_v: m(d, d),
            w_o: m(d, d),
            w_mlp1: m(d, h),
            w_mlp2: m(h, d),
        })
        .collect()
}

/// The block-0 input a config describes when no input file is given.
pub fn synth_input(cfg: &RunConfig) -> Result<SpikeTensor> {
    let m = &cfg.model;
    let shape = cfg.workload.cluster_bundle.unwrap_or(cfg.bundle);
    let mut rng = rng_for(cfg.seed, INPUT_STREAM);
    let rates = match &cfg.workload.bimodal {
        Some(b) => bimodal_rates(m.d, b, &mut rng),
        None => vec![cfg.workload.rate; m.d],
    };
    synth_features(m.t, m.n, &rates, cfg.workload.cluster, shape, &mut rng)
}

/// The weights a config describes when no weight file is given.
pub fn synth_weights(cfg: &RunConfig) -> Vec<BlockWeights<i32>> {
    random_weights(&cfg.model, &mut rng_for(cfg.seed, WEIGHT_STREAM))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ttb::pack_ttb;
    use proptest::prelude::*;

    fn shape(t: usize, n: usize) -> BundleShape {
        BundleShape::new(t, n).unwrap()
    }

    #[test]
    fn rate_zero_and_one() {
        for c in [0.0, 0.3, 1.0] {
            let z = synth_workload(4, 10, 6, 0.0, c, shape(2, 4), 3).unwrap();
            assert_eq!(z.popcount(), 0);
            let o = synth_workload(4, 10, 6, 1.0, c, shape(2, 4), 3).unwrap();
            assert_eq!(o.popcount(), 240);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = synth_workload(4, 32, 16, 0.2, 0.5, shape(2, 4), 9).unwrap();
        let b = synth_workload(4, 32, 16, 0.2, 0.5, shape(2, 4), 9).unwrap();
        let c = synth_workload(4, 32, 16, 0.2, 0.5, shape(2, 4), 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn density_matches_rate() {
        for c in [0.0, 0.5, 1.0] {
            let x = synth_workload(8, 64, 64, 0.1, c, shape(2, 4), 1).unwrap();
            assert!((x.density() - 0.1).abs() < 0.01, "cluster {c}: {}", x.density());
        }
    }

    #[test]
    fn clustering_reduces_active_bundles() {
        // volume 8, rate 0.1: independent bits leave ~57% of bundles active,
        // full clustering about rate * volume times fewer
        let s = shape(2, 4);
        let mut loose = 0.0;
        let mut tight = 0.0;
        for seed in 0..20 {
            let frac = |c| {
                let g = pack_ttb(synth_workload(4, 64, 32, 0.1, c, s, seed).unwrap(), s);
                g.active_bundles() as f64 / g.total_bundles() as f64
            };
            loose += frac(0.0);
            tight += frac(1.0);
        }
        loose /= 20.0;
        tight /= 20.0;
        assert!(tight < loose);
        assert!((loose - (1.0 - 0.9f64.powi(8))).abs() < 0.03, "{loose}");
        assert!(tight < 0.15, "{tight}");
    }

    #[test]
    fn full_cluster_uses_fewest_bundles() {
        let s = shape(2, 3);
        let x = synth_workload(4, 9, 5, 0.4, 1.0, s, 4).unwrap();
        let g = pack_ttb(x.clone(), s);
        for (f, &active) in g.feature_active_counts().iter().enumerate() {
            let spikes = x.select_features(&[f]).unwrap().popcount() as u32;
            assert_eq!(active, spikes.div_ceil(6));
        }
    }

    #[test]
    fn bimodal_split() {
        let mut rng = rng_for(0, 0);
        let r = bimodal_rates(10, &Bimodal::default(), &mut rng);
        assert_eq!(r.iter().filter(|&&v| v == 0.6).count(), 5);
        assert_eq!(r.iter().filter(|&&v| v == 0.005).count(), 5);
    }

    #[test]
    fn weights_in_range() {
        let cfg = ModelConfig {
            weight_bits: 4,
            ..ModelConfig::default()
        };
        let w = random_weights(&cfg, &mut rng_for(2, WEIGHT_STREAM));
        for b in &w {
            b.validate(&cfg).unwrap();
            assert!(b.w_q.as_slice().iter().all(|&v| (-8..=7).contains(&v)));
        }
        assert!(w[0].w_q.as_slice().contains(&-8));
    }

    proptest! {
        #[test]
        fn clustered_counts_are_feasible(seed in any::<u64>(), t in 1usize..7, n in 1usize..20, rate in 0.0f64..1.0, c in 0.0f64..=1.0, bt in 1usize..4, bn in 1usize..5) {
            let x = synth_workload(t, n, 3, rate, c, shape(bt, bn), seed).unwrap();
            prop_assert_eq!(x.dims(), (t, n, 3));
        }
    }
}
