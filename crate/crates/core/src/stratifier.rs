//! Dense/sparse stratification of a layer's input features and the merge of
//! the two cores' partial sums into output spikes.

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::reference::{fire_layer, LifParams, LifState};
use crate::scalar::Scalar;
use crate::tensor::{Matrix, Tensor3};
use crate::ttb::{pack_ttb, SpikeTensor, TtbGrid};

/// A layer's input split into a dense and a sparse feature partition.
#[derive(Clone, Debug)]
pub struct Stratification<S> {
    pub theta_s: u32,
    /// Dense feature indices, ascending.
    pub dense: Vec<usize>,
    /// Sparse feature indices, ascending.
    pub sparse: Vec<usize>,
    pub x_dense: TtbGrid,
    pub x_sparse: TtbGrid,
    /// Row `k` is source row `dense[k]`.
    pub w_dense: Matrix<S>,
    pub w_sparse: Matrix<S>,
}

impl<S: Scalar> Stratification<S> {
    pub fn dense_fraction(&self) -> f64 {
        let d = self.dense.len() + self.sparse.len();
        if d == 0 {
            0.0
        } else {
            self.dense.len() as f64 / d as f64
        }
    }
}

/// Split features on their active-bundle count: dense iff count `> theta_s`.
pub fn stratify<S: Scalar>(grid: &TtbGrid, w: &Matrix<S>, theta_s: u32) -> Result<Stratification<S>> {
    if w.rows() != grid.features() {
        return shape_err(format!(
            "weight has {} rows, activations have {} features",
            w.rows(),
            grid.features()
        ));
    }
    let counts = grid.feature_active_counts();
    let (dense, sparse): (Vec<usize>, Vec<usize>) =
        (0..grid.features()).partition(|&i| counts[i] > theta_s);
    let x: &Arc<SpikeTensor> = grid.backing();
    Ok(Stratification {
        theta_s,
        x_dense: pack_ttb(x.select_features(&dense)?, grid.shape()),
        x_sparse: pack_ttb(x.select_features(&sparse)?, grid.shape()),
        w_dense: w.select_rows(&dense),
        w_sparse: w.select_rows(&sparse),
        dense,
        sparse,
    })
}

impl<S: Scalar> Stratification<S> {
    /// Route every feature to the dense core, inactive ones included.
    pub fn all_dense(grid: &TtbGrid, w: &Matrix<S>) -> Result<Self> {
        if w.rows() != grid.features() {
            return shape_err(format!(
                "weight has {} rows, activations have {} features",
                w.rows(),
                grid.features()
            ));
        }
        let x: &Arc<SpikeTensor> = grid.backing();
        Ok(Stratification {
            theta_s: 0,
            dense: (0..grid.features()).collect(),
            sparse: Vec::new(),
            x_dense: grid.clone(),
            x_sparse: pack_ttb(x.select_features(&[])?, grid.shape()),
            w_dense: w.clone(),
            w_sparse: w.select_rows(&[]),
        })
    }
}

/// Sum the two partial-sum tensors into neuron current and fire.
pub fn merge_and_fire<S: Scalar>(
    psum_dense: &Tensor3<S>,
    psum_sparse: &Tensor3<S>,
    p: &LifParams<S>,
    state: &mut LifState<S>,
) -> Result<SpikeTensor> {
    let current = psum_dense.add(psum_sparse)?;
    fire_layer(&current, p, state)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Fixed,
    #[default]
    Balance,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StratConfig {
    #[serde(default)]
    pub policy: PolicyKind,
    /// Threshold used by the fixed policy.
    #[serde(default = "default_theta_s")]
    pub theta_s: u32,
}

fn default_theta_s() -> u32 {
    2
}

impl Default for StratConfig {
    fn default() -> Self {
        Self {
            policy: PolicyKind::Balance,
            theta_s: default_theta_s(),
        }
    }
}

/// Work estimates for a candidate feature partition, supplied by the core
/// models.
pub trait WorkEstimator {
    fn dense_work(&self, grid: &TtbGrid, features: &[usize]) -> u64;
    fn sparse_work(&self, grid: &TtbGrid, features: &[usize]) -> u64;
}

fn partition_at(counts: &[u32], theta: u32) -> (Vec<usize>, Vec<usize>) {
    (0..counts.len()).partition(|&i| counts[i] > theta)
}

/// Pick `theta_s`: the fixed value, or the one that best balances the two
/// cores. Balance ties go to the smaller dense set, then the smaller threshold.
pub fn choose_theta_s(grid: &TtbGrid, cfg: &StratConfig, est: &dyn WorkEstimator) -> u32 {
    match cfg.policy {
        PolicyKind::Fixed => cfg.theta_s,
        PolicyKind::Balance => {
            let counts = grid.feature_active_counts();
            let candidates: BTreeSet<u32> = std::iter::once(0).chain(counts.iter().copied()).collect();
            candidates
                .into_iter()
                .map(|theta| {
                    let (dense, sparse) = partition_at(&counts, theta);
                    let gap = est.dense_work(grid, &dense).abs_diff(est.sparse_work(grid, &sparse));
                    ((gap, dense.len(), theta), theta)
                })
                .min_by_key(|(key, _)| *key)
                .map(|(_, theta)| theta)
                .unwrap_or(0)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference::linear_project;
    use crate::ttb::BundleShape;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_instance(seed: u64, t: usize, n: usize, d: usize, d_out: usize) -> (SpikeTensor, Matrix<i32>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rates: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..0.6)).collect();
        let x = SpikeTensor::from_fn(t, n, d, |_, _, di| rng.random_bool(rates[di])).unwrap();
        let w = Matrix::from_fn(d, d_out, |_, _| rng.random_range(-128..=127));
        (x, w)
    }

    /// Feature count = work on both sides.
    struct Count;
    impl WorkEstimator for Count {
        fn dense_work(&self, _: &TtbGrid, f: &[usize]) -> u64 {
            f.len() as u64
        }
        fn sparse_work(&self, _: &TtbGrid, f: &[usize]) -> u64 {
            f.len() as u64
        }
    }

    /// Dense work is per bundle on a wide array, sparse work per spike.
    struct Cost;
    impl WorkEstimator for Cost {
        fn dense_work(&self, g: &TtbGrid, f: &[usize]) -> u64 {
            (f.len() * g.bundles_per_feature()) as u64
        }
        fn sparse_work(&self, g: &TtbGrid, f: &[usize]) -> u64 {
            let mut z = 0u64;
            for pos in 0..g.bundles_per_feature() {
                for &i in f {
                    z += g.tag_at(pos, i) as u64;
                }
            }
            8 * z
        }
    }

    #[test]
    fn threshold_is_strict() {
        // feature 0 active in 3 bundles, feature 1 in none
        let x = SpikeTensor::from_fn(1, 3, 2, |_, _, d| d == 0).unwrap();
        let g = pack_ttb(x, BundleShape::new(1, 1).unwrap());
        let w = Matrix::from_fn(2, 1, |r, _| r as i32);
        let s = stratify(&g, &w, 2).unwrap();
        assert_eq!(s.dense, vec![0]);
        assert_eq!(s.sparse, vec![1]);
        let s = stratify(&g, &w, 3).unwrap();
        assert!(s.dense.is_empty());
        assert_eq!(s.sparse, vec![0, 1]);
    }

    #[test]
    fn row_mismatch_is_shape_error() {
        let g = pack_ttb(SpikeTensor::zeros(1, 2, 3).unwrap(), BundleShape::new(1, 1).unwrap());
        assert!(stratify(&g, &Matrix::<i32>::zeros(4, 2), 0).is_err());
    }

    #[test]
    fn merge_is_symmetric_and_additive() {
        let (x, w) = random_instance(3, 4, 5, 6, 3);
        let g = pack_ttb(x.clone(), BundleShape::new(2, 2).unwrap());
        let s = stratify(&g, &w, 1).unwrap();
        let pd = linear_project(s.x_dense.backing(), &s.w_dense).unwrap();
        let ps = linear_project(s.x_sparse.backing(), &s.w_sparse).unwrap();
        let p = LifParams::new(100, 5).unwrap();
        let fire = |a: &Tensor3<i32>, b: &Tensor3<i32>| {
            let mut st = LifState::new(5 * 3, &p);
            merge_and_fire(a, b, &p, &mut st).unwrap()
        };
        let zero = Tensor3::zeros(4, 5, 3);
        let mut st = LifState::new(15, &p);
        assert_eq!(fire(&pd, &zero), fire_layer(&pd, &p, &mut st).unwrap());
        assert_eq!(fire(&pd, &ps), fire(&ps, &pd));
        let mut st = LifState::new(15, &p);
        let reference = fire_layer(&linear_project(&x, &w).unwrap(), &p, &mut st).unwrap();
        assert_eq!(fire(&pd, &ps), reference);
    }

    #[test]
    fn fixed_policy_returns_threshold() {
        let g = pack_ttb(SpikeTensor::zeros(1, 2, 3).unwrap(), BundleShape::new(1, 1).unwrap());
        let cfg = StratConfig { policy: PolicyKind::Fixed, theta_s: 7 };
        assert_eq!(choose_theta_s(&g, &cfg, &Count), 7);
    }

    #[test]
    fn balance_degenerate_and_uniform() {
        let bal = StratConfig { policy: PolicyKind::Balance, theta_s: 0 };
        let g = pack_ttb(SpikeTensor::zeros(2, 4, 6).unwrap(), BundleShape::new(1, 2).unwrap());
        assert_eq!(choose_theta_s(&g, &bal, &Cost), 0);
        // every feature equally active: all-dense and all-sparse tie on gap,
        // the smaller dense set wins
        let x = SpikeTensor::from_fn(2, 4, 6, |_, n, _| n == 0).unwrap();
        let g = pack_ttb(x, BundleShape::new(1, 2).unwrap());
        let theta = choose_theta_s(&g, &bal, &Count);
        assert!(stratify(&g, &Matrix::<i32>::zeros(6, 1), theta).unwrap().dense.is_empty());
    }

    #[test]
    fn balance_lands_between_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = SpikeTensor::from_fn(4, 16, 20, |_, _, d| rng.random_bool(if d % 2 == 0 { 0.7 } else { 0.02 }))
            .unwrap();
        let g = pack_ttb(x, BundleShape::new(2, 2).unwrap());
        let counts = g.feature_active_counts();
        let bal = StratConfig { policy: PolicyKind::Balance, theta_s: 0 };
        let theta = choose_theta_s(&g, &bal, &Cost);
        // exhaustive sweep: no threshold balances better
        let gap = |t: u32| {
            let (d, s) = partition_at(&counts, t);
            Cost.dense_work(&g, &d).abs_diff(Cost.sparse_work(&g, &s))
        };
        let best = (0..=g.bundles_per_feature() as u32).map(gap).min().unwrap();
        assert_eq!(gap(theta), best);
        let low_max = counts.iter().skip(1).step_by(2).max().unwrap();
        let high_min = counts.iter().step_by(2).min().unwrap();
        assert!(theta >= *low_max && theta < *high_min, "theta {theta} counts {counts:?}");
    }

    proptest! {
        #[test]
        fn partition_identity(seed in any::<u64>(), theta in 0u32..10, d in 1usize..12) {
            let (x, w) = random_instance(seed, 3, 7, d, 5);
            let g = pack_ttb(x.clone(), BundleShape::new(2, 3).unwrap());
            let s = stratify(&g, &w, theta).unwrap();
            let mut all: Vec<usize> = s.dense.iter().chain(&s.sparse).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..d).collect::<Vec<_>>());
            prop_assert!(s.dense.windows(2).all(|p| p[0] < p[1]));
            prop_assert!(s.sparse.windows(2).all(|p| p[0] < p[1]));
            for (k, &src) in s.dense.iter().enumerate() {
                prop_assert_eq!(s.w_dense.row(k), w.row(src));
            }
            let pd = linear_project(s.x_dense.backing(), &s.w_dense).unwrap();
            let ps = linear_project(s.x_sparse.backing(), &s.w_sparse).unwrap();
            prop_assert_eq!(pd.add(&ps).unwrap(), linear_project(&x, &w).unwrap());
        }

        #[test]
        fn raising_threshold_never_adds_dense(seed in any::<u64>(), lo in 0u32..8, step in 0u32..4) {
            let (x, w) = random_instance(seed, 4, 6, 10, 2);
            let g = pack_ttb(x, BundleShape::new(2, 2).unwrap());
            let a = stratify(&g, &w, lo).unwrap();
            let b = stratify(&g, &w, lo + step).unwrap();
            prop_assert!(b.dense.iter().all(|f| a.dense.contains(f)));
        }
    }
}
