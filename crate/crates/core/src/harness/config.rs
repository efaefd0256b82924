//! Run configuration, one JSON namespace per subsystem.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::cores::{AttnCoreConfig, DenseCoreConfig, SparseCoreConfig};
use crate::ecp::EcpConfig;
use crate::error::{Result, SimError};
use crate::memsys::{EnergyTable, MemConfig};
use crate::reference::ModelConfig;
use crate::stratifier::StratConfig;
use crate::ttb::BundleShape;

/// Bundle shapes are written as `"BTxBN"` strings.
pub mod shape_str {
    use super::*;

    pub fn serialize<Se: Serializer>(s: &BundleShape, ser: Se) -> std::result::Result<Se::Ok, Se::Error> {
        ser.collect_str(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> std::result::Result<BundleShape, D::Error> {
        let s = String::deserialize(de)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

mod opt_shape_str {
    use super::*;

    pub fn serialize<Se: Serializer>(s: &Option<BundleShape>, ser: Se) -> std::result::Result<Se::Ok, Se::Error> {
        match s {
            Some(s) => ser.collect_str(s),
            None => ser.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> std::result::Result<Option<BundleShape>, D::Error> {
        Option::<String>::deserialize(de)?
            .map(|s| s.parse().map_err(serde::de::Error::custom))
            .transpose()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Heterogeneous,
    /// Every feature goes to the dense core; the sparse core idles.
    DenseOnly,
}

/// Per-feature rates drawn from two populations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Bimodal {
    /// Share of features drawn from the dense population.
    pub dense_fraction: f64,
    pub dense_rate: f64,
    pub sparse_rate: f64,
}

impl Default for Bimodal {
    fn default() -> Self {
        Self {
            dense_fraction: 0.5,
            dense_rate: 0.6,
            sparse_rate: 0.005,
        }
    }
}

/// Where the block-0 input and the weights come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Workload {
    pub rate: f64,
    pub cluster: f64,
    /// Bundle shape spikes are clustered into; the run's shape when absent.
    #[serde(with = "opt_shape_str", skip_serializing_if = "Option::is_none")]
    pub cluster_bundle: Option<BundleShape>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bimodal: Option<Bimodal>,
    /// TTBS file used instead of synthesis.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    /// TTBW file with six matrices per block (Q, K, V, O, MLP1, MLP2).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<PathBuf>,
}

impl Default for Workload {
    fn default() -> Self {
        Self {
            rate: 0.15,
            cluster: 0.5,
            cluster_bundle: None,
            bimodal: None,
            input: None,
            weights: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Metrics {
    /// Weight of the bundle-sparsity penalty.
    pub lambda: f64,
    /// Count V tags in the penalty alongside Q, K and the projection inputs.
    pub bsp_includes_v: bool,
}

impl Default for Metrics {
    fn default() -> Self {
        Self {
            lambda: 1e-4,
            bsp_includes_v: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    #[serde(with = "shape_str")]
    pub bundle: BundleShape,
    pub strat: StratConfig,
    pub ecp: EcpConfig,
    pub dense: DenseCoreConfig,
    pub sparse: SparseCoreConfig,
    pub attn: AttnCoreConfig,
    pub mem: MemConfig,
    pub workload: Workload,
    pub metrics: Metrics,
    pub seed: u64,
    pub mode: Mode,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig {
                blocks: 2,
                t: 4,
                n: 196,
                d: 128,
                heads: 4,
                ..ModelConfig::default()
            },
            bundle: BundleShape { bs_t: 2, bs_n: 4 },
            strat: StratConfig::default(),
            ecp: EcpConfig::default(),
            dense: DenseCoreConfig::default(),
            sparse: SparseCoreConfig::default(),
            attn: AttnCoreConfig::default(),
            mem: MemConfig::default(),
            workload: Workload::default(),
            metrics: Metrics::default(),
            seed: 1,
            mode: Mode::Heterogeneous,
        }
    }
}

fn merge(base: &mut serde_json::Value, over: serde_json::Value) {
    match (base, over) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

impl RunConfig {
    /// Parse a config; keys it leaves out, at any depth, keep their defaults.
    pub fn from_json(text: &str) -> Result<Self> {
        let given: serde_json::Value = serde_json::from_str(text)?;
        if !given.is_object() {
            return Err(SimError::Config("config must be a JSON object".into()));
        }
        let mut merged = serde_json::to_value(Self::default())?;
        merge(&mut merged, given);
        Ok(serde_json::from_value(merged)?)
    }

    /// Read a config file; relative paths inside it resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg = Self::from_json(&std::fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut Option<PathBuf>| {
            if let Some(p) = p {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        };
        rebase(&mut cfg.workload.input);
        rebase(&mut cfg.workload.weights);
        if let Some(t) = &mut cfg.mem.energy_table {
            let p = Path::new(t.as_str());
            if p.is_relative() {
                *t = base.join(p).to_string_lossy().into_owned();
            }
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.bundle.validate()?;
        self.dense.validate()?;
        self.sparse.validate()?;
        self.attn.validate()?;
        self.attn.check_head_dim(self.model.head_dim())?;
        self.mem.validate()?;
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(SimError::Config(format!("{name} {v} outside [0, 1]")))
            }
        };
        unit("workload.rate", self.workload.rate)?;
        unit("workload.cluster", self.workload.cluster)?;
        if let Some(b) = &self.workload.bimodal {
            unit("workload.bimodal.dense_fraction", b.dense_fraction)?;
            unit("workload.bimodal.dense_rate", b.dense_rate)?;
            unit("workload.bimodal.sparse_rate", b.sparse_rate)?;
        }
        if let Some(s) = &self.workload.cluster_bundle {
            s.validate()?;
        }
        if !(self.metrics.lambda >= 0.0 && self.metrics.lambda.is_finite()) {
            return Err(SimError::Config("metrics.lambda must be a non-negative number".into()));
        }
        let files = [
            ("workload.input", self.workload.input.clone()),
            ("workload.weights", self.workload.weights.clone()),
            ("mem.energy_table", self.mem.energy_table.as_ref().map(PathBuf::from)),
        ];
        for (key, p) in files {
            if let Some(p) = p {
                if !p.is_file() {
                    return Err(SimError::Config(format!("{key}: {} does not exist", p.display())));
                }
            }
        }
        Ok(())
    }

    pub fn energy_table(&self) -> Result<EnergyTable> {
        match &self.mem.energy_table {
            Some(p) => EnergyTable::load(p),
            None => Ok(EnergyTable::default()),
        }
    }

    /// SHA-256 of the compact JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_default() {
        assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn round_trip() {
        let mut c = RunConfig::default();
        c.workload.bimodal = Some(Bimodal::default());
        c.workload.cluster_bundle = Some(BundleShape::new(1, 3).unwrap());
        c.mode = Mode::DenseOnly;
        let back = RunConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn bundle_is_a_string() {
        let c = RunConfig::from_json(r#"{"bundle": "3x5"}"#).unwrap();
        assert_eq!(c.bundle, BundleShape::new(3, 5).unwrap());
        assert!(RunConfig::from_json(r#"{"bundle": "3by5"}"#).is_err());
    }

    #[test]
    fn partial_sections_keep_defaults() {
        let c = RunConfig::from_json(r#"{"model": {"t": 8, "lif": {"attn": {"v_th": 3}}}}"#).unwrap();
        let d = RunConfig::default();
        assert_eq!(c.model.t, 8);
        assert_eq!(c.model.n, d.model.n);
        assert_eq!(c.model.lif.attn.v_th, 3);
        assert_eq!(c.model.lif.q, d.model.lif.q);
        assert!(RunConfig::from_json("[1]").is_err());
        assert!(RunConfig::from_json(r#"{"model": {"lif": {"q": {"v_tH": 1}}}}"#).is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_json(r#"{"bogus": 1}"#).is_err());
        assert!(RunConfig::from_json(r#"{"dense": {"rowz": 4}}"#).is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.seed += 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn missing_files_are_config_errors() {
        let mut c = RunConfig::default();
        c.workload.input = Some("/nonexistent/in.ttbs".into());
        assert!(matches!(c.validate(), Err(SimError::Config(_))));
    }

    #[test]
    fn rates_checked() {
        let mut c = RunConfig::default();
        c.workload.rate = 1.5;
        assert!(c.validate().is_err());
    }
}
