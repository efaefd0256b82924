//! One-parameter sweeps over a base configuration.

use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::report::SimReport;
use super::run::{run, Inputs};
use crate::ecp::EcpConfig;
use crate::error::{Result, SimError};
use crate::stratifier::PolicyKind;
use crate::ttb::BundleShape;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    ThetaS,
    BundleVolume,
    ThetaP,
}

impl FromStr for SweepParam {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "theta_s" => Ok(Self::ThetaS),
            "bundle_volume" => Ok(Self::BundleVolume),
            "theta_p" => Ok(Self::ThetaP),
            _ => Err(SimError::Config(format!(
                "unknown sweep parameter {s:?} (theta_s, bundle_volume, theta_p)"
            ))),
        }
    }
}

fn parse_u32(param: &str, v: &str) -> Result<u32> {
    v.trim()
        .parse()
        .map_err(|e| SimError::Config(format!("{param} value {v:?}: {e}")))
}

/// `base` with one parameter set to `value`. Bundle volumes are an integer
/// (shape picked by [`BundleShape::for_volume`]) or an explicit `BTxBN`.
/// The synthetic workload keeps the base clustering shape.
pub fn apply(base: &RunConfig, param: SweepParam, value: &str) -> Result<RunConfig> {
    let mut cfg = base.clone();
    match param {
        SweepParam::ThetaS => {
            cfg.strat.policy = PolicyKind::Fixed;
            cfg.strat.theta_s = parse_u32("theta_s", value)?;
        }
        SweepParam::ThetaP => cfg.ecp = EcpConfig::uniform(parse_u32("theta_p", value)?),
        SweepParam::BundleVolume => {
            cfg.workload.cluster_bundle = Some(base.workload.cluster_bundle.unwrap_or(base.bundle));
            cfg.bundle = if value.contains(['x', 'X']) {
                value.trim().parse()?
            } else {
                let v = parse_u32("bundle_volume", value)? as usize;
                BundleShape::for_volume(v, base.model.t)?
            };
        }
    }
    Ok(cfg)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointError {
    pub kind: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<SimReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<PointError>,
}

/// One table row; failed points keep their value and `ok = false`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: String,
    pub ok: bool,
    pub bundle: Option<String>,
    pub latency_cycles: Option<u64>,
    pub energy_pj: Option<f64>,
    pub edp: Option<f64>,
    pub q_keep_fraction: Option<f64>,
    pub k_keep_fraction: Option<f64>,
    pub weight_glb_reads: Option<u64>,
    pub activation_traffic_bits: Option<u64>,
}

impl SweepRow {
    fn of(p: &SweepPoint) -> Self {
        let r = p.report.as_ref();
        Self {
            value: p.value.clone(),
            ok: r.is_some(),
            bundle: r.map(|r| r.bundle.clone()),
            latency_cycles: r.map(|r| r.totals.latency_cycles),
            energy_pj: r.map(|r| r.totals.energy_pj),
            edp: r.map(|r| r.totals.edp),
            q_keep_fraction: r.map(|r| r.ecp.q_keep_fraction),
            k_keep_fraction: r.map(|r| r.ecp.k_keep_fraction),
            weight_glb_reads: r.map(|r| r.totals.weight_glb_reads),
            activation_traffic_bits: r.map(|r| r.totals.activation_traffic_bits),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub param: SweepParam,
    pub table: Vec<SweepRow>,
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("sweep serializes")
    }

    pub fn failures(&self) -> usize {
        self.table.iter().filter(|r| !r.ok).count()
    }
}

/// Run every value on its own thread-private state. All points share the
/// base config's inputs; a failing point is recorded and the rest continue.
pub fn sweep(base: &RunConfig, param: SweepParam, values: &[String], input: Option<&Path>) -> Result<SweepResult> {
    if values.is_empty() {
        return Err(SimError::Config("sweep needs at least one value".into()));
    }
    base.validate()?;
    let inputs = Inputs::resolve(base, input)?;
    let points: Vec<SweepPoint> = values
        .par_iter()
        .map(|v| {
            let outcome = apply(base, param, v).and_then(|cfg| run(&cfg, &inputs));
            match outcome {
                Ok(r) => SweepPoint {
                    value: v.clone(),
                    report: Some(r),
                    error: None,
                },
                Err(e) => SweepPoint {
                    value: v.clone(),
                    report: None,
                    error: Some(PointError {
                        kind: e.kind().into(),
                        message: e.to_string(),
                    }),
                },
            }
        })
        .collect();
    Ok(SweepResult {
        param,
        table: points.iter().map(SweepRow::of).collect(),
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn params_parse() {
        assert_eq!("theta_s".parse::<SweepParam>().unwrap(), SweepParam::ThetaS);
        assert!("volume".parse::<SweepParam>().is_err());
    }

    #[test]
    fn apply_volume() {
        let base = RunConfig::default();
        let c = apply(&base, SweepParam::BundleVolume, "20").unwrap();
        assert_eq!(c.bundle, BundleShape::new(4, 5).unwrap());
        assert_eq!(c.workload.cluster_bundle, Some(base.bundle));
        let c = apply(&base, SweepParam::BundleVolume, "1x3").unwrap();
        assert_eq!(c.bundle, BundleShape::new(1, 3).unwrap());
    }

    #[test]
    fn apply_thresholds() {
        let base = RunConfig::default();
        let c = apply(&base, SweepParam::ThetaS, "7").unwrap();
        assert_eq!((c.strat.policy, c.strat.theta_s), (PolicyKind::Fixed, 7));
        let c = apply(&base, SweepParam::ThetaP, "3").unwrap();
        assert_eq!(c.ecp, EcpConfig::uniform(3));
        assert!(apply(&base, SweepParam::ThetaP, "-1").is_err());
    }
}
