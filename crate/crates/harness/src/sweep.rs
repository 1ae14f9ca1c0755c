//! One-parameter sweeps: the same experiment repeated per parameter value.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::Sample;
use crate::experiment::{run_experiment, ExperimentConfig, ExperimentReport, Method};
use crate::{HarnessError, Result};
use pointattack::Classifier64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepParam {
    Alpha,
    Beta,
    C,
    Lambda,
    Eta,
    K,
    WeightDenominator,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Alpha => "alpha",
            SweepParam::Beta => "beta",
            SweepParam::C => "c",
            SweepParam::Lambda => "lambda",
            SweepParam::Eta => "eta",
            SweepParam::K => "k",
            SweepParam::WeightDenominator => "weight-denominator",
        }
    }

    /// Returns `base` with this parameter set to `value`.
    pub fn apply(self, base: &ExperimentConfig, value: &str) -> Result<ExperimentConfig> {
        let mut c = base.clone();
        let bad = || HarnessError::usage(format!("invalid value `{value}` for {}", self.name()));
        let real = || value.parse::<f64>().map_err(|_| bad());
        match self {
            SweepParam::Alpha => c.alpha = real()?,
            SweepParam::Beta => c.beta = real()?,
            SweepParam::C => c.c = real()?,
            SweepParam::Lambda => c.lambda = real()?,
            SweepParam::Eta => c.eta = real()?,
            SweepParam::K => c.k = value.parse().map_err(|_| bad())?,
            SweepParam::WeightDenominator => {
                let norm: pointattack::DenominatorNorm = value.parse().map_err(|_| bad())?;
                c.weight_denominator = norm.name().into();
            }
        }
        c.attack_config(0)?;
        Ok(c)
    }

    /// `k` and `lambda` only act inside SubAttack.
    pub fn requires_subattack(self) -> bool {
        matches!(self, SweepParam::K | SweepParam::Lambda)
    }
}

impl FromStr for SweepParam {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "alpha" => SweepParam::Alpha,
            "beta" => SweepParam::Beta,
            "c" => SweepParam::C,
            "lambda" => SweepParam::Lambda,
            "eta" => SweepParam::Eta,
            "k" => SweepParam::K,
            "weight-denominator" => SweepParam::WeightDenominator,
            _ => return Err(HarnessError::usage(format!("unknown sweep parameter `{s}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub value: String,
    pub report: ExperimentReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub schema_version: u32,
    pub parameter: SweepParam,
    pub entries: Vec<SweepEntry>,
}

/// Validates every value before running anything.
pub fn run_sweep(
    model: &Classifier64,
    samples: &[Sample],
    base: &ExperimentConfig,
    param: SweepParam,
    values: &[String],
) -> Result<SweepReport> {
    if values.is_empty() {
        return Err(HarnessError::usage("sweep needs at least one value"));
    }
    if param.requires_subattack() && base.method != Method::Subattack {
        return Err(HarnessError::usage(format!(
            "sweeping {} needs --method subattack",
            param.name()
        )));
    }
    let configs = values
        .iter()
        .map(|v| param.apply(base, v))
        .collect::<Result<Vec<_>>>()?;
    let entries = values
        .iter()
        .zip(&configs)
        .map(|(v, c)| {
            Ok(SweepEntry {
                value: v.clone(),
                report: run_experiment(model, samples, c, None)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepReport {
        schema_version: crate::experiment::REPORT_SCHEMA_VERSION,
        parameter: param,
        entries,
    })
}
