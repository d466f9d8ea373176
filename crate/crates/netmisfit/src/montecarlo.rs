//! Replication engine for the null and perturbed scenarios.
//!
//! Replication r draws all of its randomness from stream r of the master
//! seed, so results are independent of worker count and execution order.
//! Per-replication estimation failures and degenerate test outcomes are
//! tallied as their own categories, never folded into the accept/reject
//! counts; the summary's proportion uses the recorded denominator
//! convention `well_specified / (replications − estimation_failed)`.

use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::erg::{erg_test, ErgSizeFactor, ErgTestMode};
use crate::error::{Error, Result};
use crate::samplers::{
    sample_er_with_rng, sample_sbm_scenario2_from_multipliers, sample_sbm_with_rng,
    sample_erg_scenario2_from_multipliers, MultiplierRule, SbmParams, Seed,
};
use crate::sbm::{
    sbm_test_with_fit, sbm_mle_observed, sbm_vem_fit, BoundaryPolicy, SbmSizeFactor,
    SbmTestMode, SbmTestOptions, IsolatedPolicy,
};
use crate::Decision;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Erg,
    Sbm,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Erg => write!(f, "erg"),
            Self::Sbm => write!(f, "sbm"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Null,
    Perturbed,
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Null => write!(f, "null"),
            Self::Perturbed => write!(f, "perturbed"),
        }
    }
}

/// Which estimator feeds the SBM test inside the harness. The null
/// scenario's generated labels are observed by construction; the
/// variational variant mimics a latent-label pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SbmMcFit {
    ObservedLabels,
    VariationalEm { restarts: usize },
}

/// Per-model test configuration carried by a scenario run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestConfig {
    Erg {
        mode: ErgTestMode,
        size_factor: ErgSizeFactor,
    },
    Sbm {
        mode: SbmTestMode,
        size_factor: SbmSizeFactor,
        boundary: BoundaryPolicy,
        fit: SbmMcFit,
    },
}

impl TestConfig {
    pub fn default_erg() -> Self {
        Self::Erg { mode: ErgTestMode::PaperLiteral, size_factor: ErgSizeFactor::PairCount }
    }

    pub fn default_sbm() -> Self {
        Self::Sbm {
            mode: SbmTestMode::Reduced,
            size_factor: SbmSizeFactor::VertexCount,
            boundary: BoundaryPolicy::Strict,
            fit: SbmMcFit::ObservedLabels,
        }
    }
}

/// Full description of one Monte Carlo run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub model: ModelKind,
    pub scenario: Scenario,
    pub n: usize,
    pub m: Option<usize>,
    pub replications: usize,
    pub alpha: f64,
    pub config: TestConfig,
    pub master_seed: u64,
    /// Worker threads; None uses the process default.
    pub workers: Option<usize>,
    /// Retain per-replication records in the summary.
    pub keep_records: bool,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if self.replications < 1 {
            return Err(Error::InvalidArgument { message: "replications must be >= 1".into() });
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidArgument { message: format!("alpha = {}", self.alpha) });
        }
        if self.scenario == Scenario::Perturbed && self.n % 10 != 0 {
            return Err(Error::IndivisibleN { n: self.n });
        }
        match (self.model, &self.config) {
            (ModelKind::Erg, TestConfig::Erg { .. }) => {}
            (ModelKind::Sbm, TestConfig::Sbm { .. }) => {
                if self.m.is_none() {
                    return Err(Error::InvalidArgument {
                        message: "sbm scenarios need a block count m".into(),
                    });
                }
            }
            _ => {
                return Err(Error::InvalidArgument {
                    message: "test config does not match the model".into(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepOutcome {
    WellSpecified,
    Misspecified,
    Degenerate,
    EstimationFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub replication: usize,
    pub outcome: RepOutcome,
    pub statistic: Option<f64>,
    pub p_value: Option<f64>,
    pub error: Option<String>,
}

/// Aggregated result of a scenario run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub spec: ScenarioSpec,
    pub n_well_specified: usize,
    pub n_misspecified: usize,
    pub n_degenerate: usize,
    pub n_estimation_failed: usize,
    /// well_specified / (replications − estimation_failed); None when the
    /// denominator is empty.
    pub proportion_well_specified: Option<f64>,
    pub wall_ms: u64,
    pub records: Option<Vec<RepRecord>>,
}

impl McSummary {
    /// misspecified / (replications − estimation_failed).
    pub fn rejection_rate(&self) -> Option<f64> {
        let denom = self.spec.replications - self.n_estimation_failed;
        if denom == 0 {
            None
        } else {
            Some(self.n_misspecified as f64 / denom as f64)
        }
    }
}

/// Run every replication of the scenario, in parallel when workers
/// permit, and tally outcomes in replication order.
pub fn run_scenario(spec: &ScenarioSpec) -> Result<McSummary> {
    spec.validate()?;
    let start = Instant::now();
    let run_all = || -> Vec<RepRecord> {
        (0..spec.replications)
            .into_par_iter()
            .map(|r| run_replication(spec, r))
            .collect()
    };
    let records: Vec<RepRecord> = match spec.workers {
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(w).build().map_err(|e| {
                Error::InvalidArgument { message: format!("thread pool: {e}") }
            })?;
            pool.install(run_all)
        }
        None => run_all(),
    };
    let mut summary = McSummary {
        spec: spec.clone(),
        n_well_specified: 0,
        n_misspecified: 0,
        n_degenerate: 0,
        n_estimation_failed: 0,
        proportion_well_specified: None,
        wall_ms: 0,
        records: None,
    };
    for record in &records {
        match record.outcome {
            RepOutcome::WellSpecified => summary.n_well_specified += 1,
            RepOutcome::Misspecified => summary.n_misspecified += 1,
            RepOutcome::Degenerate => summary.n_degenerate += 1,
            RepOutcome::EstimationFailed => summary.n_estimation_failed += 1,
        }
    }
    let denom = spec.replications - summary.n_estimation_failed;
    if denom > 0 {
        summary.proportion_well_specified = Some(summary.n_well_specified as f64 / denom as f64);
    }
    summary.wall_ms = start.elapsed().as_millis() as u64;
    if spec.keep_records {
        summary.records = Some(records);
    }
    Ok(summary)
}

fn run_replication(spec: &ScenarioSpec, r: usize) -> RepRecord {
    let outcome = replicate(spec, r);
    match outcome {
        Ok((decision, statistic, p_value)) => RepRecord {
            replication: r,
            outcome: match decision {
                Decision::WellSpecified => RepOutcome::WellSpecified,
                Decision::Misspecified => RepOutcome::Misspecified,
                Decision::Degenerate => RepOutcome::Degenerate,
            },
            statistic,
            p_value,
            error: None,
        },
        Err(err) => RepRecord {
            replication: r,
            outcome: RepOutcome::EstimationFailed,
            statistic: None,
            p_value: None,
            error: Some(err.to_string()),
        },
    }
}

fn replicate(spec: &ScenarioSpec, r: usize) -> Result<(Decision, Option<f64>, Option<f64>)> {
    let mut rng = Seed::new(spec.master_seed, r as u64).rng();
    match (&spec.config, spec.model) {
        (TestConfig::Erg { mode, size_factor }, ModelKind::Erg) => {
            let alpha_dgp: f64 = rng.gen();
            let graph = match spec.scenario {
                Scenario::Null => sample_er_with_rng(spec.n, alpha_dgp, &mut rng)?,
                Scenario::Perturbed => {
                    let multipliers: Vec<f64> = (0..10).map(|_| rng.gen()).collect();
                    sample_erg_scenario2_from_multipliers(
                        spec.n,
                        alpha_dgp,
                        &multipliers,
                        MultiplierRule::LowerEndpoint,
                        Seed::new(rng.gen(), 0),
                    )?
                }
            };
            let report = erg_test(&graph, spec.alpha, *mode, *size_factor)?;
            Ok((report.decision, report.statistic, report.p_value))
        }
        (TestConfig::Sbm { mode, size_factor, boundary, fit }, ModelKind::Sbm) => {
            let m = spec.m.expect("validated");
            // symmetric eta, upper triangle row by row
            let mut eta = vec![vec![0.0; m]; m];
            for k in 0..m {
                for l in k..m {
                    let v: f64 = rng.gen();
                    eta[k][l] = v;
                    eta[l][k] = v;
                }
            }
            let labels: Vec<usize> = (0..spec.n).map(|_| rng.gen_range(1..=m)).collect();
            let params = SbmParams::new(vec![1.0 / m as f64; m], eta)?;
            let graph = match spec.scenario {
                Scenario::Null => {
                    sample_sbm_with_rng(spec.n, &params, &mut rng, Some(&labels))?
                }
                Scenario::Perturbed => {
                    let multipliers: Vec<f64> = (0..10).map(|_| rng.gen()).collect();
                    sample_sbm_scenario2_from_multipliers(
                        spec.n,
                        &params,
                        &multipliers,
                        MultiplierRule::LowerEndpoint,
                        Seed::new(rng.gen(), 0),
                        Some(&labels),
                    )?
                }
            };
            let fitted = match fit {
                SbmMcFit::ObservedLabels => sbm_mle_observed(&graph, *boundary)?,
                SbmMcFit::VariationalEm { restarts } => {
                    sbm_vem_fit(&graph, m, *restarts, Seed::new(rng.gen(), 0), *boundary)?
                }
            };
            let opts = SbmTestOptions {
                alpha: spec.alpha,
                mode: *mode,
                size_factor: *size_factor,
                isolated: IsolatedPolicy::Reject,
            };
            let report = sbm_test_with_fit(&graph, &fitted, &opts)?;
            Ok((report.decision, report.statistic, report.p_value))
        }
        _ => Err(Error::InvalidArgument { message: "config/model mismatch".into() }),
    }
}

/// Contrast of a null run against a perturbed run with identical
/// configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionalReport {
    pub null_rejection_rate: f64,
    pub perturbed_rejection_rate: f64,
    pub difference: f64,
    /// Two-proportion z statistic for the rejection-rate difference.
    pub z_statistic: f64,
    pub perturbed_exceeds_null: bool,
}

/// Rejection-rate contrast between matched null and perturbed summaries.
pub fn compare_scenarios(
    null_summary: &McSummary,
    perturbed_summary: &McSummary,
) -> Result<DirectionalReport> {
    let a = &null_summary.spec;
    let b = &perturbed_summary.spec;
    if a.scenario != Scenario::Null || b.scenario != Scenario::Perturbed {
        return Err(Error::MismatchedSpecs {
            message: "expected a null summary and a perturbed summary".into(),
        });
    }
    if a.model != b.model
        || a.n != b.n
        || a.m != b.m
        || a.replications != b.replications
        || a.alpha != b.alpha
        || a.config != b.config
    {
        return Err(Error::MismatchedSpecs {
            message: "summaries differ in model, size, replications, or test options".into(),
        });
    }
    let denom_null = a.replications - null_summary.n_estimation_failed;
    let denom_pert = b.replications - perturbed_summary.n_estimation_failed;
    if denom_null == 0 || denom_pert == 0 {
        return Err(Error::MismatchedSpecs {
            message: "a summary has no successfully estimated replications".into(),
        });
    }
    let r_null = null_summary.n_misspecified as f64 / denom_null as f64;
    let r_pert = perturbed_summary.n_misspecified as f64 / denom_pert as f64;
    let difference = r_pert - r_null;
    let pooled = (null_summary.n_misspecified + perturbed_summary.n_misspecified) as f64
        / (denom_null + denom_pert) as f64;
    let variance = pooled * (1.0 - pooled) * (1.0 / denom_null as f64 + 1.0 / denom_pert as f64);
    let z_statistic = if variance > 0.0 { difference / variance.sqrt() } else { 0.0 };
    Ok(DirectionalReport {
        null_rejection_rate: r_null,
        perturbed_rejection_rate: r_pert,
        difference,
        z_statistic,
        perturbed_exceeds_null: r_pert > r_null,
    })
}
