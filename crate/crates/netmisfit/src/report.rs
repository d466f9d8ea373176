//! The JSON report emitted on stdout by the CLI.
//!
//! Every numeric field is either finite or explicitly null with a reason
//! carried next to it; serialisation never produces NaN or infinities.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::erg::{ErgTestReport, FittedErg};
use crate::sbm::{EmMeta, FitMethod, FittedSbm, SbmTestReport};

pub const SCHEMA_VERSION: u32 = 1;

/// Replace non-finite values by None so JSON stays clean.
pub fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: Option<u64>,
    pub library_version: String,
    pub timestamp_unix: u64,
}

impl Provenance {
    pub fn now(seed: Option<u64>) -> Self {
        let timestamp_unix = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Self { seed, library_version: env!("CARGO_PKG_VERSION").to_string(), timestamp_unix }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JsonReport {
    pub schema_version: u32,
    pub command: String,
    pub model: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit: Option<Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test: Option<Value>,
    pub provenance: Provenance,
}

impl JsonReport {
    pub fn new(command: &str, model: &str, seed: Option<u64>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            command: command.to_string(),
            model: model.to_string(),
            fit: None,
            test: None,
            provenance: Provenance::now(seed),
        }
    }

    pub fn to_stdout(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}

/// Fit block for the one-parameter model.
pub fn erg_fit_block(fit: &FittedErg) -> Value {
    serde_json::json!({
        "method": "closed_form",
        "theta_hat": finite(fit.theta_hat),
        "density": finite(fit.density),
    })
}

/// Fit block for the block model; unidentified η̂ cells serialise as
/// null with a reason list.
pub fn sbm_fit_block(fit: &FittedSbm) -> Value {
    let m = fit.block_count();
    let mut undefined = Vec::new();
    let eta: Vec<Vec<Option<f64>>> = (0..m)
        .map(|k| {
            (0..m)
                .map(|l| {
                    let v = fit.eta_hat[k][l];
                    if !v.is_finite() {
                        undefined.push(format!("eta[{}][{}]", k + 1, l + 1));
                    }
                    finite(v)
                })
                .collect()
        })
        .collect();
    let method = match fit.method {
        FitMethod::ObservedLabels => "observed_labels",
        FitMethod::VariationalEm => "variational_em",
    };
    let em = fit.em_meta.as_ref().map(|meta: &EmMeta| {
        serde_json::json!({
            "iterations": meta.iterations,
            "final_elbo": finite(meta.final_elbo),
            "restarts": meta.restarts,
        })
    });
    serde_json::json!({
        "method": method,
        "theta_hat": fit.theta_hat,
        "eta_hat": eta,
        "eta_undefined_cells": undefined,
        "blocks": m,
        "em": em,
    })
}

pub fn erg_test_block(report: &ErgTestReport) -> Value {
    serde_json::json!({
        "statistic": report.statistic.and_then(finite),
        "df": report.df,
        "p_value": report.p_value.and_then(finite),
        "decision": report.decision,
        "mode": report.mode,
        "size_factor": report.size_factor,
        "reason": report.reason,
        "diagnostics": {
            "d_n": finite(report.diagnostics.d_n),
            "v_n": finite(report.diagnostics.v_n),
            "a_n": finite(report.diagnostics.a_n),
            "b_n": finite(report.diagnostics.b_n),
            "c_n": finite(report.diagnostics.c_n),
            "grad_d_n": finite(report.diagnostics.grad_d_n),
            "max_residual": finite(report.diagnostics.max_residual),
            "singularity_tolerance": finite(report.diagnostics.singularity_tolerance),
            "size_factor_value": finite(report.diagnostics.size_factor_value),
        },
    })
}

pub fn sbm_test_block(report: &SbmTestReport) -> Value {
    let v_n: Vec<Vec<Option<f64>>> = report
        .diagnostics
        .v_n
        .iter()
        .map(|row| row.iter().map(|&v| finite(v)).collect())
        .collect();
    serde_json::json!({
        "statistic": report.statistic.and_then(finite),
        "df": report.df,
        "p_value": report.p_value.and_then(finite),
        "decision": report.decision,
        "mode": report.mode,
        "size_factor": report.size_factor,
        "reason": report.reason,
        "diagnostics": {
            "d_n": report.diagnostics.d_n.iter().map(|&v| finite(v)).collect::<Vec<_>>(),
            "v_n": v_n,
            "a_n": report.diagnostics.a_n.iter().map(|&v| finite(v)).collect::<Vec<_>>(),
            "vn_condition": report.diagnostics.vn_condition.and_then(finite),
            "paper_mode_degenerate": report.diagnostics.paper_mode_degenerate,
            "retained": report.diagnostics.retained,
            "dropped": report.diagnostics.dropped,
            "size_factor_value": finite(report.diagnostics.size_factor_value),
            "dropped_observations": report.diagnostics.dropped_observations,
        },
    })
}
