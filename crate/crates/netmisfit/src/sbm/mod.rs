//! Stochastic block model estimation and the six-dimensional
//! information-matrix misspecification test.
//!
//! Each of the C(n,2) sample units is the 5-tuple
//! U_t = (k, l, n_i, n_j, y): the blocks of the below-diagonal pair
//! (i, j) with i > j, their degrees, and the edge indicator. The
//! quasi-density
//!
//! ```text
//! f(U_t) = θ_k^(1/n_i) · θ_l^(1/n_j) · η_kl^y (1−η_kl)^(1−y)
//! ```
//!
//! has a three-slot parameter (θ_k, θ_l, η_kl) per observation. The test
//! averages the six d_l = score_i·score_j + ∂²log f over t, projects out
//! estimation noise through ∇D_n·A_n⁻¹·score, and compares
//! F·D_nᵀV_n⁻¹D_n against a χ² critical value.
//!
//! Structural facts that shape the decision paths:
//! - d₆ ≡ 0 pointwise for Bernoulli edges, so V_n row/column 6 vanishes
//!   and the full 6×6 inverse of `Paper` mode is always flagged.
//! - d₁ and d₄ are ≤ 0 and d₂ > 0 for every observation (the θ-slot
//!   exponents 1/n_i never average out), so those coordinates cannot
//!   satisfy the information-matrix identity under any hypothesis;
//!   `Reduced` mode drops strictly one-signed coordinates along with
//!   coordinate 6 and anything below the variance tolerance, leaving the
//!   θ–η cross coordinates {3, 5} as the carriers of the test.

mod vem;

pub use vem::{sbm_vem_fit, sbm_vem_fit_with_options, VemOptions};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::numerics::{chi2_cdf, chi2_quantile, guarded_inverse, MatrixSmall};
use crate::Decision;

/// One sample unit: blocks, degrees, and edge indicator of a canonical
/// below-diagonal pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SbmObservation {
    /// Block of the higher-indexed endpoint i.
    pub k: usize,
    /// Block of the lower-indexed endpoint j.
    pub l: usize,
    /// Degree of i (≥ 1).
    pub n_i: usize,
    /// Degree of j (≥ 1).
    pub n_j: usize,
    /// Edge indicator y_ij.
    pub y: bool,
}

/// What to do with vertices of degree zero, whose exponent 1/n_i is
/// undefined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IsolatedPolicy {
    /// Refuse the graph (default).
    Reject,
    /// Exclude observations touching isolated vertices and report the
    /// count.
    DropIncident,
}

/// Handling of η̂ cells on the boundary of (0,1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryPolicy {
    /// Error out (default).
    Strict,
    /// Pull boundary cells to ε / 1−ε.
    Clamp(f64),
}

/// How the fitted parameters were obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMethod {
    ObservedLabels,
    VariationalEm,
}

/// Convergence metadata for a variational fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmMeta {
    pub iterations: usize,
    pub final_elbo: f64,
    pub restarts: usize,
    /// ELBO after each tracked iteration of the winning restart.
    pub elbo_trace: Vec<f64>,
}

/// Estimated SBM parameters plus the labels the test pipeline will use.
///
/// η̂ cells with no vertex pairs (for example a diagonal cell of a
/// singleton block) are unidentified and stored as NaN; no observation
/// can reference them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedSbm {
    pub theta_hat: Vec<f64>,
    pub eta_hat: Vec<Vec<f64>>,
    pub method: FitMethod,
    pub em_meta: Option<EmMeta>,
    pub labels_used: Vec<usize>,
}

impl FittedSbm {
    pub fn block_count(&self) -> usize {
        self.theta_hat.len()
    }

    /// θ̂ for a 1-based block id.
    pub fn theta(&self, k: usize) -> f64 {
        self.theta_hat[k - 1]
    }

    /// η̂ for 1-based block ids.
    pub fn eta(&self, k: usize, l: usize) -> f64 {
        self.eta_hat[k - 1][l - 1]
    }
}

fn require_labels(g: &Graph) -> Result<&[usize]> {
    g.labels().ok_or(Error::MissingLabels)
}

/// Walk the canonical pair order, handing each observation to `f`.
/// Returns the number of observations excluded by `DropIncident`.
pub(crate) fn walk_observations(
    g: &Graph,
    policy: IsolatedPolicy,
    mut f: impl FnMut(SbmObservation),
) -> Result<usize> {
    let labels = require_labels(g)?;
    let degrees = g.degrees();
    if matches!(policy, IsolatedPolicy::Reject) {
        if let Some(v0) = degrees.iter().position(|&d| d == 0) {
            return Err(Error::IsolatedVertex { vertex: v0 + 1 });
        }
    }
    let mut dropped = 0usize;
    for (_t, i, j, y) in g.pair_walk() {
        let (di, dj) = (degrees[i - 1], degrees[j - 1]);
        if di == 0 || dj == 0 {
            dropped += 1;
            continue;
        }
        f(SbmObservation { k: labels[i - 1], l: labels[j - 1], n_i: di, n_j: dj, y });
    }
    Ok(dropped)
}

/// The C(n,2) observations in canonical order. Requires labels and
/// strictly positive degrees.
pub fn sbm_observations(g: &Graph) -> Result<Vec<SbmObservation>> {
    Ok(sbm_observations_with_policy(g, IsolatedPolicy::Reject)?.0)
}

/// As [`sbm_observations`] with an explicit isolated-vertex policy;
/// second component counts excluded observations.
pub fn sbm_observations_with_policy(
    g: &Graph,
    policy: IsolatedPolicy,
) -> Result<(Vec<SbmObservation>, usize)> {
    let mut obs = Vec::with_capacity(g.pair_count());
    let dropped = walk_observations(g, policy, |o| obs.push(o))?;
    Ok((obs, dropped))
}

/// Closed-form maximum likelihood with observed labels:
/// θ̂_k = n_k/n, η̂_kl = e_kl/n_kl.
pub fn sbm_mle_observed(g: &Graph, boundary: BoundaryPolicy) -> Result<FittedSbm> {
    let labels = require_labels(g)?;
    let n = g.vertex_count();
    let m = g.block_count().unwrap_or(0);
    let mut block_sizes = vec![0usize; m];
    for &lab in labels {
        block_sizes[lab - 1] += 1;
    }
    if let Some(k0) = block_sizes.iter().position(|&c| c == 0) {
        return Err(Error::EmptyBlock { block: k0 + 1 });
    }
    let theta_hat: Vec<f64> = block_sizes.iter().map(|&c| c as f64 / n as f64).collect();

    let mut edge_counts = vec![vec![0usize; m]; m];
    for (i, j) in g.canonical_edges() {
        let (a, b) = (labels[i - 1] - 1, labels[j - 1] - 1);
        let (lo, hi) = (a.min(b), a.max(b));
        edge_counts[lo][hi] += 1;
    }
    let mut eta_hat = vec![vec![f64::NAN; m]; m];
    for k in 0..m {
        for l in k..m {
            let pairs = if k == l {
                block_sizes[k] * (block_sizes[k] - 1) / 2
            } else {
                block_sizes[k] * block_sizes[l]
            };
            if pairs == 0 {
                continue; // unidentified cell, no observations reference it
            }
            let raw = edge_counts[k][l] as f64 / pairs as f64;
            let value = apply_boundary(raw, k + 1, l + 1, boundary)?;
            eta_hat[k][l] = value;
            eta_hat[l][k] = value;
        }
    }
    Ok(FittedSbm {
        theta_hat,
        eta_hat,
        method: FitMethod::ObservedLabels,
        em_meta: None,
        labels_used: labels.to_vec(),
    })
}

pub(crate) fn apply_boundary(
    raw: f64,
    k: usize,
    l: usize,
    boundary: BoundaryPolicy,
) -> Result<f64> {
    if raw > 0.0 && raw < 1.0 {
        return Ok(raw);
    }
    match boundary {
        BoundaryPolicy::Strict => Err(Error::DegenerateEstimate {
            detail: format!("eta[{k}][{l}] = {raw} is on the boundary"),
        }),
        BoundaryPolicy::Clamp(eps) => Ok(raw.clamp(eps, 1.0 - eps)),
    }
}

// ---------------------------------------------------------------------
// Per-observation derivatives of log f
// ---------------------------------------------------------------------

/// log f at explicit slot parameters (θ_k, θ_l, η).
pub fn sbm_log_f(obs: &SbmObservation, theta_k: f64, theta_l: f64, eta: f64) -> f64 {
    let a = 1.0 / obs.n_i as f64;
    let b = 1.0 / obs.n_j as f64;
    let y = obs.y as u8 as f64;
    a * theta_k.ln() + b * theta_l.ln() + y * eta.ln() + (1.0 - y) * (1.0 - eta).ln()
}

/// Score vector (∂/∂θ_k, ∂/∂θ_l, ∂/∂η) log f at explicit parameters.
pub fn sbm_score_at(obs: &SbmObservation, theta_k: f64, theta_l: f64, eta: f64) -> [f64; 3] {
    let a = 1.0 / obs.n_i as f64;
    let b = 1.0 / obs.n_j as f64;
    let y = obs.y as u8 as f64;
    [a / theta_k, b / theta_l, y / eta - (1.0 - y) / (1.0 - eta)]
}

/// The three diagonal second derivatives of log f. The η entry is
/// written as −(y/η)² − ((1−y)/(1−η))², equal to −y/η² − (1−y)/(1−η)²
/// for binary y and sharing its subexpressions with the score so that
/// d₆ = s₃² + h₃ cancels to exactly zero in floating point.
pub fn sbm_second_derivs_at(
    obs: &SbmObservation,
    theta_k: f64,
    theta_l: f64,
    eta: f64,
) -> [f64; 3] {
    let a = 1.0 / obs.n_i as f64;
    let b = 1.0 / obs.n_j as f64;
    let y = obs.y as u8 as f64;
    let u = y / eta;
    let v = (1.0 - y) / (1.0 - eta);
    [-a / (theta_k * theta_k), -b / (theta_l * theta_l), -(u * u) - (v * v)]
}

/// The six d_l in slot-pair order (θ_kθ_k, θ_kθ_l, θ_kη, θ_lθ_l, θ_lη, ηη).
pub fn sbm_d_vector_at(obs: &SbmObservation, theta_k: f64, theta_l: f64, eta: f64) -> [f64; 6] {
    let s = sbm_score_at(obs, theta_k, theta_l, eta);
    let h = sbm_second_derivs_at(obs, theta_k, theta_l, eta);
    [
        s[0] * s[0] + h[0],
        s[0] * s[1],
        s[0] * s[2],
        s[1] * s[1] + h[1],
        s[1] * s[2],
        s[2] * s[2] + h[2],
    ]
}

/// ∂d_l/∂(θ_k, θ_l, η) for the six coordinates, with the structural
/// zeros written as literal zeros.
pub fn sbm_grad_d_at(
    obs: &SbmObservation,
    theta_k: f64,
    theta_l: f64,
    eta: f64,
) -> [[f64; 3]; 6] {
    let a = 1.0 / obs.n_i as f64;
    let b = 1.0 / obs.n_j as f64;
    let y = obs.y as u8 as f64;
    let s3 = y / eta - (1.0 - y) / (1.0 - eta);
    let h3 = -y / (eta * eta) - (1.0 - y) / ((1.0 - eta) * (1.0 - eta));
    let tk2 = theta_k * theta_k;
    let tl2 = theta_l * theta_l;
    [
        [(-2.0 * a * a + 2.0 * a) / (tk2 * theta_k), 0.0, 0.0],
        [-a * b / (tk2 * theta_l), -a * b / (theta_k * tl2), 0.0],
        [-(a / tk2) * s3, 0.0, (a / theta_k) * h3],
        [0.0, (-2.0 * b * b + 2.0 * b) / (tl2 * theta_l), 0.0],
        [0.0, -(b / tl2) * s3, (b / theta_l) * h3],
        [
            0.0,
            0.0,
            2.0 * s3 * h3 + 2.0 * y / (eta * eta * eta)
                - 2.0 * (1.0 - y) / ((1.0 - eta) * (1.0 - eta) * (1.0 - eta)),
        ],
    ]
}

fn slot_params(obs: &SbmObservation, fit: &FittedSbm) -> (f64, f64, f64) {
    (fit.theta(obs.k), fit.theta(obs.l), fit.eta(obs.k, obs.l))
}

/// Score at the observation's own parameter slots of the fit.
pub fn sbm_score(obs: &SbmObservation, fit: &FittedSbm) -> [f64; 3] {
    let (tk, tl, e) = slot_params(obs, fit);
    sbm_score_at(obs, tk, tl, e)
}

/// The six d_l at the observation's parameter slots of the fit.
pub fn sbm_d_vector(obs: &SbmObservation, fit: &FittedSbm) -> [f64; 6] {
    let (tk, tl, e) = slot_params(obs, fit);
    sbm_d_vector_at(obs, tk, tl, e)
}

/// ∂d_l/∂· at the observation's parameter slots of the fit.
pub fn sbm_grad_d(obs: &SbmObservation, fit: &FittedSbm) -> [[f64; 3]; 6] {
    let (tk, tl, e) = slot_params(obs, fit);
    sbm_grad_d_at(obs, tk, tl, e)
}

// ---------------------------------------------------------------------
// Observation averages
// ---------------------------------------------------------------------

/// Averages over the observation list: the diagonal of the 3×3 A_n, the
/// 6-vector D_n, the 6×3 ∇D_n, plus per-coordinate ranges of d used by
/// the reduced-mode drop rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbmMatrices {
    pub a_n: [f64; 3],
    pub d_n: [f64; 6],
    pub grad_d_n: [[f64; 3]; 6],
    pub d_min: [f64; 6],
    pub d_max: [f64; 6],
    pub count: usize,
}

pub fn sbm_matrices(obs_list: &[SbmObservation], fit: &FittedSbm) -> Result<SbmMatrices> {
    let mut acc = MatrixAccumulator::new();
    for obs in obs_list {
        acc.push(obs, fit);
    }
    acc.finish()
}

struct MatrixAccumulator {
    a: [f64; 3],
    d: [f64; 6],
    g: [[f64; 3]; 6],
    d_min: [f64; 6],
    d_max: [f64; 6],
    count: usize,
}

impl MatrixAccumulator {
    fn new() -> Self {
        Self {
            a: [0.0; 3],
            d: [0.0; 6],
            g: [[0.0; 3]; 6],
            d_min: [f64::INFINITY; 6],
            d_max: [f64::NEG_INFINITY; 6],
            count: 0,
        }
    }

    fn push(&mut self, obs: &SbmObservation, fit: &FittedSbm) {
        let (tk, tl, e) = slot_params(obs, fit);
        let h = sbm_second_derivs_at(obs, tk, tl, e);
        let d = sbm_d_vector_at(obs, tk, tl, e);
        let g = sbm_grad_d_at(obs, tk, tl, e);
        for c in 0..3 {
            self.a[c] += h[c];
        }
        for l in 0..6 {
            self.d[l] += d[l];
            self.d_min[l] = self.d_min[l].min(d[l]);
            self.d_max[l] = self.d_max[l].max(d[l]);
            for c in 0..3 {
                self.g[l][c] += g[l][c];
            }
        }
        self.count += 1;
    }

    fn finish(self) -> Result<SbmMatrices> {
        if self.count == 0 {
            return Err(Error::InvalidArgument { message: "empty observation list".into() });
        }
        let inv = 1.0 / self.count as f64;
        let mut a_n = self.a;
        let mut d_n = self.d;
        let mut grad_d_n = self.g;
        for c in 0..3 {
            a_n[c] *= inv;
        }
        for l in 0..6 {
            d_n[l] *= inv;
            for c in 0..3 {
                grad_d_n[l][c] *= inv;
            }
        }
        Ok(SbmMatrices {
            a_n,
            d_n,
            grad_d_n,
            d_min: self.d_min,
            d_max: self.d_max,
            count: self.count,
        })
    }
}

/// The projection matrix G = ∇D_n·A_n⁻¹ (6×3); A_n is diagonal.
fn projection(mats: &SbmMatrices) -> Result<[[f64; 3]; 6]> {
    for (c, &a) in mats.a_n.iter().enumerate() {
        if a.abs() < 1e-12 {
            return Err(Error::SingularAn { slot: c + 1 });
        }
    }
    let mut g = [[0.0; 3]; 6];
    for l in 0..6 {
        for c in 0..3 {
            g[l][c] = mats.grad_d_n[l][c] / mats.a_n[c];
        }
    }
    Ok(g)
}

/// V_n = mean over t of r_t r_tᵀ, r_t = d(U_t) − ∇D_n·A_n⁻¹·score(U_t).
pub fn sbm_vn(obs_list: &[SbmObservation], fit: &FittedSbm) -> Result<MatrixSmall> {
    let mats = sbm_matrices(obs_list, fit)?;
    sbm_vn_with_matrices(obs_list.iter(), fit, &mats)
}

pub(crate) fn sbm_vn_with_matrices<'a>(
    obs_iter: impl Iterator<Item = &'a SbmObservation>,
    fit: &FittedSbm,
    mats: &SbmMatrices,
) -> Result<MatrixSmall> {
    let g = projection(mats)?;
    let mut v = MatrixSmall::zeros(6)?;
    let mut count = 0usize;
    for obs in obs_iter {
        let (tk, tl, e) = slot_params(obs, fit);
        let d = sbm_d_vector_at(obs, tk, tl, e);
        let s = sbm_score_at(obs, tk, tl, e);
        let mut r = [0.0; 6];
        for l in 0..6 {
            r[l] = d[l] - g[l][0] * s[0] - g[l][1] * s[1] - g[l][2] * s[2];
        }
        for row in 0..6 {
            for col in row..6 {
                let val = v.get(row, col) + r[row] * r[col];
                v.set(row, col, val);
            }
        }
        count += 1;
    }
    if count == 0 {
        return Err(Error::InvalidArgument { message: "empty observation list".into() });
    }
    let inv = 1.0 / count as f64;
    for row in 0..6 {
        for col in row..6 {
            let val = v.get(row, col) * inv;
            v.set(row, col, val);
            v.set(col, row, val);
        }
    }
    Ok(v)
}

// ---------------------------------------------------------------------
// The test
// ---------------------------------------------------------------------

/// Decision path: literal 6×6 inversion, or rank reduction to the
/// coordinates that can carry the test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SbmTestMode {
    Paper,
    Reduced,
}

/// Multiplier F in F·D_nᵀV_n⁻¹D_n: the observation count C(n,2) or the
/// vertex count n (default; the observations share vertices and
/// degrees, so the pair count overstates the information).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SbmSizeFactor {
    PairCount,
    VertexCount,
}

/// Why a coordinate was excluded in `Reduced` mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    /// Coordinate 6: d₆ ≡ 0 pointwise.
    AlwaysExcluded,
    /// V_n diagonal below tolerance.
    TinyVariance,
    /// d values strictly one-signed over the sample; the coordinate's
    /// mean is bounded away from zero for any data.
    StructuralSign,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedCoordinate {
    /// 1-based coordinate in the d-vector order.
    pub index: usize,
    pub reason: DropReason,
}

/// Options for [`sbm_test_with_fit`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SbmTestOptions {
    pub alpha: f64,
    pub mode: SbmTestMode,
    pub size_factor: SbmSizeFactor,
    pub isolated: IsolatedPolicy,
}

impl Default for SbmTestOptions {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            mode: SbmTestMode::Reduced,
            size_factor: SbmSizeFactor::VertexCount,
            isolated: IsolatedPolicy::Reject,
        }
    }
}

/// Diagnostics attached to every SBM test report. Paper-mode condition
/// information and the reduced-mode retained set both appear regardless
/// of the mode that produced the decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbmDiagnostics {
    pub d_n: [f64; 6],
    pub v_n: Vec<Vec<f64>>,
    pub a_n: [f64; 3],
    /// Pivot-ratio condition estimate of the full 6×6 V_n; None when a
    /// pivot vanished exactly.
    pub vn_condition: Option<f64>,
    pub paper_mode_degenerate: bool,
    /// 1-based coordinates retained by the reduced-mode drop rule.
    pub retained: Vec<usize>,
    pub dropped: Vec<DroppedCoordinate>,
    pub size_factor_value: f64,
    /// Observations excluded by the isolated-vertex policy.
    pub dropped_observations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbmTestReport {
    pub statistic: Option<f64>,
    pub df: Option<usize>,
    pub p_value: Option<f64>,
    pub decision: Decision,
    pub mode: SbmTestMode,
    pub size_factor: SbmSizeFactor,
    /// Set when the decision is `Degenerate`.
    pub reason: Option<String>,
    pub diagnostics: SbmDiagnostics,
}

/// Which estimation path feeds the test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SbmFitSpec {
    /// Closed-form MLE from the graph's own labels.
    ObservedLabels { boundary: BoundaryPolicy },
    /// Variational fit; the test then uses the recovered MAP labels.
    VariationalEm {
        m: usize,
        restarts: usize,
        seed: crate::samplers::Seed,
        boundary: BoundaryPolicy,
    },
}

/// Fit the model and run the misspecification test.
pub fn sbm_test(g: &Graph, fit_spec: SbmFitSpec, opts: &SbmTestOptions) -> Result<SbmTestReport> {
    let fit = fit_with(g, fit_spec)?;
    sbm_test_with_fit(g, &fit, opts)
}

/// Run the chosen estimation path without the test.
pub fn fit_with(g: &Graph, fit_spec: SbmFitSpec) -> Result<FittedSbm> {
    match fit_spec {
        SbmFitSpec::ObservedLabels { boundary } => sbm_mle_observed(g, boundary),
        SbmFitSpec::VariationalEm { m, restarts, seed, boundary } => {
            sbm_vem_fit(g, m, restarts, seed, boundary)
        }
    }
}

/// The test pipeline on a prepared fit. Observations are taken from
/// `fit.labels_used`, so the variational path proceeds identically to
/// the observed-label path once labels are recovered.
pub fn sbm_test_with_fit(
    g: &Graph,
    fit: &FittedSbm,
    opts: &SbmTestOptions,
) -> Result<SbmTestReport> {
    if !(opts.alpha > 0.0 && opts.alpha < 1.0) {
        return Err(Error::InvalidArgument { message: format!("alpha = {}", opts.alpha) });
    }
    if fit.labels_used.len() != g.vertex_count() {
        return Err(Error::InvalidArgument {
            message: "fit labels do not match the graph".into(),
        });
    }
    let m = fit.block_count();
    for (v0, &lab) in fit.labels_used.iter().enumerate() {
        if lab < 1 || lab > m {
            return Err(Error::InvalidLabel { vertex: v0 + 1, label: lab, blocks: m });
        }
    }
    // Two streaming passes over the observations built from the fit's
    // labels: averages first, then residual outer products.
    let mut labeled = g.clone();
    labeled.set_labels(fit.labels_used.clone())?;

    let mut acc = MatrixAccumulator::new();
    let dropped_observations =
        walk_observations(&labeled, opts.isolated, |obs| acc.push(&obs, fit))?;
    let mats = acc.finish()?;

    let g_proj = projection(&mats)?;
    let mut v = MatrixSmall::zeros(6)?;
    let mut count = 0usize;
    walk_observations(&labeled, opts.isolated, |obs| {
        let (tk, tl, e) = slot_params(&obs, fit);
        let d = sbm_d_vector_at(&obs, tk, tl, e);
        let s = sbm_score_at(&obs, tk, tl, e);
        let mut r = [0.0; 6];
        for l in 0..6 {
            r[l] = d[l] - g_proj[l][0] * s[0] - g_proj[l][1] * s[1] - g_proj[l][2] * s[2];
        }
        for row in 0..6 {
            for col in row..6 {
                let val = v.get(row, col) + r[row] * r[col];
                v.set(row, col, val);
            }
        }
        count += 1;
    })?;
    let inv_count = 1.0 / count as f64;
    for row in 0..6 {
        for col in row..6 {
            let val = v.get(row, col) * inv_count;
            v.set(row, col, val);
            v.set(col, row, val);
        }
    }

    assemble_report(g.vertex_count(), count, dropped_observations, &mats, &v, opts)
}

const COND_LIMIT: f64 = 1e12;

/// Build the decision from the averaged quantities. Exposed separately
/// so the decision logic can be exercised on synthetic D_n/V_n inputs.
pub fn assemble_report(
    n_vertices: usize,
    n_observations: usize,
    dropped_observations: usize,
    mats: &SbmMatrices,
    v_n: &MatrixSmall,
    opts: &SbmTestOptions,
) -> Result<SbmTestReport> {
    let factor = match opts.size_factor {
        SbmSizeFactor::PairCount => n_observations as f64,
        SbmSizeFactor::VertexCount => n_vertices as f64,
    };

    // full-matrix condition diagnosis (the Paper-mode path)
    let paper_inverse = guarded_inverse(v_n, COND_LIMIT)?;
    let (vn_condition, paper_mode_degenerate) = match &paper_inverse {
        Ok(_) => (None, false),
        Err(report) => (
            if report.condition_estimate.is_finite() {
                Some(report.condition_estimate)
            } else {
                None
            },
            true,
        ),
    };

    // reduced-mode drop rule
    let diag_max = (0..6).map(|c| v_n.get(c, c)).fold(0.0f64, f64::max);
    let var_tol = 1e-10 * diag_max + 1e-300;
    let mut dropped = Vec::new();
    let mut retained = Vec::new();
    for c in 0..6 {
        if c == 5 {
            dropped.push(DroppedCoordinate { index: 6, reason: DropReason::AlwaysExcluded });
        } else if v_n.get(c, c) < var_tol {
            dropped.push(DroppedCoordinate { index: c + 1, reason: DropReason::TinyVariance });
        } else if mats.d_min[c] > 0.0 || mats.d_max[c] < 0.0 {
            dropped.push(DroppedCoordinate { index: c + 1, reason: DropReason::StructuralSign });
        } else {
            retained.push(c + 1);
        }
    }

    let diagnostics = SbmDiagnostics {
        d_n: mats.d_n,
        v_n: v_n.rows(),
        a_n: mats.a_n,
        vn_condition,
        paper_mode_degenerate,
        retained: retained.clone(),
        dropped: dropped.clone(),
        size_factor_value: factor,
        dropped_observations,
    };

    let degenerate = |reason: String, diagnostics: SbmDiagnostics| SbmTestReport {
        statistic: None,
        df: None,
        p_value: None,
        decision: Decision::Degenerate,
        mode: opts.mode,
        size_factor: opts.size_factor,
        reason: Some(reason),
        diagnostics,
    };

    let (quadratic, df) = match opts.mode {
        SbmTestMode::Paper => match paper_inverse {
            Ok(inv) => {
                let q = quadratic_form(&mats.d_n, &inv, &(1..=6).collect::<Vec<_>>());
                (q, 6)
            }
            Err(report) => {
                return Ok(degenerate(
                    format!(
                        "6x6 V_n condition estimate {} exceeds {COND_LIMIT:.0e}",
                        report
                            .condition_estimate
                            .is_finite()
                            .then(|| format!("{:.3e}", report.condition_estimate))
                            .unwrap_or_else(|| "infinite".into())
                    ),
                    diagnostics,
                ));
            }
        },
        SbmTestMode::Reduced => {
            if retained.is_empty() {
                return Ok(degenerate("all coordinates dropped".into(), diagnostics));
            }
            let dim = retained.len();
            let mut block = MatrixSmall::zeros(dim)?;
            for (r, &cr) in retained.iter().enumerate() {
                for (s, &cs) in retained.iter().enumerate() {
                    block.set(r, s, v_n.get(cr - 1, cs - 1));
                }
            }
            match guarded_inverse(&block, COND_LIMIT)? {
                Ok(inv) => (quadratic_form(&mats.d_n, &inv, &retained), dim),
                Err(report) => {
                    return Ok(degenerate(
                        format!(
                            "retained {dim}x{dim} block condition estimate {:.3e} exceeds {COND_LIMIT:.0e}",
                            report.condition_estimate
                        ),
                        diagnostics,
                    ));
                }
            }
        }
    };

    let statistic = factor * quadratic;
    let critical = chi2_quantile(1.0 - opts.alpha, df)?;
    let p_value = 1.0 - chi2_cdf(statistic.max(0.0), df)?;
    let decision = if statistic <= critical {
        Decision::WellSpecified
    } else {
        Decision::Misspecified
    };
    Ok(SbmTestReport {
        statistic: Some(statistic),
        df: Some(df),
        p_value: Some(p_value),
        decision,
        mode: opts.mode,
        size_factor: opts.size_factor,
        reason: None,
        diagnostics,
    })
}

/// D̃ᵀ M D̃ over the 1-based retained coordinates.
fn quadratic_form(d_n: &[f64; 6], inv: &MatrixSmall, retained: &[usize]) -> f64 {
    let sub: Vec<f64> = retained.iter().map(|&c| d_n[c - 1]).collect();
    let mv = inv.mul_vec(&sub);
    sub.iter().zip(&mv).map(|(a, b)| a * b).sum()
}

#[cfg(test)]
mod tests;
