//! One-parameter exponential random graph estimation and its
//! information-matrix misspecification test.
//!
//! The sample units U_t are the C(n,2) edge indicators in canonical
//! order, each Bernoulli(p) with p = e^θ/(1+e^θ) under the model. With
//! d(U) = (∂_θ log f)² + ∂²_θ log f = U² − 2Up + p(2p−1), the test
//! statistic is F·D_n²/V_n compared against a χ²₁ critical value.
//!
//! At the maximum-likelihood fit p̂ = mean(U) the identities
//! A_n + B_n = 0 and D_n = 0 hold for every binary sample, and the
//! gradient-projected variance estimator (`General` mode) collapses to
//! zero pointwise, so that mode always reports `Degenerate`. The
//! `PaperLiteral` mode substitutes D_n for ∇D_n inside the variance
//! bracket, which leaves V_n = mean d² > 0 away from density ½.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::numerics::{chi2_cdf, chi2_quantile};
use crate::Decision;

/// Edge indicators of a graph in canonical order, bit-packed.
#[derive(Debug, Clone, PartialEq)]
pub struct ErgObservations {
    n: usize,
    len: usize,
    ones: usize,
    bits: Vec<u64>,
}

impl ErgObservations {
    /// Number of observations, C(n,2).
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Vertex count of the source graph.
    pub fn vertex_count(&self) -> usize {
        self.n
    }

    /// Count of U_t = 1.
    pub fn ones(&self) -> usize {
        self.ones
    }

    /// The observation at 1-based canonical index t.
    pub fn get(&self, t: usize) -> Result<bool> {
        if t < 1 || t > self.len {
            return Err(Error::InvalidIndex { index: t, max: self.len });
        }
        let idx = t - 1;
        Ok(self.bits[idx / 64] >> (idx % 64) & 1 == 1)
    }

    /// Materialise as a 0/1 vector (small graphs, tests).
    pub fn to_vec(&self) -> Vec<u8> {
        (1..=self.len).map(|t| self.get(t).unwrap() as u8).collect()
    }

    /// Build directly from a 0/1 vector that is already in canonical
    /// order. `n` must satisfy C(n,2) = u.len().
    pub fn from_bits(n: usize, u: &[u8]) -> Result<Self> {
        let expected = crate::graph::pair_count(n);
        if u.len() != expected {
            return Err(Error::InvalidArgument {
                message: format!("expected {expected} observations for n={n}, got {}", u.len()),
            });
        }
        let mut bits = vec![0u64; u.len().div_ceil(64)];
        let mut ones = 0usize;
        for (idx, &v) in u.iter().enumerate() {
            if v != 0 {
                bits[idx / 64] |= 1 << (idx % 64);
                ones += 1;
            }
        }
        Ok(Self { n, len: u.len(), ones, bits })
    }
}

/// Read the C(n,2) edge indicators of a graph in canonical order.
pub fn erg_observations(g: &Graph) -> Result<ErgObservations> {
    let n = g.vertex_count();
    if n < 2 {
        return Err(Error::InvalidArgument { message: "need n >= 2".into() });
    }
    let len = g.pair_count();
    let mut bits = vec![0u64; len.div_ceil(64)];
    let mut ones = 0usize;
    for (t, _i, _j, y) in g.pair_walk() {
        if y {
            let idx = t - 1;
            bits[idx / 64] |= 1 << (idx % 64);
            ones += 1;
        }
    }
    Ok(ErgObservations { n, len, ones, bits })
}

/// Fitted one-parameter ERG: θ̂ = logit(density).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FittedErg {
    pub theta_hat: f64,
    pub density: f64,
}

impl FittedErg {
    /// From an interior edge density.
    pub fn from_density(density: f64) -> Result<Self> {
        if !(density > 0.0 && density < 1.0) {
            return Err(Error::DegenerateEstimate {
                detail: format!("edge density {density} is on the boundary"),
            });
        }
        Ok(Self { theta_hat: (density / (1.0 - density)).ln(), density })
    }

    /// Evaluation point for a given θ (used to evaluate the pipeline away
    /// from the MLE).
    pub fn from_theta(theta: f64) -> Result<Self> {
        if !theta.is_finite() {
            return Err(Error::InvalidArgument { message: format!("theta = {theta}") });
        }
        Ok(Self { theta_hat: theta, density: sigmoid(theta) })
    }
}

fn sigmoid(theta: f64) -> f64 {
    if theta >= 0.0 {
        1.0 / (1.0 + (-theta).exp())
    } else {
        let e = theta.exp();
        e / (1.0 + e)
    }
}

/// Closed-form MLE: density = mean(u), θ̂ = logit(density).
pub fn erg_mle(obs: &ErgObservations) -> Result<FittedErg> {
    let density = obs.ones as f64 / obs.len as f64;
    if obs.ones == 0 || obs.ones == obs.len {
        return Err(Error::DegenerateEstimate {
            detail: format!("all {} observations equal {}", obs.len, (obs.ones > 0) as u8),
        });
    }
    FittedErg::from_density(density)
}

/// log f(U; θ) = Uθ − log(1 + e^θ).
pub fn erg_log_f(u: bool, theta: f64) -> f64 {
    let uf = u as u8 as f64;
    uf * theta - ln_1p_exp(theta)
}

fn ln_1p_exp(theta: f64) -> f64 {
    if theta > 0.0 {
        theta + (-theta).exp().ln_1p()
    } else {
        theta.exp().ln_1p()
    }
}

/// Score ∂_θ log f = U − p.
pub fn erg_score(u: bool, theta: f64) -> f64 {
    u as u8 as f64 - sigmoid(theta)
}

/// Hessian ∂²_θ log f = −p(1−p).
pub fn erg_hessian(theta: f64) -> f64 {
    let p = sigmoid(theta);
    -p * (1.0 - p)
}

/// d(U, θ) = score² + hessian = U² − 2Up + p(2p−1).
pub fn erg_d1(u: bool, theta: f64) -> f64 {
    let p = sigmoid(theta);
    d1_at(u, p)
}

fn d1_at(u: bool, p: f64) -> f64 {
    let uf = u as u8 as f64;
    uf * uf - 2.0 * uf * p + p * (2.0 * p - 1.0)
}

/// ∂d/∂θ = −p(1−p)(2U + 1 − 4p).
pub fn erg_grad_d1(u: bool, theta: f64) -> f64 {
    let p = sigmoid(theta);
    grad_d1_at(u, p)
}

fn grad_d1_at(u: bool, p: f64) -> f64 {
    let uf = u as u8 as f64;
    -p * (1.0 - p) * (2.0 * uf + 1.0 - 4.0 * p)
}

/// The scalar auxiliary quantities of the one-parameter pipeline, each an
/// average over the C(n,2) observations evaluated at the fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErgMatrices {
    pub a_n: f64,
    pub b_n: f64,
    pub c_n: f64,
    pub d_n: f64,
    pub grad_d_n: f64,
}

/// Observation averages collapse to count-weighted two-point sums since
/// U ∈ {0,1}; this is exact and independent of summation order.
fn two_point_mean(obs: &ErgObservations, f1: f64, f0: f64) -> f64 {
    let ones = obs.ones as f64;
    let zeros = (obs.len - obs.ones) as f64;
    (ones * f1 + zeros * f0) / obs.len as f64
}

pub fn erg_matrices(obs: &ErgObservations, fit: &FittedErg) -> ErgMatrices {
    let p = fit.density;
    let a_n = -p * (1.0 - p);
    let b_n = two_point_mean(obs, (1.0 - p) * (1.0 - p), p * p);
    let c_n = b_n / (a_n * a_n);
    let d_n = two_point_mean(obs, d1_at(true, p), d1_at(false, p));
    let grad_d_n = two_point_mean(obs, grad_d1_at(true, p), grad_d1_at(false, p));
    ErgMatrices { a_n, b_n, c_n, d_n, grad_d_n }
}

/// Variance-estimator form: `General` projects with ∇D_n in the
/// bracket; `PaperLiteral` uses D_n in its place.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErgTestMode {
    General,
    PaperLiteral,
}

/// Multiplier F in F·D_n²/V_n: the observation count C(n,2), or 1 for
/// the bare quadratic form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErgSizeFactor {
    PairCount,
    PaperLiteralNone,
}

pub fn erg_vn(obs: &ErgObservations, fit: &FittedErg, mode: ErgTestMode) -> f64 {
    erg_vn_detail(obs, fit, &erg_matrices(obs, fit), mode).0
}

/// (V_n, max |residual|) for the chosen bracket form.
fn erg_vn_detail(
    obs: &ErgObservations,
    fit: &FittedErg,
    mats: &ErgMatrices,
    mode: ErgTestMode,
) -> (f64, f64) {
    let p = fit.density;
    let coeff = match mode {
        ErgTestMode::General => mats.grad_d_n,
        ErgTestMode::PaperLiteral => mats.d_n,
    };
    let bracket = |u: bool| -> f64 {
        let score = u as u8 as f64 - p;
        d1_at(u, p) - coeff / mats.a_n * score
    };
    let r1 = bracket(true);
    let r0 = bracket(false);
    let vn = two_point_mean(obs, r1 * r1, r0 * r0);
    let max_resid = match (obs.ones > 0, obs.ones < obs.len) {
        (true, true) => r1.abs().max(r0.abs()),
        (true, false) => r1.abs(),
        (false, true) => r0.abs(),
        (false, false) => 0.0,
    };
    (vn, max_resid)
}

/// Diagnostics attached to every ERG test report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErgDiagnostics {
    pub d_n: f64,
    pub v_n: f64,
    pub a_n: f64,
    pub b_n: f64,
    pub c_n: f64,
    pub grad_d_n: f64,
    pub max_residual: f64,
    pub singularity_tolerance: f64,
    pub size_factor_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErgTestReport {
    pub statistic: Option<f64>,
    pub df: usize,
    pub p_value: Option<f64>,
    pub decision: Decision,
    pub mode: ErgTestMode,
    pub size_factor: ErgSizeFactor,
    /// Set when the decision is `Degenerate`.
    pub reason: Option<String>,
    pub diagnostics: ErgDiagnostics,
}

/// Fit the one-parameter model and run the misspecification test.
///
/// When V_n falls below the relative singularity tolerance
/// 1e-10·mean(d²) + 1e-300 the statistic is 0/0 and the report says
/// `Degenerate` instead of forcing a χ² comparison.
pub fn erg_test(
    g: &Graph,
    alpha: f64,
    mode: ErgTestMode,
    size_factor: ErgSizeFactor,
) -> Result<ErgTestReport> {
    let obs = erg_observations(g)?;
    let fit = erg_mle(&obs)?;
    erg_test_with_fit(&obs, &fit, alpha, mode, size_factor)
}

/// Test pipeline on prepared observations and an explicit evaluation
/// point (normally the MLE).
pub fn erg_test_with_fit(
    obs: &ErgObservations,
    fit: &FittedErg,
    alpha: f64,
    mode: ErgTestMode,
    size_factor: ErgSizeFactor,
) -> Result<ErgTestReport> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument { message: format!("alpha = {alpha}") });
    }
    let mats = erg_matrices(obs, fit);
    let (v_n, max_residual) = erg_vn_detail(obs, fit, &mats, mode);
    let p = fit.density;
    let mean_d_sq = two_point_mean(obs, d1_at(true, p).powi(2), d1_at(false, p).powi(2));
    let tolerance = 1e-10 * mean_d_sq + 1e-300;
    let factor = match size_factor {
        ErgSizeFactor::PairCount => obs.len as f64,
        ErgSizeFactor::PaperLiteralNone => 1.0,
    };
    let diagnostics = ErgDiagnostics {
        d_n: mats.d_n,
        v_n,
        a_n: mats.a_n,
        b_n: mats.b_n,
        c_n: mats.c_n,
        grad_d_n: mats.grad_d_n,
        max_residual,
        singularity_tolerance: tolerance,
        size_factor_value: factor,
    };
    if v_n < tolerance {
        return Ok(ErgTestReport {
            statistic: None,
            df: 1,
            p_value: None,
            decision: Decision::Degenerate,
            mode,
            size_factor,
            reason: Some(format!("V_n = {v_n:.3e} below singularity tolerance {tolerance:.3e}")),
            diagnostics,
        });
    }
    let statistic = factor * mats.d_n * mats.d_n / v_n;
    let critical = chi2_quantile(1.0 - alpha, 1)?;
    let p_value = 1.0 - chi2_cdf(statistic, 1)?;
    let decision = if statistic <= critical {
        Decision::WellSpecified
    } else {
        Decision::Misspecified
    };
    Ok(ErgTestReport {
        statistic: Some(statistic),
        df: 1,
        p_value: Some(p_value),
        decision,
        mode,
        size_factor,
        reason: None,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use crate::numerics::finite_diff_gradient;
    use crate::samplers::{sample_er, Seed};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    const LN2: f64 = std::f64::consts::LN_2;

    #[test]
    fn observations_examples() {
        let g = Graph::new(3).unwrap();
        assert_eq!(erg_observations(&g).unwrap().to_vec(), vec![0, 0, 0]);

        let g = Graph::from_edges(3, &[(2, 1), (3, 1)]).unwrap();
        assert_eq!(erg_observations(&g).unwrap().to_vec(), vec![1, 1, 0]);

        let mut g = Graph::new(4).unwrap();
        for j in 1..4 {
            for i in (j + 1)..=4 {
                g.add_edge(i, j).unwrap();
            }
        }
        assert_eq!(erg_observations(&g).unwrap().to_vec(), vec![1; 6]);
    }

    /// Independent oracle: maximise the log-likelihood numerically by
    /// bisecting the sign change of its central-difference derivative.
    fn mle_oracle(ones: usize, len: usize) -> f64 {
        let loglik = |theta: f64| -> f64 {
            let ones = ones as f64;
            let len = len as f64;
            ones * theta - len * ln_1p_exp(theta)
        };
        let h = 1e-5;
        let slope = |theta: f64| (loglik(theta + h) - loglik(theta - h)) / (2.0 * h);
        let (mut lo, mut hi) = (-30.0f64, 30.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if slope(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn mle_examples() {
        let obs = ErgObservations::from_bits(3, &[1, 1, 0]).unwrap();
        let fit = erg_mle(&obs).unwrap();
        assert!((fit.theta_hat - LN2).abs() < 1e-12);
        assert!((fit.theta_hat - mle_oracle(2, 3)).abs() < 1e-8);

        // density 1/2
        let obs = ErgObservations::from_bits(4, &[1, 1, 1, 0, 0, 0]).unwrap();
        assert!(erg_mle(&obs).unwrap().theta_hat.abs() < 1e-15);

        let obs = ErgObservations::from_bits(3, &[1, 1, 1]).unwrap();
        assert!(matches!(erg_mle(&obs), Err(Error::DegenerateEstimate { .. })));
    }

    #[test]
    fn d1_examples() {
        assert!(erg_d1(false, 0.0).abs() < 1e-15);
        assert!(erg_d1(true, 0.0).abs() < 1e-15);
        assert!((erg_d1(true, LN2) + 1.0 / 9.0).abs() < 1e-14);
    }

    #[test]
    fn d1_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let u = rng.gen_bool(0.5);
            let theta = rng.gen_range(-3.0..3.0);
            let fd_score = finite_diff_gradient(|x| erg_log_f(u, x[0]), &[theta], 1e-5).unwrap()[0];
            let fd_hess =
                finite_diff_gradient(|x| erg_score(u, x[0]), &[theta], 1e-5).unwrap()[0];
            let d_fd = fd_score * fd_score + fd_hess;
            let d_an = erg_d1(u, theta);
            assert!((d_an - d_fd).abs() <= 1e-6 * (1.0 + d_an.abs()));
            let g_fd = finite_diff_gradient(|x| erg_d1(u, x[0]), &[theta], 1e-5).unwrap()[0];
            let g_an = erg_grad_d1(u, theta);
            assert!((g_an - g_fd).abs() <= 1e-6 * (1.0 + g_an.abs()));
        }
    }

    #[test]
    fn matrices_examples() {
        // density 1/2: A_n = −1/4
        let obs = ErgObservations::from_bits(4, &[1, 1, 1, 0, 0, 0]).unwrap();
        let fit = erg_mle(&obs).unwrap();
        assert!((erg_matrices(&obs, &fit).a_n + 0.25).abs() < 1e-15);

        // u = (1,1,0) at the MLE θ̂ = ln 2
        let obs = ErgObservations::from_bits(3, &[1, 1, 0]).unwrap();
        let fit = erg_mle(&obs).unwrap();
        let m = erg_matrices(&obs, &fit);
        assert!((m.b_n - 2.0 / 9.0).abs() < 1e-14);
        assert!((m.a_n + 2.0 / 9.0).abs() < 1e-14);
        assert!((m.c_n - 4.5).abs() < 1e-12);
        assert!(m.d_n.abs() <= 1e-12);

        // the two-observation sample (1,0) evaluated away from the MLE at
        // θ = ln 2: d(1) = −1/9, d(0) = 2/9, mean 1/18
        let d_mean = 0.5 * (erg_d1(true, LN2) + erg_d1(false, LN2));
        assert!((d_mean - 1.0 / 18.0).abs() < 1e-14);
    }

    #[test]
    fn in_sample_identities_on_random_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..100 {
            let len = rng.gen_range(4..400);
            let ones = rng.gen_range(1..len);
            let mut u = vec![0u8; len];
            for slot in u.iter_mut().take(ones) {
                *slot = 1;
            }
            // n is irrelevant to the arithmetic; pick one consistent with len
            let n = (1..).find(|&n| n * (n - 1) / 2 >= len).unwrap();
            let mut padded = u.clone();
            padded.resize(n * (n - 1) / 2, 0);
            let extra_ones = 0;
            let _ = extra_ones;
            let obs = ErgObservations::from_bits(n, &padded).unwrap();
            if obs.ones() == 0 || obs.ones() == obs.len() {
                continue;
            }
            let fit = erg_mle(&obs).unwrap();
            let m = erg_matrices(&obs, &fit);
            assert!((m.a_n + m.b_n).abs() <= 1e-12, "A+B = {}", m.a_n + m.b_n);
            assert!(m.d_n.abs() <= 1e-10, "D_n = {}", m.d_n);
            let (vn_general, max_resid) =
                erg_vn_detail(&obs, &fit, &m, ErgTestMode::General);
            assert!(max_resid <= 1e-10, "residual {max_resid}");
            assert!(vn_general.abs() <= 1e-20);
        }
    }

    #[test]
    fn vn_examples() {
        // density 2/3 at the MLE: PaperLiteral V_n = (1−2p)²p(1−p) = 2/81
        let obs = ErgObservations::from_bits(3, &[1, 1, 0]).unwrap();
        let fit = erg_mle(&obs).unwrap();
        let vn = erg_vn(&obs, &fit, ErgTestMode::PaperLiteral);
        assert!((vn - 2.0 / 81.0).abs() < 1e-14, "vn = {vn}");

        // density exactly 1/2: PaperLiteral V_n = 0
        let obs = ErgObservations::from_bits(4, &[1, 0, 1, 0, 1, 0]).unwrap();
        let fit = erg_mle(&obs).unwrap();
        assert_eq!(erg_vn(&obs, &fit, ErgTestMode::PaperLiteral), 0.0);
    }

    #[test]
    fn test_general_mode_is_degenerate() {
        let g = sample_er(40, 0.35, Seed::new(3, 0)).unwrap();
        let report =
            erg_test(&g, 0.05, ErgTestMode::General, ErgSizeFactor::PairCount).unwrap();
        assert_eq!(report.decision, Decision::Degenerate);
        assert!(report.statistic.is_none());
        assert!(report.p_value.is_none());
    }

    #[test]
    fn test_paper_literal_on_er_sample() {
        let g = sample_er(50, 0.3, Seed::new(4, 1)).unwrap();
        let report = erg_test(
            &g,
            0.05,
            ErgTestMode::PaperLiteral,
            ErgSizeFactor::PaperLiteralNone,
        )
        .unwrap();
        assert_eq!(report.decision, Decision::WellSpecified);
        let stat = report.statistic.unwrap();
        assert!(stat >= 0.0 && stat <= 3.8415, "statistic {stat}");
    }

    #[test]
    fn test_density_half_is_degenerate() {
        // 4 vertices, 3 of 6 pairs present
        let g = Graph::from_edges(4, &[(2, 1), (3, 1), (4, 1)]).unwrap();
        let report =
            erg_test(&g, 0.05, ErgTestMode::PaperLiteral, ErgSizeFactor::PairCount).unwrap();
        assert_eq!(report.decision, Decision::Degenerate);
    }

    #[test]
    fn statistic_invariant_under_relabeling() {
        let g = sample_er(30, 0.4, Seed::new(8, 2)).unwrap();
        let report =
            erg_test(&g, 0.05, ErgTestMode::PaperLiteral, ErgSizeFactor::PairCount).unwrap();

        // permute the vertices; the statistic depends only on the edge count
        let n = g.vertex_count();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut perm: Vec<usize> = (1..=n).collect();
        perm.shuffle(&mut rng);
        let mut h = Graph::new(n).unwrap();
        for (i, j) in g.canonical_edges() {
            h.add_edge(perm[i - 1], perm[j - 1]).unwrap();
        }
        let report2 =
            erg_test(&h, 0.05, ErgTestMode::PaperLiteral, ErgSizeFactor::PairCount).unwrap();
        assert_eq!(report.statistic, report2.statistic);
        assert_eq!(report.decision, report2.decision);
    }

    #[test]
    fn rejects_bad_alpha() {
        let g = sample_er(20, 0.5, Seed::new(1, 1)).unwrap();
        assert!(erg_test(&g, 0.0, ErgTestMode::PaperLiteral, ErgSizeFactor::PairCount).is_err());
        assert!(erg_test(&g, 1.0, ErgTestMode::PaperLiteral, ErgSizeFactor::PairCount).is_err());
    }
}
