//! Graph samplers for the four data-generating processes: ER/SBM null
//! models and their group-multiplier perturbed variants.
//!
//! All randomness flows through counter-based ChaCha streams keyed by
//! (master, stream), so replication r is reproducible independently of
//! execution order or thread count. Within one sampler call the draw
//! order is fixed: scenario multipliers first, then labels, then one
//! uniform per vertex pair in canonical order.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;

/// A reproducible generator key: `master` selects the experiment,
/// `stream` the replication.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seed {
    pub master: u64,
    pub stream: u64,
}

impl Seed {
    pub fn new(master: u64, stream: u64) -> Self {
        Self { master, stream }
    }

    /// The generator for this (master, stream) pair.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master);
        rng.set_stream(self.stream);
        rng
    }
}

/// Stochastic block model parameters: block probabilities θ and the
/// symmetric edge-probability matrix η.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbmParams {
    pub m: usize,
    pub theta: Vec<f64>,
    pub eta: Vec<Vec<f64>>,
}

impl SbmParams {
    pub fn new(theta: Vec<f64>, eta: Vec<Vec<f64>>) -> Result<Self> {
        let m = theta.len();
        if m == 0 {
            return Err(Error::InvalidArgument { message: "empty theta".into() });
        }
        let sum: f64 = theta.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument {
                message: format!("theta sums to {sum}, expected 1"),
            });
        }
        for &t in &theta {
            if !(t > 0.0 && t <= 1.0) {
                return Err(Error::InvalidProbability { value: t });
            }
        }
        if eta.len() != m || eta.iter().any(|row| row.len() != m) {
            return Err(Error::InvalidArgument { message: "eta is not m x m".into() });
        }
        for k in 0..m {
            for l in 0..m {
                let e = eta[k][l];
                if !(0.0..=1.0).contains(&e) {
                    return Err(Error::InvalidProbability { value: e });
                }
                if (eta[k][l] - eta[l][k]).abs() > 1e-12 {
                    return Err(Error::InvalidArgument { message: "eta not symmetric".into() });
                }
            }
        }
        Ok(Self { m, theta, eta })
    }

    /// Uniform block probabilities with a constant η matrix.
    pub fn uniform(m: usize, eta_value: f64) -> Result<Self> {
        let theta = vec![1.0 / m as f64; m];
        let eta = vec![vec![eta_value; m]; m];
        Self::new(theta, eta)
    }
}

/// How a perturbed-scenario edge combines its endpoints' group multipliers.
///
/// The data-generating description assigns a multiplier per group of n/10
/// consecutive vertices but an edge touches two groups; `LowerEndpoint`
/// (the default) uses the group of the lower-indexed endpoint. The other
/// rules exist for sensitivity runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MultiplierRule {
    LowerEndpoint,
    Product,
    Max,
    Mean,
}

impl MultiplierRule {
    fn combine(self, p_low: f64, p_high: f64) -> f64 {
        match self {
            Self::LowerEndpoint => p_low,
            Self::Product => p_low * p_high,
            Self::Max => p_low.max(p_high),
            Self::Mean => 0.5 * (p_low + p_high),
        }
    }
}

/// Metadata recorded by the perturbed-scenario samplers for audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMeta {
    pub multipliers: Vec<f64>,
    pub rule: MultiplierRule,
}

fn check_probability(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) || !p.is_finite() {
        return Err(Error::InvalidProbability { value: p });
    }
    Ok(())
}

fn check_n(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::InvalidArgument { message: format!("need n >= 2, got {n}") });
    }
    Ok(())
}

/// 1-based group id of vertex v when n vertices split into 10 consecutive
/// groups of n/10.
fn group_of(v: usize, group_size: usize) -> usize {
    (v - 1) / group_size
}

/// Erdős–Rényi G(n, p): each unordered pair is an edge independently with
/// probability p.
pub fn sample_er(n: usize, p: f64, seed: Seed) -> Result<Graph> {
    sample_er_with_rng(n, p, &mut seed.rng())
}

pub(crate) fn sample_er_with_rng(n: usize, p: f64, rng: &mut ChaCha8Rng) -> Result<Graph> {
    check_n(n)?;
    check_probability(p)?;
    let mut g = Graph::new(n)?;
    for j in 1..n {
        for i in (j + 1)..=n {
            if rng.gen::<f64>() < p {
                g.add_edge(i, j)?;
            }
        }
    }
    Ok(g)
}

/// SBM sampler: labels i.i.d. from θ (or fixed), then edge (i, j) present
/// with probability η_{x_i x_j}. Labels are stored on the graph.
pub fn sample_sbm(
    n: usize,
    params: &SbmParams,
    seed: Seed,
    fixed_labels: Option<&[usize]>,
) -> Result<Graph> {
    sample_sbm_with_rng(n, params, &mut seed.rng(), fixed_labels)
}

pub(crate) fn sample_sbm_with_rng(
    n: usize,
    params: &SbmParams,
    rng: &mut ChaCha8Rng,
    fixed_labels: Option<&[usize]>,
) -> Result<Graph> {
    check_n(n)?;
    let labels = draw_or_check_labels(n, params, rng, fixed_labels)?;
    let mut g = Graph::new(n)?;
    for j in 1..n {
        for i in (j + 1)..=n {
            let p = params.eta[labels[i - 1] - 1][labels[j - 1] - 1];
            if rng.gen::<f64>() < p {
                g.add_edge(i, j)?;
            }
        }
    }
    g.set_labels(labels)?;
    Ok(g)
}

fn draw_or_check_labels(
    n: usize,
    params: &SbmParams,
    rng: &mut ChaCha8Rng,
    fixed_labels: Option<&[usize]>,
) -> Result<Vec<usize>> {
    match fixed_labels {
        Some(given) => {
            if given.len() != n {
                return Err(Error::InvalidArgument {
                    message: format!("{} fixed labels for {n} vertices", given.len()),
                });
            }
            for (v0, &lab) in given.iter().enumerate() {
                if lab < 1 || lab > params.m {
                    return Err(Error::InvalidLabel {
                        vertex: v0 + 1,
                        label: lab,
                        blocks: params.m,
                    });
                }
            }
            Ok(given.to_vec())
        }
        None => {
            let mut labels = Vec::with_capacity(n);
            for _ in 0..n {
                let u = rng.gen::<f64>();
                let mut cum = 0.0;
                let mut chosen = params.m;
                for (k, &t) in params.theta.iter().enumerate() {
                    cum += t;
                    if u < cum {
                        chosen = k + 1;
                        break;
                    }
                }
                labels.push(chosen);
            }
            Ok(labels)
        }
    }
}

fn check_scenario2(n: usize) -> Result<usize> {
    check_n(n)?;
    if n % 10 != 0 {
        return Err(Error::IndivisibleN { n });
    }
    Ok(n / 10)
}

fn draw_multipliers(rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..10).map(|_| rng.gen::<f64>()).collect()
}

/// Perturbed ER scenario: ten group multipliers p_1..p_10 ~ U(0,1), edge
/// (i, j), i > j, present with probability α·p_{g(j)} under the default
/// rule. Returns the graph plus the drawn multipliers.
pub fn sample_erg_scenario2(n: usize, alpha: f64, seed: Seed) -> Result<(Graph, ScenarioMeta)> {
    sample_erg_scenario2_with_rule(n, alpha, seed, MultiplierRule::LowerEndpoint)
}

pub fn sample_erg_scenario2_with_rule(
    n: usize,
    alpha: f64,
    seed: Seed,
    rule: MultiplierRule,
) -> Result<(Graph, ScenarioMeta)> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidProbability { value: alpha });
    }
    let mut rng = seed.rng();
    let multipliers = draw_multipliers(&mut rng);
    let g = erg_scenario2_edges(n, alpha, &multipliers, rule, &mut rng)?;
    Ok((g, ScenarioMeta { multipliers, rule }))
}

/// Edge phase of the perturbed ER sampler with explicit multipliers; with
/// all multipliers 1 this consumes the generator exactly like
/// [`sample_er`], giving bit-identical output for the same seed.
pub fn sample_erg_scenario2_from_multipliers(
    n: usize,
    alpha: f64,
    multipliers: &[f64],
    rule: MultiplierRule,
    seed: Seed,
) -> Result<Graph> {
    check_probability(alpha)?;
    erg_scenario2_edges(n, alpha, multipliers, rule, &mut seed.rng())
}

fn erg_scenario2_edges(
    n: usize,
    alpha: f64,
    multipliers: &[f64],
    rule: MultiplierRule,
    rng: &mut ChaCha8Rng,
) -> Result<Graph> {
    let group_size = check_scenario2(n)?;
    if multipliers.len() != 10 {
        return Err(Error::InvalidArgument {
            message: format!("expected 10 multipliers, got {}", multipliers.len()),
        });
    }
    for &p in multipliers {
        check_probability(p)?;
    }
    let mut g = Graph::new(n)?;
    for j in 1..n {
        for i in (j + 1)..=n {
            // j is the lower-indexed endpoint
            let p_low = multipliers[group_of(j, group_size)];
            let p_high = multipliers[group_of(i, group_size)];
            let p = alpha * rule.combine(p_low, p_high);
            if rng.gen::<f64>() < p {
                g.add_edge(i, j)?;
            }
        }
    }
    Ok(g)
}

/// Perturbed SBM scenario: as [`sample_sbm`] but edge probability
/// η_{x_i x_j}·p_{g(j)} with the same group-multiplier construction.
pub fn sample_sbm_scenario2(
    n: usize,
    params: &SbmParams,
    seed: Seed,
) -> Result<(Graph, ScenarioMeta)> {
    sample_sbm_scenario2_with_rule(n, params, seed, MultiplierRule::LowerEndpoint)
}

pub fn sample_sbm_scenario2_with_rule(
    n: usize,
    params: &SbmParams,
    seed: Seed,
    rule: MultiplierRule,
) -> Result<(Graph, ScenarioMeta)> {
    let mut rng = seed.rng();
    let multipliers = draw_multipliers(&mut rng);
    let g = sbm_scenario2_edges(n, params, &multipliers, rule, &mut rng, None)?;
    Ok((g, ScenarioMeta { multipliers, rule }))
}

/// Edge phase of the perturbed SBM sampler with explicit multipliers; with
/// all multipliers 1 and fixed labels this is bit-identical to
/// [`sample_sbm`] for the same seed.
pub fn sample_sbm_scenario2_from_multipliers(
    n: usize,
    params: &SbmParams,
    multipliers: &[f64],
    rule: MultiplierRule,
    seed: Seed,
    fixed_labels: Option<&[usize]>,
) -> Result<Graph> {
    sbm_scenario2_edges(n, params, multipliers, rule, &mut seed.rng(), fixed_labels)
}

pub(crate) fn sbm_scenario2_edges(
    n: usize,
    params: &SbmParams,
    multipliers: &[f64],
    rule: MultiplierRule,
    rng: &mut ChaCha8Rng,
    fixed_labels: Option<&[usize]>,
) -> Result<Graph> {
    let group_size = check_scenario2(n)?;
    if multipliers.len() != 10 {
        return Err(Error::InvalidArgument {
            message: format!("expected 10 multipliers, got {}", multipliers.len()),
        });
    }
    for &p in multipliers {
        check_probability(p)?;
    }
    let labels = draw_or_check_labels(n, params, rng, fixed_labels)?;
    let mut g = Graph::new(n)?;
    for j in 1..n {
        for i in (j + 1)..=n {
            let eta = params.eta[labels[i - 1] - 1][labels[j - 1] - 1];
            let p_low = multipliers[group_of(j, group_size)];
            let p_high = multipliers[group_of(i, group_size)];
            let p = eta * rule.combine(p_low, p_high);
            if rng.gen::<f64>() < p {
                g.add_edge(i, j)?;
            }
        }
    }
    g.set_labels(labels)?;
    Ok(g)
}
