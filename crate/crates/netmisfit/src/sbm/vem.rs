//! Mean-field variational EM for the latent-label SBM.
//!
//! Each restart refines a uniformly random hard partition with a short
//! annealed Gibbs phase (geometric temperature schedule) and then runs
//! sequential coordinate-ascent mean-field updates: an exact (θ, η)
//! M-step followed by one exact τ_i update per vertex, which makes the
//! tracked ELBO non-decreasing sweep over sweep. The best restart by
//! final ELBO wins. Plain mean-field from a random start stalls in
//! merged-block optima often enough to matter; the annealed phase is
//! what makes a handful of restarts sufficient on strongly separated
//! instances.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::samplers::Seed;

use super::{apply_boundary, BoundaryPolicy, EmMeta, FitMethod, FittedSbm};

/// Tuning knobs for [`sbm_vem_fit_with_options`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VemOptions {
    /// Soft-phase iteration cap.
    pub max_iterations: usize,
    /// Relative ELBO change that counts as converged.
    pub tolerance: f64,
    /// Annealed Gibbs sweeps before the soft phase.
    pub anneal_sweeps: usize,
    /// Initial and final temperatures of the geometric schedule.
    pub temp_initial: f64,
    pub temp_final: f64,
}

impl Default for VemOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            tolerance: 1e-6,
            anneal_sweeps: 25,
            temp_initial: 1.5,
            temp_final: 0.05,
        }
    }
}

/// Probability floor applied inside iterations so logs stay finite; the
/// final η̂ is recomputed raw and goes through the boundary policy.
const ETA_FLOOR: f64 = 1e-9;
const THETA_FLOOR: f64 = 1e-12;
const RESPONSIBILITY_FLOOR: f64 = 1e-8;

pub fn sbm_vem_fit(
    g: &Graph,
    m: usize,
    restarts: usize,
    seed: Seed,
    boundary: BoundaryPolicy,
) -> Result<FittedSbm> {
    sbm_vem_fit_with_options(g, m, restarts, seed, boundary, &VemOptions::default())
}

pub fn sbm_vem_fit_with_options(
    g: &Graph,
    m: usize,
    restarts: usize,
    seed: Seed,
    boundary: BoundaryPolicy,
    opts: &VemOptions,
) -> Result<FittedSbm> {
    let n = g.vertex_count();
    if m < 1 {
        return Err(Error::InvalidArgument { message: "m must be >= 1".into() });
    }
    if n < m {
        return Err(Error::InvalidArgument { message: format!("n = {n} < m = {m}") });
    }
    if restarts < 1 {
        return Err(Error::InvalidArgument { message: "restarts must be >= 1".into() });
    }
    let neighbors = neighbor_lists(g);
    let mut rng = seed.rng();
    let mut best: Option<RestartResult> = None;
    for _ in 0..restarts {
        let result = one_restart(n, m, &neighbors, &mut rng, opts);
        if best.as_ref().map_or(true, |b| result.elbo > b.elbo) {
            best = Some(result);
        }
    }
    let best = best.expect("at least one restart");

    // final M-step on raw soft counts; boundary policy decides what an
    // estimate at 0 or 1 means
    let (theta_raw, eta_raw, defined) = m_step_raw(n, m, &neighbors, &best.tau);
    let mut theta_hat = theta_raw;
    let total: f64 = theta_hat.iter().sum();
    for t in theta_hat.iter_mut() {
        *t /= total;
    }
    for (k, &mass) in theta_hat.iter().enumerate() {
        if mass * (n as f64) < RESPONSIBILITY_FLOOR {
            return Err(Error::EmptyBlock { block: k + 1 });
        }
    }
    let mut eta_hat = vec![vec![f64::NAN; m]; m];
    for k in 0..m {
        for l in k..m {
            if !defined[k][l] {
                continue;
            }
            let value = apply_boundary(eta_raw[k][l], k + 1, l + 1, boundary)?;
            eta_hat[k][l] = value;
            eta_hat[l][k] = value;
        }
    }
    let labels_used = best
        .tau
        .chunks(m)
        .map(|row| {
            let mut arg = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[arg] {
                    arg = k;
                }
            }
            arg + 1
        })
        .collect();
    Ok(FittedSbm {
        theta_hat,
        eta_hat,
        method: FitMethod::VariationalEm,
        em_meta: Some(EmMeta {
            iterations: best.iterations,
            final_elbo: best.elbo,
            restarts,
            elbo_trace: best.trace,
        }),
        labels_used,
    })
}

fn neighbor_lists(g: &Graph) -> Vec<Vec<u32>> {
    let n = g.vertex_count();
    let mut lists = vec![Vec::new(); n];
    for (i, j) in g.canonical_edges() {
        lists[i - 1].push((j - 1) as u32);
        lists[j - 1].push((i - 1) as u32);
    }
    lists
}

struct RestartResult {
    tau: Vec<f64>,
    elbo: f64,
    iterations: usize,
    trace: Vec<f64>,
}

fn one_restart(
    n: usize,
    m: usize,
    neighbors: &[Vec<u32>],
    rng: &mut ChaCha8Rng,
    opts: &VemOptions,
) -> RestartResult {
    let mut hard: Vec<usize> = (0..n).map(|_| rng.gen_range(0..m)).collect();
    if m > 1 {
        anneal(n, m, neighbors, &mut hard, rng, opts);
    }

    // soften the hard labels slightly so every block stays reachable
    let off = if m > 1 { 1e-3 / (m - 1) as f64 } else { 0.0 };
    let mut tau = vec![off; n * m];
    for (i, &z) in hard.iter().enumerate() {
        tau[i * m + z] = 1.0 - 1e-3;
    }
    if m == 1 {
        for v in tau.iter_mut() {
            *v = 1.0;
        }
    }

    let mut trace = Vec::new();
    let mut prev = f64::NEG_INFINITY;
    let mut iterations = 0;
    for _sweep in 0..opts.max_iterations {
        iterations += 1;
        let (theta, eta) = m_step_clamped(n, m, neighbors, &tau);
        cavi_sweep(n, m, neighbors, &mut tau, &theta, &eta);
        let elbo = elbo_of(n, m, neighbors, &tau, &theta, &eta);
        trace.push(elbo);
        if (elbo - prev).abs() < opts.tolerance * (1.0 + elbo.abs()) {
            prev = elbo;
            break;
        }
        prev = elbo;
    }
    RestartResult { tau, elbo: prev, iterations, trace }
}

/// Annealed Gibbs over hard labels: block-profile scores divided by a
/// temperature that decays geometrically to near-greedy.
fn anneal(
    n: usize,
    m: usize,
    neighbors: &[Vec<u32>],
    z: &mut [usize],
    rng: &mut ChaCha8Rng,
    opts: &VemOptions,
) {
    let sweeps = opts.anneal_sweeps;
    let mut order: Vec<usize> = (0..n).collect();
    let mut scores = vec![0.0f64; m];
    let mut c1 = vec![0.0f64; m];
    for sweep in 0..sweeps {
        let frac = sweep as f64 / (sweeps.saturating_sub(1).max(1)) as f64;
        let temp = opts.temp_initial * (opts.temp_final / opts.temp_initial).powf(frac);

        // hard-count M-step
        let mut counts = vec![0usize; m];
        for &zi in z.iter() {
            counts[zi] += 1;
        }
        let theta: Vec<f64> =
            counts.iter().map(|&c| (c as f64 / n as f64).max(THETA_FLOOR)).collect();
        let mut edges = vec![vec![0.0f64; m]; m];
        for (i, nbrs) in neighbors.iter().enumerate() {
            for &j in nbrs {
                let j = j as usize;
                if j < i {
                    edges[z[i]][z[j]] += 1.0;
                    edges[z[j]][z[i]] += 1.0;
                }
            }
        }
        let mut log_eta = vec![vec![0.0f64; m]; m];
        let mut log_1m = vec![vec![0.0f64; m]; m];
        for k in 0..m {
            for l in 0..m {
                let pairs = if k == l {
                    counts[k] as f64 * (counts[k] as f64 - 1.0) / 2.0
                } else {
                    counts[k] as f64 * counts[l] as f64
                };
                let e = if k == l { edges[k][k] / 2.0 } else { edges[k][l] };
                let eta = if pairs > 0.0 { e / pairs } else { 0.5 };
                let eta = eta.clamp(ETA_FLOOR, 1.0 - ETA_FLOOR);
                log_eta[k][l] = eta.ln();
                log_1m[k][l] = (1.0 - eta).ln();
            }
        }

        order.shuffle(rng);
        for &i in &order {
            c1.iter_mut().for_each(|v| *v = 0.0);
            for &j in &neighbors[i] {
                c1[z[j as usize]] += 1.0;
            }
            for k in 0..m {
                let mut s = theta[k].ln();
                for l in 0..m {
                    let mut others = counts[l] as f64 - c1[l];
                    if z[i] == l {
                        others -= 1.0;
                    }
                    s += c1[l] * log_eta[k][l] + others.max(0.0) * log_1m[k][l];
                }
                scores[k] = s / temp;
            }
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for s in scores.iter_mut() {
                *s = (*s - max).exp();
                total += *s;
            }
            let mut u = rng.gen::<f64>() * total;
            let mut pick = m - 1;
            for (k, &s) in scores.iter().enumerate() {
                if u < s {
                    pick = k;
                    break;
                }
                u -= s;
            }
            counts[z[i]] -= 1;
            counts[pick] += 1;
            z[i] = pick;
        }
    }
}

/// Exact M-step from soft counts with the iteration clamps applied.
fn m_step_clamped(
    n: usize,
    m: usize,
    neighbors: &[Vec<u32>],
    tau: &[f64],
) -> (Vec<f64>, Vec<Vec<f64>>) {
    let (theta_raw, eta_raw, _) = m_step_raw(n, m, neighbors, tau);
    let mut theta: Vec<f64> = theta_raw.iter().map(|&t| t.max(THETA_FLOOR)).collect();
    let total: f64 = theta.iter().sum();
    for t in theta.iter_mut() {
        *t /= total;
    }
    let eta = eta_raw
        .iter()
        .map(|row| {
            row.iter()
                .map(|&e| if e.is_nan() { 0.5 } else { e.clamp(ETA_FLOOR, 1.0 - ETA_FLOOR) })
                .collect()
        })
        .collect();
    (theta, eta)
}

/// Raw M-step: θ_k = mean responsibility, η_kl = soft edge count over
/// soft pair count. Third component marks cells with positive pair mass.
fn m_step_raw(
    n: usize,
    m: usize,
    neighbors: &[Vec<u32>],
    tau: &[f64],
) -> (Vec<f64>, Vec<Vec<f64>>, Vec<Vec<bool>>) {
    let mut colsum = vec![0.0f64; m];
    for row in tau.chunks(m) {
        for (k, &v) in row.iter().enumerate() {
            colsum[k] += v;
        }
    }
    let theta: Vec<f64> = colsum.iter().map(|&c| c / n as f64).collect();

    // ordered sums: s1[k][l] = Σ_{i≠j adjacent} τ_ik τ_jl,
    // t_all[k][l] = Σ_{i≠j} τ_ik τ_jl
    let mut s1 = vec![vec![0.0f64; m]; m];
    let mut self_prod = vec![vec![0.0f64; m]; m];
    for (i, row) in tau.chunks(m).enumerate() {
        for k in 0..m {
            for l in 0..m {
                self_prod[k][l] += row[k] * row[l];
            }
        }
        let mut nb = vec![0.0f64; m];
        for &j in &neighbors[i] {
            let jrow = &tau[j as usize * m..j as usize * m + m];
            for (l, &v) in jrow.iter().enumerate() {
                nb[l] += v;
            }
        }
        for k in 0..m {
            for l in 0..m {
                s1[k][l] += row[k] * nb[l];
            }
        }
    }
    let mut eta = vec![vec![f64::NAN; m]; m];
    let mut defined = vec![vec![false; m]; m];
    for k in 0..m {
        for l in 0..m {
            let t_all = colsum[k] * colsum[l] - self_prod[k][l];
            if t_all > 1e-12 {
                eta[k][l] = s1[k][l] / t_all;
                defined[k][l] = true;
            }
        }
    }
    (theta, eta, defined)
}

/// One sequential coordinate-ascent sweep over the responsibilities.
fn cavi_sweep(
    n: usize,
    m: usize,
    neighbors: &[Vec<u32>],
    tau: &mut [f64],
    theta: &[f64],
    eta: &[Vec<f64>],
) {
    let log_theta: Vec<f64> = theta.iter().map(|&t| t.ln()).collect();
    let mut log_eta = vec![vec![0.0f64; m]; m];
    let mut log_1m = vec![vec![0.0f64; m]; m];
    for k in 0..m {
        for l in 0..m {
            log_eta[k][l] = eta[k][l].ln();
            log_1m[k][l] = (1.0 - eta[k][l]).ln();
        }
    }
    let mut colsum = vec![0.0f64; m];
    for row in tau.chunks(m) {
        for (k, &v) in row.iter().enumerate() {
            colsum[k] += v;
        }
    }
    let mut c1 = vec![0.0f64; m];
    let mut logits = vec![0.0f64; m];
    for i in 0..n {
        c1.iter_mut().for_each(|v| *v = 0.0);
        for &j in &neighbors[i] {
            let jrow = &tau[j as usize * m..j as usize * m + m];
            for (l, &v) in jrow.iter().enumerate() {
                c1[l] += v;
            }
        }
        let row = &tau[i * m..i * m + m];
        for k in 0..m {
            let mut s = log_theta[k];
            for l in 0..m {
                let c0 = colsum[l] - row[l] - c1[l];
                s += c1[l] * log_eta[k][l] + c0.max(0.0) * log_1m[k][l];
            }
            logits[k] = s;
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in logits.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for (k, v) in logits.iter().enumerate() {
            let new = v / total;
            colsum[k] += new - tau[i * m + k];
            tau[i * m + k] = new;
        }
    }
}

/// Evidence lower bound at (τ, θ, η).
fn elbo_of(
    n: usize,
    m: usize,
    neighbors: &[Vec<u32>],
    tau: &[f64],
    theta: &[f64],
    eta: &[Vec<f64>],
) -> f64 {
    let mut colsum = vec![0.0f64; m];
    let mut entropy = 0.0;
    let mut prior = 0.0;
    let mut self_prod = vec![vec![0.0f64; m]; m];
    for row in tau.chunks(m) {
        for (k, &v) in row.iter().enumerate() {
            colsum[k] += v;
            if v > 1e-300 {
                entropy -= v * v.ln();
            }
            prior += v * theta[k].ln();
            for l in 0..m {
                self_prod[k][l] += v * row[l];
            }
        }
    }
    // soft edge counts (ordered)
    let mut s1 = vec![vec![0.0f64; m]; m];
    for (i, row) in tau.chunks(m).enumerate() {
        let mut nb = vec![0.0f64; m];
        for &j in &neighbors[i] {
            let jrow = &tau[j as usize * m..j as usize * m + m];
            for (l, &v) in jrow.iter().enumerate() {
                nb[l] += v;
            }
        }
        for k in 0..m {
            for l in 0..m {
                s1[k][l] += row[k] * nb[l];
            }
        }
    }
    let mut edges_term = 0.0;
    for k in 0..m {
        for l in 0..m {
            let t_all = colsum[k] * colsum[l] - self_prod[k][l];
            let nonedges = (t_all - s1[k][l]).max(0.0);
            edges_term += 0.5 * (s1[k][l] * eta[k][l].ln() + nonedges * (1.0 - eta[k][l]).ln());
        }
    }
    let _ = n;
    entropy + prior + edges_term
}
