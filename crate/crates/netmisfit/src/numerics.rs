//! Shared numerical kernels: chi-square distribution, guarded inversion of
//! small dense matrices, and the central-difference oracle used by the
//! property suites.

use crate::error::{Error, Result};

/// Largest matrix dimension handled by [`MatrixSmall`].
pub const MAX_DIM: usize = 8;

const MAX_ITER: usize = 300;

/// Natural log of the gamma function (Lanczos approximation, g = 7).
pub fn lgamma(x: f64) -> f64 {
    const COEFFS: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection: Γ(x)Γ(1−x) = π / sin(πx)
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - lgamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEFFS[0];
    for (i, &c) in COEFFS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized lower incomplete gamma P(a, x); series for x < a + 1,
/// Lentz continued fraction for the upper tail otherwise.
pub fn gamma_p(a: f64, x: f64) -> Result<f64> {
    if a <= 0.0 || x < 0.0 || !a.is_finite() || !x.is_finite() {
        return Err(Error::InvalidArgument { message: format!("gamma_p(a={a}, x={x})") });
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    let log_prefactor = -x + a * x.ln() - lgamma(a);
    let prefactor = log_prefactor.exp();
    if x < a + 1.0 {
        // series: P = prefactor · Σ x^k / (a(a+1)…(a+k))
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut ap = a;
        for _ in 0..MAX_ITER {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * f64::EPSILON {
                return Ok((prefactor * sum).clamp(0.0, 1.0));
            }
        }
        Err(Error::InvalidArgument { message: "gamma_p series did not converge".into() })
    } else {
        // modified Lentz on Q's continued fraction
        let tiny = 1e-300;
        let b0 = x + 1.0 - a;
        let mut f = if b0.abs() < tiny { tiny } else { b0 };
        let mut c = f;
        let mut d = 0.0;
        for k in 1..=MAX_ITER {
            let kf = k as f64;
            let an = kf * (a - kf);
            let bn = x + 2.0 * kf + 1.0 - a;
            d = bn + an * d;
            if d.abs() < tiny {
                d = tiny;
            }
            d = 1.0 / d;
            c = bn + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            let delta = c * d;
            f *= delta;
            if (delta - 1.0).abs() < 1e-15 {
                return Ok((1.0 - prefactor / f).clamp(0.0, 1.0));
            }
        }
        Err(Error::InvalidArgument { message: "gamma_p continued fraction did not converge".into() })
    }
}

/// Chi-square CDF with `df` degrees of freedom: P(df/2, x/2).
pub fn chi2_cdf(x: f64, df: usize) -> Result<f64> {
    if df < 1 {
        return Err(Error::InvalidArgument { message: "df must be >= 1".into() });
    }
    if !(x >= 0.0) || !x.is_finite() {
        return Err(Error::InvalidArgument { message: format!("chi2_cdf x = {x}") });
    }
    gamma_p(df as f64 / 2.0, x / 2.0)
}

/// Quantile of the chi-square distribution: x with chi2_cdf(x, df) = p.
/// Bracketing plus bisection, terminating well below the 1e-8 contract.
pub fn chi2_quantile(p: f64, df: usize) -> Result<f64> {
    if df < 1 {
        return Err(Error::InvalidArgument { message: "df must be >= 1".into() });
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidArgument { message: format!("chi2_quantile p = {p}") });
    }
    let mut hi = df as f64;
    while chi2_cdf(hi, df)? < p {
        hi *= 2.0;
        if hi > 1e9 {
            return Err(Error::InvalidArgument { message: "quantile bracket overflow".into() });
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if chi2_cdf(mid, df)? < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 * (1.0 + hi) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Dense row-major square matrix of dimension at most [`MAX_DIM`].
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixSmall {
    dim: usize,
    data: Vec<f64>,
}

impl MatrixSmall {
    pub fn zeros(dim: usize) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::InvalidArgument {
                message: format!("dimension {dim} outside 1..={MAX_DIM}"),
            });
        }
        Ok(Self { dim, data: vec![0.0; dim * dim] })
    }

    pub fn identity(dim: usize) -> Result<Self> {
        let mut m = Self::zeros(dim)?;
        for i in 0..dim {
            m.set(i, i, 1.0);
        }
        Ok(m)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        let mut m = Self::zeros(dim)?;
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::InvalidArgument { message: "matrix not square".into() });
            }
            for (j, &v) in row.iter().enumerate() {
                m.set(i, j, v);
            }
        }
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.dim + j] = v;
    }

    pub fn mul(&self, other: &Self) -> Self {
        let d = self.dim;
        let mut out = Self { dim: d, data: vec![0.0; d * d] };
        for i in 0..d {
            for k in 0..d {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..d {
                    out.data[i * d + j] += a * other.get(k, j);
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.dim)
            .map(|i| (0..self.dim).map(|j| self.get(i, j) * v[j]).sum())
            .collect()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim).map(|i| (0..self.dim).map(|j| self.get(i, j)).collect()).collect()
    }
}

/// Why an inverse was refused.
#[derive(Debug, Clone, PartialEq)]
pub struct SingularityReport {
    /// max/min absolute pivot ratio; infinite when a pivot vanished.
    pub condition_estimate: f64,
    /// 1-based diagonal indices whose pivots were at or below tolerance.
    pub near_null_indices: Vec<usize>,
}

/// Invert via Gauss–Jordan with partial pivoting, refusing when the
/// max/min pivot ratio exceeds `cond_limit`.
pub fn guarded_inverse(
    m: &MatrixSmall,
    cond_limit: f64,
) -> Result<std::result::Result<MatrixSmall, SingularityReport>> {
    let d = m.dim();
    let mut a = m.clone();
    let mut inv = MatrixSmall::identity(d)?;
    let mut pivots = vec![0.0f64; d];
    // track which original diagonal position each elimination column used
    let mut col_of_step = vec![0usize; d];

    for col in 0..d {
        // partial pivot
        let mut best = col;
        for r in (col + 1)..d {
            if a.get(r, col).abs() > a.get(best, col).abs() {
                best = r;
            }
        }
        if best != col {
            for j in 0..d {
                let tmp = a.get(col, j);
                a.set(col, j, a.get(best, j));
                a.set(best, j, tmp);
                let tmp = inv.get(col, j);
                inv.set(col, j, inv.get(best, j));
                inv.set(best, j, tmp);
            }
        }
        let pivot = a.get(col, col);
        pivots[col] = pivot.abs();
        col_of_step[col] = col;
        if pivot == 0.0 {
            let near_null = near_null_from_pivots(&pivots[..=col], &col_of_step[..=col]);
            return Ok(Err(SingularityReport {
                condition_estimate: f64::INFINITY,
                near_null_indices: near_null,
            }));
        }
        let inv_pivot = 1.0 / pivot;
        for j in 0..d {
            a.set(col, j, a.get(col, j) * inv_pivot);
            inv.set(col, j, inv.get(col, j) * inv_pivot);
        }
        for r in 0..d {
            if r == col {
                continue;
            }
            let factor = a.get(r, col);
            if factor == 0.0 {
                continue;
            }
            for j in 0..d {
                a.set(r, j, a.get(r, j) - factor * a.get(col, j));
                inv.set(r, j, inv.get(r, j) - factor * inv.get(col, j));
            }
        }
    }

    let max_p = pivots.iter().cloned().fold(0.0f64, f64::max);
    let min_p = pivots.iter().cloned().fold(f64::INFINITY, f64::min);
    let cond = if min_p == 0.0 { f64::INFINITY } else { max_p / min_p };
    if cond > cond_limit {
        return Ok(Err(SingularityReport {
            condition_estimate: cond,
            near_null_indices: near_null_from_pivots(&pivots, &col_of_step),
        }));
    }
    Ok(Ok(inv))
}

fn near_null_from_pivots(pivots: &[f64], cols: &[usize]) -> Vec<usize> {
    let max_p = pivots.iter().cloned().fold(0.0f64, f64::max);
    let tol = max_p * 1e-13 + 1e-300;
    let mut out: Vec<usize> = pivots
        .iter()
        .zip(cols)
        .filter(|(p, _)| **p <= tol)
        .map(|(_, c)| c + 1)
        .collect();
    out.sort_unstable();
    out
}

/// Central-difference gradient (f(x+he_i) − f(x−he_i)) / 2h.
pub fn finite_diff_gradient<F>(f: F, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    let mut grad = Vec::with_capacity(x.len());
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let fp = f(&probe);
        probe[i] = x[i] - h;
        let fm = f(&probe);
        probe[i] = x[i];
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFiniteEvaluation { coordinate: i + 1 });
        }
        grad.push((fp - fm) / (2.0 * h));
    }
    Ok(grad)
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
/// Used for positive-semidefiniteness diagnostics on V_n.
pub fn sym_eigenvalues(m: &MatrixSmall) -> Vec<f64> {
    let d = m.dim();
    let mut a = m.clone();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..d {
            for j in (i + 1)..d {
                off += a.get(i, j) * a.get(i, j);
            }
        }
        if off.sqrt() < 1e-14 * (1.0 + frobenius(&a)) {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = a.get(p, q);
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = a.get(p, p);
                let aqq = a.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..d {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..d).map(|i| a.get(i, i)).collect();
    eig.sort_by(|x, y| x.partial_cmp(y).unwrap());
    eig
}

fn frobenius(m: &MatrixSmall) -> f64 {
    m.data.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    /// Quadrature oracle for the chi-square CDF: Simpson integration of the
    /// density after the substitution x = u² (regularizes the df=1 pole).
    pub(crate) fn chi2_cdf_oracle(x: f64, df: usize) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        let k = df as f64;
        let log_norm = -(k / 2.0) * 2.0f64.ln() - lgamma(k / 2.0);
        // integrand after substitution: pdf(u²)·2u
        let g = |u: f64| -> f64 {
            if u == 0.0 {
                // u^(k-1) → 0 for k > 1; for k = 1 the factor is 1
                if df == 1 {
                    return 2.0 * log_norm.exp();
                }
                return 0.0;
            }
            let log_val = (k - 1.0) * u.ln() - u * u / 2.0 + log_norm;
            2.0 * log_val.exp()
        };
        let b = x.sqrt();
        let n = 40_000; // even
        let h = b / n as f64;
        let mut acc = g(0.0) + g(b);
        for i in 1..n {
            let u = i as f64 * h;
            acc += if i % 2 == 1 { 4.0 } else { 2.0 } * g(u);
        }
        (acc * h / 3.0).min(1.0)
    }

    #[test]
    fn chi2_cdf_examples() {
        for df in 1..=6 {
            assert_eq!(chi2_cdf(0.0, df).unwrap(), 0.0);
        }
        let oracle1 = chi2_cdf_oracle(3.8415, 1);
        assert!((chi2_cdf(3.8415, 1).unwrap() - oracle1).abs() < 1e-9);
        assert!((chi2_cdf(3.8415, 1).unwrap() - 0.95).abs() < 1e-3);
        let oracle6 = chi2_cdf_oracle(12.5916, 6);
        assert!((chi2_cdf(12.5916, 6).unwrap() - oracle6).abs() < 1e-9);
        assert!((chi2_cdf(12.5916, 6).unwrap() - 0.95).abs() < 1e-3);
    }

    #[test]
    fn chi2_cdf_matches_quadrature_oracle() {
        for df in 1..=6 {
            for &x in &[0.05, 0.5, 1.0, 2.5, 5.0, 9.0, 14.0, 25.0] {
                let got = chi2_cdf(x, df).unwrap();
                let want = chi2_cdf_oracle(x, df);
                assert!(
                    (got - want).abs() < 1e-8,
                    "df={df} x={x}: {got} vs oracle {want}"
                );
            }
        }
    }

    #[test]
    fn chi2_quantile_examples() {
        assert!((chi2_quantile(0.95, 1).unwrap() - 3.8415).abs() < 1e-3);
        assert!((chi2_quantile(0.95, 6).unwrap() - 12.5916).abs() < 1e-3);
    }

    #[test]
    fn chi2_quantile_roundtrip() {
        for df in 1..=6 {
            let mut p = 0.01;
            while p < 0.995 {
                let x = chi2_quantile(p, df).unwrap();
                assert!((chi2_cdf(x, df).unwrap() - p).abs() < 1e-8, "p={p} df={df}");
                p += 0.07;
            }
        }
    }

    #[test]
    fn chi2_cdf_monotone() {
        for df in 1..=6 {
            let mut prev = 0.0;
            for k in 0..200 {
                let x = k as f64 * 0.15;
                let c = chi2_cdf(x, df).unwrap();
                assert!((0.0..=1.0).contains(&c));
                assert!(c >= prev - 1e-15);
                prev = c;
            }
        }
    }

    #[test]
    fn chi2_rejects_bad_arguments() {
        assert!(chi2_cdf(-1.0, 1).is_err());
        assert!(chi2_cdf(1.0, 0).is_err());
        assert!(chi2_quantile(0.0, 1).is_err());
        assert!(chi2_quantile(1.0, 1).is_err());
    }

    #[test]
    fn inverse_identity() {
        let id = MatrixSmall::identity(6).unwrap();
        let inv = guarded_inverse(&id, 1e12).unwrap().unwrap();
        assert_eq!(inv, id);
    }

    #[test]
    fn inverse_reports_singular_diagonal() {
        let mut m = MatrixSmall::identity(6).unwrap();
        m.set(5, 5, 0.0);
        let report = guarded_inverse(&m, 1e12).unwrap().unwrap_err();
        assert!(report.condition_estimate.is_infinite());
        assert_eq!(report.near_null_indices, vec![6]);
    }

    #[test]
    fn inverse_residual_on_random_spd() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..200 {
            let d = rng.gen_range(2..=6);
            // SPD via B·Bᵀ + d·I
            let mut b = MatrixSmall::zeros(d).unwrap();
            for i in 0..d {
                for j in 0..d {
                    b.set(i, j, rng.gen_range(-1.0..1.0));
                }
            }
            let mut spd = MatrixSmall::zeros(d).unwrap();
            for i in 0..d {
                for j in 0..d {
                    let mut acc = 0.0;
                    for k in 0..d {
                        acc += b.get(i, k) * b.get(j, k);
                    }
                    spd.set(i, j, acc + if i == j { d as f64 } else { 0.0 });
                }
            }
            let inv = guarded_inverse(&spd, 1e12).unwrap().unwrap();
            let prod = spd.mul(&inv);
            for i in 0..d {
                for j in 0..d {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((prod.get(i, j) - want).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn finite_diff_quadratic() {
        let g = finite_diff_gradient(|x| x[0] * x[0], &[3.0], 1e-5).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-8);
    }

    #[test]
    fn finite_diff_rejects_nonfinite() {
        let r = finite_diff_gradient(|x| x[0].ln(), &[0.0], 1e-5);
        assert!(matches!(r, Err(Error::NonFiniteEvaluation { coordinate: 1 })));
    }

    #[test]
    fn finite_diff_model_slopes() {
        // edge-indicator log density at (u=1, θ=ln 2): slope = 1 − p = 1/3
        let logf_er = |x: &[f64]| x[0] - (1.0 + x[0].exp()).ln();
        let g = finite_diff_gradient(logf_er, &[std::f64::consts::LN_2], 1e-5).unwrap();
        assert!((g[0] - 1.0 / 3.0).abs() < 1e-6);

        // block-model η slot at (y=1, η=1/3): slope = y/η = 3
        let logf_eta = |x: &[f64]| x[0].ln();
        let g = finite_diff_gradient(logf_eta, &[1.0 / 3.0], 1e-5).unwrap();
        assert!((g[0] - 3.0).abs() < 1e-5);
    }

    #[test]
    fn jacobi_eigenvalues_diagonal() {
        let m = MatrixSmall::from_rows(&[
            vec![3.0, 0.0, 0.0],
            vec![0.0, -1.0, 0.0],
            vec![0.0, 0.0, 2.0],
        ])
        .unwrap();
        let eig = sym_eigenvalues(&m);
        assert!((eig[0] + 1.0).abs() < 1e-12);
        assert!((eig[1] - 2.0).abs() < 1e-12);
        assert!((eig[2] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn jacobi_eigenvalues_2x2() {
        // eigenvalues of [[2,1],[1,2]] are 1 and 3
        let m = MatrixSmall::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let eig = sym_eigenvalues(&m);
        assert!((eig[0] - 1.0).abs() < 1e-10);
        assert!((eig[1] - 3.0).abs() < 1e-10);
    }
}
