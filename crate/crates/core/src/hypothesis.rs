//! Tests of equal composition and p-value machinery.

use serde::{Deserialize, Serialize};

use crate::error::{degenerate, invalid, Error, Result};
use crate::estimate::{dm_theta_moment, group_moments, paired_covariance, CountMatrix, PairedCounts};
use crate::numkit::{chisq_sf, f_sf, pinv_truncated, DEFAULT_REL_TOL};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub df1: usize,
    /// Denominator degrees of freedom; `None` for χ² reference distributions.
    pub df2: Option<usize>,
    pub p_value: f64,
    pub effective_n: usize,
    pub effective_d: usize,
    pub truncated_eigs: usize,
}

/// Paired F-test of `π₁ = π₂`.
///
/// Subjects with a zero total in either condition and categories that are
/// empty in every sample are dropped first. With `n` subjects and `d`
/// categories left,
///
/// `F = (n−d+1) / ((n−1)(d−1)) · (π̂₁−π̂₂)ᵀ Σ̂⁺ (π̂₁−π̂₂)`
///
/// is referred to `F(d−1, n−d+1)`, where Σ̂⁺ is the pseudoinverse of the
/// paired covariance estimate with negative eigenvalues zeroed and rank
/// capped at `d−1`.
pub fn paired_f_test(pc: &PairedCounts) -> Result<TestResult> {
    let (reduced, _, _) = pc.reduced();
    let n = reduced.n();
    let d = reduced.d();
    if d < 2 {
        return Err(degenerate(format!("only {d} nonempty categories")));
    }
    if n <= d {
        return Err(Error::InsufficientSamples { n, d });
    }
    let est = paired_covariance(&reduced)?;
    let diff = est.pi_diff();
    // With identical paired data Σ̂ is negative semidefinite, but the
    // quadratic form is zero whatever the pseudoinverse.
    let (quad, truncated) = match pinv_truncated(&est.sigma_hat, d - 1, DEFAULT_REL_TOL) {
        Ok(pinv) => (pinv.matrix.quad_form(&diff).max(0.0), pinv.truncated),
        Err(Error::ZeroRank) if diff.iter().all(|v| *v == 0.0) => (0.0, d),
        Err(Error::ZeroRank) => return Err(degenerate("estimated covariance has rank zero")),
        Err(e) => return Err(e),
    };
    let (nf, df) = (n as f64, d as f64);
    let statistic = (nf - df + 1.0) / ((nf - 1.0) * (df - 1.0)) * quad;
    let df1 = d - 1;
    let df2 = n - d + 1;
    Ok(TestResult {
        statistic,
        df1,
        df2: Some(df2),
        p_value: f_sf(statistic, df1, df2),
        effective_n: n,
        effective_d: d,
        truncated_eigs: truncated,
    })
}

fn drop_empty_rows(m: &CountMatrix) -> CountMatrix {
    let rows: Vec<bool> = m.totals().iter().map(|t| *t > 0).collect();
    m.select(&rows, &vec![true; m.d()])
}

/// Two-sample Dirichlet-multinomial χ² test for independent groups:
///
/// `Σₖ (π̂₁ₖ − π̂₂ₖ)² / (C₁π̂₁ₖ + C₂π̂₂ₖ)` against χ²_{d−1}, with
/// `Cₜ = (θ̂ₜ(Σᵢ Nᵢₜ² − N·ₜ) + N·ₜ) / N·ₜ²`.
///
/// Categories whose denominator is zero carry no counts and are dropped,
/// reducing the degrees of freedom.
pub fn unpaired_dm_test(group1: &CountMatrix, group2: &CountMatrix) -> Result<TestResult> {
    if group1.d() != group2.d() {
        return Err(invalid("groups have different numbers of categories"));
    }
    let g1 = drop_empty_rows(group1);
    let g2 = drop_empty_rows(group2);
    for g in [&g1, &g2] {
        if g.n() < 2 {
            return Err(Error::InsufficientSamples { n: g.n(), d: g.d() });
        }
    }
    let coef = |g: &CountMatrix| -> Result<(Vec<f64>, f64)> {
        let m = group_moments(g)?;
        let theta = dm_theta_moment(g)?;
        let c = (theta * (m.sum_sq - m.n_dot) + m.n_dot) / (m.n_dot * m.n_dot);
        Ok((m.pi_hat, c))
    };
    let (pi1, c1) = coef(&g1)?;
    let (pi2, c2) = coef(&g2)?;

    let mut statistic = 0.0;
    let mut kept = 0usize;
    for (a, b) in pi1.iter().zip(&pi2) {
        let den = c1 * a + c2 * b;
        if den > 0.0 {
            statistic += (a - b).powi(2) / den;
            kept += 1;
        }
    }
    if kept < 2 {
        return Err(degenerate(format!("only {kept} nonempty categories")));
    }
    let df1 = kept - 1;
    Ok(TestResult {
        statistic,
        df1,
        df2: None,
        p_value: chisq_sf(statistic, df1),
        effective_n: g1.n() + g2.n(),
        effective_d: kept,
        truncated_eigs: 0,
    })
}

fn check_pvalues(pvals: &[f64]) -> Result<()> {
    if let Some(p) = pvals.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(invalid(format!("p-value {p} outside [0, 1]")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FisherCombined {
    pub p_value: f64,
    /// −2 Σ ln pₖ
    pub statistic: f64,
    /// At least one input was exactly 0, so the statistic is infinite.
    pub zero_input: bool,
}

/// Fisher's method: `1 − χ²_{2K}(−2 Σ ln pₖ)`.
pub fn fisher_combine(pvals: &[f64]) -> Result<FisherCombined> {
    if pvals.is_empty() {
        return Err(Error::InsufficientTests { needed: 1, got: 0 });
    }
    check_pvalues(pvals)?;
    if pvals.iter().any(|p| *p == 0.0) {
        return Ok(FisherCombined {
            p_value: 0.0,
            statistic: f64::INFINITY,
            zero_input: true,
        });
    }
    let statistic = -2.0 * pvals.iter().map(|p| p.ln()).sum::<f64>();
    Ok(FisherCombined {
        p_value: chisq_sf(statistic, 2 * pvals.len()),
        statistic,
        zero_input: false,
    })
}

/// Combination on the second-smallest p-value `p₍₂₎` of K:
/// `1 − [1 + (K−1)p₍₂₎](1 − p₍₂₎)^{K−1}`, the probability that at least two
/// of K independent uniforms fall at or below `p₍₂₎`.
pub fn second_smallest_combine(pvals: &[f64]) -> Result<f64> {
    let k = pvals.len();
    if k < 2 {
        return Err(Error::InsufficientTests { needed: 2, got: k });
    }
    check_pvalues(pvals)?;
    let mut sorted = pvals.to_vec();
    sorted.sort_by(f64::total_cmp);
    let p = sorted[1];
    Ok(second_smallest_tail(p, k))
}

pub(crate) fn second_smallest_tail(p: f64, k: usize) -> f64 {
    if p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return 1.0;
    }
    let km1 = (k - 1) as f64;
    let survive = (1.0 + km1 * p) * (km1 * (-p).ln_1p()).exp();
    (1.0 - survive).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BhOutcome {
    pub rejected: Vec<bool>,
    /// Step-up adjusted p-values, `min(1, minⱼ≥ᵢ m p₍ⱼ₎ / j)`.
    pub adjusted: Vec<f64>,
}

/// Benjamini–Hochberg step-up procedure at level `q`.
pub fn bh_fdr(pvals: &[f64], q: f64) -> Result<BhOutcome> {
    if !(q > 0.0 && q < 1.0) {
        return Err(invalid(format!("FDR level {q} outside (0, 1)")));
    }
    check_pvalues(pvals)?;
    let m = pvals.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| pvals[a].total_cmp(&pvals[b]).then(a.cmp(&b)));

    let cutoff = (1..=m)
        .rev()
        .find(|&rank| pvals[order[rank - 1]] <= rank as f64 * q / m as f64)
        .unwrap_or(0);
    let mut rejected = vec![false; m];
    for &i in &order[..cutoff] {
        rejected[i] = true;
    }

    let mut adjusted = vec![0.0; m];
    let mut running = 1.0f64;
    for rank in (1..=m).rev() {
        let i = order[rank - 1];
        running = running.min(pvals[i] * m as f64 / rank as f64);
        adjusted[i] = running.min(1.0);
    }
    Ok(BhOutcome { rejected, adjusted })
}
