//! Goodness-of-fit checks used by the calibration suites: Kolmogorov–Smirnov
//! (one- and two-sample) and Pearson χ².

use super::special::chisq_sf;

/// Asymptotic Kolmogorov survival function Q(λ) = 2 Σ (−1)^{k−1} e^{−2k²λ²}.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=200 {
        let term = (-2.0 * (k as f64).powi(2) * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-17 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Effective-size corrected KS p-value (Stephens' approximation).
fn ks_pvalue(d: f64, n_eff: f64) -> f64 {
    let root = n_eff.sqrt();
    kolmogorov_sf((root + 0.12 + 0.11 / root) * d)
}

#[derive(Debug, Clone, Copy)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// One-sample KS test of `samples` against Uniform(0, 1).
pub fn ks_uniform(samples: &[f64]) -> KsResult {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let x = x.clamp(0.0, 1.0);
        d = d.max((i as f64 + 1.0) / n - x).max(x - i as f64 / n);
    }
    KsResult {
        statistic: d,
        p_value: ks_pvalue(d, n),
    }
}

/// Two-sample KS test.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> KsResult {
    let mut xa = a.to_vec();
    let mut xb = b.to_vec();
    xa.sort_by(f64::total_cmp);
    xb.sort_by(f64::total_cmp);
    let (na, nb) = (xa.len() as f64, xb.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < xa.len() && j < xb.len() {
        let x = xa[i].min(xb[j]);
        while i < xa.len() && xa[i] <= x {
            i += 1;
        }
        while j < xb.len() && xb[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    KsResult {
        statistic: d,
        p_value: ks_pvalue(d, na * nb / (na + nb)),
    }
}

/// Pearson χ² goodness of fit of `observed` counts against `probs`. Cells
/// with expected count below 5 are pooled into one cell.
pub fn chisq_gof(observed: &[u64], probs: &[f64]) -> f64 {
    assert_eq!(observed.len(), probs.len());
    let total: u64 = observed.iter().sum();
    let total = total as f64;
    let mut stat = 0.0;
    let mut cells = 0usize;
    let (mut pool_obs, mut pool_exp) = (0.0, 0.0);
    for (&o, &p) in observed.iter().zip(probs) {
        let e = p * total;
        if e < 5.0 {
            pool_obs += o as f64;
            pool_exp += e;
            continue;
        }
        stat += (o as f64 - e).powi(2) / e;
        cells += 1;
    }
    if pool_exp > 0.0 {
        stat += (pool_obs - pool_exp).powi(2) / pool_exp;
        cells += 1;
    } else if pool_obs > 0.0 {
        return 0.0;
    }
    if cells < 2 {
        return 1.0;
    }
    chisq_sf(stat, cells - 1)
}
