//! Oracles shared by the integration tests. Nothing here calls into the
//! crate's numerical routines.
#![allow(dead_code)]

pub mod gen;
pub mod props;

use nalgebra::{DMatrix, DVector};
use pairmn_core::estimate::PairedCounts;

/// Adaptive Simpson on [a, b].
pub fn integrate<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn step<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let floor = 1e-15 * (left + right).abs();
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol.max(floor) {
            return left + right + (left + right - whole) / 15.0;
        }
        step(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + step(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    step(f, a, b, fa, fm, fb, whole, tol, 40)
}

/// `∫₀^z t^{a−1}(1−t)^{b−1} dt`. For `a < 1` the substitution `t = s^{1/a}`
/// removes the singularity at 0.
fn partial_beta(z: f64, a: f64, b: f64) -> f64 {
    if z <= 0.0 {
        return 0.0;
    }
    if a >= 1.0 {
        let f = |t: f64| t.powf(a - 1.0) * (1.0 - t).powf(b - 1.0);
        let scale = z * f(z).max(f(0.5 * z));
        return integrate(&f, 0.0, z, 1e-13 * scale);
    }
    let f = |s: f64| (1.0 - s.powf(1.0 / a)).max(0.0).powf(b - 1.0);
    let upper = z.powf(a);
    integrate(&f, 0.0, upper, 1e-13 * upper) / a
}

/// Regularised incomplete beta by quadrature of both tails.
pub fn inc_beta_oracle(z: f64, a: f64, b: f64) -> f64 {
    if z <= 0.0 {
        return 0.0;
    }
    if z >= 1.0 {
        return 1.0;
    }
    let lo = partial_beta(z, a, b);
    let hi = partial_beta(1.0 - z, b, a);
    lo / (lo + hi)
}

pub fn f_cdf_oracle(x: f64, d1: f64, d2: f64) -> f64 {
    inc_beta_oracle(d1 * x / (d1 * x + d2), d1 / 2.0, d2 / 2.0)
}

/// χ² survival for even degrees of freedom: `e^{−x/2} Σ_{k<ν/2} (x/2)^k / k!`.
pub fn chisq_sf_even(x: f64, df: u32) -> f64 {
    assert!(df % 2 == 0);
    let h = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..df / 2 {
        term *= h / k as f64;
        sum += term;
    }
    (-h).exp() * sum
}

pub fn to_dmatrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j])
}

/// Covariance estimate of `π̂₁ − π̂₂` written directly from its definition in
/// matrix form.
pub struct PairedCovOracle {
    pub sigma: DMatrix<f64>,
    pub diff: DVector<f64>,
    pub s: [DMatrix<f64>; 2],
    pub g: [DMatrix<f64>; 2],
    pub n_c: [f64; 2],
    pub sigma12: DMatrix<f64>,
}

pub fn paired_cov_oracle(pc: &PairedCounts) -> PairedCovOracle {
    let n = pc.n();
    let d = pc.d();
    let nf = n as f64;
    let groups = [&pc.counts1, &pc.counts2];
    let x: Vec<DMatrix<f64>> = groups
        .iter()
        .map(|c| DMatrix::from_fn(n, d, |i, j| c.row(i)[j] as f64))
        .collect();
    let tot: Vec<DVector<f64>> = x.iter().map(|m| DVector::from_fn(n, |i, _| m.row(i).sum())).collect();
    let ndot: Vec<f64> = tot.iter().map(|t| t.sum()).collect();
    let sq: Vec<f64> = tot.iter().map(|t| t.dot(t)).collect();
    let nc: Vec<f64> = (0..2).map(|t| (ndot[t] * ndot[t] - sq[t]) / ((nf - 1.0) * ndot[t])).collect();
    let pi: Vec<DVector<f64>> = (0..2).map(|t| DVector::from_fn(d, |j, _| x[t].column(j).sum() / ndot[t])).collect();
    // Rows are per-sample proportions.
    let p: Vec<DMatrix<f64>> = (0..2)
        .map(|t| DMatrix::from_fn(n, d, |i, j| x[t][(i, j)] / tot[t][i]))
        .collect();
    let centred: Vec<DMatrix<f64>> = (0..2)
        .map(|t| DMatrix::from_fn(n, d, |i, j| p[t][(i, j)] - pi[t][j]))
        .collect();
    let mut s = Vec::new();
    let mut g = Vec::new();
    for t in 0..2 {
        let w = DMatrix::from_diagonal(&tot[t]);
        s.push(centred[t].transpose() * &w * &centred[t] / (nf - 1.0));
        let mut acc = DMatrix::zeros(d, d);
        for i in 0..n {
            let pr = p[t].row(i).transpose();
            acc += (DMatrix::from_diagonal(&pr) - &pr * pr.transpose()) * tot[t][i];
        }
        g.push(acc / (ndot[t] - nf));
    }
    let w12 = DMatrix::from_diagonal(&DVector::from_fn(n, |i, _| (tot[0][i] + tot[1][i]) / (nc[0] + nc[1])));
    let sigma12 = centred[0].transpose() * w12 * &centred[1] / (nf - 1.0);
    let mut sigma = DMatrix::zeros(d, d);
    for t in 0..2 {
        sigma += (&s[t] + &g[t] * (nc[t] - 1.0)) / (nc[t] * ndot[t]);
        sigma += (&s[t] - &g[t]) * ((sq[t] - ndot[t]) / (nc[t] * ndot[t] * ndot[t]));
    }
    let cross = tot[0].dot(&tot[1]) / (ndot[0] * ndot[1]);
    sigma -= (&sigma12 + sigma12.transpose()) * cross;
    PairedCovOracle {
        sigma,
        diff: &pi[0] - &pi[1],
        s: [s[0].clone(), s[1].clone()],
        g: [g[0].clone(), g[1].clone()],
        n_c: [nc[0], nc[1]],
        sigma12,
    }
}

/// Orthonormal basis of the complement of `1` in ℝ^d (Helmert contrasts).
pub fn helmert(d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(d, d - 1, |i, k| {
        let k1 = (k + 1) as f64;
        let norm = (k1 * (k1 + 1.0)).sqrt();
        if i <= k {
            1.0 / norm
        } else if i == k + 1 {
            -k1 / norm
        } else {
            0.0
        }
    })
}

/// `(F, p)` of the paired test through `Σ̂⁺ = V (VᵀΣ̂V)⁻¹ Vᵀ`.
pub fn f_test_oracle(pc: &PairedCounts) -> (f64, f64) {
    let o = paired_cov_oracle(pc);
    let n = pc.n() as f64;
    let d = pc.d();
    let v = helmert(d);
    let inner = (v.transpose() * &o.sigma * &v).try_inverse().expect("V'ΣV invertible");
    let pinv = &v * inner * v.transpose();
    let q = (o.diff.transpose() * pinv * &o.diff)[(0, 0)];
    let df1 = (d - 1) as f64;
    let df2 = n - d as f64 + 1.0;
    let f = df2 / ((n - 1.0) * df1) * q;
    (f, 1.0 - f_cdf_oracle(f, df1, df2))
}
