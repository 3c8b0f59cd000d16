//! Random variate generators. All take an exclusively borrowed [`RngStream`].

use rand::Rng;
use rand_distr::{Binomial, Distribution, Gamma, Poisson, StandardNormal};

use super::rng::RngStream;
use crate::error::{invalid, Result};

/// Accepted deviation of a probability vector's sum from 1.
pub const SIMPLEX_TOL: f64 = 1e-9;

pub(crate) fn check_simplex(p: &[f64], what: &str) -> Result<()> {
    if p.is_empty() {
        return Err(invalid(format!("{what}: empty probability vector")));
    }
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(invalid(format!("{what}: entries must be finite and nonnegative")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > SIMPLEX_TOL {
        return Err(invalid(format!("{what}: entries sum to {s}, not 1")));
    }
    Ok(())
}

/// ln of a Gamma(shape, 1) draw. Small shapes go through
/// `G = G' U^{1/a}` with `G' ~ Gamma(a + 1)` so the result never underflows.
fn ln_gamma_draw(shape: f64, rng: &mut RngStream) -> f64 {
    if shape >= 1.0 {
        let g: f64 = Gamma::new(shape, 1.0).expect("validated shape").sample(rng);
        g.ln()
    } else {
        let g: f64 = Gamma::new(shape + 1.0, 1.0).expect("validated shape").sample(rng);
        let u = 1.0 - rng.uniform(); // (0, 1]
        g.ln() + u.ln() / shape
    }
}

/// Dirichlet draw with the given concentration vector. Zero entries yield
/// zero coordinates; at least one entry must be positive.
pub fn dirichlet(concentration: &[f64], rng: &mut RngStream) -> Result<Vec<f64>> {
    if concentration.iter().any(|a| !a.is_finite() || *a < 0.0) {
        return Err(invalid("dirichlet: concentrations must be finite and nonnegative"));
    }
    if !concentration.iter().any(|a| *a > 0.0) {
        return Err(invalid("dirichlet: all concentrations are zero"));
    }
    let logs: Vec<f64> = concentration
        .iter()
        .map(|&a| if a > 0.0 { ln_gamma_draw(a, rng) } else { f64::NEG_INFINITY })
        .collect();
    let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
    let s: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= s);
    Ok(out)
}

/// Index drawn with probabilities `p`.
pub fn categorical(p: &[f64], rng: &mut RngStream) -> Result<usize> {
    check_simplex(p, "categorical")?;
    let total: f64 = p.iter().sum();
    let u = rng.uniform() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (j, &pj) in p.iter().enumerate() {
        if pj > 0.0 {
            acc += pj;
            last = j;
            if u < acc {
                return Ok(j);
            }
        }
    }
    Ok(last)
}

/// Multinomial(n, p) by sequential conditional binomials.
pub fn multinomial(n: u64, p: &[f64], rng: &mut RngStream) -> Result<Vec<u64>> {
    check_simplex(p, "multinomial")?;
    let mut out = vec![0u64; p.len()];
    let last = match p.iter().rposition(|v| *v > 0.0) {
        Some(j) => j,
        None => return Err(invalid("multinomial: zero probability vector")),
    };
    let mut left = n;
    let mut mass: f64 = p.iter().sum();
    for j in 0..last {
        if left == 0 {
            break;
        }
        if p[j] == 0.0 {
            continue;
        }
        let q = (p[j] / mass).clamp(0.0, 1.0);
        let k = binomial(left, q, rng)?;
        out[j] = k;
        left -= k;
        mass -= p[j];
        if mass <= 0.0 {
            break;
        }
    }
    out[last] += left;
    Ok(out)
}

pub fn poisson(mean: f64, rng: &mut RngStream) -> Result<u64> {
    if !mean.is_finite() || mean < 0.0 {
        return Err(invalid(format!("poisson: mean {mean} outside [0, inf)")));
    }
    if mean == 0.0 {
        return Ok(0);
    }
    let d = Poisson::new(mean).map_err(|e| invalid(format!("poisson: {e}")))?;
    let x: f64 = d.sample(rng);
    Ok(x as u64)
}

pub fn binomial(n: u64, p: f64, rng: &mut RngStream) -> Result<u64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(invalid(format!("binomial: p = {p} outside [0, 1]")));
    }
    if n == 0 || p == 0.0 {
        return Ok(0);
    }
    if p == 1.0 {
        return Ok(n);
    }
    let d = Binomial::new(n, p).map_err(|e| invalid(format!("binomial: {e}")))?;
    Ok(d.sample(rng))
}

pub fn standard_normal(rng: &mut RngStream) -> f64 {
    rng.sample(StandardNormal)
}

/// Bivariate normal draw with mean `mean` and covariance `cov`.
pub fn mvnormal_pair(mean: (f64, f64), cov: [[f64; 2]; 2], rng: &mut RngStream) -> Result<(f64, f64)> {
    let [[a, b], [c, d]] = cov;
    if [mean.0, mean.1, a, b, c, d].iter().any(|v| !v.is_finite()) {
        return Err(invalid("mvnormal_pair: non-finite parameter"));
    }
    if b != c {
        return Err(invalid("mvnormal_pair: covariance is not symmetric"));
    }
    let det = a * d - b * b;
    let scale = a.abs().max(d.abs()).max(1.0);
    if a < 0.0 || d < 0.0 || det < -1e-12 * scale * scale {
        return Err(invalid("mvnormal_pair: covariance is not positive semidefinite"));
    }
    // Cholesky with a zero-pivot guard for singular covariances.
    let l11 = a.sqrt();
    let l21 = if l11 > 0.0 { b / l11 } else { 0.0 };
    let l22 = (d - l21 * l21).max(0.0).sqrt();
    let z1 = standard_normal(rng);
    let z2 = standard_normal(rng);
    Ok((mean.0 + l11 * z1, mean.1 + l21 * z1 + l22 * z2))
}
