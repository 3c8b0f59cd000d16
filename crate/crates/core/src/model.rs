//! The paired-multinomial model: moment parameters, the count moments they
//! imply, and the two constructive latent families used for simulation
//! (mixture of Dirichlets, correlated log-normal).

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::numkit::sample::{dirichlet, categorical, multinomial, mvnormal_pair};
use crate::numkit::{multinomial_kernel, sym_eig, Matrix, RngStream, SymMatrix};

const PI_TOL: f64 = 1e-12;
const ANNIHILATION_TOL: f64 = 1e-10;

/// First and second moments of the latent compositions `(P₁, P₂)`:
/// `E Pₜ = πₜ`, `Var Pₜ = Σₜ`, `Cov(P₁, P₂) = Σ₁₂`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairMnParams {
    pub pi1: Vec<f64>,
    pub pi2: Vec<f64>,
    pub sigma1: SymMatrix,
    pub sigma2: SymMatrix,
    pub sigma12: Matrix,
}

fn check_composition(p: &[f64], what: &str) -> Result<()> {
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(invalid(format!("{what} has negative or non-finite entries")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > PI_TOL {
        return Err(invalid(format!("{what} sums to {s}")));
    }
    Ok(())
}

fn check_annihilates_ones(m: &Matrix, what: &str) -> Result<()> {
    let worst = m
        .row_sums()
        .into_iter()
        .chain(m.col_sums())
        .fold(0.0f64, |a, v| a.max(v.abs()));
    if worst > ANNIHILATION_TOL {
        return Err(invalid(format!("{what} rows/columns do not sum to zero ({worst:e})")));
    }
    Ok(())
}

impl PairMnParams {
    pub fn dim(&self) -> usize {
        self.pi1.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 {
            return Err(invalid("empty composition"));
        }
        if self.pi2.len() != d
            || self.sigma1.dim() != d
            || self.sigma2.dim() != d
            || self.sigma12.rows() != d
            || self.sigma12.cols() != d
        {
            return Err(invalid("parameter dimensions disagree"));
        }
        check_composition(&self.pi1, "pi1")?;
        check_composition(&self.pi2, "pi2")?;
        check_annihilates_ones(self.sigma1.as_matrix(), "sigma1")?;
        check_annihilates_ones(self.sigma2.as_matrix(), "sigma2")?;
        check_annihilates_ones(&self.sigma12, "sigma12")?;
        for (s, what) in [(&self.sigma1, "sigma1"), (&self.sigma2, "sigma2")] {
            let eig = sym_eig(s)?;
            let floor = -ANNIHILATION_TOL * s.max_abs().max(1.0);
            if eig.values.last().copied().unwrap_or(0.0) < floor {
                return Err(invalid(format!("{what} is not positive semidefinite")));
            }
        }
        Ok(())
    }
}

/// Moments of the observed counts `(X₁, X₂)` for totals `(N₁, N₂)`.
#[derive(Debug, Clone)]
pub struct PairMoments {
    pub mean1: Vec<f64>,
    pub mean2: Vec<f64>,
    pub var1: SymMatrix,
    pub var2: SymMatrix,
    pub cross: Matrix,
}

/// `E Xₜ = Nₜπₜ`, `Var Xₜ = Nₜ(diag πₜ − πₜπₜᵀ) + Nₜ(Nₜ−1)Σₜ`,
/// `Cov(X₁, X₂) = N₁N₂Σ₁₂`.
pub fn pairmn_moments(params: &PairMnParams, n1: u64, n2: u64) -> Result<PairMoments> {
    if n1 == 0 || n2 == 0 {
        return Err(invalid("totals must be at least 1"));
    }
    params.validate()?;
    let var = |pi: &[f64], sigma: &SymMatrix, n: f64| {
        multinomial_kernel(pi).scale(n).add(&sigma.scale(n * (n - 1.0)))
    };
    let (f1, f2) = (n1 as f64, n2 as f64);
    Ok(PairMoments {
        mean1: params.pi1.iter().map(|p| p * f1).collect(),
        mean2: params.pi2.iter().map(|p| p * f2).collect(),
        var1: var(&params.pi1, &params.sigma1, f1),
        var2: var(&params.pi2, &params.sigma2, f2),
        cross: params.sigma12.scale(f1 * f2),
    })
}

/// How the θ values of a [`MixedDirichletParams`] are read.
///
/// * `Variance`: θ ∈ (0, 1] is the variance factor, `Var P = θ(diag α − ααᵀ)`.
/// * `Concentration`: θ > 0 is the Dirichlet concentration total, so the
///   variance factor is `1 / (θ + 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaScale {
    #[default]
    Variance,
    Concentration,
}

impl ThetaScale {
    pub fn variance_factor(self, theta: f64) -> Result<f64> {
        match self {
            ThetaScale::Variance if theta > 0.0 && theta <= 1.0 => Ok(theta),
            ThetaScale::Concentration if theta > 0.0 && theta.is_finite() => Ok(1.0 / (theta + 1.0)),
            _ => Err(invalid(format!("theta = {theta} outside the domain of {self:?} scale"))),
        }
    }
}

/// `Pₜ = (1−ρ)P'ₜ + ρP''`, `P'ₜ ~ Dir(αₜ, θ_αₜ)`, `P'' ~ Dir(ℓ, θ_ℓ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedDirichletParams {
    pub alpha1: Vec<f64>,
    pub alpha2: Vec<f64>,
    pub ell: Vec<f64>,
    pub theta_a1: f64,
    pub theta_a2: f64,
    pub theta_ell: f64,
    pub rho: f64,
    #[serde(default)]
    pub scale: ThetaScale,
}

impl MixedDirichletParams {
    /// Solves for `αₜ = (πₜ − ρℓ) / (1 − ρ)` so that the mixture has mean `πₜ`.
    #[allow(clippy::too_many_arguments)]
    pub fn from_means(
        pi1: &[f64],
        pi2: &[f64],
        ell: &[f64],
        theta_a1: f64,
        theta_a2: f64,
        theta_ell: f64,
        rho: f64,
        scale: ThetaScale,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&rho) {
            return Err(invalid(format!("rho = {rho} outside [0, 1)")));
        }
        let solve = |pi: &[f64]| -> Result<Vec<f64>> {
            if pi.len() != ell.len() {
                return Err(invalid("pi and ell lengths differ"));
            }
            let a: Vec<f64> = pi.iter().zip(ell).map(|(p, l)| (p - rho * l) / (1.0 - rho)).collect();
            if a.iter().any(|v| *v < -PI_TOL) {
                return Err(invalid(format!("rho = {rho} makes alpha negative for this pi and ell")));
            }
            let a: Vec<f64> = a.into_iter().map(|v| v.max(0.0)).collect();
            let s: f64 = a.iter().sum();
            Ok(a.into_iter().map(|v| v / s).collect())
        };
        let p = MixedDirichletParams {
            alpha1: solve(pi1)?,
            alpha2: solve(pi2)?,
            ell: ell.to_vec(),
            theta_a1,
            theta_a2,
            theta_ell,
            rho,
            scale,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn dim(&self) -> usize {
        self.ell.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if self.alpha1.len() != d || self.alpha2.len() != d || d == 0 {
            return Err(invalid("alpha1, alpha2 and ell must share a nonzero length"));
        }
        check_composition(&self.alpha1, "alpha1")?;
        check_composition(&self.alpha2, "alpha2")?;
        check_composition(&self.ell, "ell")?;
        if !(0.0..1.0).contains(&self.rho) {
            return Err(invalid(format!("rho = {} outside [0, 1)", self.rho)));
        }
        for t in [self.theta_a1, self.theta_a2, self.theta_ell] {
            self.scale.variance_factor(t)?;
        }
        Ok(())
    }

    /// Variance factors `(θ_α₁, θ_α₂, θ_ℓ)` after applying the scale.
    pub fn variance_factors(&self) -> Result<(f64, f64, f64)> {
        Ok((
            self.scale.variance_factor(self.theta_a1)?,
            self.scale.variance_factor(self.theta_a2)?,
            self.scale.variance_factor(self.theta_ell)?,
        ))
    }
}

/// Closed-form PairMN moments of the mixed-Dirichlet family.
pub fn mixed_dirichlet_to_pairmn(p: &MixedDirichletParams) -> Result<PairMnParams> {
    p.validate()?;
    let (v1, v2, vl) = p.variance_factors()?;
    let rho = p.rho;
    let mix = |a: &[f64]| -> Vec<f64> {
        let v: Vec<f64> = a.iter().zip(&p.ell).map(|(a, l)| (1.0 - rho) * a + rho * l).collect();
        v
    };
    let shared = multinomial_kernel(&p.ell).scale(rho * rho * vl);
    let own = |a: &[f64], v: f64| multinomial_kernel(a).scale((1.0 - rho).powi(2) * v).add(&shared);
    Ok(PairMnParams {
        pi1: mix(&p.alpha1),
        pi2: mix(&p.alpha2),
        sigma1: own(&p.alpha1, v1),
        sigma2: own(&p.alpha2, v2),
        sigma12: shared.clone().into_matrix(),
    })
}

/// Dirichlet draw with mean `alpha` and `Var = θ(diag α − ααᵀ)`, i.e.
/// concentration `α(1−θ)/θ`. θ = 1 is the vertex limit: a one-hot vector
/// drawn with probabilities `alpha`.
pub fn sample_overdispersed_dirichlet(alpha: &[f64], theta: f64, rng: &mut RngStream) -> Result<Vec<f64>> {
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(invalid(format!("theta = {theta} outside (0, 1]")));
    }
    check_composition(alpha, "alpha")?;
    if theta == 1.0 {
        let j = categorical(alpha, rng)?;
        let mut out = vec![0.0; alpha.len()];
        out[j] = 1.0;
        return Ok(out);
    }
    let c = (1.0 - theta) / theta;
    let conc: Vec<f64> = alpha.iter().map(|a| a * c).collect();
    dirichlet(&conc, rng)
}

/// Latent pair `(P₁, P₂)` of the mixed-Dirichlet family.
pub fn sample_latent_mixed_dirichlet(p: &MixedDirichletParams, rng: &mut RngStream) -> Result<(Vec<f64>, Vec<f64>)> {
    let (v1, v2, vl) = p.variance_factors()?;
    let own1 = sample_overdispersed_dirichlet(&p.alpha1, v1, rng)?;
    let own2 = sample_overdispersed_dirichlet(&p.alpha2, v2, rng)?;
    if p.rho == 0.0 {
        return Ok((own1, own2));
    }
    let shared = sample_overdispersed_dirichlet(&p.ell, vl, rng)?;
    let mix = |own: Vec<f64>| -> Vec<f64> {
        own.iter().zip(&shared).map(|(a, s)| (1.0 - p.rho) * a + p.rho * s).collect()
    };
    Ok((mix(own1), mix(own2)))
}

/// One subject's paired counts from the mixed-Dirichlet PairMN family.
pub fn sample_pairmn_mixed_dirichlet(
    p: &MixedDirichletParams,
    totals: (u64, u64),
    rng: &mut RngStream,
) -> Result<(Vec<u64>, Vec<u64>)> {
    p.validate()?;
    let (p1, p2) = sample_latent_mixed_dirichlet(p, rng)?;
    Ok((multinomial(totals.0, &p1, rng)?, multinomial(totals.1, &p2, rng)?))
}

/// `Pₜ = softmax(Zₜ)` with `(Z₁ⱼ, Z₂ⱼ)` bivariate normal, correlation ρ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogNormalParams {
    pub mu1: Vec<f64>,
    pub mu2: Vec<f64>,
    pub sd1: Vec<f64>,
    pub sd2: Vec<f64>,
    pub rho: f64,
}

impl LogNormalParams {
    pub fn dim(&self) -> usize {
        self.mu1.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 || self.mu2.len() != d || self.sd1.len() != d || self.sd2.len() != d {
            return Err(invalid("mu1, mu2, sd1 and sd2 must share a nonzero length"));
        }
        if self.mu1.iter().chain(&self.mu2).any(|m| !m.is_finite()) {
            return Err(invalid("non-finite mean"));
        }
        if self.sd1.iter().chain(&self.sd2).any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(invalid("standard deviations must be positive"));
        }
        if !(self.rho > -1.0 && self.rho < 1.0) {
            return Err(invalid(format!("rho = {} outside (-1, 1)", self.rho)));
        }
        Ok(())
    }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let top = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - top).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn sample_latent_lognormal(p: &LogNormalParams, rng: &mut RngStream) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = p.dim();
    let mut z1 = Vec::with_capacity(d);
    let mut z2 = Vec::with_capacity(d);
    for j in 0..d {
        let (s1, s2) = (p.sd1[j], p.sd2[j]);
        let c = p.rho * s1 * s2;
        let (a, b) = mvnormal_pair((p.mu1[j], p.mu2[j]), [[s1 * s1, c], [c, s2 * s2]], rng)?;
        z1.push(a);
        z2.push(b);
    }
    Ok((softmax(&z1), softmax(&z2)))
}

pub fn sample_pairmn_lognormal(
    p: &LogNormalParams,
    totals: (u64, u64),
    rng: &mut RngStream,
) -> Result<(Vec<u64>, Vec<u64>)> {
    p.validate()?;
    let (p1, p2) = sample_latent_lognormal(p, rng)?;
    Ok((multinomial(totals.0, &p1, rng)?, multinomial(totals.1, &p2, rng)?))
}
