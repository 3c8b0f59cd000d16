//! Random paired count tables for the oracle and property tests.

use pairmn_core::estimate::PairedCounts;
use pairmn_core::model::{sample_pairmn_mixed_dirichlet, MixedDirichletParams, ThetaScale};
use pairmn_core::numkit::sample::poisson;
use pairmn_core::numkit::RngStream;

pub fn mixed_params(d: usize, rho: f64, shift: f64) -> MixedDirichletParams {
    let base: Vec<f64> = (0..d).map(|j| 1.0 + j as f64).collect();
    let s: f64 = base.iter().sum();
    let pi1: Vec<f64> = base.iter().map(|b| b / s).collect();
    let mut pi2 = pi1.clone();
    pi2[0] += shift;
    pi2[d - 1] -= shift;
    let ell = pi1.clone();
    MixedDirichletParams::from_means(&pi1, &pi2, &ell, 0.1, 0.15, 0.2, rho, ThetaScale::Variance).unwrap()
}

/// `n` subjects with Poisson(mean) totals (at least 1).
pub fn paired_table(n: usize, d: usize, rho: f64, mean_total: f64, seed: u64) -> PairedCounts {
    let p = mixed_params(d, rho, 0.0);
    let mut rng = RngStream::new(seed);
    let mut r1 = Vec::new();
    let mut r2 = Vec::new();
    for _ in 0..n {
        let t1 = poisson(mean_total, &mut rng).unwrap().max(1);
        let t2 = poisson(mean_total, &mut rng).unwrap().max(1);
        let (a, b) = sample_pairmn_mixed_dirichlet(&p, (t1, t2), &mut rng).unwrap();
        r1.push(a);
        r2.push(b);
    }
    PairedCounts::from_rows(&r1, &r2).unwrap()
}
