//! Moment estimators for paired (and unpaired) multinomial counts.
//!
//! Sums over subjects always run in ascending subject order so results are
//! reproducible bit for bit.

use crate::error::{degenerate, invalid, Error, Result};
use crate::numkit::{Matrix, SymMatrix};

/// Nonnegative integer count matrix, one row per sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountMatrix {
    n: usize,
    d: usize,
    data: Vec<u64>,
}

impl CountMatrix {
    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(invalid("count rows have different lengths"));
        }
        Ok(CountMatrix {
            n: rows.len(),
            d,
            data: rows.concat(),
        })
    }

    pub fn empty(d: usize) -> Self {
        CountMatrix { n: 0, d, data: Vec::new() }
    }

    pub fn push_row(&mut self, row: &[u64]) -> Result<()> {
        if row.len() != self.d {
            return Err(invalid("row length does not match"));
        }
        self.data.extend_from_slice(row);
        self.n += 1;
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[u64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u64]> {
        (0..self.n).map(move |i| self.row(i))
    }

    pub fn total(&self, i: usize) -> u64 {
        self.row(i).iter().sum()
    }

    pub fn totals(&self) -> Vec<u64> {
        (0..self.n).map(|i| self.total(i)).collect()
    }

    pub fn column_sums(&self) -> Vec<u64> {
        let mut out = vec![0u64; self.d];
        for r in self.rows() {
            for (o, v) in out.iter_mut().zip(r) {
                *o += v;
            }
        }
        out
    }

    /// Rows flagged in `rows`, columns flagged in `cols`.
    pub fn select(&self, rows: &[bool], cols: &[bool]) -> CountMatrix {
        let mut out = CountMatrix::empty(cols.iter().filter(|c| **c).count());
        for i in (0..self.n).filter(|&i| rows[i]) {
            let r: Vec<u64> = self.row(i).iter().zip(cols).filter(|(_, c)| **c).map(|(v, _)| *v).collect();
            out.data.extend(r);
            out.n += 1;
        }
        out
    }

    /// Permutes columns: output column `j` is input column `perm[j]`.
    pub fn permute_columns(&self, perm: &[usize]) -> CountMatrix {
        let rows: Vec<Vec<u64>> = self.rows().map(|r| perm.iter().map(|&j| r[j]).collect()).collect();
        CountMatrix::from_rows(&rows).expect("same shape")
    }
}

/// Paired counts: row `i` of `counts1` and `counts2` belong to subject `ids[i]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairedCounts {
    pub ids: Vec<String>,
    pub counts1: CountMatrix,
    pub counts2: CountMatrix,
}

impl PairedCounts {
    pub fn new(ids: Vec<String>, counts1: CountMatrix, counts2: CountMatrix) -> Result<Self> {
        if counts1.n() != counts2.n() || counts1.d() != counts2.d() {
            return Err(invalid(format!(
                "paired matrices disagree in shape: {}x{} vs {}x{}",
                counts1.n(),
                counts1.d(),
                counts2.n(),
                counts2.d()
            )));
        }
        if ids.len() != counts1.n() {
            return Err(invalid("subject id count does not match the number of rows"));
        }
        Ok(PairedCounts { ids, counts1, counts2 })
    }

    /// Subjects labelled `1..=n`.
    pub fn from_rows(rows1: &[Vec<u64>], rows2: &[Vec<u64>]) -> Result<Self> {
        let ids = (1..=rows1.len()).map(|i| i.to_string()).collect();
        Self::new(ids, CountMatrix::from_rows(rows1)?, CountMatrix::from_rows(rows2)?)
    }

    pub fn n(&self) -> usize {
        self.counts1.n()
    }

    pub fn d(&self) -> usize {
        self.counts1.d()
    }

    /// Drops subjects with a zero total in either condition and categories
    /// with no counts anywhere. Returns the reduced data and the masks.
    pub fn reduced(&self) -> (PairedCounts, Vec<bool>, Vec<bool>) {
        let rows: Vec<bool> = (0..self.n())
            .map(|i| self.counts1.total(i) > 0 && self.counts2.total(i) > 0)
            .collect();
        let all = vec![true; self.d()];
        let s1 = self.counts1.select(&rows, &all).column_sums();
        let s2 = self.counts2.select(&rows, &all).column_sums();
        let cols: Vec<bool> = s1.iter().zip(&s2).map(|(a, b)| a + b > 0).collect();
        let ids = self.ids.iter().zip(&rows).filter(|(_, k)| **k).map(|(s, _)| s.clone()).collect();
        let pc = PairedCounts {
            ids,
            counts1: self.counts1.select(&rows, &cols),
            counts2: self.counts2.select(&rows, &cols),
        };
        (pc, rows, cols)
    }

    /// Condition 1 and 2 swapped.
    pub fn swapped(&self) -> PairedCounts {
        PairedCounts {
            ids: self.ids.clone(),
            counts1: self.counts2.clone(),
            counts2: self.counts1.clone(),
        }
    }
}

/// Pooled proportions `Σᵢ Xᵢ / Σᵢ Nᵢ`.
pub fn pooled_pi(counts: &CountMatrix) -> Result<Vec<f64>> {
    let sums = counts.column_sums();
    let total: u64 = sums.iter().sum();
    if total == 0 {
        return Err(degenerate("all counts are zero"));
    }
    Ok(sums.iter().map(|&s| s as f64 / total as f64).collect())
}

/// Per-condition building blocks of the covariance estimator.
#[derive(Debug, Clone)]
pub struct GroupMoments {
    /// Pooled proportions π̂ₜ.
    pub pi_hat: Vec<f64>,
    /// Per-sample proportions π̂ᵢₜ = Xᵢₜ / Nᵢₜ.
    pub sample_pi: Vec<Vec<f64>>,
    pub totals: Vec<f64>,
    /// N·ₜ = Σᵢ Nᵢₜ
    pub n_dot: f64,
    /// Σᵢ Nᵢₜ²
    pub sum_sq: f64,
    /// N_cₜ = (N·ₜ² − Σᵢ Nᵢₜ²) / ((n − 1) N·ₜ)
    pub n_c: f64,
    /// Sₜ = 1/(n−1) Σᵢ Nᵢₜ (π̂ᵢₜ − π̂ₜ)(π̂ᵢₜ − π̂ₜ)ᵀ
    pub s: SymMatrix,
    /// Gₜ = 1/(N·ₜ − n) Σᵢ Nᵢₜ (diag π̂ᵢₜ − π̂ᵢₜπ̂ᵢₜᵀ)
    pub g: SymMatrix,
}

impl GroupMoments {
    pub fn n(&self) -> usize {
        self.totals.len()
    }

    /// This condition's contribution to Var(π̂ₜ):
    /// `(S + (N_c−1)G)/(N_c N·) + (ΣN² − N·)/(N_c N·²) (S − G)`.
    pub fn variance_term(&self) -> SymMatrix {
        let a = self
            .s
            .add(&self.g.scale(self.n_c - 1.0))
            .scale(1.0 / (self.n_c * self.n_dot));
        let b = self
            .s
            .sub(&self.g)
            .scale((self.sum_sq - self.n_dot) / (self.n_c * self.n_dot * self.n_dot));
        a.add(&b)
    }
}

pub fn group_moments(counts: &CountMatrix) -> Result<GroupMoments> {
    let n = counts.n();
    let d = counts.d();
    if n < 2 {
        return Err(Error::InsufficientSamples { n, d });
    }
    let totals: Vec<f64> = counts.totals().into_iter().map(|t| t as f64).collect();
    if let Some(i) = totals.iter().position(|t| *t == 0.0) {
        return Err(degenerate(format!("sample {i} has a zero total")));
    }
    let n_dot: f64 = totals.iter().sum();
    if n_dot <= n as f64 {
        return Err(degenerate("every sample has total 1; within-sample variance is unidentifiable"));
    }
    let sum_sq: f64 = totals.iter().map(|t| t * t).sum();
    let n_c = (n_dot * n_dot - sum_sq) / ((n as f64 - 1.0) * n_dot);
    let pi_hat = pooled_pi(counts)?;
    let sample_pi: Vec<Vec<f64>> = counts
        .rows()
        .zip(&totals)
        .map(|(r, t)| r.iter().map(|&x| x as f64 / t).collect())
        .collect();

    let mut s = Matrix::zeros(d, d);
    let mut g = Matrix::zeros(d, d);
    for (p, &t) in sample_pi.iter().zip(&totals) {
        let dev: Vec<f64> = p.iter().zip(&pi_hat).map(|(a, b)| a - b).collect();
        for j in 0..d {
            for k in j..d {
                s.add_to(j, k, t * dev[j] * dev[k]);
                let kern = if j == k { p[j] - p[j] * p[j] } else { -p[j] * p[k] };
                g.add_to(j, k, t * kern);
            }
        }
    }
    let s_scale = 1.0 / (n as f64 - 1.0);
    let g_scale = 1.0 / (n_dot - n as f64);
    let s = SymMatrix::from_upper(d, |j, k| s.get(j, k) * s_scale);
    let g = SymMatrix::from_upper(d, |j, k| g.get(j, k) * g_scale);
    Ok(GroupMoments {
        pi_hat,
        sample_pi,
        totals,
        n_dot,
        sum_sq,
        n_c,
        s,
        g,
    })
}

/// Estimate of `Var(π̂₁ − π̂₂)` and the pieces it was assembled from.
#[derive(Debug, Clone)]
pub struct CovEstimate {
    pub sigma_hat: SymMatrix,
    pub group1: GroupMoments,
    pub group2: GroupMoments,
    /// Σ̂₁₂; `None` for unpaired data.
    pub sigma12: Option<Matrix>,
    /// Σᵢ Nᵢ₁Nᵢ₂ / (N·₁N·₂); zero for unpaired data.
    pub cross_weight: f64,
}

impl CovEstimate {
    pub fn pi_diff(&self) -> Vec<f64> {
        self.group1.pi_hat.iter().zip(&self.group2.pi_hat).map(|(a, b)| a - b).collect()
    }
}

/// Consistent estimator of `Var(π̂₁ − π̂₂)` for paired counts. Every subject
/// must have a positive total in both conditions.
pub fn paired_covariance(pc: &PairedCounts) -> Result<CovEstimate> {
    let g1 = group_moments(&pc.counts1)?;
    let g2 = group_moments(&pc.counts2)?;
    let n = pc.n();
    let d = pc.d();

    let weight_norm = g1.n_c + g2.n_c;
    let mut s12 = Matrix::zeros(d, d);
    for i in 0..n {
        let w = (g1.totals[i] + g2.totals[i]) / weight_norm;
        let dev1: Vec<f64> = g1.sample_pi[i].iter().zip(&g1.pi_hat).map(|(a, b)| a - b).collect();
        let dev2: Vec<f64> = g2.sample_pi[i].iter().zip(&g2.pi_hat).map(|(a, b)| a - b).collect();
        for j in 0..d {
            for k in 0..d {
                s12.add_to(j, k, w * dev1[j] * dev2[k]);
            }
        }
    }
    let s12 = s12.scale(1.0 / (n as f64 - 1.0));
    let cross: f64 = g1.totals.iter().zip(&g2.totals).map(|(a, b)| a * b).sum();
    let cross_weight = cross / (g1.n_dot * g2.n_dot);
    let both = SymMatrix::symmetrize(&s12.add(&s12.transpose()))?;
    let sigma_hat = g1
        .variance_term()
        .add(&g2.variance_term())
        .sub(&both.scale(cross_weight));
    Ok(CovEstimate {
        sigma_hat,
        group1: g1,
        group2: g2,
        sigma12: Some(s12),
        cross_weight,
    })
}

/// Same estimator without the cross-covariance term, for two independent
/// groups of possibly different sizes.
pub fn unpaired_covariance(group1: &CountMatrix, group2: &CountMatrix) -> Result<CovEstimate> {
    if group1.d() != group2.d() {
        return Err(invalid("groups have different numbers of categories"));
    }
    let g1 = group_moments(group1)?;
    let g2 = group_moments(group2)?;
    Ok(CovEstimate {
        sigma_hat: g1.variance_term().add(&g2.variance_term()),
        group1: g1,
        group2: g2,
        sigma12: None,
        cross_weight: 0.0,
    })
}

/// Largest θ̂ returned by [`dm_theta_moment`].
pub const THETA_MAX: f64 = 1.0 - 1e-9;

/// Method-of-moments overdispersion for Dirichlet-multinomial counts,
/// `θ̂ = tr(S − G) / tr(S + (N_c − 1)G)` clamped to `[0, 1)`.
///
/// Under DM with `Var P = θ(diag α − ααᵀ)`, `E(S − G) = N_c θ (diag α − ααᵀ)`
/// and `E(S + (N_c−1)G) = N_c (diag α − ααᵀ)`, so the ratio is consistent.
pub fn dm_theta_moment(counts: &CountMatrix) -> Result<f64> {
    let m = group_moments(counts)?;
    let tr = |a: &SymMatrix| a.diag().iter().sum::<f64>();
    let num = tr(&m.s) - tr(&m.g);
    let den = tr(&m.s) + (m.n_c - 1.0) * tr(&m.g);
    if !(den > 0.0) || !num.is_finite() {
        return Err(degenerate("no between-category variation to estimate overdispersion"));
    }
    Ok((num / den).clamp(0.0, THETA_MAX))
}
