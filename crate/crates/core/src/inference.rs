//! Wald-type tests of H₀: Mᵀβ = m built on any PMφE, with asymptotic power,
//! sample-size planning and contiguous-alternative noncentrality.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{condition_number, FitResult, MAX_CONDITION};
use crate::stats::{chi2_sf, chi2_upper_quantile, normal_cdf, normal_quantile};

/// Relative singular-value tolerance for the rank check on M.
const RANK_TOL: f64 = 1e-10;

/// H₀: Mᵀβ = m with M a d(k+1)×r full-column-rank matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearHypothesis {
    matrix: DMatrix<f64>,
    rhs: DVector<f64>,
}

impl LinearHypothesis {
    pub fn new(matrix: DMatrix<f64>, rhs: DVector<f64>) -> Result<Self> {
        let (p, r) = matrix.shape();
        if r == 0 || r > p {
            return Err(Error::Dimension(format!(
                "M must be p x r with 1 <= r <= p, got {p}x{r}"
            )));
        }
        if rhs.len() != r {
            return Err(Error::Dimension(format!(
                "m has length {}, M has {r} columns",
                rhs.len()
            )));
        }
        if matrix.iter().chain(rhs.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Domain("hypothesis entries must be finite".into()));
        }
        let sv = matrix.singular_values();
        let smax = sv.max();
        let rank = sv.iter().filter(|&&s| s > RANK_TOL * smax.max(1.0)).count();
        if rank < r {
            return Err(Error::Domain(format!(
                "M has rank {rank}, needs full column rank {r}"
            )));
        }
        Ok(Self { matrix, rhs })
    }

    /// H₀: β_j = value, a single coordinate of the row-major parameter vector.
    pub fn coordinate(num_params: usize, index: usize, value: f64) -> Result<Self> {
        if index >= num_params {
            return Err(Error::Dimension(format!(
                "coordinate {index} out of range for {num_params} parameters"
            )));
        }
        let mut m = DMatrix::zeros(num_params, 1);
        m[(index, 0)] = 1.0;
        Self::new(m, DVector::from_element(1, value))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn rhs(&self) -> &DVector<f64> {
        &self.rhs
    }

    pub fn num_params(&self) -> usize {
        self.matrix.nrows()
    }

    /// r, the number of restrictions.
    pub fn df(&self) -> usize {
        self.matrix.ncols()
    }

    /// Mᵀβ − m.
    pub fn discrepancy(&self, beta: &[f64]) -> Result<DVector<f64>> {
        if beta.len() != self.num_params() {
            return Err(Error::Dimension(format!(
                "parameter vector has length {}, hypothesis expects {}",
                beta.len(),
                self.num_params()
            )));
        }
        Ok(self.matrix.tr_mul(&DVector::from_column_slice(beta)) - &self.rhs)
    }

    /// Solves (MᵀVM) z = rhs, failing when MᵀVM is singular or ill-conditioned.
    fn solve_middle(&self, v: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        let p = self.num_params();
        if v.shape() != (p, p) {
            return Err(Error::Dimension(format!(
                "V must be {p}x{p}, got {}x{}",
                v.nrows(),
                v.ncols()
            )));
        }
        let middle = self.matrix.transpose() * v * &self.matrix;
        let condition = condition_number(&middle);
        if !(condition <= MAX_CONDITION) {
            let sv = middle.singular_values();
            let smax = sv.max();
            let rank = sv.iter().filter(|&&s| s > smax / MAX_CONDITION).count();
            return Err(Error::Singular(format!(
                "MᵀVM has numerical rank {rank} of {} (condition {condition:.3e})",
                self.df()
            )));
        }
        middle
            .lu()
            .solve(rhs)
            .ok_or_else(|| Error::Singular("MᵀVM is not invertible".into()))
    }

    fn quadratic_form(&self, v: &DMatrix<f64>, diff: &DVector<f64>) -> Result<f64> {
        let z = self.solve_middle(v, diff)?;
        Ok(diff.dot(&z).max(0.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelDecision {
    pub alpha: f64,
    pub critical_value: f64,
    pub reject: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaldReport {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    pub reject_at: Vec<LevelDecision>,
}

/// ℓ*(β₁) = (Mᵀβ₁ − m)ᵀ(MᵀVM)⁻¹(Mᵀβ₁ − m).
pub fn ell_star(beta1: &[f64], hyp: &LinearHypothesis, v: &DMatrix<f64>) -> Result<f64> {
    let diff = hyp.discrepancy(beta1)?;
    hyp.quadratic_form(v, &diff)
}

/// σ²_W(β⁰) = 4 ℓ*(β⁰).
pub fn sigma_w_sq(beta0: &[f64], hyp: &LinearHypothesis, v: &DMatrix<f64>) -> Result<f64> {
    Ok(4.0 * ell_star(beta0, hyp, v)?)
}

/// W_n = n (Mᵀβ − m)ᵀ[MᵀVM]⁻¹(Mᵀβ − m).
pub fn wald_statistic(
    beta: &[f64],
    v: &DMatrix<f64>,
    n: usize,
    hyp: &LinearHypothesis,
) -> Result<f64> {
    Ok(n as f64 * ell_star(beta, hyp, v)?)
}

fn decisions(statistic: f64, df: usize, alphas: &[f64]) -> Result<Vec<LevelDecision>> {
    alphas
        .iter()
        .map(|&alpha| {
            let critical_value = chi2_upper_quantile(alpha, df as f64)?;
            Ok(LevelDecision {
                alpha,
                critical_value,
                reject: statistic > critical_value,
            })
        })
        .collect()
}

/// Wald-type test from raw pieces; no convergence check.
pub fn wald_from_parts(
    beta: &[f64],
    v: &DMatrix<f64>,
    n: usize,
    hyp: &LinearHypothesis,
    alphas: &[f64],
) -> Result<WaldReport> {
    let statistic = wald_statistic(beta, v, n, hyp)?;
    let df = hyp.df();
    Ok(WaldReport {
        statistic,
        df,
        p_value: chi2_sf(statistic, df as f64).clamp(0.0, 1.0),
        reject_at: decisions(statistic, df, alphas)?,
    })
}

/// Rejects H₀ at level α iff W_n > χ²_{r,α}. Refuses non-converged fits.
pub fn wald_test(fit: &FitResult, hyp: &LinearHypothesis, alphas: &[f64]) -> Result<WaldReport> {
    if !fit.converged {
        return Err(Error::NotConverged);
    }
    wald_from_parts(fit.beta_hat.flat(), &fit.v_hat, fit.n_clusters, hyp, alphas)
}

/// Π(n) = 1 − Φ((χ²_{r,α}/√n − √n ℓ*)/σ_W) from scalar ingredients.
pub fn power_from_parts(ell: f64, sigma_w: f64, n: f64, alpha: f64, df: usize) -> Result<f64> {
    if !(sigma_w > 0.0) {
        return Err(Error::PowerAtNull);
    }
    if !(n > 0.0) {
        return Err(Error::Domain(format!(
            "sample size must be positive, got {n}"
        )));
    }
    let crit = chi2_upper_quantile(alpha, df as f64)?;
    let root_n = n.sqrt();
    Ok(1.0 - normal_cdf((crit / root_n - root_n * ell) / sigma_w))
}

/// Asymptotic power of the level-α test when β⁰ is the true parameter.
pub fn approximate_power(
    beta0: &[f64],
    hyp: &LinearHypothesis,
    v: &DMatrix<f64>,
    n: usize,
    alpha: f64,
) -> Result<f64> {
    let ell = ell_star(beta0, hyp, v)?;
    power_from_parts(ell, (4.0 * ell).sqrt(), n as f64, alpha, hyp.df())
}

/// n = ⌊(A + B + √(A(A+2B)))/(2ℓ*²)⌋ + 1 with A = σ²_W (Φ⁻¹(1−π⁰))², B = 2ℓ*χ²_{r,α}.
pub fn sample_size_from_parts(
    ell: f64,
    sigma_w_sq: f64,
    alpha: f64,
    df: usize,
    target_power: f64,
) -> Result<u64> {
    if !(ell > 0.0) {
        return Err(Error::PowerAtNull);
    }
    if !(target_power > 0.0 && target_power < 1.0) {
        return Err(Error::Domain(format!(
            "target power must lie in (0, 1), got {target_power}"
        )));
    }
    let z = normal_quantile(1.0 - target_power)?;
    let crit = chi2_upper_quantile(alpha, df as f64)?;
    let a = sigma_w_sq * z * z;
    let b = 2.0 * ell * crit;
    let n = (a + b + (a * (a + 2.0 * b)).sqrt()) / (2.0 * ell * ell);
    Ok(n.floor() as u64 + 1)
}

pub fn required_sample_size(
    beta0: &[f64],
    hyp: &LinearHypothesis,
    v: &DMatrix<f64>,
    alpha: f64,
    target_power: f64,
) -> Result<u64> {
    let ell = ell_star(beta0, hyp, v)?;
    sample_size_from_parts(ell, 4.0 * ell, alpha, hyp.df(), target_power)
}

/// Δ = dᵀM[MᵀVM]⁻¹Mᵀd for alternatives β_n = β₀ + d/√n.
pub fn noncentrality(hyp: &LinearHypothesis, v: &DMatrix<f64>, d_vec: &[f64]) -> Result<f64> {
    if d_vec.len() != hyp.num_params() {
        return Err(Error::Dimension("direction has the wrong length".into()));
    }
    let shift = hyp.matrix().tr_mul(&DVector::from_column_slice(d_vec));
    hyp.quadratic_form(v, &shift)
}

/// Noncentrality in the shift form Mᵀβ_n − m = δ/√n, i.e. δᵀ[MᵀVM]⁻¹δ.
pub fn noncentrality_from_shift(
    hyp: &LinearHypothesis,
    v: &DMatrix<f64>,
    delta: &[f64],
) -> Result<f64> {
    if delta.len() != hyp.df() {
        return Err(Error::Dimension(
            "shift must have one entry per restriction".into(),
        ));
    }
    hyp.quadratic_form(v, &DVector::from_column_slice(delta))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoodnessOfFit {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
}

/// Pearson goodness-of-fit of `values` to χ²_df using `bins` equiprobable cells.
pub fn chi2_goodness_of_fit(values: &[f64], df: usize, bins: usize) -> Result<GoodnessOfFit> {
    if bins < 2 || values.is_empty() {
        return Err(Error::InsufficientData(
            "need at least two bins and one value".into(),
        ));
    }
    let mut edges = Vec::with_capacity(bins - 1);
    for b in 1..bins {
        // upper-tail level (bins − b)/bins gives the b-th cut point
        edges.push(chi2_upper_quantile(
            (bins - b) as f64 / bins as f64,
            df as f64,
        )?);
    }
    let mut counts = vec![0usize; bins];
    for &v in values {
        let cell = edges.partition_point(|&e| e < v);
        counts[cell] += 1;
    }
    let expected = values.len() as f64 / bins as f64;
    let statistic: f64 = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    Ok(GoodnessOfFit {
        statistic,
        df: bins - 1,
        p_value: chi2_sf(statistic, (bins - 1) as f64),
    })
}
