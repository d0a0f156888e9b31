//! Baseline-category multinomial logit link.
//!
//! Category d+1 is the baseline. Parameters are flattened row-major: all
//! k+1 coefficients of category 1, then category 2, and so on.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor applied to model probabilities before logs and negative powers.
pub const PROB_FLOOR: f64 = 1e-300;

/// d×(k+1) coefficient matrix, row r holding β_r.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaMatrix {
    categories: usize,
    covariates: usize,
    values: Vec<f64>,
}

impl BetaMatrix {
    pub fn zeros(categories: usize, covariates: usize) -> Self {
        Self {
            categories,
            covariates,
            values: vec![0.0; categories * covariates],
        }
    }

    pub fn from_flat(categories: usize, covariates: usize, values: Vec<f64>) -> Result<Self> {
        if categories == 0 || covariates == 0 {
            return Err(Error::Dimension(
                "coefficient matrix must be at least 1x1".into(),
            ));
        }
        if values.len() != categories * covariates {
            return Err(Error::Dimension(format!(
                "expected {} coefficients for a {categories}x{covariates} matrix, got {}",
                categories * covariates,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("coefficients must be finite".into()));
        }
        Ok(Self {
            categories,
            covariates,
            values,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let covariates = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != covariates) {
            return Err(Error::Dimension(
                "coefficient rows have unequal lengths".into(),
            ));
        }
        Self::from_flat(rows.len(), covariates, rows.concat())
    }

    pub fn from_vector(categories: usize, covariates: usize, v: &DVector<f64>) -> Result<Self> {
        Self::from_flat(categories, covariates, v.iter().copied().collect())
    }

    /// d, the number of non-baseline categories.
    pub fn categories(&self) -> usize {
        self.categories
    }

    /// k+1.
    pub fn covariates(&self) -> usize {
        self.covariates
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn flat(&self) -> &[f64] {
        &self.values
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.values
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.values)
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.covariates..(r + 1) * self.covariates]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.values
            .chunks(self.covariates)
            .map(<[f64]>::to_vec)
            .collect()
    }

    pub fn get(&self, category: usize, covariate: usize) -> f64 {
        self.values[category * self.covariates + covariate]
    }

    pub fn set(&mut self, category: usize, covariate: usize, value: f64) {
        self.values[category * self.covariates + covariate] = value;
    }
}

/// Model probability vector π(β) over the d+1 categories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryProbs(pub Vec<f64>);

impl CategoryProbs {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Unchecked softmax kernel: writes π into `out` (length d+1).
pub(crate) fn probs_into(beta: &[f64], covariates: usize, x: &[f64], out: &mut [f64]) {
    let d = out.len() - 1;
    let mut max_eta = 0.0_f64; // baseline η = 0
    for r in 0..d {
        let eta: f64 = beta[r * covariates..(r + 1) * covariates]
            .iter()
            .zip(x)
            .map(|(b, v)| b * v)
            .sum();
        out[r] = eta;
        max_eta = max_eta.max(eta);
    }
    out[d] = 0.0;
    let mut total = 0.0;
    for p in out.iter_mut() {
        *p = (*p - max_eta).exp();
        total += *p;
    }
    for p in out.iter_mut() {
        *p = (*p / total).max(PROB_FLOOR);
    }
}

fn check_covariates(beta: &BetaMatrix, x: &[f64]) -> Result<()> {
    if x.len() != beta.covariates() {
        return Err(Error::Dimension(format!(
            "covariate vector has length {}, coefficients expect {}",
            x.len(),
            beta.covariates()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) || beta.flat().iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite coefficient or covariate".into()));
    }
    Ok(())
}

/// π_r = exp(xᵀβ_r)/(1+Σ_l exp(xᵀβ_l)), π_{d+1} = 1/(1+Σ_l exp(xᵀβ_l)).
pub fn link(beta: &BetaMatrix, x: &[f64]) -> Result<CategoryProbs> {
    check_covariates(beta, x)?;
    let mut out = vec![0.0; beta.categories() + 1];
    probs_into(beta.flat(), beta.covariates(), x, &mut out);
    Ok(CategoryProbs(out))
}

/// Δ(π) = diag(π) − ππᵀ.
pub fn delta_matrix(pi: &CategoryProbs) -> DMatrix<f64> {
    let p = pi.as_slice();
    let n = p.len();
    DMatrix::from_fn(n, n, |a, b| {
        if a == b {
            p[a] - p[a] * p[b]
        } else {
            -p[a] * p[b]
        }
    })
}

/// ∂πᵀ/∂β = (I_d, 0_d) Δ(π) ⊗ x, a d(k+1)×(d+1) matrix.
pub fn dpi_dbeta(beta: &BetaMatrix, x: &[f64]) -> Result<DMatrix<f64>> {
    let pi = link(beta, x)?;
    let delta = delta_matrix(&pi);
    let kp1 = beta.covariates();
    let d = beta.categories();
    Ok(DMatrix::from_fn(d * kp1, d + 1, |row, s| {
        let (r, j) = (row / kp1, row % kp1);
        delta[(r, s)] * x[j]
    }))
}

/// Kronecker product of a length-d vector with x, row-major over (r, j).
pub(crate) fn kron_into(v: &[f64], x: &[f64], out: &mut [f64]) {
    let kp1 = x.len();
    for (r, &vr) in v.iter().enumerate() {
        for (j, &xj) in x.iter().enumerate() {
            out[r * kp1 + j] = vr * xj;
        }
    }
}
