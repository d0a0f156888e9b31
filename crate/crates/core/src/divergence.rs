//! Cressie–Read φ-divergence between the empirical and model probability
//! vectors, and the matching per-cluster estimating functions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{dpi_dbeta, kron_into, probs_into, BetaMatrix};
use crate::survey::{ClusterRecord, SurveyDataset};

/// A convex generator φ with φ(1) = 0 and φ''(1) > 0.
pub trait PhiFunction {
    fn phi(&self, x: f64) -> f64;
    fn phi_prime(&self, x: f64) -> f64;
    fn phi_second_at_one(&self) -> f64;

    /// f(x) = x φ'(x) − φ(x), the weight applied to ∂π/∂β in the score.
    fn score_weight(&self, x: f64) -> f64 {
        if x == 0.0 {
            -self.phi(0.0)
        } else {
            x * self.phi_prime(x) - self.phi(x)
        }
    }
}

/// Cressie–Read tuning parameter λ > −1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct CressieReadLambda(f64);

impl CressieReadLambda {
    pub fn new(lambda: f64) -> Result<Self> {
        if !lambda.is_finite() || lambda <= -1.0 {
            return Err(Error::Domain(format!(
                "Cressie-Read lambda must be finite and > -1, got {lambda}"
            )));
        }
        Ok(Self(lambda))
    }

    pub const KULLBACK_LEIBLER: Self = Self(0.0);

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_kl(self) -> bool {
        self.0 == 0.0
    }
}

impl TryFrom<f64> for CressieReadLambda {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<CressieReadLambda> for f64 {
    fn from(l: CressieReadLambda) -> f64 {
        l.0
    }
}

impl PhiFunction for CressieReadLambda {
    fn phi(&self, x: f64) -> f64 {
        let l = self.0;
        if x == 0.0 {
            return 1.0 / (1.0 + l);
        }
        if l == 0.0 {
            x * x.ln() - x + 1.0
        } else {
            // x^{λ+1} − x − λ(x−1), with x^{λ+1} − x = x·expm1(λ ln x)
            (x * (l * x.ln()).exp_m1() - l * (x - 1.0)) / (l * (1.0 + l))
        }
    }

    fn phi_prime(&self, x: f64) -> f64 {
        let l = self.0;
        if l == 0.0 {
            x.ln()
        } else {
            (l * x.ln()).exp_m1() / l
        }
    }

    fn phi_second_at_one(&self) -> f64 {
        1.0
    }
}

/// φ_λ(x) for x ≥ 0.
pub fn phi(lambda: CressieReadLambda, x: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(Error::Domain(format!(
            "phi is defined on [0, inf), got {x}"
        )));
    }
    Ok(lambda.phi(x))
}

fn check_shapes(data: &SurveyDataset, beta: &BetaMatrix) -> Result<()> {
    if beta.categories() + 1 != data.num_categories() || beta.covariates() != data.num_covariates()
    {
        return Err(Error::Dimension(format!(
            "coefficients are {}x{}, dataset needs {}x{}",
            beta.categories(),
            beta.covariates(),
            data.num_categories() - 1,
            data.num_covariates()
        )));
    }
    Ok(())
}

/// Per-cluster contribution w m Σ_s π_s φ(ŷ_s/(m π_s)), without the 1/τ.
fn cluster_divergence(lambda: CressieReadLambda, rec: &ClusterRecord, pi: &[f64]) -> f64 {
    if rec.weight == 0.0 {
        return 0.0;
    }
    let m = rec.size as f64;
    let inner: f64 = rec
        .counts
        .iter()
        .zip(pi)
        .map(|(&y, &p)| p * lambda.phi(y as f64 / (m * p)))
        .sum();
    rec.weight * m * inner
}

/// u_{φλ,hi}: writes the d(k+1) estimating-function contribution into `out`.
/// `resid` is scratch of length d+1.
///
/// λ = 0 uses the pseudo-likelihood score w(ŷ* − mπ*) ⊗ x directly; other
/// values use w m/(λ+1) (a_r − π_r Σ_s a_s) ⊗ x with
/// a_s = (ŷ_s/m)^{λ+1} π_s^{−λ}, which is the same quantity as
/// w/((λ+1)m^λ) Δ*(π) diag^{−(λ+1)}(π) ŷ^{λ+1} ⊗ x.
fn cluster_score_into(
    lambda: CressieReadLambda,
    rec: &ClusterRecord,
    pi: &[f64],
    resid: &mut [f64],
    out: &mut [f64],
) {
    let d = pi.len() - 1;
    let m = rec.size as f64;
    let w = rec.weight;
    if lambda.is_kl() {
        for r in 0..d {
            resid[r] = w * (rec.counts[r] as f64 - m * pi[r]);
        }
    } else {
        let l = lambda.value();
        let mut total = 0.0;
        for (s, &y) in rec.counts.iter().enumerate() {
            let v = if y == 0 {
                0.0
            } else {
                let frac = y as f64 / m;
                frac * (l * (frac / pi[s]).ln()).exp()
            };
            resid[s] = v;
            total += v;
        }
        let scale = w * m / (l + 1.0);
        for r in 0..d {
            resid[r] = scale * (resid[r] - pi[r] * total);
        }
    }
    kron_into(&resid[..d], &rec.covariates, out);
}

pub fn divergence(
    lambda: CressieReadLambda,
    data: &SurveyDataset,
    beta: &BetaMatrix,
) -> Result<f64> {
    check_shapes(data, beta)?;
    let mut pi = vec![0.0; data.num_categories()];
    let mut total = 0.0;
    for rec in data.records() {
        probs_into(beta.flat(), beta.covariates(), &rec.covariates, &mut pi);
        total += cluster_divergence(lambda, rec, &pi);
    }
    Ok(total / data.tau())
}

pub fn estimating_function_cluster(
    lambda: CressieReadLambda,
    record: &ClusterRecord,
    beta: &BetaMatrix,
) -> Result<Vec<f64>> {
    if record.counts.len() != beta.categories() + 1 || record.covariates.len() != beta.covariates()
    {
        return Err(Error::Dimension(
            "cluster record does not match coefficient shape".into(),
        ));
    }
    let mut pi = vec![0.0; record.counts.len()];
    probs_into(beta.flat(), beta.covariates(), &record.covariates, &mut pi);
    let mut resid = vec![0.0; beta.categories() + 1];
    let mut out = vec![0.0; beta.len()];
    cluster_score_into(lambda, record, &pi, &mut resid, &mut out);
    Ok(out)
}

/// The pseudo-likelihood score u_hi = w(ŷ* − mπ*) ⊗ x.
pub fn kl_score_cluster(record: &ClusterRecord, beta: &BetaMatrix) -> Result<Vec<f64>> {
    estimating_function_cluster(CressieReadLambda::KULLBACK_LEIBLER, record, beta)
}

/// Σ_hi u_{φλ,hi}(β), accumulated in dataset order.
pub fn estimating_function(
    lambda: CressieReadLambda,
    data: &SurveyDataset,
    beta: &BetaMatrix,
) -> Result<Vec<f64>> {
    check_shapes(data, beta)?;
    Ok(objective_and_score(lambda, data, beta.flat(), beta.covariates()).1)
}

/// Objective d_φ and score Σ u together. Note −τ ∇_β d_φ = Σ u exactly,
/// since φ''(1) = 1 throughout the Cressie–Read family.
pub(crate) fn objective_and_score(
    lambda: CressieReadLambda,
    data: &SurveyDataset,
    beta: &[f64],
    covariates: usize,
) -> (f64, Vec<f64>) {
    let ncat = data.num_categories();
    let mut pi = vec![0.0; ncat];
    let mut resid = vec![0.0; ncat];
    let mut term = vec![0.0; beta.len()];
    let mut score = vec![0.0; beta.len()];
    let mut objective = 0.0;
    for rec in data.records() {
        if rec.weight == 0.0 {
            continue;
        }
        probs_into(beta, covariates, &rec.covariates, &mut pi);
        objective += cluster_divergence(lambda, rec, &pi);
        cluster_score_into(lambda, rec, &pi, &mut resid, &mut term);
        for (s, t) in score.iter_mut().zip(&term) {
            *s += t;
        }
    }
    (objective / data.tau(), score)
}

pub(crate) fn score_only(
    lambda: CressieReadLambda,
    data: &SurveyDataset,
    beta: &[f64],
    covariates: usize,
) -> Vec<f64> {
    let ncat = data.num_categories();
    let mut pi = vec![0.0; ncat];
    let mut resid = vec![0.0; ncat];
    let mut term = vec![0.0; beta.len()];
    let mut score = vec![0.0; beta.len()];
    for rec in data.records() {
        if rec.weight == 0.0 {
            continue;
        }
        probs_into(beta, covariates, &rec.covariates, &mut pi);
        cluster_score_into(lambda, rec, &pi, &mut resid, &mut term);
        for (s, t) in score.iter_mut().zip(&term) {
            *s += t;
        }
    }
    score
}

pub(crate) fn objective_only(
    lambda: CressieReadLambda,
    data: &SurveyDataset,
    beta: &[f64],
    covariates: usize,
) -> f64 {
    let mut pi = vec![0.0; data.num_categories()];
    let mut total = 0.0;
    for rec in data.records() {
        if rec.weight == 0.0 {
            continue;
        }
        probs_into(beta, covariates, &rec.covariates, &mut pi);
        total += cluster_divergence(lambda, rec, &pi);
    }
    total / data.tau()
}

/// Generic form w m/φ''(1) · ∂πᵀ/∂β · f_φ(ŷ/m, β) for any φ.
pub fn estimating_function_cluster_generic<P: PhiFunction>(
    phi: &P,
    record: &ClusterRecord,
    beta: &BetaMatrix,
) -> Result<Vec<f64>> {
    let jac = dpi_dbeta(beta, &record.covariates)?;
    let mut pi = vec![0.0; record.counts.len()];
    probs_into(beta.flat(), beta.covariates(), &record.covariates, &mut pi);
    let m = record.size as f64;
    let f: Vec<f64> = record
        .counts
        .iter()
        .zip(&pi)
        .map(|(&y, &p)| phi.score_weight(y as f64 / (m * p)))
        .collect();
    let scale = record.weight * m / phi.phi_second_at_one();
    Ok((0..jac.nrows())
        .map(|row| scale * (0..jac.ncols()).map(|s| jac[(row, s)] * f[s]).sum::<f64>())
        .collect())
}
