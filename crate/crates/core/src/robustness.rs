//! Influence-function diagnostics for the PMφE functional and for the
//! Wald-type test functional built on it.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::divergence::CressieReadLambda;
use crate::error::{Error, Result};
use crate::estimator::{condition_number, j_hat, MAX_CONDITION};
use crate::inference::{noncentrality_from_shift, LinearHypothesis};
use crate::model::{kron_into, link, BetaMatrix};
use crate::survey::{ClusterRecord, SurveyDataset};

/// Point-mass contamination of cluster (h₀, i₀) at the degenerate outcome t.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContaminationPoint {
    pub target_stratum: i64,
    pub target_cluster: i64,
    /// 0-based category carrying the single 1 of t.
    pub category: usize,
}

impl ContaminationPoint {
    pub fn new(target_stratum: i64, target_cluster: i64, category: usize) -> Self {
        Self {
            target_stratum,
            target_cluster,
            category,
        }
    }

    /// Builds the point from an explicit 0/1 indicator vector.
    pub fn from_indicator(target_stratum: i64, target_cluster: i64, t: &[u8]) -> Result<Self> {
        if t.iter().any(|&v| v > 1) || t.iter().filter(|&&v| v == 1).count() != 1 {
            return Err(Error::Domain(
                "t must be a 0/1 vector with exactly one 1".into(),
            ));
        }
        let category = t.iter().position(|&v| v == 1).unwrap_or(0);
        Ok(Self::new(target_stratum, target_cluster, category))
    }

    pub fn indicator(&self, num_categories: usize) -> Vec<u8> {
        (0..num_categories)
            .map(|s| u8::from(s == self.category))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceReport {
    pub lambda: CressieReadLambda,
    pub point: ContaminationPoint,
    pub if_vector: Vec<f64>,
    pub u_star: Vec<f64>,
    pub psi: DMatrix<f64>,
    pub if2_wald: Option<f64>,
}

impl InfluenceReport {
    pub fn with_wald(mut self, hyp: &LinearHypothesis, v: &DMatrix<f64>) -> Result<Self> {
        self.if2_wald = Some(influence2_wald(&self.if_vector, hyp, v)?);
        Ok(self)
    }

    pub fn norm(&self) -> f64 {
        self.if_vector.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

fn check_shapes(data: &SurveyDataset, beta0: &BetaMatrix) -> Result<()> {
    if beta0.categories() + 1 != data.num_categories()
        || beta0.covariates() != data.num_covariates()
    {
        return Err(Error::Dimension(
            "coefficient shape does not match the dataset".into(),
        ));
    }
    Ok(())
}

/// u* = w m Δ*(π) diag^{−(λ+1)}(π) δ_t ⊗ x, which collapses to
/// w m π_t^{−λ} (δ*_t − π*) ⊗ x. δ_t^{λ+1} = δ_t since t is binary.
pub fn contaminated_score(
    lambda: CressieReadLambda,
    record: &ClusterRecord,
    beta0: &BetaMatrix,
    category: usize,
) -> Result<Vec<f64>> {
    let pi = link(beta0, &record.covariates)?.0;
    if category >= pi.len() {
        return Err(Error::Dimension(format!(
            "category {category} out of range for {} categories",
            pi.len()
        )));
    }
    let d = pi.len() - 1;
    let scale = record.weight * record.size as f64 * pi[category].powf(-lambda.value());
    let v: Vec<f64> = (0..d)
        .map(|r| scale * (f64::from(u8::from(r == category)) - pi[r]))
        .collect();
    let mut out = vec![0.0; d * record.covariates.len()];
    kron_into(&v, &record.covariates, &mut out);
    Ok(out)
}

/// Ψ = (λ+1) Σ_hi w m Δ(π*_hi) ⊗ x xᵀ. The second-derivative term of the
/// general expression vanishes because diag^{−(λ+1)}(π)π^{λ+1} = 1 and Σπ = 1.
pub fn psi_matrix(
    lambda: CressieReadLambda,
    data: &SurveyDataset,
    beta0: &BetaMatrix,
) -> Result<DMatrix<f64>> {
    check_shapes(data, beta0)?;
    Ok(j_hat(data, beta0)? * ((lambda.value() + 1.0) * data.n_clusters() as f64))
}

/// IF = Ψ⁻¹ u* for single-cluster point contamination at β⁰.
pub fn influence(
    data: &SurveyDataset,
    beta0: &BetaMatrix,
    lambda: CressieReadLambda,
    point: &ContaminationPoint,
) -> Result<InfluenceReport> {
    check_shapes(data, beta0)?;
    let idx = data
        .position(point.target_stratum, point.target_cluster)
        .ok_or_else(|| {
            Error::Domain(format!(
                "cluster ({}, {}) is not in the dataset",
                point.target_stratum, point.target_cluster
            ))
        })?;
    let u_star = contaminated_score(lambda, &data.records()[idx], beta0, point.category)?;
    let psi = psi_matrix(lambda, data, beta0)?;
    let condition = condition_number(&psi);
    if !(condition <= MAX_CONDITION) {
        return Err(Error::IllConditioned { condition });
    }
    let if_vector = psi
        .clone()
        .lu()
        .solve(&DVector::from_column_slice(&u_star))
        .ok_or_else(|| Error::Singular("Ψ is not invertible".into()))?;
    Ok(InfluenceReport {
        lambda,
        point: point.clone(),
        if_vector: if_vector.iter().copied().collect(),
        u_star,
        psi,
        if2_wald: None,
    })
}

/// IF² = 2 IFᵀ M (MᵀVM)⁻¹ Mᵀ IF.
pub fn influence2_wald(if_vector: &[f64], hyp: &LinearHypothesis, v: &DMatrix<f64>) -> Result<f64> {
    if if_vector.len() != hyp.num_params() {
        return Err(Error::Dimension(
            "IF length does not match the hypothesis".into(),
        ));
    }
    let shift = hyp.matrix().tr_mul(&DVector::from_column_slice(if_vector));
    Ok(2.0 * noncentrality_from_shift(hyp, v, shift.as_slice())?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeveragePoint {
    pub scale: f64,
    pub if_norm: f64,
}

/// ‖IF‖ as covariate `coordinate` of the contaminated cluster is scaled by
/// 10^j for each j in `exponents`.
pub fn leverage_profile(
    data: &SurveyDataset,
    beta0: &BetaMatrix,
    lambda: CressieReadLambda,
    point: &ContaminationPoint,
    coordinate: usize,
    exponents: &[i32],
) -> Result<Vec<LeveragePoint>> {
    let idx = data
        .position(point.target_stratum, point.target_cluster)
        .ok_or_else(|| Error::Domain("contaminated cluster is not in the dataset".into()))?;
    if coordinate >= data.num_covariates() {
        return Err(Error::Dimension(format!(
            "covariate {coordinate} out of range"
        )));
    }
    exponents
        .iter()
        .map(|&j| {
            let scale = 10f64.powi(j);
            let mut records = data.records().to_vec();
            records[idx].covariates[coordinate] *= scale;
            let shifted = SurveyDataset::new(records)?;
            let report = influence(&shifted, beta0, lambda, point)?;
            Ok(LeveragePoint {
                scale,
                if_norm: report.norm(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn lam(v: f64) -> CressieReadLambda {
        CressieReadLambda::new(v).unwrap()
    }

    fn record(cluster: i64, x: Vec<f64>, counts: Vec<u64>) -> ClusterRecord {
        ClusterRecord {
            stratum: 1,
            cluster,
            weight: 1.0,
            size: counts.iter().sum(),
            counts,
            covariates: x,
        }
    }

    #[test]
    fn hand_evaluated_score_at_even_split() {
        let rec = record(1, vec![1.0], vec![1, 0]);
        let beta = BetaMatrix::from_flat(1, 1, vec![0.0]).unwrap();
        let u = contaminated_score(lam(0.0), &rec, &beta, 0).unwrap();
        assert_abs_diff_eq!(u[0], 0.5, epsilon = 1e-15);
        // baseline outcome flips the sign
        let u = contaminated_score(lam(0.0), &rec, &beta, 1).unwrap();
        assert_abs_diff_eq!(u[0], -0.5, epsilon = 1e-15);
        // π_t^{−λ} factor: 0.5^{0.5}·0.5
        let u = contaminated_score(lam(-0.5), &rec, &beta, 0).unwrap();
        assert_abs_diff_eq!(u[0], 0.5f64.sqrt() * 0.5, epsilon = 1e-15);
    }

    #[test]
    fn score_matches_matrix_form() {
        // Δ*(π) diag^{−(λ+1)}(π) δ_t ⊗ x built explicitly
        let x = vec![1.0, 0.4, -1.3];
        let rec = record(1, x.clone(), vec![4, 3, 3]);
        let beta = BetaMatrix::from_flat(2, 3, vec![0.2, -0.5, 0.3, -0.4, 0.7, 0.1]).unwrap();
        let pi = link(&beta, &x).unwrap();
        let delta = crate::model::delta_matrix(&pi);
        for &l in &[-0.5, 0.0, 2.0 / 3.0] {
            for t in 0..3 {
                let mut rhs = [0.0; 3];
                rhs[t] = pi.0[t].powf(-(l + 1.0));
                let v: Vec<f64> = (0..2)
                    .map(|r| (0..3).map(|s| delta[(r, s)] * rhs[s]).sum::<f64>() * 10.0)
                    .collect();
                let expected: Vec<f64> = v
                    .iter()
                    .flat_map(|&vr| x.iter().map(move |&xj| vr * xj))
                    .collect();
                let got = contaminated_score(lam(l), &rec, &beta, t).unwrap();
                for (a, b) in got.iter().zip(&expected) {
                    assert_abs_diff_eq!(a, b, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn indicator_round_trip_and_validation() {
        let p = ContaminationPoint::from_indicator(2, 7, &[0, 1, 0]).unwrap();
        assert_eq!(p.category, 1);
        assert_eq!(p.indicator(3), vec![0, 1, 0]);
        assert!(ContaminationPoint::from_indicator(2, 7, &[1, 1, 0]).is_err());
        assert!(ContaminationPoint::from_indicator(2, 7, &[0, 0, 0]).is_err());
        assert!(ContaminationPoint::from_indicator(2, 7, &[0, 2, 0]).is_err());
    }

    fn small_data() -> SurveyDataset {
        let xs = [-1.2, -0.6, -0.1, 0.3, 0.8, 1.5, 0.0, 2.0];
        SurveyDataset::new(
            xs.iter()
                .enumerate()
                .map(|(i, &x)| record(i as i64, vec![1.0, x], vec![2, 3, 5]))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn influence2_reductions() {
        let v = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let hyp = LinearHypothesis::coordinate(2, 0, 5.0).unwrap();
        assert_eq!(influence2_wald(&[0.0, 0.0], &hyp, &v).unwrap(), 0.0);
        assert_eq!(influence2_wald(&[0.0, 3.0], &hyp, &v).unwrap(), 0.0);
        assert_abs_diff_eq!(
            influence2_wald(&[1.5, 3.0], &hyp, &v).unwrap(),
            2.0 * 2.25 / 2.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn influence_report_attaches_wald() {
        let data = small_data();
        let beta = BetaMatrix::from_flat(2, 2, vec![0.1, -0.4, 0.3, 0.2]).unwrap();
        let report = influence(&data, &beta, lam(-0.3), &ContaminationPoint::new(1, 3, 2)).unwrap();
        let psi_inv_u = report
            .psi
            .clone()
            .lu()
            .solve(&DVector::from_vec(report.u_star.clone()))
            .unwrap();
        for (a, b) in psi_inv_u.iter().zip(&report.if_vector) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        let v = DMatrix::identity(4, 4);
        let hyp = LinearHypothesis::coordinate(4, 1, 0.0).unwrap();
        let report = report.with_wald(&hyp, &v).unwrap();
        assert_abs_diff_eq!(
            report.if2_wald.unwrap(),
            2.0 * report.if_vector[1].powi(2),
            epsilon = 1e-12
        );
    }

    #[test]
    fn psi_scales_with_lambda_plus_one() {
        let data = small_data();
        let beta = BetaMatrix::from_flat(2, 2, vec![0.1, -0.4, 0.3, 0.2]).unwrap();
        let base = psi_matrix(lam(0.0), &data, &beta).unwrap();
        let other = psi_matrix(lam(2.0 / 3.0), &data, &beta).unwrap();
        assert!((other - base * (5.0 / 3.0)).abs().max() < 1e-12);
    }

    #[test]
    fn unknown_cluster_is_rejected() {
        let data = small_data();
        let beta = BetaMatrix::zeros(2, 2);
        assert!(influence(&data, &beta, lam(0.0), &ContaminationPoint::new(9, 0, 0)).is_err());
        assert!(influence(&data, &beta, lam(0.0), &ContaminationPoint::new(1, 0, 5)).is_err());
    }

    #[test]
    fn leverage_plateau_versus_growth() {
        let data = small_data();
        let beta = BetaMatrix::from_flat(2, 2, vec![0.0, -0.9, 0.6, -1.2]).unwrap();
        // large positive x pushes mass to the baseline; category 1 is least likely
        let point = ContaminationPoint::new(1, 4, 1);
        let exps: Vec<i32> = (0..=6).collect();
        let hellinger = leverage_profile(&data, &beta, lam(-0.5), &point, 1, &exps).unwrap();
        let pmle = leverage_profile(&data, &beta, lam(0.0), &point, 1, &exps).unwrap();
        for w in pmle[3..].windows(2) {
            assert!(w[1].if_norm > w[0].if_norm);
        }
        let sup = hellinger.iter().map(|p| p.if_norm).fold(0.0, f64::max);
        let early = hellinger[..=3]
            .iter()
            .map(|p| p.if_norm)
            .fold(0.0, f64::max);
        assert!(hellinger[3..].iter().all(|p| p.if_norm <= early));
        assert!(sup < pmle[6].if_norm);
        for (h, p) in hellinger[3..].iter().zip(&pmle[3..]) {
            assert!(h.if_norm < p.if_norm);
        }
    }
}
