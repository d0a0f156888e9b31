//! PMφE fitting and the sandwich covariance pieces Ĵₙ, Ĝₙ, V̂ₙ = Ĵₙ⁻¹ĜₙĴₙ⁻¹.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::divergence::{
    estimating_function_cluster, objective_and_score, objective_only, score_only, CressieReadLambda,
};
use crate::error::{Error, Result};
use crate::model::{probs_into, BetaMatrix};
use crate::survey::SurveyDataset;

/// Largest condition number accepted when inverting Ĵₙ.
pub const MAX_CONDITION: f64 = 1e12;

/// Largest |xᵀβ_r| before a fit is flagged as (quasi-)separated; fitted
/// probabilities are then within about e^-20 of 0 or 1.
const SEPARATION_THRESHOLD: f64 = 20.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    Zeros,
    /// Fit λ = 0 from zeros, then warm-start the requested λ from it.
    PmleFirst,
    User(Vec<f64>),
}

/// Which per-cluster score enters Ĝₙ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GScore {
    /// Pseudo-likelihood score w(ŷ* − mπ*) ⊗ x, whatever λ was fitted.
    #[default]
    Kl,
    /// The fitted λ's own estimating function.
    Lambda,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepControl {
    pub shrink: f64,
    pub min_step: f64,
    /// Armijo sufficient-decrease constant.
    pub armijo: f64,
}

impl Default for StepControl {
    fn default() -> Self {
        Self {
            shrink: 0.5,
            min_step: 1e-12,
            armijo: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub lambda: CressieReadLambda,
    pub max_iterations: usize,
    /// Convergence threshold on the ∞-norm of Σ_hi u_{φλ,hi}(β).
    pub gradient_tolerance: f64,
    pub step_control: StepControl,
    pub init: Init,
    pub g_score: GScore,
}

impl FitConfig {
    pub fn new(lambda: CressieReadLambda) -> Self {
        Self {
            lambda,
            max_iterations: 200,
            gradient_tolerance: 1e-8,
            step_control: StepControl::default(),
            init: Init::PmleFirst,
            g_score: GScore::Kl,
        }
    }

    pub fn with_init(mut self, init: Init) -> Self {
        self.init = init;
        self
    }

    pub fn with_tolerance(mut self, tol: f64) -> Self {
        self.gradient_tolerance = tol;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gradient_tolerance > 0.0) {
            return Err(Error::Domain("gradient tolerance must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::Domain("max_iterations must be at least 1".into()));
        }
        let sc = &self.step_control;
        if !(sc.shrink > 0.0 && sc.shrink < 1.0)
            || !(sc.min_step > 0.0)
            || !(sc.armijo > 0.0 && sc.armijo < 1.0)
        {
            return Err(Error::Domain("invalid step control parameters".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FitWarning {
    /// Linear predictors drifted to very large magnitudes while the objective
    /// flattened out; the estimate may not exist.
    Separation {
        max_abs_linear_predictor: f64,
    },
    /// The line search could not make progress before convergence.
    Stalled {
        step: f64,
    },
    IterationLimit {
        iterations: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub lambda: CressieReadLambda,
    pub beta_hat: BetaMatrix,
    /// ∞-norm of Σ_hi u_{φλ,hi}(β̂).
    pub score_norm: f64,
    /// d_φ(p̂, π(β̂)).
    pub objective: f64,
    pub j_hat: DMatrix<f64>,
    pub g_hat: DMatrix<f64>,
    pub v_hat: DMatrix<f64>,
    pub n_clusters: usize,
    pub converged: bool,
    pub iterations: usize,
    /// Objective value after each accepted step, starting at the initial point.
    pub objective_history: Vec<f64>,
    pub warnings: Vec<FitWarning>,
}

struct NewtonOutcome {
    beta: Vec<f64>,
    score_norm: f64,
    objective: f64,
    converged: bool,
    iterations: usize,
    history: Vec<f64>,
    stalled_at: Option<f64>,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

/// Hessian of d_φ by symmetric differences of the analytic gradient −Σu/τ.
fn fd_hessian(
    lambda: CressieReadLambda,
    data: &SurveyDataset,
    beta: &[f64],
    covariates: usize,
) -> DMatrix<f64> {
    let p = beta.len();
    let tau = data.tau();
    let mut hess = DMatrix::zeros(p, p);
    let mut probe = beta.to_vec();
    for j in 0..p {
        let h = 1e-5 * beta[j].abs().max(1.0);
        probe[j] = beta[j] + h;
        let up = score_only(lambda, data, &probe, covariates);
        probe[j] = beta[j] - h;
        let dn = score_only(lambda, data, &probe, covariates);
        probe[j] = beta[j];
        for i in 0..p {
            hess[(i, j)] = -(up[i] - dn[i]) / (2.0 * h * tau);
        }
    }
    (&hess + hess.transpose()) * 0.5
}

/// Solves (H + μI) step = −g, raising μ until the Cholesky factorisation succeeds.
fn newton_direction(hess: &DMatrix<f64>, grad: &DVector<f64>) -> DVector<f64> {
    let p = hess.nrows();
    let scale = hess
        .diagonal()
        .iter()
        .fold(0.0f64, |a, v| a.max(v.abs()))
        .max(1e-12);
    let mut mu = 0.0;
    loop {
        let shifted = hess + DMatrix::identity(p, p) * mu;
        if let Some(chol) = shifted.cholesky() {
            let step = chol.solve(&(-grad));
            if step.iter().all(|v| v.is_finite()) {
                return step;
            }
        }
        mu = if mu == 0.0 { 1e-10 * scale } else { mu * 10.0 };
        if mu > 1e20 * scale {
            return -grad.clone();
        }
    }
}

fn newton(
    lambda: CressieReadLambda,
    data: &SurveyDataset,
    start: Vec<f64>,
    covariates: usize,
    config: &FitConfig,
) -> NewtonOutcome {
    let tau = data.tau();
    let sc = config.step_control;
    let mut beta = start;
    let (mut objective, mut score) = objective_and_score(lambda, data, &beta, covariates);
    let mut score_norm = inf_norm(&score);
    let mut history = vec![objective];
    let mut iterations = 0;
    let mut stalled_at = None;

    while score_norm > config.gradient_tolerance && iterations < config.max_iterations {
        iterations += 1;
        let grad = DVector::from_iterator(beta.len(), score.iter().map(|s| -s / tau));
        let hess = fd_hessian(lambda, data, &beta, covariates);
        let step = newton_direction(&hess, &grad);
        let slope = grad.dot(&step);

        let mut t = 1.0;
        let accepted = loop {
            let trial: Vec<f64> = beta
                .iter()
                .zip(step.iter())
                .map(|(b, s)| b + t * s)
                .collect();
            let f_trial = objective_only(lambda, data, &trial, covariates);
            if f_trial.is_finite() {
                if f_trial <= objective + sc.armijo * t * slope {
                    break Some((trial, f_trial, None));
                }
                // at the noise floor of the objective, accept if the score shrinks
                let noise = 1e-13 * objective.abs().max(f64::MIN_POSITIVE);
                if f_trial <= objective + noise {
                    let s_trial = score_only(lambda, data, &trial, covariates);
                    if inf_norm(&s_trial) < score_norm {
                        break Some((trial, f_trial, Some(s_trial)));
                    }
                }
            }
            t *= sc.shrink;
            if t < sc.min_step {
                break None;
            }
        };
        match accepted {
            Some((trial, f_trial, maybe_score)) => {
                beta = trial;
                objective = f_trial;
                score = maybe_score.unwrap_or_else(|| score_only(lambda, data, &beta, covariates));
                score_norm = inf_norm(&score);
                history.push(objective);
            }
            None => {
                stalled_at = Some(t);
                break;
            }
        }
    }

    NewtonOutcome {
        converged: score_norm <= config.gradient_tolerance,
        beta,
        score_norm,
        objective,
        iterations,
        history,
        stalled_at,
    }
}

/// Fits the PMφE β̂ = argmin d_φ(p̂, π(β)).
pub fn fit(data: &SurveyDataset, config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    let d = data.num_categories() - 1;
    let kp1 = data.num_covariates();
    let p = d * kp1;
    let informative = data.informative_clusters();
    if informative < p {
        return Err(Error::InsufficientData(format!(
            "{informative} clusters with positive weight cannot identify {p} coefficients"
        )));
    }

    let start = match &config.init {
        Init::Zeros => vec![0.0; p],
        Init::User(v) => {
            BetaMatrix::from_flat(d, kp1, v.clone())?;
            v.clone()
        }
        Init::PmleFirst => {
            if config.lambda.is_kl() {
                vec![0.0; p]
            } else {
                newton(
                    CressieReadLambda::KULLBACK_LEIBLER,
                    data,
                    vec![0.0; p],
                    kp1,
                    config,
                )
                .beta
            }
        }
    };

    let outcome = newton(config.lambda, data, start, kp1, config);
    let beta_hat = BetaMatrix::from_flat(d, kp1, outcome.beta)?;

    let mut warnings = Vec::new();
    let beta_ref = &beta_hat;
    let max_eta = data
        .records()
        .iter()
        .filter(|r| r.weight > 0.0)
        .flat_map(|r| {
            let x = &r.covariates;
            (0..d).map(move |c| {
                beta_ref
                    .row(c)
                    .iter()
                    .zip(x)
                    .map(|(b, v)| b * v)
                    .sum::<f64>()
                    .abs()
            })
        })
        .fold(0.0f64, f64::max);
    if max_eta > SEPARATION_THRESHOLD {
        warnings.push(FitWarning::Separation {
            max_abs_linear_predictor: max_eta,
        });
    }
    if let Some(step) = outcome.stalled_at {
        if !outcome.converged {
            warnings.push(FitWarning::Stalled { step });
        }
    } else if !outcome.converged {
        warnings.push(FitWarning::IterationLimit {
            iterations: outcome.iterations,
        });
    }

    let j = j_hat(data, &beta_hat)?;
    check_rank(&j)?;
    let score_lambda = match config.g_score {
        GScore::Kl => CressieReadLambda::KULLBACK_LEIBLER,
        GScore::Lambda => config.lambda,
    };
    let g = g_hat_with(data, &beta_hat, score_lambda)?;
    let v = sandwich(&j, &g)?;

    Ok(FitResult {
        lambda: config.lambda,
        beta_hat,
        score_norm: outcome.score_norm,
        objective: outcome.objective,
        j_hat: j,
        g_hat: g,
        v_hat: v,
        n_clusters: data.n_clusters(),
        converged: outcome.converged,
        iterations: outcome.iterations,
        objective_history: outcome.history,
        warnings,
    })
}

fn check_rank(j: &DMatrix<f64>) -> Result<()> {
    let eig = SymmetricEigen::new(j.clone());
    let (mut imin, mut vmin, mut vmax) = (0, f64::INFINITY, 0.0f64);
    for (i, &v) in eig.eigenvalues.iter().enumerate() {
        if v < vmin {
            vmin = v;
            imin = i;
        }
        vmax = vmax.max(v.abs());
    }
    if !(vmin > vmax / MAX_CONDITION) {
        return Err(Error::RankDeficient {
            direction: eig.eigenvectors.column(imin).iter().copied().collect(),
        });
    }
    Ok(())
}

/// Ĵₙ(β) = (1/n) Σ_hi w m Δ(π*_hi(β)) ⊗ x xᵀ.
pub fn j_hat(data: &SurveyDataset, beta: &BetaMatrix) -> Result<DMatrix<f64>> {
    let ncat = data.num_categories();
    let d = ncat - 1;
    let kp1 = data.num_covariates();
    if beta.categories() != d || beta.covariates() != kp1 {
        return Err(Error::Dimension(
            "coefficient shape does not match the dataset".into(),
        ));
    }
    let p = d * kp1;
    let mut j = DMatrix::zeros(p, p);
    let mut pi = vec![0.0; ncat];
    for rec in data.records() {
        if rec.weight == 0.0 {
            continue;
        }
        probs_into(beta.flat(), kp1, &rec.covariates, &mut pi);
        let wm = rec.weight * rec.size as f64;
        let x = &rec.covariates;
        for r in 0..d {
            for s in 0..d {
                let delta = if r == s {
                    pi[r] - pi[r] * pi[s]
                } else {
                    -pi[r] * pi[s]
                };
                let c = wm * delta;
                for a in 0..kp1 {
                    for b in 0..kp1 {
                        j[(r * kp1 + a, s * kp1 + b)] += c * x[a] * x[b];
                    }
                }
            }
        }
    }
    Ok(j / data.n_clusters() as f64)
}

/// Ĝₙ with the pseudo-likelihood score contributions.
pub fn g_hat(data: &SurveyDataset, beta: &BetaMatrix) -> Result<DMatrix<f64>> {
    g_hat_with(data, beta, CressieReadLambda::KULLBACK_LEIBLER)
}

/// Ĝₙ = (1/n) Σ (u_hi − ū)(u_hi − ū)ᵀ with ū = (1/n) Σ u_hi, using the
/// estimating function of `score_lambda`.
pub fn g_hat_with(
    data: &SurveyDataset,
    beta: &BetaMatrix,
    score_lambda: CressieReadLambda,
) -> Result<DMatrix<f64>> {
    let n = data.n_clusters() as f64;
    let scores: Vec<DVector<f64>> = data
        .records()
        .iter()
        .map(|rec| estimating_function_cluster(score_lambda, rec, beta).map(DVector::from_vec))
        .collect::<Result<_>>()?;
    let p = beta.len();
    let mean = scores.iter().fold(DVector::zeros(p), |acc, u| acc + u) / n;
    let mut g = DMatrix::zeros(p, p);
    for u in &scores {
        let c = u - &mean;
        g.ger(1.0, &c, &c, 1.0);
    }
    Ok(g / n)
}

/// 2-norm condition number from the singular values.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.singular_values();
    let max = sv.iter().fold(0.0f64, |a, v| a.max(*v));
    let min = sv.iter().fold(f64::INFINITY, |a, v| a.min(*v));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// V = J⁻¹ G J⁻¹, symmetrised.
pub fn sandwich(j: &DMatrix<f64>, g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !j.is_square() || j.shape() != g.shape() {
        return Err(Error::Dimension(
            "sandwich needs square J and G of equal size".into(),
        ));
    }
    let condition = condition_number(j);
    if !(condition <= MAX_CONDITION) {
        return Err(Error::IllConditioned { condition });
    }
    let lu = j.clone().lu();
    let jinv_g = lu
        .solve(g)
        .ok_or_else(|| Error::Singular("J is not invertible".into()))?;
    let v = lu
        .solve(&jinv_g.transpose())
        .ok_or_else(|| Error::Singular("J is not invertible".into()))?
        .transpose();
    Ok((&v + v.transpose()) * 0.5)
}
