//! Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
//! criterion fails. Oracles here are written independently of the library.
//!
//! Run a subset with `ACCEPTANCE_ONLY=3,6 cargo test --test acceptance`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use pmphi::divergence::{divergence, estimating_function};
use pmphi::estimator::{fit, FitConfig};
use pmphi::inference::{
    chi2_goodness_of_fit, noncentrality, power_from_parts, sample_size_from_parts, wald_statistic,
    LinearHypothesis,
};
use pmphi::robustness::{influence, leverage_profile, ContaminationPoint};
use pmphi::samplers::{
    generate_dataset, sample_cluster, sample_multinomial, substream, ClusterSizes, Design,
};
use pmphi::sim::{run_experiment, CellResult, ExperimentPlan};
use pmphi::{
    BetaMatrix, ClusterRecord, ContaminationSpec, CressieReadLambda, Execution, Family,
    OverdispersionSpec, SurveyDataset,
};
use rand::Rng;
use rand_distr::StandardNormal;

type Outcome = (bool, String);
type Criterion = (usize, &'static str, fn() -> Outcome);

const PAPER_BETA: [f64; 6] = [0.0, -0.9, 0.1, 0.6, -1.2, 0.8];

fn lam(v: f64) -> CressieReadLambda {
    CressieReadLambda::new(v).unwrap()
}

/// Baseline-category softmax, written out directly.
fn softmax(beta: &[f64], d: usize, x: &[f64]) -> Vec<f64> {
    let kp1 = x.len();
    let eta: Vec<f64> = (0..d)
        .map(|r| (0..kp1).map(|j| beta[r * kp1 + j] * x[j]).sum())
        .collect();
    let denom = 1.0 + eta.iter().map(|e| e.exp()).sum::<f64>();
    let mut p: Vec<f64> = eta.iter().map(|e| e.exp() / denom).collect();
    p.push(1.0 / denom);
    p
}

fn random_dataset(rng: &mut impl Rng, d: usize, k: usize, n: usize, beta: &[f64]) -> SurveyDataset {
    let records = (0..n)
        .map(|i| {
            let mut x = vec![1.0];
            x.extend((0..k).map(|_| rng.sample::<f64, _>(StandardNormal)));
            let m = rng.random_range(5..=30u64);
            let pi = softmax(beta, d, &x);
            ClusterRecord {
                stratum: 1 + (i % 3) as i64,
                cluster: i as i64,
                weight: rng.random_range(0.5..3.0),
                size: m,
                counts: sample_multinomial(rng, m, &pi),
                covariates: x,
            }
        })
        .collect();
    SurveyDataset::new(records).unwrap()
}

fn random_beta(rng: &mut impl Rng, p: usize, scale: f64) -> Vec<f64> {
    (0..p)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Weighted multinomial-logit IRLS (Fisher scoring with the canonical link).
fn irls_pmle(data: &SurveyDataset) -> Option<Vec<f64>> {
    let d = data.num_categories() - 1;
    let kp1 = data.num_covariates();
    let p = d * kp1;
    let mut beta = vec![0.0; p];
    for _ in 0..100 {
        let mut score = DVector::<f64>::zeros(p);
        let mut info = DMatrix::<f64>::zeros(p, p);
        for rec in data.records() {
            let pi = softmax(&beta, d, &rec.covariates);
            let (w, m, x) = (rec.weight, rec.size as f64, &rec.covariates);
            for r in 0..d {
                for a in 0..kp1 {
                    score[r * kp1 + a] += w * (rec.counts[r] as f64 - m * pi[r]) * x[a];
                    for s in 0..d {
                        let cov = if r == s {
                            pi[r] * (1.0 - pi[r])
                        } else {
                            -pi[r] * pi[s]
                        };
                        for b in 0..kp1 {
                            info[(r * kp1 + a, s * kp1 + b)] += w * m * cov * x[a] * x[b];
                        }
                    }
                }
            }
        }
        let step = info.cholesky()?.solve(&score);
        for (b, s) in beta.iter_mut().zip(step.iter()) {
            *b += s;
        }
        if step.amax() < 1e-13 {
            return Some(beta);
        }
    }
    None
}

fn criterion_1() -> Outcome {
    let mut rng = substream(101, &[]);
    let mut worst: f64 = 0.0;
    let mut skipped = 0;
    let mut checked = 0;
    while checked < 25 {
        let d = rng.random_range(1..=2usize);
        let k = rng.random_range(0..=2usize);
        let n = rng.random_range(20..=100usize);
        let truth = random_beta(&mut rng, d * (k + 1), 0.5);
        let data = random_dataset(&mut rng, d, k, n, &truth);
        let Some(oracle) = irls_pmle(&data) else {
            skipped += 1;
            continue;
        };
        let result = fit(&data, &FitConfig::new(CressieReadLambda::KULLBACK_LEIBLER)).unwrap();
        assert!(result.converged);
        for (a, b) in result.beta_hat.flat().iter().zip(&oracle) {
            worst = worst.max((a - b).abs());
        }
        checked += 1;
    }
    (worst <= 1e-6, format!("25 datasets, max |β̂ − β̂_IRLS| = {worst:.2e} (tol 1e-6), {skipped} oracle failures redrawn"))
}

fn criterion_2() -> Outcome {
    let mut rng = substream(202, &[]);
    let mut worst: f64 = 0.0;
    for &l in &[-0.5, -0.3, 0.5, 2.0 / 3.0] {
        for _ in 0..10 {
            let d = rng.random_range(1..=2usize);
            let k = rng.random_range(0..=2usize);
            let p = d * (k + 1);
            let truth = random_beta(&mut rng, p, 0.5);
            let data = random_dataset(&mut rng, d, k, 30, &truth);
            let point = random_beta(&mut rng, p, 0.7);
            let beta = BetaMatrix::from_flat(d, k + 1, point.clone()).unwrap();
            let analytic = estimating_function(lam(l), &data, &beta).unwrap();
            let tau = data.tau();
            let mut num = 0.0f64;
            let mut den = 0.0f64;
            for j in 0..p {
                let h = 1e-5 * point[j].abs().max(1.0);
                let eval = |delta: f64| {
                    let mut b = point.clone();
                    b[j] += delta;
                    divergence(lam(l), &data, &BetaMatrix::from_flat(d, k + 1, b).unwrap()).unwrap()
                };
                let fd = -tau * (eval(h) - eval(-h)) / (2.0 * h);
                num = num.max((fd - analytic[j]).abs());
                den = den.max(analytic[j].abs());
            }
            worst = worst.max(num / den.max(1e-300));
        }
    }
    (
        worst <= 1e-5,
        format!("40 points, max relative |u − (−τ∇d_φ)| = {worst:.2e} (tol 1e-5)"),
    )
}

fn criterion_3() -> Outcome {
    let pi = [0.2, 0.5, 0.3];
    let draws = 100_000;
    let mut worst: f64 = 0.0;
    let mut detail = String::new();
    for family in [
        Family::MInflated,
        Family::RandomClumped,
        Family::DirichletMultinomial,
    ] {
        for &rho2 in &[0.0, 0.25, 0.5] {
            for &m in &[5u64, 20] {
                let mut rng = substream(303, &[family as u64, (rho2 * 100.0) as u64, m]);
                let rho = f64::sqrt(rho2);
                let mut sum = [0.0; 3];
                let mut cross = [[0.0; 3]; 3];
                for _ in 0..draws {
                    let y = sample_cluster(family, rho, m, &pi, &mut rng).unwrap();
                    for a in 0..3 {
                        sum[a] += y[a] as f64;
                        for b in 0..3 {
                            cross[a][b] += (y[a] * y[b]) as f64;
                        }
                    }
                }
                let nu = 1.0 + rho2 * (m as f64 - 1.0);
                let n = draws as f64;
                let (mut diff, mut norm) = (0.0, 0.0);
                for a in 0..3 {
                    for b in 0..3 {
                        let emp = (cross[a][b] - sum[a] * sum[b] / n) / (n - 1.0);
                        let delta = if a == b {
                            pi[a] * (1.0 - pi[a])
                        } else {
                            -pi[a] * pi[b]
                        };
                        let target = nu * m as f64 * delta;
                        diff += (emp - target).powi(2);
                        norm += target * target;
                    }
                }
                let rel = (diff / norm).sqrt();
                if rel > worst {
                    worst = rel;
                    detail = format!("{family} ρ²={rho2} m={m}");
                }
            }
        }
    }
    (worst <= 0.05, format!("18 configurations × 1e5 draws, worst Frobenius-relative error {worst:.4} at {detail} (tol 0.05)"))
}

fn paper_plan(lambdas: Vec<f64>, replicates: usize) -> ExperimentPlan {
    ExperimentPlan {
        lambdas,
        nh_grid: vec![60],
        replicates,
        family: Family::MInflated,
        rho2: 0.5,
        contamination: 0.1,
        seed: 404,
        ..ExperimentPlan::default()
    }
}

fn cell(table: &[CellResult], lambda: f64, contaminated: bool) -> &CellResult {
    table
        .iter()
        .find(|c| c.lambda == lambda && c.contaminated == contaminated)
        .expect("cell present")
}

fn criterion_4() -> Outcome {
    let table = run_experiment(&paper_plan(vec![0.0], 1000), Execution::Parallel, |_| {}).unwrap();
    let c = cell(&table, 0.0, false);
    let gof = chi2_goodness_of_fit(&c.null_statistics, 1, 10).unwrap();
    let level_ok = (0.03..=0.08).contains(&c.level);
    let gof_ok = gof.p_value > 0.01;
    (
        level_ok && gof_ok,
        format!(
            "λ=0, n_h=60, R=1000: level {:.3} (in [0.03, 0.08]: {level_ok}), χ²₁ GOF statistic {:.2} on {} df, p = {:.3} (> 0.01: {gof_ok}), {} non-converged",
            c.level,
            gof.statistic,
            gof.df,
            gof.p_value,
            c.nonconverged_null
        ),
    )
}

fn criterion_5() -> Outcome {
    let table = run_experiment(
        &paper_plan(vec![-0.5, -0.3, 0.0], 500),
        Execution::Parallel,
        |_| {},
    )
    .unwrap();
    let (a, b, z) = (
        cell(&table, -0.5, true),
        cell(&table, -0.3, true),
        cell(&table, 0.0, true),
    );
    let part_a = (a.level - 0.05).abs() < (z.level - 0.05).abs();
    let part_b = b.rmse < z.rmse;
    (
        part_a && part_b,
        format!(
            "contaminated m-inflated, n_h=60, R=500: (a) level λ=−0.5 {:.3} vs λ=0 {:.3}: {}; (b) RMSE λ=−0.3 {:.4} vs λ=0 {:.4}: {}",
            a.level,
            z.level,
            if part_a { "holds" } else { "does not hold" },
            b.rmse,
            z.rmse,
            if part_b { "holds" } else { "does not hold" }
        ),
    )
}

/// Σ_hi (w m/(λ+1)) Δ*(π) diag^{−(λ+1)}(π) q_hi ⊗ x with q_hi = π_hi(β⁰)^{λ+1},
/// except q = (1−ε)π^{λ+1} + εδ_t at the contaminated cluster.
fn contaminated_equation(
    data: &SurveyDataset,
    beta0: &[f64],
    l: f64,
    target: usize,
    t: usize,
    eps: f64,
    beta: &[f64],
) -> Vec<f64> {
    let d = data.num_categories() - 1;
    let kp1 = data.num_covariates();
    let mut out = vec![0.0; d * kp1];
    for (idx, rec) in data.records().iter().enumerate() {
        let p0 = softmax(beta0, d, &rec.covariates);
        let mut q: Vec<f64> = p0.iter().map(|p| p.powf(l + 1.0)).collect();
        if idx == target {
            for (s, qs) in q.iter_mut().enumerate() {
                *qs = (1.0 - eps) * *qs + if s == t { eps } else { 0.0 };
            }
        }
        let pi = softmax(beta, d, &rec.covariates);
        let a: Vec<f64> = q.iter().zip(&pi).map(|(q, p)| q * p.powf(-l)).collect();
        let total: f64 = a.iter().sum();
        let scale = rec.weight * rec.size as f64 / (l + 1.0);
        for r in 0..d {
            let resid = scale * (a[r] - pi[r] * total);
            for j in 0..kp1 {
                out[r * kp1 + j] += resid * rec.covariates[j];
            }
        }
    }
    out
}

fn solve_contaminated(
    data: &SurveyDataset,
    beta0: &[f64],
    l: f64,
    target: usize,
    t: usize,
    eps: f64,
) -> Vec<f64> {
    let p = beta0.len();
    let mut beta = beta0.to_vec();
    for _ in 0..50 {
        let h0 = contaminated_equation(data, beta0, l, target, t, eps, &beta);
        if h0.iter().fold(0.0f64, |a, v| a.max(v.abs())) < 1e-12 {
            break;
        }
        let mut jac = DMatrix::zeros(p, p);
        for c in 0..p {
            let step = 1e-6;
            let mut bp = beta.clone();
            bp[c] += step;
            let mut bm = beta.clone();
            bm[c] -= step;
            let hp = contaminated_equation(data, beta0, l, target, t, eps, &bp);
            let hm = contaminated_equation(data, beta0, l, target, t, eps, &bm);
            for r in 0..p {
                jac[(r, c)] = (hp[r] - hm[r]) / (2.0 * step);
            }
        }
        let delta = jac
            .lu()
            .solve(&DVector::from_vec(h0))
            .expect("invertible Jacobian");
        for (b, s) in beta.iter_mut().zip(delta.iter()) {
            *b -= s;
        }
    }
    beta
}

/// Richardson-extrapolated ε-derivative of the contaminated solution.
fn perturbation_oracle(
    data: &SurveyDataset,
    beta0: &[f64],
    l: f64,
    target: usize,
    t: usize,
) -> Vec<f64> {
    let (e1, e2) = (1e-3, 1e-4);
    let b1 = solve_contaminated(data, beta0, l, target, t, e1);
    let b2 = solve_contaminated(data, beta0, l, target, t, e2);
    (0..beta0.len())
        .map(|j| {
            let d1 = (b1[j] - beta0[j]) / e1;
            let d2 = (b2[j] - beta0[j]) / e2;
            (e1 * d2 - e2 * d1) / (e1 - e2)
        })
        .collect()
}

fn criterion_6() -> Outcome {
    let mut rng = substream(606, &[]);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let d = rng.random_range(1..=2usize);
        let k = rng.random_range(1..=2usize);
        let n = rng.random_range(8..=20usize);
        let beta0 = random_beta(&mut rng, d * (k + 1), 0.5);
        let data = random_dataset(&mut rng, d, k, n, &beta0);
        let beta = BetaMatrix::from_flat(d, k + 1, beta0.clone()).unwrap();
        let target = rng.random_range(0..n);
        let t = rng.random_range(0..=d);
        let rec = &data.records()[target];
        let point = ContaminationPoint::new(rec.stratum, rec.cluster, t);
        for &l in &[-0.5, -0.3, 0.0, 2.0 / 3.0] {
            let analytic = influence(&data, &beta, lam(l), &point).unwrap().if_vector;
            let oracle = perturbation_oracle(&data, &beta0, l, target, t);
            let diff = analytic
                .iter()
                .zip(&oracle)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            let norm = oracle.iter().map(|b| b * b).sum::<f64>().sqrt();
            worst = worst.max(diff / norm);
        }
    }
    let oracle_ok = worst <= 1e-3;

    let mut grid = substream(607, &[]);
    let records = (0..40)
        .map(|i| {
            let x1 = if i == 0 {
                1.0
            } else {
                grid.sample(StandardNormal)
            };
            let x = vec![1.0, x1, grid.sample(StandardNormal)];
            ClusterRecord {
                stratum: 1 + i / 10,
                cluster: 1 + i % 10,
                weight: 1.0,
                size: 20,
                counts: vec![7, 7, 6],
                covariates: x,
            }
        })
        .collect();
    let data = SurveyDataset::new(records).unwrap();
    let beta = BetaMatrix::from_flat(2, 3, PAPER_BETA.to_vec()).unwrap();
    let rec = &data.records()[0];
    // large positive x₁ sends mass to the baseline; category 2 becomes least likely
    let point = ContaminationPoint::new(rec.stratum, rec.cluster, 1);
    let exps: Vec<i32> = (0..=6).collect();
    let robust = leverage_profile(&data, &beta, lam(-0.5), &point, 1, &exps).unwrap();
    let pmle = leverage_profile(&data, &beta, lam(0.0), &point, 1, &exps).unwrap();
    let early = robust[..=3].iter().map(|p| p.if_norm).fold(0.0, f64::max);
    let plateau = robust[3..].iter().all(|p| p.if_norm <= early);
    let growth = pmle[3..].windows(2).all(|w| w[1].if_norm > w[0].if_norm)
        && pmle[6].if_norm > 100.0 * pmle[3].if_norm;
    (
        oracle_ok && plateau && growth,
        format!(
            "max relative IF error vs ε-oracle {worst:.2e} over 10 models × 4 λ (tol 1e-3); leverage 10^0..10^6: λ=−0.5 ‖IF‖ {:.3e} → {:.3e} (plateau: {plateau}), λ=0 ‖IF‖ {:.3e} → {:.3e} (monotone growth: {growth})",
            robust[0].if_norm, robust[6].if_norm, pmle[0].if_norm, pmle[6].if_norm
        ),
    )
}

/// V(β⁰) = ν J⁻¹ with J = E_x[m Δ*(π(x)) ⊗ x xᵀ], averaged over 4·10⁵ covariate draws.
fn population_v(beta0: &[f64], m: f64, nu: f64) -> DMatrix<f64> {
    let mut rng = substream(707, &[]);
    let draws = 400_000;
    let mut j = DMatrix::<f64>::zeros(6, 6);
    for _ in 0..draws {
        let x = [
            1.0,
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        ];
        let pi = softmax(beta0, 2, &x);
        for r in 0..2 {
            for s in 0..2 {
                let cov = if r == s {
                    pi[r] * (1.0 - pi[r])
                } else {
                    -pi[r] * pi[s]
                };
                for a in 0..3 {
                    for b in 0..3 {
                        j[(r * 3 + a, s * 3 + b)] += m * cov * x[a] * x[b];
                    }
                }
            }
        }
    }
    (j / draws as f64).try_inverse().unwrap() * nu
}

fn criterion_7() -> Outcome {
    let (nh, m, rho2) = (60usize, 20u64, 0.5);
    let n = 4 * nh;
    let v = population_v(&PAPER_BETA, m as f64, 1.0 + rho2 * (m as f64 - 1.0));
    let hyp = LinearHypothesis::coordinate(6, 1, -0.9).unwrap();
    // d moves β₁₁ and β₂₂; only the β₁₁ component enters Δ
    let mut direction = vec![0.0; 6];
    direction[1] = -2.0 * v[(1, 1)].sqrt();
    direction[5] = 0.5;
    let delta = noncentrality(&hyp, &v, &direction).unwrap();
    let beta_n: Vec<f64> = PAPER_BETA
        .iter()
        .zip(&direction)
        .map(|(b, d)| b + d / (n as f64).sqrt())
        .collect();
    let design = Design {
        strata: 4,
        clusters_per_stratum: nh,
        sizes: ClusterSizes::Fixed(m),
        beta0: BetaMatrix::from_flat(2, 3, beta_n).unwrap(),
    };
    let replicates = 1000;
    let stats: Vec<Option<f64>> = pmphi::par::map_indexed(Execution::Parallel, replicates, |r| {
        let spec =
            OverdispersionSpec::from_rho2(Family::MInflated, rho2, 7_000_000 + r as u64).unwrap();
        let data = generate_dataset(
            &design,
            &spec,
            &ContaminationSpec::none(3),
            Execution::Sequential,
        )
        .unwrap();
        let res = fit(&data, &FitConfig::new(CressieReadLambda::KULLBACK_LEIBLER)).ok()?;
        if !res.converged {
            return None;
        }
        wald_statistic(res.beta_hat.flat(), &res.v_hat, res.n_clusters, &hyp).ok()
    });
    let w: Vec<f64> = stats.iter().flatten().copied().collect();
    let mean = w.iter().sum::<f64>() / w.len() as f64;
    let sd = (w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (w.len() as f64 - 1.0)).sqrt();
    let se = sd / (w.len() as f64).sqrt();
    let target = 1.0 + delta;
    let ok = (mean - target).abs() <= 3.0 * se;
    (
        ok,
        format!(
            "m-inflated ρ²=0.5, λ=0, n={n}, R={replicates} ({} used): mean W {mean:.3} vs r + Δ = {target:.3}, |diff| = {:.3}, 3 SE = {:.3}",
            w.len(),
            (mean - target).abs(),
            3.0 * se
        ),
    )
}

fn criterion_8() -> Outcome {
    let mut rng = substream(808, &[]);
    let mut worst_gap = f64::INFINITY;
    for _ in 0..20 {
        let ell = rng.random_range(0.005..0.5);
        let sigma = rng.random_range(0.05..2.0);
        let alpha = [0.01, 0.05, 0.1][rng.random_range(0..3)];
        let target = rng.random_range(0.5..0.95);
        let n = sample_size_from_parts(ell, sigma * sigma, alpha, 1, target).unwrap();
        let achieved = power_from_parts(ell, sigma, n as f64, alpha, 1).unwrap();
        worst_gap = worst_gap.min(achieved - (target - 0.02));
    }
    let self_consistent = worst_gap >= 0.0;
    let worked = sample_size_from_parts(0.04, 0.16, 0.05, 1, 0.8).unwrap();
    let worked_ok = worked == 209;
    (
        self_consistent && worked_ok,
        format!(
            "20 random configurations: min(power(n) − (π⁰ − 0.02)) = {worst_gap:.4} ({}); worked example (ℓ*=0.04, σ_W=0.4, α=0.05, π⁰=0.8) returns n = {worked}, expected 209",
            if self_consistent { "holds" } else { "violated" }
        ),
    )
}

fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let plan = r#"{"replicates": 25, "nh_grid": [10, 20], "seed": 99}"#;
    std::fs::write(d.join("plan.json"), plan).unwrap();
    let mut outputs = Vec::new();
    for threads in ["1", "4", "8"] {
        let out_dir = format!("out{threads}");
        let status = Command::new(env!("CARGO_BIN_EXE_pmphi"))
            .current_dir(d)
            .args([
                "--quiet",
                "--threads",
                threads,
                "simulate",
                "--plan",
                "plan.json",
                "--out",
                &out_dir,
            ])
            .status()
            .unwrap();
        assert!(status.success());
        let read = |name: &str| std::fs::read(Path::new(d).join(&out_dir).join(name)).unwrap();
        outputs.push((read("cells.csv"), read("plot_data.csv")));
    }
    let identical = outputs.windows(2).all(|w| w[0] == w[1]);
    (
        identical,
        format!(
            "simulate at 1, 4 and 8 threads: cells.csv ({} bytes) and plot_data.csv ({} bytes) {}",
            outputs[0].0.len(),
            outputs[0].1.len(),
            if identical {
                "byte-identical"
            } else {
                "differ"
            }
        ),
    )
}

fn main() {
    let criteria: [Criterion; 9] = [
        (1, "PMLE equivalence", criterion_1),
        (2, "gradient correctness", criterion_2),
        (3, "sampler moments", criterion_3),
        (4, "null calibration", criterion_4),
        (5, "robustness ordering", criterion_5),
        (6, "influence function", criterion_6),
        (7, "noncentral power", criterion_7),
        (8, "sample-size self-consistency", criterion_8),
        (9, "determinism", criterion_9),
    ];
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let mut failures = 0;
    for (id, name, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let (pass, detail) = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!("panicked: {msg}"))
        });
        if !pass {
            failures += 1;
        }
        println!(
            "{} criterion {id} ({name}) [{:.1}s]: {detail}",
            if pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
