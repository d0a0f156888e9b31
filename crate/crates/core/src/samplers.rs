//! Overdispersed multinomial samplers (m-inflated, random-clumped,
//! Dirichlet-multinomial), whole-cluster relabeling contamination and a
//! seeded stratified-cluster dataset generator.
//!
//! Randomness is drawn from per-cluster substreams keyed by (seed, h, i), so
//! generated data does not depend on iteration order or thread count.

use rand::distr::{Bernoulli, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Binomial, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{probs_into, BetaMatrix};
use crate::par::{map_indexed, Execution};
use crate::survey::{ClusterRecord, SurveyDataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Multinomial,
    MInflated,
    RandomClumped,
    DirichletMultinomial,
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multinomial" => Ok(Family::Multinomial),
            "m_inflated" => Ok(Family::MInflated),
            "random_clumped" => Ok(Family::RandomClumped),
            "dirichlet_multinomial" => Ok(Family::DirichletMultinomial),
            other => Err(Error::Domain(format!(
                "unknown family '{other}' (expected multinomial, m_inflated, random_clumped or dirichlet_multinomial)"
            ))),
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Family::Multinomial => "multinomial",
            Family::MInflated => "m_inflated",
            Family::RandomClumped => "random_clumped",
            Family::DirichletMultinomial => "dirichlet_multinomial",
        })
    }
}

/// Sampling family with intra-cluster correlation ρ (not ρ²).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverdispersionSpec {
    pub family: Family,
    pub rho: f64,
    pub seed: u64,
}

impl OverdispersionSpec {
    pub fn new(family: Family, rho: f64, seed: u64) -> Result<Self> {
        let spec = Self { family, rho, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_rho2(family: Family, rho2: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&rho2) {
            return Err(Error::Domain(format!(
                "rho² must lie in [0, 1), got {rho2}"
            )));
        }
        Self::new(family, rho2.sqrt(), seed)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::Domain(format!(
                "rho must lie in [0, 1), got {}",
                self.rho
            )));
        }
        Ok(())
    }

    /// ν = 1 + ρ²(m − 1).
    pub fn nu(&self, m: u64) -> f64 {
        1.0 + self.rho * self.rho * (m as f64 - 1.0)
    }
}

/// Whole-cluster relabeling: with probability `fraction`, the count at
/// category c moves to category `permutation[c]` (0-based).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContaminationSpec {
    pub fraction: f64,
    pub permutation: Vec<usize>,
}

impl ContaminationSpec {
    pub fn none(num_categories: usize) -> Self {
        Self {
            fraction: 0.0,
            permutation: (0..num_categories).collect(),
        }
    }

    /// c ↦ c − 1 (mod d+1); for three categories this is 1,2,3 → 3,1,2.
    pub fn cyclic(fraction: f64, num_categories: usize) -> Result<Self> {
        let spec = Self {
            fraction,
            permutation: (0..num_categories)
                .map(|c| (c + num_categories - 1) % num_categories)
                .collect(),
        };
        spec.validate(num_categories)?;
        Ok(spec)
    }

    pub fn validate(&self, num_categories: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.fraction) {
            return Err(Error::Domain(format!(
                "contamination fraction must lie in [0, 1], got {}",
                self.fraction
            )));
        }
        if self.permutation.len() != num_categories {
            return Err(Error::Dimension(format!(
                "permutation has {} entries, expected {num_categories}",
                self.permutation.len()
            )));
        }
        let mut seen = vec![false; num_categories];
        for &c in &self.permutation {
            if c >= num_categories || std::mem::replace(&mut seen[c], true) {
                return Err(Error::Domain("permutation is not a bijection".into()));
            }
        }
        Ok(())
    }

    /// Relabels `counts` by the permutation unconditionally.
    pub fn permute(&self, counts: &[u64]) -> Vec<u64> {
        let mut out = vec![0; counts.len()];
        for (c, &y) in counts.iter().enumerate() {
            out[self.permutation[c]] = y;
        }
        out
    }
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent generator for the stream identified by `seed` and `keys`.
pub fn substream(seed: u64, keys: &[u64]) -> ChaCha8Rng {
    let folded = keys.iter().fold(mix(seed), |acc, &k| mix(acc ^ mix(k)));
    ChaCha8Rng::seed_from_u64(folded)
}

fn binomial<R: Rng + ?Sized>(rng: &mut R, n: u64, p: f64) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    Binomial::new(n, p).map(|b| b.sample(rng)).unwrap_or(0)
}

/// Multinomial(m, π) by sequential conditional binomials.
pub fn sample_multinomial<R: Rng + ?Sized>(rng: &mut R, m: u64, pi: &[f64]) -> Vec<u64> {
    let mut out = vec![0; pi.len()];
    let mut remaining = m;
    let mut mass = 1.0;
    let last = pi.len() - 1;
    for (r, &p) in pi[..last].iter().enumerate() {
        if remaining == 0 {
            break;
        }
        let y = binomial(rng, remaining, if mass > 0.0 { p / mass } else { 0.0 });
        out[r] = y;
        remaining -= y;
        mass -= p;
    }
    out[last] += remaining;
    out
}

fn sample_categorical<R: Rng + ?Sized>(rng: &mut R, pi: &[f64]) -> usize {
    let u: f64 = rng.random::<f64>() * pi.iter().sum::<f64>();
    let mut acc = 0.0;
    for (s, &p) in pi.iter().enumerate() {
        acc += p;
        if u < acc {
            return s;
        }
    }
    pi.len() - 1
}

fn check_probs(pi: &[f64]) -> Result<()> {
    if pi.len() < 2 || pi.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(Error::Domain(
            "probability vector must have ≥ 2 finite nonnegative entries".into(),
        ));
    }
    if (pi.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Domain("probabilities must sum to 1".into()));
    }
    Ok(())
}

/// One cluster's count vector with mean mπ and covariance ν m Δ(π).
pub fn sample_cluster<R: Rng + ?Sized>(
    family: Family,
    rho: f64,
    m: u64,
    pi: &[f64],
    rng: &mut R,
) -> Result<Vec<u64>> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::Domain(format!("rho must lie in [0, 1), got {rho}")));
    }
    if m == 0 {
        return Err(Error::Domain("cluster size must be at least 1".into()));
    }
    check_probs(pi)?;
    let rho2 = rho * rho;
    Ok(match family {
        Family::Multinomial => sample_multinomial(rng, m, pi),
        Family::MInflated => {
            let clumped = Bernoulli::new(rho2)
                .map_err(|e| Error::Domain(e.to_string()))?
                .sample(rng);
            if clumped {
                let mut out = vec![0; pi.len()];
                out[sample_categorical(rng, pi)] = m;
                out
            } else {
                sample_multinomial(rng, m, pi)
            }
        }
        Family::RandomClumped => {
            let seed_category = sample_categorical(rng, pi);
            let k1 = binomial(rng, m, rho);
            let mut out = sample_multinomial(rng, m - k1, pi);
            out[seed_category] += k1;
            out
        }
        Family::DirichletMultinomial => {
            if rho == 0.0 {
                // no overdispersion: the Dirichlet collapses to π
                return Ok(sample_multinomial(rng, m, pi));
            }
            let c = (1.0 - rho2) / rho2;
            let d = pi.len() - 1;
            let mut out = vec![0; pi.len()];
            let mut remaining = m;
            for r in 0..d {
                if remaining == 0 {
                    break;
                }
                let a1 = c * pi[r];
                let a2 = c * pi[r + 1..].iter().sum::<f64>();
                let p = if a1 <= 0.0 {
                    0.0
                } else if a2 <= 0.0 {
                    1.0
                } else {
                    Beta::new(a1, a2)
                        .map_err(|e| Error::Domain(e.to_string()))?
                        .sample(rng)
                };
                let y = binomial(rng, remaining, if p.is_finite() { p } else { 0.0 });
                out[r] = y;
                remaining -= y;
            }
            out[d] += remaining;
            out
        }
    })
}

/// Applies the relabeling with probability ε; returns whether it fired.
pub fn contaminate<R: Rng + ?Sized>(
    counts: &[u64],
    spec: &ContaminationSpec,
    rng: &mut R,
) -> (Vec<u64>, bool) {
    if spec.fraction > 0.0 && rng.random::<f64>() < spec.fraction {
        (spec.permute(counts), true)
    } else {
        (counts.to_vec(), false)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClusterSizes {
    Fixed(u64),
    /// Sizes in stratum-major order, one per cluster.
    PerCluster(Vec<u64>),
}

/// Stratified cluster design: H strata × n_h clusters, standard-normal
/// covariates with an intercept prepended, unit weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Design {
    pub strata: usize,
    pub clusters_per_stratum: usize,
    pub sizes: ClusterSizes,
    pub beta0: BetaMatrix,
}

impl Design {
    pub fn n_clusters(&self) -> usize {
        self.strata * self.clusters_per_stratum
    }

    fn size_of(&self, idx: usize) -> u64 {
        match &self.sizes {
            ClusterSizes::Fixed(m) => *m,
            ClusterSizes::PerCluster(v) => v[idx],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.strata == 0 || self.clusters_per_stratum == 0 {
            return Err(Error::Domain(
                "design needs at least one stratum and one cluster".into(),
            ));
        }
        match &self.sizes {
            ClusterSizes::Fixed(0) => {
                return Err(Error::Domain("cluster size must be at least 1".into()))
            }
            ClusterSizes::PerCluster(v) if v.len() != self.n_clusters() => {
                return Err(Error::Dimension(format!(
                    "{} cluster sizes given for {} clusters",
                    v.len(),
                    self.n_clusters()
                )))
            }
            ClusterSizes::PerCluster(v) if v.contains(&0) => {
                return Err(Error::Domain("cluster size must be at least 1".into()))
            }
            _ => {}
        }
        if self.beta0.flat().iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("β⁰ must be finite".into()));
        }
        Ok(())
    }
}

const COVARIATE_STREAM: u64 = 0;
const RESPONSE_STREAM: u64 = 1;
const CONTAMINATION_STREAM: u64 = 2;

/// Draws a dataset. The clean responses do not depend on `contamination`,
/// so datasets differing only in ε share their covariates and counts.
pub fn generate_dataset(
    design: &Design,
    spec: &OverdispersionSpec,
    contamination: &ContaminationSpec,
    exec: Execution,
) -> Result<SurveyDataset> {
    design.validate()?;
    spec.validate()?;
    let ncat = design.beta0.categories() + 1;
    contamination.validate(ncat)?;
    let kp1 = design.beta0.covariates();
    let nh = design.clusters_per_stratum;
    let records = map_indexed(exec, design.n_clusters(), |idx| -> Result<ClusterRecord> {
        let (h, i) = ((idx / nh) as u64 + 1, (idx % nh) as u64 + 1);
        let mut xrng = substream(spec.seed, &[COVARIATE_STREAM, h, i]);
        let mut x = Vec::with_capacity(kp1);
        x.push(1.0);
        x.extend((1..kp1).map(|_| xrng.sample::<f64, _>(StandardNormal)));
        let mut pi = vec![0.0; ncat];
        probs_into(design.beta0.flat(), kp1, &x, &mut pi);
        let m = design.size_of(idx);
        let mut yrng = substream(spec.seed, &[RESPONSE_STREAM, h, i]);
        let clean = sample_cluster(spec.family, spec.rho, m, &pi, &mut yrng)?;
        let mut crng = substream(spec.seed, &[CONTAMINATION_STREAM, h, i]);
        let (counts, _) = contaminate(&clean, contamination, &mut crng);
        Ok(ClusterRecord {
            stratum: h as i64,
            cluster: i as i64,
            weight: 1.0,
            size: m,
            counts,
            covariates: x,
        })
    });
    SurveyDataset::new(records.into_iter().collect::<Result<Vec<_>>>()?)
}
