//! Randomized pricing experiments on a known demand system.
//!
//! Experiments are evaluated with every cross-price effect between arms left
//! in place, so the naive estimate carries the interference a real shop would
//! see. Comparing it against the exact roll-out effect gives the bias.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::csvfmt;
use crate::demand::{generate_demand_system, DemandSystem, GeneratorConfig, Metric, PricePolicy};
use crate::error::{LabError, Result};
use crate::partition::Partition;
use crate::rng::{self, Domain};
use crate::scalar::{count, Scalar};

/// Below this magnitude the global effect is treated as zero and bias is
/// reported in absolute terms.
pub const GTE_ZERO_TOLERANCE: f64 = 1e-12;

/// Two-sided 95% normal critical value used for naive intervals.
pub const Z_95: f64 = 1.96;

/// Default per-article multiplicative demand noise for A/A calibration.
pub const DEFAULT_NOISE_SD: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Arm {
    Treatment,
    Control,
}

/// Experiment arm of every article.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    labels: Vec<Arm>,
}

impl Assignment {
    pub fn new(labels: Vec<Arm>) -> Self {
        Assignment { labels }
    }

    pub fn from_treated(n: usize, treated: impl IntoIterator<Item = usize>) -> Self {
        let mut labels = vec![Arm::Control; n];
        for i in treated {
            labels[i] = Arm::Treatment;
        }
        Assignment { labels }
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    #[inline]
    pub fn arm(&self, article: usize) -> Arm {
        self.labels[article]
    }

    pub fn labels(&self) -> &[Arm] {
        &self.labels
    }

    pub fn n_treated(&self) -> usize {
        self.labels.iter().filter(|&&a| a == Arm::Treatment).count()
    }

    /// Swaps the two arms.
    pub fn flipped(&self) -> Self {
        Assignment {
            labels: self
                .labels
                .iter()
                .map(|a| match a {
                    Arm::Treatment => Arm::Control,
                    Arm::Control => Arm::Treatment,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RandomizationStrategy {
    ArticleLevel,
    ClusterLevel(Partition),
}

impl RandomizationStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            RandomizationStrategy::ArticleLevel => "article",
            RandomizationStrategy::ClusterLevel(_) => "cluster",
        }
    }
}

/// Balanced random split: `floor(units / 2)` treated units, where units are
/// articles or clusters depending on the strategy.
pub fn assign<R: Rng + ?Sized>(
    strategy: &RandomizationStrategy,
    n: usize,
    rng: &mut R,
) -> Result<Assignment> {
    if n < 2 {
        return Err(LabError::input(format!("need at least 2 articles to randomize, got {n}")));
    }
    match strategy {
        RandomizationStrategy::ArticleLevel => {
            let treated = index::sample(rng, n, n / 2);
            Ok(Assignment::from_treated(n, treated))
        }
        RandomizationStrategy::ClusterLevel(partition) => {
            if partition.n() != n {
                return Err(LabError::input(format!(
                    "partition covers {} articles, experiment has {n}",
                    partition.n()
                )));
            }
            let k = partition.n_clusters();
            if k < 2 {
                return Err(LabError::input("cluster randomization needs at least 2 clusters"));
            }
            let mut treated_cluster = vec![false; k];
            for c in index::sample(rng, k, k / 2) {
                treated_cluster[c] = true;
            }
            Ok(Assignment::new(
                partition
                    .labels()
                    .iter()
                    .map(|&c| if treated_cluster[c] { Arm::Treatment } else { Arm::Control })
                    .collect(),
            ))
        }
    }
}

/// Ratio-of-lifts estimate from one experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate<T> {
    /// `(treated_outcome / treated_base) / (control_outcome / control_base) - 1`
    pub lift: T,
    pub treated_outcome: T,
    pub control_outcome: T,
    pub treated_base: T,
    pub control_base: T,
}

/// Runs one experiment: treated articles get the policy multiplier, control
/// articles keep their price, and demand is evaluated jointly.
pub fn run_experiment<T: Scalar>(
    system: &DemandSystem<T>,
    assignment: &Assignment,
    policy: &PricePolicy<T>,
    metric: Metric,
) -> Result<Estimate<T>> {
    check_assignment(system, assignment)?;
    PricePolicy::new(policy.treated_multiplier)?;
    Ok(evaluate(system, assignment, policy, metric, None::<(&mut rand_chacha::ChaCha8Rng, T)>))
}

fn check_assignment<T: Scalar>(system: &DemandSystem<T>, assignment: &Assignment) -> Result<()> {
    if assignment.n() != system.n() {
        return Err(LabError::input(format!(
            "assignment covers {} articles, system has {}",
            assignment.n(),
            system.n()
        )));
    }
    let treated = assignment.n_treated();
    if treated == 0 || treated == assignment.n() {
        return Err(LabError::input("both experiment arms must be non-empty"));
    }
    Ok(())
}

/// Core estimator. With `noise = Some((rng, sd))` each article's observed
/// quantity is multiplied by an independent mean-one lognormal factor.
fn evaluate<T: Scalar, R: Rng>(
    system: &DemandSystem<T>,
    assignment: &Assignment,
    policy: &PricePolicy<T>,
    metric: Metric,
    mut noise: Option<(&mut R, T)>,
) -> Estimate<T> {
    let m = policy.treated_multiplier;
    let multipliers: Vec<T> = assignment
        .labels()
        .iter()
        .map(|a| if *a == Arm::Treatment { m } else { T::one() })
        .collect();
    let quantities = system.demand_unchecked(&multipliers);
    let (mut yt, mut yc, mut bt, mut bc) = (T::zero(), T::zero(), T::zero(), T::zero());
    for (i, (&mu, &q)) in multipliers.iter().zip(&quantities).enumerate() {
        let q = match noise.as_mut() {
            Some((rng, sd)) => {
                let z: f64 = StandardNormal.sample(&mut **rng);
                q * (*sd * T::lit(z) - *sd * *sd / T::lit(2.0)).exp()
            }
            None => q,
        };
        let y = system.outcome_of(metric, i, mu, q);
        let y0 = system.base_outcome(metric, i);
        match assignment.arm(i) {
            Arm::Treatment => {
                yt += y;
                bt += y0;
            }
            Arm::Control => {
                yc += y;
                bc += y0;
            }
        }
    }
    Estimate {
        lift: (yt / bt) / (yc / bc) - T::one(),
        treated_outcome: yt,
        control_outcome: yc,
        treated_base: bt,
        control_base: bc,
    }
}

/// Whether bias fields are relative to `|gte|` or absolute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BiasScale {
    Relative,
    /// `|gte|` fell below [`GTE_ZERO_TOLERANCE`].
    Absolute,
}

/// Monte-Carlo distribution of experiment estimates against the exact
/// global treatment effect.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasReport<T> {
    pub gte: T,
    pub mean_estimate: T,
    /// `(mean_estimate - gte) / |gte|`, or the absolute difference when
    /// `scale` is [`BiasScale::Absolute`].
    pub mean_bias: T,
    pub sd_estimate: T,
    /// `sd_estimate / |gte|`, or `sd_estimate` when absolute.
    pub relative_sd: T,
    pub q05: T,
    pub q50: T,
    pub q95: T,
    pub p: usize,
    pub seed: u64,
    pub scale: BiasScale,
}

impl<T: Scalar> BiasReport<T> {
    /// Monte-Carlo standard error of `mean_bias`, on the same scale.
    pub fn bias_standard_error(&self) -> T {
        self.relative_sd / count::<T>(self.p).sqrt()
    }

    pub fn from_estimates(gte: T, estimates: &[T], seed: u64) -> Result<Self> {
        let p = estimates.len();
        if p < 2 {
            return Err(LabError::input("need at least 2 permutations"));
        }
        let mean = estimates.iter().copied().sum::<T>() / count(p);
        let var = estimates.iter().map(|&e| (e - mean) * (e - mean)).sum::<T>() / count(p - 1);
        let sd = var.sqrt();
        let mut sorted = estimates.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("estimates are finite"));
        let (scale, denom) = if gte.abs() < T::lit(GTE_ZERO_TOLERANCE) {
            (BiasScale::Absolute, T::one())
        } else {
            (BiasScale::Relative, gte.abs())
        };
        Ok(BiasReport {
            gte,
            mean_estimate: mean,
            mean_bias: (mean - gte) / denom,
            sd_estimate: sd,
            relative_sd: sd / denom,
            q05: nearest_rank(&sorted, 0.05),
            q50: nearest_rank(&sorted, 0.50),
            q95: nearest_rank(&sorted, 0.95),
            p,
            seed,
            scale,
        })
    }
}

/// Nearest-rank quantile of an ascending slice.
pub fn nearest_rank<T: Copy>(sorted: &[T], q: f64) -> T {
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Estimates from `p` independent assignments; replicate `k` draws from the
/// stream keyed by `(master_seed, k)`, so the output does not depend on the
/// rayon pool size.
pub fn permutation_estimates<T: Scalar>(
    system: &DemandSystem<T>,
    strategy: &RandomizationStrategy,
    policy: &PricePolicy<T>,
    metric: Metric,
    p: usize,
    master_seed: u64,
) -> Result<Vec<T>> {
    PricePolicy::new(policy.treated_multiplier)?;
    (0..p as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = rng::stream(master_seed, Domain::Assignment, k);
            let a = assign(strategy, system.n(), &mut rng)?;
            check_assignment(system, &a)?;
            Ok(evaluate(system, &a, policy, metric, None::<(&mut rand_chacha::ChaCha8Rng, T)>).lift)
        })
        .collect()
}

pub fn monte_carlo_bias<T: Scalar>(
    system: &DemandSystem<T>,
    strategy: &RandomizationStrategy,
    policy: &PricePolicy<T>,
    metric: Metric,
    p: usize,
    master_seed: u64,
) -> Result<BiasReport<T>> {
    if p < 2 {
        return Err(LabError::input("need at least 2 permutations"));
    }
    let gte = system.global_treatment_effect(policy, metric)?;
    let estimates = permutation_estimates(system, strategy, policy, metric, p, master_seed)?;
    BiasReport::from_estimates(gte, &estimates, master_seed)
}

/// Strategy choice for a substitution sweep. Cluster randomization uses the
/// freshly generated system's own similarity clusters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepStrategy {
    Article,
    Cluster,
}

impl fmt::Display for SweepStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepStrategy::Article => "article",
            SweepStrategy::Cluster => "cluster",
        })
    }
}

impl FromStr for SweepStrategy {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "article" => Ok(SweepStrategy::Article),
            "cluster" => Ok(SweepStrategy::Cluster),
            other => Err(LabError::input(format!(
                "unknown strategy `{other}` (expected article or cluster)"
            ))),
        }
    }
}

impl SweepStrategy {
    pub fn resolve<T>(self, system: &DemandSystem<T>) -> RandomizationStrategy {
        match self {
            SweepStrategy::Article => RandomizationStrategy::ArticleLevel,
            SweepStrategy::Cluster => {
                RandomizationStrategy::ClusterLevel(system.elasticity.partition.clone())
            }
        }
    }
}

/// One row of a bias table.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow<T> {
    pub phi: f64,
    pub strategy: String,
    pub report: BiasReport<T>,
}

/// Header of every bias CSV.
pub const BIAS_CSV_HEADER: [&str; 12] = [
    "phi",
    "strategy",
    "gte",
    "mean_estimate",
    "mean_bias",
    "sd_estimate",
    "relative_sd",
    "q05",
    "q50",
    "q95",
    "p",
    "seed",
];

/// Bias sweep over within-cluster substitution strengths. Every phi reuses
/// `seed` for both generation and assignment, so rows differ only in phi.
pub fn sweep_substitution<T: Scalar>(
    template: &GeneratorConfig,
    phis: &[f64],
    strategies: &[SweepStrategy],
    policy: &PricePolicy<T>,
    metric: Metric,
    p: usize,
    seed: u64,
) -> Result<Vec<SweepRow<T>>> {
    if let Some(phi) = phis.iter().find(|phi| !(0.0..1.0).contains(*phi)) {
        return Err(LabError::config(format!("phi {phi} outside [0, 1)")));
    }
    let mut rows = Vec::with_capacity(phis.len() * strategies.len());
    for &phi in phis {
        let config = GeneratorConfig {
            within_share: phi,
            ..template.clone()
        };
        let system = generate_demand_system::<T>(&config, seed)?;
        for &strategy in strategies {
            let report = monte_carlo_bias(&system, &strategy.resolve(&system), policy, metric, p, seed)?;
            rows.push(SweepRow {
                phi,
                strategy: strategy.to_string(),
                report,
            });
        }
    }
    Ok(rows)
}

pub fn write_bias_csv<T: Scalar, W: Write>(rows: &[SweepRow<T>], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(BIAS_CSV_HEADER)?;
    for row in rows {
        let r = &row.report;
        let f = |x: T| csvfmt::float(x.to_f64_lossy());
        w.write_record([
            csvfmt::float(row.phi),
            row.strategy.clone(),
            f(r.gte),
            f(r.mean_estimate),
            f(r.mean_bias),
            f(r.sd_estimate),
            f(r.relative_sd),
            f(r.q05),
            f(r.q50),
            f(r.q95),
            r.p.to_string(),
            r.seed.to_string(),
        ])?;
    }
    w.flush().map_err(|e| LabError::io("<bias csv>", e))?;
    Ok(())
}

/// Naive-interval coverage when variance is calibrated on A/A runs.
///
/// Observation noise is multiplicative, so every quantity here lives on the
/// log-lift scale `ln(1 + lift)`, where A/A dispersion carries over to
/// treated runs unchanged in the absence of interference.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageReport<T> {
    /// Standard deviation of null-policy log-lifts across assignments.
    pub aa_sd: T,
    /// Share of treated runs whose `ln(1 + estimate) +- 1.96 * aa_sd`
    /// covers `ln(1 + gte)`.
    pub coverage_rate: T,
    /// Mean of `(ln(1 + estimate) - ln(1 + gte)) / aa_sd`.
    pub mean_z: T,
    pub gte: T,
    pub noise_sd: T,
    pub p: usize,
    pub seed: u64,
}

pub const COVERAGE_CSV_HEADER: [&str; 7] =
    ["aa_sd", "coverage_rate", "mean_z", "gte", "noise_sd", "p", "seed"];

/// Calibrates the estimator's standard deviation on `p` A/A runs (multiplier
/// 1 everywhere, lognormal demand noise only) and checks how often naive
/// 95% intervals of `p` treated runs cover the true global effect.
///
/// Interference is absent from A/A runs by construction, so any dispersion
/// or shift it causes in treated runs is invisible to the calibration.
pub fn coverage_analysis<T: Scalar>(
    system: &DemandSystem<T>,
    strategy: &RandomizationStrategy,
    policy: &PricePolicy<T>,
    metric: Metric,
    p: usize,
    seed: u64,
    noise_sd: T,
) -> Result<CoverageReport<T>> {
    if p < 2 {
        return Err(LabError::input("need at least 2 permutations"));
    }
    if !(noise_sd.is_finite() && noise_sd >= T::zero()) {
        return Err(LabError::input("noise_sd must be finite and non-negative"));
    }
    PricePolicy::new(policy.treated_multiplier)?;
    let gte = system.global_treatment_effect(policy, metric)?;
    let null = PricePolicy::null();

    let run = |domain: Domain, policy: &PricePolicy<T>| -> Result<Vec<T>> {
        (0..p as u64)
            .into_par_iter()
            .map(|k| {
                let mut rng = rng::stream(seed, domain, k);
                let a = assign(strategy, system.n(), &mut rng)?;
                check_assignment(system, &a)?;
                Ok(evaluate(system, &a, policy, metric, Some((&mut rng, noise_sd))).lift)
            })
            .collect()
    };
    let aa = run(Domain::AaCalibration, &null)?;
    let treated = run(Domain::Assignment, policy)?;

    let aa: Vec<T> = aa.iter().map(|e| e.ln_1p()).collect();
    let aa_mean = aa.iter().copied().sum::<T>() / count(p);
    let aa_sd = (aa.iter().map(|&e| (e - aa_mean) * (e - aa_mean)).sum::<T>() / count(p - 1)).sqrt();
    if aa_sd <= T::zero() {
        return Err(LabError::input(
            "A/A standard deviation is zero, coverage is undefined (set a positive noise_sd)",
        ));
    }
    let target = gte.ln_1p();
    let z: Vec<T> = treated.iter().map(|&e| (e.ln_1p() - target) / aa_sd).collect();
    let covered = z.iter().filter(|zk| zk.abs() <= T::lit(Z_95)).count();
    Ok(CoverageReport {
        aa_sd,
        coverage_rate: count::<T>(covered) / count(p),
        mean_z: z.iter().copied().sum::<T>() / count(p),
        gte,
        noise_sd,
        p,
        seed,
    })
}

pub fn write_coverage_csv<T: Scalar, W: Write>(report: &CoverageReport<T>, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(COVERAGE_CSV_HEADER)?;
    let f = |x: T| csvfmt::float(x.to_f64_lossy());
    w.write_record([
        f(report.aa_sd),
        f(report.coverage_rate),
        f(report.mean_z),
        f(report.gte),
        f(report.noise_sd),
        report.p.to_string(),
        report.seed.to_string(),
    ])?;
    w.flush().map_err(|e| LabError::io("<coverage csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demand::ElasticityStructure;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pair() -> DemandSystem<f64> {
        let e = ElasticityStructure::new(
            vec![-2.0, -2.0],
            vec![0.5],
            0.0,
            Partition::single_cluster(2).unwrap(),
        )
        .unwrap();
        DemandSystem::new(vec![1.0, 1.0], vec![1.0, 1.0], e).unwrap()
    }

    fn cfg(n: usize, phi: f64, phi_bg: f64) -> GeneratorConfig {
        GeneratorConfig {
            n,
            within_share: phi,
            background_share: phi_bg,
            ..GeneratorConfig::default()
        }
    }

    #[test]
    fn article_level_is_balanced() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = assign(&RandomizationStrategy::ArticleLevel, 4, &mut rng).unwrap();
        assert_eq!(a.n_treated(), 2);
        let a = assign(&RandomizationStrategy::ArticleLevel, 5, &mut rng).unwrap();
        assert_eq!(a.n_treated(), 2);
    }

    #[test]
    fn article_level_differs_across_seeds() {
        let s = RandomizationStrategy::ArticleLevel;
        let a = assign(&s, 10_000, &mut rng::stream(1, Domain::Assignment, 0)).unwrap();
        let b = assign(&s, 10_000, &mut rng::stream(2, Domain::Assignment, 0)).unwrap();
        assert_eq!(a.n_treated(), 5000);
        assert_eq!(b.n_treated(), 5000);
        assert_ne!(a, b);
    }

    #[test]
    fn cluster_level_labels_are_constant_within_clusters() {
        let part = Partition::new(vec![0, 0, 1, 1]).unwrap();
        let s = RandomizationStrategy::ClusterLevel(part);
        for seed in 0..20 {
            let a = assign(&s, 4, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            assert_eq!(a.arm(0), a.arm(1));
            assert_eq!(a.arm(2), a.arm(3));
            assert_ne!(a.arm(0), a.arm(2));
        }
    }

    #[test]
    fn assign_rejects_degenerate_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(assign(&RandomizationStrategy::ArticleLevel, 1, &mut rng).is_err());
        let one = RandomizationStrategy::ClusterLevel(Partition::single_cluster(4).unwrap());
        assert!(assign(&one, 4, &mut rng).is_err());
        let short = RandomizationStrategy::ClusterLevel(Partition::singletons(3).unwrap());
        assert!(assign(&short, 4, &mut rng).is_err());
    }

    #[test]
    fn null_policy_has_zero_lift() {
        let s: DemandSystem<f64> = generate_demand_system(&cfg(300, 0.4, 0.1), 2).unwrap();
        let a = assign(&RandomizationStrategy::ArticleLevel, 300, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        for metric in [Metric::Units, Metric::Revenue] {
            let e = run_experiment(&s, &a, &PricePolicy::null(), metric).unwrap();
            assert_eq!(e.lift, 0.0);
        }
    }

    #[test]
    fn pair_experiment_closed_form() {
        let s = pair();
        let a = Assignment::from_treated(2, [0]);
        let e = run_experiment(&s, &a, &PricePolicy::new(0.9).unwrap(), Metric::Units).unwrap();
        let expected = 0.9f64.powf(-2.0) / 0.9f64.powf(0.5) - 1.0;
        assert_relative_eq!(e.lift, expected, max_relative = 1e-13);
        assert_relative_eq!(e.lift, 0.301349, epsilon = 1e-6);
        assert_eq!(e.treated_base, 1.0);
        assert_eq!(e.control_base, 1.0);
    }

    #[test]
    fn label_swap_with_inverse_policy_gives_reciprocal_complement() {
        let s = pair();
        let a = Assignment::from_treated(2, [0]);
        for m in [0.9, 0.8, 1.25] {
            let fwd = run_experiment(&s, &a, &PricePolicy::new(m).unwrap(), Metric::Units).unwrap();
            let back = run_experiment(&s, &a.flipped(), &PricePolicy::new(1.0 / m).unwrap(), Metric::Units)
                .unwrap();
            assert_relative_eq!(back.lift, 1.0 / (1.0 + fwd.lift) - 1.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn no_interference_lift_is_own_effect_only() {
        let s: DemandSystem<f64> = generate_demand_system(&cfg(200, 0.0, 0.0), 4).unwrap();
        let a = assign(&RandomizationStrategy::ArticleLevel, 200, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let m = 0.9f64;
        let e = run_experiment(&s, &a, &PricePolicy::new(m).unwrap(), Metric::Units).unwrap();
        assert_relative_eq!(e.control_outcome, e.control_base, max_relative = 1e-14);
        let treated: Vec<usize> = (0..200).filter(|&i| a.arm(i) == Arm::Treatment).collect();
        let oracle: f64 = treated
            .iter()
            .map(|&i| s.base_quantities[i] * m.powf(s.elasticity.own[i]))
            .sum::<f64>()
            / treated.iter().map(|&i| s.base_quantities[i]).sum::<f64>()
            - 1.0;
        assert_relative_eq!(e.lift, oracle, max_relative = 1e-12);
    }

    #[test]
    fn run_experiment_rejects_empty_arm() {
        let s = pair();
        let all = Assignment::from_treated(2, [0, 1]);
        assert!(run_experiment(&s, &all, &PricePolicy::new(0.9).unwrap(), Metric::Units).is_err());
        let none = Assignment::from_treated(2, []);
        assert!(run_experiment(&s, &none, &PricePolicy::new(0.9).unwrap(), Metric::Units).is_err());
    }

    #[test]
    fn pair_monte_carlo_bias() {
        let s = pair();
        let r = monte_carlo_bias(
            &s,
            &RandomizationStrategy::ArticleLevel,
            &PricePolicy::new(0.9).unwrap(),
            Metric::Units,
            50,
            1,
        )
        .unwrap();
        let estimate = 0.9f64.powf(-2.5) - 1.0;
        let gte = 0.9f64.powf(-1.5) - 1.0;
        assert_relative_eq!(r.mean_estimate, estimate, epsilon = 1e-12);
        assert_relative_eq!(r.gte, gte, epsilon = 1e-12);
        assert_relative_eq!(r.mean_bias, (estimate - gte) / gte, epsilon = 1e-12);
        assert_relative_eq!(r.mean_bias, 0.7600, epsilon = 1e-4);
        assert!(r.sd_estimate < 1e-12);
        assert_eq!(r.scale, BiasScale::Relative);
    }

    #[test]
    fn null_policy_reports_absolute_bias() {
        let s = pair();
        let r = monte_carlo_bias(&s, &RandomizationStrategy::ArticleLevel, &PricePolicy::null(), Metric::Units, 4, 0)
            .unwrap();
        assert_eq!(r.scale, BiasScale::Absolute);
        assert_eq!(r.mean_bias, 0.0);
    }

    #[test]
    fn quantiles_are_nearest_rank_and_ordered() {
        let v: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(nearest_rank(&v, 0.05), 1.0);
        assert_eq!(nearest_rank(&v, 0.5), 10.0);
        assert_eq!(nearest_rank(&v, 0.95), 19.0);
        let r = BiasReport::from_estimates(1.0, &[3.0, 1.0, 2.0], 0).unwrap();
        assert!(r.q05 <= r.q50 && r.q50 <= r.q95);
        assert!(BiasReport::from_estimates(1.0, &[3.0], 0).is_err());
    }

    #[test]
    fn monte_carlo_is_independent_of_pool_size() {
        let s: DemandSystem<f64> = generate_demand_system(&cfg(2000, 0.3, 0.05), 5).unwrap();
        let policy = PricePolicy::new(0.95).unwrap();
        let go = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| monte_carlo_bias(&s, &RandomizationStrategy::ArticleLevel, &policy, Metric::Revenue, 64, 9))
                .unwrap()
        };
        let one = go(1);
        let eight = go(8);
        assert_eq!(one.mean_estimate.to_bits(), eight.mean_estimate.to_bits());
        assert_eq!(one.sd_estimate.to_bits(), eight.sd_estimate.to_bits());
    }

    #[test]
    fn positive_bias_under_substitution() {
        let s: DemandSystem<f64> = generate_demand_system(&cfg(2000, 0.3, 0.05), 5).unwrap();
        let r = monte_carlo_bias(
            &s,
            &RandomizationStrategy::ArticleLevel,
            &PricePolicy::new(0.95).unwrap(),
            Metric::Units,
            200,
            3,
        )
        .unwrap();
        assert!(r.mean_bias > 3.0 * r.bias_standard_error());
    }

    #[test]
    fn residual_bias_with_background_under_true_clusters() {
        let s: DemandSystem<f64> = generate_demand_system(&cfg(2000, 0.3, 0.2), 5).unwrap();
        let strategy = RandomizationStrategy::ClusterLevel(s.partition().clone());
        let r = monte_carlo_bias(&s, &strategy, &PricePolicy::new(0.95).unwrap(), Metric::Units, 200, 3).unwrap();
        assert!(r.mean_bias > 3.0 * r.bias_standard_error());
    }

    #[test]
    fn sweep_row_order_and_count() {
        let rows = sweep_substitution(
            &cfg(400, 0.0, 0.0),
            &[0.0, 0.2, 0.4],
            &[SweepStrategy::Article, SweepStrategy::Cluster],
            &PricePolicy::new(0.95).unwrap(),
            Metric::Revenue,
            20,
            1,
        )
        .unwrap();
        let keys: Vec<(f64, &str)> = rows.iter().map(|r| (r.phi, r.strategy.as_str())).collect();
        assert_eq!(
            keys,
            vec![
                (0.0, "article"),
                (0.0, "cluster"),
                (0.2, "article"),
                (0.2, "cluster"),
                (0.4, "article"),
                (0.4, "cluster")
            ]
        );
        assert!(sweep_substitution(&cfg(10, 0.0, 0.0), &[1.0], &[SweepStrategy::Article],
            &PricePolicy::new(0.9).unwrap(), Metric::Units, 2, 0).is_err());
    }

    #[test]
    fn bias_csv_header_and_shape() {
        let report = BiasReport::from_estimates(0.1, &[0.2, 0.3], 5).unwrap();
        let rows = vec![SweepRow { phi: 0.25, strategy: "article".into(), report }];
        let mut buf = Vec::new();
        write_bias_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), BIAS_CSV_HEADER.join(","));
        let fields: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(fields.len(), 12);
        assert_eq!(fields[0], "2.5000000000000000e-1");
        assert_eq!(fields[10], "2");
    }

    #[test]
    fn coverage_null_policy_has_centered_z() {
        let s: DemandSystem<f64> = generate_demand_system(&cfg(500, 0.3, 0.0), 5).unwrap();
        let r = coverage_analysis(&s, &RandomizationStrategy::ArticleLevel, &PricePolicy::null(), Metric::Revenue, 400, 2, 0.05)
            .unwrap();
        assert!(r.mean_z.abs() < 0.2, "mean_z = {}", r.mean_z);
        assert!(r.coverage_rate > 0.9);
    }

    #[test]
    fn coverage_requires_noise() {
        let s: DemandSystem<f64> = generate_demand_system(&cfg(100, 0.3, 0.0), 5).unwrap();
        let err = coverage_analysis(&s, &RandomizationStrategy::ArticleLevel, &PricePolicy::new(0.9).unwrap(), Metric::Units, 10, 2, 0.0)
            .unwrap_err();
        assert!(err.to_string().contains("coverage is undefined"));
    }
}
