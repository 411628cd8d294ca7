//! Demand systems with clustered cross-price elasticities.
//!
//! Demand is constant-elasticity: with `l_j = ln(mu_j)` the log price
//! multiplier of article `j`,
//!
//! ```text
//! q_i(mu) = q0_i * exp( sum_j E_ij * l_j )
//! ```
//!
//! The elasticity matrix `E` is never materialized. It is stored as an own
//! elasticity per article, one within-cluster cross elasticity per cluster
//! and a single background cross elasticity, which makes evaluation O(n).

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::partition::Partition;
use crate::rng::{self, Domain};
use crate::scalar::Scalar;

/// Largest system the dense oracle will materialize.
pub const DENSE_ORACLE_LIMIT: usize = 2000;

/// Sampling unit of own-price elasticities. Either way each article's own
/// elasticity is uniform on `own_mean +- own_spread`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OwnDraw {
    /// Members of a similarity cluster share one draw.
    #[default]
    PerCluster,
    /// Independent draw for every article.
    PerArticle,
}

/// Parameters of the random demand-system generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub n: usize,
    pub cluster_size_min: usize,
    pub cluster_size_max: usize,
    pub own_mean: f64,
    pub own_spread: f64,
    /// Whether own elasticities are drawn once per cluster or per article.
    pub own_draw: OwnDraw,
    /// Within-cluster substitution mass as a fraction of `|own_mean|`.
    pub within_share: f64,
    /// Cross-cluster substitution mass as a fraction of `|own_mean|`.
    pub background_share: f64,
    pub price_min: f64,
    pub price_max: f64,
    pub quantity_min: f64,
    pub quantity_max: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n: 10_000,
            cluster_size_min: 2,
            cluster_size_max: 20,
            own_mean: -2.5,
            own_spread: 0.5,
            own_draw: OwnDraw::PerCluster,
            within_share: 0.3,
            background_share: 0.0,
            price_min: 10.0,
            price_max: 100.0,
            quantity_min: 1.0,
            quantity_max: 100.0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(LabError::config(msg));
        if self.n == 0 {
            return fail("n must be at least 1");
        }
        if self.cluster_size_min == 0 || self.cluster_size_max < self.cluster_size_min {
            return fail("cluster sizes need 1 <= cluster_size_min <= cluster_size_max");
        }
        if !(self.own_mean.is_finite() && self.own_spread.is_finite()) || self.own_spread < 0.0 {
            return fail("own_mean and own_spread must be finite with own_spread >= 0");
        }
        if self.own_mean + self.own_spread >= 0.0 {
            return fail("own_mean + own_spread must be negative");
        }
        let share_ok = |s: f64| (0.0..1.0).contains(&s);
        if !share_ok(self.within_share) || !share_ok(self.background_share) {
            return fail("within_share and background_share must lie in [0, 1)");
        }
        if self.within_share + self.background_share >= 1.0 {
            return fail("within_share + background_share must be below 1");
        }
        let range_ok = |lo: f64, hi: f64| lo.is_finite() && hi.is_finite() && lo > 0.0 && hi >= lo;
        if !range_ok(self.price_min, self.price_max) {
            return fail("price range must satisfy 0 < price_min <= price_max");
        }
        if !range_ok(self.quantity_min, self.quantity_max) {
            return fail("quantity range must satisfy 0 < quantity_min <= quantity_max");
        }
        Ok(())
    }
}

/// Structured elasticity matrix.
///
/// `E_ii = own[i]`, `E_ij = within[c]` when `i != j` share cluster `c`,
/// and `E_ij = background` otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct ElasticityStructure<T> {
    pub own: Vec<T>,
    pub within: Vec<T>,
    pub background: T,
    pub partition: Partition,
}

impl<T: Scalar> ElasticityStructure<T> {
    pub fn new(own: Vec<T>, within: Vec<T>, background: T, partition: Partition) -> Result<Self> {
        if own.len() != partition.n() {
            return Err(LabError::input(format!(
                "{} own elasticities for {} articles",
                own.len(),
                partition.n()
            )));
        }
        if within.len() != partition.n_clusters() {
            return Err(LabError::input(format!(
                "{} within-cluster elasticities for {} clusters",
                within.len(),
                partition.n_clusters()
            )));
        }
        if let Some(i) = own.iter().position(|&e| !(e.is_finite() && e < T::zero())) {
            return Err(LabError::input(format!(
                "own-price elasticity of article {i} must be negative"
            )));
        }
        if let Some(c) = within.iter().position(|&b| !(b.is_finite() && b >= T::zero())) {
            return Err(LabError::input(format!(
                "within-cluster elasticity of cluster {c} must be non-negative"
            )));
        }
        if !(background.is_finite() && background >= T::zero()) {
            return Err(LabError::input("background elasticity must be non-negative"));
        }
        Ok(ElasticityStructure {
            own,
            within,
            background,
            partition,
        })
    }

    pub fn n(&self) -> usize {
        self.own.len()
    }

    /// Entry `E_ij` of the implied dense matrix.
    pub fn entry(&self, i: usize, j: usize) -> T {
        if i == j {
            self.own[i]
        } else if self.partition.cluster_of(i) == self.partition.cluster_of(j) {
            self.within[self.partition.cluster_of(i)]
        } else {
            self.background
        }
    }

    /// `sum_j E_ij`: the log-lift exponent of article `i` under a uniform
    /// multiplier. O(n), since it recounts the cluster size.
    pub fn row_sum(&self, i: usize) -> T {
        let c = self.partition.cluster_of(i);
        let size = self.partition.labels().iter().filter(|&&x| x == c).count();
        let size = T::lit(size as f64);
        let n = T::lit(self.n() as f64);
        self.own[i] + self.within[c] * (size - T::one()) + self.background * (n - size)
    }

    /// True when every within-cluster elasticity of a non-singleton cluster
    /// is at least the background elasticity and positive.
    pub fn is_sharply_differentiated(&self) -> bool {
        self.partition
            .sizes()
            .iter()
            .zip(&self.within)
            .all(|(&s, &b)| s == 1 || (b >= self.background && b > T::zero()))
    }
}

/// Price multiplier applied to treated articles; control keeps multiplier 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PricePolicy<T> {
    pub treated_multiplier: T,
}

impl<T: Scalar> PricePolicy<T> {
    pub fn new(treated_multiplier: T) -> Result<Self> {
        if !(treated_multiplier.is_finite() && treated_multiplier > T::zero()) {
            return Err(LabError::input("treated multiplier must be positive and finite"));
        }
        Ok(PricePolicy { treated_multiplier })
    }

    pub fn null() -> Self {
        PricePolicy {
            treated_multiplier: T::one(),
        }
    }

    pub fn is_intervention(&self) -> bool {
        self.treated_multiplier != T::one()
    }
}

/// Commercial outcome an experiment measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Units,
    Revenue,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Units => "units",
            Metric::Revenue => "revenue",
        })
    }
}

impl FromStr for Metric {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "units" => Ok(Metric::Units),
            "revenue" => Ok(Metric::Revenue),
            other => Err(LabError::input(format!(
                "unknown metric `{other}` (expected units or revenue)"
            ))),
        }
    }
}

/// How a generated system was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub config: GeneratorConfig,
}

/// Base prices and quantities plus the elasticity structure. Every
/// counterfactual outcome follows from these.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandSystem<T> {
    pub base_prices: Vec<T>,
    pub base_quantities: Vec<T>,
    pub elasticity: ElasticityStructure<T>,
    pub provenance: Option<Provenance>,
}

impl<T: Scalar> DemandSystem<T> {
    pub fn new(
        base_prices: Vec<T>,
        base_quantities: Vec<T>,
        elasticity: ElasticityStructure<T>,
    ) -> Result<Self> {
        let n = elasticity.n();
        if base_prices.len() != n || base_quantities.len() != n {
            return Err(LabError::input(format!(
                "expected {n} base prices and quantities, got {} and {}",
                base_prices.len(),
                base_quantities.len()
            )));
        }
        let positive = |v: &[T]| v.iter().all(|&x| x.is_finite() && x > T::zero());
        if !positive(&base_prices) || !positive(&base_quantities) {
            return Err(LabError::input(
                "base prices and quantities must be strictly positive",
            ));
        }
        Ok(DemandSystem {
            base_prices,
            base_quantities,
            elasticity,
            provenance: None,
        })
    }

    pub fn n(&self) -> usize {
        self.base_prices.len()
    }

    pub fn partition(&self) -> &Partition {
        &self.elasticity.partition
    }

    fn check_multipliers(&self, multipliers: &[T]) -> Result<()> {
        if multipliers.len() != self.n() {
            return Err(LabError::input(format!(
                "expected {} multipliers, got {}",
                self.n(),
                multipliers.len()
            )));
        }
        if let Some(i) = multipliers
            .iter()
            .position(|&m| !(m.is_finite() && m > T::zero()))
        {
            return Err(LabError::input(format!(
                "multiplier of article {i} must be positive and finite"
            )));
        }
        Ok(())
    }

    /// Quantities demanded under per-article price multipliers.
    pub fn demand_at(&self, multipliers: &[T]) -> Result<Vec<T>> {
        self.check_multipliers(multipliers)?;
        Ok(self.demand_unchecked(multipliers))
    }

    pub(crate) fn demand_unchecked(&self, multipliers: &[T]) -> Vec<T> {
        let e = &self.elasticity;
        let part = &e.partition;
        let logs: Vec<T> = multipliers.iter().map(|m| m.ln()).collect();
        let mut cluster_sum = vec![T::zero(); part.n_clusters()];
        for (i, &l) in logs.iter().enumerate() {
            cluster_sum[part.cluster_of(i)] += l;
        }
        let total: T = cluster_sum.iter().copied().sum();
        logs.iter()
            .enumerate()
            .map(|(i, &l)| {
                let c = part.cluster_of(i);
                let exponent = e.own[i] * l
                    + e.within[c] * (cluster_sum[c] - l)
                    + e.background * (total - cluster_sum[c]);
                self.base_quantities[i] * exponent.exp()
            })
            .collect()
    }

    /// Per-article outcome at baseline prices.
    pub fn base_outcome(&self, metric: Metric, article: usize) -> T {
        match metric {
            Metric::Units => self.base_quantities[article],
            Metric::Revenue => self.base_prices[article] * self.base_quantities[article],
        }
    }

    /// Per-article outcome given multiplier and quantity at that multiplier.
    #[inline]
    pub(crate) fn outcome_of(&self, metric: Metric, article: usize, multiplier: T, quantity: T) -> T {
        match metric {
            Metric::Units => quantity,
            Metric::Revenue => multiplier * self.base_prices[article] * quantity,
        }
    }

    /// Aggregate outcome over `subset` under `multipliers`.
    pub fn outcome(&self, multipliers: &[T], metric: Metric, subset: &[usize]) -> Result<T> {
        if subset.is_empty() {
            return Err(LabError::input("outcome subset must be non-empty"));
        }
        if let Some(&i) = subset.iter().find(|&&i| i >= self.n()) {
            return Err(LabError::input(format!("article {i} out of range")));
        }
        let q = self.demand_at(multipliers)?;
        Ok(subset
            .iter()
            .map(|&i| self.outcome_of(metric, i, multipliers[i], q[i]))
            .sum())
    }

    /// Relative outcome lift if `policy` were rolled out to every article.
    pub fn global_treatment_effect(&self, policy: &PricePolicy<T>, metric: Metric) -> Result<T> {
        PricePolicy::new(policy.treated_multiplier)?;
        let all: Vec<usize> = (0..self.n()).collect();
        let treated = vec![policy.treated_multiplier; self.n()];
        let base = vec![T::one(); self.n()];
        let after = self.outcome(&treated, metric, &all)?;
        let before = self.outcome(&base, metric, &all)?;
        Ok(after / before - T::one())
    }

    /// Writes the JSON document form.
    pub fn write_json<W: Write>(&self, writer: W) -> Result<()> {
        serde_json::to_writer_pretty(writer, &SystemDocument::from(self))?;
        Ok(())
    }

    pub fn read_json<R: Read>(reader: R) -> Result<Self> {
        let doc: SystemDocument<T> = serde_json::from_reader(reader)?;
        doc.try_into()
    }
}

/// Reference evaluation that materializes every entry of `E`:
/// `q_i = q0_i * prod_j mu_j^E_ij`.
pub fn dense_oracle<T: Scalar>(system: &DemandSystem<T>, multipliers: &[T]) -> Result<Vec<T>> {
    let n = system.n();
    if n > DENSE_ORACLE_LIMIT {
        return Err(LabError::OracleTooLarge {
            n,
            limit: DENSE_ORACLE_LIMIT,
        });
    }
    system.check_multipliers(multipliers)?;
    Ok((0..n)
        .map(|i| {
            let factor = (0..n).fold(T::one(), |acc, j| {
                acc * multipliers[j].powf(system.elasticity.entry(i, j))
            });
            system.base_quantities[i] * factor
        })
        .collect())
}

/// Draws a demand system. Deterministic in `(config, seed)`.
///
/// Cluster sizes are uniform on `[cluster_size_min, cluster_size_max]` with
/// the last cluster truncated to fit. Within-cluster elasticities are
/// normalized by `size - 1` so each article receives substitution mass
/// `within_share * |own_mean|` regardless of its cluster size.
pub fn generate_demand_system<T: Scalar>(
    config: &GeneratorConfig,
    seed: u64,
) -> Result<DemandSystem<T>> {
    config.validate()?;
    let mut rng = rng::stream(seed, Domain::Generator, 0);
    let n = config.n;

    let mut sizes = Vec::new();
    let mut remaining = n;
    while remaining > 0 {
        let s = rng
            .random_range(config.cluster_size_min..=config.cluster_size_max)
            .min(remaining);
        sizes.push(s);
        remaining -= s;
    }
    let partition = Partition::from_sizes(&sizes)?;

    let scale = config.own_mean.abs();
    let within = sizes
        .iter()
        .map(|&s| {
            if s > 1 {
                T::lit(config.within_share * scale / (s - 1) as f64)
            } else {
                T::zero()
            }
        })
        .collect();
    let background = T::lit(config.background_share * scale / n as f64);

    let mut uniform = |lo: f64, hi: f64| lo + (hi - lo) * rng.random::<f64>();
    let (own_lo, own_hi) = (
        config.own_mean - config.own_spread,
        config.own_mean + config.own_spread,
    );
    let own = match config.own_draw {
        OwnDraw::PerArticle => (0..n).map(|_| T::lit(uniform(own_lo, own_hi))).collect(),
        OwnDraw::PerCluster => {
            let per_cluster: Vec<f64> = sizes.iter().map(|_| uniform(own_lo, own_hi)).collect();
            partition
                .labels()
                .iter()
                .map(|&c| T::lit(per_cluster[c]))
                .collect()
        }
    };
    let base_prices = (0..n)
        .map(|_| T::lit(uniform(config.price_min, config.price_max)))
        .collect();
    let base_quantities = (0..n)
        .map(|_| T::lit(uniform(config.quantity_min, config.quantity_max)))
        .collect();

    let elasticity = ElasticityStructure::new(own, within, background, partition)?;
    let mut system = DemandSystem::new(base_prices, base_quantities, elasticity)?;
    system.provenance = Some(Provenance {
        seed,
        config: config.clone(),
    });
    Ok(system)
}

/// On-disk JSON form of a [`DemandSystem`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct SystemDocument<T> {
    pub n: usize,
    pub seed: Option<u64>,
    pub config: Option<GeneratorConfig>,
    pub own: Vec<T>,
    pub partition: Vec<usize>,
    pub within_beta: Vec<T>,
    pub background: T,
    pub base_prices: Vec<T>,
    pub base_quantities: Vec<T>,
}

impl<T: Scalar> From<&DemandSystem<T>> for SystemDocument<T> {
    fn from(s: &DemandSystem<T>) -> Self {
        SystemDocument {
            n: s.n(),
            seed: s.provenance.as_ref().map(|p| p.seed),
            config: s.provenance.as_ref().map(|p| p.config.clone()),
            own: s.elasticity.own.clone(),
            partition: s.elasticity.partition.labels().to_vec(),
            within_beta: s.elasticity.within.clone(),
            background: s.elasticity.background,
            base_prices: s.base_prices.clone(),
            base_quantities: s.base_quantities.clone(),
        }
    }
}

impl<T: Scalar> TryFrom<SystemDocument<T>> for DemandSystem<T> {
    type Error = LabError;

    fn try_from(doc: SystemDocument<T>) -> Result<Self> {
        if doc.partition.len() != doc.n {
            return Err(LabError::input(format!(
                "document declares n = {} but lists {} partition entries",
                doc.n,
                doc.partition.len()
            )));
        }
        let partition = Partition::new(doc.partition)?;
        let elasticity = ElasticityStructure::new(doc.own, doc.within_beta, doc.background, partition)?;
        let mut system = DemandSystem::new(doc.base_prices, doc.base_quantities, elasticity)?;
        system.provenance = match (doc.seed, doc.config) {
            (Some(seed), Some(config)) => Some(Provenance { seed, config }),
            (None, None) => None,
            _ => {
                return Err(LabError::input(
                    "seed and config must both be present or both be null",
                ))
            }
        };
        Ok(system)
    }
}
