//! Run configuration: a JSON manifest, overridden field by field by flags.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use interference_lab::demand::{GeneratorConfig, Metric, OwnDraw};
use interference_lab::experiment::{SweepStrategy, DEFAULT_NOISE_SD};
use interference_lab::metaexp::DEFAULT_HALFWIDTH_DIVISOR;
use interference_lab::{PricePolicy, SessionParams};
use serde::Deserialize;

pub const SEED_ENV: &str = "INTERFERENCE_LAB_SEED";

/// Everything a subcommand may need. Unknown keys in a manifest are errors.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub generator: GeneratorConfig,
    pub treated_multiplier: f64,
    pub metric: Metric,
    pub p: usize,
    pub seed: Option<u64>,
    pub strategy: SweepStrategy,
    pub phis: Vec<f64>,
    pub strategies: Vec<SweepStrategy>,
    pub gammas: Vec<f64>,
    pub gamma: f64,
    pub sessions: SessionParams,
    pub noise_sd: f64,
    pub halfwidth_divisor: f64,
    pub system: Option<PathBuf>,
    pub sessions_file: Option<PathBuf>,
    pub partition_file: Option<PathBuf>,
    pub input: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            generator: GeneratorConfig::default(),
            treated_multiplier: 0.95,
            metric: Metric::Revenue,
            p: 1000,
            seed: None,
            strategy: SweepStrategy::Article,
            phis: vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6],
            strategies: vec![SweepStrategy::Article, SweepStrategy::Cluster],
            gammas: vec![1024.0, 256.0, 128.0, 96.0, 64.0, 16.0, 4.0, 1.0],
            gamma: 1.0,
            sessions: SessionParams::default(),
            noise_sd: DEFAULT_NOISE_SD,
            halfwidth_divisor: DEFAULT_HALFWIDTH_DIVISOR,
            system: None,
            sessions_file: None,
            partition_file: None,
            input: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(RunConfig::default()),
            Some(path) => {
                let file = File::open(path).with_context(|| format!("cannot open config {}", path.display()))?;
                serde_json::from_reader(BufReader::new(file))
                    .with_context(|| format!("invalid config {}", path.display()))
            }
        }
    }

    /// Seed from the config, else `INTERFERENCE_LAB_SEED`, else 0.
    pub fn resolved_seed(&self) -> Result<u64> {
        if let Some(seed) = self.seed {
            return Ok(seed);
        }
        match std::env::var(SEED_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .with_context(|| format!("{SEED_ENV}={v} is not an unsigned integer")),
            Err(_) => Ok(0),
        }
    }

    pub fn policy(&self) -> Result<PricePolicy> {
        Ok(PricePolicy::new(self.treated_multiplier)?)
    }

    /// Checks every precondition the subcommands rely on.
    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.sessions.validate()?;
        self.policy()?;
        if self.p < 2 {
            bail!("p must be at least 2");
        }
        if let Some(phi) = self.phis.iter().find(|phi| !(0.0..1.0).contains(*phi)) {
            bail!("phi {phi} outside [0, 1)");
        }
        for phi in &self.phis {
            GeneratorConfig {
                within_share: *phi,
                ..self.generator.clone()
            }
            .validate()
            .with_context(|| format!("phi {phi}"))?;
        }
        if self.strategies.is_empty() {
            bail!("at least one strategy is required");
        }
        if let Some(g) = self
            .gammas
            .iter()
            .chain(std::iter::once(&self.gamma))
            .find(|g| !(g.is_finite() && **g > 0.0))
        {
            bail!("resolution {g} must be positive");
        }
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            bail!("noise_sd must be non-negative");
        }
        if !(self.halfwidth_divisor.is_finite() && self.halfwidth_divisor > 0.0) {
            bail!("halfwidth_divisor must be positive");
        }
        self.resolved_seed()?;
        Ok(())
    }
}

/// Flags shared by every subcommand. Each one overrides the manifest.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// JSON run manifest; flags override its fields
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: available parallelism)
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Output file (stdout when omitted)
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overwrite an existing output file
    #[arg(long, global = true)]
    pub force: bool,

    /// Demand system JSON to load instead of generating one
    #[arg(long, global = true)]
    pub system: Option<PathBuf>,
    #[arg(long, global = true)]
    pub n: Option<usize>,
    #[arg(long, global = true)]
    pub cluster_size_min: Option<usize>,
    #[arg(long, global = true)]
    pub cluster_size_max: Option<usize>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub own_mean: Option<f64>,
    #[arg(long, global = true)]
    pub own_spread: Option<f64>,
    /// per-cluster or per-article own elasticity draws
    #[arg(long, global = true, value_parser = parse_own_draw)]
    pub own_draw: Option<OwnDraw>,
    /// Within-cluster substitution share
    #[arg(long, global = true)]
    pub phi: Option<f64>,
    /// Cross-cluster substitution share
    #[arg(long, global = true)]
    pub phi_bg: Option<f64>,
    #[arg(long, global = true)]
    pub price_min: Option<f64>,
    #[arg(long, global = true)]
    pub price_max: Option<f64>,
    #[arg(long, global = true)]
    pub quantity_min: Option<f64>,
    #[arg(long, global = true)]
    pub quantity_max: Option<f64>,

    /// Treated price multiplier
    #[arg(long, global = true)]
    pub m: Option<f64>,
    #[arg(long, global = true)]
    pub metric: Option<Metric>,
    /// Number of randomized assignments
    #[arg(long, global = true)]
    pub p: Option<usize>,
    /// article or cluster
    #[arg(long, global = true)]
    pub strategy: Option<SweepStrategy>,
    /// Partition CSV used for cluster randomization instead of the
    /// system's similarity clusters
    #[arg(long, global = true)]
    pub partition: Option<PathBuf>,
    #[arg(long, global = true, value_delimiter = ',')]
    pub phis: Option<Vec<f64>>,
    #[arg(long, global = true, value_delimiter = ',')]
    pub strategies: Option<Vec<SweepStrategy>>,
    #[arg(long, global = true, value_delimiter = ',')]
    pub gammas: Option<Vec<f64>>,
    #[arg(long, global = true)]
    pub gamma: Option<f64>,
    #[arg(long, global = true)]
    pub noise_sd: Option<f64>,

    /// Clickstream CSV (`session_id,article_id`); synthesized when omitted
    #[arg(long, global = true)]
    pub sessions: Option<PathBuf>,
    /// Also write the synthesized sessions here
    #[arg(long, global = true)]
    pub sessions_out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub n_sessions: Option<usize>,
    #[arg(long, global = true)]
    pub views_min: Option<usize>,
    #[arg(long, global = true)]
    pub views_max: Option<usize>,
    #[arg(long, global = true)]
    pub purity: Option<f64>,

    /// Meta-experiment input CSV
    #[arg(long = "in", global = true)]
    pub input: Option<PathBuf>,
    #[arg(long, global = true)]
    pub halfwidth_divisor: Option<f64>,
}

fn parse_own_draw(s: &str) -> Result<OwnDraw, String> {
    match s {
        "per-cluster" | "per_cluster" => Ok(OwnDraw::PerCluster),
        "per-article" | "per_article" => Ok(OwnDraw::PerArticle),
        other => Err(format!("unknown own draw `{other}` (per-cluster or per-article)")),
    }
}

macro_rules! apply {
    ($target:expr, $value:expr) => {
        if let Some(v) = $value.clone() {
            $target = v;
        }
    };
}

impl Overrides {
    fn generator_flags(&self) -> bool {
        self.n.is_some()
            || self.cluster_size_min.is_some()
            || self.cluster_size_max.is_some()
            || self.own_mean.is_some()
            || self.own_spread.is_some()
            || self.own_draw.is_some()
            || self.phi.is_some()
            || self.phi_bg.is_some()
            || self.price_min.is_some()
            || self.price_max.is_some()
            || self.quantity_min.is_some()
            || self.quantity_max.is_some()
    }

    pub fn resolve(&self) -> Result<RunConfig> {
        if self.system.is_some() && self.generator_flags() {
            bail!("generator flags have no effect on a loaded --system");
        }
        let mut c = RunConfig::load(self.config.as_deref())?;
        let g = &mut c.generator;
        apply!(g.n, self.n);
        apply!(g.cluster_size_min, self.cluster_size_min);
        apply!(g.cluster_size_max, self.cluster_size_max);
        apply!(g.own_mean, self.own_mean);
        apply!(g.own_spread, self.own_spread);
        apply!(g.own_draw, self.own_draw);
        apply!(g.within_share, self.phi);
        apply!(g.background_share, self.phi_bg);
        apply!(g.price_min, self.price_min);
        apply!(g.price_max, self.price_max);
        apply!(g.quantity_min, self.quantity_min);
        apply!(g.quantity_max, self.quantity_max);
        let s = &mut c.sessions;
        apply!(s.n_sessions, self.n_sessions);
        apply!(s.views_min, self.views_min);
        apply!(s.views_max, self.views_max);
        apply!(s.purity, self.purity);
        if self.seed.is_some() {
            c.seed = self.seed;
        }
        apply!(c.treated_multiplier, self.m);
        apply!(c.metric, self.metric);
        apply!(c.p, self.p);
        apply!(c.strategy, self.strategy);
        apply!(c.phis, self.phis);
        apply!(c.strategies, self.strategies);
        apply!(c.gammas, self.gammas);
        apply!(c.gamma, self.gamma);
        apply!(c.noise_sd, self.noise_sd);
        apply!(c.halfwidth_divisor, self.halfwidth_divisor);
        if self.system.is_some() {
            c.system = self.system.clone();
        }
        if self.sessions.is_some() {
            c.sessions_file = self.sessions.clone();
        }
        if self.partition.is_some() {
            c.partition_file = self.partition.clone();
        }
        if self.input.is_some() {
            c.input = self.input.clone();
        }
        c.validate()?;
        Ok(c)
    }
}
