use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use interference_lab::clickstream::{self, build_graph, exposure_share, generate_sessions};
use interference_lab::clustering::{self, louvain_traced};
use interference_lab::demand::generate_demand_system;
use interference_lab::experiment::{self, assign, BiasScale, coverage_analysis, monte_carlo_bias, sweep_substitution};
use interference_lab::metaexp;
use interference_lab::rng::{self, Domain};
use interference_lab::{DemandSystem, Partition, RandomizationStrategy, Session, SweepRow, SweepStrategy};

use crate::config::RunConfig;

pub struct OutputSpec {
    pub out: Option<PathBuf>,
    pub force: bool,
    pub sessions_out: Option<PathBuf>,
}

fn create(path: &Path, force: bool) -> Result<BufWriter<File>> {
    if path.exists() && !force {
        bail!("{} already exists (use --force to overwrite)", path.display());
    }
    let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(file))
}

/// Renders into memory first so a failed run never leaves a partial file.
fn emit(io: &OutputSpec, render: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    render(&mut buf)?;
    match &io.out {
        Some(path) => {
            let mut w = create(path, io.force)?;
            w.write_all(&buf)?;
            w.flush()?;
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            lock.write_all(&buf)?;
            lock.flush()?;
        }
    }
    Ok(())
}

fn warn_if_absolute(row: &SweepRow) {
    if row.report.scale == BiasScale::Absolute {
        log::warn!(
            "global effect is zero for phi {} ({}): mean_bias is absolute, not relative",
            row.phi,
            row.strategy
        );
    }
}

fn system(config: &RunConfig) -> Result<DemandSystem> {
    match &config.system {
        Some(path) => {
            let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
            DemandSystem::read_json(BufReader::new(file)).with_context(|| format!("{}", path.display()))
        }
        None => Ok(generate_demand_system(&config.generator, config.resolved_seed()?)?),
    }
}

fn sessions(config: &RunConfig, system: &DemandSystem, io: &OutputSpec) -> Result<Vec<Session>> {
    let sessions = match &config.sessions_file {
        Some(path) => clickstream::read_sessions(path, Some(system.n()))?,
        None => generate_sessions(system.partition(), &config.sessions, config.resolved_seed()?)?,
    };
    if let Some(path) = &io.sessions_out {
        let mut w = create(path, io.force)?;
        clickstream::write_sessions(&sessions, &mut w)?;
        w.flush()?;
    }
    Ok(sessions)
}

fn partition(config: &RunConfig, system: &DemandSystem) -> Result<Partition> {
    match &config.partition_file {
        Some(path) => {
            let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
            let p = Partition::read_csv(BufReader::new(file), path)?;
            if p.n() != system.n() {
                bail!("{}: partition covers {} articles, system has {}", path.display(), p.n(), system.n());
            }
            Ok(p)
        }
        None => Ok(system.partition().clone()),
    }
}

fn strategy(config: &RunConfig, system: &DemandSystem) -> Result<RandomizationStrategy> {
    Ok(match config.strategy {
        SweepStrategy::Article => RandomizationStrategy::ArticleLevel,
        SweepStrategy::Cluster => RandomizationStrategy::ClusterLevel(partition(config, system)?),
    })
}

pub fn gen(config: &RunConfig, io: &OutputSpec) -> Result<()> {
    let system = generate_demand_system::<f64>(&config.generator, config.resolved_seed()?)?;
    emit(io, |buf| Ok(system.write_json(buf)?))
}

pub fn simulate(config: &RunConfig, io: &OutputSpec) -> Result<()> {
    let system = system(config)?;
    let strategy = strategy(config, &system)?;
    let seed = config.resolved_seed()?;
    let report = monte_carlo_bias(&system, &strategy, &config.policy()?, config.metric, config.p, seed)?;
    let phi = system.provenance.as_ref().map_or(f64::NAN, |p| p.config.within_share);
    let row = SweepRow {
        phi,
        strategy: config.strategy.to_string(),
        report,
    };
    warn_if_absolute(&row);
    emit(io, |buf| Ok(experiment::write_bias_csv(&[row], buf)?))
}

pub fn sweep(config: &RunConfig, io: &OutputSpec) -> Result<()> {
    let rows = sweep_substitution(
        &config.generator,
        &config.phis,
        &config.strategies,
        &config.policy()?,
        config.metric,
        config.p,
        config.resolved_seed()?,
    )?;
    rows.iter().for_each(warn_if_absolute);
    emit(io, |buf| Ok(experiment::write_bias_csv(&rows, buf)?))
}

pub fn cluster(config: &RunConfig, io: &OutputSpec) -> Result<()> {
    let system = system(config)?;
    let sessions = sessions(config, &system, io)?;
    let graph = build_graph(&sessions, system.n())?;
    let outcome = louvain_traced::<f64>(&graph, config.gamma, config.resolved_seed()?)?;
    log::info!(
        "{} clusters, modularity by level {:?}",
        outcome.partition.n_clusters(),
        outcome.level_modularity
    );
    emit(io, |buf| Ok(outcome.partition.write_csv(buf)?))
}

pub fn exposure(config: &RunConfig, io: &OutputSpec) -> Result<()> {
    let system = system(config)?;
    let sessions = sessions(config, &system, io)?;
    let strategy = strategy(config, &system)?;
    let mut rng = rng::stream(config.resolved_seed()?, Domain::Exposure, 0);
    let assignment = assign(&strategy, system.n(), &mut rng)?;
    let report = exposure_share(&sessions, &assignment)?;
    emit(io, |buf| Ok(clickstream::write_exposure_csv(&report, buf)?))
}

pub fn frontier(config: &RunConfig, io: &OutputSpec) -> Result<()> {
    let system = system(config)?;
    let sessions = sessions(config, &system, io)?;
    let points = clustering::frontier(
        &system,
        &sessions,
        &config.gammas,
        &config.policy()?,
        config.metric,
        config.p,
        config.resolved_seed()?,
    )?;
    emit(io, |buf| Ok(clustering::write_frontier_csv(&points, buf)?))
}

pub fn meta(config: &RunConfig, io: &OutputSpec) -> Result<()> {
    let Some(path) = &config.input else {
        bail!("meta needs an input table (--in <PATH>)");
    };
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let inputs = metaexp::read_meta_csv::<f64, _>(BufReader::new(file), path)?;
    let rows = inputs
        .into_iter()
        .map(|input| {
            let cmp = metaexp::compare(&input, config.halfwidth_divisor)?;
            Ok((input, cmp))
        })
        .collect::<Result<Vec<_>>>()?;
    emit(io, |buf| Ok(metaexp::write_meta_csv(&rows, buf)?))
}

pub fn coverage(config: &RunConfig, io: &OutputSpec) -> Result<()> {
    let system = system(config)?;
    let strategy = strategy(config, &system)?;
    let report = coverage_analysis(
        &system,
        &strategy,
        &config.policy()?,
        config.metric,
        config.p,
        config.resolved_seed()?,
        config.noise_sd,
    )?;
    emit(io, |buf| Ok(experiment::write_coverage_csv(&report, buf)?))
}
