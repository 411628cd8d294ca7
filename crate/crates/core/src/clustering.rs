//! Modularity, Louvain community detection with a resolution parameter, and
//! the bias/variance/exposure frontier across resolutions.

use std::io::Write;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::clickstream::{build_graph, exposure_share, Session, SessionGraph};
use crate::csvfmt;
use crate::demand::{DemandSystem, Metric, PricePolicy};
use crate::error::{LabError, Result};
use crate::experiment::{assign, monte_carlo_bias, BiasReport, RandomizationStrategy};
use crate::partition::Partition;
use crate::rng::{self, Domain};
use crate::scalar::Scalar;

/// A local move is accepted only if it raises modularity by more than this.
pub const MIN_MODULARITY_GAIN: f64 = 1e-12;

/// Cluster-level assignments averaged per frontier point for `share_both`.
pub const EXPOSURE_DRAWS: usize = 32;

/// Generalized modularity
/// `Q = sum_c [ w_c / m - gamma * (d_c / 2m)^2 ]`
/// with `w_c` the intra-cluster edge weight and `d_c` the total degree of
/// cluster `c`.
pub fn modularity<T: Scalar>(graph: &SessionGraph, partition: &Partition, gamma: T) -> Result<T> {
    if partition.n() != graph.n() {
        return Err(LabError::input(format!(
            "partition covers {} nodes, graph has {}",
            partition.n(),
            graph.n()
        )));
    }
    let m = graph.total_weight();
    if m == 0 {
        return Err(LabError::input("modularity is undefined on a graph without edges"));
    }
    let k = partition.n_clusters();
    let mut internal = vec![0u64; k];
    let mut degree = vec![0u64; k];
    for &(a, b, w) in graph.edges() {
        let (ca, cb) = (partition.cluster_of(a), partition.cluster_of(b));
        if ca == cb {
            internal[ca] += w;
        }
        degree[ca] += w;
        degree[cb] += w;
    }
    let m = T::lit(m as f64);
    let two_m = m + m;
    Ok(internal
        .iter()
        .zip(&degree)
        .map(|(&w, &d)| {
            let share = T::lit(d as f64) / two_m;
            T::lit(w as f64) / m - gamma * share * share
        })
        .sum())
}

/// Graph at one aggregation level. Self-loops hold the weight internal to a
/// super-node and are kept out of the adjacency lists.
struct Level<T> {
    adj: Vec<Vec<(usize, T)>>,
    self_weight: Vec<T>,
    degree: Vec<T>,
}

impl<T: Scalar> Level<T> {
    fn from_graph(graph: &SessionGraph) -> Self {
        let n = graph.n();
        let mut adj = vec![Vec::new(); n];
        let mut degree = vec![T::zero(); n];
        for &(a, b, w) in graph.edges() {
            let w = T::lit(w as f64);
            adj[a].push((b, w));
            adj[b].push((a, w));
            degree[a] += w;
            degree[b] += w;
        }
        Level {
            adj,
            self_weight: vec![T::zero(); n],
            degree,
        }
    }

    fn n(&self) -> usize {
        self.adj.len()
    }

    fn modularity(&self, community: &[usize], gamma: T, m: T) -> T {
        let k = community.iter().max().map_or(0, |c| c + 1);
        let mut internal = vec![T::zero(); k];
        let mut degree = vec![T::zero(); k];
        for i in 0..self.n() {
            let c = community[i];
            internal[c] += self.self_weight[i];
            degree[c] += self.degree[i];
            for &(j, w) in &self.adj[i] {
                if j > i && community[j] == c {
                    internal[c] += w;
                }
            }
        }
        let two_m = m + m;
        internal
            .iter()
            .zip(&degree)
            .map(|(&w, &d)| w / m - gamma * (d / two_m) * (d / two_m))
            .sum()
    }

    /// Greedy local moving until a full pass moves nothing. Returns the
    /// community of each node and whether anything moved.
    fn local_moving(&self, gamma: T, m: T, order: &[usize]) -> (Vec<usize>, bool) {
        let n = self.n();
        let mut community: Vec<usize> = (0..n).collect();
        let mut total: Vec<T> = self.degree.clone();
        let mut link = vec![T::zero(); n];
        let mut touched: Vec<usize> = Vec::new();
        let two_m = m + m;
        let threshold = T::lit(MIN_MODULARITY_GAIN) * m;
        let mut any_move = false;

        loop {
            let mut moved = false;
            for &i in order {
                let k_i = self.degree[i];
                let home = community[i];
                for &(j, w) in &self.adj[i] {
                    let c = community[j];
                    if link[c] == T::zero() && !touched.contains(&c) {
                        touched.push(c);
                    }
                    link[c] += w;
                }
                total[home] -= k_i;
                let gain = |c: usize, link: &[T]| link[c] - gamma * total[c] * k_i / two_m;
                let stay = gain(home, &link);

                touched.sort_unstable();
                let mut best = home;
                let mut best_gain = T::neg_infinity();
                for &c in &touched {
                    if c == home {
                        continue;
                    }
                    let g = gain(c, &link);
                    if g > best_gain {
                        best_gain = g;
                        best = c;
                    }
                }
                // Gains are in units of m; the difference divided by m is the
                // exact change in Q.
                let target = if best != home && best_gain - stay > threshold {
                    best
                } else {
                    home
                };
                total[target] += k_i;
                if target != home {
                    community[i] = target;
                    moved = true;
                }
                for &c in &touched {
                    link[c] = T::zero();
                }
                touched.clear();
            }
            if !moved {
                break;
            }
            any_move = true;
        }
        (community, any_move)
    }

    /// Collapses each community into one node. `community` must be
    /// contiguous.
    fn aggregate(&self, community: &[usize], k: usize) -> Level<T> {
        let mut self_weight = vec![T::zero(); k];
        let mut degree = vec![T::zero(); k];
        let mut between: Vec<(usize, usize, T)> = Vec::new();
        for i in 0..self.n() {
            let ci = community[i];
            self_weight[ci] += self.self_weight[i];
            degree[ci] += self.degree[i];
            for &(j, w) in &self.adj[i] {
                if j <= i {
                    continue;
                }
                let cj = community[j];
                if ci == cj {
                    self_weight[ci] += w;
                } else {
                    between.push((ci.min(cj), ci.max(cj), w));
                }
            }
        }
        between.sort_by_key(|e| (e.0, e.1));
        let mut adj = vec![Vec::new(); k];
        let mut iter = between.into_iter().peekable();
        while let Some((a, b, mut w)) = iter.next() {
            while let Some(&(a2, b2, w2)) = iter.peek() {
                if (a2, b2) != (a, b) {
                    break;
                }
                w += w2;
                iter.next();
            }
            adj[a].push((b, w));
            adj[b].push((a, w));
        }
        Level {
            adj,
            self_weight,
            degree,
        }
    }
}

/// Renumbers labels contiguously in order of first appearance.
fn compact(labels: &mut [usize]) -> usize {
    let mut map = vec![usize::MAX; labels.len()];
    let mut next = 0;
    for l in labels.iter_mut() {
        if map[*l] == usize::MAX {
            map[*l] = next;
            next += 1;
        }
        *l = map[*l];
    }
    next
}

/// Louvain result with the modularity reached after each aggregation level.
#[derive(Debug, Clone, PartialEq)]
pub struct LouvainOutcome<T> {
    pub partition: Partition,
    /// Modularity of the singleton partition followed by the value after
    /// every level that moved at least one node.
    pub level_modularity: Vec<T>,
}

/// Louvain modularity maximization at resolution `gamma`.
///
/// Node visit order is shuffled per level from `seed`; among equally good
/// target communities the lowest id wins.
pub fn louvain<T: Scalar>(graph: &SessionGraph, gamma: T, seed: u64) -> Result<Partition> {
    Ok(louvain_traced(graph, gamma, seed)?.partition)
}

pub fn louvain_traced<T: Scalar>(graph: &SessionGraph, gamma: T, seed: u64) -> Result<LouvainOutcome<T>> {
    if !(gamma.is_finite() && gamma > T::zero()) {
        return Err(LabError::input("resolution must be positive and finite"));
    }
    let total = graph.total_weight();
    if total == 0 {
        return Err(LabError::input("louvain needs a graph with at least one edge"));
    }
    let m = T::lit(total as f64);
    let mut level = Level::<T>::from_graph(graph);
    let mut node_community: Vec<usize> = (0..graph.n()).collect();
    let singletons: Vec<usize> = (0..graph.n()).collect();
    let mut trace = vec![level.modularity(&singletons, gamma, m)];

    for depth in 0u64.. {
        let mut order: Vec<usize> = (0..level.n()).collect();
        order.shuffle(&mut rng::stream(seed, Domain::Louvain, depth));
        let (mut community, moved) = level.local_moving(gamma, m, &order);
        if !moved {
            break;
        }
        let k = compact(&mut community);
        trace.push(level.modularity(&community, gamma, m));
        for c in node_community.iter_mut() {
            *c = community[*c];
        }
        level = level.aggregate(&community, k);
    }
    compact(&mut node_community);
    Ok(LouvainOutcome {
        partition: Partition::new(node_community)?,
        level_modularity: trace,
    })
}

/// One resolution on the clustering frontier.
#[derive(Debug, Clone, PartialEq)]
pub struct FrontierPoint<T> {
    pub resolution: T,
    pub n_clusters: usize,
    pub avg_cluster_size: f64,
    pub modularity: T,
    /// Mean share of sessions exposed to both arms over
    /// [`EXPOSURE_DRAWS`] cluster assignments; `None` with fewer than two
    /// clusters.
    pub share_both: Option<f64>,
    pub share_both_sd: Option<f64>,
    /// Cluster-randomized bias report; `None` with fewer than two clusters.
    pub bias: Option<BiasReport<T>>,
    pub partition: Partition,
}

impl<T: Scalar> FrontierPoint<T> {
    pub fn mean_bias(&self) -> Option<T> {
        self.bias.as_ref().map(|b| b.mean_bias)
    }

    pub fn relative_sd(&self) -> Option<T> {
        self.bias.as_ref().map(|b| b.relative_sd)
    }
}

pub const FRONTIER_CSV_HEADER: [&str; 7] = [
    "gamma",
    "n_clusters",
    "avg_cluster_size",
    "modularity",
    "share_both",
    "mean_bias",
    "relative_sd",
];

/// Bias, precision and exposure of cluster randomization across Louvain
/// resolutions. Rows come back sorted by ascending `gamma`; point `i` of the
/// sorted list draws from streams keyed by `(seed, i)`.
pub fn frontier<T: Scalar>(
    system: &DemandSystem<T>,
    sessions: &[Session],
    gammas: &[T],
    policy: &PricePolicy<T>,
    metric: Metric,
    p: usize,
    seed: u64,
) -> Result<Vec<FrontierPoint<T>>> {
    let graph = build_graph(sessions, system.n())?;
    let mut gammas = gammas.to_vec();
    if gammas.iter().any(|g| !(g.is_finite() && *g > T::zero())) {
        return Err(LabError::input("resolutions must be positive and finite"));
    }
    gammas.sort_by(|a, b| a.partial_cmp(b).expect("finite"));

    gammas
        .par_iter()
        .enumerate()
        .map(|(idx, &gamma)| {
            let partition = louvain(&graph, gamma, seed)?;
            let q = modularity(&graph, &partition, gamma)?;
            let k = partition.n_clusters();
            let mut point = FrontierPoint {
                resolution: gamma,
                n_clusters: k,
                avg_cluster_size: partition.n() as f64 / k as f64,
                modularity: q,
                share_both: None,
                share_both_sd: None,
                bias: None,
                partition: partition.clone(),
            };
            if k < 2 {
                return Ok(point);
            }
            let strategy = RandomizationStrategy::ClusterLevel(partition);
            let shares = (0..EXPOSURE_DRAWS as u64)
                .map(|d| {
                    let mut rng = rng::stream(seed, Domain::Exposure, ((idx as u64) << 32) | d);
                    let a = assign(&strategy, system.n(), &mut rng)?;
                    Ok(exposure_share(sessions, &a)?.share_both)
                })
                .collect::<Result<Vec<f64>>>()?;
            let mean = shares.iter().sum::<f64>() / shares.len() as f64;
            let var = shares.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (shares.len() - 1) as f64;
            point.share_both = Some(mean);
            point.share_both_sd = Some(var.sqrt());
            let mc_seed = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ idx as u64;
            point.bias = Some(monte_carlo_bias(system, &strategy, policy, metric, p, mc_seed)?);
            Ok(point)
        })
        .collect()
}

pub fn write_frontier_csv<T: Scalar, W: Write>(points: &[FrontierPoint<T>], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(FRONTIER_CSV_HEADER)?;
    let opt = |x: Option<f64>| csvfmt::float(x.unwrap_or(f64::NAN));
    for pt in points {
        w.write_record([
            csvfmt::float(pt.resolution.to_f64_lossy()),
            pt.n_clusters.to_string(),
            csvfmt::float(pt.avg_cluster_size),
            csvfmt::float(pt.modularity.to_f64_lossy()),
            opt(pt.share_both),
            opt(pt.mean_bias().map(Scalar::to_f64_lossy)),
            opt(pt.relative_sd().map(Scalar::to_f64_lossy)),
        ])?;
    }
    w.flush().map_err(|e| LabError::io("<frontier csv>", e))?;
    Ok(())
}
