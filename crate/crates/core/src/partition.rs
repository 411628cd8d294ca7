//! Article-to-cluster mapping shared by the demand generator and the
//! community detection.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// Assignment of articles `0..n` to clusters `0..k`.
///
/// Cluster ids are contiguous and every cluster has at least one member.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Partition {
    cluster_of: Vec<usize>,
    n_clusters: usize,
}

impl Partition {
    /// Validates contiguity of the cluster ids.
    pub fn new(cluster_of: Vec<usize>) -> Result<Self> {
        if cluster_of.is_empty() {
            return Err(LabError::input("partition must cover at least one article"));
        }
        let k = cluster_of.iter().max().map_or(0, |&m| m + 1);
        let mut seen = vec![false; k];
        for &c in &cluster_of {
            seen[c] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(LabError::input(format!(
                "cluster ids must be contiguous from 0; cluster {missing} is empty"
            )));
        }
        Ok(Partition {
            cluster_of,
            n_clusters: k,
        })
    }

    /// Builds a partition from arbitrary labels, renumbering clusters in
    /// order of first appearance.
    pub fn from_labels<L: Eq + std::hash::Hash + Copy>(labels: &[L]) -> Result<Self> {
        let mut ids = std::collections::HashMap::new();
        let cluster_of = labels
            .iter()
            .map(|l| {
                let next = ids.len();
                *ids.entry(*l).or_insert(next)
            })
            .collect();
        Self::new(cluster_of)
    }

    /// Consecutive blocks with the given sizes.
    pub fn from_sizes(sizes: &[usize]) -> Result<Self> {
        if sizes.contains(&0) {
            return Err(LabError::input("cluster sizes must be positive"));
        }
        let cluster_of = sizes
            .iter()
            .enumerate()
            .flat_map(|(c, &s)| std::iter::repeat_n(c, s))
            .collect();
        Self::new(cluster_of)
    }

    pub fn singletons(n: usize) -> Result<Self> {
        Self::new((0..n).collect())
    }

    pub fn single_cluster(n: usize) -> Result<Self> {
        Self::new(vec![0; n])
    }

    pub fn n(&self) -> usize {
        self.cluster_of.len()
    }

    pub fn n_clusters(&self) -> usize {
        self.n_clusters
    }

    #[inline]
    pub fn cluster_of(&self, article: usize) -> usize {
        self.cluster_of[article]
    }

    pub fn labels(&self) -> &[usize] {
        &self.cluster_of
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_clusters];
        for &c in &self.cluster_of {
            sizes[c] += 1;
        }
        sizes
    }

    /// Members of each cluster, in increasing article order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut members = vec![Vec::new(); self.n_clusters];
        for (i, &c) in self.cluster_of.iter().enumerate() {
            members[c].push(i);
        }
        members
    }

    /// True when every cluster of `self` lies inside one cluster of `coarser`.
    pub fn refines(&self, coarser: &Partition) -> bool {
        if self.n() != coarser.n() {
            return false;
        }
        let mut parent = vec![usize::MAX; self.n_clusters];
        self.cluster_of
            .iter()
            .zip(&coarser.cluster_of)
            .all(|(&fine, &coarse)| {
                if parent[fine] == usize::MAX {
                    parent[fine] = coarse;
                }
                parent[fine] == coarse
            })
    }

    /// Writes `article_id,cluster_id` rows.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["article_id", "cluster_id"])?;
        for (i, c) in self.cluster_of.iter().enumerate() {
            w.write_record([i.to_string(), c.to_string()])?;
        }
        w.flush().map_err(|e| LabError::io("<partition csv>", e))?;
        Ok(())
    }

    /// Reads an `article_id,cluster_id` file. Article ids must cover
    /// `0..n` exactly once; cluster ids are renumbered by first appearance.
    pub fn read_csv<R: Read>(reader: R, origin: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["article_id", "cluster_id"] {
            return Err(LabError::Parse {
                path: origin.to_path_buf(),
                line: 1,
                message: "expected header `article_id,cluster_id`".into(),
            });
        }
        let mut rows: Vec<Option<u64>> = Vec::new();
        for record in r.records() {
            let record = record?;
            let line = record.position().map_or(0, |p| p.line());
            let parse = |idx: usize, what: &str| -> Result<u64> {
                record
                    .get(idx)
                    .and_then(|s| s.trim().parse::<u64>().ok())
                    .ok_or_else(|| LabError::Parse {
                        path: origin.to_path_buf(),
                        line,
                        message: format!("invalid {what}"),
                    })
            };
            let article = parse(0, "article_id")? as usize;
            let cluster = parse(1, "cluster_id")?;
            if article >= rows.len() {
                rows.resize(article + 1, None);
            }
            if rows[article].replace(cluster).is_some() {
                return Err(LabError::Parse {
                    path: origin.to_path_buf(),
                    line,
                    message: format!("article {article} listed twice"),
                });
            }
        }
        let labels = rows
            .into_iter()
            .enumerate()
            .map(|(i, c)| {
                c.ok_or_else(|| LabError::Parse {
                    path: origin.to_path_buf(),
                    line: 0,
                    message: format!("article {i} missing from partition file"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_labels(&labels)
    }
}

impl TryFrom<Vec<usize>> for Partition {
    type Error = LabError;

    fn try_from(value: Vec<usize>) -> Result<Self> {
        Partition::new(value)
    }
}

impl From<Partition> for Vec<usize> {
    fn from(p: Partition) -> Self {
        p.cluster_of
    }
}
