//! Browsing sessions, the co-view graph, and exposure of sessions to the
//! experiment arms.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use indexmap::IndexMap;
use rand::Rng;

use crate::csvfmt;
use crate::error::{LabError, Result};
use crate::experiment::{Arm, Assignment};
use crate::partition::Partition;
use crate::rng::{self, Domain};

/// Articles viewed in one browsing session, sorted and deduplicated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Session {
    pub id: String,
    viewed: Vec<usize>,
}

impl Session {
    pub fn new(id: impl Into<String>, viewed: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut viewed: Vec<usize> = viewed.into_iter().collect();
        viewed.sort_unstable();
        viewed.dedup();
        if viewed.is_empty() {
            return Err(LabError::input("a session must view at least one article"));
        }
        Ok(Session {
            id: id.into(),
            viewed,
        })
    }

    pub fn viewed(&self) -> &[usize] {
        &self.viewed
    }
}

/// Parameters of the synthetic session model: each session picks a home
/// cluster uniformly, then each view stays in it with probability `purity`
/// and otherwise lands on a uniformly random article.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SessionParams {
    pub n_sessions: usize,
    pub views_min: usize,
    pub views_max: usize,
    pub purity: f64,
}

impl Default for SessionParams {
    fn default() -> Self {
        SessionParams {
            n_sessions: 50_000,
            views_min: 2,
            views_max: 8,
            purity: 0.9,
        }
    }
}

impl SessionParams {
    /// Coarse-clustering scenario in which roughly one session in three sees
    /// both arms under cluster randomization of the planted partition.
    ///
    /// With four views and purity 0.8 a view lands in the home arm with
    /// probability `a = 0.9` and in the other arm with `b = 0.1`, so the
    /// share exposed to both arms is `1 - a^4 - b^4 = 0.3438`.
    pub fn one_in_three_calibration() -> Self {
        SessionParams {
            n_sessions: 100_000,
            views_min: 4,
            views_max: 4,
            purity: 0.8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_sessions == 0 {
            return Err(LabError::config("n_sessions must be at least 1"));
        }
        if self.views_min == 0 || self.views_max < self.views_min {
            return Err(LabError::config("views need 1 <= views_min <= views_max"));
        }
        if !(0.0..=1.0).contains(&self.purity) {
            return Err(LabError::config("purity must lie in [0, 1]"));
        }
        Ok(())
    }
}

pub fn generate_sessions(partition: &Partition, params: &SessionParams, seed: u64) -> Result<Vec<Session>> {
    params.validate()?;
    let members = partition.members();
    let n = partition.n();
    let mut rng = rng::stream(seed, Domain::Sessions, 0);
    (0..params.n_sessions)
        .map(|s| {
            let home = &members[rng.random_range(0..members.len())];
            let k = rng.random_range(params.views_min..=params.views_max);
            let views: Vec<usize> = (0..k)
                .map(|_| {
                    if rng.random_bool(params.purity) {
                        home[rng.random_range(0..home.len())]
                    } else {
                        rng.random_range(0..n)
                    }
                })
                .collect();
            Session::new(format!("s{s}"), views)
        })
        .collect()
}

/// Reads a `session_id,article_id` clickstream file.
///
/// Rows are grouped by session id in order of first appearance. When
/// `n_articles` is given, ids at or beyond it are rejected.
pub fn read_sessions(path: &Path, n_articles: Option<usize>) -> Result<Vec<Session>> {
    let file = File::open(path).map_err(|e| LabError::io(path, e))?;
    read_sessions_from(BufReader::new(file), path, n_articles)
}

pub fn read_sessions_from<R: Read>(reader: R, origin: &Path, n_articles: Option<usize>) -> Result<Vec<Session>> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(reader);
    let mut grouped: IndexMap<String, Vec<usize>> = IndexMap::new();
    let mut record = csv::StringRecord::new();
    let mut first = true;
    let parse_err = |line: u64, message: String| LabError::Parse {
        path: origin.to_path_buf(),
        line,
        message,
    };
    while r.read_record(&mut record)? {
        let line = record.position().map_or(0, |p| p.line());
        if first {
            first = false;
            if record.iter().collect::<Vec<_>>() != ["session_id", "article_id"] {
                return Err(parse_err(line, "expected header `session_id,article_id`".into()));
            }
            continue;
        }
        if record.len() != 2 {
            return Err(parse_err(line, format!("expected 2 fields, found {}", record.len())));
        }
        let article: usize = record[1]
            .trim()
            .parse()
            .map_err(|_| parse_err(line, format!("invalid article_id `{}`", &record[1])))?;
        if let Some(n) = n_articles {
            if article >= n {
                return Err(parse_err(line, format!("unknown article id {article} (n = {n})")));
            }
        }
        let id = &record[0];
        match grouped.get_mut(id) {
            Some(v) => v.push(article),
            None => {
                grouped.insert(id.to_string(), vec![article]);
            }
        }
    }
    if grouped.is_empty() {
        log::warn!("{}: no sessions found", origin.display());
    }
    grouped
        .into_iter()
        .map(|(id, views)| Session::new(id, views))
        .collect()
}

/// Writes sessions as `session_id,article_id` rows.
pub fn write_sessions<W: Write>(sessions: &[Session], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["session_id", "article_id"])?;
    for s in sessions {
        for a in &s.viewed {
            w.write_record([s.id.as_str(), &a.to_string()])?;
        }
    }
    w.flush().map_err(|e| LabError::io("<sessions csv>", e))?;
    Ok(())
}

/// Weighted undirected co-view graph. Edge weight counts the sessions in
/// which both endpoints were viewed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionGraph {
    n: usize,
    /// Sorted `(a, b, weight)` with `a < b`.
    edges: Vec<(usize, usize, u64)>,
}

impl SessionGraph {
    /// Builds a graph from explicit edges; duplicate pairs are summed.
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize, u64)>) -> Result<Self> {
        let mut acc: HashMap<(usize, usize), u64> = HashMap::new();
        for (a, b, w) in edges {
            if a == b {
                return Err(LabError::input(format!("self-loop on node {a}")));
            }
            if a >= n || b >= n {
                return Err(LabError::input(format!("edge ({a}, {b}) outside 0..{n}")));
            }
            if w == 0 {
                return Err(LabError::input("edge weights must be at least 1"));
            }
            *acc.entry((a.min(b), a.max(b))).or_default() += w;
        }
        let mut edges: Vec<_> = acc.into_iter().map(|((a, b), w)| (a, b, w)).collect();
        edges.sort_unstable();
        Ok(SessionGraph { n, edges })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize, u64)] {
        &self.edges
    }

    pub fn weight(&self, a: usize, b: usize) -> u64 {
        let key = (a.min(b), a.max(b));
        self.edges
            .binary_search_by(|&(x, y, _)| (x, y).cmp(&key))
            .map_or(0, |i| self.edges[i].2)
    }

    pub fn total_weight(&self) -> u64 {
        self.edges.iter().map(|e| e.2).sum()
    }

    /// Weighted degree of every node.
    pub fn degrees(&self) -> Vec<u64> {
        let mut d = vec![0; self.n];
        for &(a, b, w) in &self.edges {
            d[a] += w;
            d[b] += w;
        }
        d
    }

    /// Edge weight between nodes in different clusters of `partition`.
    pub fn cut_weight(&self, partition: &Partition) -> u64 {
        self.edges
            .iter()
            .filter(|&&(a, b, _)| partition.cluster_of(a) != partition.cluster_of(b))
            .map(|e| e.2)
            .sum()
    }
}

/// Co-view graph over `n_articles` nodes: every unordered pair of distinct
/// articles in a session adds 1 to that pair's weight.
pub fn build_graph(sessions: &[Session], n_articles: usize) -> Result<SessionGraph> {
    if sessions.is_empty() {
        return Err(LabError::input("cannot build a graph from zero sessions"));
    }
    let mut acc: HashMap<(usize, usize), u64> = HashMap::new();
    for s in sessions {
        if let Some(&last) = s.viewed.last() {
            if last >= n_articles {
                return Err(LabError::input(format!(
                    "session {} views article {last} outside 0..{n_articles}",
                    s.id
                )));
            }
        }
        for (i, &a) in s.viewed.iter().enumerate() {
            for &b in &s.viewed[i + 1..] {
                *acc.entry((a, b)).or_default() += 1;
            }
        }
    }
    let mut edges: Vec<_> = acc.into_iter().map(|((a, b), w)| (a, b, w)).collect();
    edges.sort_unstable();
    Ok(SessionGraph {
        n: n_articles,
        edges,
    })
}

/// Share of sessions by which experiment arms they saw.
#[derive(Debug, Clone, PartialEq)]
pub struct ExposureReport {
    pub share_both: f64,
    pub share_treated_only: f64,
    pub share_control_only: f64,
    pub session_count: usize,
}

pub const EXPOSURE_CSV_HEADER: [&str; 4] =
    ["share_both", "share_treated_only", "share_control_only", "session_count"];

pub fn exposure_share(sessions: &[Session], assignment: &Assignment) -> Result<ExposureReport> {
    if sessions.is_empty() {
        return Err(LabError::input("exposure needs at least one session"));
    }
    let (mut both, mut treated, mut control) = (0usize, 0usize, 0usize);
    for s in sessions {
        let (mut saw_t, mut saw_c) = (false, false);
        for &a in &s.viewed {
            if a >= assignment.n() {
                return Err(LabError::input(format!(
                    "session {} views article {a} outside the assignment (n = {})",
                    s.id,
                    assignment.n()
                )));
            }
            match assignment.arm(a) {
                Arm::Treatment => saw_t = true,
                Arm::Control => saw_c = true,
            }
        }
        match (saw_t, saw_c) {
            (true, true) => both += 1,
            (true, false) => treated += 1,
            _ => control += 1,
        }
    }
    let total = sessions.len() as f64;
    Ok(ExposureReport {
        share_both: both as f64 / total,
        share_treated_only: treated as f64 / total,
        share_control_only: control as f64 / total,
        session_count: sessions.len(),
    })
}

pub fn write_exposure_csv<W: Write>(report: &ExposureReport, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(EXPOSURE_CSV_HEADER)?;
    w.write_record([
        csvfmt::float(report.share_both),
        csvfmt::float(report.share_treated_only),
        csvfmt::float(report.share_control_only),
        report.session_count.to_string(),
    ])?;
    w.flush().map_err(|e| LabError::io("<exposure csv>", e))?;
    Ok(())
}
