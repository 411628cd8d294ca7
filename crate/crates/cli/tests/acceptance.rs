//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Every tolerance is pinned below.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use interference_lab::clickstream::{exposure_share, generate_sessions};
use interference_lab::clustering::{self, louvain, modularity};
use interference_lab::demand::{dense_oracle, generate_demand_system};
use interference_lab::experiment::{assign, coverage_analysis, run_experiment, sweep_substitution};
use interference_lab::metaexp::{compare, DEFAULT_HALFWIDTH_DIVISOR};
use interference_lab::rng::{self, Domain};
use interference_lab::{
    Assignment, DemandSystem, ElasticityStructure, GeneratorConfig, Metric, OwnDraw, Partition, PricePolicy,
    RandomizationStrategy, SessionGraph, SessionParams, SweepStrategy,
};
use rand::Rng;

// 1
const ORACLE_SYSTEMS: usize = 100;
const ORACLE_MAX_N: usize = 100;
const ORACLE_REL_TOL: f64 = 1e-12;
const ORACLE_BUDGET: Duration = Duration::from_secs(5);
// 2
const PAIR_TOL: f64 = 1e-6;
const PAIR_STATED: [(&str, f64); 3] = [("estimate", 0.301345), ("gte", 0.171220), ("bias", 0.7600)];
// 3, 4, 7
const MC_SE_MULTIPLE: f64 = 3.0;
const NULL_N: usize = 1000;
const NULL_P: usize = 1000;
const SWEEP_PHIS: [f64; 6] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
const SWEEP_P: usize = 1000;
const SWEEP_MIN_PEAK_BIAS: f64 = 1.0;
const SWEEP_BUDGET: Duration = Duration::from_secs(600);
// 5
const MODULARITY_TOL: f64 = 1e-12;
const TRIANGLES_Q: [f64; 3] = [0.5, 0.0, -0.375];
const LOUVAIN_GAP: f64 = 0.05;
const LOUVAIN_GRAPHS: u64 = 40;
// 6
const UNIFORM_SESSIONS: usize = 100_000;
const UNIFORM_TARGET: f64 = 0.5;
const UNIFORM_TOL: f64 = 0.02;
const ONE_IN_THREE_TOL: f64 = 0.05;
// 7
const FRONTIER_SEEDS: u64 = 5;
const FRONTIER_P: usize = 500;
const FRONTIER_GAMMAS: [f64; 9] = [1024.0, 256.0, 128.0, 96.0, 64.0, 48.0, 16.0, 4.0, 1.0];
// 8
const META_ROWS: [(f64, f64, f64, f64, f64); 2] = [(0.41, 0.05, 0.61, 0.50, 7.8), (0.35, 0.08, 0.62, 0.77, 6.6)];
const META_BIAS_TOL: f64 = 0.02;
const META_SIGMA_TOL: f64 = 0.05;
const META_ROUGH_SIGMA: f64 = 6.0;
const META_ROUGH_TOL: f64 = 2.0;
// 9
const COVERAGE_N: usize = 1000;
const COVERAGE_P: usize = 1000;
const COVERAGE_NOMINAL: f64 = 0.95;
const COVERAGE_TOL: f64 = 0.03;
const COVERAGE_BROKEN_MAX: f64 = 0.5;
const COVERAGE_MIN_Z: f64 = 2.0;
// 10
const WORKER_COUNTS: [usize; 2] = [1, 8];

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn c1_oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = rng::stream(11, Domain::Generator, 0);
    let mut worst = 0.0f64;
    for k in 0..ORACLE_SYSTEMS {
        let n = rng.random_range(1..=ORACLE_MAX_N);
        let lo = rng.random_range(1..=n.min(6));
        let config = GeneratorConfig {
            n,
            cluster_size_min: lo,
            cluster_size_max: rng.random_range(lo..=n.min(25)),
            own_draw: if k % 2 == 0 { OwnDraw::PerCluster } else { OwnDraw::PerArticle },
            ..GeneratorConfig::default()
        };
        let within: f64 = rng.random_range(0.0..0.9);
        let config = GeneratorConfig {
            within_share: within,
            background_share: rng.random_range(0.0..(0.95 - within).min(0.5)),
            ..config
        };
        let system: DemandSystem = generate_demand_system(&config, k as u64).map_err(|e| e.to_string())?;
        let mult: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();
        let fast = system.demand_at(&mult).map_err(|e| e.to_string())?;
        let dense = dense_oracle(&system, &mult).map_err(|e| e.to_string())?;
        for (a, b) in fast.iter().zip(&dense) {
            worst = worst.max((a - b).abs() / b.abs());
        }
    }
    let elapsed = start.elapsed();
    check(
        worst < ORACLE_REL_TOL && elapsed < ORACLE_BUDGET,
        format!("{ORACLE_SYSTEMS} systems, max relative deviation {worst:.2e}, {elapsed:.2?}"),
    )
}

fn c2_closed_form_pair() -> Outcome {
    let e = ElasticityStructure::new(vec![-2.0, -2.0], vec![0.5], 0.0, Partition::single_cluster(2).unwrap())
        .map_err(|e| e.to_string())?;
    let system = DemandSystem::new(vec![1.0, 1.0], vec![1.0, 1.0], e).map_err(|e| e.to_string())?;
    let policy = PricePolicy::new(0.9).unwrap();
    let est = run_experiment(&system, &Assignment::from_treated(2, [0]), &policy, Metric::Units)
        .map_err(|e| e.to_string())?
        .lift;
    let gte = system.global_treatment_effect(&policy, Metric::Units).map_err(|e| e.to_string())?;
    let bias = est / gte - 1.0;
    // treated: 0.9^-2, control: 0.9^0.5, roll-out: 0.9^(-2 + 0.5)
    let est_cf = 0.9f64.powf(-2.5) - 1.0;
    let gte_cf = 0.9f64.powf(-1.5) - 1.0;
    let bias_cf = est_cf / gte_cf - 1.0;
    let got = [est, gte, bias];
    let closed = [est_cf, gte_cf, bias_cf];
    let ok = got.iter().zip(&closed).all(|(g, c)| (g - c).abs() < PAIR_TOL);
    let stated: Vec<String> = PAIR_STATED
        .iter()
        .zip(&closed)
        .map(|((name, v), c)| format!("{name} {c:.7} (stated {v}, off by {:.1e})", (c - v).abs()))
        .collect();
    check(ok, format!("closed forms matched to {PAIR_TOL:e}: {}", stated.join(", ")))
}

fn c3_no_interference() -> Outcome {
    let config = GeneratorConfig {
        n: NULL_N,
        within_share: 0.0,
        background_share: 0.0,
        ..GeneratorConfig::default()
    };
    let policy = PricePolicy::new(0.95).unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    for metric in [Metric::Revenue, Metric::Units] {
        let rows = sweep_substitution(
            &config,
            &[0.0],
            &[SweepStrategy::Article, SweepStrategy::Cluster],
            &policy,
            metric,
            NULL_P,
            7,
        )
        .map_err(|e| e.to_string())?;
        for row in rows {
            let z = row.report.mean_bias / row.report.bias_standard_error();
            ok &= z.abs() < MC_SE_MULTIPLE;
            parts.push(format!("{metric}/{} {z:+.2} SE", row.strategy));
        }
    }
    check(ok, parts.join(", "))
}

fn c4_bias_sweep() -> Outcome {
    let start = Instant::now();
    let rows = sweep_substitution(
        &GeneratorConfig::default(),
        &SWEEP_PHIS,
        &[SweepStrategy::Article, SweepStrategy::Cluster],
        &PricePolicy::new(0.95).unwrap(),
        Metric::Revenue,
        SWEEP_P,
        7,
    )
    .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let pick = |s: &str| rows.iter().filter(|r| r.strategy == s).map(|r| &r.report).collect::<Vec<_>>();
    let (article, cluster) = (pick("article"), pick("cluster"));
    let increasing = article.windows(2).all(|w| w[1].mean_bias > w[0].mean_bias);
    let peak = article.iter().map(|r| r.mean_bias).fold(f64::MIN, f64::max);
    let cluster_z = cluster
        .iter()
        .map(|r| (r.mean_bias / r.bias_standard_error()).abs())
        .fold(0.0, f64::max);
    let costlier = article.iter().zip(&cluster).all(|(a, c)| c.relative_sd > a.relative_sd);
    let biases: Vec<String> = article.iter().map(|r| format!("{:.2}", r.mean_bias)).collect();
    check(
        increasing && peak >= SWEEP_MIN_PEAK_BIAS && cluster_z < MC_SE_MULTIPLE && costlier && elapsed < SWEEP_BUDGET,
        format!(
            "article bias [{}], cluster max |bias| {cluster_z:.2} SE, cluster relative_sd higher at every phi: {costlier}, {elapsed:.1?}",
            biases.join(", ")
        ),
    )
}

fn two_triangles() -> SessionGraph {
    SessionGraph::from_edges(6, [(0, 1, 1), (0, 2, 1), (1, 2, 1), (3, 4, 1), (3, 5, 1), (4, 5, 1)]).unwrap()
}

/// Best modularity over every partition of `n` nodes (restricted growth strings).
fn exhaustive_optimum(graph: &SessionGraph) -> f64 {
    let n = graph.n();
    let mut labels = vec![0usize; n];
    let mut best = f64::MIN;
    loop {
        let p = Partition::from_labels(&labels).unwrap();
        best = best.max(modularity(graph, &p, 1.0).unwrap());
        // next restricted growth string
        let mut i = n - 1;
        loop {
            let max_prefix = labels[..i].iter().copied().max().unwrap_or(0);
            if i > 0 && labels[i] <= max_prefix {
                labels[i] += 1;
                labels[i + 1..].iter_mut().for_each(|l| *l = 0);
                break;
            }
            if i <= 1 {
                return best;
            }
            i -= 1;
        }
    }
}

fn random_graph(n: usize, seed: u64) -> Option<SessionGraph> {
    let mut rng = rng::stream(seed, Domain::Sessions, 99);
    let density = rng.random_range(0.2..0.7);
    let mut edges = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if rng.random_bool(density) {
                edges.push((a, b, rng.random_range(1..4)));
            }
        }
    }
    (!edges.is_empty()).then(|| SessionGraph::from_edges(n, edges).unwrap())
}

fn c5_modularity() -> Outcome {
    let g = two_triangles();
    let parts = [
        Partition::new(vec![0, 0, 0, 1, 1, 1]).unwrap(),
        Partition::single_cluster(6).unwrap(),
        Partition::singletons(6).unwrap(),
    ];
    let mut ok = true;
    let mut detail = Vec::new();
    for (p, want) in parts.iter().zip(TRIANGLES_Q) {
        let q: f64 = modularity(&g, p, 1.0).map_err(|e| e.to_string())?;
        let hit = (q - want).abs() < MODULARITY_TOL;
        ok &= hit;
        detail.push(format!("Q={q:.6} (want {want}{})", if hit { "" } else { " MISMATCH" }));
    }
    let recovered = louvain::<f64>(&g, 1.0, 0).map_err(|e| e.to_string())? == parts[0];
    ok &= recovered;
    let mut worst = 0.0f64;
    for seed in 0..LOUVAIN_GRAPHS {
        let n = 3 + (seed % 6) as usize;
        let Some(graph) = random_graph(n, seed) else { continue };
        let found = louvain::<f64>(&graph, 1.0, seed).unwrap();
        let q: f64 = modularity(&graph, &found, 1.0).unwrap();
        worst = worst.max(exhaustive_optimum(&graph) - q);
    }
    ok &= worst <= LOUVAIN_GAP;
    check(
        ok,
        format!(
            "triangles {}; recovered: {recovered}; worst gap to optimum {worst:.4} over {LOUVAIN_GRAPHS} graphs",
            detail.join(", ")
        ),
    )
}

fn c6_exposure() -> Outcome {
    let planted = Partition::from_sizes(&[10; 50]).unwrap();
    let cluster = RandomizationStrategy::ClusterLevel(planted.clone());
    let share = |params: &SessionParams, strategy: &RandomizationStrategy, seed: u64| {
        let sessions = generate_sessions(&planted, params, seed).unwrap();
        let mut rng = rng::stream(seed, Domain::Exposure, 0);
        let a = assign(strategy, planted.n(), &mut rng).unwrap();
        exposure_share(&sessions, &a).unwrap().share_both
    };
    let pure = share(
        &SessionParams {
            n_sessions: 20_000,
            purity: 1.0,
            ..SessionParams::default()
        },
        &cluster,
        1,
    );
    let uniform = share(
        &SessionParams {
            n_sessions: UNIFORM_SESSIONS,
            views_min: 2,
            views_max: 2,
            purity: 0.0,
        },
        &RandomizationStrategy::ArticleLevel,
        2,
    );
    let calibrated = share(&SessionParams::one_in_three_calibration(), &cluster, 3);
    check(
        pure == 0.0 && (uniform - UNIFORM_TARGET).abs() <= UNIFORM_TOL && (calibrated - 1.0 / 3.0).abs() <= ONE_IN_THREE_TOL,
        format!("purity 1: {pure}, uniform 2-view: {uniform:.4}, calibration scenario: {calibrated:.4}"),
    )
}

/// Mean over seeds and the standard error of that mean for each grid point.
struct Series {
    mean: Vec<f64>,
    se: Vec<f64>,
}

fn series(per_seed: &[Vec<(f64, f64)>]) -> Series {
    let k = per_seed.len() as f64;
    let len = per_seed[0].len();
    let mean = (0..len).map(|i| per_seed.iter().map(|s| s[i].0).sum::<f64>() / k).collect();
    let se = (0..len)
        .map(|i| per_seed.iter().map(|s| s[i].1 * s[i].1).sum::<f64>().sqrt() / k)
        .collect();
    Series { mean, se }
}

/// No step moves against `sign` by 3 SE, and the overall change moves with
/// it by more than 3 SE.
fn trend(s: &Series, sign: f64) -> bool {
    let steps_ok = (1..s.mean.len()).all(|i| {
        let d = sign * (s.mean[i] - s.mean[i - 1]);
        d > -MC_SE_MULTIPLE * s.se[i].hypot(s.se[i - 1])
    });
    let last = s.mean.len() - 1;
    steps_ok && sign * (s.mean[last] - s.mean[0]) > MC_SE_MULTIPLE * s.se[last].hypot(s.se[0])
}

fn c7_frontier() -> Outcome {
    let config = GeneratorConfig {
        n: 2000,
        within_share: 0.15,
        background_share: 0.1,
        ..GeneratorConfig::default()
    };
    let params = SessionParams {
        n_sessions: 20_000,
        views_min: 2,
        views_max: 6,
        purity: 0.85,
    };
    let policy = PricePolicy::new(0.95).unwrap();
    let (mut share, mut bias, mut rsd) = (Vec::new(), Vec::new(), Vec::new());
    let mut bias_positive = true;
    for seed in 0..FRONTIER_SEEDS {
        let system: DemandSystem = generate_demand_system(&config, seed).map_err(|e| e.to_string())?;
        let sessions = generate_sessions(system.partition(), &params, seed).map_err(|e| e.to_string())?;
        let mut points = clustering::frontier(&system, &sessions, &FRONTIER_GAMMAS, &policy, Metric::Units, FRONTIER_P, seed)
            .map_err(|e| e.to_string())?;
        points.reverse(); // decreasing gamma
        let mut s = Vec::new();
        let mut b = Vec::new();
        let mut r = Vec::new();
        for pt in &points {
            let report = pt.bias.as_ref().ok_or("frontier point without a bias report")?;
            let se = report.bias_standard_error();
            bias_positive &= report.mean_bias > MC_SE_MULTIPLE * se;
            s.push((pt.share_both.unwrap(), pt.share_both_sd.unwrap() / (clustering::EXPOSURE_DRAWS as f64).sqrt()));
            b.push((report.mean_bias, se));
            r.push((report.relative_sd, report.relative_sd / (2.0 * (FRONTIER_P as f64 - 1.0)).sqrt()));
        }
        share.push(s);
        bias.push(b);
        rsd.push(r);
    }
    let (share, bias, rsd) = (series(&share), series(&bias), series(&rsd));
    let fmt = |s: &Series, prec: usize| s.mean.iter().map(|v| format!("{v:.prec$}")).collect::<Vec<_>>().join(" ");
    check(
        trend(&share, -1.0) && trend(&bias, -1.0) && trend(&rsd, 1.0) && bias_positive,
        format!(
            "share_both [{}], mean_bias [{}], relative_sd [{}], bias > 3 SE everywhere: {bias_positive}",
            fmt(&share, 3),
            fmt(&bias, 3),
            fmt(&rsd, 4)
        ),
    )
}

fn c8_meta() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (clustered, halfwidth, article, bias_want, sigma_want) in META_ROWS {
        let input = interference_lab::MetaExperimentInput {
            label: String::new(),
            est_clustered: clustered,
            ci_halfwidth: halfwidth,
            est_article: article,
        };
        let cmp = compare(&input, DEFAULT_HALFWIDTH_DIVISOR).map_err(|e| e.to_string())?;
        let rb = cmp.relative_bias.ok_or("relative bias undefined")?;
        ok &= (rb - bias_want).abs() <= META_BIAS_TOL
            && (cmp.sigma_distance - sigma_want).abs() <= META_SIGMA_TOL
            && (cmp.sigma_distance - META_ROUGH_SIGMA).abs() <= META_ROUGH_TOL;
        parts.push(format!("relative_bias {rb:.3}, sigma_distance {:.2}", cmp.sigma_distance));
    }
    check(ok, parts.join("; "))
}

fn c9_coverage() -> Outcome {
    let policy = PricePolicy::new(0.95).unwrap();
    let run = |phi: f64| {
        let config = GeneratorConfig {
            n: COVERAGE_N,
            within_share: phi,
            ..GeneratorConfig::default()
        };
        let system: DemandSystem = generate_demand_system(&config, 7).unwrap();
        coverage_analysis(&system, &RandomizationStrategy::ArticleLevel, &policy, Metric::Revenue, COVERAGE_P, 7, 0.05)
            .unwrap()
    };
    let clean = run(0.0);
    let broken = run(0.5);
    check(
        (clean.coverage_rate - COVERAGE_NOMINAL).abs() <= COVERAGE_TOL
            && broken.coverage_rate < COVERAGE_BROKEN_MAX
            && broken.mean_z > COVERAGE_MIN_Z,
        format!(
            "phi 0: coverage {:.3}; phi 0.5: coverage {:.3}, mean_z {:.2}",
            clean.coverage_rate, broken.coverage_rate, broken.mean_z
        ),
    )
}

fn cli(args: &[&str], dir: &Path) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_interference-lab"))
        .args(args)
        .current_dir(dir)
        .env_remove("INTERFERENCE_LAB_SEED")
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr).trim()));
    }
    Ok(out.stdout)
}

fn c10_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    std::fs::write(
        dir.path().join("meta.csv"),
        "label,est_clustered,ci_halfwidth,est_article\na,0.41,0.05,0.61\nb,0.35,0.08,0.62\n",
    )
    .map_err(|e| e.to_string())?;
    let small = ["--n", "400", "--seed", "5"];
    let sessions = ["--n-sessions", "4000"];
    let commands: Vec<(&str, Vec<&str>)> = vec![
        ("gen", vec!["--force"]),
        ("simulate", vec!["--p", "200", "--strategy", "article"]),
        ("sweep", vec!["--p", "100", "--phis", "0,0.3"]),
        ("cluster", sessions.to_vec()),
        ("exposure", [&sessions[..], &["--strategy", "cluster"]].concat()),
        ("frontier", [&sessions[..], &["--gammas", "1,8,64", "--p", "100"]].concat()),
        ("meta", vec!["--in", "meta.csv"]),
        ("coverage", vec!["--p", "200"]),
    ];
    let mut mismatched = Vec::new();
    for (name, extra) in &commands {
        let mut outputs = Vec::new();
        for workers in WORKER_COUNTS {
            let w = workers.to_string();
            let mut args = vec![*name, "--workers", &w];
            args.extend(&extra[..]);
            if *name != "meta" {
                args.extend(small);
            }
            let bytes = if *name == "gen" {
                let file = format!("sys{workers}.json");
                args.extend(["--out", &file]);
                cli(&args, dir.path())?;
                std::fs::read(dir.path().join(&file)).map_err(|e| e.to_string())?
            } else {
                cli(&args, dir.path())?
            };
            if bytes.is_empty() {
                return Err(format!("{name} produced no output"));
            }
            outputs.push(bytes);
        }
        if outputs.windows(2).any(|w| w[0] != w[1]) {
            mismatched.push(*name);
        }
    }
    check(
        mismatched.is_empty(),
        format!("{} subcommands at {WORKER_COUNTS:?} workers, mismatched: {mismatched:?}", commands.len()),
    )
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("oracle equivalence", c1_oracle_equivalence),
        ("closed-form pair", c2_closed_form_pair),
        ("no-interference nullity", c3_no_interference),
        ("bias sweep", c4_bias_sweep),
        ("modularity values", c5_modularity),
        ("exposure properties", c6_exposure),
        ("frontier shape", c7_frontier),
        ("meta-experiment table", c8_meta),
        ("coverage", c9_coverage),
        ("determinism", c10_determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {:>2} {tag} {name} ({:.1?}): {detail}", i + 1, start.elapsed());
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
