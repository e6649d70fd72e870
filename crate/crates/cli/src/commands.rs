use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use sha2::{Digest, Sha256};

use harvestsim::agent::{FreyrManager, Policy};
use harvestsim::config::{ManagerKind, RunConfig};
use harvestsim::domain::{Allocation, ClusterConfig};
use harvestsim::metrics::{report, WorkloadReport};
use harvestsim::scenario::{desk_catalog, synthetic_catalog};
use harvestsim::sim::run;
use harvestsim::trainer::{self, write_log};
use harvestsim::workload::{generate_poisson_trace, write_catalog, write_trace, GeneratorParams, Trace};

use crate::{Common, UsageError};

const OUT_ENV: &str = "HARVESTSIM_OUT";

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn resolve_out(flag: Option<PathBuf>, configured: Option<PathBuf>) -> Result<PathBuf> {
    let dir = flag
        .or(configured)
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&dir).with_context(|| format!("creating output directory {}", dir.display()))?;
    Ok(dir)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn hash_hex(text: &str) -> String {
    hex::encode(&Sha256::digest(text.as_bytes())[..8])
}

/// `seed=.. config_hash=..` line written at the top of every output file.
fn header(cfg: &RunConfig) -> Result<String> {
    Ok(format!("seed={} config_hash={}", cfg.seed()?, hash_hex(&cfg.canonical())))
}

struct Loaded {
    cfg: RunConfig,
    out: PathBuf,
}

fn load(common: &Common, checkpoint: Option<PathBuf>) -> Result<Loaded> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = Some(seed);
    }
    if let Some(ckpt) = checkpoint {
        cfg.checkpoint_path = Some(ckpt);
    }
    let cfg = cfg.finalize()?;
    let out = resolve_out(common.out.clone(), cfg.out_dir.clone())?;
    Ok(Loaded { cfg, out })
}

pub fn gen_trace(calls: usize, mean_iat: f64, functions: Option<usize>, seed: u64, out: Option<PathBuf>) -> Result<()> {
    if calls == 0 {
        return Err(usage("--calls must be at least 1"));
    }
    if !(mean_iat.is_finite() && mean_iat > 0.0) {
        return Err(usage("--mean-iat must be positive"));
    }
    if functions == Some(0) {
        return Err(usage("--functions must be at least 1"));
    }
    let out = resolve_out(out, None)?;
    let catalog = match functions {
        Some(n) => synthetic_catalog(n, seed, &ClusterConfig::default()),
        None => desk_catalog(),
    };
    let trace = generate_poisson_trace(&catalog, &GeneratorParams::new(mean_iat, calls, seed))?;
    let recipe = format!("calls={calls} mean_iat={mean_iat} functions={functions:?} seed={seed}");
    let comment = format!("seed={seed} config_hash={}", hash_hex(&recipe));

    let mut w = create(&out.join("catalog.csv"))?;
    writeln!(w, "# {comment}")?;
    write_catalog(&mut w, &catalog)?;
    w.flush()?;
    let mut w = create(&out.join("trace.csv"))?;
    writeln!(w, "# {comment}")?;
    write_trace(&mut w, &trace)?;
    w.flush()?;

    let s = trace.summary();
    let fmt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"));
    println!("calls={} avg_iat_s={} reqs_per_s={}", s.calls, fmt(s.mean_iat_s), fmt(s.reqs_per_s));
    println!("wrote {} and {}", out.join("catalog.csv").display(), out.join("trace.csv").display());
    Ok(())
}

pub fn train(common: &Common, episodes: Option<usize>, resume: Option<PathBuf>) -> Result<()> {
    let Loaded { mut cfg, out } = load(common, None)?;
    if let Some(n) = episodes {
        cfg.trainer.episodes = n;
    }
    let head = header(&cfg)?;
    let mut policy = match &resume {
        Some(path) => Policy::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?,
        None => Policy::init(cfg.seed()?)?,
    };
    let traces = cfg.train_traces()?;
    let every = cfg.checkpoint_every;
    let out_dir = out.clone();
    let mut on_episode = |row: &trainer::EpisodeLog, p: &Policy| -> harvestsim::Result<()> {
        if every > 0 && (row.episode + 1).is_multiple_of(every) {
            p.save(&out_dir.join(format!("checkpoint_ep{:04}.ckpt", row.episode + 1)))?;
        }
        Ok(())
    };
    let log = trainer::train(&mut policy, &traces, &cfg.cluster, &cfg.trainer, &mut on_episode)?;

    let ckpt = out.join("checkpoint.ckpt");
    policy.save(&ckpt)?;
    let mut w = create(&out.join("train_log.csv"))?;
    write_log(&mut w, &log, Some(&head))?;
    w.flush()?;
    if let (Some(first), Some(last)) = (log.first(), log.last()) {
        println!(
            "episodes={} first_reward={:.3} last_reward={:.3} last_avg_slowdown={:.4}",
            log.len(),
            first.cumulative_reward,
            last.cumulative_reward,
            last.avg_slowdown
        );
    }
    println!("wrote {}", ckpt.display());
    Ok(())
}

fn user_allocs(trace: &Trace) -> HashMap<String, Allocation> {
    trace.catalog.iter().map(|f| (f.id.clone(), f.user_alloc)).collect()
}

fn evaluate(cfg: &RunConfig, kind: ManagerKind, trace: &Trace) -> Result<WorkloadReport> {
    let mut manager = cfg.build_manager(kind)?;
    let result = run(trace, &mut manager, &cfg.cluster)?;
    Ok(report(&result.records, &user_allocs(trace), &cfg.cluster)?)
}

fn write_report(out: &Path, kind: ManagerKind, rep: &WorkloadReport, head: &str) -> Result<()> {
    let mut w = create(&out.join(format!("report_{kind}.csv")))?;
    rep.write_rows(&mut w, Some(head))?;
    w.flush()?;
    let mut w = create(&out.join(format!("cdf_{kind}.csv")))?;
    rep.write_cdf(&mut w, Some(head))?;
    w.flush()?;
    let mut w = create(&out.join(format!("aggregates_{kind}.txt")))?;
    rep.write_aggregates(&mut w, Some(head))?;
    w.flush()?;
    Ok(())
}

pub fn eval(common: &Common, manager: Option<String>, checkpoint: Option<PathBuf>) -> Result<()> {
    let Loaded { mut cfg, out } = load(common, checkpoint)?;
    if let Some(m) = manager {
        cfg.manager = m.parse().map_err(|e: harvestsim::Error| usage(e.to_string()))?;
    }
    let head = header(&cfg)?;
    let trace = cfg.eval_trace()?;
    let rep = evaluate(&cfg, cfg.manager, &trace)?;
    write_report(&out, cfg.manager, &rep, &head)?;
    let a = &rep.aggregates;
    println!(
        "manager={} invocations={} avg_slowdown={:.4} p99_latency_s={:.3} slo_violation_rate={:.4}",
        cfg.manager, a.invocations, a.avg_slowdown, a.p99_latency_s, a.slo_violation_rate
    );
    Ok(())
}

pub const COMPARE_HEADER: &str =
    "manager,avg_slowdown,p50_latency_s,p99_latency_s,p99_slowdown,max_slowdown,slo_violation_rate,safe_invocation_rate";

pub fn compare(common: &Common, checkpoint: Option<PathBuf>) -> Result<()> {
    let Loaded { cfg, out } = load(common, checkpoint)?;
    let head = header(&cfg)?;
    let trace = cfg.eval_trace()?;
    let mut w = create(&out.join("compare.csv"))?;
    writeln!(w, "# {head}")?;
    writeln!(w, "{COMPARE_HEADER}")?;
    for kind in ManagerKind::ALL {
        if kind == ManagerKind::Freyr && cfg.checkpoint_path.is_none() {
            continue;
        }
        let rep = evaluate(&cfg, kind, &trace)?;
        write_report(&out, kind, &rep, &head)?;
        let a = &rep.aggregates;
        writeln!(
            w,
            "{kind},{},{},{},{},{},{},{}",
            a.avg_slowdown,
            a.p50_latency_s,
            a.p99_latency_s,
            a.p99_slowdown,
            a.max_slowdown,
            a.slo_violation_rate,
            a.safe_invocation_rate
        )?;
        println!("{kind:>7}: avg_slowdown={:.4} p99_latency_s={:.3} max_slowdown={:.3}", a.avg_slowdown, a.p99_latency_s, a.max_slowdown);
    }
    w.flush()?;
    Ok(())
}

pub const SWEEP_HEADER: &str = "threshold,safe_rate,avg_slowdown,degraded_rate";

pub fn sweep(common: &Common, checkpoint: Option<PathBuf>, thresholds: Option<Vec<f64>>) -> Result<()> {
    let thresholds = thresholds.unwrap_or_else(|| (0..=10).map(|i| i as f64 / 10.0).collect());
    if thresholds.is_empty() {
        return Err(usage("--thresholds needs at least one value"));
    }
    if let Some(bad) = thresholds.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(usage(format!("--thresholds: {bad} lies outside [0, 1]")));
    }
    let Loaded { cfg, out } = load(common, checkpoint)?;
    let head = header(&cfg)?;
    let policy = cfg.load_policy()?;
    let trace = cfg.eval_trace()?;
    let mut w = create(&out.join("sweep.csv"))?;
    writeln!(w, "# {head}")?;
    writeln!(w, "{SWEEP_HEADER}")?;
    for t in thresholds {
        let cluster = ClusterConfig { safeguard_threshold: t, ..cfg.cluster.clone() };
        let mut manager = FreyrManager::from_policy(policy.clone(), cfg.freyr_mode, cfg.seed()?);
        let result = run(&trace, &mut manager, &cluster)?;
        let rep = report(&result.records, &user_allocs(&trace), &cluster)?;
        let degraded = result.records.iter().filter(|r| r.slowdown > 1.0).count() as f64 / result.records.len() as f64;
        writeln!(w, "{t},{},{},{degraded}", rep.aggregates.safe_invocation_rate, rep.aggregates.avg_slowdown)?;
        println!(
            "threshold={t:.2} safe_rate={:.4} avg_slowdown={:.4} degraded_rate={degraded:.4}",
            rep.aggregates.safe_invocation_rate, rep.aggregates.avg_slowdown
        );
    }
    w.flush()?;
    Ok(())
}
