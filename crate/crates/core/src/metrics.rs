//! Evaluation quantities: slowdown, averages, nearest-rank percentiles,
//! per-invocation categories and the report/CDF exports.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;

use crate::domain::{Allocation, ClusterConfig, InvocationRecord};
use crate::error::{Error, Result};

/// Response latency relative to the baseline latency.
pub fn slowdown(latency_s: f64, baseline_s: f64) -> Result<f64> {
    if !(baseline_s.is_finite() && baseline_s > 0.0) {
        return Err(Error::contract(format!("baseline latency {baseline_s} must be positive")));
    }
    Ok(latency_s / baseline_s)
}

pub fn avg_slowdown(records: &[InvocationRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::contract("average slowdown of an empty workload"));
    }
    Ok(records.iter().map(|r| r.slowdown).sum::<f64>() / records.len() as f64)
}

/// Nearest-rank percentile: the smallest sample such that at least `p`
/// percent of the samples are <= it. `p` in (0, 100].
pub fn percentile(samples: &[f64], p: f64) -> Option<f64> {
    if samples.is_empty() || !(p > 0.0 && p <= 100.0) {
        return None;
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    Some(percentile_sorted(&sorted, p))
}

fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    // integer arithmetic for whole percents keeps 99% of 100 at rank 99
    let rank = if p.fract() == 0.0 {
        (p as usize * n).div_ceil(100)
    } else {
        (p / 100.0 * n as f64).ceil() as usize
    };
    sorted[rank.clamp(1, n) - 1]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Category {
    Default,
    Accelerate,
    Harvest,
    Safeguard,
    Mixed,
}

impl Category {
    pub const ALL: [Category; 5] =
        [Category::Default, Category::Accelerate, Category::Harvest, Category::Safeguard, Category::Mixed];
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Category::Default => "default",
            Category::Accelerate => "accelerate",
            Category::Harvest => "harvest",
            Category::Safeguard => "safeguard",
            Category::Mixed => "mixed",
        })
    }
}

pub fn categorize(record: &InvocationRecord, user_alloc: Allocation) -> Category {
    if record.was_safeguard {
        return Category::Safeguard;
    }
    let dc = record.allocation.cpu as i64 - user_alloc.cpu as i64;
    let dm = record.allocation.mem as i64 - user_alloc.mem as i64;
    match (dc.signum(), dm.signum()) {
        (0, 0) => Category::Default,
        (c, m) if c <= 0 && m <= 0 => Category::Harvest,
        (c, m) if c >= 0 && m >= 0 => Category::Accelerate,
        _ => Category::Mixed,
    }
}

/// Share of safeguard runs among invocations that were not the first of
/// their function.
pub fn safe_invocation_rate(records: &[InvocationRecord]) -> f64 {
    let mut first: HashMap<&str, (f64, u64)> = HashMap::new();
    for r in records {
        let key = (r.arrival_time_s, r.inv_id);
        first
            .entry(r.function_id.as_str())
            .and_modify(|k| {
                if key.0 < k.0 || (key.0 == k.0 && key.1 < k.1) {
                    *k = key;
                }
            })
            .or_insert(key);
    }
    let (mut total, mut safe) = (0usize, 0usize);
    for r in records {
        if first[r.function_id.as_str()].1 == r.inv_id {
            continue;
        }
        total += 1;
        safe += r.was_safeguard as usize;
    }
    if total == 0 {
        0.0
    } else {
        safe as f64 / total as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub inv_id: u64,
    pub function_id: String,
    pub category: Category,
    pub slowdown: f64,
    pub latency_s: f64,
    pub delta_cpu: i64,
    pub delta_mem: i64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Aggregates {
    pub invocations: usize,
    pub avg_slowdown: f64,
    pub p50_latency_s: f64,
    pub p99_latency_s: f64,
    pub p99_slowdown: f64,
    pub max_slowdown: f64,
    pub slo_violation_rate: f64,
    pub safe_invocation_rate: f64,
    /// Shares in [`Category::ALL`] order.
    pub shares: [f64; 5],
}

impl Aggregates {
    pub fn share(&self, c: Category) -> f64 {
        self.shares[Category::ALL.iter().position(|x| *x == c).expect("known category")]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CdfRow {
    pub percentile: u32,
    pub latency_s: f64,
    pub slowdown: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorkloadReport {
    pub rows: Vec<ReportRow>,
    pub aggregates: Aggregates,
    pub cdf: Vec<CdfRow>,
}

/// Builds the report; `user_allocs` maps function id to its user allocation.
pub fn report(
    records: &[InvocationRecord],
    user_allocs: &HashMap<String, Allocation>,
    cfg: &ClusterConfig,
) -> Result<WorkloadReport> {
    let avg = avg_slowdown(records)?;
    let mut rows = Vec::with_capacity(records.len());
    let mut counts = [0usize; 5];
    for r in records {
        let user = *user_allocs
            .get(&r.function_id)
            .ok_or_else(|| Error::contract(format!("no user allocation for `{}`", r.function_id)))?;
        let category = categorize(r, user);
        counts[Category::ALL.iter().position(|c| *c == category).expect("known category")] += 1;
        rows.push(ReportRow {
            inv_id: r.inv_id,
            function_id: r.function_id.clone(),
            category,
            slowdown: r.slowdown,
            latency_s: r.response_latency_s,
            delta_cpu: r.allocation.cpu as i64 - user.cpu as i64,
            delta_mem: r.allocation.mem as i64 - user.mem as i64,
        });
    }
    let n = records.len() as f64;
    let mut latencies: Vec<f64> = records.iter().map(|r| r.response_latency_s).collect();
    let mut slowdowns: Vec<f64> = records.iter().map(|r| r.slowdown).collect();
    latencies.sort_by(f64::total_cmp);
    slowdowns.sort_by(f64::total_cmp);
    let cdf = (1..=100)
        .map(|p| CdfRow {
            percentile: p,
            latency_s: percentile_sorted(&latencies, p as f64),
            slowdown: percentile_sorted(&slowdowns, p as f64),
        })
        .collect();
    let aggregates = Aggregates {
        invocations: records.len(),
        avg_slowdown: avg,
        p50_latency_s: percentile_sorted(&latencies, 50.0),
        p99_latency_s: percentile_sorted(&latencies, 99.0),
        p99_slowdown: percentile_sorted(&slowdowns, 99.0),
        max_slowdown: *slowdowns.last().expect("non-empty"),
        slo_violation_rate: slowdowns.iter().filter(|s| **s > cfg.slo_threshold).count() as f64 / n,
        safe_invocation_rate: safe_invocation_rate(records),
        shares: counts.map(|c| c as f64 / n),
    };
    Ok(WorkloadReport { rows, aggregates, cdf })
}

pub const REPORT_HEADER: &str = "inv_id,function_id,category,slowdown,latency_s,delta_cpu,delta_mem";
pub const CDF_HEADER: &str = "percentile,latency_s,slowdown";

fn comment<W: Write>(out: &mut W, header_comment: Option<&str>) -> std::io::Result<()> {
    if let Some(c) = header_comment {
        writeln!(out, "# {c}")?;
    }
    Ok(())
}

impl WorkloadReport {
    pub fn write_rows<W: Write>(&self, mut out: W, header_comment: Option<&str>) -> std::io::Result<()> {
        comment(&mut out, header_comment)?;
        writeln!(out, "{REPORT_HEADER}")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.inv_id, r.function_id, r.category, r.slowdown, r.latency_s, r.delta_cpu, r.delta_mem
            )?;
        }
        Ok(())
    }

    pub fn write_cdf<W: Write>(&self, mut out: W, header_comment: Option<&str>) -> std::io::Result<()> {
        comment(&mut out, header_comment)?;
        writeln!(out, "{CDF_HEADER}")?;
        for r in &self.cdf {
            writeln!(out, "{},{},{}", r.percentile, r.latency_s, r.slowdown)?;
        }
        Ok(())
    }

    /// Flat `key=value` summary.
    pub fn write_aggregates<W: Write>(&self, mut out: W, header_comment: Option<&str>) -> std::io::Result<()> {
        comment(&mut out, header_comment)?;
        let a = &self.aggregates;
        writeln!(out, "invocations={}", a.invocations)?;
        writeln!(out, "avg_slowdown={}", a.avg_slowdown)?;
        writeln!(out, "p50_latency_s={}", a.p50_latency_s)?;
        writeln!(out, "p99_latency_s={}", a.p99_latency_s)?;
        writeln!(out, "p99_slowdown={}", a.p99_slowdown)?;
        writeln!(out, "max_slowdown={}", a.max_slowdown)?;
        writeln!(out, "slo_violation_rate={}", a.slo_violation_rate)?;
        writeln!(out, "safe_invocation_rate={}", a.safe_invocation_rate)?;
        for (c, s) in Category::ALL.iter().zip(a.shares) {
            writeln!(out, "share.{c}={s}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Usage;

    fn rec(inv_id: u64, f: &str, alloc: Allocation, slowdown: f64, safeguard: bool) -> InvocationRecord {
        InvocationRecord {
            inv_id,
            function_id: f.into(),
            allocation: alloc,
            peak: Usage::new(1.0, 64.0),
            arrival_time_s: inv_id as f64,
            start_time_s: inv_id as f64,
            finish_time_s: inv_id as f64 + slowdown,
            execution_time_s: slowdown,
            response_latency_s: slowdown * 10.0,
            reference_latency_s: 10.0,
            slowdown,
            was_safeguard: safeguard,
            calibrated_baseline: safeguard,
        }
    }

    #[test]
    fn slowdown_examples() {
        assert_eq!(slowdown(10.0, 10.0).unwrap(), 1.0);
        assert_eq!(slowdown(5.0, 10.0).unwrap(), 0.5);
        assert!((slowdown(8.2, 10.0).unwrap() - 0.82).abs() < 1e-15);
        assert!(matches!(slowdown(1.0, 0.0), Err(Error::Contract(_))));
    }

    #[test]
    fn average_examples() {
        let a = Allocation::new(1, 64);
        let rs: Vec<_> = [1.0, 0.5, 1.5].iter().enumerate().map(|(i, s)| rec(i as u64, "f", a, *s, false)).collect();
        assert_eq!(avg_slowdown(&rs).unwrap(), 1.0);
        assert_eq!(avg_slowdown(&[rec(0, "f", a, 0.7, false)]).unwrap(), 0.7);
        assert!(avg_slowdown(&[]).is_err());
    }

    #[test]
    fn nearest_rank_percentiles() {
        let mut s = vec![0.9; 99];
        s.push(2.0);
        // 99 of 100 samples are <= 0.9, so the 99th percentile is 0.9
        assert_eq!(percentile(&s, 99.0), Some(0.9));
        assert_eq!(percentile(&s, 100.0), Some(2.0));
        let mut s = vec![0.9; 98];
        s.extend([2.0, 2.0]);
        assert_eq!(percentile(&s, 99.0), Some(2.0));
        let v: Vec<f64> = (1..=10).map(|x| x as f64).collect();
        assert_eq!(percentile(&v, 50.0), Some(5.0));
        assert_eq!(percentile(&v, 1.0), Some(1.0));
        assert_eq!(percentile(&v, 99.5), Some(10.0));
        assert_eq!(percentile(&[], 50.0), None);
    }

    /// Brute-force oracle: smallest sample with at least p% of samples <= it.
    fn rank_oracle(samples: &[f64], p: u32) -> f64 {
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        *sorted
            .iter()
            .find(|x| 100 * samples.iter().filter(|y| *y <= *x).count() >= p as usize * samples.len())
            .unwrap()
    }

    #[test]
    fn percentile_matches_counting_oracle() {
        for n in 1..60 {
            let samples: Vec<f64> = (0..n).map(|i| ((i * 37) % 17) as f64).collect();
            for p in 1..=100 {
                assert_eq!(percentile(&samples, p as f64), Some(rank_oracle(&samples, p)), "n={n} p={p}");
            }
        }
    }

    #[test]
    fn categorize_examples() {
        let user = Allocation::new(4, 512);
        assert_eq!(categorize(&rec(0, "f", user, 1.0, false), user), Category::Default);
        assert_eq!(categorize(&rec(0, "f", Allocation::new(3, 448), 1.0, false), user), Category::Harvest);
        assert_eq!(categorize(&rec(0, "f", Allocation::new(3, 512), 1.0, false), user), Category::Harvest);
        assert_eq!(categorize(&rec(0, "f", Allocation::new(6, 448), 1.0, false), user), Category::Mixed);
        assert_eq!(categorize(&rec(0, "f", Allocation::new(6, 512), 1.0, false), user), Category::Accelerate);
        assert_eq!(categorize(&rec(0, "f", user, 1.0, true), user), Category::Safeguard);
    }

    fn users() -> HashMap<String, Allocation> {
        HashMap::from([("f".to_string(), Allocation::new(4, 512)), ("g".to_string(), Allocation::new(2, 256))])
    }

    #[test]
    fn report_on_unit_slowdowns() {
        let rs: Vec<_> = (0..100).map(|i| rec(i, "f", Allocation::new(4, 512), 1.0, false)).collect();
        let rep = report(&rs, &users(), &ClusterConfig::default()).unwrap();
        assert_eq!(rep.aggregates.slo_violation_rate, 0.0);
        assert_eq!(rep.aggregates.avg_slowdown, 1.0);
        assert_eq!(rep.aggregates.share(Category::Default), 1.0);
        assert_eq!(rep.cdf.len(), 100);
    }

    #[test]
    fn report_tail_and_shares() {
        let mut rs: Vec<_> = (0..99).map(|i| rec(i, "f", Allocation::new(3, 512), 0.9, false)).collect();
        rs.push(rec(99, "g", Allocation::new(2, 256), 2.0, true));
        let rep = report(&rs, &users(), &ClusterConfig::default()).unwrap();
        assert_eq!(rep.aggregates.p99_slowdown, 0.9);
        assert_eq!(rep.aggregates.max_slowdown, 2.0);
        assert_eq!(rep.cdf[99].slowdown, 2.0);
        assert!((rep.aggregates.slo_violation_rate - 0.01).abs() < 1e-15);
        let total: f64 = rep.aggregates.shares.iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
        for c in Category::ALL {
            let from_rows = rep.rows.iter().filter(|r| r.category == c).count() as f64 / 100.0;
            assert_eq!(rep.aggregates.share(c), from_rows);
        }
    }

    #[test]
    fn safe_rate_skips_first_invocation_per_function() {
        let a = Allocation::new(4, 512);
        let rs = vec![
            rec(0, "f", a, 1.0, true),
            rec(1, "g", a, 1.0, true),
            rec(2, "f", a, 1.0, true),
            rec(3, "f", a, 1.0, false),
        ];
        assert_eq!(safe_invocation_rate(&rs), 0.5);
        assert_eq!(safe_invocation_rate(&rs[..2]), 0.0);
    }

    #[test]
    fn csv_exports() {
        let rs = vec![rec(0, "f", Allocation::new(3, 576), 0.5, false)];
        let rep = report(&rs, &users(), &ClusterConfig::default()).unwrap();
        let mut buf = Vec::new();
        rep.write_rows(&mut buf, Some("seed=1")).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), format!("# seed=1\n{REPORT_HEADER}\n0,f,mixed,0.5,5,-1,64\n"));
        let mut buf = Vec::new();
        rep.write_cdf(&mut buf, None).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("percentile,latency_s,slowdown\n1,5,0.5\n"));
        let mut buf = Vec::new();
        rep.write_aggregates(&mut buf, None).unwrap();
        assert!(String::from_utf8(buf).unwrap().contains("share.mixed=1\n"));
    }
}
