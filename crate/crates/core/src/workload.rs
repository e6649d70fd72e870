//! Invocation traces: synthetic Poisson generation, CSV ingestion and time
//! rescaling.

use std::collections::{HashMap, HashSet};
use std::io::Write;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use crate::domain::{Allocation, ClusterConfig, FunctionSpec};
use crate::error::{Error, Result};

pub const TRACE_HEADER: &str = "invocation_id,function_id,arrival_time_s,input_scale";
pub const CATALOG_HEADER: &str = "function_id,user_cpu_cores,user_mem_mb,base_latency_s,sat_cpu_base,sat_mem_base,cpu_exponent,mem_exponent,sat_jitter";

#[derive(Clone, Debug, PartialEq)]
pub struct TraceEntry {
    pub inv_id: u64,
    pub function_id: String,
    pub arrival_time_s: f64,
    pub input_scale: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub invocations: Vec<TraceEntry>,
    pub catalog: Vec<FunctionSpec>,
}

impl Trace {
    pub fn function(&self, id: &str) -> Option<&FunctionSpec> {
        self.catalog.iter().find(|f| f.id == id)
    }

    /// Checks ordering, catalog membership and id uniqueness.
    pub fn validate(&self, cfg: &ClusterConfig) -> Result<()> {
        let mut ids = HashSet::new();
        for f in &self.catalog {
            f.validate(cfg)?;
            if !ids.insert(f.id.as_str()) {
                return Err(Error::config(format!("duplicate function id `{}`", f.id)));
            }
        }
        let mut inv_ids = HashSet::new();
        let mut prev = f64::NEG_INFINITY;
        for e in &self.invocations {
            if !ids.contains(e.function_id.as_str()) {
                return Err(Error::config(format!(
                    "invocation {} names unknown function `{}`",
                    e.inv_id, e.function_id
                )));
            }
            if !(e.arrival_time_s.is_finite() && e.arrival_time_s >= prev) {
                return Err(Error::config(format!("invocation {} is out of time order", e.inv_id)));
            }
            if !(e.input_scale.is_finite() && e.input_scale > 0.0) {
                return Err(Error::config(format!("invocation {} has non-positive input scale", e.inv_id)));
            }
            if !inv_ids.insert(e.inv_id) {
                return Err(Error::config(format!("duplicate invocation id {}", e.inv_id)));
            }
            prev = e.arrival_time_s;
        }
        Ok(())
    }

    pub fn summary(&self) -> TraceSummary {
        let calls = self.invocations.len();
        let mean_iat_s = match (self.invocations.first(), self.invocations.last()) {
            (Some(a), Some(b)) if calls > 1 => Some((b.arrival_time_s - a.arrival_time_s) / (calls - 1) as f64),
            _ => None,
        };
        TraceSummary { calls, mean_iat_s, reqs_per_s: mean_iat_s.filter(|m| *m > 0.0).map(|m| 1.0 / m) }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceSummary {
    pub calls: usize,
    pub mean_iat_s: Option<f64>,
    pub reqs_per_s: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum FunctionMix {
    Uniform,
    /// One weight per catalog entry, in catalog order.
    Weighted(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorParams {
    pub mean_iat_s: f64,
    pub n_calls: usize,
    pub seed: u64,
    /// Input scales are drawn log-uniformly from this closed range.
    pub input_scale_range: (f64, f64),
    pub mix: FunctionMix,
}

impl GeneratorParams {
    pub fn new(mean_iat_s: f64, n_calls: usize, seed: u64) -> Self {
        GeneratorParams {
            mean_iat_s,
            n_calls,
            seed,
            input_scale_range: (0.5, 2.0),
            mix: FunctionMix::Uniform,
        }
    }
}

pub fn generate_poisson_trace(catalog: &[FunctionSpec], params: &GeneratorParams) -> Result<Trace> {
    if catalog.is_empty() {
        return Err(Error::config("cannot generate a trace from an empty catalog"));
    }
    if !(params.mean_iat_s.is_finite() && params.mean_iat_s > 0.0) {
        return Err(Error::config("mean inter-arrival time must be positive"));
    }
    if params.n_calls == 0 {
        return Err(Error::config("a trace needs at least one call"));
    }
    let (lo, hi) = params.input_scale_range;
    if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
        return Err(Error::config("input scale range must satisfy 0 < lo <= hi"));
    }
    let picker = match &params.mix {
        FunctionMix::Uniform => None,
        FunctionMix::Weighted(w) => {
            if w.len() != catalog.len() {
                return Err(Error::config("one weight per catalog function is required"));
            }
            Some(WeightedIndex::new(w).map_err(|e| Error::config(format!("bad function weights: {e}")))?)
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let gaps = Exp::new(1.0 / params.mean_iat_s).expect("positive rate");
    let (ln_lo, ln_hi) = (lo.ln(), hi.ln());
    let mut t = 0.0;
    let mut invocations = Vec::with_capacity(params.n_calls);
    for i in 0..params.n_calls {
        t += gaps.sample(&mut rng);
        let idx = match &picker {
            Some(w) => w.sample(&mut rng),
            None => rng.random_range(0..catalog.len()),
        };
        let input_scale = if ln_lo == ln_hi { lo } else { rng.random_range(ln_lo..=ln_hi).exp() };
        invocations.push(TraceEntry {
            inv_id: i as u64,
            function_id: catalog[idx].id.clone(),
            arrival_time_s: t,
            input_scale,
        });
    }
    Ok(Trace { invocations, catalog: catalog.to_vec() })
}

/// Multiplies every arrival time by `factor`, e.g. 1/60 to read a
/// per-minute trace as per-second.
pub fn rescale_trace(trace: &Trace, factor: f64) -> Result<Trace> {
    if !(factor.is_finite() && factor > 0.0) {
        return Err(Error::config("rescale factor must be positive"));
    }
    let mut out = trace.clone();
    for e in &mut out.invocations {
        e.arrival_time_s *= factor;
    }
    Ok(out)
}

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, 0, e))
}

fn csv_error(path: &Path, line: usize, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(line);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse { path: path.to_path_buf(), line, msg: format!("{other:?}") },
    }
}

/// Iterates data rows after checking the header, yielding (line, record).
fn rows(path: &Path, header: &str) -> Result<Vec<(usize, csv::StringRecord)>> {
    let mut rdr = reader(path)?;
    let mut out = Vec::new();
    let mut saw_header = false;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, 0, e))?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if !saw_header {
            let got = rec.iter().collect::<Vec<_>>().join(",");
            if got != header {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    msg: format!("expected header `{header}`, found `{got}`"),
                });
            }
            saw_header = true;
            continue;
        }
        out.push((line, rec));
    }
    if !saw_header {
        return Err(Error::Parse { path: path.to_path_buf(), line: 1, msg: "missing header".into() });
    }
    Ok(out)
}

fn field<T: std::str::FromStr>(path: &Path, line: usize, rec: &csv::StringRecord, idx: usize, name: &str) -> Result<T> {
    let raw = rec.get(idx).ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: format!("missing column `{name}`"),
    })?;
    raw.parse().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: format!("cannot parse `{raw}` as {name}"),
    })
}

pub fn load_catalog(path: &Path) -> Result<Vec<FunctionSpec>> {
    let mut catalog = Vec::new();
    let mut seen = HashSet::new();
    for (line, rec) in rows(path, CATALOG_HEADER)? {
        if rec.len() != 9 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: format!("expected 9 columns, found {}", rec.len()),
            });
        }
        let id: String = field(path, line, &rec, 0, "function_id")?;
        if !seen.insert(id.clone()) {
            return Err(Error::Parse { path: path.to_path_buf(), line, msg: format!("duplicate function `{id}`") });
        }
        catalog.push(FunctionSpec {
            id,
            user_alloc: Allocation::new(
                field(path, line, &rec, 1, "user_cpu_cores")?,
                field(path, line, &rec, 2, "user_mem_mb")?,
            ),
            base_latency_s: field(path, line, &rec, 3, "base_latency_s")?,
            sat_cpu_base: field(path, line, &rec, 4, "sat_cpu_base")?,
            sat_mem_base: field(path, line, &rec, 5, "sat_mem_base")?,
            cpu_exponent: field(path, line, &rec, 6, "cpu_exponent")?,
            mem_exponent: field(path, line, &rec, 7, "mem_exponent")?,
            sat_jitter: field(path, line, &rec, 8, "sat_jitter")?,
        });
    }
    Ok(catalog)
}

/// Loads a trace and its catalog. Rows are stably re-sorted by arrival time.
pub fn load_trace(path: &Path, catalog_path: &Path) -> Result<Trace> {
    let catalog = load_catalog(catalog_path)?;
    let known: HashMap<&str, ()> = catalog.iter().map(|f| (f.id.as_str(), ())).collect();
    let mut invocations = Vec::new();
    let mut ids = HashSet::new();
    for (line, rec) in rows(path, TRACE_HEADER)? {
        if rec.len() != 4 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: format!("expected 4 columns, found {}", rec.len()),
            });
        }
        let entry = TraceEntry {
            inv_id: field(path, line, &rec, 0, "invocation_id")?,
            function_id: field(path, line, &rec, 1, "function_id")?,
            arrival_time_s: field(path, line, &rec, 2, "arrival_time_s")?,
            input_scale: field(path, line, &rec, 3, "input_scale")?,
        };
        if !known.contains_key(entry.function_id.as_str()) {
            return Err(Error::UnknownFunction { function_id: entry.function_id, path: path.to_path_buf(), line });
        }
        if !entry.arrival_time_s.is_finite() || entry.arrival_time_s < 0.0 {
            return Err(Error::Parse { path: path.to_path_buf(), line, msg: "arrival time must be finite and >= 0".into() });
        }
        if !(entry.input_scale.is_finite() && entry.input_scale > 0.0) {
            return Err(Error::Parse { path: path.to_path_buf(), line, msg: "input scale must be > 0".into() });
        }
        if !ids.insert(entry.inv_id) {
            return Err(Error::Parse { path: path.to_path_buf(), line, msg: format!("duplicate invocation id {}", entry.inv_id) });
        }
        invocations.push(entry);
    }
    invocations.sort_by(|a, b| a.arrival_time_s.total_cmp(&b.arrival_time_s));
    Ok(Trace { invocations, catalog })
}

pub fn write_catalog<W: Write>(mut out: W, catalog: &[FunctionSpec]) -> std::io::Result<()> {
    writeln!(out, "{CATALOG_HEADER}")?;
    for f in catalog {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            f.id,
            f.user_alloc.cpu,
            f.user_alloc.mem,
            f.base_latency_s,
            f.sat_cpu_base,
            f.sat_mem_base,
            f.cpu_exponent,
            f.mem_exponent,
            f.sat_jitter
        )?;
    }
    Ok(())
}

pub fn write_trace<W: Write>(mut out: W, trace: &Trace) -> std::io::Result<()> {
    writeln!(out, "{TRACE_HEADER}")?;
    for e in &trace.invocations {
        writeln!(out, "{},{},{},{}", e.inv_id, e.function_id, e.arrival_time_s, e.input_scale)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::fs;

    fn catalog(n: usize) -> Vec<FunctionSpec> {
        (0..n)
            .map(|i| FunctionSpec {
                id: format!("fn{i}"),
                user_alloc: Allocation::new(2, 256),
                base_latency_s: 1.0,
                sat_cpu_base: 1.0,
                sat_mem_base: 128.0,
                cpu_exponent: 1.0,
                mem_exponent: 1.0,
                sat_jitter: 0.1,
            })
            .collect()
    }

    #[test]
    fn table_sized_trace_has_expected_mean_gap() {
        let t = generate_poisson_trace(&catalog(10), &GeneratorParams::new(2.2, 268, 7)).unwrap();
        assert_eq!(t.invocations.len(), 268);
        let mean = t.invocations.last().unwrap().arrival_time_s / 268.0;
        assert!((1.8..=2.6).contains(&mean), "mean gap {mean}");
        t.validate(&ClusterConfig::default()).unwrap();
    }

    #[test]
    fn single_call_trace() {
        let t = generate_poisson_trace(&catalog(1), &GeneratorParams::new(2.2, 1, 3)).unwrap();
        assert_eq!(t.invocations.len(), 1);
        assert!(t.invocations[0].arrival_time_s > 0.0);
    }

    #[test]
    fn generation_is_seed_deterministic() {
        let p = GeneratorParams::new(2.2, 100, 11);
        let a = generate_poisson_trace(&catalog(3), &p).unwrap();
        let b = generate_poisson_trace(&catalog(3), &p).unwrap();
        assert_eq!(a, b);
        let c = generate_poisson_trace(&catalog(3), &GeneratorParams { seed: 12, ..p }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn generation_rejects_bad_inputs() {
        assert!(matches!(generate_poisson_trace(&[], &GeneratorParams::new(2.2, 10, 1)), Err(Error::Config(_))));
        assert!(generate_poisson_trace(&catalog(1), &GeneratorParams::new(0.0, 10, 1)).is_err());
        assert!(generate_poisson_trace(&catalog(1), &GeneratorParams::new(1.0, 0, 1)).is_err());
    }

    #[test]
    fn large_trace_mean_converges() {
        let t = generate_poisson_trace(&catalog(4), &GeneratorParams::new(2.2, 20_000, 5)).unwrap();
        let mean = t.summary().mean_iat_s.unwrap();
        assert!((mean - 2.2).abs() / 2.2 < 0.05, "mean {mean}");
    }

    #[test]
    fn input_scales_stay_in_range_and_weights_skew() {
        let mut p = GeneratorParams::new(1.0, 5000, 9);
        p.mix = FunctionMix::Weighted(vec![9.0, 1.0]);
        let t = generate_poisson_trace(&catalog(2), &p).unwrap();
        assert!(t.invocations.iter().all(|e| (0.5..=2.0).contains(&e.input_scale)));
        let first = t.invocations.iter().filter(|e| e.function_id == "fn0").count();
        assert!(first > 4200 && first < 4800, "{first}");
    }

    #[test]
    fn rescale_examples() {
        let mut t = generate_poisson_trace(&catalog(1), &GeneratorParams::new(1.0, 3, 1)).unwrap();
        for (e, at) in t.invocations.iter_mut().zip([0.0, 60.0, 120.0]) {
            e.arrival_time_s = at;
        }
        let r = rescale_trace(&t, 1.0 / 60.0).unwrap();
        let times: Vec<f64> = r.invocations.iter().map(|e| e.arrival_time_s).collect();
        assert_eq!(times, vec![0.0, 1.0, 2.0]);
        assert_eq!(rescale_trace(&t, 1.0).unwrap(), t);
        let doubled = rescale_trace(&t, 2.0).unwrap();
        assert_eq!(doubled.invocations[1].arrival_time_s, 120.0);
        assert!(rescale_trace(&t, 0.0).is_err());
    }

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    fn catalog_file(dir: &Path) -> std::path::PathBuf {
        let mut buf = Vec::new();
        write_catalog(&mut buf, &catalog(2)).unwrap();
        write(dir, "catalog.csv", std::str::from_utf8(&buf).unwrap())
    }

    #[test]
    fn load_well_formed_trace() {
        let dir = tempfile::tempdir().unwrap();
        let cat = catalog_file(dir.path());
        let tr = write(dir.path(), "t.csv", &format!("{TRACE_HEADER}\n0,fn0,0.5,1\n1,fn1,1.5,2\n2,fn0,2.5,0.5\n"));
        let t = load_trace(&tr, &cat).unwrap();
        assert_eq!(t.invocations.len(), 3);
        assert_eq!(t.catalog, catalog(2));
        assert!(t.invocations.windows(2).all(|w| w[0].arrival_time_s <= w[1].arrival_time_s));
    }

    #[test]
    fn out_of_order_rows_are_resorted_stably() {
        let dir = tempfile::tempdir().unwrap();
        let cat = catalog_file(dir.path());
        let tr = write(
            dir.path(),
            "t.csv",
            &format!("# comment\n{TRACE_HEADER}\n0,fn0,5,1\n1,fn1,1,1\n2,fn0,1,1\n"),
        );
        let t = load_trace(&tr, &cat).unwrap();
        let ids: Vec<u64> = t.invocations.iter().map(|e| e.inv_id).collect();
        assert_eq!(ids, vec![1, 2, 0]);
    }

    #[test]
    fn unknown_function_is_a_reference_error() {
        let dir = tempfile::tempdir().unwrap();
        let cat = catalog_file(dir.path());
        let tr = write(dir.path(), "t.csv", &format!("{TRACE_HEADER}\n0,fn0,0,1\n1,ghost,1,1\n"));
        match load_trace(&tr, &cat) {
            Err(Error::UnknownFunction { function_id, line, .. }) => {
                assert_eq!(function_id, "ghost");
                assert_eq!(line, 3);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_row_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let cat = catalog_file(dir.path());
        let tr = write(dir.path(), "t.csv", &format!("{TRACE_HEADER}\n0,fn0,0,1\n1,fn1,abc,1\n"));
        match load_trace(&tr, &cat) {
            Err(Error::Parse { line, msg, .. }) => {
                assert_eq!(line, 3);
                assert!(msg.contains("arrival_time_s"));
            }
            other => panic!("unexpected {other:?}"),
        }
        let bad_header = write(dir.path(), "h.csv", "id,function,time,scale\n");
        assert!(matches!(load_trace(&bad_header, &cat), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn written_files_load_back() {
        let dir = tempfile::tempdir().unwrap();
        let cat = catalog_file(dir.path());
        let t = generate_poisson_trace(&catalog(2), &GeneratorParams::new(2.2, 50, 4)).unwrap();
        let mut buf = Vec::new();
        write_trace(&mut buf, &t).unwrap();
        let tr = write(dir.path(), "t.csv", std::str::from_utf8(&buf).unwrap());
        assert_eq!(load_trace(&tr, &cat).unwrap(), t);
    }

    proptest! {
        #[test]
        fn rescale_round_trips(seed in 0u64..1000, factor in 0.01f64..100.0) {
            let t = generate_poisson_trace(&catalog(2), &GeneratorParams::new(2.2, 40, seed)).unwrap();
            let back = rescale_trace(&rescale_trace(&t, factor).unwrap(), 1.0 / factor).unwrap();
            for (a, b) in t.invocations.iter().zip(&back.invocations) {
                prop_assert!((a.arrival_time_s - b.arrival_time_s).abs() <= 1e-9 * a.arrival_time_s.max(1.0));
            }
        }
    }
}
