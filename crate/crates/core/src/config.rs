//! Flat `key=value` run configuration with dotted keys.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys,
//! duplicate keys and unparsable values are errors that name the key.
//! Relative paths are resolved against the config file's directory.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::agent::{FreyrManager, Policy, SelectionMode};
use crate::domain::{Allocation, ClusterConfig};
use crate::error::{Error, Result};
use crate::managers::{EnsureManager, EnsureParams, FixedManager, GreedyManager, GreedyParams, ResourceManager};
use crate::scenario::{desk_catalog, stream_seed, DESK_CALLS, DESK_MEAN_IAT_S, DESK_TRAIN_POOL};
use crate::trainer::PpoConfig;
use crate::workload::{generate_poisson_trace, load_catalog, load_trace, GeneratorParams, Trace};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ManagerKind {
    Fixed,
    Greedy,
    Ensure,
    Freyr,
}

impl ManagerKind {
    pub const ALL: [ManagerKind; 4] = [ManagerKind::Fixed, ManagerKind::Greedy, ManagerKind::Ensure, ManagerKind::Freyr];

    pub fn as_str(self) -> &'static str {
        match self {
            ManagerKind::Fixed => "fixed",
            ManagerKind::Greedy => "greedy",
            ManagerKind::Ensure => "ensure",
            ManagerKind::Freyr => "freyr",
        }
    }
}

impl fmt::Display for ManagerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ManagerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ManagerKind::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::config(format!("manager: expected fixed|greedy|ensure|freyr, got `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorkloadConfig {
    /// External trace; when absent traces are generated.
    pub trace_path: Option<PathBuf>,
    /// Catalog for the external trace, or for generation instead of the
    /// built-in desk catalog.
    pub catalog_path: Option<PathBuf>,
    pub calls: usize,
    pub mean_iat_s: f64,
    pub train_traces: usize,
    pub time_scale: f64,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            trace_path: None,
            catalog_path: None,
            calls: DESK_CALLS,
            mean_iat_s: DESK_MEAN_IAT_S,
            train_traces: DESK_TRAIN_POOL,
            time_scale: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// Mandatory before a run starts; may come from the command line.
    pub seed: Option<u64>,
    pub cluster: ClusterConfig,
    pub manager: ManagerKind,
    pub greedy: GreedyParams,
    pub ensure: EnsureParams,
    pub freyr_mode: SelectionMode,
    pub checkpoint_path: Option<PathBuf>,
    pub workload: WorkloadConfig,
    pub trainer: PpoConfig,
    /// Save a checkpoint every this many episodes; 0 saves only at the end.
    pub checkpoint_every: usize,
    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: None,
            cluster: ClusterConfig::default(),
            manager: ManagerKind::Fixed,
            greedy: GreedyParams::default(),
            ensure: EnsureParams::default(),
            freyr_mode: SelectionMode::Greedy,
            checkpoint_path: None,
            workload: WorkloadConfig::default(),
            trainer: PpoConfig::default(),
            checkpoint_every: 0,
            out_dir: None,
        }
    }
}

fn value<T: FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.parse().map_err(|_| Error::config(format!("{key}: cannot parse `{raw}`")))
}

impl RunConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            // `#` starts a comment anywhere on the line
            let line = line.split_once('#').map_or(line, |(before, _)| before).trim();
            if line.is_empty() {
                continue;
            }
            let (key, raw) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected key=value, got `{line}`", i + 1)))?;
            let (key, raw) = (key.trim(), raw.trim());
            if seen.insert(key.to_string(), ()).is_some() {
                return Err(Error::config(format!("{key}: duplicate key")));
            }
            cfg.set(key, raw, base_dir)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        RunConfig::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn set(&mut self, key: &str, raw: &str, base_dir: &Path) -> Result<()> {
        let path = |raw: &str| Some(base_dir.join(raw));
        match key {
            "seed" => self.seed = Some(value(key, raw)?),
            "manager" => self.manager = raw.parse()?,
            "out_dir" => self.out_dir = path(raw),
            "cluster.n_invokers" => self.cluster.n_invokers = value(key, raw)?,
            "cluster.invoker_cpu" => self.cluster.invoker_cpu = value(key, raw)?,
            "cluster.invoker_mem_mb" => self.cluster.invoker_mem_mb = value(key, raw)?,
            "cluster.max_cpu" => self.cluster.per_function_max.cpu = value(key, raw)?,
            "cluster.max_mem_mb" => self.cluster.per_function_max.mem = value(key, raw)?,
            "cluster.cpu_unit" => self.cluster.cpu_unit = value(key, raw)?,
            "cluster.mem_unit_mb" => self.cluster.mem_unit_mb = value(key, raw)?,
            "slo_threshold" => self.cluster.slo_threshold = value(key, raw)?,
            "safeguard.threshold" => self.cluster.safeguard_threshold = value(key, raw)?,
            "greedy.over_threshold" => self.greedy.over_threshold = value(key, raw)?,
            "greedy.under_threshold" => self.greedy.under_threshold = value(key, raw)?,
            "ensure.degradation_factor" => self.ensure.degradation_factor = value(key, raw)?,
            "ensure.low_utilization" => self.ensure.low_utilization = value(key, raw)?,
            "freyr.mode" => self.freyr_mode = raw.parse()?,
            "freyr.checkpoint_path" => self.checkpoint_path = path(raw),
            "workload.trace" => self.workload.trace_path = path(raw),
            "workload.catalog" => self.workload.catalog_path = path(raw),
            "workload.calls" => self.workload.calls = value(key, raw)?,
            "workload.mean_iat_s" => self.workload.mean_iat_s = value(key, raw)?,
            "workload.train_traces" => self.workload.train_traces = value(key, raw)?,
            "workload.time_scale" => self.workload.time_scale = value(key, raw)?,
            "trainer.episodes" => self.trainer.episodes = value(key, raw)?,
            "trainer.epochs" => self.trainer.epochs_per_update = value(key, raw)?,
            "trainer.clip" => self.trainer.clip_epsilon = value(key, raw)?,
            "trainer.gamma" => self.trainer.gamma = value(key, raw)?,
            "trainer.lr" => self.trainer.lr = value(key, raw)?,
            "trainer.reward_bonus" => self.trainer.reward_bonus = value(key, raw)?,
            "trainer.checkpoint_every" => self.checkpoint_every = value(key, raw)?,
            _ => return Err(Error::config(format!("{key}: unknown key"))),
        }
        Ok(())
    }

    /// Fills the derived seeds and checks every section.
    pub fn finalize(mut self) -> Result<Self> {
        let seed = self.seed.ok_or_else(|| Error::config("seed: required (config key or --seed)"))?;
        self.cluster.rng_seed = seed;
        self.trainer.seed = seed;
        self.cluster.validate()?;
        self.trainer.validate()?;
        let w = &self.workload;
        if w.calls == 0 {
            return Err(Error::config("workload.calls: must be at least 1"));
        }
        if !(w.mean_iat_s.is_finite() && w.mean_iat_s > 0.0) {
            return Err(Error::config("workload.mean_iat_s: must be positive"));
        }
        if w.train_traces == 0 {
            return Err(Error::config("workload.train_traces: must be at least 1"));
        }
        if !(w.time_scale.is_finite() && w.time_scale > 0.0) {
            return Err(Error::config("workload.time_scale: must be positive"));
        }
        if w.trace_path.is_some() && w.catalog_path.is_none() {
            return Err(Error::config("workload.catalog: required together with workload.trace"));
        }
        for p in [&w.trace_path, &w.catalog_path].into_iter().flatten() {
            if !p.is_file() {
                return Err(Error::config(format!("workload path {} does not exist", p.display())));
            }
        }
        Ok(self)
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| Error::config("seed: required (config key or --seed)"))
    }

    fn generator_catalog(&self) -> Result<Vec<crate::domain::FunctionSpec>> {
        match &self.workload.catalog_path {
            Some(p) => load_catalog(p),
            None => Ok(desk_catalog()),
        }
    }

    fn generated(&self, stream: u64) -> Result<Trace> {
        let seed = stream_seed(self.seed()?, stream);
        let params = GeneratorParams::new(self.workload.mean_iat_s, self.workload.calls, seed);
        generate_poisson_trace(&self.generator_catalog()?, &params)
    }

    fn scaled(&self, trace: Trace) -> Result<Trace> {
        if self.workload.time_scale == 1.0 {
            return Ok(trace);
        }
        crate::workload::rescale_trace(&trace, self.workload.time_scale)
    }

    /// The trace `eval`, `compare` and `sweep` run on: the external trace
    /// when configured, otherwise a generated one no training trace shares.
    pub fn eval_trace(&self) -> Result<Trace> {
        let trace = match (&self.workload.trace_path, &self.workload.catalog_path) {
            (Some(t), Some(c)) => load_trace(t, c)?,
            _ => self.generated(0xFFFF)?,
        };
        self.scaled(trace)
    }

    pub fn train_traces(&self) -> Result<Vec<Trace>> {
        if let (Some(t), Some(c)) = (&self.workload.trace_path, &self.workload.catalog_path) {
            return Ok(vec![self.scaled(load_trace(t, c)?)?]);
        }
        (1..=self.workload.train_traces as u64).map(|i| self.generated(i).and_then(|t| self.scaled(t))).collect()
    }

    pub fn load_policy(&self) -> Result<Policy> {
        let path = self
            .checkpoint_path
            .as_ref()
            .ok_or_else(|| Error::config("freyr.checkpoint_path: required for the freyr manager"))?;
        if !path.is_file() {
            return Err(Error::config(format!("freyr.checkpoint_path: {} does not exist", path.display())));
        }
        Policy::load(path)
    }

    pub fn build_manager(&self, kind: ManagerKind) -> Result<Box<dyn ResourceManager>> {
        Ok(match kind {
            ManagerKind::Fixed => Box::new(FixedManager),
            ManagerKind::Greedy => Box::new(GreedyManager::new(self.greedy)),
            ManagerKind::Ensure => Box::new(EnsureManager::new(self.ensure)),
            ManagerKind::Freyr => Box::new(FreyrManager::from_policy(self.load_policy()?, self.freyr_mode, self.seed()?)),
        })
    }

    /// Every effective setting, one `key=value` per line in a fixed order.
    /// Two configs that behave the same render the same.
    pub fn canonical(&self) -> String {
        let c = &self.cluster;
        let w = &self.workload;
        let t = &self.trainer;
        let opt = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let max: Allocation = c.per_function_max;
        let entries: Vec<(&str, String)> = vec![
            ("seed", self.seed.map(|s| s.to_string()).unwrap_or_default()),
            ("manager", self.manager.to_string()),
            ("cluster.n_invokers", c.n_invokers.to_string()),
            ("cluster.invoker_cpu", c.invoker_cpu.to_string()),
            ("cluster.invoker_mem_mb", c.invoker_mem_mb.to_string()),
            ("cluster.max_cpu", max.cpu.to_string()),
            ("cluster.max_mem_mb", max.mem.to_string()),
            ("cluster.cpu_unit", c.cpu_unit.to_string()),
            ("cluster.mem_unit_mb", c.mem_unit_mb.to_string()),
            ("slo_threshold", c.slo_threshold.to_string()),
            ("safeguard.threshold", c.safeguard_threshold.to_string()),
            ("greedy.over_threshold", self.greedy.over_threshold.to_string()),
            ("greedy.under_threshold", self.greedy.under_threshold.to_string()),
            ("ensure.degradation_factor", self.ensure.degradation_factor.to_string()),
            ("ensure.low_utilization", self.ensure.low_utilization.to_string()),
            ("freyr.mode", format!("{:?}", self.freyr_mode).to_lowercase()),
            ("freyr.checkpoint_path", opt(&self.checkpoint_path)),
            ("workload.trace", opt(&w.trace_path)),
            ("workload.catalog", opt(&w.catalog_path)),
            ("workload.calls", w.calls.to_string()),
            ("workload.mean_iat_s", w.mean_iat_s.to_string()),
            ("workload.train_traces", w.train_traces.to_string()),
            ("workload.time_scale", w.time_scale.to_string()),
            ("trainer.episodes", t.episodes.to_string()),
            ("trainer.epochs", t.epochs_per_update.to_string()),
            ("trainer.clip", t.clip_epsilon.to_string()),
            ("trainer.gamma", t.gamma.to_string()),
            ("trainer.lr", t.lr.to_string()),
            ("trainer.reward_bonus", t.reward_bonus.to_string()),
            ("trainer.checkpoint_every", self.checkpoint_every.to_string()),
        ];
        entries.into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig> {
        RunConfig::parse(text, Path::new("/base"))
    }

    #[test]
    fn parses_dotted_keys_and_comments() {
        let cfg = parse("# run\nseed = 7  # trailing\n\nmanager=greedy\nsafeguard.threshold=0.5\ngreedy.over_threshold=0.7\nworkload.trace=t.csv\n").unwrap();
        assert_eq!(cfg.seed, Some(7));
        assert_eq!(cfg.manager, ManagerKind::Greedy);
        assert_eq!(cfg.cluster.safeguard_threshold, 0.5);
        assert_eq!(cfg.greedy.over_threshold, 0.7);
        assert_eq!(cfg.workload.trace_path, Some(PathBuf::from("/base/t.csv")));
    }

    #[test]
    fn errors_name_the_key() {
        let msg = |t: &str| parse(t).unwrap_err().to_string();
        assert!(msg("bogus.key=1").contains("bogus.key"));
        assert!(msg("trainer.lr=fast").contains("trainer.lr"));
        assert!(msg("seed=1\nseed=2").contains("seed"));
        assert!(msg("manager=magic").contains("manager"));
        assert!(msg("just words").contains("line 1"));
    }

    #[test]
    fn finalize_requires_seed_and_valid_sections() {
        assert!(parse("").unwrap().finalize().unwrap_err().to_string().contains("seed"));
        let cfg = parse("seed=3").unwrap().finalize().unwrap();
        assert_eq!(cfg.cluster.rng_seed, 3);
        assert_eq!(cfg.trainer.seed, 3);
        assert!(parse("seed=3\nsafeguard.threshold=1.5").unwrap().finalize().is_err());
        assert!(parse("seed=3\nworkload.trace=/nonexistent.csv\nworkload.catalog=/nonexistent.csv").unwrap().finalize().is_err());
    }

    #[test]
    fn freyr_needs_checkpoint() {
        let cfg = parse("seed=3").unwrap().finalize().unwrap();
        let err = cfg.build_manager(ManagerKind::Freyr).err().unwrap();
        assert!(matches!(err, Error::Config(_)));
        assert!(cfg.build_manager(ManagerKind::Greedy).is_ok());
    }

    #[test]
    fn generated_traces_are_seeded() {
        let a = parse("seed=3\nworkload.calls=20").unwrap().finalize().unwrap();
        let b = parse("seed=4\nworkload.calls=20").unwrap().finalize().unwrap();
        assert_eq!(a.eval_trace().unwrap(), a.eval_trace().unwrap());
        assert_ne!(a.eval_trace().unwrap(), b.eval_trace().unwrap());
        let pool = a.train_traces().unwrap();
        assert_eq!(pool.len(), DESK_TRAIN_POOL);
        assert!(pool.iter().all(|t| t.invocations.len() == 20));
    }

    #[test]
    fn canonical_form_round_trips() {
        let cfg = parse("seed=3\nmanager=ensure\ntrainer.lr=0.01").unwrap();
        let again = parse(&cfg.canonical().lines().filter(|l| !l.ends_with('=')).collect::<Vec<_>>().join("\n")).unwrap();
        assert_eq!(cfg, again);
    }
}
