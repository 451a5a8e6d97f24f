//! Plain-text experiment configs: `key = value` lines where structured
//! values are JSON, hashed in parsed form so formatting never changes the
//! reported identity of a run.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use clap::ValueEnum;
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use voterlab::kernel::Kernel;
use voterlab::typespace::{MutationMeasure, TypeSpace};

/// Rescaled time grid used when a config does not set one.
pub const DEFAULT_TIME_GRID: [f64; 6] = [0.0, 0.25, 0.5, 1.0, 2.0, 3.0];

const KNOWN_KEYS: [&str; 8] = [
    "suite",
    "kernel",
    "sizes",
    "type_space",
    "mutation",
    "time_grid",
    "replicas",
    "seed",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SuiteName {
    Duality,
    Generators,
    Meeting,
    Convergence,
    Atomic,
}

impl SuiteName {
    pub fn as_str(self) -> &'static str {
        match self {
            SuiteName::Duality => "duality",
            SuiteName::Generators => "generators",
            SuiteName::Meeting => "meeting",
            SuiteName::Convergence => "convergence",
            SuiteName::Atomic => "atomic",
        }
    }
}

impl fmt::Display for SuiteName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SuiteName {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "duality" => Ok(SuiteName::Duality),
            "generators" => Ok(SuiteName::Generators),
            "meeting" => Ok(SuiteName::Meeting),
            "convergence" => Ok(SuiteName::Convergence),
            "atomic" => Ok(SuiteName::Atomic),
            other => Err(anyhow!(
                "unknown suite `{other}`; expected duality, generators, meeting, convergence, or atomic"
            )),
        }
    }
}

/// Voting-kernel family, instantiated per entry of the `sizes` list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelSpec {
    Complete,
    Cycle,
    Torus2d,
    WeightedEr { p: f64, graph_seed: u64 },
}

impl KernelSpec {
    pub fn build(&self, n: usize) -> Result<Kernel> {
        let kernel = match self {
            KernelSpec::Complete => Kernel::complete(n),
            KernelSpec::Cycle => Kernel::cycle(n),
            KernelSpec::Torus2d => {
                let side = (n as f64).sqrt().round() as usize;
                if side * side != n {
                    bail!("torus2d size {n} is not a perfect square");
                }
                Kernel::torus2d(side)
            }
            KernelSpec::WeightedEr { p, graph_seed } => Kernel::weighted_er(n, *p, *graph_seed, 32),
        };
        kernel.with_context(|| format!("building a {} kernel on {n} sites", self.name()))
    }

    /// Same family with an independent edge-weight draw; only the random
    /// family responds to the salt.
    pub fn build_salted(&self, n: usize, salt: u64) -> Result<Kernel> {
        match self {
            KernelSpec::WeightedEr { p, graph_seed } => KernelSpec::WeightedEr {
                p: *p,
                graph_seed: voterlab::rng::mix(*graph_seed, salt),
            }
            .build(n),
            fixed => fixed.build(n),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            KernelSpec::Complete => "complete",
            KernelSpec::Cycle => "cycle",
            KernelSpec::Torus2d => "torus2d",
            KernelSpec::WeightedEr { .. } => "weighted_er",
        }
    }

    pub fn is_complete(&self) -> bool {
        matches!(self, KernelSpec::Complete)
    }
}

/// Metric space of types.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TypeSpaceSpec {
    EquallySpaced { m: usize },
    Discrete { m: usize },
    Explicit { labels: Vec<String>, dist: Vec<Vec<f64>> },
}

impl TypeSpaceSpec {
    pub fn build(&self) -> Result<TypeSpace> {
        match self {
            TypeSpaceSpec::EquallySpaced { m } => Ok(TypeSpace::equally_spaced(*m)),
            TypeSpaceSpec::Discrete { m } => Ok(TypeSpace::discrete(*m)),
            TypeSpaceSpec::Explicit { labels, dist } => {
                let m = labels.len();
                if dist.len() != m || dist.iter().any(|row| row.len() != m) {
                    bail!("type-space distance matrix must be {m} x {m}");
                }
                let flat: Vec<f64> = dist.iter().flatten().copied().collect();
                let matrix = Array2::from_shape_vec((m, m), flat).expect("shape checked");
                TypeSpace::new(labels.clone(), matrix).context("building the explicit type space")
            }
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TypeSpaceSpec::EquallySpaced { m } | TypeSpaceSpec::Discrete { m } => *m,
            TypeSpaceSpec::Explicit { labels, .. } => labels.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Target mutation measure: mass `total` split along `weights`.  Suites that
/// sweep over sizes rescale the total by the per-size meeting scale, keeping
/// the rescaled mass constant across the sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MutationSpec {
    pub weights: Vec<f64>,
    pub total: f64,
}

impl MutationSpec {
    /// The configured proportions carrying the given total mass.
    pub fn with_total(&self, total: f64) -> Result<MutationMeasure> {
        if total == 0.0 {
            return Ok(MutationMeasure::zero(self.weights.len()));
        }
        let sum: f64 = self.weights.iter().sum();
        if sum <= 0.0 {
            bail!("mutation weights sum to zero, cannot carry mass {total}");
        }
        let scaled: Vec<f64> = self.weights.iter().map(|w| w * total / sum).collect();
        MutationMeasure::new(scaled).context("building the mutation measure")
    }

    pub fn target(&self) -> Result<MutationMeasure> {
        self.with_total(self.total)
    }

    /// Per-size measure with total `total / gamma`, so the product of scale
    /// and mass equals the target exactly.
    pub fn scaled(&self, gamma: f64) -> Result<MutationMeasure> {
        self.with_total(self.total / gamma)
    }
}

/// One parsed experiment description.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentConfig {
    pub suite: SuiteName,
    pub kernel: KernelSpec,
    pub sizes: Vec<usize>,
    pub type_space: TypeSpaceSpec,
    pub mutation: MutationSpec,
    pub time_grid: Vec<f64>,
    pub replicas: usize,
    pub seed: u64,
}

impl ExperimentConfig {
    /// Hash of the parsed form; identical for any two files that parse to
    /// the same experiment.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn positive_times(&self) -> Vec<f64> {
        self.time_grid.iter().copied().filter(|t| *t > 0.0).collect()
    }

    pub fn max_time(&self) -> f64 {
        self.time_grid.last().copied().unwrap_or(0.0)
    }
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    parse_config_text(&text)
}

pub fn parse_config_text(text: &str) -> Result<ExperimentConfig> {
    let entries = split_entries(text)?;
    for (key, (line, _)) in &entries {
        if !KNOWN_KEYS.contains(key) {
            bail!("config line {line}: unknown key `{key}`");
        }
    }

    let suite: SuiteName = required(&entries, "suite")?.1.parse()?;
    let kernel: KernelSpec = json_entry(&entries, "kernel")?;
    let sizes: Vec<usize> = json_entry(&entries, "sizes")?;
    let type_space: TypeSpaceSpec = json_entry(&entries, "type_space")?;
    let mutation: MutationSpec = json_entry(&entries, "mutation")?;
    let time_grid: Vec<f64> = match entries.get("time_grid") {
        Some((line, raw)) => serde_json::from_str(raw)
            .with_context(|| format!("config line {line}: key `time_grid` is malformed"))?,
        None => DEFAULT_TIME_GRID.to_vec(),
    };
    let (line, raw) = required(&entries, "replicas")?;
    let replicas: usize = raw
        .parse()
        .with_context(|| format!("config line {line}: key `replicas` is not a count"))?;
    let (line, raw) = required(&entries, "seed")?;
    let seed: u64 = raw
        .parse()
        .with_context(|| format!("config line {line}: key `seed` is not an unsigned integer"))?;

    let config = ExperimentConfig {
        suite,
        kernel,
        sizes,
        type_space,
        mutation,
        time_grid,
        replicas,
        seed,
    };
    validate(&config)?;
    Ok(config)
}

fn split_entries(text: &str) -> Result<BTreeMap<&str, (usize, &str)>> {
    let mut entries = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("config line {line_no}: expected `key = value`, got `{line}`");
        };
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || value.is_empty() {
            bail!("config line {line_no}: empty key or value");
        }
        if let Some((first, _)) = entries.insert(key, (line_no, value)) {
            bail!("config line {line_no}: key `{key}` already set on line {first}");
        }
    }
    Ok(entries)
}

fn required<'a>(
    entries: &BTreeMap<&str, (usize, &'a str)>,
    key: &str,
) -> Result<(usize, &'a str)> {
    entries
        .get(key)
        .copied()
        .ok_or_else(|| anyhow!("config is missing required key `{key}`"))
}

fn json_entry<T: for<'de> Deserialize<'de>>(
    entries: &BTreeMap<&str, (usize, &str)>,
    key: &str,
) -> Result<T> {
    let (line, raw) = required(entries, key)?;
    serde_json::from_str(raw).with_context(|| format!("config line {line}: key `{key}` is malformed"))
}

fn validate(config: &ExperimentConfig) -> Result<()> {
    if config.sizes.is_empty() {
        bail!("`sizes` must list at least one site count");
    }
    if config.sizes.windows(2).any(|p| p[1] <= p[0]) {
        bail!("`sizes` must be strictly increasing");
    }
    if config.sizes[0] < 2 {
        bail!("site counts must be at least 2");
    }
    if config.replicas == 0 {
        bail!("`replicas` must be at least 1");
    }
    if config.time_grid.is_empty() {
        bail!("`time_grid` must contain at least one time");
    }
    if config
        .time_grid
        .iter()
        .any(|t| !t.is_finite() || *t < 0.0)
    {
        bail!("`time_grid` entries must be finite and nonnegative");
    }
    if config.time_grid.windows(2).any(|p| p[1] <= p[0]) {
        bail!("`time_grid` must be strictly increasing");
    }
    if config.type_space.is_empty() {
        bail!("the type space must contain at least one type");
    }
    if config.mutation.weights.len() != config.type_space.len() {
        bail!(
            "mutation weights cover {} types but the type space has {}",
            config.mutation.weights.len(),
            config.type_space.len()
        );
    }
    if config
        .mutation
        .weights
        .iter()
        .any(|w| !w.is_finite() || *w < 0.0)
    {
        bail!("mutation weights must be finite and nonnegative");
    }
    if !config.mutation.total.is_finite() || config.mutation.total < 0.0 {
        bail!("mutation total must be finite and nonnegative");
    }
    config.type_space.build()?;
    config.mutation.target()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = "suite = meeting\n\
        kernel = {\"family\": \"complete\"}\n\
        sizes = [8, 16]\n\
        type_space = {\"kind\": \"equally_spaced\", \"m\": 3}\n\
        mutation = {\"weights\": [1.0, 1.0, 1.0], \"total\": 0.5}\n\
        replicas = 100\n\
        seed = 7\n";

    #[test]
    fn parses_a_full_config() {
        let config = parse_config_text(BASE).unwrap();
        assert_eq!(config.suite, SuiteName::Meeting);
        assert_eq!(config.sizes, vec![8, 16]);
        assert_eq!(config.time_grid, DEFAULT_TIME_GRID.to_vec());
        assert_eq!(config.replicas, 100);
    }

    #[test]
    fn missing_key_is_named() {
        let text = BASE.replace("replicas = 100\n", "");
        let err = parse_config_text(&text).unwrap_err();
        assert!(err.to_string().contains("`replicas`"), "{err}");
    }

    #[test]
    fn malformed_line_reports_its_number() {
        let text = BASE.replace("sizes = [8, 16]", "sizes [8, 16]");
        let err = parse_config_text(&text).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }

    #[test]
    fn bad_json_reports_line_and_key() {
        let text = BASE.replace("sizes = [8, 16]", "sizes = [8, 16");
        let err = format!("{:#}", parse_config_text(&text).unwrap_err());
        assert!(err.contains("line 3") && err.contains("`sizes`"), "{err}");
    }

    #[test]
    fn duplicate_key_is_rejected() {
        let text = format!("{BASE}seed = 8\n");
        let err = parse_config_text(&text).unwrap_err();
        assert!(err.to_string().contains("already set"), "{err}");
    }

    #[test]
    fn unknown_key_is_rejected() {
        let text = format!("{BASE}sides = [3]\n");
        let err = parse_config_text(&text).unwrap_err();
        assert!(err.to_string().contains("`sides`"), "{err}");
    }

    #[test]
    fn hash_ignores_formatting_but_not_content() {
        let spaced = BASE.replace("sizes = [8, 16]", "sizes   =   [ 8 ,  16 ]");
        let commented = format!("# run notes\n\n{spaced}");
        let a = parse_config_text(BASE).unwrap().hash();
        let b = parse_config_text(&commented).unwrap().hash();
        assert_eq!(a, b);
        let changed = BASE.replace("replicas = 100", "replicas = 101");
        let c = parse_config_text(&changed).unwrap().hash();
        assert_ne!(a, c);
    }

    #[test]
    fn grid_and_size_invariants_are_enforced() {
        let bad = BASE.replace("sizes = [8, 16]", "sizes = [16, 8]");
        assert!(parse_config_text(&bad).is_err());
        let bad = format!("{BASE}time_grid = [0.0, 0.5, 0.5]\n");
        assert!(parse_config_text(&bad).is_err());
        let bad = BASE.replace(
            "mutation = {\"weights\": [1.0, 1.0, 1.0], \"total\": 0.5}",
            "mutation = {\"weights\": [1.0, 1.0], \"total\": 0.5}",
        );
        assert!(parse_config_text(&bad).is_err());
    }

    #[test]
    fn torus_sizes_must_be_squares() {
        let spec = KernelSpec::Torus2d;
        assert!(spec.build(9).is_ok());
        assert!(spec.build(10).is_err());
    }
}
