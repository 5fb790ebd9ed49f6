//! Experiment configuration: one JSON document plus dotted-path overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use fer_er::rg::KeepPolicy;
use fer_er::{FlowOptions, ModelSpec, OptimizerOptions, UUpdate};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    #[serde(default)]
    pub flow: FlowConfig,
    #[serde(default)]
    pub outputs: OutputConfig,
    /// Only used by randomised audits; the pipeline itself is deterministic.
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub levels: usize,
    pub keep: KeepPolicy,
    pub optimizer: OptimizerOptions,
    pub no_disentanglers: bool,
    pub gauge_fix: bool,
    pub energy: bool,
}

impl Default for FlowConfig {
    fn default() -> Self {
        let d = FlowOptions::default();
        Self {
            levels: d.levels,
            keep: d.keep,
            optimizer: d.optimizer,
            no_disentanglers: false,
            gauge_fix: d.gauge_fix,
            energy: d.energy,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub entropy_ladder: Vec<usize>,
    /// Mode pairs for `correlators`; empty means `(0, d)` for
    /// `d = 1..=max_separation`.
    pub pairs: Vec<(usize, usize)>,
    pub max_separation: usize,
    /// Level the correlators are reconstructed from; the last one if unset.
    pub correlator_level: Option<usize>,
    pub write_trajectory: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            entropy_ladder: vec![2, 4, 8, 16, 32],
            pairs: Vec::new(),
            max_separation: 64,
            correlator_level: None,
            write_trajectory: true,
        }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelSpec::chain(512, 2, 1.0, 1.0),
            flow: FlowConfig::default(),
            outputs: OutputConfig::default(),
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut doc = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
            }
            None => serde_json::to_value(Self::default())?,
        };
        for (key, value) in overrides {
            apply_override(&mut doc, key, value)?;
        }
        let config: Self = serde_json::from_value(doc).context("invalid configuration")?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.outputs.entropy_ladder.contains(&0) {
            bail!("entropy ladder entries must be positive");
        }
        if let KeepPolicy::Fixed(0) = self.flow.keep {
            bail!("flow.keep must keep at least one mode");
        }
        let o = &self.flow.optimizer;
        if !(o.tol >= 0.0 && o.kept_weight >= 0.0) {
            bail!("optimizer tolerances and weights must be non-negative");
        }
        if self.outputs.pairs.iter().any(|&(r, s)| r.max(s) >= self.model.mode_count()) {
            bail!("correlator pair outside the lattice of {} modes", self.model.mode_count());
        }
        Ok(())
    }

    pub fn flow_options(&self) -> FlowOptions {
        let mut optimizer = self.flow.optimizer;
        if self.flow.no_disentanglers {
            optimizer.u_update = UUpdate::Frozen;
        }
        FlowOptions {
            levels: self.flow.levels,
            keep: self.flow.keep,
            optimizer,
            entropy_ladder: self.outputs.entropy_ladder.clone(),
            energy: self.flow.energy,
            gauge_fix: self.flow.gauge_fix,
        }
    }

    /// The configuration with further overrides applied.
    pub fn with_overrides(&self, overrides: &[(String, String)]) -> Result<Self> {
        let mut doc = serde_json::to_value(self)?;
        for (key, value) in overrides {
            apply_override(&mut doc, key, value)?;
        }
        let config: Self = serde_json::from_value(doc).context("invalid configuration")?;
        config.validate()?;
        Ok(config)
    }
}

/// Splits `key=value`.
pub fn parse_assignment(s: &str) -> Result<(String, String)> {
    match s.split_once('=') {
        Some((k, v)) if !k.is_empty() => Ok((k.to_string(), v.to_string())),
        _ => bail!("expected KEY=VALUE, got `{s}`"),
    }
}

/// Sets the value at a dotted path. The value is read as JSON when it
/// parses, as a string otherwise.
pub fn apply_override(doc: &mut Value, key: &str, raw: &str) -> Result<()> {
    let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let Value::Object(map) = node else {
            bail!("`{}` is not an object in override `{key}`", parts[..i].join("."));
        };
        if i + 1 == parts.len() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        node = map.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    bail!("empty override key")
}

/// Pulls `--a.b=value` arguments out of the command line.
pub fn extract_overrides(args: Vec<String>) -> (Vec<String>, Vec<(String, String)>) {
    let mut rest = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    for arg in args {
        let dotted = arg
            .strip_prefix("--")
            .and_then(|a| a.split_once('='))
            .filter(|(k, _)| k.contains('.'));
        match dotted {
            Some((k, v)) => overrides.push((k.to_string(), v.to_string())),
            None => rest.push(arg),
        }
    }
    (rest, overrides)
}
