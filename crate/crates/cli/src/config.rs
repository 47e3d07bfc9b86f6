//! Run configuration: a flat JSON object with dotted keys, merged over the
//! built-in defaults, then `--set` overrides on top.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use lbt_core::data::{generate, load_csv, DataBundle, Family, LabeledSet, SplitSizes, TaskSpec, UnlabeledSet};
use lbt_core::engine::{Models, ModelConfig, RetrainConfig, SearchConfig};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::CliError;

pub type FlatConfig = BTreeMap<String, Value>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    Generated,
    Csv,
}

/// One CSV file per split. `unlabeled` may be left out (empty pool).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvPaths {
    pub teacher_train: Option<PathBuf>,
    pub teacher_val: Option<PathBuf>,
    pub student_train: Option<PathBuf>,
    pub student_val: Option<PathBuf>,
    pub unlabeled: Option<PathBuf>,
    pub test: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    pub family: Family,
    pub num_classes: usize,
    pub feature_dim: usize,
    pub sizes: SplitSizes,
    pub label_noise: f64,
    pub separation: f64,
    pub unlabeled_shift: f64,
    pub csv: CsvPaths,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::Generated,
            family: Family::GaussianBlobs,
            num_classes: 3,
            feature_dim: 2,
            sizes: SplitSizes {
                teacher_train: 60,
                teacher_val: 60,
                student_train: 60,
                student_val: 60,
                unlabeled: 120,
                test: 300,
            },
            label_noise: 0.1,
            separation: 3.0,
            unlabeled_shift: 0.0,
            csv: CsvPaths::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradcheckConfig {
    /// Instances checked, at seeds `seed..seed + instances`.
    pub instances: usize,
    pub fd_step: f64,
    /// Architecture scalars are drawn from `U(-arch_scale, arch_scale)`.
    pub arch_scale: f64,
    pub min_cosine: f64,
    pub exact_min_cosine: f64,
    pub exact_max_rel_l2: f64,
    pub cross_max_rel_l2: f64,
    pub step_max_rel_l2: f64,
    pub param_ceiling: usize,
    /// Test hook: negate the engine gradient before comparing.
    pub corrupt_sign: bool,
    /// Test hook: zero every weight so all architecture gradients vanish.
    pub degenerate: bool,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            instances: 3,
            fd_step: lbt_core::oracle::DEFAULT_FD_STEP,
            arch_scale: 1.0,
            min_cosine: 0.99,
            exact_min_cosine: 0.9999,
            exact_max_rel_l2: 1e-4,
            cross_max_rel_l2: 1e-4,
            step_max_rel_l2: 1e-3,
            param_ceiling: lbt_core::oracle::DEFAULT_PARAM_CEILING,
            corrupt_sign: false,
            degenerate: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Cells in the retrained network; `null` keeps the genotype's count.
    pub cells: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds the data, the initial weights and the batch order.
    pub seed: u64,
    /// Seeds per setting in `ablate` and `sweep`, starting at `seed`.
    pub num_seeds: usize,
    pub search: SearchConfig,
    pub model: ModelConfig,
    pub data: DataConfig,
    pub retrain: RetrainConfig,
    pub gradcheck: GradcheckConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            num_seeds: 10,
            search: SearchConfig::default(),
            model: ModelConfig::default(),
            data: DataConfig::default(),
            retrain: RetrainConfig::default(),
            gradcheck: GradcheckConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

// The run seed drives these; exposing them too would let them drift.
const HIDDEN_KEYS: &[&str] = &["search.seed", "retrain.seed"];

fn flatten_into(prefix: &str, value: Value, out: &mut FlatConfig) {
    match value {
        Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() { k } else { format!("{prefix}.{k}") };
                flatten_into(&key, v, out);
            }
        }
        leaf => {
            out.insert(prefix.to_string(), leaf);
        }
    }
}

fn unflatten(flat: &FlatConfig) -> Value {
    let mut root = Map::new();
    for (key, value) in flat {
        let mut node = &mut root;
        let mut parts = key.split('.').peekable();
        while let Some(part) = parts.next() {
            if parts.peek().is_none() {
                node.insert(part.to_string(), value.clone());
            } else {
                node = node
                    .entry(part.to_string())
                    .or_insert_with(|| Value::Object(Map::new()))
                    .as_object_mut()
                    .expect("dotted keys never collide with leaves");
            }
        }
    }
    Value::Object(root)
}

impl RunConfig {
    pub fn to_flat(&self) -> FlatConfig {
        let mut out = FlatConfig::new();
        flatten_into("", serde_json::to_value(self).expect("config serializes"), &mut out);
        for key in HIDDEN_KEYS {
            out.remove(*key);
        }
        out
    }

    pub fn from_flat(flat: &FlatConfig) -> Result<Self, CliError> {
        let mut flat = flat.clone();
        let seed = flat.get("seed").cloned().unwrap_or(Value::from(0));
        for key in HIDDEN_KEYS {
            flat.insert((*key).into(), seed.clone());
        }
        let cfg: RunConfig = serde_json::from_value(unflatten(&flat)).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.search.validate()?;
        if self.data.source == DataSource::Csv {
            let c = &self.data.csv;
            let missing: Vec<&str> = [
                ("data.csv.teacher_train", &c.teacher_train),
                ("data.csv.teacher_val", &c.teacher_val),
                ("data.csv.student_train", &c.student_train),
                ("data.csv.student_val", &c.student_val),
                ("data.csv.test", &c.test),
            ]
            .into_iter()
            .filter(|(_, p)| p.is_none())
            .map(|(k, _)| k)
            .collect();
            if !missing.is_empty() {
                return Err(CliError::Config(format!("missing config keys: {}", missing.join(", "))));
            }
        }
        Ok(())
    }

    /// Same config with the run seed replaced.
    pub fn with_seed(&self, seed: u64) -> Self {
        RunConfig {
            seed,
            search: SearchConfig { seed, ..self.search.clone() },
            retrain: RetrainConfig { seed, ..self.retrain.clone() },
            ..self.clone()
        }
    }

    /// The generator spec for this run, if the data is synthetic.
    pub fn task_spec(&self) -> Option<TaskSpec> {
        (self.data.source == DataSource::Generated).then_some(TaskSpec {
            family: self.data.family,
            num_classes: self.data.num_classes,
            feature_dim: self.data.feature_dim,
            sizes: self.data.sizes,
            label_noise: self.data.label_noise,
            separation: self.data.separation,
            unlabeled_shift: self.data.unlabeled_shift,
            seed: self.seed,
        })
    }

    pub fn bundle(&self) -> Result<DataBundle, CliError> {
        if let Some(spec) = self.task_spec() {
            return Ok(generate(&spec)?);
        }
        let c = &self.data.csv;
        let k = self.data.num_classes;
        let labeled = |p: &Option<PathBuf>| -> Result<LabeledSet, CliError> {
            let path = p.as_ref().expect("checked by validate");
            Ok(load_csv(path, k)?.into_labeled()?)
        };
        let unlabeled = match &c.unlabeled {
            Some(path) => load_csv(path, k)?.into_unlabeled(),
            None => UnlabeledSet::empty(self.data.feature_dim),
        };
        Ok(DataBundle::from_sets(
            labeled(&c.teacher_train)?,
            labeled(&c.teacher_val)?,
            labeled(&c.student_train)?,
            labeled(&c.student_val)?,
            unlabeled,
            labeled(&c.test)?,
            k,
        )?)
    }

    pub fn models(&self, bundle: &DataBundle) -> Result<Models, CliError> {
        Ok(self.model.build(bundle.feature_dim, bundle.num_classes)?)
    }
}

/// Resolves `key` against the known keys: exact match, or a unique dotted
/// suffix (`lambda` for `search.lambda`).
pub fn resolve_key<'a>(known: &'a FlatConfig, key: &str) -> Result<&'a str, CliError> {
    if let Some((k, _)) = known.get_key_value(key) {
        return Ok(k);
    }
    let suffix = format!(".{key}");
    let hits: Vec<&str> = known.keys().filter(|k| k.ends_with(&suffix)).map(String::as_str).collect();
    match hits.as_slice() {
        [one] => Ok(one),
        [] => Err(CliError::Config(format!("unknown config key `{key}`"))),
        many => Err(CliError::Config(format!(
            "ambiguous config key `{key}` (could be {})",
            many.join(", ")
        ))),
    }
}

/// Merges `overrides` over `base`. Every key must already exist in `base`.
pub fn merge(base: &mut FlatConfig, overrides: impl IntoIterator<Item = (String, Value)>) -> Result<(), CliError> {
    for (key, value) in overrides {
        let resolved = resolve_key(base, &key)?.to_string();
        base.insert(resolved, value);
    }
    Ok(())
}

/// Parses a `KEY=VALUE` override. VALUE is read as JSON when it parses,
/// otherwise as a bare string.
pub fn parse_set(arg: &str) -> Result<(String, Value), CliError> {
    let (key, raw) = arg
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("expected KEY=VALUE, got `{arg}`")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(CliError::Config(format!("empty key in `{arg}`")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((key.to_string(), value))
}

/// Reads a config file: either a flat object of dotted keys or a run
/// manifest (whose `config` field is used).
pub fn read_config_file(path: &Path) -> Result<FlatConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let value: Value =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let Value::Object(mut map) = value else {
        return Err(CliError::Config(format!("{}: expected a JSON object", path.display())));
    };
    if map.contains_key("tool_version") {
        match map.remove("config") {
            Some(Value::Object(inner)) => map = inner,
            _ => return Err(CliError::Config(format!("{}: manifest has no config object", path.display()))),
        }
    }
    let mut flat = FlatConfig::new();
    flatten_into("", Value::Object(map), &mut flat);
    Ok(flat)
}

/// Defaults, then the file, then `--set` overrides, then the seed override.
pub fn resolve(
    file: Option<&Path>,
    sets: &[String],
    seed: Option<u64>,
) -> Result<(RunConfig, FlatConfig), CliError> {
    let mut flat = RunConfig::default().to_flat();
    if let Some(path) = file {
        merge(&mut flat, read_config_file(path)?)?;
    }
    let overrides = sets.iter().map(|s| parse_set(s)).collect::<Result<Vec<_>, _>>()?;
    merge(&mut flat, overrides)?;
    if let Some(seed) = seed {
        flat.insert("seed".into(), Value::from(seed));
    }
    let cfg = RunConfig::from_flat(&flat)?;
    Ok((cfg.clone(), cfg.to_flat()))
}
