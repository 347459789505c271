//! Run configuration files: schema, dotted overrides and data loading.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::{
    Domain, GetarsData, ImbalanceScheme, LabeledDataset, SyntheticSpec, generate_getars, load_feature_csv,
    load_label_csv, scheme_proportions, subsample_imbalance,
};
use crate::error::{Error, Result};
use crate::pipeline::TrainConfig;

/// Environment variable overriding the run seed.
pub const SEED_ENV: &str = "OSTAR_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvPaths {
    pub source: PathBuf,
    pub target: PathBuf,
    /// Oracle target labels, used only for reporting.
    #[serde(default)]
    pub target_labels: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Generated in memory unless `csv` is set.
    pub synthetic: SyntheticSpec,
    pub csv: Option<CsvPaths>,
    /// Label imbalance imposed on the target.
    pub imbalance: Option<ImbalanceScheme>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            synthetic: SyntheticSpec::blobs_k3(),
            csv: None,
            imbalance: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Per-domain cap on samples entering exact transport problems.
    pub max_points: usize,
    /// Per-class cap for the assumption and matching diagnostics.
    pub per_class: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            max_points: 500,
            per_class: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

/// Dotted path to a JSON pointer: `train.lambda_ot` → `/train/lambda_ot`.
pub(crate) fn pointer_of(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        out.push('/');
        match seg {
            Segment::Seq { index } => out.push_str(&index.to_string()),
            Segment::Map { key } => out.push_str(&key.replace('~', "~0").replace('/', "~1")),
            Segment::Enum { variant } => out.push_str(variant),
            Segment::Unknown => out.push('?'),
        }
    }
    if out.is_empty() { "/".into() } else { out }
}

/// Applies `key.path=value`. The value is parsed as JSON when possible and
/// taken as a string otherwise.
pub fn apply_set(doc: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Usage(format!("--set expects key=value, got `{assignment}`")))?;
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::Usage(format!("bad --set key `{key}`")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if node.is_null() {
            *node = Value::Object(Default::default());
        }
        let here = format!("/{}", parts[..i].join("/"));
        let obj = match node {
            Value::Object(m) => m,
            Value::Array(a) => {
                let idx: usize = part.parse().map_err(|_| Error::Config {
                    pointer: here.clone(),
                    message: format!("`{part}` is not an array index"),
                })?;
                let len = a.len();
                node = a.get_mut(idx).ok_or(Error::Config {
                    pointer: here,
                    message: format!("index {idx} out of range for length {len}"),
                })?;
                if i + 1 == parts.len() {
                    *node = value;
                    return Ok(());
                }
                continue;
            }
            _ => {
                return Err(Error::Config {
                    pointer: here,
                    message: format!("cannot descend into a scalar with `{part}`"),
                });
            }
        };
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert(Value::Null);
    }
    unreachable!("key has at least one part")
}

fn parse(doc: Value) -> Result<RunConfig> {
    serde_path_to_error::deserialize(doc).map_err(|e| Error::Config {
        pointer: pointer_of(e.path()),
        message: e.inner().to_string(),
    })
}

/// Validates a JSON document against the schema, naming the offending
/// location on failure.
pub fn from_value(doc: Value) -> Result<RunConfig> {
    let cfg = parse(doc)?;
    cfg.train.validate().map_err(|e| Error::Config {
        pointer: "/train".into(),
        message: e.to_string(),
    })?;
    Ok(cfg)
}

/// File (or defaults), then the seed variable, then `--set` overrides.
pub fn resolve(path: Option<&Path>, sets: &[String], env_seed: Option<&str>) -> Result<RunConfig> {
    let mut doc = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Config {
                pointer: "/".into(),
                message: format!("cannot read {}: {e}", p.display()),
            })?;
            serde_json::from_str(&text).map_err(|e| Error::Config {
                pointer: "/".into(),
                message: format!("{}: {e}", p.display()),
            })?
        }
        None => Value::Object(Default::default()),
    };
    // Materialize defaults so overrides land inside full sections.
    let mut doc = serde_json::to_value(parse(std::mem::take(&mut doc))?)?;
    if let Some(s) = env_seed {
        let seed: u64 = s
            .trim()
            .parse()
            .map_err(|_| Error::Usage(format!("{SEED_ENV} must be a nonnegative integer, got `{s}`")))?;
        apply_set(&mut doc, &format!("train.seed={seed}"))?;
        apply_set(&mut doc, &format!("data.synthetic.seed={seed}"))?;
    }
    for s in sets {
        apply_set(&mut doc, s)?;
    }
    from_value(doc)
}

/// Synthetic data honoring the imbalance setting: proportion schemes set
/// the generated target proportions, the retention scheme subsamples.
pub fn generate(cfg: &DataConfig) -> Result<GetarsData> {
    let mut spec = cfg.synthetic.clone();
    let k = spec.num_classes();
    let retention = match cfg.imbalance {
        Some(s) => match scheme_proportions(s, k) {
            Some(p) => {
                spec.target_proportions = p;
                None
            }
            None => Some(s),
        },
        None => None,
    };
    let mut d = generate_getars(&spec)?;
    if let Some(s) = retention {
        d.target = subsample_imbalance(&d.target, s, spec.seed)?;
    }
    Ok(d)
}

fn require(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "data file not found"),
        ))
    }
}

/// Source and target sets described by the data section.
pub fn load_data(cfg: &DataConfig, seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
    let Some(csv) = &cfg.csv else {
        let d = generate(cfg)?;
        return Ok((d.source, d.target));
    };
    require(&csv.source)?;
    require(&csv.target)?;
    let s = load_feature_csv(&csv.source, Domain::Source, None)?;
    let mut t = load_feature_csv(&csv.target, Domain::Target, Some(s.num_classes()))?;
    if let Some(p) = &csv.target_labels {
        require(p)?;
        t = t.with_oracle_labels(load_label_csv(p)?)?;
    }
    if let Some(scheme) = cfg.imbalance {
        if t.oracle_labels().is_none() {
            return Err(Error::InvalidInput(
                "target imbalance needs target_labels to subsample by class".into(),
            ));
        }
        t = subsample_imbalance(&t, scheme, seed)?;
    }
    Ok((s, t))
}
