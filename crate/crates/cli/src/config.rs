//! Layered configuration: defaults, then the config file, then `HINGEPLACE_*`
//! environment variables, then `--set` flags.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use hingeplace::equivalence::{L1L1SweepConfig, Theorem1Config};
use hingeplace::focality::FocalityConfig;
use hingeplace::sphere::{DEFAULT_CONDUCTIVITIES, DEFAULT_RADII, DEFAULT_SERIES_ORDER};
use hingeplace::testbed::{equivalence_targets, TestbedConfig};
use hingeplace::SafetyBound;

use crate::CliError;

pub const ENV_PREFIX: &str = "HINGEPLACE_";

/// Recursively merges `over` into `base`; non-object values replace.
pub fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// JSON literal if it parses, string otherwise.
fn scalar(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

fn set_path(root: &mut Value, path: &[&str], v: Value) -> Result<(), CliError> {
    let mut cur = root;
    for (i, key) in path.iter().enumerate() {
        if key.is_empty() {
            return Err(CliError::config(format!("empty key segment in {:?}", path.join("."))));
        }
        let obj = match cur {
            Value::Object(o) => o,
            other => {
                *other = Value::Object(Map::new());
                other.as_object_mut().expect("just replaced")
            }
        };
        if i + 1 == path.len() {
            obj.insert(key.to_string(), v);
            return Ok(());
        }
        cur = obj.entry(key.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    Ok(())
}

fn has_top_level(root: &Value, key: &str) -> bool {
    root.as_object().is_some_and(|o| o.contains_key(key))
}

/// Sources for one command invocation.
#[derive(Debug, Default, Clone)]
pub struct Sources {
    pub file: Option<PathBuf>,
    pub env: Vec<(String, String)>,
    pub sets: Vec<String>,
}

impl Sources {
    pub fn from_process(file: Option<PathBuf>, sets: Vec<String>) -> Self {
        Self {
            file,
            env: std::env::vars().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect(),
            sets,
        }
    }
}

/// Resolves a typed config from its defaults and the layered sources.
///
/// Environment keys map `HINGEPLACE_A__B` to `a.b`; keys whose top level is
/// not a field of the command's config are ignored, so variables meant for
/// other commands do not break this one.
pub fn resolve<T: Serialize + DeserializeOwned + Default>(src: &Sources) -> Result<T, CliError> {
    let mut v = serde_json::to_value(T::default()).map_err(|e| CliError::internal(e.to_string()))?;
    if let Some(path) = &src.file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::input(format!("cannot read config {}: {e}", path.display())))?;
        let file: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::config(format!("config {} is not valid JSON: {e}", path.display())))?;
        if !file.is_object() {
            return Err(CliError::config("config file must hold a JSON object"));
        }
        merge(&mut v, file);
    }
    for (k, raw) in &src.env {
        let Some(rest) = k.strip_prefix(ENV_PREFIX) else { continue };
        let key = rest.to_ascii_lowercase();
        let path: Vec<&str> = key.split("__").collect();
        if has_top_level(&v, path[0]) {
            set_path(&mut v, &path, scalar(raw))?;
        }
    }
    for s in &src.sets {
        let (k, raw) = s
            .split_once('=')
            .ok_or_else(|| CliError::config(format!("--set expects KEY=VALUE, got {s:?}")))?;
        let path: Vec<&str> = k.trim().split('.').collect();
        set_path(&mut v, &path, scalar(raw.trim()))?;
    }
    serde_json::from_value(v).map_err(|e| CliError::config(format!("invalid configuration: {e}")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeadConfig {
    pub radii: [f64; 4],
    pub conductivities: [f64; 4],
    pub series_order: usize,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            radii: DEFAULT_RADII,
            conductivities: DEFAULT_CONDUCTIVITIES,
            series_order: DEFAULT_SERIES_ORDER,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForwardConfig {
    pub head: HeadConfig,
    pub layout: TestbedConfig,
    /// Manifest path; the blob is written beside it with a `.bin` extension.
    pub out: PathBuf,
    /// Region document, defaults to `<out stem>.region.json`.
    pub region_out: Option<PathBuf>,
}

impl Default for ForwardConfig {
    fn default() -> Self {
        Self {
            head: HeadConfig::default(),
            layout: TestbedConfig::equivalence(equivalence_targets()[0], 0.002),
            out: PathBuf::from("forward.json"),
            region_out: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    LcmvE,
    Cdm,
    DirectionalMax,
    Hingeplace,
    L1l1,
    MagmaxBiconvex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolveConfig {
    pub forward: PathBuf,
    pub region: PathBuf,
    pub method: Method,
    /// Desired target intensity, V/m.
    pub e_des: f64,
    pub i_safe: f64,
    pub i_tot_mul: f64,
    pub l1_factor: f64,
    pub bound: SafetyBound,
    /// CDM / bi-convex energy budget; defaults to the LCMV-E energy at `e_des`.
    pub alpha: Option<f64>,
    pub p: u32,
    /// HingePlace tolerances `[x, y, z]`, V/m, applied symmetrically.
    pub tol: [f64; 3],
    pub eps: f64,
    pub alpha_reg: f64,
    pub ridge: f64,
    pub max_iters: usize,
    pub rel_tol: f64,
    pub out: PathBuf,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            forward: PathBuf::from("forward.json"),
            region: PathBuf::from("forward.region.json"),
            method: Method::LcmvE,
            e_des: 1.0,
            i_safe: 4.0,
            i_tot_mul: 2.0,
            l1_factor: 2.0,
            bound: SafetyBound::Symmetric,
            alpha: None,
            p: 1,
            tol: [0.5, 0.5, 0.5],
            eps: 0.1,
            alpha_reg: 1e-3,
            ridge: 0.0,
            max_iters: 50,
            rel_tol: 1e-6,
            out: PathBuf::from("montage.json"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerifyKind {
    Theorem1,
    L1l1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub kind: VerifyKind,
    pub theorem1: Theorem1Config,
    pub l1l1: L1L1SweepConfig,
    /// Directory receiving `<kind>_pairs.csv` and `<kind>_cells.csv`.
    pub out_dir: PathBuf,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            kind: VerifyKind::Theorem1,
            theorem1: Theorem1Config::default(),
            l1l1: L1L1SweepConfig::default(),
            out_dir: PathBuf::from("."),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    pub forward: PathBuf,
    pub montage: PathBuf,
    /// Reference intensity of the threshold volume, V/m.
    pub e_des: f64,
    pub fraction: f64,
    pub activation_direction: [f64; 3],
    pub activation_threshold: f64,
    pub out: PathBuf,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            forward: PathBuf::from("forward.json"),
            montage: PathBuf::from("montage.json"),
            e_des: 1.0,
            fraction: 0.8,
            activation_direction: hingeplace::metrics::default_activation_dir(),
            activation_threshold: hingeplace::metrics::DEFAULT_ACTIVATION_THRESHOLD,
            out: PathBuf::from("metrics.csv"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub study: FocalityConfig,
    pub out: PathBuf,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            study: FocalityConfig::threshold_volume(0.003),
            out: PathBuf::from("sweep.csv"),
        }
    }
}

/// Default region path for a forward manifest.
pub fn region_path_for(manifest: &Path) -> PathBuf {
    let stem = manifest.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    manifest.with_file_name(format!("{stem}.region.json"))
}
