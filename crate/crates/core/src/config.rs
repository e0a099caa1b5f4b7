//! Run configuration: a scale preset, overlaid by an optional TOML file,
//! overlaid by command-line overrides.
//!
//! The file uses the [`ScenarioConfig`] field names at the top level plus
//! `scale`, `out_dir` and a `[sweep]` table. Channel profiles go under
//! `[profiles.<name>]`; a table for a built-in profile only needs the keys it
//! changes. Unknown keys are rejected.

use std::env;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attack::ScenarioConfig;
use crate::error::{CoreError, Result};

pub const OUT_ENV: &str = "RFFSB_OUT";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    #[default]
    Desk,
    Paper,
}

impl std::str::FromStr for Scale {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Scale::Desk),
            "paper" => Ok(Scale::Paper),
            other => Err(CoreError::config(format!("unknown scale `{other}` (expected desk or paper)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub ebn0_db: Vec<f64>,
    /// Extra low-SNR point where the classifier should fall back to its prior.
    pub ebn0_floor_db: Option<f64>,
    pub ebn0_profiles: Vec<String>,
    pub k_factors: Vec<f64>,
    pub k_profiles: Vec<String>,
    /// Training channels of the cross-channel matrix.
    pub train_profiles: Vec<String>,
    /// Receiver channels of the cross-channel matrix.
    pub test_profiles: Vec<String>,
    /// Retrain classifier and attacks at every Eb/N0 and K point instead of
    /// varying only the receiver path.
    pub retrain: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        let named = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        SweepConfig {
            ebn0_db: vec![-10.0, -5.0, 0.0, 5.0, 10.0, 20.0, 30.0],
            ebn0_floor_db: Some(-20.0),
            ebn0_profiles: named(&["indoor_a"]),
            k_factors: (0..=10).map(f64::from).collect(),
            k_profiles: named(&["indoor_a", "indoor_b", "vehicular_a"]),
            train_profiles: named(&["awgn", "indoor_a", "indoor_b", "vehicular_a"]),
            test_profiles: named(&["awgn", "indoor_a", "indoor_b", "vehicular_a"]),
            retrain: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scale: Scale,
    pub scenario: ScenarioConfig,
    pub sweep: SweepConfig,
    pub out_dir: PathBuf,
}

/// Values given on the command line; they win over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub scale: Option<Scale>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

/// Scenario defaults for a scale.
pub fn preset(scale: Scale) -> ScenarioConfig {
    let mut s = ScenarioConfig::default();
    if scale == Scale::Desk {
        s.train_frames = 500;
        s.test_frames = 50;
        s.spoof_frames = 200;
        s.attack.epochs = 20;
        s.attack.patience = 5;
    }
    s
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn to_table<T: Serialize>(v: &T) -> toml::Table {
    match toml::Value::try_from(v).expect("config serializes to TOML") {
        toml::Value::Table(t) => t,
        _ => unreachable!("structs serialize to tables"),
    }
}

impl RunConfig {
    /// Preset, then `path`, then `ov`.
    pub fn load(path: Option<&Path>, ov: &Overrides) -> Result<RunConfig> {
        let (mut file, base_dir) = match path {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| CoreError::config(format!("cannot read config {}: {e}", p.display())))?;
                let table: toml::Table =
                    toml::from_str(&text).map_err(|e| CoreError::config(format!("{}: {e}", p.display())))?;
                (table, p.parent().map(Path::to_path_buf).unwrap_or_default())
            }
            None => (toml::Table::new(), PathBuf::new()),
        };
        let file_scale = match file.remove("scale") {
            Some(toml::Value::String(s)) => Some(s.parse::<Scale>()?),
            Some(other) => return Err(CoreError::config(format!("`scale` must be a string, got {other}"))),
            None => None,
        };
        let file_out = match file.remove("out_dir") {
            Some(toml::Value::String(s)) => Some(base_dir.join(s)),
            Some(other) => return Err(CoreError::config(format!("`out_dir` must be a string, got {other}"))),
            None => None,
        };
        let scale = ov.scale.or(file_scale).unwrap_or_default();

        let mut doc = to_table(&preset(scale));
        doc.insert("sweep".into(), toml::Value::Table(to_table(&SweepConfig::default())));
        merge(&mut doc, file);
        if let Some(toml::Value::Table(profiles)) = doc.get_mut("profiles") {
            for (name, p) in profiles.iter_mut() {
                if let toml::Value::Table(t) = p {
                    t.entry("name").or_insert_with(|| toml::Value::String(name.clone()));
                }
            }
        }
        let sweep: SweepConfig = match doc.remove("sweep") {
            Some(v) => v.try_into().map_err(|e| CoreError::config(format!("[sweep]: {e}")))?,
            None => SweepConfig::default(),
        };
        let mut scenario: ScenarioConfig =
            toml::Value::Table(doc).try_into().map_err(|e| CoreError::config(e.to_string()))?;
        if let Some(seed) = ov.seed {
            scenario.master_seed = seed;
        }
        for (name, p) in &scenario.profiles {
            if &p.name != name {
                return Err(CoreError::config(format!("profile `{name}` has name `{}`", p.name)));
            }
        }
        scenario.validate()?;
        for name in sweep
            .ebn0_profiles
            .iter()
            .chain(&sweep.k_profiles)
            .chain(&sweep.train_profiles)
            .chain(&sweep.test_profiles)
        {
            scenario.profile(name)?;
        }
        let out_dir = ov
            .out
            .clone()
            .or(file_out)
            .or_else(|| env::var_os(OUT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("rffsb-out"));
        Ok(RunConfig {
            scale,
            scenario,
            sweep,
            out_dir,
        })
    }

    /// Every setting with defaults materialized.
    pub fn resolved(&self) -> serde_json::Value {
        serde_json::json!({
            "tool_version": env!("CARGO_PKG_VERSION"),
            "master_seed": self.scenario.master_seed,
            "scale": self.scale,
            "out_dir": self.out_dir,
            "scenario": self.scenario,
            "sweep": self.sweep,
        })
    }

    /// Writes `resolved_config.json` into `dir`.
    pub fn write_resolved(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
        let p = dir.join("resolved_config.json");
        let mut b = serde_json::to_vec_pretty(&self.resolved()).expect("serializes");
        b.push(b'\n');
        fs::write(&p, b).map_err(|e| CoreError::io(&p, e))
    }
}
