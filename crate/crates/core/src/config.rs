//! Scenario configuration: one JSON document holding every knob, with
//! dotted-path overrides and a content hash for provenance.

use rand::RngCore;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::baselines::AoConfig;
use crate::channel::{ArrayConfig, PathLossConfig, Point3, ScenarioGeometry, UeArea};
use crate::ddpg::DdpgConfig;
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::ien::{IenDatasetConfig, IenTrainConfig};
use crate::rng::RngStream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    pub loc_bs: Point3,
    pub loc_ris: Point3,
    pub ue_area: UeArea,
    pub scatterers_bs_ris: Vec<Point3>,
    pub scatterers_ris_ue: Vec<Point3>,
    /// Candidate RIS-UE scatterers used when sweeping the path count; the
    /// first `L_D − 1` are taken.
    pub scatterer_pool_ris_ue: Vec<Point3>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerConfig {
    pub power_dbm: f64,
    pub noise_dbm: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IenConfig {
    pub u_locations: usize,
    pub f_thetas_per_location: usize,
    pub label_noise_std: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DrlOptions {
    /// Feed min-max normalized coordinates to the agent instead of meters.
    pub normalize_coords: bool,
    /// Draw a new UE position (and channel) at every episode start instead
    /// of keeping one position for the whole run.
    pub randomize_ue_per_episode: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub seeds: Vec<u64>,
    pub ris_elements: Vec<usize>,
    pub paths: Vec<usize>,
    pub eta: Vec<f64>,
    pub coherence_tc: Vec<f64>,
    /// Schemes evaluated on the RIS-element axis: any of `ao`, `random`,
    /// `csi`, `true`, `ien`.
    pub schemes: Vec<String>,
    /// Trials per instance for the `random` scheme.
    pub random_trials: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub geometry: GeometryConfig,
    pub arrays: ArrayConfig,
    pub path_loss: PathLossConfig,
    pub env: PowerConfig,
    pub ien: IenConfig,
    pub ddpg: DdpgConfig,
    pub drl: DrlOptions,
    pub ao: AoConfig,
    pub eta: f64,
    pub coherence_time_tc: f64,
    pub interaction_slots_t: f64,
    pub sweep: SweepConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let p = Point3::new;
        ScenarioConfig {
            seed: 1,
            geometry: GeometryConfig {
                loc_bs: p(20.0, 0.0, 10.0),
                loc_ris: p(0.0, 30.0, 20.0),
                ue_area: UeArea {
                    center: p(10.0, 50.0, 0.0),
                    radius: 5.0,
                },
                scatterers_bs_ris: vec![],
                scatterers_ris_ue: vec![p(5.0, 40.0, 10.0), p(5.0, 45.0, 5.0)],
                scatterer_pool_ris_ue: vec![
                    p(5.0, 40.0, 10.0),
                    p(5.0, 45.0, 5.0),
                    p(-3.0, 42.0, 12.0),
                    p(14.0, 40.0, 8.0),
                    p(2.0, 48.0, 3.0),
                ],
            },
            arrays: ArrayConfig {
                m_bs: 4,
                k_ue: 4,
                n_x: 7,
                n_y: 7,
            },
            path_loss: PathLossConfig {
                c0_db: -20.0,
                alpha_bs_ris: 2.0,
                alpha_ris_ue: 2.8,
            },
            env: PowerConfig {
                power_dbm: 20.0,
                noise_dbm: -80.0,
            },
            ien: IenConfig {
                u_locations: 1000,
                f_thetas_per_location: 10,
                label_noise_std: 0.0,
                epochs: 30,
                batch_size: 16,
                learning_rate: 0.01,
            },
            ddpg: DdpgConfig::default(),
            drl: DrlOptions {
                normalize_coords: false,
                randomize_ue_per_episode: false,
            },
            ao: AoConfig::default(),
            eta: 0.0,
            coherence_time_tc: 2000.0,
            interaction_slots_t: 1000.0,
            sweep: SweepConfig {
                seeds: vec![1, 2, 3],
                ris_elements: vec![16, 36, 64],
                paths: vec![1, 2, 3, 4],
                eta: vec![0.0, 0.1],
                coherence_tc: vec![1000.0, 2000.0, 5000.0, 10000.0, 20000.0],
                schemes: vec![
                    "ao".into(),
                    "random".into(),
                    "csi".into(),
                    "true".into(),
                    "ien".into(),
                ],
                random_trials: 1000,
            },
        }
    }
}

fn cfg_err(field: &str, msg: impl Into<String>) -> Error {
    Error::Config {
        field: field.into(),
        msg: msg.into(),
    }
}

fn wrap(field: &str, r: Result<()>) -> Result<()> {
    r.map_err(|e| match e {
        Error::Config { .. } => e,
        other => cfg_err(field, other.to_string()),
    })
}

pub const SCHEMES: [&str; 5] = ["ao", "random", "csi", "true", "ien"];

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig =
            serde_json::from_str(text).map_err(|e| cfg_err("<document>", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses `text`, applies `key=value` overrides, then validates.
    pub fn from_json_with_overrides(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut doc: Value =
            serde_json::from_str(text).map_err(|e| cfg_err("<document>", e.to_string()))?;
        for (path, raw) in overrides {
            set_path(&mut doc, path, raw)?;
        }
        let cfg: ScenarioConfig =
            serde_json::from_value(doc).map_err(|e| cfg_err("<document>", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_overrides(&self, overrides: &[(String, String)]) -> Result<Self> {
        Self::from_json_with_overrides(&self.to_json(), overrides)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the compact JSON serialization.
    pub fn hash(&self) -> String {
        let compact = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(compact.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        wrap("geometry", self.geometry().validate())?;
        if !(self.geometry.ue_area.radius >= 0.0) {
            return Err(cfg_err("geometry.ue_area.radius", "must be >= 0"));
        }
        wrap("arrays", self.arrays.validate())?;
        wrap("path_loss", self.path_loss.validate())?;
        if !self.env.power_dbm.is_finite() || !self.env.noise_dbm.is_finite() {
            return Err(cfg_err("env", "power levels must be finite"));
        }
        let i = &self.ien;
        if i.u_locations == 0 {
            return Err(cfg_err("ien.u_locations", "must be >= 1"));
        }
        if i.f_thetas_per_location == 0 {
            return Err(cfg_err("ien.f_thetas_per_location", "must be >= 1"));
        }
        if !(i.label_noise_std >= 0.0) {
            return Err(cfg_err("ien.label_noise_std", "must be >= 0"));
        }
        if i.batch_size == 0 {
            return Err(cfg_err("ien.batch_size", "must be >= 1"));
        }
        if !(i.learning_rate > 0.0) || !i.learning_rate.is_finite() {
            return Err(cfg_err("ien.learning_rate", "must be > 0"));
        }
        self.ddpg.validate()?;
        self.ao.validate()?;
        if !(self.eta >= 0.0) || !self.eta.is_finite() {
            return Err(cfg_err("eta", "must be finite and >= 0"));
        }
        if !(self.coherence_time_tc > 0.0) {
            return Err(cfg_err("coherence_time_tc", "must be > 0"));
        }
        if !(self.interaction_slots_t >= 0.0) {
            return Err(cfg_err("interaction_slots_t", "must be >= 0"));
        }
        let s = &self.sweep;
        if s.seeds.is_empty() {
            return Err(cfg_err("sweep.seeds", "needs at least one seed"));
        }
        if s.ris_elements.contains(&0) {
            return Err(cfg_err("sweep.ris_elements", "element counts must be >= 1"));
        }
        let max_paths = 1 + self.geometry.scatterer_pool_ris_ue.len();
        if let Some(&l) = s.paths.iter().find(|&&l| l == 0 || l > max_paths) {
            return Err(cfg_err(
                "sweep.paths",
                format!("path count {l} outside 1..={max_paths} (limited by geometry.scatterer_pool_ris_ue)"),
            ));
        }
        if s.eta.iter().any(|e| !(*e >= 0.0)) {
            return Err(cfg_err("sweep.eta", "levels must be >= 0"));
        }
        if s.coherence_tc.iter().any(|t| !(*t > 0.0)) {
            return Err(cfg_err("sweep.coherence_tc", "values must be > 0"));
        }
        if let Some(bad) = s.schemes.iter().find(|x| !SCHEMES.contains(&x.as_str())) {
            return Err(cfg_err("sweep.schemes", format!("unknown scheme `{bad}`")));
        }
        if s.random_trials == 0 {
            return Err(cfg_err("sweep.random_trials", "must be >= 1"));
        }
        Ok(())
    }

    pub fn env_config(&self) -> Result<EnvConfig> {
        EnvConfig::from_dbm(self.env.power_dbm, self.env.noise_dbm)
    }

    pub fn ue_area(&self) -> UeArea {
        self.geometry.ue_area
    }

    /// Geometry with the UE at the disc center.
    pub fn geometry(&self) -> ScenarioGeometry {
        ScenarioGeometry {
            loc_bs: self.geometry.loc_bs,
            loc_ris: self.geometry.loc_ris,
            loc_ue: self.geometry.ue_area.center,
            scatterers_bs_ris: self.geometry.scatterers_bs_ris.clone(),
            scatterers_ris_ue: self.geometry.scatterers_ris_ue.clone(),
        }
    }

    /// Geometry with `l_d` RIS-UE paths drawn from the scatterer pool.
    pub fn geometry_with_paths(&self, l_d: usize) -> Result<ScenarioGeometry> {
        let pool = &self.geometry.scatterer_pool_ris_ue;
        if l_d == 0 || l_d > pool.len() + 1 {
            return Err(cfg_err(
                "sweep.paths",
                format!("path count {l_d} outside 1..={}", pool.len() + 1),
            ));
        }
        Ok(ScenarioGeometry {
            scatterers_ris_ue: pool[..l_d - 1].to_vec(),
            ..self.geometry()
        })
    }

    pub fn with_ris_elements(&self, n: usize) -> Result<ScenarioConfig> {
        let mut c = self.clone();
        c.arrays = ArrayConfig::with_ris_elements(self.arrays.m_bs, self.arrays.k_ue, n)?;
        Ok(c)
    }

    pub fn root_stream(&self) -> RngStream {
        RngStream::new(self.seed)
    }

    /// Stream fixing the scenario's per-path phases.
    pub fn scenario_stream(&self) -> RngStream {
        self.root_stream().split("scenario")
    }

    pub fn dataset_config(&self) -> IenDatasetConfig {
        IenDatasetConfig {
            u_locations: self.ien.u_locations,
            f_thetas_per_location: self.ien.f_thetas_per_location,
            label_noise_std: self.ien.label_noise_std,
            rng_seed: self.root_stream().split("ien-dataset").next_u64(),
        }
    }

    pub fn ien_train_config(&self) -> IenTrainConfig {
        IenTrainConfig {
            epochs: self.ien.epochs,
            batch_size: self.ien.batch_size,
            learning_rate: self.ien.learning_rate,
            shuffle_seed: self.root_stream().split("ien-train").next_u64(),
        }
    }
}

/// Sets `path` (dot-separated) in a JSON document. The value is parsed as
/// JSON when possible and kept as a string otherwise. Only existing keys can
/// be set.
pub fn set_path(doc: &mut Value, path: &str, raw: &str) -> Result<()> {
    let mut cur = doc;
    let parts: Vec<&str> = path.split('.').collect();
    for (depth, key) in parts.iter().enumerate() {
        let here = parts[..=depth].join(".");
        cur = match cur {
            Value::Object(map) => map
                .get_mut(*key)
                .ok_or_else(|| cfg_err(&here, "no such field"))?,
            Value::Array(items) => {
                let idx: usize = key
                    .parse()
                    .map_err(|_| cfg_err(&here, "expected an array index"))?;
                items
                    .get_mut(idx)
                    .ok_or_else(|| cfg_err(&here, "index out of range"))?
            }
            _ => return Err(cfg_err(&here, "not an object or array")),
        };
    }
    *cur = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok(())
}

/// Parses `key=value`.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| cfg_err(s, "override must look like `path.to.field=value`"))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}
