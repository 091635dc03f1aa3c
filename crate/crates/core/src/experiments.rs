//! End-to-end runs built from a [`ScenarioConfig`]: dataset generation, IEN
//! fitting, agent training for each scheme, and the parameter sweeps.
//!
//! Every run is a pure function of the config (including its seed). Sweeps
//! execute their points in parallel and return rows ordered by sweep key.

use std::io::{Read, Write};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::baselines::{ao_optimize, random_phase_baseline, AoResult, CsiEnv};
use crate::channel::{
    synthesize_with_phases, ChannelPair, CoordNormalizer, PathPhases, Point3, ScenarioGeometry,
};
use crate::config::ScenarioConfig;
use crate::ddpg::{
    run_random_agent, train, AgentNets, DrlEnv, LocationEnv, StepRecord, TrainOutput,
};
use crate::env::{perturb_location, ChannelOracle, TrueChannelOracle};
use crate::env::{RisPhases, TransmitCovariance};
use crate::error::{Error, Result};
use crate::ien::{
    generate_ien_dataset, label_rms, train_ien, DeviceLocations, IenModel, IenOracle, IenSample,
};
use crate::linalg::RealVector;
use crate::metrics::metric_avg_achievable_rate;
use crate::rng::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OracleKind {
    /// Proposed: location state, IEN environment.
    Ien,
    /// Scheme 3: location state, real channel.
    True,
    /// Scheme 2: channel state, real channel.
    Csi,
}

impl OracleKind {
    pub fn name(self) -> &'static str {
        match self {
            OracleKind::Ien => "ien",
            OracleKind::True => "true",
            OracleKind::Csi => "csi",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ien" => Ok(OracleKind::Ien),
            "true" => Ok(OracleKind::True),
            "csi" => Ok(OracleKind::Csi),
            other => Err(Error::InvalidArgument(format!("unknown oracle `{other}`"))),
        }
    }
}

/// The channel realization a DRL or AO run optimizes for.
#[derive(Clone, Debug)]
pub struct Instance {
    pub geometry: ScenarioGeometry,
    /// Real UE position.
    pub ue: Point3,
    /// Position reported to the agent (with location error).
    pub ue_observed: Point3,
    pub pair: ChannelPair,
}

impl Instance {
    pub fn observed_locations(&self) -> DeviceLocations {
        DeviceLocations {
            bs: self.geometry.loc_bs,
            ris: self.geometry.loc_ris,
            ue: self.ue_observed,
        }
    }
}

/// Draws the evaluation UE position, its channel and the perturbed report.
pub fn instance(cfg: &ScenarioConfig, geometry: &ScenarioGeometry) -> Result<Instance> {
    let root = cfg.root_stream();
    let phases = PathPhases::draw(geometry, &mut cfg.scenario_stream());
    instance_with(
        cfg,
        geometry,
        &phases,
        &mut root.split("drl-ue"),
        &mut root.split("location-error"),
    )
}

fn instance_with(
    cfg: &ScenarioConfig,
    geometry: &ScenarioGeometry,
    phases: &PathPhases,
    ue_rng: &mut RngStream,
    error_rng: &mut RngStream,
) -> Result<Instance> {
    let area = cfg.ue_area();
    let ue = area.sample(ue_rng);
    let at_ue = geometry.with_ue(ue);
    let pair = synthesize_with_phases(&at_ue, &cfg.arrays, &cfg.path_loss, phases)?;
    let ue_observed = perturb_location(ue, cfg.eta, &area, error_rng);
    Ok(Instance {
        geometry: at_ue,
        ue,
        ue_observed,
        pair,
    })
}

pub fn gen_dataset(cfg: &ScenarioConfig, geometry: &ScenarioGeometry) -> Result<Vec<IenSample>> {
    generate_ien_dataset(
        geometry,
        &cfg.ue_area(),
        &cfg.arrays,
        &cfg.path_loss,
        &cfg.dataset_config(),
        &cfg.scenario_stream(),
    )
}

/// Builds a fresh IEN sized for `cfg` and trains it on `data`.
pub fn fit_ien(
    cfg: &ScenarioConfig,
    geometry: &ScenarioGeometry,
    data: &[IenSample],
) -> Result<(IenModel, Vec<f64>)> {
    let scale = label_rms(data);
    let norm = CoordNormalizer::for_scenario(geometry, &cfg.ue_area());
    let model = IenModel::new(
        cfg.arrays,
        norm,
        scale,
        &mut cfg.root_stream().split("ien-init"),
    )?;
    train_ien(model, data, &cfg.ien_train_config())
}

/// Dataset generation followed by training.
pub fn build_ien(
    cfg: &ScenarioConfig,
    geometry: &ScenarioGeometry,
) -> Result<(IenModel, Vec<f64>)> {
    let data = gen_dataset(cfg, geometry)?;
    fit_ien(cfg, geometry, &data)
}

fn make_env(
    cfg: &ScenarioConfig,
    inst: &Instance,
    kind: OracleKind,
    ien: Option<Arc<IenModel>>,
) -> Result<Box<dyn DrlEnv>> {
    let env_cfg = cfg.env_config()?;
    let truth: Arc<dyn ChannelOracle> = Arc::new(TrueChannelOracle {
        pair: inst.pair.clone(),
    });
    let observed = inst.observed_locations();
    let coords = cfg
        .drl
        .normalize_coords
        .then(|| CoordNormalizer::for_scenario(&inst.geometry, &cfg.ue_area()));
    let (m, n) = (cfg.arrays.m_bs, cfg.arrays.n());
    Ok(match kind {
        OracleKind::Ien => {
            let model = ien.ok_or_else(|| {
                Error::InvalidArgument("the ien oracle needs a trained IEN".into())
            })?;
            let oracle: Arc<dyn ChannelOracle> = Arc::new(IenOracle::new(model, observed)?);
            Box::new(LocationEnv::new(
                oracle,
                Some(truth),
                observed,
                m,
                n,
                env_cfg,
                coords,
            )?)
        }
        OracleKind::True => Box::new(LocationEnv::new(
            truth.clone(),
            Some(truth),
            observed,
            m,
            n,
            env_cfg,
            coords,
        )?),
        OracleKind::Csi => Box::new(CsiEnv::new(inst.pair.clone(), env_cfg)?),
    })
}

/// Moves the UE to a fresh position at every episode start and rebuilds the
/// environment around it.
struct RoamingEnv<'a> {
    cfg: &'a ScenarioConfig,
    geometry: &'a ScenarioGeometry,
    phases: PathPhases,
    kind: OracleKind,
    ien: Option<Arc<IenModel>>,
    episode: u64,
    inner: Box<dyn DrlEnv>,
}

impl DrlEnv for RoamingEnv<'_> {
    fn state_dim(&self) -> usize {
        self.inner.state_dim()
    }

    fn action_dim(&self) -> usize {
        self.inner.action_dim()
    }

    fn reset(&mut self, rng: &mut RngStream) -> Result<RealVector> {
        let mut ue_rng = self
            .cfg
            .root_stream()
            .split_indexed("roaming-ue", self.episode);
        let mut error_rng = ue_rng.split("location-error");
        self.episode += 1;
        let inst = instance_with(
            self.cfg,
            self.geometry,
            &self.phases,
            &mut ue_rng,
            &mut error_rng,
        )?;
        self.inner = make_env(self.cfg, &inst, self.kind, self.ien.clone())?;
        self.inner.reset(rng)
    }

    fn step(&mut self, action: &[f64]) -> Result<(RealVector, f64)> {
        self.inner.step(action)
    }

    fn current(&self) -> (TransmitCovariance, RisPhases) {
        self.inner.current()
    }

    fn true_rate(&self) -> Result<Option<f64>> {
        self.inner.true_rate()
    }
}

fn drl_env<'a>(
    cfg: &'a ScenarioConfig,
    geometry: &'a ScenarioGeometry,
    kind: OracleKind,
    ien: Option<Arc<IenModel>>,
) -> Result<Box<dyn DrlEnv + 'a>> {
    let inst = instance(cfg, geometry)?;
    let inner = make_env(cfg, &inst, kind, ien.clone())?;
    if !cfg.drl.randomize_ue_per_episode {
        return Ok(inner);
    }
    Ok(Box::new(RoamingEnv {
        cfg,
        geometry,
        phases: PathPhases::draw(geometry, &mut cfg.scenario_stream()),
        kind,
        ien,
        episode: 0,
        inner,
    }))
}

/// Trains one agent against the chosen environment.
pub fn run_drl(
    cfg: &ScenarioConfig,
    geometry: &ScenarioGeometry,
    kind: OracleKind,
    ien: Option<Arc<IenModel>>,
) -> Result<TrainOutput> {
    let mut env = drl_env(cfg, geometry, kind, ien)?;
    let root = cfg.root_stream();
    let nets = AgentNets::new(
        env.state_dim(),
        env.action_dim(),
        cfg.ddpg.hidden,
        &mut root.split("agent-init"),
    )?;
    train(nets, env.as_mut(), &cfg.ddpg, &root.split("agent"))
}

/// Uniform-random actions on the real channel, same episode structure.
pub fn run_random_actions(
    cfg: &ScenarioConfig,
    geometry: &ScenarioGeometry,
) -> Result<Vec<StepRecord>> {
    let mut env = drl_env(cfg, geometry, OracleKind::True, None)?;
    let (log, _) = run_random_agent(
        env.as_mut(),
        cfg.ddpg.episodes_j,
        cfg.ddpg.steps_t,
        &cfg.root_stream().split("agent"),
    )?;
    Ok(log)
}

pub fn run_ao(cfg: &ScenarioConfig, geometry: &ScenarioGeometry) -> Result<AoResult> {
    let inst = instance(cfg, geometry)?;
    ao_optimize(
        &inst.pair,
        &cfg.env_config()?,
        &cfg.ao,
        &mut cfg.root_stream().split("ao"),
    )
}

pub fn run_random_phases(
    cfg: &ScenarioConfig,
    geometry: &ScenarioGeometry,
    trials: usize,
) -> Result<f64> {
    let inst = instance(cfg, geometry)?;
    let stats = random_phase_baseline(
        &inst.pair,
        &cfg.env_config()?,
        trials,
        &mut cfg.root_stream().split("random"),
    )?;
    Ok(stats.best)
}

fn with_seed(cfg: &ScenarioConfig, seed: u64) -> ScenarioConfig {
    let mut c = cfg.clone();
    c.seed = seed;
    c
}

fn run_jobs<K: Sync, T: Send>(
    jobs: usize,
    keys: &[K],
    f: impl Fn(&K) -> Result<T> + Sync + Send,
) -> Result<Vec<T>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    pool.install(|| keys.par_iter().map(&f).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MseTraceRow {
    pub epoch: usize,
    pub mse: f64,
}

pub fn mse_trace_rows(trace: &[f64]) -> Vec<MseTraceRow> {
    trace
        .iter()
        .enumerate()
        .map(|(i, &mse)| MseTraceRow { epoch: i + 1, mse })
        .collect()
}

/// Final IEN training MSE against RIS-UE path count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathsRow {
    pub n: usize,
    pub paths: usize,
    pub seed: u64,
    pub final_mse: f64,
}

pub fn sweep_paths(cfg: &ScenarioConfig, jobs: usize) -> Result<Vec<PathsRow>> {
    let mut keys = Vec::new();
    for &n in &cfg.sweep.ris_elements {
        for &l in &cfg.sweep.paths {
            for &s in &cfg.sweep.seeds {
                keys.push((n, l, s));
            }
        }
    }
    run_jobs(jobs, &keys, |&(n, l, s)| {
        let c = with_seed(&cfg.with_ris_elements(n)?, s);
        let geom = c.geometry_with_paths(l)?;
        let (_, trace) = build_ien(&c, &geom)?;
        Ok(PathsRow {
            n,
            paths: l,
            seed: s,
            final_mse: trace.last().copied().unwrap_or(f64::NAN),
        })
    })
}

/// Achievable rate per scheme, RIS size and location error.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub scheme: String,
    pub n: usize,
    pub eta: f64,
    pub seed: u64,
    pub rate: f64,
    pub sweeps_or_steps: usize,
}

fn scheme_rows(
    cfg: &ScenarioConfig,
    scheme: &str,
    etas: &[f64],
    ien: Option<Arc<IenModel>>,
) -> Result<Vec<RateRow>> {
    let geom = cfg.geometry();
    let n = cfg.arrays.n();
    let steps = cfg.ddpg.episodes_j * cfg.ddpg.steps_t;
    let row = |eta: f64, rate: f64, k: usize| RateRow {
        scheme: scheme.to_string(),
        n,
        eta,
        seed: cfg.seed,
        rate,
        sweeps_or_steps: k,
    };
    Ok(match scheme {
        "ao" => {
            let r = run_ao(cfg, &geom)?;
            vec![row(0.0, r.rate, r.sweeps())]
        }
        "random" => vec![row(
            0.0,
            run_random_phases(cfg, &geom, cfg.sweep.random_trials)?,
            cfg.sweep.random_trials,
        )],
        "csi" => vec![row(
            0.0,
            run_drl(cfg, &geom, OracleKind::Csi, None)?.best.rate,
            steps,
        )],
        "true" | "ien" => {
            let kind = OracleKind::parse(scheme)?;
            let mut out = Vec::new();
            for &eta in etas {
                let mut c = cfg.clone();
                c.eta = eta;
                out.push(row(
                    eta,
                    run_drl(&c, &geom, kind, ien.clone())?.best.rate,
                    steps,
                ));
            }
            out
        }
        other => return Err(Error::InvalidArgument(format!("unknown scheme `{other}`"))),
    })
}

/// One row per (scheme, N, seed) and, for location-based schemes, per η.
pub fn sweep_ris_elements(cfg: &ScenarioConfig, jobs: usize) -> Result<Vec<RateRow>> {
    let mut keys = Vec::new();
    for scheme in &cfg.sweep.schemes {
        for &n in &cfg.sweep.ris_elements {
            for &s in &cfg.sweep.seeds {
                keys.push((scheme.clone(), n, s));
            }
        }
    }
    let nested = run_jobs(jobs, &keys, |(scheme, n, s)| {
        let c = with_seed(&cfg.with_ris_elements(*n)?, *s);
        let ien = if scheme == "ien" {
            Some(Arc::new(build_ien(&c, &c.geometry())?.0))
        } else {
            None
        };
        scheme_rows(&c, scheme, &cfg.sweep.eta, ien)
    })?;
    Ok(nested.into_iter().flatten().collect())
}

/// Rate of the location-based schemes against η at the configured size.
pub fn sweep_eta(cfg: &ScenarioConfig, jobs: usize) -> Result<Vec<RateRow>> {
    let mut keys = Vec::new();
    for scheme in ["true", "ien"] {
        for &s in &cfg.sweep.seeds {
            keys.push((scheme, s));
        }
    }
    let nested = run_jobs(jobs, &keys, |&(scheme, s)| {
        let c = with_seed(cfg, s);
        let ien = if scheme == "ien" {
            Some(Arc::new(build_ien(&c, &c.geometry())?.0))
        } else {
            None
        };
        scheme_rows(&c, scheme, &cfg.sweep.eta, ien)
    })?;
    Ok(nested.into_iter().flatten().collect())
}

/// `R_a` against coherence time for the proposed scheme
/// (`T = 0`) and scheme 3 (`T = interaction_slots_t`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoherenceRow {
    pub scheme: String,
    pub tc: f64,
    pub interaction_slots: f64,
    pub seed: u64,
    pub rate: f64,
    pub avg_rate: f64,
}

/// Expands measured rates into `R_a` curves over `tcs`.
pub fn coherence_rows(
    scheme: &str,
    seed: u64,
    rate: f64,
    t_interact: f64,
    tcs: &[f64],
) -> Result<Vec<CoherenceRow>> {
    tcs.iter()
        .map(|&tc| {
            Ok(CoherenceRow {
                scheme: scheme.to_string(),
                tc,
                interaction_slots: t_interact,
                seed,
                rate,
                avg_rate: metric_avg_achievable_rate(rate, t_interact, tc)?,
            })
        })
        .collect()
}

pub fn sweep_coherence(cfg: &ScenarioConfig, jobs: usize) -> Result<Vec<CoherenceRow>> {
    let mut keys = Vec::new();
    for scheme in ["ien", "true"] {
        for &s in &cfg.sweep.seeds {
            keys.push((scheme, s));
        }
    }
    let nested = run_jobs(jobs, &keys, |&(scheme, s)| {
        let c = with_seed(cfg, s);
        let geom = c.geometry();
        let (rate, t) = if scheme == "ien" {
            let ien = Arc::new(build_ien(&c, &geom)?.0);
            (
                run_drl(&c, &geom, OracleKind::Ien, Some(ien))?.best.rate,
                0.0,
            )
        } else {
            (
                run_drl(&c, &geom, OracleKind::True, None)?.best.rate,
                c.interaction_slots_t,
            )
        };
        coherence_rows(scheme, s, rate, t, &cfg.sweep.coherence_tc)
    })?;
    Ok(nested.into_iter().flatten().collect())
}

pub fn write_rows<W: Write, T: Serialize>(rows: &[T], header: &[&str], w: W) -> Result<()> {
    let mut wr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    wr.write_record(header)?;
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_rows<R: Read, T: DeserializeOwned>(r: R) -> Result<Vec<T>> {
    let mut rd = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
    rd.deserialize().map(|x| x.map_err(Error::from)).collect()
}

pub const MSE_TRACE_HEADER: [&str; 2] = ["epoch", "mse"];
pub const PATHS_HEADER: [&str; 4] = ["n", "paths", "seed", "final_mse"];
pub const RATE_HEADER: [&str; 6] = ["scheme", "n", "eta", "seed", "rate", "sweeps_or_steps"];
pub const COHERENCE_HEADER: [&str; 6] = [
    "scheme",
    "tc",
    "interaction_slots",
    "seed",
    "rate",
    "avg_rate",
];
