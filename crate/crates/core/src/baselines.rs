//! Comparison schemes: alternating optimization with full channel knowledge,
//! the CSI-state DRL environment, and a random-phase reference.

use std::f64::consts::PI;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::channel::{composite_channel, ChannelPair};
use crate::ddpg::{random_feasible, DrlEnv};
use crate::env::{
    achievable_rate, project_action, waterfill, EnvAction, EnvConfig, RisPhases, TransmitCovariance,
};
use crate::error::{len_mismatch, Error, Result};
use crate::linalg::{complex_to_realvec, CMatrix, RealVector, C64};
use crate::rng::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AoConfig {
    pub max_sweeps: usize,
    pub phase_grid_points: usize,
    pub rate_tolerance: f64,
}

impl Default for AoConfig {
    fn default() -> Self {
        AoConfig {
            max_sweeps: 50,
            phase_grid_points: 64,
            rate_tolerance: 1e-6,
        }
    }
}

impl AoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.phase_grid_points < 2 {
            return Err(Error::Config {
                field: "ao.phase_grid_points".into(),
                msg: "must be >= 2".into(),
            });
        }
        if !(self.rate_tolerance >= 0.0) {
            return Err(Error::Config {
                field: "ao.rate_tolerance".into(),
                msg: "must be >= 0".into(),
            });
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AoResult {
    pub theta: RisPhases,
    pub q: TransmitCovariance,
    pub rate: f64,
    /// Rate before the first sweep, then after each sweep.
    pub trace: Vec<f64>,
}

impl AoResult {
    pub fn sweeps(&self) -> usize {
        self.trace.len() - 1
    }
}

/// Block coordinate ascent: water-fill `Q` for the current phases, then
/// set each phase in turn to the best point of a uniform grid (the current
/// value is always a candidate, so no step can lose rate).
pub fn ao_optimize(
    pair: &ChannelPair,
    env: &EnvConfig,
    cfg: &AoConfig,
    rng: &mut RngStream,
) -> Result<AoResult> {
    cfg.validate()?;
    env.validate()?;
    let n = pair.g.rows();
    let (p, s2) = (env.power_budget_p, env.noise_power_sigma2);
    let mut theta: Vec<C64> = RisPhases::random(n, rng).as_slice().to_vec();
    // Rank-1 contributions h_n g_nᵀ of each element.
    let terms: Vec<CMatrix> = (0..n)
        .map(|i| {
            let h = CMatrix::column(pair.h_r.col(i));
            let g = CMatrix::new(1, pair.g.cols(), pair.g.row(i).to_vec())?;
            h.matmul(&g)
        })
        .collect::<Result<_>>()?;
    let grid: Vec<C64> = (0..cfg.phase_grid_points)
        .map(|k| C64::from_polar(1.0, 2.0 * PI * k as f64 / cfg.phase_grid_points as f64))
        .collect();

    // Every trace entry is recomputed from scratch, and a sweep that does not
    // beat the previous entry (rounding included) is discarded, so the trace
    // is exactly non-decreasing.
    let rate_of = |theta: &[C64], q: &TransmitCovariance| {
        achievable_rate(&composite_channel(pair, theta)?, q, s2)
    };
    let mut q = waterfill(&composite_channel(pair, &theta)?, p, s2)?;
    let mut trace = vec![rate_of(&theta, &q)?];
    for _ in 0..cfg.max_sweeps {
        let prev = *trace.last().unwrap();
        let mut cand_theta = theta.clone();
        let mut h_bar = composite_channel(pair, &cand_theta)?;
        let mut cand_q = waterfill(&h_bar, p, s2)?;
        if rate_of(&cand_theta, &cand_q)? < prev {
            cand_q = q.clone();
        }
        for i in 0..n {
            let rest = h_bar.sub(&terms[i].scale_c(cand_theta[i]))?;
            let mut best = (achievable_rate(&h_bar, &cand_q, s2)?, cand_theta[i]);
            for &z in &grid {
                let r = achievable_rate(&rest.add(&terms[i].scale_c(z))?, &cand_q, s2)?;
                if r > best.0 {
                    best = (r, z);
                }
            }
            cand_theta[i] = best.1;
            h_bar = rest.add(&terms[i].scale_c(cand_theta[i]))?;
        }
        let rate = rate_of(&cand_theta, &cand_q)?;
        if rate < prev {
            break;
        }
        theta = cand_theta;
        q = cand_q;
        trace.push(rate);
        if rate - prev < cfg.rate_tolerance {
            break;
        }
    }
    let mut rate = *trace.last().unwrap();
    let final_q = waterfill(&composite_channel(pair, &theta)?, p, s2)?;
    let final_rate = rate_of(&theta, &final_q)?;
    if final_rate >= rate {
        q = final_q;
        rate = final_rate;
    }
    let theta = RisPhases::new(theta)?;
    Ok(AoResult {
        theta,
        q,
        rate,
        trace,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RandomPhaseStats {
    pub mean: f64,
    pub best: f64,
}

/// Uniform random phases with water-filled `Q`, `trials` times.
pub fn random_phase_baseline(
    pair: &ChannelPair,
    env: &EnvConfig,
    trials: usize,
    rng: &mut RngStream,
) -> Result<RandomPhaseStats> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be >= 1".into()));
    }
    let n = pair.g.rows();
    let mut sum = 0.0;
    let mut best = f64::NEG_INFINITY;
    for _ in 0..trials {
        let theta = RisPhases::random(n, rng);
        let h = composite_channel(pair, &theta)?;
        let q = waterfill(&h, env.power_budget_p, env.noise_power_sigma2)?;
        let r = achievable_rate(&h, &q, env.noise_power_sigma2)?;
        sum += r;
        best = best.max(r);
    }
    Ok(RandomPhaseStats {
        mean: sum / trials as f64,
        best,
    })
}

/// `(vec(Re Q, Im Q), Re θ, Im θ, R, vec(Re H̄, Im H̄))` with `H̄` scaled by `csi_scale`.
pub fn csi_state(
    h_bar: &CMatrix,
    theta: &RisPhases,
    q: &TransmitCovariance,
    rate: f64,
    csi_scale: f64,
) -> RealVector {
    let mut v = complex_to_realvec(q.matrix()).into_inner();
    v.extend(theta.iter().map(|t| t.re));
    v.extend(theta.iter().map(|t| t.im));
    v.push(rate);
    v.extend(complex_to_realvec(h_bar).iter().map(|x| x * csi_scale));
    RealVector(v)
}

/// Scheme-2 state for the composite channel of `pair` under `theta`.
pub fn make_csi_state(
    pair: &ChannelPair,
    theta: &RisPhases,
    q: &TransmitCovariance,
    rate: f64,
) -> Result<RealVector> {
    if theta.len() != pair.g.rows() {
        return Err(len_mismatch("make_csi_state", pair.g.rows(), theta.len()));
    }
    let h = composite_channel(pair, theta)?;
    Ok(csi_state(&h, theta, q, rate, 1.0))
}

pub fn csi_state_len(m: usize, k: usize, n: usize) -> usize {
    2 * m * m + 2 * n + 1 + 2 * k * m
}

/// Scheme-2 environment: the agent sees the composite channel instead of
/// coordinates and interacts with the real channel.
///
/// The channel block is divided by the RMS entry of `H̄(θ = 1)` so that it
/// reaches the network at unit scale.
pub struct CsiEnv {
    pair: ChannelPair,
    cfg: EnvConfig,
    csi_scale: f64,
    q: TransmitCovariance,
    theta: RisPhases,
    h_bar: CMatrix,
    rate: f64,
}

impl CsiEnv {
    pub fn new(pair: ChannelPair, cfg: EnvConfig) -> Result<Self> {
        cfg.validate()?;
        let (n, m) = pair.g.shape();
        let theta = RisPhases::ones(n);
        let h_bar = composite_channel(&pair, &theta)?;
        let rms = (h_bar.frob_norm_sq() / (h_bar.rows() * h_bar.cols()) as f64).sqrt();
        let csi_scale = if rms > 0.0 { 1.0 / rms } else { 1.0 };
        Ok(CsiEnv {
            q: TransmitCovariance::isotropic(m, cfg.power_budget_p),
            pair,
            cfg,
            csi_scale,
            theta,
            h_bar,
            rate: 0.0,
        })
    }

    fn apply(&mut self, q: TransmitCovariance, theta: RisPhases) -> Result<(RealVector, f64)> {
        self.h_bar = composite_channel(&self.pair, &theta)?;
        self.rate = achievable_rate(&self.h_bar, &q, self.cfg.noise_power_sigma2)?;
        self.q = q;
        self.theta = theta;
        Ok((
            csi_state(&self.h_bar, &self.theta, &self.q, self.rate, self.csi_scale),
            self.rate,
        ))
    }
}

impl DrlEnv for CsiEnv {
    fn state_dim(&self) -> usize {
        csi_state_len(self.q.dim(), self.pair.h_r.rows(), self.theta.len())
    }

    fn action_dim(&self) -> usize {
        EnvAction::encoded_len(self.q.dim(), self.theta.len())
    }

    fn reset(&mut self, rng: &mut RngStream) -> Result<RealVector> {
        let (q, theta) =
            random_feasible(self.q.dim(), self.theta.len(), self.cfg.power_budget_p, rng)?;
        Ok(self.apply(q, theta)?.0)
    }

    fn step(&mut self, action: &[f64]) -> Result<(RealVector, f64)> {
        let a = EnvAction {
            raw: RealVector(action.to_vec()),
        };
        let (q, theta) =
            project_action(&a, self.q.dim(), self.theta.len(), self.cfg.power_budget_p)?;
        self.apply(q, theta)
    }

    fn current(&self) -> (TransmitCovariance, RisPhases) {
        (self.q.clone(), self.theta.clone())
    }

    fn true_rate(&self) -> Result<Option<f64>> {
        Ok(Some(self.rate))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineRow {
    pub scheme: String,
    pub n: usize,
    pub seed: u64,
    pub rate: f64,
    pub sweeps_or_steps: usize,
}

pub fn write_baseline_csv<W: Write>(rows: &[BaselineRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    if rows.is_empty() {
        wr.write_record(["scheme", "n", "seed", "rate", "sweeps_or_steps"])?;
    }
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_baseline_csv<R: Read>(r: R) -> Result<Vec<BaselineRow>> {
    let mut rd = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
    rd.deserialize().map(|r| r.map_err(Error::from)).collect()
}
