//! DDPG agent: actor, critic, their target copies, replay buffer and the
//! training loop that drives any [`DrlEnv`].

use std::io::{Read, Write};
use std::sync::Arc;

use ndarray::{s, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::channel::CoordNormalizer;
use crate::env::{
    achievable_rate, env_step, project_action, ChannelOracle, EnvAction, EnvConfig, EnvState,
    RisPhases, TransmitCovariance,
};
use crate::error::{len_mismatch, Error, Result};
use crate::ien::DeviceLocations;
use crate::linalg::RealVector;
use crate::metrics::metric_average_reward;
use crate::mlp::{ActivationKind, CheckpointLines, Mlp, SgdConfig};
use crate::rng::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DdpgConfig {
    pub hidden: [usize; 2],
    pub lambda_q: f64,
    pub lambda_mu: f64,
    pub rho_mu: f64,
    pub rho_q: f64,
    pub tau_discount: f64,
    pub batch_v: usize,
    pub buffer_capacity: usize,
    pub episodes_j: usize,
    pub steps_t: usize,
    pub noise_std_initial: f64,
    pub noise_decay: f64,
}

impl Default for DdpgConfig {
    fn default() -> Self {
        DdpgConfig {
            hidden: [500, 300],
            lambda_q: 1e-3,
            lambda_mu: 1e-3,
            rho_mu: 1e-3,
            rho_q: 1e-3,
            tau_discount: 0.99,
            batch_v: 16,
            buffer_capacity: 10_000,
            episodes_j: 1000,
            steps_t: 50,
            noise_std_initial: 0.1,
            noise_decay: 0.999,
        }
    }
}

impl DdpgConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &'static str, msg: &str| {
            Err(Error::Config {
                field: format!("ddpg.{field}"),
                msg: msg.into(),
            })
        };
        for (name, v) in [
            ("lambda_q", self.lambda_q),
            ("lambda_mu", self.lambda_mu),
            ("rho_mu", self.rho_mu),
            ("rho_q", self.rho_q),
            ("tau_discount", self.tau_discount),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return bad(name, "must lie in (0, 1]");
            }
        }
        if self.hidden.contains(&0) {
            return bad("hidden", "widths must be >= 1");
        }
        if self.batch_v == 0 {
            return bad("batch_v", "must be >= 1");
        }
        if self.buffer_capacity < self.batch_v {
            return bad("buffer_capacity", "must be >= batch_v");
        }
        if !(self.noise_std_initial >= 0.0) || !self.noise_std_initial.is_finite() {
            return bad("noise_std_initial", "must be finite and >= 0");
        }
        if !(self.noise_decay > 0.0 && self.noise_decay <= 1.0) {
            return bad("noise_decay", "must lie in (0, 1]");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Experience {
    pub s: RealVector,
    pub a: RealVector,
    pub r: f64,
    pub s_next: RealVector,
}

/// Fixed-capacity ring; the oldest experience is overwritten first.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    items: Vec<Experience>,
    capacity: usize,
    inserted: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidArgument(
                "replay capacity must be >= 1".into(),
            ));
        }
        Ok(ReplayBuffer {
            items: Vec::with_capacity(capacity.min(1 << 16)),
            capacity,
            inserted: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn push(&mut self, e: Experience) {
        let slot = (self.inserted % self.capacity as u64) as usize;
        if self.items.len() < self.capacity {
            self.items.push(e);
        } else {
            self.items[slot] = e;
        }
        self.inserted += 1;
    }

    /// Stored experiences, oldest first.
    pub fn iter_oldest_first(&self) -> impl Iterator<Item = &Experience> {
        let start = if self.items.len() < self.capacity {
            0
        } else {
            (self.inserted % self.capacity as u64) as usize
        };
        self.items[start..].iter().chain(&self.items[..start])
    }

    /// `v` distinct experiences chosen uniformly.
    pub fn sample(&self, v: usize, rng: &mut RngStream) -> Result<Vec<&Experience>> {
        if v > self.items.len() {
            return Err(Error::InvalidArgument(format!(
                "cannot sample {v} from a buffer of {}",
                self.items.len()
            )));
        }
        let idx = rand::seq::index::sample(rng, self.items.len(), v);
        Ok(idx.iter().map(|i| &self.items[i]).collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentNets {
    pub actor: Mlp,
    pub critic: Mlp,
    pub target_actor: Mlp,
    pub target_critic: Mlp,
}

impl AgentNets {
    pub fn new(
        state_dim: usize,
        action_dim: usize,
        hidden: [usize; 2],
        rng: &mut RngStream,
    ) -> Result<Self> {
        use ActivationKind::{Linear, Tanh};
        let actor = Mlp::init(
            &[state_dim, hidden[0], hidden[1], action_dim],
            &[Tanh, Tanh, Tanh],
            &mut rng.split("actor"),
        )?;
        let critic = Mlp::init(
            &[state_dim + action_dim, hidden[0], hidden[1], 1],
            &[Tanh, Tanh, Linear],
            &mut rng.split("critic"),
        )?;
        Ok(AgentNets {
            target_actor: actor.clone(),
            target_critic: critic.clone(),
            actor,
            critic,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.actor.in_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.actor.out_dim()
    }

    pub fn to_checkpoint(&self, cfg: &DdpgConfig) -> Result<String> {
        let mut s = format!("ddpg 1\nconfig {}\n", serde_json::to_string(cfg)?);
        for net in [
            &self.actor,
            &self.critic,
            &self.target_actor,
            &self.target_critic,
        ] {
            s.push_str(&net.to_checkpoint());
        }
        Ok(s)
    }

    pub fn from_checkpoint(text: &str) -> Result<(AgentNets, DdpgConfig)> {
        let mut lines = CheckpointLines::new(text);
        let (ln, head) = lines.next_line()?;
        if head.trim() != "ddpg 1" {
            return Err(lines.error(ln, "expected `ddpg 1`"));
        }
        let (ln, cfg_line) = lines.next_line()?;
        let cfg: DdpgConfig = cfg_line
            .strip_prefix("config ")
            .ok_or_else(|| lines.error(ln, "expected `config`"))
            .and_then(|j| serde_json::from_str(j).map_err(|e| lines.error(ln, &e.to_string())))?;
        let actor = Mlp::read_checkpoint(&mut lines)?;
        let critic = Mlp::read_checkpoint(&mut lines)?;
        let target_actor = Mlp::read_checkpoint(&mut lines)?;
        let target_critic = Mlp::read_checkpoint(&mut lines)?;
        let nets = AgentNets {
            actor,
            critic,
            target_actor,
            target_critic,
        };
        let (sd, ad) = (nets.state_dim(), nets.action_dim());
        if nets.critic.in_dim() != sd + ad
            || nets.target_actor.dims() != nets.actor.dims()
            || nets.target_critic.dims() != nets.critic.dims()
        {
            return Err(Error::Checkpoint {
                line: 0,
                msg: "inconsistent agent network shapes".into(),
            });
        }
        Ok((nets, cfg))
    }
}

/// `μ(s) + ζ`, clamped to `[−1, 1]`.
pub fn select_action(
    nets: &AgentNets,
    s: &[f64],
    noise_std: f64,
    rng: &mut RngStream,
) -> Result<RealVector> {
    if s.len() != nets.state_dim() {
        return Err(len_mismatch("select_action", nets.state_dim(), s.len()));
    }
    let mut a = nets.actor.predict(s)?;
    if noise_std > 0.0 {
        for x in a.iter_mut() {
            *x += noise_std * rng.gaussian();
        }
    }
    for x in a.iter_mut() {
        *x = x.clamp(-1.0, 1.0);
    }
    Ok(a)
}

fn stack<'a>(rows: impl ExactSizeIterator<Item = &'a [f64]>, width: usize) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((rows.len(), width));
    for (i, r) in rows.enumerate() {
        if r.len() != width {
            return Err(len_mismatch("batch row", width, r.len()));
        }
        out.row_mut(i).assign(&ArrayView1::from(r));
    }
    Ok(out)
}

fn concat(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    ndarray::concatenate(ndarray::Axis(1), &[a.view(), b.view()]).expect("row counts agree")
}

/// `y_v = r_v + τ · Q′(s′_v, μ′(s′_v))`.
pub fn critic_target(
    nets: &AgentNets,
    batch: &[&Experience],
    tau_discount: f64,
) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let s_next = stack(batch.iter().map(|e| &e.s_next[..]), nets.state_dim())?;
    let a_next = nets.target_actor.predict_batch(s_next.view())?;
    let q_next = nets
        .target_critic
        .predict_batch(concat(&s_next, &a_next).view())?;
    Ok(batch
        .iter()
        .zip(q_next.column(0))
        .map(|(e, q)| e.r + tau_discount * q)
        .collect())
}

/// Critic loss `(1/V) Σ (y_v − Q(s_v, a_v))²` for the current parameters.
pub fn critic_loss(nets: &AgentNets, batch: &[&Experience], y: &[f64]) -> Result<f64> {
    let input = critic_input(nets, batch)?;
    let q = nets.critic.predict_batch(input.view())?;
    Ok(y.iter()
        .zip(q.column(0))
        .map(|(y, q)| (y - q).powi(2))
        .sum::<f64>()
        / y.len() as f64)
}

fn critic_input(nets: &AgentNets, batch: &[&Experience]) -> Result<Array2<f64>> {
    let s = stack(batch.iter().map(|e| &e.s[..]), nets.state_dim())?;
    let a = stack(batch.iter().map(|e| &e.a[..]), nets.action_dim())?;
    Ok(concat(&s, &a))
}

/// One SGD step on the critic loss; returns the loss before the step.
pub fn critic_update(
    nets: &mut AgentNets,
    batch: &[&Experience],
    y: &[f64],
    lambda_q: f64,
) -> Result<f64> {
    if batch.len() != y.len() || batch.is_empty() {
        return Err(len_mismatch("critic_update", batch.len(), y.len()));
    }
    let sgd = SgdConfig::new(lambda_q)?;
    let input = critic_input(nets, batch)?;
    let (q, tape) = nets.critic.forward_batch(input.view())?;
    let v = y.len() as f64;
    let mut grad = Array2::zeros((y.len(), 1));
    let mut loss = 0.0;
    for (i, (&yi, &qi)) in y.iter().zip(q.column(0)).enumerate() {
        let e = qi - yi;
        loss += e * e;
        grad[(i, 0)] = 2.0 * e / v;
    }
    let grads = nets.critic.param_grads_batch(&tape, grad.view())?;
    nets.critic.sgd_step(&grads, &sgd);
    Ok(loss / v)
}

/// Gradient of `−(1/V) Σ Q(s_v, μ(s_v))` with respect to the actor.
pub fn actor_gradient(nets: &AgentNets, batch: &[&Experience]) -> Result<crate::mlp::MlpGrads> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let sd = nets.state_dim();
    let s = stack(batch.iter().map(|e| &e.s[..]), sd)?;
    let (a, actor_tape) = nets.actor.forward_batch(s.view())?;
    let (_, critic_tape) = nets.critic.forward_batch(concat(&s, &a).view())?;
    let upstream = Array2::from_elem((batch.len(), 1), -1.0 / batch.len() as f64);
    let d_input = nets
        .critic
        .input_grad_batch(&critic_tape, upstream.view())?;
    let d_action = d_input.slice(s![.., sd..]).to_owned();
    let grads = nets.actor.param_grads_batch(&actor_tape, d_action.view())?;
    Ok(grads)
}

/// Deterministic policy-gradient step: ascend the batch-mean critic value.
pub fn actor_update(nets: &mut AgentNets, batch: &[&Experience], lambda_mu: f64) -> Result<()> {
    let sgd = SgdConfig::new(lambda_mu)?;
    let grads = actor_gradient(nets, batch)?;
    nets.actor.sgd_step(&grads, &sgd);
    Ok(())
}

/// `target ← ρ·source + (1 − ρ)·target`.
pub fn soft_update(source: &Mlp, target: &mut Mlp, rho: f64) -> Result<()> {
    target.soft_update_from(source, rho)
}

/// Environment interface seen by the agent.
pub trait DrlEnv {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    /// Draws a random feasible `(Q⁰, θ⁰)` and returns `s⁰`.
    fn reset(&mut self, rng: &mut RngStream) -> Result<RealVector>;
    /// Applies a raw action; returns `(s′, r)`.
    fn step(&mut self, action: &[f64]) -> Result<(RealVector, f64)>;
    /// Current feasible `(Q, θ)`.
    fn current(&self) -> (TransmitCovariance, RisPhases);
    /// Rate of the current `(Q, θ)` on the real channel, if known.
    fn true_rate(&self) -> Result<Option<f64>>;
}

/// Random feasible starting point: a uniform raw action projected.
pub fn random_feasible(
    m: usize,
    n: usize,
    p: f64,
    rng: &mut RngStream,
) -> Result<(TransmitCovariance, RisPhases)> {
    let raw: Vec<f64> = (0..EnvAction::encoded_len(m, n))
        .map(|_| rng.uniform_range(-1.0, 1.0))
        .collect();
    project_action(
        &EnvAction {
            raw: RealVector(raw),
        },
        m,
        n,
        p,
    )
}

/// Location-state environment backed by any channel oracle (IEN for the
/// proposed scheme, the real channel for scheme 3).
pub struct LocationEnv {
    oracle: Arc<dyn ChannelOracle>,
    evaluator: Option<Arc<dyn ChannelOracle>>,
    cfg: EnvConfig,
    coords: Option<CoordNormalizer>,
    state: EnvState,
}

impl LocationEnv {
    /// `locations` are what the agent observes (possibly perturbed);
    /// `evaluator`, when given, scores actions on the real channel.
    pub fn new(
        oracle: Arc<dyn ChannelOracle>,
        evaluator: Option<Arc<dyn ChannelOracle>>,
        locations: DeviceLocations,
        m: usize,
        n: usize,
        cfg: EnvConfig,
        coords: Option<CoordNormalizer>,
    ) -> Result<Self> {
        cfg.validate()?;
        let state = EnvState {
            q: TransmitCovariance::isotropic(m, cfg.power_budget_p),
            theta: RisPhases::ones(n),
            rate: 0.0,
            loc_bs: locations.bs,
            loc_ris: locations.ris,
            loc_ue: locations.ue,
        };
        Ok(LocationEnv {
            oracle,
            evaluator,
            cfg,
            coords,
            state,
        })
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }
}

impl DrlEnv for LocationEnv {
    fn state_dim(&self) -> usize {
        EnvState::encoded_len(self.state.q.dim(), self.state.theta.len())
    }

    fn action_dim(&self) -> usize {
        EnvAction::encoded_len(self.state.q.dim(), self.state.theta.len())
    }

    fn reset(&mut self, rng: &mut RngStream) -> Result<RealVector> {
        let (q, theta) = random_feasible(
            self.state.q.dim(),
            self.state.theta.len(),
            self.cfg.power_budget_p,
            rng,
        )?;
        let h = self.oracle.composite(&theta)?;
        self.state.rate = achievable_rate(&h, &q, self.cfg.noise_power_sigma2)?;
        self.state.q = q;
        self.state.theta = theta;
        Ok(self.state.encode(self.coords.as_ref()))
    }

    fn step(&mut self, action: &[f64]) -> Result<(RealVector, f64)> {
        let a = EnvAction {
            raw: RealVector(action.to_vec()),
        };
        let (next, r) = env_step(&self.state, &a, self.oracle.as_ref(), &self.cfg)?;
        self.state = next;
        Ok((self.state.encode(self.coords.as_ref()), r))
    }

    fn current(&self) -> (TransmitCovariance, RisPhases) {
        (self.state.q.clone(), self.state.theta.clone())
    }

    fn true_rate(&self) -> Result<Option<f64>> {
        match &self.evaluator {
            None => Ok(None),
            Some(ev) => {
                let h = ev.composite(&self.state.theta)?;
                Ok(Some(achievable_rate(
                    &h,
                    &self.state.q,
                    self.cfg.noise_power_sigma2,
                )?))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub episode: usize,
    pub step: usize,
    pub reward: f64,
    pub true_rate: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BestAction {
    pub q: TransmitCovariance,
    pub theta: RisPhases,
    pub rate: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub nets: AgentNets,
    pub log: Vec<StepRecord>,
    pub best: BestAction,
    /// Number of gradient updates performed.
    pub updates: usize,
}

fn track_best(best: &mut Option<BestAction>, env: &dyn DrlEnv, reward: f64) -> Result<Option<f64>> {
    let tr = env.true_rate()?;
    let score = tr.unwrap_or(reward);
    if best.as_ref().is_none_or(|b| score > b.rate) {
        let (q, theta) = env.current();
        *best = Some(BestAction {
            q,
            theta,
            rate: score,
        });
    }
    Ok(tr)
}

/// The training loop: `J` episodes of `T` steps each.
pub fn train(
    mut nets: AgentNets,
    env: &mut dyn DrlEnv,
    cfg: &DdpgConfig,
    rng: &RngStream,
) -> Result<TrainOutput> {
    cfg.validate()?;
    if env.state_dim() != nets.state_dim() || env.action_dim() != nets.action_dim() {
        return Err(Error::DimensionMismatch {
            op: "train",
            left: format!("env {}→{}", env.state_dim(), env.action_dim()),
            right: format!("agent {}→{}", nets.state_dim(), nets.action_dim()),
        });
    }
    let mut init_rng = rng.split("episode-init");
    let mut noise_rng = rng.split("exploration");
    let mut replay_rng = rng.split("replay");
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity)?;
    let mut log = Vec::with_capacity(cfg.episodes_j * cfg.steps_t);
    let mut best = None;
    let mut updates = 0;
    let mut noise = cfg.noise_std_initial;
    for j in 0..cfg.episodes_j {
        let mut s = env.reset(&mut init_rng)?;
        for t in 0..cfg.steps_t {
            let a = select_action(&nets, &s, noise, &mut noise_rng)?;
            let (s_next, r) = env.step(&a)?;
            let true_rate = track_best(&mut best, env, r)?;
            log.push(StepRecord {
                episode: j,
                step: t,
                reward: r,
                true_rate,
            });
            buffer.push(Experience {
                s,
                a,
                r,
                s_next: s_next.clone(),
            });
            if buffer.len() >= cfg.batch_v {
                let batch = buffer.sample(cfg.batch_v, &mut replay_rng)?;
                let y = critic_target(&nets, &batch, cfg.tau_discount)?;
                critic_update(&mut nets, &batch, &y, cfg.lambda_q)?;
                actor_update(&mut nets, &batch, cfg.lambda_mu)?;
                soft_update(&nets.actor, &mut nets.target_actor, cfg.rho_mu)?;
                soft_update(&nets.critic, &mut nets.target_critic, cfg.rho_q)?;
                updates += 1;
            }
            s = s_next;
        }
        noise *= cfg.noise_decay;
    }
    let best = match best {
        Some(b) => b,
        None => {
            let (q, theta) = env.current();
            BestAction {
                q,
                theta,
                rate: 0.0,
            }
        }
    };
    Ok(TrainOutput {
        nets,
        log,
        best,
        updates,
    })
}

/// Uniform-random actions in `[−1, 1]` with the same episode structure.
pub fn run_random_agent(
    env: &mut dyn DrlEnv,
    episodes: usize,
    steps: usize,
    rng: &RngStream,
) -> Result<(Vec<StepRecord>, BestAction)> {
    let mut init_rng = rng.split("episode-init");
    let mut act_rng = rng.split("random-actions");
    let mut log = Vec::with_capacity(episodes * steps);
    let mut best = None;
    for j in 0..episodes {
        env.reset(&mut init_rng)?;
        for t in 0..steps {
            let a: Vec<f64> = (0..env.action_dim())
                .map(|_| act_rng.uniform_range(-1.0, 1.0))
                .collect();
            let (_, r) = env.step(&a)?;
            let true_rate = track_best(&mut best, env, r)?;
            log.push(StepRecord {
                episode: j,
                step: t,
                reward: r,
                true_rate,
            });
        }
    }
    let best = best.unwrap_or_else(|| {
        let (q, theta) = env.current();
        BestAction {
            q,
            theta,
            rate: 0.0,
        }
    });
    Ok((log, best))
}

/// Mean of `f(record)` over the last `fraction` of the log (at least one record).
pub fn tail_mean(log: &[StepRecord], fraction: f64, f: impl Fn(&StepRecord) -> f64) -> f64 {
    if log.is_empty() {
        return 0.0;
    }
    let k = ((log.len() as f64 * fraction).ceil() as usize).clamp(1, log.len());
    log[log.len() - k..].iter().map(f).sum::<f64>() / k as f64
}

/// Reward log CSV: `episode, step, reward, avg_reward[, true_rate]`.
pub fn write_reward_log<W: Write>(log: &[StepRecord], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let with_true = log.first().is_some_and(|r| r.true_rate.is_some());
    let mut header = vec!["episode", "step", "reward", "avg_reward"];
    if with_true {
        header.push("true_rate");
    }
    wr.write_record(&header)?;
    if !log.is_empty() {
        let rewards: Vec<f64> = log.iter().map(|r| r.reward).collect();
        let avg = metric_average_reward(&rewards)?;
        for (rec, a) in log.iter().zip(avg) {
            let mut row = vec![
                rec.episode.to_string(),
                rec.step.to_string(),
                rec.reward.to_string(),
                a.to_string(),
            ];
            if with_true {
                row.push(rec.true_rate.map(|x| x.to_string()).unwrap_or_default());
            }
            wr.write_record(&row)?;
        }
    }
    wr.flush()?;
    Ok(())
}

pub fn read_reward_log<R: Read>(r: R) -> Result<Vec<StepRecord>> {
    let mut rd = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
    let mut out = Vec::new();
    let parse_err =
        |e: &dyn std::fmt::Display| Error::InvalidArgument(format!("bad reward log: {e}"));
    for rec in rd.records() {
        let rec = rec?;
        let episode = rec[0].parse().map_err(|e| parse_err(&e))?;
        let step = rec[1].parse().map_err(|e| parse_err(&e))?;
        let reward = rec[2].parse().map_err(|e| parse_err(&e))?;
        let true_rate = match rec.get(4) {
            Some(t) if !t.is_empty() => Some(t.parse().map_err(|e| parse_err(&e))?),
            _ => None,
        };
        out.push(StepRecord {
            episode,
            step,
            reward,
            true_rate,
        });
    }
    Ok(out)
}
