#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria run one after another so each wall-clock time is measured alone.
//! Pass criterion ids (`c1` .. `c8`) as arguments to run a subset:
//! `cargo test -p rislab-cli --test acceptance -- c2 c7`.
//! Verdicts are reported, not enforced, unless `--strict` is given or
//! `ACCEPTANCE_STRICT=1` is set; then any FAIL makes the run fail.

use std::f64::consts::PI;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rislab_core::baselines::{ao_optimize, random_phase_baseline};
use rislab_core::channel::{ula_steering, upa_steering};
use rislab_core::csvio;
use rislab_core::ddpg::{tail_mean, StepRecord};
use rislab_core::env::{achievable_rate, waterfill};
use rislab_core::experiments::{self as ex, OracleKind};
use rislab_core::ien::{ien_backward, IenModel, IenSample};
use rislab_core::linalg::{hermitian_eig, logdet_capacity};
use rislab_core::metrics::metric_avg_achievable_rate;
use rislab_core::mlp::ActivationKind::{Linear, Tanh};
use rislab_core::{
    ActivationKind, CMatrix, Mlp, RngStream, ScenarioConfig, TransmitCovariance, C64,
};

type Outcome = Result<String, String>;

struct Criterion {
    id: &'static str,
    title: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let strict = args.iter().any(|a| a == "--strict")
        || std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let filters: Vec<&String> = args.iter().filter(|a| !a.starts_with('-')).collect();
    let criteria = [
        Criterion {
            id: "c1",
            title: "numerics gate",
            budget: Duration::from_secs(30),
            run: c1_numerics,
        },
        Criterion {
            id: "c2",
            title: "water-filling optimality",
            budget: Duration::from_secs(60),
            run: c2_waterfill,
        },
        Criterion {
            id: "c3",
            title: "AO sanity",
            budget: Duration::from_secs(300),
            run: c3_ao,
        },
        Criterion {
            id: "c4",
            title: "IEN MSE grows with path count",
            budget: Duration::from_secs(600),
            run: c4_paths,
        },
        Criterion {
            id: "c5",
            title: "rate trends in N and eta",
            budget: Duration::from_secs(1800),
            run: c5_rate_trends,
        },
        Criterion {
            id: "c6",
            title: "reward ordering of agents",
            budget: Duration::from_secs(1200),
            run: c6_rewards,
        },
        Criterion {
            id: "c7",
            title: "average achievable rate curves",
            budget: Duration::from_secs(1),
            run: c7_coherence,
        },
        Criterion {
            id: "c8",
            title: "CLI determinism",
            budget: Duration::from_secs(300),
            run: c8_determinism,
        },
    ];
    let mut failed = 0;
    let mut ran = 0;
    for c in &criteria {
        if !filters.is_empty() && !filters.iter().any(|f| *f == c.id) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let outcome = (c.run)();
        let took = start.elapsed();
        let (ok, detail) = match outcome {
            Ok(d) if took <= c.budget => (true, d),
            Ok(d) => (false, format!("{d}; over the {:?} budget", c.budget)),
            Err(d) => (false, d),
        };
        if !ok {
            failed += 1;
        }
        println!(
            "criterion {} {} {}: {} [{:.2}s]",
            &c.id[1..],
            if ok { "PASS" } else { "FAIL" },
            c.title,
            detail,
            took.as_secs_f64()
        );
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if failed == 0 || !strict {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn fmt_list(xs: &[f64]) -> String {
    let parts: Vec<String> = xs.iter().map(|x| format!("{x:.4}")).collect();
    format!("[{}]", parts.join(", "))
}

fn random_complex(rows: usize, cols: usize, rng: &mut RngStream) -> CMatrix {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    CMatrix::from_fn(rows, cols, |_, _| {
        C64::new(s * rng.gaussian(), s * rng.gaussian())
    })
}

/// Largest per-entry relative error, with magnitudes below `floor` treated as `floor`.
fn max_rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

const FD_STEP: f64 = 1e-5;
const FD_FLOOR: f64 = 1e-4;

// ---------------------------------------------------------------- criterion 1

fn mlp_fd_error(dims: &[usize], acts: &[ActivationKind], seed: u64) -> Result<f64, String> {
    let mut rng = RngStream::new(seed);
    let mut net = Mlp::init(dims, acts, &mut rng).map_err(err)?;
    let mut p = net.params_flat();
    for v in p.iter_mut() {
        *v += 0.05 * rng.gaussian();
    }
    net.set_params_flat(&p).map_err(err)?;
    let x: Vec<f64> = (0..dims[0]).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
    let c: Vec<f64> = (0..*dims.last().unwrap())
        .map(|_| rng.uniform_range(-1.0, 1.0))
        .collect();
    let loss = |net: &Mlp, x: &[f64]| -> f64 {
        net.predict(x)
            .unwrap()
            .iter()
            .zip(&c)
            .map(|(o, c)| o * c)
            .sum()
    };
    let (_, tape) = net.forward(&x).map_err(err)?;
    let (grads, dx) = net.backward(&tape, &c).map_err(err)?;
    let analytic = grads.flat();
    let stride = (p.len() / 1500).max(1);
    let (mut an, mut fd) = (Vec::new(), Vec::new());
    let mut probe = net.clone();
    for i in (0..p.len()).step_by(stride) {
        let mut q = p.clone();
        q[i] = p[i] + FD_STEP;
        probe.set_params_flat(&q).map_err(err)?;
        let lp = loss(&probe, &x);
        q[i] = p[i] - FD_STEP;
        probe.set_params_flat(&q).map_err(err)?;
        let lm = loss(&probe, &x);
        an.push(analytic[i]);
        fd.push((lp - lm) / (2.0 * FD_STEP));
    }
    for i in 0..x.len() {
        let (mut xp, mut xm) = (x.clone(), x.clone());
        xp[i] += FD_STEP;
        xm[i] -= FD_STEP;
        an.push(dx[i]);
        fd.push((loss(&net, &xp) - loss(&net, &xm)) / (2.0 * FD_STEP));
    }
    Ok(max_rel_err(&an, &fd, FD_FLOOR))
}

fn ien_fd_error() -> Result<f64, String> {
    let cfg = ScenarioConfig::default()
        .with_overrides(&[
            ("arrays.m_bs".into(), "2".into()),
            ("arrays.k_ue".into(), "2".into()),
            ("arrays.n_x".into(), "3".into()),
            ("arrays.n_y".into(), "2".into()),
            ("ien.u_locations".into(), "4".into()),
            ("ien.f_thetas_per_location".into(), "2".into()),
            ("ien.epochs".into(), "1".into()),
        ])
        .map_err(err)?;
    let geom = cfg.geometry();
    let data = ex::gen_dataset(&cfg, &geom).map_err(err)?;
    let (model, _) = ex::fit_ien(&cfg, &geom, &data).map_err(err)?;
    let mut worst: f64 = 0.0;
    for sample in data.iter().take(3) {
        worst = worst.max(ien_sample_fd(&model, sample)?);
    }
    Ok(worst)
}

fn ien_sample_fd(model: &IenModel, sample: &IenSample) -> Result<f64, String> {
    let (gb, gu) = ien_backward(model, sample).map_err(err)?;
    let mut worst: f64 = 0.0;
    for (which, analytic) in [(0, gb.flat()), (1, gu.flat())] {
        let net = if which == 0 {
            &model.bs_ris_net
        } else {
            &model.ris_ue_net
        };
        let base = net.params_flat();
        let stride = (base.len() / 600).max(1);
        let mut probe = model.clone();
        let (mut an, mut fd) = (Vec::new(), Vec::new());
        for i in (0..base.len()).step_by(stride) {
            let mut eval = |delta: f64| -> Result<f64, String> {
                let mut p = base.clone();
                p[i] += delta;
                let target = if which == 0 {
                    &mut probe.bs_ris_net
                } else {
                    &mut probe.ris_ue_net
                };
                target.set_params_flat(&p).map_err(err)?;
                probe.sample_loss(sample).map_err(err)
            };
            let d = (eval(FD_STEP)? - eval(-FD_STEP)?) / (2.0 * FD_STEP);
            an.push(analytic[i]);
            fd.push(d);
        }
        worst = worst.max(max_rel_err(&an, &fd, FD_FLOOR));
    }
    Ok(worst)
}

fn c1_numerics() -> Outcome {
    let shapes: [(&[usize], &[ActivationKind]); 4] = [
        (&[3, 5, 4, 2], &[Tanh, Tanh, Linear]),
        (&[6, 128, 64, 64], &[Tanh, Tanh, Linear]),
        (&[50, 500, 300, 40], &[Tanh, Tanh, Tanh]),
        (&[90, 500, 300, 1], &[Tanh, Tanh, Linear]),
    ];
    let mut mlp_err: f64 = 0.0;
    for (i, (d, a)) in shapes.iter().enumerate() {
        mlp_err = mlp_err.max(mlp_fd_error(d, a, 100 + i as u64)?);
    }
    check(mlp_err < 1e-5, || {
        format!("MLP gradient relative error {mlp_err:.2e}")
    })?;
    let ien_err = ien_fd_error()?;
    check(ien_err < 1e-5, || {
        format!("IEN gradient relative error {ien_err:.2e}")
    })?;

    let mut rng = RngStream::new(7);
    let mut steer_err: f64 = 0.0;
    for _ in 0..10_000 {
        let psi = rng.uniform_range(-PI, PI);
        let phi = rng.uniform_range(-PI / 2.0, PI / 2.0);
        let n_l = 1 + rng.below(16);
        let (n_x, n_y) = (1 + rng.below(12), 1 + rng.below(12));
        steer_err = steer_err.max((ula_steering(phi, n_l).frob_norm() - 1.0).abs());
        steer_err = steer_err.max((upa_steering(psi, phi, n_x, n_y).frob_norm() - 1.0).abs());
    }
    check(steer_err < 1e-12, || {
        format!("steering norm error {steer_err:.2e}")
    })?;

    let mut logdet_err: f64 = 0.0;
    for trial in 0..500 {
        let n = 1 + trial % 8;
        let a = random_complex(n, n, &mut rng);
        let mut x = a.matmul(&a.conj_transpose()).map_err(err)?;
        for i in 0..n {
            x[(i, i)] += C64::new(1.0, 0.0);
        }
        let x = x.hermitian_part();
        let (vals, _) = hermitian_eig(&x).map_err(err)?;
        let want: f64 = vals.iter().map(|v| v.log2()).sum();
        let got = logdet_capacity(&x).map_err(err)?;
        logdet_err = logdet_err.max((got - want).abs() / want.abs().max(1.0));
    }
    check(logdet_err < 1e-10, || {
        format!("logdet error {logdet_err:.2e}")
    })?;
    Ok(format!(
        "mlp fd {mlp_err:.1e}, ien fd {ien_err:.1e}, steering {steer_err:.1e}, logdet {logdet_err:.1e}"
    ))
}

// ---------------------------------------------------------------- criterion 2

/// Closed-form eigenvalues of a 2×2 Hermitian matrix, descending.
fn eig2(g: &CMatrix) -> (f64, f64) {
    let (a, d, b) = (g[(0, 0)].re, g[(1, 1)].re, g[(0, 1)]);
    let mid = 0.5 * (a + d);
    let rad = (0.25 * (a - d) * (a - d) + b.norm_sqr()).sqrt();
    (mid + rad, mid - rad)
}

/// Best rate over power splits between the two eigenmodes: a dense grid,
/// then golden-section refinement around the best grid point.
fn grid_rate(l1: f64, l2: f64, p: f64) -> f64 {
    let f = |x: f64| (1.0 + l1 * x).log2() + (1.0 + l2 * (p - x)).log2();
    let n = 2000;
    let (mut best_i, mut best) = (0, f64::NEG_INFINITY);
    for i in 0..=n {
        let v = f(p * i as f64 / n as f64);
        if v > best {
            best = v;
            best_i = i;
        }
    }
    let step = p / n as f64;
    let (mut lo, mut hi) = (
        ((best_i as f64) - 1.0).max(0.0) * step,
        ((best_i as f64) + 1.0).min(n as f64) * step,
    );
    let r = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..200 {
        let (m1, m2) = (hi - r * (hi - lo), lo + r * (hi - lo));
        if f(m1) < f(m2) {
            lo = m1;
        } else {
            hi = m2;
        }
    }
    best.max(f(0.5 * (lo + hi)))
}

fn random_feasible_q(p: f64, rng: &mut RngStream) -> Result<TransmitCovariance, String> {
    let a = random_complex(2, 2, rng);
    let aah = a.matmul(&a.conj_transpose()).map_err(err)?.hermitian_part();
    let tr = aah.trace().re;
    let budget_used = if rng.uniform() < 0.5 {
        1.0
    } else {
        rng.uniform()
    };
    TransmitCovariance::new(aah.scale(p * budget_used / tr), p).map_err(err)
}

fn c2_waterfill() -> Outcome {
    let mut rng = RngStream::new(2);
    let mut worst_gap: f64 = 0.0;
    let mut beaten = 0;
    for _ in 0..100 {
        let h = random_complex(2, 2, &mut rng);
        let p = 10f64.powf(rng.uniform_range(-1.0, 2.0));
        let sigma2 = 1.0;
        let q = waterfill(&h, p, sigma2).map_err(err)?;
        let wf = achievable_rate(&h, &q, sigma2).map_err(err)?;
        for _ in 0..10_000 {
            let r = achievable_rate(&h, &random_feasible_q(p, &mut rng)?, sigma2).map_err(err)?;
            if r > wf + 1e-12 {
                beaten += 1;
            }
        }
        let gram = h
            .conj_transpose()
            .matmul(&h)
            .map_err(err)?
            .scale(1.0 / sigma2);
        let (l1, l2) = eig2(&gram);
        worst_gap = worst_gap.max((wf - grid_rate(l1, l2.max(0.0), p)).abs());
    }
    check(beaten == 0, || {
        format!("{beaten} random covariances beat water-filling")
    })?;
    check(worst_gap < 1e-6, || {
        format!("grid oracle gap {worst_gap:.2e} bits")
    })?;
    Ok(format!(
        "no random Q beats it; grid oracle gap {worst_gap:.1e} bits"
    ))
}

// ---------------------------------------------------------------- criterion 3

fn c3_ao() -> Outcome {
    let base = ScenarioConfig::default();
    let env = base.env_config().map_err(err)?;
    let mut wins = 0;
    let mut total = 0;
    let mut non_monotone = 0;
    for n in [16usize, 49] {
        let cfg_n = base.with_ris_elements(n).map_err(err)?;
        for seed in 1..=50u64 {
            let mut cfg = cfg_n.clone();
            cfg.seed = seed;
            let inst = ex::instance(&cfg, &cfg.geometry()).map_err(err)?;
            let root = cfg.root_stream();
            let ao = ao_optimize(&inst.pair, &env, &cfg.ao, &mut root.split("ao")).map_err(err)?;
            if ao.trace.windows(2).any(|w| w[1] < w[0]) {
                non_monotone += 1;
            }
            let rand = random_phase_baseline(&inst.pair, &env, 10_000, &mut root.split("random"))
                .map_err(err)?;
            total += 1;
            if ao.rate >= rand.best {
                wins += 1;
            }
        }
    }
    check(non_monotone == 0, || {
        format!("{non_monotone} AO traces decrease")
    })?;
    check(wins >= 95, || {
        format!("AO beats best-of-10^4 random phases on {wins}/{total}")
    })?;
    Ok(format!(
        "traces monotone; AO >= random best on {wins}/{total}"
    ))
}

// ---------------------------------------------------------------- criterion 4

fn c4_paths() -> Outcome {
    let cfg = ScenarioConfig::default()
        .with_ris_elements(36)
        .map_err(err)?;
    let mut detail = Vec::new();
    let mut failures = Vec::new();
    for seed in [1u64, 2, 3] {
        let mut c = cfg.clone();
        c.seed = seed;
        let mut finals = Vec::new();
        for l in [1usize, 4] {
            let geom = c.geometry_with_paths(l).map_err(err)?;
            let (_, trace) = ex::build_ien(&c, &geom).map_err(err)?;
            finals.push(*trace.last().ok_or("empty MSE trace")?);
        }
        detail.push(format!(
            "seed {seed}: L1 {:.3e} < L4 {:.3e}",
            finals[0], finals[1]
        ));
        if !(finals[0] < finals[1]) {
            failures.push(seed);
        }
    }
    let d = detail.join("; ");
    check(failures.is_empty(), || {
        format!("ordering violated for seeds {failures:?}: {d}")
    })?;
    Ok(d)
}

// ---------------------------------------------------- reduced-scale scenario

const SEEDS: [u64; 3] = [1, 2, 3];

fn reduced(seed: u64) -> Result<ScenarioConfig, String> {
    let mut c = ScenarioConfig::default()
        .with_overrides(&[
            ("arrays.m_bs".into(), "2".into()),
            ("arrays.k_ue".into(), "2".into()),
            ("ddpg.episodes_j".into(), "200".into()),
            ("ddpg.steps_t".into(), "50".into()),
        ])
        .map_err(err)?
        .with_ris_elements(16)
        .map_err(err)?;
    c.seed = seed;
    Ok(c)
}

fn final_true_rate(log: &[StepRecord]) -> f64 {
    tail_mean(log, 0.1, |r| r.true_rate.unwrap_or(f64::NAN))
}

fn mean_true_rate(log: &[StepRecord]) -> f64 {
    mean(
        &log.iter()
            .map(|r| r.true_rate.unwrap_or(f64::NAN))
            .collect::<Vec<_>>(),
    )
}

fn mean_reward(log: &[StepRecord]) -> f64 {
    mean(&log.iter().map(|r| r.reward).collect::<Vec<_>>())
}

// ---------------------------------------------------------------- criterion 5

fn c5_rate_trends() -> Outcome {
    let mut ao_means = Vec::new();
    for n in [16usize, 36, 64] {
        let mut rates = Vec::new();
        for seed in 1..=10u64 {
            let c = reduced(seed)?.with_ris_elements(n).map_err(err)?;
            rates.push(ex::run_ao(&c, &c.geometry()).map_err(err)?.rate);
        }
        ao_means.push(mean(&rates));
    }
    check(ao_means.windows(2).all(|w| w[1] > w[0]), || {
        format!(
            "AO mean rate over N=16,36,64 not increasing: {}",
            fmt_list(&ao_means)
        )
    })?;

    let (mut r0, mut r1) = (Vec::new(), Vec::new());
    for seed in SEEDS {
        let c = reduced(seed)?;
        let geom = c.geometry();
        let ien = Arc::new(ex::build_ien(&c, &geom).map_err(err)?.0);
        for (eta, out) in [(0.0, &mut r0), (0.1, &mut r1)] {
            let mut ce = c.clone();
            ce.eta = eta;
            let res = ex::run_drl(&ce, &geom, OracleKind::Ien, Some(ien.clone())).map_err(err)?;
            out.push(final_true_rate(&res.log));
        }
    }
    let (m0, m1) = (mean(&r0), mean(&r1));
    let d = format!(
        "AO mean over N {}; policy rate eta=0 {} (mean {m0:.4}), eta=0.1 {} (mean {m1:.4})",
        fmt_list(&ao_means),
        fmt_list(&r0),
        fmt_list(&r1)
    );
    check(m1 <= m0, || format!("eta=0.1 beats eta=0: {d}"))?;
    Ok(d)
}

// ---------------------------------------------------------------- criterion 6

fn c6_rewards() -> Outcome {
    let (mut ien_final, mut rand_final, mut ien_avg, mut true_avg) =
        (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut ien_reward_avg = Vec::new();
    for seed in SEEDS {
        let c = reduced(seed)?;
        let geom = c.geometry();
        let ien = Arc::new(ex::build_ien(&c, &geom).map_err(err)?.0);
        let ien_run = ex::run_drl(&c, &geom, OracleKind::Ien, Some(ien)).map_err(err)?;
        let true_run = ex::run_drl(&c, &geom, OracleKind::True, None).map_err(err)?;
        let rand_log = ex::run_random_actions(&c, &geom).map_err(err)?;
        ien_final.push(final_true_rate(&ien_run.log));
        rand_final.push(final_true_rate(&rand_log));
        ien_avg.push(mean_true_rate(&ien_run.log));
        ien_reward_avg.push(mean_reward(&ien_run.log));
        true_avg.push(mean_reward(&true_run.log));
    }
    let ratio = mean(&ien_final) / mean(&rand_final);
    let d = format!(
        "final-10% rate ien {} vs random {} (ratio {ratio:.3}); average reward true {} vs ien {} (ien's own estimate {})",
        fmt_list(&ien_final),
        fmt_list(&rand_final),
        fmt_list(&true_avg),
        fmt_list(&ien_avg),
        fmt_list(&ien_reward_avg)
    );
    check(ratio >= 1.2, || format!("ien/random below 1.2: {d}"))?;
    check(mean(&true_avg) >= mean(&ien_avg), || {
        format!("ien out-earns the true-channel agent: {d}")
    })?;
    Ok(d)
}

// ---------------------------------------------------------------- criterion 7

fn c7_coherence() -> Outcome {
    let tcs = [1000.0, 2000.0, 5000.0, 10_000.0, 20_000.0];
    let rate = 7.25;
    let proposed = ex::coherence_rows("ien", 1, rate, 0.0, &tcs).map_err(err)?;
    check(proposed.iter().all(|r| r.avg_rate == rate), || {
        "proposed curve is not constant".into()
    })?;
    for t in [500.0, 1000.0] {
        let scheme3 = ex::coherence_rows("true", 1, rate, t, &tcs).map_err(err)?;
        check(
            scheme3.windows(2).all(|w| w[1].avg_rate > w[0].avg_rate),
            || format!("scheme-3 curve not increasing for T={t}"),
        )?;
        check(scheme3.iter().all(|r| r.avg_rate < rate), || {
            format!("scheme-3 curve reaches R for T={t}")
        })?;
    }
    let f = |r, t, tc| metric_avg_achievable_rate(r, t, tc).map_err(err);
    check(f(rate, 0.0, 300.0)? == rate, || "T=0 must give R".into())?;
    check(
        f(rate, 300.0, 300.0)? == 0.0 && f(rate, 400.0, 300.0)? == 0.0,
        || "T>=T_c must give 0".into(),
    )?;
    check(f(8.0, 150.0, 300.0)? == 4.0, || {
        "T_c=2T must give R/2".into()
    })?;
    check(f(rate, 1.0, 0.0).is_err(), || {
        "T_c=0 must be rejected".into()
    })?;
    Ok("proposed constant, scheme 3 strictly increasing, formula examples exact".into())
}

// ---------------------------------------------------------------- criterion 8

const TINY: &[&str] = &[
    "--set",
    "arrays.m_bs=2",
    "--set",
    "arrays.k_ue=2",
    "--set",
    "arrays.n_x=2",
    "--set",
    "arrays.n_y=2",
    "--set",
    "ien.u_locations=20",
    "--set",
    "ien.f_thetas_per_location=3",
    "--set",
    "ien.epochs=2",
    "--set",
    "ddpg.hidden=[16,8]",
    "--set",
    "ddpg.episodes_j=3",
    "--set",
    "ddpg.steps_t=10",
    "--set",
    "ddpg.batch_v=4",
    "--set",
    "ao.max_sweeps=3",
    "--set",
    "sweep.seeds=[1,2]",
    "--set",
    "sweep.ris_elements=[4]",
    "--set",
    "sweep.paths=[1,2]",
    "--set",
    "sweep.random_trials=5",
    "--set",
    "sweep.coherence_tc=[100,400]",
];

fn rislab(out: &Path, args: &[&str]) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_rislab"))
        .args(TINY)
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .map_err(err)?;
    check(status.status.success(), || {
        format!(
            "rislab {args:?} failed: {}",
            String::from_utf8_lossy(&status.stderr)
        )
    })
}

fn run_pipeline(out: &Path) -> Result<(), String> {
    let steps: [&[&str]; 11] = [
        &["gen-dataset"],
        &["train-ien"],
        &["train-drl", "--oracle", "ien"],
        &["train-drl", "--oracle", "true"],
        &["train-drl", "--oracle", "csi"],
        &["baseline-ao"],
        &["baseline-random"],
        &["sweep", "--axis", "paths", "--jobs", "2"],
        &["sweep", "--axis", "ris-elements", "--jobs", "2"],
        &["sweep", "--axis", "eta"],
        &["sweep", "--axis", "coherence"],
    ];
    for s in steps {
        rislab(out, s)?;
    }
    Ok(())
}

fn c8_determinism() -> Outcome {
    let a = tempfile::tempdir().map_err(err)?;
    let b = tempfile::tempdir().map_err(err)?;
    run_pipeline(a.path())?;
    run_pipeline(b.path())?;
    let mut names: Vec<String> = std::fs::read_dir(a.path())
        .map_err(err)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".csv"))
        .collect();
    names.sort();
    check(names.len() >= 10, || {
        format!("expected every CSV artifact, found {names:?}")
    })?;
    for name in &names {
        let ta = std::fs::read_to_string(a.path().join(name)).map_err(err)?;
        let tb = std::fs::read_to_string(b.path().join(name)).map_err(err)?;
        check(csvio::body(&ta) == csvio::body(&tb), || {
            format!("{name} bodies differ")
        })?;
        check(!csvio::body(&ta).trim().is_empty(), || {
            format!("{name} has no body")
        })?;
    }
    for name in [
        "ien_model.txt",
        "agent_ien.txt",
        "agent_true.txt",
        "agent_csi.txt",
    ] {
        let ta = std::fs::read(a.path().join(name)).map_err(err)?;
        let tb = std::fs::read(b.path().join(name)).map_err(err)?;
        check(ta == tb, || format!("{name} differs"))?;
    }
    Ok(format!(
        "{} CSV bodies and 4 checkpoints byte-identical",
        names.len()
    ))
}
