use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rislab_core::baselines::{ao_optimize, AoConfig};
use rislab_core::channel::{composite_channel, synthesize_channels, ArrayConfig};
use rislab_core::ddpg::{actor_update, critic_target, critic_update, AgentNets, Experience};
use rislab_core::env::{achievable_rate, waterfill, EnvConfig, RisPhases};
use rislab_core::experiments::{fit_ien, gen_dataset};
use rislab_core::ien::{ien_predict, DeviceLocations, IenModel};
use rislab_core::linalg::logdet_capacity;
use rislab_core::{CMatrix, RealVector, RngStream, ScenarioConfig, C64};

fn scenario() -> ScenarioConfig {
    ScenarioConfig::default()
}

fn channel_kernels(c: &mut Criterion) {
    let cfg = scenario();
    let geom = cfg.geometry();
    let env = EnvConfig::from_dbm(20.0, -80.0).unwrap();
    c.bench_function("synthesize_channels M=K=4 N=49", |b| {
        b.iter(|| {
            synthesize_channels(&geom, &cfg.arrays, &cfg.path_loss, &mut RngStream::new(1)).unwrap()
        })
    });
    let pair =
        synthesize_channels(&geom, &cfg.arrays, &cfg.path_loss, &mut RngStream::new(1)).unwrap();
    let theta = RisPhases::random(cfg.arrays.n(), &mut RngStream::new(2));
    let h = composite_channel(&pair, &theta).unwrap();
    c.bench_function("waterfill 4x4", |b| {
        b.iter(|| waterfill(black_box(&h), env.power_budget_p, env.noise_power_sigma2).unwrap())
    });
    let q = waterfill(&h, env.power_budget_p, env.noise_power_sigma2).unwrap();
    c.bench_function("achievable_rate 4x4", |b| {
        b.iter(|| achievable_rate(black_box(&h), &q, env.noise_power_sigma2).unwrap())
    });
    let mut rng = RngStream::new(3);
    let a = CMatrix::from_fn(16, 16, |_, _| C64::new(rng.gaussian(), rng.gaussian()));
    let mut x = a.matmul(&a.conj_transpose()).unwrap();
    for i in 0..16 {
        x[(i, i)] += C64::new(1.0, 0.0);
    }
    c.bench_function("logdet 16x16", |b| {
        b.iter(|| logdet_capacity(black_box(&x)).unwrap())
    });
    let ao = AoConfig {
        max_sweeps: 3,
        ..AoConfig::default()
    };
    c.bench_function("ao 3 sweeps N=49", |b| {
        b.iter(|| ao_optimize(&pair, &env, &ao, &mut RngStream::new(4)).unwrap())
    });
}

fn learning_kernels(c: &mut Criterion) {
    let (sd, ad) = (2 * 16 + 2 * 49 + 10, 2 * 16 + 2 * 49);
    let nets = AgentNets::new(sd, ad, [500, 300], &mut RngStream::new(5)).unwrap();
    let mut rng = RngStream::new(6);
    let mut vec_of = |n: usize| RealVector((0..n).map(|_| rng.uniform_range(-1.0, 1.0)).collect());
    let data: Vec<Experience> = (0..16)
        .map(|i| Experience {
            s: vec_of(sd),
            a: vec_of(ad),
            r: i as f64,
            s_next: vec_of(sd),
        })
        .collect();
    let batch: Vec<&Experience> = data.iter().collect();
    c.bench_function("ddpg update V=16 (500,300)", |b| {
        b.iter_batched(
            || nets.clone(),
            |mut n| {
                let y = critic_target(&n, &batch, 0.99).unwrap();
                critic_update(&mut n, &batch, &y, 1e-3).unwrap();
                actor_update(&mut n, &batch, 1e-3).unwrap();
                n
            },
            BatchSize::LargeInput,
        )
    });

    let mut cfg = scenario();
    cfg.arrays = ArrayConfig::new(2, 2, 4, 4).unwrap();
    cfg.ien.u_locations = 50;
    cfg.ien.f_thetas_per_location = 4;
    cfg.ien.epochs = 1;
    let geom = cfg.geometry();
    let data = gen_dataset(&cfg, &geom).unwrap();
    c.bench_function("ien epoch 200 samples N=16", |b| {
        b.iter(|| fit_ien(&cfg, &geom, &data).unwrap())
    });
    let model = Arc::new(fit_ien(&cfg, &geom, &data).unwrap().0);
    let locs = DeviceLocations::from(&geom);
    let theta = RisPhases::ones(16);
    c.bench_function("ien predict N=16", |b| {
        b.iter(|| ien_predict(black_box(model.as_ref() as &IenModel), &locs, &theta).unwrap())
    });
}

criterion_group!(benches, channel_kernels, learning_kernels);
criterion_main!(benches);
