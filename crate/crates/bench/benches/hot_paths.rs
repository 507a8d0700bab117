//! Criterion benchmarks for the paths that dominate meta-training wall time:
//! batched forward/backward passes, environment stepping, SNES updates, and
//! a full inner-loop DQN training run on a CB.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

use banditforge_core::agents::{self, AlgoId};
use banditforge_core::envs::{Action, ClassicEnv, Env, EnvId};
use banditforge_core::nn::{self, Activation, NetworkSpec};
use banditforge_core::scb::{Scb, ScbParams, ScbSpec};
use banditforge_core::snes;
use banditforge_core::tape::Tape;
use banditforge_core::Rng;

fn bench_forward_backward(c: &mut Criterion) {
    let spec = NetworkSpec::new(4, &[64, 64], 2, Activation::Tanh);
    let mut rng = Rng::new(1);
    let params = nn::init_params(&spec, &mut rng);
    let batch = 256;
    let x: Vec<f32> = (0..batch * 4).map(|_| rng.normal_f32()).collect();

    c.bench_function("mlp_forward_batch256", |b| {
        b.iter(|| {
            let mut t = Tape::<f32>::new();
            let p = t.constant(1, params.len(), params.0.clone());
            let xs = t.constant(batch, 4, x.clone());
            std::hint::black_box(t.mlp(&spec, p, xs));
        })
    });

    c.bench_function("mlp_forward_backward_batch256", |b| {
        b.iter(|| {
            let mut t = Tape::<f32>::new();
            let p = t.param(1, params.len(), params.0.clone());
            let xs = t.constant(batch, 4, x.clone());
            let y = t.mlp(&spec, p, xs);
            let sq = t.square(y);
            let loss = t.mean_all(sq);
            let mut g = t.backward(loss).unwrap();
            std::hint::black_box(g.take(p));
        })
    });
}

fn bench_env_step(c: &mut Criterion) {
    let env = ClassicEnv::new(EnvId::CartPoleV1);
    let mut rng = Rng::new(2);
    let state = env.reset(&mut rng);
    c.bench_function("cartpole_step", |b| {
        b.iter(|| std::hint::black_box(env.step(&state, &Action::Discrete(1)).unwrap()))
    });

    let acro = ClassicEnv::new(EnvId::AcrobotV1);
    let astate = acro.reset(&mut rng);
    c.bench_function("acrobot_rk4_step", |b| {
        b.iter(|| std::hint::black_box(acro.step(&astate, &Action::Discrete(2)).unwrap()))
    });
}

fn bench_snes(c: &mut Criterion) {
    let dim = 1500; // roughly a CartPole SCB genome
    let state = snes::SearchState::new(vec![0.0; dim], 0.05);
    let rng = Rng::new(3);
    c.bench_function("snes_ask_tell_pop64", |b| {
        b.iter_batched(
            || state.clone(),
            |mut s| {
                let pop = snes::ask(&s, 64, &rng);
                let fitness: Vec<f32> =
                    pop.members.iter().map(|m| -m.0.iter().map(|v| v * v).sum::<f32>()).collect();
                let u = snes::shape_fitness(&fitness).unwrap();
                snes::tell(&mut s, &pop.noise, &u);
            },
            BatchSize::SmallInput,
        )
    });
}

fn bench_inner_loop(c: &mut Criterion) {
    let spec = ScbSpec::cb(EnvId::CartPoleV1);
    let mut rng = Rng::new(4);
    let params = ScbParams::init_random(&spec, &mut rng);
    let scb = Scb::new(spec, params).unwrap();
    let mut task = agents::task_for(EnvId::CartPoleV1, AlgoId::Dqn, &mut rng, true);
    task.total_steps = 2_000;

    let mut group = c.benchmark_group("inner_loop");
    group.sample_size(10);
    group.bench_function("dqn_2000_steps_on_cb", |b| {
        b.iter(|| {
            std::hint::black_box(agents::train(&task, &scb, &mut Rng::new(5)).unwrap());
        })
    });
    group.finish();
}

criterion_group!(benches, bench_forward_backward, bench_env_step, bench_snes, bench_inner_loop);
criterion_main!(benches);
