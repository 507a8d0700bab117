//! Acceptance suite, fast criteria: Lemma-1 exactness (1), the gradient
//! engine against finite differences (2), SNES sanity (3), and the CB
//! invariants (7). Each test prints one PASS line; a failed assertion is the
//! FAIL signal. The RL-sanity and meta-training criteria live in their own
//! test targets so they run serially.

use banditforge_core::analysis;
use banditforge_core::envs::{rollout, Action, Env, EnvId};
use banditforge_core::nn::{Activation, NetworkSpec};
use banditforge_core::oracle::{lemma1_sweep, CbVariant};
use banditforge_core::scb::{Scb, ScbParams, ScbSpec};
use banditforge_core::snes;
use banditforge_core::tape::{gradient, Id, Tape, TapeFloat};
use banditforge_core::Rng;

/// Criterion 1: 100 random tabular MDPs (<= 12 states, <= 5 actions, gamma in
/// {0.8, 0.9, 0.99}), all three constructions, greedy-in-CB value within
/// 1e-8 of V* on every MDP.
#[test]
fn criterion_1_lemma1_exactness() {
    let start = std::time::Instant::now();
    let variants = [CbVariant::QStar, CbVariant::NegDistance, CbVariant::Indicator];
    let report = lemma1_sweep(100, 12, 5, &variants, 1e-8, 20_240_817);
    assert_eq!(
        report.failures, 0,
        "Lemma-1 exactness failures: {:?}",
        report.failure_details
    );
    assert_eq!(report.passes, 300);
    assert!(start.elapsed().as_secs() < 60, "sweep exceeded the 1-minute budget");
    eprintln!(
        "ACCEPTANCE 1 PASS: lemma-1 exactness, 300/300 constructions within 1e-8 \
         (worst gap {:.2e}, {:.1}s)",
        report.worst_gap,
        start.elapsed().as_secs_f32()
    );
}

fn finite_diff<F: TapeFloat>(params: &[F], h: F, f: &dyn Fn(&[F]) -> F) -> Vec<F> {
    let mut g = Vec::with_capacity(params.len());
    let mut p = params.to_vec();
    for i in 0..params.len() {
        let orig = p[i];
        p[i] = orig + h;
        let up = f(&p);
        p[i] = orig - h;
        let down = f(&p);
        p[i] = orig;
        g.push((up - down) / (h + h));
    }
    g
}

fn rel_err<F: TapeFloat>(a: &[F], b: &[F]) -> f64 {
    let mut num = 0.0f64;
    let mut da = 0.0f64;
    let mut db = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x.to_f64().unwrap(), y.to_f64().unwrap());
        num += (x - y) * (x - y);
        da += x * x;
        db += y * y;
    }
    num.sqrt() / da.sqrt().max(db.sqrt()).max(1.0)
}

/// One random loss probe: an MLP forward pass composed with one of five loss
/// families built from the supported primitives.
fn probe_loss<F: TapeFloat>(
    family: usize,
    spec: &NetworkSpec,
    input: &[F],
    target: &[F],
    t: &mut Tape<F>,
    p: Id,
) -> Id {
    let x = t.constant(1, spec.input_dim, input.to_vec());
    let y = t.mlp(spec, p, x);
    match family % 5 {
        0 => {
            let tgt = t.constant(1, spec.output_dim, target.to_vec());
            let d = t.sub(y, tgt);
            let sq = t.square(d);
            t.mean_all(sq)
        }
        1 => {
            let ls = t.log_softmax(y);
            let mask: Vec<F> = (0..spec.output_dim)
                .map(|i| if i == 0 { F::one() } else { F::zero() })
                .collect();
            let m = t.constant(1, spec.output_dim, mask);
            let picked = t.mul(ls, m);
            let s = t.sum_all(picked);
            t.neg(s)
        }
        2 => {
            let tgt = t.constant(1, spec.output_dim, target.to_vec());
            let ls = t.constant(
                1,
                spec.output_dim,
                vec![F::from(-0.3).unwrap(); spec.output_dim],
            );
            let lp = t.gaussian_log_density(tgt, y, ls);
            let m = t.mean_all(lp);
            t.neg(m)
        }
        3 => {
            let sm = t.softmax(y);
            let lg = t.log(sm);
            let sq = t.square(lg);
            t.mean_all(sq)
        }
        _ => {
            let a = t.tanh(y);
            let b = t.scale(y, F::from(0.5).unwrap());
            let m = t.min(a, b);
            let s = t.sum_all(m);
            t.square(s)
        }
    }
}

fn effective_family<F: TapeFloat>(
    case: usize,
    spec: &NetworkSpec,
    params: &[F],
    input: &[F],
) -> usize {
    if case % 5 != 4 {
        return case % 5;
    }
    let y = banditforge_core::nn::forward_generic(spec, params, input).expect("probe forward");
    let safe = y
        .iter()
        .all(|&v| (v.tanh() - v * F::from(0.5).unwrap()).abs() > F::from(0.05).unwrap());
    if safe {
        4
    } else {
        0
    }
}

fn gradient_check<F: TapeFloat>(cases: usize, h: F, tol: f64, seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let mut worst = 0.0f64;
    for case in 0..cases {
        let input_dim = 1 + rng.index(4);
        let output_dim = 2 + rng.index(3);
        let hidden: Vec<usize> = (0..1 + rng.index(2)).map(|_| 1 + rng.index(6)).collect();
        let spec = NetworkSpec::new(input_dim, &hidden, output_dim, Activation::Tanh);
        let params: Vec<F> = (0..spec.param_count())
            .map(|_| F::from(rng.normal_f32() * 0.15).unwrap())
            .collect();
        let input: Vec<F> =
            (0..input_dim).map(|_| F::from(rng.normal_f32() * 0.4).unwrap()).collect();
        let target: Vec<F> =
            (0..output_dim).map(|_| F::from(rng.normal_f32() * 0.4).unwrap()).collect();

        // The min family has a kink at tanh(y) = 0.5 y where central
        // differences are invalid; such probes fall back to the smooth
        // squared-error family. Decided once from the unperturbed forward
        // pass so the probed function is fixed under perturbation.
        let family = effective_family(case, &spec, &params, &input);
        let analytic = gradient(&params, |t, p| {
            Ok(probe_loss(family, &spec, &input, &target, t, p))
        })
        .expect("probe gradients");
        let fd = finite_diff(&params, h, &|p: &[F]| {
            let mut t = Tape::new();
            let leaf = t.param(1, p.len(), p.to_vec());
            let loss = probe_loss(family, &spec, &input, &target, &mut t, leaf);
            t.scalar_value(loss)
        });
        let err = rel_err(&analytic, &fd);
        worst = worst.max(err);
        assert!(err <= tol, "case {case}: rel err {err:.3e} > {tol:.0e}");
    }
    worst
}

/// Criterion 2: 100 random network/loss probes match central finite
/// differences (step 1e-3) within relative error 1e-3 in 32-bit and 1e-6 in
/// the 64-bit verification mode.
#[test]
fn criterion_2_gradient_engine() {
    let start = std::time::Instant::now();
    let worst32 = gradient_check::<f32>(100, 1e-3, 1e-3, 811);
    let worst64 = gradient_check::<f64>(100, 1e-3, 1e-6, 812);
    assert!(start.elapsed().as_secs() < 60, "gradient check exceeded 1 minute");
    eprintln!(
        "ACCEPTANCE 2 PASS: gradient engine, 100 probes each; worst rel err \
         {worst32:.2e} (f32) / {worst64:.2e} (f64) ({:.1}s)",
        start.elapsed().as_secs_f32()
    );
}

/// Criterion 3: SNES drives a 10-d sphere from ||mu|| = 5*sqrt(10) to
/// ||mu|| < 0.1 within 1000 generations at population 32, and fitness
/// shaping is bit-exactly invariant to monotonic transforms.
#[test]
fn criterion_3_snes_sanity() {
    let start = std::time::Instant::now();
    let result = snes::optimize(
        |z, _| -z.0.iter().map(|v| v * v).sum::<f32>(),
        vec![5.0; 10],
        1.0,
        32,
        1000,
        &Rng::new(31),
    );
    let norm: f32 = result.state.mu.iter().map(|v| v * v).sum::<f32>().sqrt();
    assert!(norm < 0.1, "||mu|| = {norm} after 1000 generations");

    // shaping invariance: identical utilities and identical trajectories
    // under strictly increasing fitness transforms
    let root = Rng::new(77);
    let run = |transform: &dyn Fn(f32) -> f32| {
        let mut state = snes::SearchState::new(vec![0.3; 6], 0.5);
        for gen in 0..25 {
            let pop = snes::ask(&state, 16, &root.child(gen));
            let fitness: Vec<f32> = pop
                .members
                .iter()
                .map(|m| transform(-m.0.iter().map(|v| v * v).sum::<f32>()))
                .collect();
            let u = snes::shape_fitness(&fitness).unwrap();
            snes::tell(&mut state, &pop.noise, &u);
        }
        (state.mu, state.sigma)
    };
    let base = run(&|f| f);
    let affine = run(&|f| 250.0 * f + 13.0);
    let curved = run(&|f| (f * 0.01).exp());
    assert_eq!(base, affine, "affine transform changed the SNES trajectory");
    assert_eq!(base, curved, "exp transform changed the SNES trajectory");
    assert!(start.elapsed().as_secs() < 60, "SNES sanity exceeded 1 minute");
    eprintln!(
        "ACCEPTANCE 3 PASS: sphere converged to ||mu|| = {norm:.3e}; fitness shaping \
         bit-exact under monotonic transforms ({:.1}s)",
        start.elapsed().as_secs_f32()
    );
}

/// Criterion 7: CB invariants on a checkpoint: 10^4 episodes all have length
/// one with return equal to the immediate reward; the feature-importance
/// vector sums to 1; the optimal-action map is invariant under positive
/// affine rescaling of the reward.
#[test]
fn criterion_7_cb_invariants() {
    let start = std::time::Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cb.ckpt");
    let spec = ScbSpec::cb(EnvId::CartPoleV1);
    let mut rng = Rng::new(4242);
    let params = ScbParams::init_random(&spec, &mut rng);
    banditforge_core::checkpoint::ScbCheckpoint {
        spec: spec.clone(),
        params,
        generation: 0,
        seed: 4242,
        fitness: Default::default(),
        search: None,
    }
    .save(&path)
    .unwrap();
    let ckpt = banditforge_core::checkpoint::ScbCheckpoint::load(&path).unwrap();
    let scb = Scb::new(ckpt.spec, ckpt.params).unwrap();

    // 10^4 episodes: length exactly 1, return == immediate reward
    let root = Rng::new(99);
    for k in 0..10_000u64 {
        let mut episode_rng = root.child(k);
        let mut reward_rng = root.child(k);
        let mut steps = 0usize;
        let ret = rollout(
            &scb,
            &mut |_obs| {
                steps += 1;
                Action::Discrete((k % 2) as usize)
            },
            50,
            &mut episode_rng,
        );
        assert_eq!(steps, 1, "episode {k} did not have length 1");
        let s = scb.reset(&mut reward_rng);
        let (_, r) = scb.step(&s, &Action::Discrete((k % 2) as usize)).unwrap();
        assert_eq!(ret, r, "episode {k}: return differs from the immediate reward");
    }

    // importance sums to 1
    let report = analysis::feature_importance_default(&scb, &mut Rng::new(5)).unwrap();
    let total: f32 = report.importance.iter().sum();
    assert!((total - 1.0).abs() < 1e-6, "importance sums to {total}");

    // optimal-action map invariant under positive affine reward rescaling
    let grid = analysis::StateGrid::default_for(EnvId::CartPoleV1, 9);
    let base_map = analysis::optimal_action_map(&scb, &grid).unwrap();
    let mut rescaled = scb.params().clone();
    let n = rescaled.net_params.len();
    let out_w = spec.net.hidden[0];
    for v in rescaled.net_params.0[n - 1 - out_w..n - 1].iter_mut() {
        *v *= 2.5;
    }
    rescaled.net_params.0[n - 1] = rescaled.net_params.0[n - 1] * 2.5 - 7.0;
    let scb2 = Scb::new(spec, rescaled).unwrap();
    let scaled_map = analysis::optimal_action_map(&scb2, &grid).unwrap();
    for ((s1, a1), (s2, a2)) in base_map.iter().zip(&scaled_map) {
        assert_eq!(s1, s2);
        assert_eq!(a1, a2, "affine rescaling changed the argmax at {s1:?}");
    }

    assert!(start.elapsed().as_secs() < 60, "CB invariants exceeded 1 minute");
    eprintln!(
        "ACCEPTANCE 7 PASS: 10^4 unit-length episodes with return == reward; importance \
         sums to 1; argmax map affine-invariant ({:.1}s)",
        start.elapsed().as_secs_f32()
    );
}
