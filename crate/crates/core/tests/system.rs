use proptest::prelude::*;
use rlpi_core::envs::{nonlinear_toy_step, LqtEnv, NonlinearToy};
use rlpi_core::rng::stream;
use rlpi_core::system::{
    collect_buffer, env_step, exploration_action, uncertainty_bound, ActionBounds, ActionVector, Disturbance,
    DomainBox, EnvMode, Environment, Exosystem, Exploration, ModelPlant, NoiseSpec, Plant, Policy, ReferenceState,
    SystemState, UncertaintySpec,
};

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn lqt_plant(episode: usize, seed: u64) -> ModelPlant<rlpi_core::envs::LinearDynamics> {
    let env = LqtEnv::validation();
    ModelPlant::new(
        env.environment(),
        Exosystem::Constant,
        ActionBounds::symmetric(1, 3.0),
        DomainBox { x_lo: vec![-1.0; 2], x_hi: vec![1.0; 2], r_lo: vec![-1.0], r_hi: vec![1.0] },
        Some(episode),
        stream(seed, 0),
    )
}

proptest! {
    #[test]
    fn nominal_steps_are_bitwise_repeatable(x in prop::collection::vec(-5.0f64..5.0, 2), a in -3.0f64..3.0) {
        let env = LqtEnv::validation().environment();
        let s = SystemState::new(x.clone());
        let u = ActionVector::new(vec![a]);
        let first = env_step(&env, &s, &u).unwrap();
        for _ in 0..5 {
            prop_assert_eq!(&env_step(&env, &s, &u).unwrap(), &first);
        }
        // independent evaluation of A x + B a
        let expect = [0.9 * x[0] + 0.2 * x[1], 0.7 * x[1] + a];
        prop_assert_eq!(first.0, expect.to_vec());

        let toy = Environment::nominal(NonlinearToy);
        let t = env_step(&toy, &SystemState::new(vec![x[0]]), &u).unwrap();
        prop_assert_eq!(t.0[0], nonlinear_toy_step(x[0], a));
        prop_assert!(t.0[0].abs() <= 10.0);
    }

    #[test]
    fn realizations_stay_within_their_bound(weight in 0.0f64..100.0, fraction in 0.0f64..=1.0, seed in any::<u64>()) {
        use rand::Rng;
        let gain = fraction * weight.sqrt();
        let mut rng = stream(seed, 0);
        for d in [Disturbance::Aligned { fraction }, Disturbance::Linear { gain }, Disturbance::Zero] {
            let spec = UncertaintySpec::quadratic(weight).with_realization(d);
            for _ in 0..10_000 {
                let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-10.0..10.0)).collect();
                let dn = norm(&spec.disturbance(&x).unwrap());
                let bound = uncertainty_bound(&spec, &SystemState::new(x.clone())).unwrap();
                prop_assert!(bound >= 0.0);
                prop_assert!(dn <= bound * (1.0 + 1e-12) + 1e-300, "{dn} > {bound}");
            }
            prop_assert_eq!(spec.bound_sq(&[0.0; 3]).unwrap(), 0.0);
        }
    }

    #[test]
    fn oversized_realizations_are_rejected(weight in 0.01f64..100.0, excess in 1.01f64..3.0, seed in any::<u64>()) {
        let spec = UncertaintySpec::quadratic(weight).with_realization(Disturbance::Linear { gain: excess * weight.sqrt() });
        prop_assert!(spec.verify_realization(2, 1.0, 100, &mut stream(seed, 0)).is_err());
    }

    #[test]
    fn buffers_have_exact_size_and_store_the_current_policy(size in 5usize..200, episode in 1usize..20, seed in any::<u64>()) {
        let mut plant = lqt_plant(episode, seed);
        let policy = |x: &SystemState, r: &ReferenceState| ActionVector::new(vec![-0.3 * x[0] + 0.1 * x[1] + 0.5 * r[0]]);
        let other = |x: &SystemState, _: &ReferenceState| ActionVector::new(vec![0.2 * x[1]]);
        let mut rng = stream(seed, 1);
        let mut source = Exploration {
            iteration: 1,
            current: &policy,
            previous: Some(&other),
            noise: NoiseSpec { lo: -0.1, hi: 0.1 },
            bounds: ActionBounds::symmetric(1, 3.0),
            rng: &mut rng,
        };
        let buf = collect_buffer(&mut plant, &mut source, &policy, size, 1, 1).unwrap();
        prop_assert_eq!(buf.len(), size);
        for t in &buf.entries {
            prop_assert_eq!(&t.a_next_policy, &policy.action(&t.x_next, &t.r_next));
            // no transition straddles a reset
            let nominal = [0.9 * t.x[0] + 0.2 * t.x[1], 0.7 * t.x[1] + t.a[0]];
            prop_assert_eq!(t.x_next.0.clone(), nominal.to_vec());
            prop_assert_eq!(&t.r_next, &t.r);
            prop_assert!(t.a[0].abs() <= 3.0);
        }
    }

    #[test]
    fn exploration_is_average_plus_noise_then_clamped(cur in -1.0f64..1.0, prev in -1.0f64..1.0, n in -0.1f64..0.1, i in 0usize..5) {
        let bounds = ActionBounds::new(vec![-0.5], vec![0.5]).unwrap();
        let a = exploration_action(i, &ActionVector::new(vec![cur]), Some(&ActionVector::new(vec![prev])), &[n], &bounds);
        let raw = if i == 0 { cur + n } else { 0.5 * (cur + prev) + n };
        prop_assert_eq!(a[0], raw.clamp(-0.5, 0.5));
    }
}

#[test]
fn exploration_worked_examples() {
    let b = ActionBounds::new(vec![0.0], vec![5.0]).unwrap();
    let a0 = exploration_action(0, &ActionVector::new(vec![0.01]), None, &[4e-4], &b);
    assert!((a0[0] - 0.0104).abs() < 1e-15);
    let a2 = exploration_action(2, &ActionVector::new(vec![0.02]), Some(&ActionVector::new(vec![0.01])), &[3e-4], &b);
    assert!((a2[0] - 0.0153).abs() < 1e-15);
}

#[test]
fn harness_noise_bounds_and_mean() {
    let spec = NoiseSpec::default();
    let mut rng = stream(3, 0);
    let draws: Vec<f64> = (0..100_000).map(|_| spec.draw(&mut rng)).collect();
    assert!(draws.iter().all(|&v| (3e-4..=6e-4).contains(&v)));
    let mean = draws.iter().sum::<f64>() / draws.len() as f64;
    let mid = 4.5e-4;
    assert!((mean - mid).abs() <= 0.02 * mid, "mean {mean}");
}

#[test]
fn uncertain_mode_adds_the_realization() {
    let dynamics = LqtEnv::validation().dynamics;
    let spec = UncertaintySpec::quadratic(0.25).with_realization(Disturbance::Linear { gain: 0.1 });
    let env = Environment { dynamics, mode: EnvMode::Uncertain(spec) };
    let x = SystemState::new(vec![1.0, -2.0]);
    let next = env_step(&env, &x, &ActionVector::new(vec![0.5])).unwrap();
    assert_eq!(next.0, vec![0.9 - 0.4 + 0.1, -1.4 + 0.5 - 0.2]);
}

#[test]
fn buffer_csv_has_the_columnar_header() {
    let mut plant = lqt_plant(4, 0);
    let zero = |_: &SystemState, _: &ReferenceState| ActionVector::new(vec![0.0]);
    let mut rng = stream(0, 1);
    let mut source = Exploration {
        iteration: 0,
        current: &zero,
        previous: None,
        noise: NoiseSpec { lo: 0.0, hi: 1.0 },
        bounds: ActionBounds::symmetric(1, 3.0),
        rng: &mut rng,
    };
    let buf = collect_buffer(&mut plant, &mut source, &zero, 6, 1, 0).unwrap();
    let mut out = Vec::new();
    buf.write_csv(&mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("x1,x2,r1,a1,x1',x2',r1',apol1"));
    assert_eq!(lines.count(), 6);
    assert!(plant.observe().0.is_finite());
}
