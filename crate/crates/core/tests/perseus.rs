use occusense::belief::{
    access_decision, marginal_occupancy, posterior_update, propagate_prior_exact, realized_reward, Belief,
};
use occusense::channel::{sense, ObservationModel};
use occusense::estimator::random_sensing_set;
use occusense::occupancy::{sample_next_state, OccupancyState, ThetaVector, TransitionKernel};
use occusense::solver::{
    backup, explore_beliefs, fragment_spectrum, perseus_iteration, policy_action, solve_fragment, FragmentProblem,
    PolicyEntry, PolicySet, PulledPolicy, SensingActionSpace, SolverConfig,
};
use occusense::{derive_seed, rng_from_seed, SimRng};
use rand::Rng;

fn reference() -> ThetaVector {
    ThetaVector::new(0.1, 0.3, 0.3, 0.7, 0.3, 0.8).unwrap()
}

fn random_belief(width: usize, rng: &mut impl Rng) -> Belief {
    Belief::normalized((0..1 << width).map(|_| rng.random::<f64>() + 0.01).collect()).unwrap()
}

fn random_policy(width: usize, entries: usize, rng: &mut impl Rng) -> PolicySet {
    let entries = (0..entries)
        .map(|_| PolicyEntry {
            alpha: (0..1 << width).map(|_| rng.random_range(-1.0..3.0)).collect(),
            action: vec![rng.random_range(0..width)],
        })
        .collect();
    PolicySet::new(width, entries).unwrap()
}

#[test]
fn fragment_examples() {
    let f = fragment_spectrum(18, 6, 6).unwrap();
    assert_eq!(f.len(), 3);
    assert!(f.iter().all(|x| x.width == 6 && x.budget == 2));
    assert_eq!(f.iter().map(|x| x.start).collect::<Vec<_>>(), vec![0, 6, 12]);
    let f = fragment_spectrum(12, 6, 4).unwrap();
    assert_eq!((f.len(), f[0].budget), (2, 2));
    let f = fragment_spectrum(5, 5, 3).unwrap();
    assert_eq!((f.len(), f[0].budget), (1, 3));
    assert!(fragment_spectrum(18, 5, 6).is_err());
    assert!(fragment_spectrum(18, 6, 4).is_err());
}

#[test]
fn action_space_is_every_subset() {
    for (w, b, n) in [(6, 2, 15), (3, 1, 3), (4, 4, 1), (5, 3, 10)] {
        let space = SensingActionSpace::new(w, b).unwrap();
        assert_eq!(space.len(), n);
        for a in space.actions() {
            assert_eq!(a.len(), b);
            assert!(a.windows(2).all(|p| p[0] < p[1]) && a.iter().all(|&k| k < w));
        }
    }
}

#[test]
fn single_belief_exploration_is_the_uniform_belief() {
    let config = SolverConfig {
        u_beliefs: 1,
        ..Default::default()
    };
    let b = explore_beliefs(
        &reference(),
        3,
        1,
        &config,
        &ObservationModel::default(),
        &mut rng_from_seed(1),
    )
    .unwrap();
    assert_eq!(b, vec![Belief::uniform(3).unwrap()]);
}

/// Step-by-step replay of the exploration walk with the public filter.
#[test]
fn exploration_replays_the_filter() {
    let model = ObservationModel::default();
    let (width, budget) = (4, 2);
    let config = SolverConfig {
        u_beliefs: 20,
        ..Default::default()
    };
    let explored = explore_beliefs(&reference(), width, budget, &config, &model, &mut rng_from_seed(6)).unwrap();

    let kernel = TransitionKernel::new(width, reference()).unwrap();
    let mut rng = rng_from_seed(6);
    let mut belief = Belief::uniform(width).unwrap();
    let mut state = OccupancyState::from_bits(width, rng.random_range(0..1u64 << width));
    let mut kept = vec![belief.clone()];
    while kept.len() < explored.len() {
        let set = random_sensing_set(width, budget, &mut rng);
        let y = sense(&state, &set, &model, &mut rng).unwrap();
        state = sample_next_state(&state, &reference(), &mut rng);
        belief = propagate_prior_exact(&posterior_update(&belief, &set, &y, &model).unwrap(), &kernel).unwrap();
        if kept.iter().all(|b| b.max_norm_distance(&belief) >= 1e-6) {
            kept.push(belief.clone());
        }
    }
    assert_eq!(explored.len(), 20);
    for (a, b) in explored.iter().zip(&kept) {
        assert!(a.max_norm_distance(b) < 1e-12);
        assert!((a.weights().iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

/// Expected backup value for a two-subcarrier fragment sensing one
/// subcarrier, integrating the received energy numerically.
fn quadrature_backup(belief: &Belief, policy: &PolicySet, theta: &ThetaVector, config: &SolverConfig) -> f64 {
    let model = ObservationModel::default();
    let kernel = TransitionKernel::new(2, *theta).unwrap();
    let pulled: Vec<Vec<f64>> = policy.entries().iter().map(|e| kernel.pull_back(&e.alpha)).collect();
    let beta = belief.weights();
    let variance = |busy: bool| model.variance(busy);
    let mut best = f64::NEG_INFINITY;
    for k in 0..2 {
        let mut value = 0.0;
        for (s, &w) in beta.iter().enumerate() {
            let v_s = variance((s >> k) & 1 == 1);
            // Energy e ~ Exp(mean v_s); substitute e = -v_s ln(1 - x) over x in (0, 1).
            let n = 200_000;
            let mut acc = 0.0;
            for i in 0..n {
                let x = (i as f64 + 0.5) / n as f64;
                let e = -v_s * (1.0 - x).ln();
                let post: Vec<f64> = (0..4)
                    .map(|q| {
                        let vq = variance((q >> k) & 1 == 1);
                        beta[q] * (-e / vq).exp() / vq
                    })
                    .collect();
                let z: f64 = post.iter().sum();
                let post: Vec<f64> = post.iter().map(|p| p / z).collect();
                let marg = [post[1] + post[3], post[2] + post[3]];
                let phi = access_decision(&marg, config.lambda);
                let reward = realized_reward(&phi, &OccupancyState::from_bits(2, s as u64), config.lambda).unwrap();
                let next = kernel.push_forward(&post);
                let chosen = policy.best_entry(&next).0;
                acc += reward + config.gamma * pulled[chosen][s];
            }
            value += w * acc / n as f64;
        }
        best = best.max(value);
    }
    best
}

#[test]
fn backup_matches_quadrature() {
    let theta = reference();
    let config = SolverConfig {
        n_mc: 10_000,
        ..Default::default()
    };
    let model = ObservationModel::default();
    let problem = FragmentProblem::new(&theta, 2, 1, &config, &model).unwrap();
    let mut rng = rng_from_seed(31);
    for _ in 0..3 {
        let belief = random_belief(2, &mut rng);
        let policy = random_policy(2, 3, &mut rng);
        let pulled = PulledPolicy::new(&policy, problem.kernel());
        let b = backup(&belief, &pulled, &problem, &mut rng).unwrap();
        let oracle = quadrature_backup(&belief, &policy, &theta, &config);
        assert!(
            (b.value - oracle).abs() <= 0.01 * oracle.abs(),
            "{} vs {oracle}",
            b.value
        );
        assert!((b.value - belief.dot(&b.alpha)).abs() < 1e-9);
    }
}

#[test]
fn zero_discount_backup_is_immediate_reward() {
    let model = ObservationModel::default();
    let config = SolverConfig {
        gamma: 1e-300,
        n_mc: 2000,
        ..Default::default()
    };
    let problem = FragmentProblem::new(&reference(), 2, 1, &config, &model).unwrap();
    let mut rng = rng_from_seed(2);
    let belief = random_belief(2, &mut rng);
    let zero = PulledPolicy::new(&PolicySet::initial(2), problem.kernel());
    let big = PulledPolicy::new(&random_policy(2, 4, &mut rng), problem.kernel());
    let a = backup(&belief, &zero, &problem, &mut rng_from_seed(9)).unwrap();
    let b = backup(&belief, &big, &problem, &mut rng_from_seed(9)).unwrap();
    assert!((a.value - b.value).abs() < 1e-12);
}

#[test]
fn backup_spread_shrinks_with_draws() {
    let model = ObservationModel::default();
    let mut rng = rng_from_seed(40);
    let belief = random_belief(3, &mut rng);
    let policy = random_policy(3, 3, &mut rng);
    let spread = |n_mc: usize| {
        let config = SolverConfig {
            n_mc,
            ..Default::default()
        };
        let problem = FragmentProblem::new(&reference(), 3, 1, &config, &model).unwrap();
        let pulled = PulledPolicy::new(&policy, problem.kernel());
        let v: Vec<f64> = (0..60)
            .map(|s| {
                backup(&belief, &pulled, &problem, &mut rng_from_seed(1000 + s))
                    .unwrap()
                    .value
            })
            .collect();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64
    };
    let (v10, v100, v1000) = (spread(10), spread(100), spread(1000));
    assert!(v10 > 3.0 * v100 && v100 > 3.0 * v1000, "{v10} {v100} {v1000}");
}

#[test]
fn iterations_never_lower_values() {
    let model = ObservationModel::default();
    for run in 0..50u64 {
        let mut rng = rng_from_seed(run);
        let width = rng.random_range(1..=3usize);
        let budget = rng.random_range(1..=width);
        let config = SolverConfig {
            u_beliefs: rng.random_range(1..=12),
            n_mc: 16,
            lambda: rng.random_range(0.0..3.0),
            ..Default::default()
        };
        let problem = FragmentProblem::new(&reference(), width, budget, &config, &model).unwrap();
        let beliefs = explore_beliefs(&reference(), width, budget, &config, &model, &mut rng).unwrap();
        let mut policy = PolicySet::initial(width);
        let mut values: Vec<f64> = beliefs.iter().map(|b| policy.value(b)).collect();
        for _ in 0..5 {
            let out = perseus_iteration(&beliefs, &policy, &values, &problem, run, &mut rng).unwrap();
            assert!(out.backups >= 1 && out.backups <= beliefs.len());
            if beliefs.len() == 1 {
                assert_eq!(out.backups, 1);
            }
            for (new, old) in out.values.iter().zip(&values) {
                assert!(*new >= old - 1e-9);
            }
            for (b, v) in beliefs.iter().zip(&out.values) {
                assert!((out.policy.value(b) - v).abs() < 1e-9);
            }
            policy = out.policy;
            values = out.values;
        }
    }
}

#[test]
fn solver_trace_is_monotone_and_deterministic() {
    let model = ObservationModel::default();
    let config = SolverConfig {
        u_beliefs: 32,
        n_mc: 32,
        seed: 5,
        ..Default::default()
    };
    let a = solve_fragment(&reference(), 3, 1, &config, &model).unwrap();
    let b = solve_fragment(&reference(), 3, 1, &config, &model).unwrap();
    assert_eq!(a.policy, b.policy);
    assert!(a.converged);
    for w in a.trace.windows(2) {
        assert!(w[1].mean_value >= w[0].mean_value - 1e-9);
    }
    assert!(a.trace.last().unwrap().max_change <= config.epsilon);
}

#[test]
fn dominated_hyperplane_keeps_the_action() {
    let mut rng = rng_from_seed(17);
    for _ in 0..1000 {
        let width = rng.random_range(1..=4usize);
        let policy = random_policy(width, rng.random_range(1..5), &mut rng);
        let belief = random_belief(width, &mut rng);
        let action = policy_action(&belief, &policy).to_vec();
        let base = &policy.entries()[rng.random_range(0..policy.len())];
        let dominated = PolicyEntry {
            alpha: base.alpha.iter().map(|a| a - rng.random_range(0.0..1.0)).collect(),
            action: vec![width - 1],
        };
        let mut entries = policy.entries().to_vec();
        entries.insert(rng.random_range(0..=entries.len()), dominated);
        let extended = PolicySet::new(width, entries).unwrap();
        assert_eq!(policy_action(&belief, &extended), action.as_slice());
    }
    let single = PolicySet::new(
        2,
        vec![PolicyEntry {
            alpha: vec![0.0; 4],
            action: vec![1],
        }],
    )
    .unwrap();
    assert_eq!(policy_action(&Belief::uniform(2).unwrap(), &single), &[1]);
}

/// Mean realized reward of one fragment run with the given sensing rule.
fn simulate(
    width: usize,
    budget: usize,
    slots: usize,
    seed: u64,
    mut choose: impl FnMut(&Belief, &mut SimRng) -> Vec<usize>,
) -> f64 {
    let theta = reference();
    let model = ObservationModel::default();
    let kernel = TransitionKernel::new(width, theta).unwrap();
    let mut world = rng_from_seed(derive_seed(seed, &[1]));
    let mut picks = rng_from_seed(derive_seed(seed, &[2]));
    let mut state = OccupancyState::from_bits(width, world.random_range(0..1u64 << width));
    let mut belief = Belief::uniform(width).unwrap();
    let mut total = 0.0;
    for _ in 0..slots {
        let set = choose(&belief, &mut picks);
        assert!(set.len() <= budget);
        let y = sense(&state, &set, &model, &mut world).unwrap();
        let post = posterior_update(&belief, &set, &y, &model).unwrap();
        let phi = access_decision(&marginal_occupancy(&post), 1.0);
        total += realized_reward(&phi, &state, 1.0).unwrap();
        belief = propagate_prior_exact(&post, &kernel).unwrap();
        state = sample_next_state(&state, &theta, &mut world);
    }
    total / slots as f64
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    0.5 * (v[(n - 1) / 2] + v[n / 2])
}

#[test]
fn solved_policy_beats_random_sensing() {
    let model = ObservationModel::default();
    let (mut solved, mut random) = (Vec::new(), Vec::new());
    for seed in 0..20u64 {
        let config = SolverConfig {
            u_beliefs: 16,
            seed,
            ..Default::default()
        };
        let policy = solve_fragment(&reference(), 3, 1, &config, &model).unwrap().policy;
        let s = simulate(3, 1, 10_000, seed, |b, _| policy_action(b, &policy).to_vec());
        let r = simulate(3, 1, 10_000, seed, |_, rng| random_sensing_set(3, 1, rng));
        solved.push(s);
        random.push(r);
    }
    assert!(
        median(solved.clone()) > median(random.clone()),
        "{solved:?} vs {random:?}"
    );
}

#[test]
fn sensing_everything_makes_the_action_vacuous() {
    let model = ObservationModel::default();
    let config = SolverConfig {
        u_beliefs: 16,
        ..Default::default()
    };
    let policy = solve_fragment(&reference(), 2, 2, &config, &model).unwrap().policy;
    let s = simulate(2, 2, 5000, 3, |b, _| policy_action(b, &policy).to_vec());
    let g = simulate(2, 2, 5000, 3, |_, _| vec![0, 1]);
    assert_eq!(s, g);
}

#[test]
fn identical_fragments_get_identical_policies() {
    let model = ObservationModel::default();
    let fragments = fragment_spectrum(6, 3, 2).unwrap();
    let config = SolverConfig {
        u_beliefs: 16,
        n_mc: 16,
        ..Default::default()
    };
    let solved = occusense::solver::solve_fragments(&fragments, &reference(), &config, &model).unwrap();
    assert_eq!(solved[0].policy, solved[1].policy);
    let alone = solve_fragment(&reference(), 3, 1, &config, &model).unwrap();
    assert_eq!(alone.policy, solved[0].policy);
}
