#![allow(clippy::needless_range_loop)]

use num_complex::Complex64;
use occusense::belief::{
    access_decision, expected_reward, marginal_occupancy, oracle_reward, posterior_update, propagate_prior_exact,
    propagate_prior_hamming, realized_reward, reward_of_decision, AccessDecision, Belief, HammingFilter,
};
use occusense::channel::{observation_log_density, ObservationModel, ObservationVector};
use occusense::occupancy::{OccupancyState, ThetaVector, TransitionKernel};
use occusense::rng_from_seed;
use proptest::prelude::*;
use rand::Rng;

fn reference() -> ThetaVector {
    ThetaVector::new(0.1, 0.3, 0.3, 0.7, 0.3, 0.8).unwrap()
}

fn bit(s: usize, k: usize) -> bool {
    (s >> k) & 1 == 1
}

/// Transition probability walked factor by factor.
fn oracle_transition(from: usize, to: usize, width: usize, t: &ThetaVector) -> f64 {
    let mut p = 1.0;
    for k in 0..width {
        let busy = if k == 0 {
            if bit(from, 0) {
                t.q1
            } else {
                t.q0
            }
        } else {
            match (bit(to, k - 1), bit(from, k)) {
                (false, false) => t.p00,
                (false, true) => t.p01,
                (true, false) => t.p10,
                (true, true) => t.p11,
            }
        };
        p *= if bit(to, k) { busy } else { 1.0 - busy };
    }
    p
}

fn oracle_likelihood(s: usize, y: &ObservationVector, m: &ObservationModel) -> f64 {
    y.entries()
        .iter()
        .map(|&(k, v)| observation_log_density(v, bit(s, k), m.p_t, m.sigma_h2, m.sigma_v2).exp())
        .product()
}

fn random_weights(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 1e-3).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

fn random_theta(rng: &mut impl Rng) -> ThetaVector {
    let mut a = [0.0; 6];
    a.iter_mut().for_each(|x| *x = rng.random_range(0.02..0.98));
    ThetaVector::from_array(a).unwrap()
}

fn random_observation(width: usize, rng: &mut impl Rng) -> (Vec<usize>, ObservationVector) {
    let set: Vec<usize> = (0..width).filter(|_| rng.random_bool(0.5)).collect();
    let entries = set
        .iter()
        .map(|&k| {
            (
                k,
                Complex64::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)),
            )
        })
        .collect();
    (set, ObservationVector::new(entries).unwrap())
}

fn normalize(mut w: Vec<f64>) -> Vec<f64> {
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    w
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn empty_sensing_set_keeps_prior() {
    let prior = Belief::from_weights(random_weights(8, &mut rng_from_seed(1))).unwrap();
    let post = posterior_update(&prior, &[], &ObservationVector::empty(), &ObservationModel::default()).unwrap();
    assert!(max_diff(post.weights(), prior.weights()) < 1e-15);
}

#[test]
fn single_subcarrier_odds_are_the_likelihood_ratio() {
    let model = ObservationModel::default();
    let y = Complex64::new(0.8, -1.1);
    let obs = ObservationVector::new(vec![(0, y)]).unwrap();
    let post = posterior_update(&Belief::uniform(1).unwrap(), &[0], &obs, &model).unwrap();
    let ratio =
        (observation_log_density(y, true, 10.0, 1.0, 1.0) - observation_log_density(y, false, 10.0, 1.0, 1.0)).exp();
    let odds = post.weights()[1] / post.weights()[0];
    assert!((odds / ratio - 1.0).abs() < 1e-12);
}

#[test]
fn mismatched_sensing_set_is_rejected() {
    let obs = ObservationVector::new(vec![(1, Complex64::new(1.0, 0.0))]).unwrap();
    assert!(posterior_update(&Belief::uniform(2).unwrap(), &[0], &obs, &ObservationModel::default()).is_err());
}

#[test]
fn point_mass_propagates_to_its_transition_row() {
    let kernel = TransitionKernel::new(3, reference()).unwrap();
    let from = OccupancyState::from_bits(3, 0b101);
    let prior = propagate_prior_exact(&Belief::point_mass(&from).unwrap(), &kernel).unwrap();
    for to in 0..8 {
        assert!((prior.weights()[to] - oracle_transition(0b101, to, 3, &reference())).abs() < 1e-14);
    }
}

#[test]
fn uniform_posterior_two_subcarriers_matches_matrix_product() {
    let kernel = TransitionKernel::new(2, reference()).unwrap();
    let prior = propagate_prior_exact(&Belief::uniform(2).unwrap(), &kernel).unwrap();
    for to in 0..4 {
        let expected: f64 = (0..4)
            .map(|from| 0.25 * oracle_transition(from, to, 2, &reference()))
            .sum();
        assert!((prior.weights()[to] - expected).abs() < 1e-14);
    }
    assert!((prior.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

/// Filtering recursions against path enumeration over the whole horizon.
#[test]
fn filtering_matches_path_enumeration() {
    let model = ObservationModel::from_snr_db(3.0);
    let mut rng = rng_from_seed(42);
    for width in 1..=3usize {
        let n = 1usize << width;
        for tau in 1..=4usize {
            for _ in 0..5 {
                let theta = random_theta(&mut rng);
                let kernel = TransitionKernel::new(width, theta).unwrap();
                let init = random_weights(n, &mut rng);
                let obs: Vec<_> = (0..tau).map(|_| random_observation(width, &mut rng)).collect();

                let mut belief = Belief::from_weights(init.clone()).unwrap();
                for (t, (set, y)) in obs.iter().enumerate() {
                    if t > 0 {
                        belief = propagate_prior_exact(&belief, &kernel).unwrap();
                    }
                    belief = posterior_update(&belief, set, y, &model).unwrap();
                }

                let mut oracle = vec![0.0; n];
                for path in 0..n.pow(tau as u32) {
                    let states: Vec<usize> = (0..tau).map(|t| (path / n.pow(t as u32)) % n).collect();
                    let mut p = init[states[0]];
                    for t in 0..tau {
                        if t > 0 {
                            p *= oracle_transition(states[t - 1], states[t], width, &theta);
                        }
                        p *= oracle_likelihood(states[t], &obs[t].1, &model);
                    }
                    oracle[states[tau - 1]] += p;
                }
                let oracle = normalize(oracle);
                assert!(max_diff(belief.weights(), &oracle) < 1e-12, "width {width} tau {tau}");
            }
        }
    }
}

fn oracle_restricted(post: &[f64], width: usize, delta: usize, theta: &ThetaVector) -> Vec<f64> {
    let n = 1usize << width;
    let out = (0..n)
        .map(|to| {
            (0..n)
                .filter(|from| ((from ^ to) as u32).count_ones() as usize <= delta)
                .map(|from| oracle_transition(from, to, width, theta) * post[from])
                .sum()
        })
        .collect();
    normalize(out)
}

#[test]
fn hamming_filter_matches_restricted_sum() {
    let mut rng = rng_from_seed(7);
    for width in 1..=3usize {
        for delta in 1..=width {
            for _ in 0..20 {
                let theta = random_theta(&mut rng);
                let kernel = TransitionKernel::new(width, theta).unwrap();
                let filter = HammingFilter::new(width, delta).unwrap();
                let post = Belief::from_weights(random_weights(1 << width, &mut rng)).unwrap();
                let got = propagate_prior_hamming(&post, &kernel, &filter).unwrap();
                let want = oracle_restricted(post.weights(), width, delta, &theta);
                assert!(max_diff(got.weights(), &want) < 1e-12);
            }
        }
    }
}

#[test]
fn full_radius_equals_exact_propagation() {
    let mut rng = rng_from_seed(9);
    for width in 1..=6 {
        let kernel = TransitionKernel::new(width, random_theta(&mut rng)).unwrap();
        let post = Belief::from_weights(random_weights(1 << width, &mut rng)).unwrap();
        let exact = propagate_prior_exact(&post, &kernel).unwrap();
        let filtered = propagate_prior_hamming(&post, &kernel, &HammingFilter::new(width, width).unwrap()).unwrap();
        assert!(max_diff(exact.weights(), filtered.weights()) < 1e-12);
    }
}

#[test]
fn hamming_radius_outside_range_is_rejected() {
    assert!(HammingFilter::new(3, 0).is_err());
    assert!(HammingFilter::new(3, 4).is_err());
}

#[test]
fn filter_error_shrinks_with_radius() {
    let width = 6;
    let mut rng = rng_from_seed(13);
    let mut per_delta = vec![Vec::new(); width + 1];
    for _ in 0..25 {
        let kernel = TransitionKernel::new(width, random_theta(&mut rng)).unwrap();
        let post = Belief::from_weights(random_weights(1 << width, &mut rng)).unwrap();
        let exact = propagate_prior_exact(&post, &kernel).unwrap();
        for delta in 1..=width {
            let f = propagate_prior_hamming(&post, &kernel, &HammingFilter::new(width, delta).unwrap()).unwrap();
            per_delta[delta].push(f.total_variation(&exact));
        }
    }
    let medians: Vec<f64> = per_delta[1..]
        .iter_mut()
        .map(|v| {
            v.sort_by(f64::total_cmp);
            v[v.len() / 2]
        })
        .collect();
    for w in medians.windows(2) {
        assert!(w[1] <= w[0] + 1e-12, "{medians:?}");
    }
    assert!(medians[width - 1] < 1e-12);
}

#[test]
fn marginals_match_enumeration() {
    assert!(marginal_occupancy(&Belief::uniform(4).unwrap())
        .iter()
        .all(|m| (m - 0.5).abs() < 1e-15));
    let point = OccupancyState::from_bits(4, 0b1001);
    assert_eq!(
        marginal_occupancy(&Belief::point_mass(&point).unwrap()),
        vec![1.0, 0.0, 0.0, 1.0]
    );
    let w = random_weights(16, &mut rng_from_seed(3));
    let m = marginal_occupancy(&Belief::from_weights(w.clone()).unwrap());
    for (k, mk) in m.iter().enumerate() {
        let want: f64 = (0..16).filter(|&s| bit(s, k)).map(|s| w[s]).sum();
        assert!((mk - want).abs() < 1e-14);
    }
}

#[test]
fn access_rule_examples() {
    assert_eq!(access_decision(&[0.3, 0.6], 1.0).to_vec(), vec![true, false]);
    assert_eq!(access_decision(&[0.99, 1.0, 0.2], 0.0).count(), 3);
    assert_eq!(access_decision(&[1e-6, 0.3], 1e9).count(), 0);
    assert!(access_decision(&[0.5], 1.0).accesses(0));
    assert!((expected_reward(&[0.2, 0.6], 1.0) - 0.6).abs() < 1e-15);
    assert_eq!(expected_reward(&[0.0; 4], 2.0), 4.0);
    assert_eq!(expected_reward(&[1.0; 4], 0.5), 0.0);
}

/// Exhaustive maximisation of the expected reward over every access vector.
#[test]
fn access_rule_is_exhaustive_argmax() {
    let mut rng = rng_from_seed(99);
    for _ in 0..10_000 {
        let width = rng.random_range(1..=6usize);
        let lambda = if rng.random_bool(0.1) {
            0.0
        } else {
            rng.random_range(0.0..10.0)
        };
        let marginals: Vec<f64> = (0..width).map(|_| rng.random::<f64>()).collect();
        let best = (0..1u64 << width)
            .map(|b| reward_of_decision(&AccessDecision::from_bits(width, b), &marginals, lambda))
            .fold(f64::NEG_INFINITY, f64::max);
        let phi = access_decision(&marginals, lambda);
        let got = reward_of_decision(&phi, &marginals, lambda);
        assert!((got - best).abs() < 1e-12, "{marginals:?} {lambda}");
        assert!((expected_reward(&marginals, lambda) - got).abs() < 1e-12);
    }
}

#[test]
fn realized_reward_examples() {
    let truth = OccupancyState::from_bits(2, 0b10);
    assert_eq!(
        realized_reward(&AccessDecision::from_bits(2, 0b11), &truth, 1.0).unwrap(),
        0.0
    );
    assert_eq!(realized_reward(&AccessDecision::none(2), &truth, 1.0).unwrap(), 0.0);
    assert_eq!(
        realized_reward(&AccessDecision::from_bits(2, 0b01), &truth, 1.0).unwrap(),
        1.0
    );
    assert!(realized_reward(&AccessDecision::none(3), &truth, 1.0).is_err());
    assert_eq!(oracle_reward(&OccupancyState::idle(6), 1.0), 6.0);
    assert_eq!(oracle_reward(&OccupancyState::from_bits(6, 63), 1.0), 0.0);
}

#[test]
fn oracle_reward_is_exhaustive_max() {
    let mut rng = rng_from_seed(5);
    for _ in 0..500 {
        let width = rng.random_range(1..=6usize);
        let truth = OccupancyState::from_bits(width, rng.random_range(0..1u64 << width));
        let lambda = rng.random_range(0.0..5.0);
        let best = (0..1u64 << width)
            .map(|b| realized_reward(&AccessDecision::from_bits(width, b), &truth, lambda).unwrap())
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(oracle_reward(&truth, lambda), best);
    }
}

proptest! {
    #[test]
    fn update_and_propagation_stay_normalized(seed in any::<u64>(), width in 1usize..=5, steps in 1usize..20) {
        let mut rng = rng_from_seed(seed);
        let model = ObservationModel::default();
        let kernel = TransitionKernel::new(width, random_theta(&mut rng)).unwrap();
        let filter = HammingFilter::new(width, rng.random_range(1..=width)).unwrap();
        let mut belief = Belief::uniform(width).unwrap();
        for _ in 0..steps {
            let (set, y) = random_observation(width, &mut rng);
            belief = posterior_update(&belief, &set, &y, &model).unwrap();
            prop_assert!((belief.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            belief = propagate_prior_hamming(&belief, &kernel, &filter).unwrap();
            prop_assert!(belief.weights().iter().all(|w| *w >= 0.0));
            prop_assert!((belief.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn expected_reward_equals_reward_of_rule(marginals in prop::collection::vec(0.0f64..=1.0, 1..8), lambda in 0.0f64..20.0) {
        let phi = access_decision(&marginals, lambda);
        prop_assert!((expected_reward(&marginals, lambda) - reward_of_decision(&phi, &marginals, lambda)).abs() < 1e-12);
    }
}
