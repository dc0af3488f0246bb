use std::collections::{BTreeMap, BTreeSet};

use occusense::channel::ObservationModel;
use occusense::multiagent::{
    aggregate_ballots, allocate_access, ballot_points, consensus_step, discover_neighbors, run_consensus,
    run_distributed_episode, AgentId, ControlMessage, Cooperation, EpisodeSpec, MessageKind, NodeState, ProtocolConfig,
    RankedList, Topology,
};
use occusense::occupancy::{InitialDistribution, ThetaVector};
use occusense::rng_from_seed;
use occusense::solver::SolverConfig;
use proptest::prelude::*;
use rand::Rng;

fn ids(v: &[u32]) -> Vec<AgentId> {
    v.iter().map(|&i| AgentId(i)).collect()
}

fn list(v: &[u32]) -> RankedList {
    RankedList::new(ids(v)).unwrap()
}

fn rssi(pairs: &[(u32, f64)]) -> BTreeMap<AgentId, f64> {
    pairs.iter().map(|&(i, r)| (AgentId(i), r)).collect()
}

#[test]
fn discovery_threshold() {
    let mut rng = rng_from_seed(1);
    let map = rssi(&[(1, 25.0), (2, 20.0), (3, 40.0), (4, 22.0)]);
    assert_eq!(discover_neighbors(AgentId(0), &map, 22.0, &mut rng), ids(&[3, 1, 4]));
    assert!(discover_neighbors(AgentId(0), &BTreeMap::new(), 22.0, &mut rng).is_empty());
    assert_eq!(discover_neighbors(AgentId(0), &map, 0.0, &mut rng), ids(&[3, 1, 4, 2]));
}

#[test]
fn equal_rssi_ties_are_seeded() {
    let map = rssi(&[(1, 30.0), (2, 30.0), (3, 30.0), (4, 30.0)]);
    let a = discover_neighbors(AgentId(0), &map, 22.0, &mut rng_from_seed(5));
    let b = discover_neighbors(AgentId(0), &map, 22.0, &mut rng_from_seed(5));
    assert_eq!(a, b);
    let orders: BTreeSet<Vec<AgentId>> = (0..50)
        .map(|s| discover_neighbors(AgentId(0), &map, 22.0, &mut rng_from_seed(s)))
        .collect();
    assert!(orders.len() > 1);
}

#[test]
fn borda_points() {
    assert_eq!(ballot_points(1, 5), 4);
    assert_eq!(ballot_points(5, 5), 0);
    for len in 1..10 {
        assert_eq!(
            (1..=len).map(|p| ballot_points(p, len)).sum::<usize>(),
            len * (len - 1) / 2
        );
    }
}

#[test]
fn ballot_aggregation_examples() {
    let mut rng = rng_from_seed(2);
    let own = list(&[2, 0, 1, 3]);
    assert_eq!(aggregate_ballots(&[], &own, &mut rng), own);
    assert_eq!(aggregate_ballots(std::slice::from_ref(&own), &own, &mut rng), own);
    // 0: 2+3=5, 1: 1+2=3, 2: 3+0=3, 3: 0+1=1 ... 1 and 2 tie.
    let other = list(&[0, 1, 3, 2]);
    let agg = aggregate_ballots(&[other], &own, &mut rng);
    assert_eq!(agg.order()[0], AgentId(0));
    assert_eq!(agg.order()[3], AgentId(3));
    assert!(RankedList::new(ids(&[1, 1])).is_err());
}

#[test]
fn three_nodes_agree_on_the_rssi_order() {
    // Node 1 hears both peers best, node 2 worst.
    let topo = Topology::new(vec![
        vec![f64::NEG_INFINITY, 30.0, 25.0],
        vec![30.0, f64::NEG_INFINITY, 28.0],
        vec![25.0, 28.0, f64::NEG_INFINITY],
    ])
    .unwrap();
    // Ballots [0,1,2], [1,0,2], [2,1,0] give Borda totals 3, 4, 2.
    let out = run_consensus(&topo, &ProtocolConfig::default(), 9).unwrap();
    assert!(out.converged && out.rounds <= 10, "{out:?}");
    assert_eq!(out.agreed().unwrap(), &list(&[1, 0, 2]));
}

#[test]
fn below_quorum_only_beacons() {
    let topo = Topology::new(vec![vec![0.0, 10.0, 5.0], vec![10.0, 0.0, 8.0], vec![5.0, 8.0, 0.0]]).unwrap();
    let out = run_consensus(&topo, &ProtocolConfig::default(), 1).unwrap();
    assert_eq!(out.ballot_messages, 0);
    assert!(!out.converged);

    let mut node = NodeState::new(AgentId(0), rssi(&[(1, 30.0), (2, 30.0)]), 22.0, 3);
    let (out, agreed) = consensus_step(&mut node, &[], 2, 3, 0);
    assert!(agreed.is_none());
    assert!(out
        .iter()
        .all(|m| m.kind == MessageKind::DiscoveryBeacon && m.payload.is_none()));
}

#[test]
fn control_message_payload_matches_kind() {
    assert!(ControlMessage::beacon(AgentId(0), 0).payload.is_none());
    assert!(ControlMessage::list(MessageKind::DiscoveryBeacon, AgentId(0), list(&[0]), 0).is_err());
    assert!(
        ControlMessage::list(MessageKind::AggregatedRankedList, AgentId(0), list(&[0]), 0)
            .unwrap()
            .payload
            .is_some()
    );
}

fn check_episode(seed: u64) {
    let mut rng = rng_from_seed(seed);
    let n = rng.random_range(3..=12usize);
    let topo = Topology::random_symmetric(n, 22.0, 60.0, &mut rng);
    let config = ProtocolConfig::default();
    let out = run_consensus(&topo, &config, seed).unwrap();
    assert!(out.converged, "seed {seed}, {n} nodes");
    assert!(
        out.rounds <= config.stability_rounds + n,
        "seed {seed}: {} rounds for {n} nodes",
        out.rounds
    );
    let agreed = out.agreed().expect("agreement");
    let everyone: BTreeSet<AgentId> = (0..n as u32).map(AgentId).collect();
    for l in out.lists.iter().flatten() {
        assert_eq!(l.len(), n);
        assert_eq!(l.members(), everyone);
        assert_eq!(l, agreed);
    }
    // Neighbour symmetry.
    for i in 0..n {
        let ni = discover_neighbors(AgentId(i as u32), &topo.rssi_map(i), config.threshold_db, &mut rng);
        for j in 0..n {
            let nj = discover_neighbors(AgentId(j as u32), &topo.rssi_map(j), config.threshold_db, &mut rng);
            assert_eq!(ni.contains(&AgentId(j as u32)), nj.contains(&AgentId(i as u32)));
        }
    }
}

#[test]
fn hundred_episodes_agree_validly_and_terminate() {
    for seed in 0..100 {
        check_episode(seed);
    }
}

#[test]
fn allocation_examples() {
    let rank = list(&[0, 1]);
    let intents: BTreeMap<_, _> = [(AgentId(0), vec![3, 1]), (AgentId(1), vec![3, 5])].into();
    let out = allocate_access(&rank, &intents);
    assert_eq!(out[&AgentId(0)][0], 3);
    assert_eq!(out[&AgentId(1)][0], 5);
    let disjoint: BTreeMap<_, _> = [(AgentId(0), vec![1]), (AgentId(1), vec![2])].into();
    for r in [list(&[0, 1]), list(&[1, 0])] {
        let out = allocate_access(&r, &disjoint);
        assert_eq!(out[&AgentId(0)], vec![1]);
        assert_eq!(out[&AgentId(1)], vec![2]);
    }
    let empty: BTreeMap<_, _> = [(AgentId(0), vec![]), (AgentId(1), vec![4])].into();
    assert!(allocate_access(&rank, &empty)[&AgentId(0)].is_empty());
}

fn spec(agents: usize, k_total: usize, k_prime: usize, horizon: usize, seed: u64) -> EpisodeSpec {
    let mut rng = rng_from_seed(seed);
    EpisodeSpec {
        theta: ThetaVector::new(0.1, 0.3, 0.3, 0.7, 0.3, 0.8).unwrap(),
        k_total,
        k_prime,
        agents,
        per_agent_budget: 1,
        model: ObservationModel::default(),
        solver: SolverConfig {
            u_beliefs: 24,
            n_mc: 16,
            seed,
            ..Default::default()
        },
        protocol: ProtocolConfig::default(),
        topology: Topology::random_symmetric(agents, 25.0, 60.0, &mut rng),
        horizon,
        init: InitialDistribution::Uniform,
        bands: 1,
    }
}

#[test]
fn twelve_single_budget_agents_sense_at_most_twelve() {
    let s = spec(12, 18, 6, 200, 4);
    let r = run_distributed_episode(&s, Cooperation::Cooperative, &mut rng_from_seed(4)).unwrap();
    assert_eq!(r.utility_trace.len(), 200);
    assert!(r.distinct_sensed.iter().all(|&d| d <= 12));
    assert!(r.consensus.converged);
    for slot in 0..200 {
        let mut taken = BTreeSet::new();
        for row in r.rows.iter().filter(|row| row.slot == slot) {
            assert!(
                row.accessed.iter().all(|k| taken.insert(*k)),
                "slot {slot} double access"
            );
        }
    }
}

#[test]
fn single_agent_episode() {
    let s = spec(1, 6, 6, 300, 2);
    let r = run_distributed_episode(&s, Cooperation::Cooperative, &mut rng_from_seed(2)).unwrap();
    assert_eq!(r.rank, list(&[0]));
    assert!(r.distinct_sensed.iter().all(|&d| d <= 1));
    let ind = run_distributed_episode(&s, Cooperation::Independent, &mut rng_from_seed(2)).unwrap();
    assert_eq!(r.utility_trace, ind.utility_trace);
}

#[test]
fn pooling_observations_helps_on_average() {
    let (mut coop, mut solo) = (0.0, 0.0);
    for seed in 0..20 {
        let s = spec(4, 12, 6, 400, 100 + seed);
        coop += run_distributed_episode(&s, Cooperation::Cooperative, &mut rng_from_seed(seed))
            .unwrap()
            .mean_utility();
        solo += run_distributed_episode(&s, Cooperation::Independent, &mut rng_from_seed(seed))
            .unwrap()
            .mean_utility();
    }
    assert!(coop >= solo, "{coop} < {solo}");
}

proptest! {
    #[test]
    fn allocation_is_conflict_free(
        prefs in prop::collection::vec(prop::collection::vec(0usize..10, 0..6), 1..8),
        seed in any::<u64>(),
    ) {
        let n = prefs.len();
        let mut order: Vec<u32> = (0..n as u32).collect();
        let mut rng = rng_from_seed(seed);
        for i in (1..n).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let intents: BTreeMap<_, _> = prefs
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let mut seen = BTreeSet::new();
                (AgentId(i as u32), p.iter().copied().filter(|k| seen.insert(*k)).collect::<Vec<_>>())
            })
            .collect();
        let out = allocate_access(&list(&order), &intents);
        let mut claimed = BTreeSet::new();
        for (a, got) in &out {
            for k in got {
                prop_assert!(claimed.insert(*k));
                prop_assert!(intents[a].contains(k));
            }
        }
    }
}
