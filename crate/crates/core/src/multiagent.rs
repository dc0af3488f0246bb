//! Distributed operation of several cognitive radios.
//!
//! Nodes find neighbours by thresholding the expected RSSI, exchange ranked
//! ballots over a lossless (optionally lossy) round-based control channel,
//! and agree on one access order. During an episode the ensemble senses one
//! subcarrier per agent, optionally pools the observations, and claims idle
//! subcarriers in rank order.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::belief::{marginals_of, observation_terms, posterior_from_terms, realized_reward_bits, HammingFilter};
use crate::channel::{sense, ObservationModel, ObservationVector};
use crate::error::{Error, Result};
use crate::occupancy::{InitialDistribution, ThetaVector, TransitionKernel};
use crate::solver::{fragment_spectrum, policy_action_weights, solve_fragments, SolverConfig};
use crate::{derive_seed, rng_from_seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AgentId(pub u32);

impl std::fmt::Display for AgentId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Best-first ordering of agents without repeats.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RankedList {
    order: Vec<AgentId>,
}

impl RankedList {
    pub fn new(order: Vec<AgentId>) -> Result<Self> {
        let unique: BTreeSet<_> = order.iter().collect();
        if unique.len() != order.len() {
            return Err(Error::invalid("ranked list repeats an agent"));
        }
        Ok(RankedList { order })
    }

    pub fn order(&self) -> &[AgentId] {
        &self.order
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// 1-based position of `id`.
    pub fn position(&self, id: AgentId) -> Option<usize> {
        self.order.iter().position(|&a| a == id).map(|p| p + 1)
    }

    pub fn members(&self) -> BTreeSet<AgentId> {
        self.order.iter().copied().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MessageKind {
    DiscoveryBeacon,
    RssiRankedList,
    AggregatedRankedList,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ControlMessage {
    pub kind: MessageKind,
    pub sender: AgentId,
    pub payload: Option<RankedList>,
    pub round: usize,
}

impl ControlMessage {
    pub fn beacon(sender: AgentId, round: usize) -> Self {
        ControlMessage {
            kind: MessageKind::DiscoveryBeacon,
            sender,
            payload: None,
            round,
        }
    }

    pub fn list(kind: MessageKind, sender: AgentId, list: RankedList, round: usize) -> Result<Self> {
        if kind == MessageKind::DiscoveryBeacon {
            return Err(Error::invalid("beacons carry no ranked list"));
        }
        Ok(ControlMessage {
            kind,
            sender,
            payload: Some(list),
            round,
        })
    }
}

/// Peers at or above `threshold_db`, strongest first; equal RSSIs are
/// ordered by a seeded shuffle.
pub fn discover_neighbors<R: Rng + ?Sized>(
    self_id: AgentId,
    rssi_map: &BTreeMap<AgentId, f64>,
    threshold_db: f64,
    rng: &mut R,
) -> Vec<AgentId> {
    let mut peers: Vec<(AgentId, f64)> = rssi_map
        .iter()
        .filter(|(&id, &r)| id != self_id && r >= threshold_db)
        .map(|(&id, &r)| (id, r))
        .collect();
    peers.shuffle(rng);
    peers.sort_by(|a, b| b.1.total_cmp(&a.1));
    peers.into_iter().map(|(id, _)| id).collect()
}

/// Borda points for a 1-based position.
pub fn ballot_points(position: usize, list_len: usize) -> usize {
    assert!(
        (1..=list_len).contains(&position),
        "position {position} outside 1..={list_len}"
    );
    list_len - position
}

/// Borda aggregation over the members of `self_list`.
///
/// Members absent from a ballot score nothing on it; agents that are not
/// members are ignored. Equal totals are ordered by a seeded shuffle.
pub fn aggregate_ballots<R: Rng + ?Sized>(received: &[RankedList], self_list: &RankedList, rng: &mut R) -> RankedList {
    let members = self_list.members();
    let mut points: BTreeMap<AgentId, usize> = members.iter().map(|&m| (m, 0)).collect();
    for ballot in std::iter::once(self_list).chain(received) {
        for (i, id) in ballot.order().iter().enumerate() {
            if let Some(p) = points.get_mut(id) {
                *p += ballot_points(i + 1, ballot.len());
            }
        }
    }
    let mut scored: Vec<(AgentId, usize)> = points.into_iter().collect();
    scored.shuffle(rng);
    scored.sort_by_key(|e| std::cmp::Reverse(e.1));
    RankedList {
        order: scored.into_iter().map(|(id, _)| id).collect(),
    }
}

/// Per-node protocol state.
#[derive(Debug, Clone)]
pub struct NodeState {
    pub id: AgentId,
    rssi: BTreeMap<AgentId, f64>,
    threshold_db: f64,
    known: BTreeSet<AgentId>,
    aggregated: Option<RankedList>,
    stable_rounds: usize,
    consensus: Option<RankedList>,
    tie_seed: u64,
}

impl NodeState {
    /// `tie_seed` is shared by the ensemble so that equal Borda totals break
    /// the same way at every node.
    pub fn new(id: AgentId, rssi: BTreeMap<AgentId, f64>, threshold_db: f64, tie_seed: u64) -> Self {
        NodeState {
            id,
            rssi,
            threshold_db,
            known: BTreeSet::new(),
            aggregated: None,
            stable_rounds: 0,
            consensus: None,
            tie_seed,
        }
    }

    pub fn known(&self) -> &BTreeSet<AgentId> {
        &self.known
    }

    pub fn consensus(&self) -> Option<&RankedList> {
        self.consensus.as_ref()
    }

    /// Own ballot: self first, then known neighbours by RSSI.
    pub fn rssi_list(&self, round: usize) -> RankedList {
        let known: BTreeMap<AgentId, f64> = self
            .known
            .iter()
            .map(|id| (*id, self.rssi.get(id).copied().unwrap_or(f64::NEG_INFINITY)))
            .collect();
        let mut rng = rng_from_seed(derive_seed(self.tie_seed, &[1, self.id.0 as u64, round as u64]));
        let mut order = vec![self.id];
        order.extend(discover_neighbors(self.id, &known, f64::NEG_INFINITY, &mut rng));
        RankedList { order }
    }
}

/// One synchronous protocol round for one node.
///
/// Any frame from a peer whose RSSI clears the threshold makes it known.
/// Below quorum the node only beacons. On first reaching quorum it sends its
/// RSSI ballot; afterwards it aggregates its own list with every list heard
/// this round and sends the result. Consensus is declared once every known
/// neighbour has echoed the node's aggregated list for `stability_rounds`
/// consecutive rounds.
pub fn consensus_step(
    node: &mut NodeState,
    inbox: &[ControlMessage],
    quorum: usize,
    stability_rounds: usize,
    round: usize,
) -> (Vec<ControlMessage>, Option<RankedList>) {
    let before = node.known.len();
    for m in inbox {
        if m.sender != node.id && node.rssi.get(&m.sender).is_some_and(|&r| r >= node.threshold_db) {
            node.known.insert(m.sender);
        }
    }
    if node.known.len() < quorum.max(1) {
        return (vec![ControlMessage::beacon(node.id, round)], None);
    }
    let membership_changed = node.known.len() != before;
    let own = node.rssi_list(round);
    let Some(current) = node.aggregated.clone() else {
        node.aggregated = Some(own.clone());
        let msg = ControlMessage::list(MessageKind::RssiRankedList, node.id, own, round).expect("list kind");
        return (vec![msg], None);
    };
    let heard: Vec<&ControlMessage> = inbox
        .iter()
        .filter(|m| node.known.contains(&m.sender) && m.payload.is_some())
        .collect();
    let echoes = heard
        .iter()
        .filter(|m| m.kind == MessageKind::AggregatedRankedList && m.payload.as_ref() == Some(&current))
        .count();
    let ballots: Vec<RankedList> = heard.iter().filter_map(|m| m.payload.clone()).collect();
    let base = if current.members() == own.members() {
        current.clone()
    } else {
        own
    };
    let mut rng = rng_from_seed(derive_seed(node.tie_seed, &[2, round as u64]));
    let next = aggregate_ballots(&ballots, &base, &mut rng);
    if !membership_changed && echoes == node.known.len() && next == current {
        node.stable_rounds += 1;
    } else {
        node.stable_rounds = 0;
    }
    node.aggregated = Some(next.clone());
    if node.stable_rounds >= stability_rounds && node.consensus.is_none() {
        node.consensus = Some(next.clone());
    }
    let msg = ControlMessage::list(MessageKind::AggregatedRankedList, node.id, next, round).expect("list kind");
    (vec![msg], node.consensus.clone())
}

fn default_threshold() -> f64 {
    22.0
}
fn default_stability() -> usize {
    3
}
fn default_round_cap() -> usize {
    200
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolConfig {
    #[serde(default = "default_threshold")]
    pub threshold_db: f64,
    /// Known peers needed before balloting; `None` means `ceil(n / 2)`.
    #[serde(default)]
    pub quorum: Option<usize>,
    #[serde(default = "default_stability")]
    pub stability_rounds: usize,
    #[serde(default = "default_round_cap")]
    pub round_cap: usize,
    #[serde(default)]
    pub drop_probability: f64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            threshold_db: default_threshold(),
            quorum: None,
            stability_rounds: default_stability(),
            round_cap: default_round_cap(),
            drop_probability: 0.0,
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stability_rounds == 0 {
            return Err(Error::config("multi_agent.stability_rounds", "must be at least 1"));
        }
        if self.quorum == Some(0) {
            return Err(Error::config("multi_agent.quorum", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.drop_probability) {
            return Err(Error::config("multi_agent.drop_probability", "must lie in [0, 1)"));
        }
        if !self.threshold_db.is_finite() {
            return Err(Error::config("multi_agent.threshold_db", "must be finite"));
        }
        Ok(())
    }

    pub fn quorum_for(&self, n: usize) -> usize {
        self.quorum.unwrap_or(n.div_ceil(2)).min(n.saturating_sub(1)).max(1)
    }
}

/// Pairwise expected RSSI in dB; `rssi[i][j]` is what node `i` hears from `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    rssi: Vec<Vec<f64>>,
}

impl Topology {
    pub fn new(rssi: Vec<Vec<f64>>) -> Result<Self> {
        let n = rssi.len();
        if n == 0 || rssi.iter().any(|r| r.len() != n) {
            return Err(Error::invalid("RSSI matrix must be square and nonempty"));
        }
        Ok(Topology { rssi })
    }

    /// Symmetric matrix with entries uniform in `[lo, hi)`.
    pub fn random_symmetric<R: Rng + ?Sized>(n: usize, lo: f64, hi: f64, rng: &mut R) -> Self {
        let mut rssi = vec![vec![f64::NEG_INFINITY; n]; n];
        for i in 0..n {
            for j in i + 1..n {
                let r = rng.random_range(lo..hi);
                rssi[i][j] = r;
                rssi[j][i] = r;
            }
        }
        Topology { rssi }
    }

    pub fn len(&self) -> usize {
        self.rssi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rssi.is_empty()
    }

    pub fn rssi_map(&self, i: usize) -> BTreeMap<AgentId, f64> {
        (0..self.len())
            .filter(|&j| j != i)
            .map(|j| (AgentId(j as u32), self.rssi[i][j]))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusOutcome {
    /// Per node, the agreed list if it declared consensus.
    pub lists: Vec<Option<RankedList>>,
    /// Rounds until every node declared consensus, or the cap.
    pub rounds: usize,
    pub converged: bool,
    pub ballot_messages: usize,
}

impl ConsensusOutcome {
    /// The common list when every node agrees.
    pub fn agreed(&self) -> Option<&RankedList> {
        let first = self.lists.first()?.as_ref()?;
        self.lists.iter().all(|l| l.as_ref() == Some(first)).then_some(first)
    }
}

/// Runs the protocol in synchronous rounds. Messages sent in round `r` are
/// delivered in round `r + 1`, ordered by sender id.
pub fn run_consensus(topology: &Topology, config: &ProtocolConfig, seed: u64) -> Result<ConsensusOutcome> {
    config.validate()?;
    let n = topology.len();
    if n == 1 {
        return Ok(ConsensusOutcome {
            lists: vec![Some(RankedList {
                order: vec![AgentId(0)],
            })],
            rounds: 0,
            converged: true,
            ballot_messages: 0,
        });
    }
    let quorum = config.quorum_for(n);
    let tie_seed = derive_seed(seed, &[0x7E]);
    let mut nodes: Vec<NodeState> = (0..n)
        .map(|i| NodeState::new(AgentId(i as u32), topology.rssi_map(i), config.threshold_db, tie_seed))
        .collect();
    let mut drop_rng = rng_from_seed(derive_seed(seed, &[0xD0]));
    let mut in_flight: Vec<ControlMessage> = Vec::new();
    let mut ballot_messages = 0;
    let mut rounds = config.round_cap;
    let mut converged = false;
    for round in 0..config.round_cap {
        let mut outgoing = Vec::new();
        for node in nodes.iter_mut() {
            let (out, _) = consensus_step(node, &in_flight, quorum, config.stability_rounds, round);
            outgoing.extend(out);
        }
        ballot_messages += outgoing.iter().filter(|m| m.payload.is_some()).count();
        if config.drop_probability > 0.0 {
            outgoing.retain(|_| drop_rng.random::<f64>() >= config.drop_probability);
        }
        outgoing.sort_by_key(|m| m.sender);
        in_flight = outgoing;
        if nodes.iter().all(|n| n.consensus.is_some()) {
            rounds = round + 1;
            converged = true;
            break;
        }
    }
    Ok(ConsensusOutcome {
        lists: nodes.into_iter().map(|n| n.consensus).collect(),
        rounds,
        converged,
        ballot_messages,
    })
}

/// Rank-ordered draft: agents pick in rank order, each taking its most
/// preferred unclaimed subcarrier; the draft repeats until nobody can pick.
/// Agents missing from `rank` pick after it in id order.
pub fn allocate_access(rank: &RankedList, intents: &BTreeMap<AgentId, Vec<usize>>) -> BTreeMap<AgentId, Vec<usize>> {
    let mut order: Vec<AgentId> = rank.order().to_vec();
    order.extend(intents.keys().filter(|a| rank.position(**a).is_none()));
    let mut claimed = BTreeSet::new();
    let mut cursor: BTreeMap<AgentId, usize> = BTreeMap::new();
    let mut out: BTreeMap<AgentId, Vec<usize>> = intents.keys().map(|&a| (a, Vec::new())).collect();
    loop {
        let mut progressed = false;
        for a in &order {
            let Some(prefs) = intents.get(a) else { continue };
            let c = cursor.entry(*a).or_insert(0);
            while *c < prefs.len() && claimed.contains(&prefs[*c]) {
                *c += 1;
            }
            if *c < prefs.len() {
                claimed.insert(prefs[*c]);
                out.get_mut(a).expect("seeded").push(prefs[*c]);
                *c += 1;
                progressed = true;
            }
        }
        if !progressed {
            return out;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Cooperation {
    /// Observations are pooled into one shared belief.
    #[default]
    Cooperative,
    /// Each agent filters only its own observations.
    Independent,
}

/// Inputs of a distributed episode.
#[derive(Debug, Clone)]
pub struct EpisodeSpec {
    pub theta: ThetaVector,
    pub k_total: usize,
    pub k_prime: usize,
    pub agents: usize,
    /// Subcarriers each agent senses per slot.
    pub per_agent_budget: usize,
    pub model: ObservationModel,
    pub solver: SolverConfig,
    pub protocol: ProtocolConfig,
    pub topology: Topology,
    pub horizon: usize,
    pub init: InitialDistribution,
    /// Independent occupancy bands; each band evolves as its own chain.
    pub bands: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRow {
    pub slot: usize,
    pub agent: AgentId,
    pub sensed: Vec<usize>,
    pub accessed: Vec<usize>,
    pub truth_bits: Vec<bool>,
    pub utility: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub rows: Vec<EpisodeRow>,
    /// Ensemble utility per slot.
    pub utility_trace: Vec<f64>,
    pub consensus: ConsensusOutcome,
    pub rank: RankedList,
    pub distinct_sensed: Vec<usize>,
}

impl EpisodeResult {
    pub fn mean_utility(&self) -> f64 {
        if self.utility_trace.is_empty() {
            return 0.0;
        }
        self.utility_trace.iter().sum::<f64>() / self.utility_trace.len() as f64
    }

    /// Episode log: `slot,agent_id,sensed_subcarrier,access_subcarrier,truth_bit,utility`.
    /// List-valued cells are `;`-separated and 0-based.
    pub fn write_log<W: Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "slot",
            "agent_id",
            "sensed_subcarrier",
            "access_subcarrier",
            "truth_bit",
            "utility",
        ])?;
        for r in &self.rows {
            let bits: Vec<usize> = r.truth_bits.iter().map(|&b| b as usize).collect();
            w.write_record([
                r.slot.to_string(),
                r.agent.to_string(),
                crate::solver::join_indices(&r.sensed),
                crate::solver::join_indices(&r.accessed),
                crate::solver::join_indices(&bits),
                crate::scenario::fmt_num(r.utility),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_log(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_log(file).map_err(|e| Error::csv(path, e))
    }
}

/// Belief over the whole spectrum, kept per fragment.
#[derive(Debug, Clone)]
struct FragmentedBelief {
    parts: Vec<Vec<f64>>,
}

impl FragmentedBelief {
    fn uniform(fragments: usize, width: usize) -> Self {
        let n = 1usize << width;
        FragmentedBelief {
            parts: vec![vec![1.0 / n as f64; n]; fragments],
        }
    }
}

/// Simulates a distributed episode.
///
/// Agree on a rank order first. Then per slot:
/// - the ensemble sensing action is the solved fragment policy's action at
///   the acting belief, its subcarriers dealt round-robin to agents in rank
///   order;
/// - observations update the pooled belief (cooperative) or each agent's own;
/// - each agent lists its estimated-idle subcarriers, least likely busy
///   first, and the rank-ordered draft assigns access;
/// - every access earns 1 if idle and `-lambda` if busy.
pub fn run_distributed_episode<R: Rng + ?Sized>(
    spec: &EpisodeSpec,
    cooperation: Cooperation,
    rng: &mut R,
) -> Result<EpisodeResult> {
    spec.protocol.validate()?;
    if spec.agents == 0 || spec.per_agent_budget == 0 {
        return Err(Error::invalid(
            "an episode needs at least one agent sensing at least one subcarrier",
        ));
    }
    if spec.topology.len() != spec.agents {
        return Err(Error::invalid(format!(
            "topology has {} nodes for {} agents",
            spec.topology.len(),
            spec.agents
        )));
    }
    let kappa = (spec.agents * spec.per_agent_budget).min(spec.k_total);
    let fragments = fragment_spectrum(spec.k_total, spec.k_prime, kappa)?;
    let width = spec.k_prime;
    let solved = solve_fragments(&fragments, &spec.theta, &spec.solver, &spec.model)?;
    let kernel = TransitionKernel::new(width, spec.theta)?;
    let filter = HammingFilter::new(width, spec.solver.delta_for(width))?;
    let consensus = run_consensus(&spec.topology, &spec.protocol, rng.random())?;
    let rank = consensus.agreed().cloned().unwrap_or_else(|| RankedList {
        order: (0..spec.agents as u32).map(AgentId).collect(),
    });
    let lambda = spec.solver.lambda;
    let threshold = 1.0 / (1.0 + lambda);
    let n_fr = fragments.len();
    let holders = match cooperation {
        Cooperation::Cooperative => 1,
        Cooperation::Independent => spec.agents,
    };
    let mut beliefs = vec![FragmentedBelief::uniform(n_fr, width); holders];
    let mut state = crate::scenario::sample_banded_state(spec.k_total, spec.bands, spec.init, rng)?;
    let mut rows = Vec::with_capacity(spec.horizon * spec.agents);
    let mut utility_trace = Vec::with_capacity(spec.horizon);
    let mut distinct_sensed = Vec::with_capacity(spec.horizon);
    let mut scratch = Vec::new();
    let mut next = vec![0.0; 1 << width];
    for slot in 0..spec.horizon {
        // Sensing assignment, agent index -> global subcarriers.
        let mut assigned: Vec<Vec<usize>> = vec![Vec::new(); spec.agents];
        for (pos, agent) in rank.order().iter().enumerate() {
            let holder = match cooperation {
                Cooperation::Cooperative => 0,
                Cooperation::Independent => agent.0 as usize,
            };
            let action = ensemble_action(&beliefs[holder], &solved, &fragments);
            if action.is_empty() {
                continue;
            }
            for j in 0..spec.per_agent_budget {
                let k = action[(pos * spec.per_agent_budget + j) % action.len()];
                if !assigned[agent.0 as usize].contains(&k) {
                    assigned[agent.0 as usize].push(k);
                }
            }
        }
        let mut sensed_union: BTreeSet<usize> = BTreeSet::new();
        let mut observations: Vec<Vec<(usize, num_complex::Complex64)>> = Vec::with_capacity(spec.agents);
        for set in &assigned {
            let mut sorted = set.clone();
            sorted.sort_unstable();
            let y = sense(&state, &sorted, &spec.model, rng)?;
            sensed_union.extend(sorted.iter().copied());
            observations.push(y.entries().to_vec());
        }
        distinct_sensed.push(sensed_union.len());
        // Posterior per holder and fragment.
        let mut marginals: Vec<Vec<f64>> = Vec::with_capacity(holders);
        let mut posteriors: Vec<FragmentedBelief> = Vec::with_capacity(holders);
        for h in 0..holders {
            let mut post = beliefs[h].clone();
            let mut marg = Vec::with_capacity(spec.k_total);
            for (f, frag) in fragments.iter().enumerate() {
                let mut entries: Vec<(usize, num_complex::Complex64)> = Vec::new();
                let sources: Vec<usize> = match cooperation {
                    Cooperation::Cooperative => (0..spec.agents).collect(),
                    Cooperation::Independent => vec![h],
                };
                for a in sources {
                    for &(k, y) in &observations[a] {
                        if k >= frag.start && k < frag.start + width {
                            entries.push((k - frag.start, y));
                        }
                    }
                }
                // Pooled samples of one subcarrier multiply their likelihoods.
                let mut terms = Vec::new();
                for (k, y) in entries {
                    let obs = ObservationVector::new(vec![(k, y)])?;
                    terms.extend(observation_terms(&obs, &spec.model));
                }
                post.parts[f] = posterior_from_terms(&beliefs[h].parts[f], width, &terms, &mut scratch)?;
                marg.extend(marginals_of(width, &post.parts[f]));
            }
            marginals.push(marg);
            posteriors.push(post);
        }
        // Intents and rank-ordered allocation.
        let mut intents = BTreeMap::new();
        for a in 0..spec.agents {
            let m = &marginals[if holders == 1 { 0 } else { a }];
            let mut idle: Vec<usize> = (0..spec.k_total).filter(|&k| m[k] <= threshold).collect();
            idle.sort_by(|&x, &y| m[x].total_cmp(&m[y]).then(x.cmp(&y)));
            intents.insert(AgentId(a as u32), idle);
        }
        let allocation = allocate_access(&rank, &intents);
        let mut slot_utility = 0.0;
        for a in 0..spec.agents {
            let id = AgentId(a as u32);
            let mut accessed = allocation.get(&id).cloned().unwrap_or_default();
            accessed.sort_unstable();
            let phi = accessed.iter().fold(0u64, |acc, &k| acc | (1 << k));
            let utility = realized_reward_bits(phi, state.bits(), lambda);
            slot_utility += utility;
            let mut sensed = assigned[a].clone();
            sensed.sort_unstable();
            rows.push(EpisodeRow {
                slot,
                agent: id,
                sensed,
                truth_bits: accessed.iter().map(|&k| state.get(k)).collect(),
                accessed,
                utility,
            });
        }
        utility_trace.push(slot_utility);
        // Prior for the next slot.
        for (h, post) in posteriors.into_iter().enumerate() {
            for f in 0..n_fr {
                filter.propagate_into(&post.parts[f], &kernel, &mut next);
                let total: f64 = next.iter().sum();
                beliefs[h].parts[f] = next.iter().map(|v| v / total).collect();
            }
        }
        state = crate::scenario::next_banded_state(&state, &spec.theta, spec.bands, rng)?;
    }
    Ok(EpisodeResult {
        rows,
        utility_trace,
        consensus,
        rank,
        distinct_sensed,
    })
}

/// Global sensing set of the fragment policies at `belief`.
fn ensemble_action(
    belief: &FragmentedBelief,
    solved: &[crate::solver::SolveResult],
    fragments: &[crate::solver::Fragment],
) -> Vec<usize> {
    let mut out = Vec::new();
    for (f, frag) in fragments.iter().enumerate() {
        let action = policy_action_weights(&belief.parts[f], &solved[f].policy);
        out.extend(action.iter().map(|k| k + frag.start));
    }
    out
}
