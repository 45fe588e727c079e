//! The SoftFair policy: softmax selection over per-arm advantage logits with
//! episodic value updates.
//!
//! Each round the policy scores every arm by the advantage of pulling it,
//!
//! ```text
//! lambda_i = Q_i(s_i, 1) - Q_i(s_i, 0)
//! Q_i(s, a) = P^a_{s,1} * (1 + gamma * V[i][t+1][1]) + P^a_{s,0} * gamma * V[i][t+1][0]
//! ```
//!
//! turns the logits into selection weights `softmax(c * lambda)`, samples `k`
//! arms without replacement, and then updates the visited value cells with the
//! action-marginal expectation
//!
//! ```text
//! V[i][t][s_i] <- (1 - Pr(a_i=1|s)) * Q_i(s_i, 0) + Pr(a_i=1|s) * Q_i(s_i, 1)
//! ```
//!
//! where `Pr(a_i=1|s)` is the arm's inclusion probability under the
//! without-replacement scheme. The multiplier `c` trades fairness against
//! reward: small `c` approaches uniform random pulls, large `c` approaches a
//! deterministic top-k rule.
//!
//! Value cells for rounds and states not visited this episode keep their
//! previous-episode contents. Lookups only ever touch row `t+1`, which the
//! current episode has not written yet (rounds run forward), so updates never
//! feed back within an episode.

use crate::model::{
    transition_all, ActionVector, EpisodeTrace, RmabInstance, StateVector, TransitionModel,
    ValueTable,
};
use crate::rng::{substream, StreamKind};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use thiserror::Error;

/// Selection weights are floored at this value before sampling so arms whose
/// softmax weight underflowed to zero (possible only at extreme `c`) cannot
/// leave the k-set under-filled.
pub const WEIGHT_FLOOR: f64 = 1e-300;

/// Exact inclusion enumeration is refused above this many ordered selections.
pub const EXACT_PERMUTATION_CAP: u128 = 1_000_000;

/// Monte Carlo sample count used when [`InclusionMode::Auto`] falls back.
pub const AUTO_MC_SAMPLES: usize = 10_000;

/// Per-arm advantage logits for one round, `lambda[i] = Q_i(s_i,1) - Q_i(s_i,0)`.
pub type LogitVector = Vec<f64>;

/// How the k-set is chosen each round.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SelectRule {
    /// Sample k arms without replacement with weights `softmax(c * lambda)`.
    Softmax,
    /// Deterministic top-k by logit; value updates still mix with softmax
    /// inclusion probabilities computed at `update_c`.
    GreedyTopK { update_c: f64 },
}

/// Which table the round's Q lookups read from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpdateMode {
    /// Read and write the same table. Lookups only touch row t+1, which the
    /// episode has not reached yet, so reads still see last episode's values.
    InPlace,
    /// Read from a snapshot taken at episode start, write to the live table.
    /// Coincides with [`UpdateMode::InPlace`] for the forward round order; the
    /// mode exists to make that property checkable.
    DoubleBuffered,
}

/// How inclusion probabilities are computed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InclusionMode {
    /// Exact when `k <= 3` and `n <= 12`, otherwise Monte Carlo with
    /// [`AUTO_MC_SAMPLES`] samples.
    Auto,
    /// Enumerate every ordered k-selection (refused above
    /// [`EXACT_PERMUTATION_CAP`]).
    Exact,
    /// Average indicator draws over independent sampled k-sets.
    MonteCarlo { samples: usize },
}

#[derive(Debug, Error, PartialEq)]
pub enum SoftFairError {
    #[error(
        "exact inclusion probabilities need {permutations} ordered selections, \
         above the cap {cap}; use Monte Carlo"
    )]
    ExactTooLarge { permutations: u128, cap: u128 },
}

/// Policy knobs. `c` is the softmax multiplier used for selection (and for
/// the value update, unless a greedy rule overrides it).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SoftFairConfig {
    pub c: f64,
    pub select_rule: SelectRule,
    pub update_mode: UpdateMode,
    pub inclusion: InclusionMode,
}

impl SoftFairConfig {
    pub fn new(c: f64) -> Self {
        SoftFairConfig {
            c,
            select_rule: SelectRule::Softmax,
            update_mode: UpdateMode::InPlace,
            inclusion: InclusionMode::Auto,
        }
    }
}

/// Mutable policy state carried across the episodes of one simulation.
#[derive(Clone, Debug)]
pub struct SoftFairState {
    pub config: SoftFairConfig,
    values: ValueTable,
    snapshot: Option<ValueTable>,
    episode: usize,
}

impl SoftFairState {
    /// Fresh state with an all-zero value table (first-episode logits then
    /// equal the myopic gaps).
    pub fn new(instance: &RmabInstance, config: SoftFairConfig) -> Self {
        SoftFairState {
            config,
            values: ValueTable::new(instance.n(), instance.horizon),
            snapshot: None,
            episode: 0,
        }
    }

    /// The live value table.
    pub fn values(&self) -> &ValueTable {
        &self.values
    }

    /// Episodes completed so far.
    pub fn episode(&self) -> usize {
        self.episode
    }

    /// The table Q lookups read from this round: the episode-start snapshot in
    /// double-buffered mode, the live table otherwise.
    pub fn read_table(&self) -> &ValueTable {
        self.snapshot.as_ref().unwrap_or(&self.values)
    }

    fn begin_episode(&mut self) {
        if self.config.update_mode == UpdateMode::DoubleBuffered {
            self.snapshot = Some(self.values.clone());
        }
    }

    fn end_episode(&mut self) {
        self.snapshot = None;
        self.episode += 1;
    }
}

/// One-step action value of a single arm against the value table:
/// `P^a_{s,1} * (1 + gamma * V[arm][t+1][1]) + P^a_{s,0} * gamma * V[arm][t+1][0]`.
///
/// The immediate term uses the expected reward `P^a_{s,1}` (the realized
/// reward is the next-state indicator); this is a planning quantity, not an
/// estimate. Requires `t < T` so row `t+1` exists; the row for the epoch
/// after the last is zero by construction.
pub fn q_value(
    model: &TransitionModel,
    values: &ValueTable,
    arm: usize,
    t: usize,
    s: usize,
    a: usize,
    gamma: f64,
) -> f64 {
    let v1 = values.get(arm, t + 1, 1);
    let v0 = values.get(arm, t + 1, 0);
    model.p[a][s][1] * (1.0 + gamma * v1) + model.p[a][s][0] * (gamma * v0)
}

/// Advantage logits for every arm in the current joint state.
pub fn logits(
    instance: &RmabInstance,
    values: &ValueTable,
    state: &[u8],
    t: usize,
) -> LogitVector {
    instance
        .arms
        .iter()
        .enumerate()
        .map(|(i, arm)| {
            let s = state[i] as usize;
            q_value(arm, values, i, t, s, 1, instance.gamma)
                - q_value(arm, values, i, t, s, 0, instance.gamma)
        })
        .collect()
}

/// Selection weights `softmax(c * lambda)`, stabilized by subtracting the
/// largest logit before exponentiation.
pub fn select_probs(lambda: &[f64], c: f64) -> Vec<f64> {
    let top = lambda.iter().fold(f64::NEG_INFINITY, |acc, &l| acc.max(l));
    let mut probs: Vec<f64> = lambda.iter().map(|&l| (c * (l - top)).exp()).collect();
    let total: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= total;
    }
    probs
}

/// Deterministic top-k by logit, ties toward the lower arm index.
pub fn top_k_by_logit(lambda: &[f64], k: usize) -> ActionVector {
    let mut order: Vec<usize> = (0..lambda.len()).collect();
    order.sort_by(|&a, &b| lambda[b].total_cmp(&lambda[a]).then(a.cmp(&b)));
    order.truncate(k);
    ActionVector::from_set(lambda.len(), &order).expect("top-k arm indices are distinct")
}

fn floored(weights: &[f64]) -> Vec<f64> {
    weights.iter().map(|&w| w.max(WEIGHT_FLOOR)).collect()
}

/// Draw `k` distinct arms by sequential weighted sampling: pick one arm from
/// the renormalized weights, remove it, repeat. Weights are floored at
/// [`WEIGHT_FLOOR`] first so the set cannot under-fill.
pub fn sample_without_replacement<R: Rng>(
    select_prob: &[f64],
    k: usize,
    rng: &mut R,
) -> ActionVector {
    let n = select_prob.len();
    debug_assert!(k <= n);
    let mut w = floored(select_prob);
    let mut chosen = Vec::with_capacity(k);
    for _ in 0..k {
        let total: f64 = w.iter().sum();
        let mut u = rng.gen::<f64>() * total;
        let mut pick = None;
        for (i, &wi) in w.iter().enumerate() {
            if wi == 0.0 {
                continue;
            }
            if u < wi {
                pick = Some(i);
                break;
            }
            u -= wi;
            pick = Some(i); // fallback if rounding pushes u past the last arm
        }
        let pick = pick.expect("k < n leaves at least one arm with weight");
        chosen.push(pick);
        w[pick] = 0.0;
    }
    ActionVector::from_set(n, &chosen).expect("sequential draws are distinct")
}

/// Exact inclusion probabilities by depth-first enumeration of ordered
/// k-selections. When arm `i` is picked at some depth with prefix probability
/// `q`, every completion of that prefix includes `i` and the completions'
/// conditional probabilities sum to one, so adding `q` at pick time sums the
/// full inclusion probability across disjoint prefixes.
fn exact_inclusion(weights: &[f64], k: usize) -> Vec<f64> {
    struct Dfs<'a> {
        weights: &'a [f64],
        used: Vec<bool>,
        incl: Vec<f64>,
        k: usize,
    }
    impl Dfs<'_> {
        fn walk(&mut self, depth: usize, remaining: f64, prefix: f64) {
            for i in 0..self.weights.len() {
                if self.used[i] {
                    continue;
                }
                let q = prefix * self.weights[i] / remaining;
                self.incl[i] += q;
                if depth + 1 < self.k {
                    self.used[i] = true;
                    self.walk(depth + 1, remaining - self.weights[i], q);
                    self.used[i] = false;
                }
            }
        }
    }
    let total: f64 = weights.iter().sum();
    let mut dfs =
        Dfs { weights, used: vec![false; weights.len()], incl: vec![0.0; weights.len()], k };
    dfs.walk(0, total, 1.0);
    dfs.incl
}

/// Monte Carlo inclusion probabilities. Instead of replaying the sequential
/// sampler (k renormalization passes per sample), each sample races
/// independent exponential clocks: arm i gets arrival time Exp(1)/w_i and the
/// k earliest arrivals form the set. Successive sampling is exactly the order
/// statistics of such clocks, so the sampled distribution is identical and
/// each sample costs one exponential draw per arm.
fn mc_inclusion(weights: &[f64], k: usize, samples: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = weights.len();
    let mut counts = vec![0u64; n];
    let mut keys: Vec<(f64, usize)> = Vec::with_capacity(n);
    for _ in 0..samples {
        keys.clear();
        for (i, &w) in weights.iter().enumerate() {
            let e: f64 = rng.sample(Exp1);
            keys.push((e / w, i));
        }
        keys.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0));
        for &(_, i) in &keys[..k] {
            counts[i] += 1;
        }
    }
    counts.iter().map(|&cnt| cnt as f64 / samples as f64).collect()
}

fn permutation_count(n: usize, k: usize) -> u128 {
    let mut count: u128 = 1;
    for j in 0..k {
        count = count.saturating_mul((n - j) as u128);
    }
    count
}

/// Per-arm activation probabilities `Pr(a_i = 1 | s)` under without-replacement
/// sampling from `select_prob`.
///
/// `k = 1` is the sampler itself, so the weights come back unchanged. Exact
/// mode enumerates ordered k-selections and errors above
/// [`EXACT_PERMUTATION_CAP`]; Monte Carlo averages indicator draws; Auto picks
/// exact for `k <= 3` and `n <= 12`, Monte Carlo otherwise.
pub fn inclusion_probs(
    select_prob: &[f64],
    k: usize,
    mode: InclusionMode,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>, SoftFairError> {
    if k == 1 {
        return Ok(select_prob.to_vec());
    }
    let n = select_prob.len();
    let weights = floored(select_prob);
    match mode {
        InclusionMode::Exact => {
            let permutations = permutation_count(n, k);
            if permutations > EXACT_PERMUTATION_CAP {
                return Err(SoftFairError::ExactTooLarge {
                    permutations,
                    cap: EXACT_PERMUTATION_CAP,
                });
            }
            Ok(exact_inclusion(&weights, k))
        }
        InclusionMode::MonteCarlo { samples } => Ok(mc_inclusion(&weights, k, samples, rng)),
        InclusionMode::Auto => {
            if k <= 3 && n <= 12 {
                Ok(exact_inclusion(&weights, k))
            } else {
                Ok(mc_inclusion(&weights, k, AUTO_MC_SAMPLES, rng))
            }
        }
    }
}

/// Mix the visited value cells toward the action-marginal expectation:
/// `V[i][t][s_i] <- (1 - p_i) * Q_i(s_i,0) + p_i * Q_i(s_i,1)` with
/// `p_i = inclusion_prob[i]`. Other cells are untouched.
pub fn update_value(
    state: &mut SoftFairState,
    instance: &RmabInstance,
    s: &[u8],
    t: usize,
    inclusion_prob: &[f64],
) {
    let gamma = instance.gamma;
    let mixed: Vec<f64> = {
        let read = state.read_table();
        instance
            .arms
            .iter()
            .enumerate()
            .map(|(i, arm)| {
                let si = s[i] as usize;
                let q0 = q_value(arm, read, i, t, si, 0, gamma);
                let q1 = q_value(arm, read, i, t, si, 1, gamma);
                (1.0 - inclusion_prob[i]) * q0 + inclusion_prob[i] * q1
            })
            .collect()
    };
    for (i, &v) in mixed.iter().enumerate() {
        state.values.set(i, t, s[i] as usize, v);
    }
}

/// The random streams one simulation consumes, kept separate per domain so
/// policies that skip a domain (no sampling, no Monte Carlo) still see the
/// same transition noise.
#[derive(Clone, Debug)]
pub struct EpisodeStreams {
    pub actions: ChaCha8Rng,
    pub transitions: ChaCha8Rng,
    pub inclusion: ChaCha8Rng,
}

impl EpisodeStreams {
    /// Streams for simulation number `sim` under `master`.
    pub fn for_sim(master: u64, sim: u64) -> Self {
        EpisodeStreams {
            actions: substream(master, StreamKind::ActionSampling, sim),
            transitions: substream(master, StreamKind::Transitions, sim),
            inclusion: substream(master, StreamKind::InclusionMc, sim),
        }
    }
}

/// Everything the policy computed in one round, exposed for callers that need
/// to check per-round properties (the fairness checks in particular: with the
/// in-place table, recomputing logits after the fact would read updated cells).
#[derive(Clone, Debug)]
pub struct RoundInfo<'a> {
    pub t: usize,
    pub lambda: &'a [f64],
    pub select_prob: &'a [f64],
    pub inclusion_prob: &'a [f64],
    pub chosen: &'a ActionVector,
}

/// Run one episode, invoking `on_round` with each round's internals.
pub fn run_softfair_episode_observed(
    state: &mut SoftFairState,
    instance: &RmabInstance,
    initial: &[u8],
    streams: &mut EpisodeStreams,
    mut on_round: impl FnMut(&RoundInfo),
) -> Result<EpisodeTrace, SoftFairError> {
    let n = instance.n();
    let config = state.config;
    state.begin_episode();
    let mut s: StateVector = initial.to_vec();
    let mut states = Vec::with_capacity(instance.horizon + 1);
    states.push(s.clone());
    let mut actions = Vec::with_capacity(instance.horizon);
    let mut rewards = Vec::with_capacity(instance.horizon);
    let mut pull_counts = vec![0u64; n];
    for t in 0..instance.horizon {
        let lambda = logits(instance, state.read_table(), &s, t);
        let (chosen, update_weights) = match config.select_rule {
            SelectRule::Softmax => {
                let select = select_probs(&lambda, config.c);
                let chosen = sample_without_replacement(&select, instance.k, &mut streams.actions);
                (chosen, select)
            }
            SelectRule::GreedyTopK { update_c } => {
                (top_k_by_logit(&lambda, instance.k), select_probs(&lambda, update_c))
            }
        };
        let inclusion =
            inclusion_probs(&update_weights, instance.k, config.inclusion, &mut streams.inclusion)?;
        update_value(state, instance, &s, t, &inclusion);
        on_round(&RoundInfo {
            t,
            lambda: &lambda,
            select_prob: &update_weights,
            inclusion_prob: &inclusion,
            chosen: &chosen,
        });
        for (i, count) in pull_counts.iter_mut().enumerate() {
            *count += u64::from(chosen.is_active(i));
        }
        let (next, reward) = transition_all(instance, &s, &chosen, &mut streams.transitions);
        actions.push(chosen);
        rewards.push(reward);
        s = next;
        states.push(s.clone());
    }
    state.end_episode();
    Ok(EpisodeTrace { states, actions, rewards, pull_counts })
}

/// Run one episode of the policy (see [`run_softfair_episode_observed`]).
pub fn run_softfair_episode(
    state: &mut SoftFairState,
    instance: &RmabInstance,
    initial: &[u8],
    streams: &mut EpisodeStreams,
) -> Result<EpisodeTrace, SoftFairError> {
    run_softfair_episode_observed(state, instance, initial, streams, |_| {})
}
