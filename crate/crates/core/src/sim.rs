//! Experiment driver and metrics.
//!
//! `run_experiment` plays each configured policy over the same simulation
//! streams: simulation `i` always starts from the same Bernoulli(0.5) initial
//! states and sees the same per-arm transition noise, so cross-policy
//! differences come from the decisions, not the dice. Reported metrics use
//! each simulation's final episode (earlier episodes only train SoftFair's
//! value table).
//!
//! Two summary metrics compress a run:
//!
//! * intervention benefit, `100 * (R_method - R_none) / (R_oracle - R_none)`,
//!   anchoring every policy between never intervening (0) and the index
//!   oracle (100);
//! * action entropy, `-sum_i P(i) ln P(i)` with `P(i)` the fraction of the
//!   `k * T` pulls that went to arm i, measuring how widely the budget is
//!   spread (0 for a fixed k-set, `ln n` for a perfectly even spread).

use crate::model::{ActionVector, EpisodeTrace, RmabInstance, StateVector};
use crate::rng::{substream, StreamKind};
use crate::softfair::{
    run_softfair_episode, sample_without_replacement, select_probs, EpisodeStreams, InclusionMode,
    SelectRule, SoftFairConfig, SoftFairError, SoftFairState,
};
use crate::whittle::{index_tables, oracle_policy, IndexTable, WhittleError, INDEX_TOL};
use crate::{baselines, fmt_sig};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("experiment config lists no policies")]
    NoPolicies,
    #[error("experiment config asks for zero simulations")]
    NoSimulations,
    #[error("experiment config asks for zero episodes per simulation")]
    NoEpisodes,
    #[error(
        "intervention benefit undefined: oracle mean reward {oracle} \
         does not exceed the no-intervention mean {none}"
    )]
    DegenerateBenefit { oracle: f64, none: f64 },
    #[error(transparent)]
    Policy(#[from] SoftFairError),
    #[error(transparent)]
    Whittle(#[from] WhittleError),
}

/// A policy to run. `SoftFair { greedy: true }` replaces the sampling step
/// with deterministic top-k by logit while keeping the softmax value updates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PolicySpec {
    NoIntervention,
    Random,
    Myopic,
    FairMyopic { c: f64 },
    SoftFair { c: f64, greedy: bool },
    Oracle,
}

impl PolicySpec {
    pub fn name(&self) -> &'static str {
        match self {
            PolicySpec::NoIntervention => "none",
            PolicySpec::Random => "random",
            PolicySpec::Myopic => "myopic",
            PolicySpec::FairMyopic { .. } => "fairmyopic",
            PolicySpec::SoftFair { greedy: false, .. } => "softfair",
            PolicySpec::SoftFair { greedy: true, .. } => "softfair-greedy",
            PolicySpec::Oracle => "oracle",
        }
    }

    /// The softmax multiplier, for the policies that have one.
    pub fn c(&self) -> Option<f64> {
        match self {
            PolicySpec::FairMyopic { c } | PolicySpec::SoftFair { c, .. } => Some(*c),
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub policies: Vec<PolicySpec>,
    /// Episodes per simulation; SoftFair's value table persists across them.
    pub episodes: usize,
    pub sims: usize,
    pub seed: u64,
    /// Inclusion-probability mode for the softmax policies' value updates.
    pub inclusion: InclusionMode,
}

impl ExperimentConfig {
    pub fn new(policies: Vec<PolicySpec>, sims: usize, seed: u64) -> Self {
        ExperimentConfig { policies, episodes: 1, sims, seed, inclusion: InclusionMode::Auto }
    }
}

/// Final-episode metrics of one simulation.
#[derive(Clone, Debug, Serialize)]
pub struct SimStats {
    pub sim: usize,
    pub reward: f64,
    pub entropy: f64,
    pub never_pulled_fraction: f64,
    pub pulls: Vec<u64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct PolicyReport {
    pub policy: &'static str,
    pub c: Option<f64>,
    pub mean_reward: f64,
    pub std_reward: f64,
    pub mean_entropy: f64,
    pub std_entropy: f64,
    /// Present when both anchors ran and the denominator is positive.
    pub intervention_benefit: Option<f64>,
    pub never_pulled_fraction: f64,
    pub pull_totals: Vec<u64>,
    pub per_sim: Vec<SimStats>,
}

/// The anchors the benefit column was computed against.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct BenefitReference {
    pub none_mean: f64,
    pub oracle_mean: f64,
    /// True when the oracle failed to beat no intervention, which leaves the
    /// benefit undefined; the anchors are still reported.
    pub degenerate: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct MetricsReport {
    pub n: usize,
    pub k: usize,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub gamma: f64,
    pub episodes: usize,
    pub sims: usize,
    pub seed: u64,
    pub benefit_reference: Option<BenefitReference>,
    pub policies: Vec<PolicyReport>,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("report serializes");
        text.push('\n');
        text
    }
}

/// `100 * (method - none) / (oracle - none)`. Errors when the oracle does not
/// beat no intervention, which leaves the scale undefined.
pub fn intervention_benefit(method: f64, none: f64, oracle: f64) -> Result<f64, SimError> {
    let denom = oracle - none;
    if denom <= 0.0 {
        return Err(SimError::DegenerateBenefit { oracle, none });
    }
    Ok(100.0 * (method - none) / denom)
}

/// Entropy of the empirical pull distribution `P(i) = pulls[i] / (k * T)`,
/// natural log, with empty cells contributing zero.
pub fn action_entropy(pull_counts: &[u64], k: usize, horizon: usize) -> f64 {
    let total = (k * horizon) as f64;
    let h: f64 = pull_counts
        .iter()
        .filter(|&&count| count > 0)
        .map(|&count| {
            let p = count as f64 / total;
            -p * p.ln()
        })
        .sum();
    // The empty sum is -0.0 (the additive identity); keep zero unsigned so it
    // serializes as 0.0.
    if h == 0.0 {
        0.0
    } else {
        h
    }
}

/// Per-arm pull totals over a set of traces, plus the mean per-trace fraction
/// of arms that were never pulled.
#[derive(Clone, Debug, PartialEq)]
pub struct PullHistogram {
    pub pulls: Vec<u64>,
    pub never_pulled_fraction: f64,
}

pub fn pull_histogram(traces: &[EpisodeTrace]) -> PullHistogram {
    assert!(!traces.is_empty(), "histogram needs at least one trace");
    let n = traces[0].pull_counts.len();
    let mut pulls = vec![0u64; n];
    let mut never = 0.0;
    for trace in traces {
        let mut untouched = 0usize;
        for (total, &count) in pulls.iter_mut().zip(&trace.pull_counts) {
            *total += count;
            untouched += usize::from(count == 0);
        }
        never += untouched as f64 / n as f64;
    }
    PullHistogram { pulls, never_pulled_fraction: never / traces.len() as f64 }
}

fn bernoulli_states<R: Rng>(n: usize, rng: &mut R) -> StateVector {
    (0..n).map(|_| u8::from(rng.gen::<f64>() < 0.5)).collect()
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let count = values.clone().count();
    let mean = values.clone().sum::<f64>() / count as f64;
    if count < 2 {
        return (mean, 0.0);
    }
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1) as f64;
    (mean, var.sqrt())
}

fn stats_from_trace(sim: usize, trace: &EpisodeTrace, instance: &RmabInstance) -> SimStats {
    let n = instance.n();
    let never = trace.pull_counts.iter().filter(|&&c| c == 0).count() as f64 / n as f64;
    SimStats {
        sim,
        reward: trace.discounted_reward(instance.gamma),
        entropy: action_entropy(&trace.pull_counts, instance.k, instance.horizon),
        never_pulled_fraction: never,
        pulls: trace.pull_counts.clone(),
    }
}

fn softfair_config(c: f64, greedy: bool, inclusion: InclusionMode) -> SoftFairConfig {
    let mut cfg = SoftFairConfig::new(c);
    cfg.inclusion = inclusion;
    if greedy {
        cfg.select_rule = SelectRule::GreedyTopK { update_c: c };
    }
    cfg
}

/// Play every episode of one simulation and return the final episode's stats.
fn run_one_sim(
    instance: &RmabInstance,
    policy: PolicySpec,
    config: &ExperimentConfig,
    tables: Option<&[IndexTable]>,
    sim: usize,
) -> Result<SimStats, SimError> {
    let n = instance.n();
    let mut init_rng = substream(config.seed, StreamKind::InitialStates, sim as u64);
    let mut streams = EpisodeStreams::for_sim(config.seed, sim as u64);

    if let PolicySpec::SoftFair { c, greedy } = policy {
        let mut state =
            SoftFairState::new(instance, softfair_config(c, greedy, config.inclusion));
        let mut last = None;
        for _ in 0..config.episodes {
            let initial = bernoulli_states(n, &mut init_rng);
            last = Some(run_softfair_episode(&mut state, instance, &initial, &mut streams)?);
        }
        let trace = last.expect("at least one episode");
        return Ok(stats_from_trace(sim, &trace, instance));
    }

    // The stateless policies have nothing to carry across episodes, so only
    // the final episode matters; earlier ones still consume their streams to
    // stay aligned with SoftFair runs of the same length.
    let mut trace = None;
    for _ in 0..config.episodes {
        let initial = bernoulli_states(n, &mut init_rng);
        let mut s = initial.clone();
        let mut states = Vec::with_capacity(instance.horizon + 1);
        states.push(s.clone());
        let mut actions = Vec::with_capacity(instance.horizon);
        let mut rewards = Vec::with_capacity(instance.horizon);
        let mut pull_counts = vec![0u64; n];
        for t in 0..instance.horizon {
            let chosen = match policy {
                PolicySpec::NoIntervention => ActionVector::none(n),
                PolicySpec::Random => {
                    baselines::random_policy(n, instance.k, &mut streams.actions)
                }
                PolicySpec::Myopic => baselines::myopic_policy(instance, &s),
                PolicySpec::FairMyopic { c } => {
                    // The metrics never read inclusion probabilities, so skip
                    // the estimation step `fair_myopic_policy` would pay for.
                    let select = select_probs(&baselines::myopic_gaps(instance, &s), c);
                    sample_without_replacement(&select, instance.k, &mut streams.actions)
                }
                PolicySpec::Oracle => {
                    oracle_policy(instance, tables.expect("index tables precomputed"), &s, t)
                }
                PolicySpec::SoftFair { .. } => unreachable!("handled above"),
            };
            for (count, i) in pull_counts.iter_mut().zip(0..n) {
                *count += u64::from(chosen.is_active(i));
            }
            let (next, reward) =
                crate::model::transition_all(instance, &s, &chosen, &mut streams.transitions);
            actions.push(chosen);
            rewards.push(reward);
            s = next;
            states.push(s.clone());
        }
        trace = Some(EpisodeTrace { states, actions, rewards, pull_counts });
    }
    Ok(stats_from_trace(sim, &trace.expect("at least one episode"), instance))
}

/// Run every policy over `sims` common-random-number simulations.
pub fn run_experiment(
    instance: &RmabInstance,
    config: &ExperimentConfig,
) -> Result<MetricsReport, SimError> {
    if config.policies.is_empty() {
        return Err(SimError::NoPolicies);
    }
    if config.sims == 0 {
        return Err(SimError::NoSimulations);
    }
    if config.episodes == 0 {
        return Err(SimError::NoEpisodes);
    }

    let tables = if config.policies.contains(&PolicySpec::Oracle) {
        Some(index_tables(instance, INDEX_TOL)?)
    } else {
        None
    };

    let mut policies = Vec::with_capacity(config.policies.len());
    for &policy in &config.policies {
        let per_sim: Vec<SimStats> = (0..config.sims)
            .into_par_iter()
            .map(|sim| run_one_sim(instance, policy, config, tables.as_deref(), sim))
            .collect::<Result<_, _>>()?;
        let (mean_reward, std_reward) = mean_std(per_sim.iter().map(|s| s.reward));
        let (mean_entropy, std_entropy) = mean_std(per_sim.iter().map(|s| s.entropy));
        let never = per_sim.iter().map(|s| s.never_pulled_fraction).sum::<f64>()
            / config.sims as f64;
        let mut pull_totals = vec![0u64; instance.n()];
        for stats in &per_sim {
            for (total, &count) in pull_totals.iter_mut().zip(&stats.pulls) {
                *total += count;
            }
        }
        policies.push(PolicyReport {
            policy: policy.name(),
            c: policy.c(),
            mean_reward,
            std_reward,
            mean_entropy,
            std_entropy,
            intervention_benefit: None,
            never_pulled_fraction: never,
            pull_totals,
            per_sim,
        });
    }

    let anchor = |spec: PolicySpec| {
        config
            .policies
            .iter()
            .position(|&p| p == spec)
            .map(|i| policies[i].mean_reward)
    };
    let benefit_reference = match (anchor(PolicySpec::NoIntervention), anchor(PolicySpec::Oracle))
    {
        (Some(none_mean), Some(oracle_mean)) => {
            let degenerate = oracle_mean - none_mean <= 0.0;
            if !degenerate {
                for report in &mut policies {
                    report.intervention_benefit =
                        Some(100.0 * (report.mean_reward - none_mean) / (oracle_mean - none_mean));
                }
            }
            Some(BenefitReference { none_mean, oracle_mean, degenerate })
        }
        _ => None,
    };

    Ok(MetricsReport {
        n: instance.n(),
        k: instance.k,
        horizon: instance.horizon,
        gamma: instance.gamma,
        episodes: config.episodes,
        sims: config.sims,
        seed: config.seed,
        benefit_reference,
        policies,
    })
}

/// CSV with one row per policy and simulation. The `c` cell is empty for
/// policies without a multiplier.
pub fn metrics_csv(report: &MetricsReport) -> String {
    let mut out = String::from("policy,c,sim,reward,entropy,never_pulled_fraction\n");
    for policy in &report.policies {
        let c_cell = policy.c.map(fmt_sig).unwrap_or_default();
        for stats in &policy.per_sim {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                policy.policy,
                c_cell,
                stats.sim,
                fmt_sig(stats.reward),
                fmt_sig(stats.entropy),
                fmt_sig(stats.never_pulled_fraction),
            ));
        }
    }
    out
}

/// CSV of one policy's pull totals, columns `arm,pulls`.
pub fn histogram_csv(report: &PolicyReport) -> String {
    let mut out = String::from("arm,pulls\n");
    for (arm, &pulls) in report.pull_totals.iter().enumerate() {
        out.push_str(&format!("{arm},{pulls}\n"));
    }
    out
}
