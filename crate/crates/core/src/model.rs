//! Core domain types for two-state restless bandit instances.
//!
//! An instance is a collection of `n` independent two-state arms. Each arm is a
//! Markov chain over states {0, 1} whose transition matrix depends on a binary
//! action (0 = passive, 1 = active). Every round the planner activates exactly
//! `k` arms, every arm transitions, and the realized reward of an arm is its
//! next state, so the expected one-step reward of playing action `a` in state
//! `s` is `P^a_{s,1}`.
//!
//! Synthetic instances additionally satisfy four structural inequalities making
//! state 1 "good" and activation helpful in both states:
//!
//! ```text
//! (i)   P^0_{0,1} < P^0_{1,1}      (ii)  P^1_{0,1} < P^1_{1,1}
//! (iii) P^0_{0,1} < P^1_{0,1}      (iv)  P^0_{1,1} < P^1_{1,1}
//! ```
//!
//! Validation is report-style: constructors are permissive and
//! [`validate_instance`] returns the list of violated invariants, so callers
//! decide how strict to be (generated CPAP-like instances may violate (i)/(ii)
//! after noise clipping and still need to load).

use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use thiserror::Error;

/// Row-stochasticity tolerance. Matrices are constructed, not measured, so the
/// tolerance is tight.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// One arm's transition law, indexed `p[a][s][s']`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionModel {
    pub p: [[[f64; 2]; 2]; 2],
}

impl TransitionModel {
    /// Build a model from the probabilities of reaching state 1, one per
    /// (action, state); the complementary entries are filled in.
    ///
    /// `to_one[a][s]` is `P^a_{s,1}`.
    pub fn from_to_one(to_one: [[f64; 2]; 2]) -> Self {
        let mut p = [[[0.0; 2]; 2]; 2];
        for a in 0..2 {
            for s in 0..2 {
                p[a][s][1] = to_one[a][s];
                p[a][s][0] = 1.0 - to_one[a][s];
            }
        }
        TransitionModel { p }
    }

    /// `P^a_{s,1}`, the probability of landing in state 1.
    pub fn to_one(&self, a: usize, s: usize) -> f64 {
        self.p[a][s][1]
    }

    /// Myopic activation gain in state `s`: `P^1_{s,1} - P^0_{s,1}`.
    pub fn myopic_gap(&self, s: usize) -> f64 {
        self.p[1][s][1] - self.p[0][s][1]
    }
}

/// Expected one-step reward of playing action `a` on `model` in state `s`.
///
/// The realized reward is the next-state indicator, so the expectation is
/// `P^a_{s,1}`.
pub fn expected_reward(model: &TransitionModel, s: usize, a: usize) -> f64 {
    model.p[a][s][1]
}

/// A full problem instance: arms plus the shared budget, horizon, discount and
/// softmax multiplier.
#[derive(Clone, Debug, PartialEq)]
pub struct RmabInstance {
    pub arms: Vec<TransitionModel>,
    /// Arms activated per round.
    pub k: usize,
    /// Rounds per episode.
    pub horizon: usize,
    /// Discount factor in (0, 1]; 1 gives the average-reward criterion.
    pub gamma: f64,
    /// Softmax multiplier used by the softmax-based policies.
    pub c: f64,
}

impl RmabInstance {
    pub fn n(&self) -> usize {
        self.arms.len()
    }
}

/// Joint state: one entry per arm, each 0 or 1.
pub type StateVector = Vec<u8>;

/// Errors from constructing core types or reading instance files.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("action set selects arm {0} more than once or out of range (n={1})")]
    BadActionSet(usize, usize),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed instance file: {0}")]
    Format(#[from] serde_json::Error),
    #[error("instance file declares n={declared} but carries {actual} arms")]
    ArmCountMismatch { declared: usize, actual: usize },
    #[error("invalid instance: {0}")]
    Invalid(ValidationIssue),
}

/// Which arms are activated this round. The only way to build one is through
/// constructors that fix the number of active entries, so a malformed budget
/// cannot be represented.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActionVector {
    active: Vec<bool>,
    k: usize,
}

impl ActionVector {
    /// Activate exactly the listed arms. Rejects duplicates and out-of-range
    /// indices.
    pub fn from_set(n: usize, set: &[usize]) -> Result<Self, ModelError> {
        let mut active = vec![false; n];
        for &i in set {
            if i >= n || active[i] {
                return Err(ModelError::BadActionSet(i, n));
            }
            active[i] = true;
        }
        Ok(ActionVector { active, k: set.len() })
    }

    /// The all-passive action (used by the no-intervention policy).
    pub fn none(n: usize) -> Self {
        ActionVector { active: vec![false; n], k: 0 }
    }

    pub fn is_active(&self, i: usize) -> bool {
        self.active[i]
    }

    /// Action bit for arm `i` as a transition-matrix index.
    pub fn action(&self, i: usize) -> usize {
        usize::from(self.active[i])
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.active.len()
    }

    pub fn active_arms(&self) -> Vec<usize> {
        (0..self.active.len()).filter(|&i| self.active[i]).collect()
    }
}

/// Per-arm, per-round, per-state value estimates `V[i][t][s]`, `t` in `0..=T`.
/// Row `T` is the terminal continuation and stays zero.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueTable {
    n: usize,
    horizon: usize,
    v: Vec<f64>,
}

impl ValueTable {
    /// All-zero table for `n` arms over `horizon` rounds.
    pub fn new(n: usize, horizon: usize) -> Self {
        ValueTable { n, horizon, v: vec![0.0; n * (horizon + 1) * 2] }
    }

    #[inline]
    fn idx(&self, arm: usize, t: usize, s: usize) -> usize {
        debug_assert!(arm < self.n && t <= self.horizon && s < 2);
        (arm * (self.horizon + 1) + t) * 2 + s
    }

    #[inline]
    pub fn get(&self, arm: usize, t: usize, s: usize) -> f64 {
        self.v[self.idx(arm, t, s)]
    }

    #[inline]
    pub fn set(&mut self, arm: usize, t: usize, s: usize, value: f64) {
        let i = self.idx(arm, t, s);
        self.v[i] = value;
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// CSV export with columns `arm,t,state,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("arm,t,state,value\n");
        for arm in 0..self.n {
            for t in 0..=self.horizon {
                for s in 0..2 {
                    out.push_str(&format!(
                        "{},{},{},{}\n",
                        arm,
                        t,
                        s,
                        crate::fmt_sig(self.get(arm, t, s))
                    ));
                }
            }
        }
        out
    }
}

/// One round's selection artifacts: the softmax weights, the per-arm
/// activation probabilities under without-replacement sampling, and the set
/// actually drawn.
#[derive(Clone, Debug)]
pub struct PolicyDecision {
    pub select_prob: Vec<f64>,
    pub inclusion_prob: Vec<f64>,
    pub chosen: ActionVector,
}

/// Record of one episode: `T+1` states, `T` actions, the per-round realized
/// rewards (number of arms landing in state 1), and per-arm pull counts.
#[derive(Clone, Debug)]
pub struct EpisodeTrace {
    pub states: Vec<StateVector>,
    pub actions: Vec<ActionVector>,
    pub rewards: Vec<f64>,
    pub pull_counts: Vec<u64>,
}

impl EpisodeTrace {
    /// Cumulative discounted reward, `sum_t gamma^t * reward[t]`.
    pub fn discounted_reward(&self, gamma: f64) -> f64 {
        let mut acc = 0.0;
        let mut w = 1.0;
        for r in &self.rewards {
            acc += w * r;
            w *= gamma;
        }
        acc
    }
}

/// Advance every arm one step under `action`, drawing exactly one uniform per
/// arm whether or not it was pulled. Returns the next joint state and the
/// realized round reward (the number of arms landing in state 1).
///
/// Consuming one draw per arm keeps the transition stream aligned across
/// policies, so under a shared seed two policies that happen to pick the same
/// actions also see the same state noise.
pub fn transition_all<R: rand::Rng>(
    instance: &RmabInstance,
    state: &[u8],
    action: &ActionVector,
    rng: &mut R,
) -> (StateVector, f64) {
    let mut next = Vec::with_capacity(instance.n());
    let mut reward = 0.0;
    for (i, arm) in instance.arms.iter().enumerate() {
        let u: f64 = rng.gen();
        let good = u < arm.p[action.action(i)][state[i] as usize][1];
        next.push(u8::from(good));
        reward += f64::from(good);
    }
    (next, reward)
}

/// The four structural inequalities, in the order (i)..(iv) above.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StructuralConstraint {
    PassiveStateMonotone,
    ActiveStateMonotone,
    ActiveHelpsInBad,
    ActiveHelpsInGood,
}

impl fmt::Display for StructuralConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            StructuralConstraint::PassiveStateMonotone => "(i) p[0][0][1] < p[0][1][1]",
            StructuralConstraint::ActiveStateMonotone => "(ii) p[1][0][1] < p[1][1][1]",
            StructuralConstraint::ActiveHelpsInBad => "(iii) p[0][0][1] < p[1][0][1]",
            StructuralConstraint::ActiveHelpsInGood => "(iv) p[0][1][1] < p[1][1][1]",
        };
        f.write_str(s)
    }
}

/// A violated invariant found by [`validate_instance`].
#[derive(Clone, Debug, PartialEq)]
pub enum ValidationIssue {
    RowNotStochastic { arm: usize, action: usize, state: usize, sum: f64 },
    EntryOutOfRange { arm: usize, action: usize, state: usize, next: usize, value: f64 },
    Structural { arm: usize, which: StructuralConstraint },
    NoArms,
    BadBudget { k: usize, n: usize },
    BadHorizon,
    BadGamma { gamma: f64 },
    BadMultiplier { c: f64 },
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValidationIssue::RowNotStochastic { arm, action, state, sum } => write!(
                f,
                "arm {arm}: row p[{action}][{state}] sums to {sum}, expected 1"
            ),
            ValidationIssue::EntryOutOfRange { arm, action, state, next, value } => write!(
                f,
                "arm {arm}: p[{action}][{state}][{next}] = {value} out of range"
            ),
            ValidationIssue::Structural { arm, which } => {
                write!(f, "arm {arm}: structural constraint {which} violated")
            }
            ValidationIssue::NoArms => write!(f, "instance has no arms"),
            ValidationIssue::BadBudget { k, n } => {
                write!(f, "budget k={k} outside 1 <= k < n (n={n})")
            }
            ValidationIssue::BadHorizon => write!(f, "horizon must be at least 1"),
            ValidationIssue::BadGamma { gamma } => {
                write!(f, "gamma={gamma} outside (0, 1]")
            }
            ValidationIssue::BadMultiplier { c } => write!(f, "c={c} must be positive"),
        }
    }
}

/// Check an instance against its invariants and return every violation found.
///
/// Always checked: row stochasticity (within [`ROW_SUM_TOL`]), probability
/// bounds, `1 <= k < n`, `T >= 1`, `gamma` in (0, 1], `c > 0`. With
/// `strict` the entries must be strictly inside (0, 1) and the four
/// structural inequalities must hold on every arm.
pub fn validate_instance(instance: &RmabInstance, strict: bool) -> Vec<ValidationIssue> {
    let mut issues = Vec::new();
    let n = instance.n();
    if n == 0 {
        issues.push(ValidationIssue::NoArms);
    }
    if instance.k < 1 || instance.k >= n.max(1) {
        issues.push(ValidationIssue::BadBudget { k: instance.k, n });
    }
    if instance.horizon < 1 {
        issues.push(ValidationIssue::BadHorizon);
    }
    if !(instance.gamma > 0.0 && instance.gamma <= 1.0) {
        issues.push(ValidationIssue::BadGamma { gamma: instance.gamma });
    }
    if instance.c.is_nan() || instance.c <= 0.0 {
        issues.push(ValidationIssue::BadMultiplier { c: instance.c });
    }
    for (arm, model) in instance.arms.iter().enumerate() {
        for a in 0..2 {
            for s in 0..2 {
                let row = model.p[a][s];
                let sum = row[0] + row[1];
                if (sum - 1.0).abs() > ROW_SUM_TOL {
                    issues.push(ValidationIssue::RowNotStochastic { arm, action: a, state: s, sum });
                }
                for (next, &v) in row.iter().enumerate() {
                    let bad = if strict { !(v > 0.0 && v < 1.0) } else { !(0.0..=1.0).contains(&v) };
                    if bad {
                        issues.push(ValidationIssue::EntryOutOfRange {
                            arm,
                            action: a,
                            state: s,
                            next,
                            value: v,
                        });
                    }
                }
            }
        }
        if strict {
            let checks = [
                (model.p[0][0][1] < model.p[0][1][1], StructuralConstraint::PassiveStateMonotone),
                (model.p[1][0][1] < model.p[1][1][1], StructuralConstraint::ActiveStateMonotone),
                (model.p[0][0][1] < model.p[1][0][1], StructuralConstraint::ActiveHelpsInBad),
                (model.p[0][1][1] < model.p[1][1][1], StructuralConstraint::ActiveHelpsInGood),
            ];
            for (ok, which) in checks {
                if !ok {
                    issues.push(ValidationIssue::Structural { arm, which });
                }
            }
        }
    }
    issues
}

#[derive(Serialize, Deserialize)]
struct InstanceJson {
    n: usize,
    k: usize,
    #[serde(rename = "T")]
    horizon: usize,
    gamma: f64,
    c: f64,
    arms: Vec<TransitionModel>,
}

/// Serialize an instance to the on-disk JSON format.
pub fn instance_to_json(instance: &RmabInstance) -> String {
    let file = InstanceJson {
        n: instance.n(),
        k: instance.k,
        horizon: instance.horizon,
        gamma: instance.gamma,
        c: instance.c,
        arms: instance.arms.clone(),
    };
    // Field order is fixed by the struct, so output is deterministic.
    serde_json::to_string_pretty(&file).expect("instance serialization cannot fail") + "\n"
}

/// Parse an instance from JSON, checking the arm count and the non-strict
/// invariants (stochastic rows, probability bounds, parameter ranges).
pub fn instance_from_json(text: &str) -> Result<RmabInstance, ModelError> {
    let file: InstanceJson = serde_json::from_str(text)?;
    if file.n != file.arms.len() {
        return Err(ModelError::ArmCountMismatch { declared: file.n, actual: file.arms.len() });
    }
    let instance = RmabInstance {
        arms: file.arms,
        k: file.k,
        horizon: file.horizon,
        gamma: file.gamma,
        c: file.c,
    };
    if let Some(issue) = validate_instance(&instance, false).into_iter().next() {
        return Err(ModelError::Invalid(issue));
    }
    Ok(instance)
}

/// Load an instance file (see [`instance_from_json`]).
pub fn load_instance(path: &Path) -> Result<RmabInstance, ModelError> {
    instance_from_json(&std::fs::read_to_string(path)?)
}

/// Write an instance file (see [`instance_to_json`]).
pub fn save_instance(path: &Path, instance: &RmabInstance) -> Result<(), ModelError> {
    std::fs::write(path, instance_to_json(instance))?;
    Ok(())
}
