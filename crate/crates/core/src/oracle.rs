//! Exact joint-MDP solvers over the product state space, for small `n`.
//!
//! The joint problem treats the whole instance as one MDP: states are the
//! `2^n` bitmasks of arm states (bit `i` = arm `i`), actions are the sorted
//! k-combinations of arm indices, the reward is the expected number of arms
//! landing in state 1, and transitions factorize across arms. Everything here
//! is brute force and refuses `n` above [`JOINT_STATE_CAP`]; the point is
//! ground truth for the policies, not scale.
//!
//! Two one-step operators act on a joint Q table:
//!
//! ```text
//! (hard) Q'(s,a) = R(s,a) + gamma * E_{s'|s,a}[ max_a' Q(s',a') ]
//! (soft) Q'(s,a) = R(s,a) + gamma * E_{s'|s,a}[ sum_a' softmax_c(Q(s',.))(a') Q(s',a') ]
//! ```
//!
//! The hard operator is the Bellman optimality backup; the soft operator
//! replaces the max with the softmax-weighted expectation the sampling policy
//! actually achieves at budget k=1. Both contract for `gamma < 1`, and the
//! converged soft table sits within `(n-1)/((2+c)(1-gamma))` of the optimum.

use crate::model::{ActionVector, RmabInstance, StateVector};
use crate::softfair::select_probs;
use itertools::Itertools;
use rayon::prelude::*;
use thiserror::Error;

/// Largest arm count the joint solvers accept (`2^n` states).
pub const JOINT_STATE_CAP: usize = 12;

/// Sup-norm threshold for fixed-point convergence.
pub const FIXED_POINT_TOL: f64 = 1e-10;

/// Iteration cap for fixed-point loops.
pub const MAX_VALUE_ITERATIONS: usize = 100_000;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("joint solvers need n <= {cap} arms, got {n}")]
    TooManyArms { n: usize, cap: usize },
    #[error("value iteration still moved {last} after {iters} iterations (tolerance {tol})")]
    NoConvergence { tol: f64, iters: usize, last: f64 },
    #[error("the soft operator is defined for budget k = 1, got k = {k}")]
    UnitBudgetRequired { k: usize },
    #[error("fixed-point iteration needs gamma < 1, got {gamma}")]
    DiscountRequired { gamma: f64 },
}

/// Joint action-value table: `q[state_mask][action_index]` with the action
/// list alongside.
#[derive(Clone, Debug, PartialEq)]
pub struct JointQTable {
    pub n: usize,
    pub k: usize,
    /// Sorted k-combinations of arm indices, lexicographic.
    pub actions: Vec<Vec<usize>>,
    pub q: Vec<Vec<f64>>,
}

/// All k-subsets of `0..n` in lexicographic order.
pub fn joint_actions(n: usize, k: usize) -> Vec<Vec<usize>> {
    (0..n).combinations(k).collect()
}

/// Bitmask of a joint state (bit `i` set iff arm `i` is in state 1).
pub fn state_to_mask(state: &[u8]) -> usize {
    state.iter().enumerate().fold(0, |m, (i, &s)| m | ((s as usize) << i))
}

/// Inverse of [`state_to_mask`].
pub fn mask_to_state(mask: usize, n: usize) -> StateVector {
    (0..n).map(|i| ((mask >> i) & 1) as u8).collect()
}

impl JointQTable {
    /// All-zero table for an instance.
    pub fn zero(instance: &RmabInstance) -> Result<Self, OracleError> {
        let n = instance.n();
        if n > JOINT_STATE_CAP {
            return Err(OracleError::TooManyArms { n, cap: JOINT_STATE_CAP });
        }
        let actions = joint_actions(n, instance.k);
        let q = vec![vec![0.0; actions.len()]; 1 << n];
        Ok(JointQTable { n, k: instance.k, actions, q })
    }

    /// Hard state values `V(s) = max_a Q(s,a)`.
    pub fn hard_values(&self) -> Vec<f64> {
        self.q
            .iter()
            .map(|row| row.iter().fold(f64::NEG_INFINITY, |acc, &v| acc.max(v)))
            .collect()
    }

    /// Softmax-expected state values at multiplier `c`.
    pub fn soft_values(&self, c: f64) -> Vec<f64> {
        self.q
            .iter()
            .map(|row| {
                let w = select_probs(row, c);
                row.iter().zip(&w).map(|(q, p)| q * p).sum()
            })
            .collect()
    }

    /// Greedy action index per state, ties toward the lexicographically
    /// smallest combination (lowest index).
    pub fn argmax_actions(&self) -> Vec<usize> {
        self.q
            .iter()
            .map(|row| {
                let mut best = 0;
                for (i, &v) in row.iter().enumerate().skip(1) {
                    if v > row[best] {
                        best = i;
                    }
                }
                best
            })
            .collect()
    }

    /// Largest entrywise absolute difference between two tables.
    pub fn sup_distance(&self, other: &JointQTable) -> f64 {
        self.q
            .iter()
            .zip(&other.q)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }
}

/// Expectation of `v` over the factorized successor distribution where bit
/// `j` is 1 with probability `to_one[j]`. Eliminates one arm per pass:
/// entries `m` and `m | 2^j` merge with weights `(1-p_j, p_j)`.
fn successor_expectation(to_one: &[f64], v: &[f64]) -> f64 {
    let mut w = v.to_vec();
    for (j, &p) in to_one.iter().enumerate().rev() {
        let half = 1usize << j;
        for m in 0..half {
            w[m] = (1.0 - p) * w[m] + p * w[m | half];
        }
    }
    w[0]
}

/// One backup of every `(state, action)` against the successor values `v`.
fn backup(instance: &RmabInstance, actions: &[Vec<usize>], v: &[f64]) -> Vec<Vec<f64>> {
    let n = instance.n();
    (0..1usize << n)
        .into_par_iter()
        .map(|s| {
            let mut active = vec![false; n];
            actions
                .iter()
                .map(|action| {
                    active.fill(false);
                    for &i in action {
                        active[i] = true;
                    }
                    let to_one: Vec<f64> = (0..n)
                        .map(|i| {
                            instance.arms[i].p[usize::from(active[i])][(s >> i) & 1][1]
                        })
                        .collect();
                    let reward: f64 = to_one.iter().sum();
                    reward + instance.gamma * successor_expectation(&to_one, v)
                })
                .collect()
        })
        .collect()
}

fn check_cap(instance: &RmabInstance) -> Result<(), OracleError> {
    let n = instance.n();
    if n > JOINT_STATE_CAP {
        return Err(OracleError::TooManyArms { n, cap: JOINT_STATE_CAP });
    }
    Ok(())
}

/// One application of the Bellman optimality operator.
pub fn bellman_operator(
    q: &JointQTable,
    instance: &RmabInstance,
) -> Result<JointQTable, OracleError> {
    check_cap(instance)?;
    let v = q.hard_values();
    Ok(JointQTable {
        n: q.n,
        k: q.k,
        actions: q.actions.clone(),
        q: backup(instance, &q.actions, &v),
    })
}

fn soft_step(q: &JointQTable, instance: &RmabInstance, c: f64) -> JointQTable {
    let v = q.soft_values(c);
    JointQTable {
        n: q.n,
        k: q.k,
        actions: q.actions.clone(),
        q: backup(instance, &q.actions, &v),
    }
}

/// One application of the soft operator at multiplier `c` (budget k = 1 only,
/// where the softmax over actions is the sampling distribution itself).
pub fn soft_operator(
    q: &JointQTable,
    instance: &RmabInstance,
    c: f64,
) -> Result<JointQTable, OracleError> {
    check_cap(instance)?;
    if q.k != 1 {
        return Err(OracleError::UnitBudgetRequired { k: q.k });
    }
    Ok(soft_step(q, instance, c))
}

/// Which fixed point to iterate toward.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OperatorKind {
    Hard,
    Soft { c: f64 },
}

/// Iterate an operator from the zero table until successive iterates differ
/// by less than `tol` in sup norm. Returns the table and the iteration count.
pub fn iterate_to_fixed_point(
    instance: &RmabInstance,
    kind: OperatorKind,
    tol: f64,
) -> Result<(JointQTable, usize), OracleError> {
    check_cap(instance)?;
    if instance.gamma >= 1.0 {
        return Err(OracleError::DiscountRequired { gamma: instance.gamma });
    }
    if let OperatorKind::Soft { .. } = kind {
        if instance.k != 1 {
            return Err(OracleError::UnitBudgetRequired { k: instance.k });
        }
    }
    let mut q = JointQTable::zero(instance)?;
    let mut last = f64::INFINITY;
    for iter in 1..=MAX_VALUE_ITERATIONS {
        let next = match kind {
            OperatorKind::Hard => bellman_operator(&q, instance)?,
            OperatorKind::Soft { c } => soft_step(&q, instance, c),
        };
        last = next.sup_distance(&q);
        q = next;
        if last < tol {
            return Ok((q, iter));
        }
    }
    Err(OracleError::NoConvergence { tol, iters: MAX_VALUE_ITERATIONS, last })
}

/// Per-state gap diagnostics for a k=1 table at multiplier `c`.
#[derive(Clone, Debug)]
pub struct GapStat {
    pub state: usize,
    /// Spread of the row: `max Q(s,.) - min Q(s,.)`.
    pub delta: f64,
    /// `max Q(s,.) - softmax-expectation of Q(s,.)`.
    pub gap: f64,
    /// `delta / (n_actions * exp(c * delta))`.
    pub lower_bound: f64,
    /// `(n_actions - 1) / (2 + c)` (requires `delta <= 1` to be valid).
    pub upper_bound: f64,
}

/// Compute the softmax-expectation gap and its two bounds for every state.
pub fn gap_statistics(q: &JointQTable, c: f64) -> Vec<GapStat> {
    let soft = q.soft_values(c);
    let n_actions = q.actions.len() as f64;
    q.q.iter()
        .zip(&soft)
        .enumerate()
        .map(|(state, (row, &sv))| {
            let max = row.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v));
            let min = row.iter().fold(f64::INFINITY, |a, &v| a.min(v));
            let delta = max - min;
            GapStat {
                state,
                delta,
                gap: max - sv,
                lower_bound: delta / (n_actions * (c * delta).exp()),
                upper_bound: (n_actions - 1.0) / (2.0 + c),
            }
        })
        .collect()
}

/// Exact finite-horizon solution of the joint MDP: `q[t][s][a]` for rounds
/// `t = 0..T-1`, values `v[t][s]` for `t = 0..=T` (row `T` zero), and the
/// greedy policy as an action index per `(t, s)`.
#[derive(Clone, Debug)]
pub struct FiniteHorizonSolution {
    pub n: usize,
    pub k: usize,
    pub actions: Vec<Vec<usize>>,
    pub q: Vec<Vec<Vec<f64>>>,
    pub v: Vec<Vec<f64>>,
    pub policy: Vec<Vec<usize>>,
}

impl FiniteHorizonSolution {
    /// The optimal joint action at round `t` in the given state.
    pub fn action(&self, state: &[u8], t: usize) -> ActionVector {
        let set = &self.actions[self.policy[t][state_to_mask(state)]];
        ActionVector::from_set(self.n, set).expect("stored actions are valid sets")
    }
}

/// Backward induction over the joint space.
pub fn finite_horizon_optimum(
    instance: &RmabInstance,
) -> Result<FiniteHorizonSolution, OracleError> {
    check_cap(instance)?;
    let n = instance.n();
    let horizon = instance.horizon;
    let actions = joint_actions(n, instance.k);
    let states = 1usize << n;
    let mut q = vec![Vec::new(); horizon];
    let mut v = vec![vec![0.0; states]; horizon + 1];
    let mut policy = vec![vec![0usize; states]; horizon];
    for t in (0..horizon).rev() {
        let qt = backup(instance, &actions, &v[t + 1]);
        for s in 0..states {
            let row = &qt[s];
            let mut best = 0;
            for (i, &val) in row.iter().enumerate().skip(1) {
                if val > row[best] {
                    best = i;
                }
            }
            policy[t][s] = best;
            v[t][s] = row[best];
        }
        q[t] = qt;
    }
    Ok(FiniteHorizonSolution { n, k: instance.k, actions, q, v, policy })
}

/// Per-arm soft value iteration at multiplier `c`: the arm plays its own
/// two-action MDP with action weights `softmax(c * Q(s,.))`. Returns the
/// converged advantages `lambda[s] = Q(s,1) - Q(s,0)`. At large `c` this is
/// the arm's optimal advantage function.
pub fn per_arm_converged_lambda(
    model: &crate::model::TransitionModel,
    gamma: f64,
    c: f64,
    tol: f64,
) -> Result<[f64; 2], OracleError> {
    if gamma >= 1.0 {
        return Err(OracleError::DiscountRequired { gamma });
    }
    let q_row = |s: usize, v: &[f64; 2]| {
        let q0 = model.p[0][s][1] * (1.0 + gamma * v[1]) + model.p[0][s][0] * gamma * v[0];
        let q1 = model.p[1][s][1] * (1.0 + gamma * v[1]) + model.p[1][s][0] * gamma * v[0];
        [q0, q1]
    };
    let mut v = [0.0f64; 2];
    for _ in 0..MAX_VALUE_ITERATIONS {
        let mut next = [0.0f64; 2];
        for (s, slot) in next.iter_mut().enumerate() {
            let q = q_row(s, &v);
            let w = select_probs(&q, c);
            *slot = w[0] * q[0] + w[1] * q[1];
        }
        let moved = (next[0] - v[0]).abs().max((next[1] - v[1]).abs());
        v = next;
        if moved < tol {
            let l0 = q_row(0, &v);
            let l1 = q_row(1, &v);
            return Ok([l0[1] - l0[0], l1[1] - l1[0]]);
        }
    }
    Err(OracleError::NoConvergence { tol, iters: MAX_VALUE_ITERATIONS, last: f64::NAN })
}

/// Converged gap between the optimal and soft fixed points.
#[derive(Clone, Debug)]
pub struct SoftGapReport {
    pub k: usize,
    pub c: f64,
    /// Entrywise extremes of `Q* - Q_soft`.
    pub min_gap: f64,
    pub max_gap: f64,
    /// The k=1 bound `(n-1)/((2+c)(1-gamma))`; absent for other budgets,
    /// where the gap is reported for inspection without a proven bound.
    pub bound: Option<f64>,
    pub hard_iterations: usize,
    pub soft_iterations: usize,
}

/// Iterate both operators to their fixed points and report the entrywise gap.
/// For `k > 1` the soft expectation generalizes by softmaxing over the
/// k-subset actions; that case carries no proven bound and is informational.
pub fn empirical_soft_gap(
    instance: &RmabInstance,
    c: f64,
    tol: f64,
) -> Result<SoftGapReport, OracleError> {
    check_cap(instance)?;
    if instance.gamma >= 1.0 {
        return Err(OracleError::DiscountRequired { gamma: instance.gamma });
    }
    let (hard, hard_iterations) = iterate_to_fixed_point(instance, OperatorKind::Hard, tol)?;
    let mut soft = JointQTable::zero(instance)?;
    let mut soft_iterations = 0;
    for iter in 1..=MAX_VALUE_ITERATIONS {
        let next = soft_step(&soft, instance, c);
        let moved = next.sup_distance(&soft);
        soft = next;
        if moved < tol {
            soft_iterations = iter;
            break;
        }
        if iter == MAX_VALUE_ITERATIONS {
            return Err(OracleError::NoConvergence { tol, iters: iter, last: moved });
        }
    }
    let mut min_gap = f64::INFINITY;
    let mut max_gap = f64::NEG_INFINITY;
    for (h_row, s_row) in hard.q.iter().zip(&soft.q) {
        for (h, s) in h_row.iter().zip(s_row) {
            let gap = h - s;
            min_gap = min_gap.min(gap);
            max_gap = max_gap.max(gap);
        }
    }
    let bound = (instance.k == 1)
        .then(|| (instance.n() as f64 - 1.0) / ((2.0 + c) * (1.0 - instance.gamma)));
    Ok(SoftGapReport {
        k: instance.k,
        c,
        min_gap,
        max_gap,
        bound,
        hard_iterations,
        soft_iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::myopic_policy;
    use crate::model::TransitionModel;

    fn canonical() -> TransitionModel {
        TransitionModel::from_to_one([[0.2, 0.6], [0.5, 0.9]])
    }

    fn skewed() -> TransitionModel {
        TransitionModel::from_to_one([[0.1, 0.4], [0.3, 0.95]])
    }

    fn instance(arms: Vec<TransitionModel>, k: usize, gamma: f64) -> RmabInstance {
        RmabInstance { arms, k, horizon: 4, gamma, c: 1.0 }
    }

    #[test]
    fn masks_round_trip() {
        assert_eq!(state_to_mask(&[1, 0, 1]), 0b101);
        assert_eq!(mask_to_state(0b101, 3), vec![1, 0, 1]);
        for mask in 0..16 {
            assert_eq!(state_to_mask(&mask_to_state(mask, 4)), mask);
        }
    }

    #[test]
    fn single_arm_backup_from_zero_is_the_expected_reward() {
        let inst = instance(vec![canonical()], 1, 0.9);
        let zero = JointQTable::zero(&inst).unwrap();
        let q = bellman_operator(&zero, &inst).unwrap();
        // One action (pull arm 0); reward = P^1_{s,1}.
        assert_eq!(q.q[0][0], 0.5);
        assert_eq!(q.q[1][0], 0.9);
    }

    #[test]
    fn gamma_zero_reaches_the_fixed_point_in_one_step() {
        let inst = instance(vec![canonical(), skewed()], 1, 0.0);
        let zero = JointQTable::zero(&inst).unwrap();
        let once = bellman_operator(&zero, &inst).unwrap();
        let twice = bellman_operator(&once, &inst).unwrap();
        assert_eq!(once.q, twice.q);
    }

    #[test]
    fn fixed_point_is_independent_of_the_start() {
        let inst = instance(vec![canonical(), skewed()], 1, 0.9);
        let run_from = |fill: f64| {
            let mut q = JointQTable::zero(&inst).unwrap();
            for row in &mut q.q {
                for v in row.iter_mut() {
                    *v = fill;
                }
            }
            for _ in 0..400 {
                q = bellman_operator(&q, &inst).unwrap();
            }
            q
        };
        let a = run_from(0.0);
        let b = run_from(7.0);
        assert!(a.sup_distance(&b) < 1e-8);
    }

    #[test]
    fn value_range_bounds_hold_at_the_fixed_point() {
        let inst = instance(vec![canonical(), skewed(), canonical()], 1, 0.9);
        let (q, _) = iterate_to_fixed_point(&inst, OperatorKind::Hard, 1e-10).unwrap();
        let cap = 3.0 / (1.0 - 0.9);
        for row in &q.q {
            for &v in row {
                assert!((0.0..=cap + 1e-9).contains(&v), "entry {v} outside [0, {cap}]");
            }
        }
    }

    #[test]
    fn soft_limits_match_max_and_mean() {
        let inst = instance(vec![canonical(), skewed()], 1, 0.9);
        let mut q = JointQTable::zero(&inst).unwrap();
        // Arbitrary distinct entries.
        for (s, row) in q.q.iter_mut().enumerate() {
            for (a, v) in row.iter_mut().enumerate() {
                *v = 0.31 * s as f64 + 0.77 * a as f64 + 0.1;
            }
        }
        let hard = bellman_operator(&q, &inst).unwrap();
        let sharp = soft_operator(&q, &inst, 1e6).unwrap();
        assert!(hard.sup_distance(&sharp) < 1e-6);

        // c -> 0: the soft values become plain averages.
        let flat = soft_operator(&q, &inst, 1e-12).unwrap();
        let uniform: Vec<f64> =
            q.q.iter().map(|row| row.iter().sum::<f64>() / row.len() as f64).collect();
        let expect = backup(&inst, &q.actions, &uniform);
        for (a_row, b_row) in flat.q.iter().zip(&expect) {
            for (a, b) in a_row.iter().zip(b_row) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn soft_backup_never_exceeds_the_hard_backup() {
        let inst = instance(vec![canonical(), skewed()], 1, 0.9);
        let mut q = JointQTable::zero(&inst).unwrap();
        for (s, row) in q.q.iter_mut().enumerate() {
            for (a, v) in row.iter_mut().enumerate() {
                *v = ((s * 31 + a * 17) % 13) as f64 * 0.23;
            }
        }
        for c in [0.5, 1.0, 2.0, 5.0] {
            let hard = bellman_operator(&q, &inst).unwrap();
            let soft = soft_operator(&q, &inst, c).unwrap();
            for (h_row, s_row) in hard.q.iter().zip(&soft.q) {
                for (h, s) in h_row.iter().zip(s_row) {
                    assert!(s <= &(h + 1e-12), "soft {s} above hard {h} at c={c}");
                }
            }
        }
    }

    #[test]
    fn converged_soft_table_sits_inside_the_sandwich() {
        let inst = instance(vec![canonical(), skewed()], 1, 0.9);
        let c = 2.0;
        let report = empirical_soft_gap(&inst, c, 1e-10).unwrap();
        let bound = report.bound.unwrap();
        assert!((bound - 1.0 / (4.0 * 0.1)).abs() < 1e-12);
        assert!(report.min_gap >= -1e-8, "soft exceeded optimal: {}", report.min_gap);
        assert!(report.max_gap <= bound + 1e-8, "gap {} above bound {bound}", report.max_gap);
    }

    #[test]
    fn gap_statistics_two_point_example() {
        // Q(s,.) = (1, 0) at c=1: softmax weights (e/(1+e), 1/(1+e)), so the
        // gap is 1 - e/(1+e) with bounds 1/(2e) and 1/3.
        let inst = instance(vec![canonical(), skewed()], 1, 0.9);
        let mut q = JointQTable::zero(&inst).unwrap();
        q.q[0] = vec![1.0, 0.0];
        let stats = gap_statistics(&q, 1.0);
        let e = std::f64::consts::E;
        let s0 = &stats[0];
        assert!((s0.delta - 1.0).abs() < 1e-15);
        assert!((s0.gap - (1.0 - e / (1.0 + e))).abs() < 1e-12);
        assert!((s0.lower_bound - 1.0 / (2.0 * e)).abs() < 1e-12);
        assert!((s0.upper_bound - 1.0 / 3.0).abs() < 1e-15);
        assert!(s0.lower_bound <= s0.gap && s0.gap <= s0.upper_bound);
        // A flat row: zero gap, zero lower bound.
        let s1 = &stats[1];
        assert_eq!(s1.delta, 0.0);
        assert_eq!(s1.gap, 0.0);
        assert_eq!(s1.lower_bound, 0.0);
    }

    #[test]
    fn wide_rows_can_exceed_the_narrow_spread_bound() {
        // The (n_actions - 1)/(2 + c) upper bound is only meaningful for rows
        // whose spread is at most 1 (value-iteration increments at these
        // scales stay that narrow). A row with spread 2.56 at c = 0.5 pushes
        // the gap to ~0.557, past the bound's 0.4, and gap_statistics must
        // report that honestly rather than clip it.
        let inst = instance(vec![canonical(), skewed()], 1, 0.9);
        let mut q = JointQTable::zero(&inst).unwrap();
        q.q[0] = vec![0.0, 2.56];
        let stat = &gap_statistics(&q, 0.5)[0];
        let w = (0.5f64 * 2.56).exp();
        let expected_gap = 2.56 - 2.56 * w / (1.0 + w);
        assert!((stat.gap - expected_gap).abs() < 1e-12);
        assert!(stat.gap > stat.upper_bound + 0.15, "gap {} bound {}", stat.gap, stat.upper_bound);
        // The lower bound still holds; only the upper one needs narrow rows.
        assert!(stat.gap >= stat.lower_bound);
    }

    #[test]
    fn one_round_optimum_is_myopic() {
        let arms = vec![
            canonical(),
            skewed(),
            TransitionModel::from_to_one([[0.15, 0.55], [0.5, 0.85]]),
            TransitionModel::from_to_one([[0.3, 0.5], [0.45, 0.75]]),
        ];
        let inst = RmabInstance { arms, k: 2, horizon: 1, gamma: 1.0, c: 1.0 };
        let solution = finite_horizon_optimum(&inst).unwrap();
        for mask in 0..16 {
            let state = mask_to_state(mask, 4);
            assert_eq!(
                solution.action(&state, 0),
                myopic_policy(&inst, &state),
                "state {state:?}"
            );
        }
    }

    #[test]
    // Indexes spell out the state coordinates of the longhand enumeration.
    #[allow(clippy::needless_range_loop)]
    fn two_round_values_match_hand_enumeration() {
        let arms = vec![canonical(), skewed()];
        let inst = RmabInstance { arms: arms.clone(), k: 1, horizon: 2, gamma: 0.9, c: 1.0 };
        let solution = finite_horizon_optimum(&inst).unwrap();

        // Longhand: V1(s) = max_a R(s,a); V0(s) = max_a [R(s,a) +
        // 0.9 * sum over the four successor states of Pr * V1].
        let to1 = |i: usize, a: usize, s: usize| arms[i].p[a][s][1];
        let reward = |s0: usize, s1: usize, pulled: usize| {
            to1(0, usize::from(pulled == 0), s0) + to1(1, usize::from(pulled == 1), s1)
        };
        let mut v1 = [[0.0f64; 2]; 2];
        for s0 in 0..2 {
            for s1 in 0..2 {
                v1[s0][s1] = reward(s0, s1, 0).max(reward(s0, s1, 1));
            }
        }
        for s0 in 0..2 {
            for s1 in 0..2 {
                let mut best = f64::NEG_INFINITY;
                for pulled in 0..2 {
                    let p0 = to1(0, usize::from(pulled == 0), s0);
                    let p1 = to1(1, usize::from(pulled == 1), s1);
                    let mut cont = 0.0;
                    for n0 in 0..2 {
                        for n1 in 0..2 {
                            let pr = (if n0 == 1 { p0 } else { 1.0 - p0 })
                                * (if n1 == 1 { p1 } else { 1.0 - p1 });
                            cont += pr * v1[n0][n1];
                        }
                    }
                    best = best.max(reward(s0, s1, pulled) + 0.9 * cont);
                }
                let mask = state_to_mask(&[s0 as u8, s1 as u8]);
                assert!(
                    (solution.v[0][mask] - best).abs() < 1e-12,
                    "V0({s0},{s1}) = {} vs {best}",
                    solution.v[0][mask]
                );
            }
        }
    }

    #[test]
    fn per_arm_lambda_examples() {
        // Action-independent arm: zero advantage.
        let flat = TransitionModel::from_to_one([[0.4, 0.7], [0.4, 0.7]]);
        let lambda = per_arm_converged_lambda(&flat, 0.9, 1e6, 1e-12).unwrap();
        assert!(lambda[0].abs() < 1e-9 && lambda[1].abs() < 1e-9);
        // Structural constraints: pulling always helps.
        let lambda = per_arm_converged_lambda(&canonical(), 0.9, 1e6, 1e-12).unwrap();
        assert!(lambda[0] > 0.0 && lambda[1] > 0.0);
    }

    #[test]
    fn refusals() {
        let big = instance(vec![canonical(); 13], 1, 0.9);
        assert_eq!(
            JointQTable::zero(&big).unwrap_err(),
            OracleError::TooManyArms { n: 13, cap: 12 }
        );
        let two = instance(vec![canonical(), skewed(), canonical()], 2, 0.9);
        let q = JointQTable::zero(&two).unwrap();
        assert_eq!(
            soft_operator(&q, &two, 1.0).unwrap_err(),
            OracleError::UnitBudgetRequired { k: 2 }
        );
        let undiscounted = instance(vec![canonical(), skewed()], 1, 1.0);
        assert!(matches!(
            iterate_to_fixed_point(&undiscounted, OperatorKind::Hard, 1e-10),
            Err(OracleError::DiscountRequired { .. })
        ));
    }

    #[test]
    fn k2_soft_gap_is_reported_without_a_bound()
    {
        let inst = RmabInstance {
            arms: vec![canonical(), skewed(), canonical(), skewed()],
            k: 2,
            horizon: 4,
            gamma: 0.9,
            c: 1.0,
        };
        let report = empirical_soft_gap(&inst, 2.0, 1e-9).unwrap();
        assert!(report.bound.is_none());
        assert!(report.max_gap.is_finite() && report.min_gap.is_finite());
    }
}
