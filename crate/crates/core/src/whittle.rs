//! Finite-horizon Whittle indices for two-state arms.
//!
//! The index of an arm in state `s` at round `t` is the passive subsidy `m`
//! that makes the planner indifferent between acting and resting. The
//! single-arm subsidy MDP pays the usual next-state reward plus `m` whenever
//! the arm is left passive:
//!
//! ```text
//! Q_{m,t}(s, 0) = P^0_{s,1} + m + gamma * <P^0_s, V_{m,t+1}>
//! Q_{m,t}(s, 1) = P^1_{s,1}     + gamma * <P^1_s, V_{m,t+1}>
//! V_{m,t}(s)    = max_a Q_{m,t}(s, a),   V beyond the last round = 0
//! ```
//!
//! with decision epochs `t = 0..=T`. The advantage `Q(s,1) - Q(s,0)` is
//! decreasing in `m`, so the index is found by bisection. At the last epoch
//! the continuation vanishes and the index reduces to the myopic gap
//! `P^1_{s,1} - P^0_{s,1}`.

use crate::model::{ActionVector, RmabInstance, TransitionModel};
use rayon::prelude::*;
use thiserror::Error;

/// Default bisection tolerance on the advantage `Q(s,1) - Q(s,0)`.
pub const INDEX_TOL: f64 = 1e-9;

const MAX_BISECT_ITERS: usize = 200;

/// Errors from the index computation.
#[derive(Debug, Error, PartialEq)]
pub enum WhittleError {
    #[error(
        "bisection bracket does not straddle the root at t={t}, s={s} \
         (advantage {f_lo} at lo, {f_hi} at hi)"
    )]
    BracketFailure { t: usize, s: usize, f_lo: f64, f_hi: f64 },
    #[error("bisection did not reach tolerance {tol} in {iters} iterations at t={t}, s={s}")]
    NoConvergence { t: usize, s: usize, tol: f64, iters: usize },
}

/// Value and action-value tables of the subsidy MDP at a fixed `m`, with rows
/// `t = 0..=horizon` (`vq[t][s][a]`, `v[t][s]`).
#[derive(Clone, Debug)]
pub struct SubsidyValueTable {
    pub m: f64,
    pub horizon: usize,
    pub vq: Vec<[[f64; 2]; 2]>,
    pub v: Vec<[f64; 2]>,
}

/// Solve the subsidy MDP for one arm by backward induction.
pub fn subsidy_backward_induction(
    model: &TransitionModel,
    m: f64,
    horizon: usize,
    gamma: f64,
) -> SubsidyValueTable {
    let rows = horizon + 1;
    let mut vq = vec![[[0.0; 2]; 2]; rows];
    let mut v = vec![[0.0; 2]; rows];
    let mut cont = [0.0; 2];
    for t in (0..rows).rev() {
        for s in 0..2 {
            let q = epoch_q(model, m, gamma, s, cont);
            vq[t][s] = q;
            v[t][s] = q[0].max(q[1]);
        }
        cont = v[t];
    }
    SubsidyValueTable { m, horizon, vq, v }
}

#[inline]
fn epoch_q(model: &TransitionModel, m: f64, gamma: f64, s: usize, cont: [f64; 2]) -> [f64; 2] {
    let q0 = model.p[0][s][1]
        + m
        + gamma * (model.p[0][s][0] * cont[0] + model.p[0][s][1] * cont[1]);
    let q1 =
        model.p[1][s][1] + gamma * (model.p[1][s][0] * cont[0] + model.p[1][s][1] * cont[1]);
    [q0, q1]
}

/// Advantage `Q_{m,t}(s,1) - Q_{m,t}(s,0)`, computed by running the backward
/// induction only down to epoch `t`.
fn advantage_at(
    model: &TransitionModel,
    m: f64,
    t: usize,
    s: usize,
    horizon: usize,
    gamma: f64,
) -> f64 {
    let mut cont = [0.0; 2];
    for _ in t + 1..=horizon {
        let mut next = [0.0; 2];
        for (state, slot) in next.iter_mut().enumerate() {
            let q = epoch_q(model, m, gamma, state, cont);
            *slot = q[0].max(q[1]);
        }
        cont = next;
    }
    let q = epoch_q(model, m, gamma, s, cont);
    q[1] - q[0]
}

/// Subsidy bracket half-width: the advantage cannot exceed the total reward
/// range of the remaining epochs, so the root lies within it.
fn bracket(horizon: usize, gamma: f64) -> f64 {
    if gamma < 1.0 {
        1.0 / (1.0 - gamma)
    } else {
        (horizon + 1) as f64
    }
}

/// Whittle index of `model` in state `s` at epoch `t` of a `horizon`-round
/// problem: the root in `m` of the advantage, located by bisection until the
/// advantage magnitude drops to `tol`.
pub fn whittle_index(
    model: &TransitionModel,
    t: usize,
    s: usize,
    horizon: usize,
    gamma: f64,
    tol: f64,
) -> Result<f64, WhittleError> {
    let half = bracket(horizon, gamma);
    let (mut lo, mut hi) = (-half, half);
    let f_lo = advantage_at(model, lo, t, s, horizon, gamma);
    let f_hi = advantage_at(model, hi, t, s, horizon, gamma);
    if f_lo < 0.0 || f_hi > 0.0 {
        return Err(WhittleError::BracketFailure { t, s, f_lo, f_hi });
    }
    for _ in 0..MAX_BISECT_ITERS {
        let mid = 0.5 * (lo + hi);
        let f = advantage_at(model, mid, t, s, horizon, gamma);
        if f.abs() <= tol {
            return Ok(mid);
        }
        if f > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(WhittleError::NoConvergence { t, s, tol, iters: MAX_BISECT_ITERS })
}

/// Whittle indices of one arm for every `(t, s)`, rows `t = 0..=horizon`.
#[derive(Clone, Debug)]
pub struct IndexTable {
    pub w: Vec<[f64; 2]>,
}

/// Compute the full index table of one arm.
pub fn build_index_table(
    model: &TransitionModel,
    horizon: usize,
    gamma: f64,
    tol: f64,
) -> Result<IndexTable, WhittleError> {
    let mut w = vec![[0.0; 2]; horizon + 1];
    for (t, row) in w.iter_mut().enumerate() {
        for (s, slot) in row.iter_mut().enumerate() {
            *slot = whittle_index(model, t, s, horizon, gamma, tol)?;
        }
    }
    Ok(IndexTable { w })
}

/// Index tables for every arm of an instance, computed in parallel. Results
/// are collected in arm order, so the output does not depend on scheduling.
pub fn index_tables(instance: &RmabInstance, tol: f64) -> Result<Vec<IndexTable>, WhittleError> {
    instance
        .arms
        .par_iter()
        .map(|arm| build_index_table(arm, instance.horizon, instance.gamma, tol))
        .collect()
}

/// The index policy: activate the `k` arms whose current index is largest,
/// breaking ties toward the lower arm number.
pub fn oracle_policy(
    instance: &RmabInstance,
    tables: &[IndexTable],
    state: &[u8],
    t: usize,
) -> ActionVector {
    let mut order: Vec<usize> = (0..instance.n()).collect();
    order.sort_by(|&a, &b| {
        let wa = tables[a].w[t][state[a] as usize];
        let wb = tables[b].w[t][state[b] as usize];
        wb.total_cmp(&wa).then(a.cmp(&b))
    });
    order.truncate(instance.k);
    ActionVector::from_set(instance.n(), &order).expect("top-k arm indices are distinct")
}

/// CSV export of per-arm index tables, columns `arm,t,state,index`.
pub fn index_table_csv(tables: &[IndexTable]) -> String {
    let mut out = String::from("arm,t,state,index\n");
    for (arm, table) in tables.iter().enumerate() {
        for (t, row) in table.w.iter().enumerate() {
            for (s, &w) in row.iter().enumerate() {
                out.push_str(&format!("{},{},{},{}\n", arm, t, s, crate::fmt_sig(w)));
            }
        }
    }
    out
}
