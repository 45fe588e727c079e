//! Instance generators.
//!
//! The synthetic generator rejection-samples each arm's matrix from uniform
//! entries until the four structural inequalities and strict positivity hold
//! (roughly 1 in 12 draws for full-range entries). The CPAP-style generator
//! builds two adherence clusters with fixed passive dynamics, gives every arm
//! its own uniformly drawn intervention effect, and perturbs all entries with
//! small noise so no two arms are identical.

use crate::model::{RmabInstance, TransitionModel};
use crate::rng::{substream, StreamKind};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Rejection draws allowed per arm before giving up.
pub const REJECTION_CAP: usize = 100_000;

#[derive(Debug, Error, PartialEq)]
pub enum DatasetError {
    #[error("arm {arm}: no matrix satisfied the structural constraints in {cap} draws; \
             the configured ranges are likely infeasible")]
    RejectionCapExceeded { arm: usize, cap: usize },
}

fn default_k(n: usize) -> usize {
    (n / 10).max(1)
}

/// Synthetic generator settings. `ranges[a][s]` bounds the uniform draw for
/// the to-state-1 entry `P^a_{s,1}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub n: usize,
    pub seed: u64,
    pub ranges: [[(f64, f64); 2]; 2],
    pub k: usize,
    pub horizon: usize,
    pub gamma: f64,
    pub c: f64,
}

impl SyntheticSpec {
    /// Full-range entries, budget 10% of n (at least 1), horizon 50,
    /// undiscounted, c = 1.
    pub fn new(n: usize, seed: u64) -> Self {
        SyntheticSpec {
            n,
            seed,
            ranges: [[(0.0, 1.0); 2]; 2],
            k: default_k(n),
            horizon: 50,
            gamma: 1.0,
            c: 1.0,
        }
    }
}

/// How many raw draws the generator spent (one draw = one candidate matrix).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GeneratorStats {
    pub candidates: usize,
    pub accepted: usize,
}

impl GeneratorStats {
    pub fn acceptance_rate(&self) -> f64 {
        self.accepted as f64 / self.candidates as f64
    }
}

fn satisfies_structural(m: &TransitionModel) -> bool {
    let inside = (0..2).all(|a| (0..2).all(|s| m.p[a][s][1] > 0.0 && m.p[a][s][1] < 1.0));
    inside
        && m.p[0][0][1] < m.p[0][1][1]
        && m.p[1][0][1] < m.p[1][1][1]
        && m.p[0][0][1] < m.p[1][0][1]
        && m.p[0][1][1] < m.p[1][1][1]
}

fn uniform_in(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    lo + rng.gen::<f64>() * (hi - lo)
}

/// Generate a strict-constraint instance, reporting the rejection statistics.
pub fn generate_synthetic_with_stats(
    spec: &SyntheticSpec,
) -> Result<(RmabInstance, GeneratorStats), DatasetError> {
    let mut rng = substream(spec.seed, StreamKind::Generator, 0);
    let mut arms = Vec::with_capacity(spec.n);
    let mut candidates = 0usize;
    for arm in 0..spec.n {
        let mut accepted = None;
        for _ in 0..REJECTION_CAP {
            candidates += 1;
            let draw = TransitionModel::from_to_one([
                [uniform_in(&mut rng, spec.ranges[0][0]), uniform_in(&mut rng, spec.ranges[0][1])],
                [uniform_in(&mut rng, spec.ranges[1][0]), uniform_in(&mut rng, spec.ranges[1][1])],
            ]);
            if satisfies_structural(&draw) {
                accepted = Some(draw);
                break;
            }
        }
        match accepted {
            Some(m) => arms.push(m),
            None => return Err(DatasetError::RejectionCapExceeded { arm, cap: REJECTION_CAP }),
        }
    }
    let instance = RmabInstance {
        arms,
        k: spec.k,
        horizon: spec.horizon,
        gamma: spec.gamma,
        c: spec.c,
    };
    Ok((instance, GeneratorStats { candidates, accepted: spec.n }))
}

/// Generate a strict-constraint instance (see [`generate_synthetic_with_stats`]).
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<RmabInstance, DatasetError> {
    generate_synthetic_with_stats(spec).map(|(instance, _)| instance)
}

/// CPAP-style adherence cohort settings. A `split` fraction of arms form the
/// adherent cluster (passive to-state-1 rows `adherent_to1`), the rest the
/// non-adherent cluster. Pulling an arm adds its own `effect` draw to both
/// to-state-1 entries; every entry then gets `±noise` uniform jitter and is
/// clipped to `[0.01, 0.99]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CpapSpec {
    pub n: usize,
    pub seed: u64,
    pub split: f64,
    pub adherent_to1: [f64; 2],
    pub nonadherent_to1: [f64; 2],
    pub effect_range: (f64, f64),
    pub noise: f64,
    pub k: usize,
    pub horizon: usize,
    pub gamma: f64,
    pub c: f64,
}

impl CpapSpec {
    pub fn new(n: usize, seed: u64) -> Self {
        CpapSpec {
            n,
            seed,
            split: 0.5,
            adherent_to1: [0.7, 0.9],
            nonadherent_to1: [0.2, 0.4],
            effect_range: (0.05, 0.50),
            noise: 0.02,
            k: default_k(n),
            horizon: 50,
            gamma: 1.0,
            c: 1.0,
        }
    }
}

/// Generate the two-cluster adherence instance. Arms `0..round(split*n)` are
/// the adherent cluster. Deterministic in the spec.
pub fn generate_cpap(spec: &CpapSpec) -> RmabInstance {
    let mut rng = substream(spec.seed, StreamKind::Generator, 1);
    let adherent_count = (spec.split * spec.n as f64).round() as usize;
    let clip = |v: f64| v.clamp(0.01, 0.99);
    let mut arms = Vec::with_capacity(spec.n);
    for arm in 0..spec.n {
        let base = if arm < adherent_count { spec.adherent_to1 } else { spec.nonadherent_to1 };
        let effect = uniform_in(&mut rng, spec.effect_range);
        let mut to_one = [[0.0; 2]; 2];
        for s in 0..2 {
            to_one[0][s] = base[s];
            to_one[1][s] = base[s] + effect;
        }
        for row in &mut to_one {
            for entry in row.iter_mut() {
                let jitter = spec.noise * (2.0 * rng.gen::<f64>() - 1.0);
                *entry = clip(*entry + jitter);
            }
        }
        arms.push(TransitionModel::from_to_one(to_one));
    }
    RmabInstance {
        arms,
        k: spec.k,
        horizon: spec.horizon,
        gamma: spec.gamma,
        c: spec.c,
    }
}
