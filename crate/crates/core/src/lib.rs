//! Finite-horizon restless bandit simulation.
//!
//! The model: n independent two-state arms, each with its own action-dependent
//! transition matrix, a budget of k pulls per round, and a horizon of T
//! rounds. Rewards count the arms sitting in the good state. The crate
//! provides
//!
//! * the SoftFair policy (`softfair`): per-arm advantage logits from a learned
//!   finite-horizon value table, softmax selection, and inclusion-probability
//!   value updates, trading a bounded amount of reward for a guaranteed floor
//!   on every arm's chance of being pulled;
//! * a finite-horizon Whittle index policy (`whittle`) used as the strong
//!   per-arm baseline, with exact per-epoch indices found by bisection;
//! * simple baselines (`baselines`): Random, Myopic, and FairMyopic;
//! * the exact joint-MDP solution on small instances (`oracle`), with hard
//!   and softmax Bellman operators and the machinery to measure the softness
//!   gap between them;
//! * dataset generators (`datasets`): structurally constrained synthetic
//!   cohorts and a two-cluster adherence model;
//! * an experiment driver (`sim`) with common random numbers across policies
//!   and the two headline metrics, intervention benefit and action entropy.
//!
//! Everything is deterministic given the experiment seed: every random
//! decision draws from a named substream of the master seed (`rng`), so runs
//! reproduce bit for bit regardless of thread count.

pub mod baselines;
pub mod datasets;
pub mod model;
pub mod oracle;
pub mod rng;
pub mod sim;
pub mod softfair;
pub mod whittle;

pub use model::{
    instance_from_json, instance_to_json, load_instance, save_instance, validate_instance,
    ActionVector, EpisodeTrace, ModelError, RmabInstance, StateVector, TransitionModel,
    ValueTable,
};
pub use sim::{
    run_experiment, ExperimentConfig, MetricsReport, PolicySpec, SimError,
};
pub use softfair::{
    run_softfair_episode, InclusionMode, SoftFairConfig, SoftFairState,
};

/// Format a float with six significant digits in scientific notation, the
/// precision used by every CSV export (JSON keeps full precision).
pub fn fmt_sig(x: f64) -> String {
    // Avoid the confusing "-0.00000e0".
    let v = if x == 0.0 { 0.0 } else { x };
    format!("{v:.5e}")
}

#[cfg(test)]
mod tests {
    use super::fmt_sig;

    #[test]
    fn fmt_sig_keeps_six_significant_digits() {
        assert_eq!(fmt_sig(0.6), "6.00000e-1");
        assert_eq!(fmt_sig(123456.789), "1.23457e5");
        assert_eq!(fmt_sig(-0.0314159), "-3.14159e-2");
        assert_eq!(fmt_sig(0.0), "0.00000e0");
        assert_eq!(fmt_sig(-0.0), "0.00000e0");
        assert_eq!(fmt_sig(1.0), "1.00000e0");
    }
}
