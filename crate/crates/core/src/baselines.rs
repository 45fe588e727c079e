//! Baseline policies: Random, Myopic, and FairMyopic.
//!
//! All three look only at the current state. Myopic ranks arms by the
//! one-step activation gain `delta_i = P^1_{s_i,1} - P^0_{s_i,1}` and pulls
//! the top k; FairMyopic softens that ranking through the same
//! softmax-and-sample pipeline SoftFair uses, but over the myopic gaps instead
//! of learned advantages; Random ignores the state entirely.

use crate::model::{ActionVector, PolicyDecision, RmabInstance};
use crate::softfair::{
    inclusion_probs, sample_without_replacement, select_probs, top_k_by_logit, InclusionMode,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Per-arm one-step activation gains in the current state.
pub type MyopicGap = Vec<f64>;

/// `delta_i = P^1_{s_i,1} - P^0_{s_i,1}` for every arm. Strictly positive when
/// the structural inequalities hold.
pub fn myopic_gaps(instance: &RmabInstance, state: &[u8]) -> MyopicGap {
    instance
        .arms
        .iter()
        .zip(state)
        .map(|(arm, &s)| arm.myopic_gap(s as usize))
        .collect()
}

/// A uniformly random k-subset, drawn through the shared sampler so the
/// randomness consumption per round matches the softmax policies.
pub fn random_policy<R: Rng>(n: usize, k: usize, rng: &mut R) -> ActionVector {
    sample_without_replacement(&vec![1.0 / n as f64; n], k, rng)
}

/// Deterministic top-k by myopic gap, ties toward the lower arm index.
pub fn myopic_policy(instance: &RmabInstance, state: &[u8]) -> ActionVector {
    top_k_by_logit(&myopic_gaps(instance, state), instance.k)
}

/// Softmax the myopic gaps at multiplier `c` and sample k arms without
/// replacement. The returned decision carries the exact inclusion
/// probabilities when the instance is small enough to enumerate and a Monte
/// Carlo estimate otherwise (the policy itself never consumes them; they are
/// reported for fairness checks).
pub fn fair_myopic_policy(
    instance: &RmabInstance,
    state: &[u8],
    c: f64,
    rng: &mut ChaCha8Rng,
) -> PolicyDecision {
    let select_prob = select_probs(&myopic_gaps(instance, state), c);
    let chosen = sample_without_replacement(&select_prob, instance.k, rng);
    let inclusion_prob = inclusion_probs(&select_prob, instance.k, InclusionMode::Auto, rng)
        .expect("auto mode always has a fallback");
    PolicyDecision { select_prob, inclusion_prob, chosen }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TransitionModel;
    use crate::rng::{substream, StreamKind};
    use crate::softfair::{
        run_softfair_episode_observed, EpisodeStreams, SoftFairConfig, SoftFairState,
    };

    /// Arms whose myopic gap is the given value in both states.
    fn arm_with_gap(gap: f64) -> TransitionModel {
        TransitionModel::from_to_one([[0.2, 0.4], [0.2 + gap, 0.4 + gap]])
    }

    fn instance(gaps: &[f64], k: usize) -> RmabInstance {
        RmabInstance {
            arms: gaps.iter().map(|&g| arm_with_gap(g)).collect(),
            k,
            horizon: 5,
            gamma: 1.0,
            c: 1.0,
        }
    }

    fn test_rng(index: u64) -> ChaCha8Rng {
        substream(0xBA5E, StreamKind::Verify, index)
    }

    #[test]
    fn gaps_read_the_state_and_stay_positive_under_the_constraints() {
        let inst = instance(&[0.1, 0.4], 1);
        for (g, want) in myopic_gaps(&inst, &[0, 1]).iter().zip(&[0.1, 0.4]) {
            assert!((g - want).abs() < 1e-15);
        }
        let strict = TransitionModel::from_to_one([[0.2, 0.6], [0.5, 0.9]]);
        for s in 0..2 {
            assert!(strict.myopic_gap(s) > 0.0);
        }
    }

    #[test]
    fn random_policy_is_uniform_over_arms() {
        // n=3, k=1: chi-square over 1e5 draws, df=2 critical value at
        // alpha=0.001 is 13.8.
        let mut rng = test_rng(0);
        let draws = 100_000;
        let mut counts = [0u64; 3];
        for _ in 0..draws {
            counts[random_policy(3, 1, &mut rng).active_arms()[0]] += 1;
        }
        let expected = draws as f64 / 3.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        assert!(chi2 < 13.8, "chi-square {chi2}");
    }

    #[test]
    fn random_policy_inclusion_is_k_over_n() {
        let mut rng = test_rng(1);
        let draws = 20_000;
        let mut counts = [0u64; 5];
        for _ in 0..draws {
            for arm in random_policy(5, 4, &mut rng).active_arms() {
                counts[arm] += 1;
            }
        }
        // 4 standard errors of a 0.8 frequency over 20k draws is ~0.011.
        for c in counts {
            let freq = c as f64 / draws as f64;
            assert!((freq - 0.8).abs() < 0.012, "inclusion frequency {freq}");
        }
    }

    #[test]
    fn random_policy_is_deterministic_under_a_fixed_seed() {
        let seq = |index| {
            let mut rng = test_rng(index);
            (0..10).map(|_| random_policy(6, 2, &mut rng).active_arms()).collect::<Vec<_>>()
        };
        assert_eq!(seq(2), seq(2));
        assert_ne!(seq(2), seq(3));
    }

    #[test]
    fn myopic_takes_the_largest_gaps_with_index_ties() {
        let inst = instance(&[0.1, 0.4, 0.2], 1);
        assert_eq!(myopic_policy(&inst, &[0, 0, 0]).active_arms(), vec![1]);
        let tied = instance(&[0.3, 0.3, 0.3, 0.3], 2);
        assert_eq!(myopic_policy(&tied, &[1, 1, 1, 1]).active_arms(), vec![0, 1]);
    }

    #[test]
    fn myopic_ranking_ignores_a_common_shift() {
        let gaps = [0.1, 0.4, 0.2, 0.15];
        let shifted: Vec<f64> = gaps.iter().map(|g| g + 0.9).collect();
        assert_eq!(top_k_by_logit(&gaps, 2), top_k_by_logit(&shifted, 2));
    }

    #[test]
    fn fair_myopic_softmax_examples() {
        // Equal gaps: uniform selection weights.
        let inst = instance(&[0.2, 0.2, 0.2], 1);
        let d = fair_myopic_policy(&inst, &[0, 0, 0], 2.0, &mut test_rng(4));
        for p in &d.select_prob {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
        // Gaps (ln 2, 0) at c=1, k=1: weights (2/3, 1/3), and with k=1 the
        // inclusion probabilities are the weights.
        let inst = instance(&[2.0f64.ln(), 0.0], 1);
        let d = fair_myopic_policy(&inst, &[0, 0], 1.0, &mut test_rng(5));
        assert!((d.select_prob[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((d.select_prob[1] - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(d.select_prob, d.inclusion_prob);
        assert_eq!(d.chosen.k(), 1);
    }

    #[test]
    fn fair_myopic_sharpens_to_myopic_as_c_grows() {
        // c=300 keeps the weight ratios representable (gap differences ~0.2
        // give ratios around e^60), so every draw lands on the myopic set.
        let inst = instance(&[0.5, 0.1, 0.3], 2);
        let state = [0u8, 0, 0];
        let myopic = myopic_policy(&inst, &state);
        let mut rng = test_rng(6);
        for _ in 0..100 {
            let d = fair_myopic_policy(&inst, &state, 300.0, &mut rng);
            assert_eq!(d.chosen, myopic);
        }
    }

    #[test]
    fn fair_myopic_weights_are_monotone_in_the_gap() {
        let inst = instance(&[0.05, 0.4, 0.15, 0.4, 0.3], 2);
        let state = [0u8; 5];
        let gaps = myopic_gaps(&inst, &state);
        let d = fair_myopic_policy(&inst, &state, 1.7, &mut test_rng(7));
        for i in 0..5 {
            for j in 0..5 {
                if gaps[i] >= gaps[j] {
                    assert!(d.select_prob[i] >= d.select_prob[j] - 1e-15);
                    assert!(d.inclusion_prob[i] >= d.inclusion_prob[j] - 1e-9);
                }
            }
        }
    }

    #[test]
    fn first_softfair_episode_equals_fair_myopic_under_shared_streams() {
        // In episode one every lookup row is still zero, so SoftFair's logits
        // are the myopic gaps at every round; with the same action stream the
        // two policies must sample identical sets round by round.
        let inst = RmabInstance {
            arms: vec![
                arm_with_gap(0.1),
                arm_with_gap(0.35),
                arm_with_gap(0.2),
                arm_with_gap(0.05),
                arm_with_gap(0.25),
            ],
            k: 2,
            horizon: 12,
            gamma: 1.0,
            c: 2.0,
        };
        let initial = vec![0u8, 1, 0, 1, 0];
        let master = 4242;

        let mut softfair_actions = Vec::new();
        let mut st = SoftFairState::new(&inst, SoftFairConfig::new(2.0));
        let mut streams = EpisodeStreams::for_sim(master, 0);
        let trace = run_softfair_episode_observed(&mut st, &inst, &initial, &mut streams, |r| {
            softfair_actions.push(r.chosen.clone());
        })
        .unwrap();

        let mut fm_streams = EpisodeStreams::for_sim(master, 0);
        let mut s = initial.clone();
        for (t, expected) in softfair_actions.iter().enumerate() {
            let select = select_probs(&myopic_gaps(&inst, &s), 2.0);
            let chosen = sample_without_replacement(&select, inst.k, &mut fm_streams.actions);
            assert_eq!(&chosen, expected, "round {t} diverged");
            let (next, _) =
                crate::model::transition_all(&inst, &s, &chosen, &mut fm_streams.transitions);
            s = next;
        }
        assert_eq!(&s, trace.states.last().unwrap());
    }
}
