//! Random mutation selection with the same action space, distance limit and
//! mutation-application budget as the tree search.

use rand::Rng;

use crate::error::Result;
use crate::mcts::{BatchEvaluator, RoundSummary, SearchBudget, SearchOutcome, TraceRecord};
use crate::mutation::{CompleteAction, MutatorConfig};
use crate::tensor::Tensor;

/// Draws random sequences of 1 to `max_depth_levels / 2` complete actions
/// until `budget.max_evaluations()` actions have been applied in total, the
/// most the tree search applies per batch (one per iteration, as it caches
/// intermediate batches). Keeps the best batch.
pub fn random_search<E, R>(
    seed: &[Tensor],
    evaluator: &mut E,
    mutator: &MutatorConfig,
    budget: &SearchBudget,
    rng: &mut R,
) -> Result<SearchOutcome>
where
    E: BatchEvaluator + ?Sized,
    R: Rng + ?Sized,
{
    budget.validate()?;
    let max_len = (budget.max_depth_levels / 2).max(1);
    let applications = budget.max_evaluations();
    let mut best_increase = 0.0;
    let mut best_batch = seed.to_vec();
    let mut best_actions = Vec::new();
    let mut evaluations = 0;
    let mut trace = Vec::new();
    let mut used = 0;
    let mut iteration = 0;
    while used < applications {
        iteration += 1;
        let len = rng.gen_range(1..=max_len).min(applications - used);
        used += len;
        let actions: Vec<CompleteAction> = (0..len)
            .map(|_| CompleteAction {
                region: rng.gen_range(0..mutator.region_count()),
                mutation: rng.gen_range(0..mutator.mutation_count()),
            })
            .collect();
        let candidate = mutator.apply_sequence(seed, &actions)?;
        let reward = if mutator.constraint.batch_within(&candidate, seed)? {
            evaluations += 1;
            let inc = evaluator.coverage_increase(&candidate)?;
            if inc > best_increase {
                best_increase = inc;
                best_batch = candidate;
                best_actions = actions.clone();
            }
            Some(inc)
        } else {
            None
        };
        trace.push(TraceRecord {
            iteration,
            root_depth: 0,
            path: actions.iter().flat_map(|a| [a.region, a.mutation]).collect(),
            actions,
            reward,
            best_so_far: best_increase,
        });
    }
    Ok(SearchOutcome {
        best_batch,
        best_increase,
        best_actions,
        evaluations,
        rounds: vec![RoundSummary {
            root_depth: 0,
            iterations: iteration,
            evaluations,
            root_children: 0,
            root_actions: mutator.region_count(),
        }],
        trace,
        tree: None,
    })
}
